//! Uniform grids on a truncated interval, composite Simpson integration and
//! direct convolution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform node set `lo, lo + h, ..., hi` with `h = (hi - lo) / (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lo: f64,
    hi: f64,
    n: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    /// Like [`GridSpec::new`] but bumps an even node count to the next odd
    /// one so the Simpson rule applies on every panel.
    pub fn simpson(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, hi, if n.is_multiple_of(2) { n + 1 } else { n })
    }

    /// Grid for the density-approximation examples.
    pub fn examples_default() -> Self {
        Self { lo: -20.0, hi: 20.0, n: 2001 }
    }

    /// Grid for the localization study.
    pub fn localization_default() -> Self {
        Self { lo: -15.0, hi: 10.0, n: 2001 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Same interval at twice the resolution (`2n - 1` nodes, nested).
    pub fn refined(&self) -> Self {
        Self { lo: self.lo, hi: self.hi, n: 2 * self.n - 1 }
    }

    /// Quadrature weights: composite Simpson for odd `n`, trapezoid otherwise.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let n = self.n;
        let mut w = vec![0.0; n];
        if n % 2 == 1 && n >= 3 {
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = if i == 0 || i == n - 1 {
                    h / 3.0
                } else if i % 2 == 1 {
                    4.0 * h / 3.0
                } else {
                    2.0 * h / 3.0
                };
            }
        } else {
            w.iter_mut().for_each(|wi| *wi = h);
            w[0] = h / 2.0;
            w[n - 1] = h / 2.0;
        }
        w
    }

    /// Indices of the nodes inside `[a, b]`.
    pub fn index_range(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let h = self.step();
        let start = ((a - self.lo) / h).ceil().max(0.0) as usize;
        let end = (((b - self.lo) / h).floor() as isize + 1).clamp(0, self.n as isize) as usize;
        start.min(end)..end
    }
}

/// Values of a function tabulated on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn tabulate(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.grid.nodes().zip(&self.values).map(|(x, &v)| f(x, v)).collect();
        Self { grid: self.grid, values }
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        let (lo, hi) = (self.grid.lo(), self.grid.hi());
        if !(lo..=hi).contains(&x) {
            return 0.0;
        }
        let t = (x - lo) / self.grid.step();
        let i = (t.floor() as usize).min(self.grid.len() - 2);
        let frac = t - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Scales values so the quadrature integral equals one. Returns the
    /// original integral.
    pub fn normalize(&mut self) -> f64 {
        let z = integrate(self);
        if z > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= z);
        }
        z
    }

    pub fn moment(&self, k: i32) -> f64 {
        weighted_sum(&self.grid, |x, v| x.powi(k) * v, &self.values)
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn l1_distance(&self, other: &GridFunction) -> f64 {
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        weighted_sum(&self.grid, |_, v| v, &diff)
    }

    /// Interior strict local maxima above `floor * max`.
    pub fn local_maxima(&self, floor: f64) -> Vec<f64> {
        let v = &self.values;
        let top = v.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::new();
        let mut i = 1;
        while i + 1 < v.len() {
            if v[i] > v[i - 1] && v[i] > floor * top {
                // walk a plateau
                let mut j = i;
                while j + 1 < v.len() && v[j + 1] == v[i] {
                    j += 1;
                }
                if j + 1 < v.len() && v[j + 1] < v[i] {
                    out.push(self.grid.node((i + j) / 2));
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        out
    }
}

fn weighted_sum(grid: &GridSpec, f: impl Fn(f64, f64) -> f64, values: &[f64]) -> f64 {
    grid.weights().iter().zip(grid.nodes()).zip(values).map(|((w, x), &v)| w * f(x, v)).sum()
}

/// Composite Simpson integral of a tabulated function (trapezoid when the
/// node count is even).
pub fn integrate(f: &GridFunction) -> f64 {
    weighted_sum(&f.grid, |_, v| v, &f.values)
}

/// `out(x) = ∫ a(e) b(x - e) de`, with the inner integral taken by the
/// quadrature rule of `a`'s grid. Direct `O(n_a * n_out)` summation.
pub fn convolve_on_grid(a: &GridFunction, b: impl Fn(f64) -> f64 + Sync, out: GridSpec) -> GridFunction {
    convolve_kernel(a, |x, e| b(x - e), out)
}

/// `out(x) = ∫ a(e) k(x, e) de` over `a`'s grid.
pub fn convolve_kernel(a: &GridFunction, kernel: impl Fn(f64, f64) -> f64 + Sync, out: GridSpec) -> GridFunction {
    let weights = a.grid.weights();
    // Drop nodes that cannot contribute.
    let src: Vec<(f64, f64)> =
        a.grid.nodes().zip(weights.iter().zip(&a.values)).filter(|(_, (_, &v))| v != 0.0).map(|(e, (w, v))| (e, w * v)).collect();
    let values = (0..out.len())
        .into_par_iter()
        .map(|i| {
            let x = out.node(i);
            src.iter().map(|&(e, wv)| wv * kernel(x, e)).sum()
        })
        .collect();
    GridFunction { grid: out, values }
}
