//! Convex dual fit of the rational surrogate `P θ / Q`.
//!
//! The objective is
//! `J(P, Q) = Σ_{k=0}^{2n} σ_k q_k - Σ_{k=1}^{2n} ξ_k p_k + ∫ Pθ log(Pθ/Q) - ∫ Pθ`
//! with `P(0) = 1`. Its gradient is the pair of moment residuals, so a
//! stationary point matches both moment families.
//!
//! Internally `Q` is expanded in polynomials orthonormal with respect to
//! `θ` and `P - 1` in θ-orthonormal polynomials vanishing at `x = 0`; the
//! change of variables is linear, so the objective is unchanged while the
//! Hessian is far better conditioned. All integrals run over the window of
//! grid nodes where `θ` is within `exp(-window_log_ratio)` of its peak.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::moments::require_feasible;
use crate::poly;
use crate::quadrature::GridSpec;
use crate::surrogate::RationalSurrogate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when every moment residual is within `grad_tol * max(1, |target|)`.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease fraction.
    pub armijo_c: f64,
    /// Step shrink factor on rejection, in `(0, 1)`.
    pub backtrack: f64,
    /// Line search gives up below this step length.
    pub min_step: f64,
    /// Quasi-Newton history length; zero gives plain steepest descent.
    pub memory: usize,
    /// Nodes with `θ < max θ · exp(-window_log_ratio)` are dropped.
    pub window_log_ratio: f64,
    /// After a failed joint descent, retry with `P` frozen.
    pub polish: bool,
    /// Solve first on a strided subset of at least this many window nodes,
    /// then refine; zero disables.
    pub coarse_nodes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            min_step: 1e-20,
            memory: 10,
            window_log_ratio: 50.0,
            polish: true,
            coarse_nodes: 400,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config("grad_tol and armijo_c must be positive, armijo_c < 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!("backtrack ratio {} not in (0, 1)", self.backtrack)));
        }
        if self.max_iters == 0 || !(self.window_log_ratio > 0.0) || !(self.min_step > 0.0) {
            return Err(Error::Config("max_iters, window_log_ratio and min_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// Stationary on a face of the positivity constraints with the moment
    /// residuals still open: the targets are not attainable on this window.
    Boundary,
    /// No step satisfied the sufficient-decrease test, or the objective
    /// stopped decreasing measurably.
    Stalled,
    IterationCap,
}

/// Solver output: the surrogate plus its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub surrogate: RationalSurrogate,
    pub iterations: usize,
    pub termination: Termination,
    /// Largest moment residual relative to `max(1, |target|)`.
    pub residual: f64,
    /// `σ_k(ρ̂) - σ_k`, `k = 0..=2n`.
    pub sigma_residual: Vec<f64>,
    /// `ξ_k(ρ̂) - ξ_k`, `k = 1..=2n` (zeros for power-only fits).
    pub xi_residual: Vec<f64>,
    pub objective: f64,
    /// `∫ θ log ρ̂`, left free by the `P(0) = 1` slice.
    pub xi0: f64,
}

impl Fit {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Window of `grid` on which `θ` is numerically nonnegligible.
pub fn theta_window(theta: &Density, grid: GridSpec, log_ratio: f64) -> Result<(f64, f64)> {
    let vals = theta.tabulate(grid)?.into_values();
    let top = vals.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::InvalidDensity("reference density vanishes on the grid".into()));
    }
    let thr = top * (-log_ratio).exp();
    let first = vals.iter().position(|&v| v >= thr).unwrap();
    let last = vals.iter().rposition(|&v| v >= thr).unwrap();
    if last < first + 2 {
        return Err(Error::InvalidGrid("reference density is narrower than the grid spacing".into()));
    }
    Ok((grid.node(first), grid.node(last)))
}

fn support_range(grid: &GridSpec, support: (f64, f64)) -> std::ops::Range<usize> {
    let eps = 1e-9 * grid.step();
    grid.index_range(support.0 - eps, support.1 + eps)
}

/// Numerator values (on the `P(0) = 1` scale) at or below this count as
/// active constraints.
const ACTIVE_TOL: f64 = 1e-8;
/// Same for the denominator. The log barrier keeps `Q` off zero wherever θ
/// carries weight, so this only bites in the far tails.
const ACTIVE_TOL_Q: f64 = 1e-6;
/// Lower bound on the denominator at the window nodes (on the `P(0) = 1`
/// scale). Far above the rounding of tail evaluations, so the surrogate
/// stays positive when re-evaluated from its coefficients.
const Q_FLOOR: f64 = 1e-10;
/// θ-weights below this fraction of the largest count as negligible.
const NEGLIGIBLE_WEIGHT: f64 = 1e-12;
/// Fraction of the distance to a non-pinnable boundary taken by one step.
const TO_BOUNDARY: f64 = 0.9;
/// Descent stops once the objective improved by less than
/// `PROGRESS_TOL * max(1, |f|)` over `PROGRESS_WINDOW` iterations.
const PROGRESS_TOL: f64 = 1e-15;
const PROGRESS_WINDOW: usize = 200;
/// Relative margin kept when a surrogate moves to a finer node set.
const TRANSFER_MARGIN: f64 = 1e-6;

struct Workspace {
    order: usize,
    x: Vec<f64>,
    /// `w_i θ(x_i)`
    wt: Vec<f64>,
    wt_max: f64,
    ln_theta: Vec<f64>,
    center: f64,
    scale: f64,
    /// basis polynomials in `u`
    phi: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
    /// node-major basis values
    phi_vals: Vec<f64>,
    psi_vals: Vec<f64>,
    theta: Density,
    support: (f64, f64),
}

/// Target data in basis coordinates.
struct Targets {
    sigma: Vec<f64>,
    xi: Vec<f64>,
    sig_b: Vec<f64>,
    xi_a: Vec<f64>,
}

struct Point {
    f: f64,
    g: Vec<f64>,
    sigma_res: Vec<f64>,
    xi_res: Vec<f64>,
    xi0: f64,
}

/// Polynomial coefficients and their node values, one entry per basis member.
type Basis = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn gram_schmidt(start: Vec<Vec<f64>>, u: &[f64], wt: &[f64]) -> Result<Basis> {
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let mut vals: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(wt).map(|((x, y), w)| x * y * w).sum() };
    for c in start {
        let mut c = c;
        let mut v: Vec<f64> = u.iter().map(|&ui| poly::eval(&c, ui)).collect();
        for _ in 0..2 {
            for (pc, pv) in coeffs.iter().zip(&vals) {
                let proj = dot(&v, pv);
                c.iter_mut().zip(pc.iter()).for_each(|(a, b)| *a -= proj * b);
                v.iter_mut().zip(pv).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(norm > 1e-12) {
            return Err(Error::InvalidGrid("too few nodes under the reference density for the basis".into()));
        }
        c.iter_mut().for_each(|a| *a /= norm);
        v.iter_mut().for_each(|a| *a /= norm);
        coeffs.push(c);
        vals.push(v);
    }
    Ok((coeffs, vals))
}

impl Workspace {
    /// Workspace on every `stride`-th node of the θ-window of `grid`.
    fn new(theta: &Density, order: usize, grid: GridSpec, support: (f64, f64), stride: usize) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::Model(format!("moment order must be even and positive, got {order}")));
        }
        let range = support_range(&grid, support);
        let (x, w): (Vec<f64>, Vec<f64>) = if stride <= 1 {
            let all_w = grid.weights();
            (range.clone().map(|i| grid.node(i)).collect(), all_w[range].to_vec())
        } else {
            let idx: Vec<usize> = range.step_by(stride).collect();
            let sub = GridSpec::new(grid.node(idx[0]), grid.node(*idx.last().unwrap()), idx.len())?;
            (sub.nodes().collect(), sub.weights())
        };
        let th: Vec<f64> = x.iter().map(|&xi| theta.eval(xi)).collect::<Result<_>>()?;
        let wt: Vec<f64> = w.iter().zip(&th).map(|(a, b)| a * b).collect();
        let mass: f64 = wt.iter().sum();
        let center = wt.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / mass;
        let var = wt.iter().zip(&x).map(|(a, b)| a * (b - center).powi(2)).sum::<f64>() / mass;
        let scale = var.sqrt();
        let u: Vec<f64> = x.iter().map(|xi| (xi - center) / scale).collect();

        let mut herm = poly::hermite_orthonormal(order);
        let (phi, phi_cols) = gram_schmidt(herm.clone(), &u, &wt)?;
        // x * He_{j-1}(u), j = 1..=order, vanish at x = 0
        herm.truncate(order);
        let lin = [center, scale];
        let psi_start: Vec<Vec<f64>> = herm.iter().map(|h| poly::mul(&lin, h)).collect();
        let (psi, psi_cols) = gram_schmidt(psi_start, &u, &wt)?;

        let n = x.len();
        let mut phi_vals = vec![0.0; n * (order + 1)];
        let mut psi_vals = vec![0.0; n * order];
        for i in 0..n {
            for j in 0..=order {
                phi_vals[i * (order + 1) + j] = phi_cols[j][i];
            }
            for j in 0..order {
                psi_vals[i * order + j] = psi_cols[j][i];
            }
        }
        Ok(Self {
            order,
            ln_theta: th.iter().map(|t| t.ln()).collect(),
            x,
            wt_max: wt.iter().cloned().fold(0.0, f64::max),
            wt,
            center,
            scale,
            phi,
            psi,
            phi_vals,
            psi_vals,
            theta: theta.clone(),
            support,
        })
    }

    fn dim(&self) -> usize {
        2 * self.order + 1
    }

    fn targets(&self, sigma: &[f64], xi: &[f64]) -> Targets {
        let full_sigma: Vec<f64> = std::iter::once(1.0).chain(sigma.iter().cloned()).collect();
        let full_xi: Vec<f64> = std::iter::once(0.0).chain(xi.iter().cloned()).collect();
        let sig_b = self
            .phi
            .iter()
            .map(|c| {
                let cx = poly::compose_affine(c, self.center, self.scale);
                cx.iter().zip(&full_sigma).map(|(a, b)| a * b).sum()
            })
            .collect();
        let xi_a = self
            .psi
            .iter()
            .map(|c| {
                let cx = poly::compose_affine(c, self.center, self.scale);
                cx.iter().zip(&full_xi).skip(1).map(|(a, b)| a * b).sum()
            })
            .collect();
        Targets { sigma: full_sigma, xi: full_xi, sig_b, xi_a }
    }

    #[inline]
    fn pq(&self, z: &[f64], i: usize) -> (f64, f64) {
        let o = self.order;
        let a = &z[..o];
        let b = &z[o..];
        let pv = &self.psi_vals[i * o..(i + 1) * o];
        let qv = &self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)];
        let p = 1.0 + a.iter().zip(pv).map(|(x, y)| x * y).sum::<f64>();
        let q = b.iter().zip(qv).map(|(x, y)| x * y).sum::<f64>();
        (p, q)
    }

    /// Objective value, `None` outside the positive cone.
    fn value(&self, z: &[f64], t: &Targets) -> Option<f64> {
        let o = self.order;
        let mut f: f64 =
            t.sig_b.iter().zip(&z[o..]).map(|(a, b)| a * b).sum::<f64>() - t.xi_a.iter().zip(&z[..o]).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..self.x.len() {
            let (p, q) = self.pq(z, i);
            if !(p > 0.0 && q > 0.0) {
                return None;
            }
            f += self.wt[i] * p * ((p / q).ln() + self.ln_theta[i] - 1.0);
        }
        f.is_finite().then_some(f)
    }

    fn point(&self, z: &[f64], t: &Targets) -> Option<Point> {
        let o = self.order;
        let f = self.value(z, t)?;
        let mut g = vec![0.0; self.dim()];
        for j in 0..o {
            g[j] = -t.xi_a[j];
        }
        g[o..=2 * o].copy_from_slice(&t.sig_b[..=o]);
        let mut sig_m = vec![0.0; o + 1];
        let mut xi_m = vec![0.0; o + 1];
        for i in 0..self.x.len() {
            let (p, q) = self.pq(z, i);
            let ln_rho = (p / q).ln() + self.ln_theta[i];
            let dens = self.wt[i] * p / q;
            let lw = self.wt[i] * ln_rho;
            let pv = &self.psi_vals[i * o..(i + 1) * o];
            let qv = &self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)];
            for j in 0..o {
                g[j] += lw * pv[j];
            }
            for j in 0..=o {
                g[o + j] -= dens * qv[j];
            }
            let mut xp = 1.0;
            for k in 0..=o {
                sig_m[k] += dens * xp;
                xi_m[k] += lw * xp;
                xp *= self.x[i];
            }
        }
        let sigma_res = sig_m.iter().zip(&t.sigma).map(|(a, b)| a - b).collect();
        let xi_res = xi_m.iter().zip(&t.xi).skip(1).map(|(a, b)| a - b).collect();
        Some(Point { f, g, sigma_res, xi_res, xi0: xi_m[0] })
    }

    fn scaled_residual(&self, pt: &Point, t: &Targets, with_xi: bool) -> f64 {
        let s = pt.sigma_res.iter().zip(&t.sigma).map(|(r, v)| r.abs() / v.abs().max(1.0)).fold(0.0, f64::max);
        if !with_xi {
            return s;
        }
        pt.xi_res.iter().zip(&t.xi[1..]).map(|(r, v)| r.abs() / v.abs().max(1.0)).fold(s, f64::max)
    }

    /// Basis coordinates of a surrogate's polynomials (exact for
    /// polynomials in the span, θ-projection otherwise).
    fn coordinates(&self, s: &RationalSurrogate) -> Result<Vec<f64>> {
        if s.order() != self.order {
            return Err(Error::Model("starting surrogate has a different order".into()));
        }
        let o = self.order;
        let p0 = s.p_eval(0.0);
        if !(p0 > 0.0) {
            return Err(Error::Model("starting numerator must be positive at 0".into()));
        }
        let mut z = vec![0.0; self.dim()];
        for (i, &x) in self.x.iter().enumerate() {
            let p = s.p_eval(x) / p0 - 1.0;
            let q = s.q_eval(x) / p0;
            let pv = &self.psi_vals[i * o..(i + 1) * o];
            let qv = &self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)];
            for j in 0..o {
                z[j] += self.wt[i] * p * pv[j];
            }
            for j in 0..=o {
                z[o + j] += self.wt[i] * q * qv[j];
            }
        }
        Ok(z)
    }

    /// [`Workspace::coordinates`], pulled toward `P = Q = 1` just enough to
    /// be strictly positive on this workspace's nodes.
    fn feasible_coordinates(&self, s: &RationalSurrogate) -> Result<Vec<f64>> {
        let z = self.coordinates(s)?;
        let id = self.coordinates(&RationalSurrogate::identity(self.theta.clone(), self.order, self.support)?)?;
        let feasible = |z: &[f64]| {
            let (p, q): (Vec<f64>, Vec<f64>) = (0..self.x.len()).map(|i| self.pq(z, i)).unzip();
            let top = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
            let (pt, qt) = (TRANSFER_MARGIN * top(&p), TRANSFER_MARGIN * top(&q));
            p.iter().all(|&v| v > pt) && q.iter().all(|&v| v > qt)
        };
        let mut lambda = 0.0;
        loop {
            let zl: Vec<f64> = z.iter().zip(&id).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect();
            if feasible(&zl) {
                return Ok(zl);
            }
            lambda = if lambda == 0.0 { 1e-9 } else { (lambda * 4.0).min(1.0) };
        }
    }

    fn surrogate(&self, z: &[f64]) -> Result<RationalSurrogate> {
        let o = self.order;
        let mut num = vec![0.0; o + 1];
        num[0] = 1.0;
        let mut den = vec![0.0; o + 1];
        for (j, c) in self.psi.iter().enumerate() {
            for (k, v) in c.iter().enumerate() {
                num[k] += z[j] * v;
            }
        }
        for (j, c) in self.phi.iter().enumerate() {
            for (k, v) in c.iter().enumerate() {
                den[k] += z[o + j] * v;
            }
        }
        RationalSurrogate::from_parts(self.center, self.scale, num, den, self.theta.clone(), self.support)
    }

    /// Gradient (in basis coordinates, masked) of a positivity constraint.
    fn con_grad(&self, c: Con, mask: &[bool]) -> Vec<f64> {
        let o = self.order;
        let mut row = vec![0.0; self.dim()];
        match c {
            Con::P(i) => row[..o].copy_from_slice(&self.psi_vals[i * o..(i + 1) * o]),
            Con::Q(i) => row[o..].copy_from_slice(&self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)]),
        }
        row.iter_mut().zip(mask).for_each(|(v, &m)| {
            if !m {
                *v = 0.0
            }
        });
        row
    }

    /// Distance of a constraint from its bound.
    fn slack(&self, z: &[f64], c: Con) -> f64 {
        match c {
            Con::P(i) => self.pq(z, i).0,
            Con::Q(i) => self.pq(z, i).1 - Q_FLOOR,
        }
    }

    /// Whether a constraint may join the active set. `Q` only may where θ
    /// carries no weight; elsewhere its log barrier keeps it positive and
    /// pinning it would trap mass at that node.
    fn pinnable(&self, c: Con) -> bool {
        match c {
            Con::P(_) => true,
            Con::Q(i) => self.wt[i] <= NEGLIGIBLE_WEIGHT * self.wt_max,
        }
    }

    fn near_zero(&self, z: &[f64], c: Con) -> bool {
        match c {
            Con::P(i) => self.pq(z, i).0 <= ACTIVE_TOL,
            // elsewhere only once the barrier has let it reach the floor
            Con::Q(i) if self.pinnable(c) => self.pq(z, i).1 - Q_FLOOR <= ACTIVE_TOL_Q,
            Con::Q(i) => self.pq(z, i).1 <= 2.0 * Q_FLOOR,
        }
    }

    /// Per-node data for evaluating `f(z + s d) - f(z)` without the
    /// cancellation of subtracting two full objective values.
    fn line(&self, z: &[f64], d: &[f64], t: &Targets) -> Line {
        let o = self.order;
        let lin = dot(&t.sig_b, &d[o..]) - dot(&t.xi_a, &d[..o]);
        let nodes = (0..self.x.len())
            .map(|i| {
                let (p, q) = self.pq(z, i);
                let dp = dot(&self.psi_vals[i * o..(i + 1) * o], &d[..o]);
                let dq = dot(&self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)], &d[o..]);
                [self.wt[i], self.ln_theta[i], p, q, dp, dq]
            })
            .collect();
        Line { lin, nodes }
    }

    /// Largest step along `d` keeping every inactive constraint positive,
    /// with the constraint that limits it.
    fn max_step(&self, z: &[f64], d: &[f64], active: &[Con]) -> (f64, Option<Con>) {
        let o = self.order;
        let move_p = d[..o].iter().any(|v| *v != 0.0);
        let mut best = (f64::INFINITY, None);
        for i in 0..self.x.len() {
            let (p, q) = self.pq(z, i);
            if move_p {
                let dp = dot(&self.psi_vals[i * o..(i + 1) * o], &d[..o]);
                if dp < 0.0 && !active.contains(&Con::P(i)) && p / -dp < best.0 {
                    best = (p / -dp, Some(Con::P(i)));
                }
            }
            let dq = dot(&self.phi_vals[i * (o + 1)..(i + 1) * (o + 1)], &d[o..]);
            let room = (q - Q_FLOOR).max(0.0);
            if dq < 0.0 && !active.contains(&Con::Q(i)) && room / -dq < best.0 {
                best = (room / -dq, Some(Con::Q(i)));
            }
        }
        best
    }

    /// Projected limited-memory quasi-Newton descent with Armijo
    /// backtracking. Positivity at the window nodes is handled as a set of
    /// linear inequality constraints: a constraint that limits a step joins
    /// the active set and later steps move within its null space; it is
    /// released once its multiplier turns negative.
    fn descend(
        &self,
        z: &mut Vec<f64>,
        mask: &[bool],
        t: &Targets,
        opts: &SolverOptions,
        with_xi: bool,
    ) -> Result<(usize, Termination, Point)> {
        let masked = |g: &[f64]| -> Vec<f64> { g.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect() };
        let mut cur = self.point(z, t).ok_or(Error::Domain)?;
        let mut active: Vec<Con> = Vec::new();
        let mut face = Face::default();
        let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
        let mut recent: VecDeque<f64> = VecDeque::with_capacity(PROGRESS_WINDOW + 1);
        for it in 0..opts.max_iters {
            if self.scaled_residual(&cur, t, with_xi) <= opts.grad_tol {
                return Ok((it, Termination::Converged, cur));
            }
            recent.push_back(cur.f);
            if recent.len() > PROGRESS_WINDOW {
                let old = recent.pop_front().unwrap();
                if old - cur.f < PROGRESS_TOL * cur.f.abs().max(1.0) {
                    return Ok((it, Termination::Stalled, cur));
                }
            }
            let g = masked(&cur.g);
            let gnorm = norm_inf(&g);
            let mut gp = face.project(&g);
            if !active.is_empty() && norm_inf(&gp) <= 1e-3 * gnorm {
                let lambda = face.multipliers(&g);
                let (k, lmin) =
                    lambda.iter().cloned().enumerate().fold((0, f64::INFINITY), |acc, (k, l)| if l < acc.1 { (k, l) } else { acc });
                if lmin < -1e-8 * gnorm {
                    active.remove(k);
                    face = Face::new(active.iter().map(|&c| self.con_grad(c, mask)).collect());
                    hist.clear();
                    gp = face.project(&g);
                } else if norm_inf(&gp) <= 1e-13 * gnorm.max(1.0) {
                    return Ok((it, Termination::Boundary, cur));
                }
            }
            if norm_inf(&gp) == 0.0 {
                return Ok((it, Termination::Boundary, cur));
            }

            let mut d = two_loop(&hist, &gp);
            d = face.project(&d);
            if !(dot(&g, &d) < 0.0) {
                hist.clear();
                d = gp.iter().map(|v| -v).collect();
            }
            // Constraints already at the boundary join the active set before
            // they can throttle the line search.
            for _ in 0..self.dim() {
                match self.max_step(z, &d, &active) {
                    (tmax, Some(c)) if tmax < 1.0 && self.near_zero(z, c) => {
                        active.push(c);
                        face = Face::new(active.iter().map(|&c| self.con_grad(c, mask)).collect());
                        hist.clear();
                        gp = face.project(&g);
                        d = gp.iter().map(|v| -v).collect();
                    }
                    _ => break,
                }
            }
            if norm_inf(&gp) == 0.0 {
                return Ok((it, Termination::Boundary, cur));
            }
            if norm_inf(&gp) <= 1e-13 * gnorm.max(1.0) {
                // the new face leaves no room; let the multipliers pick again
                continue;
            }
            let mut accepted = None;
            for attempt in 0..2 {
                let slope = dot(&g, &d);
                let (tmax, blocker) = self.max_step(z, &d, &active);
                let line = self.line(z, &d, t);
                let mut step = match blocker {
                    Some(c) if tmax <= 1.0 && self.pinnable(c) => tmax * (1.0 - 1e-9),
                    Some(_) if tmax <= 1.0 => tmax * TO_BOUNDARY,
                    _ => 1.0,
                };
                let first = step;
                while step >= opts.min_step {
                    let zn: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                    if zn == *z {
                        break;
                    }
                    if let Some(df) = line.change(step) {
                        if df < 0.0 && df <= opts.armijo_c * step * slope {
                            // recomputed from `zn` the values can round across zero
                            if let Some(next) = self.point(&zn, t) {
                                let hit = if step == first { blocker } else { None };
                                accepted = Some((zn, next, hit));
                                break;
                            }
                        }
                    }
                    step *= opts.backtrack;
                }
                if accepted.is_some() || attempt == 1 || hist.is_empty() {
                    break;
                }
                // quasi-Newton step failed; retry along the projected gradient
                hist.clear();
                d = gp.iter().map(|v| -v).collect();
            }
            let Some((zn, next, hit)) = accepted else {
                return Ok((it, Termination::Stalled, cur));
            };
            let newly_active =
                hit.filter(|&c| self.pinnable(c) && (self.slack(&zn, c) <= 1e-6 * self.slack(z, c) || self.near_zero(&zn, c)));
            if let Some(c) = newly_active {
                active.push(c);
                face = Face::new(active.iter().map(|&c| self.con_grad(c, mask)).collect());
                hist.clear();
            } else if opts.memory > 0 {
                let s: Vec<f64> = zn.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
                let gn = masked(&next.g);
                let y = face.project(&gn.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
                let sy = dot(&s, &y);
                if sy > 1e-300 {
                    hist.push_back((s, y, 1.0 / sy));
                    if hist.len() > opts.memory {
                        hist.pop_front();
                    }
                }
            }
            *z = zn;
            cur = next;
        }
        Ok((opts.max_iters, Termination::IterationCap, cur))
    }
}

struct Line {
    lin: f64,
    /// `[w θ, log θ, P, Q, dP, dQ]` per node
    nodes: Vec<[f64; 6]>,
}

impl Line {
    /// Objective change at step `s`, `None` if positivity fails.
    fn change(&self, s: f64) -> Option<f64> {
        let mut df = s * self.lin;
        for &[wt, lt, p, q, dp, dq] in &self.nodes {
            let (ep, eq) = (s * dp, s * dq);
            let (pn, qn) = (p + ep, q + eq);
            if !(pn > 0.0 && qn > 0.0) {
                return None;
            }
            // P'(log P'/Q' + log θ - 1) - P(log P/Q + log θ - 1)
            df += wt * (ep * ((pn / qn).ln() + lt - 1.0) + p * ((ep / p).ln_1p() - (eq / q).ln_1p()));
        }
        df.is_finite().then_some(df)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Con {
    P(usize),
    Q(usize),
}

/// Null space of the active constraint gradients.
#[derive(Default)]
struct Face {
    rows: Vec<Vec<f64>>,
    /// orthonormal basis of the row span
    basis: Vec<Vec<f64>>,
}

impl Face {
    fn new(rows: Vec<Vec<f64>>) -> Self {
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows[0].len();
        let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        let svd = a.svd(false, true);
        let vt = svd.v_t.expect("requested right singular vectors");
        let top = svd.singular_values.max();
        let basis = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 1e-10 * top)
            .map(|(k, _)| vt.row(k).iter().cloned().collect())
            .collect();
        Self { rows, basis }
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for b in &self.basis {
            let c = dot(&out, b);
            axpy(-c, b, &mut out);
        }
        out
    }

    /// Least-squares `λ` with `g ≈ Σ λ_i ∇c_i`, scaled by `|∇c_i|`.
    fn multipliers(&self, g: &[f64]) -> Vec<f64> {
        let n = g.len();
        let m = self.rows.len();
        let at = DMatrix::from_fn(n, m, |r, c| self.rows[c][r]);
        let svd = at.svd(true, true);
        let top = svd.singular_values.max();
        let rhs = nalgebra::DVector::from_column_slice(g);
        let lam = svd.solve(&rhs, 1e-10 * top).expect("thin SVD has both factors");
        lam.iter().zip(&self.rows).map(|(l, r)| l * r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

fn two_loop(hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut d = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &d);
        axpy(-a, y, &mut d);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        d.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &d);
        axpy(a - b, s, &mut d);
    }
    d.iter_mut().for_each(|v| *v = -*v);
    d
}

#[inline]
fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn check_inputs(sigma: &[f64], xi: Option<&[f64]>, opts: &SolverOptions) -> Result<()> {
    opts.validate()?;
    if sigma.is_empty() || !sigma.len().is_multiple_of(2) {
        return Err(Error::Model(format!("need an even number of power moments, got {}", sigma.len())));
    }
    if let Some(xi) = xi {
        if xi.len() != sigma.len() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("log moments must be finite and match the power moments".into()));
        }
    }
    require_feasible(sigma)
}

fn run(
    sigma: &[f64],
    xi: Option<&[f64]>,
    theta: &Density,
    grid: GridSpec,
    opts: &SolverOptions,
    start: Option<&RationalSurrogate>,
) -> Result<Fit> {
    check_inputs(sigma, xi, opts)?;
    let order = sigma.len();
    let support = theta_window(theta, grid, opts.window_log_ratio)?;
    let nodes = support_range(&grid, support).len();
    let mut stride = 1;
    while opts.coarse_nodes > 0 && nodes / (2 * stride) >= opts.coarse_nodes {
        stride *= 2;
    }
    let power_only = xi.is_none();
    let zeros = vec![0.0; order];
    let mut current = match start {
        Some(s) => s.clone(),
        None => RationalSurrogate::identity(theta.clone(), order, support)?,
    };
    let mut iterations = 0;
    loop {
        let ws = Workspace::new(theta, order, grid, support, stride)?;
        let t = ws.targets(sigma, xi.unwrap_or(&zeros));
        let mut z = ws.feasible_coordinates(&current)?;
        if power_only {
            z[..order].iter_mut().for_each(|v| *v = 0.0);
        }
        let q_only: Vec<bool> = (0..ws.dim()).map(|j| j >= order).collect();
        let (it, mut termination, mut pt) = if power_only {
            ws.descend(&mut z, &q_only, &t, opts, false)?
        } else {
            ws.descend(&mut z, &vec![true; ws.dim()], &t, opts, true)?
        };
        iterations += it;
        current = ws.surrogate(&z)?;
        if stride > 1 {
            stride /= 2;
            continue;
        }
        if !power_only && termination != Termination::Converged && opts.polish {
            let (it2, _, pt2) = ws.descend(&mut z, &q_only, &t, opts, false)?;
            iterations += it2;
            pt = pt2;
            if ws.scaled_residual(&pt, &t, true) <= opts.grad_tol {
                termination = Termination::Converged;
            }
        }
        return finish(&ws, &t, z, pt, iterations, termination, power_only);
    }
}

fn finish(
    ws: &Workspace,
    t: &Targets,
    z: Vec<f64>,
    pt: Point,
    iterations: usize,
    termination: Termination,
    power_only: bool,
) -> Result<Fit> {
    let order = ws.order;
    let residual = ws.scaled_residual(&pt, t, !power_only);
    let fit = Fit {
        surrogate: ws.surrogate(&z)?,
        iterations,
        termination,
        residual,
        sigma_residual: pt.sigma_res,
        xi_residual: if power_only { vec![0.0; order] } else { pt.xi_res },
        objective: pt.f,
        xi0: pt.xi0,
    };
    if fit.converged() {
        Ok(fit)
    } else {
        Err(Error::NotConverged { iterations, residual, best: Box::new(fit) })
    }
}

/// Fits `Pθ/Q` to `σ = (σ_1..σ_2n)` and `ξ = (ξ_1..ξ_2n)`, starting from `θ`.
pub fn solve(sigma: &[f64], xi: &[f64], theta: &Density, grid: GridSpec, opts: &SolverOptions) -> Result<Fit> {
    run(sigma, Some(xi), theta, grid, opts, None)
}

/// As [`solve`], from a given feasible starting surrogate.
pub fn solve_from(
    sigma: &[f64],
    xi: &[f64],
    theta: &Density,
    grid: GridSpec,
    opts: &SolverOptions,
    start: &RationalSurrogate,
) -> Result<Fit> {
    run(sigma, Some(xi), theta, grid, opts, Some(start))
}

/// Fits `θ/Q` to the power moments alone (`P ≡ 1`).
pub fn solve_power_only(sigma: &[f64], theta: &Density, grid: GridSpec, opts: &SolverOptions) -> Result<Fit> {
    run(sigma, None, theta, grid, opts, None)
}

/// Integrals of a surrogate over its support on `grid`:
/// `(σ_0..σ_2n, ξ_0..ξ_2n, ∫Pθ log(Pθ/Q) - ∫Pθ)`.
fn integrals(s: &RationalSurrogate, grid: GridSpec) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let o = s.order();
    let w = grid.weights();
    let mut sig = vec![0.0; o + 1];
    let mut xi = vec![0.0; o + 1];
    let mut rest = 0.0;
    for i in support_range(&grid, s.support()) {
        let x = grid.node(i);
        let (p, q) = (s.p_eval(x), s.q_eval(x));
        if !(p > 0.0 && q > 0.0) {
            return Err(Error::Positivity { x, p, q });
        }
        let th = s.theta().eval(x)?;
        if th == 0.0 {
            continue;
        }
        let ln_rho = (p / q).ln() + th.ln();
        let dens = w[i] * th * p / q;
        let lw = w[i] * th * ln_rho;
        rest += w[i] * th * p * (ln_rho - 1.0);
        let mut xp = 1.0;
        for k in 0..=o {
            sig[k] += dens * xp;
            xi[k] += lw * xp;
            xp *= x;
        }
    }
    Ok((sig, xi, rest))
}

/// `J` at the surrogate's coefficients on the `P(0) = 1` slice.
pub fn objective(s: &RationalSurrogate, sigma: &[f64], xi: &[f64], grid: GridSpec) -> Result<f64> {
    let s = s.rescaled(1.0 / s.p_eval(0.0));
    let (_, _, rest) = integrals(&s, grid)?;
    let p = s.p();
    let q = s.q();
    let lin: f64 = q[0] + q[1..].iter().zip(sigma).map(|(a, b)| a * b).sum::<f64>() - p.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
    Ok(lin + rest)
}

/// Analytic gradient in `x`-coefficients: `(∂J/∂p_1..p_2n, ∂J/∂q_0..q_2n)`.
pub fn gradient(s: &RationalSurrogate, sigma: &[f64], xi: &[f64], grid: GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = s.rescaled(1.0 / s.p_eval(0.0));
    let (sig, lxi, _) = integrals(&s, grid)?;
    let gp = lxi[1..].iter().zip(xi).map(|(a, b)| a - b).collect();
    let full_sigma = std::iter::once(1.0).chain(sigma.iter().cloned());
    let gq = full_sigma.zip(&sig).map(|(a, b)| a - b).collect();
    Ok((gp, gq))
}

/// Forward moment map `(P, Q) -> (σ_1..σ_2n, ξ_1..ξ_2n)`.
pub fn moment_map(s: &RationalSurrogate, grid: GridSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let (sig, xi, _) = integrals(s, grid)?;
    Ok((sig[1..].to_vec(), xi[1..].to_vec()))
}

/// Mass `∫ Pθ/Q` and `ξ_0 = ∫ θ log(Pθ/Q)` of a surrogate.
pub fn mass_and_xi0(s: &RationalSurrogate, grid: GridSpec) -> Result<(f64, f64)> {
    let (sig, xi, _) = integrals(s, grid)?;
    Ok((sig[0], xi[0]))
}

/// Central-difference Jacobian of `(p_1..p_2n, q_0..q_2n) ->
/// (σ_0..σ_2n, ξ_1..ξ_2n)`, a square `(4n+1)`-matrix.
pub fn moment_map_jacobian(s: &RationalSurrogate, grid: GridSpec, step: f64) -> Result<DMatrix<f64>> {
    let o = s.order();
    let p = s.p();
    let q = s.q();
    let eval = |p: &[f64], q: &[f64]| -> Result<Vec<f64>> {
        let r = RationalSurrogate::from_x_coeffs(p, q, s.theta().clone(), s.support())?;
        let (sig, xi, _) = integrals(&r, grid)?;
        Ok(sig.into_iter().chain(xi.into_iter().skip(1)).collect())
    };
    let dim = 2 * o + 1;
    let mut jac = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let (mut pp, mut qp) = (p.clone(), q.clone());
        let (mut pm, mut qm) = (p.clone(), q.clone());
        if c < o {
            pp[c] += step;
            pm[c] -= step;
        } else {
            qp[c - o] += step;
            qm[c - o] -= step;
        }
        let fp = eval(&pp, &qp)?;
        let fm = eval(&pm, &qm)?;
        for r in 0..dim {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Smallest singular value after scaling every row to unit max-norm.
pub fn min_singular_value_row_scaled(jac: &DMatrix<f64>) -> f64 {
    let mut m = jac.clone();
    for mut row in m.row_iter_mut() {
        let s = row.amax();
        if s > 0.0 {
            row /= s;
        }
    }
    m.singular_values().min()
}
