//! Power moments, generalized logarithmic moments and the Hankel test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::density::{Density, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::poly::binomial;
use crate::quadrature::{GridFunction, GridSpec};

/// Leading Hankel minors at or below this value count as singular.
pub const HANKEL_TOL: f64 = 1e-10;

/// Truncated moment pair: `sigma = (σ_1..σ_2n)` and `xi = (ξ_1..ξ_2n)`
/// taken against `theta`. `σ_0 = 1` and `ξ_0 = 0` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta: Density,
}

impl MomentVector {
    pub fn new(sigma: Vec<f64>, xi: Vec<f64>, theta: Density) -> Result<Self> {
        if sigma.len() != xi.len() || sigma.is_empty() || !sigma.len().is_multiple_of(2) {
            return Err(Error::Model(format!("moment vectors need equal even length, got {} and {}", sigma.len(), xi.len())));
        }
        Ok(Self { sigma, xi, theta })
    }

    pub fn order(&self) -> usize {
        self.sigma.len()
    }

    pub fn mean(&self) -> f64 {
        self.sigma[0]
    }

    pub fn variance(&self) -> f64 {
        self.sigma[1] - self.sigma[0] * self.sigma[0]
    }
}

/// `(σ_1..σ_order)` of a tabulated density.
pub fn grid_power_moments(f: &GridFunction, order: usize) -> Vec<f64> {
    (1..=order).map(|k| f.moment(k as i32)).collect()
}

/// `(σ_1..σ_order)` of `d` by quadrature on `grid`.
pub fn power_moments(d: &Density, order: usize, grid: GridSpec) -> Result<Vec<f64>> {
    Ok(grid_power_moments(&d.tabulate(grid)?, order))
}

/// Moments of `f x + η` from posterior moments `E[x^j]` and noise moments
/// `E[η^j]`, both indexed from `j = 0`:
/// `σ_k = Σ_j C(k, j) f^j E[x^j] E[η^{k-j}]`. Returns `k = 1..=order`.
pub fn propagate_power_moments(post: &[f64], f: f64, eta: &[f64], order: usize) -> Result<Vec<f64>> {
    if post.len() <= order || eta.len() <= order {
        return Err(Error::Model(format!("need moments 0..={order}, got {} posterior and {} noise", post.len(), eta.len())));
    }
    Ok((1..=order).map(|k| (0..=k).map(|j| binomial(k, j) * f.powi(j as i32) * post[j] * eta[k - j]).sum()).collect())
}

/// `E[η^k]`, `k = 0..=order`: closed form where known, quadrature otherwise.
pub fn noise_moments(eta: &Density, order: usize, grid: GridSpec) -> Result<Vec<f64>> {
    let mut out = vec![1.0];
    if (1..=order).all(|k| eta.closed_form_power_moment(k).is_some()) {
        out.extend((1..=order).map(|k| eta.closed_form_power_moment(k).unwrap()));
    } else {
        let mut f = eta.tabulate(grid)?;
        f.normalize();
        out.extend(grid_power_moments(&f, order));
    }
    Ok(out)
}

/// Same moments for `c + η`, a known additive input plus noise.
pub fn shifted_noise_moments(eta_moments: &[f64], c: f64) -> Vec<f64> {
    let order = eta_moments.len() - 1;
    let ones: Vec<f64> = (0..=order).map(|j| c.powi(j as i32)).collect();
    let mut out = vec![1.0];
    out.extend(propagate_power_moments(eta_moments, 1.0, &ones, order).expect("lengths match"));
    out
}

/// `ξ_k = ∫ x^k θ(x) log ρ(x) dx` for `k = from..=order` on `rho`'s grid,
/// with `ρ` clamped at the log floor.
pub fn generalized_log_moments_from(rho: &GridFunction, theta: &Density, from: usize, order: usize) -> Result<Vec<f64>> {
    let grid = *rho.grid();
    let w = grid.weights();
    let mut out = vec![0.0; order + 1 - from];
    for (i, x) in grid.nodes().enumerate() {
        let t = theta.eval(x)?;
        if t == 0.0 {
            continue;
        }
        let base = w[i] * t * rho.values()[i].max(LOG_FLOOR).ln();
        let mut xp = x.powi(from as i32);
        for o in out.iter_mut() {
            *o += base * xp;
            xp *= x;
        }
    }
    Ok(out)
}

/// `(ξ_1..ξ_order)`.
pub fn generalized_log_moments(rho: &GridFunction, theta: &Density, order: usize) -> Result<Vec<f64>> {
    generalized_log_moments_from(rho, theta, 1, order)
}

/// Both moment families of a density tabulated on `grid`.
pub fn moment_vector(rho: &GridFunction, theta: Density, order: usize) -> Result<MomentVector> {
    let sigma = grid_power_moments(rho, order);
    let xi = generalized_log_moments(rho, &theta, order)?;
    MomentVector::new(sigma, xi, theta)
}

/// Hankel matrix `[σ_{i+j}]` of `(1, σ_1..σ_2n)`.
pub fn hankel(sigma: &[f64]) -> DMatrix<f64> {
    let n = sigma.len() / 2;
    let full: Vec<f64> = std::iter::once(1.0).chain(sigma.iter().cloned()).collect();
    DMatrix::from_fn(n + 1, n + 1, |i, j| full[i + j])
}

/// First leading principal minor of the Hankel matrix that is not above
/// [`HANKEL_TOL`], as `(index, value)`.
pub fn hankel_violation(sigma: &[f64]) -> Option<(usize, f64)> {
    if !sigma.len().is_multiple_of(2) || sigma.iter().any(|s| !s.is_finite()) {
        return Some((0, f64::NAN));
    }
    let h = hankel(sigma);
    for k in 1..=h.nrows() {
        let minor = h.view((0, 0), (k, k)).determinant();
        if !(minor > HANKEL_TOL) {
            return Some((k, minor));
        }
    }
    None
}

/// True iff every leading principal minor of the Hankel matrix of
/// `(1, σ_1..σ_2n)` exceeds [`HANKEL_TOL`].
pub fn hankel_psd_check(sigma: &[f64]) -> bool {
    hankel_violation(sigma).is_none()
}

pub fn require_feasible(sigma: &[f64]) -> Result<()> {
    match hankel_violation(sigma) {
        None => Ok(()),
        Some((index, minor)) => Err(Error::Infeasible { index, minor }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Component;
    use crate::quadrature::convolve_on_grid;

    fn example1() -> Density {
        Density::gaussian_mixture(vec![Component::new(0.5, 2.0, 1.0), Component::new(0.5, -2.0, 1.0)]).unwrap()
    }

    #[test]
    fn example1_power_moments() {
        let m = power_moments(&example1(), 4, GridSpec::examples_default()).unwrap();
        let want = [0.0, 5.0, 0.0, 43.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn wide_gaussian_power_moments() {
        let grid = GridSpec::new(-60.0, 60.0, 6001).unwrap();
        let m = power_moments(&Density::gaussian(0.0, 25.0).unwrap(), 4, grid).unwrap();
        let want = [0.0, 25.0, 0.0, 1875.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() <= 1e-8 * b.max(1.0), "{m:?}");
        }
    }

    #[test]
    fn propagation_examples() {
        let post = [1.0, -7.0, 49.0, -343.0, 2401.0];
        let eta = noise_moments(&Density::gaussian(0.0, 0.03f64.powi(2)).unwrap(), 4, GridSpec::localization_default()).unwrap();
        let s = propagate_power_moments(&post, 1.0, &eta, 4).unwrap();
        assert!((s[0] + 7.0).abs() < 1e-14);
        assert!((s[1] - 49.0009).abs() < 1e-12);

        let z = propagate_power_moments(&post, 0.0, &eta, 4).unwrap();
        assert_eq!(&z[..], &eta[1..]);

        let delta = [1.0, 0.0, 0.0, 0.0, 0.0];
        let post2 = [1.0, 0.3, 1.1, 0.2, 3.0];
        let d = propagate_power_moments(&post2, 2.0, &delta, 4).unwrap();
        for k in 1..=4 {
            assert!((d[k - 1] - 2f64.powi(k as i32) * post2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn shifted_noise_is_drift_plus_noise() {
        let eta = Density::gaussian(1.0, 0.03f64.powi(2)).unwrap();
        let direct: Vec<f64> = (0..=4).map(|k| eta.closed_form_power_moment(k).unwrap()).collect();
        let base = noise_moments(&Density::gaussian(0.0, 0.03f64.powi(2)).unwrap(), 4, GridSpec::localization_default()).unwrap();
        let shifted = shifted_noise_moments(&base, 1.0);
        for (a, b) in direct.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn propagation_matches_convolution() {
        let grid = GridSpec::new(-15.0, 15.0, 3001).unwrap();
        let post = Density::gumbel(0.3, 0.5).unwrap().tabulate(grid).unwrap();
        let eta = Density::gaussian(0.0, 0.2).unwrap();
        let pm: Vec<f64> = (0..=4).map(|k| post.moment(k)).collect();
        let em = noise_moments(&eta, 4, grid).unwrap();
        let prop = propagate_power_moments(&pm, 1.0, &em, 4).unwrap();
        let conv = convolve_on_grid(&post, |x| eta.eval(x).unwrap(), grid);
        for k in 1..=4 {
            let q = conv.moment(k as i32);
            assert!((prop[k - 1] - q).abs() <= 1e-6 * q.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn gaussian_self_log_moments() {
        let grid = GridSpec::new(-20.0, 20.0, 4001).unwrap();
        let theta = Density::gaussian(0.0, 1.0).unwrap();
        let xi = generalized_log_moments(&theta.tabulate(grid).unwrap(), &theta, 2).unwrap();
        assert!(xi[0].abs() < 1e-12);
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln() - 1.5;
        assert!((xi[1] - want).abs() < 1e-9, "{}", xi[1]);
        assert!((want + 2.4189).abs() < 1e-4);
    }

    #[test]
    fn log_moments_stable_under_refinement() {
        let theta = Density::gaussian(0.0, 25.0).unwrap();
        let coarse = GridSpec::new(-50.0, 50.0, 5001).unwrap();
        let fine = GridSpec::new(-50.0, 50.0, 16001).unwrap();
        let a = generalized_log_moments(&example1().tabulate(coarse).unwrap(), &theta, 4).unwrap();
        let b = generalized_log_moments(&example1().tabulate(fine).unwrap(), &theta, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn hankel_examples() {
        assert!(hankel_psd_check(&[0.0, 1.0, 0.0, 3.0]));
        assert!(!hankel_psd_check(&[0.0, 0.0, 0.0, 0.0]));
        assert!(hankel_psd_check(&[0.0, 5.0, 0.0, 43.0]));
        // two-point mass: singular third minor
        assert!(!hankel_psd_check(&[0.0, 1.0, 0.0, 1.0]));
        assert!(matches!(require_feasible(&[0.0, 0.0, 0.0, 0.0]), Err(Error::Infeasible { index: 2, .. })));
    }
}
