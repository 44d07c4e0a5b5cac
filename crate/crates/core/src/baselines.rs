//! Comparison filters: scalar Kalman filter and a sampling-importance
//! resampling particle filter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub mean: f64,
    pub variance: f64,
}

impl KalmanState {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !mean.is_finite() {
            return Err(Error::Model(format!("Kalman state needs finite mean and positive variance, got {mean}, {variance}")));
        }
        Ok(Self { mean, variance })
    }
}

pub fn kalman_predict(s: KalmanState, f: f64, drift: f64, q_var: f64) -> KalmanState {
    KalmanState { mean: f * s.mean + drift, variance: f * f * s.variance + q_var }
}

/// Correction with `y = h x + offset + v`, `v ~ N(0, r_var)`.
pub fn kalman_correct(s: KalmanState, y: f64, h: f64, offset: f64, r_var: f64) -> KalmanState {
    let innov_var = h * h * s.variance + r_var;
    let gain = s.variance * h / innov_var;
    KalmanState { mean: s.mean + gain * (y - h * s.mean - offset), variance: (1.0 - gain * h) * s.variance }
}

/// Predict, then correct with `y`.
pub fn kalman_step(s: KalmanState, y: f64, f: f64, h: f64, drift: f64, offset: f64, q_var: f64, r_var: f64) -> KalmanState {
    kalman_correct(kalman_predict(s, f, drift, q_var), y, h, offset, r_var)
}

/// Stationary posterior variance: fixed point of
/// `P = (1 - K h) M`, `M = f² P + q`, `K = M h / (h² M + r)`.
/// Closed form from the quadratic in the predicted variance `M`:
/// `h² M² + (r - f² r - q h²) M - q r = 0`.
pub fn riccati_fixed_point(f: f64, h: f64, q_var: f64, r_var: f64) -> f64 {
    let a = h * h;
    let b = r_var - f * f * r_var - q_var * h * h;
    let c = -q_var * r_var;
    let m = if a == 0.0 { -c / b } else { (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a) };
    m * r_var / (a * m + r_var)
}

/// Weighted particle set; weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// `n` equally weighted draws from `init`.
    pub fn sample<R: Rng + ?Sized>(init: &Density, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::Model("particle count must be positive".into()));
        }
        let positions = init.sample(rng, n)?;
        Ok(Self { weights: vec![1.0 / n as f64; n], positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `x <- f x + drift + η` for every particle.
    pub fn propagate<R: Rng + ?Sized>(&mut self, f: f64, drift: f64, eta: &Density, rng: &mut R) -> Result<()> {
        for x in &mut self.positions {
            *x = f * *x + drift + eta.sample_one(rng)?;
        }
        Ok(())
    }

    /// Multiplies weights by `ρ_ε(y - h x - offset)` and renormalizes.
    pub fn reweight(&mut self, y: f64, h: f64, offset: f64, eps: &Density) -> Result<()> {
        for (w, &x) in self.weights.iter_mut().zip(&self.positions) {
            *w *= eps.eval(y - h * x - offset)?;
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ParticleDegeneracy);
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        Ok(())
    }

    /// Systematic resampling: one uniform offset, `N` evenly spaced
    /// pointers into the cumulative weights.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cum = self.weights[0];
        let mut j = 0;
        for i in 0..n {
            let u = u0 + i as f64 / n as f64;
            while u > cum && j + 1 < n {
                j += 1;
                cum += self.weights[j];
            }
            out.push(self.positions[j]);
        }
        self.positions = out;
        self.weights = vec![1.0 / n as f64; n];
    }
}

pub fn weighted_mean(ens: &ParticleEnsemble) -> f64 {
    ens.positions.iter().zip(&ens.weights).map(|(x, w)| x * w).sum()
}

pub fn weighted_variance(ens: &ParticleEnsemble) -> f64 {
    let m = weighted_mean(ens);
    ens.positions.iter().zip(&ens.weights).map(|(x, w)| w * (x - m).powi(2)).sum()
}

pub fn effective_sample_size(ens: &ParticleEnsemble) -> f64 {
    1.0 / ens.weights.iter().map(|w| w * w).sum::<f64>()
}

/// When to resample in [`pf_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Always,
    /// only when the effective sample size drops below this fraction of N
    BelowEss(f64),
}

/// SIR step: propagate, weight by the observation, resample. Returns the
/// weighted mean before resampling.
#[allow(clippy::too_many_arguments)]
pub fn pf_step<R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble,
    y: f64,
    f: f64,
    h: f64,
    drift: f64,
    offset: f64,
    eta: &Density,
    eps: &Density,
    resampling: Resampling,
    rng: &mut R,
) -> Result<f64> {
    ens.propagate(f, drift, eta, rng)?;
    pf_correct(ens, y, h, offset, eps, resampling, rng)
}

/// Weighting and resampling without the propagation.
pub fn pf_correct<R: Rng + ?Sized>(
    ens: &mut ParticleEnsemble,
    y: f64,
    h: f64,
    offset: f64,
    eps: &Density,
    resampling: Resampling,
    rng: &mut R,
) -> Result<f64> {
    ens.reweight(y, h, offset, eps)?;
    let mean = weighted_mean(ens);
    let go = match resampling {
        Resampling::Always => true,
        Resampling::BelowEss(frac) => effective_sample_size(ens) < frac * ens.len() as f64,
    };
    if go {
        ens.resample(rng);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huge_observation_noise_keeps_prediction() {
        let s = KalmanState::new(1.0, 2.0).unwrap();
        let p = kalman_predict(s, 1.0, 1.0, 0.1);
        let c = kalman_step(s, 100.0, 1.0, 1.0, 1.0, 0.0, 0.1, 1e14);
        assert!((c.mean - p.mean).abs() < 1e-10);
        assert!((c.variance - p.variance).abs() < 1e-10);
    }

    #[test]
    fn variance_reaches_riccati_fixed_point() {
        let (f, h, q, r) = (0.9, 1.0, 0.3, 0.5);
        let mut s = KalmanState::new(0.0, 10.0).unwrap();
        for _ in 0..100 {
            s = kalman_step(s, 0.0, f, h, 0.0, 0.0, q, r);
        }
        let p = riccati_fixed_point(f, h, q, r);
        assert!((s.variance - p).abs() < 1e-10, "{} vs {p}", s.variance);
        let m = f * f * p + q;
        assert!((p - m * r / (m + r)).abs() < 1e-14);
    }

    #[test]
    fn ensemble_statistics() {
        let e = ParticleEnsemble { positions: vec![1.0, 2.0, 3.0, 6.0], weights: vec![0.25; 4] };
        assert_eq!(weighted_mean(&e), 3.0);
        assert!((effective_sample_size(&e) - 4.0).abs() < 1e-12);
        let one = ParticleEnsemble { positions: vec![1.0, 2.0, 3.0], weights: vec![0.0, 1.0, 0.0] };
        assert_eq!(weighted_mean(&one), 2.0);
        assert_eq!(effective_sample_size(&one), 1.0);
    }

    #[test]
    fn all_zero_weights_is_degeneracy() {
        let mut e = ParticleEnsemble { positions: vec![0.0, 0.1], weights: vec![0.5, 0.5] };
        let eps = Density::uniform(-0.01, 0.01).unwrap();
        assert!(matches!(e.reweight(5.0, 1.0, 0.0, &eps), Err(Error::ParticleDegeneracy)));
    }

    #[test]
    fn systematic_resampling_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100;
        let positions: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let tot: f64 = raw.iter().sum();
        let base = ParticleEnsemble { positions, weights: raw.iter().map(|w| w / tot).collect() };
        let target = weighted_mean(&base);
        let means: Vec<f64> = (0..200)
            .map(|_| {
                let mut e = base.clone();
                e.resample(&mut rng);
                weighted_mean(&e)
            })
            .collect();
        let avg = means.iter().sum::<f64>() / 200.0;
        let sd = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((avg - target).abs() <= 4.0 * sd / 200f64.sqrt() + 1e-12, "{avg} vs {target}");
    }
}
