//! Scalar probability densities used by the filters and experiments.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::binomial;
use crate::quadrature::{GridFunction, GridSpec};
use crate::surrogate::RationalSurrogate;

/// Densities below this value are clamped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// One mixture component. `shape` is the variance for Gaussian mixtures,
/// the scale `b` for Laplace mixtures and the exponent `alpha` for type-I
/// generalized logistic mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub loc: f64,
    pub shape: f64,
}

impl Component {
    pub fn new(weight: f64, loc: f64, shape: f64) -> Self {
        Self { weight, loc, shape }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Density {
    Gaussian {
        mean: f64,
        var: f64,
    },
    GaussianMixture {
        components: Vec<Component>,
    },
    /// Components `(1 / 2b) exp(-|x - loc| / b)`.
    LaplaceMixture {
        components: Vec<Component>,
    },
    /// Components `alpha e^{-(x - loc)} / (1 + e^{-(x - loc)})^{alpha + 1}`.
    GenLogisticMixture {
        components: Vec<Component>,
    },
    /// `(1 / scale) exp(-z - e^{-z})`, `z = (x - loc) / scale`.
    Gumbel {
        loc: f64,
        scale: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Surrogate(Box<RationalSurrogate>),
    Grid(GridFunction),
}

fn check_components(components: &[Component], family: &str) -> Result<()> {
    if components.is_empty() {
        return Err(Error::InvalidDensity(format!("{family} mixture has no components")));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDensity(format!("{family} weights sum to {total}")));
    }
    for c in components {
        if !(c.weight >= 0.0 && c.shape > 0.0 && c.loc.is_finite() && c.shape.is_finite()) {
            return Err(Error::InvalidDensity(format!("{family} component {c:?}")));
        }
    }
    Ok(())
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

#[inline]
fn softplus(y: f64) -> f64 {
    // ln(1 + e^y)
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

fn gaussian_ln(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn laplace_ln(x: f64, loc: f64, b: f64) -> f64 {
    -(2.0 * b).ln() - (x - loc).abs() / b
}

fn genlogistic_ln(x: f64, loc: f64, alpha: f64) -> f64 {
    let y = x - loc;
    alpha.ln() - y - (alpha + 1.0) * softplus(-y)
}

fn gumbel_ln(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    -scale.ln() - z - (-z).exp()
}

/// Raw moments `E[Z^j]`, `j = 0..=k`, of the standard normal.
fn std_normal_moments(k: usize) -> Vec<f64> {
    let mut m = vec![0.0; k + 1];
    m[0] = 1.0;
    for j in (2..=k).step_by(2) {
        m[j] = m[j - 2] * (j - 1) as f64;
    }
    m
}

/// `E[(loc + scale * Z)^k]` given standardized raw moments of `Z`.
fn shifted_moment(loc: f64, scale: f64, std_moments: &[f64], k: usize) -> f64 {
    (0..=k).map(|j| binomial(k, j) * loc.powi((k - j) as i32) * scale.powi(j as i32) * std_moments[j]).sum()
}

fn riemann_zeta(n: usize) -> f64 {
    match n {
        2 => PI.powi(2) / 6.0,
        3 => 1.202_056_903_159_594_3,
        4 => PI.powi(4) / 90.0,
        5 => 1.036_927_755_143_37,
        6 => PI.powi(6) / 945.0,
        7 => 1.008_349_277_381_922_8,
        8 => PI.powi(8) / 9450.0,
        _ => unreachable!("zeta({n}) not tabulated"),
    }
}

impl Density {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidDensity(format!("N({mean}, {var})")));
        }
        Ok(Density::Gaussian { mean, var })
    }

    pub fn gaussian_mixture(components: Vec<Component>) -> Result<Self> {
        check_components(&components, "gaussian")?;
        Ok(Density::GaussianMixture { components })
    }

    pub fn laplace_mixture(components: Vec<Component>) -> Result<Self> {
        check_components(&components, "laplace")?;
        Ok(Density::LaplaceMixture { components })
    }

    pub fn gen_logistic_mixture(components: Vec<Component>) -> Result<Self> {
        check_components(&components, "generalized logistic")?;
        Ok(Density::GenLogisticMixture { components })
    }

    pub fn gumbel(loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && loc.is_finite()) {
            return Err(Error::InvalidDensity(format!("Gumbel({loc}, {scale})")));
        }
        Ok(Density::Gumbel { loc, scale })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidDensity(format!("U[{lo}, {hi}]")));
        }
        Ok(Density::Uniform { lo, hi })
    }

    /// Tabulated density; values must be nonnegative and are rescaled to
    /// unit quadrature mass.
    pub fn tabulated(mut f: GridFunction) -> Result<Self> {
        if f.values().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidDensity("negative tabulated value".into()));
        }
        if f.normalize() <= 0.0 {
            return Err(Error::InvalidDensity("tabulated density has zero mass".into()));
        }
        Ok(Density::Grid(f))
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Density::Gaussian { .. } => "gaussian",
            Density::GaussianMixture { .. } => "gaussian_mixture",
            Density::LaplaceMixture { .. } => "laplace_mixture",
            Density::GenLogisticMixture { .. } => "gen_logistic_mixture",
            Density::Gumbel { .. } => "gumbel",
            Density::Uniform { .. } => "uniform",
            Density::Surrogate(_) => "rational_surrogate",
            Density::Grid(_) => "grid",
        }
    }

    /// Pointwise density value.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Density::Surrogate(s) => s.eval(x)?,
            Density::Grid(f) => f.interpolate(x),
            Density::Uniform { lo, hi } => {
                if (*lo..=*hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Density::GaussianMixture { components } => components.iter().map(|c| c.weight * gaussian_ln(x, c.loc, c.shape).exp()).sum(),
            Density::LaplaceMixture { components } => components.iter().map(|c| c.weight * laplace_ln(x, c.loc, c.shape).exp()).sum(),
            Density::GenLogisticMixture { components } => {
                components.iter().map(|c| c.weight * genlogistic_ln(x, c.loc, c.shape).exp()).sum()
            }
            _ => self.analytic_ln(x).exp(),
        })
    }

    /// Natural log of [`Density::eval`], clamped at `ln(LOG_FLOOR)`.
    pub fn log_eval(&self, x: f64) -> Result<f64> {
        let floor = LOG_FLOOR.ln();
        Ok(match self {
            Density::Surrogate(_) | Density::Grid(_) | Density::Uniform { .. } => self.eval(x)?.max(LOG_FLOOR).ln(),
            _ => self.analytic_ln(x).max(floor),
        })
    }

    fn analytic_ln(&self, x: f64) -> f64 {
        match self {
            Density::Gaussian { mean, var } => gaussian_ln(x, *mean, *var),
            Density::Gumbel { loc, scale } => gumbel_ln(x, *loc, *scale),
            Density::GaussianMixture { components } => {
                log_sum_exp(components.iter().map(|c| c.weight.ln() + gaussian_ln(x, c.loc, c.shape)))
            }
            Density::LaplaceMixture { components } => log_sum_exp(components.iter().map(|c| c.weight.ln() + laplace_ln(x, c.loc, c.shape))),
            Density::GenLogisticMixture { components } => {
                log_sum_exp(components.iter().map(|c| c.weight.ln() + genlogistic_ln(x, c.loc, c.shape)))
            }
            _ => unreachable!("not an analytic family"),
        }
    }

    /// Density values on every node of `grid`.
    pub fn tabulate(&self, grid: GridSpec) -> Result<GridFunction> {
        let values = grid.nodes().map(|x| self.eval(x)).collect::<Result<Vec<_>>>()?;
        GridFunction::new(grid, values)
    }

    pub fn tabulate_log(&self, grid: GridSpec) -> Result<GridFunction> {
        let values = grid.nodes().map(|x| self.log_eval(x)).collect::<Result<Vec<_>>>()?;
        GridFunction::new(grid, values)
    }

    /// I.i.d. draws. Only analytic families can be sampled.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let open_unit = |rng: &mut R| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        Ok(match self {
            Density::Gaussian { mean, var } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + var.sqrt() * z
            }
            Density::Gumbel { loc, scale } => loc - scale * (-open_unit(rng).ln()).ln(),
            Density::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Density::GaussianMixture { components }
            | Density::LaplaceMixture { components }
            | Density::GenLogisticMixture { components } => {
                let c = pick_component(components, rng.random());
                match self {
                    Density::GaussianMixture { .. } => {
                        let z: f64 = rng.sample(StandardNormal);
                        c.loc + c.shape.sqrt() * z
                    }
                    Density::LaplaceMixture { .. } => {
                        let u = open_unit(rng) - 0.5;
                        c.loc - c.shape * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
                    }
                    _ => {
                        // F(x) = (1 + e^{-(x - loc)})^{-alpha}
                        let u = open_unit(rng);
                        c.loc - (u.powf(-1.0 / c.shape) - 1.0).ln()
                    }
                }
            }
            Density::Surrogate(_) | Density::Grid(_) => return Err(Error::Unsupported { variant: self.variant_name(), what: "sampling" }),
        })
    }

    /// Exact raw moment `E[X^k]`, `k <= 8`, where a closed form is known.
    pub fn closed_form_power_moment(&self, k: usize) -> Option<f64> {
        if k > 8 {
            return None;
        }
        match self {
            Density::Gaussian { mean, var } => Some(shifted_moment(*mean, var.sqrt(), &std_normal_moments(k), k)),
            Density::GaussianMixture { components } => {
                let z = std_normal_moments(k);
                Some(components.iter().map(|c| c.weight * shifted_moment(c.loc, c.shape.sqrt(), &z, k)).sum())
            }
            Density::LaplaceMixture { components } => {
                // standard Laplace: E[L^j] = j! for even j
                let mut l = vec![0.0; k + 1];
                let mut fact = 1.0;
                for j in 0..=k {
                    if j > 0 {
                        fact *= j as f64;
                    }
                    if j % 2 == 0 {
                        l[j] = fact;
                    }
                }
                Some(components.iter().map(|c| c.weight * shifted_moment(c.loc, c.shape, &l, k)).sum())
            }
            Density::Gumbel { loc, scale } => {
                // cumulants: k1 = loc + gamma*scale, kn = scale^n (n-1)! zeta(n)
                let mut kappa = vec![0.0; k + 1];
                let mut fact = 1.0;
                for n in 1..=k {
                    kappa[n] = if n == 1 {
                        loc + EULER_GAMMA * scale
                    } else {
                        fact *= (n - 1) as f64;
                        scale.powi(n as i32) * fact * riemann_zeta(n)
                    };
                }
                let mut m = vec![0.0; k + 1];
                m[0] = 1.0;
                for n in 1..=k {
                    m[n] = (1..=n).map(|j| binomial(n - 1, j - 1) * kappa[j] * m[n - j]).sum();
                }
                Some(m[k])
            }
            Density::Uniform { lo, hi } => {
                let kp = (k + 1) as f64;
                Some((hi.powf(kp) - lo.powf(kp)) / (kp * (hi - lo)))
            }
            _ => None,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        self.closed_form_power_moment(1)
    }

    pub fn variance(&self) -> Option<f64> {
        Some(self.closed_form_power_moment(2)? - self.mean()?.powi(2))
    }
}

fn pick_component(components: &[Component], u: f64) -> &Component {
    let mut acc = 0.0;
    for c in components {
        acc += c.weight;
        if u < acc {
            return c;
        }
    }
    components.last().expect("mixture is nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example1() -> Density {
        Density::gaussian_mixture(vec![Component::new(0.5, 2.0, 1.0), Component::new(0.5, -2.0, 1.0)]).unwrap()
    }

    #[test]
    fn standard_normal_at_zero() {
        let d = Density::gaussian(0.0, 1.0).unwrap();
        assert!((d.eval(0.0).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert!((d.log_eval(0.0).unwrap() + 0.918_938_533_2).abs() < 1e-9);
    }

    #[test]
    fn gumbel_at_zero() {
        let d = Density::gumbel(0.0, 0.25).unwrap();
        let e = (-1.0f64).exp();
        assert!((d.eval(0.0).unwrap() - 4.0 * e).abs() < 1e-12);
        assert!((d.log_eval(0.0).unwrap() - (4.0f64.ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn log_floor_applies_far_in_tails() {
        let d = Density::gaussian(0.0, 1.0).unwrap();
        assert_eq!(d.log_eval(100.0).unwrap(), LOG_FLOOR.ln());
        let g = Density::gumbel(0.0, 0.25).unwrap();
        assert_eq!(g.log_eval(-50.0).unwrap(), LOG_FLOOR.ln());
        assert_eq!(g.eval(-50.0).unwrap(), 0.0);
    }

    #[test]
    fn tabulated_at_node_with_unit_value() {
        let g = GridSpec::new(-0.5, 0.5, 3).unwrap();
        let f = GridFunction::new(g, vec![1.0, 1.0, 1.0]).unwrap();
        let d = Density::tabulated(f).unwrap();
        assert!(d.log_eval(0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Density::gaussian(0.0, 0.0).is_err());
        assert!(Density::gumbel(0.0, -1.0).is_err());
        assert!(Density::gaussian_mixture(vec![Component::new(0.7, 0.0, 1.0)]).is_err());
        assert!(Density::uniform(1.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_moments() {
        let m = example1();
        assert!((m.closed_form_power_moment(2).unwrap() - 5.0).abs() < 1e-12);
        assert!((m.closed_form_power_moment(4).unwrap() - 43.0).abs() < 1e-12);
        assert_eq!(m.closed_form_power_moment(3).unwrap(), 0.0);
        let g = Density::gaussian(0.0, 25.0).unwrap();
        assert!((g.closed_form_power_moment(4).unwrap() - 1875.0).abs() < 1e-9);
        let gm = Density::gumbel(0.0, 0.25).unwrap();
        assert!((gm.mean().unwrap() - EULER_GAMMA / 4.0).abs() < 1e-15);
        let sd = gm.variance().unwrap().sqrt();
        assert!((sd - PI / (4.0 * 6f64.sqrt())).abs() < 1e-12);
        assert!(Density::gen_logistic_mixture(vec![Component::new(1.0, 0.0, 2.0)]).unwrap().closed_form_power_moment(2).is_none());
    }

    #[test]
    fn closed_form_agrees_with_quadrature() {
        let grid = GridSpec::new(-100.0, 100.0, 20001).unwrap();
        let cases = vec![
            Density::gaussian(0.7, 2.5).unwrap(),
            example1(),
            Density::laplace_mixture(vec![Component::new(0.3, 1.0, 2.0), Component::new(0.7, -1.0, 2.0)]).unwrap(),
            Density::gumbel(0.0, 0.25).unwrap(),
        ];
        for d in cases {
            let f = d.tabulate(grid).unwrap();
            assert!((integrate(&f) - 1.0).abs() < 1e-5, "{}", d.variant_name());
            for k in 1..=6 {
                let exact = d.closed_form_power_moment(k).unwrap();
                let quad = f.moment(k as i32);
                assert!((exact - quad).abs() <= 1e-6 * exact.abs().max(1.0), "{} k={k}: {exact} vs {quad}", d.variant_name());
            }
        }
    }

    #[test]
    fn gaussian_sample_mean_clt() {
        let d = Density::gaussian(-7.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = d.sample(&mut rng, 50).unwrap();
        let mean = xs.iter().sum::<f64>() / 50.0;
        assert!((mean + 7.0).abs() <= 3.0 / 50f64.sqrt());
    }

    #[test]
    fn uniform_draws_stay_in_range() {
        let d = Density::uniform(-8.0, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = d.sample(&mut rng, 5000).unwrap();
        assert!(xs.iter().all(|x| (-8.0..=8.0).contains(x)));
    }

    #[test]
    fn gumbel_sample_mean() {
        let d = Density::gumbel(0.0, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = d.sample(&mut rng, 100_000).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.1443).abs() <= 0.005, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic_and_rejects_tabulated() {
        let d = example1();
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(9), 10).unwrap();
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(9), 10).unwrap();
        assert_eq!(a, b);
        let g = GridSpec::new(-1.0, 1.0, 3).unwrap();
        let t = Density::tabulated(GridFunction::new(g, vec![1.0, 2.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(t.sample(&mut ChaCha8Rng::seed_from_u64(1), 1), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn mixture_second_moment_from_many_samples() {
        let cases = [
            example1(),
            Density::laplace_mixture(vec![Component::new(0.3, 1.0, 2.0), Component::new(0.7, -1.0, 2.0)]).unwrap(),
            Density::gumbel(0.0, 0.25).unwrap(),
        ];
        for d in cases {
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            let n = 1_000_000;
            let xs = d.sample(&mut rng, n).unwrap();
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
            let se = ((m4 - m2 * m2) / n as f64).sqrt();
            let exact = d.closed_form_power_moment(2).unwrap();
            assert!((m2 - exact).abs() <= 5.0 * se, "{}: {m2} vs {exact}", d.variant_name());
        }
    }

    #[test]
    fn gen_logistic_samples_match_quadrature_mean() {
        let d = Density::gen_logistic_mixture(vec![Component::new(0.4, 2.0, 2.0), Component::new(0.6, -2.0, 3.0)]).unwrap();
        let grid = GridSpec::new(-60.0, 60.0, 12001).unwrap();
        let quad_mean = d.tabulate(grid).unwrap().moment(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = d.sample(&mut rng, 200_000).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - quad_mean).abs() < 0.02, "{mean} vs {quad_mean}");
    }

    #[test]
    fn log_eval_consistent_with_eval() {
        let ds = [
            example1(),
            Density::gumbel(0.0, 0.25).unwrap(),
            Density::gen_logistic_mixture(vec![Component::new(0.4, 2.0, 2.0), Component::new(0.6, -2.0, 3.0)]).unwrap(),
            Density::laplace_mixture(vec![Component::new(0.3, 1.0, 2.0), Component::new(0.7, -1.0, 2.0)]).unwrap(),
        ];
        for d in &ds {
            for i in 0..200 {
                let x = -10.0 + 0.1 * i as f64;
                let v = d.eval(x).unwrap();
                if v > LOG_FLOOR {
                    let back = d.log_eval(x).unwrap().exp();
                    assert!((back - v).abs() <= 1e-12 * v, "{} at {x}", d.variant_name());
                }
            }
        }
    }
}
