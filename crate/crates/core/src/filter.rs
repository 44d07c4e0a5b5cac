//! Moment-based Bayesian filter for scalar linear systems
//! `x_{t+1} = f_t x_t + d_t + η_t`, `y_t = h_t x_t + c + ε_t`,
//! plus a fine-grid reference filter that skips the surrogate fit.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::moments::{generalized_log_moments, noise_moments, propagate_power_moments, shifted_noise_moments, MomentVector};
use crate::quadrature::{convolve_kernel, GridFunction, GridSpec};
use crate::solver::{self, Fit, SolverOptions, Termination};

/// Normalizers at or below this are treated as a vanished likelihood.
const MIN_NORMALIZER: f64 = 1e-300;

/// Scalar linear system with additive noise. Per-step coefficient vectors
/// shorter than the horizon repeat their last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    /// known additive input to the state
    pub drift: Vec<f64>,
    /// constant observation offset `c` (minus the landmark position for
    /// range-style measurements)
    pub offset: f64,
    pub eta: Density,
    pub eps: Density,
}

/// Coefficients of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub f: f64,
    pub h: f64,
    pub drift: f64,
}

impl SystemModel {
    pub fn stationary(f: f64, h: f64, drift: f64, offset: f64, eta: Density, eps: Density) -> Result<Self> {
        let m = Self { f: vec![f], h: vec![h], drift: vec![drift], offset, eta, eps };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.is_empty() || self.h.is_empty() || self.drift.is_empty() {
            return Err(Error::Model("f, h and drift need at least one entry".into()));
        }
        let all = self.f.iter().chain(&self.h).chain(&self.drift).chain(std::iter::once(&self.offset));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Model("model coefficients must be finite".into()));
        }
        if self.f.contains(&0.0) {
            return Err(Error::Model("state transition f must be nonzero".into()));
        }
        Ok(())
    }

    pub fn row(&self, t: usize) -> Row {
        let at = |v: &[f64]| v[t.min(v.len() - 1)];
        Row { f: at(&self.f), h: at(&self.h), drift: at(&self.drift) }
    }
}

/// `posterior(x) ∝ ρ_ε(y - h x - offset) prior(x)`, normalized on `grid`.
pub fn measurement_update(prior: &Density, y: f64, h: f64, offset: f64, eps: &Density, grid: GridSpec) -> Result<GridFunction> {
    let prior = prior.tabulate(grid)?;
    let mut post = prior.map(|x, v| if v == 0.0 { 0.0 } else { v * eps.eval(y - h * x - offset).unwrap_or(f64::NAN) });
    if post.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("{} likelihood cannot be evaluated", eps.variant_name())));
    }
    let z = post.normalize();
    if !(z > MIN_NORMALIZER) || !z.is_finite() {
        return Err(Error::DegenerateLikelihood(z));
    }
    Ok(post)
}

/// Exact prediction on the grid:
/// `prior(x) = ∫ post(e) ρ_η(x - drift - f e) de`, normalized.
pub fn time_update_oracle(post: &GridFunction, f: f64, drift: f64, eta: &Density, grid: GridSpec) -> Result<GridFunction> {
    if f == 0.0 || !f.is_finite() {
        return Err(Error::Model(format!("time update needs a nonzero finite f, got {f}")));
    }
    let mut out = convolve_kernel(post, |x, e| eta.eval(x - drift - f * e).unwrap_or(f64::NAN), grid);
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("{} noise density cannot be evaluated", eta.variant_name())));
    }
    let z = out.normalize();
    if !(z > MIN_NORMALIZER) {
        return Err(Error::DegenerateLikelihood(z));
    }
    Ok(out)
}

/// Which moment families the surrogate is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// power and generalized logarithmic moments
    Dpbm,
    /// power moments only
    Dppm,
}

impl Method {
    /// Default variance multiplier for the reference density.
    pub fn default_theta_scale(self) -> f64 {
        match self {
            Method::Dpbm => 1.0,
            Method::Dppm => 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub method: Method,
    /// moment order `2n`
    pub order: usize,
    pub grid: GridSpec,
    pub solver: SolverOptions,
    /// θ = N(σ_1, scale (σ_2 - σ_1²)); `None` picks the method default.
    pub theta_scale: Option<f64>,
}

impl FilterConfig {
    pub fn new(method: Method, order: usize, grid: GridSpec) -> Self {
        Self { method, order, grid, solver: SolverOptions::default(), theta_scale: None }
    }

    fn theta_scale(&self) -> f64 {
        self.theta_scale.unwrap_or_else(|| self.method.default_theta_scale())
    }

    /// Gaussian reference matched to the first two moments.
    pub fn theta_for(&self, sigma: &[f64]) -> Result<Density> {
        let var = sigma[1] - sigma[0] * sigma[0];
        if !(var > 0.0) {
            return Err(Error::Infeasible { index: 2, minor: var });
        }
        Density::gaussian(sigma[0], self.theta_scale() * var)
    }
}

/// Prior at step `t` with the moments it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: usize,
    pub prior: Density,
    pub moments: MomentVector,
    pub theta: Density,
}

impl FilterState {
    /// Starting state from an analytic density.
    pub fn initial(prior: Density, cfg: &FilterConfig) -> Result<Self> {
        let mut tab = prior.tabulate(cfg.grid)?;
        tab.normalize();
        let sigma: Vec<f64> = (1..=cfg.order).map(|k| tab.moment(k as i32)).collect();
        let theta = cfg.theta_for(&sigma)?;
        let xi = generalized_log_moments(&tab, &theta, cfg.order)?;
        Ok(Self { t: 0, prior, moments: MomentVector::new(sigma, xi, theta.clone())?, theta })
    }
}

/// What one filter step produced besides the new state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub posterior_mean: f64,
    pub posterior_var: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub residual: f64,
    /// `(p_1..p_2n)` and `(q_0..q_2n)` in `x`
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Posterior of one step before prediction.
#[derive(Debug, Clone)]
pub struct Correction {
    pub posterior: GridFunction,
    pub mean: f64,
    pub var: f64,
}

pub fn correct(state: &FilterState, y: f64, model: &SystemModel, grid: GridSpec) -> Result<Correction> {
    let row = model.row(state.t);
    let posterior = measurement_update(&state.prior, y, row.h, model.offset, &model.eps, grid)?;
    let mean = posterior.moment(1);
    let var = posterior.moment(2) - mean * mean;
    Ok(Correction { posterior, mean, var })
}

/// Prediction through moment propagation and a surrogate fit.
pub fn predict(state: &FilterState, corr: &Correction, model: &SystemModel, cfg: &FilterConfig) -> Result<(FilterState, Fit)> {
    let row = model.row(state.t);
    let order = cfg.order;
    let post_m: Vec<f64> = (0..=order).map(|k| corr.posterior.moment(k as i32)).collect();
    let eta_m = shifted_noise_moments(&noise_moments(&model.eta, order, cfg.grid)?, row.drift);
    let sigma = propagate_power_moments(&post_m, row.f, &eta_m, order)?;
    let theta = cfg.theta_for(&sigma)?;
    let fit = match cfg.method {
        Method::Dpbm => {
            // log moments need the predicted density itself
            let prior_grid = time_update_oracle(&corr.posterior, row.f, row.drift, &model.eta, cfg.grid)?;
            let xi = generalized_log_moments(&prior_grid, &theta, order)?;
            let fit = accept_best(solver::solve(&sigma, &xi, &theta, cfg.grid, &cfg.solver))?;
            let moments = MomentVector::new(sigma, xi, theta.clone())?;
            return Ok((next_state(state, &fit, moments, theta), fit));
        }
        Method::Dppm => accept_best(solver::solve_power_only(&sigma, &theta, cfg.grid, &cfg.solver))?,
    };
    let moments = MomentVector::new(sigma.clone(), vec![0.0; order], theta.clone())?;
    Ok((next_state(state, &fit, moments, theta), fit))
}

fn next_state(state: &FilterState, fit: &Fit, moments: MomentVector, theta: Density) -> FilterState {
    FilterState { t: state.t + 1, prior: Density::Surrogate(Box::new(fit.surrogate.clone())), moments, theta }
}

/// Unattainable targets still leave the best surrogate on the positivity
/// boundary; only hard failures propagate.
fn accept_best(r: Result<Fit>) -> Result<Fit> {
    r.or_else(Error::into_best_fit)
}

/// Measurement update with `y`, then prediction to the next step.
pub fn filter_step(state: &FilterState, y: f64, model: &SystemModel, cfg: &FilterConfig) -> Result<(FilterState, StepReport)> {
    let corr = correct(state, y, model, cfg.grid)?;
    let (next, fit) = predict(state, &corr, model, cfg)?;
    let s = &fit.surrogate;
    let report = StepReport {
        posterior_mean: corr.mean,
        posterior_var: corr.var,
        termination: fit.termination,
        iterations: fit.iterations,
        residual: fit.residual,
        p: s.p(),
        q: s.q(),
    };
    Ok((next, report))
}

/// Reference filter on the grid: the prior before each observation, with
/// `observations.len() + 1` entries.
pub fn grid_filter_run(model: &SystemModel, observations: &[f64], init: &Density, grid: GridSpec) -> Result<Vec<GridFunction>> {
    model.validate()?;
    let mut prior = init.tabulate(grid)?;
    if !(prior.normalize() > MIN_NORMALIZER) {
        return Err(Error::InvalidDensity("initial density vanishes on the grid".into()));
    }
    let mut out = vec![prior.clone()];
    for (t, &y) in observations.iter().enumerate() {
        let row = model.row(t);
        let post = measurement_update(&Density::Grid(prior), y, row.h, model.offset, &model.eps, grid)?;
        prior = time_update_oracle(&post, row.f, row.drift, &model.eta, grid)?;
        out.push(prior.clone());
    }
    Ok(out)
}

/// Mean and variance of a tabulated density.
pub fn grid_mean_var(f: &GridFunction) -> (f64, f64) {
    let m = f.moment(1);
    (m, f.moment(2) - m * m)
}
