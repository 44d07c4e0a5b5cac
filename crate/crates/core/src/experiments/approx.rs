use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Scenario, ScenarioConfig};
use crate::density::{Component, Density};
use crate::error::{Error, Result};
use crate::moments::{generalized_log_moments, grid_power_moments};
use crate::quadrature::GridFunction;
use crate::solver::{self, Fit, Termination};

/// Local maxima below this fraction of the global peak are not counted as
/// modes.
pub const MODE_FLOOR: f64 = 0.01;

/// Target density and reference density of an example.
pub fn example_densities(scenario: Scenario) -> Result<(Density, Density)> {
    match scenario {
        Scenario::Example1 => Ok((
            Density::gaussian_mixture(vec![Component::new(0.5, 2.0, 1.0), Component::new(0.5, -2.0, 1.0)])?,
            Density::gaussian(0.0, 25.0)?,
        )),
        Scenario::Example2 => Ok((
            Density::gen_logistic_mixture(vec![Component::new(0.4, 2.0, 2.0), Component::new(0.6, -2.0, 3.0)])?,
            Density::gaussian(0.9, 5.86 * 5.86)?,
        )),
        // weights 0.3 / 0.7 on unit-mass Laplace components of scale 2
        Scenario::Example3 => Ok((
            Density::laplace_mixture(vec![Component::new(0.3, 1.0, 2.0), Component::new(0.7, -1.0, 2.0)])?,
            Density::gaussian(-0.4, 1.5 * 1.5)?,
        )),
        Scenario::Localization => Err(Error::Config("localization is not an approximation example".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub termination: Termination,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
    /// `(p_1..p_2n)`, `(q_0..q_2n)` in `x`, `P(0) = 1`
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub free_parameters: usize,
    pub sigma_residual: Vec<f64>,
    pub xi_residual: Vec<f64>,
    pub xi0: f64,
}

impl FitSummary {
    pub fn of(fit: &Fit) -> Self {
        Self {
            termination: fit.termination,
            iterations: fit.iterations,
            residual: fit.residual,
            objective: fit.objective,
            p: fit.surrogate.p(),
            q: fit.surrogate.q(),
            free_parameters: fit.surrogate.free_parameter_count(),
            sigma_residual: fit.sigma_residual.clone(),
            xi_residual: fit.xi_residual.clone(),
            xi0: fit.xi0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
    pub dpbm: Vec<f64>,
    pub dppm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub config: ScenarioConfig,
    pub theta: Density,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub dpbm: FitSummary,
    pub dppm: FitSummary,
    pub l1_dpbm: f64,
    pub l1_dppm: f64,
    pub modes_true: Vec<f64>,
    pub modes_dpbm: Vec<f64>,
    pub modes_dppm: Vec<f64>,
    pub table: DensityTable,
    /// wall-clock seconds per fit; kept out of the deterministic report
    #[serde(skip)]
    pub seconds: Vec<(String, f64)>,
}

/// Surrogates of both kinds for one example, with the full fits.
pub struct ApproxFits {
    pub truth: GridFunction,
    pub dpbm: Fit,
    pub dppm: Fit,
}

/// Fits DPBM (both moment families) and DPPM (power moments only) to an
/// example, both against the example's reference density.
pub fn run_approx_example(cfg: &ScenarioConfig) -> Result<(ApproxReport, ApproxFits)> {
    cfg.validate()?;
    let (rho, theta) = example_densities(cfg.scenario)?;
    let grid = cfg.grid.spec()?;
    let truth = rho.tabulate(grid)?;
    let sigma = grid_power_moments(&truth, cfg.order);
    let xi = generalized_log_moments(&truth, &theta, cfg.order)?;

    let t0 = Instant::now();
    let dpbm = solver::solve(&sigma, &xi, &theta, grid, &cfg.solver).or_else(Error::into_best_fit)?;
    let t1 = Instant::now();
    let dppm = solver::solve_power_only(&sigma, &theta, grid, &cfg.solver).or_else(Error::into_best_fit)?;
    let t2 = Instant::now();

    let tab = |f: &Fit| Density::Surrogate(Box::new(f.surrogate.clone())).tabulate(grid);
    let (bm, pm) = (tab(&dpbm)?, tab(&dppm)?);
    let report = ApproxReport {
        config: cfg.clone(),
        theta,
        l1_dpbm: bm.l1_distance(&truth),
        l1_dppm: pm.l1_distance(&truth),
        modes_true: truth.local_maxima(MODE_FLOOR),
        modes_dpbm: bm.local_maxima(MODE_FLOOR),
        modes_dppm: pm.local_maxima(MODE_FLOOR),
        dpbm: FitSummary::of(&dpbm),
        dppm: FitSummary::of(&dppm),
        sigma,
        xi,
        table: DensityTable { x: grid.nodes().collect(), truth: truth.values().to_vec(), dpbm: bm.into_values(), dppm: pm.into_values() },
        seconds: vec![("dpbm_fit".into(), (t1 - t0).as_secs_f64()), ("dppm_fit".into(), (t2 - t1).as_secs_f64())],
    };
    Ok((report, ApproxFits { truth, dpbm, dppm }))
}
