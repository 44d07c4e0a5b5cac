//! Shared fixtures for the criterion benches.

use plfilter_core::experiments::approx::example_densities;
use plfilter_core::experiments::localize::{localization_model, simulate};
use plfilter_core::experiments::{Scenario, ScenarioConfig};
use plfilter_core::filter::{FilterConfig, FilterState, Method, SystemModel};
use plfilter_core::moments::{generalized_log_moments, grid_power_moments};
use plfilter_core::{Density, GridFunction, GridSpec};

/// Target moments of one of the approximation examples.
pub struct MomentProblem {
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
    pub theta: Density,
    pub grid: GridSpec,
}

pub fn example_problem(scenario: Scenario) -> MomentProblem {
    let cfg = ScenarioConfig::default_for(scenario);
    let grid = cfg.grid.spec().unwrap();
    let (rho, theta) = example_densities(scenario).unwrap();
    let tab = rho.tabulate(grid).unwrap();
    MomentProblem { sigma: grid_power_moments(&tab, cfg.order), xi: generalized_log_moments(&tab, &theta, cfg.order).unwrap(), theta, grid }
}

/// Initial DPBM state of the first localization run plus its first observation.
pub struct StepFixture {
    pub model: SystemModel,
    pub config: FilterConfig,
    pub state: FilterState,
    pub y: f64,
}

pub fn localization_step() -> StepFixture {
    let cfg = ScenarioConfig::default_for(Scenario::Localization);
    let model = localization_model(&cfg).unwrap();
    let traj = simulate(&cfg, &model, 0).unwrap();
    let mut config = FilterConfig::new(Method::Dpbm, cfg.order, cfg.grid.spec().unwrap());
    config.solver = cfg.solver.clone();
    config.theta_scale = Some(cfg.localization.dpbm_theta_scale);
    let state = FilterState::initial(Density::gaussian(traj.m0, cfg.localization.init_var).unwrap(), &config).unwrap();
    StepFixture { model, config, state, y: traj.observations[0] }
}

/// A skewed tabulated density for convolution timings.
pub fn skewed_density(grid: GridSpec) -> GridFunction {
    Density::gumbel(0.3, 0.5).unwrap().tabulate(grid).unwrap()
}
