use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::approx::FitSummary;
use super::config::{FilterKind, ScenarioConfig};
use crate::baselines::{kalman_correct, kalman_predict, pf_correct, pf_step, KalmanState, ParticleEnsemble};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::filter::{self, correct, predict, FilterConfig, FilterState, Method, SystemModel};
use crate::moments::generalized_log_moments;
use crate::quadrature::GridFunction;

/// Simulated ground truth of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// mean of the initial prior handed to the filters
    pub m0: f64,
    pub truth: Vec<f64>,
    pub observations: Vec<f64>,
}

/// Estimates of one filter over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub filter: FilterKind,
    /// posterior mean per step; empty when the run failed
    pub estimates: Vec<f64>,
    pub failure: Option<String>,
    /// surrogate fits for the moment-based filters
    pub fits: Vec<FitSummary>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run: usize,
    pub trajectory: Trajectory,
    pub filters: Vec<FilterTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseColumn {
    pub filter: FilterKind,
    /// RMSE per step across the runs the filter completed
    pub rmse: Vec<f64>,
    pub completed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub config: ScenarioConfig,
    pub rmse: Vec<RmseColumn>,
    pub runs: Vec<RunTrace>,
}

impl LocalizationReport {
    pub fn final_rmse(&self, kind: FilterKind) -> Option<f64> {
        self.rmse.iter().find(|c| c.filter == kind).and_then(|c| c.rmse.last().copied())
    }

    /// Mean wall-clock seconds per step of each filter.
    pub fn seconds_per_step(&self) -> Vec<(String, f64)> {
        let steps = self.config.steps as f64;
        self.rmse
            .iter()
            .map(|c| {
                let total: f64 = self.runs.iter().flat_map(|r| r.filters.iter()).filter(|f| f.filter == c.filter).map(|f| f.seconds).sum();
                (c.filter.name().to_string(), total / (steps * self.runs.len() as f64))
            })
            .collect()
    }
}

/// `x_{t+1} = x_t + v + w`, `z_t = x_t - landmark + e` with Gumbel `e`.
pub fn localization_model(cfg: &ScenarioConfig) -> Result<SystemModel> {
    let p = &cfg.localization;
    SystemModel::stationary(
        1.0,
        1.0,
        p.velocity,
        -p.landmark,
        Density::gaussian(0.0, p.process_sd * p.process_sd)?,
        Density::gumbel(0.0, p.gumbel_scale)?,
    )
}

fn stream(seed: u64, run: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 * 4 + purpose);
    rng
}

pub fn simulate(cfg: &ScenarioConfig, model: &SystemModel, run: usize) -> Result<Trajectory> {
    let p = &cfg.localization;
    let mut rng = stream(cfg.seed, run, 0);
    let m0 = Normal::new(p.start, p.init_mean_var.sqrt()).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng);
    let mut x = p.start;
    let mut truth = Vec::with_capacity(cfg.steps);
    let mut observations = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let row = model.row(t);
        truth.push(x);
        observations.push(row.h * x + model.offset + model.eps.sample_one(&mut rng)?);
        x = row.f * x + row.drift + model.eta.sample_one(&mut rng)?;
    }
    Ok(Trajectory { m0, truth, observations })
}

fn filter_config(cfg: &ScenarioConfig, method: Method) -> Result<FilterConfig> {
    let mut fc = FilterConfig::new(method, cfg.order, cfg.grid.spec()?);
    fc.solver = cfg.solver.clone();
    fc.theta_scale = Some(match method {
        Method::Dpbm => cfg.localization.dpbm_theta_scale,
        Method::Dppm => cfg.localization.dppm_theta_scale,
    });
    Ok(fc)
}

fn run_moment_filter(cfg: &ScenarioConfig, model: &SystemModel, traj: &Trajectory, method: Method) -> Result<(Vec<f64>, Vec<FitSummary>)> {
    let fc = filter_config(cfg, method)?;
    let mut state = FilterState::initial(Density::gaussian(traj.m0, cfg.localization.init_var)?, &fc)?;
    let mut est = Vec::with_capacity(cfg.steps);
    let mut fits = Vec::with_capacity(cfg.steps);
    for (t, &y) in traj.observations.iter().enumerate() {
        let corr = correct(&state, y, model, fc.grid)?;
        est.push(corr.mean);
        if t + 1 < cfg.steps {
            let (next, fit) = predict(&state, &corr, model, &fc)?;
            fits.push(FitSummary::of(&fit));
            state = next;
        }
    }
    Ok((est, fits))
}

fn run_oracle(cfg: &ScenarioConfig, model: &SystemModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let grid = cfg.grid.spec()?;
    let mut prior = Density::gaussian(traj.m0, cfg.localization.init_var)?;
    let mut est = Vec::with_capacity(cfg.steps);
    for (t, &y) in traj.observations.iter().enumerate() {
        let row = model.row(t);
        let post = filter::measurement_update(&prior, y, row.h, model.offset, &model.eps, grid)?;
        est.push(post.moment(1));
        prior = Density::Grid(filter::time_update_oracle(&post, row.f, row.drift, &model.eta, grid)?);
    }
    Ok(est)
}

fn run_kalman(cfg: &ScenarioConfig, model: &SystemModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let p = &cfg.localization;
    let (q, r) = (p.process_sd * p.process_sd, p.kf_measurement_sd * p.kf_measurement_sd);
    let mut s = KalmanState::new(traj.m0, p.init_var)?;
    let mut est = Vec::with_capacity(cfg.steps);
    for (t, &y) in traj.observations.iter().enumerate() {
        let row = model.row(t);
        if t > 0 {
            let prev = model.row(t - 1);
            s = kalman_predict(s, prev.f, prev.drift, q);
        }
        s = kalman_correct(s, y, row.h, model.offset, r);
        est.push(s.mean);
    }
    Ok(est)
}

fn run_particles(cfg: &ScenarioConfig, model: &SystemModel, traj: &Trajectory, run: usize) -> Result<Vec<f64>> {
    let p = &cfg.localization;
    let mut rng = stream(cfg.seed, run, 1);
    let init = Density::uniform(p.pf_init.0, p.pf_init.1)?;
    let mut ens = ParticleEnsemble::sample(&init, cfg.particles, &mut rng)?;
    let mut est = Vec::with_capacity(cfg.steps);
    for (t, &y) in traj.observations.iter().enumerate() {
        let row = model.row(t);
        let m = if t == 0 {
            pf_correct(&mut ens, y, row.h, model.offset, &model.eps, p.resampling, &mut rng)?
        } else {
            let prev = model.row(t - 1);
            pf_step(&mut ens, y, prev.f, row.h, prev.drift, model.offset, &model.eta, &model.eps, p.resampling, &mut rng)?
        };
        est.push(m);
    }
    Ok(est)
}

fn selected(cfg: &ScenarioConfig) -> Vec<FilterKind> {
    let mut f = cfg.filters.clone();
    f.sort();
    f.dedup();
    f
}

pub fn run_one(cfg: &ScenarioConfig, model: &SystemModel, run: usize) -> Result<RunTrace> {
    let trajectory = simulate(cfg, model, run)?;
    let filters = selected(cfg)
        .into_iter()
        .map(|kind| {
            let start = Instant::now();
            let out = match kind {
                FilterKind::Kf => run_kalman(cfg, model, &trajectory).map(|e| (e, vec![])),
                FilterKind::Pf => run_particles(cfg, model, &trajectory, run).map(|e| (e, vec![])),
                FilterKind::Dpbm => run_moment_filter(cfg, model, &trajectory, Method::Dpbm),
                FilterKind::Dppm => run_moment_filter(cfg, model, &trajectory, Method::Dppm),
                FilterKind::Oracle => run_oracle(cfg, model, &trajectory).map(|e| (e, vec![])),
            };
            let seconds = start.elapsed().as_secs_f64();
            match out {
                Ok((estimates, fits)) => FilterTrace { filter: kind, estimates, failure: None, fits, seconds },
                Err(e) => {
                    FilterTrace { filter: kind, estimates: vec![], failure: Some(format!("{}: {e}", e.category())), fits: vec![], seconds }
                }
            }
        })
        .collect();
    Ok(RunTrace { run, trajectory, filters })
}

/// Monte-Carlo localization study. A filter that fails on a run is
/// recorded and left out of that filter's RMSE.
pub fn run_localization(cfg: &ScenarioConfig) -> Result<LocalizationReport> {
    cfg.validate()?;
    let model = localization_model(cfg)?;
    let runs: Vec<RunTrace> = (0..cfg.runs).into_par_iter().map(|r| run_one(cfg, &model, r)).collect::<Result<_>>()?;
    let rmse = selected(cfg)
        .into_iter()
        .map(|kind| {
            let done: Vec<(&RunTrace, &FilterTrace)> =
                runs.iter().filter_map(|r| r.filters.iter().find(|f| f.filter == kind && f.failure.is_none()).map(|f| (r, f))).collect();
            let rmse = (0..cfg.steps)
                .map(|t| {
                    let sq: f64 = done.iter().map(|(r, f)| (f.estimates[t] - r.trajectory.truth[t]).powi(2)).sum();
                    (sq / done.len() as f64).sqrt()
                })
                .collect();
            RmseColumn { filter: kind, rmse, completed_runs: done.len() }
        })
        .collect();
    Ok(LocalizationReport { config: cfg.clone(), rmse, runs })
}

/// Moments of the moment filter's priors next to those of the grid filter
/// on the same observations, per step: `(σ, ξ)` of the filter state and
/// `(σ, ξ)` of the grid prior, the latter with the state's θ.
pub struct MomentTrack {
    pub filter_sigma: Vec<f64>,
    pub filter_xi: Vec<f64>,
    pub oracle_sigma: Vec<f64>,
    pub oracle_xi: Vec<f64>,
}

pub fn moment_tracking(cfg: &ScenarioConfig, run: usize, steps: usize) -> Result<Vec<MomentTrack>> {
    let model = localization_model(cfg)?;
    let mut short = cfg.clone();
    short.steps = steps + 1;
    let traj = simulate(&short, &model, run)?;
    let fc = filter_config(cfg, Method::Dpbm)?;
    let init = Density::gaussian(traj.m0, cfg.localization.init_var)?;
    let oracle = filter::grid_filter_run(&model, &traj.observations[..steps], &init, fc.grid)?;
    let mut state = FilterState::initial(init, &fc)?;
    let mut out = Vec::with_capacity(steps);
    for (t, &y) in traj.observations[..steps].iter().enumerate() {
        let corr = correct(&state, y, &model, fc.grid)?;
        state = predict(&state, &corr, &model, &fc)?.0;
        let o: &GridFunction = &oracle[t + 1];
        out.push(MomentTrack {
            filter_sigma: state.moments.sigma.clone(),
            filter_xi: state.moments.xi.clone(),
            oracle_sigma: (1..=cfg.order).map(|k| o.moment(k as i32)).collect(),
            oracle_xi: generalized_log_moments(o, &state.theta, cfg.order)?,
        });
    }
    Ok(out)
}
