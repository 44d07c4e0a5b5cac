//! Fast property checks behind the `selftest` command.

use serde::Serialize;

use crate::baselines::{kalman_step, riccati_fixed_point, KalmanState};
use crate::density::Density;
use crate::error::Result;
use crate::moments::{generalized_log_moments, grid_power_moments, hankel_psd_check, noise_moments, propagate_power_moments};
use crate::quadrature::{convolve_on_grid, GridSpec};
use crate::solver::{self, theta_window, SolverOptions};
use crate::surrogate::RationalSurrogate;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

fn gradient_fd() -> Result<(bool, String)> {
    let theta = Density::gaussian(0.0, 1.0)?;
    let grid = GridSpec::examples_default();
    let support = theta_window(&theta, grid, 50.0)?;
    let s = RationalSurrogate::from_x_coeffs(&[0.2, 0.3, -0.05, 0.04], &[1.1, -0.1, 0.2, 0.02, 0.03], theta.clone(), support)?;
    let (sig, xi) = ([0.1, 1.2, 0.3, 3.5], [0.05, -2.0, 0.1, -8.0]);
    let (gp, gq) = solver::gradient(&s, &sig, &xi, grid)?;
    let (p, q) = (s.p(), s.q());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..9 {
        let (mut pp, mut qp, mut pm, mut qm) = (p.clone(), q.clone(), p.clone(), q.clone());
        if c < 4 {
            pp[c] += h;
            pm[c] -= h;
        } else {
            qp[c - 4] += h;
            qm[c - 4] -= h;
        }
        let j = |p: &[f64], q: &[f64]| -> Result<f64> {
            solver::objective(&RationalSurrogate::from_x_coeffs(p, q, theta.clone(), support)?, &sig, &xi, grid)
        };
        let fd = (j(&pp, &qp)? - j(&pm, &qm)?) / (2.0 * h);
        let an = if c < 4 { gp[c] } else { gq[c - 4] };
        worst = worst.max((fd - an).abs() / an.abs().max(1.0));
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:.2e}")))
}

fn trivial_fit() -> Result<(bool, String)> {
    let theta = Density::gaussian(0.0, 1.0)?;
    let grid = GridSpec::examples_default();
    let tab = theta.tabulate(grid)?;
    let fit =
        solver::solve(&grid_power_moments(&tab, 4), &generalized_log_moments(&tab, &theta, 4)?, &theta, grid, &SolverOptions::default())?;
    let err = grid.nodes().map(|x| Ok((fit.surrogate.eval(x)? - theta.eval(x)?).abs())).collect::<Result<Vec<f64>>>()?;
    let sup = err.into_iter().fold(0.0, f64::max);
    Ok((sup <= 1e-6, format!("sup error {sup:.2e} after {} iterations", fit.iterations)))
}

fn hankel() -> Result<(bool, String)> {
    let ok = hankel_psd_check(&[0.0, 1.0, 0.0, 3.0]) && hankel_psd_check(&[0.0, 5.0, 0.0, 43.0]) && !hankel_psd_check(&[0.0; 4]);
    Ok((ok, "N(0,1), example 1 accepted; point mass rejected".into()))
}

fn riccati() -> Result<(bool, String)> {
    let (f, h, q, r) = (0.9, 1.0, 0.3, 0.5);
    let mut s = KalmanState::new(0.0, 10.0)?;
    for _ in 0..100 {
        s = kalman_step(s, 0.0, f, h, 0.0, 0.0, q, r);
    }
    let d = (s.variance - riccati_fixed_point(f, h, q, r)).abs();
    Ok((d <= 1e-10, format!("|P_100 - P*| = {d:.2e}")))
}

fn propagation() -> Result<(bool, String)> {
    let grid = GridSpec::new(-15.0, 15.0, 3001)?;
    let post = Density::gumbel(0.3, 0.5)?.tabulate(grid)?;
    let eta = Density::gaussian(1.0, 0.2)?;
    let pm: Vec<f64> = (0..=4).map(|k| post.moment(k)).collect();
    let prop = propagate_power_moments(&pm, 1.0, &noise_moments(&eta, 4, grid)?, 4)?;
    let conv = convolve_on_grid(&post, |x| eta.eval(x).unwrap_or(0.0), grid);
    let worst = (1..=4)
        .map(|k| {
            let q = conv.moment(k as i32);
            (prop[k - 1] - q).abs() / q.abs().max(1.0)
        })
        .fold(0.0, f64::max);
    Ok((worst <= 1e-4, format!("max relative difference {worst:.2e}")))
}

fn parameter_count() -> Result<(bool, String)> {
    let s = RationalSurrogate::identity(Density::gaussian(0.0, 1.0)?, 4, (-10.0, 10.0))?;
    let n = s.free_parameter_count();
    Ok((n == 9, format!("{n} free parameters at order 4")))
}

pub fn run() -> Vec<Check> {
    vec![
        check("gradient_matches_finite_differences", gradient_fd()),
        check("trivial_fit_returns_reference", trivial_fit()),
        check("hankel_feasibility", hankel()),
        check("kalman_reaches_riccati_fixed_point", riccati()),
        check("moment_propagation_matches_convolution", propagation()),
        check("nine_parameters_at_order_four", parameter_count()),
    ]
}
