use plfilter_core::baselines::{kalman_correct, kalman_predict, KalmanState, ParticleEnsemble};
use plfilter_core::moments::{grid_power_moments, hankel_psd_check, propagate_power_moments, shifted_noise_moments};
use plfilter_core::solver;
use plfilter_core::{Density, GridSpec, RationalSurrogate};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> GridSpec {
    GridSpec::new(-8.0, 8.0, 801).unwrap()
}

// P = (1 + b x)^2 + c x^2 + d x^4, positive everywhere
fn numerator(b: f64, c: f64, d: f64) -> Vec<f64> {
    vec![2.0 * b, b * b + c, 0.0, d]
}

// Q = a (1 + e x)^2 + g x^2 + h x^4
fn denominator(a: f64, e: f64, g: f64, h: f64) -> Vec<f64> {
    vec![a, 2.0 * a * e, a * e * e + g, 0.0, h]
}

fn surrogate(p: &[f64], q: &[f64]) -> RationalSurrogate {
    RationalSurrogate::from_x_coeffs(p, q, Density::gaussian(0.0, 1.0).unwrap(), (-8.0, 8.0)).unwrap()
}

prop_compose! {
    fn coeffs()(b in -1.0..1.0f64, c in 0.01..1.0f64, d in 0.01..0.5f64,
                a in 0.2..2.0f64, e in -1.0..1.0f64, g in 0.01..1.0f64, h in 0.01..0.5f64)
        -> (Vec<f64>, Vec<f64>) {
        (numerator(b, c, d), denominator(a, e, g, h))
    }
}

const SIGMA: [f64; 4] = [0.1, 1.1, 0.2, 3.2];
const XI: [f64; 4] = [0.0, -1.5, 0.1, -6.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_is_convex_along_segments((p1, q1) in coeffs(), (p2, q2) in coeffs(), t in 0.05..0.95f64) {
        let g = grid();
        let j = |p: &[f64], q: &[f64]| solver::objective(&surrogate(p, q), &SIGMA, &XI, g).unwrap();
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect::<Vec<_>>();
        let mid = j(&mix(&p1, &p2), &mix(&q1, &q2));
        let chord = t * j(&p1, &q1) + (1.0 - t) * j(&p2, &q2);
        prop_assert!(mid <= chord + 1e-9 * chord.abs().max(1.0), "{mid} > {chord}");
    }

    #[test]
    fn rescaling_leaves_density_unchanged((p, q) in coeffs(), c in 0.1..10.0f64) {
        let s = surrogate(&p, &q);
        let r = s.rescaled(c);
        for x in grid().nodes() {
            let (a, b) = (s.eval(x).unwrap(), r.eval(x).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn surrogate_is_nonnegative((p, q) in coeffs()) {
        let s = surrogate(&p, &q);
        for x in grid().nodes() {
            prop_assert!(s.eval(x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn density_moments_pass_hankel_check(m in -2.0..2.0f64, v in 0.1..3.0f64, w in 0.1..0.9f64) {
        let d = Density::gaussian_mixture(vec![
            plfilter_core::Component::new(w, m, v),
            plfilter_core::Component::new(1.0 - w, -m, 0.5 * v),
        ]).unwrap();
        let mut tab = d.tabulate(GridSpec::new(-20.0, 20.0, 4001).unwrap()).unwrap();
        tab.normalize();
        prop_assert!(hankel_psd_check(&grid_power_moments(&tab, 4)));
    }

    #[test]
    fn shifted_noise_matches_gaussian_moments(c in -3.0..3.0f64, v in 0.1..2.0f64) {
        let eta = [1.0, 0.0, v, 0.0, 3.0 * v * v];
        let got = shifted_noise_moments(&eta, c);
        let want = Density::gaussian(c, v).unwrap();
        for (k, g) in got.iter().enumerate().skip(1) {
            let w = want.closed_form_power_moment(k).unwrap();
            prop_assert!((g - w).abs() <= 1e-10 * w.abs().max(1.0));
        }
    }

    #[test]
    fn propagation_with_point_noise_scales_moments(f in -2.0..2.0f64, m in -1.0..1.0f64) {
        let post = [1.0, m, m * m + 1.0, m.powi(3) + 3.0 * m, m.powi(4) + 6.0 * m * m + 3.0];
        let delta = [1.0, 0.0, 0.0, 0.0, 0.0];
        let out = propagate_power_moments(&post, f, &delta, 4).unwrap();
        for k in 1..=4 {
            prop_assert!((out[k - 1] - f.powi(k as i32) * post[k]).abs() <= 1e-12 * post[k].abs().max(1.0));
        }
    }

    #[test]
    fn kalman_correction_never_increases_variance(m in -5.0..5.0f64, p in 0.01..10.0f64, y in -5.0..5.0f64, r in 0.01..5.0f64) {
        let s = kalman_predict(KalmanState::new(m, p).unwrap(), 0.9, 0.5, 0.3);
        let c = kalman_correct(s, y, 1.0, 0.0, r);
        prop_assert!(c.variance > 0.0 && c.variance <= s.variance);
    }

    #[test]
    fn particle_weights_stay_normalized(seed in any::<u64>(), y in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ens = ParticleEnsemble::sample(&Density::gaussian(0.0, 1.0).unwrap(), 200, &mut rng).unwrap();
        ens.reweight(y, 1.0, 0.0, &Density::gaussian(0.0, 0.5).unwrap()).unwrap();
        prop_assert!((ens.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        ens.resample(&mut rng);
        prop_assert_eq!(ens.len(), 200);
        prop_assert!(ens.weights.iter().all(|&w| (w - 1.0 / 200.0).abs() < 1e-15));
    }
}

#[test]
fn fit_reproduces_its_own_moments() {
    // moments generated by a surrogate are matched by the fit
    let g = GridSpec::examples_default();
    let theta = Density::gaussian(0.0, 1.0).unwrap();
    let support = solver::theta_window(&theta, g, 50.0).unwrap();
    let (p, q) = (numerator(0.3, 0.2, 0.05), denominator(1.0, -0.2, 0.3, 0.1));
    let s = RationalSurrogate::from_x_coeffs(&p, &q, theta.clone(), support).unwrap();
    let (mass, _) = solver::mass_and_xi0(&s, g).unwrap();
    let q: Vec<f64> = q.iter().map(|c| c * mass).collect();
    let s = RationalSurrogate::from_x_coeffs(&p, &q, theta.clone(), support).unwrap();
    let (sigma, xi) = solver::moment_map(&s, g).unwrap();
    let fit = solver::solve(&sigma, &xi, &theta, g, &Default::default()).unwrap();
    let sup = g.nodes().map(|x| (fit.surrogate.eval(x).unwrap() - s.eval(x).unwrap()).abs()).fold(0.0, f64::max);
    assert!(sup < 1e-4, "sup {sup}");
}
