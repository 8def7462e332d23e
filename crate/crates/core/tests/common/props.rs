//! Randomised invariants. Each check runs `cases` proptest cases and
//! reports the first counterexample.

use nalgebra::DVector;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pinc::control::{condensed_qp, slmpc_solve, solve_box_qp, LinearModel, MpcConfig};
use pinc::dataset::{rng_stream, sample_dataset_with, DomainBox, PincScaler, SampleConfig, Scaler};
use pinc::integrator::step_60s;
use pinc::neural::{Architecture, Network};
use pinc::training::{lbfgs_minimize, mse_f, mse_y, total_loss, LbfgsConfig, LossWeights, PincBatch};
use pinc::well::{compute_algebraics, steady_state, ControlInput, Mode, WellParameters, WellState, BAR};

pub type Check = fn(u32) -> Result<(), String>;

/// Every invariant with its name and case count.
pub const ALL: &[(&str, Check, u32)] = &[
    ("loss is invariant to point order", loss_permutation, 32),
    ("loss weights combine linearly", loss_linearity, 32),
    ("clamping is idempotent", clamp_idempotence, 256),
    ("equilibria are fixed points of the step map", steady_fixed_points, 24),
    ("one-step program matches the hand solution", qp_hand_oracle, 256),
    ("scalers round-trip", scaler_round_trip, 256),
    ("seeded sampling is deterministic", deterministic_seeding, 16),
    ("controller plans respect move/hold wiring", mpc_wiring, 16),
    ("accepted L-BFGS losses never increase", lbfgs_monotone, 64),
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

pub fn loss_permutation(cases: u32) -> Result<(), String> {
    let (p, data) = super::small_dataset(10, 20, 4, 1);
    let net = Network::new(Architecture::Skip, 6, 5, 2, 3, 4).unwrap();
    let base = PincBatch::from_dataset(&data);
    let (my, mf) = (mse_y(&net, &base).unwrap(), mse_f(&net, &base, &p).unwrap());
    run(cases, any::<u64>(), |seed| {
        let mut shuffled = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.init_points.shuffle(&mut rng);
        shuffled.collocation.shuffle(&mut rng);
        let b = PincBatch::from_dataset(&shuffled);
        prop_assert!(close(mse_y(&net, &b).unwrap(), my, 1e-12));
        prop_assert!(close(mse_f(&net, &b, &p).unwrap(), mf, 1e-12));
        Ok(())
    })
}

pub fn loss_linearity(cases: u32) -> Result<(), String> {
    let (p, data) = super::small_dataset(10, 20, 4, 2);
    let batch = PincBatch::from_dataset(&data);
    run(cases, (0.0..10.0f64, 0.0..10.0f64, 0u64..1000), |(ly, lf, seed)| {
        let net = Network::new(Architecture::Dense, 6, 4, 2, 3, seed).unwrap();
        let v = total_loss(&net, &batch, &p, LossWeights { lambda_y: ly, lambda_f: lf }).unwrap();
        let expected = ly * mse_y(&net, &batch).unwrap() + lf * mse_f(&net, &batch, &p).unwrap();
        prop_assert!((v.total - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
        Ok(())
    })
}

pub fn clamp_idempotence(cases: u32) -> Result<(), String> {
    let domain = DomainBox::new([3000.0, 150.0, 6000.0], [4000.0, 450.0, 9000.0], 60.0).unwrap();
    let state = prop::array::uniform3(-1e4..2e4f64);
    run(cases, (state, -2.0..3.0f64, -2.0..3.0f64), |(a, u1, u2)| {
        let once = domain.clamp(&WellState::from_array(a));
        prop_assert!(domain.contains(&once));
        prop_assert_eq!(domain.clamp(&once), once);
        let u = ControlInput::new(u1, u2).clamped();
        prop_assert!(u.validate().is_ok());
        prop_assert_eq!(u.clamped(), u);
        Ok(())
    })
}

pub fn steady_fixed_points(cases: u32) -> Result<(), String> {
    let wells: Vec<WellParameters> = (1..=3).map(|i| WellParameters::well(i).unwrap()).collect();
    run(cases, (0usize..3, 0.2..1.0f64, 0.6..1.0f64), |(w, u1, u2)| {
        let p = &wells[w];
        let u = ControlInput::new(u1, u2);
        let x = steady_state(p, u).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let next = step_60s(p, &x, u).unwrap().to_array();
        let a = x.to_array();
        for i in 0..3 {
            prop_assert!((next[i] - a[i]).abs() <= 1e-6 * a[i].abs(), "well {} {:?} -> {:?}", w + 1, a, next);
        }
        Ok(())
    })
}

pub fn qp_hand_oracle(cases: u32) -> Result<(), String> {
    let coeffs = (-0.9..0.9f64, -2.0..2.0f64, -0.5..0.5f64, -3.0..3.0f64, -1.0..1.0f64);
    let problem = (0.0..1.0f64, 0.1..10.0f64, 0.01..10.0f64, 0.0..1.0f64, -2.0..2.0f64);
    run(cases, (coeffs, problem), |((a, b, delta, c, d), (ul, q, r, u_last, reference))| {
        let k = c * b + d;
        prop_assume!(k.abs() > 1e-3);
        let m = LinearModel {
            a: nalgebra::DMatrix::from_element(1, 1, a),
            b: nalgebra::DMatrix::from_element(1, 1, b),
            delta: DVector::from_element(1, delta),
            c: DVector::from_element(1, c),
            d: DVector::from_element(1, d),
            y0: 0.3,
            u_lin: DVector::from_element(1, ul),
        };
        let qp = condensed_qp(&m, 1, 1, &[q], &[r], &DVector::from_element(1, u_last), &[reference]).unwrap();
        let offset = 0.3 + c * delta - k * ul;
        let expected = (q * k * (reference - offset) + r * u_last) / (q * k * k + r);
        let wide = DVector::from_element(1, 1e9);
        let (w, _) = solve_box_qp(&qp.h, &qp.g, &(-&wide), &wide, None).unwrap();
        prop_assert!((w[0] - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{} vs {}", w[0], expected);
        Ok(())
    })
}

pub fn scaler_round_trip(cases: u32) -> Result<(), String> {
    let bounds = prop::collection::vec((-1e7..1e7f64, 1e-3..1e7f64), 1..6);
    run(cases, (bounds, prop::collection::vec(-2.0..2.0f64, 6)), |(b, t)| {
        let lo: Vec<f64> = b.iter().map(|(l, _)| *l).collect();
        let hi: Vec<f64> = b.iter().map(|(l, w)| l + w).collect();
        let s = Scaler::from_bounds(&lo, &hi).unwrap();
        let values: Vec<f64> = (0..lo.len()).map(|i| lo[i] + 0.5 * (t[i] + 1.0) * (hi[i] - lo[i])).collect();
        let back = s.unscale(&s.scale(&values).unwrap()).unwrap();
        for i in 0..values.len() {
            let span = hi[i] - lo[i];
            prop_assert!((back[i] - values[i]).abs() <= 1e-12 * (span + lo[i].abs()));
        }
        prop_assert!(s.scale(&lo).unwrap().iter().all(|v| (v + 1.0).abs() < 1e-9));
        prop_assert!(s.scale(&hi).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-9));
        if lo.len() >= 3 {
            let domain = DomainBox::new([lo[0], lo[1], lo[2]], [hi[0], hi[1], hi[2]], 60.0).unwrap();
            let ps = PincScaler::from_box(&domain);
            let x = WellState::new(values[0], values[1], values[2]);
            let y = ps.unscale_state(&ps.scale_state(&x)).to_array();
            for i in 0..3 {
                prop_assert!((y[i] - values[i]).abs() <= 1e-12 * (hi[i] - lo[i] + lo[i].abs()));
            }
        }
        Ok(())
    })
}

pub fn deterministic_seeding(cases: u32) -> Result<(), String> {
    use rand::Rng;
    let p = WellParameters::well(1).unwrap();
    let domain = DomainBox::new([3228.7, 182.6, 6203.0], [3851.0, 401.1, 8946.1], 60.0).unwrap();
    let cfg = SampleConfig { envelope: pinc::dataset::ControlEnvelope::operating(), ..SampleConfig::default() };
    run(cases, (0u64..1_000_000, 0u64..64), |(seed, stream)| {
        let a: Vec<u64> = (0..8).map({
            let mut r = rng_stream(seed, stream);
            move |_| r.gen()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = rng_stream(seed, stream);
            move |_| r.gen()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = rng_stream(seed, stream + 1);
            move |_| r.gen()
        }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
        let d1 = sample_dataset_with(&p, &domain, 3, 5, 2, seed, &cfg).unwrap();
        let d2 = sample_dataset_with(&p, &domain, 3, 5, 2, seed, &cfg).unwrap();
        prop_assert_eq!(d1, d2);
        Ok(())
    })
}

pub fn mpc_wiring(cases: u32) -> Result<(), String> {
    let p = WellParameters::well(1).unwrap();
    run(cases, (0.3..0.9f64, 0.65..0.95f64, -3.0..3.0f64, 1usize..8, 0usize..4), |(u1, u2, offset, n_u, extra)| {
        let u = ControlInput::new(u1, u2);
        let x = steady_state(&p, u).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let y = compute_algebraics(&p, &x, u, Mode::Exact).unwrap().p_bh / BAR;
        let cfg = MpcConfig::with_horizons(n_u + extra, n_u);
        let sol = slmpc_solve(&p, &x, u, &vec![y + offset; cfg.horizon], &cfg, None).unwrap();
        prop_assert_eq!(sol.u.len(), cfg.horizon);
        prop_assert_eq!(sol.du.len(), n_u);
        prop_assert_eq!(sol.states.len(), cfg.horizon + 1);
        prop_assert_eq!(sol.wiring_error(u), 0.0);
        Ok(())
    })
}

pub fn lbfgs_monotone(cases: u32) -> Result<(), String> {
    run(cases, (prop::array::uniform2(-2.0..2.0f64), 1.0..100.0f64), |(x0, b)| {
        let rosen = |x: &[f64]| -> pinc::error::Result<(f64, Vec<f64>)> {
            let f = (1.0 - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            let g = vec![-2.0 * (1.0 - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] * x[0]), 2.0 * b * (x[1] - x[0] * x[0])];
            Ok((f, g))
        };
        let cfg = LbfgsConfig { max_iters: 200, ..LbfgsConfig::default() };
        let out = lbfgs_minimize(rosen, &x0, &cfg, |_| true).unwrap();
        prop_assert!(out.accepted.windows(2).all(|w| w[1] <= w[0]));
        Ok(())
    })
}
