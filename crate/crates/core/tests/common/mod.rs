//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod props;

use nalgebra::DMatrix;
use pinc::dataset::{explore_domain_with, sample_dataset_with, ControlEnvelope, ExploreConfig, PincDataset, SampleConfig};
use pinc::neural::{Architecture, Network};
use pinc::training::{loss_and_gradient, total_loss, LossWeights, PincBatch};
use pinc::well::WellParameters;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small well-1 dataset on the operating envelope.
pub fn small_dataset(n_t: usize, n_f: usize, n_val: usize, seed: u64) -> (WellParameters, PincDataset) {
    let p = WellParameters::well(1).unwrap();
    let envelope = ControlEnvelope::operating();
    let domain =
        explore_domain_with(&p, 3, seed, &ExploreConfig { envelope, segments: 10, ..Default::default() }).unwrap();
    let data =
        sample_dataset_with(&p, &domain, n_t, n_f, n_val, seed, &SampleConfig { envelope, ..Default::default() })
            .unwrap();
    (p, data)
}

/// Worst relative mismatch between the analytic loss gradient and central
/// differences over `coords` random parameters (all when `None`), at a
/// network drawn from `seed`.
pub fn loss_gradient_error(
    arch: Architecture,
    layers: usize,
    neurons: usize,
    seed: u64,
    coords: Option<usize>,
) -> f64 {
    let (p, data) = small_dataset(12, 24, 4, 0);
    let batch = PincBatch::from_dataset(&data);
    let weights = LossWeights { lambda_y: 1.0, lambda_f: 0.5 };
    let mut net = Network::new(arch, 6, neurons, layers, 3, seed).unwrap();
    // Move away from the initialisation so biases are nonzero.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for w in net.params.iter_mut() {
        *w += 0.1 * rng.gen_range(-1.0..1.0);
    }
    let (_, grad) = loss_and_gradient(&net, &batch, &p, weights).unwrap();
    let n = net.n_params();
    let picks: Vec<usize> = match coords {
        Some(k) => (0..k).map(|_| rng.gen_range(0..n)).collect(),
        None => (0..n).collect(),
    };
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for i in picks {
        let h = 1e-6 * net.params[i].abs().max(1.0);
        let base = net.params[i];
        net.params[i] = base + h;
        let up = total_loss(&net, &batch, &p, weights).unwrap().total;
        net.params[i] = base - h;
        let down = total_loss(&net, &batch, &p, weights).unwrap().total;
        net.params[i] = base;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4 * scale);
        worst = worst.max(err);
    }
    worst
}

/// Worst relative mismatch between the forward-mode time derivative and
/// central differences in the time input.
pub fn time_tangent_error(arch: Architecture, layers: usize, neurons: usize, seed: u64) -> f64 {
    let net = Network::new(arch, 6, neurons, layers, 3, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(6, 16, |i, _| if i == 0 { rng.gen_range(0.0..1.0) } else { rng.gen_range(-1.0..1.0) });
    let (_, yt) = net.forward_with_time_tangent(&x).unwrap();
    let h = 1e-5;
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp.row_mut(0).add_scalar_mut(h);
    xm.row_mut(0).add_scalar_mut(-h);
    let fd = (net.forward(&xp).unwrap() - net.forward(&xm).unwrap()) / (2.0 * h);
    (0..yt.len()).map(|i| (fd[i] - yt[i]).abs() / yt[i].abs().max(1e-3)).fold(0.0, f64::max)
}

fn load_json(name: &str) -> serde_json::Value {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn triple(v: &serde_json::Value) -> [f64; 3] {
    let a = v.as_array().unwrap();
    [a[0].as_f64().unwrap(), a[1].as_f64().unwrap(), a[2].as_f64().unwrap()]
}

/// Compares every algebraic variable and the right-hand side against the
/// frozen transcription values. Returns the number of points and the worst
/// relative error, or the first mismatch beyond `tol`.
pub fn oracle_agreement(tol: f64) -> Result<(usize, f64), String> {
    use pinc::well::{compute_algebraics, ControlInput, Mode, WellState};
    let data = load_json("well_oracle_points.json");
    let wells: Vec<WellParameters> = (1..=3).map(|i| WellParameters::well(i).unwrap()).collect();
    let points = data["points"].as_array().unwrap();
    let mut worst: f64 = 0.0;
    for pt in points {
        let p = &wells[pt["well"].as_u64().unwrap() as usize - 1];
        let x = WellState::from_array(triple(&pt["x"]));
        let u = pt["u"].as_array().unwrap();
        let u = ControlInput::new(u[0].as_f64().unwrap(), u[1].as_f64().unwrap());
        let rec = compute_algebraics(p, &x, u, Mode::Exact).map_err(|e| e.to_string())?;
        let expected = &pt["record"];
        for (name, got) in rec.fields() {
            let want = expected[name].as_f64().ok_or_else(|| format!("missing {name}"))?;
            if want == 0.0 && got == 0.0 {
                continue;
            }
            let rel = (got - want).abs() / want.abs().max(1e-300);
            worst = worst.max(rel);
            if rel > tol {
                return Err(format!("{name}: {got} vs {want} at {x:?} {u:?}"));
            }
        }
        let flow_scale = ["w_G_in", "w_G_inj", "w_L_res", "w_out"]
            .iter()
            .map(|k| expected[*k].as_f64().unwrap().abs())
            .fold(1e-12, f64::max);
        for (got, key) in rec.rhs().iter().zip(["dm_G_an", "dm_G_tb", "dm_L_tb"]) {
            let want = expected[key].as_f64().unwrap();
            let rel = (got - want).abs() / flow_scale;
            worst = worst.max(rel);
            if rel > tol {
                return Err(format!("{key}: {got} vs {want}"));
            }
        }
    }
    Ok((points.len(), worst))
}

/// Observed order `log2(|x_h - x_h/2| / |x_h/2 - x_h/4|)` of three 600 s
/// well-1 step responses integrated with h = 10, 5 and 2.5 s.
pub fn rk4_orders() -> Vec<f64> {
    use pinc::integrator::step_with;
    use pinc::well::{steady_state, ControlInput};
    let p = WellParameters::well(1).unwrap();
    let cases = [([0.5, 0.6], [0.7, 0.8]), ([0.3, 0.9], [0.9, 0.7]), ([0.8, 0.8], [0.3, 0.65])];
    cases
        .iter()
        .map(|(from, to)| {
            let x0 = steady_state(&p, ControlInput::from_array(*from)).unwrap();
            let u = ControlInput::from_array(*to);
            let ends: Vec<[f64; 3]> =
                [10.0, 5.0, 2.5].iter().map(|&h| step_with(&p, &x0, u, 600.0, h).unwrap().to_array()).collect();
            let gap = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|k| ((a[k] - b[k]) / b[k]).powi(2)).sum::<f64>().sqrt();
            (gap(&ends[0], &ends[1]) / gap(&ends[1], &ends[2])).log2()
        })
        .collect()
}

/// `Q diag(lambda) Q^T` with eigenvalues evenly spread over `[1, cond]`
/// and a Householder `Q`.
fn spd_matrix(n: usize, cond: f64) -> Vec<Vec<f64>> {
    let v: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).sin() + 0.5).collect();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let q = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv;
    let lambda: Vec<f64> = (0..n).map(|i| 1.0 + (cond - 1.0) * i as f64 / (n - 1) as f64).collect();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| q(i, k) * lambda[k] * q(j, k)).sum()).collect()).collect()
}

/// Quadratic, Rosenbrock and first Adam step checks; a description of the
/// outcome either way.
pub fn optimizer_checks() -> Result<String, String> {
    use pinc::training::{lbfgs_minimize, Adam, AdamConfig, LbfgsConfig};
    let n = 10;
    let a = spd_matrix(n, 10.0);
    let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
    let quad = |x: &[f64]| {
        let e: Vec<f64> = x.iter().zip(&b).map(|(p, q)| p - q).collect();
        let ae: Vec<f64> = a.iter().map(|row| row.iter().zip(&e).map(|(r, v)| r * v).sum()).collect();
        let f = 0.5 * e.iter().zip(&ae).map(|(p, q)| p * q).sum::<f64>();
        Ok((f, ae))
    };
    let q = lbfgs_minimize(quad, &vec![0.0; n], &LbfgsConfig::default(), |_| true).map_err(|e| e.to_string())?;
    if !(q.grad_norm < 1e-10 && q.iterations <= 30) {
        return Err(format!("quadratic: |g| {:e} after {} iterations", q.grad_norm, q.iterations));
    }
    let rosen = |x: &[f64]| {
        let (u, v) = (x[0], x[1]);
        let f = (1.0 - u).powi(2) + 100.0 * (v - u * u).powi(2);
        Ok((f, vec![-2.0 * (1.0 - u) - 400.0 * u * (v - u * u), 200.0 * (v - u * u)]))
    };
    let r = lbfgs_minimize(rosen, &[-1.2, 1.0], &LbfgsConfig::default(), |_| true).map_err(|e| e.to_string())?;
    if !(r.f < 1e-8) {
        return Err(format!("rosenbrock: f = {:e}", r.f));
    }
    let cfg = AdamConfig::default();
    let g = [0.3, -2.0, 1e-3, 0.0];
    let mut params = [1.0, -1.0, 0.5, 2.0];
    let start = params;
    Adam::new(cfg, 4).step(&mut params, &g).map_err(|e| e.to_string())?;
    for i in 0..4 {
        let expected = start[i] - cfg.lr * g[i] / (g[i].abs() + cfg.eps);
        if params[i] != expected {
            return Err(format!("adam first step {i}: {} vs {expected}", params[i]));
        }
    }
    Ok(format!(
        "quadratic |g| {:.1e} in {} iterations, rosenbrock f {:.1e}, adam step exact",
        q.grad_norm, q.iterations, r.f
    ))
}
