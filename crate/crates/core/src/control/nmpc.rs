//! Single-shooting nonlinear MPC over a learned one-step map.

use std::cell::RefCell;

use super::{MpcConfig, MpcSolution, OutputPredictor, SolveStatus, StatePredictor};
use crate::error::{Error, Result};
use crate::training::projected_lbfgs_minimize;
use crate::well::{ControlInput, WellState, BAR};

struct Evaluation {
    objective: f64,
    gradient: Vec<f64>,
    states: Vec<WellState>,
    outputs: Vec<f64>,
}

/// Objective and its gradient with respect to the free inputs `v`
/// (`u_0..u_{N_u - 1}` interleaved).
fn evaluate(
    model: &dyn StatePredictor,
    output: &dyn OutputPredictor,
    x0: &WellState,
    u_last: ControlInput,
    reference: &[f64],
    cfg: &MpcConfig,
    v: &[f64],
) -> Result<Evaluation> {
    let n = cfg.horizon;
    let n_u = cfg.control_horizon;
    let controls = cfg.expand(v);
    let steps = model.rollout_jacobians(x0, &controls)?;
    let points: Vec<(WellState, ControlInput)> = steps.iter().zip(&controls).map(|(s, u)| (s.next, *u)).collect();
    let pressures = output.p_bh_gradients(&points)?;

    let mut objective = 0.0;
    let mut gradient = vec![0.0; v.len()];
    let mut adjoint = [0.0; 3];
    for j in (0..n).rev() {
        let (p, gx, gu) = pressures[j];
        let e = p / BAR - reference[j];
        objective += cfg.q[j] * e * e;
        let w = 2.0 * cfg.q[j] * e / BAR;
        for k in 0..3 {
            adjoint[k] += w * gx[k];
        }
        let jac = &steps[j];
        let slot = j.min(n_u - 1);
        for k in 0..2 {
            let through_state: f64 = (0..3).map(|i| adjoint[i] * jac.dx_du[i][k]).sum();
            gradient[2 * slot + k] += w * gu[k] + through_state;
        }
        adjoint = std::array::from_fn(|k| (0..3).map(|i| adjoint[i] * jac.dx_dx0[i][k]).sum());
    }
    let mut prev = u_last.to_array();
    for j in 0..n_u {
        for k in 0..2 {
            let d = v[2 * j + k] - prev[k];
            objective += cfg.r[k] * d * d;
            gradient[2 * j + k] += 2.0 * cfg.r[k] * d;
            if j > 0 {
                gradient[2 * (j - 1) + k] -= 2.0 * cfg.r[k] * d;
            }
        }
        prev = [v[2 * j], v[2 * j + 1]];
    }
    let mut states = Vec::with_capacity(n + 1);
    states.push(*x0);
    states.extend(steps.iter().map(|s| s.next));
    Ok(Evaluation { objective, gradient, states, outputs: pressures.iter().map(|p| p.0 / BAR).collect() })
}

/// Minimises the tracking objective over the input moves with a projected
/// quasi-Newton method. `warm` is an initial guess for the held inputs
/// (`N_u` entries); without it the last input is repeated.
pub fn nmpc_solve(
    model: &dyn StatePredictor,
    output: &dyn OutputPredictor,
    x_meas: &WellState,
    u_last: ControlInput,
    reference: &[f64],
    cfg: &MpcConfig,
    warm: Option<&[ControlInput]>,
) -> Result<MpcSolution> {
    cfg.validate()?;
    cfg.check_reference(reference)?;
    u_last.validate()?;
    if !x_meas.is_finite() {
        return Err(Error::InfeasibleMeasurement(format!("{x_meas:?}")));
    }
    let x0 = model.domain().map_or(*x_meas, |d| d.clamp(x_meas));
    let n_u = cfg.control_horizon;
    let start: Vec<f64> = (0..n_u)
        .flat_map(|j| {
            let u = warm.and_then(|w| w.get(j).or(w.last()).copied()).unwrap_or(u_last);
            cfg.clamp_input(u).to_array()
        })
        .collect();
    let cache: RefCell<Option<(Vec<f64>, Evaluation)>> = RefCell::new(None);
    let fg = |v: &[f64]| -> Result<(f64, Vec<f64>)> {
        let e = evaluate(model, output, &x0, u_last, reference, cfg, v)?;
        let out = (e.objective, e.gradient.clone());
        let better = cache.borrow().as_ref().map_or(true, |(_, best)| e.objective <= best.objective);
        if better && e.objective.is_finite() {
            *cache.borrow_mut() = Some((v.to_vec(), e));
        }
        Ok(out)
    };
    let outcome = projected_lbfgs_minimize(fg, &start, &cfg.lower(), &cfg.upper(), &cfg.solver)?;
    let (v, best) = match cache.into_inner() {
        Some((v, e)) if e.objective <= outcome.f => (v, e),
        _ => {
            let e = evaluate(model, output, &x0, u_last, reference, cfg, &outcome.x)?;
            (outcome.x.clone(), e)
        }
    };
    let u = cfg.expand(&v);
    let du = MpcSolution::moves(&u, n_u, u_last);
    Ok(MpcSolution {
        u: MpcSolution::wired(&du, cfg.horizon, u_last),
        du,
        states: best.states,
        outputs: best.outputs,
        objective: best.objective,
        iterations: outcome.iterations,
        status: SolveStatus::from(outcome.status),
        trace: outcome.accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{ExactOutput, ExactStep};
    use super::*;
    use crate::well::{steady_state, WellParameters};

    fn small_cfg() -> MpcConfig {
        MpcConfig::with_horizons(4, 3)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = WellParameters::well(1).unwrap();
        let u_last = ControlInput::new(0.5, 0.7);
        let x0 = steady_state(&p, u_last).unwrap();
        let cfg = small_cfg();
        let reference = vec![96.0; 4];
        let v = vec![0.55, 0.72, 0.6, 0.75, 0.58, 0.8];
        let e = evaluate(&ExactStep(&p), &ExactOutput(&p), &x0, u_last, &reference, &cfg, &v).unwrap();
        for i in 0..v.len() {
            let h = 1e-5;
            let mut a = v.clone();
            let mut b = v.clone();
            a[i] += h;
            b[i] -= h;
            let fa = evaluate(&ExactStep(&p), &ExactOutput(&p), &x0, u_last, &reference, &cfg, &a).unwrap().objective;
            let fb = evaluate(&ExactStep(&p), &ExactOutput(&p), &x0, u_last, &reference, &cfg, &b).unwrap().objective;
            let fd = (fa - fb) / (2.0 * h);
            assert!((fd - e.gradient[i]).abs() <= 1e-3 * fd.abs().max(1.0), "{i}: {fd} vs {}", e.gradient[i]);
        }
    }

    #[test]
    fn steady_reference_keeps_inputs() {
        let p = WellParameters::well(1).unwrap();
        let u = ControlInput::new(0.5, 0.7);
        let x = steady_state(&p, u).unwrap();
        let y = ExactOutput(&p).p_bh(&step_state(&p, &x, u), u).unwrap() / BAR;
        let cfg = small_cfg();
        let sol = nmpc_solve(&ExactStep(&p), &ExactOutput(&p), &x, u, &vec![y; 4], &cfg, None).unwrap();
        assert!(sol.objective < 1e-8, "{}", sol.objective);
        assert!(sol.du.iter().flatten().all(|d| d.abs() < 1e-5), "{:?}", sol.du);
        assert_eq!(sol.wiring_error(u), 0.0);
    }

    fn step_state(p: &WellParameters, x: &WellState, u: ControlInput) -> WellState {
        crate::integrator::step_60s(p, x, u).unwrap()
    }

    #[test]
    fn heavy_move_penalty_freezes_inputs() {
        let p = WellParameters::well(1).unwrap();
        let u = ControlInput::new(0.5, 0.7);
        let x = steady_state(&p, u).unwrap();
        let mut cfg = small_cfg();
        cfg.r = [1e12, 1e12];
        let sol = nmpc_solve(&ExactStep(&p), &ExactOutput(&p), &x, u, &[90.0; 4], &cfg, None).unwrap();
        assert!(sol.du.iter().flatten().all(|d| d.abs() < 1e-4), "{:?}", sol.du);
    }

    #[test]
    fn tracks_a_lower_pressure_and_respects_bounds() {
        let p = WellParameters::well(1).unwrap();
        let u = ControlInput::new(0.5, 0.7);
        let x = steady_state(&p, u).unwrap();
        let cfg = small_cfg();
        let start = evaluate(&ExactStep(&p), &ExactOutput(&p), &x, u, &[90.0; 4], &cfg, &[0.5, 0.7, 0.5, 0.7, 0.5, 0.7])
            .unwrap()
            .objective;
        let sol = nmpc_solve(&ExactStep(&p), &ExactOutput(&p), &x, u, &[90.0; 4], &cfg, None).unwrap();
        assert!(sol.objective < start);
        assert_eq!(sol.trace[0], start);
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.trace);
        assert!(sol.u.iter().all(|c| (cfg.u_min[0]..=cfg.u_max[0]).contains(&c.u1)
            && (cfg.u_min[1]..=cfg.u_max[1]).contains(&c.u2)));
        assert_eq!(sol.wiring_error(u), 0.0);
        assert_eq!(sol.states.len(), 5);
        assert_eq!(sol.outputs.len(), 4);
    }
}
