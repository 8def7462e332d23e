//! Closed-loop experiments against the exact simulator and long-range
//! prediction audits of the learned model.

use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{nmpc_solve, slmpc_solve, MpcConfig, MpcSolution, OutputPredictor, StatePredictor};
use crate::dataset::{feasible_random_rollout, random_steady_start, rng_stream, ControlEnvelope, DomainBox, PincScaler};
use crate::error::{Error, Result};
use crate::integrator::{csv_err, step_60s, STEP_SECONDS};
use crate::well::{compute_algebraics, ControlInput, Mode, WellParameters, WellState, BAR};

/// Input chosen by a controller for the next step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub u: ControlInput,
    pub iterations: usize,
}

pub trait Controller {
    fn name(&self) -> &str;
    /// Number of future reference values the controller reads.
    fn horizon(&self) -> usize;
    fn decide(&mut self, x_meas: &WellState, u_last: ControlInput, reference: &[f64]) -> Result<Decision>;
}

/// Open loop: always applies the same input.
#[derive(Clone, Copy, Debug)]
pub struct FixedInput(pub ControlInput);

impl Controller for FixedInput {
    fn name(&self) -> &str {
        "fixed"
    }
    fn horizon(&self) -> usize {
        1
    }
    fn decide(&mut self, _: &WellState, _: ControlInput, _: &[f64]) -> Result<Decision> {
        Ok(Decision { u: self.0, iterations: 0 })
    }
}

/// Previous plan advanced by one step, used as the next starting guess.
fn shifted(sol: &MpcSolution) -> Vec<ControlInput> {
    let n_u = sol.du.len();
    let mut warm: Vec<ControlInput> = sol.u[1..n_u.max(1)].to_vec();
    warm.push(sol.u[n_u - 1]);
    warm
}

/// NMPC over a learned state map and pressure map.
pub struct NmpcController<'a> {
    pub model: &'a dyn StatePredictor,
    pub output: &'a dyn OutputPredictor,
    pub cfg: MpcConfig,
    warm: Option<Vec<ControlInput>>,
}

impl<'a> NmpcController<'a> {
    pub fn new(model: &'a dyn StatePredictor, output: &'a dyn OutputPredictor, cfg: MpcConfig) -> Self {
        Self { model, output, cfg, warm: None }
    }
}

impl Controller for NmpcController<'_> {
    fn name(&self) -> &str {
        "pinc"
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn decide(&mut self, x_meas: &WellState, u_last: ControlInput, reference: &[f64]) -> Result<Decision> {
        let sol = nmpc_solve(self.model, self.output, x_meas, u_last, reference, &self.cfg, self.warm.as_deref())?;
        self.warm = Some(shifted(&sol));
        Ok(Decision { u: sol.u[0], iterations: sol.iterations })
    }
}

/// Successive-linearisation MPC on the exact model.
pub struct SlmpcController<'a> {
    pub params: &'a WellParameters,
    pub cfg: MpcConfig,
    warm: Option<Vec<ControlInput>>,
}

impl<'a> SlmpcController<'a> {
    pub fn new(params: &'a WellParameters, cfg: MpcConfig) -> Self {
        Self { params, cfg, warm: None }
    }
}

impl Controller for SlmpcController<'_> {
    fn name(&self) -> &str {
        "slmpc"
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn decide(&mut self, x_meas: &WellState, u_last: ControlInput, reference: &[f64]) -> Result<Decision> {
        let sol = slmpc_solve(self.params, x_meas, u_last, reference, &self.cfg, self.warm.as_deref())?;
        self.warm = Some(shifted(&sol));
        Ok(Decision { u: sol.u[0], iterations: sol.iterations })
    }
}

/// Gaussian measurement noise with standard deviation `std` times the
/// span of each state over `span`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub std: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { std: 0.05, seed: 0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(Error::Config(format!("noise std must be nonnegative, got {}", self.std)));
        }
        Ok(())
    }
}

/// Piecewise-constant pressure reference in bar: each entry holds from its
/// time (s) until the next one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSchedule {
    pub points: Vec<[f64; 2]>,
}

impl ReferenceSchedule {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let s = Self { points };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(bar: f64) -> Self {
        Self { points: vec![[0.0, bar]] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points[0][0] != 0.0 {
            return Err(Error::Config("reference schedule must start at t = 0".into()));
        }
        if self.points.windows(2).any(|w| !(w[1][0] > w[0][0])) || self.points.iter().any(|p| !p[1].is_finite()) {
            return Err(Error::Config("reference times must increase and values be finite".into()));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        self.points.iter().take_while(|p| p[0] <= t).last().unwrap_or(&self.points[0])[1]
    }

    /// Reference at the ends of the `n` steps following time `t`.
    pub fn window(&self, t: f64, n: usize, step: f64) -> Vec<f64> {
        (1..=n).map(|j| self.at(t + j as f64 * step)).collect()
    }
}

pub const CLOSED_LOOP_HEADER: &str = "t,m_G_an,m_G_tb,m_L_tb,u1,u2,P_bh,P_bh_ref,solver_iters,solve_ms";

/// Closed-loop trajectory sampled once per control step. Row `k` holds the
/// plant state at `t_k`, the input applied over the preceding step and the
/// pressure it produced; row 0 is the initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRun {
    pub controller: String,
    pub times: Vec<f64>,
    pub states: Vec<WellState>,
    pub inputs: Vec<ControlInput>,
    /// Bar.
    pub p_bh: Vec<f64>,
    /// Bar.
    pub reference: Vec<f64>,
    pub iterations: Vec<usize>,
    pub solve_ms: Vec<f64>,
    /// Mean absolute tracking error over steps `1..=n` (bar).
    pub iae: f64,
}

impl ClosedLoopRun {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CLOSED_LOOP_HEADER.split(',')).map_err(csv_err)?;
        for k in 0..self.times.len() {
            let x = self.states[k];
            let u = self.inputs[k];
            w.write_record(&[
                self.times[k].to_string(),
                x.m_g_an.to_string(),
                x.m_g_tb.to_string(),
                x.m_l_tb.to_string(),
                u.u1.to_string(),
                u.u2.to_string(),
                self.p_bh[k].to_string(),
                self.reference[k].to_string(),
                self.iterations[k].to_string(),
                self.solve_ms[k].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    /// Largest state change over the last `n` steps (kg).
    pub fn final_drift(&self, n: usize) -> f64 {
        let start = self.states.len().saturating_sub(n + 1);
        self.states[start..]
            .windows(2)
            .flat_map(|w| {
                let (a, b) = (w[0].to_array(), w[1].to_array());
                (0..3).map(move |i| (b[i] - a[i]).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Mean and sample standard deviation of the IAE over runs.
pub fn iae_summary(runs: &[ClosedLoopRun]) -> (f64, f64) {
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.iae).sum::<f64>() / n;
    let var = if runs.len() > 1 { runs.iter().map(|r| (r.iae - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `controller` against the exact simulator for `n_steps` steps from
/// `x0` with `u0` as the previously applied input. With `noise`, each
/// measurement is perturbed by Gaussian noise scaled by the spans of
/// `domain` before it reaches the controller.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop(
    controller: &mut dyn Controller,
    p: &WellParameters,
    x0: &WellState,
    u0: ControlInput,
    reference: &ReferenceSchedule,
    n_steps: usize,
    noise: Option<(&NoiseSpec, &DomainBox)>,
    stream: u64,
) -> Result<ClosedLoopRun> {
    reference.validate()?;
    u0.validate()?;
    let mut sampler = match noise {
        Some((spec, domain)) => {
            spec.validate()?;
            let normal = Normal::new(0.0, spec.std).map_err(|e| Error::Config(e.to_string()))?;
            let span: [f64; 3] = std::array::from_fn(|i| domain.state_max[i] - domain.state_min[i]);
            Some((normal, span, rng_stream(spec.seed, stream)))
        }
        None => None,
    };
    let pressure = |x: &WellState, u: ControlInput| -> Result<f64> {
        Ok(compute_algebraics(p, x, u, Mode::Exact)?.p_bh / BAR)
    };
    let mut run = ClosedLoopRun {
        controller: controller.name().to_string(),
        times: vec![0.0],
        states: vec![*x0],
        inputs: vec![u0],
        p_bh: vec![pressure(x0, u0)?],
        reference: vec![reference.at(0.0)],
        iterations: vec![0],
        solve_ms: vec![0.0],
        iae: 0.0,
    };
    let mut x = *x0;
    let mut u_last = u0;
    let mut abs_error = 0.0;
    for k in 0..n_steps {
        let t = k as f64 * STEP_SECONDS;
        let measured = match sampler.as_mut() {
            Some((normal, span, rng)) => {
                let a = x.to_array();
                WellState::from_array(std::array::from_fn(|i| a[i] + span[i] * normal.sample(rng)))
            }
            None => x,
        };
        let window = reference.window(t, controller.horizon(), STEP_SECONDS);
        let clock = Instant::now();
        let decision = controller
            .decide(&measured, u_last, &window)
            .map_err(|e| Error::Controller { step: k, source: Box::new(e) })?;
        let elapsed = clock.elapsed().as_secs_f64() * 1e3;
        let u = decision.u.clamped();
        x = step_60s(p, &x, u).map_err(|e| Error::Controller { step: k, source: Box::new(e) })?;
        u_last = u;
        let t_next = t + STEP_SECONDS;
        let y = pressure(&x, u)?;
        let r = reference.at(t_next);
        abs_error += (y - r).abs();
        run.times.push(t_next);
        run.states.push(x);
        run.inputs.push(u);
        run.p_bh.push(y);
        run.reference.push(r);
        run.iterations.push(decision.iterations);
        run.solve_ms.push(elapsed);
    }
    run.iae = if n_steps > 0 { abs_error / n_steps as f64 } else { 0.0 };
    Ok(run)
}

/// Errors of one self-loop simulation against the exact simulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRun {
    pub steps: usize,
    /// Mean over steps of the mean absolute scaled state error.
    pub state_iae: f64,
    /// Mean absolute pressure error (bar).
    pub p_bh_iae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub runs: Vec<PredictionRun>,
    pub mean_state_iae: f64,
    pub max_state_iae: f64,
    pub mean_p_bh_iae: f64,
    pub max_p_bh_iae: f64,
}

impl PredictionStats {
    fn from_runs(runs: Vec<PredictionRun>) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            mean_state_iae: runs.iter().map(|r| r.state_iae).sum::<f64>() / n,
            max_state_iae: runs.iter().map(|r| r.state_iae).fold(0.0, f64::max),
            mean_p_bh_iae: runs.iter().map(|r| r.p_bh_iae).sum::<f64>() / n,
            max_p_bh_iae: runs.iter().map(|r| r.p_bh_iae).fold(0.0, f64::max),
            runs,
        }
    }
}

/// Self-loop prediction over `n_sims` random schedules of `segments` steps,
/// each starting from a random equilibrium in `envelope`. States are
/// compared in the scaled coordinates of `domain`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_prediction(
    model: &dyn StatePredictor,
    output: &dyn OutputPredictor,
    p: &WellParameters,
    domain: &DomainBox,
    envelope: &ControlEnvelope,
    n_sims: usize,
    segments: usize,
    seed: u64,
) -> Result<PredictionStats> {
    let scaler = PincScaler::from_box(domain);
    let mut runs = Vec::with_capacity(n_sims);
    for sim in 0..n_sims {
        let mut rng = rng_stream(seed, sim as u64);
        let (x0, _) = random_steady_start(p, envelope, &mut rng)?;
        let rollout = feasible_random_rollout(p, &x0, segments, envelope, &mut rng)?;
        let controls = rollout.schedule.controls();
        let (mut exact, mut predicted) = (x0, x0);
        let (mut state_err, mut p_err) = (0.0, 0.0);
        for u in controls {
            exact = step_60s(p, &exact, *u)?;
            predicted = model.predict_step(&predicted, *u)?;
            let (a, b) = (scaler.scale_state(&exact), scaler.scale_state(&predicted));
            state_err += (0..3).map(|i| (a[i] - b[i]).abs()).sum::<f64>() / 3.0;
            let truth = compute_algebraics(p, &exact, *u, Mode::Exact)?.p_bh;
            p_err += (output.p_bh(&predicted, *u)? - truth).abs() / BAR;
        }
        let steps = controls.len();
        runs.push(PredictionRun { steps, state_iae: state_err / steps as f64, p_bh_iae: p_err / steps as f64 });
    }
    Ok(PredictionStats::from_runs(runs))
}
