//! Receding-horizon control of the bottom-hole pressure.

mod closed_loop;
mod nmpc;
mod qp;
mod slmpc;

use serde::{Deserialize, Serialize};

pub use closed_loop::{
    closed_loop, evaluate_prediction, iae_summary, ClosedLoopRun, Controller, Decision, FixedInput, NmpcController, NoiseSpec,
    PredictionRun, PredictionStats, ReferenceSchedule, SlmpcController, CLOSED_LOOP_HEADER,
};
pub use nmpc::nmpc_solve;
pub use qp::{solve_box_lsq, solve_box_qp};
pub use slmpc::{condensed_qp, linearize, linearize_with, slmpc_solve, CondensedQp, Linearization, LinearModel};

use crate::dataset::{ControlEnvelope, DomainBox};
use crate::error::{Error, Result};
use crate::integrator::{step_60s, STEP_SECONDS};
use crate::training::{AlgNetModel, LbfgsConfig, LbfgsStatus, PincModel, StepJacobian};
use crate::well::{compute_algebraics, ControlInput, Mode, WellParameters, WellState, BAR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Number of free control moves; the input is held afterwards.
    pub control_horizon: usize,
    /// Step length (s).
    pub step: f64,
    /// Output weight per prediction step (1/bar^2).
    pub q: Vec<f64>,
    /// Weight on each input move.
    pub r: [f64; 2],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub solver: LbfgsConfig,
}

/// Unit weight on the first `n_u` steps and 100 on the held-input tail.
pub fn tracking_weights(n: usize, n_u: usize) -> Vec<f64> {
    (0..n).map(|i| if i < n_u { 1.0 } else { 100.0 }).collect()
}

impl Default for MpcConfig {
    fn default() -> Self {
        let env = ControlEnvelope::operating();
        Self {
            horizon: 50,
            control_horizon: 45,
            step: STEP_SECONDS,
            q: tracking_weights(50, 45),
            r: [1e3, 1e3],
            u_min: env.lo,
            u_max: env.hi,
            solver: LbfgsConfig { max_iters: 50, grad_tol: 1e-6, rel_tol: 1e-12, ..LbfgsConfig::default() },
        }
    }
}

impl MpcConfig {
    /// Default weights for a different horizon.
    pub fn with_horizons(n: usize, n_u: usize) -> Self {
        Self { horizon: n, control_horizon: n_u, q: tracking_weights(n, n_u), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.control_horizon == 0 || self.control_horizon > self.horizon {
            return Err(Error::Config(format!(
                "need 1 <= control horizon ({}) <= horizon ({})",
                self.control_horizon, self.horizon
            )));
        }
        if self.q.len() != self.horizon || self.q.iter().any(|q| !(*q >= 0.0)) || self.r.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("weights must be nonnegative with one output weight per step".into()));
        }
        for k in 0..2 {
            if !(0.0 <= self.u_min[k] && self.u_min[k] <= self.u_max[k] && self.u_max[k] <= 1.0) {
                return Err(Error::Config(format!("input bounds {:?}..{:?} outside [0, 1]", self.u_min, self.u_max)));
            }
        }
        if !(self.step > 0.0) {
            return Err(Error::Config("step length must be positive".into()));
        }
        self.solver.validate()
    }

    fn n_vars(&self) -> usize {
        2 * self.control_horizon
    }

    fn lower(&self) -> Vec<f64> {
        (0..self.n_vars()).map(|i| self.u_min[i % 2]).collect()
    }

    fn upper(&self) -> Vec<f64> {
        (0..self.n_vars()).map(|i| self.u_max[i % 2]).collect()
    }

    /// Input applied during each prediction step for the free moves `v`.
    fn expand(&self, v: &[f64]) -> Vec<ControlInput> {
        (0..self.horizon)
            .map(|j| {
                let k = j.min(self.control_horizon - 1);
                ControlInput::new(v[2 * k], v[2 * k + 1])
            })
            .collect()
    }

    fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(u.u1.clamp(self.u_min[0], self.u_max[0]), u.u2.clamp(self.u_min[1], self.u_max[1]))
    }

    fn check_reference(&self, reference: &[f64]) -> Result<()> {
        if reference.len() != self.horizon {
            return Err(Error::ShapeMismatch(format!(
                "reference has {} entries, horizon is {}",
                reference.len(),
                self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    /// The solver could not make further progress; the best point found is
    /// returned.
    Stalled,
}

impl From<LbfgsStatus> for SolveStatus {
    fn from(s: LbfgsStatus) -> Self {
        match s {
            LbfgsStatus::GradientTolerance | LbfgsStatus::RelativeChange => SolveStatus::Converged,
            LbfgsStatus::MaxIterations | LbfgsStatus::Stopped => SolveStatus::IterationLimit,
            LbfgsStatus::LineSearchFail => SolveStatus::Stalled,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// Input applied in each prediction step.
    pub u: Vec<ControlInput>,
    /// Moves `u[j] - u[j - 1]` (with `u[-1]` the last applied input).
    pub du: Vec<[f64; 2]>,
    /// Predicted states, starting with the (clamped) measurement.
    pub states: Vec<WellState>,
    /// Predicted bottom-hole pressure at the end of each step (bar).
    pub outputs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective after each accepted solver iteration.
    pub trace: Vec<f64>,
}

impl MpcSolution {
    /// Largest violation of the move/hold structure of the input sequence.
    pub fn wiring_error(&self, u_last: ControlInput) -> f64 {
        let n_u = self.du.len();
        let mut worst: f64 = 0.0;
        let mut prev = u_last.to_array();
        for (j, u) in self.u.iter().enumerate() {
            let a = u.to_array();
            for k in 0..2 {
                let expected = if j < n_u { prev[k] + self.du[j][k] } else { prev[k] };
                worst = worst.max((a[k] - expected).abs());
            }
            prev = a;
        }
        worst
    }

    fn moves(u: &[ControlInput], n_u: usize, u_last: ControlInput) -> Vec<[f64; 2]> {
        let mut prev = u_last;
        u[..n_u]
            .iter()
            .map(|c| {
                let d = [c.u1 - prev.u1, c.u2 - prev.u2];
                prev = *c;
                d
            })
            .collect()
    }

    /// Input sequence rebuilt from the moves so the move/hold structure
    /// holds without rounding error.
    fn wired(du: &[[f64; 2]], horizon: usize, u_last: ControlInput) -> Vec<ControlInput> {
        let mut u = Vec::with_capacity(horizon);
        let mut prev = u_last;
        for j in 0..horizon {
            if let Some(d) = du.get(j) {
                prev = ControlInput::new(prev.u1 + d[0], prev.u2 + d[1]);
            }
            u.push(prev);
        }
        u
    }
}

/// One-step state map used for prediction inside the controller.
pub trait StatePredictor {
    fn predict_step(&self, x: &WellState, u: ControlInput) -> Result<WellState>;
    /// Chained predictions with per-step Jacobians.
    fn rollout_jacobians(&self, x0: &WellState, controls: &[ControlInput]) -> Result<Vec<StepJacobian>>;
    /// Region where the predictor is trusted; measurements are clamped
    /// into it.
    fn domain(&self) -> Option<&DomainBox> {
        None
    }
}

/// Bottom-hole pressure map (Pa) used inside the controller.
pub trait OutputPredictor {
    fn p_bh(&self, x: &WellState, u: ControlInput) -> Result<f64>;
    fn p_bh_gradients(&self, points: &[(WellState, ControlInput)]) -> Result<Vec<(f64, [f64; 3], [f64; 2])>>;
}

impl StatePredictor for PincModel {
    fn predict_step(&self, x: &WellState, u: ControlInput) -> Result<WellState> {
        PincModel::predict_step(self, x, u)
    }
    fn rollout_jacobians(&self, x0: &WellState, controls: &[ControlInput]) -> Result<Vec<StepJacobian>> {
        PincModel::rollout_jacobians(self, x0, controls)
    }
    fn domain(&self) -> Option<&DomainBox> {
        Some(&self.domain)
    }
}

impl OutputPredictor for AlgNetModel {
    fn p_bh(&self, x: &WellState, u: ControlInput) -> Result<f64> {
        Ok(self.predict(x, u)?.p_bh)
    }
    fn p_bh_gradients(&self, points: &[(WellState, ControlInput)]) -> Result<Vec<(f64, [f64; 3], [f64; 2])>> {
        AlgNetModel::p_bh_gradients(self, points)
    }
}

/// Inputs displaced by `+-h` in component `k`, kept inside `[0, 1]`, and
/// their separation.
fn control_pair(u: ControlInput, k: usize, h: f64) -> (ControlInput, ControlInput, f64) {
    let (mut a, mut b) = (u.to_array(), u.to_array());
    a[k] = (a[k] + h).min(1.0);
    b[k] = (b[k] - h).max(0.0);
    let width = a[k] - b[k];
    (ControlInput::from_array(a), ControlInput::from_array(b), width)
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// The simulator itself as a predictor: RK4 over one step, with
/// central-difference Jacobians.
#[derive(Clone, Copy, Debug)]
pub struct ExactStep<'a>(pub &'a WellParameters);

impl StatePredictor for ExactStep<'_> {
    fn predict_step(&self, x: &WellState, u: ControlInput) -> Result<WellState> {
        step_60s(self.0, x, u)
    }

    fn rollout_jacobians(&self, x0: &WellState, controls: &[ControlInput]) -> Result<Vec<StepJacobian>> {
        let mut out = Vec::with_capacity(controls.len());
        let mut x = *x0;
        for u in controls {
            let next = step_60s(self.0, &x, *u)?;
            let mut dx_dx0 = [[0.0; 3]; 3];
            let mut dx_du = [[0.0; 2]; 3];
            for k in 0..3 {
                let (mut a, mut b) = (x.to_array(), x.to_array());
                let h = 1e-4 * a[k].abs().max(1.0);
                a[k] += h;
                b[k] -= h;
                let fa = step_60s(self.0, &WellState::from_array(a), *u)?.to_array();
                let fb = step_60s(self.0, &WellState::from_array(b), *u)?.to_array();
                for i in 0..3 {
                    dx_dx0[i][k] = (fa[i] - fb[i]) / (2.0 * h);
                }
            }
            for k in 0..2 {
                let (a, b, width) = control_pair(*u, k, 1e-5);
                let fa = step_60s(self.0, &x, a)?.to_array();
                let fb = step_60s(self.0, &x, b)?.to_array();
                for i in 0..3 {
                    dx_du[i][k] = (fa[i] - fb[i]) / width;
                }
            }
            out.push(StepJacobian { next, dx_dx0, dx_du });
            x = next;
        }
        Ok(out)
    }
}

/// Exact bottom-hole pressure with central-difference gradients.
#[derive(Clone, Copy, Debug)]
pub struct ExactOutput<'a>(pub &'a WellParameters);

impl OutputPredictor for ExactOutput<'_> {
    fn p_bh(&self, x: &WellState, u: ControlInput) -> Result<f64> {
        Ok(compute_algebraics(self.0, x, u, Mode::Exact)?.p_bh)
    }

    fn p_bh_gradients(&self, points: &[(WellState, ControlInput)]) -> Result<Vec<(f64, [f64; 3], [f64; 2])>> {
        points
            .iter()
            .map(|(x, u)| {
                let p0 = self.p_bh(x, *u)?;
                let mut gx = [0.0; 3];
                for k in 0..3 {
                    let (mut a, mut b) = (x.to_array(), x.to_array());
                    let h = fd_step(a[k]);
                    a[k] += h;
                    b[k] -= h;
                    gx[k] = (self.p_bh(&WellState::from_array(a), *u)? - self.p_bh(&WellState::from_array(b), *u)?)
                        / (2.0 * h);
                }
                let mut gu = [0.0; 2];
                for k in 0..2 {
                    let (a, b, width) = control_pair(*u, k, 1e-6);
                    gu[k] = (self.p_bh(x, a)? - self.p_bh(x, b)?) / width;
                }
                Ok((p0, gx, gu))
            })
            .collect()
    }
}

/// Converts a pressure in Pa to bar.
pub fn to_bar(p: f64) -> f64 {
    p / BAR
}
