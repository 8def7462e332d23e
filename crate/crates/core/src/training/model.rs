//! Trained networks wrapped with the scaling they were trained under.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{DomainBox, PincScaler, Scaler};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic_str};
use crate::neural::{Network, NetworkCheckpoint};
use crate::well::{ControlInput, WellState};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("checkpoint serializes")
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed checkpoint: {e}")))
}

/// One-step state predictor `x(T) = F(x0, u)`.
#[derive(Clone, Debug)]
pub struct PincModel {
    pub network: Network,
    pub domain: DomainBox,
    scaler: PincScaler,
}

#[derive(Serialize, Deserialize)]
struct PincFile {
    kind: String,
    domain: DomainBox,
    network: NetworkCheckpoint,
}

const PINC_KIND: &str = "pinc-model";
const ALGNET_KIND: &str = "algebraic-model";

/// Derivatives of a one-step prediction in physical units:
/// `dx_dx0[i][k] = d x_i(T) / d x0_k`, `dx_du[i][k] = d x_i(T) / d u_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepJacobian {
    pub next: WellState,
    pub dx_dx0: [[f64; 3]; 3],
    pub dx_du: [[f64; 2]; 3],
}

impl PincModel {
    pub fn new(network: Network, domain: DomainBox) -> Result<Self> {
        if network.n_inputs() != 6 || network.n_outputs() != 3 {
            return Err(Error::ShapeMismatch("a state predictor maps 6 inputs to 3 outputs".into()));
        }
        domain.validate()?;
        let scaler = PincScaler::from_box(&domain);
        Ok(Self { network, domain, scaler })
    }

    pub fn scaler(&self) -> &PincScaler {
        &self.scaler
    }

    pub fn horizon(&self) -> f64 {
        self.domain.horizon
    }

    /// Predicted state `t` seconds after `x0` under constant `u`.
    pub fn predict(&self, t: f64, x0: &WellState, u: ControlInput) -> Result<WellState> {
        let y = self.network.predict(&self.scaler.input_row(t, x0, u))?;
        Ok(self.scaler.unscale_state(&y))
    }

    pub fn predict_step(&self, x0: &WellState, u: ControlInput) -> Result<WellState> {
        self.predict(self.horizon(), x0, u)
    }

    /// Predictions for many `(x0, u)` pairs in one batched pass.
    pub fn predict_steps(&self, pairs: &[(WellState, ControlInput)]) -> Result<Vec<WellState>> {
        let mut m = DMatrix::zeros(6, pairs.len());
        for (j, (x, u)) in pairs.iter().enumerate() {
            m.column_mut(j).copy_from_slice(&self.scaler.input_row(self.horizon(), x, *u));
        }
        let y = self.network.forward(&m)?;
        Ok(y.column_iter().map(|c| self.scaler.unscale_state(&[c[0], c[1], c[2]])).collect())
    }

    pub fn step_jacobian(&self, x0: &WellState, u: ControlInput) -> Result<StepJacobian> {
        let row = self.scaler.input_row(self.horizon(), x0, u);
        let y = self.network.predict(&row)?;
        let j = self.network.input_jacobian(&row)?;
        let hs = &self.scaler.state.half;
        let hu = &self.scaler.control.half;
        let dx_dx0 = std::array::from_fn(|i| std::array::from_fn(|k| hs[i] * j[(i, 1 + k)] / hs[k]));
        let dx_du = std::array::from_fn(|i| std::array::from_fn(|k| hs[i] * j[(i, 4 + k)] / hu[k]));
        Ok(StepJacobian { next: self.scaler.unscale_state(&y), dx_dx0, dx_du })
    }

    /// Chained predictions `x_1..x_N` for `controls[0..N]` together with the
    /// Jacobian of every step, evaluated in one batched reverse sweep.
    pub fn rollout_jacobians(&self, x0: &WellState, controls: &[ControlInput]) -> Result<Vec<StepJacobian>> {
        let mut inputs = DMatrix::zeros(6, controls.len());
        let mut x = *x0;
        for (j, u) in controls.iter().enumerate() {
            let row = self.scaler.input_row(self.horizon(), &x, *u);
            inputs.column_mut(j).copy_from_slice(&row);
            x = self.scaler.unscale_state(&self.network.predict(&row)?);
        }
        let ys = self.network.forward(&inputs)?;
        let jacs = self.network.input_jacobians(&inputs)?;
        let hs = &self.scaler.state.half;
        let hu = &self.scaler.control.half;
        Ok(jacs
            .iter()
            .zip(ys.column_iter())
            .map(|(j, y)| StepJacobian {
                next: self.scaler.unscale_state(&[y[0], y[1], y[2]]),
                dx_dx0: std::array::from_fn(|i| std::array::from_fn(|k| hs[i] * j[(i, 1 + k)] / hs[k])),
                dx_du: std::array::from_fn(|i| std::array::from_fn(|k| hs[i] * j[(i, 4 + k)] / hu[k])),
            })
            .collect())
    }

    /// Feeds each prediction back as the next initial state.
    pub fn self_loop(&self, x0: &WellState, controls: &[ControlInput]) -> Result<Vec<WellState>> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(*x0);
        for u in controls {
            let next = self.predict_step(states.last().unwrap(), *u)?;
            states.push(next);
        }
        Ok(states)
    }

    pub fn to_json(&self) -> String {
        to_json(&PincFile { kind: PINC_KIND.into(), domain: self.domain, network: self.network.to_checkpoint() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PincFile = from_json(text)?;
        if f.kind != PINC_KIND {
            return Err(Error::Config(format!("expected a {PINC_KIND} checkpoint, found {}", f.kind)));
        }
        Self::new(Network::from_checkpoint(&f.network)?, f.domain)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_str(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}

/// Algebraic quantities predicted from `(x, u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgebraicOutputs {
    /// Bottom-hole pressure (Pa).
    pub p_bh: f64,
    pub w_g_in: f64,
    pub w_g_res: f64,
    pub w_l_res: f64,
}

impl AlgebraicOutputs {
    pub fn to_array(self) -> [f64; 4] {
        [self.p_bh, self.w_g_in, self.w_g_res, self.w_l_res]
    }
}

pub const ALGEBRAIC_OUTPUTS: [&str; 4] = ["P_bh", "w_G_in", "w_G_res", "w_L_res"];

/// Dense regression network for the algebraic outputs.
#[derive(Clone, Debug)]
pub struct AlgNetModel {
    pub network: Network,
    pub domain: DomainBox,
    pub outputs: Scaler,
    scaler: PincScaler,
}

#[derive(Serialize, Deserialize)]
struct AlgNetFile {
    kind: String,
    domain: DomainBox,
    outputs: Scaler,
    network: NetworkCheckpoint,
}

impl AlgNetModel {
    pub fn new(network: Network, domain: DomainBox, outputs: Scaler) -> Result<Self> {
        if network.n_inputs() != 5 || network.n_outputs() != 4 || outputs.dim() != 4 {
            return Err(Error::ShapeMismatch("an algebraic model maps 5 inputs to 4 outputs".into()));
        }
        domain.validate()?;
        let scaler = PincScaler::from_box(&domain);
        Ok(Self { network, domain, outputs, scaler })
    }

    pub fn input_row(&self, x: &WellState, u: ControlInput) -> [f64; 5] {
        let y = self.scaler.scale_state(x);
        let v = self.scaler.scale_control(u);
        [y[0], y[1], y[2], v[0], v[1]]
    }

    pub fn predict(&self, x: &WellState, u: ControlInput) -> Result<AlgebraicOutputs> {
        let s = self.network.predict(&self.input_row(x, u))?;
        let o = self.outputs.unscale(&s)?;
        Ok(AlgebraicOutputs { p_bh: o[0], w_g_in: o[1], w_g_res: o[2], w_l_res: o[3] })
    }

    /// Bottom-hole pressure (Pa) with its gradients with respect to the
    /// state and the control.
    pub fn p_bh_gradient(&self, x: &WellState, u: ControlInput) -> Result<(f64, [f64; 3], [f64; 2])> {
        let row = self.input_row(x, u);
        let tape = self.network.record(&DMatrix::from_column_slice(5, 1, &row), None)?;
        let mut gy = DMatrix::zeros(4, 1);
        gy[0] = 1.0;
        let g = self.network.backward(&tape, &gy, None)?.input;
        let h = self.outputs.half[0];
        let p = tape.y[0] * h + self.outputs.mid[0];
        let hs = &self.scaler.state.half;
        let hu = &self.scaler.control.half;
        Ok((p, std::array::from_fn(|k| h * g[k] / hs[k]), std::array::from_fn(|k| h * g[3 + k] / hu[k])))
    }

    /// [`Self::p_bh_gradient`] for many points in one reverse sweep.
    pub fn p_bh_gradients(&self, points: &[(WellState, ControlInput)]) -> Result<Vec<(f64, [f64; 3], [f64; 2])>> {
        let mut inputs = DMatrix::zeros(5, points.len());
        for (j, (x, u)) in points.iter().enumerate() {
            inputs.column_mut(j).copy_from_slice(&self.input_row(x, *u));
        }
        let tape = self.network.record(&inputs, None)?;
        let mut gy = DMatrix::zeros(4, points.len());
        gy.row_mut(0).fill(1.0);
        let g = self.network.backward(&tape, &gy, None)?.input;
        let h = self.outputs.half[0];
        let hs = &self.scaler.state.half;
        let hu = &self.scaler.control.half;
        Ok((0..points.len())
            .map(|j| {
                (
                    tape.y[(0, j)] * h + self.outputs.mid[0],
                    std::array::from_fn(|k| h * g[(k, j)] / hs[k]),
                    std::array::from_fn(|k| h * g[(3 + k, j)] / hu[k]),
                )
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        to_json(&AlgNetFile {
            kind: ALGNET_KIND.into(),
            domain: self.domain,
            outputs: self.outputs.clone(),
            network: self.network.to_checkpoint(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: AlgNetFile = from_json(text)?;
        if f.kind != ALGNET_KIND {
            return Err(Error::Config(format!("expected a {ALGNET_KIND} checkpoint, found {}", f.kind)));
        }
        Self::new(Network::from_checkpoint(&f.network)?, f.domain, f.outputs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_str(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Architecture;

    fn domain() -> DomainBox {
        DomainBox::new([3000.0, 150.0, 6000.0], [4200.0, 500.0, 11000.0], 60.0).unwrap()
    }

    #[test]
    fn step_jacobian_matches_finite_differences() {
        let m = PincModel::new(Network::new(Architecture::Skip, 6, 8, 3, 3, 4).unwrap(), domain()).unwrap();
        let x = WellState::new(3500.0, 300.0, 9000.0);
        let u = ControlInput::new(0.4, 0.7);
        let jac = m.step_jacobian(&x, u).unwrap();
        for k in 0..3 {
            let h = 1e-3 * (domain().state_max[k] - domain().state_min[k]);
            let mut a = x.to_array();
            let mut b = x.to_array();
            a[k] += h;
            b[k] -= h;
            let fa = m.predict_step(&WellState::from_array(a), u).unwrap().to_array();
            let fb = m.predict_step(&WellState::from_array(b), u).unwrap().to_array();
            for i in 0..3 {
                let fd = (fa[i] - fb[i]) / (2.0 * h);
                assert!((fd - jac.dx_dx0[i][k]).abs() <= 1e-5 * (1.0 + fd.abs()), "{i},{k}: {fd} {}", jac.dx_dx0[i][k]);
            }
        }
        for k in 0..2 {
            let h = 1e-5;
            let mut a = u.to_array();
            let mut b = u.to_array();
            a[k] += h;
            b[k] -= h;
            let fa = m.predict_step(&x, ControlInput::from_array(a)).unwrap().to_array();
            let fb = m.predict_step(&x, ControlInput::from_array(b)).unwrap().to_array();
            for i in 0..3 {
                let fd = (fa[i] - fb[i]) / (2.0 * h);
                assert!((fd - jac.dx_du[i][k]).abs() <= 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn batched_jacobians_match_single_calls() {
        let m = PincModel::new(Network::new(Architecture::Skip, 6, 6, 2, 3, 8).unwrap(), domain()).unwrap();
        let x0 = WellState::new(3500.0, 300.0, 9000.0);
        let us = [ControlInput::new(0.4, 0.7), ControlInput::new(0.6, 0.9), ControlInput::new(0.3, 0.8)];
        let jacs = m.rollout_jacobians(&x0, &us).unwrap();
        let mut x = x0;
        for (u, j) in us.iter().zip(&jacs) {
            let single = m.step_jacobian(&x, *u).unwrap();
            for i in 0..3 {
                for k in 0..3 {
                    assert!((single.dx_dx0[i][k] - j.dx_dx0[i][k]).abs() <= 1e-12 * (1.0 + single.dx_dx0[i][k].abs()));
                }
                for k in 0..2 {
                    assert!((single.dx_du[i][k] - j.dx_du[i][k]).abs() <= 1e-9 * (1.0 + single.dx_du[i][k].abs()));
                }
            }
            x = single.next;
            assert!((x.m_l_tb - j.next.m_l_tb).abs() < 1e-9);
        }
        let outputs = Scaler::from_bounds(&[6e6, 0.0, -1.0, 0.0], &[14e6, 2.0, 1.0, 30.0]).unwrap();
        let a = AlgNetModel::new(Network::new(Architecture::Dense, 5, 6, 2, 4, 2).unwrap(), domain(), outputs).unwrap();
        let pts: Vec<_> = us.iter().map(|u| (x0, *u)).collect();
        for ((x, u), batched) in pts.iter().zip(a.p_bh_gradients(&pts).unwrap()) {
            let single = a.p_bh_gradient(x, *u).unwrap();
            assert!((single.0 - batched.0).abs() < 1e-6);
            for k in 0..3 {
                assert!((single.1[k] - batched.1[k]).abs() <= 1e-9 * single.1[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn batched_prediction_matches_single_calls() {
        let m = PincModel::new(Network::new(Architecture::Dense, 6, 5, 2, 3, 1).unwrap(), domain()).unwrap();
        let pairs = [
            (WellState::new(3500.0, 300.0, 9000.0), ControlInput::new(0.4, 0.7)),
            (WellState::new(3100.0, 200.0, 7000.0), ControlInput::new(0.9, 0.2)),
        ];
        let batch = m.predict_steps(&pairs).unwrap();
        for ((x, u), b) in pairs.iter().zip(&batch) {
            let single = m.predict_step(x, *u).unwrap();
            for (p, q) in single.to_array().iter().zip(b.to_array()) {
                assert!((p - q).abs() <= 1e-12 * p.abs());
            }
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let m = PincModel::new(Network::new(Architecture::Skip, 6, 4, 2, 3, 9).unwrap(), domain()).unwrap();
        let back = PincModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.network, m.network);
        assert_eq!(back.domain, m.domain);
        let outputs = Scaler::from_bounds(&[1e6, 0.0, -1.0, 0.0], &[2e7, 2.0, 1.0, 30.0]).unwrap();
        let a = AlgNetModel::new(Network::new(Architecture::Dense, 5, 4, 2, 4, 2).unwrap(), domain(), outputs).unwrap();
        let back = AlgNetModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back.network, a.network);
        assert_eq!(back.outputs, a.outputs);
        assert!(PincModel::from_json(&a.to_json()).is_err());
    }

    #[test]
    fn pressure_gradient_matches_finite_differences() {
        let outputs = Scaler::from_bounds(&[6e6, 0.0, -1.0, 0.0], &[14e6, 2.0, 1.0, 30.0]).unwrap();
        let a = AlgNetModel::new(Network::new(Architecture::Dense, 5, 6, 2, 4, 2).unwrap(), domain(), outputs).unwrap();
        let x = WellState::new(3500.0, 300.0, 9000.0);
        let u = ControlInput::new(0.4, 0.7);
        let (p, gx, gu) = a.p_bh_gradient(&x, u).unwrap();
        assert!((p - a.predict(&x, u).unwrap().p_bh).abs() < 1e-6);
        let mut xp = x.to_array();
        xp[2] += 1.0;
        let mut xm = x.to_array();
        xm[2] -= 1.0;
        let fd = (a.predict(&WellState::from_array(xp), u).unwrap().p_bh
            - a.predict(&WellState::from_array(xm), u).unwrap().p_bh)
            / 2.0;
        assert!((fd - gx[2]).abs() <= 1e-5 * fd.abs().max(1.0));
        let fdu = (a.predict(&x, ControlInput::new(0.4, 0.7 + 1e-6)).unwrap().p_bh
            - a.predict(&x, ControlInput::new(0.4, 0.7 - 1e-6)).unwrap().p_bh)
            / 2e-6;
        assert!((fdu - gu[1]).abs() <= 1e-4 * fdu.abs().max(1.0));
    }
}
