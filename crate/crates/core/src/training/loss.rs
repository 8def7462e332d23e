//! Initial-condition and physics-residual losses in scaled network units.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{InputPoint, PincDataset, PincScaler, ValidationPoint};
use crate::error::{Error, Result};
use crate::neural::Network;
use crate::well::{ode_rhs_jacobian, ControlInput, Mode, WellParameters, WellState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_y: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_y: 1.0, lambda_f: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_y >= 0.0 && self.lambda_f >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")))
        }
    }
}

/// State equations used by the residual loss.
pub trait Dynamics: Sync {
    /// Right-hand side (kg/s) and its Jacobian `J[i][k] = d f_i / d x_k`.
    fn rhs_jacobian(&self, x: &WellState, u: ControlInput) -> Result<([f64; 3], [[f64; 3]; 3])>;
}

/// The safeguarded well model.
impl Dynamics for WellParameters {
    fn rhs_jacobian(&self, x: &WellState, u: ControlInput) -> Result<([f64; 3], [[f64; 3]; 3])> {
        ode_rhs_jacobian(self, x, u, Mode::Safeguarded)
    }
}

/// `f = 0`: every constant-in-time network is an exact solution.
#[derive(Clone, Copy, Debug, Default)]
pub struct StaticDynamics;

impl Dynamics for StaticDynamics {
    fn rhs_jacobian(&self, _x: &WellState, _u: ControlInput) -> Result<([f64; 3], [[f64; 3]; 3])> {
        Ok(([0.0; 3], [[0.0; 3]; 3]))
    }
}

/// Network-ready matrices built once from a dataset.
#[derive(Clone, Debug)]
pub struct PincBatch {
    pub scaler: PincScaler,
    /// Inputs of the initial-condition points (6 x N_t) and their scaled
    /// targets (3 x N_t).
    pub init_inputs: DMatrix<f64>,
    pub init_targets: DMatrix<f64>,
    /// Inputs of the collocation points (6 x N_f).
    pub colloc_inputs: DMatrix<f64>,
    pub colloc_controls: Vec<ControlInput>,
    /// Validation inputs at `t = T` and scaled targets.
    pub val_inputs: DMatrix<f64>,
    pub val_targets: DMatrix<f64>,
}

fn input_matrix(scaler: &PincScaler, points: &[InputPoint]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(6, points.len());
    for (j, p) in points.iter().enumerate() {
        m.column_mut(j).copy_from_slice(&scaler.input_row(p.t, &p.x0, p.u));
    }
    m
}

fn validation_matrices(scaler: &PincScaler, points: &[ValidationPoint]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(6, points.len());
    let mut y = DMatrix::zeros(3, points.len());
    for (j, p) in points.iter().enumerate() {
        x.column_mut(j).copy_from_slice(&scaler.input_row(scaler.horizon, &p.x0, p.u));
        y.column_mut(j).copy_from_slice(&scaler.scale_state(&p.target));
    }
    (x, y)
}

impl PincBatch {
    pub fn from_dataset(data: &PincDataset) -> Self {
        let scaler = PincScaler::from_box(&data.domain);
        let init_inputs = input_matrix(&scaler, &data.init_points);
        let mut init_targets = DMatrix::zeros(3, data.init_points.len());
        for (j, p) in data.init_points.iter().enumerate() {
            init_targets.column_mut(j).copy_from_slice(&scaler.scale_state(&p.x0));
        }
        let colloc_inputs = input_matrix(&scaler, &data.collocation);
        let colloc_controls = data.collocation.iter().map(|p| p.u).collect();
        let (val_inputs, val_targets) = validation_matrices(&scaler, &data.validation);
        Self { scaler, init_inputs, init_targets, colloc_inputs, colloc_controls, val_inputs, val_targets }
    }

    pub fn n_init(&self) -> usize {
        self.init_inputs.ncols()
    }

    pub fn n_colloc(&self) -> usize {
        self.colloc_inputs.ncols()
    }

    /// `T / half_i`: converts a physical rate into scaled units per unit of
    /// scaled time.
    fn rate_factors(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.scaler.horizon / self.scaler.state.half[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse_y: f64,
    pub mse_f: f64,
}

fn check_outputs(net: &Network) -> Result<()> {
    if net.n_inputs() != 6 || net.n_outputs() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "PINC networks map 6 inputs to 3 outputs, got {} -> {}",
            net.n_inputs(),
            net.n_outputs()
        )));
    }
    Ok(())
}

/// Mean over points of the mean squared state error at `t = 0`.
pub fn mse_y(net: &Network, batch: &PincBatch) -> Result<f64> {
    check_outputs(net)?;
    if batch.n_init() == 0 {
        return Err(Error::Config("no initial-condition points".into()));
    }
    let y = net.forward(&batch.init_inputs)?;
    Ok((y - &batch.init_targets).norm_squared() / (3 * batch.n_init()) as f64)
}

/// Scaled residuals `dy/dt - (T / half) f(y)` (3 x N_f) and the model
/// Jacobians at every prediction.
fn residuals(
    batch: &PincBatch,
    controls: &[ControlInput],
    dynamics: &dyn Dynamics,
    y: &DMatrix<f64>,
    y_t: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<[[f64; 3]; 3]>)> {
    let c = batch.rate_factors();
    let mut res = y_t.clone();
    let mut jacs = Vec::with_capacity(y.ncols());
    for j in 0..y.ncols() {
        let col = y.column(j);
        let x = batch.scaler.unscale_state(&[col[0], col[1], col[2]]);
        let (f, jac) = dynamics.rhs_jacobian(&x, controls[j])?;
        for i in 0..3 {
            res[(i, j)] -= c[i] * f[i];
        }
        jacs.push(jac);
    }
    Ok((res, jacs))
}

/// Mean over collocation points of the mean squared scaled residual.
pub fn mse_f(net: &Network, batch: &PincBatch, dynamics: &dyn Dynamics) -> Result<f64> {
    check_outputs(net)?;
    if batch.n_colloc() == 0 {
        return Err(Error::Config("no collocation points".into()));
    }
    let (y, y_t) = net.forward_with_time_tangent(&batch.colloc_inputs)?;
    let (res, _) = residuals(batch, &batch.colloc_controls, dynamics, &y, &y_t)?;
    Ok(res.norm_squared() / (3 * batch.n_colloc()) as f64)
}

pub fn total_loss(net: &Network, batch: &PincBatch, dynamics: &dyn Dynamics, w: LossWeights) -> Result<LossValue> {
    let my = mse_y(net, batch)?;
    let mf = mse_f(net, batch, dynamics)?;
    Ok(LossValue { total: w.lambda_y * my + w.lambda_f * mf, mse_y: my, mse_f: mf })
}

/// Samples per forward/backward block; keeps intermediates cache-resident.
const CHUNK: usize = 256;

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Weighted loss and its exact gradient with respect to the parameters.
/// Blocks of samples are processed in a fixed order, so the result does
/// not depend on anything but the inputs.
pub fn loss_and_gradient(
    net: &Network,
    batch: &PincBatch,
    dynamics: &dyn Dynamics,
    w: LossWeights,
) -> Result<(LossValue, Vec<f64>)> {
    check_outputs(net)?;
    if batch.n_init() == 0 || batch.n_colloc() == 0 {
        return Err(Error::Config("both point sets must be non-empty".into()));
    }
    let mut grad = vec![0.0; net.n_params()];
    let n_y = (3 * batch.n_init()) as f64;
    let mut sq_y = 0.0;
    for start in (0..batch.n_init()).step_by(CHUNK) {
        let width = CHUNK.min(batch.n_init() - start);
        let tape = net.record(&batch.init_inputs.columns(start, width).into_owned(), None)?;
        let err = &tape.y - batch.init_targets.columns(start, width);
        sq_y += err.norm_squared();
        add_into(&mut grad, &net.backward(&tape, &(err * (2.0 * w.lambda_y / n_y)), None)?.params);
    }

    let mut seed = [0.0; 6];
    seed[0] = 1.0;
    let c = batch.rate_factors();
    let half = &batch.scaler.state.half;
    let n_f = (3 * batch.n_colloc()) as f64;
    let mut sq_f = 0.0;
    for start in (0..batch.n_colloc()).step_by(CHUNK) {
        let width = CHUNK.min(batch.n_colloc() - start);
        let tape = net.record(&batch.colloc_inputs.columns(start, width).into_owned(), Some(&seed))?;
        let y_t = tape.y_t.as_ref().expect("seeded pass");
        let (res, jacs) = residuals(batch, &batch.colloc_controls[start..start + width], dynamics, &tape.y, y_t)?;
        sq_f += res.norm_squared();
        let g_res = res * (2.0 * w.lambda_f / n_f);
        let mut gy = DMatrix::zeros(3, width);
        for (j, jac) in jacs.iter().enumerate() {
            for k in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    acc += g_res[(i, j)] * c[i] * jac[i][k];
                }
                gy[(k, j)] = -acc * half[k];
            }
        }
        add_into(&mut grad, &net.backward(&tape, &gy, Some(&g_res))?.params);
    }
    let (my, mf) = (sq_y / n_y, sq_f / n_f);
    Ok((LossValue { total: w.lambda_y * my + w.lambda_f * mf, mse_y: my, mse_f: mf }, grad))
}

/// Mean over validation points of the mean squared scaled state error one
/// horizon ahead.
pub fn validation_mse(net: &Network, batch: &PincBatch) -> Result<f64> {
    if batch.val_inputs.ncols() == 0 {
        return Ok(f64::NAN);
    }
    let y = net.forward(&batch.val_inputs)?;
    Ok((y - &batch.val_targets).norm_squared() / (3 * batch.val_inputs.ncols()) as f64)
}
