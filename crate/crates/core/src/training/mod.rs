//! Loss assembly, optimizers and the training loops.

mod loss;
mod model;
mod optim;

use std::cell::RefCell;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use loss::{
    loss_and_gradient, mse_f, mse_y, total_loss, validation_mse, Dynamics, LossValue, LossWeights, PincBatch,
    StaticDynamics,
};
pub use model::{AlgNetModel, AlgebraicOutputs, PincModel, StepJacobian, ALGEBRAIC_OUTPUTS};
pub use optim::{
    lbfgs_minimize, projected_lbfgs_minimize, Adam, AdamConfig, IterInfo, LbfgsConfig, LbfgsOutcome, LbfgsStatus,
};

use crate::dataset::{rng_stream, ControlEnvelope, DomainBox, PincDataset, Scaler};
use crate::error::{Error, Result};
use crate::neural::{Architecture, Network};
use crate::well::{compute_algebraics, is_feasible, ControlInput, Mode, WellParameters, WellState};

/// Network shape for a state predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub architecture: Architecture,
    pub layers: usize,
    pub neurons: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self { architecture: Architecture::Skip, layers: 6, neurons: 30 }
    }
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.neurons == 0 {
            return Err(Error::Config(format!("network needs at least one hidden layer and neuron: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    pub weights: LossWeights,
    pub seed: u64,
    /// Validation cadence in optimizer iterations.
    pub validate_every: usize,
    /// An L-BFGS phase stopping on its own before this many iterations is
    /// flagged as premature.
    pub premature_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig { max_iters: 10_000, rel_tol: 1e-12, ..LbfgsConfig::default() },
            weights: LossWeights::default(),
            seed: 0,
            validate_every: 25,
            premature_iters: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.lbfgs.validate()?;
        self.weights.validate()?;
        if self.validate_every == 0 {
            return Err(Error::Config("validation cadence must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    fn label(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

/// One row of the training log. `val_mse` is NaN between validations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub mse_y: f64,
    pub mse_f: f64,
    pub val_mse: f64,
    pub fevals: usize,
}

pub const METRICS_HEADER: &str = "iter,phase,train_loss,mse_y,mse_f,val_mse,fevals";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{}\n",
            r.iter,
            r.phase.label(),
            r.train_loss,
            r.mse_y,
            r.mse_f,
            r.val_mse,
            r.fevals
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation error seen.
    pub best: PincModel,
    pub best_val_mse: f64,
    pub best_iter: usize,
    /// Parameters at the end of training.
    pub last: PincModel,
    pub final_loss: LossValue,
    pub metrics: Vec<MetricRow>,
    pub lbfgs_status: Option<LbfgsStatus>,
    pub lbfgs_iterations: usize,
    pub premature: bool,
}

struct Tracker<'a> {
    batch: &'a PincBatch,
    every: usize,
    best_val: f64,
    best_iter: usize,
    best_params: Vec<f64>,
    metrics: Vec<MetricRow>,
    fevals: usize,
}

impl Tracker<'_> {
    fn log(&mut self, net: &Network, iter: usize, phase: Phase, loss: LossValue, force_val: bool) -> Result<()> {
        let val = if force_val || iter % self.every == 0 {
            let v = validation_mse(net, self.batch)?;
            if v < self.best_val || self.best_params.is_empty() {
                self.best_val = v;
                self.best_iter = iter;
                self.best_params = net.params.clone();
            }
            v
        } else {
            f64::NAN
        };
        if self.metrics.last().is_some_and(|m| m.iter == iter && m.phase == phase) {
            self.metrics.pop();
        }
        self.metrics.push(MetricRow {
            iter,
            phase,
            train_loss: loss.total,
            mse_y: loss.mse_y,
            mse_f: loss.mse_f,
            val_mse: val,
            fevals: self.fevals,
        });
        Ok(())
    }
}

/// Trains a freshly initialised network.
pub fn train_pinc(
    dynamics: &dyn Dynamics,
    data: &PincDataset,
    spec: &NetSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let net = Network::new(spec.architecture, 6, spec.neurons, spec.layers, 3, cfg.seed)?;
    train_pinc_from(dynamics, data, net, cfg)
}

/// Adam for `cfg.adam.epochs` full-batch epochs, then L-BFGS, starting
/// from `net`.
pub fn train_pinc_from(
    dynamics: &dyn Dynamics,
    data: &PincDataset,
    mut net: Network,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let batch = PincBatch::from_dataset(data);
    let mut tr = Tracker {
        batch: &batch,
        every: cfg.validate_every,
        best_val: f64::INFINITY,
        best_iter: 0,
        best_params: Vec::new(),
        metrics: Vec::new(),
        fevals: 0,
    };
    let mut adam = Adam::new(cfg.adam, net.n_params());
    let mut iter = 0;
    for _ in 0..cfg.adam.epochs {
        let (loss, grad) = loss_and_gradient(&net, &batch, dynamics, cfg.weights)?;
        tr.fevals += 1;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: iter, loss: loss.total });
        }
        tr.log(&net, iter, Phase::Adam, loss, iter == 0)?;
        adam.step(&mut net.params, &grad)?;
        iter += 1;
    }

    let mut status = None;
    let mut lbfgs_iterations = 0;
    if cfg.lbfgs.max_iters > 0 {
        let start_iter = iter;
        let adam_fevals = tr.fevals;
        tr.log(&net, iter, Phase::Lbfgs, total_loss(&net, &batch, dynamics, cfg.weights)?, true)?;
        let probe = RefCell::new(net.clone());
        // Loss components of recent evaluations, looked up by total loss
        // when the optimizer reports an accepted point.
        let recent: RefCell<Vec<LossValue>> = RefCell::new(Vec::new());
        let fevals = RefCell::new(0usize);
        let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut n = probe.borrow_mut();
            n.set_params(x)?;
            let (loss, grad) = loss_and_gradient(&n, &batch, dynamics, cfg.weights)?;
            *fevals.borrow_mut() += 1;
            let mut r = recent.borrow_mut();
            if r.len() >= 64 {
                r.remove(0);
            }
            r.push(loss);
            if grad.iter().any(|g| !g.is_finite()) {
                return Ok((f64::NAN, grad));
            }
            Ok((loss.total, grad))
        };
        let mut failure = None;
        let mut eval_net = net.clone();
        let observe = |info: &IterInfo| -> bool {
            let loss = recent
                .borrow()
                .iter()
                .rev()
                .find(|l| l.total.to_bits() == info.f.to_bits())
                .copied()
                .unwrap_or(LossValue { total: info.f, mse_y: f64::NAN, mse_f: f64::NAN });
            tr.fevals = adam_fevals + *fevals.borrow();
            let logged = eval_net
                .set_params(info.x)
                .and_then(|_| tr.log(&eval_net, start_iter + info.iteration, Phase::Lbfgs, loss, false));
            match logged {
                Ok(()) => true,
                Err(e) => {
                    failure = Some(e);
                    false
                }
            }
        };
        let outcome = lbfgs_minimize(fg, &net.params, &cfg.lbfgs, observe).map_err(|e| match e {
            Error::TrainingDiverged { iteration, loss } => {
                Error::TrainingDiverged { iteration: start_iter + iteration, loss }
            }
            other => other,
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        net.set_params(&outcome.x)?;
        iter = start_iter + outcome.iterations;
        tr.fevals = adam_fevals + *fevals.borrow();
        lbfgs_iterations = outcome.iterations;
        status = Some(outcome.status);
    }
    let final_loss = total_loss(&net, &batch, dynamics, cfg.weights)?;
    let phase = if status.is_some() { Phase::Lbfgs } else { Phase::Adam };
    tr.log(&net, iter, phase, final_loss, true)?;
    let premature = matches!(status, Some(LbfgsStatus::LineSearchFail | LbfgsStatus::GradientTolerance | LbfgsStatus::RelativeChange))
        && lbfgs_iterations < cfg.premature_iters;
    let mut best_net = net.clone();
    best_net.set_params(&tr.best_params)?;
    Ok(TrainOutcome {
        best: PincModel::new(best_net, data.domain)?,
        best_val_mse: tr.best_val,
        best_iter: tr.best_iter,
        last: PincModel::new(net, data.domain)?,
        final_loss,
        metrics: tr.metrics,
        lbfgs_status: status,
        lbfgs_iterations,
        premature,
    })
}


/// Shape and budget of the algebraic-output network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgNetSpec {
    pub layers: usize,
    pub neurons: usize,
    pub samples: usize,
    pub validation: usize,
    pub lbfgs: LbfgsConfig,
    pub seed: u64,
}

impl Default for AlgNetSpec {
    fn default() -> Self {
        Self {
            layers: 4,
            neurons: 30,
            samples: 5000,
            validation: 1000,
            lbfgs: LbfgsConfig { max_iters: 5000, ..LbfgsConfig::default() },
            seed: 0,
        }
    }
}

impl AlgNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.neurons == 0 {
            return Err(Error::Config("the algebraic network needs at least one hidden layer".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("the algebraic network needs training samples".into()));
        }
        self.lbfgs.validate()
    }
}

#[derive(Clone, Debug)]
pub struct AlgNetOutcome {
    pub model: AlgNetModel,
    pub train_mse: f64,
    /// Mean absolute error per output on the held-out samples (physical
    /// units: Pa and kg/s).
    pub val_mae: [f64; 4],
    pub iterations: usize,
    pub status: LbfgsStatus,
}

const STREAM_ALGNET: u64 = 5 << 32;
const STREAM_ALGNET_VAL: u64 = 6 << 32;

/// Feasible `(x, u)` samples in `domain` x `envelope` with exact algebraic
/// targets, as columns of a 5-row input and 4-row target matrix.
pub fn algebraic_samples(
    p: &WellParameters,
    domain: &DomainBox,
    envelope: &ControlEnvelope,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<(Vec<[f64; 5]>, Vec<[f64; 4]>)> {
    let mut rng = rng_stream(seed, stream);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut drawn = 0usize;
    while inputs.len() < n {
        drawn += 1;
        if drawn > 1000 * n.max(10) {
            return Err(Error::RejectionStall { accepted: inputs.len(), drawn });
        }
        let x = domain.sample_state(&mut rng);
        let u = envelope.sample(&mut rng);
        if !is_feasible(p, &x, u) {
            continue;
        }
        let r = compute_algebraics(p, &x, u, Mode::Exact)?;
        let a = x.to_array();
        let v = u.to_array();
        inputs.push([a[0], a[1], a[2], v[0], v[1]]);
        targets.push([r.p_bh, r.w_g_in, r.w_g_res, r.w_l_res]);
    }
    Ok((inputs, targets))
}

/// Output scaling onto `[-1, 1]`. An output that is constant over the
/// samples gets a zero span, so the model reproduces it exactly.
fn output_scaler(targets: &[[f64; 4]]) -> Scaler {
    let mut mid = vec![0.0; 4];
    let mut half = vec![0.0; 4];
    for k in 0..4 {
        let lo = targets.iter().map(|t| t[k]).fold(f64::INFINITY, f64::min);
        let hi = targets.iter().map(|t| t[k]).fold(f64::NEG_INFINITY, f64::max);
        mid[k] = 0.5 * (lo + hi);
        if hi - lo > 1e-12 * mid[k].abs().max(1e-12) {
            half[k] = 0.5 * (hi - lo);
        }
    }
    Scaler { mid, half }
}

/// Supervised regression of the algebraic outputs with L-BFGS.
pub fn train_algnet(
    p: &WellParameters,
    domain: &DomainBox,
    envelope: &ControlEnvelope,
    spec: &AlgNetSpec,
) -> Result<AlgNetOutcome> {
    spec.validate()?;
    let (inputs, targets) = algebraic_samples(p, domain, envelope, spec.samples, spec.seed, STREAM_ALGNET)?;
    let outputs = output_scaler(&targets);
    let net = Network::new(Architecture::Dense, 5, spec.neurons, spec.layers, 4, spec.seed)?;
    let mut model = AlgNetModel::new(net, *domain, outputs)?;
    let n = inputs.len();
    let mut xm = DMatrix::zeros(5, n);
    let mut ym = DMatrix::zeros(4, n);
    for j in 0..n {
        let i = &inputs[j];
        let row = model.input_row(&WellState::new(i[0], i[1], i[2]), ControlInput::new(i[3], i[4]));
        xm.column_mut(j).copy_from_slice(&row);
        for k in 0..4 {
            let h = model.outputs.half[k];
            ym[(k, j)] = if h > 0.0 { (targets[j][k] - model.outputs.mid[k]) / h } else { 0.0 };
        }
    }
    let scale = 1.0 / (4 * n) as f64;
    let probe = RefCell::new(model.network.clone());
    let fg = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut net = probe.borrow_mut();
        net.set_params(x)?;
        let tape = net.record(&xm, None)?;
        let err = &tape.y - &ym;
        let f = err.norm_squared() * scale;
        let g = net.backward(&tape, &(err * (2.0 * scale)), None)?.params;
        Ok((f, g))
    };
    let out = lbfgs_minimize(fg, &model.network.params, &spec.lbfgs, |_| true)?;
    model.network.set_params(&out.x)?;

    let mut val_mae = [f64::NAN; 4];
    if spec.validation > 0 {
        let (vi, vt) = algebraic_samples(p, domain, envelope, spec.validation, spec.seed, STREAM_ALGNET_VAL)?;
        let mut acc = [0.0; 4];
        for (i, t) in vi.iter().zip(&vt) {
            let pred = model
                .predict(&WellState::new(i[0], i[1], i[2]), ControlInput::new(i[3], i[4]))?
                .to_array();
            for k in 0..4 {
                acc[k] += (pred[k] - t[k]).abs();
            }
        }
        val_mae = acc.map(|a| a / vi.len() as f64);
    }
    Ok(AlgNetOutcome { model, train_mse: out.f, val_mae, iterations: out.iterations, status: out.status })
}

/// Grid of network shapes trained `repeats` times each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub architecture: Architecture,
    pub layers: Vec<usize>,
    pub neurons: Vec<usize>,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub layers: usize,
    pub neurons: usize,
    pub repeat: usize,
    pub seed: u64,
    pub val_mse: f64,
    pub train_loss: f64,
    pub premature: bool,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "layers,neurons,repeat,seed,val_mse,train_loss,premature,error";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{},{}\n",
            r.layers,
            r.neurons,
            r.repeat,
            r.seed,
            r.val_mse,
            r.train_loss,
            r.premature,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        ));
    }
    out
}

/// Row with the lowest validation error.
pub fn best_of_sweep(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter().filter(|r| r.val_mse.is_finite()).min_by(|a, b| a.val_mse.total_cmp(&b.val_mse))
}

/// Trains every grid configuration; a failed run is recorded and the
/// sweep continues.
pub fn sweep(
    dynamics: &dyn Dynamics,
    data: &PincDataset,
    grid: &SweepSpec,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if grid.layers.is_empty() || grid.neurons.is_empty() || grid.repeats == 0 {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let mut rows = Vec::new();
    for &layers in &grid.layers {
        for &neurons in &grid.neurons {
            for repeat in 0..grid.repeats {
                let seed = cfg.seed + repeat as u64;
                let spec = NetSpec { architecture: grid.architecture, layers, neurons };
                let run_cfg = TrainConfig { seed, ..*cfg };
                let row = match train_pinc(dynamics, data, &spec, &run_cfg) {
                    Ok(o) => SweepRow {
                        layers,
                        neurons,
                        repeat,
                        seed,
                        val_mse: o.best_val_mse,
                        train_loss: o.final_loss.total,
                        premature: o.premature,
                        error: None,
                    },
                    Err(e) => SweepRow {
                        layers,
                        neurons,
                        repeat,
                        seed,
                        val_mse: f64::NAN,
                        train_loss: f64::NAN,
                        premature: false,
                        error: Some(e.to_string()),
                    },
                };
                rows.push(row);
            }
        }
    }
    Ok(rows)
}


/// Mean absolute gradient of the physics-residual loss per parameter
/// group of `net`.
pub fn physics_gradient_stats(net: &Network, batch: &PincBatch, dynamics: &dyn Dynamics) -> Result<Vec<(String, f64)>> {
    let (_, grad) = loss_and_gradient(net, batch, dynamics, LossWeights { lambda_y: 0.0, lambda_f: 1.0 })?;
    Ok(crate::neural::layer_gradient_stats(net, &grad))
}

/// Entry for the last hidden layer in per-layer statistics.
pub fn last_hidden(stats: &[(String, f64)]) -> Option<f64> {
    stats.iter().rev().find(|(name, _)| name.starts_with("hidden_")).map(|(_, v)| *v)
}
