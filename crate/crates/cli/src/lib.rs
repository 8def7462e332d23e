//! Command implementations behind the `pinc` binary.

pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pinc::control::{
    closed_loop, evaluate_prediction, iae_summary, ClosedLoopRun, Controller, MpcConfig, NmpcController, NoiseSpec,
    ReferenceSchedule, SlmpcController,
};
use pinc::dataset::{
    explore_domain_with, feasible_random_rollout, random_steady_start, rng_stream, sample_dataset_with, ControlEnvelope,
    DomainBox, ExploreConfig, PincDataset, SampleConfig,
};
use pinc::error::{Error, Result};
use pinc::integrator::{simulate_sampled, step_60s, ControlSchedule, DEFAULT_H, STEP_SECONDS};
use pinc::io::f64_csv;
use pinc::neural::Architecture;
use pinc::training::{
    best_of_sweep, last_hidden, metrics_csv, physics_gradient_stats, sweep, sweep_csv, train_algnet, train_pinc,
    train_pinc_from, AdamConfig, AlgNetModel, AlgNetSpec, LbfgsConfig, LossWeights, NetSpec, PincBatch, PincModel,
    SweepSpec, TrainConfig, TrainOutcome,
};
use pinc::well::{compute_algebraics, steady_state, ControlInput, Mode, WellParameters, WellState, BAR};

use config::{merge, to_json, Run};

#[derive(Parser, Debug)]
#[command(name = "pinc", version, about = "Physics-informed neural control of gas-lifted oil wells")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact RK4 rollout to CSV.
    Simulate(SimulateArgs),
    /// Explore the reachable states and sample a training set.
    GenData(GenDataArgs),
    /// Train the state predictor.
    TrainPinc(TrainPincArgs),
    /// Train the algebraic-output network.
    TrainAlgnet(TrainAlgnetArgs),
    /// Train a grid of network shapes.
    Sweep(SweepArgs),
    /// Self-loop prediction against the simulator.
    Predict(PredictArgs),
    /// Closed-loop tracking with the learned or the linearised controller.
    Mpc(MpcArgs),
    /// Paired skip/dense training runs with gradient statistics.
    Ablate(AblateArgs),
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct Common {
    /// Well number (1, 2 or 3).
    #[arg(long)]
    pub well: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with default values for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Common {
    fn well(&self) -> Result<WellParameters> {
        WellParameters::well(self.well.unwrap_or(1))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(command))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeChoice {
    /// Inputs in [0.2, 1] x [0.6, 1].
    Operating,
    /// The whole unit square.
    Full,
}

impl EnvelopeChoice {
    fn envelope(self) -> ControlEnvelope {
        match self {
            EnvelopeChoice::Operating => ControlEnvelope::operating(),
            EnvelopeChoice::Full => ControlEnvelope::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ArchChoice {
    Skip,
    Dense,
}

impl From<ArchChoice> for Architecture {
    fn from(a: ArchChoice) -> Self {
        match a {
            ArchChoice::Skip => Architecture::Skip,
            ArchChoice::Dense => Architecture::Dense,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ControllerChoice {
    Pinc,
    Slmpc,
    Both,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Initial state `m_G_an,m_G_tb,m_L_tb` (kg); defaults to the
    /// equilibrium of the first input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Constant input `u1,u2`.
    #[arg(long, value_delimiter = ',')]
    pub u: Option<Vec<f64>>,
    /// Number of random 60 s input segments instead of a constant input.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long, value_enum)]
    pub envelope: Option<EnvelopeChoice>,
    /// Simulated time (s).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Integration step (s).
    #[arg(long)]
    pub h: Option<f64>,
    /// Output sampling interval (s).
    #[arg(long)]
    pub sample_dt: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataArgs {
    /// Dataset directory written by `gen-data`; sampled on the fly when
    /// absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long = "Nt")]
    pub n_t: Option<usize>,
    #[arg(long = "Nf")]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Exploration rollouts for the state box.
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long, value_enum)]
    pub envelope: Option<EnvelopeChoice>,
}

impl DataArgs {
    fn envelope(&self) -> ControlEnvelope {
        self.envelope.unwrap_or(EnvelopeChoice::Operating).envelope()
    }

    fn domain(&self, p: &WellParameters, seed: u64) -> Result<DomainBox> {
        let cfg = ExploreConfig { envelope: self.envelope(), ..ExploreConfig::default() };
        explore_domain_with(p, self.rollouts.unwrap_or(20), seed, &cfg)
    }

    fn dataset(&self, p: &WellParameters, seed: u64) -> Result<PincDataset> {
        if let Some(dir) = &self.data {
            return PincDataset::load(dir);
        }
        let domain = self.domain(p, seed)?;
        let cfg = SampleConfig { envelope: self.envelope(), ..SampleConfig::default() };
        sample_dataset_with(
            p,
            &domain,
            self.n_t.unwrap_or(1000),
            self.n_f.unwrap_or(10_000),
            self.n_val.unwrap_or(100),
            seed,
            &cfg,
        )
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub arch: Option<ArchChoice>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    #[arg(long)]
    pub adam_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lbfgs_iters: Option<usize>,
    #[arg(long)]
    pub lambda_y: Option<f64>,
    #[arg(long)]
    pub lambda_f: Option<f64>,
}

impl TrainArgs {
    fn spec(&self) -> NetSpec {
        NetSpec {
            architecture: self.arch.unwrap_or(ArchChoice::Skip).into(),
            layers: self.layers.unwrap_or(6),
            neurons: self.neurons.unwrap_or(30),
        }
    }

    fn config(&self, seed: u64) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            adam: AdamConfig {
                epochs: self.adam_epochs.unwrap_or(base.adam.epochs),
                lr: self.lr.unwrap_or(base.adam.lr),
                ..base.adam
            },
            lbfgs: LbfgsConfig { max_iters: self.lbfgs_iters.unwrap_or(base.lbfgs.max_iters), ..base.lbfgs },
            weights: LossWeights {
                lambda_y: self.lambda_y.unwrap_or(base.weights.lambda_y),
                lambda_f: self.lambda_f.unwrap_or(base.weights.lambda_f),
            },
            seed,
            ..base
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainPincArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Continue from a saved model instead of a fresh network.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainAlgnetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Take the state box from this trained state predictor.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lbfgs_iters: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub arch: Option<ArchChoice>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub neurons: Option<Vec<usize>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub adam_epochs: Option<usize>,
    #[arg(long)]
    pub lbfgs_iters: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub algnet: Option<PathBuf>,
    /// Number of random simulations.
    #[arg(long)]
    pub sims: Option<usize>,
    /// 60 s steps per simulation.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long, value_enum)]
    pub envelope: Option<EnvelopeChoice>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct MpcArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub controller: Option<ControllerChoice>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub algnet: Option<PathBuf>,
    /// Measurement noise standard deviation relative to each state's span.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Closed-loop steps of 60 s.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Previously applied input; the plant starts at its equilibrium.
    #[arg(long, value_delimiter = ',')]
    pub initial_u: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub control_horizon: Option<usize>,
    /// Reference as `time:bar` pairs, e.g. `0:95,3000:97`.
    #[arg(long, value_delimiter = ',', value_parser = parse_reference_point)]
    pub reference: Option<Vec<[f64; 2]>>,
}

fn parse_reference_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let (t, v) = s.split_once(':').ok_or_else(|| format!("expected time:bar, got {s:?}"))?;
    let t = t.trim().parse().map_err(|e| format!("{t:?}: {e}"))?;
    let v = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok([t, v])
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct AblateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Full training runs per architecture.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Adam epochs before the gradient statistics are taken.
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    /// One run per architecture with short budgets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoke: Option<bool>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = a.common.config.clone();
            simulate_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::GenData(a) => {
            let cfg = a.common.config.clone();
            gen_data_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::TrainPinc(a) => {
            let cfg = a.common.config.clone();
            train_pinc_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::TrainAlgnet(a) => {
            let cfg = a.common.config.clone();
            train_algnet_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::Sweep(a) => {
            let cfg = a.common.config.clone();
            sweep_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::Predict(a) => {
            let cfg = a.common.config.clone();
            predict_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::Mpc(a) => {
            let cfg = a.common.config.clone();
            mpc_cmd(merge(&a, cfg.as_deref())?)
        }
        Command::Ablate(a) => {
            let cfg = a.common.config.clone();
            ablate_cmd(merge(&a, cfg.as_deref())?)
        }
    }
}

fn pair(v: &Option<Vec<f64>>, default: [f64; 2], what: &str) -> Result<[f64; 2]> {
    match v {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
        Some(v) => Err(Error::Config(format!("{what} needs 2 values, got {}", v.len()))),
    }
}

fn with_seed<T: Serialize>(args: &T, seed: u64, well: u8) -> Result<toml::Table> {
    let mut t = toml::Table::try_from(args).map_err(|e| Error::Config(e.to_string()))?;
    t.insert("seed".into(), toml::Value::Integer(seed as i64));
    t.insert("well".into(), toml::Value::Integer(well as i64));
    Ok(t)
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let u = ControlInput::from_array(pair(&a.u, [0.5, 0.5], "--u")?);
    u.validate()?;
    let h = a.h.unwrap_or(DEFAULT_H);
    let x0 = match &a.x0 {
        Some(v) if v.len() == 3 => WellState::new(v[0], v[1], v[2]),
        Some(v) => return Err(Error::Config(format!("--x0 needs 3 values, got {}", v.len()))),
        None => steady_state(&p, u)?,
    };
    let (schedule, t_end) = match a.segments {
        Some(n) => {
            let env = a.envelope.unwrap_or(EnvelopeChoice::Operating).envelope();
            let mut rng = rng_stream(seed, 0);
            let controls = (0..n.max(1)).map(|_| env.sample(&mut rng)).collect();
            (ControlSchedule::uniform(STEP_SECONDS, controls)?, a.t_end.unwrap_or(n as f64 * STEP_SECONDS))
        }
        None => (ControlSchedule::constant(u), a.t_end.unwrap_or(3000.0)),
    };
    let traj = simulate_sampled(&p, &x0, &schedule, t_end, h, a.sample_dt.unwrap_or(h))?.with_algebraics(&p)?;
    let mut run = Run::new("simulate", &a.common.out("simulate"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    run.write("trajectory.csv", &traj.to_csv_string()?)?;
    run.result("samples", traj.len() as i64);
    run.finish()
}

fn gen_data_cmd(a: GenDataArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let data = DataArgs { data: None, ..a.data.clone() }.dataset(&p, seed)?;
    let mut run = Run::new("gen-data", &a.common.out("gen-data"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    data.save(&run.dir)?;
    for name in ["init.csv", "collocation.csv", "validation.csv", "scaler.toml"] {
        run.record(name);
    }
    run.result("rejection_rate", data.stats.rejection_rate());
    run.result("init_points", data.init_points.len() as i64);
    run.result("collocation_points", data.collocation.len() as i64);
    run.result("validation_points", data.validation.len() as i64);
    eprintln!("rejection rate {:.4}", data.stats.rejection_rate());
    run.finish()
}

fn write_training(run: &mut Run, out: &TrainOutcome) -> Result<()> {
    run.write("model_best.json", &out.best.to_json())?;
    run.write("model_last.json", &out.last.to_json())?;
    run.write("metrics.csv", &metrics_csv(&out.metrics))?;
    run.result("best_val_mse", out.best_val_mse);
    run.result("best_iter", out.best_iter as i64);
    run.result("final_loss", out.final_loss.total);
    run.result("lbfgs_iterations", out.lbfgs_iterations as i64);
    run.result("lbfgs_status", format!("{:?}", out.lbfgs_status));
    run.result("premature", out.premature);
    Ok(())
}

fn train_pinc_cmd(a: TrainPincArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let data = a.data.dataset(&p, seed)?;
    let cfg = a.train.config(seed);
    let out = match &a.resume {
        Some(path) => {
            let model = PincModel::load(path)?;
            if model.domain != data.domain {
                return Err(Error::Config("checkpoint was trained on a different state box".into()));
            }
            train_pinc_from(&p, &data, model.network, &cfg)?
        }
        None => train_pinc(&p, &data, &a.train.spec(), &cfg)?,
    };
    let mut run = Run::new("train-pinc", &a.common.out("train-pinc"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    write_training(&mut run, &out)?;
    eprintln!("best validation MSE {:e} at iteration {}", out.best_val_mse, out.best_iter);
    run.finish()
}

fn train_algnet_cmd(a: TrainAlgnetArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let domain = match (&a.model, &a.data.data) {
        (Some(m), _) => PincModel::load(m)?.domain,
        (None, Some(d)) => PincDataset::load(d)?.domain,
        (None, None) => a.data.domain(&p, seed)?,
    };
    let base = AlgNetSpec::default();
    let spec = AlgNetSpec {
        layers: a.layers.unwrap_or(base.layers),
        neurons: a.neurons.unwrap_or(base.neurons),
        samples: a.samples.unwrap_or(base.samples),
        lbfgs: LbfgsConfig { max_iters: a.lbfgs_iters.unwrap_or(base.lbfgs.max_iters), ..base.lbfgs },
        seed,
        ..base
    };
    let out = train_algnet(&p, &domain, &a.data.envelope(), &spec)?;
    let mut run = Run::new("train-algnet", &a.common.out("train-algnet"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    run.write("algnet.json", &out.model.to_json())?;
    run.result("train_mse", out.train_mse);
    run.result("val_mae_p_bh_bar", out.val_mae[0] / BAR);
    run.result("val_mae_w_g_in", out.val_mae[1]);
    run.result("val_mae_w_g_res", out.val_mae[2]);
    run.result("val_mae_w_l_res", out.val_mae[3]);
    run.result("iterations", out.iterations as i64);
    eprintln!("held-out P_bh mean abs error {:.4} bar", out.val_mae[0] / BAR);
    run.finish()
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let data = a.data.dataset(&p, seed)?;
    let train = TrainArgs { adam_epochs: a.adam_epochs, lbfgs_iters: a.lbfgs_iters, ..TrainArgs::default() };
    let grid = SweepSpec {
        architecture: a.arch.unwrap_or(ArchChoice::Skip).into(),
        layers: a.layers.clone().unwrap_or_else(|| vec![2, 4, 6]),
        neurons: a.neurons.clone().unwrap_or_else(|| vec![10, 20, 30]),
        repeats: a.repeats.unwrap_or(1),
    };
    let rows = sweep(&p, &data, &grid, &train.config(seed))?;
    let mut run = Run::new("sweep", &a.common.out("sweep"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    run.write("sweep.csv", &sweep_csv(&rows))?;
    if let Some(best) = best_of_sweep(&rows) {
        run.result("best_layers", best.layers as i64);
        run.result("best_neurons", best.neurons as i64);
        run.result("best_val_mse", best.val_mse);
    }
    run.finish()
}

fn load_models(model: &Option<PathBuf>, algnet: &Option<PathBuf>) -> Result<(PincModel, AlgNetModel)> {
    let m = model.as_deref().ok_or_else(|| Error::Config("--model is required".into()))?;
    let a = algnet.as_deref().ok_or_else(|| Error::Config("--algnet is required".into()))?;
    Ok((PincModel::load(m)?, AlgNetModel::load(a)?))
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let (model, algnet) = load_models(&a.model, &a.algnet)?;
    let env = a.envelope.unwrap_or(EnvelopeChoice::Operating).envelope();
    let sims = a.sims.unwrap_or(20);
    let segments = a.segments.unwrap_or(50);
    let mut run = Run::new("predict", &a.common.out("predict"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    if sims == 0 || segments == 0 {
        eprintln!("warning: zero-length prediction run, no statistics computed");
        run.write("prediction_runs.csv", "sim,steps,state_iae,p_bh_iae\n")?;
        run.write("summary.json", "{}\n")?;
        return run.finish();
    }
    let stats = evaluate_prediction(&model, &algnet, &p, &model.domain, &env, sims, segments, seed)?;
    let mut csv = String::from("sim,steps,state_iae,p_bh_iae\n");
    for (i, r) in stats.runs.iter().enumerate() {
        csv.push_str(&format!("{i},{},{:e},{:e}\n", r.steps, r.state_iae, r.p_bh_iae));
    }
    run.write("prediction_runs.csv", &csv)?;
    run.write("summary.json", &to_json(&serde_json::json!({
        "mean_state_iae": stats.mean_state_iae,
        "max_state_iae": stats.max_state_iae,
        "mean_p_bh_iae_bar": stats.mean_p_bh_iae,
        "max_p_bh_iae_bar": stats.max_p_bh_iae,
        "sims": sims,
        "segments": segments,
    }))?)?;
    run.write("trajectory.csv", &prediction_trajectory(&p, &model, &algnet, &env, segments, seed)?)?;
    run.result("mean_state_iae", stats.mean_state_iae);
    run.result("mean_p_bh_iae_bar", stats.mean_p_bh_iae);
    eprintln!("state IAE {:.5}, P_bh IAE {:.4} bar", stats.mean_state_iae, stats.mean_p_bh_iae);
    run.finish()
}

/// The first simulation of `evaluate_prediction`, with simulator and
/// self-loop columns side by side.
fn prediction_trajectory(
    p: &WellParameters,
    model: &PincModel,
    algnet: &AlgNetModel,
    env: &ControlEnvelope,
    segments: usize,
    seed: u64,
) -> Result<String> {
    let mut rng = rng_stream(seed, 0);
    let (x0, _) = random_steady_start(p, env, &mut rng)?;
    let rollout = feasible_random_rollout(p, &x0, segments, env, &mut rng)?;
    let header = [
        "t", "u1", "u2", "m_G_an", "m_G_tb", "m_L_tb", "m_G_an_pinc", "m_G_tb_pinc", "m_L_tb_pinc", "P_bh",
        "P_bh_pinc",
    ];
    let (mut exact, mut pred) = (x0, x0);
    let mut rows = Vec::new();
    for (k, u) in rollout.schedule.controls().iter().enumerate() {
        exact = step_60s(p, &exact, *u)?;
        pred = model.predict_step(&pred, *u)?;
        let truth = compute_algebraics(p, &exact, *u, Mode::Exact)?.p_bh / BAR;
        let guess = algnet.predict(&pred, *u)?.p_bh / BAR;
        let mut row = vec![(k + 1) as f64 * STEP_SECONDS, u.u1, u.u2];
        row.extend(exact.to_array());
        row.extend(pred.to_array());
        row.extend([truth, guess]);
        rows.push(row);
    }
    f64_csv(&header, rows)
}

fn mpc_cmd(a: MpcArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let choice = a.controller.unwrap_or(ControllerChoice::Both);
    let u0 = ControlInput::from_array(pair(&a.initial_u, [0.5, 0.5], "--initial-u")?);
    let x0 = steady_state(&p, u0)?;
    let reference =
        ReferenceSchedule::new(a.reference.clone().unwrap_or_else(|| vec![[0.0, 95.0], [3000.0, 97.0], [6000.0, 99.0]]))?;
    let steps = a.steps.unwrap_or(150);
    let cfg = MpcConfig::with_horizons(a.horizon.unwrap_or(50), a.control_horizon.unwrap_or(45));
    cfg.validate()?;
    let needs_models = choice != ControllerChoice::Slmpc;
    let models = if needs_models || a.model.is_some() { Some(load_models(&a.model, &a.algnet)?) } else { None };
    let noise = NoiseSpec { std: a.noise.unwrap_or(0.0), seed };
    noise.validate()?;
    let reps = if noise.std > 0.0 { a.reps.unwrap_or(1).max(1) } else { 1 };
    let domain = match &models {
        Some((m, _)) => m.domain,
        None => DataArgs::default().domain(&p, seed)?,
    };
    let noise_arg = (noise.std > 0.0).then_some((&noise, &domain));

    let names: Vec<&str> = match choice {
        ControllerChoice::Pinc => vec!["pinc"],
        ControllerChoice::Slmpc => vec!["slmpc"],
        ControllerChoice::Both => vec!["pinc", "slmpc"],
    };
    let mut run = Run::new("mpc", &a.common.out("mpc"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;
    let mut iae_csv = String::from("controller,rep,iae\n");
    let mut summary = serde_json::Map::new();
    let mut first: Vec<ClosedLoopRun> = Vec::new();
    for name in &names {
        let mut runs = Vec::with_capacity(reps);
        for rep in 0..reps {
            let mut controller: Box<dyn Controller + '_> = match (*name, &models) {
                ("pinc", Some((m, alg))) => Box::new(NmpcController::new(m, alg, cfg.clone())),
                _ => Box::new(SlmpcController::new(&p, cfg.clone())),
            };
            let r = closed_loop(controller.as_mut(), &p, &x0, u0, &reference, steps, noise_arg, rep as u64)?;
            iae_csv.push_str(&format!("{name},{rep},{:e}\n", r.iae));
            eprintln!("{name} rep {rep}: IAE {:.4} bar", r.iae);
            runs.push(r);
        }
        let (mean, std) = iae_summary(&runs);
        summary.insert(name.to_string(), serde_json::json!({ "iae_mean_bar": mean, "iae_std_bar": std, "reps": reps }));
        run.result(&format!("{name}_iae_mean_bar"), mean);
        run.write(&format!("closed_loop_{name}.csv"), &runs[0].to_csv_string()?)?;
        first.push(runs.swap_remove(0));
    }
    if first.len() == 2 {
        let header = ["t", "P_bh_ref", "P_bh_pinc", "P_bh_slmpc", "u1_pinc", "u2_pinc", "u1_slmpc", "u2_slmpc"];
        let rows = (0..first[0].times.len()).map(|k| {
            vec![
                first[0].times[k],
                first[0].reference[k],
                first[0].p_bh[k],
                first[1].p_bh[k],
                first[0].inputs[k].u1,
                first[0].inputs[k].u2,
                first[1].inputs[k].u1,
                first[1].inputs[k].u2,
            ]
        });
        run.write("overlay.csv", &f64_csv(&header, rows)?)?;
    }
    run.write("iae.csv", &iae_csv)?;
    run.write("summary.json", &to_json(&summary)?)?;
    run.finish()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let p = a.common.well()?;
    let seed = a.common.seed();
    let smoke = a.smoke.unwrap_or(false);
    let data = a.data.dataset(&p, seed)?;
    let batch = PincBatch::from_dataset(&data);
    let runs = if smoke { 1 } else { a.runs.unwrap_or(10) };
    let probe_epochs = a.probe_epochs.unwrap_or(if smoke { 20 } else { 500 });
    let mut train = a.train.clone();
    if smoke {
        train.adam_epochs = Some(train.adam_epochs.unwrap_or(20));
        train.lbfgs_iters = Some(train.lbfgs_iters.unwrap_or(20));
    }
    let mut run = Run::new("ablate", &a.common.out("ablate"), &with_seed(&a, seed, a.common.well.unwrap_or(1))?)?;

    let mut grad_csv = String::from("architecture,layer,mean_abs_grad\n");
    let mut last = Vec::new();
    for arch in [ArchChoice::Skip, ArchChoice::Dense] {
        let spec = NetSpec { architecture: arch.into(), ..train.spec() };
        let cfg = TrainConfig {
            adam: AdamConfig { epochs: probe_epochs, ..train.config(seed).adam },
            lbfgs: LbfgsConfig { max_iters: 0, ..LbfgsConfig::default() },
            ..train.config(seed)
        };
        let out = train_pinc(&p, &data, &spec, &cfg)?;
        let stats = physics_gradient_stats(&out.last.network, &batch, &p)?;
        for (layer, g) in &stats {
            grad_csv.push_str(&format!("{},{layer},{g:e}\n", arch_name(arch)));
        }
        last.push(last_hidden(&stats).unwrap_or(f64::NAN));
    }
    run.write("gradients.csv", &grad_csv)?;
    let gradient_ratio = last[0] / last[1];

    let mut runs_csv = String::from("architecture,seed,best_val_mse,best_iter,final_iter,lbfgs_iterations,premature\n");
    let mut medians = Vec::new();
    for arch in [ArchChoice::Skip, ArchChoice::Dense] {
        let mut vals = Vec::new();
        for r in 0..runs {
            let s = seed + r as u64;
            let spec = NetSpec { architecture: arch.into(), ..train.spec() };
            let out = train_pinc(&p, &data, &spec, &train.config(s))?;
            let final_iter = out.metrics.last().map_or(0, |m| m.iter);
            runs_csv.push_str(&format!(
                "{},{s},{:e},{},{final_iter},{},{}\n",
                arch_name(arch),
                out.best_val_mse,
                out.best_iter,
                out.lbfgs_iterations,
                out.premature
            ));
            run.write(&format!("curves/{}_{s}.csv", arch_name(arch)), &metrics_csv(&out.metrics))?;
            if !out.premature {
                vals.push(out.best_val_mse);
            }
        }
        medians.push(median(&mut vals));
    }
    run.write("runs.csv", &runs_csv)?;
    let val_ratio = medians[0] / medians[1];
    run.write("summary.json", &to_json(&serde_json::json!({
        "last_hidden_gradient_skip": last[0],
        "last_hidden_gradient_dense": last[1],
        "last_hidden_gradient_ratio": gradient_ratio,
        "median_val_mse_skip": medians[0],
        "median_val_mse_dense": medians[1],
        "median_val_mse_ratio": val_ratio,
        "runs_per_architecture": runs,
    }))?)?;
    run.result("last_hidden_gradient_ratio", gradient_ratio);
    run.result("median_val_mse_ratio", val_ratio);
    eprintln!("last hidden layer gradient ratio {gradient_ratio:.3e}, median validation ratio {val_ratio:.3}");
    run.finish()
}

fn arch_name(a: ArchChoice) -> &'static str {
    match a {
        ArchChoice::Skip => "skip",
        ArchChoice::Dense => "dense",
    }
}
