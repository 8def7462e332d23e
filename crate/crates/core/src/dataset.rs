//! Training, collocation and validation sets over the reachable state box,
//! plus the affine scaling used at the network boundary.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{simulate, step_60s, ControlSchedule, Trajectory, DEFAULT_H, STEP_SECONDS};
use crate::io::{f64_csv, read_f64_csv, read_to_string, write_atomic_str};
use crate::well::{is_feasible, steady_state, ControlInput, WellParameters, WellState};

/// Relative inflation applied to each side of an explored box.
pub const BOX_MARGIN: f64 = 0.05;
/// Smallest allowed box span, relative to the box centre.
pub const MIN_SPAN_FRACTION: f64 = 0.02;

const STREAM_INIT: u64 = 1 << 32;
const STREAM_COLLOCATION: u64 = 2 << 32;
const STREAM_VALIDATION: u64 = 3 << 32;
const STREAM_EXPLORE: u64 = 4 << 32;

/// Deterministic random stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rectangle of control inputs that random schedules draw from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlEnvelope {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Default for ControlEnvelope {
    fn default() -> Self {
        Self { lo: [0.0; 2], hi: [1.0; 2] }
    }
}

impl ControlEnvelope {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        let e = Self { lo, hi };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..2 {
            if !(0.0 <= self.lo[i] && self.lo[i] <= self.hi[i] && self.hi[i] <= 1.0) {
                return Err(Error::Config(format!("invalid control envelope {self:?}")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ControlInput {
        let draw = |rng: &mut R, i: usize| self.lo[i] + (self.hi[i] - self.lo[i]) * rng.gen::<f64>();
        let u1 = draw(rng, 0);
        let u2 = draw(rng, 1);
        ControlInput::new(u1, u2)
    }

    /// Operating envelope of the shipped wells. Below a gas-lift opening
    /// of about 0.6 wells 1 and 2 have unstable equilibria (casing
    /// heading) and random schedules drift out of the feasible region.
    pub fn operating() -> Self {
        Self { lo: [0.2, 0.6], hi: [1.0, 1.0] }
    }
}

/// Axis-aligned box of states plus the prediction horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub state_min: [f64; 3],
    pub state_max: [f64; 3],
    pub horizon: f64,
}

impl DomainBox {
    pub fn new(state_min: [f64; 3], state_max: [f64; 3], horizon: f64) -> Result<Self> {
        let b = Self { state_min, state_max, horizon };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.state_min[i] < self.state_max[i]) || !self.state_min[i].is_finite() {
                return Err(Error::Config(format!(
                    "degenerate box in dimension {i}: [{}, {}]",
                    self.state_min[i], self.state_max[i]
                )));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// Bounding box of `states`, inflated by `margin` of the span on each
    /// side and widened to at least `MIN_SPAN_FRACTION` of its centre.
    pub fn enclosing<'a>(states: impl IntoIterator<Item = &'a WellState>, margin: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for s in states {
            for (i, v) in s.to_array().into_iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        if lo.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("no states to enclose".into()));
        }
        for i in 0..3 {
            let mid = 0.5 * (lo[i] + hi[i]);
            let span = hi[i] - lo[i];
            let min_span = (MIN_SPAN_FRACTION * mid.abs()).max(1e-6);
            let half = if span < min_span { 0.5 * min_span } else { 0.5 * span * (1.0 + 2.0 * margin) };
            lo[i] = mid - half;
            hi[i] = mid + half;
        }
        Self::new(lo, hi, STEP_SECONDS)
    }

    pub fn contains(&self, x: &WellState) -> bool {
        x.to_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.state_min[i] && *v <= self.state_max[i])
    }

    pub fn clamp(&self, x: &WellState) -> WellState {
        let a = x.to_array();
        WellState::from_array(std::array::from_fn(|i| a[i].clamp(self.state_min[i], self.state_max[i])))
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> WellState {
        WellState::from_array(std::array::from_fn(|i| {
            self.state_min[i] + (self.state_max[i] - self.state_min[i]) * rng.gen::<f64>()
        }))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("box serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let b: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }
}

/// Per-dimension affine map `scaled = (value - mid) / half`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mid: Vec<f64>,
    pub half: Vec<f64>,
}

impl Scaler {
    /// Maps `[lo, hi]` onto `[-1, 1]` in every dimension.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::ShapeMismatch(format!("{} lower vs {} upper bounds", lo.len(), hi.len())));
        }
        let mut mid = Vec::with_capacity(lo.len());
        let mut half = Vec::with_capacity(lo.len());
        for (l, h) in lo.iter().zip(hi) {
            if !(h > l) {
                return Err(Error::Config(format!("empty scaling range [{l}, {h}]")));
            }
            mid.push(0.5 * (l + h));
            half.push(0.5 * (h - l));
        }
        Ok(Self { mid, half })
    }

    pub fn dim(&self) -> usize {
        self.mid.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n == self.dim() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("expected {} values, got {n}", self.dim())))
        }
    }

    pub fn scale(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values.len())?;
        Ok(values.iter().enumerate().map(|(i, v)| (v - self.mid[i]) / self.half[i]).collect())
    }

    pub fn unscale(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values.len())?;
        Ok(values.iter().enumerate().map(|(i, v)| v * self.half[i] + self.mid[i]).collect())
    }

    /// Scales every row of a row-major batch in place.
    pub fn scale_rows(&self, rows: &mut [Vec<f64>]) -> Result<()> {
        for r in rows.iter_mut() {
            *r = self.scale(r)?;
        }
        Ok(())
    }
}

/// Scaling of the network input `[t, y0, u]` and output `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct PincScaler {
    pub state: Scaler,
    pub control: Scaler,
    pub horizon: f64,
}

impl PincScaler {
    pub fn from_box(b: &DomainBox) -> Self {
        Self {
            state: Scaler::from_bounds(&b.state_min, &b.state_max).expect("validated box"),
            control: Scaler::from_bounds(&[0.0, 0.0], &[1.0, 1.0]).expect("unit box"),
            horizon: b.horizon,
        }
    }

    pub fn scale_state(&self, x: &WellState) -> [f64; 3] {
        let a = x.to_array();
        std::array::from_fn(|i| (a[i] - self.state.mid[i]) / self.state.half[i])
    }

    pub fn unscale_state(&self, y: &[f64]) -> WellState {
        WellState::from_array(std::array::from_fn(|i| y[i] * self.state.half[i] + self.state.mid[i]))
    }

    pub fn scale_control(&self, u: ControlInput) -> [f64; 2] {
        let a = u.to_array();
        std::array::from_fn(|i| (a[i] - self.control.mid[i]) / self.control.half[i])
    }

    /// Network input row `[t / T, y0 scaled, u scaled]`.
    pub fn input_row(&self, t: f64, x0: &WellState, u: ControlInput) -> [f64; 6] {
        let y = self.scale_state(x0);
        let v = self.scale_control(u);
        [t / self.horizon, y[0], y[1], y[2], v[0], v[1]]
    }
}

/// One `(t, y0, u)` sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputPoint {
    pub t: f64,
    pub x0: WellState,
    pub u: ControlInput,
}

/// A validation input together with its simulated state after one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationPoint {
    pub x0: WellState,
    pub u: ControlInput,
    pub target: WellState,
}

/// Draw and acceptance counts from rejection sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingStats {
    pub drawn: usize,
    pub accepted: usize,
}

impl SamplingStats {
    pub fn rejection_rate(&self) -> f64 {
        if self.drawn == 0 {
            0.0
        } else {
            1.0 - self.accepted as f64 / self.drawn as f64
        }
    }

    fn merge(&mut self, other: SamplingStats) {
        self.drawn += other.drawn;
        self.accepted += other.accepted;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PincDataset {
    pub domain: DomainBox,
    pub init_points: Vec<InputPoint>,
    pub collocation: Vec<InputPoint>,
    pub validation: Vec<ValidationPoint>,
    pub stats: SamplingStats,
}

/// Settings for random exploration rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub envelope: ControlEnvelope,
    /// Number of 60 s control segments per rollout.
    pub segments: usize,
    pub margin: f64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self { envelope: ControlEnvelope::default(), segments: 50, margin: BOX_MARGIN }
    }
}

/// Settings for dataset sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub envelope: ControlEnvelope,
    /// Draws allowed for a single point before sampling is declared stalled.
    pub stall_window: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { envelope: ControlEnvelope::default(), stall_window: 10_000 }
    }
}

/// A rollout under a random piecewise-constant schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomRollout {
    pub schedule: ControlSchedule,
    /// Sampled every integration step.
    pub trajectory: Trajectory,
    /// Segment controls that were redrawn because the exact model failed.
    pub redraws: usize,
    /// `true` when no feasible control was found for some segment and the
    /// rollout stopped early.
    pub truncated: bool,
}

/// Maximum redraws for one segment before a rollout is cut short.
pub const MAX_SEGMENT_REDRAWS: usize = 50;

/// Random schedule of `segments` 60 s segments, each drawn uniformly from
/// `envelope`. A segment whose exact simulation fails is redrawn, so every
/// stored state is feasible.
pub fn feasible_random_rollout<R: Rng>(
    p: &WellParameters,
    x0: &WellState,
    segments: usize,
    envelope: &ControlEnvelope,
    rng: &mut R,
) -> Result<RandomRollout> {
    let mut controls = Vec::with_capacity(segments);
    let mut times = vec![0.0];
    let mut states = vec![*x0];
    let mut applied = Vec::new();
    let mut x = *x0;
    let mut redraws = 0;
    let mut truncated = false;
    for _ in 0..segments {
        let mut done = None;
        for _ in 0..=MAX_SEGMENT_REDRAWS {
            let u = envelope.sample(rng);
            if let Ok(seg) = simulate(p, &x, &ControlSchedule::constant(u), STEP_SECONDS, DEFAULT_H) {
                if seg.states.iter().all(|s| is_feasible(p, s, u)) {
                    done = Some((u, seg));
                    break;
                }
            }
            redraws += 1;
        }
        let Some((u, seg)) = done else {
            truncated = true;
            break;
        };
        let t0 = controls.len() as f64 * STEP_SECONDS;
        controls.push(u);
        applied.push(u);
        for (t, s) in seg.times.iter().zip(&seg.states).skip(1) {
            times.push(t0 + t);
            states.push(*s);
            applied.push(u);
        }
        applied.pop();
        x = *states.last().unwrap();
    }
    if controls.is_empty() {
        return Err(Error::InfeasibleState(format!("no feasible control segment from {x0:?}")));
    }
    applied.push(*controls.last().unwrap());
    let schedule = ControlSchedule::uniform(STEP_SECONDS, controls)?;
    let trajectory = Trajectory { times, states, controls: applied, algebraics: None };
    Ok(RandomRollout { schedule, trajectory, redraws, truncated })
}

/// Equilibrium for a random control in `envelope`, redrawing controls that
/// admit none.
pub fn random_steady_start<R: Rng>(
    p: &WellParameters,
    envelope: &ControlEnvelope,
    rng: &mut R,
) -> Result<(WellState, ControlInput)> {
    let mut last = None;
    for _ in 0..20 {
        let u = envelope.sample(rng);
        match steady_state(p, u) {
            Ok(x) => return Ok((x, u)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Config("empty envelope".into())))
}

/// Bounding box of the states visited by `n_rollouts` random rollouts.
pub fn explore_domain(p: &WellParameters, n_rollouts: usize, seed: u64) -> Result<DomainBox> {
    explore_domain_with(p, n_rollouts, seed, &ExploreConfig::default())
}

pub fn explore_domain_with(
    p: &WellParameters,
    n_rollouts: usize,
    seed: u64,
    cfg: &ExploreConfig,
) -> Result<DomainBox> {
    if n_rollouts == 0 {
        return Err(Error::Config("at least one exploration rollout is required".into()));
    }
    cfg.envelope.validate()?;
    let mut visited = Vec::new();
    for k in 0..n_rollouts {
        let mut rng = rng_stream(seed, STREAM_EXPLORE + k as u64);
        let (x0, _) = random_steady_start(p, &cfg.envelope, &mut rng)?;
        let roll = feasible_random_rollout(p, &x0, cfg.segments, &cfg.envelope, &mut rng)?;
        visited.extend(roll.trajectory.states);
    }
    DomainBox::enclosing(&visited, cfg.margin)
}

fn draw_point<R: Rng>(
    p: &WellParameters,
    domain: &DomainBox,
    cfg: &SampleConfig,
    rng: &mut R,
    stats: &mut SamplingStats,
    with_target: bool,
) -> Result<(WellState, ControlInput, Option<WellState>)> {
    for _ in 0..cfg.stall_window {
        stats.drawn += 1;
        let x = domain.sample_state(rng);
        let u = cfg.envelope.sample(rng);
        if !is_feasible(p, &x, u) {
            continue;
        }
        if with_target {
            match step_60s(p, &x, u) {
                Ok(target) => {
                    stats.accepted += 1;
                    return Ok((x, u, Some(target)));
                }
                Err(_) => continue,
            }
        }
        stats.accepted += 1;
        return Ok((x, u, None));
    }
    Err(Error::RejectionStall { accepted: stats.accepted, drawn: stats.drawn })
}

/// Uniform rejection sampling of initial-condition, collocation and
/// validation points.
pub fn sample_dataset(
    p: &WellParameters,
    domain: &DomainBox,
    n_t: usize,
    n_f: usize,
    n_val: usize,
    seed: u64,
) -> Result<PincDataset> {
    sample_dataset_with(p, domain, n_t, n_f, n_val, seed, &SampleConfig::default())
}

pub fn sample_dataset_with(
    p: &WellParameters,
    domain: &DomainBox,
    n_t: usize,
    n_f: usize,
    n_val: usize,
    seed: u64,
    cfg: &SampleConfig,
) -> Result<PincDataset> {
    if n_t == 0 || n_f == 0 || n_val == 0 {
        return Err(Error::Config("every split needs at least one point".into()));
    }
    domain.validate()?;
    cfg.envelope.validate()?;
    let mut stats = SamplingStats::default();
    let mut init_points = Vec::with_capacity(n_t);
    for i in 0..n_t {
        let mut rng = rng_stream(seed, STREAM_INIT + i as u64);
        let mut s = SamplingStats::default();
        let (x0, u, _) = draw_point(p, domain, cfg, &mut rng, &mut s, false)?;
        stats.merge(s);
        init_points.push(InputPoint { t: 0.0, x0, u });
    }
    let mut collocation = Vec::with_capacity(n_f);
    for i in 0..n_f {
        let mut rng = rng_stream(seed, STREAM_COLLOCATION + i as u64);
        let mut s = SamplingStats::default();
        let (x0, u, _) = draw_point(p, domain, cfg, &mut rng, &mut s, false)?;
        stats.merge(s);
        let t = domain.horizon * rng.gen::<f64>();
        collocation.push(InputPoint { t, x0, u });
    }
    let mut validation = Vec::with_capacity(n_val);
    for i in 0..n_val {
        let mut rng = rng_stream(seed, STREAM_VALIDATION + i as u64);
        let mut s = SamplingStats::default();
        let (x0, u, target) = draw_point(p, domain, cfg, &mut rng, &mut s, true)?;
        stats.merge(s);
        validation.push(ValidationPoint { x0, u, target: target.expect("requested") });
    }
    if stats.drawn > 0 && (stats.accepted as f64) < 1e-3 * stats.drawn as f64 {
        return Err(Error::RejectionStall { accepted: stats.accepted, drawn: stats.drawn });
    }
    Ok(PincDataset { domain: *domain, init_points, collocation, validation, stats })
}

const POINT_HEADER: [&str; 6] = ["t", "m_G_an", "m_G_tb", "m_L_tb", "u1", "u2"];
const VALIDATION_HEADER: [&str; 8] =
    ["m_G_an", "m_G_tb", "m_L_tb", "u1", "u2", "m_G_an_T", "m_G_tb_T", "m_L_tb_T"];

#[derive(Serialize, Deserialize)]
struct ScalerSidecar {
    domain: DomainBox,
    stats: SamplingStats,
}

fn point_row(p: &InputPoint) -> Vec<f64> {
    vec![p.t, p.x0.m_g_an, p.x0.m_g_tb, p.x0.m_l_tb, p.u.u1, p.u.u2]
}

fn read_points(path: &Path) -> Result<Vec<InputPoint>> {
    let (header, rows) = read_f64_csv(path)?;
    if header != POINT_HEADER {
        return Err(Error::Io(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(rows
        .into_iter()
        .map(|r| InputPoint {
            t: r[0],
            x0: WellState::new(r[1], r[2], r[3]),
            u: ControlInput::new(r[4], r[5]),
        })
        .collect())
}

impl PincDataset {
    pub fn scaler(&self) -> PincScaler {
        PincScaler::from_box(&self.domain)
    }

    /// Writes `init.csv`, `collocation.csv`, `validation.csv` and the
    /// `scaler.toml` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic_str(&dir.join("init.csv"), &f64_csv(&POINT_HEADER, self.init_points.iter().map(point_row))?)?;
        write_atomic_str(
            &dir.join("collocation.csv"),
            &f64_csv(&POINT_HEADER, self.collocation.iter().map(point_row))?,
        )?;
        let val_rows = self.validation.iter().map(|v| {
            let mut r = v.x0.to_array().to_vec();
            r.extend(v.u.to_array());
            r.extend(v.target.to_array());
            r
        });
        write_atomic_str(&dir.join("validation.csv"), &f64_csv(&VALIDATION_HEADER, val_rows)?)?;
        let side = ScalerSidecar { domain: self.domain, stats: self.stats };
        write_atomic_str(
            &dir.join("scaler.toml"),
            &toml::to_string(&side).map_err(|e| Error::Io(e.to_string()))?,
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let side: ScalerSidecar = toml::from_str(&read_to_string(&dir.join("scaler.toml"))?)
            .map_err(|e| Error::Config(e.to_string()))?;
        side.domain.validate()?;
        let init_points = read_points(&dir.join("init.csv"))?;
        let collocation = read_points(&dir.join("collocation.csv"))?;
        let (header, rows) = read_f64_csv(&dir.join("validation.csv"))?;
        if header != VALIDATION_HEADER {
            return Err(Error::Io(format!("validation.csv: unexpected header {header:?}")));
        }
        let validation = rows
            .into_iter()
            .map(|r| ValidationPoint {
                x0: WellState::new(r[0], r[1], r[2]),
                u: ControlInput::new(r[3], r[4]),
                target: WellState::new(r[5], r[6], r[7]),
            })
            .collect();
        Ok(Self { domain: side.domain, init_points, collocation, validation, stats: side.stats })
    }
}
