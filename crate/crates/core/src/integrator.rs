//! Fixed-step RK4 simulation of the exact well model.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::well::{
    compute_algebraics, ode_rhs, AlgebraicRecord, ControlInput, Mode, WellParameters, WellState,
};

/// Sampling period of the one-step map (s).
pub const STEP_SECONDS: f64 = 60.0;
/// Internal integration step of [`step_60s`] (s).
pub const DEFAULT_H: f64 = 1.0;

/// Classical four-stage Runge-Kutta update on the exact right-hand side.
pub fn rk4_step(p: &WellParameters, x: &WellState, u: ControlInput, h: f64) -> Result<WellState> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let x0 = x.to_array();
    let at = |k: &[f64; 3], s: f64| {
        WellState::from_array([x0[0] + s * k[0], x0[1] + s * k[1], x0[2] + s * k[2]])
    };
    let k1 = ode_rhs(p, x, u, Mode::Exact)?;
    let k2 = ode_rhs(p, &at(&k1, 0.5 * h), u, Mode::Exact)?;
    let k3 = ode_rhs(p, &at(&k2, 0.5 * h), u, Mode::Exact)?;
    let k4 = ode_rhs(p, &at(&k3, h), u, Mode::Exact)?;
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let next = WellState::from_array(out);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::InfeasibleState(format!("non-finite RK4 update {out:?}")))
    }
}

/// Piecewise-constant control signal: `controls[i]` holds from
/// `switch_times[i]` until the next switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    switch_times: Vec<f64>,
    controls: Vec<ControlInput>,
}

impl ControlSchedule {
    pub fn new(switch_times: Vec<f64>, controls: Vec<ControlInput>) -> Result<Self> {
        if switch_times.is_empty() || switch_times.len() != controls.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} switch times for {} controls",
                switch_times.len(),
                controls.len()
            )));
        }
        if switch_times[0] != 0.0 {
            return Err(Error::Config("control schedule must start at t = 0".into()));
        }
        if switch_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("switch times must be strictly increasing".into()));
        }
        for u in &controls {
            u.validate()?;
        }
        Ok(Self { switch_times, controls })
    }

    pub fn constant(u: ControlInput) -> Self {
        Self { switch_times: vec![0.0], controls: vec![u] }
    }

    /// One control per segment of length `period`.
    pub fn uniform(period: f64, controls: Vec<ControlInput>) -> Result<Self> {
        let times = (0..controls.len()).map(|i| i as f64 * period).collect();
        Self::new(times, controls)
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn controls(&self) -> &[ControlInput] {
        &self.controls
    }

    pub fn control_at(&self, t: f64) -> ControlInput {
        let idx = self.switch_times.partition_point(|&s| s <= t);
        self.controls[idx.saturating_sub(1)]
    }
}

/// Sampled rollout of the exact model.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<WellState>,
    /// Control in force from each sample time onwards.
    pub controls: Vec<ControlInput>,
    pub algebraics: Option<Vec<AlgebraicRecord>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> WellState {
        *self.states.last().expect("trajectory has at least one sample")
    }

    /// Fills `algebraics` with exact-mode records at every sample.
    pub fn with_algebraics(mut self, p: &WellParameters) -> Result<Self> {
        let recs = self
            .states
            .iter()
            .zip(&self.controls)
            .zip(&self.times)
            .map(|((x, u), &t)| {
                compute_algebraics(p, x, *u, Mode::Exact)
                    .map_err(|e| Error::InfeasibleAt { time: t, reason: e.to_string() })
            })
            .collect::<Result<Vec<_>>>()?;
        self.algebraics = Some(recs);
        Ok(self)
    }

    /// Writes `t, m_G_an, m_G_tb, m_L_tb, u1, u2` plus every algebraic
    /// variable when present.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["t", "m_G_an", "m_G_tb", "m_L_tb", "u1", "u2"].iter().map(|s| s.to_string()).collect();
        if let Some(recs) = &self.algebraics {
            if let Some(r) = recs.first() {
                header.extend(r.fields().iter().map(|(n, _)| n.to_string()));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let x = self.states[i];
            let u = self.controls[i];
            let mut row = vec![self.times[i], x.m_g_an, x.m_g_tb, x.m_l_tb, u.u1, u.u2];
            if let Some(recs) = &self.algebraics {
                row.extend(recs[i].fields().iter().map(|(_, v)| *v));
            }
            w.write_record(row.iter().map(|v| format_f64(*v))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Shortest representation that parses back to the same value.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Rollout sampled at every integration step.
pub fn simulate(
    p: &WellParameters,
    x0: &WellState,
    schedule: &ControlSchedule,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    simulate_sampled(p, x0, schedule, t_end, h, h)
}

fn steps_in(span: f64, h: f64, what: &str) -> Result<usize> {
    let n = (span / h).round();
    if n < 0.0 || (n * h - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::Config(format!("{what} {span} is not a multiple of the step {h}")));
    }
    Ok(n as usize)
}

/// Rollout integrated with step `h` and recorded every `sample_dt`
/// seconds (`sample_dt` must be a multiple of `h`). Control switches must
/// fall on integration steps.
pub fn simulate_sampled(
    p: &WellParameters,
    x0: &WellState,
    schedule: &ControlSchedule,
    t_end: f64,
    h: f64,
    sample_dt: f64,
) -> Result<Trajectory> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Config(format!("invalid horizon t_end = {t_end}, h = {h}")));
    }
    let n_steps = steps_in(t_end, h, "horizon")?;
    let every = steps_in(sample_dt, h, "sampling interval")?.max(1);
    if n_steps % every != 0 {
        return Err(Error::Config(format!(
            "horizon {t_end} is not a multiple of the sampling interval {sample_dt}"
        )));
    }
    for &s in schedule.switch_times() {
        if s < t_end {
            steps_in(s, h, "control switch time")?;
        }
    }
    compute_algebraics(p, x0, schedule.control_at(0.0), Mode::Exact)
        .map_err(|e| Error::InfeasibleAt { time: 0.0, reason: e.to_string() })?;

    let cap = n_steps / every + 1;
    let mut traj = Trajectory {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        controls: Vec::with_capacity(cap),
        algebraics: None,
    };
    let mut x = *x0;
    traj.times.push(0.0);
    traj.states.push(x);
    traj.controls.push(schedule.control_at(0.0));
    for k in 0..n_steps {
        let t = k as f64 * h;
        let u = schedule.control_at(t);
        x = rk4_step(p, &x, u, h)
            .map_err(|e| Error::InfeasibleAt { time: t, reason: e.to_string() })?;
        if (k + 1) % every == 0 {
            let t_next = (k + 1) as f64 * h;
            traj.times.push(t_next);
            traj.states.push(x);
            traj.controls.push(schedule.control_at(t_next));
        }
    }
    Ok(traj)
}

/// Ground-truth one-step map: 60 s of constant control, `h = 1 s`.
pub fn step_60s(p: &WellParameters, x: &WellState, u: ControlInput) -> Result<WellState> {
    step_with(p, x, u, STEP_SECONDS, DEFAULT_H)
}

/// Endpoint of a constant-control rollout without storing samples.
pub fn step_with(
    p: &WellParameters,
    x: &WellState,
    u: ControlInput,
    duration: f64,
    h: f64,
) -> Result<WellState> {
    u.validate()?;
    let n = steps_in(duration, h, "duration")?;
    let mut state = *x;
    for k in 0..n {
        state = rk4_step(p, &state, u, h)
            .map_err(|e| Error::InfeasibleAt { time: k as f64 * h, reason: e.to_string() })?;
    }
    Ok(state)
}
