//! Algebraic relations and right-hand side of the three-state well model.

use serde::{Deserialize, Serialize};

use super::params::{colebrook_haaland, WellParameters};
use super::scalar::{Dual, Scalar};
use crate::error::{Error, Result};

/// Lower clamp used by the safeguarded square root and by the density and
/// volume floors of the safeguarded model.
pub const SQRT_FLOOR: f64 = 1e-3;

/// Masses of gas in the annulus, gas in the tubing and liquid in the
/// tubing (kg).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellState {
    pub m_g_an: f64,
    pub m_g_tb: f64,
    pub m_l_tb: f64,
}

impl WellState {
    pub const fn new(m_g_an: f64, m_g_tb: f64, m_l_tb: f64) -> Self {
        Self { m_g_an, m_g_tb, m_l_tb }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.m_g_an, self.m_g_tb, self.m_l_tb]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Production-choke opening `u1` and gas-lift-choke opening `u2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub u1: f64,
    pub u2: f64,
}

impl ControlInput {
    pub const fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.u1, self.u2]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if ok(self.u1) && ok(self.u2) {
            Ok(())
        } else {
            Err(Error::InvalidControl { u1: self.u1, u2: self.u2 })
        }
    }

    pub fn clamped(self) -> Self {
        Self::new(self.u1.clamp(0.0, 1.0), self.u2.clamp(0.0, 1.0))
    }
}

/// `Exact` evaluates the model as written and fails on undefined
/// operations; `Safeguarded` swaps in the clamped friction polynomial, the
/// floored square root and density floors so it is finite everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Exact,
    Safeguarded,
}

/// Every intermediate quantity of the model, in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlgebraicRecord<S = f64> {
    pub w_g_in: S,
    pub w_g_inj: S,
    pub w_res: S,
    pub w_l_res: S,
    pub w_g_res: S,
    pub w_out: S,
    pub w_l_out: S,
    pub w_g_out: S,
    pub p_an_t: S,
    pub p_an_b: S,
    pub p_tb_t: S,
    pub p_tb_b: S,
    pub p_bh: S,
    pub rho_g_an_b: S,
    pub rho_g_in: S,
    pub rho_g_tb_t: S,
    pub rho_mix_bar: S,
    pub rho_g_tb_b: S,
    pub rho_mix_tb_t: S,
    pub alpha_l_tb_bar: S,
    pub alpha_m_g_bh: S,
    pub alpha_l_tb_b: S,
    pub alpha_l_tb_t: S,
    pub alpha_m_g_tb_t: S,
    pub u_l_tb: S,
    pub u_g_tb: S,
    pub u_mix_tb: S,
    pub u_l_bh: S,
    pub re_tb: S,
    pub re_bh: S,
    pub lambda_tb: S,
    pub lambda_bh: S,
    pub f_tb: S,
    pub f_bh: S,
}

impl<S: Scalar> AlgebraicRecord<S> {
    /// Time derivative of the state, `(dm_G_an, dm_G_tb, dm_L_tb)`.
    pub fn rhs(&self) -> [S; 3] {
        [
            self.w_g_in - self.w_g_inj,
            self.w_g_inj + self.w_g_res - self.w_g_out,
            self.w_l_res - self.w_l_out,
        ]
    }
}

impl AlgebraicRecord<f64> {
    /// Named fields in declaration order, for export and cross-checks.
    pub fn fields(&self) -> [(&'static str, f64); 34] {
        [
            ("w_G_in", self.w_g_in),
            ("w_G_inj", self.w_g_inj),
            ("w_res", self.w_res),
            ("w_L_res", self.w_l_res),
            ("w_G_res", self.w_g_res),
            ("w_out", self.w_out),
            ("w_L_out", self.w_l_out),
            ("w_G_out", self.w_g_out),
            ("P_an_t", self.p_an_t),
            ("P_an_b", self.p_an_b),
            ("P_tb_t", self.p_tb_t),
            ("P_tb_b", self.p_tb_b),
            ("P_bh", self.p_bh),
            ("rho_G_an_b", self.rho_g_an_b),
            ("rho_G_in", self.rho_g_in),
            ("rho_G_tb_t", self.rho_g_tb_t),
            ("rho_mix_bar", self.rho_mix_bar),
            ("rho_G_tb_b", self.rho_g_tb_b),
            ("rho_mix_tb_t", self.rho_mix_tb_t),
            ("alpha_L_tb_bar", self.alpha_l_tb_bar),
            ("alpha_m_G_bh", self.alpha_m_g_bh),
            ("alpha_L_tb_b", self.alpha_l_tb_b),
            ("alpha_L_tb_t", self.alpha_l_tb_t),
            ("alpha_m_G_tb_t", self.alpha_m_g_tb_t),
            ("U_L_tb", self.u_l_tb),
            ("U_G_tb", self.u_g_tb),
            ("U_mix_tb", self.u_mix_tb),
            ("U_L_bh", self.u_l_bh),
            ("Re_tb", self.re_tb),
            ("Re_bh", self.re_bh),
            ("lambda_tb", self.lambda_tb),
            ("lambda_bh", self.lambda_bh),
            ("F_tb", self.f_tb),
            ("F_bh", self.f_bh),
        ]
    }
}

/// `sqrt(max(x, 1e-3))`.
pub fn safeguarded_sqrt<S: Scalar>(x: S) -> S {
    x.max_c(SQRT_FLOOR).sqrt()
}

fn infeasible(what: &str, v: f64) -> Error {
    Error::InfeasibleState(format!("{what} = {v:e}"))
}

fn checked_sqrt<S: Scalar>(x: S, mode: Mode, what: &str) -> Result<S> {
    match mode {
        Mode::Safeguarded => Ok(safeguarded_sqrt(x)),
        Mode::Exact => {
            let v = x.value();
            if v < 0.0 || !v.is_finite() {
                Err(infeasible(&format!("square-root argument of {what}"), v))
            } else {
                Ok(x.sqrt())
            }
        }
    }
}

/// Exact mode: strictly positive or error. Safeguarded mode: floored.
fn positive<S: Scalar>(x: S, mode: Mode, what: &str) -> Result<S> {
    match mode {
        Mode::Safeguarded => Ok(x.max_c(SQRT_FLOOR)),
        Mode::Exact => {
            let v = x.value();
            if v > 0.0 && v.is_finite() {
                Ok(x)
            } else {
                Err(infeasible(what, v))
            }
        }
    }
}

/// Tubing friction factor as a function of the tubing Reynolds number.
pub fn friction_lambda_tb<S: Scalar>(p: &WellParameters, re_tb: S, mode: Mode) -> Result<S> {
    match mode {
        Mode::Safeguarded => {
            let fp = &p.friction_poly;
            let re = re_tb.clamp_c(fp.re_min, fp.re_max);
            Ok(((re * fp.a + fp.b) * re + fp.c) * re + fp.d)
        }
        Mode::Exact => {
            let rough = ((p.eps / p.d_tb) / 3.7).powf(1.11);
            let arg = S::cst(6.9) / re_tb + rough;
            if !(arg.value() > 0.0) {
                return Err(infeasible("friction log argument", arg.value()));
            }
            let inv_sqrt = arg.log10() * -1.8;
            if !(inv_sqrt.value() > 0.0) {
                return Err(infeasible("1/sqrt(lambda_tb)", inv_sqrt.value()));
            }
            Ok(S::cst(1.0) / (inv_sqrt * inv_sqrt))
        }
    }
}

/// Evaluates every algebraic variable for state `x` and control `u`.
pub fn compute_algebraics_generic<S: Scalar>(
    p: &WellParameters,
    x: [S; 3],
    u: ControlInput,
    mode: Mode,
) -> Result<AlgebraicRecord<S>> {
    u.validate()?;
    let [m_g_an, m_g_tb, m_l_tb] = x;
    if mode == Mode::Exact {
        for (name, v) in [("m_G_an", m_g_an), ("m_G_tb", m_g_tb), ("m_L_tb", m_l_tb)] {
            if !(v.value() >= 0.0) {
                return Err(infeasible(name, v.value()));
            }
        }
    }
    let c = S::cst;
    let pi = std::f64::consts::PI;
    let rt_m = p.r / p.m_g;
    let below = p.liquid_below_injection();

    // Densities that depend on the state only.
    let gas_volume = positive(
        -(m_l_tb / p.rho_l) + (p.v_tb + p.s_bh * p.l_bh),
        mode,
        "tubing gas volume",
    )?;
    let rho_g_tb_t = positive(m_g_tb / gas_volume, mode, "rho_G_tb_t")?;
    let rho_mix_bar = (m_g_tb + m_l_tb - below) / p.v_tb;
    let alpha_l_tb_bar = (m_l_tb - below) / (p.v_tb * p.rho_l);
    let alpha_m_g_bh = p.alpha_m_g_bh();
    let rho_g_in = p.p_gs * p.m_g / (p.r * p.t_an);

    // Annulus pressures and bottom density.
    let p_an_t = m_g_an * (p.r * p.t_an / (p.m_g * p.v_an));
    let p_an_b = p_an_t + m_g_an * (p.g * p.l_an / p.v_an);
    let rho_g_an_b = p_an_b * (p.m_g / (p.r * p.t_an));

    // Tubing top.
    let p_tb_t = rho_g_tb_t * (rt_m * p.t_tb);

    // Gas-lift choke: the upstream pressure of the annulus inflow is read
    // as the annulus-top pressure.
    let w_g_in = checked_sqrt((-p_an_t + p.p_gs).max_c(0.0) * rho_g_in, mode, "w_G_in")?
        * (p.k_gs * u.u2);

    // Velocities.
    let area_tb = pi * p.d_tb * p.d_tb;
    let u_l_tb = 4.0 * (1.0 - alpha_m_g_bh) * p.w_res_bar / (p.rho_l * area_tb);
    let u_g_tb = (w_g_in + alpha_m_g_bh * p.w_res_bar) * 4.0 / (rho_g_tb_t * area_tb);
    let u_mix_tb = u_g_tb + u_l_tb;
    let u_l_bh = p.u_l_bh();

    // Tubing friction.
    let re_tb = rho_mix_bar * u_mix_tb * (p.d_tb / p.mu);
    let lambda_tb = friction_lambda_tb(p, re_tb, mode)?;
    let f_tb = alpha_l_tb_bar * lambda_tb * rho_mix_bar * u_mix_tb * u_mix_tb
        * (p.l_tb / (2.0 * p.d_tb));
    let p_tb_b = p_tb_t + rho_mix_bar * (p.g * p.l_tb) + f_tb;

    // Bottom hole (friction terms are constant per well).
    let re_bh = p.re_bh();
    let d_bh = p.d_bh();
    let lambda_bh = colebrook_haaland(p.eps, d_bh, re_bh)
        .ok_or_else(|| Error::Config("bottom-hole friction factor undefined".into()))?;
    let f_bh = lambda_bh * p.rho_l * u_l_bh * u_l_bh * p.l_bh / (2.0 * d_bh);
    let p_bh = p_tb_b + (f_bh + p.rho_l * p.g * p.l_bh);
    let rho_g_tb_b = p_tb_b * (p.m_g / (p.r * p.t_tb));
    let rho_g_tb_b = match mode {
        Mode::Safeguarded => rho_g_tb_b.max_c(SQRT_FLOOR),
        Mode::Exact => rho_g_tb_b,
    };

    // Flows.
    let w_g_inj = checked_sqrt((p_an_b - p_tb_b).max_c(0.0) * rho_g_an_b, mode, "w_G_inj")?
        * p.k_inj;
    let w_res = (-p_bh + p.p_res).max_c(0.0) * p.pi;
    let w_l_res = w_res * (1.0 - alpha_m_g_bh);
    let w_g_res = w_res * alpha_m_g_bh;

    let liquid_in = w_l_res * rho_g_tb_b;
    let denom = positive(
        liquid_in + (w_g_inj + w_g_res) * p.rho_l,
        mode,
        "alpha_L_tb_b denominator",
    )?;
    let alpha_l_tb_b = liquid_in / denom;
    let alpha_l_tb_t = alpha_l_tb_bar * 2.0 - alpha_l_tb_b;
    let alpha_l_tb_t = match mode {
        Mode::Safeguarded => alpha_l_tb_t.clamp_c(0.0, 1.0),
        Mode::Exact => alpha_l_tb_t,
    };
    let gas_top = (c(1.0) - alpha_l_tb_t) * rho_g_tb_t;
    let rho_mix_tb_t = positive(alpha_l_tb_t * p.rho_l + gas_top, mode, "rho_mix_tb_t")?;
    let alpha_m_g_tb_t = gas_top / rho_mix_tb_t;
    let w_out = checked_sqrt((p_tb_t - p.p_out).max_c(0.0) * rho_mix_tb_t, mode, "w_out")?
        * (p.k_pr * u.u1);
    let w_l_out = (c(1.0) - alpha_m_g_tb_t) * w_out;
    let w_g_out = alpha_m_g_tb_t * w_out;

    Ok(AlgebraicRecord {
        w_g_in,
        w_g_inj,
        w_res,
        w_l_res,
        w_g_res,
        w_out,
        w_l_out,
        w_g_out,
        p_an_t,
        p_an_b,
        p_tb_t,
        p_tb_b,
        p_bh,
        rho_g_an_b,
        rho_g_in: c(rho_g_in),
        rho_g_tb_t,
        rho_mix_bar,
        rho_g_tb_b,
        rho_mix_tb_t,
        alpha_l_tb_bar,
        alpha_m_g_bh: c(alpha_m_g_bh),
        alpha_l_tb_b,
        alpha_l_tb_t,
        alpha_m_g_tb_t,
        u_l_tb: c(u_l_tb),
        u_g_tb,
        u_mix_tb,
        u_l_bh: c(u_l_bh),
        re_tb,
        re_bh: c(re_bh),
        lambda_tb,
        lambda_bh: c(lambda_bh),
        f_tb,
        f_bh: c(f_bh),
    })
}

pub fn compute_algebraics(
    p: &WellParameters,
    x: &WellState,
    u: ControlInput,
    mode: Mode,
) -> Result<AlgebraicRecord> {
    compute_algebraics_generic(p, x.to_array(), u, mode)
}

/// Right-hand side of the state equations (kg/s).
pub fn ode_rhs(p: &WellParameters, x: &WellState, u: ControlInput, mode: Mode) -> Result<[f64; 3]> {
    let rec = compute_algebraics(p, x, u, mode)?;
    let d = rec.rhs();
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(Error::InfeasibleState(format!("non-finite right-hand side {d:?}")))
    }
}

/// Right-hand side and its exact Jacobian with respect to the state.
pub fn ode_rhs_jacobian(
    p: &WellParameters,
    x: &WellState,
    u: ControlInput,
    mode: Mode,
) -> Result<([f64; 3], [[f64; 3]; 3])> {
    let a = x.to_array();
    let xd = [Dual::<3>::var(a[0], 0), Dual::var(a[1], 1), Dual::var(a[2], 2)];
    let rec = compute_algebraics_generic(p, xd, u, mode)?;
    let r = rec.rhs();
    Ok(([r[0].v, r[1].v, r[2].v], [r[0].d, r[1].d, r[2].d]))
}

/// `true` when the exact model is defined at `(x, u)` and the liquid
/// fractions lie in `[0, 1]`.
pub fn is_feasible(p: &WellParameters, x: &WellState, u: ControlInput) -> bool {
    match compute_algebraics(p, x, u, Mode::Exact) {
        Ok(r) => {
            let frac = |v: f64| (0.0..=1.0).contains(&v);
            r.rho_mix_bar > 0.0
                && frac(r.alpha_l_tb_bar)
                && frac(r.alpha_l_tb_b)
                && frac(r.alpha_l_tb_t)
                && r.rhs().iter().all(|v| v.is_finite())
        }
        Err(_) => false,
    }
}
