use super::model::{is_feasible, ode_rhs, ControlInput, Mode, WellState};
use super::params::WellParameters;
use crate::error::{Error, Result};
use crate::integrator::step_with;

const TOLERANCE: f64 = 1e-8;
const MAX_NEWTON: usize = 60;
const ROLLOUT_SECONDS: f64 = 20_000.0;
const MAX_SEEDS: usize = 64;

fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Candidate initial states spread over physically sensible pressures and
/// liquid fractions, most balanced first.
fn seed_candidates(p: &WellParameters, u: ControlInput) -> Vec<WellState> {
    let below = p.liquid_below_injection();
    let gas_an_full = p.p_gs * p.m_g * p.v_an / (p.r * p.t_an);
    let mut out = Vec::new();
    for i in 0..8 {
        let m_g_an = gas_an_full * (0.55 + 0.06 * i as f64);
        for j in 0..8 {
            let alpha = 0.15 + 0.1 * j as f64;
            let m_l_tb = below + alpha * p.rho_l * p.v_tb;
            let gas_vol = p.v_tb + p.s_bh * p.l_bh - m_l_tb / p.rho_l;
            for k in 0..8 {
                let pressure = p.p_out + (p.p_gs - p.p_out) * (0.05 + 0.1 * k as f64);
                let m_g_tb = pressure * p.m_g / (p.r * p.t_tb) * gas_vol;
                let x = WellState::new(m_g_an, m_g_tb, m_l_tb);
                if is_feasible(p, &x, u) {
                    out.push(x);
                }
            }
        }
    }
    let score = |x: &WellState| {
        ode_rhs(p, x, u, Mode::Exact).map(|f| norm(&f)).unwrap_or(f64::INFINITY)
    };
    out.sort_by(|a, b| score(a).total_cmp(&score(b)));
    out
}

/// Equilibrium of the exact model under constant `u`.
pub fn steady_state(p: &WellParameters, u: ControlInput) -> Result<WellState> {
    u.validate()?;
    let mut last = Error::NoConvergence { iterations: 0, residual: f64::INFINITY };
    for seed in seed_candidates(p, u).into_iter().take(MAX_SEEDS) {
        match steady_state_from(p, u, &seed) {
            Ok(x) => return Ok(x),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Equilibrium reached from `x0`: a long RK4 rollout followed by damped
/// Newton iterations with a central-difference Jacobian.
///
/// Lightly damped wells can oscillate out of the feasible region when
/// started far from equilibrium; in that case Newton runs first and the
/// rollout then confirms that the point found attracts nearby states.
pub fn steady_state_from(p: &WellParameters, u: ControlInput, x0: &WellState) -> Result<WellState> {
    u.validate()?;
    match step_with(p, x0, u, ROLLOUT_SECONDS, 1.0) {
        Ok(settled) => newton(p, u, settled),
        Err(rollout_err) => {
            let guess = newton(p, u, *x0).map_err(|_| rollout_err)?;
            let settled = step_with(p, &guess, u, ROLLOUT_SECONDS, 1.0)?;
            newton(p, u, settled)
        }
    }
}

fn newton(p: &WellParameters, u: ControlInput, mut x: WellState) -> Result<WellState> {
    let mut f = ode_rhs(p, &x, u, Mode::Exact)?;
    let mut res = norm(&f);
    for _ in 0..MAX_NEWTON {
        if res < TOLERANCE {
            return Ok(x);
        }
        let jac = fd_jacobian(p, &x, u)?;
        let step = solve3(jac, [-f[0], -f[1], -f[2]])
            .ok_or_else(|| Error::NoConvergence { iterations: 0, residual: res })?;
        let xa = x.to_array();
        let mut damping = 1.0;
        let mut accepted = false;
        while damping > 1e-6 {
            let trial = WellState::from_array([
                xa[0] + damping * step[0],
                xa[1] + damping * step[1],
                xa[2] + damping * step[2],
            ]);
            if let Ok(ft) = ode_rhs(p, &trial, u, Mode::Exact) {
                let rt = norm(&ft);
                if rt < res {
                    x = trial;
                    f = ft;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < TOLERANCE {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: MAX_NEWTON, residual: res })
    }
}

fn fd_jacobian(p: &WellParameters, x: &WellState, u: ControlInput) -> Result<[[f64; 3]; 3]> {
    let xa = x.to_array();
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let h = 1e-6 * xa[j].abs().max(1.0);
        let mut plus = xa;
        plus[j] += h;
        let mut minus = xa;
        minus[j] -= h;
        let fp = ode_rhs(p, &WellState::from_array(plus), u, Mode::Exact)?;
        let fm = ode_rhs(p, &WellState::from_array(minus), u, Mode::Exact)?;
        for i in 0..3 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
    let x = m.lu().solve(&nalgebra::Vector3::from(b))?;
    x.iter().all(|v| v.is_finite()).then(|| [x[0], x[1], x[2]])
}
