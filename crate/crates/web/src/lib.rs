//! Browser bindings: step responses, a steady-state pressure map and the
//! tubing friction curve. Each binding returns a JSON string; the plain
//! functions underneath are ordinary Rust and tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pinc::error::{Error, Result};
use pinc::integrator::{simulate_sampled, ControlSchedule, DEFAULT_H};
use pinc::well::{compute_algebraics, friction_lambda_tb, steady_state, ControlInput, Mode, WellParameters, BAR};

#[derive(Debug, Serialize)]
pub struct StepResponse {
    pub t_min: Vec<f64>,
    pub p_bh_bar: Vec<f64>,
    pub w_out: Vec<f64>,
    pub m_g_an: Vec<f64>,
    pub m_g_tb: Vec<f64>,
    pub m_l_tb: Vec<f64>,
}

/// Starts at the equilibrium of `from` and applies `to` for `minutes`.
pub fn step_response(well: u8, from: [f64; 2], to: [f64; 2], minutes: f64) -> Result<StepResponse> {
    let p = WellParameters::well(well)?;
    let x0 = steady_state(&p, ControlInput::from_array(from))?;
    let schedule = ControlSchedule::constant(ControlInput::from_array(to));
    let traj = simulate_sampled(&p, &x0, &schedule, minutes * 60.0, DEFAULT_H, 60.0)?.with_algebraics(&p)?;
    let alg = traj.algebraics.as_deref().unwrap_or_default();
    Ok(StepResponse {
        t_min: traj.times.iter().map(|t| t / 60.0).collect(),
        p_bh_bar: alg.iter().map(|a| a.p_bh / BAR).collect(),
        w_out: alg.iter().map(|a| a.w_out).collect(),
        m_g_an: traj.states.iter().map(|x| x.m_g_an).collect(),
        m_g_tb: traj.states.iter().map(|x| x.m_g_tb).collect(),
        m_l_tb: traj.states.iter().map(|x| x.m_l_tb).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct PressureMap {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// Row-major over `u2` then `u1`; `null` where no equilibrium was found.
    pub p_bh_bar: Vec<Option<f64>>,
}

/// Equilibrium bottom-hole pressure on an `n1 x n2` grid of the input box.
pub fn pressure_map(well: u8, u1: [f64; 2], u2: [f64; 2], n1: usize, n2: usize) -> Result<PressureMap> {
    if n1 < 2 || n2 < 2 || n1 * n2 > 10_000 {
        return Err(Error::Config(format!("grid {n1} x {n2} must be at least 2 x 2 and at most 10000 points")));
    }
    let p = WellParameters::well(well)?;
    let axis = |[lo, hi]: [f64; 2], n: usize| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let (a1, a2) = (axis(u1, n1), axis(u2, n2));
    let mut p_bh = Vec::with_capacity(n1 * n2);
    for &v2 in &a2 {
        for &v1 in &a1 {
            let u = ControlInput::new(v1, v2);
            u.validate()?;
            let value = steady_state(&p, u)
                .and_then(|x| compute_algebraics(&p, &x, u, Mode::Exact))
                .map(|a| a.p_bh / BAR)
                .ok();
            p_bh.push(value);
        }
    }
    Ok(PressureMap { u1: a1, u2: a2, p_bh_bar: p_bh })
}

#[derive(Debug, Serialize)]
pub struct FrictionCurve {
    pub re: Vec<f64>,
    pub exact: Vec<f64>,
    pub polynomial: Vec<f64>,
}

/// Exact and polynomial tubing friction factors on a log-spaced
/// Reynolds-number grid.
pub fn friction_curve(well: u8, re_lo: f64, re_hi: f64, n: usize) -> Result<FrictionCurve> {
    if !(re_lo > 0.0 && re_hi > re_lo) || n < 2 || n > 100_000 {
        return Err(Error::Config("need 0 < re_lo < re_hi and 2 <= n <= 100000".into()));
    }
    let p = WellParameters::well(well)?;
    let (a, b) = (re_lo.ln(), re_hi.ln());
    let re: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    let exact = re.iter().map(|&r| friction_lambda_tb(&p, r, Mode::Exact)).collect::<Result<_>>()?;
    let polynomial = re.iter().map(|&r| friction_lambda_tb(&p, r, Mode::Safeguarded)).collect::<Result<_>>()?;
    Ok(FrictionCurve { re, exact, polynomial })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = stepResponse)]
pub fn step_response_js(
    well: u8,
    u1_from: f64,
    u2_from: f64,
    u1_to: f64,
    u2_to: f64,
    minutes: f64,
) -> std::result::Result<String, JsError> {
    to_js(step_response(well, [u1_from, u2_from], [u1_to, u2_to], minutes))
}

#[wasm_bindgen(js_name = pressureMap)]
pub fn pressure_map_js(
    well: u8,
    u1_lo: f64,
    u1_hi: f64,
    u2_lo: f64,
    u2_hi: f64,
    n: usize,
) -> std::result::Result<String, JsError> {
    to_js(pressure_map(well, [u1_lo, u1_hi], [u2_lo, u2_hi], n, n))
}

#[wasm_bindgen(js_name = frictionCurve)]
pub fn friction_curve_js(well: u8, re_lo: f64, re_hi: f64, n: usize) -> std::result::Result<String, JsError> {
    to_js(friction_curve(well, re_lo, re_hi, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holding_the_input_stays_at_equilibrium() {
        let r = step_response(1, [0.5, 0.7], [0.5, 0.7], 10.0).unwrap();
        assert_eq!(r.t_min.len(), 11);
        let first = r.p_bh_bar[0];
        assert!(r.p_bh_bar.iter().all(|p| (p - first).abs() < 1e-6));
    }

    #[test]
    fn more_lift_gas_lowers_bottom_hole_pressure() {
        let r = step_response(1, [0.5, 0.7], [0.5, 0.8], 60.0).unwrap();
        assert!(r.p_bh_bar.last().unwrap() < &r.p_bh_bar[0]);
    }

    #[test]
    fn pressure_map_decreases_along_the_lift_gas_axis() {
        let m = pressure_map(1, [0.4, 0.4], [0.6, 1.0], 2, 3).unwrap();
        assert_eq!(m.p_bh_bar.len(), 6);
        let col: Vec<f64> = m.p_bh_bar.iter().step_by(2).map(|v| v.unwrap()).collect();
        assert!(col.windows(2).all(|w| w[1] < w[0]), "{col:?}");
    }

    #[test]
    fn polynomial_tracks_the_exact_friction_factor_inside_its_range() {
        let p = WellParameters::well(1).unwrap();
        let fp = p.friction_poly;
        let c = friction_curve(1, fp.re_min, fp.re_max, 50).unwrap();
        for (e, q) in c.exact.iter().zip(&c.polynomial) {
            assert!((e - q).abs() / e < 0.05, "{e} vs {q}");
        }
    }

    #[test]
    fn page_default_step_is_feasible() {
        let r = step_response(1, [0.5, 0.6], [0.6, 0.7], 120.0).unwrap();
        assert_eq!(r.p_bh_bar.len(), 121);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(pressure_map(1, [0.2, 1.0], [0.6, 1.0], 1, 5).is_err());
        assert!(friction_curve(1, 10.0, 5.0, 10).is_err());
        assert!(step_response(7, [0.5, 0.5], [0.5, 0.5], 1.0).is_err());
    }
}
