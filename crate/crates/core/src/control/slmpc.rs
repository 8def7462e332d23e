//! Successive-linearisation MPC: a condensed quadratic program built from
//! an Euler-discretised linearisation of the exact model.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, RowVector2, RowVector3, Vector3};

use super::{qp::solve_box_lsq, MpcConfig, MpcSolution, SolveStatus};
use crate::error::{Error, Result};
use crate::well::{compute_algebraics, ode_rhs, ControlInput, Mode, WellParameters, WellState, BAR};

/// `x_{j+1} - x_k ~ (I + A)(x_j - x_k) + B (u_j - u_k) + delta` and
/// `P_bh ~ p_bh + C (x - x_k) + D (u - u_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization {
    pub x: WellState,
    pub u: ControlInput,
    /// `T df/dx`.
    pub a: Matrix3<f64>,
    /// `T df/du`.
    pub b: Matrix3x2<f64>,
    /// `T f(x, u)`.
    pub delta: Vector3<f64>,
    /// `dP_bh/dx` (Pa/kg).
    pub c: RowVector3<f64>,
    /// `dP_bh/du` (Pa).
    pub d: RowVector2<f64>,
    /// `P_bh(x, u)` (Pa).
    pub p_bh: f64,
}

/// Central difference of `f` along coordinate `k` of `at`, shrinking the
/// step when a displaced point is outside the model's domain.
fn central<const M: usize>(
    at: &[f64],
    k: usize,
    h0: f64,
    lo: f64,
    hi: f64,
    f: &dyn Fn(&[f64]) -> Result<[f64; M]>,
) -> Result<[f64; M]> {
    let mut h = h0;
    let mut last = None;
    for _ in 0..12 {
        let mut a = at.to_vec();
        let mut b = at.to_vec();
        a[k] = (a[k] + h).min(hi);
        b[k] = (b[k] - h).max(lo);
        match (f(&a), f(&b)) {
            (Ok(fa), Ok(fb)) => {
                let w = a[k] - b[k];
                return Ok(std::array::from_fn(|i| (fa[i] - fb[i]) / w));
            }
            (Err(e), _) | (_, Err(e)) => last = Some(e),
        }
        h *= 0.25;
    }
    Err(last.expect("at least one attempt"))
}

/// Linearisation of the exact model around `(x, u)` with step `t_step`.
pub fn linearize(p: &WellParameters, x: &WellState, u: ControlInput, t_step: f64) -> Result<Linearization> {
    linearize_with(p, x, u, t_step, Mode::Exact)
}

pub fn linearize_with(
    p: &WellParameters,
    x: &WellState,
    u: ControlInput,
    t_step: f64,
    mode: Mode,
) -> Result<Linearization> {
    let rhs = |s: &[f64], c: &[f64]| -> Result<[f64; 4]> {
        let xs = WellState::new(s[0], s[1], s[2]);
        let uc = ControlInput::new(c[0], c[1]);
        let f = ode_rhs(p, &xs, uc, mode)?;
        let r = compute_algebraics(p, &xs, uc, mode)?;
        Ok([f[0], f[1], f[2], r.p_bh])
    };
    let xa = x.to_array();
    let ua = u.to_array();
    let f0 = rhs(&xa, &ua)?;
    let mut a = Matrix3::zeros();
    let mut c = RowVector3::zeros();
    for k in 0..3 {
        let col = central(&xa, k, 1e-5 * xa[k].abs().max(1.0), f64::NEG_INFINITY, f64::INFINITY, &|s| rhs(s, &ua))?;
        for i in 0..3 {
            a[(i, k)] = t_step * col[i];
        }
        c[k] = col[3];
    }
    let mut b = Matrix3x2::zeros();
    let mut d = RowVector2::zeros();
    for k in 0..2 {
        let col = central(&ua, k, 1e-6, 0.0, 1.0, &|cu| rhs(&xa, cu))?;
        for i in 0..3 {
            b[(i, k)] = t_step * col[i];
        }
        d[k] = col[3];
    }
    Ok(Linearization {
        x: *x,
        u,
        a,
        b,
        delta: Vector3::new(t_step * f0[0], t_step * f0[1], t_step * f0[2]),
        c,
        d,
        p_bh: f0[3],
    })
}

/// Affine discrete-time model with scalar output:
/// `xi_{j+1} = (I + a) xi_j + b nu_j + delta`, `xi_0 = 0`,
/// `y_{j+1} = y0 + c . xi_{j+1} + d . nu_j`, with `nu_j = u_j - u_lin`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub y0: f64,
    pub u_lin: DVector<f64>,
}

impl LinearModel {
    /// Pressure model in bar from a linearisation.
    pub fn from_linearization(l: &Linearization) -> Self {
        Self {
            a: DMatrix::from_column_slice(3, 3, l.a.as_slice()),
            b: DMatrix::from_column_slice(3, 2, l.b.as_slice()),
            delta: DVector::from_column_slice(l.delta.as_slice()),
            c: DVector::from_column_slice((l.c / BAR).as_slice()),
            d: DVector::from_column_slice((l.d / BAR).as_slice()),
            y0: l.p_bh / BAR,
            u_lin: DVector::from_vec(l.u.to_array().to_vec()),
        }
    }

    fn nx(&self) -> usize {
        self.a.nrows()
    }

    fn nu(&self) -> usize {
        self.b.ncols()
    }
}

/// `min 0.5 w' H w + g' w + constant` over the stacked inputs
/// `w = (u_0, .., u_{N_u - 1})`, with the affine maps used to build it.
#[derive(Clone, Debug)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constant: f64,
    /// Factor with `0.5 w' H w + g' w + constant = |j w - target|^2`.
    pub j: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Outputs `y = gy w + y_free`.
    pub gy: DMatrix<f64>,
    pub y_free: DVector<f64>,
    /// States `xi_{j+1} = sx[j] w + sx_free[j]`.
    pub sx: Vec<DMatrix<f64>>,
    pub sx_free: Vec<DVector<f64>>,
}

/// Condenses the tracking problem for `model` over `n` steps with `n_u`
/// free inputs, output weights `q`, move weights `r` and last input
/// `u_last`.
pub fn condensed_qp(
    model: &LinearModel,
    n: usize,
    n_u: usize,
    q: &[f64],
    r: &[f64],
    u_last: &DVector<f64>,
    reference: &[f64],
) -> Result<CondensedQp> {
    let (nx, nu) = (model.nx(), model.nu());
    if n_u == 0 || n_u > n || q.len() != n || r.len() != nu || reference.len() != n || u_last.len() != nu {
        return Err(Error::ShapeMismatch("inconsistent horizon, weight or reference sizes".into()));
    }
    let nw = nu * n_u;
    let phi = DMatrix::identity(nx, nx) + &model.a;
    // nu_j = E_j w - u_lin.
    let select = |j: usize| {
        let k = j.min(n_u - 1);
        DMatrix::from_fn(nu, nw, |i, col| if col == k * nu + i { 1.0 } else { 0.0 })
    };
    let mut s = DMatrix::zeros(nx, nw);
    let mut s0 = DVector::zeros(nx);
    let mut gy = DMatrix::zeros(n, nw);
    let mut y_free = DVector::zeros(n);
    let mut sx = Vec::with_capacity(n);
    let mut sx_free = Vec::with_capacity(n);
    for j in 0..n {
        let e = select(j);
        s = &phi * &s + &model.b * &e;
        s0 = &phi * &s0 - &model.b * &model.u_lin + &model.delta;
        let row = model.c.transpose() * &s + model.d.transpose() * &e;
        gy.row_mut(j).copy_from(&row);
        y_free[j] = model.y0 + model.c.dot(&s0) - model.d.dot(&model.u_lin);
        sx.push(s.clone());
        sx_free.push(s0.clone());
    }
    // Moves: du = M w - m0.
    let mut m = DMatrix::zeros(nw, nw);
    let mut m0 = DVector::zeros(nw);
    for j in 0..n_u {
        for i in 0..nu {
            m[(j * nu + i, j * nu + i)] = 1.0;
            if j > 0 {
                m[((j) * nu + i, (j - 1) * nu + i)] = -1.0;
            } else {
                m0[i] = u_last[i];
            }
        }
    }
    let qd = DMatrix::from_diagonal(&DVector::from_column_slice(q));
    let rd = DMatrix::from_diagonal(&DVector::from_fn(nw, |i, _| r[i % nu]));
    let ey = &y_free - DVector::from_column_slice(reference);
    let h = (gy.transpose() * &qd * &gy + m.transpose() * &rd * &m) * 2.0;
    let g = (gy.transpose() * &qd * &ey - m.transpose() * &rd * &m0) * 2.0;
    let constant = (ey.transpose() * &qd * &ey)[0] + (m0.transpose() * &rd * &m0)[0];
    let sq = DVector::from_fn(n, |i, _| q[i].sqrt());
    let sr = DVector::from_fn(nw, |i, _| r[i % nu].sqrt());
    let mut j = DMatrix::zeros(n + nw, nw);
    j.rows_mut(0, n).copy_from(&(DMatrix::from_diagonal(&sq) * &gy));
    j.rows_mut(n, nw).copy_from(&(DMatrix::from_diagonal(&sr) * &m));
    let mut target = DVector::zeros(n + nw);
    target.rows_mut(0, n).copy_from(&(-ey.component_mul(&sq)));
    target.rows_mut(n, nw).copy_from(&m0.component_mul(&sr));
    Ok(CondensedQp { h, g, constant, j, target, gy, y_free, sx, sx_free })
}

/// Linearises at the measurement and the last input, then solves the
/// condensed program under the input bounds. Measurements where the exact
/// model is undefined are linearised with the safeguarded model.
pub fn slmpc_solve(
    p: &WellParameters,
    x_meas: &WellState,
    u_last: ControlInput,
    reference: &[f64],
    cfg: &MpcConfig,
    warm: Option<&[ControlInput]>,
) -> Result<MpcSolution> {
    cfg.validate()?;
    cfg.check_reference(reference)?;
    u_last.validate()?;
    if !x_meas.is_finite() {
        return Err(Error::InfeasibleMeasurement(format!("{x_meas:?}")));
    }
    let lin = linearize(p, x_meas, u_last, cfg.step)
        .or_else(|_| linearize_with(p, x_meas, u_last, cfg.step, Mode::Safeguarded))
        .map_err(|e| Error::InfeasibleMeasurement(format!("{x_meas:?}: {e}")))?;
    let model = LinearModel::from_linearization(&lin);
    let n_u = cfg.control_horizon;
    let u_prev = DVector::from_vec(u_last.to_array().to_vec());
    let qp = condensed_qp(&model, cfg.horizon, n_u, &cfg.q, &cfg.r, &u_prev, reference)?;
    let lo = DVector::from_vec(cfg.lower());
    let hi = DVector::from_vec(cfg.upper());
    let start = DVector::from_vec(
        (0..n_u)
            .flat_map(|j| {
                let u = warm.and_then(|w| w.get(j).or(w.last()).copied()).unwrap_or(u_last);
                cfg.clamp_input(u).to_array()
            })
            .collect(),
    );
    let (w, iterations) = solve_box_lsq(&qp.j, &qp.target, &lo, &hi, Some(&start))?;
    let objective = (&qp.j * &w - &qp.target).norm_squared();
    let u = cfg.expand(w.as_slice());
    let outputs = (&qp.gy * &w + &qp.y_free).iter().copied().collect();
    let mut states = vec![*x_meas];
    for (s, s0) in qp.sx.iter().zip(&qp.sx_free) {
        let xi = s * &w + s0;
        let a = x_meas.to_array();
        states.push(WellState::new(a[0] + xi[0], a[1] + xi[1], a[2] + xi[2]));
    }
    let du = MpcSolution::moves(&u, n_u, u_last);
    Ok(MpcSolution {
        u: MpcSolution::wired(&du, cfg.horizon, u_last),
        du,
        states,
        outputs,
        objective,
        iterations,
        status: SolveStatus::Converged,
        trace: vec![objective],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::qp::solve_box_qp;
    use crate::well::steady_state;

    fn scalar_model(a: f64, b: f64, delta: f64, c: f64, d: f64, y0: f64, u_lin: f64) -> LinearModel {
        LinearModel {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            delta: DVector::from_element(1, delta),
            c: DVector::from_element(1, c),
            d: DVector::from_element(1, d),
            y0,
            u_lin: DVector::from_element(1, u_lin),
        }
    }

    #[test]
    fn one_step_program_matches_hand_solution() {
        // y1 = y0 + c (b (u - ul) + delta) + d (u - ul);
        // J = q (y1 - r)^2 + R (u - u_last)^2.
        let (a, b, delta, c, d, y0, ul) = (-0.3, 0.8, 0.05, 2.0, 0.5, 1.0, 0.4);
        let (q, r, u_last, reference) = (3.0, 0.7, 0.35, 2.2);
        let m = scalar_model(a, b, delta, c, d, y0, ul);
        let qp = condensed_qp(&m, 1, 1, &[q], &[r], &DVector::from_element(1, u_last), &[reference]).unwrap();
        let k = c * b + d;
        let offset = y0 + c * delta - k * ul;
        let expected = (q * k * (reference - offset) + r * u_last) / (q * k * k + r);
        let lo = DVector::from_element(1, -100.0);
        let hi = DVector::from_element(1, 100.0);
        let (w, _) = solve_box_qp(&qp.h, &qp.g, &lo, &hi, None).unwrap();
        assert!((w[0] - expected).abs() < 1e-12, "{} vs {expected}", w[0]);
        let value = 0.5 * qp.h[(0, 0)] * w[0] * w[0] + qp.g[0] * w[0] + qp.constant;
        let direct = q * (offset + k * w[0] - reference).powi(2) + r * (w[0] - u_last).powi(2);
        assert!((value - direct).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_program_matches_least_squares() {
        let m = LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[-0.1, 0.05, 0.02, -0.2]),
            b: DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.05, 0.4]),
            delta: DVector::from_vec(vec![0.01, -0.02]),
            c: DVector::from_vec(vec![1.0, -0.5]),
            d: DVector::from_vec(vec![0.2, 0.1]),
            y0: 0.3,
            u_lin: DVector::from_vec(vec![0.5, 0.5]),
        };
        let (n, n_u) = (6, 4);
        let q: Vec<f64> = (0..n).map(|j| 1.0 + j as f64).collect();
        let r = [0.5, 0.8];
        let u_last = DVector::from_vec(vec![0.4, 0.6]);
        let reference: Vec<f64> = (0..n).map(|j| 0.5 + 0.1 * j as f64).collect();
        let qp = condensed_qp(&m, n, n_u, &q, &r, &u_last, &reference).unwrap();
        let lo = DVector::from_element(2 * n_u, -1e6);
        let hi = DVector::from_element(2 * n_u, 1e6);
        let (w, _) = solve_box_qp(&qp.h, &qp.g, &lo, &hi, None).unwrap();

        // Same problem as a stacked least-squares system built by direct
        // simulation of unit input perturbations.
        let simulate = |w: &DVector<f64>| -> Vec<f64> {
            let mut xi = DVector::zeros(2);
            let mut ys = Vec::new();
            for j in 0..n {
                let k = j.min(n_u - 1);
                let nu = DVector::from_vec(vec![w[2 * k] - 0.5, w[2 * k + 1] - 0.5]);
                xi = &xi + &m.a * &xi + &m.b * &nu + &m.delta;
                ys.push(m.y0 + m.c.dot(&xi) + m.d.dot(&nu));
            }
            ys
        };
        let residual = |w: &DVector<f64>| -> DVector<f64> {
            let ys = simulate(w);
            let mut rows: Vec<f64> = (0..n).map(|j| q[j].sqrt() * (ys[j] - reference[j])).collect();
            let mut prev = [u_last[0], u_last[1]];
            for j in 0..n_u {
                for k in 0..2 {
                    rows.push(r[k].sqrt() * (w[2 * j + k] - prev[k]));
                }
                prev = [w[2 * j], w[2 * j + 1]];
            }
            DVector::from_vec(rows)
        };
        let zero = DVector::zeros(2 * n_u);
        let r0 = residual(&zero);
        let jac = DMatrix::from_fn(r0.len(), 2 * n_u, |i, k| {
            let mut e = zero.clone();
            e[k] = 1.0;
            residual(&e)[i] - r0[i]
        });
        let ls = jac.svd(true, true).solve(&(-&r0), 1e-14).unwrap();
        assert!((&w - &ls).amax() < 1e-8);
        let (w_lsq, _) = solve_box_lsq(&qp.j, &qp.target, &lo, &hi, None).unwrap();
        assert!((&w_lsq - &ls).amax() < 1e-8);
        let value = 0.5 * w.dot(&(&qp.h * &w)) + qp.g.dot(&w) + qp.constant;
        assert!((value - (&qp.j * &w - &qp.target).norm_squared()).abs() < 1e-9 * (1.0 + value));
    }

    #[test]
    fn solves_at_a_disturbed_state_with_a_stiff_linearization() {
        let p = WellParameters::well(1).unwrap();
        let x = WellState::new(3346.05, 199.02, 8162.67);
        let cfg = MpcConfig::default();
        let reference = vec![160.0; cfg.horizon];
        let sol = slmpc_solve(&p, &x, ControlInput::new(1.0, 0.6), &reference, &cfg, None).unwrap();
        for u in &sol.u {
            assert!((0.2..=1.0).contains(&u.u1) && (0.6..=1.0).contains(&u.u2));
        }
    }

    #[test]
    fn linearization_at_equilibrium_has_no_drift() {
        let p = WellParameters::well(1).unwrap();
        let u = ControlInput::new(0.5, 0.7);
        let x = steady_state(&p, u).unwrap();
        let l = linearize(&p, &x, u, 60.0).unwrap();
        assert!(l.delta.amax() < 1e-6, "{:?}", l.delta);
        let exact = compute_algebraics(&p, &x, u, Mode::Exact).unwrap().p_bh;
        assert_eq!(l.p_bh, exact);
    }

    #[test]
    fn linearization_agrees_with_one_sided_differences() {
        let p = WellParameters::well(1).unwrap();
        let x = WellState::new(3400.0, 240.0, 8800.0);
        let u = ControlInput::new(0.5, 0.5);
        let l = linearize(&p, &x, u, 60.0).unwrap();
        let f0 = ode_rhs(&p, &x, u, Mode::Exact).unwrap();
        for k in 0..3 {
            let mut a = x.to_array();
            let h = 1e-6 * a[k];
            a[k] += h;
            let f = ode_rhs(&p, &WellState::from_array(a), u, Mode::Exact).unwrap();
            let col: Vec<f64> = (0..3).map(|i| 60.0 * (f[i] - f0[i]) / h).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..3 {
                assert!((col[i] - l.a[(i, k)]).abs() <= 1e-4 * norm, "{i},{k}: {} vs {}", col[i], l.a[(i, k)]);
            }
        }
    }

    #[test]
    fn steady_start_with_matching_reference_does_not_move() {
        let p = WellParameters::well(1).unwrap();
        let u = ControlInput::new(0.5, 0.7);
        let x = steady_state(&p, u).unwrap();
        let y = compute_algebraics(&p, &x, u, Mode::Exact).unwrap().p_bh / BAR;
        let cfg = MpcConfig::default();
        let sol = slmpc_solve(&p, &x, u, &vec![y; cfg.horizon], &cfg, None).unwrap();
        assert!(sol.du.iter().flatten().all(|d| d.abs() < 1e-6), "{:?}", &sol.du[..3]);
        assert_eq!(sol.wiring_error(u), 0.0);
    }
}
