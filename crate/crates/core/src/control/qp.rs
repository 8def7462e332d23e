//! Box-constrained convex quadratic programs by a primal active-set method,
//! given either the Hessian or a least-squares factor of it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Minimises `0.5 w' H w + g' w` subject to `lo <= w <= hi` for symmetric
/// positive definite `H`, starting from `start` (clamped into the box).
/// Returns the minimiser and the number of active-set iterations.
pub fn solve_box_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, usize)> {
    let n = g.len();
    if h.shape() != (n, n) {
        return Err(Error::QpFail("inconsistent problem dimensions".into()));
    }
    let scale = h.amax().max(g.amax()).max(1.0);
    let gradient = |w: &DVector<f64>| h * w + g;
    let newton = |free: &[usize], _: &DVector<f64>, grad: &DVector<f64>| {
        let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let rhs = DVector::from_fn(free.len(), |a, _| -grad[free[a]]);
        let chol = hff.cholesky().ok_or_else(|| Error::QpFail("reduced Hessian is not positive definite".into()))?;
        Ok(chol.solve(&rhs))
    };
    active_set(lo, hi, start, scale, gradient, newton)
}

/// Minimises `0.5 |J w - t|^2` subject to `lo <= w <= hi` for `J` with
/// full column rank. Same minimiser as [`solve_box_qp`] with `H = J'J`,
/// but each face is solved by QR on the free columns of `J`, so accuracy
/// depends on the conditioning of `J` rather than of its square.
pub fn solve_box_lsq(
    j: &DMatrix<f64>,
    t: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, usize)> {
    if t.len() != j.nrows() || j.nrows() < j.ncols() {
        return Err(Error::QpFail("inconsistent problem dimensions".into()));
    }
    let scale = (j.amax() * j.amax()).max(j.amax() * t.amax()).max(1.0);
    let gradient = |w: &DVector<f64>| j.tr_mul(&(j * w - t));
    let newton = |free: &[usize], w: &DVector<f64>, _: &DVector<f64>| {
        let jf = j.select_columns(free);
        let residual = j * w - t;
        let (q, r) = jf.qr().unpack();
        r.solve_upper_triangular(&-q.tr_mul(&residual))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::QpFail("least-squares factor is rank deficient".into()))
    };
    active_set(lo, hi, start, scale, gradient, newton)
}

/// Primal active-set iteration shared by both problem forms. `newton`
/// returns the step on the free variables that minimises over the current
/// face.
fn active_set(
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: Option<&DVector<f64>>,
    scale: f64,
    gradient: impl Fn(&DVector<f64>) -> DVector<f64>,
    newton: impl Fn(&[usize], &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<(DVector<f64>, usize)> {
    let n = lo.len();
    if hi.len() != n || start.is_some_and(|s| s.len() != n) {
        return Err(Error::QpFail("inconsistent problem dimensions".into()));
    }
    if (0..n).any(|i| !(lo[i] <= hi[i])) {
        return Err(Error::QpFail("empty box".into()));
    }
    let mut w = match start {
        Some(s) => DVector::from_fn(n, |i, _| s[i].clamp(lo[i], hi[i])),
        None => DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i])),
    };
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if lo[i] == hi[i] || w[i] <= lo[i] {
                Bound::Lower
            } else if w[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let max_iters = 20 * n + 20;
    // Set after a full Newton step on the free block: the point is then the
    // minimiser of the current face up to rounding.
    let mut face_min = false;
    for iter in 1..=max_iters {
        let grad = gradient(&w);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        let mut step = DVector::zeros(n);
        if !free.is_empty() && !face_min {
            let p = newton(&free, &w, &grad)?;
            for (a, &i) in free.iter().enumerate() {
                step[i] = p[a];
            }
        }
        if face_min || step.amax() <= 1e-13 * (1.0 + w.amax()) {
            face_min = false;
            // Stationary on the current face: check the bound multipliers.
            let mut worst = None;
            let mut worst_val = -1e-12 * scale;
            for i in 0..n {
                let lambda = match state[i] {
                    Bound::Lower if lo[i] < hi[i] => grad[i],
                    Bound::Upper => -grad[i],
                    _ => continue,
                };
                if lambda < worst_val {
                    worst_val = lambda;
                    worst = Some(i);
                }
            }
            match worst {
                None => return Ok((w, iter)),
                Some(i) => state[i] = Bound::Free,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for &i in &free {
            let limit = if step[i] < 0.0 {
                (lo[i] - w[i]) / step[i]
            } else if step[i] > 0.0 {
                (hi[i] - w[i]) / step[i]
            } else {
                continue;
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((i, if step[i] < 0.0 { Bound::Lower } else { Bound::Upper }));
            }
        }
        w += step * alpha;
        match blocking {
            Some((i, b)) => {
                w[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
                state[i] = b;
            }
            None => face_min = true,
        }
    }
    Err(Error::QpFail(format!("active set did not settle in {max_iters} iterations")))
}
