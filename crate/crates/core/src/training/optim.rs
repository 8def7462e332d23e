//! Adam and limited-memory BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 7e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, epochs: 1000 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam state.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the Wolfe conditions.
    pub c1: f64,
    /// Curvature constant of the strong Wolfe conditions.
    pub c2: f64,
    /// Stop when the largest gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes the loss by less than this,
    /// relative to its magnitude.
    pub rel_tol: f64,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iters: 1000, c1: 1e-4, c2: 0.9, grad_tol: 1e-10, rel_tol: 0.0, max_line_evals: 25 }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!("invalid L-BFGS settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    GradientTolerance,
    RelativeChange,
    MaxIterations,
    LineSearchFail,
    Stopped,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Loss after every function evaluation.
    pub history: Vec<f64>,
    /// Loss after every accepted iteration (starting point first).
    pub accepted: Vec<f64>,
    pub status: LbfgsStatus,
}

/// Per-iteration report passed to the observer callback.
pub struct IterInfo<'a> {
    pub iteration: usize,
    pub x: &'a [f64],
    pub f: f64,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory inverse-Hessian product `H g` by two-loop recursion.
/// `mask` zeros the coordinates held fixed by a projected method.
fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let free = |i: usize| mask.map_or(true, |m| m[i]);
    let mut q: Vec<f64> = g.iter().enumerate().map(|(i, v)| if free(i) { *v } else { 0.0 }).collect();
    let masked_dot = |a: &[f64], b: &[f64]| -> f64 { (0..a.len()).filter(|i| free(*i)).map(|i| a[i] * b[i]).sum() };
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * masked_dot(s, &q);
        for i in 0..q.len() {
            if free(i) {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let yy = masked_dot(y, y);
        let gamma = if yy > 0.0 { masked_dot(s, y) / yy } else { 1.0 };
        let gamma = if gamma > 0.0 && gamma.is_finite() { gamma } else { 1.0 };
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * masked_dot(y, &q);
        for i in 0..q.len() {
            if free(i) {
                q[i] += s[i] * (a - b);
            }
        }
    }
    q
}

struct LinePoint {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Cubic interpolation minimiser between two points, safeguarded to stay
/// inside the interval.
fn cubic_min(a: &LinePoint, b: &LinePoint) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a, b) } else { (b, a) };
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (lo.alpha - hi.alpha);
    let rad = d1 * d1 - lo.dphi * hi.dphi;
    let width = hi.alpha - lo.alpha;
    let fallback = lo.alpha + 0.5 * width;
    if rad < 0.0 || !rad.is_finite() {
        return fallback;
    }
    let d2 = rad.sqrt();
    let t = hi.alpha - width * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    if !t.is_finite() {
        return fallback;
    }
    t.clamp(lo.alpha + 0.1 * width, hi.alpha - 0.1 * width)
}

/// Strong Wolfe line search along `d`. Returns the accepted point or the
/// best sufficient-decrease point seen when the search fails.
fn strong_wolfe<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    history: &mut Vec<f64>,
) -> Result<(Option<LinePoint>, bool)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dphi0 = dot(g0, d);
    let mut evals = 0;
    let mut best: Option<LinePoint> = None;
    let mut eval = |alpha: f64, evals: &mut usize, best: &mut Option<LinePoint>| -> Result<LinePoint> {
        *evals += 1;
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = fg(&xt)?;
        history.push(f);
        let p = LinePoint { alpha, f, dphi: dot(&g, d), g };
        if p.f.is_finite() && p.f <= f0 + cfg.c1 * alpha * dphi0 && best.as_ref().map_or(true, |b| p.f < b.f) {
            *best = Some(LinePoint { alpha: p.alpha, f: p.f, g: p.g.clone(), dphi: p.dphi });
        }
        Ok(p)
    };
    let armijo = |p: &LinePoint| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * dphi0;
    let curvature = |p: &LinePoint| p.dphi.abs() <= -cfg.c2 * dphi0;

    let mut prev = LinePoint { alpha: 0.0, f: f0, g: g0.to_vec(), dphi: dphi0 };
    let mut alpha = alpha0;
    let mut first = true;
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_line_evals {
            return Ok((best, false));
        }
        let cur = eval(alpha, &mut evals, &mut best)?;
        if !armijo(&cur) || (!first && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok((Some(cur), true));
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        first = false;
        alpha = cur.alpha * 2.0;
        prev = cur;
    };
    // Zoom: `lo` satisfies sufficient decrease with the lowest value so far.
    loop {
        if evals >= cfg.max_line_evals || (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            return Ok((best, false));
        }
        let trial = if hi.f.is_finite() && hi.dphi.is_finite() {
            cubic_min(&lo, &hi)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        let cur = eval(trial, &mut evals, &mut best)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok((Some(cur), true));
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
}

/// L-BFGS with a strong Wolfe line search. `observe` is called after every
/// accepted iteration and may return `false` to stop early.
pub fn lbfgs_minimize<F, O>(mut fg: F, x0: &[f64], cfg: &LbfgsConfig, mut observe: O) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&IterInfo) -> bool,
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x)?;
    let mut history = vec![f];
    let mut accepted = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let status = loop {
        if !f.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iterations, loss: f });
        }
        if inf_norm(&g) <= cfg.grad_tol {
            break LbfgsStatus::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break LbfgsStatus::MaxIterations;
        }
        let mut d: Vec<f64> = two_loop(&pairs, &g, None).into_iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let alpha0 = if pairs.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let (point, _wolfe) = strong_wolfe(&mut fg, &x, f, &g, &d, alpha0, cfg, &mut history)?;
        let Some(p) = point else {
            break LbfgsStatus::LineSearchFail;
        };
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s.clone(), y, 1.0 / sy));
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let f_old = f;
        f = p.f;
        g = p.g;
        iterations += 1;
        accepted.push(f);
        if !observe(&IterInfo { iteration: iterations, x: &x, f, evaluations: history.len() }) {
            break LbfgsStatus::Stopped;
        }
        if cfg.rel_tol > 0.0 && (f_old - f).abs() <= cfg.rel_tol * f_old.abs().max(f.abs()).max(1e-300) {
            break LbfgsStatus::RelativeChange;
        }
    };
    Ok(LbfgsOutcome {
        grad_norm: inf_norm(&g),
        x,
        f,
        iterations,
        evaluations: history.len(),
        history,
        accepted,
        status,
    })
}

/// Box-constrained quasi-Newton minimisation: L-BFGS directions on the
/// coordinates not held at a bound, with a backtracking search along the
/// projected path.
pub fn projected_lbfgs_minimize<F>(
    mut fg: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &LbfgsConfig,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch("bounds do not match the variables".into()));
    }
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut f, mut g) = fg(&x)?;
    let mut history = vec![f];
    let mut accepted = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let projected_grad_norm = |x: &[f64], g: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                let moved = (x[i] - g[i]).clamp(lower[i], upper[i]);
                (moved - x[i]).abs()
            })
            .fold(0.0, f64::max)
    };
    let status = loop {
        if !f.is_finite() {
            return Err(Error::NoConvergence { iterations, residual: f });
        }
        if projected_grad_norm(&x, &g) <= cfg.grad_tol {
            break LbfgsStatus::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break LbfgsStatus::MaxIterations;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mut d: Vec<f64> = two_loop(&pairs, &g, Some(&free)).into_iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            pairs.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        let mut alpha = if pairs.is_empty() { (1.0 / inf_norm(&g).max(1e-300)).min(1.0) } else { 1.0 };
        let mut found = None;
        for _ in 0..cfg.max_line_evals {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            project(&mut xt);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease >= 0.0 {
                break;
            }
            let (ft, gt) = fg(&xt)?;
            history.push(ft);
            if ft.is_finite() && ft <= f + cfg.c1 * decrease {
                found = Some((xt, ft, gt, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, gt, s)) = found else {
            break LbfgsStatus::LineSearchFail;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let f_old = f;
        x = xt;
        f = ft;
        g = gt;
        iterations += 1;
        accepted.push(f);
        if cfg.rel_tol > 0.0 && (f_old - f).abs() <= cfg.rel_tol * f_old.abs().max(f.abs()).max(1e-300) {
            break LbfgsStatus::RelativeChange;
        }
    };
    Ok(LbfgsOutcome {
        grad_norm: projected_grad_norm(&x, &g),
        x,
        f,
        iterations,
        evaluations: history.len(),
        history,
        accepted,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense symmetric positive definite matrix `Q diag(lambda) Q^T` with
    /// eigenvalues spread evenly over `[1, cond]` and a Householder `Q`.
    fn spd_matrix(n: usize, cond: f64) -> Vec<Vec<f64>> {
        let v: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).sin() + 0.5).collect();
        let vv = dot(&v, &v);
        let q = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv;
        let lambda: Vec<f64> = (0..n).map(|i| 1.0 + (cond - 1.0) * i as f64 / (n - 1) as f64).collect();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| q(i, k) * lambda[k] * q(j, k)).sum()).collect()).collect()
    }

    fn quadratic(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        (spd_matrix(n, 10.0), (0..n).map(|i| (i as f64 * 0.7).sin()).collect())
    }

    /// `0.5 (x - b)^T A (x - b)`: minimum 0 at `b`.
    fn quad_fg(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let e: Vec<f64> = x.iter().zip(b).map(|(p, q)| p - q).collect();
        let ae: Vec<f64> = a.iter().map(|row| dot(row, &e)).collect();
        (0.5 * dot(&e, &ae), ae)
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        (f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)])
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, 3);
        let g = [0.3, -2.0, 1e-3];
        let mut p = [1.0, 1.0, 1.0];
        adam.step(&mut p, &g).unwrap();
        for i in 0..3 {
            let expected = 1.0 - cfg.lr * g[i] / (g[i].abs() + cfg.eps);
            assert_eq!(p[i], expected);
            assert!((p[i] - (1.0 - cfg.lr * g[i].signum())).abs() <= 1.001 * cfg.lr * cfg.eps / g[i].abs());
        }
        let mut q = [1.0, 2.0];
        Adam::new(cfg, 2).step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, [1.0, 2.0]);
    }

    #[test]
    fn adam_decreases_a_convex_quadratic() {
        let (a, b) = quadratic(5);
        let mut x = vec![3.0; 5];
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() }, 5);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let (f, g) = quad_fg(&a, &b, &x);
            losses.push(f);
            adam.step(&mut x, &g).unwrap();
        }
        assert!(losses[199] < 0.5 * losses[0]);
        assert!(losses[20..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn lbfgs_solves_quadratic_quickly() {
        let (a, b) = quadratic(10);
        let out = lbfgs_minimize(|x| Ok(quad_fg(&a, &b, x)), &[0.0; 10], &LbfgsConfig::default(), |_| true).unwrap();
        assert_eq!(out.status, LbfgsStatus::GradientTolerance);
        assert!(out.grad_norm < 1e-10);
        assert!(out.iterations <= 30, "{} iterations", out.iterations);
        assert!(out.accepted.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_handles_ill_conditioned_quadratic() {
        let a = spd_matrix(10, 1e4);
        let b = vec![1.0; 10];
        let out = lbfgs_minimize(|x| Ok(quad_fg(&a, &b, x)), &[0.0; 10], &LbfgsConfig::default(), |_| true).unwrap();
        assert_eq!(out.status, LbfgsStatus::GradientTolerance);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn lbfgs_minimises_rosenbrock() {
        let out = lbfgs_minimize(|x| Ok(rosenbrock(x)), &[-1.2, 1.0], &LbfgsConfig::default(), |_| true).unwrap();
        assert!(out.f < 1e-8, "{out:?}");
        assert!(out.accepted.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_at_optimum_takes_no_steps() {
        let out = lbfgs_minimize(|x| Ok(rosenbrock(x)), &[1.0, 1.0], &LbfgsConfig::default(), |_| true).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn full_memory_lbfgs_matches_dense_bfgs() {
        // With memory covering every iteration, the two-loop recursion
        // applies the dense BFGS inverse update to all pairs, starting from
        // the scaled identity of the latest pair.
        let n = 4;
        let (a, b) = quadratic(n);
        let cfg = LbfgsConfig { memory: 50, max_iters: 4, ..LbfgsConfig::default() };
        let mut xs = vec![vec![0.5; n]];
        lbfgs_minimize(|x| Ok(quad_fg(&a, &b, x)), &xs[0].clone(), &cfg, |it| {
            xs.push(it.x.to_vec());
            true
        })
        .unwrap();
        assert_eq!(xs.len(), 5);
        type V = nalgebra::DVector<f64>;
        let grads: Vec<V> = xs.iter().map(|x| V::from_vec(quad_fg(&a, &b, x).1)).collect();
        let eye = nalgebra::DMatrix::<f64>::identity(n, n);
        for k in 1..xs.len() - 1 {
            let pairs: Vec<(V, V)> = (0..k)
                .map(|j| (V::from_vec(xs[j + 1].clone()) - V::from_vec(xs[j].clone()), &grads[j + 1] - &grads[j]))
                .collect();
            let (s_last, y_last) = pairs.last().unwrap();
            let mut h = &eye * (s_last.dot(y_last) / y_last.dot(y_last));
            for (s, y) in &pairs {
                let rho = 1.0 / s.dot(y);
                let left = &eye - s * y.transpose() * rho;
                let right = &eye - y * s.transpose() * rho;
                h = &left * h * right + s * s.transpose() * rho;
            }
            let d = -(h * &grads[k]);
            let step = V::from_vec(xs[k + 1].clone()) - V::from_vec(xs[k].clone());
            let cos = d.dot(&step) / (d.norm() * step.norm());
            assert!((cos - 1.0).abs() < 1e-10, "iteration {k}: cos {cos}");
        }
    }

    #[test]
    fn projected_variant_respects_bounds() {
        // Unconstrained minimum at (2, -3); box [0, 1] x [-1, 1].
        let fg = |x: &[f64]| Ok(((x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2), vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 3.0)]));
        let out = projected_lbfgs_minimize(fg, &[0.5, 0.0], &[0.0, -1.0], &[1.0, 1.0], &LbfgsConfig::default()).unwrap();
        assert_eq!(out.x, vec![1.0, -1.0]);
        let inner = |x: &[f64]| Ok((x[0] * x[0] + (x[1] - 0.25).powi(2), vec![2.0 * x[0], 2.0 * (x[1] - 0.25)]));
        let out = projected_lbfgs_minimize(inner, &[0.9, 0.9], &[-1.0, -1.0], &[1.0, 1.0], &LbfgsConfig::default()).unwrap();
        assert!((out.x[0]).abs() < 1e-9 && (out.x[1] - 0.25).abs() < 1e-9);
        assert!(out.accepted.windows(2).all(|w| w[1] <= w[0]));
    }
}
