//! Feed-forward tanh networks with a time tangent carried through the
//! forward pass and reverse-mode gradients through both.
//!
//! Batches are stored one sample per column. Parameters live in a single
//! flat vector in canonical order: for the gated architecture the two
//! encoders, then hidden layers `1..=depth`, then the output layer; for the
//! dense architecture hidden layers then output. Each layer stores its
//! weight matrix (column-major, `rows x cols`) followed by its bias.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::rng_stream;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Two tanh encoders `U`, `V` gate every hidden layer:
    /// `A_k = (1 - Z_k) * U + Z_k * V`.
    Skip,
    /// Plain stack of tanh layers.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Slot {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    n_in: usize,
    width: usize,
    depth: usize,
    n_out: usize,
    slots: Vec<Slot>,
    pub params: Vec<f64>,
}

/// Values recorded during a forward pass for the backward sweep.
#[derive(Clone, Debug)]
pub struct Tape {
    /// `acts[0]` is the input; `acts[k]` the activation of hidden layer `k`.
    acts: Vec<DMatrix<f64>>,
    acts_t: Option<Vec<DMatrix<f64>>>,
    /// Pre-gate tanh outputs `Z_k` (equal to `acts[k]` for dense nets).
    zs: Vec<DMatrix<f64>>,
    zs_t: Option<Vec<DMatrix<f64>>>,
    /// Encoder outputs `(U, V)` and their tangents.
    enc: Option<(DMatrix<f64>, DMatrix<f64>)>,
    enc_t: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub y: DMatrix<f64>,
    pub y_t: Option<DMatrix<f64>>,
}

/// Gradients produced by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// Gradient with respect to the input batch.
    pub input: DMatrix<f64>,
}

/// `tanh` through a single `exp`; absolute error below 1e-15.
#[inline]
fn tanh_fast(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

fn tanh_in_place(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|v| *v = tanh_fast(*v));
}

impl Network {
    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn new(
        arch: Architecture,
        n_in: usize,
        width: usize,
        depth: usize,
        n_out: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::zeros(arch, n_in, width, depth, n_out)?;
        let mut rng = rng_stream(seed, 0);
        for s in net.slots.clone() {
            let limit = (6.0 / (s.rows + s.cols) as f64).sqrt();
            for w in &mut net.params[s.w..s.b] {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture, n_in: usize, width: usize, depth: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || width == 0 || depth == 0 || n_out == 0 {
            return Err(Error::Config(format!(
                "network dimensions must be positive: inputs {n_in}, width {width}, depth {depth}, outputs {n_out}"
            )));
        }
        let mut shapes = Vec::new();
        if arch == Architecture::Skip {
            shapes.push((width, n_in));
            shapes.push((width, n_in));
        }
        shapes.push((width, n_in));
        shapes.extend(std::iter::repeat((width, width)).take(depth - 1));
        shapes.push((n_out, width));
        let mut slots = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for (rows, cols) in shapes {
            let s = Slot { w: off, b: off + rows * cols, rows, cols };
            off += s.len();
            slots.push(s);
        }
        Ok(Self { arch, n_in, width, depth, n_out, slots, params: vec![0.0; off] })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }
    pub fn n_inputs(&self) -> usize {
        self.n_in
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn n_outputs(&self) -> usize {
        self.n_out
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn enc_slots(&self) -> usize {
        if self.arch == Architecture::Skip {
            2
        } else {
            0
        }
    }

    fn hidden_slot(&self, k: usize) -> Slot {
        self.slots[self.enc_slots() + k]
    }

    fn out_slot(&self) -> Slot {
        *self.slots.last().unwrap()
    }

    fn weight(&self, s: Slot) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[s.w..s.b], s.rows, s.cols)
    }

    fn affine(&self, s: Slot, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.weight(s) * input;
        let bias = &self.params[s.b..s.b + s.rows];
        for mut col in out.column_iter_mut() {
            for (v, b) in col.iter_mut().zip(bias) {
                *v += b;
            }
        }
        out
    }

    /// `tanh(W x + b)` and, when given, its tangent `(1 - z^2) * W x_t`.
    fn tanh_layer(
        &self,
        s: Slot,
        input: &DMatrix<f64>,
        input_t: Option<&DMatrix<f64>>,
    ) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let mut z = self.affine(s, input);
        tanh_in_place(&mut z);
        let zt = input_t.map(|xt| {
            let mut st = self.weight(s) * xt;
            st.zip_apply(&z, |t, zv| *t *= 1.0 - zv * zv);
            st
        });
        (z, zt)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.n_in {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input rows, got {}",
                self.n_in,
                x.nrows()
            )));
        }
        Ok(())
    }

    /// Forward pass recording everything the backward sweep needs. With
    /// `seed`, the directional derivative of the output along `seed` (the
    /// same input direction for every sample) is carried as well.
    pub fn record(&self, x: &DMatrix<f64>, seed: Option<&[f64]>) -> Result<Tape> {
        self.check_input(x)?;
        let xt = match seed {
            Some(s) if s.len() != self.n_in => {
                return Err(Error::ShapeMismatch(format!("seed has {} entries, expected {}", s.len(), self.n_in)))
            }
            Some(s) => Some(DMatrix::from_fn(self.n_in, x.ncols(), |i, _| s[i])),
            None => None,
        };
        let tangent = xt.is_some();
        let (enc, enc_t) = if self.arch == Architecture::Skip {
            let (u, ut) = self.tanh_layer(self.slots[0], x, xt.as_ref());
            let (v, vt) = self.tanh_layer(self.slots[1], x, xt.as_ref());
            (Some((u, v)), ut.zip(vt))
        } else {
            (None, None)
        };
        let mut acts = vec![x.clone()];
        let mut acts_t = xt.map(|m| vec![m]);
        let mut zs = Vec::with_capacity(self.depth);
        let mut zs_t = tangent.then(|| Vec::with_capacity(self.depth));
        for k in 0..self.depth {
            let prev_t = acts_t.as_ref().map(|a| &a[k]);
            let (z, zt) = self.tanh_layer(self.hidden_slot(k), &acts[k], prev_t);
            let (a, at) = match &enc {
                Some((u, v)) => {
                    let mut a = z.clone();
                    for ((a, u), v) in a.as_mut_slice().iter_mut().zip(u.as_slice()).zip(v.as_slice()) {
                        *a = u + *a * (v - u);
                    }
                    let at = zt.as_ref().map(|zt| {
                        let (ut, vt) = enc_t.as_ref().unwrap();
                        let mut at = zt.clone();
                        let n = at.len();
                        let (zs, us, vs, uts, vts) = (z.as_slice(), u.as_slice(), v.as_slice(), ut.as_slice(), vt.as_slice());
                        let ats = at.as_mut_slice();
                        for i in 0..n {
                            ats[i] = uts[i] + ats[i] * (vs[i] - us[i]) + zs[i] * (vts[i] - uts[i]);
                        }
                        at
                    });
                    (a, at)
                }
                None => (z.clone(), zt.clone()),
            };
            acts.push(a);
            if let (Some(list), Some(at)) = (acts_t.as_mut(), at) {
                list.push(at);
            }
            zs.push(z);
            if let (Some(list), Some(zt)) = (zs_t.as_mut(), zt) {
                list.push(zt);
            }
        }
        let out = self.out_slot();
        let y = self.affine(out, &acts[self.depth]);
        let y_t = acts_t.as_ref().map(|a| self.weight(out) * &a[self.depth]);
        Ok(Tape { acts, acts_t, zs, zs_t, enc, enc_t, y, y_t })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.record(x, None)?.y)
    }

    /// Output and its derivative with respect to input 0 (time).
    pub fn forward_with_time_tangent(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut seed = vec![0.0; self.n_in];
        seed[0] = 1.0;
        let tape = self.record(x, Some(&seed))?;
        Ok((tape.y, tape.y_t.expect("seeded")))
    }

    /// Single-sample forward pass.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(y.iter().copied().collect())
    }

    /// Accumulates `gW += g * input^T` and `gb += sum(g)` for slot `s`, and
    /// returns `W^T g`.
    fn linear_backward(
        &self,
        s: Slot,
        grad: &mut [f64],
        g: &DMatrix<f64>,
        input: &DMatrix<f64>,
        with_bias: bool,
    ) -> DMatrix<f64> {
        let mut gw = DMatrixView::from_slice(&grad[s.w..s.b], s.rows, s.cols).into_owned();
        gw.gemm(1.0, g, &input.transpose(), 1.0);
        grad[s.w..s.b].copy_from_slice(gw.as_slice());
        if with_bias {
            for (j, gb) in grad[s.b..s.b + s.rows].iter_mut().enumerate() {
                *gb += g.row(j).sum();
            }
        }
        self.weight(s).transpose() * g
    }

    /// Back-propagates through a tanh layer given upstream gradients of its
    /// output and tangent; returns gradients of its input and input tangent.
    fn tanh_backward(
        &self,
        s: Slot,
        grad: &mut [f64],
        z: &DMatrix<f64>,
        zt: Option<&DMatrix<f64>>,
        input: &DMatrix<f64>,
        input_t: Option<&DMatrix<f64>>,
        gz: &DMatrix<f64>,
        gzt: Option<&DMatrix<f64>>,
    ) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        // s' = 1 - z^2 and z_t = s' S_t, so dz_t/dS = -2 z z_t.
        let mut gs = gz.clone();
        match (gzt, zt) {
            (Some(gzt), Some(zt)) => {
                for (((g, zv), ztv), gt) in gs.as_mut_slice().iter_mut().zip(z.as_slice()).zip(zt.as_slice()).zip(gzt.as_slice()) {
                    *g = *g * (1.0 - zv * zv) - 2.0 * zv * ztv * gt;
                }
            }
            _ => gs.zip_apply(z, |g, zv| *g *= 1.0 - zv * zv),
        }
        let g_in = self.linear_backward(s, grad, &gs, input, true);
        let g_in_t = match (gzt, input_t) {
            (Some(gzt), Some(xt)) => {
                let mut gst = gzt.clone();
                gst.zip_apply(z, |g, zv| *g *= 1.0 - zv * zv);
                Some(self.linear_backward(s, grad, &gst, xt, false))
            }
            _ => None,
        };
        (g_in, g_in_t)
    }

    /// Reverse sweep for any scalar loss whose adjoints with respect to the
    /// outputs (`gy`) and output tangents (`gy_t`) are given.
    pub fn backward(&self, tape: &Tape, gy: &DMatrix<f64>, gy_t: Option<&DMatrix<f64>>) -> Result<Gradients> {
        if gy.shape() != tape.y.shape() {
            return Err(Error::ShapeMismatch(format!("adjoint {:?} vs output {:?}", gy.shape(), tape.y.shape())));
        }
        if gy_t.is_some() && tape.y_t.is_none() {
            return Err(Error::ShapeMismatch("tangent adjoint given for a pass without tangent".into()));
        }
        if let (Some(g), Some(y)) = (gy_t, tape.y_t.as_ref()) {
            if g.shape() != y.shape() {
                return Err(Error::ShapeMismatch("tangent adjoint shape".into()));
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        let out = self.out_slot();
        let depth = self.depth;
        let at = |k: usize| tape.acts_t.as_ref().map(|a| &a[k]);
        let mut ga = self.linear_backward(out, &mut grad, gy, &tape.acts[depth], true);
        let mut ga_t = match (gy_t, at(depth)) {
            (Some(g), Some(a)) => Some(self.linear_backward(out, &mut grad, g, a, false)),
            _ => None,
        };
        let batch = tape.y.ncols();
        let mut gu = DMatrix::zeros(self.width, batch);
        let mut gv = DMatrix::zeros(self.width, batch);
        let mut gu_t = ga_t.as_ref().map(|_| DMatrix::zeros(self.width, batch));
        let mut gv_t = gu_t.clone();
        for k in (0..depth).rev() {
            let z = &tape.zs[k];
            let zt = tape.zs_t.as_ref().map(|l| &l[k]);
            let (gz, gz_t) = match &tape.enc {
                Some((u, v)) => {
                    let n = ga.len();
                    let mut gz = DMatrix::zeros(self.width, batch);
                    let (us, vs, zsl, gas) = (u.as_slice(), v.as_slice(), z.as_slice(), ga.as_slice());
                    let gzs = gz.as_mut_slice();
                    let gus = gu.as_mut_slice();
                    let gvs = gv.as_mut_slice();
                    let mut gz_t = None;
                    match (ga_t.as_ref(), zt) {
                        (Some(gat), Some(zt)) => {
                            let (ut, vt) = tape.enc_t.as_ref().unwrap();
                            let mut gzt = DMatrix::zeros(self.width, batch);
                            let (uts, vts, zts, gats) = (ut.as_slice(), vt.as_slice(), zt.as_slice(), gat.as_slice());
                            let gzts = gzt.as_mut_slice();
                            let guts = gu_t.as_mut().unwrap().as_mut_slice();
                            let gvts = gv_t.as_mut().unwrap().as_mut_slice();
                            for i in 0..n {
                                let d = vs[i] - us[i];
                                let dt = vts[i] - uts[i];
                                gzs[i] = gas[i] * d + gats[i] * dt;
                                gzts[i] = gats[i] * d;
                                let gd = gas[i] * zsl[i] + gats[i] * zts[i];
                                let gdt = gats[i] * zsl[i];
                                gus[i] += gas[i] - gd;
                                gvs[i] += gd;
                                guts[i] += gats[i] - gdt;
                                gvts[i] += gdt;
                            }
                            gz_t = Some(gzt);
                        }
                        _ => {
                            for i in 0..n {
                                let gd = gas[i] * zsl[i];
                                gzs[i] = gas[i] * (vs[i] - us[i]);
                                gus[i] += gas[i] - gd;
                                gvs[i] += gd;
                            }
                        }
                    }
                    (gz, gz_t)
                }
                None => (ga, ga_t),
            };
            let (gi, gi_t) = self.tanh_backward(
                self.hidden_slot(k),
                &mut grad,
                z,
                zt,
                &tape.acts[k],
                at(k),
                &gz,
                gz_t.as_ref(),
            );
            ga = gi;
            ga_t = gi_t;
        }
        let mut g_input = ga;
        if let (Some((u, v)), slots) = (&tape.enc, &self.slots) {
            let (ut, vt) = match &tape.enc_t {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            let x = &tape.acts[0];
            let xt = at(0);
            let (gx_u, _) = self.tanh_backward(slots[0], &mut grad, u, ut, x, xt, &gu, gu_t.as_ref());
            let (gx_v, _) = self.tanh_backward(slots[1], &mut grad, v, vt, x, xt, &gv, gv_t.as_ref());
            g_input += gx_u;
            g_input += gx_v;
        }
        Ok(Gradients { params: grad, input: g_input })
    }

    /// Jacobian `dy/dx` of a single sample (rows: outputs, columns: inputs).
    pub fn input_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.input_jacobians(&DMatrix::from_column_slice(x.len(), 1, x))?.remove(0))
    }

    /// Jacobians of every column of `xs`, from a single reverse sweep over
    /// `n_out` copies of each sample.
    pub fn input_jacobians(&self, xs: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_input(xs)?;
        let m = self.n_out;
        let n = xs.ncols();
        let rep = DMatrix::from_fn(self.n_in, n * m, |i, j| xs[(i, j / m)]);
        let tape = self.record(&rep, None)?;
        let gy = DMatrix::from_fn(m, n * m, |i, j| if j % m == i { 1.0 } else { 0.0 });
        let g = self.backward(&tape, &gy, None)?.input;
        Ok((0..n).map(|s| g.columns(s * m, m).transpose()).collect())
    }

    /// Names of the parameter groups in canonical order.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.arch == Architecture::Skip {
            names.push("encoder_u".to_string());
            names.push("encoder_v".to_string());
        }
        names.extend((1..=self.depth).map(|k| format!("hidden_{k}")));
        names.push("output".to_string());
        names
    }

    /// Parameter range `(start, end)` of every group in canonical order.
    pub fn layer_ranges(&self) -> Vec<(usize, usize)> {
        self.slots.iter().map(|s| (s.w, s.b + s.rows)).collect()
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch,
            inputs: self.n_in,
            width: self.width,
            depth: self.depth,
            outputs: self.n_out,
            layers: self
                .layer_names()
                .into_iter()
                .zip(&self.slots)
                .map(|(name, s)| LayerShape { name, rows: s.rows, cols: s.cols })
                .collect(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(c: &NetworkCheckpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        let mut net = Self::zeros(c.architecture, c.inputs, c.width, c.depth, c.outputs)?;
        let shapes: Vec<(usize, usize)> = net.slots.iter().map(|s| (s.rows, s.cols)).collect();
        let stored: Vec<(usize, usize)> = c.layers.iter().map(|l| (l.rows, l.cols)).collect();
        if shapes != stored {
            return Err(Error::ShapeMismatch(format!("layer shapes {stored:?}, expected {shapes:?}")));
        }
        net.set_params(&c.params)?;
        Ok(net)
    }
}

pub const CHECKPOINT_FORMAT: &str = "pinc-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Serialized network: shape header plus the flat parameter vector in
/// canonical order (weights column-major, then bias, per layer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub inputs: usize,
    pub width: usize,
    pub depth: usize,
    pub outputs: usize,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
}

/// Mean absolute gradient entry per parameter group.
pub fn layer_gradient_stats(net: &Network, grad: &[f64]) -> Vec<(String, f64)> {
    net.layer_names()
        .into_iter()
        .zip(net.layer_ranges())
        .map(|(name, (a, b))| {
            let g = &grad[a..b];
            (name, g.iter().map(|v| v.abs()).sum::<f64>() / g.len() as f64)
        })
        .collect()
}
