//! Small dense tensor and layer stack with hand-written reverse-mode gradients.
//!
//! Layers cache what their backward pass needs during `forward`; calling
//! `backward` without a preceding `forward` is an error. Gradients
//! accumulate until [`zero_grad`] is called.

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("backward called on {0} without a recorded forward pass")]
    NoForward(&'static str),
    #[error("archive: {0}")]
    Archive(String),
}

fn shape_err(op: &'static str, expected: impl fmt::Display, got: impl fmt::Display) -> NeuralError {
    NeuralError::Shape { op, expected: expected.to_string(), got: got.to_string() }
}

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor2<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self, NeuralError> {
        if data.len() != rows * cols {
            return Err(shape_err("from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self, NeuralError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(shape_err("from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NeuralError> {
        if self.cols != other.rows {
            return Err(shape_err("matmul", format!("{} rows", self.cols), format!("{} rows", other.rows)));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == F::zero() {
                    continue;
                }
                let src = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * *b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NeuralError> {
        if self.shape() != other.shape() {
            return Err(shape_err("add", format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Side-by-side concatenation of equally tall tensors.
    pub fn hcat(parts: &[&Self]) -> Result<Self, NeuralError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            if p.rows != rows {
                return Err(shape_err("hcat", rows, p.rows));
            }
            for r in 0..rows {
                out.row_mut(r)[offset..offset + p.cols].copy_from_slice(p.row(r));
            }
            offset += p.cols;
        }
        Ok(out)
    }

    /// Columns `from..to` as a new tensor.
    pub fn columns(&self, from: usize, to: usize) -> Self {
        let mut out = Self::zeros(self.rows, to - from);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[from..to]);
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> Tensor2<G> {
        Tensor2 { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| G::lit(x.as_f64())).collect() }
    }
}

/// Named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor2<F>,
    pub grad: Tensor2<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: Tensor2<F>) -> Self {
        let grad = Tensor2::zeros(value.rows, value.cols);
        Self { name: name.into(), value, grad }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn xavier(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| F::lit(rng.gen_range(-limit..=limit))).collect();
        Self::new(name, Tensor2 { rows: fan_in, cols: fan_out, data })
    }
}

/// Anything that owns parameters.
pub trait Module<F: Scalar> {
    fn params(&self) -> Vec<&Param<F>>;
    fn params_mut(&mut self) -> Vec<&mut Param<F>>;
}

pub fn zero_grad<F: Scalar>(module: &mut dyn Module<F>) {
    for p in module.params_mut() {
        p.grad.data.iter_mut().for_each(|g| *g = F::zero());
    }
}

/// y = x·W + b.
#[derive(Clone, Debug)]
pub struct Linear<F> {
    pub w: Param<F>,
    pub b: Param<F>,
    cache: Option<Tensor2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: Param::xavier(format!("{name}.w"), fan_in, fan_out, rng),
            b: Param::new(format!("{name}.b"), Tensor2::zeros(1, fan_out)),
            cache: None,
        }
    }

    pub fn from_params(w: Param<F>, b: Param<F>) -> Self {
        Self { w, b, cache: None }
    }

    pub fn fan_in(&self) -> usize {
        self.w.value.rows
    }

    pub fn fan_out(&self) -> usize {
        self.w.value.cols
    }

    pub fn forward(&mut self, x: &Tensor2<F>) -> Result<Tensor2<F>, NeuralError> {
        if x.cols != self.fan_in() {
            return Err(shape_err("linear", self.fan_in(), x.cols));
        }
        let mut y = x.matmul(&self.w.value)?;
        let bias = self.b.value.row(0);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
                *v += *b;
            }
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor2<F>) -> Result<Tensor2<F>, NeuralError> {
        let x = self.cache.as_ref().ok_or(NeuralError::NoForward("linear"))?;
        if dy.shape() != (x.rows, self.fan_out()) {
            return Err(shape_err("linear backward", format!("({}, {})", x.rows, self.fan_out()), format!("{:?}", dy.shape())));
        }
        self.w.grad.add_assign(&x.transpose().matmul(dy)?)?;
        for r in 0..dy.rows {
            for (g, d) in self.b.grad.row_mut(0).iter_mut().zip(dy.row(r)) {
                *g += *d;
            }
        }
        dy.matmul(&self.w.value.transpose())
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

fn relu_in_place<F: Scalar>(t: &mut Tensor2<F>) -> Vec<bool> {
    t.data
        .iter_mut()
        .map(|v| {
            let on = *v > F::zero();
            if !on {
                *v = F::zero();
            }
            on
        })
        .collect()
}

fn relu_backward<F: Scalar>(dy: &Tensor2<F>, mask: &[bool]) -> Tensor2<F> {
    let data = dy.data.iter().zip(mask).map(|(d, on)| if *on { *d } else { F::zero() }).collect();
    Tensor2 { rows: dy.rows, cols: dy.cols, data }
}

/// Affine layers with ReLU between them; the last layer is linear unless
/// `relu_output` is set.
#[derive(Clone, Debug)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
    pub relu_output: bool,
    masks: Vec<Option<Vec<bool>>>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(name: &str, widths: &[usize], relu_output: bool, rng: &mut impl Rng) -> Self {
        let layers: Vec<_> =
            widths.windows(2).enumerate().map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng)).collect();
        let masks = vec![None; layers.len()];
        Self { layers, relu_output, masks }
    }

    pub fn from_layers(layers: Vec<Linear<F>>, relu_output: bool) -> Self {
        let masks = vec![None; layers.len()];
        Self { layers, relu_output, masks }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, Linear::fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn forward(&mut self, x: &Tensor2<F>) -> Result<Tensor2<F>, NeuralError> {
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            self.masks[i] = (i + 1 < n || self.relu_output).then(|| relu_in_place(&mut h));
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor2<F>) -> Result<Tensor2<F>, NeuralError> {
        let mut d = dy.clone();
        for (layer, mask) in self.layers.iter_mut().zip(&self.masks).rev() {
            if let Some(mask) = mask {
                d = relu_backward(&d, mask);
            }
            d = layer.backward(&d)?;
        }
        Ok(d)
    }
}

impl<F: Scalar> Module<F> for Mlp<F> {
    fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[derive(Clone, Debug)]
struct AttentionCache<F> {
    q: Tensor2<F>,
    k: Tensor2<F>,
    v: Tensor2<F>,
    neighbors: Vec<Vec<usize>>,
    /// `alpha[i][m][j]`: weight of the j-th listed neighbour of row i in head m.
    alpha: Vec<Vec<Vec<F>>>,
    mask: Vec<bool>,
}

/// Multi-head scaled dot-product attention over per-row neighbour lists,
/// followed by a dense block: ReLU(W·[h ‖ attention] + b).
#[derive(Clone, Debug)]
pub struct Attention<F> {
    pub wq: Linear<F>,
    pub wk: Linear<F>,
    pub wv: Linear<F>,
    pub dense: Linear<F>,
    pub heads: usize,
    pub head_dim: usize,
    cache: Option<AttentionCache<F>>,
}

impl<F: Scalar> Attention<F> {
    pub fn new(name: &str, width: usize, heads: usize, head_dim: usize, out: usize, rng: &mut impl Rng) -> Self {
        let inner = heads * head_dim;
        Self {
            wq: Linear::new(&format!("{name}.q"), width, inner, rng),
            wk: Linear::new(&format!("{name}.k"), width, inner, rng),
            wv: Linear::new(&format!("{name}.v"), width, inner, rng),
            dense: Linear::new(&format!("{name}.dense"), width + inner, out, rng),
            heads,
            head_dim,
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.wq.fan_in()
    }

    /// Attention weights of the last forward pass, `[row][head][neighbour]`.
    pub fn last_weights(&self) -> Option<&[Vec<Vec<F>>]> {
        self.cache.as_ref().map(|c| c.alpha.as_slice())
    }

    /// Row i attends over the rows listed in `neighbors[i]`.
    pub fn forward(&mut self, h: &Tensor2<F>, neighbors: &[Vec<usize>]) -> Result<Tensor2<F>, NeuralError> {
        if neighbors.len() != h.rows {
            return Err(shape_err("attention neighbours", h.rows, neighbors.len()));
        }
        if let Some(bad) = neighbors.iter().flatten().find(|&&j| j >= h.rows) {
            return Err(shape_err("attention neighbour index", format!("< {}", h.rows), bad));
        }
        if neighbors.iter().any(Vec::is_empty) {
            return Err(shape_err("attention neighbours", "non-empty list", "empty list"));
        }
        let q = self.wq.forward(h)?;
        let k = self.wk.forward(h)?;
        let v = self.wv.forward(h)?;
        let dh = self.head_dim;
        let scale = F::one() / F::count(dh).sqrt();
        let mut att = Tensor2::zeros(h.rows, self.heads * dh);
        let mut alpha = Vec::with_capacity(h.rows);
        for (i, nb) in neighbors.iter().enumerate() {
            let mut per_head = Vec::with_capacity(self.heads);
            for m in 0..self.heads {
                let span = m * dh..(m + 1) * dh;
                let qi = &q.row(i)[span.clone()];
                let scores: Vec<F> = nb
                    .iter()
                    .map(|&j| qi.iter().zip(&k.row(j)[span.clone()]).map(|(a, b)| *a * *b).sum::<F>() * scale)
                    .collect();
                let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
                let exp: Vec<F> = scores.iter().map(|s| (*s - max).exp()).collect();
                let total: F = exp.iter().copied().sum();
                let weights: Vec<F> = exp.into_iter().map(|e| e / total).collect();
                let out = &mut att.row_mut(i)[span.clone()];
                for (&j, &a) in nb.iter().zip(&weights) {
                    for (o, vj) in out.iter_mut().zip(&v.row(j)[span.clone()]) {
                        *o += a * *vj;
                    }
                }
                per_head.push(weights);
            }
            alpha.push(per_head);
        }
        let mut z = self.dense.forward(&Tensor2::hcat(&[h, &att])?)?;
        let mask = relu_in_place(&mut z);
        self.cache = Some(AttentionCache { q, k, v, neighbors: neighbors.to_vec(), alpha, mask });
        Ok(z)
    }

    pub fn backward(&mut self, dy: &Tensor2<F>) -> Result<Tensor2<F>, NeuralError> {
        let cache = self.cache.as_ref().ok_or(NeuralError::NoForward("attention"))?;
        let dz = relu_backward(dy, &cache.mask);
        let dcat = self.dense.backward(&dz)?;
        let width = self.width();
        let mut dh = dcat.columns(0, width);
        let datt = dcat.columns(width, dcat.cols);
        let dhd = self.head_dim;
        let scale = F::one() / F::count(dhd).sqrt();
        let (q, k, v) = (&cache.q, &cache.k, &cache.v);
        let mut dq = Tensor2::zeros(q.rows, q.cols);
        let mut dk = Tensor2::zeros(k.rows, k.cols);
        let mut dv = Tensor2::zeros(v.rows, v.cols);
        for (i, nb) in cache.neighbors.iter().enumerate() {
            for m in 0..self.heads {
                let span = m * dhd..(m + 1) * dhd;
                let g = &datt.row(i)[span.clone()];
                let a = &cache.alpha[i][m];
                let dalpha: Vec<F> =
                    nb.iter().map(|&j| g.iter().zip(&v.row(j)[span.clone()]).map(|(x, y)| *x * *y).sum()).collect();
                let mean: F = a.iter().zip(&dalpha).map(|(x, y)| *x * *y).sum();
                for (idx, &j) in nb.iter().enumerate() {
                    for (d, gg) in dv.row_mut(j)[span.clone()].iter_mut().zip(g) {
                        *d += a[idx] * *gg;
                    }
                    let ds = a[idx] * (dalpha[idx] - mean) * scale;
                    for c in span.clone() {
                        let qc = q.get(i, c);
                        let kc = k.get(j, c);
                        dq.data[i * q.cols + c] += ds * kc;
                        dk.data[j * k.cols + c] += ds * qc;
                    }
                }
            }
        }
        dh.add_assign(&self.wq.backward(&dq)?)?;
        dh.add_assign(&self.wk.backward(&dk)?)?;
        dh.add_assign(&self.wv.backward(&dv)?)?;
        Ok(dh)
    }
}

impl<F: Scalar> Module<F> for Attention<F> {
    fn params(&self) -> Vec<&Param<F>> {
        [&self.wq, &self.wk, &self.wv, &self.dense].into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.dense].into_iter().flat_map(|l| l.params_mut()).collect()
    }
}

/// Adaptive moment optimizer; moment buffers follow the module's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update using the accumulated gradients scaled by `grad_scale`.
    pub fn update(&mut self, params: Vec<&mut Param<F>>, grad_scale: F) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![F::zero(); p.value.data.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (F::lit(self.beta1), F::lit(self.beta2));
        let bc1 = F::one() - F::lit(self.beta1.powi(self.step as i32));
        let bc2 = F::one() - F::lit(self.beta2.powi(self.step as i32));
        let (lr, eps) = (F::lit(self.lr), F::lit(self.eps));
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), mi), vi) in p.value.data.iter_mut().zip(&p.grad.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = *g * grad_scale;
                *mi = b1 * *mi + (F::one() - b1) * g;
                *vi = b2 * *vi + (F::one() - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

pub const ARCHIVE_MAGIC: &[u8; 8] = b"DPDPNN01";

/// Serializes named tensors plus a UTF-8 metadata block.
///
/// Layout (all integers little-endian u32): magic, tensor count, then per
/// tensor name length, name bytes, rows, cols, rows·cols f64 values; finally
/// metadata length and metadata bytes.
pub fn write_archive<F: Scalar>(tensors: &[(&str, &Tensor2<F>)], metadata: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for x in &t.data {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out
}

pub type NamedTensors<F> = Vec<(String, Tensor2<F>)>;

pub fn read_archive<F: Scalar>(bytes: &[u8]) -> Result<(NamedTensors<F>, String), NeuralError> {
    struct Reader<'a>(&'a [u8]);
    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
            if self.0.len() < n {
                return Err(NeuralError::Archive("truncated".into()));
            }
            let (head, tail) = self.0.split_at(n);
            self.0 = tail;
            Ok(head)
        }
        fn u32(&mut self) -> Result<usize, NeuralError> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
        }
        fn string(&mut self) -> Result<String, NeuralError> {
            let n = self.u32()?;
            String::from_utf8(self.take(n)?.to_vec()).map_err(|e| NeuralError::Archive(e.to_string()))
        }
    }
    let mut r = Reader(bytes);
    if r.take(8)? != ARCHIVE_MAGIC {
        return Err(NeuralError::Archive("bad magic".into()));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<F> =
            raw.chunks_exact(8).map(|c| F::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        let t = Tensor2::from_vec(rows, cols, data)?;
        if !t.is_finite() {
            return Err(NeuralError::Archive(format!("{name}: non-finite value")));
        }
        tensors.push((name, t));
    }
    let meta = r.string()?;
    if !r.0.is_empty() {
        return Err(NeuralError::Archive("trailing bytes".into()));
    }
    Ok((tensors, meta))
}
