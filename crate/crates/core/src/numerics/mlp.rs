//! The two-layer latent aggregator: `FC → ReLU → Dropout → FC`.
//!
//! Weights are stored input-major (`w1` is `input × hidden`, `w2` is
//! `hidden × output`) so a batch is multiplied as `X · W1`. Dropout is
//! inverted: kept activations are scaled by `1 / (1 - p)` in training, so
//! evaluation needs no rescaling.
//!
//! Input columns that are zero across the whole batch are skipped in the
//! first layer. Their weight gradients are exactly zero, and [`Grads`]
//! records which rows of `w1` were actually written so the optimizer can
//! skip the rest. Latents produced by a low-rank codec have large zero
//! blocks, which makes this the dominant saving at full aggregator scale.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, MatRef};
use super::rng::SeededRng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_DROPOUT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpDims {
    /// Two concatenated 16×512 parent latents in, one 16×512 child latent out.
    pub const AGGREGATOR: MlpDims = MlpDims {
        input: 2 * 16 * 512,
        hidden: 512,
        output: 16 * 512,
    };

    pub const fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: MlpDims,
    dropout_p: f64,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub const PARAM_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    Ok(())
}

impl MlpParams {
    pub fn zeros(dims: MlpDims, dropout_p: f64) -> Result<Self> {
        check_dropout(dropout_p)?;
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(Error::InvalidArgument(format!("zero-sized layer in {dims:?}")));
        }
        Ok(Self {
            dims,
            dropout_p,
            w1: Tensor::zeros(&[dims.input, dims.hidden]),
            b1: Tensor::zeros(&[dims.hidden]),
            w2: Tensor::zeros(&[dims.hidden, dims.output]),
            b2: Tensor::zeros(&[dims.output]),
        })
    }

    /// He-scaled normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    /// Draws `w1` then `w2`, row-major.
    pub fn he_init(dims: MlpDims, dropout_p: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut params = Self::zeros(dims, dropout_p)?;
        let s1 = (2.0 / dims.input as f64).sqrt();
        for w in params.w1.data_mut() {
            *w = s1 * rng.normal();
        }
        let s2 = (2.0 / dims.hidden as f64).sqrt();
        for w in params.w2.data_mut() {
            *w = s2 * rng.normal();
        }
        Ok(params)
    }

    /// Assemble from explicit tensors, checking every shape.
    pub fn from_tensors(dims: MlpDims, dropout_p: f64, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        check_dropout(dropout_p)?;
        let expect = |name: &'static str, t: &Tensor, shape: &[usize]| {
            if t.shape() != shape {
                Err(Error::dim(name, format!("{shape:?}"), format!("{:?}", t.shape())))
            } else {
                Ok(())
            }
        };
        expect("w1", &w1, &[dims.input, dims.hidden])?;
        expect("b1", &b1, &[dims.hidden])?;
        expect("w2", &w2, &[dims.hidden, dims.output])?;
        expect("b2", &b2, &[dims.output])?;
        Ok(Self {
            dims,
            dropout_p,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn dims(&self) -> MlpDims {
        self.dims
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Per-unit keep decisions for one batch of hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    /// One uniform draw per hidden unit, row-major; a unit is kept when the
    /// draw is `>= p`.
    pub fn sample(rows: usize, cols: usize, p: f64, rng: &mut SeededRng) -> Self {
        let keep = (0..rows * cols).map(|_| rng.uniform() >= p).collect();
        Self {
            rows,
            cols,
            keep,
            scale: 1.0 / (1.0 - p),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub(crate) fn factor(&self, i: usize) -> f64 {
        if self.keep[i] {
            self.scale
        } else {
            0.0
        }
    }
}

/// How dropout behaves in a forward pass.
pub enum Dropout<'a> {
    /// Evaluation: identity.
    Off,
    /// Training: draw a fresh mask from the stream.
    Sample(&'a mut SeededRng),
    /// Training with a caller-supplied mask (gradient checks).
    Pinned(&'a DropoutMask),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    active: Vec<Range<usize>>,
    pre: Vec<f64>,
    act: Vec<f64>,
    mask: Option<DropoutMask>,
}

impl ForwardCache {
    /// Hidden activations after ReLU and dropout, `batch × hidden`.
    pub fn hidden(&self) -> &[f64] {
        &self.act
    }

    pub fn mask(&self) -> Option<&DropoutMask> {
        self.mask.as_ref()
    }
}

/// Maximal runs of columns that hold a nonzero entry in some row.
fn active_columns(x: &[f64], rows: usize, cols: usize) -> Vec<Range<usize>> {
    let mut live = vec![false; cols];
    for r in 0..rows {
        for (flag, &v) in live.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *flag |= v != 0.0;
        }
    }
    let mut runs = Vec::new();
    let mut start = None;
    for (j, &l) in live.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                runs.push(s..j);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(s..cols);
    }
    runs
}

fn check_input(params: &MlpParams, input: &Tensor) -> Result<usize> {
    let (batch, width) = input.dims2()?;
    if width != params.dims.input {
        return Err(Error::dim("mlp input width", params.dims.input, width));
    }
    if batch == 0 {
        return Err(Error::dim("mlp batch", "at least one row", 0));
    }
    Ok(batch)
}

pub fn forward(params: &MlpParams, input: &Tensor, dropout: Dropout<'_>) -> Result<(Tensor, ForwardCache)> {
    let batch = check_input(params, input)?;
    let MlpDims { input: n_in, hidden, output } = params.dims;

    let x = MatRef::new(input.data(), batch, n_in);
    let w1 = MatRef::new(params.w1.data(), n_in, hidden);
    let active = active_columns(input.data(), batch, n_in);

    let mut pre: Vec<f64> = (0..batch).flat_map(|_| params.b1.data().iter().copied()).collect();
    for run in &active {
        gemm(1.0, x.cols(run.start, run.end), w1.rows(run.start, run.end), 1.0, &mut pre, hidden);
    }

    let mask = match dropout {
        Dropout::Off => None,
        Dropout::Sample(rng) => Some(DropoutMask::sample(batch, hidden, params.dropout_p, rng)),
        Dropout::Pinned(m) => {
            if m.shape() != (batch, hidden) {
                return Err(Error::dim("dropout mask", format!("{batch}x{hidden}"), format!("{}x{}", m.rows, m.cols)));
            }
            Some(m.clone())
        }
    };
    let mut act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
    if let Some(m) = &mask {
        for (i, a) in act.iter_mut().enumerate() {
            *a *= m.factor(i);
        }
    }

    let mut out: Vec<f64> = (0..batch).flat_map(|_| params.b2.data().iter().copied()).collect();
    gemm(
        1.0,
        MatRef::new(&act, batch, hidden),
        MatRef::new(params.w2.data(), hidden, output),
        1.0,
        &mut out,
        output,
    );
    if !super::tensor::all_finite(&out) {
        return Err(Error::NonFinite("mlp forward produced NaN or infinity".into()));
    }
    let cache = ForwardCache {
        batch,
        active,
        pre,
        act,
        mask,
    };
    Ok((Tensor::from_vec(&[batch, output], out)?, cache))
}

/// Gradients shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    w1_rows: Vec<Range<usize>>,
}

impl Grads {
    pub fn zeros(dims: MlpDims) -> Self {
        Self {
            w1: Tensor::zeros(&[dims.input, dims.hidden]),
            b1: Tensor::zeros(&[dims.hidden]),
            w2: Tensor::zeros(&[dims.hidden, dims.output]),
            b2: Tensor::zeros(&[dims.output]),
            w1_rows: vec![0..dims.input],
        }
    }

    /// Rows of `w1` that may hold nonzero values; all others are exactly zero.
    pub fn w1_rows(&self) -> &[Range<usize>] {
        &self.w1_rows
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn all_finite(&self) -> bool {
        let hidden = self.b1.len();
        self.w1_rows
            .iter()
            .all(|r| super::tensor::all_finite(&self.w1.data()[r.start * hidden..r.end * hidden]))
            && self.b1.all_finite()
            && self.w2.all_finite()
            && self.b2.all_finite()
    }
}

/// Backpropagate `d_out = ∂loss/∂output` through the cached forward pass,
/// overwriting `grads`.
pub fn backward(params: &MlpParams, input: &Tensor, cache: &ForwardCache, d_out: &Tensor, grads: &mut Grads) -> Result<()> {
    let MlpDims { input: n_in, hidden, output } = params.dims;
    let batch = cache.batch;
    if input.shape() != [batch, n_in] {
        return Err(Error::dim("backward input", format!("[{batch}, {n_in}]"), format!("{:?}", input.shape())));
    }
    if d_out.shape() != [batch, output] {
        return Err(Error::dim("backward d_out", format!("[{batch}, {output}]"), format!("{:?}", d_out.shape())));
    }
    if grads.w1.shape() != params.w1.shape() || grads.w2.shape() != params.w2.shape() {
        return Err(Error::dim("backward grads", format!("{:?}", params.dims), format!("{:?}", grads.w1.shape())));
    }
    let d_out_m = MatRef::new(d_out.data(), batch, output);
    let act = MatRef::new(&cache.act, batch, hidden);

    gemm(1.0, act.t(), d_out_m, 0.0, grads.w2.data_mut(), output);
    column_sums(d_out.data(), batch, output, grads.b2.data_mut());

    let mut d_pre = vec![0.0; batch * hidden];
    gemm(1.0, d_out_m, MatRef::new(params.w2.data(), hidden, output).t(), 0.0, &mut d_pre, hidden);
    for (i, d) in d_pre.iter_mut().enumerate() {
        let gate = if cache.pre[i] > 0.0 { 1.0 } else { 0.0 };
        let drop = cache.mask.as_ref().map_or(1.0, |m| m.factor(i));
        *d *= gate * drop;
    }
    column_sums(&d_pre, batch, hidden, grads.b1.data_mut());

    if grads.w1_rows != cache.active {
        for r in std::mem::take(&mut grads.w1_rows) {
            grads.w1.data_mut()[r.start * hidden..r.end * hidden].fill(0.0);
        }
    }
    let x = MatRef::new(input.data(), batch, n_in);
    let d_pre_m = MatRef::new(&d_pre, batch, hidden);
    for run in &cache.active {
        let out = &mut grads.w1.data_mut()[run.start * hidden..run.end * hidden];
        gemm(1.0, x.cols(run.start, run.end).t(), d_pre_m, 0.0, out, hidden);
    }
    grads.w1_rows = cache.active.clone();
    Ok(())
}

fn column_sums(m: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    for r in 0..rows {
        for (o, v) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

/// Mean over all elements of the squared difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("mse of empty tensors".into()));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `∂ mse(pred, target) / ∂ pred`.
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse_grad", format!("{:?}", pred.shape()), format!("{:?}", target.shape())));
    }
    let scale = 2.0 / pred.len() as f64;
    let data = pred.data().iter().zip(target.data()).map(|(p, t)| scale * (p - t)).collect();
    Tensor::from_vec(pred.shape(), data)
}

/// Latent-space MSE loss and exact gradients, sharing the forward pass's dropout mask.
pub fn loss_and_grads_into(
    params: &MlpParams,
    input: &Tensor,
    target: &Tensor,
    dropout: Dropout<'_>,
    grads: &mut Grads,
) -> Result<f64> {
    let batch = check_input(params, input)?;
    if target.shape() != [batch, params.dims.output] {
        return Err(Error::dim(
            "mlp target",
            format!("[{batch}, {}]", params.dims.output),
            format!("{:?}", target.shape()),
        ));
    }
    let (out, cache) = forward(params, input, dropout)?;
    let loss = mse(&out, target)?;
    let d_out = mse_grad(&out, target)?;
    backward(params, input, &cache, &d_out, grads)?;
    Ok(loss)
}

pub fn loss_and_grads(params: &MlpParams, input: &Tensor, target: &Tensor, dropout: Dropout<'_>) -> Result<(f64, Grads)> {
    let mut grads = Grads::zeros(params.dims);
    let loss = loss_and_grads_into(params, input, target, dropout, &mut grads)?;
    Ok((loss, grads))
}
