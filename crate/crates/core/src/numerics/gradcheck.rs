//! Central-difference verification of the analytic MLP gradients.
//!
//! Each checked parameter is perturbed by `±eps`, the loss is re-evaluated
//! by a separate plain-loop implementation of the network, and the central
//! quotient is compared with the backpropagated value.

use serde::Serialize;

use super::mlp::{self, Dropout, DropoutMask, MlpParams, PARAM_NAMES};
use super::rng::SeededRng;
use super::tensor::{compensated_sum, Tensor};
use crate::error::{Error, Result};

/// Gradient magnitudes below this are compared on an absolute scale:
/// the relative error denominator is `max(|analytic|, |numeric|, FLOOR)`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Pass threshold for the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Check every parameter when `None`; otherwise this many per tensor,
    /// sampled with `seed` (capped at the tensor size).
    pub per_tensor_samples: Option<[usize; 4]>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            per_tensor_samples: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Plain-loop evaluation of the network, independent of the optimized
/// forward pass. The unperturbed layers are cached so that each probe
/// re-evaluates, from the parameters, only the quantities its perturbed
/// entry can reach; the loss change is then summed termwise over those
/// outputs, which keeps it free of the rounding of the full loss total.
struct Probe<'a> {
    params: &'a MlpParams,
    x: &'a [f64],
    t: &'a [f64],
    mask: Option<&'a DropoutMask>,
    batch: usize,
    act: Vec<f64>,
    out: Vec<f64>,
}

impl<'a> Probe<'a> {
    fn new(params: &'a MlpParams, input: &'a Tensor, target: &'a Tensor, mask: Option<&'a DropoutMask>) -> Result<Self> {
        let dims = params.dims();
        let (batch, width) = input.dims2()?;
        if width != dims.input || target.shape() != [batch, dims.output] {
            return Err(Error::dim(
                "gradcheck instance",
                format!("[{batch}, {}] -> [{batch}, {}]", dims.input, dims.output),
                format!("{:?} -> {:?}", input.shape(), target.shape()),
            ));
        }
        if let Some(m) = mask {
            if m.shape() != (batch, dims.hidden) {
                return Err(Error::dim("gradcheck mask", format!("({batch}, {})", dims.hidden), format!("{:?}", m.shape())));
            }
        }
        let mut probe = Self {
            params,
            x: input.data(),
            t: target.data(),
            mask,
            batch,
            act: Vec::new(),
            out: Vec::new(),
        };
        let (h, o) = (dims.hidden, dims.output);
        let mut act = vec![0.0; batch * h];
        for b in 0..batch {
            for j in 0..h {
                act[b * h + j] = probe.activation(b, j, probe.pre(b, j, None));
            }
        }
        probe.act = act;
        let mut out = vec![0.0; batch * o];
        for b in 0..batch {
            for c in 0..o {
                out[b * o + c] = probe.output(b, c, None);
            }
        }
        probe.out = out;
        Ok(probe)
    }

    /// Hidden pre-activation; `shift` perturbs one `w1` row (`Some(r)`) or
    /// the bias (`Some(usize::MAX)`).
    fn pre(&self, b: usize, j: usize, shift: Option<(usize, f64)>) -> f64 {
        let dims = self.params.dims();
        let w1 = self.params.w1.data();
        let mut bias = self.params.b1.data()[j];
        let mut sum = 0.0;
        for i in 0..dims.input {
            let mut w = w1[i * dims.hidden + j];
            if let Some((r, d)) = shift {
                if r == i {
                    w += d;
                }
            }
            sum += self.x[b * dims.input + i] * w;
        }
        if let Some((usize::MAX, d)) = shift {
            bias += d;
        }
        bias + sum
    }

    fn activation(&self, b: usize, j: usize, pre: f64) -> f64 {
        let a = pre.max(0.0);
        match self.mask {
            Some(m) => a * m.factor(b * self.params.dims().hidden + j),
            None => a,
        }
    }

    /// Output unit from the cached activations; `shift` perturbs one `w2`
    /// entry of column `c` (`Some(j)`) or its bias (`Some(usize::MAX)`).
    fn output(&self, b: usize, c: usize, shift: Option<(usize, f64)>) -> f64 {
        let dims = self.params.dims();
        let w2 = self.params.w2.data();
        let mut bias = self.params.b2.data()[c];
        let mut sum = 0.0;
        for j in 0..dims.hidden {
            let mut w = w2[j * dims.output + c];
            if let Some((r, d)) = shift {
                if r == j {
                    w += d;
                }
            }
            sum += self.act[b * dims.hidden + j] * w;
        }
        if let Some((usize::MAX, d)) = shift {
            bias += d;
        }
        bias + sum
    }

    /// `L(θ + eps·e) − L(θ − eps·e)` for the `i`-th entry of tensor `k`.
    fn loss_difference(&self, k: usize, i: usize, eps: f64) -> f64 {
        let dims = self.params.dims();
        let (h, o) = (dims.hidden, dims.output);
        let n = (self.batch * o) as f64;
        let sq = |v: f64, b: usize, c: usize| (v - self.t[b * o + c]).powi(2);
        let terms: Vec<f64> = match k {
            // w2 / b2: one output column moves.
            2 | 3 => {
                let (c, shift) = if k == 2 { (i % o, i / o) } else { (i, usize::MAX) };
                (0..self.batch)
                    .map(|b| sq(self.output(b, c, Some((shift, eps))), b, c) - sq(self.output(b, c, Some((shift, -eps))), b, c))
                    .collect()
            }
            // w1 / b1: one hidden unit moves, and every output with it.
            _ => {
                let (j, shift) = if k == 0 { (i % h, i / h) } else { (i, usize::MAX) };
                let w2 = self.params.w2.data();
                let mut terms = Vec::with_capacity(self.batch * o);
                for b in 0..self.batch {
                    let base = self.act[b * h + j];
                    let up = self.activation(b, j, self.pre(b, j, Some((shift, eps)))) - base;
                    let down = self.activation(b, j, self.pre(b, j, Some((shift, -eps)))) - base;
                    for c in 0..o {
                        let y = self.out[b * o + c];
                        let w = w2[j * o + c];
                        terms.push(sq(y + up * w, b, c) - sq(y + down * w, b, c));
                    }
                }
                terms
            }
        };
        compensated_sum(terms) / n
    }
}

fn sample_indices(len: usize, count: Option<usize>, rng: &mut SeededRng) -> Vec<usize> {
    match count {
        Some(k) if k < len => {
            let mut idx: Vec<usize> = (0..k).map(|_| rng.below(len)).collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compare analytic gradients with central differences. `mask` pins the
/// dropout pattern; without it the network runs in eval mode.
pub fn finite_diff_gradcheck(
    params: &MlpParams,
    input: &Tensor,
    target: &Tensor,
    mask: Option<&DropoutMask>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {}", cfg.eps)));
    }
    let dropout = match mask {
        Some(m) => Dropout::Pinned(m),
        None => Dropout::Off,
    };
    let (_, grads) = mlp::loss_and_grads(params, input, target, dropout)?;

    let probe = Probe::new(params, input, target, mask)?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let len = params.tensors()[k].len();
        let count = cfg.per_tensor_samples.map(|c| c[k]);
        for i in sample_indices(len, count, &mut rng) {
            let numeric = probe.loss_difference(k, i, cfg.eps) / (2.0 * cfg.eps);
            let analytic = grads.tensors()[k].data()[i];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some(Worst {
                    tensor: name,
                    index: i,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// A seeded random instance: He-initialized params with nonzero biases,
/// standard-normal inputs and targets.
pub fn random_instance(dims: mlp::MlpDims, batch: usize, seed: u64) -> Result<(MlpParams, Tensor, Tensor)> {
    let mut rng = SeededRng::new(seed);
    let mut params = MlpParams::he_init(dims, mlp::DEFAULT_DROPOUT, &mut rng)?;
    for b in [&mut params.b1, &mut params.b2] {
        for x in b.data_mut() {
            *x = 0.1 * rng.normal();
        }
    }
    let input = Tensor::from_fn(&[batch, dims.input], |_| rng.normal());
    let target = Tensor::from_fn(&[batch, dims.output], |_| rng.normal());
    Ok((params, input, target))
}

/// A batch of seeded instances on a small network and on the full
/// aggregator. Odd-numbered instances run with a pinned dropout mask.
#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub small_dims: mlp::MlpDims,
    pub small_instances: usize,
    pub small_batch: usize,
    pub full_instances: usize,
    pub full_batch: usize,
    /// Parameters sampled per tensor (w1, b1, w2, b2) on the full network.
    pub full_samples: [usize; 4],
    pub eps: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            small_dims: mlp::MlpDims::new(12, 8, 6),
            small_instances: 10,
            small_batch: 3,
            full_instances: 2,
            full_batch: 2,
            full_samples: [2000, 512, 2000, 1000],
            eps: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub label: String,
    pub dropout: bool,
    pub report: GradCheckReport,
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteEntry>> {
    let root = SeededRng::new(cfg.seed);
    let plan = (0..cfg.small_instances)
        .map(|i| ("small", cfg.small_dims, cfg.small_batch, None, i))
        .chain((0..cfg.full_instances).map(|i| ("full", mlp::MlpDims::AGGREGATOR, cfg.full_batch, Some(cfg.full_samples), i)));
    let mut out = Vec::new();
    for (kind, dims, batch, samples, i) in plan {
        let seed = root.derive(kind, i as u64).seed();
        let (params, input, target) = random_instance(dims, batch, seed)?;
        let dropout = i % 2 == 1;
        let mask = dropout.then(|| DropoutMask::sample(batch, dims.hidden, params.dropout_p(), &mut SeededRng::new(seed).derive("mask", 0)));
        let report = finite_diff_gradcheck(
            &params,
            &input,
            &target,
            mask.as_ref(),
            &GradCheckConfig {
                eps: cfg.eps,
                per_tensor_samples: samples,
                seed,
            },
        )?;
        out.push(SuiteEntry {
            label: format!("{kind}[{i}] {}x{}x{} batch {batch}", dims.input, dims.hidden, dims.output),
            dropout,
            report,
        });
    }
    Ok(out)
}
