use serde::{Deserialize, Serialize};

use super::mlp::{Grads, MlpDims, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(1e-5)
    }
}

/// First and second moments plus the completed-step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: [Tensor; 4],
    pub v: [Tensor; 4],
    /// Rows of `w1` that have ever received a nonzero gradient. Rows outside
    /// this set have zero moments and are fixed points of the update.
    w1_live: Vec<bool>,
}

fn zeros_like(dims: MlpDims) -> [Tensor; 4] {
    [
        Tensor::zeros(&[dims.input, dims.hidden]),
        Tensor::zeros(&[dims.hidden]),
        Tensor::zeros(&[dims.hidden, dims.output]),
        Tensor::zeros(&[dims.output]),
    ]
}

impl AdamState {
    pub fn new(dims: MlpDims, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: zeros_like(dims),
            v: zeros_like(dims),
            w1_live: vec![false; dims.input],
        })
    }

    /// Rebuild from stored moments; liveness is derived from nonzero moments.
    pub fn from_parts(config: AdamConfig, t: u64, m: [Tensor; 4], v: [Tensor; 4]) -> Result<Self> {
        config.validate()?;
        let (rows, hidden) = m[0].dims2()?;
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(Error::dim("adam moments", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
            }
        }
        let w1_live = (0..rows)
            .map(|r| {
                let span = r * hidden..(r + 1) * hidden;
                m[0].data()[span.clone()].iter().chain(&v[0].data()[span]).any(|&x| x != 0.0)
            })
            .collect();
        Ok(Self {
            config,
            t,
            m,
            v,
            w1_live,
        })
    }

    /// Copy `params` and this state into `dst`, an earlier snapshot of the
    /// same run. Rows of `w1` that have never received a gradient are
    /// skipped: they still hold their initial values, as does `dst`.
    pub fn snapshot_into(&self, params: &MlpParams, dst: &mut (MlpParams, AdamState)) {
        let (dp, da) = dst;
        debug_assert_eq!(dp.dims(), params.dims());
        let hidden = params.dims().hidden;
        for (r, _) in self.w1_live.iter().enumerate().filter(|(_, &live)| live) {
            let span = r * hidden..(r + 1) * hidden;
            dp.w1.data_mut()[span.clone()].copy_from_slice(&params.w1.data()[span.clone()]);
            da.m[0].data_mut()[span.clone()].copy_from_slice(&self.m[0].data()[span.clone()]);
            da.v[0].data_mut()[span.clone()].copy_from_slice(&self.v[0].data()[span]);
        }
        for (d, s) in [&mut dp.b1, &mut dp.w2, &mut dp.b2].into_iter().zip([&params.b1, &params.w2, &params.b2]) {
            d.data_mut().copy_from_slice(s.data());
        }
        for k in 1..4 {
            da.m[k].data_mut().copy_from_slice(self.m[k].data());
            da.v[k].data_mut().copy_from_slice(self.v[k].data());
        }
        da.config = self.config;
        da.t = self.t;
        da.w1_live.copy_from_slice(&self.w1_live);
    }

    /// One bias-corrected Adam update, in place. Gradients containing NaN or
    /// infinity are rejected before anything is modified.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Grads) -> Result<()> {
        let dims = params.dims();
        if self.m[0].shape() != params.w1.shape() || self.m[2].shape() != params.w2.shape() {
            return Err(Error::dim("adam state", format!("{dims:?}"), format!("{:?}", self.m[0].shape())));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!("gradient at Adam step {}", self.t + 1)));
        }
        for r in grads.w1_rows() {
            self.w1_live[r.clone()].fill(true);
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        let update = Update {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            bc1,
            bc2,
        };

        let hidden = dims.hidden;
        let mut r = 0;
        while r < dims.input {
            if !self.w1_live[r] {
                r += 1;
                continue;
            }
            let start = r;
            while r < dims.input && self.w1_live[r] {
                r += 1;
            }
            let span = start * hidden..r * hidden;
            update.apply(
                &mut params.w1.data_mut()[span.clone()],
                &grads.w1.data()[span.clone()],
                &mut self.m[0].data_mut()[span.clone()],
                &mut self.v[0].data_mut()[span],
            );
        }
        let [_, p_b1, p_w2, p_b2] = params.tensors_mut();
        let [_, m_b1, m_w2, m_b2] = &mut self.m;
        let [_, v_b1, v_w2, v_b2] = &mut self.v;
        update.apply(p_b1.data_mut(), grads.b1.data(), m_b1.data_mut(), v_b1.data_mut());
        update.apply(p_w2.data_mut(), grads.w2.data(), m_w2.data_mut(), v_w2.data_mut());
        update.apply(p_b2.data_mut(), grads.b2.data(), m_b2.data_mut(), v_b2.data_mut());
        Ok(())
    }
}

struct Update {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

impl Update {
    fn apply(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / self.bc1;
            let v_hat = *v / self.bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
