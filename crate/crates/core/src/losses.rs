//! Training objective: positive-weighted binary cross-entropy plus spatial
//! and temporal smoothness penalties on the sigmoid probability maps, each
//! with an exact gradient.
//!
//! All inputs are `1×T×h×w` (or any `…×T×h×w` whose leading axes multiply to
//! one). Means are taken over every element; `l1` subgradients use
//! `sign(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{box_filter_3x3_adjoint, box_residual_3x3, sigmoid, BorderMode, KernelMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Mean absolute difference over pixels.
    #[default]
    L1,
    /// Root-mean-square difference over pixels.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub pos_weight: f64,
    pub kernel_mode: KernelMode,
    pub norm_mode: NormMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.1,
            beta: 0.1,
            pos_weight: 4.0,
            kernel_mode: KernelMode::Mean,
            norm_mode: NormMode::L1,
        }
    }
}

impl LossConfig {
    /// Plain weighted BCE: both smoothness terms switched off.
    pub fn without_smoothing(self) -> Self {
        LossConfig {
            alpha: 0.0,
            beta: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("pos_weight", self.pos_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub bce: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub total: f64,
    pub grad_logits: Tensor,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,bce,spatial,temporal,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{}",
            self.bce, self.spatial, self.temporal, self.total
        )
    }
}

/// Splits a `…×T×h×w` tensor into `(T, h·w)`.
fn frames(t: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = t.plane_dims()?;
    if h < 1 || w < 1 {
        return Err(Error::InvalidShape(format!("empty frame {h}x{w}")));
    }
    let frames = t.plane_count()?;
    Ok((frames, h * w))
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean positive-weighted BCE on logits and its gradient.
///
/// Per element `w⁺·y·softplus(−z) + (1−y)·softplus(z)`, which equals
/// `−[w⁺·y·ln p + (1−y)·ln(1−p)]` without ever forming `ln` of a saturated
/// probability.
pub fn bce_loss(logits: &Tensor, labels: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    logits.expect_same_shape(labels)?;
    if let Some(bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract(format!("label value {bad} is not binary")));
    }
    let n = logits.len().max(1) as f64;
    let wp = cfg.pos_weight;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &z), &y) in grad.data_mut().iter_mut().zip(logits.data()).zip(labels.data()) {
        let p = crate::tensor::sigmoid_scalar(z);
        if y == 1.0 {
            loss += wp * softplus(-z);
            *g = wp * (p - 1.0) / n;
        } else {
            loss += softplus(z);
            *g = p / n;
        }
    }
    Ok((loss / n, grad))
}

/// Per-frame `‖P − K(P)‖`, averaged over frames; gradient with respect to
/// `P` includes the path through the filter.
pub fn spatial_smooth_loss(prob: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    let (t, n) = frames(prob)?;
    let diff = box_residual_3x3(prob, cfg.kernel_mode, BorderMode::Replicate)?;
    let mut values = Vec::with_capacity(t);
    // d loss / d diff
    let mut gd = Tensor::zeros(prob.shape());
    for (d, g) in diff.data().chunks(n).zip(gd.data_mut().chunks_mut(n)) {
        let (value, frame_grad) = frame_norm(d, cfg.norm_mode);
        values.push(value);
        for (gi, fg) in g.iter_mut().zip(frame_grad) {
            *gi = fg / t as f64;
        }
    }
    let back = box_filter_3x3_adjoint(&gd, cfg.kernel_mode)?;
    let grad = gd.zip_map(&back, |a, b| a - b)?;
    Ok((shifted_mean(&values), grad))
}

/// `1/(T−1) · Σ ‖Pᵗ − Pᵗ⁺¹‖` over consecutive frame pairs.
pub fn temporal_smooth_loss(prob: &Tensor, cfg: &LossConfig) -> Result<(f64, Tensor)> {
    let (t, n) = frames(prob)?;
    if t < 2 {
        return Err(Error::Contract(format!(
            "temporal smooth loss needs at least 2 frames, got {t}"
        )));
    }
    let pairs = (t - 1) as f64;
    let p = prob.data();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(prob.shape());
    let g = grad.data_mut();
    let mut d = vec![0.0; n];
    for k in 0..t - 1 {
        for (px, di) in d.iter_mut().enumerate() {
            *di = p[k * n + px] - p[(k + 1) * n + px];
        }
        let (value, frame_grad) = frame_norm(&d, cfg.norm_mode);
        loss += value;
        for (px, fg) in frame_grad.into_iter().enumerate() {
            g[k * n + px] += fg / pairs;
            g[(k + 1) * n + px] -= fg / pairs;
        }
    }
    Ok((loss / pairs, grad))
}

/// Norm of one frame of differences and its gradient.
/// Mean formed as the first value plus the average offset from it; exact when
/// all values are equal.
fn shifted_mean(v: &[f64]) -> f64 {
    match v.first() {
        None => 0.0,
        Some(&a) => a + v.iter().map(|x| x - a).sum::<f64>() / v.len() as f64,
    }
}

fn frame_norm(d: &[f64], mode: NormMode) -> (f64, Vec<f64>) {
    let n = d.len() as f64;
    match mode {
        NormMode::L1 => {
            let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
            let value = shifted_mean(&abs);
            (value, d.iter().map(|&x| sign(x) / n).collect())
        }
        NormMode::L2 => {
            let value = (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            if value == 0.0 {
                (0.0, vec![0.0; d.len()])
            } else {
                (value, d.iter().map(|&x| x / (n * value)).collect())
            }
        }
    }
}

/// `bce + α·spatial + β·temporal`, smoothness terms evaluated on
/// `sigmoid(logits)`, with the full gradient with respect to the logits.
pub fn total_loss(logits: &Tensor, labels: &Tensor, cfg: &LossConfig) -> Result<LossReport> {
    cfg.validate()?;
    let (bce, mut grad) = bce_loss(logits, labels, cfg)?;
    let prob = sigmoid(logits);
    let (spatial, gs) = spatial_smooth_loss(&prob, cfg)?;
    let (temporal, gt) = if frames(&prob)?.0 >= 2 {
        temporal_smooth_loss(&prob, cfg)?
    } else {
        (0.0, Tensor::zeros(prob.shape()))
    };
    for (((g, &p), &a), &b) in grad
        .data_mut()
        .iter_mut()
        .zip(prob.data())
        .zip(gs.data())
        .zip(gt.data())
    {
        *g += (cfg.alpha * a + cfg.beta * b) * p * (1.0 - p);
    }
    Ok(LossReport {
        bce,
        spatial,
        temporal,
        total: bce + cfg.alpha * spatial + cfg.beta * temporal,
        grad_logits: grad,
    })
}
