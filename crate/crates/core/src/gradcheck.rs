//! Central finite-difference checks for the loss terms and the forecaster.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::forecaster::{ModelParams, Mode};
use crate::losses::{bce_loss, spatial_smooth_loss, temporal_smooth_loss, total_loss, LossConfig};
use crate::rng::{name_tag, seeded};
use crate::tensor::{sigmoid, GridLayout, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so that gradients that are
/// zero analytically and numerically compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub bce: f64,
    pub spatial: f64,
    pub temporal: f64,
    pub total: f64,
    pub model: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        [self.bce, self.spatial, self.temporal, self.total, self.model]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= TOLERANCE
    }
}

/// Largest relative error between `grad` and central differences of `f`
/// around `x`.
pub fn check_scalar_fn(x: &Tensor, grad: &Tensor, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let x0 = x.data()[k];
        probe.data_mut()[k] = x0 + FD_STEP;
        let up = f(&probe)?;
        probe.data_mut()[k] = x0 - FD_STEP;
        let down = f(&probe)?;
        probe.data_mut()[k] = x0;
        worst = worst.max(relative_error(grad.data()[k], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

/// Micro-configuration used for the end-to-end model check.
pub const MICRO_LAYOUT: GridLayout = GridLayout {
    channels: 2,
    frames_in: 2,
    frames_out: 2,
    height: 8,
    width: 8,
    label_height: 4,
    label_width: 4,
};

/// Checks every loss term on `instances` random 1×2×5×5 problems and the
/// full model gradient on the micro-configuration.
pub fn run_gradcheck(instances: usize, seed: u64) -> Result<GradcheckReport> {
    let cfg = LossConfig::default();
    let shape = [1, 2, 5, 5];
    let mut report = GradcheckReport {
        instances,
        bce: 0.0,
        spatial: 0.0,
        temporal: 0.0,
        total: 0.0,
        model: 0.0,
    };
    for i in 0..instances {
        let mut rng = seeded(seed, &[name_tag("gradcheck"), i as u64]);
        let z = Tensor::from_fn(&shape, |_| rng.random_range(-3.0..3.0));
        let y = Tensor::from_fn(&shape, |_| rng.random_bool(0.4) as u8 as f64);
        let p = sigmoid(&z);

        let (_, g) = bce_loss(&z, &y, &cfg)?;
        report.bce = report.bce.max(check_scalar_fn(&z, &g, |t| Ok(bce_loss(t, &y, &cfg)?.0))?);
        let (_, g) = spatial_smooth_loss(&p, &cfg)?;
        report.spatial = report
            .spatial
            .max(check_scalar_fn(&p, &g, |t| Ok(spatial_smooth_loss(t, &cfg)?.0))?);
        let (_, g) = temporal_smooth_loss(&p, &cfg)?;
        report.temporal = report
            .temporal
            .max(check_scalar_fn(&p, &g, |t| Ok(temporal_smooth_loss(t, &cfg)?.0))?);
        let g = total_loss(&z, &y, &cfg)?.grad_logits;
        report.total = report
            .total
            .max(check_scalar_fn(&z, &g, |t| Ok(total_loss(t, &y, &cfg)?.total))?);
    }
    report.model = model_gradcheck(seed, &cfg)?;
    Ok(report)
}

/// Worst relative error of `backward` against central differences of
/// `total_loss ∘ forward` (eval mode) over every parameter.
pub fn model_gradcheck(seed: u64, cfg: &LossConfig) -> Result<f64> {
    let layout = MICRO_LAYOUT;
    let model = ModelParams::init(layout, 4, seed)?;
    let mut rng = seeded(seed, &[name_tag("gradcheck-model")]);
    let x = Tensor::from_fn(&layout.input_shape(), |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn(&layout.label_shape(), |_| rng.random_bool(0.4) as u8 as f64);
    let (logits, trace) = model.forward(&x, Mode::Eval)?;
    let report = total_loss(&logits, &y, cfg)?;
    let grads = model.backward(trace, &report.grad_logits)?;
    let loss_at = |m: &ModelParams| -> Result<f64> {
        let (l, _) = m.forward(&x, Mode::Eval)?;
        Ok(total_loss(&l, &y, cfg)?.total)
    };
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (slot, (_, g)) in grads.tensors().iter().enumerate() {
        for k in 0..g.len() {
            let x0 = probe.weights.tensors()[slot].1.data()[k];
            probe.weights.tensors_mut()[slot].1.data_mut()[k] = x0 + FD_STEP;
            let up = loss_at(&probe)?;
            probe.weights.tensors_mut()[slot].1.data_mut()[k] = x0 - FD_STEP;
            let down = loss_at(&probe)?;
            probe.weights.tensors_mut()[slot].1.data_mut()[k] = x0;
            worst = worst.max(relative_error(g.data()[k], (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}
