//! Test-time geometric augmentation ensemble: a single model evaluated on
//! transformed copies of the input, each probability map mapped back through
//! the inverse transform and averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::geometry::{apply, GeomTransform, PAPER_POLICY};
use crate::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: Vec<GeomTransform>,
}

/// Named member sets selectable from the command line.
pub const PRESET_NAMES: [&str; 3] = ["identity", "paper_main", "paper_full"];

impl EnsembleConfig {
    pub fn new(members: Vec<GeomTransform>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        for (k, g) in members.iter().enumerate() {
            if members[..k].contains(g) {
                return Err(Error::Config(format!("duplicate ensemble member `{g}`")));
            }
        }
        Ok(EnsembleConfig { members })
    }

    pub fn identity() -> Self {
        EnsembleConfig {
            members: vec![GeomTransform::IDENTITY],
        }
    }

    /// Original plus vertical flip.
    pub fn paper_main() -> Self {
        EnsembleConfig {
            members: vec![GeomTransform::IDENTITY, GeomTransform::VFLIP],
        }
    }

    /// Original plus all five policy transforms.
    pub fn paper_full() -> Self {
        let mut members = vec![GeomTransform::IDENTITY];
        members.extend(PAPER_POLICY);
        EnsembleConfig { members }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity()),
            "paper_main" => Ok(Self::paper_main()),
            "paper_full" => Ok(Self::paper_full()),
            _ => Err(Error::Config(format!(
                "unknown ensemble preset `{name}` (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn member_probability(model: &dyn Forecaster, x: &Tensor, g: GeomTransform) -> Result<Tensor> {
    let layout = model.layout();
    let xg = apply(g, x)?;
    if xg.shape() != x.shape() {
        return Err(Error::Config(format!(
            "transform `{g}` changes the input shape {:?} -> {:?}",
            x.shape(),
            xg.shape()
        )));
    }
    let logits = model.logits(&xg)?;
    layout.check_label(&logits)?;
    apply(g.inverse(), &sigmoid(&logits))
}

/// `(1/n) Σ_g g⁻¹(σ(F(g(x))))`. Members are summed in canonical group order
/// so the result does not depend on how the member list is ordered.
pub fn ensemble_predict(model: &dyn Forecaster, x: &Tensor, cfg: &EnsembleConfig) -> Result<Tensor> {
    if cfg.members.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let mut members = cfg.members.clone();
    members.sort_by_key(|g| g.index());
    members.dedup();
    if members.len() == 1 {
        return member_probability(model, x, members[0]);
    }
    let mut acc: Option<Tensor> = None;
    for g in &members {
        let p = member_probability(model, x, *g)?;
        acc = Some(match acc {
            None => p,
            Some(a) => a.zip_map(&p, |u, v| u + v)?,
        });
    }
    let n = members.len() as f64;
    Ok(acc.expect("non-empty").map(|v| v / n))
}

/// Mean absolute difference between `g⁻¹(σ(F(g(x))))` and `σ(F(x))`.
pub fn equivariance_gap(model: &dyn Forecaster, x: &Tensor, g: GeomTransform) -> Result<f64> {
    if g.is_identity() {
        return Ok(0.0);
    }
    let base = member_probability(model, x, GeomTransform::IDENTITY)?;
    let moved = member_probability(model, x, g)?;
    Ok(base
        .data()
        .iter()
        .zip(moved.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / base.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{ModelParams, PixelwiseForecaster};
    use crate::tensor::GridLayout;

    fn layout() -> GridLayout {
        GridLayout {
            channels: 2,
            frames_in: 2,
            frames_out: 3,
            height: 8,
            width: 8,
            label_height: 4,
            label_width: 4,
        }
    }

    fn x() -> Tensor {
        Tensor::from_fn(&layout().input_shape(), |k| ((k * 37) % 23) as f64 / 7.0 - 1.5)
    }

    /// Outputs `c` unless the input carries the flip marker, then `d`.
    struct Broken {
        c: f64,
        d: f64,
    }

    impl Forecaster for Broken {
        fn layout(&self) -> GridLayout {
            layout()
        }
        fn logits(&self, x: &Tensor) -> Result<Tensor> {
            // The marker sits in the top row; a vertical flip moves it.
            let v = if x.data()[0] == 1.0 { self.c } else { self.d };
            Ok(Tensor::full(&layout().label_shape(), v))
        }
    }

    #[test]
    fn two_member_average_of_constant_outputs() {
        let mut x = Tensor::zeros(&layout().input_shape());
        // Mark the top row of every plane so only the flipped copy differs.
        for p in 0..4 {
            for j in 0..8 {
                x.data_mut()[p * 64 + j] = 1.0;
            }
        }
        let m = Broken { c: 0.3, d: -1.1 };
        let y = ensemble_predict(&m, &x, &EnsembleConfig::paper_main()).unwrap();
        let want = (crate::tensor::sigmoid_scalar(0.3) + crate::tensor::sigmoid_scalar(-1.1)) / 2.0;
        assert!(y.data().iter().all(|&v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn single_identity_member_is_plain_forward() {
        let m = ModelParams::init(layout(), 3, 5).unwrap();
        let y = ensemble_predict(&m, &x(), &EnsembleConfig::identity()).unwrap();
        assert_eq!(y, sigmoid(&m.logits(&x()).unwrap()));
    }

    #[test]
    fn equivariant_model_collapses() {
        let m = PixelwiseForecaster { layout: layout(), gain: 1.0 };
        let single = sigmoid(&m.logits(&x()).unwrap());
        for name in PRESET_NAMES {
            let y = ensemble_predict(&m, &x(), &EnsembleConfig::preset(name).unwrap()).unwrap();
            assert!(y.max_abs_diff(&single) <= 1e-12);
        }
        for g in GeomTransform::ALL {
            assert!(equivariance_gap(&m, &x(), g).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn random_convnet_is_not_rotation_equivariant() {
        let m = ModelParams::init(layout(), 3, 5).unwrap();
        assert_eq!(equivariance_gap(&m, &x(), GeomTransform::IDENTITY).unwrap(), 0.0);
        assert!(equivariance_gap(&m, &x(), GeomTransform::ROT90).unwrap() > 0.0);
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!(EnsembleConfig::paper_full().len(), 6);
        assert!(EnsembleConfig::preset("bogus").is_err());
        assert!(EnsembleConfig::new(vec![]).is_err());
        assert!(EnsembleConfig::new(vec![GeomTransform::VFLIP, GeomTransform::VFLIP]).is_err());
    }
}
