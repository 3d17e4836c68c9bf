//! IoU bookkeeping per region and lead time, plus rain-frequency maps.
//!
//! An IoU whose union is empty (no predicted and no observed rain) is
//! undefined and left out of every mean. mIoU averages the defined per-lead
//! IoUs of a region, then averages regions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_predict, EnsembleConfig};
use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::synth::{DatasetManifest, Sample, Split};
use crate::tensor::{sigmoid, Tensor};

pub const DEFAULT_PROB_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn iou(&self) -> Option<f64> {
        let union = self.tp + self.fp + self.fn_;
        (union > 0).then(|| self.tp as f64 / union as f64)
    }
}

fn check_binary(name: &str, t: &Tensor) -> Result<()> {
    if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!("{name} must be binary, found {v}")));
    }
    Ok(())
}

/// Counts over two binary tensors of equal shape.
pub fn confusion(pred: &Tensor, gt: &Tensor) -> Result<Confusion> {
    pred.expect_same_shape(gt)?;
    check_binary("prediction", pred)?;
    check_binary("ground truth", gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `TP / (TP + FP + FN)`, or `None` when that union is empty.
pub fn iou(pred: &Tensor, gt: &Tensor) -> Result<Option<f64>> {
    Ok(confusion(pred, gt)?.iou())
}

pub fn binarize(prob: &Tensor, threshold: f64) -> Tensor {
    prob.map(|p| (p >= threshold) as u8 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub region: String,
    /// One entry per lead time.
    pub leads: Vec<Confusion>,
}

impl RegionCounts {
    pub fn miou(&self) -> Option<f64> {
        mean_defined(self.leads.iter().map(Confusion::iou))
    }
}

fn mean_defined(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = it.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prob_threshold: f64,
    pub regions: Vec<RegionCounts>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "region,lead,tp,fp,fn,tn,iou";

    pub fn region(&self, id: &str) -> Option<&RegionCounts> {
        self.regions.iter().find(|r| r.region == id)
    }

    pub fn miou(&self) -> Option<f64> {
        mean_defined(self.regions.iter().map(RegionCounts::miou))
    }

    /// Per (region, lead) counts; undefined IoUs are written as `nan`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.regions {
            for (lead, c) in r.leads.iter().enumerate() {
                let iou = c.iou().map_or("nan".to_string(), |v| v.to_string());
                let _ = writeln!(s, "{},{},{},{},{},{},{}", r.region, lead, c.tp, c.fp, c.fn_, c.tn, iou);
            }
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| format!("{v:.6}"))
}

/// Leaderboard-style table: one row per method, one column per region (taken
/// from the first report), and the overall mIoU.
pub fn summary_csv(rows: &[(String, EvalReport)]) -> String {
    let regions: Vec<String> = rows
        .first()
        .map(|(_, r)| r.regions.iter().map(|c| c.region.clone()).collect())
        .unwrap_or_default();
    let mut s = String::from("method");
    for r in &regions {
        s.push(',');
        s.push_str(r);
    }
    s.push_str(",miou\n");
    for (method, report) in rows {
        s.push_str(method);
        for r in &regions {
            s.push(',');
            s.push_str(&fmt_opt(report.region(r).and_then(RegionCounts::miou)));
        }
        s.push(',');
        s.push_str(&fmt_opt(report.miou()));
        s.push('\n');
    }
    s
}

/// Per-lead counts for one sample.
pub fn sample_counts(
    model: &dyn Forecaster,
    sample: &Sample,
    ensemble: Option<&EnsembleConfig>,
    prob_threshold: f64,
) -> Result<Vec<Confusion>> {
    let layout = model.layout();
    layout.check_input(&sample.input)?;
    layout.check_label(&sample.label)?;
    let prob = match ensemble {
        Some(cfg) => ensemble_predict(model, &sample.input, cfg)?,
        None => sigmoid(&model.logits(&sample.input)?),
    };
    let pred = binarize(&prob, prob_threshold);
    (0..layout.frames_out)
        .map(|k| confusion(&pred.plane(k)?, &sample.label.plane(k)?))
        .collect()
}

/// Scores a set of samples. Regions appear in first-appearance order.
pub fn evaluate(
    model: &dyn Forecaster,
    samples: &[Sample],
    ensemble: Option<&EnsembleConfig>,
    prob_threshold: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("nothing to evaluate: split is empty".into()));
    }
    if !(0.0..=1.0).contains(&prob_threshold) {
        return Err(Error::Config(format!(
            "probability threshold must lie in [0, 1], got {prob_threshold}"
        )));
    }
    let per: Vec<Vec<Confusion>> = samples
        .par_iter()
        .map(|s| sample_counts(model, s, ensemble, prob_threshold))
        .collect::<Result<_>>()?;
    let mut regions: Vec<RegionCounts> = Vec::new();
    for (s, counts) in samples.iter().zip(per) {
        let idx = match regions.iter().position(|r| r.region == s.region) {
            Some(i) => i,
            None => {
                regions.push(RegionCounts {
                    region: s.region.clone(),
                    leads: vec![Confusion::default(); counts.len()],
                });
                regions.len() - 1
            }
        };
        for (acc, c) in regions[idx].leads.iter_mut().zip(&counts) {
            acc.add(c);
        }
    }
    Ok(EvalReport {
        prob_threshold,
        regions,
    })
}

pub fn evaluate_split(
    model: &dyn Forecaster,
    manifest: &DatasetManifest,
    split: Split,
    ensemble: Option<&EnsembleConfig>,
    prob_threshold: f64,
) -> Result<EvalReport> {
    let data = manifest.dataset(split)?;
    if data.layout != model.layout() {
        return Err(Error::Config(format!(
            "dataset layout {:?} does not match model layout {:?}",
            data.layout,
            model.layout()
        )));
    }
    evaluate(model, &data.samples, ensemble, prob_threshold)
}

/// Per-pixel fraction of label frames with rain.
pub fn rain_frequency<'a>(labels: impl IntoIterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    let mut frames = 0usize;
    for y in labels {
        let (h, w) = y.plane_dims()?;
        let acc = acc.get_or_insert_with(|| Tensor::zeros(&[h, w]));
        if acc.shape() != [h, w] {
            return Err(Error::InvalidShape(format!(
                "label planes {h}x{w} do not match {:?}",
                acc.shape()
            )));
        }
        for plane in y.data().chunks(h * w) {
            for (a, &v) in acc.data_mut().iter_mut().zip(plane) {
                *a += (v >= 0.5) as u8 as f64;
            }
            frames += 1;
        }
    }
    let acc = acc.ok_or_else(|| Error::Config("no label frames".into()))?;
    Ok(acc.map(|v| v / frames as f64))
}

/// Rain-frequency map of one region across every split it appears in.
pub fn rain_frequency_map(manifest: &DatasetManifest, region: &str) -> Result<Tensor> {
    let entry = manifest.region(region)?;
    let labels: Vec<Tensor> = manifest
        .files_for(region, entry.split)
        .map(|f| manifest.read_label(f))
        .collect::<Result<_>>()?;
    if labels.is_empty() {
        let l = manifest.layout;
        return Ok(Tensor::zeros(&[l.label_height, l.label_width]));
    }
    rain_frequency(&labels)
}

/// Fraction of rainy label pixels.
pub fn rain_fraction(samples: &[Sample]) -> f64 {
    let (mut rain, mut total) = (0usize, 0usize);
    for s in samples {
        rain += s.label.data().iter().filter(|&&v| v >= 0.5).count();
        total += s.label.len();
    }
    rain as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::PixelwiseForecaster;
    use crate::tensor::GridLayout;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = t(&[2, 2], &[1., 1., 0., 0.]);
        let b = t(&[2, 2], &[1., 0., 1., 0.]);
        assert_eq!(iou(&a, &a).unwrap(), Some(1.0));
        assert_eq!(iou(&a, &b).unwrap(), Some(1.0 / 3.0));
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(iou(&z, &z).unwrap(), None);
        assert!(matches!(iou(&t(&[1], &[0.5]), &t(&[1], &[1.0])), Err(Error::Contract(_))));
    }

    fn layout() -> GridLayout {
        GridLayout {
            channels: 1,
            frames_in: 2,
            frames_out: 2,
            height: 4,
            width: 4,
            label_height: 4,
            label_width: 4,
        }
    }

    fn sample(region: &str, label: Vec<f64>) -> Sample {
        Sample {
            region: region.into(),
            input: Tensor::zeros(&layout().input_shape()),
            label: t(&layout().label_shape(), &label),
        }
    }

    #[test]
    fn all_zero_predictor_scores_zero_on_rainy_data() {
        // gain 1 on a zero input gives p = 0.5, so threshold just above.
        let m = PixelwiseForecaster { layout: layout(), gain: 1.0 };
        let mut lab = vec![0.0; 32];
        lab[3] = 1.0;
        lab[20] = 1.0;
        let r = evaluate(&m, &[sample("a", lab)], None, 0.6).unwrap();
        assert_eq!(r.miou(), Some(0.0));
        assert_eq!(r.regions[0].leads[0].total(), 16);
    }

    #[test]
    fn dry_regions_are_excluded() {
        let m = PixelwiseForecaster { layout: layout(), gain: 1.0 };
        let mut lab = vec![0.0; 32];
        lab[0] = 1.0;
        let s = [sample("wet", lab), sample("dry", vec![0.0; 32])];
        let r = evaluate(&m, &s, None, 0.6).unwrap();
        assert_eq!(r.region("dry").unwrap().miou(), None);
        // Lead 1 of the wet region has no rain either and is skipped.
        assert_eq!(r.region("wet").unwrap().miou(), Some(0.0));
        assert_eq!(r.miou(), Some(0.0));
    }

    #[test]
    fn identity_ensemble_matches_single_pass_counts() {
        let m = PixelwiseForecaster { layout: layout(), gain: 3.0 };
        let s: Vec<Sample> = (0..3)
            .map(|k| Sample {
                region: "a".into(),
                input: Tensor::from_fn(&layout().input_shape(), |i| ((i * 7 + k) % 5) as f64 - 2.0),
                label: Tensor::from_fn(&layout().label_shape(), |i| ((i + k) % 3 == 0) as u8 as f64),
            })
            .collect();
        let a = evaluate(&m, &s, None, 0.5).unwrap();
        let b = evaluate(&m, &s, Some(&EnsembleConfig::identity()), 0.5).unwrap();
        assert_eq!(a, b);
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(evaluate(&m, &rev, None, 0.5).unwrap().regions[0].leads, a.regions[0].leads);
    }

    #[test]
    fn frequency_of_constant_labels() {
        let ones = Tensor::full(&[3, 4, 4], 1.0);
        let f = rain_frequency([&ones]).unwrap();
        assert!(f.data().iter().all(|&v| v == 1.0));
        let zeros = Tensor::zeros(&[3, 4, 4]);
        let f = rain_frequency([&zeros, &ones]).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn csv_layouts() {
        let r = EvalReport {
            prob_threshold: 0.5,
            regions: vec![RegionCounts {
                region: "a".into(),
                leads: vec![
                    Confusion { tp: 1, fp: 1, fn_: 0, tn: 2 },
                    Confusion { tp: 0, fp: 0, fn_: 0, tn: 4 },
                ],
            }],
        };
        assert_eq!(r.to_csv(), "region,lead,tp,fp,fn,tn,iou\na,0,1,1,0,2,0.5\na,1,0,0,0,4,nan\n");
        assert_eq!(
            summary_csv(&[("single".into(), r)]),
            "method,a,miou\nsingle,0.500000,0.500000\n"
        );
    }
}
