//! Component ablation: smoothing loss on/off × training augmentation mode ×
//! test-time ensemble preset, several seeds per cell.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::SamplerRegistry;
use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::forecaster::ModelParams;
use crate::metrics::{evaluate, EvalReport};
use crate::rng::{name_tag, stream_id};
use crate::synth::Dataset;
use crate::trainer::{train, TrainConfig};

/// Recipe used by the ablation: the default optimiser settings with a step
/// size large enough to converge within the desk-scale epoch budget.
pub fn desk_recipe() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationCell {
    pub stl: bool,
    pub ap: String,
    pub gae: String,
}

impl AblationCell {
    pub fn new(stl: bool, ap: &str, gae: &str) -> Self {
        AblationCell {
            stl,
            ap: ap.into(),
            gae: gae.into(),
        }
    }

    pub fn label(&self) -> String {
        format!("stl={} ap={} gae={}", self.stl as u8, self.ap, self.gae)
    }

    fn training_key(&self) -> (bool, String) {
        (self.stl, self.ap.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub cells: Vec<AblationCell>,
    pub seeds: Vec<u64>,
    /// Shared recipe; `loss.alpha/beta` and `aug_policy` are overridden per cell.
    pub train: TrainConfig,
    pub prob_threshold: f64,
}

impl AblationPlan {
    /// Four cumulative rows (baseline, +STL, +STL+AP, +STL+AP+GAE) followed by
    /// the two alternative augmentation modes with STL on.
    pub fn default_cells() -> Vec<AblationCell> {
        vec![
            AblationCell::new(false, "none", "identity"),
            AblationCell::new(true, "none", "identity"),
            AblationCell::new(true, "paper", "identity"),
            AblationCell::new(true, "paper", "paper_main"),
            AblationCell::new(true, "random_d4", "identity"),
            AblationCell::new(true, "inverse", "identity"),
        ]
    }

    pub fn new(train: TrainConfig, seeds: Vec<u64>) -> Self {
        AblationPlan {
            cells: Self::default_cells(),
            seeds,
            train,
            prob_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation plan needs at least one cell and one seed".into()));
        }
        let reg = SamplerRegistry::builtin();
        for c in &self.cells {
            reg.get(&c.ap)?;
            EnsembleConfig::preset(&c.gae)?;
        }
        self.train.validate()
    }

    fn cell_config(&self, cell: &AblationCell, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.aug_policy = cell.ap.clone();
        cfg.seed = seed;
        if !cell.stl {
            cfg.loss = cfg.loss.without_smoothing();
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub cell: AblationCell,
    pub seed: u64,
    /// Overall held-out mIoU in points (×100); NaN when undefined.
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: AblationCell,
    pub mean: f64,
    pub std: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
}

impl AblationResult {
    pub const CSV_HEADER: &'static str = "stl,ap,gae,seed,miou";

    pub fn cell_mean(&self, cell: &AblationCell) -> Option<f64> {
        self.summaries(None).into_iter().find(|s| &s.cell == cell).map(|s| s.mean)
    }

    /// Mean and population spread per cell, in first-appearance order. Gains
    /// are relative to `baseline` (default: the first cell).
    pub fn summaries(&self, baseline: Option<&AblationCell>) -> Vec<CellSummary> {
        let mut order: Vec<AblationCell> = Vec::new();
        let mut vals: BTreeMap<AblationCell, Vec<f64>> = BTreeMap::new();
        for r in &self.runs {
            if !vals.contains_key(&r.cell) {
                order.push(r.cell.clone());
            }
            vals.entry(r.cell.clone()).or_default().push(r.miou);
        }
        let stats = |c: &AblationCell| {
            let v = &vals[c];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let base = baseline
            .filter(|b| vals.contains_key(*b))
            .or(order.first())
            .map(|b| stats(b).0)
            .unwrap_or(f64::NAN);
        order
            .iter()
            .map(|c| {
                let (mean, std) = stats(c);
                CellSummary {
                    cell: c.clone(),
                    mean,
                    std,
                    gain: mean - base,
                }
            })
            .collect()
    }

    /// Per-run rows followed by `mean` and `std` rows for every cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.runs {
            let _ = writeln!(s, "{},{},{},{},{:.4}", r.cell.stl as u8, r.cell.ap, r.cell.gae, r.seed, r.miou);
        }
        for c in self.summaries(None) {
            let (stl, ap, gae) = (c.cell.stl as u8, &c.cell.ap, &c.cell.gae);
            let _ = writeln!(s, "{stl},{ap},{gae},mean,{:.4}", c.mean);
            let _ = writeln!(s, "{stl},{ap},{gae},std,{:.4}", c.std);
        }
        s
    }

    /// Table with the gain column relative to the first cell.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("stl,ap,gae,mean,std,gain\n");
        for c in self.summaries(None) {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:+.4}",
                c.cell.stl as u8, c.cell.ap, c.cell.gae, c.mean, c.std, c.gain
            );
        }
        s
    }
}

/// The held-out datasets an ablation is scored on.
pub struct AblationData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

fn points(r: &EvalReport) -> f64 {
    r.miou().map_or(f64::NAN, |v| 100.0 * v)
}

/// Trains every distinct (stl, ap) pair once per seed and scores each cell's
/// ensemble on the test split. When `out` is given, the CSVs are rewritten
/// after each completed training so partial results survive interruption.
pub fn run_ablation(plan: &AblationPlan, data: &AblationData<'_>, out: Option<&Path>) -> Result<AblationResult> {
    plan.validate()?;
    let mut result = AblationResult::default();
    let mut done: Vec<(bool, String)> = Vec::new();
    for cell in &plan.cells {
        let key = cell.training_key();
        if done.contains(&key) {
            continue;
        }
        done.push(key.clone());
        let siblings: Vec<&AblationCell> = plan.cells.iter().filter(|c| c.training_key() == key).collect();
        for &seed in &plan.seeds {
            let cfg = plan.cell_config(cell, seed);
            let init_seed = stream_id(&[seed, name_tag("init")]);
            let init = ModelParams::init(data.train.layout, cfg.features, init_seed)?.with_dropout(cfg.dropout_rate);
            log::info!("ablation: training {} seed {seed}", cell.label());
            let (model, _) = train(init, data.train, data.val, &cfg)?;
            for c in &siblings {
                let ens = EnsembleConfig::preset(&c.gae)?;
                let report = evaluate(&model, &data.test.samples, Some(&ens), plan.prob_threshold)?;
                result.runs.push(AblationRun {
                    cell: (*c).clone(),
                    seed,
                    miou: points(&report),
                });
            }
        }
        if let Some(dir) = out {
            write_outputs(&result, dir)?;
        }
    }
    // Restore plan order: rows were pushed grouped by training.
    let rank = |c: &AblationCell| plan.cells.iter().position(|p| p == c).unwrap_or(usize::MAX);
    result.runs.sort_by_key(|r| (rank(&r.cell), plan.seeds.iter().position(|&s| s == r.seed)));
    if let Some(dir) = out {
        write_outputs(&result, dir)?;
    }
    Ok(result)
}

pub fn write_outputs(result: &AblationResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("ablation.csv", result.to_csv()),
        ("ablation_summary.csv", result.summary_csv()),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_shape() {
        let cells = AblationPlan::default_cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], AblationCell::new(false, "none", "identity"));
        assert_eq!(cells[3], AblationCell::new(true, "paper", "paper_main"));
        let plan = AblationPlan::new(TrainConfig::default(), vec![0, 1, 2]);
        plan.validate().unwrap();
    }

    #[test]
    fn baseline_gain_is_zero() {
        let cells = AblationPlan::default_cells();
        let runs = cells
            .iter()
            .enumerate()
            .flat_map(|(k, c)| {
                (0..3).map(move |s| AblationRun {
                    cell: c.clone(),
                    seed: s,
                    miou: 10.0 + k as f64 + s as f64,
                })
            })
            .collect();
        let r = AblationResult { runs };
        let s = r.summaries(None);
        assert_eq!(s[0].gain, 0.0);
        assert_eq!(s[3].gain, 3.0);
        assert!(r.to_csv().starts_with("stl,ap,gae,seed,miou\n0,none,identity,0,10.0000\n"));
        assert!(r.summary_csv().contains("0,none,identity,11.0000,0.8165,+0.0000"));
    }
}
