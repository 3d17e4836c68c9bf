//! Synthetic advective-rain benchmark with controlled regional and seasonal
//! shift.
//!
//! A region is a wind regime, a rain climatology (cell birth rate, size and
//! intensity) with a seasonal cycle, and a spatial birth-probability map. A
//! sequence is simulated on the visible `H×W` frame padded by
//! [`DOMAIN_MARGIN`] pixels on every side so rain can drift in from outside:
//! each frame the continuous rain-rate field is moved by bilinear backward
//! warping along the sequence's wind, damped by the region's decay factor,
//! and new Gaussian cells are added.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{read_tensor, write_tensor, GridLayout, Tensor};

/// Rain-rate threshold (mm/h) separating rain from no rain in labels.
pub const RAIN_THRESHOLD: f64 = 0.2;
/// Padding around the visible frame in the simulation domain.
pub const DOMAIN_MARGIN: usize = 12;
const SPINUP_FRAMES: usize = 24;
const CLOUD_BLUR_SIGMA: f64 = 2.0;

/// A Gaussian bump in the birth-probability map, in visible-frame pixel
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
    pub gain: f64,
}

/// Birth-probability multiplier: `floor + Σ gain · exp(−d² / 2σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBias {
    pub floor: f64,
    pub hotspots: Vec<Hotspot>,
}

impl FrequencyBias {
    pub fn uniform() -> Self {
        FrequencyBias {
            floor: 1.0,
            hotspots: Vec::new(),
        }
    }

    pub fn at(&self, row: f64, col: f64) -> f64 {
        self.floor
            + self
                .hotspots
                .iter()
                .map(|h| {
                    let d2 = (row - h.row).powi(2) + (col - h.col).powi(2);
                    h.gain * (-d2 / (2.0 * h.sigma * h.sigma)).exp()
                })
                .sum::<f64>()
    }

    /// The map sampled on the label window of `layout`.
    pub fn crop_map(&self, layout: &GridLayout) -> Tensor {
        let (r0, c0) = layout.crop_origin();
        let (h, w) = (layout.label_height, layout.label_width);
        Tensor::from_fn(&[h, w], |k| {
            self.at((r0 + k / w) as f64, (c0 + k % w) as f64)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub region_id: String,
    /// Mean advection `(east, south)` in pixels per frame.
    pub wind_mean: [f64; 2],
    /// Per-sequence standard deviation of each wind component.
    pub wind_jitter: f64,
    /// Expected new cells per frame over the whole simulation domain.
    pub cell_birth_rate: f64,
    /// Relative amplitude of the seasonal birth-rate cycle.
    pub season_amplitude: f64,
    /// Season position (fraction of a year) of peak birth rate.
    pub season_phase: f64,
    /// Peak rain rate of a new cell (mm/h): mean and standard deviation.
    pub cell_intensity: [f64; 2],
    /// Cell Gaussian radius (px): mean and standard deviation.
    pub cell_radius: [f64; 2],
    /// Per-frame multiplicative decay of the whole field.
    pub decay: f64,
    pub frequency_bias: FrequencyBias,
}

impl RegionSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("region {}: {what}", self.region_id)));
        if !(self.cell_birth_rate >= 0.0) {
            return bad("birth rate must be >= 0");
        }
        if !(self.cell_radius[0] > 0.0) || self.cell_radius[1] < 0.0 {
            return bad("radius must be > 0");
        }
        if self.frequency_bias.floor < 0.0 || self.frequency_bias.hotspots.iter().any(|h| h.gain < 0.0 || h.sigma <= 0.0) {
            return bad("frequency bias must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return bad("decay must lie in [0, 1]");
        }
        if self.wind_jitter < 0.0 {
            return bad("wind jitter must be >= 0");
        }
        Ok(())
    }

    /// Direction of `wind_mean` in degrees, counterclockwise from east.
    pub fn wind_angle(&self) -> f64 {
        (-self.wind_mean[1]).atan2(self.wind_mean[0]).to_degrees().rem_euclid(360.0)
    }
}

/// One Gaussian rain cell, in simulation-domain pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    pub peak: f64,
}

/// Rain-rate field evolution for one sequence.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: RegionSpec,
    side: usize,
    margin: usize,
    visible: usize,
    field: Vec<f64>,
    wind: [f64; 2],
    birth_rate: f64,
    rng: Rng,
}

impl Simulator {
    /// Draws the sequence's wind and seasonal birth rate from `rng`.
    pub fn new(spec: &RegionSpec, visible: usize, mut rng: Rng) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let wind = [
            spec.wind_mean[0] + spec.wind_jitter * normal.sample(&mut rng),
            spec.wind_mean[1] + spec.wind_jitter * normal.sample(&mut rng),
        ];
        let season: f64 = rng.random();
        let modulation =
            1.0 + spec.season_amplitude * (2.0 * std::f64::consts::PI * (season - spec.season_phase)).cos();
        let side = visible + 2 * DOMAIN_MARGIN;
        Ok(Simulator {
            spec: spec.clone(),
            side,
            margin: DOMAIN_MARGIN,
            visible,
            field: vec![0.0; side * side],
            wind,
            birth_rate: spec.cell_birth_rate * modulation.max(0.0),
            rng,
        })
    }

    pub fn wind(&self) -> [f64; 2] {
        self.wind
    }

    pub fn set_wind(&mut self, wind: [f64; 2]) {
        self.wind = wind;
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn domain_field(&self) -> &[f64] {
        &self.field
    }

    pub fn add_cell(&mut self, c: Cell) {
        let n = self.side;
        let reach = (4.0 * c.radius).ceil() as isize;
        let (ci, cj) = (c.row.round() as isize, c.col.round() as isize);
        let inv = 1.0 / (2.0 * c.radius * c.radius);
        for i in (ci - reach).max(0)..(ci + reach + 1).min(n as isize) {
            for j in (cj - reach).max(0)..(cj + reach + 1).min(n as isize) {
                let d2 = (i as f64 - c.row).powi(2) + (j as f64 - c.col).powi(2);
                self.field[i as usize * n + j as usize] += c.peak * (-d2 * inv).exp();
            }
        }
    }

    /// Moves the field one frame along the wind (bilinear backward warp,
    /// zero inflow at the domain edge), then applies decay.
    pub fn advect(&mut self) {
        let n = self.side;
        let [dx, dy] = self.wind;
        let (fy, fx) = (dy.floor(), dx.floor());
        let (ay, ax) = (dy - fy, dx - fx);
        let (oy, ox) = (fy as isize, fx as isize);
        let decay = self.spec.decay;
        let old = &self.field;
        let at = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
                0.0
            } else {
                old[i as usize * n + j as usize]
            }
        };
        // new(i, j) = old(i − dy, j − dx)
        let mut new = vec![0.0; n * n];
        for i in 0..n as isize {
            for j in 0..n as isize {
                let (si, sj) = (i - oy, j - ox);
                let v = (1.0 - ay) * (1.0 - ax) * at(si, sj)
                    + (1.0 - ay) * ax * at(si, sj - 1)
                    + ay * (1.0 - ax) * at(si - 1, sj)
                    + ay * ax * at(si - 1, sj - 1);
                new[i as usize * n + j as usize] = v * decay;
            }
        }
        self.field = new;
    }

    fn spawn(&mut self) -> Result<()> {
        if self.birth_rate <= 0.0 {
            return Ok(());
        }
        let count = Poisson::new(self.birth_rate)
            .map_err(|e| Error::Config(format!("poisson: {e}")))?
            .sample(&mut self.rng) as usize;
        let bias = self.spec.frequency_bias.clone();
        let m = self.margin as f64;
        let side = self.side as f64;
        // Rejection sampling against the bias map; its maximum is bounded by
        // floor + Σ gain.
        let bound = bias.floor + bias.hotspots.iter().map(|h| h.gain).sum::<f64>();
        let radius = Normal::new(self.spec.cell_radius[0], self.spec.cell_radius[1])
            .map_err(|e| Error::Config(format!("radius distribution: {e}")))?;
        let peak = Normal::new(self.spec.cell_intensity[0], self.spec.cell_intensity[1])
            .map_err(|e| Error::Config(format!("intensity distribution: {e}")))?;
        for _ in 0..count {
            let (row, col) = loop {
                let row = self.rng.random::<f64>() * side;
                let col = self.rng.random::<f64>() * side;
                if bound <= 0.0 || self.rng.random::<f64>() * bound < bias.at(row - m, col - m) {
                    break (row, col);
                }
            };
            let r = radius.sample(&mut self.rng).max(0.5);
            let p = peak.sample(&mut self.rng).max(0.3);
            self.add_cell(Cell {
                row,
                col,
                radius: r,
                peak: p,
            });
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        self.advect();
        self.spawn()
    }

    /// The visible `H×W` window of the current field.
    pub fn visible_frame(&self) -> Tensor {
        crop_domain(&self.field, self.side, self.margin, self.visible)
    }
}

fn crop_domain(field: &[f64], side: usize, margin: usize, visible: usize) -> Tensor {
    let mut out = Vec::with_capacity(visible * visible);
    for i in 0..visible {
        let row = (i + margin) * side + margin;
        out.extend_from_slice(&field[row..row + visible]);
    }
    Tensor::new(vec![visible, visible], out).expect("square crop")
}

fn gaussian_blur(field: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (t, kv) in kernel.iter().enumerate() {
                    let o = t as isize - radius;
                    let (ii, jj) = if horizontal {
                        (i as isize, j as isize + o)
                    } else {
                        (i as isize + o, j as isize)
                    };
                    let ii = ii.clamp(0, n as isize - 1) as usize;
                    let jj = jj.clamp(0, n as isize - 1) as usize;
                    acc += kv * src[ii * n + jj];
                }
                out[i * n + j] = acc;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

fn gradient_magnitude(field: &[f64], n: usize) -> Vec<f64> {
    let at = |i: isize, j: isize| {
        field[i.clamp(0, n as isize - 1) as usize * n + j.clamp(0, n as isize - 1) as usize]
    };
    let mut out = vec![0.0; n * n];
    for i in 0..n as isize {
        for j in 0..n as isize {
            let gy = 0.5 * (at(i + 1, j) - at(i - 1, j));
            let gx = 0.5 * (at(i, j + 1) - at(i, j - 1));
            out[i as usize * n + j as usize] = gx.hypot(gy);
        }
    }
    out
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    /// `C×T_in×H×W`: raw rate, blurred rate, one-frame-lagged rate,
    /// gradient magnitude.
    pub input: Tensor,
    /// `1×T_out×h×w` binary rain mask of future frames.
    pub label: Tensor,
    /// `t_total×H×W` visible rain-rate frames.
    pub truth: Tensor,
    pub wind: [f64; 2],
}

/// Simulates one sequence. Frames `0..T_in` feed the input, frames
/// `T_in..T_in+T_out` the label.
pub fn generate_sequence(
    spec: &RegionSpec,
    layout: &GridLayout,
    t_total: usize,
    seed: u64,
) -> Result<GeneratedSequence> {
    let sim = Simulator::new(spec, layout.height, rng::seeded(seed, &[rng::name_tag("sequence")]))?;
    run_sequence(sim, layout, t_total)
}

/// Drives an already-configured simulator through spin-up and recording.
pub fn run_sequence(mut sim: Simulator, layout: &GridLayout, t_total: usize) -> Result<GeneratedSequence> {
    layout.validate()?;
    if layout.channels != 4 {
        return Err(Error::Config(format!(
            "the generator emits 4 channels, layout asks for {}",
            layout.channels
        )));
    }
    if t_total < layout.frames_in + layout.frames_out {
        return Err(Error::Config(format!(
            "t_total {t_total} < T_in + T_out = {}",
            layout.frames_in + layout.frames_out
        )));
    }
    for _ in 0..SPINUP_FRAMES {
        sim.step()?;
    }
    let n = sim.side();
    let (m, vis) = (sim.margin(), layout.height);
    // Frame −1 (for the lag channel) through t_total − 1.
    let mut domain_frames = Vec::with_capacity(t_total + 1);
    domain_frames.push(sim.domain_field().to_vec());
    for _ in 0..t_total {
        sim.step()?;
        domain_frames.push(sim.domain_field().to_vec());
    }
    let crop = |f: &[f64]| crop_domain(f, n, m, vis);

    let (ti, hw) = (layout.frames_in, vis * vis);
    let mut input = vec![0.0; 4 * ti * hw];
    for t in 0..ti {
        let cur = &domain_frames[t + 1];
        let views = [
            crop(cur),
            crop(&gaussian_blur(cur, n, CLOUD_BLUR_SIGMA)),
            crop(&domain_frames[t]),
            crop(&gradient_magnitude(cur, n)),
        ];
        for (c, v) in views.iter().enumerate() {
            input[(c * ti + t) * hw..(c * ti + t + 1) * hw].copy_from_slice(v.data());
        }
    }
    let mut label = Vec::with_capacity(layout.frames_out * layout.label_height * layout.label_width);
    for t in ti..ti + layout.frames_out {
        let frame = crop(&domain_frames[t + 1]).center_crop(layout.label_height, layout.label_width)?;
        label.extend(frame.data().iter().map(|&r| (r >= RAIN_THRESHOLD) as u8 as f64));
    }
    let mut truth = Vec::with_capacity(t_total * hw);
    for f in &domain_frames[1..] {
        truth.extend_from_slice(crop(f).data());
    }
    Ok(GeneratedSequence {
        input: Tensor::new(layout.input_shape().to_vec(), input)?,
        label: Tensor::new(layout.label_shape().to_vec(), label)?,
        truth: Tensor::new(vec![t_total, vis, vis], truth)?,
        wind: sim.wind(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub spec: RegionSpec,
    pub split: Split,
    pub year_tag: u32,
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub layout: GridLayout,
    pub t_total: usize,
    pub seed: u64,
    pub regions: Vec<RegionEntry>,
}

fn hotspot(row: f64, col: f64, sigma: f64, gain: f64) -> Hotspot {
    Hotspot { row, col, sigma, gain }
}

fn region(id: &str, angle_deg: f64, speed: f64, bias: FrequencyBias, phase: f64) -> RegionSpec {
    let a = angle_deg.to_radians();
    RegionSpec {
        region_id: id.to_string(),
        wind_mean: [speed * a.cos(), -speed * a.sin()],
        wind_jitter: 0.1,
        cell_birth_rate: 0.45,
        season_amplitude: 0.5,
        season_phase: phase,
        cell_intensity: [3.0, 1.2],
        cell_radius: [3.5, 1.0],
        decay: 0.9,
        frequency_bias: bias,
    }
}

impl BenchmarkConfig {
    /// Three training regions with eastward, south-eastward and north-eastward
    /// winds, one validation region, and two held-out test regions whose
    /// winds blow westward / south-westward in a later, phase-shifted year.
    pub fn default_benchmark() -> Self {
        let speed = 0.8;
        let train_bias = [
            FrequencyBias {
                floor: 0.15,
                hotspots: vec![hotspot(14.0, 22.0, 6.0, 1.0)],
            },
            FrequencyBias {
                floor: 0.15,
                hotspots: vec![hotspot(30.0, 18.0, 6.0, 1.0)],
            },
            FrequencyBias {
                floor: 0.15,
                hotspots: vec![hotspot(20.0, 30.0, 5.0, 1.0), hotspot(32.0, 28.0, 4.0, 0.6)],
            },
        ];
        let mut regions = Vec::new();
        for ((id, angle), bias) in [("r-east", 0.0), ("r-southeast", 315.0), ("r-northeast", 45.0)]
            .into_iter()
            .zip(train_bias)
        {
            regions.push(RegionEntry {
                spec: region(id, angle, speed, bias, 0.5),
                split: Split::Train,
                year_tag: 2019,
                sequences: 200,
            });
        }
        regions.push(RegionEntry {
            spec: region(
                "r-val",
                20.0,
                speed,
                FrequencyBias {
                    floor: 0.2,
                    hotspots: vec![hotspot(24.0, 24.0, 8.0, 0.8)],
                },
                0.5,
            ),
            split: Split::Val,
            year_tag: 2020,
            sequences: 40,
        });
        for (id, angle, bias) in [
            (
                "r-test-southwest",
                210.0,
                FrequencyBias {
                    floor: 0.2,
                    hotspots: vec![hotspot(26.0, 20.0, 7.0, 0.9)],
                },
            ),
            (
                "r-test-west",
                180.0,
                FrequencyBias {
                    floor: 0.2,
                    hotspots: vec![hotspot(20.0, 26.0, 7.0, 0.9)],
                },
            ),
        ] {
            regions.push(RegionEntry {
                spec: region(id, angle, speed, bias, 0.75),
                split: Split::Test,
                year_tag: 2021,
                sequences: 80,
            });
        }
        BenchmarkConfig {
            layout: GridLayout::DESK,
            t_total: GridLayout::DESK.frames_in + GridLayout::DESK.frames_out,
            seed: 7,
            regions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let count = |s: Split| self.regions.iter().filter(|r| r.split == s).count();
        if count(Split::Train) < 3 || count(Split::Test) < 2 {
            return Err(Error::Config(
                "benchmark needs >= 3 train regions and >= 2 test regions".into(),
            ));
        }
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.regions {
            r.spec.validate()?;
            if !ids.insert(r.spec.region_id.as_str()) {
                return Err(Error::Config(format!(
                    "region id `{}` appears more than once",
                    r.spec.region_id
                )));
            }
        }
        let train_years: Vec<u32> = self
            .regions
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.year_tag)
            .collect();
        if self
            .regions
            .iter()
            .any(|r| r.split == Split::Test && train_years.contains(&r.year_tag))
        {
            return Err(Error::Config("test year tags must differ from train".into()));
        }
        Ok(())
    }

    /// Per-sequence seed: independent of generation order.
    pub fn sequence_seed(&self, region_id: &str, seq: usize) -> u64 {
        rng::stream_id(&[self.seed, rng::name_tag(region_id), seq as u64])
    }

    pub fn generate(&self, region: &RegionEntry, seq: usize) -> Result<GeneratedSequence> {
        generate_sequence(
            &region.spec,
            &self.layout,
            self.t_total,
            self.sequence_seed(&region.spec.region_id, seq),
        )
    }

    /// Generates one split in memory.
    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let mut samples = Vec::new();
        for r in self.regions.iter().filter(|r| r.split == split) {
            for seq in 0..r.sequences {
                let g = self.generate(r, seq)?;
                samples.push(Sample {
                    region: r.spec.region_id.clone(),
                    input: g.input,
                    label: g.label,
                });
            }
        }
        Ok(Dataset {
            layout: self.layout,
            samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub region: String,
    pub split: Split,
    pub seq: usize,
    pub input: PathBuf,
    pub label: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub layout: GridLayout,
    pub t_total: usize,
    pub seed: u64,
    pub regions: Vec<RegionEntry>,
    pub files: Vec<FileEntry>,
    /// Directory the relative file paths resolve against; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let path = if root.is_dir() { root.join(MANIFEST_FILE) } else { root.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn files_for<'a>(&'a self, region: &'a str, split: Split) -> impl Iterator<Item = &'a FileEntry> + 'a {
        self.files
            .iter()
            .filter(move |f| f.region == region && f.split == split)
    }

    pub fn read_input(&self, f: &FileEntry) -> Result<Tensor> {
        read_tensor(self.root.join(&f.input))
    }

    pub fn read_label(&self, f: &FileEntry) -> Result<Tensor> {
        read_tensor(self.root.join(&f.label))
    }

    pub fn region(&self, id: &str) -> Result<&RegionEntry> {
        self.regions
            .iter()
            .find(|r| r.spec.region_id == id)
            .ok_or_else(|| Error::Config(format!("unknown region `{id}`")))
    }

    /// Loads one split, checking every referenced file exists first.
    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let entries: Vec<&FileEntry> = self.files.iter().filter(|f| f.split == split).collect();
        let missing: Vec<PathBuf> = entries
            .iter()
            .flat_map(|f| [self.root.join(&f.input), self.root.join(&f.label)])
            .filter(|p| !p.exists())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        let mut samples = Vec::with_capacity(entries.len());
        for f in entries {
            let input = self.read_input(f)?;
            let label = self.read_label(f)?;
            self.layout.check_input(&input)?;
            self.layout.check_label(&label)?;
            samples.push(Sample {
                region: f.region.clone(),
                input,
                label,
            });
        }
        Ok(Dataset {
            layout: self.layout,
            samples,
        })
    }
}

/// Writes every sequence and `manifest.json` under `root`. Refuses to touch an
/// existing manifest unless `force` is set.
pub fn build_benchmark(config: &BenchmarkConfig, root: impl AsRef<Path>, force: bool) -> Result<DatasetManifest> {
    config.validate()?;
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            manifest_path.display()
        )));
    }
    let mut files = Vec::new();
    for r in &config.regions {
        let rel_dir = PathBuf::from(&r.spec.region_id).join(r.split.name());
        let dir = root.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for seq in 0..r.sequences {
            let g = config.generate(r, seq)?;
            let input = rel_dir.join(format!("{seq:04}.input.nwt"));
            let label = rel_dir.join(format!("{seq:04}.label.nwt"));
            write_tensor(&g.input, root.join(&input))?;
            write_tensor(&g.label, root.join(&label))?;
            files.push(FileEntry {
                region: r.spec.region_id.clone(),
                split: r.split,
                seq,
                input,
                label,
            });
        }
    }
    let manifest = DatasetManifest {
        layout: config.layout,
        t_total: config.t_total,
        seed: config.seed,
        regions: config.regions.clone(),
        files,
        root: root.to_path_buf(),
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub region: String,
    pub input: Tensor,
    pub label: Tensor,
}

/// An in-memory split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: GridLayout,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Region ids in first-appearance order.
    pub fn regions(&self) -> Vec<String> {
        let mut seen = BTreeMap::new();
        for (k, s) in self.samples.iter().enumerate() {
            seen.entry(s.region.clone()).or_insert(k);
        }
        let mut v: Vec<(usize, String)> = seen.into_iter().map(|(r, k)| (k, r)).collect();
        v.sort();
        v.into_iter().map(|(_, r)| r).collect()
    }
}
