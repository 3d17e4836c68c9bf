//! Frame-to-frame motion estimation by exhaustive block matching, motion
//! direction histograms, and the augmentation admissibility audit.
//!
//! Displacements are `(u east, v south)` in pixels between the two frames.
//! Angles are measured counterclockwise from east on screen, i.e.
//! `atan2(−v, u)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AugPolicy, GeomTransform};
use crate::synth::{DatasetManifest, Split};
use crate::tensor::{clamp_index, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockMatchConfig {
    pub block: usize,
    pub search_radius: usize,
    /// Blocks of `frame_a` with intensity variance below this are untextured.
    pub texture_threshold: f64,
}

impl Default for BlockMatchConfig {
    fn default() -> Self {
        BlockMatchConfig {
            block: 8,
            search_radius: 4,
            texture_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Tensor,
    pub v: Tensor,
    pub valid: Tensor,
}

/// Integer displacement per `block×block` tile minimising the sum of squared
/// differences; `frame_b` is sampled with edge replication. Ties go to the
/// smallest displacement magnitude, then smallest `dy`, then smallest `dx`.
pub fn block_matching_flow(
    frame_a: &Tensor,
    frame_b: &Tensor,
    cfg: &BlockMatchConfig,
) -> Result<FlowField> {
    if frame_a.rank() != 2 || frame_a.shape() != frame_b.shape() {
        return Err(Error::InvalidShape(format!(
            "block matching needs two equal H×W frames, got {:?} and {:?}",
            frame_a.shape(),
            frame_b.shape()
        )));
    }
    if cfg.block < 3 || cfg.search_radius < 1 {
        return Err(Error::Config(format!(
            "block must be >= 3 and search radius >= 1, got {} / {}",
            cfg.block, cfg.search_radius
        )));
    }
    let (h, w) = frame_a.plane_dims()?;
    let a = frame_a.data();
    let b = frame_b.data();
    let r = cfg.search_radius as isize;
    let mut candidates: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .collect();
    candidates.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));

    let mut u = Tensor::zeros(&[h, w]);
    let mut v = Tensor::zeros(&[h, w]);
    let mut valid = Tensor::zeros(&[h, w]);
    for bi in (0..h).step_by(cfg.block) {
        let bi1 = (bi + cfg.block).min(h);
        for bj in (0..w).step_by(cfg.block) {
            let bj1 = (bj + cfg.block).min(w);
            let count = ((bi1 - bi) * (bj1 - bj)) as f64;
            let mut mean = 0.0;
            for i in bi..bi1 {
                mean += a[i * w + bj..i * w + bj1].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for i in bi..bi1 {
                var += a[i * w + bj..i * w + bj1]
                    .iter()
                    .map(|x| (x - mean).powi(2))
                    .sum::<f64>();
            }
            var /= count;
            if var < cfg.texture_threshold {
                continue;
            }
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for &(dy, dx) in &candidates {
                let mut ssd = 0.0;
                for i in bi..bi1 {
                    let si = clamp_index(i as isize + dy, h);
                    for j in bj..bj1 {
                        let sj = clamp_index(j as isize + dx, w);
                        let d = a[i * w + j] - b[si * w + sj];
                        ssd += d * d;
                    }
                }
                if ssd < best.0 {
                    best = (ssd, dy, dx);
                }
            }
            for i in bi..bi1 {
                for j in bj..bj1 {
                    u.data_mut()[i * w + j] = best.2 as f64;
                    v.data_mut()[i * w + j] = best.1 as f64;
                    valid.data_mut()[i * w + j] = 1.0;
                }
            }
        }
    }
    Ok(FlowField { u, v, valid })
}

pub const DIRECTION_BINS: usize = 16;
const BIN_WIDTH: f64 = 360.0 / DIRECTION_BINS as f64;

/// Speed-weighted histogram of motion directions. Bin `k` is centred on
/// `k · 22.5°`, so east, north, west and south fall on bin centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionHistogram {
    pub mass: [f64; DIRECTION_BINS],
}

impl DirectionHistogram {
    pub fn zero() -> Self {
        DirectionHistogram {
            mass: [0.0; DIRECTION_BINS],
        }
    }

    pub fn bin_center(k: usize) -> f64 {
        k as f64 * BIN_WIDTH
    }

    pub fn bin_of(angle_deg: f64) -> usize {
        let a = angle_deg.rem_euclid(360.0);
        (((a + BIN_WIDTH / 2.0) / BIN_WIDTH).floor() as usize) % DIRECTION_BINS
    }

    pub fn is_zero(&self) -> bool {
        self.mass.iter().all(|&m| m == 0.0)
    }

    /// Sum of several histograms' raw weights, renormalised.
    pub fn pooled(parts: &[[f64; DIRECTION_BINS]]) -> Self {
        let mut mass = [0.0; DIRECTION_BINS];
        for p in parts {
            for (m, x) in mass.iter_mut().zip(p) {
                *m += x;
            }
        }
        normalized(mass)
    }

    /// Bins holding at least `fraction` of the largest bin's mass.
    pub fn dominant_bins(&self, fraction: f64) -> Vec<usize> {
        let max = self.mass.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return Vec::new();
        }
        (0..DIRECTION_BINS)
            .filter(|&k| self.mass[k] >= fraction * max)
            .collect()
    }
}

fn normalized(mut mass: [f64; DIRECTION_BINS]) -> DirectionHistogram {
    let total: f64 = mass.iter().sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|m| *m /= total);
    }
    DirectionHistogram { mass }
}

/// Raw (unnormalised) speed-weighted direction counts.
pub fn direction_weights(f: &FlowField, min_speed: f64) -> [f64; DIRECTION_BINS] {
    let mut mass = [0.0; DIRECTION_BINS];
    for ((&u, &v), &ok) in f.u.data().iter().zip(f.v.data()).zip(f.valid.data()) {
        let speed = u.hypot(v);
        if ok == 0.0 || speed < min_speed || speed == 0.0 {
            continue;
        }
        let angle = (-v).atan2(u).to_degrees();
        mass[DirectionHistogram::bin_of(angle)] += speed;
    }
    mass
}

pub fn direction_histogram(f: &FlowField, min_speed: f64) -> DirectionHistogram {
    normalized(direction_weights(f, min_speed))
}

fn angle_of(v: [f64; 2]) -> f64 {
    (-v[1]).atan2(v[0]).to_degrees().rem_euclid(360.0)
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Whether `g` keeps at least one dominant motion direction within
/// `max_angle` degrees of some dominant direction of the original data. An
/// empty histogram carries no evidence, so every transform is admissible.
pub fn admissible(
    g: GeomTransform,
    hist: &DirectionHistogram,
    dominance_fraction: f64,
    max_angle: f64,
) -> bool {
    let dominant = hist.dominant_bins(dominance_fraction);
    if dominant.is_empty() {
        return true;
    }
    let angles: Vec<f64> = dominant.iter().map(|&k| DirectionHistogram::bin_center(k)).collect();
    angles.iter().any(|&d| {
        let r = d.to_radians();
        let mapped = angle_of(g.transform_vector([r.cos(), -r.sin()]));
        angles
            .iter()
            .any(|&d2| angular_distance(mapped, d2) <= max_angle + 1e-9)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditParams {
    pub matching: BlockMatchConfig,
    pub min_speed: f64,
    pub dominance_fraction: f64,
    pub max_angle: f64,
}

impl Default for AuditParams {
    fn default() -> Self {
        AuditParams {
            matching: BlockMatchConfig::default(),
            min_speed: 0.5,
            dominance_fraction: 0.5,
            max_angle: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionAudit {
    pub region: String,
    pub sequences: usize,
    pub histogram: DirectionHistogram,
    /// One verdict per element of [`GeomTransform::ALL`].
    pub verdicts: Vec<(GeomTransform, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub regions: Vec<RegionAudit>,
    pub warnings: Vec<String>,
}

impl AuditReport {
    pub const CSV_HEADER: &'static str = "region,transform,dominant_bins,verdict";

    pub fn to_csv(&self, params: &AuditParams) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.regions {
            let bins = r
                .histogram
                .dominant_bins(params.dominance_fraction)
                .iter()
                .map(|&k| format!("{}", DirectionHistogram::bin_center(k)))
                .collect::<Vec<_>>()
                .join(";");
            for (g, ok) in &r.verdicts {
                let verdict = if *ok { "admissible" } else { "inadmissible" };
                let _ = writeln!(out, "{},{},{},{}", r.region, g, bins, verdict);
            }
        }
        out
    }
}

/// The two frames compared for a stored input sample: the lagged-rate view of
/// the first input frame against the raw rate of the last input frame.
pub fn motion_frames(input: &Tensor) -> Result<(Tensor, Tensor)> {
    let [c, t, _, _] = match input.shape() {
        [c, t, h, w] => [*c, *t, *h, *w],
        s => return Err(Error::InvalidShape(format!("expected C×T×H×W, got {s:?}"))),
    };
    if c < 3 {
        // No lagged channel: fall back to first and last raw frames.
        return Ok((input.plane(0)?, input.plane(t - 1)?));
    }
    Ok((input.plane(2 * t)?, input.plane(t - 1)?))
}

/// Audits one region's samples against all eight transforms.
pub fn audit_region<'a>(
    region: &str,
    inputs: impl IntoIterator<Item = &'a Tensor>,
    params: &AuditParams,
) -> Result<RegionAudit> {
    let mut parts = Vec::new();
    for x in inputs {
        let (a, b) = motion_frames(x)?;
        let flow = block_matching_flow(&a, &b, &params.matching)?;
        parts.push(direction_weights(&flow, params.min_speed));
    }
    let histogram = DirectionHistogram::pooled(&parts);
    let verdicts = GeomTransform::ALL
        .iter()
        .map(|&g| {
            (
                g,
                admissible(g, &histogram, params.dominance_fraction, params.max_angle),
            )
        })
        .collect();
    Ok(RegionAudit {
        region: region.to_string(),
        sequences: parts.len(),
        histogram,
        verdicts,
    })
}

/// Per-region direction audit over every training sequence in a manifest,
/// with a warning for each policy member that a region's motion rules out.
pub fn audit_policy(
    manifest: &DatasetManifest,
    policy: &AugPolicy,
    params: &AuditParams,
) -> Result<AuditReport> {
    let mut regions = Vec::new();
    let mut warnings = Vec::new();
    for entry in manifest.regions.iter().filter(|r| r.split == Split::Train) {
        let inputs = manifest
            .files_for(&entry.spec.region_id, Split::Train)
            .map(|f| manifest.read_input(f))
            .collect::<Result<Vec<_>>>()?;
        regions.push(audit_region(&entry.spec.region_id, &inputs, params)?);
    }
    let total: usize = regions.iter().map(|r| r.sequences).sum();
    if total == 0 {
        warnings.push("warning: no training sequences found; all transforms admissible".into());
    }
    for r in &regions {
        for (g, ok) in &r.verdicts {
            if !ok && policy.members.contains(g) {
                warnings.push(format!(
                    "warning: policy member `{g}` is inadmissible for region `{}`",
                    r.region
                ));
            }
        }
    }
    Ok(AuditReport { regions, warnings })
}

/// Arrow overlay: one `<line>` per valid tile, from the tile centre along the
/// displacement scaled by `arrow_scale`.
pub fn render_flow_svg(flow: &FlowField, block: usize, pixel_size: f64, arrow_scale: f64) -> String {
    let (h, w) = (flow.u.shape()[0], flow.u.shape()[1]);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        w as f64 * pixel_size,
        h as f64 * pixel_size,
        w as f64 * pixel_size,
        h as f64 * pixel_size
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="black"/>"#);
    for bi in (0..h).step_by(block.max(1)) {
        for bj in (0..w).step_by(block.max(1)) {
            let k = bi * w + bj;
            if flow.valid.data()[k] == 0.0 {
                continue;
            }
            let (u, v) = (flow.u.data()[k], flow.v.data()[k]);
            if u == 0.0 && v == 0.0 {
                continue;
            }
            let cy = (bi as f64 + (block.min(h - bi)) as f64 / 2.0) * pixel_size;
            let cx = (bj as f64 + (block.min(w - bj)) as f64 / 2.0) * pixel_size;
            let _ = writeln!(
                s,
                r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="lime" stroke-width="1"/>"#,
                cx,
                cy,
                cx + u * arrow_scale * pixel_size,
                cy + v * arrow_scale * pixel_size
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
