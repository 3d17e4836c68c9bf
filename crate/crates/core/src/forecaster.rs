//! Reference forecaster: a three-layer convolutional network mapping a
//! `C×T_in×H×W` input to `1×T_out×h×w` logits, with hand-derived backward
//! pass.
//!
//! ```text
//! x (C·T_in planes) ─conv3x3─ReLU─conv3x3─ReLU─dropout─conv1x1─ crop → logits
//! ```
//!
//! Convolutions use zero "same" padding on the full frame. Only the pixels
//! that can reach the centre crop are evaluated: the first layer on the crop
//! grown by one pixel, the second layer and head on the crop itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{read_tensor, write_tensor, GridLayout, Tensor};

/// One set of network tensors; used both for weights and for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `[F, C·T_in, 3, 3]`
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    /// `[F, F, 3, 3]`
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    /// `[T_out, F]`
    pub head_w: Tensor,
    pub head_b: Tensor,
}

pub type ParamGrads = ParamSet;

pub const PARAM_NAMES: [&str; 6] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b",
];

impl ParamSet {
    pub fn zeros(layout: &GridLayout, features: usize) -> Self {
        let cin = layout.channels * layout.frames_in;
        let t_out = layout.frames_out;
        ParamSet {
            conv1_w: Tensor::zeros(&[features, cin, 3, 3]),
            conv1_b: Tensor::zeros(&[features]),
            conv2_w: Tensor::zeros(&[features, features, 3, 3]),
            conv2_b: Tensor::zeros(&[features]),
            head_w: Tensor::zeros(&[t_out, features]),
            head_b: Tensor::zeros(&[t_out]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape());
        ParamSet {
            conv1_w: z(&self.conv1_w),
            conv1_b: z(&self.conv1_b),
            conv2_w: z(&self.conv2_w),
            conv2_b: z(&self.conv2_b),
            head_w: z(&self.head_w),
            head_b: z(&self.head_b),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
        ]
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor in fixed order.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: GridLayout,
    pub features: usize,
    pub dropout_rate: f64,
    pub weights: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; the mask is drawn from this seed.
    Train(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn len(&self) -> usize {
        self.h * self.w
    }

    /// Grows by one pixel on each side, clipped to the frame.
    fn grow(&self, frame_h: usize, frame_w: usize) -> Rect {
        let r0 = self.r0.saturating_sub(1);
        let c0 = self.c0.saturating_sub(1);
        let r1 = (self.r0 + self.h + 1).min(frame_h);
        let c1 = (self.c0 + self.w + 1).min(frame_w);
        Rect {
            r0,
            c0,
            h: r1 - r0,
            w: c1 - c0,
        }
    }
}

/// Activations cached by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layout: GridLayout,
    features: usize,
    input: Vec<f64>,
    in_rect: Rect,
    mid_rect: Rect,
    out_rect: Rect,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    /// Post-ReLU, post-dropout features fed to the head.
    a2: Vec<f64>,
    /// Per-element dropout multiplier (0 or 1/(1−rate)); all ones in eval.
    mask: Vec<f64>,
}

/// `out[o] = b[o] + Σ_i Σ_k w[o,i,k] · in[i](p + k)`, reading zero outside
/// `in_rect`.
fn conv3x3(
    input: &[f64],
    in_rect: Rect,
    weights: &[f64],
    bias: &[f64],
    cin: usize,
    out_rect: Rect,
) -> Vec<f64> {
    let cout = bias.len();
    let n_out = out_rect.len();
    let n_in = in_rect.len();
    let mut out = vec![0.0; cout * n_out];
    for (o, plane) in out.chunks_mut(n_out).enumerate() {
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &input[i * n_in..(i + 1) * n_in];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    accumulate_shifted(plane, out_rect, src, in_rect, ky, kx, wv);
                }
            }
        }
    }
    out
}

/// `dst(p) += wv · src(p + (ky−1, kx−1))` over the part of `dst` whose
/// shifted position lies inside `src_rect`.
#[inline]
fn accumulate_shifted(
    dst: &mut [f64],
    dst_rect: Rect,
    src: &[f64],
    src_rect: Rect,
    ky: usize,
    kx: usize,
    wv: f64,
) {
    let Some((xs, xe)) = column_span(dst_rect, src_rect, kx) else {
        return;
    };
    for y in 0..dst_rect.h {
        let sy = (dst_rect.r0 + y + ky) as isize - 1 - src_rect.r0 as isize;
        if sy < 0 || sy >= src_rect.h as isize {
            continue;
        }
        let drow = &mut dst[y * dst_rect.w + xs..y * dst_rect.w + xe];
        let sbase = sy as usize * src_rect.w + (dst_rect.c0 + xs + kx - 1 - src_rect.c0);
        let srow = &src[sbase..sbase + (xe - xs)];
        for (d, s) in drow.iter_mut().zip(srow) {
            *d += wv * s;
        }
    }
}

/// Columns `x` of `dst_rect` (local, half-open) with `dst.c0 + x + kx − 1`
/// inside `src_rect`.
#[inline]
fn column_span(dst_rect: Rect, src_rect: Rect, kx: usize) -> Option<(usize, usize)> {
    let lo = src_rect.c0 as isize - dst_rect.c0 as isize - kx as isize + 1;
    let hi = lo + src_rect.w as isize;
    let xs = lo.max(0) as usize;
    let xe = hi.min(dst_rect.w as isize);
    if xe <= xs as isize {
        None
    } else {
        Some((xs, xe as usize))
    }
}

/// `Σ_p dst(p) · src(p + k)` over the same overlap as [`accumulate_shifted`].
#[inline]
fn correlate_shifted(
    grad: &[f64],
    grad_rect: Rect,
    src: &[f64],
    src_rect: Rect,
    ky: usize,
    kx: usize,
) -> f64 {
    let Some((xs, xe)) = column_span(grad_rect, src_rect, kx) else {
        return 0.0;
    };
    let mut acc = 0.0;
    for y in 0..grad_rect.h {
        let sy = (grad_rect.r0 + y + ky) as isize - 1 - src_rect.r0 as isize;
        if sy < 0 || sy >= src_rect.h as isize {
            continue;
        }
        let grow = &grad[y * grad_rect.w + xs..y * grad_rect.w + xe];
        let sbase = sy as usize * src_rect.w + (grad_rect.c0 + xs + kx - 1 - src_rect.c0);
        let srow = &src[sbase..sbase + (xe - xs)];
        acc += grow.iter().zip(srow).map(|(g, s)| g * s).sum::<f64>();
    }
    acc
}

/// Adjoint of [`accumulate_shifted`]: `src_grad(p + k) += wv · grad(p)`.
#[inline]
fn scatter_shifted(
    src_grad: &mut [f64],
    src_rect: Rect,
    grad: &[f64],
    grad_rect: Rect,
    ky: usize,
    kx: usize,
    wv: f64,
) {
    let Some((xs, xe)) = column_span(grad_rect, src_rect, kx) else {
        return;
    };
    for y in 0..grad_rect.h {
        let sy = (grad_rect.r0 + y + ky) as isize - 1 - src_rect.r0 as isize;
        if sy < 0 || sy >= src_rect.h as isize {
            continue;
        }
        let grow = &grad[y * grad_rect.w + xs..y * grad_rect.w + xe];
        let sbase = sy as usize * src_rect.w + (grad_rect.c0 + xs + kx - 1 - src_rect.c0);
        let srow = &mut src_grad[sbase..sbase + (xe - xs)];
        for (s, g) in srow.iter_mut().zip(grow) {
            *s += wv * g;
        }
    }
}

impl ModelParams {
    /// He-style uniform initialisation scaled by fan-in; biases start at zero.
    pub fn init(layout: GridLayout, features: usize, seed: u64) -> Result<Self> {
        layout.validate()?;
        if features == 0 {
            return Err(Error::Config("feature count must be >= 1".into()));
        }
        let mut weights = ParamSet::zeros(&layout, features);
        let cin = layout.channels * layout.frames_in;
        let mut rng = rng::seeded(seed, &[rng::name_tag("init")]);
        for (tensor, fan_in) in [
            (&mut weights.conv1_w, 9 * cin),
            (&mut weights.conv2_w, 9 * features),
            (&mut weights.head_w, features),
        ] {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in tensor.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(ModelParams {
            layout,
            features,
            dropout_rate: 0.4,
            weights,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.count()
    }

    fn crop_rect(&self) -> Rect {
        let (r0, c0) = self.layout.crop_origin();
        Rect {
            r0,
            c0,
            h: self.layout.label_height,
            w: self.layout.label_width,
        }
    }

    /// Logits on the centre crop, `1×T_out×h×w`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTrace)> {
        self.forward_on(x, mode, self.crop_rect())
    }

    /// Eval-mode head output on the whole `H×W` frame (before cropping).
    pub fn forward_full_frame(&self, x: &Tensor) -> Result<Tensor> {
        let rect = Rect {
            r0: 0,
            c0: 0,
            h: self.layout.height,
            w: self.layout.width,
        };
        Ok(self.forward_on(x, Mode::Eval, rect)?.0)
    }

    fn forward_on(&self, x: &Tensor, mode: Mode, out_rect: Rect) -> Result<(Tensor, ForwardTrace)> {
        self.layout.check_input(x)?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        let l = &self.layout;
        let f = self.features;
        let cin = l.channels * l.frames_in;
        let in_rect = Rect {
            r0: 0,
            c0: 0,
            h: l.height,
            w: l.width,
        };
        let mid_rect = out_rect.grow(l.height, l.width);
        let w = &self.weights;

        let z1 = conv3x3(x.data(), in_rect, w.conv1_w.data(), w.conv1_b.data(), cin, mid_rect);
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let z2 = conv3x3(&a1, mid_rect, w.conv2_w.data(), w.conv2_b.data(), f, out_rect);
        let n = out_rect.len();
        let mask: Vec<f64> = match mode {
            Mode::Eval => vec![1.0; f * n],
            Mode::Train(seed) => {
                let keep = 1.0 - self.dropout_rate;
                let scale = 1.0 / keep;
                let mut r = rng::seeded(seed, &[rng::name_tag("dropout")]);
                (0..f * n)
                    .map(|_| if r.random::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            }
        };
        let a2: Vec<f64> = z2
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v.max(0.0) * m)
            .collect();

        let t_out = l.frames_out;
        let mut logits = vec![0.0; t_out * n];
        let hw = w.head_w.data();
        for (k, out) in logits.chunks_mut(n).enumerate() {
            out.iter_mut().for_each(|v| *v = w.head_b.data()[k]);
            for (fi, feat) in a2.chunks(n).enumerate() {
                let wv = hw[k * f + fi];
                for (o, a) in out.iter_mut().zip(feat) {
                    *o += wv * a;
                }
            }
        }
        let logits = Tensor::new(vec![1, t_out, out_rect.h, out_rect.w], logits)?;
        let trace = ForwardTrace {
            layout: *l,
            features: f,
            input: x.data().to_vec(),
            in_rect,
            mid_rect,
            out_rect,
            z1,
            a1,
            z2,
            a2,
            mask,
        };
        Ok((logits, trace))
    }

    /// Exact gradients of a scalar loss with respect to every parameter,
    /// given `∂loss/∂logits`.
    pub fn backward(&self, trace: ForwardTrace, grad_logits: &Tensor) -> Result<ParamGrads> {
        let l = &self.layout;
        let f = self.features;
        let out_rect = trace.out_rect;
        let n = out_rect.len();
        if trace.layout != *l
            || trace.features != f
            || grad_logits.shape() != [1, l.frames_out, out_rect.h, out_rect.w]
        {
            return Err(Error::Contract(
                "trace or logit gradient does not match this model".into(),
            ));
        }
        let cin = l.channels * l.frames_in;
        let w = &self.weights;
        let mut g = ParamSet::zeros(l, f);
        let gl = grad_logits.data();

        // Head.
        let mut ga2 = vec![0.0; f * n];
        for (k, gk) in gl.chunks(n).enumerate() {
            g.head_b.data_mut()[k] = gk.iter().sum();
            for fi in 0..f {
                let feat = &trace.a2[fi * n..(fi + 1) * n];
                g.head_w.data_mut()[k * f + fi] =
                    gk.iter().zip(feat).map(|(a, b)| a * b).sum();
                let wv = w.head_w.data()[k * f + fi];
                for (d, s) in ga2[fi * n..(fi + 1) * n].iter_mut().zip(gk) {
                    *d += wv * s;
                }
            }
        }

        // Dropout and second ReLU.
        let gz2: Vec<f64> = ga2
            .iter()
            .zip(&trace.z2)
            .zip(&trace.mask)
            .map(|((&gv, &z), &m)| if z > 0.0 { gv * m } else { 0.0 })
            .collect();

        // Second convolution.
        let mid = trace.mid_rect;
        let nm = mid.len();
        let mut ga1 = vec![0.0; f * nm];
        for o in 0..f {
            let go = &gz2[o * n..(o + 1) * n];
            g.conv2_b.data_mut()[o] = go.iter().sum();
            for i in 0..f {
                let src = &trace.a1[i * nm..(i + 1) * nm];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let idx = ((o * f + i) * 3 + ky) * 3 + kx;
                        g.conv2_w.data_mut()[idx] =
                            correlate_shifted(go, out_rect, src, mid, ky, kx);
                        let wv = w.conv2_w.data()[idx];
                        scatter_shifted(&mut ga1[i * nm..(i + 1) * nm], mid, go, out_rect, ky, kx, wv);
                    }
                }
            }
        }

        // First ReLU and convolution.
        let gz1: Vec<f64> = ga1
            .iter()
            .zip(&trace.z1)
            .map(|(&gv, &z)| if z > 0.0 { gv } else { 0.0 })
            .collect();
        let n_in = trace.in_rect.len();
        for o in 0..f {
            let go = &gz1[o * nm..(o + 1) * nm];
            g.conv1_b.data_mut()[o] = go.iter().sum();
            for i in 0..cin {
                let src = &trace.input[i * n_in..(i + 1) * n_in];
                for ky in 0..3 {
                    for kx in 0..3 {
                        g.conv1_w.data_mut()[((o * cin + i) * 3 + ky) * 3 + kx] =
                            correlate_shifted(go, mid, src, trace.in_rect, ky, kx);
                    }
                }
            }
        }
        Ok(g)
    }

    /// Writes one NWT1 file per tensor plus `index.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();
        for (name, t) in self.weights.tensors() {
            let file = format!("{name}.nwt");
            write_tensor(t, dir.join(&file))?;
            files.insert(name.to_string(), file);
        }
        let index = BundleIndex {
            layout: self.layout,
            features: self.features,
            dropout_rate: self.dropout_rate,
            tensors: files,
        };
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&index)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: BundleIndex = serde_json::from_str(&text)?;
        let mut weights = ParamSet::zeros(&index.layout, index.features);
        for (name, slot) in weights.tensors_mut() {
            let file = index
                .tensors
                .get(name)
                .ok_or_else(|| Error::format("index", format!("missing tensor `{name}`")))?;
            let t = read_tensor(dir.join(file))?;
            if t.shape() != slot.shape() {
                return Err(Error::InvalidShape(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(ModelParams {
            layout: index.layout,
            features: index.features,
            dropout_rate: index.dropout_rate,
            weights,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleIndex {
    layout: GridLayout,
    features: usize,
    dropout_rate: f64,
    tensors: BTreeMap<String, String>,
}

/// Anything that maps an input sample to crop logits. Implementations must be
/// deterministic.
pub trait Forecaster: Send + Sync {
    fn layout(&self) -> GridLayout;
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

impl Forecaster for ModelParams {
    fn layout(&self) -> GridLayout {
        self.layout
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}

/// Exactly D4-equivariant stand-in model: output frame `k` at crop pixel
/// `(i, j)` is `gain ·` the input plane `k mod (C·T_in)` at the same pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelwiseForecaster {
    pub layout: GridLayout,
    pub gain: f64,
}

impl Forecaster for PixelwiseForecaster {
    fn layout(&self) -> GridLayout {
        self.layout
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.layout.check_input(x)?;
        let l = &self.layout;
        let planes = l.channels * l.frames_in;
        let crop = x.center_crop(l.label_height, l.label_width)?;
        let n = l.label_height * l.label_width;
        let mut out = Vec::with_capacity(l.frames_out * n);
        for k in 0..l.frames_out {
            let p = k % planes;
            out.extend(crop.data()[p * n..(p + 1) * n].iter().map(|v| v * self.gain));
        }
        Tensor::new(l.label_shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> GridLayout {
        GridLayout {
            channels: 2,
            frames_in: 2,
            frames_out: 2,
            height: 8,
            width: 8,
            label_height: 4,
            label_width: 4,
        }
    }

    fn input(l: &GridLayout, seed: u64) -> Tensor {
        let mut r = rng::seeded(seed, &[99]);
        Tensor::from_fn(&l.input_shape(), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let l = micro();
        let p = ModelParams {
            layout: l,
            features: 3,
            dropout_rate: 0.4,
            weights: ParamSet::zeros(&l, 3),
        };
        let (y, _) = p.forward(&input(&l, 1), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_zero_dropout_matches_eval() {
        let l = micro();
        let p = ModelParams::init(l, 4, 3).unwrap();
        let x = input(&l, 2);
        let a = p.forward(&x, Mode::Eval).unwrap().0;
        let b = p.forward(&x, Mode::Eval).unwrap().0;
        assert_eq!(a, b);
        let p0 = p.clone().with_dropout(0.0);
        assert_eq!(p0.forward(&x, Mode::Train(11)).unwrap().0, a);
        // With dropout active the output changes.
        assert_ne!(p.forward(&x, Mode::Train(11)).unwrap().0, a);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let l = micro();
        let p = ModelParams::init(l, 4, 3).unwrap();
        let (y, tr) = p.forward(&input(&l, 2), Mode::Eval).unwrap();
        let g = p.backward(tr, &Tensor::zeros(y.shape())).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_is_deterministic() {
        let l = micro();
        let p = ModelParams::init(l, 4, 3).unwrap();
        let x = input(&l, 5);
        let (y, tr) = p.forward(&x, Mode::Train(3)).unwrap();
        let gy = y.map(|v| v.sin());
        let g1 = p.backward(tr.clone(), &gy).unwrap();
        let g2 = p.backward(tr, &gy).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let l = micro();
        let p = ModelParams::init(l, 4, 3).unwrap();
        let q = ModelParams::init(l, 3, 3).unwrap();
        let (y, tr) = q.forward(&input(&l, 5), Mode::Eval).unwrap();
        assert!(matches!(p.backward(tr, &y), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_seeded() {
        let l = micro();
        assert_eq!(
            ModelParams::init(l, 4, 9).unwrap(),
            ModelParams::init(l, 4, 9).unwrap()
        );
        assert_ne!(
            ModelParams::init(l, 4, 9).unwrap(),
            ModelParams::init(l, 4, 10).unwrap()
        );
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let l = GridLayout::DESK;
        let p = ModelParams::init(l, 64, 1).unwrap();
        let d = p.weights.conv1_w.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        let target = 2.0 / (9.0 * 16.0);
        assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
    }

    #[test]
    fn crop_matches_full_frame_centre() {
        let l = micro();
        let p = ModelParams::init(l, 4, 3).unwrap();
        let x = input(&l, 8);
        let crop = p.forward(&x, Mode::Eval).unwrap().0;
        let full = p.forward_full_frame(&x).unwrap();
        assert_eq!(full.center_crop(4, 4).unwrap(), crop);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(micro(), 3, 4).unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(ModelParams::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn pixelwise_model_reads_crop() {
        let l = micro();
        let x = Tensor::from_fn(&l.input_shape(), |k| k as f64);
        let m = PixelwiseForecaster { layout: l, gain: 1.0 };
        let y = m.logits(&x).unwrap();
        assert_eq!(y.plane(0).unwrap(), x.plane(0).unwrap().center_crop(4, 4).unwrap());
        assert_eq!(y.plane(1).unwrap(), x.plane(1).unwrap().center_crop(4, 4).unwrap());
    }
}
