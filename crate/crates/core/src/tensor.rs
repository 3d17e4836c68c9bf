//! Dense row-major `f64` tensors, the 3×3 neighbourhood filter used by the
//! smooth loss, and the NWT1 binary file format.
//!
//! Axis convention: the last two axes are always the spatial plane, rows
//! (`i`, increasing southward) then columns (`j`, increasing eastward).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Spatial extents `(H, W)` of the trailing plane.
    pub fn plane_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [.., h, w] => Ok((*h, *w)),
            _ => Err(Error::InvalidShape(format!(
                "expected rank >= 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Number of `H×W` planes stacked in the leading axes.
    pub fn plane_count(&self) -> Result<usize> {
        let (h, w) = self.plane_dims()?;
        Ok(if h * w == 0 { 0 } else { self.data.len() / (h * w) })
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::InvalidShape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copies out the `index`-th trailing plane.
    pub fn plane(&self, index: usize) -> Result<Tensor> {
        let (h, w) = self.plane_dims()?;
        let n = h * w;
        let start = index * n;
        if start + n > self.data.len() {
            return Err(Error::InvalidShape(format!(
                "plane {index} out of range for shape {:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: vec![h, w],
            data: self.data[start..start + n].to_vec(),
        })
    }

    /// Center crop of every trailing plane to `h×w`.
    pub fn center_crop(&self, h: usize, w: usize) -> Result<Tensor> {
        let (big_h, big_w) = self.plane_dims()?;
        if h > big_h || w > big_w || !(big_h - h).is_multiple_of(2) || !(big_w - w).is_multiple_of(2) {
            return Err(Error::InvalidShape(format!(
                "cannot center-crop {big_h}x{big_w} to {h}x{w}"
            )));
        }
        let (r0, c0) = ((big_h - h) / 2, (big_w - w) / 2);
        let planes = self.plane_count()?;
        let mut data = Vec::with_capacity(planes * h * w);
        for p in 0..planes {
            let base = p * big_h * big_w;
            for i in 0..h {
                let row = base + (r0 + i) * big_w + c0;
                data.extend_from_slice(&self.data[row..row + w]);
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Ok(Tensor { shape, data })
    }
}

/// Shape bookkeeping for one nowcasting sample: `C×T_in×H×W` inputs and
/// `1×T_out×h×w` labels taken from the centre of the input window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub channels: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    pub height: usize,
    pub width: usize,
    pub label_height: usize,
    pub label_width: usize,
}

impl GridLayout {
    /// Desk-scale benchmark layout.
    pub const DESK: GridLayout = GridLayout {
        channels: 4,
        frames_in: 4,
        frames_out: 8,
        height: 48,
        width: 48,
        label_height: 16,
        label_width: 16,
    };

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.channels,
            self.frames_in,
            self.frames_out,
            self.height,
            self.width,
            self.label_height,
            self.label_width,
        ];
        if counts.contains(&0) {
            return Err(Error::Config(format!("layout has a zero extent: {self:?}")));
        }
        if self.height != self.width {
            return Err(Error::Config(format!(
                "grid must be square, got {}x{}",
                self.height, self.width
            )));
        }
        if self.label_height > self.height || self.label_width > self.width {
            return Err(Error::Config(format!(
                "label window {}x{} exceeds input {}x{}",
                self.label_height, self.label_width, self.height, self.width
            )));
        }
        if !(self.height - self.label_height).is_multiple_of(2) || !(self.width - self.label_width).is_multiple_of(2)
        {
            return Err(Error::Config(
                "label window cannot be centered: margins must be even".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.channels, self.frames_in, self.height, self.width]
    }

    pub fn label_shape(&self) -> [usize; 4] {
        [1, self.frames_out, self.label_height, self.label_width]
    }

    /// Top-left corner of the label window inside the input plane.
    pub fn crop_origin(&self) -> (usize, usize) {
        (
            (self.height - self.label_height) / 2,
            (self.width - self.label_width) / 2,
        )
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::InvalidShape(format!(
                "input shape {:?} does not match layout {:?}",
                x.shape(),
                self.input_shape()
            )));
        }
        Ok(())
    }

    pub fn check_label(&self, y: &Tensor) -> Result<()> {
        if y.shape() != self.label_shape() {
            return Err(Error::InvalidShape(format!(
                "label shape {:?} does not match layout {:?}",
                y.shape(),
                self.label_shape()
            )));
        }
        Ok(())
    }
}

/// Logistic function, split on sign so neither branch overflows.
#[inline]
pub fn sigmoid_scalar(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    #[default]
    Mean,
    Sum,
}

impl KernelMode {
    pub fn scale(self) -> f64 {
        match self {
            KernelMode::Mean => 1.0 / 9.0,
            KernelMode::Sum => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderMode {
    #[default]
    Replicate,
}

/// 3×3 box filter over every trailing plane, out-of-range neighbours taken
/// from the nearest edge pixel.
///
/// The mean is formed as the centre value plus the average deviation of the
/// neighbourhood from it, which is exact on constant regions.
pub fn box_filter_3x3(p: &Tensor, mode: KernelMode, _border: BorderMode) -> Result<Tensor> {
    let (h, w) = p.plane_dims()?;
    if h < 1 || w < 1 {
        return Err(Error::InvalidShape(format!(
            "box filter needs a non-empty plane, got {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(p.shape());
    let n = h * w;
    for (src, dst) in p.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        for i in 0..h {
            for j in 0..w {
                let centre = src[i * w + j];
                let (mut acc, mut dev) = (0.0, 0.0);
                for di in [-1isize, 0, 1] {
                    let ii = clamp_index(i as isize + di, h);
                    for dj in [-1isize, 0, 1] {
                        let jj = clamp_index(j as isize + dj, w);
                        acc += src[ii * w + jj];
                        dev += src[ii * w + jj] - centre;
                    }
                }
                dst[i * w + j] = match mode {
                    KernelMode::Sum => acc,
                    KernelMode::Mean => centre + dev / 9.0,
                };
            }
        }
    }
    Ok(out)
}

/// `p − K(p)` for the 3×3 filter, accumulated as neighbourhood deviations
/// from the centre so a constant plane gives exactly 0 (mean) or `−8c` (sum).
pub fn box_residual_3x3(p: &Tensor, mode: KernelMode, _border: BorderMode) -> Result<Tensor> {
    let (h, w) = p.plane_dims()?;
    if h < 1 || w < 1 {
        return Err(Error::InvalidShape(format!(
            "box filter needs a non-empty plane, got {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(p.shape());
    let n = h * w;
    for (src, dst) in p.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        for i in 0..h {
            for j in 0..w {
                let centre = src[i * w + j];
                let mut dev = 0.0;
                for di in [-1isize, 0, 1] {
                    let ii = clamp_index(i as isize + di, h);
                    for dj in [-1isize, 0, 1] {
                        let jj = clamp_index(j as isize + dj, w);
                        dev += src[ii * w + jj] - centre;
                    }
                }
                dst[i * w + j] = match mode {
                    KernelMode::Sum => -(8.0 * centre + dev),
                    KernelMode::Mean => -dev / 9.0,
                };
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`box_filter_3x3`]: scatters each plane element back onto the
/// (edge-replicated) inputs that fed it.
pub fn box_filter_3x3_adjoint(g: &Tensor, mode: KernelMode) -> Result<Tensor> {
    let (h, w) = g.plane_dims()?;
    if h < 1 || w < 1 {
        return Err(Error::InvalidShape(format!(
            "box filter needs a non-empty plane, got {h}x{w}"
        )));
    }
    let scale = mode.scale();
    let mut out = Tensor::zeros(g.shape());
    let n = h * w;
    for (src, dst) in g.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j] * scale;
                for di in [-1isize, 0, 1] {
                    let ii = clamp_index(i as isize + di, h);
                    for dj in [-1isize, 0, 1] {
                        let jj = clamp_index(j as isize + dj, w);
                        dst[ii * w + jj] += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

const NWT1_MAGIC: [u8; 4] = *b"NWT1";
const DTYPE_F64_LE: u8 = 0x01;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    buf.extend_from_slice(&NWT1_MAGIC);
    buf.push(DTYPE_F64_LE);
    buf.push(t.rank() as u8);
    buf.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 {
        return Err(Error::format("header", "truncated header"));
    }
    if bytes[0..4] != NWT1_MAGIC {
        return Err(Error::format("magic", "bad magic"));
    }
    if bytes[4] != DTYPE_F64_LE {
        return Err(Error::format(
            "dtype",
            format!("unknown dtype code 0x{:02x}", bytes[4]),
        ));
    }
    let rank = bytes[5] as usize;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::format("reserved", "reserved bytes must be zero"));
    }
    let dims_end = 8 + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::format("extents", "truncated extents"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for k in 0..rank {
        let off = 8 + 8 * k;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| Error::format("extents", "extent overflow"))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format("extents", "element count overflow"))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    if payload.len() != count * 8 {
        return Err(Error::format(
            "payload",
            format!(
                "expected {} payload bytes, found {}",
                count * 8,
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_tensor(t))
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
