//! Static figures: binary PPM images and the flow arrow SVG.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use crate::flow::render_flow_svg;

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::InvalidShape(format!("expected an h×w plane, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// P6 image of `h×w` RGB pixels, each plane pixel repeated `scale×scale`.
fn ppm(h: usize, w: usize, scale: usize, pixel: impl Fn(usize, usize) -> [u8; 3]) -> Vec<u8> {
    let scale = scale.max(1);
    let mut out = format!("P6\n{} {}\n255\n", w * scale, h * scale).into_bytes();
    out.reserve(3 * h * w * scale * scale);
    for i in 0..h * scale {
        for j in 0..w * scale {
            out.extend_from_slice(&pixel(i / scale, j / scale));
        }
    }
    out
}

/// Probability as grey level. Pixels at or above `threshold` get a full blue
/// channel; pixels where `truth` is rain get a full red channel.
pub fn probability_ppm(prob: &Tensor, threshold: f64, truth: Option<&Tensor>, scale: usize) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(prob)?;
    if let Some(t) = truth {
        prob.expect_same_shape(t)?;
    }
    Ok(ppm(h, w, scale, |i, j| {
        let p = prob.data()[i * w + j];
        let v = byte(p);
        let mut rgb = [v, v, v];
        if p >= threshold {
            rgb[2] = 255;
        }
        if truth.is_some_and(|t| t.data()[i * w + j] >= 0.5) {
            rgb[0] = 255;
        }
        rgb
    }))
}

/// Rain frequency as green intensity on black.
pub fn frequency_ppm(freq: &Tensor, scale: usize) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(freq)?;
    Ok(ppm(h, w, scale, |i, j| [0, byte(freq.data()[i * w + j]), 0]))
}
