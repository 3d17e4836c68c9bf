//! Exact dihedral (D4) actions on the spatial axes of tensors.
//!
//! Every transform is stored in canonical form: `rotation` counterclockwise
//! quarter turns (in the row-down / column-right frame) followed by an
//! optional vertical flip (row reversal).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GeomTransform {
    rotation: u8,
    vflip: bool,
}

/// 2×2 integer matrix acting on displacement vectors `(dx east, dy south)`.
type Mat2 = [[i32; 2]; 2];

const ROT90_MAT: Mat2 = [[0, 1], [-1, 0]];
const VFLIP_MAT: Mat2 = [[1, 0], [0, -1]];
const IDENTITY_MAT: Mat2 = [[1, 0], [0, 1]];

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut out = [[0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

impl GeomTransform {
    pub const IDENTITY: GeomTransform = GeomTransform::new(0, false);
    pub const ROT90: GeomTransform = GeomTransform::new(1, false);
    pub const ROT180: GeomTransform = GeomTransform::new(2, false);
    pub const ROT270: GeomTransform = GeomTransform::new(3, false);
    pub const VFLIP: GeomTransform = GeomTransform::new(0, true);
    pub const ROT90_VFLIP: GeomTransform = GeomTransform::new(1, true);
    pub const ROT180_VFLIP: GeomTransform = GeomTransform::new(2, true);
    pub const ROT270_VFLIP: GeomTransform = GeomTransform::new(3, true);

    /// All eight group elements in canonical order (`rotation + 4·vflip`).
    pub const ALL: [GeomTransform; 8] = [
        Self::IDENTITY,
        Self::ROT90,
        Self::ROT180,
        Self::ROT270,
        Self::VFLIP,
        Self::ROT90_VFLIP,
        Self::ROT180_VFLIP,
        Self::ROT270_VFLIP,
    ];

    pub const fn new(quarter_turns: u8, vflip: bool) -> Self {
        GeomTransform {
            rotation: quarter_turns % 4,
            vflip,
        }
    }

    pub fn rotation(self) -> u8 {
        self.rotation
    }

    pub fn vflip(self) -> bool {
        self.vflip
    }

    pub fn is_identity(self) -> bool {
        self == Self::IDENTITY
    }

    /// Position in [`GeomTransform::ALL`].
    pub fn index(self) -> usize {
        self.rotation as usize + if self.vflip { 4 } else { 0 }
    }

    fn matrix(self) -> Mat2 {
        let mut m = IDENTITY_MAT;
        for _ in 0..self.rotation {
            m = mat_mul(ROT90_MAT, m);
        }
        if self.vflip {
            m = mat_mul(VFLIP_MAT, m);
        }
        m
    }

    fn from_matrix(m: Mat2) -> GeomTransform {
        *Self::ALL
            .iter()
            .find(|g| g.matrix() == m)
            .expect("D4 is closed under matrix products")
    }

    pub fn inverse(self) -> GeomTransform {
        let m = self.matrix();
        // Orthogonal: inverse is the transpose.
        Self::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(self, first: GeomTransform) -> GeomTransform {
        Self::from_matrix(mat_mul(self.matrix(), first.matrix()))
    }

    /// Image of a displacement `(dx east, dy south)` under the linear part of
    /// the transform, consistent with how [`apply`] moves pixels.
    pub fn transform_vector(self, v: [f64; 2]) -> [f64; 2] {
        let m = self.matrix();
        [
            m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1],
            m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1],
        ]
    }

    /// Output plane extents for an `h×w` input.
    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.rotation % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinates in an `h×w` input plane for output pixel `(i, j)`.
    #[inline]
    pub fn source_index(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        let (oh, _) = self.output_dims(h, w);
        let i = if self.vflip { oh - 1 - i } else { i };
        match self.rotation {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (h - 1 - j, i),
        }
    }

    pub fn name(self) -> &'static str {
        match (self.rotation, self.vflip) {
            (0, false) => "id",
            (1, false) => "rot90",
            (2, false) => "rot180",
            (3, false) => "rot270",
            (0, true) => "vflip",
            (1, true) => "rot90+vflip",
            (2, true) => "rot180+vflip",
            _ => "rot270+vflip",
        }
    }
}

impl fmt::Display for GeomTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeomTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeomTransform::ALL
            .into_iter()
            .find(|g| g.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown transform `{s}`")))
    }
}

impl Serialize for GeomTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for GeomTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies `g` to the last two axes of `t`, identically for every leading
/// index. Pure pixel permutation.
pub fn apply(g: GeomTransform, t: &Tensor) -> Result<Tensor> {
    let (h, w) = t.plane_dims()?;
    if g.is_identity() {
        return Ok(t.clone());
    }
    let (oh, ow) = g.output_dims(h, w);
    let n = h * w;
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    let mut out = Vec::with_capacity(t.len());
    let planes = if n == 0 { 0 } else { t.len() / n };
    // Source offsets are the same for every plane.
    let map: Vec<usize> = (0..oh)
        .flat_map(|i| (0..ow).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (si, sj) = g.source_index(i, j, h, w);
            si * w + sj
        })
        .collect();
    for p in 0..planes {
        let src = &t.data()[p * n..(p + 1) * n];
        out.extend(map.iter().map(|&k| src[k]));
    }
    Tensor::new(shape, out)
}

/// An ordered set of distinct transforms used for training-time sampling or
/// test-time ensembling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub members: Vec<GeomTransform>,
    pub include_identity_in_ensemble: bool,
}

/// The five motion-compatible transforms: each keeps at least one prevailing
/// motion direction of the original field. Pure `rot180` (which reverses all
/// motion) and the identity are deliberately absent.
pub const PAPER_POLICY: [GeomTransform; 5] = [
    GeomTransform::ROT90,
    GeomTransform::ROT180_VFLIP,
    GeomTransform::ROT270,
    GeomTransform::ROT270_VFLIP,
    GeomTransform::VFLIP,
];

impl AugPolicy {
    pub fn new(members: Vec<GeomTransform>, include_identity_in_ensemble: bool) -> Result<Self> {
        for (k, g) in members.iter().enumerate() {
            if members[..k].contains(g) {
                return Err(Error::Config(format!("duplicate policy member `{g}`")));
            }
        }
        Ok(AugPolicy {
            members,
            include_identity_in_ensemble,
        })
    }

    pub fn paper() -> Self {
        AugPolicy {
            members: PAPER_POLICY.to_vec(),
            include_identity_in_ensemble: true,
        }
    }

    /// Members plus the identity when the policy asks for it.
    pub fn ensemble_members(&self) -> Vec<GeomTransform> {
        let mut out = Vec::with_capacity(self.members.len() + 1);
        if self.include_identity_in_ensemble && !self.members.contains(&GeomTransform::IDENTITY) {
            out.push(GeomTransform::IDENTITY);
        }
        out.extend(self.members.iter().copied());
        out
    }
}
