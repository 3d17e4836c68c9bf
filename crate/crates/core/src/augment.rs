//! Training-time augmentation samplers, registered by name.
//!
//! | name        | draws uniformly from                          |
//! |-------------|-----------------------------------------------|
//! | `none`      | identity only                                 |
//! | `paper`     | the five-member motion-compatible policy + id |
//! | `random_d4` | all eight dihedral transforms                 |
//! | `inverse`   | `rot180` (motion reversal) + id               |

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{GeomTransform, PAPER_POLICY};
use crate::rng::Rng;

pub trait AugmentationSampler: Send + Sync {
    fn name(&self) -> &str;

    /// The outcomes drawn with equal probability.
    fn outcomes(&self) -> &[GeomTransform];

    fn sample(&self, rng: &mut Rng) -> GeomTransform {
        let o = self.outcomes();
        if o.len() == 1 {
            return o[0];
        }
        o[rng.random_range(0..o.len())]
    }
}

/// A sampler defined by a fixed outcome list.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    name: String,
    outcomes: Vec<GeomTransform>,
}

impl UniformSampler {
    pub fn new(name: impl Into<String>, outcomes: Vec<GeomTransform>) -> Result<Self> {
        let name = name.into();
        if outcomes.is_empty() {
            return Err(Error::Config(format!("sampler `{name}` has no outcomes")));
        }
        Ok(UniformSampler { name, outcomes })
    }
}

impl AugmentationSampler for UniformSampler {
    fn name(&self) -> &str {
        &self.name
    }

    fn outcomes(&self) -> &[GeomTransform] {
        &self.outcomes
    }
}

pub struct SamplerRegistry {
    entries: Vec<Box<dyn AugmentationSampler>>,
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        SamplerRegistry {
            entries: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let id = GeomTransform::IDENTITY;
        let mut paper = PAPER_POLICY.to_vec();
        paper.push(id);
        let builtins = [
            ("none", vec![id]),
            ("paper", paper),
            ("random_d4", GeomTransform::ALL.to_vec()),
            ("inverse", vec![GeomTransform::ROT180, id]),
        ];
        for (name, outcomes) in builtins {
            r.register(Box::new(UniformSampler::new(name, outcomes).expect("non-empty")))
                .expect("unique builtin names");
        }
        r
    }

    pub fn register(&mut self, sampler: Box<dyn AugmentationSampler>) -> Result<()> {
        if self.entries.iter().any(|e| e.name() == sampler.name()) {
            return Err(Error::Config(format!(
                "augmentation sampler `{}` already registered",
                sampler.name()
            )));
        }
        self.entries.push(sampler);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn AugmentationSampler> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|b| b.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown augmentation policy `{name}` (expected one of {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}

/// Draws one transform from the named builtin policy.
pub fn sample_augmentation(policy: &str, rng: &mut Rng) -> Result<GeomTransform> {
    Ok(SamplerRegistry::builtin().get(policy)?.sample(rng))
}
