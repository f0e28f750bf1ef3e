use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{FaceTransformParams, StickerTransformParams};

/// Closed interval, written `[min, max]` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Self { min: v[0], max: v[1] }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::config(key, "range bounds must be finite"));
        }
        if self.min > self.max {
            return Err(Error::config(key, format!("min > max ({} > {})", self.min, self.max)));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// One of `levels` equally spaced values, chosen uniformly.
    pub fn sample_level(&self, levels: usize, rng: &mut impl Rng) -> f64 {
        if levels <= 1 || self.min == self.max {
            return 0.5 * (self.min + self.max);
        }
        let k = rng.random_range(0..levels);
        let v = self.min + (self.max - self.min) * k as f64 / (levels - 1) as f64;
        v.min(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StickerTransformRanges {
    pub parabolic_angle: Range,
    pub parabolic_rate: Range,
    pub rotation: Range,
    pub translation: Range,
}

impl Default for StickerTransformRanges {
    fn default() -> Self {
        Self {
            parabolic_angle: Range::new(-2.0, 2.0),
            parabolic_rate: Range::new(-2e-4, 2e-4),
            rotation: Range::new(-1.0, 1.0),
            translation: Range::new(-1.0, 1.0),
        }
    }
}

impl StickerTransformRanges {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.parabolic_angle.validate(&format!("{prefix}.parabolic_angle"))?;
        self.parabolic_rate.validate(&format!("{prefix}.parabolic_rate"))?;
        self.rotation.validate(&format!("{prefix}.rotation"))?;
        self.translation.validate(&format!("{prefix}.translation"))
    }

    pub fn contains(&self, p: &StickerTransformParams) -> bool {
        self.parabolic_angle.contains(p.parabolic_angle)
            && self.parabolic_rate.contains(p.parabolic_rate)
            && self.rotation.contains(p.rotation)
            && self.translation.contains(p.translation[0])
            && self.translation.contains(p.translation[1])
    }

    pub fn sample(&self, levels: usize, rng: &mut impl Rng) -> StickerTransformParams {
        StickerTransformParams {
            parabolic_angle: self.parabolic_angle.sample_level(levels, rng),
            parabolic_rate: self.parabolic_rate.sample_level(levels, rng),
            rotation: self.rotation.sample_level(levels, rng),
            translation: [
                self.translation.sample_level(levels, rng),
                self.translation.sample_level(levels, rng),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceTransformRanges {
    pub rotation: Range,
    pub scale: Range,
    pub translation: Range,
    pub contrast: Range,
    pub brightness: Range,
}

impl Default for FaceTransformRanges {
    fn default() -> Self {
        Self {
            rotation: Range::new(-3.0, 3.0),
            scale: Range::new(0.94, 1.06),
            translation: Range::new(-2.0, 2.0),
            contrast: Range::new(0.5, 1.1),
            brightness: Range::new(0.05, 0.1),
        }
    }
}

impl FaceTransformRanges {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.rotation.validate(&format!("{prefix}.rotation"))?;
        self.scale.validate(&format!("{prefix}.scale"))?;
        if self.scale.min <= 0.0 {
            return Err(Error::config(format!("{prefix}.scale"), "scale must be positive"));
        }
        self.translation.validate(&format!("{prefix}.translation"))?;
        self.contrast.validate(&format!("{prefix}.contrast"))?;
        self.brightness.validate(&format!("{prefix}.brightness"))
    }

    /// Pose-only ranges: photometric jitter pinned to the identity.
    pub fn without_photometric(&self) -> Self {
        Self {
            contrast: Range::point(1.0),
            brightness: Range::point(0.0),
            ..self.clone()
        }
    }

    pub fn contains(&self, p: &FaceTransformParams) -> bool {
        self.rotation.contains(p.rotation)
            && self.scale.contains(p.scale)
            && self.translation.contains(p.translation[0])
            && self.translation.contains(p.translation[1])
            && self.contrast.contains(p.contrast)
            && self.brightness.contains(p.brightness)
    }

    pub fn sample(&self, levels: usize, rng: &mut impl Rng) -> FaceTransformParams {
        FaceTransformParams {
            rotation: self.rotation.sample_level(levels, rng),
            scale: self.scale.sample_level(levels, rng),
            translation: [
                self.translation.sample_level(levels, rng),
                self.translation.sample_level(levels, rng),
            ],
            contrast: self.contrast.sample_level(levels, rng),
            brightness: self.brightness.sample_level(levels, rng),
        }
    }
}

/// One rendering condition: which face, how the sticker and face are
/// jittered, and which noise field is added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSample {
    pub face_index: usize,
    pub ta: StickerTransformParams,
    pub tb: FaceTransformParams,
    pub noise_seed: u64,
}

/// Which faces a pool may draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceChoice {
    /// Uniform over all supplied faces.
    All,
    /// Always the given face.
    Only(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSet {
    pub samples: Vec<TransformSample>,
    pub seed: u64,
}

impl TransformSet {
    /// Draws `n` conditions from a dedicated seed stream.
    pub fn sample(
        n: usize,
        n_faces: usize,
        faces: FaceChoice,
        sticker: &StickerTransformRanges,
        face: &FaceTransformRanges,
        levels: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("transformation pool must not be empty".into()));
        }
        if n_faces == 0 {
            return Err(Error::Parameter("no faces to sample from".into()));
        }
        if let FaceChoice::Only(i) = faces {
            if i >= n_faces {
                return Err(Error::Parameter(format!("face index {i} out of {n_faces}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let face_index = match faces {
                    FaceChoice::All => rng.random_range(0..n_faces),
                    FaceChoice::Only(i) => i,
                };
                let ta = sticker.sample(levels, &mut rng);
                let tb = face.sample(levels, &mut rng);
                TransformSample {
                    face_index,
                    ta,
                    tb,
                    noise_seed: rng.random(),
                }
            })
            .collect();
        Ok(Self { samples, seed })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Indices of a minibatch drawn without replacement.
pub fn sample_minibatch(rng: &mut impl Rng, pool: usize, batch: usize) -> Vec<usize> {
    sample(rng, pool, batch.min(pool)).into_vec()
}
