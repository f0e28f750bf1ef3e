use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Parameters of the simulated print-and-photograph channel:
/// `v -> clamp(mix * v^gamma + offset + noise, 0, 1)` per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub gamma: [f64; 3],
    pub mix: [[f64; 3]; 3],
    pub offset: f64,
    pub noise: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        let off = 0.0333;
        Self {
            gamma: [1.1, 1.0, 0.9],
            mix: [[0.9, off, off], [off, 0.9, off], [off, off, 0.9]],
            offset: 0.02,
            noise: 0.01,
        }
    }
}

impl ChannelParams {
    pub fn identity() -> Self {
        Self {
            gamma: [1.0; 3],
            mix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            offset: 0.0,
            noise: 0.0,
        }
    }

    pub fn noiseless(&self) -> Self {
        Self {
            noise: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Parameter("channel gamma must be positive".into()));
        }
        if self.mix.iter().flatten().any(|m| !m.is_finite()) || !self.offset.is_finite() {
            return Err(Error::Parameter("channel mix/offset must be finite".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter("channel noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free channel response for one colour, before clamping.
    pub fn respond(&self, rgb: [f64; 3]) -> [f64; 3] {
        let g = [
            rgb[0].max(0.0).powf(self.gamma[0]),
            rgb[1].max(0.0).powf(self.gamma[1]),
            rgb[2].max(0.0).powf(self.gamma[2]),
        ];
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&self.mix) {
            *o = row[0] * g[0] + row[1] * g[1] + row[2] * g[2] + self.offset;
        }
        out
    }
}

pub fn simulate_channel(img: &ImageTensor, params: &ChannelParams, seed: u64) -> Result<ImageTensor> {
    params.validate()?;
    if img.channels() != 3 {
        return Err(Error::Shape(format!("channel expects 3 channels, got {}", img.channels())));
    }
    let mut out = img.clone();
    let normal = if params.noise > 0.0 {
        Some(Normal::new(0.0, params.noise).map_err(|e| Error::Parameter(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for px in out.data_mut().chunks_exact_mut(3) {
        let r = params.respond([px[0], px[1], px[2]]);
        for c in 0..3 {
            let n = normal.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            px[c] = (r[c] + n).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::d2p::{extract_palette_from_photo, make_digital_palette, palette_image};

    #[test]
    fn identity_channel_is_a_no_op() {
        let img = ImageTensor::from_fn(5, 6, 3, |y, x, c| ((y + x + c) % 4) as f64 / 3.0);
        let out = simulate_channel(&img, &ChannelParams::identity(), 1).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn gamma_two_squares() {
        let img = ImageTensor::filled(3, 3, 3, 0.5);
        let p = ChannelParams {
            gamma: [2.0; 3],
            ..ChannelParams::identity()
        };
        let out = simulate_channel(&img, &p, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let img = ImageTensor::filled(4, 4, 3, 0.5);
        let p = ChannelParams::default();
        assert_eq!(
            simulate_channel(&img, &p, 9).unwrap(),
            simulate_channel(&img, &p, 9).unwrap()
        );
        assert_ne!(
            simulate_channel(&img, &p, 9).unwrap(),
            simulate_channel(&img, &p, 10).unwrap()
        );
    }

    #[test]
    fn invalid_gamma_is_rejected() {
        let p = ChannelParams {
            gamma: [0.0, 1.0, 1.0],
            ..ChannelParams::identity()
        };
        assert!(simulate_channel(&ImageTensor::zeros(1, 1, 3), &p, 0).is_err());
    }

    #[test]
    fn photographed_palette_matches_direct_anchor_mapping() {
        // Oracle: push anchors straight through the noise-free response.
        // Block averaging over 1600 pixels leaves sigma/40 of noise per anchor.
        let p = ChannelParams::default();
        let digital = make_digital_palette();
        let photo = simulate_channel(&palette_image(&digital).unwrap(), &p, 42).unwrap();
        let measured = extract_palette_from_photo(&photo).unwrap();
        let se = p.noise / (1600f64).sqrt();
        let mut sq = 0.0;
        let mut worst = 0.0f64;
        for (m, d) in measured.anchors.iter().zip(&digital.anchors) {
            let r = p.respond(*d);
            for c in 0..3 {
                let e = m[c] - r[c].clamp(0.0, 1.0);
                sq += e * e;
                worst = worst.max(e.abs());
            }
        }
        let rms = (sq / (512.0 * 3.0)).sqrt();
        assert!(rms <= 2.0 * se, "rms {rms} vs {}", 2.0 * se);
        assert!(worst <= 5.0 * se, "worst {worst}");
    }
}
