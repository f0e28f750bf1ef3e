//! Procedural "face-like" test images.
//!
//! An identity seed fixes skin, hair and background colours and the layout
//! of eyes, brows, nose and mouth. Variants re-render the same identity
//! with a different expression: 0 neutral, 1 smiling, 2 frowning,
//! 3 mouth open; higher variants add small seeded jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::ImageTensor;

#[derive(Debug, Clone)]
struct Identity {
    background: [f64; 3],
    skin: [f64; 3],
    hair: [f64; 3],
    feature: [f64; 3],
    lips: [f64; 3],
    face_c: [f64; 2],
    face_r: [f64; 2],
    eye_dx: f64,
    eye_y: f64,
    eye_r: [f64; 2],
    brow_y: f64,
    nose_len: f64,
    mouth_y: f64,
    mouth_w: f64,
    hairline: f64,
    blobs: Vec<([f64; 2], f64, f64)>,
}

impl Identity {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let mut col = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let background = col(0.1, 0.9);
        let tone: f64 = rng.random_range(0.35..0.85);
        let skin = [
            (tone + 0.1).min(1.0),
            tone * rng.random_range(0.75..0.9),
            tone * rng.random_range(0.6..0.8),
        ];
        let h: f64 = rng.random_range(0.05..0.45);
        let hair = [h, h * rng.random_range(0.6..1.0), h * rng.random_range(0.4..0.9)];
        let feature = [0.1, 0.08, 0.08].map(|v: f64| v + rng.random_range(0.0..0.1));
        let lips = [
            rng.random_range(0.5..0.8),
            rng.random_range(0.2..0.35),
            rng.random_range(0.2..0.35),
        ];
        let blobs = (0..4)
            .map(|_| {
                (
                    [rng.random_range(0.3..0.7), rng.random_range(0.3..0.8)],
                    rng.random_range(0.05..0.15),
                    rng.random_range(-0.08..0.08),
                )
            })
            .collect();
        Self {
            background,
            skin,
            hair,
            feature,
            lips,
            face_c: [rng.random_range(0.47..0.53), rng.random_range(0.53..0.58)],
            face_r: [rng.random_range(0.31..0.37), rng.random_range(0.40..0.46)],
            eye_dx: rng.random_range(0.13..0.17),
            eye_y: rng.random_range(0.50..0.55),
            eye_r: [rng.random_range(0.045..0.06), rng.random_range(0.02..0.03)],
            brow_y: rng.random_range(0.43..0.46),
            nose_len: rng.random_range(0.10..0.14),
            mouth_y: rng.random_range(0.77..0.81),
            mouth_w: rng.random_range(0.09..0.13),
            hairline: rng.random_range(0.12..0.2),
            blobs,
        }
    }
}

/// Soft inside-indicator from a signed distance (negative inside).
#[inline]
fn soft(sd: f64, width: f64) -> f64 {
    1.0 / (1.0 + (sd / width).exp())
}

fn ellipse_sd(p: [f64; 2], c: [f64; 2], r: [f64; 2]) -> f64 {
    let dx = (p[0] - c[0]) / r[0];
    let dy = (p[1] - c[1]) / r[1];
    ((dx * dx + dy * dy).sqrt() - 1.0) * r[0].min(r[1])
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], a: f64) {
    for c in 0..3 {
        dst[c] = (1.0 - a) * dst[c] + a * src[c];
    }
}

pub const NAMED_VARIANTS: usize = 4;

/// Renders one expression of one identity as a `size x size` RGB image.
pub fn procedural_face(identity_seed: u64, variant: usize, size: usize) -> ImageTensor {
    let id = Identity::from_seed(identity_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(identity_seed.wrapping_mul(31).wrapping_add(variant as u64));
    let jitter = if variant >= NAMED_VARIANTS { 0.01 } else { 0.0 };
    let mut j = || rng.random_range(-1.0..=1.0) * jitter;
    let (smile, mouth_open, brow_tilt) = match variant % NAMED_VARIANTS {
        1 => (0.035, 0.0, 0.0),
        2 => (-0.03, 0.0, 0.02),
        3 => (0.0, 0.035, -0.01),
        _ => (0.0, 0.0, 0.0),
    };
    let eye_y = id.eye_y + j();
    let mouth_y = id.mouth_y + j();
    let face_c = [id.face_c[0] + j(), id.face_c[1] + j()];
    let aa = 1.2 / size as f64;

    ImageTensor::zeros(size, size, 3).tap_pixels(|y, x| {
        let p = [(x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64];
        let mut px = id.background;
        // Hair behind the face.
        let hair_a = soft(ellipse_sd(p, [face_c[0], face_c[1] - 0.05], [id.face_r[0] + 0.04, id.face_r[1] + 0.02]), aa);
        blend(&mut px, id.hair, hair_a);
        // Face oval with smooth shading blobs.
        let face_a = soft(ellipse_sd(p, face_c, id.face_r), aa);
        let mut skin = id.skin;
        for (c, r, amp) in &id.blobs {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            let g = amp * (-d2 / (2.0 * r * r)).exp();
            skin = skin.map(|v| (v + g).clamp(0.0, 1.0));
        }
        let shade = 1.0 - 0.25 * ((p[0] - face_c[0]) / id.face_r[0]).powi(2);
        blend(&mut px, skin.map(|v| v * shade), face_a);
        // Fringe of hair above the hairline.
        let fringe_a = face_a * soft(p[1] - (face_c[1] - id.face_r[1] + id.hairline), aa);
        blend(&mut px, id.hair, fringe_a);
        for side in [-1.0, 1.0] {
            let ex = face_c[0] + side * id.eye_dx;
            let eye_a = soft(ellipse_sd(p, [ex, eye_y], id.eye_r), aa);
            blend(&mut px, [0.95, 0.95, 0.95], eye_a);
            let pupil_a = soft(ellipse_sd(p, [ex, eye_y], [id.eye_r[1], id.eye_r[1]]), aa);
            blend(&mut px, id.feature, pupil_a);
            // Brow: a thin tilted bar.
            let by = id.brow_y + side * brow_tilt * (p[0] - ex) / id.eye_r[0];
            let brow_sd = ((p[1] - by).abs() - 0.008).max((p[0] - ex).abs() - 0.06);
            blend(&mut px, id.hair.map(|v| v * 0.7), soft(brow_sd, aa));
        }
        // Nose: vertical soft bar.
        let nose_sd = ((p[0] - face_c[0]).abs() - 0.012).max((p[1] - (eye_y + id.nose_len / 2.0)).abs() - id.nose_len / 2.0);
        blend(&mut px, skin.map(|v| v * 0.8), soft(nose_sd, aa) * face_a);
        // Mouth: curved bar, optionally open.
        let dx = (p[0] - face_c[0]) / id.mouth_w;
        let curve = mouth_y - smile * (1.0 - dx * dx);
        let mouth_sd = ((p[1] - curve).abs() - 0.01 - mouth_open * (1.0 - dx * dx).max(0.0)).max(dx.abs() - 1.0);
        let inside = if mouth_open > 0.0 { [0.25, 0.05, 0.05] } else { id.lips };
        blend(&mut px, inside, soft(mouth_sd, aa) * face_a);
        px
    })
}

/// `variants` expressions of one identity; variant 0 is neutral.
pub fn procedural_identity(identity_seed: u64, variants: usize, size: usize) -> Vec<ImageTensor> {
    (0..variants.max(1)).map(|v| procedural_face(identity_seed, v, size)).collect()
}

trait TapPixels {
    fn tap_pixels(self, f: impl FnMut(usize, usize) -> [f64; 3]) -> Self;
}

impl TapPixels for ImageTensor {
    fn tap_pixels(mut self, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let (h, w, _) = self.shape();
        for y in 0..h {
            for x in 0..w {
                let px = f(y, x);
                for (c, v) in px.iter().enumerate() {
                    self.set(y, x, c, v.clamp(0.0, 1.0));
                }
            }
        }
        self
    }
}
