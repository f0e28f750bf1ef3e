//! Sticker and face transformations, mask handling, sensor noise and the
//! full rendering chain from sticker pixels to the image seen by the model.
//!
//! Rendering order: colour mapping, sticker warp (shared with the mask),
//! alpha composite onto the face, face warp with photometric jitter, then
//! additive Gaussian noise and a final clamp. Every stage keeps what its
//! adjoint needs in a [`RenderTape`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::d2p::D2PMapper;
use crate::error::{Error, Result};
use crate::gradcheck::ImageOp;
use crate::tensor::{bilinear_sample, bilinear_sample_adjoint, ImageTensor, SamplingGrid};

/// Bending, in-plane rotation and placement jitter of the sticker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StickerTransformParams {
    /// Pitch of the bent sticker, degrees.
    pub parabolic_angle: f64,
    /// Vertical displacement per squared pixel from the horizontal centre.
    pub parabolic_rate: f64,
    /// Degrees.
    pub rotation: f64,
    /// Pixels, `[dx, dy]`.
    pub translation: [f64; 2],
}

impl StickerTransformParams {
    pub const IDENTITY: Self = Self {
        parabolic_angle: 0.0,
        parabolic_rate: 0.0,
        rotation: 0.0,
        translation: [0.0, 0.0],
    };
}

/// Pose and illumination jitter applied to the composited face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceTransformParams {
    /// Degrees, about the image centre.
    pub rotation: f64,
    pub scale: f64,
    /// Pixels, `[dx, dy]`.
    pub translation: [f64; 2],
    pub contrast: f64,
    pub brightness: f64,
}

impl FaceTransformParams {
    pub const IDENTITY: Self = Self {
        rotation: 0.0,
        scale: 1.0,
        translation: [0.0, 0.0],
        contrast: 1.0,
        brightness: 0.0,
    };
}

/// Where the sticker sits on the face canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub sticker_height: usize,
    pub sticker_width: usize,
    pub top: usize,
    pub left: usize,
    pub face_height: usize,
    pub face_width: usize,
}

impl MaskSpec {
    /// Centres the sticker horizontally with its middle row at 30% of the
    /// face height (the forehead of an aligned face crop).
    pub fn forehead(face_height: usize, face_width: usize, sticker_height: usize, sticker_width: usize) -> Result<Self> {
        let centre_row = (0.3 * face_height as f64).round() as i64;
        let top = (centre_row - sticker_height as i64 / 2).max(0) as usize;
        let left = face_width.saturating_sub(sticker_width) / 2;
        let spec = Self {
            sticker_height,
            sticker_width,
            top,
            left,
            face_height,
            face_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sticker_height == 0 || self.sticker_width == 0 {
            return Err(Error::Shape("sticker must be at least 1x1".into()));
        }
        if self.top + self.sticker_height > self.face_height
            || self.left + self.sticker_width > self.face_width
        {
            return Err(Error::Shape(format!(
                "sticker {}x{} at ({}, {}) does not fit a {}x{} face",
                self.sticker_height,
                self.sticker_width,
                self.top,
                self.left,
                self.face_height,
                self.face_width
            )));
        }
        Ok(())
    }

    /// The unwarped canvas mask: 1 inside the placed rectangle, 0 elsewhere.
    pub fn initial_mask(&self) -> ImageTensor {
        ImageTensor::from_fn(self.face_height, self.face_width, 1, |y, x, _| {
            let inside = y >= self.top
                && y < self.top + self.sticker_height
                && x >= self.left
                && x < self.left + self.sticker_width;
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Pastes a sticker-sized image onto an otherwise zero canvas.
    pub fn place(&self, sticker: &ImageTensor) -> Result<ImageTensor> {
        if sticker.height() != self.sticker_height || sticker.width() != self.sticker_width {
            return Err(Error::Shape(format!(
                "sticker {:?} does not match placement {}x{}",
                sticker.shape(),
                self.sticker_height,
                self.sticker_width
            )));
        }
        let mut canvas = ImageTensor::zeros(self.face_height, self.face_width, sticker.channels());
        for y in 0..self.sticker_height {
            for x in 0..self.sticker_width {
                for c in 0..sticker.channels() {
                    canvas.set(self.top + y, self.left + x, c, sticker.at(y, x, c));
                }
            }
        }
        Ok(canvas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub stddev: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            mean: 0.0,
            stddev: 0.0,
            seed: 0,
        }
    }

    pub fn field(&self, height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
        if self.stddev == 0.0 {
            return Ok(ImageTensor::filled(height, width, channels, self.mean));
        }
        let normal = Normal::new(self.mean, self.stddev)
            .map_err(|e| Error::Parameter(format!("noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(ImageTensor::from_fn(height, width, channels, |_, _, _| {
            normal.sample(&mut rng)
        }))
    }
}

/// The optimisation variable together with its placement.
#[derive(Debug, Clone, PartialEq)]
pub struct StickerState {
    pub pixels: ImageTensor,
    pub placement: MaskSpec,
}

/// Inverse of the bend: output (x, y) in sticker coordinates to the source
/// position before bending. Pitch compresses row spacing linearly from 1 at
/// the top edge to cos(angle) at the bottom; the parabola shifts column `x`
/// down by `rate * (x - width/2)^2`.
#[derive(Clone, Copy)]
struct Bend {
    pitch: f64,
    rate: f64,
    centre_x: f64,
}

impl Bend {
    fn new(height: usize, width: usize, angle_deg: f64, rate: f64) -> Self {
        let pitch = if height > 1 {
            (angle_deg.to_radians().cos() - 1.0) / (2.0 * (height - 1) as f64)
        } else {
            0.0
        };
        Self {
            pitch,
            rate,
            centre_x: width as f64 / 2.0,
        }
    }

    #[inline]
    fn unbend(&self, x: f64, y: f64) -> [f64; 2] {
        // y = y0 + c*y0^2 solved for y0, written to stay exact at c = 0.
        let disc = 1.0 + 4.0 * self.pitch * y;
        let y_unpitched = if disc >= 0.0 {
            2.0 * y / (1.0 + disc.sqrt())
        } else {
            f64::NAN
        };
        let dx = x - self.centre_x;
        [x, y_unpitched - self.rate * dx * dx]
    }

    /// Upper bound on how far any point of a `height` x `width` rectangle
    /// (plus a one-pixel rim) moves under the bend.
    fn max_shift(&self, height: usize) -> f64 {
        let half = self.centre_x + 1.0;
        let rows = height as f64 + 1.0;
        self.rate.abs() * half * half + self.pitch.abs() * rows * rows
    }
}

fn check_bend(height: usize, width: usize, rate: f64) -> Result<()> {
    let half = width as f64 / 2.0;
    let max_disp = rate.abs() * half * half;
    if max_disp >= height as f64 {
        return Err(Error::ParamsOutOfRange(format!(
            "parabolic displacement {max_disp:.3} px exceeds sticker height {height}"
        )));
    }
    Ok(())
}

pub fn parabolic_grid(height: usize, width: usize, angle_deg: f64, rate: f64) -> Result<SamplingGrid> {
    check_bend(height, width, rate)?;
    let bend = Bend::new(height, width, angle_deg, rate);
    Ok(SamplingGrid::from_fn(height, width, |y, x| bend.unbend(x as f64, y as f64)))
}

/// Off-plane bending of a sticker-sized image.
pub fn parabolic_warp(img: &ImageTensor, angle_deg: f64, rate: f64) -> Result<ImageTensor> {
    let grid = parabolic_grid(img.height(), img.width(), angle_deg, rate)?;
    Ok(bilinear_sample(img, &grid))
}

pub struct ParabolicWarp {
    pub angle: f64,
    pub rate: f64,
}

impl ImageOp for ParabolicWarp {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        parabolic_warp(input, self.angle, self.rate)
    }

    fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        let grid = parabolic_grid(input.height(), input.width(), self.angle, self.rate)?;
        bilinear_sample_adjoint(upstream, &grid, input.height(), input.width())
    }
}

/// Canvas region `(top, left, height, width)` used for the warped sticker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    /// Smallest canvas window outside of which the warped sticker and mask
    /// are exactly zero.
    pub fn covering(spec: &MaskSpec, t: &StickerTransformParams) -> Self {
        let (hs, ws) = (spec.sticker_height as f64, spec.sticker_width as f64);
        let bend = Bend::new(spec.sticker_height, spec.sticker_width, t.parabolic_angle, t.parabolic_rate);
        let half_diag = 0.5 * ((hs + 2.0).powi(2) + (ws + 2.0).powi(2)).sqrt();
        let theta = t.rotation.to_radians().abs().min(std::f64::consts::PI);
        let rot_shift = 2.0 * half_diag * (theta / 2.0).sin();
        let shift = t.translation[0].abs().max(t.translation[1].abs())
            + rot_shift
            + bend.max_shift(spec.sticker_height);
        if !shift.is_finite() {
            return Self::full(spec.face_height, spec.face_width);
        }
        let margin = shift.ceil() + 2.0;
        let clip = |lo: f64, hi: f64, n: usize| {
            let lo = lo.max(0.0).min(n as f64) as usize;
            let hi = hi.max(0.0).min(n as f64) as usize;
            (lo, hi.max(lo))
        };
        let (t0, t1) = clip(spec.top as f64 - margin, spec.top as f64 + hs + margin, spec.face_height);
        let (l0, l1) = clip(spec.left as f64 - margin, spec.left as f64 + ws + margin, spec.face_width);
        Self {
            top: t0,
            left: l0,
            height: t1 - t0,
            width: l1 - l0,
        }
    }
}

/// Canvas-sized grid that reads from sticker coordinates: undo placement
/// jitter and rotation about the sticker centre, then undo the bend.
pub fn sticker_grid(spec: &MaskSpec, t: &StickerTransformParams) -> Result<SamplingGrid> {
    sticker_grid_in(spec, t, Window::full(spec.face_height, spec.face_width))
}

/// [`sticker_grid`] restricted to a window of the canvas.
pub fn sticker_grid_in(spec: &MaskSpec, t: &StickerTransformParams, win: Window) -> Result<SamplingGrid> {
    spec.validate()?;
    let (hs, ws) = (spec.sticker_height, spec.sticker_width);
    check_bend(hs, ws, t.parabolic_rate)?;
    let bend = Bend::new(hs, ws, t.parabolic_angle, t.parabolic_rate);
    let local_c = [(ws as f64 - 1.0) / 2.0, (hs as f64 - 1.0) / 2.0];
    let placed_c = [spec.left as f64 + local_c[0], spec.top as f64 + local_c[1]];
    let (sin, cos) = t.rotation.to_radians().sin_cos();
    Ok(SamplingGrid::from_fn(win.height, win.width, |y, x| {
        let px = (x + win.left) as f64 - placed_c[0] - t.translation[0];
        let py = (y + win.top) as f64 - placed_c[1] - t.translation[1];
        let lx = cos * px + sin * py + local_c[0];
        let ly = -sin * px + cos * py + local_c[1];
        bend.unbend(lx, ly)
    }))
}

/// Grid for rotation about the image centre, isotropic scaling and
/// translation.
pub fn face_grid(height: usize, width: usize, p: &FaceTransformParams) -> Result<SamplingGrid> {
    if !(p.scale > 0.0 && p.scale.is_finite()) {
        return Err(Error::ParamsOutOfRange(format!("scale {} must be positive", p.scale)));
    }
    let c = [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0];
    let (sin, cos) = p.rotation.to_radians().sin_cos();
    let inv = 1.0 / p.scale;
    Ok(SamplingGrid::from_fn(height, width, |y, x| {
        let px = x as f64 - c[0] - p.translation[0];
        let py = y as f64 - c[1] - p.translation[1];
        [
            (cos * px + sin * py) * inv + c[0],
            (-sin * px + cos * py) * inv + c[1],
        ]
    }))
}

#[inline]
fn clamp_pass(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn photometric_pre_clamp(warped: &ImageTensor, p: &FaceTransformParams) -> ImageTensor {
    warped.map(|v| p.contrast * v + p.brightness)
}

/// Geometric warp followed by `clamp(contrast * v + brightness, 0, 1)`.
pub fn affine_photometric(img: &ImageTensor, p: &FaceTransformParams) -> Result<ImageTensor> {
    let grid = face_grid(img.height(), img.width(), p)?;
    Ok(photometric_pre_clamp(&bilinear_sample(img, &grid), p).clamp_unit())
}

pub struct AffinePhotometric(pub FaceTransformParams);

impl ImageOp for AffinePhotometric {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        affine_photometric(input, &self.0)
    }

    fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        let grid = face_grid(input.height(), input.width(), &self.0)?;
        let z = photometric_pre_clamp(&bilinear_sample(input, &grid), &self.0);
        upstream.ensure_same_shape(&z, "affine_photometric upstream")?;
        let mut g = upstream.clone();
        for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
            *gv = if clamp_pass(zv) { *gv * self.0.contrast } else { 0.0 };
        }
        bilinear_sample_adjoint(&g, &grid, input.height(), input.width())
    }
}

fn mask_channel_index(mask: &ImageTensor, channels: usize) -> Result<bool> {
    match mask.channels() {
        1 => Ok(true),
        c if c == channels => Ok(false),
        c => Err(Error::Shape(format!(
            "mask has {c} channels, expected 1 or {channels}"
        ))),
    }
}

/// `(1 - M) * face + M * sticker`; a single-channel mask is broadcast.
pub fn composite(face: &ImageTensor, sticker_w: &ImageTensor, mask_w: &ImageTensor) -> Result<ImageTensor> {
    face.ensure_same_shape(sticker_w, "composite face/sticker")?;
    if mask_w.height() != face.height() || mask_w.width() != face.width() {
        return Err(Error::Shape(format!(
            "composite mask {:?} vs face {:?}",
            mask_w.shape(),
            face.shape()
        )));
    }
    let c = face.channels();
    let broadcast = mask_channel_index(mask_w, c)?;
    let mut out = face.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let m = if broadcast { mask_w.data()[i / c] } else { mask_w.data()[i] };
        *o = (1.0 - m) * face.data()[i] + m * sticker_w.data()[i];
    }
    Ok(out)
}

/// Adjoint of [`composite`]: returns `(d_face, d_sticker)`.
pub fn composite_adjoint(mask_w: &ImageTensor, upstream: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    let c = upstream.channels();
    let broadcast = mask_channel_index(mask_w, c)?;
    let mut d_face = upstream.clone();
    let mut d_sticker = upstream.clone();
    for i in 0..upstream.len() {
        let m = if broadcast { mask_w.data()[i / c] } else { mask_w.data()[i] };
        d_face.data_mut()[i] *= 1.0 - m;
        d_sticker.data_mut()[i] *= m;
    }
    Ok((d_face, d_sticker))
}

/// Intermediate values kept from a forward render for the backward pass.
#[derive(Debug, Clone)]
pub struct RenderTape {
    window: Window,
    grid_a: SamplingGrid,
    grid_b: SamplingGrid,
    mask_w: ImageTensor,
    /// Per-element derivative of the photometric stage and both clamps.
    pass: Vec<f64>,
    canvas_height: usize,
    canvas_width: usize,
    sticker_height: usize,
    sticker_width: usize,
}

impl RenderTape {
    /// Gradient with respect to the (already colour-mapped) sticker.
    pub fn backward(&self, upstream: &ImageTensor) -> Result<ImageTensor> {
        if upstream.shape() != (self.canvas_height, self.canvas_width, 3) {
            return Err(Error::Shape(format!(
                "render upstream {:?} does not match canvas {}x{}x3",
                upstream.shape(),
                self.canvas_height,
                self.canvas_width
            )));
        }
        let mut g = upstream.clone();
        for (gv, &f) in g.data_mut().iter_mut().zip(&self.pass) {
            *gv *= f;
        }
        let d_composite = bilinear_sample_adjoint(&g, &self.grid_b, self.canvas_height, self.canvas_width)?;
        let win = self.window;
        let d_window = ImageTensor::from_fn(win.height, win.width, 3, |y, x, c| {
            self.mask_w.at(y, x, 0) * d_composite.at(y + win.top, x + win.left, c)
        });
        bilinear_sample_adjoint(&d_window, &self.grid_a, self.sticker_height, self.sticker_width)
    }

    /// Warped sticker coverage over the whole canvas.
    pub fn warped_mask(&self) -> ImageTensor {
        let win = self.window;
        let mut full = ImageTensor::zeros(self.canvas_height, self.canvas_width, 1);
        for y in 0..win.height {
            for x in 0..win.width {
                full.set(y + win.top, x + win.left, 0, self.mask_w.at(y, x, 0));
            }
        }
        full
    }
}

/// Renders from a sticker that has already passed through colour mapping.
pub fn render_mapped(
    face: &ImageTensor,
    mapped: &ImageTensor,
    placement: &MaskSpec,
    ta: &StickerTransformParams,
    tb: &FaceTransformParams,
    noise: &NoiseSpec,
) -> Result<(ImageTensor, RenderTape)> {
    if face.height() != placement.face_height || face.width() != placement.face_width || face.channels() != 3 {
        return Err(Error::Shape(format!(
            "face {:?} does not match placement canvas {}x{}x3",
            face.shape(),
            placement.face_height,
            placement.face_width
        )));
    }
    if mapped.shape() != (placement.sticker_height, placement.sticker_width, 3) {
        return Err(Error::Shape(format!(
            "sticker {:?} does not match placement {}x{}x3",
            mapped.shape(),
            placement.sticker_height,
            placement.sticker_width
        )));
    }
    let win = Window::covering(placement, ta);
    let grid_a = sticker_grid_in(placement, ta, win)?;
    let ones = ImageTensor::filled(placement.sticker_height, placement.sticker_width, 1, 1.0);
    let mask_w = bilinear_sample(&ones, &grid_a);
    let sticker_w = bilinear_sample(mapped, &grid_a);
    let mut composed = face.clone();
    for y in 0..win.height {
        for x in 0..win.width {
            let m = mask_w.at(y, x, 0);
            if m == 0.0 {
                continue;
            }
            for c in 0..3 {
                let f = composed.at(y + win.top, x + win.left, c);
                composed.set(y + win.top, x + win.left, c, (1.0 - m) * f + m * sticker_w.at(y, x, c));
            }
        }
    }

    let grid_b = face_grid(face.height(), face.width(), tb)?;
    let mut out = bilinear_sample(&composed, &grid_b);
    let noise_field = noise.field(face.height(), face.width(), face.channels())?;
    let mut pass = vec![0.0; out.len()];
    for ((o, n), p) in out.data_mut().iter_mut().zip(noise_field.data()).zip(pass.iter_mut()) {
        let z = tb.contrast * *o + tb.brightness;
        let w = z.clamp(0.0, 1.0) + n;
        *o = w.clamp(0.0, 1.0);
        *p = if clamp_pass(z) && clamp_pass(w) { tb.contrast } else { 0.0 };
    }
    let tape = RenderTape {
        window: win,
        grid_a,
        grid_b,
        mask_w,
        pass,
        canvas_height: face.height(),
        canvas_width: face.width(),
        sticker_height: placement.sticker_height,
        sticker_width: placement.sticker_width,
    };
    Ok((out, tape))
}

/// The full rendering chain. Without a mapper the colour stage is the identity.
pub fn render_adversarial(
    face: &ImageTensor,
    sticker: &StickerState,
    ta: &StickerTransformParams,
    tb: &FaceTransformParams,
    noise: &NoiseSpec,
    mapper: Option<&D2PMapper>,
) -> Result<ImageTensor> {
    let mapped = match mapper {
        Some(m) => m.apply(&sticker.pixels)?,
        None => sticker.pixels.clone(),
    };
    Ok(render_mapped(face, &mapped, &sticker.placement, ta, tb, noise)?.0)
}

/// [`render_adversarial`] as an [`ImageOp`] over the sticker pixels.
pub struct RenderOp<'a> {
    pub face: &'a ImageTensor,
    pub placement: MaskSpec,
    pub ta: StickerTransformParams,
    pub tb: FaceTransformParams,
    pub noise: NoiseSpec,
    pub mapper: Option<&'a D2PMapper>,
}

impl ImageOp for RenderOp<'_> {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        let state = StickerState {
            pixels: input.clone(),
            placement: self.placement,
        };
        render_adversarial(self.face, &state, &self.ta, &self.tb, &self.noise, self.mapper)
    }

    fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        match self.mapper {
            Some(m) => {
                let (mapped, d2p_tape) = m.apply_with_tape(input)?;
                let (_, tape) = render_mapped(self.face, &mapped, &self.placement, &self.ta, &self.tb, &self.noise)?;
                d2p_tape.backward(&tape.backward(upstream)?)
            }
            None => {
                let (_, tape) = render_mapped(self.face, input, &self.placement, &self.ta, &self.tb, &self.noise)?;
                tape.backward(upstream)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, Projected};
    use rand::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn bend_identity() {
        let img = random_image(9, 13, 3, 1);
        let out = parabolic_warp(&img, 0.0, 0.0).unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-12);
    }

    #[test]
    fn bend_displaces_corner_column_by_closed_form() {
        // One bright row at y = 5; rate 1e-4 on 400 columns moves column 0
        // down by 1e-4 * 200^2 = 4 pixels.
        let img = ImageTensor::from_fn(20, 400, 1, |y, _, _| if y == 5 { 1.0 } else { 0.0 });
        let out = parabolic_warp(&img, 0.0, 1e-4).unwrap();
        assert_eq!(out.at(9, 0, 0), 1.0);
        assert_eq!(out.at(5, 0, 0), 0.0);
        // Centre column does not move.
        assert_eq!(out.at(5, 200, 0), 1.0);
    }

    #[test]
    fn bend_out_of_range_is_rejected() {
        let img = ImageTensor::zeros(4, 400, 1);
        assert!(matches!(
            parabolic_warp(&img, 0.0, 1e-4),
            Err(Error::ParamsOutOfRange(_))
        ));
    }

    #[test]
    fn pitch_keeps_top_row_and_compresses_below() {
        let grid = parabolic_grid(41, 5, 60.0, 0.0).unwrap();
        let top = grid.coords()[2];
        assert_eq!(top, [2.0, 0.0]);
        // Bottom output row reads from further down the source.
        let bottom = grid.coords()[40 * 5 + 2];
        assert!(bottom[1] > 40.0);
    }

    #[test]
    fn bend_gradient() {
        let img = random_image(12, 30, 3, 2);
        let obj = Projected::random(ParabolicWarp { angle: 1.0, rate: 1e-4 }, img.shape(), 3);
        assert!(grad_check(&obj, &img, 1e-4).unwrap());
    }

    #[test]
    fn affine_identity_and_photometric() {
        let img = random_image(16, 16, 3, 4);
        let out = affine_photometric(&img, &FaceTransformParams::IDENTITY).unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-12);

        let flat = ImageTensor::filled(8, 8, 3, 0.6);
        let p = FaceTransformParams {
            contrast: 0.5,
            brightness: 0.1,
            ..FaceTransformParams::IDENTITY
        };
        let out = affine_photometric(&flat, &p).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn affine_gradient() {
        let img = random_image(20, 20, 3, 5);
        let p = FaceTransformParams {
            rotation: 2.2,
            scale: 1.03,
            translation: [-1.2, 0.6],
            contrast: 0.8,
            brightness: 0.07,
        };
        let obj = Projected::random(AffinePhotometric(p), img.shape(), 6);
        assert!(grad_check(&obj, &img, 1e-4).unwrap());
    }

    #[test]
    fn composite_cases() {
        let face = ImageTensor::filled(4, 4, 3, 0.2);
        let sticker = ImageTensor::filled(4, 4, 3, 0.8);
        let zero = ImageTensor::zeros(4, 4, 1);
        assert_eq!(composite(&face, &sticker, &zero).unwrap(), face);
        let one = ImageTensor::filled(4, 4, 1, 1.0);
        assert_eq!(composite(&face, &sticker, &one).unwrap(), sticker);
        let half = ImageTensor::filled(4, 4, 3, 0.5);
        let out = composite(&face, &sticker, &half).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let bad = ImageTensor::zeros(4, 5, 1);
        assert!(composite(&face, &sticker, &bad).is_err());
        let bad_c = ImageTensor::zeros(4, 4, 2);
        assert!(composite(&face, &sticker, &bad_c).is_err());
    }

    #[test]
    fn composite_gradient() {
        struct StickerSide {
            face: ImageTensor,
            mask: ImageTensor,
        }
        impl ImageOp for StickerSide {
            fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
                composite(&self.face, input, &self.mask)
            }
            fn adjoint(&self, _: &ImageTensor, up: &ImageTensor) -> Result<ImageTensor> {
                Ok(composite_adjoint(&self.mask, up)?.1)
            }
        }
        let op = StickerSide {
            face: random_image(10, 10, 3, 7),
            mask: random_image(10, 10, 1, 8),
        };
        let obj = Projected::random(op, (10, 10, 3), 9);
        assert!(grad_check(&obj, &random_image(10, 10, 3, 10), 1e-4).unwrap());
    }

    #[test]
    fn identity_render_pastes_sticker() {
        let spec = MaskSpec::forehead(32, 32, 8, 16).unwrap();
        let face = random_image(32, 32, 3, 11);
        let sticker = StickerState {
            pixels: random_image(8, 16, 3, 12),
            placement: spec,
        };
        let out = render_adversarial(
            &face,
            &sticker,
            &StickerTransformParams::IDENTITY,
            &FaceTransformParams::IDENTITY,
            &NoiseSpec::none(),
            None,
        )
        .unwrap();
        let expected = composite(&face, &spec.place(&sticker.pixels).unwrap(), &spec.initial_mask()).unwrap();
        assert!(out.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn forehead_default_geometry() {
        let spec = MaskSpec::forehead(112, 112, 40, 90).unwrap();
        assert_eq!((spec.top, spec.left), (14, 11));
        assert!(MaskSpec::forehead(32, 32, 40, 10).is_err());
    }

    #[test]
    fn windowed_render_matches_full_canvas_reference() {
        let spec = MaskSpec::forehead(64, 64, 16, 40).unwrap();
        let face = random_image(64, 64, 3, 21);
        let sticker = random_image(16, 40, 3, 22);
        let cases = [
            StickerTransformParams {
                parabolic_angle: 2.0,
                parabolic_rate: 2e-4,
                rotation: 1.0,
                translation: [1.0, -1.0],
            },
            StickerTransformParams {
                parabolic_angle: -30.0,
                parabolic_rate: -2e-3,
                rotation: -15.0,
                translation: [-6.5, 4.0],
            },
        ];
        let tb = FaceTransformParams {
            rotation: 3.0,
            scale: 0.94,
            translation: [2.0, -2.0],
            contrast: 1.1,
            brightness: 0.1,
        };
        let noise = NoiseSpec {
            mean: 0.0,
            stddev: 0.02,
            seed: 4,
        };
        for ta in cases {
            let grid = sticker_grid(&spec, &ta).unwrap();
            let ones = ImageTensor::filled(16, 40, 1, 1.0);
            let composed = composite(
                &face,
                &bilinear_sample(&sticker, &grid),
                &bilinear_sample(&ones, &grid),
            )
            .unwrap();
            let mut expected = affine_photometric(&composed, &tb).unwrap();
            expected.add_scaled(&noise.field(64, 64, 3).unwrap(), 1.0).unwrap();
            expected.clamp_unit_in_place();
            let (out, tape) = render_mapped(&face, &sticker, &spec, &ta, &tb, &noise).unwrap();
            assert!(out.max_abs_diff(&expected) <= 1e-12);
            assert!(tape.warped_mask().max_abs_diff(&bilinear_sample(&ones, &grid)) <= 1e-12);
        }
    }
}
