use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::palette::ColorPalette;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const MAGIC: &[u8; 8] = b"D2PMLP01";

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-pixel colour mapping `rgb -> clamp(W2 sigmoid(W1 rgb + b1) + b2)`.
///
/// Parameters live in one flat buffer: `W1` (hidden x 3, row-major), `b1`,
/// `W2` (3 x hidden, row-major), `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct D2PMapper {
    hidden: usize,
    params: Vec<f64>,
}

impl D2PMapper {
    pub const DEFAULT_HIDDEN: usize = 100;

    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = Normal::new(0.0, 2.0).expect("valid normal");
        let w2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid normal");
        let mut params = vec![0.0; Self::param_count(hidden)];
        let (o_b1, o_w2, o_b2) = Self::offsets(hidden);
        for p in &mut params[..o_b1] {
            *p = w1.sample(&mut rng);
        }
        // Centre each hidden unit's pre-activation on mid-grey inputs.
        for j in 0..hidden {
            let s: f64 = params[j * 3..j * 3 + 3].iter().sum();
            params[o_b1 + j] = -0.5 * s;
        }
        for p in &mut params[o_w2..o_b2] {
            *p = w2.sample(&mut rng);
        }
        // Map mid-grey to mid-grey.
        for k in 0..3 {
            let s: f64 = params[o_w2 + k * hidden..o_w2 + (k + 1) * hidden].iter().sum();
            params[o_b2 + k] = 0.5 - 0.5 * s;
        }
        Self { hidden, params }
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(hidden) {
            return Err(Error::Shape(format!(
                "{} parameters for hidden width {hidden}, expected {}",
                params.len(),
                Self::param_count(hidden)
            )));
        }
        Ok(Self { hidden, params })
    }

    pub fn param_count(hidden: usize) -> usize {
        hidden * 3 + hidden + 3 * hidden + 3
    }

    fn offsets(hidden: usize) -> (usize, usize, usize) {
        let b1 = hidden * 3;
        let w2 = b1 + hidden;
        let b2 = w2 + 3 * hidden;
        (b1, w2, b2)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Unclamped output and hidden activations for one colour.
    fn forward_color(&self, rgb: [f64; 3], hidden_out: &mut [f64]) -> [f64; 3] {
        let h = self.hidden;
        let (o_b1, o_w2, o_b2) = Self::offsets(h);
        let p = &self.params;
        for j in 0..h {
            let w = &p[j * 3..j * 3 + 3];
            hidden_out[j] = sigmoid(w[0] * rgb[0] + w[1] * rgb[1] + w[2] * rgb[2] + p[o_b1 + j]);
        }
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let w = &p[o_w2 + k * h..o_w2 + (k + 1) * h];
            *o = p[o_b2 + k] + w.iter().zip(hidden_out.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    pub fn map_color(&self, rgb: [f64; 3]) -> [f64; 3] {
        let mut hid = vec![0.0; self.hidden];
        self.forward_color(rgb, &mut hid).map(|v| v.clamp(0.0, 1.0))
    }

    fn check_channels(img: &ImageTensor) -> Result<()> {
        if img.channels() != 3 {
            return Err(Error::Shape(format!(
                "colour mapping needs 3 channels, got {}",
                img.channels()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        Self::check_channels(img)?;
        let mut out = img.clone();
        let mut hid = vec![0.0; self.hidden];
        for px in out.data_mut().chunks_exact_mut(3) {
            let o = self.forward_color([px[0], px[1], px[2]], &mut hid);
            for c in 0..3 {
                px[c] = o[c].clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }

    /// Forward pass that keeps the per-pixel Jacobians for [`D2PTape::backward`].
    pub fn apply_with_tape(&self, img: &ImageTensor) -> Result<(ImageTensor, D2PTape)> {
        Self::check_channels(img)?;
        let h = self.hidden;
        let (_, o_w2, _) = Self::offsets(h);
        let p = &self.params;
        let mut out = img.clone();
        let mut jacobians = Vec::with_capacity(img.len() / 3);
        let mut hid = vec![0.0; h];
        for px in out.data_mut().chunks_exact_mut(3) {
            let o = self.forward_color([px[0], px[1], px[2]], &mut hid);
            // J[k][i] = sum_j W2[k][j] * s_j (1 - s_j) * W1[j][i], zeroed where clamped.
            let mut jac = [[0.0; 3]; 3];
            for j in 0..h {
                let d = hid[j] * (1.0 - hid[j]);
                let w1 = &p[j * 3..j * 3 + 3];
                for (k, row) in jac.iter_mut().enumerate() {
                    let a = p[o_w2 + k * h + j] * d;
                    row[0] += a * w1[0];
                    row[1] += a * w1[1];
                    row[2] += a * w1[2];
                }
            }
            for k in 0..3 {
                if !(0.0..=1.0).contains(&o[k]) {
                    jac[k] = [0.0; 3];
                }
                px[k] = o[k].clamp(0.0, 1.0);
            }
            jacobians.push(jac);
        }
        let tape = D2PTape {
            shape: img.shape(),
            jacobians,
        };
        Ok((out, tape))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for n in [3u32, self.hidden as u32, 3u32] {
            w.write_all(&n.to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a colour-mapper weight file".into()));
        }
        let mut dims = [0u32; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b);
        }
        if dims[0] != 3 || dims[2] != 3 || dims[1] == 0 {
            return Err(Error::Format(format!("unsupported layer sizes {dims:?}")));
        }
        let hidden = dims[1] as usize;
        let mut params = vec![0.0; Self::param_count(hidden)];
        for p in &mut params {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *p = f64::from_le_bytes(b);
        }
        Self::from_params(hidden, params)
    }
}

/// Per-pixel Jacobians of a colour mapping pass.
#[derive(Debug, Clone)]
pub struct D2PTape {
    shape: (usize, usize, usize),
    jacobians: Vec<[[f64; 3]; 3]>,
}

impl D2PTape {
    pub fn backward(&self, upstream: &ImageTensor) -> Result<ImageTensor> {
        if upstream.shape() != self.shape {
            return Err(Error::Shape(format!(
                "colour mapping upstream {:?} vs {:?}",
                upstream.shape(),
                self.shape
            )));
        }
        let mut out = upstream.zeros_like();
        for ((o, g), jac) in out
            .data_mut()
            .chunks_exact_mut(3)
            .zip(upstream.data().chunks_exact(3))
            .zip(&self.jacobians)
        {
            for i in 0..3 {
                o[i] = jac[0][i] * g[0] + jac[1][i] * g[1] + jac[2][i] * g[2];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Fractions of `epochs` at which the step size is multiplied by `decay_factor`.
    pub decay_points: Vec<f64>,
    pub decay_factor: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: 0.01,
            decay_points: vec![0.5, 0.7],
            decay_factor: 0.1,
            hidden: D2PMapper::DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 100k epochs with decays at 50k and 70k.
    pub fn full_recipe() -> Self {
        Self {
            epochs: 100_000,
            ..Self::default()
        }
    }

    fn step_size(&self, epoch: usize) -> f64 {
        let decays = self
            .decay_points
            .iter()
            .filter(|&&f| epoch >= (f * self.epochs as f64).floor() as usize)
            .count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub mapper: D2PMapper,
    /// Full-batch MSE at the start of every epoch.
    pub loss_trace: Vec<f64>,
    /// MSE of the clamped output of the returned mapper.
    pub final_mse: f64,
}

/// Full-batch Adam on mean squared error between mapped digital anchors and
/// their measured physical counterparts.
pub fn train_d2p(digital: &ColorPalette, physical: &ColorPalette, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if digital.len() != physical.len() || digital.is_empty() {
        return Err(Error::Shape(format!(
            "palettes have {} and {} anchors",
            digital.len(),
            physical.len()
        )));
    }
    if cfg.hidden == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Parameter("hidden width and learning rate must be positive".into()));
    }
    let h = cfg.hidden;
    let (o_b1, o_w2, o_b2) = D2PMapper::offsets(h);
    let mut mapper = D2PMapper::random(h, cfg.seed);
    let n_params = mapper.params.len();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut hid = vec![0.0; h];
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let scale = 2.0 / (digital.len() * 3) as f64;

    for epoch in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sq = 0.0;
        for (x, t) in digital.anchors.iter().zip(&physical.anchors) {
            let out = mapper.forward_color(*x, &mut hid);
            let mut d_out = [0.0; 3];
            for k in 0..3 {
                let e = out[k] - t[k];
                sq += e * e;
                d_out[k] = scale * e;
                grad[o_b2 + k] += d_out[k];
            }
            for j in 0..h {
                let s = hid[j];
                let mut d_h = 0.0;
                for k in 0..3 {
                    grad[o_w2 + k * h + j] += d_out[k] * s;
                    d_h += d_out[k] * mapper.params[o_w2 + k * h + j];
                }
                let d_z = d_h * s * (1.0 - s);
                grad[o_b1 + j] += d_z;
                grad[j * 3] += d_z * x[0];
                grad[j * 3 + 1] += d_z * x[1];
                grad[j * 3 + 2] += d_z * x[2];
            }
        }
        let loss = sq / (digital.len() * 3) as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        loss_trace.push(loss);

        let lr = cfg.step_size(epoch);
        let t = (epoch + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..n_params {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            mapper.params[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
    }

    let mut sq = 0.0;
    for (x, t) in digital.anchors.iter().zip(&physical.anchors) {
        let out = mapper.map_color(*x);
        for k in 0..3 {
            sq += (out[k] - t[k]).powi(2);
        }
    }
    let final_mse = sq / (digital.len() * 3) as f64;
    if !final_mse.is_finite() {
        return Err(Error::Training("final loss is not finite".into()));
    }
    Ok(TrainOutcome {
        mapper,
        loss_trace,
        final_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::d2p::make_digital_palette;
    use crate::gradcheck::{grad_check, ImageOp, Projected};
    use rand::Rng;

    struct Apply(D2PMapper);

    impl ImageOp for Apply {
        fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
            self.0.apply(input)
        }
        fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
            self.0.apply_with_tape(input)?.1.backward(upstream)
        }
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(6, 7, 3, |_, _, _| rng.random_range(0.2..0.8))
    }

    #[test]
    fn constant_image_maps_to_constant() {
        let m = D2PMapper::random(100, 3);
        let out = m.apply(&ImageTensor::filled(4, 4, 3, 0.3)).unwrap();
        let first = [out.at(0, 0, 0), out.at(0, 0, 1), out.at(0, 0, 2)];
        for px in out.data().chunks_exact(3) {
            assert_eq!(px, first);
        }
    }

    #[test]
    fn output_stays_in_unit_cube() {
        let m = D2PMapper::random(100, 4);
        let img = ImageTensor::from_fn(8, 8, 3, |y, x, c| (y * 8 + x + c) as f64 / 66.0);
        let out = m.apply(&img).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let m = D2PMapper::random(10, 1);
        assert!(matches!(m.apply(&ImageTensor::zeros(2, 2, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn apply_gradient() {
        let op = Apply(D2PMapper::random(100, 5));
        let obj = Projected::random(op, (6, 7, 3), 6);
        assert!(grad_check(&obj, &random_image(7), 1e-4).unwrap());
    }

    #[test]
    fn weight_file_round_trip() {
        let m = D2PMapper::random(100, 8);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 12 + 8 * D2PMapper::param_count(100));
        assert_eq!(D2PMapper::read_from(buf.as_slice()).unwrap(), m);
        buf[0] = b'X';
        assert!(matches!(D2PMapper::read_from(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn step_schedule_matches_recipe() {
        let c = TrainConfig::full_recipe();
        assert_eq!(c.step_size(0), 0.01);
        assert!((c.step_size(50_000) - 0.001).abs() < 1e-15);
        assert!((c.step_size(70_000) - 0.0001).abs() < 1e-15);
        let d = TrainConfig::default();
        assert!((d.step_size(9_999) - 0.01).abs() < 1e-15);
        assert!((d.step_size(10_000) - 0.001).abs() < 1e-15);
        assert!((d.step_size(14_000) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn mismatched_palettes_are_rejected() {
        let d = make_digital_palette();
        let mut p = d.clone();
        p.anchors.pop();
        assert!(train_d2p(&d, &p, &TrainConfig::default()).is_err());
    }
}
