//! Face embedding model, cosine similarity and the attack losses.
//!
//! The built-in model is a small strided convolutional stack with fixed
//! random weights: inputs mapped to [-1, 1], four stride-2 3x3 convolutions
//! with `tanh`, an affine projection of the flattened final feature map and
//! L2 normalisation. Only the gradient with respect to the input image is
//! ever needed.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const MAGIC: &[u8; 8] = b"TOYEMB02";
const KERNEL: usize = 3;
const STRIDE: usize = 2;
/// Gain applied to the 1/sqrt(fan_in) weight scale.
const INIT_GAIN: f64 = 1.6;
/// Pixels in [0, 1] enter the network as `(v - 0.5) * INPUT_SCALE`.
const INPUT_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Push the adversarial face away from a same-identity anchor.
    Dodging,
    /// Pull the adversarial face towards a different identity's anchor.
    Impersonation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub output_dim: usize,
}

impl Architecture {
    pub fn toy(input_size: usize, output_dim: usize) -> Self {
        Self {
            input_size,
            stage_channels: vec![4, 8, 16, 32],
            output_dim,
        }
    }

    /// Spatial sizes of the input and every stage output.
    fn spatial(&self) -> Vec<usize> {
        let mut s = vec![self.input_size];
        for _ in &self.stage_channels {
            let prev = *s.last().unwrap();
            s.push((prev - 1) / STRIDE + 1);
        }
        s
    }

    fn in_channels(&self, stage: usize) -> usize {
        if stage == 0 {
            3
        } else {
            self.stage_channels[stage - 1]
        }
    }

    fn weight_count(&self) -> usize {
        let conv: usize = (0..self.stage_channels.len())
            .map(|l| self.stage_channels[l] * (KERNEL * KERNEL * self.in_channels(l) + 1))
            .sum();
        conv + self.output_dim * (self.flat_len() + 1)
    }

    /// Length of the flattened final feature map.
    fn flat_len(&self) -> usize {
        let s = *self.spatial().last().unwrap();
        s * s * self.stage_channels.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    arch: Architecture,
    weights: Vec<f64>,
    /// Start of each stage's (kernel, bias) block, then the projection.
    offsets: Vec<usize>,
    /// Per stage kernels laid out as `[tap * in_channels + ci][co]`.
    kernels: Vec<Vec<f64>>,
}

struct StageCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

/// Activations from a forward pass, consumed by [`EmbedTape::backward`].
pub struct EmbedTape<'m> {
    model: &'m EmbeddingModel,
    stages: Vec<StageCache>,
    raw_norm: f64,
    embedding: Vec<f64>,
}

impl EmbeddingModel {
    /// Deterministic random weights; the same seed gives identical weights.
    pub fn toy(seed: u64, input_size: usize, output_dim: usize) -> Result<Self> {
        if input_size < 32 {
            return Err(Error::Parameter(format!("input size {input_size} is below 32")));
        }
        if output_dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive".into()));
        }
        let arch = Architecture::toy(input_size, output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(arch.weight_count());
        for l in 0..arch.stage_channels.len() {
            let fan_in = KERNEL * KERNEL * arch.in_channels(l);
            let normal = Normal::new(0.0, INIT_GAIN / (fan_in as f64).sqrt()).expect("valid normal");
            for _ in 0..arch.stage_channels[l] * fan_in {
                weights.push(normal.sample(&mut rng));
            }
            weights.extend(std::iter::repeat_n(0.0, arch.stage_channels[l]));
        }
        let flat = arch.flat_len();
        let normal = Normal::new(0.0, 1.0 / (flat as f64).sqrt()).expect("valid normal");
        for _ in 0..output_dim * flat {
            weights.push(normal.sample(&mut rng));
        }
        weights.extend(std::iter::repeat_n(0.0, output_dim));
        Self::from_weights(arch, weights)
    }

    pub fn from_weights(arch: Architecture, weights: Vec<f64>) -> Result<Self> {
        if arch.stage_channels.is_empty() || arch.stage_channels.contains(&0) || arch.output_dim == 0 {
            return Err(Error::Parameter("empty or zero-width architecture".into()));
        }
        if arch.input_size == 0 {
            return Err(Error::Parameter("zero input size".into()));
        }
        if weights.len() != arch.weight_count() {
            return Err(Error::Shape(format!(
                "{} weights for an architecture needing {}",
                weights.len(),
                arch.weight_count()
            )));
        }
        let mut offsets = Vec::with_capacity(arch.stage_channels.len() + 1);
        let mut o = 0;
        for l in 0..arch.stage_channels.len() {
            offsets.push(o);
            o += arch.stage_channels[l] * (KERNEL * KERNEL * arch.in_channels(l) + 1);
        }
        offsets.push(o);
        let kernels = (0..arch.stage_channels.len())
            .map(|l| {
                let cout = arch.stage_channels[l];
                let k_len = KERNEL * KERNEL * arch.in_channels(l);
                let w = &weights[offsets[l]..offsets[l] + cout * k_len];
                let mut t = vec![0.0; k_len * cout];
                for co in 0..cout {
                    for k in 0..k_len {
                        t[k * cout + co] = w[co * k_len + k];
                    }
                }
                t
            })
            .collect();
        Ok(Self {
            arch,
            weights,
            offsets,
            kernels,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    fn check_input(&self, img: &ImageTensor) -> Result<()> {
        let s = self.arch.input_size;
        if img.shape() != (s, s, 3) {
            return Err(Error::Shape(format!(
                "model expects {s}x{s}x3 input, got {:?}",
                img.shape()
            )));
        }
        Ok(())
    }

    fn conv_forward(&self, l: usize, input: &[f64], in_size: usize, out_size: usize) -> Vec<f64> {
        let cin = self.arch.in_channels(l);
        let cout = self.arch.stage_channels[l];
        let k_len = KERNEL * KERNEL * cin;
        let wt = &self.kernels[l];
        let b = &self.weights[self.offsets[l] + cout * k_len..self.offsets[l + 1]];
        let mut out = vec![0.0; out_size * out_size * cout];
        let dims = ConvDims { cin, cout, in_size, out_size };
        match (cin, cout) {
            (3, 4) => conv_fwd::<3, 4>(wt, b, input, &mut out, dims),
            (4, 8) => conv_fwd::<4, 8>(wt, b, input, &mut out, dims),
            (8, 16) => conv_fwd::<8, 16>(wt, b, input, &mut out, dims),
            (16, 32) => conv_fwd::<16, 32>(wt, b, input, &mut out, dims),
            _ => conv_fwd_dyn(wt, b, input, &mut out, dims),
        }
        out
    }

    fn conv_backward(&self, l: usize, d_z: &[f64], in_size: usize, out_size: usize) -> Vec<f64> {
        let cin = self.arch.in_channels(l);
        let cout = self.arch.stage_channels[l];
        let wt = &self.kernels[l];
        let mut d_in = vec![0.0; in_size * in_size * cin];
        let dims = ConvDims { cin, cout, in_size, out_size };
        match (cin, cout) {
            (3, 4) => conv_bwd::<3, 4>(wt, d_z, &mut d_in, dims),
            (4, 8) => conv_bwd::<4, 8>(wt, d_z, &mut d_in, dims),
            (8, 16) => conv_bwd::<8, 16>(wt, d_z, &mut d_in, dims),
            (16, 32) => conv_bwd::<16, 32>(wt, d_z, &mut d_in, dims),
            _ => conv_bwd_dyn(wt, d_z, &mut d_in, dims),
        }
        d_in
    }

    fn forward(&self, img: &ImageTensor) -> Result<(Vec<StageCache>, Vec<f64>, f64)> {
        self.check_input(img)?;
        let sizes = self.arch.spatial();
        let mut stages = Vec::with_capacity(self.arch.stage_channels.len());
        let mut x: Vec<f64> = img.data().iter().map(|v| (v - 0.5) * INPUT_SCALE).collect();
        for l in 0..self.arch.stage_channels.len() {
            let y = self.conv_forward(l, &x, sizes[l], sizes[l + 1]);
            stages.push(StageCache {
                input: std::mem::take(&mut x),
                output: y.clone(),
            });
            x = y;
        }
        let flat = x.len();
        let d = self.arch.output_dim;
        let fc = self.offsets[self.offsets.len() - 1];
        let mut raw = vec![0.0; d];
        for (k, r) in raw.iter_mut().enumerate() {
            let w = &self.weights[fc + k * flat..fc + (k + 1) * flat];
            *r = self.weights[fc + d * flat + k] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate("embedding has zero or non-finite norm".into()));
        }
        let emb = raw.iter().map(|v| v / norm).collect();
        Ok((stages, emb, norm))
    }

    /// Unit-norm embedding of a face image.
    pub fn embed(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.forward(img)?.1)
    }

    pub fn embed_with_tape(&self, img: &ImageTensor) -> Result<EmbedTape<'_>> {
        let (stages, embedding, raw_norm) = self.forward(img)?;
        Ok(EmbedTape {
            model: self,
            stages,
            raw_norm,
            embedding,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let mut header = vec![self.arch.input_size as u32, self.arch.stage_channels.len() as u32];
        header.extend(self.arch.stage_channels.iter().map(|&c| c as u32));
        header.push(self.arch.output_dim as u32);
        for h in header {
            w.write_all(&h.to_le_bytes())?;
        }
        for v in &self.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an embedding weight file".into()));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let input_size = read_u32(&mut r)?;
        let n_stages = read_u32(&mut r)?;
        if n_stages == 0 || n_stages > 16 {
            return Err(Error::Format(format!("unsupported stage count {n_stages}")));
        }
        let stage_channels = (0..n_stages).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let output_dim = read_u32(&mut r)?;
        let arch = Architecture {
            input_size,
            stage_channels,
            output_dim,
        };
        if arch.stage_channels.contains(&0) || output_dim == 0 {
            return Err(Error::Format("zero-width layer in header".into()));
        }
        let mut weights = vec![0.0; arch.weight_count()];
        for v in &mut weights {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Self::from_weights(arch, weights)
    }
}

impl EmbedTape<'_> {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    /// Gradient with respect to the input image given `d loss / d embedding`.
    pub fn backward(&self, d_emb: &[f64]) -> Result<ImageTensor> {
        let m = self.model;
        let arch = &m.arch;
        if d_emb.len() != arch.output_dim {
            return Err(Error::Shape(format!(
                "embedding gradient has {} entries, expected {}",
                d_emb.len(),
                arch.output_dim
            )));
        }
        let e = &self.embedding;
        let dot: f64 = e.iter().zip(d_emb).map(|(a, b)| a * b).sum();
        let d_raw: Vec<f64> = e
            .iter()
            .zip(d_emb)
            .map(|(ei, gi)| (gi - ei * dot) / self.raw_norm)
            .collect();
        let flat = arch.flat_len();
        let fc = m.offsets[m.offsets.len() - 1];
        let mut d_out = vec![0.0; flat];
        for (k, g) in d_raw.iter().enumerate() {
            let w = &m.weights[fc + k * flat..fc + (k + 1) * flat];
            for (p, wv) in d_out.iter_mut().zip(w) {
                *p += g * wv;
            }
        }
        let sizes = arch.spatial();
        let n_stages = arch.stage_channels.len();
        for l in (0..n_stages).rev() {
            let out = &self.stages[l].output;
            for (g, &a) in d_out.iter_mut().zip(out) {
                *g *= 1.0 - a * a;
            }
            d_out = m.conv_backward(l, &d_out, sizes[l], sizes[l + 1]);
            debug_assert_eq!(d_out.len(), self.stages[l].input.len());
        }
        d_out.iter_mut().for_each(|g| *g *= INPUT_SCALE);
        ImageTensor::new(arch.input_size, arch.input_size, 3, d_out)
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    in_size: usize,
    out_size: usize,
}

/// `tanh` through one exponential; agrees with `f64::tanh` to within 3e-16.
#[inline(always)]
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Input rows/columns covered by the 3x3, stride-2, pad-1 window at `o`.
#[inline(always)]
fn taps_1d(o: usize, n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..KERNEL).filter_map(move |k| {
        let i = (o * STRIDE + k).checked_sub(1)?;
        (i < n).then_some((k, i))
    })
}

fn conv_fwd<const CIN: usize, const COUT: usize>(wt: &[f64], b: &[f64], input: &[f64], out: &mut [f64], d: ConvDims) {
    let wt: Vec<[f64; COUT]> = wt.chunks_exact(COUT).map(|r| r.try_into().unwrap()).collect();
    let bias: [f64; COUT] = b.try_into().unwrap();
    for oy in 0..d.out_size {
        for ox in 0..d.out_size {
            let mut acc = bias;
            for (ky, iy) in taps_1d(oy, d.in_size) {
                for (kx, ix) in taps_1d(ox, d.in_size) {
                    let base = (iy * d.in_size + ix) * CIN;
                    let px: &[f64; CIN] = input[base..base + CIN].try_into().unwrap();
                    let koff = (ky * KERNEL + kx) * CIN;
                    for ci in 0..CIN {
                        let row = &wt[koff + ci];
                        for co in 0..COUT {
                            acc[co] += px[ci] * row[co];
                        }
                    }
                }
            }
            let o = (oy * d.out_size + ox) * COUT;
            for co in 0..COUT {
                out[o + co] = fast_tanh(acc[co]);
            }
        }
    }
}

fn conv_fwd_dyn(wt: &[f64], b: &[f64], input: &[f64], out: &mut [f64], d: ConvDims) {
    let (cin, cout) = (d.cin, d.cout);
    for oy in 0..d.out_size {
        for ox in 0..d.out_size {
            let acc = &mut out[(oy * d.out_size + ox) * cout..(oy * d.out_size + ox + 1) * cout];
            acc.copy_from_slice(b);
            for (ky, iy) in taps_1d(oy, d.in_size) {
                for (kx, ix) in taps_1d(ox, d.in_size) {
                    let base = (iy * d.in_size + ix) * cin;
                    let koff = (ky * KERNEL + kx) * cin;
                    for (ci, &p) in input[base..base + cin].iter().enumerate() {
                        let row = &wt[(koff + ci) * cout..(koff + ci + 1) * cout];
                        for (a, &w) in acc.iter_mut().zip(row) {
                            *a += p * w;
                        }
                    }
                }
            }
            for a in acc.iter_mut() {
                *a = fast_tanh(*a);
            }
        }
    }
}

fn conv_bwd<const CIN: usize, const COUT: usize>(wt: &[f64], d_z: &[f64], d_in: &mut [f64], d: ConvDims) {
    let wt: Vec<[f64; COUT]> = wt.chunks_exact(COUT).map(|r| r.try_into().unwrap()).collect();
    for oy in 0..d.out_size {
        for ox in 0..d.out_size {
            let o = (oy * d.out_size + ox) * COUT;
            let g: &[f64; COUT] = d_z[o..o + COUT].try_into().unwrap();
            for (ky, iy) in taps_1d(oy, d.in_size) {
                for (kx, ix) in taps_1d(ox, d.in_size) {
                    let base = (iy * d.in_size + ix) * CIN;
                    let dst: &mut [f64; CIN] = (&mut d_in[base..base + CIN]).try_into().unwrap();
                    let koff = (ky * KERNEL + kx) * CIN;
                    for ci in 0..CIN {
                        let row = &wt[koff + ci];
                        let mut s = 0.0;
                        for co in 0..COUT {
                            s += row[co] * g[co];
                        }
                        dst[ci] += s;
                    }
                }
            }
        }
    }
}

fn conv_bwd_dyn(wt: &[f64], d_z: &[f64], d_in: &mut [f64], d: ConvDims) {
    let (cin, cout) = (d.cin, d.cout);
    for oy in 0..d.out_size {
        for ox in 0..d.out_size {
            let g = &d_z[(oy * d.out_size + ox) * cout..(oy * d.out_size + ox + 1) * cout];
            for (ky, iy) in taps_1d(oy, d.in_size) {
                for (kx, ix) in taps_1d(ox, d.in_size) {
                    let base = (iy * d.in_size + ix) * cin;
                    let koff = (ky * KERNEL + kx) * cin;
                    for (ci, dv) in d_in[base..base + cin].iter_mut().enumerate() {
                        let row = &wt[(koff + ci) * cout..(koff + ci + 1) * cout];
                        *dv += row.iter().zip(g).map(|(w, gv)| w * gv).sum::<f64>();
                    }
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("embedding dims {} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `(1 + cos) / 2` for dodging, `(1 - cos) / 2` for impersonation.
pub fn attack_loss(mode: AttackMode, emb_adv: &[f64], emb_anchor: &[f64]) -> Result<f64> {
    Ok(loss_from_cosine(mode, cosine(emb_adv, emb_anchor)?))
}

/// Attack loss in [0, 1] for a given cosine similarity to the anchor.
pub fn loss_from_cosine(mode: AttackMode, cos: f64) -> f64 {
    match mode {
        AttackMode::Dodging => (1.0 + cos) / 2.0,
        AttackMode::Impersonation => (1.0 - cos) / 2.0,
    }
}

/// Loss together with its gradient with respect to `emb_adv`.
pub fn attack_loss_grad(mode: AttackMode, emb_adv: &[f64], emb_anchor: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = attack_loss(mode, emb_adv, emb_anchor)?;
    let c = cosine(emb_adv, emb_anchor)?;
    let (nu, nv) = (norm(emb_adv), norm(emb_anchor));
    let sign = match mode {
        AttackMode::Dodging => 0.5,
        AttackMode::Impersonation => -0.5,
    };
    let grad = emb_adv
        .iter()
        .zip(emb_anchor)
        .map(|(u, v)| sign * (v / (nu * nv) - c * u / (nu * nu)))
        .collect();
    Ok((loss, grad))
}

/// Cosine of every face against the anchor.
pub fn benign_similarity_report(model: &EmbeddingModel, faces: &[ImageTensor], anchor: &ImageTensor) -> Result<Vec<f64>> {
    let a = model.embed(anchor)?;
    faces.iter().map(|f| cosine(&model.embed(f)?, &a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::tensor::GradResult;
    use rand::Rng;

    fn random_image(size: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(size, size, 3, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn construction_is_deterministic() {
        let a = EmbeddingModel::toy(7, 64, 32).unwrap();
        let b = EmbeddingModel::toy(7, 64, 32).unwrap();
        assert_eq!(a.weights(), b.weights());
        let c = EmbeddingModel::toy(8, 64, 32).unwrap();
        assert_ne!(a.weights(), c.weights());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = EmbeddingModel::toy(1, 48, 16).unwrap();
        let e = m.embed(&random_image(48, 2)).unwrap();
        assert_eq!(e.len(), 16);
        assert!((norm(&e) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_small_or_mismatched_inputs() {
        assert!(EmbeddingModel::toy(1, 16, 8).is_err());
        let m = EmbeddingModel::toy(1, 32, 8).unwrap();
        assert!(matches!(m.embed(&random_image(33, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn loss_cases() {
        let u = [0.6, 0.8];
        assert!((attack_loss(AttackMode::Dodging, &u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!(attack_loss(AttackMode::Impersonation, &u, &u).unwrap().abs() < 1e-15);
        let v = [0.8, -0.6];
        assert_eq!(attack_loss(AttackMode::Dodging, &u, &v).unwrap(), 0.5);
    }

    #[test]
    fn weight_file_round_trip() {
        let m = EmbeddingModel::toy(3, 32, 8).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(EmbeddingModel::read_from(buf.as_slice()).unwrap(), m);
        assert!(EmbeddingModel::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn cosine_to_anchor_gradient() {
        let m = EmbeddingModel::toy(11, 32, 16).unwrap();
        let anchor = m.embed(&random_image(32, 12)).unwrap();
        let obj = |x: &ImageTensor| -> Result<GradResult> {
            let tape = m.embed_with_tape(x)?;
            let (value, g) = attack_loss_grad(AttackMode::Dodging, tape.embedding(), &anchor)?;
            Ok(GradResult {
                value,
                grad: tape.backward(&g)?,
            })
        };
        for seed in 0..3 {
            assert!(grad_check(&obj, &random_image(32, 100 + seed), 1e-4).unwrap());
        }
    }
}
