use rayon::prelude::*;

use super::sampling::TransformSample;
use super::tv::tv_loss_grad;
use crate::d2p::{D2PMapper, D2PTape};
use crate::embedding::{attack_loss, attack_loss_grad, cosine, AttackMode, EmbeddingModel};
use crate::error::{Error, Result};
use crate::tensor::{GradResult, ImageTensor};
use crate::warp::{affine_photometric, render_mapped, MaskSpec, NoiseSpec};

/// Everything a loss evaluation needs besides the sticker itself.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub model: EmbeddingModel,
    pub faces: Vec<ImageTensor>,
    /// Embedding of the anchor image.
    pub anchor: Vec<f64>,
    pub mode: AttackMode,
    pub placement: MaskSpec,
    pub mapper: Option<D2PMapper>,
    pub noise_mean: f64,
    pub noise_stddev: f64,
}

impl AttackContext {
    pub fn noise_for(&self, k: &TransformSample) -> NoiseSpec {
        NoiseSpec {
            mean: self.noise_mean,
            stddev: self.noise_stddev,
            seed: k.noise_seed,
        }
    }

    fn face(&self, k: &TransformSample) -> Result<&ImageTensor> {
        self.faces.get(k.face_index).ok_or_else(|| {
            Error::Parameter(format!("face index {} out of {}", k.face_index, self.faces.len()))
        })
    }

    /// Colour-maps the sticker, or passes it through without a mapper.
    pub fn map_sticker(&self, sticker: &ImageTensor) -> Result<(ImageTensor, Option<D2PTape>)> {
        match &self.mapper {
            Some(m) => {
                let (out, tape) = m.apply_with_tape(sticker)?;
                Ok((out, Some(tape)))
            }
            None => Ok((sticker.clone(), None)),
        }
    }

    pub fn render(&self, mapped: &ImageTensor, k: &TransformSample) -> Result<ImageTensor> {
        Ok(render_mapped(self.face(k)?, mapped, &self.placement, &k.ta, &k.tb, &self.noise_for(k))?.0)
    }

    pub fn sample_loss(&self, mapped: &ImageTensor, k: &TransformSample) -> Result<f64> {
        let img = self.render(mapped, k)?;
        attack_loss(self.mode, &self.model.embed(&img)?, &self.anchor)
    }

    /// Loss and its gradient with respect to the colour-mapped sticker.
    pub fn sample_loss_grad(&self, mapped: &ImageTensor, k: &TransformSample) -> Result<(f64, ImageTensor)> {
        let (img, tape) = render_mapped(self.face(k)?, mapped, &self.placement, &k.ta, &k.tb, &self.noise_for(k))?;
        let emb = self.model.embed_with_tape(&img)?;
        let (loss, d_emb) = attack_loss_grad(self.mode, emb.embedding(), &self.anchor)?;
        let d_img = emb.backward(&d_emb)?;
        Ok((loss, tape.backward(&d_img)?))
    }

    /// Cosine to the anchor of the transformed face without any sticker.
    pub fn benign_cosine(&self, k: &TransformSample) -> Result<f64> {
        let face = self.face(k)?;
        let mut img = affine_photometric(face, &k.tb)?;
        let noise = self.noise_for(k).field(face.height(), face.width(), face.channels())?;
        img.add_scaled(&noise, 1.0)?;
        img.clamp_unit_in_place();
        cosine(&self.model.embed(&img)?, &self.anchor)
    }

    pub fn adversarial_cosine(&self, mapped: &ImageTensor, k: &TransformSample) -> Result<f64> {
        cosine(&self.model.embed(&self.render(mapped, k)?)?, &self.anchor)
    }
}

fn check_finite(loss: f64, i: usize, k: &TransformSample) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Evaluation(format!(
            "sample {i} (face {}, noise seed {}) produced a non-finite loss",
            k.face_index, k.noise_seed
        )))
    }
}

/// Per-sample attack losses of a (colour-mapped) sticker over a pool.
pub fn pool_losses(ctx: &AttackContext, mapped: &ImageTensor, pool: &[TransformSample]) -> Result<Vec<f64>> {
    pool.par_iter()
        .enumerate()
        .map(|(i, k)| check_finite(ctx.sample_loss(mapped, k)?, i, k))
        .collect()
}

/// Mean attack loss of a raw sticker over a pool.
pub fn mean_pool_loss(ctx: &AttackContext, sticker: &ImageTensor, pool: &[TransformSample]) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Parameter("empty evaluation pool".into()));
    }
    let (mapped, _) = ctx.map_sticker(sticker)?;
    let losses = pool_losses(ctx, &mapped, pool)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    /// `(1/B) sum p_i L_i + alpha TV`.
    pub objective: f64,
    pub grad: ImageTensor,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub tv: f64,
}

impl BatchEvaluation {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }

    pub fn mean_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Evaluates losses and gradients for a minibatch, derives per-sample
/// weights from the losses, and reduces in batch order.
pub fn evaluate_batch(
    sticker: &ImageTensor,
    batch: &[TransformSample],
    weighting: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
    ctx: &AttackContext,
    tv_weight: f64,
) -> Result<BatchEvaluation> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty minibatch".into()));
    }
    let (mapped, d2p_tape) = ctx.map_sticker(sticker)?;
    let per_sample: Vec<(f64, ImageTensor)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, k)| {
            let (loss, grad) = ctx.sample_loss_grad(&mapped, k)?;
            Ok((check_finite(loss, i, k)?, grad))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = per_sample.iter().map(|(l, _)| *l).collect();
    let weights = weighting(&losses)?;
    if weights.len() != losses.len() {
        return Err(Error::Shape(format!("{} weights for {} samples", weights.len(), losses.len())));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut d_mapped = mapped.zeros_like();
    let mut weighted = 0.0;
    for ((loss, grad), &p) in per_sample.iter().zip(&weights) {
        weighted += p * loss;
        if p != 0.0 {
            d_mapped.add_scaled(grad, p * inv_b)?;
        }
    }
    let mut grad = match d2p_tape {
        Some(t) => t.backward(&d_mapped)?,
        None => d_mapped,
    };
    let tv = tv_loss_grad(sticker);
    if tv_weight != 0.0 {
        grad.add_scaled(&tv.grad, tv_weight)?;
    }
    let objective = weighted * inv_b + tv_weight * tv.value;
    if !objective.is_finite() {
        return Err(Error::Evaluation("non-finite batch objective".into()));
    }
    Ok(BatchEvaluation {
        objective,
        grad,
        losses,
        weights,
        tv: tv.value,
    })
}

/// Weighted expected attack loss plus TV penalty and its gradient with
/// respect to the raw sticker. Without weights every sample counts fully.
pub fn eot_loss_and_grad(
    sticker: &ImageTensor,
    batch: &[TransformSample],
    weights: Option<&[f64]>,
    ctx: &AttackContext,
    tv_weight: f64,
) -> Result<GradResult> {
    let eval = evaluate_batch(
        sticker,
        batch,
        |losses| match weights {
            Some(w) => Ok(w.to_vec()),
            None => Ok(vec![1.0; losses.len()]),
        },
        ctx,
        tv_weight,
    )?;
    Ok(GradResult {
        value: eval.objective,
        grad: eval.grad,
    })
}
