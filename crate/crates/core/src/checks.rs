//! The standard battery of finite-difference gradient checks, one entry per
//! differentiable stage plus the full weighted objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attack::{
    eot_loss_and_grad, tv_loss_grad, AttackContext, FaceChoice, FaceTransformRanges, StickerTransformRanges,
    TransformSet,
};
use crate::d2p::D2PMapper;
use crate::embedding::{attack_loss_grad, AttackMode, EmbeddingModel};
use crate::error::Result;
use crate::faces::procedural_identity;
use crate::gradcheck::{grad_check_report, GradCheckReport, ImageOp, Objective, Projected, MIN_COORDS};
use crate::tensor::{bilinear_sample, bilinear_sample_adjoint, GradResult, ImageTensor, SamplingGrid};
use crate::warp::{
    composite, composite_adjoint, sticker_grid, AffinePhotometric, FaceTransformParams, MaskSpec, NoiseSpec,
    ParabolicWarp, RenderOp, StickerTransformParams,
};

pub const CHECK_NAMES: [&str; 10] = [
    "bilinear_sample",
    "parabolic_warp",
    "sticker_warp",
    "composite",
    "affine_photometric",
    "d2p_mapper",
    "render",
    "embedding_loss",
    "tv_loss",
    "weighted_objective",
];

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub coords: usize,
}

fn random_image(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.05..0.95))
}

fn sticker_params(rng: &mut ChaCha8Rng) -> StickerTransformParams {
    StickerTransformParams {
        parabolic_angle: rng.random_range(-2.0..2.0),
        parabolic_rate: rng.random_range(-2e-4..2e-4),
        rotation: rng.random_range(-1.0..1.0),
        translation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
    }
}

fn face_params(rng: &mut ChaCha8Rng) -> FaceTransformParams {
    FaceTransformParams {
        rotation: rng.random_range(-3.0..3.0),
        scale: rng.random_range(0.94..1.06),
        translation: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        contrast: rng.random_range(0.5..1.1),
        brightness: rng.random_range(0.05..0.1),
    }
}

/// Random image whose mapped colours stay clear of the output clamp, so the
/// finite differences never straddle a kink.
fn interior_colours(mapper: &D2PMapper, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    let mut img = ImageTensor::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            for _ in 0..1000 {
                let px = random_image(1, 1, 3, rng);
                let out = mapper.apply(&px)?;
                if out.data().iter().all(|v| (0.01..=0.99).contains(v)) {
                    for c in 0..3 {
                        img.set(y, x, c, px.at(0, 0, c));
                    }
                    break;
                }
            }
        }
    }
    Ok(img)
}

struct GridOp(SamplingGrid, usize, usize);

impl ImageOp for GridOp {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        Ok(bilinear_sample(input, &self.0))
    }
    fn adjoint(&self, _: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        bilinear_sample_adjoint(upstream, &self.0, self.1, self.2)
    }
}

struct CompositeOp {
    face: ImageTensor,
    mask: ImageTensor,
}

impl ImageOp for CompositeOp {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        composite(&self.face, input, &self.mask)
    }
    fn adjoint(&self, _: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        Ok(composite_adjoint(&self.mask, upstream)?.1)
    }
}

struct MapperOp(D2PMapper);

impl ImageOp for MapperOp {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor> {
        self.0.apply(input)
    }
    fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor> {
        self.0.apply_with_tape(input)?.1.backward(upstream)
    }
}

fn check<O: Objective>(obj: &O, input: &ImageTensor, seed: u64) -> Result<GradCheckReport> {
    grad_check_report(obj, input, MIN_COORDS, seed)
}

/// Runs one named check with inputs drawn from `seed`.
pub fn run_check(name: &str, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe_seed = seed ^ 0xa5a5;
    match name {
        "bilinear_sample" => {
            let src = random_image(9, 11, 3, &mut rng);
            let grid = SamplingGrid::from_fn(8, 10, |_, _| [rng.random_range(-1.5..11.5), rng.random_range(-1.5..9.5)]);
            let obj = Projected::random(GridOp(grid, 9, 11), (8, 10, 3), seed);
            check(&obj, &src, probe_seed)
        }
        "parabolic_warp" => {
            let img = random_image(12, 30, 3, &mut rng);
            let op = ParabolicWarp {
                angle: rng.random_range(-2.0..2.0),
                rate: rng.random_range(-2e-3..2e-3),
            };
            check(&Projected::random(op, (12, 30, 3), seed), &img, probe_seed)
        }
        "sticker_warp" => {
            let spec = MaskSpec::forehead(40, 40, 12, 30)?;
            let grid = sticker_grid(&spec, &sticker_params(&mut rng))?;
            let img = random_image(12, 30, 3, &mut rng);
            check(&Projected::random(GridOp(grid, 12, 30), (40, 40, 3), seed), &img, probe_seed)
        }
        "composite" => {
            let op = CompositeOp {
                face: random_image(10, 10, 3, &mut rng),
                mask: random_image(10, 10, 1, &mut rng),
            };
            let s = random_image(10, 10, 3, &mut rng);
            check(&Projected::random(op, (10, 10, 3), seed), &s, probe_seed)
        }
        "affine_photometric" => {
            let img = random_image(16, 16, 3, &mut rng);
            let op = AffinePhotometric(face_params(&mut rng));
            check(&Projected::random(op, (16, 16, 3), seed), &img, probe_seed)
        }
        "d2p_mapper" => {
            let mapper = D2PMapper::random(16, seed);
            let img = interior_colours(&mapper, 6, 6, &mut rng)?;
            check(&Projected::random(MapperOp(mapper), (6, 6, 3), seed), &img, probe_seed)
        }
        "render" => {
            let spec = MaskSpec::forehead(48, 48, 12, 30)?;
            let face = random_image(48, 48, 3, &mut rng);
            let mapper = D2PMapper::random(16, seed);
            let op = RenderOp {
                face: &face,
                placement: spec,
                ta: sticker_params(&mut rng),
                tb: face_params(&mut rng),
                noise: NoiseSpec {
                    mean: 0.0,
                    stddev: 0.02,
                    seed,
                },
                mapper: Some(&mapper),
            };
            let s = random_image(12, 30, 3, &mut rng);
            check(&Projected::random(op, (48, 48, 3), seed), &s, probe_seed)
        }
        "embedding_loss" => {
            let model = EmbeddingModel::toy(seed, 32, 8)?;
            let anchor = model.embed(&random_image(32, 32, 3, &mut rng))?;
            let mode = if seed.is_multiple_of(2) {
                AttackMode::Dodging
            } else {
                AttackMode::Impersonation
            };
            let obj = |x: &ImageTensor| -> Result<GradResult> {
                let tape = model.embed_with_tape(x)?;
                let (value, d_emb) = attack_loss_grad(mode, tape.embedding(), &anchor)?;
                Ok(GradResult {
                    value,
                    grad: tape.backward(&d_emb)?,
                })
            };
            check(&obj, &random_image(32, 32, 3, &mut rng), probe_seed)
        }
        "tv_loss" => {
            let img = random_image(7, 9, 3, &mut rng);
            check(&|x: &ImageTensor| Ok(tv_loss_grad(x)), &img, probe_seed)
        }
        "weighted_objective" => full_chain(seed, &mut rng, probe_seed),
        other => Err(crate::error::Error::Parameter(format!("unknown check {other:?}"))),
    }
}

/// Weighted expected loss plus TV through D2P, both warps, noise and the
/// embedder, at the default face and sticker geometry.
fn full_chain(seed: u64, rng: &mut ChaCha8Rng, probe_seed: u64) -> Result<GradCheckReport> {
    let model = EmbeddingModel::toy(seed, 112, 64)?;
    let faces = procedural_identity(seed, 4, 112);
    let anchor = model.embed(&faces[0])?;
    let ctx = AttackContext {
        model,
        faces,
        anchor,
        mode: AttackMode::Dodging,
        placement: MaskSpec::forehead(112, 112, 40, 90)?,
        mapper: Some(D2PMapper::random(16, seed)),
        noise_mean: 0.0,
        noise_stddev: 0.02,
    };
    let pool = TransformSet::sample(
        4,
        4,
        FaceChoice::All,
        &StickerTransformRanges::default(),
        &FaceTransformRanges::default(),
        21,
        seed,
    )?;
    let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
    let sticker = random_image(40, 90, 3, rng);
    let obj = |x: &ImageTensor| eot_loss_and_grad(x, &pool.samples, Some(&weights), &ctx, 1e-3);
    check(&obj, &sticker, probe_seed)
}

/// Every check on every seed in `seeds`.
pub fn run_all(seeds: impl IntoIterator<Item = u64> + Clone) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for name in CHECK_NAMES {
        for seed in seeds.clone() {
            let r = run_check(name, seed)?;
            rows.push(CheckRow {
                check: name.to_string(),
                seed,
                max_rel_error: r.max_rel_error,
                coords: r.coords_checked,
            });
        }
    }
    Ok(rows)
}
