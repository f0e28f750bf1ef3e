//! Config-driven runs: context construction, optimisation, held-out
//! evaluation and artifact emission, plus ablation suites over one axis.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{
    run_caa, run_eot, tv_loss, AttackContext, AttackOutcome, FaceChoice, RunSettings, TransformSample,
    TransformSet,
};
use crate::config::{Algorithm, D2PMode, FaceSource, RunConfig, CONFIG_ECHO};
use crate::d2p::{
    extract_palette_from_photo, image_metrics, make_digital_palette, palette_image, simulate_channel, train_d2p, ChannelParams,
    D2PMapper,
};
use crate::embedding::{loss_from_cosine, AttackMode, EmbeddingModel};
use crate::error::{Error, Result};
use crate::faces::{procedural_face, procedural_identity};
use crate::io::{self, Series};
use crate::tensor::ImageTensor;

pub const TRACE_CSV: &str = "trace.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const STICKER_PNG: &str = "sticker.png";
pub const PLOT_SVG: &str = "plot.svg";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Everything sampled or trained before optimisation starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ctx: AttackContext,
    pub train: TransformSet,
    pub heldout: TransformSet,
    /// Final training MSE of the colour mapper, when one was trained.
    pub d2p_fit_mse: Option<f64>,
}

impl Prepared {
    /// Leading training samples whose mean loss is traced.
    pub fn trace_pool<'a>(&'a self, cfg: &RunConfig) -> &'a [TransformSample] {
        &self.train.samples[..cfg.sampling.trace_pool]
    }
}

/// Trains a colour mapper on the palette photographed through the
/// simulated channel.
pub fn train_mapper_on_channel(cfg: &RunConfig) -> Result<(D2PMapper, f64)> {
    let digital = make_digital_palette();
    let photo = simulate_channel(&palette_image(&digital)?, &cfg.channel, cfg.seeds.channel)?;
    let physical = extract_palette_from_photo(&photo)?;
    let outcome = train_d2p(&digital, &physical, &cfg.d2p.train)?;
    Ok((outcome.mapper, outcome.final_mse))
}

fn load_model(cfg: &RunConfig) -> Result<EmbeddingModel> {
    let model = match &cfg.model.weights {
        Some(p) => EmbeddingModel::read_from(std::io::BufReader::new(fs::File::open(p)?))?,
        None => EmbeddingModel::toy(cfg.seeds.model, cfg.geometry.face_size, cfg.model.embedding_dim)?,
    };
    if model.input_size() != cfg.geometry.face_size {
        return Err(Error::config(
            "model.weights",
            format!("model input {} != geometry.face_size {}", model.input_size(), cfg.geometry.face_size),
        ));
    }
    Ok(model)
}

/// Attacker faces and the anchor image.
fn load_faces(cfg: &RunConfig) -> Result<(Vec<ImageTensor>, ImageTensor)> {
    let size = cfg.geometry.face_size;
    let faces = match cfg.faces.source {
        FaceSource::Procedural => procedural_identity(cfg.faces.identity, cfg.faces.variants, size),
        FaceSource::Directory => {
            let dir = cfg.faces.directory.as_ref().expect("validated");
            io::load_face_directory(dir, size)?
        }
    };
    let anchor = match cfg.run.mode {
        AttackMode::Dodging => faces[0].clone(),
        AttackMode::Impersonation => match cfg.faces.source {
            FaceSource::Procedural => procedural_face(cfg.faces.victim, 0, size),
            FaceSource::Directory => io::load_face(cfg.faces.victim_image.as_ref().expect("validated"), size)?,
        },
    };
    Ok((faces, anchor))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let model = load_model(cfg)?;
    let (faces, anchor_img) = load_faces(cfg)?;
    let anchor = model.embed(&anchor_img)?;
    let (mapper, d2p_fit_mse) = match cfg.d2p.mode {
        D2PMode::Off => (None, None),
        D2PMode::Load => {
            let p = cfg.d2p.path.as_ref().expect("validated");
            (Some(D2PMapper::read_from(std::io::BufReader::new(fs::File::open(p)?))?), None)
        }
        D2PMode::Train => {
            let (m, mse) = train_mapper_on_channel(cfg)?;
            if let Some(p) = &cfg.d2p.path {
                m.write_to(std::io::BufWriter::new(fs::File::create(p)?))?;
            }
            (Some(m), Some(mse))
        }
    };
    let s = &cfg.sampling;
    let train_faces = if s.train_face_variations {
        FaceChoice::All
    } else {
        FaceChoice::Only(0)
    };
    let train_ranges = if s.train_photometric {
        cfg.face_transform.clone()
    } else {
        cfg.face_transform.without_photometric()
    };
    let train = TransformSet::sample(
        s.train_pool,
        faces.len(),
        train_faces,
        &cfg.sticker_transform,
        &train_ranges,
        s.grid_levels,
        cfg.seeds.train_pool,
    )?;
    let heldout = TransformSet::sample(
        s.heldout_pool,
        faces.len(),
        FaceChoice::All,
        &cfg.sticker_transform,
        &cfg.face_transform,
        s.grid_levels,
        cfg.seeds.heldout_pool,
    )?;
    let ctx = AttackContext {
        model,
        faces,
        anchor,
        mode: cfg.run.mode,
        placement: cfg.geometry.placement()?,
        mapper,
        noise_mean: cfg.noise.mean,
        noise_stddev: cfg.noise.stddev,
    };
    Ok(Prepared {
        ctx,
        train,
        heldout,
        d2p_fit_mse,
    })
}

pub fn run_settings(cfg: &RunConfig) -> RunSettings {
    RunSettings {
        optimizer: cfg.optimizer.clone(),
        eval_interval: cfg.run.eval_interval,
        batch_seed: cfg.seeds.batch,
        init_seed: cfg.seeds.init,
    }
}

/// Runs the configured optimiser on a prepared context.
pub fn optimize(
    cfg: &RunConfig,
    prep: &Prepared,
    observer: &mut crate::attack::Observer<'_>,
) -> Result<AttackOutcome> {
    let settings = run_settings(cfg);
    let trace_pool = prep.trace_pool(cfg);
    match cfg.run.algorithm {
        Algorithm::Eot => run_eot(
            cfg.total_iterations(),
            &settings,
            &prep.ctx,
            &prep.train,
            trace_pool,
            observer,
        ),
        Algorithm::Caa => run_caa(&cfg.schedule, &settings, &prep.ctx, &prep.train, trace_pool, observer),
    }
}

/// Image metrics of raw and mapped versions of one sticker against its
/// channel output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub sticker: usize,
    pub raw_mse: f64,
    pub raw_psnr: f64,
    pub raw_mssim: f64,
    pub mapped_mse: f64,
    pub mapped_psnr: f64,
    pub mapped_mssim: f64,
}

impl FidelityRow {
    /// Mapped output is strictly closer to the channel on every metric.
    pub fn mapped_is_closer(&self) -> bool {
        self.mapped_mse < self.raw_mse && self.mapped_psnr > self.raw_psnr && self.mapped_mssim > self.raw_mssim
    }
}

/// Compares `count` seeded random stickers of size `height`×`width`.
pub fn d2p_fidelity(
    mapper: &D2PMapper,
    channel: &ChannelParams,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<FidelityRow>> {
    (0..count)
        .map(|i| {
            let sticker = random_sticker(height, width, seed.wrapping_add(i as u64));
            let physical = simulate_channel(&sticker, channel, seed.wrapping_add(i as u64))?;
            let raw = image_metrics(&sticker, &physical)?;
            let mapped = image_metrics(&mapper.apply(&sticker)?, &physical)?;
            Ok(FidelityRow {
                sticker: i,
                raw_mse: raw.mse,
                raw_psnr: raw.psnr,
                raw_mssim: raw.mssim,
                mapped_mse: mapped.mse,
                mapped_psnr: mapped.psnr,
                mapped_mssim: mapped.mssim,
            })
        })
        .collect()
}

/// Smooth random colour field with a little per-pixel texture.
fn random_sticker(height: usize, width: usize, seed: u64) -> ImageTensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let corners: Vec<[f64; 3]> = (0..4).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut img = ImageTensor::zeros(height, width, 3);
    for y in 0..height {
        let v = y as f64 / (height.max(2) - 1) as f64;
        for x in 0..width {
            let u = x as f64 / (width.max(2) - 1) as f64;
            for c in 0..3 {
                let base = (1.0 - v) * ((1.0 - u) * corners[0][c] + u * corners[1][c])
                    + v * ((1.0 - u) * corners[2][c] + u * corners[3][c]);
                img.set(y, x, c, (base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// The sticker as it reaches the face: through the simulated channel when
/// given, otherwise through the pipeline's own colour stage.
pub fn deployed_sticker(
    ctx: &AttackContext,
    sticker: &ImageTensor,
    channel: Option<(&ChannelParams, u64)>,
) -> Result<ImageTensor> {
    match channel {
        Some((params, seed)) => simulate_channel(sticker, params, seed),
        None => Ok(ctx.map_sticker(sticker)?.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample: usize,
    pub face_index: usize,
    pub cos_benign: f64,
    pub cos_adv_initial: f64,
    pub cos_adv: f64,
    pub loss_initial: f64,
    pub loss_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: AttackMode,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub d2p: bool,
    pub channel_evaluation: bool,
    pub heldout_samples: usize,
    pub mean_cos_benign: f64,
    pub mean_cos_adv_initial: f64,
    pub mean_cos_adv: f64,
    pub mean_loss_initial: f64,
    pub mean_loss_final: f64,
    /// `1 - final / initial` of the held-out mean loss.
    pub loss_reduction: f64,
    pub trace_loss_initial: Option<f64>,
    pub trace_loss_final: Option<f64>,
    pub final_tv: f64,
    pub d2p_fit_mse: Option<f64>,
}

/// Fields of a summary that are not aggregates of the report rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFacts {
    pub mode: AttackMode,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub d2p: bool,
    pub channel_evaluation: bool,
    pub trace_loss_initial: Option<f64>,
    pub trace_loss_final: Option<f64>,
    pub final_tv: f64,
    pub d2p_fit_mse: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Summary {
    pub fn from_rows(facts: &RunFacts, rows: &[ReportRow]) -> Self {
        let mean_loss_initial = mean(rows.iter().map(|r| r.loss_initial));
        let mean_loss_final = mean(rows.iter().map(|r| r.loss_final));
        Self {
            mode: facts.mode,
            algorithm: facts.algorithm,
            iterations: facts.iterations,
            d2p: facts.d2p,
            channel_evaluation: facts.channel_evaluation,
            heldout_samples: rows.len(),
            mean_cos_benign: mean(rows.iter().map(|r| r.cos_benign)),
            mean_cos_adv_initial: mean(rows.iter().map(|r| r.cos_adv_initial)),
            mean_cos_adv: mean(rows.iter().map(|r| r.cos_adv)),
            mean_loss_initial,
            mean_loss_final,
            loss_reduction: 1.0 - mean_loss_final / mean_loss_initial,
            trace_loss_initial: facts.trace_loss_initial,
            trace_loss_final: facts.trace_loss_final,
            final_tv: facts.final_tv,
            d2p_fit_mse: facts.d2p_fit_mse,
        }
    }

    pub fn facts(&self) -> RunFacts {
        RunFacts {
            mode: self.mode,
            algorithm: self.algorithm,
            iterations: self.iterations,
            d2p: self.d2p,
            channel_evaluation: self.channel_evaluation,
            trace_loss_initial: self.trace_loss_initial,
            trace_loss_final: self.trace_loss_final,
            final_tv: self.final_tv,
            d2p_fit_mse: self.d2p_fit_mse,
        }
    }
}

/// Held-out comparison of the initial and the optimised sticker.
pub fn evaluate(
    ctx: &AttackContext,
    heldout: &[TransformSample],
    initial: &ImageTensor,
    fin: &ImageTensor,
    channel: Option<(&ChannelParams, u64)>,
) -> Result<Vec<ReportRow>> {
    let before = deployed_sticker(ctx, initial, channel)?;
    let after = deployed_sticker(ctx, fin, channel)?;
    heldout
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let cos_benign = ctx.benign_cosine(k)?;
            let cos_adv_initial = ctx.adversarial_cosine(&before, k)?;
            let cos_adv = ctx.adversarial_cosine(&after, k)?;
            Ok(ReportRow {
                sample: i,
                face_index: k.face_index,
                cos_benign,
                cos_adv_initial,
                cos_adv,
                loss_initial: loss_from_cosine(ctx.mode, cos_adv_initial),
                loss_final: loss_from_cosine(ctx.mode, cos_adv),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub output_dir: PathBuf,
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
    pub outcome: AttackOutcome,
}

/// The configured directory, or its next unused `v<N>` subdirectory.
pub fn resolve_output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let base = &cfg.run.output_dir;
    let dir = if cfg.run.versioned {
        (1..)
            .map(|n| base.join(format!("v{n}")))
            .find(|p| !p.exists())
            .expect("unbounded range")
    } else {
        base.clone()
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn trace_plot(series: &[(String, &crate::attack::ConvergenceTrace)], title: &str) -> String {
    let series: Vec<Series> = series
        .iter()
        .map(|(label, t)| Series {
            label: label.clone(),
            points: t.pool_points().into_iter().map(|(i, l)| (i as f64, l)).collect(),
        })
        .collect();
    io::line_plot_svg(title, "iteration", "mean pool loss", &series)
}

/// Runs one configured experiment and writes its artifacts.
pub fn run_experiment(cfg: &RunConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let dir = resolve_output_dir(cfg).map_err(|e| e.in_stage("output"))?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml_string()?).map_err(|e| Error::from(e).in_stage("output"))?;
    let prep = prepare(cfg).map_err(|e| e.in_stage("prepare"))?;

    let snapshot_error = RefCell::new(None);
    let snapshots = dir.join("snapshots");
    let interval = cfg.run.snapshot_interval;
    if interval > 0 {
        fs::create_dir_all(&snapshots).map_err(|e| Error::from(e).in_stage("output"))?;
    }
    let mut observer = |iter: usize, sticker: &ImageTensor| {
        if interval > 0 && iter.is_multiple_of(interval) && snapshot_error.borrow().is_none() {
            if let Err(e) = io::write_image(&snapshots.join(format!("iter_{iter:06}.png")), sticker) {
                *snapshot_error.borrow_mut() = Some(e);
            }
        }
    };
    let outcome = optimize(cfg, &prep, &mut observer).map_err(|e| e.in_stage("optimize"))?;
    if let Some(e) = snapshot_error.into_inner() {
        return Err(e.in_stage("snapshot"));
    }

    let channel = cfg.run.evaluate_with_channel.then_some((&cfg.channel, cfg.seeds.channel));
    let placement = prep.ctx.placement;
    let initial = crate::attack::initial_sticker(placement.sticker_height, placement.sticker_width, cfg.seeds.init);
    let rows = evaluate(&prep.ctx, &prep.heldout.samples, &initial, &outcome.sticker, channel)
        .map_err(|e| e.in_stage("evaluate"))?;
    let facts = RunFacts {
        mode: cfg.run.mode,
        algorithm: cfg.run.algorithm,
        iterations: outcome.trace.len(),
        d2p: prep.ctx.mapper.is_some(),
        channel_evaluation: channel.is_some(),
        trace_loss_initial: outcome.initial_pool_loss,
        trace_loss_final: outcome.trace.final_pool_loss(),
        final_tv: tv_loss(&outcome.sticker),
        d2p_fit_mse: prep.d2p_fit_mse,
    };
    let summary = Summary::from_rows(&facts, &rows);

    let write = || -> Result<()> {
        fs::write(dir.join(TRACE_CSV), outcome.trace.to_csv())?;
        io::write_csv(&dir.join(REPORT_CSV), &rows)?;
        io::write_csv(&dir.join(SUMMARY_CSV), std::slice::from_ref(&summary))?;
        io::write_image(&dir.join(STICKER_PNG), &outcome.sticker)?;
        let label = format!("{:?}", cfg.run.algorithm).to_lowercase();
        fs::write(
            dir.join(PLOT_SVG),
            trace_plot(&[(label, &outcome.trace)], "pool loss vs iteration"),
        )?;
        Ok(())
    };
    write().map_err(|e| e.in_stage("output"))?;
    Ok(EvaluationReport {
        output_dir: dir,
        rows,
        summary,
        outcome,
    })
}

/// Re-aggregates a run directory's report rows into its summary.
pub fn reaggregate(dir: &Path) -> Result<Summary> {
    let rows: Vec<ReportRow> = io::read_csv(&dir.join(REPORT_CSV))?;
    let old: Vec<Summary> = io::read_csv(&dir.join(SUMMARY_CSV))?;
    let facts = old
        .first()
        .ok_or_else(|| Error::Format(format!("{}: empty summary", dir.display())))?
        .facts();
    Ok(Summary::from_rows(&facts, &rows))
}

/// The single setting an ablation suite varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    /// Colour mapper on vs off, both evaluated through the channel.
    D2p,
    /// Curriculum vs plain EOT at the same iteration budget.
    Optimizer,
    /// Training pool with vs without face and photometric variation.
    Variation,
}

impl AblationAxis {
    /// Variant label of a config along this axis.
    pub fn label(&self, cfg: &RunConfig) -> String {
        match self {
            AblationAxis::D2p => match cfg.d2p.mode {
                D2PMode::Off => "d2p-off".into(),
                _ => "d2p-on".into(),
            },
            AblationAxis::Optimizer => format!("{:?}", cfg.run.algorithm).to_lowercase(),
            AblationAxis::Variation => match (cfg.sampling.train_face_variations, cfg.sampling.train_photometric) {
                (true, true) => "full".into(),
                (false, false) => "basic".into(),
                (f, p) => format!("faces-{f}-photometric-{p}"),
            },
        }
    }

    /// Copy with the axis, replicate seeds and output location neutralised.
    fn neutral(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        let base = RunConfig::default();
        c.run.output_dir = base.run.output_dir.clone();
        c.run.versioned = false;
        c.seeds = base.seeds.clone();
        c.model.weights = None;
        match self {
            AblationAxis::D2p => c.d2p = base.d2p,
            AblationAxis::Optimizer => {
                c.run.algorithm = base.run.algorithm;
                c.run.iterations = None;
            }
            AblationAxis::Variation => {
                c.sampling.train_face_variations = true;
                c.sampling.train_photometric = true;
            }
        }
        c
    }

    /// Configs for every variant of this axis, replicated over seed sets.
    pub fn configs(&self, base: &RunConfig, replicates: usize, out_dir: &Path) -> Vec<RunConfig> {
        let variants: Vec<Box<dyn Fn(&mut RunConfig)>> = match self {
            AblationAxis::D2p => vec![
                Box::new(|c| c.d2p.mode = D2PMode::Train),
                Box::new(|c| c.d2p.mode = D2PMode::Off),
            ],
            AblationAxis::Optimizer => vec![
                Box::new(|c| {
                    c.run.algorithm = Algorithm::Caa;
                    c.run.iterations = None;
                }),
                Box::new(|c| {
                    c.run.iterations = Some(c.schedule.total_epochs());
                    c.run.algorithm = Algorithm::Eot;
                }),
            ],
            AblationAxis::Variation => vec![
                Box::new(|c| {
                    c.sampling.train_face_variations = true;
                    c.sampling.train_photometric = true;
                }),
                Box::new(|c| {
                    c.sampling.train_face_variations = false;
                    c.sampling.train_photometric = false;
                }),
            ],
        };
        let mut out = Vec::new();
        for r in 0..replicates {
            for v in &variants {
                let mut c = base.clone();
                v(&mut c);
                if *self == AblationAxis::D2p {
                    c.run.evaluate_with_channel = true;
                    c.d2p.path = None;
                }
                let bump = 1000 * r as u64;
                c.seeds.train_pool += bump;
                c.seeds.heldout_pool += bump;
                c.seeds.init += bump;
                c.seeds.batch += bump;
                c.seeds.model += bump;
                c.seeds.channel += bump;
                c.run.versioned = false;
                c.run.output_dir = out_dir.join(format!("{}-r{r}", self.label(&c)));
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub axis: AblationAxis,
    pub variant: String,
    pub runs: usize,
    /// Median held-out mean loss of the final sticker.
    pub median_heldout_loss: f64,
    pub median_heldout_loss_initial: f64,
    pub median_trace_final: Option<f64>,
    /// Median over runs of the mean traced loss in the first 10% of iterations.
    pub median_trace_early: Option<f64>,
    pub mean_cos_benign: f64,
    pub median_cos_adv: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Checks that the configs differ only along `axis` (and in replicate
/// seeds/output paths), that replicates share seeds across variants, and
/// that the axis-specific preconditions hold.
pub fn check_suite(axis: AblationAxis, cfgs: &[RunConfig]) -> Result<()> {
    let first = cfgs.first().ok_or_else(|| Error::Suite("no configs".into()))?;
    let reference = axis.neutral(first);
    for (i, c) in cfgs.iter().enumerate() {
        if axis.neutral(c) != reference {
            return Err(Error::Suite(format!(
                "config {i} differs from config 0 outside the {axis:?} axis"
            )));
        }
        if axis == AblationAxis::D2p && !c.run.evaluate_with_channel {
            return Err(Error::Suite(format!(
                "config {i}: the d2p ablation evaluates through the channel; set run.evaluate_with_channel"
            )));
        }
        if c.total_iterations() != first.total_iterations() {
            return Err(Error::Suite(format!("config {i} has a different iteration budget")));
        }
    }
    let mut labels: Vec<String> = cfgs.iter().map(|c| axis.label(c)).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Suite(format!("all configs are the same {axis:?} variant")));
    }
    let seeds_of = |l: &str| {
        let mut s: Vec<String> = cfgs
            .iter()
            .filter(|c| axis.label(c) == l)
            .map(|c| format!("{:?}", c.seeds))
            .collect();
        s.sort();
        s
    };
    let reference_seeds = seeds_of(&labels[0]);
    for l in &labels[1..] {
        if seeds_of(l) != reference_seeds {
            return Err(Error::Suite(format!("variant {l} does not share seeds with {}", labels[0])));
        }
    }
    let mut dirs: Vec<&PathBuf> = cfgs.iter().map(|c| &c.run.output_dir).collect();
    dirs.sort();
    dirs.dedup();
    if dirs.len() != cfgs.len() {
        return Err(Error::Suite("runs must have distinct output directories".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<(String, EvaluationReport)>,
}

/// Runs every config and writes an aligned comparison table and plot.
pub fn run_ablation_suite(axis: AblationAxis, cfgs: &[RunConfig], out_dir: &Path) -> Result<SuiteResult> {
    check_suite(axis, cfgs)?;
    fs::create_dir_all(out_dir)?;
    let mut reports = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        reports.push((axis.label(c), run_experiment(c)?));
    }
    let mut labels: Vec<String> = reports.iter().map(|r| r.0.clone()).collect();
    labels.dedup();
    let mut seen = Vec::new();
    for l in labels {
        if !seen.contains(&l) {
            seen.push(l);
        }
    }
    let rows: Vec<ComparisonRow> = seen
        .iter()
        .map(|label| {
            let group: Vec<&EvaluationReport> = reports.iter().filter(|r| &r.0 == label).map(|r| &r.1).collect();
            let col = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| f(r)).collect()
            };
            ComparisonRow {
                axis,
                variant: label.clone(),
                runs: group.len(),
                median_heldout_loss: median(&col(&|r| Some(r.summary.mean_loss_final))).unwrap_or(f64::NAN),
                median_heldout_loss_initial: median(&col(&|r| Some(r.summary.mean_loss_initial)))
                    .unwrap_or(f64::NAN),
                median_trace_final: median(&col(&|r| r.summary.trace_loss_final)),
                median_trace_early: median(&col(&|r| r.outcome.trace.early_pool_loss(0.1))),
                mean_cos_benign: mean(group.iter().map(|r| r.summary.mean_cos_benign)),
                median_cos_adv: median(&col(&|r| Some(r.summary.mean_cos_adv))).unwrap_or(f64::NAN),
            }
        })
        .collect();
    io::write_csv(&out_dir.join(COMPARISON_CSV), &rows)?;
    let traces: Vec<(String, &crate::attack::ConvergenceTrace)> = reports
        .iter()
        .map(|(l, r)| {
            let name = r.output_dir.file_name().map(|n| n.to_string_lossy().into_owned());
            (name.unwrap_or_else(|| l.clone()), &r.outcome.trace)
        })
        .collect();
    fs::write(
        out_dir.join(PLOT_SVG),
        trace_plot(&traces, &format!("{axis:?} ablation: pool loss vs iteration")),
    )?;
    Ok(SuiteResult { rows, reports })
}
