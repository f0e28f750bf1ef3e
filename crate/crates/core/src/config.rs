//! Experiment configuration: a sectioned TOML file whose every key has a
//! default, so an empty file is a valid configuration.
//!
//! The `[seeds]` section is all-or-nothing: leaving it out uses the default
//! seed set, but a partial section is rejected so that no stochastic stage
//! silently falls back to a default seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{CurriculumSchedule, FaceTransformRanges, OptimizerSettings, StickerTransformRanges};
use crate::d2p::{ChannelParams, TrainConfig};
use crate::embedding::AttackMode;
use crate::error::{Error, Result};
use crate::warp::MaskSpec;

/// File name of the resolved configuration written into each run directory.
pub const CONFIG_ECHO: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Eot,
    Caa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: AttackMode,
    pub algorithm: Algorithm,
    /// Iteration budget for EOT; defaults to the schedule's total.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub output_dir: PathBuf,
    /// Write into a fresh `v<N>` subdirectory instead of overwriting.
    pub versioned: bool,
    /// Pool-loss evaluation period for the convergence trace.
    pub eval_interval: usize,
    /// Save the sticker every this many iterations (0 disables).
    pub snapshot_interval: usize,
    /// Pass the final sticker through the simulated channel before the
    /// held-out evaluation.
    pub evaluate_with_channel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: AttackMode::Dodging,
            algorithm: Algorithm::Caa,
            iterations: None,
            output_dir: PathBuf::from("runs/default"),
            versioned: false,
            eval_interval: 100,
            snapshot_interval: 0,
            evaluate_with_channel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub mean: f64,
    pub stddev: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            mean: 0.0,
            stddev: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    /// Equally spaced levels per transformation parameter.
    pub grid_levels: usize,
    pub train_pool: usize,
    /// Leading training-pool samples whose mean loss is traced.
    pub trace_pool: usize,
    pub heldout_pool: usize,
    /// Train on every face variant (otherwise only the neutral face).
    pub train_face_variations: bool,
    /// Train with contrast/brightness jitter (otherwise pose only).
    pub train_photometric: bool,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            grid_levels: 21,
            train_pool: 1000,
            trace_pool: 400,
            heldout_pool: 400,
            train_face_variations: true,
            train_photometric: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Toy embedder weights.
    pub model: u64,
    /// Training transformation pool.
    pub train_pool: u64,
    /// Held-out evaluation pool; must differ from `train_pool`.
    pub heldout_pool: u64,
    /// Initial sticker.
    pub init: u64,
    /// Minibatch order.
    pub batch: u64,
    /// Simulated printer/camera noise.
    pub channel: u64,
}

impl Seeds {
    pub const KEYS: [&'static str; 6] = ["model", "train_pool", "heldout_pool", "init", "batch", "channel"];
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            model: 1,
            train_pool: 101,
            heldout_pool: 202,
            init: 303,
            batch: 404,
            channel: 505,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub face_size: usize,
    pub sticker_height: usize,
    pub sticker_width: usize,
    /// Sticker top-left corner; forehead placement when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            face_size: 112,
            sticker_height: 40,
            sticker_width: 90,
            top: None,
            left: None,
        }
    }
}

impl Geometry {
    pub fn placement(&self) -> Result<MaskSpec> {
        let spec = match (self.top, self.left) {
            (None, None) => MaskSpec::forehead(self.face_size, self.face_size, self.sticker_height, self.sticker_width)
                .map_err(|e| Error::config("geometry", e.to_string()))?,
            (Some(top), Some(left)) => MaskSpec {
                sticker_height: self.sticker_height,
                sticker_width: self.sticker_width,
                top,
                left,
                face_height: self.face_size,
                face_width: self.face_size,
            },
            _ => return Err(Error::config("geometry.top", "top and left must be given together")),
        };
        spec.validate().map_err(|e| Error::config("geometry", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceSource {
    Procedural,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FacesSection {
    pub source: FaceSource,
    /// Attacker images when `source = "directory"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Impersonation target image when `source = "directory"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub victim_image: Option<PathBuf>,
    /// Seed of the procedural attacker identity.
    pub identity: u64,
    /// Seed of the procedural impersonation target.
    pub victim: u64,
    /// Procedural expression/pose variants of the attacker.
    pub variants: usize,
}

impl Default for FacesSection {
    fn default() -> Self {
        Self {
            source: FaceSource::Procedural,
            directory: None,
            victim_image: None,
            identity: 7,
            victim: 8,
            variants: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embedding_dim: usize,
    /// Saved embedder weights; the seeded toy model when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum D2PMode {
    Off,
    Train,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct D2PSection {
    pub mode: D2PMode,
    /// Weights to load (`load`) or to save after training (`train`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for D2PSection {
    fn default() -> Self {
        Self {
            mode: D2PMode::Off,
            path: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub schedule: CurriculumSchedule,
    pub optimizer: OptimizerSettings,
    pub sticker_transform: StickerTransformRanges,
    pub face_transform: FaceTransformRanges,
    pub noise: NoiseSection,
    pub sampling: SamplingSection,
    pub seeds: Seeds,
    pub geometry: Geometry,
    pub faces: FacesSection,
    pub model: ModelSection,
    pub d2p: D2PSection,
    pub channel: ChannelParams,
}

/// Keys that are valid but absent from the serialised defaults.
const OPTIONAL_KEYS: [&str; 7] = [
    "run.iterations",
    "geometry.top",
    "geometry.left",
    "faces.directory",
    "faces.victim_image",
    "model.weights",
    "d2p.path",
];

fn check_known_keys(user: &toml::Table, template: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match template.get(k) {
            Some(toml::Value::Table(t)) => match v {
                toml::Value::Table(u) => check_known_keys(u, t, &key)?,
                _ => return Err(Error::config(key, "expected a section")),
            },
            Some(_) => {}
            None if OPTIONAL_KEYS.contains(&key.as_str()) => {}
            None => return Err(Error::config(key, "unknown key")),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates configuration text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("syntax", e.message().to_string()))?;
        let template = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::config("defaults", e.to_string()))?;
        check_known_keys(&user, &template, "")?;
        if let Some(toml::Value::Table(seeds)) = user.get("seeds") {
            if let Some(missing) = Seeds::KEYS.iter().find(|k| !seeds.contains_key(**k)) {
                return Err(Error::config(format!("seeds.{missing}"), "missing seed"));
            }
        }
        let mut cfg = RunConfig::default();
        for (section, value) in user {
            let wrapped = toml::Table::from_iter([(section.clone(), value)]);
            let partial: PartialSection = wrapped
                .try_into()
                .map_err(|e: toml::de::Error| Error::config(section.clone(), e.message().to_string()))?;
            partial.apply(&mut cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as TOML; parsing it back yields `self`.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("echo", e.to_string()))
    }

    /// Iterations actually run by the configured algorithm.
    pub fn total_iterations(&self) -> usize {
        match self.run.algorithm {
            Algorithm::Eot => self.run.iterations.unwrap_or_else(|| self.schedule.total_epochs()),
            Algorithm::Caa => self.schedule.total_epochs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.sticker_transform.validate("sticker_transform")?;
        self.face_transform.validate("face_transform")?;
        if self.run.iterations == Some(0) {
            return Err(Error::config("run.iterations", "must be positive"));
        }
        if self.run.iterations.is_some() && self.run.algorithm == Algorithm::Caa {
            return Err(Error::config(
                "run.iterations",
                "only applies to eot; caa runs the schedule's epochs",
            ));
        }
        if !(self.noise.mean.is_finite() && self.noise.stddev >= 0.0 && self.noise.stddev.is_finite()) {
            return Err(Error::config("noise.stddev", "must be finite and non-negative"));
        }
        let s = &self.sampling;
        if s.grid_levels == 0 {
            return Err(Error::config("sampling.grid_levels", "must be positive"));
        }
        if s.train_pool == 0 {
            return Err(Error::config("sampling.train_pool", "must be positive"));
        }
        if s.heldout_pool == 0 {
            return Err(Error::config("sampling.heldout_pool", "must be positive"));
        }
        if s.trace_pool > s.train_pool {
            return Err(Error::config("sampling.trace_pool", "cannot exceed sampling.train_pool"));
        }
        if self.seeds.train_pool == self.seeds.heldout_pool {
            return Err(Error::config(
                "seeds.heldout_pool",
                "must differ from seeds.train_pool to keep the pools independent",
            ));
        }
        if self.geometry.face_size < 32 {
            return Err(Error::config("geometry.face_size", "must be at least 32"));
        }
        self.geometry.placement()?;
        match self.faces.source {
            FaceSource::Procedural => {
                if self.faces.variants == 0 {
                    return Err(Error::config("faces.variants", "must be positive"));
                }
                if self.run.mode == AttackMode::Impersonation && self.faces.identity == self.faces.victim {
                    return Err(Error::config("faces.victim", "must differ from faces.identity"));
                }
            }
            FaceSource::Directory => {
                if self.faces.directory.is_none() {
                    return Err(Error::config("faces.directory", "required when faces.source = \"directory\""));
                }
                if self.run.mode == AttackMode::Impersonation && self.faces.victim_image.is_none() {
                    return Err(Error::config("faces.victim_image", "required for impersonation"));
                }
            }
        }
        if self.model.embedding_dim == 0 {
            return Err(Error::config("model.embedding_dim", "must be positive"));
        }
        match self.d2p.mode {
            D2PMode::Load if self.d2p.path.is_none() => {
                return Err(Error::config("d2p.path", "required when d2p.mode = \"load\""));
            }
            _ => {}
        }
        let t = &self.d2p.train;
        if t.epochs == 0 {
            return Err(Error::config("d2p.train.epochs", "must be positive"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::config("d2p.train.learning_rate", "must be positive"));
        }
        if t.hidden == 0 {
            return Err(Error::config("d2p.train.hidden", "must be positive"));
        }
        if t.decay_points.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("d2p.train.decay_points", "fractions must lie in [0, 1]"));
        }
        self.channel
            .validate()
            .map_err(|e| Error::config("channel", e.to_string()))
    }
}

/// One deserialised top-level section, merged over the defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSection {
    run: Option<RunSection>,
    schedule: Option<CurriculumSchedule>,
    optimizer: Option<OptimizerSettings>,
    sticker_transform: Option<StickerTransformRanges>,
    face_transform: Option<FaceTransformRanges>,
    noise: Option<NoiseSection>,
    sampling: Option<SamplingSection>,
    seeds: Option<Seeds>,
    geometry: Option<Geometry>,
    faces: Option<FacesSection>,
    model: Option<ModelSection>,
    d2p: Option<D2PSection>,
    channel: Option<ChannelParams>,
}

impl PartialSection {
    fn apply(self, cfg: &mut RunConfig) {
        macro_rules! merge {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        merge!(
            run,
            schedule,
            optimizer,
            sticker_transform,
            face_transform,
            noise,
            sampling,
            seeds,
            geometry,
            faces,
            model,
            d2p,
            channel
        );
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("path", format!("{}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.sticker_transform.rotation.min, -1.0);
        assert_eq!(cfg.sticker_transform.rotation.max, 1.0);
        assert_eq!(cfg.face_transform.contrast.min, 0.5);
        assert_eq!(cfg.face_transform.contrast.max, 1.1);
        assert_eq!(cfg.sampling.grid_levels, 21);
        assert_eq!(cfg.optimizer.batch_size, 32);
    }

    #[test]
    fn reversed_range_names_key() {
        let err = RunConfig::from_toml_str("[sticker_transform]\nrotation = [3.0, -3.0]\n").unwrap_err();
        match err {
            Error::Config { key, message } => {
                assert_eq!(key, "sticker_transform.rotation");
                assert!(message.contains("min > max"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::from_toml_str("[run]\nitertions = 5\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "run.itertions"), "{err}");
        let err = RunConfig::from_toml_str("[nonsense]\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "nonsense"), "{err}");
    }

    #[test]
    fn partial_seed_section_reports_missing_seed() {
        let err = RunConfig::from_toml_str("[seeds]\nmodel = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "seeds.train_pool"), "{err}");
    }

    #[test]
    fn wrong_type_names_section() {
        let err = RunConfig::from_toml_str("[optimizer]\nlearning_rate = \"fast\"\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "optimizer"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let text = "[run]\nalgorithm = \"eot\"\niterations = 12\nmode = \"impersonation\"\n\
                    [geometry]\ntop = 3\nleft = 4\n[d2p]\nmode = \"train\"\n[d2p.train]\nepochs = 50\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.total_iterations(), 12);
        let echo = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&echo).unwrap(), cfg);
    }

    #[test]
    fn out_of_range_values() {
        for (text, key) in [
            ("[optimizer]\nmomentum = 1.5\n", "optimizer.momentum"),
            ("[schedule]\nbetas = [0.8, 0.5]\nepochs = [1, 1]\n", "schedule.betas"),
            ("[sampling]\ntrace_pool = 5000\n", "sampling.trace_pool"),
            ("[d2p]\nmode = \"load\"\n", "d2p.path"),
            ("[geometry]\nsticker_width = 500\n", "geometry"),
        ] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(matches!(err, Error::Config { key: ref k, .. } if k == key), "{text}: {err}");
        }
    }
}
