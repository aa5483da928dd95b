//! Experiment configuration: flat `key = value` files with `#` comments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::data::{SplitMode, SplitOptions, SyntheticWorldConfig};
use crate::losses::LossWeights;
use crate::model::ModelDims;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("key `{key}`: {rule}")]
    Constraint { key: String, rule: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    HydroDcm,
    Base,
    Oracle,
    FewShot,
    Dann,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Base, Mode::FewShot, Mode::Oracle, Mode::Dann, Mode::HydroDcm];

    pub fn split(self) -> SplitMode {
        match self {
            Mode::HydroDcm | Mode::Base | Mode::Dann => SplitMode::Dg,
            Mode::Oracle => SplitMode::Oracle,
            Mode::FewShot => SplitMode::FewShot,
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "hydrodcm" => Mode::HydroDcm,
            "base" | "dg" => Mode::Base,
            "oracle" => Mode::Oracle,
            "fewshot" => Mode::FewShot,
            "dann" => Mode::Dann,
            _ => return Err("one of hydrodcm, base, oracle, fewshot, dann".into()),
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::HydroDcm => "hydrodcm",
            Mode::Base => "base",
            Mode::Oracle => "oracle",
            Mode::FewShot => "fewshot",
            Mode::Dann => "dann",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    NoContrastive,
    NoAdversarial,
    NoFilm,
    SpatialShuffle,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::NoContrastive, Ablation::NoAdversarial, Ablation::NoFilm, Ablation::SpatialShuffle];

    pub fn key(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoContrastive => "no_contrastive",
            Ablation::NoAdversarial => "no_adversarial",
            Ablation::NoFilm => "no_film",
            Ablation::SpatialShuffle => "spatial_shuffle",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Metric driving the plateau scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerMetric {
    /// Total validation loss under the current phase rule.
    Loss,
    /// Negative validation NSE.
    Nse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub learning_rate: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    /// Training windows drawn (without replacement) per epoch; 0 uses all.
    pub samples_per_epoch: usize,
    /// Cap on validation windows (evenly strided subset); 0 uses all.
    pub val_max_samples: usize,
    pub scheduler_metric: SchedulerMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            warmup_epochs: 10,
            learning_rate: 1e-3,
            lr_factor: 0.5,
            lr_patience: 10,
            min_lr: 1e-6,
            clip_norm: 1.0,
            dropout: 0.1,
            samples_per_epoch: 0,
            val_max_samples: 0,
            scheduler_metric: SchedulerMetric::Loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub ablation: Ablation,
    pub seed: u64,
    pub num_runs: usize,
    pub train: TrainConfig,
    pub weights: LossWeights,
    /// Coefficient of the gradient-reversal node; the adversarial weight
    /// itself is applied through `weights.lambda_adv`.
    pub grl_lambda: f64,
    pub world: SyntheticWorldConfig,
    /// Series and metadata CSVs; the synthetic world is used when unset.
    pub csv: Option<(PathBuf, PathBuf)>,
    pub split: SplitOptions,
    /// Standard deviation of the metadata noise of the spatial-shuffle probe.
    pub shuffle_noise: f64,
    pub dims: ModelDims,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::HydroDcm,
            ablation: Ablation::None,
            seed: 0,
            num_runs: 5,
            train: TrainConfig::default(),
            weights: LossWeights::default(),
            grl_lambda: 1.0,
            world: SyntheticWorldConfig::default(),
            csv: None,
            split: SplitOptions::default(),
            shuffle_noise: 0.5,
            dims: ModelDims::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T> {
    value.parse().map_err(|_| ConfigError::Type { key: key.into(), value: value.into(), expected })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::Type { key: key.into(), value: value.into(), expected: "a boolean" }),
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "experiment.mode",
    "experiment.seed",
    "experiment.num_runs",
    "train.epochs",
    "train.batch_size",
    "train.warmup_epochs",
    "train.learning_rate",
    "train.lr_factor",
    "train.lr_patience",
    "train.min_lr",
    "train.clip_norm",
    "train.dropout",
    "train.samples_per_epoch",
    "train.val_max_samples",
    "train.scheduler_metric",
    "loss.lambda_con",
    "loss.lambda_adv",
    "loss.lambda_sup",
    "loss.tau",
    "loss.negatives",
    "loss.grl_lambda",
    "ablation.no_contrastive",
    "ablation.no_adversarial",
    "ablation.no_film",
    "ablation.spatial_shuffle",
    "ablation.shuffle_noise",
    "world.num_reservoirs",
    "world.num_target",
    "world.days",
    "world.target_years",
    "world.shift_strength",
    "world.seed",
    "data.series",
    "data.metadata",
    "data.source_train_fraction",
    "data.fewshot_val_fraction",
    "eval.test_span",
    "model.window",
    "model.horizon",
    "model.hidden",
    "model.layers",
    "model.embed",
    "model.disc_hidden",
    "model.film_hidden",
    "model.head_hidden",
];

impl ExperimentConfig {
    /// Sets one key. Ablation flags are accumulated and checked in [`validate`](Self::validate).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let w = &mut self.weights;
        match key {
            "experiment.mode" => {
                self.mode = value.parse().map_err(|e: String| ConfigError::Constraint { key: key.into(), rule: format!("must be {e}") })?
            }
            "experiment.seed" => self.seed = parse(key, value, "an unsigned integer")?,
            "experiment.num_runs" => self.num_runs = parse(key, value, "an unsigned integer")?,
            "train.epochs" => t.epochs = parse(key, value, "an unsigned integer")?,
            "train.batch_size" => t.batch_size = parse(key, value, "an unsigned integer")?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, value, "an unsigned integer")?,
            "train.learning_rate" => t.learning_rate = parse(key, value, "a number")?,
            "train.lr_factor" => t.lr_factor = parse(key, value, "a number")?,
            "train.lr_patience" => t.lr_patience = parse(key, value, "an unsigned integer")?,
            "train.min_lr" => t.min_lr = parse(key, value, "a number")?,
            "train.clip_norm" => t.clip_norm = parse(key, value, "a number")?,
            "train.dropout" => t.dropout = parse(key, value, "a number")?,
            "train.samples_per_epoch" => t.samples_per_epoch = parse(key, value, "an unsigned integer")?,
            "train.val_max_samples" => t.val_max_samples = parse(key, value, "an unsigned integer")?,
            "train.scheduler_metric" => {
                t.scheduler_metric = match value {
                    "loss" => SchedulerMetric::Loss,
                    "nse" => SchedulerMetric::Nse,
                    _ => return Err(ConfigError::Type { key: key.into(), value: value.into(), expected: "`loss` or `nse`" }),
                }
            }
            "loss.lambda_con" => w.lambda_con = parse(key, value, "a number")?,
            "loss.lambda_adv" => w.lambda_adv = parse(key, value, "a number")?,
            "loss.lambda_sup" => w.lambda_sup = parse(key, value, "a number")?,
            "loss.tau" => w.tau = parse(key, value, "a number")?,
            "loss.negatives" => w.negatives = parse(key, value, "an unsigned integer")?,
            "loss.grl_lambda" => self.grl_lambda = parse(key, value, "a number")?,
            "ablation.no_contrastive" | "ablation.no_adversarial" | "ablation.no_film" | "ablation.spatial_shuffle" => {
                let which = match key {
                    "ablation.no_contrastive" => Ablation::NoContrastive,
                    "ablation.no_adversarial" => Ablation::NoAdversarial,
                    "ablation.no_film" => Ablation::NoFilm,
                    _ => Ablation::SpatialShuffle,
                };
                let on = parse_bool(key, value)?;
                if on {
                    if self.ablation != Ablation::None && self.ablation != which {
                        return Err(ConfigError::Constraint {
                            key: key.into(),
                            rule: format!("at most one ablation may be active (`{}` is already set)", self.ablation),
                        });
                    }
                    self.ablation = which;
                } else if self.ablation == which {
                    self.ablation = Ablation::None;
                }
            }
            "ablation.shuffle_noise" => self.shuffle_noise = parse(key, value, "a number")?,
            "world.num_reservoirs" => self.world.num_reservoirs = parse(key, value, "an unsigned integer")?,
            "world.num_target" => self.world.num_target = parse(key, value, "an unsigned integer")?,
            "world.days" => self.world.days = parse(key, value, "an unsigned integer")?,
            "world.target_years" => self.world.target_years = parse(key, value, "an unsigned integer")?,
            "world.shift_strength" => self.world.shift_strength = parse(key, value, "a number")?,
            "world.seed" => self.world.seed = parse(key, value, "an unsigned integer")?,
            "data.series" | "data.metadata" => {
                let (mut series, mut meta) = self.csv.clone().unwrap_or_default();
                if key == "data.series" {
                    series = PathBuf::from(value);
                } else {
                    meta = PathBuf::from(value);
                }
                self.csv = if series.as_os_str().is_empty() && meta.as_os_str().is_empty() {
                    None
                } else {
                    Some((series, meta))
                };
            }
            "data.source_train_fraction" => self.split.source_train_fraction = parse(key, value, "a number")?,
            "data.fewshot_val_fraction" => self.split.fewshot_val_fraction = parse(key, value, "a number")?,
            "eval.test_span" => {
                self.split.shared_test = match value {
                    "shared" => true,
                    "protocol" => false,
                    _ => return Err(ConfigError::Type { key: key.into(), value: value.into(), expected: "`shared` or `protocol`" }),
                }
            }
            "model.window" => self.dims.window = parse(key, value, "an unsigned integer")?,
            "model.horizon" => self.dims.horizon = parse(key, value, "an unsigned integer")?,
            "model.hidden" => self.dims.hidden = parse(key, value, "an unsigned integer")?,
            "model.layers" => self.dims.layers = parse(key, value, "an unsigned integer")?,
            "model.embed" => self.dims.embed = parse(key, value, "an unsigned integer")?,
            "model.disc_hidden" => self.dims.disc_hidden = parse(key, value, "an unsigned integer")?,
            "model.film_hidden" => self.dims.film_hidden = parse(key, value, "an unsigned integer")?,
            "model.head_hidden" => self.dims.head_hidden = parse(key, value, "an unsigned integer")?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Value of `key` as it would be written to a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let w = &self.weights;
        let path = |i: usize| self.csv.as_ref().map(|c| if i == 0 { &c.0 } else { &c.1 }.display().to_string()).unwrap_or_default();
        Some(match key {
            "experiment.mode" => self.mode.to_string(),
            "experiment.seed" => self.seed.to_string(),
            "experiment.num_runs" => self.num_runs.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.warmup_epochs" => t.warmup_epochs.to_string(),
            "train.learning_rate" => t.learning_rate.to_string(),
            "train.lr_factor" => t.lr_factor.to_string(),
            "train.lr_patience" => t.lr_patience.to_string(),
            "train.min_lr" => t.min_lr.to_string(),
            "train.clip_norm" => t.clip_norm.to_string(),
            "train.dropout" => t.dropout.to_string(),
            "train.samples_per_epoch" => t.samples_per_epoch.to_string(),
            "train.val_max_samples" => t.val_max_samples.to_string(),
            "train.scheduler_metric" => match t.scheduler_metric {
                SchedulerMetric::Loss => "loss".into(),
                SchedulerMetric::Nse => "nse".into(),
            },
            "loss.lambda_con" => w.lambda_con.to_string(),
            "loss.lambda_adv" => w.lambda_adv.to_string(),
            "loss.lambda_sup" => w.lambda_sup.to_string(),
            "loss.tau" => w.tau.to_string(),
            "loss.negatives" => w.negatives.to_string(),
            "loss.grl_lambda" => self.grl_lambda.to_string(),
            "ablation.no_contrastive" => (self.ablation == Ablation::NoContrastive).to_string(),
            "ablation.no_adversarial" => (self.ablation == Ablation::NoAdversarial).to_string(),
            "ablation.no_film" => (self.ablation == Ablation::NoFilm).to_string(),
            "ablation.spatial_shuffle" => (self.ablation == Ablation::SpatialShuffle).to_string(),
            "ablation.shuffle_noise" => self.shuffle_noise.to_string(),
            "world.num_reservoirs" => self.world.num_reservoirs.to_string(),
            "world.num_target" => self.world.num_target.to_string(),
            "world.days" => self.world.days.to_string(),
            "world.target_years" => self.world.target_years.to_string(),
            "world.shift_strength" => self.world.shift_strength.to_string(),
            "world.seed" => self.world.seed.to_string(),
            "data.series" => path(0),
            "data.metadata" => path(1),
            "data.source_train_fraction" => self.split.source_train_fraction.to_string(),
            "data.fewshot_val_fraction" => self.split.fewshot_val_fraction.to_string(),
            "eval.test_span" => if self.split.shared_test { "shared" } else { "protocol" }.into(),
            "model.window" => self.dims.window.to_string(),
            "model.horizon" => self.dims.horizon.to_string(),
            "model.hidden" => self.dims.hidden.to_string(),
            "model.layers" => self.dims.layers.to_string(),
            "model.embed" => self.dims.embed.to_string(),
            "model.disc_hidden" => self.dims.disc_hidden.to_string(),
            "model.film_hidden" => self.dims.film_hidden.to_string(),
            "model.head_hidden" => self.dims.head_hidden.to_string(),
            _ => return None,
        })
    }

    /// Applies the lines of a config file (comments and blank lines skipped).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: assignment.to_string() })?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, rule: String| Err(ConfigError::Constraint { key: key.into(), rule });
        let t = &self.train;
        if t.epochs == 0 {
            return fail("train.epochs", "must be at least 1".into());
        }
        if t.warmup_epochs > t.epochs {
            return fail("train.warmup_epochs", format!("must not exceed train.epochs ({})", t.epochs));
        }
        if t.batch_size == 0 {
            return fail("train.batch_size", "must be at least 1".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return fail("train.learning_rate", "must be positive".into());
        }
        if !(t.lr_factor > 0.0 && t.lr_factor < 1.0) {
            return fail("train.lr_factor", "must lie in (0, 1)".into());
        }
        if !(t.min_lr >= 0.0) {
            return fail("train.min_lr", "must be nonnegative".into());
        }
        if !(t.clip_norm > 0.0) {
            return fail("train.clip_norm", "must be positive".into());
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return fail("train.dropout", "must lie in [0, 1)".into());
        }
        if self.num_runs == 0 {
            return fail("experiment.num_runs", "must be at least 1".into());
        }
        self.weights.validate().map_err(|rule| ConfigError::Constraint { key: "loss".into(), rule })?;
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return fail("loss.grl_lambda", "must be a finite nonnegative number".into());
        }
        if !(self.shuffle_noise >= 0.0) {
            return fail("ablation.shuffle_noise", "must be nonnegative".into());
        }
        if self.ablation != Ablation::None && self.mode != Mode::HydroDcm {
            return fail(
                &format!("ablation.{}", self.ablation),
                format!("ablations apply to mode hydrodcm, not `{}`", self.mode),
            );
        }
        self.world.validate().map_err(|e| ConfigError::Constraint { key: "world".into(), rule: e.to_string() })?;
        if let Some((series, meta)) = &self.csv {
            if series.as_os_str().is_empty() || meta.as_os_str().is_empty() {
                return fail("data.series", "data.series and data.metadata must be set together".into());
            }
        }
        for (key, v) in [
            ("data.source_train_fraction", self.split.source_train_fraction),
            ("data.fewshot_val_fraction", self.split.fewshot_val_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return fail(key, "must lie in (0, 1)".into());
            }
        }
        let d = &self.dims;
        if d.features != 3 || d.metadata != 3 {
            return fail("model", "the data schema fixes 3 features and 3 metadata attributes".into());
        }
        for (key, v) in [
            ("model.window", d.window),
            ("model.horizon", d.horizon),
            ("model.hidden", d.hidden),
            ("model.layers", d.layers),
            ("model.embed", d.embed),
            ("model.disc_hidden", d.disc_hidden),
            ("model.film_hidden", d.film_hidden),
            ("model.head_hidden", d.head_hidden),
        ] {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Loss weights after the mode and ablation rules: only hydrodcm uses the
    /// contrastive and metadata-regression terms, dann keeps `lambda_adv` for
    /// its domain classifier, the other baselines train on `L_sup` alone.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        match self.mode {
            Mode::HydroDcm => match self.ablation {
                Ablation::NoContrastive => w.lambda_con = 0.0,
                Ablation::NoAdversarial => w.lambda_adv = 0.0,
                _ => {}
            },
            Mode::Dann => w.lambda_con = 0.0,
            Mode::Base | Mode::Oracle | Mode::FewShot => {
                w.lambda_con = 0.0;
                w.lambda_adv = 0.0;
            }
        }
        w
    }

    /// Whether the FiLM adapter sits between encoder and head. The in-domain
    /// references (oracle, fewshot) train the full inference architecture on
    /// target data; the source-only baselines never see metadata.
    pub fn uses_film(&self) -> bool {
        match self.mode {
            Mode::HydroDcm => self.ablation != Ablation::NoFilm,
            Mode::Oracle | Mode::FewShot => true,
            Mode::Base | Mode::Dann => false,
        }
    }

    /// Full `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("every listed key has a value")));
        }
        out
    }
}

/// Reads `path` (if any), applies `overrides` in order and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        cfg.apply_text(&text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
