//! Two-stage training, evaluation and multi-seed experiment runs.
//!
//! Epochs before `warmup_epochs` optimize `λ_con·L_con + λ_sup·L_sup`; later
//! epochs add `λ_adv·L_adv`, where the discriminator sits behind a
//! gradient-reversal node so the encoder is pushed away from features that
//! predict the metadata-derived pseudo-domain embedding.

mod dataset;
mod output;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{Ablation, ConfigError, ExperimentConfig, Mode, SchedulerMetric};
use crate::data::{denormalize, DataError, ReservoirRecord, WindowRef};
use crate::losses::{
    adversarial_loss, contrastive_loss, cross_entropy, nse_report, supervised_loss, total_loss, LossWeights,
    NseReport, Phase, ReservoirForecasts,
};
use crate::model::{ModelBundle, ModelError, Pass};
use crate::tensor::optim::{clip_global_norm, Adam, PlateauScheduler};
use crate::tensor::rng::Rng;
use crate::tensor::{no_grad, Tensor, TensorError};

pub use dataset::{Batch, Dataset};
pub use output::{
    read_nse_csv, write_epochs_csv, write_nse_csv, write_summary_csv, SummaryRow, EPOCHS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite {component} loss ({value}) at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        component: &'static str,
        value: f64,
    },
    #[error("mode `{mode}` has no {set} windows")]
    EmptySet { mode: Mode, set: &'static str },
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

/// Mean loss components over an epoch (sample-weighted).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Components {
    pub con: f64,
    pub adv: f64,
    pub sup: f64,
    pub total: f64,
}

impl Components {
    fn accumulate(&mut self, terms: &Terms, weight: f64) {
        self.con += weight * terms.con.item();
        self.adv += weight * terms.adv.item();
        self.sup += weight * terms.sup.item();
        self.total += weight * terms.total.item();
    }

    fn scaled(self, c: f64) -> Components {
        Components { con: self.con * c, adv: self.adv * c, sup: self.sup * c, total: self.total * c }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
    pub train: Components,
    pub val: Components,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub mode: Mode,
    pub ablation: Ablation,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub nse: NseReport,
    /// Not written to any output file.
    pub wall_clock: Duration,
}

struct Terms {
    con: Tensor,
    adv: Tensor,
    sup: Tensor,
    total: Tensor,
}

/// Loss evaluation shared by training and validation.
struct Objective<'a> {
    bundle: &'a ModelBundle,
    ds: &'a Dataset,
    cfg: &'a ExperimentConfig,
    weights: LossWeights,
    use_film: bool,
}

impl Objective<'_> {
    fn terms(&self, batch: &Batch, phase: Phase, pass: &mut Pass<'_>, con_rng: &mut Rng) -> Result<Terms> {
        let m = self.bundle;
        let w = &self.weights;
        let h = m.encode(&batch.x, pass)?;
        let z = if self.use_film { m.modulate(&h, &batch.s)? } else { h.clone() };
        let sup = supervised_loss(&m.predict(&z, pass)?, &batch.y)?;
        let adversarial = phase == Phase::Adversarial && w.lambda_adv > 0.0;
        let mut con = Tensor::scalar(0.0);
        let mut adv = Tensor::scalar(0.0);
        match self.cfg.mode {
            Mode::HydroDcm if w.lambda_con > 0.0 || adversarial => {
                let v = m.project_pseudo_domain(&batch.s, &batch.x)?;
                if w.lambda_con > 0.0 {
                    con = contrastive_loss(&v, &batch.reservoirs, w.tau, w.negatives, con_rng)?;
                }
                if adversarial {
                    let d = m.discriminate(&h, self.cfg.grl_lambda, pass)?;
                    adv = adversarial_loss(&d, &v)?;
                }
            }
            Mode::Dann if adversarial => {
                let labels: Vec<usize> = batch
                    .reservoirs
                    .iter()
                    .map(|&r| self.ds.domain_labels[r].expect("domain classifier sees training reservoirs only"))
                    .collect();
                adv = cross_entropy(&m.classify_domain(&h, self.cfg.grl_lambda)?, &labels)?;
            }
            _ => {}
        }
        let total = total_loss(&con, &adv, &sup, w, phase)?;
        Ok(Terms { con, adv, sup, total })
    }
}

/// Evenly strided subset of at most `cap` windows (all when `cap` is 0).
fn strided(refs: &[WindowRef], cap: usize) -> Vec<WindowRef> {
    if cap == 0 || refs.len() <= cap {
        return refs.to_vec();
    }
    (0..cap).map(|i| refs[i * refs.len() / cap]).collect()
}

/// Owns the mutable state of one training run.
pub struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a Dataset,
    pub bundle: ModelBundle,
    pub adam: Adam,
    pub scheduler: PlateauScheduler,
    weights: LossWeights,
    seed: u64,
    params: Vec<Tensor>,
    val_refs: Vec<WindowRef>,
    shuffle_rng: Rng,
    dropout_rng: Rng,
    con_rng: Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, ds: &'a Dataset, bundle: ModelBundle, seed: u64) -> Trainer<'a> {
        let params = bundle.parameters();
        let t = &cfg.train;
        let mut scheduler = PlateauScheduler::new(t.learning_rate, t.lr_factor, t.lr_patience);
        scheduler.min_lr = t.min_lr;
        Trainer {
            cfg,
            ds,
            adam: Adam::for_params(t.learning_rate, &params),
            scheduler,
            bundle,
            weights: cfg.effective_weights(),
            seed,
            params,
            val_refs: strided(&ds.sets.val, t.val_max_samples),
            shuffle_rng: Rng::derive(seed, "train.shuffle"),
            dropout_rng: Rng::derive(seed, "train.dropout"),
            con_rng: Rng::derive(seed, "train.contrastive"),
        }
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    /// Training windows of one epoch: a fresh shuffle, truncated to
    /// `samples_per_epoch` when set.
    fn epoch_order(&mut self) -> Vec<WindowRef> {
        let mut order = self.ds.sets.train.clone();
        self.shuffle_rng.shuffle(&mut order);
        let cap = self.cfg.train.samples_per_epoch;
        if cap > 0 && cap < order.len() {
            order.truncate(cap);
        }
        order
    }

    pub fn train_epoch(&mut self, epoch: usize) -> Result<Components> {
        let phase = Phase::at(epoch, self.cfg.train.warmup_epochs);
        let order = self.epoch_order();
        let objective = Objective {
            bundle: &self.bundle,
            ds: self.ds,
            cfg: self.cfg,
            weights: self.weights,
            use_film: self.cfg.uses_film(),
        };
        let mut acc = Components::default();
        for (b, chunk) in order.chunks(self.cfg.train.batch_size).enumerate() {
            let batch = self.ds.batch(chunk, &self.cfg.dims);
            for p in &self.params {
                p.zero_grad();
            }
            let mut pass = Pass::train(self.cfg.train.dropout, &mut self.dropout_rng);
            let terms = objective.terms(&batch, phase, &mut pass, &mut self.con_rng)?;
            for (component, t) in [("contrastive", &terms.con), ("adversarial", &terms.adv), ("supervised", &terms.sup), ("total", &terms.total)] {
                let value = t.item();
                if !value.is_finite() {
                    return Err(TrainError::NonFinite { epoch, batch: b, component, value });
                }
            }
            terms.total.backward()?;
            clip_global_norm(&self.params, self.cfg.train.clip_norm);
            self.adam.step(&self.params)?;
            acc.accumulate(&terms, chunk.len() as f64);
        }
        Ok(acc.scaled(1.0 / order.len() as f64))
    }

    /// Validation losses under the phase rule of `epoch`, without dropout.
    pub fn validate(&self, epoch: usize) -> Result<Components> {
        let phase = Phase::at(epoch, self.cfg.train.warmup_epochs);
        let objective = Objective {
            bundle: &self.bundle,
            ds: self.ds,
            cfg: self.cfg,
            weights: self.weights,
            use_film: self.cfg.uses_film(),
        };
        let mut con_rng = Rng::derive(self.seed, "val.contrastive");
        let mut dummy = Rng::new(0);
        no_grad(|| {
            let mut acc = Components::default();
            for chunk in self.val_refs.chunks(self.cfg.train.batch_size) {
                let batch = self.ds.batch(chunk, &self.cfg.dims);
                let terms = objective.terms(&batch, phase, &mut Pass::eval(&mut dummy), &mut con_rng)?;
                acc.accumulate(&terms, chunk.len() as f64);
            }
            Ok(acc.scaled(1.0 / self.val_refs.len() as f64))
        })
    }

    pub fn validation_nse(&self) -> Option<f64> {
        evaluate(&self.bundle, self.ds, &self.val_refs, self.cfg).overall
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.learning_rate = lr;
    }
}

/// Forecasts in physical units for `refs`, grouped by reservoir in
/// prepared order. Uses only the encoder, the adapter and the head.
pub fn forecast(bundle: &ModelBundle, ds: &Dataset, refs: &[WindowRef], cfg: &ExperimentConfig) -> Vec<ReservoirForecasts> {
    let mut out: Vec<ReservoirForecasts> = Vec::new();
    let h = cfg.dims.horizon;
    let mut dummy = Rng::new(0);
    no_grad(|| {
        for chunk in refs.chunks(256) {
            let batch = ds.batch(chunk, &cfg.dims);
            let pred = bundle
                .forecast(&batch.x, &batch.s, cfg.uses_film(), &mut Pass::eval(&mut dummy))
                .expect("batch shapes follow the model dimensions")
                .to_vec();
            let obs = batch.y.to_vec();
            for (i, r) in chunk.iter().enumerate() {
                let p = &ds.prepared[r.reservoir];
                if out.last().map_or(true, |f| f.id != p.id) {
                    out.push(ReservoirForecasts { id: p.id.clone(), predictions: vec![], observations: vec![] });
                }
                let f = out.last_mut().expect("just pushed");
                f.predictions.push(pred[i * h..(i + 1) * h].iter().map(|&v| denormalize(&p.stats, v)).collect());
                f.observations.push(obs[i * h..(i + 1) * h].iter().map(|&v| denormalize(&p.stats, v)).collect());
            }
        }
    });
    out
}

pub fn evaluate(bundle: &ModelBundle, ds: &Dataset, refs: &[WindowRef], cfg: &ExperimentConfig) -> NseReport {
    nse_report(&forecast(bundle, ds, refs, cfg), cfg.dims.horizon)
}

/// Result of [`train_run`]: the report plus the selected (best-validation) model.
pub struct TrainedRun {
    pub report: RunReport,
    pub best: ModelBundle,
    pub dataset: Dataset,
}

/// Trains one seed. The returned model is the epoch with the lowest
/// validation `L_sup` (earliest on ties); test NSE is computed on it.
pub fn train_run(cfg: &ExperimentConfig, records: &[ReservoirRecord], seed: u64) -> Result<TrainedRun> {
    let start = Instant::now();
    let ds = Dataset::build(records, cfg, seed, None)?;
    for (set, refs) in [("train", &ds.sets.train), ("validation", &ds.sets.val), ("test", &ds.sets.test)] {
        if refs.is_empty() {
            return Err(TrainError::EmptySet { mode: cfg.mode, set });
        }
    }
    let classes = (cfg.mode == Mode::Dann).then_some(ds.num_domains);
    let mut bundle = ModelBundle::init(cfg.dims, seed, classes);
    bundle.norm = ds.norm.clone();

    let (epochs, best, best_epoch) = {
        let mut trainer = Trainer::new(cfg, &ds, bundle, seed);
        let mut epochs = Vec::with_capacity(cfg.train.epochs);
        let mut best: Option<(f64, usize, ModelBundle)> = None;
        for epoch in 0..cfg.train.epochs {
            let lr = trainer.adam.learning_rate;
            let train = trainer.train_epoch(epoch)?;
            let val = trainer.validate(epoch)?;
            let metric = match cfg.train.scheduler_metric {
                SchedulerMetric::Loss => val.total,
                SchedulerMetric::Nse => -trainer.validation_nse().unwrap_or(f64::NEG_INFINITY),
            };
            if let Some(new_lr) = trainer.scheduler.step(metric) {
                trainer.set_lr(new_lr);
            }
            if best.as_ref().map_or(true, |(b, _, _)| val.sup < *b) {
                best = Some((val.sup, epoch, trainer.bundle.snapshot()));
            }
            log::debug!(
                "{} seed {seed} epoch {epoch}: train {:.5} (sup {:.5}) val {:.5} (sup {:.5}) lr {lr}",
                cfg.mode,
                train.total,
                train.sup,
                val.total,
                val.sup
            );
            epochs.push(EpochLog { epoch, phase: Phase::at(epoch, cfg.train.warmup_epochs), lr, train, val });
        }
        let (_, best_epoch, best) = best.expect("at least one epoch");
        (epochs, best, best_epoch)
    };
    let nse = evaluate(&best, &ds, &ds.sets.test, cfg);
    let report = RunReport {
        seed,
        mode: cfg.mode,
        ablation: cfg.ablation,
        epochs,
        best_epoch,
        nse,
        wall_clock: start.elapsed(),
    };
    Ok(TrainedRun { report, best, dataset: ds })
}

/// Trains one seed and writes `checkpoint.hdcm`, `epochs.csv` and `nse.csv`
/// into `dir` when given.
pub fn run_single(cfg: &ExperimentConfig, records: &[ReservoirRecord], seed: u64, dir: Option<&Path>) -> Result<RunReport> {
    let run = train_run(cfg, records, seed)?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let ckpt = dir.join("checkpoint.hdcm");
        run.best.to_checkpoint().save(&ckpt).map_err(|e| match e {
            ModelError::Io(source) => TrainError::Io { path: ckpt.display().to_string(), source },
            other => other.into(),
        })?;
        write_epochs_csv(&dir.join("epochs.csv"), &run.report.epochs)?;
        write_nse_csv(&dir.join("nse.csv"), &run.report.nse)?;
    }
    log::info!(
        "{}{} seed {seed}: overall NSE {} (best epoch {}, {:.1}s)",
        cfg.mode,
        if cfg.ablation == Ablation::None { String::new() } else { format!("/{}", cfg.ablation) },
        run.report.nse.overall.map_or("undefined".into(), |v| format!("{v:.4}")),
        run.report.best_epoch,
        run.report.wall_clock.as_secs_f64()
    );
    Ok(run.report)
}

/// Runs jobs on up to `threads` worker threads; results keep job order.
pub fn run_parallel<T: Send>(jobs: Vec<Box<dyn FnOnce() -> T + Send + '_>>, threads: usize) -> Vec<T> {
    let n = jobs.len();
    let slots: Vec<Mutex<Option<Box<dyn FnOnce() -> T + Send + '_>>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().expect("job slot").take().expect("each job runs once");
                let value = job();
                *results[i].lock().expect("result slot") = Some(value);
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().expect("result slot").expect("every job ran")).collect()
}

/// Worker count from `HYDRODCM_THREADS` (default 1).
pub fn thread_budget() -> usize {
    std::env::var("HYDRODCM_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub result: std::result::Result<RunReport, String>,
}

/// Runs `cfg.num_runs` seeds (`seed ..= seed + num_runs - 1`). Failures are
/// recorded per run; the others still complete. Writes `run_<seed>/` and
/// `summary.csv` into `out` when given.
pub fn run_experiment(cfg: &ExperimentConfig, records: &[ReservoirRecord], out: Option<&Path>, threads: usize) -> Vec<RunOutcome> {
    let seeds: Vec<u64> = (0..cfg.num_runs as u64).map(|k| cfg.seed + k).collect();
    let jobs: Vec<Box<dyn FnOnce() -> RunOutcome + Send + '_>> = seeds
        .iter()
        .map(|&seed| {
            let dir: Option<PathBuf> = out.map(|o| o.join(format!("run_{seed}")));
            Box::new(move || RunOutcome {
                seed,
                result: run_single(cfg, records, seed, dir.as_deref()).map_err(|e| e.to_string()),
            }) as Box<dyn FnOnce() -> RunOutcome + Send + '_>
        })
        .collect();
    let outcomes = run_parallel(jobs, threads);
    for o in &outcomes {
        if let Err(e) = &o.result {
            log::error!("{} seed {} failed: {e}", cfg.mode, o.seed);
        }
    }
    if let Some(out) = out {
        let row = SummaryRow::from_outcomes(&cfg.mode.to_string(), &cfg.ablation.to_string(), &outcomes, cfg.dims.horizon);
        if let Err(e) = write_summary_csv(&out.join("summary.csv"), &[row]) {
            log::error!("{e}");
        }
    }
    outcomes
}
