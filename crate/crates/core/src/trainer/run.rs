use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::diagnostics::{
    check_norm_bound, export_csv, record_grad_norms, CsvTable, GradNormGrid, GridRow, GridScale,
    SpectrumRow, SpectrumStats, SpectrumTrace,
};
use crate::error::{Error, Result};
use crate::matcore::Rng;
use crate::optim::{apply_weight_decay, clip_gradients, OptimState};
use crate::rnncell::{
    forward, loss_and_gradients, Batch, Gradients, RnnModel, Transition, TransitionGrad,
};
use crate::spectral::{gaussian_prior, soft_orthogonality_penalty};
use crate::tasks::{
    gen_adding_batch, gen_copy_batch, load_char_corpus, load_mnist_idx, sequentialize_mnist,
    AddingSpec, CharCorpus, CopySpec, SequentialMnist, VOCAB_SIZE,
};
use crate::trainer::checkpoint::{
    read_model, read_optim, read_rng, write_model, write_optim, write_rng, Checkpoint, Tensor,
};
use crate::trainer::config::{ExperimentConfig, Metric, TaskKind, CONFIG_KEYS};
use crate::trainer::eval::evaluate;

/// Keys that may change when a run is resumed from a checkpoint.
const RESUMABLE_OVERRIDES: &[&str] = &[
    "epochs",
    "output_dir",
    "checkpoint_every",
    "wall_clock",
    "patience",
    "stop_on_threshold",
    "norm_bound_check",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    Patience,
    Threshold,
}

impl StopReason {
    fn as_str(self) -> &'static str {
        match self {
            StopReason::Budget => "budget",
            StopReason::Patience => "patience",
            StopReason::Threshold => "threshold",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub metric: Metric,
    pub epochs_run: usize,
    pub iterations: usize,
    pub final_train_loss: f64,
    pub final_val_metric: f64,
    pub best_val_metric: f64,
    pub epochs_to_threshold: Option<usize>,
    pub stop: StopReason,
    pub norm_bound_violations: Option<usize>,
}

struct History<'a>(&'a [MetricsRow]);

impl CsvTable for History<'_> {
    fn header(&self) -> Vec<String> {
        ["epoch", "train_loss", "val_metric", "wall_seconds"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.0
            .iter()
            .map(|r| (r.epoch, vec![r.train_loss, r.val_metric, r.wall_seconds]))
            .collect()
    }
}

enum TaskData {
    Copy(CopySpec),
    Adding(AddingSpec),
    Mnist(SequentialMnist),
    Chars {
        corpus: CharCorpus,
        buckets: Vec<Vec<usize>>,
    },
}

/// Data, held-out batches and model sizes for a config. Random streams are
/// derived from the seed in a fixed order: model init, training data,
/// validation data, diagnostic probe.
pub struct TaskSetup {
    data: TaskData,
    pub n_in: usize,
    pub n_out: usize,
    pub val: Vec<Batch<f64>>,
    pub probe: Batch<f64>,
    pub init_rng: Rng,
    pub data_rng: Rng,
}

fn load_mnist_split(cfg: &ExperimentConfig) -> Result<(SequentialMnist, SequentialMnist)> {
    let images = cfg.mnist_images.as_ref().expect("validated");
    let labels = cfg.mnist_labels.as_ref().expect("validated");
    let all = load_mnist_idx(images, labels)?;
    if cfg.val_size == 0 || cfg.val_size >= all.len() {
        return Err(Error::InvalidArgument(format!(
            "val_size {} leaves no training images out of {}",
            cfg.val_size,
            all.len()
        )));
    }
    let (mut train, val) = all.split_tail(cfg.val_size);
    if let Some(n) = cfg.train_size {
        let keep: Vec<usize> = (0..n.min(train.len())).collect();
        train = train.select(&keep);
    }
    let seed = match cfg.task {
        TaskKind::Pmnist => Some(cfg.permutation_seed.unwrap_or(cfg.seed)),
        _ => None,
    };
    Ok((sequentialize_mnist(train, seed), sequentialize_mnist(val, seed)))
}

impl TaskSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<TaskSetup> {
        cfg.validate()?;
        let mut root = Rng::new(cfg.seed);
        let init_rng = root.fork();
        let data_rng = root.fork();
        let mut val_rng = root.fork();
        let mut probe_rng = root.fork();
        let bs = cfg.batch_size;
        let setup = |data, n_in, n_out, val: Vec<Batch<f64>>, probe| {
            if val.is_empty() {
                return Err(Error::InvalidArgument("the validation set is empty".into()));
            }
            Ok(TaskSetup {
                data,
                n_in,
                n_out,
                val,
                probe,
                init_rng: init_rng.clone(),
                data_rng: data_rng.clone(),
            })
        };
        match cfg.task {
            TaskKind::Copy => {
                let mut spec = CopySpec::new(cfg.t);
                spec.copy_positions_only = cfg.copy_positions_only;
                let val = (0..cfg.val_batches)
                    .map(|_| gen_copy_batch(&spec, bs, &mut val_rng))
                    .collect();
                let probe = gen_copy_batch(&spec, bs, &mut probe_rng);
                let cats = spec.categories();
                setup(TaskData::Copy(spec), cats, cats, val, probe)
            }
            TaskKind::Adding => {
                let spec = AddingSpec::new(cfg.t);
                let val = (0..cfg.val_batches)
                    .map(|_| gen_adding_batch(&spec, bs, &mut val_rng))
                    .collect();
                let probe = gen_adding_batch(&spec, bs, &mut probe_rng);
                setup(TaskData::Adding(spec), 2, 1, val, probe)
            }
            TaskKind::Mnist | TaskKind::Pmnist => {
                let (train, val) = load_mnist_split(cfg)?;
                if train.is_empty() {
                    return Err(Error::InvalidArgument("no training images".into()));
                }
                let order: Vec<usize> = (0..val.len()).collect();
                let val_batches = val.batches(&order, bs).collect();
                let probe = val.batch(&order[..bs.min(val.len())]);
                setup(TaskData::Mnist(train), 1, 10, val_batches, probe)
            }
            TaskKind::Chars => {
                let corpus = load_char_corpus(cfg.corpus.as_ref().expect("validated"), cfg.max_len)?;
                let (train, val) = corpus.split_validation();
                if train.is_empty() || val.is_empty() {
                    return Err(Error::InvalidArgument(
                        "corpus too small for a train/validation split".into(),
                    ));
                }
                let val_batches: Vec<Batch<f64>> = val
                    .bucketed_batches(bs)
                    .iter()
                    .map(|b| val.batch(b))
                    .collect();
                let probe = val_batches[0].clone();
                let buckets = train.bucketed_batches(bs);
                setup(
                    TaskData::Chars { corpus: train, buckets },
                    VOCAB_SIZE,
                    VOCAB_SIZE,
                    val_batches,
                    probe,
                )
            }
        }
    }

    /// Fresh model for the config, drawn from the init stream.
    pub fn build_model(&mut self, cfg: &ExperimentConfig) -> Result<RnnModel<f64>> {
        let mut model = RnnModel::new(
            self.n_in,
            cfg.n_hidden,
            self.n_out,
            cfg.nonlinearity(),
            cfg.transition_kind()?,
            cfg.init,
            &mut self.init_rng,
        )?;
        model.preact_gain = cfg.preact_gain;
        Ok(model)
    }

    /// One epoch's training batches, drawn from the data stream in order.
    fn epoch_batches(&mut self, cfg: &ExperimentConfig) -> Vec<Batch<f64>> {
        let bs = cfg.batch_size;
        let rng = &mut self.data_rng;
        match &self.data {
            TaskData::Copy(spec) => (0..cfg.epoch_len).map(|_| gen_copy_batch(spec, bs, rng)).collect(),
            TaskData::Adding(spec) => (0..cfg.epoch_len).map(|_| gen_adding_batch(spec, bs, rng)).collect(),
            TaskData::Mnist(train) => {
                let order = rng.permutation(train.len());
                train.batches(&order, bs).collect()
            }
            TaskData::Chars { corpus, buckets } => rng
                .permutation(buckets.len())
                .into_iter()
                .map(|i| corpus.batch(&buckets[i]))
                .collect(),
        }
    }
}

/// A training run in progress.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub model: RnnModel<f64>,
    pub optim: OptimState<f64>,
    pub setup: TaskSetup,
    pub epoch: usize,
    pub iteration: usize,
    pub history: Vec<MetricsRow>,
    pub spectrum: SpectrumTrace,
    pub grid: GradNormGrid,
    best: Option<f64>,
    since_best: usize,
    epochs_to_threshold: Option<usize>,
    stop: Option<StopReason>,
    elapsed_before: f64,
    started: Instant,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Trainer> {
        let mut setup = TaskSetup::new(&config)?;
        let model = setup.build_model(&config)?;
        let optim = OptimState::new(config.optim_config(), &model)?;
        let mut spectrum = SpectrumTrace::default();
        spectrum.record(0, &model.transition);
        Ok(Trainer {
            config,
            model,
            optim,
            setup,
            epoch: 0,
            iteration: 0,
            history: Vec::new(),
            spectrum,
            grid: GradNormGrid::default(),
            best: None,
            since_best: 0,
            epochs_to_threshold: None,
            stop: None,
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`]. Only
    /// the keys in the override list may differ from the checkpointed config.
    pub fn resume(config: ExperimentConfig, path: impl AsRef<Path>) -> Result<Trainer> {
        let ckpt = Checkpoint::read(path)?;
        let stored = config_from_checkpoint(&ckpt)?
            .ok_or_else(|| Error::InvalidArgument("checkpoint carries no run configuration".into()))?;
        let changed: Vec<&str> = stored
            .diff(&config)
            .into_iter()
            .filter(|k| !RESUMABLE_OVERRIDES.contains(k))
            .collect();
        if !changed.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "config differs from the checkpoint in: {}",
                changed.join(", ")
            )));
        }
        let mut trainer = Trainer::new(config)?;
        trainer.model = read_model(&ckpt)?;
        trainer.optim = read_optim(&ckpt, &trainer.model)?;
        trainer.setup.data_rng = read_rng(&ckpt, "rng.data")?;
        trainer.epoch = ckpt.parse("train.epoch")?;
        trainer.iteration = ckpt.parse("train.iteration")?;
        trainer.best = parse_opt(&ckpt, "train.best")?;
        trainer.since_best = ckpt.parse("train.since_best")?;
        trainer.epochs_to_threshold = parse_opt(&ckpt, "train.epochs_to_threshold")?;
        trainer.stop = match ckpt.require("train.stop")? {
            "patience" => Some(StopReason::Patience),
            "threshold" => Some(StopReason::Threshold),
            _ => None,
        };
        trainer.elapsed_before = ckpt.parse("train.elapsed")?;
        trainer.history = ckpt
            .tensor("history.metrics")?
            .rows()
            .into_iter()
            .map(|r| MetricsRow {
                epoch: r[0] as usize,
                train_loss: r[1],
                val_metric: r[2],
                wall_seconds: r[3],
            })
            .collect();
        trainer.spectrum.rows = ckpt
            .tensor("trace.spectrum")?
            .rows()
            .into_iter()
            .map(|r| SpectrumRow {
                epoch: r[0] as usize,
                stats: SpectrumStats {
                    mean: r[1],
                    std: r[2],
                    min: r[3],
                    max: r[4],
                },
            })
            .collect();
        trainer.grid.rows = ckpt
            .tensor("trace.grad_norms")?
            .rows()
            .into_iter()
            .map(|r| GridRow {
                iteration: r[0] as usize,
                norms: r[1..].to_vec(),
            })
            .collect();
        Ok(trainer)
    }

    pub fn metric(&self) -> Metric {
        self.config.metric()
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn epochs_to_threshold(&self) -> Option<usize> {
        self.epochs_to_threshold
    }

    /// Objective value and gradients for one batch: weighted data loss plus
    /// penalties, weight decay, then clipping. Returns the unweighted data loss.
    pub fn gradients(&self, batch: &Batch<f64>) -> Result<(f64, Gradients<f64>)> {
        let cfg = &self.config;
        let model = &self.model;
        let (loss, mut grads) = loss_and_gradients(model, batch)?;
        if cfg.task_weight != 1.0 {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= cfg.task_weight);
            }
        }
        if cfg.weight_decay > 0.0 {
            grads.add(&apply_weight_decay(model, cfg.weight_decay)?)?;
        }
        if cfg.lambda_orth > 0.0 {
            let (_, g) = soft_orthogonality_penalty(&model.transition.matrix(), cfg.lambda_orth)?;
            let mut extra = Gradients::zeros(model);
            extra.transition = TransitionGrad::from_composite(&model.transition, &g)?;
            grads.add(&extra)?;
        }
        if cfg.gamma_prior > 0.0 {
            if let Transition::Factorized(f) = &model.transition {
                let (_, g_s) = gaussian_prior(&f.singular_values(), cfg.gamma_prior);
                let mut extra = Gradients::zeros(model);
                extra.transition = TransitionGrad::from_spectrum(f, &g_s);
                grads.add(&extra)?;
            }
        }
        if let Some(threshold) = cfg.clip_threshold {
            clip_gradients(&mut grads, threshold);
        }
        Ok((loss, grads))
    }

    /// One parameter update on one batch; returns the data loss.
    pub fn step(&mut self, batch: &Batch<f64>) -> Result<f64> {
        let (loss, grads) = self.gradients(batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(self.dump_non_finite());
        }
        self.optim.step(&mut self.model, &grads)?;
        self.iteration += 1;
        let cadence = self.config.diag_cadence;
        if self.config.grad_norms && cadence > 0 && self.iteration.is_multiple_of(cadence) {
            record_grad_norms(&mut self.grid, &self.model, &self.setup.probe, self.iteration)?;
        }
        Ok(loss)
    }

    fn dump_non_finite(&self) -> Error {
        let dir = self
            .config
            .output_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir);
        let dump = dir.join(format!("nonfinite-seed{}.ckpt", self.config.seed));
        let _ = std::fs::create_dir_all(&dir);
        if let Err(e) = self.save(&dump) {
            log::error!("could not write the state dump: {e}");
        }
        Error::NonFinite {
            epoch: self.epoch,
            iteration: self.iteration,
            dump,
        }
    }

    pub fn validation_metric(&self) -> Result<f64> {
        evaluate(&self.model, &self.setup.val, self.metric())
    }

    /// Trains one epoch and updates the bookkeeping.
    pub fn train_epoch(&mut self) -> Result<MetricsRow> {
        let batches = self.setup.epoch_batches(&self.config);
        let mut total = 0.0;
        for batch in &batches {
            total += self.step(batch)?;
        }
        let train_loss = total / batches.len().max(1) as f64;
        let val_metric = self.validation_metric()?;
        self.epoch += 1;
        self.spectrum.record(self.epoch, &self.model.transition);
        let row = MetricsRow {
            epoch: self.epoch,
            train_loss,
            val_metric,
            wall_seconds: if self.config.wall_clock {
                self.elapsed_before + self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        self.history.push(row);

        let metric = self.metric();
        let threshold = self.config.threshold_value();
        if self.epochs_to_threshold.is_none() && threshold.is_some_and(|t| metric.meets(val_metric, t)) {
            self.epochs_to_threshold = Some(self.epoch);
        }
        if self.best.is_none_or(|b| metric.better(val_metric, b)) {
            self.best = Some(val_metric);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        if self.config.stop_on_threshold && self.epochs_to_threshold.is_some() {
            self.stop = Some(StopReason::Threshold);
        } else if self.config.patience.is_some_and(|p| self.since_best >= p) {
            self.stop = Some(StopReason::Patience);
        }
        log::info!(
            "epoch {} loss {:.6} val {} {:.6}",
            self.epoch,
            train_loss,
            metric.as_str(),
            val_metric
        );
        if let Some(dir) = self.config.output_dir.clone() {
            self.write_metrics(&dir)?;
            let every = self.config.checkpoint_every;
            if every > 0 && self.epoch.is_multiple_of(every) {
                self.save(dir.join("checkpoint.ckpt"))?;
            }
        }
        Ok(row)
    }

    /// Trains until the epoch budget, patience or threshold stops the run,
    /// then writes the final artifacts.
    pub fn run(&mut self) -> Result<RunSummary> {
        if let Some(dir) = &self.config.output_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("config.txt");
            std::fs::write(&path, self.config.to_text()).map_err(|e| Error::io(&path, e))?;
        }
        while self.epoch < self.config.epochs && self.stop.is_none() {
            self.train_epoch()?;
        }
        let norm_bound_violations = if self.config.norm_bound_check {
            let (_, tape) = forward(&self.model, &self.setup.probe)?;
            let violations = check_norm_bound(&self.model, &tape);
            for v in &violations {
                log::warn!("norm bound exceeded at step {}: {:e} > {:e}", v.t, v.lhs, v.rhs);
            }
            Some(violations.len())
        } else {
            None
        };
        if let Some(dir) = self.config.output_dir.clone() {
            self.write_metrics(&dir)?;
            self.save(dir.join("checkpoint.ckpt"))?;
        }
        let last = self.history.last().copied();
        Ok(RunSummary {
            metric: self.metric(),
            epochs_run: self.epoch,
            iterations: self.iteration,
            final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
            final_val_metric: last.map_or(f64::NAN, |r| r.val_metric),
            best_val_metric: self.best.unwrap_or(f64::NAN),
            epochs_to_threshold: self.epochs_to_threshold,
            stop: self.stop.unwrap_or(StopReason::Budget),
            norm_bound_violations,
        })
    }

    /// Writes the metrics log, spectrum trace and gradient-norm grids.
    pub fn write_metrics(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        export_csv(&History(&self.history), dir.join("metrics.csv"))?;
        export_csv(&self.spectrum, dir.join("spectrum.csv"))?;
        if !self.grid.is_empty() {
            export_csv(&self.grid.table(GridScale::Raw), dir.join("grad_norms.csv"))?;
            export_csv(
                &self.grid.table(GridScale::SumNormalized),
                dir.join("grad_norms_sum.csv"),
            )?;
            export_csv(&self.grid.table(GridScale::UnitMax), dir.join("grad_norms_max.csv"))?;
        }
        Ok(())
    }

    /// Full run state: parameters, optimizer, data-stream position, history.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        for key in CONFIG_KEYS {
            ckpt.set(&format!("config.{key}"), self.config.get(key).expect("listed key"));
        }
        ckpt.set("train.epoch", self.epoch);
        ckpt.set("train.iteration", self.iteration);
        write_rng(&mut ckpt, "rng.data", &self.setup.data_rng);
        ckpt.set("train.best", self.best.map_or_else(|| "none".into(), |b| format!("{b:?}")));
        ckpt.set("train.since_best", self.since_best);
        ckpt.set(
            "train.epochs_to_threshold",
            self.epochs_to_threshold.map_or_else(|| "none".into(), |e| e.to_string()),
        );
        ckpt.set("train.stop", self.stop.map_or("none", StopReason::as_str));
        let elapsed = if self.config.wall_clock {
            self.elapsed_before + self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        ckpt.set("train.elapsed", format!("{elapsed:?}"));
        write_model(&mut ckpt, &self.model);
        write_optim(&mut ckpt, &self.optim);
        let history: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|r| vec![r.epoch as f64, r.train_loss, r.val_metric, r.wall_seconds])
            .collect();
        ckpt.push(Tensor::table("history.metrics", 4, &history));
        let spectrum: Vec<Vec<f64>> = self
            .spectrum
            .rows
            .iter()
            .map(|r| vec![r.epoch as f64, r.stats.mean, r.stats.std, r.stats.min, r.stats.max])
            .collect();
        ckpt.push(Tensor::table("trace.spectrum", 5, &spectrum));
        let width = 1 + self.grid.rows.first().map_or(0, |r| r.norms.len());
        let grid: Vec<Vec<f64>> = self
            .grid
            .rows
            .iter()
            .map(|r| std::iter::once(r.iteration as f64).chain(r.norms.iter().copied()).collect())
            .collect();
        ckpt.push(Tensor::table("trace.grad_norms", width, &grid));
        ckpt
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().write(path)
    }
}

fn parse_opt<T: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<Option<T>> {
    match ckpt.require(key)? {
        "none" => Ok(None),
        _ => ckpt.parse(key).map(Some),
    }
}

/// The run configuration stored in a training checkpoint, if any.
pub fn config_from_checkpoint(ckpt: &Checkpoint) -> Result<Option<ExperimentConfig>> {
    if ckpt.get("config.task").is_none() {
        return Ok(None);
    }
    let mut cfg = ExperimentConfig::default();
    for key in CONFIG_KEYS {
        let value = ckpt.require(&format!("config.{key}"))?;
        cfg.set(key, value).map_err(|m| Error::Format {
            format: "checkpoint",
            detail: format!("config.{key}: {m}"),
        })?;
    }
    Ok(Some(cfg))
}

/// Runs a configured experiment from scratch.
pub fn run_experiment(config: ExperimentConfig) -> Result<RunSummary> {
    Trainer::new(config)?.run()
}

/// Resumes from a checkpoint and runs to the configured budget.
pub fn resume_experiment(config: ExperimentConfig, checkpoint: impl AsRef<Path>) -> Result<RunSummary> {
    Trainer::resume(config, checkpoint)?.run()
}

/// Default artifact directory for a config with no `output_dir`.
pub fn default_output_dir(config: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", config.task.as_str(), config.seed))
}
