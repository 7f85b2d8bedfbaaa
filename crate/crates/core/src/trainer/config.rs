use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{OptimConfig, UpdateRule};
use crate::rnncell::{InitKind, Nonlinearity, TransitionKind};
use crate::spectral::SpectrumMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Adding,
    Mnist,
    Pmnist,
    Chars,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonlinKind {
    Identity,
    Tanh,
    Relu,
    Prelu,
    Oplu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionChoice {
    Plain,
    HardOrthogonal,
    Factorized,
}

/// How the spectrum is parameterized; `Auto` follows `margin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumChoice {
    Auto,
    Sigmoid,
    Direct,
    Frozen,
}

/// Validation metric of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Mse,
    Bpc,
}

impl Metric {
    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }

    pub fn meets(self, value: f64, threshold: f64) -> bool {
        if self.higher_is_better() {
            value >= threshold
        } else {
            value < threshold
        }
    }
}

/// Maps enum values to their config spelling.
trait Named: Sized + Copy + 'static {
    const ALL: &'static [(Self, &'static str)];

    fn name(self) -> &'static str
    where
        Self: PartialEq,
    {
        Self::ALL.iter().find(|(v, _)| *v == self).expect("listed").1
    }

    fn parse_name(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .iter()
            .find(|(_, n)| *n == s)
            .map(|(v, _)| *v)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|(_, n)| *n).collect();
                format!("invalid value `{s}`; expected one of {}", names.join(", "))
            })
    }
}

macro_rules! named {
    ($t:ty: $($v:expr => $n:literal),+ $(,)?) => {
        impl Named for $t {
            const ALL: &'static [(Self, &'static str)] = &[$(($v, $n)),+];
        }
        impl $t {
            pub fn as_str(self) -> &'static str {
                Named::name(self)
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                <$t as Named>::parse_name(s)
            }
        }
    };
}

named!(TaskKind: TaskKind::Copy => "copy", TaskKind::Adding => "adding", TaskKind::Mnist => "mnist",
    TaskKind::Pmnist => "pmnist", TaskKind::Chars => "chars");
named!(NonlinKind: NonlinKind::Identity => "identity", NonlinKind::Tanh => "tanh", NonlinKind::Relu => "relu",
    NonlinKind::Prelu => "prelu", NonlinKind::Oplu => "oplu");
named!(TransitionChoice: TransitionChoice::Plain => "plain",
    TransitionChoice::HardOrthogonal => "hard_orthogonal", TransitionChoice::Factorized => "factorized");
named!(SpectrumChoice: SpectrumChoice::Auto => "auto", SpectrumChoice::Sigmoid => "sigmoid",
    SpectrumChoice::Direct => "direct", SpectrumChoice::Frozen => "frozen");
named!(InitKind: InitKind::Orthogonal => "orthogonal", InitKind::Glorot => "glorot", InitKind::Identity => "identity");
named!(UpdateRule: UpdateRule::RmsProp => "rmsprop", UpdateRule::Sgd => "sgd");
named!(Metric: Metric::Accuracy => "accuracy", Metric::Mse => "mse", Metric::Bpc => "bpc");

/// Threshold for epochs-to-threshold bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// 0.95 accuracy on copy, MSE 0.05 on adding, nothing elsewhere.
    Auto,
    Off,
    Value(f64),
}

/// Everything that defines a run. Missing keys keep the defaults below.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// Copy delay or adding sequence length.
    pub t: usize,
    pub n_hidden: usize,
    pub nonlinearity: NonlinKind,
    pub prelu_alpha: f64,
    pub prelu_trainable: bool,
    pub transition: TransitionChoice,
    pub margin: Option<f64>,
    pub spectrum_mode: SpectrumChoice,
    pub init: InitKind,
    pub preact_gain: f64,
    pub lambda_orth: f64,
    pub gamma_prior: f64,
    /// Weight of the data loss; zero leaves only the penalties.
    pub task_weight: f64,
    pub update_rule: UpdateRule,
    pub euclidean_lr: f64,
    pub geodesic_lr: f64,
    pub spectrum_lr: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub clip_threshold: Option<f64>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epoch_len: usize,
    pub val_batches: usize,
    pub seed: u64,
    pub patience: Option<usize>,
    pub threshold: Threshold,
    pub stop_on_threshold: bool,
    pub copy_positions_only: bool,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub train_size: Option<usize>,
    pub val_size: usize,
    pub permutation_seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub max_len: usize,
    /// Updates between gradient-norm probes; zero disables them.
    pub diag_cadence: usize,
    pub grad_norms: bool,
    pub norm_bound_check: bool,
    /// Epochs between checkpoints; zero writes only the final one.
    pub checkpoint_every: usize,
    /// Record elapsed time in the metrics log (zero otherwise).
    pub wall_clock: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Copy,
            t: 100,
            n_hidden: 128,
            nonlinearity: NonlinKind::Tanh,
            prelu_alpha: 0.7,
            prelu_trainable: false,
            transition: TransitionChoice::Factorized,
            margin: None,
            spectrum_mode: SpectrumChoice::Auto,
            init: InitKind::Orthogonal,
            preact_gain: 1.0,
            lambda_orth: 0.0,
            gamma_prior: 0.0,
            task_weight: 1.0,
            update_rule: UpdateRule::RmsProp,
            euclidean_lr: 1e-4,
            geodesic_lr: 1e-6,
            spectrum_lr: 1e-4,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-8,
            clip_threshold: Some(100.0),
            weight_decay: 1e-4,
            batch_size: 50,
            epochs: 100,
            epoch_len: 100,
            val_batches: 10,
            seed: 0,
            patience: Some(25),
            threshold: Threshold::Auto,
            stop_on_threshold: false,
            copy_positions_only: false,
            mnist_images: None,
            mnist_labels: None,
            train_size: None,
            val_size: 10_000,
            permutation_seed: None,
            corpus: None,
            max_len: 75,
            diag_cadence: 10,
            grad_norms: false,
            norm_bound_check: true,
            checkpoint_every: 1,
            wall_clock: true,
            output_dir: None,
        }
    }
}

/// Every accepted key, in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "task",
    "T",
    "n_hidden",
    "nonlinearity",
    "prelu_alpha",
    "prelu_trainable",
    "transition",
    "margin",
    "spectrum_mode",
    "init",
    "preact_gain",
    "lambda_orth",
    "gamma_prior",
    "task_weight",
    "update_rule",
    "euclidean_lr",
    "geodesic_lr",
    "spectrum_lr",
    "rmsprop_rho",
    "rmsprop_eps",
    "clip_threshold",
    "weight_decay",
    "batch_size",
    "epochs",
    "epoch_len",
    "val_batches",
    "seed",
    "patience",
    "threshold",
    "stop_on_threshold",
    "copy_positions_only",
    "mnist_images",
    "mnist_labels",
    "train_size",
    "val_size",
    "permutation_seed",
    "corpus",
    "max_len",
    "diag_cadence",
    "grad_norms",
    "norm_bound_check",
    "checkpoint_every",
    "wall_clock",
    "output_dir",
];

type Parsed<T> = std::result::Result<T, String>;

fn num<T: FromStr>(v: &str) -> Parsed<T>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn real(v: &str) -> Parsed<f64> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not a finite number"))
    }
}

fn flag(v: &str) -> Parsed<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid value `{v}`; expected true or false")),
    }
}

fn optional<T>(v: &str, f: impl Fn(&str) -> Parsed<T>) -> Parsed<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn path(v: &str) -> Parsed<Option<PathBuf>> {
    Ok(if v.is_empty() || v == "none" { None } else { Some(PathBuf::from(v)) })
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn show_real(x: f64) -> String {
    format!("{x:?}")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Parsed<()> {
        match key {
            "task" => self.task = v.parse()?,
            "T" => self.t = num(v)?,
            "n_hidden" => self.n_hidden = num(v)?,
            "nonlinearity" => self.nonlinearity = v.parse()?,
            "prelu_alpha" => self.prelu_alpha = real(v)?,
            "prelu_trainable" => self.prelu_trainable = flag(v)?,
            "transition" => self.transition = v.parse()?,
            "margin" => {
                let m = optional(v, real)?;
                if let Some(m) = m {
                    if !(0.0..=1.0).contains(&m) {
                        return Err(format!("margin {m} outside [0, 1]"));
                    }
                }
                self.margin = m;
            }
            "spectrum_mode" => self.spectrum_mode = v.parse()?,
            "init" => self.init = v.parse()?,
            "preact_gain" => self.preact_gain = real(v)?,
            "lambda_orth" => self.lambda_orth = real(v)?,
            "gamma_prior" => self.gamma_prior = real(v)?,
            "task_weight" => self.task_weight = real(v)?,
            "update_rule" => self.update_rule = v.parse()?,
            "euclidean_lr" => self.euclidean_lr = real(v)?,
            "geodesic_lr" => self.geodesic_lr = real(v)?,
            "spectrum_lr" => self.spectrum_lr = real(v)?,
            "rmsprop_rho" => self.rmsprop_rho = real(v)?,
            "rmsprop_eps" => self.rmsprop_eps = real(v)?,
            "clip_threshold" => self.clip_threshold = optional(v, real)?,
            "weight_decay" => self.weight_decay = real(v)?,
            "batch_size" => self.batch_size = num(v)?,
            "epochs" => self.epochs = num(v)?,
            "epoch_len" => self.epoch_len = num(v)?,
            "val_batches" => self.val_batches = num(v)?,
            "seed" => self.seed = num(v)?,
            "patience" => self.patience = optional(v, num)?,
            "threshold" => {
                self.threshold = match v {
                    "auto" => Threshold::Auto,
                    "none" => Threshold::Off,
                    _ => Threshold::Value(real(v)?),
                }
            }
            "stop_on_threshold" => self.stop_on_threshold = flag(v)?,
            "copy_positions_only" => self.copy_positions_only = flag(v)?,
            "mnist_images" => self.mnist_images = path(v)?,
            "mnist_labels" => self.mnist_labels = path(v)?,
            "train_size" => self.train_size = optional(v, num)?,
            "val_size" => self.val_size = num(v)?,
            "permutation_seed" => self.permutation_seed = optional(v, num)?,
            "corpus" => self.corpus = path(v)?,
            "max_len" => self.max_len = num(v)?,
            "diag_cadence" => self.diag_cadence = num(v)?,
            "grad_norms" => self.grad_norms = flag(v)?,
            "norm_bound_check" => self.norm_bound_check = flag(v)?,
            "checkpoint_every" => self.checkpoint_every = num(v)?,
            "wall_clock" => self.wall_clock = flag(v)?,
            "output_dir" => self.output_dir = path(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Textual value of one key, as [`ExperimentConfig::set`] accepts it.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.as_str().into(),
            "T" => self.t.to_string(),
            "n_hidden" => self.n_hidden.to_string(),
            "nonlinearity" => self.nonlinearity.as_str().into(),
            "prelu_alpha" => show_real(self.prelu_alpha),
            "prelu_trainable" => self.prelu_trainable.to_string(),
            "transition" => self.transition.as_str().into(),
            "margin" => self.margin.map_or_else(|| "none".into(), show_real),
            "spectrum_mode" => self.spectrum_mode.as_str().into(),
            "init" => self.init.as_str().into(),
            "preact_gain" => show_real(self.preact_gain),
            "lambda_orth" => show_real(self.lambda_orth),
            "gamma_prior" => show_real(self.gamma_prior),
            "task_weight" => show_real(self.task_weight),
            "update_rule" => self.update_rule.as_str().into(),
            "euclidean_lr" => show_real(self.euclidean_lr),
            "geodesic_lr" => show_real(self.geodesic_lr),
            "spectrum_lr" => show_real(self.spectrum_lr),
            "rmsprop_rho" => show_real(self.rmsprop_rho),
            "rmsprop_eps" => show_real(self.rmsprop_eps),
            "clip_threshold" => self.clip_threshold.map_or_else(|| "none".into(), show_real),
            "weight_decay" => show_real(self.weight_decay),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "epoch_len" => self.epoch_len.to_string(),
            "val_batches" => self.val_batches.to_string(),
            "seed" => self.seed.to_string(),
            "patience" => show_opt(&self.patience),
            "threshold" => match self.threshold {
                Threshold::Auto => "auto".into(),
                Threshold::Off => "none".into(),
                Threshold::Value(x) => show_real(x),
            },
            "stop_on_threshold" => self.stop_on_threshold.to_string(),
            "copy_positions_only" => self.copy_positions_only.to_string(),
            "mnist_images" => show_path(&self.mnist_images),
            "mnist_labels" => show_path(&self.mnist_labels),
            "train_size" => show_opt(&self.train_size),
            "val_size" => self.val_size.to_string(),
            "permutation_seed" => show_opt(&self.permutation_seed),
            "corpus" => show_path(&self.corpus),
            "max_len" => self.max_len.to_string(),
            "diag_cadence" => self.diag_cadence.to_string(),
            "grad_norms" => self.grad_norms.to_string(),
            "norm_bound_check" => self.norm_bound_check.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            "output_dir" => show_path(&self.output_dir),
            _ => return None,
        })
    }

    /// The fully resolved configuration in the file format, one key per line.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. `origin` labels errors.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| Error::Config {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value).map_err(|m| err(format!("{key}: {m}")))?;
            seen.push(key);
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidArgument(message) => Error::Config {
                path: origin.to_string(),
                line: 0,
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Cross-key consistency checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.t == 0 || self.n_hidden == 0 || self.batch_size == 0 {
            return bad("T, n_hidden and batch_size must be positive");
        }
        if self.task == TaskKind::Copy && self.t < 10 {
            return bad("the copy task needs T >= 10");
        }
        if self.task == TaskKind::Adding && self.t < 2 {
            return bad("the adding task needs T >= 2");
        }
        if self.nonlinearity == NonlinKind::Oplu && self.n_hidden % 2 == 1 {
            return bad("oplu needs an even n_hidden");
        }
        if self.nonlinearity == NonlinKind::Prelu
            && !self.prelu_trainable
            && !(0.0..=1.0).contains(&self.prelu_alpha)
        {
            return bad("a clamped prelu_alpha must lie in [0, 1]");
        }
        if self.transition != TransitionChoice::Factorized
            && (self.margin.is_some() || self.spectrum_mode != SpectrumChoice::Auto)
        {
            return bad("margin and spectrum_mode only apply to a factorized transition");
        }
        if self.gamma_prior > 0.0 && self.transition != TransitionChoice::Factorized {
            return bad("gamma_prior needs a factorized transition");
        }
        if self.lambda_orth < 0.0 || self.gamma_prior < 0.0 || self.weight_decay < 0.0 {
            return bad("penalty weights and weight_decay must be nonnegative");
        }
        if self.transition == TransitionChoice::HardOrthogonal && self.init == InitKind::Glorot {
            return bad("a hard-orthogonal transition needs orthogonal or identity init");
        }
        self.spectrum()?;
        self.optim_config().validate()?;
        match self.task {
            TaskKind::Mnist | TaskKind::Pmnist
                if self.mnist_images.is_none() || self.mnist_labels.is_none() =>
            {
                bad("mnist tasks need mnist_images and mnist_labels")
            }
            TaskKind::Chars if self.corpus.is_none() => bad("the chars task needs a corpus"),
            _ => Ok(()),
        }
    }

    pub fn spectrum(&self) -> Result<SpectrumMode<f64>> {
        let from_margin = SpectrumMode::from_margin(self.margin)?;
        let mode = match (self.spectrum_mode, self.margin) {
            (SpectrumChoice::Auto, _) => from_margin,
            (SpectrumChoice::Direct, None) => SpectrumMode::Direct,
            (SpectrumChoice::Frozen, None) | (SpectrumChoice::Frozen, Some(0.0)) => {
                SpectrumMode::FrozenOrthogonal
            }
            (SpectrumChoice::Sigmoid, Some(m)) if m > 0.0 => SpectrumMode::SigmoidMargin(m),
            (choice, margin) => {
                return Err(Error::InvalidArgument(format!(
                    "spectrum_mode {} does not fit margin {}",
                    choice.as_str(),
                    margin.map_or_else(|| "none".into(), |m| m.to_string())
                )))
            }
        };
        Ok(mode)
    }

    pub fn transition_kind(&self) -> Result<TransitionKind<f64>> {
        Ok(match self.transition {
            TransitionChoice::Plain => TransitionKind::Plain,
            TransitionChoice::HardOrthogonal => TransitionKind::HardOrthogonal,
            TransitionChoice::Factorized => TransitionKind::Factorized(self.spectrum()?),
        })
    }

    pub fn nonlinearity(&self) -> Nonlinearity<f64> {
        match self.nonlinearity {
            NonlinKind::Identity => Nonlinearity::Identity,
            NonlinKind::Tanh => Nonlinearity::Tanh,
            NonlinKind::Relu => Nonlinearity::Relu,
            NonlinKind::Oplu => Nonlinearity::Oplu,
            NonlinKind::Prelu => Nonlinearity::Prelu {
                alpha: self.prelu_alpha,
                trainable: self.prelu_trainable,
            },
        }
    }

    pub fn optim_config(&self) -> OptimConfig<f64> {
        OptimConfig {
            rule: self.update_rule,
            euclidean_lr: self.euclidean_lr,
            geodesic_lr: self.geodesic_lr,
            spectrum_lr: self.spectrum_lr,
            rho: self.rmsprop_rho,
            eps: self.rmsprop_eps,
            clip_threshold: self.clip_threshold,
            weight_decay: self.weight_decay,
        }
    }

    pub fn metric(&self) -> Metric {
        match self.task {
            TaskKind::Copy | TaskKind::Mnist | TaskKind::Pmnist => Metric::Accuracy,
            TaskKind::Adding => Metric::Mse,
            TaskKind::Chars => Metric::Bpc,
        }
    }

    pub fn threshold_value(&self) -> Option<f64> {
        match self.threshold {
            Threshold::Off => None,
            Threshold::Value(x) => Some(x),
            Threshold::Auto => match self.task {
                TaskKind::Copy => Some(0.95),
                TaskKind::Adding => Some(0.05),
                _ => None,
            },
        }
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &ExperimentConfig) -> Vec<&'static str> {
        CONFIG_KEYS
            .iter()
            .copied()
            .filter(|k| self.get(k) != other.get(k))
            .collect()
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse_str(&text, &path.display().to_string())
}
