//! Binary checkpoints: `SRNN1` magic, a `key = value` manifest, then named
//! tensors stored as little-endian `f64` with 64-bit shape headers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::{Matrix, Rng, RngState};
use crate::optim::{OptimConfig, OptimState, UpdateRule};
use crate::rnncell::{InitKind, Nonlinearity, RnnModel, Transition, TransitionKind};
use crate::spectral::{FactorizedTransition, SpectrumMode};

pub const MAGIC: &[u8; 5] = b"SRNN1";
const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            name: name.to_string(),
            dims,
            data,
        }
    }

    pub fn vector(name: &str, data: &[f64]) -> Tensor {
        Tensor::new(name, vec![data.len()], data.to_vec())
    }

    pub fn matrix(name: &str, m: &Matrix<f64>) -> Tensor {
        Tensor::new(name, vec![m.rows(), m.cols()], m.as_slice().to_vec())
    }

    pub fn scalar(name: &str, x: f64) -> Tensor {
        Tensor::new(name, vec![], vec![x])
    }

    /// Rows of a rank-2 table.
    pub fn table(name: &str, width: usize, rows: &[Vec<f64>]) -> Tensor {
        Tensor::new(name, vec![rows.len(), width], rows.concat())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        match self.dims.as_slice() {
            [_, w] if *w > 0 => self.data.chunks(*w).map(<[f64]>::to_vec).collect(),
            _ => Vec::new(),
        }
    }
}

/// Raw checkpoint contents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub manifest: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

fn ckpt_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        detail: detail.into(),
    }
}

impl Checkpoint {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.manifest.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.manifest.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| ckpt_err(format!("manifest lacks `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| ckpt_err(format!("manifest value `{v}` for `{key}` is malformed")))
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ckpt_err(format!("tensor `{name}` is missing")))
    }

    /// Tensor data, checked against the expected shape.
    pub fn tensor_data(&self, name: &str, dims: &[usize]) -> Result<&[f64]> {
        let t = self.tensor(name)?;
        if t.dims != dims {
            return Err(ckpt_err(format!(
                "tensor `{name}` has shape {:?}, expected {dims:?}",
                t.dims
            )));
        }
        Ok(&t.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = format!("format_version = {FORMAT_VERSION}\n");
        for (k, v) in &self.manifest {
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(ckpt_err(format!(
                "bad magic {:?}; expected SRNN1",
                String::from_utf8_lossy(magic)
            )));
        }
        let len = r.u64("manifest length")?;
        let text = std::str::from_utf8(r.take(len, "manifest")?)
            .map_err(|_| ckpt_err("manifest is not UTF-8"))?;
        let mut ckpt = Checkpoint::default();
        for line in text.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| ckpt_err(format!("malformed manifest line `{line}`")))?;
            if k == "format_version" {
                if v != FORMAT_VERSION {
                    return Err(ckpt_err(format!(
                        "format version {v} is not supported (expected {FORMAT_VERSION})"
                    )));
                }
            } else {
                ckpt.manifest.push((k.to_string(), v.to_string()));
            }
        }
        while r.pos < bytes.len() {
            let name_len = r.u64("tensor name length")?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u64("tensor rank")?;
            let dims = (0..rank)
                .map(|_| r.u64("tensor dims"))
                .collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&c| c.checked_mul(8).is_some())
                .ok_or_else(|| ckpt_err(format!("tensor `{name}` is implausibly large")))?;
            let raw = r.take(count * 8, "tensor data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            ckpt.tensors.push(Tensor { name, dims, data });
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ckpt_err(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("eight bytes")))
            .map_err(|_| ckpt_err(format!("{what} does not fit in memory")))
    }
}

fn real(x: f64) -> String {
    format!("{x:?}")
}

/// Stores the model's structure in the manifest and its parameters as tensors.
pub fn write_model(ckpt: &mut Checkpoint, model: &RnnModel<f64>) {
    ckpt.set("model.n_in", model.n_in);
    ckpt.set("model.n_hidden", model.n_hidden);
    ckpt.set("model.n_out", model.n_out);
    ckpt.set("model.nonlinearity", model.nonlinearity.name());
    if let Nonlinearity::Prelu { trainable, .. } = model.nonlinearity {
        ckpt.set("model.prelu_trainable", trainable);
    }
    ckpt.set("model.preact_gain", real(model.preact_gain));
    ckpt.push(Tensor::matrix("w_in", &model.w_in));
    match &model.transition {
        Transition::Plain { w, hard_orthogonal } => {
            ckpt.set(
                "model.transition",
                if *hard_orthogonal { "hard_orthogonal" } else { "plain" },
            );
            ckpt.push(Tensor::matrix("w", w));
        }
        Transition::Factorized(f) => {
            ckpt.set("model.transition", "factorized");
            let (mode, margin) = match f.mode {
                SpectrumMode::SigmoidMargin(m) => ("sigmoid", real(m)),
                SpectrumMode::Direct => ("direct", "none".into()),
                SpectrumMode::FrozenOrthogonal => ("frozen", "0.0".into()),
            };
            ckpt.set("model.spectrum_mode", mode);
            ckpt.set("model.margin", margin);
            ckpt.push(Tensor::matrix("u", &f.u));
            ckpt.push(Tensor::matrix("v", &f.v));
            ckpt.push(Tensor::vector("p", &f.p));
        }
    }
    ckpt.push(Tensor::vector("b", &model.b));
    ckpt.push(Tensor::matrix("w_out", &model.w_out));
    ckpt.push(Tensor::vector("b_out", &model.b_out));
    ckpt.push(Tensor::vector("h0", &model.h0));
    if let Nonlinearity::Prelu { alpha, .. } = model.nonlinearity {
        ckpt.push(Tensor::scalar("alpha", alpha));
    }
}

fn load_matrix(ckpt: &Checkpoint, name: &str, rows: usize, cols: usize) -> Result<Matrix<f64>> {
    Matrix::from_vec(rows, cols, ckpt.tensor_data(name, &[rows, cols])?.to_vec())
}

fn load_vector(ckpt: &Checkpoint, name: &str, len: usize) -> Result<Vec<f64>> {
    Ok(ckpt.tensor_data(name, &[len])?.to_vec())
}

/// Rebuilds a model from [`write_model`] output.
pub fn read_model(ckpt: &Checkpoint) -> Result<RnnModel<f64>> {
    let n_in: usize = ckpt.parse("model.n_in")?;
    let n: usize = ckpt.parse("model.n_hidden")?;
    let n_out: usize = ckpt.parse("model.n_out")?;
    let nonlinearity = match ckpt.require("model.nonlinearity")? {
        "identity" => Nonlinearity::Identity,
        "tanh" => Nonlinearity::Tanh,
        "relu" => Nonlinearity::Relu,
        "oplu" => Nonlinearity::Oplu,
        "prelu" => Nonlinearity::Prelu {
            alpha: ckpt.tensor_data("alpha", &[])?[0],
            trainable: ckpt.parse("model.prelu_trainable")?,
        },
        other => return Err(ckpt_err(format!("unknown nonlinearity `{other}`"))),
    };
    let transition = match ckpt.require("model.transition")? {
        kind @ ("plain" | "hard_orthogonal") => Transition::Plain {
            w: load_matrix(ckpt, "w", n, n)?,
            hard_orthogonal: kind == "hard_orthogonal",
        },
        "factorized" => {
            let mode = match ckpt.require("model.spectrum_mode")? {
                "sigmoid" => SpectrumMode::SigmoidMargin(ckpt.parse("model.margin")?),
                "direct" => SpectrumMode::Direct,
                "frozen" => SpectrumMode::FrozenOrthogonal,
                other => return Err(ckpt_err(format!("unknown spectrum mode `{other}`"))),
            };
            Transition::Factorized(FactorizedTransition {
                u: load_matrix(ckpt, "u", n, n)?,
                v: load_matrix(ckpt, "v", n, n)?,
                p: load_vector(ckpt, "p", n)?,
                mode,
            })
        }
        other => return Err(ckpt_err(format!("unknown transition `{other}`"))),
    };
    let mut model = RnnModel::new(
        n_in,
        n,
        n_out,
        nonlinearity,
        TransitionKind::Plain,
        InitKind::Identity,
        &mut Rng::new(0),
    )?;
    model.w_in = load_matrix(ckpt, "w_in", n, n_in)?;
    model.transition = transition;
    model.b = load_vector(ckpt, "b", n)?;
    model.w_out = load_matrix(ckpt, "w_out", n_out, n)?;
    model.b_out = load_vector(ckpt, "b_out", n_out)?;
    model.h0 = load_vector(ckpt, "h0", n)?;
    model.preact_gain = ckpt.parse("model.preact_gain")?;
    model.validate()?;
    Ok(model)
}

pub fn write_optim(ckpt: &mut Checkpoint, optim: &OptimState<f64>) {
    let c = &optim.config;
    ckpt.set(
        "optim.rule",
        match c.rule {
            UpdateRule::RmsProp => "rmsprop",
            UpdateRule::Sgd => "sgd",
        },
    );
    ckpt.set("optim.euclidean_lr", real(c.euclidean_lr));
    ckpt.set("optim.geodesic_lr", real(c.geodesic_lr));
    ckpt.set("optim.spectrum_lr", real(c.spectrum_lr));
    ckpt.set("optim.rho", real(c.rho));
    ckpt.set("optim.eps", real(c.eps));
    ckpt.set(
        "optim.clip_threshold",
        c.clip_threshold.map_or_else(|| "none".into(), real),
    );
    ckpt.set("optim.weight_decay", real(c.weight_decay));
    for (name, acc) in optim.accumulators() {
        ckpt.push(Tensor::vector(name, acc));
    }
}

pub fn read_optim(ckpt: &Checkpoint, model: &RnnModel<f64>) -> Result<OptimState<f64>> {
    let rule = match ckpt.require("optim.rule")? {
        "rmsprop" => UpdateRule::RmsProp,
        "sgd" => UpdateRule::Sgd,
        other => return Err(ckpt_err(format!("unknown update rule `{other}`"))),
    };
    let clip = match ckpt.require("optim.clip_threshold")? {
        "none" => None,
        _ => Some(ckpt.parse("optim.clip_threshold")?),
    };
    let config = OptimConfig {
        rule,
        euclidean_lr: ckpt.parse("optim.euclidean_lr")?,
        geodesic_lr: ckpt.parse("optim.geodesic_lr")?,
        spectrum_lr: ckpt.parse("optim.spectrum_lr")?,
        rho: ckpt.parse("optim.rho")?,
        eps: ckpt.parse("optim.eps")?,
        clip_threshold: clip,
        weight_decay: ckpt.parse("optim.weight_decay")?,
    };
    let mut optim = OptimState::new(config, model)?;
    let names: Vec<&'static str> = optim.accumulators().iter().map(|(n, _)| *n).collect();
    for name in names {
        let slot = optim.accumulator_mut(name).expect("listed accumulator");
        let len = slot.len();
        *slot = load_vector(ckpt, name, len)?;
    }
    Ok(optim)
}

pub fn write_rng(ckpt: &mut Checkpoint, prefix: &str, rng: &Rng) {
    let s = rng.state();
    ckpt.set(&format!("{prefix}.seed"), s.seed);
    ckpt.set(&format!("{prefix}.word_pos"), s.word_pos);
}

pub fn read_rng(ckpt: &Checkpoint, prefix: &str) -> Result<Rng> {
    Ok(Rng::from_state(RngState {
        seed: ckpt.parse(&format!("{prefix}.seed"))?,
        word_pos: ckpt.parse(&format!("{prefix}.word_pos"))?,
    }))
}

/// Saves a model with its optimizer state.
pub fn save_checkpoint(
    model: &RnnModel<f64>,
    optim: &OptimState<f64>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut ckpt = Checkpoint::default();
    write_model(&mut ckpt, model);
    write_optim(&mut ckpt, optim);
    ckpt.write(path)
}

/// Loads what [`save_checkpoint`] (or a training run) wrote.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RnnModel<f64>, OptimState<f64>)> {
    let ckpt = Checkpoint::read(path)?;
    let model = read_model(&ckpt)?;
    let optim = read_optim(&ckpt, &model)?;
    Ok((model, optim))
}
