//! Training-time measurements: singular-spectrum traces, per-timestep
//! gradient norms, the per-step norm bound of backpropagation, and CSV export.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matcore::singular_values_jacobi;
use crate::rnncell::{forward, hidden_grad_norms, Batch, ForwardTape, RnnModel, Transition};

/// Summary statistics of a spectrum; `std` is the population deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SpectrumStats {
    pub fn of(values: &[f64]) -> SpectrumStats {
        if values.is_empty() {
            return SpectrumStats {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        SpectrumStats {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Realized singular values of a transition: read off the spectrum
/// parameters when factorized, by Jacobi SVD otherwise.
pub fn transition_singular_values(transition: &Transition<f64>) -> Vec<f64> {
    match transition {
        Transition::Factorized(f) => f.singular_values(),
        Transition::Plain { w, .. } => singular_values_jacobi(w),
    }
}

pub fn record_spectrum(transition: &Transition<f64>) -> SpectrumStats {
    SpectrumStats::of(&transition_singular_values(transition))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumRow {
    pub epoch: usize,
    pub stats: SpectrumStats,
}

/// Spectrum statistics over the course of training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectrumTrace {
    pub rows: Vec<SpectrumRow>,
}

impl SpectrumTrace {
    pub fn record(&mut self, epoch: usize, transition: &Transition<f64>) -> SpectrumStats {
        let stats = record_spectrum(transition);
        self.rows.push(SpectrumRow { epoch, stats });
        stats
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// How a grad-norm row is rescaled for export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridScale {
    Raw,
    /// Each row divided by its sum.
    SumNormalized,
    /// Each row divided by its maximum.
    UnitMax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub iteration: usize,
    /// `‖∂L/∂h_t‖` for `t = 1..=T`.
    pub norms: Vec<f64>,
}

/// Gradient norms indexed by (update, timestep).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradNormGrid {
    pub rows: Vec<GridRow>,
}

fn rescale(norms: &[f64], scale: GridScale) -> Vec<f64> {
    let d = match scale {
        GridScale::Raw => return norms.to_vec(),
        GridScale::SumNormalized => norms.iter().sum::<f64>(),
        GridScale::UnitMax => norms.iter().copied().fold(0.0, f64::max),
    };
    if d > 0.0 {
        norms.iter().map(|x| x / d).collect()
    } else {
        norms.to_vec()
    }
}

impl GradNormGrid {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, index: usize, scale: GridScale) -> Vec<f64> {
        rescale(&self.rows[index].norms, scale)
    }

    /// A view for [`export_csv`].
    pub fn table(&self, scale: GridScale) -> GridTable<'_> {
        GridTable { grid: self, scale }
    }
}

/// Adds one row of hidden-state gradient norms, measured with the loss taken
/// at the final step only.
pub fn record_grad_norms(
    grid: &mut GradNormGrid,
    model: &RnnModel<f64>,
    probe: &Batch<f64>,
    iteration: usize,
) -> Result<Vec<f64>> {
    let probe = probe.with_last_step_mask();
    let (_, tape) = forward(model, &probe)?;
    let norms = hidden_grad_norms(model, &tape, &probe)?;
    grid.rows.push(GridRow {
        iteration,
        norms: norms.clone(),
    });
    Ok(norms)
}

/// One step of the norm-bound audit: `lhs` is the exact gain of the map from
/// `δa_{t+1}` to `δa_t` for one sample, `rhs` the bound `|g| λ_D λ_W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBoundRecord {
    pub t: usize,
    pub column: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Per-step gains of the backward recurrence for the first `columns` samples.
pub fn norm_bound_records(
    model: &RnnModel<f64>,
    tape: &ForwardTape<f64>,
    columns: usize,
) -> Vec<NormBoundRecord> {
    let gain = model.preact_gain.abs();
    let lambda_w = transition_singular_values(&model.transition)
        .into_iter()
        .fold(0.0, f64::max);
    let mut out = Vec::new();
    for t in 1..tape.len() {
        let jac = &tape.jacobians[t - 1];
        for column in 0..columns.min(tape.batch_size()) {
            let step = tape
                .w
                .matmul(&jac.column_matrix(column))
                .expect("square transition");
            let lhs = gain * singular_values_jacobi(&step)[0];
            let rhs = gain * jac.column_gain(column) * lambda_w;
            out.push(NormBoundRecord { t, column, lhs, rhs });
        }
    }
    out
}

/// Steps whose gain exceeds the bound by more than `1e-8` (expected empty).
pub fn check_norm_bound(model: &RnnModel<f64>, tape: &ForwardTape<f64>) -> Vec<NormBoundRecord> {
    norm_bound_records(model, tape, 2)
        .into_iter()
        .filter(|r| r.lhs > r.rhs + 1e-8)
        .collect()
}

/// Something with a header and numeric rows whose first column is an integer
/// key (epoch or iteration).
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<(usize, Vec<f64>)>;
}

impl CsvTable for SpectrumTrace {
    fn header(&self) -> Vec<String> {
        ["epoch", "mean", "std", "min", "max"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.rows
            .iter()
            .map(|r| (r.epoch, vec![r.stats.mean, r.stats.std, r.stats.min, r.stats.max]))
            .collect()
    }
}

pub struct GridTable<'a> {
    grid: &'a GradNormGrid,
    scale: GridScale,
}

impl CsvTable for GridTable<'_> {
    fn header(&self) -> Vec<String> {
        let steps = self.grid.rows.first().map_or(0, |r| r.norms.len());
        std::iter::once("iteration".to_string())
            .chain((1..=steps).map(|t| format!("t{t}")))
            .collect()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.grid
            .rows
            .iter()
            .map(|r| (r.iteration, rescale(&r.norms, self.scale)))
            .collect()
    }
}

/// Renders a real with 17 significant digits, enough to round-trip `f64`.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_csv_string(table: &dyn CsvTable) -> String {
    let mut out = table.header().join(",");
    out.push('\n');
    for (key, values) in table.rows() {
        let _ = write!(out, "{key}");
        for v in values {
            out.push(',');
            out.push_str(&format_real(v));
        }
        out.push('\n');
    }
    out
}

pub fn export_csv(table: &dyn CsvTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(table)).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_csv`]: header and numeric rows (the key
/// column included as a real).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format {
            format: "CSV",
            detail: "missing header".into(),
        })?
        .split(',')
        .map(String::from)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|cell| cell.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    format: "CSV",
                    detail: format!("row {}: {e}", i + 1),
                })?;
            if row.len() != header.len() {
                return Err(Error::Format {
                    format: "CSV",
                    detail: format!("row {} has {} cells, header has {}", i + 1, row.len(), header.len()),
                });
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{orthogonal_init, Matrix, Rng};
    use crate::rnncell::{InitKind, Nonlinearity, Targets, TransitionKind};
    use crate::spectral::{compose, FactorizedTransition, SpectrumMode};

    #[test]
    fn orthogonal_factorized_spectrum_is_exactly_one() {
        let f = FactorizedTransition::<f64>::orthogonal(16, SpectrumMode::SigmoidMargin(0.5), &mut Rng::new(0));
        let s = record_spectrum(&Transition::Factorized(f));
        assert_eq!((s.mean, s.std, s.min, s.max), (1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn two_point_statistics() {
        let s = SpectrumStats::of(&[0.9, 1.1]);
        assert_eq!((s.mean, s.min, s.max), (1.0, 0.9, 1.1));
        assert!((s.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn plain_spectrum_comes_from_svd() {
        let mut rng = Rng::new(4);
        let u = orthogonal_init(3, 3, &mut rng);
        let v = orthogonal_init(3, 3, &mut rng);
        let w = compose(&u, &[2.0, 1.0, 0.5], &v).unwrap();
        let s = record_spectrum(&Transition::Plain { w, hard_orthogonal: false });
        assert!((s.max - 2.0).abs() < 1e-8 && (s.min - 0.5).abs() < 1e-8);
    }

    fn last_step_batch(steps: usize, n_in: usize, n_out: usize, bs: usize, rng: &mut Rng) -> Batch<f64> {
        let inputs = (0..steps).map(|_| Matrix::from_fn(n_in, bs, |_, _| rng.normal())).collect();
        let targets = (0..steps).map(|_| Matrix::from_fn(n_out, bs, |_, _| rng.normal())).collect();
        let mask = (0..steps).map(|t| vec![if t + 1 == steps { 1.0 } else { 0.0 }; bs]).collect();
        Batch::new(inputs, Targets::Values(targets), mask).unwrap()
    }

    #[test]
    fn contraction_makes_norms_grow_toward_the_end() {
        let mut rng = Rng::new(5);
        let mut model = RnnModel::new(2, 4, 1, Nonlinearity::Identity, TransitionKind::Plain, InitKind::Identity, &mut rng).unwrap();
        model.transition = Transition::Plain { w: Matrix::identity(4).scale(0.5), hard_orthogonal: false };
        let batch = last_step_batch(10, 2, 1, 3, &mut rng);
        let mut grid = GradNormGrid::default();
        let norms = record_grad_norms(&mut grid, &model, &batch, 0).unwrap();
        for t in 1..norms.len() {
            assert!(norms[t] > norms[t - 1]);
            assert!((norms[t - 1] / norms[t] - 0.5).abs() < 1e-12);
        }
        let unit = grid.row(0, GridScale::UnitMax);
        assert_eq!(*unit.last().unwrap(), 1.0);
        let sum: f64 = grid.row(0, GridScale::SumNormalized).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_orthogonal_steps_meet_the_bound_with_equality() {
        let mut rng = Rng::new(6);
        let model = RnnModel::new(3, 6, 2, Nonlinearity::Identity, TransitionKind::Plain, InitKind::Orthogonal, &mut rng).unwrap();
        let batch = last_step_batch(8, 3, 2, 2, &mut rng);
        let (_, tape) = forward(&model, &batch).unwrap();
        for r in norm_bound_records(&model, &tape, 2) {
            assert!((r.lhs - 1.0).abs() < 1e-10 && (r.rhs - 1.0).abs() < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn csv_round_trips_bitwise_and_empty_trace_is_header_only() {
        let empty = SpectrumTrace::default();
        assert_eq!(to_csv_string(&empty), "epoch,mean,std,min,max\n");
        let mut trace = SpectrumTrace::default();
        for (e, x) in [(0, 0.1f64), (1, 1.0 / 3.0), (2, std::f64::consts::PI)] {
            trace.rows.push(SpectrumRow {
                epoch: e,
                stats: SpectrumStats { mean: x, std: x * 1e-7, min: -x, max: x.exp() },
            });
        }
        let text = to_csv_string(&trace);
        assert_eq!(text.lines().count(), 4);
        let (header, rows) = parse_csv(&text).unwrap();
        assert_eq!(header.len(), 5);
        for (row, orig) in rows.iter().zip(&trace.rows) {
            assert_eq!(row[1].to_bits(), orig.stats.mean.to_bits());
            assert_eq!(row[2].to_bits(), orig.stats.std.to_bits());
            assert_eq!(row[4].to_bits(), orig.stats.max.to_bits());
        }
    }
}
