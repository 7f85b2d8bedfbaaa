use crate::error::{Error, Result};
use crate::matcore::Matrix;
use crate::rnncell::{forward, Batch, RnnModel, Targets};
use crate::trainer::config::Metric;

/// Masked sums over a set of batches, from which every metric follows.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalTotals {
    pub weight: f64,
    pub correct: f64,
    pub cross_entropy: f64,
    pub squared_error: f64,
}

impl EvalTotals {
    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.correct / self.weight,
            Metric::Bpc => self.cross_entropy / self.weight / std::f64::consts::LN_2,
            Metric::Mse => self.squared_error / self.weight,
        }
    }
}

/// Accumulates the masked statistics of one batch's outputs.
pub fn accumulate(totals: &mut EvalTotals, outputs: &[Matrix<f64>], batch: &Batch<f64>) -> Result<()> {
    for (t, y) in outputs.iter().enumerate() {
        for (col, &w) in batch.mask[t].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            totals.weight += w;
            match &batch.targets {
                Targets::Classes(classes) => {
                    let c = classes[t][col];
                    if c >= y.rows() {
                        return Err(Error::Dimension(format!("class {c} out of range")));
                    }
                    let column: Vec<f64> = (0..y.rows()).map(|i| y[(i, col)]).collect();
                    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + column.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    totals.cross_entropy += w * (lse - column[c]);
                    // first maximal index wins ties
                    let argmax = column
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &v)| if v > column[best] { i } else { best });
                    if argmax == c {
                        totals.correct += w;
                    }
                }
                Targets::Values(values) => {
                    let err: f64 = (0..y.rows())
                        .map(|i| (y[(i, col)] - values[t][(i, col)]).powi(2))
                        .sum();
                    totals.squared_error += w * err;
                }
            }
        }
    }
    Ok(())
}

/// Accuracy (argmax hits over scored steps), bits per character (mean
/// masked cross-entropy over ln 2) or mean squared error.
pub fn evaluate(model: &RnnModel<f64>, batches: &[Batch<f64>], metric: Metric) -> Result<f64> {
    let mut totals = EvalTotals::default();
    for batch in batches {
        let (outputs, _) = forward(model, batch)?;
        accumulate(&mut totals, &outputs, batch)?;
    }
    if totals.weight == 0.0 {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    Ok(totals.metric(metric))
}
