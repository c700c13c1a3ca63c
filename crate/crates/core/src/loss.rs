use rtsdoa_acoustics::ComplexSpectrogram;
use rtsdoa_autograd::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub ce: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(mse: f64, ce: f64) -> Self {
        LossReport { mse, ce, total: mse + ce }
    }

    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mse = reports.iter().map(|r| r.mse).sum::<f64>() / n;
        let ce = reports.iter().map(|r| r.ce).sum::<f64>() / n;
        LossReport::new(mse, ce)
    }
}

/// Mean over all (channel, frame, bin) points of the squared real and
/// imaginary differences.
pub fn mse_complex(y: &ComplexSpectrogram, yhat: &ComplexSpectrogram) -> Result<f64> {
    if (y.channels, y.frames, y.bins) != (yhat.channels, yhat.frames, yhat.bins) {
        return Err(Error::Metrics(format!(
            "mse: spectrogram ({}, {}, {}) vs ({}, {}, {})",
            y.channels, y.frames, y.bins, yhat.channels, yhat.frames, yhat.bins
        )));
    }
    let n = y.values.len().max(1) as f64;
    Ok(y.values.iter().zip(&yhat.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n)
}

/// Mean over rows of `-log softmax(row)[label]`; `logits` is row-major `[frames, classes]`.
pub fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 || logits.len() != classes * labels.len() {
        return Err(Error::Metrics(format!(
            "cross entropy: {} logits for {} frames of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &l) in logits.chunks(classes).zip(labels) {
        if l >= classes {
            return Err(Error::Metrics(format!("label {l} outside {classes} classes")));
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[l];
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Graph nodes for the joint objective: the enhancement term matches
/// [`mse_complex`] on the real/imaginary stack (hence the factor 2 over the
/// per-real-value mean).
pub struct JointLoss {
    pub total: Var,
    pub mse: Option<Var>,
    pub ce: Var,
}

pub fn joint_loss<S: Real>(
    g: &mut Graph<S>,
    enhanced: Option<Var>,
    target: Option<Var>,
    logits: Var,
    labels: &[usize],
) -> Result<JointLoss> {
    let ce = g.cross_entropy(logits, labels)?;
    let mse = match (enhanced, target) {
        (Some(e), Some(t)) => {
            let m = g.mse(e, t)?;
            Some(g.scale(m, S::c(2.0)))
        }
        _ => None,
    };
    let total = match mse {
        Some(m) => g.add(m, ce)?,
        None => ce,
    };
    Ok(JointLoss { total, mse, ce })
}

impl JointLoss {
    pub fn report<S: Real>(&self, g: &Graph<S>) -> LossReport {
        let mse = self.mse.map_or(0.0, |m| g.value(m).item().as_f64());
        LossReport::new(mse, g.value(self.ce).item().as_f64())
    }
}
