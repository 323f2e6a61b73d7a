use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::Metric(format!("need at least {min} values, got {}", x.len())));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 1)?;
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Concordance correlation coefficient with population moments. Undefined
/// (an error) when both inputs are constant.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let n = x.len() as f64;
    let vx = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n;
    let vy = y.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n;
    if vx == 0.0 && vy == 0.0 {
        return Err(Error::Metric("ccc undefined: both inputs have zero variance".into()));
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    Ok(2.0 * cov / (vx + vy + (mx - my) * (mx - my)))
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of positions whose signs agree, with `sign(0) = 0`.
pub fn sagr(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x, y, 1)?;
    let agree = x.iter().zip(y).filter(|(a, b)| sign(**a) == sign(**b)).count();
    Ok(agree as f64 / x.len() as f64)
}

/// RMSE, SAGR and CCC of predictions against targets on one axis. `ccc` is
/// `None` when undefined; `ccc_error` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMetrics {
    pub rmse: f64,
    pub sagr: f64,
    pub ccc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_error: Option<String>,
}

impl AxisMetrics {
    pub fn compute(target: &[f64], predicted: &[f64]) -> Result<Self> {
        let (ccc, ccc_error) = match ccc(target, predicted) {
            Ok(v) => (Some(v), None),
            Err(Error::Metric(m)) if target.len() == predicted.len() => (None, Some(m)),
            Err(e) => return Err(e),
        };
        Ok(Self {
            rmse: rmse(target, predicted)?,
            sagr: sagr(target, predicted)?,
            ccc,
            ccc_error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Extreme,
    Validation,
}

/// Per-axis metrics over `n` (target, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub subset: Subset,
    pub n: usize,
    pub valence: AxisMetrics,
    pub arousal: AxisMetrics,
}

impl MetricReport {
    /// `targets` and `predictions` are `(valence, arousal)` pairs.
    pub fn compute(subset: Subset, targets: &[[f64; 2]], predictions: &[[f64; 2]]) -> Result<Self> {
        if targets.len() != predictions.len() {
            return Err(Error::Metric(format!(
                "{} targets but {} predictions",
                targets.len(),
                predictions.len()
            )));
        }
        let axis = |k: usize| -> Result<AxisMetrics> {
            let t: Vec<f64> = targets.iter().map(|p| p[k]).collect();
            let p: Vec<f64> = predictions.iter().map(|p| p[k]).collect();
            AxisMetrics::compute(&t, &p)
        };
        Ok(Self {
            subset,
            n: targets.len(),
            valence: axis(0)?,
            arousal: axis(1)?,
        })
    }
}
