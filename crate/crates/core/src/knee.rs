//! Knee-point selection on a retrieval-rate-versus-threshold curve
//! (Kneedle, offline form).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Difference-curve maxima at or below this are treated as "on the diagonal".
const DIAGONAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Knee {
    /// Threshold at the maximum of the normalized difference curve.
    At {
        threshold: f64,
        index: usize,
        difference: f64,
    },
    /// The curve never rises above the diagonal.
    NoKnee,
}

impl Knee {
    pub fn threshold(&self) -> Option<f64> {
        match self {
            Knee::At { threshold, .. } => Some(*threshold),
            Knee::NoKnee => None,
        }
    }
}

/// Min-max normalizes both axes, forms `y_n − x_n` and returns the
/// threshold where it peaks (first index on ties).
///
/// Requires at least three points, strictly increasing thresholds and
/// non-decreasing rates.
pub fn knee_threshold(curve: &[(f64, f64)]) -> Result<Knee> {
    if curve.len() < 3 {
        return Err(Error::InvalidCurve(format!(
            "need at least 3 points, got {}",
            curve.len()
        )));
    }
    if curve.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidCurve("non-finite point".into()));
    }
    for w in curve.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::InvalidCurve(format!(
                "thresholds must strictly increase ({} then {})",
                w[0].0, w[1].0
            )));
        }
        if w[1].1 < w[0].1 {
            return Err(Error::InvalidCurve(format!(
                "rates must not decrease ({} then {})",
                w[0].1, w[1].1
            )));
        }
    }

    let (x0, x1) = (curve[0].0, curve[curve.len() - 1].0);
    let (y0, y1) = (curve[0].1, curve[curve.len() - 1].1);
    if y1 == y0 {
        return Ok(Knee::NoKnee);
    }

    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &(x, y)) in curve.iter().enumerate() {
        let d = (y - y0) / (y1 - y0) - (x - x0) / (x1 - x0);
        if d > best.1 {
            best = (i, d);
        }
    }
    if best.1 <= DIAGONAL_TOLERANCE {
        return Ok(Knee::NoKnee);
    }
    Ok(Knee::At {
        threshold: curve[best.0].0,
        index: best.0,
        difference: best.1,
    })
}

/// `0, step, 2·step, …` up to and including `max` (within rounding).
pub fn threshold_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && max >= 0.0 && max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad threshold grid max={max} step={step}"
        )));
    }
    let n = (max / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * step).collect())
}
