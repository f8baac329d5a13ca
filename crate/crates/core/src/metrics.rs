//! The six embedding distances: content, style, and content + α·style, each
//! under L2 or cosine distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embeddings::IconEmbedding;
use crate::error::{Error, Result};

/// Default style weight for the combined metric.
pub const DEFAULT_ALPHA: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Content,
    Style,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    #[serde(rename = "cos")]
    Cosine,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(MetricKind::Content),
            "style" => Ok(MetricKind::Style),
            "combined" => Ok(MetricKind::Combined),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "L2" => Ok(Norm::L2),
            "cos" | "cosine" => Ok(Norm::Cosine),
            _ => Err(Error::InvalidArgument(format!("unknown norm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: MetricKind,
    pub norm: Norm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl MetricConfig {
    pub fn content(norm: Norm) -> Self {
        MetricConfig {
            kind: MetricKind::Content,
            norm,
            alpha: None,
        }
    }

    pub fn style(norm: Norm) -> Self {
        MetricConfig {
            kind: MetricKind::Style,
            norm,
            alpha: None,
        }
    }

    pub fn combined(norm: Norm, alpha: f64) -> Result<Self> {
        let cfg = MetricConfig {
            kind: MetricKind::Combined,
            norm,
            alpha: Some(alpha),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// All six metrics; the combined ones use `alpha`.
    pub fn all(alpha: f64) -> Vec<MetricConfig> {
        let mut out = Vec::with_capacity(6);
        for norm in [Norm::L2, Norm::Cosine] {
            out.push(MetricConfig::content(norm));
            out.push(MetricConfig::style(norm));
            out.push(MetricConfig {
                kind: MetricKind::Combined,
                norm,
                alpha: Some(alpha),
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.alpha) {
            (MetricKind::Combined, Some(a)) if a.is_finite() && a >= 0.0 => Ok(()),
            (MetricKind::Combined, Some(a)) => Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {a}"
            ))),
            (MetricKind::Combined, None) => Err(Error::InvalidArgument("combined metric requires alpha".into())),
            (_, Some(_)) => Err(Error::InvalidArgument(
                "alpha is only valid for the combined metric".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    pub fn uses_content(&self) -> bool {
        self.kind != MetricKind::Style
    }

    pub fn uses_style(&self) -> bool {
        self.kind != MetricKind::Content
    }

    fn alpha_or_zero(&self) -> f64 {
        self.alpha.unwrap_or(0.0)
    }

    /// Largest normalized-comparable distance: `1 + α` for combined
    /// cosine, `1` for pure cosine. `None` for L2.
    pub fn cosine_bound(&self) -> Option<f64> {
        match (self.norm, self.kind) {
            (Norm::L2, _) => None,
            (Norm::Cosine, MetricKind::Combined) => Some(1.0 + self.alpha_or_zero()),
            (Norm::Cosine, _) => Some(1.0),
        }
    }
}

impl fmt::Display for MetricConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let norm = match self.norm {
            Norm::L2 => "l2",
            Norm::Cosine => "cos",
        };
        match self.kind {
            MetricKind::Content => write!(f, "content_{norm}"),
            MetricKind::Style => write!(f, "style_{norm}"),
            MetricKind::Combined => write!(f, "content_{norm}+{}*style_{norm}", self.alpha_or_zero()),
        }
    }
}

pub fn dot(x: &[f32], y: &[f32]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn squared_norm(x: &[f32]) -> f64 {
    dot(x, x)
}

pub fn l2(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `1 − x·y / (‖x‖‖y‖)` from precomputed parts. Two zero vectors are at
/// distance 0; a single zero vector is at distance 1.
pub fn cosine_from_parts(dot: f64, sq_norm_x: f64, sq_norm_y: f64) -> f64 {
    match (sq_norm_x == 0.0, sq_norm_y == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (sq_norm_x * sq_norm_y).sqrt()).max(0.0),
    }
}

pub fn cosine(x: &[f32], y: &[f32]) -> f64 {
    cosine_from_parts(dot(x, y), squared_norm(x), squared_norm(y))
}

fn check_dims(a: &IconEmbedding, b: &IconEmbedding, cfg: &MetricConfig) -> Result<()> {
    if cfg.uses_content() && a.content.len() != b.content.len() {
        return Err(Error::Shape(format!(
            "content dimensions differ: {} vs {}",
            a.content.len(),
            b.content.len()
        )));
    }
    if cfg.uses_style() && a.style.len() != b.style.len() {
        return Err(Error::Shape(format!(
            "style dimensions differ: {} vs {}",
            a.style.len(),
            b.style.len()
        )));
    }
    Ok(())
}

/// Distance between two embeddings under `cfg`.
pub fn distance(a: &IconEmbedding, b: &IconEmbedding, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    check_dims(a, b, cfg)?;
    let part = |x: &[f32], y: &[f32]| match cfg.norm {
        Norm::L2 => l2(x, y),
        Norm::Cosine => cosine(x, y),
    };
    Ok(match cfg.kind {
        MetricKind::Content => part(&a.content, &b.content),
        MetricKind::Style => part(&a.style, &b.style),
        MetricKind::Combined => part(&a.content, &b.content) + cfg.alpha_or_zero() * part(&a.style, &b.style),
    })
}

/// Maps a cosine-based distance onto [0, 1]: divides combined distances by
/// `1 + α`, passes pure cosine distances through. L2 distances have no
/// upper bound and are rejected.
pub fn normalize_distance(d: f64, cfg: &MetricConfig) -> Result<f64> {
    let bound = cfg.cosine_bound().ok_or(Error::UnsupportedNormalization)?;
    Ok((d / bound).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(content: &[f32], style: &[f32]) -> IconEmbedding {
        IconEmbedding {
            app_id: "x".into(),
            content: content.to_vec(),
            style: style.to_vec(),
        }
    }

    #[test]
    fn identical_embeddings_are_at_zero_under_all_metrics() {
        let a = emb(&[0.3, 1.7, 0.0, 2.2], &[4.0, 0.1, 9.5]);
        for cfg in MetricConfig::all(6.0) {
            assert_eq!(distance(&a, &a, &cfg).unwrap(), 0.0, "{cfg}");
        }
    }

    #[test]
    fn orthogonal_content_is_at_one() {
        let a = emb(&[1.0, 0.0, 0.0], &[1.0]);
        let b = emb(&[0.0, 1.0, 0.0], &[1.0]);
        assert_eq!(distance(&a, &b, &MetricConfig::content(Norm::Cosine)).unwrap(), 1.0);
    }

    #[test]
    fn combined_adds_weighted_style() {
        // content_cos = 0.1, style_cos = 0.05
        let a = emb(&[1.0, 0.0], &[1.0, 0.0]);
        let b = emb(&[0.9, (1.0f32 - 0.81).sqrt()], &[0.95, (1.0f32 - 0.9025).sqrt()]);
        let cfg = MetricConfig::combined(Norm::Cosine, 6.0).unwrap();
        let c = distance(&a, &b, &MetricConfig::content(Norm::Cosine)).unwrap();
        let s = distance(&a, &b, &MetricConfig::style(Norm::Cosine)).unwrap();
        assert!((c - 0.1).abs() < 1e-6 && (s - 0.05).abs() < 1e-6);
        assert!((distance(&a, &b, &cfg).unwrap() - 0.4).abs() < 1e-6);
        assert_eq!(distance(&a, &b, &cfg).unwrap(), c + 6.0 * s);
    }

    #[test]
    fn zero_vector_conventions() {
        let z = emb(&[0.0, 0.0], &[0.0]);
        let a = emb(&[1.0, 2.0], &[3.0]);
        let cfg = MetricConfig::content(Norm::Cosine);
        assert_eq!(distance(&z, &z, &cfg).unwrap(), 0.0);
        assert_eq!(distance(&z, &a, &cfg).unwrap(), 1.0);
        assert_eq!(distance(&a, &z, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = emb(&[1.0, 2.0], &[3.0]);
        let b = emb(&[1.0], &[3.0]);
        assert!(distance(&a, &b, &MetricConfig::content(Norm::L2)).is_err());
        // style-only metric does not look at content
        assert!(distance(&a, &b, &MetricConfig::style(Norm::L2)).is_ok());
    }

    #[test]
    fn alpha_validation() {
        assert!(MetricConfig::combined(Norm::Cosine, -1.0).is_err());
        assert!(MetricConfig::combined(Norm::Cosine, f64::NAN).is_err());
        let bad = MetricConfig {
            kind: MetricKind::Combined,
            norm: Norm::L2,
            alpha: None,
        };
        assert!(bad.validate().is_err());
        let bad = MetricConfig {
            kind: MetricKind::Style,
            norm: Norm::L2,
            alpha: Some(1.0),
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalization() {
        let cfg = MetricConfig::combined(Norm::Cosine, 6.0).unwrap();
        assert_eq!(normalize_distance(7.0, &cfg).unwrap(), 1.0);
        assert_eq!(normalize_distance(0.0, &cfg).unwrap(), 0.0);
        assert!((normalize_distance(1.89, &cfg).unwrap() - 0.27).abs() < 1e-12);
        assert_eq!(
            normalize_distance(0.4, &MetricConfig::content(Norm::Cosine)).unwrap(),
            0.4
        );
        assert!(matches!(
            normalize_distance(1.0, &MetricConfig::content(Norm::L2)),
            Err(Error::UnsupportedNormalization)
        ));
    }

    #[test]
    fn display_and_parse() {
        assert_eq!(
            MetricConfig::combined(Norm::Cosine, 6.0).unwrap().to_string(),
            "content_cos+6*style_cos"
        );
        assert_eq!("cos".parse::<Norm>().unwrap(), Norm::Cosine);
        assert_eq!("combined".parse::<MetricKind>().unwrap(), MetricKind::Combined);
        assert!("manhattan".parse::<Norm>().is_err());
    }
}
