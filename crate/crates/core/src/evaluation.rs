//! Retrieval-rate evaluation over labelled groups, threshold curves, and
//! counterfeit-candidate reports.
//!
//! A labelled image counts as retrieved at `k` when it appears in the
//! top-`k` (self excluded) of any other member of its group. Order inside
//! the top-`k` is ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{char_cosine_similarity, Corpus, LabelledGroup};
use crate::error::{Error, Result};
use crate::knee::{knee_threshold, Knee};
use crate::metrics::{self, MetricConfig, MetricKind, Norm};
use crate::retrieval::{query_top_k, Index, QueryFilter};
use crate::sift::{sift_distance, SiftDescriptorSet};

pub const ACCOUNTING: &str =
    "per-image: a labelled image is retrieved if it is in the top-k (self excluded) of any other member of its group";

pub const DEFAULT_KS: [usize; 4] = [5, 10, 15, 20];
pub const DEFAULT_COS_ALPHAS: [f64; 7] = [100.0, 10.0, 6.0, 2.0, 1.0, 0.5, 0.1];
pub const DEFAULT_L2_ALPHAS: [f64; 4] = [1e6, 1e7, 1e8, 1e9];

/// Group membership flattened to (group, row) pairs.
struct Labelled {
    rows: Vec<usize>,
    group: Vec<usize>,
    groups: usize,
}

impl Labelled {
    fn new(groups: &[LabelledGroup], row_of: impl Fn(&str) -> Option<usize>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut group = Vec::new();
        for (g, lg) in groups.iter().enumerate() {
            for id in lg.all_ids() {
                rows.push(row_of(id).ok_or_else(|| Error::UnknownAppId(id.to_string()))?);
                group.push(g);
            }
        }
        Ok(Labelled {
            rows,
            group,
            groups: groups.len(),
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Labelled positions sharing a group with position `i`, excluding `i`.
    fn mates(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let g = self.group[i];
        (0..self.len()).filter(move |&j| j != i && self.group[j] == g)
    }
}

/// For each labelled image, every (rank, distance) at which a groupmate's
/// query returned it.
#[derive(Debug, Clone)]
struct Hits {
    per_image: Vec<Vec<(usize, f64)>>,
}

impl Hits {
    fn retrieved_at(&self, i: usize, k: usize) -> bool {
        self.per_image[i].iter().any(|&(rank, _)| rank <= k)
    }

    fn rate(&self, k: usize, include: impl Fn(usize) -> bool) -> f64 {
        let considered: Vec<usize> = (0..self.per_image.len()).filter(|&i| include(i)).collect();
        if considered.is_empty() {
            return 0.0;
        }
        let hit = considered.iter().filter(|&&i| self.retrieved_at(i, k)).count();
        100.0 * hit as f64 / considered.len() as f64
    }

    /// Smallest distance at which image `i` is retrieved within top-`k`.
    fn min_distance(&self, i: usize, k: usize) -> Option<f64> {
        self.per_image[i]
            .iter()
            .filter(|&&(rank, _)| rank <= k)
            .map(|&(_, d)| d)
            .reduce(f64::min)
    }
}

fn map_rows<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `query` for every labelled image that `active` admits and records
/// where groupmates show up.
fn collect_hits(
    labelled: &Labelled,
    active: impl Fn(usize) -> bool + Sync + Send,
    query: impl Fn(usize) -> Result<Vec<(f64, usize)>> + Sync + Send,
) -> Result<Hits> {
    let lists = map_rows(labelled.len(), |i| {
        if active(i) {
            query(labelled.rows[i]).map(Some)
        } else {
            Ok(None)
        }
    })?;
    let mut per_image = vec![Vec::new(); labelled.len()];
    for (i, list) in lists.iter().enumerate() {
        let Some(list) = list else { continue };
        for j in labelled.mates(i) {
            if let Some(pos) = list.iter().position(|&(_, row)| row == labelled.rows[j]) {
                per_image[j].push((pos + 1, list[pos].0));
            }
        }
    }
    Ok(Hits { per_image })
}

fn embedding_hits(index: &Index, labelled: &Labelled, k_max: usize) -> Result<Hits> {
    let cosine = index.metric().cosine_bound().is_some();
    collect_hits(
        labelled,
        |_| true,
        |row| {
            let target = index.store().embedding(row);
            let res = query_top_k(index, &target, k_max, &QueryFilter::others(), None)?;
            Ok(res
                .into_iter()
                .map(|r| {
                    let d = if cosine {
                        r.normalized_distance.unwrap_or(r.raw_distance)
                    } else {
                        r.raw_distance
                    };
                    (d, index.row_of(&r.app_id).expect("result comes from the index"))
                })
                .collect())
        },
    )
}

/// Retrieval rate in percent at a single `k` under `metric`.
pub fn retrieval_rate(index: &Index, groups: &[LabelledGroup], k: usize, metric: &MetricConfig) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let index = index.with_metric(*metric)?;
    let labelled = Labelled::new(groups, |id| index.row_of(id))?;
    Ok(embedding_hits(&index, &labelled, k)?.rate(k, |_| true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHits {
    pub base_app_id: String,
    pub retrieved: Vec<String>,
    pub missed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricConfig>,
    /// Percent, one entry per `k`.
    pub rates: Vec<f64>,
    /// Hit lists at the largest `k`.
    pub groups: Vec<GroupHits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftSummary {
    /// Labelled images without descriptors, left out of the SIFT rates.
    pub excluded_empty: usize,
    pub row: RateRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub cos_alphas: Vec<f64>,
    pub l2_alphas: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: DEFAULT_KS.to_vec(),
            cos_alphas: DEFAULT_COS_ALPHAS.to_vec(),
            l2_alphas: DEFAULT_L2_ALPHAS.to_vec(),
        }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument("k list must be non-empty and positive".into()));
        }
        for a in self.cos_alphas.iter().chain(&self.l2_alphas) {
            if !a.is_finite() || *a < 0.0 {
                return Err(Error::InvalidArgument(format!("bad alpha {a}")));
            }
        }
        Ok(())
    }

    fn k_max(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }

    /// Rows in table order: cosine block then L2 block; content, style,
    /// then combined with cosine α descending and L2 α ascending.
    pub fn metrics(&self) -> Vec<(String, MetricConfig)> {
        let mut cos = self.cos_alphas.clone();
        cos.sort_by(|a, b| b.total_cmp(a));
        let mut l2 = self.l2_alphas.clone();
        l2.sort_by(f64::total_cmp);
        let mut out = Vec::new();
        for (norm, alphas, tag) in [(Norm::Cosine, cos, "cos"), (Norm::L2, l2, "l2")] {
            out.push((format!("content_{tag}"), MetricConfig::content(norm)));
            out.push((format!("style_{tag}"), MetricConfig::style(norm)));
            for &a in alphas.iter() {
                out.push((
                    format!("content_{tag}+a*style_{tag} a={a}"),
                    MetricConfig {
                        kind: MetricKind::Combined,
                        norm,
                        alpha: Some(a),
                    },
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub accounting: String,
    pub groups: usize,
    pub labelled_images: usize,
    pub options: EvalOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sift: Option<SiftSummary>,
    pub rows: Vec<RateRow>,
}

fn rate_row(
    label: String,
    metric: Option<MetricConfig>,
    hits: &Hits,
    labelled: &Labelled,
    groups: &[LabelledGroup],
    ks: &[usize],
    include: impl Fn(usize) -> bool + Copy,
) -> RateRow {
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let mut group_hits: Vec<GroupHits> = groups
        .iter()
        .map(|g| GroupHits {
            base_app_id: g.base_app_id.clone(),
            retrieved: Vec::new(),
            missed: Vec::new(),
        })
        .collect();
    let ids: Vec<&str> = groups.iter().flat_map(|g| g.all_ids()).collect();
    for i in (0..labelled.len()).filter(|&i| include(i)) {
        let gh = &mut group_hits[labelled.group[i]];
        if hits.retrieved_at(i, k_max) {
            gh.retrieved.push(ids[i].to_string());
        } else {
            gh.missed.push(ids[i].to_string());
        }
    }
    RateRow {
        label,
        metric,
        rates: ks.iter().map(|&k| hits.rate(k, include)).collect(),
        groups: group_hits,
    }
}

/// Retrieval rates for every metric in `options` at every `k`.
pub fn evaluate(index: &Index, groups: &[LabelledGroup], options: &EvalOptions) -> Result<EvaluationReport> {
    options.validate()?;
    let labelled = Labelled::new(groups, |id| index.row_of(id))?;
    let mut rows = Vec::new();
    for (label, metric) in options.metrics() {
        let idx = index.with_metric(metric)?;
        let hits = embedding_hits(&idx, &labelled, options.k_max())?;
        log::info!("evaluated {label}");
        rows.push(rate_row(
            label,
            Some(metric),
            &hits,
            &labelled,
            groups,
            &options.ks,
            |_| true,
        ));
    }
    Ok(EvaluationReport {
        config_hash: None,
        accounting: ACCOUNTING.to_string(),
        groups: labelled.groups,
        labelled_images: labelled.len(),
        options: options.clone(),
        sift: None,
        rows,
    })
}

/// SIFT baseline row. `sets` is indexed by corpus row; icons with no
/// descriptors are neither queried nor returned, and labelled ones are
/// counted in `excluded_empty`.
pub fn sift_rates(
    corpus: &Corpus,
    sets: &[SiftDescriptorSet],
    groups: &[LabelledGroup],
    ks: &[usize],
) -> Result<SiftSummary> {
    if sets.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} descriptor sets for {} corpus rows",
            sets.len(),
            corpus.len()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("k list must be non-empty and positive".into()));
    }
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let labelled = Labelled::new(groups, |id| corpus.row_of(id))?;
    let records = corpus.records();
    let non_empty = |row: usize| !sets[row].is_empty();
    let hits = collect_hits(
        &labelled,
        |i| non_empty(labelled.rows[i]),
        |q| {
            let mut all: Vec<(f64, usize)> = Vec::new();
            for row in (0..sets.len()).filter(|&r| r != q && non_empty(r)) {
                all.push((sift_distance(&sets[q], &sets[row])?, row));
            }
            all.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| records[a.1].app_id.cmp(&records[b.1].app_id))
            });
            all.truncate(k_max);
            Ok(all)
        },
    )?;
    let include = |i: usize| non_empty(labelled.rows[i]);
    let excluded_empty = (0..labelled.len()).filter(|&i| !include(i)).count();
    Ok(SiftSummary {
        excluded_empty,
        row: rate_row("sift".into(), None, &hits, &labelled, groups, ks, include),
    })
}

fn fmt_alpha(a: f64) -> String {
    if a >= 1e5 {
        format!("{a:e}")
    } else {
        format!("{a}")
    }
}

fn fmt_rates(out: &mut String, label: &str, rates: &[f64]) {
    let _ = write!(out, "{label:<28}");
    for r in rates {
        let _ = write!(out, " {:>8}", format!("{r:.2}%"));
    }
    out.push('\n');
}

impl EvaluationReport {
    /// Plain-text grid: one row per embedding, one column per `k`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.accounting);
        let _ = writeln!(
            out,
            "# {} groups, {} labelled images",
            self.groups, self.labelled_images
        );
        let _ = write!(out, "{:<28}", "embedding");
        for k in &self.options.ks {
            let _ = write!(out, " {:>8}", format!("top-{k}"));
        }
        out.push('\n');
        if let Some(s) = &self.sift {
            fmt_rates(&mut out, "SIFT", &s.row.rates);
            if s.excluded_empty > 0 {
                let _ = writeln!(
                    out,
                    "  ({} labelled icons without keypoints excluded)",
                    s.excluded_empty
                );
            }
        }
        for (norm, heading, tag) in [
            (Norm::Cosine, "cosine distance", "cos"),
            (Norm::L2, "L2 distance", "L2"),
        ] {
            let _ = writeln!(out, "-- {heading}");
            let mut combined_header = false;
            for row in self.rows.iter().filter(|r| r.metric.map(|m| m.norm) == Some(norm)) {
                let m = row.metric.expect("filtered on metric");
                match m.kind {
                    MetricKind::Content => fmt_rates(&mut out, &format!("Content_{tag}"), &row.rates),
                    MetricKind::Style => fmt_rates(&mut out, &format!("Style_{tag}"), &row.rates),
                    MetricKind::Combined => {
                        if !combined_header {
                            let _ = writeln!(out, "Content_{tag} + a*Style_{tag}");
                            combined_header = true;
                        }
                        let a = fmt_alpha(m.alpha.unwrap_or(0.0));
                        fmt_rates(&mut out, &format!("    a={a}"), &row.rates);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub metric: MetricConfig,
    pub k: usize,
    /// (normalized threshold, retrieval rate in percent)
    pub points: Vec<(f64, f64)>,
    pub knee: Knee,
}

/// Retrieval rate at `k` as a function of the normalized distance
/// threshold, and its knee. Cosine metrics only.
pub fn threshold_curve(index: &Index, groups: &[LabelledGroup], k: usize, grid: &[f64]) -> Result<ThresholdCurve> {
    if index.metric().cosine_bound().is_none() {
        return Err(Error::UnsupportedNormalization);
    }
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let labelled = Labelled::new(groups, |id| index.row_of(id))?;
    let hits = embedding_hits(index, &labelled, k)?;
    let best: Vec<Option<f64>> = (0..labelled.len()).map(|i| hits.min_distance(i, k)).collect();
    let total = labelled.len().max(1) as f64;
    let points: Vec<(f64, f64)> = grid
        .iter()
        .map(|&t| {
            let n = best.iter().filter(|d| d.is_some_and(|d| d <= t)).count();
            (t, 100.0 * n as f64 / total)
        })
        .collect();
    let knee = knee_threshold(&points)?;
    Ok(ThresholdCurve {
        metric: *index.metric(),
        k,
        points,
        knee,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfeitCandidate {
    pub app_id: String,
    pub app_name: String,
    pub developer: String,
    pub downloads: u64,
    pub rank: usize,
    pub raw_distance: f64,
    pub normalized_distance: f64,
    /// Character cosine similarity between the candidate's and the
    /// target's app names.
    pub name_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCandidates {
    pub target_app_id: String,
    pub app_name: String,
    pub developer: String,
    pub category: String,
    pub downloads: u64,
    pub candidates: Vec<CounterfeitCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfeitSummary {
    pub targets: usize,
    pub targets_with_candidates: usize,
    pub total_candidates: usize,
    pub unique_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfeitReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub metric: MetricConfig,
    pub k: usize,
    pub threshold: f64,
    pub summary: CounterfeitSummary,
    /// Sorted app ids of every distinct candidate.
    pub unique_candidates: Vec<String>,
    pub targets: Vec<TargetCandidates>,
}

/// For each target, the top-`k` apps from other developers in the same
/// category whose normalized distance is at most `threshold`.
pub fn counterfeit_report(
    index: &Index,
    corpus: &Corpus,
    targets: &[String],
    k: usize,
    threshold: f64,
) -> Result<CounterfeitReport> {
    let metric = *index.metric();
    if metric.cosine_bound().is_none() {
        return Err(Error::UnsupportedNormalization);
    }
    let per_target = map_rows(targets.len(), |i| {
        let id = &targets[i];
        let rec = corpus.get(id).ok_or_else(|| Error::UnknownAppId(id.clone()))?;
        let filter = QueryFilter {
            exclude_developer: Some(rec.developer.clone()),
            require_category: Some(rec.category.clone()),
            exclude_self: true,
        };
        let target = index.embedding(id)?;
        let results = query_top_k(index, &target, k, &filter, Some(threshold))?;
        let candidates = results
            .into_iter()
            .map(|r| {
                let c = corpus.get(&r.app_id).expect("index rows come from the corpus");
                CounterfeitCandidate {
                    app_id: r.app_id.clone(),
                    app_name: c.app_name.clone(),
                    developer: c.developer.clone(),
                    downloads: c.downloads,
                    rank: r.rank,
                    raw_distance: r.raw_distance,
                    normalized_distance: r.normalized_distance.unwrap_or(r.raw_distance),
                    name_similarity: char_cosine_similarity(&rec.app_name, &c.app_name),
                }
            })
            .collect();
        Ok(TargetCandidates {
            target_app_id: id.clone(),
            app_name: rec.app_name.clone(),
            developer: rec.developer.clone(),
            category: rec.category.clone(),
            downloads: rec.downloads,
            candidates,
        })
    })?;

    let unique: BTreeSet<&str> = per_target
        .iter()
        .flat_map(|t| t.candidates.iter().map(|c| c.app_id.as_str()))
        .collect();
    let summary = CounterfeitSummary {
        targets: per_target.len(),
        targets_with_candidates: per_target.iter().filter(|t| !t.candidates.is_empty()).count(),
        total_candidates: per_target.iter().map(|t| t.candidates.len()).sum(),
        unique_candidates: unique.len(),
    };
    Ok(CounterfeitReport {
        config_hash: None,
        metric,
        k,
        threshold,
        summary,
        unique_candidates: unique.into_iter().map(str::to_string).collect(),
        targets: per_target,
    })
}

/// Distance between two stored apps under the index metric.
pub fn pair_distance(index: &Index, a: &str, b: &str) -> Result<f64> {
    metrics::distance(&index.embedding(a)?, &index.embedding(b)?, index.metric())
}
