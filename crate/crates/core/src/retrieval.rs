//! Exact nearest-neighbour search over an embedding store.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::IconEmbedding;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricConfig, MetricKind, Norm};
use crate::store::EmbeddingStore;

struct IndexData {
    store: EmbeddingStore,
    developers: Vec<String>,
    categories: Vec<String>,
    row_by_id: HashMap<String, usize>,
    content_sq: Vec<f64>,
    style_sq: Vec<f64>,
}

/// Immutable, cheaply clonable search index. Row order matches the corpus.
#[derive(Clone)]
pub struct Index {
    data: Arc<IndexData>,
    metric: MetricConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub exclude_developer: Option<String>,
    pub require_category: Option<String>,
    pub exclude_self: bool,
}

impl QueryFilter {
    /// Everything except the query's own app id.
    pub fn others() -> Self {
        QueryFilter {
            exclude_self: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub app_id: String,
    pub raw_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_distance: Option<f64>,
    pub rank: usize,
}

/// Builds an index over `store`, whose rows must list the corpus apps in
/// corpus order.
pub fn build_index(store: EmbeddingStore, corpus: &Corpus, metric: MetricConfig) -> Result<Index> {
    metric.validate()?;
    if store.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "store has {} rows but the corpus has {} apps",
            store.len(),
            corpus.len()
        )));
    }
    for (row, (id, rec)) in store.app_ids().iter().zip(corpus.records()).enumerate() {
        if *id != rec.app_id {
            return Err(Error::Shape(format!(
                "store row {row} is {id:?} but corpus row {row} is {:?}",
                rec.app_id
            )));
        }
    }
    let h = store.header();
    if (metric.uses_content() && h.content_dim == 0) || (metric.uses_style() && h.style_dim == 0) {
        return Err(Error::Shape(format!("store has no vectors for metric {metric}")));
    }

    let rows = store.len();
    let content_sq = (0..rows).map(|r| metrics::squared_norm(store.content(r))).collect();
    let style_sq = (0..rows).map(|r| metrics::squared_norm(store.style(r))).collect();
    let data = IndexData {
        developers: corpus.records().iter().map(|r| r.developer.clone()).collect(),
        categories: corpus.records().iter().map(|r| r.category.clone()).collect(),
        row_by_id: corpus
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.app_id.clone(), i))
            .collect(),
        content_sq,
        style_sq,
        store,
    };
    Ok(Index {
        data: Arc::new(data),
        metric,
    })
}

fn compare(a: &(f64, usize), b: &(f64, usize), ids: &[String]) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
}

impl Index {
    /// Same rows, different metric. Shares the underlying data.
    pub fn with_metric(&self, metric: MetricConfig) -> Result<Index> {
        metric.validate()?;
        Ok(Index {
            data: Arc::clone(&self.data),
            metric,
        })
    }

    pub fn metric(&self) -> &MetricConfig {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.data.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.store.is_empty()
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.data.store
    }

    pub fn row_of(&self, app_id: &str) -> Option<usize> {
        self.data.row_by_id.get(app_id).copied()
    }

    pub fn app_id(&self, row: usize) -> &str {
        &self.data.store.app_ids()[row]
    }

    pub fn developer(&self, row: usize) -> &str {
        &self.data.developers[row]
    }

    pub fn category(&self, row: usize) -> &str {
        &self.data.categories[row]
    }

    pub fn embedding(&self, app_id: &str) -> Result<IconEmbedding> {
        let row = self
            .row_of(app_id)
            .ok_or_else(|| Error::UnknownAppId(app_id.to_string()))?;
        Ok(self.data.store.embedding(row))
    }

    fn check_target(&self, target: &IconEmbedding) -> Result<()> {
        let h = self.data.store.header();
        if self.metric.uses_content() && target.content.len() != h.content_dim as usize {
            return Err(Error::Shape(format!(
                "target content has {} dims, index has {}",
                target.content.len(),
                h.content_dim
            )));
        }
        if self.metric.uses_style() && target.style.len() != h.style_dim as usize {
            return Err(Error::Shape(format!(
                "target style has {} dims, index has {}",
                target.style.len(),
                h.style_dim
            )));
        }
        Ok(())
    }

    fn part(&self, norm: Norm, q: &[f32], q_sq: f64, x: &[f32], x_sq: f64) -> f64 {
        match norm {
            Norm::L2 => metrics::l2(q, x),
            Norm::Cosine => metrics::cosine_from_parts(metrics::dot(q, x), q_sq, x_sq),
        }
    }

    // Same arithmetic as `metrics::distance`, with cached norms.
    fn row_distance(&self, target: &IconEmbedding, q_sq: (f64, f64), row: usize) -> f64 {
        let d = &self.data;
        let m = &self.metric;
        let content = || self.part(m.norm, &target.content, q_sq.0, d.store.content(row), d.content_sq[row]);
        let style = || self.part(m.norm, &target.style, q_sq.1, d.store.style(row), d.style_sq[row]);
        match m.kind {
            MetricKind::Content => content(),
            MetricKind::Style => style(),
            MetricKind::Combined => content() + m.alpha.unwrap_or(0.0) * style(),
        }
    }

    fn admits(&self, row: usize, target_id: &str, filter: &QueryFilter) -> bool {
        if filter.exclude_self && self.app_id(row) == target_id {
            return false;
        }
        if let Some(dev) = &filter.exclude_developer {
            if self.developer(row) == dev {
                return false;
            }
        }
        if let Some(cat) = &filter.require_category {
            if self.category(row) != cat {
                return false;
            }
        }
        true
    }

    /// Distances from `target` to every row admitted by `filter`.
    fn scan(&self, target: &IconEmbedding, filter: &QueryFilter) -> Vec<(f64, usize)> {
        let q_sq = (
            metrics::squared_norm(&target.content),
            metrics::squared_norm(&target.style),
        );
        let eval = |row: usize| {
            self.admits(row, &target.app_id, filter)
                .then(|| (self.row_distance(target, q_sq, row), row))
        };
        #[cfg(feature = "parallel")]
        {
            (0..self.len()).into_par_iter().filter_map(eval).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..self.len()).filter_map(eval).collect()
        }
    }

    /// The `k` nearest admitted rows, ascending by distance, ties broken by
    /// app id.
    pub(crate) fn nearest_rows(
        &self,
        target: &IconEmbedding,
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<(f64, usize)>> {
        if k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        self.check_target(target)?;
        let mut hits = self.scan(target, filter);
        let ids = self.data.store.app_ids();
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, |a, b| compare(a, b, ids));
            hits.truncate(k);
        }
        hits.sort_unstable_by(|a, b| compare(a, b, ids));
        Ok(hits)
    }
}

/// Top-`k` query. With `max_normalized_distance`, results whose normalized
/// distance exceeds it are dropped, so fewer than `k` may come back.
pub fn query_top_k(
    index: &Index,
    target: &IconEmbedding,
    k: usize,
    filter: &QueryFilter,
    max_normalized_distance: Option<f64>,
) -> Result<Vec<RetrievalResult>> {
    let metric = index.metric;
    if let Some(t) = max_normalized_distance {
        if metric.cosine_bound().is_none() {
            return Err(Error::UnsupportedNormalization);
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold must be a non-negative number, got {t}"
            )));
        }
    }
    let hits = index.nearest_rows(target, k, filter)?;
    let mut out = Vec::with_capacity(hits.len());
    for (i, (d, row)) in hits.into_iter().enumerate() {
        let normalized = match metric.cosine_bound() {
            Some(_) => Some(metrics::normalize_distance(d, &metric)?),
            None => None,
        };
        if let (Some(t), Some(n)) = (max_normalized_distance, normalized) {
            if n > t {
                break;
            }
        }
        out.push(RetrievalResult {
            app_id: index.app_id(row).to_string(),
            raw_distance: d,
            normalized_distance: normalized,
            rank: i + 1,
        });
    }
    Ok(out)
}

/// [`query_top_k`] for an app already in the index.
pub fn query_app(
    index: &Index,
    app_id: &str,
    k: usize,
    filter: &QueryFilter,
    max_normalized_distance: Option<f64>,
) -> Result<Vec<RetrievalResult>> {
    let target = index.embedding(app_id)?;
    query_top_k(index, &target, k, filter, max_normalized_distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::IconRecord;
    use crate::store::StoreHeader;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, dev: &str, cat: &str) -> IconRecord {
        IconRecord {
            app_id: id.into(),
            icon_path: format!("{id}.png").into(),
            app_name: id.into(),
            developer: dev.into(),
            category: cat.into(),
            downloads: 0,
        }
    }

    fn header(c: usize, s: usize) -> StoreHeader {
        StoreHeader {
            flags: 0,
            content_dim: c as u32,
            style_dim: s as u32,
            projection_seed: 0,
            input_size: 64,
            means: [0.0; 3],
            config_hash: [0; 32],
        }
    }

    fn fixture(embs: Vec<IconEmbedding>, metric: MetricConfig) -> Index {
        let records = embs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                record(
                    &e.app_id,
                    &format!("dev{}", i % 3),
                    if i % 2 == 0 { "games" } else { "tools" },
                )
            })
            .collect();
        let corpus = Corpus::from_records(records).unwrap();
        let (c, s) = (embs[0].content.len(), embs[0].style.len());
        build_index(EmbeddingStore::new(header(c, s), embs).unwrap(), &corpus, metric).unwrap()
    }

    fn random_embs(rng: &mut ChaCha8Rng, n: usize, c: usize, s: usize) -> Vec<IconEmbedding> {
        (0..n)
            .map(|i| IconEmbedding {
                app_id: format!("app{i:04}"),
                content: (0..c).map(|_| rng.random_range(0.0..1.0)).collect(),
                style: (0..s).map(|_| rng.random_range(0.0..1.0)).collect(),
            })
            .collect()
    }

    fn naive(index: &Index, target: &IconEmbedding, k: usize, filter: &QueryFilter) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..index.len())
            .filter(|&r| index.admits(r, &target.app_id, filter))
            .map(|r| {
                let e = index.store().embedding(r);
                let d = metrics::distance(target, &e, index.metric()).unwrap();
                (e.app_id, d)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn three_rows_three_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let index = fixture(random_embs(&mut rng, 3, 4, 3), MetricConfig::content(Norm::L2));
        let q = index.embedding("app0000").unwrap();
        let res = query_top_k(&index, &q, 10, &QueryFilter::default(), None).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[0].app_id, "app0000");
        assert_eq!(res[0].raw_distance, 0.0);
        assert_eq!(res.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(res[0].normalized_distance.is_none());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let embs = random_embs(&mut rng, 3, 4, 3);
        let corpus = Corpus::from_records(vec![record("app0000", "d", "c")]).unwrap();
        let store = EmbeddingStore::new(header(4, 3), embs).unwrap();
        assert!(build_index(store, &corpus, MetricConfig::content(Norm::L2)).is_err());
    }

    #[test]
    fn row_order_must_match_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let embs = random_embs(&mut rng, 2, 4, 3);
        let corpus = Corpus::from_records(vec![record("app0001", "d", "c"), record("app0000", "d", "c")]).unwrap();
        let store = EmbeddingStore::new(header(4, 3), embs).unwrap();
        assert!(build_index(store, &corpus, MetricConfig::content(Norm::L2)).is_err());
    }

    #[test]
    fn argument_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let index = fixture(random_embs(&mut rng, 5, 4, 3), MetricConfig::content(Norm::L2));
        let q = index.embedding("app0001").unwrap();
        assert!(query_top_k(&index, &q, 0, &QueryFilter::default(), None).is_err());
        assert!(matches!(
            query_top_k(&index, &q, 3, &QueryFilter::default(), Some(0.3)),
            Err(Error::UnsupportedNormalization)
        ));
        let bad = IconEmbedding {
            app_id: "x".into(),
            content: vec![1.0],
            style: vec![],
        };
        assert!(query_top_k(&index, &bad, 3, &QueryFilter::default(), None).is_err());
        assert!(matches!(index.embedding("nope"), Err(Error::UnknownAppId(_))));
    }

    #[test]
    fn threshold_keeps_exactly_the_close_ones() {
        // content_cos of (1, 0) against (cos θ, sin θ) is 1 − cos θ
        let dists: [f64; 10] = [0.0, 0.05, 0.1, 0.27, 0.2701, 0.3, 0.5, 0.8, 0.9, 1.0];
        let mut embs = vec![IconEmbedding {
            app_id: "target".into(),
            content: vec![1.0, 0.0],
            style: vec![0.0],
        }];
        for (i, d) in dists.iter().enumerate() {
            let c = 1.0 - d;
            embs.push(IconEmbedding {
                app_id: format!("c{i}"),
                content: vec![c as f32, (1.0 - c * c).max(0.0).sqrt() as f32],
                style: vec![0.0],
            });
        }
        let index = fixture(embs, MetricConfig::content(Norm::Cosine));
        let q = index.embedding("target").unwrap();
        let all = query_top_k(&index, &q, 10, &QueryFilter::others(), None).unwrap();
        let oracle: Vec<_> = all
            .iter()
            .filter(|r| r.normalized_distance.unwrap() <= 0.27)
            .map(|r| r.app_id.clone())
            .collect();
        let got = query_top_k(&index, &q, 10, &QueryFilter::others(), Some(0.27)).unwrap();
        assert_eq!(got.iter().map(|r| r.app_id.clone()).collect::<Vec<_>>(), oracle);
        assert_eq!(got.len(), 4);
        assert_eq!(got[..], all[..4]);
    }

    #[test]
    fn filters_are_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let index = fixture(random_embs(&mut rng, 30, 4, 3), MetricConfig::style(Norm::Cosine));
        let filter = QueryFilter {
            exclude_developer: Some("dev0".into()),
            require_category: Some("games".into()),
            exclude_self: true,
        };
        let q = index.embedding("app0000").unwrap();
        let res = query_top_k(&index, &q, 30, &filter, None).unwrap();
        assert!(!res.is_empty());
        for r in &res {
            let row = index.row_of(&r.app_id).unwrap();
            assert_ne!(index.developer(row), "dev0");
            assert_eq!(index.category(row), "games");
        }
    }

    #[test]
    fn ties_break_by_app_id() {
        let e = |id: &str| IconEmbedding {
            app_id: id.into(),
            content: vec![1.0, 1.0],
            style: vec![1.0],
        };
        let index = fixture(vec![e("b"), e("c"), e("a")], MetricConfig::content(Norm::L2));
        let res = query_top_k(&index, &e("zzz"), 3, &QueryFilter::default(), None).unwrap();
        assert_eq!(
            res.iter().map(|r| r.app_id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exact_scan_equals_naive_oracle(seed in any::<u64>(), k in 1usize..15, m in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut embs = random_embs(&mut rng, 60, 5, 4);
            // a few exact ties
            embs[7].content = embs[3].content.clone();
            embs[7].style = embs[3].style.clone();
            let metric = MetricConfig::all(6.0)[m];
            let index = fixture(embs, metric);
            let q = index.embedding("app0003").unwrap();
            let filter = QueryFilter { exclude_developer: Some("dev1".into()), ..Default::default() };
            let got: Vec<_> = query_top_k(&index, &q, k, &filter, None).unwrap().into_iter().map(|r| (r.app_id, r.raw_distance)).collect();
            prop_assert_eq!(got, naive(&index, &q, k, &filter));
        }

        #[test]
        fn top_k_is_prefix_of_top_k_plus_one(seed in any::<u64>(), k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = fixture(random_embs(&mut rng, 40, 3, 3), MetricConfig::combined(Norm::Cosine, 6.0).unwrap());
            let q = index.embedding("app0010").unwrap();
            let a = query_top_k(&index, &q, k, &QueryFilter::others(), None).unwrap();
            let b = query_top_k(&index, &q, k + 1, &QueryFilter::others(), None).unwrap();
            prop_assert_eq!(&a[..], &b[..a.len()]);
        }

        #[test]
        fn threshold_only_truncates(seed in any::<u64>(), t in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let index = fixture(random_embs(&mut rng, 40, 3, 3), MetricConfig::combined(Norm::Cosine, 6.0).unwrap());
            let q = index.embedding("app0005").unwrap();
            let full = query_top_k(&index, &q, 10, &QueryFilter::others(), None).unwrap();
            let cut = query_top_k(&index, &q, 10, &QueryFilter::others(), Some(t)).unwrap();
            prop_assert_eq!(&cut[..], &full[..cut.len()]);
            prop_assert!(cut.iter().all(|r| r.normalized_distance.unwrap() <= t));
            prop_assert!(full[cut.len()..].iter().all(|r| r.normalized_distance.unwrap() > t));
        }
    }
}
