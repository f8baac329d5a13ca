//! Corpus-level batch jobs: encode every icon into an embedding store, or
//! extract SIFT descriptors for every icon.

use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::backbone::{decode_icon, Backbone};
use crate::config::PipelineConfig;
use crate::corpus::Corpus;
use crate::embeddings::{style_dim, Encoder, IconEmbedding, ProjectionMatrix};
use crate::error::Result;
use crate::sift::{sift_descriptors, SiftDescriptorSet};
use crate::store::{DescriptorCache, EmbeddingStore, StoreHeader, FLAG_STYLE_PROJECTED};

/// Loads the backbone and generates the projection described by `config`.
pub fn encoder_from_config(config: &PipelineConfig) -> Result<Encoder> {
    config.validate()?;
    let backbone = Backbone::load(&config.model, config.preprocessing.input_size)?;
    let (filters, _) = backbone.style_dims();
    let projection = ProjectionMatrix::new(style_dim(filters), config.projection_dim, config.projection_seed)?;
    Encoder::new(backbone, config.preprocessing, projection)
}

pub fn store_header(config: &PipelineConfig, encoder: &Encoder) -> StoreHeader {
    StoreHeader {
        flags: FLAG_STYLE_PROJECTED,
        content_dim: encoder.content_dim() as u32,
        style_dim: encoder.style_dim() as u32,
        projection_seed: config.projection_seed,
        input_size: config.preprocessing.input_size,
        means: config.preprocessing.means,
        config_hash: config.hash_bytes(),
    }
}

/// Runs `f` over `0..n` on `jobs` workers (0 = one per logical CPU),
/// keeping results in index order.
fn run_indexed<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| crate::Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        (0..n).map(f).collect()
    }
}

fn log_throughput(what: &str, n: usize, started: Instant) {
    let secs = started.elapsed().as_secs_f64();
    let rate = if secs > 0.0 { n as f64 / secs } else { f64::INFINITY };
    log::info!("{what}: {n} icons in {secs:.2}s ({rate:.1} icons/sec)");
}

/// Encodes every icon of `corpus`, in corpus order.
pub fn encode_corpus(corpus: &Corpus, config: &PipelineConfig, jobs: usize) -> Result<EmbeddingStore> {
    let encoder = encoder_from_config(config)?;
    let started = Instant::now();
    let records = corpus.records();
    let embeddings: Vec<IconEmbedding> = run_indexed(records.len(), jobs, |i| encoder.encode_icon(&records[i]))?;
    log_throughput("encode", records.len(), started);
    EmbeddingStore::new(store_header(config, &encoder), embeddings)
}

/// SIFT descriptors for every icon of `corpus`, in corpus order.
pub fn extract_sift(corpus: &Corpus, config: &PipelineConfig, jobs: usize) -> Result<DescriptorCache> {
    config.validate()?;
    let started = Instant::now();
    let records = corpus.records();
    let sets: Vec<SiftDescriptorSet> = run_indexed(records.len(), jobs, |i| {
        let img = decode_icon(&records[i].icon_path)?;
        sift_descriptors(&img, &config.sift)
    })?;
    log_throughput("sift", records.len(), started);
    Ok(DescriptorCache {
        config_hash: config.hash_bytes(),
        sets,
    })
}
