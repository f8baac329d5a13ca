use std::fs;
use std::io::Write;
use std::path::Path;

use lookalike::backbone::refpack::verify_reference_pack;
use lookalike::backbone::Backbone;
use lookalike::config::{ensure_same_config, PipelineConfig};
use lookalike::corpus::{load_manifest, propose_labelled_groups, Corpus, GroupParams, LabelledGroup};
use lookalike::evaluation::{counterfeit_report, evaluate, sift_rates, threshold_curve, EvalOptions, ThresholdCurve};
use lookalike::knee::threshold_grid;
use lookalike::metrics::{MetricConfig, MetricKind, DEFAULT_ALPHA};
use lookalike::pipeline::{encode_corpus, extract_sift};
use lookalike::retrieval::{build_index, query_app, Index, QueryFilter};
use lookalike::store::{DescriptorCache, EmbeddingStore};
use lookalike::Error;
use serde::{Deserialize, Serialize};

use crate::{Command, GlobalArgs, IndexArgs, MetricArgs, Result};

/// Labelled groups plus the configuration they were proposed under.
#[derive(Serialize, Deserialize)]
struct GroupsFile {
    config_hash: String,
    params: GroupParams,
    groups: Vec<LabelledGroup>,
}

#[derive(Serialize, Deserialize)]
struct KneeFile {
    config_hash: String,
    #[serde(flatten)]
    curve: ThresholdCurve,
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.projection_seed = seed;
    }
    if let Some(model) = &global.model {
        cfg.model = model.parse()?;
    }
    if let Some(size) = global.input_size {
        cfg.preprocessing.input_size = size;
    }
    if let Some(dim) = global.projection_dim {
        cfg.projection_dim = dim;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_metric(cfg: &PipelineConfig, args: &MetricArgs) -> Result<MetricConfig> {
    let kind = args.metric.unwrap_or(cfg.metric.kind);
    let norm = args.norm.unwrap_or(cfg.metric.norm);
    let alpha = match kind {
        MetricKind::Combined => Some(args.alpha.or(cfg.metric.alpha).unwrap_or(DEFAULT_ALPHA)),
        _ if args.alpha.is_some() => {
            return Err(Error::InvalidArgument(
                "--alpha only applies to --metric combined".into(),
            ));
        }
        _ => None,
    };
    let metric = MetricConfig { kind, norm, alpha };
    metric.validate()?;
    Ok(metric)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what,
        reason: format!("{}: {e}", path.display()),
    })
}

fn open_index(cfg: &PipelineConfig, args: &IndexArgs, metric: MetricConfig) -> Result<(Corpus, Index)> {
    let store = EmbeddingStore::read(&args.store)?;
    ensure_same_config(&cfg.hash(), &store.header().config_hash_hex())?;
    let corpus = load_manifest(&args.manifest)?;
    let index = build_index(store, &corpus, metric)?;
    Ok((corpus, index))
}

fn read_groups(cfg: &PipelineConfig, path: &Path) -> Result<Vec<LabelledGroup>> {
    let file: GroupsFile = read_json(path, "groups file")?;
    ensure_same_config(&cfg.hash(), &file.config_hash)?;
    Ok(file.groups)
}

fn read_targets(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn run(global: &GlobalArgs, command: Command) -> Result<()> {
    let cfg = load_config(global)?;
    match command {
        Command::Encode {
            manifest,
            out,
            sift_cache,
        } => encode(&cfg, global.jobs, &manifest, &out, sift_cache.as_deref()),
        Command::Groups { manifest, out } => {
            let corpus = load_manifest(&manifest)?;
            let groups = propose_labelled_groups(&corpus, &cfg.groups)?;
            log::info!("{} groups from {} apps", groups.len(), corpus.len());
            let file = GroupsFile {
                config_hash: cfg.hash(),
                params: cfg.groups,
                groups,
            };
            emit(out.as_deref(), &to_json(&file))
        }
        Command::Index { index, metric } => {
            let metric = resolve_metric(&cfg, &metric)?;
            let (_, idx) = open_index(&cfg, &index, metric)?;
            let h = idx.store().header();
            let summary = serde_json::json!({
                "rows": idx.len(),
                "content_dim": h.content_dim,
                "style_dim": h.style_dim,
                "metric": metric.to_string(),
                "config_hash": h.config_hash_hex(),
            });
            emit(None, &to_json(&summary))
        }
        Command::Query {
            index,
            target,
            k,
            metric,
            threshold,
            exclude_developer,
            same_category,
            include_self,
            out,
        } => {
            let metric = resolve_metric(&cfg, &metric)?;
            let (corpus, idx) = open_index(&cfg, &index, metric)?;
            let rec = corpus.get(&target).ok_or_else(|| Error::UnknownAppId(target.clone()))?;
            let filter = QueryFilter {
                exclude_developer: exclude_developer.then(|| rec.developer.clone()),
                require_category: same_category.then(|| rec.category.clone()),
                exclude_self: !include_self,
            };
            let results = query_app(&idx, &target, k, &filter, threshold)?;
            let mut text = String::new();
            for r in &results {
                text.push_str(&serde_json::to_string(r).expect("result serializes"));
                text.push('\n');
            }
            emit(out.as_deref(), &text)
        }
        Command::Eval {
            index,
            groups,
            k,
            alphas,
            l2_alphas,
            sift_cache,
            out,
            table,
        } => {
            let (corpus, idx) = open_index(&cfg, &index, cfg.metric)?;
            let groups = read_groups(&cfg, &groups)?;
            let options = EvalOptions {
                ks: k,
                cos_alphas: alphas,
                l2_alphas,
            };
            let mut report = evaluate(&idx, &groups, &options)?;
            report.config_hash = Some(cfg.hash());
            if let Some(path) = sift_cache {
                let cache = DescriptorCache::read(&path)?;
                ensure_same_config(&cfg.hash(), &cache.config_hash_hex())?;
                report.sift = Some(sift_rates(&corpus, &cache.sets, &groups, &options.ks)?);
            }
            if let Some(path) = table {
                emit(Some(&path), &report.render_table())?;
            }
            emit(out.as_deref(), &to_json(&report))
        }
        Command::Knee {
            index,
            groups,
            k,
            metric,
            out,
        } => {
            let metric = resolve_metric(&cfg, &metric)?;
            let (_, idx) = open_index(&cfg, &index, metric)?;
            let groups = read_groups(&cfg, &groups)?;
            let grid = threshold_grid(cfg.threshold_max, cfg.threshold_step)?;
            let curve = threshold_curve(&idx, &groups, k, &grid)?;
            match curve.knee.threshold() {
                Some(t) => log::info!("knee at normalized distance {t}"),
                None => log::info!("no knee: rate curve does not rise above the diagonal"),
            }
            let file = KneeFile {
                config_hash: cfg.hash(),
                curve,
            };
            emit(out.as_deref(), &to_json(&file))
        }
        Command::Report {
            index,
            targets,
            k,
            metric,
            threshold,
            knee,
            out,
        } => {
            let metric = resolve_metric(&cfg, &metric)?;
            let threshold = match (threshold, knee) {
                (Some(t), _) => t,
                (None, Some(path)) => knee_threshold_from(&cfg, &path)?,
                (None, None) => unreachable!("clap requires one of --threshold/--knee"),
            };
            let (corpus, idx) = open_index(&cfg, &index, metric)?;
            let targets = read_targets(&targets)?;
            let mut report = counterfeit_report(&idx, &corpus, &targets, k, threshold)?;
            report.config_hash = Some(cfg.hash());
            log::info!(
                "{} unique candidates across {} targets",
                report.summary.unique_candidates,
                report.summary.targets
            );
            emit(out.as_deref(), &to_json(&report))
        }
        Command::VerifyModel { refpack } => {
            let backbone = Backbone::load(&cfg.model, cfg.preprocessing.input_size)?;
            let report = verify_reference_pack(&backbone, &refpack)?;
            emit(None, &to_json(&report))?;
            if report.max_abs() > 1e-4 {
                return Err(Error::Model(format!(
                    "reference deviation {} exceeds 1e-4",
                    report.max_abs()
                )));
            }
            Ok(())
        }
    }
}

fn knee_threshold_from(cfg: &PipelineConfig, path: &Path) -> Result<f64> {
    let file: KneeFile = read_json(path, "knee file")?;
    ensure_same_config(&cfg.hash(), &file.config_hash)?;
    file.curve
        .knee
        .threshold()
        .ok_or_else(|| Error::InvalidArgument(format!("{} records no knee", path.display())))
}

fn encode(cfg: &PipelineConfig, jobs: usize, manifest: &Path, out: &Path, sift_cache: Option<&Path>) -> Result<()> {
    let corpus = load_manifest(manifest)?;
    log::info!("encoding {} icons with {}", corpus.len(), cfg.model);
    let store = encode_corpus(&corpus, cfg, jobs)?;
    store.write(out)?;
    if let Some(path) = sift_cache {
        extract_sift(&corpus, cfg, jobs)?.write(path)?;
    }
    Ok(())
}
