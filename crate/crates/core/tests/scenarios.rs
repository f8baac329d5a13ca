//! End-to-end scenarios on synthetic corpora encoded with the stub backbone,
//! each checked against an exhaustive scan.

use std::path::PathBuf;

use image::{Rgb, Rgb32FImage};
use lookalike::backbone::{preprocess, Backbone, FeatureMap, ModelSource, Preprocessing};
use lookalike::config::PipelineConfig;
use lookalike::corpus::{Corpus, IconRecord, LabelledGroup};
use lookalike::embeddings::{embed_taps, style_dim, IconEmbedding, ProjectionMatrix};
use lookalike::evaluation::{counterfeit_report, retrieval_rate};
use lookalike::metrics::{distance, normalize_distance, MetricConfig, Norm};
use lookalike::pipeline::{encoder_from_config, store_header};
use lookalike::retrieval::{build_index, Index};
use lookalike::store::EmbeddingStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn icon(seed: u64, size: u32) -> Rgb32FImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<[f32; 3]> = (0..16).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let cell = size / 4;
    Rgb32FImage::from_fn(size, size, |x, y| {
        Rgb(cells[((y / cell).min(3) * 4 + (x / cell).min(3)) as usize])
    })
}

fn jitter(img: &Rgb32FImage, seed: u64, amount: f32) -> Rgb32FImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = (*c + rng.random_range(-amount..amount)).clamp(0.0, 1.0);
        }
    }
    out
}

fn small_config() -> PipelineConfig {
    PipelineConfig {
        preprocessing: Preprocessing {
            input_size: 32,
            ..Preprocessing::default()
        },
        projection_dim: 64,
        ..PipelineConfig::default()
    }
}

fn rec(app_id: &str, developer: &str, category: &str) -> IconRecord {
    IconRecord {
        app_id: app_id.into(),
        icon_path: PathBuf::from(format!("{app_id}.png")),
        app_name: app_id.into(),
        developer: developer.into(),
        category: category.into(),
        downloads: 1,
    }
}

#[test]
fn planted_counterfeits_are_exactly_the_candidates() {
    let cfg = small_config();
    let encoder = encoder_from_config(&cfg).unwrap();
    let mut items: Vec<(IconRecord, Rgb32FImage)> = Vec::new();
    let mut add = |r: IconRecord, img: &Rgb32FImage| items.push((r, img.clone()));

    let targets = ["target0", "target1", "target2"];
    let plants_per_target = [3, 2, 2];
    let mut planted = Vec::new();
    for (t, id) in targets.iter().enumerate() {
        let original = icon(t as u64, 32);
        add(rec(id, &format!("brand{t}"), "games"), &original);
        for p in 0..plants_per_target[t] {
            let fake = format!("fake{t}{p}");
            add(
                rec(&fake, &format!("copier{t}{p}"), "games"),
                &jitter(&original, 50 + p as u64, 0.01),
            );
            planted.push(fake);
        }
        // Same icon but not a counterfeit: own developer, or another category.
        add(
            rec(&format!("sibling{t}"), &format!("brand{t}"), "games"),
            &jitter(&original, 90, 0.01),
        );
        add(
            rec(&format!("elsewhere{t}"), &format!("other{t}"), "tools"),
            &jitter(&original, 91, 0.01),
        );
    }
    for i in 0..100 - 3 * targets.len() - planted.len() {
        let category = if i % 3 == 0 { "tools" } else { "games" };
        add(
            rec(&format!("app{i:02}"), &format!("dev{i}"), category),
            &icon(1000 + i as u64, 32),
        );
    }
    let embeddings: Vec<IconEmbedding> = items
        .iter()
        .map(|(r, img)| encoder.encode_image(&r.app_id, img).unwrap())
        .collect();
    let records: Vec<IconRecord> = items.into_iter().map(|(r, _)| r).collect();
    assert_eq!(records.len(), 100);
    assert_eq!(planted.len(), 7);

    let corpus = Corpus::from_records(records).unwrap();
    let store = EmbeddingStore::new(store_header(&cfg, &encoder), embeddings.clone()).unwrap();
    let index = build_index(store, &corpus, cfg.metric).unwrap();

    // Exhaustive scan: planted fakes must sit strictly below every other eligible app.
    let mut fake_max = 0f64;
    let mut other_min = f64::INFINITY;
    for (t, id) in targets.iter().enumerate() {
        let target = &embeddings[corpus.row_of(id).unwrap()];
        for (r, e) in corpus.records().iter().zip(&embeddings) {
            if r.developer == format!("brand{t}") || r.category != "games" {
                continue;
            }
            let d = normalize_distance(distance(target, e, &cfg.metric).unwrap(), &cfg.metric).unwrap();
            if r.app_id.starts_with(&format!("fake{t}")) {
                fake_max = fake_max.max(d);
            } else {
                other_min = other_min.min(d);
            }
        }
    }
    assert!(fake_max < other_min, "fakes up to {fake_max}, others from {other_min}");
    let threshold = (fake_max + other_min) / 2.0;

    let targets: Vec<String> = targets.iter().map(|s| s.to_string()).collect();
    let report = counterfeit_report(&index, &corpus, &targets, 10, threshold).unwrap();
    planted.sort();
    assert_eq!(report.unique_candidates, planted);
    assert_eq!(report.summary.unique_candidates, 7);
    assert_eq!(report.summary.targets_with_candidates, 3);
    for (t, per) in report.targets.iter().enumerate() {
        assert_eq!(per.candidates.len(), plants_per_target[t]);
        assert!(per.candidates.iter().all(|c| c.normalized_distance <= threshold));
    }
}

/// Feature map with the same filter responses at shuffled positions.
fn shuffle_positions(f: &FeatureMap, rng: &mut ChaCha8Rng) -> FeatureMap {
    let m = f.positions();
    let mut order: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data = (0..f.filters())
        .flat_map(|i| order.iter().map(move |&p| f.row(i)[p]))
        .collect();
    FeatureMap::new(f.filters(), m, data).unwrap()
}

fn index_of(embeddings: Vec<IconEmbedding>, header_cfg: &PipelineConfig, metric: MetricConfig) -> Index {
    let encoder = encoder_from_config(header_cfg).unwrap();
    let mut header = store_header(header_cfg, &encoder);
    header.style_dim = embeddings[0].style.len() as u32;
    header.content_dim = embeddings[0].content.len() as u32;
    let corpus = Corpus::from_records(embeddings.iter().map(|e| rec(&e.app_id, &e.app_id, "games")).collect()).unwrap();
    build_index(EmbeddingStore::new(header, embeddings).unwrap(), &corpus, metric).unwrap()
}

#[test]
fn style_matched_groups_favour_the_style_metric() {
    const SIZE: u32 = 64;
    let cfg = PipelineConfig {
        preprocessing: Preprocessing {
            input_size: SIZE,
            ..Preprocessing::default()
        },
        ..small_config()
    };
    let backbone = Backbone::load(&ModelSource::Stub { seed: 0 }, SIZE).unwrap();
    let (filters, _) = backbone.style_dims();
    let projection = ProjectionMatrix::new(style_dim(filters), 64, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let taps = |seed: u64| {
        backbone
            .extract(&preprocess(&icon(seed, SIZE), &cfg.preprocessing).unwrap())
            .unwrap()
    };

    let mut embeddings = Vec::new();
    let mut groups = Vec::new();
    let mut next = 0u64;
    for g in 0..10 {
        // Every member: the base's conv statistics, another icon's content taps.
        let (content, features) = taps(next);
        next += 1;
        let base = format!("g{g}-0");
        embeddings.push(embed_taps(&base, &content, &features, &projection).unwrap());
        let mut members = Vec::new();
        for m in 1..3 {
            let (other_content, _) = taps(next);
            next += 1;
            let id = format!("g{g}-{m}");
            let shuffled = shuffle_positions(&features, &mut rng);
            embeddings.push(embed_taps(&id, &other_content, &shuffled, &projection).unwrap());
            members.push(id);
        }
        groups.push(LabelledGroup {
            base_app_id: base,
            member_app_ids: members,
        });
    }
    for i in 0..60 {
        let (c, f) = taps(next);
        next += 1;
        embeddings.push(embed_taps(format!("other{i}"), &c, &f, &projection).unwrap());
    }

    let index = index_of(embeddings, &cfg, MetricConfig::style(Norm::Cosine));
    for norm in [Norm::Cosine, Norm::L2] {
        for k in [2, 5, 10] {
            let style = retrieval_rate(&index, &groups, k, &MetricConfig::style(norm)).unwrap();
            let content = retrieval_rate(&index, &groups, k, &MetricConfig::content(norm)).unwrap();
            assert_eq!(style, 100.0, "{norm:?} top-{k}");
            assert!(
                style > content,
                "{norm:?} top-{k}: style {style}% vs content {content}%"
            );
        }
    }
}
