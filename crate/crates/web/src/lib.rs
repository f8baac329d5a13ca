//! Browser bindings for three small demos: comparing two icons with the
//! stub backbone, inspecting a sparse random projection, and finding the
//! knee of a curve. Every export returns a JSON string.

use image::{Rgb, Rgb32FImage};
use lookalike::backbone::{preprocess, Backbone, ModelSource, Preprocessing};
use lookalike::embeddings::{embed_taps, flatten_upper, gram, style_dim, ProjectionMatrix};
use lookalike::knee::{knee_threshold, Knee};
use lookalike::metrics::{distance, normalize_distance, MetricConfig, Norm};
use lookalike::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Input size used by the in-browser stub backbone.
pub const DEMO_INPUT: u32 = 64;
const DEMO_PROJECTION_DIM: usize = 64;

fn js_err(e: lookalike::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// RGBA bytes (as from a canvas) to float RGB; alpha is dropped.
pub fn rgba_to_image(rgba: &[u8], width: u32, height: u32) -> Result<Rgb32FImage> {
    if rgba.len() != (width as usize) * (height as usize) * 4 || width == 0 || height == 0 {
        return Err(lookalike::Error::Shape(format!(
            "{} bytes is not a {width}x{height} RGBA image",
            rgba.len()
        )));
    }
    Ok(Rgb32FImage::from_fn(width, height, |x, y| {
        let i = ((y * width + x) * 4) as usize;
        Rgb([
            rgba[i] as f32 / 255.0,
            rgba[i + 1] as f32 / 255.0,
            rgba[i + 2] as f32 / 255.0,
        ])
    }))
}

/// Content, style and combined cosine distances between two icons, plus
/// both Gram matrices.
pub fn compare(a: &Rgb32FImage, b: &Rgb32FImage, alpha: f64, seed: u64) -> Result<Value> {
    let cfg = Preprocessing {
        input_size: DEMO_INPUT,
        ..Preprocessing::default()
    };
    let backbone = Backbone::load(&ModelSource::Stub { seed }, DEMO_INPUT)?;
    let (filters, _) = backbone.style_dims();
    let projection = ProjectionMatrix::new(style_dim(filters), DEMO_PROJECTION_DIM, seed)?;

    let mut embeddings = Vec::new();
    let mut grams = Vec::new();
    for (name, img) in [("a", a), ("b", b)] {
        let (content, features) = backbone.extract(&preprocess(img, &cfg)?)?;
        let g = gram(&features)?;
        flatten_upper(&g)?;
        grams.push(
            (0..g.n())
                .map(|i| (0..g.n()).map(|j| g.get(i, j)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        embeddings.push(embed_taps(name, &content, &features, &projection)?);
    }
    let combined = MetricConfig::combined(Norm::Cosine, alpha)?;
    let raw = distance(&embeddings[0], &embeddings[1], &combined)?;
    Ok(json!({
        "content_cos": distance(&embeddings[0], &embeddings[1], &MetricConfig::content(Norm::Cosine))?,
        "style_cos": distance(&embeddings[0], &embeddings[1], &MetricConfig::style(Norm::Cosine))?,
        "content_l2": distance(&embeddings[0], &embeddings[1], &MetricConfig::content(Norm::L2))?,
        "style_l2": distance(&embeddings[0], &embeddings[1], &MetricConfig::style(Norm::L2))?,
        "combined_cos": raw,
        "combined_normalized": normalize_distance(raw, &combined)?,
        "alpha": alpha,
        "gram_a": grams[0],
        "gram_b": grams[1],
    }))
}

/// Nonzero density and entry magnitude of a generated projection, and how
/// well it preserves distances between `samples` random vectors.
pub fn projection_summary(input_dim: usize, output_dim: usize, seed: u64, samples: usize) -> Result<Value> {
    use rand::{Rng, SeedableRng};

    let r = ProjectionMatrix::new(input_dim, output_dim, seed)?;
    let density = r.nonzeros() as f64 / (input_dim as f64 * output_dim as f64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let vectors: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let projected = vectors.iter().map(|v| r.project(v)).collect::<Result<Vec<_>>>()?;
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut ratios = Vec::new();
    for i in 0..samples {
        for j in i + 1..samples {
            let before = dist(&vectors[i], &vectors[j]);
            if before > 0.0 {
                ratios.push(dist(&projected[i], &projected[j]) / before);
            }
        }
    }
    let within = ratios.iter().filter(|q| (*q - 1.0).abs() <= 0.15).count();
    Ok(json!({
        "input_dim": input_dim,
        "output_dim": output_dim,
        "nonzeros": r.nonzeros(),
        "density": density,
        "expected_density": 1.0 / (input_dim as f64).sqrt(),
        "magnitude": r.magnitude(),
        "pairs": ratios.len(),
        "within_15_percent": within,
        "ratios": ratios,
    }))
}

/// Knee of a curve given as `[[x, y], ...]`.
pub fn knee_summary(points: &[(f64, f64)]) -> Result<Value> {
    Ok(match knee_threshold(points)? {
        Knee::At {
            threshold,
            index,
            difference,
        } => json!({ "knee": threshold, "index": index, "difference": difference }),
        Knee::NoKnee => json!({ "knee": null }),
    })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn compare_icons(
    a_rgba: &[u8],
    a_width: u32,
    a_height: u32,
    b_rgba: &[u8],
    b_width: u32,
    b_height: u32,
    alpha: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    let a = rgba_to_image(a_rgba, a_width, a_height).map_err(js_err)?;
    let b = rgba_to_image(b_rgba, b_width, b_height).map_err(js_err)?;
    Ok(compare(&a, &b, alpha, seed as u64).map_err(js_err)?.to_string())
}

#[wasm_bindgen]
pub fn projection_demo(
    input_dim: usize,
    output_dim: usize,
    seed: u32,
    samples: usize,
) -> std::result::Result<String, JsValue> {
    Ok(projection_summary(input_dim, output_dim, seed as u64, samples)
        .map_err(js_err)?
        .to_string())
}

#[wasm_bindgen]
pub fn knee_demo(points_json: &str) -> std::result::Result<String, JsValue> {
    let points: Vec<(f64, f64)> =
        serde_json::from_str(points_json).map_err(|e| JsValue::from_str(&format!("bad points: {e}")))?;
    Ok(knee_summary(&points).map_err(js_err)?.to_string())
}
