//! Small seeded convolutional network with the same tap layout as the real
//! backbone, scaled down: 8 style filters over `(input/16)²` positions and a
//! 32-d content tap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, GraphHeader, LayerSpec};
use crate::error::{Error, Result};

pub const STUB_STYLE_FILTERS: usize = 8;
pub const STUB_CONTENT_DIM: usize = 32;
pub const STUB_CONTENT_TAP: &str = "fc_relu";
pub const STUB_STYLE_TAP: &str = "conv3_relu";

fn stub_layers(input_size: usize) -> Vec<LayerSpec> {
    let side = input_size / 16;
    let conv = |name: &str, i, o| LayerSpec::Conv2d {
        name: name.into(),
        in_channels: i,
        out_channels: o,
        kernel: 3,
        padding: 1,
    };
    let relu = |name: &str| LayerSpec::Relu { name: name.into() };
    let pool = |name: &str| LayerSpec::MaxPool {
        name: name.into(),
        size: 2,
    };
    vec![
        conv("conv1", 3, 4),
        relu("conv1_relu"),
        pool("pool1"),
        conv("conv2", 4, STUB_STYLE_FILTERS),
        relu("conv2_relu"),
        pool("pool2"),
        pool("pool3"),
        pool("pool4"),
        conv("conv3", STUB_STYLE_FILTERS, STUB_STYLE_FILTERS),
        relu(STUB_STYLE_TAP),
        LayerSpec::Flatten { name: "flatten".into() },
        LayerSpec::Linear {
            name: "fc".into(),
            in_features: STUB_STYLE_FILTERS * side * side,
            out_features: STUB_CONTENT_DIM,
        },
        relu(STUB_CONTENT_TAP),
    ]
}

fn stub_header(input_size: usize, seed: Option<u64>) -> Result<GraphHeader> {
    if input_size < 16 || !input_size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "stub backbone needs an input size divisible by 16, got {input_size}"
        )));
    }
    Ok(GraphHeader {
        input_size,
        input_channels: 3,
        content_tap: STUB_CONTENT_TAP.into(),
        style_tap: STUB_STYLE_TAP.into(),
        layers: stub_layers(input_size),
        metadata: serde_json::json!({ "variant": "stub", "seed": seed }),
    })
}

/// He-scaled uniform weights and small positive biases from a ChaCha8
/// stream, so every tap stays mostly active.
pub fn stub_graph(seed: u64, input_size: usize) -> Result<Graph> {
    let header = stub_header(input_size, Some(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for layer in &header.layers {
        let (fan_in, n_out) = match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels),
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => (in_features, out_features),
            _ => continue,
        };
        let bound = (6.0 / fan_in as f32).sqrt();
        params.push((0..fan_in * n_out).map(|_| rng.random_range(-bound..bound)).collect());
        params.push((0..n_out).map(|_| rng.random_range(0.01..0.1)).collect());
    }
    Graph::new(header, params)
}

/// Stub with every weight and bias zero.
pub fn zero_stub_graph(input_size: usize) -> Result<Graph> {
    let header = stub_header(input_size, None)?;
    let params = header
        .layers
        .iter()
        .flat_map(|layer| match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![0.0; in_channels * kernel * kernel * out_channels],
                vec![0.0; out_channels],
            ],
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => vec![vec![0.0; in_features * out_features], vec![0.0; out_features]],
            _ => vec![],
        })
        .collect();
    Graph::new(header, params)
}
