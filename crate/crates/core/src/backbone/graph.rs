//! Portable feed-forward inference graph.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "LKGR"
//! version      u32      = 1
//! header_len   u32      byte length of the JSON header
//! header       JSON     GraphHeader
//! weights      f32[]    parameters of every parameterised layer, in layer
//!                       order, weight then bias
//! ```
//!
//! Convolution weights are `[out][in][k][k]`, linear weights `[out][in]`,
//! and `flatten` uses channel-major `(C, H, W)` order, which is the layout a
//! PyTorch state dict already has.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAPH_MAGIC: &[u8; 4] = b"LKGR";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu {
        name: String,
    },
    MaxPool {
        name: String,
        size: usize,
    },
    Flatten {
        name: String,
    },
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv2d { name, .. }
            | LayerSpec::Relu { name }
            | LayerSpec::MaxPool { name, .. }
            | LayerSpec::Flatten { name }
            | LayerSpec::Linear { name, .. } => name,
        }
    }

    fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => (out_features * in_features, out_features),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub input_size: usize,
    pub input_channels: usize,
    pub content_tap: String,
    pub style_tap: String,
    pub layers: Vec<LayerSpec>,
    /// Free-form provenance (source weights, variant, exporter version).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Activation tensor shape: `(channels, height, width)` or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    weight: Vec<f32>,
    bias: Vec<f32>,
    output: Shape,
}

/// A loaded, shape-checked graph.
#[derive(Debug, Clone)]
pub struct Graph {
    header: GraphHeader,
    layers: Vec<Layer>,
    content_idx: usize,
    style_idx: usize,
}

/// Tap outputs of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TapOutputs {
    pub content: Vec<f32>,
    pub style: Vec<f32>,
    pub style_shape: Shape,
}

impl Graph {
    /// Checks every layer shape from the input down to the last tap and
    /// pairs it with its parameters.
    pub fn new(header: GraphHeader, mut params: Vec<Vec<f32>>) -> Result<Self> {
        if header.input_channels == 0 || header.input_size == 0 {
            return Err(Error::Model("input shape must be non-empty".into()));
        }
        let mut shape = Shape::Map {
            c: header.input_channels,
            h: header.input_size,
            w: header.input_size,
        };
        params.reverse();
        let mut layers = Vec::with_capacity(header.layers.len());
        for spec in &header.layers {
            let bad = |msg: String| Error::Model(format!("layer {:?}: {msg}", spec.name()));
            shape = match (spec, shape) {
                (
                    &LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        padding,
                        ..
                    },
                    Shape::Map { c, h, w },
                ) => {
                    if c != in_channels {
                        return Err(bad(format!("expects {in_channels} channels, input has {c}")));
                    }
                    if kernel == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(bad(format!("kernel {kernel} does not fit a {h}x{w} input")));
                    }
                    Shape::Map {
                        c: out_channels,
                        h: h + 2 * padding - kernel + 1,
                        w: w + 2 * padding - kernel + 1,
                    }
                }
                (LayerSpec::Relu { .. }, s) => s,
                (&LayerSpec::MaxPool { size, .. }, Shape::Map { c, h, w }) => {
                    if size == 0 || h < size || w < size {
                        return Err(bad(format!("pool {size} does not fit a {h}x{w} input")));
                    }
                    Shape::Map {
                        c,
                        h: h / size,
                        w: w / size,
                    }
                }
                (LayerSpec::Flatten { .. }, s) => Shape::Flat(s.numel()),
                (
                    &LayerSpec::Linear {
                        in_features,
                        out_features,
                        ..
                    },
                    Shape::Flat(n),
                ) => {
                    if n != in_features {
                        return Err(bad(format!("expects {in_features} inputs, got {n}")));
                    }
                    Shape::Flat(out_features)
                }
                (_, s) => return Err(bad(format!("incompatible input shape {s:?}"))),
            };

            let (nw, nb) = spec.param_counts();
            let (weight, bias) = if nw + nb > 0 {
                let weight = params.pop().ok_or_else(|| bad("missing weight".into()))?;
                let bias = params.pop().ok_or_else(|| bad("missing bias".into()))?;
                if weight.len() != nw || bias.len() != nb {
                    return Err(bad(format!(
                        "parameter sizes {}/{} do not match expected {nw}/{nb}",
                        weight.len(),
                        bias.len()
                    )));
                }
                (weight, bias)
            } else {
                (Vec::new(), Vec::new())
            };
            layers.push(Layer {
                spec: spec.clone(),
                weight,
                bias,
                output: shape,
            });
        }
        if !params.is_empty() {
            return Err(Error::Model(format!("{} unused parameter tensors", params.len())));
        }

        let find = |tap: &str| {
            header
                .layers
                .iter()
                .position(|l| l.name() == tap)
                .ok_or_else(|| Error::Model(format!("tap {tap:?} not found")))
        };
        let content_idx = find(&header.content_tap)?;
        let style_idx = find(&header.style_tap)?;
        if !matches!(layers[style_idx].output, Shape::Map { .. }) {
            return Err(Error::Model("style tap must be a convolutional feature map".into()));
        }

        Ok(Graph {
            header,
            layers,
            content_idx,
            style_idx,
        })
    }

    pub fn header(&self) -> &GraphHeader {
        &self.header
    }

    pub fn input_size(&self) -> usize {
        self.header.input_size
    }

    pub fn content_dim(&self) -> usize {
        self.layers[self.content_idx].output.numel()
    }

    /// `(filters, positions)` of the style tap.
    pub fn style_dims(&self) -> (usize, usize) {
        match self.layers[self.style_idx].output {
            Shape::Map { c, h, w } => (c, h * w),
            Shape::Flat(_) => unreachable!("checked in Graph::new"),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |reason: &str| Error::Format {
            what: "model graph",
            reason: reason.to_string(),
        };
        if bytes.len() < 12 || &bytes[..4] != GRAPH_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != GRAPH_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: GraphHeader =
            serde_json::from_slice(&bytes[12..header_end]).map_err(|e| corrupt(&e.to_string()))?;

        let mut rest = &bytes[header_end..];
        let mut params = Vec::new();
        for spec in &header.layers {
            let (nw, nb) = spec.param_counts();
            if nw + nb == 0 {
                continue;
            }
            for n in [nw, nb] {
                if rest.len() < n * 4 {
                    return Err(corrupt("truncated weights"));
                }
                let (chunk, tail) = rest.split_at(n * 4);
                params.push(
                    chunk
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                );
                rest = tail;
            }
        }
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after weights"));
        }
        Graph::new(header, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(GRAPH_MAGIC);
        out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for layer in &self.layers {
            for v in layer.weight.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Runs the graph up to the deeper of the two taps.
    pub fn forward(&self, input: &[f32]) -> Result<TapOutputs> {
        let expected = self.header.input_channels * self.header.input_size * self.header.input_size;
        if input.len() != expected {
            return Err(Error::Shape(format!(
                "graph expects {expected} input values, got {}",
                input.len()
            )));
        }
        let last = self.content_idx.max(self.style_idx);
        let mut shape = Shape::Map {
            c: self.header.input_channels,
            h: self.header.input_size,
            w: self.header.input_size,
        };
        let mut act = input.to_vec();
        let mut content = None;
        let mut style = None;
        for (idx, layer) in self.layers.iter().enumerate().take(last + 1) {
            act = apply(layer, shape, act);
            shape = layer.output;
            if idx == self.content_idx {
                content = Some(act.clone());
            }
            if idx == self.style_idx {
                style = Some(act.clone());
            }
        }
        let content = content.expect("content tap reached");
        let style = style.expect("style tap reached");
        if content.iter().chain(&style).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backbone activations"));
        }
        Ok(TapOutputs {
            content,
            style,
            style_shape: self.layers[self.style_idx].output,
        })
    }
}

fn apply(layer: &Layer, input_shape: Shape, mut act: Vec<f32>) -> Vec<f32> {
    match (&layer.spec, input_shape, layer.output) {
        (LayerSpec::Conv2d { kernel, padding, .. }, Shape::Map { c, h, w }, Shape::Map { c: oc, h: oh, w: ow }) => {
            conv2d(
                &act,
                (c, h, w),
                &layer.weight,
                &layer.bias,
                oc,
                *kernel,
                *padding,
                (oh, ow),
            )
        }
        (LayerSpec::Relu { .. }, _, _) => {
            for v in &mut act {
                *v = v.max(0.0);
            }
            act
        }
        (LayerSpec::MaxPool { size, .. }, Shape::Map { c, h, w }, Shape::Map { h: oh, w: ow, .. }) => {
            max_pool(&act, (c, h, w), *size, (oh, ow))
        }
        (LayerSpec::Flatten { .. }, _, _) => act,
        (
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            },
            _,
            _,
        ) => {
            let mut out = layer.bias.clone();
            unsafe {
                // SAFETY: weight is out_features x in_features, act has
                // in_features values, out has out_features values; all
                // strides describe contiguous row-major storage.
                matrixmultiply::sgemm(
                    *out_features,
                    *in_features,
                    1,
                    1.0,
                    layer.weight.as_ptr(),
                    *in_features as isize,
                    1,
                    act.as_ptr(),
                    1,
                    1,
                    1.0,
                    out.as_mut_ptr(),
                    1,
                    1,
                );
            }
            out
        }
        _ => unreachable!("shapes checked in Graph::new"),
    }
}

/// Rows of `im2col` scratch kept per band, bounding peak memory for the
/// wide early layers.
const IM2COL_BUDGET: usize = 1 << 22;

#[allow(clippy::too_many_arguments)]
fn conv2d(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    out_c: usize,
    k: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<f32> {
    let ckk = c * k * k;
    let plane = oh * ow;
    let mut out = vec![0f32; out_c * plane];
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias[o]);
    }

    let band_rows = (IM2COL_BUDGET / (ckk * ow).max(1)).clamp(1, oh);
    let mut cols = vec![0f32; ckk * band_rows * ow];
    let mut row0 = 0;
    while row0 < oh {
        let rows = band_rows.min(oh - row0);
        let ncols = rows * ow;
        // cols[(ci*k*k + ky*k + kx), (r*ow + x)]
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let crow = (ci * k + ky) * k + kx;
                    let dst = &mut cols[crow * ncols..(crow + 1) * ncols];
                    for r in 0..rows {
                        let iy = (row0 + r + ky) as isize - pad as isize;
                        let line = &mut dst[r * ow..(r + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &input[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        for (x, slot) in line.iter_mut().enumerate() {
                            let ix = (x + kx) as isize - pad as isize;
                            *slot = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
        unsafe {
            // SAFETY: weight is out_c x ckk row-major, cols is ckk x ncols
            // row-major; the destination block starts at column row0*ow of an
            // out_c x plane row-major matrix and spans ncols columns.
            matrixmultiply::sgemm(
                out_c,
                ckk,
                ncols,
                1.0,
                weight.as_ptr(),
                ckk as isize,
                1,
                cols.as_ptr(),
                ncols as isize,
                1,
                1.0,
                out.as_mut_ptr().add(row0 * ow),
                plane as isize,
                1,
            );
        }
        row0 += rows;
    }
    out
}

fn max_pool(input: &[f32], (c, h, w): (usize, usize, usize), size: usize, (oh, ow): (usize, usize)) -> Vec<f32> {
    let mut out = vec![0f32; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        best = best.max(src[(y * size + dy) * w + x * size + dx]);
                    }
                }
                out[(ch * oh + y) * ow + x] = best;
            }
        }
    }
    out
}
