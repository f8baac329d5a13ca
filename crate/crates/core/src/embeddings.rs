//! Style and content embeddings: Gram matrix of the style tap, its upper
//! triangle, and a very sparse random projection down to `k` dimensions.

use image::Rgb32FImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{decode_icon, preprocess, Backbone, ContentVector, FeatureMap, Preprocessing};
use crate::corpus::IconRecord;
use crate::error::{Error, Result};

/// Identifier of the projection entry generator. Bump when the sampling
/// procedure changes; stores record it through the config hash.
pub const PROJECTION_GENERATOR: &str = "chacha8-row-stream-geometric-v1";

/// Symmetric `n x n` matrix of filter co-activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "{n}x{n} matrix needs {} values, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(GramMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `G = F Fᵀ`: entry `(i, j)` is the dot product of filter rows `i` and `j`
/// over all spatial positions. Accumulates in f64; the lower triangle is a
/// mirror of the upper one, so the result is exactly symmetric.
pub fn gram(features: &FeatureMap) -> Result<GramMatrix> {
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature map"));
    }
    let n = features.filters();
    let mut data = vec![0f64; n * n];
    for i in 0..n {
        let fi = features.row(i);
        for j in i..n {
            let fj = features.row(j);
            let dot: f64 = fi.iter().zip(fj).map(|(&a, &b)| a as f64 * b as f64).sum();
            data[i * n + j] = dot;
            data[j * n + i] = dot;
        }
    }
    Ok(GramMatrix { n, data })
}

/// Flattened upper triangle (diagonal included) of a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector(pub Vec<f64>);

pub fn style_dim(filters: usize) -> usize {
    filters * (filters + 1) / 2
}

/// Row-major walk over `(i, j)` with `j >= i`. Rejects matrices whose
/// mirrored entries differ by more than 1e-9 relative.
pub fn flatten_upper(g: &GramMatrix) -> Result<StyleVector> {
    let n = g.n;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (g.get(i, j), g.get(j, i));
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
                return Err(Error::Asymmetric { row: i, col: j });
            }
        }
    }
    let mut out = Vec::with_capacity(style_dim(n));
    for i in 0..n {
        out.extend_from_slice(&g.data[i * n + i..(i + 1) * n]);
    }
    Ok(StyleVector(out))
}

/// Sparse `D x k` random matrix with i.i.d. entries
/// `D^{1/4} · {+1 w.p. 1/(2√D), 0 w.p. 1 − 1/√D, −1 w.p. 1/(2√D)}`.
///
/// Row `i` is drawn from its own ChaCha8 stream (`seed`, stream `i`) by
/// geometric skipping over zero entries, so any worker can regenerate any
/// row independently and the matrix depends only on `(D, k, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    seed: u64,
    input_dim: usize,
    output_dim: usize,
    row_start: Vec<usize>,
    /// Column index of each nonzero, with the sign in `negative`.
    cols: Vec<u32>,
    negative: Vec<bool>,
}

fn sample_row(
    seed: u64,
    row: usize,
    input_dim: usize,
    output_dim: usize,
    cols: &mut Vec<u32>,
    negative: &mut Vec<bool>,
) {
    let p = 1.0 / (input_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    let log_q = (1.0 - p).ln();
    let mut col = 0usize;
    loop {
        let gap = if p >= 1.0 {
            0
        } else {
            let u: f64 = rng.random();
            // 1 - u lies in (0, 1]
            let g = ((1.0 - u).ln() / log_q).floor();
            if g >= (output_dim - col) as f64 {
                break;
            }
            g as usize
        };
        col += gap;
        if col >= output_dim {
            break;
        }
        cols.push(col as u32);
        negative.push(rng.random::<bool>());
        col += 1;
    }
}

impl ProjectionMatrix {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "projection dimensions must be positive, got {input_dim}x{output_dim}"
            )));
        }
        if output_dim > u32::MAX as usize {
            return Err(Error::InvalidArgument("projection output dimension too large".into()));
        }
        let rows = generate_rows(seed, input_dim, output_dim);
        let mut row_start = Vec::with_capacity(input_dim + 1);
        let total: usize = rows.iter().map(|(c, _)| c.len()).sum();
        let mut cols = Vec::with_capacity(total);
        let mut negative = Vec::with_capacity(total);
        row_start.push(0);
        for (c, s) in rows {
            cols.extend(c);
            negative.extend(s);
            row_start.push(cols.len());
        }
        Ok(ProjectionMatrix {
            seed,
            input_dim,
            output_dim,
            row_start,
            cols,
            negative,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Magnitude `D^{1/4}` shared by every nonzero entry.
    pub fn magnitude(&self) -> f64 {
        (self.input_dim as f64).sqrt().sqrt()
    }

    pub fn nonzeros(&self) -> usize {
        self.cols.len()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let span = self.row_start[row]..self.row_start[row + 1];
        match self.cols[span.clone()].binary_search(&(col as u32)) {
            Ok(pos) if self.negative[span.start + pos] => -self.magnitude(),
            Ok(_) => self.magnitude(),
            Err(_) => 0.0,
        }
    }

    /// `(row, col, value)` for every nonzero entry, row-major.
    pub fn iter_nonzeros(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.magnitude();
        (0..self.input_dim).flat_map(move |row| {
            (self.row_start[row]..self.row_start[row + 1])
                .map(move |idx| (row, self.cols[idx] as usize, if self.negative[idx] { -m } else { m }))
        })
    }

    /// `(1/√k) · A · R` for a row-major `n x D` batch. Rows are projected
    /// independently, so the result does not depend on batch composition.
    pub fn project(&self, batch: &[f64]) -> Result<Vec<f64>> {
        if !batch.len().is_multiple_of(self.input_dim) {
            return Err(Error::Shape(format!(
                "batch of {} values is not a multiple of the input dimension {}",
                batch.len(),
                self.input_dim
            )));
        }
        let mut out = vec![0f64; batch.len() / self.input_dim * self.output_dim];
        for (row, dst) in batch.chunks(self.input_dim).zip(out.chunks_mut(self.output_dim)) {
            self.project_row(row, dst);
        }
        Ok(out)
    }

    fn project_row(&self, row: &[f64], dst: &mut [f64]) {
        for (i, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for idx in self.row_start[i]..self.row_start[i + 1] {
                let c = self.cols[idx] as usize;
                if self.negative[idx] {
                    dst[c] -= a;
                } else {
                    dst[c] += a;
                }
            }
        }
        let scale = self.magnitude() / (self.output_dim as f64).sqrt();
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
}

#[cfg(feature = "parallel")]
fn generate_rows(seed: u64, input_dim: usize, output_dim: usize) -> Vec<(Vec<u32>, Vec<bool>)> {
    use rayon::prelude::*;
    (0..input_dim)
        .into_par_iter()
        .map(|row| {
            let (mut c, mut s) = (Vec::new(), Vec::new());
            sample_row(seed, row, input_dim, output_dim, &mut c, &mut s);
            (c, s)
        })
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn generate_rows(seed: u64, input_dim: usize, output_dim: usize) -> Vec<(Vec<u32>, Vec<bool>)> {
    (0..input_dim)
        .map(|row| {
            let (mut c, mut s) = (Vec::new(), Vec::new());
            sample_row(seed, row, input_dim, output_dim, &mut c, &mut s);
            (c, s)
        })
        .collect()
}

/// Projects a row-major `n x D` batch with `R`.
pub fn project(batch: &[f64], r: &ProjectionMatrix) -> Result<Vec<f64>> {
    r.project(batch)
}

/// Paired content vector and projected style vector of one icon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IconEmbedding {
    pub app_id: String,
    pub content: Vec<f32>,
    pub style: Vec<f32>,
}

/// Builds an embedding straight from backbone tap outputs:
/// `gram → flatten_upper → project`, content passed through.
pub fn embed_taps(
    app_id: impl Into<String>,
    content: &ContentVector,
    features: &FeatureMap,
    projection: &ProjectionMatrix,
) -> Result<IconEmbedding> {
    let style = flatten_upper(&gram(features)?)?;
    if style.0.len() != projection.input_dim() {
        return Err(Error::Shape(format!(
            "style vector has {} entries, projection expects {}",
            style.0.len(),
            projection.input_dim()
        )));
    }
    let projected = projection.project(&style.0)?;
    if projected.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projected style vector"));
    }
    Ok(IconEmbedding {
        app_id: app_id.into(),
        content: content.as_slice().to_vec(),
        style: projected.iter().map(|&v| v as f32).collect(),
    })
}

/// Everything needed to turn an icon file into an [`IconEmbedding`].
#[derive(Debug, Clone)]
pub struct Encoder {
    backbone: Backbone,
    preprocessing: Preprocessing,
    projection: ProjectionMatrix,
}

impl Encoder {
    pub fn new(backbone: Backbone, preprocessing: Preprocessing, projection: ProjectionMatrix) -> Result<Self> {
        let (filters, _) = backbone.style_dims();
        if projection.input_dim() != style_dim(filters) {
            return Err(Error::Shape(format!(
                "projection input dimension {} does not match style dimension {} of {filters} filters",
                projection.input_dim(),
                style_dim(filters)
            )));
        }
        if preprocessing.input_size as usize != backbone.input_size() {
            return Err(Error::Shape(format!(
                "preprocessing size {} does not match backbone input {}",
                preprocessing.input_size,
                backbone.input_size()
            )));
        }
        Ok(Encoder {
            backbone,
            preprocessing,
            projection,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn content_dim(&self) -> usize {
        self.backbone.content_dim()
    }

    pub fn style_dim(&self) -> usize {
        self.projection.output_dim()
    }

    pub fn encode_image(&self, app_id: &str, img: &Rgb32FImage) -> Result<IconEmbedding> {
        let input = preprocess(img, &self.preprocessing)?;
        let (content, features) = self.backbone.extract(&input)?;
        embed_taps(app_id, &content, &features, &self.projection)
    }

    /// preprocess → extract → (content kept; style: gram → flatten → project).
    pub fn encode_icon(&self, record: &IconRecord) -> Result<IconEmbedding> {
        let img = decode_icon(&record.icon_path)?;
        self.encode_image(&record.app_id, &img)
    }
}
