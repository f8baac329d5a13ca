//! Convolutional backbone with two taps: the last fully connected activation
//! (content) and a late convolution activation (style source).

pub mod graph;
mod preprocess;
pub mod refpack;
pub mod stub;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use graph::Graph;
pub use preprocess::{decode_icon, preprocess, to_float, PreprocessedImage, Preprocessing, IMAGENET_MEANS};

/// Output of the content tap.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentVector(pub Vec<f32>);

impl ContentVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Style-tap responses: `filters` rows by `positions` columns, row-major.
/// Entry `(i, j)` is the activation of filter `i` at spatial position `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    filters: usize,
    positions: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(filters: usize, positions: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != filters * positions {
            return Err(Error::Shape(format!(
                "feature map {filters}x{positions} needs {} values, got {}",
                filters * positions,
                data.len()
            )));
        }
        Ok(FeatureMap {
            filters,
            positions,
            data,
        })
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, filter: usize) -> &[f32] {
        &self.data[filter * self.positions..(filter + 1) * self.positions]
    }
}

/// Where backbone weights come from.
///
/// Parsed from strings: `stub` (seed 0), `stub:<seed>`, `stub-zero`, or a
/// path to a serialized graph file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelSource {
    Stub { seed: u64 },
    ZeroStub,
    File(PathBuf),
}

impl FromStr for ModelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "stub" {
            return Ok(ModelSource::Stub { seed: 0 });
        }
        if s == "stub-zero" {
            return Ok(ModelSource::ZeroStub);
        }
        if let Some(seed) = s.strip_prefix("stub:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad stub seed in {s:?}")))?;
            return Ok(ModelSource::Stub { seed });
        }
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty model source".into()));
        }
        Ok(ModelSource::File(PathBuf::from(s)))
    }
}

impl TryFrom<String> for ModelSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelSource> for String {
    fn from(m: ModelSource) -> String {
        m.to_string()
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::Stub { seed } => write!(f, "stub:{seed}"),
            ModelSource::ZeroStub => f.write_str("stub-zero"),
            ModelSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// A loaded backbone. Immutable; `extract` may be called concurrently.
#[derive(Debug, Clone)]
pub struct Backbone {
    source: ModelSource,
    graph: Graph,
}

impl Backbone {
    /// Loads `source`; stubs are built for `input_size`, graph files must
    /// declare that input size themselves.
    pub fn load(source: &ModelSource, input_size: u32) -> Result<Self> {
        let size = input_size as usize;
        let graph = match source {
            ModelSource::Stub { seed } => stub::stub_graph(*seed, size)?,
            ModelSource::ZeroStub => stub::zero_stub_graph(size)?,
            ModelSource::File(path) => Graph::load(path)?,
        };
        if graph.input_size() != size {
            return Err(Error::Shape(format!(
                "model expects {0}x{0} input, configured input size is {size}",
                graph.input_size()
            )));
        }
        Ok(Backbone {
            source: source.clone(),
            graph,
        })
    }

    pub fn from_graph(source: ModelSource, graph: Graph) -> Self {
        Backbone { source, graph }
    }

    pub fn source(&self) -> &ModelSource {
        &self.source
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn input_size(&self) -> usize {
        self.graph.input_size()
    }

    pub fn tap_names(&self) -> (&str, &str) {
        let h = self.graph.header();
        (&h.content_tap, &h.style_tap)
    }

    pub fn content_dim(&self) -> usize {
        self.graph.content_dim()
    }

    /// `(filters, positions)` of the style tap.
    pub fn style_dims(&self) -> (usize, usize) {
        self.graph.style_dims()
    }

    /// Content vector and style feature map for one preprocessed image.
    pub fn extract(&self, img: &PreprocessedImage) -> Result<(ContentVector, FeatureMap)> {
        if img.size() != self.input_size() {
            return Err(Error::Shape(format!(
                "image is {0}x{0}, backbone expects {1}x{1}",
                img.size(),
                self.input_size()
            )));
        }
        let taps = self.graph.forward(img.data())?;
        let (filters, positions) = self.style_dims();
        Ok((
            ContentVector(taps.content),
            FeatureMap::new(filters, positions, taps.style)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(size: u32) -> PreprocessedImage {
        let img = image::Rgb32FImage::from_fn(size, size, |x, y| {
            image::Rgb([
                ((x * 7 + y * 3) % 31) as f32 / 31.0,
                ((x ^ y) % 13) as f32 / 13.0,
                ((x * y) % 29) as f32 / 29.0,
            ])
        });
        preprocess(
            &img,
            &Preprocessing {
                input_size: size,
                means: IMAGENET_MEANS,
            },
        )
        .unwrap()
    }

    #[test]
    fn stub_taps_have_scaled_down_shapes() {
        let bb = Backbone::load(&ModelSource::Stub { seed: 3 }, 64).unwrap();
        let (content, fmap) = bb.extract(&textured(64)).unwrap();
        assert_eq!(content.len(), 32);
        assert_eq!((fmap.filters(), fmap.positions()), (8, 16));
        assert!(content.as_slice().iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(fmap.data().iter().all(|&v| v >= 0.0));
        assert!(content.as_slice().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn stub_at_full_input_size_has_196_positions() {
        let bb = Backbone::load(&ModelSource::Stub { seed: 0 }, 224).unwrap();
        assert_eq!(bb.style_dims(), (8, 196));
    }

    #[test]
    fn zero_stub_gives_zero_outputs() {
        let bb = Backbone::load(&ModelSource::ZeroStub, 64).unwrap();
        let (content, fmap) = bb.extract(&textured(64)).unwrap();
        assert!(content.as_slice().iter().all(|&v| v == 0.0));
        assert!(fmap.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extraction_is_bit_identical_across_calls() {
        let bb = Backbone::load(&ModelSource::Stub { seed: 11 }, 64).unwrap();
        let img = textured(64);
        assert_eq!(bb.extract(&img).unwrap(), bb.extract(&img).unwrap());
    }

    #[test]
    fn input_size_mismatch_is_rejected() {
        let bb = Backbone::load(&ModelSource::Stub { seed: 0 }, 64).unwrap();
        assert!(matches!(bb.extract(&textured(32)), Err(Error::Shape(_))));
    }

    #[test]
    fn saved_graph_loads_as_file_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stub.lkgr");
        stub::stub_graph(5, 32).unwrap().save(&path).unwrap();
        let from_file = Backbone::load(&ModelSource::File(path), 32).unwrap();
        let direct = Backbone::load(&ModelSource::Stub { seed: 5 }, 32).unwrap();
        let img = textured(32);
        assert_eq!(from_file.extract(&img).unwrap(), direct.extract(&img).unwrap());
        assert!(Backbone::load(from_file.source(), 64).is_err());
    }

    #[test]
    fn model_source_strings() {
        assert_eq!("stub".parse::<ModelSource>().unwrap(), ModelSource::Stub { seed: 0 });
        assert_eq!("stub:9".parse::<ModelSource>().unwrap(), ModelSource::Stub { seed: 9 });
        assert_eq!("stub-zero".parse::<ModelSource>().unwrap(), ModelSource::ZeroStub);
        assert_eq!(
            "models/vgg16.lkgr".parse::<ModelSource>().unwrap(),
            ModelSource::File("models/vgg16.lkgr".into())
        );
        assert!("stub:x".parse::<ModelSource>().is_err());
    }
}
