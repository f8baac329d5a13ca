//! Reference activations shipped next to an exported graph, used to check
//! that this interpreter reproduces the source framework.
//!
//! A pack is a directory of tensor files named `input_NN.bin`,
//! `content_NN.bin` and `style_NN.bin` for `NN = 00, 01, ...`. Each file is
//! `ndim: u32`, `ndim` dimensions as `u32`, then the values as `f32`, all
//! little-endian. Inputs are already preprocessed `(3, S, S)` tensors.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backbone, PreprocessedImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            what: "reference tensor",
            reason: reason.to_string(),
        };
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated header"))
        };
        let ndim = word(0)? as usize;
        let dims = (0..ndim)
            .map(|i| word(1 + i).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let body = &bytes[4 * (1 + ndim)..];
        if body.len() != 4 * count {
            return Err(bad(&format!("{} bytes of data for shape {dims:?}", body.len())));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefPackReport {
    pub cases: usize,
    pub max_abs_content: f32,
    pub max_abs_style: f32,
}

impl RefPackReport {
    pub fn max_abs(&self) -> f32 {
        self.max_abs_content.max(self.max_abs_style)
    }
}

fn max_abs_diff(what: &str, got: &[f32], expected: &Tensor) -> Result<f32> {
    if got.len() != expected.data.len() {
        return Err(Error::Shape(format!(
            "{what}: backbone produced {} values, reference has shape {:?}",
            got.len(),
            expected.dims
        )));
    }
    Ok(got
        .iter()
        .zip(&expected.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0f32, f32::max))
}

/// Runs every reference input through `backbone` and reports the largest
/// absolute deviation per tap.
pub fn verify_reference_pack(backbone: &Backbone, dir: impl AsRef<Path>) -> Result<RefPackReport> {
    let dir = dir.as_ref();
    let mut report = RefPackReport {
        cases: 0,
        max_abs_content: 0.0,
        max_abs_style: 0.0,
    };
    loop {
        let input_path = dir.join(format!("input_{:02}.bin", report.cases));
        if !input_path.exists() {
            break;
        }
        let input = Tensor::read(&input_path)?;
        let size = backbone.input_size();
        if input.dims != [3, size, size] {
            return Err(Error::Shape(format!(
                "{}: shape {:?}, backbone expects [3, {size}, {size}]",
                input_path.display(),
                input.dims
            )));
        }
        let img = PreprocessedImage::from_raw(size, input.data, [0.0; 3])?;
        let (content, style) = backbone.extract(&img)?;
        let c = Tensor::read(dir.join(format!("content_{:02}.bin", report.cases)))?;
        let s = Tensor::read(dir.join(format!("style_{:02}.bin", report.cases)))?;
        report.max_abs_content = report
            .max_abs_content
            .max(max_abs_diff("content", content.as_slice(), &c)?);
        report.max_abs_style = report.max_abs_style.max(max_abs_diff("style", style.data(), &s)?);
        report.cases += 1;
    }
    if report.cases == 0 {
        return Err(Error::Format {
            what: "reference pack",
            reason: format!("no input_00.bin in {}", dir.display()),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelSource;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_pack(dir: &Path, bb: &Backbone, n: usize) {
        let size = bb.input_size();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..n {
            let data: Vec<f32> = (0..3 * size * size).map(|_| rng.random_range(-0.5..0.5)).collect();
            let img = PreprocessedImage::from_raw(size, data.clone(), [0.0; 3]).unwrap();
            let (c, s) = bb.extract(&img).unwrap();
            Tensor {
                dims: vec![3, size, size],
                data,
            }
            .write(dir.join(format!("input_{i:02}.bin")))
            .unwrap();
            Tensor {
                dims: vec![c.len()],
                data: c.0,
            }
            .write(dir.join(format!("content_{i:02}.bin")))
            .unwrap();
            let side = (s.positions() as f64).sqrt() as usize;
            Tensor {
                dims: vec![s.filters(), side, side],
                data: s.data().to_vec(),
            }
            .write(dir.join(format!("style_{i:02}.bin")))
            .unwrap();
        }
    }

    #[test]
    fn tensor_round_trip_and_truncation() {
        let t = Tensor {
            dims: vec![2, 3],
            data: (0..6).map(|v| v as f32).collect(),
        };
        assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        let bytes = t.to_bytes();
        assert!(Tensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Tensor::from_bytes(&[1, 0]).is_err());
    }

    #[test]
    fn self_generated_pack_matches_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let bb = Backbone::load(&ModelSource::Stub { seed: 2 }, 32).unwrap();
        write_pack(dir.path(), &bb, 3);
        let report = verify_reference_pack(&bb, dir.path()).unwrap();
        assert_eq!(report.cases, 3);
        assert_eq!(report.max_abs(), 0.0);

        let other = Backbone::load(&ModelSource::Stub { seed: 3 }, 32).unwrap();
        assert!(verify_reference_pack(&other, dir.path()).unwrap().max_abs() > 1e-4);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let bb = Backbone::load(&ModelSource::Stub { seed: 2 }, 32).unwrap();
        assert!(verify_reference_pack(&bb, dir.path()).is_err());
    }
}
