//! On-disk artifacts: the embedding store with its row → app_id sidecar,
//! and the SIFT descriptor cache.
//!
//! Embedding store layout (little-endian):
//!
//! ```text
//! magic            4 bytes  "ICNE"
//! version          u32      = 1
//! flags            u32      bit 0: style vectors are projected
//! content_dim      u32
//! style_dim        u32
//! rows             u64
//! projection_seed  u64
//! input_size       u32
//! means            3 x f32
//! config_hash      32 bytes SHA-256 of the pipeline config
//! data             rows x (content_dim + style_dim) f32, content first
//! ```
//!
//! The sidecar `<store>.ids.jsonl` holds one `{"row": i, "app_id": "..."}`
//! object per row, in row order.
//!
//! Descriptor cache layout: magic "ICSD", version u32, config_hash (32
//! bytes), icon count u64, then per icon a u32 descriptor count `t` followed
//! by `t x 128` f32.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embeddings::IconEmbedding;
use crate::error::{Error, Result};
use crate::sift::{SiftDescriptorSet, DESCRIPTOR_LEN};

pub const STORE_MAGIC: &[u8; 4] = b"ICNE";
pub const STORE_VERSION: u32 = 1;
pub const FLAG_STYLE_PROJECTED: u32 = 1;
const STORE_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8 + 4 + 12 + 32;

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"ICSD";
pub const DESCRIPTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreHeader {
    pub flags: u32,
    pub content_dim: u32,
    pub style_dim: u32,
    pub projection_seed: u64,
    pub input_size: u32,
    pub means: [f32; 3],
    pub config_hash: [u8; 32],
}

impl StoreHeader {
    pub fn config_hash_hex(&self) -> String {
        hex::encode(self.config_hash)
    }

    fn row_len(&self) -> usize {
        (self.content_dim + self.style_dim) as usize
    }
}

/// Row-ordered embeddings with their app ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    header: StoreHeader,
    app_ids: Vec<String>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct SidecarLine {
    row: u64,
    app_id: String,
}

pub fn sidecar_path(store: &Path) -> PathBuf {
    let mut name = store.as_os_str().to_owned();
    name.push(".ids.jsonl");
    PathBuf::from(name)
}

fn corrupt(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(corrupt(self.what, "unexpected end of file"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt(self.what, "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

impl EmbeddingStore {
    pub fn new(header: StoreHeader, embeddings: Vec<IconEmbedding>) -> Result<Self> {
        let mut data = Vec::with_capacity(embeddings.len() * header.row_len());
        let mut app_ids = Vec::with_capacity(embeddings.len());
        for e in embeddings {
            if e.content.len() != header.content_dim as usize || e.style.len() != header.style_dim as usize {
                return Err(Error::Shape(format!(
                    "embedding {:?} has dims ({}, {}), store expects ({}, {})",
                    e.app_id,
                    e.content.len(),
                    e.style.len(),
                    header.content_dim,
                    header.style_dim
                )));
            }
            data.extend_from_slice(&e.content);
            data.extend_from_slice(&e.style);
            app_ids.push(e.app_id);
        }
        Ok(EmbeddingStore { header, app_ids, data })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.app_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.app_ids.is_empty()
    }

    pub fn app_ids(&self) -> &[String] {
        &self.app_ids
    }

    pub fn content(&self, row: usize) -> &[f32] {
        let start = row * self.header.row_len();
        &self.data[start..start + self.header.content_dim as usize]
    }

    pub fn style(&self, row: usize) -> &[f32] {
        let start = row * self.header.row_len() + self.header.content_dim as usize;
        &self.data[start..start + self.header.style_dim as usize]
    }

    pub fn embedding(&self, row: usize) -> IconEmbedding {
        IconEmbedding {
            app_id: self.app_ids[row].clone(),
            content: self.content(row).to_vec(),
            style: self.style(row).to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(STORE_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&h.flags.to_le_bytes());
        out.extend_from_slice(&h.content_dim.to_le_bytes());
        out.extend_from_slice(&h.style_dim.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&h.projection_seed.to_le_bytes());
        out.extend_from_slice(&h.input_size.to_le_bytes());
        for m in h.means {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&h.config_hash);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn sidecar_text(&self) -> String {
        let mut out = String::new();
        for (row, app_id) in self.app_ids.iter().enumerate() {
            let line = SidecarLine {
                row: row as u64,
                app_id: app_id.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("sidecar line serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes the binary store at `path` and its sidecar next to it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, self.sidecar_text()).map_err(|e| Error::io(side, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Self::from_parts(&bytes, &text)
    }

    pub fn from_parts(bytes: &[u8], sidecar: &str) -> Result<Self> {
        const WHAT: &str = "embedding store";
        let mut r = Reader { bytes, what: WHAT };
        if r.take(4)? != STORE_MAGIC {
            return Err(corrupt(WHAT, "bad magic"));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(corrupt(WHAT, format!("unsupported version {version}")));
        }
        let flags = r.u32()?;
        let content_dim = r.u32()?;
        let style_dim = r.u32()?;
        let rows = r.u64()? as usize;
        let projection_seed = r.u64()?;
        let input_size = r.u32()?;
        let means = [
            f32::from_le_bytes(r.take(4)?.try_into().unwrap()),
            f32::from_le_bytes(r.take(4)?.try_into().unwrap()),
            f32::from_le_bytes(r.take(4)?.try_into().unwrap()),
        ];
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let header = StoreHeader {
            flags,
            content_dim,
            style_dim,
            projection_seed,
            input_size,
            means,
            config_hash,
        };
        let n = rows
            .checked_mul(header.row_len())
            .ok_or_else(|| corrupt(WHAT, "size overflow"))?;
        let data = r.f32s(n)?;
        if !r.bytes.is_empty() {
            return Err(corrupt(WHAT, "trailing bytes"));
        }

        let mut app_ids = Vec::with_capacity(rows);
        for (i, line) in sidecar.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let entry: SidecarLine =
                serde_json::from_str(line).map_err(|e| corrupt("store sidecar", format!("line {}: {e}", i + 1)))?;
            if entry.row != i as u64 {
                return Err(corrupt(
                    "store sidecar",
                    format!("line {} has row {}", i + 1, entry.row),
                ));
            }
            app_ids.push(entry.app_id);
        }
        if app_ids.len() != rows {
            return Err(corrupt(
                "store sidecar",
                format!("{} ids for {rows} rows", app_ids.len()),
            ));
        }
        Ok(EmbeddingStore { header, app_ids, data })
    }
}

/// Per-icon SIFT descriptors in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorCache {
    pub config_hash: [u8; 32],
    pub sets: Vec<SiftDescriptorSet>,
}

impl DescriptorCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DESCRIPTOR_MAGIC);
        out.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.sets.len() as u64).to_le_bytes());
        for set in &self.sets {
            out.extend_from_slice(&(set.len() as u32).to_le_bytes());
            for v in set.as_flat() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "descriptor cache";
        let mut r = Reader { bytes, what: WHAT };
        if r.take(4)? != DESCRIPTOR_MAGIC {
            return Err(corrupt(WHAT, "bad magic"));
        }
        let version = r.u32()?;
        if version != DESCRIPTOR_VERSION {
            return Err(corrupt(WHAT, format!("unsupported version {version}")));
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let count = r.u64()? as usize;
        let mut sets = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let t = r.u32()? as usize;
            let flat = r.f32s(t * DESCRIPTOR_LEN)?;
            sets.push(SiftDescriptorSet::from_flat(flat)?);
        }
        if !r.bytes.is_empty() {
            return Err(corrupt(WHAT, "trailing bytes"));
        }
        Ok(DescriptorCache { config_hash, sets })
    }

    pub fn config_hash_hex(&self) -> String {
        hex::encode(self.config_hash)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(c: u32, s: u32) -> StoreHeader {
        StoreHeader {
            flags: FLAG_STYLE_PROJECTED,
            content_dim: c,
            style_dim: s,
            projection_seed: 7,
            input_size: 224,
            means: [0.485, 0.456, 0.406],
            config_hash: [3; 32],
        }
    }

    #[test]
    fn header_bytes_follow_documented_layout() {
        let store = EmbeddingStore::new(
            header(2, 1),
            vec![IconEmbedding {
                app_id: "a".into(),
                content: vec![1.0, 2.0],
                style: vec![3.0],
            }],
        )
        .unwrap();
        let bytes = store.to_bytes();
        assert_eq!(&bytes[..4], b"ICNE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[28..36].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), STORE_HEADER_LEN + 12);
        assert_eq!(&bytes[STORE_HEADER_LEN..STORE_HEADER_LEN + 4], &1.0f32.to_le_bytes());
        assert_eq!(store.sidecar_text(), "{\"row\":0,\"app_id\":\"a\"}\n");
    }

    #[test]
    fn wrong_dims_are_rejected() {
        let e = IconEmbedding {
            app_id: "a".into(),
            content: vec![1.0],
            style: vec![3.0],
        };
        assert!(EmbeddingStore::new(header(2, 1), vec![e]).is_err());
    }

    #[test]
    fn sidecar_count_must_match() {
        let store = EmbeddingStore::new(header(1, 1), vec![]).unwrap();
        assert!(EmbeddingStore::from_parts(&store.to_bytes(), "{\"row\":0,\"app_id\":\"a\"}\n").is_err());
        assert!(EmbeddingStore::from_parts(b"ICNX", "").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.icne");
        let store = EmbeddingStore::new(
            header(2, 2),
            vec![
                IconEmbedding {
                    app_id: "a".into(),
                    content: vec![1.0, 2.0],
                    style: vec![3.0, 4.0],
                },
                IconEmbedding {
                    app_id: "b".into(),
                    content: vec![5.0, 6.0],
                    style: vec![7.0, 8.0],
                },
            ],
        )
        .unwrap();
        store.write(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = EmbeddingStore::read(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.style(1), &[7.0, 8.0]);
    }

    proptest! {
        #[test]
        fn store_bytes_round_trip(rows in proptest::collection::vec((proptest::collection::vec(-1e6f32..1e6, 3), proptest::collection::vec(0f32..1e3, 2)), 0..20)) {
            let embs: Vec<_> = rows.into_iter().enumerate().map(|(i, (c, s))| IconEmbedding { app_id: format!("id{i}"), content: c, style: s }).collect();
            let store = EmbeddingStore::new(header(3, 2), embs).unwrap();
            let back = EmbeddingStore::from_parts(&store.to_bytes(), &store.sidecar_text()).unwrap();
            prop_assert_eq!(back, store);
        }

        #[test]
        fn descriptor_cache_round_trip(counts in proptest::collection::vec(0usize..4, 0..6), seed in 0u32..1000) {
            let sets: Vec<_> = counts.iter().enumerate().map(|(i, &t)| {
                SiftDescriptorSet::from_flat((0..t * DESCRIPTOR_LEN).map(|j| ((j as u32 * 31 + i as u32 + seed) % 97) as f32).collect()).unwrap()
            }).collect();
            let cache = DescriptorCache { config_hash: [9; 32], sets };
            prop_assert_eq!(DescriptorCache::from_bytes(&cache.to_bytes()).unwrap(), cache);
        }
    }
}
