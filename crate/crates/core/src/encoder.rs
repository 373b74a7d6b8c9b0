//! Headline vectors and the category embedding table.
//!
//! Headline vectors come either from a precomputed file (pooled sentence
//! embeddings produced by an external encoder) or from [`hash_encode`], a
//! signed feature-hashing encoder over unigrams and bigrams.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::nn::{normal_init, Tensor};
use crate::seed::splitmix64;

pub const HEADLINE_DIM: usize = 768;
pub const CATEGORY_DIM: usize = 30;

/// Where the vectors of an [`EmbeddingStore`] came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Provenance {
    Precomputed,
    Hashed { seed: u64 },
}

/// Headline id → vector, all of one dimension.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dims: usize,
    provenance: Provenance,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dims: usize, provenance: Provenance) -> Self {
        EmbeddingStore {
            dims,
            provenance,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Encodes every `(id, tokens)` pair with [`hash_encode`].
    pub fn hashed<'a>(
        items: impl IntoIterator<Item = (&'a str, &'a [String])>,
        dims: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = EmbeddingStore::new(dims, Provenance::Hashed { seed });
        for (id, tokens) in items {
            store.insert(id, hash_encode(tokens, dims, seed)?)?;
        }
        Ok(store)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dims {
            return Err(Error::InvalidArgument(format!(
                "embedding for {id:?} has {} values, expected {}",
                values.len(),
                self.dims
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for {id:?}")));
        }
        if self.index.contains_key(id) {
            return Err(Error::InvalidArgument(format!("duplicate embedding id {id:?}")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(&values);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        let i = *self
            .index
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
        Ok(&self.data[i * self.dims..(i + 1) * self.dims])
    }

    /// `id<TAB>v1 v2 … vD` per line; values use the shortest representation
    /// that parses back to the same `f64`.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            let row = &self.data[i * self.dims..(i + 1) * self.dims];
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{id}\t{}", values.join(" "))?;
        }
        Ok(())
    }

    /// Magic, dimension and count header, an id table, then one contiguous
    /// little-endian `f64` block.
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.dims as u64).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
        }
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

const BINARY_MAGIC: &[u8; 8] = b"HLREMB01";

/// Loads a 768-dimensional embedding file (text or binary, detected by the
/// magic header).
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    load_embeddings_with_dim(path, HEADLINE_DIM)
}

pub fn load_embeddings_with_dim(path: &Path, dims: usize) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&bytes[8..], path, dims)
    } else {
        read_text(&bytes[..], path, dims)
    }
}

fn read_text(input: impl Read, path: &Path, dims: usize) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(dims, Provenance::Precomputed);
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, line_no, "expected `id<TAB>values`"))?;
        let values = rest
            .split_ascii_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("{id}: {e}")))?;
        if values.len() != dims {
            return Err(Error::parse(
                path,
                line_no,
                format!("{id}: {} values, expected {dims}", values.len()),
            ));
        }
        store
            .insert(id, values)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    }
    Ok(store)
}

fn read_binary(mut bytes: &[u8], path: &Path, dims: usize) -> Result<EmbeddingStore> {
    let truncated = || Error::Validation {
        path: path.to_path_buf(),
        message: "truncated binary embedding file".into(),
    };
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() < n {
            return Err(truncated());
        }
        let (head, tail) = bytes.split_at(n);
        bytes = tail;
        Ok(head)
    };
    let file_dims = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if file_dims != dims {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            message: format!("dimension {file_dims}, expected {dims}"),
        });
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len)?).map_err(|_| Error::Validation {
            path: path.to_path_buf(),
            message: "id is not UTF-8".into(),
        })?;
        ids.push(id.to_string());
    }
    let mut store = EmbeddingStore::new(dims, Provenance::Precomputed);
    for id in ids {
        let raw = take(dims * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&id, values).map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok(store)
}

const BUCKET_KEY: u64 = 0x243F_6A88_85A3_08D3;
const SIGN_KEY: u64 = 0x1319_8A2E_0370_7344;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

fn feature_slot(parts: &[&[u8]], dims: usize, seed: u64) -> (usize, f64) {
    let base = fnv1a(parts);
    let bucket = splitmix64(base ^ splitmix64(seed ^ BUCKET_KEY)) % dims as u64;
    let sign = if splitmix64(base ^ splitmix64(seed ^ SIGN_KEY)) & 1 == 0 {
        1.0
    } else {
        -1.0
    };
    (bucket as usize, sign)
}

/// Signed feature hashing of unigrams and bigrams, L2-normalized.
///
/// Each n-gram lands in one bucket with a ±1 sign taken from a second,
/// independent hash. A sequence of `n` tokens produces `2n − 1` features, an
/// odd count, so the sum can never cancel to the zero vector.
pub fn hash_encode(tokens: &[String], dims: usize, seed: u64) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("hash_encode of an empty token list".into()));
    }
    if dims == 0 {
        return Err(Error::InvalidArgument("hash_encode into zero dimensions".into()));
    }
    let mut v = vec![0.0; dims];
    for t in tokens {
        let (b, s) = feature_slot(&[b"\x01", t.as_bytes()], dims, seed);
        v[b] += s;
    }
    for w in tokens.windows(2) {
        let (b, s) = feature_slot(&[b"\x02", w[0].as_bytes(), b"\x1f", w[1].as_bytes()], dims, seed);
        v[b] += s;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

/// `hhl ⊕ hhc`: headline vector followed by category vector.
pub fn concat(headline: &[f64], category: &[f64]) -> Result<Vec<f64>> {
    if headline.len() != HEADLINE_DIM || category.len() != CATEGORY_DIM {
        return Err(Error::Shape(format!(
            "concat expects {HEADLINE_DIM} + {CATEGORY_DIM} values, got {} + {}",
            headline.len(),
            category.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADLINE_DIM + CATEGORY_DIM);
    out.extend_from_slice(headline);
    out.extend_from_slice(category);
    Ok(out)
}

/// One trainable row per category (including `unclassified`), in
/// [`Category::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTable {
    table: Tensor,
}

impl CategoryTable {
    /// Rows drawn from `N(0, 1/√dim)`.
    pub fn init(dim: usize, seed: u64) -> Result<Self> {
        let std_dev = 1.0 / (dim as f64).sqrt();
        Ok(CategoryTable {
            table: normal_init(&[Category::ALL.len(), dim], std_dev, seed)?,
        })
    }

    pub fn from_tensor(table: Tensor) -> Result<Self> {
        if table.rows() != Category::ALL.len() || table.shape().len() != 2 {
            return Err(Error::Shape(format!("category table {:?}", table.shape())));
        }
        Ok(CategoryTable { table })
    }

    pub fn embed(&self, category: Category) -> &[f64] {
        self.table.row(category.index())
    }

    /// Looks a category up by name.
    pub fn embed_name(&self, name: &str) -> Result<&[f64]> {
        Ok(self.embed(name.parse::<Category>()?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.table
    }

    pub fn into_tensor(self) -> Tensor {
        self.table
    }
}
