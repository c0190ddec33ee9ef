//! IDX ingestion, MNIST-scale generation, and `MSC1` dataset containers.
//!
//! `MSC1` layout (all little-endian): `MSC1`, u8 version, u32 record count,
//! then per record u16 height, u16 width, u8 label, u8 mode, u32 source
//! index, and `height * width` f32 pixels in row-major order.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::ScaleSet;
use crate::model::LabeledImage;
use crate::resample::AntiAliasMode;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"MSC1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 9;
pub const RECORD_HEADER_BYTES: usize = 10;

const IDX_IMAGES: u32 = 0x0803;
const IDX_LABELS: u32 = 0x0801;

/// Raw bytes of a file, transparently gunzipped when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::parse(at, "truncated IDX header"))
}

/// Greyscale images and labels from an IDX pair. Offsets in parse errors
/// refer to the decompressed stream.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxSource {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxSource {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Tensor<f64> {
        let s = self.rows * self.cols;
        Tensor::new(
            vec![self.rows, self.cols],
            self.pixels[i * s..(i + 1) * s].iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("consistent size")
    }
}

pub fn parse_idx_images(b: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(b, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::parse(0, format!("bad IDX image magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let (n, r, c) = (be_u32(b, 4)? as usize, be_u32(b, 8)? as usize, be_u32(b, 12)? as usize);
    let need = 16 + n * r * c;
    if b.len() < need {
        return Err(Error::parse(b.len(), format!("truncated image payload: {n} images of {r}x{c} need {need} bytes")));
    }
    Ok((n, r, c, b[16..need].to_vec()))
}

pub fn parse_idx_labels(b: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(b, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::parse(0, format!("bad IDX label magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let n = be_u32(b, 4)? as usize;
    if b.len() < 8 + n {
        return Err(Error::parse(b.len(), format!("truncated label payload: {n} labels")));
    }
    Ok(b[8..8 + n].to_vec())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<IdxSource> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels)?)?;
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} images but {} labels", labels.len())));
    }
    Ok(IdxSource { rows, cols, pixels, labels })
}

/// Finds `<prefix>-images-idx3-ubyte[.gz]` and the matching labels in `dir`.
pub fn find_idx_pair(dir: &Path, prefix: &str) -> Option<(PathBuf, PathBuf)> {
    let pick = |stem: String| {
        [stem.clone(), format!("{stem}.gz")]
            .into_iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
    };
    Some((pick(format!("{prefix}-images-idx3-ubyte"))?, pick(format!("{prefix}-labels-idx1-ubyte"))?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSample {
    pub image: Vec<f32>,
    pub resolution: usize,
    pub label: u8,
    pub source_index: u32,
    pub mode: AntiAliasMode,
}

impl ScaledSample {
    pub fn tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(vec![self.resolution; 2], self.image.iter().map(|&v| T::c(v as f64)).collect())
            .expect("square image")
    }

    pub fn labeled<T: Scalar>(&self) -> LabeledImage<T> {
        LabeledImage { image: self.tensor(), label: self.label as usize }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ScaledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labeled<T: Scalar>(&self) -> Vec<LabeledImage<T>> {
        self.samples.iter().map(ScaledSample::labeled).collect()
    }

    /// Sample count per resolution.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for s in &self.samples {
            *h.entry(s.resolution).or_insert(0) += 1;
        }
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let px: usize = self.samples.iter().map(|s| s.image.len() * 4 + RECORD_HEADER_BYTES).sum();
        let mut out = Vec::with_capacity(HEADER_BYTES + px);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        for s in &self.samples {
            let r = s.resolution as u16;
            out.extend_from_slice(&r.to_le_bytes());
            out.extend_from_slice(&r.to_le_bytes());
            out.push(s.label);
            out.push(s.mode.tag());
            out.extend_from_slice(&s.source_index.to_le_bytes());
            for v in &s.image {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let offsets = record_offsets(bytes)?;
        let mut samples = Vec::with_capacity(offsets.len());
        for at in offsets {
            let b = &bytes[at..];
            let h = u16::from_le_bytes([b[0], b[1]]) as usize;
            let w = u16::from_le_bytes([b[2], b[3]]) as usize;
            if h != w {
                return Err(Error::parse(at, format!("non-square record {h}x{w}")));
            }
            let mode = AntiAliasMode::from_tag(b[5]).ok_or_else(|| Error::parse(at + 5, format!("unknown mode tag {}", b[5])))?;
            let image = b[RECORD_HEADER_BYTES..RECORD_HEADER_BYTES + 4 * h * w]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            samples.push(ScaledSample {
                image,
                resolution: h,
                label: b[4],
                source_index: u32::from_le_bytes(b[6..10].try_into().expect("4 bytes")),
                mode,
            });
        }
        Ok(Self { samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Byte offset of every record, found by walking the record headers only.
pub fn record_offsets(bytes: &[u8]) -> Result<Vec<usize>> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::parse(0, "bad magic, expected MSC1"));
    }
    match bytes.get(4) {
        Some(&VERSION) => {}
        Some(v) => return Err(Error::parse(4, format!("unsupported version {v}"))),
        None => return Err(Error::parse(4, "truncated header")),
    }
    let count = bytes
        .get(5..9)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::parse(5, "truncated header"))?;
    let mut offsets = Vec::with_capacity(count);
    let mut at = HEADER_BYTES;
    for i in 0..count {
        let head = bytes
            .get(at..at + RECORD_HEADER_BYTES)
            .ok_or_else(|| Error::parse(at, format!("truncated header of record {i}")))?;
        let h = u16::from_le_bytes([head[0], head[1]]) as usize;
        let w = u16::from_le_bytes([head[2], head[3]]) as usize;
        let end = at + RECORD_HEADER_BYTES + 4 * h * w;
        if end > bytes.len() {
            return Err(Error::parse(at, format!("truncated payload of record {i}")));
        }
        offsets.push(at);
        at = end;
    }
    if at != bytes.len() {
        return Err(Error::parse(at, format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(offsets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub count: usize,
    pub histogram: BTreeMap<usize, usize>,
    /// sha256 of the split's container bytes.
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scales: ScaleSet,
    pub mode: AntiAliasMode,
    pub splits: Vec<SplitInfo>,
    /// File name to sha256 of the raw source files.
    pub sources: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Resamples one source image to `m` (identity at the source resolution).
pub fn resample_source(x: &Tensor<f64>, m: usize, mode: AntiAliasMode) -> Result<Vec<f32>> {
    let y = if m == x.shape()[0] { x.clone() } else { mode.downsample(x, m, 2)? };
    Ok(y.data().iter().map(|&v| v as f32).collect())
}

/// Draws disjoint splits of sizes `counts` from `source` and assigns each
/// image a resolution in `scales`, balanced within each split.
pub fn build_mnist_scale(
    source: &IdxSource,
    seed: u64,
    scales: &ScaleSet,
    mode: AntiAliasMode,
    counts: &[usize],
) -> Result<Vec<Dataset>> {
    let total: usize = counts.iter().sum();
    if total > source.len() {
        return Err(Error::invalid(format!("{total} samples requested but the source has {}", source.len())));
    }
    if source.rows != source.cols {
        return Err(Error::invalid("source images must be square"));
    }
    if scales.max() > source.rows {
        return Err(Error::resolution(format!(
            "scale set reaches {} but sources are {}x{}",
            scales.max(),
            source.rows,
            source.cols
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut rng);
    let res = scales.as_slice();
    let mut start = 0;
    let mut out = Vec::with_capacity(counts.len());
    for &c in counts {
        let mut targets: Vec<usize> = (0..c).map(|i| res[i % res.len()]).collect();
        targets.shuffle(&mut rng);
        let mut samples = Vec::with_capacity(c);
        for (&src, &m) in order[start..start + c].iter().zip(&targets) {
            samples.push(ScaledSample {
                image: resample_source(&source.image(src), m, mode)?,
                resolution: m,
                label: source.labels[src],
                source_index: src as u32,
                mode,
            });
        }
        start += c;
        out.push(Dataset { samples });
    }
    Ok(out)
}
