//! Dataset ingestion and persistence: big-endian IDX image/label files
//! (pixels scaled to [0,1]), seeded random masking for incomplete-data
//! experiments, and a self-describing binary container ("MXDS") with a JSON
//! sidecar that mirrors the header.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{sidecar_path, Dataset, Reader};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"MXDS";
pub const DATASET_VERSION: u32 = 1;
const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const FLAG_LABELS: u8 = 0b01;
const FLAG_MASKS: u8 = 0b10;

/// Loads an IDX image file: each image is flattened row-major and every
/// byte pixel is divided by 255.
pub fn load_idx_images(path: &Path) -> Result<Dataset> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.u32_be()?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad IDX image magic 0x{magic:08x}, expected 0x00000803"),
        });
    }
    let n = r.u32_be()? as usize;
    let h = r.u32_be()? as usize;
    let w = r.u32_be()? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            offset: 4,
            detail: format!("degenerate image dimensions {n}x{h}x{w}"),
        });
    }
    let dim = h * w;
    let pixels = r.bytes(n * dim)?;
    r.expect_end()?;
    let values: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(dim, values)
}

/// Loads an IDX label file into plain integer labels.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.u32_be()?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad IDX label magic 0x{magic:08x}, expected 0x00000801"),
        });
    }
    let n = r.u32_be()? as usize;
    if n == 0 {
        return Err(Error::Format { offset: 4, detail: "label file with zero entries".into() });
    }
    let raw = r.bytes(n)?;
    r.expect_end()?;
    Ok(raw.iter().map(|&b| b as usize).collect())
}

/// Gives `round(fraction_images * N)` uniformly chosen samples a mask with
/// exactly `round(fraction_pixels * M)` unobserved coordinates; all other
/// samples get all-true masks. Deterministic per seed.
pub fn apply_random_masks(
    data: &Dataset,
    fraction_images: f64,
    fraction_pixels: f64,
    seed: u64,
) -> Result<Dataset> {
    for (name, f) in [("image", fraction_images), ("pixel", fraction_pixels)] {
        if !f.is_finite() || !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(format!(
                "{name} fraction {f} outside [0, 1]"
            )));
        }
    }
    let n = data.len();
    let m = data.dim();
    let picked_images = ((fraction_images * n as f64).round() as usize).min(n);
    let missing_per_image = ((fraction_pixels * m as f64).round() as usize).min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = vec![true; n * m];
    if picked_images > 0 && missing_per_image > 0 {
        let images = rand::seq::index::sample(&mut rng, n, picked_images);
        for img in images.iter() {
            let coords = rand::seq::index::sample(&mut rng, m, missing_per_image);
            for c in coords.iter() {
                masks[img * m + c] = false;
            }
        }
    }
    let mut out = data.clone();
    out.set_masks(masks)?;
    Ok(out)
}

/// Header fields mirrored into the JSON sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub magic: String,
    pub version: u32,
    pub samples: u64,
    pub dim: u32,
    pub has_labels: bool,
    pub has_masks: bool,
}

/// Writes the dataset (values, labels, masks) losslessly, plus a JSON
/// sidecar at `<path>.json`. Labels must fit in a byte.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("refusing to save an empty dataset".into()));
    }
    if let Some(labels) = data.labels() {
        if let Some(&bad) = labels.iter().find(|&&l| l > 255) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} does not fit the byte-label container"
            )));
        }
    }
    let n = data.len();
    let dim = data.dim();
    let flags = if data.labels().is_some() { FLAG_LABELS } else { 0 }
        | if data.masks().is_some() { FLAG_MASKS } else { 0 };
    let mut buf = Vec::with_capacity(21 + 8 * n * dim);
    buf.extend_from_slice(DATASET_MAGIC);
    let mut scratch = [0u8; 8];
    LittleEndian::write_u32(&mut scratch[..4], DATASET_VERSION);
    buf.extend_from_slice(&scratch[..4]);
    LittleEndian::write_u64(&mut scratch, n as u64);
    buf.extend_from_slice(&scratch);
    LittleEndian::write_u32(&mut scratch[..4], dim as u32);
    buf.extend_from_slice(&scratch[..4]);
    buf.push(flags);
    for &v in data.values() {
        LittleEndian::write_f64(&mut scratch, v);
        buf.extend_from_slice(&scratch);
    }
    if let Some(labels) = data.labels() {
        buf.extend(labels.iter().map(|&l| l as u8));
    }
    if let Some(masks) = data.masks() {
        // Bit-packed, least-significant bit first.
        for chunk in masks.chunks(8) {
            let mut byte = 0u8;
            for (bit, &set) in chunk.iter().enumerate() {
                if set {
                    byte |= 1 << bit;
                }
            }
            buf.push(byte);
        }
    }
    fs::write(path, &buf)?;
    let sidecar = DatasetSidecar {
        magic: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
        version: DATASET_VERSION,
        samples: n as u64,
        dim: dim as u32,
        has_labels: data.labels().is_some(),
        has_masks: data.masks().is_some(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::InvalidState(format!("sidecar serialization failed: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Reads a dataset container; the binary header alone is authoritative, so
/// a missing sidecar is fine.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.bytes(4)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("bad dataset magic {magic:?}, expected {DATASET_MAGIC:?}"),
        });
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported dataset version {version} (expected {DATASET_VERSION})"),
        });
    }
    let n = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let flags = r.u8()?;
    if n == 0 {
        return Err(Error::Format { offset: 8, detail: "empty dataset container".into() });
    }
    if flags & !(FLAG_LABELS | FLAG_MASKS) != 0 {
        return Err(Error::Format {
            offset: 20,
            detail: format!("unknown flag bits 0b{flags:08b}"),
        });
    }
    let values = r.f64_slice(n * dim)?;
    let labels = if flags & FLAG_LABELS != 0 {
        Some(r.bytes(n)?.iter().map(|&b| b as usize).collect::<Vec<_>>())
    } else {
        None
    };
    let masks = if flags & FLAG_MASKS != 0 {
        let packed = r.bytes((n * dim).div_ceil(8))?;
        let mut out = vec![false; n * dim];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = packed[i / 8] >> (i % 8) & 1 == 1;
        }
        Some(out)
    } else {
        None
    };
    r.expect_end()?;
    let mut data = Dataset::new(dim, values)?;
    if let Some(l) = labels {
        data = data.with_labels(l)?;
    }
    if let Some(m) = masks {
        data.set_masks(m)?;
    }
    Ok(data)
}
