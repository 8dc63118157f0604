//! Raster data model and interchange formats.
//!
//! All rasters are row-major with the origin at the top-left pixel.
//!
//! PMAP layout (little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `PMAP`               |
//! | 4      | 1    | version = 1                |
//! | 5      | 4    | width (u32)                |
//! | 9      | 4    | height (u32)               |
//! | 13     | 1    | channels = 1               |
//! | 14     | 3    | reserved, zero             |
//! | 17     | 4·N  | P(hand) as f32, row-major  |

use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LogBase;

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const PMAP_VERSION: u8 = 1;
pub const PMAP_HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Dims { width, height })
    }

    /// Total pixel count N.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ensure_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: *self,
                found: other,
            })
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    if dims.len() != len {
        return Err(Error::Format(format!(
            "{dims} raster needs {} values, got {len}",
            dims.len()
        )));
    }
    Ok(())
}

/// Per-pixel P(hand). P(background) is `1 - value`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    dims: Dims,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        check_len(dims, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Range { index, value });
        }
        Ok(ProbabilityMap { dims, values })
    }

    pub fn constant(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    /// Builds a map from values already known to lie in [0, 1].
    pub(crate) fn from_trusted(dims: Dims, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), values.len());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbabilityMap { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    dims: Dims,
    values: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(dims: Dims, values: Vec<bool>) -> Result<Self> {
        check_len(dims, values.len())?;
        Ok(GroundTruthMask { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Hand pixel count N_h.
    pub fn hand_count(&self) -> u64 {
        self.values.iter().filter(|&&v| v).count() as u64
    }

    /// The mask as certain probabilities (hand = 1.0, background = 0.0).
    pub fn to_probability_map(&self) -> ProbabilityMap {
        let values = self
            .values
            .iter()
            .map(|&h| f64::from(u8::from(h)))
            .collect();
        ProbabilityMap::from_trusted(self.dims, values)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMask {
    dims: Dims,
    values: Vec<bool>,
}

impl PredictionMask {
    pub fn new(dims: Dims, values: Vec<bool>) -> Result<Self> {
        check_len(dims, values.len())?;
        Ok(PredictionMask { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn hand_count(&self) -> u64 {
        self.values.iter().filter(|&&v| v).count() as u64
    }
}

/// Per-pixel predictive entropy in a fixed log base.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    dims: Dims,
    base: LogBase,
    values: Vec<f64>,
}

impl EntropyMap {
    pub fn new(dims: Dims, base: LogBase, values: Vec<f64>) -> Result<Self> {
        check_len(dims, values.len())?;
        let max = base.max_entropy();
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=max).contains(*v))
        {
            return Err(Error::Range { index, value });
        }
        Ok(EntropyMap { dims, base, values })
    }

    pub(crate) fn from_trusted(dims: Dims, base: LogBase, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), values.len());
        EntropyMap { dims, base, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn base(&self) -> LogBase {
        self.base
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn encode_pmap_header(dims: Dims) -> [u8; PMAP_HEADER_LEN] {
    let mut header = [0u8; PMAP_HEADER_LEN];
    header[..4].copy_from_slice(PMAP_MAGIC);
    header[4] = PMAP_VERSION;
    header[5..9].copy_from_slice(&dims.width.to_le_bytes());
    header[9..13].copy_from_slice(&dims.height.to_le_bytes());
    header[13] = 1;
    header
}

fn decode_pmap_header(header: &[u8]) -> Result<Dims> {
    if header.len() < PMAP_HEADER_LEN {
        return Err(Error::Format(format!(
            "PMAP header needs {PMAP_HEADER_LEN} bytes, got {}",
            header.len()
        )));
    }
    if &header[..4] != PMAP_MAGIC {
        return Err(Error::Format("missing PMAP magic".into()));
    }
    if header[4] != PMAP_VERSION {
        return Err(Error::Format(format!(
            "unsupported PMAP version {}",
            header[4]
        )));
    }
    let width = u32::from_le_bytes(header[5..9].try_into().unwrap());
    let height = u32::from_le_bytes(header[9..13].try_into().unwrap());
    if header[13] != 1 {
        return Err(Error::Format(format!(
            "PMAP must have 1 channel, header says {}",
            header[13]
        )));
    }
    if header[14..17] != [0, 0, 0] {
        return Err(Error::Format("PMAP reserved bytes must be zero".into()));
    }
    Dims::new(width, height)
}

/// Decodes a PMAP byte buffer.
pub fn decode_pmap(bytes: &[u8]) -> Result<ProbabilityMap> {
    let dims = decode_pmap_header(bytes)?;
    let payload = &bytes[PMAP_HEADER_LEN..];
    let expected = dims
        .len()
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("{dims} PMAP is too large")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{dims} PMAP needs {expected} payload bytes, got {}",
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(dims.len());
    for (index, word) in payload.chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(word.try_into().unwrap());
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Range {
                index,
                value: f64::from(value),
            });
        }
        values.push(f64::from(value));
    }
    Ok(ProbabilityMap::from_trusted(dims, values))
}

/// Encodes a map as PMAP bytes. Values are narrowed to f32.
pub fn encode_pmap(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(PMAP_HEADER_LEN + 4 * map.values.len());
    out.extend_from_slice(&encode_pmap_header(map.dims));
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_pmap(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pmap(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_pmap(map: &ProbabilityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pmap(map))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads only the PMAP header, for validation without loading the payload.
pub fn read_pmap_dims(path: impl AsRef<Path>) -> Result<Dims> {
    let path = path.as_ref();
    let mut header = [0u8; PMAP_HEADER_LEN];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut header))
        .map_err(|e| Error::io(path, e))?;
    let dims = decode_pmap_header(&header)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let expected = (PMAP_HEADER_LEN + 4 * dims.len()) as u64;
    if size != expected {
        return Err(Error::Format(format!(
            "{}: {dims} PMAP should be {expected} bytes, file is {size}",
            path.display()
        )));
    }
    Ok(dims)
}

/// Converts a decoded 8-bit gray image into a mask, rejecting any value besides 0 and 255.
pub fn mask_from_gray(img: &GrayImage) -> Result<GroundTruthMask> {
    let dims = Dims::new(img.width(), img.height())?;
    let mut values = Vec::with_capacity(dims.len());
    for (index, &v) in img.as_raw().iter().enumerate() {
        match v {
            0 => values.push(false),
            255 => values.push(true),
            value => return Err(Error::AmbiguousMask { index, value }),
        }
    }
    Ok(GroundTruthMask { dims, values })
}

pub fn mask_to_gray(values: &[bool], dims: Dims) -> GrayImage {
    let raw = values.iter().map(|&h| if h { 255 } else { 0 }).collect();
    GrayImage::from_raw(dims.width, dims.height, raw).expect("mask length matches dims")
}

/// Reads an 8-bit single-channel lossless mask (0 = background, 255 = hand).
pub fn read_mask(path: impl AsRef<Path>) -> Result<GroundTruthMask> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match img.format() {
        Some(image::ImageFormat::Png) => {}
        other => {
            return Err(Error::image(
                path,
                format!("masks must be PNG, found {other:?}"),
            ))
        }
    }
    let decoded = img.decode().map_err(|e| Error::image(path, e))?;
    match decoded {
        image::DynamicImage::ImageLuma8(gray) => mask_from_gray(&gray),
        other => Err(Error::image(
            path,
            format!(
                "masks must be 8-bit single-channel, found {:?}",
                other.color()
            ),
        )),
    }
}

pub fn write_mask(mask: &GroundTruthMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask_to_gray(&mask.values, mask.dims)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

/// Image dimensions from the file header.
pub fn read_image_dims(path: impl AsRef<Path>) -> Result<Dims> {
    let path = path.as_ref();
    let (w, h) = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_dimensions()
        .map_err(|e| Error::image(path, e))?;
    Dims::new(w, h)
}
