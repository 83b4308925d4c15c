//! Binary greymap (P5) files for heatmaps and masks.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use m2vsl_core::locseg::{LocalizationMap, Mask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Greymap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Greymap {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            ensure!(pos > start, "truncated PGM header");
            fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
        }
        if fields[0] != "P5" {
            bail!("not a binary PGM (magic {})", fields[0]);
        }
        let width: usize = fields[1].parse().context("PGM width")?;
        let height: usize = fields[2].parse().context("PGM height")?;
        let maxval: u32 = fields[3].parse().context("PGM maxval")?;
        ensure!((1..=255).contains(&maxval), "unsupported PGM maxval {maxval}");
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width * height;
        ensure!(bytes.len() >= pos + n, "truncated PGM raster");
        let pixels = bytes[pos..pos + n]
            .iter()
            .map(|&p| ((p as u32 * 255 + maxval / 2) / maxval).min(255) as u8)
            .collect();
        Ok(Self { width, height, pixels })
    }

    /// Min-max scaled to 0..=255; a constant map becomes all zeros.
    pub fn from_map(map: &LocalizationMap) -> Self {
        let (lo, hi) = map.min_max();
        let span = hi - lo;
        let pixels = map
            .scores()
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            pixels,
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            pixels: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Pixels at or above mid-grey are set.
    pub fn to_mask(&self) -> Result<Mask> {
        Ok(Mask::new(self.height, self.width, self.pixels.iter().map(|&p| p >= 128).collect())?)
    }

    /// Scores in `[0, 1]`.
    pub fn to_map(&self) -> Result<LocalizationMap> {
        Ok(LocalizationMap::new(
            self.height,
            self.width,
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
    }
}

/// Reads a map from either a PGM or an `M2TS` file, chosen by extension.
pub fn read_map(path: &Path) -> Result<LocalizationMap> {
    if path.extension().is_some_and(|e| e == "pgm") {
        Greymap::read(path)?.to_map()
    } else {
        Ok(LocalizationMap::from_tensor(crate::m2ts::read(path)?)?)
    }
}

/// Reads a mask from either a PGM or an `M2TS` file; tensor entries above 0.5 are set.
pub fn read_mask(path: &Path) -> Result<Mask> {
    if path.extension().is_some_and(|e| e == "pgm") {
        Greymap::read(path)?.to_mask()
    } else {
        let t = crate::m2ts::read(path)?;
        let (h, w) = t.dims2()?;
        Ok(Mask::new(h, w, t.data().iter().map(|&v| v > 0.5).collect())?)
    }
}
