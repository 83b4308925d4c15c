//! Checkpoints: every parameter as a consecutive `M2TS` record in `checkpoint.m2ts`,
//! indexed by `checkpoint.manifest` with one `name shape offset` line per tensor. Shapes
//! are written as `AxBxC`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use m2vsl_core::params::ParamStore;

use crate::m2ts;

pub const DATA_FILE: &str = "checkpoint.m2ts";
pub const MANIFEST_FILE: &str = "checkpoint.manifest";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

pub fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x').map(|d| d.parse().with_context(|| format!("bad extent in {s}"))).collect()
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {} {}\n", e.name, format_shape(&e.shape), e.offset))
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, shape, offset] = parts[..] else {
            bail!("manifest line {}: expected `name shape offset`", i + 1);
        };
        out.push(ManifestEntry {
            name: name.to_string(),
            shape: parse_shape(shape)?,
            offset: offset.parse().with_context(|| format!("manifest line {}: bad offset", i + 1))?,
        });
    }
    Ok(out)
}

/// Serializes `params` into the data blob and its manifest.
pub fn encode(params: &ParamStore) -> Result<(Vec<u8>, Vec<ManifestEntry>)> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in params.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend_from_slice(&m2ts::encode(t)?);
    }
    Ok((blob, entries))
}

pub fn decode(blob: &[u8], entries: &[ManifestEntry]) -> Result<ParamStore> {
    let mut params = ParamStore::new();
    for e in entries {
        ensure!(e.offset <= blob.len(), "{}: offset {} beyond data", e.name, e.offset);
        let end = e.offset + m2ts::encoded_len(&e.shape);
        ensure!(end <= blob.len(), "{}: record runs past the end of the data", e.name);
        let t = m2ts::decode(&blob[e.offset..end]).with_context(|| format!("tensor {}", e.name))?;
        ensure!(
            t.shape() == e.shape.as_slice(),
            "{}: manifest shape {} but stored {}",
            e.name,
            format_shape(&e.shape),
            format_shape(t.shape())
        );
        params.insert(&e.name, t)?;
    }
    Ok(params)
}

pub fn save(dir: &Path, params: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (blob, entries) = encode(params)?;
    std::fs::write(dir.join(DATA_FILE), blob)?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest_text(&entries))?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let manifest: PathBuf = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let blob = std::fs::read(dir.join(DATA_FILE)).with_context(|| format!("reading {}", dir.join(DATA_FILE).display()))?;
    decode(&blob, &parse_manifest(&text)?)
}
