//! Ordered collections of packs.
//!
//! A manifest is a text file listing one pack path per line. Relative paths
//! resolve against the manifest's directory; blank lines and lines starting
//! with `#` are ignored.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pack::FeaturePack;

pub trait Dataset: Sync {
    fn len(&self) -> usize;

    fn load(&self, index: usize) -> Result<FeaturePack>;

    /// Label used in logs and reports.
    fn name(&self, index: usize) -> String;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Packs held in memory.
#[derive(Clone, Debug, Default)]
pub struct MemoryDataset {
    pub packs: Vec<FeaturePack>,
}

impl MemoryDataset {
    pub fn new(packs: Vec<FeaturePack>) -> Self {
        Self { packs }
    }
}

impl Dataset for MemoryDataset {
    fn len(&self) -> usize {
        self.packs.len()
    }

    fn load(&self, index: usize) -> Result<FeaturePack> {
        self.packs
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Parameter(format!("pack {index} out of range")))
    }

    fn name(&self, index: usize) -> String {
        format!("#{index}")
    }
}

/// Packs listed in a manifest file, read from disk on demand.
#[derive(Clone, Debug)]
pub struct ManifestDataset {
    paths: Vec<PathBuf>,
}

impl ManifestDataset {
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", manifest.display()),
            ))
        })?;
        let base = manifest.parent().unwrap_or(Path::new(""));
        let paths = parse_manifest(&text)
            .into_iter()
            .map(|p| if p.is_absolute() { p } else { base.join(p) })
            .collect();
        Ok(Self { paths })
    }

    pub fn from_paths(paths: Vec<PathBuf>) -> Self {
        Self { paths }
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl Dataset for ManifestDataset {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<FeaturePack> {
        let path = self
            .paths
            .get(index)
            .ok_or_else(|| Error::Parameter(format!("pack {index} out of range")))?;
        FeaturePack::load(path)
    }

    fn name(&self, index: usize) -> String {
        self.paths
            .get(index)
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    }
}

pub fn parse_manifest(text: &str) -> Vec<PathBuf> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(PathBuf::from)
        .collect()
}

/// Writes a manifest listing `paths` relative to the manifest's directory
/// where possible.
pub fn write_manifest(manifest: impl AsRef<Path>, paths: &[PathBuf]) -> Result<()> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for p in paths {
        let rel = p.strip_prefix(base).unwrap_or(p);
        text.push_str(&rel.to_string_lossy());
        text.push('\n');
    }
    std::fs::write(manifest, text)?;
    Ok(())
}
