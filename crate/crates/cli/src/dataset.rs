//! Manifest-driven loading of feature maps and part features.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use partalign::data::etns::peek;
use partalign::data::{load_keypoints, load_manifest, read_tensor, KeypointSet, ManifestEntry};
use partalign::heads::HeadStack;
use partalign::pooling::{global_pool, pap_pool, pcb_pool, PartFeatureSet};
use partalign::regions::{pap_regions, RegionConfig};
use partalign::retrieval::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pap,
    Pap6,
    Pcb(usize),
    Global,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pap" => Ok(Mode::Pap),
            "pap6" => Ok(Mode::Pap6),
            "global" => Ok(Mode::Global),
            _ => match s.strip_prefix("pcb:").map(str::parse::<usize>) {
                Some(Ok(p)) if p > 0 => Ok(Mode::Pcb(p)),
                _ => Err(format!("unknown mode {s:?} (expected pap, pap6, pcb:P or global)")),
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Pap => f.write_str("pap"),
            Mode::Pap6 => f.write_str("pap6"),
            Mode::Pcb(p) => write!(f, "pcb:{p}"),
            Mode::Global => f.write_str("global"),
        }
    }
}

impl Mode {
    fn needs_keypoints(self) -> bool {
        matches!(self, Mode::Pap | Mode::Pap6)
    }
}

pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let entries =
            load_manifest(&text).with_context(|| format!("in manifest {}", path.display()))?;
        let dir = path
            .parent()
            .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
            .unwrap_or(Path::new("."))
            .canonicalize()
            .with_context(|| format!("resolving directory of {}", path.display()))?;
        Ok(Self { dir, entries })
    }

    /// Relative paths are taken against the manifest's directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    /// Copy of `entry` whose file columns are absolute paths.
    pub fn absolute(&self, entry: &ManifestEntry) -> ManifestEntry {
        let abs = |c: &Option<String>| c.as_deref().map(|p| self.resolve(p).display().to_string());
        ManifestEntry {
            feature: abs(&entry.feature),
            keypoints: abs(&entry.keypoints),
            labelmap: abs(&entry.labelmap),
            ..entry.clone()
        }
    }
}

type KeypointFile = BTreeMap<String, KeypointSet>;

/// Turns manifest rows into part features, pooling 3-D feature maps on the fly.
pub struct Pooler {
    mode: Mode,
    cfg: RegionConfig,
    keypoints: HashMap<PathBuf, KeypointFile>,
}

impl Pooler {
    pub fn new(manifest: &Manifest, mode: Mode, cfg: RegionConfig) -> Result<Self> {
        let mut keypoints = HashMap::new();
        if mode.needs_keypoints() {
            for e in &manifest.entries {
                if let Some(k) = &e.keypoints {
                    if let Entry::Vacant(slot) = keypoints.entry(manifest.resolve(k)) {
                        let path = slot.key();
                        let text = fs::read_to_string(path)
                            .with_context(|| format!("reading keypoints {}", path.display()))?;
                        let parsed = load_keypoints(&text)
                            .with_context(|| format!("in keypoints {}", path.display()))?;
                        slot.insert(parsed);
                    }
                }
            }
        }
        Ok(Self {
            mode,
            cfg,
            keypoints,
        })
    }

    fn keypoints_for(&self, manifest: &Manifest, e: &ManifestEntry) -> Result<&KeypointSet> {
        let file = e
            .keypoints
            .as_deref()
            .ok_or_else(|| anyhow!("{}: mode {} needs keypoints", e.image_id, self.mode))?;
        self.keypoints[&manifest.resolve(file)]
            .get(&e.image_id)
            .ok_or_else(|| anyhow!("{}: no keypoints in {file}", e.image_id))
    }

    pub fn part_features(&self, manifest: &Manifest, e: &ManifestEntry) -> Result<PartFeatureSet> {
        let rel = e
            .feature
            .as_deref()
            .ok_or_else(|| anyhow!("{}: no feature file", e.image_id))?;
        let path = manifest.resolve(rel);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let (_, dims, _) = peek(&bytes).with_context(|| format!("in {}", path.display()))?;
        let out = if dims.len() == 2 {
            PartFeatureSet::from_bytes(&bytes)
        } else {
            let fmap = read_tensor(&bytes).with_context(|| format!("in {}", path.display()))?;
            match self.mode {
                Mode::Pap | Mode::Pap6 => {
                    let kps = self.keypoints_for(manifest, e)?;
                    let mut bands = pap_regions(kps, fmap.height(), &self.cfg);
                    if self.mode == Mode::Pap6 {
                        bands.truncate(6);
                    }
                    pap_pool(&fmap, &bands)
                }
                Mode::Pcb(p) => pcb_pool(&fmap, p),
                Mode::Global => Ok(global_pool(&fmap)),
            }
        };
        out.with_context(|| format!("{}: {}", e.image_id, path.display()))
    }

    pub fn pool_all(&self, manifest: &Manifest) -> Result<Vec<PartFeatureSet>> {
        manifest
            .entries
            .par_iter()
            .map(|e| self.part_features(manifest, e))
            .collect()
    }
}

pub fn load_heads(dir: Option<&Path>, feats: &[PartFeatureSet]) -> Result<HeadStack> {
    let Some(first) = feats.first() else {
        bail!("manifest has no entries");
    };
    match dir {
        Some(d) => HeadStack::load(d).with_context(|| format!("loading heads from {}", d.display())),
        None => Ok(HeadStack::identity(first.num_parts(), first.dim())?),
    }
}

pub fn embed_all(
    manifest: &Manifest,
    feats: &[PartFeatureSet],
    heads: &HeadStack,
) -> Result<Vec<EmbeddingSet>> {
    feats
        .par_iter()
        .zip(&manifest.entries)
        .map(|(f, e)| {
            Ok(heads
                .embed(f)
                .with_context(|| format!("embedding {}", e.image_id))?
                .with_identity(e.person_id, e.camera_id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip() {
        for s in ["pap", "pap6", "pcb:6", "global"] {
            assert_eq!(s.parse::<Mode>().unwrap().to_string(), s);
        }
        for bad in ["pcb", "pcb:0", "pcb:x", "stripes"] {
            assert!(bad.parse::<Mode>().is_err());
        }
    }
}
