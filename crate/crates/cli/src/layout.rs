//! Where a run's audio and embedding files live.
//!
//! Directory convention, one folder per track:
//!
//! ```text
//! <root>/<track>/references/<stem>.wav
//! <root>/<track>/systems/<condition>/<stem>.wav
//! <root>/<track>/embeddings/<condition>/<stem>.emb            (FAD)
//! <root>/<track>/embeddings/<model>/<condition>/<stem>.emb    (FAD-<model>)
//! ```
//!
//! Ground-truth embeddings use the condition name `reference`. A manifest
//! lists the same files explicitly (paths relative to the manifest):
//!
//! ```json
//! {"tracks": [{"track_id": "t1",
//!              "references": {"vocals": "t1/vox.wav"},
//!              "systems": {"demucs": {"vocals": "out/t1_vox.wav"}},
//!              "embeddings": {"vggish": {"reference": {"vocals": "e/r.emb"},
//!                                        "demucs": {"vocals": "e/d.emb"}}}}]}
//! ```
//!
//! The embedding key `""` stands for plain `FAD`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use stemeval::audio::StemKind;

use crate::cli_error;

pub type StemFiles = BTreeMap<StemKind, PathBuf>;

#[derive(Debug, Clone)]
pub struct TrackFiles {
    pub track_id: String,
    pub references: StemFiles,
    pub systems: BTreeMap<String, StemFiles>,
    /// model ("" for plain FAD) → condition → stem → file
    embeddings: BTreeMap<String, BTreeMap<String, StemFiles>>,
    /// Conventional embedding directory, when laid out on disk.
    embedding_root: Option<PathBuf>,
}

impl TrackFiles {
    /// Expected embedding file for one model, condition and stem.
    pub fn embedding(&self, model: &str, condition: &str, stem: StemKind) -> Option<PathBuf> {
        if let Some(root) = &self.embedding_root {
            let mut p = root.clone();
            if !model.is_empty() {
                p.push(model);
            }
            p.push(condition);
            p.push(format!("{}.emb", stem.as_str()));
            return Some(p);
        }
        self.embeddings.get(model)?.get(condition)?.get(&stem).cloned()
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tracks: Vec<TrackFiles>,
}

pub fn load(root: Option<&Path>, manifest: Option<&Path>) -> Result<Layout> {
    match (root, manifest) {
        (_, Some(m)) => from_manifest(m),
        (Some(r), None) => from_directory(r),
        (None, None) => Err(cli_error("either --root or --manifest is required".into()).into()),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}

fn stem_wavs(dir: &Path) -> Result<StemFiles> {
    let mut out = StemFiles::new();
    for p in sorted_entries(dir)? {
        if p.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("wav")) != Some(true) {
            continue;
        }
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let stem: StemKind = name
            .parse()
            .map_err(|_| cli_error(format!("{} is not named after a stem", p.display())))?;
        out.insert(stem, p);
    }
    Ok(out)
}

fn from_directory(root: &Path) -> Result<Layout> {
    let mut tracks = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let refs = dir.join("references");
        let systems_dir = dir.join("systems");
        if !refs.is_dir() && !systems_dir.is_dir() {
            continue;
        }
        let track_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        let references = if refs.is_dir() { stem_wavs(&refs)? } else { StemFiles::new() };
        let mut systems = BTreeMap::new();
        if systems_dir.is_dir() {
            for sys in sorted_entries(&systems_dir)? {
                if sys.is_dir() {
                    let name = sys.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
                    systems.insert(name, stem_wavs(&sys)?);
                }
            }
        }
        tracks.push(TrackFiles {
            track_id,
            references,
            systems,
            embeddings: BTreeMap::new(),
            embedding_root: Some(dir.join("embeddings")),
        });
    }
    if tracks.is_empty() {
        return Err(cli_error(format!("no track directories under {}", root.display())).into());
    }
    Ok(Layout { tracks })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    tracks: Vec<ManifestTrack>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTrack {
    track_id: String,
    #[serde(default)]
    references: BTreeMap<StemKind, PathBuf>,
    #[serde(default)]
    systems: BTreeMap<String, BTreeMap<StemKind, PathBuf>>,
    #[serde(default)]
    embeddings: BTreeMap<String, BTreeMap<String, BTreeMap<StemKind, PathBuf>>>,
}

fn from_manifest(path: &Path) -> Result<Layout> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| cli_error(format!("manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rebase = |files: BTreeMap<StemKind, PathBuf>| -> StemFiles {
        files.into_iter().map(|(k, p)| (k, base.join(p))).collect()
    };
    let mut tracks: Vec<TrackFiles> = manifest
        .tracks
        .into_iter()
        .map(|t| TrackFiles {
            track_id: t.track_id,
            references: rebase(t.references),
            systems: t.systems.into_iter().map(|(k, v)| (k, rebase(v))).collect(),
            embeddings: t
                .embeddings
                .into_iter()
                .map(|(m, conds)| (m, conds.into_iter().map(|(c, v)| (c, rebase(v))).collect()))
                .collect(),
            embedding_root: None,
        })
        .collect();
    tracks.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    if let Some(w) = tracks.windows(2).find(|w| w[0].track_id == w[1].track_id) {
        return Err(cli_error(format!("manifest lists track {:?} twice", w[0].track_id)).into());
    }
    Ok(Layout { tracks })
}
