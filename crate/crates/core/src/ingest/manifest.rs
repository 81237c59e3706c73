use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_text, write_atomic};

/// One corpus track. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub track_id: String,
    /// Patch sequence (SSMF matrix with a JSON sidecar).
    pub features_path: PathBuf,
    pub beats_path: PathBuf,
    pub annotation_path: PathBuf,
}

/// Reads a JSON array of [`ManifestEntry`] and resolves its paths.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no tracks", path.display())));
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.track_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::validation(format!("duplicate track id {}", w[0])));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(entries
        .into_iter()
        .map(|e| ManifestEntry {
            features_path: base.join(e.features_path),
            beats_path: base.join(e.beats_path),
            annotation_path: base.join(e.annotation_path),
            track_id: e.track_id,
        })
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(entries)?;
    json.push(b'\n');
    write_atomic(path.as_ref(), &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            track_id: id.into(),
            features_path: format!("{id}.ssmf").into(),
            beats_path: format!("{id}.beats").into(),
            annotation_path: format!("{id}.lab").into(),
        }
    }

    #[test]
    fn paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        write_manifest(&p, &[entry("a"), entry("b")]).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].beats_path, dir.path().join("b.beats"));
    }

    #[test]
    fn rejects_duplicates_unknown_keys_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_manifest(&p, &[entry("a"), entry("a")]).unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Validation { .. })));
        std::fs::write(&p, "[]").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::EmptyInput(_))));
        std::fs::write(&p, r#"[{"track_id":"a","features_path":"x","beats_path":"y","annotation_path":"z","extra":1}]"#).unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format(_))));
    }
}
