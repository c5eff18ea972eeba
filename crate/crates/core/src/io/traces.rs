use std::path::Path;

use serde::{Deserialize, Serialize};

use super::npy::{encode_npy, read_npy};
use crate::diffusion::{AttentionTrace, TraceRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifestEntry {
    pub layer: String,
    pub step: usize,
    /// `[queries, tokens]`
    pub shape: Vec<usize>,
    /// `[height, width]` of the query grid.
    pub spatial: [usize; 2],
    pub file: String,
}

/// Sidecar manifest describing each dumped attention tensor.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub tokens: Vec<String>,
    pub entries: Vec<TraceManifestEntry>,
}

/// Dumps every record as `<layer>_step<NNN>.npy` plus `manifest.json`.
pub fn write_trace(dir: &Path, trace: &AttentionTrace, tokens: &[String]) -> Result<TraceManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = TraceManifest {
        tokens: tokens.to_vec(),
        entries: Vec::with_capacity(trace.len()),
    };
    for rec in &trace.records {
        let file = format!("{}_step{:03}.npy", rec.layer.replace('.', "_"), rec.step);
        let shape = rec.probs.shape().to_vec();
        std::fs::write(
            dir.join(&file),
            encode_npy(&shape, rec.probs.iter().copied()),
        )?;
        manifest.entries.push(TraceManifestEntry {
            layer: rec.layer.clone(),
            step: rec.step,
            shape,
            spatial: [rec.spatial.0, rec.spatial.1],
            file,
        });
    }
    std::fs::write(dir.join("manifest.json"), super::to_json_pretty(&manifest))?;
    Ok(manifest)
}

pub fn read_trace(dir: &Path) -> Result<(AttentionTrace, TraceManifest)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: TraceManifest =
        serde_json::from_slice(&std::fs::read(&manifest_path)?).map_err(|e| Error::Parse {
            locator: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut trace = AttentionTrace::default();
    for entry in &manifest.entries {
        let array = read_npy(&dir.join(&entry.file))?
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| Error::Parse {
                locator: entry.file.clone(),
                message: "attention map must be 2-d".into(),
            })?;
        trace.push(TraceRecord {
            layer: entry.layer.clone(),
            step: entry.step,
            spatial: (entry.spatial[0], entry.spatial[1]),
            probs: array,
        });
    }
    Ok((trace, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn trace_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut trace = AttentionTrace::default();
        trace.push(TraceRecord {
            layer: "cross_attn.0".into(),
            step: 3,
            spatial: (1, 2),
            probs: array![[0.25, 0.75], [0.5, 0.5]],
        });
        let manifest = write_trace(dir.path(), &trace, &["a".into(), "b".into()]).unwrap();
        assert_eq!(manifest.entries[0].file, "cross_attn_0_step003.npy");
        let (back, m2) = read_trace(dir.path()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(m2, manifest);
    }
}
