//! File formats: `.npy` tensors, attention trace dumps, the append-only
//! keyed store and image grids.

mod grid;
mod kvstore;
mod npy;
mod subprocess;
mod traces;

pub use grid::{latent_to_rgb, write_image_grid};
pub use kvstore::KvStore;
pub use npy::{decode_npy, encode_npy, read_latent, read_npy, write_latent, write_npy};
pub use subprocess::{SubprocessClient, WireImage, WireRequest, WireResponse};
pub use traces::{read_trace, write_trace, TraceManifest, TraceManifestEntry};

use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to `path` through a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}
