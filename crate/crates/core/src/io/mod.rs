//! On-disk formats: matrices, dataset directories and run configuration.

pub mod config;
pub mod dataset;
pub mod matrix;

use std::io::Write;
use std::path::Path;

use crate::error::{FcrError, Result};

pub use config::RunConfig;
pub use dataset::{export_dataset, ingest_dataset, load_dataset_dir, Ingested, Schema};
pub use matrix::{read_matrix, write_csv_matrix, write_fcrm};

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        FcrError::io(path, e)
    })
}
