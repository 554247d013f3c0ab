//! Run manifests: written atomically next to every produced output so a
//! run can be reproduced bit-identically (durations aside) from its
//! recorded command line and seed.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub output_paths: Vec<PathBuf>,
    pub duration_ms: u128,
}

/// Write `<stem>.manifest.json` next to the primary (first) output via a
/// temp file and rename, so readers never observe a partial manifest.
pub fn write_for_outputs(
    argv: &[String],
    seed: Option<u64>,
    outputs: &[PathBuf],
    elapsed: Duration,
) -> Result<()> {
    let Some(primary) = outputs.first() else {
        return Ok(()); // nothing written, nothing to describe
    };
    let manifest = RunManifest {
        command: argv.to_vec(),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        output_paths: outputs.to_vec(),
        duration_ms: elapsed.as_millis(),
    };
    let path = manifest_path(primary);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, &path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    output.with_file_name(format!("{stem}.manifest.json"))
}
