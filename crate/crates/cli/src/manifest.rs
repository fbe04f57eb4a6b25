//! Run manifests: a config snapshot plus input-file digests written beside
//! every command's outputs, so any artifact can be traced back to exactly
//! what produced it. No timestamps — identical runs produce identical
//! manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config: &'a RunConfig,
    input_digests: BTreeMap<String, String>,
}

pub fn write_run_manifest(
    output_dir: &Path,
    command: &str,
    config: &RunConfig,
    inputs: &[&Path],
) -> Result<PathBuf> {
    let mut input_digests = BTreeMap::new();
    for path in inputs {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot digest input {}", path.display()))?;
        input_digests.insert(
            path.display().to_string(),
            cotsel_core::hash::digest_bytes_hex(&bytes),
        );
    }
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        input_digests,
    };
    let path = output_dir.join(format!("run_manifest_{command}.json"));
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, body)
        .with_context(|| format!("cannot write run manifest {}", path.display()))?;
    Ok(path)
}
