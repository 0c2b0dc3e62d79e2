//! Run manifests: enough to replay a run and check its inputs.

use std::path::Path;

use anyhow::{Context, Result};
use catsim::LabelGrid;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    /// SHA-256 of the file bytes.
    pub file_sha256: String,
    /// SHA-256 of the decoded grid, if the file holds one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_sha256: Option<String>,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputDigest {
            path: path.display().to_string(),
            file_sha256: hex::encode(Sha256::digest(&bytes)),
            grid_sha256: None,
        })
    }

    /// File digest plus the decoded content digest. The file was already
    /// read successfully, so a failure here is reported as an empty digest.
    pub fn of_grid(path: &Path, grid: &LabelGrid) -> Self {
        let mut d = InputDigest::of_file(path).unwrap_or_else(|_| InputDigest {
            path: path.display().to_string(),
            file_sha256: String::new(),
            grid_sha256: None,
        });
        d.grid_sha256 = Some(hex::encode(grid.content_digest()));
        d
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new(
        subcommand: &'static str,
        argv: Vec<String>,
        config: serde_json::Value,
        inputs: Vec<InputDigest>,
        seed: u64,
    ) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool: "catsim",
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv,
            config,
            seed,
            inputs,
            outputs: Vec::new(),
        }
    }
}
