use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use durm::data::Provenance;
use durm::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::dataset::DataSpec;

pub const SCHEMA_VERSION: &str = "1";

/// Grid of a dummy-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub num_dummy: Vec<usize>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: String,
    pub command: String,
    pub config: TrainConfig,
    pub data: DataSpec,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// SHA-256 of the canonical JSON of every field above.
    pub digest: String,
    pub created_at: String,
}

#[derive(Serialize)]
struct Canonical<'a> {
    schema_version: &'a str,
    command: &'a str,
    config: &'a TrainConfig,
    data: &'a DataSpec,
    provenance: &'a Provenance,
    sweep: &'a Option<SweepSpec>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: TrainConfig,
        data: DataSpec,
        provenance: Provenance,
        sweep: Option<SweepSpec>,
    ) -> Self {
        let mut m = Self {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            config,
            data,
            provenance,
            sweep,
            digest: String::new(),
            created_at: OffsetDateTime::now_utc()
                .format(&Rfc3339)
                .unwrap_or_else(|_| "unknown".into()),
        };
        m.digest = m.compute_digest();
        m
    }

    /// Object keys come out sorted (serde_json's default map), so the string
    /// is canonical for a given value.
    pub fn compute_digest(&self) -> String {
        let value = serde_json::to_value(Canonical {
            schema_version: &self.schema_version,
            command: &self.command,
            config: &self.config,
            data: &self.data,
            provenance: &self.provenance,
            sweep: &self.sweep,
        })
        .expect("manifest fields serialize");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn short(&self) -> &str {
        &self.digest[..12]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.schema_version != SCHEMA_VERSION {
            anyhow::bail!(
                "manifest {} has schema version {}, expected {SCHEMA_VERSION}",
                path.display(),
                m.schema_version
            );
        }
        Ok(m)
    }
}
