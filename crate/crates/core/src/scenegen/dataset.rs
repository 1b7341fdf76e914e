use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::io::{read_artifact_string, write_atomic};
use crate::trajcore::{HORIZON, STEP};

pub const DATASET_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub generator_config_hash: String,
    pub horizon: usize,
    pub step: f64,
}

/// Writes the manifest line followed by one scenario per line.
pub fn write_dataset(scenarios: &[Scenario], path: &Path, config_hash: &str) -> Result<DatasetManifest> {
    let manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        count: scenarios.len(),
        generator_config_hash: config_hash.to_string(),
        horizon: HORIZON,
        step: STEP,
    };
    let mut out = serde_json::to_string(&manifest)?;
    out.push('\n');
    for s in scenarios {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetManifest, Vec<Scenario>)> {
    let text = read_artifact_string(path)?;
    let bad = |line: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad(1, "missing manifest".into()))?;
    let version: serde_json::Value = serde_json::from_str(head).map_err(|e| bad(1, e.to_string()))?;
    let found = version
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad(1, "manifest has no format_version".into()))?;
    if found != DATASET_VERSION as u64 {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: found as u32,
            expected: DATASET_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(version).map_err(|e| bad(1, e.to_string()))?;
    if manifest.horizon != HORIZON || manifest.step != STEP {
        return Err(bad(
            1,
            format!("horizon {} @ {} s is not {HORIZON} @ {STEP} s", manifest.horizon, manifest.step),
        ));
    }

    let mut scenarios = Vec::with_capacity(manifest.count);
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if scenarios.len() == manifest.count {
            return Err(bad(n, format!("unexpected record beyond the declared count {}", manifest.count)));
        }
        let s: Scenario = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
        s.validate().map_err(|e| bad(n, e.to_string()))?;
        scenarios.push(s);
    }
    if scenarios.len() != manifest.count {
        return Err(bad(
            scenarios.len() + 2,
            format!("file ends after {} of {} records", scenarios.len(), manifest.count),
        ));
    }
    Ok((manifest, scenarios))
}
