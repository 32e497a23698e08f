//! Single JSON configuration governing every module, with CLI-style dotted
//! overrides and a content hash for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CohortSpec, TemporalBlock};
use crate::enlasso::ENConfig;
use crate::error::{Error, Result};
use crate::gnn::TrainConfig;
use crate::scoring::ScoringConfig;
use crate::screener::ScreenRule;
use crate::simulator::SyntheticSpec;
use crate::taxonomy::TaxonomyConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub windows: Vec<u32>,
    pub blocks: Vec<TemporalBlock>,
    /// Block used to fit the screener and scan the threshold; defaults to
    /// the first block.
    pub calibration_block: Option<String>,
    pub grid_step: f64,
    pub spec_target: f64,
    pub prevalence: f64,
    pub min_relevance: f64,
    pub semantic_threshold: f64,
    pub patient_knn: usize,
    pub run_pipeline_comparison: bool,
    pub scoring: ScoringConfig,
    pub graph: crate::hetgraph::GraphConfig,
    pub cohort: CohortSpec,
    pub taxonomy: TaxonomyConfig,
    pub gnn: TrainConfig,
    pub en: ENConfig,
    pub rule: ScreenRule,
    pub synthetic: SyntheticSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        let blocks = vec![
            TemporalBlock {
                block_id: "block-1".into(),
                start_date: "2024-08-01".parse().unwrap(),
                end_date: "2024-12-01".parse().unwrap(),
            },
            TemporalBlock {
                block_id: "block-2".into(),
                start_date: "2024-12-01".parse().unwrap(),
                end_date: "2025-04-01".parse().unwrap(),
            },
            TemporalBlock {
                block_id: "block-3".into(),
                start_date: "2025-04-01".parse().unwrap(),
                end_date: "2025-08-01".parse().unwrap(),
            },
        ];
        Self {
            seed: 20250801,
            windows: vec![3, 7, 14, 30, 60, 90],
            blocks,
            calibration_block: None,
            grid_step: 0.01,
            spec_target: 0.9,
            prevalence: 0.10,
            min_relevance: 0.5,
            semantic_threshold: 0.7,
            patient_knn: 3,
            run_pipeline_comparison: false,
            scoring: ScoringConfig::default(),
            graph: crate::hetgraph::GraphConfig::default(),
            cohort: CohortSpec::default(),
            taxonomy: TaxonomyConfig::default(),
            gnn: TrainConfig::default(),
            en: ENConfig::default(),
            rule: ScreenRule::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::from_value(value).map_err(|e| match e {
            Error::Invalid(msg) => Error::invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Apply a `key.path=value` override onto the JSON form and re-validate.
    pub fn with_override(self, assignment: &str) -> Result<Self> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not key=value")))?;
        let mut value = serde_json::to_value(&self).expect("config serializes");
        let segments: Vec<&str> = path.split('.').collect();
        let (last, parents) = segments.split_last().expect("split produced a segment");
        let mut cursor = &mut value;
        for seg in parents {
            cursor = cursor
                .as_object_mut()
                .and_then(|obj| obj.get_mut(*seg))
                .ok_or_else(|| {
                    Error::invalid(format!("override path `{path}`: unknown field `{seg}`"))
                })?;
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::invalid(format!("override path `{path}`: `{last}` is not settable"))
        })?;
        if !obj.contains_key(*last) {
            return Err(Error::invalid(format!(
                "override path `{path}`: unknown field `{last}`"
            )));
        }
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(last.to_string(), parsed);
        Self::from_value(value)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::invalid("no screening windows configured"));
        }
        if self.windows.iter().any(|&w| w < 1) {
            return Err(Error::invalid("screening windows must be >= 1 day"));
        }
        if !(0.0..=1.0).contains(&self.min_relevance) {
            return Err(Error::invalid("min_relevance outside [0,1]"));
        }
        if !(0.0 < self.prevalence && self.prevalence < 1.0) {
            return Err(Error::invalid("prevalence outside (0,1)"));
        }
        if !(0.0..=1.0).contains(&self.spec_target) {
            return Err(Error::invalid("spec_target outside [0,1]"));
        }
        if let Some(id) = &self.calibration_block {
            if !self.blocks.iter().any(|b| &b.block_id == id) {
                return Err(Error::invalid(format!(
                    "calibration_block `{id}` is not a configured block"
                )));
            }
        }
        Ok(())
    }
}
