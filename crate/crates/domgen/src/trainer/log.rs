//! Per-epoch training records, serialized as line-delimited JSON.
//!
//! Records hold only run-deterministic quantities, so a log file reproduces
//! byte for byte under the same seed. Wall-clock timing is carried on the
//! in-memory record for progress reporting but never serialized.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which phase of the run a record or checkpoint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
    Final,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Final => "final",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stage1" => Ok(Stage::Stage1),
            "stage2" => Ok(Stage::Stage2),
            "final" => Ok(Stage::Final),
            _ => Err(Error::invalid(format!(
                "unknown stage `{s}` (expected stage1, stage2 or final)"
            ))),
        }
    }
}

/// One epoch's summary. Step-level quantities are averaged over the epoch's
/// steps; the averages keep the objective decomposition intact, since the
/// penalty weight is constant within an epoch.
///
/// Variance-objective epochs fill every field; mixture fine-tuning epochs
/// leave the per-environment fields unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// Epoch index within its stage, 0-based.
    pub epoch: usize,
    /// Objective value averaged over the epoch's steps.
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    /// Per-environment risks averaged over steps, in environment order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub env_risks: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_risk: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub risk_variance: Option<f64>,
    /// Wall-clock seconds for the epoch; progress information only, not
    /// serialized (logs must be byte-identical across reruns).
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Append-only sequence of epoch records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Append another log's records after this one's.
    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    /// Drop records at or past a resume point: keeps stage-1 records below
    /// `epoch` when resuming stage 1, and all stage-1 records plus stage-2
    /// records below `epoch` when resuming stage 2.
    pub fn truncate_from(&mut self, stage: Stage, epoch: usize) {
        self.records.retain(|r| match (stage, r.stage) {
            (Stage::Stage1, Stage::Stage1) => r.epoch < epoch,
            (Stage::Stage1, _) => false,
            (Stage::Stage2 | Stage::Final, Stage::Stage1) => true,
            (Stage::Stage2 | Stage::Final, Stage::Stage2) => r.epoch < epoch,
            (Stage::Stage2 | Stage::Final, Stage::Final) => false,
        });
    }

    /// One JSON object per line, in record order.
    pub fn render_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(label: &str, text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EpochRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(label, i + 1, e.to_string()))?;
            records.push(record);
        }
        Ok(TrainLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render_jsonl())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        TrainLog::parse_jsonl(&path.display().to_string(), &text)
    }
}
