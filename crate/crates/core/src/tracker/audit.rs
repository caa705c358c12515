use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TerminationReason;

/// Fate of one predicted candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateFate {
    Kept,
    PrunedLocal,
    PrunedGlobal,
    Trimmed,
    Merged,
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    /// Frontier position of the parent leaf.
    pub leaf: usize,
    pub center: [f64; 3],
    pub radius: f64,
    pub raw_score: Option<f64>,
    pub rank_score: Option<f64>,
    /// Continues the prediction without a significant fit.
    #[serde(default)]
    pub coast: bool,
    pub fate: CandidateFate,
}

/// One record of the tracking log, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum AuditRecord {
    BranchStart {
        branch: usize,
        parent: Option<usize>,
        start: [f64; 4],
        /// Committed hypotheses carried over from the parent lineage.
        inherited_history: usize,
        /// Uncommitted hypothesis nodes carried over from the parent tree.
        inherited_nodes: usize,
        rebuilt: bool,
    },
    Step {
        branch: usize,
        step: usize,
        frontier: usize,
        outcome: String,
        candidates: Vec<CandidateEntry>,
        committed: Option<[f64; 4]>,
    },
    Bifurcation {
        branch: usize,
        step: usize,
        cluster_sizes: [usize; 2],
        shared_prefix: usize,
        children: [usize; 2],
    },
    Terminate {
        branch: usize,
        reason: TerminationReason,
        points: usize,
    },
}

pub fn write_jsonl(records: &[AuditRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
