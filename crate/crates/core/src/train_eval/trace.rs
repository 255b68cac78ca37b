use serde::{Deserialize, Serialize};

use crate::cost_ledger::CostModel;

use super::eval::VideoResult;

/// One step of one video, as written to a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub video_id: u64,
    pub label: usize,
    pub predicted: usize,
    pub step: usize,
    /// Hard gate bits for tier 1 and tier 2.
    pub gates: [u8; 2],
    /// Gate probability of "use" for tiers 1 and 2, when the gate was evaluated.
    pub use_prob: [Option<f64>; 2],
    pub forced: [bool; 2],
    /// Ledger GFLOPs spent up to and including this step.
    pub cumulative_gflops: f64,
    pub config_digest: String,
}

/// Expands each video into one record per step. The last record of a video
/// carries exactly its ledger total.
pub fn trace_records(results: &[VideoResult], cost: &CostModel, config_digest: &str) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    for v in results {
        let predicted = v.predicted();
        let mut counts = [0usize; 2];
        for (t, s) in v.trace.steps.iter().enumerate() {
            counts[0] += s.gates[0] as usize;
            counts[1] += s.gates[1] as usize;
            out.push(TraceRecord {
                video_id: v.video_id,
                label: v.label,
                predicted,
                step: t,
                gates: s.gates,
                use_prob: [0, 1].map(|k| s.decisions[k].as_ref().map(|d| d.probs[1])),
                forced: s.forced,
                cumulative_gflops: cost.cost_from_counts(t + 1, counts),
                config_digest: config_digest.to_string(),
            });
        }
    }
    out
}
