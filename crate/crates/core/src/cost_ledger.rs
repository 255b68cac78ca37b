//! Declared GFLOPs accounting for decision traces.
//!
//! Costs are per step. Tier 0 is paid every step; tiers 1 and 2 only when
//! their gate bit is set. Totals are computed from gate counts so that
//! `T·c0 + ΣG1·c1 + ΣG2·c2` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, DecisionTrace, Modality, ModalityOrder};

/// Per-step backbone GFLOPs for audio, appearance, motion.
pub const BACKBONE_GFLOPS: [f64; 3] = [0.07, 0.99, 65.7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-step backbone cost, indexed by modality.
    pub backbone: [f64; 3],
    pub order: ModalityOrder,
    /// Per-step head cost per tier (projection, LSTM, and the gate evaluated
    /// after that tier), or `None` for backbone-only accounting.
    pub heads: Option<[f64; 3]>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::backbone_only(BACKBONE_GFLOPS)
    }
}

fn affine(input: usize, output: usize) -> f64 {
    2.0 * input as f64 * output as f64 / 1e9
}

fn lstm(input: usize, hidden: usize) -> f64 {
    8.0 * hidden as f64 * (hidden + input) as f64 / 1e9
}

impl CostModel {
    pub fn backbone_only(backbone: [f64; 3]) -> Self {
        CostModel {
            backbone,
            order: ModalityOrder::BASELINE,
            heads: None,
        }
    }

    /// Backbone costs in `arch`'s tier order plus head costs derived from its dims.
    pub fn for_architecture(backbone: [f64; 3], arch: &Architecture, heads: bool) -> Self {
        let heads = heads.then(|| {
            let mut h = [0.0; 3];
            for (k, cost) in h.iter_mut().enumerate() {
                let m = arch.order.tier(k).index();
                *cost =
                    affine(arch.feature_dims[m], arch.projection_dims[m]) + lstm(arch.lstm_input(k), arch.hidden[k]);
                if k < 2 {
                    *cost += affine(arch.gate_context(k + 1), 2);
                }
            }
            h
        });
        CostModel {
            backbone,
            order: arch.order,
            heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let heads = self.heads.unwrap_or([0.0; 3]);
        if self
            .backbone
            .iter()
            .chain(heads.iter())
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(Error::Config(format!(
                "costs must be finite and non-negative: backbone {:?}, heads {:?}",
                self.backbone, self.heads
            )));
        }
        Ok(())
    }

    /// Cost of running tier `k` for one step.
    pub fn tier_cost(&self, k: usize) -> f64 {
        let head = self.heads.map_or(0.0, |h| h[k]);
        self.backbone[self.order.tier(k).index()] + head
    }

    pub fn step_cost(&self, gates: [u8; 2]) -> f64 {
        self.tier_cost(0) + gates[0] as f64 * self.tier_cost(1) + gates[1] as f64 * self.tier_cost(2)
    }

    pub fn trace_cost(&self, trace: &DecisionTrace) -> f64 {
        self.cost_from_counts(trace.len(), trace.counts())
    }

    /// `steps·c0 + counts[0]·c1 + counts[1]·c2`.
    pub fn cost_from_counts(&self, steps: usize, counts: [usize; 2]) -> f64 {
        steps as f64 * self.tier_cost(0) + counts[0] as f64 * self.tier_cost(1) + counts[1] as f64 * self.tier_cost(2)
    }

    /// Cost with every gate on.
    pub fn all_on_cost(&self, steps: usize) -> f64 {
        self.cost_from_counts(steps, [steps, steps])
    }
}

/// One recomputed entry of the reference cost table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub modalities: String,
    pub views: usize,
    pub computed: f64,
    pub reported: f64,
}

impl ReferenceRow {
    pub fn abs_diff(&self) -> f64 {
        (self.computed - self.reported).abs()
    }

    pub fn rel_diff(&self) -> f64 {
        self.abs_diff() / self.reported
    }
}

const REFERENCE: [(&[Modality], [f64; 2]); 7] = [
    (&[Modality::Audio], [0.8, 10.3]),
    (&[Modality::Appearance], [10.1, 129.7]),
    (&[Modality::Motion], [657.5, 8416.4]),
    (&[Modality::Audio, Modality::Appearance], [10.8, 138.6]),
    (&[Modality::Audio, Modality::Motion], [658.0, 8421.9]),
    (&[Modality::Appearance, Modality::Motion], [667.2, 8539.9]),
    (
        &[Modality::Audio, Modality::Appearance, Modality::Motion],
        [667.9, 8549.4],
    ),
];

/// Every modality combination at 10 and 128 views, backbone costs only,
/// next to the reference GFLOPs.
pub fn reference_table(model: &CostModel) -> Vec<ReferenceRow> {
    let mut rows = Vec::with_capacity(14);
    for (views_index, views) in [10usize, 128].into_iter().enumerate() {
        for (mods, reported) in REFERENCE {
            let per_step: f64 = mods.iter().map(|m| model.backbone[m.index()]).sum();
            let name: Vec<String> = mods.iter().map(|m| m.letter().to_string()).collect();
            rows.push(ReferenceRow {
                modalities: name.join("+"),
                views,
                computed: views as f64 * per_step,
                reported: reported[views_index],
            });
        }
    }
    rows
}
