use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::cost_ledger::CostModel;
use crate::data::{Dataset, FeatureSequence};
use crate::error::{Error, Result};
use crate::gating::FixedNoise;
use crate::model::{
    check_sequence, classify, hcms_step, DecisionTrace, FeatureAccess, ForwardOptions, Network, StepGuard, StepState,
};

use super::eval::{summarize, VideoResult};
use super::metrics::Metrics;
use super::Workers;

/// What a gated tier may spend. Under both policies a video stops and is
/// classified as soon as its next always-on step is unaffordable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// Gated tiers may only spend what exceeds the cost of running the
    /// always-on tier for every remaining step.
    #[default]
    ReserveAudio,
    /// Gated tiers may spend everything left.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetedPrediction {
    pub probs: Vec<f64>,
    pub steps: usize,
    pub gflops: f64,
    pub budget: f64,
    /// Stopped early or had a gate vetoed.
    pub exhausted: bool,
    /// Budget below a single always-on step; `probs` is the uniform prior.
    pub exhausted_at_start: bool,
    pub trace: DecisionTrace,
}

/// Charges activations against the budget using the ledger's own formula,
/// so the final trace cost equals the last admitted total.
struct BudgetGuard<'a> {
    cost: &'a CostModel,
    budget: f64,
    policy: BudgetPolicy,
    total_steps: usize,
    steps: usize,
    counts: [usize; 2],
    forced: bool,
}

impl BudgetGuard<'_> {
    fn spent_with(&self, steps: usize, counts: [usize; 2]) -> f64 {
        self.cost.cost_from_counts(steps, counts)
    }

    fn reserve(&self) -> f64 {
        match self.policy {
            BudgetPolicy::Greedy => 0.0,
            BudgetPolicy::ReserveAudio => self.total_steps.saturating_sub(self.steps) as f64 * self.cost.tier_cost(0),
        }
    }

    fn admit_step(&mut self) -> bool {
        if self.spent_with(self.steps + 1, self.counts) <= self.budget {
            self.steps += 1;
            true
        } else {
            false
        }
    }
}

impl StepGuard for BudgetGuard<'_> {
    fn permit(&mut self, tier: usize) -> bool {
        let mut counts = self.counts;
        counts[tier - 1] += 1;
        if self.spent_with(self.steps, counts) + self.reserve() <= self.budget {
            self.counts = counts;
            true
        } else {
            self.forced = true;
            false
        }
    }
}

/// Evaluation-mode inference that never spends more than `budget` GFLOPs.
pub fn budgeted_predict<T: Real>(
    net: &Network<T>,
    seq: &FeatureSequence,
    budget: f64,
    cost: &CostModel,
    policy: BudgetPolicy,
) -> Result<BudgetedPrediction> {
    if budget.is_nan() || budget < 0.0 {
        return Err(Error::Config(format!("budget must be non-negative, got {budget}")));
    }
    check_sequence(&net.arch, seq)?;
    let mut guard = BudgetGuard {
        cost,
        budget,
        policy,
        total_steps: seq.steps(),
        steps: 0,
        counts: [0; 2],
        forced: false,
    };
    if !guard.admit_step() {
        let c = net.arch.classes;
        return Ok(BudgetedPrediction {
            probs: vec![1.0 / c as f64; c],
            steps: 0,
            gflops: 0.0,
            budget,
            exhausted: true,
            exhausted_at_start: true,
            trace: DecisionTrace {
                video_id: seq.id,
                label: seq.label,
                steps: Vec::new(),
            },
        });
    }

    let mut tape = Tape::<T>::new();
    let vars = net.params.bind(&mut tape);
    let access = FeatureAccess::new(seq);
    let opts = ForwardOptions::eval();
    let mut noise = FixedNoise([0.0; 2]);
    let mut state = StepState::zeros(&mut tape, &net.arch);
    let mut records = Vec::with_capacity(seq.steps());
    loop {
        let (next, out) = hcms_step(
            &mut tape, &vars, &net.arch, &state, &access, &opts, &mut noise, &mut guard,
        )?;
        state = next;
        records.push(out.record);
        if state.t == seq.steps() || !guard.admit_step() {
            break;
        }
    }
    let (_, log_probs) = classify(&mut tape, &vars, &state)?;
    let probs: Vec<f64> = tape.value(log_probs).data().iter().map(|x| x.as_f64().exp()).collect();
    let trace = DecisionTrace {
        video_id: seq.id,
        label: seq.label,
        steps: records,
    };
    let gflops = cost.trace_cost(&trace);
    Ok(BudgetedPrediction {
        probs,
        steps: trace.len(),
        gflops,
        budget,
        exhausted: trace.len() < seq.steps() || guard.forced,
        exhausted_at_start: false,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub metrics: Metrics,
    /// Largest per-video spend at this budget.
    pub max_gflops: f64,
    /// Videos that stopped early or had a gate vetoed.
    pub exhausted: usize,
}

/// One budgeted pass over `data` per budget.
pub fn budget_sweep<T: Real>(
    net: &Network<T>,
    data: &Dataset,
    budgets: &[f64],
    cost: &CostModel,
    policy: BudgetPolicy,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("budgets must be ascending: {budgets:?}")));
    }
    let workers = Workers::new(workers)?;
    let mut rows = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let preds = workers
            .map(&data.videos, |_, v| budgeted_predict(net, v, budget, cost, policy))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let max_gflops = preds.iter().map(|p| p.gflops).fold(0.0, f64::max);
        let exhausted = preds.iter().filter(|p| p.exhausted).count();
        let results: Vec<VideoResult> = preds
            .into_iter()
            .map(|p| VideoResult {
                video_id: p.trace.video_id,
                label: p.trace.label,
                probs: p.probs,
                gflops: p.gflops,
                trace: p.trace,
            })
            .collect();
        rows.push(SweepRow {
            budget,
            metrics: summarize(&results, net.arch.classes, cost)?,
            max_gflops,
            exhausted,
        });
    }
    Ok(rows)
}

/// Comma-separated table with a header line.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("budget,map,accuracy,mean_gflops,max_gflops,skip_ratio_1,skip_ratio_2,exhausted\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.budget, m.map, m.accuracy, m.mean_gflops, r.max_gflops, m.skip_ratio[0], m.skip_ratio[1], r.exhausted
        );
    }
    out
}
