use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Real};
use crate::cost_ledger::CostModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gating::{GateMode, GumbelRng};
use crate::model::{Clamp, DecisionTrace, ForwardOptions, Network};

use super::metrics::{mean_average_precision, Metrics};
use super::{stream_rng, Workers};

const SAMPLE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// `Eval` (argmax gates) or `Sample` (stochastic gates).
    pub mode: GateMode,
    pub clamp: [Clamp; 2],
    /// Seed for `Sample` mode.
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: GateMode::Eval,
            clamp: [Clamp::Free; 2],
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: u64,
    pub label: usize,
    pub probs: Vec<f64>,
    pub trace: DecisionTrace,
    pub gflops: f64,
}

impl VideoResult {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub videos: Vec<VideoResult>,
}

impl EvalReport {
    /// Mean usage fractions per class, pooled over that class's steps.
    pub fn per_class_usage(&self, classes: usize) -> Vec<[f64; 2]> {
        let mut counts = vec![[0usize; 2]; classes];
        let mut steps = vec![0usize; classes];
        for v in &self.videos {
            let c = v.trace.counts();
            counts[v.label][0] += c[0];
            counts[v.label][1] += c[1];
            steps[v.label] += v.trace.len();
        }
        counts
            .iter()
            .zip(&steps)
            .map(|(c, &s)| {
                let s = s.max(1) as f64;
                [c[0] as f64 / s, c[1] as f64 / s]
            })
            .collect()
    }
}

/// Aggregates per-video results. GFLOPs are summed from the traces through
/// the ledger; usage pools gate counts over all processed steps.
pub fn summarize(results: &[VideoResult], classes: usize, cost: &CostModel) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs: Vec<Vec<f64>> = results.iter().map(|r| r.probs.clone()).collect();
    let labels: Vec<usize> = results.iter().map(|r| r.label).collect();
    let map = mean_average_precision(&probs, &labels, classes)?;
    let correct = results.iter().filter(|r| r.predicted() == r.label).count();
    let steps: usize = results.iter().map(|r| r.trace.len()).sum();
    let mut counts = [0usize; 2];
    for r in results {
        let c = r.trace.counts();
        counts[0] += c[0];
        counts[1] += c[1];
    }
    let usage = if steps == 0 {
        [0.0; 2]
    } else {
        counts.map(|c| c as f64 / steps as f64)
    };
    let total: f64 = results.iter().map(|r| cost.trace_cost(&r.trace)).sum();
    Ok(Metrics {
        videos: results.len(),
        map,
        accuracy: correct as f64 / results.len() as f64,
        usage,
        skip_ratio: usage.map(|u| 1.0 - u),
        mean_gflops: total / results.len() as f64,
        steps,
    })
}

/// Runs every video once and scores the predictions.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Dataset, cost: &CostModel, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !matches!(opts.mode, GateMode::Eval | GateMode::Sample) {
        return Err(Error::Config(format!("cannot evaluate in {:?} mode", opts.mode)));
    }
    let fwd = ForwardOptions {
        mode: opts.mode,
        temperature: 1.0,
        clamp: opts.clamp,
    };
    let workers = Workers::new(opts.workers)?;
    let results = workers.map(&data.videos, |i, v| -> Result<VideoResult> {
        let mut noise = GumbelRng(stream_rng(opts.seed, SAMPLE_STREAM, i as u64));
        let p = net.forward(v, &fwd, &mut noise)?;
        Ok(VideoResult {
            video_id: v.id,
            label: v.label,
            gflops: cost.trace_cost(&p.trace),
            probs: p.probs,
            trace: p.trace,
        })
    });
    let videos = results.into_iter().collect::<Result<Vec<_>>>()?;
    let metrics = summarize(&videos, net.arch.classes, cost)?;
    Ok(EvalReport { metrics, videos })
}
