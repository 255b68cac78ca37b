//! Training loop, evaluation metrics, and budget-constrained inference.

mod budget;
mod eval;
mod metrics;
mod optim;
mod trace;
mod train;

pub use budget::{budget_sweep, budgeted_predict, sweep_csv, BudgetPolicy, BudgetedPrediction, SweepRow};
pub use eval::{evaluate, summarize, EvalOptions, EvalReport, VideoResult};
pub use metrics::{average_precision, mean_average_precision, Metrics};
pub use optim::{Adam, AdamConfig};
pub use trace::{trace_records, TraceRecord};
pub use train::{learning_rate, train, train_from, EpochRecord, TrainConfig, TrainLoss, TrainOutcome, TrainState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Random stream `stream`, positioned for item `index`, under `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((index as u128) << 32);
    rng
}

/// Optional thread pool. With one worker everything runs inline.
pub(crate) struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    pub(crate) fn new(count: usize) -> Result<Self> {
        if count <= 1 {
            return Ok(Workers(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map(|p| Workers(Some(p)))
            .map_err(|e| Error::Config(format!("cannot start {count} workers: {e}")))
    }

    /// Maps in parallel; results keep input order.
    pub(crate) fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(usize, &I) -> O + Sync + Send,
    {
        match &self.0 {
            None => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
            Some(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()),
        }
    }
}
