use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cost_ledger::CostModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gating::{GumbelRng, TemperatureSchedule};
use crate::model::{Architecture, Clamp, DimsPreset, ForwardOptions, HcmsParams, LossWeights, ModalityOrder, Network};

use super::eval::{evaluate, EvalOptions};
use super::metrics::Metrics;
use super::optim::{accumulate, scale, Adam, AdamConfig};
use super::{stream_rng, Workers};

const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM_BASE: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub temperature: TemperatureSchedule,
    pub seed: u64,
    pub order: ModalityOrder,
    pub preset: DimsPreset,
    pub fuse_cell: bool,
    /// Gate overrides during training and validation; `[On, On]` trains the
    /// unconditional model.
    pub clamp: [Clamp; 2],
    pub workers: usize,
    /// Return the epoch with the best validation mAP instead of the last one.
    pub select_by_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_decay: 0.92,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            temperature: TemperatureSchedule::default(),
            seed: 0,
            order: ModalityOrder::BASELINE,
            preset: DimsPreset::Paper,
            fuse_cell: false,
            clamp: [Clamp::Free; 2],
            workers: 1,
            select_by_validation: true,
        }
    }
}

impl TrainConfig {
    /// Small layers and a larger step size for the synthetic benchmark.
    pub fn desk() -> Self {
        TrainConfig {
            preset: DimsPreset::Desk,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.loss.gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return bad(format!("gamma must lie in [0, 1], got {:?}", self.loss.gamma));
        }
        if !(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.loss.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0) {
            return bad("learning rate and decay must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self, data: &Dataset) -> Architecture {
        let mut arch = Architecture::from_preset(self.preset, data.header.dims, data.header.classes);
        arch.order = self.order;
        arch.fuse_cell = self.fuse_cell;
        arch
    }
}

/// `lr₀ · decay^epoch`.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.learning_rate * config.lr_decay.powi(epoch as i32)
}

/// Mean training-loss terms over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLoss {
    pub cross_entropy: f64,
    pub usage_loss: f64,
    pub total: f64,
    /// Mean straight-through usage of tier 1 and tier 2.
    pub usage: [f64; 2],
    pub accuracy: f64,
}

/// One line of the curve log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub train: TrainLoss,
    pub validation: Option<Metrics>,
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub network: Network<f32>,
    pub adam: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    /// Best epoch so far with its validation (mAP, accuracy).
    pub best: Option<(usize, (f64, f64), HcmsParams<f32>)>,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig, data: &Dataset) -> Result<Self> {
        let network = Network::init(config.architecture(data), config.seed)?;
        let adam = Adam::new(config.adam, &network.params);
        Ok(TrainState {
            network,
            adam,
            epoch: 0,
            best: None,
        })
    }

    /// The network training would return now, with its epoch.
    pub fn selected(&self, config: &TrainConfig) -> Result<(Network<f32>, usize)> {
        match (&self.best, config.select_by_validation) {
            (Some((epoch, _, params)), true) => Ok((Network::new(self.network.arch.clone(), params.clone())?, *epoch)),
            _ => Ok((self.network.clone(), self.epoch.saturating_sub(1))),
        }
    }
}

pub struct TrainOutcome {
    /// Selected parameters: best validation mAP, or the last epoch.
    pub network: Network<f32>,
    pub selected_epoch: usize,
    pub curve: Vec<EpochRecord>,
    pub state: TrainState,
}

fn check_dims(arch: &Architecture, data: &Dataset, what: &str) -> Result<()> {
    if data.header.dims != arch.feature_dims || data.header.classes != arch.classes {
        return Err(Error::Dimension(format!(
            "{what} set has dims {:?} and {} classes, network expects {:?} and {}",
            data.header.dims, data.header.classes, arch.feature_dims, arch.classes
        )));
    }
    Ok(())
}

pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cost: &CostModel,
) -> Result<TrainOutcome> {
    let state = TrainState::fresh(config, train_set)?;
    train_from(config, train_set, validation, cost, state, &mut |_, _| {})
}

/// Runs epochs `state.epoch..config.epochs`, calling `on_epoch` after each
/// with the state a resumed run would continue from.
pub fn train_from(
    config: &TrainConfig,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cost: &CostModel,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = state.network.arch.clone();
    check_dims(&arch, train_set, "training")?;
    if let Some(v) = validation {
        check_dims(&arch, v, "validation")?;
    }
    let workers = Workers::new(config.workers)?;
    let eval_opts = EvalOptions {
        clamp: config.clamp,
        workers: config.workers,
        ..EvalOptions::default()
    };
    let mut curve = Vec::new();

    for epoch in state.epoch..config.epochs {
        let lr = learning_rate(config, epoch);
        let tau = config.temperature.at(epoch);
        let opts = ForwardOptions::train(tau).clamped(config.clamp);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, SHUFFLE_STREAM, epoch as u64));

        let mut sums = TrainLoss::default();
        let mut correct = 0usize;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let net = &state.network;
            let results = workers.map(chunk, |_, &i| {
                let mut noise = GumbelRng(stream_rng(config.seed, NOISE_STREAM_BASE + epoch as u64, i as u64));
                net.loss_and_grads(&train_set.videos[i], &opts, &mut noise, &config.loss)
            });
            let mut grads = state.network.params.zeros_like();
            for (r, &i) in results.into_iter().zip(chunk) {
                let r = r.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Divergence {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
                if !r.loss.total.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch,
                        loss: r.loss.total,
                    });
                }
                sums.cross_entropy += r.loss.cross_entropy;
                sums.usage_loss += r.loss.usage;
                sums.total += r.loss.total;
                sums.usage[0] += r.loss.usage_fractions[0];
                sums.usage[1] += r.loss.usage_fractions[1];
                if crate::autodiff::argmax(&r.probs) == train_set.videos[i].label {
                    correct += 1;
                }
                accumulate(&mut grads, &r.grads);
            }
            scale(&mut grads, 1.0 / chunk.len() as f64);
            state.adam.update(&mut state.network.params, &grads, lr);
        }
        let n = train_set.len() as f64;
        let train_loss = TrainLoss {
            cross_entropy: sums.cross_entropy / n,
            usage_loss: sums.usage_loss / n,
            total: sums.total / n,
            usage: sums.usage.map(|u| u / n),
            accuracy: correct as f64 / n,
        };

        let val_metrics = match validation {
            Some(v) => Some(evaluate(&state.network, v, cost, &eval_opts)?.metrics),
            None => None,
        };
        if let Some(m) = &val_metrics {
            // Ties on mAP go to higher accuracy, then to the later epoch.
            let score = (m.map, m.accuracy);
            let better = state.best.as_ref().is_none_or(|(_, best, _)| score >= *best);
            if better {
                state.best = Some((epoch, score, state.network.params.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            temperature: tau,
            train: train_loss,
            validation: val_metrics,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (ce {:.4}) usage {:.3}/{:.3} val {}",
            record.train.total,
            record.train.cross_entropy,
            record.train.usage[0],
            record.train.usage[1],
            record.validation.as_ref().map_or("-".to_string(), |m| format!(
                "acc {:.3} mAP {:.3} usage {:.3}/{:.3}",
                m.accuracy, m.map, m.usage[0], m.usage[1]
            ))
        );
        state.epoch = epoch + 1;
        on_epoch(&record, &state);
        curve.push(record);
    }

    let (network, selected_epoch) = state.selected(config)?;
    Ok(TrainOutcome {
        network,
        selected_epoch,
        curve,
        state,
    })
}
