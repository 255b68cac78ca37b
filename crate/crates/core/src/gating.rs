//! Binary use/skip gates: a two-way linear score head, Gumbel-Softmax
//! relaxation, and straight-through hardening.
//!
//! Index 1 means "compute the modality", index 0 means "skip it".

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{argmax, Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Initial bias of the "activate" score; softmax([0, 2])[1] ≈ 0.881.
pub const ACTIVATE_BIAS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Gate<P> {
    /// `[2 × context]`
    pub weight: P,
    /// `[2]`
    pub bias: P,
}

pub type GateParams<T> = Gate<Tensor<T>>;

/// How a gate turns scores into a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Gumbel sample, hardened with a straight-through gradient. Skipped
    /// tiers are still computed and blended with weight exactly 0, so the
    /// forward values match the hard branch while the gate sees the gradient.
    Train,
    /// Gumbel sample, kept relaxed: states are mixed by the relaxed weight.
    /// Smooth in every parameter; used for gradient checks.
    Soft,
    /// Noise-free argmax of the gate probabilities.
    Eval,
    /// Gumbel sample hardened without gradient (stochastic inference).
    Sample,
}

impl GateMode {
    pub fn uses_noise(self) -> bool {
        !matches!(self, GateMode::Eval)
    }

    /// Whether every tier is computed at every step.
    pub fn is_dense(self) -> bool {
        matches!(self, GateMode::Train | GateMode::Soft)
    }
}

/// Everything a gate produced at one step.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GateDecision {
    pub raw_scores: [f64; 2],
    pub probs: [f64; 2],
    pub relaxed: [f64; 2],
    pub hard: u8,
    pub temperature: f64,
    pub noise: [f64; 2],
}

/// Source of Gumbel noise pairs.
pub trait NoiseSource {
    fn gumbel_pair(&mut self) -> [f64; 2];
}

/// Gumbel noise `-ln(-ln U)`, `U ~ Uniform(0, 1)` drawn from a seeded stream.
pub struct GumbelRng<R>(pub R);

impl GumbelRng<ChaCha8Rng> {
    pub fn seeded(seed: u64) -> Self {
        GumbelRng(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: Rng> NoiseSource for GumbelRng<R> {
    fn gumbel_pair(&mut self) -> [f64; 2] {
        [gumbel(&mut self.0), gumbel(&mut self.0)]
    }
}

/// Replays the same noise pair on every call.
pub struct FixedNoise(pub [f64; 2]);

impl NoiseSource for FixedNoise {
    fn gumbel_pair(&mut self) -> [f64; 2] {
        self.0
    }
}

pub fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

impl<P> Gate<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Gate<Q> {
        Gate {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<T: Real> GateParams<T> {
    /// Uniform weights in `[-s, s]`, `s = sqrt(1/context)`; bias `[0, ACTIVATE_BIAS]`.
    pub fn init(context: usize, rng: &mut impl Rng) -> Self {
        assert!(context > 0, "gate context must be non-empty");
        let s = (1.0 / context as f64).sqrt();
        let weight = (0..2 * context).map(|_| T::of(rng.random_range(-s..=s))).collect();
        Gate {
            weight: Tensor::matrix(2, context, weight).unwrap(),
            bias: Tensor::vector(vec![T::zero(), T::of(ACTIVATE_BIAS)]),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Gate<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    /// Raw scores `W·context + b` and their softmax.
    pub fn scores(&self, context: &Tensor<T>) -> Result<([f64; 2], [f64; 2])> {
        let mut tape = Tape::new();
        let g = self.bind(&mut tape);
        let ctx = tape.leaf(context.clone());
        let (raw, logp) = g.scores(&mut tape, ctx)?;
        let raw = pair(tape.value(raw));
        let lp = pair(tape.value(logp));
        Ok((raw, [lp[0].exp(), lp[1].exp()]))
    }
}

fn pair<T: Real>(t: &Tensor<T>) -> [f64; 2] {
    [t.data()[0].as_f64(), t.data()[1].as_f64()]
}

/// The outcome of [`Gate::decide`] on a tape.
pub struct GateOutcome {
    pub decision: GateDecision,
    /// One-element node carrying the decision value: the straight-through
    /// hard value in `Train`, the relaxed activation weight in `Soft`.
    /// `None` when no gradient path exists.
    pub weight: Option<Var>,
}

impl Gate<Var> {
    /// Raw scores and log-probabilities (log-softmax of the raw scores).
    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, context: Var) -> Result<(Var, Var)> {
        let raw = tape.affine(self.weight, context, self.bias)?;
        let logp = tape.log_softmax(raw)?;
        Ok((raw, logp))
    }

    pub fn decide<T: Real>(
        &self,
        tape: &mut Tape<T>,
        context: Var,
        mode: GateMode,
        temperature: f64,
        noise: &mut dyn NoiseSource,
    ) -> Result<GateOutcome> {
        let (raw, logp) = self.scores(tape, context)?;
        let raw_scores = pair(tape.value(raw));
        let lp = pair(tape.value(logp));
        let probs = [lp[0].exp(), lp[1].exp()];

        if mode == GateMode::Eval {
            let hard = argmax(&probs) as u8;
            return Ok(GateOutcome {
                decision: GateDecision {
                    raw_scores,
                    probs,
                    relaxed: probs,
                    hard,
                    temperature,
                    noise: [0.0, 0.0],
                },
                weight: None,
            });
        }

        let gb = noise.gumbel_pair();
        let relaxed = gumbel_softmax_logits(tape, logp, gb, temperature)?;
        let relaxed_vals = pair(tape.value(relaxed));
        let hard = argmax(tape.value(relaxed).data()) as u8;
        let weight = match mode {
            GateMode::Train => {
                let st = tape.straight_through(relaxed)?;
                Some(tape.slice(st, 1, 1)?)
            }
            GateMode::Soft => Some(tape.slice(relaxed, 1, 1)?),
            GateMode::Sample | GateMode::Eval => None,
        };
        Ok(GateOutcome {
            decision: GateDecision {
                raw_scores,
                probs,
                relaxed: relaxed_vals,
                hard,
                temperature,
                noise: gb,
            },
            weight,
        })
    }

    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> GateParams<T> {
        self.map(&mut |v| grads.get(*v))
    }
}

/// `softmax((logp + noise) / τ)` on the tape.
pub fn gumbel_softmax_logits<T: Real>(tape: &mut Tape<T>, logp: Var, noise: [f64; 2], temperature: f64) -> Result<Var> {
    let gb = tape.constant_vec(&noise);
    let z = tape.add(logp, gb)?;
    let z = tape.scale(z, 1.0 / temperature)?;
    tape.softmax(z)
}

/// Relaxed sample from probabilities: `softmax((ln p + noise) / τ)`.
pub fn gumbel_softmax(probs: [f64; 2], temperature: f64, noise: [f64; 2]) -> Result<[f64; 2]> {
    if probs.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
        return Err(Error::ZeroProbability(probs.to_vec()));
    }
    if temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant_vec(&probs);
    let logp = tape.log(p)?;
    let r = gumbel_softmax_logits(&mut tape, logp, noise, temperature)?;
    Ok(pair(tape.value(r)))
}

/// Hard decision from a relaxed vector: index of the larger entry.
pub fn harden(relaxed: [f64; 2]) -> u8 {
    argmax(&relaxed) as u8
}

/// Temperature for an epoch: fixed, or `max(floor, start·rate^epoch)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureSchedule {
    Fixed { tau: f64 },
    Anneal { start: f64, rate: f64, floor: f64 },
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::Fixed { tau: 1.0 }
    }
}

impl TemperatureSchedule {
    pub fn anneal_default() -> Self {
        TemperatureSchedule::Anneal {
            start: 5.0,
            rate: 0.96,
            floor: 0.5,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            TemperatureSchedule::Fixed { tau } => tau,
            TemperatureSchedule::Anneal { start, rate, floor } => (start * rate.powi(epoch as i32)).max(floor),
        }
    }
}
