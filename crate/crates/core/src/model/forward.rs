//! One time step of the three-tier hierarchy and the full-video pass.
//!
//! Tier 0 runs every step. Tier 1 runs when its gate says so; otherwise its
//! previous state is carried and the prefix of its hidden vector is
//! overwritten with tier 0's fresh hidden vector. Tier 2 works the same way
//! on top of tier 1, and is only considered when tier 1 ran.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::gating::{Gate, GateDecision, GateMode, NoiseSource};
use crate::layers::StateVars;

use super::arch::{Architecture, Modality};
use super::params::Hcms;

/// Per-gate override.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    #[default]
    Free,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: GateMode,
    pub temperature: f64,
    /// Overrides for the tier-1 and tier-2 gates.
    pub clamp: [Clamp; 2],
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: GateMode::Eval,
            temperature: 1.0,
            clamp: [Clamp::Free; 2],
        }
    }

    pub fn train(temperature: f64) -> Self {
        ForwardOptions {
            mode: GateMode::Train,
            temperature,
            clamp: [Clamp::Free; 2],
        }
    }

    pub fn soft(temperature: f64) -> Self {
        ForwardOptions {
            mode: GateMode::Soft,
            temperature,
            clamp: [Clamp::Free; 2],
        }
    }

    pub fn clamped(self, clamp: [Clamp; 2]) -> Self {
        ForwardOptions { clamp, ..self }
    }
}

/// Veto hook consulted before a gated tier is computed. Tier is 1 or 2.
pub trait StepGuard {
    fn permit(&mut self, tier: usize) -> bool;
}

pub struct Unguarded;

impl StepGuard for Unguarded {
    fn permit(&mut self, _tier: usize) -> bool {
        true
    }
}

/// Read-counting view of a video's features.
pub struct FeatureAccess<'a> {
    seq: &'a FeatureSequence,
    reads: [Cell<usize>; 3],
}

impl<'a> FeatureAccess<'a> {
    pub fn new(seq: &'a FeatureSequence) -> Self {
        FeatureAccess {
            seq,
            reads: Default::default(),
        }
    }

    pub fn sequence(&self) -> &FeatureSequence {
        self.seq
    }

    /// Number of feature vectors read per modality.
    pub fn reads(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.reads[i].get())
    }

    fn read<T: Real>(&self, tape: &mut Tape<T>, m: Modality, t: usize) -> Result<Var> {
        let cell = &self.reads[m.index()];
        cell.set(cell.get() + 1);
        let raw = self.seq.feature(m, t);
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteFeature {
                video: self.seq.id,
                step: t,
            });
        }
        Ok(tape.leaf(Tensor::vector(raw.iter().map(|&x| T::of(x as f64)).collect())))
    }
}

/// Gate outcomes at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Hard decisions for tier 1 and tier 2.
    pub gates: [u8; 2],
    /// Gate internals; `None` when the gate was clamped or not evaluated.
    pub decisions: [Option<GateDecision>; 2],
    /// Set when a guard vetoed an activation.
    #[serde(default)]
    pub forced: [bool; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub video_id: u64,
    pub label: usize,
    pub steps: Vec<StepRecord>,
}

impl DecisionTrace {
    /// A trace made only of hard bits.
    pub fn from_bits(bits: &[[u8; 2]]) -> Self {
        DecisionTrace {
            video_id: 0,
            label: 0,
            steps: bits
                .iter()
                .map(|&gates| StepRecord {
                    gates,
                    decisions: [None, None],
                    forced: [false; 2],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn bits(&self) -> impl Iterator<Item = [u8; 2]> + '_ {
        self.steps.iter().map(|s| s.gates)
    }

    /// Number of steps each gated tier ran.
    pub fn counts(&self) -> [usize; 2] {
        self.bits()
            .fold([0, 0], |acc, g| [acc[0] + g[0] as usize, acc[1] + g[1] as usize])
    }

    /// `(1/T) Σ G` per gated tier.
    pub fn usage(&self) -> [f64; 2] {
        if self.steps.is_empty() {
            return [0.0, 0.0];
        }
        let n = self.steps.len() as f64;
        self.counts().map(|c| c as f64 / n)
    }

    pub fn respects_hierarchy(&self) -> bool {
        self.bits().all(|g| g[0] == 1 || g[1] == 0)
    }
}

/// Recurrent state of all three tiers.
#[derive(Clone, Copy, Debug)]
pub struct StepState {
    pub tiers: [StateVars; 3],
    pub t: usize,
}

impl StepState {
    pub fn zeros<T: Real>(tape: &mut Tape<T>, arch: &Architecture) -> Self {
        let tiers = arch.hidden.map(|h| StateVars {
            h: tape.leaf(Tensor::zeros(&[h])),
            c: tape.leaf(Tensor::zeros(&[h])),
        });
        StepState { tiers, t: 0 }
    }
}

pub struct StepOutput {
    pub record: StepRecord,
    /// One-element nodes holding `G^I_t` and `G^M_t` as seen by the usage loss.
    pub usage: [Var; 2],
}

struct GateValue {
    hard: u8,
    weight: Option<Var>,
    decision: Option<GateDecision>,
    forced: bool,
}

#[allow(clippy::too_many_arguments)]
fn resolve_gate<T: Real>(
    tape: &mut Tape<T>,
    gate: &Gate<Var>,
    context: &[Var],
    clamp: Clamp,
    opts: &ForwardOptions,
    noise: &mut dyn NoiseSource,
    guard: &mut dyn StepGuard,
    tier: usize,
) -> Result<GateValue> {
    let dense = opts.mode.is_dense();
    let mut value = match clamp {
        Clamp::On | Clamp::Off => {
            let hard = u8::from(clamp == Clamp::On);
            GateValue {
                hard,
                weight: dense.then(|| tape.scalar(hard as f64)),
                decision: None,
                forced: false,
            }
        }
        Clamp::Free => {
            let ctx = tape.concat(context)?;
            let out = gate.decide(tape, ctx, opts.mode, opts.temperature, noise)?;
            GateValue {
                hard: out.decision.hard,
                weight: out.weight,
                decision: Some(out.decision),
                forced: false,
            }
        }
    };
    if value.hard == 1 && !dense && !guard.permit(tier) {
        value.hard = 0;
        value.weight = None;
        value.forced = true;
    }
    Ok(value)
}

/// State a skipped tier carries forward: its previous state with the hidden
/// prefix replaced by the lower tier's current hidden vector.
fn carry<T: Real>(
    tape: &mut Tape<T>,
    prev: StateVars,
    lower: StateVars,
    dims: (usize, usize),
    fuse_cell: bool,
) -> Result<StateVars> {
    let (lower_dim, upper_dim) = dims;
    let prefix = lower_dim.min(upper_dim);
    let overwrite = |tape: &mut Tape<T>, lo: Var, up: Var| -> Result<Var> {
        if prefix == upper_dim {
            if lower_dim == prefix {
                Ok(lo)
            } else {
                tape.slice(lo, 0, prefix)
            }
        } else {
            let head = if lower_dim == prefix {
                lo
            } else {
                tape.slice(lo, 0, prefix)?
            };
            let tail = tape.slice(up, prefix, upper_dim - prefix)?;
            tape.concat(&[head, tail])
        }
    };
    let h = overwrite(tape, lower.h, prev.h)?;
    let c = if fuse_cell {
        overwrite(tape, lower.c, prev.c)?
    } else {
        prev.c
    };
    Ok(StateVars { h, c })
}

/// `w·new + (1 - w)·old`
fn mix<T: Real>(tape: &mut Tape<T>, w: Var, new: StateVars, old: StateVars) -> Result<StateVars> {
    let one = tape.scalar(1.0);
    let rest = tape.sub(one, w)?;
    let blend = |tape: &mut Tape<T>, a: Var, b: Var| -> Result<Var> {
        let a = tape.mul_scalar(a, w)?;
        let b = tape.mul_scalar(b, rest)?;
        tape.add(a, b)
    };
    Ok(StateVars {
        h: blend(tape, new.h, old.h)?,
        c: blend(tape, new.c, old.c)?,
    })
}

/// Advances all tiers by one step.
#[allow(clippy::too_many_arguments)]
pub fn hcms_step<T: Real>(
    tape: &mut Tape<T>,
    params: &Hcms<Var>,
    arch: &Architecture,
    state: &StepState,
    access: &FeatureAccess<'_>,
    opts: &ForwardOptions,
    noise: &mut dyn NoiseSource,
    guard: &mut dyn StepGuard,
) -> Result<(StepState, StepOutput)> {
    let t = state.t;
    let order = arch.order;
    // Dense modes compute every tier and blend by the gate weight, so skipped
    // steps still pass gradient to the gates.
    let dense = opts.mode.is_dense();
    let [prev0, prev1, prev2] = state.tiers;
    let hidden = arch.hidden;

    // Tier 0: always on.
    let m0 = order.tier(0);
    let raw0 = access.read(tape, m0, t)?;
    let x0 = params.projections[m0.index()].forward(tape, raw0)?;
    let s0 = params.lstms[0].step(tape, x0, prev0, hidden[0])?;

    // Tier 1.
    let g1 = resolve_gate(
        tape,
        &params.gates[0],
        &[x0, prev1.h, prev1.c],
        opts.clamp[0],
        opts,
        noise,
        guard,
        1,
    )?;
    let carry1 = carry(tape, prev1, s0, (hidden[0], hidden[1]), arch.fuse_cell)?;
    let (s1, x1) = if dense || g1.hard == 1 {
        let m1 = order.tier(1);
        let raw1 = access.read(tape, m1, t)?;
        let x1 = params.projections[m1.index()].forward(tape, raw1)?;
        let input = tape.concat(&[x0, x1])?;
        let fresh = params.lstms[1].step(tape, input, prev1, hidden[1])?;
        let s1 = match g1.weight {
            Some(w) => mix(tape, w, fresh, carry1)?,
            None => fresh,
        };
        (s1, Some(x1))
    } else {
        (carry1, None)
    };

    // Tier 2: only reachable through tier 1.
    let g2 = match x1 {
        Some(x1) => {
            let mut g = resolve_gate(
                tape,
                &params.gates[1],
                &[x0, x1, prev2.h, prev2.c],
                opts.clamp[1],
                opts,
                noise,
                guard,
                2,
            )?;
            if dense {
                let (w1, w2) = (g1.weight.expect("dense weight"), g.weight.expect("dense weight"));
                g.weight = Some(tape.mul(w1, w2)?);
                g.hard &= g1.hard;
            }
            g
        }
        None => GateValue {
            hard: 0,
            weight: None,
            decision: None,
            forced: false,
        },
    };
    let carry2 = carry(tape, prev2, s1, (hidden[1], hidden[2]), arch.fuse_cell)?;
    let s2 = if dense || g2.hard == 1 {
        let m2 = order.tier(2);
        let raw2 = access.read(tape, m2, t)?;
        let x2 = params.projections[m2.index()].forward(tape, raw2)?;
        let input = tape.concat(&[x0, x1.expect("tier 1 ran"), x2])?;
        let fresh = params.lstms[2].step(tape, input, prev2, hidden[2])?;
        match g2.weight {
            Some(w) => mix(tape, w, fresh, carry2)?,
            None => fresh,
        }
    } else {
        carry2
    };

    let usage_var = |tape: &mut Tape<T>, g: &GateValue| match g.weight {
        Some(w) => w,
        None => tape.scalar(g.hard as f64),
    };
    let usage = [usage_var(tape, &g1), usage_var(tape, &g2)];
    let record = StepRecord {
        gates: [g1.hard, g2.hard],
        decisions: [g1.decision, g2.decision],
        forced: [g1.forced, g2.forced],
    };
    Ok((
        StepState {
            tiers: [s0, s1, s2],
            t: t + 1,
        },
        StepOutput { record, usage },
    ))
}

/// Everything a full-video pass leaves on the tape.
pub struct VideoOutput {
    pub logits: Var,
    pub log_probs: Var,
    /// `p_T` as plain values.
    pub probs: Vec<f64>,
    pub trace: DecisionTrace,
    pub usage: Vec<[Var; 2]>,
    pub reads: [usize; 3],
    pub final_state: StepState,
}

/// Class logits and log-probabilities from the top tier's hidden vector.
pub fn classify<T: Real>(tape: &mut Tape<T>, params: &Hcms<Var>, state: &StepState) -> Result<(Var, Var)> {
    let logits = params.classifier.forward(tape, state.tiers[2].h)?;
    let log_probs = tape.log_softmax(logits)?;
    Ok((logits, log_probs))
}

pub(crate) fn check_sequence(arch: &Architecture, seq: &FeatureSequence) -> Result<()> {
    if seq.steps() == 0 {
        return Err(Error::EmptySequence);
    }
    if seq.dims() != arch.feature_dims {
        return Err(Error::Dimension(format!(
            "video {} has feature dims {:?}, network expects {:?}",
            seq.id,
            seq.dims(),
            arch.feature_dims
        )));
    }
    Ok(())
}

/// Runs every step from zero state and classifies from the final top tier.
#[allow(clippy::too_many_arguments)]
pub fn forward_video<T: Real>(
    tape: &mut Tape<T>,
    params: &Hcms<Var>,
    arch: &Architecture,
    seq: &FeatureSequence,
    opts: &ForwardOptions,
    noise: &mut dyn NoiseSource,
    guard: &mut dyn StepGuard,
) -> Result<VideoOutput> {
    check_sequence(arch, seq)?;
    let access = FeatureAccess::new(seq);
    let mut state = StepState::zeros(tape, arch);
    let mut steps = Vec::with_capacity(seq.steps());
    let mut usage = Vec::with_capacity(seq.steps());
    for _ in 0..seq.steps() {
        let (next, out) = hcms_step(tape, params, arch, &state, &access, opts, noise, guard)?;
        state = next;
        steps.push(out.record);
        usage.push(out.usage);
    }
    let (logits, log_probs) = classify(tape, params, &state)?;
    let probs = tape.value(log_probs).data().iter().map(|x| x.as_f64().exp()).collect();
    Ok(VideoOutput {
        logits,
        log_probs,
        probs,
        trace: DecisionTrace {
            video_id: seq.id,
            label: seq.label,
            steps,
        },
        usage,
        reads: access.reads(),
        final_state: state,
    })
}
