//! The hierarchical three-tier network: wiring, per-step conditional updates,
//! and the training objective.

mod arch;
mod forward;
mod loss;
mod params;

pub use arch::{set_modality_order, Architecture, DimsPreset, Modality, ModalityOrder};
pub use forward::{
    classify, forward_video, hcms_step, Clamp, DecisionTrace, FeatureAccess, ForwardOptions, StepGuard, StepOutput,
    StepRecord, StepState, Unguarded, VideoOutput,
};
pub use loss::{compute_loss, loss_on_tape, LossBreakdown, LossWeights};
pub use params::{Hcms, HcmsParams, Network};

pub(crate) use forward::check_sequence;

use crate::autodiff::{Real, Tape};
use crate::data::FeatureSequence;
use crate::error::Result;
use crate::gating::NoiseSource;

/// Class distribution and decisions for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub trace: DecisionTrace,
    /// Feature vectors read per modality.
    pub reads: [usize; 3],
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        crate::autodiff::argmax(&self.probs)
    }
}

/// Loss value, parameter gradients and decisions for one video.
pub struct VideoGradients<T> {
    pub loss: LossBreakdown,
    pub grads: HcmsParams<T>,
    pub trace: DecisionTrace,
    pub probs: Vec<f64>,
}

impl<T: Real> Network<T> {
    pub fn forward(
        &self,
        seq: &FeatureSequence,
        opts: &ForwardOptions,
        noise: &mut dyn NoiseSource,
    ) -> Result<Prediction> {
        self.forward_guarded(seq, opts, noise, &mut Unguarded)
    }

    pub fn forward_guarded(
        &self,
        seq: &FeatureSequence,
        opts: &ForwardOptions,
        noise: &mut dyn NoiseSource,
        guard: &mut dyn StepGuard,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let out = forward_video(&mut tape, &vars, &self.arch, seq, opts, noise, guard)?;
        Ok(Prediction {
            probs: out.probs,
            trace: out.trace,
            reads: out.reads,
        })
    }

    /// Forward pass, loss, and backward pass for one labelled video.
    pub fn loss_and_grads(
        &self,
        seq: &FeatureSequence,
        opts: &ForwardOptions,
        noise: &mut dyn NoiseSource,
        weights: &LossWeights,
    ) -> Result<VideoGradients<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let out = forward_video(&mut tape, &vars, &self.arch, seq, opts, noise, &mut Unguarded)?;
        let (total, loss) = loss_on_tape(&mut tape, &out, seq.label, weights)?;
        let grads = tape.backward(total)?;
        Ok(VideoGradients {
            loss,
            grads: vars.grads(&grads),
            trace: out.trace,
            probs: out.probs,
        })
    }
}
