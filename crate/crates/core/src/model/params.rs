use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gating::{Gate, GateParams};
use crate::layers::{Linear, LinearParams, Lstm, LstmParams};

use super::arch::{Architecture, Modality};

/// All learnable parameters, generic over storage like the layer structs.
#[derive(Clone, Debug, PartialEq)]
pub struct Hcms<P> {
    /// Input projections, indexed by modality.
    pub projections: [Linear<P>; 3],
    /// Recurrent cells, indexed by tier.
    pub lstms: [Lstm<P>; 3],
    /// Gates in front of tier 1 and tier 2.
    pub gates: [Gate<P>; 2],
    pub classifier: Linear<P>,
}

pub type HcmsParams<T> = Hcms<Tensor<T>>;

const TIER_NAMES: [&str; 3] = ["tier0", "tier1", "tier2"];

impl<P> Hcms<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Hcms<Q> {
        Hcms {
            projections: [
                self.projections[0].map(f),
                self.projections[1].map(f),
                self.projections[2].map(f),
            ],
            lstms: [self.lstms[0].map(f), self.lstms[1].map(f), self.lstms[2].map(f)],
            gates: [self.gates[0].map(f), self.gates[1].map(f)],
            classifier: self.classifier.map(f),
        }
    }

    /// Visits every tensor with its stable name, in checkpoint order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a P)) {
        for m in Modality::ALL {
            self.projections[m.index()].visit(&format!("projection.{}", m.name()), f);
        }
        for (k, lstm) in self.lstms.iter().enumerate() {
            lstm.visit(&format!("lstm.{}", TIER_NAMES[k]), f);
        }
        for (k, gate) in self.gates.iter().enumerate() {
            gate.visit(&format!("gate.{}", TIER_NAMES[k + 1]), f);
        }
        self.classifier.visit("classifier", f);
    }

    /// Same order as [`Hcms::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        for p in &mut self.projections {
            p.visit_mut(f);
        }
        for l in &mut self.lstms {
            l.visit_mut(f);
        }
        for g in &mut self.gates {
            g.visit_mut(f);
        }
        self.classifier.visit_mut(f);
    }

    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| out.push((name, p)));
        out
    }
}

impl<T: Real> HcmsParams<T> {
    /// Fresh parameters for `arch`, deterministic in `seed`.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projections = Modality::ALL.map(|m| {
            let i = m.index();
            LinearParams::init(arch.feature_dims[i], arch.projection_dims[i], &mut rng)
        });
        let lstms = [0, 1, 2].map(|k| LstmParams::init(arch.lstm_input(k), arch.hidden[k], &mut rng));
        let gates = [1, 2].map(|k| GateParams::init(arch.gate_context(k), &mut rng));
        let classifier = LinearParams::init(arch.hidden[2], arch.classes, &mut rng);
        Ok(Hcms {
            projections,
            lstms,
            gates,
            classifier,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Hcms<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t| Tensor::zeros(t.shape()))
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Checks every tensor shape against `arch`.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let expected = Self::init_shapes(arch);
        let actual: Vec<(String, Vec<usize>)> =
            self.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected != actual {
            let diff = expected
                .iter()
                .zip(&actual)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{} expected {:?}, found {:?}", a.0, a.1, b.1))
                .unwrap_or_else(|| "tensor count differs".into());
            return Err(Error::Dimension(diff));
        }
        Ok(())
    }

    fn init_shapes(arch: &Architecture) -> Vec<(String, Vec<usize>)> {
        let shaped: Hcms<Vec<usize>> = Hcms {
            projections: Modality::ALL.map(|m| {
                let i = m.index();
                Linear {
                    weight: vec![arch.projection_dims[i], arch.feature_dims[i]],
                    bias: vec![arch.projection_dims[i]],
                }
            }),
            lstms: [0, 1, 2].map(|k| Lstm {
                w_input: vec![4 * arch.hidden[k], arch.lstm_input(k)],
                w_hidden: vec![4 * arch.hidden[k], arch.hidden[k]],
                bias: vec![4 * arch.hidden[k]],
            }),
            gates: [1, 2].map(|k| Gate {
                weight: vec![2, arch.gate_context(k)],
                bias: vec![2],
            }),
            classifier: Linear {
                weight: vec![arch.classes, arch.hidden[2]],
                bias: vec![arch.classes],
            },
        };
        shaped.named().into_iter().map(|(n, s)| (n, s.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> HcmsParams<U> {
        self.map(&mut |t| t.cast())
    }
}

impl Hcms<Var> {
    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> HcmsParams<T> {
        self.map(&mut |v| grads.get(*v))
    }
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub arch: Architecture,
    pub params: HcmsParams<T>,
}

impl<T: Real> Network<T> {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let params = HcmsParams::init(&arch, seed)?;
        Ok(Network { arch, params })
    }

    pub fn new(arch: Architecture, params: HcmsParams<T>) -> Result<Self> {
        arch.validate()?;
        params.check(&arch)?;
        Ok(Network { arch, params })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}
