//! Checkpoint container.
//!
//! ```text
//! MAGIC | u64 header length | JSON header | f32 tensors | f64 optimizer moments
//! ```
//!
//! Tensors follow [`crate::model::Hcms::visit`] order: the selected
//! parameters, then (with resume state) the latest parameters, the best
//! parameters if any, and the first and second moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::architecture_digest;
use crate::error::{Error, Result};
use crate::model::{Architecture, HcmsParams, Network};
use crate::train_eval::{Adam, AdamConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"HCMSCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    arch_digest: String,
    config_digest: String,
    seed: u64,
    selected_epoch: usize,
    resume: Option<ResumeHeader>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResumeHeader {
    next_epoch: usize,
    adam: AdamConfig,
    adam_step: u64,
    best: Option<(usize, (f64, f64))>,
}

/// A trained network, stamped with the digest of the config that made it,
/// plus optional state for resuming training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: String,
    pub seed: u64,
    pub selected_epoch: usize,
    pub network: Network<f32>,
    pub state: Option<TrainState>,
}

fn put_params(out: &mut Vec<u8>, p: &HcmsParams<f32>) {
    p.visit(&mut |_, t| {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    });
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    /// Fills a copy of `shape_of` with f32 values.
    fn params(&mut self, shape_of: &HcmsParams<f32>) -> Result<HcmsParams<f32>> {
        let mut out = shape_of.clone();
        let mut failed = None;
        out.visit_mut(&mut |t| {
            if failed.is_some() {
                return;
            }
            match self.take(t.len() * 4) {
                Ok(raw) => {
                    for (x, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                        *x = f32::from_le_bytes(c.try_into().unwrap());
                    }
                }
                Err(e) => failed = Some(e),
            }
        });
        failed.map_or(Ok(out), Err)
    }

    fn moments(&mut self, shape_of: &HcmsParams<f32>) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for (_, t) in shape_of.named() {
            let raw = self.take(t.len() * 8)?;
            out.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn arch_digest(&self) -> String {
        architecture_digest(&self.network.arch)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let resume = self.state.as_ref().map(|s| ResumeHeader {
            next_epoch: s.epoch,
            adam: s.adam.config,
            adam_step: s.adam.step,
            best: s.best.as_ref().map(|(e, score, _)| (*e, *score)),
        });
        let header = Header {
            arch: self.network.arch.clone(),
            arch_digest: self.arch_digest(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            selected_epoch: self.selected_epoch,
            resume,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        put_params(&mut out, &self.network.params);
        if let Some(s) = &self.state {
            put_params(&mut out, &s.network.params);
            if let Some((_, _, best)) = &s.best {
                put_params(&mut out, best);
            }
            for moment in s.adam.first.iter().chain(&s.adam.second) {
                for x in moment {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not an hcms checkpoint".into()));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let digest = architecture_digest(&header.arch);
        if digest != header.arch_digest {
            return Err(Error::DigestMismatch {
                expected: header.arch_digest,
                found: digest,
            });
        }
        let template = HcmsParams::<f32>::init(&header.arch, 0)?;
        let network = Network::new(header.arch.clone(), r.params(&template)?)?;
        let state = match header.resume {
            None => None,
            Some(h) => {
                let latest = Network::new(header.arch.clone(), r.params(&template)?)?;
                let best = match h.best {
                    Some((epoch, score)) => Some((epoch, score, r.params(&template)?)),
                    None => None,
                };
                let first = r.moments(&template)?;
                let second = r.moments(&template)?;
                Some(TrainState {
                    network: latest,
                    adam: Adam {
                        config: h.adam,
                        step: h.adam_step,
                        first,
                        second,
                    },
                    epoch: h.next_epoch,
                    best,
                })
            }
        };
        if !r.bytes.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", r.bytes.len())));
        }
        Ok(Checkpoint {
            config_digest: header.config_digest,
            seed: header.seed,
            selected_epoch: header.selected_epoch,
            network,
            state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the stored network has exactly the layout `arch`.
    pub fn expect_architecture(&self, arch: &Architecture) -> Result<()> {
        let expected = architecture_digest(arch);
        let found = self.arch_digest();
        if expected != found {
            return Err(Error::DigestMismatch { expected, found });
        }
        Ok(())
    }

    /// Fails unless the checkpoint was produced by the config with `digest`.
    pub fn expect_config(&self, digest: &str) -> Result<()> {
        if self.config_digest != digest {
            return Err(Error::DigestMismatch {
                expected: digest.to_string(),
                found: self.config_digest.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DimsPreset;

    fn arch() -> Architecture {
        Architecture::from_preset(DimsPreset::Desk, [4, 5, 6], 3)
    }

    fn sample(with_state: bool, with_best: bool) -> Checkpoint {
        let network = Network::<f32>::init(arch(), 3).unwrap();
        let state = with_state.then(|| {
            let latest = Network::<f32>::init(arch(), 4).unwrap();
            let mut adam = Adam::new(AdamConfig::default(), &latest.params);
            adam.step = 17;
            adam.first[0][0] = 0.25;
            adam.second[3][1] = 1e-9;
            TrainState {
                network: latest,
                adam,
                epoch: 5,
                best: with_best.then(|| (2, (0.5, 0.75), network.params.clone())),
            }
        });
        Checkpoint {
            config_digest: "abc".into(),
            seed: 9,
            selected_epoch: 2,
            network,
            state,
        }
    }

    #[test]
    fn round_trips() {
        for (s, b) in [(false, false), (true, false), (true, true)] {
            let c = sample(s, b);
            assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample(true, true).to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(b"nonsense"), Err(Error::Format(_))));
    }

    #[test]
    fn digests_guard_loading() {
        let c = sample(false, false);
        assert!(c.expect_architecture(&arch()).is_ok());
        let other = Architecture::from_preset(DimsPreset::Paper, [4, 5, 6], 3);
        assert!(matches!(
            c.expect_architecture(&other),
            Err(Error::DigestMismatch { .. })
        ));
        assert!(c.expect_config("abc").is_ok());
        assert!(matches!(c.expect_config("abd"), Err(Error::DigestMismatch { .. })));
    }
}
