//! Planted-signal benchmark: each class has a mean direction that appears only
//! in one modality, at a random subset of steps. Everything else is unit noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Modality;

use super::{Dataset, DatasetHeader, FeatureSequence, FORMAT_VERSION};

/// Which modality separates a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassGroup {
    Audio,
    Appearance,
    Motion,
}

impl ClassGroup {
    pub fn modality(self) -> Modality {
        match self {
            ClassGroup::Audio => Modality::Audio,
            ClassGroup::Appearance => Modality::Appearance,
            ClassGroup::Motion => Modality::Motion,
        }
    }

    pub fn name(self) -> &'static str {
        self.modality().name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Classes separable by audio, appearance, motion.
    pub group_sizes: [usize; 3],
    pub steps: usize,
    pub dims: [usize; 3],
    pub snr: f64,
    pub signal_fraction: f64,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub backbone_gflops: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            group_sizes: [4, 4, 4],
            steps: 16,
            dims: [16, 24, 32],
            snr: 4.0,
            signal_fraction: 0.5,
            train_per_class: 60,
            validation_per_class: 20,
            test_per_class: 20,
            seed: 7,
            backbone_gflops: crate::cost_ledger::BACKBONE_GFLOPS,
        }
    }
}

impl SyntheticSpec {
    pub fn classes(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn group_of(&self, label: usize) -> ClassGroup {
        if label < self.group_sizes[0] {
            ClassGroup::Audio
        } else if label < self.group_sizes[0] + self.group_sizes[1] {
            ClassGroup::Appearance
        } else {
            ClassGroup::Motion
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 classes, group sizes {:?}",
                self.group_sizes
            )));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidSpec(format!("degenerate dims {:?}", self.dims)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidSpec("zero steps".into()));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::InvalidSpec(format!("snr must be positive, got {}", self.snr)));
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "signal fraction must lie in (0, 1], got {}",
                self.signal_fraction
            )));
        }
        Ok(())
    }

    fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Validation => self.validation_per_class,
            Split::Test => self.test_per_class,
        }
    }

    /// Steps carrying the class signal in each video.
    pub fn signal_steps(&self) -> usize {
        ((self.signal_fraction * self.steps as f64).round() as usize).clamp(1, self.steps)
    }

    /// Unit mean direction of every class, in its group's modality.
    pub fn class_directions(&self) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.classes())
            .map(|c| {
                let d = self.dims[self.group_of(c).modality().index()];
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| (x / norm) as f32).collect()
            })
            .collect()
    }
}

/// The three splits produced by one spec.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl SyntheticSplits {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

fn make_split(spec: &SyntheticSpec, directions: &[Vec<f32>], split: Split) -> Result<Dataset> {
    let classes = spec.classes();
    let count = spec.per_class(split) * classes;
    let signal_steps = spec.signal_steps();
    let mut videos = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        // Independent stream per video so splits can grow without reshuffling.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(split.stream());
        rng.set_word_pos((i as u128) << 40);

        let mut streams: [Vec<f32>; 3] = Default::default();
        for m in Modality::ALL {
            let n = spec.steps * spec.dims[m.index()];
            streams[m.index()] = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        }
        let m = spec.group_of(label).modality().index();
        let d = spec.dims[m];
        let dir = &directions[label];
        for t in sample(&mut rng, spec.steps, signal_steps) {
            for (x, u) in streams[m][t * d..(t + 1) * d].iter_mut().zip(dir) {
                *x += (spec.snr as f32) * u;
            }
        }
        let id = (split.stream() << 32) | i as u64;
        videos.push(FeatureSequence::new(id, label, spec.dims, streams)?);
    }
    let class_groups = (0..classes).map(|c| spec.group_of(c).name().to_string()).collect();
    Ok(Dataset {
        header: DatasetHeader {
            version: FORMAT_VERSION,
            classes,
            dims: spec.dims,
            default_steps: spec.steps,
            videos: videos.len(),
            backbone_gflops: spec.backbone_gflops,
            class_groups,
            seed: Some(spec.seed),
            config_digest: None,
        },
        videos,
    })
}

/// Deterministic in `spec.seed`: ChaCha8 streams, no platform RNG.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    let directions = spec.class_directions();
    Ok(SyntheticSplits {
        train: make_split(spec, &directions, Split::Train)?,
        validation: make_split(spec, &directions, Split::Validation)?,
        test: make_split(spec, &directions, Split::Test)?,
    })
}
