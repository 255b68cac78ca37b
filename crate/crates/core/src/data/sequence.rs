use crate::error::{Error, Result};
use crate::model::Modality;

/// One video: `steps` index-aligned feature vectors per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub id: u64,
    pub label: usize,
    steps: usize,
    dims: [usize; 3],
    /// Row-major `[steps × dims[m]]` per modality.
    streams: [Vec<f32>; 3],
}

impl FeatureSequence {
    pub fn new(id: u64, label: usize, dims: [usize; 3], streams: [Vec<f32>; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("video {id}: zero feature dim in {dims:?}")));
        }
        let steps = streams[0].len() / dims[0];
        for m in Modality::ALL {
            let i = m.index();
            if streams[i].len() != steps * dims[i] || !streams[i].len().is_multiple_of(dims[i]) {
                return Err(Error::Dimension(format!(
                    "video {id}: {} stream has {} values, expected {steps}×{}",
                    m.name(),
                    streams[i].len(),
                    dims[i]
                )));
            }
        }
        Ok(FeatureSequence {
            id,
            label,
            steps,
            dims,
            streams,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn stream(&self, m: Modality) -> &[f32] {
        &self.streams[m.index()]
    }

    pub fn stream_mut(&mut self, m: Modality) -> &mut [f32] {
        &mut self.streams[m.index()]
    }

    pub fn feature(&self, m: Modality, t: usize) -> &[f32] {
        let d = self.dims[m.index()];
        &self.streams[m.index()][t * d..(t + 1) * d]
    }

    /// Keeps `count` uniformly spaced steps (the "views" of a video).
    pub fn subsample(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.steps {
            return Err(Error::Dimension(format!(
                "cannot take {count} views from {} steps",
                self.steps
            )));
        }
        let picks: Vec<usize> = (0..count).map(|k| k * self.steps / count).collect();
        let streams = Modality::ALL.map(|m| picks.iter().flat_map(|&t| self.feature(m, t).iter().copied()).collect());
        FeatureSequence::new(self.id, self.label, self.dims, streams)
    }
}
