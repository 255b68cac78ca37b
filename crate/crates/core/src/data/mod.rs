//! Feature-sequence datasets: the on-disk format and the synthetic generator.

mod format;
mod sequence;
mod synthetic;

pub use format::{read_dataset, write_dataset, DatasetHeader, FORMAT_VERSION, SENTINEL};
pub use sequence::FeatureSequence;
pub use synthetic::{generate_synthetic, ClassGroup, Split, SyntheticSpec, SyntheticSplits};

/// Header plus videos.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub videos: Vec<FeatureSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Videos per label.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.header.classes];
        for v in &self.videos {
            if v.label < counts.len() {
                counts[v.label] += 1;
            }
        }
        counts
    }

    /// Copy keeping only the first `n` videos.
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            header: self.header.clone(),
            videos: self.videos.iter().take(n).cloned().collect(),
        }
    }
}
