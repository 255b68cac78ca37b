//! Fixtures shared by the engine benchmarks.

use hcms_core::model::LossWeights;
use hcms_core::train_eval::TrainConfig;
use hcms_core::{generate_synthetic, Dataset, Network, Result, SyntheticSpec};

/// A small slice of the default synthetic set and a freshly initialised
/// desk-sized network that fits it.
pub struct Fixture {
    pub data: Dataset,
    pub network: Network<f32>,
    pub config: TrainConfig,
}

impl Fixture {
    pub fn new(videos_per_class: usize) -> Result<Self> {
        let spec = SyntheticSpec {
            train_per_class: videos_per_class,
            validation_per_class: 1,
            test_per_class: 1,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec)?.train;
        let config = TrainConfig {
            loss: LossWeights {
                gamma: [0.5, 0.3],
                lambda: 2.0,
            },
            ..TrainConfig::desk()
        };
        let network = Network::init(config.architecture(&data), config.seed)?;
        Ok(Fixture { data, network, config })
    }
}
