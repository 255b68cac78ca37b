//! Run configuration: every numeric choice of a run lives here, serialized as
//! TOML. Artifacts are stamped with the SHA-256 digest of its canonical JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost_ledger::{CostModel, BACKBONE_GFLOPS};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::{Architecture, Clamp};
use crate::train_eval::{BudgetPolicy, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub backbone_gflops: [f64; 3],
    pub head_costs: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            backbone_gflops: BACKBONE_GFLOPS,
            head_costs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Gate overrides at evaluation time.
    pub clamp: [Clamp; 2],
    /// Ascending per-video GFLOPs budgets for `sweep`.
    pub budgets: Vec<f64>,
    pub budget_policy: BudgetPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            clamp: [Clamp::Free; 2],
            // From one audio step up to every tier on at 16 steps.
            budgets: vec![1.12, 10.0, 30.0, 70.0, 140.0, 280.0, 560.0, 1068.16],
            budget_policy: BudgetPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    pub output_dir: PathBuf,
    pub synthetic: SyntheticSpec,
    pub train: TrainConfig,
    pub cost: CostConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataPaths::default(),
            output_dir: PathBuf::from("out"),
            synthetic: SyntheticSpec::default(),
            train: TrainConfig::desk(),
            cost: CostConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize to JSON");
    hex::encode(Sha256::digest(&json))
}

/// Digest identifying a network layout; checkpoints are only loadable into
/// the architecture they were trained for.
pub fn architecture_digest(arch: &Architecture) -> String {
    digest_of(arch)
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl RunConfig {
    /// Parses a TOML document. Keys it omits keep the values of
    /// [`RunConfig::default`], at any nesting depth.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("default config serializes");
        overlay(&mut merged, user);
        let config: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_relative(base);
        }
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.data.train, &mut self.data.validation, &mut self.data.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.cost_model_for(None).validate()?;
        self.synthetic.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.eval.budgets.iter().any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::Config(format!("invalid budgets {:?}", self.eval.budgets)));
        }
        if self.eval.budgets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(format!(
                "budgets must be ascending: {:?}",
                self.eval.budgets
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    /// Ledger for `arch`, or backbone-only in baseline order without one.
    pub fn cost_model_for(&self, arch: Option<&Architecture>) -> CostModel {
        match arch {
            Some(a) => CostModel::for_architecture(self.cost.backbone_gflops, a, self.cost.head_costs),
            None => CostModel::backbone_only(self.cost.backbone_gflops),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::parse("[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.learning_rate, TrainConfig::desk().learning_rate);
        assert_ne!(c.digest(), RunConfig::default().digest());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("[train.loss]\ngamma = [1.5, 0.5]\n").is_err());
        assert!(RunConfig::parse("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::parse("bogus = 1\n").is_err());
        assert!(RunConfig::parse("[eval]\nbudgets = [5.0, 1.0]\n").is_err());
        assert!(RunConfig::parse("[cost]\nbackbone_gflops = [0.07, -1.0, 65.7]\n").is_err());
    }

    #[test]
    fn digest_is_hex_sha256() {
        let d = RunConfig::default().digest();
        assert_eq!(d.len(), 64);
        assert!(d.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
