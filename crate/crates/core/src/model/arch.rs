use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Appearance,
    Motion,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Appearance, Modality::Motion];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Appearance => "appearance",
            Modality::Motion => "motion",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Audio => 'A',
            Modality::Appearance => 'I',
            Modality::Motion => 'M',
        }
    }
}

/// Assignment of modalities to tiers: `tiers[0]` is always computed,
/// `tiers[1]` sits behind the middle gate, `tiers[2]` behind the top gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalityOrder {
    tiers: [Modality; 3],
}

impl ModalityOrder {
    /// Audio → appearance → motion.
    pub const BASELINE: ModalityOrder = ModalityOrder {
        tiers: [Modality::Audio, Modality::Appearance, Modality::Motion],
    };

    pub fn new(tiers: [Modality; 3]) -> Result<Self, Error> {
        let mut seen = [false; 3];
        for m in tiers {
            if std::mem::replace(&mut seen[m.index()], true) {
                return Err(Error::Config(format!("{tiers:?} is not a permutation")));
            }
        }
        Ok(ModalityOrder { tiers })
    }

    pub fn tiers(&self) -> [Modality; 3] {
        self.tiers
    }

    pub fn tier(&self, k: usize) -> Modality {
        self.tiers[k]
    }

    /// All six permutations, baseline first.
    pub fn all() -> Vec<ModalityOrder> {
        use Modality::*;
        [
            [Audio, Appearance, Motion],
            [Audio, Motion, Appearance],
            [Appearance, Audio, Motion],
            [Appearance, Motion, Audio],
            [Motion, Audio, Appearance],
            [Motion, Appearance, Audio],
        ]
        .into_iter()
        .map(|tiers| ModalityOrder { tiers })
        .collect()
    }
}

impl Default for ModalityOrder {
    fn default() -> Self {
        Self::BASELINE
    }
}

impl fmt::Display for ModalityOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.tiers;
        write!(f, "{}{}{}", a.letter(), b.letter(), c.letter())
    }
}

impl FromStr for ModalityOrder {
    type Err = Error;

    /// Parses strings like `"AIM"` or `"A-I-M"`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let letters: Vec<char> = s.chars().filter(|c| c.is_ascii_alphabetic()).collect();
        if letters.len() != 3 {
            return Err(Error::Config(format!(
                "modality order {s:?} must name three modalities"
            )));
        }
        let mut tiers = [Modality::Audio; 3];
        for (slot, c) in tiers.iter_mut().zip(letters) {
            *slot = match c.to_ascii_uppercase() {
                'A' => Modality::Audio,
                'I' => Modality::Appearance,
                'M' => Modality::Motion,
                other => return Err(Error::Config(format!("unknown modality letter {other:?}"))),
            };
        }
        ModalityOrder::new(tiers)
    }
}

impl TryFrom<String> for ModalityOrder {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<ModalityOrder> for String {
    fn from(o: ModalityOrder) -> String {
        o.to_string()
    }
}

/// Named layer-size presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimsPreset {
    /// Projections 1024→512, 1536→1024, 2304→2048; hidden 128/512/2048.
    Paper,
    /// Projections to 16/32/64; hidden 16/32/64.
    Desk,
}

impl DimsPreset {
    /// Projection output size per modality (audio, appearance, motion).
    pub fn projection_dims(self) -> [usize; 3] {
        match self {
            DimsPreset::Paper => [512, 1024, 2048],
            DimsPreset::Desk => [16, 32, 64],
        }
    }

    /// Hidden units per tier.
    pub fn hidden_dims(self) -> [usize; 3] {
        match self {
            DimsPreset::Paper => [128, 512, 2048],
            DimsPreset::Desk => [16, 32, 64],
        }
    }

    /// Backbone feature sizes the preset was designed for.
    pub fn feature_dims(self) -> [usize; 3] {
        match self {
            DimsPreset::Paper => [1024, 1536, 2304],
            DimsPreset::Desk => [16, 24, 32],
        }
    }
}

/// Every size of the network. Per-modality arrays are indexed by
/// [`Modality::index`], per-tier arrays by tier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub order: ModalityOrder,
    pub feature_dims: [usize; 3],
    pub projection_dims: [usize; 3],
    pub hidden: [usize; 3],
    pub classes: usize,
    /// Also copy the lower tier's cell into the prefix of a skipped tier.
    #[serde(default)]
    pub fuse_cell: bool,
}

impl Architecture {
    pub fn from_preset(preset: DimsPreset, feature_dims: [usize; 3], classes: usize) -> Self {
        Architecture {
            order: ModalityOrder::BASELINE,
            feature_dims,
            projection_dims: preset.projection_dims(),
            hidden: preset.hidden_dims(),
            classes,
            fuse_cell: false,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let dims = self
            .feature_dims
            .iter()
            .chain(&self.projection_dims)
            .chain(&self.hidden);
        if dims.into_iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero-sized layer in {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    /// Projected feature size of the modality in tier `k`.
    pub fn tier_projection(&self, k: usize) -> usize {
        self.projection_dims[self.order.tier(k).index()]
    }

    /// LSTM input of tier `k`: the projected features of tiers `0..=k`.
    pub fn lstm_input(&self, k: usize) -> usize {
        (0..=k).map(|j| self.tier_projection(j)).sum()
    }

    /// Context of the gate in front of tier `k` (1 or 2): projected features
    /// of the tiers below plus the gated tier's previous `h` and `c`.
    pub fn gate_context(&self, k: usize) -> usize {
        assert!(k == 1 || k == 2, "only tiers 1 and 2 are gated");
        (0..k).map(|j| self.tier_projection(j)).sum::<usize>() + 2 * self.hidden[k]
    }

    /// Width of the hidden prefix a skipped tier `k` inherits from tier `k-1`.
    pub fn fused_prefix(&self, k: usize) -> usize {
        self.hidden[k - 1].min(self.hidden[k])
    }
}

/// Rewires `arch` for a new tier assignment; every derived size follows.
pub fn set_modality_order(arch: &Architecture, order: ModalityOrder) -> Architecture {
    Architecture { order, ..arch.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_parsing() {
        assert_eq!("AIM".parse::<ModalityOrder>().unwrap(), ModalityOrder::BASELINE);
        assert_eq!("M-I-A".parse::<ModalityOrder>().unwrap().tier(0), Modality::Motion);
        assert!("AAM".parse::<ModalityOrder>().is_err());
        assert!("AI".parse::<ModalityOrder>().is_err());
        assert_eq!(ModalityOrder::all().len(), 6);
    }

    #[test]
    fn baseline_wiring() {
        let arch = Architecture::from_preset(DimsPreset::Paper, [1024, 1536, 2304], 200);
        assert_eq!(arch.lstm_input(0), 512);
        assert_eq!(arch.lstm_input(1), 512 + 1024);
        assert_eq!(arch.lstm_input(2), 512 + 1024 + 2048);
        assert_eq!(arch.gate_context(1), 512 + 2 * 512);
        assert_eq!(arch.gate_context(2), 512 + 1024 + 2 * 2048);
        assert_eq!(arch.fused_prefix(1), 128);
        assert_eq!(arch.fused_prefix(2), 512);
    }

    #[test]
    fn reordered_wiring() {
        let arch = Architecture::from_preset(DimsPreset::Desk, [16, 24, 32], 12);
        let mia = set_modality_order(&arch, "MIA".parse().unwrap());
        assert_eq!(mia.tier_projection(0), 64);
        assert_eq!(mia.lstm_input(1), 64 + 32);
        assert_eq!(mia.gate_context(2), 64 + 32 + 2 * 64);
        assert_eq!(mia.hidden, arch.hidden);
    }
}
