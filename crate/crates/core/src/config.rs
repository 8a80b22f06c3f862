//! Run configuration shared by the encoder, the alignment solver and the
//! pipeline driver.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the top-K neighbour count is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborCount {
    /// Pick K in `1..=max` by minimising the top-K correlated loss.
    Auto { max: usize },
    Fixed(usize),
}

impl Default for NeighborCount {
    fn default() -> Self {
        NeighborCount::Auto { max: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance of the kernel inputs.
    Median,
    Fixed(f64),
}

/// Balance between marginal and class-conditional MMD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuSetting {
    Auto,
    Fixed(f64),
}

/// Loss terms that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Adversarial,
    Topk,
    Alignment,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adversarial" | "A" => Ok(Component::Adversarial),
            "topk" | "K" => Ok(Component::Topk),
            "alignment" | "DA" => Ok(Component::Alignment),
            other => Err(Error::invalid(format!("unknown component `{other}`"))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Adversarial => "adversarial",
            Component::Topk => "topk",
            Component::Alignment => "alignment",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: NeighborCount,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Gradient-reversal weight τ on the adversarial term.
    pub adaptation_factor: f64,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub alignment_rounds: usize,
    pub laplacian_neighbors: usize,
    pub kernel_bandwidth: Bandwidth,
    pub mu: MuSetting,
    pub seed: u64,
    pub normalize_features: bool,
    pub encoder_widths: [usize; 3],
    pub dropout: f64,
    pub disabled: BTreeSet<Component>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: NeighborCount::default(),
            epochs: 1000,
            batch_size: 32,
            learning_rate: 0.001,
            adaptation_factor: 0.31,
            eta: 0.1,
            lambda: 10.0,
            rho: 10.0,
            alignment_rounds: 10,
            laplacian_neighbors: 10,
            kernel_bandwidth: Bandwidth::Median,
            mu: MuSetting::Auto,
            seed: 0,
            normalize_features: false,
            encoder_widths: [512, 128, 64],
            dropout: 0.5,
            disabled: BTreeSet::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("rho", self.rho),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.adaptation_factor.is_finite() && self.adaptation_factor >= 0.0) {
            return Err(Error::invalid("adaptation_factor must be non-negative"));
        }
        if self.adaptation_factor == 0.0 && !self.disabled.contains(&Component::Adversarial) {
            return Err(Error::invalid(
                "adaptation_factor is 0; disable the adversarial component instead",
            ));
        }
        match self.k {
            NeighborCount::Fixed(0) | NeighborCount::Auto { max: 0 } => {
                return Err(Error::invalid("k must be at least 1"))
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.laplacian_neighbors == 0 {
            return Err(Error::invalid("laplacian_neighbors must be at least 1"));
        }
        if let Bandwidth::Fixed(b) = self.kernel_bandwidth {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::invalid(format!("kernel bandwidth must be positive, got {b}")));
            }
        }
        if let MuSetting::Fixed(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::invalid(format!("mu must lie in [0, 1], got {mu}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::invalid("encoder widths must be positive"));
        }
        Ok(())
    }

    pub fn is_enabled(&self, c: Component) -> bool {
        !self.disabled.contains(&c)
    }

    /// Effective gradient-reversal weight (zero when the adversarial term is off).
    pub fn effective_tau(&self) -> f64 {
        if self.is_enabled(Component::Adversarial) {
            self.adaptation_factor
        } else {
            0.0
        }
    }
}

/// Returns `config` with the named loss terms switched off.
///
/// Disabling `adversarial` zeroes τ, `topk` skips K selection and relabelling,
/// `alignment` skips the kernel alignment rounds.
pub fn ablate(config: &PipelineConfig, disable: &[Component]) -> PipelineConfig {
    let mut out = config.clone();
    for &c in disable {
        out.disabled.insert(c);
        if c == Component::Adversarial {
            out.adaptation_factor = 0.0;
        }
    }
    out
}
