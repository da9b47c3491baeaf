//! Experiment plumbing: seeds, training, evaluation, comparison and the
//! command line.

pub mod cli;
mod eval;
mod stats;
mod train;

pub use eval::{
    evaluate, noise_sweep, read_eval_csv, run_chain, ChainOutcome, ChainRecord, EvalSetup, NoisePoint, RunSummary,
};
pub use stats::{permutation_test, permutation_test_sampled, EXACT_MAX_PAIRS};
pub use train::{region_subworld, train_hlp, train_llp, train_policy, CurvePoint, PolicyBundle, TrainConfig};

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::MctsConfig;
use crate::error::{Error, Result};
use crate::features::ObservationNoise;
use crate::hierarchy::TriggerMode;

/// SplitMix64 step; spreads consecutive indices over the seed space.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlannerKind {
    /// Trained two-level policy.
    Ours,
    Mcts(MctsConfig),
    Pmedian { alpha: f64 },
    Greedy,
    Static,
    Random,
}

impl PlannerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ours => "ours",
            Self::Mcts(_) => "mcts",
            Self::Pmedian { .. } => "pmedian",
            Self::Greedy => "greedy",
            Self::Static => "static",
            Self::Random => "random",
        }
    }

    /// Trigger the planner runs under unless overridden.
    pub fn default_trigger(&self) -> TriggerMode {
        match self {
            Self::Mcts(_) | Self::Pmedian { .. } | Self::Greedy => TriggerMode::Baseline,
            Self::Ours | Self::Static | Self::Random => TriggerMode::Ours,
        }
    }
}

/// Everything that identifies one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: PathBuf,
    pub planner: PlannerKind,
    pub seed: u64,
    pub n_train_chains: usize,
    pub n_eval_chains: usize,
    pub n_responders: Option<usize>,
    pub trigger: Option<TriggerMode>,
    pub noise: ObservationNoise,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn train_seeds(&self) -> Vec<u64> {
        (0..self.n_train_chains as u64).map(|i| derive_seed(self.seed, i)).collect()
    }

    /// Chain seeds following the training block, so the two never overlap.
    pub fn eval_seeds(&self) -> Vec<u64> {
        let start = self.n_train_chains as u64;
        (start..start + self.n_eval_chains as u64).map(|i| derive_seed(self.seed, i)).collect()
    }

    pub fn trigger(&self) -> TriggerMode {
        self.trigger.unwrap_or_else(|| self.planner.default_trigger())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_eval_chains == 0 {
            return Err(Error::Config("at least one evaluation chain is required".into()));
        }
        let train: HashSet<u64> = self.train_seeds().into_iter().collect();
        if self.eval_seeds().iter().any(|s| train.contains(s)) {
            return Err(Error::Config("training and evaluation chains overlap".into()));
        }
        if self.noise.sigma_rate < 0.0 || self.noise.sigma_time < 0.0 {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if let PlannerKind::Mcts(c) = &self.planner {
            c.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ExperimentSpec {
        ExperimentSpec {
            scenario: "s.json".into(),
            planner: PlannerKind::Greedy,
            seed: 7,
            n_train_chains: 50,
            n_eval_chains: 10,
            n_responders: None,
            trigger: None,
            noise: ObservationNoise::default(),
            output_dir: "out".into(),
        }
    }

    #[test]
    fn seed_blocks_are_disjoint() {
        let s = spec();
        s.validate().unwrap();
        let train: HashSet<u64> = s.train_seeds().into_iter().collect();
        assert_eq!(train.len(), 50);
        assert!(s.eval_seeds().iter().all(|e| !train.contains(e)));
        assert_eq!(s.trigger(), TriggerMode::Baseline);
    }

    #[test]
    fn spec_round_trips() {
        let mut s = spec();
        s.planner = PlannerKind::Mcts(MctsConfig::default());
        let back: ExperimentSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn empty_eval_rejected() {
        let mut s = spec();
        s.n_eval_chains = 0;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }
}
