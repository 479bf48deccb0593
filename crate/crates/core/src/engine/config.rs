use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::CostModel;
use crate::nn::{AdamConfig, ModelConfig};

/// Consecutive layer ranges, one per pipeline stage. Layers are 1-based;
/// stage 0 also owns the input projection and the last stage the head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAssignment {
    ranges: Vec<(usize, usize)>,
}

impl StageAssignment {
    /// Explicit inclusive ranges; they must tile `1..=num_layers` in order.
    pub fn new(ranges: Vec<(usize, usize)>, num_layers: usize) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        let mut next = 1;
        for &(lo, hi) in &ranges {
            if lo != next || hi < lo {
                return Err(Error::Config(format!(
                    "stage ranges must be consecutive and non-empty, got {ranges:?}"
                )));
            }
            next = hi + 1;
        }
        if next != num_layers + 1 {
            return Err(Error::Config(format!("stage ranges {ranges:?} do not cover layers 1..={num_layers}")));
        }
        Ok(Self { ranges })
    }

    /// Splits `num_layers` as evenly as possible; earlier stages take the
    /// remainder.
    pub fn even(num_layers: usize, num_stages: usize) -> Result<Self> {
        if num_stages == 0 {
            return Err(Error::Config("number of stages must be positive".into()));
        }
        if num_layers < num_stages {
            return Err(Error::Config(format!(
                "{num_stages} stages need at least as many layers, got {num_layers}"
            )));
        }
        let base = num_layers / num_stages;
        let extra = num_layers % num_stages;
        let mut lo = 1;
        let ranges = (0..num_stages)
            .map(|s| {
                let len = base + usize::from(s < extra);
                let r = (lo, lo + len - 1);
                lo += len;
                r
            })
            .collect();
        Self::new(ranges, num_layers)
    }

    pub fn num_stages(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_layers(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.1)
    }

    /// Inclusive layer range of `stage`.
    pub fn range(&self, stage: usize) -> (usize, usize) {
        self.ranges[stage]
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn stage_of_layer(&self, layer: usize) -> Option<usize> {
        self.ranges.iter().position(|&(lo, hi)| (lo..=hi).contains(&layer))
    }
}

/// The three staleness techniques plus the staleness-free oracle switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessConfig {
    /// Visit chunks in a fresh random order every epoch.
    pub shuffle_chunks: bool,
    /// Historical snapshots are refreshed every `fix_alpha` epochs; epoch
    /// `t` reads version `fix_alpha·⌊(t−1)/fix_alpha⌋`.
    pub fix_alpha: u64,
    /// Use stored gradients, instead of zeros, for neighbors whose
    /// gradient is not produced yet. Off by default; exists for ablation.
    pub historical_gradients: bool,
    /// Wait for true current-epoch dependencies; no staleness at all.
    pub synchronous_mode: bool,
}

impl Default for StalenessConfig {
    fn default() -> Self {
        Self {
            shuffle_chunks: true,
            fix_alpha: 2,
            historical_gradients: false,
            synchronous_mode: false,
        }
    }
}

impl StalenessConfig {
    pub fn synchronous() -> Self {
        Self {
            synchronous_mode: true,
            shuffle_chunks: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fix_alpha == 0 {
            return Err(Error::Config("fix_alpha must be at least 1".into()));
        }
        Ok(())
    }

    /// Snapshot version read during 1-based epoch `t`.
    pub fn snapshot_version(&self, t: u64) -> u64 {
        self.fix_alpha * ((t - 1) / self.fix_alpha)
    }

    /// Whether the snapshot is refreshed at the end of 1-based epoch `t`.
    pub fn refresh_after(&self, t: u64) -> bool {
        t % self.fix_alpha == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// All workers interleaved on one thread in a fixed round-robin order.
    Deterministic,
    /// One thread per worker with blocking receives.
    Concurrent,
}

/// Settings shared by every trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub exec: ExecMode,
    pub cost: CostModel,
    pub record_trace: bool,
    /// Evaluate validation and test accuracy every this many epochs (and
    /// after the last); 0 evaluates only after the last epoch.
    pub eval_every: usize,
    /// Watchdog for blocking receives in concurrent mode, in seconds.
    pub watchdog_secs: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, epochs: usize, seed: u64) -> Self {
        Self {
            model,
            epochs,
            seed,
            optimizer: AdamConfig::default(),
            exec: ExecMode::Deterministic,
            cost: CostModel::default(),
            record_trace: false,
            eval_every: 1,
            watchdog_secs: 60,
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.optimizer.lr = lr;
        self
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn should_eval(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.eval_every > 0 && (epoch + 1) % self.eval_every == 0)
    }

    /// Seed of the dropout masks, kept apart from parameter init.
    pub fn dropout_seed(&self) -> u64 {
        self.seed ^ 0xd209_0u64.rotate_left(40)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split() {
        let a = StageAssignment::even(8, 3).unwrap();
        assert_eq!(a.ranges(), &[(1, 3), (4, 6), (7, 8)]);
        assert_eq!(a.stage_of_layer(6), Some(1));
        assert!(StageAssignment::even(2, 3).is_err());
    }

    #[test]
    fn explicit_ranges_must_tile() {
        assert!(StageAssignment::new(vec![(1, 2), (3, 4)], 4).is_ok());
        assert!(StageAssignment::new(vec![(1, 2), (4, 4)], 4).is_err());
        assert!(StageAssignment::new(vec![(1, 2)], 4).is_err());
    }

    #[test]
    fn snapshot_versions() {
        let s = StalenessConfig {
            fix_alpha: 3,
            ..StalenessConfig::default()
        };
        let v: Vec<u64> = (1..=7).map(|t| s.snapshot_version(t)).collect();
        assert_eq!(v, [0, 0, 0, 3, 3, 3, 6]);
        assert!(s.refresh_after(3) && !s.refresh_after(4));
        assert!(StalenessConfig {
            fix_alpha: 0,
            ..s
        }
        .validate()
        .is_err());
    }
}
