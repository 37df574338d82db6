//! The full approximation pipeline.
//!
//! Phases run in order: diameter bound on rank 0 (broadcast to all ranks),
//! the sample budget `omega`, parallel calibration followed by a blocking
//! reduction, failure-probability allocation at rank 0, and finally one of
//! the adaptive drivers:
//!
//! * [`Algorithm::RankOnly`]: one sampling thread per rank, local frames
//!   snapshotted and reduced with a non-blocking reduction while sampling
//!   continues.
//! * [`Algorithm::Epoch`]: `T` threads per rank coordinated by an
//!   [`EpochClock`](crate::epoch::EpochClock); thread 0 aggregates each
//!   closed epoch over the node-local communicator and, on node leaders, over
//!   the global communicator.
//!
//! Rank 0 owns the aggregated state and evaluates the stopping rule.

mod driver;
pub mod topology;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{CommError, SimCluster, SimNetConfig, WorkerId};
use crate::graph::{Graph, GraphError};
use crate::sampler::SamplerError;
use crate::stopping::{AllocatorKind, BoundKind};

pub use driver::{run_rank, RankOutcome, SkewMonitor};
pub use topology::{hierarchical_topology, Topology};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("worker thread panicked: {0}")]
    Panicked(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Ranks only, one thread each.
    RankOnly,
    /// Epoch-based, `threads` per rank.
    #[default]
    Epoch,
}

/// How node leaders aggregate over the global communicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReduceMode {
    /// Non-blocking reduction polled while sampling.
    Ireduce,
    /// Non-blocking barrier polled while sampling, then a blocking reduction.
    #[default]
    IbarrierReduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eps: f64,
    pub delta: f64,
    pub ranks: usize,
    pub threads: usize,
    pub seed: u64,
    pub bound: BoundKind,
    pub allocator: AllocatorKind,
    pub epoch_base: f64,
    pub epoch_exponent: f64,
    pub algorithm: Algorithm,
    pub reduce_mode: ReduceMode,
    /// Node of each rank. `None` puts every rank on its own node.
    pub topology: Option<Vec<usize>>,
    pub calibration_per_thread: u64,
    pub diameter_sweeps: usize,
    pub sim: SimNetConfig,
    pub omega_override: Option<u64>,
    pub epoch_length_override: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eps: 0.001,
            delta: 0.1,
            ranks: 1,
            threads: 1,
            seed: 0,
            bound: BoundKind::Hoeffding,
            allocator: AllocatorKind::Uniform,
            epoch_base: 1000.0,
            epoch_exponent: 1.33,
            algorithm: Algorithm::Epoch,
            reduce_mode: ReduceMode::IbarrierReduce,
            topology: None,
            calibration_per_thread: 100,
            diameter_sweeps: 4,
            sim: SimNetConfig::default(),
            omega_override: None,
            epoch_length_override: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let err = |m: String| Err(EngineError::Config(m));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return err(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return err(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.ranks == 0 || self.threads == 0 {
            return err("ranks and threads must be at least 1".into());
        }
        if self.ranks >= 1 << 24 || self.threads >= 1 << 24 {
            return err("ranks and threads must be below 2^24".into());
        }
        if self.algorithm == Algorithm::RankOnly && self.threads != 1 {
            return err(format!(
                "the rank-only driver runs one thread per rank, got {}",
                self.threads
            ));
        }
        if !(self.epoch_base > 0.0 && self.epoch_base.is_finite()) {
            return err(format!("epoch_base must be positive, got {}", self.epoch_base));
        }
        if !(self.epoch_exponent >= 0.0 && self.epoch_exponent.is_finite()) {
            return err(format!(
                "epoch_exponent must be non-negative, got {}",
                self.epoch_exponent
            ));
        }
        if let Some(map) = &self.topology {
            if map.len() != self.ranks {
                return err(format!("topology maps {} ranks, expected {}", map.len(), self.ranks));
            }
        }
        if self.omega_override == Some(0) || self.epoch_length_override == Some(0) {
            return err("overrides must be positive".into());
        }
        if self.diameter_sweeps == 0 {
            return err("diameter_sweeps must be at least 1".into());
        }
        self.sim.validate().map_err(EngineError::Config)
    }

    pub fn epoch_length(&self) -> u64 {
        self.epoch_length_override
            .unwrap_or_else(|| epoch_length(self.ranks, self.threads, self.epoch_base, self.epoch_exponent))
    }

    /// Node of `rank` under the configured topology.
    pub fn node_of(&self, rank: usize) -> usize {
        self.topology.as_ref().map_or(rank, |m| m[rank])
    }
}

/// Samples per epoch taken by thread 0: `max(1, round(base / (P T)^exponent))`.
pub fn epoch_length(ranks: usize, threads: usize, base: f64, exponent: f64) -> u64 {
    let pt = (ranks * threads) as f64;
    assert!(pt >= 1.0);
    ((base / pt.powf(exponent)).round() as u64).max(1)
}

/// Final estimate, held by rank 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResult {
    /// `counts[v] / tau`.
    pub scores: Vec<f64>,
    pub counts: Vec<u64>,
    pub tau: u64,
    pub original_ids: Vec<u64>,
}

impl ApproxResult {
    pub fn from_counts(tau: u64, counts: Vec<u64>, original_ids: Vec<u64>) -> Self {
        assert!(tau > 0);
        let scores = counts.iter().map(|&c| c as f64 / tau as f64).collect();
        ApproxResult {
            scores,
            counts,
            tau,
            original_ids,
        }
    }

    pub fn max_abs_diff(&self, exact: &[f64]) -> f64 {
        assert_eq!(self.scores.len(), exact.len());
        self.scores
            .iter()
            .zip(exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Run statistics as seen by rank 0. All durations are in seconds of the
/// pacer clock (virtual time in lockstep simulation).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub epochs: u64,
    /// Every sample taken: calibration plus adaptive, discarded included.
    pub samples: u64,
    /// Samples in the final aggregated state.
    pub tau: u64,
    pub calibration_samples: u64,
    pub omega: u64,
    pub epoch_length: u64,
    pub vertex_diameter_bound: u64,
    /// Time from initiation to completion of the global non-blocking
    /// collective of each epoch.
    pub barrier_s: f64,
    pub comm_mib_per_epoch: f64,
    pub diameter_s: f64,
    pub calibration_s: f64,
    pub adaptive_s: f64,
    pub transition_s: f64,
    pub reduce_s: f64,
    pub check_s: f64,
    pub total_s: f64,
    /// Adaptive samples recorded by all threads of all ranks.
    pub applied: u64,
    /// Adaptive samples recorded but never aggregated.
    pub discarded: u64,
    pub stamp_violations: u64,
    pub skew_violations: u64,
    pub ranks: usize,
    pub threads: usize,
}

impl RunStats {
    /// Adaptive samples per second of adaptive phase.
    pub fn adaptive_rate(&self) -> f64 {
        if self.adaptive_s > 0.0 {
            self.applied as f64 / self.adaptive_s
        } else {
            f64::INFINITY
        }
    }
}

/// Runs the pipeline on a simulated cluster of `cfg.ranks` ranks.
pub fn run_pipeline(g: &Graph, cfg: &RunConfig) -> Result<(ApproxResult, RunStats), EngineError> {
    cfg.validate()?;
    if g.n() < 2 {
        return Err(SamplerError::TooFewVertices(g.n()).into());
    }
    let pacer = cfg.sim.pacer();
    let comms = SimCluster::new(cfg.ranks, cfg.sim.clone(), pacer.clone());
    for r in 0..cfg.ranks {
        pacer.admit(WorkerId::new(r, 0));
    }
    let monitor = Arc::new(SkewMonitor::new(cfg.ranks));
    let outcomes: Vec<Result<RankOutcome, EngineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .enumerate()
            .map(|(r, comm)| {
                let pacer = pacer.clone();
                let monitor = Arc::clone(&monitor);
                s.spawn(move || {
                    let seat = pacer.seat(WorkerId::new(r, 0));
                    run_rank(g, cfg, comm, &seat, &monitor)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|p| Err(EngineError::Panicked(panic_message(p))))
            })
            .collect()
    });
    let mut root = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        if r == 0 {
            root = Some(o);
        }
    }
    let RankOutcome { result, mut stats } = root.expect("rank 0 outcome");
    stats.skew_violations += monitor.violations();
    Ok((result.expect("rank 0 holds the result"), stats))
}

pub(crate) fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_length_schedule() {
        assert_eq!(epoch_length(1, 1, 1000.0, 1.33), 1000);
        assert_eq!(epoch_length(2, 2, 1000.0, 1.33), 158);
        assert_eq!(epoch_length(16, 24, 1000.0, 1.33), 1);
        assert_eq!(epoch_length(3, 1, 1000.0, 0.0), 1000);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = [
            RunConfig {
                eps: 0.0,
                ..Default::default()
            },
            RunConfig {
                delta: 1.0,
                ..Default::default()
            },
            RunConfig {
                ranks: 0,
                ..Default::default()
            },
            RunConfig {
                algorithm: Algorithm::RankOnly,
                threads: 2,
                ..Default::default()
            },
            RunConfig {
                topology: Some(vec![0]),
                ranks: 2,
                ..Default::default()
            },
            RunConfig {
                epoch_base: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(EngineError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"eps": 0.05, "ranks": 2, "reduce_mode": "ireduce"}"#).unwrap();
        assert_eq!(cfg.eps, 0.05);
        assert_eq!(cfg.ranks, 2);
        assert_eq!(cfg.delta, 0.1);
        assert_eq!(cfg.reduce_mode, ReduceMode::Ireduce);
        // 1000 / 2^1.33 = 397.8
        assert_eq!(cfg.epoch_length(), 398);
    }
}
