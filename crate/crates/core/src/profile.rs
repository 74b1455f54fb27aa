//! Wall-clock accounting for the stages of a proposal.

use std::cell::Cell;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SourceGpTraining,
    ComparisonGpUpdate,
    ProposalOptimization,
    AcquisitionEvaluation,
    HorizonStep,
    FutureEi,
    CurrentEi,
    Selection,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::SourceGpTraining,
        Stage::ComparisonGpUpdate,
        Stage::ProposalOptimization,
        Stage::AcquisitionEvaluation,
        Stage::HorizonStep,
        Stage::FutureEi,
        Stage::CurrentEi,
        Stage::Selection,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::SourceGpTraining => "Source-task GP training",
            Stage::ComparisonGpUpdate => "Comparison GP update",
            Stage::ProposalOptimization => "Proposal optimization",
            Stage::AcquisitionEvaluation => "BayMOTH acquisition evaluation",
            Stage::HorizonStep => "Horizon-step simulation",
            Stage::FutureEi => "Future EI (inside horizon)",
            Stage::CurrentEi => "Current EI (outside horizon)",
            Stage::Selection => "Selection + NCC + optimizer orchestration",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Accumulated time and call counts per stage. Single-threaded.
#[derive(Debug, Default)]
pub struct Profiler {
    totals: [Cell<Duration>; 8],
    calls: [Cell<u64>; 8],
}

impl Profiler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: Stage, elapsed: Duration) {
        let i = stage.index();
        self.totals[i].set(self.totals[i].get() + elapsed);
        self.calls[i].set(self.calls[i].get() + 1);
    }

    pub fn total(&self, stage: Stage) -> Duration {
        self.totals[stage.index()].get()
    }

    pub fn calls(&self, stage: Stage) -> u64 {
        self.calls[stage.index()].get()
    }
}

/// Time `f` under `stage` when a profiler is attached.
#[inline]
pub fn timed<T>(profiler: Option<&Profiler>, stage: Stage, f: impl FnOnce() -> T) -> T {
    match profiler {
        Some(p) => {
            let start = Instant::now();
            let out = f();
            p.record(stage, start.elapsed());
            out
        }
        None => f(),
    }
}

/// One row of the stage table.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: Stage,
    pub calls: u64,
    pub total: Duration,
    /// Percent of proposal-optimization time; `None` for stages outside it.
    pub share: Option<f64>,
}

impl StageRow {
    pub fn avg(&self) -> Duration {
        if self.calls == 0 {
            Duration::ZERO
        } else {
            self.total / self.calls as u32
        }
    }
}

/// Stage table. Shares are fractions of total proposal time. Selection and
/// orchestration is everything in the proposal that is not acquisition
/// evaluation, so the two top-level shares partition the proposal.
pub fn stage_table(p: &Profiler) -> Vec<StageRow> {
    let proposal = p.total(Stage::ProposalOptimization).as_secs_f64();
    let share = |d: Duration| {
        if proposal > 0.0 {
            Some(100.0 * d.as_secs_f64() / proposal)
        } else {
            Some(0.0)
        }
    };
    let acquisition = p.total(Stage::AcquisitionEvaluation);
    let orchestration = p
        .total(Stage::ProposalOptimization)
        .saturating_sub(acquisition);
    Stage::ALL
        .iter()
        .map(|&stage| {
            let (total, share) = match stage {
                Stage::SourceGpTraining | Stage::ComparisonGpUpdate => (p.total(stage), None),
                Stage::Selection => (orchestration, share(orchestration)),
                _ => (p.total(stage), share(p.total(stage))),
            };
            StageRow {
                stage,
                calls: p.calls(stage),
                total,
                share,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_partition_proposal_time() {
        let p = Profiler::new();
        p.record(Stage::ProposalOptimization, Duration::from_millis(100));
        p.record(Stage::AcquisitionEvaluation, Duration::from_millis(90));
        p.record(Stage::Selection, Duration::from_millis(4));
        let rows = stage_table(&p);
        let get = |s: Stage| rows.iter().find(|r| r.stage == s).unwrap().share.unwrap();
        assert!((get(Stage::AcquisitionEvaluation) + get(Stage::Selection) - 100.0).abs() < 1e-9);
        assert_eq!(get(Stage::ProposalOptimization), 100.0);
        assert_eq!(rows.len(), 8);
    }

    #[test]
    fn timed_passes_through() {
        assert_eq!(timed(None, Stage::CurrentEi, || 3), 3);
        let p = Profiler::new();
        assert_eq!(timed(Some(&p), Stage::CurrentEi, || 4), 4);
        assert_eq!(p.calls(Stage::CurrentEi), 1);
    }
}
