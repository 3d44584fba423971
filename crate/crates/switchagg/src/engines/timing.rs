//! Cycle cost model for the switch pipeline.
//!
//! Each stage has a fixed latency in clock cycles; moving payload through a
//! stage additionally costs one cycle per datapath word. The defaults
//! describe a 200 MHz design (5 ns per cycle) with a 128-bit datapath
//! (16 bytes per cycle).

use serde::{Deserialize, Serialize};

/// Pipeline stages that are individually charged and accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Parse the frame header and pick the processing path.
    HeaderAnalyzer,
    /// Move one pair from the payload analyzer to its engine lane.
    Crossbar,
    /// Hash a key and probe the front-end bucket.
    FpeHash,
    /// Fold a value into a front-end slot (also charged for a fresh store).
    FpeAggregate,
    /// Push a displaced pair into the outbound queue.
    FpeForward,
    /// Fold one queued pair into a back-end region.
    BpeAggregate,
    /// Stream every back-end region out at end of task.
    BpeFlush,
}

pub const ALL_STAGES: [Stage; 7] = [
    Stage::HeaderAnalyzer,
    Stage::Crossbar,
    Stage::FpeHash,
    Stage::FpeAggregate,
    Stage::FpeForward,
    Stage::BpeAggregate,
    Stage::BpeFlush,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::HeaderAnalyzer => "header_analyzer",
            Stage::Crossbar => "crossbar",
            Stage::FpeHash => "fpe_hash",
            Stage::FpeAggregate => "fpe_aggregate",
            Stage::FpeForward => "fpe_forward",
            Stage::BpeAggregate => "bpe_aggregate",
            Stage::BpeFlush => "bpe_flush",
        }
    }
}

/// Per-stage cycle latencies plus clock and datapath geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingModel {
    pub header_analyzer_cycles: u64,
    pub crossbar_cycles: u64,
    pub fpe_hash_cycles: u64,
    pub fpe_aggregate_cycles: u64,
    pub fpe_forward_cycles: u64,
    pub bpe_aggregate_cycles: u64,
    pub bpe_flush_cycles: u64,
    /// Nanoseconds per clock cycle.
    pub clock_ns: u64,
    /// Datapath width: payload bytes moved per cycle.
    pub datapath_bytes_per_cycle: u64,
}

impl Default for TimingModel {
    fn default() -> TimingModel {
        TimingModel {
            header_analyzer_cycles: 3,
            crossbar_cycles: 2,
            fpe_hash_cycles: 10,
            fpe_aggregate_cycles: 18,
            fpe_forward_cycles: 5,
            bpe_aggregate_cycles: 33,
            bpe_flush_cycles: 31_250_000,
            clock_ns: 5,
            datapath_bytes_per_cycle: 16,
        }
    }
}

impl TimingModel {
    pub fn stage_cycles(&self, stage: Stage) -> u64 {
        match stage {
            Stage::HeaderAnalyzer => self.header_analyzer_cycles,
            Stage::Crossbar => self.crossbar_cycles,
            Stage::FpeHash => self.fpe_hash_cycles,
            Stage::FpeAggregate => self.fpe_aggregate_cycles,
            Stage::FpeForward => self.fpe_forward_cycles,
            Stage::BpeAggregate => self.bpe_aggregate_cycles,
            Stage::BpeFlush => self.bpe_flush_cycles,
        }
    }

    /// Cycles to move `bytes` of payload through the datapath.
    pub fn transfer_cycles(&self, bytes: usize) -> u64 {
        (bytes as u64).div_ceil(self.datapath_bytes_per_cycle)
    }

    /// Full charge for passing `payload_bytes` through one stage: the
    /// stage's fixed latency plus the transfer cycles.
    pub fn charge(&self, stage: Stage, payload_bytes: usize) -> u64 {
        self.stage_cycles(stage) + self.transfer_cycles(payload_bytes)
    }

    pub fn cycles_to_ns(&self, cycles: u64) -> u64 {
        cycles * self.clock_ns
    }
}

/// Running cycle totals per stage, for reports. Totals accumulate whether
/// or not the experiment advances simulated time, so a run's per-stage
/// work is always visible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageTotals {
    pub header_analyzer: u64,
    pub crossbar: u64,
    pub fpe_hash: u64,
    pub fpe_aggregate: u64,
    pub fpe_forward: u64,
    pub bpe_aggregate: u64,
    pub bpe_flush: u64,
}

impl StageTotals {
    pub fn add(&mut self, stage: Stage, cycles: u64) {
        match stage {
            Stage::HeaderAnalyzer => self.header_analyzer += cycles,
            Stage::Crossbar => self.crossbar += cycles,
            Stage::FpeHash => self.fpe_hash += cycles,
            Stage::FpeAggregate => self.fpe_aggregate += cycles,
            Stage::FpeForward => self.fpe_forward += cycles,
            Stage::BpeAggregate => self.bpe_aggregate += cycles,
            Stage::BpeFlush => self.bpe_flush += cycles,
        }
    }

    pub fn merge(&mut self, other: &StageTotals) {
        self.header_analyzer += other.header_analyzer;
        self.crossbar += other.crossbar;
        self.fpe_hash += other.fpe_hash;
        self.fpe_aggregate += other.fpe_aggregate;
        self.fpe_forward += other.fpe_forward;
        self.bpe_aggregate += other.bpe_aggregate;
        self.bpe_flush += other.bpe_flush;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stage_latencies() {
        let t = TimingModel::default();
        assert_eq!(t.stage_cycles(Stage::HeaderAnalyzer), 3);
        assert_eq!(t.stage_cycles(Stage::Crossbar), 2);
        assert_eq!(t.stage_cycles(Stage::FpeHash), 10);
        assert_eq!(t.stage_cycles(Stage::FpeAggregate), 18);
        assert_eq!(t.stage_cycles(Stage::FpeForward), 5);
        assert_eq!(t.stage_cycles(Stage::BpeAggregate), 33);
        assert_eq!(t.stage_cycles(Stage::BpeFlush), 31_250_000);
    }

    #[test]
    fn transfer_charges_by_datapath_word() {
        let t = TimingModel::default();
        assert_eq!(t.charge(Stage::FpeHash, 0), 10);
        assert_eq!(t.charge(Stage::FpeHash, 1), 11);
        assert_eq!(t.charge(Stage::FpeHash, 16), 11);
        assert_eq!(t.charge(Stage::FpeHash, 17), 12);
        assert_eq!(t.charge(Stage::FpeHash, 160), 20);
    }

    #[test]
    fn clock_converts_cycles_to_wall_time() {
        let t = TimingModel::default();
        // 200 MHz clock: the full back-end flush takes 156.25 ms.
        assert_eq!(t.cycles_to_ns(t.bpe_flush_cycles), 156_250_000);
        assert_eq!(t.cycles_to_ns(1), 5);
    }

    #[test]
    fn totals_accumulate_per_stage() {
        let mut totals = StageTotals::default();
        totals.add(Stage::Crossbar, 2);
        totals.add(Stage::Crossbar, 2);
        totals.add(Stage::BpeFlush, 31_250_000);
        assert_eq!(totals.crossbar, 4);
        assert_eq!(totals.bpe_flush, 31_250_000);
        assert_eq!(totals.fpe_hash, 0);
    }
}
