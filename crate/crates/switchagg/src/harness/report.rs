//! Experiment results: the full structured record plus line/table export.

use serde::Serialize;

use crate::engines::StageTotals;

use super::ExperimentConfig;

/// One port's byte and packet counts.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PortRow {
    pub node: u16,
    pub port: u16,
    pub in_bytes: u64,
    pub out_bytes: u64,
    pub in_packets: u64,
    pub out_packets: u64,
}

/// One front-end engine's counters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FpeRow {
    pub switch: u16,
    pub group: usize,
    pub lookups: u64,
    pub hits: u64,
    pub evictions: u64,
    pub fifo_writes: u64,
    pub fifo_full_events: u64,
    pub fifo_full_ratio: f64,
}

/// One switch's back-end engine counters.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BpeRow {
    pub switch: u16,
    pub stores: u64,
    pub emits: u64,
}

/// Everything one run produced.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Pairs (and their encoded bytes) the mappers put on the wire.
    pub total_pairs_sent: u64,
    pub total_pair_bytes_sent: u64,
    /// What survived to the reducer.
    pub reducer_pairs_received: u64,
    pub reducer_pair_bytes_received: u64,
    pub reducer_wire_bytes_received: u64,
    pub distinct_keys_at_reducer: u64,
    /// 1 − reducer pair bytes / mapper pair bytes.
    pub reduction_ratio: f64,
    /// Reducer fold equals the reference fold of every generated pair.
    pub oracle_match: bool,
    pub simulated_completion_ns: u64,
    pub master_ack_ns: Option<u64>,
    pub launch_timeouts: u64,
    pub stray_acks: u64,
    pub decode_errors: u64,
    pub dropped_packets: u64,
    pub mixed_op_rejects: u64,
    pub unconfigured_agg_packets: u64,
    pub flush_count: u64,
    /// Largest queue-full ratio over every front-end engine in the run.
    pub worst_fifo_full_ratio: f64,
    pub stage_cycle_totals: StageTotals,
    pub ports: Vec<PortRow>,
    pub fpe_counters: Vec<FpeRow>,
    pub bpe_counters: Vec<BpeRow>,
}

impl ExperimentReport {
    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "mode={} pairs={} reduction={:.4} fifo_full={:.5} completion_ns={} oracle={}",
            self.config.mode.name(),
            self.total_pairs_sent,
            self.reduction_ratio,
            self.worst_fifo_full_ratio,
            self.simulated_completion_ns,
            if self.oracle_match { "ok" } else { "MISMATCH" },
        )
    }
}

/// Serializes reports as one JSON record per line.
pub fn to_jsonl(reports: &[ExperimentReport]) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Flat table of the sweep axes: workload shape and scale against
/// reduction ratio, queue pressure, and completion time.
pub fn to_csv(reports: &[ExperimentReport]) -> Result<String, Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "mode",
        "distribution",
        "key_variety",
        "timing",
        "total_pairs",
        "total_pair_bytes",
        "reducer_pair_bytes",
        "reduction_ratio",
        "worst_fifo_full_ratio",
        "simulated_completion_ns",
        "oracle_match",
    ])?;
    for r in reports {
        let (dist, variety) = match &r.config.workload {
            Some(wl) => (wl.distribution_name(), wl.key_variety.to_string()),
            None => ("external".to_string(), String::new()),
        };
        w.write_record([
            r.config.seed.to_string(),
            r.config.mode.name().to_string(),
            dist,
            variety,
            r.config.timing.to_string(),
            r.total_pairs_sent.to_string(),
            r.total_pair_bytes_sent.to_string(),
            r.reducer_pair_bytes_received.to_string(),
            format!("{:.6}", r.reduction_ratio),
            format!("{:.6}", r.worst_fifo_full_ratio),
            r.simulated_completion_ns.to_string(),
            r.oracle_match.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
