//! End-to-end experiment driver.
//!
//! Assembles every piece into one deterministic run: a master launches
//! the task at a controller, the controller configures the switches on
//! the aggregation tree and collects their acknowledgements, the master
//! releases the mappers, pairs flow through the switch engines, and the
//! flush cascade delivers the folded remainder to the reducer.
//!
//! ```text
//!   master ──Launch──► controller
//!     ▲                    │ Configure ▼ / Ack ▲  (barrier)
//!     └──────Ack───────────┤
//!   mapper ─┐              ▼
//!   mapper ─┼──► [ switch engines ] ──► ... ──► reducer
//!   mapper ─┘      aggregate / flush              fold
//! ```
//!
//! Every run checks itself against an oracle: the reducer's final map
//! must equal a reference fold of every pair the mappers generated, for
//! any distribution, capacity, operator, and timing setting.

pub mod report;
mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::controller::{
    build_tree, BuiltTree, ControllerError, ControllerNode, FIRST_TREE_ID,
};
use crate::dataplane::{MemorySizing, SwitchState};
use crate::engines::{EngineConfig, StageTotals, TimingModel};
use crate::topology::{NodeId, NodeKind, Topology, TopologyError};
use crate::wire::{
    AggOp, KeyValuePair, WireError, AGG_FIXED_LEN, FRAME_HEADER_LEN, MAX_KEY_LEN, PAIR_META_LEN,
    VALUE_LEN,
};
use crate::workload::{Budget, KeyDistribution, Workload, WorkloadError, WorkloadSpec};

pub use report::ExperimentReport;
pub use sim::{LinkModel, PortTraffic};

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Io(String),
    Topology(TopologyError),
    Controller(ControllerError),
    Workload(WorkloadError),
    Wire(WireError),
    /// A shim call arrived before the launch barrier completed.
    NotLaunched,
    /// The event queue drained before the reducer saw its final marker.
    Stalled(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(msg) => write!(f, "bad experiment config: {msg}"),
            HarnessError::Io(msg) => write!(f, "io error: {msg}"),
            HarnessError::Topology(e) => write!(f, "topology error: {e}"),
            HarnessError::Controller(e) => write!(f, "controller error: {e}"),
            HarnessError::Workload(e) => write!(f, "workload error: {e}"),
            HarnessError::Wire(e) => write!(f, "wire error: {e}"),
            HarnessError::NotLaunched => {
                write!(f, "tree not launched: wait for the master acknowledgement")
            }
            HarnessError::Stalled(msg) => write!(f, "run stalled: {msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<TopologyError> for HarnessError {
    fn from(e: TopologyError) -> HarnessError {
        HarnessError::Topology(e)
    }
}
impl From<ControllerError> for HarnessError {
    fn from(e: ControllerError) -> HarnessError {
        HarnessError::Controller(e)
    }
}
impl From<WorkloadError> for HarnessError {
    fn from(e: WorkloadError) -> HarnessError {
        HarnessError::Workload(e)
    }
}
impl From<WireError> for HarnessError {
    fn from(e: WireError) -> HarnessError {
        HarnessError::Wire(e)
    }
}

/// Whether switches aggregate or merely forward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Aggregate,
    /// Pure forwarding: the comparison baseline.
    Baseline,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Aggregate => "aggregate",
            Mode::Baseline => "baseline",
        }
    }
}

/// Where the topology text comes from.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum TopologySource {
    File { file: String },
    Inline { inline: String },
}

impl TopologySource {
    pub fn load(&self) -> Result<Topology, HarnessError> {
        let text = match self {
            TopologySource::File { file } => std::fs::read_to_string(file)
                .map_err(|e| HarnessError::Io(format!("reading {file}: {e}")))?,
            TopologySource::Inline { inline } => inline.clone(),
        };
        Ok(Topology::parse(&text)?)
    }
}

/// Which node plays which part.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Roles {
    pub master: NodeId,
    pub controller: NodeId,
    pub reducer: NodeId,
    pub mappers: Vec<NodeId>,
}

fn default_len_range() -> (u8, u8) {
    (16, 64)
}
fn default_op() -> AggOp {
    AggOp::Sum
}

/// The workload portion of a config; seed and mapper count come from the
/// experiment itself so they cannot disagree.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WorkloadSection {
    pub budget: Budget,
    pub key_variety: u64,
    pub distribution: KeyDistribution,
    #[serde(default = "default_len_range")]
    pub key_len_range: (u8, u8),
    #[serde(default = "default_op")]
    pub op: AggOp,
}

impl WorkloadSection {
    pub fn to_spec(&self, seed: u64, mapper_count: u16) -> WorkloadSpec {
        WorkloadSpec {
            budget: self.budget,
            key_variety: self.key_variety,
            distribution: self.distribution,
            key_len_range: self.key_len_range,
            seed,
            op: self.op,
            mapper_count,
        }
    }

    pub fn distribution_name(&self) -> String {
        match self.distribution {
            KeyDistribution::Even => "even".to_string(),
            KeyDistribution::Zipf { s } => format!("zipf({s})"),
        }
    }
}

fn default_slots_per_bucket() -> usize {
    4
}
fn default_fifo_depth() -> usize {
    64
}
fn default_sizing() -> MemorySizing {
    MemorySizing::Bytes { total_memory_bytes: 8 * 1024 * 1024, fpe_fraction: 0.5 }
}

/// Switch sizing and queue knobs, shared by every switch in the run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SwitchSection {
    pub slots_per_bucket: usize,
    pub fifo_depth: usize,
    pub sizing: MemorySizing,
}

impl Default for SwitchSection {
    fn default() -> SwitchSection {
        SwitchSection {
            slots_per_bucket: default_slots_per_bucket(),
            fifo_depth: default_fifo_depth(),
            sizing: default_sizing(),
        }
    }
}

/// Reducer-host cost model.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ReducerSection {
    /// Host-side processing charge per inbound wire byte.
    pub cost_ns_per_byte: u64,
}

impl Default for ReducerSection {
    fn default() -> ReducerSection {
        ReducerSection { cost_ns_per_byte: 1 }
    }
}

fn default_mtu() -> usize {
    crate::wire::DEFAULT_MTU
}
fn default_timing() -> bool {
    true
}

/// A complete experiment description. The seed is mandatory: a config
/// that omits it does not parse.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_mtu")]
    pub mtu: usize,
    #[serde(default = "default_timing")]
    pub timing: bool,
    #[serde(default)]
    pub mode: Mode,
    pub topology: TopologySource,
    pub roles: Roles,
    #[serde(default)]
    pub workload: Option<WorkloadSection>,
    #[serde(default)]
    pub switch: SwitchSection,
    #[serde(default)]
    pub links: LinkModel,
    #[serde(default)]
    pub reducer: ReducerSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// What feeds the mappers.
pub enum MapperFeed {
    /// A generated workload, split across the mappers.
    Stream(Arc<Workload>),
    /// The put/end shim; pairs arrive through `Harness::shim_put`.
    Shim { op: AggOp },
}

/// Which reference map the oracle compares against.
enum OracleSource {
    Workload(Arc<Workload>),
    Shim(BTreeMap<Vec<u8>, i32>),
}

/// An assembled, runnable system.
pub struct Harness {
    cfg: ExperimentConfig,
    sim: sim::Sim,
    tree: BuiltTree,
    op: AggOp,
    oracle: OracleSource,
}

impl Harness {
    /// Builds every node and schedules the master's launch at time zero.
    pub fn build(cfg: &ExperimentConfig, feed: MapperFeed) -> Result<Harness, HarnessError> {
        let topo = cfg.topology.load()?;
        validate_roles(cfg, &topo)?;
        let min_mtu =
            FRAME_HEADER_LEN + AGG_FIXED_LEN + PAIR_META_LEN + MAX_KEY_LEN + VALUE_LEN;
        if cfg.mtu < min_mtu {
            return Err(HarnessError::Config(format!(
                "mtu {} cannot carry a maximum-length pair; need at least {min_mtu}",
                cfg.mtu
            )));
        }
        let roles = &cfg.roles;
        let tree = build_tree(&topo, FIRST_TREE_ID, roles.reducer, &roles.mappers)?;

        let (op, oracle) = match &feed {
            MapperFeed::Stream(w) => {
                if w.spec().mapper_count as usize != roles.mappers.len() {
                    return Err(HarnessError::Config(format!(
                        "workload splits across {} mappers but the run has {}",
                        w.spec().mapper_count,
                        roles.mappers.len()
                    )));
                }
                (w.spec().op, OracleSource::Workload(w.clone()))
            }
            MapperFeed::Shim { op } => (*op, OracleSource::Shim(BTreeMap::new())),
        };

        let mut s = sim::Sim::new(topo, cfg.links, cfg.mtu, cfg.timing);

        let engine_cfg = EngineConfig {
            scheme: Default::default(),
            slots_per_bucket: cfg.switch.slots_per_bucket,
            fifo_depth: cfg.switch.fifo_depth,
            timing: TimingModel::default(),
            timing_enabled: cfg.timing,
        };
        let node_ids: Vec<NodeId> = s.topo.node_ids().collect();
        for id in node_ids {
            let behavior = if s.topo.is_switch(id) {
                let mut state = SwitchState::new(id, engine_cfg.scheme, cfg.switch.sizing);
                state.routes = s.topo.routes_for(id);
                sim::NodeBehavior::Switch(sim::SwitchSim::new(
                    state,
                    engine_cfg,
                    cfg.mode == Mode::Aggregate,
                ))
            } else if id == roles.master {
                sim::NodeBehavior::Master(sim::MasterSim {
                    controller: roles.controller,
                    reducer: roles.reducer,
                    mappers: roles.mappers.clone(),
                    launch_sent: false,
                    acked_at_ns: None,
                })
            } else if id == roles.controller {
                sim::NodeBehavior::Controller(sim::ControllerSim {
                    ctrl: ControllerNode::new(id),
                    launch_errors: 0,
                    timeouts: 0,
                })
            } else if id == roles.reducer {
                let expected = match cfg.mode {
                    Mode::Aggregate => tree.reducer_child_count,
                    Mode::Baseline => roles.mappers.len() as u16,
                };
                sim::NodeBehavior::Reducer(sim::ReducerSim::new(
                    expected,
                    cfg.reducer.cost_ns_per_byte,
                ))
            } else if let Some(pos) = roles.mappers.iter().position(|&m| m == id) {
                let source = match &feed {
                    MapperFeed::Stream(w) => sim::MapperSource::Stream {
                        workload: w.clone(),
                        index: pos as u16,
                        cursor: 0,
                        count: w.mapper_pair_count(pos as u16),
                    },
                    MapperFeed::Shim { .. } => {
                        sim::MapperSource::Shim { queue: Default::default(), ended: false }
                    }
                };
                sim::NodeBehavior::Mapper(sim::MapperSim::new(
                    FIRST_TREE_ID,
                    roles.reducer,
                    op,
                    source,
                ))
            } else {
                sim::NodeBehavior::Idle
            };
            s.nodes.insert(id, behavior);
        }
        s.schedule(0, roles.master, sim::EventKind::Wake);

        Ok(Harness { cfg: cfg.clone(), sim: s, tree, op, oracle })
    }

    /// Drains the event queue.
    pub fn run(&mut self) {
        self.sim.run_until_idle();
    }

    /// True once the master has received its launch acknowledgement.
    pub fn launched(&self) -> bool {
        self.master().acked_at_ns.is_some()
    }

    pub fn launch_timeouts(&self) -> u64 {
        self.controller().timeouts
    }

    /// The aggregation tree this run operates over.
    pub fn tree(&self) -> &BuiltTree {
        &self.tree
    }

    /// The reducer's current folded map.
    pub fn final_map(&self) -> BTreeMap<Vec<u8>, i32> {
        self.reducer().acc.clone()
    }

    /// Fault knob: the named switch stops acknowledging configurations,
    /// so the launch barrier times out.
    pub fn disable_config_acks(&mut self, switch: NodeId) {
        if let Some(sim::NodeBehavior::Switch(s)) = self.sim.nodes.get_mut(&switch) {
            s.ack_configs = false;
        }
    }

    /// Hands pairs to a mapper worker and drives the run forward.
    pub fn shim_put(
        &mut self,
        worker: NodeId,
        pairs: Vec<KeyValuePair>,
    ) -> Result<(), HarnessError> {
        if !self.launched() {
            return Err(HarnessError::NotLaunched);
        }
        let op = self.op;
        if let OracleSource::Shim(reference) = &mut self.oracle {
            for p in &pairs {
                let v = p.value;
                reference
                    .entry(p.key().to_vec())
                    .and_modify(|a| *a = op.fold(*a, v))
                    .or_insert(v);
            }
        }
        let now = self.sim.now_ns;
        match self.sim.nodes.get_mut(&worker) {
            Some(sim::NodeBehavior::Mapper(m)) => {
                if m.shim_ended() {
                    return Err(HarnessError::Config(format!(
                        "worker {worker} already ended its stream"
                    )));
                }
                m.shim_push(pairs);
            }
            _ => {
                return Err(HarnessError::Config(format!("node {worker} is not a mapper")));
            }
        }
        self.sim.schedule(now, worker, sim::EventKind::Wake);
        self.sim.run_until_idle();
        Ok(())
    }

    /// Ends a worker's stream: its end-of-task marker goes out and the
    /// flush cascade runs as far as it can.
    pub fn shim_end(&mut self, worker: NodeId) -> Result<(), HarnessError> {
        if !self.launched() {
            return Err(HarnessError::NotLaunched);
        }
        let now = self.sim.now_ns;
        match self.sim.nodes.get_mut(&worker) {
            Some(sim::NodeBehavior::Mapper(m)) => m.shim_end(),
            _ => {
                return Err(HarnessError::Config(format!("node {worker} is not a mapper")));
            }
        }
        self.sim.schedule(now, worker, sim::EventKind::Wake);
        self.sim.run_until_idle();
        Ok(())
    }

    fn master(&self) -> &sim::MasterSim {
        match &self.sim.nodes[&self.cfg.roles.master] {
            sim::NodeBehavior::Master(m) => m,
            _ => unreachable!("master role is always a master node"),
        }
    }

    fn controller(&self) -> &sim::ControllerSim {
        match &self.sim.nodes[&self.cfg.roles.controller] {
            sim::NodeBehavior::Controller(c) => c,
            _ => unreachable!("controller role is always a controller node"),
        }
    }

    fn reducer(&self) -> &sim::ReducerSim {
        match &self.sim.nodes[&self.cfg.roles.reducer] {
            sim::NodeBehavior::Reducer(r) => r,
            _ => unreachable!("reducer role is always a reducer node"),
        }
    }

    fn mappers(&self) -> impl Iterator<Item = (NodeId, &sim::MapperSim)> {
        self.cfg.roles.mappers.iter().map(|&id| match &self.sim.nodes[&id] {
            sim::NodeBehavior::Mapper(m) => (id, m),
            _ => unreachable!("mapper role is always a mapper node"),
        })
    }

    fn switches(&self) -> impl Iterator<Item = (NodeId, &sim::SwitchSim)> {
        self.sim.nodes.iter().filter_map(|(&id, b)| match b {
            sim::NodeBehavior::Switch(s) => Some((id, s)),
            _ => None,
        })
    }

    /// Builds the final report. Errors when the reducer never saw its
    /// last end-of-task marker.
    pub fn report(&self) -> Result<ExperimentReport, HarnessError> {
        let reducer = self.reducer();
        let completion = reducer.completion_ns().ok_or_else(|| {
            HarnessError::Stalled(format!(
                "reducer saw {}/{} end-of-task markers",
                reducer.eots_seen, reducer.expected_eots
            ))
        })?;

        let (mut pairs_sent, mut pair_bytes_sent) = (0u64, 0u64);
        for (_, m) in self.mappers() {
            pairs_sent += m.sent_pairs;
            pair_bytes_sent += m.sent_pair_bytes;
        }

        let reduction_ratio = if pair_bytes_sent == 0 {
            0.0
        } else {
            1.0 - reducer.pair_bytes_in as f64 / pair_bytes_sent as f64
        };

        let oracle_match = match &self.oracle {
            OracleSource::Workload(w) => w.reference_fold(self.op) == reducer.acc,
            OracleSource::Shim(reference) => *reference == reducer.acc,
        };

        let mut stage_totals = StageTotals::default();
        let mut worst_fifo = 0.0f64;
        let mut mixed_op = 0u64;
        let mut unconfigured = 0u64;
        let mut flushes = 0u64;
        let mut fpe_rows = Vec::new();
        let mut bpe_rows = Vec::new();
        for (id, s) in self.switches() {
            stage_totals.merge(&s.hier.totals);
            worst_fifo = worst_fifo.max(s.hier.worst_fifo_full_ratio());
            mixed_op += s.hier.mixed_op_rejects;
            unconfigured += s.state.unconfigured_agg_packets;
            flushes += s.hier.flush_count;
            for fpe in s.hier.fpes() {
                let c = fpe.counters;
                fpe_rows.push(report::FpeRow {
                    switch: id,
                    group: fpe.group,
                    lookups: c.lookups,
                    hits: c.hits,
                    evictions: c.evictions,
                    fifo_writes: c.fifo_writes,
                    fifo_full_events: c.fifo_full_events,
                    fifo_full_ratio: c.fifo_full_ratio(),
                });
            }
            let b = s.hier.bpe_counters();
            bpe_rows.push(report::BpeRow { switch: id, stores: b.bpe_stores, emits: b.bpe_emits });
        }

        let ports = self
            .sim
            .traffic
            .iter()
            .map(|(&(node, port), t)| report::PortRow {
                node,
                port,
                in_bytes: t.in_bytes,
                out_bytes: t.out_bytes,
                in_packets: t.in_packets,
                out_packets: t.out_packets,
            })
            .collect();

        Ok(ExperimentReport {
            config: self.cfg.clone(),
            total_pairs_sent: pairs_sent,
            total_pair_bytes_sent: pair_bytes_sent,
            reducer_pairs_received: reducer.pairs_in,
            reducer_pair_bytes_received: reducer.pair_bytes_in,
            reducer_wire_bytes_received: reducer.wire_bytes_in,
            distinct_keys_at_reducer: reducer.acc.len() as u64,
            reduction_ratio,
            oracle_match,
            simulated_completion_ns: completion,
            master_ack_ns: self.master().acked_at_ns,
            launch_timeouts: self.controller().timeouts,
            stray_acks: self.controller().ctrl.stray_acks,
            decode_errors: self.sim.decode_errors,
            dropped_packets: self.sim.dropped_packets,
            mixed_op_rejects: mixed_op,
            unconfigured_agg_packets: unconfigured,
            flush_count: flushes,
            worst_fifo_full_ratio: worst_fifo,
            stage_cycle_totals: stage_totals,
            ports,
            fpe_counters: fpe_rows,
            bpe_counters: bpe_rows,
        })
    }
}

fn validate_roles(cfg: &ExperimentConfig, topo: &Topology) -> Result<(), HarnessError> {
    let roles = &cfg.roles;
    if roles.mappers.is_empty() {
        return Err(HarnessError::Config("at least one mapper required".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (&node, what) in roles
        .mappers
        .iter()
        .map(|m| (m, "mapper"))
        .chain([(&roles.master, "master"), (&roles.controller, "controller"), (&roles.reducer, "reducer")])
    {
        match topo.kind(node) {
            None => {
                return Err(HarnessError::Config(format!("{what} {node} is not in the topology")))
            }
            Some(NodeKind::Switch) => {
                return Err(HarnessError::Config(format!("{what} {node} must be a host")))
            }
            Some(NodeKind::Host) => {}
        }
        if !seen.insert(node) {
            return Err(HarnessError::Config(format!(
                "node {node} holds more than one role; roles must be distinct hosts"
            )));
        }
    }
    Ok(())
}

/// Builds the workload named by the config, runs the full launch →
/// transmit → flush → fold sequence, and reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let section = cfg
        .workload
        .as_ref()
        .ok_or_else(|| HarnessError::Config("config has no [workload] section".into()))?;
    let spec = section.to_spec(cfg.seed, cfg.roles.mappers.len() as u16);
    let workload = Arc::new(Workload::new(spec)?);
    let mut h = Harness::build(cfg, MapperFeed::Stream(workload))?;
    h.run();
    h.report()
}

/// Outcome of the word-count demonstration.
#[derive(Debug)]
pub struct WordCountOutcome {
    /// Final word counts at the reducer.
    pub counts: BTreeMap<String, i32>,
    /// Tokens cut down to the maximum key length.
    pub truncated_tokens: u64,
    pub report: ExperimentReport,
}

/// Runs a word count: one token stream per mapper, counted in-network,
/// verified against an exact reference counter.
pub fn wordcount_demo(
    cfg: &ExperimentConfig,
    streams: &[String],
) -> Result<WordCountOutcome, HarnessError> {
    if streams.len() != cfg.roles.mappers.len() {
        return Err(HarnessError::Config(format!(
            "{} token streams for {} mappers",
            streams.len(),
            cfg.roles.mappers.len()
        )));
    }
    let mut h = Harness::build(cfg, MapperFeed::Shim { op: AggOp::Sum })?;
    h.run();
    if !h.launched() {
        return Err(HarnessError::Stalled("launch barrier never completed".into()));
    }
    let mut truncated = 0u64;
    for (stream, &worker) in streams.iter().zip(&cfg.roles.mappers) {
        let mut pairs = Vec::new();
        for token in stream.split_whitespace() {
            let mut bytes = token.as_bytes();
            if bytes.len() > MAX_KEY_LEN {
                bytes = &bytes[..MAX_KEY_LEN];
                truncated += 1;
            }
            pairs.push(KeyValuePair::new(bytes.to_vec(), 1).expect("token keys fit the wire"));
        }
        if !pairs.is_empty() {
            h.shim_put(worker, pairs)?;
        }
    }
    for &worker in &cfg.roles.mappers {
        h.shim_end(worker)?;
    }
    let report = h.report()?;
    let counts = h
        .final_map()
        .into_iter()
        .map(|(k, v)| (String::from_utf8_lossy(&k).into_owned(), v))
        .collect();
    Ok(WordCountOutcome { counts, truncated_tokens: truncated, report })
}
