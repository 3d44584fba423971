//! Aggregation-tree construction and the launch handshake.
//!
//! A launch request names a reducer and a set of mapper workers. The
//! controller builds the aggregation tree — the union of every mapper's
//! shortest path to the reducer, transiting switches only, with ties
//! broken toward lower node ids — then configures every switch on the
//! tree and signals the master only after all switches acknowledge.
//!
//! Every switch's `child_count` is the number of end-of-task markers it
//! must collect before flushing: one per mapper worker attached directly
//! below it plus one per child switch. Workers are counted per instance,
//! so a host running two map tasks contributes two markers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dataplane::TreeId;
use crate::topology::{NodeId, NodeKind, Topology};
use crate::wire::{AckKind, ConfigureBody, LaunchBody, Packet, PacketBody, TreeEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControllerError {
    UnknownNode { node: NodeId },
    NotAHost { node: NodeId },
    Disconnected { mapper: NodeId, reducer: NodeId },
    NoReducer,
    NoMappers,
    TreeInvalid { tree_id: TreeId, msg: String },
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerError::UnknownNode { node } => write!(f, "unknown node {node}"),
            ControllerError::NotAHost { node } => {
                write!(f, "node {node} must be a host to run a worker")
            }
            ControllerError::Disconnected { mapper, reducer } => {
                write!(f, "mapper {mapper} has no switch path to reducer {reducer}")
            }
            ControllerError::NoReducer => write!(f, "launch carries no reducer address"),
            ControllerError::NoMappers => write!(f, "launch carries no mapper addresses"),
            ControllerError::TreeInvalid { tree_id, msg } => {
                write!(f, "tree {tree_id} failed its audit: {msg}")
            }
        }
    }
}

impl std::error::Error for ControllerError {}

/// One switch's place in an aggregation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchRole {
    /// Next node toward the reducer.
    pub parent: NodeId,
    /// End-of-task markers to collect: mapper workers attached here plus
    /// child switches.
    pub child_count: u16,
}

/// A constructed aggregation tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltTree {
    pub tree_id: TreeId,
    pub reducer: NodeId,
    /// Mapper workers, one entry per worker instance.
    pub mappers: Vec<NodeId>,
    pub switch_roles: BTreeMap<NodeId, SwitchRole>,
    /// End-of-task markers the reducer itself collects (workers delivering
    /// directly plus child switches).
    pub reducer_child_count: u16,
}

/// Walks one worker's path to the reducer: the node sequence
/// `[mapper, switch, ..., reducer]`.
fn path_to_reducer(
    topo: &Topology,
    mapper: NodeId,
    reducer: NodeId,
) -> Result<Vec<NodeId>, ControllerError> {
    let mut path = vec![mapper];
    let mut cur = mapper;
    let hop_limit = topo.node_ids().count() + 1;
    while cur != reducer {
        if path.len() > hop_limit {
            return Err(ControllerError::Disconnected { mapper, reducer });
        }
        let port = topo
            .next_hop(cur, reducer)
            .ok_or(ControllerError::Disconnected { mapper, reducer })?;
        let (peer, _) = topo
            .peer(cur, port)
            .ok_or(ControllerError::Disconnected { mapper, reducer })?;
        path.push(peer);
        cur = peer;
    }
    Ok(path)
}

/// Builds the aggregation tree for one reducer and its workers.
pub fn build_tree(
    topo: &Topology,
    tree_id: TreeId,
    reducer: NodeId,
    mappers: &[NodeId],
) -> Result<BuiltTree, ControllerError> {
    if mappers.is_empty() {
        return Err(ControllerError::NoMappers);
    }
    for &node in mappers.iter().chain([&reducer]) {
        match topo.kind(node) {
            None => return Err(ControllerError::UnknownNode { node }),
            Some(NodeKind::Switch) => return Err(ControllerError::NotAHost { node }),
            Some(NodeKind::Host) => {}
        }
    }

    // Per-node worker attachments and child-switch sets.
    let mut worker_children: BTreeMap<NodeId, u16> = BTreeMap::new();
    let mut switch_children: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut parents: BTreeMap<NodeId, NodeId> = BTreeMap::new();

    for &mapper in mappers {
        if mapper == reducer {
            // Worker co-located with the reducer: its marker arrives
            // without touching the network.
            *worker_children.entry(reducer).or_default() += 1;
            continue;
        }
        let path = path_to_reducer(topo, mapper, reducer)?;
        *worker_children.entry(path[1]).or_default() += 1;
        for pair in path[1..].windows(2) {
            let (child, parent) = (pair[0], pair[1]);
            parents.insert(child, parent);
            switch_children.entry(parent).or_default().insert(child);
        }
    }

    let mut switch_roles = BTreeMap::new();
    for (&switch, &parent) in &parents {
        let workers = worker_children.get(&switch).copied().unwrap_or(0);
        let subs = switch_children.get(&switch).map_or(0, |s| s.len() as u16);
        switch_roles.insert(switch, SwitchRole { parent, child_count: workers + subs });
    }
    let reducer_child_count = worker_children.get(&reducer).copied().unwrap_or(0)
        + switch_children.get(&reducer).map_or(0, |s| s.len() as u16);

    let tree = BuiltTree { tree_id, reducer, mappers: mappers.to_vec(), switch_roles, reducer_child_count };
    tree.audit(topo)?;
    Ok(tree)
}

impl BuiltTree {
    /// Independent structural check: every switch's parent chain reaches
    /// the reducer without cycles, and child counts add up to the marker
    /// sources below each node.
    pub fn audit(&self, topo: &Topology) -> Result<(), ControllerError> {
        let fail = |msg: String| ControllerError::TreeInvalid { tree_id: self.tree_id, msg };
        let mut expected: BTreeMap<NodeId, u16> = BTreeMap::new();
        for (&switch, role) in &self.switch_roles {
            if !topo.is_switch(switch) {
                return Err(fail(format!("member {switch} is not a switch")));
            }
            let mut seen = BTreeSet::from([switch]);
            let mut cur = switch;
            while cur != self.reducer {
                let next = match self.switch_roles.get(&cur) {
                    Some(role) => role.parent,
                    None => return Err(fail(format!("parent chain of {switch} leaves the tree at {cur}"))),
                };
                if !seen.insert(next) {
                    return Err(fail(format!("cycle through {next}")));
                }
                cur = next;
            }
            *expected.entry(role.parent).or_default() += 1;
        }
        for &mapper in &self.mappers {
            let attach = if mapper == self.reducer {
                self.reducer
            } else {
                let path = path_to_reducer(topo, mapper, self.reducer)?;
                path[1]
            };
            *expected.entry(attach).or_default() += 1;
        }
        for (&switch, role) in &self.switch_roles {
            let want = expected.get(&switch).copied().unwrap_or(0);
            if want != role.child_count {
                return Err(fail(format!(
                    "switch {switch} child count {} but {want} marker sources below it",
                    role.child_count
                )));
            }
            if want == 0 {
                return Err(fail(format!("switch {switch} carries no traffic")));
            }
        }
        let want_reducer = expected.get(&self.reducer).copied().unwrap_or(0);
        if want_reducer != self.reducer_child_count {
            return Err(fail(format!(
                "reducer child count {} but {want_reducer} marker sources below it",
                self.reducer_child_count
            )));
        }
        Ok(())
    }
}

/// Progress of one launch through the configure/acknowledge barrier.
#[derive(Debug, Clone)]
pub struct LaunchProgress {
    pub master: NodeId,
    pub tree: BuiltTree,
    pub pending: BTreeSet<NodeId>,
    pub deadline_at_ns: u64,
    pub completed: bool,
    pub timed_out: bool,
}

/// Packets the controller wants sent after handling a launch.
#[derive(Debug, Clone)]
pub struct LaunchActions {
    pub tree_id: TreeId,
    pub configures: Vec<Packet>,
    pub deadline_at_ns: u64,
    /// Set when no switches need configuring: the master is acknowledged
    /// immediately.
    pub immediate_master_ack: Option<Packet>,
}

/// The controller: builds trees, disseminates configuration, and releases
/// the master once every switch has acknowledged.
#[derive(Debug, Clone)]
pub struct ControllerNode {
    pub node_id: NodeId,
    /// How long a switch may take to acknowledge its configuration.
    pub ack_deadline_ns: u64,
    next_tree_id: TreeId,
    pub launches: BTreeMap<TreeId, LaunchProgress>,
    /// Acknowledgements that matched no pending launch.
    pub stray_acks: u64,
}

pub const DEFAULT_ACK_DEADLINE_NS: u64 = 1_000_000;

/// Tree id the controller assigns to its first launch.
pub const FIRST_TREE_ID: TreeId = 1;

impl ControllerNode {
    pub fn new(node_id: NodeId) -> ControllerNode {
        ControllerNode {
            node_id,
            ack_deadline_ns: DEFAULT_ACK_DEADLINE_NS,
            next_tree_id: FIRST_TREE_ID,
            launches: BTreeMap::new(),
            stray_acks: 0,
        }
    }

    /// Handles a launch request: builds the tree and returns the Configure
    /// packets to send. Only the first reducer address roots a tree;
    /// launches are otherwise single-reducer.
    pub fn on_launch(
        &mut self,
        topo: &Topology,
        master: NodeId,
        body: &LaunchBody,
        now_ns: u64,
    ) -> Result<LaunchActions, ControllerError> {
        let reducer = *body.reducer_addrs.first().ok_or(ControllerError::NoReducer)?;
        let tree_id = self.next_tree_id;
        let tree = build_tree(topo, tree_id, reducer, &body.mapper_addrs)?;
        self.next_tree_id += 1;

        let configures: Vec<Packet> = tree
            .switch_roles
            .iter()
            .map(|(&switch, role)| Packet {
                src_node: self.node_id,
                dst_node: switch,
                body: PacketBody::Configure(ConfigureBody {
                    trees: vec![TreeEntry { tree_id, child_count: role.child_count }],
                }),
            })
            .collect();
        let pending: BTreeSet<NodeId> = tree.switch_roles.keys().copied().collect();
        let deadline_at_ns = now_ns + self.ack_deadline_ns;
        let immediate = pending.is_empty().then(|| self.master_ack(master));

        self.launches.insert(
            tree_id,
            LaunchProgress {
                master,
                tree,
                pending,
                deadline_at_ns,
                completed: immediate.is_some(),
                timed_out: false,
            },
        );
        Ok(LaunchActions { tree_id, configures, deadline_at_ns, immediate_master_ack: immediate })
    }

    fn master_ack(&self, master: NodeId) -> Packet {
        Packet {
            src_node: self.node_id,
            dst_node: master,
            body: PacketBody::Ack(AckKind::ToMaster),
        }
    }

    /// Handles a configuration acknowledgement from a switch. The ack is
    /// attributed to the oldest launch still waiting on that switch.
    /// Returns the master acknowledgement when a launch completes.
    pub fn on_ack(&mut self, from: NodeId, now_ns: u64) -> Option<Packet> {
        let mut completed_master = None;
        let mut consumed = false;
        for progress in self.launches.values_mut() {
            if progress.completed || progress.timed_out {
                continue;
            }
            if now_ns > progress.deadline_at_ns {
                continue;
            }
            if progress.pending.remove(&from) {
                consumed = true;
                if progress.pending.is_empty() {
                    progress.completed = true;
                    completed_master = Some(progress.master);
                }
                break;
            }
        }
        if !consumed {
            self.stray_acks += 1;
        }
        completed_master.map(|master| self.master_ack(master))
    }

    /// Marks launches whose deadline has passed with acknowledgements
    /// still missing. Returns (tree id, missing switches) per expiry.
    pub fn expire(&mut self, now_ns: u64) -> Vec<(TreeId, Vec<NodeId>)> {
        let mut expired = Vec::new();
        for (&tree_id, progress) in &mut self.launches {
            if !progress.completed
                && !progress.timed_out
                && now_ns >= progress.deadline_at_ns
                && !progress.pending.is_empty()
            {
                progress.timed_out = true;
                expired.push((tree_id, progress.pending.iter().copied().collect()));
            }
        }
        expired
    }

    pub fn progress(&self, tree_id: TreeId) -> Option<&LaunchProgress> {
        self.launches.get(&tree_id)
    }
}
