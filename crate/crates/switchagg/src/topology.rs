//! Network descriptions: nodes, links, and derived routing tables.
//!
//! Topologies are written in a small line-oriented text format:
//!
//! ```text
//! # comment
//! node 1 switch
//! node 100 host
//! link 100 0 1 3      # node 100 port 0 <-> node 1 port 3
//! route 1 100 3       # optional pin: switch 1 reaches node 100 via port 3
//! ```
//!
//! Links are undirected and identified by (node, port) endpoints; port
//! numbers are local to their node. Hosts never relay traffic, so derived
//! routes only transit switches. When no `route` lines are given, routes
//! are derived per switch by breadth-first search toward every
//! destination, breaking ties toward the lowest neighbor id, then the
//! lowest port.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::dataplane::PortId;

pub type NodeId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
}

/// One undirected cable between two (node, port) endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkDef {
    pub a: NodeId,
    pub a_port: PortId,
    pub b: NodeId,
    pub b_port: PortId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    Parse { line: usize, msg: String },
    UnknownNode { node: NodeId },
    DuplicateNode { node: NodeId },
    PortInUse { node: NodeId, port: PortId },
    NotASwitch { node: NodeId },
}

impl fmt::Display for TopologyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyError::Parse { line, msg } => write!(f, "line {line}: {msg}"),
            TopologyError::UnknownNode { node } => write!(f, "unknown node {node}"),
            TopologyError::DuplicateNode { node } => write!(f, "node {node} declared twice"),
            TopologyError::PortInUse { node, port } => {
                write!(f, "port {port} of node {node} used by two links")
            }
            TopologyError::NotASwitch { node } => {
                write!(f, "node {node} is a host and cannot carry routes")
            }
        }
    }
}

impl std::error::Error for TopologyError {}

/// Parsed network: node kinds, links, per-node port maps, and optional
/// pinned routes.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeKind>,
    links: Vec<LinkDef>,
    /// node -> port -> (peer node, peer port)
    ports: BTreeMap<NodeId, BTreeMap<PortId, (NodeId, PortId)>>,
    /// Pinned routes from `route` lines: switch -> destination -> port.
    pinned: BTreeMap<NodeId, BTreeMap<NodeId, PortId>>,
}

impl Topology {
    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut topo = Topology::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let parse_id = |tok: &str, what: &str| {
                tok.parse::<u16>().map_err(|_| TopologyError::Parse {
                    line,
                    msg: format!("bad {what} {tok:?}"),
                })
            };
            match tokens[0] {
                "node" => {
                    if tokens.len() != 3 {
                        return Err(TopologyError::Parse {
                            line,
                            msg: "expected: node <id> host|switch".into(),
                        });
                    }
                    let id = parse_id(tokens[1], "node id")?;
                    let kind = match tokens[2] {
                        "host" => NodeKind::Host,
                        "switch" => NodeKind::Switch,
                        other => {
                            return Err(TopologyError::Parse {
                                line,
                                msg: format!("bad node kind {other:?}"),
                            })
                        }
                    };
                    topo.add_node(id, kind)?;
                }
                "link" => {
                    if tokens.len() != 5 {
                        return Err(TopologyError::Parse {
                            line,
                            msg: "expected: link <a> <a_port> <b> <b_port>".into(),
                        });
                    }
                    let def = LinkDef {
                        a: parse_id(tokens[1], "node id")?,
                        a_port: parse_id(tokens[2], "port")?,
                        b: parse_id(tokens[3], "node id")?,
                        b_port: parse_id(tokens[4], "port")?,
                    };
                    topo.add_link(def)?;
                }
                "route" => {
                    if tokens.len() != 4 {
                        return Err(TopologyError::Parse {
                            line,
                            msg: "expected: route <switch> <dst> <port>".into(),
                        });
                    }
                    let switch = parse_id(tokens[1], "switch id")?;
                    let dst = parse_id(tokens[2], "destination")?;
                    let port = parse_id(tokens[3], "port")?;
                    topo.pin_route(switch, dst, port)?;
                }
                other => {
                    return Err(TopologyError::Parse {
                        line,
                        msg: format!("unknown directive {other:?}"),
                    })
                }
            }
        }
        Ok(topo)
    }

    pub fn add_node(&mut self, id: NodeId, kind: NodeKind) -> Result<(), TopologyError> {
        if self.nodes.contains_key(&id) {
            return Err(TopologyError::DuplicateNode { node: id });
        }
        self.nodes.insert(id, kind);
        self.ports.insert(id, BTreeMap::new());
        Ok(())
    }

    pub fn add_link(&mut self, def: LinkDef) -> Result<(), TopologyError> {
        for end in [def.a, def.b] {
            if !self.nodes.contains_key(&end) {
                return Err(TopologyError::UnknownNode { node: end });
            }
        }
        if self.ports[&def.a].contains_key(&def.a_port) {
            return Err(TopologyError::PortInUse { node: def.a, port: def.a_port });
        }
        if def.a == def.b && def.a_port == def.b_port
            || def.a != def.b && self.ports[&def.b].contains_key(&def.b_port)
        {
            return Err(TopologyError::PortInUse { node: def.b, port: def.b_port });
        }
        self.ports.get_mut(&def.a).unwrap().insert(def.a_port, (def.b, def.b_port));
        self.ports.get_mut(&def.b).unwrap().insert(def.b_port, (def.a, def.a_port));
        self.links.push(def);
        Ok(())
    }

    pub fn pin_route(
        &mut self,
        switch: NodeId,
        dst: NodeId,
        port: PortId,
    ) -> Result<(), TopologyError> {
        match self.nodes.get(&switch) {
            None => return Err(TopologyError::UnknownNode { node: switch }),
            Some(NodeKind::Host) => return Err(TopologyError::NotASwitch { node: switch }),
            Some(NodeKind::Switch) => {}
        }
        if !self.nodes.contains_key(&dst) {
            return Err(TopologyError::UnknownNode { node: dst });
        }
        self.pinned.entry(switch).or_default().insert(dst, port);
        Ok(())
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.nodes.get(&id).copied()
    }

    pub fn is_switch(&self, id: NodeId) -> bool {
        self.kind(id) == Some(NodeKind::Switch)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|(_, k)| **k == NodeKind::Switch)
            .map(|(id, _)| *id)
    }

    pub fn links(&self) -> &[LinkDef] {
        &self.links
    }

    /// (port, peer, peer_port) triples of one node, in port order.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (PortId, NodeId, PortId)> + '_ {
        self.ports
            .get(&id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(p, (n, np))| (*p, *n, *np)))
    }

    /// The far end of one port.
    pub fn peer(&self, id: NodeId, port: PortId) -> Option<(NodeId, PortId)> {
        self.ports.get(&id)?.get(&port).copied()
    }

    /// Hop distance from every node to `dst`, where intermediate hops must
    /// be switches. Unreachable nodes are absent.
    pub fn distances_to(&self, dst: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        if !self.nodes.contains_key(&dst) {
            return dist;
        }
        dist.insert(dst, 0);
        let mut queue = VecDeque::from([dst]);
        while let Some(cur) = queue.pop_front() {
            // Traffic can leave dst itself, but only switches relay.
            if cur != dst && !self.is_switch(cur) {
                continue;
            }
            let d = dist[&cur];
            for (_, peer, _) in self.neighbors(cur) {
                dist.entry(peer).or_insert_with(|| {
                    queue.push_back(peer);
                    d + 1
                });
            }
        }
        dist
    }

    /// Next-hop port of `from` toward `dst`: the lowest-(id, port) neighbor
    /// on a shortest path. Pinned routes win. `None` when unreachable.
    pub fn next_hop(&self, from: NodeId, dst: NodeId) -> Option<PortId> {
        if let Some(port) = self.pinned.get(&from).and_then(|m| m.get(&dst)) {
            return Some(*port);
        }
        if from == dst {
            return None;
        }
        let dist = self.distances_to(dst);
        let here = *dist.get(&from)?;
        let mut best: Option<(NodeId, PortId)> = None;
        for (port, peer, _) in self.neighbors(from) {
            // A neighbor can carry this traffic only if it is the
            // destination itself or a switch that relays onward.
            if peer != dst && !self.is_switch(peer) {
                continue;
            }
            if dist.get(&peer) == Some(&(here - 1)) {
                let cand = (peer, port);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        best.map(|(_, port)| port)
    }

    /// Full routing table for one node: every reachable destination mapped
    /// to its next-hop port.
    pub fn routes_for(&self, from: NodeId) -> BTreeMap<NodeId, PortId> {
        let mut routes = BTreeMap::new();
        for dst in self.node_ids() {
            if dst == from {
                continue;
            }
            if let Some(port) = self.next_hop(from, dst) {
                routes.insert(dst, port);
            }
        }
        routes
    }
}
