//! Per-switch packet handling that sits in front of the aggregation
//! engines: packet classification, the key-length group scheme, the
//! crossbar dispatch that fans pairs out to per-group engines, tree
//! configuration, and plain forwarding with byte counters.

use std::collections::BTreeMap;
use std::fmt;

use crate::wire::{AggregationPacket, KeyValuePair, Packet, PacketBody};

/// Port number local to one switch.
pub type PortId = u16;

/// Identifier of an aggregation tree.
pub type TreeId = u16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataplaneError {
    /// Key length outside the range the group scheme covers.
    KeyTooLong { len: usize, max: usize },
    /// No static route toward the packet's destination.
    NoRoute { switch: u16, dst: u16 },
    /// Configure carried a tree id already present with different settings.
    DuplicateTree { tree_id: TreeId },
    /// Configuration rejected (zero trees, zero child count, no memory).
    Config(String),
}

impl fmt::Display for DataplaneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataplaneError::KeyTooLong { len, max } => {
                write!(f, "key length {len} outside the grouped range 1..={max}")
            }
            DataplaneError::NoRoute { switch, dst } => {
                write!(f, "switch {switch} has no route toward node {dst}")
            }
            DataplaneError::DuplicateTree { tree_id } => {
                write!(f, "tree {tree_id} already configured with different settings")
            }
            DataplaneError::Config(msg) => write!(f, "bad configuration: {msg}"),
        }
    }
}

impl std::error::Error for DataplaneError {}

/// What a switch should do with an arriving packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketClass {
    /// Communication traffic (Launch, Configure, Ack): forward by routing
    /// table, or deliver locally if addressed to this switch.
    Forward,
    /// Configure addressed to this switch: apply and acknowledge.
    Configure,
    /// Aggregation traffic: run through the engines if the tree is
    /// configured here.
    Aggregate,
}

/// Classifies a packet from this switch's point of view.
pub fn classify(switch_id: u16, packet: &Packet) -> PacketClass {
    match &packet.body {
        PacketBody::Aggregation(_) => PacketClass::Aggregate,
        PacketBody::Configure(_) if packet.dst_node == switch_id => PacketClass::Configure,
        _ => PacketClass::Forward,
    }
}

/// Key-length group layout: `group_count` contiguous length ranges of width
/// `base_width`. With the defaults (8 and 8) the upper bounds run
/// 8, 16, ..., 64 and group `i` covers lengths `(8i, 8(i+1)]`, with keys
/// shorter than the first bound falling into group 0 (they are zero-padded
/// up to the slot width when stored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GroupScheme {
    pub base_width: usize,
    pub group_count: usize,
}

impl Default for GroupScheme {
    fn default() -> GroupScheme {
        GroupScheme { base_width: 8, group_count: 8 }
    }
}

impl GroupScheme {
    /// Widest key the scheme accepts.
    pub fn max_key_len(&self) -> usize {
        self.base_width * self.group_count
    }

    /// Upper length bound (inclusive) of a group; also the slot width used
    /// by that group's tables.
    pub fn slot_width(&self, group: usize) -> usize {
        debug_assert!(group < self.group_count);
        self.base_width * (group + 1)
    }

    /// Maps a key length to its group index.
    pub fn group_of(&self, key_len: usize) -> Result<usize, DataplaneError> {
        let max = self.max_key_len();
        if key_len == 0 || key_len > max {
            return Err(DataplaneError::KeyTooLong { len: key_len, max });
        }
        // Unique i with base*i < key_len <= base*(i+1).
        Ok((key_len - 1) / self.base_width)
    }
}

/// A pair tagged with the engine group it must be dispatched to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchedPair {
    pub group: usize,
    pub pair: KeyValuePair,
}

/// Crossbar stage: tags every pair of a packet with its group, preserving
/// packet order.
pub fn crossbar_dispatch(
    packet: &AggregationPacket,
    scheme: &GroupScheme,
) -> Result<Vec<DispatchedPair>, DataplaneError> {
    let mut out = Vec::with_capacity(packet.pairs.len());
    for pair in &packet.pairs {
        let group = scheme.group_of(pair.key_len())?;
        out.push(DispatchedPair { group, pair: pair.clone() });
    }
    Ok(out)
}

/// Per-tree state installed by a Configure packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeConfig {
    pub tree_id: TreeId,
    /// Direct children (mappers and child switches) whose end-of-task
    /// markers this switch must collect before flushing.
    pub child_count: u16,
    /// Port toward the tree root. Resolved from the routing table when the
    /// first aggregation packet for the tree arrives, since the Configure
    /// body does not carry it.
    pub parent_port: Option<PortId>,
    pub memory_share: TreeMemoryShare,
}

/// Memory carved out of the switch budget for one tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TreeMemoryShare {
    /// Front-end table capacity, in pairs, for each group.
    pub fpe_pairs_per_group: usize,
    /// Back-end region capacity, in pairs, for each (tree, group) region.
    pub bpe_pairs_per_region: usize,
    /// Byte total this share was derived from (kept for reporting).
    pub bytes: u64,
}

/// How the per-tree shares are derived from the switch memory budget.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySizing {
    /// Divide a byte budget: every tree gets `floor(total / n_trees)` bytes,
    /// split between the front-end tier (`fpe_fraction`) and the back end.
    Bytes { total_memory_bytes: u64, fpe_fraction: f64 },
    /// Pin both tiers' pair capacities directly.
    Explicit { fpe_pairs_per_group: usize, bpe_pairs_per_region: usize },
}

/// Bytes one stored pair occupies in group `g`: the zero-padded key slot
/// plus the 32-bit value.
fn stored_pair_bytes(scheme: &GroupScheme, group: usize) -> u64 {
    scheme.slot_width(group) as u64 + 4
}

/// Sum over groups of the stored-pair footprint; the cost of giving every
/// region one more pair.
fn bytes_per_pair_row(scheme: &GroupScheme) -> u64 {
    (0..scheme.group_count).map(|g| stored_pair_bytes(scheme, g)).sum()
}

impl MemorySizing {
    /// Computes one tree's share when the switch hosts `n_trees` trees.
    ///
    /// In byte mode both tiers hold the same pair count in every group, so
    /// wider groups receive proportionally more bytes; with balanced key
    /// lengths every group then saturates at the same point.
    pub fn share_for(
        &self,
        scheme: &GroupScheme,
        n_trees: usize,
    ) -> Result<TreeMemoryShare, DataplaneError> {
        if n_trees == 0 {
            return Err(DataplaneError::Config("zero trees".into()));
        }
        match *self {
            MemorySizing::Bytes { total_memory_bytes, fpe_fraction } => {
                if !(0.0..=1.0).contains(&fpe_fraction) {
                    return Err(DataplaneError::Config(format!(
                        "fpe_fraction {fpe_fraction} outside 0..=1"
                    )));
                }
                let per_tree = total_memory_bytes / n_trees as u64;
                let row = bytes_per_pair_row(scheme);
                let fpe_bytes = (per_tree as f64 * fpe_fraction) as u64;
                let bpe_bytes = per_tree - fpe_bytes;
                Ok(TreeMemoryShare {
                    fpe_pairs_per_group: (fpe_bytes / row) as usize,
                    bpe_pairs_per_region: (bpe_bytes / row) as usize,
                    bytes: per_tree,
                })
            }
            MemorySizing::Explicit { fpe_pairs_per_group, bpe_pairs_per_region } => {
                let row = bytes_per_pair_row(scheme);
                Ok(TreeMemoryShare {
                    fpe_pairs_per_group,
                    bpe_pairs_per_region,
                    bytes: (fpe_pairs_per_group as u64 + bpe_pairs_per_region as u64) * row,
                })
            }
        }
    }
}

/// Byte counters for one switch port.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct PortCounters {
    pub in_bytes: u64,
    pub out_bytes: u64,
}

/// Control-plane state of one switch: routes, configured trees, counters.
#[derive(Debug, Clone)]
pub struct SwitchState {
    pub switch_id: u16,
    pub scheme: GroupScheme,
    /// Static routes installed at startup: destination node -> output port.
    pub routes: BTreeMap<u16, PortId>,
    pub trees: BTreeMap<TreeId, TreeConfig>,
    pub ports: BTreeMap<PortId, PortCounters>,
    sizing: MemorySizing,
    /// Aggregation packets seen for trees this switch has no configuration
    /// for; they are forwarded untouched.
    pub unconfigured_agg_packets: u64,
}

impl SwitchState {
    pub fn new(switch_id: u16, scheme: GroupScheme, sizing: MemorySizing) -> SwitchState {
        SwitchState {
            switch_id,
            scheme,
            routes: BTreeMap::new(),
            trees: BTreeMap::new(),
            ports: BTreeMap::new(),
            sizing,
            unconfigured_agg_packets: 0,
        }
    }

    pub fn count_in(&mut self, port: PortId, bytes: usize) {
        self.ports.entry(port).or_default().in_bytes += bytes as u64;
    }

    pub fn count_out(&mut self, port: PortId, bytes: usize) {
        self.ports.entry(port).or_default().out_bytes += bytes as u64;
    }

    /// Output port for a destination node.
    pub fn route(&self, dst: u16) -> Result<PortId, DataplaneError> {
        self.routes
            .get(&dst)
            .copied()
            .ok_or(DataplaneError::NoRoute { switch: self.switch_id, dst })
    }

    /// Picks the output port for a packet this switch merely relays.
    pub fn forward(&self, packet: &Packet) -> Result<PortId, DataplaneError> {
        self.route(packet.dst_node)
    }

    /// Installs trees from a Configure body. Re-divides the memory budget
    /// over all trees present afterwards. Installing the same tree twice
    /// with identical settings is idempotent; conflicting settings are an
    /// error. Returns the shares now in force (tree id, share) so the
    /// engine tier can size its tables.
    pub fn apply_configuration(
        &mut self,
        trees: &[crate::wire::TreeEntry],
    ) -> Result<Vec<(TreeId, TreeMemoryShare)>, DataplaneError> {
        if trees.is_empty() {
            return Err(DataplaneError::Config("configure carried zero trees".into()));
        }
        for entry in trees {
            if entry.child_count == 0 {
                return Err(DataplaneError::Config(format!(
                    "tree {} has zero children",
                    entry.tree_id
                )));
            }
            match self.trees.get(&entry.tree_id) {
                Some(existing) if existing.child_count != entry.child_count => {
                    return Err(DataplaneError::DuplicateTree { tree_id: entry.tree_id });
                }
                Some(_) => {}
                None => {
                    self.trees.insert(
                        entry.tree_id,
                        TreeConfig {
                            tree_id: entry.tree_id,
                            child_count: entry.child_count,
                            parent_port: None,
                            memory_share: TreeMemoryShare {
                                fpe_pairs_per_group: 0,
                                bpe_pairs_per_region: 0,
                                bytes: 0,
                            },
                        },
                    );
                }
            }
        }
        let n = self.trees.len();
        let share = self.sizing.share_for(&self.scheme, n)?;
        let mut out = Vec::with_capacity(n);
        for cfg in self.trees.values_mut() {
            cfg.memory_share = share;
            out.push((cfg.tree_id, share));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{AggOp, LaunchBody, TreeEntry};

    fn scheme() -> GroupScheme {
        GroupScheme::default()
    }

    #[test]
    fn group_bounds() {
        let s = scheme();
        assert_eq!(s.group_of(1).unwrap(), 0);
        assert_eq!(s.group_of(8).unwrap(), 0);
        assert_eq!(s.group_of(9).unwrap(), 1);
        assert_eq!(s.group_of(16).unwrap(), 1);
        assert_eq!(s.group_of(17).unwrap(), 2);
        assert_eq!(s.group_of(64).unwrap(), 7);
        assert_eq!(
            s.group_of(65).unwrap_err(),
            DataplaneError::KeyTooLong { len: 65, max: 64 }
        );
        assert_eq!(
            s.group_of(0).unwrap_err(),
            DataplaneError::KeyTooLong { len: 0, max: 64 }
        );
    }

    #[test]
    fn every_length_lands_in_exactly_its_band() {
        let s = scheme();
        for len in 1..=64usize {
            let g = s.group_of(len).unwrap();
            let upper = s.slot_width(g);
            let lower = upper - s.base_width;
            assert!(len > lower && len <= upper, "len {len} group {g}");
        }
    }

    #[test]
    fn slot_widths_follow_bounds() {
        let s = scheme();
        assert_eq!(s.slot_width(0), 8);
        assert_eq!(s.slot_width(7), 64);
        assert_eq!(s.max_key_len(), 64);
    }

    #[test]
    fn classify_by_body_and_destination() {
        let agg = Packet {
            src_node: 1,
            dst_node: 99,
            body: PacketBody::Aggregation(AggregationPacket {
                tree_id: 0,
                eot: false,
                op: AggOp::Sum,
                pairs: vec![],
            }),
        };
        assert_eq!(classify(5, &agg), PacketClass::Aggregate);

        let launch = Packet {
            src_node: 1,
            dst_node: 2,
            body: PacketBody::Launch(LaunchBody { reducer_addrs: vec![], mapper_addrs: vec![] }),
        };
        assert_eq!(classify(5, &launch), PacketClass::Forward);

        let mut conf = Packet {
            src_node: 1,
            dst_node: 5,
            body: PacketBody::Configure(crate::wire::ConfigureBody {
                trees: vec![TreeEntry { tree_id: 1, child_count: 1 }],
            }),
        };
        assert_eq!(classify(5, &conf), PacketClass::Configure);
        conf.dst_node = 6;
        assert_eq!(classify(5, &conf), PacketClass::Forward);
    }

    #[test]
    fn dispatch_preserves_order_and_groups() {
        let pairs: Vec<KeyValuePair> =
            (0..100).map(|i| KeyValuePair::new(vec![i as u8; 10], i).unwrap()).collect();
        let packet = AggregationPacket { tree_id: 0, eot: false, op: AggOp::Sum, pairs };
        let dispatched = crossbar_dispatch(&packet, &scheme()).unwrap();
        assert_eq!(dispatched.len(), 100);
        for (i, d) in dispatched.iter().enumerate() {
            assert_eq!(d.group, 1, "length 10 belongs to group 1");
            assert_eq!(d.pair.value, i as i32, "packet order preserved");
        }
    }

    #[test]
    fn dispatch_is_a_partition() {
        let pairs: Vec<KeyValuePair> = (1..=64)
            .map(|len| KeyValuePair::new(vec![7; len], len as i32).unwrap())
            .collect();
        let packet =
            AggregationPacket { tree_id: 0, eot: false, op: AggOp::Sum, pairs: pairs.clone() };
        let dispatched = crossbar_dispatch(&packet, &scheme()).unwrap();
        let mut recovered: Vec<KeyValuePair> =
            dispatched.iter().map(|d| d.pair.clone()).collect();
        recovered.sort();
        let mut original = pairs;
        original.sort();
        assert_eq!(recovered, original, "dispatch neither drops nor duplicates");
    }

    #[test]
    fn forward_uses_static_routes() {
        let mut st = SwitchState::new(
            1,
            scheme(),
            MemorySizing::Explicit { fpe_pairs_per_group: 4, bpe_pairs_per_region: 4 },
        );
        st.routes.insert(7, 3);
        let pkt = Packet {
            src_node: 0,
            dst_node: 7,
            body: PacketBody::Ack(crate::wire::AckKind::ToMaster),
        };
        assert_eq!(st.forward(&pkt).unwrap(), 3);
        let stray = Packet { dst_node: 8, ..pkt };
        assert_eq!(
            st.forward(&stray).unwrap_err(),
            DataplaneError::NoRoute { switch: 1, dst: 8 }
        );
    }

    #[test]
    fn byte_counters_conserve_forwarded_traffic() {
        let mut st = SwitchState::new(
            1,
            scheme(),
            MemorySizing::Explicit { fpe_pairs_per_group: 4, bpe_pairs_per_region: 4 },
        );
        for size in [11usize, 60, 1500] {
            st.count_in(0, size);
            st.count_out(1, size);
        }
        let total_in: u64 = st.ports.values().map(|p| p.in_bytes).sum();
        let total_out: u64 = st.ports.values().map(|p| p.out_bytes).sum();
        assert_eq!(total_in, total_out);
    }

    #[test]
    fn memory_divided_evenly_across_trees() {
        let total = 1_000_000u64;
        let sizing = MemorySizing::Bytes { total_memory_bytes: total, fpe_fraction: 0.5 };
        let mut st = SwitchState::new(1, scheme(), sizing);
        st.apply_configuration(&[TreeEntry { tree_id: 1, child_count: 2 }]).unwrap();
        let one = st.trees[&1].memory_share;
        assert_eq!(one.bytes, total);

        st.apply_configuration(&[TreeEntry { tree_id: 2, child_count: 1 }]).unwrap();
        let a = st.trees[&1].memory_share;
        let b = st.trees[&2].memory_share;
        assert_eq!(a.bytes, total / 2);
        assert_eq!(b.bytes, total / 2);
        assert!(a.bytes + b.bytes <= total);
    }

    #[test]
    fn reconfigure_same_tree_is_idempotent_conflict_rejected() {
        let sizing = MemorySizing::Explicit { fpe_pairs_per_group: 8, bpe_pairs_per_region: 8 };
        let mut st = SwitchState::new(1, scheme(), sizing);
        let entry = TreeEntry { tree_id: 4, child_count: 3 };
        st.apply_configuration(&[entry]).unwrap();
        st.apply_configuration(&[entry]).unwrap();
        assert_eq!(st.trees.len(), 1);
        let err =
            st.apply_configuration(&[TreeEntry { tree_id: 4, child_count: 5 }]).unwrap_err();
        assert_eq!(err, DataplaneError::DuplicateTree { tree_id: 4 });
    }

    #[test]
    fn empty_configure_rejected() {
        let sizing = MemorySizing::Explicit { fpe_pairs_per_group: 8, bpe_pairs_per_region: 8 };
        let mut st = SwitchState::new(1, scheme(), sizing);
        assert!(matches!(
            st.apply_configuration(&[]).unwrap_err(),
            DataplaneError::Config(_)
        ));
        assert!(matches!(
            st.apply_configuration(&[TreeEntry { tree_id: 1, child_count: 0 }]).unwrap_err(),
            DataplaneError::Config(_)
        ));
    }

    #[test]
    fn byte_sizing_fills_groups_with_equal_pair_counts() {
        // One pair in every group costs sum over groups of (slot width + 4)
        // bytes: 8+4, 16+4, ..., 64+4 = 320 with the default scheme.
        let row: u64 = (1..=8).map(|g| 8 * g + 4u64).sum();
        assert_eq!(row, 320);
        let sizing =
            MemorySizing::Bytes { total_memory_bytes: 320_000, fpe_fraction: 0.5 };
        let share = sizing.share_for(&scheme(), 1).unwrap();
        assert_eq!(share.fpe_pairs_per_group, 500);
        assert_eq!(share.bpe_pairs_per_region, 500);
    }
}
