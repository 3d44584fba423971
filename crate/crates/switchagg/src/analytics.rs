//! Closed-form traffic models and the idealized aggregation node.
//!
//! Three models quantify what in-network aggregation can save:
//!
//! - padding overhead: fixed-size pair slots waste bytes when actual pairs
//!   run short — the ratio of the fixed layout to the useful bytes;
//! - header overhead: total injected bytes for a payload split into
//!   packets that each pay a header;
//! - memory-bounded reduction: with `M` pairs over `N` distinct keys
//!   flowing through a node that can hold `C` pairs, the removable
//!   fraction is `1 - N/M` when everything fits and `C·(1/N - 1/M)` when
//!   it does not, bounded by `C/N`.
//!
//! The idealized node realizes the model's assumptions exactly: a
//! collision-free map of capacity `C` that aggregates matching keys,
//! stores new keys while room remains, and forwards the incoming pair
//! unaggregated when full. Chaining such nodes gives the multi-hop
//! reference, and both serve as oracles for the hash-table switch
//! simulation.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Zipf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    Domain(String),
}

impl fmt::Display for AnalyticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticsError::Domain(msg) => write!(f, "domain error: {msg}"),
        }
    }
}

impl std::error::Error for AnalyticsError {}

fn domain(msg: impl Into<String>) -> AnalyticsError {
    AnalyticsError::Domain(msg.into())
}

/// Ratio of bytes sent to bytes needed when a packet of `max_packet_bytes`
/// is divided into fixed slots of `slot_bytes` and each slot carries an
/// actual pair of `actual_lengths[i]` bytes.
pub fn padding_overhead(
    max_packet_bytes: u64,
    slot_bytes: u64,
    actual_lengths: &[u64],
) -> Result<f64, AnalyticsError> {
    if slot_bytes == 0 || slot_bytes > max_packet_bytes {
        return Err(domain(format!(
            "slot size {slot_bytes} outside 1..={max_packet_bytes}"
        )));
    }
    let slots = max_packet_bytes / slot_bytes;
    if actual_lengths.len() as u64 != slots {
        return Err(domain(format!(
            "expected {slots} slot lengths, got {}",
            actual_lengths.len()
        )));
    }
    let mut useful = 0u64;
    for &len in actual_lengths {
        if len == 0 || len > slot_bytes {
            return Err(domain(format!("pair length {len} outside 1..={slot_bytes}")));
        }
        useful += len;
    }
    Ok(max_packet_bytes as f64 / useful as f64)
}

/// Total bytes injected to carry `payload_bytes` of useful data in packets
/// of `payload_per_packet` bytes, each paying `header_bytes` of headers.
pub fn header_overhead(
    payload_bytes: u64,
    payload_per_packet: u64,
    header_bytes: u64,
) -> Result<u64, AnalyticsError> {
    if payload_per_packet == 0 {
        return Err(domain("payload per packet must be at least 1"));
    }
    Ok(payload_bytes + (payload_bytes / payload_per_packet) * header_bytes)
}

/// Inputs of the memory-bounded reduction model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ReductionParams {
    /// Total pairs flowing through the node.
    pub total_pairs: u64,
    /// Distinct keys among them.
    pub distinct_keys: u64,
    /// Pairs the node can hold.
    pub capacity_pairs: u64,
}

/// Fraction of traffic a capacity-limited node removes from an evenly
/// distributed stream.
pub fn reduction_model(p: &ReductionParams) -> Result<f64, AnalyticsError> {
    let (m, n, c) = (p.total_pairs, p.distinct_keys, p.capacity_pairs);
    if n == 0 || c == 0 {
        return Err(domain("distinct keys and capacity must be at least 1"));
    }
    if n > m {
        return Err(domain(format!(
            "distinct keys {n} exceed total pairs {m}; only the C/N bound applies"
        )));
    }
    let (m, n, c) = (m as f64, n as f64, c as f64);
    if n <= c {
        Ok(1.0 - n / m)
    } else {
        Ok(c * (1.0 / n - 1.0 / m))
    }
}

/// Upper bound on the reduction a capacity-`c` node can reach over `n`
/// distinct keys, however long the stream runs.
pub fn reduction_bound(capacity_pairs: u64, distinct_keys: u64) -> f64 {
    if distinct_keys == 0 {
        return 0.0;
    }
    (capacity_pairs as f64 / distinct_keys as f64).min(1.0)
}

/// The idealized aggregation node: an exact, collision-free key-value map
/// holding at most `capacity` keys. Matching keys always aggregate; a new
/// key is stored while room remains and forwarded downstream otherwise.
#[derive(Debug, Clone)]
pub struct IdealNode {
    capacity: usize,
    table: BTreeMap<u64, i64>,
    pub input_pairs: u64,
    pub forwarded_pairs: u64,
}

impl IdealNode {
    pub fn new(capacity: usize) -> IdealNode {
        IdealNode { capacity, table: BTreeMap::new(), input_pairs: 0, forwarded_pairs: 0 }
    }

    /// Offers one pair; returns it back when the node is full and the key
    /// is absent.
    pub fn offer(&mut self, key: u64, value: i64) -> Option<(u64, i64)> {
        self.input_pairs += 1;
        if let Some(v) = self.table.get_mut(&key) {
            *v = v.wrapping_add(value);
            return None;
        }
        if self.table.len() < self.capacity {
            self.table.insert(key, value);
            return None;
        }
        self.forwarded_pairs += 1;
        Some((key, value))
    }

    /// Empties the node, returning residents in key order.
    pub fn flush(&mut self) -> Vec<(u64, i64)> {
        self.input_pairs = 0;
        self.forwarded_pairs = 0;
        std::mem::take(&mut self.table).into_iter().collect()
    }

    pub fn occupied(&self) -> usize {
        self.table.len()
    }
}

/// Counts from running a stream through idealized aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct IdealRunStats {
    pub input_pairs: u64,
    pub output_pairs: u64,
}

impl IdealRunStats {
    /// 1 − output/input; zero for an empty stream.
    pub fn ratio(&self) -> f64 {
        if self.input_pairs == 0 {
            0.0
        } else {
            1.0 - self.output_pairs as f64 / self.input_pairs as f64
        }
    }
}

/// Runs one stream through a single idealized node and counts what comes
/// out (forwarded overflow plus the final flush).
pub fn ideal_run(
    stream: impl IntoIterator<Item = (u64, i64)>,
    capacity: usize,
) -> IdealRunStats {
    let mut node = IdealNode::new(capacity);
    let mut output = 0u64;
    let mut input = 0u64;
    for (k, v) in stream {
        input += 1;
        if node.offer(k, v).is_some() {
            output += 1;
        }
    }
    output += node.flush().len() as u64;
    IdealRunStats { input_pairs: input, output_pairs: output }
}

/// A chain of idealized nodes: each node's overflow and flush feed the
/// next, modeling aggregation across several hops.
#[derive(Debug, Clone)]
pub struct IdealChain {
    nodes: Vec<IdealNode>,
    pub input_pairs: u64,
    pub output_pairs: u64,
}

impl IdealChain {
    pub fn new(hops: usize, capacity_per_hop: usize) -> IdealChain {
        IdealChain {
            nodes: (0..hops).map(|_| IdealNode::new(capacity_per_hop)).collect(),
            input_pairs: 0,
            output_pairs: 0,
        }
    }

    fn cascade_from(&mut self, first: usize, key: u64, value: i64) {
        let mut pair = (key, value);
        for node in &mut self.nodes[first..] {
            match node.offer(pair.0, pair.1) {
                None => return,
                Some(p) => pair = p,
            }
        }
        self.output_pairs += 1;
    }

    /// Offers one pair at the head of the chain.
    pub fn offer(&mut self, key: u64, value: i64) {
        self.input_pairs += 1;
        self.cascade_from(0, key, value);
    }

    /// Ends the stream: flushes every hop in order into the hops behind
    /// it. Returns the end-to-end stats.
    pub fn finish(&mut self) -> IdealRunStats {
        for i in 0..self.nodes.len() {
            for (k, v) in self.nodes[i].flush() {
                if i + 1 < self.nodes.len() {
                    self.cascade_from(i + 1, k, v);
                } else {
                    self.output_pairs += 1;
                }
            }
        }
        IdealRunStats { input_pairs: self.input_pairs, output_pairs: self.output_pairs }
    }
}

/// Key-id stream shapes for the model checks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum StreamKind {
    /// Exactly even per-key counts (difference at most one), order
    /// shuffled over the whole stream.
    Even,
    /// Independent draws with frequency proportional to 1/rank^s.
    Zipf { s: f64 },
}

/// Generates a key-id stream of `total_pairs` over `distinct_keys`.
pub fn id_stream(
    kind: StreamKind,
    total_pairs: u64,
    distinct_keys: u64,
    seed: u64,
) -> Result<Vec<u64>, AnalyticsError> {
    if distinct_keys == 0 {
        return Err(domain("distinct keys must be at least 1"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match kind {
        StreamKind::Even => {
            let mut ids: Vec<u64> = (0..total_pairs).map(|j| j % distinct_keys).collect();
            ids.shuffle(&mut rng);
            Ok(ids)
        }
        StreamKind::Zipf { s } => {
            let zipf = Zipf::new(distinct_keys, s)
                .map_err(|e| domain(format!("bad skew parameter: {e}")))?;
            Ok((0..total_pairs).map(|_| zipf.sample(&mut rng) as u64 - 1).collect())
        }
    }
}

/// Runs the same flows (a) interleaved round-robin into one idealized node
/// and (b) concatenated into one idealized node, returning both ratios.
pub fn check_merge_equivalence(
    flows: &[Vec<(u64, i64)>],
    capacity: usize,
) -> (IdealRunStats, IdealRunStats) {
    let mut interleaved = Vec::new();
    let mut cursors = vec![0usize; flows.len()];
    loop {
        let mut progressed = false;
        for (flow, cursor) in flows.iter().zip(cursors.iter_mut()) {
            if *cursor < flow.len() {
                interleaved.push(flow[*cursor]);
                *cursor += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let merged: Vec<(u64, i64)> = flows.iter().flatten().copied().collect();
    (ideal_run(interleaved, capacity), ideal_run(merged, capacity))
}

/// End-to-end reduction of an idealized chain for every hop count in
/// `1..=hops`, each run over an identical stream.
pub fn check_multihop(
    params: &ReductionParams,
    hops: usize,
    kind: StreamKind,
    seed: u64,
) -> Result<Vec<(usize, f64)>, AnalyticsError> {
    if hops == 0 {
        return Err(domain("at least one hop required"));
    }
    let stream = id_stream(kind, params.total_pairs, params.distinct_keys, seed)?;
    let mut out = Vec::with_capacity(hops);
    for h in 1..=hops {
        let mut chain = IdealChain::new(h, params.capacity_pairs as usize);
        for &id in &stream {
            chain.offer(id, 1);
        }
        out.push((h, chain.finish().ratio()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_examples() {
        assert_eq!(padding_overhead(200, 20, &[20; 10]).unwrap(), 1.0);
        assert_eq!(padding_overhead(200, 20, &[10; 10]).unwrap(), 2.0);
        assert_eq!(padding_overhead(200, 20, &[1; 10]).unwrap(), 20.0);
    }

    #[test]
    fn padding_preconditions() {
        assert!(padding_overhead(200, 0, &[]).is_err());
        assert!(padding_overhead(200, 300, &[]).is_err());
        assert!(padding_overhead(200, 20, &[20; 9]).is_err(), "wrong slot count");
        assert!(padding_overhead(200, 20, &[21; 10]).is_err(), "pair exceeds slot");
        assert!(padding_overhead(200, 20, &[0; 10]).is_err(), "empty pair");
    }

    #[test]
    fn header_examples() {
        assert_eq!(header_overhead(0, 200, 58).unwrap(), 0);
        assert_eq!(header_overhead(1_000_000, 200, 58).unwrap(), 1_290_000);
        assert!(header_overhead(1, 0, 58).is_err());
    }

    #[test]
    fn small_packets_pay_about_a_quarter_more_headers() {
        let d = 100_000_000u64;
        let small = header_overhead(d, 200, 58).unwrap() as f64;
        let large = header_overhead(d, 1500, 58).unwrap() as f64;
        let extra_pct = (small / large - 1.0) * 100.0;
        assert!((23.3..=27.3).contains(&extra_pct), "extra header cost {extra_pct:.2}%");
    }

    #[test]
    fn reduction_model_branches() {
        // Nothing aggregatable when every pair is distinct.
        let p = ReductionParams { total_pairs: 100, distinct_keys: 100, capacity_pairs: 10 };
        assert_eq!(reduction_model(&p).unwrap(), 0.0);
        // Continuity where the branches meet.
        let at = ReductionParams { total_pairs: 1000, distinct_keys: 50, capacity_pairs: 50 };
        let below = reduction_model(&at).unwrap();
        assert!((below - (1.0 - 50.0 / 1000.0)).abs() < 1e-12);
        let over = ReductionParams { total_pairs: 1000, distinct_keys: 51, capacity_pairs: 50 };
        let v = reduction_model(&over).unwrap();
        assert!((v - 50.0 * (1.0 / 51.0 - 1.0 / 1000.0)).abs() < 1e-12);
        assert!(v < below);
    }

    #[test]
    fn gigabyte_scale_sits_below_ten_percent() {
        let p = ReductionParams {
            total_pairs: 53_687_091,
            distinct_keys: 8_388_600,
            capacity_pairs: 838_860,
        };
        let r = reduction_model(&p).unwrap();
        assert!((0.08..0.10).contains(&r), "ratio {r}");
        assert!((r - 0.084375).abs() < 1e-3);
    }

    #[test]
    fn model_rejects_more_keys_than_pairs() {
        let p = ReductionParams { total_pairs: 10, distinct_keys: 11, capacity_pairs: 5 };
        assert!(reduction_model(&p).is_err());
        assert!((reduction_bound(5, 500) - 0.01).abs() < 1e-12);
        assert_eq!(reduction_bound(10, 5), 1.0, "bound caps at 1");
    }

    #[test]
    fn model_monotone_in_keys_and_capacity() {
        let m = 100_000u64;
        let mut last = f64::INFINITY;
        for n in [10, 100, 1_000, 10_000, 100_000] {
            let r = reduction_model(&ReductionParams {
                total_pairs: m,
                distinct_keys: n,
                capacity_pairs: 1_000,
            })
            .unwrap();
            assert!(r <= last, "not non-increasing in distinct keys at {n}");
            assert!(r <= reduction_bound(1_000, n) + 1e-12);
            last = r;
        }
        let mut last = -1.0f64;
        for c in [1, 10, 100, 1_000, 10_000] {
            let r = reduction_model(&ReductionParams {
                total_pairs: m,
                distinct_keys: 5_000,
                capacity_pairs: c,
            })
            .unwrap();
            assert!(r >= last, "not non-decreasing in capacity at {c}");
            last = r;
        }
    }

    #[test]
    fn ideal_node_matches_model_exactly_on_even_streams() {
        // Divisible cases: the idealized node reproduces the model to the
        // pair, whatever the shuffle.
        for (m, n, c, seed) in
            [(10_000u64, 100u64, 1_000usize, 1u64), (10_000, 1_000, 100, 2), (9_000, 900, 900, 3)]
        {
            let stream = id_stream(StreamKind::Even, m, n, seed).unwrap();
            let stats = ideal_run(stream.into_iter().map(|k| (k, 1)), c);
            let expected_out = if n <= c as u64 { n } else { c as u64 + (n - c as u64) * (m / n) };
            assert_eq!(stats.output_pairs, expected_out, "m={m} n={n} c={c}");
            let model = reduction_model(&ReductionParams {
                total_pairs: m,
                distinct_keys: n,
                capacity_pairs: c as u64,
            })
            .unwrap();
            assert!((stats.ratio() - model).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_node_forwards_only_when_full() {
        let mut node = IdealNode::new(2);
        assert_eq!(node.offer(1, 5), None);
        assert_eq!(node.offer(2, 6), None);
        assert_eq!(node.offer(1, 1), None, "existing key aggregates past capacity");
        assert_eq!(node.offer(3, 7), Some((3, 7)), "new key bounces when full");
        assert_eq!(node.flush(), vec![(1, 6), (2, 6)]);
        assert_eq!(node.occupied(), 0);
    }

    #[test]
    fn merge_equivalence_small_exhaustive() {
        // Two flows of two pairs each: every interleaving of the four
        // pairs reduces identically when capacity covers the variety.
        let a = vec![(1u64, 1i64), (2, 1)];
        let b = vec![(2u64, 1i64), (3, 1)];
        let all: Vec<(u64, i64)> = a.iter().chain(&b).copied().collect();
        let reference = ideal_run(all.clone(), 10);
        // Choose positions of flow a within the merged sequence.
        for mask in 0u32..64 {
            if mask.count_ones() != 2 {
                continue;
            }
            let mut ia = a.iter();
            let mut ib = b.iter();
            let mut seq = Vec::new();
            for pos in 0..4 {
                if mask & (1 << pos) != 0 {
                    if let Some(p) = ia.next() {
                        seq.push(*p);
                    }
                } else if let Some(p) = ib.next() {
                    seq.push(*p);
                }
            }
            if seq.len() == 4 {
                assert_eq!(ideal_run(seq, 10).output_pairs, reference.output_pairs);
            }
        }
        let (multi, merged) = check_merge_equivalence(&[a, b], 10);
        assert_eq!(multi.output_pairs, merged.output_pairs);
        assert!((multi.ratio() - (1.0 - 3.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn single_hop_chain_equals_single_node() {
        let params =
            ReductionParams { total_pairs: 20_000, distinct_keys: 2_000, capacity_pairs: 250 };
        let stream = id_stream(StreamKind::Even, 20_000, 2_000, 7).unwrap();
        let single = ideal_run(stream.iter().map(|&k| (k, 1)), 250);
        let multi = check_multihop(&params, 1, StreamKind::Even, 7).unwrap();
        assert_eq!(multi.len(), 1);
        assert!((multi[0].1 - single.ratio()).abs() < 1e-12);
    }

    #[test]
    fn extra_hops_barely_move_the_ratio() {
        // Capacity far below variety: stacking hops adds capacity per hop
        // but each extra hop recovers only a sliver of traffic.
        let params =
            ReductionParams { total_pairs: 65_280, distinct_keys: 64_000, capacity_pairs: 1_000 };
        let ratios = check_multihop(&params, 4, StreamKind::Even, 11).unwrap();
        let values: Vec<f64> = ratios.iter().map(|(_, r)| *r).collect();
        let spread = values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.01, "spread {spread} ratios {values:?}");
        for w in values.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "more hops never reduce less");
        }
    }

    #[test]
    fn zipf_stream_is_skewed_and_deterministic() {
        let a = id_stream(StreamKind::Zipf { s: 0.99 }, 50_000, 1_000, 42).unwrap();
        let b = id_stream(StreamKind::Zipf { s: 0.99 }, 50_000, 1_000, 42).unwrap();
        assert_eq!(a, b);
        let mut counts = vec![0u64; 1_000];
        for &id in &a {
            counts[id as usize] += 1;
        }
        let top: u64 = counts[..10].iter().sum();
        assert!(top > 50_000 / 10, "head of the distribution dominates");
        assert!(counts[0] > counts[500], "rank 1 beats rank 501");
    }
}
