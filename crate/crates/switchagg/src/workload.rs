//! Deterministic key-value workload generation and packetization.
//!
//! A workload is fully determined by its spec: the same seed always yields
//! the same keys, values, and per-sender split, independent of how the
//! pairs are later packed into packets. Key identities are small integers;
//! the byte form of key `id` embeds the big-endian tail of `id` in its
//! last bytes so distinct ids can never collide, while the leading bytes
//! and the length are pseudo-random so hashing sees realistic variety.
//!
//! Two shapes are supported:
//!
//! - even: every key appears the same number of times (off by at most one
//!   across keys), with the whole stream shuffled once so any window of
//!   the sequence looks alike;
//! - skewed: each sender draws keys independently with frequency
//!   proportional to `1/rank^s`.
//!
//! Packing is greedy: pairs fill an aggregation packet until the next one
//! would push the encoded frame past the MTU.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Zipf};

use crate::wire::{
    AggOp, AggregationPacket, KeyValuePair, AGG_FIXED_LEN, FRAME_HEADER_LEN, MAX_KEY_LEN,
    PAIR_META_LEN, VALUE_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    InvalidSpec(String),
    PairTooLarge { pair_bytes: usize, budget: usize },
}

impl fmt::Display for WorkloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadError::InvalidSpec(msg) => write!(f, "invalid workload spec: {msg}"),
            WorkloadError::PairTooLarge { pair_bytes, budget } => write!(
                f,
                "pair needs {pair_bytes} bytes but the packet payload budget is {budget}"
            ),
        }
    }
}

impl std::error::Error for WorkloadError {}

fn invalid(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::InvalidSpec(msg.into())
}

/// How key frequencies are shaped.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KeyDistribution {
    Even,
    Zipf { s: f64 },
}

/// How much traffic to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Total encoded pair bytes (length metadata + key + value), summed
    /// over all senders; met to within one pair.
    Bytes(u64),
    /// Exact total pair count.
    Pairs(u64),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WorkloadSpec {
    pub budget: Budget,
    /// Number of distinct keys the generator may use.
    pub key_variety: u64,
    pub distribution: KeyDistribution,
    /// Inclusive bounds on generated key length in bytes.
    pub key_len_range: (u8, u8),
    pub seed: u64,
    pub op: AggOp,
    pub mapper_count: u16,
}

impl Default for WorkloadSpec {
    fn default() -> WorkloadSpec {
        WorkloadSpec {
            budget: Budget::Pairs(10_000),
            key_variety: 1_000,
            distribution: KeyDistribution::Even,
            key_len_range: (16, 64),
            seed: 0,
            op: AggOp::Sum,
            mapper_count: 1,
        }
    }
}

const SALT_KEY_LEN: u64 = 0x6b65795f6c656e73;
const SALT_KEY_BYTES: u64 = 0x6b65795f62797465;
const SALT_VALUE: u64 = 0x76616c75655f5f5f;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn mix(seed: u64, stream: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(salt)))
}

impl WorkloadSpec {
    fn validate(&self) -> Result<(), WorkloadError> {
        let (lo, hi) = self.key_len_range;
        if self.key_variety == 0 {
            return Err(invalid("key variety must be at least 1"));
        }
        if self.key_variety > u32::MAX as u64 {
            return Err(invalid(format!(
                "key variety {} exceeds the supported maximum {}",
                self.key_variety,
                u32::MAX
            )));
        }
        if lo == 0 || hi as usize > MAX_KEY_LEN || lo > hi {
            return Err(invalid(format!(
                "key length range {lo}..={hi} outside 1..={MAX_KEY_LEN}"
            )));
        }
        // Distinct ids must stay distinguishable inside the shortest key's
        // identity tail (up to 8 bytes of the id fit in a key).
        let tail = (lo as u32).min(8);
        if tail < 8 && self.key_variety > 1u64 << (8 * tail) {
            return Err(invalid(format!(
                "key variety {} cannot be kept collision-free in {tail}-byte keys",
                self.key_variety
            )));
        }
        if self.mapper_count == 0 {
            return Err(invalid("at least one mapper required"));
        }
        match self.budget {
            Budget::Pairs(0) => Err(invalid("pair budget must be at least 1")),
            Budget::Bytes(0) => Err(invalid("byte budget must be at least 1")),
            _ => Ok(()),
        }
    }

    /// Deterministic key length for key `id`, uniform over the range.
    pub fn key_len_of(&self, id: u64) -> u8 {
        let (lo, hi) = self.key_len_range;
        let span = (hi - lo) as u64 + 1;
        lo + (mix(self.seed, id, SALT_KEY_LEN) % span) as u8
    }

    /// Deterministic key bytes for key `id`: pseudo-random prefix, then
    /// the big-endian tail of `id` for injectivity.
    pub fn key_bytes_of(&self, id: u64) -> Vec<u8> {
        let len = self.key_len_of(id) as usize;
        let tail = len.min(8);
        let mut bytes = Vec::with_capacity(len);
        let mut state = mix(self.seed, id, SALT_KEY_BYTES);
        while bytes.len() < len - tail {
            state = splitmix64(state);
            let chunk = state.to_be_bytes();
            let take = (len - tail - bytes.len()).min(8);
            bytes.extend_from_slice(&chunk[..take]);
        }
        bytes.extend_from_slice(&id.to_be_bytes()[8 - tail..]);
        bytes
    }

    /// Encoded pair bytes for key `id` (length metadata + key + value).
    pub fn pair_bytes_of(&self, id: u64) -> u64 {
        PAIR_META_LEN as u64 + self.key_len_of(id) as u64 + VALUE_LEN as u64
    }

    fn value_of(&self, stream: u64) -> i32 {
        (mix(self.seed, stream, SALT_VALUE) % 1_000) as i32 + 1
    }
}

enum Layout {
    /// One globally shuffled id sequence; sender `m` owns the indices
    /// congruent to `m` modulo the sender count.
    Even { ids: Arc<Vec<u32>> },
    /// Independent per-sender draws.
    PerMapper { ids: Vec<Vec<u32>> },
}

/// A fully generated workload: per-sender key-id streams plus the
/// deterministic id-to-bytes mapping.
pub struct Workload {
    spec: WorkloadSpec,
    layout: Layout,
    total_pairs: u64,
    total_pair_bytes: u64,
}

impl Workload {
    pub fn new(spec: WorkloadSpec) -> Result<Workload, WorkloadError> {
        spec.validate()?;
        let layout = match spec.distribution {
            KeyDistribution::Even => Layout::Even { ids: Arc::new(even_ids(&spec)?) },
            KeyDistribution::Zipf { s } => Layout::PerMapper { ids: zipf_ids(&spec, s)? },
        };
        let (mut total_pairs, mut total_pair_bytes) = (0u64, 0u64);
        let mut count_ids = |ids: &[u32]| {
            for &id in ids {
                total_pairs += 1;
                total_pair_bytes += spec.pair_bytes_of(id as u64);
            }
        };
        match &layout {
            Layout::Even { ids } => count_ids(ids),
            Layout::PerMapper { ids } => ids.iter().for_each(|v| count_ids(v)),
        }
        Ok(Workload { spec, layout, total_pairs, total_pair_bytes })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    /// Total encoded pair bytes across all senders.
    pub fn total_pair_bytes(&self) -> u64 {
        self.total_pair_bytes
    }

    pub fn mapper_pair_count(&self, mapper: u16) -> u64 {
        match &self.layout {
            Layout::Even { ids } => {
                let w = self.spec.mapper_count as u64;
                let m = ids.len() as u64;
                m / w + u64::from(m % w > mapper as u64)
            }
            Layout::PerMapper { ids } => {
                ids.get(mapper as usize).map_or(0, |v| v.len() as u64)
            }
        }
    }

    /// The `index`-th pair of sender `mapper`.
    pub fn pair_at(&self, mapper: u16, index: u64) -> Option<KeyValuePair> {
        let (id, value_stream) = match &self.layout {
            Layout::Even { ids } => {
                let global = index.checked_mul(self.spec.mapper_count as u64)? + mapper as u64;
                let id = *ids.get(usize::try_from(global).ok()?)?;
                (id, global)
            }
            Layout::PerMapper { ids } => {
                let id = *ids.get(mapper as usize)?.get(usize::try_from(index).ok()?)?;
                (id, ((mapper as u64) << 40) | index)
            }
        };
        let key = self.spec.key_bytes_of(id as u64);
        let value = self.spec.value_of(value_stream);
        Some(KeyValuePair::new(key, value).expect("generated key length is always valid"))
    }

    /// All pairs of one sender, in send order.
    pub fn mapper_pairs(&self, mapper: u16) -> Vec<KeyValuePair> {
        (0..self.mapper_pair_count(mapper))
            .map(|i| self.pair_at(mapper, i).expect("index within count"))
            .collect()
    }

    /// Folds every pair of every sender with `op`, keyed by key bytes —
    /// the ground truth any aggregation path must reproduce.
    pub fn reference_fold(&self, op: AggOp) -> BTreeMap<Vec<u8>, i32> {
        let mut acc: BTreeMap<Vec<u8>, i32> = BTreeMap::new();
        for mapper in 0..self.spec.mapper_count {
            for index in 0..self.mapper_pair_count(mapper) {
                let pair = self.pair_at(mapper, index).expect("index within count");
                let value = pair.value;
                acc.entry(pair.into_key())
                    .and_modify(|v| *v = op.fold(*v, value))
                    .or_insert(value);
            }
        }
        acc
    }

    /// Number of distinct key ids that actually appear.
    pub fn distinct_keys_used(&self) -> u64 {
        let mut seen = vec![false; self.spec.key_variety as usize];
        let mut mark = |ids: &[u32]| ids.iter().for_each(|&id| seen[id as usize] = true);
        match &self.layout {
            Layout::Even { ids } => mark(ids),
            Layout::PerMapper { ids } => ids.iter().for_each(|v| mark(v)),
        }
        seen.iter().filter(|&&s| s).count() as u64
    }
}

/// Builds the evenly distributed id sequence: `j mod N` repeated to the
/// budget, then one whole-stream shuffle.
fn even_ids(spec: &WorkloadSpec) -> Result<Vec<u32>, WorkloadError> {
    let n = spec.key_variety;
    let total = match spec.budget {
        Budget::Pairs(p) => p,
        Budget::Bytes(b) => {
            // One cycle visits every id once; prefix-walk the remainder.
            let cycle: u64 = (0..n).map(|id| spec.pair_bytes_of(id)).sum();
            let mut count = (b / cycle) * n;
            let mut used = (b / cycle) * cycle;
            for id in 0..n {
                let next = spec.pair_bytes_of(id);
                if used + next > b {
                    // Take the closer side of the budget line.
                    if (used + next) - b < b - used {
                        count += 1;
                    }
                    break;
                }
                used += next;
                count += 1;
            }
            count
        }
    };
    if total == 0 {
        return Err(invalid("byte budget smaller than a single pair"));
    }
    let total = usize::try_from(total).map_err(|_| invalid("budget too large for memory"))?;
    let mut ids: Vec<u32> = (0..total).map(|j| (j as u64 % n) as u32).collect();
    ids.shuffle(&mut ChaCha12Rng::seed_from_u64(spec.seed));
    Ok(ids)
}

/// Builds independent per-sender skewed draws; each sender consumes its
/// share of the budget.
fn zipf_ids(spec: &WorkloadSpec, s: f64) -> Result<Vec<Vec<u32>>, WorkloadError> {
    let w = spec.mapper_count as u64;
    let zipf = Zipf::new(spec.key_variety, s)
        .map_err(|e| invalid(format!("bad skew parameter {s}: {e}")))?;
    let mut out = Vec::with_capacity(w as usize);
    for mapper in 0..w {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(mapper + 1);
        let mut ids = Vec::new();
        match spec.budget {
            Budget::Pairs(p) => {
                let share = p / w + u64::from(p % w > mapper);
                ids.reserve(share as usize);
                for _ in 0..share {
                    ids.push(zipf.sample(&mut rng) as u32 - 1);
                }
            }
            Budget::Bytes(b) => {
                let share = b / w + u64::from(b % w > mapper);
                let mut used = 0u64;
                loop {
                    let id = zipf.sample(&mut rng) as u32 - 1;
                    let next = spec.pair_bytes_of(id as u64);
                    if used + next > share {
                        if (used + next) - share < share - used {
                            ids.push(id);
                        }
                        break;
                    }
                    used += next;
                    ids.push(id);
                }
            }
        }
        out.push(ids);
    }
    if out.iter().all(|v| v.is_empty()) {
        return Err(invalid("byte budget smaller than a single pair"));
    }
    Ok(out)
}

/// Greedily packs pairs into aggregation packets that encode within
/// `mtu`. With `mark_eot`, the last packet carries the end-of-task flag
/// (an empty input still yields one empty flagged packet).
pub fn pack(
    pairs: &[KeyValuePair],
    tree_id: u16,
    op: AggOp,
    mtu: usize,
    mark_eot: bool,
) -> Result<Vec<AggregationPacket>, WorkloadError> {
    let overhead = FRAME_HEADER_LEN + AGG_FIXED_LEN;
    if mtu <= overhead {
        return Err(invalid(format!("mtu {mtu} cannot fit the {overhead}-byte envelope")));
    }
    let budget = mtu - overhead;
    let mut packets = Vec::new();
    let mut current: Vec<KeyValuePair> = Vec::new();
    let mut current_bytes = 0usize;
    for pair in pairs {
        let len = pair.encoded_len();
        if len > budget {
            return Err(WorkloadError::PairTooLarge { pair_bytes: len, budget });
        }
        if current_bytes + len > budget || current.len() == u16::MAX as usize {
            packets.push(AggregationPacket {
                tree_id,
                eot: false,
                op,
                pairs: std::mem::take(&mut current),
            });
            current_bytes = 0;
        }
        current_bytes += len;
        current.push(pair.clone());
    }
    if !current.is_empty() || (packets.is_empty() && mark_eot) {
        packets.push(AggregationPacket { tree_id, eot: false, op, pairs: current });
    }
    if mark_eot {
        if let Some(last) = packets.last_mut() {
            last.eot = true;
        }
    }
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{decode, encode, Packet, PacketBody, DEFAULT_MTU};

    fn spec(budget: Budget, variety: u64, dist: KeyDistribution, mappers: u16) -> WorkloadSpec {
        WorkloadSpec {
            budget,
            key_variety: variety,
            distribution: dist,
            key_len_range: (16, 64),
            seed: 42,
            op: AggOp::Sum,
            mapper_count: mappers,
        }
    }

    #[test]
    fn same_spec_same_workload() {
        let s = spec(Budget::Pairs(5_000), 500, KeyDistribution::Even, 3);
        let a = Workload::new(s.clone()).unwrap();
        let b = Workload::new(s).unwrap();
        for m in 0..3 {
            assert_eq!(a.mapper_pairs(m), b.mapper_pairs(m));
        }
        assert_eq!(a.total_pair_bytes(), b.total_pair_bytes());
    }

    #[test]
    fn key_bytes_are_injective_and_mapper_independent() {
        let s = spec(Budget::Pairs(1_000), 200, KeyDistribution::Even, 4);
        let mut seen = std::collections::HashMap::new();
        for id in 0..200u64 {
            let bytes = s.key_bytes_of(id);
            assert_eq!(bytes.len(), s.key_len_of(id) as usize);
            assert!(
                seen.insert(bytes, id).is_none(),
                "two ids produced identical key bytes"
            );
        }
        // The same id seen from different mappers yields the same bytes.
        let w = Workload::new(s.clone()).unwrap();
        let mut by_key: std::collections::HashMap<Vec<u8>, ()> = std::collections::HashMap::new();
        for m in 0..4 {
            for p in w.mapper_pairs(m) {
                by_key.insert(p.into_key(), ());
            }
        }
        assert_eq!(by_key.len() as u64, w.distinct_keys_used());
    }

    #[test]
    fn even_counts_differ_by_at_most_one() {
        let w =
            Workload::new(spec(Budget::Pairs(10_007), 100, KeyDistribution::Even, 3)).unwrap();
        let mut counts = vec![0u64; 100];
        for m in 0..3 {
            for i in 0..w.mapper_pair_count(m) {
                let pair = w.pair_at(m, i).unwrap();
                // Recover the id from the key's identity tail.
                let key = pair.key();
                let mut id = [0u8; 8];
                id.copy_from_slice(&key[key.len() - 8..]);
                counts[u64::from_be_bytes(id) as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        assert_eq!(total, 10_007);
        assert_eq!(total, w.total_pairs());
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "counts must be even to within one: {min}..{max}");
    }

    #[test]
    fn byte_budget_met_within_one_pair() {
        let budget = 1_000_000u64;
        let w = Workload::new(spec(Budget::Bytes(budget), 777, KeyDistribution::Even, 2)).unwrap();
        let max_pair = (PAIR_META_LEN + MAX_KEY_LEN + VALUE_LEN) as u64;
        let got = w.total_pair_bytes();
        assert!(
            got.abs_diff(budget) <= max_pair,
            "generated {got} bytes for a {budget}-byte budget"
        );

        let z = Workload::new(spec(Budget::Bytes(budget), 777, KeyDistribution::Zipf { s: 0.99 }, 2))
            .unwrap();
        assert!(z.total_pair_bytes().abs_diff(budget) <= 2 * max_pair);
    }

    #[test]
    fn zipf_mappers_draw_independently_but_reproducibly() {
        let s = spec(Budget::Pairs(2_000), 300, KeyDistribution::Zipf { s: 0.99 }, 2);
        let a = Workload::new(s.clone()).unwrap();
        let b = Workload::new(s).unwrap();
        assert_eq!(a.mapper_pairs(0), b.mapper_pairs(0));
        assert_eq!(a.mapper_pairs(1), b.mapper_pairs(1));
        assert_ne!(
            a.mapper_pairs(0),
            a.mapper_pairs(1),
            "different mappers must not replay the same stream"
        );
    }

    #[test]
    fn zipf_rank_frequency_slope_matches_skew() {
        let s = WorkloadSpec {
            budget: Budget::Pairs(1_000_000),
            key_variety: 10_000,
            distribution: KeyDistribution::Zipf { s: 0.99 },
            key_len_range: (16, 16),
            seed: 7,
            op: AggOp::Sum,
            mapper_count: 1,
        };
        let w = Workload::new(s.clone()).unwrap();
        let mut counts = vec![0u64; 10_000];
        match &w.layout {
            Layout::PerMapper { ids } => {
                for &id in &ids[0] {
                    counts[id as usize] += 1;
                }
            }
            _ => unreachable!(),
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        // Least-squares slope of log(count) against log(rank) over the
        // well-populated head.
        let points: Vec<(f64, f64)> = (0..300)
            .map(|r| (((r + 1) as f64).ln(), (counts[r] as f64).ln()))
            .collect();
        let n = points.len() as f64;
        let (sx, sy): (f64, f64) =
            points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (sxx, sxy): (f64, f64) =
            points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x * x, b + x * y));
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope + 0.99).abs() < 0.05,
            "rank-frequency slope {slope:.3} should be near -0.99"
        );
    }

    #[test]
    fn pack_round_trips_through_the_codec() {
        let w = Workload::new(spec(Budget::Pairs(400), 50, KeyDistribution::Even, 1)).unwrap();
        let pairs = w.mapper_pairs(0);
        let packets = pack(&pairs, 9, AggOp::Sum, DEFAULT_MTU, true).unwrap();
        assert!(packets.len() > 1, "400 pairs cannot fit one default-mtu packet");
        let mut recovered = Vec::new();
        for (i, p) in packets.iter().enumerate() {
            assert_eq!(p.eot, i == packets.len() - 1, "only the last packet ends the task");
            let frame = Packet { src_node: 1, dst_node: 2, body: PacketBody::Aggregation(p.clone()) };
            let bytes = encode(&frame, DEFAULT_MTU).unwrap();
            assert!(bytes.len() <= DEFAULT_MTU);
            match decode(&bytes).unwrap().body {
                PacketBody::Aggregation(a) => recovered.extend(a.pairs),
                other => panic!("unexpected body {other:?}"),
            }
        }
        assert_eq!(recovered, pairs);
    }

    #[test]
    fn pack_empty_stream_still_signals_end_of_task() {
        let packets = pack(&[], 3, AggOp::Max, DEFAULT_MTU, true).unwrap();
        assert_eq!(packets.len(), 1);
        assert!(packets[0].eot);
        assert!(packets[0].pairs.is_empty());
        assert!(pack(&[], 3, AggOp::Max, DEFAULT_MTU, false).unwrap().is_empty());
    }

    #[test]
    fn pack_rejects_pairs_beyond_the_budget() {
        let pair = KeyValuePair::new(vec![7u8; 40], 1).unwrap();
        let err = pack(&[pair], 1, AggOp::Sum, 40, false).unwrap_err();
        assert!(matches!(err, WorkloadError::PairTooLarge { pair_bytes: 46, budget: 29 }));
        assert!(pack(&[], 1, AggOp::Sum, FRAME_HEADER_LEN + AGG_FIXED_LEN, false).is_err());
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let base = spec(Budget::Pairs(10), 10, KeyDistribution::Even, 1);
        for bad in [
            WorkloadSpec { key_variety: 0, ..base.clone() },
            WorkloadSpec { key_len_range: (0, 8), ..base.clone() },
            WorkloadSpec { key_len_range: (8, 65), ..base.clone() },
            WorkloadSpec { key_len_range: (9, 8), ..base.clone() },
            WorkloadSpec { mapper_count: 0, ..base.clone() },
            WorkloadSpec { budget: Budget::Pairs(0), ..base.clone() },
            WorkloadSpec { key_variety: 300, key_len_range: (1, 4), ..base.clone() },
        ] {
            assert!(Workload::new(bad).is_err());
        }
        // One-byte keys still work while the variety fits.
        let tiny = WorkloadSpec {
            key_variety: 256,
            key_len_range: (1, 1),
            budget: Budget::Pairs(512),
            ..base
        };
        let w = Workload::new(tiny).unwrap();
        assert_eq!(w.distinct_keys_used(), 256);
    }

    #[test]
    fn reference_fold_covers_every_sender() {
        let s = spec(Budget::Pairs(1_000), 40, KeyDistribution::Even, 4);
        let w = Workload::new(s).unwrap();
        let folded = w.reference_fold(AggOp::Sum);
        assert_eq!(folded.len() as u64, w.distinct_keys_used());
        let mut by_hand: BTreeMap<Vec<u8>, i32> = BTreeMap::new();
        for m in 0..4 {
            for p in w.mapper_pairs(m) {
                let v = p.value;
                by_hand
                    .entry(p.into_key())
                    .and_modify(|acc| *acc = acc.wrapping_add(v))
                    .or_insert(v);
            }
        }
        assert_eq!(folded, by_hand);
    }
}
