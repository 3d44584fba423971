//! Fixed-geometry bucketed hash table used by both engine tiers.
//!
//! A table is a grid of `bucket_count` buckets times `slots_per_bucket`
//! slots. Every slot stores one key zero-padded to the table's
//! `slot_width` plus a 32-bit value, mirroring a memory laid out as
//! fixed-size rows:
//!
//! ```text
//! bucket 0: | key (slot_width B) value | key value | key value | key value |
//! bucket 1: | ...                                                          |
//! ```
//!
//! A key hashes to exactly one bucket. On a miss with a full bucket the
//! least-recently-written slot is evicted to make room, and the displaced
//! pair is handed back to the caller, so a pair never disappears: it is
//! aggregated, resident, or returned.

use crate::wire::{AggOp, KeyValuePair};

/// FNV-1a, 32-bit, over the unpadded key bytes. Both engine tiers use this
/// same function so a key lands in the same bucket index space everywhere.
pub fn hash_key(key: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in key {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

#[derive(Debug, Clone)]
struct Slot {
    /// Key bytes padded with zeros to `slot_width`.
    key: Box<[u8]>,
    key_len: u8,
    value: i32,
    last_write: u64,
}

impl Slot {
    fn matches(&self, key: &[u8]) -> bool {
        self.key_len as usize == key.len() && &self.key[..key.len()] == key
    }

    fn to_pair(&self) -> KeyValuePair {
        KeyValuePair::new(self.key[..self.key_len as usize].to_vec(), self.value)
            .expect("resident key length was validated on entry")
    }
}

/// Outcome of offering one pair to a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableEffect {
    /// Key was resident; values folded in place.
    Aggregated,
    /// Key was new and a free slot existed.
    Stored,
    /// Key was new, the bucket was full: the returned pair was displaced
    /// (the incoming pair now occupies its slot).
    Evicted(KeyValuePair),
    /// The table has zero capacity; the incoming pair passes through.
    Bypassed(KeyValuePair),
}

#[derive(Debug, Clone)]
pub struct HashTable {
    slot_width: usize,
    slots_per_bucket: usize,
    bucket_count: usize,
    slots: Vec<Option<Slot>>,
    occupied: usize,
    write_clock: u64,
}

impl HashTable {
    /// Builds a table able to hold `capacity_pairs` entries of keys up to
    /// `slot_width` bytes. A bucket never exceeds the capacity, so small
    /// capacities degrade to a single narrower bucket; `capacity_pairs`
    /// that is not a multiple of the bucket size rounds down.
    pub fn new(slot_width: usize, slots_per_bucket: usize, capacity_pairs: usize) -> HashTable {
        let spb = slots_per_bucket.max(1).min(capacity_pairs.max(1));
        let bucket_count = capacity_pairs / spb;
        HashTable {
            slot_width,
            slots_per_bucket: spb,
            bucket_count,
            slots: vec![None; bucket_count * spb],
            occupied: 0,
            write_clock: 0,
        }
    }

    pub fn capacity_pairs(&self) -> usize {
        self.bucket_count * self.slots_per_bucket
    }

    pub fn occupied(&self) -> usize {
        self.occupied
    }

    pub fn slot_width(&self) -> usize {
        self.slot_width
    }

    fn pad(&self, key: &[u8]) -> Box<[u8]> {
        let mut padded = vec![0u8; self.slot_width];
        padded[..key.len()].copy_from_slice(key);
        padded.into_boxed_slice()
    }

    /// Offers one pair. The caller supplies the operator its tree is bound
    /// to. Keys longer than `slot_width` are a caller bug.
    pub fn process(&mut self, pair: KeyValuePair, op: AggOp) -> TableEffect {
        assert!(pair.key_len() <= self.slot_width, "key wider than slot");
        if self.bucket_count == 0 {
            return TableEffect::Bypassed(pair);
        }
        let bucket = hash_key(pair.key()) as usize % self.bucket_count;
        let base = bucket * self.slots_per_bucket;
        let range = base..base + self.slots_per_bucket;

        self.write_clock += 1;
        let now = self.write_clock;

        let mut free: Option<usize> = None;
        let mut victim = base;
        let mut victim_age = u64::MAX;
        for i in range {
            match &self.slots[i] {
                Some(slot) => {
                    if slot.matches(pair.key()) {
                        let slot = self.slots[i].as_mut().unwrap();
                        slot.value = op.fold(slot.value, pair.value);
                        slot.last_write = now;
                        return TableEffect::Aggregated;
                    }
                    if slot.last_write < victim_age {
                        victim_age = slot.last_write;
                        victim = i;
                    }
                }
                None => {
                    if free.is_none() {
                        free = Some(i);
                    }
                }
            }
        }

        let fresh = Slot {
            key: self.pad(pair.key()),
            key_len: pair.key_len() as u8,
            value: pair.value,
            last_write: now,
        };
        match free {
            Some(i) => {
                self.slots[i] = Some(fresh);
                self.occupied += 1;
                TableEffect::Stored
            }
            None => {
                let old = self.slots[victim].replace(fresh).expect("victim slot occupied");
                TableEffect::Evicted(old.to_pair())
            }
        }
    }

    /// Removes and returns every resident pair in (bucket, slot) order.
    pub fn drain(&mut self) -> Vec<KeyValuePair> {
        let mut out = Vec::with_capacity(self.occupied);
        for slot in &mut self.slots {
            if let Some(s) = slot.take() {
                out.push(s.to_pair());
            }
        }
        self.occupied = 0;
        out
    }

    /// Resident pairs in (bucket, slot) order without clearing.
    pub fn scan(&self) -> Vec<KeyValuePair> {
        self.slots.iter().flatten().map(Slot::to_pair).collect()
    }

    #[cfg(test)]
    fn padding_is_zeroed(&self) -> bool {
        self.slots.iter().flatten().all(|s| {
            s.key[s.key_len as usize..].iter().all(|&b| b == 0)
                && s.key.len() == self.slot_width
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(key: &[u8], value: i32) -> KeyValuePair {
        KeyValuePair::new(key.to_vec(), value).unwrap()
    }

    #[test]
    fn hash_is_deterministic_and_published() {
        // FNV-1a reference values.
        assert_eq!(hash_key(b""), 0x811c_9dc5);
        assert_eq!(hash_key(b"a"), 0xe40c_292c);
        assert_eq!(hash_key(b"foobar"), 0xbf9c_f968);
        assert_eq!(hash_key(b"key-17"), hash_key(b"key-17"));
    }

    #[test]
    fn bucket_indices_spread_within_three_sigma() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let buckets = 256usize;
        let draws = 100_000usize;
        let mut counts = vec![0u64; buckets];
        let mut key = [0u8; 16];
        for _ in 0..draws {
            rng.fill_bytes(&mut key);
            counts[hash_key(&key) as usize % buckets] += 1;
        }
        let expected = draws as f64 / buckets as f64;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let df = (buckets - 1) as f64;
        let bound = df + 3.0 * (2.0 * df).sqrt();
        assert!(chi2 < bound, "chi-square {chi2:.1} exceeds {bound:.1}");
    }

    #[test]
    fn store_then_aggregate() {
        let mut t = HashTable::new(8, 4, 16);
        assert_eq!(t.process(pair(b"k", 5), AggOp::Sum), TableEffect::Stored);
        assert_eq!(t.process(pair(b"k", 3), AggOp::Sum), TableEffect::Aggregated);
        assert_eq!(t.occupied(), 1);
        let drained = t.drain();
        assert_eq!(drained, vec![pair(b"k", 8)]);
        assert_eq!(t.occupied(), 0);
    }

    #[test]
    fn padded_keys_of_different_lengths_stay_distinct() {
        let mut t = HashTable::new(8, 8, 8);
        // "a" and "a\0" pad to the same slot bytes but differ in length.
        assert_eq!(t.process(pair(b"a", 1), AggOp::Sum), TableEffect::Stored);
        assert_eq!(t.process(pair(b"a\0", 10), AggOp::Sum), TableEffect::Stored);
        assert_eq!(t.process(pair(b"a", 2), AggOp::Sum), TableEffect::Aggregated);
        let mut drained = t.drain();
        drained.sort();
        assert_eq!(drained, vec![pair(b"a", 3), pair(b"a\0", 10)]);
        assert!(t.padding_is_zeroed());
    }

    #[test]
    fn padding_beyond_key_is_zero() {
        let mut t = HashTable::new(64, 4, 8);
        t.process(pair(&[0xff; 17], 1), AggOp::Sum);
        assert!(t.padding_is_zeroed());
    }

    #[test]
    fn eviction_picks_least_recently_written() {
        // Single bucket of 2 slots: inserts and touches are fully visible.
        let mut t = HashTable::new(8, 2, 2);
        t.process(pair(b"old", 1), AggOp::Sum);
        t.process(pair(b"new", 2), AggOp::Sum);
        // Touch "old" so "new" becomes the least recently written.
        t.process(pair(b"old", 10), AggOp::Sum);
        match t.process(pair(b"third", 3), AggOp::Sum) {
            TableEffect::Evicted(victim) => assert_eq!(victim, pair(b"new", 2)),
            other => panic!("expected eviction, got {other:?}"),
        }
        let mut rest = t.drain();
        rest.sort();
        assert_eq!(rest, vec![pair(b"old", 11), pair(b"third", 3)]);
    }

    #[test]
    fn zero_capacity_bypasses() {
        let mut t = HashTable::new(8, 4, 0);
        assert_eq!(t.capacity_pairs(), 0);
        assert_eq!(t.process(pair(b"x", 9), AggOp::Sum), TableEffect::Bypassed(pair(b"x", 9)));
        assert_eq!(t.occupied(), 0);
    }

    #[test]
    fn capacity_below_bucket_size_shrinks_bucket() {
        let t = HashTable::new(8, 4, 2);
        assert_eq!(t.capacity_pairs(), 2);
        let t = HashTable::new(8, 4, 10);
        assert_eq!(t.capacity_pairs(), 8, "rounds down to whole buckets");
    }

    #[test]
    fn single_bucket_acts_fully_associative() {
        let mut t = HashTable::new(8, 100, 100);
        for i in 0..100u32 {
            assert_eq!(
                t.process(pair(&i.to_be_bytes(), 1), AggOp::Sum),
                TableEffect::Stored
            );
        }
        assert_eq!(t.occupied(), 100);
        match t.process(pair(b"overflow", 1), AggOp::Sum) {
            TableEffect::Evicted(victim) => {
                assert_eq!(victim, pair(&0u32.to_be_bytes(), 1), "oldest write evicted");
            }
            other => panic!("expected eviction, got {other:?}"),
        }
    }

    #[test]
    fn max_and_min_fold_in_place() {
        let mut t = HashTable::new(8, 4, 4);
        t.process(pair(b"m", 5), AggOp::Max);
        t.process(pair(b"m", 9), AggOp::Max);
        t.process(pair(b"m", 2), AggOp::Max);
        assert_eq!(t.drain(), vec![pair(b"m", 9)]);
        t.process(pair(b"m", 5), AggOp::Min);
        t.process(pair(b"m", -7), AggOp::Min);
        assert_eq!(t.drain(), vec![pair(b"m", -7)]);
    }

    #[test]
    fn sum_wraps_two_complement() {
        let mut t = HashTable::new(8, 4, 4);
        t.process(pair(b"w", i32::MAX), AggOp::Sum);
        t.process(pair(b"w", 1), AggOp::Sum);
        assert_eq!(t.drain(), vec![pair(b"w", i32::MIN)]);
    }

    #[test]
    fn drain_returns_unpadded_keys() {
        let mut t = HashTable::new(16, 4, 4);
        t.process(pair(b"short", 1), AggOp::Sum);
        let out = t.drain();
        assert_eq!(out[0].key(), b"short");
    }
}
