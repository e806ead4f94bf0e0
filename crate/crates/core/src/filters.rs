//! Hashing, counting Bloom filters and the dual counting Bloom filter (D-CBF).
//!
//! A D-CBF keeps two filters that both receive every insert but are cleared
//! on alternating epoch boundaries. The active one has always observed at
//! least one full epoch of history, so a row's blacklist state covers the
//! whole filter lifetime without false negatives.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::config::Picos;

/// Which index function family an [`H3HashSet`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HashFamily {
    /// `((row >> shift_j) ^ seed_j) & mask`. Cheap, but reseeding never
    /// changes which rows alias: `a ^ s == b ^ s` iff `a == b` after masking.
    ShiftXor,
    /// Binary matrix hash: the XOR of one random `q` value per set input bit,
    /// with the matrix regenerated from the per-function seed.
    #[default]
    H3,
}

/// Maps a row to one counter index per hash function.
pub trait RowHasher {
    fn hash_count(&self) -> usize;

    /// Index for function `j`; always below the filter size.
    fn index(&self, j: usize, row: u32) -> u32;

    /// Draws fresh seeds.
    fn reseed<R: RngCore + ?Sized>(&mut self, rng: &mut R);

    fn indices(&self, row: u32) -> Vec<u32> {
        (0..self.hash_count()).map(|j| self.index(j, row)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct H3HashSet {
    family: HashFamily,
    seeds: Vec<u64>,
    shifts: Vec<u32>,
    index_mask: u32,
    row_bits: u32,
    /// `row_bits` entries per function, used by [`HashFamily::H3`].
    q: Vec<u32>,
}

/// Number of bits needed to address `rows` rows.
pub fn row_address_bits(rows: u32) -> u32 {
    if rows <= 1 {
        1
    } else {
        32 - (rows - 1).leading_zeros()
    }
}

impl H3HashSet {
    /// Builds `hash_count` functions over `row_bits`-wide addresses into a
    /// table of `counters` (a power of two) entries. Shifts are spread evenly
    /// over the address, e.g. 0, 4, 8, 12 for four functions on 16-bit rows.
    pub fn new(family: HashFamily, hash_count: usize, counters: u32, row_bits: u32, seeds: Vec<u64>) -> Self {
        assert!(counters.is_power_of_two(), "filter size must be a power of two");
        assert_eq!(seeds.len(), hash_count, "one seed per hash function");
        let shifts = (0..hash_count).map(|j| (j as u32 * row_bits) / hash_count as u32).collect();
        let mut set = Self { family, seeds, shifts, index_mask: counters - 1, row_bits, q: Vec::new() };
        set.expand();
        set
    }

    /// Shift-XOR functions with explicit seeds and shifts.
    pub fn shift_xor(seeds: Vec<u64>, shifts: Vec<u32>, counters: u32) -> Self {
        assert!(counters.is_power_of_two(), "filter size must be a power of two");
        assert_eq!(seeds.len(), shifts.len(), "one shift per seed");
        Self { family: HashFamily::ShiftXor, row_bits: 32, seeds, shifts, index_mask: counters - 1, q: Vec::new() }
    }

    pub fn seeded<R: RngCore + ?Sized>(
        family: HashFamily,
        hash_count: usize,
        counters: u32,
        row_bits: u32,
        rng: &mut R,
    ) -> Self {
        let seeds = (0..hash_count).map(|_| rng.next_u64()).collect();
        Self::new(family, hash_count, counters, row_bits, seeds)
    }

    pub fn family(&self) -> HashFamily {
        self.family
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn shifts(&self) -> &[u32] {
        &self.shifts
    }

    pub fn index_mask(&self) -> u32 {
        self.index_mask
    }

    fn expand(&mut self) {
        self.q.clear();
        if self.family != HashFamily::H3 {
            return;
        }
        for &seed in &self.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..self.row_bits {
                self.q.push(rng.next_u32() & self.index_mask);
            }
        }
    }
}

impl RowHasher for H3HashSet {
    fn hash_count(&self) -> usize {
        self.seeds.len()
    }

    fn index(&self, j: usize, row: u32) -> u32 {
        match self.family {
            HashFamily::ShiftXor => {
                let shifted = row.checked_shr(self.shifts[j]).unwrap_or(0);
                (shifted ^ self.seeds[j] as u32) & self.index_mask
            }
            HashFamily::H3 => {
                let q = &self.q[j * self.row_bits as usize..(j + 1) * self.row_bits as usize];
                let mut bits = row;
                let mut acc = 0;
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    if i >= q.len() {
                        break;
                    }
                    acc ^= q[i];
                    bits &= bits - 1;
                }
                acc
            }
        }
    }

    fn reseed<R: RngCore + ?Sized>(&mut self, rng: &mut R) {
        for seed in &mut self.seeds {
            *seed = rng.next_u64();
        }
        self.expand();
    }
}

/// Counter array with saturating increments; `test` returns the minimum over
/// the row's counters, which never undercounts the row's inserts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingBloomFilter<H = H3HashSet> {
    counters: Vec<u32>,
    hasher: H,
    saturation: u32,
}

impl<H: RowHasher> CountingBloomFilter<H> {
    pub fn new(counters: usize, hasher: H, saturation: u32) -> Self {
        Self { counters: vec![0; counters], hasher, saturation }
    }

    pub fn insert(&mut self, row: u32) {
        for j in 0..self.hasher.hash_count() {
            let c = &mut self.counters[self.hasher.index(j, row) as usize];
            if *c < self.saturation {
                *c += 1;
            }
        }
    }

    pub fn test(&self, row: u32) -> u32 {
        (0..self.hasher.hash_count()).map(|j| self.counters[self.hasher.index(j, row) as usize]).min().unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.counters.fill(0);
    }

    pub fn reseed<R: RngCore + ?Sized>(&mut self, rng: &mut R) {
        self.hasher.reseed(rng);
    }

    pub fn saturation(&self) -> u32 {
        self.saturation
    }

    pub fn counters(&self) -> &[u32] {
        &self.counters
    }

    pub fn hasher(&self) -> &H {
        &self.hasher
    }
}

/// Which of the two filters currently answers queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Selector {
    A,
    B,
}

impl Selector {
    fn other(self) -> Self {
        match self {
            Self::A => Self::B,
            Self::B => Self::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualCountingBloomFilter<H = H3HashSet> {
    filter_a: CountingBloomFilter<H>,
    filter_b: CountingBloomFilter<H>,
    active: Selector,
    last_clear: Picos,
    n_bl: u32,
}

impl<H: RowHasher> DualCountingBloomFilter<H> {
    /// Counters saturate at `n_bl`, the blacklisting threshold.
    pub fn new(counters: usize, hasher_a: H, hasher_b: H, n_bl: u32) -> Self {
        Self {
            filter_a: CountingBloomFilter::new(counters, hasher_a, n_bl),
            filter_b: CountingBloomFilter::new(counters, hasher_b, n_bl),
            active: Selector::A,
            last_clear: 0,
            n_bl,
        }
    }

    pub fn insert(&mut self, row: u32) {
        self.filter_a.insert(row);
        self.filter_b.insert(row);
    }

    pub fn test(&self, row: u32) -> u32 {
        self.active().test(row)
    }

    /// Blacklisted once the active filter's count reaches `n_bl`.
    pub fn is_blacklisted(&self, row: u32) -> bool {
        self.test(row) >= self.n_bl
    }

    /// Clears and reseeds the active filter, then hands the active role to
    /// the other one (which keeps everything it saw in the previous epoch).
    pub fn clear_and_swap<R: RngCore + ?Sized>(&mut self, now: Picos, rng: &mut R) {
        let f = match self.active {
            Selector::A => &mut self.filter_a,
            Selector::B => &mut self.filter_b,
        };
        f.clear();
        f.reseed(rng);
        self.active = self.active.other();
        self.last_clear = now;
    }

    pub fn active(&self) -> &CountingBloomFilter<H> {
        match self.active {
            Selector::A => &self.filter_a,
            Selector::B => &self.filter_b,
        }
    }

    pub fn passive(&self) -> &CountingBloomFilter<H> {
        match self.active {
            Selector::A => &self.filter_b,
            Selector::B => &self.filter_a,
        }
    }

    pub fn active_selector(&self) -> Selector {
        self.active
    }

    pub fn last_clear(&self) -> Picos {
        self.last_clear
    }

    pub fn n_bl(&self) -> u32 {
        self.n_bl
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::collections::BTreeMap;

    /// Every row lands on the same counters.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub(crate) struct AliasAll(pub usize);

    impl RowHasher for AliasAll {
        fn hash_count(&self) -> usize {
            self.0
        }
        fn index(&self, j: usize, _row: u32) -> u32 {
            j as u32
        }
        fn reseed<R: RngCore + ?Sized>(&mut self, _rng: &mut R) {}
    }

    /// Distinct rows never share a counter (rows below the table size).
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub(crate) struct Identity;

    impl RowHasher for Identity {
        fn hash_count(&self) -> usize {
            1
        }
        fn index(&self, _j: usize, row: u32) -> u32 {
            row
        }
        fn reseed<R: RngCore + ?Sized>(&mut self, _rng: &mut R) {}
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_shift_xor() {
        let h = H3HashSet::shift_xor(vec![0; 4], vec![0; 4], 1024);
        assert_eq!(h.indices(5), vec![5, 5, 5, 5]);
        assert_eq!(h.indices(5), h.indices(5));
    }

    #[test]
    fn default_shifts_spread_over_address() {
        let h = H3HashSet::new(HashFamily::ShiftXor, 4, 1024, 16, vec![0; 4]);
        assert_eq!(h.shifts(), &[0, 4, 8, 12]);
        assert_eq!(row_address_bits(65_536), 16);
        assert_eq!(row_address_bits(65_537), 17);
        assert_eq!(row_address_bits(2), 1);
    }

    #[test]
    fn indices_in_range() {
        let mut r = rng(1);
        for family in [HashFamily::ShiftXor, HashFamily::H3] {
            let h = H3HashSet::seeded(family, 4, 256, 16, &mut r);
            for row in (0..65_536).step_by(97) {
                assert!(h.indices(row).iter().all(|&i| i < 256));
            }
        }
    }

    #[test]
    fn shift_xor_aliasing_is_seed_invariant() {
        // Rows 17 and 33 share their low four bits.
        let mut r = rng(2);
        let mut h = H3HashSet::shift_xor(vec![0; 4], vec![0; 4], 16);
        for _ in 0..100 {
            h.reseed(&mut r);
            assert_eq!(h.indices(17), h.indices(33));
        }
    }

    /// H3 reseeding breaks a full collision with probability at least
    /// `1 - k/m`; allow three standard deviations over `10^4` reseeds.
    #[test]
    fn h3_reseeding_breaks_collisions() {
        let (k, m) = (4usize, 1024u32);
        let mut h = H3HashSet::new(HashFamily::H3, k, m, 16, vec![0; k]);
        let forced = H3HashSet::shift_xor(vec![0; k], vec![0; k], 16);
        assert_eq!(forced.indices(17), forced.indices(33));

        let mut r = rng(3);
        let trials = 10_000u32;
        let mut any_collision = 0u32;
        for _ in 0..trials {
            h.reseed(&mut r);
            let a = h.indices(17);
            let b = h.indices(33);
            if a.iter().zip(&b).any(|(x, y)| x == y) {
                any_collision += 1;
            }
        }
        let p = k as f64 / f64::from(m);
        let n = f64::from(trials);
        let bound = n * p + 3.0 * libm::sqrt(n * p * (1.0 - p));
        assert!(f64::from(any_collision) <= bound, "{any_collision} > {bound}");
    }

    #[test]
    fn insert_and_test() {
        let mut f = CountingBloomFilter::new(64, Identity, 10);
        assert_eq!(f.test(5), 0);
        for _ in 0..3 {
            f.insert(5);
        }
        assert_eq!(f.test(5), 3);
        assert_eq!(f.test(6), 0);
    }

    #[test]
    fn counters_saturate() {
        let mut f = CountingBloomFilter::new(64, Identity, 4);
        for _ in 0..10 {
            f.insert(1);
        }
        assert_eq!(f.test(1), 4);
        assert!(f.counters().iter().all(|&c| c <= 4));
    }

    #[test]
    fn aliasing_only_overcounts() {
        let mut f = CountingBloomFilter::new(8, AliasAll(4), 100);
        f.insert(1);
        f.insert(2);
        assert_eq!(f.test(1), 2);
    }

    fn dual(n_bl: u32) -> DualCountingBloomFilter<Identity> {
        DualCountingBloomFilter::new(64, Identity, Identity, n_bl)
    }

    #[test]
    fn blacklist_threshold_boundary() {
        let mut d = dual(8);
        assert!(!(0..64).any(|r| d.is_blacklisted(r)));
        for _ in 0..7 {
            d.insert(3);
        }
        assert!(!d.is_blacklisted(3));
        d.insert(3);
        assert!(d.is_blacklisted(3));
    }

    /// A row reaching the threshold in epoch 1 stays blacklisted through
    /// epoch 2 and is released at the start of epoch 4 after an idle epoch 3.
    #[test]
    fn epoch_walkthrough() {
        let mut r = rng(0);
        let mut d = dual(4);
        // epoch 1
        for _ in 0..4 {
            d.insert(9);
        }
        assert!(d.is_blacklisted(9));
        d.clear_and_swap(100, &mut r);
        // epoch 2: the passive filter's counts carry over
        assert!(d.is_blacklisted(9));
        assert_eq!(d.last_clear(), 100);
        // the row keeps being hammered, so the other filter reaches the threshold again
        for _ in 0..4 {
            d.insert(9);
        }
        d.clear_and_swap(200, &mut r);
        // epoch 3, idle: blacklisted by the epoch-2 counts
        assert!(d.is_blacklisted(9));
        d.clear_and_swap(300, &mut r);
        // epoch 4
        assert!(!d.is_blacklisted(9));
        assert_eq!(d.test(9), 0);
    }

    #[test]
    fn swap_exposes_previous_epoch_and_preserves_passive() {
        let mut r = rng(0);
        let mut d = dual(100);
        d.insert(1);
        d.insert(1);
        d.clear_and_swap(10, &mut r);
        assert_eq!(d.test(1), 2);
        d.insert(1);
        let before = d.passive().clone();
        assert_eq!(before.test(1), 1);
        d.clear_and_swap(20, &mut r);
        // the old passive is now the active one, unchanged
        assert_eq!(d.active(), &before);
    }

    #[test]
    fn stale_rows_test_zero() {
        let mut r = rng(0);
        let mut d = dual(100);
        d.insert(7);
        d.clear_and_swap(1, &mut r);
        d.clear_and_swap(2, &mut r);
        assert_eq!(d.test(7), 0);
        assert_eq!(d.passive().test(7), 0);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(u32),
        Clear,
        Probe(u32),
    }

    fn op() -> impl proptest::strategy::Strategy<Value = Op> {
        use proptest::prelude::*;
        prop_oneof![
            8 => (0u32..256).prop_map(Op::Insert),
            1 => Just(Op::Clear),
            3 => (0u32..256).prop_map(Op::Probe),
        ]
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// The active filter never undercounts a row's inserts since the
            /// filter's last clear, and its answer never drops without a clear.
            #[test]
            fn no_false_negatives(seed in any::<u64>(), ops in proptest::collection::vec(op(), 1..400)) {
                let mut r = rng(seed);
                let hb = H3HashSet::seeded(HashFamily::H3, 4, 64, 8, &mut r);
                let ha = H3HashSet::seeded(HashFamily::H3, 4, 64, 8, &mut r);
                let mut d = DualCountingBloomFilter::new(64, ha, hb, 16);
                // shadow counts per epoch: current and previous
                let mut cur: BTreeMap<u32, u32> = BTreeMap::new();
                let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
                let mut last: BTreeMap<u32, u32> = BTreeMap::new();
                let mut now = 0;
                for op in ops {
                    match op {
                        Op::Insert(row) => {
                            d.insert(row);
                            *cur.entry(row).or_default() += 1;
                        }
                        Op::Clear => {
                            now += 1;
                            d.clear_and_swap(now, &mut r);
                            prev = core::mem::take(&mut cur);
                            last.clear();
                        }
                        Op::Probe(row) => {
                            let truth = cur.get(&row).copied().unwrap_or(0) + prev.get(&row).copied().unwrap_or(0);
                            let t = d.test(row);
                            prop_assert!(t >= truth.min(16), "row {row}: {t} < {truth}");
                            let seen = last.entry(row).or_default();
                            prop_assert!(t >= *seen);
                            *seen = t;
                        }
                    }
                }
            }

            #[test]
            fn counters_bounded_by_saturation(ops in proptest::collection::vec(0u32..32, 0..300)) {
                let mut f = CountingBloomFilter::new(16, AliasAll(2), 7);
                for row in ops {
                    f.insert(row);
                    prop_assert!(f.counters().iter().all(|&c| c <= 7));
                }
            }
        }
    }
}
