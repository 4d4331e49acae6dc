//! The two shortcuts around a full search continuation: direct synchronizing
//! and the prefix cache.
//!
//! Direct synchronizing replays the previous optimal prefix-alignment to its
//! end marking and, if a synchronous move on the new activity is enabled
//! there, appends it without searching. Appending a cost-0 move to the
//! previous optimum meets the non-decreasing cost lower bound, so the result
//! is optimal.
//!
//! The prefix cache stores, per activity prefix seen on any case, a snapshot
//! of the SPN, the search state, and the alignment. Admission under TinyLFU
//! compares count-min frequency estimates of the candidate and the eviction
//! victim.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::alignment::{MoveKind, PrefixAlignment, SpnRole, SpnTransitionId, SynchronousProduct};
use crate::petri::Marking;
use crate::search::SearchState;

#[derive(Debug, Error)]
pub enum FastpathError {
    #[error("previous alignment is not replayable on the SPN: {0}")]
    NotReplayable(String),
}

/// Replays an alignment's move sequence on the SPN and returns the marking
/// it stops in.
pub fn replay_to_marking(
    spn: &SynchronousProduct,
    alignment: &PrefixAlignment,
) -> Result<Marking, FastpathError> {
    let mut m = spn.initial_marking();
    let mut pos = 0;
    for (i, mv) in alignment.moves.iter().enumerate() {
        if matches!(mv.kind, MoveKind::Log | MoveKind::Synchronous) {
            pos += 1;
        }
        let id = spn.transition_for_move(mv, pos).ok_or_else(|| {
            FastpathError::NotReplayable(format!("move {i} has no SPN transition"))
        })?;
        if !spn.is_enabled(&m, id) {
            return Err(FastpathError::NotReplayable(format!(
                "move {i} ({id}) not enabled"
            )));
        }
        m = spn.fire(&m, id);
    }
    Ok(m)
}

/// Attempts the direct-synchronizing shortcut for the newest event.
///
/// The SPN must already be extended by `activity`. Returns the previous
/// alignment extended by one synchronous move when such a move is enabled at
/// the replayed marking; `None` means the standard search applies. When
/// several synchronous transitions qualify, the first in id order wins.
pub fn try_direct_synchronize(
    spn: &SynchronousProduct,
    previous: &PrefixAlignment,
    activity: &str,
) -> Result<Option<PrefixAlignment>, FastpathError> {
    let m = replay_to_marking(spn, previous)?;
    let pos = spn.trace_len();
    for id in spn.candidate_transitions(&m) {
        let is_new_sync = matches!(
            spn.transition(id).role,
            SpnRole::Sync { pos: p, .. } if p == pos
        );
        if is_new_sync && spn.is_enabled(&m, id) {
            let mv = spn.move_of(id);
            debug_assert_eq!(mv.activity.as_deref(), Some(activity));
            let mut moves = previous.moves.clone();
            moves.push(mv);
            return Ok(Some(PrefixAlignment {
                moves,
                total_cost: previous.total_cost,
            }));
        }
    }
    Ok(None)
}

/// Everything cached per prefix: the SPN, the search state, the alignment,
/// and extension ids not yet reseeded into the search (accumulated while the
/// direct-synchronizing path skipped searches).
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub spn: SynchronousProduct,
    pub search: SearchState,
    pub alignment: PrefixAlignment,
    pub pending: Vec<SpnTransitionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CachePolicy {
    #[default]
    TinyLfu,
    Lru,
    Lfu,
}

impl std::str::FromStr for CachePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tinylfu" => Ok(CachePolicy::TinyLfu),
            "lru" => Ok(CachePolicy::Lru),
            "lfu" => Ok(CachePolicy::Lfu),
            other => Err(format!("unknown cache policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub admissions: u64,
    pub rejections: u64,
    pub evictions: u64,
}

/// Conservative over-estimating frequency counter: count-min with 4 rows,
/// halved every `aging_window` touches.
#[derive(Debug, Clone)]
struct FrequencySketch {
    rows: Vec<Vec<u32>>,
    mask: usize,
    touches: u64,
    aging_window: u64,
}

const SKETCH_ROWS: usize = 4;
const ROW_SEEDS: [u64; SKETCH_ROWS] = [
    0x9e37_79b9_7f4a_7c15,
    0xc2b2_ae3d_27d4_eb4f,
    0x1656_67b1_9e37_79f9,
    0x27d4_eb2f_1656_67c5,
];

impl FrequencySketch {
    fn new(capacity: usize) -> Self {
        let width = (16 * capacity.max(1)).next_power_of_two();
        FrequencySketch {
            rows: vec![vec![0; width]; SKETCH_ROWS],
            mask: width - 1,
            touches: 0,
            aging_window: 10 * capacity.max(1) as u64,
        }
    }

    fn index(&self, key: &[String], row: usize) -> usize {
        let mut h = DefaultHasher::new();
        ROW_SEEDS[row].hash(&mut h);
        key.hash(&mut h);
        (h.finish() as usize) & self.mask
    }

    fn touch(&mut self, key: &[String]) {
        for row in 0..SKETCH_ROWS {
            let i = self.index(key, row);
            self.rows[row][i] = self.rows[row][i].saturating_add(1);
        }
        self.touches += 1;
        if self.touches >= self.aging_window {
            self.age();
        }
    }

    fn estimate(&self, key: &[String]) -> u32 {
        (0..SKETCH_ROWS)
            .map(|row| self.rows[row][self.index(key, row)])
            .min()
            .unwrap_or(0)
    }

    fn age(&mut self) {
        for row in &mut self.rows {
            for c in row.iter_mut() {
                *c /= 2;
            }
        }
        self.touches = 0;
    }
}

#[derive(Debug, Clone)]
struct CacheEntry {
    snapshot: Snapshot,
    last_access: u64,
    hits: u64,
}

/// Per-worker prefix cache. Keys are activity prefixes, case-independent.
/// Capacity 0 disables the cache entirely.
#[derive(Debug, Clone)]
pub struct PrefixCache {
    capacity: usize,
    policy: CachePolicy,
    entries: HashMap<Vec<String>, CacheEntry>,
    sketch: FrequencySketch,
    clock: u64,
    pub stats: CacheStats,
}

impl PrefixCache {
    pub fn new(capacity: usize, policy: CachePolicy) -> Self {
        PrefixCache {
            capacity,
            policy,
            entries: HashMap::new(),
            sketch: FrequencySketch::new(capacity),
            clock: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &[String]) -> bool {
        self.entries.contains_key(key)
    }

    pub fn cached_prefixes(&self) -> Vec<Vec<String>> {
        let mut keys: Vec<_> = self.entries.keys().cloned().collect();
        keys.sort();
        keys
    }

    /// Looks up a prefix, returning an independent snapshot copy on a hit.
    /// Every lookup counts as a sketch access.
    pub fn lookup(&mut self, key: &[String]) -> Option<Snapshot> {
        if self.capacity == 0 {
            self.stats.misses += 1;
            return None;
        }
        self.sketch.touch(key);
        self.clock += 1;
        let clock = self.clock;
        match self.entries.get_mut(key) {
            Some(entry) => {
                entry.last_access = clock;
                entry.hits += 1;
                self.stats.hits += 1;
                Some(entry.snapshot.clone())
            }
            None => {
                self.stats.misses += 1;
                None
            }
        }
    }

    /// Offers a snapshot for admission under the configured policy.
    pub fn admit(&mut self, key: Vec<String>, snapshot: Snapshot) {
        if self.capacity == 0 {
            return;
        }
        self.clock += 1;
        if let Some(entry) = self.entries.get_mut(&key) {
            entry.snapshot = snapshot;
            entry.last_access = self.clock;
            return;
        }
        if self.entries.len() < self.capacity {
            self.insert(key, snapshot);
            return;
        }
        let victim = match self.policy {
            CachePolicy::Lru | CachePolicy::TinyLfu => self.victim_by(|e| e.last_access),
            CachePolicy::Lfu => self.victim_by(|e| e.hits),
        };
        let Some(victim) = victim else { return };
        if self.policy == CachePolicy::TinyLfu {
            // admit only a strictly more frequent candidate
            if self.sketch.estimate(&key) <= self.sketch.estimate(&victim) {
                self.stats.rejections += 1;
                return;
            }
        }
        self.entries.remove(&victim);
        self.stats.evictions += 1;
        self.insert(key, snapshot);
    }

    fn insert(&mut self, key: Vec<String>, snapshot: Snapshot) {
        self.entries.insert(
            key,
            CacheEntry {
                snapshot,
                last_access: self.clock,
                hits: 0,
            },
        );
        self.stats.admissions += 1;
    }

    /// Victim with the minimal score; key order breaks ties for determinism.
    fn victim_by(&self, score: impl Fn(&CacheEntry) -> u64) -> Option<Vec<String>> {
        self.entries
            .iter()
            .min_by(|(ka, ea), (kb, eb)| score(ea).cmp(&score(eb)).then(ka.cmp(kb)))
            .map(|(k, _)| k.clone())
    }

    pub fn sketch_touch(&mut self, key: &[String]) {
        self.sketch.touch(key);
    }

    pub fn sketch_estimate(&self, key: &[String]) -> u32 {
        self.sketch.estimate(key)
    }

    pub fn sketch_age(&mut self) {
        self.sketch.age();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{Move, SynchronousProduct};
    use crate::search::{shortest_path, GoalMode, Heuristic, SearchState, DEFAULT_MAX_MARKINGS};
    use crate::testnets::n1;
    use std::sync::Arc;

    fn key(acts: &[&str]) -> Vec<String> {
        acts.iter().map(|s| s.to_string()).collect()
    }

    fn snapshot_for(trace: &[&str]) -> Snapshot {
        let (net, _, _) = n1();
        let net = Arc::new(net);
        let mut spn = SynchronousProduct::build(net, &[]);
        let mut search = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
        let mut alignment = PrefixAlignment::empty();
        for a in trace {
            let added = spn.extend(a);
            alignment = search.continue_search(&spn, &added).unwrap();
        }
        Snapshot {
            spn,
            search,
            alignment,
            pending: Vec::new(),
        }
    }

    #[test]
    fn replay_examples() {
        let (net, p, t) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &key(&["a", "b"]));
        // sync move (a,t1) leads to [p'_1, p2]
        let al = PrefixAlignment {
            moves: vec![Move {
                kind: MoveKind::Synchronous,
                activity: Some("a".into()),
                transition: Some(t[0]),
            }],
            total_cost: 0,
        };
        let m = replay_to_marking(&spn, &al).unwrap();
        assert!(m.contains(spn.trace_place(1)));
        assert!(m.contains(p[1]));

        assert_eq!(
            replay_to_marking(&spn, &PrefixAlignment::empty()).unwrap(),
            spn.initial_marking()
        );

        // log move (a,>>) leads to [p'_1, p1]
        let al = PrefixAlignment {
            moves: vec![Move {
                kind: MoveKind::Log,
                activity: Some("a".into()),
                transition: None,
            }],
            total_cost: 1,
        };
        let m = replay_to_marking(&spn, &al).unwrap();
        assert!(m.contains(spn.trace_place(1)));
        assert!(m.contains(p[0]));
    }

    #[test]
    fn direct_sync_applies_on_b_after_a() {
        let (net, _, t) = n1();
        let net = Arc::new(net);
        let mut spn = SynchronousProduct::build(net.clone(), &key(&["a"]));
        let prev = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
        assert_eq!(prev.total_cost, 0);
        spn.extend("b");
        let ext = try_direct_synchronize(&spn, &prev, "b").unwrap().unwrap();
        assert_eq!(ext.total_cost, 0);
        assert_eq!(ext.moves.len(), 2);
        assert_eq!(ext.moves[1].transition, Some(t[2]));

        // optimality cross-check against the from-scratch search
        let fresh = SynchronousProduct::build(net, &key(&["a", "b"]));
        let oracle = shortest_path(&fresh, GoalMode::Prefix, Heuristic::Zero).unwrap();
        assert_eq!(ext.total_cost, oracle.total_cost);
    }

    #[test]
    fn direct_sync_not_applicable_after_exclusive_branch() {
        // after <a,b> the model sits in p3; no sync on c is enabled
        let (net, _, _) = n1();
        let mut spn = SynchronousProduct::build(Arc::new(net), &key(&["a", "b"]));
        let prev = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
        spn.extend("c");
        assert!(try_direct_synchronize(&spn, &prev, "c").unwrap().is_none());
    }

    #[test]
    fn direct_sync_not_applicable_unknown_activity() {
        let (net, _, _) = n1();
        let mut spn = SynchronousProduct::build(Arc::new(net), &key(&["a"]));
        let prev = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
        spn.extend("z");
        assert!(try_direct_synchronize(&spn, &prev, "z").unwrap().is_none());
    }

    #[test]
    fn cache_hit_miss_counters() {
        let mut cache = PrefixCache::new(100, CachePolicy::TinyLfu);
        let snap = snapshot_for(&["a"]);
        assert!(cache.lookup(&key(&["a"])).is_none());
        cache.admit(key(&["a"]), snap);
        assert!(cache.lookup(&key(&["a"])).is_some());
        assert_eq!(cache.stats.hits, 1);
        assert_eq!(cache.stats.misses, 1);
    }

    #[test]
    fn snapshot_independence() {
        let mut cache = PrefixCache::new(10, CachePolicy::TinyLfu);
        cache.admit(key(&["a"]), snapshot_for(&["a"]));
        let mut live = cache.lookup(&key(&["a"])).unwrap();
        let before = live.alignment.clone();
        // mutate the served copy
        live.spn.extend("b");
        live.alignment.moves.clear();
        let again = cache.lookup(&key(&["a"])).unwrap();
        assert_eq!(again.alignment, before);
        assert_eq!(again.spn.trace_len(), 1);
    }

    #[test]
    fn tinylfu_rejects_infrequent_candidate() {
        let mut cache = PrefixCache::new(1, CachePolicy::TinyLfu);
        let resident = key(&["a"]);
        let newcomer = key(&["b"]);
        cache.admit(resident.clone(), snapshot_for(&["a"]));
        for _ in 0..5 {
            cache.lookup(&resident);
        }
        cache.sketch_touch(&newcomer); // seen once
        cache.admit(newcomer.clone(), snapshot_for(&["b"]));
        assert!(cache.contains(&resident));
        assert!(!cache.contains(&newcomer));
        assert_eq!(cache.stats.rejections, 1);
    }

    #[test]
    fn lru_evicts_unconditionally() {
        let mut cache = PrefixCache::new(1, CachePolicy::Lru);
        cache.admit(key(&["a"]), snapshot_for(&["a"]));
        cache.admit(key(&["b"]), snapshot_for(&["b"]));
        assert!(!cache.contains(&key(&["a"])));
        assert!(cache.contains(&key(&["b"])));
        assert_eq!(cache.stats.evictions, 1);
    }

    #[test]
    fn capacity_zero_disables_cache() {
        let mut cache = PrefixCache::new(0, CachePolicy::TinyLfu);
        cache.admit(key(&["a"]), snapshot_for(&["a"]));
        assert!(cache.lookup(&key(&["a"])).is_none());
        assert_eq!(cache.len(), 0);
    }

    #[test]
    fn sketch_overestimates_and_ages() {
        let mut cache = PrefixCache::new(100, CachePolicy::TinyLfu);
        let k = key(&["x", "y"]);
        assert_eq!(cache.sketch_estimate(&k), 0);
        for _ in 0..3 {
            cache.sketch_touch(&k);
        }
        assert!(cache.sketch_estimate(&k) >= 3);
        cache.sketch_touch(&k);
        let before = cache.sketch_estimate(&k);
        cache.sketch_age();
        assert!(cache.sketch_estimate(&k) >= 2);
        assert!(cache.sketch_estimate(&k) <= before);
    }

    #[test]
    fn table1_stream_cache_evolution() {
        // stream (c1,a),(c2,a),(c2,b),(c1,b): prefixes <a>, <a>, <a,b>, <a,b>
        let mut cache = PrefixCache::new(100, CachePolicy::TinyLfu);
        let mut searches = 0;

        // (c1,a): miss -> search -> admit <a>
        assert!(cache.lookup(&key(&["a"])).is_none());
        searches += 1;
        cache.admit(key(&["a"]), snapshot_for(&["a"]));
        assert_eq!(cache.cached_prefixes(), vec![key(&["a"])]);

        // (c2,a): hit
        assert!(cache.lookup(&key(&["a"])).is_some());

        // (c2,b): miss -> search -> admit <a,b>
        assert!(cache.lookup(&key(&["a", "b"])).is_none());
        searches += 1;
        cache.admit(key(&["a", "b"]), snapshot_for(&["a", "b"]));
        assert_eq!(
            cache.cached_prefixes(),
            vec![key(&["a"]), key(&["a", "b"])]
        );

        // (c1,b): hit
        assert!(cache.lookup(&key(&["a", "b"])).is_some());

        assert_eq!(cache.stats.hits, 2);
        assert_eq!(searches, 2);
    }
}
