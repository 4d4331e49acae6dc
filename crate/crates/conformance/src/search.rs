//! Shortest-path search over the SPN state space.
//!
//! The search state (closed records plus frontier) is kept per case and
//! reused when the SPN is extended by a new event: newly added transitions
//! are relaxed from every already-reached marking, then the search continues
//! toward the new goal. Goal markings are expanded on pop so the frontier
//! stays continuable past them.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::alignment::{PrefixAlignment, SpnTransitionId, SynchronousProduct};
use crate::petri::Marking;

pub const DEFAULT_MAX_MARKINGS: usize = 1_000_000;

/// Goal-cost estimator. Estimates are admissible; `Zero` makes the search a
/// plain Dijkstra and is the default, since goal-dependent estimates must be
/// recomputed on every extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Heuristic {
    #[default]
    Zero,
    /// Remaining trace positions whose activity labels no model transition;
    /// each such event costs at least one log move.
    UnmatchedLabelBound,
}

pub fn estimate(h: Heuristic, spn: &SynchronousProduct, m: &Marking) -> u32 {
    match h {
        Heuristic::Zero => 0,
        Heuristic::UnmatchedLabelBound => {
            let pos = spn.trace_position(m).unwrap_or(spn.trace_len());
            spn.trace()[pos..]
                .iter()
                .filter(|a| !spn.model().has_activity(a))
                .count() as u32
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no goal marking is reachable")]
    GoalUnreachable,
    #[error("search exceeded the marking cap of {0}")]
    ResourceLimit(usize),
    #[error("search state inconsistent with SPN: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SearchStats {
    pub expanded: u64,
    pub queued: u64,
    pub reopened: u64,
}

#[derive(Debug, Clone)]
pub struct SearchRecord {
    pub g: u32,
    pub parent: Option<Marking>,
    pub via: Option<SpnTransitionId>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FrontierEntry {
    f: u32,
    g: u32,
    seq: u64,
    marking: Marking,
}

// Max-heap: smaller f wins, then larger g (deeper states), then insertion
// order.
impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp(&self.f)
            .then(self.g.cmp(&other.g))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    Prefix,
    Full,
}

/// Persisted search state for one case.
#[derive(Debug, Clone)]
pub struct SearchState {
    records: HashMap<Marking, SearchRecord>,
    frontier: BinaryHeap<FrontierEntry>,
    next_seq: u64,
    goal_generation: usize,
    heuristic: Heuristic,
    max_markings: usize,
    pub stats: SearchStats,
}

impl SearchState {
    pub fn new(heuristic: Heuristic, max_markings: usize) -> Self {
        SearchState {
            records: HashMap::new(),
            frontier: BinaryHeap::new(),
            next_seq: 0,
            goal_generation: 0,
            heuristic,
            max_markings,
            stats: SearchStats::default(),
        }
    }

    pub fn goal_generation(&self) -> usize {
        self.goal_generation
    }

    pub fn record(&self, m: &Marking) -> Option<&SearchRecord> {
        self.records.get(m)
    }

    fn push(&mut self, spn: &SynchronousProduct, marking: Marking, g: u32) {
        let f = g + estimate(self.heuristic, spn, &marking);
        self.frontier.push(FrontierEntry {
            f,
            g,
            seq: self.next_seq,
            marking,
        });
        self.next_seq += 1;
    }

    fn relax(
        &mut self,
        spn: &SynchronousProduct,
        from: &Marking,
        via: SpnTransitionId,
    ) -> Result<(), SearchError> {
        let g_from = self.records[from].g;
        let cost = spn.move_of(via).cost();
        let succ = spn.fire(from, via);
        let g_new = g_from + cost;
        match self.records.get_mut(&succ) {
            Some(rec) if g_new < rec.g => {
                debug_assert!(
                    !(rec.closed && self.heuristic == Heuristic::Zero),
                    "closed marking improved under zero heuristic"
                );
                if rec.closed {
                    rec.closed = false;
                    self.stats.reopened += 1;
                }
                rec.g = g_new;
                rec.parent = Some(from.clone());
                rec.via = Some(via);
                self.push(spn, succ, g_new);
            }
            Some(_) => {}
            None => {
                if self.records.len() >= self.max_markings {
                    return Err(SearchError::ResourceLimit(self.max_markings));
                }
                self.records.insert(
                    succ.clone(),
                    SearchRecord {
                        g: g_new,
                        parent: Some(from.clone()),
                        via: Some(via),
                        closed: false,
                    },
                );
                self.stats.queued += 1;
                self.push(spn, succ, g_new);
            }
        }
        Ok(())
    }

    fn ensure_initialized(&mut self, spn: &SynchronousProduct) {
        if self.records.is_empty() {
            let init = spn.initial_marking();
            self.records.insert(
                init.clone(),
                SearchRecord {
                    g: 0,
                    parent: None,
                    via: None,
                    closed: false,
                },
            );
            self.stats.queued += 1;
            self.push(spn, init, 0);
        }
    }

    /// Relaxes the newly added transitions from every already-reached
    /// marking, then (for non-zero heuristics) recomputes frontier
    /// priorities against the new goal.
    pub fn reseed_after_extension(
        &mut self,
        spn: &SynchronousProduct,
        new_transitions: &[SpnTransitionId],
    ) -> Result<(), SearchError> {
        if new_transitions.is_empty() {
            return Ok(());
        }
        // deterministic order: sorted markings, not hash order
        let mut reached: Vec<Marking> = self.records.keys().cloned().collect();
        reached.sort_unstable();
        for m in &reached {
            for &t in new_transitions {
                if spn.is_enabled(m, t) {
                    self.relax(spn, m, t)?;
                }
            }
        }
        if self.heuristic != Heuristic::Zero {
            // goal moved, so every queued priority is stale
            let mut open: Vec<(Marking, u32)> = self
                .records
                .iter()
                .filter(|(_, r)| !r.closed)
                .map(|(m, r)| (m.clone(), r.g))
                .collect();
            open.sort_unstable();
            self.frontier.clear();
            for (m, g) in open {
                self.push(spn, m, g);
            }
        }
        Ok(())
    }

    /// Continues the search after the SPN was extended. `new_transitions`
    /// accumulates the ids returned by every extension since the last
    /// search on this state.
    pub fn continue_search(
        &mut self,
        spn: &SynchronousProduct,
        new_transitions: &[SpnTransitionId],
    ) -> Result<PrefixAlignment, SearchError> {
        if self.goal_generation > spn.trace_len() {
            return Err(SearchError::Inconsistent(format!(
                "goal generation {} ahead of trace length {}",
                self.goal_generation,
                spn.trace_len()
            )));
        }
        self.ensure_initialized(spn);
        self.reseed_after_extension(spn, new_transitions)?;
        let alignment = self.run(spn, GoalMode::Prefix)?;
        self.goal_generation = spn.trace_len();
        Ok(alignment)
    }

    fn run(
        &mut self,
        spn: &SynchronousProduct,
        mode: GoalMode,
    ) -> Result<PrefixAlignment, SearchError> {
        while let Some(entry) = self.frontier.pop() {
            let (g, closed) = match self.records.get(&entry.marking) {
                Some(r) => (r.g, r.closed),
                None => continue,
            };
            if closed || g < entry.g {
                continue; // stale entry, lazy deletion
            }
            let m = entry.marking;
            self.records.get_mut(&m).unwrap().closed = true;
            self.stats.expanded += 1;
            let is_goal = match mode {
                GoalMode::Prefix => spn.is_goal(&m),
                GoalMode::Full => spn.is_full_goal(&m),
            };
            // expand even when this is the goal, so a later continuation can
            // search past it
            for t in spn.candidate_transitions(&m) {
                if spn.is_enabled(&m, t) {
                    self.relax(spn, &m, t)?;
                }
            }
            if is_goal {
                return self.reconstruct(&m, spn);
            }
        }
        Err(SearchError::GoalUnreachable)
    }

    /// Parent-chain walk from a closed goal marking back to the initial
    /// marking.
    pub fn reconstruct(
        &self,
        goal: &Marking,
        spn: &SynchronousProduct,
    ) -> Result<PrefixAlignment, SearchError> {
        let rec = self
            .records
            .get(goal)
            .ok_or_else(|| SearchError::Inconsistent("goal marking never reached".into()))?;
        let total_cost = rec.g;
        let mut moves = Vec::new();
        let mut cur = goal;
        loop {
            let rec = self.records.get(cur).ok_or_else(|| {
                SearchError::Inconsistent("broken parent chain".into())
            })?;
            match (&rec.parent, rec.via) {
                (Some(parent), Some(via)) => {
                    moves.push(spn.move_of(via));
                    cur = parent;
                }
                (None, None) => break,
                _ => {
                    return Err(SearchError::Inconsistent(
                        "record with half a parent link".into(),
                    ))
                }
            }
        }
        moves.reverse();
        Ok(PrefixAlignment { moves, total_cost })
    }
}

/// From-scratch optimal (prefix-)alignment on a fresh SPN.
pub fn shortest_path(
    spn: &SynchronousProduct,
    mode: GoalMode,
    heuristic: Heuristic,
) -> Result<PrefixAlignment, SearchError> {
    let mut state = SearchState::new(heuristic, DEFAULT_MAX_MARKINGS);
    state.ensure_initialized(spn);
    let alignment = state.run(spn, mode)?;
    state.goal_generation = spn.trace_len();
    Ok(alignment)
}

/// From-scratch search returning the state for inspection (expansion counts).
pub fn shortest_path_with_state(
    spn: &SynchronousProduct,
    mode: GoalMode,
    heuristic: Heuristic,
) -> Result<(PrefixAlignment, SearchState), SearchError> {
    let mut state = SearchState::new(heuristic, DEFAULT_MAX_MARKINGS);
    state.ensure_initialized(spn);
    let alignment = state.run(spn, mode)?;
    state.goal_generation = spn.trace_len();
    Ok((alignment, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::MoveKind;
    use crate::testnets::n1;
    use std::sync::Arc;

    fn trace(acts: &[&str]) -> Vec<String> {
        acts.iter().map(|s| s.to_string()).collect()
    }

    /// Independent oracle: exhaustive depth-first enumeration of move
    /// sequences up to a cost bound, no priority queue involved.
    pub(crate) fn brute_force_cost(spn: &SynchronousProduct, mode: GoalMode) -> Option<u32> {
        fn dfs(
            spn: &SynchronousProduct,
            mode: GoalMode,
            m: &Marking,
            cost: u32,
            best: &mut Option<u32>,
            seen: &mut HashMap<Marking, u32>,
        ) {
            if let Some(&c) = seen.get(m) {
                if c <= cost {
                    return;
                }
            }
            seen.insert(m.clone(), cost);
            let goal = match mode {
                GoalMode::Prefix => spn.is_goal(m),
                GoalMode::Full => spn.is_full_goal(m),
            };
            if goal {
                if best.map_or(true, |b| cost < b) {
                    *best = Some(cost);
                }
                return;
            }
            for t in spn.candidate_transitions(m) {
                if spn.is_enabled(m, t) {
                    let c = cost + spn.move_of(t).cost();
                    if best.map_or(true, |b| c < b) {
                        dfs(spn, mode, &spn.fire(m, t), c, best, seen);
                    }
                }
            }
        }
        let mut best = None;
        let mut seen = HashMap::new();
        dfs(spn, mode, &spn.initial_marking(), 0, &mut best, &mut seen);
        best
    }

    #[test]
    fn full_alignment_abc_cost_one() {
        let (net, _, _) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &trace(&["a", "b", "c"]));
        assert_eq!(brute_force_cost(&spn, GoalMode::Full), Some(1));
        let al = shortest_path(&spn, GoalMode::Full, Heuristic::Zero).unwrap();
        assert_eq!(al.total_cost, 1);
    }

    #[test]
    fn prefix_alignment_ab_synchronous() {
        let (net, _, t) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &trace(&["a", "b"]));
        let al = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
        assert_eq!(al.total_cost, 0);
        assert_eq!(al.moves.len(), 2);
        assert!(al.moves.iter().all(|m| m.kind == MoveKind::Synchronous));
        assert_eq!(al.moves[0].transition, Some(t[0]));
        assert_eq!(al.moves[1].transition, Some(t[2]));
    }

    #[test]
    fn prefix_alignment_empty_trace() {
        let (net, _, _) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &[]);
        let al = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
        assert_eq!(al.total_cost, 0);
        assert!(al.moves.is_empty());
    }

    #[test]
    fn continue_search_appends_sync_move() {
        let (net, _, t) = n1();
        let mut spn = SynchronousProduct::build(Arc::new(net), &[]);
        let mut state = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
        let added = spn.extend("a");
        let al = state.continue_search(&spn, &added).unwrap();
        assert_eq!(al.total_cost, 0);
        let added = spn.extend("b");
        let al = state.continue_search(&spn, &added).unwrap();
        assert_eq!(al.total_cost, 0);
        assert_eq!(al.moves.last().unwrap().transition, Some(t[2]));
        assert_eq!(state.goal_generation(), 2);
    }

    #[test]
    fn continue_search_exclusive_branches() {
        // b and c are exclusive; <a,c> costs 0, <a,c,b> costs 1
        let (net, _, _) = n1();
        let mut spn = SynchronousProduct::build(Arc::new(net), &[]);
        let mut state = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
        for (activity, want) in [("a", 0), ("c", 0), ("b", 1)] {
            let added = spn.extend(activity);
            let al = state.continue_search(&spn, &added).unwrap();
            assert_eq!(al.total_cost, want, "after {activity}");
        }
    }

    #[test]
    fn continue_search_unknown_activity() {
        let (net, _, _) = n1();
        let mut spn = SynchronousProduct::build(Arc::new(net), &[]);
        let mut state = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
        let added = spn.extend("a");
        state.continue_search(&spn, &added).unwrap();
        let added = spn.extend("z");
        let al = state.continue_search(&spn, &added).unwrap();
        assert_eq!(al.total_cost, 1);
        assert_eq!(al.moves.last().unwrap().kind, MoveKind::Log);
    }

    #[test]
    fn incremental_matches_oracle_on_n1() {
        let (net, _, _) = n1();
        let net = Arc::new(net);
        let traces: Vec<Vec<&str>> = vec![
            vec!["a", "b", "c"],
            vec!["b", "a"],
            vec!["z", "a", "b"],
            vec!["c", "c"],
            vec!["a", "z", "b", "z"],
        ];
        for tr in traces {
            let mut spn = SynchronousProduct::build(net.clone(), &[]);
            let mut state = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
            let mut prefix = Vec::new();
            for a in &tr {
                prefix.push(a.to_string());
                let added = spn.extend(a);
                let incremental = state.continue_search(&spn, &added).unwrap();
                let fresh_spn = SynchronousProduct::build(net.clone(), &prefix);
                let fresh = shortest_path(&fresh_spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
                assert_eq!(incremental.total_cost, fresh.total_cost, "prefix {prefix:?}");
                assert_eq!(
                    Some(fresh.total_cost),
                    brute_force_cost(&fresh_spn, GoalMode::Prefix),
                    "brute force disagrees on {prefix:?}"
                );
            }
        }
    }

    #[test]
    fn heuristic_estimates() {
        let (net, _, _) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &trace(&["a", "z", "z"]));
        let m0 = spn.initial_marking();
        assert_eq!(estimate(Heuristic::Zero, &spn, &m0), 0);
        assert_eq!(estimate(Heuristic::UnmatchedLabelBound, &spn, &m0), 2);
        // at any goal marking the estimate is 0
        let al = shortest_path(&spn, GoalMode::Prefix, Heuristic::UnmatchedLabelBound).unwrap();
        assert_eq!(al.total_cost, 2);
        let goal = replay(&spn, &al);
        assert_eq!(estimate(Heuristic::UnmatchedLabelBound, &spn, &goal), 0);
    }

    fn replay(spn: &SynchronousProduct, al: &PrefixAlignment) -> Marking {
        let mut m = spn.initial_marking();
        let mut pos = 0;
        for mv in &al.moves {
            if matches!(mv.kind, MoveKind::Log | MoveKind::Synchronous) {
                pos += 1;
            }
            let id = spn.transition_for_move(mv, pos).unwrap();
            assert!(spn.is_enabled(&m, id), "alignment not firable");
            m = spn.fire(&m, id);
        }
        m
    }

    #[test]
    fn unmatched_label_bound_matches_zero_costs() {
        let (net, _, _) = n1();
        let net = Arc::new(net);
        for tr in [vec!["a", "z"], vec!["z", "z", "b"], vec!["a", "b", "z"]] {
            let tr: Vec<String> = tr.iter().map(|s| s.to_string()).collect();
            let spn = SynchronousProduct::build(net.clone(), &tr);
            let z = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
            let h = shortest_path(&spn, GoalMode::Prefix, Heuristic::UnmatchedLabelBound).unwrap();
            assert_eq!(z.total_cost, h.total_cost);
        }
    }

    #[test]
    fn returned_alignments_are_firable() {
        let (net, _, _) = n1();
        let net = Arc::new(net);
        for tr in [vec!["a", "b", "c"], vec!["z", "c"], vec!["b"]] {
            let tr: Vec<String> = tr.iter().map(|s| s.to_string()).collect();
            let spn = SynchronousProduct::build(net.clone(), &tr);
            let al = shortest_path(&spn, GoalMode::Prefix, Heuristic::Zero).unwrap();
            let m = replay(&spn, &al);
            assert!(spn.is_goal(&m));
        }
    }

    #[test]
    fn reconstruct_initial_marking_is_empty() {
        let (net, _, _) = n1();
        let spn = SynchronousProduct::build(Arc::new(net), &[]);
        let mut state = SearchState::new(Heuristic::Zero, DEFAULT_MAX_MARKINGS);
        let al = state.continue_search(&spn, &[]).unwrap();
        assert!(al.moves.is_empty());
        assert!(state
            .reconstruct(&Marking::single(crate::petri::PlaceId(99)), &spn)
            .is_err());
    }

    #[test]
    fn marking_cap_enforced() {
        let (net, _, _) = n1();
        let spn =
            SynchronousProduct::build(Arc::new(net), &trace(&["a", "b", "c", "a", "b"]));
        let mut state = SearchState::new(Heuristic::Zero, 3);
        state.ensure_initialized(&spn);
        match state.run(&spn, GoalMode::Full) {
            Err(SearchError::ResourceLimit(3)) => {}
            other => panic!("expected resource limit, got {other:?}"),
        }
    }
}
