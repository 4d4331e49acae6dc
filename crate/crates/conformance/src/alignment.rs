//! Alignment moves, the standard cost function, and the synchronous product
//! net (SPN) of a trace and a workflow net.
//!
//! The SPN is built once per case and extended in place each time a new
//! event arrives; extension never renames or removes existing nodes, so
//! search state computed on the smaller net stays valid.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::petri::{Label, Marking, PlaceId, TransitionId, WFNet};

/// Index of a transition within a synchronous product net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpnTransitionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Synchronous,
    Log,
    ModelVisible,
    ModelInvisible,
}

/// One alignment column: an activity (or skip) over a model transition
/// (or skip).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Move {
    pub kind: MoveKind,
    /// Observed activity; `None` renders as the skip symbol.
    pub activity: Option<String>,
    /// Model-net transition; `None` for log moves.
    pub transition: Option<TransitionId>,
}

/// Per-move-kind cost table. The standard cost function is the default and
/// the only one exercised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTable {
    pub synchronous: u32,
    pub log: u32,
    pub model_visible: u32,
    pub model_invisible: u32,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            synchronous: 0,
            log: 1,
            model_visible: 1,
            model_invisible: 0,
        }
    }
}

impl CostTable {
    pub fn cost_of(&self, kind: MoveKind) -> u32 {
        match kind {
            MoveKind::Synchronous => self.synchronous,
            MoveKind::Log => self.log,
            MoveKind::ModelVisible => self.model_visible,
            MoveKind::ModelInvisible => self.model_invisible,
        }
    }
}

impl Move {
    /// Standard cost: 0 for synchronous and invisible model moves, 1 for log
    /// and visible model moves.
    pub fn cost(&self) -> u32 {
        CostTable::default().cost_of(self.kind)
    }
}

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("malformed move at index {0}: both sides are skips")]
    DoubleSkip(usize),
    #[error("move at index {index} is inconsistent with kind {kind:?}")]
    Inconsistent { index: usize, kind: MoveKind },
}

/// Sum of standard costs over a well-formed move sequence.
pub fn alignment_cost(moves: &[Move]) -> Result<u32, AlignmentError> {
    let mut total = 0;
    for (index, mv) in moves.iter().enumerate() {
        let ok = match mv.kind {
            MoveKind::Synchronous => mv.activity.is_some() && mv.transition.is_some(),
            MoveKind::Log => mv.activity.is_some() && mv.transition.is_none(),
            MoveKind::ModelVisible | MoveKind::ModelInvisible => {
                mv.activity.is_none() && mv.transition.is_some()
            }
        };
        if mv.activity.is_none() && mv.transition.is_none() {
            return Err(AlignmentError::DoubleSkip(index));
        }
        if !ok {
            return Err(AlignmentError::Inconsistent {
                index,
                kind: mv.kind,
            });
        }
        total += mv.cost();
    }
    Ok(total)
}

/// An optimal move sequence for a trace prefix, with its total cost.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrefixAlignment {
    pub moves: Vec<Move>,
    pub total_cost: u32,
}

impl PrefixAlignment {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Renders the paper-style two-row table: activities over transitions,
    /// with `>>` for skips.
    pub fn render(&self, net: &WFNet) -> String {
        let top: Vec<String> = self
            .moves
            .iter()
            .map(|m| m.activity.clone().unwrap_or_else(|| ">>".into()))
            .collect();
        let bottom: Vec<String> = self
            .moves
            .iter()
            .map(|m| match m.transition {
                Some(t) => net.transition_name(t).to_string(),
                None => ">>".into(),
            })
            .collect();
        let widths: Vec<usize> = top
            .iter()
            .zip(&bottom)
            .map(|(a, b)| a.len().max(b.len()))
            .collect();
        let row = |cells: &[String]| {
            let mut s = String::from("|");
            for (c, w) in cells.iter().zip(&widths) {
                s.push_str(&format!(" {c:w$} |"));
            }
            s
        };
        format!("{}\n{}", row(&top), row(&bottom))
    }
}

/// What an SPN transition is, structurally. Positions are 1-based trace
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpnRole {
    /// Log move consuming trace place `pos - 1`, producing `pos`.
    Log { pos: usize },
    /// Synchronous move at trace position `pos` on model transition `t`.
    Sync { pos: usize, model: TransitionId },
    /// Model move on transition `t`, independent of trace position.
    Model { model: TransitionId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpnTransition {
    pub role: SpnRole,
    pub pre: Vec<PlaceId>,
    pub post: Vec<PlaceId>,
}

/// Synchronous product of a trace chain and a model net.
///
/// Model places keep their ids; trace place `i` maps to
/// `model.num_places() + i`. Model-move transitions occupy ids
/// `0..|T_model|`; log and synchronous transitions are appended per event
/// in arrival order, so extension is append-only.
#[derive(Debug, Clone)]
pub struct SynchronousProduct {
    model: Arc<WFNet>,
    trace: Vec<String>,
    transitions: Vec<SpnTransition>,
    /// Transition ids consuming trace place `pos-1`, indexed by `pos-1`.
    by_position: Vec<Vec<SpnTransitionId>>,
}

impl SynchronousProduct {
    pub fn build(model: Arc<WFNet>, trace: &[String]) -> Self {
        let transitions = model
            .transitions()
            .map(|t| SpnTransition {
                role: SpnRole::Model { model: t },
                pre: model.transition_pre(t).to_vec(),
                post: model.transition_post(t).to_vec(),
            })
            .collect();
        let mut spn = SynchronousProduct {
            model,
            trace: Vec::new(),
            transitions,
            by_position: Vec::new(),
        };
        for a in trace {
            spn.extend(a);
        }
        spn
    }

    /// Appends one event: a new trace place, its log move, and one
    /// synchronous move per matching model transition. Returns the new
    /// transition ids.
    pub fn extend(&mut self, activity: &str) -> Vec<SpnTransitionId> {
        let pos = self.trace.len() + 1;
        self.trace.push(activity.to_string());
        let prev = self.trace_place(pos - 1);
        let next = self.trace_place(pos);
        let mut added = Vec::new();

        let id = SpnTransitionId(self.transitions.len());
        self.transitions.push(SpnTransition {
            role: SpnRole::Log { pos },
            pre: vec![prev],
            post: vec![next],
        });
        added.push(id);

        for t in self.model.transitions_labeled(activity) {
            let id = SpnTransitionId(self.transitions.len());
            let mut pre = vec![prev];
            pre.extend_from_slice(self.model.transition_pre(t));
            let mut post = vec![next];
            post.extend_from_slice(self.model.transition_post(t));
            self.transitions.push(SpnTransition {
                role: SpnRole::Sync { pos, model: t },
                pre,
                post,
            });
            added.push(id);
        }
        self.by_position.push(added.clone());
        added
    }

    pub fn model(&self) -> &Arc<WFNet> {
        &self.model
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_len(&self) -> usize {
        self.trace.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition(&self, id: SpnTransitionId) -> &SpnTransition {
        &self.transitions[id.0]
    }

    /// SPN place id of trace place `i` (0-based chain position).
    pub fn trace_place(&self, i: usize) -> PlaceId {
        PlaceId(self.model.num_places() + i)
    }

    pub fn last_trace_place(&self) -> PlaceId {
        self.trace_place(self.trace.len())
    }

    /// Initial SPN marking: first trace place plus the model's initial
    /// marking.
    pub fn initial_marking(&self) -> Marking {
        let mut m = self.model.initial_marking();
        m.add(self.trace_place(0));
        m
    }

    /// Marking reached by a complete trace with the model in its final
    /// marking.
    pub fn full_goal_marking(&self) -> Marking {
        let mut m = self.model.final_marking();
        m.add(self.last_trace_place());
        m
    }

    /// Prefix-alignment goal: the trace token has reached the last trace
    /// place.
    pub fn is_goal(&self, m: &Marking) -> bool {
        m.contains(self.last_trace_place())
    }

    pub fn is_full_goal(&self, m: &Marking) -> bool {
        *m == self.full_goal_marking()
    }

    /// 0-based chain position of the trace token in a reachable marking.
    pub fn trace_position(&self, m: &Marking) -> Option<usize> {
        let np = self.model.num_places();
        m.iter()
            .map(|(p, _)| p)
            .find(|p| p.0 >= np)
            .map(|p| p.0 - np)
    }

    pub fn is_enabled(&self, m: &Marking, id: SpnTransitionId) -> bool {
        self.transitions[id.0].pre.iter().all(|&p| m.count(p) > 0)
    }

    /// Fires without an enabledness check; callers check first.
    pub fn fire(&self, m: &Marking, id: SpnTransitionId) -> Marking {
        let t = &self.transitions[id.0];
        let mut next = m.clone();
        for &p in &t.pre {
            next.remove(p);
        }
        for &p in &t.post {
            next.add(p);
        }
        next
    }

    /// Transitions worth checking at `m`: all model moves plus the log/sync
    /// moves consuming the trace token's current place.
    pub fn candidate_transitions(&self, m: &Marking) -> Vec<SpnTransitionId> {
        let mut out: Vec<SpnTransitionId> =
            (0..self.model.num_transitions()).map(SpnTransitionId).collect();
        if let Some(pos) = self.trace_position(m) {
            if pos < self.by_position.len() {
                out.extend_from_slice(&self.by_position[pos]);
            }
        }
        out
    }

    /// The alignment move an SPN transition represents.
    pub fn move_of(&self, id: SpnTransitionId) -> Move {
        match self.transitions[id.0].role {
            SpnRole::Log { pos } => Move {
                kind: MoveKind::Log,
                activity: Some(self.trace[pos - 1].clone()),
                transition: None,
            },
            SpnRole::Sync { pos, model } => Move {
                kind: MoveKind::Synchronous,
                activity: Some(self.trace[pos - 1].clone()),
                transition: Some(model),
            },
            SpnRole::Model { model } => Move {
                kind: match self.model.label(model) {
                    Label::Tau => MoveKind::ModelInvisible,
                    Label::Activity(_) => MoveKind::ModelVisible,
                },
                activity: None,
                transition: Some(model),
            },
        }
    }

    /// SPN transition id corresponding to an alignment move at a given trace
    /// position (1-based for log/sync moves; ignored for model moves).
    pub fn transition_for_move(&self, mv: &Move, pos: usize) -> Option<SpnTransitionId> {
        match mv.kind {
            MoveKind::Log => self
                .by_position
                .get(pos - 1)?
                .iter()
                .copied()
                .find(|&id| matches!(self.transitions[id.0].role, SpnRole::Log { .. })),
            MoveKind::Synchronous => {
                let want = mv.transition?;
                self.by_position.get(pos - 1)?.iter().copied().find(|&id| {
                    matches!(self.transitions[id.0].role, SpnRole::Sync { model, .. } if model == want)
                })
            }
            MoveKind::ModelVisible | MoveKind::ModelInvisible => {
                mv.transition.map(|t| SpnTransitionId(t.0))
            }
        }
    }

    /// Structural equality up to identifier assignment. With this crate's
    /// deterministic id scheme, incremental extension reproduces the
    /// from-scratch build exactly, so plain equality suffices.
    pub fn structurally_equal(&self, other: &SynchronousProduct) -> bool {
        self.trace == other.trace && self.transitions == other.transitions
    }

    pub fn transition_counts(&self) -> (usize, usize, usize) {
        let mut log = 0;
        let mut sync = 0;
        let mut model = 0;
        for t in &self.transitions {
            match t.role {
                SpnRole::Log { .. } => log += 1,
                SpnRole::Sync { .. } => sync += 1,
                SpnRole::Model { .. } => model += 1,
            }
        }
        (log, sync, model)
    }
}

impl fmt::Display for SpnTransitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}
