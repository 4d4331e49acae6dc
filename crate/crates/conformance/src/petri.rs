//! Workflow-net structure and firing semantics.
//!
//! A [`WFNet`] is an ordinary Petri net with a unique source and sink place
//! where every node lies on a path between them. Markings are multisets of
//! places in canonical sorted form so they can serve as search-state keys.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Index of a place within a net. Dense from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlaceId(pub usize);

/// Index of a transition within a net. Dense from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TransitionId(pub usize);

/// Either side of an arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Place(PlaceId),
    Transition(TransitionId),
}

/// Transition label: a visible activity name or the invisible marker tau.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Activity(String),
    Tau,
}

impl Label {
    pub fn activity(&self) -> Option<&str> {
        match self {
            Label::Activity(a) => Some(a),
            Label::Tau => None,
        }
    }

    pub fn is_tau(&self) -> bool {
        matches!(self, Label::Tau)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Activity(a) => write!(f, "{a}"),
            Label::Tau => write!(f, "tau"),
        }
    }
}

/// Multiset of places in canonical sorted form.
///
/// Counts are strictly positive; an absent place has count 0. The sorted
/// representation makes `Marking` usable as a hash-map key with multiset
/// equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Marking(Vec<(PlaceId, u32)>);

impl Marking {
    pub fn empty() -> Self {
        Marking(Vec::new())
    }

    pub fn single(p: PlaceId) -> Self {
        Marking(vec![(p, 1)])
    }

    pub fn from_counts(mut counts: Vec<(PlaceId, u32)>) -> Self {
        counts.retain(|&(_, c)| c > 0);
        counts.sort_unstable_by_key(|&(p, _)| p);
        Marking(counts)
    }

    pub fn count(&self, p: PlaceId) -> u32 {
        match self.0.binary_search_by_key(&p, |&(q, _)| q) {
            Ok(i) => self.0[i].1,
            Err(_) => 0,
        }
    }

    pub fn contains(&self, p: PlaceId) -> bool {
        self.count(p) > 0
    }

    pub fn add(&mut self, p: PlaceId) {
        match self.0.binary_search_by_key(&p, |&(q, _)| q) {
            Ok(i) => self.0[i].1 += 1,
            Err(i) => self.0.insert(i, (p, 1)),
        }
    }

    /// Removes one token from `p`. Returns false if there is none.
    pub fn remove(&mut self, p: PlaceId) -> bool {
        match self.0.binary_search_by_key(&p, |&(q, _)| q) {
            Ok(i) => {
                if self.0[i].1 == 1 {
                    self.0.remove(i);
                } else {
                    self.0[i].1 -= 1;
                }
                true
            }
            Err(_) => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_tokens(&self) -> u32 {
        self.0.iter().map(|&(_, c)| c).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlaceId, u32)> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Debug, Error)]
pub enum PetriError {
    #[error("unknown node {0:?}")]
    UnknownNode(Node),
    #[error("transition {name} ({id:?}) is not enabled")]
    NotEnabled { id: TransitionId, name: String },
    #[error("firing sequence disabled at index {index}: {source}")]
    SequenceDisabled {
        index: usize,
        #[source]
        source: Box<PetriError>,
    },
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model parse error: {0}")]
    Parse(String),
    #[error("model is not a workflow net:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// A workflow net: places, transitions, arcs, labeling, and the source/sink
/// places that define the initial and final marking.
///
/// Immutable after construction; safe to share across workers.
#[derive(Debug, Clone)]
pub struct WFNet {
    place_names: Vec<String>,
    transition_names: Vec<String>,
    labels: Vec<Label>,
    // adjacency, indexed by place / transition id
    place_pre: Vec<Vec<TransitionId>>,
    place_post: Vec<Vec<TransitionId>>,
    trans_pre: Vec<Vec<PlaceId>>,
    trans_post: Vec<Vec<PlaceId>>,
    source: PlaceId,
    sink: PlaceId,
}

/// Incremental builder; ids are assigned densely in insertion order.
#[derive(Debug, Default)]
pub struct WFNetBuilder {
    place_names: Vec<String>,
    transition_names: Vec<String>,
    labels: Vec<Label>,
    arcs: Vec<(Node, Node)>,
}

impl WFNetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn place(&mut self, name: impl Into<String>) -> PlaceId {
        self.place_names.push(name.into());
        PlaceId(self.place_names.len() - 1)
    }

    pub fn transition(&mut self, name: impl Into<String>, label: Label) -> TransitionId {
        self.transition_names.push(name.into());
        self.labels.push(label);
        TransitionId(self.transition_names.len() - 1)
    }

    pub fn arc_pt(&mut self, p: PlaceId, t: TransitionId) -> &mut Self {
        self.arcs.push((Node::Place(p), Node::Transition(t)));
        self
    }

    pub fn arc_tp(&mut self, t: TransitionId, p: PlaceId) -> &mut Self {
        self.arcs.push((Node::Transition(t), Node::Place(p)));
        self
    }

    /// Finalizes the net, running the structural workflow-net check.
    pub fn build(self) -> Result<WFNet, PetriError> {
        let np = self.place_names.len();
        let nt = self.transition_names.len();
        let mut violations = Vec::new();

        let mut place_pre = vec![Vec::new(); np];
        let mut place_post = vec![Vec::new(); np];
        let mut trans_pre = vec![Vec::new(); nt];
        let mut trans_post = vec![Vec::new(); nt];
        let mut seen_arcs = HashSet::new();
        for &(from, to) in &self.arcs {
            let valid = match (from, to) {
                (Node::Place(p), Node::Transition(t)) => p.0 < np && t.0 < nt,
                (Node::Transition(t), Node::Place(p)) => p.0 < np && t.0 < nt,
                _ => false,
            };
            if !valid {
                violations.push(format!("arc {from:?} -> {to:?} references undeclared nodes"));
                continue;
            }
            if !seen_arcs.insert((from, to)) {
                // ordinary nets only: a duplicate arc would be a multi-arc
                violations.push(format!("duplicate arc {from:?} -> {to:?} (arc weights > 1 unsupported)"));
                continue;
            }
            match (from, to) {
                (Node::Place(p), Node::Transition(t)) => {
                    place_post[p.0].push(t);
                    trans_pre[t.0].push(p);
                }
                (Node::Transition(t), Node::Place(p)) => {
                    trans_post[t.0].push(p);
                    place_pre[p.0].push(t);
                }
                _ => unreachable!(),
            }
        }
        for v in place_pre.iter_mut().chain(place_post.iter_mut()) {
            v.sort_unstable();
        }
        for v in trans_pre.iter_mut().chain(trans_post.iter_mut()) {
            v.sort_unstable();
        }

        let sources: Vec<PlaceId> = (0..np)
            .map(PlaceId)
            .filter(|p| place_pre[p.0].is_empty())
            .collect();
        let sinks: Vec<PlaceId> = (0..np)
            .map(PlaceId)
            .filter(|p| place_post[p.0].is_empty())
            .collect();
        if sources.len() != 1 {
            violations.push(format!(
                "source not unique: {} places with empty preset",
                sources.len()
            ));
        }
        if sinks.len() != 1 {
            violations.push(format!(
                "sink not unique: {} places with empty postset",
                sinks.len()
            ));
        }

        let source = sources.first().copied().unwrap_or(PlaceId(0));
        let sink = sinks.first().copied().unwrap_or(PlaceId(0));
        let net = WFNet {
            place_names: self.place_names,
            transition_names: self.transition_names,
            labels: self.labels,
            place_pre,
            place_post,
            trans_pre,
            trans_post,
            source,
            sink,
        };
        violations.extend(net.path_violations());
        if violations.is_empty() {
            Ok(net)
        } else {
            Err(PetriError::Invalid(violations))
        }
    }
}

impl WFNet {
    pub fn num_places(&self) -> usize {
        self.place_names.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.transition_names.len()
    }

    pub fn places(&self) -> impl Iterator<Item = PlaceId> {
        (0..self.num_places()).map(PlaceId)
    }

    pub fn transitions(&self) -> impl Iterator<Item = TransitionId> {
        (0..self.num_transitions()).map(TransitionId)
    }

    pub fn place_name(&self, p: PlaceId) -> &str {
        &self.place_names[p.0]
    }

    pub fn transition_name(&self, t: TransitionId) -> &str {
        &self.transition_names[t.0]
    }

    pub fn label(&self, t: TransitionId) -> &Label {
        &self.labels[t.0]
    }

    pub fn source(&self) -> PlaceId {
        self.source
    }

    pub fn sink(&self) -> PlaceId {
        self.sink
    }

    pub fn initial_marking(&self) -> Marking {
        Marking::single(self.source)
    }

    pub fn final_marking(&self) -> Marking {
        Marking::single(self.sink)
    }

    pub fn transition_pre(&self, t: TransitionId) -> &[PlaceId] {
        &self.trans_pre[t.0]
    }

    pub fn transition_post(&self, t: TransitionId) -> &[PlaceId] {
        &self.trans_post[t.0]
    }

    /// True iff some transition carries this activity as its label.
    pub fn has_activity(&self, activity: &str) -> bool {
        self.labels
            .iter()
            .any(|l| l.activity() == Some(activity))
    }

    /// Model transitions labeled with `activity`, in id order.
    pub fn transitions_labeled(&self, activity: &str) -> Vec<TransitionId> {
        self.transitions()
            .filter(|&t| self.labels[t.0].activity() == Some(activity))
            .collect()
    }

    pub fn preset(&self, node: Node) -> Result<Vec<Node>, PetriError> {
        match node {
            Node::Place(p) if p.0 < self.num_places() => {
                Ok(self.place_pre[p.0].iter().map(|&t| Node::Transition(t)).collect())
            }
            Node::Transition(t) if t.0 < self.num_transitions() => {
                Ok(self.trans_pre[t.0].iter().map(|&p| Node::Place(p)).collect())
            }
            _ => Err(PetriError::UnknownNode(node)),
        }
    }

    pub fn postset(&self, node: Node) -> Result<Vec<Node>, PetriError> {
        match node {
            Node::Place(p) if p.0 < self.num_places() => {
                Ok(self.place_post[p.0].iter().map(|&t| Node::Transition(t)).collect())
            }
            Node::Transition(t) if t.0 < self.num_transitions() => {
                Ok(self.trans_post[t.0].iter().map(|&p| Node::Place(p)).collect())
            }
            _ => Err(PetriError::UnknownNode(node)),
        }
    }

    pub fn is_enabled(&self, m: &Marking, t: TransitionId) -> Result<bool, PetriError> {
        if t.0 >= self.num_transitions() {
            return Err(PetriError::UnknownNode(Node::Transition(t)));
        }
        Ok(self.trans_pre[t.0].iter().all(|&p| m.count(p) > 0))
    }

    pub fn fire(&self, m: &Marking, t: TransitionId) -> Result<Marking, PetriError> {
        if !self.is_enabled(m, t)? {
            return Err(PetriError::NotEnabled {
                id: t,
                name: self.transition_names[t.0].clone(),
            });
        }
        let mut next = m.clone();
        for &p in &self.trans_pre[t.0] {
            next.remove(p);
        }
        for &p in &self.trans_post[t.0] {
            next.add(p);
        }
        Ok(next)
    }

    pub fn fire_sequence(
        &self,
        m: &Marking,
        seq: &[TransitionId],
    ) -> Result<Marking, PetriError> {
        let mut cur = m.clone();
        for (index, &t) in seq.iter().enumerate() {
            cur = self.fire(&cur, t).map_err(|e| PetriError::SequenceDisabled {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(cur)
    }

    /// Structural workflow-net check. Empty iff the net is a WF-net.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if !self.place_pre[self.source.0].is_empty() {
            violations.push(format!("source {} has incoming arcs", self.place_names[self.source.0]));
        }
        if !self.place_post[self.sink.0].is_empty() {
            violations.push(format!("sink {} has outgoing arcs", self.place_names[self.sink.0]));
        }
        for p in self.places() {
            if p != self.source && self.place_pre[p.0].is_empty() {
                violations.push(format!("source not unique: place {} also has empty preset", self.place_names[p.0]));
            }
            if p != self.sink && self.place_post[p.0].is_empty() {
                violations.push(format!("sink not unique: place {} also has empty postset", self.place_names[p.0]));
            }
        }
        violations.extend(self.path_violations());
        violations
    }

    /// Every node must be forward-reachable from the source and
    /// backward-reachable from the sink.
    fn path_violations(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let fwd = self.reach(self.source, false);
        let bwd = self.reach(self.sink, true);
        for p in self.places() {
            let n = Node::Place(p);
            if !fwd.contains(&n) || !bwd.contains(&n) {
                violations.push(format!(
                    "place {} not on a path from source to sink",
                    self.place_names[p.0]
                ));
            }
        }
        for t in self.transitions() {
            let n = Node::Transition(t);
            if !fwd.contains(&n) || !bwd.contains(&n) {
                violations.push(format!(
                    "transition {} not on a path from source to sink",
                    self.transition_names[t.0]
                ));
            }
        }
        violations
    }

    fn reach(&self, start: PlaceId, backward: bool) -> HashSet<Node> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        let start = Node::Place(start);
        seen.insert(start);
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            let next = if backward {
                self.preset(node)
            } else {
                self.postset(node)
            };
            for n in next.unwrap_or_default() {
                if seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen
    }
}

/// Loads a WF-net from a PNML-style XML file.
///
/// Supported subset: `place` (with optional `initialMarking`), `transition`,
/// `arc`. A transition with an empty or missing name, or with a
/// `toolspecific` child with `activity="$invisible$"`, is treated as tau.
/// The final marking defaults to one token on the sink.
pub fn load_model(path: impl AsRef<Path>) -> Result<WFNet, PetriError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_model(&text)
}

pub fn parse_model(text: &str) -> Result<WFNet, PetriError> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| PetriError::Parse(e.to_string()))?;
    let mut builder = WFNetBuilder::new();
    let mut ids: HashMap<String, Node> = HashMap::new();
    let mut initial_tokens: Vec<(String, u32)> = Vec::new();

    for node in doc.descendants().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "place" => {
                let id = node
                    .attribute("id")
                    .ok_or_else(|| PetriError::Parse("place without id".into()))?
                    .to_string();
                let p = builder.place(id.clone());
                if let Some(m) = child_text(&node, "initialMarking") {
                    let n: u32 = m.trim().parse().map_err(|_| {
                        PetriError::Parse(format!("place {id}: bad initialMarking {m:?}"))
                    })?;
                    if n > 0 {
                        initial_tokens.push((id.clone(), n));
                    }
                }
                ids.insert(id, Node::Place(p));
            }
            "transition" => {
                let id = node
                    .attribute("id")
                    .ok_or_else(|| PetriError::Parse("transition without id".into()))?
                    .to_string();
                let name = child_text(&node, "name").unwrap_or_default();
                let invisible = name.trim().is_empty()
                    || node.children().any(|c| {
                        c.has_tag_name("toolspecific")
                            && c.attribute("activity") == Some("$invisible$")
                    });
                let label = if invisible {
                    Label::Tau
                } else {
                    Label::Activity(name.trim().to_string())
                };
                let t = builder.transition(id.clone(), label);
                ids.insert(id, Node::Transition(t));
            }
            "arc" => {
                let src = node
                    .attribute("source")
                    .ok_or_else(|| PetriError::Parse("arc without source".into()))?;
                let tgt = node
                    .attribute("target")
                    .ok_or_else(|| PetriError::Parse("arc without target".into()))?;
                let from = *ids
                    .get(src)
                    .ok_or_else(|| PetriError::Parse(format!("arc source {src:?} undeclared")))?;
                let to = *ids
                    .get(tgt)
                    .ok_or_else(|| PetriError::Parse(format!("arc target {tgt:?} undeclared")))?;
                match (from, to) {
                    (Node::Place(p), Node::Transition(t)) => {
                        builder.arc_pt(p, t);
                    }
                    (Node::Transition(t), Node::Place(p)) => {
                        builder.arc_tp(t, p);
                    }
                    _ => {
                        return Err(PetriError::Parse(format!(
                            "arc {src} -> {tgt} connects nodes of the same kind"
                        )))
                    }
                }
            }
            _ => {}
        }
    }

    let net = builder.build()?;
    // initial marking, when declared, must be exactly one token on the source
    if !initial_tokens.is_empty() {
        let expected = vec![(net.place_name(net.source()).to_string(), 1u32)];
        let mut declared = initial_tokens.clone();
        declared.sort();
        if declared != expected {
            return Err(PetriError::Invalid(vec![format!(
                "declared initial marking {declared:?} is not one token on the source"
            )]));
        }
    }
    Ok(net)
}

/// Serializes a net in the same PNML subset accepted by [`load_model`].
pub fn write_model(net: &WFNet) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<pnml>\n  <net id=\"net\" type=\"http://www.pnml.org/version-2009/grammar/ptnet\">\n");
    for p in net.places() {
        let name = net.place_name(p);
        out.push_str(&format!("    <place id=\"{name}\">"));
        if p == net.source() {
            out.push_str("<initialMarking><text>1</text></initialMarking>");
        }
        out.push_str("</place>\n");
    }
    for t in net.transitions() {
        let name = net.transition_name(t);
        out.push_str(&format!("    <transition id=\"{name}\">"));
        match net.label(t) {
            Label::Activity(a) => out.push_str(&format!("<name><text>{a}</text></name>")),
            Label::Tau => {
                out.push_str("<toolspecific tool=\"conformance\" version=\"1.0\" activity=\"$invisible$\"/>")
            }
        }
        out.push_str("</transition>\n");
    }
    let mut arc_no = 0;
    for t in net.transitions() {
        for &p in net.transition_pre(t) {
            out.push_str(&format!(
                "    <arc id=\"a{arc_no}\" source=\"{}\" target=\"{}\"/>\n",
                net.place_name(p),
                net.transition_name(t)
            ));
            arc_no += 1;
        }
        for &p in net.transition_post(t) {
            out.push_str(&format!(
                "    <arc id=\"a{arc_no}\" source=\"{}\" target=\"{}\"/>\n",
                net.transition_name(t),
                net.place_name(p)
            ));
            arc_no += 1;
        }
    }
    out.push_str("  </net>\n</pnml>\n");
    out
}

fn child_text(node: &roxmltree::Node, tag: &str) -> Option<String> {
    node.children()
        .find(|c| c.has_tag_name(tag))
        .map(|c| {
            c.descendants()
                .filter(|d| d.is_text())
                .map(|d| d.text().unwrap_or(""))
                .collect::<String>()
        })
}
