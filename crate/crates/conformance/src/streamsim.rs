//! Event model, log ingestion, time-compressed replay, and synthetic log
//! generation from block-structured process trees.

use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::Topic;
use crate::petri::{Label, WFNet, WFNetBuilder};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub case_id: String,
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    /// Global arrival index, strictly increasing in emission order.
    pub seq: u64,
}

/// Events sorted by timestamp, ties broken by file order.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub events: Vec<Event>,
    /// Rows dropped at load time for missing case or activity.
    pub rejected: usize,
}

impl EventLog {
    pub fn from_events(mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| (e.timestamp, e.seq));
        for (i, e) in events.iter_mut().enumerate() {
            e.seq = i as u64;
        }
        EventLog { events, rejected: 0 }
    }

    pub fn span(&self) -> Duration {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp)
                .to_std()
                .unwrap_or(Duration::ZERO),
            _ => Duration::ZERO,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: unparseable timestamp {value:?}")]
    BadTimestamp { row: usize, value: String },
    #[error("empty log")]
    EmptyLog,
    #[error("xes parse error: {0}")]
    Xes(String),
    #[error("process tree parse error: {0}")]
    TreeParse(String),
    #[error("topic closed during replay")]
    TopicClosed,
    #[error("cannot generate an empty log (cases = 0)")]
    NoCases,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Xes,
}

/// Loads a log from disk; CSV schema `case,activity,timestamp` (RFC 3339
/// timestamps) or a minimal XES subset.
pub fn load_log(path: impl AsRef<Path>, format: LogFormat) -> Result<EventLog, StreamError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        LogFormat::Csv => parse_csv_log(&text),
        LogFormat::Xes => parse_xes_log(&text),
    }
}

pub fn parse_csv_log(text: &str) -> Result<EventLog, StreamError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ci, ai, ti) = match (col("case"), col("activity"), col("timestamp")) {
        (Some(c), Some(a), Some(t)) => (c, a, t),
        _ => (0, 1, 2),
    };
    let mut events = Vec::new();
    let mut rejected = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let case = record.get(ci).unwrap_or("").trim();
        let activity = record.get(ai).unwrap_or("").trim();
        let ts = record.get(ti).unwrap_or("").trim();
        if case.is_empty() || activity.is_empty() {
            rejected += 1;
            continue;
        }
        let timestamp = DateTime::parse_from_rfc3339(ts)
            .map_err(|_| StreamError::BadTimestamp {
                row: row + 2, // 1-based, after header
                value: ts.to_string(),
            })?
            .with_timezone(&Utc);
        events.push(Event {
            case_id: case.to_string(),
            activity: activity.to_string(),
            timestamp,
            seq: events.len() as u64,
        });
    }
    if events.is_empty() {
        return Err(StreamError::EmptyLog);
    }
    let mut log = EventLog::from_events(events);
    log.rejected = rejected;
    if rejected > 0 {
        eprintln!("load_log: rejected {rejected} rows with missing case or activity");
    }
    Ok(log)
}

fn parse_xes_log(text: &str) -> Result<EventLog, StreamError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| StreamError::Xes(e.to_string()))?;
    let attr_value = |node: &roxmltree::Node, key: &str| -> Option<String> {
        node.children()
            .find(|c| c.is_element() && c.attribute("key") == Some(key))
            .and_then(|c| c.attribute("value").map(str::to_string))
    };
    let mut events = Vec::new();
    let mut rejected = 0;
    for trace in doc.descendants().filter(|n| n.has_tag_name("trace")) {
        let case = attr_value(&trace, "concept:name").unwrap_or_default();
        for ev in trace.children().filter(|n| n.has_tag_name("event")) {
            let activity = attr_value(&ev, "concept:name").unwrap_or_default();
            let ts = attr_value(&ev, "time:timestamp").unwrap_or_default();
            if case.is_empty() || activity.is_empty() {
                rejected += 1;
                continue;
            }
            let timestamp = DateTime::parse_from_rfc3339(&ts)
                .map_err(|_| StreamError::Xes(format!("bad timestamp {ts:?}")))?
                .with_timezone(&Utc);
            events.push(Event {
                case_id: case.clone(),
                activity,
                timestamp,
                seq: events.len() as u64,
            });
        }
    }
    if events.is_empty() {
        return Err(StreamError::EmptyLog);
    }
    let mut log = EventLog::from_events(events);
    log.rejected = rejected;
    Ok(log)
}

pub fn write_csv_log(log: &EventLog, path: impl AsRef<Path>) -> Result<(), StreamError> {
    let mut w = csv::Writer::from_path(path).map_err(csv::Error::from)?;
    w.write_record(["case", "activity", "timestamp"])?;
    for e in &log.events {
        w.write_record([
            e.case_id.as_str(),
            e.activity.as_str(),
            &e.timestamp.to_rfc3339(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-event emission offsets scaled into a target replay duration.
#[derive(Debug, Clone)]
pub struct ReplaySchedule {
    pub target: Duration,
    /// Seconds from replay start, one per log event, non-decreasing.
    pub offsets: Vec<f64>,
}

/// Maps each event's timestamp proportionally into `[0, target]` so relative
/// distances between events are preserved.
pub fn compress_timeline(log: &EventLog, target: Duration) -> ReplaySchedule {
    let target_secs = target.as_secs_f64();
    let span = log.span().as_secs_f64();
    let start = log.events.first().map(|e| e.timestamp);
    let offsets = log
        .events
        .iter()
        .map(|e| {
            if span == 0.0 {
                0.0
            } else {
                let dt = (e.timestamp - start.unwrap())
                    .to_std()
                    .unwrap_or(Duration::ZERO)
                    .as_secs_f64();
                dt / span * target_secs
            }
        })
        .collect();
    ReplaySchedule {
        target,
        offsets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedMode {
    /// Sleep until each event's scheduled offset.
    RealTime,
    /// Emit back-to-back, preserving order only.
    MaxSpeed,
}

/// Produces the log's events to the topic per the schedule, then closes the
/// topic.
pub fn replay(
    schedule: &ReplaySchedule,
    log: &EventLog,
    topic: &Topic,
    mode: SpeedMode,
) -> Result<(), StreamError> {
    let start = Instant::now();
    for (event, &offset) in log.events.iter().zip(&schedule.offsets) {
        if mode == SpeedMode::RealTime {
            let due = Duration::from_secs_f64(offset);
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
        if topic.is_closed() {
            return Err(StreamError::TopicClosed);
        }
        topic.produce(event.clone());
    }
    topic.close();
    Ok(())
}

/// Block-structured process tree over activity names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessTree {
    Leaf(String),
    Seq(Vec<ProcessTree>),
    Xor(Vec<ProcessTree>),
    Par(Vec<ProcessTree>),
    /// Do-part, redo-part; the redo loops back to the do-part.
    Loop(Box<ProcessTree>, Box<ProcessTree>),
}

impl ProcessTree {
    /// Parses the `seq(a, xor(b, c))` grammar. Operators: `seq`, `xor`,
    /// `par` (also `and`), `loop(do, redo)`.
    pub fn parse(spec: &str) -> Result<ProcessTree, StreamError> {
        let tokens = tokenize(spec);
        let mut pos = 0;
        let tree = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(StreamError::TreeParse(format!(
                "trailing input after position {pos}"
            )));
        }
        Ok(tree)
    }

    pub fn activities(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_activities(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_activities(&self, out: &mut Vec<String>) {
        match self {
            ProcessTree::Leaf(a) => out.push(a.clone()),
            ProcessTree::Seq(cs) | ProcessTree::Xor(cs) | ProcessTree::Par(cs) => {
                for c in cs {
                    c.collect_activities(out);
                }
            }
            ProcessTree::Loop(a, b) => {
                a.collect_activities(out);
                b.collect_activities(out);
            }
        }
    }

    /// Derives a sound WF-net accepting exactly the tree's language.
    pub fn to_wfnet(&self) -> WFNet {
        let mut b = WFNetBuilder::new();
        let source = b.place("source");
        let sink = b.place("sink");
        let mut fresh = Fresh::default();
        build_net(self, &mut b, source, sink, &mut fresh);
        b.build().expect("tree-derived net is a WF-net")
    }

    /// One random trace from the tree's language.
    pub fn sample_trace(&self, rng: &mut impl Rng) -> Vec<String> {
        match self {
            ProcessTree::Leaf(a) => vec![a.clone()],
            ProcessTree::Seq(cs) => cs.iter().flat_map(|c| c.sample_trace(rng)).collect(),
            ProcessTree::Xor(cs) => {
                let i = rng.gen_range(0..cs.len());
                cs[i].sample_trace(rng)
            }
            ProcessTree::Par(cs) => {
                // random interleaving of the children's traces
                let mut queues: Vec<Vec<String>> =
                    cs.iter().map(|c| c.sample_trace(rng)).collect();
                let mut out = Vec::new();
                while queues.iter().any(|q| !q.is_empty()) {
                    let nonempty: Vec<usize> = queues
                        .iter()
                        .enumerate()
                        .filter(|(_, q)| !q.is_empty())
                        .map(|(i, _)| i)
                        .collect();
                    let pick = nonempty[rng.gen_range(0..nonempty.len())];
                    out.push(queues[pick].remove(0));
                }
                out
            }
            ProcessTree::Loop(body, redo) => {
                let mut out = body.sample_trace(rng);
                let mut repeats = 0;
                while repeats < 3 && rng.gen_bool(0.5) {
                    out.extend(redo.sample_trace(rng));
                    out.extend(body.sample_trace(rng));
                    repeats += 1;
                }
                out
            }
        }
    }
}

#[derive(Default)]
struct Fresh {
    places: usize,
    transitions: usize,
}

impl Fresh {
    fn place(&mut self, b: &mut WFNetBuilder) -> crate::petri::PlaceId {
        self.places += 1;
        b.place(format!("q{}", self.places))
    }
    fn tau(&mut self, b: &mut WFNetBuilder) -> crate::petri::TransitionId {
        self.transitions += 1;
        b.transition(format!("tau{}", self.transitions), Label::Tau)
    }
    fn visible(&mut self, b: &mut WFNetBuilder, a: &str) -> crate::petri::TransitionId {
        self.transitions += 1;
        b.transition(format!("t{}_{a}", self.transitions), Label::Activity(a.to_string()))
    }
}

fn build_net(
    tree: &ProcessTree,
    b: &mut WFNetBuilder,
    entry: crate::petri::PlaceId,
    exit: crate::petri::PlaceId,
    fresh: &mut Fresh,
) {
    match tree {
        ProcessTree::Leaf(a) => {
            let t = fresh.visible(b, a);
            b.arc_pt(entry, t).arc_tp(t, exit);
        }
        ProcessTree::Seq(cs) => {
            let mut from = entry;
            for (i, c) in cs.iter().enumerate() {
                let to = if i + 1 == cs.len() {
                    exit
                } else {
                    fresh.place(b)
                };
                build_net(c, b, from, to, fresh);
                from = to;
            }
            if cs.is_empty() {
                let t = fresh.tau(b);
                b.arc_pt(entry, t).arc_tp(t, exit);
            }
        }
        ProcessTree::Xor(cs) => {
            for c in cs {
                build_net(c, b, entry, exit, fresh);
            }
        }
        ProcessTree::Par(cs) => {
            let split = fresh.tau(b);
            let join = fresh.tau(b);
            b.arc_pt(entry, split);
            b.arc_tp(join, exit);
            for c in cs {
                let cin = fresh.place(b);
                let cout = fresh.place(b);
                b.arc_tp(split, cin);
                b.arc_pt(cout, join);
                build_net(c, b, cin, cout, fresh);
            }
        }
        ProcessTree::Loop(body, redo) => {
            let pin = fresh.place(b);
            let pout = fresh.place(b);
            let enter = fresh.tau(b);
            let leave = fresh.tau(b);
            b.arc_pt(entry, enter).arc_tp(enter, pin);
            b.arc_pt(pout, leave).arc_tp(leave, exit);
            build_net(body, b, pin, pout, fresh);
            build_net(redo, b, pout, pin, fresh);
        }
    }
}

fn tokenize(spec: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in spec.chars() {
        match ch {
            '(' | ')' | ',' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_node(tokens: &[String], pos: &mut usize) -> Result<ProcessTree, StreamError> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| StreamError::TreeParse("unexpected end of input".into()))?
        .clone();
    *pos += 1;
    let is_op = matches!(tok.as_str(), "seq" | "xor" | "par" | "and" | "loop")
        && tokens.get(*pos).map(String::as_str) == Some("(");
    if !is_op {
        if tok == "(" || tok == ")" || tok == "," {
            return Err(StreamError::TreeParse(format!("unexpected token {tok:?}")));
        }
        return Ok(ProcessTree::Leaf(tok));
    }
    *pos += 1; // consume '('
    let mut children = Vec::new();
    loop {
        children.push(parse_node(tokens, pos)?);
        match tokens.get(*pos).map(String::as_str) {
            Some(",") => *pos += 1,
            Some(")") => {
                *pos += 1;
                break;
            }
            other => {
                return Err(StreamError::TreeParse(format!(
                    "expected ',' or ')', found {other:?}"
                )))
            }
        }
    }
    match tok.as_str() {
        "seq" => Ok(ProcessTree::Seq(children)),
        "xor" => Ok(ProcessTree::Xor(children)),
        "par" | "and" => Ok(ProcessTree::Par(children)),
        "loop" => {
            if children.len() != 2 {
                return Err(StreamError::TreeParse(
                    "loop takes exactly two children (do, redo)".into(),
                ));
            }
            let mut it = children.into_iter();
            Ok(ProcessTree::Loop(
                Box::new(it.next().unwrap()),
                Box::new(it.next().unwrap()),
            ))
        }
        _ => unreachable!(),
    }
}

/// Generates `cases` random traces from the tree, applies per-event noise
/// (swap, drop, or insert with probability `noise`), and interleaves them on
/// a synthetic timeline. Deterministic for a fixed seed.
pub fn generate_synthetic(
    tree: &ProcessTree,
    cases: usize,
    noise: f64,
    seed: u64,
) -> Result<EventLog, StreamError> {
    if cases == 0 {
        return Err(StreamError::NoCases);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = tree.activities();
    let base = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut events = Vec::new();
    for case in 0..cases {
        let mut trace = tree.sample_trace(&mut rng);
        apply_noise(&mut trace, noise, &alphabet, &mut rng);
        // stagger case starts so traces interleave on the global timeline
        let start = base + chrono::Duration::seconds(case as i64 * 37);
        for (i, activity) in trace.into_iter().enumerate() {
            events.push(Event {
                case_id: format!("c{}", case + 1),
                activity,
                timestamp: start + chrono::Duration::seconds(i as i64 * 60),
                seq: events.len() as u64,
            });
        }
    }
    if events.is_empty() {
        return Err(StreamError::EmptyLog);
    }
    Ok(EventLog::from_events(events))
}

fn apply_noise(trace: &mut Vec<String>, noise: f64, alphabet: &[String], rng: &mut impl Rng) {
    if noise <= 0.0 || alphabet.is_empty() {
        return;
    }
    let mut i = 0;
    while i < trace.len() {
        if rng.gen_bool(noise.min(1.0)) {
            match rng.gen_range(0..3u8) {
                0 if i + 1 < trace.len() => trace.swap(i, i + 1),
                1 => {
                    trace.remove(i);
                    continue; // do not advance past the shifted element
                }
                _ => {
                    let a = alphabet.choose(rng).unwrap().clone();
                    trace.insert(i, a);
                    i += 1; // skip the inserted element
                }
            }
        }
        i += 1;
    }
}
