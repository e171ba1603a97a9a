//! Shared vocabulary for both temporal-graph representations: the event
//! stream (continuous time) and the snapshot sequence (discrete time).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input_mapper::Partition;

pub type NodeId = u32;
/// Raw integer timestamp in dataset-native ticks (usually seconds).
pub type Timestamp = u64;

/// One directed, timestamped edge. Transient edges have `t_start == t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Event {
    pub fn new(src: NodeId, dst: NodeId, t: Timestamp) -> Self {
        Event {
            src,
            dst,
            t_start: t,
            t_end: t,
            weight: 1.0,
        }
    }

    pub fn persistent(src: NodeId, dst: NodeId, t_start: Timestamp, t_end: Timestamp) -> Self {
        Event {
            src,
            dst,
            t_start,
            t_end,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn pair(&self) -> (NodeId, NodeId) {
        (self.src, self.dst)
    }

    pub fn is_transient(&self) -> bool {
        self.t_start == self.t_end
    }

    /// Bit-level key, usable for multiset comparisons (weights compared by bits).
    pub fn key(&self) -> (NodeId, NodeId, Timestamp, Timestamp, u64) {
        (self.src, self.dst, self.t_start, self.t_end, self.weight.to_bits())
    }
}

/// A chronologically sorted, validated stream of events over a dense node universe.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    num_nodes: usize,
    t_min: Timestamp,
    t_max: Timestamp,
    transient: bool,
}

impl EventStream {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn t_min(&self) -> Timestamp {
        self.t_min
    }

    pub fn t_max(&self) -> Timestamp {
        self.t_max
    }

    pub fn transient(&self) -> bool {
        self.transient
    }

    /// Builds a stream over an explicit node universe. The universe must
    /// cover every endpoint; it may be larger (split parts share the parent's).
    pub fn with_num_nodes(events: Vec<Event>, num_nodes: usize) -> Result<Self> {
        let mut stream = validate_stream(events)?;
        if num_nodes < stream.num_nodes {
            let node = stream
                .events
                .iter()
                .flat_map(|e| [e.src, e.dst])
                .find(|&v| v as usize >= num_nodes)
                .unwrap_or_default();
            return Err(Error::NodeOutOfRange { node, num_nodes });
        }
        stream.num_nodes = num_nodes;
        Ok(stream)
    }

    /// Concatenation of `self` and a chronologically later stream over the
    /// same node universe.
    pub fn concat(&self, later: &EventStream) -> Result<EventStream> {
        let mut events = Vec::with_capacity(self.len() + later.len());
        events.extend_from_slice(&self.events);
        events.extend_from_slice(&later.events);
        EventStream::with_num_nodes(events, self.num_nodes.max(later.num_nodes))
    }
}

/// Validates raw events: stable-sorts by `t_start`, derives the node count,
/// time bounds and the transient flag.
pub fn validate_stream(mut events: Vec<Event>) -> Result<EventStream> {
    if events.is_empty() {
        return Err(Error::EmptyStream);
    }
    let bad: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.t_start > e.t_end)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::InvalidEvents(bad));
    }
    if !events.windows(2).all(|w| w[0].t_start <= w[1].t_start) {
        events.sort_by_key(|e| e.t_start);
    }
    let num_nodes = events.iter().map(|e| e.src.max(e.dst)).max().unwrap_or(0) as usize + 1;
    let t_min = events[0].t_start;
    let t_max = events.iter().map(|e| e.t_end).max().unwrap_or(t_min);
    let transient = events.iter().all(Event::is_transient);
    Ok(EventStream {
        events,
        num_nodes,
        t_min,
        t_max,
        transient,
    })
}

/// A timestamp mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct NormalizedTime(f64);

impl NormalizedTime {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn normalize_time(t: Timestamp, stream: &EventStream) -> Result<NormalizedTime> {
    let (lo, hi) = (stream.t_min, stream.t_max);
    if t < lo || t > hi {
        return Err(Error::OutOfRange { t, lo, hi });
    }
    if hi == lo {
        return Ok(NormalizedTime(0.0));
    }
    Ok(NormalizedTime((t - lo) as f64 / (hi - lo) as f64))
}

/// The graph induced on one partition interval `[lo, hi)`; the last
/// interval of a partition is also closed at `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub lo: Timestamp,
    pub hi: Timestamp,
    pub nodes: BTreeSet<NodeId>,
    pub edges: Vec<Event>,
}

impl Snapshot {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Consecutive snapshots over a regular partition. `offset` is the global
/// interval index of the first snapshot when the sequence covers only part
/// of a larger partition (e.g. one split of a stream).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSequence {
    snapshots: Vec<Snapshot>,
    partition: Partition,
    offset: usize,
}

impl SnapshotSequence {
    pub(crate) fn new(snapshots: Vec<Snapshot>, partition: Partition, offset: usize) -> Self {
        debug_assert_eq!(snapshots.len(), partition.count());
        debug_assert!(snapshots.iter().enumerate().all(|(i, s)| s.index == i));
        SnapshotSequence {
            snapshots,
            partition,
            offset,
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.snapshots.iter().map(|s| s.edges.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ts: &[(u32, u32, u64)]) -> EventStream {
        validate_stream(ts.iter().map(|&(s, d, t)| Event::new(s, d, t)).collect()).unwrap()
    }

    #[test]
    fn sorts_and_flags_transient() {
        let s = validate_stream(vec![Event::new(0, 1, 5), Event::new(2, 3, 2)]).unwrap();
        assert_eq!(s.events(), &[Event::new(2, 3, 2), Event::new(0, 1, 5)]);
        assert!(s.transient());
        assert_eq!(s.num_nodes(), 4);
        assert_eq!((s.t_min(), s.t_max()), (2, 5));
    }

    #[test]
    fn rejects_reversed_interval() {
        let err = validate_stream(vec![Event::persistent(0, 1, 5, 4)]).unwrap_err();
        assert!(matches!(err, Error::InvalidEvents(ref v) if v == &[0]));
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(validate_stream(vec![]), Err(Error::EmptyStream)));
    }

    #[test]
    fn single_persistent_event() {
        let s = validate_stream(vec![Event::persistent(0, 1, 7, 9)]).unwrap();
        assert!(!s.transient());
        assert_eq!((s.t_min(), s.t_max()), (7, 9));
    }

    #[test]
    fn sort_is_stable_on_ties() {
        let s = stream(&[(0, 1, 3), (4, 5, 1), (2, 3, 3), (6, 7, 1)]);
        let pairs: Vec<_> = s.events().iter().map(Event::pair).collect();
        assert_eq!(pairs, vec![(4, 5), (6, 7), (0, 1), (2, 3)]);
    }

    #[test]
    fn normalize_endpoints_and_interior() {
        let s = stream(&[(0, 1, 100), (1, 2, 300)]);
        assert_eq!(normalize_time(100, &s).unwrap().value(), 0.0);
        assert_eq!(normalize_time(300, &s).unwrap().value(), 1.0);
        assert_eq!(normalize_time(150, &s).unwrap().value(), 0.25);
        assert!(matches!(normalize_time(99, &s), Err(Error::OutOfRange { .. })));
        assert!(matches!(normalize_time(301, &s), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn normalize_degenerate_stream() {
        let s = stream(&[(0, 1, 42)]);
        assert_eq!(normalize_time(42, &s).unwrap().value(), 0.0);
    }

    #[test]
    fn explicit_universe_must_cover_endpoints() {
        let events = vec![Event::new(0, 5, 1)];
        assert!(EventStream::with_num_nodes(events.clone(), 10).is_ok());
        assert!(matches!(
            EventStream::with_num_nodes(events, 3),
            Err(Error::NodeOutOfRange { node: 5, num_nodes: 3 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn events() -> impl Strategy<Value = Vec<Event>> {
            prop::collection::vec((0u32..20, 0u32..20, 0u64..1000, 0u64..50), 1..60).prop_map(|v| {
                v.into_iter()
                    .map(|(s, d, t, len)| Event::persistent(s, d, t, t + len))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn validation_is_idempotent(evs in events()) {
                let once = validate_stream(evs).unwrap();
                let twice = validate_stream(once.events().to_vec()).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn normalize_is_monotone(evs in events(), a in 0u64..2000, b in 0u64..2000) {
                let s = validate_stream(evs).unwrap();
                let span = s.t_max() - s.t_min();
                let (a, b) = (s.t_min() + a % (span + 1), s.t_min() + b % (span + 1));
                let (na, nb) = (normalize_time(a, &s).unwrap(), normalize_time(b, &s).unwrap());
                prop_assert!((0.0..=1.0).contains(&na.value()));
                if a < b && span > 0 {
                    prop_assert!(na < nb);
                }
            }
        }
    }
}
