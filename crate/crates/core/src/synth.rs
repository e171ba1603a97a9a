//! Seeded synthetic streams for tests, benchmarks and demos.

use rand::seq::index;
use rand::Rng;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::model::{Event, EventStream, NodeId, Timestamp};
use crate::seed;

const SYNTH: u64 = 7 << 32;

/// Snapshot graph whose edge set is redrawn every `period` snapshots and
/// repeated unchanged in between, plus a few random edges per snapshot.
/// Snapshot `i` has timestamp `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftConfig {
    pub num_nodes: usize,
    pub snapshots: usize,
    pub period: usize,
    pub edges_per_phase: usize,
    pub noise_per_snapshot: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            num_nodes: 50,
            snapshots: 40,
            period: 5,
            edges_per_phase: 30,
            noise_per_snapshot: 5,
        }
    }
}

fn distinct_pairs(rng: &mut impl Rng, n: usize, k: usize) -> Vec<(NodeId, NodeId)> {
    let mut seen = FxHashSet::default();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let s = rng.gen_range(0..n) as NodeId;
        let d = rng.gen_range(0..n) as NodeId;
        if s != d && seen.insert((s, d)) {
            out.push((s, d));
        }
    }
    out
}

pub fn drifting_recurrence(cfg: &DriftConfig, seed: u64) -> Result<EventStream> {
    let n = cfg.num_nodes;
    if n < 2 || cfg.snapshots == 0 || cfg.period == 0 {
        return Err(Error::Parameter(
            "drift generator needs >= 2 nodes, snapshots and a period".into(),
        ));
    }
    if cfg.edges_per_phase + cfg.noise_per_snapshot == 0 || cfg.edges_per_phase > n * (n - 1) {
        return Err(Error::Parameter("edge count does not fit the node set".into()));
    }
    let mut rng = seed::rng(seed, SYNTH);
    let mut events = Vec::new();
    let mut phase = Vec::new();
    for i in 0..cfg.snapshots {
        if i % cfg.period == 0 {
            phase = distinct_pairs(&mut rng, n, cfg.edges_per_phase);
        }
        let t = i as Timestamp;
        events.extend(phase.iter().map(|&(s, d)| Event::new(s, d, t)));
        for _ in 0..cfg.noise_per_snapshot {
            let s = rng.gen_range(0..n) as NodeId;
            let d = (s + rng.gen_range(1..n) as NodeId) % n as NodeId;
            events.push(Event::new(s, d, t));
        }
    }
    EventStream::with_num_nodes(events, n)
}

/// `num_events` transient events between uniform random distinct endpoints,
/// `per_tick` events per timestamp starting at 0.
pub fn uniform_stream(num_nodes: usize, num_events: usize, per_tick: usize, seed: u64) -> Result<EventStream> {
    if num_nodes < 2 || per_tick == 0 {
        return Err(Error::Parameter("need >= 2 nodes and >= 1 event per tick".into()));
    }
    let mut rng = seed::rng(seed, SYNTH + 1);
    let events = (0..num_events)
        .map(|i| {
            let s = rng.gen_range(0..num_nodes) as NodeId;
            let d = (s + rng.gen_range(1..num_nodes) as NodeId) % num_nodes as NodeId;
            Event::new(s, d, (i / per_tick) as Timestamp)
        })
        .collect();
    EventStream::with_num_nodes(events, num_nodes)
}

/// Events at second resolution covering exactly `hours` hours from `t0`:
/// every hour gets between 1 and `max_per_hour` events, the first lands on
/// `t0` and the last inside the final hour.
pub fn hourly_stream(
    hours: usize,
    max_per_hour: usize,
    num_nodes: usize,
    t0: Timestamp,
    seed: u64,
) -> Result<EventStream> {
    if hours == 0 || max_per_hour == 0 || num_nodes < 2 {
        return Err(Error::Parameter(
            "need >= 1 hour, >= 1 event per hour and >= 2 nodes".into(),
        ));
    }
    let mut rng = seed::rng(seed, SYNTH + 2);
    let mut events = Vec::new();
    for h in 0..hours as Timestamp {
        let k = rng.gen_range(1..=max_per_hour);
        let mut offsets: Vec<Timestamp> = index::sample(&mut rng, 3600, k.min(3600))
            .into_iter()
            .map(|o| o as Timestamp)
            .collect();
        if h == 0 {
            offsets[0] = 0;
        }
        offsets.sort_unstable();
        for o in offsets {
            let s = rng.gen_range(0..num_nodes) as NodeId;
            let d = (s + rng.gen_range(1..num_nodes) as NodeId) % num_nodes as NodeId;
            events.push(Event::new(s, d, t0 + h * 3600 + o));
        }
    }
    EventStream::with_num_nodes(events, num_nodes)
}
