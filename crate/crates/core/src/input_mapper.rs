//! Conversion between the two representations: event stream to snapshots via
//! regular discretization partitions, and snapshots (or raw streams) to the
//! batches consumed by streaming models.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Event, EventStream, Snapshot, SnapshotSequence, Timestamp};

/// A set of contiguous intervals `[τ_i, τ_{i+1})` covering a stream's span,
/// with the last interval also closed on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    kind: Kind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    /// Boundaries are `origin + i * width` for `i in 0..=count`; never materialized.
    Regular {
        origin: Timestamp,
        width: Timestamp,
        count: usize,
    },
    Irregular(Vec<Timestamp>),
}

impl Partition {
    pub fn regular(origin: Timestamp, width: Timestamp, count: usize) -> Result<Self> {
        if width == 0 || count == 0 {
            return Err(Error::Parameter(format!(
                "regular partition needs width >= 1 and count >= 1 (got {width}, {count})"
            )));
        }
        (count as u64)
            .checked_mul(width)
            .and_then(|len| origin.checked_add(len))
            .ok_or_else(|| Error::Parameter("partition end overflows the timestamp range".into()))?;
        Ok(Partition {
            kind: Kind::Regular { origin, width, count },
        })
    }

    /// Arbitrary strictly increasing boundaries `τ_0 < τ_1 < ... < τ_k`, `k >= 1`.
    pub fn from_boundaries(boundaries: Vec<Timestamp>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Parameter("partition needs at least two boundaries".into()));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parameter(
                "partition boundaries must be strictly increasing".into(),
            ));
        }
        let width = boundaries[1] - boundaries[0];
        if boundaries.windows(2).all(|w| w[1] - w[0] == width) {
            return Partition::regular(boundaries[0], width, boundaries.len() - 1);
        }
        Ok(Partition {
            kind: Kind::Irregular(boundaries),
        })
    }

    /// Number of intervals, `|P|`.
    pub fn count(&self) -> usize {
        match &self.kind {
            Kind::Regular { count, .. } => *count,
            Kind::Irregular(b) => b.len() - 1,
        }
    }

    pub fn boundary(&self, i: usize) -> Timestamp {
        match &self.kind {
            Kind::Regular { origin, width, count } => {
                assert!(i <= *count, "boundary {i} out of range");
                origin + i as u64 * width
            }
            Kind::Irregular(b) => b[i],
        }
    }

    pub fn boundaries(&self) -> Vec<Timestamp> {
        (0..=self.count()).map(|i| self.boundary(i)).collect()
    }

    pub fn lo(&self) -> Timestamp {
        self.boundary(0)
    }

    pub fn hi(&self) -> Timestamp {
        self.boundary(self.count())
    }

    pub fn interval(&self, i: usize) -> (Timestamp, Timestamp) {
        (self.boundary(i), self.boundary(i + 1))
    }

    /// Common interval length, `None` for irregular partitions.
    pub fn width(&self) -> Option<Timestamp> {
        match &self.kind {
            Kind::Regular { width, .. } => Some(*width),
            Kind::Irregular(_) => None,
        }
    }

    pub fn is_regular(&self) -> bool {
        matches!(self.kind, Kind::Regular { .. })
    }

    /// `||P||`, the longest interval.
    pub fn norm(&self) -> Timestamp {
        match &self.kind {
            Kind::Regular { width, .. } => *width,
            Kind::Irregular(b) => b.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0),
        }
    }

    /// Index `i` with `τ_i <= t < τ_{i+1}`; `τ_k` maps to the last interval.
    pub fn index_of(&self, t: Timestamp) -> Result<usize> {
        let (lo, hi) = (self.lo(), self.hi());
        if t < lo || t > hi {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let last = self.count() - 1;
        let i = match &self.kind {
            Kind::Regular { origin, width, .. } => ((t - origin) / width) as usize,
            Kind::Irregular(b) => b.partition_point(|&x| x <= t) - 1,
        };
        Ok(i.min(last))
    }

    /// The sub-partition made of intervals `first..=last`.
    pub fn slice(&self, first: usize, last: usize) -> Partition {
        assert!(first <= last && last < self.count(), "bad slice {first}..={last}");
        match &self.kind {
            Kind::Regular { origin, width, .. } => Partition {
                kind: Kind::Regular {
                    origin: origin + first as u64 * width,
                    width: *width,
                    count: last - first + 1,
                },
            },
            Kind::Irregular(b) => Partition {
                kind: Kind::Irregular(b[first..=last + 1].to_vec()),
            },
        }
    }
}

/// Named time granularities. Months are a fixed 30 days so that every
/// partition built from a granularity stays regular.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Second,
    Minute,
    Hour,
    Day,
    Week,
    Month,
    Custom(Timestamp),
}

impl Granularity {
    pub const NAMED: [Granularity; 6] = [
        Granularity::Second,
        Granularity::Minute,
        Granularity::Hour,
        Granularity::Day,
        Granularity::Week,
        Granularity::Month,
    ];

    pub fn width(self) -> Timestamp {
        match self {
            Granularity::Second => 1,
            Granularity::Minute => 60,
            Granularity::Hour => 3_600,
            Granularity::Day => 86_400,
            Granularity::Week => 604_800,
            Granularity::Month => 2_592_000,
            Granularity::Custom(w) => w,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Second => f.write_str("second"),
            Granularity::Minute => f.write_str("minute"),
            Granularity::Hour => f.write_str("hour"),
            Granularity::Day => f.write_str("day"),
            Granularity::Week => f.write_str("week"),
            Granularity::Month => f.write_str("month"),
            Granularity::Custom(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let g = match s.to_ascii_lowercase().as_str() {
            "second" | "secondly" | "s" => Granularity::Second,
            "minute" | "minutely" | "min" => Granularity::Minute,
            "hour" | "hourly" | "h" => Granularity::Hour,
            "day" | "daily" | "d" => Granularity::Day,
            "week" | "weekly" | "w" => Granularity::Week,
            "month" | "monthly" => Granularity::Month,
            other => {
                let w: Timestamp = other
                    .parse()
                    .map_err(|_| Error::Parameter(format!("unknown granularity `{s}`")))?;
                if w == 0 {
                    return Err(Error::Parameter("granularity width must be >= 1".into()));
                }
                Granularity::Custom(w)
            }
        };
        Ok(g)
    }
}

impl Serialize for Granularity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Granularity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a regular partition is sized: by interval width or by interval count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Width(Timestamp),
    Count(usize),
}

impl From<Granularity> for Resolution {
    fn from(g: Granularity) -> Self {
        Resolution::Width(g.width())
    }
}

/// Regular partition anchored at `t_min` with the minimal number of
/// intervals covering `t_max`.
pub fn make_partition(stream: &EventStream, resolution: impl Into<Resolution>) -> Result<Partition> {
    let span = stream.t_max() - stream.t_min() + 1;
    let width = match resolution.into() {
        Resolution::Width(0) => return Err(Error::Parameter("width must be >= 1".into())),
        Resolution::Width(w) => w,
        Resolution::Count(0) => return Err(Error::Parameter("count must be >= 1".into())),
        Resolution::Count(n) => span.div_ceil(n as u64),
    };
    let count = span.div_ceil(width) as usize;
    Partition::regular(stream.t_min(), width, count)
}

/// `Δ = 1 / |P|`.
pub fn discretization_level(p: &Partition) -> f64 {
    1.0 / p.count() as f64
}

fn covered_range(p: &Partition, index: usize, e: &Event) -> Result<(usize, usize)> {
    let err = || Error::Coverage {
        index,
        t_start: e.t_start,
        t_end: e.t_end,
        lo: p.lo(),
        hi: p.hi(),
    };
    let a = p.index_of(e.t_start).map_err(|_| err())?;
    let b = p.index_of(e.t_end).map_err(|_| err())?;
    Ok((a, b))
}

fn build_snapshots(events: &[Event], p: &Partition, first: usize, count: usize) -> Result<Vec<Snapshot>> {
    let mut snapshots: Vec<Snapshot> = (0..count)
        .map(|i| {
            let (lo, hi) = p.interval(first + i);
            Snapshot {
                index: i,
                lo,
                hi,
                nodes: BTreeSet::new(),
                edges: Vec::new(),
            }
        })
        .collect();
    for (index, e) in events.iter().enumerate() {
        let (a, b) = covered_range(p, index, e)?;
        let (a, b) = (a.max(first), b.min(first + count - 1));
        for snap in &mut snapshots[a - first..=b - first] {
            snap.nodes.insert(e.src);
            snap.nodes.insert(e.dst);
            snap.edges.push(*e);
        }
    }
    Ok(snapshots)
}

/// Snapshot `i` holds every event with `t_start < τ_{i+1}` and `t_end >= τ_i`,
/// so persistent events are replicated into each interval they overlap.
pub fn induce_snapshots(stream: &EventStream, p: &Partition) -> Result<SnapshotSequence> {
    let snapshots = build_snapshots(stream.events(), p, 0, p.count())?;
    Ok(SnapshotSequence::new(snapshots, p.clone(), 0))
}

/// Like [`induce_snapshots`] but keeps only the intervals of a larger
/// partition spanned by `stream` (`t_min..=t_max`). Used for split parts that
/// must share one global partition.
pub fn induce_window(stream: &EventStream, p: &Partition) -> Result<SnapshotSequence> {
    let first = p.index_of(stream.t_min()).map_err(|_| Error::Coverage {
        index: 0,
        t_start: stream.t_min(),
        t_end: stream.t_min(),
        lo: p.lo(),
        hi: p.hi(),
    })?;
    let last = p.index_of(stream.t_max()).map_err(|_| Error::Coverage {
        index: stream.len() - 1,
        t_start: stream.t_max(),
        t_end: stream.t_max(),
        lo: p.lo(),
        hi: p.hi(),
    })?;
    let count = last - first + 1;
    let snapshots = build_snapshots(stream.events(), p, first, count)?;
    Ok(SnapshotSequence::new(snapshots, p.slice(first, last), first))
}

/// Indices of snapshots with an empty edge set.
pub fn find_time_gaps(seq: &SnapshotSequence) -> Vec<usize> {
    seq.snapshots()
        .iter()
        .filter(|s| s.is_empty())
        .map(|s| s.index)
        .collect()
}

/// Number of empty intervals `stream` would induce on `p`, computed from
/// interval coverage without materializing snapshots.
pub fn count_gaps(stream: &EventStream, p: &Partition) -> Result<usize> {
    let mut ranges = Vec::with_capacity(stream.len());
    for (index, e) in stream.events().iter().enumerate() {
        ranges.push(covered_range(p, index, e)?);
    }
    // Events are sorted by t_start, so ranges are sorted by their first index.
    let mut gaps = 0;
    let mut next = 0usize;
    for (a, b) in ranges {
        if a > next {
            gaps += a - next;
        }
        next = next.max(b + 1);
    }
    gaps += p.count().saturating_sub(next);
    Ok(gaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GranularityChoice {
    pub granularity: Granularity,
    pub snapshots: usize,
}

/// First candidate (ordered finest to coarsest) whose regular partition has no
/// time gap.
pub fn finest_gapless_granularity(stream: &EventStream, candidates: &[Granularity]) -> Result<GranularityChoice> {
    if candidates.is_empty() {
        return Err(Error::Parameter("empty granularity candidate list".into()));
    }
    let span = stream.t_max() - stream.t_min() + 1;
    for &g in candidates {
        // A transient stream can fill at most one interval per event.
        let count = span.div_ceil(g.width());
        if stream.transient() && count > stream.len() as u64 {
            continue;
        }
        let p = make_partition(stream, g)?;
        if count_gaps(stream, &p)? == 0 {
            return Ok(GranularityChoice {
                granularity: g,
                snapshots: p.count(),
            });
        }
    }
    Err(Error::NoGaplessGranularity)
}

/// How a stream should be discretized when the caller has not built a
/// partition by hand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discretization {
    Granularity(Granularity),
    Count(usize),
    /// Finest gapless granularity among the candidates (finest first).
    AutoFinest(Vec<Granularity>),
}

impl Discretization {
    pub fn auto() -> Self {
        Discretization::AutoFinest(Granularity::NAMED.to_vec())
    }

    /// The partition plus a label naming the granularity that produced it.
    pub fn resolve(&self, stream: &EventStream) -> Result<(Partition, String)> {
        match self {
            Discretization::Granularity(g) => Ok((make_partition(stream, *g)?, g.to_string())),
            Discretization::Count(n) => Ok((make_partition(stream, Resolution::Count(*n))?, format!("count:{n}"))),
            Discretization::AutoFinest(candidates) => {
                let choice = finest_gapless_granularity(stream, candidates)?;
                Ok((
                    make_partition(stream, choice.granularity)?,
                    choice.granularity.to_string(),
                ))
            }
        }
    }
}

impl FromStr for Discretization {
    type Err = Error;

    /// `auto`, `count:N`, or a granularity name / width in ticks.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Discretization::auto());
        }
        if let Some(n) = s.strip_prefix("count:") {
            let n = n
                .parse()
                .map_err(|_| Error::Parameter(format!("bad snapshot count `{n}`")))?;
            return Ok(Discretization::Count(n));
        }
        s.parse().map(Discretization::Granularity)
    }
}

/// A unit of streaming input: scored together, then observed together.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub events: Vec<Event>,
    pub snapshot_index: Option<usize>,
    pub t_lo: Timestamp,
    pub t_hi: Timestamp,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// One batch per snapshot, empty snapshots included, so that simultaneous
/// edges are never used to predict each other.
pub fn snapshot_batches(seq: &SnapshotSequence) -> Vec<Batch> {
    seq.snapshots()
        .iter()
        .map(|s| Batch {
            events: s.edges.clone(),
            snapshot_index: Some(seq.offset() + s.index),
            t_lo: s.lo,
            t_hi: s.hi,
        })
        .collect()
}

/// Fixed-size chunks of the stream. With `respect_ties`, a batch keeps
/// growing past `batch_size` until the events sharing its last `t_start`
/// are exhausted.
pub fn event_batches(stream: &EventStream, batch_size: usize, respect_ties: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    let events = stream.events();
    let mut batches = Vec::with_capacity(events.len() / batch_size + 1);
    let mut start = 0;
    while start < events.len() {
        let mut end = (start + batch_size).min(events.len());
        if respect_ties {
            let last_t = events[end - 1].t_start;
            while end < events.len() && events[end].t_start == last_t {
                end += 1;
            }
        }
        let chunk = &events[start..end];
        batches.push(Batch {
            events: chunk.to_vec(),
            snapshot_index: None,
            t_lo: chunk[0].t_start,
            t_hi: chunk.iter().map(|e| e.t_end).max().unwrap_or(chunk[0].t_start),
        });
        start = end;
    }
    Ok(batches)
}
