//! Link scorers driven batch-by-batch by the evaluation harness: the
//! memorization baselines (EdgeBank, unlimited and time-window) and a
//! logistic edge scorer over snapshot statistics.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rustc_hash::{FxHashMap, FxHasher};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input_mapper::Batch;
use crate::model::{NodeId, Timestamp};

/// Score request for the link `src -> dst` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: Timestamp,
}

/// Contract between scorers and the streaming harness.
///
/// `score_batch` never mutates state; the harness calls it for a batch
/// before handing the same batch to `observe`. A frozen scorer ignores
/// `observe` (deployed setting).
pub trait Scorer {
    fn name(&self) -> &'static str;

    fn score_batch(&self, queries: &[Query]) -> Vec<f64>;

    fn observe(&mut self, batch: &Batch);

    fn freeze(&mut self);

    fn unfreeze(&mut self);

    fn is_frozen(&self) -> bool;

    /// Clears everything learned from observed batches. Trained parameters
    /// are kept.
    fn reset(&mut self);

    /// Global index of the last snapshot batch observed, if any.
    fn observed_through(&self) -> Option<usize>;

    /// Digest of trainable parameters. Must not change during evaluation.
    fn parameter_checksum(&self) -> u64 {
        0
    }

    /// Digest of all observable state (parameters and memories).
    fn state_checksum(&self) -> u64;
}

/// Tracks the snapshot index of the most recent observed batch. Batches
/// without an index advance it by one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Cursor {
    last: Option<usize>,
}

impl Cursor {
    fn next(&self) -> usize {
        self.last.map_or(0, |i| i + 1)
    }

    fn advance(&mut self, batch: &Batch) -> usize {
        let i = batch.snapshot_index.unwrap_or_else(|| self.next());
        self.last = Some(i);
        i
    }
}

fn fx_hash<T: Hash>(value: &T) -> u64 {
    let mut h = FxHasher::default();
    value.hash(&mut h);
    h.finish()
}

/// Order-independent digest of a map.
fn map_digest<K: Hash, V: Hash>(map: &FxHashMap<K, V>) -> u64 {
    map.iter().fold(map.len() as u64, |acc, entry| {
        acc.wrapping_add(fx_hash(&entry).rotate_left(17))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeBankMode {
    /// Remember every observed edge forever.
    Unlimited,
    /// Remember edges last seen within `window` ticks of the query time.
    TimeWindow(Timestamp),
}

#[derive(Debug, Clone)]
pub struct EdgeBank {
    mode: EdgeBankMode,
    last_seen: FxHashMap<(NodeId, NodeId), Timestamp>,
    frozen: bool,
    cursor: Cursor,
}

impl EdgeBank {
    pub fn new(mode: EdgeBankMode) -> Self {
        EdgeBank {
            mode,
            last_seen: FxHashMap::default(),
            frozen: false,
            cursor: Cursor::default(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(EdgeBankMode::Unlimited)
    }

    pub fn time_window(window: Timestamp) -> Self {
        Self::new(EdgeBankMode::TimeWindow(window))
    }

    pub fn mode(&self) -> EdgeBankMode {
        self.mode
    }

    pub fn memory_len(&self) -> usize {
        self.last_seen.len()
    }

    pub fn score(&self, src: NodeId, dst: NodeId, t: Timestamp) -> f64 {
        let hit = match (self.mode, self.last_seen.get(&(src, dst))) {
            (_, None) => false,
            (EdgeBankMode::Unlimited, Some(_)) => true,
            // last_seen >= t - window, without underflow
            (EdgeBankMode::TimeWindow(w), Some(&seen)) => seen.saturating_add(w) >= t,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

impl Scorer for EdgeBank {
    fn name(&self) -> &'static str {
        match self.mode {
            EdgeBankMode::Unlimited => "edgebank-inf",
            EdgeBankMode::TimeWindow(_) => "edgebank-tw",
        }
    }

    fn score_batch(&self, queries: &[Query]) -> Vec<f64> {
        queries.iter().map(|q| self.score(q.src, q.dst, q.t)).collect()
    }

    fn observe(&mut self, batch: &Batch) {
        if self.frozen {
            return;
        }
        for e in &batch.events {
            let seen = self.last_seen.entry(e.pair()).or_insert(e.t_end);
            *seen = (*seen).max(e.t_end);
        }
        self.cursor.advance(batch);
    }

    fn freeze(&mut self) {
        self.frozen = true;
    }

    fn unfreeze(&mut self) {
        self.frozen = false;
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn reset(&mut self) {
        self.last_seen.clear();
        self.cursor = Cursor::default();
    }

    fn observed_through(&self) -> Option<usize> {
        self.cursor.last
    }

    fn state_checksum(&self) -> u64 {
        map_digest(&self.last_seen) ^ fx_hash(&self.cursor.last)
    }
}

pub const NUM_FEATURES: usize = 5;

/// `[bias, ln(1 + count), recency, ln(1 + common neighbours), ln(1 + deg(s)·deg(d))]`.
pub type Features = [f64; NUM_FEATURES];

/// Numerically stable logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(z: f64) -> f64 {
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, HI)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(weights: &[f64], features: &[f64]) -> Result<f64> {
    if weights.len() != features.len() {
        return Err(Error::Parameter(format!(
            "weight dimension {} does not match feature dimension {}",
            weights.len(),
            features.len()
        )));
    }
    Ok(weights.iter().zip(features).map(|(w, x)| w * x).sum())
}

pub fn logistic_score(weights: &[f64], features: &[f64]) -> Result<f64> {
    dot(weights, features).map(sigmoid)
}

/// Binary cross-entropy of one positive and its negatives.
pub fn logistic_loss(weights: &[f64], pos: &[f64], negs: &[Features]) -> Result<f64> {
    let mut loss = softplus(-dot(weights, pos)?);
    for x in negs {
        loss += softplus(dot(weights, x)?);
    }
    Ok(loss)
}

/// Gradient of [`logistic_loss`]:
/// `(σ(w·x⁺) − 1)·x⁺ + Σ σ(w·x⁻)·x⁻`.
pub fn logistic_grad(weights: &[f64], pos: &[f64], negs: &[Features]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; weights.len()];
    let coef = sigmoid(dot(weights, pos)?) - 1.0;
    for (g, x) in grad.iter_mut().zip(pos) {
        *g += coef * x;
    }
    for x in negs {
        let coef = sigmoid(dot(weights, x)?);
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += coef * xi;
        }
    }
    Ok(grad)
}

/// Logistic regression over per-pair history and previous-snapshot structure.
/// Features for snapshot `t` only read snapshots `0..t`.
#[derive(Debug, Clone)]
pub struct LogisticScorer {
    weights: Vec<f64>,
    pair_count: FxHashMap<(NodeId, NodeId), u32>,
    last_seen: FxHashMap<(NodeId, NodeId), usize>,
    // undirected neighbour lists of the previous snapshot, sorted and deduplicated
    prev_adj: FxHashMap<NodeId, Vec<NodeId>>,
    frozen: bool,
    cursor: Cursor,
}

impl Default for LogisticScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl LogisticScorer {
    pub fn new() -> Self {
        LogisticScorer {
            weights: vec![0.0; NUM_FEATURES],
            pair_count: FxHashMap::default(),
            last_seen: FxHashMap::default(),
            prev_adj: FxHashMap::default(),
            frozen: false,
            cursor: Cursor::default(),
        }
    }

    pub fn with_weights(weights: Vec<f64>) -> Result<Self> {
        let mut s = Self::new();
        s.set_weights(weights)?;
        Ok(s)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != NUM_FEATURES {
            return Err(Error::Parameter(format!(
                "expected {NUM_FEATURES} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Parameter("weights must be finite".into()));
        }
        self.weights = weights;
        Ok(())
    }

    fn degree(&self, v: NodeId) -> usize {
        self.prev_adj.get(&v).map_or(0, Vec::len)
    }

    fn common_neighbours(&self, s: NodeId, d: NodeId) -> usize {
        let (Some(a), Some(b)) = (self.prev_adj.get(&s), self.prev_adj.get(&d)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// Features of `s -> d` for the snapshot following the last observed one.
    pub fn features(&self, s: NodeId, d: NodeId) -> Features {
        let count = self.pair_count.get(&(s, d)).copied().unwrap_or(0);
        let recency = match self.last_seen.get(&(s, d)) {
            None => 0.0,
            Some(&seen) => {
                let next = self.cursor.next();
                1.0 / next.saturating_sub(seen).max(1) as f64
            }
        };
        let cn = self.common_neighbours(s, d);
        let deg = (self.degree(s) * self.degree(d)) as f64;
        [1.0, (count as f64).ln_1p(), recency, (cn as f64).ln_1p(), deg.ln_1p()]
    }

    pub fn score(&self, s: NodeId, d: NodeId) -> f64 {
        sigmoid(self.weights.iter().zip(self.features(s, d)).map(|(w, x)| w * x).sum())
    }
}

impl Scorer for LogisticScorer {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn score_batch(&self, queries: &[Query]) -> Vec<f64> {
        queries.iter().map(|q| self.score(q.src, q.dst)).collect()
    }

    fn observe(&mut self, batch: &Batch) {
        if self.frozen {
            return;
        }
        let previous = self.cursor.last;
        let index = self.cursor.advance(batch);
        // A snapshot observed in two parts (split boundary inside an
        // interval) accumulates its adjacency instead of replacing it.
        if previous != Some(index) {
            self.prev_adj.clear();
        }
        for e in &batch.events {
            *self.pair_count.entry(e.pair()).or_insert(0) += 1;
            self.last_seen.insert(e.pair(), index);
            if e.src != e.dst {
                self.prev_adj.entry(e.src).or_default().push(e.dst);
                self.prev_adj.entry(e.dst).or_default().push(e.src);
            }
        }
        for list in self.prev_adj.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
    }

    fn freeze(&mut self) {
        self.frozen = true;
    }

    fn unfreeze(&mut self) {
        self.frozen = false;
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn reset(&mut self) {
        self.pair_count.clear();
        self.last_seen.clear();
        self.prev_adj.clear();
        self.cursor = Cursor::default();
    }

    fn observed_through(&self) -> Option<usize> {
        self.cursor.last
    }

    fn parameter_checksum(&self) -> u64 {
        let bits: Vec<u64> = self.weights.iter().map(|w| w.to_bits()).collect();
        fx_hash(&bits)
    }

    fn state_checksum(&self) -> u64 {
        self.parameter_checksum()
            ^ map_digest(&self.pair_count).rotate_left(1)
            ^ map_digest(&self.last_seen).rotate_left(2)
            ^ map_digest(&self.prev_adj).rotate_left(3)
            ^ fx_hash(&self.cursor.last)
    }
}

/// Scorer selection used by the command line and run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    EdgebankInf,
    EdgebankTw,
    Logistic,
}

impl ScorerKind {
    pub fn is_trainable(self) -> bool {
        matches!(self, ScorerKind::Logistic)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::EdgebankInf => "edgebank-inf",
            ScorerKind::EdgebankTw => "edgebank-tw",
            ScorerKind::Logistic => "logistic",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edgebank-inf" => Ok(ScorerKind::EdgebankInf),
            "edgebank-tw" => Ok(ScorerKind::EdgebankTw),
            "logistic" => Ok(ScorerKind::Logistic),
            other => Err(Error::Parameter(format!("unknown model `{other}`"))),
        }
    }
}
