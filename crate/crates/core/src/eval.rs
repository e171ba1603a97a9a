//! Ranking evaluation: fixed negative destinations per positive edge (half
//! historical, half random), reciprocal-rank scoring, and the streaming and
//! deployed harnesses.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::input_mapper::Batch;
use crate::model::{Event, EventStream, NodeId, Timestamp};
use crate::scorer::{Query, Scorer};

/// Where historical negatives for a positive `s -> d` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoricalScope {
    /// Destinations `s` linked to in the history.
    #[default]
    PerSource,
    /// Any destination seen in the history.
    Global,
}

impl FromStr for HistoricalScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-source" => Ok(HistoricalScope::PerSource),
            "global" => Ok(HistoricalScope::Global),
            other => Err(Error::Parameter(format!("unknown historical scope `{other}`"))),
        }
    }
}

/// Default negatives per positive: 1000, or every other node on graphs
/// with fewer nodes than that.
pub fn default_q(num_nodes: usize) -> usize {
    1000.min(num_nodes.saturating_sub(1))
}

/// Fixed negative destinations for each positive edge, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet {
    pub seed: Option<u64>,
    pub q: usize,
    pub historical_count: usize,
    pub random_count: usize,
    positives: Vec<(NodeId, NodeId, Timestamp)>,
    offsets: Vec<usize>,
    negatives: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeLine {
    pub pos_index: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub t: Timestamp,
    pub negatives: Vec<NodeId>,
}

impl Default for NegativeSet {
    fn default() -> Self {
        NegativeSet::empty(None, 0)
    }
}

impl NegativeSet {
    fn empty(seed: Option<u64>, q: usize) -> Self {
        NegativeSet {
            seed,
            q,
            historical_count: 0,
            random_count: 0,
            positives: Vec::new(),
            offsets: vec![0],
            negatives: Vec::new(),
        }
    }

    fn push(&mut self, pos: (NodeId, NodeId, Timestamp), negatives: &[NodeId]) {
        self.positives.push(pos);
        self.negatives.extend_from_slice(negatives);
        self.offsets.push(self.negatives.len());
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positive(&self, i: usize) -> (NodeId, NodeId, Timestamp) {
        self.positives[i]
    }

    pub fn negatives(&self, i: usize) -> &[NodeId] {
        &self.negatives[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn lines(&self) -> impl Iterator<Item = NegativeLine> + '_ {
        (0..self.len()).map(|i| {
            let (src, dst, t) = self.positives[i];
            NegativeLine {
                pos_index: i,
                src,
                dst,
                t,
                negatives: self.negatives(i).to_vec(),
            }
        })
    }

    /// One JSON object per line: `{pos_index, src, dst, t, negatives}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Builds a set from lines in `pos_index` order.
    pub fn from_lines(lines: impl IntoIterator<Item = NegativeLine>) -> Result<Self> {
        let mut set = NegativeSet::empty(None, 0);
        for rec in lines {
            if rec.pos_index != set.len() {
                return Err(Error::Parameter(format!(
                    "expected pos_index {}, found {}",
                    set.len(),
                    rec.pos_index
                )));
            }
            set.q = set.q.max(rec.negatives.len());
            set.push((rec.src, rec.dst, rec.t), &rec.negatives);
        }
        Ok(set)
    }

    /// Reads a negatives file, e.g. one exported by another benchmark. Lines
    /// must be in `pos_index` order; list lengths may vary.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = NegativeSet::empty(None, 0);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: NegativeLine =
                serde_json::from_str(&line).map_err(|e| Error::parse(path, n as u64 + 1, e.to_string()))?;
            if rec.pos_index != set.len() {
                return Err(Error::parse(
                    path,
                    n as u64 + 1,
                    format!("expected pos_index {}, found {}", set.len(), rec.pos_index),
                ));
            }
            set.q = set.q.max(rec.negatives.len());
            set.push((rec.src, rec.dst, rec.t), &rec.negatives);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub q: usize,
    pub seed: u64,
    pub scope: HistoricalScope,
}

/// For each target event `s -> d` at `t`: up to `⌊q/2⌋` historical
/// negatives drawn without replacement from the history pool (excluding `d`
/// and any `s -> d'` also occurring at `t`), then uniform random nodes
/// outside `{d}` and the chosen set until `q` are picked.
pub fn generate_negatives(history: &EventStream, targets: &EventStream, cfg: &NegativeConfig) -> Result<NegativeSet> {
    let n = targets.num_nodes().max(history.num_nodes());
    generate_negatives_for(history, targets.events(), n, cfg)
}

/// Same as [`generate_negatives`] over an explicit target sequence, e.g. the
/// concatenated events of snapshot batches.
pub fn generate_negatives_for(
    history: &EventStream,
    targets: &[Event],
    num_nodes: usize,
    cfg: &NegativeConfig,
) -> Result<NegativeSet> {
    let n = num_nodes.max(history.num_nodes());
    if cfg.q == 0 {
        return Err(Error::Parameter("need at least one negative per positive".into()));
    }
    if cfg.q >= n {
        return Err(Error::Parameter(format!(
            "q = {} negatives needs more than {} nodes (the true destination is excluded)",
            cfg.q, n
        )));
    }

    let pool: FxHashMap<NodeId, Vec<NodeId>> = match cfg.scope {
        HistoricalScope::PerSource => {
            let mut by_src: FxHashMap<NodeId, Vec<NodeId>> = FxHashMap::default();
            for e in history.events() {
                by_src.entry(e.src).or_default().push(e.dst);
            }
            for v in by_src.values_mut() {
                v.sort_unstable();
                v.dedup();
            }
            by_src
        }
        HistoricalScope::Global => {
            let mut all: Vec<NodeId> = history.events().iter().map(|e| e.dst).collect();
            all.sort_unstable();
            all.dedup();
            std::iter::once((NodeId::MAX, all)).collect()
        }
    };
    let at_time: FxHashSet<(NodeId, NodeId, Timestamp)> = targets.iter().map(|e| (e.src, e.dst, e.t_start)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.q / 2;
    let mut set = NegativeSet::empty(Some(cfg.seed), cfg.q);
    set.positives.reserve(targets.len());
    set.negatives.reserve(targets.len() * cfg.q);
    let mut chosen: Vec<NodeId> = Vec::with_capacity(cfg.q);
    let mut taken: FxHashSet<NodeId> = FxHashSet::default();

    for e in targets {
        chosen.clear();
        taken.clear();
        taken.insert(e.dst);

        let key = match cfg.scope {
            HistoricalScope::PerSource => e.src,
            HistoricalScope::Global => NodeId::MAX,
        };
        let candidates: Vec<NodeId> = pool
            .get(&key)
            .map(|p| {
                p.iter()
                    .copied()
                    .filter(|&c| c != e.dst && !at_time.contains(&(e.src, c, e.t_start)))
                    .collect()
            })
            .unwrap_or_default();
        let k = half.min(candidates.len());
        for i in index::sample(&mut rng, candidates.len(), k) {
            chosen.push(candidates[i]);
            taken.insert(candidates[i]);
        }
        set.historical_count += k;

        let need = cfg.q - k;
        let available = n - taken.len();
        if need * 2 <= available {
            while chosen.len() < cfg.q {
                let c = rng.gen_range(0..n) as NodeId;
                if taken.insert(c) {
                    chosen.push(c);
                }
            }
        } else {
            let rest: Vec<NodeId> = (0..n as NodeId).filter(|c| !taken.contains(c)).collect();
            for i in index::sample(&mut rng, rest.len(), need) {
                chosen.push(rest[i]);
            }
        }
        set.random_count += need;
        set.push((e.src, e.dst, e.t_start), &chosen);
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Ties rank ahead of the true destination.
    #[default]
    Pessimistic,
    /// Ties rank behind the true destination.
    Optimistic,
    /// Half of the ties (rounded up) rank ahead.
    Mean,
}

impl FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "mean" => Ok(TiePolicy::Mean),
            other => Err(Error::Parameter(format!("unknown tie policy `{other}`"))),
        }
    }
}

/// 1-based rank of the true destination among its negatives.
pub fn rank_of(true_score: f64, negative_scores: &[f64], policy: TiePolicy) -> Result<usize> {
    if true_score.is_nan() {
        return Err(Error::NanScore);
    }
    let (mut greater, mut ties) = (0usize, 0usize);
    for &s in negative_scores {
        if s.is_nan() {
            return Err(Error::NanScore);
        }
        if s > true_score {
            greater += 1;
        } else if s == true_score {
            ties += 1;
        }
    }
    Ok(1 + greater
        + match policy {
            TiePolicy::Pessimistic => ties,
            TiePolicy::Optimistic => 0,
            TiePolicy::Mean => ties.div_ceil(2),
        })
}

/// Mean of `1/rank`, computed exactly and rounded once to `f64`. The result
/// does not depend on the order of `ranks`.
pub fn exact_mrr(ranks: impl IntoIterator<Item = usize>) -> Option<f64> {
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    let mut n = 0u64;
    for r in ranks {
        *hist.entry(r).or_insert(0) += 1;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mut sum = BigRational::zero();
    for (r, c) in hist {
        sum += BigRational::new(BigInt::from(c), BigInt::from(r));
    }
    (sum / BigRational::from_integer(BigInt::from(n))).to_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    /// Rank of each positive, in evaluation order.
    pub ranks: Vec<usize>,
    pub mrr: f64,
    /// MRR of each batch; `None` for batches without positives.
    pub per_batch_mrr: Vec<Option<f64>>,
}

impl RankResult {
    pub fn reciprocal_ranks(&self) -> impl Iterator<Item = f64> + '_ {
        self.ranks.iter().map(|&r| 1.0 / r as f64)
    }
}

fn check_order(prev: Option<&Batch>, next: &Batch) -> Result<()> {
    let Some(prev) = prev else { return Ok(()) };
    if next.t_lo < prev.t_lo {
        return Err(Error::Protocol(format!(
            "batch starting at t={} follows a batch starting at t={}",
            next.t_lo, prev.t_lo
        )));
    }
    if let (Some(a), Some(b)) = (prev.snapshot_index, next.snapshot_index) {
        if b < a {
            return Err(Error::Protocol(format!("snapshot {b} follows snapshot {a}")));
        }
    }
    Ok(())
}

fn check_positive(negatives: &NegativeSet, i: usize, e: &Event) -> Result<()> {
    let expected = negatives.positive(i);
    if expected != (e.src, e.dst, e.t_start) {
        return Err(Error::Protocol(format!(
            "negatives entry {i} is for {expected:?}, but positive {i} is ({}, {}, {})",
            e.src, e.dst, e.t_start
        )));
    }
    Ok(())
}

/// Streaming setting: each batch is scored with the current state, then
/// observed. Trainable parameters must stay untouched.
pub fn streaming_evaluate<S: Scorer + ?Sized>(
    scorer: &mut S,
    batches: &[Batch],
    negatives: &NegativeSet,
    policy: TiePolicy,
) -> Result<RankResult> {
    let total: usize = batches.iter().map(Batch::len).sum();
    if total != negatives.len() {
        return Err(Error::Protocol(format!(
            "{} positives in batches but {} negative lists",
            total,
            negatives.len()
        )));
    }
    if total == 0 {
        return Err(Error::Parameter("no positive edges to evaluate".into()));
    }

    let params = scorer.parameter_checksum();
    let mut ranks = Vec::with_capacity(total);
    let mut per_batch_mrr = Vec::with_capacity(batches.len());
    let mut queries = Vec::new();
    let mut pos = 0;

    for (b, batch) in batches.iter().enumerate() {
        check_order(b.checked_sub(1).map(|p| &batches[p]), batch)?;
        queries.clear();
        for (j, e) in batch.events.iter().enumerate() {
            check_positive(negatives, pos + j, e)?;
            queries.push(Query {
                src: e.src,
                dst: e.dst,
                t: e.t_start,
            });
            queries.extend(negatives.negatives(pos + j).iter().map(|&d| Query {
                src: e.src,
                dst: d,
                t: e.t_start,
            }));
        }
        let scores = scorer.score_batch(&queries);
        let first = ranks.len();
        let mut at = 0;
        for j in 0..batch.len() {
            let q = negatives.negatives(pos + j).len();
            ranks.push(rank_of(scores[at], &scores[at + 1..at + 1 + q], policy)?);
            at += 1 + q;
        }
        per_batch_mrr.push(exact_mrr(ranks[first..].iter().copied()));
        pos += batch.len();

        scorer.observe(batch);
        let now = scorer.parameter_checksum();
        if now != params {
            return Err(Error::Leakage {
                before: params,
                after: now,
            });
        }
    }

    let mrr = exact_mrr(ranks.iter().copied()).unwrap_or(0.0);
    Ok(RankResult {
        ranks,
        mrr,
        per_batch_mrr,
    })
}

/// Deployed setting: the scorer is frozen for the whole test period and its
/// state is verified unchanged afterwards.
pub fn deployed_evaluate<S: Scorer + ?Sized>(
    scorer: &mut S,
    batches: &[Batch],
    negatives: &NegativeSet,
    policy: TiePolicy,
) -> Result<RankResult> {
    let was_frozen = scorer.is_frozen();
    scorer.freeze();
    let before = scorer.state_checksum();
    let result = streaming_evaluate(scorer, batches, negatives, policy);
    let after = scorer.state_checksum();
    if !was_frozen {
        scorer.unfreeze();
    }
    let result = result?;
    if before != after {
        return Err(Error::Leakage { before, after });
    }
    Ok(result)
}
