//! Snapshot training for the logistic scorer. Snapshot `t` is always
//! predicted from state built on snapshots `0..t`. Per-snapshot mode takes a
//! gradient step after every snapshot (truncation window of one); accumulated
//! mode sums the same gradients and updates once per epoch.

use std::hash::Hasher;
use std::str::FromStr;

use rand::Rng;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{streaming_evaluate, NegativeSet, TiePolicy};
use crate::input_mapper::snapshot_batches;
use crate::model::{NodeId, SnapshotSequence};
use crate::scorer::{logistic_grad, logistic_loss, Features, LogisticScorer, Scorer, NUM_FEATURES};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    PerSnapshot,
    Accumulated,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utg" | "per-snapshot" | "per_snapshot" => Ok(TrainMode::PerSnapshot),
            "accumulated" => Ok(TrainMode::Accumulated),
            other => Err(Error::Parameter(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
    pub learning_rate: f64,
    pub mode: TrainMode,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub tie_policy: TiePolicy,
}

impl Default for TrainConfig {
    /// Snapshot-dataset defaults: 200 epochs, patience 20, tolerance 1e-5.
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            patience: 20,
            tolerance: 1e-5,
            learning_rate: 0.001,
            mode: TrainMode::PerSnapshot,
            negatives_per_positive: 1,
            seed: 0,
            tie_policy: TiePolicy::Pessimistic,
        }
    }
}

impl TrainConfig {
    /// Event-dataset defaults: 40 epochs.
    pub fn continuous() -> Self {
        TrainConfig {
            epochs: 40,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Parameter(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Parameter("need at least one training negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    /// Mean per-snapshot loss, each evaluated at the weights used for that
    /// snapshot's forward pass.
    pub loss: f64,
    /// Parameter updates applied.
    pub updates: usize,
    /// Per-snapshot gradients in order.
    pub gradients: Vec<Vec<f64>>,
    /// Digest of every feature vector consumed, in order.
    pub feature_digest: u64,
}

enum Update {
    Step,
    Accumulate,
    None,
}

fn sample_negative(rng: &mut impl Rng, num_nodes: usize, dst: NodeId) -> NodeId {
    loop {
        let c = rng.gen_range(0..num_nodes) as NodeId;
        if c != dst {
            return c;
        }
    }
}

fn run_epoch(
    scorer: &mut LogisticScorer,
    seq: &SnapshotSequence,
    num_nodes: usize,
    cfg: &TrainConfig,
    epoch: usize,
    update: Update,
) -> Result<EpochOutcome> {
    if seq.len() < 2 {
        return Err(Error::Training(format!("need at least 2 snapshots, got {}", seq.len())));
    }
    if num_nodes < 2 {
        return Err(Error::Training("need at least 2 nodes to sample negatives".into()));
    }
    let mut rng = seed::rng(cfg.seed, seed::TRAINING + epoch as u64);
    let batches = snapshot_batches(seq);
    scorer.reset();
    scorer.unfreeze();
    scorer.observe(&batches[0]);

    let start = scorer.weights().to_vec();
    let mut accumulated = vec![0.0; NUM_FEATURES];
    let mut gradients = Vec::new();
    let mut total_loss = 0.0;
    let mut updates = 0;
    let mut digest = FxHasher::default();
    let mut negs: Vec<Features> = Vec::with_capacity(cfg.negatives_per_positive);

    for batch in &batches[1..] {
        if !batch.is_empty() {
            let w = scorer.weights().to_vec();
            let mut grad = vec![0.0; NUM_FEATURES];
            let mut loss = 0.0;
            for e in &batch.events {
                let pos = scorer.features(e.src, e.dst);
                negs.clear();
                for _ in 0..cfg.negatives_per_positive {
                    let d = sample_negative(&mut rng, num_nodes, e.dst);
                    negs.push(scorer.features(e.src, d));
                }
                for x in std::iter::once(&pos).chain(&negs) {
                    for v in x {
                        digest.write_u64(v.to_bits());
                    }
                }
                loss += logistic_loss(&w, &pos, &negs)?;
                for (g, gi) in grad.iter_mut().zip(logistic_grad(&w, &pos, &negs)?) {
                    *g += gi;
                }
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            total_loss += loss / n;
            match update {
                Update::Step => {
                    let next: Vec<f64> = w
                        .iter()
                        .zip(&grad)
                        .map(|(wi, gi)| wi - cfg.learning_rate * gi)
                        .collect();
                    scorer.set_weights(next)?;
                    updates += 1;
                }
                Update::Accumulate => {
                    for (a, g) in accumulated.iter_mut().zip(&grad) {
                        *a += g;
                    }
                }
                Update::None => {}
            }
            gradients.push(grad);
        }
        scorer.observe(batch);
    }

    if gradients.is_empty() {
        return Err(Error::Training("no positive edges after the first snapshot".into()));
    }
    if let Update::Accumulate = update {
        let next: Vec<f64> = start
            .iter()
            .zip(&accumulated)
            .map(|(wi, gi)| wi - cfg.learning_rate * gi)
            .collect();
        scorer.set_weights(next)?;
        updates = 1;
    }
    Ok(EpochOutcome {
        loss: total_loss / gradients.len() as f64,
        updates,
        gradients,
        feature_digest: digest.finish(),
    })
}

/// One epoch with a gradient step after each snapshot. Leaves the scorer's
/// caches reflecting the whole sequence.
pub fn per_snapshot_train_epoch(
    scorer: &mut LogisticScorer,
    seq: &SnapshotSequence,
    num_nodes: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    run_epoch(scorer, seq, num_nodes, cfg, epoch, Update::Step)
}

/// One epoch that sums per-snapshot gradients and updates once at the end.
pub fn accumulated_train_epoch(
    scorer: &mut LogisticScorer,
    seq: &SnapshotSequence,
    num_nodes: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    run_epoch(scorer, seq, num_nodes, cfg, epoch, Update::Accumulate)
}

/// Per-snapshot gradients at fixed weights, without updating them.
pub fn epoch_gradients(
    scorer: &mut LogisticScorer,
    seq: &SnapshotSequence,
    num_nodes: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    run_epoch(scorer, seq, num_nodes, cfg, epoch, Update::None)
}

pub fn train_epoch(
    scorer: &mut LogisticScorer,
    seq: &SnapshotSequence,
    num_nodes: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochOutcome> {
    match cfg.mode {
        TrainMode::PerSnapshot => per_snapshot_train_epoch(scorer, seq, num_nodes, cfg, epoch),
        TrainMode::Accumulated => accumulated_train_epoch(scorer, seq, num_nodes, cfg, epoch),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub per_epoch: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mrr: f64,
    pub weights: Vec<f64>,
}

/// Observes every snapshot of `seq` in order.
pub fn advance<S: Scorer + ?Sized>(scorer: &mut S, seq: &SnapshotSequence) {
    for batch in snapshot_batches(seq) {
        scorer.observe(&batch);
    }
}

/// Trains with early stopping on validation MRR. After each epoch the scorer
/// (state through the training snapshots) is evaluated in streaming mode on
/// a copy, so validation never leaks into the next epoch. Returns the best
/// epoch's weights with caches replayed through `train_seq`.
pub fn fit(
    mut scorer: LogisticScorer,
    train_seq: &SnapshotSequence,
    val_seq: &SnapshotSequence,
    num_nodes: usize,
    val_negatives: &NegativeSet,
    cfg: &TrainConfig,
) -> Result<(LogisticScorer, TrainReport)> {
    cfg.validate()?;
    if val_seq.num_edges() == 0 {
        return Err(Error::Training("validation sequence has no edges".into()));
    }
    let val_batches = snapshot_batches(val_seq);
    let mut per_epoch = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let outcome = train_epoch(&mut scorer, train_seq, num_nodes, cfg, epoch)?;
        let mut probe = scorer.clone();
        let val = streaming_evaluate(&mut probe, &val_batches, val_negatives, cfg.tie_policy)?;
        per_epoch.push(EpochRecord {
            epoch,
            loss: outcome.loss,
            val_mrr: val.mrr,
        });
        let improved = best.as_ref().is_none_or(|(_, mrr, _)| val.mrr > mrr + cfg.tolerance);
        if improved {
            best = Some((epoch, val.mrr, scorer.weights().to_vec()));
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_mrr, weights) = best.expect("at least one epoch ran");
    let mut fitted = LogisticScorer::with_weights(weights.clone())?;
    advance(&mut fitted, train_seq);
    let report = TrainReport {
        mode: cfg.mode,
        learning_rate: cfg.learning_rate,
        per_epoch,
        best_epoch,
        best_val_mrr,
        weights,
    };
    Ok((fitted, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate_negatives, HistoricalScope, NegativeConfig};
    use crate::ingest::{chronological_split, SplitSpec};
    use crate::input_mapper::{induce_snapshots, induce_window, make_partition, Resolution};
    use crate::model::{validate_stream, Event, EventStream};

    /// Pair (0,1) in every snapshot plus a rotating second edge.
    fn periodic(snapshots: u64) -> EventStream {
        let mut events = Vec::new();
        for t in 0..snapshots {
            events.push(Event::new(0, 1, t));
            events.push(Event::new(2 + (t % 3) as u32, 5, t));
        }
        EventStream::with_num_nodes(events, 8).unwrap()
    }

    fn seq(stream: &EventStream) -> SnapshotSequence {
        let p = make_partition(stream, Resolution::Width(1)).unwrap();
        induce_snapshots(stream, &p).unwrap()
    }

    #[test]
    fn two_snapshots_give_one_step() {
        let s = periodic(2);
        let mut lr = LogisticScorer::new();
        let out = per_snapshot_train_epoch(&mut lr, &seq(&s), 8, &TrainConfig::default(), 0).unwrap();
        assert_eq!(out.updates, 1);
        assert_ne!(lr.weights(), &[0.0; NUM_FEATURES]);
    }

    #[test]
    fn single_snapshot_is_an_error() {
        let s = validate_stream(vec![Event::new(0, 1, 0)]).unwrap();
        let mut lr = LogisticScorer::new();
        assert!(matches!(
            per_snapshot_train_epoch(&mut lr, &seq(&s), 4, &TrainConfig::default(), 0),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn zero_rate_keeps_weights() {
        let s = periodic(6);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut a = LogisticScorer::new();
        let mut b = LogisticScorer::new();
        let oa = per_snapshot_train_epoch(&mut a, &seq(&s), 8, &cfg, 0).unwrap();
        let ob = accumulated_train_epoch(&mut b, &seq(&s), 8, &cfg, 0).unwrap();
        assert_eq!(a.weights(), &[0.0; NUM_FEATURES]);
        assert_eq!(b.weights(), &[0.0; NUM_FEATURES]);
        assert!(oa.loss.is_finite());
        assert_eq!(oa.loss.to_bits(), ob.loss.to_bits());
    }

    #[test]
    fn loss_decreases_on_periodic_graph() {
        let s = periodic(12);
        let sq = seq(&s);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut lr = LogisticScorer::new();
        let losses: Vec<f64> = (0..5)
            .map(|e| per_snapshot_train_epoch(&mut lr, &sq, 8, &cfg, e).unwrap().loss)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn modes_agree_on_two_snapshots() {
        let s = periodic(2);
        let cfg = TrainConfig::default();
        let mut a = LogisticScorer::new();
        let mut b = LogisticScorer::new();
        per_snapshot_train_epoch(&mut a, &seq(&s), 8, &cfg, 3).unwrap();
        accumulated_train_epoch(&mut b, &seq(&s), 8, &cfg, 3).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn accumulated_step_is_sum_of_snapshot_gradients() {
        let s = periodic(9);
        let sq = seq(&s);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let w0 = vec![0.3, -0.2, 0.5, 0.1, -0.4];
        let mut probe = LogisticScorer::with_weights(w0.clone()).unwrap();
        let grads = epoch_gradients(&mut probe, &sq, 8, &cfg, 2).unwrap();
        assert_eq!(probe.weights(), w0.as_slice());
        let mut acc = LogisticScorer::with_weights(w0.clone()).unwrap();
        let out = accumulated_train_epoch(&mut acc, &sq, 8, &cfg, 2).unwrap();
        assert_eq!(out.updates, 1);
        for i in 0..NUM_FEATURES {
            let sum: f64 = grads.gradients.iter().map(|g| g[i]).sum();
            assert!((acc.weights()[i] - (w0[i] - cfg.learning_rate * sum)).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_schedule_is_shared_between_modes() {
        let s = periodic(10);
        let sq = seq(&s);
        let cfg = TrainConfig::default();
        let mut a = LogisticScorer::new();
        let mut b = LogisticScorer::new();
        for epoch in 0..3 {
            let oa = per_snapshot_train_epoch(&mut a, &sq, 8, &cfg, epoch).unwrap();
            let ob = accumulated_train_epoch(&mut b, &sq, 8, &cfg, epoch).unwrap();
            assert_eq!(oa.feature_digest, ob.feature_digest);
            assert_eq!(oa.updates, 9);
        }
    }

    fn fit_fixture() -> (SnapshotSequence, SnapshotSequence, NegativeSet) {
        let s = periodic(30);
        let split = chronological_split(&s, &SplitSpec::default()).unwrap();
        let p = make_partition(&s, Resolution::Width(1)).unwrap();
        let train = induce_window(&split.train, &p).unwrap();
        let val = induce_window(&split.val, &p).unwrap();
        let negs = generate_negatives(
            &split.train,
            &split.val,
            &NegativeConfig {
                q: 7,
                seed: 1,
                scope: HistoricalScope::PerSource,
            },
        )
        .unwrap();
        (train, val, negs)
    }

    #[test]
    fn zero_patience_stops_at_first_stall() {
        let (train, val, negs) = fit_fixture();
        let cfg = TrainConfig {
            epochs: 50,
            patience: 0,
            ..TrainConfig::default()
        };
        let (_, report) = fit(LogisticScorer::new(), &train, &val, 8, &negs, &cfg).unwrap();
        let n = report.per_epoch.len();
        assert!(n < 50);
        let last = report.per_epoch[n - 1].val_mrr;
        assert!(last <= report.best_val_mrr + cfg.tolerance);
        assert!(report.per_epoch[..n - 1]
            .windows(2)
            .all(|w| w[1].val_mrr > w[0].val_mrr + cfg.tolerance));
    }

    #[test]
    fn fit_is_deterministic() {
        let (train, val, negs) = fit_fixture();
        let cfg = TrainConfig {
            epochs: 15,
            patience: 5,
            learning_rate: 0.01,
            seed: 4,
            ..TrainConfig::default()
        };
        let (a, ra) = fit(LogisticScorer::new(), &train, &val, 8, &negs, &cfg).unwrap();
        let (b, rb) = fit(LogisticScorer::new(), &train, &val, 8, &negs, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.state_checksum(), b.state_checksum());
        assert_eq!(a.observed_through(), Some(train.offset() + train.len() - 1));
        assert_eq!(a.weights(), ra.weights.as_slice());
    }

    #[test]
    fn improving_run_uses_every_epoch() {
        let (train, val, negs) = fit_fixture();
        let cfg = TrainConfig {
            epochs: 1,
            patience: 0,
            ..TrainConfig::default()
        };
        let (_, report) = fit(LogisticScorer::new(), &train, &val, 8, &negs, &cfg).unwrap();
        assert_eq!(report.per_epoch.len(), 1);
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::continuous().epochs, 40);
        let bad = TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("utg".parse::<TrainMode>().unwrap(), TrainMode::PerSnapshot);
    }
}
