//! Zero-order hold: per-snapshot predictions broadcast as constants over
//! their snapshot interval, so snapshot models can answer continuous-time
//! queries.

use crate::error::{Error, Result};
use crate::input_mapper::Partition;
use crate::model::{NodeId, Timestamp};
use crate::scorer::{Query, Scorer};

/// Per-snapshot values over a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldSignal {
    values: Vec<f64>,
    partition: Partition,
}

impl HeldSignal {
    pub fn new(values: Vec<f64>, partition: Partition) -> Result<Self> {
        if values.len() != partition.count() {
            return Err(Error::Parameter(format!(
                "{} values for a partition of {} intervals",
                values.len(),
                partition.count()
            )));
        }
        Ok(HeldSignal { values, partition })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }
}

pub fn snapshot_index_of(t: Timestamp, p: &Partition) -> Result<usize> {
    p.index_of(t)
}

/// `y(t) = y[i]` for the interval `i` containing `t`.
pub fn zoh_query(sig: &HeldSignal, t: Timestamp) -> Result<f64> {
    Ok(sig.values[snapshot_index_of(t, &sig.partition)?])
}

/// Scores `s -> d` at time `t` with a snapshot-based scorer. The scorer must
/// have observed exactly the snapshots before `t`'s interval; the score is
/// the scorer's prediction for that interval, held constant across it.
pub fn continuous_link_query<S: Scorer + ?Sized>(
    model: &S,
    p: &Partition,
    s: NodeId,
    d: NodeId,
    t: Timestamp,
) -> Result<f64> {
    let k = snapshot_index_of(t, p)?;
    let expected = k.checked_sub(1);
    let observed = model.observed_through();
    if observed != expected {
        let show = |x: Option<usize>| x.map_or("none".to_string(), |i| i.to_string());
        return Err(Error::Protocol(format!(
            "query at t={t} falls in snapshot {k}: model must have observed through snapshot {}, \
             but has observed through {}",
            show(expected),
            show(observed)
        )));
    }
    let query = Query {
        src: s,
        dst: d,
        t: p.boundary(k),
    };
    Ok(model.score_batch(&[query])[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input_mapper::Batch;
    use crate::model::Event;
    use crate::scorer::{EdgeBank, LogisticScorer};

    fn p() -> Partition {
        Partition::from_boundaries(vec![0, 6, 12, 18]).unwrap()
    }

    fn snap(index: usize, events: &[(u32, u32)], p: &Partition) -> Batch {
        let (lo, hi) = p.interval(index);
        Batch {
            events: events.iter().map(|&(s, d)| Event::new(s, d, lo)).collect(),
            snapshot_index: Some(index),
            t_lo: lo,
            t_hi: hi,
        }
    }

    #[test]
    fn index_lookup() {
        let p = p();
        assert_eq!(snapshot_index_of(7, &p).unwrap(), 1);
        assert_eq!(snapshot_index_of(0, &p).unwrap(), 0);
        assert_eq!(snapshot_index_of(18, &p).unwrap(), 2);
        assert!(matches!(snapshot_index_of(19, &p), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn hold_broadcasts() {
        let sig = HeldSignal::new(vec![0.1, 0.2, 0.9], p()).unwrap();
        assert_eq!(zoh_query(&sig, 13).unwrap(), 0.9);
        assert_eq!(zoh_query(&sig, 13).unwrap(), zoh_query(&sig, 17).unwrap());
        let at_bounds: Vec<_> = [0, 6, 12, 18].iter().map(|&t| zoh_query(&sig, t).unwrap()).collect();
        assert_eq!(at_bounds, vec![0.1, 0.2, 0.9, 0.9]);
        assert!(HeldSignal::new(vec![0.0], p()).is_err());
    }

    #[test]
    fn edgebank_continuous_query() {
        let p = p();
        let mut eb = EdgeBank::unlimited();
        eb.observe(&snap(0, &[(1, 2)], &p));
        assert_eq!(continuous_link_query(&eb, &p, 1, 2, 8).unwrap(), 1.0);
        assert_eq!(continuous_link_query(&eb, &p, 3, 4, 8).unwrap(), 0.0);
    }

    #[test]
    fn stale_or_future_state_is_rejected() {
        let p = p();
        let mut eb = EdgeBank::unlimited();
        assert!(continuous_link_query(&eb, &p, 1, 2, 3).is_ok());
        assert!(matches!(
            continuous_link_query(&eb, &p, 1, 2, 13),
            Err(Error::Protocol(_))
        ));
        eb.observe(&snap(0, &[(1, 2)], &p));
        eb.observe(&snap(1, &[(1, 2)], &p));
        // state already includes snapshot 1, which is the query's own interval
        assert!(matches!(
            continuous_link_query(&eb, &p, 1, 2, 7),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn logistic_query_matches_snapshot_scoring() {
        let p = p();
        let mut lr = LogisticScorer::with_weights(vec![-1.0, 0.5, 2.0, 0.3, 0.1]).unwrap();
        lr.observe(&snap(0, &[(0, 1), (1, 2)], &p));
        let direct = lr.score(0, 1);
        for t in 6..12 {
            assert_eq!(
                continuous_link_query(&lr, &p, 0, 1, t).unwrap().to_bits(),
                direct.to_bits()
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn piecewise_constant(
                widths in prop::collection::vec(1u64..50, 1..20),
                origin in 0u64..1_000,
                a in any::<u64>(), b in any::<u64>(),
            ) {
                let mut bounds = vec![origin];
                for w in &widths {
                    bounds.push(bounds.last().unwrap() + w);
                }
                let p = Partition::from_boundaries(bounds).unwrap();
                let values: Vec<f64> = (0..p.count()).map(|i| (i as f64 * 0.37).sin()).collect();
                let sig = HeldSignal::new(values, p.clone()).unwrap();
                let span = p.hi() - p.lo() + 1;
                let (ta, tb) = (p.lo() + a % span, p.lo() + b % span);
                if p.index_of(ta).unwrap() == p.index_of(tb).unwrap() {
                    prop_assert_eq!(zoh_query(&sig, ta).unwrap().to_bits(), zoh_query(&sig, tb).unwrap().to_bits());
                }
            }
        }
    }
}
