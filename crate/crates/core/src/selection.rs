//! Checkpoint selection strategies.
//!
//! Strategies operate on checkpoint metadata ordered by step ascending
//! and return positions into that series. `LastKFromBest` anchors the
//! window at the checkpoint with the best (smallest) dev perplexity;
//! `LastKFromEnd` is the common practitioner recipe of taking the final
//! K checkpoints. Ties in dev perplexity break toward the smaller step,
//! and K larger than the series clips instead of erroring.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::store::CheckpointMeta;

/// How to pick the checkpoints that enter an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// The K checkpoints with smallest dev perplexity.
    TopK(usize),
    /// The K consecutive checkpoints ending at the best one.
    LastKFromBest(usize),
    /// The final K checkpoints of the series.
    LastKFromEnd(usize),
}

impl SelectionStrategy {
    pub fn k(&self) -> usize {
        match *self {
            SelectionStrategy::TopK(k)
            | SelectionStrategy::LastKFromBest(k)
            | SelectionStrategy::LastKFromEnd(k) => k,
        }
    }

    pub fn with_k(&self, k: usize) -> Self {
        match self {
            SelectionStrategy::TopK(_) => SelectionStrategy::TopK(k),
            SelectionStrategy::LastKFromBest(_) => SelectionStrategy::LastKFromBest(k),
            SelectionStrategy::LastKFromEnd(_) => SelectionStrategy::LastKFromEnd(k),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k() == 0 {
            return Err(Error::InvalidConfig("selection k must be >= 1".into()));
        }
        Ok(())
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    /// Parses the CLI spelling with K = 1; callers set K separately.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-k" => Ok(SelectionStrategy::TopK(1)),
            "last-k-best" => Ok(SelectionStrategy::LastKFromBest(1)),
            "last-k-end" => Ok(SelectionStrategy::LastKFromEnd(1)),
            other => Err(Error::InvalidConfig(format!(
                "unknown selection strategy \"{other}\" (expected top-k|last-k-best|last-k-end)"
            ))),
        }
    }
}

/// Positions selected from the input series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    indices: Vec<usize>,
}

impl SelectionResult {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Selects checkpoint positions from `metas` (ordered by step ascending).
///
/// TopK results come back ordered by dev perplexity ascending, then step;
/// the window strategies come back in step order. K clips to the series
/// length.
pub fn select(metas: &[CheckpointMeta], strategy: SelectionStrategy) -> Result<SelectionResult> {
    strategy.validate()?;
    if metas.is_empty() {
        return Err(Error::EmptySeries);
    }
    let k = strategy.k().min(metas.len());

    let indices = match strategy {
        SelectionStrategy::TopK(_) => {
            let mut order = ranked_by_ppl(metas)?;
            order.truncate(k);
            order
        }
        SelectionStrategy::LastKFromBest(_) => {
            let best = ranked_by_ppl(metas)?[0];
            let start = (best + 1).saturating_sub(k);
            (start..=best).collect()
        }
        SelectionStrategy::LastKFromEnd(_) => (metas.len() - k..metas.len()).collect(),
    };
    Ok(SelectionResult { indices })
}

/// Indices sorted by (dev_ppl, step, position); errors if any dev_ppl is absent.
fn ranked_by_ppl(metas: &[CheckpointMeta]) -> Result<Vec<usize>> {
    let mut keyed: Vec<(f64, u64, usize)> = Vec::with_capacity(metas.len());
    for (i, m) in metas.iter().enumerate() {
        let ppl = m.dev_ppl.ok_or(Error::MissingDevPpl { index: i })?;
        keyed.push((ppl, m.step, i));
    }
    keyed.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("dev_ppl is finite by invariant")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metas(ppls: &[f64]) -> Vec<CheckpointMeta> {
        ppls.iter()
            .enumerate()
            .map(|(i, &p)| CheckpointMeta::new(i as u64 + 1, Some(p), "").unwrap())
            .collect()
    }

    #[test]
    fn top_k_picks_smallest_ppls_in_ppl_order() {
        let m = metas(&[9.0, 5.0, 6.0, 5.5]);
        let sel = select(&m, SelectionStrategy::TopK(2)).unwrap();
        assert_eq!(sel.indices(), &[1, 3]);
    }

    #[test]
    fn last_k_from_best_windows_back_from_the_best() {
        let m = metas(&[9.0, 5.0, 6.0, 5.5]);
        let sel = select(&m, SelectionStrategy::LastKFromBest(2)).unwrap();
        assert_eq!(sel.indices(), &[0, 1]);
    }

    #[test]
    fn k1_top_k_and_last_k_from_best_agree_on_the_argmin() {
        let m = metas(&[3.0, 2.5, 4.0, 2.6]);
        let top = select(&m, SelectionStrategy::TopK(1)).unwrap();
        let last = select(&m, SelectionStrategy::LastKFromBest(1)).unwrap();
        assert_eq!(top.indices(), &[1]);
        assert_eq!(top, last);
    }

    #[test]
    fn oversized_k_clips_to_series_length() {
        let m = metas(&[9.0, 5.0, 6.0]);
        for strat in [
            SelectionStrategy::TopK(10),
            SelectionStrategy::LastKFromEnd(10),
        ] {
            let sel = select(&m, strat).unwrap();
            assert_eq!(sel.len(), 3);
        }
        // the best-anchored window additionally clips at the best index
        let sel = select(&m, SelectionStrategy::LastKFromBest(10)).unwrap();
        assert_eq!(sel.indices(), &[0, 1]);
    }

    #[test]
    fn last_k_from_best_clips_at_series_start() {
        let m = metas(&[5.0, 9.0, 8.0, 7.0]);
        let sel = select(&m, SelectionStrategy::LastKFromBest(3)).unwrap();
        assert_eq!(sel.indices(), &[0]);
    }

    #[test]
    fn last_k_from_end_takes_the_tail_in_step_order() {
        let m = metas(&[9.0, 5.0, 6.0, 5.5]);
        let sel = select(&m, SelectionStrategy::LastKFromEnd(3)).unwrap();
        assert_eq!(sel.indices(), &[1, 2, 3]);
    }

    #[test]
    fn ppl_ties_break_toward_the_smaller_step() {
        let m = metas(&[5.0, 5.0, 4.0]);
        let sel = select(&m, SelectionStrategy::TopK(2)).unwrap();
        assert_eq!(sel.indices(), &[2, 0]);
    }

    #[test]
    fn missing_dev_ppl_errors_where_required() {
        let mut m = metas(&[5.0, 6.0]);
        m[1].dev_ppl = None;
        let err = select(&m, SelectionStrategy::TopK(1)).unwrap_err();
        assert!(matches!(err, Error::MissingDevPpl { index: 1 }));
        // last-k-end never consults perplexities
        select(&m, SelectionStrategy::LastKFromEnd(2)).unwrap();
    }

    #[test]
    fn empty_series_errors() {
        let err = select(&[], SelectionStrategy::TopK(1)).unwrap_err();
        assert!(matches!(err, Error::EmptySeries));
    }

    #[test]
    fn zero_k_errors() {
        let m = metas(&[5.0]);
        assert!(select(&m, SelectionStrategy::TopK(0)).is_err());
    }

    #[test]
    fn top_k_is_monotone_in_k() {
        let m = metas(&[9.0, 5.0, 6.0, 5.5, 7.2, 4.9, 8.8]);
        for k in 1..m.len() {
            let small: std::collections::BTreeSet<_> = select(&m, SelectionStrategy::TopK(k))
                .unwrap()
                .indices()
                .iter()
                .copied()
                .collect();
            let large: std::collections::BTreeSet<_> = select(&m, SelectionStrategy::TopK(k + 1))
                .unwrap()
                .indices()
                .iter()
                .copied()
                .collect();
            assert!(small.is_subset(&large));
        }
    }

    #[test]
    fn strategy_parses_cli_spellings() {
        assert_eq!(
            "top-k".parse::<SelectionStrategy>().unwrap().with_k(4),
            SelectionStrategy::TopK(4)
        );
        assert_eq!(
            "last-k-best"
                .parse::<SelectionStrategy>()
                .unwrap()
                .with_k(2),
            SelectionStrategy::LastKFromBest(2)
        );
        assert_eq!(
            "last-k-end".parse::<SelectionStrategy>().unwrap().with_k(3),
            SelectionStrategy::LastKFromEnd(3)
        );
        assert!("bogus".parse::<SelectionStrategy>().is_err());
    }
}
