use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::types::Hypothesis;

#[derive(Debug, Clone, Copy)]
struct QueueKey {
    score: f64,
    seq_no: u64,
}

impl QueueKey {
    fn of<S>(h: &Hypothesis<S>) -> Self {
        QueueKey { score: h.score() + 0.0, seq_no: h.seq_no }
    }
}

impl PartialEq for QueueKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    // same order as `compare_hypotheses`; seq_no is unique so tokens never decide
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.seq_no.cmp(&other.seq_no))
    }
}

/// Priority queue holding every hypothesis of a single-queue decode.
///
/// Finished and unfinished hypotheses live in separate ordered maps so that
/// "best `n` unfinished" never scans finished entries.
#[derive(Debug, Clone)]
pub struct HypothesisQueue<S> {
    unfinished: BTreeMap<QueueKey, Hypothesis<S>>,
    finished: BTreeMap<QueueKey, Hypothesis<S>>,
    capacity: Option<usize>,
    evicted: usize,
}

impl<S> Default for HypothesisQueue<S> {
    fn default() -> Self {
        HypothesisQueue::new(None)
    }
}

impl<S> HypothesisQueue<S> {
    pub fn new(capacity: Option<usize>) -> Self {
        HypothesisQueue { unfinished: BTreeMap::new(), finished: BTreeMap::new(), capacity, evicted: 0 }
    }

    pub fn len(&self) -> usize {
        self.unfinished.len() + self.finished.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finished_count(&self) -> usize {
        self.finished.len()
    }

    pub fn unfinished_count(&self) -> usize {
        self.unfinished.len()
    }

    /// Number of unfinished hypotheses dropped by the capacity limit.
    pub fn evicted(&self) -> usize {
        self.evicted
    }

    /// Inserts a scored hypothesis. Panics on an unscored hypothesis or a
    /// repeated `seq_no`.
    pub fn push(&mut self, h: Hypothesis<S>) {
        let key = QueueKey::of(&h);
        let map = if h.finished { &mut self.finished } else { &mut self.unfinished };
        let dup = map.insert(key, h).is_some();
        assert!(!dup, "hypothesis #{} inserted twice", key.seq_no);
        if let Some(cap) = self.capacity {
            while self.len() > cap && self.unfinished.pop_last().is_some() {
                self.evicted += 1;
            }
        }
    }

    /// Removes and returns the best `n` unfinished hypotheses, best first.
    pub fn pop_best_unfinished(&mut self, n: usize) -> Vec<Hypothesis<S>> {
        let mut out = Vec::with_capacity(n.min(self.unfinished.len()));
        while out.len() < n {
            match self.unfinished.pop_first() {
                Some((_, h)) => out.push(h),
                None => break,
            }
        }
        out
    }

    pub fn best_finished(&self) -> Option<&Hypothesis<S>> {
        self.finished.values().next()
    }

    pub fn best_unfinished(&self) -> Option<&Hypothesis<S>> {
        self.unfinished.values().next()
    }

    /// Finished hypotheses, best first.
    pub fn finished(&self) -> impl Iterator<Item = &Hypothesis<S>> {
        self.finished.values()
    }
}
