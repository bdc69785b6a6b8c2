//! Sub-sequence selection for the sampling-paradigm baselines.

use super::SeqItem;

/// Hard search: indices of sequence items in `target_category`, keeping the
/// `k` most recent matches, returned in chronological order.
pub fn gsu_hard_search(sequence: &[SeqItem], target_category: u32, k: usize) -> Vec<usize> {
    let mut picked: Vec<usize> = sequence
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, s)| s.category == target_category)
        .map(|(i, _)| i)
        .take(k)
        .collect();
    picked.reverse();
    picked
}

/// Indices of the `k` most recent items, chronological.
pub fn most_recent(n: usize, k: usize) -> Vec<usize> {
    (n.saturating_sub(k)..n).collect()
}
