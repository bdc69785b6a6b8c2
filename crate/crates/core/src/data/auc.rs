//! Area under the ROC curve.

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both classes are present.
///
/// Rank-based, `O(N log N)`. Ranks are kept doubled so that tie groups get
/// integer mid-ranks and the result is the same integer ratio the pairwise
/// definition produces. Scores are ordered with `f64::total_cmp`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l != 0).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]).is_eq() {
            j += 1;
        }
        // 1-based ranks i+1..=j; twice their mean is i+1+j.
        let mid2 = (i + 1 + j) as u128;
        let group_pos = order[i..j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        rank_sum2 += mid2 * group_pos;
        i = j;
    }
    let wins2 = rank_sum2 - pos * (pos + 1);
    Some(wins2 as f64 / (2 * pos * neg) as f64)
}

/// Reference `O(P·N)` enumeration of all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores and labels differ in length");
    let mut wins2: u128 = 0;
    let (mut pos, mut neg) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if li == 0 {
            neg += 1;
            continue;
        }
        pos += 1;
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                wins2 += match scores[i].total_cmp(&scores[j]) {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(wins2 as f64 / (2 * pos * neg) as f64)
}
