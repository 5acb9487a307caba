//! ROC AUC through the Mann–Whitney rank-sum statistic.

use crate::error::{ensure, Result};

/// Area under the ROC curve with mid-rank tie handling: the probability that
/// a random positive scores above a random negative, ties counting one half.
///
/// Returns 0.5 when the labels contain only one class.
pub fn auc(scores: &[f32], labels: &[u8]) -> Result<f64> {
    ensure!(
        scores.len() == labels.len(),
        Shape,
        "{} scores for {} labels",
        scores.len(),
        labels.len()
    );
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(0.5);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // ranks are 1-based; doubled so every mid-rank is an integer
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_x2 = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        rank_sum_x2 += mid_x2 * pos_in_group;
        i = j;
    }
    let p = positives as u128;
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2.0 * positives as f64 * negatives as f64))
}
