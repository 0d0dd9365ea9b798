//! Clustering evaluation: normalized mutual information, adjusted Rand
//! index, and best-matching accuracy. All three are computed from the
//! contingency matrix and are invariant to relabeling either argument.

use crate::{Error, Result};

/// Contingency counts: entry `[i][j]` is the number of samples with
/// predicted label `i` and true label `j`.
pub fn confusion(
    pred: &[usize],
    truth: &[usize],
    k_pred: usize,
    k_true: usize,
) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "label length mismatch: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty label arrays".into()));
    }
    let mut table = vec![vec![0u64; k_true]; k_pred];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k_pred || t >= k_true {
            return Err(Error::InvalidArgument(format!(
                "label ({p}, {t}) outside table of shape {k_pred}x{k_true}"
            )));
        }
        table[p][t] += 1;
    }
    Ok(table)
}

fn label_range(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Normalized mutual information with the geometric-mean normalization
/// I / sqrt(H_pred * H_true). Two constant partitions score 1; if exactly
/// one side is constant, the mutual information (and hence the score) is 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = confusion(pred, truth, label_range(pred), label_range(truth))?;
    let n = pred.len() as f64;
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_sums);
    let h_true = entropy(&col_sums);
    if h_pred == 0.0 && h_true == 0.0 {
        return Ok(1.0);
    }
    if h_pred == 0.0 || h_true == 0.0 {
        return Ok(0.0);
    }
    let mut info = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let joint = c as f64 / n;
                info += joint * ((n * c as f64) / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((info / (h_pred * h_true).sqrt()).clamp(0.0, 1.0))
}

fn comb2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index via pair counting with the expected-index
/// correction; the degenerate zero-denominator case (both partitions all
/// singletons, or n = 1) scores 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = confusion(pred, truth, label_range(pred), label_range(truth))?;
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let pairs_both: u64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let pairs_pred: u64 = row_sums.iter().map(|&c| comb2(c)).sum();
    let pairs_true: u64 = col_sums.iter().map(|&c| comb2(c)).sum();
    let pairs_total = comb2(pred.len() as u64);
    Ok(ari_from_pair_counts(pairs_both, pairs_pred, pairs_true, pairs_total))
}

/// Shared final expression so an independent pair counter lands on the same
/// floating-point value. Works on the integer-cleared form
/// (total*both - pred*truth) / (total*(pred+truth)/2 - pred*truth), scaled
/// by 2 to stay integral, with a single float division at the end.
pub fn ari_from_pair_counts(both: u64, pred: u64, truth: u64, total: u64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let (both, pred, truth, total) = (both as i128, pred as i128, truth as i128, total as i128);
    let numerator = 2 * (total * both - pred * truth);
    let denominator = total * (pred + truth) - 2 * pred * truth;
    if denominator == 0 {
        return 1.0;
    }
    numerator as f64 / denominator as f64
}

/// Clustering accuracy: the best fraction of agreeing samples over all
/// one-to-one assignments of predicted clusters to true classes, solved
/// exactly with the Hungarian algorithm on the negated contingency matrix.
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let k_pred = label_range(pred);
    let k_true = label_range(truth);
    let k = k_pred.max(k_true);
    if k > 64 {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters exceed the assignment-problem guard of 64"
        )));
    }
    let table = confusion(pred, truth, k_pred, k_true)?;
    // Pad to square; minimizing the negated counts maximizes the agreement.
    let mut cost = vec![vec![0i64; k]; k];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i][j] = -(c as i64);
        }
    }
    let assignment = hungarian_min(&cost);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < k_pred && j < k_true)
        .map(|(i, &j)| table[i][j])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Minimum-cost perfect matching on a square cost matrix (potentials /
/// shortest-augmenting-path formulation, O(k^3)). Returns, for each row,
/// the assigned column.
fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let k = cost.len();
    const INF: i64 = i64::MAX / 4;
    // 1-indexed potentials and matching: p[j] = row matched to column j.
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; k];
    for j in 1..=k {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
