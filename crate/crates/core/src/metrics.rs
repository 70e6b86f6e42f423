//! Clustering and classification evaluation: optimal-mapping clustering
//! accuracy, normalized mutual information, confusion matrices, and
//! multi-trial summary statistics.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Evaluation of one prediction/assignment vector against ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Optimal-mapping clustering accuracy in [0, 1].
    pub acc: f64,
    /// Normalized mutual information in [0, 1].
    pub nmi: f64,
    /// confusion[i][j] = count of true-class-i samples assigned j (after
    /// applying `mapping` to the raw assignments).
    pub confusion: Vec<Vec<usize>>,
    /// mapping[cluster] = class the optimal assignment pairs it with.
    pub mapping: Vec<usize>,
    /// Sample count.
    pub n: usize,
}

/// Count matrix: rows = true classes, columns = assigned clusters.
fn contingency(truth: &[usize], assigned: &[usize]) -> (Array2<f64>, usize, usize) {
    let n_true = truth.iter().max().map_or(0, |&m| m + 1);
    let n_asn = assigned.iter().max().map_or(0, |&m| m + 1);
    let mut table = Array2::zeros((n_true, n_asn));
    for (&t, &a) in truth.iter().zip(assigned) {
        table[[t, a]] += 1.0;
    }
    (table, n_true, n_asn)
}

/// Maximum-weight perfect matching on a square cost matrix (Hungarian
/// algorithm, O(n^3)). Returns for each row the column it is matched to.
///
/// `weights[i][j]` is the benefit of pairing row i with column j; the
/// algorithm maximizes total benefit.
fn hungarian_max(weights: &Array2<f64>) -> Vec<usize> {
    // Classic shortest-augmenting-path formulation on costs; negate to turn
    // the maximization into a minimization.
    let n = weights.nrows();
    assert_eq!(n, weights.ncols(), "hungarian_max needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -weights[[i, j]];

    // 1-indexed potentials and matching, per the standard formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut match_col = vec![0usize; n + 1]; // column -> row matched to it

    for i in 1..=n {
        let mut links = vec![0usize; n + 1];
        let mut mins = vec![f64::INFINITY; n + 1];
        let mut visited = vec![false; n + 1];
        let mut j0 = 0usize;
        match_col[0] = i;
        loop {
            visited[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !visited[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < mins[j] {
                        mins[j] = cur;
                        links[j] = j0;
                    }
                    if mins[j] < delta {
                        delta = mins[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if visited[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    mins[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        // Augment along the found path.
        loop {
            let j1 = links[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if match_col[j] > 0 {
            row_to_col[match_col[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Clustering accuracy: the best achievable fraction of agreements over all
/// one-to-one cluster-to-class mappings, plus the mapping itself
/// (`mapping[cluster] = class`).
///
/// When cluster and class counts differ, the contingency table is padded
/// square and unmatched clusters contribute zero matches.
pub fn clustering_accuracy(truth: &[usize], assigned: &[usize]) -> Result<(f64, Vec<usize>)> {
    if truth.len() != assigned.len() {
        return Err(Error::shape(
            "clustering_accuracy",
            truth.len(),
            assigned.len(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument(
            "clustering_accuracy: empty input".into(),
        ));
    }
    let (table, n_true, n_asn) = contingency(truth, assigned);
    let side = n_true.max(n_asn);
    let mut padded = Array2::zeros((side, side));
    padded
        .slice_mut(ndarray::s![..n_true, ..n_asn])
        .assign(&table);
    // Rows of the assignment problem are clusters, columns are classes.
    let cluster_to_class = hungarian_max(&padded.t().to_owned());
    let matched: f64 = (0..side)
        .map(|c| padded[[cluster_to_class[c], c]])
        .sum();
    let acc = matched / truth.len() as f64;
    Ok((acc, cluster_to_class[..n_asn.max(1)].to_vec()))
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(y; c) / (H(y) + H(c))` with natural-log
/// entropies.
///
/// Degenerate single-block partitions have zero entropy; when both entropies
/// vanish the partitions are necessarily identical and the score is defined
/// as 1.0, while a single zero entropy yields 0.0. Both cases log a warning.
pub fn nmi(truth: &[usize], assigned: &[usize]) -> Result<f64> {
    if truth.len() != assigned.len() {
        return Err(Error::shape("nmi", truth.len(), assigned.len()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("nmi: empty input".into()));
    }
    let (table, n_true, n_asn) = contingency(truth, assigned);
    let n = truth.len() as f64;
    let row_sums: Vec<f64> = (0..n_true).map(|i| table.row(i).sum()).collect();
    let col_sums: Vec<f64> = (0..n_asn).map(|j| table.column(j).sum()).collect();
    let h_true = entropy(&row_sums, n);
    let h_asn = entropy(&col_sums, n);
    if h_true == 0.0 && h_asn == 0.0 {
        log::warn!("nmi: both partitions are single blocks; defining NMI = 1.0");
        return Ok(1.0);
    }
    if h_true == 0.0 || h_asn == 0.0 {
        log::warn!("nmi: one partition is a single block; defining NMI = 0.0");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for i in 0..n_true {
        for j in 0..n_asn {
            let nij = table[[i, j]];
            if nij > 0.0 {
                mi += (nij / n) * ((n * nij) / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    Ok((2.0 * mi / (h_true + h_asn)).clamp(0.0, 1.0))
}

/// Raw confusion counts: entry (i, j) = true-class-i samples predicted j.
/// `n_classes` fixes the matrix size so absent classes keep their rows.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::shape("confusion_matrix", truth.len(), predicted.len()));
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: t,
                n_classes,
            });
        }
        if p >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: p,
                n_classes,
            });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Row-normalized percentage view of a confusion matrix (rows summing to 100
/// where the class has samples).
pub fn confusion_percent(confusion: &[Vec<usize>]) -> Vec<Vec<f64>> {
    confusion
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if total == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Full evaluation of assignments against ground truth. The confusion matrix
/// is computed after applying the optimal cluster-to-class mapping, so its
/// diagonal sum equals `acc * n`.
pub fn evaluate(truth: &[usize], assigned: &[usize], n_classes: usize) -> Result<EvalReport> {
    let (acc, mapping) = clustering_accuracy(truth, assigned)?;
    let nmi_score = nmi(truth, assigned)?;
    let mapped: Vec<usize> = assigned
        .iter()
        .map(|&a| mapping.get(a).copied().unwrap_or(a))
        .collect();
    let confusion = confusion_matrix(truth, &mapped, n_classes)?;
    Ok(EvalReport {
        acc,
        nmi: nmi_score,
        confusion,
        mapping,
        n: truth.len(),
    })
}

/// Evaluation of class-indexed predictions (a trained classifier) against
/// ground truth: no remapping is applied, accuracy is plain agreement.
pub fn evaluate_predictions(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<EvalReport> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "evaluate_predictions: got {} truth and {} predicted labels",
            truth.len(),
            predicted.len()
        )));
    }
    let correct = truth
        .iter()
        .zip(predicted.iter())
        .filter(|(a, b)| a == b)
        .count();
    let acc = correct as f64 / truth.len() as f64;
    let nmi_score = nmi(truth, predicted)?;
    let confusion = confusion_matrix(truth, predicted, n_classes)?;
    Ok(EvalReport {
        acc,
        nmi: nmi_score,
        confusion,
        mapping: (0..n_classes).collect(),
        n: truth.len(),
    })
}

/// Mean / population standard deviation / min / max of a metric across trials.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn trial_summary(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("trial_summary: empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Summary {
        mean,
        std: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}
