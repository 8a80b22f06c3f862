//! Within-domain neighbourhoods: the affinity matrix, top-K correlated labels,
//! majority relabelling and the top-K correlated loss.

use serde::Serialize;

use crate::discrepancy::ConditionalFeatures;
use crate::error::{Error, Result};
use crate::numerics::{pairwise_l2, Matrix};

/// Row-stochastic N×N matrix with a zero diagonal. Entry `[j][n]` is the
/// share of sample `j`'s summed combined distance that falls on sample `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix(Matrix);

impl AffinityMatrix {
    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }
}

/// Per-sample neighbour indices, K per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KLabelMatrix {
    indices: Vec<Vec<usize>>,
    k: usize,
}

impl KLabelMatrix {
    pub fn new(indices: Vec<Vec<usize>>) -> Result<Self> {
        let n = indices.len();
        let k = indices.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::invalid("K-label matrix needs K >= 1"));
        }
        for (j, row) in indices.iter().enumerate() {
            if row.len() != k {
                return Err(Error::shape("KLabelMatrix::new", format!("row {j} has {} entries, expected {k}", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&i| i >= n || i == j) {
                return Err(Error::invalid(format!("row {j} lists invalid neighbour {bad}")));
            }
        }
        Ok(KLabelMatrix { indices, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, j: usize) -> &[usize] {
        &self.indices[j]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.indices
    }
}

/// Which end of each affinity row is taken as the neighbourhood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NeighborOrder {
    /// Smallest combined distance first.
    #[default]
    Nearest,
    /// Largest affinity value first, i.e. the farthest samples.
    LiteralDescending,
}

fn combined_distances(marginal: &Matrix, conditional: &ConditionalFeatures) -> Result<Matrix> {
    if marginal.rows() != conditional.len() {
        return Err(Error::shape(
            "affinity_matrix",
            format!("{} marginal rows vs {} conditional rows", marginal.rows(), conditional.len()),
        ));
    }
    pairwise_l2(marginal, marginal)?.add(&pairwise_l2(conditional.values(), conditional.values())?)
}

pub fn affinity_matrix(marginal: &Matrix, conditional: &ConditionalFeatures) -> Result<AffinityMatrix> {
    let n = marginal.rows();
    if n < 2 {
        return Err(Error::invalid(format!("affinity matrix needs at least 2 samples, got {n}")));
    }
    let mut p = combined_distances(marginal, conditional)?;
    for j in 0..n {
        let row = p.row_mut(j);
        row[j] = 0.0;
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            // every other sample coincides with j
            let u = 1.0 / (n - 1) as f64;
            row.iter_mut().for_each(|v| *v = u);
        }
        row[j] = 0.0;
    }
    Ok(AffinityMatrix(p))
}

/// Every row's other indices ordered by affinity, ties by lower index.
fn ordered_neighbors(a: &AffinityMatrix, order: NeighborOrder) -> Vec<Vec<usize>> {
    let n = a.len();
    (0..n)
        .map(|j| {
            let row = a.0.row(j);
            let mut idx: Vec<usize> = (0..n).filter(|&i| i != j).collect();
            idx.sort_by(|&x, &y| {
                let o = row[x].total_cmp(&row[y]);
                let o = match order {
                    NeighborOrder::Nearest => o,
                    NeighborOrder::LiteralDescending => o.reverse(),
                };
                o.then(x.cmp(&y))
            });
            idx
        })
        .collect()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must lie in [1, {}], got {k}", n.saturating_sub(1))));
    }
    Ok(())
}

/// The `k` nearest samples to each sample. Affinity rows are positive
/// rescalings of the combined distances, so ascending affinity is ascending
/// distance.
pub fn topk_labels(a: &AffinityMatrix, k: usize) -> Result<KLabelMatrix> {
    topk_labels_ordered(a, k, NeighborOrder::Nearest)
}

pub fn topk_labels_ordered(a: &AffinityMatrix, k: usize, order: NeighborOrder) -> Result<KLabelMatrix> {
    check_k(a.len(), k)?;
    let rows = ordered_neighbors(a, order).into_iter().map(|mut r| {
        r.truncate(k);
        r
    });
    KLabelMatrix::new(rows.collect())
}

fn check_shapes(y_pred: &[usize], klabels: &KLabelMatrix) -> Result<()> {
    if y_pred.len() != klabels.len() {
        return Err(Error::shape(
            "majority_relabel",
            format!("{} predictions vs {} neighbour rows", y_pred.len(), klabels.len()),
        ));
    }
    Ok(())
}

fn vote(y_pred: &[usize], own: usize, neighbors: &[usize]) -> usize {
    let mut counts: Vec<(usize, usize)> = Vec::with_capacity(neighbors.len());
    for &i in neighbors {
        let l = y_pred[i];
        match counts.iter_mut().find(|(lab, _)| *lab == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let best = counts.iter().map(|&(_, c)| c).max().unwrap_or(0);
    let mut winners = counts.iter().filter(|&&(_, c)| c == best);
    match (winners.next(), winners.next()) {
        (Some(&(l, _)), None) => l,
        _ => own,
    }
}

/// Replaces each prediction by the most frequent prediction among its
/// neighbours; a tied vote keeps the original prediction.
pub fn majority_relabel(y_pred: &[usize], klabels: &KLabelMatrix) -> Result<Vec<usize>> {
    check_shapes(y_pred, klabels)?;
    Ok(y_pred
        .iter()
        .enumerate()
        .map(|(j, &own)| vote(y_pred, own, klabels.row(j)))
        .collect())
}

/// Fraction of samples whose prediction disagrees with their neighbourhood vote.
pub fn topk_loss(y_pred: &[usize], klabels: &KLabelMatrix) -> Result<f64> {
    let voted = majority_relabel(y_pred, klabels)?;
    let disagree = y_pred.iter().zip(&voted).filter(|(a, b)| a != b).count();
    Ok(disagree as f64 / y_pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KSelection {
    pub best_k: usize,
    /// `losses[k - 1]` is the top-K loss at `k`.
    pub losses: Vec<f64>,
}

/// Chooses K in `1..=k_max` minimising the top-K loss; ties go to the smaller K.
pub fn tune_k(
    marginal: &Matrix,
    conditional: &ConditionalFeatures,
    y_pred: &[usize],
    k_max: usize,
) -> Result<KSelection> {
    let a = affinity_matrix(marginal, conditional)?;
    check_k(a.len(), k_max)?;
    if y_pred.len() != a.len() {
        return Err(Error::shape("tune_k", format!("{} predictions for {} samples", y_pred.len(), a.len())));
    }
    let order = ordered_neighbors(&a, NeighborOrder::Nearest);
    let mut losses = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let rows = order.iter().map(|r| r[..k].to_vec()).collect();
        losses.push(topk_loss(y_pred, &KLabelMatrix::new(rows)?)?);
    }
    let best_k = losses
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &l)| if l < best.1 { (i, l) } else { best })
        .0
        + 1;
    Ok(KSelection { best_k, losses })
}
