//! Dynamic distribution alignment: a kernel classifier trained on the labelled
//! source with an RKHS-norm penalty, a marginal/class-conditional MMD penalty
//! weighted by the adaptive factor μ, and a graph-Laplacian smoothness penalty.
//! The coefficients have a closed form, so each round is one linear solve
//! followed by a refresh of the target pseudo-labels.

use log::warn;
use serde::Serialize;

use crate::config::{Bandwidth, MuSetting, PipelineConfig};
use crate::data::{check_labels, DomainDataset};
use crate::error::{Error, Result};
use crate::numerics::{dot, gemm, pairwise_l2, solve_linear, Matrix};
use crate::topk::{majority_relabel, KLabelMatrix};

/// Scores closer to zero than this count as undecided in the A-distance proxy.
const SEPARATOR_TIE: f64 = 1e-9;

/// Median of the strictly upper-triangular pairwise distances. Falls back to
/// 1 when every sample coincides.
pub fn median_bandwidth(x: &Matrix) -> Result<f64> {
    let d = pairwise_l2(x, x)?;
    let n = x.rows();
    let mut v: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d.get(i, j)).collect();
    if v.is_empty() {
        return Err(Error::invalid("bandwidth needs at least 2 samples"));
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let med = if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) };
    Ok(if med > 0.0 { med } else { 1.0 })
}

pub fn resolve_bandwidth(x: &Matrix, bandwidth: Bandwidth) -> Result<f64> {
    match bandwidth {
        Bandwidth::Median => median_bandwidth(x),
        Bandwidth::Fixed(b) if b.is_finite() && b > 0.0 => Ok(b),
        Bandwidth::Fixed(b) => Err(Error::invalid(format!("bandwidth must be positive, got {b}"))),
    }
}

/// `exp(−‖a_i − b_j‖² / (2 b²))`
pub fn rbf_kernel(a: &Matrix, b: &Matrix, bandwidth: f64) -> Result<Matrix> {
    let d = pairwise_l2(a, b)?;
    let denom = 2.0 * bandwidth * bandwidth;
    Ok(d.map(|v| (-(v * v) / denom).exp()))
}

pub fn rbf_kernel_matrix(x: &Matrix, bandwidth: Bandwidth) -> Result<Matrix> {
    if x.rows() < 2 {
        return Err(Error::invalid("kernel matrix needs at least 2 samples"));
    }
    let b = resolve_bandwidth(x, bandwidth)?;
    rbf_kernel(x, x, b)
}

/// `(1 − μ)·M_0 + μ·Σ_c M_c` over the stacked `[source; target]` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MmdMatrix {
    pub values: Matrix,
    pub mu: f64,
}

/// `e eᵀ` where `e` is `1/n_s` on `source_rows` and `−1/n_t` on `target_rows`.
fn add_outer(m: &mut Matrix, weight: f64, source_rows: &[usize], target_rows: &[usize], offset: usize) {
    let mut e = vec![0.0; m.rows()];
    for &i in source_rows {
        e[i] = 1.0 / source_rows.len() as f64;
    }
    for &j in target_rows {
        e[offset + j] = -1.0 / target_rows.len() as f64;
    }
    let nz: Vec<usize> = (0..e.len()).filter(|&i| e[i] != 0.0).collect();
    for &i in &nz {
        for &j in &nz {
            let v = m.get(i, j) + weight * (e[i] * e[j]);
            m.set(i, j, v);
        }
    }
}

/// Classes missing from either domain's labels are left out of the
/// conditional sum.
pub fn mmd_matrix(
    n_source: usize,
    n_target: usize,
    source_labels: &[usize],
    target_pseudo: &[usize],
    num_classes: usize,
    mu: f64,
) -> Result<MmdMatrix> {
    if source_labels.len() != n_source || target_pseudo.len() != n_target {
        return Err(Error::shape("mmd_matrix", "label counts do not match domain sizes"));
    }
    if n_source == 0 || n_target == 0 {
        return Err(Error::invalid("mmd_matrix needs both domains"));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("mu must lie in [0, 1], got {mu}")));
    }
    check_labels(source_labels, num_classes)?;
    check_labels(target_pseudo, num_classes)?;

    let n = n_source + n_target;
    let mut m = Matrix::zeros(n, n);
    let all_s: Vec<usize> = (0..n_source).collect();
    let all_t: Vec<usize> = (0..n_target).collect();
    if mu < 1.0 {
        add_outer(&mut m, 1.0 - mu, &all_s, &all_t, n_source);
    }
    if mu > 0.0 {
        for c in 0..num_classes {
            let s: Vec<usize> = (0..n_source).filter(|&i| source_labels[i] == c).collect();
            let t: Vec<usize> = (0..n_target).filter(|&j| target_pseudo[j] == c).collect();
            if !s.is_empty() && !t.is_empty() {
                add_outer(&mut m, mu, &s, &t, n_source);
            }
        }
    }
    Ok(MmdMatrix { values: m, mu })
}

/// `L = D − W` for the symmetrised `p`-nearest-neighbour graph weighted by
/// cosine similarity. Negative similarities are clipped to zero so `L` stays
/// positive semidefinite.
pub fn graph_laplacian(x: &Matrix, p_neighbors: usize) -> Result<Matrix> {
    let n = x.rows();
    if p_neighbors == 0 || p_neighbors >= n {
        return Err(Error::invalid(format!(
            "laplacian neighbours must lie in [1, {}], got {p_neighbors}",
            n.saturating_sub(1)
        )));
    }
    let norms: Vec<f64> = x.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = if norms[i] > 0.0 && norms[j] > 0.0 {
                dot(x.row(i), x.row(j)) / (norms[i] * norms[j])
            } else {
                0.0
            };
            sim.set(i, j, s);
            sim.set(j, i, s);
        }
    }
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        let row = sim.row(i);
        let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &idx[..p_neighbors] {
            let v = row[j].max(0.0);
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    let mut l = w.scale(-1.0);
    for i in 0..n {
        let degree: f64 = w.row(i).iter().sum();
        l.set(i, i, degree);
    }
    Ok(l)
}

/// Inputs and result of the adaptive-factor estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuEstimate {
    pub mu: f64,
    /// Proxy A-distance between the two domains.
    pub global: f64,
    /// Per-class proxy A-distances; `None` where a class is missing from a domain.
    pub per_class: Vec<Option<f64>>,
}

/// Training error of a least-squares linear separator with a bias term.
/// Undecided scores count as half an error.
fn separator_error(a: &Matrix, b: &Matrix) -> Result<f64> {
    let x = a.vstack(b)?;
    let n = x.rows();
    let p = x.cols() + 1;
    let mut xb = Matrix::zeros(n, p);
    for r in 0..n {
        xb.row_mut(r)[..p - 1].copy_from_slice(x.row(r));
        xb.row_mut(r)[p - 1] = 1.0;
    }
    let y = Matrix::from_raw(n, 1, (0..n).map(|i| if i < a.rows() { -1.0 } else { 1.0 }).collect());
    let mut gram = Matrix::zeros(p, p);
    gemm(1.0, &xb, true, &xb, false, 0.0, &mut gram);
    let ridge = 1e-8 * (1.0 + (0..p).map(|i| gram.get(i, i)).sum::<f64>() / p as f64);
    for i in 0..p {
        let v = gram.get(i, i) + ridge;
        gram.set(i, i, v);
    }
    let mut rhs = Matrix::zeros(p, 1);
    gemm(1.0, &xb, true, &y, false, 0.0, &mut rhs);
    let w = solve_linear(&gram, &rhs)?;
    let scores = xb.matmul(&w)?;
    let err: f64 = scores
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&s, &t)| {
            if s.abs() < SEPARATOR_TIE {
                0.5
            } else if s.signum() != t {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    Ok(err / n as f64)
}

fn a_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok((2.0 * (1.0 - 2.0 * separator_error(a, b)?)).clamp(0.0, 2.0))
}

/// `μ = 1 − d_global / (d_global + mean_c d_c)` from proxy A-distances,
/// clamped to [0, 1]. Indistinguishable domains (all distances zero) give 0.5.
pub fn estimate_mu(
    source_features: &Matrix,
    target_features: &Matrix,
    source_labels: &[usize],
    target_pseudo: &[usize],
    num_classes: usize,
) -> Result<MuEstimate> {
    if source_features.rows() == 0 || target_features.rows() == 0 {
        return Err(Error::invalid("estimate_mu needs both domains"));
    }
    if source_labels.len() != source_features.rows() || target_pseudo.len() != target_features.rows() {
        return Err(Error::shape("estimate_mu", "label counts do not match domain sizes"));
    }
    check_labels(source_labels, num_classes)?;
    check_labels(target_pseudo, num_classes)?;

    let global = a_distance(source_features, target_features)?;
    let distinct = {
        let mut seen = vec![false; num_classes];
        target_pseudo.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct <= 1 {
        warn!("target pseudo-labels cover a single class; using mu = 0");
        return Ok(MuEstimate {
            mu: 0.0,
            global,
            per_class: vec![None; num_classes],
        });
    }

    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let s: Vec<usize> = (0..source_labels.len()).filter(|&i| source_labels[i] == c).collect();
        let t: Vec<usize> = (0..target_pseudo.len()).filter(|&j| target_pseudo[j] == c).collect();
        per_class.push(if s.is_empty() || t.is_empty() {
            None
        } else {
            Some(a_distance(&source_features.select_rows(&s), &target_features.select_rows(&t))?)
        });
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean_c = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let denom = global + mean_c;
    let mu = if denom > 0.0 { 1.0 - global / denom } else { 0.5 };
    Ok(MuEstimate {
        mu: mu.clamp(0.0, 1.0),
        global,
        per_class,
    })
}

/// Hyperparameters of the alignment solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignParams {
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub rounds: usize,
    pub laplacian_neighbors: usize,
    pub bandwidth: Bandwidth,
    pub mu: MuSetting,
    /// Divide the MMD matrix by its Frobenius norm before weighting by λ.
    pub normalize_mmd: bool,
}

impl From<&PipelineConfig> for AlignParams {
    fn from(c: &PipelineConfig) -> Self {
        AlignParams {
            eta: c.eta,
            lambda: c.lambda,
            rho: c.rho,
            rounds: c.alignment_rounds,
            laplacian_neighbors: c.laplacian_neighbors,
            bandwidth: c.kernel_bandwidth,
            mu: c.mu,
            normalize_mmd: true,
        }
    }
}

impl AlignParams {
    fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0 && self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::invalid("lambda and rho must be non-negative"));
        }
        if let MuSetting::Fixed(mu) = self.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::invalid(format!("mu must lie in [0, 1], got {mu}")));
            }
        }
        Ok(())
    }
}

/// Kernel classifier `f(x) = Σ_i α_i k(x, x_i)` over the stored samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentModel {
    /// (N_S + N_T) × C
    pub coefficients: Matrix,
    pub bandwidth: f64,
    pub samples: Matrix,
}

impl AlignmentModel {
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        rbf_kernel(x, &self.samples, self.bandwidth)?.matmul(&self.coefficients)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.iter_rows().map(argmax).collect())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignRound {
    pub round: usize,
    pub mu: f64,
    /// Target labels that changed in this round.
    pub changed: usize,
}

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub labels: Vec<usize>,
    pub model: AlignmentModel,
    pub rounds: Vec<AlignRound>,
}

/// Runs `params.rounds` rounds of the closed-form solve
/// `α = ((E + λM + ρL)K + ηI)⁻¹ E Ỹ`, refreshing the target pseudo-labels
/// after each. When `relabel` is given, each refresh is followed by a
/// neighbourhood majority vote over the target samples.
pub fn align(
    source: &DomainDataset,
    target_features: &Matrix,
    target_pseudo: &[usize],
    params: &AlignParams,
    relabel: Option<&KLabelMatrix>,
) -> Result<AlignOutcome> {
    params.validate()?;
    let ys = source.require_labels("align")?;
    let classes = source.num_classes();
    let (n_s, n_t) = (source.len(), target_features.rows());
    if target_pseudo.len() != n_t {
        return Err(Error::shape("align", format!("{} pseudo-labels for {n_t} target samples", target_pseudo.len())));
    }
    check_labels(target_pseudo, classes)?;
    if let Some(k) = relabel {
        if k.len() != n_t {
            return Err(Error::shape("align", "neighbour matrix does not cover the target domain"));
        }
    }

    let x = source.features().vstack(target_features)?;
    let n = x.rows();
    let bandwidth = resolve_bandwidth(&x, params.bandwidth)?;
    let k = rbf_kernel(&x, &x, bandwidth)?;
    let lap = if params.rho > 0.0 {
        Some(graph_laplacian(&x, params.laplacian_neighbors.min(n - 1))?)
    } else {
        None
    };
    let mut rhs = Matrix::zeros(n, classes);
    for (i, &y) in ys.iter().enumerate() {
        rhs.set(i, y, 1.0);
    }

    let mut pseudo = target_pseudo.to_vec();
    let mut rounds = Vec::with_capacity(params.rounds);
    let mut coefficients = Matrix::zeros(n, classes);
    for round in 0..params.rounds {
        let mu = match params.mu {
            MuSetting::Fixed(mu) => mu,
            MuSetting::Auto => estimate_mu(source.features(), target_features, ys, &pseudo, classes)?.mu,
        };
        // E + λM + ρL
        let mut reg = Matrix::zeros(n, n);
        if params.lambda > 0.0 {
            let m = mmd_matrix(n_s, n_t, ys, &pseudo, classes, mu)?.values;
            let norm = if params.normalize_mmd { m.frobenius_norm() } else { 1.0 };
            if norm > 0.0 {
                reg = m.scale(params.lambda / norm);
            }
        }
        if let Some(l) = &lap {
            reg.as_mut_slice().iter_mut().zip(l.as_slice()).for_each(|(r, v)| *r += params.rho * v);
        }
        for i in 0..n_s {
            let v = reg.get(i, i) + 1.0;
            reg.set(i, i, v);
        }
        let mut system = Matrix::identity(n).scale(params.eta);
        gemm(1.0, &reg, false, &k, false, 1.0, &mut system);
        coefficients = solve_linear(&system, &rhs)?;

        let scores = k.select_rows(&(n_s..n).collect::<Vec<_>>()).matmul(&coefficients)?;
        let mut fresh: Vec<usize> = scores.iter_rows().map(argmax).collect();
        if let Some(kl) = relabel {
            fresh = majority_relabel(&fresh, kl)?;
        }
        let changed = fresh.iter().zip(&pseudo).filter(|(a, b)| a != b).count();
        pseudo = fresh;
        rounds.push(AlignRound { round, mu, changed });
    }

    Ok(AlignOutcome {
        labels: pseudo,
        model: AlignmentModel {
            coefficients,
            bandwidth,
            samples: x,
        },
        rounds,
    })
}
