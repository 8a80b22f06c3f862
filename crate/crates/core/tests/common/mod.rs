//! Brute-force reference implementations and fixtures shared by the
//! integration tests and the acceptance harness. Everything here is written
//! with plain loops over `Vec<Vec<f64>>` and does not call the library's
//! numerical kernels.

#![allow(dead_code)]

use cajnet::discrepancy::{build_joint_features, ConditionalFeatures, JointFeatures};
use cajnet::encoder::{loss_gradients, EncoderParams};
use cajnet::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

/// Labels covering every class at least once.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    for c in 0..classes.min(n) {
        y[c] = c;
    }
    y
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// Explicit class means, then explicit distances.
pub fn conditional_oracle(query: &[Vec<f64>], source: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let d = source[0].len();
    let mut means = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (x, &y) in source.iter().zip(labels) {
        for k in 0..d {
            means[y][k] += x[k];
        }
        counts[y] += 1;
    }
    for c in 0..classes {
        for k in 0..d {
            means[c][k] /= counts[c] as f64;
        }
    }
    query.iter().map(|q| means.iter().map(|m| dist(q, m)).collect()).collect()
}

/// Per-pair sum of marginal and conditional distances, normalised per row.
pub fn affinity_oracle(marginal: &[Vec<f64>], conditional: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = marginal.len();
    let mut out = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut total = 0.0;
        for i in 0..n {
            if i != j {
                out[j][i] = dist(&marginal[j], &marginal[i]) + dist(&conditional[j], &conditional[i]);
                total += out[j][i];
            }
        }
        for i in 0..n {
            if i != j {
                out[j][i] = if total > 0.0 { out[j][i] / total } else { 1.0 / (n - 1) as f64 };
            }
        }
    }
    out
}

/// Indices of the `k` smallest combined distances, ties to the lower index.
pub fn topk_oracle(marginal: &[Vec<f64>], conditional: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = marginal.len();
    (0..n)
        .map(|j| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&i| i != j)
                .map(|i| (dist(&marginal[j], &marginal[i]) + dist(&conditional[j], &conditional[i]), i))
                .collect();
            // simple insertion sort on (distance, index)
            for a in 1..cand.len() {
                let mut b = a;
                while b > 0 && (cand[b].0 < cand[b - 1].0 || (cand[b].0 == cand[b - 1].0 && cand[b].1 < cand[b - 1].1)) {
                    cand.swap(b, b - 1);
                    b -= 1;
                }
            }
            cand[..k].iter().map(|&(_, i)| i).collect()
        })
        .collect()
}

/// Majority vote with ties keeping the original label, then the mean
/// disagreement indicator.
pub fn topk_loss_oracle(y: &[usize], neighbours: &[Vec<usize>]) -> f64 {
    let mut disagree = 0;
    for j in 0..y.len() {
        let mut counts = std::collections::HashMap::new();
        for &i in &neighbours[j] {
            *counts.entry(y[i]).or_insert(0usize) += 1;
        }
        let best = *counts.values().max().unwrap();
        let winners: Vec<usize> = counts.iter().filter(|(_, &v)| v == best).map(|(&k, _)| k).collect();
        let voted = if winners.len() == 1 { winners[0] } else { y[j] };
        if voted != y[j] {
            disagree += 1;
        }
    }
    disagree as f64 / y.len() as f64
}

pub fn source_loss_oracle(logits: &[Vec<f64>], y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &c) in logits.iter().zip(y) {
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[c].exp() / denom).ln();
    }
    total / y.len() as f64
}

pub fn adversarial_loss_oracle(source: &[f64], target: &[f64]) -> f64 {
    let sigma = |z: f64| 1.0 / (1.0 + (-z.clamp(-30.0, 30.0)).exp());
    let s: f64 = source.iter().map(|&z| -(1.0 - sigma(z)).ln()).sum::<f64>() / source.len() as f64;
    let t: f64 = target.iter().map(|&z| -sigma(z).ln()).sum::<f64>() / target.len() as f64;
    s + t
}

pub fn joint_from(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> JointFeatures {
    let m = to_matrix(&random_rows(rng, n, d, 1.0));
    let c: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
    build_joint_features(m, ConditionalFeatures::new(to_matrix(&c)).unwrap()).unwrap()
}

/// Largest relative error between analytic gradients and central differences.
pub struct GradientCheck {
    pub source: f64,
    pub adversarial: f64,
    pub parameters: usize,
}

/// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator so
/// that gradients that vanish up to rounding are not divided by zero.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub fn check_gradients(seed: u64, widths: [usize; 3], classes: usize, dim: usize, batch: usize, step: f64) -> GradientCheck {
    let mut r = rng(seed);
    let s = joint_from(&mut r, batch, dim, classes);
    let t = joint_from(&mut r, batch, dim, classes);
    let y: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    // Glorot init has zero biases, which can pin a pre-activation exactly on
    // the ReLU kink; jitter every parameter to get a generic point.
    let mut params = EncoderParams::new(dim, classes, widths, seed);
    let jittered: Vec<f64> = params.to_flat().iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    params.set_flat(&jittered).unwrap();
    let analytic = loss_gradients(&params, &s, &y, &t).unwrap();
    let flat = params.to_flat();
    let g_source = analytic.source.to_flat();
    let g_adv = analytic.adversarial.to_flat();

    let losses = |values: &[f64]| {
        let mut p = params.clone();
        p.set_flat(values).unwrap();
        let g = loss_gradients(&p, &s, &y, &t).unwrap();
        (g.source_loss, g.adversarial_loss)
    };
    let (mut worst_s, mut worst_a) = (0.0f64, 0.0f64);
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += step;
        minus[i] -= step;
        let (sp, ap) = losses(&plus);
        let (sm, am) = losses(&minus);
        let num_s = (sp - sm) / (2.0 * step);
        let num_a = (ap - am) / (2.0 * step);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR);
        worst_s = worst_s.max(rel(g_source[i], num_s));
        worst_a = worst_a.max(rel(g_adv[i], num_a));
    }
    GradientCheck {
        source: worst_s,
        adversarial: worst_a,
        parameters: flat.len(),
    }
}
