use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Minimum in-plane distance between neighbouring class means, in units of
/// the cluster σ.
pub const MIN_MEAN_SEPARATION: f64 = 6.0;

/// Class means sit on an arc of this radius in the first two coordinates,
/// consecutive classes this many degrees apart. A 30° rotation then carries
/// each target cluster most of the way to its neighbour's source region.
const RING_RADIUS: f64 = 10.0;
const CLASS_GAP_DEG: f64 = 50.0;
/// Spread of the class means along the remaining coordinates.
const OFF_PLANE_SPREAD: f64 = 1.0;

/// Parameters of the synthetic shifted-domain benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub rotation_deg: f64,
    pub shift_scale: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            num_classes: 4,
            dim: 20,
            per_class: 50,
            rotation_deg: 30.0,
            shift_scale: 2.0,
        }
    }
}

/// Draws `C` unit-variance Gaussian clusters as the source domain and maps
/// the very same samples through a rotation of the first two coordinates
/// plus a global shift of norm `shift_scale` to form the target domain.
///
/// The target keeps its ground-truth labels so runs can be scored; nothing
/// in the pipeline reads them.
pub fn synth_shifted_domains(p: &SynthParams) -> Result<(DomainDataset, DomainDataset)> {
    if p.num_classes < 2 || p.dim < 2 || p.per_class < 5 {
        return Err(Error::invalid(format!(
            "synthetic benchmark needs C >= 2, d >= 2, n >= 5 (got C={}, d={}, n={})",
            p.num_classes, p.dim, p.per_class
        )));
    }
    if !p.rotation_deg.is_finite() || !p.shift_scale.is_finite() || p.shift_scale < 0.0 {
        return Err(Error::invalid("rotation and shift must be finite, shift non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let means = draw_means(&mut rng, p.num_classes, p.dim);

    let n = p.num_classes * p.per_class;
    let mut source = Vec::with_capacity(n * p.dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..p.per_class {
            source.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }

    let mut shift: Vec<f64> = (0..p.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
    shift.iter_mut().for_each(|v| *v *= p.shift_scale / norm);

    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let mut target = source.clone();
    for row in target.chunks_exact_mut(p.dim) {
        if p.rotation_deg != 0.0 {
            let (x, y) = (row[0], row[1]);
            row[0] = cos * x - sin * y;
            row[1] = sin * x + cos * y;
        }
        if p.shift_scale != 0.0 {
            row.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
        }
    }

    let source = DomainDataset::new(Matrix::new(n, p.dim, source)?, Some(labels.clone()), p.num_classes)?;
    let target = DomainDataset::new(Matrix::new(n, p.dim, target)?, Some(labels), p.num_classes)?;
    Ok((source, target))
}

fn draw_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let step = CLASS_GAP_DEG.to_radians().min(std::f64::consts::TAU / classes as f64);
    let radius = RING_RADIUS.max(MIN_MEAN_SEPARATION / (2.0 * (step / 2.0).sin()));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..classes)
        .map(|c| {
            let angle = phase + step * c as f64;
            let mut m = vec![radius * angle.cos(), radius * angle.sin()];
            m.extend((2..dim).map(|_| OFF_PLANE_SPREAD * rng.sample::<f64, _>(StandardNormal)));
            m
        })
        .collect()
}
