//! Conditional features, joint features, and the mean-embedding discrepancies
//! between a source and a target domain.
//!
//! A sample's conditional feature vector holds its Euclidean distance to each
//! source class mean. Joint features pair those with the raw (marginal)
//! features; the encoder consumes them as a concatenation.

use serde::Serialize;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::numerics::{class_means, euclidean, pairwise_l2, Matrix};

/// N×C matrix of distances to the source class means.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFeatures(Matrix);

impl ConditionalFeatures {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("conditional features must be non-negative"));
        }
        Ok(ConditionalFeatures(values))
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn select_rows(&self, idx: &[usize]) -> ConditionalFeatures {
        ConditionalFeatures(self.0.select_rows(idx))
    }
}

/// Marginal and conditional feature blocks for the same samples.
#[derive(Clone, Debug, PartialEq)]
pub struct JointFeatures {
    marginal: Matrix,
    conditional: ConditionalFeatures,
}

impl JointFeatures {
    pub fn marginal(&self) -> &Matrix {
        &self.marginal
    }

    pub fn conditional(&self) -> &ConditionalFeatures {
        &self.conditional
    }

    pub fn len(&self) -> usize {
        self.marginal.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.marginal.rows() == 0
    }

    /// `[marginal | conditional]`.
    pub fn concatenated(&self) -> Matrix {
        self.marginal
            .hstack(self.conditional.values())
            .expect("row counts checked at construction")
    }

    pub fn select_rows(&self, idx: &[usize]) -> JointFeatures {
        JointFeatures {
            marginal: self.marginal.select_rows(idx),
            conditional: self.conditional.select_rows(idx),
        }
    }
}

pub fn build_joint_features(marginal: Matrix, conditional: ConditionalFeatures) -> Result<JointFeatures> {
    if marginal.rows() != conditional.len() {
        return Err(Error::shape(
            "build_joint_features",
            format!("{} marginal rows vs {} conditional rows", marginal.rows(), conditional.len()),
        ));
    }
    Ok(JointFeatures { marginal, conditional })
}

/// Distance of every query row to every source class mean.
///
/// With `query = source.features()` this gives the source conditional
/// features; with target features, the target ones.
pub fn conditional_features(query: &Matrix, source: &DomainDataset) -> Result<ConditionalFeatures> {
    let labels = source.require_labels("conditional_features")?;
    if query.cols() != source.dim() {
        return Err(Error::shape(
            "conditional_features",
            format!("query has {} columns, source has {}", query.cols(), source.dim()),
        ));
    }
    let means = class_means(source.features(), labels, source.num_classes())?;
    Ok(ConditionalFeatures(pairwise_l2(query, &means)?))
}

/// Joint features of `x` relative to the labelled `source`.
pub fn joint_features_for(x: &Matrix, source: &DomainDataset) -> Result<JointFeatures> {
    let cond = conditional_features(x, source)?;
    build_joint_features(x.clone(), cond)
}

fn mean_gap(a: &Matrix, b: &Matrix, op: &'static str) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::shape(op, format!("{} columns vs {} columns", a.cols(), b.cols())));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::shape(op, "empty domain"));
    }
    Ok(euclidean(&a.row_mean(), &b.row_mean()))
}

/// Distance between the domain means of the raw features.
pub fn marginal_discrepancy(xs: &Matrix, xt: &Matrix) -> Result<f64> {
    mean_gap(xs, xt, "marginal_discrepancy")
}

/// Distance between the domain means of the conditional features.
pub fn conditional_discrepancy(cs: &ConditionalFeatures, ct: &ConditionalFeatures) -> Result<f64> {
    mean_gap(cs.values(), ct.values(), "conditional_discrepancy")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JointDiscrepancy {
    pub marginal: f64,
    pub conditional: f64,
    pub total: f64,
}

pub fn joint_discrepancy(source: &JointFeatures, target: &JointFeatures) -> Result<JointDiscrepancy> {
    let marginal = marginal_discrepancy(&source.marginal, &target.marginal)?;
    let conditional = conditional_discrepancy(&source.conditional, &target.conditional)?;
    Ok(JointDiscrepancy {
        marginal,
        conditional,
        total: marginal + conditional,
    })
}

/// Which per-pair distance feeds the correct-prediction probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbabilityMode {
    Marginal,
    Conditional,
    /// Sum of the marginal and conditional distances.
    Joint,
}

/// The printed probability is a distance-mass ratio, so it grows as class
/// `c` gets farther from the target sample. `Complement` flips it into a
/// closeness score, `(1 − p) / (C − 1)`, which still sums to one over classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProbabilityReading {
    #[default]
    Printed,
    Complement,
}

/// For every target sample `j`, the share of its summed distance to all
/// source samples that falls on source samples of class `class`.
pub fn correct_prediction_probability(
    source: &DomainDataset,
    target_features: &Matrix,
    target_conditional: &ConditionalFeatures,
    class: usize,
    mode: ProbabilityMode,
) -> Result<Vec<f64>> {
    prediction_probability(
        source,
        target_features,
        target_conditional,
        class,
        mode,
        ProbabilityReading::Printed,
    )
}

pub fn prediction_probability(
    source: &DomainDataset,
    target_features: &Matrix,
    target_conditional: &ConditionalFeatures,
    class: usize,
    mode: ProbabilityMode,
    reading: ProbabilityReading,
) -> Result<Vec<f64>> {
    let labels = source.require_labels("correct_prediction_probability")?;
    let c_total = source.num_classes();
    if class >= c_total {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label: class,
            num_classes: c_total,
        });
    }
    let in_class = labels.iter().filter(|&&y| y == class).count();
    if in_class == 0 {
        return Err(Error::EmptyClass(class));
    }
    if target_conditional.len() != target_features.rows() {
        return Err(Error::shape(
            "correct_prediction_probability",
            "target marginal and conditional blocks differ in length",
        ));
    }

    let marginal = || pairwise_l2(target_features, source.features());
    let conditional = || -> Result<Matrix> {
        let cs = conditional_features(source.features(), source)?;
        pairwise_l2(target_conditional.values(), cs.values())
    };
    let dist = match mode {
        ProbabilityMode::Marginal => marginal()?,
        ProbabilityMode::Conditional => conditional()?,
        ProbabilityMode::Joint => marginal()?.add(&conditional()?)?,
    };

    let n_s = source.len() as f64;
    let out = (0..dist.rows())
        .map(|j| {
            let row = dist.row(j);
            let total: f64 = row.iter().sum();
            let p = if total > 0.0 {
                let part: f64 = row.iter().zip(labels).filter(|(_, &y)| y == class).map(|(d, _)| d).sum();
                part / total
            } else {
                // coincides with every source sample: uniform 1/N_S per pair
                in_class as f64 / n_s
            };
            match reading {
                ProbabilityReading::Printed => p,
                ProbabilityReading::Complement if c_total > 1 => (1.0 - p) / (c_total - 1) as f64,
                ProbabilityReading::Complement => 1.0,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    fn labelled(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> DomainDataset {
        let y = (0..n).map(|i| i % c).collect();
        DomainDataset::new(random(rng, n, d), Some(y), c).unwrap()
    }

    #[test]
    fn distance_to_single_mean() {
        let src = DomainDataset::new(Matrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap(), Some(vec![0, 0]), 1).unwrap();
        let q = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let cf = conditional_features(&q, &src).unwrap();
        assert_eq!(cf.values().get(0, 0), 5.0);
        assert_eq!(cf.values().get(1, 0), 0.0);
    }

    #[test]
    fn conditional_features_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = labelled(&mut rng, 40, 4, 3);
        let q = random(&mut rng, 10, 4);
        let cf = conditional_features(&q, &src).unwrap();
        let y = src.labels().unwrap();
        for c in 0..3 {
            let mut mean = vec![0.0; 4];
            let mut n = 0.0;
            for i in 0..40 {
                if y[i] == c {
                    n += 1.0;
                    for k in 0..4 {
                        mean[k] += src.features().get(i, k);
                    }
                }
            }
            for j in 0..10 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += (mean[k] / n - q.get(j, k)).powi(2);
                }
                assert!((cf.values().get(j, c) - s.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_features_need_labels() {
        let src = DomainDataset::unlabeled(Matrix::zeros(2, 2), 2).unwrap();
        assert!(conditional_features(&Matrix::zeros(1, 2), &src).is_err());
    }

    #[test]
    fn marginal_and_conditional_simple() {
        let a = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(marginal_discrepancy(&a, &b).unwrap(), 5.0);
        assert_eq!(marginal_discrepancy(&a, &a).unwrap(), 0.0);
        let cs = ConditionalFeatures::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        let ct = ConditionalFeatures::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(conditional_discrepancy(&cs, &ct).unwrap(), 2f64.sqrt());
        assert_eq!(conditional_discrepancy(&cs, &cs).unwrap(), 0.0);
        assert!(marginal_discrepancy(&a, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn marginal_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = random(&mut rng, 30, 8);
        let xt = random(&mut rng, 50, 8);
        let mut gap = 0.0;
        for k in 0..8 {
            let ms: f64 = (0..30).map(|i| xs.get(i, k)).sum::<f64>() / 30.0;
            let mt: f64 = (0..50).map(|i| xt.get(i, k)).sum::<f64>() / 50.0;
            gap += (ms - mt).powi(2);
        }
        assert!((marginal_discrepancy(&xs, &xt).unwrap() - gap.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn conditional_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cs = random(&mut rng, 12, 3).map(f64::abs);
        let ct = random(&mut rng, 7, 3).map(f64::abs);
        let mut gap = 0.0;
        for k in 0..3 {
            let ms: f64 = (0..12).map(|i| cs.get(i, k)).sum::<f64>() / 12.0;
            let mt: f64 = (0..7).map(|i| ct.get(i, k)).sum::<f64>() / 7.0;
            gap += (ms - mt).powi(2);
        }
        let got = conditional_discrepancy(
            &ConditionalFeatures::new(cs).unwrap(),
            &ConditionalFeatures::new(ct).unwrap(),
        )
        .unwrap();
        assert!((got - gap.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn joint_discrepancy_cases() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let a = build_joint_features(m.clone(), ConditionalFeatures::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap()).unwrap();
        let b = build_joint_features(m, ConditionalFeatures::new(Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).unwrap()).unwrap();
        assert_eq!(joint_discrepancy(&a, &a).unwrap().total, 0.0);
        let jd = joint_discrepancy(&a, &b).unwrap();
        assert_eq!(jd.marginal, 0.0);
        assert_eq!(jd.total, 2f64.sqrt());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = labelled(&mut rng, 20, 3, 2);
        let xt = random(&mut rng, 15, 3);
        let js = joint_features_for(src.features(), &src).unwrap();
        let jt = joint_features_for(&xt, &src).unwrap();
        let jd = joint_discrepancy(&js, &jt).unwrap();
        let m = marginal_discrepancy(src.features(), &xt).unwrap();
        let c = conditional_discrepancy(js.conditional(), jt.conditional()).unwrap();
        assert_eq!(jd.total, m + c);
    }

    #[test]
    fn build_joint_checks_rows() {
        let m = Matrix::zeros(2, 3);
        let c = ConditionalFeatures::new(Matrix::zeros(2, 2)).unwrap();
        let j = build_joint_features(m.clone(), c.clone()).unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j.marginal(), &m);
        assert_eq!(j.conditional(), &c);
        assert_eq!(j.concatenated().shape(), (2, 5));
        let c3 = ConditionalFeatures::new(Matrix::zeros(3, 2)).unwrap();
        assert!(build_joint_features(m, c3).is_err());
    }

    #[test]
    fn single_class_probability_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = labelled(&mut rng, 6, 2, 1);
        let xt = random(&mut rng, 4, 2);
        let ct = conditional_features(&xt, &src).unwrap();
        for mode in [ProbabilityMode::Marginal, ProbabilityMode::Conditional, ProbabilityMode::Joint] {
            let p = correct_prediction_probability(&src, &xt, &ct, 0, mode).unwrap();
            assert!(p.iter().all(|&v| v == 1.0), "{mode:?}: {p:?}");
        }
    }

    #[test]
    fn equidistant_singletons_split_evenly() {
        let src = DomainDataset::new(Matrix::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap(), Some(vec![0, 1]), 2).unwrap();
        let xt = Matrix::from_rows(&[[0.0, 3.0]]).unwrap();
        let ct = conditional_features(&xt, &src).unwrap();
        let p = correct_prediction_probability(&src, &xt, &ct, 0, ProbabilityMode::Marginal).unwrap();
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn coincident_target_gets_uniform_mass() {
        let src = DomainDataset::new(Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap(), Some(vec![0, 0, 1]), 2).unwrap();
        let xt = Matrix::from_rows(&[[1.0]]).unwrap();
        let ct = conditional_features(&xt, &src).unwrap();
        let p = correct_prediction_probability(&src, &xt, &ct, 0, ProbabilityMode::Joint).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn joint_probability_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = labelled(&mut rng, 15, 3, 3);
        let xt = random(&mut rng, 4, 3);
        let ct = conditional_features(&xt, &src).unwrap();
        let cs = conditional_features(src.features(), &src).unwrap();
        let y = src.labels().unwrap();
        for c in 0..3 {
            let p = correct_prediction_probability(&src, &xt, &ct, c, ProbabilityMode::Joint).unwrap();
            for j in 0..4 {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..15 {
                    let d = euclidean(src.features().row(i), xt.row(j)) + euclidean(cs.values().row(i), ct.values().row(j));
                    den += d;
                    if y[i] == c {
                        num += d;
                    }
                }
                assert!((p[j] - num / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complement_reading_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src = labelled(&mut rng, 12, 2, 3);
        let xt = random(&mut rng, 5, 2);
        let ct = conditional_features(&xt, &src).unwrap();
        let mut total = vec![0.0; 5];
        for c in 0..3 {
            let p = prediction_probability(&src, &xt, &ct, c, ProbabilityMode::Joint, ProbabilityReading::Complement).unwrap();
            total.iter_mut().zip(&p).for_each(|(t, v)| *t += v);
        }
        assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn conditional_features_translation_invariant(seed in 0u64..500, shift in prop::collection::vec(-50.0f64..50.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = labelled(&mut rng, 12, 3, 3);
            let q = random(&mut rng, 5, 3);
            let moved = |m: &Matrix| Matrix::from_rows(
                &m.iter_rows().map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>()).collect::<Vec<_>>()
            ).unwrap();
            let src2 = src.with_features(moved(src.features())).unwrap();
            let a = conditional_features(&q, &src).unwrap();
            let b = conditional_features(&moved(&q), &src2).unwrap();
            for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn identical_domains_have_zero_joint_discrepancy(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = labelled(&mut rng, 10, 4, 2);
            let j = joint_features_for(src.features(), &src).unwrap();
            prop_assert_eq!(joint_discrepancy(&j, &j.clone()).unwrap().total, 0.0);
        }

        #[test]
        fn probabilities_partition_over_classes(seed in 0u64..500, c in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = labelled(&mut rng, 4 * c + 3, 3, c);
            let xt = random(&mut rng, 6, 3);
            let ct = conditional_features(&xt, &src).unwrap();
            for mode in [ProbabilityMode::Marginal, ProbabilityMode::Conditional, ProbabilityMode::Joint] {
                let mut total = vec![0.0; 6];
                for class in 0..c {
                    let p = correct_prediction_probability(&src, &xt, &ct, class, mode).unwrap();
                    for (t, v) in total.iter_mut().zip(&p) {
                        prop_assert!((0.0..=1.0).contains(v));
                        *t += v;
                    }
                }
                prop_assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-9));
            }
        }

        #[test]
        fn marginal_scales_linearly(seed in 0u64..500, s in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&mut rng, 7, 3);
            let b = random(&mut rng, 9, 3);
            let base = marginal_discrepancy(&a, &b).unwrap();
            let scaled = marginal_discrepancy(&a.scale(s), &b.scale(s)).unwrap();
            prop_assert!((scaled - s * base).abs() <= 1e-12 * (1.0 + s * base));
        }
    }
}
