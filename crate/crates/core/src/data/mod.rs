//! Source/target datasets, feature-file I/O and the synthetic benchmark.

mod io;
mod synth;

pub use io::{load_feature_file, load_labels, save_feature_file, save_labels, FEATURE_MAGIC};
pub use synth::{synth_shifted_domains, SynthParams};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A feature matrix with optional class labels. Source datasets carry labels;
/// target datasets may carry ground truth, which is only ever used for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    features: Matrix,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl DomainDataset {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid(format!(
                "dataset needs at least one sample and one feature, got {:?}",
                features.shape()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        if let Some(y) = &labels {
            if y.len() != features.rows() {
                return Err(Error::shape(
                    "DomainDataset::new",
                    format!("{} labels for {} samples", y.len(), features.rows()),
                ));
            }
            check_labels(y, num_classes)?;
        }
        Ok(DomainDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn unlabeled(features: Matrix, num_classes: usize) -> Result<Self> {
        DomainDataset::new(features, None, num_classes)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an error naming `what` when absent.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("{what} requires a labelled dataset")))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Same dataset with its labels dropped.
    pub fn without_labels(&self) -> DomainDataset {
        DomainDataset {
            features: self.features.clone(),
            labels: None,
            num_classes: self.num_classes,
        }
    }

    pub fn with_features(&self, features: Matrix) -> Result<DomainDataset> {
        DomainDataset::new(features, self.labels.clone(), self.num_classes)
    }
}

pub(crate) fn check_labels(y: &[usize], num_classes: usize) -> Result<()> {
    match y.iter().position(|&l| l >= num_classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: y[index],
            num_classes,
        }),
        None => Ok(()),
    }
}

/// Per-column z-scoring with statistics fitted on `fit` and applied to each
/// matrix in `apply`. Zero-variance columns are only centred.
pub fn zscore(fit: &Matrix, apply: &[&Matrix]) -> Result<Vec<Matrix>> {
    let mean = fit.row_mean();
    let n = fit.rows() as f64;
    let mut std = vec![0.0; fit.cols()];
    for r in fit.iter_rows() {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    apply
        .iter()
        .map(|m| {
            if m.cols() != fit.cols() {
                return Err(Error::shape(
                    "zscore",
                    format!("{} columns vs {} fitted", m.cols(), fit.cols()),
                ));
            }
            let mut out = (*m).clone();
            for r in 0..out.rows() {
                for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - mean[c]) / std[c];
                }
            }
            Ok(out)
        })
        .collect()
}
