//! End-to-end orchestration: joint features, encoder training, top-K
//! correction, distribution alignment, and the run report.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::alignment::{align, AlignParams, AlignRound};
use crate::config::{Component, NeighborCount, PipelineConfig};
use crate::data::{save_labels, zscore, DomainDataset};
use crate::discrepancy::{build_joint_features, joint_discrepancy, joint_features_for, JointDiscrepancy, JointFeatures};
use crate::encoder::{forward_eval, predict, train, EncoderParams, TrainState, TrainingLog};
use crate::error::{Error, Result, StageContext};
use crate::topk::{affinity_matrix, majority_relabel, topk_labels, topk_loss, tune_k};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EncoderSummary {
    pub epochs: usize,
    pub final_source_accuracy: f64,
    pub final_source_loss: f64,
    pub final_adversarial_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopkSummary {
    pub k: usize,
    /// Loss at each candidate K, `losses[k - 1]`; empty when K was fixed.
    pub losses: Vec<f64>,
    /// Top-K loss of the encoder predictions at the chosen K.
    pub loss: f64,
    pub changed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub input: JointDiscrepancy,
    /// On `[block-3 code | conditional features]`, before training.
    pub hidden_initial: JointDiscrepancy,
    /// On `[block-3 code | conditional features]`, after training.
    pub hidden_trained: JointDiscrepancy,
}

/// Target accuracy after each stage; present only when truth was supplied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub encoder: f64,
    pub topk: Option<f64>,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub source_samples: usize,
    pub target_samples: usize,
    pub encoder: EncoderSummary,
    pub training: TrainingLog,
    pub encoder_predictions: Vec<usize>,
    pub topk: Option<TopkSummary>,
    pub alignment: Option<Vec<AlignRound>>,
    pub discrepancy: DiscrepancyReport,
    pub predictions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn target_accuracy(&self) -> Option<f64> {
        self.evaluation.as_ref().map(|e| e.final_accuracy)
    }

    /// Writes `report.json`, `predictions.txt`, `training_log.csv`, and, when
    /// those stages ran, `topk_losses.csv` and `alignment.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))
        };
        write("report.json", self.to_json() + "\n")?;
        write("training_log.csv", self.training.to_csv())?;
        save_labels(&self.predictions, dir.join("predictions.txt"))?;
        if let Some(t) = self.topk.as_ref().filter(|t| !t.losses.is_empty()) {
            let mut s = String::from("k,loss\n");
            for (i, l) in t.losses.iter().enumerate() {
                s.push_str(&format!("{},{}\n", i + 1, l));
            }
            write("topk_losses.csv", s)?;
        }
        if let Some(rounds) = &self.alignment {
            let mut s = String::from("round,mu,changed\n");
            for r in rounds {
                s.push_str(&format!("{},{},{}\n", r.round, r.mu, r.changed));
            }
            write("alignment.csv", s)?;
        }
        Ok(())
    }
}

/// Fraction of positions where `pred` and `truth` agree.
pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("evaluate", format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("evaluate needs at least one label"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

fn check_finite(d: &JointDiscrepancy, what: &'static str) -> Result<()> {
    if [d.marginal, d.conditional, d.total].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteMetric(what))
    }
}

/// Joint discrepancy on the representation the heads read: the block-3 code
/// alongside the unchanged conditional features.
fn hidden_discrepancy(params: &EncoderParams, source: &JointFeatures, target: &JointFeatures) -> Result<JointDiscrepancy> {
    let width = params.widths()[2];
    let code = |j: &JointFeatures| -> Result<JointFeatures> {
        let h = forward_eval(params, j)?.hidden.column_range(0, width);
        build_joint_features(h, j.conditional().clone())
    };
    joint_discrepancy(&code(source)?, &code(target)?)
}

/// Runs the full pipeline. Target labels, if present, are used only to fill
/// [`RunReport::evaluation`].
pub fn run_cajnet(source: &DomainDataset, target: &DomainDataset, config: &PipelineConfig) -> Result<RunReport> {
    config.validate().stage("config")?;
    let ys = source.require_labels("run_cajnet").stage("input")?.to_vec();
    let classes = source.num_classes();
    if target.num_classes() != classes {
        return Err(Error::shape("run_cajnet", "source and target disagree on the class count")).stage("input");
    }
    if source.dim() != target.dim() {
        return Err(Error::shape(
            "run_cajnet",
            format!("source has {} features, target {}", source.dim(), target.dim()),
        ))
        .stage("input");
    }
    let truth = target.labels().map(<[usize]>::to_vec);
    let target = target.without_labels();

    let (source, target) = if config.normalize_features {
        let z = zscore(source.features(), &[source.features(), target.features()]).stage("normalize")?;
        let mut z = z.into_iter();
        let s = source.with_features(z.next().expect("two outputs"))?;
        let t = target.with_features(z.next().expect("two outputs"))?;
        (s, t)
    } else {
        (source.clone(), target)
    };

    let js = joint_features_for(source.features(), &source).stage("joint_features")?;
    let jt = joint_features_for(target.features(), &source).stage("joint_features")?;
    let input_discrepancy = joint_discrepancy(&js, &jt).stage("discrepancy")?;

    let state = TrainState::initialise(source.dim(), classes, config);
    let hidden_initial = hidden_discrepancy(&state.params, &js, &jt).stage("discrepancy")?;
    let state = train(state, &js, &ys, &jt, config).stage("encoder")?;
    let hidden_trained = hidden_discrepancy(&state.params, &js, &jt).stage("discrepancy")?;
    let last = state.log.records.last();
    let encoder = EncoderSummary {
        epochs: state.epoch,
        final_source_accuracy: last.map_or(f64::NAN, |r| r.source_accuracy),
        final_source_loss: last.map_or(f64::NAN, |r| r.source_loss),
        final_adversarial_loss: last.map_or(f64::NAN, |r| r.adversarial_loss),
    };
    let encoder_predictions = predict(&state, &jt).stage("predict")?.labels;

    let mut labels = encoder_predictions.clone();
    let mut topk = None;
    let mut klabels = None;
    if config.is_enabled(Component::Topk) && jt.len() >= 2 {
        let cap = jt.len() - 1;
        let (k, losses) = match config.k {
            NeighborCount::Auto { max } => {
                let sel = tune_k(jt.marginal(), jt.conditional(), &labels, max.min(cap)).stage("topk")?;
                (sel.best_k, sel.losses)
            }
            NeighborCount::Fixed(k) => (k.min(cap), Vec::new()),
        };
        let a = affinity_matrix(jt.marginal(), jt.conditional()).stage("topk")?;
        let kl = topk_labels(&a, k).stage("topk")?;
        let loss = topk_loss(&labels, &kl).stage("topk")?;
        let relabelled = majority_relabel(&labels, &kl).stage("topk")?;
        let changed = relabelled.iter().zip(&labels).filter(|(a, b)| a != b).count();
        labels = relabelled;
        topk = Some(TopkSummary { k, losses, loss, changed });
        klabels = Some(kl);
    }
    let topk_predictions = topk.as_ref().map(|_| labels.clone());

    let mut alignment = None;
    if config.is_enabled(Component::Alignment) && config.alignment_rounds > 0 {
        let xs = js.concatenated();
        let xt = jt.concatenated();
        let src = DomainDataset::new(xs, Some(ys.clone()), classes).stage("alignment")?;
        let params = AlignParams::from(config);
        let out = align(&src, &xt, &labels, &params, klabels.as_ref()).stage("alignment")?;
        labels = out.labels;
        alignment = Some(out.rounds);
    }

    for (d, what) in [
        (&input_discrepancy, "input discrepancy"),
        (&hidden_initial, "initial hidden discrepancy"),
        (&hidden_trained, "trained hidden discrepancy"),
    ] {
        check_finite(d, what).stage("report")?;
    }

    let evaluation = match &truth {
        Some(t) => Some(Evaluation {
            encoder: evaluate(&encoder_predictions, t)?,
            topk: topk_predictions.as_deref().map(|p| evaluate(p, t)).transpose()?,
            final_accuracy: evaluate(&labels, t)?,
        }),
        None => None,
    };

    Ok(RunReport {
        config: config.clone(),
        source_samples: source.len(),
        target_samples: target.len(),
        encoder,
        training: state.log,
        encoder_predictions,
        topk,
        alignment,
        discrepancy: DiscrepancyReport {
            input: input_discrepancy,
            hidden_initial,
            hidden_trained,
        },
        predictions: labels,
        evaluation,
    })
}
