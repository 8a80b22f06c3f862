//! Shared encoder with a class-label head and a domain discriminator head.
//!
//! Three dense blocks (dense → ReLU → dropout) map the marginal features to a
//! 64-wide code; the conditional features are appended to that code and the
//! result feeds both heads. The class head descends the cross-entropy, the
//! domain head descends the discrimination loss, and the blocks descend the
//! cross-entropy while ascending the discrimination loss scaled by τ.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::discrepancy::JointFeatures;
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix};

pub const DEFAULT_WIDTHS: [usize; 3] = [512, 128, 64];

/// Domain logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Fully connected layer computing `x · weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs × outputs`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Dense {
            weight: Matrix::from_raw(inputs, outputs, data),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, false, &self.weight, false, 1.0, &mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// Parameters of the three encoder blocks and both heads. Also used as the
/// container for gradients and update vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub blocks: [Dense; 3],
    pub class_head: Dense,
    pub domain_head: Dense,
}

impl EncoderParams {
    pub fn new(input_dim: usize, num_classes: usize, widths: [usize; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = widths;
        EncoderParams {
            blocks: [
                Dense::glorot(input_dim, w1, &mut rng),
                Dense::glorot(w1, w2, &mut rng),
                Dense::glorot(w2, w3, &mut rng),
            ],
            class_head: Dense::glorot(w3 + num_classes, num_classes, &mut rng),
            domain_head: Dense::glorot(w3 + num_classes, 1, &mut rng),
        }
    }

    pub fn zeros(input_dim: usize, num_classes: usize, widths: [usize; 3]) -> Self {
        let [w1, w2, w3] = widths;
        EncoderParams {
            blocks: [Dense::zeros(input_dim, w1), Dense::zeros(w1, w2), Dense::zeros(w2, w3)],
            class_head: Dense::zeros(w3 + num_classes, num_classes),
            domain_head: Dense::zeros(w3 + num_classes, 1),
        }
    }

    fn zeros_like(&self) -> Self {
        EncoderParams::zeros(self.input_dim(), self.num_classes(), self.widths())
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.class_head.outputs()
    }

    pub fn widths(&self) -> [usize; 3] {
        [self.blocks[0].outputs(), self.blocks[1].outputs(), self.blocks[2].outputs()]
    }

    pub fn layers(&self) -> [&Dense; 5] {
        let [a, b, c] = &self.blocks;
        [a, b, c, &self.class_head, &self.domain_head]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 5] {
        let [a, b, c] = &mut self.blocks;
        [a, b, c, &mut self.class_head, &mut self.domain_head]
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// All parameters in a fixed order: per layer, weights then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape(
                "EncoderParams::set_flat",
                format!("{} values for {} parameters", values.len(), self.num_params()),
            ));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&values[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &EncoderParams) {
        for (l, o) in self.layers_mut().into_iter().zip(other.layers()) {
            for (a, b) in l.weight.as_mut_slice().iter_mut().zip(o.weight.as_slice()) {
                *a += alpha * b;
            }
            for (a, b) in l.bias.iter_mut().zip(&o.bias) {
                *a += alpha * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, marginal: &Matrix, conditional: &Matrix) -> Result<()> {
        if marginal.cols() != self.input_dim() {
            return Err(Error::shape(
                "encoder forward",
                format!("marginal width {} vs encoder input {}", marginal.cols(), self.input_dim()),
            ));
        }
        if conditional.cols() != self.num_classes() {
            return Err(Error::shape(
                "encoder forward",
                format!("conditional width {} vs {} classes", conditional.cols(), self.num_classes()),
            ));
        }
        if marginal.rows() != conditional.rows() {
            return Err(Error::shape("encoder forward", "marginal/conditional row mismatch"));
        }
        Ok(())
    }

    fn forward_cached(
        &self,
        marginal: &Matrix,
        conditional: &Matrix,
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Cache {
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(3);
        let mut masks = Vec::with_capacity(3);
        let mut x = marginal.clone();
        for block in &self.blocks {
            let z = block.forward(&x);
            let mut a = z.map(|v| v.max(0.0));
            let mask = dropout.as_mut().map(|(rng, rate)| {
                let keep = 1.0 - *rate;
                let m: Vec<f64> = (0..a.as_slice().len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                a.as_mut_slice().iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                m
            });
            post.push(std::mem::replace(&mut x, a));
            pre.push(z);
            masks.push(mask);
        }
        let hidden = x.hstack(conditional).expect("rows checked");
        let class_logits = self.class_head.forward(&hidden);
        let domain_logits = self.domain_head.forward(&hidden);
        Cache {
            inputs: post,
            pre,
            masks,
            hidden,
            class_logits,
            domain_logits,
        }
    }

    /// Gradients of the heads from the given logit gradients; the blocks
    /// receive `d_class · W_cᵀ + block_domain_weight · d_domain · W_dᵀ`.
    fn backward(&self, cache: &Cache, d_class: &Matrix, d_domain: &Matrix, block_domain_weight: f64) -> EncoderParams {
        let mut g = self.zeros_like();
        let head_grad = |d: &Matrix, out: &mut Dense| {
            gemm(1.0, &cache.hidden, true, d, false, 0.0, &mut out.weight);
            for r in d.iter_rows() {
                out.bias.iter_mut().zip(r).for_each(|(b, v)| *b += v);
            }
        };
        head_grad(d_class, &mut g.class_head);
        head_grad(d_domain, &mut g.domain_head);

        let mut dh = Matrix::zeros(cache.hidden.rows(), cache.hidden.cols());
        gemm(1.0, d_class, false, &self.class_head.weight, true, 0.0, &mut dh);
        if block_domain_weight != 0.0 {
            gemm(block_domain_weight, d_domain, false, &self.domain_head.weight, true, 1.0, &mut dh);
        }
        let mut da = dh.column_range(0, self.widths()[2]);

        for l in (0..3).rev() {
            let mut dz = da;
            if let Some(mask) = &cache.masks[l] {
                dz.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            for (v, z) in dz.as_mut_slice().iter_mut().zip(cache.pre[l].as_slice()) {
                if *z <= 0.0 {
                    *v = 0.0;
                }
            }
            let gl = &mut g.blocks[l];
            gemm(1.0, &cache.inputs[l], true, &dz, false, 0.0, &mut gl.weight);
            for r in dz.iter_rows() {
                gl.bias.iter_mut().zip(r).for_each(|(b, v)| *b += v);
            }
            if l > 0 {
                let mut prev = Matrix::zeros(dz.rows(), self.blocks[l].inputs());
                gemm(1.0, &dz, false, &self.blocks[l].weight, true, 0.0, &mut prev);
                da = prev;
            } else {
                break;
            }
        }
        g
    }
}

struct Cache {
    /// Input to each block.
    inputs: Vec<Matrix>,
    /// Pre-activation of each block.
    pre: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
    hidden: Matrix,
    class_logits: Matrix,
    domain_logits: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Outputs of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub class_logits: Matrix,
    /// B×1
    pub domain_logits: Matrix,
    /// `[block-3 output | conditional features]`
    pub hidden: Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub source_loss: f64,
    pub adversarial_loss: f64,
    pub source_accuracy: f64,
    /// Accuracy of the domain head at telling source from target (eval mode).
    pub domain_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,source_loss,adversarial_loss,source_accuracy,domain_accuracy\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.source_loss, r.adversarial_loss, r.source_accuracy, r.domain_accuracy
            ));
        }
        out
    }
}

/// Encoder parameters plus the seeded stream used for batch order and dropout.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: EncoderParams,
    pub seed: u64,
    pub epoch: usize,
    pub dropout: f64,
    pub mode: Mode,
    pub log: TrainingLog,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: EncoderParams, seed: u64, dropout: f64) -> Self {
        TrainState {
            params,
            seed,
            epoch: 0,
            dropout,
            mode: Mode::Eval,
            log: TrainingLog::default(),
            // offset so the stream differs from the one used for initialisation
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    /// Fresh Glorot-initialised encoder for the given shapes.
    pub fn initialise(input_dim: usize, num_classes: usize, config: &PipelineConfig) -> Self {
        let params = EncoderParams::new(input_dim, num_classes, config.encoder_widths, config.seed);
        TrainState::new(params, config.seed, config.dropout)
    }

    /// One forward pass. Dropout masks are drawn only in [`Mode::Train`].
    pub fn forward(&mut self, joint: &JointFeatures) -> Result<Forward> {
        let (m, c) = (joint.marginal(), joint.conditional().values());
        self.params.check_input(m, c)?;
        let dropout = match self.mode {
            Mode::Train if self.dropout > 0.0 => Some((&mut self.rng, self.dropout)),
            _ => None,
        };
        let cache = self.params.forward_cached(m, c, dropout);
        Ok(Forward {
            class_logits: cache.class_logits,
            domain_logits: cache.domain_logits,
            hidden: cache.hidden,
        })
    }
}

/// Eval-mode forward pass.
pub fn forward_eval(params: &EncoderParams, joint: &JointFeatures) -> Result<Forward> {
    let (m, c) = (joint.marginal(), joint.conditional().values());
    params.check_input(m, c)?;
    let cache = params.forward_cached(m, c, None);
    Ok(Forward {
        class_logits: cache.class_logits,
        domain_logits: cache.domain_logits,
        hidden: cache.hidden,
    })
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>() - 1.0;
    let lse = max + rest.ln_1p();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let ls = log_softmax_row(logits.row(r));
        out.row_mut(r).iter_mut().zip(ls).for_each(|(o, v)| *o = v.exp());
    }
    out
}

/// Mean cross-entropy of `labels` under softmax(`class_logits`).
pub fn source_loss(class_logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if class_logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::shape(
            "source_loss",
            format!("{} logit rows vs {} labels", class_logits.rows(), labels.len()),
        ));
    }
    crate::data::check_labels(labels, class_logits.cols())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -log_softmax_row(class_logits.row(i))[y])
        .sum();
    Ok(total / labels.len() as f64)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `−mean_S log(1 − σ(z)) − mean_T log σ(z)`: the discriminator outputs the
/// probability that a sample is from the target domain.
pub fn adversarial_loss(source_logits: &[f64], target_logits: &[f64]) -> Result<f64> {
    if source_logits.is_empty() || target_logits.is_empty() {
        return Err(Error::invalid("adversarial_loss needs samples from both domains"));
    }
    let clamp = |z: f64| z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let s: f64 = source_logits.iter().map(|&z| softplus(clamp(z))).sum::<f64>() / source_logits.len() as f64;
    let t: f64 = target_logits.iter().map(|&z| softplus(-clamp(z))).sum::<f64>() / target_logits.len() as f64;
    Ok(s + t)
}

/// d L_S / d logits for the first `labels.len()` rows; remaining rows zero.
fn source_loss_grad(class_logits: &Matrix, labels: &[usize]) -> Matrix {
    let mut g = Matrix::zeros(class_logits.rows(), class_logits.cols());
    let n = labels.len() as f64;
    for (i, &y) in labels.iter().enumerate() {
        let ls = log_softmax_row(class_logits.row(i));
        let row = g.row_mut(i);
        for (c, v) in ls.into_iter().enumerate() {
            row[c] = v.exp() / n;
        }
        row[y] -= 1.0 / n;
    }
    g
}

/// d L_A / d logits; the first `n_source` rows are source samples.
fn adversarial_loss_grad(domain_logits: &Matrix, n_source: usize) -> Matrix {
    let n_target = domain_logits.rows() - n_source;
    let data = domain_logits
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if z.abs() > LOGIT_CLAMP {
                return 0.0;
            }
            if i < n_source {
                sigmoid(z) / n_source as f64
            } else {
                -sigmoid(-z) / n_target as f64
            }
        })
        .collect();
    Matrix::from_raw(domain_logits.rows(), 1, data)
}

fn stack(source: &JointFeatures, target: &JointFeatures) -> Result<(Matrix, Matrix)> {
    Ok((
        source.marginal().vstack(target.marginal())?,
        source.conditional().values().vstack(target.conditional().values())?,
    ))
}

/// Loss values and their separate parameter gradients on one batch.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub source_loss: f64,
    pub adversarial_loss: f64,
    /// ∂L_S for every parameter (zero on the domain head).
    pub source: EncoderParams,
    /// ∂L_A for every parameter (zero on the class head).
    pub adversarial: EncoderParams,
}

/// Eval-mode losses and gradients for a source batch with labels and a target batch.
pub fn loss_gradients(
    params: &EncoderParams,
    source: &JointFeatures,
    labels: &[usize],
    target: &JointFeatures,
) -> Result<LossGradients> {
    let (m, c) = stack(source, target)?;
    params.check_input(&m, &c)?;
    let n_s = source.len();
    let cache = params.forward_cached(&m, &c, None);
    let source_logits = cache.class_logits.select_rows(&(0..n_s).collect::<Vec<_>>());
    let ls = source_loss(&source_logits, labels)?;
    let dl = cache.domain_logits.as_slice();
    let la = adversarial_loss(&dl[..n_s], &dl[n_s..])?;

    let d_class = source_loss_grad(&cache.class_logits, labels);
    let d_domain = adversarial_loss_grad(&cache.domain_logits, n_s);
    let zero_class = Matrix::zeros(d_class.rows(), d_class.cols());
    let zero_domain = Matrix::zeros(d_domain.rows(), 1);
    Ok(LossGradients {
        source_loss: ls,
        adversarial_loss: la,
        source: params.backward(&cache, &d_class, &zero_domain, 0.0),
        adversarial: params.backward(&cache, &zero_class, &d_domain, 1.0),
    })
}

/// Parameter change one eval-mode SGD step would apply: the class head
/// descends L_S, the domain head descends L_A, and the blocks descend
/// `L_S − τ·L_A`.
pub fn update_direction(
    params: &EncoderParams,
    source: &JointFeatures,
    labels: &[usize],
    target: &JointFeatures,
    learning_rate: f64,
    tau: f64,
) -> Result<EncoderParams> {
    let (m, c) = stack(source, target)?;
    params.check_input(&m, &c)?;
    let cache = params.forward_cached(&m, &c, None);
    let mut g = step_gradient(params, &cache, labels, tau);
    g.scale_in_place(-learning_rate);
    Ok(g)
}

fn step_gradient(params: &EncoderParams, cache: &Cache, labels: &[usize], tau: f64) -> EncoderParams {
    let d_class = source_loss_grad(&cache.class_logits, labels);
    let d_domain = adversarial_loss_grad(&cache.domain_logits, labels.len());
    params.backward(cache, &d_class, &d_domain, -tau)
}

impl EncoderParams {
    fn scale_in_place(&mut self, s: f64) {
        for l in self.layers_mut() {
            l.weight.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    // first maximum wins, so an all-equal row maps to class 0
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probabilities: Matrix,
}

/// Argmax labels and softmax probabilities, always computed in eval mode.
pub fn predict(state: &TrainState, joint: &JointFeatures) -> Result<Prediction> {
    let f = forward_eval(&state.params, joint)?;
    let probabilities = softmax(&f.class_logits);
    let labels = f.class_logits.iter_rows().map(argmax).collect();
    Ok(Prediction { labels, probabilities })
}

/// Fraction of samples the domain head assigns to the right domain.
pub fn domain_accuracy(params: &EncoderParams, source: &JointFeatures, target: &JointFeatures) -> Result<f64> {
    let s = forward_eval(params, source)?;
    let t = forward_eval(params, target)?;
    let hits = s.domain_logits.as_slice().iter().filter(|&&z| z < 0.0).count()
        + t.domain_logits.as_slice().iter().filter(|&&z| z > 0.0).count();
    Ok(hits as f64 / (source.len() + target.len()) as f64)
}

/// Mini-batch SGD for `config.epochs` epochs.
///
/// Each step pairs a source batch with an equally sized target batch; the
/// target permutation is walked cyclically. Batch order and dropout masks come
/// from the state's seeded stream, so a run is reproducible bit for bit.
pub fn train(
    mut state: TrainState,
    source: &JointFeatures,
    labels: &[usize],
    target: &JointFeatures,
    config: &PipelineConfig,
) -> Result<TrainState> {
    if labels.len() != source.len() {
        return Err(Error::shape("train", format!("{} labels for {} source samples", labels.len(), source.len())));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("training needs samples from both domains"));
    }
    state.params.check_input(source.marginal(), source.conditional().values())?;
    state.params.check_input(target.marginal(), target.conditional().values())?;
    crate::data::check_labels(labels, state.params.num_classes())?;

    let tau = config.effective_tau();
    let lr = config.learning_rate;
    let batch = config.batch_size;
    let (n_s, n_t) = (source.len(), target.len());
    let all = stack(source, target)?;

    state.mode = Mode::Train;
    for _ in 0..config.epochs {
        let epoch = state.epoch;
        let mut perm_s: Vec<usize> = (0..n_s).collect();
        let mut perm_t: Vec<usize> = (0..n_t).collect();
        perm_s.shuffle(&mut state.rng);
        perm_t.shuffle(&mut state.rng);

        let (mut sum_s, mut sum_a, mut steps) = (0.0, 0.0, 0usize);
        for (step, chunk) in perm_s.chunks(batch).enumerate() {
            let t_idx: Vec<usize> = (0..chunk.len()).map(|i| perm_t[(step * batch + i) % n_t]).collect();
            let s_batch = source.select_rows(chunk);
            let t_batch = target.select_rows(&t_idx);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (m, c) = stack(&s_batch, &t_batch)?;

            let dropout = (state.dropout > 0.0).then_some((&mut state.rng, state.dropout));
            let cache = state.params.forward_cached(&m, &c, dropout);
            let ls = source_loss(&cache.class_logits.select_rows(&(0..y.len()).collect::<Vec<_>>()), &y)?;
            let dl = cache.domain_logits.as_slice();
            let la = adversarial_loss(&dl[..y.len()], &dl[y.len()..])?;
            if !(ls.is_finite() && la.is_finite()) {
                state.mode = Mode::Eval;
                return Err(Error::Diverged { epoch });
            }
            sum_s += ls;
            sum_a += la;
            steps += 1;

            let g = step_gradient(&state.params, &cache, &y, tau);
            state.params.axpy(-lr, &g);
        }
        if !state.params.is_finite() {
            state.mode = Mode::Eval;
            return Err(Error::Diverged { epoch });
        }

        let cache = state.params.forward_cached(&all.0, &all.1, None);
        let source_hits = (0..n_s).filter(|&i| argmax(cache.class_logits.row(i)) == labels[i]).count();
        let dl = cache.domain_logits.as_slice();
        let domain_hits = dl[..n_s].iter().filter(|&&z| z < 0.0).count() + dl[n_s..].iter().filter(|&&z| z > 0.0).count();
        state.log.records.push(EpochRecord {
            epoch,
            source_loss: sum_s / steps as f64,
            adversarial_loss: sum_a / steps as f64,
            source_accuracy: source_hits as f64 / n_s as f64,
            domain_accuracy: domain_hits as f64 / (n_s + n_t) as f64,
        });
        state.epoch += 1;
    }
    state.mode = Mode::Eval;
    Ok(state)
}
