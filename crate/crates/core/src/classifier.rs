//! Stage 3: supervised fine-tuning on the label-augmented training set.
//!
//! The encoder from the clustering stage is kept (decoder discarded) and a
//! small convolutional head is stacked on the embedding: two width-3 conv
//! blocks over the embedding treated as a 1-channel sequence, then two dense
//! layers down to the class logits. Training minimizes a two-term
//! cross-entropy that normalizes genuinely-labeled and pseudo-labeled
//! samples separately, so a handful of real labels is never drowned out by
//! thousands of pseudo-labels; the pseudo term carries a configurable
//! weight. Both the encoder and the head are fine-tuned.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, leaky_relu_backward, softmax_rows, Adam, BatchNorm1d, BnCache, Conv1d, Conv1dCache,
    Dense, DenseCache, HasParams, Mode, Param,
};
use crate::sccae::{gather_rows, SccaeModel};
use crate::ssidec::pseudo_labels;

const HEAD_CH: [usize; 2] = [8, 16];
const PROB_FLOOR: f64 = 1e-12;

pub struct ClassifierCache {
    enc: crate::sccae::EncoderCache,
    c1: Conv1dCache,
    b1: BnCache,
    pre1: ndarray::Array3<f64>,
    c2: Conv1dCache,
    b2: BnCache,
    pre2: ndarray::Array3<f64>,
    fc1_cache: DenseCache,
    h_lin: Array2<f64>,
    fc2_cache: DenseCache,
}

/// Encoder plus classification head.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    /// Full autoencoder carried over from the clustering stage; only its
    /// encoder half is used and trained here.
    pub encoder: SccaeModel,
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub fc1: Dense,
    pub fc2: Dense,
    pub n_cluster: usize,
}

impl ClassifierModel {
    /// Build the head on top of an already-trained encoder. The encoder is
    /// taken as-is — bit for bit the clustering-stage weights — while the
    /// head starts from fresh random weights.
    pub fn from_encoder(
        encoder: SccaeModel,
        n_cluster: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_cluster < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least 2 classes, got {n_cluster}"
            )));
        }
        let n_rep = encoder.n_rep;
        Ok(ClassifierModel {
            encoder,
            conv1: Conv1d::new(1, HEAD_CH[0], 3, 1, 1, rng),
            bn1: BatchNorm1d::new(HEAD_CH[0]),
            conv2: Conv1d::new(HEAD_CH[0], HEAD_CH[1], 3, 1, 1, rng),
            bn2: BatchNorm1d::new(HEAD_CH[1]),
            fc1: Dense::new(HEAD_CH[1] * n_rep, 128, rng),
            fc2: Dense::new(128, n_cluster, rng),
            n_cluster,
        })
    }

    /// Forward to class logits.
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ClassifierCache)> {
        let (z, enc) = self.encoder.encode_fwd(x, mode)?;
        let batch = z.nrows();
        let n_rep = self.encoder.n_rep;
        let z3 = z.insert_axis(Axis(1));
        let (y1, c1) = self.conv1.forward(&z3);
        let (pre1, b1) = self.bn1.forward(&y1, mode);
        let a1 = leaky_relu(&pre1);
        let (y2, c2) = self.conv2.forward(&a1);
        let (pre2, b2) = self.bn2.forward(&y2, mode);
        let a2 = leaky_relu(&pre2);
        let flat = a2
            .into_shape_with_order((batch, HEAD_CH[1] * n_rep))
            .expect("contiguous head activations");
        let (h_lin, fc1_cache) = self.fc1.forward(&flat);
        let h = leaky_relu(&h_lin);
        let (logits, fc2_cache) = self.fc2.forward(&h);
        Ok((
            logits,
            ClassifierCache {
                enc,
                c1,
                b1,
                pre1,
                c2,
                b2,
                pre2,
                fc1_cache,
                h_lin,
                fc2_cache,
            },
        ))
    }

    /// Backward from a logit gradient through the head and the encoder.
    pub fn backward(&mut self, d_logits: &Array2<f64>, cache: &ClassifierCache) {
        let batch = d_logits.nrows();
        let n_rep = self.encoder.n_rep;
        let d_h = self.fc2.backward(d_logits, &cache.fc2_cache);
        let d_h_lin = leaky_relu_backward(&d_h, &cache.h_lin);
        let d_flat = self.fc1.backward(&d_h_lin, &cache.fc1_cache);
        let d_a2 = d_flat
            .into_shape_with_order((batch, HEAD_CH[1], n_rep))
            .expect("contiguous");
        let d_pre2 = leaky_relu_backward(&d_a2, &cache.pre2);
        let d_y2 = self.bn2.backward(&d_pre2, &cache.b2);
        let d_a1 = self.conv2.backward(&d_y2, &cache.c2);
        let d_pre1 = leaky_relu_backward(&d_a1, &cache.pre1);
        let d_y1 = self.bn1.backward(&d_pre1, &cache.b1);
        let d_z3 = self.conv1.backward(&d_y1, &cache.c1);
        let d_z = d_z3.remove_axis(Axis(1));
        self.encoder.encode_bwd(&d_z, &cache.enc, true);
    }

    /// Class probabilities and argmax labels, eval mode, batched.
    pub fn predict(&mut self, x: &Array2<f64>, batch: usize) -> Result<(Vec<usize>, Array2<f64>)> {
        let n = x.nrows();
        let mut probs = Array2::zeros((n, self.n_cluster));
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
            let (logits, _) = self.forward(&chunk, Mode::Eval)?;
            probs
                .slice_mut(ndarray::s![start..end, ..])
                .assign(&softmax_rows(&logits));
            start = end;
        }
        let labels = pseudo_labels(&probs);
        Ok((labels, probs))
    }
}

impl HasParams for ClassifierModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_encoder_params(f);
        self.conv1.visit("head.conv1", f);
        self.bn1.visit("head.bn1", f);
        self.conv2.visit("head.conv2", f);
        self.bn2.visit("head.bn2", f);
        self.fc1.visit("head.fc1", f);
        self.fc2.visit("head.fc2", f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_encoder_buffers(f);
        self.bn1.visit_buffers("head.bn1", f);
        self.bn2.visit_buffers("head.bn2", f);
    }
}

/// Training set for the classifier: spectra with labels of mixed provenance.
#[derive(Debug, Clone)]
pub struct AugmentedSet {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    /// `true` where the label came from a human annotation, `false` where it
    /// is a pseudo-label from the clustering stage.
    pub genuine: Vec<bool>,
    pub n_true: usize,
    pub n_pseudo: usize,
}

/// Merge the supervised labels with the clustering stage's pseudo-labels
/// into one training set. `labels` marks supervised rows with `Some`;
/// every other row takes its pseudo-label.
pub fn augment_labels(
    x_train: &Array2<f64>,
    labels: &[Option<usize>],
    pseudo: &[usize],
) -> Result<AugmentedSet> {
    let n = x_train.nrows();
    if labels.len() != n || pseudo.len() != n {
        return Err(Error::shape(
            "augment_labels",
            format!("{n} labels and pseudo-labels"),
            format!("{} / {}", labels.len(), pseudo.len()),
        ));
    }
    let mut y = Vec::with_capacity(n);
    let mut genuine = Vec::with_capacity(n);
    let mut n_true = 0;
    let mut n_pseudo = 0;
    for i in 0..n {
        match labels[i] {
            Some(c) => {
                y.push(c);
                genuine.push(true);
                n_true += 1;
            }
            None => {
                y.push(pseudo[i]);
                genuine.push(false);
                n_pseudo += 1;
            }
        }
    }
    Ok(AugmentedSet {
        x: x_train.clone(),
        y,
        genuine,
        n_true,
        n_pseudo,
    })
}

/// Two-term cross-entropy over a mixed-provenance batch and its gradient
/// with respect to the logits.
///
/// The genuine rows and the pseudo rows are each averaged separately:
/// `L = mean_CE(genuine) + pseudo_weight * mean_CE(pseudo)`. A batch with no
/// rows of one provenance simply drops that term. Probabilities are floored
/// at 1e-12 inside the logarithm.
pub fn supervised_loss(
    logits: &Array2<f64>,
    y: &[usize],
    genuine: &[bool],
    pseudo_weight: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("supervised_loss: empty batch".into()));
    }
    if y.len() != n || genuine.len() != n {
        return Err(Error::shape(
            "supervised_loss",
            format!("{n} labels and provenance flags"),
            format!("{} / {}", y.len(), genuine.len()),
        ));
    }
    for &label in y {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: k,
            });
        }
    }
    let n_true = genuine.iter().filter(|&&g| g).count();
    let n_pseudo = n - n_true;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut d_logits = Array2::zeros((n, k));
    for i in 0..n {
        let scale = if genuine[i] {
            1.0 / n_true as f64
        } else {
            pseudo_weight / n_pseudo as f64
        };
        let p_true = probs[[i, y[i]]].max(PROB_FLOOR);
        loss -= scale * p_true.ln();
        for j in 0..k {
            let indicator = if j == y[i] { 1.0 } else { 0.0 };
            d_logits[[i, j]] = scale * (probs[[i, j]] - indicator);
        }
    }
    Ok((loss, d_logits))
}

/// Mini-batch training of the classifier on the augmented set.
///
/// Runs Adam for `config.classifier_epochs` epochs over shuffled batches and
/// returns the per-epoch mean loss. Every class must be present in the
/// training labels. A non-finite loss aborts with the parameters rolled back
/// to the last finite epoch.
pub fn train_classifier(
    model: &mut ClassifierModel,
    set: &AugmentedSet,
    config: &TrainingConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = set.x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("train_classifier: empty set".into()));
    }
    let mut class_seen = vec![false; model.n_cluster];
    for &label in &set.y {
        if label >= model.n_cluster {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: model.n_cluster,
            });
        }
        class_seen[label] = true;
    }
    if let Some(missing) = class_seen.iter().position(|&seen| !seen) {
        return Err(Error::EmptyClass(missing));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.classifier_lr);
    let mut curve = Vec::with_capacity(config.classifier_epochs);
    let mut snapshot = model.flat_values();

    for epoch in 0..config.classifier_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x_b = gather_rows(&set.x, chunk);
            let y_b: Vec<usize> = chunk.iter().map(|&i| set.y[i]).collect();
            let g_b: Vec<bool> = chunk.iter().map(|&i| set.genuine[i]).collect();
            let (logits, cache) = model.forward(&x_b, Mode::Train)?;
            let (loss, d_logits) = supervised_loss(&logits, &y_b, &g_b, config.pseudo_weight)?;
            if !loss.is_finite() {
                model.load_flat_values(&snapshot);
                return Err(Error::Diverged {
                    loss_name: "classification loss".into(),
                    epoch,
                });
            }
            epoch_loss += loss;
            batches += 1.0;
            model.zero_grads();
            model.backward(&d_logits, &cache);
            adam.step(model)?;
        }
        curve.push(epoch_loss / batches);
        snapshot = model.flat_values();
    }
    Ok(curve)
}
