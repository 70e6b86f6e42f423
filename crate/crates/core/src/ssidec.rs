//! Stage 2: embedded clustering with reconstruction and adversarial
//! regularization on top of the pre-trained autoencoder.
//!
//! Embeddings are softly assigned to learnable cluster centers through a
//! Student-t kernel; a sharpened target distribution pulls each point toward
//! its confident cluster (the clustering KL term), the decoder keeps the
//! embedding faithful to the spectrum (the reconstruction term), and virtual
//! adversarial training smooths the assignment function around each input
//! (the adversarial KL term). The encoder receives all three gradients, the
//! decoder only the reconstruction gradient, and the centers only the
//! clustering and adversarial gradients — that split falls out of the graph
//! structure rather than any masking. Cluster centers start from labeled
//! class means when labels exist (so cluster index == class index) and from
//! k-means otherwise.

use ndarray::{Array2, Ix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::nn::{Adam, HasParams, Mode, Param};
use crate::sccae::{gather_rows, reconstruction_grad, reconstruction_loss, SccaeModel};

/// Floor applied inside logarithms so empty assignments cannot produce
/// non-finite losses.
pub const Q_FLOOR: f64 = 1e-12;

fn pair_distances(z: &Array2<f64>, centroids: &Array2<f64>, squared: bool) -> Array2<f64> {
    let (n, dim) = z.dim();
    let k = centroids.nrows();
    let mut d = Array2::zeros((n, k));
    for i in 0..n {
        for j in 0..k {
            let mut acc = 0.0;
            for m in 0..dim {
                let diff = z[[i, m]] - centroids[[j, m]];
                acc += diff * diff;
            }
            d[[i, j]] = if squared { acc } else { acc.sqrt() };
        }
    }
    d
}

/// Student-t soft assignment of embeddings to cluster centers.
///
/// `q[i][j] = (1 + d(z_i, mu_j)/alpha)^-((alpha+1)/2)`, normalized so every
/// row sums to one. `squared` selects squared-Euclidean (the default) or
/// plain Euclidean distance.
pub fn soft_assign(
    z: &Array2<f64>,
    centroids: &Array2<f64>,
    alpha: f64,
    squared: bool,
) -> Result<Array2<f64>> {
    if alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "soft_assign: alpha must be positive, got {alpha}"
        )));
    }
    if z.ncols() != centroids.ncols() {
        return Err(Error::shape(
            "soft_assign",
            format!("embedding dim {}", z.ncols()),
            format!("centroid dim {}", centroids.ncols()),
        ));
    }
    let exponent = -(alpha + 1.0) / 2.0;
    let d = pair_distances(z, centroids, squared);
    let mut q = d.mapv(|v| (1.0 + v / alpha).powf(exponent));
    for mut row in q.rows_mut() {
        let s: f64 = row.sum();
        if s > 0.0 && s.is_finite() {
            row.mapv_inplace(|v| v / s);
        } else {
            log::warn!("soft_assign: degenerate row (sum {s}), falling back to uniform");
            row.fill(1.0 / centroids.nrows() as f64);
        }
    }
    Ok(q)
}

/// Sharpened target distribution for the clustering KL term:
/// `p[i][j] = (q[i][j]^2 / f_j) / sum_j'`, with `f_j` the soft cluster
/// frequency (column sum of `q`). Squaring emphasizes confident assignments;
/// dividing by the frequency keeps large clusters from absorbing everything.
pub fn target_distribution(q: &Array2<f64>) -> Array2<f64> {
    let k = q.ncols();
    let mut freq = vec![0.0; k];
    for j in 0..k {
        freq[j] = q.column(j).sum();
    }
    for (j, f) in freq.iter_mut().enumerate() {
        if *f < Q_FLOOR {
            log::warn!("target_distribution: cluster {j} has near-zero mass, clamping");
            *f = Q_FLOOR;
        }
    }
    let mut p = Array2::zeros(q.raw_dim());
    for (i, row) in q.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for j in 0..k {
            let w = row[j] * row[j] / freq[j];
            p[[i, j]] = w;
            sum += w;
        }
        if sum > 0.0 {
            for j in 0..k {
                p[[i, j]] /= sum;
            }
        } else {
            log::warn!("target_distribution: degenerate row {i}, falling back to uniform");
            for j in 0..k {
                p[[i, j]] = 1.0 / k as f64;
            }
        }
    }
    p
}

/// Plain-sum KL divergence `sum_ij p log(p/q)`. Terms with `p == 0`
/// contribute zero; `q` is floored at [`Q_FLOOR`] to keep the value finite.
pub fn kl_div(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    debug_assert_eq!(p.shape(), q.shape());
    let mut clamped = false;
    let mut total = 0.0;
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if pv <= 0.0 {
            continue;
        }
        let mut qc = qv;
        if qc < Q_FLOOR {
            qc = Q_FLOOR;
            clamped = true;
        }
        total += pv * (pv / qc).ln();
    }
    if clamped {
        log::warn!("kl_div: assignment probabilities clamped at {Q_FLOOR}");
    }
    total
}

/// Gradient of `scale * sum_ij p log(p/q(z, mu))` with respect to the
/// embeddings and the centers, with `p` held fixed. Rows of `p` must sum to
/// one. Returns `(d_z, d_mu)`.
pub fn kl_grad(
    p: &Array2<f64>,
    q: &Array2<f64>,
    z: &Array2<f64>,
    centroids: &Array2<f64>,
    alpha: f64,
    squared: bool,
    scale: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (n, dim) = z.dim();
    let k = centroids.nrows();
    let d = pair_distances(z, centroids, squared);
    let coeff = scale * (alpha + 1.0) / (2.0 * alpha);
    let mut dz = Array2::zeros((n, dim));
    let mut dmu = Array2::zeros((k, dim));
    for i in 0..n {
        for j in 0..k {
            let w = 1.0 / (1.0 + d[[i, j]] / alpha);
            // d(loss)/d(distance), then chain through the distance itself.
            let dl_dd = coeff * w * (p[[i, j]] - q[[i, j]]);
            let factor = if squared {
                2.0
            } else {
                1.0 / d[[i, j]].max(Q_FLOOR)
            };
            let g = dl_dd * factor;
            for m in 0..dim {
                let diff = z[[i, m]] - centroids[[j, m]];
                dz[[i, m]] += g * diff;
                dmu[[j, m]] -= g * diff;
            }
        }
    }
    (dz, dmu)
}

/// Hard labels from a soft assignment: per-row argmax, ties resolved to the
/// lowest cluster index.
pub fn pseudo_labels(q: &Array2<f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Count clusters that win no argmax assignment, logging a warning for each.
pub fn warn_empty_clusters(assignments: &[usize], k: usize) -> usize {
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mut empty = 0;
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            log::warn!("cluster {j} is empty at this update; its center is retained");
            empty += 1;
        }
    }
    empty
}

/// Initialize one center per class as the mean embedding of that class's
/// labeled samples. Fails with [`Error::EmptyClass`] if any class in
/// `0..n_cluster` has no labeled sample.
pub fn init_centroids_semisup(
    z: &Array2<f64>,
    labels: &[Option<usize>],
    n_cluster: usize,
) -> Result<Array2<f64>> {
    if z.nrows() != labels.len() {
        return Err(Error::shape(
            "init_centroids_semisup",
            format!("{} label slots", z.nrows()),
            format!("{}", labels.len()),
        ));
    }
    let dim = z.ncols();
    let mut sums = Array2::<f64>::zeros((n_cluster, dim));
    let mut counts = vec![0usize; n_cluster];
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            if c >= n_cluster {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    n_classes: n_cluster,
                });
            }
            let mut row = sums.row_mut(c);
            row += &z.row(i);
            counts[c] += 1;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
        let mut row = sums.row_mut(c);
        row.mapv_inplace(|v| v / count as f64);
    }
    Ok(sums)
}

/// Initialize centers by best-of-restarts k-means over the embeddings.
pub fn init_centroids_unsup(
    z: &Array2<f64>,
    n_cluster: usize,
    restarts: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    let result = kmeans(z, n_cluster, 100, restarts, seed)?;
    Ok(result.centroids)
}

/// The joint clustering model: the autoencoder plus the learnable cluster
/// centers, exposed as one parameter collection so a single optimizer step
/// updates everything.
pub struct Ssidec<'a> {
    pub model: &'a mut SccaeModel,
    pub centroids: Param,
    pub n_cluster: usize,
}

impl<'a> Ssidec<'a> {
    pub fn new(model: &'a mut SccaeModel, centroids: Array2<f64>) -> Self {
        let n_cluster = centroids.nrows();
        Ssidec {
            model,
            centroids: Param::new(centroids.into_dyn()),
            n_cluster,
        }
    }

    /// Current centers as a dense `[k, n_rep]` array.
    pub fn centroid_array(&self) -> Array2<f64> {
        self.centroids
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("centroids are 2-d")
    }
}

impl HasParams for Ssidec<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.model.visit_params(f);
        f("cluster.centroids", &mut self.centroids);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.model.visit_buffers(f);
    }
}

/// Loss components of one joint step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub l_rec: f64,
    pub l_c: f64,
    pub l_v: f64,
}

impl StepStats {
    pub fn total(&self, config: &TrainingConfig) -> f64 {
        self.l_rec + config.gamma_c * self.l_c + config.effective_gamma_vat() * self.l_v
    }
}

/// Find the input perturbation of norm `vat_eps` that most increases the
/// divergence between the current assignment `q_ref` and the assignment of
/// the perturbed input. Starts from a random unit direction per sample and
/// refines it with `vat_power_iters` power iterations; a vanishing gradient
/// keeps the random direction (with a warning) rather than failing.
///
/// Everything runs in eval mode and leaves parameter gradients untouched.
pub fn vat_perturbation(
    s: &mut Ssidec<'_>,
    x: &Array2<f64>,
    q_ref: &Array2<f64>,
    config: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let (n, dim) = x.dim();
    let batch_scale = 1.0 / n as f64;
    let centroids = s.centroid_array();

    let mut dir = Array2::<f64>::zeros((n, dim));
    for mut row in dir.rows_mut() {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        } else {
            row[0] = 1.0;
        }
    }

    for _ in 0..config.vat_power_iters {
        let x_xi = x + &dir.mapv(|v| v * config.vat_xi);
        let (z_xi, cache) = s.model.encode_fwd(&x_xi, Mode::Eval)?;
        let q_xi = soft_assign(&z_xi, &centroids, config.alpha, config.squared_distance)?;
        let (dz, _) = kl_grad(
            q_ref,
            &q_xi,
            &z_xi,
            &centroids,
            config.alpha,
            config.squared_distance,
            batch_scale,
        );
        let dx = s.model.encode_bwd(&dz, &cache, false);
        for (i, grad_row) in dx.rows().into_iter().enumerate() {
            let norm = grad_row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-30 {
                log::warn!(
                    "vat_perturbation: zero divergence gradient for sample {i}; keeping the random direction"
                );
                continue;
            }
            let mut dst = dir.row_mut(i);
            for (d, &g) in dst.iter_mut().zip(grad_row.iter()) {
                *d = g / norm;
            }
        }
    }
    Ok(dir.mapv(|v| v * config.vat_eps))
}

/// Batch-mean adversarial divergence `KL(q_ref || q(x + r))`, eval mode.
pub fn vat_loss(
    s: &mut Ssidec<'_>,
    x: &Array2<f64>,
    r: &Array2<f64>,
    q_ref: &Array2<f64>,
    config: &TrainingConfig,
) -> Result<f64> {
    let x_adv = x + r;
    let (z_adv, _) = s.model.encode_fwd(&x_adv, Mode::Eval)?;
    let centroids = s.centroid_array();
    let q_adv = soft_assign(&z_adv, &centroids, config.alpha, config.squared_distance)?;
    Ok(kl_div(q_ref, &q_adv) / x.nrows() as f64)
}

/// Forward and backward of the joint objective on one batch, leaving the
/// combined gradients in place but not stepping the optimizer.
///
/// `mode` governs the reconstruction/clustering pass (`Train` for real
/// training, `TrainFrozen` for side-effect-free gradient verification); the
/// adversarial branch always runs in eval mode with the reference assignment
/// treated as a constant. When the adversarial weight is zero the branch is
/// skipped entirely and `rng` is never touched.
pub fn joint_forward_backward(
    s: &mut Ssidec<'_>,
    x: &Array2<f64>,
    p_rows: &Array2<f64>,
    config: &TrainingConfig,
    rng: &mut ChaCha8Rng,
    mode: Mode,
) -> Result<StepStats> {
    let n = x.nrows();
    if p_rows.nrows() != n || p_rows.ncols() != s.n_cluster {
        return Err(Error::shape(
            "joint step target rows",
            format!("[{n}, {}]", s.n_cluster),
            format!("{:?}", p_rows.shape()),
        ));
    }
    s.zero_grads();
    let gamma_c = config.gamma_c;
    let gamma_v = config.effective_gamma_vat();

    let (xhat, z, cache) = s.model.forward(x, mode)?;
    let l_rec = reconstruction_loss(x, &xhat)?;
    if !l_rec.is_finite() {
        return Err(Error::NonFinite("reconstruction loss".into()));
    }

    let centroids = s.centroid_array();
    let q = soft_assign(&z, &centroids, config.alpha, config.squared_distance)?;
    let l_c = kl_div(p_rows, &q);
    if !l_c.is_finite() {
        return Err(Error::NonFinite("clustering loss".into()));
    }
    let (dz_c, dmu_c) = kl_grad(
        p_rows,
        &q,
        &z,
        &centroids,
        config.alpha,
        config.squared_distance,
        1.0,
    );

    let mut l_v = 0.0;
    let mut dmu_total = dmu_c.mapv(|v| v * gamma_c);
    if gamma_v > 0.0 {
        let (z_ref, _) = s.model.encode_fwd(x, Mode::Eval)?;
        let q_ref = soft_assign(&z_ref, &centroids, config.alpha, config.squared_distance)?;
        let r_adv = vat_perturbation(s, x, &q_ref, config, rng)?;
        let x_adv = x + &r_adv;
        let (z_adv, cache_adv) = s.model.encode_fwd(&x_adv, Mode::Eval)?;
        let q_adv = soft_assign(&z_adv, &centroids, config.alpha, config.squared_distance)?;
        l_v = kl_div(&q_ref, &q_adv) / n as f64;
        if !l_v.is_finite() {
            return Err(Error::NonFinite("adversarial loss".into()));
        }
        let (dz_v, dmu_v) = kl_grad(
            &q_ref,
            &q_adv,
            &z_adv,
            &centroids,
            config.alpha,
            config.squared_distance,
            1.0 / n as f64,
        );
        let dz_v_scaled = dz_v.mapv(|v| v * gamma_v);
        s.model.encode_bwd(&dz_v_scaled, &cache_adv, true);
        dmu_total += &dmu_v.mapv(|v| v * gamma_v);
    }

    let d_xhat = reconstruction_grad(x, &xhat);
    if gamma_c != 0.0 {
        let dz_extra = dz_c.mapv(|v| v * gamma_c);
        s.model.backward(&d_xhat, Some(&dz_extra), &cache);
    } else {
        s.model.backward(&d_xhat, None, &cache);
    }

    s.centroids.grad.scaled_add(1.0, &dmu_total.into_dyn());

    Ok(StepStats { l_rec, l_c, l_v })
}

/// One optimizer step of the joint objective on one batch.
pub fn joint_step(
    s: &mut Ssidec<'_>,
    x: &Array2<f64>,
    p_rows: &Array2<f64>,
    config: &TrainingConfig,
    rng: &mut ChaCha8Rng,
    adam: &mut Adam,
) -> Result<StepStats> {
    let stats = joint_forward_backward(s, x, p_rows, config, rng, Mode::Train)?;
    adam.step(s)?;
    Ok(stats)
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub rec: f64,
    pub clu: f64,
    pub vat: f64,
}

/// Everything the clustering stage hands to the classifier stage.
#[derive(Debug, Clone)]
pub struct SsidecOutcome {
    /// Final cluster centers, `[n_cluster, n_rep]`.
    pub centroids: Array2<f64>,
    /// Final hard assignment per training row.
    pub pseudo: Vec<usize>,
    /// Hard assignment from the initial centers, before any joint training.
    pub initial_pseudo: Vec<usize>,
    /// Final soft assignment, `[n_train, n_cluster]`.
    pub q: Array2<f64>,
    /// Number of training epochs actually run.
    pub epochs_run: usize,
    /// Number of target-distribution refreshes (including the initial one).
    pub p_updates: usize,
    /// Fraction of changed pseudo-labels at each refresh after the first.
    pub change_trajectory: Vec<f64>,
    /// Mean loss components per trained epoch.
    pub loss_curve: Vec<EpochLosses>,
}

/// Run the clustering stage over the full training matrix.
///
/// `labels` carries the known class for supervised rows and `None`
/// elsewhere; when at least one label is present the centers start from
/// labeled class means (so cluster indices coincide with class indices) and
/// otherwise from k-means. The target distribution is refreshed every
/// `p_update_interval` epochs; from the second refresh on, training stops
/// once the fraction of changed pseudo-labels drops below `tol`. With
/// `clustering_epochs == 0` the model is left untouched and the outcome
/// simply reports the initial assignments.
pub fn run_ssidec(
    model: &mut SccaeModel,
    x_train: &Array2<f64>,
    labels: &[Option<usize>],
    n_cluster: usize,
    config: &TrainingConfig,
    seed: u64,
) -> Result<SsidecOutcome> {
    if x_train.nrows() == 0 {
        return Err(Error::InvalidArgument("run_ssidec: empty training set".into()));
    }
    if x_train.nrows() != labels.len() {
        return Err(Error::shape(
            "run_ssidec labels",
            format!("{}", x_train.nrows()),
            format!("{}", labels.len()),
        ));
    }
    if n_cluster < 2 {
        return Err(Error::InvalidArgument(format!(
            "run_ssidec: need at least 2 clusters, got {n_cluster}"
        )));
    }
    if config.p_update_interval == 0 {
        return Err(Error::InvalidArgument(
            "run_ssidec: p_update_interval must be positive".into(),
        ));
    }

    let z0 = model.encode_batched(x_train, config.batch_size)?;
    let any_labeled = labels.iter().any(|l| l.is_some());
    let centroids = if any_labeled {
        init_centroids_semisup(&z0, labels, n_cluster)?
    } else {
        init_centroids_unsup(&z0, n_cluster, config.kmeans_restarts, seed)?
    };

    let mut s = Ssidec::new(model, centroids);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(config.clustering_lr);

    // Initial refresh: assignments and targets from the starting centers.
    let mut q_full = soft_assign(&z0, &s.centroid_array(), config.alpha, config.squared_distance)?;
    let mut p_full = target_distribution(&q_full);
    let mut pseudo = pseudo_labels(&q_full);
    warn_empty_clusters(&pseudo, n_cluster);
    let initial_pseudo = pseudo.clone();
    let mut p_updates = 1usize;
    let mut change_trajectory = Vec::new();
    let mut loss_curve = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 0..config.clustering_epochs {
        if epoch > 0 && epoch % config.p_update_interval == 0 {
            let z_full = s.model.encode_batched(x_train, config.batch_size)?;
            q_full = soft_assign(
                &z_full,
                &s.centroid_array(),
                config.alpha,
                config.squared_distance,
            )?;
            p_full = target_distribution(&q_full);
            let fresh = pseudo_labels(&q_full);
            warn_empty_clusters(&fresh, n_cluster);
            let changed = fresh
                .iter()
                .zip(pseudo.iter())
                .filter(|(a, b)| a != b)
                .count() as f64
                / fresh.len() as f64;
            change_trajectory.push(changed);
            pseudo = fresh;
            p_updates += 1;
            if changed < config.tol {
                log::info!(
                    "clustering stage: converged at epoch {epoch} ({:.4} of labels changed)",
                    changed
                );
                break;
            }
        }

        let mut order: Vec<usize> = (0..x_train.nrows()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut sums = EpochLosses::default();
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x_b = gather_rows(x_train, chunk);
            let p_b = gather_rows(&p_full, chunk);
            let stats = joint_step(&mut s, &x_b, &p_b, config, &mut rng, &mut adam)
                .map_err(|e| match e {
                    Error::NonFinite(name) => Error::Diverged {
                        loss_name: name,
                        epoch,
                    },
                    other => other,
                })?;
            sums.rec += stats.l_rec;
            sums.clu += stats.l_c;
            sums.vat += stats.l_v;
            batches += 1.0;
        }
        loss_curve.push(EpochLosses {
            rec: sums.rec / batches,
            clu: sums.clu / batches,
            vat: sums.vat / batches,
        });
        epochs_run = epoch + 1;
    }

    // Final assignments from the final model state. When the stop condition
    // fired this recomputes the same values; when the epoch budget ran out it
    // folds in the last epochs of training.
    let z_final = s.model.encode_batched(x_train, config.batch_size)?;
    let q_final = soft_assign(
        &z_final,
        &s.centroid_array(),
        config.alpha,
        config.squared_distance,
    )?;
    let pseudo_final = pseudo_labels(&q_final);
    let centroids_final = s.centroid_array();

    Ok(SsidecOutcome {
        centroids: centroids_final,
        pseudo: pseudo_final,
        initial_pseudo,
        q: q_final,
        epochs_run,
        p_updates,
        change_trajectory,
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            n_input: 64,
            n_rep: 4,
            alpha: 1.0,
            gamma_c: 0.1,
            gamma_vat: 1.0,
            vat_eps: 2.0,
            vat_xi: 1e-6,
            vat_power_iters: 1,
            squared_distance: true,
            batch_size: 32,
            clustering_lr: 1e-3,
            clustering_epochs: 5,
            p_update_interval: 2,
            tol: 1e-4,
            kmeans_restarts: 4,
            ..TrainingConfig::desk_profile()
        }
    }

    fn small_model(seed: u64) -> SccaeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SccaeModel::new(64, 4, false, true, &mut rng).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    /// Random rows on the probability simplex.
    fn random_simplex(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_fn((n, k), |_| rng.gen_range(0.05..1.0));
        for mut row in m.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        m
    }

    #[test]
    fn soft_assign_hand_example() {
        // z at the first center: d1 = 0 -> kernel 1; d2 = 4 -> kernel 1/5.
        let z = array![[1.0, 0.0]];
        let mu = array![[1.0, 0.0], [-1.0, 0.0]];
        let q = soft_assign(&z, &mu, 1.0, true).unwrap();
        assert!((q[[0, 0]] - 5.0 / 6.0).abs() < 1e-12);
        assert!((q[[0, 1]] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn soft_assign_equidistant_is_uniform() {
        let z = array![[0.0, 0.0]];
        let mu = array![[1.0, 0.0], [-1.0, 0.0]];
        let q = soft_assign(&z, &mu, 1.0, true).unwrap();
        assert!((q[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((q[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_assign_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_matrix(&mut rng, 40, 6);
        let mu = random_matrix(&mut rng, 5, 6);
        for &sq in &[true, false] {
            let q = soft_assign(&z, &mu, 1.0, sq).unwrap();
            for row in q.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn soft_assign_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_matrix(&mut rng, 10, 4);
        let mu = random_matrix(&mut rng, 3, 4);
        let q = soft_assign(&z, &mu, 1.0, true).unwrap();
        let shift = 7.25;
        let q_shifted =
            soft_assign(&z.mapv(|v| v + shift), &mu.mapv(|v| v + shift), 1.0, true).unwrap();
        for (a, b) in q.iter().zip(q_shifted.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn target_distribution_hand_oracle() {
        let q = array![[0.9, 0.1], [0.6, 0.4]];
        // f = (1.5, 0.5); unnormalized: [0.54, 0.02; 0.24, 0.32].
        let p = target_distribution(&q);
        assert!((p[[0, 0]] - 0.54 / 0.56).abs() < 1e-12);
        assert!((p[[0, 1]] - 0.02 / 0.56).abs() < 1e-12);
        assert!((p[[1, 0]] - 0.24 / 0.56).abs() < 1e-12);
        assert!((p[[1, 1]] - 0.32 / 0.56).abs() < 1e-12);
    }

    #[test]
    fn target_distribution_fixed_points() {
        // Uniform assignments stay uniform.
        let q = Array2::from_elem((6, 3), 1.0 / 3.0);
        let p = target_distribution(&q);
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        // One-hot assignments stay one-hot (with the dead-column clamp).
        let q = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let p = target_distribution(&q);
        for (a, b) in q.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_distribution_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_simplex(&mut rng, 50, 4);
        let p = target_distribution(&q);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_div_examples_and_invariants() {
        let p = array![[1.0, 0.0]];
        let q = array![[0.5, 0.5]];
        assert!((kl_div(&p, &q) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(kl_div(&q, &q), 0.0);
        // Zero assignment probability is clamped, not NaN.
        let q0 = array![[0.0, 1.0]];
        let v = kl_div(&p, &q0);
        assert!(v.is_finite() && v > 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = random_simplex(&mut rng, 4, 3);
            let q = random_simplex(&mut rng, 4, 3);
            assert!(kl_div(&p, &q) >= -1e-12);
        }
    }

    #[test]
    fn kl_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &squared in &[true, false] {
            let z = random_matrix(&mut rng, 5, 3);
            let mu = random_matrix(&mut rng, 4, 3);
            let q = soft_assign(&z, &mu, 1.0, squared).unwrap();
            let p = target_distribution(&q);
            let scale = 0.7;
            let (dz, dmu) = kl_grad(&p, &q, &z, &mu, 1.0, squared, scale);

            let h = 1e-6;
            let loss = |z: &Array2<f64>, mu: &Array2<f64>| {
                scale * kl_div(&p, &soft_assign(z, mu, 1.0, squared).unwrap())
            };
            for i in 0..z.nrows() {
                for m in 0..z.ncols() {
                    let mut zp = z.clone();
                    zp[[i, m]] += h;
                    let mut zm = z.clone();
                    zm[[i, m]] -= h;
                    let fd = (loss(&zp, &mu) - loss(&zm, &mu)) / (2.0 * h);
                    let rel = (fd - dz[[i, m]]).abs() / 1.0_f64.max(fd.abs());
                    assert!(rel < 1e-5, "dz[{i},{m}] fd {fd} an {} (squared {squared})", dz[[i, m]]);
                }
            }
            for j in 0..mu.nrows() {
                for m in 0..mu.ncols() {
                    let mut mp = mu.clone();
                    mp[[j, m]] += h;
                    let mut mm = mu.clone();
                    mm[[j, m]] -= h;
                    let fd = (loss(&z, &mp) - loss(&z, &mm)) / (2.0 * h);
                    let rel = (fd - dmu[[j, m]]).abs() / 1.0_f64.max(fd.abs());
                    assert!(rel < 1e-5, "dmu[{j},{m}] fd {fd} an {} (squared {squared})", dmu[[j, m]]);
                }
            }
        }
    }

    #[test]
    fn pseudo_labels_argmax_with_low_index_ties() {
        let q = array![[0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [0.1, 0.1, 0.8]];
        assert_eq!(pseudo_labels(&q), vec![1, 0, 2]);
    }

    #[test]
    fn empty_cluster_detection_counts_and_warns() {
        assert_eq!(warn_empty_clusters(&[0, 0, 2, 2], 3), 1);
        assert_eq!(warn_empty_clusters(&[0, 1, 2], 3), 0);
    }

    #[test]
    fn semisup_init_is_class_means() {
        let z = array![[0.0, 0.0], [2.0, 2.0], [10.0, 0.0], [0.0, 10.0]];
        let labels = [Some(0), Some(0), Some(1), None];
        let mu = init_centroids_semisup(&z, &labels, 2).unwrap();
        assert_eq!(mu, array![[1.0, 1.0], [10.0, 0.0]]);

        let labels_missing = [Some(0), Some(0), None, None];
        match init_centroids_semisup(&z, &labels_missing, 2) {
            Err(Error::EmptyClass(1)) => {}
            other => panic!("expected EmptyClass(1), got {other:?}"),
        }
    }

    #[test]
    fn unsup_init_recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut z = Array2::zeros((60, 2));
        for i in 0..60 {
            let c = i % 3;
            let center = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)][c];
            z[[i, 0]] = center.0 + rng.gen_range(-0.5..0.5);
            z[[i, 1]] = center.1 + rng.gen_range(-0.5..0.5);
        }
        let mu = init_centroids_unsup(&z, 3, 4, 7).unwrap();
        // Each true center has one recovered center within 1.0.
        for &(cx, cy) in &[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)] {
            let close = mu
                .rows()
                .into_iter()
                .any(|r| ((r[0] - cx).powi(2) + (r[1] - cy).powi(2)).sqrt() < 1.0);
            assert!(close, "no center near ({cx}, {cy}) in {mu:?}");
        }
    }

    #[test]
    fn vat_perturbation_has_exact_norm_and_scales_linearly() {
        let cfg = small_config();
        let mut model = small_model(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 4, 64).mapv(|v| v.abs());
        let mu = random_matrix(&mut rng, 3, 4);
        let mut s = Ssidec::new(&mut model, mu);

        let (z_ref, _) = s.model.encode_fwd(&x, Mode::Eval).unwrap();
        let centroids = s.centroid_array();
        let q_ref = soft_assign(&z_ref, &centroids, cfg.alpha, true).unwrap();

        let mut rng_a = ChaCha8Rng::seed_from_u64(12);
        let r = vat_perturbation(&mut s, &x, &q_ref, &cfg, &mut rng_a).unwrap();
        for row in r.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - cfg.vat_eps).abs() < 1e-9, "norm {norm}");
        }

        let mut cfg2 = cfg.clone();
        cfg2.vat_eps = 2.0 * cfg.vat_eps;
        let mut rng_b = ChaCha8Rng::seed_from_u64(12);
        let r2 = vat_perturbation(&mut s, &x, &q_ref, &cfg2, &mut rng_b).unwrap();
        for (a, b) in r.iter().zip(r2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vat_with_identical_centers_keeps_random_direction() {
        // Identical centers make every assignment uniform, so the divergence
        // gradient vanishes and the random direction must survive.
        let cfg = small_config();
        let mut model = small_model(13);
        let mu = Array2::from_elem((3, 4), 0.5);
        let mut s = Ssidec::new(&mut model, mu);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_matrix(&mut rng, 3, 64);
        let q_ref = Array2::from_elem((3, 3), 1.0 / 3.0);
        let r = vat_perturbation(&mut s, &x, &q_ref, &cfg, &mut rng).unwrap();
        for row in r.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - cfg.vat_eps).abs() < 1e-9);
        }
    }

    #[test]
    fn vat_direction_beats_random_directions_on_average() {
        let cfg = small_config();
        let mut model = small_model(15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = random_matrix(&mut rng, 6, 64);
        let mu = random_matrix(&mut rng, 3, 4);
        let mut s = Ssidec::new(&mut model, mu);
        let (z_ref, _) = s.model.encode_fwd(&x, Mode::Eval).unwrap();
        let centroids = s.centroid_array();
        let q_ref = soft_assign(&z_ref, &centroids, cfg.alpha, true).unwrap();

        let mut rng_v = ChaCha8Rng::seed_from_u64(17);
        let r_adv = vat_perturbation(&mut s, &x, &q_ref, &cfg, &mut rng_v).unwrap();
        let kl_adv = vat_loss(&mut s, &x, &r_adv, &q_ref, &cfg).unwrap();

        let mut total = 0.0;
        let trials = 16;
        for t in 0..trials {
            let mut rng_r = ChaCha8Rng::seed_from_u64(100 + t);
            let mut r = random_matrix(&mut rng_r, 6, 64);
            for mut row in r.rows_mut() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.mapv_inplace(|v| v / norm * cfg.vat_eps);
            }
            total += vat_loss(&mut s, &x, &r, &q_ref, &cfg).unwrap();
        }
        let mean_random = total / trials as f64;
        assert!(
            kl_adv >= mean_random,
            "adversarial {kl_adv} vs mean random {mean_random}"
        );
    }

    #[test]
    fn vat_loss_zero_at_zero_perturbation_and_nonnegative() {
        let cfg = small_config();
        let mut model = small_model(18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_matrix(&mut rng, 4, 64);
        let mu = random_matrix(&mut rng, 3, 4);
        let mut s = Ssidec::new(&mut model, mu);
        let (z_ref, _) = s.model.encode_fwd(&x, Mode::Eval).unwrap();
        let centroids = s.centroid_array();
        let q_ref = soft_assign(&z_ref, &centroids, cfg.alpha, true).unwrap();

        let zero = Array2::zeros((4, 64));
        assert_eq!(vat_loss(&mut s, &x, &zero, &q_ref, &cfg).unwrap(), 0.0);
        let r = random_matrix(&mut rng, 4, 64).mapv(|v| v * 0.5);
        assert!(vat_loss(&mut s, &x, &r, &q_ref, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn joint_gradients_pass_finite_difference_check() {
        use crate::nn::grad_check;
        let cfg = small_config();
        let mut model = small_model(20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 4, 64).mapv(|v| v.abs());
        let mu = random_matrix(&mut rng, 3, 4);
        let mut s = Ssidec::new(&mut model, mu);

        // Freeze the adversarial inputs: reference assignment and
        // perturbation are constants of the check.
        let (z_ref, _) = s.model.encode_fwd(&x, Mode::Eval).unwrap();
        let centroids0 = s.centroid_array();
        let q_ref = soft_assign(&z_ref, &centroids0, cfg.alpha, true).unwrap();
        let mut rng_v = ChaCha8Rng::seed_from_u64(22);
        let r_adv = vat_perturbation(&mut s, &x, &q_ref, &cfg, &mut rng_v).unwrap();
        let x_adv = &x + &r_adv;

        // Fixed target rows, as in training between refreshes.
        let (z0, _) = s.model.encode_fwd(&x, Mode::TrainFrozen).unwrap();
        let q0 = soft_assign(&z0, &centroids0, cfg.alpha, true).unwrap();
        let p_fix = target_distribution(&q0);

        // Analytic gradients, assembled exactly as the training step does but
        // with the frozen perturbation.
        s.zero_grads();
        let (xhat, z, cache) = s.model.forward(&x, Mode::TrainFrozen).unwrap();
        let centroids = s.centroid_array();
        let q = soft_assign(&z, &centroids, cfg.alpha, true).unwrap();
        let (dz_c, dmu_c) = kl_grad(&p_fix, &q, &z, &centroids, cfg.alpha, true, 1.0);
        let (z_adv, cache_adv) = s.model.encode_fwd(&x_adv, Mode::Eval).unwrap();
        let q_adv = soft_assign(&z_adv, &centroids, cfg.alpha, true).unwrap();
        let (dz_v, dmu_v) = kl_grad(
            &q_ref,
            &q_adv,
            &z_adv,
            &centroids,
            cfg.alpha,
            true,
            1.0 / x.nrows() as f64,
        );
        let gamma_c = cfg.gamma_c;
        let gamma_v = cfg.effective_gamma_vat();
        s.model
            .encode_bwd(&dz_v.mapv(|v| v * gamma_v), &cache_adv, true);
        let d_xhat = reconstruction_grad(&x, &xhat);
        let dz_extra = dz_c.mapv(|v| v * gamma_c);
        s.model.backward(&d_xhat, Some(&dz_extra), &cache);
        let dmu = dmu_c.mapv(|v| v * gamma_c) + dmu_v.mapv(|v| v * gamma_v);
        s.centroids.grad.scaled_add(1.0, &dmu.into_dyn());
        let analytic = s.flat_grads();

        let (x_c, x_adv_c, p_c, q_ref_c) = (x.clone(), x_adv.clone(), p_fix.clone(), q_ref.clone());
        let report = grad_check(
            &mut s,
            &mut move |s: &mut Ssidec<'_>| {
                let (xhat, z, _) = s.model.forward(&x_c, Mode::TrainFrozen).unwrap();
                let l_rec = reconstruction_loss(&x_c, &xhat).unwrap();
                let centroids = s.centroid_array();
                let q = soft_assign(&z, &centroids, cfg.alpha, true).unwrap();
                let l_c = kl_div(&p_c, &q);
                let (z_adv, _) = s.model.encode_fwd(&x_adv_c, Mode::Eval).unwrap();
                let q_adv = soft_assign(&z_adv, &centroids, cfg.alpha, true).unwrap();
                let l_v = kl_div(&q_ref_c, &q_adv) / x_c.nrows() as f64;
                l_rec + gamma_c * l_c + gamma_v * l_v
            },
            &analytic,
            1e-5,
            40,
            23,
        );
        assert!(
            report.max_rel < 1e-4,
            "worst {} at {}[{}]",
            report.max_rel,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn decoder_gradients_come_only_from_reconstruction() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = random_matrix(&mut rng, 4, 64);
        let mu = random_matrix(&mut rng, 3, 4);
        let p = {
            let mut m = small_model(31);
            let s = Ssidec::new(&mut m, mu.clone());
            let (z, _) = s.model.encode_fwd(&x, Mode::TrainFrozen).unwrap();
            let q = soft_assign(&z, &s.centroid_array(), cfg.alpha, true).unwrap();
            target_distribution(&q)
        };

        // Full objective.
        let mut m1 = small_model(31);
        let mut s1 = Ssidec::new(&mut m1, mu.clone());
        let mut rng1 = ChaCha8Rng::seed_from_u64(32);
        joint_forward_backward(&mut s1, &x, &p, &cfg, &mut rng1, Mode::TrainFrozen).unwrap();
        let mut dec1 = Vec::new();
        s1.model
            .visit_decoder_params(&mut |_, prm| dec1.extend(prm.grad.iter().copied()));
        let mut cent1 = Vec::new();
        cent1.extend(s1.centroids.grad.iter().copied());

        // Reconstruction-only objective.
        let mut cfg0 = cfg.clone();
        cfg0.gamma_c = 0.0;
        cfg0.gamma_vat = 0.0;
        let mut m2 = small_model(31);
        let mut s2 = Ssidec::new(&mut m2, mu.clone());
        let mut rng2 = ChaCha8Rng::seed_from_u64(32);
        joint_forward_backward(&mut s2, &x, &p, &cfg0, &mut rng2, Mode::TrainFrozen).unwrap();
        let mut dec2 = Vec::new();
        s2.model
            .visit_decoder_params(&mut |_, prm| dec2.extend(prm.grad.iter().copied()));

        // Decoder gradients identical with and without the clustering and
        // adversarial terms; centers receive gradient only from those terms.
        assert_eq!(dec1, dec2);
        assert!(cent1.iter().any(|&g| g != 0.0));
        assert!(s2.centroids.grad.iter().all(|&g| g == 0.0));

        // Encoder gradients must differ (they carry all three terms).
        let mut enc1 = Vec::new();
        s1.model
            .visit_encoder_params(&mut |_, prm| enc1.extend(prm.grad.iter().copied()));
        let mut enc2 = Vec::new();
        s2.model
            .visit_encoder_params(&mut |_, prm| enc2.extend(prm.grad.iter().copied()));
        assert_ne!(enc1, enc2);
    }

    #[test]
    fn disabled_regularizers_reduce_to_pure_reconstruction_steps() {
        let mut cfg = small_config();
        cfg.gamma_c = 0.0;
        cfg.gamma_vat = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = random_matrix(&mut rng, 6, 64);
        let mu = random_matrix(&mut rng, 3, 4);
        let p = Array2::from_elem((6, 3), 1.0 / 3.0);

        // Joint step with both weights zero.
        let mut m1 = small_model(41);
        let mut s = Ssidec::new(&mut m1, mu.clone());
        let mut adam1 = Adam::new(cfg.clustering_lr);
        let mut step_rng = ChaCha8Rng::seed_from_u64(42);
        let rng_before = step_rng.clone();
        for _ in 0..3 {
            joint_step(&mut s, &x, &p, &cfg, &mut step_rng, &mut adam1).unwrap();
        }
        // The adversarial branch is off, so the RNG must never be touched.
        assert_eq!(step_rng, rng_before);
        let centroids_after = s.centroid_array();
        drop(s);

        // Reference: plain reconstruction training of the bare model.
        let mut m2 = small_model(41);
        let mut adam2 = Adam::new(cfg.clustering_lr);
        for _ in 0..3 {
            m2.zero_grads();
            let (xhat, _z, cache) = m2.forward(&x, Mode::Train).unwrap();
            let d_xhat = reconstruction_grad(&x, &xhat);
            m2.backward(&d_xhat, None, &cache);
            adam2.step(&mut m2).unwrap();
        }

        assert_eq!(m1.flat_values(), m2.flat_values());
        assert_eq!(centroids_after, mu);
    }

    #[test]
    fn joint_steps_descend_on_a_fixed_batch() {
        let mut cfg = small_config();
        cfg.clustering_lr = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = random_matrix(&mut rng, 8, 64).mapv(|v| v.abs());
        let mut model = small_model(51);
        let (z0, _) = model.encode_fwd(&x, Mode::Eval).unwrap();
        let mu = init_centroids_unsup(&z0, 3, 2, 52).unwrap();
        let mut s = Ssidec::new(&mut model, mu);
        let q0 = soft_assign(&z0, &s.centroid_array(), cfg.alpha, true).unwrap();
        let p = target_distribution(&q0);

        let mut adam = Adam::new(cfg.clustering_lr);
        let mut step_rng = ChaCha8Rng::seed_from_u64(53);
        let mut totals = Vec::new();
        for _ in 0..100 {
            let stats = joint_step(&mut s, &x, &p, &cfg, &mut step_rng, &mut adam).unwrap();
            totals.push(stats.total(&cfg));
        }
        let decreases = totals.windows(2).filter(|w| w[1] <= w[0] + 1e-9).count();
        assert!(
            decreases as f64 >= 0.85 * (totals.len() - 1) as f64,
            "only {decreases} of {} steps descended",
            totals.len() - 1
        );
        assert!(totals.last().unwrap() < &totals[0]);
    }

    fn blob_inputs(rng: &mut ChaCha8Rng, per_class: usize, k: usize) -> (Array2<f64>, Vec<usize>) {
        // Distinct half-window activation patterns per class, far apart in
        // input space, with small noise.
        let n = per_class * k;
        let mut x = Array2::zeros((n, 64));
        let mut truth = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % k;
            truth.push(c);
            for j in 0..64 {
                let base = if (j / 8) % k == c { 4.0 } else { 0.2 };
                x[[i, j]] = base + rng.gen_range(-0.3..0.3);
            }
        }
        (x, truth)
    }

    #[test]
    fn run_ssidec_updates_targets_on_schedule_and_tracks_changes() {
        let mut cfg = small_config();
        cfg.clustering_epochs = 5;
        cfg.p_update_interval = 2;
        cfg.tol = 0.0; // `changed < 0` never holds: no early stop.
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let (x, _) = blob_inputs(&mut rng, 8, 2);
        let mut model = small_model(61);
        let out = run_ssidec(&mut model, &x, &vec![None; 16], 2, &cfg, 62).unwrap();
        assert_eq!(out.epochs_run, 5);
        // Refreshes at epochs 0 (initial), 2, 4.
        assert_eq!(out.p_updates, 3);
        assert_eq!(out.change_trajectory.len(), 2);
        assert_eq!(out.loss_curve.len(), 5);
        assert_eq!(out.pseudo.len(), 16);
    }

    #[test]
    fn run_ssidec_stops_at_first_refresh_with_loose_tolerance() {
        let mut cfg = small_config();
        cfg.clustering_epochs = 50;
        cfg.p_update_interval = 2;
        cfg.tol = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let (x, _) = blob_inputs(&mut rng, 8, 2);
        let mut model = small_model(71);
        let out = run_ssidec(&mut model, &x, &vec![None; 16], 2, &cfg, 72).unwrap();
        // Stops at the epoch-2 refresh, before training that epoch.
        assert_eq!(out.epochs_run, 2);
        assert_eq!(out.change_trajectory.len(), 1);
        assert!(out.change_trajectory[0] < 1.0);
    }

    #[test]
    fn run_ssidec_zero_epochs_reports_initial_assignments_untouched() {
        let mut cfg = small_config();
        cfg.clustering_epochs = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let (x, _) = blob_inputs(&mut rng, 6, 2);
        let mut model = small_model(81);
        let before = model.flat_values();
        let out = run_ssidec(&mut model, &x, &vec![None; 12], 2, &cfg, 82).unwrap();
        assert_eq!(model.flat_values(), before);
        assert_eq!(out.pseudo, out.initial_pseudo);
        assert_eq!(out.epochs_run, 0);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn run_ssidec_semisup_keeps_class_indexed_clusters() {
        let mut cfg = small_config();
        cfg.clustering_epochs = 6;
        cfg.p_update_interval = 3;
        cfg.tol = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let (x, truth) = blob_inputs(&mut rng, 10, 2);
        // One labeled sample per class, rest unlabeled.
        let mut labels: Vec<Option<usize>> = vec![None; 20];
        labels[0] = Some(truth[0]);
        labels[1] = Some(truth[1]);
        let mut model = small_model(91);
        let out = run_ssidec(&mut model, &x, &labels, 2, &cfg, 92).unwrap();
        // Cluster indices are class indices: direct accuracy, no remapping.
        let correct = out
            .pseudo
            .iter()
            .zip(truth.iter())
            .filter(|(a, b)| a == b)
            .count();
        assert!(
            correct >= 18,
            "only {correct}/20 pseudo-labels match the true classes"
        );
    }

    #[test]
    fn run_ssidec_is_deterministic_per_seed() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let (x, _) = blob_inputs(&mut rng, 6, 2);
        let labels = vec![None; 12];
        let mut m1 = small_model(101);
        let out1 = run_ssidec(&mut m1, &x, &labels, 2, &cfg, 102).unwrap();
        let mut m2 = small_model(101);
        let out2 = run_ssidec(&mut m2, &x, &labels, 2, &cfg, 102).unwrap();
        assert_eq!(m1.flat_values(), m2.flat_values());
        assert_eq!(out1.pseudo, out2.pseudo);
        assert_eq!(out1.centroids, out2.centroids);
        assert_eq!(
            out1.loss_curve.iter().map(|l| l.rec).collect::<Vec<_>>(),
            out2.loss_curve.iter().map(|l| l.rec).collect::<Vec<_>>()
        );
    }

    #[test]
    fn run_ssidec_rejects_bad_shapes_and_small_k() {
        let cfg = small_config();
        let mut model = small_model(110);
        let x = Array2::<f64>::zeros((4, 64));
        assert!(run_ssidec(&mut model, &x, &[None, None], 2, &cfg, 0).is_err());
        assert!(run_ssidec(&mut model, &x, &vec![None; 4], 1, &cfg, 0).is_err());
        let empty = Array2::<f64>::zeros((0, 64));
        assert!(run_ssidec(&mut model, &empty, &[], 2, &cfg, 0).is_err());
    }
}
