//! Experiment orchestration: running the full three-stage pipeline (and its
//! ablations) over a task, repeating it across trials, and summarizing the
//! results.
//!
//! A run is reproducible from its config alone: the corpus, the task split,
//! and every stage's randomness derive from `config.seed`, with each trial
//! offset to its own seed. Ablations are config flags — `plain_cnn` trains
//! the classifier architecture on the labeled samples only (no pretraining,
//! no clustering), `no_idec` skips the clustering epochs and pseudo-labels
//! straight from the initial centers, `no_vat` zeroes the adversarial term,
//! and `no_skip` removes the autoencoder's skip connections.

mod report;

pub use report::{emit_report, emit_sweep_report};

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::{augment_labels, train_classifier, ClassifierModel};
use crate::config::{RunMode, TrainingConfig};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::metrics::{evaluate, evaluate_predictions, trial_summary, EvalReport, Summary};
use crate::sccae::{pretrain, SccaeModel};
use crate::signal::{
    build_task, import_corpus, spectra_matrix, synth_corpus, task_def, truth_labels, RawRecord,
    TaskSplit,
};
use crate::ssidec::{pseudo_labels, run_ssidec, soft_assign, EpochLosses};

/// Wall-clock seconds spent in each stage of one trial.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timings {
    pub stage1_s: f64,
    pub stage2_s: f64,
    pub stage3_s: f64,
}

/// Everything recorded about one trial.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Eval-set quality right after pre-training (initial centers).
    pub stage1: Option<EvalReport>,
    /// Eval-set quality after the clustering stage.
    pub stage2: Option<EvalReport>,
    /// Final quality: the classifier in semi-supervised mode, the clustering
    /// assignment in unsupervised mode.
    pub final_eval: EvalReport,
    /// Unsupervised baseline: k-means directly on the raw spectra.
    pub raw_kmeans: Option<EvalReport>,
    /// Agreement of the pseudo-labels with ground truth on the unlabeled
    /// training pool (semi-supervised mode only).
    pub pseudo_label_accuracy: Option<f64>,
    pub pretrain_curve: Vec<f64>,
    pub clustering_curve: Vec<EpochLosses>,
    pub classifier_curve: Vec<f64>,
    pub change_trajectory: Vec<f64>,
    pub timings: Timings,
}

/// Mean/std/min/max of the headline metrics across trials.
#[derive(Debug, Clone, Serialize)]
pub struct ResultSummary {
    pub acc: Summary,
    pub nmi: Summary,
    pub stage1_acc: Option<Summary>,
    pub stage2_acc: Option<Summary>,
}

/// Raw per-sample artifacts kept out of the JSON result (written as binary
/// sidecars by the report writer). Taken from trial 0's evaluation set.
#[derive(Debug, Clone)]
pub struct Extras {
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
}

/// A full experiment: resolved config, per-trial records, and summaries.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub task: String,
    pub mode: RunMode,
    pub config_hash: String,
    pub config: TrainingConfig,
    pub n_cluster: usize,
    pub trials: Vec<TrialRecord>,
    pub summary: ResultSummary,
    #[serde(skip)]
    pub extras: Option<Extras>,
}

/// Derive a per-stage seed from a trial seed. Stages use disjoint streams so
/// that, for example, classifier shuffling never replays pretraining draws.
fn stage_seed(trial_seed: u64, stage: u64) -> u64 {
    trial_seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Materialize the corpus a task runs on: generated for the synthetic tasks,
/// imported from a manifest for everything else.
pub fn load_corpus(config: &TrainingConfig) -> Result<Vec<RawRecord>> {
    let def = task_def(&config.task)?;
    if config.task.starts_with("Synth") {
        return synth_corpus(def.n_cluster, config.seed);
    }
    if config.data_dir.is_empty() || config.manifest.is_empty() {
        return Err(Error::Config(format!(
            "task {} reads recorded data: set data_dir and manifest",
            config.task
        )));
    }
    import_corpus(
        std::path::Path::new(&config.data_dir),
        std::path::Path::new(&config.manifest),
    )
}

/// The training pool in row order (supervised rows first), with per-row
/// labels present only on the supervised rows.
fn training_pool(split: &TaskSplit) -> (Array2<f64>, Vec<Option<usize>>) {
    let n = split.supervised.len() + split.unsupervised.len();
    let d = split
        .supervised
        .first()
        .or_else(|| split.unsupervised.first())
        .map(|s| s.spectrum.len())
        .unwrap_or(0);
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, s) in split
        .supervised
        .iter()
        .chain(split.unsupervised.iter())
        .enumerate()
    {
        x.row_mut(i).assign(&s.spectrum);
        labels.push(if i < split.supervised.len() {
            Some(s.label.expect("supervised sample carries a label"))
        } else {
            None
        });
    }
    (x, labels)
}

fn summarize(trials: &[TrialRecord]) -> Result<ResultSummary> {
    let accs: Vec<f64> = trials.iter().map(|t| t.final_eval.acc).collect();
    let nmis: Vec<f64> = trials.iter().map(|t| t.final_eval.nmi).collect();
    let stage1: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.stage1.as_ref().map(|e| e.acc))
        .collect();
    let stage2: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.stage2.as_ref().map(|e| e.acc))
        .collect();
    Ok(ResultSummary {
        acc: trial_summary(&accs)?,
        nmi: trial_summary(&nmis)?,
        stage1_acc: if stage1.len() == trials.len() {
            Some(trial_summary(&stage1)?)
        } else {
            None
        },
        stage2_acc: if stage2.len() == trials.len() {
            Some(trial_summary(&stage2)?)
        } else {
            None
        },
    })
}

/// Run the full semi-supervised pipeline (or its ablation selected by the
/// config flags) for every trial and summarize.
pub fn run_semisupervised(config: &TrainingConfig) -> Result<ExperimentResult> {
    run_semisupervised_cached(config, &mut Vec::new())
}

/// As [`run_semisupervised`], but reusing pre-trained stage-1 models from
/// `stage1_cache` (indexed by trial) and filling the cache on first use. The
/// sweep driver uses this when the sweep axis only affects later stages.
pub fn run_semisupervised_cached(
    config: &TrainingConfig,
    stage1_cache: &mut Vec<(SccaeModel, Vec<f64>)>,
) -> Result<ExperimentResult> {
    config.validate()?;
    if config.mode != RunMode::Semisup {
        return Err(Error::Config(format!(
            "run_semisupervised called with mode {}",
            config.mode
        )));
    }
    let corpus = load_corpus(config)?;
    let split = build_task(&config.task, &corpus, config)?;
    if split.supervised.is_empty() {
        return Err(Error::Config(format!(
            "task {} has no labeled split; run it in unsupervised mode",
            config.task
        )));
    }
    let n_cluster = split.n_cluster;
    let (x_train, labels) = training_pool(&split);
    let x_test = spectra_matrix(&split.test);
    let y_test = truth_labels(&split.test);
    let y_unsup = truth_labels(&split.unsupervised);
    let n_sup = split.supervised.len();

    let mut trials = Vec::with_capacity(config.trials);
    let mut extras = None;
    for t in 0..config.trials {
        let (record, trial_extras) = if config.plain_cnn {
            semisup_plain_cnn_trial(config, t, &x_train, &labels, &x_test, &y_test, n_cluster)?
        } else {
            semisup_trial(
                config,
                t,
                &x_train,
                &labels,
                &x_test,
                &y_test,
                &y_unsup,
                n_sup,
                n_cluster,
                stage1_cache,
            )?
        };
        log::info!(
            "trial {t}: final acc {:.4}, nmi {:.4}",
            record.final_eval.acc,
            record.final_eval.nmi
        );
        if t == 0 {
            extras = Some(trial_extras);
        }
        trials.push(record);
    }

    let summary = summarize(&trials)?;
    Ok(ExperimentResult {
        task: config.task.clone(),
        mode: config.mode,
        config_hash: format!("{:016x}", config.config_hash()),
        config: config.clone(),
        n_cluster,
        trials,
        summary,
        extras,
    })
}

#[allow(clippy::too_many_arguments)]
fn semisup_trial(
    config: &TrainingConfig,
    trial: usize,
    x_train: &Array2<f64>,
    labels: &[Option<usize>],
    x_test: &Array2<f64>,
    y_test: &[usize],
    y_unsup: &[usize],
    n_sup: usize,
    n_cluster: usize,
    stage1_cache: &mut Vec<(SccaeModel, Vec<f64>)>,
) -> Result<(TrialRecord, Extras)> {
    let trial_seed = config.trial_seed(trial);
    let mut timings = Timings::default();

    // Stage 1: reconstruction pre-training on the full training pool.
    let t0 = Instant::now();
    let (mut model, pretrain_curve) = if let Some((m, curve)) = stage1_cache.get(trial) {
        (m.clone(), curve.clone())
    } else {
        let mut m = SccaeModel::from_config(config, trial_seed)?;
        let curve = pretrain(&mut m, x_train, config, stage_seed(trial_seed, 1))?;
        stage1_cache.push((m.clone(), curve.clone()));
        (m, curve)
    };
    timings.stage1_s = t0.elapsed().as_secs_f64();

    // Stage-1 snapshot quality: class-mean centers from the labeled rows,
    // nearest-center assignment of the test set.
    let z_train = model.encode_batched(x_train, config.batch_size)?;
    let centers0 = crate::ssidec::init_centroids_semisup(&z_train, labels, n_cluster)?;
    let z_test = model.encode_batched(x_test, config.batch_size)?;
    let q_test0 = soft_assign(&z_test, &centers0, config.alpha, config.squared_distance)?;
    let stage1_eval = evaluate_predictions(y_test, &pseudo_labels(&q_test0), n_cluster)?;

    // Stage 2: joint clustering (skipped entirely by the `no_idec` ablation,
    // which keeps the initial assignments).
    let t1 = Instant::now();
    let mut cfg2 = config.clone();
    if config.no_idec {
        cfg2.clustering_epochs = 0;
    }
    let outcome = run_ssidec(
        &mut model,
        x_train,
        labels,
        n_cluster,
        &cfg2,
        stage_seed(trial_seed, 2),
    )?;
    timings.stage2_s = t1.elapsed().as_secs_f64();

    let z_test2 = model.encode_batched(x_test, config.batch_size)?;
    let q_test2 = soft_assign(
        &z_test2,
        &outcome.centroids,
        config.alpha,
        config.squared_distance,
    )?;
    let stage2_eval = evaluate_predictions(y_test, &pseudo_labels(&q_test2), n_cluster)?;

    let pseudo_unsup = &outcome.pseudo[n_sup..];
    let pseudo_acc = if pseudo_unsup.is_empty() {
        None
    } else {
        let correct = pseudo_unsup
            .iter()
            .zip(y_unsup.iter())
            .filter(|(a, b)| a == b)
            .count();
        Some(correct as f64 / pseudo_unsup.len() as f64)
    };

    // Stage 3: classifier on the label-augmented pool, encoder carried over.
    let t2 = Instant::now();
    let set = augment_labels(x_train, labels, &outcome.pseudo)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(stage_seed(trial_seed, 3));
    let mut clf = ClassifierModel::from_encoder(model.clone(), n_cluster, &mut head_rng)?;
    let classifier_curve = train_classifier(&mut clf, &set, config, stage_seed(trial_seed, 4))?;
    timings.stage3_s = t2.elapsed().as_secs_f64();

    let (pred, _probs) = clf.predict(x_test, config.batch_size)?;
    let final_eval = evaluate_predictions(y_test, &pred, n_cluster)?;

    let extras = Extras {
        embeddings: clf.encoder.encode_batched(x_test, config.batch_size)?,
        labels: y_test.to_vec(),
    };
    Ok((
        TrialRecord {
            trial,
            seed: trial_seed,
            stage1: Some(stage1_eval),
            stage2: Some(stage2_eval),
            final_eval,
            raw_kmeans: None,
            pseudo_label_accuracy: pseudo_acc,
            pretrain_curve,
            clustering_curve: outcome.loss_curve,
            classifier_curve,
            change_trajectory: outcome.change_trajectory,
            timings,
        },
        extras,
    ))
}

/// Supervised-only baseline: the same encoder + head architecture trained
/// from scratch on the labeled samples alone.
fn semisup_plain_cnn_trial(
    config: &TrainingConfig,
    trial: usize,
    x_train: &Array2<f64>,
    labels: &[Option<usize>],
    x_test: &Array2<f64>,
    y_test: &[usize],
    n_cluster: usize,
) -> Result<(TrialRecord, Extras)> {
    let trial_seed = config.trial_seed(trial);
    let mut timings = Timings::default();
    let t0 = Instant::now();

    // Labeled rows only.
    let sup_rows: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|_| i))
        .collect();
    let x_sup = crate::sccae::gather_rows(x_train, &sup_rows);
    let sup_labels: Vec<Option<usize>> = sup_rows.iter().map(|&i| labels[i]).collect();
    let set = augment_labels(&x_sup, &sup_labels, &vec![0; sup_rows.len()])?;

    let encoder = SccaeModel::from_config(config, trial_seed)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(stage_seed(trial_seed, 3));
    let mut clf = ClassifierModel::from_encoder(encoder, n_cluster, &mut head_rng)?;
    let classifier_curve = train_classifier(&mut clf, &set, config, stage_seed(trial_seed, 4))?;
    timings.stage3_s = t0.elapsed().as_secs_f64();

    let (pred, _) = clf.predict(x_test, config.batch_size)?;
    let final_eval = evaluate_predictions(y_test, &pred, n_cluster)?;
    let extras = Extras {
        embeddings: clf.encoder.encode_batched(x_test, config.batch_size)?,
        labels: y_test.to_vec(),
    };
    Ok((
        TrialRecord {
            trial,
            seed: trial_seed,
            stage1: None,
            stage2: None,
            final_eval,
            raw_kmeans: None,
            pseudo_label_accuracy: None,
            pretrain_curve: Vec::new(),
            clustering_curve: Vec::new(),
            classifier_curve,
            change_trajectory: Vec::new(),
            timings,
        },
        extras,
    ))
}

/// Run the unsupervised pipeline: pre-train, cluster with k-means-initialized
/// centers, and evaluate the assignment of the unlabeled pool against its
/// retained ground truth (with the optimal cluster-to-class mapping).
pub fn run_unsupervised(config: &TrainingConfig) -> Result<ExperimentResult> {
    config.validate()?;
    if config.mode != RunMode::Unsup {
        return Err(Error::Config(format!(
            "run_unsupervised called with mode {}",
            config.mode
        )));
    }
    let corpus = load_corpus(config)?;
    let split = build_task(&config.task, &corpus, config)?;
    let n_cluster = split.n_cluster;
    let (x_train, _) = training_pool(&split);
    let labels = vec![None; x_train.nrows()];
    let truth: Vec<usize> = split
        .supervised
        .iter()
        .chain(split.unsupervised.iter())
        .map(|s| s.label.expect("ground truth retained"))
        .collect();

    let mut trials = Vec::with_capacity(config.trials);
    let mut extras = None;
    for t in 0..config.trials {
        let trial_seed = config.trial_seed(t);
        let mut timings = Timings::default();

        let t0 = Instant::now();
        let mut model = SccaeModel::from_config(config, trial_seed)?;
        let pretrain_curve = pretrain(&mut model, &x_train, config, stage_seed(trial_seed, 1))?;
        timings.stage1_s = t0.elapsed().as_secs_f64();

        // Baseline: k-means straight on the raw spectra.
        let raw = kmeans(
            &x_train,
            n_cluster,
            100,
            config.kmeans_restarts,
            stage_seed(trial_seed, 7),
        )?;
        let raw_eval = evaluate(&truth, &raw.assignments, n_cluster)?;

        let t1 = Instant::now();
        let outcome = run_ssidec(
            &mut model,
            &x_train,
            &labels,
            n_cluster,
            config,
            stage_seed(trial_seed, 2),
        )?;
        timings.stage2_s = t1.elapsed().as_secs_f64();

        // Stage-1 quality is the initial (k-means-on-embeddings) assignment;
        // the final quality is the trained assignment.
        let stage1_eval = evaluate(&truth, &outcome.initial_pseudo, n_cluster)?;
        let final_eval = evaluate(&truth, &outcome.pseudo, n_cluster)?;

        log::info!(
            "trial {t}: raw k-means acc {:.4}, initial acc {:.4}, final acc {:.4}",
            raw_eval.acc,
            stage1_eval.acc,
            final_eval.acc
        );
        if t == 0 {
            extras = Some(Extras {
                embeddings: model.encode_batched(&x_train, config.batch_size)?,
                labels: truth.clone(),
            });
        }
        trials.push(TrialRecord {
            trial: t,
            seed: trial_seed,
            stage1: Some(stage1_eval),
            stage2: Some(final_eval.clone()),
            final_eval,
            raw_kmeans: Some(raw_eval),
            pseudo_label_accuracy: None,
            pretrain_curve,
            clustering_curve: outcome.loss_curve,
            classifier_curve: Vec::new(),
            change_trajectory: outcome.change_trajectory,
            timings,
        });
    }

    let summary = summarize(&trials)?;
    Ok(ExperimentResult {
        task: config.task.clone(),
        mode: config.mode,
        config_hash: format!("{:016x}", config.config_hash()),
        config: config.clone(),
        n_cluster,
        trials,
        summary,
        extras,
    })
}

/// Run whichever pipeline the config's mode selects.
pub fn run_experiment(config: &TrainingConfig) -> Result<ExperimentResult> {
    match config.mode {
        RunMode::Semisup => run_semisupervised(config),
        RunMode::Unsup => run_unsupervised(config),
    }
}

/// A hyperparameter axis the sweep driver can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Labeled samples per class.
    NSp,
    /// Embedding width.
    NRep,
    /// Clustering-loss weight.
    GammaC,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_sp" => Ok(SweepAxis::NSp),
            "n_rep" => Ok(SweepAxis::NRep),
            "gamma_c" => Ok(SweepAxis::GammaC),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis `{other}` (expected n_sp, n_rep, or gamma_c)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::NSp => "n_sp",
            SweepAxis::NRep => "n_rep",
            SweepAxis::GammaC => "gamma_c",
        })
    }
}

/// One sweep evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub result: ExperimentResult,
}

/// Evaluate the experiment at several values of one hyperparameter, holding
/// everything else (including the seeds, and therefore the data) fixed.
///
/// Values that only affect the clustering stage and beyond (`gamma_c`) reuse
/// each trial's pre-trained stage-1 model across points, since its inputs
/// are bit-identical.
pub fn run_sweep(
    base: &TrainingConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("run_sweep: no values given".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    let mut stage1_cache: Vec<(SccaeModel, Vec<f64>)> = Vec::new();
    for &value in values {
        let mut config = base.clone();
        match axis {
            SweepAxis::NSp => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "n_sp sweep value {value} is not a positive integer"
                    )));
                }
                config.n_sp = value as usize;
            }
            SweepAxis::NRep => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "n_rep sweep value {value} is not a positive integer"
                    )));
                }
                config.n_rep = value as usize;
            }
            SweepAxis::GammaC => {
                if value < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "gamma_c sweep value {value} is negative"
                    )));
                }
                config.gamma_c = value;
            }
        }
        let result = match (config.mode, axis) {
            (RunMode::Semisup, SweepAxis::GammaC) => {
                run_semisupervised_cached(&config, &mut stage1_cache)?
            }
            (RunMode::Semisup, _) => run_semisupervised(&config)?,
            (RunMode::Unsup, _) => run_unsupervised(&config)?,
        };
        log::info!(
            "sweep {axis} = {value}: acc {:.4} ± {:.4}",
            result.summary.acc.mean,
            result.summary.acc.std
        );
        points.push(SweepPoint {
            axis: axis.to_string(),
            value,
            result,
        });
    }
    Ok(points)
}
