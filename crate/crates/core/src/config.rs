//! Experiment configuration: every tunable the three training stages read,
//! plus ablation switches and dataset plumbing.
//!
//! A config is a flat struct so it can round-trip through a flat TOML file
//! whose keys mirror the field names exactly. Defaults follow the published
//! parameter table at reproduction scale; [`TrainingConfig::desk_profile`]
//! shrinks the epoch budgets so the full pipeline runs in seconds-to-minutes
//! for tests and local iteration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

/// Which pipeline the harness drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Stages 1-3: pre-train, semi-supervised clustering, classifier.
    Semisup,
    /// Stages 1-2 only, k-means centroid init, evaluated by clustering metrics.
    Unsup,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Semisup => write!(f, "semisup"),
            RunMode::Unsup => write!(f, "unsup"),
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "semisup" | "semi-supervised" | "semisupervised" => Ok(RunMode::Semisup),
            "unsup" | "unsupervised" => Ok(RunMode::Unsup),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected 'semisup' or 'unsup')"
            ))),
        }
    }
}

/// Full experiment configuration. Serializable, hashable, and embedded into
/// every result record so a run can be replayed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Task identifier, e.g. "C1".."C5", "M1", "UnsupC1", "UnsupM1", or the
    /// synthetic desk tasks "SynthK" (K = class count, e.g. "Synth3").
    pub task: String,
    /// Pipeline variant to run.
    pub mode: RunMode,
    /// Master seed; per-trial seeds are `seed + trial_index`.
    pub seed: u64,
    /// Number of independent trials to average over.
    pub trials: usize,

    // Data geometry.
    /// Raw window length fed to the FFT front end.
    pub window: usize,
    /// Segmentation stride (window overlap = window - stride).
    pub stride: usize,
    /// Spectrum dimension entering the network (first half of the DFT).
    pub n_input: usize,
    /// Embedding (latent) dimension.
    pub n_rep: usize,
    /// Number of health-condition classes / clusters. 0 = derive from task.
    pub n_cluster: usize,
    /// Labeled samples per class.
    pub n_sp: usize,
    /// Unlabeled samples per class (per condition for multi-load tasks).
    pub n_un: usize,
    /// Test samples per class (per condition for multi-load tasks).
    pub n_test: usize,
    /// For fraction-labeled tasks (C5/M1 style): fraction of the training pool
    /// labeled per class, overriding `n_sp` when > 0.
    pub label_fraction: f64,

    // Stage 1: autoencoder pre-training.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Stop early when the best loss has not improved by more than 1e-5 for
    /// this many epochs; 0 disables early stopping.
    pub pretrain_patience: usize,

    // Stage 2: joint clustering optimization.
    pub clustering_epochs: usize,
    pub clustering_lr: f64,
    /// Student-t degrees of freedom in the soft assignment.
    pub alpha: f64,
    /// Clustering-loss coefficient.
    pub gamma_c: f64,
    /// Adversarial-smoothing loss coefficient.
    pub gamma_vat: f64,
    /// Adversarial perturbation radius (per-sample L2 norm).
    pub vat_eps: f64,
    /// Finite-difference radius for the perturbation power iteration.
    pub vat_xi: f64,
    /// Power-iteration count for the perturbation direction.
    pub vat_power_iters: usize,
    /// Apply adversarial smoothing to all samples (true) or unlabeled only.
    pub vat_all: bool,
    /// Target-distribution refresh interval, in epochs.
    pub p_update_interval: usize,
    /// Stop when the fraction of pseudo-labels that changed since the last
    /// refresh drops below this.
    pub tol: f64,
    /// Use squared Euclidean distance inside the Student-t kernel (the
    /// canonical choice); false switches to plain Euclidean.
    pub squared_distance: bool,
    /// Restart count for k-means centroid initialization.
    pub kmeans_restarts: usize,

    // Stage 3: discriminative training.
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    /// Relative weight of the pseudo-labeled loss term (1.0 = equal weight).
    pub pseudo_weight: f64,

    // Shared optimization knobs.
    pub batch_size: usize,

    // Architecture toggles.
    /// Give the width-1 convolution in each skip block its own activation.
    pub skip_conv_activation: bool,

    // Ablations.
    /// Skip stage-2 training; pseudo-label from the initial soft assignment.
    pub no_idec: bool,
    /// Disable adversarial smoothing (gamma_vat treated as 0).
    pub no_vat: bool,
    /// Skip stage 2 entirely; fine-tune encoder + head on labeled data only.
    pub plain_cnn: bool,
    /// Zero the decoder skip connections (plain convolutional autoencoder).
    pub no_skip: bool,

    // Dataset plumbing.
    /// Directory of canonical binary records; empty = synthetic corpus.
    pub data_dir: String,
    /// Manifest CSV path; empty = `<data_dir>/manifest.csv`.
    pub manifest: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            task: "Synth3".to_string(),
            mode: RunMode::Semisup,
            seed: 0,
            trials: 1,
            window: 1024,
            stride: 512,
            n_input: 512,
            n_rep: 32,
            n_cluster: 0,
            n_sp: 1,
            n_un: 300,
            n_test: 300,
            label_fraction: 0.0,
            pretrain_epochs: 4000,
            pretrain_lr: 1e-3,
            pretrain_patience: 200,
            clustering_epochs: 100,
            clustering_lr: 1e-4,
            alpha: 1.0,
            gamma_c: 0.1,
            gamma_vat: 1.0,
            vat_eps: 2.0,
            vat_xi: 1e-6,
            vat_power_iters: 1,
            vat_all: true,
            p_update_interval: 20,
            tol: 1e-4,
            squared_distance: true,
            kmeans_restarts: 10,
            classifier_epochs: 4000,
            classifier_lr: 1e-4,
            pseudo_weight: 1.0,
            batch_size: 32,
            skip_conv_activation: true,
            no_idec: false,
            no_vat: false,
            plain_cnn: false,
            no_skip: false,
            data_dir: String::new(),
            manifest: String::new(),
        }
    }
}

impl TrainingConfig {
    /// Reduced-epoch profile for tests and local iteration, sized so a full
    /// three-trial experiment finishes in minutes on one desktop core. Metric
    /// contracts in the acceptance suite are calibrated against this profile.
    pub fn desk_profile() -> Self {
        TrainingConfig {
            pretrain_epochs: 100,
            clustering_epochs: 50,
            classifier_epochs: 150,
            n_un: 100,
            n_test: 100,
            ..Default::default()
        }
    }

    /// Full-scale profile used for the recorded-data benchmarks (the default
    /// parameter set, spelled out for symmetry with `desk_profile`).
    pub fn benchmark_profile() -> Self {
        TrainingConfig::default()
    }

    /// Load from a flat TOML file whose keys mirror the field names.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainingConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the fully resolved config (stable across runs of the same
    /// binary; used to tie checkpoints and results to their settings).
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    /// Check cross-field consistency. Called after deserialization and before
    /// any run.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        }
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be >= 1".into()));
        }
        if self.n_input != self.window / 2 {
            return Err(Error::Config(format!(
                "n_input ({}) must equal window/2 ({})",
                self.n_input,
                self.window / 2
            )));
        }
        if self.n_rep == 0 {
            return Err(Error::Config("n_rep must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.p_update_interval == 0 {
            return Err(Error::Config("p_update_interval must be >= 1".into()));
        }
        positive("pretrain_lr", self.pretrain_lr)?;
        positive("clustering_lr", self.clustering_lr)?;
        positive("classifier_lr", self.classifier_lr)?;
        positive("alpha", self.alpha)?;
        positive("vat_eps", self.vat_eps)?;
        positive("vat_xi", self.vat_xi)?;
        if !(0.0..=1.0).contains(&self.tol) {
            return Err(Error::Config(format!(
                "tol must be in [0, 1], got {}",
                self.tol
            )));
        }
        if self.gamma_c < 0.0 || self.gamma_vat < 0.0 {
            return Err(Error::Config("loss coefficients must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return Err(Error::Config(format!(
                "label_fraction must be in [0, 1], got {}",
                self.label_fraction
            )));
        }
        if self.pseudo_weight < 0.0 {
            return Err(Error::Config("pseudo_weight must be >= 0".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Config("kmeans_restarts must be >= 1".into()));
        }
        if self.plain_cnn && (self.no_idec || self.no_vat) {
            return Err(Error::Config(
                "plain_cnn excludes no_idec/no_vat (there is no stage 2 to ablate)".into(),
            ));
        }
        Ok(())
    }

    /// Effective adversarial-smoothing coefficient after ablations.
    pub fn effective_gamma_vat(&self) -> f64 {
        if self.no_vat {
            0.0
        } else {
            self.gamma_vat
        }
    }

    /// Per-trial seed fan-out.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}
