//! Signal ingestion: raw vibration records, windowing, FFT preprocessing,
//! synthetic corpora, and assembly of the labeled/unlabeled/test splits each
//! diagnostic task prescribes.

mod fft;
mod io;
mod synth;
mod task;

pub use fft::{fft_preprocess, segment, segment_count};
pub use io::{import_corpus, read_manifest, read_record, write_record, ManifestEntry};
pub use synth::{synth_corpus, synth_corpus_with_len, SYNTH_CONDITIONS, SYNTH_RECORD_LEN};
pub use task::{build_task, task_def, TaskDef};

use ndarray::{Array1, Array2};

/// One contiguous vibration recording with its ground-truth class and an
/// operating-condition tag (load identifier such as "0hp").
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub class_label: usize,
    pub condition_tag: String,
}

/// One network input: a half-spectrum of a single window, its (possibly
/// withheld) class label, and the condition tag it came from.
///
/// Labels are populated for every split, including the nominally unlabeled
/// ones: ground truth is retained for evaluation, and the training code is
/// responsible for reading labels only from the supervised split.
#[derive(Debug, Clone)]
pub struct SpectrumSample {
    pub spectrum: Array1<f64>,
    pub label: Option<usize>,
    pub condition_tag: String,
}

/// The three data pools a diagnostic task trains and evaluates on.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    /// Labeled training samples (labels always present).
    pub supervised: Vec<SpectrumSample>,
    /// Unlabeled training samples; ground truth retained for evaluation only.
    pub unsupervised: Vec<SpectrumSample>,
    /// Held-out evaluation samples.
    pub test: Vec<SpectrumSample>,
    /// Number of health-condition classes.
    pub n_cluster: usize,
}

/// Stack sample spectra into an `[n, n_input]` matrix, preserving order.
pub fn spectra_matrix(samples: &[SpectrumSample]) -> Array2<f64> {
    if samples.is_empty() {
        return Array2::zeros((0, 0));
    }
    let d = samples[0].spectrum.len();
    let mut m = Array2::zeros((samples.len(), d));
    for (i, s) in samples.iter().enumerate() {
        m.row_mut(i).assign(&s.spectrum);
    }
    m
}

/// Extract the ground-truth labels of a sample list (all must be present).
pub fn truth_labels(samples: &[SpectrumSample]) -> Vec<usize> {
    samples
        .iter()
        .map(|s| s.label.expect("ground-truth label present"))
        .collect()
}
