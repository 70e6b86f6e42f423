//! Synthetic vibration corpus for desk-scale testing.
//!
//! Every class shares a dominant machine hum, and differs only in two
//! weaker tones: an amplitude-modulated resonance tone and a low-band tone,
//! at class-distinct frequencies. Both class tones drift slowly in amplitude
//! relative to the hum and wobble slightly in frequency (speed fluctuation),
//! over a strong broadband noise floor. Windows of one class therefore vary
//! noticeably and overlap other classes in their dominant bins — distance
//! clustering on raw spectra makes real mistakes, while the class structure
//! stays recoverable. Four operating conditions ("0hp".."3hp") are emitted
//! per class with small load-dependent frequency shifts and noise-level
//! changes, mimicking how real rigs vary across motor loads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal::RawRecord;

/// Condition tags emitted for every class, mirroring the four motor loads of
/// the reference rig.
pub const SYNTH_CONDITIONS: [&str; 4] = ["0hp", "1hp", "2hp", "3hp"];

/// Default record length: 255 windows of 1024 samples at stride 512.
pub const SYNTH_RECORD_LEN: usize = 131_072;

const SAMPLE_RATE_HZ: f64 = 12_000.0;

/// Generate one record per (class, condition) pair, `SYNTH_RECORD_LEN`
/// samples each. Deterministic per seed.
pub fn synth_corpus(n_classes: usize, seed: u64) -> Result<Vec<RawRecord>> {
    synth_corpus_with_len(n_classes, seed, SYNTH_RECORD_LEN)
}

/// As [`synth_corpus`] with an explicit record length (tests use short
/// records to keep window-allocation paths fast).
pub fn synth_corpus_with_len(n_classes: usize, seed: u64, len: usize) -> Result<Vec<RawRecord>> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "synth_corpus: need at least 2 classes, got {n_classes}"
        )));
    }
    if n_classes > 10 {
        // Carrier frequencies are spread below the 6 kHz Nyquist limit;
        // beyond 10 classes they would collide or alias.
        return Err(Error::InvalidArgument(format!(
            "synth_corpus: at most 10 separable classes supported, got {n_classes}"
        )));
    }
    if len < 1024 {
        return Err(Error::InvalidArgument(format!(
            "synth_corpus: record length must be >= 1024, got {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut records = Vec::with_capacity(n_classes * SYNTH_CONDITIONS.len());
    for class in 0..n_classes {
        // Class-distinct tones, all below the 6 kHz Nyquist limit (the
        // resonance tone tops out at 3770 Hz for class 9).
        let f1 = 2600.0 + 130.0 * class as f64;
        let f2 = 820.0 + 95.0 * class as f64;
        let fm = 17.0 + 6.0 * class as f64;
        for (load, cond) in SYNTH_CONDITIONS.iter().enumerate() {
            // Higher load: slight slip (frequency shift), more noise.
            let shift = 1.0 - 0.004 * load as f64;
            let noise_sd = 0.85 + 0.1 * load as f64;
            let amp = 1.0 + 0.05 * load as f64;
            let noise = Normal::new(0.0, noise_sd).expect("valid sd");
            let phase_h: f64 = rng.gen_range(0.0..tau);
            let phase1: f64 = rng.gen_range(0.0..tau);
            let phase2: f64 = rng.gen_range(0.0..tau);
            let phase_m: f64 = rng.gen_range(0.0..tau);
            // Slow independent amplitude drifts of the two class tones
            // against the stable hum, and a common speed wobble.
            let drift1_f: f64 = rng.gen_range(0.4..1.2);
            let drift1_p: f64 = rng.gen_range(0.0..tau);
            let drift2_f: f64 = rng.gen_range(0.4..1.2);
            let drift2_p: f64 = rng.gen_range(0.0..tau);
            let wobble_f: f64 = rng.gen_range(0.15..0.5);
            let wobble_p: f64 = rng.gen_range(0.0..tau);
            let dt = 1.0 / SAMPLE_RATE_HZ;
            let mut ph1 = phase1;
            let mut ph2 = phase2;
            let mut samples = Vec::with_capacity(len);
            for t in 0..len {
                let time = t as f64 / SAMPLE_RATE_HZ;
                let wobble = 1.0 + 0.0025 * (tau * wobble_f * time + wobble_p).sin();
                ph1 += tau * f1 * shift * wobble * dt;
                ph2 += tau * f2 * shift * wobble * dt;
                let env = 1.0 + 0.6 * (tau * fm * shift * time + phase_m).sin();
                let d1 = 1.0 + 0.28 * (tau * drift1_f * time + drift1_p).sin();
                let d2 = 1.0 + 0.28 * (tau * drift2_f * time + drift2_p).sin();
                let hum = 1.55 * (tau * 1750.0 * shift * time + phase_h).sin();
                let tones = d1 * 0.55 * env * ph1.sin() + d2 * 0.35 * ph2.sin();
                samples.push(amp * (hum + tones) + noise.sample(&mut rng));
            }
            records.push(RawRecord {
                samples,
                sample_rate_hz: SAMPLE_RATE_HZ,
                class_label: class,
                condition_tag: (*cond).to_string(),
            });
        }
    }
    Ok(records)
}
