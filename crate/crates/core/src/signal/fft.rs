//! Windowing and frequency-domain preprocessing.

use ndarray::Array1;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Slice a record into fixed-length windows at the given stride.
///
/// Returns `floor((len - window) / stride) + 1` windows in record order; a
/// record shorter than one window is rejected.
pub fn segment(samples: &[f64], window: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "segment: window and stride must be >= 1".into(),
        ));
    }
    if samples.len() < window {
        return Err(Error::RecordTooShort {
            len: samples.len(),
            window,
        });
    }
    let count = (samples.len() - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        out.push(samples[start..start + window].to_vec());
    }
    Ok(out)
}

/// Number of windows `segment` would produce, without materializing them.
pub fn segment_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Transform one time-domain window into the magnitudes of the first half of
/// its DFT, max-normalized into [0, 1].
///
/// A window of length L yields L/2 bins (DC included as index 0). An all-zero
/// window passes through unchanged: the normalization guard leaves the zero
/// vector alone rather than dividing by zero.
pub fn fft_preprocess(window: &[f64]) -> Result<Array1<f64>> {
    if window.len() < 2 || window.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "fft_preprocess: window length must be even and >= 2, got {}",
            window.len()
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fft_preprocess input".into()));
    }
    let n = window.len();
    let mut buf: Vec<Complex<f64>> = window.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut mags = Array1::zeros(n / 2);
    for (i, c) in buf[..n / 2].iter().enumerate() {
        mags[i] = c.norm();
    }
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        mags.mapv_inplace(|v| v / max);
    }
    Ok(mags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// O(n^2) DFT magnitude of the first half, max-normalized — the oracle
    /// `fft_preprocess` must agree with.
    fn naive_half_spectrum(window: &[f64]) -> Vec<f64> {
        let n = window.len();
        let mut mags = vec![0.0; n / 2];
        for (k, m) in mags.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &x) in window.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            *m = (re * re + im * im).sqrt();
        }
        let max = mags.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            for m in &mut mags {
                *m /= max;
            }
        }
        mags
    }

    #[test]
    fn segment_counts_match_hand_worked_cases() {
        assert_eq!(segment(&vec![0.0; 1024], 1024, 512).unwrap().len(), 1);
        assert_eq!(segment(&vec![0.0; 2048], 1024, 512).unwrap().len(), 3);
        assert!(matches!(
            segment(&vec![0.0; 1023], 1024, 512),
            Err(Error::RecordTooShort { len: 1023, window: 1024 })
        ));
    }

    #[test]
    fn segment_windows_cover_prefix_exactly() {
        let samples: Vec<f64> = (0..2048).map(|i| i as f64).collect();
        let wins = segment(&samples, 1024, 512).unwrap();
        for (i, w) in wins.iter().enumerate() {
            assert_eq!(w.as_slice(), &samples[i * 512..i * 512 + 1024]);
        }
        // Non-overlapping stride reconstructs the covered prefix.
        let wins = segment(&samples, 512, 512).unwrap();
        let recon: Vec<f64> = wins.concat();
        assert_eq!(recon, samples[..2048]);
    }

    #[test]
    fn zero_window_stays_zero() {
        let spec = fft_preprocess(&vec![0.0; 1024]).unwrap();
        assert_eq!(spec.len(), 512);
        assert!(spec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_aligned_cosine_peaks_at_its_bin() {
        let n = 1024;
        let window: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 10.0 * t as f64 / n as f64).cos())
            .collect();
        let spec = fft_preprocess(&window).unwrap();
        assert!((spec[10] - 1.0).abs() < 1e-9);
        for (i, &v) in spec.iter().enumerate() {
            if i != 10 {
                assert!(v < 1e-9, "bin {i} leaked energy: {v}");
            }
        }
    }

    #[test]
    fn constant_signal_is_pure_dc() {
        let spec = fft_preprocess(&vec![1.0; 1024]).unwrap();
        assert!((spec[0] - 1.0).abs() < 1e-12);
        assert!(spec.iter().skip(1).all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..3 {
            let window: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = fft_preprocess(&window).unwrap();
            let slow = naive_half_spectrum(&window);
            for (i, (&a, &b)) in fast.iter().zip(&slow).enumerate() {
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-6, "bin {i}: fast={a} slow={b}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_odd_lengths() {
        assert!(fft_preprocess(&[1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(fft_preprocess(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn output_always_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let window: Vec<f64> = (0..256).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let spec = fft_preprocess(&window).unwrap();
        assert_eq!(spec.len(), 128);
        assert!(spec.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
