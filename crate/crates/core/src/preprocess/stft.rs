//! Short-time Fourier spectrograms.
//!
//! Segments are one second long (so bins sit at whole Hz), taken every half
//! second with a periodic Hann taper after removing each segment's mean. The
//! last segment runs past the window end and is zero-padded, giving exactly
//! `2t` frames for a `t`-second window.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::PreprocessError;
use crate::tensor::Tensor3;

/// Highest retained frequency, Hz.
pub const MAX_FREQ_HZ: usize = 128;
/// Inclusive power-line bands that are dropped, Hz.
pub const NOTCH_BANDS: [(usize, usize); 2] = [(57, 63), (117, 123)];

/// Bin indices (= Hz) kept in every frame.
pub fn retained_bins() -> Vec<usize> {
    (1..=MAX_FREQ_HZ)
        .filter(|f| !NOTCH_BANDS.iter().any(|&(lo, hi)| (lo..=hi).contains(f)))
        .collect()
}

/// Reusable spectrogram engine for one sample rate.
pub struct Stft {
    sample_rate: usize,
    fft: Arc<dyn Fft<f64>>,
    taper: Vec<f64>,
    bins: Vec<usize>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("sample_rate", &self.sample_rate).finish()
    }
}

impl Stft {
    pub fn new(sample_rate: usize) -> Result<Self, PreprocessError> {
        if sample_rate < 2 * MAX_FREQ_HZ || !sample_rate.is_multiple_of(2) {
            return Err(PreprocessError::InvalidSampleRate(sample_rate as f64));
        }
        let n = sample_rate;
        let taper = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        Ok(Self {
            sample_rate,
            fft: FftPlanner::new().plan_fft_forward(n),
            taper,
            bins: retained_bins(),
        })
    }

    pub fn sample_rate(&self) -> usize {
        self.sample_rate
    }

    pub fn segment_len(&self) -> usize {
        self.sample_rate
    }

    pub fn hop(&self) -> usize {
        self.sample_rate / 2
    }

    /// Frames for a `t`-second window.
    pub fn frames(&self, t: usize) -> usize {
        t * self.sample_rate / self.hop()
    }

    /// Linear magnitudes of one channel, frame-major (`frames × 114`).
    pub fn magnitudes(&self, signal: &[f64], t: usize) -> Result<Vec<f64>, PreprocessError> {
        let expected = t * self.sample_rate;
        if t == 0 || signal.len() != expected {
            return Err(PreprocessError::WrongLength {
                expected,
                got: signal.len(),
            });
        }
        let n = self.segment_len();
        let frames = self.frames(t);
        let mut out = Vec::with_capacity(frames * self.bins.len());
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.hop();
            let end = (start + n).min(signal.len());
            let seg = &signal[start..end];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = seg.get(i).map_or(0.0, |s| s - mean);
                *c = Complex::new(v * self.taper[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend(self.bins.iter().map(|&b| buf[b].norm()));
        }
        Ok(out)
    }

    /// `ln(1 + |X|)` spectrogram of a multichannel window.
    pub fn spectrogram<S: AsRef<[f64]>>(&self, window: &[S], t: usize) -> Result<Tensor3, PreprocessError> {
        let frames = self.frames(t);
        let mut data = Vec::with_capacity(window.len() * frames * self.bins.len());
        for ch in window {
            data.extend(self.magnitudes(ch.as_ref(), t)?.into_iter().map(f64::ln_1p));
        }
        Ok(Tensor3::from_vec(window.len(), frames, self.bins.len(), data))
    }
}

/// One-shot spectrogram; see [`Stft::spectrogram`].
pub fn spectrogram<S: AsRef<[f64]>>(window: &[S], t: usize, sample_rate: usize) -> Result<Tensor3, PreprocessError> {
    Stft::new(sample_rate)?.spectrogram(window, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_set_has_114_entries() {
        let bins = retained_bins();
        assert_eq!(bins.len(), 114);
        assert_eq!(bins[0], 1);
        assert_eq!(*bins.last().unwrap(), 128);
        assert!(!bins.contains(&60) && !bins.contains(&57) && !bins.contains(&123));
        assert!(bins.contains(&56) && bins.contains(&64) && bins.contains(&116) && bins.contains(&124));
    }

    #[test]
    fn frame_count_is_twice_window() {
        for t in [10, 20, 30] {
            let x = vec![vec![0.0; t * 256]; 2];
            let s = spectrogram(&x, t, 256).unwrap();
            assert_eq!(s.shape(), (2, 2 * t, 114));
        }
    }

    #[test]
    fn rejects_bad_lengths_and_rates() {
        assert!(matches!(
            spectrogram(&[vec![0.0; 100]], 30, 256),
            Err(PreprocessError::WrongLength {
                expected: 7680,
                got: 100
            })
        ));
        assert!(Stft::new(200).is_err());
        assert!(Stft::new(257).is_err());
    }

    #[test]
    fn dc_signal_has_no_retained_energy() {
        let x = vec![3.5; 30 * 256];
        let stft = Stft::new(256).unwrap();
        let mags = stft.magnitudes(&x, 30).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!(mags.iter().all(|m| m * m < 1e-6 * energy));
    }

    #[test]
    fn sine_peaks_at_its_frequency() {
        let fs = 256;
        let t = 30;
        let x: Vec<f64> = (0..t * fs)
            .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / fs as f64).sin())
            .collect();
        let s = spectrogram(&[x], t, fs).unwrap();
        let bins = retained_bins();
        let ten = bins.iter().position(|&b| b == 10).unwrap();
        for f in 0..s.height - 1 {
            let row = &s.data[f * 114..(f + 1) * 114];
            let arg = (0..114).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, ten, "frame {f}");
        }
    }
}
