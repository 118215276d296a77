//! Waveform to log mel-band energy matrices.
//!
//! Frames are Hamming-windowed, power spectra come from an FFT sized to the
//! next power of two above the window, and triangular mel filters are spaced
//! evenly on mel(f) = 2595 log10(1 + f/700). The clip tail is zero-padded so
//! the frame count is a deterministic function of clip length: with the
//! default 64 ms window, 10/240 s hop and 64 mel bins, a 10 s clip at 16 kHz
//! yields exactly a 240 x 64 matrix.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty signal")]
    EmptySignal,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("bad mel range: fmin {fmin} must be >= 0 and < fmax {fmax} <= Nyquist {nyquist}")]
    BadRange { fmin: f64, fmax: f64, nyquist: f64 },
    #[error("window of {window} samples is empty or hop of {hop} samples is zero")]
    BadFraming { window: usize, hop: usize },
    #[error("mel bin count must be positive")]
    NoMelBins,
}

/// A mono waveform with samples nominally in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::EmptySignal);
        }
        if sample_rate == 0 {
            return Err(FeatureError::ZeroSampleRate);
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Front-end configuration. The defaults reproduce the 240 x 64 geometry for
/// a 10 s clip at 16 kHz.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper filter edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_seconds: 0.064,
            hop_seconds: 10.0 / 240.0,
            n_mels: 64,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

/// A T x M matrix of log mel-band energies.
#[derive(Debug, Clone)]
pub struct LogMelMatrix {
    pub values: Array2<f64>,
    pub frame_seconds: f64,
    pub hop_seconds: f64,
}

impl LogMelMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn window_samples(w: &Waveform, window_seconds: f64) -> usize {
    (window_seconds * w.sample_rate as f64).round() as usize
}

fn hop_samples(w: &Waveform, hop_seconds: f64) -> usize {
    (hop_seconds * w.sample_rate as f64).round() as usize
}

/// Number of frames for a clip: ceil(len / hop), end-padded with zeros.
pub fn frame_count(signal_len: usize, hop: usize) -> usize {
    signal_len.div_ceil(hop)
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Hamming-windowed power spectrogram, T x (fft/2 + 1).
pub fn stft_power(w: &Waveform, window_seconds: f64, hop_seconds: f64) -> Result<Array2<f64>, FeatureError> {
    if w.samples.is_empty() {
        return Err(FeatureError::EmptySignal);
    }
    let win = window_samples(w, window_seconds);
    let hop = hop_samples(w, hop_seconds);
    if win == 0 || hop == 0 {
        return Err(FeatureError::BadFraming { window: win, hop });
    }
    let fft_size = win.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let t_len = frame_count(w.samples.len(), hop);

    let window = hamming(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let mut out = Array2::zeros((t_len, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];

    for t in 0..t_len {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let sample = if i < win {
                w.samples.get(start + i).copied().unwrap_or(0.0) * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(sample, 0.0);
        }
        fft.process(&mut buf);
        for (k, value) in buf.iter().take(n_bins).enumerate() {
            out[[t, k]] = value.norm_sqr();
        }
    }
    Ok(out)
}

/// Triangular mel filterbank, M x F, rows non-negative.
pub fn mel_filterbank(
    sample_rate: u32,
    fft_size: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Array2<f64>, FeatureError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(FeatureError::BadRange { fmin, fmax, nyquist });
    }
    if n_mels == 0 {
        return Err(FeatureError::NoMelBins);
    }
    let n_bins = fft_size / 2 + 1;
    let edges = mel_edge_frequencies(n_mels, fmin, fmax);
    let mut bank = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            let weight = up.min(down);
            if weight > 0.0 {
                bank[[m, k]] = weight;
            }
        }
    }
    Ok(bank)
}

/// The M+2 filter edge frequencies in Hz, equally spaced on the mel scale.
pub fn mel_edge_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Filter center frequencies in Hz (the triangle apexes).
pub fn mel_center_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    mel_edge_frequencies(n_mels, fmin, fmax)[1..=n_mels].to_vec()
}

/// Full front end: STFT power, mel filterbank, natural log with an epsilon
/// floor.
pub fn log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<LogMelMatrix, FeatureError> {
    let power = stft_power(w, cfg.window_seconds, cfg.hop_seconds)?;
    let win = window_samples(w, cfg.window_seconds);
    let fft_size = win.next_power_of_two();
    let fmax = cfg.fmax.unwrap_or(w.sample_rate as f64 / 2.0);
    let bank = mel_filterbank(w.sample_rate, fft_size, cfg.n_mels, cfg.fmin, fmax)?;

    // energies = power (T x F) . bank^T (F x M)
    let energies = power.dot(&bank.t());
    let values = energies.mapv(|e| (e + cfg.log_floor).ln());
    Ok(LogMelMatrix {
        values,
        frame_seconds: cfg.window_seconds,
        hop_seconds: cfg.hop_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, sample_rate: u32, amp: f64) -> Waveform {
        let n = (seconds * sample_rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin())
            .collect();
        Waveform::new(samples, sample_rate).unwrap()
    }

    #[test]
    fn default_config_gives_240_by_64_for_ten_seconds() {
        let w = tone(440.0, 10.0, 16000, 0.5);
        let m = log_mel(&w, &FeatureConfig::default()).unwrap();
        assert_eq!((m.n_frames(), m.n_mels()), (240, 64));
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram_and_floor_logs() {
        let w = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let p = stft_power(&w, 0.064, 0.040).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        let cfg = FeatureConfig {
            n_mels: 16,
            hop_seconds: 0.040,
            ..FeatureConfig::default()
        };
        let m = log_mel(&w, &cfg).unwrap();
        let floor = (1e-10f64).ln();
        assert!(m.values.iter().all(|&v| (v - floor).abs() < 1e-12));
    }

    #[test]
    fn empty_signal_is_rejected() {
        assert!(matches!(
            Waveform::new(vec![], 8000),
            Err(FeatureError::EmptySignal)
        ));
    }

    #[test]
    fn sine_at_bin_center_peaks_at_that_bin_every_frame() {
        // Window 64 ms at 8 kHz = 512 samples = fft size; bin spacing
        // 15.625 Hz. Bin 32 sits at exactly 500 Hz.
        let sr = 8000;
        let freq = 32.0 * sr as f64 / 512.0;
        let w = tone(freq, 1.0, sr, 0.9);
        let p = stft_power(&w, 0.064, 0.032).unwrap();
        // Skip the zero-padded tail frames where the tone fades out.
        for t in 0..p.nrows() - 2 {
            let row = p.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32, "frame {t}");
        }
    }

    #[test]
    fn stft_matches_direct_dft_oracle() {
        let sr = 4000;
        let w = tone(437.0, 0.25, sr, 0.8);
        let p = stft_power(&w, 0.032, 0.016).unwrap();
        let win = 128; // 0.032 * 4000
        let hop = 64;
        let fft_size = 128;
        let window = hamming(win);
        // Direct O(n^2) DFT of the first few frames.
        for t in 0..4 {
            for k in 0..fft_size / 2 + 1 {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..win {
                    let s = w.samples.get(t * hop + i).copied().unwrap_or(0.0) * window[i];
                    let phase = -2.0 * std::f64::consts::PI * (k * i) as f64 / fft_size as f64;
                    re += s * phase.cos();
                    im += s * phase.sin();
                }
                let expected = re * re + im * im;
                assert!(
                    (p[[t, k]] - expected).abs() < 1e-6 * expected.max(1.0),
                    "frame {t} bin {k}: {} vs {}",
                    p[[t, k]],
                    expected
                );
            }
        }
    }

    #[test]
    fn frame_count_formula() {
        // T = floor((len + pad - win)/hop) + 1 with pad = (T-1)*hop + win - len.
        for (len, win, hop) in [(160000, 1024, 667), (32000, 512, 320), (1000, 512, 333)] {
            let t = frame_count(len, hop);
            let pad = ((t - 1) * hop + win).saturating_sub(len);
            assert_eq!((len + pad - win) / hop + 1, t, "len={len}");
        }
    }

    #[test]
    fn filterbank_shapes_and_monotone_centers() {
        let bank = mel_filterbank(16000, 1024, 64, 0.0, 8000.0).unwrap();
        assert_eq!(bank.dim(), (64, 513));
        assert!(bank.iter().all(|&v| v >= 0.0));
        let centers = mel_center_frequencies(64, 0.0, 8000.0);
        assert!(centers.windows(2).all(|w| w[1] > w[0]));
        // Each row has a single maximum run (triangle apex).
        for row in bank.rows() {
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert!(max > 0.0);
            let peak_bins: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == max)
                .map(|(k, _)| k)
                .collect();
            assert!(peak_bins.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn bad_mel_range_is_rejected() {
        assert!(matches!(
            mel_filterbank(16000, 1024, 64, 100.0, 50.0),
            Err(FeatureError::BadRange { .. })
        ));
        assert!(matches!(
            mel_filterbank(16000, 1024, 64, 0.0, 9000.0),
            Err(FeatureError::BadRange { .. })
        ));
    }

    #[test]
    fn tone_energy_lands_in_the_bracketing_mel_bin() {
        let sr = 16000;
        let w = tone(440.0, 1.0, sr, 0.9);
        let cfg = FeatureConfig::default();
        let m = log_mel(&w, &cfg).unwrap();
        let centers = mel_center_frequencies(cfg.n_mels, 0.0, sr as f64 / 2.0);
        // The filter whose center is nearest 440 Hz should carry the peak.
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().partial_cmp(&(b.1 - 440.0).abs()).unwrap())
            .unwrap()
            .0;
        let mid = m.values.row(m.n_frames() / 2);
        let argmax = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            argmax == expected || argmax + 1 == expected || expected + 1 == argmax,
            "argmax {argmax} vs expected {expected}"
        );
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let sr = 8000;
        let quiet = tone(1000.0, 0.5, sr, 0.2);
        let loud = Waveform::new(quiet.samples.iter().map(|s| s * 2.0).collect(), sr).unwrap();
        let cfg = FeatureConfig {
            n_mels: 24,
            hop_seconds: 0.032,
            ..FeatureConfig::default()
        };
        let a = log_mel(&quiet, &cfg).unwrap();
        let b = log_mel(&loud, &cfg).unwrap();
        let ln4 = 4.0f64.ln();
        // Check where the energy is far above the log floor.
        let mut checked = 0;
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            if *x > -10.0 {
                assert!((y - x - ln4).abs() < 1e-6, "{x} -> {y}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn deterministic_output() {
        let w = tone(700.0, 0.3, 8000, 0.7);
        let cfg = FeatureConfig {
            n_mels: 16,
            ..FeatureConfig::default()
        };
        let a = log_mel(&w, &cfg).unwrap();
        let b = log_mel(&w, &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }
}
