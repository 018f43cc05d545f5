//! Audio frontend: waveform → log-mel spectrogram → per-video-frame features.
//!
//! A waveform is windowed (Hann, no center padding), magnitude-transformed,
//! projected through a triangular mel filterbank on the power spectrum, and
//! log-compressed with a floor. Consecutive STFT frames are then grouped in
//! overlapping chunks of `chunk_frames` every `chunk_stride` frames and
//! averaged per band, so one feature row lines up with one video frame.
//!
//! With the defaults (16 kHz, 25 ms window, 10 ms hop, 8-frame chunks every
//! 5 frames) the chunk period is exactly 50 ms — 20 fps video — and adjacent
//! chunks overlap by 37.5%.
//!
//! Everything here is f64 and deterministic; the model casts at its boundary.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spectral analysis parameters. Lengths are in samples.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// STFT frames per chunk (A).
    pub chunk_frames: usize,
    /// STFT frames between chunk starts (H).
    pub chunk_stride: usize,
    /// Floor applied to band power before the natural log.
    pub log_floor: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate: 16000,
            window_len: 400, // 25 ms
            hop_len: 160,    // 10 ms
            mel_bands: 64,
            f_min: 125.0,
            f_max: 7500.0,
            chunk_frames: 8,
            chunk_stride: 5,
            log_floor: 1e-5,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return bad(format!(
                "f_max {} above Nyquist {}",
                self.f_max,
                self.sample_rate / 2
            ));
        }
        if !(0.0 <= self.f_min && self.f_min < self.f_max) {
            return bad(format!("need 0 <= f_min < f_max, got {} / {}", self.f_min, self.f_max));
        }
        if self.window_len < self.hop_len || self.hop_len == 0 {
            return bad(format!(
                "need window_len >= hop_len >= 1, got {} / {}",
                self.window_len, self.hop_len
            ));
        }
        if self.chunk_frames < self.chunk_stride || self.chunk_stride == 0 {
            return bad(format!(
                "need chunk_frames >= chunk_stride >= 1, got {} / {}",
                self.chunk_frames, self.chunk_stride
            ));
        }
        if self.mel_bands == 0 {
            return bad("mel_bands must be >= 1".into());
        }
        if !(self.log_floor > 0.0) {
            return bad(format!("log_floor must be > 0, got {}", self.log_floor));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Seconds between consecutive feature rows (= video frame period).
    pub fn frame_period(&self) -> f64 {
        self.chunk_stride as f64 * self.hop_len as f64 / self.sample_rate as f64
    }
}

/// Per-video-frame sound features plus the timing needed to pair them.
#[derive(Debug, Clone)]
pub struct SoundFeatureSequence {
    /// `[T', B]`: row t is f_t, the per-band mean over chunk t.
    pub features: Tensor<f64>,
    /// Seconds per row.
    pub frame_period: f64,
    /// Length of the source waveform in samples.
    pub source_len: usize,
}

/// Load a WAV into a rank-1 tensor plus its sample rate.
pub fn load_wav(path: impl AsRef<std::path::Path>) -> Result<(Tensor<f64>, u32)> {
    let (samples, sr) = crate::io::read_wav(path)?;
    let n = samples.len();
    Ok((Tensor::new(&[n], samples)?, sr))
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Magnitude STFT, `[freq_bins, frames]`. Frame k covers samples
/// `[k*hop, k*hop + window_len)`; no padding anywhere, so the chunk-to-frame
/// alignment stays exact.
pub fn stft_magnitude(waveform: &Tensor<f64>, cfg: &SpectrogramConfig) -> Result<Tensor<f64>> {
    cfg.validate()?;
    let x = waveform.data();
    let n = cfg.window_len;
    if x.len() < n {
        return Err(Error::Audio(format!(
            "waveform has {} samples, shorter than one {}-sample window",
            x.len(),
            n
        )));
    }
    let frames = (x.len() - n) / cfg.hop_len + 1;
    let bins = cfg.freq_bins();
    let win = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut out = vec![0.0f64; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        let start = f * cfg.hop_len;
        for i in 0..n {
            buf[i] = Complex::new(x[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, o) in out.iter_mut().skip(f).step_by(frames).take(bins).enumerate() {
            *o = buf[k].norm();
        }
    }
    Tensor::new(&[bins, frames], out)
}

/// Triangular mel filterbank, `[mel_bands, freq_bins]`. Band centers are
/// equally spaced on the mel scale between `f_min` and `f_max`; each filter
/// peaks at 1. Errors if any filter covers no FFT bin.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Result<Tensor<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let imel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let b = cfg.mel_bands;
    let bins = cfg.freq_bins();
    let (m_lo, m_hi) = (mel(cfg.f_min), mel(cfg.f_max));
    // B+2 edge points: filter i spans (edge[i], edge[i+2]), peak at edge[i+1]
    let edges: Vec<f64> = (0..b + 2)
        .map(|i| imel(m_lo + (m_hi - m_lo) * i as f64 / (b + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.window_len as f64;
    let mut fb = vec![0.0f64; b * bins];
    for i in 0..b {
        let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            if w > 0.0 {
                fb[i * bins + k] = w;
                any = true;
            }
        }
        if !any {
            return Err(Error::Audio(format!(
                "mel filter {i} ({lo:.1}–{hi:.1} Hz) covers no FFT bin; \
                 fewer bands or a longer window needed"
            )));
        }
    }
    Tensor::new(&[b, bins], fb)
}

/// Log-mel spectrogram `[mel_bands, frames]`: filterbank applied to the
/// power spectrum (magnitude²), then `ln(max(power, log_floor))`.
pub fn log_mel(spectrogram: &Tensor<f64>, cfg: &SpectrogramConfig) -> Result<Tensor<f64>> {
    let s = spectrogram.shape();
    if spectrogram.rank() != 2 || s[0] != cfg.freq_bins() {
        return Err(Error::Audio(format!(
            "spectrogram shape {s:?} does not match config ({} bins)",
            cfg.freq_bins()
        )));
    }
    let (bins, frames) = (s[0], s[1]);
    let fb = mel_filterbank(cfg)?;
    let mag = spectrogram.data();
    let mut out = vec![0.0f64; cfg.mel_bands * frames];
    for i in 0..cfg.mel_bands {
        let row = &fb.data()[i * bins..(i + 1) * bins];
        for t in 0..frames {
            let mut acc = 0.0;
            for k in 0..bins {
                let m = mag[k * frames + t];
                acc += row[k] * m * m;
            }
            out[i * frames + t] = acc.max(cfg.log_floor).ln();
        }
    }
    Tensor::new(&[cfg.mel_bands, frames], out)
}

/// Group STFT frames into overlapping chunks and average: feature row t is
/// the per-band mean of log-mel frames `[t*H, t*H + A)`.
pub fn chunk_features(logmel: &Tensor<f64>, cfg: &SpectrogramConfig) -> Result<SoundFeatureSequence> {
    let s = logmel.shape();
    if logmel.rank() != 2 || s[0] != cfg.mel_bands {
        return Err(Error::Audio(format!(
            "log-mel shape {s:?} does not match config ({} bands)",
            cfg.mel_bands
        )));
    }
    let (b, frames) = (s[0], s[1]);
    let (a, h) = (cfg.chunk_frames, cfg.chunk_stride);
    if frames < a {
        return Err(Error::Audio(format!(
            "{frames} log-mel frames, need at least one {a}-frame chunk"
        )));
    }
    let t_out = (frames - a) / h + 1;
    let lm = logmel.data();
    let mut feat = vec![0.0f64; t_out * b];
    let inv_a = 1.0 / a as f64;
    for t in 0..t_out {
        for band in 0..b {
            let row = &lm[band * frames..(band + 1) * frames];
            let sum: f64 = row[t * h..t * h + a].iter().sum();
            feat[t * b + band] = sum * inv_a;
        }
    }
    Ok(SoundFeatureSequence {
        features: Tensor::new(&[t_out, b], feat)?,
        frame_period: cfg.frame_period(),
        source_len: 0,
    })
}

/// Full frontend: WAV path → feature sequence.
pub fn features_from_wav(
    path: impl AsRef<std::path::Path>,
    cfg: &SpectrogramConfig,
) -> Result<SoundFeatureSequence> {
    let (wave, sr) = load_wav(path)?;
    if sr != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "wav sample rate {sr} differs from configured {}; resampling is out of scope",
            cfg.sample_rate
        )));
    }
    let mag = stft_magnitude(&wave, cfg)?;
    let lm = log_mel(&mag, cfg)?;
    let mut seq = chunk_features(&lm, cfg)?;
    seq.source_len = wave.numel();
    Ok(seq)
}

/// Number of feature rows usable against a video with `video_frame_count`
/// frames at `fps`. Errors when the audio chunk period disagrees with the
/// video frame period by more than 1 µs.
pub fn align_frames(
    features: &SoundFeatureSequence,
    video_frame_count: usize,
    fps: f64,
) -> Result<usize> {
    let video_period = 1.0 / fps;
    if (video_period - features.frame_period).abs() > 1e-6 {
        return Err(Error::Data(format!(
            "video frame period {:.6}s does not match audio chunk period {:.6}s",
            video_period, features.frame_period
        )));
    }
    Ok(features.features.shape()[0].min(video_frame_count))
}
