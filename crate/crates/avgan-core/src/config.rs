//! Experiment configuration: one schema-checked document (TOML, with JSON
//! accepted) covering audio analysis, model shape, routing toggles, and the
//! optimizer. Unknown keys are rejected so typos fail loudly instead of
//! silently training the wrong model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::SpectrogramConfig;
use crate::error::{Error, Result};

/// Audio-analysis keys as written in config files (window/hop in ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub chunk_frames: usize,
    pub chunk_stride: usize,
    pub log_floor: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 16000,
            window_ms: 25.0,
            hop_ms: 10.0,
            mel_bands: 64,
            f_min: 125.0,
            f_max: 7500.0,
            chunk_frames: 8,
            chunk_stride: 5,
            log_floor: 1e-5,
        }
    }
}

impl AudioConfig {
    /// Convert ms-based keys to sample counts.
    pub fn spectrogram(&self) -> SpectrogramConfig {
        let samples = |ms: f64| (ms * self.sample_rate as f64 / 1000.0).round() as usize;
        SpectrogramConfig {
            sample_rate: self.sample_rate,
            window_len: samples(self.window_ms),
            hop_len: samples(self.hop_ms),
            mel_bands: self.mel_bands,
            f_min: self.f_min,
            f_max: self.f_max,
            chunk_frames: self.chunk_frames,
            chunk_stride: self.chunk_stride,
            log_floor: self.log_floor,
        }
    }
}

/// Which conditioning paths are wired up.
///
/// * `mfs` — motion-from-sound: sound features enter the recurrent network,
///   r_t = [f_t, e_t] (off: r_t = e_t, pure noise).
/// * `sac` — sound-as-content: raw features bypass into the generator input,
///   z_t = [f_t, m_t] (off: z_t = m_t).
/// * `acin` — audio-conditional instance norm inside generative layers
///   (off: plain learned per-channel scale/shift).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Routing {
    pub mfs: bool,
    pub sac: bool,
    pub acin: bool,
}

impl Default for Routing {
    fn default() -> Self {
        Routing { mfs: true, sac: true, acin: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorVariant {
    /// Four shifted-kernel directional ConvGRUs plus one centered cell.
    Dirconvgru,
    /// Single plain ConvGRU of matched budget (ablation comparator).
    Convgru,
    /// No prediction layer at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub enabled: bool,
    /// Aggregation extent K (odd); directional levels run 0..=(K−1)/2.
    pub kernel: usize,
    pub variant: PredictorVariant,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { enabled: true, kernel: 3, variant: PredictorVariant::Dirconvgru }
    }
}

impl PredictorConfig {
    pub fn effective(&self) -> PredictorVariant {
        if self.enabled { self.variant } else { PredictorVariant::None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub base_channels: usize,
    pub max_channels: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { base_channels: 16, max_channels: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output resolution N (power of two ≥ 8); layer count is log2(N) − 2.
    pub resolution: usize,
    /// Channels of the outermost generative layer; deeper layers double up
    /// to `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Recurrent stack depth L_R; layer l uses dilation 2^(l−1).
    pub rnn_layers: usize,
    /// Recurrent input/hidden size M (must equal mel_bands + noise_size
    /// under motion-from-sound routing).
    pub rnn_size: usize,
    /// Per-frame noise vector size E.
    pub noise_size: usize,
    pub noise_injection: bool,
    pub routing: Routing,
    pub predictor: PredictorConfig,
    pub disc: DiscConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: 256,
            base_channels: 16,
            max_channels: 512,
            rnn_layers: 3,
            rnn_size: 66,
            noise_size: 2,
            noise_injection: true,
            routing: Routing::default(),
            predictor: PredictorConfig::default(),
            disc: DiscConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Frames per training window (T).
    pub sequence_len: usize,
    pub iterations: usize,
    pub lambda_gp: f64,
    pub alpha_perceptual: f64,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sequence_len: 32,
            iterations: 100_000,
            lambda_gp: 10.0,
            alpha_perceptual: 10.0,
            lr_generator: 1e-4,
            lr_critic: 4e-4,
            adam_beta1: 0.3,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Parse TOML (default) or JSON (by `.json` extension or a leading `{`).
    pub fn from_str_auto(text: &str, hint_json: bool) -> Result<Self> {
        let cfg: ExperimentConfig = if hint_json || text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("json config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("toml config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::from_str_auto(&text, json)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let n = self.model.resolution;
        if n < 8 || !n.is_power_of_two() {
            return bad(format!("resolution must be a power of two >= 8, got {n}"));
        }
        if self.model.base_channels == 0 || self.model.max_channels < self.model.base_channels {
            return bad("need 1 <= base_channels <= max_channels".into());
        }
        if self.model.rnn_layers == 0 {
            return bad("rnn_layers must be >= 1".into());
        }
        let want_m = if self.model.routing.mfs {
            self.audio.mel_bands + self.model.noise_size
        } else {
            self.model.noise_size
        };
        if self.model.rnn_size != want_m {
            return bad(format!(
                "rnn_size must equal the recurrent input size ({} with this routing), got {}",
                want_m, self.model.rnn_size
            ));
        }
        if self.model.predictor.kernel % 2 == 0 || self.model.predictor.kernel == 0 {
            return bad(format!(
                "predictor kernel must be odd, got {}",
                self.model.predictor.kernel
            ));
        }
        if self.train.sequence_len == 0 {
            return bad("sequence_len must be >= 1".into());
        }
        if !(self.train.lambda_gp >= 0.0 && self.train.alpha_perceptual >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        self.audio.spectrogram().validate()
    }

    /// Generator input size Z.
    pub fn z_size(&self) -> usize {
        self.model.rnn_size
            + if self.model.routing.sac { self.audio.mel_bands } else { 0 }
    }

    /// Canonical JSON rendering (struct field order; stable across runs).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical JSON; identifies a config in checkpoints.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_json().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
