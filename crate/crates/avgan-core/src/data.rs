//! Dataset plumbing: manifest parsing, numbered-PPM frame streams, aligned
//! non-overlapping windows with a temporal-suffix validation split, and the
//! deterministic synthetic audio/video pair used by the overfit experiments.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{self, SoundFeatureSequence, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

/// Describes one audio/video pair on disk. Relative paths resolve against
/// the manifest file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetManifest {
    /// RIFF PCM WAV soundtrack.
    pub audio: String,
    /// Directory of numbered P6 PPM frames (`<n>.ppm`, consecutive).
    pub frames: String,
    pub fps: f64,
    /// Square frame edge N.
    pub resolution: usize,
    /// Fraction of windows reserved (as a temporal suffix) for validation.
    pub val_fraction: f64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            audio: "audio.wav".into(),
            frames: "frames".into(),
            fps: 20.0,
            resolution: 32,
            val_fraction: 0.2,
        }
    }
}

impl DatasetManifest {
    /// Parse TOML (default) or JSON (`.json` extension).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: DatasetManifest = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("bad JSON manifest: {e}")))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Data(format!("bad TOML manifest: {e}")))?
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::Data(format!("fps must be positive, got {}", self.fps)));
        }
        if self.resolution == 0 {
            return Err(Error::Data("resolution must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Data(format!(
                "val_fraction must lie in [0,1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// List `<n>.ppm` files in numeric order and demand consecutive numbering.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot list frames in {}: {e}", dir.display())))?;
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::Data(format!("frame dir read: {e}")))?.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())
            {
                numbered.push((n, path));
            }
        }
    }
    if numbered.is_empty() {
        return Err(Error::Data(format!("no numbered .ppm frames in {}", dir.display())));
    }
    numbered.sort_by_key(|(n, _)| *n);
    for (i, (n, _)) in numbered.iter().enumerate() {
        if *n != numbered[0].0 + i as u64 {
            return Err(Error::Data(format!(
                "frame numbering has a gap: expected {}, found {n}",
                numbered[0].0 + i as u64
            )));
        }
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// A loaded pair: per-frame sound features aligned against frame files.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frame_paths: Vec<PathBuf>,
    pub features: SoundFeatureSequence,
    /// Usable paired length min(audio rows, video frames).
    pub aligned: usize,
}

/// Window counts for one sequence length T under the suffix split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    pub t: usize,
    pub train: usize,
    pub val: usize,
}

impl SplitPlan {
    pub fn total(&self) -> usize {
        self.train + self.val
    }
}

/// One T-frame training window pulled off disk.
pub struct WindowData<T: Scalar> {
    /// Per-frame mel rows, `[B]` each.
    pub features: Vec<Tensor<T>>,
    /// Ground-truth video `[3,T,N,N]` in [−1,1].
    pub video: Tensor<T>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>, cfg: &SpectrogramConfig) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let frame_paths = list_frames(base.join(&manifest.frames))?;
        let features = audio::features_from_wav(base.join(&manifest.audio), cfg)?;
        let aligned = audio::align_frames(&features, frame_paths.len(), manifest.fps)?;
        Ok(Dataset { manifest, frame_paths, features, aligned })
    }

    /// Consecutive non-overlapping T-frame windows; the validation share is
    /// the rounded suffix (e.g. 10 windows at 0.2 → last 2).
    pub fn plan(&self, t: usize) -> Result<SplitPlan> {
        if t == 0 {
            return Err(Error::Data("window length T must be positive".into()));
        }
        let total = self.aligned / t;
        if total == 0 {
            return Err(Error::Data(format!(
                "dataset too short: {} aligned frames cannot fill one window of {t}",
                self.aligned
            )));
        }
        let val = (total as f64 * self.manifest.val_fraction + 0.5).floor() as usize;
        let train = total - val;
        if train == 0 {
            return Err(Error::Data(format!(
                "split leaves no training windows ({total} total, {val} validation)"
            )));
        }
        Ok(SplitPlan { t, train, val })
    }

    /// Load window `w` (0-based over the whole sequence, train then val).
    pub fn window<T: Scalar>(&self, plan: &SplitPlan, w: usize) -> Result<WindowData<T>> {
        if w >= plan.total() {
            return Err(Error::Data(format!("window {w} out of range 0..{}", plan.total())));
        }
        let n = self.manifest.resolution;
        let t = plan.t;
        let start = w * t;
        let mut video = vec![T::of(0.0); 3 * t * n * n];
        let mut feats = Vec::with_capacity(t);
        let b = self.features.features.shape()[1];
        for i in 0..t {
            let frame: Tensor<T> = io::read_ppm(&self.frame_paths[start + i])?;
            if frame.shape() != [3, n, n] {
                return Err(Error::Data(format!(
                    "frame {} is {:?}, manifest says [3,{n},{n}]",
                    self.frame_paths[start + i].display(),
                    frame.shape()
                )));
            }
            for c in 0..3 {
                let src = &frame.data()[c * n * n..(c + 1) * n * n];
                let dst = &mut video[(c * t + i) * n * n..(c * t + i + 1) * n * n];
                dst.copy_from_slice(src);
            }
            let row = &self.features.features.data()[(start + i) * b..(start + i + 1) * b];
            feats.push(Tensor::new(&[b], row.iter().map(|&v| T::of(v)).collect())?);
        }
        Ok(WindowData { features: feats, video: Tensor::new(&[3, t, n, n], video)? })
    }
}

/// Recipe for the deterministic toy pair: a sine carrier whose piecewise
/// linear amplitude envelope drives the vertical position of a bright square.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub resolution: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub carrier_hz: f64,
    /// Bright square edge, in pixels.
    pub square: usize,
    /// Explicit envelope knots `[time_s, value]`; when absent a seeded
    /// random envelope with one knot every `knot_s` seconds is drawn.
    pub envelope: Option<Vec<[f64; 2]>>,
    pub knot_s: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            resolution: 32,
            fps: 20.0,
            duration_s: 60.0,
            carrier_hz: 220.0,
            square: 8,
            envelope: None,
            knot_s: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read spec {}: {e}", path.display())))?;
        let s: SynthSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad JSON spec: {e}")))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Data(format!("bad TOML spec: {e}")))?
        };
        Ok(s)
    }

    fn knots(&self) -> Vec<[f64; 2]> {
        if let Some(k) = &self.envelope {
            return k.clone();
        }
        let mut rng = Rng::seed_from(self.seed).split("synth.envelope");
        let count = (self.duration_s / self.knot_s).ceil() as usize + 2;
        (0..count).map(|i| [i as f64 * self.knot_s, rng.uniform()]).collect()
    }
}

/// Piecewise-linear interpolation, clamped to the end knots and to [0,1].
pub fn envelope_at(knots: &[[f64; 2]], t: f64) -> f64 {
    let v = if knots.is_empty() {
        0.0
    } else if t <= knots[0][0] {
        knots[0][1]
    } else if t >= knots[knots.len() - 1][0] {
        knots[knots.len() - 1][1]
    } else {
        let i = knots.windows(2).position(|w| t < w[1][0]).unwrap();
        let (a, b) = (knots[i], knots[i + 1]);
        let u = (t - a[0]) / (b[0] - a[0]);
        a[1] + u * (b[1] - a[1])
    };
    v.clamp(0.0, 1.0)
}

/// Top row of the square for an envelope value: 0 at the top when the sound
/// is loudest, N − square at the bottom in silence.
pub fn square_row(env: f64, resolution: usize, square: usize) -> usize {
    ((1.0 - env) * (resolution - square) as f64).round() as usize
}

/// Write `<out>/audio.wav`, `<out>/frames/<n>.ppm`, and `<out>/manifest.toml`.
/// Returns the frame count. The audio is padded past the nominal duration so
/// the feature stream covers every video frame.
pub fn make_synthetic_pair(
    out: impl AsRef<Path>,
    spec: &SynthSpec,
    cfg: &SpectrogramConfig,
) -> Result<usize> {
    let out = out.as_ref();
    if spec.square == 0 || spec.square > spec.resolution {
        return Err(Error::Data(format!(
            "square edge {} does not fit resolution {}",
            spec.square, spec.resolution
        )));
    }
    if (1.0 / spec.fps - cfg.frame_period()).abs() > 1e-6 {
        return Err(Error::Data(format!(
            "spec fps {} is inconsistent with the audio chunking period {:.6}s",
            spec.fps,
            cfg.frame_period()
        )));
    }
    let frames = (spec.duration_s * spec.fps).round() as usize;
    if frames == 0 {
        return Err(Error::Data("duration too short for a single frame".into()));
    }
    let knots = spec.knots();

    // Enough samples that chunk index frames−1 exists: the log-mel stream
    // needs A + H·(frames−1) rows.
    let rows = cfg.chunk_frames + cfg.chunk_stride * (frames - 1);
    let samples = cfg.window_len + cfg.hop_len * (rows - 1);
    let sr = cfg.sample_rate as f64;
    let wave: Vec<f64> = (0..samples)
        .map(|i| {
            let t = i as f64 / sr;
            envelope_at(&knots, t) * (2.0 * std::f64::consts::PI * spec.carrier_hz * t).sin()
        })
        .collect();

    let frames_dir = out.join("frames");
    fs::create_dir_all(&frames_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", frames_dir.display())))?;
    io::write_wav(out.join("audio.wav"), &wave, cfg.sample_rate)?;

    let n = spec.resolution;
    let col = (n - spec.square) / 2;
    for k in 0..frames {
        let env = envelope_at(&knots, k as f64 / spec.fps);
        let row = square_row(env, n, spec.square);
        let mut img = vec![-1.0f64; 3 * n * n];
        for c in 0..3 {
            for y in row..row + spec.square {
                for x in col..col + spec.square {
                    img[(c * n + y) * n + x] = 1.0;
                }
            }
        }
        io::write_ppm(frames_dir.join(format!("{k:06}.ppm")), &Tensor::new(&[3, n, n], img)?)?;
    }

    let manifest = DatasetManifest {
        audio: "audio.wav".into(),
        frames: "frames".into(),
        fps: spec.fps,
        resolution: n,
        val_fraction: 0.2,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    fs::write(out.join("manifest.toml"), text)
        .map_err(|e| Error::Data(format!("cannot write manifest: {e}")))?;
    Ok(frames)
}
