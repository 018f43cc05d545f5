//! `avgan` — train, synthesize, evaluate, and sanity-check the
//! sound-to-video model.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 training divergence, 4 gradient-check failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use avgan_core::audio::{self, SpectrogramConfig};
use avgan_core::checkpoint;
use avgan_core::config::ExperimentConfig;
use avgan_core::data::{self, Dataset, SynthSpec, WindowData};
use avgan_core::io;
use avgan_core::metrics;
use avgan_core::params::Bind;
use avgan_core::train::Trainer;
use avgan_core::{gradcheck, Error, Graph, Result, Rng, Tensor};

/// Working precision for training and inference.
type F = f32;

#[derive(Parser)]
#[command(
    name = "avgan",
    version,
    about = "Agnostic sound-to-video generation: train a model on one \
             audio/video pair, then synthesize frames for arbitrary audio."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a dataset directory (expects <data>/manifest.toml)
    Train {
        /// Experiment config, TOML or JSON
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and logs
        #[arg(long)]
        out: PathBuf,
        /// Resume even if the existing checkpoint was written with a
        /// different config (the checkpoint's embedded config wins)
        #[arg(long)]
        force: bool,
    },
    /// Generate numbered PPM frames for a WAV file
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report SSIM/PSNR/flicker on the validation split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the finite-difference gradient suites
    Gradcheck {
        /// Restrict to one suite: tensor, motion, generator, predictor,
        /// discriminator, or losses
        #[arg(long)]
        scope: Option<String>,
    },
    /// Build the deterministic synthetic audio/video dataset
    Mksynth {
        /// Synthesis recipe, TOML or JSON
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code == 1 {
                let _ = Cli::command().print_help();
            }
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { config, data, out, force } => cmd_train(&config, &data, &out, force),
        Cmd::Synth { ckpt, wav, out } => cmd_synth(&ckpt, &wav, &out),
        Cmd::Eval { ckpt, data } => cmd_eval(&ckpt, &data),
        Cmd::Gradcheck { scope } => cmd_gradcheck(scope.as_deref()),
        Cmd::Mksynth { spec, out } => cmd_mksynth(&spec, &out),
    }
}

/// AVG_SEED takes precedence over any seed read from a file.
fn seed_override(base: u64) -> Result<u64> {
    match std::env::var("AVG_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("AVG_SEED must be an unsigned integer, got {s:?}"))),
        Err(_) => Ok(base),
    }
}

fn cmd_train(config: &Path, data: &Path, out: &Path, force: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.seed = seed_override(cfg.seed)?;
    fs::create_dir_all(out)?;

    let ckpt_path = out.join("latest.avck");
    let mut trainer: Trainer<F> = if ckpt_path.exists() {
        let meta = checkpoint::peek(&ckpt_path)?;
        if meta.config_hash != checkpoint::config_hash(&cfg) {
            eprintln!(
                "warning: {} was written with a different config than {}",
                ckpt_path.display(),
                config.display()
            );
            if !force {
                return Err(Error::Checkpoint(
                    "config mismatch; pass --force to resume with the checkpoint's embedded config"
                        .into(),
                ));
            }
            eprintln!("warning: --force given, the checkpoint's embedded config wins");
        }
        let t = checkpoint::load(&ckpt_path)?;
        println!("resuming from iteration {}", t.iter);
        t
    } else {
        Trainer::new(cfg)?
    };

    let ds = Dataset::load(data.join("manifest.toml"), &trainer.cfg.audio.spectrogram())?;
    let plan = ds.plan(trainer.cfg.train.sequence_len)?;
    println!(
        "dataset: {} aligned frames, {} train + {} validation windows of T={}",
        ds.aligned, plan.train, plan.val, plan.t
    );
    let windows: Vec<WindowData<F>> =
        (0..plan.train).map(|w| ds.window(&plan, w)).collect::<Result<_>>()?;

    let mut log = std::io::BufWriter::new(
        fs::OpenOptions::new().create(true).append(true).open(out.join("train.log.jsonl"))?,
    );
    let total = trainer.cfg.train.iterations as u64;
    let every = trainer.cfg.train.checkpoint_every.max(1) as u64;
    if trainer.iter >= total {
        println!("checkpoint already at iteration {}; nothing to do", trainer.iter);
        return Ok(());
    }
    while trainer.iter < total {
        let w = trainer.select_window(plan.train);
        let rec = trainer.train_step(&windows[w])?;
        serde_json::to_writer(&mut log, &rec)
            .map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        log.write_all(b"\n")?;
        if rec.iter % every == 0 || rec.iter == total {
            log.flush()?;
            checkpoint::save(&ckpt_path, &trainer)?;
            println!(
                "iter {:>6}/{} d_img {:+.4} d_vid {:+.4} g {:+.4} gp {:.3}/{:.3} perc {:.4}",
                rec.iter, total, rec.d_loss_img, rec.d_loss_vid, rec.g_loss, rec.gp_img,
                rec.gp_vid, rec.perceptual
            );
        }
    }
    log.flush()?;
    checkpoint::save(&ckpt_path, &trainer)?;
    println!("training complete at iteration {}", trainer.iter);
    Ok(())
}

/// One feature row as a working-precision tensor.
fn feature_row(features: &Tensor<f64>, i: usize) -> Result<Tensor<F>> {
    let b = features.shape()[1];
    let row = &features.data()[i * b..(i + 1) * b];
    Tensor::new(&[b], row.iter().map(|&v| v as F).collect())
}

fn cmd_synth(ckpt: &Path, wav: &Path, out: &Path) -> Result<()> {
    let trainer: Trainer<F> = checkpoint::load(ckpt)?;
    let cfg = &trainer.cfg;
    let seq = audio::features_from_wav(wav, &cfg.audio.spectrogram())?;
    let rows = seq.features.shape()[0];
    fs::create_dir_all(out)?;

    let mut rng = Rng::seed_from(seed_override(cfg.seed)?).split("synth.noise");
    let mut carry = trainer.model.carry_zeros::<F>();
    let chunk = cfg.train.sequence_len.max(1);
    let mut written = 0usize;
    for start in (0..rows).step_by(chunk) {
        let end = (start + chunk).min(rows);
        let feats: Vec<Tensor<F>> =
            (start..end).map(|i| feature_row(&seq.features, i)).collect::<Result<_>>()?;
        let mut g = Graph::new();
        let mut bind = Bind::new(&trainer.gen_store, true);
        let roll =
            trainer.model.rollout(&mut g, &mut bind, &trainer.gen_store, &feats, &carry, &mut rng)?;
        for (i, &fv) in roll.frames.iter().enumerate() {
            io::write_ppm(out.join(format!("{:06}.ppm", written + i)), g.value(fv))?;
        }
        written += feats.len();
        carry = roll.carry;
    }
    println!("wrote {written} frames to {}", out.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path) -> Result<()> {
    let trainer: Trainer<F> = checkpoint::load(ckpt)?;
    let cfg = &trainer.cfg;
    let ds = Dataset::load(data.join("manifest.toml"), &cfg.audio.spectrogram())?;
    let plan = ds.plan(cfg.train.sequence_len)?;
    if plan.val == 0 {
        return Err(Error::Data("the split reserves no validation windows".into()));
    }

    let mut rng = Rng::seed_from(seed_override(cfg.seed)?).split("eval.noise");
    let (mut ssim_sum, mut psnr_sum, mut fg_sum, mut fr_sum) = (0.0, 0.0, 0.0, 0.0);
    for w in plan.train..plan.total() {
        // each window is scored as an independent clip from a cold start
        let carry = trainer.model.carry_zeros::<F>();
        let win: WindowData<F> = ds.window(&plan, w)?;
        let mut g = Graph::new();
        let mut bind = Bind::new(&trainer.gen_store, true);
        let roll = trainer
            .model
            .rollout(&mut g, &mut bind, &trainer.gen_store, &win.features, &carry, &mut rng)?;
        let (mut s, mut p) = (0.0, 0.0);
        for (t, &fv) in roll.frames.iter().enumerate() {
            let real = win.video.index_axis1(t)?;
            s += metrics::ssim(g.value(fv), &real)?;
            p += metrics::psnr(g.value(fv), &real)?;
        }
        let t_len = roll.frames.len() as f64;
        let fg = metrics::flicker_index(g.value(roll.video))?;
        let fr = metrics::flicker_index(&win.video)?;
        println!(
            "{}",
            serde_json::json!({
                "window": w,
                "ssim": s / t_len,
                "psnr": p / t_len,
                "flicker_generated": fg,
                "flicker_real": fr,
            })
        );
        ssim_sum += s / t_len;
        psnr_sum += p / t_len;
        fg_sum += fg;
        fr_sum += fr;
    }
    let n = plan.val as f64;
    println!(
        "{}",
        serde_json::json!({
            "windows": plan.val,
            "ssim": ssim_sum / n,
            "psnr": psnr_sum / n,
            "flicker_generated": fg_sum / n,
            "flicker_real": fr_sum / n,
            "flicker_ratio": (fg_sum / n) / (fr_sum / n),
        })
    );
    Ok(())
}

fn cmd_gradcheck(scope: Option<&str>) -> Result<()> {
    let reports = gradcheck::run_suites(scope)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    for r in &reports {
        println!("{r}");
    }
    if failed > 0 {
        return Err(Error::GradCheck(format!("{failed} of {} checks failed", reports.len())));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn cmd_mksynth(spec: &Path, out: &Path) -> Result<()> {
    let mut spec = SynthSpec::load(spec)?;
    spec.seed = seed_override(spec.seed)?;
    let frames = data::make_synthetic_pair(out, &spec, &SpectrogramConfig::default())?;
    println!("wrote {frames} frames and matching audio to {}", out.display());
    Ok(())
}
