//! Alternating adversarial training. Each iteration rolls the generator over
//! one T-frame window, then takes one critic step (both discriminators, with
//! gradient penalties, against detached generator output) and one generator
//! step (against the freshly updated, frozen critics, plus the perceptual
//! term), at two-time-scale learning rates.

use std::cell::RefCell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::config::ExperimentConfig;
use crate::data::{Dataset, SplitPlan, WindowData};
use crate::discriminator::{self, BnMode, BnUpdates, DiscDim, Discriminator};
use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::losses::{self, PerceptualExtractor};
use crate::model::{CarryState, FullModel, Rollout};
use crate::params::{Bind, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

/// One log row per iteration, serialized as JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: u64,
    pub d_loss_img: f64,
    pub d_loss_vid: f64,
    pub g_loss: f64,
    pub gp_img: f64,
    pub gp_vid: f64,
    pub perceptual: f64,
    pub wall_ms: f64,
}

pub struct Trainer<T: Scalar> {
    pub cfg: ExperimentConfig,
    pub model: FullModel,
    pub d_img: Discriminator,
    pub d_vid: Discriminator,
    pub extractor: PerceptualExtractor,
    pub gen_store: ParamStore<T>,
    pub critic_store: ParamStore<T>,
    /// Frozen perceptual-extractor parameters.
    pub aux_store: ParamStore<T>,
    pub adam_g: Adam<T>,
    pub adam_d: Adam<T>,
    pub carry: CarryState<T>,
    /// Stream for the generator's stochastic draws (excitation, noise maps).
    pub noise_rng: Rng,
    /// Stream for critic-side draws (shared frame, shuffle, penalty ε).
    pub critic_rng: Rng,
    pub iter: u64,
    /// Next training-window index within the epoch.
    pub cursor: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let mut gen_store = ParamStore::new();
        let mut rng = Rng::seed_from(seed).split("init.generator");
        let model = FullModel::init(&mut gen_store, &cfg, &mut rng)?;

        let mut critic_store = ParamStore::new();
        let mut rng = Rng::seed_from(seed).split("init.critic.image");
        let d_img = Discriminator::init(
            &mut critic_store,
            DiscDim::D2,
            cfg.model.resolution,
            cfg.model.disc.base_channels,
            cfg.model.disc.max_channels,
            &mut rng,
        )?;
        let mut rng = Rng::seed_from(seed).split("init.critic.video");
        let d_vid = Discriminator::init(
            &mut critic_store,
            DiscDim::D3,
            cfg.model.resolution,
            cfg.model.disc.base_channels,
            cfg.model.disc.max_channels,
            &mut rng,
        )?;

        let mut aux_store = ParamStore::new();
        let mut rng = Rng::seed_from(seed).split("init.perceptual");
        let extractor = PerceptualExtractor::init(&mut aux_store, &mut rng);

        let t = &cfg.train;
        let adam_g = Adam::new(&gen_store, t.lr_generator, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let adam_d = Adam::new(&critic_store, t.lr_critic, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let carry = model.carry_zeros();
        let noise_rng = Rng::seed_from(seed).split("train.noise");
        let critic_rng = Rng::seed_from(seed).split("train.critic");
        Ok(Trainer {
            cfg,
            model,
            d_img,
            d_vid,
            extractor,
            gen_store,
            critic_store,
            aux_store,
            adam_g,
            adam_d,
            carry,
            noise_rng,
            critic_rng,
            iter: 0,
            cursor: 0,
        })
    }

    /// Pick the next training window: consecutive order, carries reset at
    /// each epoch boundary (windows are temporal, so state flows across
    /// windows within an epoch but never across the wrap-around).
    pub fn select_window(&mut self, train_windows: usize) -> usize {
        if self.cursor == 0 {
            self.carry.reset();
        }
        let w = self.cursor;
        self.cursor = (self.cursor + 1) % train_windows;
        w
    }

    /// Convenience: select, load from disk, and step.
    pub fn step_on(&mut self, ds: &Dataset, plan: &SplitPlan) -> Result<TrainLogRecord> {
        let w = self.select_window(plan.train);
        let window: WindowData<T> = ds.window(plan, w)?;
        self.train_step(&window)
    }

    /// One alternating update on one window. Any non-finite value — whether
    /// caught mid-graph or in the loss scalars — reports as divergence.
    pub fn train_step(&mut self, window: &WindowData<T>) -> Result<TrainLogRecord> {
        self.train_step_inner(window).map_err(|e| match e {
            Error::NonFinite(m) => Error::Divergence(m),
            other => other,
        })
    }

    fn train_step_inner(&mut self, window: &WindowData<T>) -> Result<TrainLogRecord> {
        let start = Instant::now();
        let t_len = window.features.len();
        if window.video.shape()[1] != t_len {
            return Err(Error::Data(format!(
                "window has {} feature rows but {} video frames",
                t_len,
                window.video.shape()[1]
            )));
        }

        let mut g = Graph::new();
        let mut bind_g = Bind::new(&self.gen_store, false);
        let out = self.model.rollout(
            &mut g,
            &mut bind_g,
            &self.gen_store,
            &window.features,
            &self.carry,
            &mut self.noise_rng,
        )?;

        let t_shared = discriminator::pick_shared_frame(t_len, &mut self.critic_rng)?;
        let perm = discriminator::shuffle_permutation(t_len, &mut self.critic_rng)?;
        let fake_video = g.value(out.video).clone();
        let fake_frame = g.value(out.frames[t_shared]).clone();

        let (d_loss_img, d_loss_vid, gp_img, gp_vid) =
            self.critic_phase(window, &fake_video, &fake_frame, t_shared, &perm)?;
        let (g_loss, perceptual) =
            self.generator_phase(&mut g, &mut bind_g, window, &out, t_shared)?;

        self.carry = out.carry;
        self.iter += 1;
        let rec = TrainLogRecord {
            iter: self.iter,
            d_loss_img,
            d_loss_vid,
            g_loss,
            gp_img,
            gp_vid,
            perceptual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        for (name, v) in [
            ("d_loss_img", d_loss_img),
            ("d_loss_vid", d_loss_vid),
            ("g_loss", g_loss),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} at iteration {}", self.iter)));
            }
        }
        Ok(rec)
    }

    /// Phase 1: step both critics against detached fakes.
    fn critic_phase(
        &mut self,
        window: &WindowData<T>,
        fake_video: &Tensor<T>,
        fake_frame: &Tensor<T>,
        t_shared: usize,
        perm: &[usize],
    ) -> Result<(f64, f64, f64, f64)> {
        let lambda = self.cfg.train.lambda_gp;
        let mut gd = Graph::new();
        let real_frame = gd.constant(window.video.index_axis1(t_shared)?);
        let real_video = gd.constant(window.video.clone());
        let shuffled = gd.constant(discriminator::permute_frames(&window.video, perm)?);
        let fake_f = gd.constant(fake_frame.clone());
        let fake_v = gd.constant(fake_video.clone());

        let bind = RefCell::new(Bind::new(&self.critic_store, false));
        let updates: RefCell<BnUpdates<T>> = RefCell::new(Vec::new());
        let img = {
            let critic = |g: &mut Graph<T>, x: Value| {
                self.d_img.forward(
                    g,
                    &mut bind.borrow_mut(),
                    &self.critic_store,
                    x,
                    BnMode::Train { track: true },
                    &mut updates.borrow_mut(),
                )
            };
            losses::loss_image(&mut gd, &critic, real_frame, fake_f, lambda, &mut self.critic_rng)?
        };
        let vid = {
            let critic = |g: &mut Graph<T>, x: Value| {
                self.d_vid.forward(
                    g,
                    &mut bind.borrow_mut(),
                    &self.critic_store,
                    x,
                    BnMode::Train { track: true },
                    &mut updates.borrow_mut(),
                )
            };
            losses::loss_video(
                &mut gd,
                &critic,
                real_video,
                fake_v,
                shuffled,
                None,
                lambda,
                0.0,
                &mut self.critic_rng,
            )?
        };

        let total = gd.add(img.d_loss, vid.d_loss)?;
        let wrt = bind.borrow().bound_values();
        let map = gd.backward_wrt(total, &wrt)?;
        self.critic_store.clear_grads();
        bind.borrow().harvest_grads(&gd, &mut self.critic_store, &map)?;
        self.adam_d.step(&mut self.critic_store)?;
        self.critic_store.clear_grads();
        for (id, value) in updates.into_inner() {
            self.critic_store.set(id, value);
        }
        let gp_v = 0.5
            * (Scalar::to_f64(gd.value(vid.gp_fake).item())
                + Scalar::to_f64(gd.value(vid.gp_shuffle).item()));
        Ok((
            Scalar::to_f64(gd.value(img.d_loss).item()),
            Scalar::to_f64(gd.value(vid.d_loss).item()),
            Scalar::to_f64(gd.value(img.gp).item()),
            gp_v,
        ))
    }

    /// Phase 2: step the generator stack against the frozen, just-updated
    /// critics. Batch norms run on batch statistics without touching the
    /// stored running values.
    fn generator_phase(
        &mut self,
        g: &mut Graph<T>,
        bind_g: &mut Bind,
        window: &WindowData<T>,
        out: &Rollout<T>,
        t_shared: usize,
    ) -> Result<(f64, f64)> {
        let alpha = self.cfg.train.alpha_perceptual;
        let mut bind_d = Bind::new(&self.critic_store, true);
        let mut discard: BnUpdates<T> = Vec::new();
        let mode = BnMode::Train { track: false };
        let di = self.d_img.forward(
            g,
            &mut bind_d,
            &self.critic_store,
            out.frames[t_shared],
            mode,
            &mut discard,
        )?;
        let di = g.mean_all(di)?;
        let dv =
            self.d_vid.forward(g, &mut bind_d, &self.critic_store, out.video, mode, &mut discard)?;
        let dv = g.mean_all(dv)?;
        let real = g.constant(window.video.clone());
        let perc = losses::perceptual_distance(g, &self.extractor, &self.aux_store, real, out.video)?;
        let neg_di = g.mul_scalar(di, -1.0)?;
        let neg_dv = g.mul_scalar(dv, -1.0)?;
        let adv = g.add(neg_di, neg_dv)?;
        let perc_w = g.mul_scalar(perc, alpha)?;
        let g_loss = g.add(adv, perc_w)?;

        let wrt = bind_g.bound_values();
        let map = g.backward_wrt(g_loss, &wrt)?;
        self.gen_store.clear_grads();
        bind_g.harvest_grads(g, &mut self.gen_store, &map)?;
        self.adam_g.step(&mut self.gen_store)?;
        self.gen_store.clear_grads();
        Ok((Scalar::to_f64(g.value(g_loss).item()), Scalar::to_f64(g.value(perc).item())))
    }
}
