//! Patch critics: a 2-D image discriminator and a 3-D video discriminator
//! with the same layer count as the generator, skip-connected color input
//! (per-resolution 1×1 "fRGB" convs summed into the stream), batch
//! normalization, and a 1×1 decision head emitting a patch score map with no
//! final nonlinearity (Wasserstein critic).
//!
//! The video variant halves the temporal extent alongside space while it
//! stays even, so a T=32 sequence is reduced through the first five layers
//! and never below one frame. With single-sequence batches the statistics
//! population for batch norm is every non-channel element of the activation
//! (all frames and spatial positions).

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::motion::LEAKY_SLOPE;
use crate::params::{Bind, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; `track` folds them into the running stats with
    /// momentum 0.1 (the returned updates must be applied by the caller).
    Train { track: bool },
    /// Running statistics only; no updates.
    Eval,
}

#[derive(Debug, Clone)]
pub struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: ParamId,
    pub run_var: ParamId,
}

/// Deferred running-stat writes produced by a training-mode forward pass.
pub type BnUpdates<T> = Vec<(ParamId, Tensor<T>)>;

pub fn bn_init<T: Scalar>(store: &mut ParamStore<T>, name: &str, ch: usize) -> BnIds {
    BnIds {
        gamma: store.add(format!("{name}.g"), Tensor::full(&[ch], T::one()), true),
        beta: store.add(format!("{name}.b"), Tensor::zeros(&[ch]), true),
        run_mean: store.add(format!("{name}.rm"), Tensor::zeros(&[ch]), false),
        run_var: store.add(format!("{name}.rv"), Tensor::full(&[ch], T::one()), false),
    }
}

/// Normalize over every axis except channels (axis 0), then apply the
/// per-channel affine. Training mode uses the batch statistics of `x`
/// itself; eval mode reads the stored running statistics.
pub fn batch_norm<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    ids: &BnIds,
    x: Value,
    mode: BnMode,
    updates: &mut BnUpdates<T>,
) -> Result<Value> {
    let s = g.shape(x).to_vec();
    let pop: usize = s[1..].iter().product();
    if s.len() < 2 || pop < 2 {
        return Err(Error::Shape(format!(
            "batch statistics need at least 2 elements per channel, got {s:?}"
        )));
    }
    let xh = match mode {
        BnMode::Train { track } => {
            let mu = g.mean_keep0(x)?;
            let mu_b = g.broadcast_channel(mu, &s)?;
            let centered = g.sub(x, mu_b)?;
            let sq = g.mul(centered, centered)?;
            let var = g.mean_keep0(sq)?;
            if track {
                let bm = g.value(mu).clone();
                let bv = g.value(var).clone();
                let fold = |old: &Tensor<T>, new: &Tensor<T>| {
                    let m = T::of(BN_MOMENTUM);
                    let data = old
                        .data()
                        .iter()
                        .zip(new.data())
                        .map(|(&o, &n)| o - m * o + m * n)
                        .collect();
                    Tensor::new(old.shape(), data).expect("same shape")
                };
                updates.push((ids.run_mean, fold(store.get(ids.run_mean), &bm)));
                updates.push((ids.run_var, fold(store.get(ids.run_var), &bv)));
            }
            let var_eps = g.add_scalar(var, BN_EPS)?;
            let sd = g.sqrt(var_eps)?;
            let sd_b = g.broadcast_channel(sd, &s)?;
            g.div(centered, sd_b)?
        }
        BnMode::Eval => {
            let mu = g.constant(store.get(ids.run_mean).clone());
            let var = g.constant(store.get(ids.run_var).clone());
            let mu_b = g.broadcast_channel(mu, &s)?;
            let centered = g.sub(x, mu_b)?;
            let var_eps = g.add_scalar(var, BN_EPS)?;
            let sd = g.sqrt(var_eps)?;
            let sd_b = g.broadcast_channel(sd, &s)?;
            g.div(centered, sd_b)?
        }
    };
    let gam = bind.get(g, store, ids.gamma);
    let bet = bind.get(g, store, ids.beta);
    let gam_b = g.broadcast_channel(gam, &s)?;
    let scaled = g.mul(xh, gam_b)?;
    g.add_channel_bias(scaled, bet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscDim {
    D2,
    D3,
}

#[derive(Debug, Clone)]
pub struct DiscLayerIds {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub bn1: BnIds,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub bn2: BnIds,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub dim: DiscDim,
    pub layers: Vec<DiscLayerIds>,
    /// One 1×1 color conv per resolution, outermost first (L+1 entries;
    /// the last feeds the post-pool stream just before the head).
    pub frgb: Vec<(ParamId, ParamId)>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub resolution: usize,
}

/// Channel width at depth l (stream entering layer l; widths double inward
/// up to the cap).
pub fn disc_channels(base: usize, cap: usize, l: usize) -> usize {
    cap.min(base << l)
}

impl Discriminator {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        dim: DiscDim,
        resolution: usize,
        base: usize,
        cap: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !resolution.is_power_of_two() || resolution < 8 {
            return Err(Error::Config(format!(
                "discriminator resolution must be a power of two >= 8, got {resolution}"
            )));
        }
        let l_count = crate::generator::num_layers(resolution);
        let tag = match dim {
            DiscDim::D2 => "di",
            DiscDim::D3 => "dv",
        };
        let conv_shape = |co: usize, ci: usize, k: usize| -> Vec<usize> {
            match dim {
                DiscDim::D2 => vec![co, ci, k, k],
                DiscDim::D3 => vec![co, ci, k, k, k],
            }
        };
        let mut layers = Vec::with_capacity(l_count);
        for l in 0..l_count {
            let ci = disc_channels(base, cap, l);
            let co = disc_channels(base, cap, l + 1);
            let c1 = store.add(
                format!("{tag}.l{l}.c1.w"),
                Tensor::randn(&conv_shape(ci, ci, 3), 0.02, rng),
                true,
            );
            let c1b = store.add(format!("{tag}.l{l}.c1.b"), Tensor::zeros(&[ci]), true);
            let bn1 = bn_init(store, &format!("{tag}.l{l}.bn1"), ci);
            let c2 = store.add(
                format!("{tag}.l{l}.c2.w"),
                Tensor::randn(&conv_shape(co, ci, 3), 0.02, rng),
                true,
            );
            let c2b = store.add(format!("{tag}.l{l}.c2.b"), Tensor::zeros(&[co]), true);
            let bn2 = bn_init(store, &format!("{tag}.l{l}.bn2"), co);
            layers.push(DiscLayerIds {
                conv1_w: c1,
                conv1_b: c1b,
                bn1,
                conv2_w: c2,
                conv2_b: c2b,
                bn2,
            });
        }
        let mut frgb = Vec::with_capacity(l_count + 1);
        for l in 0..=l_count {
            let ch = disc_channels(base, cap, l);
            let w = store.add(
                format!("{tag}.frgb{l}.w"),
                Tensor::randn(&conv_shape(ch, 3, 1), 0.02, rng),
                true,
            );
            let b = store.add(format!("{tag}.frgb{l}.b"), Tensor::zeros(&[ch]), true);
            frgb.push((w, b));
        }
        let deepest = disc_channels(base, cap, l_count);
        let head_w = store.add(
            format!("{tag}.head.w"),
            Tensor::randn(&conv_shape(1, deepest, 1), 0.02, rng),
            true,
        );
        let head_b = store.add(format!("{tag}.head.b"), Tensor::zeros(&[1]), true);
        Ok(Discriminator { dim, layers, frgb, head_w, head_b, resolution })
    }

    fn check_input<T: Scalar>(&self, g: &Graph<T>, x: Value) -> Result<()> {
        let s = g.shape(x);
        let ok = match self.dim {
            DiscDim::D2 => {
                s.len() == 3 && s[0] == 3 && s[1] == self.resolution && s[2] == self.resolution
            }
            DiscDim::D3 => {
                s.len() == 4
                    && s[0] == 3
                    && s[1] >= 1
                    && s[2] == self.resolution
                    && s[3] == self.resolution
            }
        };
        if !ok {
            return Err(Error::Shape(format!(
                "discriminator input {s:?} does not match resolution {}",
                self.resolution
            )));
        }
        Ok(())
    }

    fn pool<T: Scalar>(&self, g: &mut Graph<T>, v: Value) -> Result<Value> {
        match self.dim {
            DiscDim::D2 => g.avg_pool2(v),
            DiscDim::D3 => {
                let t = g.shape(v)[1];
                if t > 1 && t % 2 == 0 {
                    g.avg_pool3(v)
                } else {
                    g.avg_pool2(v)
                }
            }
        }
    }

    /// Forward to the patch score map ([1,h,w] or [1,t,h,w]). Training-mode
    /// batch-norm running-stat writes come back in `updates` for the caller
    /// to apply (or drop, for a frozen critic pass).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        x: Value,
        mode: BnMode,
        updates: &mut BnUpdates<T>,
    ) -> Result<Value> {
        self.check_input(g, x)?;
        let mut rgb = x;
        let mut stream: Option<Value> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let (fw, fb) = self.frgb[l];
            let fwv = bind.get(g, store, fw);
            let fbv = bind.get(g, store, fb);
            let skip = g.conv_bias(rgb, fwv, fbv)?;
            let mut s = match stream {
                None => skip,
                Some(v) => g.add(v, skip)?,
            };
            let w1 = bind.get(g, store, layer.conv1_w);
            let b1 = bind.get(g, store, layer.conv1_b);
            s = g.conv_bias(s, w1, b1)?;
            s = batch_norm(g, bind, store, &layer.bn1, s, mode, updates)?;
            s = g.leaky_relu(s, LEAKY_SLOPE)?;
            let w2 = bind.get(g, store, layer.conv2_w);
            let b2 = bind.get(g, store, layer.conv2_b);
            s = g.conv_bias(s, w2, b2)?;
            s = batch_norm(g, bind, store, &layer.bn2, s, mode, updates)?;
            s = g.leaky_relu(s, LEAKY_SLOPE)?;
            stream = Some(self.pool(g, s)?);
            rgb = self.pool(g, rgb)?;
        }
        let (fw, fb) = self.frgb[self.layers.len()];
        let fwv = bind.get(g, store, fw);
        let fbv = bind.get(g, store, fb);
        let skip = g.conv_bias(rgb, fwv, fbv)?;
        let s = match stream {
            None => skip,
            Some(v) => g.add(v, skip)?,
        };
        let hw = bind.get(g, store, self.head_w);
        let hb = bind.get(g, store, self.head_b);
        g.conv_bias(s, hw, hb)
    }
}

/// One uniform frame index shared by a (real, fake) pair.
pub fn pick_shared_frame(t: usize, rng: &mut Rng) -> Result<usize> {
    if t == 0 {
        return Err(Error::Data("cannot pick a frame from an empty sequence".into()));
    }
    Ok(rng.below(t))
}

/// Uniform non-identity permutation of frame order (resampled on identity).
pub fn shuffle_permutation(t: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if t < 2 {
        return Err(Error::Data(format!("shuffling needs at least 2 frames, got {t}")));
    }
    loop {
        let mut p: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            let j = rng.below(i + 1);
            p.swap(i, j);
        }
        if p.iter().enumerate().any(|(i, &v)| i != v) {
            return Ok(p);
        }
    }
}

/// Reorder the frame axis of a [3,T,H,W] video on the host.
pub fn permute_frames<T: Scalar>(video: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let s = video.shape();
    if s.len() != 4 || s[1] != perm.len() {
        return Err(Error::Shape(format!(
            "permute_frames: video {s:?} vs permutation of {}",
            perm.len()
        )));
    }
    let (c, t, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![T::zero(); video.numel()];
    let src = video.data();
    for ci in 0..c {
        for (ti, &pi) in perm.iter().enumerate() {
            let dst_off = (ci * t + ti) * hw;
            let src_off = (ci * t + pi) * hw;
            out[dst_off..dst_off + hw].copy_from_slice(&src[src_off..src_off + hw]);
        }
    }
    Tensor::new(s, out)
}

pub fn gradcheck_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, CheckReport, DEFAULT_H, DEFAULT_TOL};
    let mut out: Vec<CheckReport> = Vec::new();
    for seed in [5u64, 21, 77] {
        let mut rng = Rng::seed_from(seed);
        for dim in [DiscDim::D2, DiscDim::D3] {
            let mut store: ParamStore<f64> = ParamStore::new();
            let mut prng = rng.split("params");
            let disc = Discriminator::init(&mut store, dim, 8, 2, 4, &mut prng)?;
            let mut leaves: Vec<Tensor<f64>> =
                store.entries().iter().map(|e| e.value.clone()).collect();
            let n_params = leaves.len();
            let in_shape: &[usize] = match dim {
                DiscDim::D2 => &[3, 8, 8],
                DiscDim::D3 => &[3, 2, 8, 8],
            };
            leaves.push(Tensor::rand_uniform(in_shape, -1.0, 1.0, &mut rng));
            // input gradient included: the penalty path differentiates it
            let wrt: Vec<usize> = (0..leaves.len()).collect();
            let disc2 = disc.clone();
            let empty: ParamStore<f64> = ParamStore::new();
            let label = match dim {
                DiscDim::D2 => "discriminator/image",
                DiscDim::D3 => "discriminator/video",
            };
            out.push(finite_diff_check(
                &format!("{label} seed{seed}"),
                &leaves,
                &wrt,
                12,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                move |g, v| {
                    let mut bind = Bind::from_values(&v[..n_params]);
                    let mut ups = Vec::new();
                    let map = disc2.forward(
                        g,
                        &mut bind,
                        &empty,
                        v[n_params],
                        BnMode::Train { track: false },
                        &mut ups,
                    )?;
                    g.mean_all(map)
                },
            )?);
        }
    }
    Ok(out)
}
