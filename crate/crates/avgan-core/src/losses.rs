//! Adversarial objectives: Wasserstein critics with gradient penalty, the
//! shuffled-sequence term for the video critic, and a perceptual feature
//! distance applied to the generator only.
//!
//! The perceptual network stands in for a pretrained feature extractor: a
//! fixed, seeded, randomly initialized 3-layer conv stack (8→16→32
//! channels, stride 2, LeakyReLU) tapped after the second layer. Random
//! fixed features keep the smoothing role of a perceptual loss without
//! importing a trained asset; the extractor is pluggable and its parameters
//! never receive gradient.

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::motion::LEAKY_SLOPE;
use crate::params::{Bind, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

/// Inside ‖·‖₂ = sqrt(Σx² + eps): keeps the norm differentiable at zero
/// while shifting a zero-gradient penalty from 1 by only ~2e-8.
pub const L2_EPS: f64 = 1e-16;

pub const PERC_CHANNELS: [usize; 3] = [8, 16, 32];
pub const PERC_TAP: usize = 2;

#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    pub convs: Vec<(ParamId, ParamId)>,
    /// Number of conv→pool→act stages evaluated before the feature tap.
    pub tap: usize,
}

impl PerceptualExtractor {
    /// Parameters are added as non-trainable entries: deterministic given
    /// the rng, frozen for the whole run.
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let mut convs = Vec::new();
        let mut ci = 3usize;
        for (i, &co) in PERC_CHANNELS.iter().enumerate() {
            let std = (2.0 / (ci * 9) as f64).sqrt();
            let w = store.add(
                format!("perc.c{i}.w"),
                Tensor::randn(&[co, ci, 3, 3], std, rng),
                false,
            );
            let b = store.add(format!("perc.c{i}.b"), Tensor::zeros(&[co]), false);
            convs.push((w, b));
            ci = co;
        }
        PerceptualExtractor { convs, tap: PERC_TAP }
    }

    /// Feature map of one [3,H,W] frame (stride-2 stages up to the tap).
    pub fn features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        frame: Value,
    ) -> Result<Value> {
        let s = g.shape(frame);
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("extractor wants [3,H,W], got {s:?}")));
        }
        let mut bind = Bind::new(store, true);
        let mut x = frame;
        for &(w, b) in self.convs.iter().take(self.tap) {
            let wv = bind.get(g, store, w);
            let bv = bind.get(g, store, b);
            x = g.conv_bias(x, wv, bv)?;
            x = g.subsample2(x)?;
            x = g.leaky_relu(x, LEAKY_SLOPE)?;
        }
        Ok(x)
    }
}

/// ‖a − b‖₂ of two equal-shape feature maps.
pub fn feature_l2<T: Scalar>(g: &mut Graph<T>, a: Value, b: Value) -> Result<Value> {
    let d = g.sub(a, b)?;
    g.l2_norm(d, L2_EPS)
}

/// Per-frame feature distance between two [3,T,H,W] videos, averaged over T.
pub fn perceptual_distance<T: Scalar>(
    g: &mut Graph<T>,
    ex: &PerceptualExtractor,
    store: &ParamStore<T>,
    a: Value,
    b: Value,
) -> Result<Value> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa != sb || sa.len() != 4 || sa[0] != 3 {
        return Err(Error::Shape(format!("perceptual distance: {sa:?} vs {sb:?}")));
    }
    let t_len = sa[1];
    let mut acc: Option<Value> = None;
    for t in 0..t_len {
        let fa = g.index_axis1(a, t)?;
        let fb = g.index_axis1(b, t)?;
        let pa = ex.features(g, store, fa)?;
        let pb = ex.features(g, store, fb)?;
        let d = feature_l2(g, pa, pb)?;
        acc = Some(match acc {
            None => d,
            Some(v) => g.add(v, d)?,
        });
    }
    g.mul_scalar(acc.expect("T >= 1"), 1.0 / t_len as f64)
}

/// One ε ~ U(0,1) interpolate between the pair, built in-graph; the
/// returned value is (‖∇_interp mean D(interp)‖₂ − 1)², where the gradient
/// is the adjoint of the interpolate node, emitted as new graph ops so the
/// penalty can itself be differentiated (the critic update needs the
/// second-order path, and the loss stays an honest function of real/fake).
pub fn gradient_penalty<T: Scalar, F>(
    g: &mut Graph<T>,
    critic: &F,
    real: Value,
    fake: Value,
    rng: &mut Rng,
) -> Result<Value>
where
    F: Fn(&mut Graph<T>, Value) -> Result<Value>,
{
    let shape = g.shape(real).to_vec();
    if shape != g.shape(fake) {
        return Err(Error::Shape(format!(
            "gradient penalty pair: {:?} vs {:?}",
            shape,
            g.shape(fake)
        )));
    }
    let u = rng.uniform();
    let ru = g.mul_scalar(real, u)?;
    let fu = g.mul_scalar(fake, 1.0 - u)?;
    let interp = g.add(ru, fu)?;
    let map = critic(g, interp)?;
    let score = g.mean_all(map)?;
    let grads = g.backward_wrt(score, &[interp])?;
    let grad = match grads.get(interp) {
        Some(v) => v,
        None => g.constant(Tensor::zeros(&shape)),
    };
    let n = g.l2_norm(grad, L2_EPS)?;
    let d = g.add_scalar(n, -1.0)?;
    g.mul(d, d)
}

pub struct ImageCritique {
    /// Minimized by the critic: −(E[D(real)] − E[D(fake)]) + λ·GP.
    pub d_loss: Value,
    /// Minimized by the generator: −E[D(fake)].
    pub g_term: Value,
    pub gap: Value,
    pub gp: Value,
}

pub fn loss_image<T: Scalar, F>(
    g: &mut Graph<T>,
    critic: &F,
    real: Value,
    fake: Value,
    lambda: f64,
    rng: &mut Rng,
) -> Result<ImageCritique>
where
    F: Fn(&mut Graph<T>, Value) -> Result<Value>,
{
    let dr = critic(g, real)?;
    let dr = g.mean_all(dr)?;
    let df = critic(g, fake)?;
    let df = g.mean_all(df)?;
    let gap = g.sub(dr, df)?;
    let gp = gradient_penalty(g, critic, real, fake, rng)?;
    let gp_w = g.mul_scalar(gp, lambda)?;
    let neg_gap = g.mul_scalar(gap, -1.0)?;
    let d_loss = g.add(neg_gap, gp_w)?;
    let g_term = g.mul_scalar(df, -1.0)?;
    Ok(ImageCritique { d_loss, g_term, gap, gp })
}

pub struct VideoCritique {
    pub d_loss: Value,
    pub g_term: Value,
    pub gap: Value,
    pub gp_fake: Value,
    pub gp_shuffle: Value,
    /// Present when an extractor was supplied; already α-weighted into
    /// g_term.
    pub perceptual: Option<Value>,
}

/// Video objective: the critic sees the real sequence, the generated one,
/// and a frame-shuffled real sequence treated as fake, with a penalty for
/// each fake pairing. The perceptual term is constant in the critic's
/// parameters, so it enters g_term only.
pub fn loss_video<T: Scalar, F>(
    g: &mut Graph<T>,
    critic: &F,
    real: Value,
    fake: Value,
    shuffled: Value,
    perc: Option<(&PerceptualExtractor, &ParamStore<T>)>,
    lambda: f64,
    alpha: f64,
    rng: &mut Rng,
) -> Result<VideoCritique>
where
    F: Fn(&mut Graph<T>, Value) -> Result<Value>,
{
    let dr = critic(g, real)?;
    let dr = g.mean_all(dr)?;
    let df = critic(g, fake)?;
    let df = g.mean_all(df)?;
    let ds = critic(g, shuffled)?;
    let ds = g.mean_all(ds)?;
    let gap0 = g.sub(dr, df)?;
    let gap = g.sub(gap0, ds)?;
    let gp_fake = gradient_penalty(g, critic, real, fake, rng)?;
    let gp_shuffle = gradient_penalty(g, critic, real, shuffled, rng)?;
    let gp_sum = g.add(gp_fake, gp_shuffle)?;
    let gp_w = g.mul_scalar(gp_sum, lambda)?;
    let neg_gap = g.mul_scalar(gap, -1.0)?;
    let d_loss = g.add(neg_gap, gp_w)?;
    let mut g_term = g.mul_scalar(df, -1.0)?;
    let mut perceptual = None;
    if let Some((ex, store)) = perc {
        let p = perceptual_distance(g, ex, store, real, fake)?;
        let pw = g.mul_scalar(p, alpha)?;
        g_term = g.add(g_term, pw)?;
        perceptual = Some(pw);
    }
    Ok(VideoCritique { d_loss, g_term, gap, gp_fake, gp_shuffle, perceptual })
}

pub fn gradcheck_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::discriminator::{BnMode, DiscDim, Discriminator};
    use crate::gradcheck::{finite_diff_check, CheckReport, DEFAULT_H, DEFAULT_TOL};
    let mut out: Vec<CheckReport> = Vec::new();
    for seed in [3u64, 19, 53] {
        let mut rng = Rng::seed_from(seed);

        // critic loss end to end: tiny image critic, penalty included — the
        // exact second-order path the critic update differentiates
        {
            let mut store: ParamStore<f64> = ParamStore::new();
            let mut prng = rng.split("params");
            let disc = Discriminator::init(&mut store, DiscDim::D2, 8, 2, 4, &mut prng)?;
            let mut leaves: Vec<Tensor<f64>> =
                store.entries().iter().map(|e| e.value.clone()).collect();
            let n_params = leaves.len();
            leaves.push(Tensor::rand_uniform(&[3, 8, 8], -1.0, 1.0, &mut rng));
            leaves.push(Tensor::rand_uniform(&[3, 8, 8], -1.0, 1.0, &mut rng));
            let wrt: Vec<usize> = (0..leaves.len()).collect();
            let disc2 = disc.clone();
            let empty: ParamStore<f64> = ParamStore::new();
            let eps_rng = rng.split("gp");
            out.push(finite_diff_check(
                &format!("losses/d_loss_image seed{seed}"),
                &leaves,
                &wrt,
                8,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                move |g, v| {
                    let bind = std::cell::RefCell::new(Bind::from_values(&v[..n_params]));
                    let critic = |g: &mut Graph<f64>, x: Value| {
                        let mut ups = Vec::new();
                        disc2.forward(
                            g,
                            &mut bind.borrow_mut(),
                            &empty,
                            x,
                            BnMode::Train { track: false },
                            &mut ups,
                        )
                    };
                    let mut r = eps_rng.clone();
                    let crit = loss_image(g, &critic, v[n_params], v[n_params + 1], 10.0, &mut r)?;
                    Ok(crit.d_loss)
                },
            )?);
        }

        // perceptual distance w.r.t. both videos (the generator-side path)
        {
            let mut store: ParamStore<f64> = ParamStore::new();
            let mut prng = rng.split("perc");
            let ex = PerceptualExtractor::init(&mut store, &mut prng);
            let leaves = vec![
                Tensor::rand_uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng),
                Tensor::rand_uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng),
            ];
            out.push(finite_diff_check(
                &format!("losses/perceptual seed{seed}"),
                &leaves,
                &[0, 1],
                10,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                move |g, v| perceptual_distance(g, &ex, &store, v[0], v[1]),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_critic_penalty_is_analytic() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(2);
        let real = g.constant(Tensor::rand_uniform(&[3, 2, 2], -1.0, 1.0, &mut rng));
        let fake = g.constant(Tensor::rand_uniform(&[3, 2, 2], -1.0, 1.0, &mut rng));
        // D(u) = sum(u): the gradient is exactly ones, so the norm is √n
        let critic = |g: &mut Graph<f64>, x: Value| g.sum_all(x);
        let p = gradient_penalty(&mut g, &critic, real, fake, &mut rng).unwrap();
        let want = (12.0_f64.sqrt() - 1.0).powi(2);
        assert!((g.value(p).item() - want).abs() < 1e-6, "{}", g.value(p).item());
    }

    #[test]
    fn constant_critic_penalty_is_one() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(3);
        let real = g.constant(Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng));
        let fake = g.constant(Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng));
        let critic = |g: &mut Graph<f64>, _x: Value| Ok(g.constant(Tensor::scalar(4.0)));
        let p = gradient_penalty(&mut g, &critic, real, fake, &mut rng).unwrap();
        assert!((g.value(p).item() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_critic_losses_reduce_to_penalties() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(4);
        let critic = |g: &mut Graph<f64>, x: Value| {
            let s = g.sum_all(x)?;
            g.mul_scalar(s, 0.0)
        };
        let a = g.constant(Tensor::rand_uniform(&[3, 4, 4], -1.0, 1.0, &mut rng));
        let b = g.constant(Tensor::rand_uniform(&[3, 4, 4], -1.0, 1.0, &mut rng));
        let ic = loss_image(&mut g, &critic, a, b, 10.0, &mut rng).unwrap();
        assert!((g.value(ic.d_loss).item() - 10.0).abs() < 1e-5);
        assert_eq!(g.value(ic.g_term).item(), 0.0);
        assert_eq!(g.value(ic.gap).item(), 0.0);

        let v = g.constant(Tensor::rand_uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut rng));
        let vf = g.constant(Tensor::rand_uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut rng));
        let vs = g.constant(Tensor::rand_uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut rng));
        let vc = loss_video(&mut g, &critic, v, vf, vs, None, 10.0, 10.0, &mut rng).unwrap();
        assert!((g.value(vc.d_loss).item() - 20.0).abs() < 1e-5);
        assert!(vc.perceptual.is_none());
    }

    #[test]
    fn identical_videos_have_zero_perceptual_distance() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = Rng::seed_from(5);
        let ex = PerceptualExtractor::init(&mut store, &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let v = g.constant(Tensor::rand_uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng));
        let d = perceptual_distance(&mut g, &ex, &store, v, v).unwrap();
        assert!(g.value(d).item() < 1e-7);
    }

    #[test]
    fn feature_norm_is_homogeneous() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(6);
        let a = g.constant(Tensor::rand_uniform(&[4, 3, 3], -1.0, 1.0, &mut rng));
        let b = g.constant(Tensor::rand_uniform(&[4, 3, 3], -1.0, 1.0, &mut rng));
        // halve the difference by moving b halfway toward a
        let d = g.sub(b, a).unwrap();
        let half_d = g.mul_scalar(d, 0.5).unwrap();
        let mid = g.add(a, half_d).unwrap();
        let full = feature_l2(&mut g, a, b).unwrap();
        let half = feature_l2(&mut g, a, mid).unwrap();
        assert!((g.value(full).item() - 2.0 * g.value(half).item()).abs() < 1e-9);
    }

    #[test]
    fn extractor_is_deterministic_and_frozen() {
        let mut sa: ParamStore<f64> = ParamStore::new();
        let mut sb: ParamStore<f64> = ParamStore::new();
        let ea = PerceptualExtractor::init(&mut sa, &mut Rng::seed_from(7));
        let _eb = PerceptualExtractor::init(&mut sb, &mut Rng::seed_from(7));
        for (x, y) in sa.entries().iter().zip(sb.entries()) {
            assert_eq!(x.value.data(), y.value.data());
            assert!(!x.trainable);
        }
        let mut g: Graph<f64> = Graph::new();
        let f = g.constant(Tensor::rand_uniform(&[3, 32, 32], -1.0, 1.0, &mut Rng::seed_from(8)));
        let feat = ea.features(&mut g, &sa, f).unwrap();
        assert_eq!(g.shape(feat), &[16, 8, 8]);
    }

    #[test]
    fn penalty_value_matches_direct_recomputation() {
        // same critic, same rng stream -> the in-graph penalty equals the
        // penalty computed from a host-side gradient read-back
        let mut rng = Rng::seed_from(9);
        let real = Tensor::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let fake = Tensor::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::rand_uniform(&[2, 2, 3, 3], -0.5, 0.5, &mut rng);
        let w2 = w.clone();
        let critic = move |g: &mut Graph<f64>, x: Value| {
            let wv = g.constant(w2.clone());
            let y = g.conv2d(x, wv)?;
            g.tanh(y)
        };
        let mut ga: Graph<f64> = Graph::new();
        let mut r1 = Rng::seed_from(11);
        let rv = ga.constant(real.clone());
        let fv = ga.constant(fake.clone());
        let p = gradient_penalty(&mut ga, &critic, rv, fv, &mut r1).unwrap();

        let mut r2 = Rng::seed_from(11);
        let u = r2.uniform();
        let data: Vec<f64> = real
            .data()
            .iter()
            .zip(fake.data())
            .map(|(&a, &b)| u * a + (1.0 - u) * b)
            .collect();
        let mut gb: Graph<f64> = Graph::new();
        let x = gb.leaf(Tensor::new(real.shape(), data).unwrap(), true);
        let m = critic(&mut gb, x).unwrap();
        let s = gb.mean_all(m).unwrap();
        let map = gb.backward_wrt(s, &[x]).unwrap();
        let grad = gb.grad_or_zeros(&map, x);
        let n: f64 = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let want = (n - 1.0) * (n - 1.0);
        assert!((ga.value(p).item() - want).abs() < 1e-12);
    }

    #[test]
    fn losses_gradcheck_suite_passes() {
        for r in gradcheck_suite().unwrap() {
            assert!(r.pass, "{r}");
        }
    }
}
