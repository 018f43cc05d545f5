//! Audio-conditional generator G.
//!
//! A per-frame input vector z_t is broadcast to 4×4, convolved to the
//! deepest channel width, then pushed through L = log2(N) − 2 residual
//! upsampling layers. Each layer runs: nearest ×2 upsample → 3×3 conv →
//! noise injection → (audio-)conditional instance norm → LeakyReLU → 3×3
//! conv → noise → norm → add 1×1-conv residual of the upsampled input →
//! LeakyReLU. Channels halve outward from `min(cap, base·2^L)` down to
//! `base`; a 1×1 conv plus tanh turns the outermost features into RGB.
//!
//! Under acIN the per-channel scale and shift come from the frame's sound
//! feature vector (γ_t = φ(f_t·W_γ + b_γ), likewise β_t); with acIN off the
//! same site holds an ordinary learned scale/shift so ablations change
//! plumbing, never shapes.

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::motion::LEAKY_SLOPE;
use crate::params::{Bind, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

pub const INSTANCE_EPS: f64 = 1e-5;

/// Scale/shift production at one normalization site.
#[derive(Debug, Clone)]
pub enum NormIds {
    /// γ_t, β_t as affine maps of the sound feature vector.
    Acin { w_g: ParamId, b_g: ParamId, w_b: ParamId, b_b: ParamId },
    /// Learned constants (acIN routed off).
    Plain { gamma: ParamId, beta: ParamId },
}

#[derive(Debug, Clone)]
pub struct GenLayerIds {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub res_w: ParamId,
    pub res_b: ParamId,
    pub norm1: NormIds,
    pub norm2: NormIds,
    /// Per-channel noise scales; `None` when injection is disabled.
    pub noise1: Option<ParamId>,
    pub noise2: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub fmt_w: ParamId,
    pub fmt_b: ParamId,
    pub layers: Vec<GenLayerIds>,
    pub rgb_w: ParamId,
    pub rgb_b: ParamId,
    pub resolution: usize,
    pub z_size: usize,
    /// Channels of the outermost layer (= predictor's C).
    pub out_channels: usize,
}

/// Channels produced by 1-based layer `l` of `n_layers`.
pub fn layer_channels(base: usize, cap: usize, n_layers: usize, l: usize) -> usize {
    cap.min(base << (n_layers - l))
}

pub fn num_layers(resolution: usize) -> usize {
    (resolution.trailing_zeros() as usize) - 2
}

impl Generator {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        resolution: usize,
        base_channels: usize,
        max_channels: usize,
        z_size: usize,
        feature_size: usize,
        acin: bool,
        noise_injection: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if resolution < 8 || !resolution.is_power_of_two() {
            return Err(Error::Config(format!(
                "generator resolution must be a power of two >= 8, got {resolution}"
            )));
        }
        let n_layers = num_layers(resolution);
        let conv = |store: &mut ParamStore<T>, name: String, co, ci, k, rng: &mut Rng| {
            store.add(name, Tensor::randn(&[co, ci, k, k], 0.02, rng), true)
        };
        let c0 = layer_channels(base_channels, max_channels, n_layers, 0);
        let fmt_w = conv(store, "gen.fmt.w".into(), c0, z_size, 3, rng);
        let fmt_b = store.add("gen.fmt.b", Tensor::zeros(&[c0]), true);

        let mut layers = Vec::with_capacity(n_layers);
        let mut c_in = c0;
        for l in 1..=n_layers {
            let c = layer_channels(base_channels, max_channels, n_layers, l);
            let p = format!("gen.l{l}");
            let conv1_w = conv(store, format!("{p}.conv1.w"), c, c_in, 3, rng);
            let conv1_b = store.add(format!("{p}.conv1.b"), Tensor::zeros(&[c]), true);
            let conv2_w = conv(store, format!("{p}.conv2.w"), c, c, 3, rng);
            let conv2_b = store.add(format!("{p}.conv2.b"), Tensor::zeros(&[c]), true);
            let res_w = conv(store, format!("{p}.res.w"), c, c_in, 1, rng);
            let res_b = store.add(format!("{p}.res.b"), Tensor::zeros(&[c]), true);
            let norm = |site: usize, store: &mut ParamStore<T>, rng: &mut Rng| -> NormIds {
                if acin {
                    NormIds::Acin {
                        w_g: store.add(
                            format!("{p}.acin{site}.wg"),
                            Tensor::randn(&[feature_size, c], 0.02, rng),
                            true,
                        ),
                        // bias 1 so γ_t starts near identity scaling
                        b_g: store.add(format!("{p}.acin{site}.bg"), Tensor::full(&[c], T::one()), true),
                        w_b: store.add(
                            format!("{p}.acin{site}.wb"),
                            Tensor::randn(&[feature_size, c], 0.02, rng),
                            true,
                        ),
                        b_b: store.add(format!("{p}.acin{site}.bb"), Tensor::zeros(&[c]), true),
                    }
                } else {
                    NormIds::Plain {
                        gamma: store.add(format!("{p}.norm{site}.g"), Tensor::full(&[c], T::one()), true),
                        beta: store.add(format!("{p}.norm{site}.b"), Tensor::zeros(&[c]), true),
                    }
                }
            };
            let norm1 = norm(1, store, rng);
            let norm2 = norm(2, store, rng);
            let noise = |site: usize, store: &mut ParamStore<T>| {
                noise_injection
                    .then(|| store.add(format!("{p}.noise{site}.s"), Tensor::zeros(&[c]), true))
            };
            let noise1 = noise(1, store);
            let noise2 = noise(2, store);
            layers.push(GenLayerIds {
                conv1_w, conv1_b, conv2_w, conv2_b, res_w, res_b, norm1, norm2, noise1, noise2,
            });
            c_in = c;
        }
        let rgb_w = conv(store, "gen.rgb.w".into(), 3, c_in, 1, rng);
        let rgb_b = store.add("gen.rgb.b", Tensor::zeros(&[3]), true);
        Ok(Generator {
            fmt_w,
            fmt_b,
            layers,
            rgb_w,
            rgb_b,
            resolution,
            z_size,
            out_channels: c_in,
        })
    }

    /// Spatial extents of the noise planes one frame consumes, in draw order
    /// (two per layer). Empty when injection is off.
    pub fn noise_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let r = 4usize << (i + 1);
            if layer.noise1.is_some() {
                v.push((r, r));
                v.push((r, r));
            }
        }
        v
    }
}

/// z_t broadcast to every 4×4 position: `[Z]` → `[Z,4,4]`.
pub fn format_input<T: Scalar>(g: &mut Graph<T>, z: Value) -> Result<Value> {
    let n = g.shape(z).to_vec();
    if n.len() != 1 {
        return Err(Error::Shape(format!("format_input wants a vector, got {n:?}")));
    }
    g.broadcast_channel(z, &[n[0], 4, 4])
}

/// Per-channel spatial standardization: (x − μ_c)/√(σ²_c + ε).
pub fn standardize<T: Scalar>(g: &mut Graph<T>, x: Value) -> Result<Value> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[1] * s[2] < 2 {
        return Err(Error::Shape(format!(
            "instance statistics need [C,H,W] with H*W >= 2, got {s:?}"
        )));
    }
    let mu = g.mean_keep0(x)?;
    let mu_b = g.broadcast_channel(mu, &s)?;
    let centered = g.sub(x, mu_b)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_keep0(sq)?;
    let var_eps = g.add_scalar(var, INSTANCE_EPS)?;
    let sd = g.sqrt(var_eps)?;
    let sd_b = g.broadcast_channel(sd, &s)?;
    g.div(centered, sd_b)
}

/// Apply one normalization site. `f` is the frame's sound feature vector
/// (required by the acIN variant, ignored by the plain one).
pub fn norm_apply<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    ids: &NormIds,
    x: Value,
    f: Option<Value>,
) -> Result<Value> {
    let shape = g.shape(x).to_vec();
    let xhat = standardize(g, x)?;
    let (gamma, beta) = match ids {
        NormIds::Acin { w_g, b_g, w_b, b_b } => {
            let f = f.ok_or_else(|| {
                Error::Shape("acIN needs the sound feature vector".into())
            })?;
            let w_g = bind.get(g, store, *w_g);
            let b_g = bind.get(g, store, *b_g);
            let w_b = bind.get(g, store, *w_b);
            let b_b = bind.get(g, store, *b_b);
            let ga = g.linear(f, w_g, Some(b_g))?;
            let ga = g.leaky_relu(ga, LEAKY_SLOPE)?;
            let be = g.linear(f, w_b, Some(b_b))?;
            let be = g.leaky_relu(be, LEAKY_SLOPE)?;
            (ga, be)
        }
        NormIds::Plain { gamma, beta } => {
            (bind.get(g, store, *gamma), bind.get(g, store, *beta))
        }
    };
    let gb = g.broadcast_channel(gamma, &shape)?;
    let bb = g.broadcast_channel(beta, &shape)?;
    let scaled = g.mul(xhat, gb)?;
    g.add(scaled, bb)
}

/// x + scale_c · n, with one noise plane shared across channels.
pub fn noise_inject<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    scale: Option<ParamId>,
    x: Value,
    noise: Option<Value>,
) -> Result<Value> {
    let Some(scale) = scale else { return Ok(x) };
    let noise = noise.ok_or_else(|| Error::Shape("noise plane missing".into()))?;
    let shape = g.shape(x).to_vec();
    if g.shape(noise) != shape {
        return Err(Error::Shape(format!(
            "noise shape {:?} vs activation {:?}",
            g.shape(noise),
            shape
        )));
    }
    let s = bind.get(g, store, scale);
    let sb = g.broadcast_channel(s, &shape)?;
    let sn = g.mul(sb, noise)?;
    g.add(x, sn)
}

/// Tile an `[H,W]` noise plane across `c` channels (host side, enters the
/// graph as one constant).
pub fn tile_noise<T: Scalar>(g: &mut Graph<T>, plane: &Tensor<T>, c: usize) -> Result<Value> {
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        data.extend_from_slice(plane.data());
    }
    Ok(g.constant(Tensor::new(&[c, h, w], data)?))
}

/// One generative layer.
#[allow(clippy::too_many_arguments)]
pub fn gen_layer_forward<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    ids: &GenLayerIds,
    x: Value,
    f: Option<Value>,
    noise: Option<(Value, Value)>,
    upsample: bool,
) -> Result<Value> {
    let up = if upsample { g.upsample2(x)? } else { x };
    let (n1, n2) = match noise {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let w1 = bind.get(g, store, ids.conv1_w);
    let b1 = bind.get(g, store, ids.conv1_b);
    let mut y = g.conv_bias(up, w1, b1)?;
    y = noise_inject(g, bind, store, ids.noise1, y, n1)?;
    y = norm_apply(g, bind, store, &ids.norm1, y, f)?;
    y = g.leaky_relu(y, LEAKY_SLOPE)?;
    let w2 = bind.get(g, store, ids.conv2_w);
    let b2 = bind.get(g, store, ids.conv2_b);
    y = g.conv_bias(y, w2, b2)?;
    y = noise_inject(g, bind, store, ids.noise2, y, n2)?;
    y = norm_apply(g, bind, store, &ids.norm2, y, f)?;
    let rw = bind.get(g, store, ids.res_w);
    let rb = bind.get(g, store, ids.res_b);
    let res = g.conv_bias(up, rw, rb)?;
    let s = g.add(y, res)?;
    g.leaky_relu(s, LEAKY_SLOPE)
}

impl Generator {
    /// Backbone for one frame: z_t (+ f_t for acIN, + pre-drawn noise
    /// planes) → outermost feature map `[base, N, N]`. The prediction layer
    /// slots between this and [`Generator::to_rgb`].
    pub fn backbone<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        z: Value,
        f: Option<Value>,
        noises: &[Tensor<T>],
    ) -> Result<Value> {
        if g.shape(z) != [self.z_size] {
            return Err(Error::Shape(format!(
                "generator wants z of size {}, got {:?}",
                self.z_size,
                g.shape(z)
            )));
        }
        let expect = self.noise_shapes().len();
        if noises.len() != expect {
            return Err(Error::Shape(format!(
                "{} noise planes supplied, generator consumes {expect}",
                noises.len()
            )));
        }
        let fmt = format_input(g, z)?;
        let wf = bind.get(g, store, self.fmt_w);
        let bf = bind.get(g, store, self.fmt_b);
        let mut x = g.conv_bias(fmt, wf, bf)?;
        let mut ni = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let noise = if layer.noise1.is_some() {
                let c = layer_channels_of(g, store, layer);
                let r = 4usize << (i + 1);
                debug_assert_eq!(noises[ni].shape(), &[r, r]);
                let a = tile_noise(g, &noises[ni], c)?;
                let b = tile_noise(g, &noises[ni + 1], c)?;
                ni += 2;
                Some((a, b))
            } else {
                None
            };
            x = gen_layer_forward(g, bind, store, layer, x, f, noise, true)?;
        }
        Ok(x)
    }

    /// 1×1 conv to color plus tanh; output strictly inside (−1,1).
    pub fn to_rgb<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let w = bind.get(g, store, self.rgb_w);
        let b = bind.get(g, store, self.rgb_b);
        let y = g.conv_bias(x, w, b)?;
        g.tanh(y)
    }
}

/// Output channel count of a layer, read off its conv2 weight.
fn layer_channels_of<T: Scalar>(
    _g: &Graph<T>,
    store: &ParamStore<T>,
    layer: &GenLayerIds,
) -> usize {
    store.get(layer.conv2_w).shape()[0]
}

pub fn gradcheck_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, CheckReport, DEFAULT_H, DEFAULT_TOL};
    let mut out: Vec<CheckReport> = Vec::new();
    for seed in [7u64, 19, 31] {
        let mut rng = Rng::seed_from(seed);

        // acIN: gradients w.r.t. x, f, and all four projection blocks
        {
            let (c, b, h, w) = (2usize, 3usize, 3usize, 2usize);
            let leaves = vec![
                Tensor::rand_uniform(&[c, h, w], -1.0, 1.0, &mut rng), // x
                Tensor::rand_uniform(&[b], -1.0, 1.0, &mut rng),       // f
                Tensor::rand_uniform(&[b, c], -0.5, 0.5, &mut rng),    // w_g
                Tensor::rand_uniform(&[c], 0.5, 1.5, &mut rng),        // b_g
                Tensor::rand_uniform(&[b, c], -0.5, 0.5, &mut rng),    // w_b
                Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng),       // b_b
            ];
            out.push(finite_diff_check(
                &format!("generator/acin seed{seed}"),
                &leaves,
                &[0, 1, 2, 3, 4, 5],
                10,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                |g, v| {
                    let ids = NormIds::Acin { w_g: 2, b_g: 3, w_b: 4, b_b: 5 };
                    let mut bind = Bind::from_values(v);
                    let empty: ParamStore<f64> = ParamStore::new();
                    let y = norm_apply(g, &mut bind, &empty, &ids, v[0], Some(v[1]))?;
                    g.sum_all(y)
                },
            )?);
        }

        // noise injection: gradients w.r.t. x and the per-channel scale
        {
            let (c, h, w) = (3usize, 2usize, 2usize);
            let plane: Tensor<f64> = Tensor::randn(&[h, w], 1.0, &mut rng);
            let leaves = vec![
                Tensor::rand_uniform(&[c, h, w], -1.0, 1.0, &mut rng),
                Tensor::rand_uniform(&[c], -1.0, 1.0, &mut rng),
            ];
            out.push(finite_diff_check(
                &format!("generator/noise_inject seed{seed}"),
                &leaves,
                &[0, 1],
                6,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                move |g, v| {
                    let mut bind = Bind::from_values(&[v[0], v[1]]);
                    let empty: ParamStore<f64> = ParamStore::new();
                    let n = tile_noise(g, &plane, c)?;
                    let y = noise_inject(g, &mut bind, &empty, Some(1), v[0], Some(n))?;
                    g.sum_all(y)
                },
            )?);
        }

        // whole miniature generator (N=8, one layer) w.r.t. every parameter,
        // z, and f — backbone plus to_rgb
        {
            let mut store: ParamStore<f64> = ParamStore::new();
            let mut prng = rng.split("params");
            let gen = Generator::init(&mut store, 8, 2, 4, 4, 3, true, true, &mut prng)?;
            let mut leaves: Vec<Tensor<f64>> =
                store.entries().iter().map(|e| e.value.clone()).collect();
            // noise scales start at zero, which hides their gradient path;
            // perturb them so the check is non-trivial
            for (i, e) in store.entries().iter().enumerate() {
                if e.name.contains("noise") {
                    leaves[i] = Tensor::rand_uniform(e.value.shape(), -0.5, 0.5, &mut rng);
                }
            }
            let n_params = leaves.len();
            leaves.push(Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng)); // z
            leaves.push(Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng)); // f
            let wrt: Vec<usize> = (0..leaves.len()).collect();
            let planes: Vec<Tensor<f64>> = gen
                .noise_shapes()
                .iter()
                .map(|&(h, w)| Tensor::randn(&[h, w], 1.0, &mut rng))
                .collect();
            let gen2 = gen.clone();
            let store2 = store;
            out.push(finite_diff_check(
                &format!("generator/full_miniature seed{seed}"),
                &leaves,
                &wrt,
                12,
                DEFAULT_H,
                DEFAULT_TOL,
                &mut rng,
                move |g, v| {
                    let mut bind = Bind::from_values(&v[..n_params]);
                    let x = gen2.backbone(
                        g,
                        &mut bind,
                        &store2,
                        v[n_params],
                        Some(v[n_params + 1]),
                        &planes,
                    )?;
                    let rgb = gen2.to_rgb(g, &mut bind, &store2, x)?;
                    g.sum_all(rgb)
                },
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_schedule_matches_published_setup() {
        // 256 → 6 layers, outermost 16, cap 512 reached at the deep end
        assert_eq!(num_layers(256), 6);
        let c: Vec<usize> = (0..=6).map(|l| layer_channels(16, 512, 6, l)).collect();
        assert_eq!(c, vec![512, 512, 256, 128, 64, 32, 16]);
        assert_eq!(num_layers(32), 3);
    }

    #[test]
    fn format_input_broadcasts_and_zero_maps_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let z = g.constant(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = format_input(&mut g, z).unwrap();
        assert_eq!(g.shape(y), &[3, 4, 4]);
        let d = g.value(y).data();
        assert!(d[..16].iter().all(|&x| x == 1.0));
        assert!(d[16..32].iter().all(|&x| x == -2.0));
        let zero = g.constant(Tensor::zeros(&[3]));
        let y0 = format_input(&mut g, zero).unwrap();
        assert!(g.value(y0).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn standardize_centers_and_normalizes() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(3);
        let x = g.constant(Tensor::rand_uniform(&[4, 5, 5], -3.0, 3.0, &mut rng));
        let y = standardize(&mut g, x).unwrap();
        let d = g.value(y).data();
        for c in 0..4 {
            let ch = &d[c * 25..(c + 1) * 25];
            let mean: f64 = ch.iter().sum::<f64>() / 25.0;
            let var: f64 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 25.0;
            assert!(mean.abs() <= 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-3, "var {var}");
        }
        // degenerate 1×1 spatial input must error
        let tiny = g.constant(Tensor::zeros(&[2, 1, 1]));
        assert!(standardize(&mut g, tiny).is_err());
    }

    #[test]
    fn acin_zero_weights_unit_bias_is_plain_standardization() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(4);
        let x = g.constant(Tensor::rand_uniform(&[2, 4, 4], -1.0, 1.0, &mut rng));
        let f = g.constant(Tensor::rand_uniform(&[5], -1.0, 1.0, &mut rng));
        let wg = g.constant(Tensor::zeros(&[5, 2]));
        let bg = g.constant(Tensor::full(&[2], 1.0));
        let wb = g.constant(Tensor::zeros(&[5, 2]));
        let bb = g.constant(Tensor::zeros(&[2]));
        let mut bind = Bind::from_values(&[wg, bg, wb, bb]);
        let empty: ParamStore<f64> = ParamStore::new();
        let ids = NormIds::Acin { w_g: 0, b_g: 1, w_b: 2, b_b: 3 };
        let y = norm_apply(&mut g, &mut bind, &empty, &ids, x, Some(f)).unwrap();
        let want = standardize(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(want).data());
    }

    #[test]
    fn zero_noise_scale_is_identity() {
        let mut g: Graph<f64> = Graph::new();
        let mut rng = Rng::seed_from(5);
        let x = g.constant(Tensor::rand_uniform(&[2, 3, 3], -1.0, 1.0, &mut rng));
        let s = g.constant(Tensor::zeros(&[2]));
        let plane: Tensor<f64> = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let n = tile_noise(&mut g, &plane, 2).unwrap();
        let mut bind = Bind::from_values(&[s]);
        let empty: ParamStore<f64> = ParamStore::new();
        let y = noise_inject(&mut g, &mut bind, &empty, Some(0), x, Some(n)).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn backbone_shapes_and_tanh_bounds() {
        let mut rng = Rng::seed_from(6);
        let mut store: ParamStore<f64> = ParamStore::new();
        let gen = Generator::init(&mut store, 16, 2, 8, 5, 3, true, true, &mut rng).unwrap();
        assert_eq!(gen.layers.len(), 2);
        assert_eq!(gen.noise_shapes(), vec![(8, 8), (8, 8), (16, 16), (16, 16)]);
        let mut g: Graph<f64> = Graph::new();
        let mut bind = Bind::new(&store, false);
        let z = g.constant(Tensor::rand_uniform(&[5], -1.0, 1.0, &mut rng));
        let f = g.constant(Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng));
        let planes: Vec<Tensor<f64>> = gen
            .noise_shapes()
            .iter()
            .map(|&(h, w)| Tensor::randn(&[h, w], 1.0, &mut rng))
            .collect();
        let x = gen.backbone(&mut g, &mut bind, &store, z, Some(f), &planes).unwrap();
        assert_eq!(g.shape(x), &[2, 16, 16]);
        let rgb = gen.to_rgb(&mut g, &mut bind, &store, x).unwrap();
        assert_eq!(g.shape(rgb), &[3, 16, 16]);
        assert!(g.value(rgb).data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn dead_main_branch_leaves_residual_path() {
        // zero conv1/conv2 weights and biases: output = φ(res(up(x))) with
        // the norm sites contributing β (zero at init) only
        let mut rng = Rng::seed_from(8);
        let mut store: ParamStore<f64> = ParamStore::new();
        let gen = Generator::init(&mut store, 8, 2, 4, 3, 2, false, false, &mut rng).unwrap();
        let l = &gen.layers[0];
        for id in [l.conv1_w, l.conv2_w] {
            let z = Tensor::zeros(store.get(id).shape());
            store.set(id, z);
        }
        let mut g: Graph<f64> = Graph::new();
        let mut bind = Bind::new(&store, false);
        let x0 = g.constant(Tensor::rand_uniform(&[4, 4, 4], -1.0, 1.0, &mut rng));
        let y = gen_layer_forward(&mut g, &mut bind, &store, l, x0, None, None, true).unwrap();

        let up = g.upsample2(x0).unwrap();
        let rw = bind.get(&mut g, &store, l.res_w);
        let rb = bind.get(&mut g, &store, l.res_b);
        let res = g.conv_bias(up, rw, rb).unwrap();
        let want = g.leaky_relu(res, LEAKY_SLOPE).unwrap();
        assert_eq!(g.value(y).data(), g.value(want).data());
        assert_eq!(g.shape(y), &[2, 8, 8]);
    }

    #[test]
    fn generator_gradcheck_suite_passes() {
        for r in gradcheck_suite().unwrap() {
            assert!(r.pass, "{r}");
        }
    }
}
