//! Video-prediction layer: four directional ConvGRUs plus one centered
//! ConvGRU whose hidden states are blended into the hallucinated activations
//! through an auto-regressed attention mask.
//!
//! A directional gate convolution sums, over levels k = 0..=(K−1)/2, a
//! centered one-dimensional kernel of length 2k+1 applied across the motion
//! axis and translated k pixels along the signed direction (zeros shift in
//! at the trailing edge). The union of taps forms the triangular masks:
//! with K=3 each gate reaches 4 pixels — its own and a 3-tap line one step
//! against the motion direction. Opposite directions share parameters, so
//! the layer is exactly mirror-equivariant; shifting instead of growing
//! kernels keeps it translation-equivariant: x*h⁺ = τ⁺(x*h).
//!
//! Blending: X_t = concat of the five hidden states (5P channels),
//! x′ = W_x·X_t + b_x, a = sigmoid(W_a·X_t + b_a) (one channel, broadcast),
//! x″ = a⊙x + (1−a)⊙x′. The mask bias starts at +2 so training begins near
//! pass-through of the hallucinated frame.

use crate::config::PredictorVariant;
use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::kernels::orthonormalize_rows;
use crate::params::{Bind, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

pub const MASK_BIAS_INIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HPos,
    HNeg,
    Center,
    VPos,
    VNeg,
}

impl Direction {
    /// Output translation at level k: (dy, dx).
    pub fn shift(self, k: usize) -> (isize, isize) {
        let k = k as isize;
        match self {
            Direction::HPos => (0, k),
            Direction::HNeg => (0, -k),
            Direction::Center => (0, 0),
            Direction::VPos => (k, 0),
            Direction::VNeg => (-k, 0),
        }
    }
}

/// The five cells in concatenation order.
pub const DIRECTIONS: [Direction; 5] = [
    Direction::HPos,
    Direction::HNeg,
    Direction::Center,
    Direction::VPos,
    Direction::VNeg,
];

/// One directional gate path: a kernel per level plus one shared bias.
#[derive(Debug, Clone)]
pub struct DirGateIds {
    pub levels: Vec<ParamId>,
    pub bias: ParamId,
}

/// Gate triple (update, reset, candidate) for one parameter bundle. The
/// horizontal bundle serves both h+ and h−, the vertical both v±.
#[derive(Debug, Clone)]
pub struct DirBundleIds {
    pub z: DirGateIds,
    pub r: DirGateIds,
    pub c: DirGateIds,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub variant: PredictorVariant,
    pub horiz: Option<DirBundleIds>,
    pub vert: Option<DirBundleIds>,
    pub center: DirBundleIds,
    pub blend_w: ParamId,
    pub blend_b: ParamId,
    pub mask_w: ParamId,
    pub mask_b: ParamId,
    /// Aggregation extent K (odd).
    pub k: usize,
    /// Channel width C (= hidden width P).
    pub channels: usize,
}

/// Carried hidden states, one `[P,N,N]` tensor per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState<T: Scalar> {
    pub hidden: Vec<Tensor<T>>,
}

impl<T: Scalar> PredictorState<T> {
    pub fn zeros(cells: usize, p: usize, n: usize) -> Self {
        PredictorState { hidden: (0..cells).map(|_| Tensor::zeros(&[p, n, n])).collect() }
    }

    pub fn reset(&mut self) {
        for h in &mut self.hidden {
            *h = Tensor::zeros(h.shape());
        }
    }
}

/// In-graph hidden states during a window.
pub struct PredictorRun {
    pub hidden: Vec<Value>,
}

/// Directional or centered gate kernel initialization: hidden-to-hidden
/// slice orthogonal (rows of the flattened [P, P·taps] matrix), input slice
/// N(0, 0.02).
fn init_gate_kernel<T: Scalar>(
    c: usize,
    p: usize,
    kh: usize,
    kw: usize,
    rng: &mut Rng,
) -> Tensor<T> {
    let mut w: Tensor<T> = Tensor::randn(&[p, c + p, kh, kw], 0.02, rng);
    let taps = kh * kw;
    // hidden slice as a [p, p*taps] row matrix
    let mut rows = vec![0.0f64; p * p * taps];
    for v in rows.iter_mut() {
        *v = rng.normal();
    }
    orthonormalize_rows(&mut rows, p, p * taps);
    {
        let stride_in = (c + p) * taps;
        let data = w.data_mut();
        for o in 0..p {
            for i in 0..p {
                for t in 0..taps {
                    data[o * stride_in + (c + i) * taps + t] =
                        T::of(rows[o * p * taps + i * taps + t]);
                }
            }
        }
    }
    w
}

impl Predictor {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        variant: PredictorVariant,
        channels: usize,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::Config(format!("predictor kernel must be odd, got {k}")));
        }
        let c = channels;
        let p = channels;
        let levels = k / 2 + 1;
        let dir_gate = |store: &mut ParamStore<T>, name: String, vertical: bool, rng: &mut Rng| {
            let mut ids = Vec::with_capacity(levels);
            for lv in 0..levels {
                let len = 2 * lv + 1;
                let (kh, kw) = if vertical { (1, len) } else { (len, 1) };
                ids.push(store.add(
                    format!("{name}.k{lv}"),
                    init_gate_kernel::<T>(c, p, kh, kw, rng),
                    true,
                ));
            }
            let bias = store.add(format!("{name}.b"), Tensor::zeros(&[p]), true);
            DirGateIds { levels: ids, bias }
        };
        let dir_bundle = |store: &mut ParamStore<T>, name: &str, vertical: bool, rng: &mut Rng| {
            DirBundleIds {
                z: dir_gate(store, format!("{name}.z"), vertical, rng),
                r: dir_gate(store, format!("{name}.r"), vertical, rng),
                c: dir_gate(store, format!("{name}.c"), vertical, rng),
            }
        };
        let center_gate = |store: &mut ParamStore<T>, name: String, rng: &mut Rng| {
            let w = store.add(format!("{name}.k"), init_gate_kernel::<T>(c, p, k, k, rng), true);
            let bias = store.add(format!("{name}.b"), Tensor::zeros(&[p]), true);
            DirGateIds { levels: vec![w], bias }
        };
        let center = DirBundleIds {
            z: center_gate(store, "pred.center.z".into(), rng),
            r: center_gate(store, "pred.center.r".into(), rng),
            c: center_gate(store, "pred.center.c".into(), rng),
        };
        let (horiz, vert) = match variant {
            PredictorVariant::Dirconvgru => (
                Some(dir_bundle(store, "pred.horiz", false, rng)),
                Some(dir_bundle(store, "pred.vert", true, rng)),
            ),
            PredictorVariant::Convgru => (None, None),
            PredictorVariant::None => {
                return Err(Error::Config("predictor disabled; nothing to build".into()))
            }
        };
        let n_cells = if horiz.is_some() { 5 } else { 1 };
        let blend_w = store.add(
            "pred.blend.w",
            Tensor::randn(&[c, n_cells * p, 1, 1], 0.02, rng),
            true,
        );
        let blend_b = store.add("pred.blend.b", Tensor::zeros(&[c]), true);
        let mask_w = store.add(
            "pred.mask.w",
            Tensor::randn(&[1, n_cells * p, 1, 1], 0.02, rng),
            true,
        );
        let mask_b = store.add("pred.mask.b", Tensor::full(&[1], T::of(MASK_BIAS_INIT)), true);
        Ok(Predictor {
            variant,
            horiz,
            vert,
            center,
            blend_w,
            blend_b,
            mask_w,
            mask_b,
            k,
            channels,
        })
    }

    pub fn n_cells(&self) -> usize {
        if self.horiz.is_some() { 5 } else { 1 }
    }

    pub fn begin<T: Scalar>(&self, g: &mut Graph<T>, state: &PredictorState<T>) -> Result<PredictorRun> {
        if state.hidden.len() != self.n_cells() {
            return Err(Error::Shape(format!(
                "carried predictor state has {} cells, layer has {}",
                state.hidden.len(),
                self.n_cells()
            )));
        }
        Ok(PredictorRun { hidden: state.hidden.iter().map(|t| g.constant(t.clone())).collect() })
    }

    pub fn commit<T: Scalar>(&self, g: &Graph<T>, run: &PredictorRun) -> PredictorState<T> {
        PredictorState { hidden: run.hidden.iter().map(|&v| g.value(v).clone()).collect() }
    }

    fn bundle_for(&self, dir: Direction) -> &DirBundleIds {
        match dir {
            Direction::HPos | Direction::HNeg => self.horiz.as_ref().expect("directional bundle"),
            Direction::VPos | Direction::VNeg => self.vert.as_ref().expect("directional bundle"),
            Direction::Center => &self.center,
        }
    }

    /// One frame: blend the five (or one) updated hidden states into x_t.
    /// Returns x″_t and the mask a_t; hidden states update in `run`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        run: &mut PredictorRun,
        x: Value,
    ) -> Result<(Value, Value)> {
        let sx = g.shape(x).to_vec();
        if sx.len() != 3 || sx[0] != self.channels {
            return Err(Error::Shape(format!(
                "predictor wants [{},N,N], got {sx:?}",
                self.channels
            )));
        }
        let dirs: &[Direction] = if self.n_cells() == 5 {
            &DIRECTIONS
        } else {
            &[Direction::Center]
        };
        let mut new_hidden = Vec::with_capacity(dirs.len());
        for (i, &dir) in dirs.iter().enumerate() {
            let h = run.hidden[i];
            let bundle = self.bundle_for(dir);
            let hn = dirconvgru_step(g, bind, store, bundle, dir, x, h)?;
            new_hidden.push(hn);
        }
        run.hidden = new_hidden.clone();
        let cat = g.concat0(&new_hidden)?;
        let bw = bind.get(g, store, self.blend_w);
        let bb = bind.get(g, store, self.blend_b);
        let xp = g.conv_bias(cat, bw, bb)?;
        let mw = bind.get(g, store, self.mask_w);
        let mb = bind.get(g, store, self.mask_b);
        let pre = g.conv_bias(cat, mw, mb)?;
        let a = g.sigmoid(pre)?; // [1,N,N]
        // broadcast the single-channel mask over C by stacking copies
        let a_c = g.concat0(&vec![a; self.channels])?;
        // x″ = a⊙x + (1−a)⊙x′ = x′ + a⊙(x − x′)
        let d = g.sub(x, xp)?;
        let ad = g.mul(a_c, d)?;
        let out = g.add(xp, ad)?;
        Ok((out, a))
    }
}

/// Sum of level convolutions, each translated along the signed direction,
/// plus the gate's shared bias.
pub fn directional_conv<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    gate: &DirGateIds,
    dir: Direction,
    u: Value,
) -> Result<Value> {
    let mut acc: Option<Value> = None;
    for (lv, &wid) in gate.levels.iter().enumerate() {
        let w = bind.get(g, store, wid);
        let mut y = g.conv2d(u, w)?;
        let (dy, dx) = dir.shift(lv);
        if (dy, dx) != (0, 0) {
            y = g.translate2(y, dy, dx)?;
        }
        acc = Some(match acc {
            None => y,
            Some(a) => g.add(a, y)?,
        });
    }
    let b = bind.get(g, store, gate.bias);
    g.add_channel_bias(acc.expect("at least one level"), b)
}

/// ConvGRU step where every gate transform is a directional convolution
/// over the channel-concatenation of input and hidden state.
pub fn dirconvgru_step<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    bundle: &DirBundleIds,
    dir: Direction,
    x: Value,
    h: Value,
) -> Result<Value> {
    let u = g.concat0(&[x, h])?;
    let z = directional_conv(g, bind, store, &bundle.z, dir, u)?;
    let z = g.sigmoid(z)?;
    let r = directional_conv(g, bind, store, &bundle.r, dir, u)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let u2 = g.concat0(&[x, rh])?;
    let c = directional_conv(g, bind, store, &bundle.c, dir, u2)?;
    let c = g.tanh(c)?;
    // h' = (1−z)⊙h + z⊙c
    let zh = g.mul(z, h)?;
    let zc = g.mul(z, c)?;
    let t = g.sub(h, zh)?;
    g.add(t, zc)
}

pub fn gradcheck_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, CheckReport, DEFAULT_H, DEFAULT_TOL};
    let mut out: Vec<CheckReport> = Vec::new();
    for seed in [13u64, 29, 47] {
        let mut rng = Rng::seed_from(seed);
        let (c, n) = (2usize, 4usize);
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = rng.split("params");
        let pred = Predictor::init(&mut store, PredictorVariant::Dirconvgru, c, 3, &mut prng)?;
        let mut leaves: Vec<Tensor<f64>> =
            store.entries().iter().map(|e| e.value.clone()).collect();
        let n_params = leaves.len();
        // two frames: the check crosses the state dependency
        leaves.push(Tensor::rand_uniform(&[c, n, n], -1.0, 1.0, &mut rng));
        leaves.push(Tensor::rand_uniform(&[c, n, n], -1.0, 1.0, &mut rng));
        let wrt: Vec<usize> = (0..leaves.len()).collect();
        let pred2 = pred.clone();
        let empty: ParamStore<f64> = ParamStore::new();
        out.push(finite_diff_check(
            &format!("predictor/two_step_blend seed{seed}"),
            &leaves,
            &wrt,
            12,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            move |g, v| {
                let mut bind = Bind::from_values(&v[..n_params]);
                let state = PredictorState::zeros(5, c, n);
                let mut run = pred2.begin(g, &state)?;
                let (y1, _) = pred2.step(g, &mut bind, &empty, &mut run, v[n_params])?;
                let (y2, _) = pred2.step(g, &mut bind, &empty, &mut run, v[n_params + 1])?;
                let s1 = g.sum_all(y1)?;
                let s2 = g.sum_all(y2)?;
                g.add(s1, s2)
            },
        )?);
    }
    Ok(out)
}
