//! Motion encoder R: a residual stack of GRU layers whose recurrent skips
//! are dilated — layer l (1-based) reads the hidden state it produced
//! 2^(l−1) steps earlier. At a 50 ms frame period and three layers the
//! stack therefore listens at 50, 100 and 200 ms hops simultaneously.
//!
//! Layer update: m_t^l = φ(GRU_l(m_t^{l−1}, m_{t−d_l}^l) + m_t^{l−1}),
//! with φ = LeakyReLU(0.2). The recurrence is closed over the post-residual
//! output m^l, and the per-layer ring buffers of the last d_l outputs carry
//! across consecutive windows (truncated backpropagation: carried entries
//! enter the next window as constants).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::params::{Bind, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Dilation of 0-based layer `l`: 1, 2, 4, ...
pub fn dilation(l: usize) -> usize {
    1 << l
}

/// Parameter handles for one GRU cell (input size = hidden size = M).
#[derive(Debug, Clone)]
pub struct GruIds {
    pub wz_x: ParamId,
    pub wz_h: ParamId,
    pub bz: ParamId,
    pub wr_x: ParamId,
    pub wr_h: ParamId,
    pub br: ParamId,
    pub wc_x: ParamId,
    pub wc_h: ParamId,
    pub bc: ParamId,
}

/// One GRU step on rank-1 vectors:
/// z = σ(xWz + hUz + bz), r = σ(xWr + hUr + br),
/// c = tanh(xWc + (r⊙h)Uc + bc), h' = (1−z)⊙h + z⊙c.
///
/// With all parameters zero this collapses to h' = 0.5·h.
pub fn gru_cell<T: Scalar>(
    g: &mut Graph<T>,
    bind: &mut Bind,
    store: &ParamStore<T>,
    p: &GruIds,
    x: Value,
    h: Value,
) -> Result<Value> {
    let lin = |g: &mut Graph<T>, bind: &mut Bind, v: Value, wx, wh, b, hh: Value| -> Result<Value> {
        let wx = bind.get(g, store, wx);
        let wh = bind.get(g, store, wh);
        let b = bind.get(g, store, b);
        let a = g.linear(v, wx, None)?;
        let c = g.linear(hh, wh, Some(b))?;
        g.add(a, c)
    };
    let z = lin(g, bind, x, p.wz_x, p.wz_h, p.bz, h)?;
    let z = g.sigmoid(z)?;
    let r = lin(g, bind, x, p.wr_x, p.wr_h, p.br, h)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let c = lin(g, bind, x, p.wc_x, p.wc_h, p.bc, rh)?;
    let c = g.tanh(c)?;
    // h' = (1−z)⊙h + z⊙c  =  h − z⊙h + z⊙c
    let zh = g.mul(z, h)?;
    let zc = g.mul(z, c)?;
    let t = g.sub(h, zh)?;
    g.add(t, zc)
}

/// Host-side carried state: per layer, the last d_l post-residual outputs,
/// oldest first. All zeros at a stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState<T: Scalar> {
    pub rings: Vec<VecDeque<Tensor<T>>>,
}

impl<T: Scalar> MotionState<T> {
    pub fn zeros(m: usize, layers: usize) -> Self {
        let rings = (0..layers)
            .map(|l| (0..dilation(l)).map(|_| Tensor::zeros(&[m])).collect())
            .collect();
        MotionState { rings }
    }

    pub fn reset(&mut self) {
        for ring in &mut self.rings {
            for t in ring.iter_mut() {
                *t = Tensor::zeros(t.shape());
            }
        }
    }
}

/// In-graph view of the state during one forward window.
pub struct MotionRun {
    rings: Vec<VecDeque<Value>>,
}

#[derive(Debug, Clone)]
pub struct MotionEncoder {
    pub layers: Vec<GruIds>,
    pub m: usize,
}

impl MotionEncoder {
    /// Normal N(0, 0.02) transforms, zero biases.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        m: usize,
        layers: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut ids = Vec::with_capacity(layers);
        for l in 0..layers {
            let w = |store: &mut ParamStore<T>, name: &str, rng: &mut Rng| {
                store.add(format!("motion.l{l}.{name}"), Tensor::randn(&[m, m], 0.02, rng), true)
            };
            let wz_x = w(store, "wz_x", rng);
            let wz_h = w(store, "wz_h", rng);
            let wr_x = w(store, "wr_x", rng);
            let wr_h = w(store, "wr_h", rng);
            let wc_x = w(store, "wc_x", rng);
            let wc_h = w(store, "wc_h", rng);
            let bz = store.add(format!("motion.l{l}.bz"), Tensor::zeros(&[m]), true);
            let br = store.add(format!("motion.l{l}.br"), Tensor::zeros(&[m]), true);
            let bc = store.add(format!("motion.l{l}.bc"), Tensor::zeros(&[m]), true);
            ids.push(GruIds { wz_x, wz_h, bz, wr_x, wr_h, br, wc_x, wc_h, bc });
        }
        MotionEncoder { layers: ids, m }
    }

    /// Insert the carried state into the graph as constants.
    pub fn begin<T: Scalar>(&self, g: &mut Graph<T>, state: &MotionState<T>) -> Result<MotionRun> {
        if state.rings.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "carried state has {} layers, encoder has {}",
                state.rings.len(),
                self.layers.len()
            )));
        }
        let mut rings = Vec::with_capacity(state.rings.len());
        for (l, ring) in state.rings.iter().enumerate() {
            if ring.len() != dilation(l) {
                return Err(Error::Shape(format!(
                    "layer {l} ring holds {} states, dilation wants {}",
                    ring.len(),
                    dilation(l)
                )));
            }
            rings.push(ring.iter().map(|t| g.constant(t.clone())).collect());
        }
        Ok(MotionRun { rings })
    }

    /// One frame step: input r_t (rank-1, size M) → motion code m_t.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        run: &mut MotionRun,
        input: Value,
    ) -> Result<Value> {
        let mut x = input;
        for (l, p) in self.layers.iter().enumerate() {
            let h_past = run.rings[l].pop_front().expect("ring non-empty");
            let cell = gru_cell(g, bind, store, p, x, h_past)?;
            let res = g.add(cell, x)?;
            let m = g.leaky_relu(res, LEAKY_SLOPE)?;
            run.rings[l].push_back(m);
            x = m;
        }
        Ok(x)
    }

    /// Whole window in one call.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        run: &mut MotionRun,
        inputs: &[Value],
    ) -> Result<Vec<Value>> {
        inputs
            .iter()
            .map(|&r| self.step(g, bind, store, run, r))
            .collect()
    }

    /// Read the ring contents back out of the graph for carry-over.
    pub fn commit<T: Scalar>(&self, g: &Graph<T>, run: &MotionRun) -> MotionState<T> {
        let rings = run
            .rings
            .iter()
            .map(|ring| ring.iter().map(|&v| g.value(v).clone()).collect())
            .collect();
        MotionState { rings }
    }
}

/// Assemble the per-frame recurrent input r_t from sound features and noise.
pub fn build_input<T: Scalar>(mfs: bool, f: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    if !mfs {
        return Ok(e.clone());
    }
    let mut data = Vec::with_capacity(f.numel() + e.numel());
    data.extend_from_slice(f.data());
    data.extend_from_slice(e.data());
    Tensor::new(&[f.numel() + e.numel()], data)
}

pub fn gradcheck_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, CheckReport, DEFAULT_H, DEFAULT_TOL};
    let mut out: Vec<CheckReport> = Vec::new();
    for seed in [3u64, 14, 15] {
        let mut rng = Rng::seed_from(seed);
        let m = 3;
        let layers = 2;
        // leaves: all encoder params + 4 inputs; checked through a 4-step
        // window so the dilated skip (d=2) is exercised across time.
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut prng = rng.split("params");
        let enc = MotionEncoder::init(&mut store, m, layers, &mut prng);
        let mut leaves: Vec<Tensor<f64>> = store.entries().iter().map(|e| e.value.clone()).collect();
        let n_params = leaves.len();
        for _ in 0..4 {
            leaves.push(Tensor::rand_uniform(&[m], -1.0, 1.0, &mut rng));
        }
        let wrt: Vec<usize> = (0..leaves.len()).collect();
        let enc2 = enc.clone();
        let empty: ParamStore<f64> = ParamStore::new();
        out.push(finite_diff_check(
            &format!("motion/dilated_stack seed{seed}"),
            &leaves,
            &wrt,
            10,
            DEFAULT_H,
            DEFAULT_TOL,
            &mut rng,
            move |g, v| {
                // params live as ordinary leaves; Bind maps ids onto them
                let mut bind = Bind::from_values(&v[..n_params]);
                let state = MotionState::zeros(m, layers);
                let mut run = enc2.begin(g, &state)?;
                let mut acc = None;
                for t in 0..4 {
                    let y = enc2.step(g, &mut bind, &empty, &mut run, v[n_params + t])?;
                    let s = g.sum_all(y)?;
                    acc = Some(match acc {
                        None => s,
                        Some(a) => g.add(a, s)?,
                    });
                }
                Ok(acc.unwrap())
            },
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_encoder(m: usize, layers: usize) -> (ParamStore<f64>, MotionEncoder) {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(1);
        let enc = MotionEncoder::init(&mut store, m, layers, &mut rng);
        for id in 0..store.len() {
            let z = Tensor::zeros(store.get(id).shape());
            store.set(id, z);
        }
        (store, enc)
    }

    #[test]
    fn zero_parameter_cell_halves_hidden() {
        let (store, enc) = zero_encoder(4, 1);
        let mut g: Graph<f64> = Graph::new();
        let mut bind = Bind::new(&store, false);
        let x = g.constant(Tensor::full(&[4], 0.7));
        let h = g.constant(Tensor::new(&[4], vec![1.0, -2.0, 0.0, 4.0]).unwrap());
        let y = gru_cell(&mut g, &mut bind, &store, &enc.layers[0], x, h).unwrap();
        let want = [0.5, -1.0, 0.0, 2.0];
        for (a, b) in g.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameter_stack_composes_leaky_relu() {
        // zero state, zero params: every layer computes φ(0·... + x) = φ(x)
        let (store, enc) = zero_encoder(2, 3);
        let mut g: Graph<f64> = Graph::new();
        let mut bind = Bind::new(&store, false);
        let state = MotionState::zeros(2, 3);
        let mut run = enc.begin(&mut g, &state).unwrap();
        let u = g.constant(Tensor::new(&[2], vec![0.8, -0.5]).unwrap());
        let y = enc.step(&mut g, &mut bind, &store, &mut run, u).unwrap();
        // φ(φ(φ(x))): positive passes through, negative scales by 0.2³
        let got = g.value(y).data().to_vec();
        assert!((got[0] - 0.8).abs() < 1e-12);
        assert!((got[1] + 0.5 * 0.2f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn chunked_equals_unrolled_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(42);
        let enc = MotionEncoder::init(&mut store, 5, 3, &mut rng);
        let inputs: Vec<Tensor<f64>> =
            (0..9).map(|_| Tensor::rand_uniform(&[5], -1.0, 1.0, &mut rng)).collect();

        let run_windows = |splits: &[usize]| -> (Vec<Tensor<f64>>, MotionState<f64>) {
            let mut state = MotionState::zeros(5, 3);
            let mut outs = Vec::new();
            let mut cursor = 0;
            for &len in splits {
                let mut g: Graph<f64> = Graph::new();
                let mut bind = Bind::new(&store, false);
                let mut run = enc.begin(&mut g, &state).unwrap();
                for t in cursor..cursor + len {
                    let x = g.constant(inputs[t].clone());
                    let y = enc.step(&mut g, &mut bind, &store, &mut run, x).unwrap();
                    outs.push(g.value(y).clone());
                }
                state = enc.commit(&g, &run);
                cursor += len;
            }
            (outs, state)
        };

        let (one, st_one) = run_windows(&[9]);
        let (split, st_split) = run_windows(&[4, 2, 3]);
        for (a, b) in one.iter().zip(&split) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(st_one, st_split);
    }

    #[test]
    fn state_rings_have_dilation_lengths_and_reset_zeroes() {
        let mut state: MotionState<f64> = MotionState::zeros(3, 3);
        assert_eq!(state.rings.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![1, 2, 4]);
        state.rings[2][1] = Tensor::full(&[3], 7.0);
        state.reset();
        assert!(state.rings[2][1].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn build_input_concat_order_and_sizes() {
        let f: Tensor<f64> = Tensor::full(&[64], 0.25);
        let e: Tensor<f64> = Tensor::full(&[2], -1.5);
        let r = build_input(true, &f, &e).unwrap();
        assert_eq!(r.shape(), &[66]);
        assert_eq!(r.data()[..64], f.data()[..]);
        assert_eq!(r.data()[64..], e.data()[..]);
        let r2 = build_input(false, &f, &e).unwrap();
        assert_eq!(r2.data(), e.data());
    }

    #[test]
    fn motion_gradcheck_suite_passes() {
        for r in gradcheck_suite().unwrap() {
            assert!(r.pass, "{r}");
        }
    }
}
