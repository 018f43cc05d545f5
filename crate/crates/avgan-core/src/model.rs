//! The full sound-to-video generator: recurrent motion encoder feeding the
//! convolutional frame synthesizer, with an optional directional prediction
//! layer smoothing the pre-RGB feature stream.
//!
//! A rollout maps a window of mel frames `f_1..f_T` (each `[B]`) to a video
//! `[3,T,N,N]`. Per frame the encoder consumes `[f_t; e_t]` (or `e_t` alone
//! when motion-from-sound routing is off), the latent is `[f_t; m_t]` under
//! sound-as-content routing (else `m_t`), and the conditioning vector reaches
//! the generator's adaptive norms only when that route is enabled.

use crate::config::{ExperimentConfig, PredictorVariant, Routing};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::graph::{Graph, Value};
use crate::motion::{self, MotionEncoder, MotionState};
use crate::params::{Bind, ParamStore};
use crate::predictor::{Predictor, PredictorState};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Scalar;

/// Recurrent carry handed between consecutive windows of one stream.
#[derive(Debug, Clone)]
pub struct CarryState<T: Scalar> {
    pub motion: MotionState<T>,
    pub predictor: Option<PredictorState<T>>,
}

impl<T: Scalar> CarryState<T> {
    pub fn reset(&mut self) {
        self.motion.reset();
        if let Some(p) = &mut self.predictor {
            p.reset();
        }
    }
}

/// Everything one rollout leaves on the graph.
pub struct Rollout<T: Scalar> {
    /// Stacked output `[3,T,N,N]`.
    pub video: Value,
    /// The same frames individually, `[3,N,N]` each, in time order.
    pub frames: Vec<Value>,
    /// Prediction blend masks, one per frame; empty when the layer is off.
    pub masks: Vec<Value>,
    /// Carry for the next window, read back off the graph.
    pub carry: CarryState<T>,
}

pub struct FullModel {
    pub encoder: MotionEncoder,
    pub generator: Generator,
    pub predictor: Option<Predictor>,
    pub routing: Routing,
    pub mel_bands: usize,
    pub noise_size: usize,
    pub rnn_size: usize,
    pub rnn_layers: usize,
}

impl FullModel {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &ExperimentConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let encoder = MotionEncoder::init(store, m.rnn_size, m.rnn_layers, rng);
        let generator = Generator::init(
            store,
            m.resolution,
            m.base_channels,
            m.max_channels,
            cfg.z_size(),
            cfg.audio.mel_bands,
            m.routing.acin,
            m.noise_injection,
            rng,
        )?;
        let predictor = match m.predictor.effective() {
            PredictorVariant::None => None,
            v => Some(Predictor::init(
                store,
                v,
                generator.out_channels,
                m.predictor.kernel,
                rng,
            )?),
        };
        Ok(FullModel {
            encoder,
            generator,
            predictor,
            routing: m.routing,
            mel_bands: cfg.audio.mel_bands,
            noise_size: m.noise_size,
            rnn_size: m.rnn_size,
            rnn_layers: m.rnn_layers,
        })
    }

    /// Fresh all-zero carry for the start of a stream.
    pub fn carry_zeros<T: Scalar>(&self) -> CarryState<T> {
        CarryState {
            motion: MotionState::zeros(self.rnn_size, self.rnn_layers),
            predictor: self.predictor.as_ref().map(|p| {
                PredictorState::zeros(p.n_cells(), self.generator.out_channels, self.generator.resolution)
            }),
        }
    }

    /// Generate one window. Stochastic draws (per-frame excitation, spatial
    /// noise planes) advance `rng` in a fixed order so that splitting a
    /// window into chunks with the returned carry replays identically.
    pub fn rollout<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Bind,
        store: &ParamStore<T>,
        features: &[Tensor<T>],
        carry: &CarryState<T>,
        rng: &mut Rng,
    ) -> Result<Rollout<T>> {
        if features.is_empty() {
            return Err(Error::Data("rollout needs at least one feature frame".into()));
        }
        let mut mrun = self.encoder.begin(g, &carry.motion)?;
        let mut prun = match (&self.predictor, &carry.predictor) {
            (Some(p), Some(s)) => Some(p.begin(g, s)?),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "carry state does not match the predictor configuration".into(),
                ))
            }
        };
        let noise_shapes = self.generator.noise_shapes();
        let mut frames = Vec::with_capacity(features.len());
        let mut masks = Vec::new();
        for f in features {
            if f.shape() != [self.mel_bands] {
                return Err(Error::Shape(format!(
                    "feature frame must be [{}], got {:?}",
                    self.mel_bands,
                    f.shape()
                )));
            }
            let e = Tensor::randn(&[self.noise_size], 1.0, rng);
            let r = motion::build_input(self.routing.mfs, f, &e)?;
            let rv = g.constant(r);
            let m_t = self.encoder.step(g, bind, store, &mut mrun, rv)?;
            let z = if self.routing.sac {
                let fv = g.constant(f.clone());
                g.concat0(&[fv, m_t])?
            } else {
                m_t
            };
            let cond = if self.routing.acin { Some(g.constant(f.clone())) } else { None };
            let noises: Vec<Tensor<T>> = noise_shapes
                .iter()
                .map(|&(h, w)| Tensor::randn(&[h, w], 1.0, rng))
                .collect();
            let mut x = self.generator.backbone(g, bind, store, z, cond, &noises)?;
            if let (Some(p), Some(run)) = (&self.predictor, prun.as_mut()) {
                let (xp, a) = p.step(g, bind, store, run, x)?;
                masks.push(a);
                x = xp;
            }
            frames.push(self.generator.to_rgb(g, bind, store, x)?);
        }
        let video = g.stack_axis1(&frames)?;
        let carry = CarryState {
            motion: self.encoder.commit(g, &mrun),
            predictor: match (&self.predictor, &prun) {
                (Some(p), Some(run)) => Some(p.commit(g, run)),
                _ => None,
            },
        };
        Ok(Rollout { video, frames, masks, carry })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.audio.mel_bands = 6;
        cfg.model.resolution = 8;
        cfg.model.base_channels = 4;
        cfg.model.max_channels = 8;
        cfg.model.rnn_layers = 2;
        cfg.model.rnn_size = 8;
        cfg.model.noise_size = 2;
        cfg.model.predictor.kernel = 3;
        cfg
    }

    fn run_window(
        cfg: &ExperimentConfig,
        features: &[Tensor<f64>],
        carry: Option<CarryState<f64>>,
        noise_seed: u64,
    ) -> (Vec<Vec<f64>>, CarryState<f64>) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from(11);
        let model = FullModel::init(&mut store, cfg, &mut rng).unwrap();
        let carry = carry.unwrap_or_else(|| model.carry_zeros());
        let mut g = Graph::new();
        let mut bind = Bind::new(&store, true);
        let mut nrng = Rng::seed_from(noise_seed);
        let out = model.rollout(&mut g, &mut bind, &store, features, &carry, &mut nrng).unwrap();
        let frames = out.frames.iter().map(|&v| g.value(v).data().to_vec()).collect();
        (frames, out.carry)
    }

    fn mel_ramp(t: usize, bands: usize) -> Tensor<f64> {
        Tensor::new(
            &[bands],
            (0..bands).map(|b| 0.1 * (t as f64 + 1.0) + 0.01 * b as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rollout_shapes_and_bounds() {
        let cfg = tiny_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from(11);
        let model = FullModel::init(&mut store, &cfg, &mut rng).unwrap();
        let feats: Vec<_> = (0..3).map(|t| mel_ramp(t, 6)).collect();
        let carry = model.carry_zeros();
        let mut g = Graph::new();
        let mut bind = Bind::new(&store, true);
        let mut nrng = Rng::seed_from(7);
        let out = model.rollout(&mut g, &mut bind, &store, &feats, &carry, &mut nrng).unwrap();
        assert_eq!(g.shape(out.video), &[3, 3, 8, 8]);
        assert_eq!(out.frames.len(), 3);
        assert_eq!(out.masks.len(), 3);
        assert!(g.value(out.video).data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(out.carry.motion.rings.len(), 2);
        let pred = out.carry.predictor.as_ref().unwrap();
        assert_eq!(pred.hidden.len(), 5);
        assert_eq!(pred.hidden[0].shape(), &[4, 8, 8]);
    }

    #[test]
    fn rollout_is_deterministic() {
        let cfg = tiny_config();
        let feats: Vec<_> = (0..3).map(|t| mel_ramp(t, 6)).collect();
        let (a, _) = run_window(&cfg, &feats, None, 7);
        let (b, _) = run_window(&cfg, &feats, None, 7);
        assert_eq!(a, b);
        let (c, _) = run_window(&cfg, &feats, None, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn chunked_rollout_matches_unrolled() {
        let cfg = tiny_config();
        let feats: Vec<_> = (0..4).map(|t| mel_ramp(t, 6)).collect();

        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from(11);
        let model = FullModel::init(&mut store, &cfg, &mut rng).unwrap();

        let mut nrng = Rng::seed_from(7);
        let mut g = Graph::new();
        let mut bind = Bind::new(&store, true);
        let full = model
            .rollout(&mut g, &mut bind, &store, &feats, &model.carry_zeros(), &mut nrng)
            .unwrap();
        let want: Vec<Vec<f64>> =
            full.frames.iter().map(|&v| g.value(v).data().to_vec()).collect();

        let mut nrng = Rng::seed_from(7);
        let mut g1 = Graph::new();
        let mut b1 = Bind::new(&store, true);
        let first = model
            .rollout(&mut g1, &mut b1, &store, &feats[..2], &model.carry_zeros(), &mut nrng)
            .unwrap();
        let mut g2 = Graph::new();
        let mut b2 = Bind::new(&store, true);
        let second =
            model.rollout(&mut g2, &mut b2, &store, &feats[2..], &first.carry, &mut nrng).unwrap();

        let got: Vec<Vec<f64>> = first
            .frames
            .iter()
            .map(|&v| g1.value(v).data().to_vec())
            .chain(second.frames.iter().map(|&v| g2.value(v).data().to_vec()))
            .collect();
        assert_eq!(want, got);
    }

    #[test]
    fn ablated_routing_runs_without_conditioning() {
        let mut cfg = tiny_config();
        cfg.model.routing = Routing { mfs: false, sac: false, acin: false };
        cfg.model.noise_injection = false;
        cfg.model.predictor.enabled = false;
        cfg.model.rnn_size = 5;
        cfg.model.noise_size = 5;
        assert_eq!(cfg.z_size(), 5);

        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from(3);
        let model = FullModel::init(&mut store, &cfg, &mut rng).unwrap();
        assert!(model.predictor.is_none());

        let feats: Vec<_> = (0..2).map(|t| mel_ramp(t, 6)).collect();
        let mut g = Graph::new();
        let mut bind = Bind::new(&store, true);
        let mut nrng = Rng::seed_from(7);
        let out =
            model.rollout(&mut g, &mut bind, &store, &feats, &model.carry_zeros(), &mut nrng).unwrap();
        assert_eq!(g.shape(out.video), &[3, 2, 8, 8]);
        assert!(out.masks.is_empty());
        assert!(out.carry.predictor.is_none());
    }

    #[test]
    fn mismatched_carry_is_rejected() {
        let cfg = tiny_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::seed_from(11);
        let model = FullModel::init(&mut store, &cfg, &mut rng).unwrap();
        let mut carry = model.carry_zeros::<f64>();
        carry.predictor = None;
        let feats = [mel_ramp(0, 6)];
        let mut g = Graph::new();
        let mut bind = Bind::new(&store, true);
        let mut nrng = Rng::seed_from(7);
        assert!(model.rollout(&mut g, &mut bind, &store, &feats, &carry, &mut nrng).is_err());
    }
}
