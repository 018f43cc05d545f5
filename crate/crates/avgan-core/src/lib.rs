//! Sound-to-video GAN, end to end and framework-free: audio frontend,
//! reverse-mode autodiff on a flat-tensor graph, recurrent motion encoding,
//! audio-conditioned generator, directional convolutional video prediction,
//! WGAN-GP training, and the file formats that tie it together.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64). Training runs
//! in f32; gradient checking runs the same code in f64.

pub mod adam;
pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod params;
pub mod predictor;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Value};
pub use rng::Rng;
pub use tensor::Tensor;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar element type for all numeric code: IEEE float plus the small
/// amount of byte-level I/O the tensor/checkpoint formats need.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    /// Dtype code in the AVT1 tensor encoding (0 = f32, 1 = f64).
    const DTYPE: u8;
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $code:expr) => {
        impl Scalar for $t {
            const DTYPE: u8 = $code;
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline(always)]
            fn of(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..Self::BYTES].try_into().unwrap())
            }
        }
    };
}

impl_scalar!(f32, 0);
impl_scalar!(f64, 1);

/// Concrete aliases for the two supported precisions.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
