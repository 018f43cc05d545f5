//! Evaluation metrics for [−1,1] images and frame sequences: Gaussian-window
//! SSIM, PSNR, and a flicker index (mean absolute inter-frame difference, a
//! pretrained-free proxy for temporal smoothness). All computation runs in
//! f64 on the host; these never enter the training graph.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of [−1,1] pixels.
pub const DYNAMIC_RANGE: f64 = 2.0;

/// Normalized 1-D Gaussian window (the 2-D window is its outer product).
pub fn gaussian_window(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Valid-mode separable correlation of each channel plane with the window.
fn window_filter(x: &[f64], c: usize, h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; c * h * ow];
    for ci in 0..c {
        for i in 0..h {
            let base = (ci * h + i) * w;
            for j in 0..ow {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += x[base + j + t] * win[t];
                }
                rows[(ci * h + i) * ow + j] = acc;
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for j in 0..ow {
            for i in 0..oh {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += rows[(ci * h + i + t) * ow + j] * win[t];
                }
                out[(ci * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

/// Mean structural similarity between two [C,H,W] images over a Gaussian
/// window, averaged across channels and valid positions. Inputs are assumed
/// to live in [−1,1] (dynamic range 2).
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(Error::Shape(format!("ssim: {s:?} vs {:?}", b.shape())));
    }
    if s.len() != 3 || s[1] < SSIM_WINDOW || s[2] < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs [C,H,W] with H,W >= {SSIM_WINDOW}, got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let xa: Vec<f64> = a.data().iter().map(|v| Scalar::to_f64(*v)).collect();
    let xb: Vec<f64> = b.data().iter().map(|v| Scalar::to_f64(*v)).collect();
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mu_a = window_filter(&xa, c, h, w, &win);
    let mu_b = window_filter(&xb, c, h, w, &win);
    let m_aa = window_filter(&aa, c, h, w, &win);
    let m_bb = window_filter(&bb, c, h, w, &win);
    let m_ab = window_filter(&ab, c, h, w, &win);
    let c1 = (SSIM_K1 * DYNAMIC_RANGE) * (SSIM_K1 * DYNAMIC_RANGE);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE) * (SSIM_K2 * DYNAMIC_RANGE);
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / mu_a.len() as f64)
}

/// Peak signal-to-noise ratio in dB with MAX = 2 (the [−1,1] range).
/// Identical inputs give +∞.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("psnr: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.numel();
    if n == 0 {
        return Err(Error::Shape("psnr of empty tensors".into()));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = Scalar::to_f64(x) - Scalar::to_f64(y);
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// Mean over consecutive frame pairs of the mean absolute difference, for a
/// [C,T,H,W] sequence. Reported alongside the ground truth's own index when
/// judging temporal smoothness.
pub fn flicker_index<T: Scalar>(video: &Tensor<T>) -> Result<f64> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("flicker index wants [C,T,H,W], got {s:?}")));
    }
    let (c, t, hw) = (s[0], s[1], s[2] * s[3]);
    if t < 2 {
        return Err(Error::Data(format!("flicker index needs T >= 2, got {t}")));
    }
    let d = video.data();
    let mut acc = 0.0;
    for ci in 0..c {
        for ti in 1..t {
            let cur = (ci * t + ti) * hw;
            let prev = (ci * t + ti - 1) * hw;
            for p in 0..hw {
                acc += (Scalar::to_f64(d[cur + p]) - Scalar::to_f64(d[prev + p])).abs();
            }
        }
    }
    Ok(acc / (c * (t - 1) * hw) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn ssim_identical_is_one_and_sign_flip_is_less() {
        let mut rng = Rng::seed_from(1);
        let a: Tensor<f64> = Tensor::rand_uniform(&[3, 16, 16], -1.0, 1.0, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| -v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
    }

    #[test]
    fn ssim_window_normalizes_and_shapes_guard() {
        let w = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[5] > w[0]);
        let a: Tensor<f64> = Tensor::zeros(&[1, 8, 8]);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_degrades_with_noise() {
        let mut rng = Rng::seed_from(2);
        let a: Tensor<f64> = Tensor::rand_uniform(&[1, 20, 20], -0.5, 0.5, &mut rng);
        let small = Tensor::new(
            a.shape(),
            a.data().iter().map(|v| v + 0.05 * rng.normal()).collect(),
        )
        .unwrap();
        let big = Tensor::new(
            a.shape(),
            a.data().iter().map(|v| v + 0.3 * rng.normal()).collect(),
        )
        .unwrap();
        let s_small = ssim(&a, &small).unwrap();
        let s_big = ssim(&a, &big).unwrap();
        assert!(s_small > s_big, "{s_small} vs {s_big}");
        assert!(s_small < 1.0);
    }

    #[test]
    fn psnr_known_values() {
        let a: Tensor<f64> = Tensor::zeros(&[1, 4, 4]);
        let b = Tensor::full(&[1, 4, 4], 0.5);
        // mse = 0.25 -> 10·log10(4/0.25) = 10·log10(16)
        assert!((psnr(&a, &b).unwrap() - 10.0 * 16.0_f64.log10()).abs() < 1e-12);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn flicker_of_constant_and_alternating_sequences() {
        let c: Tensor<f64> = Tensor::full(&[2, 4, 3, 3], 0.25);
        assert_eq!(flicker_index(&c).unwrap(), 0.0);
        // frames alternate ±0.3 -> every |Δ| = 0.6
        let mut data = Vec::new();
        for _c in 0..2 {
            for t in 0..4 {
                let v = if t % 2 == 0 { 0.3 } else { -0.3 };
                data.extend(std::iter::repeat(v).take(9));
            }
        }
        let alt = Tensor::new(&[2, 4, 3, 3], data).unwrap();
        assert!((flicker_index(&alt).unwrap() - 0.6).abs() < 1e-12);
        let single: Tensor<f64> = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(flicker_index(&single).is_err());
    }
}
