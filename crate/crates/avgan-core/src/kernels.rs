//! Raw numeric kernels on flat row-major buffers.
//!
//! Every convolution here is stride 1 with zero "same" padding (odd kernels),
//! matching the network design. Two routes exist for each conv: a direct
//! nested-loop form kept as the readable reference, and an im2col + matmul
//! form used by default (the graph layer asserts they agree in tests).

use crate::Scalar;

// ---------------------------------------------------------------- matmul --

/// C[m,n] = A[m,k] · B[k,n].
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aip * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,p] · B[n,p]ᵀ (row-by-row dot products).
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, p: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..n {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

// ---------------------------------------------------------------- conv2d --

/// Reference conv: x[Cin,H,W] * w[Cout,Cin,kh,kw] -> [Cout,H,W].
pub fn conv2d_direct<T: Scalar>(
    x: &[T],
    w: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![T::zero(); cout * h * wd];
    for co in 0..cout {
        for ci in 0..cin {
            let xc = &x[ci * h * wd..(ci + 1) * h * wd];
            let wc = &w[(co * cin + ci) * kh * kw..(co * cin + ci + 1) * kh * kw];
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = T::zero();
                    for a in 0..kh {
                        let sy = y as isize + a as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for b in 0..kw {
                            let sx = xx as isize + b as isize - pw as isize;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            acc = acc + xc[sy as usize * wd + sx as usize] * wc[a * kw + b];
                        }
                    }
                    out[(co * h + y) * wd + xx] = out[(co * h + y) * wd + xx] + acc;
                }
            }
        }
    }
    out
}

/// Patch matrix: rows indexed by (ci, a, b), columns by output site (y, x).
pub fn im2col_2d<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * wd;
    let mut cols = vec![T::zero(); cin * kh * kw * hw];
    for ci in 0..cin {
        let xc = &x[ci * hw..(ci + 1) * hw];
        for a in 0..kh {
            for b in 0..kw {
                let row = &mut cols[((ci * kh + a) * kw + b) * hw..((ci * kh + a) * kw + b + 1) * hw];
                let dy = a as isize - ph as isize;
                let dx = b as isize - pw as isize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    // valid xx range: 0 <= xx + dx < wd
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(wd as isize) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let src = &xc[(sy as usize * wd) + (x0 as isize + dx) as usize..];
                    row[y * wd + x0..y * wd + x1]
                        .copy_from_slice(&src[..x1 - x0]);
                }
            }
        }
    }
    cols
}

pub fn conv2d_im2col<T: Scalar>(
    x: &[T],
    w: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    if kh == 1 && kw == 1 {
        return matmul(w, x, cout, cin, h * wd);
    }
    let cols = im2col_2d(x, cin, h, wd, kh, kw);
    matmul(w, &cols, cout, cin * kh * kw, h * wd)
}

/// d(conv2d)/dw given upstream grad g[Cout,H,W]: result [Cout,Cin,kh,kw].
pub fn conv2d_wgrad_im2col<T: Scalar>(
    x: &[T],
    g: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    if kh == 1 && kw == 1 {
        return matmul_nt(g, x, cout, h * wd, cin);
    }
    let cols = im2col_2d(x, cin, h, wd, kh, kw);
    matmul_nt(g, &cols, cout, h * wd, cin * kh * kw)
}

pub fn conv2d_wgrad_direct<T: Scalar>(
    x: &[T],
    g: &[T],
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![T::zero(); cout * cin * kh * kw];
    for co in 0..cout {
        let gc = &g[co * h * wd..(co + 1) * h * wd];
        for ci in 0..cin {
            let xc = &x[ci * h * wd..(ci + 1) * h * wd];
            for a in 0..kh {
                for b in 0..kw {
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = y as isize + a as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..wd {
                            let sx = xx as isize + b as isize - pw as isize;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            acc = acc + gc[y * wd + xx] * xc[sy as usize * wd + sx as usize];
                        }
                    }
                    out[((co * cin + ci) * kh + a) * kw + b] = acc;
                }
            }
        }
    }
    out
}

/// Swap in/out channel axes and flip both spatial axes:
/// out[ci,co,a,b] = w[co,ci,kh-1-a,kw-1-b].
pub fn flip_tr2<T: Scalar>(w: &[T], cout: usize, cin: usize, kh: usize, kw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for a in 0..kh {
                for b in 0..kw {
                    out[((ci * cout + co) * kh + a) * kw + b] =
                        w[((co * cin + ci) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- conv3d --

pub fn conv3d_direct<T: Scalar>(
    x: &[T],
    w: &[T],
    cin: usize,
    t: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let thw = t * h * wd;
    let mut out = vec![T::zero(); cout * thw];
    for co in 0..cout {
        for ci in 0..cin {
            let xc = &x[ci * thw..(ci + 1) * thw];
            let wbase = ((co * cin + ci) * kt) * kh * kw;
            for tt in 0..t {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = T::zero();
                        for at in 0..kt {
                            let st = tt as isize + at as isize - pt as isize;
                            if st < 0 || st >= t as isize {
                                continue;
                            }
                            for a in 0..kh {
                                let sy = y as isize + a as isize - ph as isize;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for b in 0..kw {
                                    let sx = xx as isize + b as isize - pw as isize;
                                    if sx < 0 || sx >= wd as isize {
                                        continue;
                                    }
                                    acc = acc
                                        + xc[(st as usize * h + sy as usize) * wd + sx as usize]
                                            * w[wbase + (at * kh + a) * kw + b];
                                }
                            }
                        }
                        let o = (co * t + tt) * h * wd + y * wd + xx;
                        out[o] = out[o] + acc;
                    }
                }
            }
        }
    }
    out
}

pub fn im2col_3d<T: Scalar>(
    x: &[T],
    cin: usize,
    t: usize,
    h: usize,
    wd: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let thw = t * h * wd;
    let mut cols = vec![T::zero(); cin * kt * kh * kw * thw];
    for ci in 0..cin {
        let xc = &x[ci * thw..(ci + 1) * thw];
        for at in 0..kt {
            for a in 0..kh {
                for b in 0..kw {
                    let ridx = ((ci * kt + at) * kh + a) * kw + b;
                    let row = &mut cols[ridx * thw..(ridx + 1) * thw];
                    let dt = at as isize - pt as isize;
                    let dy = a as isize - ph as isize;
                    let dx = b as isize - pw as isize;
                    for tt in 0..t {
                        let st = tt as isize + dt;
                        if st < 0 || st >= t as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (wd as isize - dx).min(wd as isize) as usize;
                            if x0 >= x1 {
                                continue;
                            }
                            let src_off =
                                (st as usize * h + sy as usize) * wd + (x0 as isize + dx) as usize;
                            let dst_off = (tt * h + y) * wd + x0;
                            row[dst_off..dst_off + (x1 - x0)]
                                .copy_from_slice(&xc[src_off..src_off + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn conv3d_im2col<T: Scalar>(
    x: &[T],
    w: &[T],
    cin: usize,
    t: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    if kt == 1 && kh == 1 && kw == 1 {
        return matmul(w, x, cout, cin, t * h * wd);
    }
    let cols = im2col_3d(x, cin, t, h, wd, kt, kh, kw);
    matmul(w, &cols, cout, cin * kt * kh * kw, t * h * wd)
}

pub fn conv3d_wgrad_im2col<T: Scalar>(
    x: &[T],
    g: &[T],
    cin: usize,
    t: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    if kt == 1 && kh == 1 && kw == 1 {
        return matmul_nt(g, x, cout, t * h * wd, cin);
    }
    let cols = im2col_3d(x, cin, t, h, wd, kt, kh, kw);
    matmul_nt(g, &cols, cout, t * h * wd, cin * kt * kh * kw)
}

pub fn flip_tr3<T: Scalar>(
    w: &[T],
    cout: usize,
    cin: usize,
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for at in 0..kt {
                for a in 0..kh {
                    for b in 0..kw {
                        out[(((ci * cout + co) * kt + at) * kh + a) * kw + b] = w[(((co * cin
                            + ci)
                            * kt
                            + (kt - 1 - at))
                            * kh
                            + (kh - 1 - a))
                            * kw
                            + (kw - 1 - b)];
                    }
                }
            }
        }
    }
    out
}

// ------------------------------------------------------- pool / resample --

/// Mean over 2x2 blocks of the last two axes; `lead` is the product of all
/// leading extents. h and w must be even.
pub fn avg_pool2<T: Scalar>(x: &[T], lead: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); lead * oh * ow];
    for l in 0..lead {
        let xc = &x[l * h * w..(l + 1) * h * w];
        let oc = &mut out[l * oh * ow..(l + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let s = xc[(2 * i) * w + 2 * j]
                    + xc[(2 * i) * w + 2 * j + 1]
                    + xc[(2 * i + 1) * w + 2 * j]
                    + xc[(2 * i + 1) * w + 2 * j + 1];
                oc[i * ow + j] = s * quarter;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsample of the last two axes.
pub fn upsample2<T: Scalar>(x: &[T], lead: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); lead * oh * ow];
    for l in 0..lead {
        let xc = &x[l * h * w..(l + 1) * h * w];
        let oc = &mut out[l * oh * ow..(l + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                oc[i * ow + j] = xc[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

/// Mean over 2x2x2 blocks of (T,H,W) per channel.
pub fn avg_pool3<T: Scalar>(x: &[T], c: usize, t: usize, h: usize, w: usize) -> Vec<T> {
    let (ot, oh, ow) = (t / 2, h / 2, w / 2);
    let eighth = T::of(0.125);
    let mut out = vec![T::zero(); c * ot * oh * ow];
    for cc in 0..c {
        let xc = &x[cc * t * h * w..(cc + 1) * t * h * w];
        let oc = &mut out[cc * ot * oh * ow..(cc + 1) * ot * oh * ow];
        for tt in 0..ot {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = T::zero();
                    for dt in 0..2 {
                        for di in 0..2 {
                            for dj in 0..2 {
                                s = s + xc[((2 * tt + dt) * h + 2 * i + di) * w + 2 * j + dj];
                            }
                        }
                    }
                    oc[(tt * oh + i) * ow + j] = s * eighth;
                }
            }
        }
    }
    out
}

pub fn upsample3<T: Scalar>(x: &[T], c: usize, t: usize, h: usize, w: usize) -> Vec<T> {
    let (ot, oh, ow) = (t * 2, h * 2, w * 2);
    let mut out = vec![T::zero(); c * ot * oh * ow];
    for cc in 0..c {
        let xc = &x[cc * t * h * w..(cc + 1) * t * h * w];
        let oc = &mut out[cc * ot * oh * ow..(cc + 1) * ot * oh * ow];
        for tt in 0..ot {
            for i in 0..oh {
                for j in 0..ow {
                    oc[(tt * oh + i) * ow + j] = xc[((tt / 2) * h + i / 2) * w + j / 2];
                }
            }
        }
    }
    out
}

/// Keep even-index rows/cols of the last two axes (output ceil(h/2) x ceil(w/2)).
pub fn subsample2<T: Scalar>(x: &[T], lead: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
    let mut out = vec![T::zero(); lead * oh * ow];
    for l in 0..lead {
        let xc = &x[l * h * w..(l + 1) * h * w];
        let oc = &mut out[l * oh * ow..(l + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                oc[i * ow + j] = xc[(2 * i) * w + 2 * j];
            }
        }
    }
    out
}

/// Adjoint of `subsample2`: place x at even indices of an (h,w) grid of zeros.
pub fn zero_interleave2<T: Scalar>(x: &[T], lead: usize, oh: usize, ow: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); lead * h * w];
    for l in 0..lead {
        let xc = &x[l * oh * ow..(l + 1) * oh * ow];
        let oc = &mut out[l * h * w..(l + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                oc[(2 * i) * w + 2 * j] = xc[i * ow + j];
            }
        }
    }
    out
}

/// Shift content by (dy, dx) on the last two axes, zeros flowing in:
/// out[i,j] = x[i-dy, j-dx].
pub fn translate2<T: Scalar>(x: &[T], lead: usize, h: usize, w: usize, dy: isize, dx: isize) -> Vec<T> {
    let mut out = vec![T::zero(); lead * h * w];
    for l in 0..lead {
        let xc = &x[l * h * w..(l + 1) * h * w];
        let oc = &mut out[l * h * w..(l + 1) * h * w];
        for i in 0..h {
            let si = i as isize - dy;
            if si < 0 || si >= h as isize {
                continue;
            }
            let j0 = dx.max(0) as usize;
            let j1 = ((w as isize + dx).min(w as isize)).max(0) as usize;
            if j0 >= j1 {
                continue;
            }
            let src = (si as usize) * w + (j0 as isize - dx) as usize;
            oc[i * w + j0..i * w + j1].copy_from_slice(&xc[src..src + (j1 - j0)]);
        }
    }
    out
}

// ------------------------------------------------------------ reductions --

/// Sum over every axis except axis 0: x[C, rest] -> [C].
pub fn sum_keep0<T: Scalar>(x: &[T], c: usize, rest: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for i in 0..c {
        let mut acc = T::zero();
        for &v in &x[i * rest..(i + 1) * rest] {
            acc = acc + v;
        }
        out[i] = acc;
    }
    out
}

/// out[c, rest] = s[c].
pub fn broadcast_channel<T: Scalar>(s: &[T], rest: usize) -> Vec<T> {
    let mut out = vec![T::zero(); s.len() * rest];
    for (i, &v) in s.iter().enumerate() {
        for o in &mut out[i * rest..(i + 1) * rest] {
            *o = v;
        }
    }
    out
}

// --------------------------------------------------------- orthogonal QR --

/// Orthonormalize the rows of a [rows, cols] matrix in place (modified
/// Gram-Schmidt). Requires rows <= cols for exact orthonormality; extra rows
/// are merely normalized.
pub fn orthonormalize_rows(mat: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for p in 0..r.min(cols) {
            let mut dot = 0.0;
            for c in 0..cols {
                dot += mat[r * cols + c] * mat[p * cols + c];
            }
            for c in 0..cols {
                mat[r * cols + c] -= dot * mat[p * cols + c];
            }
        }
        let norm: f64 = mat[r * cols..(r + 1) * cols].iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for c in 0..cols {
            mat[r * cols + c] *= inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_nt_matches_matmul() {
        let a: Vec<f64> = (0..6).map(|i| i as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5).collect(); // 4x3 (= Bt)
        let bt = transpose(&b, 4, 3); // 3x4
        assert_eq!(matmul_nt(&a, &b, 2, 3, 4), matmul(&a, &bt, 2, 3, 4));
    }

    #[test]
    fn im2col_conv_equals_direct() {
        let mut rng = crate::rng::Rng::seed_from(11);
        let (cin, h, w, cout, kh, kw) = (3, 5, 7, 2, 3, 5);
        let x: Vec<f64> = (0..cin * h * w).map(|_| rng.normal()).collect();
        let wt: Vec<f64> = (0..cout * cin * kh * kw).map(|_| rng.normal()).collect();
        let a = conv2d_direct(&x, &wt, cin, h, w, cout, kh, kw);
        let b = conv2d_im2col(&x, &wt, cin, h, w, cout, kh, kw);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col3_conv_equals_direct() {
        let mut rng = crate::rng::Rng::seed_from(12);
        let (cin, t, h, w, cout, k) = (2, 4, 3, 5, 3, 3);
        let x: Vec<f64> = (0..cin * t * h * w).map(|_| rng.normal()).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k * k).map(|_| rng.normal()).collect();
        let a = conv3d_direct(&x, &wt, cin, t, h, w, cout, k, k, k);
        let b = conv3d_im2col(&x, &wt, cin, t, h, w, cout, k, k, k);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn translate_shifts_with_zero_fill() {
        // 1x2x2: [[1,2],[3,4]] shifted by (0,+1) -> [[0,1],[0,3]]
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(translate2(&x, 1, 2, 2, 0, 1), vec![0.0, 1.0, 0.0, 3.0]);
        assert_eq!(translate2(&x, 1, 2, 2, 1, 0), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn orthonormal_rows() {
        let mut rng = crate::rng::Rng::seed_from(3);
        let (r, c) = (4, 9);
        let mut m: Vec<f64> = (0..r * c).map(|_| rng.normal()).collect();
        orthonormalize_rows(&mut m, r, c);
        for i in 0..r {
            for j in 0..r {
                let dot: f64 = (0..c).map(|k| m[i * c + k] * m[j * c + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "row {i}.{j} dot {dot}");
            }
        }
    }
}
