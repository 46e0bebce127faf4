//! Numeric kernels behind the tape ops. Layouts are NCHW, row-major.

use rayon::prelude::*;

use super::tensor::Scalar;

fn im2col<T: Scalar>(x: &[T], ci: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..ci {
        let plane = &x[c * hw..(c + 1) * hw];
        for a in 0..k {
            for b in 0..k {
                let row = &mut col[((c * k + a) * k + b) * hw..][..hw];
                let dx = b as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                for y in 0..h {
                    let yy = y as isize + a as isize - pad;
                    let out = &mut row[y * w..(y + 1) * w];
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[yy as usize * w..(yy as usize + 1) * w];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Same-padded, stride-1 cross-correlation. `x: [n, ci, h, w]`,
/// `wt: [co, ci, k, k]` with odd `k`.
pub fn conv2d<T: Scalar>(x: &[T], xs: &[usize], wt: &[T], ws: &[usize]) -> Vec<T> {
    let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[0], ws[2]);
    assert_eq!(ws[1], ci, "conv2d channel mismatch");
    assert!(k % 2 == 1 && ws[3] == k, "conv2d kernel must be square and odd");
    let hw = h * w;
    let ckk = ci * k * k;
    let mut out = vec![T::zero(); n * co * hw];
    if hw == 0 {
        return out;
    }
    out.par_chunks_mut(co * hw).zip(x.par_chunks(ci * hw)).for_each_init(
        || vec![T::zero(); if k == 1 { 0 } else { ckk * hw }],
        |col, (o, xn)| {
            let b: &[T] = if k == 1 {
                xn
            } else {
                im2col(xn, ci, h, w, k, col);
                col
            };
            T::gemm(
                co,
                ckk,
                hw,
                wt,
                ckk as isize,
                1,
                b,
                hw as isize,
                1,
                T::zero(),
                o,
                hw as isize,
                1,
            );
        },
    );
    out
}

/// Gradient of `conv2d` with respect to its kernel, given the input `x` and
/// an upstream `g: [n, co, h, w]`. Returns `[co, ci, k, k]`.
pub fn conv_weight_grad<T: Scalar>(x: &[T], xs: &[usize], g: &[T], gs: &[usize], k: usize) -> Vec<T> {
    let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let co = gs[1];
    assert_eq!(gs[0], n);
    assert_eq!((gs[2], gs[3]), (h, w));
    let hw = h * w;
    let ckk = ci * k * k;
    let mut dw = vec![T::zero(); co * ckk];
    let mut col = vec![T::zero(); if k == 1 { 0 } else { ckk * hw }];
    // Sequential accumulation keeps the sum order fixed.
    for s in 0..n {
        let xn = &x[s * ci * hw..(s + 1) * ci * hw];
        let gn = &g[s * co * hw..(s + 1) * co * hw];
        let b: &[T] = if k == 1 {
            xn
        } else {
            im2col(xn, ci, h, w, k, &mut col);
            &col
        };
        T::gemm(
            co,
            hw,
            ckk,
            gn,
            hw as isize,
            1,
            b,
            1,
            hw as isize,
            T::one(),
            &mut dw,
            ckk as isize,
            1,
        );
    }
    dw
}

/// Swaps the channel axes and rotates each kernel by 180 degrees. The adjoint
/// of a same-padded correlation is a correlation with this kernel.
pub fn flip_transpose<T: Scalar>(wt: &[T], ws: &[usize]) -> (Vec<T>, Vec<usize>) {
    let (co, ci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let mut out = vec![T::zero(); wt.len()];
    for o in 0..co {
        for i in 0..ci {
            for a in 0..kh {
                for b in 0..kw {
                    out[((i * co + o) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)] = wt[((o * ci + i) * kh + a) * kw + b];
                }
            }
        }
    }
    (out, vec![ci, co, kh, kw])
}

/// Nearest-neighbour upsampling of the trailing two axes by `f`.
pub fn upsample<T: Scalar>(x: &[T], shape: &[usize], f: usize) -> (Vec<T>, Vec<usize>) {
    let d = shape.len();
    let (h, w) = (shape[d - 2], shape[d - 1]);
    let planes = x.len() / (h * w).max(1);
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / f) * w..(y / f + 1) * w];
            for (xo, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xo / f];
            }
        }
    }
    let mut s = shape.to_vec();
    s[d - 2] = oh;
    s[d - 1] = ow;
    (out, s)
}

/// Sum over non-overlapping `f x f` blocks of the trailing two axes.
pub fn sum_pool<T: Scalar>(x: &[T], shape: &[usize], f: usize) -> (Vec<T>, Vec<usize>) {
    let d = shape.len();
    let (h, w) = (shape[d - 2], shape[d - 1]);
    assert!(h % f == 0 && w % f == 0, "sum_pool: {h}x{w} not divisible by {f}");
    let planes = x.len() / (h * w).max(1);
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            let drow = &mut dst[(y / f) * ow..(y / f + 1) * ow];
            for (xi, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                drow[xi / f] = drow[xi / f] + v;
            }
        }
    }
    let mut s = shape.to_vec();
    s[d - 2] = oh;
    s[d - 1] = ow;
    (out, s)
}

/// `op(A) op(B)` for 2-D operands, where `op` optionally transposes.
pub fn matmul<T: Scalar>(
    a: &[T],
    ashape: &[usize],
    b: &[T],
    bshape: &[usize],
    ta: bool,
    tb: bool,
) -> (Vec<T>, Vec<usize>) {
    let (ar, ac) = (ashape[0], ashape[1]);
    let (br, bc) = (bshape[0], bshape[1]);
    let (m, ka, rsa, csa) = if ta {
        (ac, ar, 1, ac as isize)
    } else {
        (ar, ac, ac as isize, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (bc, br, 1, bc as isize)
    } else {
        (br, bc, bc as isize, 1)
    };
    assert_eq!(ka, kb, "matmul inner dimension mismatch");
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, ka, n, a, rsa, csa, b, rsb, csb, T::zero(), &mut out, n as isize, 1);
    (out, vec![m, n])
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
