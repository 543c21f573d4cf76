//! Differentiable operators with hand-written reverse passes.
//!
//! Feature maps are rank-3 `(channels, height, width)` tensors. Every
//! backward function takes the upstream gradient of the forward output and
//! returns gradients of the forward inputs. Parallel loops write disjoint
//! output planes and accumulate in a fixed order.

use super::Tensor;
use crate::error::{Error, Result};
use crate::par;
#[cfg(feature = "parallel")]
use crate::par::{IndexedParallelIterator, ParallelIterator};

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradients of a convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

fn check_conv(input: &Tensor, kernel: &Tensor, bias: &[f64], k: usize) -> Result<(usize, usize, usize, usize)> {
    let (c, h, w) = input.dims3();
    let ks = kernel.shape();
    if ks.len() != 4 || ks[1] != c || ks[2] != k || ks[3] != k {
        return Err(Error::shape(format!("kernel {ks:?} does not fit {c}-channel input")));
    }
    if bias.len() != ks[0] {
        return Err(Error::shape(format!("{} biases for {} filters", bias.len(), ks[0])));
    }
    if h < k || w < k {
        return Err(Error::shape(format!("input {h}x{w} smaller than {k}x{k} kernel")));
    }
    Ok((ks[0], c, h, w))
}

/// Rows of output (or of kernel gradient) handled per task. Fixed so the
/// arithmetic does not depend on the number of threads.
const ROW_BLOCK: usize = 64;

/// Row-major dense product `c = a * b + beta * c` with `a` given by its
/// row and column strides, `b` likewise; `c` is `m x n` contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > last(m, k, a_strides) && b.len() > last(k, n, b_strides));
    }
    // SAFETY: the asserts above keep every index the kernel touches inside
    // the three slices; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unrolls `(C, H, W)` into a `(C k k) x (Ho Wo)` patch matrix.
fn im2col(data: &[f64], cin: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let plane = ho * wo;
    let mut col = vec![0.0; cin * k * k * plane];
    par::chunks_mut(&mut col, k * k * plane).enumerate().for_each(|(c, rows)| {
        let src = &data[c * h * w..(c + 1) * h * w];
        for i in 0..k {
            for j in 0..k {
                let row = &mut rows[(i * k + j) * plane..(i * k + j + 1) * plane];
                for y in 0..ho {
                    let s = (y + i) * w + j;
                    row[y * wo..(y + 1) * wo].copy_from_slice(&src[s..s + wo]);
                }
            }
        }
    });
    col
}

/// Valid `k x k` cross-correlation: `(C, H, W) -> (K, H-k+1, W-k+1)`.
pub fn conv2d_valid(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let ksize = kernel.shape().get(2).copied().unwrap_or(0);
    let (kout, cin, h, w) = check_conv(input, kernel, bias, ksize)?;
    let (ho, wo) = (h - ksize + 1, w - ksize + 1);
    let plane = ho * wo;
    let depth = cin * ksize * ksize;
    let col = im2col(input.data(), cin, h, w, ksize);
    let kdata = kernel.data();
    let mut out = vec![0.0; kout * plane];
    par::chunks_mut(&mut out, ROW_BLOCK * plane).enumerate().for_each(|(blk, rows)| {
        let k0 = blk * ROW_BLOCK;
        let m = rows.len() / plane;
        for (r, row) in rows.chunks_mut(plane).enumerate() {
            row.fill(bias[k0 + r]);
        }
        gemm(m, depth, plane, &kdata[k0 * depth..], (depth, 1), &col, (plane, 1), 1.0, rows);
    });
    Tensor::new(&[kout, ho, wo], out)
}

pub fn conv2d_valid_backward(input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> ConvGrads {
    let (cin, h, w) = input.dims3();
    let ks = kernel.shape();
    let (kout, ksize) = (ks[0], ks[2]);
    let (ko, ho, wo) = grad_out.dims3();
    debug_assert_eq!((ko, ho, wo), (kout, h - ksize + 1, w - ksize + 1));
    let plane = ho * wo;
    let depth = cin * ksize * ksize;
    let kdata = kernel.data();
    let gdata = grad_out.data();

    let bias: Vec<f64> = (0..kout).map(|k| gdata[k * plane..(k + 1) * plane].iter().sum()).collect();

    // dK = G * col^T
    let col = im2col(input.data(), cin, h, w, ksize);
    let mut dk = vec![0.0; kout * depth];
    par::chunks_mut(&mut dk, ROW_BLOCK * depth).enumerate().for_each(|(blk, rows)| {
        let k0 = blk * ROW_BLOCK;
        let m = rows.len() / depth;
        gemm(m, plane, depth, &gdata[k0 * plane..], (plane, 1), &col, (1, plane), 0.0, rows);
    });
    drop(col);

    // dcol = K^T * G, then folded back onto the input planes
    let kk = ksize * ksize;
    let mut dcol = vec![0.0; depth * plane];
    par::chunks_mut(&mut dcol, ROW_BLOCK * plane).enumerate().for_each(|(blk, rows)| {
        let r0 = blk * ROW_BLOCK;
        let m = rows.len() / plane;
        gemm(m, kout, plane, &kdata[r0..], (1, depth), gdata, (plane, 1), 0.0, rows);
    });
    let mut di = vec![0.0; cin * h * w];
    par::chunks_mut(&mut di, h * w).enumerate().for_each(|(c, dic)| {
        for i in 0..ksize {
            for j in 0..ksize {
                let row = &dcol[(c * kk + i * ksize + j) * plane..(c * kk + i * ksize + j + 1) * plane];
                for y in 0..ho {
                    let s = (y + i) * w + j;
                    axpy(1.0, &row[y * wo..(y + 1) * wo], &mut dic[s..s + wo]);
                }
            }
        }
    });
    ConvGrads {
        input: Tensor::new(&[cin, h, w], di).expect("input shape"),
        kernel: Tensor::new(ks, dk).expect("kernel shape"),
        bias,
    }
}

/// Single-filter 3D stem: `(D, H, W)` with a `(d, 2, 2)` kernel, stride
/// `(1, 2, 2)`, valid in every axis. The `D - d + 1` spectral positions of
/// the output become channels.
pub fn conv3d_stem(input: &Tensor, kernel: &Tensor, bias: f64) -> Result<Tensor> {
    let (d_in, h, w) = input.dims3();
    let ks = kernel.shape();
    if ks.len() != 3 || ks[1] != 2 || ks[2] != 2 {
        return Err(Error::shape(format!("stem kernel {ks:?} must be (depth, 2, 2)")));
    }
    let depth = ks[0];
    if depth > d_in {
        return Err(Error::shape(format!("stem depth {depth} exceeds {d_in} bands")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("stem input {h}x{w} must have even spatial dims")));
    }
    let (co, ho, wo) = (d_in - depth + 1, h / 2, w / 2);
    let idata = input.data();
    let kd = kernel.data();
    let mut out = vec![0.0; co * ho * wo];
    par::chunks_mut(&mut out, ho * wo).enumerate().for_each(|(o, plane)| {
        plane.fill(bias);
        for t in 0..depth {
            let src = &idata[(o + t) * h * w..(o + t + 1) * h * w];
            let k = &kd[t * 4..t * 4 + 4];
            for y in 0..ho {
                let r0 = &src[2 * y * w..(2 * y + 1) * w];
                let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
                let dst = &mut plane[y * wo..(y + 1) * wo];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d += k[0] * r0[2 * x] + k[1] * r0[2 * x + 1] + k[2] * r1[2 * x] + k[3] * r1[2 * x + 1];
                }
            }
        }
    });
    Tensor::new(&[co, ho, wo], out)
}

/// Returns kernel and bias gradients of the stem; the input gradient is
/// never needed because the stem consumes the data.
pub fn conv3d_stem_backward(input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> (Tensor, f64) {
    let (_, h, w) = input.dims3();
    let depth = kernel.shape()[0];
    let (co, ho, wo) = grad_out.dims3();
    let idata = input.data();
    let g = grad_out.data();
    let bias = g.iter().sum();
    let dk: Vec<f64> = par::map_range(depth * 4, |idx| {
        let (t, i, j) = (idx / 4, (idx % 4) / 2, idx % 2);
        let mut acc = 0.0;
        for o in 0..co {
            let src = &idata[(o + t) * h * w..(o + t + 1) * h * w];
            let gp = &g[o * ho * wo..(o + 1) * ho * wo];
            for y in 0..ho {
                let row = &src[(2 * y + i) * w..(2 * y + i + 1) * w];
                let gr = &gp[y * wo..(y + 1) * wo];
                for (x, gv) in gr.iter().enumerate() {
                    acc += gv * row[2 * x + j];
                }
            }
        }
        acc
    });
    (Tensor::new(kernel.shape(), dk).expect("kernel shape"), bias)
}

/// Gradient of the stem with respect to its input, used for checking.
pub fn conv3d_stem_backward_input(input: &Tensor, kernel: &Tensor, grad_out: &Tensor) -> Tensor {
    let (d_in, h, w) = input.dims3();
    let depth = kernel.shape()[0];
    let (co, ho, wo) = grad_out.dims3();
    let kd = kernel.data();
    let g = grad_out.data();
    let mut di = vec![0.0; d_in * h * w];
    for o in 0..co {
        for t in 0..depth {
            let dst = &mut di[(o + t) * h * w..(o + t + 1) * h * w];
            for y in 0..ho {
                for x in 0..wo {
                    let gv = g[(o * ho + y) * wo + x];
                    dst[2 * y * w + 2 * x] += kd[t * 4] * gv;
                    dst[2 * y * w + 2 * x + 1] += kd[t * 4 + 1] * gv;
                    dst[(2 * y + 1) * w + 2 * x] += kd[t * 4 + 2] * gv;
                    dst[(2 * y + 1) * w + 2 * x + 1] += kd[t * 4 + 3] * gv;
                }
            }
        }
    }
    Tensor::new(&[d_in, h, w], di).expect("input shape")
}

/// 2x2 max-pool with stride 2. Also returns, per output element, the
/// position in its block (row-major, 0..4) that won; ties go to the first.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    let (c, h, w) = input.dims3();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max-pool input {h}x{w} must have even dims")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let data = input.data();
    let mut out = vec![0.0; c * ho * wo];
    let mut arg = vec![0u8; c * ho * wo];
    for ch in 0..c {
        let src = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            for x in 0..wo {
                let cand = [
                    src[2 * y * w + 2 * x],
                    src[2 * y * w + 2 * x + 1],
                    src[(2 * y + 1) * w + 2 * x],
                    src[(2 * y + 1) * w + 2 * x + 1],
                ];
                let mut best = 0;
                for (i, &v) in cand.iter().enumerate().skip(1) {
                    if v > cand[best] {
                        best = i;
                    }
                }
                let o = (ch * ho + y) * wo + x;
                out[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    Ok((Tensor::new(&[c, ho, wo], out)?, arg))
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize), argmax: &[u8], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let (_, ho, wo) = grad_out.dims3();
    let g = grad_out.data();
    let mut di = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let o = (ch * ho + y) * wo + x;
                let a = argmax[o] as usize;
                di[(ch * h + 2 * y + a / 2) * w + 2 * x + a % 2] += g[o];
            }
        }
    }
    Tensor::new(&[c, h, w], di).expect("input shape")
}

/// Source indices and weights of each output position of a 1D x2 bilinear
/// upsampling with half-pixel centers and edge clamping.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let s = (o as f64 + 0.5) / 2.0 - 0.5;
            let s = s.max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let f = s - i0 as f64;
            (i0, i1, 1.0 - f, f)
        })
        .collect()
}

/// Bilinear x2 upsampling, `(C, H, W) -> (C, 2H, 2W)`.
pub fn upsample_bilinear2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3();
    if h == 0 || w == 0 {
        return Err(Error::shape("cannot upsample an empty map"));
    }
    let rt = upsample_taps(h);
    let ct = upsample_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let data = input.data();
    let mut out = vec![0.0; c * ho * wo];
    par::chunks_mut(&mut out, ho * wo).enumerate().for_each(|(ch, plane)| {
        let src = &data[ch * h * w..(ch + 1) * h * w];
        // columns first, then rows
        let mut tmp = vec![0.0; h * wo];
        for y in 0..h {
            for (x, &(c0, c1, a, b)) in ct.iter().enumerate() {
                tmp[y * wo + x] = a * src[y * w + c0] + b * src[y * w + c1];
            }
        }
        for (y, &(r0, r1, a, b)) in rt.iter().enumerate() {
            for x in 0..wo {
                plane[y * wo + x] = a * tmp[r0 * wo + x] + b * tmp[r1 * wo + x];
            }
        }
    });
    Tensor::new(&[c, ho, wo], out)
}

/// Exact transpose of [`upsample_bilinear2`].
pub fn upsample_bilinear2_backward(input_shape: (usize, usize, usize), grad_out: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let (_, ho, wo) = grad_out.dims3();
    let rt = upsample_taps(h);
    let ct = upsample_taps(w);
    let g = grad_out.data();
    let mut di = vec![0.0; c * h * w];
    par::chunks_mut(&mut di, h * w).enumerate().for_each(|(ch, dplane)| {
        let gp = &g[ch * ho * wo..(ch + 1) * ho * wo];
        let mut tmp = vec![0.0; h * wo];
        for (y, &(r0, r1, a, b)) in rt.iter().enumerate() {
            for x in 0..wo {
                let v = gp[y * wo + x];
                tmp[r0 * wo + x] += a * v;
                tmp[r1 * wo + x] += b * v;
            }
        }
        for y in 0..h {
            for (x, &(c0, c1, a, b)) in ct.iter().enumerate() {
                let v = tmp[y * wo + x];
                dplane[y * w + c0] += a * v;
                dplane[y * w + c1] += b * v;
            }
        }
    });
    Tensor::new(&[c, h, w], di).expect("input shape")
}

/// Central crop of `encoder` to the decoder's size, stacked channel-wise in
/// front of `decoder`.
pub fn center_crop_concat(encoder: &Tensor, decoder: &Tensor) -> Result<Tensor> {
    let (c1, he, we) = encoder.dims3();
    let (c2, hd, wd) = decoder.dims3();
    if he < hd || we < wd {
        return Err(Error::shape(format!("encoder {he}x{we} smaller than decoder {hd}x{wd}")));
    }
    if (he - hd) % 2 != 0 || (we - wd) % 2 != 0 {
        return Err(Error::shape(format!("odd crop from {he}x{we} to {hd}x{wd}")));
    }
    let (oy, ox) = ((he - hd) / 2, (we - wd) / 2);
    let mut out = Vec::with_capacity((c1 + c2) * hd * wd);
    let e = encoder.data();
    for c in 0..c1 {
        for y in 0..hd {
            let s = (c * he + y + oy) * we + ox;
            out.extend_from_slice(&e[s..s + wd]);
        }
    }
    out.extend_from_slice(decoder.data());
    Tensor::new(&[c1 + c2, hd, wd], out)
}

/// Splits the concatenated gradient into (encoder, decoder) gradients; the
/// cropped-away encoder border gets zero.
pub fn center_crop_concat_backward(
    encoder_shape: (usize, usize, usize),
    grad_out: &Tensor,
) -> (Tensor, Tensor) {
    let (c1, he, we) = encoder_shape;
    let (ct, hd, wd) = grad_out.dims3();
    let (oy, ox) = ((he - hd) / 2, (we - wd) / 2);
    let g = grad_out.data();
    let mut de = vec![0.0; c1 * he * we];
    for c in 0..c1 {
        for y in 0..hd {
            let d = (c * he + y + oy) * we + ox;
            let s = (c * hd + y) * wd;
            de[d..d + wd].copy_from_slice(&g[s..s + wd]);
        }
    }
    let dd = g[c1 * hd * wd..].to_vec();
    (
        Tensor::new(&[c1, he, we], de).expect("encoder shape"),
        Tensor::new(&[ct - c1, hd, wd], dd).expect("decoder shape"),
    )
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes the gradient wherever the ReLU output was not positive.
pub fn relu_backward_inplace(output: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}
