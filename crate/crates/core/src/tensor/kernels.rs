//! Slice-level forward and backward kernels used by the tape.
//!
//! Everything here works on raw row-major buffers with explicit geometry; shape
//! validation happens in [`super::Tape`] before these are called.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are reproducible run to run.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// ---------------------------------------------------------------------------
// Depth expansion

/// Geometry of `out[b,h,ch,t] = sum_d x[b,d,ch,t] * c[h,d,ch]`.
#[derive(Clone, Copy, Debug)]
pub struct ExpandGeom {
    pub batch: usize,
    pub depth_in: usize,
    pub depth_out: usize,
    pub channels: usize,
    pub time: usize,
}

pub fn contract_expand(x: &[f64], c: &[f64], g: ExpandGeom) -> Vec<f64> {
    let ExpandGeom {
        batch,
        depth_in,
        depth_out,
        channels,
        time,
    } = g;
    let mut out = vec![0.0; batch * depth_out * channels * time];
    for b in 0..batch {
        for h in 0..depth_out {
            for d in 0..depth_in {
                for ch in 0..channels {
                    let w = c[(h * depth_in + d) * channels + ch];
                    let xi = ((b * depth_in + d) * channels + ch) * time;
                    let oi = ((b * depth_out + h) * channels + ch) * time;
                    axpy(w, &x[xi..xi + time], &mut out[oi..oi + time]);
                }
            }
        }
    }
    out
}

pub fn contract_expand_backward(
    x: &[f64],
    c: &[f64],
    grad_out: &[f64],
    g: ExpandGeom,
    grad_x: Option<&mut [f64]>,
    grad_c: Option<&mut [f64]>,
) {
    let ExpandGeom {
        batch,
        depth_in,
        depth_out,
        channels,
        time,
    } = g;
    let idx = |b: usize, h: usize, d: usize, ch: usize| {
        (
            ((b * depth_in + d) * channels + ch) * time,
            ((b * depth_out + h) * channels + ch) * time,
            (h * depth_in + d) * channels + ch,
        )
    };
    if let Some(gx) = grad_x {
        for b in 0..batch {
            for h in 0..depth_out {
                for d in 0..depth_in {
                    for ch in 0..channels {
                        let (xi, oi, ci) = idx(b, h, d, ch);
                        axpy(c[ci], &grad_out[oi..oi + time], &mut gx[xi..xi + time]);
                    }
                }
            }
        }
    }
    if let Some(gc) = grad_c {
        for b in 0..batch {
            for h in 0..depth_out {
                for d in 0..depth_in {
                    for ch in 0..channels {
                        let (xi, oi, ci) = idx(b, h, d, ch);
                        gc[ci] += dot(&grad_out[oi..oi + time], &x[xi..xi + time]);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_depth: usize,
    pub height: usize,
    pub width: usize,
    pub out_depth: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Out-of-range taps read the nearest edge element instead of zero.
    pub replicate: bool,
}

impl ConvGeom {
    /// Output rows/columns touched by kernel tap `(ki, kj)`, and the input
    /// offset they map to. `None` when the tap never lands inside the input.
    #[inline]
    fn col_range(&self, kj: usize) -> Option<(usize, usize, usize)> {
        // iw = ow + kj - pad_left must lie in [0, width)
        let lo = self.pad_left.saturating_sub(kj);
        let hi = (self.width + self.pad_left)
            .saturating_sub(kj)
            .min(self.out_w);
        (lo < hi).then(|| (lo, hi, lo + kj - self.pad_left))
    }

    #[inline]
    fn in_row(&self, oh: usize, ki: usize) -> Option<usize> {
        let ih = (oh + ki).checked_sub(self.pad_top)?;
        (ih < self.height).then_some(ih)
    }

    fn in_plane(&self) -> usize {
        self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `c = a . b` (or `c += a . b` when `accumulate`) for row-major operands, with
/// either factor optionally transposed. `a` is `m x k` after transposition,
/// `b` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the assertion above bounds every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl ConvGeom {
    /// Rows of the unfolded input: one per `(in_depth, ki, kj)` tap.
    fn col_rows(&self) -> usize {
        self.in_depth * self.kernel_h * self.kernel_w
    }

    /// Calls `f(col_row, out_index, input_index)` for every tap, clamping
    /// input coordinates to the edges.
    fn for_each_clamped_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let clamp =
            |o: usize, k: usize, pad: usize, len: usize| (o + k).saturating_sub(pad).min(len - 1);
        for i in 0..self.in_depth {
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let r = (i * self.kernel_h + ki) * self.kernel_w + kj;
                    for oh in 0..self.out_h {
                        let ih = clamp(oh, ki, self.pad_top, self.height);
                        for ow in 0..self.out_w {
                            let iw = clamp(ow, kj, self.pad_left, self.width);
                            f(
                                r,
                                oh * self.out_w + ow,
                                i * self.in_plane() + ih * self.width + iw,
                            );
                        }
                    }
                }
            }
        }
    }

    /// Unfolds one batch item into `[col_rows, out_h * out_w]`, zero where a
    /// tap falls in the padding.
    fn im2col(&self, input: &[f64], col: &mut [f64]) {
        if self.replicate {
            return self
                .for_each_clamped_tap(|r, o, src| col[r * self.out_plane() + o] = input[src]);
        }
        let n = self.out_plane();
        col.fill(0.0);
        for i in 0..self.in_depth {
            let plane = &input[i * self.in_plane()..(i + 1) * self.in_plane()];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let r = (i * self.kernel_h + ki) * self.kernel_w + kj;
                    let Some((lo, hi, iw0)) = self.col_range(kj) else {
                        continue;
                    };
                    let row = &mut col[r * n..(r + 1) * n];
                    for oh in 0..self.out_h {
                        let Some(ih) = self.in_row(oh, ki) else {
                            continue;
                        };
                        let src = ih * self.width + iw0;
                        row[oh * self.out_w + lo..oh * self.out_w + hi]
                            .copy_from_slice(&plane[src..src + hi - lo]);
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds columns back onto the input.
    fn col2im(&self, col: &[f64], grad_input: &mut [f64]) {
        if self.replicate {
            return self.for_each_clamped_tap(|r, o, src| {
                grad_input[src] += col[r * self.out_plane() + o]
            });
        }
        let n = self.out_plane();
        for i in 0..self.in_depth {
            let plane = &mut grad_input[i * self.in_plane()..(i + 1) * self.in_plane()];
            for ki in 0..self.kernel_h {
                for kj in 0..self.kernel_w {
                    let r = (i * self.kernel_h + ki) * self.kernel_w + kj;
                    let Some((lo, hi, iw0)) = self.col_range(kj) else {
                        continue;
                    };
                    let row = &col[r * n..(r + 1) * n];
                    for oh in 0..self.out_h {
                        let Some(ih) = self.in_row(oh, ki) else {
                            continue;
                        };
                        let dst = ih * self.width + iw0;
                        axpy(
                            1.0,
                            &row[oh * self.out_w + lo..oh * self.out_w + hi],
                            &mut plane[dst..dst + hi - lo],
                        );
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &[f64], weight: &[f64], bias: Option<&[f64]>, g: ConvGeom) -> Vec<f64> {
    let n = g.out_plane();
    let k = g.col_rows();
    let mut out = vec![0.0; g.batch * g.out_depth * n];
    let mut col = vec![0.0; k * n];
    for b in 0..g.batch {
        let ob = b * g.out_depth * n;
        let dst = &mut out[ob..ob + g.out_depth * n];
        if let Some(bias) = bias {
            for (o, plane) in dst.chunks_exact_mut(n).enumerate() {
                plane.fill(bias[o]);
            }
        }
        g.im2col(
            &input[b * g.in_depth * g.in_plane()..(b + 1) * g.in_depth * g.in_plane()],
            &mut col,
        );
        gemm(g.out_depth, k, n, weight, false, &col, false, dst, true);
    }
    out
}

pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    g: ConvGeom,
    mut grad_input: Option<&mut [f64]>,
    mut grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let n = g.out_plane();
    let k = g.col_rows();
    let mut col = vec![0.0; k * n];
    for b in 0..g.batch {
        let gout = &grad_out[b * g.out_depth * n..(b + 1) * g.out_depth * n];
        let in_len = g.in_depth * g.in_plane();
        if let Some(gw) = grad_weight.as_deref_mut() {
            g.im2col(&input[b * in_len..(b + 1) * in_len], &mut col);
            // gW[Dout,K] += gout[Dout,N] . col^T
            gemm(g.out_depth, n, k, gout, false, &col, true, gw, true);
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            // gcol[K,N] = W^T . gout
            gemm(
                k,
                g.out_depth,
                n,
                weight,
                true,
                gout,
                false,
                &mut col,
                false,
            );
            g.col2im(&col, &mut gi[b * in_len..(b + 1) * in_len]);
        }
    }
    if let Some(gb) = grad_bias {
        for b in 0..g.batch {
            for (o, gbo) in gb.iter_mut().enumerate() {
                let ob = (b * g.out_depth + o) * n;
                *gbo += grad_out[ob..ob + n].iter().sum::<f64>();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

// ---------------------------------------------------------------------------
// Softmax along one axis

/// `(outer, axis_len, inner)` view of a shape around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let max = (0..n)
                .map(|k| x[base + k * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..n {
                let e = (x[base + k * inner] - max).exp();
                out[base + k * inner] = e;
                sum += e;
            }
            for k in 0..n {
                out[base + k * inner] /= sum;
            }
        }
    }
    out
}

/// `dx = y * (g - sum(g * y))` along the softmax axis.
pub fn softmax_backward(
    y: &[f64],
    grad_out: &[f64],
    shape: &[usize],
    axis: usize,
    grad_x: &mut [f64],
) {
    let (outer, n, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let s: f64 = (0..n)
                .map(|k| grad_out[base + k * inner] * y[base + k * inner])
                .sum();
            for k in 0..n {
                let j = base + k * inner;
                grad_x[j] += y[j] * (grad_out[j] - s);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Non-overlapping average pooling over the last two axes of a rank-4 tensor

#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub win_h: usize,
    pub win_w: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        self.height / self.win_h
    }

    pub fn out_w(&self) -> usize {
        self.width / self.win_w
    }
}

pub fn avg_pool(x: &[f64], g: PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let scale = 1.0 / (g.win_h * g.win_w) as f64;
    let mut out = vec![0.0; g.planes * oh * ow];
    for p in 0..g.planes {
        let ib = p * g.height * g.width;
        let ob = p * oh * ow;
        for r in 0..oh {
            for c in 0..ow {
                let mut s = 0.0;
                for dr in 0..g.win_h {
                    let row = ib + (r * g.win_h + dr) * g.width + c * g.win_w;
                    s += x[row..row + g.win_w].iter().sum::<f64>();
                }
                out[ob + r * ow + c] = s * scale;
            }
        }
    }
    out
}

pub fn avg_pool_backward(grad_out: &[f64], g: PoolGeom, grad_x: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let scale = 1.0 / (g.win_h * g.win_w) as f64;
    for p in 0..g.planes {
        let ib = p * g.height * g.width;
        let ob = p * oh * ow;
        for r in 0..oh {
            for c in 0..ow {
                let v = grad_out[ob + r * ow + c] * scale;
                for dr in 0..g.win_h {
                    let row = ib + (r * g.win_h + dr) * g.width + c * g.win_w;
                    for gx in &mut grad_x[row..row + g.win_w] {
                        *gx += v;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting elementwise product

/// Row-major strides of `shape`, with zero stride wherever the extent is 1 and
/// the output extent is larger (a broadcast axis).
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for k in (0..shape.len()).rev() {
        strides[k] = if shape[k] == out[k] { s } else { 0 };
        s *= shape[k];
    }
    strides
}

/// A run of output elements along the last axis, with the matching starting
/// offsets into each operand and their strides along that axis (0 or 1).
#[derive(Clone, Copy, Debug)]
pub struct BroadcastRow {
    pub out: usize,
    pub a: usize,
    pub b: usize,
    pub len: usize,
    pub a_step: usize,
    pub b_step: usize,
}

/// Calls `f` once per last-axis row of the broadcast output.
pub fn for_each_broadcast_row(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(BroadcastRow),
) {
    let rank = out_shape.len();
    let len = out_shape[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    for r in 0..outer {
        let a: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
        let b: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
        f(BroadcastRow {
            out: r * len,
            a,
            b,
            len,
            a_step: sa[rank - 1],
            b_step: sb[rank - 1],
        });
        for k in (0..rank - 1).rev() {
            idx[k] += 1;
            if idx[k] < out_shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Elementwise product of two broadcast operands.
pub fn broadcast_mul(
    a: &[f64],
    b: &[f64],
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
) -> Vec<f64> {
    let mut out = vec![0.0; out_shape.iter().product()];
    for_each_broadcast_row(out_shape, sa, sb, |r| {
        let o = &mut out[r.out..r.out + r.len];
        match (r.a_step, r.b_step) {
            (1, 1) => {
                for ((oi, ai), bi) in o
                    .iter_mut()
                    .zip(&a[r.a..r.a + r.len])
                    .zip(&b[r.b..r.b + r.len])
                {
                    *oi = ai * bi;
                }
            }
            (1, 0) => o
                .iter_mut()
                .zip(&a[r.a..r.a + r.len])
                .for_each(|(oi, ai)| *oi = ai * b[r.b]),
            (0, 1) => o
                .iter_mut()
                .zip(&b[r.b..r.b + r.len])
                .for_each(|(oi, bi)| *oi = a[r.a] * bi),
            _ => o.fill(a[r.a] * b[r.b]),
        }
    });
    out
}

/// Gradient of `a . b` with respect to `a`: `grad_a[ia] += g[o] * b[ib]`,
/// summed over the axes along which `a` was broadcast.
pub fn broadcast_mul_grad(
    grad_out: &[f64],
    other: &[f64],
    out_shape: &[usize],
    s_self: &[usize],
    s_other: &[usize],
    grad_self: &mut [f64],
) {
    for_each_broadcast_row(out_shape, s_self, s_other, |r| {
        let g = &grad_out[r.out..r.out + r.len];
        match (r.a_step, r.b_step) {
            (1, 1) => {
                let dst = &mut grad_self[r.a..r.a + r.len];
                for ((d, gi), oi) in dst.iter_mut().zip(g).zip(&other[r.b..r.b + r.len]) {
                    *d += gi * oi;
                }
            }
            (1, 0) => axpy(other[r.b], g, &mut grad_self[r.a..r.a + r.len]),
            (0, 1) => grad_self[r.a] += dot(g, &other[r.b..r.b + r.len]),
            _ => grad_self[r.a] += g.iter().sum::<f64>() * other[r.b],
        }
    });
}

// ---------------------------------------------------------------------------
// Dense layer

/// `out[b,m] = x[b,:] . w[m,:] + bias[m]`
pub fn linear(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let mut out = match bias {
        Some(b) => b.repeat(batch),
        None => vec![0.0; batch * n_out],
    };
    gemm(batch, n_in, n_out, x, false, w, true, &mut out, true);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    grad_x: Option<&mut [f64]>,
    grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    if let Some(gx) = grad_x {
        // gx[B,N] += g[B,M] . W[M,N]
        gemm(batch, n_out, n_in, grad_out, false, w, false, gx, true);
    }
    if let Some(gw) = grad_w {
        // gW[M,N] += g^T[M,B] . x[B,N]
        gemm(n_out, batch, n_in, grad_out, true, x, false, gw, true);
    }
    if let Some(gb) = grad_b {
        for row in grad_out.chunks_exact(n_out) {
            axpy(1.0, row, gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-12);
    }

    #[test]
    fn broadcast_strides_zero_on_expanded_axes() {
        assert_eq!(
            broadcast_strides(&[2, 3, 1, 4], &[2, 3, 5, 4]),
            vec![12, 4, 0, 1]
        );
    }

    #[test]
    fn same_padding_conv_keeps_extent() {
        // 1-D kernel [1,1,1] with one zero on each side: edges see two taps.
        let g = ConvGeom {
            batch: 1,
            in_depth: 1,
            height: 4,
            width: 1,
            out_depth: 1,
            kernel_h: 3,
            kernel_w: 1,
            pad_top: 1,
            pad_left: 0,
            replicate: false,
            out_h: 4,
            out_w: 1,
        };
        let out = conv2d(&[1., 2., 3., 4.], &[1., 1., 1.], None, g);
        assert_eq!(out, vec![3., 6., 9., 7.]);
    }

    #[test]
    fn replicate_padding_repeats_edges() {
        let g = ConvGeom {
            batch: 1,
            in_depth: 1,
            height: 4,
            width: 1,
            out_depth: 1,
            kernel_h: 3,
            kernel_w: 1,
            pad_top: 1,
            pad_left: 0,
            replicate: true,
            out_h: 4,
            out_w: 1,
        };
        assert_eq!(
            conv2d(&[1., 2., 3., 4.], &[1., 1., 1.], None, g),
            vec![4., 6., 9., 11.]
        );
        let mut gx = vec![0.0; 4];
        g.col2im(&[1.; 12], &mut gx);
        // edge elements absorb the clamped taps, so every element is read three times
        assert_eq!(gx, vec![3., 3., 3., 3.]);
    }
}
