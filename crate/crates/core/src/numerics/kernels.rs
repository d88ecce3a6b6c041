//! Raw forward/backward kernels over flat row-major slices.
//!
//! Every kernel runs sequentially with a fixed summation order, so results are
//! bit-reproducible for identical inputs.

use super::Float;

#[derive(Clone, Copy, Debug)]
pub struct GemmDims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

/// `c += op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `trans_a` the buffer `a` is stored `k×m`; with `trans_b`, `b` is
/// stored `n×k`. Every output element is reduced in a fixed order that
/// depends only on the dimensions.
pub fn gemm<F: Float>(a: &[F], b: &[F], c: &mut [F], dims: GemmDims, trans_a: bool, trans_b: bool) {
    let GemmDims { m, k, n } = dims;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    let brow = &b[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    let crow = &mut c[i * n..(i + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = F::zero();
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] += s;
                }
            }
        }
    }
}

const LANES: usize = 8;

/// Dot product with `LANES` interleaved partial sums combined left to right.
pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = acc.iter().fold(F::zero(), |s, &v| s + v);
    for (&x, &y) in a[split..].iter().zip(&b[split..]) {
        s += x * y;
    }
    s
}

/// Geometry of a 1-D convolution over `(batch, channels, time)` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    /// Range of output positions `t` whose input tap `t*stride + k - padding` lands in bounds.
    fn valid_range(&self, k: usize) -> (usize, usize) {
        // need t*stride + k >= padding and t*stride + k - padding < len_in
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        let limit = self.len_in + self.padding; // t*stride + k < limit
        let hi = if limit > k {
            ((limit - k - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

impl ConvGeom {
    fn ranges(&self) -> Vec<(usize, usize)> {
        (0..self.kernel).map(|k| self.valid_range(k)).collect()
    }

    fn cols(&self) -> usize {
        self.batch * self.len_out
    }
}

/// Unfolds `x` into a `(C_in·kernel, batch·T_out)` matrix; out-of-range taps are zero.
fn im2col<F: Float>(x: &[F], g: &ConvGeom, ranges: &[(usize, usize)]) -> Vec<F> {
    let n = g.cols();
    let mut cols = vec![F::zero(); g.in_channels * g.kernel * n];
    for i in 0..g.in_channels {
        for (k, &(lo, hi)) in ranges.iter().enumerate() {
            let row = &mut cols[(i * g.kernel + k) * n..][..n];
            for b in 0..g.batch {
                let xrow = &x[(b * g.in_channels + i) * g.len_in..][..g.len_in];
                let dst = &mut row[b * g.len_out..][..g.len_out];
                for t in lo..hi {
                    dst[t] = xrow[t * g.stride + k - g.padding];
                }
            }
        }
    }
    cols
}

pub fn conv1d_forward<F: Float>(x: &[F], w: &[F], bias: Option<&[F]>, y: &mut [F], g: ConvGeom) {
    let ranges = g.ranges();
    if g.groups == 1 {
        let n = g.cols();
        let cols = im2col(x, &g, &ranges);
        let mut out = vec![F::zero(); g.out_channels * n];
        gemm(
            w,
            &cols,
            &mut out,
            GemmDims {
                m: g.out_channels,
                k: g.in_channels * g.kernel,
                n,
            },
            false,
            false,
        );
        for o in 0..g.out_channels {
            let init = bias.map_or(F::zero(), |bs| bs[o]);
            let src = &out[o * n..][..n];
            for b in 0..g.batch {
                let yrow = &mut y[(b * g.out_channels + o) * g.len_out..][..g.len_out];
                for (yv, &v) in yrow.iter_mut().zip(&src[b * g.len_out..][..g.len_out]) {
                    *yv = init + v;
                }
            }
        }
        return;
    }
    let cin_g = g.in_channels / g.groups;
    let cout_g = g.out_channels / g.groups;
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let grp = o / cout_g;
            let yrow = &mut y[(b * g.out_channels + o) * g.len_out..][..g.len_out];
            let init = bias.map_or(F::zero(), |bs| bs[o]);
            yrow.iter_mut().for_each(|v| *v = init);
            for ic in 0..cin_g {
                let i = grp * cin_g + ic;
                let xrow = &x[(b * g.in_channels + i) * g.len_in..][..g.len_in];
                for (k, &(lo, hi)) in ranges.iter().enumerate() {
                    let wv = w[(o * cin_g + ic) * g.kernel + k];
                    if g.stride == 1 {
                        let start = lo + k - g.padding;
                        for (yv, &xv) in yrow[lo..hi].iter_mut().zip(&xrow[start..start + hi - lo]) {
                            *yv += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            yrow[t] += wv * xrow[t * g.stride + k - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates gradients for input, weight and bias of a 1-D convolution.
pub fn conv1d_backward<F: Float>(
    x: &[F],
    w: &[F],
    dy: &[F],
    dx: Option<&mut [F]>,
    dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
    g: ConvGeom,
) {
    if let Some(db) = db {
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                let dyrow = &dy[(b * g.out_channels + o) * g.len_out..][..g.len_out];
                db[o] += dyrow.iter().copied().sum::<F>();
            }
        }
    }
    let ranges = g.ranges();
    if g.groups == 1 {
        let n = g.cols();
        let rows = g.in_channels * g.kernel;
        // dy regrouped as (C_out, batch·T_out)
        let mut d = vec![F::zero(); g.out_channels * n];
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                d[o * n + b * g.len_out..][..g.len_out]
                    .copy_from_slice(&dy[(b * g.out_channels + o) * g.len_out..][..g.len_out]);
            }
        }
        if let Some(dw) = dw {
            let cols = im2col(x, &g, &ranges);
            gemm(
                &d,
                &cols,
                dw,
                GemmDims {
                    m: g.out_channels,
                    k: n,
                    n: rows,
                },
                false,
                true,
            );
        }
        if let Some(dx) = dx {
            let mut dcols = vec![F::zero(); rows * n];
            gemm(
                w,
                &d,
                &mut dcols,
                GemmDims {
                    m: rows,
                    k: g.out_channels,
                    n,
                },
                true,
                false,
            );
            for i in 0..g.in_channels {
                for (k, &(lo, hi)) in ranges.iter().enumerate() {
                    let row = &dcols[(i * g.kernel + k) * n..][..n];
                    for b in 0..g.batch {
                        let dxrow = &mut dx[(b * g.in_channels + i) * g.len_in..][..g.len_in];
                        let src = &row[b * g.len_out..][..g.len_out];
                        for t in lo..hi {
                            dxrow[t * g.stride + k - g.padding] += src[t];
                        }
                    }
                }
            }
        }
        return;
    }
    let cin_g = g.in_channels / g.groups;
    let cout_g = g.out_channels / g.groups;
    if let Some(dw) = dw {
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                let grp = o / cout_g;
                let dyrow = &dy[(b * g.out_channels + o) * g.len_out..][..g.len_out];
                for ic in 0..cin_g {
                    let i = grp * cin_g + ic;
                    let xrow = &x[(b * g.in_channels + i) * g.len_in..][..g.len_in];
                    for (k, &(lo, hi)) in ranges.iter().enumerate() {
                        let mut s = F::zero();
                        for t in lo..hi {
                            s += dyrow[t] * xrow[t * g.stride + k - g.padding];
                        }
                        dw[(o * cin_g + ic) * g.kernel + k] += s;
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..g.batch {
            for o in 0..g.out_channels {
                let grp = o / cout_g;
                let dyrow = &dy[(b * g.out_channels + o) * g.len_out..][..g.len_out];
                for ic in 0..cin_g {
                    let i = grp * cin_g + ic;
                    let dxrow = &mut dx[(b * g.in_channels + i) * g.len_in..][..g.len_in];
                    for (k, &(lo, hi)) in ranges.iter().enumerate() {
                        let wv = w[(o * cin_g + ic) * g.kernel + k];
                        for t in lo..hi {
                            dxrow[t * g.stride + k - g.padding] += wv * dyrow[t];
                        }
                    }
                }
            }
        }
    }
}

pub fn normal_cdf<F: Float>(x: F) -> F {
    let half = F::of(0.5);
    half * (F::one() + (x * F::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn normal_pdf<F: Float>(x: F) -> F {
    F::of(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * F::of(0.5)).exp()
}

pub fn gelu<F: Float>(x: F) -> F {
    x * normal_cdf(x)
}

pub fn gelu_grad<F: Float>(x: F) -> F {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Tanh approximation of GELU. Only used to document its distance from the exact form.
pub fn gelu_tanh<F: Float>(x: F) -> F {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    F::of(0.5) * x * (F::one() + (c * (x + F::of(0.044715) * x * x * x)).tanh())
}

/// In-place softmax over consecutive rows of length `width`.
pub fn softmax_rows<F: Float>(data: &mut [F], width: usize) {
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// Row-wise `log(sum(exp(row)))`, stabilised by max subtraction.
pub fn logsumexp<F: Float>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Strides for a row-major shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each element of a tensor of shape `big`, the flat index of the element
/// of `small` it is paired with under trailing-axis broadcasting.
pub fn broadcast_index_map(big: &[usize], small: &[usize]) -> Vec<usize> {
    let n: usize = big.iter().product();
    let small_len: usize = small.iter().product();
    if small_len == n && big.ends_with(small) {
        return (0..n).collect();
    }
    let offset = big.len() - small.len();
    let sstr = strides(small);
    // effective stride per big axis: 0 where broadcast or absent
    let eff: Vec<usize> = (0..big.len())
        .map(|ax| {
            if ax < offset || small[ax - offset] == 1 {
                0
            } else {
                sstr[ax - offset]
            }
        })
        .collect();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; big.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..big.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < big[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// Copies `src` (shape `shape`) into `dst` with axes reordered by `perm`.
pub fn permute<F: Float>(src: &[F], shape: &[usize], perm: &[usize], dst: &mut [F]) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_str = strides(shape);
    let eff: Vec<usize> = perm.iter().map(|&p| in_str[p]).collect();
    let mut idx = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for d in dst.iter_mut() {
        *d = src[cur];
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_map_trailing_and_unit_axes() {
        assert_eq!(broadcast_index_map(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_index_map(&[2, 2], &[]), vec![0, 0, 0, 0]);
        assert_eq!(
            broadcast_index_map(&[2, 2, 2], &[2, 1, 1]),
            vec![0, 0, 0, 0, 1, 1, 1, 1]
        );
    }

    #[test]
    fn permute_transposes() {
        let src: Vec<f64> = (0..6).map(f64::from).collect();
        let mut dst = vec![0.0; 6];
        permute(&src, &[2, 3], &[1, 0], &mut dst);
        assert_eq!(dst, vec![0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn conv_valid_range_respects_padding_and_stride() {
        let g = ConvGeom {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            len_in: 4,
            len_out: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
            groups: 1,
        };
        assert_eq!(g.valid_range(0), (1, 4));
        assert_eq!(g.valid_range(1), (0, 4));
        assert_eq!(g.valid_range(2), (0, 3));
        let s2 = ConvGeom {
            len_in: 8,
            len_out: 4,
            kernel: 2,
            stride: 2,
            padding: 0,
            ..g
        };
        assert_eq!(s2.valid_range(0), (0, 4));
        assert_eq!(s2.valid_range(1), (0, 4));
    }

    #[test]
    fn gemm_transpose_variants_agree() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let dims = GemmDims { m: 2, k: 3, n: 2 };
        let mut reference = [0.0f64; 4];
        gemm(&a, &b, &mut reference, dims, false, false);
        assert_eq!(reference, [58.0, 64.0, 139.0, 154.0]);
        for (aa, bb, ta, tb) in [(&at, &b, true, false), (&a, &bt, false, true), (&at, &bt, true, true)] {
            let mut c = [0.0f64; 4];
            gemm(aa, bb, &mut c, dims, ta, tb);
            assert_eq!(c, reference);
        }
    }
}
