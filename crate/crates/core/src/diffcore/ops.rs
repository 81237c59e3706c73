//! Forward and backward kernels for the encoder layers.
//!
//! Layouts are `[n, c, h, w]` for images and `[n, d]` for vectors. Every
//! kernel has a matching `*_backward` that returns the gradients of its
//! inputs given the gradient of its output.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView4, Axis};

use super::{lit, Real};
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const GROUP_NORM_EPS: f64 = 1e-5;
pub const L2_NORM_EPS: f64 = 1e-12;

/// Samples folded into a single im2col matrix.
const CONV_CHUNK: usize = 16;

/// Zero padding `(top, left)` for a "same" convolution; the remainder goes
/// to the bottom/right edge, so the centre tap of a 6x4 kernel is `(2, 1)`.
pub fn same_padding(kh: usize, kw: usize) -> (usize, usize) {
    ((kh - 1) / 2, (kw - 1) / 2)
}

fn im2col<F: Real>(x: &ArrayView4<F>, n0: usize, n1: usize, kh: usize, kw: usize) -> Array2<F> {
    let (_, cin, h, w) = x.dim();
    let (pt, pl) = same_padding(kh, kw);
    let hw = h * w;
    let ncols = (n1 - n0) * hw;
    let mut cols = Array2::<F>::zeros((cin * kh * kw, ncols));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let out = cols.as_slice_mut().expect("fresh array");
    for s in 0..(n1 - n0) {
        for c in 0..cin {
            let plane = &xs[((n0 + s) * cin + c) * hw..][..hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let dst = &mut out[row * ncols + s * hw..][..hw];
                    let ox_lo = pl.saturating_sub(kx);
                    let ox_hi = (w + pl).saturating_sub(kx).min(w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pt || iy - pt >= h {
                            continue;
                        }
                        let iy = iy - pt;
                        let ix_lo = ox_lo + kx - pl;
                        let n = ox_hi - ox_lo;
                        dst[oy * w + ox_lo..][..n].copy_from_slice(&plane[iy * w + ix_lo..][..n]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<F: Real>(cols: &Array2<F>, dx: &mut Array4<F>, n0: usize, kh: usize, kw: usize) {
    let (_, cin, h, w) = dx.dim();
    let (pt, pl) = same_padding(kh, kw);
    let hw = h * w;
    let ncols = cols.ncols();
    let src = cols.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("standard layout");
    for s in 0..ncols / hw {
        for c in 0..cin {
            let plane = &mut dxs[((n0 + s) * cin + c) * hw..][..hw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let col = &src[row * ncols + s * hw..][..hw];
                    let ox_lo = pl.saturating_sub(kx);
                    let ox_hi = (w + pl).saturating_sub(kx).min(w);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pt || iy - pt >= h {
                            continue;
                        }
                        let iy = iy - pt;
                        let ix_lo = ox_lo + kx - pl;
                        let n = ox_hi - ox_lo;
                        let d = &mut plane[iy * w + ix_lo..][..n];
                        for (a, b) in d.iter_mut().zip(&col[oy * w + ox_lo..][..n]) {
                            *a = *a + *b;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<F>(x: &ArrayView4<F>, k: &ArrayView4<F>, b: &ArrayView1<F>) -> Result<()> {
    let (_, cin, _, _) = x.dim();
    let (cout, kcin, kh, kw) = k.dim();
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if b.len() != cout {
        return Err(Error::Shape(format!(
            "conv2d: bias has {} entries for {cout} output channels",
            b.len()
        )));
    }
    if kh == 0 || kw == 0 {
        return Err(Error::Shape("conv2d: empty kernel".into()));
    }
    Ok(())
}

/// Stride-1 cross-correlation with "same" zero padding, plus bias.
pub fn conv2d<F: Real>(x: ArrayView4<F>, k: ArrayView4<F>, b: ArrayView1<F>) -> Result<Array4<F>> {
    check_conv_shapes(&x, &k, &b)?;
    let (n, _, h, w) = x.dim();
    let (cout, cin, kh, kw) = k.dim();
    let k = k.as_standard_layout();
    let kmat = k.view().into_shape_with_order((cout, cin * kh * kw)).expect("contiguous");
    let hw = h * w;
    let mut y = Array4::<F>::zeros((n, cout, h, w));
    let ys = y.as_slice_mut().expect("fresh array");
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + CONV_CHUNK).min(n);
        let cols = im2col(&x, n0, n1, kh, kw);
        let out = kmat.dot(&cols);
        let out = out.as_slice().expect("standard layout");
        let ncols = (n1 - n0) * hw;
        for s in 0..(n1 - n0) {
            for co in 0..cout {
                let bias = b[co];
                let src = &out[co * ncols + s * hw..][..hw];
                let dst = &mut ys[((n0 + s) * cout + co) * hw..][..hw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = *v + bias;
                }
            }
        }
        n0 = n1;
    }
    Ok(y)
}

pub struct Conv2dGrads<F> {
    pub input: Option<Array4<F>>,
    pub kernel: Array4<F>,
    pub bias: Array1<F>,
}

pub fn conv2d_backward<F: Real>(
    x: ArrayView4<F>,
    k: ArrayView4<F>,
    dy: ArrayView4<F>,
    need_input: bool,
) -> Conv2dGrads<F> {
    let (n, cin, h, w) = x.dim();
    let (cout, _, kh, kw) = k.dim();
    let hw = h * w;
    let k = k.as_standard_layout();
    let kmat = k.view().into_shape_with_order((cout, cin * kh * kw)).expect("contiguous");
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");

    let mut dk = Array2::<F>::zeros((cout, cin * kh * kw));
    let mut db = Array1::<F>::zeros(cout);
    let mut dx = need_input.then(|| Array4::<F>::zeros((n, cin, h, w)));

    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + CONV_CHUNK).min(n);
        let ncols = (n1 - n0) * hw;
        let mut g = Array2::<F>::zeros((cout, ncols));
        {
            let gs = g.as_slice_mut().expect("fresh array");
            for s in 0..(n1 - n0) {
                for co in 0..cout {
                    let src = &dys[((n0 + s) * cout + co) * hw..][..hw];
                    gs[co * ncols + s * hw..][..hw].copy_from_slice(src);
                }
            }
        }
        for co in 0..cout {
            db[co] = db[co] + g.row(co).sum();
        }
        let cols = im2col(&x, n0, n1, kh, kw);
        general_mat_mul(F::one(), &g, &cols.t(), F::one(), &mut dk);
        if let Some(dx) = dx.as_mut() {
            let dcols = kmat.t().dot(&g);
            col2im_add(&dcols, dx, n0, kh, kw);
        }
        n0 = n1;
    }
    Conv2dGrads {
        input: dx,
        kernel: dk.into_shape_with_order((cout, cin, kh, kw)).expect("same size"),
        bias: db,
    }
}

#[inline]
pub fn selu_scalar<F: Real>(x: F) -> F {
    let l: F = lit(SELU_LAMBDA);
    if x > F::zero() {
        l * x
    } else {
        l * lit::<F>(SELU_ALPHA) * (x.exp() - F::one())
    }
}

#[inline]
pub fn selu_derivative<F: Real>(x: F) -> F {
    let l: F = lit(SELU_LAMBDA);
    if x > F::zero() {
        l
    } else {
        l * lit::<F>(SELU_ALPHA) * x.exp()
    }
}

/// Per-(sample, group) statistics saved by the forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GroupStats<F> {
    pub mean: F,
    pub rstd: F,
}

fn check_group_norm<F>(x: &ArrayView4<F>, gamma: &ArrayView1<F>, beta: &ArrayView1<F>, groups: usize) -> Result<()> {
    let c = x.dim().1;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "group_norm: {c} channels cannot be split into {groups} groups"
        )));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "group_norm: affine parameters have {}/{} entries for {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Normalises each group of `c / groups` channels over its channels and
/// spatial extent, then applies the per-channel affine map.
pub fn group_norm<F: Real>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    beta: ArrayView1<F>,
    groups: usize,
) -> Result<(Array4<F>, Vec<GroupStats<F>>)> {
    check_group_norm(&x, &gamma, &beta, groups)?;
    let (n, c, h, w) = x.dim();
    let cpg = c / groups;
    let hw = h * w;
    let m = cpg * hw;
    let eps: F = lit(GROUP_NORM_EPS);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, h, w));
    let ys = y.as_slice_mut().expect("fresh array");
    let mut stats = Vec::with_capacity(n * groups);
    let inv_m = F::one() / F::from_usize(m).unwrap();
    for i in 0..n {
        for g in 0..groups {
            let off = (i * c + g * cpg) * hw;
            let block = &xs[off..off + m];
            let mean = block.iter().copied().sum::<F>() * inv_m;
            let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_m;
            let rstd = F::one() / (var + eps).sqrt();
            stats.push(GroupStats { mean, rstd });
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let (ga, be) = (gamma[ch], beta[ch]);
                let o = off + cc * hw;
                for (d, &v) in ys[o..o + hw].iter_mut().zip(&xs[o..o + hw]) {
                    *d = ga * ((v - mean) * rstd) + be;
                }
            }
        }
    }
    Ok((y, stats))
}

pub struct GroupNormGrads<F> {
    pub input: Option<Array4<F>>,
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

pub fn group_norm_backward<F: Real>(
    x: ArrayView4<F>,
    gamma: ArrayView1<F>,
    groups: usize,
    stats: &[GroupStats<F>],
    dy: ArrayView4<F>,
    need_input: bool,
) -> GroupNormGrads<F> {
    let (n, c, h, w) = x.dim();
    let cpg = c / groups;
    let hw = h * w;
    let m = cpg * hw;
    let mf = F::from_usize(m).unwrap();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let dy = dy.as_standard_layout();
    let dys = dy.as_slice().expect("standard layout");
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    let mut dx = need_input.then(|| Array4::<F>::zeros((n, c, h, w)));
    for i in 0..n {
        for g in 0..groups {
            let GroupStats { mean, rstd } = stats[i * groups + g];
            let off = (i * c + g * cpg) * hw;
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let o = off + cc * hw;
                let mut dga = F::zero();
                let mut dbe = F::zero();
                for (&v, &d) in xs[o..o + hw].iter().zip(&dys[o..o + hw]) {
                    let xhat = (v - mean) * rstd;
                    dga = dga + d * xhat;
                    dbe = dbe + d;
                    let dxhat = d * gamma[ch];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
                dgamma[ch] = dgamma[ch] + dga;
                dbeta[ch] = dbeta[ch] + dbe;
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = dx.as_slice_mut().expect("fresh array");
                let scale = rstd / mf;
                for cc in 0..cpg {
                    let ch = g * cpg + cc;
                    let o = off + cc * hw;
                    for j in o..o + hw {
                        let xhat = (xs[j] - mean) * rstd;
                        let dxhat = dys[j] * gamma[ch];
                        dxs[j] = scale * (mf * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
            }
        }
    }
    GroupNormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

/// Non-overlapping max pooling (stride = kernel). Trailing rows/columns that
/// do not fill a window are dropped. Returns the flat input index of each
/// window's first (row-major) maximum.
pub fn max_pool2d<F: Real>(x: ArrayView4<F>, kernel: (usize, usize)) -> Result<(Array4<F>, Vec<usize>)> {
    let (n, c, h, w) = x.dim();
    let (kh, kw) = kernel;
    if kh == 0 || kw == 0 || kh > h || kw > w {
        return Err(Error::Shape(format!(
            "max_pool2d: kernel {kh}x{kw} does not fit input {h}x{w}"
        )));
    }
    let (oh, ow) = (h / kh, w / kw);
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut y = Array4::<F>::zeros((n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let ys = y.as_slice_mut().expect("fresh array");
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for py in 0..oh {
            for px in 0..ow {
                let mut best = base + py * kh * w + px * kw;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let idx = base + (py * kh + dy) * w + px * kw + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                ys[o] = xs[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok((y, argmax))
}

pub fn max_pool2d_backward<F: Real>(input_dim: (usize, usize, usize, usize), argmax: &[usize], dy: ArrayView4<F>) -> Array4<F> {
    let mut dx = Array4::<F>::zeros(input_dim);
    let dxs = dx.as_slice_mut().expect("fresh array");
    for (&idx, &g) in argmax.iter().zip(dy.iter()) {
        dxs[idx] = dxs[idx] + g;
    }
    dx
}

fn check_linear<F>(x: &ArrayView2<F>, w: &ArrayView2<F>, b: &ArrayView1<F>) -> Result<()> {
    if x.ncols() != w.ncols() || b.len() != w.nrows() {
        return Err(Error::Shape(format!(
            "linear: input width {}, weight {}x{}, bias {}",
            x.ncols(),
            w.nrows(),
            w.ncols(),
            b.len()
        )));
    }
    Ok(())
}

/// Row-wise affine map `y = x Wᵀ + b` for `x: [n, in]`, `W: [out, in]`.
pub fn linear<F: Real>(x: ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Result<Array2<F>> {
    check_linear(&x, &w, &b)?;
    let mut y = x.dot(&w.t());
    y += &b;
    Ok(y)
}

pub struct LinearGrads<F> {
    pub input: Array2<F>,
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

pub fn linear_backward<F: Real>(x: ArrayView2<F>, w: ArrayView2<F>, dy: ArrayView2<F>) -> LinearGrads<F> {
    LinearGrads {
        input: dy.dot(&w),
        weight: dy.t().dot(&x),
        bias: dy.sum_axis(Axis(0)),
    }
}

/// Scales each row to unit Euclidean norm; returns the row norms.
pub fn l2_normalize<F: Real>(x: ArrayView2<F>) -> Result<(Array2<F>, Vec<F>)> {
    let eps: F = lit(L2_NORM_EPS);
    let mut y = x.to_owned();
    let mut norms = Vec::with_capacity(x.nrows());
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if !(norm >= eps) {
            return Err(Error::Degenerate(format!(
                "l2_normalize: row {i} has norm {norm} below {L2_NORM_EPS:e}"
            )));
        }
        row.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    Ok((y, norms))
}

/// Applies the projection `(I − u uᵀ) / ‖x‖` row by row, with `u` the output.
pub fn l2_normalize_backward<F: Real>(y: ArrayView2<F>, norms: &[F], dy: ArrayView2<F>) -> Array2<F> {
    let mut dx = dy.to_owned();
    for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
        let u = y.row(i);
        let dot = u.dot(&row);
        let inv = F::one() / norms[i];
        row.zip_mut_with(&u, |d, &uu| *d = (*d - uu * dot) * inv);
    }
    dx
}
