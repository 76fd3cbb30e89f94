//! Forward and adjoint kernels over [`Tensor`]. Every loop runs in a fixed
//! order so that identical inputs give bit-identical outputs.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

fn expect_rank<T: Real>(t: &Tensor<T>, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(format!("{what} needs rank {rank}, got {:?}", t.dims())));
    }
    Ok(())
}

/// Row-major `[rows × cols]` operand, optionally read transposed.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, T: Real> View<'a, T> {
    fn of(t: &'a Tensor<T>, transposed: bool) -> Self {
        Self { data: t.data(), rows: t.dims()[0], cols: t.dims()[1], transposed }
    }

    /// Logical `(rows, cols)` after the optional transpose.
    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

fn gemm<T: Real>(a: View<'_, T>, b: View<'_, T>, what: &str) -> Result<Tensor<T>> {
    let ((m, k), (k2, n)) = (a.shape(), b.shape());
    if k != k2 {
        return Err(Error::shape(format!("{what}: inner dims {k} vs {k2}")));
    }
    debug_assert_eq!(a.data.len(), a.rows * a.cols);
    debug_assert_eq!(b.data.len(), b.rows * b.cols);
    let mut out = vec![T::zero(); m * n];
    let ((rsa, csa), (rsb, csb)) = (a.strides(), b.strides());
    // SAFETY: the views cover exactly rows × cols elements of their slices
    // and the strides stay inside them; `out` is a fresh m × n buffer.
    unsafe {
        T::gemm(m, k, n, a.data.as_ptr(), rsa, csa, b.data.as_ptr(), rsb, csb, out.as_mut_ptr(), n as isize, 1);
    }
    Tensor::new(&[m, n], out)
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(a, 2, "matmul lhs")?;
    expect_rank(b, 2, "matmul rhs")?;
    gemm(View::of(a, false), View::of(b, false), "matmul")
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(a, 2, "matmul_nt lhs")?;
    expect_rank(b, 2, "matmul_nt rhs")?;
    gemm(View::of(a, false), View::of(b, true), "matmul_nt")
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(a, 2, "matmul_tn lhs")?;
    expect_rank(b, 2, "matmul_tn rhs")?;
    gemm(View::of(a, true), View::of(b, false), "matmul_tn")
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Axis decomposition `(outer, len, inner)` so that element `(o, l, i)` sits
/// at `(o * len + l) * inner + i`.
fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

/// In-place stabilized softmax over `data[base + l * stride]`, `l < len`.
/// Returns false when every entry is −∞.
pub(crate) fn softmax_strided<T: Real>(data: &mut [T], base: usize, len: usize, stride: usize) -> bool {
    let mut max = T::neg_infinity();
    for l in 0..len {
        max = max.max(data[base + l * stride]);
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for l in 0..len {
        let e = (data[base + l * stride] - max).exp();
        data[base + l * stride] = e;
        sum += e;
    }
    for l in 0..len {
        data[base + l * stride] = data[base + l * stride] / sum;
    }
    true
}

/// Softmax along `axis`. Entries equal to −∞ map to exactly zero.
pub fn softmax_over_axis<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!("softmax axis {axis} for dims {:?}", x.dims())));
    }
    let (outer, len, inner) = axis_split(x.dims(), axis);
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            if !softmax_strided(data, o * len * inner + i, len, inner) {
                return Err(Error::DegenerateSlice(o * inner + i));
            }
        }
    }
    Ok(out)
}

/// Adjoint of softmax given its output `y`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.dims(), axis);
    let mut dx = Tensor::zeros(y.dims());
    let (yd, gd) = (y.data(), dy.data());
    let out = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = T::zero();
            for l in 0..len {
                let k = base + l * inner;
                s += yd[k] * gd[k];
            }
            for l in 0..len {
                let k = base + l * inner;
                out[k] = yd[k] * (gd[k] - s);
            }
        }
    }
    dx
}

/// Per-row normalisation statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer norm over the last axis.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let c = *x.dims().last().unwrap();
    if c < 2 || gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "layer_norm x {:?}, gamma {:?}, beta {:?}",
            x.dims(),
            gamma.dims(),
            beta.dims()
        )));
    }
    let rows = x.len() / c;
    let eps = T::of(LAYER_NORM_EPS);
    let inv_c = T::one() / T::of(c as f64);
    let mut out = Tensor::zeros(x.dims());
    let mut stats = NormStats { mean: Vec::with_capacity(rows), rstd: Vec::with_capacity(rows) };
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..rows {
        let xr = &x.data()[r * c..(r + 1) * c];
        let mean = xr.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
        let var = xr.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_c;
        let rstd = T::one() / (var + eps).sqrt();
        let or = &mut out.data_mut()[r * c..(r + 1) * c];
        for j in 0..c {
            or[j] = (xr[j] - mean) * rstd * g[j] + b[j];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((out, stats))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = *x.dims().last().unwrap();
    let rows = x.len() / c;
    let inv_c = T::one() / T::of(c as f64);
    let mut dx = Tensor::zeros(x.dims());
    let mut dg = Tensor::zeros(&[c]);
    let mut db = Tensor::zeros(&[c]);
    let g = gamma.data();
    let mut xhat = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let xr = &x.data()[r * c..(r + 1) * c];
        let gr = &dy.data()[r * c..(r + 1) * c];
        let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..c {
            xhat[j] = (xr[j] - mean) * rstd;
            dxhat[j] = gr[j] * g[j];
            dg.data_mut()[j] += gr[j] * xhat[j];
            db.data_mut()[j] += gr[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        let dr = &mut dx.data_mut()[r * c..(r + 1) * c];
        for j in 0..c {
            dr[j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    (dx, dg, db)
}

const GELU_CUBIC: f64 = 0.044715;

/// Tanh-approximated Gaussian error linear unit.
#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + T::of(GELU_CUBIC) * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let c = T::of(GELU_CUBIC);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}

pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

fn conv_out(extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if stride == 0 || padded < k || (padded - k) % stride != 0 {
        return Err(Error::shape(format!(
            "conv extent {extent}, kernel {k}, stride {stride}, pad {pad} is not integral"
        )));
    }
    Ok((padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<T: Real>(x: &Tensor<T>, k: &Tensor<T>, g: ConvGeom) -> Result<ConvDims> {
    expect_rank(x, 3, "conv2d input")?;
    expect_rank(k, 4, "conv2d kernel")?;
    let (cin, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (cout, kcin, kh, kw) = (k.dims()[0], k.dims()[1], k.dims()[2], k.dims()[3]);
    if cin != kcin {
        return Err(Error::shape(format!("conv2d input {:?} kernel {:?}", x.dims(), k.dims())));
    }
    let oh = conv_out(h, kh, g.stride, g.pad)?;
    let ow = conv_out(w, kw, g.stride, g.pad)?;
    Ok(ConvDims { cin, h, w, cout, kh, kw, oh, ow })
}

/// Patch matrix `[(Cin·kh·kw) × (oh·ow)]`; padded taps are zero.
fn im2col<T: Real>(xd: &[T], d: &ConvDims, g: ConvGeom) -> Vec<T> {
    let plane = d.oh * d.ow;
    let mut cols = vec![T::zero(); d.cin * d.kh * d.kw * plane];
    for ic in 0..d.cin {
        let xb = &xd[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &mut cols[((ic * d.kh + ky) * d.kw + kx) * plane..][..plane];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let xrow = &xb[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            row[oy * d.ow + ox] = xrow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the image.
fn col2im<T: Real>(cols: &[T], d: &ConvDims, g: ConvGeom) -> Vec<T> {
    let plane = d.oh * d.ow;
    let mut x = vec![T::zero(); d.cin * d.h * d.w];
    for ic in 0..d.cin {
        let xb = &mut x[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = &cols[((ic * d.kh + ky) * d.kw + kx) * plane..][..plane];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let xrow = &mut xb[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            xrow[ix as usize] += row[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation with zero padding: `x[Cin×H×W]`, `k[Cout×Cin×kh×kw]`.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, g: ConvGeom) -> Result<Tensor<T>> {
    let d = conv_dims(x, k, g)?;
    let taps = d.cin * d.kh * d.kw;
    let cols = Tensor::new(&[taps, d.oh * d.ow], im2col(x.data(), &d, g))?;
    let kmat = k.reshape(&[d.cout, taps])?;
    matmul(&kmat, &cols)?.into_reshaped(&[d.cout, d.oh, d.ow])
}

/// Returns `(dx, dk)` for [`conv2d`].
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    g: ConvGeom,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = conv_dims(x, k, g)?;
    let taps = d.cin * d.kh * d.kw;
    let cols = Tensor::new(&[taps, d.oh * d.ow], im2col(x.data(), &d, g))?;
    let kmat = k.reshape(&[d.cout, taps])?;
    let dmat = dout.reshape(&[d.cout, d.oh * d.ow])?;
    let dk = matmul_nt(&dmat, &cols)?.into_reshaped(k.dims())?;
    let dcols = matmul_tn(&kmat, &dmat)?;
    let dx = Tensor::new(x.dims(), col2im(dcols.data(), &d, g))?;
    Ok((dx, dk))
}

/// Transposed convolution with kernel `2·stride` and padding `stride/2`, so the
/// output is exactly `stride×` the input. `x[Cin×H×W]`, `k[Cin×Cout×2s×2s]`.
pub fn transposed_conv2d<T: Real>(x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let d = tconv_dims(x, k, stride)?;
    let kmat = k.reshape(&[d.cin, d.cout * d.kh * d.kw])?;
    let xmat = x.reshape(&[d.cin, d.h * d.w])?;
    let cols = matmul_tn(&kmat, &xmat)?;
    // the scatter below is col2im with the roles of input and output swapped
    let geom = ConvGeom { stride, pad: stride / 2 };
    let swapped = ConvDims { cin: d.cout, h: d.oh, w: d.ow, cout: d.cin, kh: d.kh, kw: d.kw, oh: d.h, ow: d.w };
    Tensor::new(&[d.cout, d.oh, d.ow], col2im(cols.data(), &swapped, geom))
}

fn tconv_dims<T: Real>(x: &Tensor<T>, k: &Tensor<T>, stride: usize) -> Result<ConvDims> {
    expect_rank(x, 3, "transposed_conv2d input")?;
    expect_rank(k, 4, "transposed_conv2d kernel")?;
    if stride == 0 || stride % 2 != 0 {
        return Err(Error::shape(format!("transposed_conv2d stride {stride} must be even")));
    }
    let (cin, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (kcin, cout, kh, kw) = (k.dims()[0], k.dims()[1], k.dims()[2], k.dims()[3]);
    if cin != kcin || kh != 2 * stride || kw != 2 * stride {
        return Err(Error::shape(format!(
            "transposed_conv2d input {:?}, kernel {:?}, stride {stride}",
            x.dims(),
            k.dims()
        )));
    }
    Ok(ConvDims { cin, h, w, cout, kh, kw, oh: h * stride, ow: w * stride })
}

pub fn transposed_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    stride: usize,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = tconv_dims(x, k, stride)?;
    let geom = ConvGeom { stride, pad: stride / 2 };
    let swapped = ConvDims { cin: d.cout, h: d.oh, w: d.ow, cout: d.cin, kh: d.kh, kw: d.kw, oh: d.h, ow: d.w };
    let dcols = Tensor::new(&[d.cout * d.kh * d.kw, d.h * d.w], im2col(dout.data(), &swapped, geom))?;
    let kmat = k.reshape(&[d.cin, d.cout * d.kh * d.kw])?;
    let xmat = x.reshape(&[d.cin, d.h * d.w])?;
    let dx = matmul(&kmat, &dcols)?.into_reshaped(x.dims())?;
    let dk = matmul_nt(&xmat, &dcols)?.into_reshaped(k.dims())?;
    Ok((dx, dk))
}

/// Source taps for one output coordinate of an align-corners=false resize.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn resize_taps<T: Real>(src: usize, dst: usize) -> Vec<Tap<T>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let l = pos - i0 as f64;
            Tap { i0, i1, w0: T::of(1.0 - l), w1: T::of(l) }
        })
        .collect()
}

/// Bilinear resize of `x[C×H×W]` to `C×H2×W2` (align_corners = false).
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, h2: usize, w2: usize) -> Result<Tensor<T>> {
    expect_rank(x, 3, "bilinear_resize")?;
    if h2 == 0 || w2 == 0 {
        return Err(Error::shape("bilinear_resize to zero extent"));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let ty = resize_taps::<T>(h, h2);
    let tx = resize_taps::<T>(w, w2);
    let mut out = vec![T::zero(); c * h2 * w2];
    let xd = x.data();
    for ch in 0..c {
        let xb = &xd[ch * h * w..(ch + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let top = b.w0 * xb[a.i0 * w + b.i0] + b.w1 * xb[a.i0 * w + b.i1];
                let bot = b.w0 * xb[a.i1 * w + b.i0] + b.w1 * xb[a.i1 * w + b.i1];
                out[(ch * h2 + oy) * w2 + ox] = a.w0 * top + a.w1 * bot;
            }
        }
    }
    Tensor::new(&[c, h2, w2], out)
}

/// Adjoint of [`bilinear_resize`]; `src_dims` is `[C, H, W]` of the input.
pub fn bilinear_resize_backward<T: Real>(src_dims: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (src_dims[0], src_dims[1], src_dims[2]);
    let (h2, w2) = (dout.dims()[1], dout.dims()[2]);
    let ty = resize_taps::<T>(h, h2);
    let tx = resize_taps::<T>(w, w2);
    let mut dx = Tensor::zeros(src_dims);
    let od = dout.data();
    let dd = dx.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let g = od[(ch * h2 + oy) * w2 + ox];
                let gt = a.w0 * g;
                let gb = a.w1 * g;
                dd[base + a.i0 * w + b.i0] += b.w0 * gt;
                dd[base + a.i0 * w + b.i1] += b.w1 * gt;
                dd[base + a.i1 * w + b.i0] += b.w0 * gb;
                dd[base + a.i1 * w + b.i1] += b.w1 * gb;
            }
        }
    }
    dx
}
