//! DFT/IDFT with a `1/N` forward factor and centered-frequency band operations.
//!
//! Coefficients are kept in standard FFT order: index `i` of an `N`-point axis
//! holds frequency `i` for `i <= N/2` and `i - N` otherwise. Spatial axes are
//! always the trailing ones; any leading axes are channels.

mod band;
mod ops;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar, Tensor};

pub use band::{
    annulus, band_avg_crop, band_crop, band_pad, cell_contains, Annulus, AxisMap, BandMap,
    NyquistRule,
};
pub use ops::{AnnulusAssemble, BandResize, Dft, Idft};

/// Frequency held by index `i` of an `n`-point axis.
#[inline]
pub fn freq(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Index of frequency `k` on an `n`-point axis.
#[inline]
pub fn bin(k: isize, n: usize) -> usize {
    k.rem_euclid(n as isize) as usize
}

/// Max-norm frequency of a flat index into a hypercube of `axes` axes of
/// length `n` each.
pub fn max_freq(mut flat: usize, n: usize, axes: usize) -> usize {
    let mut m = 0;
    for _ in 0..axes {
        m = m.max(freq(flat % n, n).unsigned_abs());
        flat /= n;
    }
    m
}

/// Complex coefficients of a real signal (1 spatial axis) or image (2 axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    coeffs: CTensor<T>,
    axes: usize,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(coeffs: CTensor<T>, axes: usize) -> Result<Self> {
        if axes == 0 || axes > coeffs.ndim() {
            return Err(Error::shape(format!(
                "{axes} spatial axes on a tensor of shape {:?}",
                coeffs.shape()
            )));
        }
        Ok(Self { coeffs, axes })
    }

    pub fn coeffs(&self) -> &CTensor<T> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> CTensor<T> {
        self.coeffs
    }

    /// Number of spatial axes.
    pub fn axes(&self) -> usize {
        self.axes
    }

    /// Spatial extents.
    pub fn dims(&self) -> &[usize] {
        let s = self.coeffs.shape();
        &s[s.len() - self.axes..]
    }

    /// Length of the last spatial axis (the resolution for square images).
    pub fn len(&self) -> usize {
        *self.coeffs.shape().last().expect("non-empty shape")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coefficient at centered frequency `k` (one entry per spatial axis)
    /// for leading (channel) offset `channel`.
    pub fn at(&self, channel: usize, k: &[isize]) -> Complex<T> {
        let dims = self.dims();
        let mut flat = 0;
        for (&kk, &n) in k.iter().zip(dims) {
            flat = flat * n + bin(kk, n);
        }
        let plane: usize = dims.iter().product();
        self.coeffs.data()[channel * plane + flat]
    }

    /// Largest `|X[-k] - conj(X[k])|`.
    pub fn hermitian_asymmetry(&self) -> f64 {
        hermitian_asymmetry(&self.coeffs, self.axes)
    }
}

/// Largest `|X[-k] - conj(X[k])|` over the trailing `axes` axes.
pub fn hermitian_asymmetry<T: Scalar>(x: &CTensor<T>, axes: usize) -> f64 {
    asymmetry_and_peak(x, axes).0
}

/// `(max |X[-k] - conj(X[k])|, max |X|)` in one pass, comparing squared moduli.
fn asymmetry_and_peak<T: Scalar>(x: &CTensor<T>, axes: usize) -> (f64, f64) {
    let shape = x.shape();
    let dims = &shape[shape.len() - axes..];
    let plane: usize = dims.iter().product();
    let mirror: Vec<usize> = (0..plane).map(|i| mirror_index(i, dims)).collect();
    let (mut worst, mut peak) = (T::zero(), T::zero());
    for chunk in x.data().chunks(plane) {
        for (v, &m) in chunk.iter().zip(&mirror) {
            let d = (chunk[m].conj() - *v).norm_sqr();
            if d > worst {
                worst = d;
            }
            let a = v.norm_sqr();
            if a > peak {
                peak = a;
            }
        }
    }
    (worst.f64().sqrt(), peak.f64().sqrt())
}

fn mirror_index(mut flat: usize, dims: &[usize]) -> usize {
    let mut out = 0;
    let mut stride = 1;
    for &n in dims.iter().rev() {
        let i = flat % n;
        flat /= n;
        out += ((n - i) % n) * stride;
        stride *= n;
    }
    out
}

/// Hermitian tolerance for `T`: `1e-9` in 64-bit, widened with the unit
/// roundoff for narrower types, relative to `max(1, max|X|)`.
pub fn hermitian_tolerance<T: Scalar>() -> f64 {
    (1e3 * T::epsilon().f64()).max(1e-9)
}

/// Unnormalized FFT over the trailing `axes` axes.
pub fn fft_axes<T: Scalar>(x: &CTensor<T>, axes: usize, inverse: bool) -> CTensor<T> {
    let shape = x.shape().to_vec();
    let mut data = x.data().to_vec();
    for a in shape.len() - axes..shape.len() {
        fft_axis(&mut data, &shape, a, inverse);
    }
    CTensor::new(shape, data).expect("shape unchanged")
}

fn fft_axis<T: Scalar>(data: &mut [Complex<T>], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n == 1 {
        return;
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let plan = T::plan(n, inverse);
    let mut scratch = vec![Complex::default(); plan.get_inplace_scratch_len()];
    if inner == 1 {
        plan.process_with_scratch(data, &mut scratch);
        return;
    }
    let mut line = vec![Complex::default(); n];
    let block = n * inner;
    for chunk in data.chunks_mut(block) {
        for j in 0..inner {
            for (i, v) in line.iter_mut().enumerate() {
                *v = chunk[i * inner + j];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for (i, v) in line.iter().enumerate() {
                chunk[i * inner + j] = *v;
            }
        }
    }
}

fn spatial_size(shape: &[usize], axes: usize) -> Result<usize> {
    if shape.len() < axes {
        return Err(Error::shape(format!("need {axes} spatial axes, got shape {shape:?}")));
    }
    Ok(shape[shape.len() - axes..].iter().product())
}

/// Forward transform over the trailing `axes` axes with the `1/N` factor
/// (`1/(H W)` in 2-D).
pub fn dft_axes<T: Scalar>(x: &Tensor<T>, axes: usize) -> Result<Spectrum<T>> {
    let n = spatial_size(x.shape(), axes)?;
    let mut c = fft_axes(&x.to_complex(), axes, false);
    let s = T::one() / T::c(n as f64);
    for v in c.data_mut() {
        *v = *v * s;
    }
    Spectrum::new(c, axes)
}

/// Inverse transform (no factor). Rejects spectra that are not Hermitian
/// within [`hermitian_tolerance`], since their inverse is not real.
pub fn idft_axes<T: Scalar>(x: &CTensor<T>, axes: usize) -> Result<Tensor<T>> {
    spatial_size(x.shape(), axes)?;
    check_hermitian(x, axes)?;
    Ok(fft_axes(x, axes, true).re())
}

pub(crate) fn check_hermitian<T: Scalar>(x: &CTensor<T>, axes: usize) -> Result<()> {
    let (asym, peak) = asymmetry_and_peak(x, axes);
    let scale = peak.max(1.0);
    if asym > hermitian_tolerance::<T>() * scale {
        return Err(Error::NotHermitian(asym));
    }
    Ok(())
}

/// 1-D transform of the last axis.
pub fn dft<T: Scalar>(x: &Tensor<T>) -> Spectrum<T> {
    dft_axes(x, 1).expect("tensors have at least one axis")
}

/// Inverse of [`dft`] / [`dft2`], dispatching on the spectrum's axis count.
pub fn idft<T: Scalar>(x: &Spectrum<T>) -> Result<Tensor<T>> {
    idft_axes(&x.coeffs, x.axes)
}

/// 2-D transform of the last two axes.
pub fn dft2<T: Scalar>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    dft_axes(x, 2)
}

pub fn idft2<T: Scalar>(x: &Spectrum<T>) -> Result<Tensor<T>> {
    if x.axes != 2 {
        return Err(Error::shape(format!("idft2 of a {}-axis spectrum", x.axes)));
    }
    idft(x)
}
