//! Rate changes of signals and images: ideal low-pass, subsampling, ideal
//! down/upsampling, Fourier resampling to arbitrary sizes, and Gaussian
//! (non-ideal) anti-aliasing.
//!
//! `axes` is the number of trailing spatial axes (1 for signals, 2 for
//! images); rate changes are applied separably with the same factor per axis.
//! Boundaries are circular everywhere.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, band_crop, band_pad, freq, Spectrum};
use crate::tensor::{CTensor, Scalar, Tensor};

fn spatial_len<T: Scalar>(x: &Tensor<T>, axes: usize) -> Result<usize> {
    if axes == 0 || x.ndim() < axes {
        return Err(Error::shape(format!("{axes} spatial axes on {:?}", x.shape())));
    }
    let dims = &x.shape()[x.ndim() - axes..];
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::shape(format!("unequal spatial extents {dims:?}")));
    }
    Ok(dims[0])
}

/// Zeroes every coefficient with `|k| > N/(2R)` on any spatial axis.
pub fn ideal_lowpass<T: Scalar>(x: &Tensor<T>, r: usize, axes: usize) -> Result<Tensor<T>> {
    let n = spatial_len(x, axes)?;
    if r == 0 || r >= n {
        return Err(Error::resolution(format!("low-pass factor {r} on length {n}")));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let spec = spectral::dft_axes(x, axes)?;
    let plane = n.pow(axes as u32);
    let mut c = spec.into_coeffs();
    for chunk in c.data_mut().chunks_mut(plane) {
        for (i, v) in chunk.iter_mut().enumerate() {
            if 2 * r * spectral::max_freq(i, n, axes) > n {
                *v = Default::default();
            }
        }
    }
    spectral::idft_axes(&c, axes)
}

/// `y[n] = x[R n]` along every spatial axis, output length `floor(N/R)`.
pub fn subsample<T: Scalar>(x: &Tensor<T>, r: usize, axes: usize) -> Result<Tensor<T>> {
    let n = spatial_len(x, axes)?;
    if r == 0 {
        return Err(Error::resolution("subsampling factor 0"));
    }
    let m = n / r;
    if m == 0 {
        return Err(Error::resolution(format!("subsampling {n} by {r} leaves nothing")));
    }
    let picks: Vec<usize> = (0..m).map(|i| i * r).collect();
    Ok(select_axes(x, axes, n, &picks))
}

fn select_axes<T: Scalar>(x: &Tensor<T>, axes: usize, n: usize, picks: &[usize]) -> Tensor<T> {
    let nd = x.ndim();
    let mut shape = x.shape().to_vec();
    let mut data = x.data().to_vec();
    for a in nd - axes..nd {
        let inner: usize = shape[a + 1..].iter().product();
        let outer: usize = shape[..a].iter().product();
        let mut out = Vec::with_capacity(outer * picks.len() * inner);
        for o in 0..outer {
            for &p in picks {
                let s = (o * n + p) * inner;
                out.extend_from_slice(&data[s..s + inner]);
            }
        }
        data = out;
        shape[a] = picks.len();
    }
    Tensor::new(shape, data).expect("consistent shape")
}

/// Ideal downsampling `Sub_R(h * x)`. When `R | N` this is computed as the
/// spectral band restriction to `N/R`; otherwise through the spatial form.
pub fn ideal_downsample<T: Scalar>(x: &Tensor<T>, r: usize, axes: usize) -> Result<Tensor<T>> {
    let n = spatial_len(x, axes)?;
    if r == 0 || r >= n {
        return Err(Error::resolution(format!("downsampling factor {r} on length {n}")));
    }
    if n % r == 0 {
        fourier_resample(x, n / r, axes)
    } else {
        ideal_downsample_spatial(x, r, axes)
    }
}

/// `subsample(ideal_lowpass(x, R), R)`, the spatial-domain definition.
pub fn ideal_downsample_spatial<T: Scalar>(x: &Tensor<T>, r: usize, axes: usize) -> Result<Tensor<T>> {
    subsample(&ideal_lowpass(x, r, axes)?, r, axes)
}

/// `idft_m(band_crop(dft_N(x), m))` for any `1 <= m <= N`.
pub fn fourier_resample<T: Scalar>(x: &Tensor<T>, m: usize, axes: usize) -> Result<Tensor<T>> {
    let n = spatial_len(x, axes)?;
    if m == 0 || m > n {
        return Err(Error::resolution(format!("cannot resample {n} down to {m}")));
    }
    if m == n {
        return Ok(x.clone());
    }
    let spec = spectral::dft_axes(x, axes)?;
    spectral::idft(&band_crop(&spec, m)?)
}

/// `idft_N(band_pad(dft_m(x), N))`.
pub fn ideal_upsample<T: Scalar>(x: &Tensor<T>, n: usize, axes: usize) -> Result<Tensor<T>> {
    let m = spatial_len(x, axes)?;
    if m > n {
        return Err(Error::resolution(format!("cannot upsample {m} to {n}")));
    }
    if m == n {
        return Ok(x.clone());
    }
    let spec = spectral::dft_axes(x, axes)?;
    spectral::idft(&band_pad(&spec, n)?)
}

/// Anti-aliasing used when producing lower resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AntiAliasMode {
    /// Brick-wall filter; `D_r` is the spectral band restriction.
    Ideal,
    /// Gaussian blur with `sigma = scale * (N/m - 1)` per axis, then point sampling.
    Gaussian { sigma_scale: f64 },
}

impl Default for AntiAliasMode {
    fn default() -> Self {
        AntiAliasMode::Ideal
    }
}

impl AntiAliasMode {
    pub const GAUSSIAN: AntiAliasMode = AntiAliasMode::Gaussian { sigma_scale: 0.5 };

    pub fn tag(self) -> u8 {
        match self {
            AntiAliasMode::Ideal => 0,
            AntiAliasMode::Gaussian { .. } => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(AntiAliasMode::Ideal),
            1 => Some(AntiAliasMode::GAUSSIAN),
            _ => None,
        }
    }

    /// Gaussian width for a rate change `N -> m`, clamped below at `1e-3`.
    pub fn sigma(self, n: usize, m: usize) -> f64 {
        match self {
            AntiAliasMode::Ideal => 0.0,
            AntiAliasMode::Gaussian { sigma_scale } => {
                (sigma_scale * (n as f64 / m as f64 - 1.0)).max(1e-3)
            }
        }
    }

    /// Resamples `x` to resolution `m <= N` under this mode (`m == N` is the identity).
    pub fn downsample<T: Scalar>(self, x: &Tensor<T>, m: usize, axes: usize) -> Result<Tensor<T>> {
        match self {
            AntiAliasMode::Ideal => fourier_resample(x, m, axes),
            AntiAliasMode::Gaussian { .. } => {
                if m == spatial_len(x, axes)? {
                    Ok(x.clone())
                } else {
                    gaussian_downsample(x, m, self, axes)
                }
            }
        }
    }
}

impl std::str::FromStr for AntiAliasMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(AntiAliasMode::Ideal),
            "gaussian" => Ok(AntiAliasMode::GAUSSIAN),
            other => Err(Error::invalid(format!("unknown anti-alias mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for AntiAliasMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AntiAliasMode::Ideal => f.write_str("ideal"),
            AntiAliasMode::Gaussian { .. } => f.write_str("gaussian"),
        }
    }
}

/// Normalized, truncated (radius `ceil(3 sigma)`) Gaussian wrapped onto a
/// circle of length `n`.
pub fn gaussian_kernel(sigma: f64, n: usize) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k = vec![0.0; n];
    for t in -radius..=radius {
        k[t.rem_euclid(n as isize) as usize] += (-(t * t) as f64 / (2.0 * sigma * sigma)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Blur with [`gaussian_kernel`], then read off the blurred signal at the
/// points `t = i N / m`. The signal between samples is its trigonometric
/// interpolant, so integer ratios reduce to plain subsampling of the blurred
/// signal; nothing is band-limited to the target resolution.
pub fn gaussian_downsample<T: Scalar>(
    x: &Tensor<T>,
    m: usize,
    mode: AntiAliasMode,
    axes: usize,
) -> Result<Tensor<T>> {
    let n = spatial_len(x, axes)?;
    if m == 0 || m >= n {
        return Err(Error::resolution(format!("gaussian downsampling {n} to {m}")));
    }
    let sigma = match mode {
        AntiAliasMode::Gaussian { .. } => mode.sigma(n, m),
        AntiAliasMode::Ideal => return Err(Error::invalid("gaussian_downsample needs a gaussian mode")),
    };
    let g = gaussian_kernel(sigma, n);
    // circulant blur matrix B[i, j] = g[i - j]
    let blur: Vec<f64> = (0..n * n).map(|p| g[(p / n + n - p % n) % n]).collect();
    let interp = interpolation_matrix(n, m);
    // combined map: S B, shape m x n
    let mut combined = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..n {
            let s = interp[i * n + p];
            for j in 0..n {
                combined[i * n + j] += s * blur[p * n + j];
            }
        }
    }
    apply_matrix_axes(x, axes, &combined, m, n)
}

/// Rows evaluate the trigonometric interpolant of an `n`-periodic sequence at
/// `t_i = i n / m`; an even-length Nyquist term enters as `cos(pi t)`.
fn interpolation_matrix(n: usize, m: usize) -> Vec<f64> {
    let mut s = vec![0.0; m * n];
    for i in 0..m {
        let t = i as f64 * n as f64 / m as f64;
        for j in 0..n {
            let d = t - j as f64;
            let mut acc = 0.0;
            for q in 0..n {
                let k = freq(q, n);
                acc += if n % 2 == 0 && k == (n / 2) as isize {
                    (PI * d).cos()
                } else {
                    (2.0 * PI * k as f64 * d / n as f64).cos()
                };
            }
            s[i * n + j] = acc / n as f64;
        }
    }
    s
}

/// Applies a dense `rows x cols` real matrix along each trailing spatial axis.
pub(crate) fn apply_matrix_axes<T: Scalar>(
    x: &Tensor<T>,
    axes: usize,
    mat: &[f64],
    rows: usize,
    cols: usize,
) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mat: Vec<T> = mat.iter().map(|&v| T::c(v)).collect();
    let mut shape = x.shape().to_vec();
    let mut data = x.data().to_vec();
    for a in nd - axes..nd {
        if shape[a] != cols {
            return Err(Error::shape(format!("matrix with {cols} columns on axis of {}", shape[a])));
        }
        let inner: usize = shape[a + 1..].iter().product();
        let outer: usize = shape[..a].iter().product();
        let mut out = vec![T::zero(); outer * rows * inner];
        for o in 0..outer {
            for r in 0..rows {
                let d = (o * rows + r) * inner;
                for c in 0..cols {
                    let w = mat[r * cols + c];
                    let s = (o * cols + c) * inner;
                    for j in 0..inner {
                        out[d + j] = out[d + j] + w * data[s + j];
                    }
                }
            }
        }
        data = out;
        shape[a] = rows;
    }
    Tensor::new(shape, data)
}

/// Spectrum-level ideal downsampling, for callers already in the Fourier domain.
pub fn downsample_spectrum<T: Scalar>(x: &Spectrum<T>, m: usize) -> Result<Spectrum<T>> {
    band_crop(x, m)
}

/// Convenience: complex tensor of a real one's spectrum restricted to `m`.
pub fn band_limited_coeffs<T: Scalar>(x: &Tensor<T>, m: usize, axes: usize) -> Result<CTensor<T>> {
    Ok(band_crop(&spectral::dft_axes(x, axes)?, m)?.into_coeffs())
}
