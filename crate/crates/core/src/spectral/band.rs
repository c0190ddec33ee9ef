//! Band crop / pad as sparse per-axis coefficient maps.
//!
//! Every band operation here is linear and separable, so it is stored as a
//! list of `(dst, src, weight)` triples per axis. The transpose of such a map
//! is its adjoint on the real inner product, which is what the graph
//! primitives use for their backward rules.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar};

use super::{bin, freq, max_freq, Spectrum};

/// How the `+m/2` / `-m/2` pair of an even band is handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NyquistRule {
    /// Crop: the output Nyquist coefficient is the sum of both source bins
    /// (aliasing of ideal resampling).
    Sum,
    /// Crop: the output Nyquist coefficient is the mean of both source bins.
    Mean,
    /// Pad: the source Nyquist coefficient is split in half to `+-m/2`.
    Split,
    /// Pad: the source Nyquist coefficient is copied to both `+-m/2`.
    Copy,
}

/// Linear map between two lengths of one frequency axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisMap {
    pub n_src: usize,
    pub n_dst: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl AxisMap {
    pub fn identity(n: usize) -> Self {
        Self {
            n_src: n,
            n_dst: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// Restriction of an `n`-point axis to `m` coefficients.
    pub fn crop(n: usize, m: usize, rule: NyquistRule) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::resolution(format!("cannot crop {n} to {m}")));
        }
        let w = match rule {
            NyquistRule::Sum => 1.0,
            NyquistRule::Mean => 0.5,
            _ => return Err(Error::invalid(format!("{rule:?} is a pad rule"))),
        };
        let mut entries = Vec::with_capacity(m + 1);
        for j in 0..m {
            let k = freq(j, m);
            if m % 2 == 0 && m < n && k == (m / 2) as isize {
                entries.push((j, bin(k, n), w));
                entries.push((j, bin(-k, n), w));
            } else {
                entries.push((j, bin(k, n), 1.0));
            }
        }
        Ok(Self { n_src: n, n_dst: m, entries })
    }

    /// Zero-padding of an `m`-point axis to `n` coefficients.
    pub fn pad(m: usize, n: usize, rule: NyquistRule) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::resolution(format!("cannot pad {m} to {n}")));
        }
        let w = match rule {
            NyquistRule::Split => 0.5,
            NyquistRule::Copy => 1.0,
            _ => return Err(Error::invalid(format!("{rule:?} is a crop rule"))),
        };
        let mut entries = Vec::with_capacity(m + 1);
        for i in 0..m {
            let k = freq(i, m);
            if m % 2 == 0 && m < n && k == (m / 2) as isize {
                entries.push((bin(k, n), i, w));
                entries.push((bin(-k, n), i, w));
            } else {
                entries.push((bin(k, n), i, 1.0));
            }
        }
        Ok(Self { n_src: m, n_dst: n, entries })
    }

    pub fn transpose(&self) -> Self {
        Self {
            n_src: self.n_dst,
            n_dst: self.n_src,
            entries: self.entries.iter().map(|&(d, s, w)| (s, d, w)).collect(),
        }
    }

    /// `next ∘ self`: apply `self`, then `next`. Duplicate entries are merged.
    pub fn then(&self, next: &AxisMap) -> Result<Self> {
        if next.n_src != self.n_dst {
            return Err(Error::shape(format!("cannot chain a map to {} with one from {}", self.n_dst, next.n_src)));
        }
        let mut acc = std::collections::BTreeMap::new();
        for &(d2, s2, w2) in &next.entries {
            for &(_, s1, w1) in self.entries.iter().filter(|e| e.0 == s2) {
                *acc.entry((d2, s1)).or_insert(0.0) += w1 * w2;
            }
        }
        Ok(Self {
            n_src: self.n_src,
            n_dst: next.n_dst,
            entries: acc.into_iter().filter(|e| e.1 != 0.0).map(|((d, s), w)| (d, s, w)).collect(),
        })
    }

    fn typed<T: Scalar>(&self) -> Vec<(usize, usize, T)> {
        self.entries.iter().map(|&(d, s, w)| (d, s, T::c(w))).collect()
    }

    fn apply_axis<T: Scalar>(
        &self,
        src: &[Complex<T>],
        shape: &[usize],
        axis: usize,
    ) -> Result<(Vec<Complex<T>>, Vec<usize>)> {
        if shape[axis] != self.n_src {
            return Err(Error::shape(format!(
                "axis {axis} of {shape:?} has length {}, map expects {}",
                shape[axis], self.n_src
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (ns, nd) = (self.n_src * inner, self.n_dst * inner);
        let mut out = vec![Complex::default(); outer * nd];
        let entries = self.typed::<T>();
        for (sb, db) in src.chunks_exact(ns).zip(out.chunks_exact_mut(nd)) {
            for &(d, s, w) in &entries {
                let sr = &sb[s * inner..(s + 1) * inner];
                let dr = &mut db[d * inner..(d + 1) * inner];
                for (o, &v) in dr.iter_mut().zip(sr) {
                    *o = *o + v * w;
                }
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = self.n_dst;
        Ok((out, new_shape))
    }

    /// Both trailing axes at once, without an intermediate buffer.
    fn apply_planes<T: Scalar>(&self, src: &[Complex<T>], planes: usize) -> Vec<Complex<T>> {
        let (ns, nd) = (self.n_src, self.n_dst);
        let entries = self.typed::<T>();
        let mut out = vec![Complex::default(); planes * nd * nd];
        for (sp, dp) in src.chunks_exact(ns * ns).zip(out.chunks_exact_mut(nd * nd)) {
            for &(d1, s1, w1) in &entries {
                let sr = &sp[s1 * ns..(s1 + 1) * ns];
                let dr = &mut dp[d1 * nd..(d1 + 1) * nd];
                for &(d2, s2, w2) in &entries {
                    dr[d2] = dr[d2] + sr[s2] * (w1 * w2);
                }
            }
        }
        out
    }
}

/// The same [`AxisMap`] applied to each of the trailing `axes` axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMap {
    pub map: AxisMap,
    pub axes: usize,
}

impl BandMap {
    pub fn apply<T: Scalar>(&self, x: &CTensor<T>) -> Result<CTensor<T>> {
        let nd = x.ndim();
        if nd < self.axes {
            return Err(Error::shape(format!("{} spatial axes on {:?}", self.axes, x.shape())));
        }
        if self.axes == 2 && x.shape()[nd - 1] == self.map.n_src && x.shape()[nd - 2] == self.map.n_src {
            let mut shape = x.shape().to_vec();
            let planes = x.outer(2);
            shape[nd - 2] = self.map.n_dst;
            shape[nd - 1] = self.map.n_dst;
            return CTensor::new(shape, self.map.apply_planes(x.data(), planes));
        }
        let mut data = x.data().to_vec();
        let mut shape = x.shape().to_vec();
        for a in nd - self.axes..nd {
            let (d, s) = self.map.apply_axis(&data, &shape, a)?;
            data = d;
            shape = s;
        }
        CTensor::new(shape, data)
    }

    pub fn transpose(&self) -> Self {
        Self {
            map: self.map.transpose(),
            axes: self.axes,
        }
    }

    /// `next ∘ self` on the same axes.
    pub fn then(&self, next: &BandMap) -> Result<Self> {
        if self.axes != next.axes {
            return Err(Error::shape("band maps act on different axis counts"));
        }
        Ok(Self { map: self.map.then(&next.map)?, axes: self.axes })
    }

    pub fn crop(n: usize, m: usize, axes: usize, rule: NyquistRule) -> Result<Self> {
        Ok(Self { map: AxisMap::crop(n, m, rule)?, axes })
    }

    pub fn pad(m: usize, n: usize, axes: usize, rule: NyquistRule) -> Result<Self> {
        Ok(Self { map: AxisMap::pad(m, n, rule)?, axes })
    }
}

fn square_len<T: Scalar>(x: &Spectrum<T>) -> Result<usize> {
    let dims = x.dims();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::shape(format!("band operations need equal extents, got {dims:?}")));
    }
    Ok(dims[0])
}

fn resize<T: Scalar>(x: &Spectrum<T>, map: BandMap) -> Result<Spectrum<T>> {
    Spectrum::new(map.apply(x.coeffs())?, x.axes())
}

/// Spectrum of the ideally resampled signal at resolution `m <= N`.
pub fn band_crop<T: Scalar>(x: &Spectrum<T>, m: usize) -> Result<Spectrum<T>> {
    let n = square_len(x)?;
    resize(x, BandMap::crop(n, m, x.axes(), NyquistRule::Sum)?)
}

/// Like [`band_crop`] but the Nyquist coefficient is the mean of the
/// merging bins. This is the restriction rule for convolution kernels.
pub fn band_avg_crop<T: Scalar>(x: &Spectrum<T>, m: usize) -> Result<Spectrum<T>> {
    let n = square_len(x)?;
    resize(x, BandMap::crop(n, m, x.axes(), NyquistRule::Mean)?)
}

/// Zero-pads an `m`-point spectrum to `N`, splitting an even Nyquist bin so
/// that `band_crop(band_pad(X, N), m) == X`.
pub fn band_pad<T: Scalar>(x: &Spectrum<T>, n: usize) -> Result<Spectrum<T>> {
    let m = square_len(x)?;
    resize(x, BandMap::pad(m, n, x.axes(), NyquistRule::Split)?)
}

/// Whether max-norm frequency `k` lies in the cell `(lo, hi]` of resolutions,
/// i.e. `lo/2 < k <= hi/2`. `lo == 0` makes the cell the full band `k <= hi/2`.
#[inline]
pub fn cell_contains(k: usize, lo: usize, hi: usize) -> bool {
    2 * k <= hi && (lo == 0 || 2 * k > lo)
}

/// Coefficients of one annulus, addressed by flat spatial index.
#[derive(Clone, Debug, PartialEq)]
pub struct Annulus<T> {
    pub indices: Vec<usize>,
    /// `[channels, indices.len()]`, row-major.
    pub values: Vec<Complex<T>>,
}

/// Selects the coefficients with `lo/2 < |k| <= hi/2` (max-norm in 2-D).
/// `lo == 0` selects the whole band including DC.
pub fn annulus<T: Scalar>(x: &Spectrum<T>, lo: usize, hi: usize) -> Result<Annulus<T>> {
    let n = square_len(x)?;
    if lo >= hi || hi > n {
        return Err(Error::resolution(format!("annulus ({lo}, {hi}] at resolution {n}")));
    }
    let plane = n.pow(x.axes() as u32);
    let indices: Vec<usize> = (0..plane)
        .filter(|&i| cell_contains(max_freq(i, n, x.axes()), lo, hi))
        .collect();
    let values = x
        .coeffs()
        .data()
        .chunks(plane)
        .flat_map(|ch| indices.iter().map(move |&i| ch[i]))
        .collect();
    Ok(Annulus { indices, values })
}
