//! Spatially local Fourier kernels.
//!
//! A kernel of locality `l` (odd) is parameterized by an `l x l` Hermitian
//! spectrum `K^l`, stored as `l^2` reals per channel pair: the real DC value
//! followed by `(re, im)` of every bin in the half plane `k1 > 0` or
//! `k1 == 0, k2 > 0`. Expanding `K^l` to resolution `d` gives the `d`-point
//! spectrum of the spatial kernel `idft_l(K^l)` zero-padded to `d`; along one
//! axis
//!
//! ```text
//! K[p] = (1/d) sum_m K^l[m] sum_{n<l} exp(-2 pi i n (p/d - m/l))
//! ```
//!
//! whose inner geometric series has the closed form [`geometric_sum`].
//!
//! Restricting the expanded kernel to a lower resolution averages (rather
//! than sums) the two bins that merge into an even Nyquist bin, and inside a
//! resolution every group of bins that merges at some lower scale-set entry is
//! replaced by its mean ([`NyquistGroups`]). Both steps make the per-bin
//! product with an input commute with band cropping.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, NodeId, Primitive};
use crate::error::{Error, Result};
use crate::spectral::{bin, freq};
use crate::tensor::{CTensor, Scalar, Tensor, Value};

use super::ScaleSet;

/// `sum_{n=0}^{l-1} exp(-i q n)` via `exp(-i q (l-1)/2) sin(l q/2) / sin(q/2)`,
/// with the ratio replaced by its limit `l` for `|q| < 1e-9`.
pub fn geometric_sum(q: f64, l: usize) -> Complex<f64> {
    let lf = l as f64;
    let phase = Complex::from_polar(1.0, -q * (lf - 1.0) / 2.0);
    let ratio = if q.abs() < 1e-9 {
        lf
    } else {
        (lf * q / 2.0).sin() / (q / 2.0).sin()
    };
    phase * ratio
}

/// The same series summed term by term.
pub fn geometric_sum_direct(q: f64, l: usize) -> Complex<f64> {
    (0..l).map(|n| Complex::from_polar(1.0, -q * n as f64)).sum()
}

/// `[d, l]` expansion matrix `E[p, m] = (1/d) G(2 pi (p/d - m/l))` with both
/// frequencies centered.
fn expansion_matrix(l: usize, d: usize) -> Vec<Complex<f64>> {
    let mut e = Vec::with_capacity(d * l);
    for p in 0..d {
        for m in 0..l {
            let q = 2.0 * PI * (freq(p, d) as f64 / d as f64 - freq(m, l) as f64 / l as f64);
            e.push(geometric_sum(q, l) / d as f64);
        }
    }
    e
}

/// Rows of the expansion restricted to resolution `n <= d` (Nyquist rows averaged).
fn restricted_expansion(l: usize, d: usize, n: usize) -> Vec<Complex<f64>> {
    let e = expansion_matrix(l, d);
    if n == d {
        return e;
    }
    let mut out = Vec::with_capacity(n * l);
    for j in 0..n {
        let k = freq(j, n);
        let row = |k: isize| &e[bin(k, d) * l..(bin(k, d) + 1) * l];
        if n % 2 == 0 && k == (n / 2) as isize {
            out.extend(row(k).iter().zip(row(-k)).map(|(a, b)| (a + b) * 0.5));
        } else {
            out.extend_from_slice(row(k));
        }
    }
    out
}

/// Expands `l`-point spectra on the trailing `axes` axes to `d` points.
pub fn expand_local_kernel<T: Scalar>(kl: &CTensor<T>, d: usize, axes: usize) -> Result<CTensor<T>> {
    let nd = kl.ndim();
    if axes == 0 || nd < axes {
        return Err(Error::shape(format!("{axes} axes on {:?}", kl.shape())));
    }
    let l = kl.shape()[nd - 1];
    if kl.shape()[nd - axes..].iter().any(|&s| s != l) {
        return Err(Error::shape(format!("kernel axes must be equal: {:?}", kl.shape())));
    }
    if l > d {
        return Err(Error::resolution(format!("locality {l} exceeds resolution {d}")));
    }
    let e = cast_matrix::<T>(&expansion_matrix(l, d));
    let mut shape = kl.shape().to_vec();
    let mut data = kl.data().to_vec();
    for a in nd - axes..nd {
        let inner: usize = shape[a + 1..].iter().product();
        let outer: usize = shape[..a].iter().product();
        let mut out = vec![Complex::default(); outer * d * inner];
        for o in 0..outer {
            for p in 0..d {
                for m in 0..l {
                    let w = e[p * l + m];
                    let (s, t) = ((o * l + m) * inner, (o * d + p) * inner);
                    for j in 0..inner {
                        out[t + j] = out[t + j] + w * data[s + j];
                    }
                }
            }
        }
        data = out;
        shape[a] = d;
    }
    CTensor::new(shape, data)
}

fn cast_matrix<T: Scalar>(m: &[Complex<f64>]) -> Vec<Complex<T>> {
    m.iter().map(|c| Complex::new(T::c(c.re), T::c(c.im))).collect()
}

/// Groups of bins of an `n x n` grid that merge into one bin when cropping to
/// some even scale-set entry `2h < n`: for ring `h`, a bin `(a, b)` with
/// `max(|a|, |b|) = h` is grouped with its sign flips on the axes where the
/// coordinate has magnitude `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct NyquistGroups {
    pub n: usize,
    pub groups: Vec<Vec<usize>>,
}

impl NyquistGroups {
    pub fn new(n: usize, scales: &ScaleSet) -> Self {
        let mut groups = Vec::new();
        for &r in scales.as_slice() {
            if r % 2 != 0 || r >= n {
                continue;
            }
            let h = (r / 2) as isize;
            for a in -h + 1..=h {
                for b in -h + 1..=h {
                    if a.abs().max(b.abs()) != h {
                        continue;
                    }
                    // canonical representative: positive coordinate on ring axes
                    let flip_a = a.abs() == h;
                    let flip_b = b.abs() == h;
                    let mut members = Vec::with_capacity(4);
                    for sa in if flip_a { vec![h, -h] } else { vec![a] } {
                        for sb in if flip_b { vec![h, -h] } else { vec![b] } {
                            members.push(bin(sa, n) * n + bin(sb, n));
                        }
                    }
                    groups.push(members);
                }
            }
        }
        Self { n, groups }
    }

    /// Replaces every group by its mean, on each `n x n` plane of `x`.
    pub fn average<T: Scalar>(&self, x: &mut [Complex<T>]) {
        let plane = self.n * self.n;
        for chunk in x.chunks_mut(plane) {
            for g in &self.groups {
                let mean = g.iter().map(|&i| chunk[i]).fold(Complex::default(), |a, b| a + b)
                    / T::c(g.len() as f64);
                for &i in g {
                    chunk[i] = mean;
                }
            }
        }
    }
}

/// Learnable local kernel for `c_out x c_in` channel pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFourierKernel<T> {
    pub c_out: usize,
    pub c_in: usize,
    pub l: usize,
    pub d: usize,
    /// `[c_out, c_in, l * l]`.
    pub params: Tensor<T>,
}

impl<T: Scalar> LocalFourierKernel<T> {
    pub fn new(c_out: usize, c_in: usize, l: usize, d: usize, params: Tensor<T>) -> Result<Self> {
        if l % 2 == 0 || l == 0 {
            return Err(Error::invalid(format!("locality must be odd, got {l}")));
        }
        if l > d {
            return Err(Error::resolution(format!("locality {l} exceeds resolution {d}")));
        }
        if params.shape() != [c_out, c_in, l * l] {
            return Err(Error::shape(format!(
                "kernel parameters {:?}, expected {:?}",
                params.shape(),
                [c_out, c_in, l * l]
            )));
        }
        Ok(Self { c_out, c_in, l, d, params })
    }

    /// Random kernel whose expanded coefficients have magnitude about `1/sqrt(c_in)`.
    pub fn random(c_out: usize, c_in: usize, l: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let std = (d * d) as f64 / ((l * l) as f64 * (c_in as f64).sqrt()) / 2f64.sqrt();
        let params = Tensor::from_fn(&[c_out, c_in, l * l], |_| {
            T::c(std * rng.sample::<f64, _>(StandardNormal))
        });
        Self::new(c_out, c_in, l, d, params)
    }

    /// Spatial delta kernel on the diagonal channel pairs (zero elsewhere).
    pub fn delta(channels: usize, l: usize, d: usize) -> Result<Self> {
        let ll = l * l;
        let mut params = Tensor::zeros(&[channels, channels, ll]);
        // K^l = 1/l^2 everywhere: DC and real parts of half-plane bins
        let v = T::one() / T::c(ll as f64);
        for c in 0..channels {
            let base = (c * channels + c) * ll;
            params.data_mut()[base] = v;
            for j in 0..(ll - 1) / 2 {
                params.data_mut()[base + 1 + 2 * j] = v;
            }
        }
        Self::new(channels, channels, l, d, params)
    }

    fn half_plane(l: usize) -> Vec<(isize, isize)> {
        let h = (l / 2) as isize;
        let mut v = Vec::with_capacity((l * l - 1) / 2);
        for a in 0..=h {
            for b in -h..=h {
                if a > 0 || b > 0 {
                    v.push((a, b));
                }
            }
        }
        v
    }

    /// `K^l` as a `[c_out, c_in, l, l]` Hermitian spectrum.
    pub fn spectral(&self) -> CTensor<T> {
        let (l, ll) = (self.l, self.l * self.l);
        let half = Self::half_plane(l);
        let mut out = CTensor::zeros(&[self.c_out, self.c_in, l, l]);
        for (p, chunk) in self.params.data().chunks(ll).enumerate() {
            let dst = &mut out.data_mut()[p * ll..(p + 1) * ll];
            dst[0] = Complex::new(chunk[0], T::zero());
            for (j, &(a, b)) in half.iter().enumerate() {
                let z = Complex::new(chunk[1 + 2 * j], chunk[2 + 2 * j]);
                dst[bin(a, l) * l + bin(b, l)] = z;
                dst[bin(-a, l) * l + bin(-b, l)] = z.conj();
            }
        }
        out
    }

    /// Adjoint of [`Self::spectral`] (gradient on `K^l` to gradient on parameters).
    fn spectral_adjoint(&self, g: &CTensor<T>) -> Tensor<T> {
        let (l, ll) = (self.l, self.l * self.l);
        let half = Self::half_plane(l);
        let mut out = Tensor::zeros(self.params.shape());
        for (p, chunk) in g.data().chunks(ll).enumerate() {
            let dst = &mut out.data_mut()[p * ll..(p + 1) * ll];
            dst[0] = chunk[0].re;
            for (j, &(a, b)) in half.iter().enumerate() {
                let pos = chunk[bin(a, l) * l + bin(b, l)];
                let neg = chunk[bin(-a, l) * l + bin(-b, l)];
                dst[1 + 2 * j] = pos.re + neg.re;
                dst[2 + 2 * j] = pos.im - neg.im;
            }
        }
        out
    }

    /// Full spectrum at the nominal resolution `d`, `[c_out, c_in, d, d]`.
    pub fn expand(&self) -> CTensor<T> {
        expand_local_kernel(&self.spectral(), self.d, 2).expect("validated at construction")
    }

    /// Kernel used by the convolution at resolution `n <= d`.
    pub fn effective(&self, n: usize, scales: &ScaleSet) -> Result<CTensor<T>> {
        if n > self.d || n == 0 {
            return Err(Error::resolution(format!("kernel of size {} at resolution {n}", self.d)));
        }
        let (l, ll) = (self.l, self.l * self.l);
        let e = cast_matrix::<T>(&restricted_expansion(l, self.d, n));
        let kl = self.spectral();
        let groups = NyquistGroups::new(n, scales);
        let mut out = CTensor::zeros(&[self.c_out, self.c_in, n, n]);
        let mut tmp = vec![Complex::<T>::default(); n * l];
        for (src, dst) in kl.data().chunks(ll).zip(out.data_mut().chunks_mut(n * n)) {
            // tmp = E K^l  (n x l)
            for p in 0..n {
                for b in 0..l {
                    let mut acc = Complex::default();
                    for a in 0..l {
                        acc = acc + e[p * l + a] * src[a * l + b];
                    }
                    tmp[p * l + b] = acc;
                }
            }
            // dst = tmp E^T  (n x n)
            for p in 0..n {
                for q in 0..n {
                    let mut acc = Complex::default();
                    for b in 0..l {
                        acc = acc + tmp[p * l + b] * e[q * l + b];
                    }
                    dst[p * n + q] = acc;
                }
            }
            groups.average(dst);
        }
        Ok(out)
    }

    /// Gradient on the parameters from a gradient on [`Self::effective`]`(n)`.
    pub fn pullback(&self, grad: &CTensor<T>, n: usize, scales: &ScaleSet) -> Result<Tensor<T>> {
        if grad.shape() != [self.c_out, self.c_in, n, n] {
            return Err(Error::shape(format!(
                "kernel gradient {:?} at resolution {n}",
                grad.shape()
            )));
        }
        let (l, ll) = (self.l, self.l * self.l);
        let e = cast_matrix::<T>(&restricted_expansion(l, self.d, n));
        let groups = NyquistGroups::new(n, scales);
        let mut gkl = CTensor::zeros(&[self.c_out, self.c_in, l, l]);
        let mut g = vec![Complex::<T>::default(); n * n];
        let mut tmp = vec![Complex::<T>::default(); l * n];
        for (src, dst) in grad.data().chunks(n * n).zip(gkl.data_mut().chunks_mut(ll)) {
            g.copy_from_slice(src);
            groups.average(&mut g);
            // tmp = E^H G  (l x n)
            for a in 0..l {
                for q in 0..n {
                    let mut acc = Complex::default();
                    for p in 0..n {
                        acc = acc + e[p * l + a].conj() * g[p * n + q];
                    }
                    tmp[a * n + q] = acc;
                }
            }
            // dst = tmp conj(E)  (l x l)
            for a in 0..l {
                for b in 0..l {
                    let mut acc = Complex::default();
                    for q in 0..n {
                        acc = acc + tmp[a * n + q] * e[q * l + b].conj();
                    }
                    dst[a * l + b] = acc;
                }
            }
        }
        Ok(self.spectral_adjoint(&gkl))
    }

    pub fn with_params(&self, params: Tensor<T>) -> Result<Self> {
        Self::new(self.c_out, self.c_in, self.l, self.d, params)
    }
}

/// Parameters-to-effective-kernel map as a graph primitive. Input: the
/// `[c_out, c_in, l*l]` parameter tensor; output: the `[c_out, c_in, n, n]`
/// kernel at resolution `n`.
pub struct KernelMap<T> {
    pub template: LocalFourierKernel<T>,
    pub n: usize,
    pub scales: ScaleSet,
}

impl<T: Scalar> Primitive<T> for KernelMap<T> {
    fn name(&self) -> &str {
        "kernel-map"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let k = self.template.with_params(x[0].as_real()?.clone())?;
        Ok(k.effective(self.n, &self.scales)?.into())
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(self.template.pullback(g.as_complex()?, self.n, &self.scales)?.into())])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn kernel_map(&mut self, params: NodeId, map: KernelMap<T>) -> Result<NodeId> {
        self.record(map, &[params])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_series_near_zero() {
        for &(q, l) in &[(0.0, 5), (3e-10, 11), (-5e-10, 32), (0.7, 7), (-2.9, 3)] {
            let diff = (geometric_sum(q, l) - geometric_sum_direct(q, l)).norm();
            assert!(diff < 1e-12, "q={q} l={l} diff={diff}");
        }
    }

    #[test]
    fn equal_grids_collapse_to_identity() {
        let e = expansion_matrix(7, 7);
        for p in 0..7 {
            for m in 0..7 {
                let expect = if p == m { 1.0 } else { 0.0 };
                assert!((e[p * 7 + m] - Complex::new(expect, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_spectrum_expands_to_flat_spectrum() {
        let kl = CTensor::<f64>::from_fn(&[5], |_| Complex::new(0.2, 0.0));
        let k = expand_local_kernel(&kl, 12, 1).unwrap();
        for v in k.data() {
            assert!((v - Complex::new(1.0 / 12.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn parameter_layout_is_hermitian() {
        let mut rng = rand::thread_rng();
        let k = LocalFourierKernel::<f64>::random(2, 3, 5, 12, &mut rng).unwrap();
        let s = k.spectral();
        assert!(crate::spectral::hermitian_asymmetry(&s, 2) == 0.0);
        assert!(LocalFourierKernel::<f64>::random(1, 1, 4, 12, &mut rng).is_err());
    }

    #[test]
    fn groups_cover_rings_of_even_entries_only() {
        let r = ScaleSet::new(vec![3, 4, 6]).unwrap();
        let g = NyquistGroups::new(6, &r);
        // ring 2: 4 bins per side merge pairwise except corners (groups of 4)
        let sizes: Vec<usize> = g.groups.iter().map(|m| m.len()).collect();
        assert!(sizes.iter().all(|&s| s == 2 || s == 4));
        assert_eq!(sizes.iter().filter(|&&s| s == 4).count(), 1);
        assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 6);
    }
}
