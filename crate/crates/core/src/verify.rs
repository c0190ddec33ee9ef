//! Scale-consistency and equivariance metrics, the band-locality probe, and
//! brute-force reference implementations that share no code with the fast
//! paths they check.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::{FnMap, ScaleSet, SpectralMap};
use crate::model::{cross_entropy, EquiNetwork, LabeledImage};
use crate::parallel::par_map;
use crate::resample::AntiAliasMode;
use crate::spectral::{self, freq};
use crate::tensor::{CTensor, Scalar, Tensor};

/// Error statistics for one target resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleError {
    pub resolution: usize,
    pub mean: f64,
    pub max: f64,
    pub terms: usize,
}

/// One band-locality probe outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub layer: String,
    /// Band edge, given as the resolution whose band is compared.
    pub edge: usize,
    pub deviation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquiReport {
    pub mode: String,
    pub per_scale: Vec<ScaleError>,
    /// Sum of relative errors over `samples x scales`, divided by the number
    /// of terms that had a nonzero denominator.
    pub mean: f64,
    pub max: f64,
    pub samples: usize,
    /// Terms dropped because `g(D_r(x))` was exactly zero.
    pub skipped: usize,
    pub tolerance: f64,
    pub probes: Vec<ProbeResult>,
}

impl EquiReport {
    pub fn equivariance_passed(&self) -> bool {
        self.max <= self.tolerance
    }

    pub fn probes_passed(&self) -> bool {
        self.probes.iter().all(|p| p.passed)
    }

    pub fn passed(&self) -> bool {
        self.equivariance_passed() && self.probes_passed()
    }
}

/// Relative squared error `||a - b||^2 / ||a||^2`; `None` when `a` is zero.
pub fn relative_sq_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Option<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let den: f64 = a.data().iter().map(|v| v.f64().powi(2)).sum();
    if den == 0.0 {
        return Ok(None);
    }
    let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum();
    Ok(Some(num / den))
}

/// Mean over inputs and `r in scales` of
/// `||g(D_r x) - D_r' g(x)||^2 / ||g(D_r x)||^2`.
///
/// `g` maps an `[n, n]` image to spatial features `[C, n', n']`; `D_r'`
/// resamples features to the resolution `g` produces from an `r`-sized input.
pub fn equivariance_error<T, G>(g: &G, inputs: &[Tensor<T>], scales: &ScaleSet, mode: AntiAliasMode, workers: usize) -> Result<EquiReport>
where
    T: Scalar,
    G: Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
{
    if let Some(x) = inputs.iter().find(|x| x.shape()[0] < scales.max()) {
        return Err(Error::resolution(format!("input {:?} below the largest scale {}", x.shape(), scales.max())));
    }
    let per_input = par_map(inputs, workers, |x| -> Result<Vec<Option<f64>>> {
        let gx = g(x)?;
        let mut out = Vec::with_capacity(scales.len());
        for &r in scales.as_slice() {
            let lhs = g(&mode.downsample(x, r, 2)?)?;
            let rp = *lhs.shape().last().expect("spatial output");
            let rhs = mode.downsample(&gx, rp, 2)?;
            out.push(relative_sq_error(&lhs, &rhs)?);
        }
        Ok(out)
    });
    let mut per_scale: Vec<ScaleError> = scales
        .as_slice()
        .iter()
        .map(|&r| ScaleError { resolution: r, mean: 0.0, max: 0.0, terms: 0 })
        .collect();
    let (mut sum, mut max, mut terms, mut skipped) = (0.0, 0.0f64, 0usize, 0usize);
    for row in per_input {
        for (s, e) in per_scale.iter_mut().zip(row?) {
            match e {
                Some(e) => {
                    s.mean += e;
                    s.max = s.max.max(e);
                    s.terms += 1;
                    sum += e;
                    max = max.max(e);
                    terms += 1;
                }
                None => skipped += 1,
            }
        }
    }
    for s in &mut per_scale {
        if s.terms > 0 {
            s.mean /= s.terms as f64;
        }
    }
    Ok(EquiReport {
        mode: mode.to_string(),
        per_scale,
        mean: if terms > 0 { sum / terms as f64 } else { 0.0 },
        max,
        samples: inputs.len(),
        skipped,
        tolerance: default_tolerance::<T>(),
        probes: Vec::new(),
    })
}

/// Pass threshold for ideal-mode equivariance.
pub fn default_tolerance<T: Scalar>() -> f64 {
    if T::BYTES == 8 {
        1e-10
    } else {
        1e-4
    }
}

/// Uniform `[0, 1)` images, the usual random inputs for the metric.
pub fn random_images<T: Scalar>(count: usize, n: usize, rng: &mut impl Rng) -> Vec<Tensor<T>> {
    (0..count).map(|_| Tensor::from_fn(&[n, n], |_| T::c(rng.gen::<f64>()))).collect()
}

/// End-to-end metric of a network on images at its top resolution.
pub fn network_equivariance<T: Scalar>(net: &EquiNetwork<T>, inputs: &[Tensor<T>], mode: AntiAliasMode, workers: usize) -> Result<EquiReport> {
    let mut resolutions: BTreeSet<usize> = net.config.scales.as_slice().iter().copied().collect();
    resolutions.extend(inputs.iter().map(|x| x.shape()[0]));
    let kernels = resolutions
        .into_iter()
        .map(|n| Ok((n, net.kernels_at(n)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    let g = |x: &Tensor<T>| {
        let ks = kernels.get(&x.shape()[0]).ok_or_else(|| Error::resolution(format!("no kernels for {:?}", x.shape())))?;
        spectral::idft_axes(&net.forward_features_with(x, ks)?, 2)
    };
    equivariance_error(&g, inputs, &net.config.scales, mode, workers)
}

/// Scale-consistency rate with `D_r` realized explicitly. `logits(x)` is the model's
/// prediction for an image at its own resolution. Averages exactly over
/// every `r in scales` below `dim(x)`; samples with no such `r` are left out.
/// NaN when no sample qualifies.
pub fn scale_consistency<T, F>(logits: &F, data: &[LabeledImage<T>], scales: &ScaleSet, mode: AntiAliasMode, workers: usize) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Vec<f64>> + Sync,
{
    let rates = par_map(data, workers, |s| -> Result<Option<f64>> {
        let n = s.resolution();
        let lower: Vec<usize> = scales.as_slice().iter().copied().filter(|&r| r < n).collect();
        if lower.is_empty() {
            return Ok(None);
        }
        let ce = cross_entropy(&logits(&s.image)?, s.label);
        let mut hits = 0;
        for &r in &lower {
            let d = mode.downsample(&s.image, r, 2)?;
            hits += (ce <= cross_entropy(&logits(&d)?, s.label)) as usize;
        }
        Ok(Some(hits as f64 / lower.len() as f64))
    });
    let (mut sum, mut count) = (0.0, 0usize);
    for r in rates {
        if let Some(r) = r? {
            sum += r;
            count += 1;
        }
    }
    Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
}

/// Random real `[c, n, n]` image's spectrum with entries in a unit box.
fn random_spectrum<T: Scalar>(c: usize, n: usize, rng: &mut impl Rng) -> Result<CTensor<T>> {
    let x = Tensor::from_fn(&[c, n, n], |_| T::c(rng.gen_range(-1.0..1.0)));
    Ok(spectral::dft_axes(&x, 2)?.into_coeffs())
}

fn in_band(flat: usize, n: usize, edge2: f64) -> bool {
    let (p, q) = (freq(flat / n % n, n), freq(flat % n, n));
    2.0 * p.unsigned_abs().max(q.unsigned_abs()) as f64 <= edge2
}

/// Largest change of `layer`'s output in the band of resolution `m` (scaled
/// by the layer's ratio) when the input is perturbed only outside that band.
/// The perturbation has 10% of the input's norm.
pub fn claim1_probe<T: Scalar>(
    layer: &dyn SpectralMap<T>,
    channels: usize,
    n: usize,
    m: usize,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if m >= n {
        return Err(Error::resolution(format!("band edge {m} must lie below {n}")));
    }
    let a = layer.ratio() as f64;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_spectrum::<T>(channels, n, rng)?;
        let mut dx = random_spectrum::<T>(channels, n, rng)?;
        let plane = n * n;
        for (i, v) in dx.data_mut().iter_mut().enumerate() {
            if in_band(i % plane, n, m as f64) {
                *v = Complex::default();
            }
        }
        let s = 0.1 * x.norm_sqr().f64().sqrt() / dx.norm_sqr().f64().sqrt().max(f64::MIN_POSITIVE);
        let xp = CTensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(dx.data()).map(|(u, v)| *u + *v * T::c(s)).collect(),
        )?;
        let (y0, y1) = (layer.apply(&x)?, layer.apply(&xp)?);
        let no = *y0.shape().last().expect("spatial output");
        let po = no * no;
        for (i, (u, v)) in y0.data().iter().zip(y1.data()).enumerate() {
            if in_band(i % po, no, m as f64 / a) {
                worst = worst.max((*u - *v).norm().f64());
            }
        }
    }
    Ok(worst)
}

/// Pointwise ReLU on the full-resolution reconstruction: not band-local,
/// used as a negative control for [`claim1_probe`].
pub fn spatial_relu<T: Scalar>() -> FnMap<impl Fn(&mut Graph<T>, crate::autodiff::NodeId) -> Result<crate::autodiff::NodeId>> {
    FnMap {
        name: "spatial-relu".into(),
        f: |g: &mut Graph<T>, x| {
            let s = g.idft(x, 2)?;
            let r = g.relu(s)?;
            g.dft(r, 2)
        },
    }
}

/// Literal `O(N^2)` transform with the `1/N` factor.
pub fn naive_dft(x: &[f64]) -> Vec<Complex<f64>> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex::new(0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                // reduce k*j mod n first so the angle stays small
                let t = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                acc += Complex::new(t.cos(), t.sin()) * v;
            }
            acc / n as f64
        })
        .collect()
}

/// Literal inverse (no factor) of a complex spectrum; returns the real part.
pub fn naive_idft(x: &[Complex<f64>]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|j| {
            let mut acc = Complex::new(0.0, 0.0);
            for (k, v) in x.iter().enumerate() {
                let t = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                acc += Complex::new(t.cos(), t.sin()) * v;
            }
            acc.re
        })
        .collect()
}

/// `y[i] = sum_j x[j] k[(i - j) mod N]`.
pub fn direct_circular_conv(x: &[f64], k: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, k.len(), "signal and kernel lengths differ");
    (0..n)
        .map(|i| (0..n).map(|j| x[j] * k[(i + n - j) % n]).sum())
        .collect()
}

/// Ideal low-pass (all `|k| <= M/2`, both Nyquist bins included when `M` is
/// even) by direct circular convolution, then keep every `r`-th sample.
/// `M = N / r`.
pub fn spatial_ideal_downsample(x: &[f64], r: usize) -> Vec<f64> {
    let n = x.len();
    assert!(r > 0 && n % r == 0, "factor must divide the length");
    let m = n / r;
    let h: Vec<f64> = (0..n)
        .map(|t| {
            let mut acc = 1.0;
            for k in 1..=m / 2 {
                acc += 2.0 * (2.0 * PI * ((k * t) % n) as f64 / n as f64).cos();
            }
            acc / n as f64
        })
        .collect();
    let y = direct_circular_conv(x, &h);
    (0..m).map(|i| y[i * r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_only_dc() {
        let x = naive_dft(&[2.5; 7]);
        assert!((x[0].re - 2.5).abs() < 1e-15);
        assert!(x[1..].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn delta_convolution_is_identity() {
        let x = [1.0, -2.0, 3.5, 0.25, 9.0];
        let mut d = [0.0; 5];
        d[0] = 1.0;
        assert_eq!(direct_circular_conv(&x, &d), x.to_vec());
    }

    #[test]
    fn naive_roundtrip() {
        let x = [0.3, -1.0, 2.0, 0.0, 5.5, -0.7];
        let back = naive_idft(&naive_dft(&x));
        for (a, b) in x.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_excludes_samples_without_lower_rows() {
        assert_eq!(consistency_rate_check(&[1.0]), None);
        assert_eq!(consistency_rate_check(&[1.0, 1.0, 1.0]), Some(1.0));
        assert_eq!(consistency_rate_check(&[1.0, 2.0, 1.5]), Some(0.5));
    }

    fn consistency_rate_check(ce: &[f64]) -> Option<f64> {
        crate::model::consistency_rate(ce)
    }
}
