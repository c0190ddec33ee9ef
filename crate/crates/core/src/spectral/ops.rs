//! Graph primitives for the transforms and band maps.

use crate::autodiff::{Graph, NodeId, Primitive};
use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar, Value};

use super::band::{cell_contains, BandMap, NyquistRule};
use super::{check_hermitian, fft_axes, max_freq};

fn plane<T: Scalar>(v: &Value<T>, axes: usize) -> Result<usize> {
    let s = v.shape();
    if s.len() < axes {
        return Err(Error::shape(format!("{axes} spatial axes on {s:?}")));
    }
    Ok(s[s.len() - axes..].iter().product())
}

/// Forward DFT (with `1/N`) over the trailing `axes` axes of a real tensor.
pub struct Dft {
    pub axes: usize,
}

impl<T: Scalar> Primitive<T> for Dft {
    fn name(&self) -> &str {
        "dft"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let n = plane(x[0], self.axes)?;
        let mut c = fft_axes(&x[0].as_real()?.to_complex(), self.axes, false);
        let s = T::one() / T::c(n as f64);
        c.data_mut().iter_mut().for_each(|v| *v = *v * s);
        Ok(c.into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let n = plane(x[0], self.axes)?;
        let s = T::one() / T::c(n as f64);
        let gx = fft_axes(g.as_complex()?, self.axes, true).re().map(|v| v * s);
        Ok(vec![Some(gx.into())])
    }
}

/// Inverse DFT (no factor) of a Hermitian spectrum, producing a real tensor.
pub struct Idft {
    pub axes: usize,
}

impl<T: Scalar> Primitive<T> for Idft {
    fn name(&self) -> &str {
        "idft"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        plane(x[0], self.axes)?;
        let c = x[0].as_complex()?;
        check_hermitian(c, self.axes)?;
        Ok(fft_axes(c, self.axes, true).re().into())
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let gx = fft_axes(&g.as_real()?.to_complex(), self.axes, false);
        Ok(vec![Some(gx.into())])
    }
}

/// Any separable band map (crop, average-crop, pad) as a primitive.
pub struct BandResize {
    pub map: BandMap,
    label: &'static str,
}

impl BandResize {
    pub fn crop(n: usize, m: usize, axes: usize) -> Result<Self> {
        Ok(Self { map: BandMap::crop(n, m, axes, NyquistRule::Sum)?, label: "band-crop" })
    }

    pub fn avg_crop(n: usize, m: usize, axes: usize) -> Result<Self> {
        Ok(Self { map: BandMap::crop(n, m, axes, NyquistRule::Mean)?, label: "band-avg-crop" })
    }

    pub fn pad(m: usize, n: usize, axes: usize) -> Result<Self> {
        Ok(Self { map: BandMap::pad(m, n, axes, NyquistRule::Split)?, label: "band-pad" })
    }

    /// Crop from `n` to `m`, then pad to `target`, as a single map.
    pub fn crop_pad(n: usize, m: usize, target: usize, axes: usize) -> Result<Self> {
        let crop = BandMap::crop(n, m, axes, NyquistRule::Sum)?;
        let pad = BandMap::pad(m, target, axes, NyquistRule::Split)?;
        Ok(Self { map: crop.then(&pad)?, label: "band-crop-pad" })
    }
}

impl<T: Scalar> Primitive<T> for BandResize {
    fn name(&self) -> &str {
        self.label
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        Ok(self.map.apply(x[0].as_complex()?)?.into())
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(self.map.transpose().apply(g.as_complex()?)?.into())])
    }
}

/// Assembles a resolution-`n` spectrum from per-cell spectra: input `i` lives
/// at resolution `cells[i].1`, is zero-padded to `n`, and contributes only its
/// coefficients in the annulus `cells[i]`.
pub struct AnnulusAssemble {
    n: usize,
    axes: usize,
    cells: Vec<(usize, usize)>,
    pads: Vec<BandMap>,
    /// Flat spatial indices (at resolution `n`) owned by each cell.
    owned: Vec<Vec<usize>>,
    /// Size of the top cell's source (may exceed its annulus bound when the
    /// cell spectra are computed at a truncated resolution).
    src_res: Vec<usize>,
}

impl AnnulusAssemble {
    /// `cells[i] = (lo, hi)`; input `i` must have spatial extent `src_res[i]`,
    /// with `hi/2` not exceeding what `src_res[i]` represents.
    pub fn new(n: usize, axes: usize, cells: Vec<(usize, usize)>, src_res: Vec<usize>) -> Result<Self> {
        if cells.len() != src_res.len() || cells.is_empty() {
            return Err(Error::invalid("one source resolution per cell, at least one cell"));
        }
        let plane = n.pow(axes as u32);
        let mut pads = Vec::with_capacity(cells.len());
        let mut owned = Vec::with_capacity(cells.len());
        for (&(lo, hi), &r) in cells.iter().zip(&src_res) {
            if lo >= hi || r > n || hi > r + 1 {
                return Err(Error::resolution(format!(
                    "cell ({lo}, {hi}] from resolution {r} into {n}"
                )));
            }
            pads.push(BandMap::pad(r, n, axes, NyquistRule::Split)?);
            owned.push(
                (0..plane)
                    .filter(|&i| cell_contains(max_freq(i, n, axes), lo, hi))
                    .collect(),
            );
        }
        Ok(Self { n, axes, cells, pads, owned, src_res })
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn sources(&self) -> &[usize] {
        &self.src_res
    }
}

impl<T: Scalar> Primitive<T> for AnnulusAssemble {
    fn name(&self) -> &str {
        "annulus-assemble"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        if x.len() != self.cells.len() {
            return Err(Error::shape(format!("{} inputs for {} cells", x.len(), self.cells.len())));
        }
        let mut shape = x[0].shape().to_vec();
        let nd = shape.len();
        for s in &mut shape[nd - self.axes..] {
            *s = self.n;
        }
        let mut out = CTensor::<T>::zeros(&shape);
        let plane = self.n.pow(self.axes as u32);
        for ((v, pad), owned) in x.iter().zip(&self.pads).zip(&self.owned) {
            let padded = pad.apply(v.as_complex()?)?;
            if padded.shape() != out.shape() {
                return Err(Error::shape(format!("cell input {:?} vs {:?}", v.shape(), shape)));
            }
            for (dst, src) in out.data_mut().chunks_mut(plane).zip(padded.data().chunks(plane)) {
                for &i in owned {
                    dst[i] = src[i];
                }
            }
        }
        Ok(out.into())
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let g = g.as_complex()?;
        let plane = self.n.pow(self.axes as u32);
        let mut grads = Vec::with_capacity(self.cells.len());
        for (pad, owned) in self.pads.iter().zip(&self.owned) {
            let mut masked = CTensor::<T>::zeros(g.shape());
            for (dst, src) in masked.data_mut().chunks_mut(plane).zip(g.data().chunks(plane)) {
                for &i in owned {
                    dst[i] = src[i];
                }
            }
            grads.push(Some(pad.transpose().apply(&masked)?.into()));
        }
        Ok(grads)
    }
}

fn spatial_len<T: Scalar>(g: &Graph<T>, x: NodeId) -> usize {
    *g.value(x).shape().last().expect("non-empty shape")
}

/// Spectral builders.
impl<T: Scalar> Graph<T> {
    pub fn dft(&mut self, x: NodeId, axes: usize) -> Result<NodeId> {
        self.record(Dft { axes }, &[x])
    }

    pub fn idft(&mut self, x: NodeId, axes: usize) -> Result<NodeId> {
        self.record(Idft { axes }, &[x])
    }

    /// Band crop to `m`; a no-op node is not recorded when `m` equals the
    /// current resolution.
    pub fn band_crop(&mut self, x: NodeId, m: usize, axes: usize) -> Result<NodeId> {
        let n = spatial_len(self, x);
        if n == m {
            return Ok(x);
        }
        self.record(BandResize::crop(n, m, axes)?, &[x])
    }

    pub fn band_pad(&mut self, x: NodeId, n: usize, axes: usize) -> Result<NodeId> {
        let m = spatial_len(self, x);
        if n == m {
            return Ok(x);
        }
        self.record(BandResize::pad(m, n, axes)?, &[x])
    }

    /// `band_pad(band_crop(x, m), target)` recorded as one node.
    pub fn band_crop_pad(&mut self, x: NodeId, m: usize, target: usize, axes: usize) -> Result<NodeId> {
        let n = spatial_len(self, x);
        if n == m && m == target {
            return Ok(x);
        }
        self.record(BandResize::crop_pad(n, m, target, axes)?, &[x])
    }
}
