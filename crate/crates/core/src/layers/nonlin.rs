//! Banded pointwise nonlinearity and pooling.
//!
//! Both layers split the output spectrum into the cells of the scale set.
//! Cell `(lo, hi]` is computed from the signal reconstructed at resolution
//! `hi` only, so each output coefficient depends on inputs of equal or lower
//! frequency.
//!
//! A cell whose upper edge `m` is even and below the working resolution owns
//! the bins that merge into the Nyquist bin at `m`. The cell output only
//! determines their sum, which is split evenly; the part of the input that
//! sums to zero over each merging group is passed through unchanged
//! ([`GroupResidual`]), so an identity activation reproduces its input.

use crate::autodiff::{Graph, NodeId, PoolKind, Primitive};
use crate::error::{Error, Result};
use crate::spectral::AnnulusAssemble;
use crate::tensor::{Scalar, Value};

use super::{resolution_of, NyquistGroups, PoolSpec, ScaleSet, SpectralMap};

/// Pointwise map applied in the spatial domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct EquiNonlinearity {
    pub scales: ScaleSet,
    pub activation: Activation,
    /// Instance-normalize each band-limited reconstruction before the activation.
    pub normalize: bool,
}

impl EquiNonlinearity {
    pub fn new(scales: ScaleSet) -> Self {
        Self { scales, activation: Activation::Relu, normalize: true }
    }
}

impl<T: Scalar> SpectralMap<T> for EquiNonlinearity {
    fn name(&self) -> String {
        format!(
            "equi-nonlinearity {:?}{}",
            self.activation,
            if self.normalize { "+norm" } else { "" }
        )
    }
    fn record(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let n = resolution_of(g, x)?;
        let cells = self.scales.cells(n)?;
        let mut parts = Vec::with_capacity(cells.len());
        for &(_, m) in &cells {
            let band = g.band_crop(x, m, 2)?;
            let mut s = g.idft(band, 2)?;
            if self.normalize {
                s = g.instance_norm(s, T::c(NORM_EPS))?;
            }
            if self.activation == Activation::Relu {
                s = g.relu(s)?;
            }
            parts.push(g.dft(s, 2)?);
        }
        let res = cells.iter().map(|c| c.1).collect();
        let y = g.record(AnnulusAssemble::new(n, 2, cells, res)?, &parts)?;
        let groups = NyquistGroups::new(n, &self.scales);
        if groups.groups.is_empty() {
            return Ok(y);
        }
        let r = g.record(GroupResidual(groups), &[x])?;
        g.add(y, r)
    }
}

/// `x - P x`, with `P` the mean over each merging group: the component of a
/// spectrum that band cropping annihilates. Self-adjoint.
pub struct GroupResidual(pub NyquistGroups);

impl GroupResidual {
    fn apply<T: Scalar>(&self, v: &Value<T>) -> Result<Value<T>> {
        let x = v.as_complex()?;
        let mut out = x.clone();
        self.0.average(out.data_mut());
        let mut r = x.clone();
        for (a, b) in r.data_mut().iter_mut().zip(out.data()) {
            *a = *a - *b;
        }
        Ok(r.into())
    }
}

impl<T: Scalar> Primitive<T> for GroupResidual {
    fn name(&self) -> &str {
        "group-residual"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        self.apply(x[0])
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(self.apply(g)?)])
    }
}

/// Pooling with window `w`: output resolution `floor(n / w)`. Equivariant at
/// the scale-set entries divisible by `w`.
#[derive(Clone, Debug)]
pub struct EquiPool {
    pub spec: PoolSpec,
    pub scales: ScaleSet,
}

impl EquiPool {
    /// Cells `(lo, hi]` at the input resolution: entries `<= n` divisible by
    /// `w`, then `n` itself.
    pub fn cells(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        let w = self.spec.window;
        if w == 0 || n / w == 0 {
            return Err(Error::resolution(format!("pool window {w} at resolution {n}")));
        }
        let mut edges: Vec<usize> = self
            .scales
            .up_to(n)
            .into_iter()
            .filter(|&r| r % w == 0)
            .collect();
        if edges.last() != Some(&n) {
            edges.push(n);
        }
        let mut cells = Vec::new();
        let mut prev = 0;
        for e in edges {
            // compare in output units
            if prev == 0 || (e / w) / 2 > (prev / w) / 2 {
                cells.push((prev, e));
            }
            prev = e;
        }
        Ok(cells)
    }
}

impl<T: Scalar> SpectralMap<T> for EquiPool {
    fn name(&self) -> String {
        format!("equi-pool {:?} w={}", self.spec.kind, self.spec.window)
    }
    fn out_resolution(&self, n: usize) -> Result<usize> {
        let w = self.spec.window;
        if w == 0 || n / w == 0 {
            return Err(Error::resolution(format!("pool window {w} at resolution {n}")));
        }
        Ok(n / w)
    }
    fn ratio(&self) -> usize {
        self.spec.window
    }
    fn record(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let n = resolution_of(g, x)?;
        let w = self.spec.window;
        if w == 1 {
            return Ok(x);
        }
        let out = n / w;
        let cells = self.cells(n)?;
        let mut parts = Vec::with_capacity(cells.len());
        let mut out_cells = Vec::with_capacity(cells.len());
        for &(lo, hi) in &cells {
            let band = g.band_crop(x, hi, 2)?;
            let s = g.idft(band, 2)?;
            let p = g.pool2d(s, w, self.spec.kind)?;
            parts.push(g.dft(p, 2)?);
            out_cells.push((lo / w, hi / w));
        }
        let res = out_cells.iter().map(|c| c.1).collect();
        g.record(AnnulusAssemble::new(out, 2, out_cells, res)?, &parts)
    }
}

impl Default for EquiPool {
    fn default() -> Self {
        Self {
            spec: PoolSpec { window: 2, kind: PoolKind::Max },
            scales: ScaleSet::range(1, 1).expect("non-empty"),
        }
    }
}
