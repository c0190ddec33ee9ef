//! Scale-equivariant layers acting on 2-D multi-channel spectra.
//!
//! Each layer maps a `[C, n, n]` spectrum at resolution `n` to a spectrum at
//! the same (or, for pooling, a reduced) resolution such that restricting the
//! output to any band of the scale set equals running the layer on the
//! restricted input. Output coefficients only depend on input coefficients of
//! equal or lower (max-norm) frequency.

mod conv;
mod kernel;
mod nonlin;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, PoolKind};
use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar};

pub use conv::{ChannelMix, FourierConv};
pub use kernel::{
    expand_local_kernel, geometric_sum, geometric_sum_direct, KernelMap, LocalFourierKernel,
    NyquistGroups,
};
pub use nonlin::{Activation, EquiNonlinearity, EquiPool, GroupResidual};

/// Ordered resolutions at which equivariance is enforced.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ScaleSet(Vec<usize>);

impl ScaleSet {
    pub fn new(res: Vec<usize>) -> Result<Self> {
        if res.is_empty() {
            return Err(Error::invalid("empty scale set"));
        }
        if res[0] == 0 || res.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "scale set must be positive and strictly increasing: {res:?}"
            )));
        }
        Ok(Self(res))
    }

    /// `lo..=hi`.
    pub fn range(lo: usize, hi: usize) -> Result<Self> {
        Self::new((lo..=hi).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: usize) -> bool {
        self.0.binary_search(&n).is_ok()
    }

    /// Entries `<= n` (the set `R(x)` for an input of size `n`).
    pub fn up_to(&self, n: usize) -> Vec<usize> {
        self.0.iter().copied().filter(|&r| r <= n).collect()
    }

    /// Non-empty band cells `(lo, hi]` partitioning the spectrum at resolution
    /// `n`: one per entry `<= n`, plus `n` itself when it is not an entry.
    /// The first cell has `lo = 0` and includes DC.
    pub fn cells(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        if n > self.max() {
            return Err(Error::resolution(format!(
                "resolution {n} exceeds scale set maximum {}",
                self.max()
            )));
        }
        let mut edges = self.up_to(n);
        if edges.last() != Some(&n) {
            edges.push(n);
        }
        let mut cells = Vec::new();
        let mut prev = 0;
        for e in edges {
            if prev == 0 || e / 2 > prev / 2 {
                cells.push((prev, e));
            }
            prev = e;
        }
        Ok(cells)
    }

    /// Entries divisible by `w`, divided by `w` (the scale set after pooling).
    pub fn pooled(&self, w: usize) -> Result<Self> {
        Self::new(self.0.iter().filter(|&&r| r % w == 0).map(|&r| r / w).collect())
    }
}

impl TryFrom<Vec<usize>> for ScaleSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ScaleSet> for Vec<usize> {
    fn from(s: ScaleSet) -> Self {
        s.0
    }
}

impl std::str::FromStr for ScaleSet {
    type Err = Error;
    /// `"8-28"`, `"8..28"`, or a comma list `"8,12,28"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse scale set `{s}`"));
        for sep in ["..", "-"] {
            if let Some((a, b)) = s.split_once(sep) {
                let a = a.trim().parse().map_err(|_| bad())?;
                let b = b.trim().parse().map_err(|_| bad())?;
                return Self::range(a, b);
            }
        }
        let v = s
            .split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        Self::new(v)
    }
}

impl std::fmt::Display for ScaleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let contiguous = self.0.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous && self.0.len() > 2 {
            write!(f, "{}-{}", self.min(), self.max())
        } else {
            let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
            f.write_str(&parts.join(","))
        }
    }
}

/// Window and reduction of a pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub kind: PoolKind,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self { window: 2, kind: PoolKind::Max }
    }
}

/// A layer from `[C, n, n]` spectra to spectra.
pub trait SpectralMap<T: Scalar> {
    fn name(&self) -> String;

    /// Output resolution for an input at resolution `n`.
    fn out_resolution(&self, n: usize) -> Result<usize> {
        Ok(n)
    }

    /// Size-reduction factor (1 unless the layer pools).
    fn ratio(&self) -> usize {
        1
    }

    /// Records the layer on `g` with `x` as input.
    fn record(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId>;

    /// Evaluates the layer on a spectrum outside of any training graph.
    fn apply(&self, x: &CTensor<T>) -> Result<CTensor<T>> {
        let mut g = Graph::new();
        let id = g.input(x.clone());
        let out = self.record(&mut g, id)?;
        Ok(g.value(out).as_complex()?.clone())
    }
}

/// Closure-backed map, e.g. for ad-hoc probes and negative controls.
pub struct FnMap<F> {
    pub name: String,
    pub f: F,
}

impl<T, F> SpectralMap<T> for FnMap<F>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    fn name(&self) -> String {
        self.name.clone()
    }
    fn record(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        (self.f)(g, x)
    }
}

pub(crate) fn resolution_of<T: Scalar>(g: &Graph<T>, x: NodeId) -> Result<usize> {
    let s = g.value(x).shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::shape(format!("expected a [C, n, n] spectrum, got {s:?}")));
    }
    Ok(s[2])
}
