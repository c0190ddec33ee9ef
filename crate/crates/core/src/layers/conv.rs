use num_complex::Complex;

use crate::autodiff::{Graph, NodeId, Primitive};
use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar, Value};

use super::{resolution_of, LocalFourierKernel, ScaleSet, SpectralMap};

/// Per-coefficient channel mixing `Y[o] = sum_i K[o, i] * X[i]`.
/// Inputs: `X: [C_in, ...]`, `K: [C_out, C_in, ...]` (complex).
pub struct ChannelMix;

fn mix_dims(x: &[usize], k: &[usize]) -> Result<(usize, usize, usize)> {
    if k.len() != x.len() + 1 || k[1] != x[0] || k[2..] != x[1..] {
        return Err(Error::shape(format!("channel mix of {x:?} with kernel {k:?}")));
    }
    Ok((k[0], x[0], x[1..].iter().product()))
}

impl<T: Scalar> Primitive<T> for ChannelMix {
    fn name(&self) -> &str {
        "channel-mix"
    }
    fn forward(&self, v: &[&Value<T>]) -> Result<Value<T>> {
        let (x, k) = (v[0].as_complex()?, v[1].as_complex()?);
        let (co, ci, plane) = mix_dims(x.shape(), k.shape())?;
        let mut shape = x.shape().to_vec();
        shape[0] = co;
        let mut y = vec![Complex::<T>::default(); co * plane];
        for o in 0..co {
            let yo = &mut y[o * plane..(o + 1) * plane];
            for i in 0..ci {
                let xs = &x.data()[i * plane..(i + 1) * plane];
                let ks = &k.data()[(o * ci + i) * plane..(o * ci + i + 1) * plane];
                for ((y, a), b) in yo.iter_mut().zip(xs).zip(ks) {
                    *y = *y + *a * *b;
                }
            }
        }
        Ok(CTensor::new(shape, y)?.into())
    }
    fn backward(&self, v: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (x, k, g) = (v[0].as_complex()?, v[1].as_complex()?, g.as_complex()?);
        let (co, ci, plane) = mix_dims(x.shape(), k.shape())?;
        let mut gx = vec![Complex::<T>::default(); ci * plane];
        let mut gk = vec![Complex::<T>::default(); co * ci * plane];
        for o in 0..co {
            let go = &g.data()[o * plane..(o + 1) * plane];
            for i in 0..ci {
                let off = (o * ci + i) * plane;
                let ks = &k.data()[off..off + plane];
                let xs = &x.data()[i * plane..(i + 1) * plane];
                let gxi = &mut gx[i * plane..(i + 1) * plane];
                for p in 0..plane {
                    gxi[p] = gxi[p] + ks[p].conj() * go[p];
                    gk[off + p] = xs[p].conj() * go[p];
                }
            }
        }
        Ok(vec![
            Some(CTensor::new(x.shape().to_vec(), gx)?.into()),
            Some(CTensor::new(k.shape().to_vec(), gk)?.into()),
        ])
    }
}

/// Spatially local convolution evaluated as a per-coefficient product with
/// the kernel's effective spectrum at the input resolution.
#[derive(Clone, Debug)]
pub struct FourierConv<T> {
    pub kernel: LocalFourierKernel<T>,
    pub scales: ScaleSet,
}

impl<T: Scalar> FourierConv<T> {
    pub fn new(kernel: LocalFourierKernel<T>, scales: ScaleSet) -> Self {
        Self { kernel, scales }
    }

    /// Records the convolution with an explicit kernel node (e.g. a trainable
    /// leaf holding [`LocalFourierKernel::effective`]).
    pub fn record_with(g: &mut Graph<T>, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        g.record(ChannelMix, &[x, kernel])
    }
}

impl<T: Scalar> SpectralMap<T> for FourierConv<T> {
    fn name(&self) -> String {
        format!("fourier-conv {}x{} l={}", self.kernel.c_out, self.kernel.c_in, self.kernel.l)
    }
    fn record(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let n = resolution_of(g, x)?;
        let k = g.input(self.kernel.effective(n, &self.scales)?);
        Self::record_with(g, x, k)
    }
}
