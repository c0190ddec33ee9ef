//! Generic tensor primitives.
//!
//! Spectral primitives (DFT hooks, band crop/pad) live next to the transforms
//! in [`crate::spectral`]; the layer-specific ones live in [`crate::layers`].

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{CTensor, Scalar, Tensor, Value};

use super::graph::{Graph, NodeId, Primitive};

pub(crate) fn by_name<T: Scalar>(name: &str) -> Option<Box<dyn Primitive<T>>> {
    Some(match name {
        "add" => Box::new(Add),
        "sub" => Box::new(Sub),
        "mul" => Box::new(Mul),
        "complex-mul" | "cmul" => Box::new(CMul),
        "matmul" => Box::new(MatMul),
        "add-bias" => Box::new(AddBias),
        "relu" => Box::new(Relu),
        "sum" => Box::new(Sum),
        "mean" => Box::new(Mean),
        _ => return None,
    })
}

fn same_shape(a: &Value<impl Scalar>, b: &Value<impl Scalar>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_values<T: Scalar>(
    a: &Value<T>,
    b: &Value<T>,
    op: &str,
    fr: impl Fn(T, T) -> T,
    fc: impl Fn(Complex<T>, Complex<T>) -> Complex<T>,
) -> Result<Value<T>> {
    same_shape(a, b, op)?;
    Ok(match (a, b) {
        (Value::Real(x), Value::Real(y)) => Value::Real(Tensor::from_fn(x.shape(), |i| {
            fr(x.data()[i], y.data()[i])
        })),
        (Value::Complex(x), Value::Complex(y)) => Value::Complex(CTensor::from_fn(x.shape(), |i| {
            fc(x.data()[i], y.data()[i])
        })),
        _ => return Err(Error::shape(format!("{op}: mixed real/complex operands"))),
    })
}

fn neg<T: Scalar>(v: &Value<T>) -> Value<T> {
    match v {
        Value::Real(t) => Value::Real(t.map(|x| -x)),
        Value::Complex(t) => Value::Complex(CTensor::from_fn(t.shape(), |i| -t.data()[i])),
    }
}

/// Elementwise sum (real or complex).
pub struct Add;

impl<T: Scalar> Primitive<T> for Add {
    fn name(&self) -> &str {
        "add"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        zip_values(x[0], x[1], "add", |a, b| a + b, |a, b| a + b)
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

/// Elementwise difference (real or complex).
pub struct Sub;

impl<T: Scalar> Primitive<T> for Sub {
    fn name(&self) -> &str {
        "sub"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        zip_values(x[0], x[1], "sub", |a, b| a - b, |a, b| a - b)
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(g.clone()), Some(neg(g))])
    }
}

/// Real elementwise product.
pub struct Mul;

impl<T: Scalar> Primitive<T> for Mul {
    fn name(&self) -> &str {
        "mul"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        x[0].as_real()?;
        zip_values(x[0], x[1], "mul", |a, b| a * b, |a, b| a * b)
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (a, b, g) = (x[0].as_real()?, x[1].as_real()?, g.as_real()?);
        let ga = Tensor::from_fn(a.shape(), |i| g.data()[i] * b.data()[i]);
        let gb = Tensor::from_fn(a.shape(), |i| g.data()[i] * a.data()[i]);
        Ok(vec![Some(ga.into()), Some(gb.into())])
    }
}

/// Complex elementwise product.
pub struct CMul;

impl<T: Scalar> Primitive<T> for CMul {
    fn name(&self) -> &str {
        "complex-mul"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        x[0].as_complex()?;
        zip_values(x[0], x[1], "complex-mul", |a, b| a * b, |a, b| a * b)
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (a, b, g) = (x[0].as_complex()?, x[1].as_complex()?, g.as_complex()?);
        let ga = CTensor::from_fn(a.shape(), |i| g.data()[i] * b.data()[i].conj());
        let gb = CTensor::from_fn(a.shape(), |i| g.data()[i] * a.data()[i].conj());
        Ok(vec![Some(ga.into()), Some(gb.into())])
    }
}

/// Multiplication by a fixed real constant.
pub struct Scale<T>(pub T);

impl<T: Scalar> Primitive<T> for Scale<T> {
    fn name(&self) -> &str {
        "scale"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        Ok(scale(x[0], self.0))
    }
    fn backward(&self, _: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        Ok(vec![Some(scale(g, self.0))])
    }
}

fn scale<T: Scalar>(v: &Value<T>, s: T) -> Value<T> {
    match v {
        Value::Real(t) => Value::Real(t.map(|x| x * s)),
        Value::Complex(t) => Value::Complex(CTensor::from_fn(t.shape(), |i| t.data()[i] * s)),
    }
}

/// Real matrix product `[m,k] x [k,n]`; a 1-D right operand is a column vector.
pub struct MatMul;

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        ([m, k], [k2]) if k == k2 => Ok((*m, *k, 1)),
        _ => Err(Error::shape(format!("matmul {a:?} x {b:?}"))),
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

impl<T: Scalar> Primitive<T> for MatMul {
    fn name(&self) -> &str {
        "matmul"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let (a, b) = (x[0].as_real()?, x[1].as_real()?);
        let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
        let out = matmul_raw(a.data(), b.data(), m, k, n);
        let shape = if b.ndim() == 1 { vec![m] } else { vec![m, n] };
        Ok(Tensor::new(shape, out)?.into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (a, b, g) = (x[0].as_real()?, x[1].as_real()?, g.as_real()?);
        let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
        // dA = G B^T, dB = A^T G
        let mut ga = vec![T::zero(); m * k];
        for i in 0..m {
            for p in 0..k {
                let mut acc = T::zero();
                for j in 0..n {
                    acc = acc + g.data()[i * n + j] * b.data()[p * n + j];
                }
                ga[i * k + p] = acc;
            }
        }
        let mut gb = vec![T::zero(); k * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data()[i * k + p];
                for j in 0..n {
                    gb[p * n + j] = gb[p * n + j] + av * g.data()[i * n + j];
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(a.shape().to_vec(), ga)?.into()),
            Some(Tensor::new(b.shape().to_vec(), gb)?.into()),
        ])
    }
}

/// `x[r, n] + b[n]`, the bias of an affine layer applied to every row.
pub struct AddBias;

impl<T: Scalar> Primitive<T> for AddBias {
    fn name(&self) -> &str {
        "add-bias"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let (a, b) = (x[0].as_real()?, x[1].as_real()?);
        let n = b.len();
        if a.shape().last() != Some(&n) || b.ndim() != 1 {
            return Err(Error::shape(format!("add-bias {:?} + {:?}", a.shape(), b.shape())));
        }
        Ok(Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i % n]).into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (b, g) = (x[1].as_real()?, g.as_real()?);
        let n = b.len();
        let mut gb = vec![T::zero(); n];
        for (i, v) in g.data().iter().enumerate() {
            gb[i % n] = gb[i % n] + *v;
        }
        Ok(vec![Some(g.clone().into()), Some(Tensor::new(vec![n], gb)?.into())])
    }
}

/// Shape change without data movement.
pub struct Reshape(pub Vec<usize>);

impl<T: Scalar> Primitive<T> for Reshape {
    fn name(&self) -> &str {
        "reshape"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        Ok(match x[0] {
            Value::Real(t) => t.clone().reshape(&self.0)?.into(),
            Value::Complex(t) => t.clone().reshape(&self.0)?.into(),
        })
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let shape = x[0].shape();
        Ok(vec![Some(match g {
            Value::Real(t) => t.clone().reshape(shape)?.into(),
            Value::Complex(t) => t.clone().reshape(shape)?.into(),
        })])
    }
}

/// Split a shape around `axis` into (outer, extent, inner) strides.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Copies `src` (extent `n_src` along the axis) into `dst` (extent `n_dst`),
/// mapping source index `i` to destination `i + offset` where in range.
fn shift_axis<E: Copy + Default>(
    src: &[E],
    shape: &[usize],
    axis: usize,
    n_dst: usize,
    offset: isize,
) -> Vec<E> {
    let (outer, n_src, inner) = around(shape, axis);
    let mut dst = vec![E::default(); outer * n_dst * inner];
    for o in 0..outer {
        for i in 0..n_src {
            let j = i as isize + offset;
            if j < 0 || j >= n_dst as isize {
                continue;
            }
            let s = (o * n_src + i) * inner;
            let d = (o * n_dst + j as usize) * inner;
            dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
        }
    }
    dst
}

fn map_axis<T: Scalar>(v: &Value<T>, axis: usize, n_dst: usize, offset: isize) -> Result<Value<T>> {
    let mut shape = v.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let old = shape.clone();
    shape[axis] = n_dst;
    Ok(match v {
        Value::Real(t) => Tensor::new(shape, shift_axis(t.data(), &old, axis, n_dst, offset))?.into(),
        Value::Complex(t) => {
            CTensor::new(shape, shift_axis(t.data(), &old, axis, n_dst, offset))?.into()
        }
    })
}

/// Contiguous sub-range `[start, end)` along one axis.
pub struct Slice {
    pub axis: usize,
    pub start: usize,
    pub end: usize,
}

impl<T: Scalar> Primitive<T> for Slice {
    fn name(&self) -> &str {
        "slice"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let shape = x[0].shape();
        if self.axis >= shape.len() || self.start >= self.end || self.end > shape[self.axis] {
            return Err(Error::shape(format!(
                "slice {}..{} on axis {} of {shape:?}",
                self.start, self.end, self.axis
            )));
        }
        map_axis(x[0], self.axis, self.end - self.start, -(self.start as isize))
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let n = x[0].shape()[self.axis];
        Ok(vec![Some(map_axis(g, self.axis, n, self.start as isize)?)])
    }
}

/// Zero padding along one axis.
pub struct Pad {
    pub axis: usize,
    pub before: usize,
    pub after: usize,
}

impl<T: Scalar> Primitive<T> for Pad {
    fn name(&self) -> &str {
        "pad"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let shape = x[0].shape();
        if self.axis >= shape.len() {
            return Err(Error::shape(format!("pad axis {} of {shape:?}", self.axis)));
        }
        let n = shape[self.axis] + self.before + self.after;
        map_axis(x[0], self.axis, n, self.before as isize)
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let n = x[0].shape()[self.axis];
        Ok(vec![Some(map_axis(g, self.axis, n, -(self.before as isize))?)])
    }
}

/// Concatenation of real tensors along axis 0.
pub struct Concat;

impl<T: Scalar> Primitive<T> for Concat {
    fn name(&self) -> &str {
        "concat"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        if x.is_empty() {
            return Err(Error::shape("concat of zero tensors"));
        }
        let tail = x[0].shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for v in x {
            let t = v.as_real()?;
            if t.shape()[1..] != tail[..] {
                return Err(Error::shape(format!("concat {:?} with {:?}", x[0].shape(), t.shape())));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Ok(Tensor::new(shape, data)?.into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let g = g.as_real()?;
        let mut offset = 0;
        let mut out = Vec::with_capacity(x.len());
        for v in x {
            let n = v.len();
            let part = g.data()[offset..offset + n].to_vec();
            offset += n;
            out.push(Some(Tensor::new(v.shape().to_vec(), part)?.into()));
        }
        Ok(out)
    }
}

/// Sum of all elements of a real tensor, as a `[1]` tensor.
pub struct Sum;

impl<T: Scalar> Primitive<T> for Sum {
    fn name(&self) -> &str {
        "sum"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        Ok(Tensor::scalar(x[0].as_real()?.sum()).into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let g = g.as_real()?.data()[0];
        Ok(vec![Some(Tensor::from_fn(x[0].shape(), |_| g).into())])
    }
}

/// Mean of all elements of a real tensor.
pub struct Mean;

impl<T: Scalar> Primitive<T> for Mean {
    fn name(&self) -> &str {
        "mean"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let t = x[0].as_real()?;
        Ok(Tensor::scalar(t.sum() / T::c(t.len() as f64)).into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let g = g.as_real()?.data()[0] / T::c(x[0].len() as f64);
        Ok(vec![Some(Tensor::from_fn(x[0].shape(), |_| g).into())])
    }
}

/// Rectifier; the subgradient at zero is zero.
pub struct Relu;

impl<T: Scalar> Primitive<T> for Relu {
    fn name(&self) -> &str {
        "relu"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        Ok(x[0].as_real()?.map(|v| v.max(T::zero())).into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (x, g) = (x[0].as_real()?, g.as_real()?);
        Ok(vec![Some(
            Tensor::from_fn(x.shape(), |i| {
                if x.data()[i] > T::zero() {
                    g.data()[i]
                } else {
                    T::zero()
                }
            })
            .into(),
        )])
    }
}

fn last_two(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!("expected at least 2 axes, got {shape:?}")));
    }
    let n = shape.len();
    Ok((shape[..n - 2].iter().product(), shape[n - 2], shape[n - 1]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Non-overlapping 2-D pooling over the last two axes with window `w`.
/// Trailing rows/columns that do not fill a window are dropped.
pub struct Pool2d {
    pub window: usize,
    pub kind: PoolKind,
}

impl Pool2d {
    fn out_shape(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize, usize, Vec<usize>)> {
        let (outer, h, w) = last_two(shape)?;
        let (oh, ow) = (h / self.window, w / self.window);
        if self.window == 0 || oh == 0 || ow == 0 {
            return Err(Error::shape(format!(
                "pool window {} on {h}x{w} leaves no output",
                self.window
            )));
        }
        let mut out = shape.to_vec();
        let n = out.len();
        out[n - 2] = oh;
        out[n - 1] = ow;
        Ok((outer, h, w, oh, ow, out))
    }

    /// Source index chosen by max pooling for every output element; the
    /// first maximum in row-major window order wins ties.
    fn argmax<T: Scalar>(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let (outer, h, w, oh, ow, _) = self.out_shape(x.shape())?;
        let mut idx = Vec::with_capacity(outer * oh * ow);
        let s = self.window;
        for o in 0..outer {
            let base = o * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + (i * s) * w + j * s;
                    for di in 0..s {
                        for dj in 0..s {
                            let p = base + (i * s + di) * w + j * s + dj;
                            if x.data()[p] > x.data()[best] {
                                best = p;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        Ok(idx)
    }
}

impl<T: Scalar> Primitive<T> for Pool2d {
    fn name(&self) -> &str {
        match self.kind {
            PoolKind::Max => "max-pool-2d",
            PoolKind::Avg => "avg-pool-2d",
        }
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let t = x[0].as_real()?;
        let (outer, h, w, oh, ow, shape) = self.out_shape(t.shape())?;
        let data = match self.kind {
            PoolKind::Max => self.argmax(t)?.into_iter().map(|p| t.data()[p]).collect(),
            PoolKind::Avg => {
                let s = self.window;
                let norm = T::c((s * s) as f64);
                let mut out = Vec::with_capacity(outer * oh * ow);
                for o in 0..outer {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = T::zero();
                            for di in 0..s {
                                for dj in 0..s {
                                    acc = acc + t.data()[o * h * w + (i * s + di) * w + j * s + dj];
                                }
                            }
                            out.push(acc / norm);
                        }
                    }
                }
                out
            }
        };
        Ok(Tensor::new(shape, data)?.into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (t, g) = (x[0].as_real()?, g.as_real()?);
        let mut gx = Tensor::zeros(t.shape());
        match self.kind {
            PoolKind::Max => {
                for (p, gv) in self.argmax(t)?.into_iter().zip(g.data()) {
                    gx.data_mut()[p] = gx.data()[p] + *gv;
                }
            }
            PoolKind::Avg => {
                let (outer, h, w, oh, ow, _) = self.out_shape(t.shape())?;
                let s = self.window;
                let norm = T::c((s * s) as f64);
                for o in 0..outer {
                    for i in 0..oh {
                        for j in 0..ow {
                            let gv = g.data()[(o * oh + i) * ow + j] / norm;
                            for di in 0..s {
                                for dj in 0..s {
                                    let p = o * h * w + (i * s + di) * w + j * s + dj;
                                    gx.data_mut()[p] = gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![Some(gx.into())])
    }
}

/// Per-channel normalization over the last two axes, no affine parameters:
/// `(x - mean) / sqrt(var + eps)`.
pub struct InstanceNorm<T> {
    pub eps: T,
}

impl<T: Scalar> InstanceNorm<T> {
    fn stats(&self, x: &[T]) -> (T, T) {
        let n = T::c(x.len() as f64);
        let mean = x.iter().copied().sum::<T>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        (mean, (var + self.eps).sqrt())
    }
}

impl<T: Scalar> Primitive<T> for InstanceNorm<T> {
    fn name(&self) -> &str {
        "instance-normalize"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let t = x[0].as_real()?;
        let (outer, h, w) = last_two(t.shape())?;
        let plane = h * w;
        let mut out = Vec::with_capacity(t.len());
        for o in 0..outer {
            let xs = &t.data()[o * plane..(o + 1) * plane];
            let (mean, sd) = self.stats(xs);
            out.extend(xs.iter().map(|&v| (v - mean) / sd));
        }
        let _ = outer;
        Ok(Tensor::new(t.shape().to_vec(), out)?.into())
    }
    fn backward(&self, x: &[&Value<T>], y: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (t, y, g) = (x[0].as_real()?, y.as_real()?, g.as_real()?);
        let (outer, h, w) = last_two(t.shape())?;
        let plane = h * w;
        let n = T::c(plane as f64);
        let mut gx = Vec::with_capacity(t.len());
        for o in 0..outer {
            let r = o * plane..(o + 1) * plane;
            let (_, sd) = self.stats(&t.data()[r.clone()]);
            let (ys, gs) = (&y.data()[r.clone()], &g.data()[r]);
            let g_mean = gs.iter().copied().sum::<T>() / n;
            let gy_mean = gs.iter().zip(ys).map(|(a, b)| *a * *b).sum::<T>() / n;
            gx.extend(gs.iter().zip(ys).map(|(&gv, &yv)| (gv - g_mean - yv * gy_mean) / sd));
        }
        Ok(vec![Some(Tensor::new(t.shape().to_vec(), gx)?.into())])
    }
}

/// Row-wise softmax cross entropy. Input logits `[rows, classes]`, output
/// the per-row loss `-log softmax(logits)[label]` as a `[rows]` tensor.
pub struct SoftmaxCrossEntropy {
    pub labels: Vec<usize>,
}

fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    row.iter().map(|&v| v - lse).collect()
}

impl SoftmaxCrossEntropy {
    fn dims(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let (r, m) = match shape {
            [r, m] => (*r, *m),
            _ => return Err(Error::shape(format!("logits must be [rows, classes], got {shape:?}"))),
        };
        if self.labels.len() != r {
            return Err(Error::shape(format!("{} labels for {r} rows", self.labels.len())));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l >= m) {
            return Err(Error::invalid(format!("label {bad} out of range for {m} classes")));
        }
        Ok((r, m))
    }
}

impl<T: Scalar> Primitive<T> for SoftmaxCrossEntropy {
    fn name(&self) -> &str {
        "softmax-cross-entropy"
    }
    fn forward(&self, x: &[&Value<T>]) -> Result<Value<T>> {
        let t = x[0].as_real()?;
        let (r, m) = self.dims(t.shape())?;
        let losses = (0..r)
            .map(|i| -log_softmax_row(&t.data()[i * m..(i + 1) * m])[self.labels[i]])
            .collect();
        Ok(Tensor::new(vec![r], losses)?.into())
    }
    fn backward(&self, x: &[&Value<T>], _: &Value<T>, g: &Value<T>) -> Result<Vec<Option<Value<T>>>> {
        let (t, g) = (x[0].as_real()?, g.as_real()?);
        let (r, m) = self.dims(t.shape())?;
        let mut gx = Vec::with_capacity(r * m);
        for i in 0..r {
            let ls = log_softmax_row(&t.data()[i * m..(i + 1) * m]);
            for (j, l) in ls.into_iter().enumerate() {
                let target = if j == self.labels[i] { T::one() } else { T::zero() };
                gx.push(g.data()[i] * (l.exp() - target));
            }
        }
        Ok(vec![Some(Tensor::new(vec![r, m], gx)?.into())])
    }
}

/// Convenience builders.
impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Mul, &[a, b])
    }
    pub fn cmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(CMul, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        self.record(Scale(s), &[a])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(MatMul, &[a, b])
    }
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(AddBias, &[a, b])
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Reshape(shape.to_vec()), &[a])
    }
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.record(Slice { axis, start, end }, &[a])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(Concat, parts)
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Mean, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Relu, &[a])
    }
    pub fn pool2d(&mut self, a: NodeId, window: usize, kind: PoolKind) -> Result<NodeId> {
        self.record(Pool2d { window, kind }, &[a])
    }
    pub fn instance_norm(&mut self, a: NodeId, eps: T) -> Result<NodeId> {
        self.record(InstanceNorm { eps }, &[a])
    }
    pub fn softmax_ce(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        self.record(SoftmaxCrossEntropy { labels }, &[logits])
    }
}
