//! Reference backbone, multi-scale classifier head, and losses.

mod optim;
mod train;

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, PoolKind};
use crate::error::{Error, Result};
use crate::layers::{EquiNonlinearity, EquiPool, FourierConv, LocalFourierKernel, PoolSpec, ScaleSet, SpectralMap};
use crate::tensor::{CTensor, Scalar, Tensor, Value};

pub use optim::{Adam, AdamConfig};
pub use train::{consistency_rate, epoch_batches, train, EpochRecord, LabeledImage, Tally, TrainConfig, TrainReport};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channel counts, input first: `[1, 16, 32, 32]` is three blocks.
    pub channels: Vec<usize>,
    /// Kernel locality per block (odd).
    pub localities: Vec<usize>,
    /// Largest input resolution (nominal kernel size).
    pub resolution: usize,
    pub scales: ScaleSet,
    /// Pooling window after each block (1 = none).
    pub pool_windows: Vec<usize>,
    /// Instance normalization inside each nonlinearity.
    pub normalize: bool,
    /// Spatial max-pool window of the head.
    pub head_pool: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: vec![1, 16, 32, 32],
            localities: vec![7, 11, 11],
            resolution: 28,
            scales: ScaleSet::range(8, 28).expect("valid range"),
            pool_windows: vec![1, 1, 1],
            normalize: true,
            head_pool: 4,
            hidden: 128,
            classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn blocks(&self) -> usize {
        self.localities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.blocks();
        if b == 0 || self.channels.len() != b + 1 || self.pool_windows.len() != b {
            return Err(Error::invalid(format!(
                "{} channel counts and {} pool windows for {b} blocks",
                self.channels.len(),
                self.pool_windows.len()
            )));
        }
        if self.scales.max() != self.resolution {
            return Err(Error::invalid(format!(
                "scale set maximum {} must equal the resolution {}",
                self.scales.max(),
                self.resolution
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.classes < 2 || self.hidden == 0 {
            return Err(Error::invalid("channels, hidden width and class count must be positive"));
        }
        if self.feature_resolution() / self.head_pool == 0 || self.head_pool == 0 {
            return Err(Error::invalid(format!("head pool {} too large", self.head_pool)));
        }
        Ok(())
    }

    /// Resolution and scale set seen by block `i`.
    fn block_scales(&self) -> Result<Vec<(usize, ScaleSet)>> {
        let mut out = Vec::with_capacity(self.blocks());
        let (mut d, mut s) = (self.resolution, self.scales.clone());
        for &w in &self.pool_windows {
            out.push((d, s.clone()));
            if w > 1 {
                d /= w;
                s = s.pooled(w)?;
            }
        }
        Ok(out)
    }

    pub fn feature_resolution(&self) -> usize {
        self.pool_windows.iter().fold(self.resolution, |d, &w| d / w.max(1))
    }

    /// Scale set at the feature level.
    pub fn feature_scales(&self) -> Result<ScaleSet> {
        let mut s = self.scales.clone();
        for &w in &self.pool_windows {
            if w > 1 {
                s = s.pooled(w)?;
            }
        }
        Ok(s)
    }

    pub fn flat_features(&self) -> usize {
        let p = self.feature_resolution() / self.head_pool;
        self.channels.last().copied().unwrap_or(0) * p * p
    }
}

/// Per-scale logits `[rows, classes]`, rows ordered by increasing resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePrediction {
    pub rows: Vec<usize>,
    pub logits: Tensor<f64>,
}

impl ScalePrediction {
    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.classes();
        &self.logits.data()[i * m..(i + 1) * m]
    }

    /// Cross entropy of every row against `label`.
    pub fn ce(&self, label: usize) -> Result<Vec<f64>> {
        if label >= self.classes() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        Ok((0..self.rows.len()).map(|i| cross_entropy(self.row(i), label)).collect())
    }

    /// Arg-max class of the row for resolution `res`; ties go to the lowest class.
    pub fn predict_at(&self, res: usize) -> Result<usize> {
        let i = self
            .rows
            .iter()
            .position(|&r| r == res)
            .ok_or_else(|| Error::resolution(format!("no prediction row for {res}")))?;
        Ok(argmax(self.row(i)))
    }

    /// Prediction at the input's own resolution (the last row).
    pub fn predict(&self) -> usize {
        argmax(self.row(self.rows.len() - 1))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Sum over scales of the cross entropy.
pub fn ce_sum_loss(pred: &ScalePrediction, label: usize) -> Result<f64> {
    Ok(pred.ce(label)?.iter().sum())
}

/// Hinge on cross entropy increasing with resolution:
/// `sum_k max(CE[k] - CE[prev(k)], 0)` over the ordered rows.
pub fn consistency_hinge_loss(pred: &ScalePrediction, label: usize) -> Result<f64> {
    Ok(hinge_of(&pred.ce(label)?))
}

pub fn hinge_of(ce: &[f64]) -> f64 {
    ce.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

/// Trainable leaves of one per-sample graph.
pub struct Leaves {
    pub kernels: Vec<NodeId>,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Head parameters: MLP shared by all scales.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Parameter names in declaration (checkpoint) order.
pub fn param_names(blocks: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..blocks).map(|i| format!("block{i}.kernel")).collect();
    v.extend(["head.w1", "head.b1", "head.w2", "head.b2"].map(String::from));
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquiNetwork<T> {
    pub config: ModelConfig,
    pub kernels: Vec<LocalFourierKernel<T>>,
    pub head: ClassifierHead<T>,
}

/// Effective kernels of every block at one input resolution, shared between
/// the per-sample graphs of a batch.
pub type KernelSet<T> = Vec<Arc<Value<T>>>;

impl<T: Scalar> EquiNetwork<T> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut kernels = Vec::with_capacity(config.blocks());
        for (i, (d, _)) in config.block_scales()?.into_iter().enumerate() {
            kernels.push(LocalFourierKernel::random(
                config.channels[i + 1],
                config.channels[i],
                config.localities[i],
                d,
                rng,
            )?);
        }
        let (f, h, c) = (config.flat_features(), config.hidden, config.classes);
        let mut normal = |shape: &[usize], std: f64| {
            Tensor::from_fn(shape, |_| T::c(std * rng.sample::<f64, _>(StandardNormal)))
        };
        let head = ClassifierHead {
            w1: normal(&[f, h], (2.0 / f as f64).sqrt()),
            b1: Tensor::zeros(&[h]),
            w2: normal(&[h, c], (1.0 / h as f64).sqrt()),
            b2: Tensor::zeros(&[c]),
        };
        Ok(Self { config, kernels, head })
    }

    /// Named parameter tensors in declaration order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let names = param_names(self.config.blocks());
        let mut tensors: Vec<&Tensor<T>> = self.kernels.iter().map(|k| &k.params).collect();
        tensors.extend([&self.head.w1, &self.head.b1, &self.head.w2, &self.head.b2]);
        names.into_iter().zip(tensors).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names = param_names(self.config.blocks());
        let mut tensors: Vec<&mut Tensor<T>> = self.kernels.iter_mut().map(|k| &mut k.params).collect();
        let h = &mut self.head;
        tensors.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        names.into_iter().zip(tensors).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds a network from named parameters (e.g. a checkpoint).
    pub fn from_params(config: ModelConfig, mut params: HashMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let mut take = |name: &str| {
            params
                .remove(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
        };
        let mut kernels = Vec::with_capacity(config.blocks());
        for (i, (d, _)) in config.block_scales()?.into_iter().enumerate() {
            kernels.push(LocalFourierKernel::new(
                config.channels[i + 1],
                config.channels[i],
                config.localities[i],
                d,
                take(&format!("block{i}.kernel"))?,
            )?);
        }
        let head = ClassifierHead {
            w1: take("head.w1")?,
            b1: take("head.b1")?,
            w2: take("head.w2")?,
            b2: take("head.b2")?,
        };
        let (f, h, c) = (config.flat_features(), config.hidden, config.classes);
        if head.w1.shape() != [f, h] || head.b1.shape() != [h] || head.w2.shape() != [h, c] || head.b2.shape() != [c] {
            return Err(Error::shape("head parameter shapes do not match the configuration"));
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::invalid(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self { config, kernels, head })
    }

    /// Input resolution `n` must be in the scale set.
    pub fn check_resolution(&self, n: usize) -> Result<()> {
        if !self.config.scales.contains(n) {
            return Err(Error::resolution(format!(
                "input resolution {n} is not in the scale set {}",
                self.config.scales
            )));
        }
        Ok(())
    }

    /// Effective kernels of every block for inputs at resolution `n`.
    pub fn kernels_at(&self, n: usize) -> Result<KernelSet<T>> {
        self.check_resolution(n)?;
        let mut out = Vec::with_capacity(self.kernels.len());
        let (mut res, mut scales) = (n, self.config.scales.clone());
        for (k, &w) in self.kernels.iter().zip(&self.config.pool_windows) {
            out.push(Arc::new(Value::Complex(k.effective(res, &scales)?)));
            if w > 1 {
                res /= w;
                scales = scales.pooled(w)?;
            }
        }
        Ok(out)
    }

    /// Records the backbone on an image node `[n, n]`, returning the feature
    /// spectrum node `[C, n', n']`.
    pub fn record_features(&self, g: &mut Graph<T>, image: NodeId, kernels: &[NodeId]) -> Result<NodeId> {
        let shape = g.value(image).shape().to_vec();
        let n = match shape[..] {
            [h, w] if h == w => h,
            _ => return Err(Error::shape(format!("expected a square image, got {shape:?}"))),
        };
        self.check_resolution(n)?;
        let x = g.reshape(image, &[1, n, n])?;
        let mut x = g.dft(x, 2)?;
        let mut scales = self.config.scales.clone();
        for (b, &kn) in kernels.iter().enumerate() {
            x = FourierConv::record_with(g, x, kn)?;
            let nl = EquiNonlinearity {
                scales: scales.clone(),
                activation: Default::default(),
                normalize: self.config.normalize,
            };
            x = nl.record(g, x)?;
            let w = self.config.pool_windows[b];
            if w > 1 {
                let pool = EquiPool { spec: PoolSpec { window: w, kind: PoolKind::Max }, scales: scales.clone() };
                x = pool.record(g, x)?;
                scales = scales.pooled(w)?;
            }
        }
        Ok(x)
    }

    /// Feature-level rows `R(x)` for features at resolution `n`.
    pub fn rows_for(&self, n: usize) -> Result<Vec<usize>> {
        let rows = self.config.feature_scales()?.up_to(n);
        if rows.is_empty() {
            return Err(Error::resolution(format!("no scale-set entry at or below {n}")));
        }
        Ok(rows)
    }

    /// Records the multi-scale head: one logit row per resolution in `rows`.
    pub fn record_head(&self, g: &mut Graph<T>, phi: NodeId, rows: &[usize], leaves: &Leaves) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::resolution("empty row set"));
        }
        let pad_to = self.config.feature_resolution();
        let flat = self.config.flat_features();
        let mut parts = Vec::with_capacity(rows.len());
        for &k in rows {
            let padded = g.band_crop_pad(phi, k, pad_to, 2)?;
            let s = g.idft(padded, 2)?;
            let p = g.pool2d(s, self.config.head_pool, PoolKind::Max)?;
            parts.push(g.reshape(p, &[1, flat])?);
        }
        let z = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        let h = g.matmul(z, leaves.w1)?;
        let h = g.add_bias(h, leaves.b1)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, leaves.w2)?;
        g.add_bias(o, leaves.b2)
    }

    /// Adds parameter leaves (sharing buffers) for one per-sample graph.
    pub fn leaves(&self, g: &mut Graph<T>, kernels: &KernelSet<T>, head: &[Arc<Value<T>>; 4]) -> Leaves {
        let names = param_names(self.config.blocks());
        let kernels = kernels
            .iter()
            .zip(&names)
            .map(|(k, name)| g.param_shared(name.clone(), Arc::clone(k)))
            .collect();
        let n = self.config.blocks();
        Leaves {
            kernels,
            w1: g.param_shared(names[n].clone(), Arc::clone(&head[0])),
            b1: g.param_shared(names[n + 1].clone(), Arc::clone(&head[1])),
            w2: g.param_shared(names[n + 2].clone(), Arc::clone(&head[2])),
            b2: g.param_shared(names[n + 3].clone(), Arc::clone(&head[3])),
        }
    }

    pub fn shared_head(&self) -> [Arc<Value<T>>; 4] {
        let h = &self.head;
        [&h.w1, &h.b1, &h.w2, &h.b2].map(|t| Arc::new(Value::Real(t.clone())))
    }

    /// Feature spectrum `Phi` of an image at a scale-set resolution.
    pub fn forward_features(&self, image: &Tensor<T>) -> Result<CTensor<T>> {
        self.forward_features_with(image, &self.kernels_at(image.shape()[0])?)
    }

    /// [`Self::forward_features`] with precomputed kernels for the image's
    /// resolution.
    pub fn forward_features_with(&self, image: &Tensor<T>, ks: &KernelSet<T>) -> Result<CTensor<T>> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let kn: Vec<NodeId> = ks.iter().map(|k| g.input_shared(Arc::clone(k))).collect();
        let phi = self.record_features(&mut g, x, &kn)?;
        Ok(g.value(phi).as_complex()?.clone())
    }

    /// Spatial features `idft2(Phi)`, `[C, n', n']`.
    pub fn features_spatial(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        crate::spectral::idft_axes(&self.forward_features(image)?, 2)
    }

    /// Logit rows from a feature spectrum for the given resolutions.
    pub fn classify_multiscale(&self, phi: &CTensor<T>, rows: &[usize]) -> Result<ScalePrediction> {
        let mut g = Graph::new();
        let p = g.input(phi.clone());
        let head = self.shared_head();
        let leaves = Leaves {
            kernels: Vec::new(),
            w1: g.input_shared(Arc::clone(&head[0])),
            b1: g.input_shared(Arc::clone(&head[1])),
            w2: g.input_shared(Arc::clone(&head[2])),
            b2: g.input_shared(Arc::clone(&head[3])),
        };
        let out = self.record_head(&mut g, p, rows, &leaves)?;
        Ok(ScalePrediction {
            rows: rows.to_vec(),
            logits: g.real(out)?.cast(),
        })
    }

    /// Full forward pass: rows `R(x)` of the input's resolution.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ScalePrediction> {
        let phi = self.forward_features(image)?;
        let rows = self.rows_for(phi.shape()[2])?;
        self.classify_multiscale(&phi, &rows)
    }

    /// Forward pass reusing precomputed kernels (for batches at one resolution).
    pub fn forward_with(&self, image: &Tensor<T>, ks: &KernelSet<T>, head: &[Arc<Value<T>>; 4]) -> Result<ScalePrediction> {
        let mut g = Graph::new();
        let x = g.input(image.clone());
        let leaves = self.leaves(&mut g, ks, head);
        let phi = self.record_features(&mut g, x, &leaves.kernels)?;
        let rows = self.rows_for(g.value(phi).shape()[2])?;
        let out = self.record_head(&mut g, phi, &rows, &leaves)?;
        Ok(ScalePrediction { rows, logits: g.real(out)?.cast() })
    }

    /// Class at the input's own resolution.
    pub fn predict(&self, image: &Tensor<T>) -> Result<usize> {
        Ok(self.forward(image)?.predict())
    }
}

/// Graph form of the losses on a `[rows, classes]` logit node: returns
/// `(ce_sum, hinge)` scalar nodes.
pub fn record_losses<T: Scalar>(g: &mut Graph<T>, logits: NodeId, label: usize) -> Result<(NodeId, NodeId)> {
    let rows = g.value(logits).shape()[0];
    let ce = g.softmax_ce(logits, vec![label; rows])?;
    let ce_sum = g.sum(ce)?;
    let hinge = if rows < 2 {
        g.input(Tensor::scalar(T::zero()))
    } else {
        let hi = g.slice(ce, 0, 1, rows)?;
        let lo = g.slice(ce, 0, 0, rows - 1)?;
        let d = g.sub(hi, lo)?;
        let r = g.relu(d)?;
        g.sum(r)?
    };
    Ok((ce_sum, hinge))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(rows: Vec<usize>, logits: &[f64], m: usize) -> ScalePrediction {
        ScalePrediction { logits: Tensor::from_f64(&[rows.len(), m], logits).unwrap(), rows }
    }

    #[test]
    fn uniform_logits_ce_sum() {
        let p = pred(vec![8, 9, 10], &[0.0; 30], 10);
        assert!((ce_sum_loss(&p, 4).unwrap() - 3.0 * 10f64.ln()).abs() < 1e-12);
        assert!(ce_sum_loss(&p, 10).is_err());
    }

    #[test]
    fn hinge_arithmetic() {
        assert_eq!(hinge_of(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(hinge_of(&[1.0, 1.5]), 0.5);
        assert_eq!(hinge_of(&[1.5, 1.0]), 0.0);
        assert_eq!(hinge_of(&[2.0]), 0.0);
    }

    #[test]
    fn argmax_tie_goes_to_lowest_class() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 5.0, 1.0]), 3);
        assert_eq!(argmax(&[0.0, 2.0, 0.0, 0.0, 2.0]), 1);
    }

    #[test]
    fn larger_margin_lowers_ce() {
        let mut last = f64::INFINITY;
        for margin in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let ce = cross_entropy(&[margin, 0.0, 0.0], 0);
            assert!(ce < last);
            last = ce;
        }
    }

    #[test]
    fn default_config_matches_reference_shapes() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.flat_features(), 32 * 49);
        assert_eq!(c.blocks(), 3);
    }
}
