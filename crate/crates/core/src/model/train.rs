use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::parallel::{default_workers, par_map};
use crate::tensor::{Scalar, Tensor, Value};

use super::{hinge_of, param_names, record_losses, AdamConfig, Adam, EquiNetwork, KernelSet, ScalePrediction};

/// A labelled square image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub image: Tensor<T>,
    pub label: usize,
}

impl<T: Scalar> LabeledImage<T> {
    pub fn resolution(&self) -> usize {
        self.image.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the consistency hinge.
    pub lambda: f64,
    pub adam: AdamConfig,
    /// Step decay: multiply the rate by `lr_gamma` every `lr_step` epochs (0 = off).
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub seed: u64,
    /// Stop after the epoch during which this wall-clock budget ran out.
    pub max_seconds: Option<f64>,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lambda: 1.0,
            adam: AdamConfig::default(),
            lr_step: 0,
            lr_gamma: 0.1,
            seed: 0,
            max_seconds: None,
            workers: default_workers(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub ce: f64,
    pub hinge: f64,
    pub accuracy: f64,
    pub scale_con: f64,
    pub samples: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub initial_loss: f64,
    pub steps: u64,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn last(&self, split: &str) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

/// Running sums for loss, accuracy, and the scale-consistent rate.
#[derive(Clone, Debug, Default)]
pub struct Tally {
    loss: f64,
    ce: f64,
    hinge: f64,
    correct: usize,
    count: usize,
    con_sum: f64,
    con_count: usize,
    per_res: BTreeMap<usize, (usize, usize)>,
}

impl Tally {
    pub fn add(&mut self, pred: &ScalePrediction, label: usize, lambda: f64) -> Result<()> {
        let ce = pred.ce(label)?;
        let (s, h) = (ce.iter().sum::<f64>(), hinge_of(&ce));
        self.loss += s + lambda * h;
        self.ce += s;
        self.hinge += h;
        let hit = pred.predict() == label;
        self.correct += hit as usize;
        self.count += 1;
        let n = *pred.rows.last().expect("non-empty rows");
        let e = self.per_res.entry(n).or_default();
        e.0 += hit as usize;
        e.1 += 1;
        if let Some(rate) = consistency_rate(&ce) {
            self.con_sum += rate;
            self.con_count += 1;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn loss(&self) -> f64 {
        self.loss / self.count.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count.max(1) as f64
    }

    /// Mean over samples that have at least one lower resolution; NaN when none do.
    pub fn scale_con(&self) -> f64 {
        if self.con_count == 0 {
            f64::NAN
        } else {
            self.con_sum / self.con_count as f64
        }
    }

    /// `(resolution, correct, total)` rows.
    pub fn per_resolution(&self) -> Vec<(usize, usize, usize)> {
        self.per_res.iter().map(|(&r, &(c, t))| (r, c, t)).collect()
    }

    fn record(&self, epoch: usize, split: &str, seconds: f64) -> EpochRecord {
        let n = self.count.max(1) as f64;
        EpochRecord {
            epoch,
            split: split.into(),
            loss: self.loss(),
            ce: self.ce / n,
            hinge: self.hinge / n,
            accuracy: self.accuracy(),
            scale_con: self.scale_con(),
            samples: self.count,
            seconds,
        }
    }
}

/// Fraction of lower rows whose CE is at least the top row's CE.
/// `None` when there is no lower row.
pub fn consistency_rate(ce: &[f64]) -> Option<f64> {
    let (&top, lower) = ce.split_last()?;
    if lower.is_empty() {
        return None;
    }
    Some(lower.iter().filter(|&&c| top <= c).count() as f64 / lower.len() as f64)
}

impl<T: Scalar> EquiNetwork<T> {
    /// Forward passes over `data`, in parallel, in input order.
    pub fn predict_all(&self, data: &[LabeledImage<T>], workers: usize) -> Result<Vec<ScalePrediction>> {
        let mut cache: HashMap<usize, KernelSet<T>> = HashMap::new();
        for x in data {
            let n = x.resolution();
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(n) {
                e.insert(self.kernels_at(n)?);
            }
        }
        let head = self.shared_head();
        par_map(data, workers, |x| self.forward_with(&x.image, &cache[&x.resolution()], &head))
            .into_iter()
            .collect()
    }

    /// Loss, accuracy, Scale-Con, and per-resolution accuracy on a dataset.
    pub fn evaluate(&self, data: &[LabeledImage<T>], lambda: f64, workers: usize) -> Result<Tally> {
        let mut t = Tally::default();
        for (p, x) in self.predict_all(data, workers)?.iter().zip(data) {
            t.add(p, x.label, lambda)?;
        }
        Ok(t)
    }
}

/// Batches of equal resolution, shuffled deterministically per epoch.
pub fn epoch_batches<T: Scalar>(data: &[LabeledImage<T>], batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut by_res: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        by_res.entry(data[i].resolution()).or_default().push(i);
    }
    let mut batches: Vec<Vec<usize>> = by_res
        .values()
        .flat_map(|v| v.chunks(batch.max(1)).map(<[usize]>::to_vec))
        .collect();
    batches.shuffle(&mut rng);
    batches
}

struct BatchOutcome<T: Scalar> {
    grads: Vec<Tensor<T>>,
    preds: Vec<ScalePrediction>,
}

/// Forward and backward over one equal-resolution batch. Returns summed
/// parameter gradients.
fn batch_gradients<T: Scalar>(net: &EquiNetwork<T>, data: &[LabeledImage<T>], idx: &[usize], lambda: f64) -> Result<BatchOutcome<T>> {
    let n = data[idx[0]].resolution();
    let ks = net.kernels_at(n)?;
    let head = net.shared_head();
    let names = param_names(net.config.blocks());
    let mut acc: BTreeMap<String, Value<T>> = BTreeMap::new();
    let mut preds = Vec::with_capacity(idx.len());
    for &i in idx {
        let x = &data[i];
        if x.resolution() != n {
            return Err(Error::invalid("batch mixes resolutions"));
        }
        let mut g = Graph::new();
        let img = g.input(x.image.clone());
        let leaves = net.leaves(&mut g, &ks, &head);
        let phi = net.record_features(&mut g, img, &leaves.kernels)?;
        let rows = net.rows_for(g.value(phi).shape()[2])?;
        let logits = net.record_head(&mut g, phi, &rows, &leaves)?;
        let (ce, hinge) = record_losses(&mut g, logits, x.label)?;
        let loss = if lambda == 0.0 {
            ce
        } else {
            let h = g.scale(hinge, T::c(lambda))?;
            g.add(ce, h)?
        };
        preds.push(ScalePrediction { rows, logits: g.real(logits)?.cast() });
        let grads = g.backward(loss)?;
        for (name, v) in grads.into_params() {
            match acc.get_mut(&name) {
                Some(a) => a.accumulate(&v)?,
                None => {
                    acc.insert(name, v);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(names.len());
    let mut scales = net.config.scales.clone();
    let mut res = n;
    for (b, name) in names.iter().enumerate() {
        let v = acc.remove(name).ok_or_else(|| Error::invalid(format!("no gradient for `{name}`")))?;
        if b < net.kernels.len() {
            out.push(net.kernels[b].pullback(v.as_complex()?, res, &scales)?);
            let w = net.config.pool_windows[b];
            if w > 1 {
                res /= w;
                scales = scales.pooled(w)?;
            }
        } else {
            out.push(v.as_real()?.clone());
        }
    }
    if out.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(BatchOutcome { grads: out, preds })
}

/// Minimizes the mean over samples of `sum_k CE + lambda * hinge` with Adam.
///
/// `log` receives one record per split and epoch; epoch 0 is the untrained
/// model. On a non-finite loss or gradient the network keeps its last finite
/// parameters and `Error::Diverged` is returned.
pub fn train<T: Scalar>(
    net: &mut EquiNetwork<T>,
    train_set: &[LabeledImage<T>],
    val_set: &[LabeledImage<T>],
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for x in train_set.iter().chain(val_set) {
        net.check_resolution(x.resolution())?;
    }
    let start = Instant::now();
    let mut records = Vec::new();
    let mut emit = |r: EpochRecord, records: &mut Vec<EpochRecord>| {
        log(&r);
        records.push(r);
    };
    let init = net.evaluate(train_set, cfg.lambda, cfg.workers)?;
    let initial_loss = init.loss();
    emit(init.record(0, "train", start.elapsed().as_secs_f64()), &mut records);
    if !val_set.is_empty() {
        let v = net.evaluate(val_set, cfg.lambda, cfg.workers)?;
        emit(v.record(0, "val", start.elapsed().as_secs_f64()), &mut records);
    }

    let mut opt = Adam::new(cfg.adam);
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        let lr = match cfg.lr_step {
            0 => cfg.adam.lr,
            s => cfg.adam.lr * cfg.lr_gamma.powi(((epoch - 1) / s) as i32),
        };
        let mut tally = Tally::default();
        for idx in epoch_batches(train_set, cfg.batch_size, cfg.seed, epoch) {
            let out = batch_gradients(net, train_set, &idx, cfg.lambda).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged { epoch, msg: format!("non-finite {what}") },
                other => other,
            })?;
            for (p, &i) in out.preds.iter().zip(&idx) {
                tally.add(p, train_set[i].label, cfg.lambda)?;
            }
            if !tally.loss.is_finite() {
                return Err(Error::Diverged { epoch, msg: "non-finite loss".into() });
            }
            let mut params: Vec<&mut Tensor<T>> = net.params_mut().into_iter().map(|(_, t)| t).collect();
            opt.step(&mut params, &out.grads, 1.0 / idx.len() as f64, lr)?;
        }
        epochs_run = epoch;
        emit(tally.record(epoch, "train", start.elapsed().as_secs_f64()), &mut records);
        if !val_set.is_empty() {
            let v = net.evaluate(val_set, cfg.lambda, cfg.workers)?;
            emit(v.record(epoch, "val", start.elapsed().as_secs_f64()), &mut records);
        }
        if cfg.max_seconds.is_some_and(|m| start.elapsed().as_secs_f64() >= m) {
            break;
        }
    }
    Ok(TrainReport { records, initial_loss, steps: opt.steps(), epochs_run })
}
