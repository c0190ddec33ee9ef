//! Whole-network behaviour: equivariance of features and logits, training,
//! divergence handling, and checkpoints.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::checkpoint;
use sefnet::layers::{LocalFourierKernel, ScaleSet};
use sefnet::model::{
    argmax, ce_sum_loss, consistency_hinge_loss, consistency_rate, cross_entropy, epoch_batches, hinge_of,
    param_names, train, Adam, AdamConfig, EquiNetwork, LabeledImage, ModelConfig, Tally, TrainConfig,
};
use sefnet::resample::fourier_resample;
use sefnet::spectral::{band_crop, Spectrum};
use sefnet::{Error, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(pool: usize) -> ModelConfig {
    ModelConfig {
        channels: vec![1, 3, 4],
        localities: vec![3, 5],
        resolution: 12,
        scales: ScaleSet::new(vec![4, 6, 7, 8, 10, 12]).unwrap(),
        pool_windows: vec![1, pool],
        head_pool: 2,
        hidden: 8,
        classes: 3,
        ..Default::default()
    }
}

fn image(n: usize, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(&[n, n], |_| r.gen::<f64>())
}

#[test]
fn default_configuration_shapes() {
    let c = ModelConfig::default();
    assert_eq!(c.blocks(), 3);
    assert_eq!(c.feature_resolution(), 28);
    assert_eq!(c.flat_features(), 32 * 7 * 7);
    c.validate().unwrap();
    assert_eq!(
        param_names(2),
        ["block0.kernel", "block1.kernel", "head.w1", "head.b1", "head.w2", "head.b2"]
    );
    let bad = ModelConfig { localities: vec![7, 11], ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = ModelConfig { resolution: 32, ..Default::default() };
    assert!(bad.validate().is_err());
    assert!(ModelConfig { localities: vec![6, 11, 11], ..Default::default() }
        .validate()
        .and_then(|_| EquiNetwork::<f64>::new(ModelConfig { localities: vec![6, 11, 11], ..Default::default() }, &mut rng(0)).map(|_| ()))
        .is_err());
}

#[test]
fn initialization_statistics() {
    let net = EquiNetwork::<f64>::new(ModelConfig::default(), &mut rng(1)).unwrap();
    let w1 = &net.head.w1;
    let var = w1.norm_sqr() / w1.len() as f64;
    assert!((var / (2.0 / 1568.0) - 1.0).abs() < 0.05, "w1 variance {var}");
    assert!(net.head.b1.data().iter().all(|&v| v == 0.0));
    assert!(net.head.b2.data().iter().all(|&v| v == 0.0));
    let expected: usize = 16 * 49 + 32 * 16 * 121 + 32 * 32 * 121 + 1568 * 128 + 128 + 128 * 10 + 10;
    assert_eq!(net.param_count(), expected);
}

fn crop(x: &sefnet::CTensor<f64>, m: usize) -> sefnet::CTensor<f64> {
    band_crop(&Spectrum::new(x.clone(), 2).unwrap(), m).unwrap().into_coeffs()
}

#[test]
fn features_commute_with_downsampling() {
    for pool in [1usize, 2] {
        let mut r = rng(2);
        let net = EquiNetwork::<f64>::new(tiny(pool), &mut r).unwrap();
        let x = image(12, &mut r);
        let phi = net.forward_features(&x).unwrap();
        for &m in net.config.scales.as_slice() {
            if m % pool != 0 {
                continue;
            }
            let small = net.forward_features(&fourier_resample(&x, m, 2).unwrap()).unwrap();
            let err = crop(&phi, m / pool).max_abs_diff(&small) / small.norm_sqr().sqrt().max(1e-300);
            assert!(err <= 1e-10, "pool {pool} m={m}: {err:e}");
        }
    }
}

#[test]
fn logit_rows_depend_only_on_their_band() {
    let mut r = rng(3);
    let net = EquiNetwork::<f64>::new(tiny(1), &mut r).unwrap();
    let x = image(12, &mut r);
    let full = net.forward(&x).unwrap();
    assert_eq!(full.rows, vec![4, 6, 7, 8, 10, 12]);
    for &m in &[4usize, 7, 8, 10] {
        let p = net.forward(&fourier_resample(&x, m, 2).unwrap()).unwrap();
        let i = full.rows.iter().position(|&k| k == m).unwrap();
        assert_eq!(p.rows, full.rows[..=i].to_vec());
        for j in 0..=i {
            let d = p.row(j).iter().zip(full.row(j)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-9, "m={m} row {j}: {d:e}");
        }
    }
}

#[test]
fn prediction_paths_agree() {
    let mut r = rng(4);
    let net = EquiNetwork::<f64>::new(tiny(2), &mut r).unwrap();
    let data: Vec<LabeledImage<f64>> = [12usize, 8, 6, 12, 4]
        .iter()
        .map(|&n| LabeledImage { image: image(n, &mut r), label: r.gen_range(0..3) })
        .collect();
    let batch = net.predict_all(&data, 3).unwrap();
    for (p, x) in batch.iter().zip(&data) {
        let single = net.forward(&x.image).unwrap();
        assert!(p.logits.max_abs_diff(&single.logits) <= 1e-12);
        assert_eq!(net.predict(&x.image).unwrap(), argmax(single.row(single.rows.len() - 1)));
    }
    let serial = net.predict_all(&data, 1).unwrap();
    assert_eq!(serial, batch);
    assert!(net.forward(&image(9, &mut r)).is_err());
    assert!(net.forward(&image(14, &mut r)).is_err());
}

#[test]
fn zero_image_gives_bias_logits() {
    let mut r = rng(5);
    let net = EquiNetwork::<f64>::new(tiny(1), &mut r).unwrap();
    let p = net.forward(&Tensor::zeros(&[12, 12])).unwrap();
    assert!(p.logits.data().iter().all(|&v| v == 0.0));
    assert_eq!(p.predict(), 0);
}

#[test]
fn delta_block_without_normalization_passes_positive_constants() {
    let cfg = ModelConfig {
        channels: vec![1, 1],
        localities: vec![3],
        resolution: 8,
        scales: ScaleSet::new(vec![4, 8]).unwrap(),
        pool_windows: vec![1],
        normalize: false,
        head_pool: 1,
        hidden: 2,
        classes: 2,
    };
    let mut net = EquiNetwork::<f64>::new(cfg, &mut rng(6)).unwrap();
    net.kernels[0] = LocalFourierKernel::delta(1, 3, 8).unwrap();
    let x = Tensor::from_fn(&[8, 8], |_| 0.25);
    let f = net.features_spatial(&x).unwrap();
    // the spectral product is a circular convolution carrying a 1/d^2 factor
    assert!(f.data().iter().all(|v| (v - 0.25 / 64.0).abs() < 1e-12));
}

#[test]
fn loss_helpers() {
    let ce = [2.0, 1.0, 1.5, 0.5];
    assert!((hinge_of(&ce) - 0.5).abs() < 1e-15);
    assert_eq!(consistency_rate(&ce), Some(1.0));
    assert_eq!(consistency_rate(&[0.1, 0.3]), Some(0.0));
    assert_eq!(consistency_rate(&[0.3]), None);
    assert!((cross_entropy(&[0.0, 0.0], 1) - 2f64.ln()).abs() < 1e-15);
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    let p = sefnet::model::ScalePrediction {
        rows: vec![4, 8],
        logits: Tensor::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 0.0]).unwrap(),
    };
    let ce = p.ce(0).unwrap();
    assert!((ce_sum_loss(&p, 0).unwrap() - ce.iter().sum::<f64>()).abs() < 1e-15);
    assert_eq!(consistency_hinge_loss(&p, 0).unwrap(), 0.0);
    assert!(consistency_hinge_loss(&p, 1).unwrap() > 0.0);
    assert!(p.ce(2).is_err());
    let mut t = Tally::default();
    t.add(&p, 0, 1.0).unwrap();
    assert_eq!(t.accuracy(), 1.0);
    assert_eq!(t.scale_con(), 1.0);
    assert_eq!(t.per_resolution(), vec![(8, 1, 1)]);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut x = Tensor::<f64>::from_f64(&[3], &[5.0, -3.0, 1.0]).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() });
    for _ in 0..500 {
        let g = x.map(|v| 2.0 * v);
        opt.step(&mut [&mut x], &[g], 1.0, 0.1).unwrap();
    }
    assert!(x.norm_sqr() < 1e-4, "{:?}", x.data());
    assert_eq!(opt.steps(), 500);
}

/// Two classes: mass in the top or the bottom half, at several resolutions.
fn halves(count: usize, seed: u64) -> Vec<LabeledImage<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let label = i % 2;
            let big = Tensor::from_fn(&[12, 12], |p| {
                let row = p / 12;
                let bright = (row < 6) == (label == 0);
                (if bright { 0.8 } else { 0.1 }) + 0.1 * r.gen::<f64>()
            });
            let n = [12usize, 8, 6][i % 3];
            LabeledImage { image: fourier_resample(&big, n, 2).unwrap(), label }
        })
        .collect()
}

fn small_train_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        batch_size: 8,
        lambda,
        adam: AdamConfig { lr: 1e-2, ..Default::default() },
        seed: 3,
        workers: 2,
        ..Default::default()
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = halves(48, 7);
    let val = halves(12, 8);
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut net = EquiNetwork::<f64>::new(tiny(1), &mut rng(9)).unwrap();
        let mut lines = 0;
        let report = train(&mut net, &data, &val, &small_train_config(1.0), &mut |_| lines += 1).unwrap();
        assert_eq!(lines, report.records.len());
        assert_eq!(report.epochs_run, 6);
        assert_eq!(report.steps, 6 * 6);
        let last = report.last("train").unwrap();
        assert!(last.loss < report.initial_loss, "{} vs {}", last.loss, report.initial_loss);
        assert!(report.last("val").unwrap().accuracy >= 0.75);
        runs.push(net);
    }
    for ((_, a), (_, b)) in runs[0].params().iter().zip(runs[1].params()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn zero_lambda_trains_on_cross_entropy_only() {
    let data = halves(16, 10);
    let mut net = EquiNetwork::<f64>::new(tiny(1), &mut rng(11)).unwrap();
    let cfg = TrainConfig { epochs: 1, ..small_train_config(0.0) };
    let report = train(&mut net, &data, &[], &cfg, &mut |_| {}).unwrap();
    for rec in &report.records {
        assert!((rec.loss - rec.ce).abs() <= 1e-12 * rec.ce.abs().max(1.0));
        assert!(rec.hinge >= 0.0);
    }
}

#[test]
fn batches_group_resolutions_and_cover_every_sample() {
    let data = halves(30, 12);
    let b = epoch_batches(&data, 4, 5, 1);
    let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
    seen.sort();
    assert_eq!(seen, (0..30).collect::<Vec<_>>());
    for batch in &b {
        assert!(batch.len() <= 4);
        assert!(batch.iter().all(|&i| data[i].resolution() == data[batch[0]].resolution()));
    }
    assert_eq!(b, epoch_batches(&data, 4, 5, 1));
    assert_ne!(b, epoch_batches(&data, 4, 5, 2));
}

#[test]
fn non_finite_input_is_rejected_before_any_update() {
    let mut data = halves(8, 13);
    data[3].image.data_mut()[5] = f64::NAN;
    let mut net = EquiNetwork::<f64>::new(tiny(1), &mut rng(14)).unwrap();
    let before: Vec<Tensor<f64>> = net.params().into_iter().map(|(_, t)| t.clone()).collect();
    let err = train(&mut net, &data, &[], &small_train_config(1.0), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    for ((_, a), b) in net.params().iter().zip(&before) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn overflowing_updates_report_divergence_with_finite_parameters() {
    let data = halves(16, 13);
    let mut net = EquiNetwork::<f64>::new(tiny(1), &mut rng(14)).unwrap();
    let cfg = TrainConfig { adam: AdamConfig { lr: 1e200, ..Default::default() }, epochs: 3, ..small_train_config(1.0) };
    let err = train(&mut net, &data, &[], &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    assert!(net.params().iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn checkpoints_round_trip_across_widths() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(15);
    let net = EquiNetwork::<f64>::new(tiny(2), &mut r).unwrap();
    let path = dir.path().join("m.sefw");
    checkpoint::save(&net, &path).unwrap();
    let back: EquiNetwork<f64> = checkpoint::load(&path).unwrap();
    assert_eq!(back.config, net.config);
    for ((na, a), (nb, b)) in net.params().iter().zip(back.params()) {
        assert_eq!(na, &nb);
        assert_eq!(a.data(), b.data());
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SEFW");
    assert_eq!(checkpoint::scalar_name(&bytes).unwrap(), "f64");
    let narrow: EquiNetwork<f32> = checkpoint::decode(&bytes).unwrap();
    let x = image(12, &mut r);
    let a = net.forward(&x).unwrap();
    let b = narrow.forward(&x.cast()).unwrap();
    assert!(a.logits.max_abs_diff(&b.logits) < 1e-3);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::decode::<f64>(&bad).is_err());
    assert!(checkpoint::decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(checkpoint::decode::<f64>(&long).is_err());

    let mut params: HashMap<String, Tensor<f64>> =
        net.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    params.remove("head.b2");
    assert!(EquiNetwork::from_params(net.config.clone(), params).is_err());
}
