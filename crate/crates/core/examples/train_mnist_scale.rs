//! Builds a small multi-resolution digit set from the bundled MNIST subset,
//! trains for one epoch and round-trips the checkpoint.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sefnet::checkpoint;
use sefnet::data::{build_mnist_scale, find_idx_pair, load_idx};
use sefnet::layers::ScaleSet;
use sefnet::model::{train, EquiNetwork, ModelConfig, TrainConfig};
use sefnet::resample::AntiAliasMode;

fn main() -> sefnet::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let (images, labels) = find_idx_pair(&dir, "train").expect("bundled digits under data/mnist");
    let source = load_idx(&images, &labels)?;
    let scales = ScaleSet::range(8, 28)?;
    let splits = build_mnist_scale(&source, 0, &scales, AntiAliasMode::Ideal, &[300, 0, 100])?;
    let (train_set, test_set) = (splits[0].labeled::<f32>(), splits[2].labeled::<f32>());

    let mut net = EquiNetwork::<f32>::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig { epochs: 1, workers: 1, ..Default::default() };
    let report = train(&mut net, &train_set, &[], &cfg, &mut |r| {
        println!("epoch {} {}: loss {:.3}, accuracy {:.3} ({:.0}s)", r.epoch, r.split, r.loss, r.accuracy, r.seconds)
    })?;
    println!("initial loss {:.3}, {} steps", report.initial_loss, report.steps);
    let t = net.evaluate(&test_set, cfg.lambda, 1)?;
    println!("test: accuracy {:.3}, scale consistency {:.3}", t.accuracy(), t.scale_con());

    let bytes = checkpoint::encode(&net)?;
    let back: EquiNetwork<f32> = checkpoint::decode(&bytes)?;
    println!("checkpoint: {} bytes, reload identical: {}", bytes.len(), checkpoint::encode(&back)? == bytes);
    Ok(())
}
