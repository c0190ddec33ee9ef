//! A randomly initialized network: per-scale predictions and the
//! equivariance error of its features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sefnet::model::{EquiNetwork, ModelConfig};
use sefnet::resample::AntiAliasMode;
use sefnet::verify::{network_equivariance, random_images};

fn main() -> sefnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = EquiNetwork::<f64>::new(ModelConfig::default(), &mut rng)?;
    println!("{} parameters", net.param_count());
    let images = random_images::<f64>(4, 28, &mut rng);
    let pred = net.forward(&images[0])?;
    for res in [8, 14, 28] {
        println!("prediction from the band of resolution {res}: class {}", pred.predict_at(res)?);
    }
    for mode in [AntiAliasMode::Ideal, AntiAliasMode::GAUSSIAN] {
        let r = network_equivariance(&net, &images, mode, 1)?;
        println!("{mode:?}: mean {:.2e}, max {:.2e}", r.mean, r.max);
    }
    Ok(())
}
