//! Ideal versus Gaussian anti-aliased downsampling of a 1-D signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::resample::{ideal_downsample, AntiAliasMode};
use sefnet::verify::spatial_ideal_downsample;
use sefnet::Tensor;

fn main() -> sefnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![24], v.clone())?;
    for r in [2, 3, 4, 6] {
        let fast = ideal_downsample(&x, r, 1)?;
        let direct = spatial_ideal_downsample(&v, r);
        let err = fast.data().iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let gauss = AntiAliasMode::GAUSSIAN.downsample(&x, 24 / r, 1)?;
        let gap = fast.data().iter().zip(gauss.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("R = {r}: spectral vs direct filter {err:.1e}, ideal vs gaussian {gap:.3}");
    }
    Ok(())
}
