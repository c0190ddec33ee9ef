//! Checks that each layer commutes with ideal downsampling, next to a
//! spatial ReLU that does not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sefnet::autodiff::PoolKind;
use sefnet::layers::{EquiNonlinearity, EquiPool, FourierConv, LocalFourierKernel, PoolSpec, ScaleSet, SpectralMap};
use sefnet::verify::{claim1_probe, spatial_relu};

fn main() -> sefnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scales = ScaleSet::range(8, 28)?;
    let conv = FourierConv::new(LocalFourierKernel::<f64>::random(2, 2, 7, 28, &mut rng)?, scales.clone());
    let nonlin = EquiNonlinearity::new(scales.clone());
    let pool = EquiPool { spec: PoolSpec { window: 2, kind: PoolKind::Max }, scales: scales.clone() };
    let control = spatial_relu::<f64>();
    let layers: [&dyn SpectralMap<f64>; 4] = [&conv, &nonlin, &pool, &control];
    for layer in layers {
        let devs = [12, 16, 20]
            .iter()
            .map(|&m| claim1_probe(layer, 2, 28, m, 2, &mut rng).map(|d| format!("{d:.1e}")))
            .collect::<sefnet::Result<Vec<_>>>()?;
        println!("{:<28} deviation at 12/16/20: {}", layer.name(), devs.join(" "));
    }
    Ok(())
}
