//! Reverse-mode gradients through a spectral pipeline against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::autodiff::{grad_check_real, Graph};
use sefnet::layers::{EquiNonlinearity, ScaleSet, SpectralMap};
use sefnet::Tensor;

fn main() -> sefnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scales = ScaleSet::new(vec![4, 6, 8])?;
    let x = Tensor::<f64>::from_fn(&[2, 8, 8], |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::<f64>::from_fn(&[2, 8, 8], |_| rng.gen_range(-1.0..1.0));
    let err = grad_check_real(
        |x| {
            let mut g = Graph::new();
            let p = g.param("x", x.clone());
            let s = g.dft(p, 2)?;
            let y = EquiNonlinearity::new(scales.clone()).record(&mut g, s)?;
            let y = g.idft(y, 2)?;
            let w = g.input(w.clone());
            let yw = g.mul(y, w)?;
            let loss = g.sum(yw)?;
            let v = g.real(loss)?.data()[0];
            Ok((v, g.backward(loss)?.real("x")?.clone()))
        },
        &x,
        1e-5,
    )?;
    println!("nonlinearity gradient: max relative error {err:.2e}");
    Ok(())
}
