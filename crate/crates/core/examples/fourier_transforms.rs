//! Forward/inverse transforms and band crop/pad on a small image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::spectral::{band_crop, band_pad, dft2, idft2};
use sefnet::Tensor;

fn main() -> sefnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::from_fn(&[8, 8], |_| rng.gen_range(-1.0..1.0));
    let s = dft2(&x)?;
    let back = idft2(&s)?;
    let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("8x8 round trip: max error {err:.1e}");
    println!("DC coefficient (mean): {:.4}", s.at(0, &[0, 0]).re);

    // crop to 4x4 sums the Nyquist pair, pad back splits it
    let small = band_crop(&s, 4)?;
    let padded = band_pad(&small, 8)?;
    println!("crop 8->4: Nyquist (2, 0) = {:.4}", small.at(0, &[2, 0]));
    println!("pad 4->8:  (2, 0) = {:.4}, (-2, 0) = {:.4}", padded.at(0, &[2, 0]), padded.at(0, &[-2, 0]));
    let again = band_crop(&padded, 4)?;
    let d = small.coeffs().data().iter().zip(again.coeffs().data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("crop(pad(X)) = X: max deviation {d:.1e}");
    Ok(())
}
