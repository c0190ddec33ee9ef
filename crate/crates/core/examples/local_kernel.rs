//! Expanding an l x l local Fourier kernel to a d x d spectrum.

use num_complex::Complex;
use sefnet::layers::{expand_local_kernel, geometric_sum, geometric_sum_direct};
use sefnet::CTensor;

fn main() -> sefnet::Result<()> {
    for q in [0.0, 1e-12, 0.3, 2.0, -3.1] {
        let (a, b) = (geometric_sum(q, 7), geometric_sum_direct(q, 7));
        println!("q = {q:>7}: closed form {a:.6}, direct {b:.6}");
    }
    // a flat 3x3 spectrum is a spatial delta: it expands to a flat spectrum
    let kl = CTensor::new(vec![3, 3], vec![Complex::new(1.0 / 9.0, 0.0); 9])?;
    for d in [3, 5, 8] {
        let k = expand_local_kernel(&kl, d, 2)?;
        let spread = k.data().iter().map(|c| (c - k.data()[0]).norm()).fold(0.0, f64::max);
        println!("d = {d}: K[0,0] = {:.5}, max spread {spread:.1e}", k.data()[0]);
    }
    Ok(())
}
