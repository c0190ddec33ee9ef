//! Spectral-domain resampling against the spatial definition `Sub_R(h * x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sefnet::resample::{
    fourier_resample, gaussian_downsample, gaussian_kernel, ideal_downsample, ideal_downsample_spatial,
    ideal_lowpass, ideal_upsample, subsample, AntiAliasMode,
};
use sefnet::spectral::{self, band_crop};
use sefnet::verify::spatial_ideal_downsample;
use sefnet::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(n: usize, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(&[n, n], |_| r.gen_range(-1.0..1.0))
}

#[test]
fn spectral_downsampling_matches_direct_convolution_oracle() {
    let mut r = rng(1);
    for (n, f) in [(8usize, 2usize), (12, 2), (12, 3), (12, 4), (16, 4), (28, 2), (28, 7), (27, 3), (30, 5)] {
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let want = spatial_ideal_downsample(&x, f);
        let got = ideal_downsample(&Tensor::new(vec![n], x.clone()).unwrap(), f, 1).unwrap();
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "N={n} R={f}: {err:e}");
    }
}

#[test]
fn two_dimensional_downsampling_is_the_separable_oracle() {
    let mut r = rng(2);
    for (n, f) in [(8usize, 2usize), (28, 2), (28, 4), (15, 3)] {
        let x = image(n, &mut r);
        let m = n / f;
        let rows: Vec<Vec<f64>> = x.data().chunks(n).map(|row| spatial_ideal_downsample(row, f)).collect();
        let mut want = vec![0.0; m * m];
        for c in 0..m {
            let col: Vec<f64> = rows.iter().map(|row| row[c]).collect();
            for (i, v) in spatial_ideal_downsample(&col, f).into_iter().enumerate() {
                want[i * m + c] = v;
            }
        }
        let got = ideal_downsample(&x, f, 2).unwrap();
        let spatial = ideal_downsample_spatial(&x, f, 2).unwrap();
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "N={n} R={f}: {err:e}");
        assert!(spatial.max_abs_diff(&got) <= 1e-12);
    }
}

#[test]
fn spectrum_of_resampled_image_is_the_cropped_band() {
    let mut r = rng(3);
    let x = image(28, &mut r);
    for m in [8usize, 13, 14, 27] {
        let y = fourier_resample(&x, m, 2).unwrap();
        let lhs = spectral::dft2(&y).unwrap();
        let rhs = band_crop(&spectral::dft2(&x).unwrap(), m).unwrap();
        assert!(lhs.coeffs().max_abs_diff(rhs.coeffs()) <= 1e-14);
    }
}

#[test]
fn identities() {
    let mut r = rng(4);
    let x = image(12, &mut r);
    assert_eq!(fourier_resample(&x, 12, 2).unwrap(), x);
    assert_eq!(ideal_lowpass(&x, 1, 2).unwrap(), x);
    assert_eq!(subsample(&x, 1, 2).unwrap(), x);
    assert_eq!(AntiAliasMode::GAUSSIAN.downsample(&x, 12, 2).unwrap(), x);
    // band-limited upsampling is undone exactly by downsampling
    for n in [12usize, 13, 24, 31] {
        let up = ideal_upsample(&x, n, 2).unwrap();
        assert!(fourier_resample(&up, 12, 2).unwrap().max_abs_diff(&x) <= 1e-12);
    }
    // low-pass is idempotent
    let lp = ideal_lowpass(&x, 3, 2).unwrap();
    assert!(ideal_lowpass(&lp, 3, 2).unwrap().max_abs_diff(&lp) <= 1e-12);
}

#[test]
fn invalid_rates_are_rejected() {
    let x = Tensor::<f64>::zeros(&[8, 8]);
    assert!(fourier_resample(&x, 9, 2).is_err());
    assert!(fourier_resample(&x, 0, 2).is_err());
    assert!(ideal_downsample(&x, 0, 2).is_err());
    assert!(subsample(&x, 9, 2).is_err());
    assert!(fourier_resample(&Tensor::<f64>::zeros(&[8, 7]), 4, 2).is_err());
}

#[test]
fn gaussian_mode_is_normalized_and_not_ideal() {
    for sigma in [0.3, 1.0, 2.5] {
        let k = gaussian_kernel(sigma, 28);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(k[1] == k[27]);
    }
    let mode = AntiAliasMode::GAUSSIAN;
    assert_eq!(mode.sigma(28, 28), 1e-3);
    assert!(mode.sigma(28, 14) > mode.sigma(28, 20));
    let c = Tensor::<f64>::from_fn(&[28, 28], |_| 0.7);
    let y = gaussian_downsample(&c, 13, mode, 2).unwrap();
    assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    let mut r = rng(5);
    let x = image(28, &mut r);
    let g = mode.downsample(&x, 14, 2).unwrap();
    let i = AntiAliasMode::Ideal.downsample(&x, 14, 2).unwrap();
    assert_eq!(g.shape(), &[14, 14]);
    assert!(g.max_abs_diff(&i) > 1e-3);
}

#[test]
fn mode_names_and_tags_round_trip() {
    for mode in [AntiAliasMode::Ideal, AntiAliasMode::GAUSSIAN] {
        assert_eq!(mode.to_string().parse::<AntiAliasMode>().unwrap(), mode);
        assert_eq!(AntiAliasMode::from_tag(mode.tag()), Some(mode));
    }
    assert!("bicubic".parse::<AntiAliasMode>().is_err());
}

#[test]
fn single_precision_path_agrees() {
    let mut r = rng(6);
    let x = image(28, &mut r);
    let xf = x.cast::<f32>();
    for m in [8usize, 14, 21] {
        let a = fourier_resample(&x, m, 2).unwrap();
        let b = fourier_resample(&xf, m, 2).unwrap().cast::<f64>();
        assert!(a.max_abs_diff(&b) <= 1e-5);
    }
}
