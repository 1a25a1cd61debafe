mod common;

use common::{random_image, reconstruction_ulps, rng};
use haspn::dataio::{
    generate_phantom, make_sample_pair, random_crop, trim_width, undersample_columns, Image,
};
use haspn::frequency::{decompose, gaussian_blur, gaussian_kernel, usm_sharpen};
use haspn::metrics::{psnr, ssim, SsimMode, SsimParams};
use haspn::trainer::{bicubic_columns, SampleGrid};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..=1.0, h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (5usize..24, 5usize..24).prop_flat_map(|(h, w)| image(h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_reconstructs_within_one_ulp(img in sized_image()) {
        let d = decompose(&img).unwrap();
        prop_assert!(reconstruction_ulps(&img, &d.blurred, &d.residual) <= 1.0);
    }

    #[test]
    fn sharpening_with_zero_gain_is_identity(img in sized_image()) {
        prop_assert_eq!(usm_sharpen(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn blur_stays_within_the_input_range(img in sized_image()) {
        let b = gaussian_blur(&img, &gaussian_kernel(5, 1.5).unwrap()).unwrap();
        prop_assert!(b.min() >= img.min() - 1e-12 && b.max() <= img.max() + 1e-12);
    }

    #[test]
    fn constant_offset_psnr(img in image(8, 8), d in 0.01f64..0.5) {
        let shifted = img.map(|v| v + d);
        let expected = -20.0 * d.log10();
        prop_assert!((psnr(&shifted, &img, 1.0).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric_bounded_and_one_on_identity(a in image(16, 16), b in image(16, 16)) {
        let p = SsimParams::default();
        for mode in [SsimMode::Global, SsimMode::Windowed] {
            let ab = ssim(&a, &b, &p, mode).unwrap();
            let ba = ssim(&b, &a, &p, mode).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ssim(&a, &a, &p, mode).unwrap(), 1.0);
        }
    }

    #[test]
    fn undersampling_keeps_every_kth_column(h in 1usize..10, cols in 1usize..8, k in prop::sample::select(vec![1usize, 2, 4, 8]), seed in 0u64..1000) {
        let img = random_image(h, cols * k, &mut rng(seed));
        let lr = undersample_columns(&img, k).unwrap();
        prop_assert_eq!((lr.height(), lr.width()), (h, cols));
        for y in 0..h {
            for x in 0..cols {
                prop_assert_eq!(lr.get(y, x), img.get(y, x * k));
            }
        }
    }

    #[test]
    fn bicubic_baseline_restores_the_kept_columns(h in 1usize..6, cols in 1usize..8, k in prop::sample::select(vec![2usize, 4, 8]), seed in 0u64..1000) {
        let hr = random_image(h, cols * k, &mut rng(seed));
        let up = bicubic_columns(&undersample_columns(&hr, k).unwrap(), k, SampleGrid::Aligned).unwrap();
        prop_assert_eq!(up.width(), hr.width());
        for y in 0..h {
            for x in (0..hr.width()).step_by(k) {
                prop_assert_eq!(up.get(y, x), hr.get(y, x));
            }
        }
    }

    #[test]
    fn trimming_makes_width_divisible(h in 1usize..6, w in 8usize..40, k in prop::sample::select(vec![2usize, 4, 8])) {
        let img = Image::filled(h, w, 0.5).unwrap();
        let t = trim_width(&img, k).unwrap();
        prop_assert_eq!(t.width() % k, 0);
        prop_assert!(w - t.width() < k);
    }

    #[test]
    fn crops_are_windows_of_the_source(seed in 0u64..10_000, size in 1usize..24) {
        let img = random_image(24, 30, &mut rng(seed));
        let c = random_crop(&img, size, seed).unwrap();
        prop_assert_eq!(&c, &random_crop(&img, size, seed).unwrap());
        let found = (0..=24 - size).any(|t| (0..=30 - size).any(|l| {
            (0..size).all(|y| (0..size).all(|x| c.get(y, x) == img.get(t + y, l + x)))
        }));
        prop_assert!(found);
    }

    #[test]
    fn sample_pairs_are_consistent(seed in 0u64..200, k in prop::sample::select(vec![2usize, 4, 8])) {
        let hr = generate_phantom(seed, 32, 48).unwrap();
        let p = make_sample_pair(&hr, k).unwrap();
        prop_assert_eq!(p.lr.clone(), undersample_columns(&hr, k).unwrap());
        prop_assert_eq!(p.hr_hf, decompose(&hr).unwrap().residual);
        prop_assert_eq!(p.lr_hf, decompose(&p.lr).unwrap().residual);
    }
}

#[test]
fn phantom_decomposition_reconstructs_within_one_ulp() {
    for seed in 0..20 {
        let img = generate_phantom(seed, 48, 40).unwrap();
        let d = decompose(&img).unwrap();
        assert!(
            reconstruction_ulps(&img, &d.blurred, &d.residual) <= 1.0,
            "phantom {seed}"
        );
    }
}

#[test]
fn psnr_of_a_tenth_is_twenty_decibels() {
    let a = Image::filled(16, 16, 0.2).unwrap();
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&b, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
}
