use exdd::localization::render_map;
use exdd::resample::{gaussian_blur, gaussian_kernel};
use exdd::Tensor;
use proptest::prelude::*;

/// Direct 2-D convolution with the outer-product kernel, mirroring indices
/// at the border as `... b a | a b ...`.
fn ref_blur(data: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mirror = |i: i64, n: usize| -> usize {
        let n = n as i64;
        let mut i = i.rem_euclid(2 * n);
        if i >= n {
            i = 2 * n - 1 - i;
        }
        i as usize
    };
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let wgt = k[(dy + r) as usize] as f64 * k[(dx + r) as usize] as f64;
                    acc +=
                        wgt * data[mirror(y as i64 + dy, h) * w + mirror(x as i64 + dx, w)] as f64;
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[test]
fn kernel_sums_to_one_and_spans_four_sigma() {
    let k = gaussian_kernel(2.0);
    assert_eq!(k.len(), 17);
    assert!((k.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(gaussian_kernel(0.0), vec![1.0]);
}

#[test]
fn single_hot_mass_is_preserved() {
    let (h, w) = (40, 50);
    for (y, x) in [(20, 25), (0, 0), (1, 49), (39, 3)] {
        let mut data = vec![0.0f32; h * w];
        data[y * w + x] = 1.0;
        let out = gaussian_blur(&data, (h, w), 2.0);
        let mass: f64 = out.iter().map(|&v| v as f64).sum();
        assert!((mass - 1.0).abs() <= 1e-3, "mass {mass} at ({y}, {x})");
        let want = ref_blur(&data, h, w, 2.0);
        for (g, r) in out.iter().zip(&want) {
            assert!((*g as f64 - r).abs() <= 1e-6);
        }
    }
}

#[test]
fn constant_grid_renders_constant() {
    let grid = Tensor::from_f32(vec![3, 5], vec![2.5; 15]).unwrap();
    let map = render_map(&grid, (24, 40), 2.0).unwrap();
    assert!(map.values.iter().all(|&v| (v - 2.5).abs() < 1e-5));
}

#[test]
fn backbone_geometry_renders_full_image() {
    let grid: Vec<f32> = (0..28 * 79).map(|i| (i % 13) as f32).collect();
    let grid = Tensor::from_f32(vec![28, 79], grid).unwrap();
    let map = render_map(&grid, (224, 632), 2.0).unwrap();
    assert_eq!((map.height, map.width), (224, 632));
    assert_eq!(map.to_tensor().shape(), &[224, 632]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heat.pgm");
    map.write_pgm(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"P5\n632 224\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 224 * 632);
}

#[test]
fn zero_sigma_skips_blur() {
    let grid = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let map = render_map(&grid, (2, 2), 0.0).unwrap();
    assert_eq!(map.values, vec![1.0, 2.0, 3.0, 4.0]);
}

proptest! {
    #[test]
    fn blur_matches_direct_convolution(
        (h, w) in (1usize..12, 1usize..12),
        sigma in 0.3f32..3.0,
        data in prop::collection::vec(0.0f32..10.0, 144),
    ) {
        let data = &data[..h * w];
        let got = gaussian_blur(data, (h, w), sigma);
        let want = ref_blur(data, h, w, sigma);
        for (g, r) in got.iter().zip(&want) {
            prop_assert!((*g as f64 - r).abs() <= 1e-5 * r.abs().max(1.0));
        }
        prop_assert!(got.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn blur_is_linear(
        a in prop::collection::vec(-5.0f32..5.0, 64),
        b in prop::collection::vec(-5.0f32..5.0, 64),
        c in -3.0f32..3.0,
    ) {
        let mix: Vec<f32> = a.iter().zip(&b).map(|(x, y)| c * x + y).collect();
        let (ba, bb, bm) = (gaussian_blur(&a, (8, 8), 1.5), gaussian_blur(&b, (8, 8), 1.5), gaussian_blur(&mix, (8, 8), 1.5));
        for i in 0..64 {
            prop_assert!((bm[i] - (c * ba[i] + bb[i])).abs() <= 1e-4);
        }
    }
}
