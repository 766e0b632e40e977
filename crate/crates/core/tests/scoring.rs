use exdd::bank::{BankPair, MemoryBank, Polarity};
use exdd::localization::{distance_map, ratio_map, weighted_distance_map};
use exdd::patch::{PatchConfig, PatchGrid};
use exdd::reduction::make_projection;
use exdd::scoring::{max_min_distance, ratio_score, score_image, ScoreMode, ScoreOptions};
use exdd::{Error, RunConfig, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bank(polarity: Polarity, dim: usize, vectors: Vec<f32>) -> MemoryBank {
    let n = vectors.len() / dim;
    MemoryBank {
        polarity,
        dim,
        vectors,
        subsample_rate: 1.0,
        source_count: n,
        covering_radius: 0.0,
        coreset_seed: 0,
        augmented_count: 0,
    }
}

fn pair(dim: usize, negative: Vec<f32>, positive: Option<Vec<f32>>) -> BankPair {
    BankPair {
        projection: make_projection(dim, dim, 0).unwrap(),
        patch: PatchConfig::default(),
        store_projected: false,
        negative: bank(Polarity::Negative, dim, negative),
        positive: positive.map(|v| bank(Polarity::Positive, dim, v)),
        config: RunConfig::default(),
    }
}

fn opts(b: usize, mode: ScoreMode) -> ScoreOptions {
    ScoreOptions {
        b,
        epsilon: 1e-6,
        mode,
        positive_at_negative_patch: false,
    }
}

fn single_patch(v: Vec<f32>) -> PatchGrid {
    let d = v.len();
    PatchGrid::new(1, 1, d, v, (8, 8)).unwrap()
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

#[test]
fn test_on_the_negative_vector_is_nominal() {
    let banks = pair(2, vec![0.0, 0.0], Some(vec![3.0, 4.0]));
    let rec = score_image(
        &single_patch(vec![0.0, 0.0]),
        &banks,
        &opts(1, ScoreMode::Ratio),
    )
    .unwrap();
    assert_eq!(rec.s_n, 0.0);
    assert_eq!(rec.s_ratio, 0.0);
}

#[test]
fn test_on_the_positive_vector_scores_huge() {
    // b = 2 with single-vector banks is impossible, so use b = 1 (w_N = 0)
    // and check the unweighted components instead.
    let banks = pair(2, vec![0.0, 0.0], Some(vec![3.0, 4.0]));
    let rec = score_image(
        &single_patch(vec![3.0, 4.0]),
        &banks,
        &opts(1, ScoreMode::Ratio),
    )
    .unwrap();
    assert_eq!(rec.s_n_star, 5.0);
    assert_eq!(rec.s_p_star, Some(0.0));
    assert_eq!(rec.s_ratio, ratio_score(rec.s_n, 0.0, 1e-6));
    assert_eq!(ratio_score(1.0, 0.0, 1e-6), 1e6);
}

#[test]
fn ratio_mode_without_positive_bank_names_the_fallback() {
    let banks = pair(2, vec![0.0, 0.0, 1.0, 1.0], None);
    let err = score_image(
        &single_patch(vec![0.5, 0.5]),
        &banks,
        &opts(2, ScoreMode::Ratio),
    )
    .unwrap_err();
    assert!(matches!(err, Error::MissingPositiveBank));
    assert!(err.to_string().contains("negative_only"));
}

#[test]
fn negative_only_ignores_the_positive_bank() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let d = rng.random_range(1..8);
        let grid = PatchGrid::new(3, 4, d, random(&mut rng, 12 * d), (24, 32)).unwrap();
        let neg = random(&mut rng, 20 * d);
        let with = pair(d, neg.clone(), Some(random(&mut rng, 10 * d)));
        let without = pair(d, neg, None);
        let o = opts(3, ScoreMode::NegativeOnly);
        let a = score_image(&grid, &with, &o).unwrap();
        let b = score_image(&grid, &without, &o).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.s_ratio, a.s_n);
        assert!(a.s_p.is_none() && a.w_p_star.is_none());
    }
}

#[test]
fn max_over_unweighted_distance_map_is_s_n_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let d = rng.random_range(1..10);
        let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
        let grid = PatchGrid::new(h, w, d, random(&mut rng, h * w * d), (8 * h, 8 * w)).unwrap();
        let banks = pair(d, random(&mut rng, 30 * d), Some(random(&mut rng, 30 * d)));
        let rec = score_image(&grid, &banks, &opts(3, ScoreMode::Ratio)).unwrap();
        let map = distance_map(&grid, &banks.negative).unwrap();
        let max = map
            .as_f32()
            .unwrap()
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(max, rec.s_n_star);
    }
}

// Scaling every vector by c scales every distance by c, so the max-min patch
// and s_N_star order across a test set are preserved. The density weight
// depends on distances through exp(-dist / sqrt(d)) and is not scale-free, so
// the order of weighted negative_only scores is not guaranteed; only the
// unweighted part is checked exactly.
#[test]
fn common_scaling_preserves_unweighted_negative_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let d = 6;
    let neg = random(&mut rng, 40 * d);
    let tests: Vec<Vec<f32>> = (0..25).map(|_| random(&mut rng, 9 * d)).collect();
    for c in [0.25f32, 2.0, 8.0] {
        let scaled_bank: Vec<f32> = neg.iter().map(|x| x * c).collect();
        let (a, b) = (pair(d, neg.clone(), None), pair(d, scaled_bank, None));
        for t in &tests {
            let g = PatchGrid::new(3, 3, d, t.clone(), (24, 24)).unwrap();
            let gs = PatchGrid::new(3, 3, d, t.iter().map(|x| x * c).collect(), (24, 24)).unwrap();
            let r = max_min_distance(&g, &a.negative).unwrap();
            let rs = max_min_distance(&gs, &b.negative).unwrap();
            assert_eq!(
                (r.test_patch_index, r.bank_index),
                (rs.test_patch_index, rs.bank_index)
            );
            assert!((rs.distance - c * r.distance).abs() <= 1e-5 * rs.distance.max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn ratio_strictly_decreases_in_s_p(s_n in 0.01f32..100.0, p1 in 0.0f32..100.0, dp in 0.01f32..100.0, eps in 1e-6f32..1e-2) {
        prop_assert!(ratio_score(s_n, p1 + dp, eps) < ratio_score(s_n, p1, eps));
        prop_assert_eq!(ratio_score(0.0, p1, eps), 0.0);
    }

    #[test]
    fn ratio_map_is_monotone(n in prop::collection::vec(0.0f32..10.0, 6), p in prop::collection::vec(0.0f32..10.0, 6), k in 0usize..6, bump in 0.01f32..5.0) {
        let nt = Tensor::from_f32(vec![2, 3], n.clone()).unwrap();
        let pt = Tensor::from_f32(vec![2, 3], p.clone()).unwrap();
        let base = ratio_map(&nt, &pt, 1e-6).unwrap();
        let mut n2 = n.clone();
        n2[k] += bump;
        let mut p2 = p.clone();
        p2[k] += bump;
        let up = ratio_map(&Tensor::from_f32(vec![2, 3], n2).unwrap(), &pt, 1e-6).unwrap();
        let down = ratio_map(&nt, &Tensor::from_f32(vec![2, 3], p2).unwrap(), 1e-6).unwrap();
        let (b, u, dn) = (base.as_f32().unwrap(), up.as_f32().unwrap(), down.as_f32().unwrap());
        prop_assert!(u[k] >= b[k]);
        prop_assert!(dn[k] <= b[k]);
        for j in (0..6).filter(|&j| j != k) {
            prop_assert_eq!(u[j], b[j]);
            prop_assert_eq!(dn[j], b[j]);
        }
    }

    #[test]
    fn weighted_maps_stay_below_distance_maps(seed in any::<u64>(), b in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..8);
        let grid = PatchGrid::new(4, 4, d, random(&mut rng, 16 * d), (32, 32)).unwrap();
        let bk = bank(Polarity::Negative, d, random(&mut rng, 12 * d));
        let dist = distance_map(&grid, &bk).unwrap();
        let wn = weighted_distance_map(&grid, &bk, b, Polarity::Negative).unwrap();
        let wp = weighted_distance_map(&grid, &bk, b, Polarity::Positive).unwrap();
        for ((x, n), p) in dist.as_f32().unwrap().iter().zip(wn.as_f32().unwrap()).zip(wp.as_f32().unwrap()) {
            prop_assert!(*n >= 0.0 && *n <= *x);
            prop_assert!(*p >= 0.0 && *p <= *x);
        }
    }
}
