mod common;

use nalgebra::DMatrix;
use plume_scout::assimilation::{
    analysis_error_trace, analysis_with_exclusion, blue_analysis, BackgroundCov, CovarianceModel, Observation,
    ObservationSet,
};
use plume_scout::scenario::{gaussian_plume_field, load_field_csv, mae, make_grid, sample_background, write_field_csv, BackgroundSpec};
use plume_scout::{Field, PlumeSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_blue, dense_posterior_trace, max_rel, random_spd};

struct Instance {
    xb: Field,
    b: DMatrix<f64>,
    cov: BackgroundCov,
    cells: Vec<usize>,
    y: Vec<f64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=12);
    let m = rng.random_range(0..=n);
    let b = random_spd(n, &mut rng);
    let xb = Field::new(make_grid(1, n, 1.0).unwrap(), (0..n).map(|_| rng.random_range(0.0..50.0)).collect()).unwrap();
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(&mut rng);
    cells.truncate(m);
    let y = (0..m).map(|_| rng.random_range(0.0..50.0)).collect();
    Instance { xb, cov: BackgroundCov::from_matrix(b.clone()).unwrap(), b, cells, y }
}

fn obs_set(cells: &[usize], y: &[f64]) -> ObservationSet {
    ObservationSet::from_entries(
        cells.iter().zip(y).enumerate().map(|(i, (&cell, &value))| Observation { cell, value, agent: i % 3, step: i }).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_dense_oracle(seed in any::<u64>(), noisy in any::<bool>()) {
        let inst = instance(seed);
        let v0 = if noisy { 0.1 } else { 0.0 };
        let got = blue_analysis(&inst.xb, &inst.cov, &obs_set(&inst.cells, &inst.y), v0).unwrap();
        let want = dense_blue(inst.xb.values(), &inst.b, &inst.cells, &inst.y, v0);
        prop_assert!(max_rel(got.values(), &want) < 1e-8);
    }

    #[test]
    fn order_does_not_matter(seed in any::<u64>()) {
        let inst = instance(seed);
        let a = blue_analysis(&inst.xb, &inst.cov, &obs_set(&inst.cells, &inst.y), 0.0).unwrap();
        let mut pairs: Vec<_> = inst.cells.iter().copied().zip(inst.y.iter().copied()).collect();
        pairs.reverse();
        let (c, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = blue_analysis(&inst.xb, &inst.cov, &obs_set(&c, &y), 0.0).unwrap();
        prop_assert!(max_rel(b.values(), a.values()) < 1e-9);
    }

    #[test]
    fn reassimilation_is_idempotent(seed in any::<u64>()) {
        let inst = instance(seed);
        let obs = obs_set(&inst.cells, &inst.y);
        let once = blue_analysis(&inst.xb, &inst.cov, &obs, 0.0).unwrap();
        let twice = blue_analysis(&once, &inst.cov, &obs, 0.0).unwrap();
        prop_assert!(max_rel(twice.values(), once.values()) < 1e-6);
    }

    #[test]
    fn huge_observation_variance_keeps_background(seed in any::<u64>()) {
        let inst = instance(seed);
        let xa = blue_analysis(&inst.xb, &inst.cov, &obs_set(&inst.cells, &inst.y), 1e12).unwrap();
        prop_assert!(max_rel(xa.values(), inst.xb.values()) < 1e-8);
    }

    #[test]
    fn information_never_hurts(seed in any::<u64>(), v0 in prop_oneof![Just(0.0), Just(0.1), Just(5.0)]) {
        let inst = instance(seed);
        let n = inst.xb.len();
        let mut cells = Vec::new();
        let mut prev = analysis_error_trace(&inst.cov, &cells, v0).unwrap();
        prop_assert!((prev - inst.b.trace()).abs() < 1e-9 * inst.b.trace());
        for c in (0..n).rev() {
            cells.push(c);
            let t = analysis_error_trace(&inst.cov, &cells, v0).unwrap();
            let oracle = dense_posterior_trace(&inst.b, &cells, v0);
            prop_assert!((t - oracle).abs() <= 1e-8 * inst.b.trace());
            prop_assert!(t <= prev + 1e-9 * inst.b.trace());
            prev = t;
        }
    }

    #[test]
    fn mae_is_a_metric(a in prop::collection::vec(-50.0f64..50.0, 6), b in prop::collection::vec(-50.0f64..50.0, 6), c in prop::collection::vec(-50.0f64..50.0, 6)) {
        let g = make_grid(2, 3, 1.0).unwrap();
        let (fa, fb, fc) = (Field::new(g, a).unwrap(), Field::new(g, b).unwrap(), Field::new(g, c).unwrap());
        let ab = mae(&fa, &fb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mae(&fa, &fa).unwrap(), 0.0);
        prop_assert_eq!(ab, mae(&fb, &fa).unwrap());
        prop_assert!(mae(&fa, &fc).unwrap() <= ab + mae(&fb, &fc).unwrap() + 1e-12);
        if fa != fb { prop_assert!(ab > 0.0); }
    }

    #[test]
    fn field_csv_round_trips(values in prop::collection::vec(-1e6f64..1e6, 12)) {
        let g = make_grid(3, 4, 10.0).unwrap();
        let f = Field::new(g, values).unwrap();
        let back = load_field_csv(&write_field_csv(&f), &g).unwrap();
        prop_assert!(max_rel(back.values(), f.values()) < 1e-9);
    }
}

#[test]
fn interpolates_observations_on_paperlike_background() {
    let g = make_grid(10, 10, 50.0).unwrap();
    let truth = gaussian_plume_field(&g, &PlumeSpec::paperlike()).unwrap();
    let model = CovarianceModel::default();
    let xb = sample_background(&truth, &model, &BackgroundSpec::default()).unwrap();
    let cov = model.build(&xb).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = rng.random_range(1..40);
        let cells: Vec<usize> = (0..m).map(|_| rng.random_range(0..100)).collect();
        let y: Vec<f64> = cells.iter().map(|&c| truth.values()[c]).collect();
        let xa = blue_analysis(&xb, &cov, &obs_set(&cells, &y), 0.0).unwrap();
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (&c, &v) in cells.iter().zip(&y) {
            assert!((xa.values()[c] - v).abs() < 1e-6 * ymax);
        }
    }
}

#[test]
fn excluding_one_duplicate_equals_the_other_alone() {
    let inst = instance(17);
    let cell = 0;
    let both = ObservationSet::from_entries(vec![
        Observation { cell, value: 3.0, agent: 0, step: 1 },
        Observation { cell, value: 9.0, agent: 1, step: 1 },
    ]);
    let kept_alone = ObservationSet::from_entries(vec![Observation { cell, value: 9.0, agent: 1, step: 1 }]);
    let a = analysis_with_exclusion(&inst.xb, &inst.cov, &both, 0.0, &[(0, 1)]).unwrap();
    let b = blue_analysis(&inst.xb, &inst.cov, &kept_alone, 0.0).unwrap();
    assert_eq!(a, b);
    let none = analysis_with_exclusion(&inst.xb, &inst.cov, &both, 0.0, &[(0, 1), (1, 1)]).unwrap();
    assert_eq!(none, inst.xb);
}

#[test]
fn background_covariance_factorizes_for_random_models() {
    let g = make_grid(10, 10, 50.0).unwrap();
    let truth = gaussian_plume_field(&g, &PlumeSpec::paperlike()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let model = CovarianceModel {
            alpha: rng.random_range(0.0..1.0),
            delta_per_m: rng.random_range(0.0..0.1),
            ..CovarianceModel::default()
        };
        let cov = model.build(&truth).unwrap();
        let l = cov.cholesky_factor();
        assert!((0..100).all(|i| l[(i, i)] > 0.0));
    }
}

#[test]
fn unbiased_background_error_averages_out() {
    // Grand mean error per cell over R draws has std sigma_i / sqrt(R k);
    // check every cell's z-score and the pooled mean.
    let g = make_grid(4, 4, 50.0).unwrap();
    let truth = Field::new(g, (0..16).map(|i| 20.0 + 5.0 * i as f64).collect()).unwrap();
    let model = CovarianceModel { alpha: 0.3, ..CovarianceModel::default() };
    let (r, k) = (400usize, 5usize);
    let mut sum = vec![0.0; 16];
    for seed in 0..r as u64 {
        let xb = sample_background(&truth, &model, &BackgroundSpec { k, bias: 1.0, seed }).unwrap();
        for (s, (b, t)) in sum.iter_mut().zip(xb.values().iter().zip(truth.values())) {
            *s += b - t;
        }
    }
    let mut pooled_z = 0.0;
    for (i, s) in sum.iter().enumerate() {
        let sigma = 0.3 * truth.values()[i];
        let z = (s / r as f64) / (sigma / ((r * k) as f64).sqrt());
        assert!(z.abs() < 4.5, "cell {i}: z = {z}");
        pooled_z += z;
    }
    // Correlated cells: the pooled sum's std is at most n, not sqrt(n).
    assert!(pooled_z.abs() / 16.0 < 3.0);
}

#[test]
fn plume_is_above_background_and_peaks_at_a_source() {
    let g = make_grid(10, 10, 50.0).unwrap();
    let plume = PlumeSpec::paperlike();
    let f = gaussian_plume_field(&g, &plume).unwrap();
    assert!(f.values().iter().all(|&v| v >= plume.background_level_ppm));
    let argmax = (0..100).max_by(|&a, &b| f.values()[a].total_cmp(&f.values()[b])).unwrap();
    assert!(plume.sources.iter().any(|s| g.index(s.row, s.col) == argmax));
}
