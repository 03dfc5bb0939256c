use fracpe::fbm::*;
use fracpe::rng::Half;
use proptest::prelude::*;

const PAIRS: [(usize, usize); 6] = [(1, 1), (2, 4), (4, 4), (4, 8), (1, 8), (8, 8)];

/// Sample covariance of `B(s)B(t)` and its standard error.
fn cov_estimate(samples: &[Vec<f64>], i: usize, j: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let prods: Vec<f64> = samples.iter().map(|v| v[i] * v[j]).collect();
    let mean = prods.iter().sum::<f64>() / n;
    let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_law(gen: &FbmGenerator<f64>, n_paths: u64, stream: u64) {
    let h = gen.hurst();
    let samples: Vec<Vec<f64>> = (0..n_paths)
        .map(|s| gen.sample_values(s, stream, Half::Forward))
        .collect();
    for &(i, j) in &PAIRS {
        let (s, t) = (i as f64 * gen.dt(), j as f64 * gen.dt());
        let (est, se) = cov_estimate(&samples, i, j);
        let want = 0.5 * (s.powf(2.0 * h.value()) + t.powf(2.0 * h.value()) - (t - s).abs().powf(2.0 * h.value()));
        assert!(
            (est - want).abs() < 4.0 * se,
            "H {} ({s},{t}): {est} vs {want} ± {se}",
            h.value()
        );
    }
}

#[test]
fn embedding_reproduces_fbm_covariance() {
    for h in [0.6, 0.75] {
        let gen = FbmGenerator::new(HurstIndex::new(h).unwrap(), 0.25, 9).unwrap();
        check_law(&gen, 20_000, 0);
    }
}

#[test]
fn cholesky_reproduces_fbm_covariance() {
    let gen = FbmGenerator::new_cholesky(HurstIndex::new(0.7).unwrap(), 0.25, 9).unwrap();
    check_law(&gen, 20_000, 1);
}

#[test]
fn unit_lag_covariance_at_one_two() {
    // ½(1 + 2^{1.5} − 1) = √2 for H = 3/4
    let h = HurstIndex::new(0.75).unwrap();
    assert!((h.covariance(1.0, 2.0) - 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn backward_half_is_independent_fbm() {
    let h = HurstIndex::new(0.75).unwrap();
    let n_paths = 20_000u64;
    let paths: Vec<Vec<f64>> = (0..n_paths)
        .map(|s| {
            let f = sample_fbm(h, 0.25, 9, s, 0).unwrap();
            two_sided_extend(&f, s + 1_000_000).unwrap().path.values().to_vec()
        })
        .collect();
    // index 8 is t = 0; index 0 is t = -2, index 16 is t = 2
    let (back, se) = cov_estimate(&paths, 0, 4);
    let want = h.covariance(2.0, 1.0);
    assert!((back - want).abs() < 4.0 * se);
    let (cross, se) = cov_estimate(&paths, 4, 12);
    assert!(cross.abs() < 4.0 * se, "cross {cross} ± {se}");
}

#[test]
fn sidecar_file_round_trip_regenerates_path() {
    let dir = std::env::temp_dir().join(format!("fracpe-fbm-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let h = HurstIndex::new(0.8).unwrap();
    let f = two_sided_extend(&sample_fbm(h, 1.0 / 64.0, 129, 42, 7).unwrap(), 43).unwrap();
    let csv = dir.join("path.csv");
    let side = dir.join("path.json");
    f.write(
        std::fs::File::create(&csv).unwrap(),
        std::fs::File::create(&side).unwrap(),
    )
    .unwrap();
    let sidecar: FbmSidecar = serde_json::from_reader(std::fs::File::open(&side).unwrap()).unwrap();
    assert_eq!(sidecar.regenerate::<f64>().unwrap(), f);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,value"));
    for (line, v) in lines.zip(f.path.values()) {
        let parsed: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, *v);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn stationarity_check_passes_clean_and_flags_drift() {
    let h = HurstIndex::new(0.7).unwrap();
    let gen = FbmGenerator::new(h, 0.25, 33).unwrap();
    let clean: Vec<_> = (0..2000).map(|s| gen.sample(s, 0).unwrap()).collect();
    let r = increment_stationarity_check(&clean, 0.25, (0.0, 2.0), (4.0, 6.0)).unwrap();
    assert!(r.passed, "{r:?}");
    let drifted: Vec<_> = clean
        .iter()
        .map(|p| {
            let mut q = p.clone();
            let t0 = q.path.t0();
            let dt = q.path.dt();
            let vals: Vec<f64> = q
                .path
                .values()
                .iter()
                .enumerate()
                .map(|(k, v)| v + 0.05 * (t0 + k as f64 * dt).powi(2))
                .collect();
            q.path = fracpe::fraccalc::GridFunction::new(t0, dt, vals).unwrap();
            q
        })
        .collect();
    let r = increment_stationarity_check(&drifted, 0.25, (0.0, 2.0), (4.0, 6.0)).unwrap();
    assert!(!r.passed, "{r:?}");
}

#[test]
fn long_grids_sample_finite_paths() {
    let h = HurstIndex::new(0.9).unwrap();
    let gen = FbmGenerator::new(h, 1.0 / 1024.0, 4097).unwrap();
    let v: Vec<f64> = gen.sample_values(3, 0, Half::Forward);
    assert_eq!(v.len(), 4097);
    assert!(v.iter().all(|x| x.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn paths_are_keyed_and_self_similar_in_scale(seed in 0u64..1_000_000, h in 0.55f64..0.95) {
        let hi = HurstIndex::new(h).unwrap();
        let a = FbmGenerator::new(hi, 1.0, 65).unwrap().sample_values(seed, 3, Half::Forward);
        let b = FbmGenerator::new(hi, 0.5, 65).unwrap().sample_values(seed, 3, Half::Forward);
        // same underlying noise scaled by dt^H
        let c = 0.5f64.powf(h);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((c * x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        prop_assert_eq!(a[0], 0.0);
    }

    #[test]
    fn covariance_is_symmetric_and_scales(s in 0.0f64..5.0, t in 0.0f64..5.0, c in 0.1f64..4.0, h in 0.05f64..0.95) {
        let hi = HurstIndex::new(h).unwrap();
        prop_assert!((hi.covariance(s, t) - hi.covariance(t, s)).abs() < 1e-12);
        let scaled = hi.covariance(c * s, c * t);
        prop_assert!((scaled - c.powf(2.0 * h) * hi.covariance(s, t)).abs() < 1e-9 * (1.0 + scaled.abs()));
    }
}
