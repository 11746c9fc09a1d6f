use coprime_doa::baseline::{music_spectrum, sin_grid, spatial_smooth};
use coprime_doa::bench::*;
use coprime_doa::coarray::*;
use coprime_doa::geometry::ArrayGeometry;
use coprime_doa::sim::{exact_covariance, SourceScene};
use coprime_doa::superres::csr_estimate;

fn cfg(scene: SceneSpec, snapshots: usize, snr_db: Option<f64>, methods: Vec<Method>, epsilon: EpsilonPolicy, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: "t".into(),
        geometry: GeometrySpec::default(),
        scene,
        snapshots,
        snr_db,
        methods,
        epsilon,
        trials,
        seed: 5,
        noise_mode: NoiseModeSpec::Known,
        estimate_noise: false,
        grid_step: 0.005,
        combine: CombineRule::Average,
        resolution_deg: None,
        sweep: None,
        output: None,
    }
}

fn fifteen() -> SceneSpec {
    SceneSpec::SinTheta { values: FIFTEEN_SOURCES.to_vec() }
}

#[test]
fn unknown_noise_recovery_from_exact_covariance() {
    let geom = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
    let scene = SourceScene::new(vec![-0.61, 0.05, 0.42], vec![1.0, 0.5, 2.0], 0.8).unwrap();
    let z = virtualize(&exact_covariance(&geom, &scene).unwrap(), &geom, CombineRule::First).unwrap();
    let vm = to_super_resolution(&z, 0.5, NoisePowerMode::Unknown);
    let est = csr_estimate(&vm, 0.0, 0.0).unwrap();
    assert_eq!(est.spikes.len(), 3, "{est}");
    for ((s, t), p) in est.spikes.iter().zip(&scene.doas).zip(&scene.powers) {
        assert!((s.sin_theta - t).abs() < 1e-5, "{est}");
        assert!((s.amplitude - p).abs() < 1e-3 * p, "{est}");
    }
    assert!((est.noise_power_est - 0.8).abs() < 1e-3);
}

#[test]
fn known_noise_amplitudes_survive_a_loose_refinement_budget() {
    // Equally spaced sources nearly cancel at every nonzero lag, so most of
    // ‖r‖ sits at lag 0.
    let c = cfg(SceneSpec::Uniform { k: 17, span: 0.9 }, 0, Some(0.0), vec![Method::Csorte], EpsilonPolicy::NoiseScaled { epsilon_mult: 5.0, epsilon_d_mult: 2.0 }, 1);
    let r = run_detection_sweep(&ExperimentConfig { sweep: Some(SweepAxis::Sources(vec![17])), ..c }).unwrap();
    assert_eq!(r.records[0].k_hat, Some(17), "{:?}", r.records[0]);
}

#[test]
fn aggregates_recompute_from_records() {
    let mut c = cfg(
        SceneSpec::Random { k: 3, min_separation: 0.2 },
        300,
        Some(0.0),
        vec![Method::Csr, Method::Dsr, Method::Music, Method::RootMusic, Method::Csorte, Method::SorteEig],
        EpsilonPolicy::NoiseScaled { epsilon_mult: 2.0, epsilon_d_mult: 2.0 },
        3,
    );
    c.sweep = Some(SweepAxis::SnrDb(vec![10.0, 0.0]));
    let r = run_accuracy_sweep(&c).unwrap();
    assert_eq!(r.records.len(), 2 * 3 * 6);
    assert_eq!(recompute_aggregates(&r.records), r.aggregates);
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_records_csv(&mut a, &r.records).unwrap();
    write_records_csv(&mut b, &run_accuracy_sweep(&c).unwrap().records).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csr_error_shrinks_with_snapshots() {
    let mut c = cfg(fifteen(), 500, Some(-10.0), vec![Method::Csr], EpsilonPolicy::Absolute { epsilon: 5.0, epsilon_d: 10.0 }, 6);
    c.sweep = Some(SweepAxis::Snapshots(vec![500, 2000, 5000]));
    let r = run_accuracy_sweep(&c).unwrap();
    let med: Vec<f64> = [500.0, 2000.0, 5000.0]
        .iter()
        .map(|&t| r.aggregate(t, Method::Csr).unwrap().median_error.unwrap())
        .collect();
    assert!(med[1] <= med[0] && med[2] <= med[1], "{med:?}");
}

#[test]
fn well_separated_pair_is_resolved_by_every_method() {
    let mut c = cfg(
        SceneSpec::Degrees { values: vec![-15.0, 15.0] },
        500,
        Some(10.0),
        vec![Method::Csr, Method::RootMusic, Method::RootMusicSorte],
        EpsilonPolicy::NoiseScaled { epsilon_mult: 0.7, epsilon_d_mult: 2.0 },
        3,
    );
    c.resolution_deg = Some(0.3);
    let r = run_resolution(&c).unwrap();
    for a in &r.aggregates {
        assert_eq!(a.resolution_prob, Some(1.0), "{}", a.method.name());
    }
    c.scene = SceneSpec::Degrees { values: vec![-15.0, 15.0, 40.0] };
    assert!(run_resolution(&c).is_err());
}

#[test]
fn exported_spectra() {
    let c = cfg(fifteen(), 0, None, vec![Method::Csr], EpsilonPolicy::Absolute { epsilon: 0.0, epsilon_d: 0.0 }, 1);
    let csr = export_spectrum(&c, Method::Csr).unwrap();
    assert_eq!(csr.spikes.len(), 15);
    assert_eq!(csr.grid.len(), 401);
    assert!(csr.values.iter().all(|v| *v <= 1.0 + 1e-6));
    let music = export_spectrum(&c, Method::Music).unwrap();
    assert_eq!(music.values.iter().copied().fold(0.0, f64::max), 1.0);
    let dsr = export_spectrum(&cfg(fifteen(), 0, None, vec![Method::Dsr], EpsilonPolicy::Absolute { epsilon: 0.1, epsilon_d: 0.2 }, 1), Method::Dsr).unwrap();
    assert_eq!(dsr.grid.len(), 401);

    let dir = std::env::temp_dir().join(format!("coprime-doa-export-{}", std::process::id()));
    let files = write_spectrum_files(&c, &csr, &dir).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn music_on_smoothed_exact_coarray_peaks_at_sources() {
    let geom = ArrayGeometry::coprime(3, 5, 0.5).unwrap();
    let doas = vec![-0.5, 0.0, 0.35];
    let scene = SourceScene::equal_power(doas.clone(), 1.0, 0.5).unwrap();
    let z = virtualize(&exact_covariance(&geom, &scene).unwrap(), &geom, CombineRule::Average).unwrap();
    let rss = spatial_smooth(&z).unwrap();
    let grid = sin_grid(0.005).unwrap();
    let spec = music_spectrum(&rss, 3, &grid, 0.5).unwrap();
    let mut peaks: Vec<f64> = spectrum_peaks(&spec, 3).into_iter().map(|i| grid[i]).collect();
    peaks.sort_by(f64::total_cmp);
    for (p, t) in peaks.iter().zip(&doas) {
        assert!((p - t).abs() < 1e-9, "{peaks:?}");
    }
}
