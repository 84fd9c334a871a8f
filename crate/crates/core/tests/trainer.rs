//! End-to-end training runs on small synthetic scenes.

use gsscale::scene::SynthConfig;
use gsscale::train::{
    bench_report, load_dataset, train, write_dataset, DensifyConfig, Mode, SceneSource, TrainConfig, TrainReport,
};
use gsscale::Error;

fn small(mode: Mode, iterations: u64) -> TrainConfig {
    TrainConfig {
        scene: SceneSource::Synth(SynthConfig {
            gaussians: 400,
            cameras: 16,
            width: 32,
            height: 32,
            ..Default::default()
        }),
        iterations,
        mode,
        ..Default::default()
    }
}

#[test]
fn zero_iterations_report_the_initial_state() {
    let t = train(&small(Mode::OffloadPipelined, 0)).unwrap();
    let r = &t.report;
    assert!(r.losses.is_empty());
    assert_eq!(r.initial_gaussians, r.final_gaussians);
    assert_eq!(r.test_views, vec![7, 15]);
    assert!(r.mean_psnr.is_finite() && r.mean_psnr > 0.0);
    let d = load_dataset::<f32>(&small(Mode::DenseOracle, 0).scene, 1).unwrap();
    assert_eq!(t.gaussians, d.init.cast());
}

#[test]
fn dense_loss_falls_over_every_window() {
    let r = train(&TrainConfig {
        iterations: 200,
        mode: Mode::DenseOracle,
        ..Default::default()
    })
    .unwrap()
    .report;
    let means: Vec<f64> = r.losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn modes_agree_on_quality() {
    let reports: Vec<TrainReport> = [Mode::DenseOracle, Mode::OffloadSerial, Mode::OffloadPipelined]
        .into_iter()
        .map(|m| train(&small(m, 150)).unwrap().report)
        .collect();
    assert_eq!(reports[1].losses, reports[2].losses);
    for r in &reports[1..] {
        assert!((r.mean_psnr - reports[0].mean_psnr).abs() <= 0.05);
    }
    let tables = bench_report(&reports).unwrap();
    let mut memory = csv::Reader::from_reader(tables.memory_csv.as_bytes());
    for row in memory.records() {
        let row = row.unwrap();
        let parts: usize = (2..7).map(|k| row[k].parse::<usize>().unwrap()).sum();
        assert_eq!(parts, row[7].parse::<usize>().unwrap());
    }
    assert_eq!(tables.psnr_csv.lines().count(), 4);
}

fn densifying(mode: Mode) -> TrainConfig {
    TrainConfig {
        verify_f64: true,
        defer_max: 0,
        densify: DensifyConfig {
            enabled: true,
            start: 20,
            interval: 20,
            stop: 100,
            grad_threshold: 2e-5,
            ..Default::default()
        },
        ..small(mode, 100)
    }
}

#[test]
fn densification_is_identical_across_modes() {
    let a = train(&densifying(Mode::DenseOracle)).unwrap();
    let b = train(&densifying(Mode::OffloadPipelined)).unwrap();
    assert!(!a.report.densify.is_empty(), "nothing densified");
    assert_eq!(a.report.densify, b.report.densify);
    assert_eq!(a.gaussians, b.gaussians);
    assert_eq!(a.report.losses, b.report.losses);
    let total = a.report.densify.last().unwrap().after;
    assert_eq!(total, a.report.final_gaussians);
}

#[test]
fn invalid_configs_fail_before_training() {
    let mut cfg = small(Mode::OffloadSerial, 10);
    cfg.chunk_bytes = 1000;
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
    let mut cfg = small(Mode::OffloadSerial, 10);
    cfg.densify.grad_threshold = 0.0;
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
}

#[test]
fn trains_from_a_dataset_directory() {
    let cfg = small(Mode::OffloadPipelined, 20);
    let data = load_dataset::<f32>(&cfg.scene, 1).unwrap();
    let SceneSource::Synth(synth) = &cfg.scene else { unreachable!() };
    let points = gsscale::scene::synth_scene_with::<f32>(synth).points;
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data, &points).unwrap();
    let r = train(&TrainConfig {
        scene: SceneSource::Dataset(dir.path().to_path_buf()),
        ..cfg
    })
    .unwrap()
    .report;
    assert_eq!(r.losses.len(), 20);
    assert_eq!(r.initial_gaussians, 400);
    let back = TrainReport::from_json(&r.to_json().unwrap()).unwrap();
    assert_eq!(back.losses, r.losses);
}
