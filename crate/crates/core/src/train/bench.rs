//! Optimizer access benchmark and cross-report comparison tables.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{Mode, TrainReport};
use crate::error::{Error, Result};
use crate::optim::{
    adam_step_dense, deferred_update, materialize, restore_view, AccessReport, GradBuffer, Group, Hyperparams, ParamBlock,
    DEFAULT_MAX_DEFER,
};
use crate::real::max_rel_err;
use crate::render::frustum_cull;
use crate::scene::{synth_scene_with, SynthConfig, APP_DIM, GEO_DIM, PARAM_DIM};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub gaussians: usize,
    pub cameras: usize,
    pub iterations: u64,
    /// Target fraction of Gaussians visible per view.
    pub coverage: f64,
    pub defer_max: u8,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            gaussians: 20_000,
            cameras: 40,
            iterations: 200,
            coverage: 0.08,
            defer_max: DEFAULT_MAX_DEFER,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    /// Columns updated by the host optimizer.
    pub host_columns: usize,
    pub param_state_bytes: usize,
    pub counter_bytes: usize,
    /// Parameter plus counter traffic of the host optimizer.
    pub optimizer_bytes: usize,
    /// Reads for forwarding, reported apart from the optimizer traffic.
    pub forward_bytes: usize,
    pub ratio_to_dense: f64,
    pub mean_used_ratio: f64,
    pub seconds: f64,
    /// Largest relative deviation of the final parameters from dense Adam.
    pub max_rel_err: f64,
}

/// Runs the host optimizer three ways over the same sparse gradient stream:
/// dense Adam on all 59 columns, deferred Adam on all 59, and deferred Adam
/// on the 49 appearance columns with forwarding of each next view.
pub fn bench_optimizer(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.gaussians == 0 || cfg.cameras == 0 {
        return Err(Error::Config("benchmark needs Gaussians and cameras".into()));
    }
    let scene = synth_scene_with::<f32>(
        &SynthConfig {
            seed: cfg.seed,
            gaussians: cfg.gaussians,
            cameras: cfg.cameras,
            render_images: false,
            ..SynthConfig::default()
        }
        .with_coverage(cfg.coverage),
    );
    let n = cfg.gaussians;
    let visible: Vec<Vec<u32>> = scene
        .cameras
        .iter()
        .map(|c| frustum_cull(&scene.truth.geometric, c, 3.0, 0.3))
        .collect();
    let view_ids = |t: u64| &visible[t as usize % visible.len()];
    let mean_used = (0..cfg.iterations).map(|t| view_ids(t).len() as f64).sum::<f64>() / (cfg.iterations.max(1) as f64 * n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbe7c);
    // Unit-scale magnitudes keep eps small against sqrt(v), where the
    // restoration shortcut is accurate.
    let mag = Uniform::new(0.1f32, 1.0).unwrap();
    let grads: Vec<GradBuffer<f32>> = (0..cfg.iterations)
        .map(|t| {
            let mut g = GradBuffer::zeros(view_ids(t).clone(), PARAM_DIM);
            for x in g.rows.iter_mut() {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *x = sign * mag.sample(&mut rng);
            }
            g
        })
        .collect();
    let hp = Hyperparams::default();
    let init: Vec<f32> = (0..n).flat_map(|i| scene.init.row(i)).collect();

    // Dense reference.
    let t0 = Instant::now();
    let cols = Group::full_columns();
    let mut dense = ParamBlock::new(init.clone(), cols.clone(), 0);
    let mut dense_access = AccessReport::default();
    let mut dense_grad = vec![0.0f32; n * PARAM_DIM];
    for (t, g) in grads.iter().enumerate() {
        dense_grad.iter_mut().for_each(|x| *x = 0.0);
        for (k, &id) in g.ids.iter().enumerate() {
            dense_grad[id as usize * PARAM_DIM..(id as usize + 1) * PARAM_DIM].copy_from_slice(g.row(k));
        }
        let b = &mut dense;
        adam_step_dense(&mut b.params, &mut b.m, &mut b.v, &dense_grad, &cols, t as u64 + 1, &hp);
        dense_access.add(&AccessReport::dense(n, PARAM_DIM, 4));
    }
    let dense_s = t0.elapsed().as_secs_f64();
    let steps = cfg.iterations + 1;

    // Deferred over every column.
    let t0 = Instant::now();
    let mut full = ParamBlock::new(init.clone(), cols, cfg.defer_max);
    let mut full_access = AccessReport::default();
    for (t, g) in grads.iter().enumerate() {
        let touched = deferred_update(&mut full, g, t as u64 + 1, &hp);
        full_access.add(&AccessReport::deferred(touched.len(), n, PARAM_DIM, 4));
    }
    let full_s = t0.elapsed().as_secs_f64();
    materialize(&mut full, steps, &hp);

    // Appearance columns only, forwarding the next view's rows each step.
    let t0 = Instant::now();
    let app_init: Vec<f32> = scene.init.appearance.clone();
    let mut app = ParamBlock::new(app_init, Group::appearance_columns(), cfg.defer_max);
    let mut app_access = AccessReport::default();
    let mut staging = Vec::new();
    let app_grads: Vec<GradBuffer<f32>> = grads.iter().map(|g| g.columns(GEO_DIM..PARAM_DIM)).collect();
    for (t, g) in app_grads.iter().enumerate() {
        let next = view_ids(t as u64 + 1);
        staging.resize(next.len() * APP_DIM, 0.0);
        restore_view(&app, next, Some(g), t as u64 + 1, &hp, &mut staging);
        let touched = deferred_update(&mut app, g, t as u64 + 1, &hp);
        let mut r = AccessReport::deferred(touched.len(), n, APP_DIM, 4);
        r.forward_bytes = next.len() * 3 * APP_DIM * 4;
        app_access.add(&r);
    }
    let app_s = t0.elapsed().as_secs_f64();
    materialize(&mut app, steps, &hp);

    let dense_app: Vec<f32> = (0..n)
        .flat_map(|i| dense.row(i)[GEO_DIM..].to_vec())
        .collect();
    let base = dense_access.optimizer_bytes() as f64;
    let row = |mode: &str, cols: usize, a: &AccessReport, s: f64, err: f64| BenchRow {
        mode: mode.into(),
        host_columns: cols,
        param_state_bytes: a.param_state_bytes(),
        counter_bytes: a.counter_bytes,
        optimizer_bytes: a.optimizer_bytes(),
        forward_bytes: a.forward_bytes,
        ratio_to_dense: a.optimizer_bytes() as f64 / base,
        mean_used_ratio: mean_used,
        seconds: s,
        max_rel_err: err,
    };
    Ok(vec![
        row("dense", PARAM_DIM, &dense_access, dense_s, 0.0),
        row("deferred", PARAM_DIM, &full_access, full_s, max_rel_err(&full.params, &dense.params, 1e-3)),
        row("deferred+forwarding", APP_DIM, &app_access, app_s, max_rel_err(&app.params, &dense_app, 1e-3)),
    ])
}

pub struct BenchTables {
    /// Device memory breakdown at each run's peak.
    pub memory_csv: String,
    /// Peak model bytes of each run against the first dense run.
    pub ratio_csv: String,
    pub psnr_csv: String,
}

fn to_csv<S: Serialize>(rows: &[S]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
}

#[derive(Serialize)]
struct MemoryRow<'a> {
    run: usize,
    mode: &'a Mode,
    params: usize,
    states: usize,
    grads: usize,
    staging: usize,
    activations: usize,
    total: usize,
    host_total: usize,
}

#[derive(Serialize)]
struct RatioRow<'a> {
    run: usize,
    mode: &'a Mode,
    peak_model_bytes: usize,
    dense_peak_model_bytes: usize,
    dense_over_run: f64,
    peak_total_bytes: usize,
}

#[derive(Serialize)]
struct PsnrRow<'a> {
    run: usize,
    mode: &'a Mode,
    precision: &'a str,
    mean_psnr: f64,
    gap_to_dense: f64,
    final_gaussians: usize,
}

pub fn bench_report(reports: &[TrainReport]) -> Result<BenchTables> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to compare".into()));
    }
    let dense = reports.iter().find(|r| r.mode == Mode::DenseOracle);
    let memory: Vec<MemoryRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let b = r.memory.at_peak;
            MemoryRow {
                run: i,
                mode: &r.mode,
                params: b.params,
                states: b.states,
                grads: b.grads,
                staging: b.staging,
                activations: b.activations,
                total: b.total(),
                host_total: r.memory.host.total(),
            }
        })
        .collect();
    let ratio: Vec<RatioRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = dense.map_or(0, |d| d.memory.peak_model);
            RatioRow {
                run: i,
                mode: &r.mode,
                peak_model_bytes: r.memory.peak_model,
                dense_peak_model_bytes: d,
                dense_over_run: if r.memory.peak_model == 0 { 0.0 } else { d as f64 / r.memory.peak_model as f64 },
                peak_total_bytes: r.memory.peak_total,
            }
        })
        .collect();
    let psnr: Vec<PsnrRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| PsnrRow {
            run: i,
            mode: &r.mode,
            precision: &r.precision,
            mean_psnr: r.mean_psnr,
            gap_to_dense: dense.map_or(0.0, |d| r.mean_psnr - d.mean_psnr),
            final_gaussians: r.final_gaussians,
        })
        .collect();
    Ok(BenchTables {
        memory_csv: to_csv(&memory)?,
        ratio_csv: to_csv(&ratio)?,
        psnr_csv: to_csv(&psnr)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn access_bytes_decrease_across_modes() {
        let rows = bench_optimizer(&BenchConfig {
            gaussians: 3000,
            iterations: 40,
            ..Default::default()
        })
        .unwrap();
        assert!(rows[0].optimizer_bytes > rows[1].optimizer_bytes);
        assert!(rows[1].optimizer_bytes > rows[2].optimizer_bytes);
        assert!(rows[1].max_rel_err < 1e-4 && rows[2].max_rel_err < 1e-4, "{rows:?}");
    }
}
