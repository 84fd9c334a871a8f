//! Training orchestration: the loop, densification, evaluation and reports.
//!
//! Three modes share everything but the parameter store: the dense oracle
//! keeps one arena and runs textbook Adam, while the two offloaded modes run
//! the tiered engine with host jobs either inline or on a worker thread.

mod bench;
mod config;
mod data;
mod dense;
mod densify;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bench::{bench_optimizer, bench_report, BenchConfig, BenchRow, BenchTables};
pub use config::{DensifyConfig, Mode, SceneSource, TrainConfig};
pub use data::{load_dataset, write_dataset, CameraRecord, Dataset};
pub use dense::DenseTrainer;
pub use densify::{plan_densify, DensifyEvent, DensifyPlan, DensifyStats, GaussianSource};

use crate::error::Result;
use crate::offload::{setup_tiers, Engine, EngineConfig, Event, IterationResult, MemoryReport, Schedule, View};
use crate::optim::{AccessReport, Hyperparams, RowSource};
use crate::real::Real;
use crate::render::{psnr, render_gaussians, Image, Psnr, RenderConfig};
use crate::scene::GaussianSet;
use crate::split::{compute_split_points, sub_cameras, SplitTable};

/// PSNR used in averages when a view is reproduced exactly.
pub const PSNR_CAP: f64 = 100.0;

/// Parameter store of one training run.
pub enum Backend<T: Real> {
    Dense(DenseTrainer<T>),
    Offload(Box<Engine<T>>),
}

impl<T: Real> Backend<T> {
    pub fn new(mode: &Mode, gs: &GaussianSet<T>, hp: Hyperparams, render: RenderConfig, engine: EngineConfig) -> Result<Self> {
        Ok(match mode {
            Mode::DenseOracle => Backend::Dense(DenseTrainer::new(gs, hp, render)),
            Mode::OffloadSerial | Mode::OffloadPipelined => {
                let schedule = if *mode == Mode::OffloadSerial { Schedule::Serial } else { Schedule::Pipelined };
                let store = setup_tiers(gs, engine.host_max, engine.device_max);
                Backend::Offload(Box::new(Engine::new(store, hp, render, EngineConfig { schedule, ..engine })?))
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Backend::Dense(d) => d.len(),
            Backend::Offload(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&mut self, view: &View<T>, gt: &Image<T>, next: Option<&View<T>>) -> Result<IterationResult<T>> {
        match self {
            Backend::Dense(d) => Ok(d.step(view, gt)),
            Backend::Offload(e) => e.run_iteration(view, gt, next),
        }
    }

    /// Current parameters of every Gaussian.
    pub fn snapshot(&mut self) -> Result<GaussianSet<T>> {
        match self {
            Backend::Dense(d) => Ok(d.snapshot()),
            Backend::Offload(e) => e.snapshot(),
        }
    }

    pub fn rebuild(&mut self, geo: Vec<RowSource<T>>, app: Vec<RowSource<T>>) -> Result<()> {
        match self {
            Backend::Dense(d) => {
                d.rebuild(&geo, &app);
                Ok(())
            }
            Backend::Offload(e) => e.rebuild(geo, app),
        }
    }

    pub fn memory(&self) -> MemoryReport {
        match self {
            Backend::Dense(d) => d.memory().clone(),
            Backend::Offload(e) => e.memory().clone(),
        }
    }

    pub fn access(&mut self) -> AccessSummary {
        match self {
            Backend::Dense(d) => AccessSummary {
                device: AccessReport::default(),
                host: d.access(),
            },
            Backend::Offload(e) => {
                let (device, host) = e.access();
                AccessSummary { device, host }
            }
        }
    }

    pub fn timeline(&self) -> Vec<Event> {
        match self {
            Backend::Dense(_) => Vec::new(),
            Backend::Offload(e) => e.timeline().events(),
        }
    }
}

/// Optimizer traffic split by where the optimizer runs. The dense oracle
/// stands in for a host optimizer over all 59 columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSummary {
    pub device: AccessReport,
    pub host: AccessReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub precision: String,
    pub iterations: u64,
    pub losses: Vec<f64>,
    pub test_views: Vec<usize>,
    pub test_psnr: Vec<Psnr>,
    /// Mean of the per-view PSNR, exact reproductions counted as [`PSNR_CAP`].
    pub mean_psnr: f64,
    pub initial_gaussians: usize,
    pub final_gaussians: usize,
    pub split_views: usize,
    pub memory: MemoryReport,
    pub access: AccessSummary,
    pub densify: Vec<DensifyEvent>,
    pub elapsed_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<Event>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// `iteration,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:e}\n"));
        }
        s
    }
}

/// A finished run: its report and the final Gaussians (widened to `f64`).
pub struct Trained {
    pub report: TrainReport,
    pub gaussians: GaussianSet<f64>,
    pub splits: SplitTable,
}

pub fn train(cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if cfg.verify_f64 {
        train_as::<f64>(cfg)
    } else {
        train_as::<f32>(cfg)
    }
}

/// Mean per-view PSNR of `gs` over `views`.
pub fn evaluate<T: Real>(gs: &GaussianSet<T>, data: &Dataset<T>, views: &[usize], render: &RenderConfig) -> (Vec<Psnr>, f64) {
    let scores: Vec<Psnr> = views
        .iter()
        .map(|&v| psnr(&render_gaussians(gs, &data.cameras[v], render).1.image, &data.images[v]))
        .collect();
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().map(|p| p.capped(PSNR_CAP)).sum::<f64>() / scores.len() as f64
    };
    (scores, mean)
}

/// Training view order: a fresh seeded permutation per epoch.
pub fn view_order(train: &[usize], iterations: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(iterations as usize);
    if train.is_empty() {
        return order;
    }
    while (order.len() as u64) < iterations {
        let mut epoch = train.to_vec();
        epoch.shuffle(&mut rng);
        order.extend(epoch);
    }
    order.truncate(iterations as usize);
    order
}

pub fn train_as<T: Real>(cfg: &TrainConfig) -> Result<Trained> {
    let t0 = Instant::now();
    let data = load_dataset::<T>(&cfg.scene, cfg.sh_degree)?;
    let (train_views, test_views) = data.holdout(cfg.holdout_every);
    let extent = data.scene_extent();
    let hp = Hyperparams {
        scene_extent: extent,
        ..cfg.hp.clone()
    };

    let splits = if cfg.mem_limit < 1.0 {
        compute_split_points(&data.init, &data.cameras, cfg.mem_limit, &cfg.render)?
    } else {
        SplitTable::unsplit(data.cameras.len())
    };
    let views: Vec<View<T>> = data
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| View {
            index: i,
            cams: sub_cameras(c, splits.split_of(i)),
        })
        .collect();

    let engine = EngineConfig {
        chunk_bytes: cfg.chunk_bytes,
        host_max: cfg.defer_max,
        device_max: cfg.device_defer_max,
        verify: cfg.verify_f64,
        timeline: cfg.timeline,
        ..EngineConfig::default()
    };
    let mut backend = Backend::new(&cfg.mode, &data.init, hp, cfg.render.clone(), engine)?;
    let order = view_order(&train_views, cfg.iterations, cfg.seed);
    let mut stats = DensifyStats::new(backend.len());
    let mut losses = Vec::with_capacity(order.len());
    let mut events = Vec::new();
    let d = &cfg.densify;
    for (it, &v) in order.iter().enumerate() {
        let next = order.get(it + 1).map(|&j| &views[j]);
        let r = backend.step(&views[v], &data.images[v], next)?;
        losses.push(r.loss.f64());
        if !d.enabled {
            continue;
        }
        stats.accumulate(&r);
        let done = it as u64 + 1;
        if done % d.interval == 0 && done >= d.start && done < d.stop {
            let current = backend.snapshot()?;
            let plan = plan_densify(&current, &stats, d, extent, cfg.seed, done);
            if !plan.is_identity() {
                let before = backend.len();
                let (geo, app) = plan.tier_sources();
                backend.rebuild(geo, app)?;
                events.push(DensifyEvent {
                    iteration: done,
                    before,
                    after: backend.len(),
                    cloned: plan.cloned,
                    split: plan.split,
                    pruned: plan.pruned,
                });
            }
            stats = DensifyStats::new(backend.len());
        }
    }

    let gs = backend.snapshot()?;
    let (test_psnr, mean_psnr) = evaluate(&gs, &data, &test_views, &cfg.render);
    let report = TrainReport {
        mode: cfg.mode.clone(),
        precision: T::NAME.to_string(),
        iterations: cfg.iterations,
        losses,
        test_views,
        test_psnr,
        mean_psnr,
        initial_gaussians: data.init.len(),
        final_gaussians: gs.len(),
        split_views: splits.split_count(),
        memory: backend.memory(),
        access: backend.access(),
        densify: events,
        elapsed_s: t0.elapsed().as_secs_f64(),
        timeline: backend.timeline(),
    };
    Ok(Trained {
        report,
        gaussians: gs.cast(),
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_order_cycles_through_epochs() {
        let order = view_order(&[0, 1, 2], 7, 4);
        assert_eq!(order.len(), 7);
        let mut first: Vec<_> = order[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2]);
        assert_eq!(order, view_order(&[0, 1, 2], 7, 4));
    }
}
