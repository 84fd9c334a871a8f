//! Oracles and scene builders shared by the integration tests.
#![allow(dead_code)]

use gsscale::math::{identity, logit};
use gsscale::real::Real;
use gsscale::render::{l1_loss, render, render_backward, Image, RenderConfig, ViewParams};
use gsscale::offload::{setup_tiers, Engine, EngineConfig, View};
use gsscale::optim::Hyperparams;
use gsscale::scene::{synth_scene_with, Camera, GaussianSet, SynthConfig, SynthScene, PARAM_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random scene in front of an identity camera, with colors kept away
/// from the clamp and opacities low enough that compositing never stops early.
pub fn gradcheck_scene(seed: u64, n: usize, size: u32) -> (GaussianSet<f64>, Camera<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = size as f64 * 1.25;
    let cam = Camera::new(identity(), [0.0; 3], f, f, size as f64 / 2.0, size as f64 / 2.0, size, size, 0.1, 100.0).unwrap();
    let mut gs = GaussianSet::with_capacity(n, 3);
    for _ in 0..n {
        let z: f64 = rng.random_range(2.0..4.0);
        let mean = [rng.random_range(-0.3..0.3) * z, rng.random_range(-0.3..0.3) * z, z];
        let ls = [0; 3].map(|_| rng.random_range(0.08f64..0.3).ln());
        let q = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let mut sh = [0.0; 48];
        for (k, v) in sh.iter_mut().enumerate() {
            *v = if k < 3 { rng.random_range(-0.9..0.9) } else { rng.random_range(-0.05..0.05) };
        }
        let op = logit(rng.random_range(0.1..0.5));
        gs.push(mean, ls, q, op, &sh);
    }
    (gs, cam)
}

pub fn gradcheck_config() -> RenderConfig {
    RenderConfig {
        raster_sigma: None,
        bands: 1,
        ..Default::default()
    }
}

fn loss_of<T: Real>(gs: &GaussianSet<T>, cam: &Camera<T>, gt: &Image<T>, cfg: &RenderConfig) -> f64 {
    let ids: Vec<u32> = (0..gs.len() as u32).collect();
    let v = ViewParams::new(&ids, &gs.geometric, &gs.appearance, gs.sh_degree);
    let r = render(&v, cam, cfg);
    l1_loss(&r.image, gt, None).value.f64()
}

/// Analytic gradient of the L1 loss against `gt`, all Gaussians visible.
pub fn analytic<T: Real>(gs: &GaussianSet<T>, cam: &Camera<T>, gt: &Image<T>, cfg: &RenderConfig) -> Vec<f64> {
    let ids: Vec<u32> = (0..gs.len() as u32).collect();
    let v = ViewParams::new(&ids, &gs.geometric, &gs.appearance, gs.sh_degree);
    let r = render(&v, cam, cfg);
    let l = l1_loss(&r.image, gt, None);
    let b = render_backward(&r, &v, cam, cfg, &l.grad);
    b.grads.rows.iter().map(|x| x.f64()).collect()
}

/// Ground truth `image ± (0.5 + u)` with a random sign per element, so the
/// L1 loss is linear in a neighborhood of the current parameters.
pub fn offset_target(img: &Image<f64>, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut gt = img.clone();
    for v in gt.data.iter_mut() {
        let mag = 0.5 + rng.random_range(0.0..1.0);
        *v += if rng.random_bool(0.5) { mag } else { -mag };
    }
    gt
}

/// Five-point central differences in 64-bit, step `1e-3 * max(|p|, 1)`.
pub fn finite_differences(gs: &GaussianSet<f64>, cam: &Camera<f64>, gt: &Image<f64>, cfg: &RenderConfig) -> Vec<f64> {
    let mut out = vec![0.0; gs.len() * PARAM_DIM];
    for i in 0..gs.len() {
        for p in 0..PARAM_DIM {
            let base = gs.row(i)[p];
            let h = 1e-3 * base.abs().max(1.0);
            let eval = |delta: f64| {
                let mut g = gs.clone();
                *g.param_mut(i, p) = base + delta;
                loss_of(&g, cam, gt, cfg)
            };
            let d = (-eval(2.0 * h) + 8.0 * eval(h) - 8.0 * eval(-h) + eval(-2.0 * h)) / (12.0 * h);
            out[i * PARAM_DIM + p] = d;
        }
    }
    out
}

/// Largest `|a - n| / max(|n|, floor)` where the floor is `rel_floor` times
/// the largest reference magnitude of the same Gaussian.
pub fn gradient_error(analytic: &[f64], numeric: &[f64], rel_floor: f64) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.chunks(PARAM_DIM).zip(numeric.chunks(PARAM_DIM)).enumerate() {
        let scale = n.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for p in 0..PARAM_DIM {
            let e = (a[p] - n[p]).abs() / n[p].abs().max(rel_floor * scale).max(1e-300);
            if e > worst.0 {
                worst = (e, i * PARAM_DIM + p);
            }
        }
    }
    worst
}

/// Synthetic training scene with small images.
pub fn train_scene<T: Real>(seed: u64, gaussians: usize, cameras: usize, size: u32) -> SynthScene<T> {
    synth_scene_with(&SynthConfig {
        seed,
        gaussians,
        cameras,
        width: size,
        height: size,
        ..Default::default()
    })
}

/// One unsplit view per camera.
pub fn views<T: Real>(cams: &[Camera<T>]) -> Vec<View<T>> {
    cams.iter()
        .enumerate()
        .map(|(index, c)| View {
            index,
            cams: vec![c.clone()],
        })
        .collect()
}

pub fn engine<T: Real>(gs: &GaussianSet<T>, cfg: EngineConfig) -> Engine<T> {
    let store = setup_tiers(gs, cfg.host_max, cfg.device_max);
    Engine::new(store, Hyperparams::default(), RenderConfig::default(), cfg).unwrap()
}

/// Runs `iterations` steps cycling through the views; returns the losses.
pub fn run_engine<T: Real>(e: &mut Engine<T>, views: &[View<T>], images: &[Image<T>], iterations: usize) -> Vec<T> {
    let order: Vec<usize> = (0..iterations).map(|i| (i * 7) % views.len()).collect();
    order
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let next = order.get(k + 1).map(|&j| &views[j]);
            e.run_iteration(&views[v], &images[v], next).unwrap().loss
        })
        .collect()
}
