//! Procedural aerial scenes with known ground truth.
//!
//! Ground-truth Gaussians lie on a thin slab `[-1, 1]² × [-t, t]` (z up) and
//! are photographed by downward-looking cameras at varying heights, so each
//! view sees only a fraction of the scene. The initial set is built from a
//! jittered copy of the true means with washed-out colors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{init_gaussians, Camera, GaussianSet, InitConfig, PointCloud};
use crate::math::logit;
use crate::real::Real;
use crate::render::{render_gaussians, sh::SH_C0, Image, RenderConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub gaussians: usize,
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Camera heights are drawn uniformly from this range.
    pub height_range: (f64, f64),
    pub slab_thickness: f64,
    /// Ground-truth footprint relative to the mean spacing.
    pub footprint: f64,
    pub opacity: (f64, f64),
    /// Standard deviation of the degree-1 SH coefficients of the truth.
    pub view_dependence: f64,
    /// Standard deviation of the initial position jitter, relative to spacing.
    pub jitter: f64,
    /// Weight of the true color in the initial color (the rest is gray).
    pub init_color_mix: f64,
    pub init: InitConfig,
    /// Render the ground-truth views; off when only geometry is needed.
    pub render_images: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussians: 2000,
            cameras: 40,
            width: 64,
            height: 64,
            fov_deg: 60.0,
            height_range: (0.25, 1.1),
            slab_thickness: 0.05,
            footprint: 0.6,
            opacity: (0.6, 0.95),
            view_dependence: 0.05,
            jitter: 0.15,
            init_color_mix: 0.5,
            init: InitConfig {
                sh_degree: 1,
                ..InitConfig::default()
            },
            render_images: true,
        }
    }
}

impl SynthConfig {
    /// Cameras low enough that each sees roughly `ratio` of the Gaussians.
    pub fn with_coverage(mut self, ratio: f64) -> Self {
        // Ground footprint width is 2 h tan(fov / 2) on a slab of area 4;
        // Gaussians within three footprints of the border also count.
        let tan = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = self.height as f64 / self.width as f64;
        let margin = 6.0 * self.footprint * 2.0 / (self.gaussians.max(1) as f64).sqrt();
        let side = ((ratio * 4.0 / aspect).sqrt() - margin).max(1e-3);
        let h = side / (2.0 * tan);
        self.height_range = (h * 0.95, h * 1.05);
        self
    }
}

pub struct SynthScene<T> {
    pub truth: GaussianSet<T>,
    pub init: GaussianSet<T>,
    pub points: PointCloud,
    pub cameras: Vec<Camera<T>>,
    pub images: Vec<Image<T>>,
}

pub fn synth_scene<T: Real>(seed: u64, gaussians: usize, cameras: usize) -> SynthScene<T> {
    synth_scene_with(&SynthConfig {
        seed,
        gaussians,
        cameras,
        ..Default::default()
    })
}

pub fn synth_scene_with<T: Real>(cfg: &SynthConfig) -> SynthScene<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.gaussians;
    let spacing = 2.0 / (n.max(1) as f64).sqrt();
    let unit = Normal::new(0.0, 1.0).unwrap();

    let degree = 1u8;
    let mut truth = GaussianSet::with_capacity(n, degree);
    let mut positions = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-cfg.slab_thickness..=cfg.slab_thickness),
        ];
        let s = spacing * cfg.footprint * rng.random_range(0.7..1.3);
        let log_scale = [
            (s * rng.random_range(0.6..1.4)).ln(),
            (s * rng.random_range(0.6..1.4)).ln(),
            (s * 0.3).ln(),
        ];
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let quat = [(theta / 2.0).cos(), 0.0, 0.0, (theta / 2.0).sin()];
        // Smooth large-scale color field plus per-Gaussian variation.
        let base = [
            0.5 + 0.3 * (2.3 * mean[0]).sin(),
            0.5 + 0.3 * (1.7 * mean[1] + 0.5).cos(),
            0.5 + 0.3 * (1.9 * (mean[0] + mean[1])).sin(),
        ];
        let rgb: [f64; 3] = std::array::from_fn(|c| (base[c] + 0.15 * unit.sample(&mut rng)).clamp(0.05, 0.95));
        let mut sh = [T::zero(); 48];
        for c in 0..3 {
            sh[c] = T::c((rgb[c] - 0.5) / SH_C0);
        }
        for k in 3..12 {
            sh[k] = T::c(cfg.view_dependence * unit.sample(&mut rng));
        }
        let opacity = rng.random_range(cfg.opacity.0..=cfg.opacity.1);
        truth.push(mean.map(T::c), log_scale.map(T::c), quat.map(T::c), T::c(logit(opacity)), &sh);

        let jit = cfg.jitter * spacing;
        positions.push([
            (mean[0] + jit * unit.sample(&mut rng)) as f32,
            (mean[1] + jit * unit.sample(&mut rng)) as f32,
            (mean[2] + 0.3 * jit * unit.sample(&mut rng)) as f32,
        ]);
        colors.push(rgb.map(|c| (cfg.init_color_mix * c + (1.0 - cfg.init_color_mix) * 0.5) as f32));
    }
    let points = PointCloud::new(positions, Some(colors)).expect("synthetic points are finite");
    let init = init_gaussians::<T>(&points, &cfg.init);

    let fov = cfg.fov_deg.to_radians();
    let mut cams = Vec::with_capacity(cfg.cameras);
    for _ in 0..cfg.cameras {
        let h = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
        let target = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), 0.0];
        // Slightly oblique: the eye is offset horizontally by up to 30% of the height.
        let eye = [
            target[0] + 0.3 * h * rng.random_range(-1.0..1.0),
            target[1] + 0.3 * h * rng.random_range(-1.0..1.0),
            h,
        ];
        let cam = Camera::look_at(eye.map(T::c), target.map(T::c), [T::zero(), T::one(), T::zero()], T::c(fov), cfg.width, cfg.height)
            .expect("synthetic camera is valid");
        cams.push(cam);
    }
    let rcfg = RenderConfig::default();
    let images = if cfg.render_images {
        cams.iter().map(|c| render_gaussians(&truth, c, &rcfg).1.image).collect()
    } else {
        Vec::new()
    };
    SynthScene {
        truth,
        init,
        points,
        cameras: cams,
        images,
    }
}
