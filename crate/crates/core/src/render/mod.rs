//! Reference differentiable rasterizer.
//!
//! The forward pass projects every visible Gaussian, sorts by depth (ties by
//! id), builds per-pixel front-to-back contribution lists and composites
//! them. The backward pass walks the same lists in reverse and chains the
//! per-pixel gradients back to all 59 parameters.
//!
//! Pixels are processed in horizontal bands. The band count is part of the
//! configuration rather than derived from the thread pool, so results are
//! bitwise reproducible for a fixed configuration.

pub mod cull;
pub mod image;
pub mod loss;
pub mod project;
mod raster;
pub mod sh;

use serde::{Deserialize, Serialize};

pub use cull::{ellipse_hits_rect, frustum_cull};
pub use image::{mse, psnr, Image, Psnr};
pub use loss::{l1_loss, Loss};
pub use project::{project, project_backward, Grad2D, Projection};
pub use raster::{rasterize_backward, rasterize_forward, Contribution, RenderAux};
pub use sh::eval_sh;

use crate::math;
use crate::optim::GradBuffer;
use crate::real::Real;
use crate::scene::{Camera, GaussianSet, APP_DIM, GEO_DIM, PARAM_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    #[default]
    Black,
    White,
}

impl Background {
    pub fn rgb<T: Real>(self) -> [T; 3] {
        match self {
            Background::Black => [T::zero(); 3],
            Background::White => [T::one(); 3],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Mahalanobis radius of the ellipse tested against the image rectangle.
    pub cull_sigma: f64,
    /// Radius beyond which a Gaussian does not touch a pixel. `None` means
    /// unbounded support, which removes footprint discontinuities.
    pub raster_sigma: Option<f64>,
    /// Added to the diagonal of every 2D covariance, in px².
    pub low_pass: f64,
    pub alpha_max: f64,
    /// Compositing stops before transmittance would drop below this.
    pub t_min: f64,
    pub background: Background,
    /// Number of horizontal pixel bands processed in parallel.
    pub bands: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            cull_sigma: 3.0,
            raster_sigma: Some(3.0),
            low_pass: 0.3,
            alpha_max: 0.999,
            t_min: 1e-4,
            background: Background::Black,
            bands: 8,
        }
    }
}

/// 2D splat of one Gaussian as seen from one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D<T> {
    pub id: u32,
    pub mean2d: [T; 2],
    pub cov2d: [T; 3],
    pub conic: [T; 3],
    pub depth: T,
    pub rgb: [T; 3],
    pub rgb_clamped: [bool; 3],
    /// Post-sigmoid opacity.
    pub alpha_base: T,
}

impl<T: Real> Projected2D<T> {
    #[inline]
    pub fn power(&self, dx: T, dy: T) -> T {
        let [a, b, c] = self.conic;
        a * dx * dx + T::c(2.0) * b * dx * dy + c * dy * dy
    }
}

/// Parameters of the Gaussians one view renders, packed in `ids` order.
#[derive(Debug, Clone, Copy)]
pub struct ViewParams<'a, T> {
    pub ids: &'a [u32],
    /// `ids.len() * GEO_DIM` values.
    pub geo: &'a [T],
    /// `ids.len() * APP_DIM` values.
    pub app: &'a [T],
    pub sh_degree: u8,
}

impl<'a, T: Real> ViewParams<'a, T> {
    pub fn new(ids: &'a [u32], geo: &'a [T], app: &'a [T], sh_degree: u8) -> Self {
        assert_eq!(geo.len(), ids.len() * GEO_DIM);
        assert_eq!(app.len(), ids.len() * APP_DIM);
        Self { ids, geo, app, sh_degree }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn geo_row(&self, k: usize) -> &[T] {
        &self.geo[k * GEO_DIM..(k + 1) * GEO_DIM]
    }

    pub fn app_row(&self, k: usize) -> &[T] {
        &self.app[k * APP_DIM..(k + 1) * APP_DIM]
    }
}

/// Projects and shades every Gaussian of the view, in `ids` order.
pub fn project_view<T: Real>(view: &ViewParams<T>, cam: &Camera<T>, cfg: &RenderConfig) -> Vec<Projected2D<T>> {
    let center = cam.center();
    let low_pass = T::c(cfg.low_pass);
    (0..view.len())
        .map(|k| {
            let geo = view.geo_row(k);
            let app = view.app_row(k);
            let p = project(geo, cam, low_pass);
            let dir = math::normalize(math::sub([geo[0], geo[1], geo[2]], center));
            let coeffs: &[T; 48] = app[1..].try_into().unwrap();
            let (rgb, rgb_clamped) = eval_sh(coeffs, dir, view.sh_degree);
            Projected2D {
                id: view.ids[k],
                mean2d: p.mean2d,
                cov2d: p.cov2d,
                conic: p.conic,
                depth: p.depth(),
                rgb,
                rgb_clamped,
                alpha_base: math::sigmoid(app[0]),
            }
        })
        .collect()
}

pub struct Rendered<T> {
    /// Viewport-sized image.
    pub image: Image<T>,
    pub proj: Vec<Projected2D<T>>,
    pub aux: RenderAux<T>,
}

pub fn render<T: Real>(view: &ViewParams<T>, cam: &Camera<T>, cfg: &RenderConfig) -> Rendered<T> {
    let proj = project_view(view, cam, cfg);
    let (image, aux) = rasterize_forward(&proj, cam, cfg);
    Rendered { image, proj, aux }
}

pub struct Backward<T> {
    /// One 59-wide row per id of the view.
    pub grads: GradBuffer<T>,
    /// Gradient of the projected mean in normalized device coordinates, one
    /// per id. Kept as a vector so the halves of a split view can be summed
    /// before taking the norm.
    pub screen_grad: Vec<[T; 2]>,
}

/// Full backward pass. `dl_dimage` must be viewport-sized.
pub fn render_backward<T: Real>(
    r: &Rendered<T>,
    view: &ViewParams<T>,
    cam: &Camera<T>,
    cfg: &RenderConfig,
    dl_dimage: &Image<T>,
) -> Backward<T> {
    use rayon::prelude::*;

    let g2d = rasterize_backward(&r.aux, &r.proj, cam, cfg, dl_dimage);
    let low_pass = T::c(cfg.low_pass);
    let mut grads = GradBuffer::zeros(view.ids.to_vec(), PARAM_DIM);
    let half_w = T::of_usize(cam.width as usize) / T::c(2.0);
    let half_h = T::of_usize(cam.height as usize) / T::c(2.0);
    let screen_grad = grads
        .rows
        .par_chunks_mut(PARAM_DIM)
        .enumerate()
        .map(|(k, row)| {
            let g = &g2d[k];
            if *g == Grad2D::zero() {
                return [T::zero(); 2];
            }
            let full = project_backward(view.geo_row(k), view.app_row(k), view.sh_degree, cam, low_pass, g, r.proj[k].rgb_clamped);
            row.copy_from_slice(&full);
            [g.mean2d[0] * half_w, g.mean2d[1] * half_h]
        })
        .collect();
    Backward { grads, screen_grad }
}

/// Packs the geometric and appearance rows of `ids`.
pub fn gather_rows<T: Real>(gs: &GaussianSet<T>, ids: &[u32]) -> (Vec<T>, Vec<T>) {
    let mut geo = Vec::with_capacity(ids.len() * GEO_DIM);
    let mut app = Vec::with_capacity(ids.len() * APP_DIM);
    for &id in ids {
        geo.extend_from_slice(gs.geo_row(id as usize));
        app.extend_from_slice(gs.app_row(id as usize));
    }
    (geo, app)
}

/// Culls, then renders, a whole Gaussian set. Returns the visible ids too.
pub fn render_gaussians<T: Real>(gs: &GaussianSet<T>, cam: &Camera<T>, cfg: &RenderConfig) -> (Vec<u32>, Rendered<T>) {
    let ids = frustum_cull(&gs.geometric, cam, cfg.cull_sigma, cfg.low_pass);
    let (geo, app) = gather_rows(gs, &ids);
    let r = render(&ViewParams::new(&ids, &geo, &app, gs.sh_degree), cam, cfg);
    (ids, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::identity;

    fn cam(w: u32, h: u32) -> Camera<f64> {
        Camera::new(identity(), [0.0; 3], 100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h, 0.01, 100.0).unwrap()
    }

    fn splat(mean: [f64; 3], log_scale: f64, opacity: f64, dc: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
        let geo = vec![mean[0], mean[1], mean[2], log_scale, log_scale, log_scale, 1.0, 0.0, 0.0, 0.0];
        let mut app = vec![0.0; APP_DIM];
        app[0] = math::logit(opacity);
        for c in 0..3 {
            app[1 + c] = dc[c];
        }
        (geo, app)
    }

    #[test]
    fn empty_view_renders_background() {
        let c = cam(8, 6);
        let view = ViewParams::new(&[], &[], &[], 0);
        let r = render(&view, &c, &RenderConfig::default());
        assert!(r.image.data.iter().all(|&v| v == 0.0));
        let cfg = RenderConfig {
            background: Background::White,
            ..Default::default()
        };
        let r = render(&view, &c, &cfg);
        assert!(r.image.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn opaque_red_pixel() {
        let c = cam(9, 9);
        // Large, fully opaque, pure red after SH evaluation (clamped).
        let (geo, app) = splat([0.0, 0.0, 1.0], 0.0, 0.9999999, [10.0, -10.0, -10.0]);
        let r = render(&ViewParams::new(&[0], &geo, &app, 0), &c, &RenderConfig::default());
        let px = r.image.pixel(4, 4);
        assert!((px[0] - 0.999).abs() < 1e-9, "{px:?}");
        assert_eq!(px[1], 0.0);
        assert_eq!(px[2], 0.0);
    }

    #[test]
    fn two_term_composition_matches_hand_evaluation() {
        let c = cam(16, 16);
        let (g0, a0) = splat([0.01, 0.0, 2.0], (0.03f64).ln(), 0.6, [0.5, 0.1, -0.4]);
        let (g1, a1) = splat([-0.02, 0.01, 3.0], (0.05f64).ln(), 0.7, [-0.2, 0.3, 0.6]);
        let geo = [g1.clone(), g0.clone()].concat();
        let app = [a1.clone(), a0.clone()].concat();
        let ids = [0u32, 1];
        let cfg = RenderConfig::default();
        let view = ViewParams::new(&ids, &geo, &app, 0);
        let r = render(&view, &c, &cfg);
        let (x, y) = (8u32, 8u32);
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        // Hand-evaluate: Gaussian at z=2 (id 1) is in front.
        let term = |geo: &[f64], app: &[f64]| {
            let p = project(geo, &c, 0.3);
            let d = [px - p.mean2d[0], py - p.mean2d[1]];
            let alpha = (math::sigmoid(app[0]) * (-0.5 * p.power(d[0], d[1])).exp()).min(0.999);
            let dir = math::normalize([geo[0], geo[1], geo[2]]);
            let (rgb, _) = eval_sh(app[1..].try_into().unwrap(), dir, 0);
            (alpha, rgb)
        };
        let (af, cf) = term(&g0, &a0);
        let (ab, cb) = term(&g1, &a1);
        let got = r.image.pixel(x, y);
        for ch in 0..3 {
            let want = cf[ch] * af + cb[ch] * ab * (1.0 - af);
            assert!((got[ch] - want).abs() < 1e-12, "{ch}: {} vs {want}", got[ch]);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let c = cam(16, 16);
        let (geo, app) = splat([0.0, 0.0, 2.0], (0.05f64).ln(), 0.6, [0.5, 0.1, -0.4]);
        let view = ViewParams::new(&[3], &geo, &app, 0);
        let cfg = RenderConfig::default();
        let r = render(&view, &c, &cfg);
        let b = render_backward(&r, &view, &c, &cfg, &Image::new(16, 16));
        assert!(b.grads.rows.iter().all(|&g| g == 0.0));
        assert_eq!(b.grads.ids, vec![3]);
    }

    #[test]
    fn band_count_does_not_change_the_image() {
        let c = cam(20, 14);
        let mut geo = Vec::new();
        let mut app = Vec::new();
        for i in 0..6 {
            let f = i as f64;
            let (g, a) = splat([0.02 * f - 0.05, 0.01 * f - 0.03, 1.5 + 0.3 * f], (0.03f64).ln(), 0.5, [0.1 * f, -0.2, 0.3]);
            geo.extend(g);
            app.extend(a);
        }
        let ids: Vec<u32> = (0..6).collect();
        let view = ViewParams::new(&ids, &geo, &app, 0);
        let one = RenderConfig {
            bands: 1,
            ..Default::default()
        };
        let many = RenderConfig {
            bands: 5,
            ..Default::default()
        };
        let a = render(&view, &c, &one);
        let b = render(&view, &c, &many);
        assert_eq!(a.image, b.image);
        let mut dl = Image::new(20, 14);
        for (i, v) in dl.data.iter_mut().enumerate() {
            *v = ((i * 7) % 11) as f64 / 11.0 - 0.5;
        }
        let ga = render_backward(&a, &view, &c, &one, &dl);
        let gb = render_backward(&b, &view, &c, &many, &dl);
        let scale = ga.grads.rows.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let err = crate::real::max_rel_err(&ga.grads.rows, &gb.grads.rows, 1e-9 * scale);
        assert!(err < 1e-5, "{err}");
    }
}
