//! Two-phase view-frustum culling.

use rayon::prelude::*;

use super::project::project;
use crate::real::Real;
use crate::scene::{Camera, GEO_DIM};

/// Whether `{d : dᵀ A d ≤ k²}` centered at `m` meets the closed rectangle
/// `[x0, x1] × [y0, y1]`.
///
/// The quadratic form is minimized over the rectangle: zero inside, otherwise
/// the minimum lies on an edge, where it is a clamped 1D quadratic.
pub fn ellipse_hits_rect<T: Real>(m: [T; 2], conic: [T; 3], k: T, rect: [T; 4]) -> bool {
    let [x0, x1, y0, y1] = rect;
    if m[0] >= x0 && m[0] <= x1 && m[1] >= y0 && m[1] <= y1 {
        return true;
    }
    let k2 = k * k;
    let [a, b, c] = conic;
    let q = |dx: T, dy: T| a * dx * dx + T::c(2.0) * b * dx * dy + c * dy * dy;
    let corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    for e in 0..4 {
        let p = corners[e];
        let r = corners[(e + 1) % 4];
        let d0 = [p[0] - m[0], p[1] - m[1]];
        let dir = [r[0] - p[0], r[1] - p[1]];
        // q(s) = q0 + 2 s u + s² v
        let v = q(dir[0], dir[1]);
        let u = a * dir[0] * d0[0] + b * (dir[0] * d0[1] + dir[1] * d0[0]) + c * dir[1] * d0[1];
        let s = if v > T::zero() { (-u / v).max(T::zero()).min(T::one()) } else { T::zero() };
        let dx = d0[0] + s * dir[0];
        let dy = d0[1] + s * dir[1];
        if q(dx, dy) <= k2 {
            return true;
        }
    }
    false
}

/// Ids (ascending) of Gaussians inside `[near, far]` whose `sigma` ellipse
/// meets the camera's viewport rectangle.
pub fn frustum_cull<T: Real>(geo: &[T], cam: &Camera<T>, sigma: f64, low_pass: f64) -> Vec<u32> {
    assert_eq!(geo.len() % GEO_DIM, 0);
    let vp = cam.viewport;
    let rect = [vp.x0, vp.x1, vp.y0, vp.y1].map(|v| T::of_usize(v as usize));
    let k = T::c(sigma);
    let lp = T::c(low_pass);
    geo.par_chunks(GEO_DIM)
        .enumerate()
        .filter_map(|(i, row)| {
            let z = cam.to_camera([row[0], row[1], row[2]])[2];
            if !(z >= cam.near && z <= cam.far) {
                return None;
            }
            let p = project(row, cam, lp);
            ellipse_hits_rect(p.mean2d, p.conic, k, rect).then_some(i as u32)
        })
        .collect()
}
