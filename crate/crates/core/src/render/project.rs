//! EWA projection of a Gaussian onto the image plane and its adjoint.

use crate::math::{self, Mat3, Vec3};
use crate::real::Real;
use crate::render::sh::{sh_basis, sh_basis_grad};
use crate::scene::{unit_quat, Camera, GEO_DIM, PARAM_DIM, SH_COEFFS};

/// Geometry-only projection of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    /// Camera-space mean.
    pub t: Vec3<T>,
    pub mean2d: [T; 2],
    /// Upper triangle `(xx, xy, yy)` of the 2D covariance, low-pass floor included.
    pub cov2d: [T; 3],
    /// Upper triangle `(a, b, c)` of the inverse covariance.
    pub conic: [T; 3],
}

impl<T: Real> Projection<T> {
    pub fn depth(&self) -> T {
        self.t[2]
    }

    /// Mahalanobis form `dᵀ Σ⁻¹ d` at pixel offset `d`.
    #[inline]
    pub fn power(&self, dx: T, dy: T) -> T {
        let [a, b, c] = self.conic;
        a * dx * dx + T::c(2.0) * b * dx * dy + c * dy * dy
    }

    /// Half-extents of the axis-aligned box around the `k`-sigma ellipse.
    #[inline]
    pub fn half_extent(&self, k: T) -> [T; 2] {
        [k * self.cov2d[0].sqrt(), k * self.cov2d[2].sqrt()]
    }
}

/// 3D covariance `R S Sᵀ Rᵀ` from log-scales and a raw quaternion.
pub fn covariance3d<T: Real>(log_scale: [T; 3], quat: [T; 4]) -> Mat3<T> {
    let (q, _) = unit_quat(quat);
    let r = math::quat_to_mat(q);
    let s = log_scale.map(|x| x.exp());
    let mut m = r;
    for row in m.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    math::mat_mul(&m, &math::transpose(&m))
}

/// Projection Jacobian of `(fx x/z + cx, fy y/z + cy)` at camera-space `t`.
#[inline]
pub fn projection_jacobian<T: Real>(t: Vec3<T>, fx: T, fy: T) -> [[T; 3]; 2] {
    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    [[fx * iz, T::zero(), -fx * t[0] * iz2], [T::zero(), fy * iz, -fy * t[1] * iz2]]
}

pub fn project<T: Real>(geo: &[T], cam: &Camera<T>, low_pass: T) -> Projection<T> {
    let mean = [geo[0], geo[1], geo[2]];
    let t = cam.to_camera(mean);
    project_at(t, geo, cam, low_pass)
}

fn project_at<T: Real>(t: Vec3<T>, geo: &[T], cam: &Camera<T>, low_pass: T) -> Projection<T> {
    let sigma = covariance3d([geo[3], geo[4], geo[5]], [geo[6], geo[7], geo[8], geo[9]]);
    let w = &cam.rot;
    let v = math::mat_mul(&math::mat_mul(w, &sigma), &math::transpose(w));
    let j = projection_jacobian(t, cam.fx, cam.fy);
    // cov2d = J V Jᵀ
    let mut jv = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jv[r][c] = j[r][0] * v[0][c] + j[r][1] * v[1][c] + j[r][2] * v[2][c];
        }
    }
    let cxx = jv[0][0] * j[0][0] + jv[0][1] * j[0][1] + jv[0][2] * j[0][2] + low_pass;
    let cxy = jv[0][0] * j[1][0] + jv[0][1] * j[1][1] + jv[0][2] * j[1][2];
    let cyy = jv[1][0] * j[1][0] + jv[1][1] * j[1][1] + jv[1][2] * j[1][2] + low_pass;
    let det = cxx * cyy - cxy * cxy;
    let iz = T::one() / t[2];
    Projection {
        t,
        mean2d: [cam.fx * t[0] * iz + cam.cx, cam.fy * t[1] * iz + cam.cy],
        cov2d: [cxx, cxy, cyy],
        conic: [cyy / det, -cxy / det, cxx / det],
    }
}

/// Gradients with respect to the 2D quantities of one projected Gaussian.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Grad2D<T> {
    pub mean2d: [T; 2],
    /// With respect to `(a, b, c)` where the power is `a dx² + 2 b dx dy + c dy²`.
    pub conic: [T; 3],
    /// With respect to post-sigmoid opacity.
    pub opacity: T,
    pub rgb: [T; 3],
}

impl<T: Real> Grad2D<T> {
    pub fn zero() -> Self {
        Self {
            mean2d: [T::zero(); 2],
            conic: [T::zero(); 3],
            opacity: T::zero(),
            rgb: [T::zero(); 3],
        }
    }

    pub fn accumulate(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.rgb[k] += o.rgb[k];
        }
        self.opacity += o.opacity;
    }
}

/// Chains 2D gradients back to all 59 parameters of one Gaussian.
///
/// `app` is the appearance row; `rgb_clamped` marks channels that were
/// clamped on the forward pass.
pub fn project_backward<T: Real>(
    geo: &[T],
    app: &[T],
    sh_degree: u8,
    cam: &Camera<T>,
    low_pass: T,
    g: &Grad2D<T>,
    rgb_clamped: [bool; 3],
) -> [T; PARAM_DIM] {
    let mut out = [T::zero(); PARAM_DIM];
    let zero = T::zero();
    let two = T::c(2.0);
    let mean = [geo[0], geo[1], geo[2]];
    let t = cam.to_camera(mean);
    let (fx, fy) = (cam.fx, cam.fy);

    // Recompute forward intermediates.
    let (qhat, qnorm) = unit_quat([geo[6], geo[7], geo[8], geo[9]]);
    let r = math::quat_to_mat(qhat);
    let s = [geo[3].exp(), geo[4].exp(), geo[5].exp()];
    let mut m = r;
    for row in m.iter_mut() {
        for k in 0..3 {
            row[k] *= s[k];
        }
    }
    let sigma = math::mat_mul(&m, &math::transpose(&m));
    let w = &cam.rot;
    let v = math::mat_mul(&math::mat_mul(w, &sigma), &math::transpose(w));
    let j = projection_jacobian(t, fx, fy);
    let [a, b, c] = project_at(t, geo, cam, low_pass).conic;

    // conic -> cov2d: G_S = -A G_A A
    let ga = [[g.conic[0], g.conic[1] / two], [g.conic[1] / two, g.conic[2]]];
    let am = [[a, b], [b, c]];
    let mut tmp = [[zero; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            tmp[i][k] = am[i][0] * ga[0][k] + am[i][1] * ga[1][k];
        }
    }
    let mut gs2 = [[zero; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            gs2[i][k] = -(tmp[i][0] * am[0][k] + tmp[i][1] * am[1][k]);
        }
    }

    // cov2d = J V Jᵀ:  G_V = Jᵀ G J,  G_J = 2 G J V
    let mut gj_tmp = [[zero; 3]; 2]; // G J
    for i in 0..2 {
        for k in 0..3 {
            gj_tmp[i][k] = gs2[i][0] * j[0][k] + gs2[i][1] * j[1][k];
        }
    }
    let mut gv = [[zero; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            gv[i][k] = j[0][i] * gj_tmp[0][k] + j[1][i] * gj_tmp[1][k];
        }
    }
    let mut gjac = [[zero; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            gjac[i][k] = two * (gj_tmp[i][0] * v[0][k] + gj_tmp[i][1] * v[1][k] + gj_tmp[i][2] * v[2][k]);
        }
    }

    // V = W Σ Wᵀ
    let gsig = math::mat_mul(&math::mat_mul(&math::transpose(w), &gv), w);
    // Σ = M Mᵀ
    let mut gm = math::mat_mul(&gsig, &m);
    for row in gm.iter_mut() {
        for x in row.iter_mut() {
            *x *= two;
        }
    }
    // M = R diag(s)
    let mut gr = [[zero; 3]; 3];
    let mut gsc = [zero; 3];
    for i in 0..3 {
        for k in 0..3 {
            gr[i][k] = gm[i][k] * s[k];
            gsc[k] += gm[i][k] * r[i][k];
        }
    }
    for k in 0..3 {
        out[3 + k] = gsc[k] * s[k];
    }
    let gq = math::quat_to_mat_vjp(qhat, &gr);
    let qdot = qhat[0] * gq[0] + qhat[1] * gq[1] + qhat[2] * gq[2] + qhat[3] * gq[3];
    for k in 0..4 {
        out[6 + k] = (gq[k] - qhat[k] * qdot) / qnorm;
    }

    // Camera-space mean: through J and through the projected center.
    let iz = T::one() / t[2];
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut gt = [zero; 3];
    gt[0] += gjac[0][2] * (-fx * iz2);
    gt[1] += gjac[1][2] * (-fy * iz2);
    gt[2] += gjac[0][0] * (-fx * iz2)
        + gjac[0][2] * (two * fx * t[0] * iz3)
        + gjac[1][1] * (-fy * iz2)
        + gjac[1][2] * (two * fy * t[1] * iz3);
    gt[0] += g.mean2d[0] * fx * iz;
    gt[1] += g.mean2d[1] * fy * iz;
    gt[2] += -g.mean2d[0] * fx * t[0] * iz2 - g.mean2d[1] * fy * t[1] * iz2;
    let mut gmean = math::mat_t_vec(w, gt);

    // Color: SH coefficients and the view direction.
    let offset = math::sub(mean, cam.center());
    let dist = math::norm(offset);
    let dir = math::scale(offset, T::one() / dist);
    let basis = sh_basis(dir, sh_degree);
    let basis_grad = sh_basis_grad(dir, sh_degree);
    let grgb: [T; 3] = std::array::from_fn(|ch| if rgb_clamped[ch] { zero } else { g.rgb[ch] });
    let active = (sh_degree as usize + 1).pow(2);
    let mut gdir = [zero; 3];
    let sh = &app[1..];
    for k in 0..active.min(SH_COEFFS) {
        let mut wsum = zero;
        for ch in 0..3 {
            out[GEO_DIM + 1 + k * 3 + ch] = basis[k] * grgb[ch];
            wsum += sh[k * 3 + ch] * grgb[ch];
        }
        for ax in 0..3 {
            gdir[ax] += wsum * basis_grad[k][ax];
        }
    }
    let dd = math::dot(dir, gdir);
    for ax in 0..3 {
        gmean[ax] += (gdir[ax] - dir[ax] * dd) / dist;
    }
    out[0..3].copy_from_slice(&gmean);

    let o = math::sigmoid(app[0]);
    out[GEO_DIM] = g.opacity * o * (T::one() - o);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::identity;

    fn cam() -> Camera<f64> {
        Camera::new(identity(), [0.0; 3], 100.0, 100.0, 50.0, 50.0, 100, 100, 0.01, 100.0).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let geo = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let p = project(&geo, &cam(), 0.3);
        assert_eq!(p.mean2d, [50.0, 50.0]);
        assert_eq!(p.depth(), 1.0);
    }

    #[test]
    fn isotropic_on_axis_is_diagonal_and_equal() {
        let ls = 0.1f64.ln();
        let geo = [0.0, 0.0, 2.0, ls, ls, ls, 1.0, 0.0, 0.0, 0.0];
        let p = project(&geo, &cam(), 0.0);
        assert!(p.cov2d[1].abs() < 1e-12);
        assert!((p.cov2d[0] - p.cov2d[2]).abs() < 1e-9);
        // (fx / z)^2 * s^2 = 50^2 * 0.01
        assert!((p.cov2d[0] - 25.0).abs() < 1e-9);
    }

    #[test]
    fn jacobian_matches_five_point_finite_differences() {
        let c = Camera::look_at([0.4, -1.5, 2.2], [0.0, 0.1, 0.0], [0.0, 0.0, 1.0], 0.9f64, 80, 60).unwrap();
        let geo = [0.2, -0.1, 0.3, -2.0, -2.5, -1.8, 0.9, 0.2, -0.3, 0.1];
        let t = c.to_camera([geo[0], geo[1], geo[2]]);
        let jac = projection_jacobian(t, c.fx, c.fy);
        for ax in 0..3 {
            let h = 1e-3 * t[ax].abs().max(1.0);
            let f = |dv: f64| {
                let mut tt = t;
                tt[ax] += dv;
                [c.fx * tt[0] / tt[2] + c.cx, c.fy * tt[1] / tt[2] + c.cy]
            };
            let (p2, p1, m1, m2) = (f(2.0 * h), f(h), f(-h), f(-2.0 * h));
            for r in 0..2 {
                let fd = (-p2[r] + 8.0 * p1[r] - 8.0 * m1[r] + m2[r]) / (12.0 * h);
                let rel = (fd - jac[r][ax]).abs() / jac[r][ax].abs().max(1e-9);
                assert!(rel < 1e-3 || (fd - jac[r][ax]).abs() < 1e-9, "J[{r}][{ax}] fd {fd} vs {}", jac[r][ax]);
            }
        }
    }
}
