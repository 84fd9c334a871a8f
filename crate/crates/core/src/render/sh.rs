//! Real spherical harmonics up to degree 3, in the sign convention used by
//! the reference 3DGS renderer.

use crate::math::Vec3;
use crate::real::Real;
use crate::scene::SH_COEFFS;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values for the first `(degree + 1)^2` functions; the rest are zero.
pub fn sh_basis<T: Real>(d: Vec3<T>, degree: u8) -> [T; SH_COEFFS] {
    let mut b = [T::zero(); SH_COEFFS];
    let [x, y, z] = d;
    b[0] = T::c(SH_C0);
    if degree == 0 {
        return b;
    }
    let c1 = T::c(SH_C1);
    b[1] = -c1 * y;
    b[2] = c1 * z;
    b[3] = -c1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c2 = SH_C2.map(T::c);
    b[4] = c2[0] * x * y;
    b[5] = c2[1] * y * z;
    b[6] = c2[2] * (T::c(2.0) * zz - xx - yy);
    b[7] = c2[3] * x * z;
    b[8] = c2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    let c3 = SH_C3.map(T::c);
    let three = T::c(3.0);
    let four = T::c(4.0);
    b[9] = c3[0] * y * (three * xx - yy);
    b[10] = c3[1] * x * y * z;
    b[11] = c3[2] * y * (four * zz - xx - yy);
    b[12] = c3[3] * z * (T::c(2.0) * zz - three * xx - three * yy);
    b[13] = c3[4] * x * (four * zz - xx - yy);
    b[14] = c3[5] * z * (xx - yy);
    b[15] = c3[6] * x * (xx - three * yy);
    b
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn sh_basis_grad<T: Real>(d: Vec3<T>, degree: u8) -> [Vec3<T>; SH_COEFFS] {
    let z0 = T::zero();
    let mut g = [[z0; 3]; SH_COEFFS];
    if degree == 0 {
        return g;
    }
    let [x, y, z] = d;
    let c1 = T::c(SH_C1);
    g[1] = [z0, -c1, z0];
    g[2] = [z0, z0, c1];
    g[3] = [-c1, z0, z0];
    if degree == 1 {
        return g;
    }
    let two = T::c(2.0);
    let c2 = SH_C2.map(T::c);
    g[4] = [c2[0] * y, c2[0] * x, z0];
    g[5] = [z0, c2[1] * z, c2[1] * y];
    g[6] = [-two * c2[2] * x, -two * c2[2] * y, T::c(4.0) * c2[2] * z];
    g[7] = [c2[3] * z, z0, c2[3] * x];
    g[8] = [two * c2[4] * x, -two * c2[4] * y, z0];
    if degree == 2 {
        return g;
    }
    let c3 = SH_C3.map(T::c);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let three = T::c(3.0);
    let four = T::c(4.0);
    let six = T::c(6.0);
    let eight = T::c(8.0);
    g[9] = [six * c3[0] * x * y, c3[0] * three * (xx - yy), z0];
    g[10] = [c3[1] * y * z, c3[1] * x * z, c3[1] * x * y];
    g[11] = [-two * c3[2] * x * y, c3[2] * (four * zz - xx - three * yy), eight * c3[2] * y * z];
    g[12] = [-six * c3[3] * x * z, -six * c3[3] * y * z, c3[3] * (six * zz - three * xx - three * yy)];
    g[13] = [c3[4] * (four * zz - three * xx - yy), -two * c3[4] * x * y, eight * c3[4] * x * z];
    g[14] = [two * c3[5] * x * z, -two * c3[5] * y * z, c3[5] * (xx - yy)];
    g[15] = [c3[6] * three * (xx - yy), -six * c3[6] * x * y, z0];
    g
}

/// View-dependent color: channel-wise SH dot product, `+0.5`, clamped to `[0, 1]`.
///
/// Also returns which channels were clamped; those pass no gradient.
pub fn eval_sh<T: Real>(coeffs: &[T; 48], view_dir: Vec3<T>, degree: u8) -> ([T; 3], [bool; 3]) {
    let basis = sh_basis(view_dir, degree);
    let n = (degree as usize + 1).pow(2);
    let mut rgb = [T::c(0.5); 3];
    for (k, &b) in basis.iter().enumerate().take(n) {
        for c in 0..3 {
            rgb[c] += b * coeffs[k * 3 + c];
        }
    }
    let mut clamped = [false; 3];
    for c in 0..3 {
        if rgb[c] < T::zero() {
            rgb[c] = T::zero();
            clamped[c] = true;
        } else if rgb[c] > T::one() {
            rgb[c] = T::one();
            clamped[c] = true;
        }
    }
    (rgb, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let (rgb, _) = eval_sh(&[0.0f32; 48], [0.0, 0.0, 1.0], 3);
        assert_eq!(rgb, [0.5; 3]);
    }

    #[test]
    fn dc_only_is_view_independent() {
        let mut c = [0.0f64; 48];
        c[0] = 0.4;
        c[1] = -0.3;
        c[2] = 1.0;
        for d in [[0.0, 0.0, 1.0], dir([1.0, -2.0, 0.5]), dir([-0.3, 0.1, -0.9])] {
            let (rgb, _) = eval_sh(&c, d, 3);
            assert!((rgb[0] - (0.2820948 * 0.4 + 0.5)).abs() < 1e-7);
            assert!((rgb[1] - (0.2820948 * -0.3 + 0.5)).abs() < 1e-7);
            assert!((rgb[2] - (0.2820948 * 1.0 + 0.5)).abs() < 1e-7);
        }
    }

    #[test]
    fn degree_one_is_odd() {
        let mut c = [0.0f64; 48];
        for (i, v) in c.iter_mut().enumerate().take(12).skip(3) {
            *v = 0.05 * (i as f64 - 6.0);
        }
        let d = dir([0.3, -0.5, 0.8]);
        let nd = d.map(|x| -x);
        let (a, _) = eval_sh(&c, d, 1);
        let (b, _) = eval_sh(&c, nd, 1);
        for ch in 0..3 {
            // band-0 is zero, so (a - 0.5) = -(b - 0.5)
            assert!(((a[ch] - 0.5) + (b[ch] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn clamping_is_reported() {
        let mut c = [0.0f64; 48];
        c[0] = 10.0;
        c[1] = -10.0;
        let (rgb, clamped) = eval_sh(&c, [0.0, 0.0, 1.0], 0);
        assert_eq!(rgb, [1.0, 0.0, 0.5]);
        assert_eq!(clamped, [true, true, false]);
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = [0.31f64, -0.47, 0.62];
        let g = sh_basis_grad(d, 3);
        for a in 0..3 {
            let h = 1e-6;
            let mut p = d;
            let mut m = d;
            p[a] += h;
            m[a] -= h;
            let bp = sh_basis(p, 3);
            let bm = sh_basis(m, 3);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][a]).abs() < 1e-8, "basis {k} axis {a}: {fd} vs {}", g[k][a]);
            }
        }
    }

    #[test]
    fn basis_is_orthonormal_on_the_sphere() {
        // Fibonacci-sphere quadrature of <Y_i, Y_j>.
        let n = 20000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut gram = [[0.0f64; 16]; 16];
        for i in 0..n {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let b = sh_basis([r * phi.cos(), r * phi.sin(), z], 3);
            for p in 0..16 {
                for q in 0..16 {
                    gram[p][q] += b[p] * b[q];
                }
            }
        }
        let w = 4.0 * std::f64::consts::PI / n as f64;
        for p in 0..16 {
            for q in 0..16 {
                let want = if p == q { 1.0 } else { 0.0 };
                assert!((gram[p][q] * w - want).abs() < 2e-3, "({p},{q}) = {}", gram[p][q] * w);
            }
        }
    }
}
