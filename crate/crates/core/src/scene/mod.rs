//! Gaussian parameterization, cameras, point-cloud ingestion and synthetic scenes.
//!
//! Every Gaussian carries 59 scalars split into two tiers:
//!
//! | tier          | columns | contents                                  |
//! |---------------|---------|-------------------------------------------|
//! | geometric     | 10      | mean (3), log-scale (3), quaternion (4)   |
//! | appearance    | 49      | opacity logit (1), SH coefficients (48)   |
//!
//! The geometric tier is everything culling and projection need; the
//! appearance tier (the "non-geometric" parameters) is what gets offloaded.
//! Each tier is stored row-major (`N x dim`).

mod camera;
mod init;
pub mod ply;
mod synth;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use camera::{Camera, Viewport};
pub use init::{init_gaussians, InitConfig};
pub use ply::{load_ply, PointCloud};
pub use synth::{synth_scene, synth_scene_with, SynthConfig, SynthScene};

use crate::real::Real;

pub const GEO_DIM: usize = 10;
pub const APP_DIM: usize = 49;
pub const PARAM_DIM: usize = GEO_DIM + APP_DIM;

pub const MEAN: Range<usize> = 0..3;
pub const SCALE: Range<usize> = 3..6;
pub const QUAT: Range<usize> = 6..10;
/// Column of the opacity logit inside an appearance row.
pub const OPACITY: usize = 0;
/// Columns of the SH coefficients inside an appearance row, laid out
/// coefficient-major: `sh[k * 3 + channel]`.
pub const SH: Range<usize> = 1..49;
pub const SH_COEFFS: usize = 16;
pub const MAX_SH_DEGREE: u8 = 3;

/// Number of active SH scalars for degree `l`: `3 (l + 1)^2`.
pub const fn sh_scalars(degree: u8) -> usize {
    let k = degree as usize + 1;
    3 * k * k
}

/// Which of the 59 parameter scalars a flat parameter index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Geometric,
    Appearance,
}

pub const fn tier_of(param: usize) -> Tier {
    if param < GEO_DIM {
        Tier::Geometric
    } else {
        Tier::Appearance
    }
}

/// Structure-of-arrays Gaussian store, one row-major block per tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet<T> {
    pub geometric: Vec<T>,
    pub appearance: Vec<T>,
    pub sh_degree: u8,
}

impl<T: Real> GaussianSet<T> {
    pub fn with_capacity(n: usize, sh_degree: u8) -> Self {
        Self {
            geometric: Vec::with_capacity(n * GEO_DIM),
            appearance: Vec::with_capacity(n * APP_DIM),
            sh_degree,
        }
    }

    pub fn from_tiers(geometric: Vec<T>, appearance: Vec<T>, sh_degree: u8) -> Self {
        assert_eq!(geometric.len() % GEO_DIM, 0);
        assert_eq!(appearance.len() % APP_DIM, 0);
        assert_eq!(geometric.len() / GEO_DIM, appearance.len() / APP_DIM);
        assert!(sh_degree <= MAX_SH_DEGREE);
        Self {
            geometric,
            appearance,
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.geometric.len() / GEO_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.geometric.is_empty()
    }

    pub fn push(&mut self, mean: [T; 3], log_scale: [T; 3], quat: [T; 4], opacity_logit: T, sh: &[T; 48]) {
        self.geometric.extend_from_slice(&mean);
        self.geometric.extend_from_slice(&log_scale);
        self.geometric.extend_from_slice(&quat);
        self.appearance.push(opacity_logit);
        self.appearance.extend_from_slice(sh);
    }

    pub fn geo_row(&self, i: usize) -> &[T] {
        &self.geometric[i * GEO_DIM..(i + 1) * GEO_DIM]
    }

    pub fn app_row(&self, i: usize) -> &[T] {
        &self.appearance[i * APP_DIM..(i + 1) * APP_DIM]
    }

    pub fn mean(&self, i: usize) -> [T; 3] {
        let r = self.geo_row(i);
        [r[0], r[1], r[2]]
    }

    pub fn log_scale(&self, i: usize) -> [T; 3] {
        let r = self.geo_row(i);
        [r[3], r[4], r[5]]
    }

    pub fn quat(&self, i: usize) -> [T; 4] {
        let r = self.geo_row(i);
        [r[6], r[7], r[8], r[9]]
    }

    pub fn opacity_logit(&self, i: usize) -> T {
        self.appearance[i * APP_DIM + OPACITY]
    }

    /// Full 59-scalar row: geometric tier followed by appearance tier.
    pub fn row(&self, i: usize) -> [T; PARAM_DIM] {
        let mut out = [T::zero(); PARAM_DIM];
        out[..GEO_DIM].copy_from_slice(self.geo_row(i));
        out[GEO_DIM..].copy_from_slice(self.app_row(i));
        out
    }

    pub fn param_mut(&mut self, i: usize, param: usize) -> &mut T {
        if param < GEO_DIM {
            &mut self.geometric[i * GEO_DIM + param]
        } else {
            &mut self.appearance[i * APP_DIM + param - GEO_DIM]
        }
    }

    pub fn cast<U: Real>(&self) -> GaussianSet<U> {
        GaussianSet {
            geometric: self.geometric.iter().map(|x| U::c(x.f64())).collect(),
            appearance: self.appearance.iter().map(|x| U::c(x.f64())).collect(),
            sh_degree: self.sh_degree,
        }
    }

    /// Checks the structural invariants: finite values and non-degenerate quaternions.
    pub fn validate(&self) -> crate::Result<()> {
        if self.geometric.len() != self.len() * GEO_DIM || self.appearance.len() != self.len() * APP_DIM {
            return Err(crate::Error::Invariant("tier lengths disagree".into()));
        }
        if let Some(i) = self.geometric.iter().chain(&self.appearance).position(|x| !x.is_finite()) {
            return Err(crate::Error::Invariant(format!("non-finite parameter at flat index {i}")));
        }
        for i in 0..self.len() {
            let q = self.quat(i);
            let n2 = q.iter().fold(T::zero(), |a, &x| a + x * x);
            if n2 <= T::zero() {
                return Err(crate::Error::Invariant(format!("zero quaternion on gaussian {i}")));
            }
        }
        Ok(())
    }
}

/// Normalizes a quaternion, used before every projection.
#[inline]
pub fn unit_quat<T: Real>(q: [T; 4]) -> ([T; 4], T) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_partition_is_exhaustive_and_disjoint() {
        let geo = (0..PARAM_DIM).filter(|&p| tier_of(p) == Tier::Geometric).count();
        let app = (0..PARAM_DIM).filter(|&p| tier_of(p) == Tier::Appearance).count();
        assert_eq!((geo, app), (10, 49));
        assert_eq!(MEAN.len() + SCALE.len() + QUAT.len(), GEO_DIM);
        assert_eq!(1 + SH.len(), APP_DIM);
        assert_eq!(sh_scalars(3), 48);
        assert_eq!(3 + 3 + 4 + 1 + sh_scalars(3), 59);
    }

    #[test]
    fn rows_concatenate_tiers() {
        let mut gs = GaussianSet::<f32>::with_capacity(1, 3);
        let mut sh = [0.0; 48];
        sh[5] = 2.0;
        gs.push([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], [1.0, 0.0, 0.0, 0.0], -1.0, &sh);
        let row = gs.row(0);
        assert_eq!(row[0..3], [1.0, 2.0, 3.0]);
        assert_eq!(row[GEO_DIM + OPACITY], -1.0);
        assert_eq!(row[GEO_DIM + SH.start + 5], 2.0);
        *gs.param_mut(0, GEO_DIM + SH.start + 5) = 4.0;
        assert_eq!(gs.app_row(0)[SH.start + 5], 4.0);
    }
}
