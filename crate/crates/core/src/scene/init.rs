use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::logit;
use crate::real::Real;
use crate::render::sh::SH_C0;
use crate::scene::{GaussianSet, PointCloud, MAX_SH_DEGREE};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Neighbors averaged for the initial scale; clamped to `M - 1`.
    pub knn: usize,
    pub opacity: f64,
    pub sh_degree: u8,
    /// Scale used when the cloud has a single point and no neighbors exist.
    pub isolated_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            knn: 3,
            opacity: 0.1,
            sh_degree: MAX_SH_DEGREE,
            isolated_scale: 0.01,
        }
    }
}

/// Inverse of the degree-0 SH evaluation: the DC coefficient that renders as `rgb`.
pub fn rgb_to_sh_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

/// One Gaussian per point: isotropic log-scale from the mean k-nearest-neighbor
/// distance (k-d tree search), identity rotation, constant opacity, color in the SH DC term.
pub fn init_gaussians<T: Real>(pc: &PointCloud, cfg: &InitConfig) -> GaussianSet<T> {
    let m = pc.len();
    let k = cfg.knn.min(m.saturating_sub(1));
    let opacity = T::c(logit(cfg.opacity));
    let mut gs = GaussianSet::with_capacity(m, cfg.sh_degree.min(MAX_SH_DEGREE));
    let points: Vec<[f64; 3]> = pc.positions.iter().map(|p| p.map(|x| x as f64)).collect();
    let scales: Vec<f64> = if k == 0 {
        vec![cfg.isolated_scale; m]
    } else {
        let tree = ImmutableKdTree::<f64, 3>::new_from_slice(&points).expect("finite points build a tree");
        let want = NonZeroUsize::new(k + 1).unwrap();
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let found = tree.query(p).nearest_n::<SquaredEuclidean<f64>>(want).execute();
                // Drop the query point itself; duplicates of it still count.
                let mut skipped = false;
                let mut sum = 0.0;
                let mut taken = 0;
                for r in found {
                    if !skipped && r.item as usize == i {
                        skipped = true;
                        continue;
                    }
                    if taken < k {
                        sum += r.distance.sqrt();
                        taken += 1;
                    }
                }
                (sum / taken.max(1) as f64).max(1e-7)
            })
            .collect()
    };
    for (i, p) in pc.positions.iter().enumerate() {
        let ls = T::c(scales[i].ln());
        let mut sh = [T::zero(); 48];
        for c in 0..3 {
            sh[c] = T::c(rgb_to_sh_dc(pc.colors[i][c] as f64));
        }
        gs.push(p.map(|x| T::c(x as f64)), [ls; 3], [T::one(), T::zero(), T::zero(), T::zero()], opacity, &sh);
    }
    gs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::sh::eval_sh;

    #[test]
    fn single_point_identity_init() {
        let pc = PointCloud::new(vec![[0.0; 3]], Some(vec![[1.0, 0.0, 0.0]])).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        assert_eq!(gs.len(), 1);
        assert_eq!(gs.mean(0), [0.0; 3]);
        assert_eq!(gs.quat(0), [1.0, 0.0, 0.0, 0.0]);
        assert!(gs.app_row(0)[1 + 3..].iter().all(|&x| x == 0.0));
        assert!((gs.opacity_logit(0) - logit(0.1)).abs() < 1e-15);
        gs.validate().unwrap();
    }

    #[test]
    fn two_points_use_nearest_neighbor_distance() {
        let pc = PointCloud::new(vec![[0.0; 3], [2.0, 0.0, 0.0]], None).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        for i in 0..2 {
            for s in gs.log_scale(i) {
                assert!((s - 2f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn knn_mean_of_three() {
        // Neighbors of the origin at distances 1, 2, 3 and a far one at 10.
        let pc = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0], [10.0, 0.0, 0.0]], None).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        assert!((gs.log_scale(0)[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gray_renders_as_half() {
        let pc = PointCloud::new(vec![[0.0; 3]], None).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        let coeffs: [f64; 48] = gs.app_row(0)[1..].try_into().unwrap();
        let (rgb, _) = eval_sh(&coeffs, [0.0, 0.0, 1.0], 3);
        for c in rgb {
            assert!((c - 0.5).abs() < 1e-12);
        }
        let pc = PointCloud::new(vec![[0.0; 3]], Some(vec![[0.2, 0.7, 0.9]])).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        let coeffs: [f64; 48] = gs.app_row(0)[1..].try_into().unwrap();
        let (rgb, _) = eval_sh(&coeffs, [0.6, 0.0, 0.8], 3);
        for (c, want) in rgb.iter().zip([0.2, 0.7, 0.9]) {
            assert!((c - want).abs() < 1e-6);
        }
    }

    #[test]
    fn tree_search_matches_brute_force() {
        let positions: Vec<[f32; 3]> = (0..300)
            .map(|i| {
                let f = i as f32;
                [(f * 0.37).sin() * 2.0, (f * 0.71).cos(), (f * 0.13).sin() * 0.5]
            })
            .collect();
        let pc = PointCloud::new(positions.clone(), None).unwrap();
        let gs = init_gaussians::<f64>(&pc, &InitConfig::default());
        for i in (0..300).step_by(17) {
            let mut d: Vec<f64> = (0..300)
                .filter(|&j| j != i)
                .map(|j| (0..3).map(|a| (positions[i][a] as f64 - positions[j][a] as f64).powi(2)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let want = (d[0] + d[1] + d[2]) / 3.0;
            assert!((gs.log_scale(i)[0] - want.ln()).abs() < 1e-9);
        }
    }
}
