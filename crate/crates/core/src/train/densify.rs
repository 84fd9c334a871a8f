//! Adaptive density control: clone small and split large Gaussians with a
//! large mean screen-space gradient, and prune nearly transparent ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::DensifyConfig;
use crate::math::{mat_vec, quat_to_mat, sigmoid};
use crate::offload::IterationResult;
use crate::optim::RowSource;
use crate::real::Real;
use crate::scene::{unit_quat, GaussianSet, APP_DIM, GEO_DIM};

/// Running sums of the screen-space mean gradient norm per Gaussian.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn accumulate<T: Real>(&mut self, r: &IterationResult<T>) {
        for (k, &id) in r.screen.ids.iter().enumerate() {
            let g = r.screen.row(k);
            let (x, y) = (g[0].f64(), g[1].f64());
            self.grad_sum[id as usize] += (x * x + y * y).sqrt();
            self.count[id as usize] += 1;
        }
    }

    pub fn mean(&self, id: usize) -> f64 {
        match self.count[id] {
            0 => 0.0,
            c => self.grad_sum[id] / c as f64,
        }
    }
}

/// Where each row of the densified set comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianSource<T> {
    /// Surviving Gaussian: stored rows, optimizer states and counters kept.
    Keep(usize),
    /// New Gaussian with the given 59 parameters and zero states.
    Fresh(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyPlan<T> {
    pub sources: Vec<GaussianSource<T>>,
    /// New index of each old id, `None` when it was split or pruned.
    pub remap: Vec<Option<u32>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub iteration: u64,
    pub before: usize,
    pub after: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

impl<T: Real> DensifyPlan<T> {
    pub fn is_identity(&self) -> bool {
        self.cloned == 0 && self.split == 0 && self.pruned == 0
    }

    /// Per-tier row sources for rebuilding parameter blocks.
    pub fn tier_sources(&self) -> (Vec<RowSource<T>>, Vec<RowSource<T>>) {
        self.sources
            .iter()
            .map(|s| match s {
                GaussianSource::Keep(i) => (RowSource::Keep(*i), RowSource::Keep(*i)),
                GaussianSource::Fresh(p) => (RowSource::Fresh(p[..GEO_DIM].to_vec()), RowSource::Fresh(p[GEO_DIM..].to_vec())),
            })
            .unzip()
    }

    /// The densified set, with kept rows taken from `gs`.
    pub fn apply(&self, gs: &GaussianSet<T>) -> GaussianSet<T> {
        let mut geo = Vec::with_capacity(self.sources.len() * GEO_DIM);
        let mut app = Vec::with_capacity(self.sources.len() * APP_DIM);
        for s in &self.sources {
            match s {
                GaussianSource::Keep(i) => {
                    geo.extend_from_slice(gs.geo_row(*i));
                    app.extend_from_slice(gs.app_row(*i));
                }
                GaussianSource::Fresh(p) => {
                    geo.extend_from_slice(&p[..GEO_DIM]);
                    app.extend_from_slice(&p[GEO_DIM..]);
                }
            }
        }
        GaussianSet::from_tiers(geo, app, gs.sh_degree)
    }
}

/// Plans one densification of `gs` (current parameter values).
pub fn plan_densify<T: Real>(
    gs: &GaussianSet<T>,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    extent: f64,
    seed: u64,
    iteration: u64,
) -> DensifyPlan<T> {
    let n = gs.len();
    assert_eq!(stats.count.len(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let unit = Normal::new(0.0, 1.0).unwrap();
    let big = cfg.percent_dense * extent;
    let mut budget = cfg.max_gaussians.saturating_sub(n);

    let mut keep = Vec::with_capacity(n);
    let mut clones = Vec::new();
    let mut children = Vec::new();
    let mut remap = vec![None; n];
    let (mut cloned, mut split, mut pruned) = (0, 0, 0);
    for i in 0..n {
        if sigmoid(gs.opacity_logit(i).f64()) < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        let row = gs.row(i).to_vec();
        if stats.mean(i) >= cfg.grad_threshold && budget > 0 {
            let ls = gs.log_scale(i);
            let max_scale = ls.iter().map(|s| s.f64().exp()).fold(0.0, f64::max);
            if max_scale <= big {
                clones.push(row);
                cloned += 1;
                budget -= 1;
            } else {
                let (q, _) = unit_quat(gs.quat(i).map(|x| x.f64()));
                let rot = quat_to_mat(q);
                let mean = gs.mean(i).map(|x| x.f64());
                for _ in 0..2 {
                    let z: [f64; 3] = std::array::from_fn(|a| ls[a].f64().exp() * unit.sample(&mut rng));
                    let off = mat_vec(&rot, z);
                    let mut c = row.clone();
                    for a in 0..3 {
                        c[a] = T::c(mean[a] + off[a]);
                        c[3 + a] = T::c(ls[a].f64() - cfg.split_factor.ln());
                    }
                    children.push(c);
                }
                split += 1;
                budget -= 1;
                continue;
            }
        }
        remap[i] = Some(keep.len() as u32);
        keep.push(i);
    }
    let sources = keep
        .into_iter()
        .map(GaussianSource::Keep)
        .chain(clones.into_iter().map(GaussianSource::Fresh))
        .chain(children.into_iter().map(GaussianSource::Fresh))
        .collect();
    DensifyPlan {
        sources,
        remap,
        cloned,
        split,
        pruned,
    }
}
