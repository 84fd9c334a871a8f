//! Balance-aware image splitting.
//!
//! A view whose frustum holds more than `mem_limit` of all Gaussians is cut
//! into a left and a right sub-viewport that are culled, rendered and
//! differentiated one after the other. The split column is chosen once,
//! before training, by a short binary search on the visible counts of the
//! two halves. Each sub-loss is normalized by the element count of the full
//! image, so the summed gradients are those of the unsplit view.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::GradBuffer;
use crate::real::Real;
use crate::render::{frustum_cull, l1_loss, render, render_backward, Image, Projected2D, RenderConfig, ViewParams};
use crate::scene::{Camera, GaussianSet, PARAM_DIM};

pub const DEFAULT_MEM_LIMIT: f64 = 0.3;
/// Culling-pair evaluations after the midpoint.
pub const SEARCH_STEPS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    /// Visible fraction of the initial Gaussians.
    pub used_ratio: f64,
    /// Split column, relative to the viewport's left edge.
    pub split: Option<u32>,
    /// Visible counts of the two halves at the chosen column.
    pub left: usize,
    pub right: usize,
    /// Search steps evaluated after the midpoint.
    pub iterations: u32,
}

impl SplitEntry {
    /// Share of the two halves' visible counts falling on the left.
    pub fn left_share(&self) -> f64 {
        let total = self.left + self.right;
        if total == 0 {
            0.5
        } else {
            self.left as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub mem_limit: f64,
    /// One entry per camera.
    pub entries: Vec<SplitEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SplitTable {
    /// A table that never splits.
    pub fn unsplit(cameras: usize) -> Self {
        Self {
            mem_limit: 1.0,
            entries: vec![
                SplitEntry {
                    used_ratio: 0.0,
                    split: None,
                    left: 0,
                    right: 0,
                    iterations: 0,
                };
                cameras
            ],
            warnings: Vec::new(),
        }
    }

    pub fn split_of(&self, camera: usize) -> Option<u32> {
        self.entries.get(camera).and_then(|e| e.split)
    }

    pub fn split_count(&self) -> usize {
        self.entries.iter().filter(|e| e.split.is_some()).count()
    }

    /// Mean `|left share − 0.5|` over the split cameras.
    pub fn mean_imbalance(&self) -> f64 {
        let split: Vec<_> = self.entries.iter().filter(|e| e.split.is_some()).collect();
        if split.is_empty() {
            return 0.0;
        }
        split.iter().map(|e| (e.left_share() - 0.5).abs()).sum::<f64>() / split.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The one or two sub-cameras that render a view.
pub fn sub_cameras<T: Real>(cam: &Camera<T>, split: Option<u32>) -> Vec<Camera<T>> {
    let vp = cam.viewport;
    match split {
        Some(s) if s > 0 && s < vp.width() => {
            vec![cam.crop_columns(vp.x0, vp.x0 + s), cam.crop_columns(vp.x0 + s, vp.x1)]
        }
        _ => vec![cam.clone()],
    }
}

fn side_counts<T: Real>(geo: &[T], cam: &Camera<T>, s: u32, cfg: &RenderConfig) -> (usize, usize) {
    let subs = sub_cameras(cam, Some(s));
    let l = frustum_cull(geo, &subs[0], cfg.cull_sigma, cfg.low_pass).len();
    let r = frustum_cull(geo, &subs[1], cfg.cull_sigma, cfg.low_pass).len();
    (l, r)
}

/// Searches the split column of one camera: evaluate the midpoint, then
/// [`SEARCH_STEPS`] bisection steps toward the less populated side, keeping
/// the visited column with the smallest count difference (earliest on ties).
///
/// Returns `(column, left, right, steps)`, or `None` for a viewport narrower
/// than two pixels.
pub fn search_split<T: Real>(geo: &[T], cam: &Camera<T>, cfg: &RenderConfig) -> Option<(u32, usize, usize, u32)> {
    let w = cam.viewport.width();
    if w < 2 {
        return None;
    }
    let (mut lo, mut hi) = (1u32, w - 1);
    let mut s = w / 2;
    let (l, r) = side_counts(geo, cam, s, cfg);
    let mut best = (s, l, r);
    let (mut cl, mut cr) = (l, r);
    for _ in 0..SEARCH_STEPS {
        // Too many on the left: the left half shrinks.
        if cl > cr {
            hi = s;
            s = lo + (s - lo) / 2;
        } else {
            lo = s;
            s = s + (hi - s).div_ceil(2);
        }
        s = s.clamp(1, w - 1);
        (cl, cr) = side_counts(geo, cam, s, cfg);
        if cl.abs_diff(cr) < best.1.abs_diff(best.2) {
            best = (s, cl, cr);
        }
    }
    Some((best.0, best.1, best.2, SEARCH_STEPS))
}

/// Split table for `cams` against the initial Gaussians.
pub fn compute_split_points<T: Real>(
    gs: &GaussianSet<T>,
    cams: &[Camera<T>],
    mem_limit: f64,
    cfg: &RenderConfig,
) -> Result<SplitTable> {
    if !(mem_limit > 0.0) {
        return Err(Error::Config(format!("mem_limit must be positive, got {mem_limit}")));
    }
    let n = gs.len();
    let results: Vec<(SplitEntry, Option<String>)> = cams
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let used = frustum_cull(&gs.geometric, cam, cfg.cull_sigma, cfg.low_pass).len();
            let used_ratio = if n == 0 { 0.0 } else { used as f64 / n as f64 };
            let mut entry = SplitEntry {
                used_ratio,
                split: None,
                left: used,
                right: 0,
                iterations: 0,
            };
            if used_ratio <= mem_limit {
                return (entry, None);
            }
            match search_split(&gs.geometric, cam, cfg) {
                Some((s, l, r, it)) => {
                    entry.split = Some(s);
                    entry.left = l;
                    entry.right = r;
                    entry.iterations = it;
                    (entry, None)
                }
                None => (entry, Some(format!("camera {i}: viewport narrower than 2 pixels, not split"))),
            }
        })
        .collect();
    let (entries, warnings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SplitTable {
        mem_limit,
        entries,
        warnings: warnings.into_iter().flatten().collect(),
    })
}

/// One sub-viewport of a view and the ids culled for it.
#[derive(Debug, Clone)]
pub struct SubPass<T> {
    pub cam: Camera<T>,
    pub ids: Vec<u32>,
}

pub fn cull_passes<T: Real>(geo: &[T], cams: Vec<Camera<T>>, cfg: &RenderConfig) -> Vec<SubPass<T>> {
    cams.into_iter()
        .map(|cam| {
            let ids = frustum_cull(geo, &cam, cfg.cull_sigma, cfg.low_pass);
            SubPass { cam, ids }
        })
        .collect()
}

/// Sorted union of the sub-passes' ids.
pub fn union_ids<T>(passes: &[SubPass<T>]) -> Vec<u32> {
    let mut ids: Vec<u32> = passes.iter().flat_map(|p| p.ids.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Device footprint of one sub-pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassStats {
    pub visible: usize,
    /// Saved rasterizer state, projected Gaussians, rendered image and its
    /// loss gradient.
    pub activation_bytes: usize,
    pub grad_bytes: usize,
}

pub struct PassOutput<T> {
    pub loss: T,
    /// 59-wide gradients over the union of the sub-passes' ids.
    pub grads: GradBuffer<T>,
    /// Screen-space mean gradients (2 wide) over the same ids.
    pub screen: GradBuffer<T>,
    pub image: Image<T>,
    pub stats: Vec<PassStats>,
}

/// Renders and differentiates each sub-pass in order and sums the results.
///
/// `gather(ids, geo, app)` appends the geometric and appearance rows of
/// `ids` to the two buffers.
pub fn run_passes<T: Real, F>(
    passes: &[SubPass<T>],
    sh_degree: u8,
    gt: &Image<T>,
    cfg: &RenderConfig,
    mut gather: F,
) -> PassOutput<T>
where
    F: FnMut(&[u32], &mut Vec<T>, &mut Vec<T>),
{
    let count = gt.data.len();
    let mut image = Image::filled(gt.width, gt.height, cfg.background.rgb());
    let mut loss = T::zero();
    let mut grads = GradBuffer::empty(PARAM_DIM);
    let mut screen = GradBuffer::empty(2);
    let mut stats = Vec::with_capacity(passes.len());
    let (mut geo, mut app) = (Vec::new(), Vec::new());
    for p in passes {
        let vp = p.cam.viewport;
        geo.clear();
        app.clear();
        gather(&p.ids, &mut geo, &mut app);
        let view = ViewParams::new(&p.ids, &geo, &app, sh_degree);
        let r = render(&view, &p.cam, cfg);
        let target = if vp.width() == gt.width { gt.clone() } else { gt.crop_columns(vp.x0, vp.x1) };
        let l = l1_loss(&r.image, &target, Some(count));
        let b = render_backward(&r, &view, &p.cam, cfg, &l.grad);
        loss += l.value;
        image.paste_columns(&r.image, vp.x0);
        stats.push(PassStats {
            visible: p.ids.len(),
            activation_bytes: r.aux.bytes()
                + r.proj.len() * std::mem::size_of::<Projected2D<T>>()
                + 2 * r.image.data.len() * T::BYTES,
            grad_bytes: b.grads.bytes(),
        });
        let sg = GradBuffer {
            ids: p.ids.clone(),
            dim: 2,
            rows: b.screen_grad.iter().flatten().copied().collect(),
        };
        if passes.len() == 1 {
            grads = b.grads;
            screen = sg;
        } else {
            grads = grads.merge(&b.grads);
            screen = screen.merge(&sg);
        }
    }
    PassOutput {
        loss,
        grads,
        screen,
        image,
        stats,
    }
}
