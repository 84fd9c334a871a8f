//! Reference trainer without tiering: one arena, textbook Adam over every
//! Gaussian at every step. Defines ground truth for the offloaded modes.

use crate::offload::{Breakdown, IterationResult, MemoryReport, View};
use crate::optim::{adam_step_dense, AccessReport, Group, Hyperparams, ParamBlock, RowSource};
use crate::real::Real;
use crate::render::{Image, RenderConfig};
use crate::scene::{GaussianSet, APP_DIM, GEO_DIM, PARAM_DIM};
use crate::split::{cull_passes, run_passes};

pub struct DenseTrainer<T> {
    geo: ParamBlock<T>,
    app: ParamBlock<T>,
    sh_degree: u8,
    hp: Hyperparams,
    render: RenderConfig,
    iteration: u64,
    memory: MemoryReport,
    access: AccessReport,
    geo_grads: Vec<T>,
    app_grads: Vec<T>,
}

impl<T: Real> DenseTrainer<T> {
    pub fn new(gs: &GaussianSet<T>, hp: Hyperparams, render: RenderConfig) -> Self {
        Self {
            geo: ParamBlock::new(gs.geometric.clone(), Group::geometric_columns(), 0),
            app: ParamBlock::new(gs.appearance.clone(), Group::appearance_columns(), 0),
            sh_degree: gs.sh_degree,
            hp,
            render,
            iteration: 0,
            memory: MemoryReport::default(),
            access: AccessReport::default(),
            geo_grads: Vec::new(),
            app_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.geo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geo.is_empty()
    }

    pub fn geometric(&self) -> &[T] {
        &self.geo.params
    }

    pub fn step(&mut self, view: &View<T>, gt: &Image<T>) -> IterationResult<T> {
        let n = self.iteration;
        let passes = cull_passes(&self.geo.params, view.cams.clone(), &self.render);
        let (geo, app) = (&self.geo.params, &self.app.params);
        let out = run_passes(&passes, self.sh_degree, gt, &self.render, |ids, g, a| {
            for &id in ids {
                let i = id as usize;
                g.extend_from_slice(&geo[i * GEO_DIM..(i + 1) * GEO_DIM]);
                a.extend_from_slice(&app[i * APP_DIM..(i + 1) * APP_DIM]);
            }
        });

        let len = self.len();
        self.geo_grads.clear();
        self.geo_grads.resize(len * GEO_DIM, T::zero());
        self.app_grads.clear();
        self.app_grads.resize(len * APP_DIM, T::zero());
        for (k, &id) in out.grads.ids.iter().enumerate() {
            let i = id as usize;
            let row = out.grads.row(k);
            self.geo_grads[i * GEO_DIM..(i + 1) * GEO_DIM].copy_from_slice(&row[..GEO_DIM]);
            self.app_grads[i * APP_DIM..(i + 1) * APP_DIM].copy_from_slice(&row[GEO_DIM..]);
        }
        let step = n + 1;
        let b = &mut self.geo;
        adam_step_dense(&mut b.params, &mut b.m, &mut b.v, &self.geo_grads, &b.columns, step, &self.hp);
        let b = &mut self.app;
        adam_step_dense(&mut b.params, &mut b.m, &mut b.v, &self.app_grads, &b.columns, step, &self.hp);

        let p = len * PARAM_DIM * T::BYTES;
        for s in &out.stats {
            self.memory.sample(Breakdown {
                params: p,
                states: 2 * p,
                grads: p,
                staging: 0,
                activations: s.activation_bytes,
            });
        }
        self.access.add(&AccessReport::dense(len, PARAM_DIM, T::BYTES));
        self.iteration += 1;
        IterationResult {
            iteration: n,
            loss: out.loss,
            ids: out.grads.ids,
            screen: out.screen,
        }
    }

    pub fn snapshot(&self) -> GaussianSet<T> {
        GaussianSet::from_tiers(self.geo.params.clone(), self.app.params.clone(), self.sh_degree)
    }

    pub fn rebuild(&mut self, geo: &[RowSource<T>], app: &[RowSource<T>]) {
        self.geo = self.geo.rebuild(geo);
        self.app = self.app.rebuild(app);
    }

    pub fn memory(&self) -> &MemoryReport {
        &self.memory
    }

    pub fn access(&self) -> AccessReport {
        self.access
    }
}
