//! Pipelined training iteration over a tiered store.
//!
//! Iteration `n` takes optimizer step `n + 1`. Its host work is split in
//! two: forwarding builds the rows of view `n` as they will be once the
//! gradients of iteration `n − 1` are applied, and the lazy update then
//! applies those gradients to the host tier while the device renders view
//! `n`. Host jobs run in submission order, so the lazy update of `n − 1`
//! always follows the forwarding reads of `n` and precedes those of `n + 1`.

use std::borrow::Cow;
use std::sync::mpsc::{self, Receiver};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::host::{Executor, Forwarded, GradSlot, HostSide, Jitter, SlotEvent, SlotLog};
use super::memory::{Breakdown, MemoryReport};
use super::store::{plan_chunks, validate_chunk_bytes, TieredStore, DEFAULT_CHUNK_BYTES};
use super::timeline::{Stage, Timeline, Worker};
use crate::error::{Error, Result};
use crate::optim::{
    deferred_update, restore_view, AccessReport, GradBuffer, Hyperparams, ParamBlock, RowSource, DEFAULT_MAX_DEFER,
};
use crate::real::Real;
use crate::render::{Image, RenderConfig};
use crate::scene::{Camera, GaussianSet, APP_DIM, GEO_DIM};
use crate::split::{cull_passes, run_passes, union_ids, SubPass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Host jobs run inline on the calling thread.
    Serial,
    /// Host jobs run on their own worker, overlapping device work.
    Pipelined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub schedule: Schedule,
    pub chunk_bytes: usize,
    /// Defer limit of the host tier.
    pub host_max: u8,
    /// Defer limit of the device tier. Zero makes device updates dense.
    pub device_max: u8,
    /// Check forwarding coherence and counter ranges every iteration.
    pub verify: bool,
    pub timeline: bool,
    /// Upper bound of random sleeps inserted before each stage (tests only).
    pub jitter_us: u64,
    pub jitter_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Pipelined,
            chunk_bytes: DEFAULT_CHUNK_BYTES,
            host_max: DEFAULT_MAX_DEFER,
            device_max: 0,
            verify: false,
            timeline: true,
            jitter_us: 0,
            jitter_seed: 0,
        }
    }
}

/// A training view: one camera, or the two halves of a split one.
#[derive(Debug, Clone)]
pub struct View<T> {
    /// Camera index, used to match a view against the culling done ahead.
    pub index: usize,
    pub cams: Vec<Camera<T>>,
}

#[derive(Debug, Clone)]
pub struct IterationResult<T> {
    pub iteration: u64,
    pub loss: T,
    /// Sorted ids rendered this iteration.
    pub ids: Vec<u32>,
    /// Screen-space mean gradients over `ids`.
    pub screen: GradBuffer<T>,
}

pub struct Engine<T: Real> {
    cfg: EngineConfig,
    hp: Hyperparams,
    render: RenderConfig,
    device: ParamBlock<T>,
    device_applied: u64,
    sh_degree: u8,
    host: Executor<T>,
    host_len: usize,
    free: Receiver<GradSlot<T>>,
    iteration: u64,
    next: Option<(usize, Vec<SubPass<T>>)>,
    staging_ids: Vec<u32>,
    staging: Vec<T>,
    max_slot_rows: usize,
    memory: MemoryReport,
    device_access: AccessReport,
    timeline: Timeline,
    slot_log: SlotLog,
    jitter: Option<Jitter>,
}

impl<T: Real> Engine<T> {
    pub fn new(store: TieredStore<T>, hp: Hyperparams, render: RenderConfig, cfg: EngineConfig) -> Result<Self> {
        validate_chunk_bytes(cfg.chunk_bytes)?;
        hp.validate()?;
        if store.host.max != cfg.host_max || store.device.max != cfg.device_max {
            return Err(Error::Config("store defer limits do not match the engine config".into()));
        }
        let timeline = Timeline::new(cfg.timeline);
        let slot_log = SlotLog::default();
        let (free_tx, free) = mpsc::channel();
        for id in 0..2 {
            free_tx
                .send(GradSlot {
                    id,
                    iteration: 0,
                    grads: GradBuffer::empty(APP_DIM),
                })
                .unwrap();
        }
        let host_len = store.host.len();
        let host = HostSide {
            block: store.host,
            pending: None,
            applied: 0,
            access: AccessReport::default(),
            forwarded: None,
            error: None,
            free: free_tx,
            timeline: timeline.clone(),
            slot_log: slot_log.clone(),
            jitter: Jitter::new(cfg.jitter_seed ^ 0x5eed, cfg.jitter_us),
        };
        let host = match cfg.schedule {
            Schedule::Serial => Executor::inline(host),
            Schedule::Pipelined => Executor::spawn(host),
        };
        let mut e = Self {
            jitter: Jitter::new(cfg.jitter_seed, cfg.jitter_us),
            cfg,
            hp,
            render,
            device: store.device,
            device_applied: 0,
            sh_degree: store.sh_degree,
            host,
            host_len,
            free,
            iteration: 0,
            next: None,
            staging_ids: Vec::new(),
            staging: Vec::new(),
            max_slot_rows: 0,
            memory: MemoryReport::default(),
            device_access: AccessReport::default(),
            timeline,
            slot_log,
        };
        e.sample(0, 0, 0);
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.device.len()
    }

    pub fn is_empty(&self) -> bool {
        self.device.is_empty()
    }

    /// Index of the next iteration.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    /// Current geometric rows, with skipped device steps replayed.
    pub fn device_rows(&self) -> Cow<'_, [T]> {
        if self.device.max == 0 {
            return Cow::Borrowed(&self.device.params);
        }
        let ids: Vec<u32> = (0..self.device.len() as u32).collect();
        let mut out = vec![T::zero(); self.device.params.len()];
        restore_view(&self.device, &ids, None, self.device_applied + 1, &self.hp, &mut out);
        Cow::Owned(out)
    }

    pub fn device_block(&self) -> &ParamBlock<T> {
        &self.device
    }

    /// One training iteration on `view`. When `next` is given, its culling
    /// runs at the end of this iteration, after the geometric update.
    pub fn run_iteration(&mut self, view: &View<T>, gt: &Image<T>, next: Option<&View<T>>) -> Result<IterationResult<T>> {
        let n = self.iteration;
        let passes = match self.next.take() {
            Some((i, p)) if i == view.index => p,
            _ => self.cull(n, view),
        };
        let ids = union_ids(&passes);

        self.forward_params(n, &ids);
        self.lazy_host_update();

        Jitter::pause(&mut self.jitter);
        let out = {
            let geo = self.device_rows();
            let staging = &self.staging;
            let staging_ids = &self.staging_ids;
            let sh = self.sh_degree;
            let (render, gt_ref) = (&self.render, gt);
            self.timeline.span(n, Stage::Render, Worker::Device, None, || {
                let out = run_passes(&passes, sh, gt_ref, render, |sub, g, a| {
                    for &id in sub {
                        let k = staging_ids.binary_search(&id).expect("rendered id was forwarded");
                        g.extend_from_slice(&geo[id as usize * GEO_DIM..(id as usize + 1) * GEO_DIM]);
                        a.extend_from_slice(&staging[k * APP_DIM..(k + 1) * APP_DIM]);
                    }
                });
                (out, 0)
            })
        };
        let mut grads_so_far = 0;
        for s in out.stats.clone() {
            grads_so_far += s.grad_bytes;
            self.sample(grads_so_far, s.activation_bytes, self.staging.len() * T::BYTES);
        }

        self.device_geo_update(n, &out.grads);

        if let Some(nv) = next {
            let p = self.cull(n, nv);
            self.next = Some((nv.index, p));
        }

        self.handoff(n, &out.grads);

        if self.cfg.verify {
            self.device.check_invariants()?;
            if let Some(e) = self.host.call(|h| h.error.take()) {
                return Err(Error::Invariant(e));
            }
        }
        self.iteration += 1;
        Ok(IterationResult {
            iteration: n,
            loss: out.loss,
            ids,
            screen: out.screen,
        })
    }

    fn cull(&self, n: u64, view: &View<T>) -> Vec<SubPass<T>> {
        let geo = self.device_rows();
        let r = &self.render;
        self.timeline.span(n, Stage::Cull, Worker::Device, None, || (cull_passes(&geo, view.cams.clone(), r), 0))
    }

    /// Stages the appearance rows of `ids` as they will be after the pending
    /// host update, chunk by chunk, without touching host state.
    fn forward_params(&mut self, n: u64, ids: &[u32]) {
        let row_bytes = APP_DIM * T::BYTES;
        let chunks = plan_chunks(ids.len(), row_bytes, self.cfg.chunk_bytes);
        let nchunks = chunks.len();
        let (tx, rx) = mpsc::channel();
        let shared: Arc<Vec<u32>> = Arc::new(ids.to_vec());
        let job_ids = shared.clone();
        let hp = self.hp.clone();
        let verify = self.cfg.verify;
        self.host.submit(move |h| {
            let timeline = h.timeline.clone();
            let pending = h.pending.take();
            if let Some(s) = &pending {
                h.log(s, SlotEvent::ReadStart);
            }
            let step = pending.as_ref().map_or(h.applied + 1, |s| s.iteration + 1);
            let mut copy = verify.then(|| Vec::with_capacity(job_ids.len() * APP_DIM));
            for r in chunks {
                let mut rows = vec![T::zero(); r.len() * APP_DIM];
                let buffer = pending.as_ref().map(|s| s.id);
                timeline.span(n, Stage::Forward, Worker::Host, buffer, || {
                    restore_view(&h.block, &job_ids[r.clone()], pending.as_ref().map(|s| &s.grads), step, &hp, &mut rows);
                    ((), rows.len() * T::BYTES)
                });
                if let Some(c) = copy.as_mut() {
                    c.extend_from_slice(&rows);
                }
                let _ = tx.send((r, rows));
            }
            h.access.forward_bytes += job_ids.len() * 3 * row_bytes;
            if let Some(s) = &pending {
                h.log(s, SlotEvent::ReadEnd);
            }
            h.pending = pending;
            h.forwarded = copy.map(|rows| Forwarded {
                ids: job_ids.to_vec(),
                rows,
            });
        });
        self.staging.clear();
        self.staging.resize(shared.len() * APP_DIM, T::zero());
        for (r, rows) in rx.iter().take(nchunks) {
            self.staging[r.start * APP_DIM..r.end * APP_DIM].copy_from_slice(&rows);
        }
        self.staging_ids = Arc::unwrap_or_clone(shared);
    }

    /// Queues the deferred host update with the pending gradients, if any.
    fn lazy_host_update(&mut self) {
        let hp = self.hp.clone();
        let verify = self.cfg.verify;
        self.host.submit(move |h| {
            let Some(slot) = h.pending.take() else {
                return;
            };
            let timeline = h.timeline.clone();
            h.log(&slot, SlotEvent::ReadStart);
            let step = slot.iteration + 1;
            let n = h.block.len();
            let touched = timeline.span(slot.iteration, Stage::LazyUpdate, Worker::Host, Some(slot.id), || {
                let t = deferred_update(&mut h.block, &slot.grads, step, &hp);
                let bytes = 7 * APP_DIM * T::BYTES * t.len() + n;
                (t, bytes)
            });
            h.applied = step;
            h.access.add(&AccessReport::deferred(touched.len(), n, APP_DIM, T::BYTES));
            if verify && h.error.is_none() {
                if let Err(e) = h.block.check_invariants() {
                    h.error = Some(e.to_string());
                }
                if let Some(f) = h.forwarded.take() {
                    let mut now = vec![T::zero(); f.rows.len()];
                    restore_view(&h.block, &f.ids, None, step + 1, &hp, &mut now);
                    if let Some(k) = now.iter().zip(&f.rows).position(|(a, b)| a.f64().to_bits() != b.f64().to_bits()) {
                        let id = f.ids[k / APP_DIM];
                        h.error = Some(format!(
                            "forwarded row of Gaussian {id} differs from the host row after the lazy update of iteration {}",
                            slot.iteration
                        ));
                    }
                }
            }
            h.log(&slot, SlotEvent::ReadEnd);
            h.log(&slot, SlotEvent::Release);
            let _ = h.free.send(slot);
        });
    }

    fn device_geo_update(&mut self, n: u64, grads: &GradBuffer<T>) {
        let g = grads.columns(0..GEO_DIM);
        let step = n + 1;
        let hp = &self.hp;
        let dev = &mut self.device;
        let touched = self.timeline.span(n, Stage::GeoUpdate, Worker::Device, None, || {
            let t = deferred_update(dev, &g, step, hp);
            let b = 7 * GEO_DIM * T::BYTES * t.len();
            (t, b)
        });
        self.device_applied = step;
        self.device_access
            .add(&AccessReport::deferred(touched.len(), self.device.len(), GEO_DIM, T::BYTES));
        self.sample(grads.bytes(), 0, self.staging.len() * T::BYTES);
    }

    /// Copies the appearance gradients into a free staging buffer and hands
    /// it to the host. Blocks while both buffers are still being read.
    fn handoff(&mut self, n: u64, grads: &GradBuffer<T>) {
        Jitter::pause(&mut self.jitter);
        let mut slot = self.free.recv().expect("host worker stopped");
        slot.iteration = n;
        self.slot_log.lock().unwrap().push((slot.id, n, SlotEvent::Write));
        let bytes = grads.len() * APP_DIM * T::BYTES;
        self.timeline.span(n, Stage::Handoff, Worker::Device, Some(slot.id), || {
            grads.columns_into(GEO_DIM..GEO_DIM + APP_DIM, &mut slot.grads);
            ((), bytes)
        });
        self.max_slot_rows = self.max_slot_rows.max(grads.len());
        self.host.submit(move |h| h.pending = Some(slot));
    }

    fn sample(&mut self, grads: usize, activations: usize, staging: usize) {
        let (p, s, c) = self.device.bytes();
        self.memory.sample(Breakdown {
            params: p,
            states: s + c,
            grads,
            staging,
            activations,
        });
        let n = self.host_len;
        self.memory.set_host(Breakdown {
            params: n * APP_DIM * T::BYTES,
            states: 2 * n * APP_DIM * T::BYTES + n,
            grads: 2 * self.max_slot_rows * APP_DIM * T::BYTES,
            staging: 0,
            activations: 0,
        });
    }

    /// Applies any pending host update and waits for the host worker.
    pub fn drain(&mut self) -> Result<()> {
        self.lazy_host_update();
        match self.host.call(|h| h.error.take()) {
            Some(e) => Err(Error::Invariant(e)),
            None => Ok(()),
        }
    }

    /// Current parameters of every Gaussian, with all pending and skipped
    /// steps applied. Host state is left as is.
    pub fn snapshot(&mut self) -> Result<GaussianSet<T>> {
        self.drain()?;
        let hp = self.hp.clone();
        let app = self.host.call(move |h| {
            let ids: Vec<u32> = (0..h.block.len() as u32).collect();
            let mut out = vec![T::zero(); h.block.params.len()];
            restore_view(&h.block, &ids, None, h.applied + 1, &hp, &mut out);
            out
        });
        Ok(GaussianSet::from_tiers(self.device_rows().into_owned(), app, self.sh_degree))
    }

    /// Stored tiers as they are, skipped steps not replayed.
    pub fn store(&mut self) -> Result<TieredStore<T>> {
        self.drain()?;
        let host = self.host.call(|h| h.block.clone());
        Ok(TieredStore {
            device: self.device.clone(),
            host,
            sh_degree: self.sh_degree,
        })
    }

    /// Resizes both tiers after densification. The pipeline is drained
    /// first, so no gradients refer to the old ids.
    pub fn rebuild(&mut self, geo: Vec<RowSource<T>>, app: Vec<RowSource<T>>) -> Result<()> {
        assert_eq!(geo.len(), app.len());
        self.drain()?;
        self.device = self.device.rebuild(&geo);
        self.host.call(move |h| h.block = h.block.rebuild(&app));
        self.host_len = self.device.len();
        self.next = None;
        self.staging.clear();
        self.staging_ids.clear();
        Ok(())
    }

    pub fn memory(&self) -> &MemoryReport {
        &self.memory
    }

    /// Access counts of the device and host optimizer steps so far.
    pub fn access(&mut self) -> (AccessReport, AccessReport) {
        let host = self.host.call(|h| h.access);
        (self.device_access, host)
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn slot_log(&self) -> Vec<(u8, u64, SlotEvent)> {
        self.slot_log.lock().unwrap().clone()
    }
}
