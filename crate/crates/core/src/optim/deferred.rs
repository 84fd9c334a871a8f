use rayon::prelude::*;

use super::adam::kernel;
use super::{build_luts, GradBuffer, Group, Hyperparams, ScaleLuts, StepConsts};
use crate::error::{Error, Result};
use crate::real::Real;

/// Origin of one row when a block is rebuilt after densification.
#[derive(Debug, Clone, PartialEq)]
pub enum RowSource<T> {
    Keep(usize),
    Fresh(Vec<T>),
}

/// Parameters, Adam states and defer counters of one tier, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T> {
    pub columns: Vec<Group>,
    pub params: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Steps skipped since the row was last written; at most `max`.
    pub counters: Vec<u8>,
    pub max: u8,
}

impl<T: Real> ParamBlock<T> {
    pub fn new(params: Vec<T>, columns: Vec<Group>, max: u8) -> Self {
        let dim = columns.len();
        assert!(dim > 0 && params.len() % dim == 0);
        let n = params.len() / dim;
        Self {
            m: vec![T::zero(); params.len()],
            v: vec![T::zero(); params.len()],
            counters: vec![0; n],
            params,
            columns,
            max,
        }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    pub fn row(&self, id: usize) -> &[T] {
        let d = self.dim();
        &self.params[id * d..(id + 1) * d]
    }

    /// Bytes of parameters, of both states, and of counters.
    pub fn bytes(&self) -> (usize, usize, usize) {
        (self.params.len() * T::BYTES, 2 * self.m.len() * T::BYTES, self.counters.len())
    }

    /// Rebuilds the block row by row. Kept rows carry their parameters,
    /// states and counter along; fresh rows get zero states and counter.
    pub fn rebuild(&self, rows: &[RowSource<T>]) -> Self {
        let d = self.dim();
        let mut out = Self {
            columns: self.columns.clone(),
            params: Vec::with_capacity(rows.len() * d),
            m: Vec::with_capacity(rows.len() * d),
            v: Vec::with_capacity(rows.len() * d),
            counters: Vec::with_capacity(rows.len()),
            max: self.max,
        };
        for src in rows {
            match src {
                RowSource::Keep(s) => {
                    let r = s * d..(s + 1) * d;
                    out.params.extend_from_slice(&self.params[r.clone()]);
                    out.m.extend_from_slice(&self.m[r.clone()]);
                    out.v.extend_from_slice(&self.v[r]);
                    out.counters.push(self.counters[*s]);
                }
                RowSource::Fresh(p) => {
                    assert_eq!(p.len(), d);
                    out.params.extend_from_slice(p);
                    out.m.extend(std::iter::repeat_n(T::zero(), d));
                    out.v.extend(std::iter::repeat_n(T::zero(), d));
                    out.counters.push(0);
                }
            }
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        if let Some((i, &c)) = self.counters.iter().enumerate().find(|(_, &c)| c > self.max) {
            return Err(Error::Invariant(format!("counter of Gaussian {i} is {c}, above the maximum {}", self.max)));
        }
        if let Some(k) = self.v.iter().position(|&x| x < T::zero() || !x.is_finite()) {
            return Err(Error::Invariant(format!("variance entry {k} is {}", self.v[k])));
        }
        Ok(())
    }
}

/// Replay of `d >= 1` skipped steps on one scalar without a new gradient.
#[inline(always)]
fn replay<T: Real>(w: &mut T, m: &mut T, v: &mut T, d: usize, w_scale: T, luts: &ScaleLuts<T>, eps: T) {
    *w -= w_scale * *m / (v.sqrt() + eps);
    *m *= luts.mom[d - 1];
    *v *= luts.var[d - 1];
}

/// Kernel for one row at step `luts.step`: replay `delay` skipped steps, then
/// take the step with gradient `g` (zeros when `None`).
#[inline]
#[allow(clippy::too_many_arguments)]
fn update_row<T: Real>(
    w: &mut [T],
    m: &mut [T],
    v: &mut [T],
    g: Option<&[T]>,
    delay: u8,
    columns: &[Group],
    luts: &ScaleLuts<T>,
    c: &StepConsts<T>,
) {
    let d = luts.usable(delay);
    for k in 0..w.len() {
        let gi = columns[k].index();
        let gk = g.map_or(T::zero(), |g| g[k]);
        let ws = (d > 0).then(|| luts.param[gi][d]);
        kernel(&mut w[k], &mut m[k], &mut v[k], gk, luts.mom[d], luts.var[d], ws, c.step_size[gi], c);
    }
}

/// One deferred Adam step. Rows with a gradient or a saturated counter are
/// brought up to date and stepped; all others only count the skipped step.
///
/// Returns the touched ids in ascending order.
pub fn deferred_update<T: Real>(block: &mut ParamBlock<T>, grads: &GradBuffer<T>, step: u64, hp: &Hyperparams) -> Vec<u32> {
    let dim = block.dim();
    assert_eq!(grads.dim, dim, "gradient width does not match the block");
    let luts = build_luts::<T>(step, block.max, hp);
    let c = StepConsts::<T>::new(step, hp);
    let mut slot = vec![u32::MAX; block.len()];
    for (k, &id) in grads.ids.iter().enumerate() {
        slot[id as usize] = k as u32;
    }
    let max = block.max;
    let columns = &block.columns;
    let ParamBlock {
        params, m, v, counters, ..
    } = block;
    params
        .par_chunks_mut(dim)
        .zip(m.par_chunks_mut(dim))
        .zip(v.par_chunks_mut(dim))
        .zip(counters.par_iter_mut())
        .zip(slot.par_iter())
        .enumerate()
        .filter_map(|(id, ((((w, m), v), counter), &s))| {
            if s == u32::MAX && *counter < max {
                *counter += 1;
                return None;
            }
            let g = (s != u32::MAX).then(|| grads.row(s as usize));
            update_row(w, m, v, g, *counter, columns, &luts, &c);
            *counter = 0;
            Some(id as u32)
        })
        .collect()
}

/// Current value of row `id` with its skipped steps replayed, for a block
/// whose next step is `step`.
pub fn materialized_row<T: Real>(block: &ParamBlock<T>, id: usize, luts: &ScaleLuts<T>, eps: T, out: &mut [T]) {
    let dim = block.dim();
    out.copy_from_slice(block.row(id));
    let d = luts.usable(block.counters[id]);
    if d == 0 {
        return;
    }
    let r = id * dim..(id + 1) * dim;
    for (k, ((w, &m), &v)) in out.iter_mut().zip(&block.m[r.clone()]).zip(&block.v[r]).enumerate() {
        let (mut m, mut v) = (m, v);
        replay(w, &mut m, &mut v, d, luts.param[block.columns[k].index()][d], luts, eps);
    }
}

/// Replays all skipped steps ahead of `step` and zeroes every counter.
pub fn materialize<T: Real>(block: &mut ParamBlock<T>, step: u64, hp: &Hyperparams) {
    let dim = block.dim();
    let luts = build_luts::<T>(step.max(1), block.max, hp);
    let eps = T::c(hp.eps);
    let columns = &block.columns;
    let ParamBlock {
        params, m, v, counters, ..
    } = block;
    params
        .par_chunks_mut(dim)
        .zip(m.par_chunks_mut(dim))
        .zip(v.par_chunks_mut(dim))
        .zip(counters.par_iter_mut())
        .for_each(|(((w, m), v), counter)| {
            let d = luts.usable(*counter);
            if d > 0 {
                for k in 0..dim {
                    replay(&mut w[k], &mut m[k], &mut v[k], d, luts.param[columns[k].index()][d], &luts, eps);
                }
            }
            *counter = 0;
        });
}

/// Rows `ids` as they will be once the pending step has been applied,
/// without modifying the block.
///
/// With `pending`, `step` is the step those gradients will be applied at:
/// rows that step will touch are run through the same kernel as
/// [`deferred_update`], and the others are replayed one delay further.
/// Without `pending`, `step` is the block's next step and rows are replayed
/// up to it.
pub fn restore_view<T: Real>(
    block: &ParamBlock<T>,
    ids: &[u32],
    pending: Option<&GradBuffer<T>>,
    step: u64,
    hp: &Hyperparams,
    out: &mut [T],
) {
    let dim = block.dim();
    assert_eq!(out.len(), ids.len() * dim);
    let eps = T::c(hp.eps);
    match pending {
        None => {
            let luts = build_luts::<T>(step, block.max, hp);
            out.par_chunks_mut(dim)
                .zip(ids.par_iter())
                .for_each(|(o, &id)| materialized_row(block, id as usize, &luts, eps, o));
        }
        Some(grads) => {
            assert_eq!(grads.dim, dim);
            let now = build_luts::<T>(step, block.max, hp);
            let next = build_luts::<T>(step + 1, block.max, hp);
            let c = StepConsts::<T>::new(step, hp);
            out.par_chunks_mut(dim).zip(ids.par_iter()).for_each(|(o, &id)| {
                let id = id as usize;
                let g = grads.get(id as u32);
                let counter = block.counters[id];
                let r = id * dim..(id + 1) * dim;
                o.copy_from_slice(&block.params[r.clone()]);
                if g.is_some() || counter >= block.max {
                    let mut m = block.m[r.clone()].to_vec();
                    let mut v = block.v[r].to_vec();
                    update_row(o, &mut m, &mut v, g, counter, &block.columns, &now, &c);
                } else {
                    let d = next.usable(counter + 1);
                    for k in 0..dim {
                        let (mut m, mut v) = (block.m[r.start + k], block.v[r.start + k]);
                        replay(&mut o[k], &mut m, &mut v, d, next.param[block.columns[k].index()][d], &next, eps);
                    }
                }
            });
        }
    }
}
