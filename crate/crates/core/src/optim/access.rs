use serde::{Deserialize, Serialize};

/// Optimizer memory traffic of one step.
///
/// A full update of one `D`-wide row reads parameter, gradient, momentum and
/// variance (4D values) and writes parameter, momentum and variance (3D).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessReport {
    pub touched: usize,
    pub total: usize,
    pub dim: usize,
    pub scalar_bytes: usize,
    /// Counter bytes; zero for a dense step, which keeps no counters.
    pub counter_bytes: usize,
    /// Bytes read to build forwarded rows. Reported apart from the optimizer
    /// traffic because they are reads of rows the lazy step rewrites anyway.
    pub forward_bytes: usize,
}

impl AccessReport {
    pub fn deferred(touched: usize, total: usize, dim: usize, scalar_bytes: usize) -> Self {
        Self {
            touched,
            total,
            dim,
            scalar_bytes,
            counter_bytes: total,
            forward_bytes: 0,
        }
    }

    pub fn dense(total: usize, dim: usize, scalar_bytes: usize) -> Self {
        Self {
            touched: total,
            total,
            dim,
            scalar_bytes,
            counter_bytes: 0,
            forward_bytes: 0,
        }
    }

    pub fn param_state_bytes(&self) -> usize {
        7 * self.dim * self.scalar_bytes * self.touched
    }

    pub fn optimizer_bytes(&self) -> usize {
        self.param_state_bytes() + self.counter_bytes
    }

    pub fn add(&mut self, o: &Self) {
        self.touched += o.touched;
        self.total += o.total;
        self.counter_bytes += o.counter_bytes;
        self.forward_bytes += o.forward_bytes;
        if self.dim == 0 {
            self.dim = o.dim;
            self.scalar_bytes = o.scalar_bytes;
        }
    }
}
