use serde::{Deserialize, Serialize};

/// Bytes per category at one sample point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub params: usize,
    /// Adam states and defer counters.
    pub states: usize,
    pub grads: usize,
    /// Forwarded appearance rows.
    pub staging: usize,
    pub activations: usize,
}

impl Breakdown {
    pub fn total(&self) -> usize {
        self.params + self.states + self.grads + self.staging + self.activations
    }

    /// Parameters, optimizer states and gradients.
    pub fn model(&self) -> usize {
        self.params + self.states + self.grads
    }

    fn max(&self, o: &Self) -> Self {
        Self {
            params: self.params.max(o.params),
            states: self.states.max(o.states),
            grads: self.grads.max(o.grads),
            staging: self.staging.max(o.staging),
            activations: self.activations.max(o.activations),
        }
    }
}

/// Running device-memory accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub last: Breakdown,
    /// Per-category running maxima; their sum can exceed `peak_total`.
    pub peak: Breakdown,
    /// Maximum of `total()` over samples, and the breakdown where it occurred.
    pub peak_total: usize,
    pub at_peak: Breakdown,
    /// Maximum of `model()` over samples.
    pub peak_model: usize,
    /// Host-resident bytes at the last sample.
    pub host: Breakdown,
    pub samples: usize,
}

impl MemoryReport {
    pub fn sample(&mut self, b: Breakdown) {
        self.last = b;
        self.peak = self.peak.max(&b);
        if b.total() > self.peak_total {
            self.peak_total = b.total();
            self.at_peak = b;
        }
        self.peak_model = self.peak_model.max(b.model());
        self.samples += 1;
    }

    pub fn set_host(&mut self, b: Breakdown) {
        self.host = b;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}
