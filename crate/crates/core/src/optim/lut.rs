use super::{Group, Hyperparams};
use crate::real::Real;

/// Per-delay restoration scales for one optimizer step.
///
/// Entries are computed in `f64` and rounded once to `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLuts<T> {
    pub step: u64,
    pub max: u8,
    /// `param[group][d]`: total parameter displacement, per unit of
    /// `m / (√v + ε)`, of the `d` skipped steps `step-d .. step-1`.
    pub param: [Vec<T>; 5],
    /// `β1^(d+1)`.
    pub mom: Vec<T>,
    /// `β2^(d+1)`.
    pub var: Vec<T>,
}

impl<T: Real> ScaleLuts<T> {
    /// Largest delay that can be replayed at this step: nothing precedes step 1.
    #[inline]
    pub fn usable(&self, delay: u8) -> usize {
        (delay as u64).min(self.step.saturating_sub(1)) as usize
    }
}

fn param_lut_recurrence(step: u64, max: u8, lr: f64, b1: f64, b2: f64) -> Vec<f64> {
    let mut lut = vec![0.0f64; max as usize + 1];
    let scale = b1 / b2.sqrt();
    let usable = (max as u64).min(step.saturating_sub(1)) as usize;
    for i in 1..=usable {
        let k = (step - i as u64) as i32;
        lut[i] = scale * lut[i - 1] + (lr * b1) / ((b2 / (1.0 - b2.powi(k))).sqrt() * (1.0 - b1.powi(k)));
    }
    for i in usable + 1..lut.len() {
        lut[i] = lut[usable];
    }
    lut
}

/// Lookup tables for `step` (1-based) and delays `0..=max`.
pub fn build_luts<T: Real>(step: u64, max: u8, hp: &Hyperparams) -> ScaleLuts<T> {
    assert!(step >= 1, "optimizer steps are 1-based");
    let (b1, b2) = (hp.beta1, hp.beta2);
    let param = Group::ALL.map(|g| {
        param_lut_recurrence(step, max, hp.lr_at(g, step), b1, b2)
            .into_iter()
            .map(T::c)
            .collect()
    });
    let mom = (0..=max as i32).map(|d| T::c(b1.powi(d + 1))).collect();
    let var = (0..=max as i32).map(|d| T::c(b2.powi(d + 1))).collect();
    ScaleLuts {
        step,
        max,
        param,
        mom,
        var,
    }
}

/// Direct summation of the skipped-step displacement, without the recurrence.
pub fn param_lut_closed_form(step: u64, delay: u32, lr: f64, b1: f64, b2: f64) -> f64 {
    let d = delay as i64;
    let t = step as i64;
    (0..d)
        .map(|l| {
            let k = (t - d + l) as i32;
            let l = l as i32;
            lr * b1.powi(l + 1) / ((b2.powi(l + 1) / (1.0 - b2.powi(k))).sqrt() * (1.0 - b1.powi(k)))
        })
        .sum()
}
