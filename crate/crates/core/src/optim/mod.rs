//! Adam, dense and deferred.
//!
//! The deferred variant skips Gaussians that received no gradient, counts how
//! many steps each one has missed, and replays the missed steps in closed
//! form the next time it is touched. Replaying momentum and variance is a
//! single multiply by `β^(d+1)`; replaying the parameter uses a precomputed
//! per-delay scale that treats `ε` as negligible.

mod access;
mod adam;
mod deferred;
mod grad;
mod lut;

use serde::{Deserialize, Serialize};

pub use access::AccessReport;
pub use adam::{adam_step_dense, StepConsts};
pub use deferred::{deferred_update, materialize, materialized_row, restore_view, ParamBlock, RowSource};
pub use grad::GradBuffer;
pub use lut::{build_luts, param_lut_closed_form, ScaleLuts};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEFER: u8 = 15;

/// Parameter group; each has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Mean,
    Scale,
    Quat,
    Opacity,
    Sh,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Mean, Group::Scale, Group::Quat, Group::Opacity, Group::Sh];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column groups of the 10-wide geometric row.
    pub fn geometric_columns() -> Vec<Group> {
        let mut g = vec![Group::Mean; 3];
        g.extend([Group::Scale; 3]);
        g.extend([Group::Quat; 4]);
        g
    }

    /// Column groups of the 49-wide appearance row.
    pub fn appearance_columns() -> Vec<Group> {
        let mut g = vec![Group::Opacity];
        g.extend([Group::Sh; 48]);
        g
    }

    /// Column groups of the full 59-wide row.
    pub fn full_columns() -> Vec<Group> {
        let mut g = Self::geometric_columns();
        g.extend(Self::appearance_columns());
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mean: f64,
    pub scale: f64,
    pub quat: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            scale: 5e-3,
            quat: 1e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
        }
    }
}

/// Exponential decay of the mean learning rate from its initial value to
/// `final_mean` over `steps` steps, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSchedule {
    pub final_mean: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub scene_extent: f64,
    pub mean_schedule: Option<MeanSchedule>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scene_extent: 1.0,
            mean_schedule: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr.mean, self.lr.scale, self.lr.quat, self.lr.opacity, self.lr.sh];
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.eps > 0.0) || lrs.iter().any(|&l| !(l > 0.0)) || !(self.scene_extent > 0.0) {
            return Err(Error::Config("learning rates, eps and scene extent must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of `group` at 1-based `step`.
    pub fn lr_at(&self, group: Group, step: u64) -> f64 {
        match group {
            Group::Mean => {
                let init = self.lr.mean * self.scene_extent;
                match self.mean_schedule {
                    Some(s) if s.steps > 0 => {
                        let fin = s.final_mean * self.scene_extent;
                        let frac = ((step.saturating_sub(1)) as f64 / s.steps as f64).min(1.0);
                        (init.ln() * (1.0 - frac) + fin.ln() * frac).exp()
                    }
                    _ => init,
                }
            }
            Group::Scale => self.lr.scale,
            Group::Quat => self.lr.quat,
            Group::Opacity => self.lr.opacity,
            Group::Sh => self.lr.sh,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_groups_cover_the_row() {
        assert_eq!(Group::geometric_columns().len(), 10);
        assert_eq!(Group::appearance_columns().len(), 49);
        assert_eq!(Group::full_columns().len(), 59);
    }

    #[test]
    fn schedule_interpolates_logarithmically() {
        let hp = Hyperparams {
            scene_extent: 2.0,
            mean_schedule: Some(MeanSchedule {
                final_mean: 1.6e-6,
                steps: 100,
            }),
            ..Default::default()
        };
        assert!((hp.lr_at(Group::Mean, 1) - 3.2e-4).abs() < 1e-15);
        assert!((hp.lr_at(Group::Mean, 101) - 3.2e-6).abs() < 1e-17);
        assert!((hp.lr_at(Group::Mean, 51) - (3.2e-4f64 * 3.2e-6).sqrt()).abs() < 1e-12);
        assert_eq!(hp.lr_at(Group::Sh, 7), 2.5e-3);
    }

    #[test]
    fn rejects_bad_betas() {
        let hp = Hyperparams {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(hp.validate().is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }
}
