use std::ops::Range;

use crate::error::{Error, Result};
use crate::optim::{Group, ParamBlock};
use crate::real::Real;
use crate::scene::GaussianSet;

pub const DEFAULT_CHUNK_BYTES: usize = 32 << 20;
pub const MIN_CHUNK_BYTES: usize = 1 << 20;

/// Parameters split across the two memory tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TieredStore<T> {
    /// Geometric rows (10 wide), resident on the device.
    pub device: ParamBlock<T>,
    /// Appearance rows (49 wide), resident on the host.
    pub host: ParamBlock<T>,
    pub sh_degree: u8,
}

pub fn setup_tiers<T: Real>(gs: &GaussianSet<T>, host_max: u8, device_max: u8) -> TieredStore<T> {
    TieredStore {
        device: ParamBlock::new(gs.geometric.clone(), Group::geometric_columns(), device_max),
        host: ParamBlock::new(gs.appearance.clone(), Group::appearance_columns(), host_max),
        sh_degree: gs.sh_degree,
    }
}

impl<T: Real> TieredStore<T> {
    pub fn len(&self) -> usize {
        self.device.len()
    }

    pub fn is_empty(&self) -> bool {
        self.device.is_empty()
    }

    /// Fraction of parameter bytes held by the device tier; `10 / 59` for
    /// any non-empty store.
    pub fn device_param_share(&self) -> f64 {
        let d = self.device.bytes().0;
        let h = self.host.bytes().0;
        if d + h == 0 {
            0.0
        } else {
            d as f64 / (d + h) as f64
        }
    }

    /// Stored rows as a Gaussian set (skipped steps not replayed).
    pub fn to_gaussians(&self) -> GaussianSet<T> {
        GaussianSet::from_tiers(self.device.params.clone(), self.host.params.clone(), self.sh_degree)
    }
}

pub fn validate_chunk_bytes(chunk_bytes: usize) -> Result<()> {
    if chunk_bytes < MIN_CHUNK_BYTES {
        return Err(Error::Config(format!("chunk size {chunk_bytes} is below the minimum of {MIN_CHUNK_BYTES} bytes")));
    }
    Ok(())
}

/// Partitions `rows` rows of `row_bytes` each into consecutive chunks of at
/// most `chunk_bytes` (at least one row per chunk).
pub fn plan_chunks(rows: usize, row_bytes: usize, chunk_bytes: usize) -> Vec<Range<usize>> {
    let per = (chunk_bytes / row_bytes.max(1)).max(1);
    (0..rows).step_by(per).map(|s| s..(s + per).min(rows)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth_scene;

    #[test]
    fn tier_split_matches_the_parameter_layout() {
        let s = synth_scene::<f32>(0, 1000, 1);
        let t = setup_tiers(&s.init, 15, 0);
        assert_eq!(t.device.params.len(), 10_000);
        assert_eq!(t.device.m.len() + t.device.v.len(), 20_000);
        assert_eq!(t.host.params.len(), 49_000);
        assert_eq!(t.host.m.len() + t.host.v.len(), 98_000);
        assert_eq!(t.host.counters.len(), 1000);
        assert_eq!(t.device_param_share(), 10.0 / 59.0);
        assert_eq!(t.to_gaussians(), s.init);
    }

    #[test]
    fn empty_store() {
        let t = setup_tiers(&GaussianSet::<f32>::with_capacity(0, 3), 15, 0);
        assert!(t.is_empty());
        assert_eq!(t.device.bytes(), (0, 0, 0));
        assert_eq!(t.host.bytes(), (0, 0, 0));
    }

    #[test]
    fn chunks_cover_the_rows() {
        let mib = 1 << 20;
        let c = plan_chunks(100 * mib / 4, 4, 32 * mib);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0], 0..8 * mib);
        assert_eq!(c[3].len() * 4, 4 * mib);
        assert!(plan_chunks(0, 196, mib).is_empty());
        assert_eq!(plan_chunks(3, 1000, 10), vec![0..1, 1..2, 2..3]);
    }
}
