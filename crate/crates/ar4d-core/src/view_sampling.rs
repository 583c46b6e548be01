use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};

/// Progressive azimuth schedule: the sampling range widens by one degree
/// every `eta` iterations, from `n_start` up to `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSchedule {
    /// Terminal half-range in degrees.
    pub n_max: u32,
    /// Initial half-range in degrees.
    pub n_start: u32,
    /// Iterations per degree of widening.
    pub eta: u32,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        SamplingSchedule {
            n_max: 180,
            n_start: 1,
            eta: 10,
        }
    }
}

impl SamplingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 1 {
            return Err(Error::Config("sampling schedule eta must be >= 1".into()));
        }
        if self.n_start > self.n_max {
            return Err(Error::Config(format!(
                "sampling schedule n_start {} exceeds n_max {}",
                self.n_start, self.n_max
            )));
        }
        Ok(())
    }

    /// First iteration at which the schedule saturates at `n_max`.
    pub fn saturation_iteration(&self) -> u64 {
        (self.n_max - self.n_start) as u64 * self.eta as u64
    }
}

/// Azimuth half-range (degrees) available at iteration `u`:
/// min(n_max, u/eta + n_start), in exact integer arithmetic.
pub fn progressive_limit(schedule: &SamplingSchedule, u: u64) -> u32 {
    let widened = (u / schedule.eta as u64).saturating_add(schedule.n_start as u64);
    widened.min(schedule.n_max as u64) as u32
}

fn with_reference_extrinsics(reference: &OrbitCamera, azimuth_deg: f64) -> OrbitCamera {
    OrbitCamera {
        azimuth_deg,
        ..*reference
    }
}

/// Sample a pseudo-supervision camera: azimuth uniform within the current
/// progressive limit around the reference; elevation, radius, and
/// intrinsics copied exactly.
pub fn sample_novel_view<R: Rng>(
    schedule: &SamplingSchedule,
    u: u64,
    reference: &OrbitCamera,
    rng: &mut R,
) -> OrbitCamera {
    let n_u = progressive_limit(schedule, u) as f64;
    let offset = if n_u == 0.0 {
        0.0
    } else {
        rng.random_range(-n_u..n_u)
    };
    with_reference_extrinsics(reference, reference.azimuth_deg + offset)
}

/// The four orthogonal pseudo-reconstruction cameras: reference azimuth
/// plus 0°, 90°, 180°, 270°.
pub fn orthogonal_views(reference: &OrbitCamera) -> [OrbitCamera; 4] {
    [0.0, 90.0, 180.0, 270.0]
        .map(|offset| with_reference_extrinsics(reference, reference.azimuth_deg + offset))
}

/// Sample a refinement camera anywhere on the azimuth circle: offset
/// uniform over (−180, 180] relative to the reference (the negated
/// half-open draw closes the upper end).
pub fn sample_refinement_view<R: Rng>(reference: &OrbitCamera, rng: &mut R) -> OrbitCamera {
    let offset = -rng.random_range(-180.0..180.0);
    with_reference_extrinsics(reference, reference.azimuth_deg + offset)
}
