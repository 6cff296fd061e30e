//! Noise schedules, data distributions, and the forward process
//! x_t = y + σ(t)·z.

mod distribution;
mod pointcloud;
mod schedule;

pub use distribution::{
    standard_normal, DataDistribution, DeltaMixture, DistributionSpec, GaussianFull,
    GaussianSubspace,
};
pub use pointcloud::{load_pointcloud, parse_pointcloud_csv, parse_pointcloud_json, PointCloudFormat};
pub use schedule::{NoiseSchedule, ScheduleKind};

use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::mc::stream_rng;

/// One draw of the forward process at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardSample {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub t: f64,
    pub sigma2: f64,
    pub x_t: DVector<f64>,
}

impl ForwardSample {
    /// Draws y ~ ρ and z ~ N(0, I) from `rng` and forms x = y + σz at the
    /// given noise variance.
    pub fn draw<R: Rng + ?Sized>(dist: &DataDistribution, t: f64, sigma2: f64, rng: &mut R) -> Self {
        let y = dist.sample(rng);
        let z = standard_normal(dist.dim(), rng);
        let x_t = &y + &z * sigma2.sqrt();
        ForwardSample {
            y,
            z,
            t,
            sigma2,
            x_t,
        }
    }
}

/// Samples the forward process at time `t` (forward time, t ≥ 0).
/// Deterministic given `seed`.
pub fn sample_forward(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    seed: u64,
) -> Result<ForwardSample> {
    let sigma2 = schedule.sigma2(t)?;
    let mut rng = stream_rng(seed, crate::mc::streams::FORWARD);
    Ok(ForwardSample::draw(dist, t, sigma2, &mut rng))
}
