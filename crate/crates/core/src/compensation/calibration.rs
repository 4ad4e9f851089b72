//! Calibration data: sweeps of the simulated transducers over ambient
//! temperature and true value, and error statistics before/after correction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ChannelModel, CompModel, Correction};
use crate::chamber::{transduce, SensorParams};
use crate::telemetry::Channel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub channel: Channel,
    pub raw: f64,
    pub t_amb: f64,
    pub truth: f64,
}

impl CalibSample {
    /// Relative bias the network should predict: `raw / truth − 1`.
    pub fn target(&self) -> f64 {
        self.raw / self.truth - 1.0
    }

    pub fn raw_relative_error(&self) -> f64 {
        ((self.raw - self.truth) / self.truth).abs()
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Operating range swept for each channel's true value. Kept away from zero so
/// relative errors stay meaningful.
pub fn default_truth_range(c: Channel) -> (f64, f64) {
    match c {
        Channel::Co2 => (400.0, 1200.0),
        Channel::AirTemp => (15.0, 35.0),
        Channel::AirHumidity => (40.0, 90.0),
        Channel::SoilTemp => (15.0, 30.0),
        Channel::SoilMoisture => (30.0, 80.0),
        Channel::Ph => (5.5, 7.5),
        Channel::Illumination => (5_000.0, 15_000.0),
        Channel::SolarRadiation => (40.0, 125.0),
    }
}

/// Ambient temperature span the compensation is trained over.
pub const AMBIENT_RANGE_C: (f64, f64) = (10.0, 40.0);

/// Grid sweep: every ambient temperature crossed with every true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSweep {
    pub t_amb_grid: Vec<f64>,
    /// Fractions in [0, 1] mapped onto each channel's truth range.
    pub truth_fractions: Vec<f64>,
}

impl CalibrationSweep {
    pub fn grid(t_points: usize, truth_points: usize) -> Self {
        CalibrationSweep {
            t_amb_grid: linspace(AMBIENT_RANGE_C.0, AMBIENT_RANGE_C.1, t_points),
            truth_fractions: linspace(0.0, 1.0, truth_points),
        }
    }

    /// A near-square grid holding at least `samples` points per channel.
    pub fn with_samples(samples: usize) -> Self {
        let t_points = (samples as f64).sqrt().ceil().max(1.0) as usize;
        let truth_points = samples.div_ceil(t_points).max(1);
        Self::grid(t_points, truth_points)
    }

    /// A grid interleaved with [`CalibrationSweep::grid`] of the same size, for
    /// held-out evaluation.
    pub fn held_out(t_points: usize, truth_points: usize) -> Self {
        let (lo, hi) = AMBIENT_RANGE_C;
        let t_step = (hi - lo) / t_points as f64;
        let f_step = 1.0 / truth_points as f64;
        CalibrationSweep {
            t_amb_grid: (0..t_points).map(|i| lo + t_step * (i as f64 + 0.5)).collect(),
            truth_fractions: (0..truth_points).map(|i| f_step * (i as f64 + 0.5)).collect(),
        }
    }

    pub fn truth_grid(&self, c: Channel) -> Vec<f64> {
        let (lo, hi) = default_truth_range(c);
        self.truth_fractions.iter().map(|f| lo + (hi - lo) * f).collect()
    }

    pub fn samples_per_channel(&self) -> usize {
        self.t_amb_grid.len() * self.truth_fractions.len()
    }
}

/// Evaluates the transducer model at every grid point of `sweep` for each
/// channel. Each channel draws from its own seeded stream, so a channel's
/// samples do not depend on which other channels were requested.
pub fn generate_calibration(
    channels: &[Channel],
    sweep: &CalibrationSweep,
    sensors: &SensorParams,
    seed: u64,
) -> Vec<CalibSample> {
    let mut out = Vec::with_capacity(channels.len() * sweep.samples_per_channel());
    for &c in channels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c.index() as u64);
        let truths = sweep.truth_grid(c);
        for &t_amb in &sweep.t_amb_grid {
            for &truth in &truths {
                let raw = transduce(sensors.get(c), truth, t_amb, &mut rng);
                out.push(CalibSample {
                    channel: c,
                    raw,
                    t_amb,
                    truth,
                });
            }
        }
    }
    out
}

/// Raw versus compensated relative error of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelErrors {
    pub channel: Channel,
    pub samples: usize,
    pub raw_mean: f64,
    pub raw_max: f64,
    pub comp_mean: f64,
    pub comp_max: f64,
}

pub fn channel_errors(model: &ChannelModel, samples: &[CalibSample]) -> ChannelErrors {
    let mut raw_sum = 0.0;
    let mut raw_max: f64 = 0.0;
    let mut comp_sum = 0.0;
    let mut comp_max: f64 = 0.0;
    let mut n = 0;
    for s in samples.iter().filter(|s| s.channel == model.channel) {
        let raw_err = s.raw_relative_error();
        let comp_err = match model.forward(s.raw, s.t_amb) {
            Correction::Corrected { value, .. } => ((value - s.truth) / s.truth).abs(),
            Correction::Fault => f64::INFINITY,
        };
        raw_sum += raw_err;
        raw_max = raw_max.max(raw_err);
        comp_sum += comp_err;
        comp_max = comp_max.max(comp_err);
        n += 1;
    }
    let denom = n.max(1) as f64;
    ChannelErrors {
        channel: model.channel,
        samples: n,
        raw_mean: raw_sum / denom,
        raw_max,
        comp_mean: comp_sum / denom,
        comp_max,
    }
}

/// Error table over every channel present in `samples`.
pub fn error_table(model: &CompModel, samples: &[CalibSample]) -> Vec<ChannelErrors> {
    Channel::ALL
        .into_iter()
        .filter(|c| samples.iter().any(|s| s.channel == *c))
        .map(|c| {
            let identity;
            let m = match model.get(c) {
                Some(m) => m,
                None => {
                    identity = ChannelModel::identity(c);
                    &identity
                }
            };
            channel_errors(m, samples)
        })
        .collect()
}
