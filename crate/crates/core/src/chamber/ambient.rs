use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::physics::AmbientConditions;
use crate::telemetry::DAY_SECONDS;

/// Diurnal ambient profile: sinusoidal temperature with its minimum at
/// midnight, constant humidity, CO₂ and light leak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientProfileSpec {
    pub mean_c: f64,
    #[serde(default)]
    pub amp_c: f64,
    #[serde(default = "default_rh")]
    pub rh_amb: f64,
    #[serde(default = "default_co2")]
    pub co2_amb: f64,
    #[serde(default)]
    pub lux_leak: f64,
}

fn default_rh() -> f64 {
    50.0
}

fn default_co2() -> f64 {
    420.0
}

impl Default for AmbientProfileSpec {
    fn default() -> Self {
        AmbientProfileSpec {
            mean_c: 20.0,
            amp_c: 5.0,
            rh_amb: default_rh(),
            co2_amb: default_co2(),
            lux_leak: 0.0,
        }
    }
}

impl AmbientProfileSpec {
    pub fn constant(t_amb: f64) -> Self {
        AmbientProfileSpec {
            mean_c: t_amb,
            amp_c: 0.0,
            ..AmbientProfileSpec::default()
        }
    }
}

pub fn ambient_profile(t: f64, profile: &AmbientProfileSpec) -> AmbientConditions {
    let phase = 2.0 * PI * t.rem_euclid(DAY_SECONDS) / DAY_SECONDS - PI / 2.0;
    AmbientConditions {
        t_amb: profile.mean_c + profile.amp_c * phase.sin(),
        rh_amb: profile.rh_amb,
        co2_amb: profile.co2_amb,
        lux_leak: profile.lux_leak,
    }
}
