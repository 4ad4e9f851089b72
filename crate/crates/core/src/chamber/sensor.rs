//! Sensor transducer models: multiplicative temperature-dependent bias plus
//! additive gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::physics::{AmbientConditions, ChamberState};
use crate::telemetry::{Channel, ReadingSet};

/// Ambient temperature at which the bias slope term vanishes.
pub const REFERENCE_AMBIENT_C: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSensor {
    /// Relative bias at the reference ambient temperature.
    pub bias0: f64,
    /// Relative bias per °C of ambient deviation from 25 °C.
    pub bias_slope: f64,
    /// Additive noise, channel units.
    pub noise_sigma: f64,
}

impl ChannelSensor {
    pub const IDEAL: ChannelSensor = ChannelSensor {
        bias0: 0.0,
        bias_slope: 0.0,
        noise_sigma: 0.0,
    };

    pub fn relative_bias(&self, t_amb: f64) -> f64 {
        self.bias0 + self.bias_slope * (t_amb - REFERENCE_AMBIENT_C)
    }
}

/// Per-channel transducer parameters, indexed in [`Channel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub co2: ChannelSensor,
    pub air_temp: ChannelSensor,
    pub air_humidity: ChannelSensor,
    pub soil_temp: ChannelSensor,
    pub soil_moisture: ChannelSensor,
    pub ph: ChannelSensor,
    pub illumination: ChannelSensor,
    pub solar_radiation: ChannelSensor,
}

/// Typical operating value per channel. Default noise is 0.5% of these.
pub const NOMINAL_VALUES: [f64; 8] = [800.0, 25.0, 60.0, 22.0, 50.0, 6.5, 10_000.0, 10_000.0 / 120.0];

/// Bias slope of the pH probe, 1/°C.
pub const PH_BIAS_SLOPE: f64 = 0.008;
/// Bias slope of every other channel, 1/°C.
pub const DEFAULT_BIAS_SLOPE: f64 = 2e-4;

impl Default for SensorParams {
    fn default() -> Self {
        let mk = |c: Channel| ChannelSensor {
            bias0: 0.0,
            bias_slope: if c == Channel::Ph { PH_BIAS_SLOPE } else { DEFAULT_BIAS_SLOPE },
            noise_sigma: 0.005 * NOMINAL_VALUES[c.index()],
        };
        SensorParams::from_fn(mk)
    }
}

impl SensorParams {
    /// Noise-free, bias-free transducers.
    pub fn ideal() -> Self {
        SensorParams::from_fn(|_| ChannelSensor::IDEAL)
    }

    pub fn from_fn(mut f: impl FnMut(Channel) -> ChannelSensor) -> Self {
        SensorParams {
            co2: f(Channel::Co2),
            air_temp: f(Channel::AirTemp),
            air_humidity: f(Channel::AirHumidity),
            soil_temp: f(Channel::SoilTemp),
            soil_moisture: f(Channel::SoilMoisture),
            ph: f(Channel::Ph),
            illumination: f(Channel::Illumination),
            solar_radiation: f(Channel::SolarRadiation),
        }
    }

    pub fn get(&self, c: Channel) -> &ChannelSensor {
        match c {
            Channel::Co2 => &self.co2,
            Channel::AirTemp => &self.air_temp,
            Channel::AirHumidity => &self.air_humidity,
            Channel::SoilTemp => &self.soil_temp,
            Channel::SoilMoisture => &self.soil_moisture,
            Channel::Ph => &self.ph,
            Channel::Illumination => &self.illumination,
            Channel::SolarRadiation => &self.solar_radiation,
        }
    }

    pub fn get_mut(&mut self, c: Channel) -> &mut ChannelSensor {
        match c {
            Channel::Co2 => &mut self.co2,
            Channel::AirTemp => &mut self.air_temp,
            Channel::AirHumidity => &mut self.air_humidity,
            Channel::SoilTemp => &mut self.soil_temp,
            Channel::SoilMoisture => &mut self.soil_moisture,
            Channel::Ph => &mut self.ph,
            Channel::Illumination => &mut self.illumination,
            Channel::SolarRadiation => &mut self.solar_radiation,
        }
    }
}

/// The true value a channel's sensor observes.
pub fn truth(s: &ChamberState, c: Channel) -> f64 {
    match c {
        Channel::Co2 => s.co2,
        Channel::AirTemp => s.t_air,
        Channel::AirHumidity => s.rh,
        Channel::SoilTemp => s.t_soil,
        Channel::SoilMoisture => s.moisture,
        Channel::Ph => s.ph_true,
        Channel::Illumination => s.lux,
        Channel::SolarRadiation => s.radiation,
    }
}

/// All eight truth values in channel order.
pub fn truths(s: &ChamberState) -> [f64; 8] {
    Channel::ALL.map(|c| truth(s, c))
}

/// One transducer evaluation. Always consumes exactly one normal draw so the
/// random stream does not depend on the parameters.
pub fn transduce<R: Rng + ?Sized>(sensor: &ChannelSensor, truth: f64, t_amb: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    truth * (1.0 + sensor.relative_bias(t_amb)) + sensor.noise_sigma * z
}

/// Raw readings of every channel, stamped with the state's clock.
pub fn sense<R: Rng + ?Sized>(
    s: &ChamberState,
    p: &SensorParams,
    amb: &AmbientConditions,
    rng: &mut R,
) -> ReadingSet {
    let mut values = [0.0; 8];
    for c in Channel::ALL {
        let v = transduce(p.get(c), truth(s, c), amb.t_amb, rng);
        // quantities that cannot go negative read zero in the dark, not noise
        values[c.index()] = if c.meta().min == 0.0 { v.max(0.0) } else { v };
    }
    ReadingSet::from_raw(values, s.clock.timestamp())
}
