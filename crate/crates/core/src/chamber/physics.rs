//! First-order lumped model of the enclosed growing chamber.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stage::PlantStage;
use crate::telemetry::{Actuator, ActuatorCommandSet, SimClock};

/// Largest integration step accepted by [`ChamberModel::step`], in seconds.
pub const MAX_DT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("time step {0} s is outside (0, {MAX_DT}]")]
    DtOutOfRange(f64),
    #[error("state field `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("state field `{field}` = {value} violates its bounds")]
    OutOfBounds { field: &'static str, value: f64 },
    #[error("controller failed at t={t}: {message}")]
    Controller { t: f64, message: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Ground-truth physical state of the chamber. Missing fields in JSON take
/// the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChamberState {
    pub t_air: f64,
    pub t_soil: f64,
    pub rh: f64,
    pub co2: f64,
    pub moisture: f64,
    pub ph_true: f64,
    pub lux: f64,
    pub radiation: f64,
    pub clock: SimClock,
}

impl Default for ChamberState {
    fn default() -> Self {
        ChamberState {
            t_air: 20.0,
            t_soil: 20.0,
            rh: 60.0,
            co2: 420.0,
            moisture: 60.0,
            ph_true: 6.5,
            lux: 0.0,
            radiation: 0.0,
            clock: SimClock::default(),
        }
    }
}

impl ChamberState {
    /// A state sitting at the ambient conditions: same temperatures, humidity
    /// and CO₂ as outside, dark.
    pub fn at_ambient(amb: &AmbientConditions) -> Self {
        ChamberState {
            t_air: amb.t_amb,
            t_soil: amb.t_amb,
            rh: amb.rh_amb,
            co2: amb.co2_amb,
            lux: amb.lux_leak,
            ..ChamberState::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("t_air", self.t_air),
            ("t_soil", self.t_soil),
            ("rh", self.rh),
            ("co2", self.co2),
            ("moisture", self.moisture),
            ("ph_true", self.ph_true),
            ("lux", self.lux),
            ("radiation", self.radiation),
            ("clock", self.clock.t),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(SimError::NonFinite(name));
            }
        }
        let bounded = [
            ("rh", self.rh, 0.0, 100.0),
            ("moisture", self.moisture, 0.0, 100.0),
            ("ph_true", self.ph_true, 3.0, 10.0),
            ("co2", self.co2, 0.0, f64::INFINITY),
        ];
        for (field, value, lo, hi) in bounded {
            if value < lo || value > hi {
                return Err(SimError::OutOfBounds { field, value });
            }
        }
        Ok(())
    }
}

/// Conditions outside the chamber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientConditions {
    pub t_amb: f64,
    pub rh_amb: f64,
    #[serde(default = "default_co2_amb")]
    pub co2_amb: f64,
    #[serde(default)]
    pub lux_leak: f64,
}

fn default_co2_amb() -> f64 {
    420.0
}

impl Default for AmbientConditions {
    fn default() -> Self {
        AmbientConditions {
            t_amb: 20.0,
            rh_amb: 50.0,
            co2_amb: 420.0,
            lux_leak: 0.0,
        }
    }
}

/// Coefficients of the chamber model. All rates are per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChamberParams {
    /// Envelope heat loss to ambient, 1/s.
    pub k_loss: f64,
    /// Air heater power at full duty, °C/s.
    pub p_heat: f64,
    /// Fan air exchange rate, 1/s.
    pub k_vent: f64,
    /// Soil-to-air conduction, 1/s.
    pub k_cond: f64,
    /// Soil heater power at full duty, °C/s.
    pub p_soil: f64,
    /// Photosynthetic CO₂ uptake at the reference illuminance, ppm/s.
    pub u_co2: f64,
    pub reference_lux: f64,
    /// Dark respiration, ppm/s.
    pub r_resp: f64,
    /// Below this illuminance the chamber counts as dark.
    pub dark_lux: f64,
    /// Humidifier output, %RH/s.
    pub h_hum: f64,
    /// Dosing pump delivery, %VWC/s.
    pub d_pump: f64,
    /// Root water uptake before the stage factor, %VWC/s.
    pub w_up: f64,
    /// Evaporation into the air, %RH/s per (%VWC · °C above `evap_base_c`).
    pub e_evap: f64,
    /// Soil surface evaporation, %VWC/s per °C above `evap_base_c`.
    pub w_evap: f64,
    pub evap_base_c: f64,
    /// Illuminance of the lamp at full duty, lux.
    pub l_max: f64,
    /// Luminous efficacy used to derive radiation from illuminance, lux per W/m².
    pub k_lum: f64,
    /// Per-step standard deviation of the pH random walk.
    pub ph_walk_sigma: f64,
    pub ph_walk_min: f64,
    pub ph_walk_max: f64,
}

impl Default for ChamberParams {
    fn default() -> Self {
        ChamberParams {
            k_loss: 5e-4,
            p_heat: 5e-3,
            k_vent: 2e-3,
            k_cond: 2e-4,
            p_soil: 2e-3,
            u_co2: 0.05,
            reference_lux: 10_000.0,
            r_resp: 0.005,
            dark_lux: 50.0,
            h_hum: 0.01,
            d_pump: 0.2,
            w_up: 5e-4,
            e_evap: 1e-4,
            w_evap: 2e-5,
            evap_base_c: 10.0,
            l_max: 20_000.0,
            k_lum: 120.0,
            ph_walk_sigma: 0.001,
            ph_walk_min: 5.5,
            ph_walk_max: 7.5,
        }
    }
}

impl ChamberParams {
    /// The same enclosure with every plant and soil-water source term removed:
    /// no photosynthesis, respiration, uptake, evaporation or pH drift. Only
    /// heat exchange, ventilation and the actuators remain.
    pub fn without_plant(self) -> Self {
        ChamberParams {
            u_co2: 0.0,
            r_resp: 0.0,
            w_up: 0.0,
            e_evap: 0.0,
            w_evap: 0.0,
            ph_walk_sigma: 0.0,
            ..self
        }
    }

    /// Photosynthetic activity in [0, stage factor].
    pub fn photo(&self, lux: f64, stage: PlantStage) -> f64 {
        (lux / self.reference_lux).min(1.0) * stage.co2_factor()
    }

    pub fn dark(&self, lux: f64) -> f64 {
        if lux < self.dark_lux {
            1.0
        } else {
            0.0
        }
    }

    pub fn evaporation_air(&self, t_air: f64, moisture: f64) -> f64 {
        self.e_evap * moisture * (t_air - self.evap_base_c).max(0.0)
    }

    pub fn evaporation_soil(&self, t_soil: f64) -> f64 {
        self.w_evap * (t_soil - self.evap_base_c).max(0.0)
    }

    pub fn lamp_lux(&self, led: f64, amb: &AmbientConditions) -> f64 {
        amb.lux_leak + self.l_max * led
    }
}

/// Explicit-Euler integrator over [`ChamberParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChamberModel {
    pub params: ChamberParams,
}

impl ChamberModel {
    pub fn new(params: ChamberParams) -> Self {
        ChamberModel { params }
    }

    /// Advances the chamber by one explicit-Euler step of `dt` seconds with the
    /// actuator levels held constant over the step.
    ///
    /// `rng` is only drawn from when the pH random walk is enabled.
    pub fn step<R: Rng + ?Sized>(
        &self,
        s: &ChamberState,
        a: &ActuatorCommandSet,
        amb: &AmbientConditions,
        stage: PlantStage,
        dt: f64,
        rng: &mut R,
    ) -> Result<ChamberState, SimError> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(SimError::DtOutOfRange(dt));
        }
        s.validate()?;
        let p = &self.params;
        let heater = a.get(Actuator::AirHeater);
        let soil_heater = a.get(Actuator::SoilHeater);
        let fan = a.get(Actuator::Fan);
        let pump = a.get(Actuator::Pump);
        let humidifier = a.get(Actuator::Humidifier);
        let led = a.get(Actuator::Led);
        let vent = p.k_vent * fan;

        let d_air = -p.k_loss * (s.t_air - amb.t_amb) + p.p_heat * heater + vent * (amb.t_amb - s.t_air);
        let d_soil = -p.k_cond * (s.t_soil - s.t_air) + p.p_soil * soil_heater;
        let d_co2 = -p.u_co2 * p.photo(s.lux, stage) + p.r_resp * p.dark(s.lux) + vent * (amb.co2_amb - s.co2);
        let d_rh = p.evaporation_air(s.t_air, s.moisture) + p.h_hum * humidifier - vent * (s.rh - amb.rh_amb);
        let d_moist = -p.w_up * stage.water_factor() - p.evaporation_soil(s.t_soil) + p.d_pump * pump;

        let lux = p.lamp_lux(led, amb);
        let mut clock = s.clock;
        clock.advance(dt);
        let next = ChamberState {
            t_air: s.t_air + dt * d_air,
            t_soil: s.t_soil + dt * d_soil,
            rh: (s.rh + dt * d_rh).clamp(0.0, 100.0),
            co2: (s.co2 + dt * d_co2).max(0.0),
            moisture: (s.moisture + dt * d_moist).clamp(0.0, 100.0),
            ph_true: self.drift_ph(s.ph_true, rng),
            lux,
            radiation: lux / p.k_lum,
            clock,
        };
        for (name, v) in [("t_air", next.t_air), ("t_soil", next.t_soil), ("co2", next.co2)] {
            if !v.is_finite() {
                return Err(SimError::NonFinite(name));
            }
        }
        Ok(next)
    }

    /// Bounded random walk, reflected at the walk limits while inside them.
    fn drift_ph<R: Rng + ?Sized>(&self, ph: f64, rng: &mut R) -> f64 {
        let p = &self.params;
        if p.ph_walk_sigma <= 0.0 {
            return ph;
        }
        let noise = Normal::new(0.0, p.ph_walk_sigma)
            .expect("sigma is positive")
            .sample(rng);
        let mut next = ph + noise;
        if ph >= p.ph_walk_min && ph <= p.ph_walk_max {
            // a single reflection suffices while sigma is small against the band
            if next > p.ph_walk_max {
                next = 2.0 * p.ph_walk_max - next;
            }
            if next < p.ph_walk_min {
                next = 2.0 * p.ph_walk_min - next;
            }
            next = next.clamp(p.ph_walk_min, p.ph_walk_max);
        }
        next.clamp(3.0, 10.0)
    }
}
