//! Staged crop recipes: setpoints, deadbands, photoperiod and the flowering
//! pollination schedule.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chamber::PlantStage;
use crate::telemetry::{Channel, ReadingSet, SimClock};

/// A setpoint with the half-width of its hysteresis band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub setpoint: f64,
    pub deadband: f64,
}

impl Band {
    pub const fn new(setpoint: f64, deadband: f64) -> Self {
        Band { setpoint, deadband }
    }

    pub fn contains(&self, v: f64) -> bool {
        (v - self.setpoint).abs() <= self.deadband
    }
}

/// Lamp-on interval in sim-day hours, `[on_hour, off_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photoperiod {
    pub on_hour: f64,
    pub off_hour: f64,
}

impl Photoperiod {
    pub fn is_on(&self, clock: &SimClock) -> bool {
        let tod = clock.time_of_day();
        tod >= self.on_hour * 3600.0 && tod < self.off_hour * 3600.0
    }

    pub fn length_seconds(&self) -> f64 {
        (self.off_hour - self.on_hour) * 3600.0
    }

    /// Fraction of the day the lamp is scheduled on.
    pub fn day_fraction(&self) -> f64 {
        (self.off_hour - self.on_hour) / 24.0
    }
}

/// Timed fan pulses that shake pollen loose during flowering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pollination {
    pub pulses_per_day: u32,
    pub pulse_seconds: f64,
}

impl Pollination {
    /// Start times (seconds into the day) of the pulses, spread evenly across
    /// the photoperiod beginning at lamp-on.
    pub fn pulse_starts(&self, photoperiod: &Photoperiod) -> Vec<f64> {
        let spacing = photoperiod.length_seconds() / f64::from(self.pulses_per_day.max(1));
        (0..self.pulses_per_day)
            .map(|k| photoperiod.on_hour * 3600.0 + f64::from(k) * spacing)
            .collect()
    }

    pub fn is_active(&self, photoperiod: &Photoperiod, clock: &SimClock) -> bool {
        let tod = clock.time_of_day();
        self.pulse_starts(photoperiod)
            .into_iter()
            .any(|start| tod >= start && tod < start + self.pulse_seconds)
    }
}

/// Targets for one growth stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub air_temp: Band,
    pub soil_temp: Band,
    pub air_humidity: Band,
    /// The setpoint is an upper bound.
    pub co2: Band,
    pub soil_moisture: Band,
    /// Informational: pH has no actuator.
    pub ph: Band,
    /// Illuminance during the photoperiod; the target is 0 outside it.
    pub illumination: Band,
    pub photoperiod: Photoperiod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pollination: Option<Pollination>,
}

impl StagePlan {
    pub fn band(&self, c: Channel) -> Option<&Band> {
        match c {
            Channel::Co2 => Some(&self.co2),
            Channel::AirTemp => Some(&self.air_temp),
            Channel::AirHumidity => Some(&self.air_humidity),
            Channel::SoilTemp => Some(&self.soil_temp),
            Channel::SoilMoisture => Some(&self.soil_moisture),
            Channel::Ph => Some(&self.ph),
            Channel::Illumination => Some(&self.illumination),
            Channel::SolarRadiation => None,
        }
    }

    fn band_mut(&mut self, c: Channel) -> Option<&mut Band> {
        match c {
            Channel::Co2 => Some(&mut self.co2),
            Channel::AirTemp => Some(&mut self.air_temp),
            Channel::AirHumidity => Some(&mut self.air_humidity),
            Channel::SoilTemp => Some(&mut self.soil_temp),
            Channel::SoilMoisture => Some(&mut self.soil_moisture),
            Channel::Ph => Some(&mut self.ph),
            Channel::Illumination => Some(&mut self.illumination),
            Channel::SolarRadiation => None,
        }
    }

    /// Illuminance target at this moment.
    pub fn lux_target(&self, clock: &SimClock) -> f64 {
        if self.photoperiod.is_on(clock) {
            self.illumination.setpoint
        } else {
            0.0
        }
    }

    /// Whether a value of channel `c` counts as held.
    pub fn value_in_band(&self, c: Channel, v: f64, clock: &SimClock) -> bool {
        match c {
            Channel::Co2 => v <= self.co2.setpoint + self.co2.deadband,
            Channel::Illumination => (v - self.lux_target(clock)).abs() <= self.illumination.deadband,
            Channel::SolarRadiation => true,
            _ => self.band(c).is_some_and(|b| b.contains(v)),
        }
    }

    /// In-band flags in [`Channel::CONTROLLED`] order. Faults count as out of band.
    pub fn in_band(&self, readings: &ReadingSet, clock: &SimClock) -> [bool; 7] {
        Channel::CONTROLLED.map(|c| {
            readings
                .get(c)
                .trusted()
                .is_some_and(|v| self.value_in_band(c, v, clock))
        })
    }

    /// The same plan with channel `c`'s setpoint replaced.
    pub fn with_setpoint(mut self, c: Channel, setpoint: f64) -> Self {
        if let Some(b) = self.band_mut(c) {
            b.setpoint = setpoint;
        }
        self
    }
}

/// A validation failure attributed to one field of a recipe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// One plan per growth stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub germination: StagePlan,
    pub vegetative: StagePlan,
    pub flowering: StagePlan,
    pub fruiting: StagePlan,
}

#[derive(Debug, thiserror::Error)]
pub enum RecipeError {
    #[error("reading recipe {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing recipe: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid recipe: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

impl Recipe {
    /// Default tomato profile.
    pub fn tomato() -> Self {
        let germination = StagePlan {
            air_temp: Band::new(24.0, 0.5),
            soil_temp: Band::new(23.0, 0.5),
            air_humidity: Band::new(70.0, 5.0),
            co2: Band::new(800.0, 50.0),
            soil_moisture: Band::new(60.0, 5.0),
            ph: Band::new(6.5, 0.5),
            illumination: Band::new(3500.0, 250.0),
            photoperiod: Photoperiod {
                on_hour: 6.0,
                off_hour: 22.0,
            },
            pollination: None,
        };
        Recipe {
            germination,
            vegetative: StagePlan {
                air_temp: Band::new(25.0, 0.5),
                illumination: Band::new(10_000.0, 250.0),
                ..germination
            },
            flowering: StagePlan {
                air_temp: Band::new(23.0, 0.5),
                illumination: Band::new(12_000.0, 250.0),
                pollination: Some(Pollination {
                    pulses_per_day: 3,
                    pulse_seconds: 60.0,
                }),
                ..germination
            },
            fruiting: StagePlan {
                air_temp: Band::new(24.0, 0.5),
                illumination: Band::new(12_000.0, 250.0),
                ..germination
            },
        }
    }

    pub fn plan(&self, stage: PlantStage) -> &StagePlan {
        match stage {
            PlantStage::Germination => &self.germination,
            PlantStage::Vegetative => &self.vegetative,
            PlantStage::Flowering => &self.flowering,
            PlantStage::Fruiting => &self.fruiting,
        }
    }

    pub fn plan_mut(&mut self, stage: PlantStage) -> &mut StagePlan {
        match stage {
            PlantStage::Germination => &mut self.germination,
            PlantStage::Vegetative => &mut self.vegetative,
            PlantStage::Flowering => &mut self.flowering,
            PlantStage::Fruiting => &mut self.fruiting,
        }
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errors = Vec::new();
        let mut err = |field: String, message: &str| {
            errors.push(FieldError {
                field,
                message: message.to_string(),
            })
        };
        for stage in PlantStage::ALL {
            let plan = self.plan(stage);
            for c in Channel::CONTROLLED {
                let b = plan.band(c).expect("controlled channel has a band");
                let prefix = format!("{stage}.{c}");
                if !(b.deadband.is_finite() && b.deadband > 0.0) {
                    err(format!("{prefix}.deadband"), "must be a finite number > 0");
                }
                if !c.contains(b.setpoint) {
                    err(format!("{prefix}.setpoint"), "must lie within the channel plausible range");
                }
            }
            let p = plan.photoperiod;
            if !(p.on_hour.is_finite() && p.on_hour >= 0.0 && p.on_hour < 24.0) {
                err(format!("{stage}.photoperiod.on_hour"), "must be in [0, 24)");
            }
            if !(p.off_hour.is_finite() && p.off_hour > 0.0 && p.off_hour <= 24.0) {
                err(format!("{stage}.photoperiod.off_hour"), "must be in (0, 24]");
            }
            if p.on_hour >= p.off_hour {
                err(format!("{stage}.photoperiod"), "on_hour must be before off_hour");
            }
            if let Some(pol) = plan.pollination {
                if stage != PlantStage::Flowering {
                    err(format!("{stage}.pollination"), "pollination is only scheduled during flowering");
                }
                if pol.pulses_per_day == 0 {
                    err(format!("{stage}.pollination.pulses_per_day"), "must be at least 1");
                }
                if !(pol.pulse_seconds.is_finite() && pol.pulse_seconds > 0.0) {
                    err(format!("{stage}.pollination.pulse_seconds"), "must be a finite number > 0");
                } else if p.on_hour < p.off_hour
                    && pol.pulses_per_day > 0
                    && pol.pulse_seconds > p.length_seconds() / f64::from(pol.pulses_per_day)
                {
                    err(
                        format!("{stage}.pollination.pulse_seconds"),
                        "pulses would overlap or run past lamp-off",
                    );
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn from_json(s: &str) -> Result<Self, RecipeError> {
        let r: Recipe = serde_json::from_str(s)?;
        r.validate().map_err(RecipeError::Invalid)?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self, RecipeError> {
        let text = fs::read_to_string(path).map_err(|source| RecipeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe::tomato()
    }
}
