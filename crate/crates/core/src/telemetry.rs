//! Shared vocabulary: sensor channels, readings, actuators and the simulation clock.
//!
//! Every value in here is a plain immutable value type. The serialized forms
//! defined in this module (readings, command sets) are the canonical ones used
//! by the datastore, the trace files and the HTTP API.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Seconds in one simulated day.
pub const DAY_SECONDS: f64 = 86_400.0;

/// One of the eight measured environmental signals.
///
/// `SolarRadiation` is sensed only; the other seven have recipe setpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Co2,
    AirTemp,
    AirHumidity,
    SoilTemp,
    SoilMoisture,
    Ph,
    Illumination,
    SolarRadiation,
}

/// Unit string and plausible range of a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMeta {
    pub unit: &'static str,
    pub min: f64,
    pub max: f64,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::Co2,
        Channel::AirTemp,
        Channel::AirHumidity,
        Channel::SoilTemp,
        Channel::SoilMoisture,
        Channel::Ph,
        Channel::Illumination,
        Channel::SolarRadiation,
    ];

    /// The seven channels that carry a recipe setpoint.
    pub const CONTROLLED: [Channel; 7] = [
        Channel::Co2,
        Channel::AirTemp,
        Channel::AirHumidity,
        Channel::SoilTemp,
        Channel::SoilMoisture,
        Channel::Ph,
        Channel::Illumination,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Co2 => "co2",
            Channel::AirTemp => "air_temp",
            Channel::AirHumidity => "air_humidity",
            Channel::SoilTemp => "soil_temp",
            Channel::SoilMoisture => "soil_moisture",
            Channel::Ph => "ph",
            Channel::Illumination => "illumination",
            Channel::SolarRadiation => "solar_radiation",
        }
    }

    /// Fixed unit and plausible range. The ranges are generous physical
    /// envelopes, only sensor faults should fall outside them.
    pub fn meta(self) -> ChannelMeta {
        let (unit, min, max) = match self {
            Channel::Co2 => ("ppm", 0.0, 10_000.0),
            Channel::AirTemp => ("°C", -10.0, 60.0),
            Channel::AirHumidity => ("%RH", 0.0, 100.0),
            Channel::SoilTemp => ("°C", -10.0, 60.0),
            Channel::SoilMoisture => ("%VWC", 0.0, 100.0),
            Channel::Ph => ("pH", 0.0, 14.0),
            Channel::Illumination => ("lux", 0.0, 200_000.0),
            Channel::SolarRadiation => ("W/m²", 0.0, 2_000.0),
        };
        ChannelMeta { unit, min, max }
    }

    pub fn contains(self, value: f64) -> bool {
        let m = self.meta();
        value.is_finite() && value >= m.min && value <= m.max
    }

    pub fn clamp(self, value: f64) -> f64 {
        let m = self.meta();
        value.clamp(m.min, m.max)
    }
}

/// Free-function form of [`Channel::meta`].
pub fn channel_meta(c: Channel) -> ChannelMeta {
    c.meta()
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

impl FromStr for Channel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Raw,
    Corrected,
    Fault,
}

/// One timestamped value of one channel.
///
/// A `Fault` reading carries no value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    #[serde(rename = "t")]
    pub timestamp: i64,
    #[serde(rename = "ch")]
    pub channel: Channel,
    #[serde(rename = "v")]
    pub value: Option<f64>,
    #[serde(rename = "q")]
    pub quality: Quality,
}

impl Reading {
    pub fn raw(channel: Channel, value: f64, timestamp: i64) -> Self {
        Reading {
            timestamp,
            channel,
            value: Some(value),
            quality: Quality::Raw,
        }
    }

    pub fn corrected(channel: Channel, value: f64, timestamp: i64) -> Self {
        Reading {
            timestamp,
            channel,
            value: Some(value),
            quality: Quality::Corrected,
        }
    }

    pub fn fault(channel: Channel, timestamp: i64) -> Self {
        Reading {
            timestamp,
            channel,
            value: None,
            quality: Quality::Fault,
        }
    }

    pub fn is_fault(&self) -> bool {
        self.quality == Quality::Fault
    }

    /// The trusted value, `None` for faults.
    pub fn trusted(&self) -> Option<f64> {
        if self.is_fault() {
            None
        } else {
            self.value
        }
    }
}

/// Marks a reading as a fault when its value is missing, non-finite or outside
/// the channel plausible range. Otherwise returns it unchanged.
pub fn validate_reading(r: Reading) -> Reading {
    match r.trusted() {
        Some(v) if r.channel.contains(v) => r,
        _ => Reading::fault(r.channel, r.timestamp),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReadingSetError {
    #[error("channel {0} appears more than once")]
    Duplicate(Channel),
    #[error("channel {0} is missing")]
    Missing(Channel),
    #[error("reading for {channel} has timestamp {found}, expected {expected}")]
    Timestamp {
        channel: Channel,
        expected: i64,
        found: i64,
    },
}

/// Exactly one reading per channel, all sharing one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadingSet {
    t: i64,
    readings: [Reading; 8],
}

impl ReadingSet {
    /// Builds a set of raw readings from values in [`Channel::ALL`] order.
    pub fn from_raw(values: [f64; 8], t: i64) -> Self {
        ReadingSet {
            t,
            readings: Channel::ALL.map(|c| Reading::raw(c, values[c.index()], t)),
        }
    }

    pub fn from_readings(t: i64, readings: impl IntoIterator<Item = Reading>) -> Result<Self, ReadingSetError> {
        let mut slots: [Option<Reading>; 8] = [None; 8];
        for r in readings {
            if r.timestamp != t {
                return Err(ReadingSetError::Timestamp {
                    channel: r.channel,
                    expected: t,
                    found: r.timestamp,
                });
            }
            let slot = &mut slots[r.channel.index()];
            if slot.is_some() {
                return Err(ReadingSetError::Duplicate(r.channel));
            }
            *slot = Some(r);
        }
        let mut out = [Reading::fault(Channel::Co2, t); 8];
        for c in Channel::ALL {
            out[c.index()] = slots[c.index()].ok_or(ReadingSetError::Missing(c))?;
        }
        Ok(ReadingSet { t, readings: out })
    }

    pub fn timestamp(&self) -> i64 {
        self.t
    }

    pub fn get(&self, c: Channel) -> &Reading {
        &self.readings[c.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Reading> {
        self.readings.iter()
    }

    /// Applies `f` to every reading, keeping channel and timestamp.
    pub fn map(&self, mut f: impl FnMut(Reading) -> Reading) -> ReadingSet {
        let readings = self.readings.map(|r| {
            let mut out = f(r);
            out.channel = r.channel;
            out.timestamp = self.t;
            out
        });
        ReadingSet { t: self.t, readings }
    }

    pub fn all_fault(&self) -> bool {
        self.readings.iter().all(Reading::is_fault)
    }

    /// Trusted values in channel order, faults as `None`.
    pub fn values(&self) -> [Option<f64>; 8] {
        self.readings.map(|r| r.trusted())
    }
}

impl<'de> Deserialize<'de> for ReadingSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            t: i64,
            readings: Vec<Reading>,
        }
        let w = Wire::deserialize(d)?;
        ReadingSet::from_readings(w.t, w.readings).map_err(serde::de::Error::custom)
    }
}

/// The six controllable outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    AirHeater,
    SoilHeater,
    Fan,
    Pump,
    Humidifier,
    Led,
}

impl Actuator {
    pub const ALL: [Actuator; 6] = [
        Actuator::AirHeater,
        Actuator::SoilHeater,
        Actuator::Fan,
        Actuator::Pump,
        Actuator::Humidifier,
        Actuator::Led,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Actuator::AirHeater => "air_heater",
            Actuator::SoilHeater => "soil_heater",
            Actuator::Fan => "fan",
            Actuator::Pump => "pump",
            Actuator::Humidifier => "humidifier",
            Actuator::Led => "led",
        }
    }

    /// Continuous actuators take any duty in [0, 1]; the rest are on/off.
    pub fn is_continuous(self) -> bool {
        matches!(self, Actuator::AirHeater | Actuator::SoilHeater | Actuator::Led)
    }

    pub fn accepts(self, level: f64) -> bool {
        if self.is_continuous() {
            (0.0..=1.0).contains(&level)
        } else {
            level == 0.0 || level == 1.0
        }
    }
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Actuator {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Actuator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("level {level} is out of bounds for {actuator}")]
pub struct LevelOutOfBounds {
    pub actuator: Actuator,
    pub level: f64,
}

/// One level per actuator, stamped with the tick time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorCommandSet {
    pub t: i64,
    levels: [f64; 6],
}

impl ActuatorCommandSet {
    /// All actuators at zero.
    pub fn off(t: i64) -> Self {
        ActuatorCommandSet { t, levels: [0.0; 6] }
    }

    pub fn get(&self, a: Actuator) -> f64 {
        self.levels[a.index()]
    }

    /// Sets a level, rejecting anything outside the actuator's bounds.
    pub fn set(&mut self, a: Actuator, level: f64) -> Result<(), LevelOutOfBounds> {
        if !a.accepts(level) {
            return Err(LevelOutOfBounds { actuator: a, level });
        }
        self.levels[a.index()] = level;
        Ok(())
    }

    /// Sets a level after forcing it into bounds: duties are clamped, on/off
    /// levels are thresholded at 0.5.
    pub fn set_clamped(&mut self, a: Actuator, level: f64) {
        let level = if !level.is_finite() {
            0.0
        } else if a.is_continuous() {
            level.clamp(0.0, 1.0)
        } else if level >= 0.5 {
            1.0
        } else {
            0.0
        };
        self.levels[a.index()] = level;
    }

    pub fn with(mut self, a: Actuator, level: f64) -> Self {
        self.set_clamped(a, level);
        self
    }

    pub fn levels(&self) -> [f64; 6] {
        self.levels
    }
}

// Absent levels read as 0 so scenario files can name only what they turn on.
#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct CommandWire {
    t: i64,
    air_heater: f64,
    soil_heater: f64,
    fan: f64,
    pump: f64,
    humidifier: f64,
    led: f64,
}

impl Serialize for ActuatorCommandSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let [air_heater, soil_heater, fan, pump, humidifier, led] = self.levels;
        CommandWire {
            t: self.t,
            air_heater,
            soil_heater,
            fan,
            pump,
            humidifier,
            led,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActuatorCommandSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = CommandWire::deserialize(d)?;
        let mut out = ActuatorCommandSet::off(w.t);
        for (a, v) in Actuator::ALL
            .into_iter()
            .zip([w.air_heater, w.soil_heater, w.fan, w.pump, w.humidifier, w.led])
        {
            out.set(a, v).map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

/// Simulated time in seconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct SimClock {
    pub t: f64,
}

impl SimClock {
    pub fn new(t: f64) -> Self {
        SimClock { t }
    }

    /// Advances the clock; negative steps are ignored so time never runs backwards.
    pub fn advance(&mut self, dt: f64) {
        if dt > 0.0 {
            self.t += dt;
        }
    }

    /// Position within the current day, in [0, 86400).
    pub fn time_of_day(&self) -> f64 {
        self.t.rem_euclid(DAY_SECONDS)
    }

    /// Whole seconds, the timestamp used on readings and commands.
    pub fn timestamp(&self) -> i64 {
        self.t.floor() as i64
    }
}
