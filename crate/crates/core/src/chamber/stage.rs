use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::telemetry::{UnknownName, DAY_SECONDS};

/// Growth stage of the crop. Order is fixed: germination → vegetative →
/// flowering → fruiting, fruiting is terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantStage {
    Germination,
    Vegetative,
    Flowering,
    Fruiting,
}

impl PlantStage {
    pub const ALL: [PlantStage; 4] = [
        PlantStage::Germination,
        PlantStage::Vegetative,
        PlantStage::Flowering,
        PlantStage::Fruiting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PlantStage::Germination => "germination",
            PlantStage::Vegetative => "vegetative",
            PlantStage::Flowering => "flowering",
            PlantStage::Fruiting => "fruiting",
        }
    }

    /// Nominal duration of the stage for the default tomato profile.
    pub fn nominal_days(self) -> f64 {
        match self {
            PlantStage::Germination => 14.0,
            PlantStage::Vegetative => 30.0,
            PlantStage::Flowering => 20.0,
            PlantStage::Fruiting => 30.0,
        }
    }

    pub fn nominal_seconds(self) -> f64 {
        self.nominal_days() * DAY_SECONDS
    }

    /// Multiplier on photosynthetic CO₂ uptake.
    pub fn co2_factor(self) -> f64 {
        match self {
            PlantStage::Germination => 0.2,
            PlantStage::Vegetative => 1.0,
            PlantStage::Flowering => 0.8,
            PlantStage::Fruiting => 0.6,
        }
    }

    /// Multiplier on root water uptake.
    pub fn water_factor(self) -> f64 {
        match self {
            PlantStage::Germination => 0.3,
            PlantStage::Vegetative => 1.0,
            PlantStage::Flowering => 1.2,
            PlantStage::Fruiting => 1.0,
        }
    }

    pub fn next(self) -> Option<PlantStage> {
        match self {
            PlantStage::Germination => Some(PlantStage::Vegetative),
            PlantStage::Vegetative => Some(PlantStage::Flowering),
            PlantStage::Flowering => Some(PlantStage::Fruiting),
            PlantStage::Fruiting => None,
        }
    }
}

impl fmt::Display for PlantStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantStage {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlantStage::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}
