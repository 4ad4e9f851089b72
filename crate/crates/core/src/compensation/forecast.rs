//! Yield and harvest-time forecast from how well each growth stage was held
//! inside its recipe bands.

use serde::{Deserialize, Serialize};

use crate::chamber::PlantStage;
use crate::telemetry::Channel;

/// Counts of in-band / out-of-band samples for one stage, per controlled channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTally {
    pub samples: u64,
    /// Out-of-band counts in [`Channel::CONTROLLED`] order.
    pub out_of_band: [u64; 7],
}

impl StageTally {
    /// Mean over the controlled channels of the fraction of samples spent out of band.
    pub fn stress(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        let n = self.samples as f64;
        self.out_of_band.iter().map(|&o| o as f64 / n).sum::<f64>() / 7.0
    }

    pub fn channel_stress(&self, c: Channel) -> Option<f64> {
        let i = Channel::CONTROLLED.iter().position(|x| *x == c)?;
        Some(if self.samples == 0 {
            0.0
        } else {
            self.out_of_band[i] as f64 / self.samples as f64
        })
    }
}

/// Summary of a run, one tally per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageHistory {
    pub tallies: [StageTally; 4],
}

impl StageHistory {
    /// Records one control period. `in_band` is in [`Channel::CONTROLLED`] order.
    pub fn record(&mut self, stage: PlantStage, in_band: [bool; 7]) {
        let tally = &mut self.tallies[stage.index()];
        tally.samples += 1;
        for (count, ok) in tally.out_of_band.iter_mut().zip(in_band) {
            if !ok {
                *count += 1;
            }
        }
    }

    pub fn tally(&self, stage: PlantStage) -> &StageTally {
        &self.tallies[stage.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.tallies.iter().all(|t| t.samples == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStress {
    pub stage: PlantStage,
    pub stress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub stage: PlantStage,
    pub days_to_harvest: f64,
    pub yield_factor: f64,
    pub stage_stress: Vec<StageStress>,
    /// Set when there was no history to base the forecast on.
    pub low_confidence: bool,
}

/// Forecast after `elapsed_days` in `stage`.
///
/// Yield factor is the product of `1 − stress` over the completed stages and
/// the current one. Days to harvest is the remaining nominal time of the
/// current and later stages, stretched by the current stage's stress.
pub fn forecast_yield(history: &StageHistory, stage: PlantStage, elapsed_days: f64) -> ForecastReport {
    let stage_stress: Vec<StageStress> = PlantStage::ALL
        .into_iter()
        .filter(|s| *s <= stage)
        .map(|s| StageStress {
            stage: s,
            stress: history.tally(s).stress().clamp(0.0, 1.0),
        })
        .collect();
    let yield_factor = stage_stress
        .iter()
        .map(|s| 1.0 - s.stress)
        .product::<f64>()
        .clamp(0.0, 1.0);
    let current = history.tally(stage).stress().clamp(0.0, 1.0);
    let remaining_current = (stage.nominal_days() - elapsed_days.max(0.0)).max(0.0);
    let later: f64 = PlantStage::ALL
        .into_iter()
        .filter(|s| *s > stage)
        .map(PlantStage::nominal_days)
        .sum();
    ForecastReport {
        stage,
        days_to_harvest: (remaining_current + later) * (1.0 + current),
        yield_factor,
        stage_stress,
        low_confidence: history.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_control() {
        let mut h = StageHistory::default();
        for _ in 0..100 {
            h.record(PlantStage::Germination, [true; 7]);
        }
        let f = forecast_yield(&h, PlantStage::Germination, 4.0);
        assert_eq!(f.yield_factor, 1.0);
        assert_eq!(f.days_to_harvest, 10.0 + 30.0 + 20.0 + 30.0);
        assert_eq!(f.stage_stress, vec![StageStress { stage: PlantStage::Germination, stress: 0.0 }]);
        assert!(!f.low_confidence);
    }

    #[test]
    fn fully_out_of_band_stage() {
        let mut h = StageHistory::default();
        for _ in 0..10 {
            h.record(PlantStage::Germination, [true; 7]);
            h.record(PlantStage::Vegetative, [false; 7]);
        }
        let f = forecast_yield(&h, PlantStage::Vegetative, 0.0);
        assert_eq!(f.stage_stress[1].stress, 1.0);
        assert_eq!(f.yield_factor, 0.0);
        assert_eq!(f.days_to_harvest, (30.0 + 20.0 + 30.0) * 2.0);
    }

    #[test]
    fn half_out_of_band_germination() {
        let mut h = StageHistory::default();
        for i in 0..200 {
            h.record(PlantStage::Germination, [i % 2 == 0; 7]);
        }
        let f = forecast_yield(&h, PlantStage::Germination, 0.0);
        assert_eq!(f.stage_stress[0].stress, 0.5);
        assert_eq!(f.yield_factor, 0.5);
    }

    #[test]
    fn empty_history_is_low_confidence() {
        let f = forecast_yield(&StageHistory::default(), PlantStage::Flowering, 5.0);
        assert!(f.low_confidence);
        assert_eq!(f.yield_factor, 1.0);
        assert_eq!(f.days_to_harvest, 15.0 + 30.0);
    }

    #[test]
    fn duplicating_samples_changes_nothing() {
        let mut once = StageHistory::default();
        let mut twice = StageHistory::default();
        let pattern = [
            [true, false, true, true, false, true, true],
            [false; 7],
            [true; 7],
        ];
        for (i, p) in pattern.iter().cycle().take(31).enumerate() {
            let stage = if i < 20 { PlantStage::Germination } else { PlantStage::Vegetative };
            once.record(stage, *p);
            twice.record(stage, *p);
            twice.record(stage, *p);
        }
        assert_eq!(
            forecast_yield(&once, PlantStage::Vegetative, 3.0),
            forecast_yield(&twice, PlantStage::Vegetative, 3.0)
        );
        assert_eq!(once.tally(PlantStage::Germination).channel_stress(Channel::Co2), Some(7.0 / 20.0));
        assert_eq!(once.tally(PlantStage::Germination).channel_stress(Channel::SolarRadiation), None);
    }
}
