//! The full control period: validate → compensate → stage progression → tick,
//! plus the stress bookkeeping behind the forecast.

use serde::{Deserialize, Serialize};

use super::engine::{advance_stage, apply_override, tick, Alarm, ControlConfig, ControllerState, OverrideError};
use super::recipe::{FieldError, Recipe};
use crate::chamber::{PlantStage, ScenarioController};
use crate::compensation::{forecast_yield, CompModel, ForecastReport, StageHistory};
use crate::telemetry::{validate_reading, Actuator, ActuatorCommandSet, Channel, ReadingSet, SimClock};

/// What one control period saw and decided.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub t: f64,
    pub stage: PlantStage,
    pub stage_elapsed_s: f64,
    pub raw: ReadingSet,
    /// Validated and, when a model is loaded, compensated.
    pub readings: ReadingSet,
    pub cmd: ActuatorCommandSet,
    pub alarms: Vec<Alarm>,
    pub pollinating: bool,
    pub safe_state: bool,
    pub compensated: bool,
}

/// Requests from outside the control loop, applied at the top of a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlMessage {
    SetRecipe(Recipe),
    Override { actuator: Actuator, level: f64, ttl_s: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("invalid recipe")]
    Recipe(Vec<FieldError>),
    #[error(transparent)]
    Override(#[from] OverrideError),
}

pub struct Controller {
    recipe: Recipe,
    pub config: ControlConfig,
    model: Option<CompModel>,
    state: ControllerState,
    history: StageHistory,
    last: Option<TickRecord>,
}

impl Controller {
    pub fn new(recipe: Recipe, model: Option<CompModel>) -> Self {
        Controller {
            recipe,
            config: ControlConfig::default(),
            model,
            state: ControllerState::default(),
            history: StageHistory::default(),
            last: None,
        }
    }

    pub fn starting_at(mut self, stage: PlantStage) -> Self {
        self.state = ControllerState::new(stage);
        self
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    pub fn model(&self) -> Option<&CompModel> {
        self.model.as_ref()
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn history(&self) -> &StageHistory {
        &self.history
    }

    pub fn last(&self) -> Option<&TickRecord> {
        self.last.as_ref()
    }

    pub fn apply(&mut self, msg: ControlMessage, now: f64) -> Result<(), ControlError> {
        match msg {
            ControlMessage::SetRecipe(r) => {
                r.validate().map_err(ControlError::Recipe)?;
                self.recipe = r;
            }
            ControlMessage::Override { actuator, level, ttl_s } => {
                self.state = apply_override(&self.state, actuator, level, ttl_s, now)?;
            }
        }
        Ok(())
    }

    /// Corrects a raw set. `t_amb` falls back to the air temperature reading.
    pub fn correct(&self, raw: &ReadingSet, t_amb: Option<f64>) -> (ReadingSet, bool) {
        let valid = raw.map(validate_reading);
        let Some(model) = &self.model else {
            return (valid, false);
        };
        match t_amb.or_else(|| valid.get(Channel::AirTemp).trusted()) {
            Some(t) => (valid.map(|r| model.compensate(r, t)), true),
            None => (valid, false),
        }
    }

    /// Runs one control period.
    pub fn step(&mut self, raw: &ReadingSet, clock: &SimClock, t_amb: Option<f64>) -> &TickRecord {
        let (readings, compensated) = self.correct(raw, t_amb);
        self.state = advance_stage(&self.state, clock);
        let (out, next) = tick(&readings, &self.recipe, &self.state, clock, &self.config);
        self.state = next;
        let plan = self.recipe.plan(self.state.stage);
        self.history.record(self.state.stage, plan.in_band(&readings, clock));
        self.last.insert(TickRecord {
            t: clock.t,
            stage: self.state.stage,
            stage_elapsed_s: self.state.stage_elapsed_s,
            raw: raw.clone(),
            readings,
            cmd: out.cmd,
            alarms: out.alarms,
            pollinating: out.pollinating,
            safe_state: out.safe_state,
            compensated,
        })
    }

    pub fn forecast(&self) -> ForecastReport {
        forecast_yield(
            &self.history,
            self.state.stage,
            self.state.stage_elapsed_s / crate::telemetry::DAY_SECONDS,
        )
    }
}

impl ScenarioController for Controller {
    fn on_tick(&mut self, raw: &ReadingSet, clock: &SimClock, t_amb: f64) -> Result<ActuatorCommandSet, String> {
        Ok(self.step(raw, clock, Some(t_amb)).cmd)
    }

    fn stage(&self) -> Option<PlantStage> {
        Some(self.state.stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chamber::{run_scenario, AmbientProfileSpec, ScenarioSpec};

    #[test]
    fn holds_air_temperature_in_cold_room() {
        let spec = ScenarioSpec {
            duration_s: 6.0 * 3600.0,
            ambient: AmbientProfileSpec::constant(15.0),
            ..ScenarioSpec::default()
        };
        let mut ctl = Controller::new(Recipe::tomato(), None);
        let trace = run_scenario(&spec, Some(&mut ctl)).unwrap();
        let late: Vec<f64> = trace.entries[2 * 3600..].iter().map(|e| e.state.t_air).collect();
        let (lo, hi) = late.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(lo >= 23.3 && hi <= 24.7, "t_air range [{lo}, {hi}]");
        assert!(!ctl.forecast().low_confidence);
    }

    #[test]
    fn messages() {
        let mut ctl = Controller::new(Recipe::tomato(), None);
        let mut bad = Recipe::tomato();
        bad.flowering.co2.deadband = -1.0;
        assert!(matches!(ctl.apply(ControlMessage::SetRecipe(bad), 0.0), Err(ControlError::Recipe(e)) if e[0].field == "flowering.co2.deadband"));
        ctl.apply(
            ControlMessage::Override {
                actuator: Actuator::Pump,
                level: 1.0,
                ttl_s: 5.0,
            },
            0.0,
        )
        .unwrap();
        assert_eq!(ctl.state().active_override(Actuator::Pump, 4.0), Some(1.0));
        let msg: ControlMessage = serde_json::from_str(r#"{"kind":"override","actuator":"led","level":0.3,"ttl_s":10}"#).unwrap();
        ctl.apply(msg, 0.0).unwrap();
        assert_eq!(ctl.state().active_override(Actuator::Led, 1.0), Some(0.3));
    }
}
