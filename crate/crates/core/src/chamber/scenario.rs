//! Scenario runner: drives the chamber forward, optionally under a controller,
//! and records the full trace.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ambient::{ambient_profile, AmbientProfileSpec};
use super::physics::{ChamberModel, ChamberParams, ChamberState, SimError, MAX_DT};
use super::sensor::{sense, SensorParams};
use super::stage::PlantStage;
use crate::telemetry::{ActuatorCommandSet, Channel, ReadingSet, SimClock};

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub duration_s: f64,
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ambient: AmbientProfileSpec,
    #[serde(default)]
    pub initial_state: ChamberState,
    #[serde(default)]
    pub sensor_params: SensorParams,
    #[serde(default = "default_stage")]
    pub stage: PlantStage,
    #[serde(default)]
    pub chamber: ChamberParams,
    /// Actuator levels held for the whole run when no controller is attached.
    #[serde(default)]
    pub actuators: Option<ActuatorCommandSet>,
}

fn default_stage() -> PlantStage {
    PlantStage::Germination
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::Scenario(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if !(self.dt_s > 0.0 && self.dt_s <= MAX_DT) {
            return Err(SimError::DtOutOfRange(self.dt_s));
        }
        self.initial_state.validate()
    }

    pub fn steps(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            duration_s: 3600.0,
            dt_s: 1.0,
            seed: 0,
            ambient: AmbientProfileSpec::default(),
            initial_state: ChamberState::default(),
            sensor_params: SensorParams::default(),
            stage: PlantStage::Germination,
            chamber: ChamberParams::default(),
            actuators: None,
        }
    }
}

/// Something that turns raw readings into actuator commands once per step.
pub trait ScenarioController {
    /// `t_amb` is the ambient temperature as measured at the controller board.
    fn on_tick(&mut self, raw: &ReadingSet, clock: &SimClock, t_amb: f64) -> Result<ActuatorCommandSet, String>;

    /// The growth stage the plant physics should use, when the controller tracks one.
    fn stage(&self) -> Option<PlantStage> {
        None
    }
}

impl<F> ScenarioController for F
where
    F: FnMut(&ReadingSet, &SimClock, f64) -> Result<ActuatorCommandSet, String>,
{
    fn on_tick(&mut self, raw: &ReadingSet, clock: &SimClock, t_amb: f64) -> Result<ActuatorCommandSet, String> {
        self(raw, clock, t_amb)
    }
}

/// One recorded step: the state at the start of the step, what the sensors
/// reported, and the command held over the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub state: ChamberState,
    pub raw: ReadingSet,
    pub cmd: ActuatorCommandSet,
    pub t_amb: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: f64,
    state: &'a ChamberState,
    raw: BTreeMap<&'static str, Option<f64>>,
    cmd: &'a ActuatorCommandSet,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_state(&self) -> Option<&ChamberState> {
        self.entries.last().map(|e| &e.state)
    }

    /// Number of recorded states that break the clamp invariants.
    pub fn clamp_violations(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| {
                let s = &e.state;
                !(0.0..=100.0).contains(&s.rh) || !(0.0..=100.0).contains(&s.moisture) || s.co2 < 0.0
            })
            .count()
    }

    /// Writes one JSON object per entry.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            let line = TraceLine {
                t: e.state.clock.t,
                state: &e.state,
                raw: Channel::ALL.into_iter().map(|c| (c.name(), e.raw.get(c).value)).collect(),
                cmd: &e.cmd,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Runs a scenario to completion. Deterministic given `spec.seed`.
pub fn run_scenario(
    spec: &ScenarioSpec,
    mut controller: Option<&mut dyn ScenarioController>,
) -> Result<Trace, SimError> {
    spec.validate()?;
    let model = ChamberModel::new(spec.chamber);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut state = spec.initial_state;
    let steps = spec.steps();
    let mut entries = Vec::with_capacity(steps);
    for _ in 0..steps {
        let amb = ambient_profile(state.clock.t, &spec.ambient);
        let raw = sense(&state, &spec.sensor_params, &amb, &mut rng);
        let (mut cmd, stage) = match controller.as_deref_mut() {
            Some(c) => {
                let cmd = c.on_tick(&raw, &state.clock, amb.t_amb).map_err(|message| SimError::Controller {
                    t: state.clock.t,
                    message,
                })?;
                (cmd, c.stage().unwrap_or(spec.stage))
            }
            None => (spec.actuators.unwrap_or_default(), spec.stage),
        };
        cmd.t = state.clock.timestamp();
        let next = model.step(&state, &cmd, &amb, stage, spec.dt_s, &mut rng)?;
        entries.push(TraceEntry {
            state,
            raw,
            cmd,
            t_amb: amb.t_amb,
        });
        state = next;
    }
    Ok(Trace { entries })
}
