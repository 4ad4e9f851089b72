//! Device backends and the command dispatcher shared by every transport.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{encode_response, parse_command, BusCommand, BusResponse, ErrCode};
use crate::chamber::{
    ambient_profile, sense, AmbientProfileSpec, ChamberModel, ChamberParams, ChamberState, PlantStage, SensorParams,
    SimError,
};
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, ReadingSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("{0}")]
    Fault(Channel),
    #[error("{0}")]
    Rejected(String),
}

/// Self-description returned by `INFO`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub backend: String,
    pub channels: Vec<Channel>,
    pub actuators: Vec<Actuator>,
    /// Current actuator levels, when the backend tracks them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<ActuatorCommandSet>,
    /// Temperature at the controller board, used for drift compensation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

/// Anything that can be sensed and actuated.
pub trait DeviceBackend: Send {
    fn read(&mut self, channel: Channel) -> Result<f64, BackendError>;
    fn set(&mut self, actuator: Actuator, level: f64) -> Result<(), BackendError>;
    fn info(&self) -> BackendInfo;
}

/// Executes one parsed command.
pub fn dispatch(backend: &mut dyn DeviceBackend, cmd: &BusCommand) -> BusResponse {
    match *cmd {
        BusCommand::Ping => BusResponse::Ok,
        BusCommand::Info => match serde_json::to_string(&backend.info()) {
            Ok(j) => BusResponse::Json(j),
            Err(e) => BusResponse::err(ErrCode::Fault, e.to_string()),
        },
        BusCommand::Read(c) => match backend.read(c) {
            Ok(v) if v.is_finite() => BusResponse::Value(v),
            Ok(_) | Err(BackendError::Fault(_)) => BusResponse::err(ErrCode::Fault, c.name()),
            Err(BackendError::Rejected(m)) => BusResponse::err(ErrCode::BadVal, m),
        },
        BusCommand::Set(a, level) => match backend.set(a, level) {
            Ok(()) => BusResponse::Ok,
            Err(BackendError::Fault(c)) => BusResponse::err(ErrCode::Fault, c.name()),
            Err(BackendError::Rejected(m)) => BusResponse::err(ErrCode::BadVal, m),
        },
    }
}

/// Parses a request line, runs it, and renders the reply line.
pub fn handle_line(backend: &mut dyn DeviceBackend, line: &str) -> String {
    let resp = match parse_command(line) {
        Ok(cmd) => dispatch(backend, &cmd),
        Err(e) => e,
    };
    encode_response(&resp).unwrap_or_else(|e| format!("ERR FAULT {e}\n"))
}

/// Knobs of the simulated chamber behind a [`SimBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimBackendConfig {
    pub seed: u64,
    pub ambient: AmbientProfileSpec,
    pub initial_state: ChamberState,
    pub sensor_params: SensorParams,
    pub chamber: ChamberParams,
    pub stage: PlantStage,
}

impl Default for SimBackendConfig {
    fn default() -> Self {
        SimBackendConfig {
            seed: 0,
            ambient: AmbientProfileSpec::default(),
            initial_state: ChamberState::default(),
            sensor_params: SensorParams::default(),
            chamber: ChamberParams::default(),
            stage: PlantStage::Germination,
        }
    }
}

/// The chamber simulator exposed as a device. Sensors are sampled once per
/// [`SimBackend::advance`]; `READ` returns the latest sample so every client
/// sees the same value for the same instant.
pub struct SimBackend {
    cfg: SimBackendConfig,
    model: ChamberModel,
    state: ChamberState,
    levels: ActuatorCommandSet,
    rng: ChaCha8Rng,
    sample: ReadingSet,
    t_amb: f64,
    faults: [bool; 8],
}

impl SimBackend {
    pub fn new(cfg: SimBackendConfig) -> Result<Self, SimError> {
        cfg.initial_state.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = cfg.initial_state;
        let amb = ambient_profile(state.clock.t, &cfg.ambient);
        let sample = sense(&state, &cfg.sensor_params, &amb, &mut rng);
        Ok(SimBackend {
            model: ChamberModel::new(cfg.chamber),
            state,
            levels: ActuatorCommandSet::off(state.clock.timestamp()),
            rng,
            sample,
            t_amb: amb.t_amb,
            faults: [false; 8],
            cfg,
        })
    }

    /// Steps the physics by `dt` under the current levels, then samples the sensors.
    pub fn advance(&mut self, dt: f64) -> Result<(), SimError> {
        let amb = ambient_profile(self.state.clock.t, &self.cfg.ambient);
        let mut cmd = self.levels;
        cmd.t = self.state.clock.timestamp();
        self.state = self.model.step(&self.state, &cmd, &amb, self.cfg.stage, dt, &mut self.rng)?;
        let amb = ambient_profile(self.state.clock.t, &self.cfg.ambient);
        self.sample = sense(&self.state, &self.cfg.sensor_params, &amb, &mut self.rng);
        self.t_amb = amb.t_amb;
        Ok(())
    }

    pub fn state(&self) -> &ChamberState {
        &self.state
    }

    pub fn levels(&self) -> ActuatorCommandSet {
        self.levels
    }

    pub fn sample(&self) -> &ReadingSet {
        &self.sample
    }

    pub fn ambient_c(&self) -> f64 {
        self.t_amb
    }

    pub fn set_stage(&mut self, stage: PlantStage) {
        self.cfg.stage = stage;
    }

    /// Makes `READ channel` answer `ERR FAULT` until cleared.
    pub fn inject_fault(&mut self, channel: Channel, faulted: bool) {
        self.faults[channel.index()] = faulted;
    }
}

impl DeviceBackend for SimBackend {
    fn read(&mut self, channel: Channel) -> Result<f64, BackendError> {
        if self.faults[channel.index()] {
            return Err(BackendError::Fault(channel));
        }
        self.sample.get(channel).trusted().ok_or(BackendError::Fault(channel))
    }

    fn set(&mut self, actuator: Actuator, level: f64) -> Result<(), BackendError> {
        self.levels
            .set(actuator, level)
            .map_err(|e| BackendError::Rejected(e.to_string()))
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            backend: "chamber-sim".into(),
            channels: Channel::ALL.to_vec(),
            actuators: Actuator::ALL.to_vec(),
            levels: Some(self.levels),
            ambient_c: Some(self.t_amb),
            t: Some(self.state.clock.t),
        }
    }
}
