//! Simulated growing chamber: the physics backend used in place of real hardware.
//!
//! The chamber is a set of first-order linear ODEs (air and soil temperature,
//! humidity, CO₂, soil moisture) integrated with explicit Euler, plus sensor
//! transducer models that add a temperature-dependent multiplicative bias and
//! gaussian noise to the true values.

mod ambient;
mod physics;
mod scenario;
mod sensor;
mod stage;

pub use ambient::{ambient_profile, AmbientProfileSpec};
pub use physics::{AmbientConditions, ChamberModel, ChamberParams, ChamberState, SimError, MAX_DT};
pub use scenario::{run_scenario, ScenarioController, ScenarioSpec, Trace, TraceEntry};
pub use sensor::{
    sense, transduce, truth, truths, ChannelSensor, SensorParams, DEFAULT_BIAS_SLOPE, NOMINAL_VALUES,
    PH_BIAS_SLOPE, REFERENCE_AMBIENT_C,
};
pub use stage::PlantStage;
