//! Recipe-driven control: hysteresis for the on/off actuators, feed-forward
//! duty for the lamp, growth-stage progression and the pollination schedule.

mod engine;
mod pipeline;
mod recipe;

pub use engine::{
    advance_stage, apply_override, hysteresis, led_duty, tick, Alarm, ControlConfig, ControllerState, Latches,
    Override, OverrideError, TickOutput,
};
pub use pipeline::{ControlError, ControlMessage, Controller, TickRecord};
pub use recipe::{Band, FieldError, Photoperiod, Pollination, Recipe, RecipeError, StagePlan};
