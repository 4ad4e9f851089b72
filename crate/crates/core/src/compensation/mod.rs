//! Temperature-drift compensation and the yield forecast.
//!
//! Each channel gets its own small network mapping (normalized raw value,
//! normalized ambient temperature) to a predicted relative bias ĉ; the corrected
//! value is `raw / (1 + ĉ)`. Networks are trained from transducer sweeps
//! generated with the chamber sensor models.

mod calibration;
mod forecast;
mod model;
mod network;
mod train;

pub use calibration::{
    channel_errors, default_truth_range, error_table, generate_calibration, linspace, CalibSample,
    CalibrationSweep, ChannelErrors, AMBIENT_RANGE_C,
};
pub use forecast::{forecast_yield, ForecastReport, StageHistory, StageStress, StageTally};
pub use model::{forward, ChannelModel, CompModel, Correction, FitSummary, ModelError, Norm};
pub use network::{Activation, Layer, Mlp, ShapeError, Workspace};
pub use train::{fit_norm, train, train_channel, TrainError, TrainHyper, TrainReport, DEFAULT_WIDTHS, MIN_SAMPLES};
