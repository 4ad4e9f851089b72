use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::calibration::CalibSample;
use super::network::{Mlp, ShapeError, Workspace};
use crate::telemetry::{Channel, Quality, Reading};

/// Input and output normalization, fixed from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub raw_mean: f64,
    pub raw_scale: f64,
    pub t_mean: f64,
    pub t_scale: f64,
    /// The network predicts the relative bias divided by this.
    #[serde(default = "one")]
    pub out_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Norm {
    pub const IDENTITY: Norm = Norm {
        raw_mean: 0.0,
        raw_scale: 1.0,
        t_mean: 0.0,
        t_scale: 1.0,
        out_scale: 1.0,
    };

    pub fn inputs(&self, raw: f64, t_amb: f64) -> [f64; 2] {
        [(raw - self.raw_mean) / self.raw_scale, (t_amb - self.t_mean) / self.t_scale]
    }

    fn is_valid(&self) -> bool {
        let all = [self.raw_mean, self.raw_scale, self.t_mean, self.t_scale, self.out_scale];
        all.iter().all(|v| v.is_finite()) && self.raw_scale > 0.0 && self.t_scale > 0.0 && self.out_scale > 0.0
    }
}

/// Training summary stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub train_mse: f64,
    pub val_mse: f64,
    pub epochs: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model for {channel}: {source}")]
    Shape { channel: Channel, source: ShapeError },
    #[error("model for {0}: normalization scales must be finite and positive")]
    Norm(Channel),
    #[error("model lists channel {0} twice")]
    Duplicate(Channel),
    #[error("reading model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Compensation network for a single channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub channel: Channel,
    pub norm: Norm,
    pub layers: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

/// Result of correcting one raw value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correction {
    /// `clamped` is set when the corrected value had to be pulled back into
    /// the channel plausible range.
    Corrected { value: f64, clamped: bool },
    Fault,
}

impl ChannelModel {
    /// A 2→8→1 network with every parameter zero: predicts no bias.
    pub fn identity(channel: Channel) -> Self {
        ChannelModel {
            channel,
            norm: Norm::IDENTITY,
            layers: Mlp::zeros(&[2, 8, 1]),
            fit: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.layers.check(2).map_err(|source| ModelError::Shape {
            channel: self.channel,
            source,
        })?;
        if !self.norm.is_valid() {
            return Err(ModelError::Norm(self.channel));
        }
        Ok(())
    }

    /// Predicted relative bias ĉ of a raw value at the given ambient temperature.
    pub fn predict_bias(&self, raw: f64, t_amb: f64) -> f64 {
        self.norm.out_scale * self.layers.forward(&self.norm.inputs(raw, t_amb))
    }

    /// Inverts the multiplicative bias: `raw / (1 + ĉ)`, clamped into the
    /// channel plausible range.
    pub fn forward(&self, raw: f64, t_amb: f64) -> Correction {
        if !raw.is_finite() || !t_amb.is_finite() {
            return Correction::Fault;
        }
        let denom = 1.0 + self.predict_bias(raw, t_amb);
        if !denom.is_finite() || denom <= 1e-6 {
            return Correction::Fault;
        }
        let value = raw / denom;
        let clamped_value = self.channel.clamp(value);
        Correction::Corrected {
            value: clamped_value,
            clamped: clamped_value != value,
        }
    }

    /// Normalized inputs and relative-bias targets of a batch.
    pub fn batch(&self, samples: &[CalibSample]) -> (Vec<[f64; 2]>, Vec<f64>) {
        samples
            .iter()
            .map(|s| (self.norm.inputs(s.raw, s.t_amb), s.target()))
            .unzip()
    }

    /// Mean squared error of the predicted relative bias over `samples`.
    pub fn mse(&self, samples: &[CalibSample]) -> f64 {
        let (x, y) = self.batch(samples);
        self.layers.loss(&x, &y, self.norm.out_scale)
    }

    /// Exact gradients of the MSE between ĉ and the target relative bias
    /// `raw / truth − 1`, shaped like the network.
    pub fn gradient(&self, samples: &[CalibSample]) -> Mlp {
        let (x, y) = self.batch(samples);
        self.layers
            .loss_gradient(&x, &y, self.norm.out_scale, &mut Workspace::default())
    }
}

/// Full compensation model: at most one network per channel. Channels without
/// a network pass through uncorrected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompModel {
    pub channels: Vec<ChannelModel>,
}

impl CompModel {
    pub fn identity() -> Self {
        CompModel {
            channels: Channel::ALL.into_iter().map(ChannelModel::identity).collect(),
        }
    }

    pub fn get(&self, c: Channel) -> Option<&ChannelModel> {
        self.channels.iter().find(|m| m.channel == c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = [false; 8];
        for m in &self.channels {
            if std::mem::replace(&mut seen[m.channel.index()], true) {
                return Err(ModelError::Duplicate(m.channel));
            }
            m.validate()?;
        }
        Ok(())
    }

    /// Corrects one reading. Faults stay faults; channels without a network
    /// and non-finite inputs are handled as [`ChannelModel::forward`] does.
    pub fn compensate(&self, r: Reading, t_amb: f64) -> Reading {
        let Some(raw) = r.trusted() else {
            return Reading::fault(r.channel, r.timestamp);
        };
        match self.get(r.channel) {
            None => r,
            Some(m) => match m.forward(raw, t_amb) {
                Correction::Corrected { value, .. } => Reading {
                    value: Some(value),
                    quality: Quality::Corrected,
                    ..r
                },
                Correction::Fault => Reading::fault(r.channel, r.timestamp),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: CompModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Free-function form of [`ChannelModel::forward`] on a full model; channels
/// without a network are corrected with the identity.
pub fn forward(m: &CompModel, channel: Channel, raw: f64, t_amb: f64) -> Correction {
    match m.get(channel) {
        Some(cm) => cm.forward(raw, t_amb),
        None => ChannelModel::identity(channel).forward(raw, t_amb),
    }
}
