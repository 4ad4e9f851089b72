//! Mini-batch gradient descent for the per-channel compensation networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::calibration::CalibSample;
use super::model::{ChannelModel, CompModel, FitSummary, Norm};
use super::network::{Mlp, Workspace};
use crate::telemetry::Channel;

/// Smallest number of samples a channel needs before training starts.
pub const MIN_SAMPLES: usize = 100;

/// Widths of the default network: (raw, t_amb) → 8 tanh → 1 linear.
pub const DEFAULT_WIDTHS: [usize; 3] = [2, 8, 1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub channel: Channel,
    pub epochs: usize,
    /// Training MSE after the last epoch.
    pub train_mse: f64,
    /// Validation MSE after the last epoch.
    pub val_mse: f64,
    /// Epoch (1-based) whose parameters were kept, and its validation MSE.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// Training MSE after each epoch.
    pub loss_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    /// False when the training loss went up between two epochs.
    pub monotone_descent: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("{channel}: need at least {MIN_SAMPLES} samples, got {got}")]
    TooFewSamples { channel: Channel, got: usize },
    #[error("validation fraction {0} must lie in (0, 0.5]")]
    ValFraction(f64),
    #[error("batch size and learning rate must be positive")]
    Hyper,
    #[error("{channel}: samples contain a zero or non-finite truth/raw value")]
    BadSample { channel: Channel },
    #[error("{}: training diverged at epoch {}", .report.channel, .report.epochs)]
    Diverged { report: Box<TrainReport> },
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = var.sqrt();
    (mean, if scale > 1e-12 { scale } else { 1.0 })
}

/// Normalization constants from a training set.
pub fn fit_norm(samples: &[CalibSample]) -> Norm {
    let (raw_mean, raw_scale) = mean_and_scale(samples.iter().map(|s| s.raw));
    let (t_mean, t_scale) = mean_and_scale(samples.iter().map(|s| s.t_amb));
    let rms = (samples.iter().map(|s| s.target().powi(2)).sum::<f64>() / samples.len().max(1) as f64).sqrt();
    Norm {
        raw_mean,
        raw_scale,
        t_mean,
        t_scale,
        out_scale: if rms > 1e-12 { rms } else { 1.0 },
    }
}

/// Trains the network of one channel. `samples` must all belong to `channel`.
///
/// The loss is minimized in normalized output units (MSE divided by
/// `out_scale²`); reported MSEs are in relative-bias units. The parameters
/// with the lowest validation MSE are returned.
pub fn train_channel(
    channel: Channel,
    samples: &[CalibSample],
    hyper: &TrainHyper,
) -> Result<(ChannelModel, TrainReport), TrainError> {
    if samples.len() < MIN_SAMPLES {
        return Err(TrainError::TooFewSamples {
            channel,
            got: samples.len(),
        });
    }
    if !(hyper.val_fraction > 0.0 && hyper.val_fraction <= 0.5) {
        return Err(TrainError::ValFraction(hyper.val_fraction));
    }
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(TrainError::Hyper);
    }
    if samples
        .iter()
        .any(|s| s.channel != channel || !s.raw.is_finite() || !s.t_amb.is_finite() || !(s.truth.abs() > 0.0))
    {
        return Err(TrainError::BadSample { channel });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(channel.index() as u64);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * hyper.val_fraction).ceil() as usize).clamp(1, samples.len() - 1);
    let val: Vec<CalibSample> = order[..n_val].iter().map(|&i| samples[i]).collect();
    let train: Vec<CalibSample> = order[n_val..].iter().map(|&i| samples[i]).collect();

    let norm = fit_norm(&train);
    let mut layers = Mlp::init(&DEFAULT_WIDTHS, &mut rng);
    // output layer starts at zero: the untrained model is the identity correction
    if let Some(out) = layers.layers.last_mut() {
        out.w.iter_mut().flatten().for_each(|w| *w = 0.0);
        out.b.iter_mut().for_each(|b| *b = 0.0);
    }
    let mut model = ChannelModel {
        channel,
        norm,
        layers,
        fit: None,
    };
    let (train_x, train_y) = model.batch(&train);
    let (val_x, val_y) = model.batch(&val);
    let step = hyper.lr / (norm.out_scale * norm.out_scale);

    let mut ws = Workspace::default();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut bx = Vec::with_capacity(hyper.batch_size);
    let mut by = Vec::with_capacity(hyper.batch_size);
    let mut report = TrainReport {
        channel,
        epochs: 0,
        train_mse: f64::NAN,
        val_mse: f64::NAN,
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        loss_curve: Vec::with_capacity(hyper.epochs),
        val_curve: Vec::with_capacity(hyper.epochs),
        monotone_descent: true,
    };
    let mut best = model.layers.clone();

    for epoch in 1..=hyper.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(hyper.batch_size) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| train_x[i]));
            by.extend(chunk.iter().map(|&i| train_y[i]));
            let g = model.layers.loss_gradient(&bx, &by, norm.out_scale, &mut ws);
            model.layers.add_scaled(&g, -step);
        }
        let train_mse = model.layers.loss(&train_x, &train_y, norm.out_scale);
        let val_mse = model.layers.loss(&val_x, &val_y, norm.out_scale);
        report.epochs = epoch;
        if let Some(&prev) = report.loss_curve.last() {
            if train_mse > prev {
                report.monotone_descent = false;
            }
        }
        report.loss_curve.push(train_mse);
        report.val_curve.push(val_mse);
        report.train_mse = train_mse;
        report.val_mse = val_mse;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(TrainError::Diverged {
                report: Box::new(report),
            });
        }
        if val_mse < report.best_val_mse {
            report.best_val_mse = val_mse;
            report.best_epoch = epoch;
            best.clone_from(&model.layers);
        }
    }
    if !report.monotone_descent {
        log::debug!("{channel}: training loss increased between epochs");
    }

    model.layers = best;
    model.fit = Some(FitSummary {
        train_mse: model.layers.loss(&train_x, &train_y, norm.out_scale),
        val_mse: report.best_val_mse,
        epochs: report.epochs,
    });
    Ok((model, report))
}

/// Trains one network per channel present in `samples`, channels in parallel.
pub fn train(samples: &[CalibSample], hyper: &TrainHyper) -> Result<(CompModel, Vec<TrainReport>), TrainError> {
    let groups: Vec<(Channel, Vec<CalibSample>)> = Channel::ALL
        .into_iter()
        .map(|c| (c, samples.iter().filter(|s| s.channel == c).copied().collect::<Vec<_>>()))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .iter()
            .map(|(c, s)| scope.spawn(move || train_channel(*c, s, hyper)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut model = CompModel::default();
    let mut reports = Vec::new();
    for r in results {
        let (m, rep) = r?;
        model.channels.push(m);
        reports.push(rep);
    }
    Ok((model, reports))
}
