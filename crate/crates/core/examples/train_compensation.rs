//! Trains the per-channel drift compensation networks on simulated sensor
//! sweeps and prints raw versus compensated error on a held-out grid.
//!
//! ```text
//! cargo run --release --example train_compensation
//! ```

use std::time::Instant;

use farmctl::chamber::SensorParams;
use farmctl::compensation::{error_table, generate_calibration, train, CalibrationSweep, TrainHyper};
use farmctl::telemetry::Channel;

fn main() {
    let sensors = SensorParams::default();
    let train_set = generate_calibration(&Channel::ALL, &CalibrationSweep::grid(100, 100), &sensors, 1);
    let held_out = generate_calibration(&Channel::ALL, &CalibrationSweep::held_out(40, 40), &sensors, 2);

    let started = Instant::now();
    let (model, reports) = train(&train_set, &TrainHyper::default()).expect("training failed");
    println!("trained 8 channels in {:.1?}", started.elapsed());

    println!("{:<16} {:>10} {:>10} {:>10} {:>10} {:>12}", "channel", "raw mean", "raw max", "comp mean", "comp max", "val mse");
    for (row, rep) in error_table(&model, &held_out).iter().zip(&reports) {
        println!(
            "{:<16} {:>9.3}% {:>9.3}% {:>9.3}% {:>9.3}% {:>12.3e}",
            row.channel.name(),
            100.0 * row.raw_mean,
            100.0 * row.raw_max,
            100.0 * row.comp_mean,
            100.0 * row.comp_max,
            rep.best_val_mse
        );
    }
}
