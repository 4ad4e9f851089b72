//! Runs the full control loop against the embedded simulator for two
//! simulated hours, then reads the recorded air temperature back.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use farmctl::config::Config;
use farmctl::daemon::{run, RunOptions};
use farmctl::datastore::{downsample, DataReader, SeriesKey};
use farmctl::telemetry::Channel;

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = Config::default();
    config.api.bind = "127.0.0.1:0".into();
    config.data_dir = dir.path().join("data");
    config.control.period_ms = 1;
    config.control.sim_dt_s = 5.0;

    let opts = RunOptions {
        config,
        embedded_sim: true,
        max_ticks: Some(1440),
        handle_signals: false,
    };
    let summary = run(opts, Arc::new(AtomicBool::new(false)), |addr| println!("api on http://{addr}")).expect("run");
    println!("{} periods, {} records, last t = {} s", summary.ticks, summary.records, summary.last_t);

    let reader = DataReader::new(dir.path().join("data"));
    let series = reader.query(SeriesKey::Channel(Channel::AirTemp), 0, i64::MAX).expect("query");
    for p in downsample(&series, 900).points {
        println!("{:>6} s  {:.2} °C", p.t, p.v);
    }
}
