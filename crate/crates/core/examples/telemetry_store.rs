//! Appends a day of synthetic readings to the append-only store and queries
//! it back at full and reduced resolution.

use farmctl::datastore::{downsample, Datastore, Event, SeriesKey};
use farmctl::telemetry::{Channel, Reading};

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut store = Datastore::open(dir.path()).expect("open");
    for t in (0..86_400).step_by(60) {
        let phase = t as f64 / 86_400.0 * std::f64::consts::TAU;
        store
            .append(Event::Reading(Reading::raw(Channel::AirTemp, 22.0 + 3.0 * phase.sin(), t)))
            .expect("append");
    }
    store.flush().expect("flush");

    let key = SeriesKey::Channel(Channel::AirTemp);
    let full = store.query(key, 0, 86_400).expect("query");
    println!("{} points on disk in {}", full.points.len(), dir.path().display());
    for p in downsample(&full, 3 * 3600).points {
        println!("{:>6} s  {:.2}", p.t, p.v);
    }
}
