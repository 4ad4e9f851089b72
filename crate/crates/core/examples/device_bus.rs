//! Serves the simulated chamber on a TCP port and drives it through the line
//! protocol like a real device would be.

use std::time::Duration;

use farmctl::bus::{apply_commands, fetch_info, poll_all, shared, BusServer, SimBackend, SimBackendConfig, StreamBus};
use farmctl::telemetry::{Actuator, ActuatorCommandSet};

fn main() {
    let backend = shared(SimBackend::new(SimBackendConfig::default()).expect("backend"));
    let server = BusServer::start(&"127.0.0.1:0".parse().unwrap(), backend.clone()).expect("bind");
    println!("bus on {}", server.endpoint());

    let mut bus = StreamBus::connect(server.endpoint(), Duration::from_millis(500)).expect("connect");
    let cmd = ActuatorCommandSet::off(0).with(Actuator::AirHeater, 1.0).with(Actuator::Led, 0.4);
    for minute in 0..5 {
        let info = fetch_info(&mut bus).expect("info");
        let t = info.t.unwrap_or(0.0) as i64;
        let set = poll_all(&mut bus, t).expect("poll");
        apply_commands(&mut bus, &cmd).expect("set");
        let shown: Vec<String> = set
            .iter()
            .map(|r| match r.value {
                Some(v) => format!("{}={v:.1}", r.channel),
                None => format!("{}=fault", r.channel),
            })
            .collect();
        println!("t={t:>4}  {}", shown.join(" "));
        if minute < 4 {
            let mut b = backend.lock().unwrap();
            for _ in 0..12 {
                b.advance(5.0).expect("advance");
            }
        }
    }
}
