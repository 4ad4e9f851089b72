//! Switches the air heater on in a cold, closed chamber and compares the
//! simulated air temperature with the first-order closed form.
//!
//! ```text
//! cargo run --example heater_step
//! ```

use farmctl::chamber::{run_scenario, AmbientProfileSpec, ChamberParams, ChamberState, ScenarioSpec};
use farmctl::telemetry::{Actuator, ActuatorCommandSet};

fn main() {
    let ambient_c = 15.0;
    let spec = ScenarioSpec {
        duration_s: 4.0 * 3600.0,
        dt_s: 1.0,
        ambient: AmbientProfileSpec {
            mean_c: ambient_c,
            amp_c: 0.0,
            ..AmbientProfileSpec::default()
        },
        initial_state: ChamberState {
            t_air: ambient_c,
            t_soil: ambient_c,
            ..ChamberState::default()
        },
        actuators: Some(ActuatorCommandSet::off(0).with(Actuator::AirHeater, 1.0)),
        ..ScenarioSpec::default()
    };
    let trace = run_scenario(&spec, None).expect("scenario");
    let p = ChamberParams::default();
    let settled = ambient_c + p.p_heat / p.k_loss;

    println!("{:>8} {:>10} {:>10} {:>8}", "t (s)", "sim °C", "exact °C", "diff");
    let mut worst: f64 = 0.0;
    for e in &trace.entries {
        let t = e.state.clock.t;
        let exact = settled + (ambient_c - settled) * (-p.k_loss * t).exp();
        worst = worst.max((e.state.t_air - exact).abs());
        if (t as i64) % 1800 == 0 {
            println!("{t:>8.0} {:>10.3} {exact:>10.3} {:>8.4}", e.state.t_air, e.state.t_air - exact);
        }
    }
    println!("settles toward {settled:.2} °C, worst gap {worst:.4} °C");
}
