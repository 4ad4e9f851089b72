//! Drives the controller through a simulated week of germination and prints
//! the yield forecast it builds from time spent inside the recipe bands.

use farmctl::chamber::{run_scenario, ScenarioSpec};
use farmctl::control::{Controller, Recipe};

fn main() {
    let mut ctl = Controller::new(Recipe::tomato(), None);
    let spec = ScenarioSpec {
        duration_s: 7.0 * 86_400.0,
        dt_s: 5.0,
        ..ScenarioSpec::default()
    };
    run_scenario(&spec, Some(&mut ctl)).expect("scenario");

    let f = ctl.forecast();
    println!("stage {:?}, {:.1} days to harvest, yield factor {:.3}", f.stage, f.days_to_harvest, f.yield_factor);
    for s in &f.stage_stress {
        println!("  {:?}: stress {:.3}", s.stage, s.stress);
    }
}
