//! A simulated day of germination under the default recipe at a fixed light
//! target, then the report table.
//!
//! ```text
//! cargo run --release --example germination_experiment -- 5000
//! ```

use farmctl::experiment::{run_germination, GerminationOptions};

fn main() {
    let lux = std::env::args().nth(1).map(|a| a.parse().expect("lux must be a number")).unwrap_or(3500.0);
    let opts = GerminationOptions {
        lux,
        ..GerminationOptions::default()
    };
    let report = run_germination(&opts, None).expect("experiment");
    print!("{}", report.render());
}
