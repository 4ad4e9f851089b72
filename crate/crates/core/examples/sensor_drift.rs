//! Shows how each transducer's relative error moves with ambient temperature.

use farmctl::chamber::{transduce, SensorParams, NOMINAL_VALUES};
use farmctl::telemetry::Channel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 2000;

fn main() {
    let sensors = SensorParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ambients = [5.0, 15.0, 25.0, 35.0, 40.0];

    print!("{:<16}", "channel");
    for a in ambients {
        print!(" {:>9}", format!("{a} °C"));
    }
    println!();
    for c in Channel::ALL {
        let truth = NOMINAL_VALUES[c.index()];
        print!("{:<16}", c.name());
        for a in ambients {
            let mean: f64 = (0..SAMPLES)
                .map(|_| transduce(sensors.get(c), truth, a, &mut rng))
                .sum::<f64>()
                / SAMPLES as f64;
            print!(" {:>8.2}%", 100.0 * (mean - truth) / truth);
        }
        println!();
    }
}
