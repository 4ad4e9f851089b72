//! The germination illumination experiment: one simulated day of closed-loop
//! control with the lamp target lowered, then a report of what the plant saw.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chamber::{run_scenario, AmbientProfileSpec, PlantStage, ScenarioSpec, SimError};
use crate::compensation::{forecast_yield, CompModel, ForecastReport, StageHistory};
use crate::control::{Controller, Recipe};
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, ReadingSet, SimClock, DAY_SECONDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GerminationOptions {
    pub lux: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub ambient: AmbientProfileSpec,
}

impl Default for GerminationOptions {
    fn default() -> Self {
        GerminationOptions {
            lux: 3500.0,
            seed: 0,
            duration_s: DAY_SECONDS,
            ambient: AmbientProfileSpec::default(),
        }
    }
}

/// Thermal actuator switches that happened while the controlling reading
/// was still inside the deadband.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChatterCount {
    pub air_heater: u64,
    pub soil_heater: u64,
}

impl ChatterCount {
    pub fn total(&self) -> u64 {
        self.air_heater + self.soil_heater
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GerminationReport {
    pub lux_target: f64,
    pub seed: u64,
    pub duration_s: f64,
    /// True chamber illuminance averaged over the photoperiod.
    pub mean_photoperiod_lux: f64,
    /// The same average as the illumination sensor reported it.
    pub mean_photoperiod_lux_measured: f64,
    pub lux_error_pct: f64,
    pub mean_led_duty: f64,
    /// Fraction of photoperiod ticks with the lamp at full duty.
    pub led_saturated_fraction: f64,
    pub unreachable_setpoint: bool,
    /// Fraction of ticks each controlled channel spent inside the default recipe band.
    pub in_band: BTreeMap<String, f64>,
    pub chatter: ChatterCount,
    pub switches: BTreeMap<String, u64>,
    pub clamp_violations: usize,
    pub forecast: ForecastReport,
}

struct Tick {
    clock: SimClock,
    readings: ReadingSet,
    cmd: ActuatorCommandSet,
}

fn chatter(ticks: &[Tick], actuator: Actuator, channel: Channel, recipe: &Recipe) -> u64 {
    let band = recipe.germination.band(channel).expect("thermal channel");
    ticks
        .windows(2)
        .filter(|w| {
            let (before, after) = (w[0].cmd.get(actuator), w[1].cmd.get(actuator));
            let Some(v) = w[1].readings.get(channel).trusted() else {
                return false;
            };
            (before == 0.0 && after > 0.0 && v >= band.setpoint - band.deadband)
                || (before > 0.0 && after == 0.0 && v <= band.setpoint + band.deadband)
        })
        .count() as u64
}

/// Runs the experiment. Stress and in-band fractions are judged against the
/// default recipe, so a lowered lamp target shows up as illumination stress.
pub fn run_germination(opts: &GerminationOptions, model: Option<CompModel>) -> Result<GerminationReport, SimError> {
    let reference = Recipe::tomato();
    let mut recipe = reference.clone();
    recipe.germination.illumination.setpoint = opts.lux;
    recipe.validate().map_err(|e| {
        SimError::Scenario(
            e.iter()
                .map(|f| format!("{}: {}", f.field, f.message))
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    let spec = ScenarioSpec {
        duration_s: opts.duration_s,
        dt_s: 1.0,
        seed: opts.seed,
        ambient: opts.ambient,
        stage: PlantStage::Germination,
        ..ScenarioSpec::default()
    };

    let mut ctl = Controller::new(recipe.clone(), model);
    let mut ticks: Vec<Tick> = Vec::with_capacity(spec.steps());
    let mut history = StageHistory::default();
    let mut step = |raw: &ReadingSet, clock: &SimClock, t_amb: f64| {
        let rec = ctl.step(raw, clock, Some(t_amb));
        history.record(PlantStage::Germination, reference.germination.in_band(&rec.readings, clock));
        ticks.push(Tick {
            clock: *clock,
            readings: rec.readings.clone(),
            cmd: rec.cmd,
        });
        Ok(rec.cmd)
    };
    let trace = run_scenario(&spec, Some(&mut step))?;

    let photoperiod = recipe.germination.photoperiod;
    let mut lux_sum = 0.0;
    let mut measured_sum = 0.0;
    let mut measured_n = 0usize;
    let mut duty_sum = 0.0;
    let mut saturated = 0usize;
    let mut n = 0usize;
    for (entry, tick) in trace.entries.iter().zip(&ticks) {
        if !photoperiod.is_on(&tick.clock) {
            continue;
        }
        n += 1;
        lux_sum += entry.state.lux;
        if let Some(v) = tick.readings.get(Channel::Illumination).trusted() {
            measured_sum += v;
            measured_n += 1;
        }
        duty_sum += tick.cmd.get(Actuator::Led);
        if tick.cmd.get(Actuator::Led) >= 1.0 {
            saturated += 1;
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    let mean_lux = mean(lux_sum, n);
    let led_saturated_fraction = mean(saturated as f64, n);
    let lux_error_pct = if opts.lux > 0.0 {
        100.0 * (mean_lux - opts.lux) / opts.lux
    } else {
        0.0
    };

    let tally = history.tally(PlantStage::Germination);
    let in_band = Channel::CONTROLLED
        .into_iter()
        .map(|c| (c.name().to_string(), 1.0 - tally.channel_stress(c).unwrap_or(0.0)))
        .collect();
    let switches = Actuator::ALL
        .into_iter()
        .map(|a| {
            let k = ticks.windows(2).filter(|w| w[0].cmd.get(a) != w[1].cmd.get(a)).count() as u64;
            (a.name().to_string(), k)
        })
        .collect();
    let elapsed_days = opts.duration_s / DAY_SECONDS;

    Ok(GerminationReport {
        lux_target: opts.lux,
        seed: opts.seed,
        duration_s: opts.duration_s,
        mean_photoperiod_lux: mean_lux,
        mean_photoperiod_lux_measured: mean(measured_sum, measured_n),
        lux_error_pct,
        mean_led_duty: mean(duty_sum, n),
        led_saturated_fraction,
        unreachable_setpoint: led_saturated_fraction > 0.5 && mean_lux < 0.98 * opts.lux,
        in_band,
        chatter: ChatterCount {
            air_heater: chatter(&ticks, Actuator::AirHeater, Channel::AirTemp, &recipe),
            soil_heater: chatter(&ticks, Actuator::SoilHeater, Channel::SoilTemp, &recipe),
        },
        switches,
        clamp_violations: trace.clamp_violations(),
        forecast: forecast_yield(&history, PlantStage::Germination, elapsed_days),
    })
}

impl GerminationReport {
    /// Human-readable table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s += &format!("germination experiment, target {} lux, seed {}\n", self.lux_target, self.seed);
        s += &format!(
            "mean photoperiod illuminance   {:.1} lux ({:+.2}%)\n",
            self.mean_photoperiod_lux, self.lux_error_pct
        );
        s += &format!("  as measured                  {:.1} lux\n", self.mean_photoperiod_lux_measured);
        s += &format!("mean lamp duty                 {:.4}\n", self.mean_led_duty);
        if self.unreachable_setpoint {
            s += "WARNING: lamp saturated, setpoint unreachable\n";
        }
        s += &format!(
            "chatter violations             air_heater {} soil_heater {}\n",
            self.chatter.air_heater, self.chatter.soil_heater
        );
        s += &format!("clamp violations               {}\n", self.clamp_violations);
        s += "in-band fraction (default recipe):\n";
        for (c, f) in &self.in_band {
            s += &format!("  {c:<16} {:.4}\n", f);
        }
        s += &format!(
            "forecast: yield factor {:.4}, {:.2} days to harvest{}\n",
            self.forecast.yield_factor,
            self.forecast.days_to_harvest,
            if self.forecast.low_confidence { " (low confidence)" } else { "" }
        );
        s
    }
}
