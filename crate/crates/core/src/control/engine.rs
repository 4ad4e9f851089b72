//! The per-period decision: readings in, actuator levels out.

use serde::{Deserialize, Serialize};

use super::recipe::{Recipe, StagePlan};
use crate::chamber::PlantStage;
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, ReadingSet, SimClock};

/// Fixed timing and lamp constants of the control laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Illuminance of the lamp at full duty.
    pub lamp_max_lux: f64,
    pub pump_pulse_s: f64,
    /// Lockout after a pump pulse ends.
    pub pump_cooldown_s: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            lamp_max_lux: 20_000.0,
            pump_pulse_s: 10.0,
            pump_cooldown_s: 300.0,
        }
    }
}

/// Bang-bang switching with a deadband. Inside the band the latch is kept.
pub fn hysteresis(value: f64, setpoint: f64, deadband: f64, latch: bool) -> bool {
    if value < setpoint - deadband {
        true
    } else if value > setpoint + deadband {
        false
    } else {
        latch
    }
}

/// Inverse form for actuators that push a value down (fan against CO₂).
fn hysteresis_above(value: f64, setpoint: f64, deadband: f64, latch: bool) -> bool {
    if value > setpoint + deadband {
        true
    } else if value < setpoint - deadband {
        false
    } else {
        latch
    }
}

/// Lamp duty that tops up the ambient light to `target_lux`.
pub fn led_duty(target_lux: f64, ambient_lux: f64, lamp_max_lux: f64) -> f64 {
    ((target_lux - ambient_lux) / lamp_max_lux).clamp(0.0, 1.0)
}

/// Hysteresis memory of the on/off actuators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Latches {
    pub air_heater: bool,
    pub soil_heater: bool,
    pub fan: bool,
    pub humidifier: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub actuator: Actuator,
    pub level: f64,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub stage: PlantStage,
    pub stage_elapsed_s: f64,
    /// Clock time of the last stage update, if any.
    pub last_t: Option<f64>,
    pub latches: Latches,
    /// End of the running pump pulse.
    pub pump_until: Option<f64>,
    /// Earliest time the next pump pulse may start.
    pub pump_ready_at: f64,
    pub overrides: Vec<Override>,
    /// Levels emitted on the previous tick; frozen actuators repeat them.
    pub last_cmd: ActuatorCommandSet,
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState::new(PlantStage::Germination)
    }
}

impl ControllerState {
    pub fn new(stage: PlantStage) -> Self {
        ControllerState {
            stage,
            stage_elapsed_s: 0.0,
            last_t: None,
            latches: Latches::default(),
            pump_until: None,
            pump_ready_at: f64::NEG_INFINITY,
            overrides: Vec::new(),
            last_cmd: ActuatorCommandSet::off(0),
        }
    }

    pub fn active_override(&self, a: Actuator, now: f64) -> Option<f64> {
        self.overrides
            .iter()
            .find(|o| o.actuator == a && o.expires_at > now)
            .map(|o| o.level)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OverrideError {
    #[error("{actuator} does not accept level {level}")]
    Level { actuator: Actuator, level: f64 },
    #[error("ttl must be a finite number of seconds > 0, got {0}")]
    Ttl(f64),
}

/// Pins `actuator` at `level` until `now + ttl_s`. A newer override replaces an
/// older one for the same actuator.
pub fn apply_override(
    st: &ControllerState,
    actuator: Actuator,
    level: f64,
    ttl_s: f64,
    now: f64,
) -> Result<ControllerState, OverrideError> {
    if !actuator.accepts(level) {
        return Err(OverrideError::Level { actuator, level });
    }
    if !(ttl_s.is_finite() && ttl_s > 0.0) {
        return Err(OverrideError::Ttl(ttl_s));
    }
    let mut next = st.clone();
    next.overrides.retain(|o| o.actuator != actuator && o.expires_at > now);
    next.overrides.push(Override {
        actuator,
        level,
        expires_at: now + ttl_s,
    });
    Ok(next)
}

/// Accumulates elapsed time and moves to the next stage once the current
/// stage's nominal duration is reached. Fruiting never ends.
pub fn advance_stage(st: &ControllerState, clock: &SimClock) -> ControllerState {
    let mut next = st.clone();
    if let Some(last) = st.last_t {
        next.stage_elapsed_s += (clock.t - last).max(0.0);
    }
    next.last_t = Some(clock.t);
    if next.stage_elapsed_s >= next.stage.nominal_seconds() {
        if let Some(s) = next.stage.next() {
            next.stage = s;
            next.stage_elapsed_s = 0.0;
        }
    }
    next
}

/// Alarm flag raised by a tick.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alarm(pub String);

impl Alarm {
    pub fn channel_fault(c: Channel) -> Self {
        Alarm(format!("{c}-fault"))
    }

    pub fn all_fault() -> Self {
        Alarm("all-fault".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub cmd: ActuatorCommandSet,
    pub alarms: Vec<Alarm>,
    /// A pollination pulse forced the fan on.
    pub pollinating: bool,
    pub safe_state: bool,
}

fn on(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// One control decision. Pure in its arguments.
pub fn tick(
    readings: &ReadingSet,
    recipe: &Recipe,
    st: &ControllerState,
    clock: &SimClock,
    cfg: &ControlConfig,
) -> (TickOutput, ControllerState) {
    let now = clock.t;
    let plan: &StagePlan = recipe.plan(st.stage);
    let prev = st.last_cmd;
    let mut next = st.clone();
    next.overrides.retain(|o| o.expires_at > now);

    if readings.all_fault() {
        let mut cmd = ActuatorCommandSet::off(clock.timestamp());
        cmd.set_clamped(Actuator::Fan, 1.0);
        cmd.set_clamped(Actuator::Led, prev.get(Actuator::Led));
        next.pump_until = None;
        next.last_cmd = cmd;
        let out = TickOutput {
            cmd,
            alarms: vec![Alarm::all_fault()],
            pollinating: false,
            safe_state: true,
        };
        return (out, next);
    }

    let alarms: Vec<Alarm> = Channel::ALL
        .into_iter()
        .filter(|c| readings.get(*c).is_fault())
        .map(Alarm::channel_fault)
        .collect();
    let value = |c: Channel| readings.get(c).trusted();
    let mut cmd = ActuatorCommandSet::off(clock.timestamp());

    let switch = |c: Channel, latch: &mut bool, above: bool| -> Option<bool> {
        let v = value(c)?;
        let b = plan.band(c).expect("controlled channel");
        *latch = if above {
            hysteresis_above(v, b.setpoint, b.deadband, *latch)
        } else {
            hysteresis(v, b.setpoint, b.deadband, *latch)
        };
        Some(*latch)
    };
    let l = &mut next.latches;
    let air = switch(Channel::AirTemp, &mut l.air_heater, false);
    let soil = switch(Channel::SoilTemp, &mut l.soil_heater, false);
    let vent = switch(Channel::Co2, &mut l.fan, true);
    let humid = switch(Channel::AirHumidity, &mut l.humidifier, false);
    cmd.set_clamped(Actuator::AirHeater, air.map_or(prev.get(Actuator::AirHeater), on));
    cmd.set_clamped(Actuator::SoilHeater, soil.map_or(prev.get(Actuator::SoilHeater), on));
    cmd.set_clamped(Actuator::Humidifier, humid.map_or(prev.get(Actuator::Humidifier), on));

    let pollinating = st.stage == PlantStage::Flowering
        && plan
            .pollination
            .is_some_and(|p| p.is_active(&plan.photoperiod, clock));
    let fan = match vent {
        Some(v) => on(v || pollinating),
        None if pollinating => 1.0,
        None => prev.get(Actuator::Fan),
    };
    cmd.set_clamped(Actuator::Fan, fan);

    let pumping = match next.pump_until {
        Some(until) if now < until => true,
        _ => {
            next.pump_until = None;
            match value(Channel::SoilMoisture) {
                Some(m) if now >= next.pump_ready_at && m < plan.soil_moisture.setpoint - plan.soil_moisture.deadband => {
                    next.pump_until = Some(now + cfg.pump_pulse_s);
                    next.pump_ready_at = now + cfg.pump_pulse_s + cfg.pump_cooldown_s;
                    true
                }
                Some(_) => false,
                // frozen: a running pulse already ended, so the pump stays off
                None => false,
            }
        }
    };
    cmd.set_clamped(Actuator::Pump, on(pumping));

    let led = match value(Channel::Illumination) {
        Some(lux) => {
            let ambient = (lux - cfg.lamp_max_lux * prev.get(Actuator::Led)).max(0.0);
            led_duty(plan.lux_target(clock), ambient, cfg.lamp_max_lux)
        }
        None => prev.get(Actuator::Led),
    };
    cmd.set_clamped(Actuator::Led, led);

    for o in &next.overrides {
        cmd.set_clamped(o.actuator, o.level);
    }
    next.last_cmd = cmd;
    let out = TickOutput {
        cmd,
        alarms,
        pollinating,
        safe_state: false,
    };
    (out, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::Reading;
    use proptest::prelude::*;

    fn readings(t: i64, f: impl Fn(Channel) -> Option<f64>) -> ReadingSet {
        let rs: Vec<Reading> = Channel::ALL
            .into_iter()
            .map(|c| match f(c) {
                Some(v) => Reading::corrected(c, v, t),
                None => Reading::fault(c, t),
            })
            .collect();
        ReadingSet::from_readings(t, rs).unwrap()
    }

    fn nominal(c: Channel) -> f64 {
        match c {
            Channel::Co2 => 700.0,
            Channel::AirTemp => 24.0,
            Channel::AirHumidity => 70.0,
            Channel::SoilTemp => 23.0,
            Channel::SoilMoisture => 60.0,
            Channel::Ph => 6.5,
            Channel::Illumination => 0.0,
            Channel::SolarRadiation => 0.0,
        }
    }

    fn with(c0: Channel, v: Option<f64>) -> impl Fn(Channel) -> Option<f64> {
        move |c| if c == c0 { v } else { Some(nominal(c)) }
    }

    #[test]
    fn hysteresis_examples() {
        assert!(hysteresis(23.4, 24.0, 0.5, false));
        assert!(!hysteresis(24.6, 24.0, 0.5, true));
        assert!(hysteresis(24.0, 24.0, 0.5, true));
        assert!(!hysteresis(24.0, 24.0, 0.5, false));
    }

    #[test]
    fn led_duty_examples() {
        assert_eq!(led_duty(3500.0, 0.0, 20_000.0), 0.175);
        assert_eq!(led_duty(3500.0, 3500.0, 20_000.0), 0.0);
        assert_eq!(led_duty(50_000.0, 0.0, 20_000.0), 1.0);
    }

    #[test]
    fn heater_latches() {
        let r = Recipe::tomato();
        let cfg = ControlConfig::default();
        let clock = SimClock::new(0.0);
        let st = ControllerState::default();
        let (out, st) = tick(&readings(0, with(Channel::AirTemp, Some(22.0))), &r, &st, &clock, &cfg);
        assert_eq!(out.cmd.get(Actuator::AirHeater), 1.0);
        let (out, st) = tick(&readings(1, with(Channel::AirTemp, Some(24.2))), &r, &st, &clock, &cfg);
        assert_eq!(out.cmd.get(Actuator::AirHeater), 1.0);
        let (out, _) = tick(&readings(2, with(Channel::AirTemp, Some(24.6))), &r, &st, &clock, &cfg);
        assert_eq!(out.cmd.get(Actuator::AirHeater), 0.0);
    }

    #[test]
    fn germination_lamp_from_dark() {
        let r = Recipe::tomato();
        let clock = SimClock::new(8.0 * 3600.0);
        let (out, _) = tick(
            &readings(0, |c| Some(nominal(c))),
            &r,
            &ControllerState::default(),
            &clock,
            &ControlConfig::default(),
        );
        assert_eq!(out.cmd.get(Actuator::Led), 0.175);
        // the lamp's own contribution is not counted as ambient light
        let mut st = ControllerState::default();
        st.last_cmd.set(Actuator::Led, 0.175).unwrap();
        let (out, _) = tick(
            &readings(1, with(Channel::Illumination, Some(3500.0))),
            &r,
            &st,
            &clock,
            &ControlConfig::default(),
        );
        assert!((out.cmd.get(Actuator::Led) - 0.175).abs() < 1e-12);
    }

    #[test]
    fn pollination_windows_force_the_fan() {
        let r = Recipe::tomato();
        let st = ControllerState::new(PlantStage::Flowering);
        let cfg = ControlConfig::default();
        let mut on_seconds = Vec::new();
        let mut s = st.clone();
        for t in 0..86_400 {
            let (out, n) = tick(&readings(t, |c| Some(nominal(c))), &r, &s, &SimClock::new(t as f64), &cfg);
            s = n;
            if out.cmd.get(Actuator::Fan) > 0.0 {
                on_seconds.push(t);
            }
        }
        assert_eq!(on_seconds.len(), 180);
        for start in [21_600, 40_800, 60_000] {
            assert!((start..start + 60).all(|t| on_seconds.contains(&t)), "window at {start}");
        }
        // no pulses outside flowering
        let (out, _) = tick(
            &readings(21_600, |c| Some(nominal(c))),
            &r,
            &ControllerState::default(),
            &SimClock::new(21_600.0),
            &cfg,
        );
        assert_eq!(out.cmd.get(Actuator::Fan), 0.0);
        assert!(!out.pollinating);
    }

    #[test]
    fn pump_pulse_and_cooldown() {
        let r = Recipe::tomato();
        let cfg = ControlConfig::default();
        let dry = readings(0, with(Channel::SoilMoisture, Some(40.0)));
        let mut st = ControllerState::default();
        let mut starts = Vec::new();
        let mut on_ticks = 0;
        for t in 0..1000 {
            let was_on = st.last_cmd.get(Actuator::Pump) > 0.0;
            let (out, n) = tick(&dry, &r, &st, &SimClock::new(t as f64), &cfg);
            st = n;
            let now_on = out.cmd.get(Actuator::Pump) > 0.0;
            if now_on {
                on_ticks += 1;
            }
            if now_on && !was_on {
                starts.push(t);
            }
        }
        assert_eq!(starts, vec![0, 310, 620, 930]);
        assert_eq!(on_ticks, 10 * 3 + 10);
    }

    #[test]
    fn fault_freezes_and_alarms() {
        let r = Recipe::tomato();
        let cfg = ControlConfig::default();
        let clock = SimClock::new(0.0);
        let (_, st) = tick(&readings(0, with(Channel::AirTemp, Some(20.0))), &r, &ControllerState::default(), &clock, &cfg);
        let (out, _) = tick(&readings(1, with(Channel::AirTemp, None)), &r, &st, &clock, &cfg);
        assert_eq!(out.cmd.get(Actuator::AirHeater), 1.0);
        assert_eq!(out.alarms, vec![Alarm("air_temp-fault".into())]);
        assert!(!out.safe_state);
    }

    #[test]
    fn all_fault_is_safe_state() {
        let r = Recipe::tomato();
        let mut st = ControllerState::default();
        st.last_cmd = ActuatorCommandSet::off(0)
            .with(Actuator::AirHeater, 1.0)
            .with(Actuator::Pump, 1.0)
            .with(Actuator::Led, 0.4);
        let st = apply_override(&st, Actuator::AirHeater, 1.0, 100.0, 0.0).unwrap();
        let (out, _) = tick(&readings(1, |_| None), &r, &st, &SimClock::new(1.0), &ControlConfig::default());
        assert!(out.safe_state);
        assert_eq!(out.alarms, vec![Alarm::all_fault()]);
        assert_eq!(out.cmd.levels(), [0.0, 0.0, 1.0, 0.0, 0.0, 0.4]);
    }

    #[test]
    fn overrides_pin_and_expire() {
        let r = Recipe::tomato();
        let cfg = ControlConfig::default();
        let st = apply_override(&ControllerState::default(), Actuator::Fan, 1.0, 60.0, 0.0).unwrap();
        let calm = readings(0, |c| Some(nominal(c)));
        let (out, st2) = tick(&calm, &r, &st, &SimClock::new(59.0), &cfg);
        assert_eq!(out.cmd.get(Actuator::Fan), 1.0);
        assert_eq!(st2.overrides.len(), 1);
        let (out, st3) = tick(&calm, &r, &st2, &SimClock::new(60.0), &cfg);
        assert_eq!(out.cmd.get(Actuator::Fan), 0.0);
        assert!(st3.overrides.is_empty());

        let st = apply_override(&ControllerState::default(), Actuator::Led, 0.5, 60.0, 0.0).unwrap();
        let st = apply_override(&st, Actuator::Led, 0.2, 60.0, 1.0).unwrap();
        let (out, _) = tick(&calm, &r, &st, &SimClock::new(2.0), &cfg);
        assert_eq!(out.cmd.get(Actuator::Led), 0.2);

        assert!(apply_override(&st, Actuator::Fan, 0.5, 60.0, 0.0).is_err());
        assert!(apply_override(&st, Actuator::Led, 1.5, 60.0, 0.0).is_err());
        assert!(apply_override(&st, Actuator::Led, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn stage_progression() {
        let day = 86_400.0;
        let mut st = ControllerState::default();
        st.stage_elapsed_s = 14.0 * day;
        st.last_t = Some(0.0);
        let n = advance_stage(&st, &SimClock::new(0.0));
        assert_eq!((n.stage, n.stage_elapsed_s), (PlantStage::Vegetative, 0.0));

        st.stage_elapsed_s = 13.0 * day + 23.0 * 3600.0;
        let n = advance_stage(&st, &SimClock::new(0.0));
        assert_eq!(n.stage, PlantStage::Germination);
        // an hour more of clock time crosses the boundary
        let n = advance_stage(&n, &SimClock::new(3600.0));
        assert_eq!(n.stage, PlantStage::Vegetative);

        let mut st = ControllerState::new(PlantStage::Fruiting);
        st.stage_elapsed_s = 1e9;
        assert_eq!(advance_stage(&st, &SimClock::new(0.0)).stage, PlantStage::Fruiting);
    }

    proptest! {
        #[test]
        fn tick_is_deterministic(vals in prop::collection::vec(prop::option::of(0.0f64..1.0), 8), t in 0.0f64..200_000.0) {
            let r = Recipe::tomato();
            let rs = readings(t as i64, |c| vals[c.index()].map(|u| {
                let m = c.meta();
                m.min + u * (m.max - m.min)
            }));
            let st = ControllerState::new(PlantStage::Flowering);
            let a = tick(&rs, &r, &st, &SimClock::new(t), &ControlConfig::default());
            let b = tick(&rs, &r, &st, &SimClock::new(t), &ControlConfig::default());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn switches_only_on_band_crossings(values in prop::collection::vec(20.0f64..28.0, 1..300)) {
            let (sp, db) = (24.0, 0.5);
            let mut latch = false;
            let mut switches = 0;
            // crossings: entries into the region strictly below or above the band
            let mut crossings = 0;
            let mut side = 0i8;
            for v in &values {
                let new = hysteresis(*v, sp, db, latch);
                if new != latch {
                    switches += 1;
                }
                latch = new;
                let s = if *v < sp - db { -1 } else if *v > sp + db { 1 } else { 0 };
                if s != 0 && s != side {
                    crossings += 1;
                    side = s;
                }
            }
            prop_assert!(switches <= crossings);
        }

        #[test]
        fn small_sinusoid_never_switches(amp in 0.0f64..0.499, phase in 0.0f64..6.3, period in 5.0f64..500.0, start in any::<bool>()) {
            let mut latch = start;
            for k in 0..2000 {
                let v = 24.0 + amp * (phase + 2.0 * std::f64::consts::PI * k as f64 / period).sin();
                let n = hysteresis(v, 24.0, 0.5, latch);
                prop_assert_eq!(n, latch);
                latch = n;
            }
        }
    }
}
