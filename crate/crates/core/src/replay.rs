//! Re-serving a recorded log through the API, paced against its own clock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use crate::api::{self, ApiMode, ApiState, StateSnapshot};
use crate::chamber::PlantStage;
use crate::compensation::ForecastReport;
use crate::control::{apply_override, Alarm, ControlMessage, ControllerState, Recipe};
use crate::datastore::{load_log, DataReader, Event, Record, StoreError};
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, Quality, Reading, ReadingSet};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("malformed log: {0}")]
    Malformed(#[from] StoreError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl ReplayError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ReplayError::Malformed(_) | ReplayError::Usage(_) => 2,
            ReplayError::Runtime(_) => 1,
        }
    }
}

/// One control period reconstructed from the log.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: i64,
    pub readings: ReadingSet,
    pub cmd: ActuatorCommandSet,
    pub forecast: Option<ForecastReport>,
}

/// Groups records by timestamp. Periods without a full set of readings are
/// completed with fault readings; channels never seen stay faulted.
pub fn frames(records: &[Record]) -> Vec<Frame> {
    #[derive(Default)]
    struct Acc {
        readings: BTreeMap<usize, Reading>,
        cmd: Option<ActuatorCommandSet>,
        forecast: Option<ForecastReport>,
    }
    let mut by_t: BTreeMap<i64, Acc> = BTreeMap::new();
    for r in records {
        let acc = by_t.entry(r.event.timestamp()).or_default();
        match &r.event {
            Event::Reading(rd) => {
                acc.readings.insert(rd.channel.index(), *rd);
            }
            Event::Command(c) => acc.cmd = Some(*c),
            Event::Forecast { forecast, .. } => acc.forecast = Some(forecast.clone()),
            Event::Alarm { .. } => {}
        }
    }
    let mut last_cmd = None;
    let mut last_forecast = None;
    by_t.into_iter()
        .map(|(t, acc)| {
            let readings = ReadingSet::from_readings(
                t,
                Channel::ALL.map(|c| acc.readings.get(&c.index()).copied().unwrap_or(Reading::fault(c, t))),
            )
            .expect("complete set");
            last_cmd = acc.cmd.or(last_cmd);
            if acc.forecast.is_some() {
                last_forecast = acc.forecast;
            }
            Frame {
                t,
                readings,
                cmd: last_cmd.unwrap_or(ActuatorCommandSet::off(t)),
                forecast: last_forecast.clone(),
            }
        })
        .collect()
}

fn snapshot(frame: &Frame, overrides: &ControllerState) -> StateSnapshot {
    let now = frame.t as f64;
    let mut cmd = frame.cmd;
    for a in Actuator::ALL {
        if let Some(level) = overrides.active_override(a, now) {
            cmd.set_clamped(a, level);
        }
    }
    let safe_state = frame.readings.all_fault();
    let alarms = if safe_state {
        vec![Alarm::all_fault().0]
    } else {
        frame
            .readings
            .iter()
            .filter(|r| r.is_fault())
            .map(|r| Alarm::channel_fault(r.channel).0)
            .collect()
    };
    StateSnapshot {
        t: now,
        stage: frame.forecast.as_ref().map(|f| f.stage).unwrap_or(PlantStage::Germination),
        stage_elapsed_s: 0.0,
        readings: frame.readings.clone(),
        raw: frame.readings.clone(),
        cmd,
        overrides: overrides.overrides.iter().filter(|o| o.expires_at > now).copied().collect(),
        alarms,
        safe_state,
        pollinating: false,
        compensation: if frame.readings.iter().any(|r| r.quality == Quality::Corrected) {
            "on"
        } else {
            "off"
        }
        .into(),
        forecast: frame.forecast.clone(),
    }
}

pub struct ReplayOptions {
    pub log: PathBuf,
    /// Log seconds per wall second; infinity publishes as fast as possible.
    pub speed: f64,
    pub bind: String,
    /// Return once the last frame is published instead of serving on.
    pub exit_when_done: bool,
    pub handle_signals: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub frames: usize,
    pub records: usize,
    pub torn: Vec<PathBuf>,
    pub wall: Duration,
}

/// Serves `opts.log` until the end (with `exit_when_done`) or until `stop`.
pub fn run_replay(
    opts: &ReplayOptions,
    stop: Arc<AtomicBool>,
    on_api: impl FnOnce(SocketAddr),
) -> Result<ReplaySummary, ReplayError> {
    if !(opts.speed > 0.0) {
        return Err(ReplayError::Usage("--speed must be > 0".into()));
    }
    if !opts.log.exists() {
        return Err(ReplayError::Usage(format!("log not found: {}", opts.log.display())));
    }
    let log = load_log(&opts.log)?;
    for p in &log.torn {
        log::warn!("{}: truncated last line skipped", p.display());
    }
    let frames = frames(&log.records);
    let reader = if opts.log.is_file() {
        DataReader::file(&opts.log)
    } else {
        DataReader::new(&opts.log)
    };

    let (tx, rx) = mpsc::channel();
    let state = Arc::new(ApiState::new(ApiMode::Replay, Recipe::tomato(), None, Some(reader), Some(tx)));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| ReplayError::Runtime(e.to_string()))?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(&opts.bind))
        .map_err(|e| ReplayError::Usage(format!("cannot bind API on {}: {e}", opts.bind)))?;
    let addr = listener.local_addr().map_err(|e| ReplayError::Runtime(e.to_string()))?;
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let task = rt.spawn(api::serve(listener, state.clone(), async {
        let _ = stop_rx.await;
    }));
    if opts.handle_signals {
        let flag = stop.clone();
        rt.spawn(async move {
            crate::daemon::wait_for_signal().await;
            flag.store(true, Ordering::SeqCst);
        });
    }
    log::info!("replaying {} periods on http://{addr}", frames.len());
    on_api(addr);

    let started = Instant::now();
    let t0 = frames.first().map(|f| f.t).unwrap_or(0);
    let mut overrides = ControllerState::default();
    let mut current: Option<&Frame> = None;
    let drain = |current: Option<&Frame>, overrides: &mut ControllerState| {
        let now = current.map(|f| f.t as f64).unwrap_or(t0 as f64);
        let mut changed = false;
        while let Ok(msg) = rx.try_recv() {
            match msg {
                ControlMessage::SetRecipe(r) => state.publish_recipe(&r),
                ControlMessage::Override { actuator, level, ttl_s } => {
                    match apply_override(overrides, actuator, level, ttl_s, now) {
                        Ok(next) => {
                            *overrides = next;
                            changed = true;
                        }
                        Err(e) => log::warn!("override rejected: {e}"),
                    }
                }
            }
        }
        if let (true, Some(f)) = (changed, current) {
            state.publish(snapshot(f, overrides));
        }
    };

    for frame in &frames {
        let due = started + Duration::from_secs_f64(((frame.t - t0) as f64 / opts.speed).min(1e9));
        loop {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            drain(current, &mut overrides);
            let now = Instant::now();
            if now >= due {
                break;
            }
            std::thread::sleep((due - now).min(Duration::from_millis(20)));
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
        if let Some(f) = &frame.forecast {
            state.publish_forecast(f.clone());
        }
        state.publish(snapshot(frame, &overrides));
        current = Some(frame);
    }
    let wall = started.elapsed();
    log::info!("replay reached the end of the log after {:.1} s", wall.as_secs_f64());
    while !opts.exit_when_done && !stop.load(Ordering::SeqCst) {
        drain(current, &mut overrides);
        std::thread::sleep(Duration::from_millis(20));
    }

    let _ = stop_tx.send(());
    let _ = rt.block_on(task);
    Ok(ReplaySummary {
        frames: frames.len(),
        records: log.records.len(),
        torn: log.torn,
        wall,
    })
}
