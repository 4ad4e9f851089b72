//! The deployed loop: poll the bus, decide, actuate, log, publish to the API.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::api::{self, ApiMode, ApiState, StateSnapshot};
use crate::bus::{
    apply_commands, fetch_info, poll_all, BusClient, BusServer, Endpoint, InProcessBus, SimBackend, StreamBus,
    DEFAULT_TIMEOUT,
};
use crate::compensation::CompModel;
use crate::config::Config;
use crate::control::{Controller, Recipe};
use crate::datastore::{Datastore, Event};
use crate::telemetry::{Channel, Reading, ReadingSet, SimClock};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Bad configuration or missing inputs: exit code 2.
    #[error("{0}")]
    Startup(String),
    /// Failure after startup: exit code 1.
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Startup(_) => 2,
            RunError::Runtime(_) => 1,
        }
    }
}

pub struct RunOptions {
    pub config: Config,
    pub embedded_sim: bool,
    /// Stop after this many control periods.
    pub max_ticks: Option<u64>,
    /// Install SIGINT/SIGTERM handlers that request a clean stop.
    pub handle_signals: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub ticks: u64,
    pub last_t: f64,
    pub records: u64,
}

/// Loads the recipe and model named by the config.
pub fn load_inputs(cfg: &Config) -> Result<(Recipe, Option<CompModel>), RunError> {
    let recipe = match &cfg.recipe_path {
        Some(p) if !p.exists() => {
            return Err(RunError::Startup(format!("recipe file not found: {}", p.display())));
        }
        Some(p) => Recipe::load(p).map_err(|e| RunError::Startup(format!("{}: {e}", p.display())))?,
        None => Recipe::tomato(),
    };
    let model = match &cfg.model_path {
        Some(p) if !p.exists() => {
            return Err(RunError::Startup(format!("model file not found: {}", p.display())));
        }
        Some(p) => Some(CompModel::load(p).map_err(|e| RunError::Startup(format!("{}: {e}", p.display())))?),
        None => None,
    };
    Ok((recipe, model))
}

fn all_fault(t: i64) -> ReadingSet {
    ReadingSet::from_readings(t, Channel::ALL.map(|c| Reading::fault(c, t))).expect("complete set")
}

/// Runs until `stop` is set (or `max_ticks` is reached). `on_api` receives the
/// bound API address once the server listens.
pub fn run(opts: RunOptions, stop: Arc<AtomicBool>, on_api: impl FnOnce(SocketAddr)) -> Result<RunSummary, RunError> {
    let cfg = &opts.config;
    cfg.validate().map_err(|e| RunError::Startup(e.to_string()))?;
    let (recipe, model) = load_inputs(cfg)?;
    let mut store =
        Datastore::open(&cfg.data_dir).map_err(|e| RunError::Startup(format!("data_dir: {e}")))?;

    let endpoint: Option<Endpoint> = match &cfg.bus.endpoint {
        Some(e) => Some(e.parse().map_err(RunError::Startup)?),
        None => None,
    };
    let mut sim: Option<Arc<Mutex<SimBackend>>> = None;
    let mut _bus_server: Option<BusServer> = None;
    let mut client: Box<dyn BusClient> = if opts.embedded_sim {
        let backend = SimBackend::new(cfg.sim.clone()).map_err(|e| RunError::Startup(format!("sim: {e}")))?;
        let shared = Arc::new(Mutex::new(backend));
        if let Some(ep) = &endpoint {
            let server = BusServer::start(ep, shared.clone())
                .map_err(|e| RunError::Startup(format!("cannot serve bus on {ep}: {e}")))?;
            log::info!("simulator exposed on {}", server.endpoint());
            _bus_server = Some(server);
        }
        sim = Some(shared.clone());
        Box::new(InProcessBus::new(shared))
    } else {
        let ep = endpoint.ok_or_else(|| {
            RunError::Startup("bus.endpoint is required unless --embedded-sim is given".into())
        })?;
        Box::new(
            StreamBus::connect(&ep, DEFAULT_TIMEOUT)
                .map_err(|e| RunError::Startup(format!("cannot reach bus at {ep}: {e}")))?,
        )
    };

    let (tx, rx) = mpsc::channel();
    let api_state = Arc::new(ApiState::new(
        ApiMode::Live,
        recipe.clone(),
        model.clone(),
        Some(store.reader()),
        Some(tx),
    ));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| RunError::Runtime(e.into()))?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(&cfg.api.bind))
        .map_err(|e| RunError::Startup(format!("cannot bind API on {}: {e}", cfg.api.bind)))?;
    let api_addr = listener.local_addr().map_err(|e| RunError::Runtime(e.into()))?;
    let (api_stop_tx, api_stop_rx) = tokio::sync::oneshot::channel::<()>();
    let api_task = rt.spawn(api::serve(listener, api_state.clone(), async {
        let _ = api_stop_rx.await;
    }));
    if opts.handle_signals {
        let flag = stop.clone();
        rt.spawn(async move {
            wait_for_signal().await;
            flag.store(true, Ordering::SeqCst);
        });
    }
    log::info!("api listening on http://{api_addr}");
    on_api(api_addr);

    let mut ctl = Controller::new(recipe, model);
    let period = Duration::from_millis(cfg.control.period_ms);
    let started = Instant::now();
    let mut next_deadline = started;
    let mut ticks = 0u64;
    let mut last_t = 0.0;
    let mut last_forecast_t = f64::NEG_INFINITY;
    let mut active_alarms: Vec<String> = Vec::new();
    let mut forecast = None;
    let records_before = store.next_seq();

    while !stop.load(Ordering::SeqCst) && opts.max_ticks.is_none_or(|m| ticks < m) {
        let fallback_t = ticks as f64 * period.as_secs_f64();
        while let Ok(msg) = rx.try_recv() {
            if let Err(e) = ctl.apply(msg, last_t) {
                log::warn!("rejected control message: {e}");
            }
        }
        if let Some(sim) = &sim {
            if ticks > 0 {
                let mut s = sim.lock().unwrap_or_else(|p| p.into_inner());
                s.advance(cfg.control.sim_dt_s).map_err(|e| RunError::Runtime(e.into()))?;
            }
        }
        let info = fetch_info(&mut client)
            .map_err(|e| log::warn!("INFO failed: {e}"))
            .ok();
        let clock = SimClock::new(info.as_ref().and_then(|i| i.t).unwrap_or(fallback_t));
        let raw = poll_all(&mut client, clock.timestamp()).unwrap_or_else(|e| {
            log::warn!("poll failed: {e}");
            all_fault(clock.timestamp())
        });
        let rec = ctl.step(&raw, &clock, info.and_then(|i| i.ambient_c)).clone();
        if let Err(e) = apply_commands(&mut client, &rec.cmd) {
            log::warn!("actuation failed: {e}");
        }

        let mut log_event = |e: Event| {
            if let Err(err) = store.append(e) {
                log::error!("datastore: {err}");
            }
        };
        for r in rec.readings.iter() {
            log_event(Event::Reading(*r));
        }
        log_event(Event::Command(rec.cmd));
        let alarms: Vec<String> = rec.alarms.iter().map(|a| a.0.clone()).collect();
        for a in alarms.iter().filter(|a| !active_alarms.contains(a)) {
            log::warn!("alarm raised: {a}");
            log_event(Event::Alarm {
                t: clock.timestamp(),
                alarm: a.clone(),
            });
        }
        active_alarms = alarms;
        if clock.t - last_forecast_t >= cfg.control.forecast_every_s {
            let f = ctl.forecast();
            log_event(Event::Forecast {
                t: clock.timestamp(),
                forecast: f.clone(),
            });
            api_state.publish_forecast(f.clone());
            forecast = Some(f);
            last_forecast_t = clock.t;
        }
        if let Err(e) = store.flush() {
            log::error!("datastore flush: {e}");
        }
        api_state.publish(StateSnapshot::from_tick(&rec, &ctl.state().overrides, forecast.clone()));
        api_state.publish_recipe(ctl.recipe());

        ticks += 1;
        last_t = clock.t;
        next_deadline += period;
        let now = Instant::now();
        if next_deadline > now {
            sleep_unless_stopped(next_deadline - now, &stop);
        } else {
            next_deadline = now;
        }
    }

    store.flush().map_err(|e| RunError::Runtime(e.into()))?;
    let records = store.next_seq() - records_before;
    drop(store);
    let _ = api_stop_tx.send(());
    let _ = rt.block_on(api_task);
    log::info!("stopped after {ticks} periods");
    Ok(RunSummary { ticks, last_t, records })
}

fn sleep_unless_stopped(d: Duration, stop: &AtomicBool) {
    let end = Instant::now() + d;
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= end {
            return;
        }
        std::thread::sleep((end - now).min(Duration::from_millis(20)));
    }
}

/// Resolves on SIGINT or SIGTERM.
pub async fn wait_for_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = match signal(SignalKind::terminate()) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("cannot watch SIGTERM: {e}");
            let _ = tokio::signal::ctrl_c().await;
            return;
        }
    };
    tokio::select! {
        _ = term.recv() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::replay;

    fn test_config(dir: &std::path::Path) -> Config {
        let mut cfg = Config::default();
        cfg.api.bind = "127.0.0.1:0".into();
        cfg.data_dir = dir.join("data");
        cfg.control.period_ms = 1;
        cfg
    }

    #[test]
    fn embedded_loop_logs_every_period() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            config: test_config(dir.path()),
            embedded_sim: true,
            max_ticks: Some(30),
            handle_signals: false,
        };
        let summary = run(opts, Arc::new(AtomicBool::new(false)), |_| {}).unwrap();
        assert_eq!(summary.ticks, 30);
        assert_eq!(summary.last_t, 29.0);
        let recs = replay(&dir.path().join("data")).unwrap();
        assert_eq!(recs.len() as u64, summary.records);
        // 8 readings + 1 command per period, plus the first forecast
        assert_eq!(summary.records, 30 * 9 + 1);
    }

    #[test]
    fn missing_recipe_is_a_startup_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.recipe_path = Some(dir.path().join("nope.json"));
        let opts = RunOptions {
            config: cfg,
            embedded_sim: true,
            max_ticks: Some(1),
            handle_signals: false,
        };
        let err = run(opts, Arc::new(AtomicBool::new(false)), |_| {}).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope.json"), "{err}");
    }

    #[test]
    fn external_bus_without_endpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            config: test_config(dir.path()),
            embedded_sim: false,
            max_ticks: Some(1),
            handle_signals: false,
        };
        assert_eq!(run(opts, Arc::new(AtomicBool::new(false)), |_| {}).unwrap_err().exit_code(), 2);
    }
}
