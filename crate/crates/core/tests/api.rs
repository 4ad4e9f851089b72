//! The HTTP API against a live in-process loop, over a real socket.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use farmctl::config::Config;
use farmctl::control::Recipe;
use farmctl::daemon::{run, RunOptions, RunSummary};
use serde_json::Value;

struct Live {
    url: String,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<RunSummary>>,
    _dir: tempfile::TempDir,
}

impl Live {
    fn start() -> Live {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::default();
        config.api.bind = "127.0.0.1:0".into();
        config.data_dir = dir.path().join("data");
        config.control.period_ms = 20;
        config.control.forecast_every_s = 5.0;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            let opts = RunOptions {
                config,
                embedded_sim: true,
                max_ticks: None,
                handle_signals: false,
            };
            run(opts, flag, |addr| tx.send(addr).unwrap()).unwrap()
        });
        let addr = rx.recv_timeout(Duration::from_secs(10)).unwrap();
        Live {
            url: format!("http://{addr}"),
            stop,
            handle: Some(handle),
            _dir: dir,
        }
    }

    fn stop(mut self) -> RunSummary {
        self.stop.store(true, Ordering::SeqCst);
        self.handle.take().unwrap().join().unwrap()
    }

    fn send(&self, method: &str, path: &str, body: Option<&str>) -> (u16, Value) {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(5)))
            .build()
            .into();
        let url = format!("{}{path}", self.url);
        let mut resp = match (method, body) {
            ("GET", _) => agent.get(&url).call(),
            ("PUT", Some(b)) => agent.put(&url).content_type("application/json").send(b),
            ("POST", Some(b)) => agent.post(&url).content_type("application/json").send(b),
            _ => unreachable!(),
        }
        .unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (u16, Value) {
        self.send("GET", path, None)
    }

    fn wait_for(&self, path: &str, what: &str, ok: impl Fn(&Value) -> bool) -> Value {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let (status, body) = self.get(path);
            if status == 200 && ok(&body) {
                return body;
            }
            assert!(Instant::now() < deadline, "{what}: last {status} {body}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

fn fields(body: &Value) -> Vec<String> {
    assert_eq!(body["error"], "validation", "{body}");
    body["detail"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn state_and_info_are_served() {
    let live = Live::start();
    let (status, info) = live.get("/api/info");
    assert_eq!(status, 200);
    assert_eq!(info["mode"], "live");
    let state = live.wait_for("/api/state", "state", |s| s["t"].as_f64() >= Some(3.0));
    assert_eq!(state["readings"]["readings"].as_array().unwrap().len(), 8);
    assert_eq!(live.get("/api/nowhere").0, 404);
    assert_eq!(live.get("/api/model").0, 404);
    let forecast = live.wait_for("/api/forecast", "forecast", |_| true);
    assert!(forecast.get("stage").is_some());
    let summary = live.stop();
    assert!(summary.ticks >= 4);
}

#[test]
fn override_reaches_the_actuators() {
    let live = Live::start();
    live.wait_for("/api/state", "first tick", |_| true);
    let (status, _) = live.send("POST", "/api/override", Some(r#"{"actuator":"fan","level":1,"ttl_s":3600}"#));
    assert_eq!(status, 200);
    let state = live.wait_for("/api/state", "override applied", |s| s["cmd"]["fan"] == 1.0);
    assert_eq!(state["overrides"][0]["actuator"], "fan");

    let (status, body) = live.send("POST", "/api/override", Some(r#"{"actuator":"pump","level":0.5,"ttl_s":-1}"#));
    assert_eq!(status, 422);
    assert_eq!(fields(&body), ["level", "ttl_s"]);
    let (status, body) = live.send("POST", "/api/override", Some(r#"{"actuator":"warp","level":0,"ttl_s":5}"#));
    assert_eq!(status, 422);
    assert_eq!(fields(&body), ["actuator"]);
    assert_eq!(live.send("POST", "/api/override", Some("[")).0, 400);
    live.stop();
}

#[test]
fn recipe_round_trip() {
    let live = Live::start();
    live.wait_for("/api/state", "first tick", |_| true);
    let (status, current) = live.get("/api/recipe");
    assert_eq!(status, 200);
    assert_eq!(current, serde_json::to_value(Recipe::tomato()).unwrap());

    let mut edited = Recipe::tomato();
    edited.germination.air_temp.setpoint += 1.0;
    let body = serde_json::to_string(&edited).unwrap();
    assert_eq!(live.send("PUT", "/api/recipe", Some(&body)).0, 200);
    let expected = serde_json::to_value(&edited).unwrap();
    live.wait_for("/api/recipe", "recipe applied", |r| *r == expected);

    let mut bad = edited.clone();
    bad.germination.air_temp.deadband = -1.0;
    let (status, body) = live.send("PUT", "/api/recipe", Some(&serde_json::to_string(&bad).unwrap()));
    assert_eq!(status, 422);
    assert!(fields(&body).contains(&"germination.air_temp.deadband".to_string()));
    assert_eq!(live.get("/api/recipe").1, expected);
    live.stop();
}

#[test]
fn history_grows_with_the_loop() {
    let live = Live::start();
    let body = live.wait_for("/api/history?channel=air_temp&from=0&to=100000", "history", |h| {
        h["points"].as_array().is_some_and(|p| p.len() >= 5)
    });
    let ts: Vec<i64> = body["points"].as_array().unwrap().iter().map(|p| p["t"].as_i64().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]), "{ts:?}");
    assert_eq!(live.get("/api/history?channel=nonsense").0, 400);
    assert_eq!(live.get("/api/history?channel=ph&from=9&to=1").0, 400);
    live.stop();
}
