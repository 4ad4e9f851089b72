//! Socket server: one thread per connection, backend access serialized by a mutex.

use std::fmt;
use std::io::{self, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::backend::{handle_line, DeviceBackend};
use super::protocol::{read_line_capped, LineRead, MAX_LINE};

pub type SharedBackend = Arc<Mutex<dyn DeviceBackend>>;

pub fn shared<B: DeviceBackend + 'static>(backend: B) -> Arc<Mutex<B>> {
    Arc::new(Mutex::new(backend))
}

/// Where a bus listens: `host:port`, `tcp://host:port`, or `unix:/path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(p) = s.strip_prefix("unix:") {
            if p.is_empty() {
                return Err("empty unix socket path".into());
            }
            return Ok(Endpoint::Unix(PathBuf::from(p)));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.rsplit_once(':').is_none_or(|(_, port)| port.parse::<u16>().is_err()) {
            return Err(format!("endpoint {s:?} is neither host:port nor unix:/path"));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

enum Listener {
    Tcp(TcpListener),
    Unix(UnixListener),
}

/// A running bus server. Stops accepting when dropped.
pub struct BusServer {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BusServer {
    /// Binds and starts accepting. A TCP port of 0 picks a free port; see
    /// [`BusServer::endpoint`] for the bound address.
    pub fn start(endpoint: &Endpoint, backend: SharedBackend) -> io::Result<BusServer> {
        let (listener, bound) = match endpoint {
            Endpoint::Tcp(a) => {
                let l = TcpListener::bind(a)?;
                let bound = Endpoint::Tcp(l.local_addr()?.to_string());
                (Listener::Tcp(l), bound)
            }
            Endpoint::Unix(p) => {
                if p.exists() {
                    std::fs::remove_file(p)?;
                }
                (Listener::Unix(UnixListener::bind(p)?), endpoint.clone())
            }
        };
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new()
            .name("bus-accept".into())
            .spawn(move || accept_loop(listener, backend, flag))?;
        Ok(BusServer {
            endpoint: bound,
            stop,
            accept: Some(accept),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        let Some(h) = self.accept.take() else { return };
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        match &self.endpoint {
            Endpoint::Tcp(a) => drop(TcpStream::connect(a)),
            Endpoint::Unix(p) => drop(UnixStream::connect(p)),
        }
        let _ = h.join();
        if let Endpoint::Unix(p) = &self.endpoint {
            let _ = std::fs::remove_file(p);
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn accept_loop(listener: Listener, backend: SharedBackend, stop: Arc<AtomicBool>) {
    loop {
        let conn: io::Result<(Box<dyn Read + Send>, Box<dyn Write + Send>)> = match &listener {
            Listener::Tcp(l) => l.accept().and_then(|(s, _)| {
                s.set_nodelay(true)?;
                Ok((Box::new(s.try_clone()?) as Box<dyn Read + Send>, Box::new(s) as Box<dyn Write + Send>))
            }),
            Listener::Unix(l) => l
                .accept()
                .and_then(|(s, _)| Ok((Box::new(s.try_clone()?) as Box<dyn Read + Send>, Box::new(s) as Box<dyn Write + Send>))),
        };
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match conn {
            Ok((r, w)) => {
                let backend = backend.clone();
                let spawned = thread::Builder::new()
                    .name("bus-conn".into())
                    .spawn(move || {
                        if let Err(e) = serve_connection(r, w, &backend) {
                            log::debug!("bus connection closed: {e}");
                        }
                    });
                if let Err(e) = spawned {
                    log::warn!("bus: cannot spawn connection thread: {e}");
                }
            }
            Err(e) => log::warn!("bus accept failed: {e}"),
        }
    }
}

/// Answers requests on one connection, strictly in order, until EOF.
pub fn serve_connection(r: impl Read, mut w: impl Write, backend: &SharedBackend) -> io::Result<()> {
    let mut reader = BufReader::new(r);
    let mut buf = Vec::with_capacity(128);
    loop {
        let reply = match read_line_capped(&mut reader, &mut buf, MAX_LINE)? {
            LineRead::Eof => return Ok(()),
            LineRead::TooLong => "ERR BADCMD line too long\n".to_string(),
            LineRead::Line => match std::str::from_utf8(&buf) {
                Ok(line) => {
                    let mut guard = backend.lock().unwrap_or_else(|p| p.into_inner());
                    handle_line(&mut *guard, line)
                }
                Err(_) => "ERR BADCMD line is not valid UTF-8\n".to_string(),
            },
        };
        w.write_all(reply.as_bytes())?;
        w.flush()?;
    }
}
