//! Bus clients and the poll/actuate helpers the control loop uses.

use std::io::{self, BufReader, Read, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::time::Duration;

use super::backend::{handle_line, BackendInfo};
use super::protocol::{
    encode_command, parse_response, read_line_capped, BusCommand, BusResponse, EncodeError, ErrCode, LineRead,
    ResponseError, MAX_LINE,
};
use super::server::{Endpoint, SharedBackend};
use crate::telemetry::{Actuator, ActuatorCommandSet, Channel, Reading, ReadingSet};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("bus i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bus command timed out")]
    Timeout,
    #[error("bus closed the connection")]
    Closed,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Response(#[from] ResponseError),
    #[error("device replied ERR {code} {message}")]
    Remote { code: ErrCode, message: String },
    #[error("unexpected reply {0:?}")]
    Unexpected(BusResponse),
}

/// One outstanding command at a time.
pub trait BusClient {
    fn request(&mut self, cmd: &BusCommand) -> Result<BusResponse, BusError>;
}

/// Talks to a backend in the same process through the same text layer the
/// socket transport uses.
pub struct InProcessBus {
    backend: SharedBackend,
}

impl InProcessBus {
    pub fn new(backend: SharedBackend) -> Self {
        InProcessBus { backend }
    }
}

impl BusClient for InProcessBus {
    fn request(&mut self, cmd: &BusCommand) -> Result<BusResponse, BusError> {
        let line = encode_command(cmd)?;
        let reply = {
            let mut guard = self.backend.lock().unwrap_or_else(|p| p.into_inner());
            handle_line(&mut *guard, &line)
        };
        Ok(parse_response(&reply)?)
    }
}

struct Conn {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
}

/// Client over TCP or a unix socket. After a timeout the connection is
/// dropped and reopened on the next request, so a late reply cannot be
/// mistaken for the answer to a later command.
pub struct StreamBus {
    endpoint: Endpoint,
    timeout: Duration,
    conn: Option<Conn>,
    buf: Vec<u8>,
}

impl StreamBus {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, BusError> {
        let mut bus = StreamBus {
            endpoint: endpoint.clone(),
            timeout,
            conn: None,
            buf: Vec::with_capacity(128),
        };
        bus.ensure_connected()?;
        Ok(bus)
    }

    fn open(&self) -> io::Result<Conn> {
        let t = Some(self.timeout);
        let (r, w): (Box<dyn Read + Send>, Box<dyn Write + Send>) = match &self.endpoint {
            Endpoint::Tcp(a) => {
                let s = TcpStream::connect(a)?;
                s.set_nodelay(true)?;
                s.set_read_timeout(t)?;
                s.set_write_timeout(t)?;
                (Box::new(s.try_clone()?), Box::new(s))
            }
            Endpoint::Unix(p) => {
                let s = UnixStream::connect(p)?;
                s.set_read_timeout(t)?;
                s.set_write_timeout(t)?;
                (Box::new(s.try_clone()?), Box::new(s))
            }
        };
        Ok(Conn {
            reader: BufReader::new(r),
            writer: w,
        })
    }

    fn ensure_connected(&mut self) -> Result<&mut Conn, BusError> {
        if self.conn.is_none() {
            self.conn = Some(self.open()?);
        }
        Ok(self.conn.as_mut().expect("just connected"))
    }

    fn exchange(&mut self, line: &str) -> Result<BusResponse, BusError> {
        let mut buf = std::mem::take(&mut self.buf);
        let conn = self.ensure_connected()?;
        let result = (|| {
            conn.writer.write_all(line.as_bytes())?;
            conn.writer.flush()?;
            match read_line_capped(&mut conn.reader, &mut buf, MAX_LINE)? {
                LineRead::Line if buf.ends_with(b"\n") => {
                    let text = String::from_utf8_lossy(&buf);
                    Ok(parse_response(&text)?)
                }
                LineRead::Line | LineRead::Eof => Err(BusError::Closed),
                LineRead::TooLong => Err(ResponseError::Garbled("overlong reply".into()).into()),
            }
        })();
        self.buf = buf;
        match result {
            Err(BusError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                self.conn = None;
                Err(BusError::Timeout)
            }
            Err(e @ (BusError::Io(_) | BusError::Closed)) => {
                self.conn = None;
                Err(e)
            }
            other => other,
        }
    }
}

impl BusClient for StreamBus {
    fn request(&mut self, cmd: &BusCommand) -> Result<BusResponse, BusError> {
        let line = encode_command(cmd)?;
        self.exchange(&line)
    }
}

impl<C: BusClient + ?Sized> BusClient for &mut C {
    fn request(&mut self, cmd: &BusCommand) -> Result<BusResponse, BusError> {
        (**self).request(cmd)
    }
}

impl<C: BusClient + ?Sized> BusClient for Box<C> {
    fn request(&mut self, cmd: &BusCommand) -> Result<BusResponse, BusError> {
        (**self).request(cmd)
    }
}

/// Reads all eight channels into one set stamped `t`. A device-side error
/// on a channel marks only that channel as faulted.
pub fn poll_all<C: BusClient + ?Sized>(client: &mut C, t: i64) -> Result<ReadingSet, BusError> {
    let mut readings = Vec::with_capacity(8);
    for c in Channel::ALL {
        let r = match client.request(&BusCommand::Read(c))? {
            BusResponse::Value(v) => Reading::raw(c, v, t),
            BusResponse::Err { code, message } => {
                if code != ErrCode::Fault {
                    log::warn!("READ {c}: ERR {code} {message}");
                }
                Reading::fault(c, t)
            }
            other => return Err(BusError::Unexpected(other)),
        };
        readings.push(r);
    }
    Ok(ReadingSet::from_readings(t, readings).expect("one reading per channel"))
}

/// Sends one `SET` per actuator.
pub fn apply_commands<C: BusClient + ?Sized>(client: &mut C, cmd: &ActuatorCommandSet) -> Result<(), BusError> {
    for a in Actuator::ALL {
        expect_ok(client.request(&BusCommand::Set(a, cmd.get(a)))?)?;
    }
    Ok(())
}

pub fn ping<C: BusClient + ?Sized>(client: &mut C) -> Result<(), BusError> {
    expect_ok(client.request(&BusCommand::Ping)?)
}

pub fn fetch_info<C: BusClient + ?Sized>(client: &mut C) -> Result<BackendInfo, BusError> {
    match client.request(&BusCommand::Info)? {
        BusResponse::Json(j) => {
            serde_json::from_str(&j).map_err(|e| ResponseError::Garbled(format!("INFO body: {e}")).into())
        }
        BusResponse::Err { code, message } => Err(BusError::Remote { code, message }),
        other => Err(BusError::Unexpected(other)),
    }
}

fn expect_ok(r: BusResponse) -> Result<(), BusError> {
    match r {
        BusResponse::Ok => Ok(()),
        BusResponse::Err { code, message } => Err(BusError::Remote { code, message }),
        other => Err(BusError::Unexpected(other)),
    }
}
