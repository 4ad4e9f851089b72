//! Line protocol spoken between the controller and a device backend.
//!
//! ```text
//! READ <channel>            OK <decimal> | ERR FAULT <channel> | ERR BADCHAN ...
//! SET <actuator> <decimal>  OK | ERR BADVAL ...
//! PING                      OK
//! INFO                      OK <json>
//! ```

use std::fmt;
use std::io::{self, BufRead};
use std::str::FromStr;

use crate::telemetry::{Actuator, Channel};

/// Longest accepted line, newline included.
pub const MAX_LINE: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusCommand {
    Read(Channel),
    Set(Actuator, f64),
    Ping,
    Info,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrCode {
    BadCmd,
    BadChan,
    BadVal,
    Fault,
}

impl ErrCode {
    pub const ALL: [ErrCode; 4] = [ErrCode::BadCmd, ErrCode::BadChan, ErrCode::BadVal, ErrCode::Fault];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrCode::BadCmd => "BADCMD",
            ErrCode::BadChan => "BADCHAN",
            ErrCode::BadVal => "BADVAL",
            ErrCode::Fault => "FAULT",
        }
    }
}

impl fmt::Display for ErrCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        ErrCode::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BusResponse {
    Ok,
    Value(f64),
    /// Single-line JSON body of an INFO reply.
    Json(String),
    Err { code: ErrCode, message: String },
}

impl BusResponse {
    pub fn err(code: ErrCode, message: impl Into<String>) -> Self {
        BusResponse::Err {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("{actuator} does not accept level {level}")]
    Level { actuator: Actuator, level: f64 },
    #[error("response text must not contain line breaks")]
    Multiline,
    #[error("value {0} is not finite")]
    NonFinite(f64),
}

/// A response line that could not be understood on the client side.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResponseError {
    /// Treated as a local BADCMD.
    #[error("unrecognized response {0:?}")]
    Garbled(String),
    #[error("malformed decimal {0:?}")]
    BadDecimal(String),
}

impl ResponseError {
    pub fn code(&self) -> ErrCode {
        match self {
            ResponseError::Garbled(_) => ErrCode::BadCmd,
            ResponseError::BadDecimal(_) => ErrCode::BadVal,
        }
    }
}

/// Whether `s` matches `[+-]? (digits [. digits?] | . digits) ([eE] [+-]? digits)?`.
pub fn is_decimal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    let digits = |i: &mut usize| {
        let start = *i;
        while *i < b.len() && b[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - start
    };
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int = digits(&mut i);
    let mut frac = 0;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        frac = digits(&mut i);
    }
    if int + frac == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        if digits(&mut i) == 0 {
            return false;
        }
    }
    i == b.len()
}

/// Parses a protocol decimal. Rejects anything that overflows to infinity.
pub fn parse_decimal(s: &str) -> Option<f64> {
    if !is_decimal(s) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_decimal(v: f64) -> String {
    // Display never emits an exponent and is round-trip exact
    let s = format!("{v}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn encode_command(c: &BusCommand) -> Result<String, EncodeError> {
    Ok(match c {
        BusCommand::Read(ch) => format!("READ {ch}\n"),
        BusCommand::Set(a, level) => {
            if !a.accepts(*level) {
                return Err(EncodeError::Level {
                    actuator: *a,
                    level: *level,
                });
            }
            format!("SET {a} {}\n", format_decimal(*level))
        }
        BusCommand::Ping => "PING\n".into(),
        BusCommand::Info => "INFO\n".into(),
    })
}

fn strip_eol(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}

/// Server side: parses one request line. The error is what to send back.
pub fn parse_command(line: &str) -> Result<BusCommand, BusResponse> {
    let line = strip_eol(line);
    let mut parts = line.split(' ');
    let verb = parts.next().unwrap_or("");
    let args: Vec<&str> = parts.collect();
    match (verb, args.as_slice()) {
        ("PING", []) => Ok(BusCommand::Ping),
        ("INFO", []) => Ok(BusCommand::Info),
        ("READ", [ch]) => ch
            .parse::<Channel>()
            .map(BusCommand::Read)
            .map_err(|_| BusResponse::err(ErrCode::BadChan, "no such channel")),
        ("SET", [a, v]) => {
            let a = a
                .parse::<Actuator>()
                .map_err(|_| BusResponse::err(ErrCode::BadChan, "no such actuator"))?;
            let level = parse_decimal(v).ok_or_else(|| BusResponse::err(ErrCode::BadVal, "malformed decimal"))?;
            if !a.accepts(level) {
                return Err(BusResponse::err(ErrCode::BadVal, format!("level out of bounds for {a}")));
            }
            Ok(BusCommand::Set(a, level))
        }
        _ => Err(BusResponse::err(ErrCode::BadCmd, "unknown command")),
    }
}

pub fn encode_response(r: &BusResponse) -> Result<String, EncodeError> {
    Ok(match r {
        BusResponse::Ok => "OK\n".into(),
        BusResponse::Value(v) if v.is_finite() => format!("OK {}\n", format_decimal(*v)),
        BusResponse::Value(v) => return Err(EncodeError::NonFinite(*v)),
        BusResponse::Json(j) if j.contains(['\n', '\r']) => return Err(EncodeError::Multiline),
        BusResponse::Json(j) => format!("OK {j}\n"),
        BusResponse::Err { message, .. } if message.contains(['\n', '\r']) => return Err(EncodeError::Multiline),
        BusResponse::Err { code, message } if message.is_empty() => format!("ERR {code}\n"),
        BusResponse::Err { code, message } => format!("ERR {code} {message}\n"),
    })
}

/// Client side: parses one response line.
pub fn parse_response(line: &str) -> Result<BusResponse, ResponseError> {
    let body = strip_eol(line);
    if body == "OK" {
        return Ok(BusResponse::Ok);
    }
    if let Some(rest) = body.strip_prefix("OK ") {
        if rest.starts_with('{') {
            return Ok(BusResponse::Json(rest.to_string()));
        }
        return parse_decimal(rest)
            .map(BusResponse::Value)
            .ok_or_else(|| ResponseError::BadDecimal(rest.to_string()));
    }
    if let Some(rest) = body.strip_prefix("ERR ") {
        let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
        if let Ok(code) = code.parse::<ErrCode>() {
            return Ok(BusResponse::Err {
                code,
                message: message.to_string(),
            });
        }
    }
    Err(ResponseError::Garbled(body.chars().take(80).collect()))
}

#[derive(Debug, PartialEq, Eq)]
pub enum LineRead {
    Line,
    /// The line exceeded [`MAX_LINE`]; its remainder was skipped.
    TooLong,
    Eof,
}

/// Reads one `\n`-terminated line into `buf`, at most `max` bytes. An
/// overlong line is discarded up to and including its newline.
pub fn read_line_capped<R: BufRead>(r: &mut R, buf: &mut Vec<u8>, max: usize) -> io::Result<LineRead> {
    buf.clear();
    let mut overflow = false;
    loop {
        let chunk = match r.fill_buf() {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        if chunk.is_empty() {
            return Ok(if overflow {
                LineRead::TooLong
            } else if buf.is_empty() {
                LineRead::Eof
            } else {
                LineRead::Line
            });
        }
        let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        if !overflow {
            if buf.len() + take > max {
                overflow = true;
                buf.clear();
            } else {
                buf.extend_from_slice(&chunk[..take]);
            }
        }
        r.consume(take);
        if done {
            return Ok(if overflow { LineRead::TooLong } else { LineRead::Line });
        }
    }
}
