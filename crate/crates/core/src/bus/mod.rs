//! Device bus: a line-oriented text protocol between the controller and a
//! device backend, served over TCP or a unix socket, or called in-process.

mod backend;
mod client;
mod protocol;
mod server;

pub use backend::{dispatch, handle_line, BackendError, BackendInfo, DeviceBackend, SimBackend, SimBackendConfig};
pub use client::{
    apply_commands, fetch_info, ping, poll_all, BusClient, BusError, InProcessBus, StreamBus, DEFAULT_TIMEOUT,
};
pub use protocol::{
    encode_command, encode_response, format_decimal, is_decimal, parse_command, parse_decimal, parse_response,
    read_line_capped, BusCommand, BusResponse, EncodeError, ErrCode, LineRead, ResponseError, MAX_LINE,
};
pub use server::{serve_connection, shared, BusServer, Endpoint, SharedBackend};
