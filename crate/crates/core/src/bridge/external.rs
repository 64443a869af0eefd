use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use super::protocol::{self, decode_response, encode_request, ProtocolError, Response};
use super::{Backend, BackendError};
use crate::repertoire::{Behavior, ParameterSet};

/// Byte stream to a trial runner: a TCP socket, a serial device, or any
/// reader/writer pair (tests use in-memory pipes).
pub struct Transport {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    /// Applies the per-request deadline when the stream supports it.
    set_timeout: Option<Box<dyn Fn(Duration) -> io::Result<()> + Send>>,
}

impl Transport {
    pub fn from_io(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self { reader: Box::new(reader), writer: Box::new(writer), set_timeout: None }
    }

    pub fn tcp(addr: &str) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let control = stream.try_clone()?;
        Ok(Self {
            reader: Box::new(reader),
            writer: Box::new(stream),
            set_timeout: Some(Box::new(move |t| control.set_read_timeout(Some(t)))),
        })
    }

    /// Serial device path; the port must already be configured (baud rate,
    /// raw mode). Read deadlines are left to the device driver.
    pub fn serial(path: &str) -> io::Result<Self> {
        let dev = OpenOptions::new().read(true).write(true).open(path)?;
        let reader = BufReader::new(dev.try_clone()?);
        Ok(Self::from_io(reader, dev))
    }

    /// `host:port` connects over TCP; anything else is opened as a device.
    pub fn open(endpoint: &str) -> io::Result<Self> {
        if endpoint.starts_with('/') || endpoint.starts_with("COM") {
            Self::serial(endpoint)
        } else {
            Self::tcp(endpoint)
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()
    }

    fn receive(&mut self, timeout: Duration) -> Result<String, BackendError> {
        if let Some(set) = &self.set_timeout {
            set(timeout).map_err(|e| BackendError::Io(e.to_string()))?;
        }
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(BackendError::Io("connection closed by runner".into())),
            Ok(_) if !line.ends_with('\n') => Err(BackendError::Io("connection closed mid-line".into())),
            Ok(_) => Ok(line),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(BackendError::Timeout(timeout))
            }
            Err(e) => Err(BackendError::Io(e.to_string())),
        }
    }
}

/// Trial runner reached over the line protocol. Strictly serial.
pub struct ExternalBackend {
    transport: Transport,
    cooldown: bool,
}

impl ExternalBackend {
    pub fn new(transport: Transport) -> Self {
        Self { transport, cooldown: true }
    }

    /// Skip the gate's cooldown wait (loopback runners, tests).
    pub fn without_cooldown(mut self) -> Self {
        self.cooldown = false;
        self
    }

    /// Liveness check; call before a run.
    pub fn ping(&mut self, timeout: Duration) -> Result<(), BackendError> {
        self.transport.send(protocol::PING).map_err(|e| BackendError::Io(e.to_string()))?;
        let line = self.transport.receive(timeout)?;
        if line.trim_end_matches(['\r', '\n']) == protocol::PONG.trim_end() {
            Ok(())
        } else {
            Err(ProtocolError::Malformed { line, reason: "expected PONG".into() }.into())
        }
    }
}

impl Backend for ExternalBackend {
    fn run_trial(&mut self, trial_id: u64, params: ParameterSet, duration_s: f64) -> Result<Behavior, BackendError> {
        let duration_ms = (duration_s * 1000.0).round() as u64;
        let timeout = Duration::from_millis(duration_ms + 15_000);
        self.transport
            .send(&encode_request(trial_id, params, duration_ms))
            .map_err(|e| BackendError::Io(e.to_string()))?;
        let line = self.transport.receive(timeout)?;
        match decode_response(&line, trial_id)? {
            Response::Behavior { behavior, .. } => Ok(behavior),
            Response::Error { code, message, .. } => Err(BackendError::Remote { code, message }),
        }
    }

    fn needs_cooldown(&self) -> bool {
        self.cooldown
    }
}

/// Runner side of the protocol: answer `PING` and `EVAL` lines until the
/// peer hangs up. `run` returns the behavior or an `(code, message)` error.
pub fn serve_lines<R, W, F>(reader: R, mut writer: W, mut run: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(u64, ParameterSet, u64) -> Result<Behavior, (i64, String)>,
{
    for line in reader.lines() {
        let line = line?;
        let reply = if line.trim_end() == "PING" {
            protocol::PONG.to_string()
        } else {
            match protocol::decode_request(&line) {
                Ok(req) => match run(req.trial_id, req.params, req.duration_ms) {
                    Ok(b) => protocol::encode_behavior(req.trial_id, &b),
                    Err((code, msg)) => protocol::encode_error(req.trial_id, code, &msg),
                },
                Err(e) => protocol::encode_error(0, 1, &e.to_string()),
            }
        };
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
