//! Newline-delimited ASCII messages between the search host and a trial
//! runner. One request is outstanding at a time.
//!
//! ```text
//! host   -> runner   EVAL <trial_id> <f1> <f2> <f3> <duration_ms>
//! runner -> host     BEH <trial_id> <dx_mm> <dy_mm> <dpsi_deg>
//! runner -> host     ERR <trial_id> <code> <message...>
//! host   -> runner   PING
//! runner -> host     PONG
//! ```
//!
//! Floats carry at most three decimals. Every line ends with a single LF.

use crate::repertoire::{quantize, Behavior, ParameterSet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed line {line:?}: {reason}")]
    Malformed { line: String, reason: String },
    #[error("response for trial {got} while trial {expected} is outstanding")]
    TrialMismatch { expected: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRequest {
    pub trial_id: u64,
    pub params: ParameterSet,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Behavior { trial_id: u64, behavior: Behavior },
    Error { trial_id: u64, code: i64, message: String },
}

impl Response {
    pub fn trial_id(&self) -> u64 {
        match self {
            Response::Behavior { trial_id, .. } | Response::Error { trial_id, .. } => *trial_id,
        }
    }
}

pub const PING: &str = "PING\n";
pub const PONG: &str = "PONG\n";

pub fn encode_request(trial_id: u64, p: ParameterSet, duration_ms: u64) -> String {
    format!("EVAL {trial_id} {} {} {} {duration_ms}\n", p.f1, p.f2, p.f3)
}

pub fn encode_behavior(trial_id: u64, b: &Behavior) -> String {
    let b = b.quantized();
    format!("BEH {trial_id} {:.3} {:.3} {:.3}\n", b.dx, b.dy, b.dpsi)
}

/// Newlines in `message` are replaced by spaces to keep the frame intact.
pub fn encode_error(trial_id: u64, code: i64, message: &str) -> String {
    let clean: String = message.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }).collect();
    format!("ERR {trial_id} {code} {clean}\n")
}

fn strip(line: &str) -> &str {
    let line = line.strip_suffix('\n').unwrap_or(line);
    line.strip_suffix('\r').unwrap_or(line)
}

fn malformed(line: &str, reason: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed { line: line.to_string(), reason: reason.into() }
}

fn uint<T: std::str::FromStr>(line: &str, tok: Option<&str>, what: &str) -> Result<T, ProtocolError> {
    let tok = tok.ok_or_else(|| malformed(line, format!("missing {what}")))?;
    if tok.is_empty() || !tok.bytes().all(|c| c.is_ascii_digit()) {
        return Err(malformed(line, format!("{what} `{tok}` is not an unsigned integer")));
    }
    tok.parse().map_err(|_| malformed(line, format!("{what} `{tok}` out of range")))
}

/// Decimal with optional sign and at most three fractional digits.
fn decimal(line: &str, tok: Option<&str>, what: &str) -> Result<f64, ProtocolError> {
    let tok = tok.ok_or_else(|| malformed(line, format!("missing {what}")))?;
    let digits = tok.strip_prefix('-').unwrap_or(tok);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let ok = !int.is_empty()
        && int.bytes().all(|c| c.is_ascii_digit())
        && frac.is_none_or(|f| (1..=3).contains(&f.len()) && f.bytes().all(|c| c.is_ascii_digit()));
    if !ok {
        return Err(malformed(line, format!("{what} `{tok}` is not a decimal with at most 3 places")));
    }
    tok.parse::<f64>().map(quantize).map_err(|_| malformed(line, format!("{what} `{tok}`")))
}

pub fn decode_request(line: &str) -> Result<EvalRequest, ProtocolError> {
    let body = strip(line);
    let mut it = body.split(' ');
    if it.next() != Some("EVAL") {
        return Err(malformed(line, "expected EVAL"));
    }
    let trial_id = uint(line, it.next(), "trial id")?;
    let f1 = uint(line, it.next(), "f1")?;
    let f2 = uint(line, it.next(), "f2")?;
    let f3 = uint(line, it.next(), "f3")?;
    let duration_ms = uint(line, it.next(), "duration")?;
    if it.next().is_some() {
        return Err(malformed(line, "trailing fields"));
    }
    Ok(EvalRequest { trial_id, params: ParameterSet::new(f1, f2, f3), duration_ms })
}

/// Parse any runner response without checking the trial id.
pub fn parse_response(line: &str) -> Result<Response, ProtocolError> {
    let body = strip(line);
    let mut it = body.split(' ');
    match it.next() {
        Some("BEH") => {
            let trial_id = uint(line, it.next(), "trial id")?;
            let dx = decimal(line, it.next(), "dx")?;
            let dy = decimal(line, it.next(), "dy")?;
            let dpsi = decimal(line, it.next(), "dpsi")?;
            if it.next().is_some() {
                return Err(malformed(line, "trailing fields"));
            }
            Ok(Response::Behavior { trial_id, behavior: Behavior::new(dx, dy, dpsi) })
        }
        Some("ERR") => {
            let trial_id = uint(line, it.next(), "trial id")?;
            let code_tok = it.next().ok_or_else(|| malformed(line, "missing error code"))?;
            let code = code_tok
                .parse::<i64>()
                .map_err(|_| malformed(line, format!("error code `{code_tok}`")))?;
            let message = it.collect::<Vec<_>>().join(" ");
            Ok(Response::Error { trial_id, code, message })
        }
        _ => Err(malformed(line, "expected BEH or ERR")),
    }
}

/// Parse the response to the outstanding request `expected`.
pub fn decode_response(line: &str, expected: u64) -> Result<Response, ProtocolError> {
    let r = parse_response(line)?;
    if r.trial_id() != expected {
        return Err(ProtocolError::TrialMismatch { expected, got: r.trial_id() });
    }
    Ok(r)
}
