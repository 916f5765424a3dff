//! Line codec for negotiation frames.
//!
//! Every frame is one line `VERB arg1 arg2 ...\r\n` with uppercase verbs and
//! single-space separators. `DATA n` is followed by exactly `n` raw body
//! bytes. Arguments documented as "rest of line" (query documents and
//! reasons) extend to the CRLF and may contain spaces.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codes::ResponseCode;
use crate::model::{MessageMeta, PaymentToken, SenderProfile};

pub const MAX_LINE_BYTES: usize = 64 * 1024;
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("io: {0}")]
    Io(String),
}

impl ProtocolError {
    pub fn violation(msg: impl Into<String>) -> Self {
        ProtocolError::Violation(msg.into())
    }

    pub fn code(&self) -> ResponseCode {
        ResponseCode::ProtocolViolation
    }
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ProtocolError::Violation("unexpected end of stream".into())
        } else {
            ProtocolError::Io(e.to_string())
        }
    }
}

/// Argument of `QUERY`: what the sender wants and what it is sending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDocument {
    pub profile: SenderProfile,
    pub message: MessageMeta,
    /// Hex MAC over the body digest under the sender's registered secret.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authenticator: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeliveryState {
    /// Sent by a client asking for a message's state.
    Query,
    Queued,
    Delivered,
    Unknown,
}

impl DeliveryState {
    fn as_str(self) -> &'static str {
        match self {
            DeliveryState::Query => "QUERY",
            DeliveryState::Queued => "QUEUED",
            DeliveryState::Delivered => "DELIVERED",
            DeliveryState::Unknown => "UNKNOWN",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "QUERY" => DeliveryState::Query,
            "QUEUED" => DeliveryState::Queued,
            "DELIVERED" => DeliveryState::Delivered,
            "UNKNOWN" => DeliveryState::Unknown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello { sender_id: String },
    Query(Box<QueryDocument>),
    Quote { cos_id: String, price: f64, available: bool },
    NoCos { reason: String },
    Pay { token: PaymentToken },
    Data { body: Vec<u8> },
    Accepted { message_id: String },
    Rejected { code: ResponseCode, reason: String },
    Status { message_id: String, state: DeliveryState },
    Quit,
}

impl Frame {
    pub fn verb(&self) -> &'static str {
        match self {
            Frame::Hello { .. } => "HELLO",
            Frame::Query(_) => "QUERY",
            Frame::Quote { .. } => "QUOTE",
            Frame::NoCos { .. } => "NOCOS",
            Frame::Pay { .. } => "PAY",
            Frame::Data { .. } => "DATA",
            Frame::Accepted { .. } => "ACCEPTED",
            Frame::Rejected { .. } => "REJECTED",
            Frame::Status { .. } => "STATUS",
            Frame::Quit => "QUIT",
        }
    }

    pub fn rejected(code: ResponseCode, reason: impl Into<String>) -> Self {
        Frame::Rejected {
            code,
            reason: reason.into(),
        }
    }

    /// Checks that the frame encodes to a line that decodes back to itself.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            Frame::Hello { sender_id } => check_token("sender_id", sender_id),
            Frame::Query(doc) => {
                check_token("message.id", &doc.message.id)?;
                check_token("message.sender_id", &doc.message.sender_id)
            }
            Frame::Quote { cos_id, price, .. } => {
                check_token("cos_id", cos_id)?;
                if price.is_finite() && *price >= 0.0 {
                    Ok(())
                } else {
                    Err(ProtocolError::violation("price must be finite and >= 0"))
                }
            }
            Frame::NoCos { reason } | Frame::Rejected { reason, .. } => check_text(reason),
            Frame::Pay { token } => check_token("token", &token.0),
            Frame::Data { body } => {
                if body.len() > MAX_BODY_BYTES {
                    Err(ProtocolError::violation("body too large"))
                } else {
                    Ok(())
                }
            }
            Frame::Accepted { message_id } | Frame::Status { message_id, .. } => {
                check_token("message_id", message_id)
            }
            Frame::Quit => Ok(()),
        }
    }
}

/// Tokens are nonempty printable ASCII without spaces.
pub fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_graphic())
}

fn check_token(field: &str, s: &str) -> Result<(), ProtocolError> {
    if is_token(s) {
        Ok(())
    } else {
        Err(ProtocolError::violation(format!("{field} `{s}` is not a token")))
    }
}

fn check_text(s: &str) -> Result<(), ProtocolError> {
    if s.contains(['\r', '\n']) {
        Err(ProtocolError::violation("text contains a line break"))
    } else {
        Ok(())
    }
}

fn with_rest(verb: &str, head: &[&str], rest: &str) -> String {
    let mut line = String::from(verb);
    for a in head {
        line.push(' ');
        line.push_str(a);
    }
    if !rest.is_empty() {
        line.push(' ');
        line.push_str(rest);
    }
    line
}

/// Encodes a valid frame; see [`Frame::validate`].
pub fn encode_frame(f: &Frame) -> Vec<u8> {
    let line = match f {
        Frame::Hello { sender_id } => format!("HELLO {sender_id}"),
        Frame::Query(doc) => {
            format!("QUERY {}", serde_json::to_string(doc).expect("query document serializes"))
        }
        Frame::Quote {
            cos_id,
            price,
            available,
        } => format!(
            "QUOTE {cos_id} {price} {}",
            if *available { "AVAILABLE" } else { "UNAVAILABLE" }
        ),
        Frame::NoCos { reason } => with_rest("NOCOS", &[], reason),
        Frame::Pay { token } => format!("PAY {token}"),
        Frame::Data { body } => {
            let mut out = format!("DATA {}\r\n", body.len()).into_bytes();
            out.extend_from_slice(body);
            return out;
        }
        Frame::Accepted { message_id } => format!("ACCEPTED {message_id}"),
        Frame::Rejected { code, reason } => with_rest("REJECTED", &[&code.to_string()], reason),
        Frame::Status { message_id, state } => format!("STATUS {message_id} {}", state.as_str()),
        Frame::Quit => "QUIT".to_string(),
    };
    let mut out = line.into_bytes();
    out.extend_from_slice(b"\r\n");
    out
}

/// A decoded line: either a whole frame or the header of a DATA frame
/// whose body follows.
#[derive(Debug, Clone, PartialEq)]
pub enum Line {
    Frame(Frame),
    DataHeader(usize),
}

fn parse_decimal(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

fn parse_price(s: &str) -> Option<f64> {
    let ok_chars = s.bytes().all(|b| b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'-');
    if !ok_chars || s.starts_with('-') {
        return None;
    }
    s.parse::<f64>().ok().filter(|p| p.is_finite() && *p >= 0.0)
}

/// Parses one line without its CRLF terminator.
pub fn parse_line(line: &[u8]) -> Result<Line, ProtocolError> {
    let text = std::str::from_utf8(line).map_err(|_| ProtocolError::violation("line is not UTF-8"))?;
    if text.contains(['\r', '\n']) {
        return Err(ProtocolError::violation("stray line break"));
    }
    let (verb, rest) = match text.split_once(' ') {
        Some((v, r)) => (v, Some(r)),
        None => (text, None),
    };
    let args: Vec<&str> = rest.map(|r| r.split(' ').collect()).unwrap_or_default();
    let arity = |n: usize| -> Result<(), ProtocolError> {
        if args.len() == n && args.iter().all(|a| is_token(a)) {
            Ok(())
        } else {
            Err(ProtocolError::violation(format!("{verb} expects {n} argument(s)")))
        }
    };
    let frame = match verb {
        "HELLO" => {
            arity(1)?;
            Frame::Hello {
                sender_id: args[0].to_string(),
            }
        }
        "QUERY" => {
            let doc: QueryDocument = serde_json::from_str(rest.unwrap_or(""))
                .map_err(|e| ProtocolError::violation(format!("bad query document: {e}")))?;
            let f = Frame::Query(Box::new(doc));
            f.validate()?;
            f
        }
        "QUOTE" => {
            arity(3)?;
            let price = parse_price(args[1]).ok_or_else(|| ProtocolError::violation("bad price"))?;
            let available = match args[2] {
                "AVAILABLE" => true,
                "UNAVAILABLE" => false,
                _ => return Err(ProtocolError::violation("bad availability flag")),
            };
            Frame::Quote {
                cos_id: args[0].to_string(),
                price,
                available,
            }
        }
        "NOCOS" => Frame::NoCos {
            reason: rest.unwrap_or("").to_string(),
        },
        "PAY" => {
            arity(1)?;
            Frame::Pay {
                token: PaymentToken(args[0].to_string()),
            }
        }
        "DATA" => {
            arity(1)?;
            let len = parse_decimal(args[0]).ok_or_else(|| ProtocolError::violation("bad DATA length"))?;
            if len > MAX_BODY_BYTES {
                return Err(ProtocolError::violation("DATA length exceeds limit"));
            }
            return Ok(Line::DataHeader(len));
        }
        "ACCEPTED" => {
            arity(1)?;
            Frame::Accepted {
                message_id: args[0].to_string(),
            }
        }
        "REJECTED" => {
            let (code_text, reason) = match rest {
                Some(r) => r.split_once(' ').unwrap_or((r, "")),
                None => return Err(ProtocolError::violation("REJECTED expects a code")),
            };
            let code = code_text
                .parse::<u16>()
                .ok()
                .and_then(ResponseCode::from_u16)
                .filter(|_| parse_decimal(code_text).is_some())
                .ok_or_else(|| ProtocolError::violation("unregistered response code"))?;
            Frame::Rejected {
                code,
                reason: reason.to_string(),
            }
        }
        "STATUS" => {
            arity(2)?;
            let state = DeliveryState::parse(args[1]).ok_or_else(|| ProtocolError::violation("bad state"))?;
            Frame::Status {
                message_id: args[0].to_string(),
                state,
            }
        }
        "QUIT" => {
            arity(0).or_else(|_| if rest.is_none() { Ok(()) } else { Err(ProtocolError::violation("QUIT takes no arguments")) })?;
            Frame::Quit
        }
        other => return Err(ProtocolError::violation(format!("unknown verb `{other}`"))),
    };
    Ok(Line::Frame(frame))
}

/// Decodes a buffer holding exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    let mut cursor = std::io::Cursor::new(bytes);
    let frame = read_frame(&mut cursor)?.ok_or_else(|| ProtocolError::violation("empty input"))?;
    if (cursor.position() as usize) != bytes.len() {
        return Err(ProtocolError::violation("trailing bytes after frame"));
    }
    Ok(frame)
}

/// Reads one CRLF-terminated line (terminator stripped). `Ok(None)` on a
/// clean end of stream before any byte.
pub fn read_line<R: BufRead>(r: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut buf = Vec::new();
    let n = r
        .take(MAX_LINE_BYTES as u64 + 2)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if !buf.ends_with(b"\r\n") {
        return Err(if buf.len() > MAX_LINE_BYTES {
            ProtocolError::violation("line too long")
        } else {
            ProtocolError::violation("line not terminated by CRLF")
        });
    }
    buf.truncate(buf.len() - 2);
    Ok(Some(buf))
}

pub fn read_body<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>, ProtocolError> {
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|_| ProtocolError::violation(format!("DATA body shorter than {len} bytes")))?;
    Ok(body)
}

/// Reads the next frame from a stream; `Ok(None)` at a clean end of stream.
pub fn read_frame<R: BufRead>(r: &mut R) -> Result<Option<Frame>, ProtocolError> {
    let Some(line) = read_line(r)? else {
        return Ok(None);
    };
    match parse_line(&line)? {
        Line::Frame(f) => Ok(Some(f)),
        Line::DataHeader(len) => Ok(Some(Frame::Data { body: read_body(r, len)? })),
    }
}

pub fn write_frame<W: Write>(w: &mut W, f: &Frame) -> Result<(), ProtocolError> {
    f.validate()?;
    w.write_all(&encode_frame(f))?;
    w.flush()?;
    Ok(())
}
