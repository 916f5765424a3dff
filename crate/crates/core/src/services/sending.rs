//! Sender service: drives a sender session over TCP, with retries, and a
//! submission daemon for local clients.
//!
//! Submission grammar:
//!
//! ```text
//! C: SUBMIT <compact JSON SubmitRequest>\r\n
//! C: DATA <n>\r\n<n body bytes>
//! S: RESULT <exit_code> <compact JSON Feedback>\r\n
//! ```

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::identity::authenticate_body;
use super::wire::{spawn_server, RemotePayment, ServerHandle, IO_TIMEOUT};
use crate::model::{Message, PaymentToken, SenderProfile};
use crate::protocol::frame::{parse_line, read_body, read_frame, read_line, write_frame, Line};
use crate::protocol::{DeliveryState, Feedback, Frame, ResponseCode, SenderAction, SenderEvent, SenderSession};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: default_attempts(), initial_backoff_ms: default_backoff_ms() }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n` (0-based; attempt 0 has none).
    pub fn backoff(&self, n: u32) -> Duration {
        if n == 0 {
            Duration::ZERO
        } else {
            Duration::from_millis(self.initial_backoff_ms.saturating_mul(1u64 << (n - 1).min(20)))
        }
    }
}

fn connect(addr: &str) -> std::io::Result<TcpStream> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, format!("cannot resolve {addr}")))?;
    let s = TcpStream::connect_timeout(&target, IO_TIMEOUT)?;
    s.set_read_timeout(Some(IO_TIMEOUT))?;
    s.set_write_timeout(Some(IO_TIMEOUT))?;
    Ok(s)
}

/// Runs one session over an established connection.
pub fn drive_session(
    stream: TcpStream,
    session: &mut SenderSession,
    tokens: &mut dyn FnMut(f64) -> Result<PaymentToken, String>,
) -> Feedback {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return lost(session),
    };
    let mut reader = BufReader::new(stream);
    let mut events = vec![SenderEvent::Submit];
    let mut closed = false;
    while !session.state.is_terminal() {
        if events.is_empty() {
            events.push(match read_frame(&mut reader) {
                Ok(Some(f)) => SenderEvent::Frame(f),
                Ok(None) | Err(_) => SenderEvent::ConnectionLost,
            });
        }
        let ev = events.remove(0);
        let Ok(actions) = session.step(ev) else { break };
        for act in actions {
            match act {
                SenderAction::Send(f) if !closed => {
                    // A failed write surfaces as a lost connection on the
                    // next read; a reply already in flight is still read.
                    if write_frame(&mut writer, &f).is_err() {
                        closed = true;
                    }
                }
                SenderAction::Send(_) => {}
                SenderAction::RequestToken { amount } => events.push(match tokens(amount) {
                    Ok(t) => SenderEvent::TokenIssued(t),
                    Err(e) => SenderEvent::TokenFailed(e),
                }),
                SenderAction::Feedback(_) => {}
                SenderAction::Close => {
                    let _ = writer.shutdown(std::net::Shutdown::Write);
                }
            }
        }
    }
    session.feedback.clone().unwrap_or_else(|| lost(session))
}

fn lost(session: &mut SenderSession) -> Feedback {
    let fb = Feedback::Rejected { code: ResponseCode::ProtocolViolation, reason: crate::protocol::sender::CONNECTION_LOST.into() };
    session.feedback = Some(fb.clone());
    fb
}

/// Asks the receiver whether `message_id` is already stored.
pub fn query_status(addr: &str, message_id: &str) -> std::io::Result<DeliveryState> {
    let stream = connect(addr)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let ask = Frame::Status { message_id: message_id.to_string(), state: DeliveryState::Query };
    write_frame(&mut writer, &ask).map_err(|e| std::io::Error::other(e.to_string()))?;
    let reply = read_frame(&mut reader).map_err(|e| std::io::Error::other(e.to_string()))?;
    let _ = write_frame(&mut writer, &Frame::Quit);
    match reply {
        Some(Frame::Status { state, .. }) => Ok(state),
        other => Err(std::io::Error::other(format!("unexpected reply {other:?}"))),
    }
}

/// Everything needed to send one message.
pub struct Outgoing<'a> {
    pub receiver_addr: &'a str,
    pub profile: SenderProfile,
    pub message: Message,
    pub secret: Option<&'a [u8]>,
}

/// Sends with retries on connection failures. A retry first asks the
/// receiver whether an earlier attempt was already stored.
pub fn send_with_retries(
    out: &Outgoing<'_>,
    retry: RetryPolicy,
    tokens: &mut dyn FnMut(f64) -> Result<PaymentToken, String>,
) -> Feedback {
    let authenticator = out.secret.map(|s| authenticate_body(s, &out.message.body));
    let mut last = None;
    let mut negotiated: (String, f64) = (String::new(), 0.0);
    for attempt in 0..retry.attempts.max(1) {
        std::thread::sleep(retry.backoff(attempt));
        if attempt > 0 {
            if let Ok(DeliveryState::Queued | DeliveryState::Delivered) = query_status(out.receiver_addr, &out.message.id) {
                return Feedback::Delivered {
                    message_id: out.message.id.clone(),
                    cos_id: negotiated.0,
                    price: negotiated.1,
                };
            }
        }
        let mut session = SenderSession::new(out.profile.clone(), out.message.clone(), authenticator.clone());
        let fb = match connect(out.receiver_addr) {
            Ok(stream) => drive_session(stream, &mut session, tokens),
            Err(e) => {
                log::warn!("attempt {} to reach {}: {e}", attempt + 1, out.receiver_addr);
                lost(&mut session)
            }
        };
        if !fb.is_connection_loss() {
            return fb;
        }
        if let (Some(c), Some(p)) = (session.cos_id.clone(), session.quoted_price) {
            negotiated = (c, p);
        }
        last = Some(fb);
    }
    last.expect("at least one attempt")
}

/// `SUBMIT` argument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub message_id: String,
    pub recipient_id: String,
    #[serde(default = "default_format")]
    pub format_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
    pub profile: SenderProfile,
}

fn default_format() -> String {
    "plain".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenderDaemonConfig {
    pub listen: String,
    pub sender_id: String,
    /// Shared secret registered with the identity service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret: Option<String>,
    pub payment_addr: String,
    /// recipient_id -> receiver service address.
    pub receivers: BTreeMap<String, String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

pub struct SenderService {
    pub config: SenderDaemonConfig,
}

impl SenderService {
    pub fn send(&self, req: SubmitRequest, body: Vec<u8>) -> Feedback {
        let Some(addr) = self.config.receivers.get(&req.recipient_id) else {
            return Feedback::NoSuitableClass { reason: format!("no route to {}", req.recipient_id) };
        };
        let mut message = Message::new(req.message_id, self.config.sender_id.clone(), req.recipient_id, body);
        message.format_tag = req.format_tag;
        message.cos_id = req.cos_id;
        message.stamp = req.stamp;
        let payment = RemotePayment::new(self.config.payment_addr.clone());
        let sender_id = self.config.sender_id.clone();
        let mut tokens = |amount: f64| payment.issue(&sender_id, amount).map_err(|e| e.to_string());
        let out = Outgoing {
            receiver_addr: addr,
            profile: req.profile,
            message,
            secret: self.config.secret.as_deref().map(str::as_bytes),
        };
        send_with_retries(&out, self.config.retry, &mut tokens)
    }

    fn handle(&self, stream: TcpStream) {
        let Ok(mut writer) = stream.try_clone() else { return };
        let mut reader = BufReader::new(stream);
        let reply = match read_submission(&mut reader) {
            Ok((req, body)) => {
                let fb = self.send(req, body);
                format!("RESULT {} {}\r\n", fb.exit_code(), serde_json::to_string(&fb).expect("feedback serializes"))
            }
            Err(e) => format!("ERR 400 {e}\r\n"),
        };
        let _ = writer.write_all(reply.as_bytes());
    }

    pub fn start(self, listener: TcpListener) -> std::io::Result<ServerHandle> {
        let svc = Arc::new(self);
        spawn_server(listener, move |s| svc.handle(s))
    }
}

fn read_submission<R: std::io::BufRead>(r: &mut R) -> Result<(SubmitRequest, Vec<u8>), String> {
    let line = read_line(r).map_err(|e| e.to_string())?.ok_or("empty submission")?;
    let text = String::from_utf8(line).map_err(|_| "line is not UTF-8")?;
    let json = text.strip_prefix("SUBMIT ").ok_or("expected SUBMIT")?;
    let req: SubmitRequest = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let header = read_line(r).map_err(|e| e.to_string())?.ok_or("missing DATA")?;
    match parse_line(&header).map_err(|e| e.to_string())? {
        Line::DataHeader(n) => Ok((req, read_body(r, n).map_err(|e| e.to_string())?)),
        Line::Frame(_) => Err("expected DATA".into()),
    }
}

/// Client side of the submission grammar. Returns the exit code and
/// feedback reported by the sender service.
pub fn submit(addr: &str, req: &SubmitRequest, body: &[u8]) -> std::io::Result<(i32, Feedback)> {
    let stream = connect(addr)?;
    // Negotiation and retries happen while this call waits.
    stream.set_read_timeout(Some(Duration::from_secs(600)))?;
    let mut writer = stream.try_clone()?;
    let mut wire = format!("SUBMIT {}\r\n", serde_json::to_string(req)?).into_bytes();
    wire.extend(crate::protocol::encode_frame(&Frame::Data { body: body.to_vec() }));
    writer.write_all(&wire)?;
    let mut reader = BufReader::new(stream);
    let line = read_line(&mut reader)
        .map_err(|e| std::io::Error::other(e.to_string()))?
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "no result"))?;
    let text = String::from_utf8_lossy(&line).to_string();
    let mut parts = text.splitn(3, ' ');
    match (parts.next(), parts.next().and_then(|c| c.parse().ok()), parts.next()) {
        (Some("RESULT"), Some(code), Some(json)) => Ok((code, serde_json::from_str(json)?)),
        _ => Err(std::io::Error::other(format!("sender service replied `{text}`"))),
    }
}
