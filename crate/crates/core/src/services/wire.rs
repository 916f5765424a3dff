//! Line protocols of the payment and identity services, their servers and
//! remote clients, plus the shared thread-per-connection accept loop.
//!
//! ```text
//! ISSUE <payer> <amount>          -> OK <token>
//! VERIFY <token> <amount> <payee> -> OK <face_amount>
//! REFUND <token>                  -> OK
//! CHECK <sender> <digest> <mac>   -> OK
//! any failure                     -> ERR <code> <reason>
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::identity::{IdentityError, IdentityRegistry};
use super::ledger::{PaymentError, TokenLedger};
use crate::model::PaymentToken;
use crate::protocol::frame::is_token;
use crate::protocol::receiver::{IdentityClient, PaymentClient};

pub const IO_TIMEOUT: Duration = Duration::from_secs(10);

/// Running accept loop. Dropping the handle does not stop it; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Accepts connections on `listener`, running `handler` on its own thread
/// for each one.
pub fn spawn_server<F>(listener: TcpListener, handler: F) -> std::io::Result<ServerHandle>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let handler = Arc::new(handler);
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let h = handler.clone();
                    std::thread::spawn(move || h(stream));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle { addr, stop, thread: Some(thread) })
}

fn ok(rest: &str) -> String {
    if rest.is_empty() {
        "OK".to_string()
    } else {
        format!("OK {rest}")
    }
}

fn err(code: u16, reason: impl std::fmt::Display) -> String {
    format!("ERR {code} {reason}")
}

fn parse_amount(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|a| a.is_finite())
}

/// Answers one payment request line.
pub fn handle_payment_line(ledger: &TokenLedger, line: &str) -> String {
    let parts: Vec<&str> = line.split(' ').collect();
    let tokens_ok = |xs: &[&str]| xs.iter().all(|x| is_token(x));
    let result = match parts.as_slice() {
        ["ISSUE", payer, amount] if tokens_ok(&[payer]) => match parse_amount(amount) {
            Some(a) => ledger.issue(payer, a).map(|t| ok(&t.0)),
            None => Err(PaymentError::InvalidAmount),
        },
        ["VERIFY", token, amount, payee] if tokens_ok(&[token, payee]) => match parse_amount(amount) {
            Some(a) => ledger
                .verify_and_redeem(&PaymentToken(token.to_string()), a, payee)
                .map(|face| ok(&face.to_string())),
            None => return err(400, "bad amount"),
        },
        ["REFUND", token] if tokens_ok(&[token]) => ledger.refund(&PaymentToken(token.to_string())).map(|_| ok("")),
        _ => return err(400, "malformed request"),
    };
    result.unwrap_or_else(|e| err(e.wire_code(), e))
}

pub fn handle_identity_line(registry: &IdentityRegistry, line: &str) -> String {
    match line.split(' ').collect::<Vec<_>>().as_slice() {
        ["CHECK", sender, digest, mac] if [sender, digest, mac].iter().all(|x| is_token(x)) => {
            match registry.check(sender, digest, mac) {
                Ok(()) => ok(""),
                Err(e) => err(e.wire_code(), e),
            }
        }
        _ => err(400, "malformed request"),
    }
}

/// Serves newline-delimited requests until the peer closes. Replies end in
/// CRLF; requests may end in LF or CRLF.
pub fn serve_lines(stream: TcpStream, answer: impl Fn(&str) -> String) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(300)));
    let Ok(mut writer) = stream.try_clone() else { return };
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let reply = answer(line);
        if writer.write_all(reply.as_bytes()).and_then(|_| writer.write_all(b"\r\n")).is_err() {
            break;
        }
    }
}

pub fn serve_payment(listener: TcpListener, ledger: Arc<TokenLedger>) -> std::io::Result<ServerHandle> {
    spawn_server(listener, move |s| serve_lines(s, |l| handle_payment_line(&ledger, l)))
}

pub fn serve_identity(listener: TcpListener, registry: Arc<IdentityRegistry>) -> std::io::Result<ServerHandle> {
    spawn_server(listener, move |s| serve_lines(s, |l| handle_identity_line(&registry, l)))
}

/// One request, one reply, on a fresh connection.
pub fn request_line(addr: &str, line: &str) -> std::io::Result<String> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, format!("cannot resolve {addr}")))?;
    let mut stream = TcpStream::connect_timeout(&target, IO_TIMEOUT)?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    stream.write_all(line.as_bytes())?;
    stream.write_all(b"\r\n")?;
    let mut reply = String::new();
    BufReader::new(stream).read_line(&mut reply)?;
    if reply.is_empty() {
        return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "service closed the connection"));
    }
    Ok(reply.trim_end().to_string())
}

/// Splits `ERR <code> <reason>` or `OK <rest>`.
fn parse_reply(reply: &str) -> Result<String, (u16, String)> {
    if reply == "OK" {
        return Ok(String::new());
    }
    if let Some(rest) = reply.strip_prefix("OK ") {
        return Ok(rest.to_string());
    }
    let mut it = reply.splitn(3, ' ');
    match (it.next(), it.next().and_then(|c| c.parse().ok())) {
        (Some("ERR"), Some(code)) => Err((code, it.next().unwrap_or("").to_string())),
        _ => Err((0, format!("unparseable reply `{reply}`"))),
    }
}

/// Payment service client over the line protocol.
#[derive(Debug, Clone)]
pub struct RemotePayment {
    pub addr: String,
}

impl RemotePayment {
    pub fn new(addr: impl Into<String>) -> Self {
        RemotePayment { addr: addr.into() }
    }

    fn call(&self, line: &str) -> Result<String, PaymentError> {
        let reply = request_line(&self.addr, line).map_err(|e| PaymentError::Unavailable(e.to_string()))?;
        parse_reply(&reply).map_err(|(code, reason)| match code {
            409 => PaymentError::AlreadyRedeemed,
            402 if reason.starts_with("unknown") => PaymentError::UnknownToken,
            402 => PaymentError::Insufficient { amount: f64::NAN, required: f64::NAN },
            422 if reason.contains("refund") || reason.contains("redeemed state") => PaymentError::InvalidRefund,
            422 => PaymentError::InvalidAmount,
            _ => PaymentError::Unavailable(format!("{code} {reason}")),
        })
    }

    pub fn issue(&self, payer: &str, amount: f64) -> Result<PaymentToken, PaymentError> {
        self.call(&format!("ISSUE {payer} {amount}")).map(PaymentToken)
    }
}

impl PaymentClient for RemotePayment {
    fn verify_and_redeem(&self, token: &PaymentToken, required: f64, payee: &str) -> Result<f64, PaymentError> {
        let rest = self.call(&format!("VERIFY {token} {required} {payee}"))?;
        rest.parse().map_err(|_| PaymentError::Unavailable(format!("bad amount `{rest}`")))
    }

    fn refund(&self, token: &PaymentToken) -> Result<(), PaymentError> {
        self.call(&format!("REFUND {token}")).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteIdentity {
    pub addr: String,
}

impl RemoteIdentity {
    pub fn new(addr: impl Into<String>) -> Self {
        RemoteIdentity { addr: addr.into() }
    }
}

impl IdentityClient for RemoteIdentity {
    fn check(&self, sender_id: &str, digest: &str, authenticator: &str) -> Result<(), IdentityError> {
        if !is_token(authenticator) {
            return Err(IdentityError::BadMac);
        }
        let reply = request_line(&self.addr, &format!("CHECK {sender_id} {digest} {authenticator}"))
            .map_err(|e| IdentityError::Unavailable(e.to_string()))?;
        parse_reply(&reply).map(|_| ()).map_err(|(code, reason)| match code {
            401 if reason.contains("unknown") => IdentityError::UnknownSender,
            401 => IdentityError::BadMac,
            _ => IdentityError::Unavailable(format!("{code} {reason}")),
        })
    }
}
