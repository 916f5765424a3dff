//! Retrieval grammar used by the recipient's browsing client.
//!
//! ```text
//! C: FETCH <cos_id> <max_n> <recipient_id> <credential>\r\n
//! S: MSG <message_id> <sender_id> <receipt_id> <len>\r\n<len body bytes>   (repeated)
//! S: END <count>\r\n
//! S: ERR <401|404|550> <reason>\r\n
//! ```

use std::io::{BufRead, Write};

use super::frame::{is_token, read_body, read_line, ProtocolError, MAX_BODY_BYTES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub cos_id: String,
    pub max_n: usize,
    pub recipient_id: String,
    pub credential: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedMessage {
    pub message_id: String,
    pub sender_id: String,
    pub receipt_id: u64,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchReply {
    Messages(Vec<FetchedMessage>),
    Error { code: u16, reason: String },
}

impl FetchRequest {
    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        for (name, v) in [("cos_id", &self.cos_id), ("recipient_id", &self.recipient_id), ("credential", &self.credential)] {
            if !is_token(v) {
                return Err(ProtocolError::violation(format!("{name} is not a token")));
            }
        }
        Ok(format!("FETCH {} {} {} {}\r\n", self.cos_id, self.max_n, self.recipient_id, self.credential).into_bytes())
    }

    /// Parses a request line without its CRLF.
    pub fn parse(line: &[u8]) -> Result<Self, ProtocolError> {
        let text = std::str::from_utf8(line).map_err(|_| ProtocolError::violation("line is not UTF-8"))?;
        let parts: Vec<&str> = text.split(' ').collect();
        match parts.as_slice() {
            ["FETCH", cos, n, rcpt, cred] if [cos, rcpt, cred].iter().all(|s| is_token(s)) => {
                let max_n = n
                    .parse::<usize>()
                    .ok()
                    .filter(|_| n.bytes().all(|b| b.is_ascii_digit()))
                    .ok_or_else(|| ProtocolError::violation("bad max_n"))?;
                Ok(FetchRequest {
                    cos_id: cos.to_string(),
                    max_n,
                    recipient_id: rcpt.to_string(),
                    credential: cred.to_string(),
                })
            }
            _ => Err(ProtocolError::violation("expected FETCH cos_id max_n recipient credential")),
        }
    }
}

pub fn write_reply<W: Write>(w: &mut W, reply: &FetchReply) -> std::io::Result<()> {
    match reply {
        FetchReply::Messages(msgs) => {
            for m in msgs {
                write!(w, "MSG {} {} {} {}\r\n", m.message_id, m.sender_id, m.receipt_id, m.body.len())?;
                w.write_all(&m.body)?;
            }
            write!(w, "END {}\r\n", msgs.len())?;
        }
        FetchReply::Error { code, reason } => write!(w, "ERR {code} {reason}\r\n")?,
    }
    w.flush()
}

pub fn read_reply<R: BufRead>(r: &mut R) -> Result<FetchReply, ProtocolError> {
    let mut msgs = Vec::new();
    loop {
        let line = read_line(r)?.ok_or_else(|| ProtocolError::violation("reply truncated"))?;
        let text = String::from_utf8(line).map_err(|_| ProtocolError::violation("line is not UTF-8"))?;
        let parts: Vec<&str> = text.splitn(5, ' ').collect();
        match parts.as_slice() {
            ["MSG", id, sender, receipt, len] => {
                let receipt_id = receipt.parse().map_err(|_| ProtocolError::violation("bad receipt id"))?;
                let len: usize = len.parse().map_err(|_| ProtocolError::violation("bad length"))?;
                if len > MAX_BODY_BYTES {
                    return Err(ProtocolError::violation("body too large"));
                }
                msgs.push(FetchedMessage {
                    message_id: id.to_string(),
                    sender_id: sender.to_string(),
                    receipt_id,
                    body: read_body(r, len)?,
                });
            }
            ["END", n] => {
                if n.parse::<usize>().ok() != Some(msgs.len()) {
                    return Err(ProtocolError::violation("END count mismatch"));
                }
                return Ok(FetchReply::Messages(msgs));
            }
            ["ERR", code, rest @ ..] => {
                return Ok(FetchReply::Error {
                    code: code.parse().map_err(|_| ProtocolError::violation("bad error code"))?,
                    reason: rest.join(" "),
                })
            }
            _ => return Err(ProtocolError::violation("unexpected reply line")),
        }
    }
}
