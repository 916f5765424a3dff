use serde::{Deserialize, Serialize};

/// Registered response codes of the negotiation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u16)]
pub enum ResponseCode {
    Accepted = 250,
    IdentityFailed = 401,
    PaymentRequired = 402,
    CosDenied = 403,
    DuplicateToken = 409,
    Congestion = 429,
    QueueFull = 507,
    ProtocolViolation = 550,
}

impl ResponseCode {
    pub const ALL: [ResponseCode; 8] = [
        ResponseCode::Accepted,
        ResponseCode::IdentityFailed,
        ResponseCode::PaymentRequired,
        ResponseCode::CosDenied,
        ResponseCode::DuplicateToken,
        ResponseCode::Congestion,
        ResponseCode::QueueFull,
        ResponseCode::ProtocolViolation,
    ];

    pub fn as_u16(self) -> u16 {
        self as u16
    }

    pub fn from_u16(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_u16() == code)
    }

    pub fn describe(self) -> &'static str {
        match self {
            ResponseCode::Accepted => "accepted",
            ResponseCode::IdentityFailed => "identity verification failed",
            ResponseCode::PaymentRequired => "payment required or invalid",
            ResponseCode::CosDenied => "class of service denied",
            ResponseCode::DuplicateToken => "duplicate token",
            ResponseCode::Congestion => "rejected under congestion",
            ResponseCode::QueueFull => "queue full",
            ResponseCode::ProtocolViolation => "protocol violation",
        }
    }
}

impl std::fmt::Display for ResponseCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u16())
    }
}
