//! Daemon configuration files and the receiver service.
//!
//! The receiver listens on one port for both negotiation sessions and
//! retrieval: a connection whose first line starts with `FETCH` speaks the
//! retrieval grammar, anything else is a negotiation session.

use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::alert::{AlertSink, AlertSinkConfig};
use super::identity::IdentityRegistry;
use super::ledger::TokenLedger;
use super::mailbox::Mailbox;
use super::queue::{QueueError, RecipientCredentials};
use super::wire::{serve_identity, serve_payment, spawn_server, RemoteIdentity, RemotePayment, ServerHandle};
use crate::error::{read_file, ConfigError};
use crate::model::{Catalog, ScoringConfig};
use crate::protocol::frame::{parse_line, read_body, read_line, write_frame, Line};
use crate::protocol::receiver::{IdentityClient, PaymentClient, ReceiverAction, ReceiverEvent};
use crate::protocol::retrieval::{write_reply, FetchReply, FetchRequest, FetchedMessage};
use crate::protocol::{ReceiverConfig, ReceiverDeps, ReceiverSession};
use crate::selection::ReadingTimeModel;

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    Ok(serde_json::from_str(&read_file(path)?)?)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverDaemonConfig {
    pub listen: String,
    pub recipient_id: String,
    /// Credential the browsing client presents to FETCH.
    pub credential: String,
    /// Catalog file; the canonical three-class catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog_path: Option<PathBuf>,
    /// Allowlist for the canonical catalog's trusted-only class.
    #[serde(default)]
    pub trusted_senders: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reading_model: Option<ReadingTimeModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benefit_rate: Option<f64>,
    pub data_dir: PathBuf,
    pub payment_addr: String,
    pub identity_addr: String,
    /// Defaults to `alerts.log` in the data directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert: Option<AlertSinkConfig>,
}

impl ReceiverDaemonConfig {
    /// Loads the file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = load_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = resolve(base, &cfg.data_dir);
        cfg.catalog_path = cfg.catalog_path.map(|p| resolve(base, &p));
        cfg.scoring_path = cfg.scoring_path.map(|p| resolve(base, &p));
        if let Some(AlertSinkConfig::LogFile { path, .. }) = cfg.alert.as_mut() {
            *path = resolve(base, path);
        }
        Ok(cfg)
    }

    pub fn catalog(&self) -> Result<Catalog, ConfigError> {
        let c = match &self.catalog_path {
            Some(p) => Catalog::load(p)?,
            None => Catalog::canonical(self.trusted_senders.iter().cloned()),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn receiver_config(&self) -> Result<ReceiverConfig, ConfigError> {
        let mut rc = ReceiverConfig::new(self.recipient_id.clone(), self.catalog()?);
        if let Some(p) = &self.scoring_path {
            rc.scoring = ScoringConfig::load(p)?;
        }
        if let Some(m) = &self.reading_model {
            rc.reading_model = m.clone();
        }
        if let Some(b) = self.benefit_rate {
            rc.benefit_rate = b;
        }
        Ok(rc)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.receiver_config().map(|_| ())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentDaemonConfig {
    pub listen: String,
    pub ledger_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityDaemonConfig {
    pub listen: String,
    /// sender_id -> shared secret.
    pub secrets: std::collections::BTreeMap<String, String>,
}

pub struct ReceiverService {
    pub config: ReceiverConfig,
    pub mailbox: Mailbox,
    pub payment: Arc<dyn PaymentClient>,
    pub identity: Arc<dyn IdentityClient>,
    pub alerts: AlertSink,
}

impl ReceiverService {
    pub fn from_daemon_config(cfg: &ReceiverDaemonConfig) -> Result<Self, ConfigError> {
        let config = cfg.receiver_config()?;
        let creds = RecipientCredentials { recipient_id: cfg.recipient_id.clone(), credential: cfg.credential.clone() };
        let mailbox = Mailbox::open(&cfg.data_dir, &config.catalog, creds).map_err(|source| ConfigError::Io {
            path: cfg.data_dir.display().to_string(),
            source,
        })?;
        let alert_cfg = cfg
            .alert
            .clone()
            .unwrap_or_else(|| AlertSinkConfig::LogFile { path: cfg.data_dir.join("alerts.log"), retries: 2 });
        Ok(ReceiverService {
            config,
            mailbox,
            payment: Arc::new(RemotePayment::new(cfg.payment_addr.clone())),
            identity: Arc::new(RemoteIdentity::new(cfg.identity_addr.clone())),
            alerts: AlertSink::new(alert_cfg),
        })
    }

    fn deps(&self) -> ReceiverDeps<'_> {
        ReceiverDeps {
            config: &self.config,
            payment: self.payment.as_ref(),
            identity: self.identity.as_ref(),
            store: &self.mailbox,
        }
    }

    fn fetch(&self, req: &FetchRequest) -> FetchReply {
        match self.mailbox.fetch(&req.cos_id, &req.recipient_id, &req.credential, req.max_n) {
            Ok(batch) => FetchReply::Messages(
                batch
                    .into_iter()
                    .map(|m| FetchedMessage {
                        message_id: m.message.id,
                        sender_id: m.message.sender_id,
                        receipt_id: m.receipt_id,
                        body: m.message.body,
                    })
                    .collect(),
            ),
            Err(e @ (QueueError::AuthFailed | QueueError::NotFound(_))) => {
                FetchReply::Error { code: e.wire_code(), reason: e.to_string() }
            }
            Err(e) => FetchReply::Error { code: 550, reason: e.to_string() },
        }
    }

    /// Serves one connection to completion.
    pub fn handle_connection(&self, stream: TcpStream) {
        let _ = stream.set_read_timeout(Some(Duration::from_secs(120)));
        let Ok(mut writer) = stream.try_clone() else { return };
        let mut reader = BufReader::new(stream);
        let deps = self.deps();
        let mut session = ReceiverSession::new();
        loop {
            let event = match read_line(&mut reader) {
                Ok(None) => ReceiverEvent::ConnectionLost,
                Err(e) => ReceiverEvent::Malformed(e),
                Ok(Some(line)) if line.starts_with(b"FETCH ") => {
                    let reply = match FetchRequest::parse(&line) {
                        Ok(req) => self.fetch(&req),
                        Err(e) => FetchReply::Error { code: 550, reason: e.to_string() },
                    };
                    if write_reply(&mut writer, &reply).is_err() {
                        return;
                    }
                    continue;
                }
                Ok(Some(line)) => match parse_line(&line) {
                    Ok(Line::Frame(f)) => ReceiverEvent::Frame(f),
                    Ok(Line::DataHeader(n)) => match read_body(&mut reader, n) {
                        Ok(body) => ReceiverEvent::Frame(crate::protocol::Frame::Data { body }),
                        Err(e) => ReceiverEvent::Malformed(e),
                    },
                    Err(e) => ReceiverEvent::Malformed(e),
                },
            };
            let lost = event == ReceiverEvent::ConnectionLost;
            let mut close = lost;
            for act in session.step(event, &deps) {
                match act {
                    ReceiverAction::Send(f) => {
                        if write_frame(&mut writer, &f).is_err() {
                            close = true;
                        }
                    }
                    ReceiverAction::Alert { message_id, cos_id } => {
                        self.alerts.dispatch(&message_id, &cos_id);
                    }
                    ReceiverAction::Close => close = true,
                }
            }
            if close {
                if !lost {
                    // Settle any payment still held by the session.
                    session.step(ReceiverEvent::ConnectionLost, &deps);
                }
                let _ = writer.flush();
                let _ = writer.shutdown(std::net::Shutdown::Both);
                return;
            }
        }
    }

    pub fn start(self: Arc<Self>, listener: TcpListener) -> std::io::Result<ServerHandle> {
        spawn_server(listener, move |s| self.handle_connection(s))
    }
}

pub fn start_payment(cfg: &PaymentDaemonConfig) -> std::io::Result<(ServerHandle, Arc<TokenLedger>)> {
    if let Some(dir) = cfg.ledger_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let ledger = Arc::new(TokenLedger::open(&cfg.ledger_path)?);
    let handle = serve_payment(TcpListener::bind(&cfg.listen)?, ledger.clone())?;
    Ok((handle, ledger))
}

pub fn start_identity(cfg: &IdentityDaemonConfig) -> Result<ServerHandle, ConfigError> {
    let reg = IdentityRegistry::from_file(&super::identity::RegistryFile { secrets: cfg.secrets.clone() })?;
    let io = |source| ConfigError::Io { path: cfg.listen.clone(), source };
    let listener = TcpListener::bind(&cfg.listen).map_err(io)?;
    serve_identity(listener, Arc::new(reg)).map_err(io)
}
