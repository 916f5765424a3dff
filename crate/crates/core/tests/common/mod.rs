#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::sync::Arc;

use gridemail::model::{Accessibility, Catalog, ClassOfService, Message, PaymentToken, Security};
use gridemail::policy::PricingPolicyConfig;
use gridemail::protocol::{ReceiverConfig, ReceiverDeps};
use gridemail::services::daemon::ReceiverService;
use gridemail::services::wire::ServerHandle;
use gridemail::services::{AlertSink, IdentityRegistry, Mailbox, RecipientCredentials, TokenLedger};

pub const RECIPIENT: &str = "bob";
pub const CREDENTIAL: &str = "bob-inbox-key";
pub const FRIEND: &str = "alice";
pub const FRIEND_SECRET: &[u8] = b"alice-shared-secret";
pub const STRANGER: &str = "mallory";

pub fn credentials() -> RecipientCredentials {
    RecipientCredentials { recipient_id: RECIPIENT.into(), credential: CREDENTIAL.into() }
}

/// The canonical catalog plus `gold`: open, authenticated, alerting, priced 2.
pub fn catalog(gold_capacity: usize) -> Catalog {
    let mut c = Catalog::canonical([FRIEND.to_string()]);
    let mut gold = c.get("cos2").expect("canonical cos2").clone();
    gold.cos_id = "gold".into();
    gold.qos.security = Security::Authenticated;
    gold.qos.accessibility = Accessibility::Open;
    gold.qos.latency_s = 120.0;
    gold.pricing = PricingPolicyConfig::fixed(2.0);
    gold.capacity = gold_capacity;
    gold.alert = true;
    gold.trusted_senders = BTreeSet::new();
    c.classes.push(gold);
    c
}

pub fn class<'a>(c: &'a Catalog, id: &str) -> &'a ClassOfService {
    c.get(id).expect("class exists")
}

/// In-memory receiver side: config, ledger, identity registry and mailbox.
pub struct World {
    pub config: ReceiverConfig,
    pub ledger: TokenLedger,
    pub identity: IdentityRegistry,
    pub mailbox: Mailbox,
}

impl World {
    pub fn new(catalog: Catalog) -> Self {
        let identity = IdentityRegistry::new();
        identity.register(FRIEND, FRIEND_SECRET).unwrap();
        identity.register(STRANGER, b"mallory-secret").unwrap();
        let mailbox = Mailbox::in_memory(&catalog, credentials());
        World { config: ReceiverConfig::new(RECIPIENT, catalog), ledger: TokenLedger::in_memory(), identity, mailbox }
    }

    pub fn deps(&self) -> ReceiverDeps<'_> {
        ReceiverDeps { config: &self.config, payment: &self.ledger, identity: &self.identity, store: &self.mailbox }
    }

    /// Token source backed by this world's ledger.
    pub fn issue(&self, payer: &str, amount: f64) -> Result<PaymentToken, String> {
        self.ledger.issue(payer, amount).map_err(|e| e.to_string())
    }
}

pub fn message(id: &str, sender: &str, body: &[u8], cos: Option<&str>) -> Message {
    let mut m = Message::new(id, sender, RECIPIENT, body.to_vec());
    m.cos_id = cos.map(String::from);
    m
}

/// Receiver service on an ephemeral port with in-process payment and
/// identity backends.
pub struct Network {
    pub service: Arc<ReceiverService>,
    pub ledger: Arc<TokenLedger>,
    pub handle: ServerHandle,
    pub addr: String,
}

pub fn network(catalog: Catalog) -> Network {
    let identity = IdentityRegistry::new();
    identity.register(FRIEND, FRIEND_SECRET).unwrap();
    identity.register(STRANGER, b"mallory-secret").unwrap();
    let ledger = Arc::new(TokenLedger::in_memory());
    let service = Arc::new(ReceiverService {
        mailbox: Mailbox::in_memory(&catalog, credentials()),
        config: ReceiverConfig::new(RECIPIENT, catalog),
        payment: ledger.clone(),
        identity: Arc::new(identity),
        alerts: AlertSink::memory(),
    });
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let handle = service.clone().start(listener).unwrap();
    let addr = handle.local_addr().to_string();
    Network { service, ledger, handle, addr }
}

/// A port that was free a moment ago.
pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub mod oracle;

/// Retrieves up to `max_n` queued messages of one class over the wire.
pub fn fetch(addr: &str, cos: &str, max_n: usize) -> gridemail::protocol::retrieval::FetchReply {
    use gridemail::protocol::retrieval::{read_reply, FetchRequest};
    use std::io::Write;
    let req = FetchRequest {
        cos_id: cos.into(),
        max_n,
        recipient_id: RECIPIENT.into(),
        credential: CREDENTIAL.into(),
    };
    let stream = std::net::TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(std::time::Duration::from_secs(10))).unwrap();
    let mut w = stream.try_clone().unwrap();
    w.write_all(&req.encode().unwrap()).unwrap();
    read_reply(&mut std::io::BufReader::new(stream)).unwrap()
}
