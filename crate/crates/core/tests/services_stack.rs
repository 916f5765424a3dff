//! The daemons wired together over loopback TCP.

mod common;

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;

use common::*;
use gridemail::model::SenderProfile;
use gridemail::protocol::retrieval::FetchReply;
use gridemail::protocol::{read_frame, write_frame, DeliveryState, Feedback, Frame, ResponseCode, SenderSession};
use gridemail::services::daemon::{
    start_identity, start_payment, IdentityDaemonConfig, PaymentDaemonConfig, ReceiverDaemonConfig, ReceiverService,
};
use gridemail::services::sending::{
    drive_session, query_status, send_with_retries, submit, Outgoing, RetryPolicy, SenderDaemonConfig, SenderService,
    SubmitRequest,
};
use gridemail::services::wire::{request_line, RemotePayment, ServerHandle};
use gridemail::services::{AlertRecord, TokenLedger, TokenState};

struct Stack {
    receiver: ServerHandle,
    receiver_addr: String,
    payment: ServerHandle,
    payment_addr: String,
    identity: ServerHandle,
    ledger: Arc<TokenLedger>,
}

fn stack(dir: &Path) -> Stack {
    let (payment, ledger) =
        start_payment(&PaymentDaemonConfig { listen: "127.0.0.1:0".into(), ledger_path: dir.join("ledger.jsonl") }).unwrap();
    let identity = start_identity(&IdentityDaemonConfig {
        listen: "127.0.0.1:0".into(),
        secrets: BTreeMap::from([(FRIEND.to_string(), String::from_utf8(FRIEND_SECRET.to_vec()).unwrap())]),
    })
    .unwrap();
    let cfg = ReceiverDaemonConfig {
        listen: "127.0.0.1:0".into(),
        recipient_id: RECIPIENT.into(),
        credential: CREDENTIAL.into(),
        catalog_path: None,
        trusted_senders: vec![FRIEND.into()],
        scoring_path: None,
        reading_model: None,
        benefit_rate: None,
        data_dir: dir.join("data"),
        payment_addr: payment.local_addr().to_string(),
        identity_addr: identity.local_addr().to_string(),
        alert: None,
    };
    let svc = Arc::new(ReceiverService::from_daemon_config(&cfg).unwrap());
    let receiver = svc.start(TcpListener::bind("127.0.0.1:0").unwrap()).unwrap();
    Stack {
        receiver_addr: receiver.local_addr().to_string(),
        payment_addr: payment.local_addr().to_string(),
        receiver,
        payment,
        identity,
        ledger,
    }
}

impl Stack {
    fn stop(self) {
        self.receiver.shutdown();
        self.payment.shutdown();
        self.identity.shutdown();
    }
}

fn sender_daemon(s: &Stack, sender: &str, secret: Option<&str>) -> ServerHandle {
    let cfg = SenderDaemonConfig {
        listen: "127.0.0.1:0".into(),
        sender_id: sender.into(),
        secret: secret.map(String::from),
        payment_addr: s.payment_addr.clone(),
        receivers: BTreeMap::from([(RECIPIENT.to_string(), s.receiver_addr.clone())]),
        retry: RetryPolicy { attempts: 2, initial_backoff_ms: 10 },
    };
    SenderService { config: cfg }.start(TcpListener::bind("127.0.0.1:0").unwrap()).unwrap()
}

fn request(id: &str, cos: Option<&str>, budget: f64) -> SubmitRequest {
    SubmitRequest {
        message_id: id.into(),
        recipient_id: RECIPIENT.into(),
        format_tag: "plain".into(),
        cos_id: cos.map(String::from),
        stamp: None,
        profile: SenderProfile::with_budget(budget),
    }
}

#[test]
fn submission_through_sender_daemon_reaches_the_mailbox() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path());
    let friend = sender_daemon(&s, FRIEND, Some("alice-shared-secret"));
    let stranger = sender_daemon(&s, STRANGER, None);
    let faddr = friend.local_addr().to_string();
    let saddr = stranger.local_addr().to_string();

    let (code, fb) = submit(&faddr, &request("f1", Some("cos1"), 0.0), b"urgent note").unwrap();
    assert_eq!(code, 0, "{fb:?}");
    assert!(matches!(fb, Feedback::Delivered { ref cos_id, price, .. } if cos_id == "cos1" && price == 0.0));

    let (code, fb) = submit(&saddr, &request("s1", Some("cos2"), 20.0), b"paid offer").unwrap();
    assert_eq!(code, 0, "{fb:?}");
    assert!(matches!(fb, Feedback::Delivered { price, .. } if price == 10.0));
    assert_eq!(s.ledger.count(TokenState::Redeemed), 1);

    let (code, fb) = submit(&saddr, &request("s2", Some("cos1"), 5.0), b"sneaky").unwrap();
    assert_eq!((code, fb.code()), (22, Some(ResponseCode::CosDenied)));
    let (code, _) = submit(&saddr, &request("s3", Some("cos2"), 5.0), b"cheap").unwrap();
    assert_eq!(code, 11, "fixed price above budget never matches");
    let mut r = request("s4", None, 5.0);
    r.recipient_id = "carol".into();
    let (code, fb) = submit(&saddr, &r, b"x").unwrap();
    assert!(matches!(fb, Feedback::NoSuitableClass { .. }) && code == 11);

    assert_eq!(query_status(&s.receiver_addr, "f1").unwrap(), DeliveryState::Queued);
    match fetch(&s.receiver_addr, "cos1", 10) {
        FetchReply::Messages(ms) => {
            assert_eq!(ms.len(), 1);
            assert_eq!(ms[0].body, b"urgent note");
            assert_eq!(ms[0].sender_id, FRIEND);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(query_status(&s.receiver_addr, "f1").unwrap(), DeliveryState::Delivered);
    assert_eq!(query_status(&s.receiver_addr, "nope").unwrap(), DeliveryState::Unknown);
    match fetch(&s.receiver_addr, "cos1", 10) {
        FetchReply::Messages(ms) => assert!(ms.is_empty()),
        other => panic!("{other:?}"),
    }

    // cos1 alerts go to the default log in the data directory.
    let log = std::fs::read_to_string(dir.path().join("data").join("alerts.log")).unwrap();
    let recs: Vec<AlertRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 1);
    assert_eq!((recs[0].message_id.as_str(), recs[0].cos_id.as_str()), ("f1", "cos1"));

    friend.shutdown();
    stranger.shutdown();
    s.stop();
}

#[test]
fn fetch_requires_the_recipient_credential() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path());
    let stream = TcpStream::connect(&s.receiver_addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    w.write_all(b"FETCH cos2 5 bob wrong-key\r\n").unwrap();
    let reply = gridemail::protocol::retrieval::read_reply(&mut BufReader::new(stream)).unwrap();
    assert!(matches!(reply, FetchReply::Error { code: 401, .. }), "{reply:?}");
    assert!(matches!(fetch(&s.receiver_addr, "nosuch", 5), FetchReply::Error { code: 404, .. }));
    s.stop();
}

#[test]
fn malformed_input_gets_550_and_the_connection_closes() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path());
    let stream = TcpStream::connect(&s.receiver_addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    w.write_all(b"FROBNICATE now\r\n").unwrap();
    let mut r = BufReader::new(stream);
    let f = read_frame(&mut r).unwrap();
    assert!(matches!(f, Some(Frame::Rejected { code: ResponseCode::ProtocolViolation, .. })), "{f:?}");
    assert_eq!(read_frame(&mut r).unwrap(), None);
    s.stop();
}

#[test]
fn identity_failure_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path());
    let mut session = SenderSession::new(SenderProfile::with_budget(5.0), message("r1", FRIEND, b"body", Some("cos1")), Some("ab".repeat(32)));
    let fb = drive_session(TcpStream::connect(&s.receiver_addr).unwrap(), &mut session, &mut |a| {
        s.ledger.issue(FRIEND, a).map_err(|e| e.to_string())
    });
    assert_eq!(fb.code(), Some(ResponseCode::IdentityFailed));
    s.stop();
}

#[test]
fn payment_refunded_when_sender_disconnects_after_pay() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(dir.path());
    let msg = message("r2", STRANGER, b"hello", Some("cos2"));
    let token = s.ledger.issue(STRANGER, 10.0).unwrap();
    {
        let stream = TcpStream::connect(&s.receiver_addr).unwrap();
        let mut w = stream.try_clone().unwrap();
        let mut r = BufReader::new(stream);
        write_frame(&mut w, &Frame::Hello { sender_id: STRANGER.into() }).unwrap();
        write_frame(
            &mut w,
            &Frame::Query(Box::new(gridemail::protocol::QueryDocument {
                profile: SenderProfile::with_budget(10.0),
                message: msg.meta(),
                authenticator: None,
            })),
        )
        .unwrap();
        assert!(matches!(read_frame(&mut r).unwrap(), Some(Frame::Quote { .. })));
        write_frame(&mut w, &Frame::Pay { token: token.clone() }).unwrap();
        w.flush().unwrap();
    }
    let mut state = None;
    for _ in 0..500 {
        state = s.ledger.get(&token).map(|t| t.state);
        if state == Some(TokenState::Refunded) {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    assert_eq!(state, Some(TokenState::Refunded));
    assert_eq!(query_status(&s.receiver_addr, "r2").unwrap(), DeliveryState::Unknown);
    s.stop();
}

#[test]
fn retries_give_up_with_connection_loss_when_nobody_listens() {
    let addr = format!("127.0.0.1:{}", free_port());
    let out = Outgoing { receiver_addr: &addr, profile: SenderProfile::with_budget(1.0), message: message("x", STRANGER, b"x", None), secret: None };
    let t = std::time::Instant::now();
    let fb = send_with_retries(&out, RetryPolicy { attempts: 3, initial_backoff_ms: 20 }, &mut |_| Err("no payment".into()));
    assert!(fb.is_connection_loss(), "{fb:?}");
    assert!(t.elapsed() >= std::time::Duration::from_millis(60), "backoff 20 + 40 ms");
}

#[test]
fn ledger_survives_payment_daemon_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pay").join("ledger.jsonl");
    let cfg = PaymentDaemonConfig { listen: "127.0.0.1:0".into(), ledger_path: path.clone() };
    let (h, _) = start_payment(&cfg).unwrap();
    let remote = RemotePayment::new(h.local_addr().to_string());
    let t = remote.issue("alice", 4.0).unwrap();
    let t2 = remote.issue("alice", 1.0).unwrap();
    use gridemail::protocol::receiver::PaymentClient;
    assert_eq!(remote.verify_and_redeem(&t, 4.0, "bob").unwrap(), 4.0);
    h.shutdown();

    let (h, ledger) = start_payment(&cfg).unwrap();
    let remote = RemotePayment::new(h.local_addr().to_string());
    let dup = remote.verify_and_redeem(&t, 4.0, "bob").unwrap_err();
    assert_eq!(dup.response_code(), ResponseCode::DuplicateToken);
    assert_eq!(remote.verify_and_redeem(&t2, 2.0, "bob").unwrap_err().response_code(), ResponseCode::PaymentRequired);
    assert_eq!(ledger.count(TokenState::Issued), 1);
    assert!(request_line(&h.local_addr().to_string(), "BOGUS").unwrap().starts_with("ERR 400"));
    h.shutdown();
}

#[test]
fn concurrent_sessions_keep_fifo_order_per_class() {
    let net = network(catalog(100));
    std::thread::scope(|scope| {
        for t in 0..6 {
            let net = &net;
            scope.spawn(move || {
                for k in 0..8 {
                    let id = format!("t{t}-{k}");
                    let mut s = SenderSession::new(SenderProfile::with_budget(20.0), message(&id, STRANGER, id.as_bytes(), Some("cos2")), None);
                    let fb = drive_session(TcpStream::connect(&net.addr).unwrap(), &mut s, &mut |a| {
                        net.ledger.issue(STRANGER, a).map_err(|e| e.to_string())
                    });
                    assert!(matches!(fb, Feedback::Delivered { .. }), "{fb:?}");
                }
            });
        }
    });
    let FetchReply::Messages(ms) = fetch(&net.addr, "cos2", 1000) else { panic!("fetch failed") };
    assert_eq!(ms.len(), 48);
    assert!(ms.windows(2).all(|w| w[0].receipt_id < w[1].receipt_id));
    for t in 0..6 {
        let order: Vec<&str> = ms.iter().map(|m| m.message_id.as_str()).filter(|id| id.starts_with(&format!("t{t}-"))).collect();
        let want: Vec<String> = (0..8).map(|k| format!("t{t}-{k}")).collect();
        assert_eq!(order, want);
    }
    net.handle.shutdown();
}

/// Forwards connections to `target`; the first one is cut as soon as the
/// receiver's ACCEPTED line passes through, before it reaches the client.
fn lossy_proxy(target: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for (n, client) in listener.incoming().enumerate() {
            let Ok(client) = client else { continue };
            let server = TcpStream::connect(&target).unwrap();
            let (mut c_in, mut s_out) = (client.try_clone().unwrap(), server.try_clone().unwrap());
            std::thread::spawn(move || {
                let _ = std::io::copy(&mut c_in, &mut s_out);
                let _ = s_out.shutdown(std::net::Shutdown::Write);
            });
            let (mut s_in, mut c_out) = (server, client);
            std::thread::spawn(move || {
                use std::io::Read;
                let mut buf = [0u8; 4096];
                let mut seen = Vec::new();
                loop {
                    let k = match s_in.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(k) => k,
                    };
                    seen.extend_from_slice(&buf[..k]);
                    if n == 0 && seen.windows(8).any(|w| w == b"ACCEPTED") {
                        let _ = c_out.shutdown(std::net::Shutdown::Both);
                        let _ = s_in.shutdown(std::net::Shutdown::Both);
                        break;
                    }
                    if c_out.write_all(&buf[..k]).is_err() {
                        break;
                    }
                }
                let _ = c_out.shutdown(std::net::Shutdown::Both);
            });
        }
    });
    addr
}

#[test]
fn retry_after_lost_accept_is_not_duplicated() {
    let net = network(catalog(10));
    let proxy = lossy_proxy(net.addr.clone());
    let m = message("once", STRANGER, b"exactly once", Some("cos2"));
    let out = Outgoing { receiver_addr: &proxy, profile: SenderProfile::with_budget(20.0), message: m, secret: None };
    let fb = send_with_retries(&out, RetryPolicy { attempts: 3, initial_backoff_ms: 5 }, &mut |a| {
        net.ledger.issue(STRANGER, a).map_err(|e| e.to_string())
    });
    assert!(matches!(fb, Feedback::Delivered { ref cos_id, price, .. } if cos_id == "cos2" && price == 10.0), "{fb:?}");
    let copies = net.service.mailbox.store().entries("cos2").iter().filter(|e| e.message.id == "once").count();
    assert_eq!(copies, 1);
    assert_eq!(net.ledger.count(TokenState::Redeemed), 1);
    assert_eq!(net.ledger.count(TokenState::Issued), 0);
    net.handle.shutdown();
}
