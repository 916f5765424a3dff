//! C bindings for the gridemail core library.
//!
//! Every function returns a [`GeStatus`]. On failure a description is kept
//! per thread and can be read with [`ge_last_error_message`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Strings and byte buffers returned by the library are
//! released with [`ge_string_free`] and [`ge_bytes_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gridemail::model::PaymentToken;
use gridemail::policy::{self, Outcome, PolicyKind, PolicyState, PricingPolicyConfig, ReasonCode};
use gridemail::protocol::{decode_frame, encode_frame, Frame, ResponseCode};
use gridemail::services::{PaymentError, TokenLedger};
use gridemail::sim::{analytic_net_benefit, default_time_model, simulate_cycle, AnalyticPolicy, MeanMetrics, SimConfig};

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Simulation = 5,
    Protocol = 6,
    /// The token is unknown or does not cover the required amount.
    PaymentRequired = 7,
    /// The token was already redeemed or refunded.
    DuplicateToken = 8,
    Storage = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ge_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

type Failure = (GeStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            GeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (GeStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (GeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn owned_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| (GeStatus::InvalidArgument, "string contains NUL".into()))
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    (GeStatus::InvalidArgument, e.to_string())
}

/// Releases a string returned by the library.
#[no_mangle]
pub unsafe extern "C" fn ge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Byte buffer owned by the library.
#[repr(C)]
pub struct GeBytes {
    pub data: *mut u8,
    pub len: usize,
}

impl GeBytes {
    fn from_vec(v: Vec<u8>) -> Self {
        let boxed = v.into_boxed_slice();
        let len = boxed.len();
        GeBytes { data: Box::into_raw(boxed) as *mut u8, len }
    }
}

/// Releases a buffer returned by the library and clears it.
#[no_mangle]
pub unsafe extern "C" fn ge_bytes_free(b: *mut GeBytes) {
    if let Some(b) = b.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

// ---------------------------------------------------------------- simulation

/// Opaque simulation configuration.
pub struct GeSimConfig {
    inner: SimConfig,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeMetrics {
    pub messages_arrived: f64,
    pub accepted: f64,
    pub rejected: f64,
    pub total_read_minutes: f64,
    pub gross_benefit: f64,
    pub opportunity_cost: f64,
    pub net_benefit: f64,
    pub payments_collected: f64,
}

impl From<&MeanMetrics> for GeMetrics {
    fn from(m: &MeanMetrics) -> Self {
        GeMetrics {
            messages_arrived: m.messages_arrived,
            accepted: m.accepted,
            rejected: m.rejected,
            total_read_minutes: m.total_read_minutes,
            gross_benefit: m.gross_benefit,
            opportunity_cost: m.opportunity_cost,
            net_benefit: m.net_benefit,
            payments_collected: m.payments_collected,
        }
    }
}

/// Means and standard errors over the replications of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeSimResult {
    pub replications: u64,
    pub mean: GeMetrics,
    pub se: GeMetrics,
}

fn new_sim(cfg: SimConfig, out: *mut *mut GeSimConfig) -> Result<(), Failure> {
    cfg.validate().map_err(|e| (GeStatus::Config, e.to_string()))?;
    unsafe { put(out, Box::into_raw(Box::new(GeSimConfig { inner: cfg })), "out") }
}

/// Default configuration with the given arrival rate per minute.
#[no_mangle]
pub unsafe extern "C" fn ge_sim_config_new(
    lambda_per_min: f64,
    seed: u64,
    replications: u64,
    out: *mut *mut GeSimConfig,
) -> GeStatus {
    guard(|| new_sim(SimConfig::with_lambda(lambda_per_min, seed, replications), out))
}

/// Configuration from a JSON document; absent fields take defaults.
#[no_mangle]
pub unsafe extern "C" fn ge_sim_config_from_json(json: *const c_char, out: *mut *mut GeSimConfig) -> GeStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| (GeStatus::Config, e.to_string()))?;
        new_sim(cfg, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ge_sim_config_free(cfg: *mut GeSimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured replications under the named policy
/// (`accept_all`, `time_cap`, `fixed_price`, ...).
#[no_mangle]
pub unsafe extern "C" fn ge_simulate(cfg: *const GeSimConfig, policy: *const c_char, out: *mut GeSimResult) -> GeStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.inner;
        let kind: PolicyKind = str_arg(policy, "policy")?.parse().map_err(invalid)?;
        let s = simulate_cycle(cfg, &cfg.policy(kind), &default_time_model(cfg))
            .map_err(|e| (GeStatus::Simulation, e.to_string()))?;
        put(out, GeSimResult { replications: s.replications, mean: (&s.mean).into(), se: (&s.se).into() }, "out")
    })
}

/// Closed-form net benefit for `accept_all` or `time_cap`.
#[no_mangle]
pub unsafe extern "C" fn ge_analytic_net_benefit(
    cfg: *const GeSimConfig,
    policy: *const c_char,
    out: *mut f64,
) -> GeStatus {
    guard(|| {
        let cfg = &handle(cfg, "cfg")?.inner;
        let p: AnalyticPolicy = str_arg(policy, "policy")?.parse().map_err(invalid)?;
        put(out, analytic_net_benefit(p, cfg), "out")
    })
}

// -------------------------------------------------------------------- policy

/// Opaque pricing policy together with its running state.
pub struct GePolicy {
    cfg: PricingPolicyConfig,
    state: PolicyState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeOutcome {
    Accept = 0,
    Reject = 1,
    NeedsPayment = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeReason {
    AcceptAll = 0,
    WithinTimeCap = 1,
    TimeCapExceeded = 2,
    PaymentSufficient = 3,
    PaymentRequired = 4,
    WithinExclusiveBudget = 5,
    PositiveExpectedUtility = 6,
    NegativeExpectedUtility = 7,
}

impl From<ReasonCode> for GeReason {
    fn from(r: ReasonCode) -> Self {
        match r {
            ReasonCode::AcceptAll => GeReason::AcceptAll,
            ReasonCode::WithinTimeCap => GeReason::WithinTimeCap,
            ReasonCode::TimeCapExceeded => GeReason::TimeCapExceeded,
            ReasonCode::PaymentSufficient => GeReason::PaymentSufficient,
            ReasonCode::PaymentRequired => GeReason::PaymentRequired,
            ReasonCode::WithinExclusiveBudget => GeReason::WithinExclusiveBudget,
            ReasonCode::PositiveExpectedUtility => GeReason::PositiveExpectedUtility,
            ReasonCode::NegativeExpectedUtility => GeReason::NegativeExpectedUtility,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeDecision {
    pub outcome: GeOutcome,
    pub reason: GeReason,
    /// Price the sender must pay; meaningful for `NeedsPayment`.
    pub required_payment: f64,
}

/// Policy of the given kind with default parameters.
#[no_mangle]
pub unsafe extern "C" fn ge_policy_new(kind: *const c_char, out: *mut *mut GePolicy) -> GeStatus {
    guard(|| {
        let kind: PolicyKind = str_arg(kind, "kind")?.parse().map_err(invalid)?;
        let cfg = PricingPolicyConfig::new(kind);
        let state = PolicyState::new(&cfg);
        put(out, Box::into_raw(Box::new(GePolicy { cfg, state })), "out")
    })
}

/// Policy from a JSON configuration document.
#[no_mangle]
pub unsafe extern "C" fn ge_policy_from_json(json: *const c_char, out: *mut *mut GePolicy) -> GeStatus {
    guard(|| {
        let cfg: PricingPolicyConfig =
            serde_json::from_str(str_arg(json, "json")?).map_err(|e| (GeStatus::Config, e.to_string()))?;
        cfg.validate().map_err(|e| (GeStatus::Config, e.to_string()))?;
        let state = PolicyState::new(&cfg);
        put(out, Box::into_raw(Box::new(GePolicy { cfg, state })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ge_policy_free(p: *mut GePolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Decides on one offered message without changing the policy state.
#[no_mangle]
pub unsafe extern "C" fn ge_policy_decide(
    p: *const GePolicy,
    predicted_minutes: f64,
    predicted_benefit: f64,
    offered_payment: f64,
    out: *mut GeDecision,
) -> GeStatus {
    guard(|| {
        let p = handle(p, "policy")?;
        let d = policy::decide(&p.cfg, &p.state, predicted_minutes, predicted_benefit, offered_payment)
            .map_err(invalid)?;
        let (outcome, required_payment) = match d.outcome {
            Outcome::Accept => (GeOutcome::Accept, 0.0),
            Outcome::Reject => (GeOutcome::Reject, 0.0),
            Outcome::NeedsPayment(price) => (GeOutcome::NeedsPayment, price),
        };
        put(out, GeDecision { outcome, reason: d.reason.into(), required_payment }, "out")
    })
}

/// Records an accepted message of `predicted_minutes` in the policy state.
#[no_mangle]
pub unsafe extern "C" fn ge_policy_commit(p: *mut GePolicy, predicted_minutes: f64) -> GeStatus {
    guard(|| {
        let p = handle_mut(p, "policy")?;
        if !(predicted_minutes.is_finite() && predicted_minutes >= 0.0) {
            return Err(invalid("predicted_minutes must be finite and >= 0"));
        }
        p.state = policy::commit(&p.state, predicted_minutes);
        Ok(())
    })
}

/// Price the policy currently quotes.
#[no_mangle]
pub unsafe extern "C" fn ge_policy_quote(p: *const GePolicy, out: *mut f64) -> GeStatus {
    guard(|| {
        let p = handle(p, "policy")?;
        put(out, policy::quote_price(&p.cfg, &p.state), "out")
    })
}

// -------------------------------------------------------------------- ledger

/// Opaque payment token ledger.
pub struct GeLedger {
    inner: TokenLedger,
}

fn payment_failure(e: PaymentError) -> Failure {
    let status = match e {
        PaymentError::AlreadyRedeemed => GeStatus::DuplicateToken,
        PaymentError::UnknownToken | PaymentError::Insufficient { .. } => GeStatus::PaymentRequired,
        PaymentError::InvalidAmount | PaymentError::InvalidRefund => GeStatus::InvalidArgument,
        _ => GeStatus::Storage,
    };
    (status, e.to_string())
}

/// Ledger kept only in memory.
#[no_mangle]
pub unsafe extern "C" fn ge_ledger_new_in_memory(out: *mut *mut GeLedger) -> GeStatus {
    guard(|| put(out, Box::into_raw(Box::new(GeLedger { inner: TokenLedger::in_memory() })), "out"))
}

/// Ledger backed by an append-only log at `path`, replayed on open.
#[no_mangle]
pub unsafe extern "C" fn ge_ledger_open(path: *const c_char, out: *mut *mut GeLedger) -> GeStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = TokenLedger::open(Path::new(path)).map_err(|e| (GeStatus::Storage, format!("{path}: {e}")))?;
        put(out, Box::into_raw(Box::new(GeLedger { inner })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ge_ledger_free(l: *mut GeLedger) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// Issues a token worth `amount`. The token string is written to
/// `out_token` and must be released with [`ge_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ge_ledger_issue(
    l: *const GeLedger,
    payer: *const c_char,
    amount: f64,
    out_token: *mut *mut c_char,
) -> GeStatus {
    guard(|| {
        let l = handle(l, "ledger")?;
        if out_token.is_null() {
            return Err(null("out_token"));
        }
        let tok = l.inner.issue(str_arg(payer, "payer")?, amount).map_err(payment_failure)?;
        put(out_token, owned_string(&tok.0)?, "out_token")
    })
}

/// Redeems a token covering `required`; its face amount goes to `out_amount`.
#[no_mangle]
pub unsafe extern "C" fn ge_ledger_redeem(
    l: *const GeLedger,
    token: *const c_char,
    required: f64,
    payee: *const c_char,
    out_amount: *mut f64,
) -> GeStatus {
    guard(|| {
        let l = handle(l, "ledger")?;
        let tok = PaymentToken(str_arg(token, "token")?.to_string());
        let amount = l.inner.verify_and_redeem(&tok, required, str_arg(payee, "payee")?).map_err(payment_failure)?;
        put(out_amount, amount, "out_amount")
    })
}

/// Returns a redeemed token to its payer.
#[no_mangle]
pub unsafe extern "C" fn ge_ledger_refund(l: *const GeLedger, token: *const c_char) -> GeStatus {
    guard(|| {
        let l = handle(l, "ledger")?;
        let tok = PaymentToken(str_arg(token, "token")?.to_string());
        l.inner.refund(&tok).map_err(payment_failure)
    })
}

// --------------------------------------------------------------------- codec

/// Opaque decoded protocol frame.
pub struct GeFrame {
    inner: Frame,
}

/// Decodes exactly one wire frame (line plus any DATA body).
#[no_mangle]
pub unsafe extern "C" fn ge_frame_decode(data: *const u8, len: usize, out: *mut *mut GeFrame) -> GeStatus {
    guard(|| {
        if data.is_null() && len > 0 {
            return Err(null("data"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let inner = decode_frame(bytes).map_err(|e| (GeStatus::Protocol, e.to_string()))?;
        put(out, Box::into_raw(Box::new(GeFrame { inner })), "out")
    })
}

/// A REJECTED frame with the given response code.
#[no_mangle]
pub unsafe extern "C" fn ge_frame_new_rejected(code: u16, reason: *const c_char, out: *mut *mut GeFrame) -> GeStatus {
    guard(|| {
        let code = ResponseCode::from_u16(code).ok_or_else(|| invalid(format!("unknown response code {code}")))?;
        let inner = Frame::rejected(code, str_arg(reason, "reason")?);
        inner.validate().map_err(|e| (GeStatus::Protocol, e.to_string()))?;
        put(out, Box::into_raw(Box::new(GeFrame { inner })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ge_frame_free(f: *mut GeFrame) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// The frame's verb, such as `QUOTE`. Release with [`ge_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ge_frame_verb(f: *const GeFrame, out: *mut *mut c_char) -> GeStatus {
    guard(|| {
        let f = handle(f, "frame")?;
        put(out, owned_string(f.inner.verb())?, "out")
    })
}

/// Response code of a REJECTED frame; `InvalidArgument` for other verbs.
#[no_mangle]
pub unsafe extern "C" fn ge_frame_code(f: *const GeFrame, out: *mut u16) -> GeStatus {
    guard(|| match &handle(f, "frame")?.inner {
        Frame::Rejected { code, .. } => put(out, *code as u16, "out"),
        other => Err(invalid(format!("{} carries no response code", other.verb()))),
    })
}

/// Wire encoding of the frame. Release with [`ge_bytes_free`].
#[no_mangle]
pub unsafe extern "C" fn ge_frame_encode(f: *const GeFrame, out: *mut GeBytes) -> GeStatus {
    guard(|| {
        let f = handle(f, "frame")?;
        put(out, GeBytes::from_vec(encode_frame(&f.inner)), "out")
    })
}

/// Short description of a response code. Release with [`ge_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ge_response_code_describe(code: u16, out: *mut *mut c_char) -> GeStatus {
    guard(|| {
        let c = ResponseCode::from_u16(code).ok_or_else(|| invalid(format!("unknown response code {code}")))?;
        put(out, owned_string(c.describe())?, "out")
    })
}
