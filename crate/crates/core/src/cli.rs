//! Command-line front end. [`run`] takes argv and returns the exit code so
//! it can be driven from tests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::error::ConfigError;
use crate::model::{Catalog, Message, ScoringConfig, SenderProfile, Thresholds};
use crate::policy::{PolicyKind, PricingPolicyConfig};
use crate::protocol::retrieval::{read_reply, FetchReply, FetchRequest};
use crate::protocol::Feedback;
use crate::services::daemon::{
    load_json, start_identity, start_payment, IdentityDaemonConfig, PaymentDaemonConfig, ReceiverDaemonConfig,
    ReceiverService,
};
use crate::services::sending::{send_with_retries, submit, Outgoing, RetryPolicy, SenderDaemonConfig, SenderService, SubmitRequest};
use crate::services::wire::RemotePayment;
use crate::sim::sweep::default_price_grid;
use crate::sim::{
    analytic_net_benefit, default_time_model, run_cos_experiment, simulate_cycle, sweep_lambda, sweep_price,
    write_cos_csv, write_lambda_csv, write_metrics_csv, write_price_csv, AnalyticPolicy, BenefitScenario,
    MessagePopulation, ScenarioKind, SimConfig, SimSummary,
};

pub const CONFIG_ENV: &str = "GRIDEMAIL_CONFIG";

/// Parses a per-minute rate written as a decimal or as `a/b`.
pub fn parse_lambda(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?;
            if b == 0.0 {
                return Err("division by zero".into());
            }
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("rate `{s}` must be finite and >= 0"))
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

fn parse_analytic(s: &str) -> Result<AnalyticPolicy, String> {
    s.parse()
}

#[derive(Parser, Debug)]
#[command(name = "gridemail", version, about = "Economically regulated messaging: simulation, services and clients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate login cycles under one admission policy.
    Simulate(SimulateArgs),
    /// Net benefit against arrival rate for the closed-form policies.
    SweepLambda(SweepLambdaArgs),
    /// Accepted receiver benefit against a fixed price.
    SweepPrice(SweepPriceArgs),
    /// Three classes of service against a single fixed-price class.
    CosExperiment(CosArgs),
    /// Run the receiver service.
    ServeReceiver(ServeArgs),
    /// Run the sender service.
    ServeSender(ServeArgs),
    /// Run the payment service.
    ServePayment(ServeArgs),
    /// Run the identity service.
    ServeIdentity(ServeArgs),
    /// Send one message and report the outcome.
    Send(SendArgs),
    /// Retrieve queued messages from a receiver.
    Fetch(FetchArgs),
    /// Check a configuration file.
    ValidateConfig(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct SimCommon {
    /// PRNG seed; runs with equal seeds are identical.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub replications: u64,
    /// JSON simulation config; flags override its fields.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Write CSV here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Arrivals per minute, e.g. 0.0166667 or 1/60.
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: f64,
    #[arg(long, value_parser = parse_policy, default_value = "accept-all")]
    pub policy: PolicyKind,
    /// Base price for priced policies.
    #[arg(long)]
    pub base_price: Option<f64>,
    /// Congestion price increment per queued message.
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[command(flatten)]
    pub common: SimCommon,
}

#[derive(Args, Debug)]
pub struct SweepLambdaArgs {
    /// Comma-separated rates per minute.
    #[arg(long, value_delimiter = ',', value_parser = parse_lambda,
          default_value = "1/120,1/90,1/60,1/45,1/30")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_analytic, default_value = "accept-all,time-cap")]
    pub policies: Vec<AnalyticPolicy>,
    #[command(flatten)]
    pub common: SimCommon,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioChoice {
    Correlated,
    RecipientSkewed,
    All,
}

#[derive(Args, Debug)]
pub struct SweepPriceArgs {
    #[arg(long, value_enum, default_value_t = ScenarioChoice::All)]
    pub scenario: ScenarioChoice,
    /// Comma-separated ascending prices; 0..=10 by default.
    #[arg(long, value_delimiter = ',')]
    pub prices: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CosArgs {
    #[arg(long, value_parser = parse_lambda, default_value = "1/60")]
    pub lambda: f64,
    /// Catalog file; the canonical three-class catalog by default.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[command(flatten)]
    pub common: SimCommon,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Daemon JSON config.
    #[arg(long, env = CONFIG_ENV)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct SendArgs {
    /// Receiver service address (direct mode).
    #[arg(long, conflicts_with = "via", required_unless_present = "via")]
    pub to: Option<String>,
    /// Sender service address; negotiation is delegated to it.
    #[arg(long)]
    pub via: Option<String>,
    /// Payment service address, needed for priced classes in direct mode.
    #[arg(long)]
    pub payment: Option<String>,
    #[arg(long = "from")]
    pub sender: String,
    #[arg(long)]
    pub recipient: String,
    #[arg(long)]
    pub message_id: Option<String>,
    /// Body text.
    #[arg(long, conflicts_with = "body_file", required_unless_present = "body_file")]
    pub body: Option<String>,
    #[arg(long)]
    pub body_file: Option<PathBuf>,
    #[arg(long)]
    pub budget: f64,
    #[arg(long)]
    pub max_latency_s: Option<f64>,
    /// Ask for this class.
    #[arg(long)]
    pub cos: Option<String>,
    #[arg(long, default_value = "plain")]
    pub format_tag: String,
    /// Shared secret for the authenticator (direct mode).
    #[arg(long)]
    pub secret: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub attempts: u32,
    #[arg(long, default_value_t = 1000)]
    pub backoff_ms: u64,
}

#[derive(Args, Debug)]
pub struct FetchArgs {
    /// Receiver service address.
    #[arg(long = "from")]
    pub addr: String,
    #[arg(long)]
    pub cos: String,
    #[arg(long)]
    pub recipient: String,
    #[arg(long)]
    pub credential: String,
    #[arg(long, default_value_t = 10)]
    pub max: usize,
    /// Write each body to `<dir>/<receipt>-<message_id>`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConfigKind {
    Receiver,
    Sender,
    Payment,
    Identity,
    Catalog,
    Scoring,
    Sim,
    Policy,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub kind: ConfigKind,
    #[arg(long, env = CONFIG_ENV)]
    pub config: PathBuf,
}

/// A failure reported with exit code 1.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return if code == 0 { 0 } else { 2 };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Simulate(a) => simulate(a, out),
        Command::SweepLambda(a) => cmd_sweep_lambda(a, out),
        Command::SweepPrice(a) => cmd_sweep_price(a, out),
        Command::CosExperiment(a) => cmd_cos(a, out),
        Command::ServeReceiver(a) => serve_receiver(&a.config, out),
        Command::ServeSender(a) => serve_sender(&a.config, out),
        Command::ServePayment(a) => serve_payment(&a.config, out),
        Command::ServeIdentity(a) => serve_identity(&a.config, out),
        Command::Send(a) => cmd_send(a, out, err),
        Command::Fetch(a) => cmd_fetch(a, out),
        Command::ValidateConfig(a) => validate(a, out),
    }
}

fn sim_config(common: &SimCommon) -> Result<SimConfig, Failure> {
    let mut cfg: SimConfig = match &common.config {
        Some(p) => load_json(p)?,
        None => SimConfig::default(),
    };
    cfg.seed = common.seed;
    cfg.replications = common.replications;
    Ok(cfg)
}

/// Runs `f` against the output file, or standard output when none is set.
fn with_output(path: &Option<PathBuf>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<(), Failure>) -> CmdResult {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(|e| Failure(format!("{}: {e}", p.display())))?);
            f(&mut w)?;
            w.flush()?;
        }
        None => f(out)?,
    }
    Ok(0)
}

fn print_summary(out: &mut dyn Write, policy: &str, lambda: f64, s: &SimSummary, analytic: Option<f64>) -> std::io::Result<()> {
    let m = &s.mean;
    let rows: Vec<(&str, String)> = vec![
        ("policy", policy.to_string()),
        ("lambda_per_min", lambda.to_string()),
        ("replications", s.replications.to_string()),
        ("messages_arrived", format!("{:.4}", m.messages_arrived)),
        ("accepted", format!("{:.4}", m.accepted)),
        ("rejected", format!("{:.4}", m.rejected)),
        ("total_read_minutes", format!("{:.4}", m.total_read_minutes)),
        ("gross_benefit", format!("{:.4}", m.gross_benefit)),
        ("opportunity_cost", format!("{:.4}", m.opportunity_cost)),
        ("net_benefit", format!("{:.4} ± {:.4} (1 SE)", m.net_benefit, s.se.net_benefit)),
        ("payments_collected", format!("{:.4}", m.payments_collected)),
        ("analytic_net_benefit", analytic.map_or("n/a".into(), |a| format!("{a:.4}"))),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        writeln!(out, "{k:<width$}  {v}")?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = sim_config(&a.common)?;
    cfg.lambda_per_min = a.lambda;
    let mut policy: PricingPolicyConfig = cfg.policy(a.policy);
    if let Some(p) = a.base_price {
        policy.base_price = p;
    }
    if let Some(s) = a.slope {
        policy.congestion_slope = s;
    }
    let summary = simulate_cycle(&cfg, &policy, &default_time_model(&cfg))?;
    let analytic = a.policy.to_string().parse::<AnalyticPolicy>().ok().map(|p| analytic_net_benefit(p, &cfg));
    let name = a.policy.as_str();
    match a.format {
        OutputFormat::Csv => with_output(&a.common.output, out, |w| {
            Ok(write_metrics_csv(name, cfg.lambda_per_min, &summary, analytic, w)?)
        }),
        OutputFormat::Text => with_output(&a.common.output, out, |w| {
            Ok(print_summary(w, name, cfg.lambda_per_min, &summary, analytic)?)
        }),
    }
}

fn cmd_sweep_lambda(a: SweepLambdaArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = sim_config(&a.common)?;
    let rows = sweep_lambda(&cfg, &a.lambdas, &a.policies)?;
    with_output(&a.common.output, out, |w| Ok(write_lambda_csv(&rows, w)?))
}

fn cmd_sweep_price(a: SweepPriceArgs, out: &mut dyn Write) -> CmdResult {
    let prices = a.prices.unwrap_or_else(default_price_grid);
    let kinds = match a.scenario {
        ScenarioChoice::Correlated => vec![ScenarioKind::Correlated],
        ScenarioChoice::RecipientSkewed => vec![ScenarioKind::RecipientSkewed],
        ScenarioChoice::All => vec![ScenarioKind::Correlated, ScenarioKind::RecipientSkewed],
    };
    let mut rows = Vec::new();
    for k in kinds {
        rows.extend(sweep_price(&BenefitScenario::of_kind(k), &prices, a.seed)?);
    }
    with_output(&a.output, out, |w| Ok(write_price_csv(&rows, w)?))
}

fn cmd_cos(a: CosArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = sim_config(&a.common)?;
    cfg.lambda_per_min = a.lambda;
    let catalog = match &a.catalog {
        Some(p) => Catalog::load(p)?,
        None => Catalog::canonical(MessagePopulation::mixed().trusted_senders),
    };
    let report = run_cos_experiment(&catalog, &MessagePopulation::mixed(), &cfg, Thresholds::default(), cfg.seed)?;
    with_output(&a.common.output, out, |w| Ok(write_cos_csv(&report, w)?))
}

fn announce(out: &mut dyn Write, what: &str, addr: std::net::SocketAddr) -> std::io::Result<()> {
    writeln!(out, "{what} listening on {addr}")?;
    out.flush()
}

fn serve_receiver(path: &Path, out: &mut dyn Write) -> CmdResult {
    let cfg = ReceiverDaemonConfig::load(path)?;
    let svc = Arc::new(ReceiverService::from_daemon_config(&cfg)?);
    let handle = svc.start(TcpListener::bind(&cfg.listen)?)?;
    announce(out, "receiver", handle.local_addr())?;
    handle.join();
    Ok(0)
}

fn serve_sender(path: &Path, out: &mut dyn Write) -> CmdResult {
    let cfg: SenderDaemonConfig = load_json(path)?;
    let listener = TcpListener::bind(&cfg.listen)?;
    let handle = SenderService { config: cfg }.start(listener)?;
    announce(out, "sender", handle.local_addr())?;
    handle.join();
    Ok(0)
}

fn serve_payment(path: &Path, out: &mut dyn Write) -> CmdResult {
    let mut cfg: PaymentDaemonConfig = load_json(path)?;
    if cfg.ledger_path.is_relative() {
        cfg.ledger_path = path.parent().unwrap_or(Path::new(".")).join(&cfg.ledger_path);
    }
    let (handle, _) = start_payment(&cfg)?;
    announce(out, "payment", handle.local_addr())?;
    handle.join();
    Ok(0)
}

fn serve_identity(path: &Path, out: &mut dyn Write) -> CmdResult {
    let cfg: IdentityDaemonConfig = load_json(path)?;
    let handle = start_identity(&cfg)?;
    announce(out, "identity", handle.local_addr())?;
    handle.join();
    Ok(0)
}

fn report_feedback(fb: &Feedback, out: &mut dyn Write) -> CmdResult {
    let code = fb.code().map_or("-".to_string(), |c| c.to_string());
    writeln!(out, "{fb} code={code}")?;
    Ok(if fb.is_connection_loss() { 1 } else { fb.exit_code() })
}

fn cmd_send(a: SendArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let body = match (&a.body, &a.body_file) {
        (Some(b), _) => b.clone().into_bytes(),
        (None, Some(p)) => std::fs::read(p).map_err(|e| Failure(format!("{}: {e}", p.display())))?,
        (None, None) => unreachable!("clap requires one body source"),
    };
    let message_id = a.message_id.clone().unwrap_or_else(|| format!("{:032x}", rand::rng().random::<u128>()));
    let profile = SenderProfile { max_latency_s: a.max_latency_s, ..SenderProfile::with_budget(a.budget) };
    profile.validate()?;
    if let Some(via) = &a.via {
        let req = SubmitRequest {
            message_id,
            recipient_id: a.recipient.clone(),
            format_tag: a.format_tag.clone(),
            cos_id: a.cos.clone(),
            stamp: None,
            profile,
        };
        return match submit(via, &req, &body) {
            Ok((_, fb)) => report_feedback(&fb, out),
            Err(e) => {
                writeln!(err, "error: sender service {via}: {e}")?;
                writeln!(out, "REJECTED 550 connection failed code=550")?;
                Ok(1)
            }
        };
    }
    let to = a.to.as_deref().expect("clap requires --to or --via");
    let mut message = Message::new(message_id, a.sender.clone(), a.recipient.clone(), body);
    message.format_tag = a.format_tag.clone();
    message.cos_id = a.cos.clone();
    let payment = a.payment.as_ref().map(|p| RemotePayment::new(p.clone()));
    let sender = a.sender.clone();
    let mut tokens = |amount: f64| match &payment {
        Some(p) => p.issue(&sender, amount).map_err(|e| e.to_string()),
        None => Err("no payment service configured (--payment)".to_string()),
    };
    let outgoing = Outgoing { receiver_addr: to, profile, message, secret: a.secret.as_deref().map(str::as_bytes) };
    let retry = RetryPolicy { attempts: a.attempts, initial_backoff_ms: a.backoff_ms };
    let fb = send_with_retries(&outgoing, retry, &mut tokens);
    report_feedback(&fb, out)
}

fn cmd_fetch(a: FetchArgs, out: &mut dyn Write) -> CmdResult {
    let req = FetchRequest { cos_id: a.cos, max_n: a.max, recipient_id: a.recipient, credential: a.credential };
    let stream = std::net::TcpStream::connect(&a.addr).map_err(|e| Failure(format!("{}: {e}", a.addr)))?;
    stream.set_read_timeout(Some(crate::services::wire::IO_TIMEOUT))?;
    let mut writer = stream.try_clone()?;
    writer.write_all(&req.encode()?)?;
    let reply = read_reply(&mut std::io::BufReader::new(stream))?;
    match reply {
        FetchReply::Messages(msgs) => {
            for m in &msgs {
                writeln!(out, "receipt={} id={} sender={} bytes={}", m.receipt_id, m.message_id, m.sender_id, m.body.len())?;
                match &a.out_dir {
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        std::fs::write(dir.join(format!("{}-{}", m.receipt_id, m.message_id)), &m.body)?;
                    }
                    None => {
                        out.write_all(&m.body)?;
                        writeln!(out)?;
                    }
                }
            }
            writeln!(out, "fetched {}", msgs.len())?;
            Ok(0)
        }
        FetchReply::Error { code, reason } => Err(Failure(format!("fetch refused: {code} {reason}"))),
    }
}

fn validate(a: ValidateArgs, out: &mut dyn Write) -> CmdResult {
    let p = &a.config;
    let res: Result<(), ConfigError> = match a.kind {
        ConfigKind::Receiver => ReceiverDaemonConfig::load(p).and_then(|c| c.validate()),
        ConfigKind::Sender => load_json::<SenderDaemonConfig>(p).map(|_| ()),
        ConfigKind::Payment => load_json::<PaymentDaemonConfig>(p).map(|_| ()),
        ConfigKind::Identity => load_json::<IdentityDaemonConfig>(p).and_then(|c| {
            crate::services::IdentityRegistry::from_file(&crate::services::identity::RegistryFile { secrets: c.secrets })
                .map(|_| ())
        }),
        ConfigKind::Catalog => Catalog::load(p).map(|_| ()),
        ConfigKind::Scoring => ScoringConfig::load(p).map(|_| ()),
        ConfigKind::Sim => load_json::<SimConfig>(p)
            .and_then(|c| c.validate().map_err(|e| ConfigError::Invalid { field: "sim", reason: e.to_string() })),
        ConfigKind::Policy => load_json::<PricingPolicyConfig>(p).and_then(|c| c.validate()),
    };
    res?;
    writeln!(out, "ok: {}", p.display())?;
    Ok(0)
}
