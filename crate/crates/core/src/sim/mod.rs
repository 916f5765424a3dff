//! Deterministic evaluation of admission policies over login cycles.
//!
//! Outputs are pure functions of configuration and seed. CSV writers here
//! define the column layout used for plotting.

pub mod cos;
pub mod cycle;
pub mod rng;
pub mod sweep;

use std::io::Write;

use thiserror::Error;

pub use cos::{run_cos_experiment, CosExperimentReport, MessagePopulation, PopulationComponent};
pub use cycle::{
    analytic_net_benefit, default_time_model, run_replication, simulate_cycle, AnalyticPolicy,
    CycleMetrics, MeanMetrics, SimConfig, SimSummary,
};
pub use sweep::{sweep_lambda, sweep_price, BenefitScenario, LambdaRow, PriceRow, ScenarioKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub const LAMBDA_HEADER: [&str; 6] = ["policy", "lambda", "analytic", "sim_mean", "sim_se", "replications"];
pub const PRICE_HEADER: [&str; 6] = [
    "policy",
    "price",
    "scenario",
    "accepted_count",
    "mean_receiver_benefit",
    "total_receiver_benefit",
];
pub const METRICS_HEADER: [&str; 13] = [
    "policy",
    "lambda",
    "replications",
    "messages_arrived",
    "accepted",
    "rejected",
    "total_read_minutes",
    "gross_benefit",
    "opportunity_cost",
    "net_benefit",
    "net_benefit_se",
    "payments_collected",
    "analytic",
];
pub const COS_HEADER: [&str; 12] = [
    "policy",
    "cos_id",
    "replications",
    "messages_arrived",
    "accepted",
    "rejected",
    "total_read_minutes",
    "gross_benefit",
    "opportunity_cost",
    "net_benefit",
    "net_benefit_se",
    "payments_collected",
];

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

pub fn write_lambda_csv<W: Write>(rows: &[LambdaRow], out: W) -> Result<(), SimError> {
    let mut w = writer(out);
    w.write_record(LAMBDA_HEADER)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.lambda.to_string(),
            r.analytic.to_string(),
            r.sim_mean.to_string(),
            r.sim_se.to_string(),
            r.replications.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_price_csv<W: Write>(rows: &[PriceRow], out: W) -> Result<(), SimError> {
    let mut w = writer(out);
    w.write_record(PRICE_HEADER)?;
    for r in rows {
        w.write_record([
            "fixed_price".to_string(),
            r.price.to_string(),
            r.scenario.clone(),
            r.accepted_count.to_string(),
            r.mean_receiver_benefit.to_string(),
            r.total_receiver_benefit.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summary_fields(s: &SimSummary) -> Vec<String> {
    let m = &s.mean;
    vec![
        s.replications.to_string(),
        m.messages_arrived.to_string(),
        m.accepted.to_string(),
        m.rejected.to_string(),
        m.total_read_minutes.to_string(),
        m.gross_benefit.to_string(),
        m.opportunity_cost.to_string(),
        m.net_benefit.to_string(),
        s.se.net_benefit.to_string(),
        m.payments_collected.to_string(),
    ]
}

/// One row for a `simulate` run; `analytic` is empty when no closed form exists.
pub fn write_metrics_csv<W: Write>(
    policy: &str,
    lambda: f64,
    summary: &SimSummary,
    analytic: Option<f64>,
    out: W,
) -> Result<(), SimError> {
    let mut w = writer(out);
    w.write_record(METRICS_HEADER)?;
    let mut row = vec![policy.to_string(), lambda.to_string()];
    row.extend(summary_fields(summary));
    row.push(analytic.map(|a| a.to_string()).unwrap_or_default());
    w.write_record(row)?;
    w.flush()?;
    Ok(())
}

/// Rows: one per class, `unrouted`, `total`, then the `baseline`.
pub fn write_cos_csv<W: Write>(report: &CosExperimentReport, out: W) -> Result<(), SimError> {
    let mut w = writer(out);
    w.write_record(COS_HEADER)?;
    let mut emit = |policy: &str, cos: &str, s: &SimSummary| -> Result<(), SimError> {
        let mut row = vec![policy.to_string(), cos.to_string()];
        row.extend(summary_fields(s));
        w.write_record(row)?;
        Ok(())
    };
    for c in &report.per_cos {
        emit("classes_of_service", &c.cos_id, &c.metrics)?;
    }
    emit("classes_of_service", "unrouted", &report.unrouted)?;
    emit("classes_of_service", "total", &report.total)?;
    emit("fixed_price_baseline", "all", &report.baseline)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_csv_round_trips() {
        let tmpl = SimConfig::with_lambda(0.0, 42, 50);
        let rows = sweep_lambda(&tmpl, &[1.0 / 60.0, 1.0 / 30.0], &[AnalyticPolicy::AcceptAll]).unwrap();
        let mut buf = Vec::new();
        write_lambda_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("policy,lambda,analytic,sim_mean,sim_se,replications\n"));
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let back: Vec<LambdaRow> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn price_csv_round_trips_including_nan() {
        let rows = sweep_price(&BenefitScenario::correlated(), &[0.0, 1e9], 7).unwrap();
        let mut buf = Vec::new();
        write_price_csv(&rows, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let recs: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0][3].parse::<u64>().unwrap(), rows[0].accepted_count);
        assert_eq!(recs[0][4].parse::<f64>().unwrap(), rows[0].mean_receiver_benefit);
        assert!(recs[1][4].parse::<f64>().unwrap().is_nan());
    }
}
