//! Exact expectation of the stochastic login cycle, as an independent check
//! on the simulator. Conditions on the Poisson arrival count and uses the
//! closed form of E[(S - B)+] for a normal sum S.

use gridemail::sim::{AnalyticPolicy, SimConfig};
use statrs::distribution::{Continuous, ContinuousCDF, Discrete, Normal, Poisson};

/// E[(X - b)+] for X ~ N(m, s²).
pub fn normal_excess(m: f64, s: f64, b: f64) -> f64 {
    if s == 0.0 {
        return (m - b).max(0.0);
    }
    let z = Normal::standard();
    let d = (m - b) / s;
    (m - b) * z.cdf(d) + s * z.pdf(d)
}

/// Expected net benefit per cycle, ignoring the 0.1-minute clamp on read
/// times (its effect is far below simulation noise at the defaults).
pub fn expected_net_benefit(policy: AnalyticPolicy, cfg: &SimConfig) -> f64 {
    let mu = cfg.lambda_per_min * cfg.cycle_minutes;
    if mu == 0.0 {
        return 0.0;
    }
    let pois = Poisson::new(mu).unwrap();
    let cap_count = (cfg.exclusive_budget_minutes / cfg.mean_read_minutes + 1e-9).floor() as u64;
    let n_max = (mu + 20.0 * mu.sqrt() + 30.0) as u64;
    let mut total = 0.0;
    for n in 0..=n_max {
        let k = match policy {
            AnalyticPolicy::AcceptAll => n,
            AnalyticPolicy::TimeCap => n.min(cap_count),
        } as f64;
        let gross = cfg.mean_benefit_rate * cfg.mean_read_minutes * k;
        let excess = normal_excess(k * cfg.mean_read_minutes, k.sqrt() * cfg.read_sd_minutes, cfg.exclusive_budget_minutes);
        total += pois.pmf(n) * (gross - cfg.opportunity_rate * excess);
    }
    total
}
