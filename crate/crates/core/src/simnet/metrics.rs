use std::fmt::Write as _;

use crate::discovery::{Cause, Variant};

/// Minimum, mean and maximum of a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples(Vec<f64>);

impl Samples {
    pub fn push(&mut self, v: f64) {
        self.0.push(v);
    }

    pub fn extend(&mut self, other: &Samples) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn summary(&self) -> Option<Summary> {
        if self.0.is_empty() {
            return None;
        }
        let min = self.0.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.0.iter().sum::<f64>() / self.0.len() as f64;
        // keep min <= mean <= max under rounding
        Some(Summary {
            count: self.0.len(),
            min,
            mean: mean.clamp(min, max),
            max,
        })
    }

    pub fn mean(&self) -> Option<f64> {
        self.summary().map(|s| s.mean)
    }
}

pub const SERVICE_SETUP: &str = "service_setup_ms";
pub const NETWORK_SETUP: &str = "network_setup_ms";
pub const SUBSCRIPTION_SETUP: &str = "subscription_setup_ms";
pub const CREATE_SIGNATURE: &str = "create_signature_ms";
pub const VERIFY_SIGNATURE: &str = "verify_signature_ms";
pub const KEY_AGREEMENT: &str = "key_agreement_ms";
pub const RESOLVE_PUB_SVCB: &str = "resolve_pub_svcb_ms";
pub const RESOLVE_SUB_TLSA: &str = "resolve_sub_tlsa_ms";
pub const RESOLVE_PUB_TLSA: &str = "resolve_pub_tlsa_ms";
pub const SUBSCRIPTIONS_EXPECTED: &str = "subscriptions_expected";
pub const SUBSCRIPTIONS_ESTABLISHED: &str = "subscriptions_established";
pub const INSECURE_ACKS: &str = "insecure_acks";
pub const MESSAGES_SENT: &str = "messages_sent";
pub const MESSAGES_DELIVERED: &str = "messages_delivered";
pub const MESSAGES_DROPPED: &str = "messages_dropped";
pub const MESSAGES_BLOCKED: &str = "messages_blocked";
pub const MESSAGES_UNROUTABLE: &str = "messages_unroutable";
pub const DNS_QUERIES: &str = "dns_queries";
pub const INSECURE_ANSWERS: &str = "insecure_answers";
pub const UPSTREAM_FETCHES: &str = "upstream_fetches";
pub const CRYPTO_OPS: &str = "crypto_ops";
pub const REJECTIONS: &str = "rejections";

/// Row order of the metrics CSV; timing rows first, in results-table order.
const ORDER: [&str; 22] = [
    SERVICE_SETUP,
    NETWORK_SETUP,
    SUBSCRIPTION_SETUP,
    CREATE_SIGNATURE,
    VERIFY_SIGNATURE,
    KEY_AGREEMENT,
    RESOLVE_PUB_SVCB,
    RESOLVE_SUB_TLSA,
    RESOLVE_PUB_TLSA,
    SUBSCRIPTIONS_EXPECTED,
    SUBSCRIPTIONS_ESTABLISHED,
    INSECURE_ACKS,
    MESSAGES_SENT,
    MESSAGES_DELIVERED,
    MESSAGES_DROPPED,
    MESSAGES_BLOCKED,
    MESSAGES_UNROUTABLE,
    DNS_QUERIES,
    INSECURE_ANSWERS,
    UPSTREAM_FETCHES,
    CRYPTO_OPS,
    REJECTIONS,
];

/// Prefix of rows holding wall-clock measurements. They vary between runs
/// and are left out of reproducibility comparisons.
pub const MEASURED_PREFIX: &str = "measured_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub time_us: u64,
    pub endpoint: String,
    pub cause: Cause,
    pub peer: Option<String>,
}

/// A subscriber that did not reach the subscribed state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub subscriber: String,
    /// Last rejection the subscriber or its publisher reported for it.
    pub cause: Option<Cause>,
}

/// Metrics of one or more runs of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub variant: Variant,
    pub runs: u32,
    rows: Vec<(String, Samples)>,
    pub rejections: Vec<Rejection>,
    pub failures: Vec<Failure>,
}

impl RunMetrics {
    pub fn new(variant: Variant) -> Self {
        let rows = ORDER
            .iter()
            .map(|n| (n.to_string(), Samples::default()))
            .collect();
        RunMetrics {
            variant,
            runs: 1,
            rows,
            rejections: Vec::new(),
            failures: Vec::new(),
        }
    }

    fn slot(&mut self, name: &str) -> &mut Samples {
        if let Some(i) = self.rows.iter().position(|(n, _)| n == name) {
            return &mut self.rows[i].1;
        }
        self.rows.push((name.to_string(), Samples::default()));
        &mut self.rows.last_mut().expect("just pushed").1
    }

    pub fn record(&mut self, name: &str, value: f64) {
        self.slot(name).push(value);
    }

    pub fn get(&self, name: &str) -> Option<&Samples> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Single-valued counter of the first run, or the sum over merged runs.
    pub fn count(&self, name: &str) -> u64 {
        self.get(name)
            .map(|s| s.values().iter().sum::<f64>() as u64)
            .unwrap_or(0)
    }

    /// Replaces the samples of a row with a single value.
    pub fn replace(&mut self, name: &str, value: f64) {
        let slot = self.slot(name);
        *slot = Samples::default();
        slot.push(value);
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &Samples)> {
        self.rows.iter().map(|(n, s)| (n.as_str(), s))
    }

    /// Adds the samples of another run.
    pub fn merge(&mut self, other: &RunMetrics) {
        for (name, samples) in &other.rows {
            self.slot(name).extend(samples);
        }
        self.rejections.extend(other.rejections.iter().cloned());
        self.failures.extend(other.failures.iter().cloned());
        self.runs += other.runs;
    }

    /// `metric,min,mean,max`; rows without samples are omitted.
    pub fn to_csv(&self, include_measured: bool) -> String {
        let mut out = String::from("metric,min,mean,max\n");
        for (name, samples) in &self.rows {
            if !include_measured && name.starts_with(MEASURED_PREFIX) {
                continue;
            }
            if let Some(s) = samples.summary() {
                let _ = writeln!(out, "{name},{:.4},{:.4},{:.4}", s.min, s.mean, s.max);
            }
        }
        out
    }
}
