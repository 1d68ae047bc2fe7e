use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net_check::NetCheck;
use crate::error::Result;
use crate::metric_models::SampleSet;
use crate::net_estimators::{DappTable, ParameterLedger};

/// Which bound the near-pair rule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NearRule {
    /// `|d^app − d| ≤ ε₁`.
    #[default]
    Accuracy,
    /// `|d^app − d| ≤ 2ρ/c₅ + h₀`, the noiseless bound.
    Noiseless,
}

/// Thresholds for an error report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRule {
    /// Pairs with true distance below this are "near".
    pub near_radius: f64,
    /// Largest admissible `|estimate − d|` on near pairs.
    pub near_bound: f64,
    /// Smallest admissible estimate on far pairs.
    pub far_floor: f64,
    /// Largest admissible violation rate in each class.
    pub allowed_rate: f64,
}

impl ReportRule {
    /// Thresholds for `d^app`: near means `d < r₁`, far pairs need `d^app ≥ r₁ − ε₁`.
    pub fn from_ledger(ledger: &ParameterLedger, near: NearRule, allowed_rate: f64) -> Self {
        ReportRule {
            near_radius: ledger.r1,
            near_bound: match near {
                NearRule::Accuracy => ledger.eps1,
                NearRule::Noiseless => ledger.noiseless_bound(),
            },
            far_floor: ledger.r1 - ledger.eps1,
            allowed_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub i: usize,
    pub j: usize,
    pub truth: f64,
    pub estimate: f64,
}

impl PairError {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - self.truth).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Quantiles {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; all zero for an empty list.
    pub fn of(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Quantiles::default();
        }
        values.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
            values[rank - 1]
        };
        Quantiles {
            q50: at(0.5),
            q90: at(0.9),
            q99: at(0.99),
            max: values[values.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rule: ReportRule,
    pub near_pairs: usize,
    pub far_pairs: usize,
    pub near_violations: usize,
    pub far_violations: usize,
    pub near_violation_rate: f64,
    pub far_violation_rate: f64,
    /// Quantiles of `|estimate − d|` on near pairs.
    pub near_error: Quantiles,
    /// Quantiles of `|estimate − d|` on far pairs.
    pub far_error: Quantiles,
    /// Share of pairs whose estimate sits at the fallback value.
    pub fallback_share: f64,
    pub all_hold: bool,
    pub pass: bool,
    #[serde(default)]
    pub failure_mode: Option<String>,
    #[serde(default)]
    pub net_density: Option<NetCheck>,
    #[serde(default)]
    pub ledger: Option<ParameterLedger>,
}

/// Per-pair errors of `estimate` against `truth` over all pairs `i < j < n`.
pub fn pair_errors(
    n: usize,
    estimate: impl Fn(usize, usize) -> f64,
    truth: impl Fn(usize, usize) -> f64,
) -> Vec<PairError> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(PairError {
                i,
                j,
                truth: truth(i, j),
                estimate: estimate(i, j),
            });
        }
    }
    out
}

/// Summarize per-pair errors. `fallback` is the value an estimator emits when
/// it has no information about a pair.
pub fn error_report(errors: &[PairError], rule: &ReportRule, fallback: Option<f64>) -> ErrorReport {
    let (near, far): (Vec<&PairError>, Vec<&PairError>) = errors.iter().partition(|e| e.truth < rule.near_radius);
    let near_violations = near.iter().filter(|e| !(e.abs_error() <= rule.near_bound)).count();
    let far_violations = far.iter().filter(|e| !(e.estimate >= rule.far_floor)).count();
    let rate = |v: usize, n: usize| if n == 0 { 0.0 } else { v as f64 / n as f64 };
    let near_rate = rate(near_violations, near.len());
    let far_rate = rate(far_violations, far.len());
    let fallback_count = fallback.map_or(0, |f| errors.iter().filter(|e| e.estimate == f).count());
    let fallback_share = rate(fallback_count, errors.len());
    // A table made entirely of fallback values carries no information, even
    // when loose bounds would let it through.
    let all_fallback = !errors.is_empty() && fallback_count == errors.len();
    let pass = !all_fallback && near_rate <= rule.allowed_rate && far_rate <= rule.allowed_rate;
    let failure_mode = if pass {
        None
    } else if all_fallback {
        Some(
            "every pair sits at the fallback value: no pair passed the W threshold, so the data carried \
             no usable information (e.g. all observations masked)"
                .to_string(),
        )
    } else {
        let mut parts = Vec::new();
        if near_rate > rule.allowed_rate {
            parts.push(format!(
                "near-pair violation rate {near_rate:.4} exceeds {:.4} (|error| > {:.4} on {near_violations} of {} pairs)",
                rule.allowed_rate,
                rule.near_bound,
                near.len()
            ));
        }
        if far_rate > rule.allowed_rate {
            parts.push(format!(
                "far-pair violation rate {far_rate:.4} exceeds {:.4} (estimate < {:.4} on {far_violations} of {} pairs)",
                rule.allowed_rate,
                rule.far_floor,
                far.len()
            ));
        }
        Some(parts.join("; "))
    };
    ErrorReport {
        rule: *rule,
        near_pairs: near.len(),
        far_pairs: far.len(),
        near_violations,
        far_violations,
        near_violation_rate: near_rate,
        far_violation_rate: far_rate,
        near_error: Quantiles::of(near.iter().map(|e| e.abs_error()).collect()),
        far_error: Quantiles::of(far.iter().map(|e| e.abs_error()).collect()),
        fallback_share,
        all_hold: near_violations == 0 && far_violations == 0,
        pass,
        failure_mode,
        net_density: None,
        ledger: None,
    }
}

/// Report for a `d^app` table against the first `N₀` sample positions.
pub fn dapp_report(
    dapp: &DappTable,
    truth: &SampleSet,
    ledger: &ParameterLedger,
    near: NearRule,
    allowed_rate: f64,
) -> (ErrorReport, Vec<PairError>) {
    let errors = pair_errors(dapp.len(), |i, j| dapp.get(i, j), |i, j| truth.distance(i, j));
    let rule = ReportRule::from_ledger(ledger, near, allowed_rate);
    let mut report = error_report(&errors, &rule, Some(ledger.diameter));
    report.ledger = Some(ledger.clone());
    (report, errors)
}

/// Plot-ready CSV `i,j,distance,estimate,abs_error,near`.
pub fn write_pair_errors(path: &Path, errors: &[PairError], near_radius: f64) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "i,j,distance,estimate,abs_error,near")?;
    for e in errors {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{}",
            e.i,
            e.j,
            e.truth,
            e.estimate,
            e.abs_error(),
            u8::from(e.truth < near_radius)
        )?;
    }
    out.flush()?;
    Ok(())
}
