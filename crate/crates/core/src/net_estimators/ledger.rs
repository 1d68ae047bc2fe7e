use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric_models::{unit_ball_volume, GeometryBounds};
use crate::observation::{beta_of, MaskSpec, NoiseSpec};

/// What to do when a derived constant violates one of the ledger's gates
/// (`ρ ≤ r₁`, `ε₁ ≤ ε̂₁`, `L > 2max(D², σ)`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GatePolicy {
    /// Refuse to build the ledger.
    #[default]
    Strict,
    /// Build it anyway and list each violation in `gate_violations`.
    Report,
}

/// Every tuning constant of the estimator, derived from the geometry, the
/// observation model and the requested accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterLedger {
    pub n: usize,
    pub diameter: f64,
    pub sigma: f64,
    pub beta: f64,
    pub phi0: f64,
    pub h: f64,
    pub c1: f64,
    pub c2: f64,

    pub r0: f64,
    pub r1: f64,
    pub phi1: f64,
    pub c3_hat: f64,
    pub c3: f64,
    pub c4: f64,
    pub c4_hat: f64,
    pub c5: f64,
    pub b: f64,
    pub rho: f64,
    pub u0: f64,
    pub u1: f64,
    pub u2: f64,
    pub eps1: f64,
    pub eps1_cap: f64,
    pub h0: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub l: f64,
    pub eps_l: f64,
    pub theta: f64,
    pub delta1: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub gate_violations: Vec<String>,
}

impl ParameterLedger {
    /// Bound on `|d^app − d|` for near pairs in the noiseless case: `2ρ/c₅ + h₀`.
    pub fn noiseless_bound(&self) -> f64 {
        2.0 * self.rho / self.c5 + self.h0
    }

    /// Bound on `|Q¹ − d|` from the Kuratowski sandwich: `√(2ρ² + ε₂ + ε(L)) / c₅`.
    pub fn sandwich_bound(&self) -> f64 {
        (2.0 * self.rho * self.rho + self.eps2 + self.eps_l).sqrt() / self.c5
    }
}

/// Truncation error `ε(L) = β e^{−(√L − D)/2} (D² + 6β²)`.
pub fn truncation_error(l: f64, beta: f64, diameter: f64) -> f64 {
    beta * (-(l.sqrt() - diameter) / 2.0).exp() * (diameter * diameter + 6.0 * beta * beta)
}

/// The part of the ledger that depends only on geometry and masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConstants {
    pub r0: f64,
    pub r1: f64,
    pub phi1: f64,
    pub c3_hat: f64,
    pub c3: f64,
    pub c4: f64,
    pub c4_hat: f64,
}

pub fn mask_constants(bounds: &GeometryBounds, mask: &MaskSpec) -> MaskConstants {
    let n = bounds.n;
    let h = mask.h_bound();
    let phi0 = mask.phi0();
    let mask_term = if h > 0.0 { phi0 / (2.0 * h) } else { f64::INFINITY };
    let curv_term = if bounds.curvature > 0.0 {
        PI / (2.0 * bounds.curvature)
    } else {
        f64::INFINITY
    };
    let r0 = mask_term.min(bounds.injectivity).min(curv_term);
    let r1 = r0 / 2.0;
    let phi1 = mask.c1 * phi0 / 2.0;
    let c3_hat = unit_ball_volume(n) / bounds.volume_bound;
    let c3 = bounds.rho_min / bounds.rho_max * c3_hat;
    let c4 = c3 * phi1 * phi1 * r1.powi(n as i32);
    let c4_hat = 0.25 * (mask.c2 * h * r1).min(c4);
    MaskConstants {
        r0,
        r1,
        phi1,
        c3_hat,
        c3,
        c4,
        c4_hat,
    }
}

/// Derive the ledger, refusing any gate violation.
pub fn derive_parameters(
    bounds: &GeometryBounds,
    mask: &MaskSpec,
    noise: &NoiseSpec,
    eps1: f64,
    delta1: f64,
    theta: f64,
    c5: f64,
) -> Result<ParameterLedger> {
    derive_parameters_with(bounds, mask, noise, eps1, delta1, theta, c5, GatePolicy::Strict)
}

#[allow(clippy::too_many_arguments)]
pub fn derive_parameters_with(
    bounds: &GeometryBounds,
    mask: &MaskSpec,
    noise: &NoiseSpec,
    eps1: f64,
    delta1: f64,
    theta: f64,
    c5: f64,
    policy: GatePolicy,
) -> Result<ParameterLedger> {
    bounds.validate()?;
    mask.validate()?;
    let beta = beta_of(noise).map_err(|e| match e {
        Error::UnsupportedNoise(m) => Error::Parameter(format!("β is not finite: {m}")),
        other => other,
    })?;
    if !beta.is_finite() {
        return Err(Error::Parameter("β is not finite".into()));
    }
    if !(c5 > 0.0 && c5 <= 1.0) {
        return Err(Error::Parameter(format!("c₅ = {c5} must lie in (0, 1]")));
    }
    if !(eps1 > 0.0 && eps1.is_finite()) {
        return Err(Error::Parameter(format!("ε₁ = {eps1} must be positive")));
    }
    if !(delta1 > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Parameter(format!("need δ₁ > 0 and θ ∈ (0, 1), got δ₁ = {delta1}, θ = {theta}")));
    }
    let phi0 = mask.phi0();
    if !(phi0 > 0.0) {
        return Err(Error::Parameter("φ₀ = 0: every pair is masked".into()));
    }

    let n = bounds.n;
    let nf = n as f64;
    let d = bounds.diameter;
    let h = mask.h_bound();
    let sigma = noise.sigma();
    let MaskConstants {
        r0,
        r1,
        phi1,
        c3_hat,
        c3,
        c4,
        c4_hat,
    } = mask_constants(bounds, mask);
    let b = c4 / 2.0;
    let rho = 2.0 * eps1 / c5;
    let h0 = eps1 / 2.0;
    let eps2 = rho * rho / 200.0;
    let u0 = phi1 * c3 * (rho / 4.0).powi(n as i32);
    let u1 = u0 / 2.0;
    let u2 = u0 / 4.0;
    let eps3 = b * u1 / 4.0;
    let big = (d / 2.0).exp() * 200.0 * beta * (d * d + 6.0 * beta * beta) / (rho * rho);
    let l = 4.0 * big.ln().powi(2);
    let eps_l = truncation_error(l, beta, d);
    let eps1_cap = 1f64.min(8.0 * c5 * (phi1 * c3).powf(-1.0 / nf));

    let mut violations = Vec::new();
    if eps1 > eps1_cap {
        violations.push(format!("ε₁ = {eps1} exceeds its cap ε̂₁ = {eps1_cap}"));
    }
    if rho > r1 {
        violations.push(format!("ρ = {rho} exceeds r₁ = {r1}"));
    }
    if !(big > 1.0) {
        violations.push(format!("truncation level is degenerate (argument {big} ≤ 1)"));
    }
    if !(l > 2.0 * (d * d).max(sigma)) {
        violations.push(format!("L = {l} does not exceed 2max(D², σ) = {}", 2.0 * (d * d).max(sigma)));
    }
    if !(eps3 < c4 / 4.0) {
        violations.push(format!("ε₃ = {eps3} is not below c₄/4 = {}", c4 / 4.0));
    }
    if eps2 + eps_l > rho * rho / 100.0 * (1.0 + 1e-12) {
        violations.push(format!("ε₂ + ε(L) = {} exceeds ρ²/100 = {}", eps2 + eps_l, rho * rho / 100.0));
    }
    let all_finite = [r0, c3, c4, c4_hat, rho, u0, eps3, l, eps_l].iter().all(|x| x.is_finite());
    if !all_finite {
        return Err(Error::Parameter("derived constants are not finite".into()));
    }
    if policy == GatePolicy::Strict && !violations.is_empty() {
        return Err(Error::Parameter(violations.join("; ")));
    }
    for v in &violations {
        log::warn!("ledger gate: {v}");
    }

    Ok(ParameterLedger {
        n,
        diameter: d,
        sigma,
        beta,
        phi0,
        h,
        c1: mask.c1,
        c2: mask.c2,
        r0,
        r1,
        phi1,
        c3_hat,
        c3,
        c4,
        c4_hat,
        c5,
        b,
        rho,
        u0,
        u1,
        u2,
        eps1,
        eps1_cap,
        h0,
        eps2,
        eps3,
        l,
        eps_l,
        theta,
        delta1,
        delta: None,
        gate_violations: violations,
    })
}
