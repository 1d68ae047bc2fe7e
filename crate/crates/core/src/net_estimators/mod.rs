//! The three-net estimator: reliability counts `T`, truncated distance
//! differences `K^L`, the weighted averages `V/W/Q` and the thresholded
//! approximate distance `d^app`, together with the constants that drive them.

mod ledger;
mod pipeline;

pub use ledger::{
    derive_parameters, derive_parameters_with, mask_constants, truncation_error, GatePolicy, MaskConstants, ParameterLedger,
};
pub use pipeline::{
    approx_distances, compute_kl, compute_t, compute_vwq, k_estimate, run_pipeline, DappTable, EstimatorTable,
    VwqTables,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservedDistances;

/// Quintic smoothstep `s(u) = 6u⁵ − 15u⁴ + 10u³` on `[0, 1]`.
#[inline]
pub fn smoothstep(u: f64) -> f64 {
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// Even bump: 1 on `[-1, 1]`, 0 outside `(-2, 2)`, smoothstep in between.
#[inline]
pub fn psi1(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        smoothstep(2.0 - a)
    }
}

/// `ψ_ρ(t) = ψ₁(t / ρ²)`.
#[inline]
pub fn psi_rho(t: f64, rho: f64) -> f64 {
    psi1(t / (rho * rho))
}

/// `β₁(t) = 1 − ψ₁(t)`.
#[inline]
pub fn beta1(t: f64) -> f64 {
    1.0 - psi1(t)
}

/// The cutoff family at a fixed radius `ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFns {
    pub rho: f64,
}

impl CutoffFns {
    pub fn new(rho: f64) -> Self {
        CutoffFns { rho }
    }

    pub fn from_ledger(ledger: &ParameterLedger) -> Self {
        CutoffFns { rho: ledger.rho }
    }

    #[inline]
    pub fn psi_rho(&self, t: f64) -> f64 {
        psi_rho(t, self.rho)
    }

    #[inline]
    pub fn beta1(&self, t: f64) -> f64 {
        beta1(t)
    }
}

/// Contiguous coarse / medium / dense index blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSplit {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
}

impl NetSplit {
    pub fn new(n0: usize, n1: usize, n2: usize) -> Result<Self> {
        let split = NetSplit { n0, n1, n2 };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.n1 < self.n0 || self.n2 < self.n1 {
            return Err(Error::Parameter(format!(
                "net sizes must satisfy N₂ ≥ N₁ ≥ N₀ ≥ 1, got ({}, {}, {})",
                self.n0, self.n1, self.n2
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n0 + self.n1 + self.n2
    }

    pub fn i0(&self) -> std::ops::Range<usize> {
        0..self.n0
    }

    pub fn i1(&self) -> std::ops::Range<usize> {
        self.n0..self.n0 + self.n1
    }

    pub fn i2(&self) -> std::ops::Range<usize> {
        self.n0 + self.n1..self.total()
    }

    /// Check that the split fits in an observation table.
    pub fn check_fits(&self, obs: &ObservedDistances) -> Result<()> {
        self.validate()?;
        if self.total() > obs.len() {
            return Err(Error::Input(format!(
                "split needs {} points but the table has {}",
                self.total(),
                obs.len()
            )));
        }
        Ok(())
    }
}

/// The absolute constants in the sample-size formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeConstants {
    #[serde(default = "unit")]
    pub c3: f64,
    #[serde(default = "unit")]
    pub c10: f64,
    #[serde(default = "unit")]
    pub c15: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for SizeConstants {
    fn default() -> Self {
        SizeConstants {
            c3: 1.0,
            c10: 1.0,
            c15: 1.0,
        }
    }
}

/// Net sizes `(N₀, N₁, N₂)` for dimension `n`, accuracy `ε₁`, net density `δ₁`
/// and failure probability `θ`.
pub fn sample_sizes(n: usize, eps1: f64, delta1: f64, theta: f64, consts: &SizeConstants) -> Result<NetSplit> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::Parameter(format!("θ = {theta} must lie in (0, 1/2)")));
    }
    if !(delta1 > 0.0 && delta1 < 1.0) {
        return Err(Error::Parameter(format!("δ₁ = {delta1} must lie in (0, 1)")));
    }
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(Error::Parameter(format!("ε₁ = {eps1} must lie in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    for (name, c) in [("C₃", consts.c3), ("C₁₀", consts.c10), ("C₁₅", consts.c15)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Parameter(format!("{name} = {c} must be positive")));
        }
    }
    let nf = n as f64;
    let (ld, lt, le) = ((1.0 / delta1).ln(), (1.0 / theta).ln(), (1.0 / eps1).ln());
    let to_count = |x: f64| -> Result<usize> {
        if x.is_finite() && x < usize::MAX as f64 {
            Ok(x.floor() as usize)
        } else {
            Err(Error::Parameter(format!("net size {x:e} overflows")))
        }
    };
    let n0 = to_count(2.0 * consts.c3 * delta1.powf(-nf) * (ld + lt))?;
    let n1 = to_count(consts.c10 * eps1.powf(-2.0 * nf) * (ld + lt))?;
    let n2 = to_count(consts.c15 * eps1.powf(-2.0 * nf) * (lt * lt + ld * ld + le.powi(8)))?;
    Ok(NetSplit { n0, n1, n2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_values() {
        assert_eq!(psi1(0.5), 1.0);
        assert_eq!(psi1(3.0), 0.0);
        assert_eq!(psi1(1.5), 0.5);
        assert_eq!(psi1(-1.5), 0.5);
        assert_eq!(beta1(1.5), 0.5);
        assert_eq!(psi1(1.0), 1.0);
        assert_eq!(psi1(-2.0), 0.0);
        assert_eq!(psi_rho(0.5, 0.5), 0.0);
        assert_eq!(psi_rho(0.25, 0.5), 1.0);
    }

    #[test]
    fn bump_slope_and_monotonicity() {
        let mut prev = psi1(1.0);
        let h = 1e-5;
        for k in 1..=100_000 {
            let t = 1.0 + k as f64 * h;
            let v = psi1(t);
            assert!(v <= prev);
            assert!((prev - v) / h <= 15.0 / 8.0 + 1e-6);
            prev = v;
        }
    }

    #[test]
    fn sizes_at_unit_constants() {
        let e = (-1.0f64).exp();
        let s = sample_sizes(2, e, e, e, &SizeConstants::default()).unwrap();
        assert_eq!((s.n0, s.n1, s.n2), (29, 109, 163));
        let s = sample_sizes(2, 0.1, 0.1, 0.01, &SizeConstants::default()).unwrap();
        assert_eq!(s.n0, 1381);
    }

    #[test]
    fn sizes_reject_bad_inputs() {
        let c = SizeConstants::default();
        assert!(sample_sizes(2, 0.1, 0.1, 0.5, &c).is_err());
        assert!(sample_sizes(2, 0.1, 0.0, 0.1, &c).is_err());
        assert!(sample_sizes(2, 0.1, 0.1, 0.0, &c).is_err());
    }

    #[test]
    fn split_ranges() {
        let s = NetSplit::new(2, 3, 4).unwrap();
        assert_eq!(s.i0(), 0..2);
        assert_eq!(s.i1(), 2..5);
        assert_eq!(s.i2(), 5..9);
        assert!(NetSplit::new(3, 2, 4).is_err());
        assert!(NetSplit::new(0, 2, 4).is_err());
    }
}
