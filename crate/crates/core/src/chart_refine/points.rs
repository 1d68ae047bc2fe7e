use serde::{Deserialize, Serialize};

use super::{CoarseNet, RefinementScales};
use crate::error::{Error, Result};

/// A refined point `(p, α, τ)`: chart centre `p`, an `n`-tuple `α` from `X_p`
/// and grid weights `τ = m / M`. The implied weight on `p` is `t₀ = 1 − Στᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPoint {
    pub chart: usize,
    pub alpha: Vec<usize>,
    pub tau: Vec<u32>,
    pub grid_m: u32,
    /// Merged nonzero weights over coarse points.
    #[serde(skip)]
    weights: Vec<(usize, f64)>,
    /// `½ Σ tᵢtⱼ Q(aᵢ, aⱼ)`, the part of the recursion that depends on this point alone.
    #[serde(skip)]
    self_term: f64,
}

impl RefinedPoint {
    /// Validate `α ⊂ X_p` (given sorted) and `Σ τ ≤ M`, and precompute weights.
    pub fn new(net: &CoarseNet, chart: usize, alpha: Vec<usize>, tau: Vec<u32>, grid_m: u32, x_p: &[usize]) -> Result<Self> {
        if alpha.len() != tau.len() || alpha.is_empty() {
            return Err(Error::Input(format!(
                "α and τ need the same positive length, got {} and {}",
                alpha.len(),
                tau.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| x_p.binary_search(a).is_err()) {
            return Err(Error::Input(format!("α entry {a} is not in X_{chart}")));
        }
        let total: u64 = tau.iter().map(|&t| t as u64).sum();
        if grid_m == 0 || total > grid_m as u64 {
            return Err(Error::Input(format!("τ sums to {total} > M = {grid_m}")));
        }
        let m = grid_m as f64;
        let mut weights: Vec<(usize, f64)> = Vec::with_capacity(alpha.len() + 1);
        let mut push = |idx: usize, w: f64| {
            if w == 0.0 {
                return;
            }
            match weights.iter_mut().find(|(i, _)| *i == idx) {
                Some(entry) => entry.1 += w,
                None => weights.push((idx, w)),
            }
        };
        push(chart, (grid_m as u64 - total) as f64 / m);
        for (&a, &t) in alpha.iter().zip(&tau) {
            push(a, t as f64 / m);
        }
        weights.sort_unstable_by_key(|(i, _)| *i);
        let mut self_term = 0.0;
        for (i, &(a, wa)) in weights.iter().enumerate() {
            for &(b, wb) in &weights[i + 1..] {
                self_term += wa * wb * net.g(a, b)?;
            }
        }
        Ok(RefinedPoint {
            chart,
            alpha,
            tau,
            grid_m,
            weights,
            self_term,
        })
    }

    /// The coarse point `x ∈ X_p` as a refined point of chart `p`.
    pub fn vertex(net: &CoarseNet, chart: usize, x: usize, n: usize, grid_m: u32, x_p: &[usize]) -> Result<Self> {
        let mut tau = vec![0u32; n];
        if x != chart {
            tau[0] = grid_m;
        }
        Self::new(net, chart, vec![x; n], tau, grid_m, x_p)
    }

    /// Barycentric weights `t₁, …, tₙ`.
    pub fn t(&self) -> Vec<f64> {
        self.tau.iter().map(|&t| t as f64 / self.grid_m as f64).collect()
    }

    /// Nonzero weights over coarse points, including the chart centre.
    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }

    /// The single coarse point this refined point coincides with, if any.
    pub fn as_vertex(&self) -> Option<usize> {
        match self.weights.as_slice() {
            [(x, w)] if *w == 1.0 => Some(*x),
            _ => None,
        }
    }
}

/// The recursion for `Q` written out: with `Σ tᵢ = 1` it reduces to
/// `Σᵢⱼ tᵢsⱼ d̃(aᵢ,bⱼ)² − ½Σ tᵢtⱼ d̃(aᵢ,aⱼ)² − ½Σ sᵢsⱼ d̃(bᵢ,bⱼ)²`.
/// For two vertices this is `d̃²` itself, and for a vertex against a refined
/// point it is the one-sided recursion.
pub(crate) fn q_raw(net: &CoarseNet, x: &RefinedPoint, y: &RefinedPoint) -> Result<f64> {
    let mut cross = 0.0;
    for &(a, wa) in &x.weights {
        let mut row = 0.0;
        for &(b, wb) in &y.weights {
            row += wb * net.g(a, b)?;
        }
        cross += wa * row;
    }
    Ok(cross - x.self_term - y.self_term)
}

fn chart_pair_admissible(net: &CoarseNet, scales: &RefinementScales, p: usize, q: usize) -> bool {
    net.get(p, q).is_some_and(|d| d < scales.admissible_radius())
}

/// Approximate squared distance `Q(x, y)` for refined points of an admissible
/// chart pair.
pub fn squared_distance_q(net: &CoarseNet, scales: &RefinementScales, x: &RefinedPoint, y: &RefinedPoint) -> Result<f64> {
    if !chart_pair_admissible(net, scales, x.chart, y.chart) {
        return Err(Error::Domain(format!(
            "chart pair ({}, {}) is not admissible (d̃ must be below {})",
            x.chart,
            y.chart,
            scales.admissible_radius()
        )));
    }
    q_raw(net, x, y)
}

/// `P(x, y) = ½(Q(p, x) + Q(p, y) − Q(x, y))` in the chart centred at `p`.
pub fn scalar_product_p(
    net: &CoarseNet,
    scales: &RefinementScales,
    p: &RefinedPoint,
    x: &RefinedPoint,
    y: &RefinedPoint,
) -> Result<f64> {
    for (a, b) in [(p.chart, x.chart), (p.chart, y.chart), (x.chart, y.chart)] {
        if !chart_pair_admissible(net, scales, a, b) {
            return Err(Error::Staging(format!("Q is not staged for chart pair ({a}, {b})")));
        }
    }
    let qpx = q_raw(net, p, x)?;
    let qpy = q_raw(net, p, y)?;
    let qxy = q_raw(net, x, y)?;
    Ok(0.5 * (qpx + qpy - qxy))
}
