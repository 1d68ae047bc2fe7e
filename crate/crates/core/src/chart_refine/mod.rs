//! Refinement of a coarse net with approximate local distances into a finer
//! net with refined distances, through a squared-distance recursion, scalar
//! products obtained by polarization, near-orthonormal bases and per-chart
//! coordinates.
//!
//! Refined points are never given manifold coordinates. A point is an index
//! triple `(p, α, τ)` and everything else is computed from `d̃` alone.

mod basis;
mod driver;
mod points;

pub use basis::{chart_map_f, find_basis, Basis};
pub use driver::{budget_from_env, refine, ChartDiagnostics, RefineConfig, Refinement, DEFAULT_BUDGET};
pub use points::{scalar_product_p, squared_distance_q, RefinedPoint};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_estimators::{DappTable, GatePolicy};

/// Scales of one refinement step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementScales {
    pub delta_hat: f64,
    pub r_hat: f64,
    /// Curvature bound `K = δ̂ / r̂³`.
    pub k: f64,
    pub n: usize,
    /// Pitch of the simplex grid, `δ̂ / (3 r̂ √n)`.
    pub eps_prime: f64,
}

impl RefinementScales {
    /// Scales with `r̂ = (δ̂/K)^{1/3}`.
    pub fn from_curvature(delta_hat: f64, k: f64, n: usize) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Parameter(
                "curvature bound K = 0 gives no scale; supply r̂ explicitly".into(),
            ));
        }
        Self::new(delta_hat, (delta_hat / k).cbrt(), n)
    }

    /// Scales with an explicit `r̂` (needed for flat models).
    pub fn new(delta_hat: f64, r_hat: f64, n: usize) -> Result<Self> {
        if !(delta_hat > 0.0 && r_hat > 0.0 && n >= 1) {
            return Err(Error::Parameter(format!(
                "need δ̂ > 0, r̂ > 0, n ≥ 1; got δ̂ = {delta_hat}, r̂ = {r_hat}, n = {n}"
            )));
        }
        Ok(RefinementScales {
            delta_hat,
            r_hat,
            k: delta_hat / r_hat.powi(3),
            n,
            eps_prime: delta_hat / (3.0 * r_hat * (n as f64).sqrt()),
        })
    }

    /// Violations of `δ̂/r̂ < 1/150`.
    pub fn gate_violations(&self) -> Vec<String> {
        let ratio = self.delta_hat / self.r_hat;
        if ratio < 1.0 / 150.0 {
            Vec::new()
        } else {
            vec![format!("δ̂/r̂ = {ratio} is not below 1/150")]
        }
    }

    pub fn check(&self, policy: GatePolicy) -> Result<Vec<String>> {
        let v = self.gate_violations();
        if policy == GatePolicy::Strict && !v.is_empty() {
            return Err(Error::Parameter(v.join("; ")));
        }
        for msg in &v {
            log::warn!("refinement gate: {msg}");
        }
        Ok(v)
    }

    /// Radius of the sets `X_p`: `r̂/6 − δ̂`.
    pub fn neighbor_radius(&self) -> f64 {
        self.r_hat / 6.0 - self.delta_hat
    }

    /// Chart pairs need `d̃(p, q) < 2r̂/3 − 2δ̂`.
    pub fn admissible_radius(&self) -> f64 {
        2.0 * self.r_hat / 3.0 - 2.0 * self.delta_hat
    }

    /// Simplex grid resolution `M = ⌈√n / ε′⌉`.
    pub fn grid_resolution(&self) -> usize {
        ((self.n as f64).sqrt() / self.eps_prime).ceil() as usize
    }
}

/// Scale cascade `(ε₁, δ₁, δ̂, r̂)` for a target accuracy `δ` and curvature
/// bound `Λ` (`|Sec| ≤ Λ²`). A flat model needs an explicit `r̂`.
pub fn scale_cascade(delta: f64, lambda: f64, r_hat_override: Option<f64>) -> Result<(f64, f64, f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("δ = {delta} must lie in (0, 1)")));
    }
    let eps1 = delta.powf(1.5);
    let delta_hat = eps1;
    let delta1 = lambda.powf(2.0 / 3.0) * delta.sqrt() / 20.0;
    let r_hat = match r_hat_override {
        Some(r) if r > 0.0 => r,
        Some(r) => return Err(Error::Parameter(format!("r̂ override {r} must be positive"))),
        None if lambda > 0.0 => (delta_hat / (lambda * lambda)).cbrt(),
        None => {
            return Err(Error::Parameter(
                "Λ = 0: the cascade needs an explicit r̂ for flat models".into(),
            ))
        }
    };
    Ok((eps1, delta1, delta_hat, r_hat))
}

/// Approximate local distances on a coarse net, stored as sorted neighbour
/// lists. Pairs at `d̃ ≥ cutoff` are not stored and read as "far".
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseNet {
    n: usize,
    cutoff: f64,
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl CoarseNet {
    /// Build from `(i, j, d̃)` triples; symmetric duplicates must agree.
    pub fn from_pairs(n: usize, cutoff: f64, pairs: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut maps: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); n];
        for (i, j, d) in pairs {
            if i >= n || j >= n {
                return Err(Error::Input(format!("pair ({i}, {j}) out of range for {n} points")));
            }
            if !(d >= 0.0) {
                return Err(Error::Input(format!("d̃({i}, {j}) = {d} is negative")));
            }
            if i == j || d >= cutoff {
                continue;
            }
            for (a, b) in [(i, j), (j, i)] {
                if let Some(old) = maps[a].insert(b as u32, d) {
                    if old != d {
                        return Err(Error::Input(format!("conflicting values for d̃({i}, {j})")));
                    }
                }
            }
        }
        Ok(CoarseNet {
            n,
            cutoff,
            neighbors: maps.into_iter().map(|m| m.into_iter().collect()).collect(),
        })
    }

    /// Net from a full approximate-distance table.
    pub fn from_dapp(table: &DappTable, cutoff: f64) -> Result<Self> {
        let n = table.len();
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::from_pairs(n, cutoff, pairs.map(|(i, j)| (i, j, table.get(i, j))))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `d̃(x, y)` when stored; `None` means `d̃ ≥ cutoff`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if x == y {
            return Some(0.0);
        }
        let row = &self.neighbors[x];
        row.binary_search_by_key(&(y as u32), |e| e.0).ok().map(|k| row[k].1)
    }

    /// Stored neighbours of `x` with their distances, sorted by index.
    pub fn neighbors(&self, x: usize) -> &[(u32, f64)] {
        &self.neighbors[x]
    }

    /// Squared distance, failing when the pair was not stored.
    #[inline]
    pub fn g(&self, x: usize, y: usize) -> Result<f64> {
        self.get(x, y)
            .map(|d| d * d)
            .ok_or_else(|| Error::Staging(format!("d̃({x}, {y}) is beyond the stored cutoff {}", self.cutoff)))
    }
}

/// `X_p = {x : d̃(p, x) < r̂/6 − δ̂}` for every `p`, sorted, always containing `p`.
pub fn neighbor_sets(net: &CoarseNet, scales: &RefinementScales) -> Vec<Vec<usize>> {
    let radius = scales.neighbor_radius();
    (0..net.len())
        .map(|p| {
            let mut set: Vec<usize> = net
                .neighbors(p)
                .iter()
                .filter(|(_, d)| *d < radius)
                .map(|(x, _)| *x as usize)
                .collect();
            set.push(p);
            set.sort_unstable();
            set
        })
        .collect()
}

/// `C(M + n, n)` without overflow, saturating at `u128::MAX`.
pub fn simplex_grid_size(n: usize, m: usize) -> u128 {
    let mut size: u128 = 1;
    for i in 1..=n as u128 {
        size = match size.checked_mul(m as u128 + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    size
}

/// Largest simplex grid that will be materialized.
pub const GRID_LIMIT: u128 = 5_000_000;

/// Uniform barycentric grid `{m/M : mᵢ ≥ 0, Σmᵢ ≤ M}` with `M = ⌈√n/ε′⌉`,
/// returned as numerator vectors together with `M`.
pub fn simplex_grid(n: usize, eps_prime: f64) -> Result<(usize, Vec<Vec<u32>>)> {
    if !(eps_prime > 0.0) || n == 0 {
        return Err(Error::Parameter(format!("need n ≥ 1 and ε′ > 0, got n = {n}, ε′ = {eps_prime}")));
    }
    let m = ((n as f64).sqrt() / eps_prime).ceil();
    if m > u32::MAX as f64 {
        return Err(Error::TooFine {
            size: u128::MAX,
            limit: GRID_LIMIT,
        });
    }
    let m = m as usize;
    let size = simplex_grid_size(n, m);
    if size > GRID_LIMIT {
        return Err(Error::TooFine {
            size,
            limit: GRID_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(size as usize);
    let mut current = vec![0u32; n];
    fn fill(axis: usize, left: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if axis == current.len() {
            out.push(current.clone());
            return;
        }
        for v in 0..=left {
            current[axis] = v;
            fill(axis + 1, left - v, current, out);
        }
        current[axis] = 0;
    }
    fill(0, m as u32, &mut current, &mut out);
    Ok((m, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cascade_values() {
        let (e1, d1, dh, rh) = scale_cascade(0.01, 1.0, None).unwrap();
        assert!((e1 - 0.001).abs() < 1e-15);
        assert_eq!(e1, dh);
        assert!((rh - 0.1).abs() < 1e-12);
        assert!((d1 - 0.005).abs() < 1e-15);
        let (_, d1, _, rh) = scale_cascade(0.04, 1.0, None).unwrap();
        assert!((rh - 0.2).abs() < 1e-12);
        assert!((d1 - 0.01).abs() < 1e-15);
        assert!(scale_cascade(0.01, 0.0, None).is_err());
        assert_eq!(scale_cascade(0.01, 0.0, Some(0.1)).unwrap().3, 0.1);
    }

    #[test]
    fn cascade_ratio_gate() {
        // δ̂/r̂ = Λ^{2/3} δ
        for (delta, lambda) in [(0.01, 1.0), (0.001, 2.0), (0.004, 0.5)] {
            let (_, _, dh, rh) = scale_cascade(delta, lambda, None).unwrap();
            let ratio: f64 = dh / rh;
            assert!((ratio - lambda.powf(2.0 / 3.0) * delta).abs() < 1e-12);
            let scales = RefinementScales::new(dh, rh, 2).unwrap();
            assert_eq!(scales.gate_violations().is_empty(), ratio < 1.0 / 150.0);
        }
    }

    #[test]
    fn grid_examples() {
        let (m, g) = simplex_grid(1, 0.5).unwrap();
        assert_eq!(m, 2);
        assert_eq!(g, vec![vec![0], vec![1], vec![2]]);
        let (m, g) = simplex_grid(2, 0.75).unwrap();
        assert_eq!(m, 2);
        assert_eq!(g.len(), 6);
        assert_eq!(simplex_grid_size(2, 2), 6);
        assert!(matches!(simplex_grid(3, 1e-4), Err(Error::TooFine { .. })));
    }

    #[test]
    fn neighbor_set_thresholds() {
        let scales = RefinementScales::new(0.001, 0.1, 1).unwrap();
        let edge = scales.neighbor_radius();
        let net = CoarseNet::from_pairs(4, 0.2, [(0, 1, 0.005), (1, 2, 0.005), (0, 2, 0.01), (0, 3, edge)]).unwrap();
        let sets = neighbor_sets(&net, &scales);
        assert_eq!(sets[0], vec![0, 1, 2]);
        assert_eq!(sets[1], vec![0, 1, 2]);
        assert_eq!(sets[3], vec![3]);
        let isolated = CoarseNet::from_pairs(2, 1.0, [(0, 1, 0.5)]).unwrap();
        assert_eq!(neighbor_sets(&isolated, &scales)[0], vec![0]);
    }

    #[test]
    fn coarse_net_rejects_bad_input() {
        assert!(CoarseNet::from_pairs(2, 1.0, [(0, 1, -0.1)]).is_err());
        assert!(CoarseNet::from_pairs(2, 1.0, [(0, 2, 0.1)]).is_err());
        assert!(CoarseNet::from_pairs(2, 1.0, [(0, 1, 0.1), (1, 0, 0.2)]).is_err());
        let net = CoarseNet::from_pairs(3, 0.5, [(0, 1, 0.1), (0, 2, 0.7)]).unwrap();
        assert_eq!(net.get(1, 0), Some(0.1));
        assert_eq!(net.get(0, 2), None);
        assert_eq!(net.get(2, 2), Some(0.0));
        assert!(matches!(net.g(0, 2), Err(Error::Staging(_))));
    }
}
