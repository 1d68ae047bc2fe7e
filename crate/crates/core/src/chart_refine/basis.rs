use serde::{Deserialize, Serialize};

use super::points::{q_raw, RefinedPoint};
use super::{CoarseNet, RefinementScales};
use crate::error::{Error, Result};

/// A near-orthonormal basis `a₁, …, aₙ` of one chart, rescaled by `r̂/6`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub chart: usize,
    /// Positions of the chosen points in the candidate list.
    pub members: Vec<usize>,
    pub points: Vec<RefinedPoint>,
    pub centre: RefinedPoint,
    /// Normalized Gram matrix `(r̂/6)^{-2} P(aᵢ, aⱼ)`.
    pub gram: Vec<Vec<f64>>,
    /// `max |gram − I|`.
    pub residual: f64,
    pub tol: f64,
    /// `Q(p, aᵢ)`, reused by every chart map evaluation.
    centre_q: Vec<f64>,
}

/// Summary written to diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSummary {
    pub members: Vec<usize>,
    pub residual: f64,
    pub tol: f64,
}

impl Basis {
    pub fn summary(&self) -> BasisSummary {
        BasisSummary {
            members: self.members.clone(),
            residual: self.residual,
            tol: self.tol,
        }
    }
}

/// Greedy search for `n` candidates whose normalized scalar products are
/// within `tol` of the identity. Candidates must all belong to the chart of
/// `centre`, which must be the vertex at the chart centre.
///
/// Only candidates with `|P(a,a)/(r̂/6)² − 1| ≤ tol` are considered. The first
/// pick is the one closest to unit norm; each later pick minimizes the largest
/// normalized product against the vectors chosen so far. The result is checked
/// against the full Gram matrix before it is returned.
pub fn find_basis(
    net: &CoarseNet,
    scales: &RefinementScales,
    centre: &RefinedPoint,
    candidates: &[RefinedPoint],
    tol: f64,
) -> Result<Basis> {
    let chart = centre.chart;
    let fail = |reason: String| Error::BasisFailure { chart, reason };
    if centre.as_vertex() != Some(chart) {
        return Err(fail("the centre must be the vertex at the chart centre".into()));
    }
    if let Some(c) = candidates.iter().find(|c| c.chart != chart) {
        return Err(fail(format!("candidate from chart {} offered", c.chart)));
    }
    let n = scales.n;
    let unit = (scales.r_hat / 6.0).powi(2);
    let mut band: Vec<(usize, f64)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let norm = q_raw(net, centre, c)? / unit;
        if (norm - 1.0).abs() <= tol {
            band.push((i, norm));
        }
    }
    if band.is_empty() {
        return Err(fail(format!(
            "no candidate among {} has squared norm within {tol} of (r̂/6)²; the net is too sparse here",
            candidates.len()
        )));
    }
    let product = |a: usize, na: f64, b: usize, nb: f64| -> Result<f64> {
        let qab = q_raw(net, &candidates[a], &candidates[b])?;
        Ok(0.5 * (na + nb - qab / unit))
    };

    let first = band
        .iter()
        .min_by(|x, y| (x.1 - 1.0).abs().total_cmp(&(y.1 - 1.0).abs()))
        .copied()
        .expect("band is not empty");
    let mut chosen: Vec<(usize, f64)> = vec![first];
    while chosen.len() < n {
        let mut best: Option<(usize, f64, f64)> = None;
        for &(i, ni) in &band {
            if chosen.iter().any(|c| c.0 == i) {
                continue;
            }
            let mut worst: f64 = 0.0;
            for &(j, nj) in &chosen {
                worst = worst.max(product(i, ni, j, nj)?.abs());
            }
            if best.map_or(true, |b| worst < b.2) {
                best = Some((i, ni, worst));
            }
        }
        match best {
            Some((i, ni, _)) => chosen.push((i, ni)),
            None => {
                return Err(fail(format!(
                    "only {} candidates near the (r̂/6)-sphere, need {n}",
                    chosen.len()
                )))
            }
        }
    }

    let mut gram = vec![vec![0.0; n]; n];
    let mut residual: f64 = 0.0;
    for a in 0..n {
        for b in a..n {
            let (i, ni) = chosen[a];
            let (j, nj) = chosen[b];
            let v = if a == b { ni } else { product(i, ni, j, nj)? };
            gram[a][b] = v;
            gram[b][a] = v;
            residual = residual.max((v - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    if !(residual <= tol) {
        return Err(fail(format!(
            "best greedy basis has Gram residual {residual:.4} above tolerance {tol:.4}"
        )));
    }
    let members: Vec<usize> = chosen.iter().map(|c| c.0).collect();
    Ok(Basis {
        chart,
        points: members.iter().map(|&i| candidates[i].clone()).collect(),
        centre_q: chosen.iter().map(|c| c.1 * unit).collect(),
        members,
        centre: centre.clone(),
        gram,
        residual,
        tol,
    })
}

/// Chart coordinates `F(x) = (r̂/6)^{-1}(P(x,a₁), …, P(x,aₙ))` for points of
/// this chart or of a chart admissible with it.
pub fn chart_map_f(
    net: &CoarseNet,
    scales: &RefinementScales,
    basis: &Basis,
    points: &[RefinedPoint],
) -> Result<Vec<Vec<f64>>> {
    let inv = 6.0 / scales.r_hat;
    let p = basis.chart;
    points
        .iter()
        .map(|x| {
            if x.chart != p && !net.get(p, x.chart).is_some_and(|d| d < scales.admissible_radius()) {
                return Err(Error::Staging(format!("P is not staged for chart pair ({p}, {})", x.chart)));
            }
            let qpx = q_raw(net, &basis.centre, x)?;
            basis
                .points
                .iter()
                .zip(&basis.centre_q)
                .map(|(a, &qpa)| Ok(inv * 0.5 * (qpx + qpa - q_raw(net, x, a)?)))
                .collect()
        })
        .collect()
}
