use serde::{Deserialize, Serialize};

use super::report::{PairError, Quantiles};
use crate::chart_refine::{CoarseNet, RefinedPoint, Refinement};
use crate::error::Result;
use crate::metric_models::SampleSet;

/// Manifold position of a refined point: `exp_p(Σ tᵢ log_p aᵢ)`, with the
/// chart centre carrying the remaining weight. Exact on a flat torus, where
/// it is the barycentre of the lifted coarse points.
pub fn refined_point_position(samples: &SampleSet, point: &RefinedPoint) -> Vec<f64> {
    barycentric_position(samples, point.chart, point.weights())
}

/// `exp_p(Σ w_a log_p a)` for weights over coarse sample indices.
pub fn barycentric_position(samples: &SampleSet, chart: usize, weights: &[(usize, f64)]) -> Vec<f64> {
    let model = samples.model();
    let p = samples.point(chart);
    let mut v = vec![0.0; p.len()];
    for &(a, w) in weights {
        for (acc, c) in v.iter_mut().zip(model.log_map(p, samples.point(a))) {
            *acc += w * c;
        }
    }
    model.exp_map(p, &v)
}

/// Comparison of the refined net against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementCheck {
    /// Covered pairs examined (all, or an even stride through them).
    pub pairs: usize,
    pub covered_total: usize,
    /// `|Q − d²| < q_bound` with `q_bound = 12 δ̂ r̂`.
    pub q_bound: f64,
    pub q_within: usize,
    pub q_rate: f64,
    /// Quantiles of `|Q − d²| / (δ̂ r̂)`.
    pub q_error: Quantiles,
    /// `|d̃′ − d| ≤ c4 δ̂`.
    pub c4: f64,
    pub f_within: usize,
    pub f_rate: f64,
    /// Quantiles of `|d̃′ − d| / δ̂`.
    pub f_error: Quantiles,
}

/// Check `Q` and `d̃′` on covered pairs against true positions. At most
/// `max_pairs` pairs are examined, taken at an even stride.
pub fn check_refinement(
    net: &CoarseNet,
    refinement: &Refinement,
    samples: &SampleSet,
    c4: f64,
    max_pairs: usize,
) -> Result<(RefinementCheck, Vec<PairError>)> {
    let scales = refinement.scales();
    let positions: Vec<Vec<f64>> = refinement
        .points()
        .iter()
        .map(|pt| refined_point_position(samples, pt))
        .collect();
    let covered_total = refinement.covered_pairs().count();
    let stride = covered_total.div_ceil(max_pairs.max(1)).max(1);
    let q_bound = 12.0 * scales.delta_hat * scales.r_hat;
    let mut q_rel = Vec::new();
    let mut f_rel = Vec::new();
    let mut errors = Vec::new();
    let (mut q_within, mut f_within) = (0usize, 0usize);
    for (x, y) in refinement.covered_pairs().step_by(stride) {
        let d = samples.model().distance(&positions[x], &positions[y]);
        let q_err = (refinement.q(net, x, y)? - d * d).abs();
        q_within += usize::from(q_err < q_bound);
        q_rel.push(q_err / (scales.delta_hat * scales.r_hat));
        let dt = refinement.dtilde(x, y);
        let f_err = (dt - d).abs();
        f_within += usize::from(f_err <= c4 * scales.delta_hat);
        f_rel.push(f_err / scales.delta_hat);
        errors.push(PairError {
            i: x,
            j: y,
            truth: d,
            estimate: dt,
        });
    }
    let pairs = errors.len();
    let rate = |k: usize| if pairs == 0 { 0.0 } else { k as f64 / pairs as f64 };
    Ok((
        RefinementCheck {
            pairs,
            covered_total,
            q_bound,
            q_within,
            q_rate: rate(q_within),
            q_error: Quantiles::of(q_rel),
            c4,
            f_within,
            f_rate: rate(f_within),
            f_error: Quantiles::of(f_rel),
        },
        errors,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart_refine::{refine, RefineConfig, RefinementScales};
    use crate::metric_models::{DensitySpec, ManifoldModel};
    use crate::net_estimators::GatePolicy;

    #[test]
    fn exact_torus_grid_has_exact_q() {
        let model = ManifoldModel::flat_torus(&[0.3, 0.3]);
        let side = 30;
        let h = 0.3 / side as f64;
        let pts: Vec<Vec<f64>> = (0..side * side)
            .map(|i| vec![(i % side) as f64 * h, (i / side) as f64 * h])
            .collect();
        let samples = SampleSet::from_points(&model, &pts, DensitySpec::Uniform, 0).unwrap();
        let scales = RefinementScales::new(1e-3, 0.31, 2).unwrap();
        let n = samples.len();
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        let net = CoarseNet::from_pairs(n, 0.35, pairs.map(|(i, j)| (i, j, samples.distance(i, j)))).unwrap();
        let cfg = RefineConfig {
            active: Some(vec![0, 2]),
            budget: 40,
            gate: GatePolicy::Report,
            ..RefineConfig::new(scales)
        };
        let r = refine(&net, &cfg).unwrap();
        // Chart 0 sits on the wrap-around corner, so positions must use the shortest lifts.
        let (check, _) = check_refinement(&net, &r, &samples, 60.0, 10_000).unwrap();
        assert!(check.pairs > 100);
        assert_eq!(check.q_within, check.pairs);
        assert!(check.q_error.max < 1e-6);
        assert_eq!(check.f_within, check.pairs);
    }

    #[test]
    fn vertex_positions_are_the_coarse_points() {
        let model = ManifoldModel::sphere(2, 1.0);
        let pts = vec![vec![0.0, 0.0, 1.0], vec![0.1f64.sin(), 0.0, 0.1f64.cos()]];
        let samples = SampleSet::from_points(&model, &pts, DensitySpec::Uniform, 0).unwrap();
        let net = CoarseNet::from_pairs(2, 1.0, [(0, 1, 0.1)]).unwrap();
        let v = RefinedPoint::vertex(&net, 0, 1, 2, 4, &[0, 1]).unwrap();
        let pos = refined_point_position(&samples, &v);
        assert!(model.distance(&pos, &pts[1]) < 1e-12);
        let mid = RefinedPoint::new(&net, 0, vec![1, 1], vec![1, 1], 4, &[0, 1]).unwrap();
        let pos = refined_point_position(&samples, &mid);
        assert!((model.distance(&pos, &pts[0]) - 0.05).abs() < 1e-12);
    }
}
