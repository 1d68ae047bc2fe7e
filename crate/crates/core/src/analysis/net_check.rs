use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric_models::{draw_point, DensitySpec, ManifoldModel, SampleSet};
use crate::rng::{item_stream, Purpose};

/// Cap on the number of cells of a [`CellIndex`].
const MAX_CELLS: usize = 1 << 22;

/// Uniform bucket grid over a model's coordinates, for radius queries up to
/// the cell width. Sphere points are bucketed by their embedded coordinates
/// (chord distance never exceeds geodesic distance); torus cells wrap.
#[derive(Debug, Clone)]
pub struct CellIndex<'a> {
    model: &'a ManifoldModel,
    points: Vec<&'a [f64]>,
    cells: Vec<usize>,
    origin: Vec<f64>,
    width: Vec<f64>,
    starts: Vec<usize>,
    members: Vec<u32>,
    wraps: bool,
}

impl<'a> CellIndex<'a> {
    /// Index for radius queries of at most `radius`.
    pub fn new(model: &'a ManifoldModel, points: Vec<&'a [f64]>, radius: f64) -> Self {
        let (origin, extent, wraps): (Vec<f64>, Vec<f64>, bool) = match model {
            ManifoldModel::Sphere { radius: r, .. } => {
                let k = model.coord_len();
                (vec![-r; k], vec![2.0 * r; k], false)
            }
            ManifoldModel::FlatTorus { periods } => (vec![0.0; periods.len()], periods.clone(), true),
        };
        let k = extent.len();
        let per_axis_cap = (MAX_CELLS as f64).powf(1.0 / k as f64).floor().max(1.0) as usize;
        let cells: Vec<usize> = extent
            .iter()
            .map(|e| ((e / radius.max(1e-300)).floor() as usize).clamp(1, per_axis_cap))
            .collect();
        let width: Vec<f64> = extent.iter().zip(&cells).map(|(e, c)| e / *c as f64).collect();
        let mut index = CellIndex {
            model,
            points,
            cells,
            origin,
            width,
            starts: Vec::new(),
            members: Vec::new(),
            wraps,
        };
        let total: usize = index.cells.iter().product();
        let keys: Vec<usize> = index.points.iter().map(|p| index.cell_of(p)).collect();
        let mut counts = vec![0usize; total + 1];
        for &c in &keys {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut members = vec![0u32; keys.len()];
        for (i, &c) in keys.iter().enumerate() {
            members[fill[c]] = i as u32;
            fill[c] += 1;
        }
        index.starts = counts;
        index.members = members;
        index
    }

    fn axis_cell(&self, axis: usize, c: f64) -> usize {
        let raw = ((c - self.origin[axis]) / self.width[axis]).floor() as i64;
        raw.clamp(0, self.cells[axis] as i64 - 1) as usize
    }

    fn cell_of(&self, p: &[f64]) -> usize {
        let mut flat = 0;
        for axis in (0..self.cells.len()).rev() {
            flat = flat * self.cells[axis] + self.axis_cell(axis, p[axis]);
        }
        flat
    }

    /// Indices of candidate points in the cells around `x`.
    fn candidates(&self, x: &[f64], mut visit: impl FnMut(usize)) {
        let k = self.cells.len();
        let mut axis_options: Vec<Vec<usize>> = Vec::with_capacity(k);
        for axis in 0..k {
            let c = self.axis_cell(axis, x[axis]) as i64;
            let n = self.cells[axis] as i64;
            let mut opts: Vec<usize> = (-1..=1)
                .filter_map(|o| {
                    let v = c + o;
                    if self.wraps {
                        Some(v.rem_euclid(n) as usize)
                    } else {
                        (0..n).contains(&v).then_some(v as usize)
                    }
                })
                .collect();
            opts.sort_unstable();
            opts.dedup();
            axis_options.push(opts);
        }
        let mut idx = vec![0usize; k];
        loop {
            let mut flat = 0;
            for axis in (0..k).rev() {
                flat = flat * self.cells[axis] + axis_options[axis][idx[axis]];
            }
            for &m in &self.members[self.starts[flat]..self.starts[flat + 1]] {
                visit(m as usize);
            }
            let mut axis = 0;
            loop {
                if axis == k {
                    return;
                }
                idx[axis] += 1;
                if idx[axis] < axis_options[axis].len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    /// The indexed point nearest to `x` among those within `radius` (at most the
    /// construction radius).
    pub fn nearest_within(&self, x: &[f64], radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.candidates(x, |i| {
            let d = self.model.distance(x, self.points[i]);
            if d <= radius && best.map_or(true, |(bi, bd)| d < bd || (d == bd && i < bi)) {
                best = Some((i, d));
            }
        });
        best
    }

    /// All indexed points within `radius` of `x`, in increasing index order.
    pub fn within(&self, x: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.candidates(x, |i| {
            let d = self.model.distance(x, self.points[i]);
            if d <= radius {
                out.push((i, d));
            }
        });
        out.sort_unstable_by_key(|(i, _)| *i);
        out
    }

    /// Exact nearest point by exhaustive search.
    pub fn nearest_exhaustive(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, self.model.distance(x, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckConfig {
    /// Largest reference cloud to draw.
    pub budget: usize,
    pub seed: u64,
}

impl Default for NetCheckConfig {
    fn default() -> Self {
        NetCheckConfig {
            budget: 200_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetCheck {
    pub is_net: bool,
    /// Largest distance from a reference point to the nearest sample.
    pub worst_gap: f64,
    pub reference_points: usize,
    /// The reference cloud was cut down to the budget.
    pub reduced_confidence: bool,
}

/// Whether `samples` is a `δ`-net, judged on a uniform reference cloud of
/// `10·|samples|·(D/δ)ⁿ` points (capped by the budget).
pub fn is_delta_net(samples: &SampleSet, delta: f64, cfg: &NetCheckConfig) -> NetCheck {
    let model = samples.model();
    if samples.is_empty() {
        return NetCheck {
            is_net: false,
            worst_gap: f64::INFINITY,
            reference_points: 0,
            reduced_confidence: false,
        };
    }
    let wanted = 10.0 * samples.len() as f64 * (model.diameter() / delta).max(1.0).powi(model.dimension() as i32);
    let count = if wanted > cfg.budget as f64 {
        cfg.budget
    } else {
        wanted.ceil() as usize
    };
    let index = CellIndex::new(model, samples.points().collect(), delta);
    let worst_gap = (0..count)
        .into_par_iter()
        .map(|r| {
            let mut rng = item_stream(cfg.seed, Purpose::Reference, r as u64);
            let x = draw_point(model, &DensitySpec::Uniform, &mut rng);
            match index.nearest_within(&x, delta) {
                Some((_, d)) => d,
                None => index.nearest_exhaustive(&x).map_or(f64::INFINITY, |(_, d)| d),
            }
        })
        .reduce(|| 0.0, f64::max);
    NetCheck {
        is_net: worst_gap < delta,
        worst_gap,
        reference_points: count,
        reduced_confidence: wanted > cfg.budget as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_models::sample_points;

    #[test]
    fn cell_queries_match_brute_force() {
        for model in [ManifoldModel::sphere(2, 1.0), ManifoldModel::flat_torus(&[1.0, 0.7])] {
            let pts = sample_points(&model, 400, DensitySpec::Uniform, 4).unwrap();
            let probes = sample_points(&model, 200, DensitySpec::Uniform, 5).unwrap();
            let r = 0.15;
            let index = CellIndex::new(&model, pts.points().collect(), r);
            for x in probes.points() {
                let brute: Vec<usize> = (0..pts.len()).filter(|&i| model.distance(x, pts.point(i)) <= r).collect();
                let got: Vec<usize> = index.within(x, r).into_iter().map(|(i, _)| i).collect();
                assert_eq!(got, brute);
                let near = index.nearest_within(x, r).map(|(i, _)| i);
                let exhaustive = index.nearest_exhaustive(x).filter(|(_, d)| *d <= r).map(|(i, _)| i);
                assert_eq!(near, exhaustive);
            }
        }
    }

    #[test]
    fn single_sphere_sample_is_not_a_net() {
        let model = ManifoldModel::sphere(2, 1.0);
        let s = sample_points(&model, 1, DensitySpec::Uniform, 7).unwrap();
        let check = is_delta_net(&s, 0.1, &NetCheckConfig::default());
        assert!(!check.is_net);
        assert!(check.worst_gap > 2.8);
    }

    #[test]
    fn fine_torus_grid_is_a_net() {
        let delta = 0.1;
        let model = ManifoldModel::flat_torus(&[1.0, 1.0]);
        let m = (3.0f64 / delta).ceil() as usize;
        let pts: Vec<Vec<f64>> = (0..m * m)
            .map(|i| vec![(i % m) as f64 / m as f64, (i / m) as f64 / m as f64])
            .collect();
        let s = SampleSet::from_points(&model, &pts, DensitySpec::Uniform, 0).unwrap();
        let check = is_delta_net(&s, delta, &NetCheckConfig { budget: 50_000, seed: 1 });
        assert!(check.is_net);
        assert!(check.worst_gap <= delta / 3.0 * 2f64.sqrt() / 2.0 + 1e-12);
        assert!(check.reduced_confidence);
    }

    #[test]
    fn diameter_radius_is_always_a_net() {
        let model = ManifoldModel::flat_torus(&[1.0, 1.0]);
        let s = sample_points(&model, 3, DensitySpec::Uniform, 2).unwrap();
        assert!(is_delta_net(&s, 1.0, &NetCheckConfig::default()).is_net);
    }
}
