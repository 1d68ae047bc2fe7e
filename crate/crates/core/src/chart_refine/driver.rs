use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{chart_map_f, find_basis, Basis, BasisSummary};
use super::points::{squared_distance_q, RefinedPoint};
use super::{neighbor_sets, simplex_grid, simplex_grid_size, CoarseNet, RefinementScales};
use crate::error::{Error, Result};
use crate::net_estimators::GatePolicy;
use crate::rng::{item_stream, Purpose};

/// Random refined points drawn per chart when the full index set is too large.
pub const DEFAULT_BUDGET: usize = 512;

/// The per-chart index-set budget from `GEONET_BUDGET`, or [`DEFAULT_BUDGET`].
pub fn budget_from_env() -> Result<usize> {
    match std::env::var("GEONET_BUDGET") {
        Err(_) => Ok(DEFAULT_BUDGET),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(b) if b > 0 => Ok(b),
            _ => Err(Error::Config(format!("GEONET_BUDGET = {raw:?} is not a positive integer"))),
        },
    }
}

fn default_c1() -> f64 {
    32.0
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub scales: RefinementScales,
    /// Basis tolerance is `C₁ δ̂ / r̂`.
    #[serde(default = "default_c1")]
    pub basis_c1: f64,
    /// Largest per-chart index set `|Σ|·|X_p|ⁿ` built in full; beyond it this
    /// many random `(α, τ)` are drawn instead.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Charts to build; all when absent.
    #[serde(default)]
    pub active: Option<Vec<usize>>,
    #[serde(default)]
    pub gate: GatePolicy,
}

impl RefineConfig {
    pub fn new(scales: RefinementScales) -> Self {
        RefineConfig {
            scales,
            basis_c1: default_c1(),
            budget: DEFAULT_BUDGET,
            seed: 0,
            active: None,
            gate: GatePolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDiagnostics {
    pub chart: usize,
    /// `|X_p|`.
    pub neighbors: usize,
    /// Refined points built before deduplication.
    pub candidates: usize,
    /// Refined points kept.
    pub points: usize,
    pub subsampled: bool,
    pub basis: BasisSummary,
    /// Charts admissible with this one (itself excluded).
    pub partners: usize,
    /// Largest gap between the two chart estimates of one pair, over every
    /// block this chart takes part in.
    pub disagreement: f64,
}

/// Chart coordinates of the other chart's points, for one admissible pair.
#[derive(Debug, Clone)]
struct CrossBlock {
    /// `F_p` of the points of `Y_q`, row-major with `n` columns.
    p_of_q: Vec<f64>,
    /// `F_q` of the points of `Y_p`.
    q_of_p: Vec<f64>,
}

/// Refined net with its chart maps. Refined points are numbered chart by
/// chart; `d̃′` is evaluated on demand from the stored coordinates.
#[derive(Debug, Clone)]
pub struct Refinement {
    scales: RefinementScales,
    grid_m: u32,
    points: Vec<RefinedPoint>,
    offsets: Vec<usize>,
    coords: Vec<Vec<f64>>,
    cross: BTreeMap<(usize, usize), CrossBlock>,
    diagnostics: Vec<ChartDiagnostics>,
    gate_violations: Vec<String>,
}

struct ChartBuild {
    points: Vec<RefinedPoint>,
    coords: Vec<f64>,
    basis: Basis,
    candidates: usize,
    neighbors: usize,
    subsampled: bool,
}

fn chart_candidates(
    net: &CoarseNet,
    cfg: &RefineConfig,
    p: usize,
    x_p: &[usize],
    grid_m: u32,
) -> Result<(Vec<RefinedPoint>, bool)> {
    let n = cfg.scales.n;
    let mut out: Vec<RefinedPoint> = Vec::new();
    out.push(RefinedPoint::vertex(net, p, p, n, grid_m, x_p)?);
    for &x in x_p.iter().filter(|&&x| x != p) {
        out.push(RefinedPoint::vertex(net, p, x, n, grid_m, x_p)?);
    }
    let full = simplex_grid_size(n, grid_m as usize).saturating_mul((x_p.len() as u128).saturating_pow(n as u32));
    if full <= cfg.budget as u128 {
        let (_, grid) = simplex_grid(n, cfg.scales.eps_prime)?;
        let mut alpha = vec![0usize; n];
        loop {
            let a: Vec<usize> = alpha.iter().map(|&k| x_p[k]).collect();
            for tau in &grid {
                out.push(RefinedPoint::new(net, p, a.clone(), tau.clone(), grid_m, x_p)?);
            }
            let mut axis = 0;
            while axis < n {
                alpha[axis] += 1;
                if alpha[axis] < x_p.len() {
                    break;
                }
                alpha[axis] = 0;
                axis += 1;
            }
            if axis == n {
                break;
            }
        }
        return Ok((out, false));
    }
    log::warn!(
        "chart {p}: full index set has {full} points, drawing {} random (α, τ) instead",
        cfg.budget
    );
    let mut rng = item_stream(cfg.seed, Purpose::Subsample, p as u64);
    for _ in 0..cfg.budget {
        let alpha: Vec<usize> = (0..n).map(|_| x_p[rng.gen_range(0..x_p.len())]).collect();
        // Flat Dirichlet weights over (p, a₁, …, aₙ), floored onto the grid.
        let e: Vec<f64> = (0..=n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = e.iter().sum();
        let tau: Vec<u32> = e[1..].iter().map(|v| (grid_m as f64 * v / total).floor() as u32).collect();
        out.push(RefinedPoint::new(net, p, alpha, tau, grid_m, x_p)?);
    }
    Ok((out, true))
}

/// Keep the first point of every cluster of chart coordinates closer than
/// `tol`, visiting `order` in sequence.
fn dedup(coords: &[Vec<f64>], order: &[usize], tol: f64) -> Vec<usize> {
    let key = |f: &[f64]| -> Vec<i64> { f.iter().map(|v| (v / tol).floor() as i64).collect() };
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for &i in order {
        let k = key(&coords[i]);
        let n = k.len();
        let mut clash = false;
        let mut offset = vec![-1i64; n];
        'scan: loop {
            let probe: Vec<i64> = k.iter().zip(&offset).map(|(a, b)| a + b).collect();
            if let Some(members) = cells.get(&probe) {
                for &j in members {
                    if euclid(&coords[i], &coords[j]) < tol {
                        clash = true;
                        break 'scan;
                    }
                }
            }
            let mut axis = 0;
            while axis < n {
                offset[axis] += 1;
                if offset[axis] <= 1 {
                    break;
                }
                offset[axis] = -1;
                axis += 1;
            }
            if axis == n {
                break;
            }
        }
        if !clash {
            cells.entry(k).or_default().push(i);
            kept.push(i);
        }
    }
    kept
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn build_chart(net: &CoarseNet, cfg: &RefineConfig, p: usize, x_p: &[usize], grid_m: u32) -> Result<ChartBuild> {
    let scales = &cfg.scales;
    let (cands, subsampled) = chart_candidates(net, cfg, p, x_p, grid_m)?;
    let tol = cfg.basis_c1 * scales.delta_hat / scales.r_hat;
    let basis = find_basis(net, scales, &cands[0], &cands, tol)?;
    let f = chart_map_f(net, scales, &basis, &cands)?;
    let mut order: Vec<usize> = vec![0];
    order.extend(basis.members.iter().copied());
    order.extend((1..cands.len()).filter(|i| !basis.members.contains(i)));
    let kept = dedup(&f, &order, scales.delta_hat / 2.0);
    let mut basis = basis;
    basis.members = basis
        .members
        .iter()
        .map(|m| kept.iter().position(|k| k == m).expect("basis points survive deduplication"))
        .collect();
    Ok(ChartBuild {
        candidates: cands.len(),
        neighbors: x_p.len(),
        coords: kept.iter().flat_map(|&i| f[i].iter().copied()).collect(),
        points: kept.iter().map(|&i| cands[i].clone()).collect(),
        basis,
        subsampled,
    })
}

/// Build refined points, bases and chart maps for every active chart, and
/// the chart coordinates needed by every admissible chart pair.
///
/// The coarse net must store every pair with `d̃ < r̂`: admissible chart
/// pairs reach that far through their neighbour sets.
pub fn refine(net: &CoarseNet, cfg: &RefineConfig) -> Result<Refinement> {
    let scales = cfg.scales;
    let gate_violations = scales.check(cfg.gate)?;
    if !(cfg.basis_c1 > 0.0) || cfg.budget == 0 {
        return Err(Error::Parameter("need C₁ > 0 and a positive budget".into()));
    }
    if net.cutoff() < scales.r_hat {
        return Err(Error::Parameter(format!(
            "coarse net stores d̃ only below {}, refinement needs every pair below r̂ = {}",
            net.cutoff(),
            scales.r_hat
        )));
    }
    let grid_m = u32::try_from(scales.grid_resolution())
        .map_err(|_| Error::TooFine { size: u128::MAX, limit: super::GRID_LIMIT })?;
    let active: Vec<usize> = match &cfg.active {
        None => (0..net.len()).collect(),
        Some(list) => {
            let mut v = list.clone();
            v.sort_unstable();
            v.dedup();
            if let Some(bad) = v.iter().find(|&&p| p >= net.len()) {
                return Err(Error::Input(format!("active chart {bad} out of range for {} points", net.len())));
            }
            v
        }
    };
    let x_sets = neighbor_sets(net, &scales);
    let builds: Vec<ChartBuild> = active
        .par_iter()
        .map(|&p| build_chart(net, cfg, p, &x_sets[p], grid_m))
        .collect::<Result<_>>()?;

    let n = scales.n;
    let mut slot = vec![usize::MAX; net.len()];
    for (k, &p) in active.iter().enumerate() {
        slot[p] = k;
    }
    let mut offsets = vec![0usize; net.len() + 1];
    for p in 0..net.len() {
        offsets[p + 1] = offsets[p] + if slot[p] == usize::MAX { 0 } else { builds[slot[p]].points.len() };
    }

    let radius = scales.admissible_radius();
    let pairs: Vec<(usize, usize)> = active
        .iter()
        .enumerate()
        .flat_map(|(k, &p)| active[k + 1..].iter().map(move |&q| (p, q)))
        .filter(|&(p, q)| net.get(p, q).is_some_and(|d| d < radius))
        .collect();
    let blocks: Vec<(CrossBlock, f64)> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let bp = &builds[slot[p]];
            let bq = &builds[slot[q]];
            let flat = |rows: Vec<Vec<f64>>| rows.into_iter().flatten().collect::<Vec<f64>>();
            let block = CrossBlock {
                p_of_q: flat(chart_map_f(net, &scales, &bp.basis, &bq.points)?),
                q_of_p: flat(chart_map_f(net, &scales, &bq.basis, &bp.points)?),
            };
            let mut gap: f64 = 0.0;
            for i in 0..bp.points.len() {
                for j in 0..bq.points.len() {
                    let a = euclid(&bp.coords[i * n..(i + 1) * n], &block.p_of_q[j * n..(j + 1) * n]);
                    let b = euclid(&block.q_of_p[i * n..(i + 1) * n], &bq.coords[j * n..(j + 1) * n]);
                    gap = gap.max((a - b).abs());
                }
            }
            Ok((block, gap))
        })
        .collect::<Result<_>>()?;

    let mut partners = vec![0usize; active.len()];
    let mut disagreement = vec![0.0f64; active.len()];
    let mut cross = BTreeMap::new();
    for (&(p, q), (block, gap)) in pairs.iter().zip(blocks) {
        for c in [slot[p], slot[q]] {
            partners[c] += 1;
            disagreement[c] = disagreement[c].max(gap);
        }
        cross.insert((p, q), block);
    }

    let mut points = Vec::with_capacity(offsets[net.len()]);
    let mut coords = vec![Vec::new(); net.len()];
    let mut diagnostics = Vec::with_capacity(active.len());
    for (k, (&p, build)) in active.iter().zip(builds).enumerate() {
        diagnostics.push(ChartDiagnostics {
            chart: p,
            neighbors: build.neighbors,
            candidates: build.candidates,
            points: build.points.len(),
            subsampled: build.subsampled,
            basis: build.basis.summary(),
            partners: partners[k],
            disagreement: disagreement[k],
        });
        points.extend(build.points);
        coords[p] = build.coords;
    }
    Ok(Refinement {
        scales,
        grid_m,
        points,
        offsets,
        coords,
        cross,
        diagnostics,
        gate_violations,
    })
}

#[derive(Serialize)]
struct DiagnosticsReport<'a> {
    scales: &'a RefinementScales,
    grid_m: u32,
    refined_points: usize,
    admissible_chart_pairs: usize,
    gate_violations: &'a [String],
    charts: &'a [ChartDiagnostics],
}

impl Refinement {
    pub fn scales(&self) -> &RefinementScales {
        &self.scales
    }

    pub fn grid_m(&self) -> u32 {
        self.grid_m
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[RefinedPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &RefinedPoint {
        &self.points[i]
    }

    /// Global indices of the refined points of chart `p`.
    pub fn chart_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub fn diagnostics(&self) -> &[ChartDiagnostics] {
        &self.diagnostics
    }

    pub fn gate_violations(&self) -> &[String] {
        &self.gate_violations
    }

    /// Admissible pairs of distinct active charts, `p < q`.
    pub fn admissible_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cross.keys().copied()
    }

    /// Coordinates of refined point `i` in its own chart.
    pub fn chart_coords(&self, i: usize) -> &[f64] {
        let (p, local) = self.locate(i);
        let n = self.scales.n;
        &self.coords[p][local * n..(local + 1) * n]
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let p = self.points[i].chart;
        (p, i - self.offsets[p])
    }

    /// `d̃′(x, y)` when the pair is covered by an admissible chart pair: the
    /// median of the estimates of the charts involved (their mean, for two).
    pub fn covered_dtilde(&self, x: usize, y: usize) -> Option<f64> {
        if x == y {
            return Some(0.0);
        }
        let n = self.scales.n;
        let ((p, i), (q, j)) = {
            let (a, b) = (self.locate(x), self.locate(y));
            if a.0 <= b.0 {
                (a, b)
            } else {
                (b, a)
            }
        };
        let own = |c: usize, k: usize| &self.coords[c][k * n..(k + 1) * n];
        let value = if p == q {
            euclid(own(p, i), own(p, j))
        } else {
            let block = self.cross.get(&(p, q))?;
            let a = euclid(own(p, i), &block.p_of_q[j * n..(j + 1) * n]);
            let b = euclid(&block.q_of_p[i * n..(i + 1) * n], own(q, j));
            0.5 * (a + b)
        };
        Some(value.min(self.scales.r_hat))
    }

    pub fn covered(&self, x: usize, y: usize) -> bool {
        self.covered_dtilde(x, y).is_some()
    }

    /// `d̃′(x, y)`, with `r̂` for uncovered pairs.
    pub fn dtilde(&self, x: usize, y: usize) -> f64 {
        self.covered_dtilde(x, y).unwrap_or(self.scales.r_hat)
    }

    /// `Q(x, y)` for refined points of an admissible chart pair.
    pub fn q(&self, net: &CoarseNet, x: usize, y: usize) -> Result<f64> {
        squared_distance_q(net, &self.scales, &self.points[x], &self.points[y])
    }

    /// Every covered pair `x < y`, chart block by chart block.
    pub fn covered_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let active: Vec<usize> = self.diagnostics.iter().map(|d| d.chart).collect();
        let same = active.clone().into_iter().flat_map(move |p| {
            let r = self.chart_range(p);
            r.clone().flat_map(move |x| (x + 1..r.end).map(move |y| (x, y)))
        });
        let cross = self.cross.keys().flat_map(move |&(p, q)| {
            let rq = self.chart_range(q);
            self.chart_range(p).flat_map(move |x| rq.clone().map(move |y| (x, y)))
        });
        same.chain(cross)
    }

    /// CSV `index,chart,alpha,tau,grid_m`; `α` and `τ` are `;`-separated.
    pub fn save_points(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "index,chart,alpha,tau,grid_m")?;
        for (i, pt) in self.points.iter().enumerate() {
            let join = |v: Vec<String>| v.join(";");
            writeln!(
                out,
                "{i},{},{},{},{}",
                pt.chart,
                join(pt.alpha.iter().map(|a| a.to_string()).collect()),
                join(pt.tau.iter().map(|t| t.to_string()).collect()),
                pt.grid_m
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV `i,j,dtilde,covered` over covered pairs `i < j`; every pair not
    /// listed has `d̃′ = r̂`.
    pub fn save_dtilde(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "i,j,dtilde,covered")?;
        let mut pairs: Vec<(usize, usize)> = self.covered_pairs().collect();
        pairs.sort_unstable();
        for (x, y) in pairs {
            writeln!(out, "{x},{y},{:?},1", self.dtilde(x, y))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Chart diagnostics as JSON.
    pub fn save_diagnostics(&self, path: &Path) -> Result<()> {
        let report = DiagnosticsReport {
            scales: &self.scales,
            grid_m: self.grid_m,
            refined_points: self.points.len(),
            admissible_chart_pairs: self.cross.len(),
            gate_violations: &self.gate_violations,
            charts: &self.diagnostics,
        };
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact flat grid with spacing `h`, `side × side` points.
    fn grid_net(side: usize, h: f64, cutoff: f64) -> (CoarseNet, Vec<[f64; 2]>) {
        let pos: Vec<[f64; 2]> = (0..side * side).map(|i| [(i % side) as f64 * h, (i / side) as f64 * h]).collect();
        let n = pos.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j, ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt()));
            }
        }
        (CoarseNet::from_pairs(n, cutoff, pairs).unwrap(), pos)
    }

    fn cfg(active: Vec<usize>, budget: usize) -> RefineConfig {
        // r̂/6 = 0.0517 keeps the grid offsets (3, 4) and (5, 0) inside X_p.
        let scales = RefinementScales::new(1e-3, 0.31, 2).unwrap();
        RefineConfig {
            budget,
            active: Some(active),
            gate: GatePolicy::Report,
            seed: 5,
            ..RefineConfig::new(scales)
        }
    }

    #[test]
    fn exact_flat_data_is_reproduced() {
        let (net, pos) = grid_net(21, 0.01, 0.4);
        let centre = 10 * 21 + 10;
        let other = centre + 3;
        let r = refine(&net, &cfg(vec![centre, other], 64)).unwrap();
        assert_eq!(r.admissible_pairs().collect::<Vec<_>>(), vec![(centre, other)]);
        assert!(r.diagnostics().iter().all(|d| d.subsampled && d.basis.residual <= 32.0 * 1e-3 / 0.31));
        // True position of a refined point is the weighted average of its coarse points.
        let truth = |i: usize| {
            let mut v = [0.0, 0.0];
            for &(a, w) in r.point(i).weights() {
                v[0] += w * pos[a][0];
                v[1] += w * pos[a][1];
            }
            v
        };
        // With Gram residual e, every eigenvalue of the normalized Gram matrix
        // lies within 2e of 1 (Gershgorin, n = 2), so the chart maps scale
        // lengths by a factor within 2e of 1.
        let e = r.diagnostics().iter().map(|d| d.basis.residual).fold(0.0, f64::max);
        let mut checked = 0;
        for (x, y) in r.covered_pairs() {
            let (a, b) = (truth(x), truth(y));
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!((r.dtilde(x, y) - d).abs() <= 2.0 * e * d + 1e-12, "pair ({x}, {y})");
            assert!((r.q(&net, x, y).unwrap() - d * d).abs() < 1e-12);
            checked += 1;
        }
        assert!(checked > 1000);
        assert_eq!(r.dtilde(0, 0), 0.0);
    }

    #[test]
    fn uncovered_pairs_fall_back_to_r_hat() {
        let (net, _) = grid_net(40, 0.01, 0.4);
        let a = 20 * 40 + 5;
        let b = 20 * 40 + 35;
        let r = refine(&net, &cfg(vec![a, b], 32)).unwrap();
        assert_eq!(r.admissible_pairs().count(), 0);
        let x = r.chart_range(a).start;
        let y = r.chart_range(b).start;
        assert!(!r.covered(x, y));
        assert_eq!(r.dtilde(x, y), 0.31);
        assert_eq!(r.dtilde(y, y), 0.0);
    }

    #[test]
    fn deterministic_and_deduplicated() {
        let (net, _) = grid_net(15, 0.01, 0.4);
        let c = cfg(vec![7 * 15 + 7], 400);
        let r1 = refine(&net, &c).unwrap();
        let r2 = refine(&net, &c).unwrap();
        assert_eq!(r1.points(), r2.points());
        let n = r1.len();
        for x in 0..n {
            for y in x + 1..n {
                assert!(r1.dtilde(x, y) >= 0.5e-3, "kept points {x}, {y} are duplicates");
            }
        }
    }

    #[test]
    fn sparse_coarse_cutoff_is_rejected() {
        let (net, _) = grid_net(5, 0.01, 0.1);
        assert!(matches!(refine(&net, &cfg(vec![0], 8)), Err(Error::Parameter(_))));
    }

    #[test]
    fn budget_env_parsing() {
        // Only the default path is exercised here; the variable is process-wide.
        if std::env::var("GEONET_BUDGET").is_err() {
            assert_eq!(budget_from_env().unwrap(), DEFAULT_BUDGET);
        }
    }
}
