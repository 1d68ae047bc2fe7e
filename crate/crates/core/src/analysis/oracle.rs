use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric_models::{draw_point, sample_points, DensitySpec, GeometryBounds, ManifoldModel};
use crate::net_estimators::{beta1, mask_constants, psi1, ParameterLedger};
use crate::observation::MaskSpec;
use crate::rng::{item_stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Number of integration nodes.
    pub m_int: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { m_int: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Equal-weight Fibonacci lattice on the 2-sphere.
    Fibonacci,
    /// Equal-weight midpoint grid on the torus.
    MidpointGrid,
    /// I.i.d. draws from the measure.
    MonteCarlo,
}

/// Equal-weight integration nodes for a probability measure on a model.
#[derive(Debug, Clone)]
pub struct MeasureRule {
    pub model: ManifoldModel,
    pub kind: RuleKind,
    coords: Vec<f64>,
    stride: usize,
}

impl MeasureRule {
    /// Lattice rule for the uniform measure where one exists, Monte Carlo otherwise.
    pub fn new(model: &ManifoldModel, density: &DensitySpec, cfg: &OracleConfig) -> Result<Self> {
        model.validate()?;
        density.ratio_range()?;
        if cfg.m_int == 0 {
            return Err(Error::Config("oracle needs at least one integration node".into()));
        }
        let stride = model.coord_len();
        let uniform = matches!(density, DensitySpec::Uniform);
        let (kind, coords) = match model {
            ManifoldModel::Sphere { dimension: 2, radius } if uniform => {
                let m = cfg.m_int;
                let golden = PI * (3.0 - 5f64.sqrt());
                let mut coords = Vec::with_capacity(3 * m);
                for i in 0..m {
                    let z = 1.0 - (2 * i + 1) as f64 / m as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    coords.extend_from_slice(&[radius * r * phi.cos(), radius * r * phi.sin(), radius * z]);
                }
                (RuleKind::Fibonacci, coords)
            }
            ManifoldModel::FlatTorus { periods } if uniform => {
                let n = periods.len();
                let per_axis = (cfg.m_int as f64).powf(1.0 / n as f64).ceil().max(1.0) as usize;
                let total = per_axis.pow(n as u32);
                let mut coords = Vec::with_capacity(total * n);
                for flat in 0..total {
                    let mut rest = flat;
                    for p in periods {
                        let idx = rest % per_axis;
                        rest /= per_axis;
                        coords.push((idx as f64 + 0.5) / per_axis as f64 * p);
                    }
                }
                (RuleKind::MidpointGrid, coords)
            }
            _ => {
                let s = sample_points(model, cfg.m_int, *density, cfg.seed)?;
                let coords = s.points().flat_map(|p| p.iter().copied()).collect();
                (RuleKind::MonteCarlo, coords)
            }
        };
        Ok(MeasureRule {
            model: model.clone(),
            kind,
            coords,
            stride,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.stride)
    }

    /// Mean of `f` over the nodes with its standard error.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
        let (mut sum, mut sq) = (0.0, 0.0);
        for x in self.nodes() {
            let v = f(x);
            sum += v;
            sq += v * v;
        }
        let m = self.len() as f64;
        let mean = sum / m;
        let var = (sq / m - mean * mean).max(0.0);
        (mean, (var / m).sqrt())
    }
}

/// `k_Φ(y, z)` and `A_Φ(y, z)` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPhi {
    pub k: f64,
    pub a: f64,
    pub k_se: f64,
    pub a_se: f64,
}

/// `k_Φ(y,z) = ∫ |d(y,x) − d(z,x)|² Φ(y,x) Φ(x,z) dμ(x)` and
/// `A_Φ(y,z) = ∫ Φ(y,x) Φ(x,z) dμ(x)` on a prepared rule.
pub fn kphi(rule: &MeasureRule, mask: &MaskSpec, y: &[f64], z: &[f64]) -> KPhi {
    let model = &rule.model;
    let (mut ks, mut kq, mut as_, mut aq) = (0.0, 0.0, 0.0, 0.0);
    for x in rule.nodes() {
        let dy = model.distance(y, x);
        let dz = model.distance(z, x);
        let w = mask.probability(model, y, x, dy) * mask.probability(model, x, z, dz);
        let diff = dy - dz;
        let kv = diff * diff * w;
        ks += kv;
        kq += kv * kv;
        as_ += w;
        aq += w * w;
    }
    let m = rule.len() as f64;
    let se = |s: f64, q: f64| ((q / m - (s / m).powi(2)).max(0.0) / m).sqrt();
    KPhi {
        k: ks / m,
        a: as_ / m,
        k_se: se(ks, kq),
        a_se: se(as_, aq),
    }
}

/// One-shot variant of [`kphi`] that builds its own rule.
pub fn kphi_oracle(
    model: &ManifoldModel,
    density: &DensitySpec,
    mask: &MaskSpec,
    y: &[f64],
    z: &[f64],
    cfg: &OracleConfig,
) -> Result<KPhi> {
    model.validate_point(y)?;
    model.validate_point(z)?;
    let rule = MeasureRule::new(model, density, cfg)?;
    Ok(kphi(&rule, mask, y, z))
}

/// Calibrated value of `c₅` and the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C5Estimate {
    /// The minimum ratio shrunk by the safety factor.
    pub c5: f64,
    pub min_ratio: f64,
    pub safety: f64,
    pub pairs_tested: usize,
    pub pairs_used: usize,
    /// The pair realizing the minimum, as its distance.
    pub argmin_distance: f64,
}

/// Safety factor applied to the empirical minimum of `k_Φ^{1/2}/d`.
pub const C5_SAFETY: f64 = 0.9;

/// Ratios `k_Φ(y,z)^{1/2} / d(y,z)` for random pairs drawn from `density`,
/// returned as `(distance, ratio, A_Φ)` per pair.
pub fn kuratowski_ratios(
    rule: &MeasureRule,
    density: &DensitySpec,
    mask: &MaskSpec,
    pairs: usize,
    seed: u64,
) -> Vec<(f64, f64, f64)> {
    let model = &rule.model;
    (0..pairs)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = item_stream(seed, Purpose::Oracle, i as u64);
            let y = draw_point(model, density, &mut rng);
            let z = draw_point(model, density, &mut rng);
            let d = model.distance(&y, &z);
            if d <= 0.0 {
                return None;
            }
            let kp = kphi(rule, mask, &y, &z);
            Some((d, kp.k.max(0.0).sqrt() / d, kp.a))
        })
        .collect()
}

/// Empirical `c₅` over `pairs` random pairs with `A_Φ ≥ ĉ₄`.
pub fn estimate_c5(
    rule: &MeasureRule,
    density: &DensitySpec,
    mask: &MaskSpec,
    c4_hat: f64,
    pairs: usize,
    seed: u64,
) -> Result<C5Estimate> {
    let all = kuratowski_ratios(rule, density, mask, pairs, seed);
    let used: Vec<_> = all.iter().filter(|(_, _, a)| *a >= c4_hat && *a > 0.0).collect();
    let (argmin_distance, min_ratio) = used
        .iter()
        .map(|(d, r, _)| (*d, *r))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Calibration(format!("no pair out of {pairs} has A_Φ ≥ ĉ₄ = {c4_hat:e}")))?;
    if !(min_ratio > 0.0) {
        return Err(Error::Calibration(format!("minimum ratio {min_ratio} is not positive")));
    }
    Ok(C5Estimate {
        c5: (C5_SAFETY * min_ratio).min(1.0),
        min_ratio,
        safety: C5_SAFETY,
        pairs_tested: all.len(),
        pairs_used: used.len(),
        argmin_distance,
    })
}

/// `ĉ₄` for a geometry and mask, needed before `c₅` is known.
pub fn c4_hat_for(bounds: &GeometryBounds, mask: &MaskSpec) -> f64 {
    mask_constants(bounds, mask).c4_hat
}

/// `W^{(d),−}(y, z) = ∫ β₁(A(y,x)/b) Φ(z,x) ψ_{ρ/2}(k_Φ(y,x)) dμ(x)`, with
/// the outer integral over `outer` and `A`, `k_Φ` evaluated on `inner`.
pub fn w_minus_oracle(
    outer: &MeasureRule,
    inner: &MeasureRule,
    mask: &MaskSpec,
    ledger: &ParameterLedger,
    y: &[f64],
    z: &[f64],
) -> (f64, f64) {
    let model = &outer.model;
    let half = ledger.rho / 2.0;
    let values: Vec<f64> = outer
        .nodes()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x| {
            let dz = model.distance(z, x);
            let pz = mask.probability(model, z, x, dz);
            if pz == 0.0 {
                return 0.0;
            }
            let kp = kphi(inner, mask, y, x);
            let gate = beta1(kp.a / ledger.b);
            if gate == 0.0 {
                return 0.0;
            }
            gate * pz * psi1(kp.k / (half * half))
        })
        .collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    (mean, (var / m).sqrt())
}

/// A random point at distance exactly `d` from `y` (sphere) or at offset of
/// length `d` in a random direction (torus).
pub fn point_at_distance<R: Rng>(model: &ManifoldModel, y: &[f64], d: f64, rng: &mut R) -> Vec<f64> {
    let scale_to = |mut v: Vec<f64>| {
        let len = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        (len > 1e-9).then(|| {
            v.iter_mut().for_each(|c| *c *= d / len);
            v
        })
    };
    loop {
        let dir = match model {
            ManifoldModel::Sphere { .. } => model.log_map(y, &draw_point(model, &DensitySpec::Uniform, rng)),
            ManifoldModel::FlatTorus { periods } => {
                periods.iter().map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
            }
        };
        if let Some(v) = scale_to(dir) {
            return model.exp_map(y, &v);
        }
    }
}
