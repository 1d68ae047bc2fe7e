//! Noisy, partially observed pairwise distances.
//!
//! For every unordered pair `{j, k}` of sample points the observation model
//! produces `D̄_jk = d(X_j, X_k) + η_jk` together with an independent mask bit
//! `Y_jk ~ Bernoulli(Φ(X_j, X_k))`. Masked pairs carry no value; reading one is
//! an error rather than a sentinel.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::net_estimators::smoothstep;
use crate::error::{Error, Result};
use crate::metric_models::{sidecar_path, ManifoldModel, SampleSet};
use crate::rng::{pair_stream, Purpose};

/// Distribution of the additive measurement error `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    /// Laplace with the given scale `b` (standard deviation `b√2`).
    Laplace {
        scale: f64,
    },
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec::Gaussian { sigma }
    }

    /// Standard deviation `σ`.
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Laplace { scale } => scale * std::f64::consts::SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(()),
            NoiseSpec::Laplace { scale } if scale.is_finite() && scale >= 0.0 => Ok(()),
            other => Err(Error::Config(format!("invalid noise parameters {other:?}"))),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                }
            }
            NoiseSpec::Laplace { scale } => {
                if scale == 0.0 {
                    return 0.0;
                }
                let u: f64 = rng.gen::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// `β = E e^{|η|}`.
pub fn beta_of(noise: &NoiseSpec) -> Result<f64> {
    noise.validate()?;
    match *noise {
        NoiseSpec::None => Ok(1.0),
        NoiseSpec::Gaussian { sigma } => {
            let cdf = 0.5 * statrs::function::erf::erfc(-sigma / std::f64::consts::SQRT_2);
            Ok(2.0 * (sigma * sigma / 2.0).exp() * cdf)
        }
        NoiseSpec::Laplace { scale } => {
            if scale < 1.0 {
                Ok(1.0 / (1.0 - scale))
            } else {
                Err(Error::UnsupportedNoise(format!(
                    "Laplace scale {scale} ≥ 1 has no finite exponential moment"
                )))
            }
        }
    }
}

/// Distance profile `Φ¹` of the masking probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskProfile {
    Constant { phi0: f64 },
    Exponential { phi0: f64, decay: f64 },
    /// `φ₀` up to `range`, then a quintic smoothstep down to zero whose width
    /// keeps the slope at most `H`.
    SmoothCutoff { phi0: f64, range: f64 },
}

/// Masking law `Φ(x, y) = min(1, m(x, y) Φ¹(d(x, y)))`, where
/// `m(x, y) = 1 + a (h(x) + h(y)) / 2` and `c₁ ≤ m ≤ c₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub profile: MaskProfile,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default)]
    pub anisotropy: f64,
    /// Bound `H` on the C¹ norm of `Φ¹`; defaults to `max(φ₀, sup|Φ¹′|)`.
    #[serde(default)]
    pub h: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl MaskSpec {
    pub fn new(profile: MaskProfile) -> Self {
        MaskSpec {
            profile,
            c1: 1.0,
            c2: 1.0,
            anisotropy: 0.0,
            h: None,
        }
    }

    /// `Φ ≡ φ₀`.
    pub fn constant(phi0: f64) -> Self {
        Self::new(MaskProfile::Constant { phi0 })
    }

    pub fn exponential(phi0: f64, decay: f64) -> Self {
        Self::new(MaskProfile::Exponential { phi0, decay })
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = Some(h);
        self
    }

    pub fn phi0(&self) -> f64 {
        match self.profile {
            MaskProfile::Constant { phi0 }
            | MaskProfile::Exponential { phi0, .. }
            | MaskProfile::SmoothCutoff { phi0, .. } => phi0,
        }
    }

    /// Largest slope of `Φ¹`, excluding the smooth cutoff whose width is set from `H`.
    fn intrinsic_slope(&self) -> f64 {
        match self.profile {
            MaskProfile::Constant { .. } => 0.0,
            MaskProfile::Exponential { phi0, decay } => phi0 / decay,
            MaskProfile::SmoothCutoff { .. } => 0.0,
        }
    }

    /// The bound `H` in use.
    pub fn h_bound(&self) -> f64 {
        self.h.unwrap_or_else(|| self.phi0().max(self.intrinsic_slope()))
    }

    fn cutoff_width(&self) -> f64 {
        15.0 * self.phi0() / (8.0 * self.h_bound())
    }

    /// `Φ¹(s)`.
    pub fn phi1(&self, s: f64) -> f64 {
        match self.profile {
            MaskProfile::Constant { phi0 } => phi0,
            MaskProfile::Exponential { phi0, decay } => phi0 * (-s / decay).exp(),
            MaskProfile::SmoothCutoff { phi0, range } => {
                if s <= range {
                    phi0
                } else {
                    let w = self.cutoff_width();
                    phi0 * smoothstep(((range + w - s) / w).clamp(0.0, 1.0))
                }
            }
        }
    }

    /// Multiplier `m(x, y)`.
    pub fn multiplier(&self, model: &ManifoldModel, x: &[f64], y: &[f64]) -> f64 {
        if self.anisotropy == 0.0 {
            1.0
        } else {
            1.0 + self.anisotropy * 0.5 * (model.height(x) + model.height(y))
        }
    }

    /// `Φ(x, y)` given the distance `d = d(x, y)`.
    #[inline]
    pub fn probability(&self, model: &ManifoldModel, x: &[f64], y: &[f64], d: f64) -> f64 {
        (self.multiplier(model, x, y) * self.phi1(d)).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let phi0 = self.phi0();
        if !(0.0..=1.0).contains(&phi0) {
            return Err(Error::Config(format!("φ₀ = {phi0} must lie in [0, 1]")));
        }
        if !(self.c1 > 0.0 && self.c1 <= 1.0) || !(self.c2 >= 1.0 && self.c2.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < c₁ ≤ 1 ≤ c₂, got c₁ = {}, c₂ = {}",
                self.c1, self.c2
            )));
        }
        let a = self.anisotropy.abs();
        if 1.0 - a < self.c1 || 1.0 + a > self.c2 {
            return Err(Error::Config(format!(
                "anisotropy {a} violates c₁ ≤ m ≤ c₂ with c₁ = {}, c₂ = {}",
                self.c1, self.c2
            )));
        }
        match self.profile {
            MaskProfile::Exponential { decay, .. } if !(decay > 0.0) => {
                return Err(Error::Config(format!("decay length must be positive, got {decay}")));
            }
            MaskProfile::SmoothCutoff { range, .. } if !(range >= 0.0) => {
                return Err(Error::Config(format!("cutoff range must be non-negative, got {range}")));
            }
            MaskProfile::SmoothCutoff { phi0, .. } if phi0 > 0.0 && !(self.h_bound() > 0.0) => {
                return Err(Error::Config("smooth cutoff needs H > 0".into()));
            }
            _ => {}
        }
        let h = self.h_bound();
        if !(h >= 0.0) || h < self.intrinsic_slope() * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "H = {h} is below the profile slope {}",
                self.intrinsic_slope()
            )));
        }
        Ok(())
    }
}

/// Provenance of an observation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationMeta {
    pub n: usize,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ObservationMeta {
    pub fn sigma(&self) -> f64 {
        self.noise.map(|n| n.sigma()).unwrap_or(0.0)
    }
}

/// Symmetric table of observed distances, one entry per unordered pair.
///
/// Entries are stored row-major over the strict upper triangle, so the pairs
/// `(i, i+1), …, (i, N-1)` of row `i` are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDistances {
    n: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
    pub meta: ObservationMeta,
}

#[inline]
fn row_start(n: usize, i: usize) -> usize {
    i * (2 * n - i - 1) / 2
}

impl ObservedDistances {
    /// Table of `n` points with every pair masked.
    pub fn all_masked(n: usize) -> Self {
        let pairs = n * n.saturating_sub(1) / 2;
        ObservedDistances {
            n,
            values: vec![0.0; pairs],
            observed: vec![false; pairs],
            meta: ObservationMeta {
                n,
                noise: None,
                mask: None,
                seed: None,
            },
        }
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        row_start(self.n, lo) + hi - lo - 1
    }

    /// Record an observation (or clear it with `None`).
    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        assert!(i != j && i < self.n && j < self.n, "pair ({i}, {j}) out of range");
        let idx = self.index(i, j);
        self.observed[idx] = value.is_some();
        self.values[idx] = value.unwrap_or(0.0);
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        i == j || self.observed[self.index(i, j)]
    }

    /// The observed value, or `None` when the pair is masked. A point is
    /// always observed at distance zero from itself.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        let idx = self.index(i, j);
        self.observed[idx].then(|| self.values[idx])
    }

    /// The observed value; reading a masked pair is an error.
    pub fn value(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j).ok_or(Error::Masked { i, j })
    }

    /// Values and flags for the pairs `(i, i+1), …, (i, N-1)`. Values of masked
    /// pairs are zero and must be ignored.
    #[inline]
    pub fn row(&self, i: usize) -> (&[f64], &[bool]) {
        let start = row_start(self.n, i);
        let end = start + self.n - i - 1;
        (&self.values[start..end], &self.observed[start..end])
    }

    /// Like [`Self::row`] but restricted to columns `start..end`, with `i < start`.
    #[inline]
    pub fn row_range(&self, i: usize, start: usize, end: usize) -> (&[f64], &[bool]) {
        assert!(i < start && start <= end && end <= self.n, "columns {start}..{end} not right of row {i}");
        let base = row_start(self.n, i) + start - i - 1;
        let len = end - start;
        (&self.values[base..base + len], &self.observed[base..base + len])
    }

    /// Number of observed pairs.
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }

    /// Write `i,j,value,observed` rows for every pair plus a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "i,j,value,observed")?;
        for i in 0..self.n {
            let (values, flags) = self.row(i);
            for (off, (v, o)) in values.iter().zip(flags).enumerate() {
                let j = i + 1 + off;
                if *o {
                    writeln!(out, "{i},{j},{v:?},1")?;
                } else {
                    writeln!(out, "{i},{j},,0")?;
                }
            }
        }
        out.flush()?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Read a table written by [`Self::save`]. Pairs without a row are masked.
    /// Without a sidecar, `N` is one more than the largest index seen.
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let meta: Option<ObservationMeta> = if sidecar.exists() {
            Some(serde_json::from_str(&fs::read_to_string(&sidecar)?)?)
        } else {
            None
        };
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut rows: Vec<(usize, usize, Option<f64>)> = Vec::new();
        let mut max_index = None::<usize>;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if lineno == 1 {
                if line.trim() != "i,j,value,observed" {
                    return Err(parse_err(lineno, format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse_err(lineno, format!("expected 4 fields, got {}", fields.len())));
            }
            let i: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad index i: {e}")))?;
            let j: usize = fields[1]
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad index j: {e}")))?;
            if i == j {
                return Err(parse_err(lineno, format!("self pair ({i}, {j})")));
            }
            let value = match fields[3].trim() {
                "1" => {
                    let v: f64 = fields[2]
                        .trim()
                        .parse()
                        .map_err(|e| parse_err(lineno, format!("bad value {:?}: {e}", fields[2])))?;
                    Some(v)
                }
                "0" => None,
                other => return Err(parse_err(lineno, format!("observed flag must be 0 or 1, got {other:?}"))),
            };
            max_index = Some(max_index.unwrap_or(0).max(i).max(j));
            rows.push((i, j, value));
        }
        let n = match &meta {
            Some(m) => m.n,
            None => max_index.map_or(0, |m| m + 1),
        };
        let mut table = ObservedDistances::all_masked(n);
        if let Some(m) = meta {
            table.meta = m;
        }
        let mut seen = HashSet::with_capacity(rows.len());
        for (row, (i, j, value)) in rows.into_iter().enumerate() {
            let lineno = row + 2;
            if i >= n || j >= n {
                return Err(parse_err(lineno, format!("index out of range for N = {n}")));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(parse_err(lineno, format!("duplicate entry for pair {key:?}")));
            }
            table.set(i, j, value);
        }
        Ok(table)
    }
}

/// The observation of the pair `{i, j}` at positions `x`, `y`: `None` when
/// masked, `d(x, y) + η` otherwise. This is exactly the draw that
/// [`generate_observations`] makes for that pair.
#[allow(clippy::too_many_arguments)]
pub fn observe_pair(
    model: &ManifoldModel,
    x: &[f64],
    y: &[f64],
    noise: &NoiseSpec,
    mask: &MaskSpec,
    seed: u64,
    i: usize,
    j: usize,
) -> Option<f64> {
    let d = model.distance(x, y);
    let p = mask.probability(model, x, y, d);
    let seen = if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        pair_stream(seed, Purpose::Mask, i, j).gen::<f64>() < p
    };
    seen.then(|| d + noise.draw(&mut pair_stream(seed, Purpose::Noise, i, j)))
}

/// Draw `D̄_jk = d(X_j, X_k) + η_jk` and `Y_jk ~ Bernoulli(Φ(X_j, X_k))` for
/// every unordered pair. Both draws come from per-pair streams keyed by
/// `(seed, min(j,k), max(j,k))`, so the table does not depend on scheduling.
pub fn generate_observations(
    model: &ManifoldModel,
    samples: &SampleSet,
    noise: &NoiseSpec,
    mask: &MaskSpec,
    seed: u64,
) -> Result<ObservedDistances> {
    if samples.model() != model {
        return Err(Error::Input(format!(
            "samples were drawn from {:?}, not {:?}",
            samples.model(),
            model
        )));
    }
    noise.validate()?;
    mask.validate()?;
    let n = samples.len();
    let mut table = ObservedDistances::all_masked(n);
    table.meta = ObservationMeta {
        n,
        noise: Some(*noise),
        mask: Some(*mask),
        seed: Some(seed),
    };

    let mut value_rows = Vec::with_capacity(n);
    let mut flag_rows = Vec::with_capacity(n);
    let (mut values, mut flags) = (table.values.as_mut_slice(), table.observed.as_mut_slice());
    for i in 0..n {
        let (v, rest_v) = values.split_at_mut(n - i - 1);
        let (f, rest_f) = flags.split_at_mut(n - i - 1);
        value_rows.push(v);
        flag_rows.push(f);
        values = rest_v;
        flags = rest_f;
    }
    value_rows
        .into_par_iter()
        .zip(flag_rows)
        .enumerate()
        .for_each(|(i, (vals, obs))| {
            let x = samples.point(i);
            for (off, (v, o)) in vals.iter_mut().zip(obs.iter_mut()).enumerate() {
                let j = i + 1 + off;
                let y = samples.point(j);
                match observe_pair(model, x, y, noise, mask, seed, i, j) {
                    Some(value) => {
                        *v = value;
                        *o = true;
                    }
                    None => *o = false,
                }
            }
        });
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_models::{sample_points, DensitySpec};

    fn scratch(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("geonet-obs-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join("obs.csv")
    }

    #[test]
    fn noiseless_full_data_is_exact() {
        let m = ManifoldModel::sphere(2, 1.0);
        let s = sample_points(&m, 30, DensitySpec::Uniform, 1).unwrap();
        let obs = generate_observations(&m, &s, &NoiseSpec::None, &MaskSpec::constant(1.0), 5).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(obs.value(i, j).unwrap(), s.distance(i, j));
            }
        }
    }

    #[test]
    fn total_masking() {
        let m = ManifoldModel::flat_torus(&[1.0, 1.0]);
        let s = sample_points(&m, 20, DensitySpec::Uniform, 1).unwrap();
        let obs = generate_observations(&m, &s, &NoiseSpec::gaussian(0.1), &MaskSpec::constant(0.0), 5).unwrap();
        assert_eq!(obs.observed_count(), 0);
        assert!(matches!(obs.value(0, 1), Err(Error::Masked { i: 0, j: 1 })));
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let m = ManifoldModel::sphere(2, 1.0);
        let s = sample_points(&m, 5, DensitySpec::Uniform, 1).unwrap();
        let other = ManifoldModel::sphere(2, 2.0);
        assert!(matches!(
            generate_observations(&other, &s, &NoiseSpec::None, &MaskSpec::constant(1.0), 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta_of(&NoiseSpec::None).unwrap(), 1.0);
        assert_eq!(beta_of(&NoiseSpec::gaussian(0.0)).unwrap(), 1.0);
        let b = beta_of(&NoiseSpec::gaussian(1.0)).unwrap();
        // E e^{|η|} by composite Simpson on [-40, 40]
        let steps = 200_000;
        let h = 80.0 / steps as f64;
        let f = |x: f64| (x.abs() - x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut quad = f(-40.0) + f(40.0);
        for k in 1..steps {
            quad += if k % 2 == 1 { 4.0 } else { 2.0 } * f(-40.0 + k as f64 * h);
        }
        quad *= h / 3.0;
        assert!((b - quad).abs() < 1e-9, "{b} vs {quad}");
        assert!((b - 2.7744).abs() < 2e-4);
        assert!(b <= 2.0 * std::f64::consts::E);
        assert!(matches!(
            beta_of(&NoiseSpec::Laplace { scale: 1.5 }),
            Err(Error::UnsupportedNoise(_))
        ));
    }

    #[test]
    fn profiles_are_monotone_and_respect_h() {
        let masks = [
            MaskSpec::constant(0.7),
            MaskSpec::exponential(0.9, 1.0),
            MaskSpec::new(MaskProfile::SmoothCutoff { phi0: 0.8, range: 0.3 }).with_h(2.0),
        ];
        for mask in masks {
            mask.validate().unwrap();
            assert_eq!(mask.phi1(0.0), mask.phi0());
            let h = mask.h_bound();
            let step = 1e-4;
            let mut prev = mask.phi1(0.0);
            for k in 1..40_000 {
                let s = k as f64 * step;
                let cur = mask.phi1(s);
                assert!(cur <= prev + 1e-15, "{mask:?} increases at {s}");
                assert!(cur.abs() <= 1.0);
                assert!((prev - cur) / step <= h * (1.0 + 1e-6), "{mask:?} slope at {s}");
                prev = cur;
            }
        }
    }

    #[test]
    fn slope_below_h_is_rejected() {
        assert!(MaskSpec::exponential(0.9, 0.1).with_h(1.0).validate().is_err());
        let mut m = MaskSpec::constant(1.0);
        m.anisotropy = 0.2;
        assert!(m.validate().is_err());
        m.c1 = 0.8;
        m.c2 = 1.2;
        m.validate().unwrap();
    }

    #[test]
    fn anisotropic_mask_stays_in_band() {
        let model = ManifoldModel::sphere(2, 1.0);
        let s = sample_points(&model, 40, DensitySpec::Uniform, 2).unwrap();
        let mut mask = MaskSpec::exponential(0.9, 1.0);
        mask.anisotropy = 0.3;
        mask.c1 = 0.7;
        mask.c2 = 1.3;
        mask.validate().unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let d = s.distance(i, j);
                let p = mask.probability(&model, s.point(i), s.point(j), d);
                let base = mask.phi1(d);
                assert!(p >= mask.c1 * base - 1e-15 && p <= mask.c2 * base + 1e-15);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let path = scratch("rt");
        let m = ManifoldModel::sphere(2, 1.0);
        let s = sample_points(&m, 3, DensitySpec::Uniform, 11).unwrap();
        let obs =
            generate_observations(&m, &s, &NoiseSpec::gaussian(0.3), &MaskSpec::exponential(0.9, 1.0), 2).unwrap();
        obs.save(&path).unwrap();
        let back = ObservedDistances::load(&path).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn empty_table_round_trips() {
        let path = scratch("empty");
        fs::write(&path, "i,j,value,observed\n").unwrap();
        let _ = fs::remove_file(sidecar_path(&path));
        let t = ObservedDistances::load(&path).unwrap();
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn masked_row_with_value_is_accepted() {
        let path = scratch("masked");
        let _ = fs::remove_file(sidecar_path(&path));
        fs::write(&path, "i,j,value,observed\n0,1,0.5,1\n0,2,9.75,0\n1,2,0.25,1\n").unwrap();
        let t = ObservedDistances::load(&path).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get(0, 1), Some(0.5));
        assert_eq!(t.get(0, 2), None);
        assert_eq!(t.get(2, 1), Some(0.25));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let path = scratch("bad");
        let _ = fs::remove_file(sidecar_path(&path));
        let cases = [
            ("i,j,value,observed\n0,1,0.5,1\n0,1,0.6,1\n", 3),
            ("i,j,value,observed\n0,1,0.5,1\n1,0,0.7,1\n", 3),
            ("i,j,value,observed\n0,1,abc,1\n", 2),
            ("i,j,value,observed\n0,1,0.5\n", 2),
            ("i,j,value,observed\n0,1,,1\n", 2),
        ];
        for (text, line) in cases {
            fs::write(&path, text).unwrap();
            match ObservedDistances::load(&path) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
        // out of range against the sidecar's N
        fs::write(&path, "i,j,value,observed\n0,5,0.5,1\n").unwrap();
        fs::write(
            sidecar_path(&path),
            serde_json::to_string(&ObservationMeta {
                n: 3,
                noise: None,
                mask: None,
                seed: None,
            })
            .unwrap(),
        )
        .unwrap();
        assert!(matches!(ObservedDistances::load(&path), Err(Error::Parse { line: 2, .. })));
    }
}
