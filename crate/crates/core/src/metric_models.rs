//! Synthetic manifolds with closed-form geodesics.
//!
//! These models are the ground truth for every other module: sample points are
//! drawn from them and estimated distances are compared against
//! [`ManifoldModel::geodesic_distance`].
//!
//! Sphere points are stored as embedded vectors of norm `R` in `ℝ^{n+1}`;
//! torus points are stored in the fundamental box `[0, P_1) × … × [0, P_n)`.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{item_stream, Purpose};

/// Relative norm tolerance accepted when validating sphere coordinates.
const SPHERE_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldModel {
    /// Round sphere `S^n` of the given radius.
    Sphere { dimension: usize, radius: f64 },
    /// Flat torus `ℝ^n / (P_1ℤ × … × P_nℤ)`.
    FlatTorus { periods: Vec<f64> },
}

impl ManifoldModel {
    pub fn sphere(dimension: usize, radius: f64) -> Self {
        ManifoldModel::Sphere { dimension, radius }
    }

    pub fn flat_torus(periods: &[f64]) -> Self {
        ManifoldModel::FlatTorus {
            periods: periods.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ManifoldModel::Sphere { dimension, radius } => {
                if *dimension < 2 {
                    return Err(Error::Config(format!(
                        "sphere dimension must be at least 2, got {dimension}"
                    )));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Config(format!("sphere radius must be positive, got {radius}")));
                }
            }
            ManifoldModel::FlatTorus { periods } => {
                if periods.is_empty() {
                    return Err(Error::Config("torus needs at least one period".into()));
                }
                if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                    return Err(Error::Config(format!("torus periods must be positive, got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Intrinsic dimension `n`.
    pub fn dimension(&self) -> usize {
        match self {
            ManifoldModel::Sphere { dimension, .. } => *dimension,
            ManifoldModel::FlatTorus { periods } => periods.len(),
        }
    }

    /// Number of stored coordinates per point.
    pub fn coord_len(&self) -> usize {
        match self {
            ManifoldModel::Sphere { dimension, .. } => dimension + 1,
            ManifoldModel::FlatTorus { periods } => periods.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            ManifoldModel::Sphere { radius, .. } => PI * radius,
            ManifoldModel::FlatTorus { periods } => 0.5 * periods.iter().map(|p| p * p).sum::<f64>().sqrt(),
        }
    }

    /// Riemannian volume.
    pub fn volume(&self) -> f64 {
        match self {
            ManifoldModel::Sphere { dimension, radius } => {
                let m = (*dimension + 1) as f64;
                2.0 * PI.powf(m / 2.0) / statrs::function::gamma::gamma(m / 2.0) * radius.powi(*dimension as i32)
            }
            ManifoldModel::FlatTorus { periods } => periods.iter().product(),
        }
    }

    pub fn validate_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.coord_len() {
            return Err(Error::Coordinate(format!(
                "expected {} coordinates, got {}",
                self.coord_len(),
                p.len()
            )));
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::Coordinate(format!("non-finite coordinate in {p:?}")));
        }
        match self {
            ManifoldModel::Sphere { radius, .. } => {
                let norm = norm(p);
                if (norm - radius).abs() > SPHERE_NORM_TOL * radius {
                    return Err(Error::Coordinate(format!(
                        "point has norm {norm}, sphere radius is {radius}"
                    )));
                }
            }
            ManifoldModel::FlatTorus { periods } => {
                for (c, period) in p.iter().zip(periods) {
                    if *c < 0.0 || *c >= *period {
                        return Err(Error::Coordinate(format!(
                            "torus coordinate {c} outside [0, {period})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact intrinsic distance between two valid points.
    pub fn geodesic_distance(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        self.validate_point(p)?;
        self.validate_point(q)?;
        Ok(self.distance(p, q))
    }

    /// Intrinsic distance without validating the inputs.
    #[inline]
    pub fn distance(&self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            ManifoldModel::Sphere { radius, .. } => {
                // angle = 2 atan2(|u - v|, |u + v|) is accurate near 0 and π alike
                let (mut diff, mut sum) = (0.0, 0.0);
                for (a, b) in p.iter().zip(q) {
                    let (u, v) = (a / radius, b / radius);
                    diff += (u - v) * (u - v);
                    sum += (u + v) * (u + v);
                }
                radius * 2.0 * diff.sqrt().atan2(sum.sqrt())
            }
            ManifoldModel::FlatTorus { periods } => {
                let mut acc = 0.0;
                for ((a, b), period) in p.iter().zip(q).zip(periods) {
                    let d = (a - b).abs();
                    let d = d.min(period - d);
                    acc += d * d;
                }
                acc.sqrt()
            }
        }
    }

    /// Value in `[-1, 1]` used by density tilts and mask anisotropy.
    pub fn height(&self, p: &[f64]) -> f64 {
        match self {
            ManifoldModel::Sphere { radius, .. } => (p[p.len() - 1] / radius).clamp(-1.0, 1.0),
            ManifoldModel::FlatTorus { periods } => (2.0 * PI * p[0] / periods[0]).cos(),
        }
    }

    /// Riemannian logarithm at `p`, expressed in the stored coordinates
    /// (ambient tangent vector for the sphere, shortest lift for the torus).
    pub fn log_map(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        match self {
            ManifoldModel::Sphere { .. } => {
                let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (norm(p) * norm(p));
                let mut dir: Vec<f64> = q.iter().zip(p).map(|(b, a)| b - dot * a).collect();
                let len = norm(&dir);
                let dist = self.distance(p, q);
                if len == 0.0 {
                    return vec![0.0; p.len()];
                }
                dir.iter_mut().for_each(|c| *c *= dist / len);
                dir
            }
            ManifoldModel::FlatTorus { periods } => p
                .iter()
                .zip(q)
                .zip(periods)
                .map(|((a, b), period)| {
                    let mut d = b - a;
                    d -= period * (d / period).round();
                    d
                })
                .collect(),
        }
    }

    /// Riemannian exponential at `p` of a tangent vector given as by [`Self::log_map`].
    pub fn exp_map(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            ManifoldModel::Sphere { radius, .. } => {
                let len = norm(v);
                if len == 0.0 {
                    return p.to_vec();
                }
                let angle = len / radius;
                let out: Vec<f64> = p
                    .iter()
                    .zip(v)
                    .map(|(a, b)| angle.cos() * a + angle.sin() * radius * b / len)
                    .collect();
                let scale = radius / norm(&out);
                out.into_iter().map(|c| c * scale).collect()
            }
            ManifoldModel::FlatTorus { periods } => p
                .iter()
                .zip(v)
                .zip(periods)
                .map(|((a, b), period)| wrap(a + b, *period))
                .collect(),
        }
    }
}

/// Reduce a coordinate into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Volume of the unit ball in `ℝ^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    PI.powf(h) / statrs::function::gamma::gamma(h + 1.0)
}

/// Volume `v(n, -κ², r)` of a ball of radius `r` in the `n`-dimensional space
/// form of constant curvature `-κ²` (Euclidean when `κ = 0`).
pub fn space_form_ball_volume(n: usize, kappa: f64, r: f64) -> f64 {
    let omega = unit_ball_volume(n);
    if kappa == 0.0 {
        return omega * r.powi(n as i32);
    }
    match n {
        1 => 2.0 * r,
        2 => 2.0 * PI * ((kappa * r).cosh() - 1.0) / (kappa * kappa),
        3 => PI * ((2.0 * kappa * r).sinh() - 2.0 * kappa * r) / kappa.powi(3),
        _ => {
            // n ω_n ∫_0^r (sinh(κt)/κ)^{n-1} dt, composite Simpson
            let steps = 4096;
            let h = r / steps as f64;
            let f = |t: f64| ((kappa * t).sinh() / kappa).powi(n as i32 - 1);
            let mut acc = f(0.0) + f(r);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(i as f64 * h);
            }
            n as f64 * omega * acc * h / 3.0
        }
    }
}

/// A-priori geometric constants: dimension, diameter bound `D`, curvature
/// bound `Λ` (`|Sec| ≤ Λ²`), injectivity radius bound `i₀`, density bounds with
/// respect to Riemannian volume, and the volume bound `V₀ = v(n, -Λ², D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryBounds {
    pub n: usize,
    pub diameter: f64,
    pub curvature: f64,
    pub injectivity: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub volume_bound: f64,
}

impl GeometryBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n >= 1
            && self.diameter > 0.0
            && self.injectivity > 0.0
            && self.curvature >= 0.0
            && self.rho_min > 0.0
            && self.rho_min <= self.rho_max
            && self.volume_bound > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid geometry bounds {self:?}")))
        }
    }

    /// Bounds for a measure with the given density instead of the uniform one.
    pub fn with_density(mut self, model: &ManifoldModel, density: &DensitySpec) -> Result<Self> {
        let (lo, hi) = density.ratio_range()?;
        let vol = model.volume();
        self.rho_min = lo / vol;
        self.rho_max = hi / vol;
        Ok(self)
    }
}

/// Tight closed-form bounds for a model under the uniform measure.
pub fn model_bounds(model: &ManifoldModel) -> GeometryBounds {
    let n = model.dimension();
    let (diameter, curvature, injectivity) = match model {
        ManifoldModel::Sphere { radius, .. } => (PI * radius, 1.0 / radius, PI * radius),
        ManifoldModel::FlatTorus { periods } => {
            let min = periods.iter().cloned().fold(f64::INFINITY, f64::min);
            (model.diameter(), 0.0, 0.5 * min)
        }
    };
    let vol = model.volume();
    GeometryBounds {
        n,
        diameter,
        curvature,
        injectivity,
        rho_min: 1.0 / vol,
        rho_max: 1.0 / vol,
        volume_bound: space_form_ball_volume(n, curvature, diameter),
    }
}

/// Sampling measure, given by its density relative to the uniform measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    #[default]
    Uniform,
    /// Relative density `1 + amplitude · h(x)` with `h` = [`ManifoldModel::height`].
    Tilt { amplitude: f64 },
}

impl DensitySpec {
    /// Range of the density relative to uniform.
    pub fn ratio_range(&self) -> Result<(f64, f64)> {
        match *self {
            DensitySpec::Uniform => Ok((1.0, 1.0)),
            DensitySpec::Tilt { amplitude } => {
                if !(amplitude.abs() < 1.0) {
                    return Err(Error::Config(format!(
                        "tilt amplitude {amplitude} makes the density vanish; need |a| < 1"
                    )));
                }
                Ok((1.0 - amplitude.abs(), 1.0 + amplitude.abs()))
            }
        }
    }

    /// Density relative to uniform at a point.
    pub fn ratio(&self, model: &ManifoldModel, p: &[f64]) -> f64 {
        match *self {
            DensitySpec::Uniform => 1.0,
            DensitySpec::Tilt { amplitude } => 1.0 + amplitude * model.height(p),
        }
    }
}

/// Draw one point from `model` under `density` using `rng`.
pub fn draw_point<R: Rng>(model: &ManifoldModel, density: &DensitySpec, rng: &mut R) -> Vec<f64> {
    let bound = density.ratio_range().map(|(_, hi)| hi).unwrap_or(1.0);
    loop {
        let p = draw_uniform(model, rng);
        if matches!(density, DensitySpec::Uniform) {
            return p;
        }
        let accept = density.ratio(model, &p) / bound;
        if rng.gen::<f64>() < accept {
            return p;
        }
    }
}

fn draw_uniform<R: Rng>(model: &ManifoldModel, rng: &mut R) -> Vec<f64> {
    match model {
        ManifoldModel::Sphere { dimension, radius } => loop {
            let v: Vec<f64> = (0..=*dimension).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&v);
            if len > 1e-150 {
                return v.into_iter().map(|c| c * radius / len).collect();
            }
        },
        ManifoldModel::FlatTorus { periods } => periods.iter().map(|p| rng.gen_range(0.0..*p)).collect(),
    }
}

/// An ordered list of i.i.d. points, stored as a flat coordinate buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    model: ManifoldModel,
    coords: Vec<f64>,
    stride: usize,
    pub seed: u64,
    pub density: DensitySpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleSidecar {
    model: ManifoldModel,
    points: usize,
    seed: u64,
    density: DensitySpec,
}

/// Draw `count` i.i.d. points. Point `i` comes from its own stream, so the
/// first `m` points of a larger draw equal a draw of size `m` with the same seed.
pub fn sample_points(model: &ManifoldModel, count: usize, density: DensitySpec, seed: u64) -> Result<SampleSet> {
    model.validate()?;
    density.ratio_range()?;
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let stride = model.coord_len();
    let coords: Vec<f64> = (0..count)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = item_stream(seed, Purpose::Sample, i as u64);
            draw_point(model, &density, &mut rng)
        })
        .collect();
    Ok(SampleSet {
        model: model.clone(),
        coords,
        stride,
        seed,
        density,
    })
}

impl SampleSet {
    /// Wrap explicit points, validating each of them.
    pub fn from_points(model: &ManifoldModel, points: &[Vec<f64>], density: DensitySpec, seed: u64) -> Result<Self> {
        model.validate()?;
        let stride = model.coord_len();
        let mut coords = Vec::with_capacity(points.len() * stride);
        for p in points {
            model.validate_point(p)?;
            coords.extend_from_slice(p);
        }
        Ok(SampleSet {
            model: model.clone(),
            coords,
            stride,
            seed,
            density,
        })
    }

    pub fn model(&self) -> &ManifoldModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.stride..(i + 1) * self.stride]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.stride)
    }

    /// Geodesic distance between stored points `i` and `j`.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.model.distance(self.point(i), self.point(j))
    }

    /// The first `count` points.
    pub fn prefix(&self, count: usize) -> SampleSet {
        SampleSet {
            model: self.model.clone(),
            coords: self.coords[..count * self.stride].to_vec(),
            stride: self.stride,
            seed: self.seed,
            density: self.density,
        }
    }

    /// Write `index,c1,...,ck` rows and a JSON sidecar next to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        write!(out, "index")?;
        for c in 1..=self.stride {
            write!(out, ",c{c}")?;
        }
        writeln!(out)?;
        for (i, p) in self.points().enumerate() {
            write!(out, "{i}")?;
            for c in p {
                write!(out, ",{c:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        let sidecar = SampleSidecar {
            model: self.model.clone(),
            points: self.len(),
            seed: self.seed,
            density: self.density,
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SampleSet> {
        let sidecar: SampleSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let reader = BufReader::new(fs::File::open(path)?);
        let stride = sidecar.model.coord_len();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut points = Vec::with_capacity(sidecar.points);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != stride + 1 {
                return Err(parse_err(lineno + 1, format!("expected {} fields", stride + 1)));
            }
            let index: usize = fields[0]
                .parse()
                .map_err(|e| parse_err(lineno + 1, format!("bad index: {e}")))?;
            if index != points.len() {
                return Err(parse_err(lineno + 1, format!("expected index {}, got {index}", points.len())));
            }
            let p = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno + 1, format!("bad coordinate: {e}")))?;
            sidecar
                .model
                .validate_point(&p)
                .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
            points.push(p);
        }
        if points.len() != sidecar.points {
            return Err(Error::Input(format!(
                "sidecar declares {} points, file has {}",
                sidecar.points,
                points.len()
            )));
        }
        SampleSet::from_points(&sidecar.model, &points, sidecar.density, sidecar.seed)
    }
}

/// `foo.csv` → `foo.json`.
pub(crate) fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}
