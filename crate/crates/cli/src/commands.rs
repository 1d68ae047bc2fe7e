use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use geonet::analysis::{
    barycentric_position, c4_hat_for, calibrate_constant, dapp_report, estimate_c5, is_delta_net, write_pair_errors,
    C5Estimate, ErrorReport, MeasureRule, NetCheckConfig, OracleConfig, PairError, Quantiles,
};
use geonet::chart_refine::{budget_from_env, refine, DEFAULT_BUDGET, CoarseNet, RefineConfig, RefinementScales};
use geonet::observation::generate_observations;
use geonet::rng::child_seed;
use geonet::{
    derive_parameters_with, model_bounds, run_pipeline, sample_points, sample_sizes, CutoffFns, DappTable, NetSplit,
    ObservedDistances, ParameterLedger, SampleSet, SizeConstants,
};
use serde::{Deserialize, Serialize};

use crate::config::{CalibrationTarget, ExperimentConfig};

/// Whether a command's acceptance checks held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

/// Child-seed slots, so each stage draws from its own streams.
mod slot {
    pub const SAMPLES: u64 = 0;
    pub const OBSERVATIONS: u64 = 1;
    pub const REFINE: u64 = 2;
    pub const ORACLE_NODES: u64 = 3;
    pub const ORACLE_PAIRS: u64 = 4;
    pub const NET_CHECK: u64 = 5;
    pub const CALIBRATION: u64 = 1 << 20;
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        let out = out
            .or_else(|| cfg.output.clone())
            .context("no output directory: pass --out or set `output` in the config")?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Context {
            seed: seed.unwrap_or(cfg.seed),
            cfg,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn child(&self, slot: u64) -> u64 {
        child_seed(self.seed, slot)
    }

    fn split(&self) -> Result<NetSplit> {
        if let Some(split) = self.cfg.split {
            return Ok(split);
        }
        let e = &self.cfg.estimate;
        let consts = self.cfg.size_constants.unwrap_or_default();
        let split = sample_sizes(self.cfg.model.dimension(), e.eps1, e.delta1, e.theta, &consts)?;
        split
            .validate()
            .context("the size formulas gave an invalid split; adjust `size_constants` or give `split`")?;
        Ok(split)
    }

    fn oracle_c5(&self) -> Result<C5Estimate> {
        let cfg = &self.cfg;
        let bounds = model_bounds(&cfg.model).with_density(&cfg.model, &cfg.density)?;
        let rule = MeasureRule::new(
            &cfg.model,
            &cfg.density,
            &OracleConfig {
                m_int: cfg.estimate.m_int,
                seed: self.child(slot::ORACLE_NODES),
            },
        )?;
        let c4_hat = c4_hat_for(&bounds, &cfg.mask);
        Ok(estimate_c5(
            &rule,
            &cfg.density,
            &cfg.mask,
            c4_hat,
            cfg.estimate.c5_pairs,
            self.child(slot::ORACLE_PAIRS),
        )?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct SimulateSummary {
    split: NetSplit,
    points: usize,
    pairs: usize,
    observed_pairs: usize,
}

pub fn simulate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let split = ctx.split()?;
    let samples = sample_points(&cfg.model, split.total(), cfg.density, ctx.child(slot::SAMPLES))?;
    samples.save(&ctx.path("samples.csv"))?;
    let obs = generate_observations(&cfg.model, &samples, &cfg.noise, &cfg.mask, ctx.child(slot::OBSERVATIONS))?;
    obs.save(&ctx.path("observations.csv"))?;
    let n = samples.len();
    write_json(
        &ctx.path("simulate.json"),
        &SimulateSummary {
            split,
            points: n,
            pairs: n * (n - 1) / 2,
            observed_pairs: obs.observed_count(),
        },
    )?;
    log::info!("simulated {n} points, {} observed pairs", obs.observed_count());
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct EstimateSummary {
    split: NetSplit,
    c5_source: &'static str,
    c5_estimate: Option<C5Estimate>,
    coarse_pairs: usize,
    /// Share of coarse pairs where at least one direction passed `W > u₂`.
    passed_share: f64,
    /// Share of coarse pairs left at the fallback `D`.
    fallback_share: f64,
}

pub fn estimate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let obs = ObservedDistances::load(&ctx.path("observations.csv"))?;
    let split = ctx.split()?;
    let bounds = model_bounds(&cfg.model).with_density(&cfg.model, &cfg.density)?;
    let (c5, c5_estimate) = match cfg.estimate.c5 {
        Some(c5) => (c5, None),
        None => {
            let est = ctx.oracle_c5()?;
            (est.c5, Some(est))
        }
    };
    let e = &cfg.estimate;
    let ledger = derive_parameters_with(&bounds, &cfg.mask, &cfg.noise, e.eps1, e.delta1, e.theta, c5, e.gate)?;
    let table = run_pipeline(&obs, &split, &ledger, &CutoffFns::from_ledger(&ledger), None)?;
    table.dapp.save(&ctx.path("dapp.csv"))?;
    write_json(&ctx.path("ledger.json"), &ledger)?;
    let n0 = split.n0;
    let pairs = n0 * n0.saturating_sub(1) / 2;
    let (mut passed, mut fallback) = (0usize, 0usize);
    for i in 0..n0 {
        for j in i + 1..n0 {
            passed += usize::from(table.dapp.passed(i, j) > 0);
            fallback += usize::from(table.dapp.get(i, j) == ledger.diameter);
        }
    }
    let share = |k: usize| if pairs == 0 { 0.0 } else { k as f64 / pairs as f64 };
    write_json(
        &ctx.path("estimate.json"),
        &EstimateSummary {
            split,
            c5_source: if c5_estimate.is_some() { "oracle" } else { "config" },
            c5_estimate,
            coarse_pairs: pairs,
            passed_share: share(passed),
            fallback_share: share(fallback),
        },
    )?;
    Ok(Outcome::Pass)
}

pub fn refine_cmd(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let section = cfg.refine.as_ref().context("the config has no `refine` section")?;
    let dapp = DappTable::load(&ctx.path("dapp.csv"))?;
    let n = cfg.model.dimension();
    let scales = match (section.r_hat, section.curvature) {
        (Some(r), _) => RefinementScales::new(section.delta_hat, r, n)?,
        (None, Some(k)) => RefinementScales::from_curvature(section.delta_hat, k, n)?,
        (None, None) => bail!("refine: give `r_hat` or `curvature`"),
    };
    // Admissible chart pairs reach coarse pairs up to r̂ apart; keep a margin.
    let net = CoarseNet::from_dapp(&dapp, 1.5 * scales.r_hat)?;
    // GEONET_BUDGET caps whatever the config asks for.
    let mut budget = section.budget.unwrap_or(DEFAULT_BUDGET);
    if std::env::var_os("GEONET_BUDGET").is_some() {
        budget = budget.min(budget_from_env()?);
    }
    let rcfg = RefineConfig {
        scales,
        basis_c1: section.basis_c1,
        budget,
        seed: ctx.child(slot::REFINE),
        active: section.active.clone(),
        gate: section.gate,
    };
    let r = refine(&net, &rcfg)?;
    r.save_points(&ctx.path("refined_points.csv"))?;
    r.save_dtilde(&ctx.path("dtilde.csv"))?;
    r.save_diagnostics(&ctx.path("charts.json"))?;
    log::info!("refined {} points over {} charts", r.len(), r.diagnostics().len());
    Ok(Outcome::Pass)
}

#[derive(Debug, Serialize)]
struct ObservationCheck {
    observed_pairs: usize,
    abs_error: Quantiles,
}

#[derive(Debug, Serialize)]
struct RefinedCheck {
    pairs_listed: usize,
    pairs_checked: usize,
    c4: f64,
    within: usize,
    rate: f64,
    /// Quantiles of `|d̃′ − d| / δ̂`.
    error: Quantiles,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    observations: Option<ObservationCheck>,
    dapp: Option<ErrorReport>,
    refinement: Option<RefinedCheck>,
    pass: bool,
}

fn check_observations(obs: &ObservedDistances, samples: &SampleSet) -> Result<ObservationCheck> {
    if obs.len() > samples.len() {
        bail!("observations cover {} points but only {} samples exist", obs.len(), samples.len());
    }
    let mut errors = Vec::new();
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            if let Some(v) = obs.get(i, j) {
                errors.push((v - samples.distance(i, j)).abs());
            }
        }
    }
    Ok(ObservationCheck {
        observed_pairs: errors.len(),
        abs_error: Quantiles::of(errors),
    })
}

/// Weights `(chart, t₀), (aᵢ, tᵢ)` for every row of a refined-points CSV.
fn load_refined_weights(path: &Path) -> Result<Vec<(usize, Vec<(usize, f64)>)>> {
    let reader = BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || format!("{}:{}: malformed row {line:?}", path.display(), k + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!(bad());
        }
        let chart: usize = f[1].parse().with_context(bad)?;
        let alpha: Vec<usize> = f[2].split(';').map(str::parse).collect::<std::result::Result<_, _>>().with_context(bad)?;
        let tau: Vec<u32> = f[3].split(';').map(str::parse).collect::<std::result::Result<_, _>>().with_context(bad)?;
        let m: f64 = f[4].parse::<u32>().with_context(bad)? as f64;
        let used: u32 = tau.iter().sum();
        let mut w = vec![(chart, 1.0 - used as f64 / m)];
        w.extend(alpha.iter().zip(&tau).map(|(&a, &t)| (a, t as f64 / m)));
        out.push((chart, w));
    }
    Ok(out)
}

fn check_refined(ctx: &Context, samples: &SampleSet) -> Result<(RefinedCheck, Vec<PairError>, f64)> {
    #[derive(Deserialize)]
    struct Charts {
        scales: RefinementScales,
    }
    let scales = read_json::<Charts>(&ctx.path("charts.json"))?.scales;
    let weights = load_refined_weights(&ctx.path("refined_points.csv"))?;
    let positions: Vec<Vec<f64>> = weights
        .iter()
        .map(|(chart, w)| barycentric_position(samples, *chart, w))
        .collect();
    let path = ctx.path("dtilde.csv");
    let reader = BufReader::new(fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?);
    let mut rows = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || format!("{}:{}: malformed row {line:?}", path.display(), k + 1);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            bail!(bad());
        }
        let i: usize = f[0].parse().with_context(bad)?;
        let j: usize = f[1].parse().with_context(bad)?;
        let v: f64 = f[2].parse().with_context(bad)?;
        if i >= positions.len() || j >= positions.len() {
            bail!("{}: refined index out of range", bad());
        }
        rows.push((i, j, v));
    }
    let v = &ctx.cfg.verify;
    let stride = rows.len().div_ceil(v.max_refined_pairs.max(1)).max(1);
    let errors: Vec<PairError> = rows
        .iter()
        .step_by(stride)
        .map(|&(i, j, est)| PairError {
            i,
            j,
            truth: samples.model().distance(&positions[i], &positions[j]),
            estimate: est,
        })
        .collect();
    let bound = v.c4 * scales.delta_hat;
    let within = errors.iter().filter(|e| e.abs_error() <= bound).count();
    let rate = if errors.is_empty() { 1.0 } else { within as f64 / errors.len() as f64 };
    let check = RefinedCheck {
        pairs_listed: rows.len(),
        pairs_checked: errors.len(),
        c4: v.c4,
        within,
        rate,
        error: Quantiles::of(errors.iter().map(|e| e.abs_error() / scales.delta_hat).collect()),
        pass: rate >= 1.0 - v.allowed_rate,
    };
    Ok((check, errors, scales.r_hat / 4.0))
}

pub fn verify(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let samples = SampleSet::load(&ctx.path("samples.csv"))?;
    let mut report = VerifyReport {
        observations: None,
        dapp: None,
        refinement: None,
        pass: true,
    };
    if ctx.path("observations.csv").exists() {
        let obs = ObservedDistances::load(&ctx.path("observations.csv"))?;
        report.observations = Some(check_observations(&obs, &samples)?);
    }
    if ctx.path("dapp.csv").exists() && ctx.path("ledger.json").exists() {
        let dapp = DappTable::load(&ctx.path("dapp.csv"))?;
        let ledger: ParameterLedger = read_json(&ctx.path("ledger.json"))?;
        let (mut r, errors) = dapp_report(&dapp, &samples, &ledger, cfg.verify.near_rule, cfg.verify.allowed_rate);
        if let Some(delta) = cfg.verify.net_delta {
            let cfg_net = NetCheckConfig {
                seed: ctx.child(slot::NET_CHECK),
                ..NetCheckConfig::default()
            };
            r.net_density = Some(is_delta_net(&samples.prefix(dapp.len()), delta, &cfg_net));
        }
        write_pair_errors(&ctx.path("pair_errors.csv"), &errors, ledger.r1)?;
        report.pass &= r.pass;
        if let Some(mode) = &r.failure_mode {
            log::warn!("d^app check failed: {mode}");
        }
        report.dapp = Some(r);
    }
    if ctx.path("dtilde.csv").exists() {
        let (check, errors, near) = check_refined(ctx, &samples)?;
        write_pair_errors(&ctx.path("refined_errors.csv"), &errors, near)?;
        report.pass &= check.pass;
        report.refinement = Some(check);
    }
    if report.observations.is_none() && report.dapp.is_none() && report.refinement.is_none() {
        bail!("nothing to verify in {}", ctx.out.display());
    }
    write_json(&ctx.path("verify.json"), &report)?;
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

pub fn calibrate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let section = cfg.calibrate.as_ref().context("the config has no `calibrate` section")?;
    match section.target {
        CalibrationTarget::C5 => {
            let est = ctx.oracle_c5()?;
            write_json(&ctx.path("calibration.json"), &est)?;
        }
        CalibrationTarget::C3 => {
            let e = &cfg.estimate;
            let n = cfg.model.dimension();
            let base = cfg.size_constants.unwrap_or_default();
            let cal = calibrate_constant(section.initial, 1.0 - e.theta, section.max_doublings, |c3| {
                let consts = SizeConstants { c3, ..base };
                let n0 = sample_sizes(n, e.eps1, e.delta1, e.theta, &consts)?.n0.max(1);
                let hits = (0..section.runs)
                    .filter(|&r| {
                        let seed = ctx.child(slot::CALIBRATION + r as u64);
                        let s = match sample_points(&cfg.model, n0, cfg.density, seed) {
                            Ok(s) => s,
                            Err(_) => return false,
                        };
                        let net_cfg = NetCheckConfig {
                            seed: child_seed(seed, 1),
                            ..NetCheckConfig::default()
                        };
                        is_delta_net(&s, e.delta1, &net_cfg).is_net
                    })
                    .count();
                Ok(hits as f64 / section.runs.max(1) as f64)
            })?;
            write_json(&ctx.path("calibration.json"), &cal)?;
        }
    }
    Ok(Outcome::Pass)
}
