use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use super::{CutoffFns, NetSplit, ParameterLedger};
use crate::error::{Error, Result};
use crate::metric_models::SampleSet;
use crate::observation::ObservedDistances;

/// `K^L_jk` for an arbitrary pair against an arbitrary witness block.
/// Masked terms contribute nothing; the result is not clamped.
pub fn k_estimate(obs: &ObservedDistances, j: usize, k: usize, witnesses: Range<usize>, sigma: f64, l: f64) -> f64 {
    let count = witnesses.len();
    if count == 0 {
        return 0.0;
    }
    let two_sig2 = 2.0 * sigma * sigma;
    let mut acc = 0.0;
    for w in witnesses {
        if let (Some(a), Some(b)) = (obs.get(j, w), obs.get(k, w)) {
            let diff = a - b;
            acc += (diff * diff).min(l) - two_sig2;
        }
    }
    acc / count as f64
}

/// Fused pass over `I⁽⁰⁾ × I⁽¹⁾` returning `(T, K^L)` in row-major order.
fn t_and_kl(obs: &ObservedDistances, split: &NetSplit, sigma: f64, l: f64) -> (Vec<u32>, Vec<f64>) {
    let (n0, n1, n2) = (split.n0, split.n1, split.n2);
    let i2 = split.i2();
    let two_sig2 = 2.0 * sigma * sigma;
    let mut t = vec![0u32; n0 * n1];
    let mut kl = vec![0.0f64; n0 * n1];
    t.par_chunks_mut(n1)
        .zip(kl.par_chunks_mut(n1))
        .enumerate()
        .for_each(|(j, (t_row, kl_row))| {
            let (vj, yj) = obs.row_range(j, i2.start, i2.end);
            for (kk, k) in split.i1().enumerate() {
                let (vk, yk) = obs.row_range(k, i2.start, i2.end);
                let mut count = 0u32;
                let mut acc = 0.0;
                for idx in 0..n2 {
                    if yj[idx] & yk[idx] {
                        count += 1;
                        let diff = vj[idx] - vk[idx];
                        acc += (diff * diff).min(l) - two_sig2;
                    }
                }
                t_row[kk] = count;
                kl_row[kk] = acc / n2 as f64;
            }
        });
    (t, kl)
}

/// `T_jk = Σ_{ℓ∈I⁽²⁾} Y_jℓ Y_kℓ` over `I⁽⁰⁾ × I⁽¹⁾`, row-major with local indices.
pub fn compute_t(obs: &ObservedDistances, split: &NetSplit) -> Result<Vec<u32>> {
    split.check_fits(obs)?;
    Ok(t_and_kl(obs, split, 0.0, f64::INFINITY).0)
}

/// Truncated, bias-corrected `K^L_jk` over `I⁽⁰⁾ × I⁽¹⁾`. Pass `l = ∞` for the
/// untruncated estimator.
pub fn compute_kl(obs: &ObservedDistances, split: &NetSplit, sigma: f64, l: f64) -> Result<Vec<f64>> {
    split.check_fits(obs)?;
    Ok(t_and_kl(obs, split, sigma, l).1)
}

/// `V`, `W`, `Q` over `I⁽⁰⁾ × I⁽⁰⁾`, plus the decomposition `Q = Q¹ + Q²` into
/// the part carried by true distances and the part carried by noise when the
/// sample positions are known.
#[derive(Debug, Clone, PartialEq)]
pub struct VwqTables {
    pub n0: usize,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub q1: Option<Vec<f64>>,
    pub q2: Option<Vec<f64>>,
}

/// Weighted averages of observed distances from `j′` to the medium-net points
/// that look close to `j`. When `W_{j,j′} = 0`, `Q_{j,j′} = D`.
pub fn compute_vwq(
    obs: &ObservedDistances,
    split: &NetSplit,
    t: &[u32],
    kl: &[f64],
    ledger: &ParameterLedger,
    cutoffs: &CutoffFns,
    truth: Option<&SampleSet>,
) -> Result<VwqTables> {
    split.check_fits(obs)?;
    let (n0, n1) = (split.n0, split.n1);
    if t.len() != n0 * n1 || kl.len() != n0 * n1 {
        return Err(Error::Input(format!(
            "T/K tables have {}/{} entries, expected {}",
            t.len(),
            kl.len(),
            n0 * n1
        )));
    }
    if let Some(s) = truth {
        if s.len() < split.total() {
            return Err(Error::Input("ground truth has fewer points than the split".into()));
        }
    }
    let scale = 1.0 / (ledger.b * split.n2 as f64);
    let weights: Vec<f64> = t
        .par_iter()
        .zip(kl)
        .map(|(&tv, &kv)| cutoffs.beta1(tv as f64 * scale) * cutoffs.psi_rho(kv))
        .collect();
    let big_d = ledger.diameter;
    let i1 = split.i1();
    let inv_n1 = 1.0 / n1 as f64;

    // one row per j: (v, w, v_true) over j′
    let rows: Vec<Vec<(f64, f64, f64)>> = (0..n0)
        .into_par_iter()
        .map(|j| {
            let a = &weights[j * n1..(j + 1) * n1];
            (0..n0)
                .map(|jp| {
                    let (vals, flags) = obs.row_range(jp, i1.start, i1.end);
                    let (mut v, mut w, mut vt) = (0.0, 0.0, 0.0);
                    for kk in 0..n1 {
                        if flags[kk] && a[kk] != 0.0 {
                            w += a[kk];
                            v += a[kk] * vals[kk];
                            if let Some(s) = truth {
                                vt += a[kk] * s.distance(i1.start + kk, jp);
                            }
                        }
                    }
                    (v * inv_n1, w * inv_n1, vt * inv_n1)
                })
                .collect()
        })
        .collect();

    let mut out = VwqTables {
        n0,
        v: Vec::with_capacity(n0 * n0),
        w: Vec::with_capacity(n0 * n0),
        q: Vec::with_capacity(n0 * n0),
        q1: truth.map(|_| Vec::with_capacity(n0 * n0)),
        q2: truth.map(|_| Vec::with_capacity(n0 * n0)),
    };
    for (v, w, vt) in rows.into_iter().flatten() {
        out.v.push(v);
        out.w.push(w);
        let q = if w == 0.0 { big_d } else { v / w };
        out.q.push(q);
        if let (Some(q1), Some(q2)) = (out.q1.as_mut(), out.q2.as_mut()) {
            if w == 0.0 {
                q1.push(big_d);
                q2.push(0.0);
            } else {
                q1.push(vt / w);
                q2.push((v - vt) / w);
            }
        }
    }
    Ok(out)
}

/// Symmetric approximate distance on the coarse net.
#[derive(Debug, Clone, PartialEq)]
pub struct DappTable {
    n: usize,
    values: Vec<f64>,
    /// Number of ordered directions (0, 1 or 2) that passed the `W` threshold.
    passed: Vec<u8>,
}

impl DappTable {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> (f64, u8)) -> Self {
        let mut values = vec![0.0; n * n];
        let mut passed = vec![2u8; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let (v, p) = f(i, j);
                values[i * n + j] = v;
                values[j * n + i] = v;
                passed[i * n + j] = p;
                passed[j * n + i] = p;
            }
        }
        DappTable { n, values, passed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Directions of `(i, j)` that passed the `W` threshold.
    pub fn passed(&self, i: usize, j: usize) -> u8 {
        self.passed[i * self.n + j]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "i,j,dapp,w_passed")?;
        for i in 0..self.n {
            for j in i + 1..self.n {
                writeln!(out, "{i},{j},{:?},{}", self.get(i, j), u8::from(self.passed(i, j) > 0))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Read a pair table. Every pair `i < j` below the largest index must be present.
    pub fn load(path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut rows = Vec::new();
        let mut n = 0usize;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if lineno == 1 {
                if line.trim() != "i,j,dapp,w_passed" {
                    return Err(err(lineno, format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err(lineno, format!("expected 4 fields, got {}", f.len())));
            }
            let i: usize = f[0].parse().map_err(|e| err(lineno, format!("bad index: {e}")))?;
            let j: usize = f[1].parse().map_err(|e| err(lineno, format!("bad index: {e}")))?;
            let v: f64 = f[2].parse().map_err(|e| err(lineno, format!("bad value: {e}")))?;
            let p: u8 = match f[3] {
                "0" => 0,
                "1" => 1,
                other => return Err(err(lineno, format!("w_passed must be 0 or 1, got {other:?}"))),
            };
            if i >= j {
                return Err(err(lineno, format!("pair ({i}, {j}) must have i < j")));
            }
            n = n.max(j + 1);
            rows.push((lineno, i, j, v, p));
        }
        let mut values = vec![0.0; n * n];
        let mut passed = vec![2u8; n * n];
        let mut seen = vec![false; n * n];
        for (lineno, i, j, v, p) in rows {
            if seen[i * n + j] {
                return Err(err(lineno, format!("duplicate pair ({i}, {j})")));
            }
            seen[i * n + j] = true;
            values[i * n + j] = v;
            values[j * n + i] = v;
            passed[i * n + j] = p;
            passed[j * n + i] = p;
        }
        for i in 0..n {
            for j in i + 1..n {
                if !seen[i * n + j] {
                    return Err(Error::Input(format!("{}: pair ({i}, {j}) is missing", path.display())));
                }
            }
        }
        Ok(DappTable { n, values, passed })
    }
}

/// Threshold `Q` on `W > u₂` (falling back to `D`), then zero the diagonal,
/// symmetrize and clamp into `[0, D]`.
pub fn approx_distances(q: &[f64], w: &[f64], ledger: &ParameterLedger, diameter: f64) -> Result<DappTable> {
    let n = (q.len() as f64).sqrt().round() as usize;
    if n * n != q.len() || w.len() != q.len() {
        return Err(Error::Input("Q and W must be square tables of equal size".into()));
    }
    let u2 = ledger.u2;
    Ok(DappTable::from_fn(n, |i, j| {
        let a = (w[i * n + j] > u2).then(|| q[i * n + j]);
        let b = (w[j * n + i] > u2).then(|| q[j * n + i]);
        let (v, p) = match (a, b) {
            (Some(x), Some(y)) => (0.5 * (x + y), 2),
            (Some(x), None) | (None, Some(x)) => (x, 1),
            (None, None) => (diameter, 0),
        };
        (v.clamp(0.0, diameter), p)
    }))
}

/// All estimator tables of one run. Indices into `t`/`kl` are local offsets
/// `(j, k − N₀)`; the coarse tables are indexed by `(j, j′)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTable {
    pub split: NetSplit,
    pub t: Vec<u32>,
    pub kl: Vec<f64>,
    pub vwq: VwqTables,
    pub dapp: DappTable,
}

impl EstimatorTable {
    pub fn t_at(&self, j: usize, k_local: usize) -> u32 {
        self.t[j * self.split.n1 + k_local]
    }

    pub fn kl_at(&self, j: usize, k_local: usize) -> f64 {
        self.kl[j * self.split.n1 + k_local]
    }

    pub fn w_at(&self, j: usize, jp: usize) -> f64 {
        self.vwq.w[j * self.split.n0 + jp]
    }

    pub fn q_at(&self, j: usize, jp: usize) -> f64 {
        self.vwq.q[j * self.split.n0 + jp]
    }
}

/// Compose `T`, `K^L`, `V/W/Q` and `d^app`. Supplying the sample positions
/// additionally fills `Q¹` and `Q²`.
pub fn run_pipeline(
    obs: &ObservedDistances,
    split: &NetSplit,
    ledger: &ParameterLedger,
    cutoffs: &CutoffFns,
    truth: Option<&SampleSet>,
) -> Result<EstimatorTable> {
    split.check_fits(obs)?;
    let (t, kl) = t_and_kl(obs, split, ledger.sigma, ledger.l);
    let vwq = compute_vwq(obs, split, &t, &kl, ledger, cutoffs, truth)?;
    let dapp = approx_distances(&vwq.q, &vwq.w, ledger, ledger.diameter)?;
    Ok(EstimatorTable {
        split: *split,
        t,
        kl,
        vwq,
        dapp,
    })
}
