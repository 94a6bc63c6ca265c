//! Monte Carlo ensembles and the statistical tests run on them.
//!
//! Every test reads the per-path traces directly, so results can be
//! perturbed in place (negative controls) and re-tested.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::grid::{NormKind, Normed, ScalarField};
use crate::noise::NoisePath;
use crate::stepper::{config_integrator, config_noise, simulate_path, simulate_with_noise, Integrator, PathResult, RunSpec, SchemeKind};
use crate::trace::{AuxSample, EnergyTrace, TraceSample};

/// Share of diverged paths above which an ensemble is invalid.
pub const MAX_DIVERGED_FRACTION: f64 = 0.05;

/// Minimum number of valid paths for the supermartingale test.
pub const MIN_PATHS: usize = 50;

/// Gradient scale below which the maximum principle holds vacuously.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Verdict {
    /// `pass` is `statistic ≤ threshold` (false for NaN).
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass: statistic <= threshold, statistic, threshold, detail: detail.into() }
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: statistic={:.6e} threshold={:.6e} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.threshold,
            self.detail
        )
    }
}

/// Mean, variance and standard error of one recorded quantity over paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub se: Vec<f64>,
    pub n_valid: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub columns: Vec<ColumnStats>,
}

impl EnsembleStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    /// SHA-256 of the config echo.
    pub config_hash: String,
    pub base_seed: u64,
    pub paths: usize,
    pub diverged: usize,
    pub valid: bool,
    /// Not part of any report, so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub config: SimConfig,
    pub per_path: Vec<PathResult>,
    pub stats: EnsembleStats,
    pub meta: EnsembleMeta,
}

/// Statistic columns: trace columns after `t`, then the auxiliary ones.
pub const STAT_COLUMNS: [&str; 9] = [
    "W",
    "dirichlet",
    "area",
    "maxexcess",
    "hess_l2sq_cum",
    "grad_linf",
    "h1_dev_from_W",
    "area_diss_cum",
    "dirichlet_drift_cum",
];

fn stat_row(s: &TraceSample, a: Option<&AuxSample>) -> [f64; 9] {
    let r = s.to_row();
    let (x, y) = a.map_or((f64::NAN, f64::NAN), |a| (a.area_diss_cum, a.dirichlet_drift_cum));
    [r[1], r[2], r[3], r[4], r[5], r[6], r[7], x, y]
}

/// `(mean, sample variance, standard error)`; variance is 0 for one value.
pub fn mean_var_se(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var, (var / n).sqrt())
}

impl EnsembleResult {
    pub fn valid_paths(&self) -> impl Iterator<Item = &PathResult> {
        self.per_path.iter().filter(|p| p.diverged.is_none())
    }

    pub fn n_valid(&self) -> usize {
        self.valid_paths().count()
    }

    /// Recomputes `stats` (and the diverged count) from `per_path`.
    pub fn recompute_stats(&mut self) {
        self.stats = compute_stats(&self.per_path);
        self.meta.paths = self.per_path.len();
        self.meta.diverged = self.per_path.len() - self.n_valid();
        self.meta.valid = (self.meta.diverged as f64) <= MAX_DIVERGED_FRACTION * self.meta.paths as f64;
    }
}

fn compute_stats(paths: &[PathResult]) -> EnsembleStats {
    let valid: Vec<&PathResult> = paths.iter().filter(|p| p.diverged.is_none()).collect();
    let Some(first) = valid.first() else {
        return EnsembleStats::default();
    };
    let times = first.trace.times();
    let mut columns: Vec<ColumnStats> = STAT_COLUMNS
        .iter()
        .map(|n| ColumnStats { name: n.to_string(), mean: vec![], var: vec![], se: vec![], n_valid: vec![] })
        .collect();
    let mut buf: Vec<Vec<f64>> = vec![Vec::with_capacity(valid.len()); STAT_COLUMNS.len()];
    for i in 0..times.len() {
        buf.iter_mut().for_each(Vec::clear);
        for p in &valid {
            if let Some(s) = p.trace.samples.get(i) {
                let row = stat_row(s, p.trace.aux.get(i));
                for (b, v) in buf.iter_mut().zip(row) {
                    b.push(v);
                }
            }
        }
        for (c, b) in columns.iter_mut().zip(&buf) {
            let (m, v, se) = mean_var_se(b);
            c.mean.push(m);
            c.var.push(v);
            c.se.push(se);
            c.n_valid.push(b.len());
        }
    }
    EnsembleStats { times, columns }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Simulates paths `0..M` on `workerCount` threads and merges by path id.
pub fn run_ensemble(config: &SimConfig) -> Result<EnsembleResult> {
    let start = Instant::now();
    let m = config.ensemble_size as u64;
    let per_path = pool(config.workers())?
        .install(|| (0..m).into_par_iter().map(|id| simulate_path(config, id)).collect::<Result<Vec<_>>>())?;
    let mut result = EnsembleResult {
        config: config.clone(),
        per_path,
        stats: EnsembleStats::default(),
        meta: EnsembleMeta {
            config_hash: sha256_hex(config.echo().to_json().as_bytes()),
            base_seed: config.base_seed,
            paths: 0,
            diverged: 0,
            valid: true,
            wall_time_secs: 0.0,
        },
    };
    result.recompute_stats();
    result.meta.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// One row per path, one column per recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl SeriesMatrix {
    /// Per-time mean of row values.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|i| mean_var_se(&self.rows.iter().map(|r| r[i]).collect::<Vec<_>>()).0)
            .collect()
    }
}

/// Functionals available as path series.
pub const SERIES_NAMES: [&str; 5] = ["dirichlet", "area", "gsquare", "maxexcess", "grad_linf"];

fn series_value(s: &TraceSample, name: &str) -> Result<f64> {
    Ok(match name {
        "dirichlet" => s.dirichlet,
        // ∫Q² over the unit torus
        "gsquare" => 1.0 + s.dirichlet,
        "area" => s.area,
        "maxexcess" => s.maxexcess,
        "grad_linf" => s.grad_linf,
        other => return Err(Error::InvalidArgument(format!("unknown functional '{other}'"))),
    })
}

/// `F(t)^q` for every valid path.
pub fn series(result: &EnsembleResult, functional: &str, q: f64) -> Result<SeriesMatrix> {
    let valid: Vec<&PathResult> = result.valid_paths().collect();
    let times = valid.first().map(|p| p.trace.times()).unwrap_or_default();
    let rows = valid
        .iter()
        .map(|p| {
            if p.trace.samples.len() != times.len() {
                return Err(Error::MissingTraceData(format!("path {} has a truncated trace", p.path_id)));
            }
            p.trace.samples.iter().map(|s| series_value(s, functional).map(|v| v.powf(q))).collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(SeriesMatrix { times, rows })
}

/// Paired differences over every pair `t₁ < t₂`; passes iff
/// `Ê[F(t₂) − F(t₁)] ≤ 3·SE + tolBias` for all of them. The statistic is the
/// largest `D − 3·SE` and the threshold is `tolBias`. A single path is
/// accepted only with `min_paths = 1` (deterministic runs, where SE is 0).
pub fn supermartingale_series(s: &SeriesMatrix, name: &str, tol_bias: f64, min_paths: usize) -> Result<Verdict> {
    let n = s.rows.len();
    if n < min_paths.max(1) {
        return Err(Error::InsufficientPaths { needed: min_paths.max(1), have: n });
    }
    let nt = s.times.len();
    // transpose so each time is contiguous
    let cols: Vec<Vec<f64>> = (0..nt).map(|i| s.rows.iter().map(|r| r[i]).collect()).collect();
    let nf = n as f64;
    let (stat, worst) = (0..nt)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, (0, 0, 0.0, 0.0));
            for j in i + 1..nt {
                let (a, b) = (&cols[i], &cols[j]);
                let mut sum = 0.0;
                for k in 0..n {
                    sum += b[k] - a[k];
                }
                let d = sum / nf;
                let mut ss = 0.0;
                for k in 0..n {
                    let e = b[k] - a[k] - d;
                    ss += e * e;
                }
                let se = if n > 1 { (ss / (nf - 1.0) / nf).sqrt() } else { 0.0 };
                let v = d - 3.0 * se;
                if v > best.0 {
                    best = (v, (i, j, d, se));
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, (0, 0, 0.0, 0.0)), |x, y| if y.0 > x.0 { y } else { x });
    let stat = if nt < 2 { 0.0 } else { stat };
    let (i, j, d, se) = worst;
    let detail = if nt < 2 {
        "fewer than two recorded times".to_string()
    } else {
        format!(
            "{n} paths, {} pairs; worst pair t1={:.4} t2={:.4} D={d:.3e} SE={se:.3e}",
            nt * (nt - 1) / 2,
            s.times[i],
            s.times[j]
        )
    };
    Ok(Verdict::new(format!("supermartingale[{name}]"), stat, tol_bias, detail))
}

/// Supermartingale test for `F^q`; `tol_bias` defaults to
/// `tolBias·Ê[F(0)^q]` from the config. Noisy runs need [`MIN_PATHS`].
pub fn supermartingale_test(result: &EnsembleResult, functional: &str, q: f64, tol_bias: Option<f64>) -> Result<Verdict> {
    let s = series(result, functional, q)?;
    let tol = tol_bias.unwrap_or_else(|| result.config.tolerances.tol_bias * s.mean().first().copied().unwrap_or(0.0).abs());
    let name = if q == 1.0 { functional.to_string() } else { format!("{functional}^{q}") };
    let min_paths = if result.config.noise { MIN_PATHS } else { 1 };
    supermartingale_series(&s, &name, tol, min_paths)
}

/// `(3 + 4L²) / (2(1 + L²)²)`.
pub fn decay_constant(l: f64) -> f64 {
    let l2 = l * l;
    (3.0 + 4.0 * l2) / (2.0 * (1.0 + l2) * (1.0 + l2))
}

/// Largest initial gradient over all paths.
pub fn initial_lipschitz(result: &EnsembleResult) -> f64 {
    result.per_path.iter().map(|p| p.initial_grad_linf).fold(0.0, f64::max)
}

/// Worst `mean − 3·SE` over times of a per-path quantity `x(path, i)`.
fn worst_upper(result: &EnsembleResult, mut x: impl FnMut(&PathResult, usize) -> f64) -> Result<(f64, f64, f64, f64)> {
    let valid: Vec<&PathResult> = result.valid_paths().collect();
    let Some(first) = valid.first() else {
        return Err(Error::InsufficientPaths { needed: 1, have: 0 });
    };
    let times = first.trace.times();
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for (i, &t) in times.iter().enumerate() {
        let vals: Vec<f64> = valid.iter().map(|p| x(p, i)).collect();
        let (m, _, se) = mean_var_se(&vals);
        let stat = m - 3.0 * se;
        if stat > worst.0 || stat.is_nan() {
            worst = (stat, t, m, se);
        }
    }
    Ok(worst)
}

/// `Ê‖∇u(t)‖² + c_L·Ê∫₀ᵗ‖D²u‖² − Ê‖∇u₀‖² ≤ 3·SE + tolBias` at every
/// recorded time.
pub fn quantified_decay_test(result: &EnsembleResult, l: f64) -> Result<Verdict> {
    let c = decay_constant(l);
    let valid: Vec<&PathResult> = result.valid_paths().collect();
    let d0 = mean_var_se(&valid.iter().map(|p| p.trace.samples[0].dirichlet).collect::<Vec<_>>()).0;
    let (stat, t, m, se) = worst_upper(result, |p, i| {
        let s = p.trace.samples[i];
        s.dirichlet + c * s.hess_l2sq_cum - p.trace.samples[0].dirichlet
    })?;
    let tol = result.config.tolerances.tol_bias * d0.abs();
    Ok(Verdict::new(
        "quantified_decay",
        stat,
        tol,
        format!("L={l:.6} c_L={c:.6}; worst t={t:.4} mean={m:.4e} SE={se:.3e}"),
    ))
}

/// Pathwise: `max over paths of (maxₜ Linf(∇u) − L)/L ≤ tolMP`.
pub fn max_principle_test(result: &EnsembleResult, l: f64, tol_mp: f64) -> Verdict {
    if l < LIPSCHITZ_FLOOR {
        let grown = result.per_path.iter().map(|p| p.max_grad_linf).fold(0.0, f64::max);
        return Verdict::new(
            "max_principle",
            if grown <= LIPSCHITZ_FLOOR { 0.0 } else { f64::INFINITY },
            tol_mp,
            "vacuous: initial gradient vanishes",
        );
    }
    let (stat, id) = result
        .per_path
        .iter()
        .map(|p| ((p.max_grad_linf - l) / l, p.path_id))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
    let diverged = result.per_path.len() - result.n_valid();
    let stat = if diverged > 0 { f64::INFINITY } else { stat };
    Verdict::new(
        "max_principle",
        stat,
        tol_mp,
        format!("L={l:.6}; worst path {id}; {diverged} diverged of {}", result.per_path.len()),
    )
}

/// `∫g_M(Q)` at the level of the initial gradient stays below `tol` on
/// every recorded sample of every path.
pub fn max_excess_test(result: &EnsembleResult, tol: f64) -> Verdict {
    let (stat, id, t) = result
        .per_path
        .iter()
        .flat_map(|p| p.trace.samples.iter().map(move |s| (s.maxexcess, p.path_id, s.t)))
        .fold((0.0, 0, 0.0), |a, b| if b.0 > a.0 || b.0.is_nan() { b } else { a });
    Verdict::new("max_excess", stat, tol, format!("largest at path {id}, t={t:.4}"))
}

/// `Ê∫Q(t) + ½∫₀ᵗ Ê[∫Q|div v|² + ∫Q Dv:Dvᵀ] − Ê∫Q(0) ≤ 3·SE + tolBias`.
pub fn area_inequality_test(result: &EnsembleResult) -> Result<Verdict> {
    if result.valid_paths().any(|p| p.trace.aux.len() != p.trace.samples.len()) {
        return Err(Error::MissingTraceData("area dissipation not recorded".into()));
    }
    let a0 = mean_var_se(&result.valid_paths().map(|p| p.trace.samples[0].area).collect::<Vec<_>>()).0;
    let (stat, t, m, se) = worst_upper(result, |p, i| {
        p.trace.samples[i].area + p.trace.aux[i].area_diss_cum - p.trace.samples[0].area
    })?;
    Ok(Verdict::new(
        "area_inequality",
        stat,
        result.config.tolerances.tol_bias * a0,
        format!("worst t={t:.4} mean={m:.4e} SE={se:.3e}"),
    ))
}

/// Realized against predicted Dirichlet drift over `[0, δ]` in integrated
/// form: `X = D(δ) − D(0) − ∫₀^δ μ(u(s))ds` must satisfy
/// `|Ê X| ≤ 3·SE + bias`, with `bias` an absolute allowance.
pub fn drift_prediction_test(result: &EnsembleResult, delta: f64, bias: f64) -> Result<Verdict> {
    let valid: Vec<&PathResult> = result.valid_paths().collect();
    if valid.is_empty() {
        return Err(Error::InsufficientPaths { needed: 1, have: 0 });
    }
    let mut x = Vec::with_capacity(valid.len());
    let mut predicted = Vec::with_capacity(valid.len());
    for p in &valid {
        let (mismatch, pred) = drift_mismatch(&p.trace, delta)?;
        x.push(mismatch);
        predicted.push(pred);
    }
    let (m, _, se) = mean_var_se(&x);
    let (pm, _, _) = mean_var_se(&predicted);
    Ok(Verdict::new(
        "drift_prediction",
        m.abs() - 3.0 * se,
        bias,
        format!("delta={delta}; predicted change {pm:.5e}, realized minus predicted {m:.3e} (SE {se:.3e})"),
    ))
}

/// Realized minus predicted Dirichlet change over `[0, delta]`, and the
/// predicted change.
fn drift_mismatch(trace: &EnergyTrace, delta: f64) -> Result<(f64, f64)> {
    let i = trace
        .samples
        .iter()
        .position(|s| (s.t - delta).abs() <= 1e-9 * delta.max(1.0))
        .ok_or_else(|| Error::MissingTraceData(format!("no sample at t={delta}")))?;
    let aux = trace.aux.get(i).ok_or_else(|| Error::MissingTraceData("drift not recorded".into()))?;
    let change = trace.samples[i].dirichlet - trace.samples[0].dirichlet;
    Ok((change - aux.dirichlet_drift_cum, aux.dirichlet_drift_cum))
}

/// Drift prediction with the leading `O(dt)` bias removed. Every path is run
/// over `[0, delta]` at `dt` and at `dt/2` on the same Brownian path, and the
/// extrapolated mismatch `2X(dt/2) − X(dt)` is tested against zero.
pub fn drift_extrapolated_test(config: &SimConfig, delta: f64, bias: f64) -> Result<Verdict> {
    if config.max_refine_level < 1 {
        return Err(Error::InvalidArgument("drift extrapolation needs maxRefineLevel ≥ 1".into()));
    }
    let mut short = config.clone();
    short.horizon = delta;
    short.sample_stride = None;
    let short = short.validate(false)?;
    let grid = short.grid()?;
    let m = short.ensemble_size as u64;
    let rows: Vec<[f64; 3]> = pool(short.workers())?.install(|| {
        (0..m)
            .into_par_iter()
            .map(|id| -> Result<[f64; 3]> {
                let noise = config_noise(&short, id)?;
                let fine = if short.noise { noise.refine(2)? } else { NoisePath::zero(2 * noise.steps(), noise.dt() / 2.0) };
                let mut out = [0.0; 3];
                for (j, path) in [&noise, &fine].into_iter().enumerate() {
                    let spec = RunSpec { scheme: short.scheme, epsilon: short.epsilon, stride: 1, with_correction: short.noise };
                    let u0 = short.initial.build(grid, short.base_seed, id)?;
                    let r = simulate_with_noise(u0, path, &spec, id)?;
                    if r.diverged.is_some() {
                        return Err(Error::EnsembleDiverged { diverged: 1, total: m as usize });
                    }
                    let (x, pred) = drift_mismatch(&r.trace, delta)?;
                    out[j] = x;
                    out[2] = pred;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let coarse: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let extrapolated: Vec<f64> = rows.iter().map(|r| 2.0 * r[1] - r[0]).collect();
    let (mc, _, sec) = mean_var_se(&coarse);
    let (me, _, se) = mean_var_se(&extrapolated);
    let (pm, _, _) = mean_var_se(&rows.iter().map(|r| r[2]).collect::<Vec<_>>());
    Ok(Verdict::new(
        "drift_prediction",
        me.abs() - 3.0 * se,
        bias,
        format!(
            "delta={delta}; predicted change {pm:.5e}; mismatch at dt {mc:.3e} (SE {sec:.3e}), extrapolated {me:.3e} (SE {se:.3e})"
        ),
    ))
}

/// `Ê supₜ ‖∇u‖^{2q} / Ê‖∇u₀‖^{2q} ≤ K`.
pub fn moment_bound_test(result: &EnsembleResult, q: f64, k: f64) -> Result<Verdict> {
    let s = series(result, "dirichlet", q)?;
    let sup: Vec<f64> = s.rows.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let init: Vec<f64> = s.rows.iter().map(|r| r[0]).collect();
    let num = mean_var_se(&sup).0;
    let den = mean_var_se(&init).0;
    let ratio = if den == 0.0 && num == 0.0 { 0.0 } else { num / den };
    Ok(Verdict::new(format!("moment_bound[q={q}]"), ratio, k, format!("E sup = {num:.5e}, E initial = {den:.5e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    #[serde(rename = "T")]
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeTimeAnalysis {
    pub alpha_per_path: Vec<f64>,
    pub decay_curve: Vec<DecayPoint>,
    pub verdict: Verdict,
}

/// Estimates `α` per path from the final spatial mean of `u − W` and the
/// curve `T ↦ Ê sup_{t∈[T,T_end]} ‖u − W − α̂‖_{H¹}`; the verdict requires the
/// curve to be nonincreasing up to 3 paired standard errors.
pub fn large_time_analysis(result: &EnsembleResult, tgrid: &[f64]) -> Result<LargeTimeAnalysis> {
    let valid: Vec<&PathResult> = result.valid_paths().collect();
    let first = valid.first().ok_or(Error::InsufficientPaths { needed: 1, have: 0 })?;
    let t_end = first.trace.last().map_or(0.0, |s| s.t);
    let t_max = tgrid.iter().copied().fold(0.0, f64::max);
    if t_end + 1e-9 < t_max {
        return Err(Error::InvalidArgument(format!("horizon {t_end} is shorter than T = {t_max}")));
    }
    let mut alpha = Vec::with_capacity(valid.len());
    // sups[path][j]
    let mut sups = Vec::with_capacity(valid.len());
    for p in &valid {
        if p.trace.aux.len() != p.trace.samples.len() {
            return Err(Error::MissingTraceData("H¹ decomposition not recorded".into()));
        }
        let a = p.trace.aux.last().expect("nonempty").mean_dev;
        alpha.push(a);
        let dev: Vec<(f64, f64)> = p
            .trace
            .samples
            .iter()
            .zip(&p.trace.aux)
            .map(|(s, x)| {
                let m = x.mean_dev - a;
                (s.t, (x.h1_semi_dev * x.h1_semi_dev + m * m).sqrt())
            })
            .collect();
        let row: Vec<f64> = tgrid
            .iter()
            .map(|&tt| dev.iter().filter(|(t, _)| *t >= tt - 1e-9).map(|d| d.1).fold(0.0, f64::max))
            .collect();
        sups.push(row);
    }
    let decay_curve: Vec<DecayPoint> = tgrid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (mean, _, se) = mean_var_se(&sups.iter().map(|r| r[j]).collect::<Vec<_>>());
            DecayPoint { t, mean, se }
        })
        .collect();
    let mut stat = 0.0f64;
    let mut at = 0.0;
    for j in 1..tgrid.len() {
        let diffs: Vec<f64> = sups.iter().map(|r| r[j] - r[j - 1]).collect();
        let (m, _, se) = mean_var_se(&diffs);
        let v = m - 3.0 * se;
        if v > stat {
            stat = v;
            at = tgrid[j];
        }
    }
    let verdict = Verdict::new(
        "large_time",
        stat,
        0.0,
        format!(
            "T_end={t_end}; curve {}; worst increase at T={at}",
            decay_curve.iter().map(|d| format!("{}:{:.3e}", d.t, d.mean)).collect::<Vec<_>>().join(" ")
        ),
    );
    Ok(LargeTimeAnalysis { alpha_per_path: alpha, decay_curve, verdict })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViscositySweep {
    pub rows: Vec<SweepRow>,
    /// Log-log slope of distance against ε over the positive ε.
    pub exponent: Option<f64>,
    pub verdict: Verdict,
}

/// Couples runs at each `ε` through identical noise and initial data, and
/// reports `Ê maxₜ ‖u^ε(t) − u⁰(t)‖_{L²}` per `ε`. The last entry must be 0.
pub fn viscosity_sweep(config: &SimConfig, epsilons: &[f64]) -> Result<ViscositySweep> {
    if epsilons.last() != Some(&0.0) || epsilons.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument("epsilons must be strictly descending and end with 0".into()));
    }
    let grid = config.grid()?;
    let m = config.ensemble_size as u64;
    let dists: Vec<Vec<f64>> = pool(config.workers())?.install(|| {
        (0..m)
            .into_par_iter()
            .map(|id| -> Result<Vec<f64>> {
                let u0 = config.initial.build(grid, config.base_seed, id)?;
                let noise = config_noise(config, id)?;
                let integrators = epsilons.iter().map(|&e| config_integrator(config, e)).collect::<Result<Vec<_>>>()?;
                let mut states: Vec<ScalarField> = vec![u0; epsilons.len()];
                let mut best = vec![0.0f64; epsilons.len()];
                let reference = epsilons.len() - 1;
                for &dw in noise.increments() {
                    for (s, it) in states.iter_mut().zip(&integrators) {
                        let b = crate::geometry::GeometryBundle::new(s, it.epsilon());
                        *s = it.step_with(s, &b, config.dt, dw);
                        if !s.is_finite() {
                            return Err(Error::EnsembleDiverged { diverged: 1, total: m as usize });
                        }
                    }
                    for j in 0..reference {
                        let d = (&states[j] - &states[reference]).values().iter().map(|x| x * x).sum::<f64>();
                        let d = (d * grid.cell_volume()).sqrt();
                        best[j] = best[j].max(d);
                    }
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<SweepRow> = epsilons
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let (mean, _, se) = mean_var_se(&dists.iter().map(|r| r[j]).collect::<Vec<_>>());
            SweepRow { epsilon: e, mean, se }
        })
        .collect();
    let mut stat = f64::NEG_INFINITY;
    for j in 1..epsilons.len() {
        let diffs: Vec<f64> = dists.iter().map(|r| r[j] - r[j - 1]).collect();
        let (md, _, se) = mean_var_se(&diffs);
        stat = stat.max(md - 3.0 * se);
    }
    if epsilons.len() == 1 {
        stat = 0.0;
    }
    let pos: Vec<&SweepRow> = rows.iter().filter(|r| r.epsilon > 0.0 && r.mean > 0.0).collect();
    let exponent = (pos.len() >= 2).then(|| {
        let xs: Vec<f64> = pos.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = pos.iter().map(|r| r.mean.ln()).collect();
        least_squares_slope(&xs, &ys)
    });
    let verdict = Verdict::new(
        "viscosity_sweep",
        stat,
        0.0,
        format!(
            "{}; exponent {}",
            rows.iter().map(|r| format!("eps={}:{:.4e}", r.epsilon, r.mean)).collect::<Vec<_>>().join(" "),
            exponent.map_or("n/a".to_string(), |e| format!("{e:.3}"))
        ),
    );
    Ok(ViscositySweep { rows, exponent, verdict })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongLevel {
    pub dt: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoStratStudy {
    pub with_correction: Vec<StrongLevel>,
    pub without_correction: Vec<StrongLevel>,
    pub order_with: f64,
    pub order_without: f64,
    pub verdicts: Vec<Verdict>,
}

/// Final-time `L²` distance between Euler–Maruyama (Itô form) and Heun
/// (Stratonovich form) on the same Brownian path, over `levels` dyadic step
/// sizes `dt, dt/2, …`. Needs `maxRefineLevel ≥ levels − 1`.
pub fn ito_strat_study(config: &SimConfig, levels: usize, min_order: f64) -> Result<ItoStratStudy> {
    if levels < 2 || config.max_refine_level < (levels - 1) as u32 {
        return Err(Error::InvalidArgument(format!("{levels} levels need maxRefineLevel ≥ {}", levels.max(1) - 1)));
    }
    let grid = config.grid()?;
    let steps = config.steps()?;
    let eps = config.epsilon;
    let bound = crate::stepper::explicit_stability_bound(&grid, eps);
    if config.dt > bound {
        return Err(Error::Stability { dt: config.dt, bound });
    }
    let em = Integrator::new(SchemeKind::ExplicitEM, grid, eps);
    let em_plain = em.clone().without_correction();
    let heun = Integrator::new(SchemeKind::StratonovichHeun, grid, eps);
    let m = config.ensemble_size as u64;
    // per path: [with, without] distances per level
    let rows: Vec<Vec<[f64; 2]>> = pool(config.workers())?.install(|| {
        (0..m)
            .into_par_iter()
            .map(|id| -> Result<Vec<[f64; 2]>> {
                let u0 = config.initial.build(grid, config.base_seed, id)?;
                let base = NoisePath::sample(config.base_seed, id, steps, config.dt, config.max_refine_level)?;
                (0..levels)
                    .map(|j| {
                        let path = if j == 0 { base.clone() } else { base.refine(1 << j)? };
                        let run = |it: &Integrator| it.run(&u0, path.increments(), path.dt(), |_, _| {});
                        let h = run(&heun)?;
                        let dist = |u: ScalarField| (&u - &h).norm(NormKind::L2);
                        Ok([dist(run(&em)?)?, dist(run(&em_plain)?)?])
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let level_stats = |c: usize| -> Vec<StrongLevel> {
        (0..levels)
            .map(|j| {
                let (mean, _, se) = mean_var_se(&rows.iter().map(|r| r[j][c]).collect::<Vec<_>>());
                StrongLevel { dt: config.dt / (1u64 << j) as f64, mean, se }
            })
            .collect()
    };
    let order = |ls: &[StrongLevel]| {
        let x: Vec<f64> = ls.iter().map(|l| l.dt.ln()).collect();
        let y: Vec<f64> = ls.iter().map(|l| l.mean.ln()).collect();
        least_squares_slope(&x, &y)
    };
    let with = level_stats(0);
    let without = level_stats(1);
    let (ow, oo) = (order(&with), order(&without));
    let verdicts = vec![
        Verdict::new("ito_strat_order", -ow, -min_order, format!("measured strong order {ow:.3} with the correction")),
        Verdict::new(
            "ito_strat_plateau",
            oo,
            min_order,
            format!("measured order {oo:.3} without the correction; finest distance {:.3e}", without[levels - 1].mean),
        ),
    ];
    Ok(ItoStratStudy { with_correction: with, without_correction: without, order_with: ow, order_without: oo, verdicts })
}

pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(extra: &str, m: usize) -> SimConfig {
        parse_config(&format!(
            r#"{{"dim":1,"res":32,"T":0.05,"dt":0.001,"M":{m},"baseSeed":42,"initial":{{"family":"fourier","sin":[0.5]}}{extra}}}"#
        ))
        .unwrap()
    }

    fn synthetic(rows: Vec<Vec<f64>>) -> SeriesMatrix {
        SeriesMatrix { times: (0..rows[0].len()).map(|i| i as f64).collect(), rows }
    }

    #[test]
    fn single_path_ensemble_equals_simulate_path() {
        let c = cfg("", 1);
        let e = run_ensemble(&c).unwrap();
        assert_eq!(e.per_path[0], simulate_path(&c, 0).unwrap());
        assert_eq!(e.stats.column("dirichlet").unwrap().se[3], 0.0);
        assert_eq!(e.stats.column("dirichlet").unwrap().n_valid[3], 1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let a = run_ensemble(&cfg(r#","workerCount":1"#, 12)).unwrap();
        let b = run_ensemble(&cfg(r#","workerCount":4"#, 12)).unwrap();
        assert_eq!(a.per_path, b.per_path);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn identical_values_give_zero_statistic() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, i as f64, i as f64]).collect();
        let v = supermartingale_series(&synthetic(rows), "flat", 0.0, MIN_PATHS).unwrap();
        assert_eq!(v.statistic, 0.0);
        assert!(v.pass);
    }

    #[test]
    fn supermartingale_controls() {
        let dec: Vec<Vec<f64>> = (0..60).map(|i| (0..5).map(|t| 10.0 - t as f64 + 0.01 * i as f64).collect()).collect();
        let v = supermartingale_series(&synthetic(dec), "dec", 0.0, MIN_PATHS).unwrap();
        assert!(v.pass && v.statistic < 0.0);
        let grow: Vec<Vec<f64>> = (0..60).map(|i| (0..5).map(|t| 1.0 + 0.1 * t as f64 + i as f64).collect()).collect();
        assert!(!supermartingale_series(&synthetic(grow), "grow", 0.01, MIN_PATHS).unwrap().pass);
        let few: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, 0.0]).collect();
        assert!(matches!(
            supermartingale_series(&synthetic(few), "few", 0.0, MIN_PATHS),
            Err(Error::InsufficientPaths { needed: 50, have: 10 })
        ));
    }

    #[test]
    fn decay_constant_values() {
        assert_eq!(decay_constant(0.0), 1.5);
        let pi = std::f64::consts::PI;
        let expect = (3.0 + 4.0 * pi * pi) / (2.0 * (1.0 + pi * pi).powi(2));
        assert_eq!(decay_constant(pi), expect);
        assert!((decay_constant(pi) - 0.179767).abs() < 5e-7);
    }

    #[test]
    fn max_principle_vacuous_and_negative_control() {
        let zero = run_ensemble(&parse_config(r#"{"dim":1,"res":16,"T":0.01,"dt":0.001,"M":2,"baseSeed":1,"initial":{"family":"fourier"}}"#).unwrap()).unwrap();
        let v = max_principle_test(&zero, initial_lipschitz(&zero), 0.02);
        assert!(v.pass && v.statistic == 0.0 && v.detail.contains("vacuous"));

        let mut e = run_ensemble(&cfg("", 4)).unwrap();
        let l = initial_lipschitz(&e);
        let mut fake = e.per_path[0].clone();
        fake.max_grad_linf = 1.05 * l;
        e.per_path.push(fake);
        let v = max_principle_test(&e, l, 0.02);
        assert!(!v.pass);
    }

    #[test]
    fn moment_bound_noise_off_is_one() {
        let e = run_ensemble(&cfg(r#","noise":false"#, 50)).unwrap();
        let v = moment_bound_test(&e, 1.5, 10.0).unwrap();
        assert!((v.statistic - 1.0).abs() < 1e-15, "{}", v.statistic);
        assert!(!moment_bound_test(&e, 1.5, 0.5).unwrap().pass);
    }

    #[test]
    fn large_time_constant_and_shift() {
        let c = parse_config(r#"{"dim":1,"res":16,"T":0.2,"dt":0.01,"M":5,"baseSeed":3,"initial":{"family":"fourier","offset":0.3}}"#).unwrap();
        let lt = large_time_analysis(&run_ensemble(&c).unwrap(), &[0.05, 0.1]).unwrap();
        assert!(lt.decay_curve.iter().all(|d| d.mean.abs() <= 1e-12));
        assert!(lt.alpha_per_path.iter().all(|a| (a - 0.3).abs() <= 1e-12));
        assert!(lt.verdict.pass);
        assert!(large_time_analysis(&run_ensemble(&c).unwrap(), &[1.0]).is_err());
    }

    #[test]
    fn sweep_with_only_zero() {
        let s = viscosity_sweep(&cfg("", 3), &[0.0]).unwrap();
        assert_eq!(s.rows[0].mean, 0.0);
        assert!(s.verdict.pass);
        assert!(viscosity_sweep(&cfg("", 3), &[0.0, 0.1]).is_err());
    }

    #[test]
    fn slope_fit() {
        let x = [0.0, 1.0, 2.0];
        assert!((least_squares_slope(&x, &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
