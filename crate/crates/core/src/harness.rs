//! Ground-truth matching, detection and accuracy metrics, Monte Carlo power
//! sweeps and report files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{derive_seed, phase_diff, sample_scenario, PathParams, ScenarioConfig};
use crate::optimizer::{estimate_scenario, EstimatorConfig, Telemetry};
use crate::{Error, Result};

/// Default total matching cost, in radians.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.35;

/// Names of the five per-pair error columns, in order.
pub const MAE_PARAMS: [&str; 5] = ["omega1", "omega2", "phi", "theta", "gain"];

/// Geometric distance between two paths: wrapped phase differences of
/// ω₁, ω₂, π sin φ and π sin θ.
pub fn match_cost(a: &PathParams, b: &PathParams) -> f64 {
    phase_diff(a.omega1, b.omega1).abs()
        + phase_diff(a.omega2, b.omega2).abs()
        + phase_diff(a.psi(), b.psi()).abs()
        + phase_diff(a.chi(), b.chi()).abs()
}

/// `|Δω₁|, |Δω₂|, |Δφ|, |Δθ|` (wrapped) and `||b̂| − |b|| / |b|`.
pub fn pair_errors(truth: &PathParams, estimate: &PathParams) -> [f64; 5] {
    [
        phase_diff(estimate.omega1, truth.omega1).abs(),
        phase_diff(estimate.omega2, truth.omega2).abs(),
        phase_diff(estimate.phi, truth.phi).abs(),
        phase_diff(estimate.theta, truth.theta).abs(),
        (estimate.b.norm() - truth.b.norm()).abs() / truth.b.norm(),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub truth: usize,
    pub estimate: usize,
    pub cost: f64,
    pub errors: [f64; 5],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_truth: Vec<usize>,
    pub unmatched_estimates: Vec<usize>,
}

impl MatchResult {
    pub fn num_truth(&self) -> usize {
        self.pairs.len() + self.unmatched_truth.len()
    }

    pub fn num_estimates(&self) -> usize {
        self.pairs.len() + self.unmatched_estimates.len()
    }
}

/// Largest side of an assignment problem handled by [`match_paths`].
const MAX_ASSIGN: usize = 16;

/// Assignment with the most pairs of cost ≤ `threshold`, ties broken by the
/// smallest total cost. Solved exactly by dynamic programming over subsets
/// of the smaller side.
pub fn match_paths(
    truth: &[PathParams],
    estimates: &[PathParams],
    threshold: f64,
) -> Result<MatchResult> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "match threshold must be positive, got {threshold}"
        )));
    }
    let transpose = estimates.len() > truth.len();
    let (rows, cols) = if transpose { (estimates, truth) } else { (truth, estimates) };
    if cols.len() > MAX_ASSIGN {
        return Err(Error::InvalidConfig(format!(
            "cannot match more than {MAX_ASSIGN} paths on both sides"
        )));
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| match_cost(r, c)).collect())
        .collect();

    // best[mask] after processing rows 0..i: (pairs, total cost), compared
    // by more pairs first, then smaller cost.
    let width = 1usize << cols.len();
    let worst = (0usize, f64::INFINITY);
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut best = vec![worst; width];
    best[0] = (0, 0.0);
    let mut choice = vec![vec![usize::MAX; width]; rows.len()];
    for (i, row) in cost.iter().enumerate() {
        let mut next = best.clone();
        for mask in 0..width {
            let cur = best[mask];
            if cur.1.is_infinite() {
                continue;
            }
            for (j, &c) in row.iter().enumerate() {
                if mask & (1 << j) != 0 || c > threshold {
                    continue;
                }
                let cand = (cur.0 + 1, cur.1 + c);
                let m = mask | (1 << j);
                if better(cand, next[m]) {
                    next[m] = cand;
                    choice[i][m] = j;
                }
            }
        }
        // Without a recorded choice the row stays unmatched for that mask.
        best = next;
    }

    let mut mask = (0..width).fold(0, |acc, m| if better(best[m], best[acc]) { m } else { acc });
    let mut pairs = Vec::new();
    for i in (0..rows.len()).rev() {
        let j = choice[i][mask];
        if j != usize::MAX {
            let (t, e) = if transpose { (j, i) } else { (i, j) };
            pairs.push(MatchPair {
                truth: t,
                estimate: e,
                cost: cost[i][j],
                errors: pair_errors(&truth[t], &estimates[e]),
            });
            mask &= !(1 << j);
        }
    }
    debug_assert_eq!(mask, 0);
    pairs.sort_by_key(|p| p.truth);
    let unmatched_truth = (0..truth.len())
        .filter(|t| !pairs.iter().any(|p| p.truth == *t))
        .collect();
    let unmatched_estimates = (0..estimates.len())
        .filter(|e| !pairs.iter().any(|p| p.estimate == *e))
        .collect();
    Ok(MatchResult {
        pairs,
        unmatched_truth,
        unmatched_estimates,
    })
}

/// Harmonic mean of precision and recall; 1 when both sides are empty.
pub fn f1_score(m: &MatchResult) -> f64 {
    let (matches, est, truth) = (m.pairs.len(), m.num_estimates(), m.num_truth());
    if est == 0 && truth == 0 {
        return 1.0;
    }
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / est as f64;
    let r = matches as f64 / truth as f64;
    2.0 * p * r / (p + r)
}

/// Mean per-parameter error over matched pairs; `None` without pairs.
pub fn mae(m: &MatchResult) -> Option<[f64; 5]> {
    if m.pairs.is_empty() {
        return None;
    }
    let mut sum = [0.0; 5];
    for p in &m.pairs {
        for (s, e) in sum.iter_mut().zip(p.errors) {
            *s += e;
        }
    }
    let n = m.pairs.len() as f64;
    Some(sum.map(|s| s / n))
}

fn default_powers() -> Vec<f64> {
    (0..=20).map(|i| -60.0 + 2.0 * i as f64).collect()
}

/// Power sweep settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Transmit powers of the swept user, dBW.
    pub sweep_powers_dbw: Vec<f64>,
    /// Zero-based index of the swept user.
    pub sweep_user: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub match_threshold: f64,
    /// Worker threads; all available cores when unset.
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sweep_powers_dbw: default_powers(),
            sweep_user: 0,
            trials: 32,
            master_seed: 0,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            threads: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sweep_powers_dbw.is_empty() || self.sweep_powers_dbw.iter().any(|p| !p.is_finite())
        {
            return bad("sweep_powers_dbw must be a non-empty list of finite values".into());
        }
        if self.sweep_user >= users {
            return bad(format!("sweep_user {} out of range for {users} users", self.sweep_user));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.match_threshold > 0.0) {
            return bad("match_threshold must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Scenario seed of a trial. Every sweep point reuses the same trial
    /// seeds, so points differ only in the swept power.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.master_seed, trial as u64)
    }
}

/// Complete configuration of a run, read from and written to one flat TOML
/// document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    #[serde(flatten)]
    pub estimator: EstimatorConfig,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.estimator.validate(self.scenario.users)?;
        self.sweep.validate(self.scenario.users)
    }

    /// Parses a flat TOML document; missing keys take their defaults and
    /// unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let known: toml::Table = toml::from_str(&RunConfig::default().to_toml()?)?;
        const OPTIONAL: [&str; 3] = ["l_window", "user_schedule", "threads"];
        if let Some(key) = table
            .keys()
            .find(|k| !known.contains_key(*k) && !OPTIONAL.contains(&k.as_str()))
        {
            return Err(Error::InvalidConfig(format!("unknown configuration key `{key}`")));
        }
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Scenario of one sweep point and trial.
    pub fn trial_scenario(&self, power_dbw: f64, trial: usize) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        s.tx_powers_dbw[self.sweep.sweep_user] = power_dbw;
        s.seed = self.sweep.trial_seed(trial);
        s
    }
}

/// Outcome of one (point, trial) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    /// Per-user F1; empty when the trial failed.
    pub f1: Vec<f64>,
    /// Per-user MAE; `None` when the user had no matched pair.
    pub mae: Vec<Option<[f64; 5]>>,
    pub l_est: Vec<usize>,
    pub telemetry: Telemetry,
    pub error: Option<String>,
}

/// Runs one trial: sample, estimate, match every user.
pub fn run_trial(cfg: &RunConfig, point: usize, trial: usize) -> TrialOutcome {
    let power = cfg.sweep.sweep_powers_dbw[point];
    let scenario_cfg = cfg.trial_scenario(power, trial);
    let seed = scenario_cfg.seed;
    let outcome = (|| -> Result<TrialOutcome> {
        let scenario = sample_scenario(&scenario_cfg)?;
        let est = estimate_scenario(&scenario, &cfg.estimator)?;
        let mut f1 = Vec::new();
        let mut maes = Vec::new();
        for (k, truth) in scenario.channels.iter().enumerate() {
            let m = match_paths(truth, est.detected(k), cfg.sweep.match_threshold)?;
            f1.push(f1_score(&m));
            maes.push(mae(&m));
        }
        Ok(TrialOutcome {
            point,
            trial,
            seed,
            f1,
            mae: maes,
            l_est: est.l_est,
            telemetry: est.telemetry,
            error: None,
        })
    })();
    outcome.unwrap_or_else(|e| TrialOutcome {
        point,
        trial,
        seed,
        f1: Vec::new(),
        mae: Vec::new(),
        l_est: Vec::new(),
        telemetry: Telemetry::default(),
        error: Some(e.to_string()),
    })
}

/// Sample mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub count: usize,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some((var / n as f64).sqrt())
        } else {
            None
        };
        Stat {
            count: n,
            mean: Some(mean),
            stderr,
        }
    }
}

/// Aggregates of one user at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub power_dbw: f64,
    pub user: usize,
    pub trials: usize,
    pub failed: usize,
    pub f1: Stat,
    pub mae: [Stat; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: RunConfig,
    /// Every trial, ordered by (point, trial).
    pub trials: Vec<TrialOutcome>,
    /// One entry per (point, user), point-major.
    pub summary: Vec<PointSummary>,
    pub telemetry: Telemetry,
}

fn merge_telemetry(total: &mut Telemetry, t: &Telemetry) {
    total.user_visits += t.user_visits;
    total.paths_added += t.paths_added;
    total.path_updates += t.path_updates;
    total.rejected_updates += t.rejected_updates;
    total.fallbacks += t.fallbacks;
    total.failed_updates += t.failed_updates;
    total.monotonicity_violations += t.monotonicity_violations;
    total.max_inner_sweeps = total.max_inner_sweeps.max(t.max_inner_sweeps);
    total.inner_sweeps += t.inner_sweeps;
}

/// Aggregates trial outcomes into per-(point, user) summaries.
pub fn summarize(cfg: &RunConfig, trials: &[TrialOutcome]) -> Vec<PointSummary> {
    let users = cfg.scenario.users;
    let mut by_point: HashMap<usize, Vec<&TrialOutcome>> = HashMap::new();
    for t in trials {
        by_point.entry(t.point).or_default().push(t);
    }
    let mut out = Vec::new();
    for (point, &power) in cfg.sweep.sweep_powers_dbw.iter().enumerate() {
        let ts = by_point.remove(&point).unwrap_or_default();
        let ok: Vec<&&TrialOutcome> = ts.iter().filter(|t| t.error.is_none()).collect();
        for user in 0..users {
            let f1: Vec<f64> = ok.iter().map(|t| t.f1[user]).collect();
            let mae = std::array::from_fn(|p| {
                let v: Vec<f64> = ok.iter().filter_map(|t| t.mae[user].map(|m| m[p])).collect();
                Stat::of(&v)
            });
            out.push(PointSummary {
                power_dbw: power,
                user,
                trials: ts.len(),
                failed: ts.len() - ok.len(),
                f1: Stat::of(&f1),
                mae,
            });
        }
    }
    out
}

/// Runs every (point, trial) pair on a worker pool; results are merged in
/// (point, trial) order regardless of completion order.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.sweep.sweep_powers_dbw.len())
        .flat_map(|p| (0..cfg.sweep.trials).map(move |t| (p, t)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.sweep.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let mut trials: Vec<TrialOutcome> =
        pool.install(|| jobs.par_iter().map(|&(p, t)| run_trial(cfg, p, t)).collect());
    trials.sort_by_key(|t| (t.point, t.trial));

    let mut telemetry = Telemetry::default();
    for t in &trials {
        merge_telemetry(&mut telemetry, &t.telemetry);
    }
    Ok(SweepResult {
        summary: summarize(cfg, &trials),
        config: cfg.clone(),
        trials,
        telemetry,
    })
}

impl SweepResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Summaries of one user in sweep order.
    pub fn user_curve(&self, user: usize) -> Vec<&PointSummary> {
        self.summary.iter().filter(|s| s.user == user).collect()
    }
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with one row per (power, user). Angles in radians, gain error
/// relative; undefined statistics are empty fields.
pub fn summary_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "power_dbw".to_string(),
        "user".into(),
        "trials".into(),
        "failed".into(),
        "f1_mean".into(),
        "f1_stderr".into(),
    ];
    for p in MAE_PARAMS {
        let unit = if p == "gain" { "rel" } else { "rad" };
        header.push(format!("mae_{p}_{unit}"));
        header.push(format!("mae_{p}_stderr"));
        header.push(format!("mae_{p}_count"));
    }
    w.write_record(&header)?;
    for s in &result.summary {
        let mut row = vec![
            s.power_dbw.to_string(),
            s.user.to_string(),
            s.trials.to_string(),
            s.failed.to_string(),
            opt_field(s.f1.mean),
            opt_field(s.f1.stderr),
        ];
        for m in &s.mae {
            row.push(opt_field(m.mean));
            row.push(opt_field(m.stderr));
            row.push(m.count.to_string());
        }
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Whitespace-separated `x y yerr` lines; points without data are skipped.
pub fn plot_data(points: &[(f64, Stat)]) -> String {
    let mut out = String::from("# x y yerr\n");
    for (x, s) in points {
        if let Some(y) = s.mean {
            let _ = writeln!(out, "{x} {y} {}", s.stderr.unwrap_or(0.0));
        }
    }
    out
}

/// Writes `sweep.csv`, plot data, `manifest.toml` and `sweep_result.json`
/// into `dir`. Returns the written paths.
pub fn write_report(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    put("sweep.csv".into(), summary_csv(result)?)?;
    for user in 0..result.config.scenario.users {
        let curve = result.user_curve(user);
        put(
            format!("f1_user{user}.dat"),
            plot_data(&curve.iter().map(|s| (s.power_dbw, s.f1)).collect::<Vec<_>>()),
        )?;
        for (p, name) in MAE_PARAMS.iter().enumerate() {
            put(
                format!("mae_{name}_user{user}.dat"),
                plot_data(&curve.iter().map(|s| (s.power_dbw, s.mae[p])).collect::<Vec<_>>()),
            )?;
        }
    }
    let manifest = format!(
        "# {} {} sweep manifest; rerun with `pce sweep --config manifest.toml`\n{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        result.config.to_toml()?
    );
    put("manifest.toml".into(), manifest)?;
    let json = serde_json::to_string_pretty(result)?;
    put("sweep_result.json".into(), json)?;
    Ok(written)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
