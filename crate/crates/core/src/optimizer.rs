//! Path-by-path, user-by-user maximum-likelihood estimation.
//!
//! Every coordinate step is an exact line minimization (roots of the
//! derivative series, best objective among them) pushed further by a
//! momentum term and a successive over-relaxation factor. A step that the
//! extrapolation makes worse than the plain exact step falls back to the
//! exact step, and a whole path update that fails to lower the objective is
//! rolled back, so the objective never increases across an update.
//!
//! Users are visited in a cyclic schedule. A visit clears the user's paths
//! and then adds paths one at a time, re-optimizing after each addition,
//! until the per-user AIC stops improving. The final path count per user is
//! the minimizer of the joint AIC over all users.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamspace::BeamspaceScanner;
use crate::derivatives::{CoordinateSlice, ISOTROPY_TOL};
use crate::likelihood::{PathId, ResidualState};
use crate::model::{
    self, phase_diff, wrap_phase, Coordinate, Dims, PathParams, Phases, PilotTensor,
    ReceivedTensor, Scenario,
};
use crate::rootfind::{best_on_slice, unit_circle_roots, DEFAULT_RADIAL_TOL};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Over-relaxation factor.
    pub rho: f64,
    /// Initial momentum coefficient of a new path.
    pub eta0: f64,
    /// Momentum multiplier applied after every update of a path.
    pub eta_decay: f64,
    /// Inner sweeps per added path.
    pub it_max: usize,
    /// Consecutive AIC failures before a visit stops adding paths.
    pub m_aic_max: usize,
    /// AIC penalty per path.
    pub gamma_aic: f64,
    /// Maximum stored paths per user.
    pub l_max: usize,
    /// Only the newest `l_window` paths are re-optimized, when set.
    pub l_window: Option<usize>,
    /// Full passes over the users when no explicit schedule is given.
    pub cycles: usize,
    /// Explicit zero-based user visit order.
    pub user_schedule: Option<Vec<usize>>,
    /// A path stops when its largest relative parameter change is below this.
    pub var_tol: f64,
    /// A path stops when its objective decrease is below this times `γ_obj`.
    pub obj_tol_factor: f64,
    /// Eigenvalue distance from the unit circle accepted as a real root.
    pub radial_tol: f64,
    /// Stop once the objective is within this many standard deviations of
    /// the noise-only mean `Nc·Ns·Nr`. Non-positive disables the check.
    pub optimality_sigma: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            rho: 1.05,
            eta0: 0.1,
            eta_decay: 0.5,
            it_max: 30,
            m_aic_max: 2,
            gamma_aic: 12.0,
            l_max: 6,
            l_window: None,
            cycles: 3,
            user_schedule: None,
            var_tol: 1e-8,
            obj_tol_factor: 1e-10,
            radial_tol: DEFAULT_RADIAL_TOL,
            optimality_sigma: 3.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return bad(format!("rho must lie in (0, 2), got {}", self.rho));
        }
        if !(self.eta0 >= 0.0) || !(self.eta_decay >= 0.0) {
            return bad("momentum coefficients must be non-negative".into());
        }
        if self.it_max == 0 || self.l_max == 0 {
            return bad("it_max and l_max must be at least 1".into());
        }
        if self.l_window == Some(0) {
            return bad("l_window must be at least 1".into());
        }
        if !(self.radial_tol > 0.0) {
            return bad("radial_tol must be positive".into());
        }
        if let Some(s) = &self.user_schedule {
            if let Some(k) = s.iter().find(|&&k| k >= users) {
                return bad(format!("schedule names user {k} but there are {users}"));
            }
        }
        Ok(())
    }

    /// Visit order, zero-based.
    pub fn schedule(&self, users: usize) -> Vec<usize> {
        match &self.user_schedule {
            Some(s) => s.clone(),
            None => (0..self.cycles).flat_map(|_| 0..users).collect(),
        }
    }
}

/// `ξ_opt + η·(ξ_m − ξ_prev)` with the difference taken on the circle.
pub fn momentum_candidate(xi_opt: f64, xi_m: f64, xi_prev: f64, eta: f64) -> f64 {
    xi_opt + eta * phase_diff(xi_m, xi_prev)
}

/// `Wrap((1 − ρ)·ξ_m + ρ·ξ̂)` on (−π, π], with `ξ̂ − ξ_m` measured the short
/// way round.
pub fn relaxed_update(xi_m: f64, candidate: f64, rho: f64) -> f64 {
    wrap_phase(xi_m + rho * phase_diff(candidate, xi_m))
}

/// Optimizer bookkeeping for one estimated path.
#[derive(Clone, Debug)]
pub struct PathSlot {
    pub id: PathId,
    /// Coordinates before the latest update, for the momentum term.
    pub prev: Phases,
    pub eta: f64,
    pub active: bool,
    /// Insertion order within the current visit.
    pub age: usize,
    pub updates: usize,
}

impl PathSlot {
    pub fn new(id: PathId, phases: Phases, eta0: f64, age: usize) -> Self {
        PathSlot {
            id,
            prev: phases,
            eta: eta0,
            active: true,
            age,
            updates: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub objective_before: f64,
    pub objective_after: f64,
    /// Largest relative parameter change of the path.
    pub rel_change: f64,
    /// False when the update was rolled back.
    pub accepted: bool,
    /// 1 when the extrapolated update was replaced by plain exact steps.
    pub fallbacks: usize,
    pub error: Option<String>,
}

impl UpdateReport {
    pub fn improvement(&self) -> f64 {
        self.objective_before - self.objective_after
    }
}

fn solve_coordinate(
    state: &ResidualState,
    user: usize,
    phases: &Phases,
    coordinate: Coordinate,
    radial_tol: f64,
) -> Result<(CoordinateSlice, f64, f64)> {
    let slice = CoordinateSlice::build(state, user, phases, coordinate)?;
    let roots = match unit_circle_roots(&slice.series(), radial_tol) {
        Ok(r) => r.angles,
        Err(Error::FlatDerivative) => Vec::new(),
        Err(e) => return Err(e),
    };
    let (x, f) = best_on_slice(&slice, &roots, phases.get(coordinate));
    Ok((slice, x, f))
}

/// One exact coordinate step (no momentum, no relaxation) on a detached
/// path's coordinate. Returns the new coordinate value.
pub fn exact_step(
    state: &ResidualState,
    id: PathId,
    coordinate: Coordinate,
    radial_tol: f64,
) -> Result<f64> {
    if state.is_attached(id)? {
        return Err(Error::PathAttached(id.0));
    }
    let phases = state.params(id)?.phases();
    Ok(solve_coordinate(state, state.user_of(id)?, &phases, coordinate, radial_tol)?.1)
}

fn relative_change(old: &PathParams, new: &PathParams) -> f64 {
    let po = old.phases();
    let pn = new.phases();
    let angular = Coordinate::ALL
        .iter()
        .map(|&c| phase_diff(pn.get(c), po.get(c)).abs() / po.get(c).abs().max(1.0))
        .fold(0.0, f64::max);
    let gain = (new.b - old.b).norm() / old.b.norm().max(f64::MIN_POSITIVE);
    angular.max(gain)
}

/// One pass over the four coordinates of a detached path followed by the
/// gain solve; with `extrapolate` the exact steps are pushed by momentum and
/// over-relaxation. Leaves the path attached.
fn sweep_coordinates(
    state: &mut ResidualState,
    slot: &PathSlot,
    start: &Phases,
    cfg: &EstimatorConfig,
    extrapolate: bool,
) -> Result<PathParams> {
    let user = state.user_of(slot.id)?;
    state.detach(slot.id)?;
    let mut cur = *start;
    for c in Coordinate::ALL {
        let (_, x_opt, _) = solve_coordinate(state, user, &cur, c, cfg.radial_tol)?;
        let x_new = if extrapolate {
            let x_m = cur.get(c);
            let candidate = momentum_candidate(x_opt, x_m, slot.prev.get(c), slot.eta);
            relaxed_update(x_m, candidate, cfg.rho)
        } else {
            x_opt
        };
        cur.set(c, x_new);
    }
    let reg = state.regressor_for(user, &cur)?;
    let b = reg.project(state.residual()) / reg.energy;
    let new = PathParams::from_phases(b, &cur);
    state.set_path(slot.id, new)?;
    state.attach(slot.id)?;
    Ok(new)
}

/// Updates the four coordinates of one path in the order ω₁, ω₂, ψ, χ and
/// then its gain. An extrapolated update that raises the objective is redone
/// with plain exact steps; should that still not help, the path is restored.
pub fn update_path(
    state: &mut ResidualState,
    slot: &mut PathSlot,
    cfg: &EstimatorConfig,
) -> Result<UpdateReport> {
    let before = state.objective();
    let snapshot = state.snapshot(slot.id)?;
    let old = state.params(slot.id)?;
    let start = old.phases();
    slot.updates += 1;

    let mut fallbacks = 0;
    let mut attempt = sweep_coordinates(state, slot, &start, cfg, true);
    if !matches!(attempt, Ok(_) if state.objective() <= before) {
        state.restore(snapshot.clone());
        fallbacks = 1;
        attempt = sweep_coordinates(state, slot, &start, cfg, false);
    }

    match attempt {
        Ok(new) => {
            let after = state.objective();
            slot.prev = start;
            slot.eta *= cfg.eta_decay;
            if after <= before {
                Ok(UpdateReport {
                    objective_before: before,
                    objective_after: after,
                    rel_change: relative_change(&old, &new),
                    accepted: true,
                    fallbacks,
                    error: None,
                })
            } else {
                state.restore(snapshot);
                Ok(UpdateReport {
                    objective_before: before,
                    objective_after: before,
                    rel_change: 0.0,
                    accepted: false,
                    fallbacks,
                    error: None,
                })
            }
        }
        Err(e) => {
            state.restore(snapshot);
            slot.active = false;
            Ok(UpdateReport {
                objective_before: before,
                objective_after: before,
                rel_change: 0.0,
                accepted: false,
                fallbacks,
                error: Some(e.to_string()),
            })
        }
    }
}

/// Paths of `user` ordered by descending gain magnitude.
pub fn sorted_user_paths(state: &ResidualState, user: usize) -> Vec<PathId> {
    let mut ids = state.user_paths(user);
    ids.sort_by(|a, b| {
        let ga = state.params(*a).map(|p| p.b.norm()).unwrap_or(0.0);
        let gb = state.params(*b).map(|p| p.b.norm()).unwrap_or(0.0);
        gb.total_cmp(&ga).then(a.cmp(b))
    });
    ids
}

/// Generalized AIC of `user` with only its `len` strongest paths in the
/// model; other users stay as currently estimated. Gains are not re-fit.
pub fn aic_user(state: &ResidualState, user: usize, len: usize, gamma_aic: f64) -> Result<f64> {
    let ids = sorted_user_paths(state, user);
    if len > ids.len() {
        return Err(Error::ModelOrderTooLarge {
            user,
            requested: len,
            stored: ids.len(),
        });
    }
    let dropped = &ids[len..];
    let f = state.objective_masked(|id| !dropped.contains(&id));
    Ok(f + gamma_aic * len as f64)
}

/// Argmin of the joint AIC over `L_k ∈ 0..=stored_k`; ties go to the smaller
/// total, then lexicographically smaller tuple.
pub fn select_model_order(state: &ResidualState, gamma_aic: f64) -> Vec<usize> {
    let users = state.num_users();
    let sorted: Vec<Vec<PathId>> = (0..users).map(|k| sorted_user_paths(state, k)).collect();
    let mut tuple = vec![0usize; users];
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    loop {
        let dropped: Vec<PathId> = sorted
            .iter()
            .zip(&tuple)
            .flat_map(|(ids, &l)| ids[l..].iter().copied())
            .collect();
        let total: usize = tuple.iter().sum();
        let aic = state.objective_masked(|id| !dropped.contains(&id)) + gamma_aic * total as f64;
        let better = match &best {
            None => true,
            Some((b_aic, b_total, b_tuple)) => {
                aic < *b_aic
                    || (aic == *b_aic
                        && (total < *b_total || (total == *b_total && tuple < *b_tuple)))
            }
        };
        if better {
            best = Some((aic, total, tuple.clone()));
        }
        // Odometer over the tuple.
        let mut k = 0;
        loop {
            if k == users {
                return best.map(|b| b.2).unwrap_or_default();
            }
            if tuple[k] < sorted[k].len() {
                tuple[k] += 1;
                break;
            }
            tuple[k] = 0;
            k += 1;
        }
    }
}

/// Counters collected over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub user_visits: usize,
    pub paths_added: usize,
    pub path_updates: usize,
    pub rejected_updates: usize,
    pub fallbacks: usize,
    pub failed_updates: usize,
    /// Accepted updates after which the objective was larger than before.
    pub monotonicity_violations: usize,
    /// Largest number of inner sweeps used after any single path addition.
    pub max_inner_sweeps: usize,
    pub inner_sweeps: usize,
    pub stopped_at_optimality: bool,
}

/// Outcome of one user visit.
#[derive(Clone, Debug, PartialEq)]
pub struct UserReport {
    pub user: usize,
    pub paths: Vec<PathId>,
    /// Number of paths the running AIC accepted during the visit.
    pub aic_len: usize,
    pub aic_trace: Vec<f64>,
}

/// Estimation state shared by the per-user visits.
pub struct Session {
    pub state: ResidualState,
    pub cfg: EstimatorConfig,
    scanner: BeamspaceScanner,
    obj_tol: f64,
    pub telemetry: Telemetry,
}

impl Session {
    pub fn new(state: ResidualState, cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate(state.num_users())?;
        let dims = state.dims();
        let n = dims.samples() as f64;
        let gamma_obj = state.received().energy() / state.n0() - n;
        let obj_tol = cfg.obj_tol_factor * gamma_obj.abs().max(1.0);
        Ok(Session {
            scanner: BeamspaceScanner::new(dims),
            state,
            cfg,
            obj_tol,
            telemetry: Telemetry::default(),
        })
    }

    /// Objective decrease below which a path is considered converged.
    pub fn obj_tol(&self) -> f64 {
        self.obj_tol
    }

    /// Objective level treated as the noise floor.
    pub fn optimality_threshold(&self) -> Option<f64> {
        if self.cfg.optimality_sigma <= 0.0 {
            return None;
        }
        let n = self.state.dims().samples() as f64;
        Some(n + self.cfg.optimality_sigma * n.sqrt())
    }

    /// Seeds a new path of `user` from the residual and fits its gain.
    pub fn add_initialized_path(&mut self, user: usize) -> Result<PathId> {
        let phases = self
            .scanner
            .scan(self.state.residual(), self.state.pilots().user(user));
        let reg = self.state.regressor_for(user, &phases)?;
        let b = reg.project(self.state.residual()) / reg.energy;
        self.telemetry.paths_added += 1;
        self.state.add_path(user, PathParams::from_phases(b, &phases))
    }

    fn run_update(&mut self, slot: &mut PathSlot) -> Result<UpdateReport> {
        let report = update_path(&mut self.state, slot, &self.cfg)?;
        let t = &mut self.telemetry;
        t.path_updates += 1;
        t.fallbacks += report.fallbacks;
        if report.error.is_some() {
            t.failed_updates += 1;
        } else if !report.accepted {
            t.rejected_updates += 1;
        }
        if report.objective_after > report.objective_before {
            t.monotonicity_violations += 1;
        }
        if !report.accepted
            || report.improvement() < self.obj_tol
            || report.rel_change < self.cfg.var_tol
        {
            slot.active = false;
        }
        Ok(report)
    }

    /// Inner loop after a path addition: newest path first, then the rest
    /// from oldest to newest, repeated until every path is halted or the
    /// sweep budget is spent. Returns the sweeps used.
    pub fn inner_loop(&mut self, slots: &mut [PathSlot]) -> Result<usize> {
        let window = self.cfg.l_window.unwrap_or(usize::MAX);
        let start = slots.len().saturating_sub(window);
        let live = &mut slots[start..];
        for s in live.iter_mut() {
            s.active = true;
        }
        let Some(newest) = live.len().checked_sub(1) else {
            return Ok(0);
        };
        let order: Vec<usize> = std::iter::once(newest).chain(0..newest).collect();
        let mut sweeps = 0;
        for _ in 0..self.cfg.it_max {
            sweeps += 1;
            for &i in &order {
                if live[i].active {
                    self.run_update(&mut live[i])?;
                }
            }
            if live.iter().all(|s| !s.active) {
                break;
            }
        }
        self.telemetry.inner_sweeps += sweeps;
        self.telemetry.max_inner_sweeps = self.telemetry.max_inner_sweeps.max(sweeps);
        Ok(sweeps)
    }

    /// Clears the user's paths and re-estimates them from scratch.
    pub fn estimate_user(&mut self, user: usize) -> Result<UserReport> {
        for id in self.state.user_paths(user) {
            self.state.remove_path(id)?;
        }
        self.state.refresh();
        self.telemetry.user_visits += 1;

        let mut slots: Vec<PathSlot> = Vec::new();
        let mut best_aic = f64::INFINITY;
        let mut aic_len = 0;
        let mut failures = 0;
        let mut aic_trace = Vec::new();
        for len in 1..=self.cfg.l_max {
            let id = self.add_initialized_path(user)?;
            let phases = self.state.params(id)?.phases();
            slots.push(PathSlot::new(id, phases, self.cfg.eta0, len - 1));
            self.inner_loop(&mut slots)?;
            self.state.refresh();

            let aic = aic_user(&self.state, user, len, self.cfg.gamma_aic)?;
            aic_trace.push(aic);
            if len == 1 || aic < best_aic {
                best_aic = aic;
                aic_len = len;
                failures = 0;
            } else {
                failures += 1;
                if failures >= self.cfg.m_aic_max {
                    break;
                }
            }
        }
        Ok(UserReport {
            user,
            paths: slots.iter().map(|s| s.id).collect(),
            aic_len,
            aic_trace,
        })
    }

    /// Runs the visit schedule and selects the model order.
    pub fn run(mut self) -> Result<EstimateResult> {
        let users = self.state.num_users();
        let mut visited = vec![false; users];
        let threshold = self.optimality_threshold();
        for k in self.cfg.schedule(users) {
            self.estimate_user(k)?;
            visited[k] = true;
            if let Some(th) = threshold {
                if visited.iter().all(|v| *v) && self.state.objective() <= th {
                    self.telemetry.stopped_at_optimality = true;
                    break;
                }
            }
        }
        self.state.refresh();
        let l_est = select_model_order(&self.state, self.cfg.gamma_aic);
        let paths = (0..users)
            .map(|k| {
                sorted_user_paths(&self.state, k)
                    .into_iter()
                    .map(|id| self.state.params(id).expect("registered path"))
                    .collect()
            })
            .collect();
        Ok(EstimateResult {
            paths,
            l_est,
            objective: self.state.objective(),
            telemetry: self.telemetry,
        })
    }
}

/// Estimates every user's paths from `received` and known `pilots`.
pub fn estimate(
    received: &ReceivedTensor,
    pilots: &PilotTensor,
    dims: Dims,
    n0: f64,
    cfg: &EstimatorConfig,
) -> Result<EstimateResult> {
    let grid = model::theta_grid(64);
    for (user, x) in pilots.users.iter().enumerate() {
        let deviation = model::isotropy_deviation(x, &grid)?;
        if deviation > ISOTROPY_TOL {
            return Err(Error::NonIsotropicPilots { user, deviation });
        }
    }
    let state = ResidualState::new(received, pilots, dims, n0)?;
    Session::new(state, cfg.clone())?.run()
}

pub fn estimate_scenario(scenario: &Scenario, cfg: &EstimatorConfig) -> Result<EstimateResult> {
    estimate(
        &scenario.received,
        &scenario.pilots,
        scenario.config.dims(),
        scenario.config.n0,
        cfg,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateResult {
    /// Per-user paths, strongest first.
    pub paths: Vec<Vec<PathParams>>,
    /// Selected path count per user.
    pub l_est: Vec<usize>,
    pub objective: f64,
    pub telemetry: Telemetry,
}

impl EstimateResult {
    /// The `l_est[k]` strongest paths of user `k`.
    pub fn detected(&self, user: usize) -> &[PathParams] {
        &self.paths[user][..self.l_est[user]]
    }

    pub fn to_file(&self) -> ResultFile {
        ResultFile {
            objective: self.objective,
            l_est: self.l_est.clone(),
            users: self
                .paths
                .iter()
                .enumerate()
                .map(|(k, ps)| UserTable {
                    user: k,
                    detected: self.l_est[k],
                    paths: ps.iter().map(PathRow::from).collect(),
                })
                .collect(),
            telemetry: self.telemetry.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ResultFile = serde_json::from_str(&text)?;
        Ok(file.into())
    }
}

/// One row of the stored path table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub gain_abs: f64,
    pub gain_arg: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub phi: f64,
    pub theta: f64,
}

impl From<&PathParams> for PathRow {
    fn from(p: &PathParams) -> Self {
        PathRow {
            gain_abs: p.b.norm(),
            gain_arg: p.b.arg(),
            omega1: p.omega1,
            omega2: p.omega2,
            phi: p.phi,
            theta: p.theta,
        }
    }
}

impl From<&PathRow> for PathParams {
    fn from(r: &PathRow) -> Self {
        PathParams::new(
            Complex64::from_polar(r.gain_abs, r.gain_arg),
            r.omega1,
            r.omega2,
            r.phi,
            r.theta,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTable {
    pub user: usize,
    pub detected: usize,
    pub paths: Vec<PathRow>,
}

/// Structured-text form of an [`EstimateResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub objective: f64,
    pub l_est: Vec<usize>,
    pub users: Vec<UserTable>,
    pub telemetry: Telemetry,
}

impl From<ResultFile> for EstimateResult {
    fn from(f: ResultFile) -> Self {
        EstimateResult {
            paths: f
                .users
                .iter()
                .map(|u| u.paths.iter().map(PathParams::from).collect())
                .collect(),
            l_est: f.l_est,
            objective: f.objective,
            telemetry: f.telemetry,
        }
    }
}
