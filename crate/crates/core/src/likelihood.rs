//! Scaled negative log-likelihood, closed-form path gain and the residual
//! cache that every optimizer step reads.
//!
//! The objective is `(1/N0)·Σ|y − μ|²`. Path contributions are cached so a
//! single path can be changed in `O(Nc·Ns·Nr)` without re-synthesizing the
//! others.

use num_complex::Complex64;

use crate::model::{self, Dims, PathParams, Phases, PilotTensor, ReceivedTensor};
use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Handle to a path registered in a [`ResidualState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathId(pub usize);

/// Gain-free response `α_ntu` of one path and its energy `Σ|α|²`.
#[derive(Clone, Debug)]
pub struct Regressor {
    pub alpha: Tensor3,
    pub energy: f64,
}

impl Regressor {
    /// Conjugated inner product `⟨α, r⟩ = Σ conj(α)·r`.
    pub fn project(&self, r: &Tensor3) -> Complex64 {
        self.alpha
            .as_slice()
            .iter()
            .zip(r.as_slice())
            .map(|(a, y)| a.conj() * y)
            .sum()
    }
}

/// Builds `α` for the geometry of `params` (its gain is ignored).
pub fn build_regressor(params: &PathParams, pilot: &Tensor3, nr: usize) -> Result<Regressor> {
    build_regressor_phases(&params.phases(), pilot, nr, 0)
}

pub(crate) fn build_regressor_phases(
    phases: &Phases,
    pilot: &Tensor3,
    nr: usize,
    user: usize,
) -> Result<Regressor> {
    let [nc, ns, _] = pilot.shape();
    let mut alpha = Tensor3::zeros([nc, ns, nr]);
    model::fill_response(&mut alpha, phases, pilot, Complex64::new(1.0, 0.0));
    let energy = alpha.energy();
    if !(energy > 0.0) {
        return Err(Error::DegenerateRegressor { user });
    }
    Ok(Regressor { alpha, energy })
}

#[derive(Clone, Debug)]
struct PathEntry {
    user: usize,
    params: PathParams,
    contribution: Tensor3,
    attached: bool,
}

/// Exact copy of the mutable parts touched by one path update.
#[derive(Clone, Debug)]
pub struct Snapshot {
    id: PathId,
    residual: Tensor3,
    entry: PathEntry,
    objective: f64,
}

/// Residual `y − Σ attached contributions` with its scaled objective and the
/// per-path contribution cache.
#[derive(Clone, Debug)]
pub struct ResidualState {
    dims: Dims,
    n0: f64,
    y: Tensor3,
    pilots: PilotTensor,
    residual: Tensor3,
    paths: Vec<Option<PathEntry>>,
    objective: f64,
    updates_since_refresh: usize,
}

/// Path updates between full residual recomputes.
pub const REFRESH_INTERVAL: usize = 50;

impl ResidualState {
    pub fn new(received: &ReceivedTensor, pilots: &PilotTensor, dims: Dims, n0: f64) -> Result<Self> {
        received
            .0
            .expect_shape("received tensor", dims.received_shape())?;
        pilots.check_dims(&dims, pilots.num_users())?;
        if !(n0 > 0.0) {
            return Err(Error::InvalidConfig(format!("n0 must be positive, got {n0}")));
        }
        let y = received.0.clone();
        let objective = y.energy() / n0;
        Ok(ResidualState {
            dims,
            n0,
            residual: y.clone(),
            y,
            pilots: pilots.clone(),
            paths: Vec::new(),
            objective,
            updates_since_refresh: 0,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n0(&self) -> f64 {
        self.n0
    }

    pub fn num_users(&self) -> usize {
        self.pilots.num_users()
    }

    pub fn received(&self) -> &Tensor3 {
        &self.y
    }

    pub fn pilots(&self) -> &PilotTensor {
        &self.pilots
    }

    pub fn residual(&self) -> &Tensor3 {
        &self.residual
    }

    /// `(1/N0)·Σ|residual|²`.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    fn entry(&self, id: PathId) -> Result<&PathEntry> {
        self.paths
            .get(id.0)
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownPath(id.0))
    }

    fn entry_mut(&mut self, id: PathId) -> Result<&mut PathEntry> {
        self.paths
            .get_mut(id.0)
            .and_then(Option::as_mut)
            .ok_or(Error::UnknownPath(id.0))
    }

    pub fn params(&self, id: PathId) -> Result<PathParams> {
        Ok(self.entry(id)?.params)
    }

    pub fn user_of(&self, id: PathId) -> Result<usize> {
        Ok(self.entry(id)?.user)
    }

    pub fn is_attached(&self, id: PathId) -> Result<bool> {
        Ok(self.entry(id)?.attached)
    }

    pub fn contribution(&self, id: PathId) -> Result<&Tensor3> {
        Ok(&self.entry(id)?.contribution)
    }

    /// Registered paths in insertion order.
    pub fn path_ids(&self) -> Vec<PathId> {
        self.paths
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|_| PathId(i)))
            .collect()
    }

    pub fn user_paths(&self, user: usize) -> Vec<PathId> {
        self.paths
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                Some(e) if e.user == user => Some(PathId(i)),
                _ => None,
            })
            .collect()
    }

    fn contribution_for(&self, user: usize, params: &PathParams) -> Tensor3 {
        model::path_contribution(params, self.pilots.user(user), self.dims.nr)
    }

    fn recompute_objective(&mut self) {
        self.objective = self.residual.energy() / self.n0;
    }

    fn count_update(&mut self) {
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_INTERVAL {
            self.refresh();
        }
    }

    /// Registers a path of `user` and subtracts its contribution.
    pub fn add_path(&mut self, user: usize, params: PathParams) -> Result<PathId> {
        if user >= self.num_users() {
            return Err(Error::InvalidConfig(format!("user {user} does not exist")));
        }
        let contribution = self.contribution_for(user, &params);
        self.residual.sub_assign(&contribution);
        self.recompute_objective();
        self.paths.push(Some(PathEntry {
            user,
            params,
            contribution,
            attached: true,
        }));
        Ok(PathId(self.paths.len() - 1))
    }

    /// Unregisters a path, adding its contribution back if attached.
    pub fn remove_path(&mut self, id: PathId) -> Result<PathParams> {
        self.entry(id)?;
        let entry = self.paths[id.0].take().expect("checked above");
        if entry.attached {
            self.residual.add_assign(&entry.contribution);
            self.recompute_objective();
        }
        Ok(entry.params)
    }

    /// Replaces a path's parameters, updating residual and objective
    /// incrementally.
    pub fn set_path(&mut self, id: PathId, params: PathParams) -> Result<()> {
        let user = self.entry(id)?.user;
        let contribution = self.contribution_for(user, &params);
        let entry = self.paths[id.0].as_mut().expect("checked above");
        if entry.attached {
            self.residual.add_assign(&entry.contribution);
            self.residual.sub_assign(&contribution);
        }
        entry.params = params;
        entry.contribution = contribution;
        self.recompute_objective();
        self.count_update();
        Ok(())
    }

    /// Adds the path's contribution back so the residual excludes it.
    pub fn detach(&mut self, id: PathId) -> Result<()> {
        let entry = self.entry_mut(id)?;
        if !entry.attached {
            return Ok(());
        }
        entry.attached = false;
        let c = std::mem::replace(&mut entry.contribution, Tensor3::zeros([0, 0, 0]));
        self.residual.add_assign(&c);
        self.entry_mut(id)?.contribution = c;
        self.recompute_objective();
        Ok(())
    }

    /// Subtracts the path's (current) contribution from the residual.
    pub fn attach(&mut self, id: PathId) -> Result<()> {
        let entry = self.entry_mut(id)?;
        if entry.attached {
            return Ok(());
        }
        entry.attached = true;
        let c = std::mem::replace(&mut entry.contribution, Tensor3::zeros([0, 0, 0]));
        self.residual.sub_assign(&c);
        self.entry_mut(id)?.contribution = c;
        self.recompute_objective();
        Ok(())
    }

    pub fn snapshot(&self, id: PathId) -> Result<Snapshot> {
        Ok(Snapshot {
            id,
            residual: self.residual.clone(),
            entry: self.entry(id)?.clone(),
            objective: self.objective,
        })
    }

    /// Restores residual, objective and the path bit-exactly.
    pub fn restore(&mut self, snap: Snapshot) {
        self.residual = snap.residual;
        self.objective = snap.objective;
        self.paths[snap.id.0] = Some(snap.entry);
    }

    /// Recomputes the residual from `y` and every attached contribution.
    pub fn refresh(&mut self) {
        let mut r = self.y.clone();
        for e in self.paths.iter().flatten() {
            if e.attached {
                r.sub_assign(&e.contribution);
            }
        }
        self.residual = r;
        self.updates_since_refresh = 0;
        self.recompute_objective();
    }

    /// Objective with every attached path for which `keep` is false added
    /// back, i.e. with those paths masked out of the model.
    pub fn objective_masked(&self, mut keep: impl FnMut(PathId) -> bool) -> f64 {
        let masked: Vec<&Tensor3> = self
            .paths
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                Some(e) if e.attached && !keep(PathId(i)) => Some(&e.contribution),
                _ => None,
            })
            .collect();
        if masked.is_empty() {
            return self.objective;
        }
        let mut total = 0.0;
        for (i, r) in self.residual.as_slice().iter().enumerate() {
            let mut z = *r;
            for c in &masked {
                z += c.as_slice()[i];
            }
            total += z.norm_sqr();
        }
        total / self.n0
    }

    fn require_detached(&self, id: PathId) -> Result<&PathEntry> {
        let e = self.entry(id)?;
        if e.attached {
            return Err(Error::PathAttached(id.0));
        }
        Ok(e)
    }

    pub(crate) fn regressor_for(&self, user: usize, phases: &Phases) -> Result<Regressor> {
        build_regressor_phases(phases, self.pilots.user(user), self.dims.nr, user)
    }

    /// Least-squares gain `⟨α, r⟩ / Σ|α|²` for the path's current geometry.
    /// The path must be detached.
    pub fn solve_gain(&self, id: PathId) -> Result<Complex64> {
        let e = self.require_detached(id)?;
        let reg = self.regressor_for(e.user, &e.params.phases())?;
        Ok(reg.project(&self.residual) / reg.energy)
    }

    /// Objective with the detached path placed at `candidate`'s geometry
    /// and its gain set to the least-squares optimum.
    pub fn concentrated_objective(&self, id: PathId, candidate: &PathParams) -> Result<f64> {
        let e = self.require_detached(id)?;
        let reg = self.regressor_for(e.user, &candidate.phases())?;
        let p = reg.project(&self.residual);
        let value = (self.residual.energy() - p.norm_sqr() / reg.energy) / self.n0;
        Ok(value.max(0.0))
    }
}
