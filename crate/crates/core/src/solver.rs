//! Time stepping for the truncated system: explicit f^ε per cell followed by
//! backward-Euler diffusion on each species' own mesh (zero-flux faces,
//! harmonic-mean face coefficients).
//!
//! Species living on different habitats are coupled only through the
//! reaction, which at a cell center reads every species whose habitat
//! contains that point from the cell of its own mesh containing it. When the
//! meshes are aligned (equal cell widths, box offsets multiples of the width)
//! overlapping cells coincide and the weighted mass is conserved to round-off.

use rayon::prelude::*;
use thiserror::Error;

use crate::energy::{ledger_update, DiagnosticsLedger, EnergyConfig, EnergyError, LedgerContext, MassWitness};
use crate::geometry::{build_mesh, GeometryError, MeshedDomain};
use crate::model::{lipschitz_bound, CompiledReaction, ModelError, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("non-finite value in species {species}, cell {cell} at t = {t}")]
    NonFinite { species: usize, cell: usize, t: f64 },
    #[error("diffusion solve stalled after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("state does not match the model meshes: {0}")]
    Shape(String),
    #[error("epsilon list must be strictly decreasing, positive, with at least two entries")]
    EpsilonList,
}

/// Cell averages for every species on its home mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub fields: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub cells_per_axis: Vec<usize>,
    pub epsilon: f64,
    pub linear_tol: f64,
    pub record_every: usize,
    pub nonneg_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            cells_per_axis: vec![32, 32],
            epsilon: crate::model::DEFAULT_EPSILON,
            linear_tol: 1e-12,
            record_every: 100,
            nonneg_floor: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(SolverError::Config(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if !(self.linear_tol > 0.0 && self.linear_tol <= 1e-4) {
            return Err(SolverError::Config(format!("linear_tol must lie in (0, 1e-4], got {}", self.linear_tol)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SolverError::Config(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.record_every == 0 {
            return Err(SolverError::Config("record_every must be at least 1".into()));
        }
        if self.cells_per_axis.contains(&0) {
            return Err(SolverError::Config("cell counts must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`; the last one may be shorter.
    pub fn steps(&self) -> usize {
        if self.t_end == 0.0 {
            0
        } else {
            (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize
        }
    }

    fn time_of(&self, step: usize) -> f64 {
        (step as f64 * self.dt).min(self.t_end)
    }
}

/// Implicit FV operator for one species: `coef[axis][cell]` is the
/// transmissibility d_face / h² of the face between `cell` and its + neighbor
/// along `axis` (zero on the boundary, which is the zero-flux condition).
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    dims: Vec<usize>,
    coef: Vec<Vec<f64>>,
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl DiffusionOperator {
    pub fn new(mesh: &MeshedDomain, diffusion: &[f64]) -> Self {
        let dims = mesh.cells_per_axis().to_vec();
        let n = mesh.len();
        let mut coef = Vec::with_capacity(dims.len());
        let mut stride = 1;
        for (axis, &len) in dims.iter().enumerate() {
            let h2 = mesh.h()[axis] * mesh.h()[axis];
            let mut c = vec![0.0; n];
            for (cell, slot) in c.iter_mut().enumerate() {
                let pos = (cell / stride) % len;
                if pos + 1 < len {
                    *slot = harmonic_mean(diffusion[cell], diffusion[cell + stride]) / h2;
                }
            }
            coef.push(c);
            stride *= len;
        }
        Self { dims, coef }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// out = L u, each face flux added to one side and subtracted from the
    /// other.
    pub fn apply_laplacian(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut stride = 1;
        for (axis, coef) in self.coef.iter().enumerate() {
            for cell in 0..u.len() {
                let t = coef[cell];
                if t != 0.0 {
                    let flux = t * (u[cell + stride] - u[cell]);
                    out[cell] += flux;
                    out[cell + stride] -= flux;
                }
            }
            stride *= self.dims[axis];
        }
    }

    fn diagonal(&self, dt: f64) -> Vec<f64> {
        let n = self.len();
        let mut diag = vec![1.0; n];
        let mut stride = 1;
        for (axis, coef) in self.coef.iter().enumerate() {
            for cell in 0..n {
                let t = coef[cell];
                if t != 0.0 {
                    diag[cell] += dt * t;
                    diag[cell + stride] += dt * t;
                }
            }
            stride *= self.dims[axis];
        }
        diag
    }

    /// Backward-Euler step `(I - dt L) u_new = u_old`, solved for the
    /// increment so that fixed points of L are reproduced exactly.
    pub fn step(&self, u_old: &[f64], dt: f64, linear_tol: f64) -> Result<Vec<f64>, SolverError> {
        let n = u_old.len();
        let mut rhs = vec![0.0; n];
        self.apply_laplacian(u_old, &mut rhs);
        rhs.iter_mut().for_each(|v| *v *= dt);
        let delta = if rhs.iter().all(|&v| v == 0.0) {
            vec![0.0; n]
        } else if self.dims.len() == 1 {
            self.solve_tridiagonal(&rhs, dt)
        } else {
            self.solve_pcg(&rhs, dt, u_old, linear_tol)?
        };
        Ok(u_old.iter().zip(&delta).map(|(u, d)| u + d).collect())
    }

    fn solve_tridiagonal(&self, rhs: &[f64], dt: f64) -> Vec<f64> {
        let n = rhs.len();
        let coef = &self.coef[0];
        let diag = self.diagonal(dt);
        // sub[i] couples i to i-1, sup[i] couples i to i+1.
        let mut c_prime = vec![0.0; n];
        let mut d_prime = vec![0.0; n];
        let sup = |i: usize| -dt * coef[i];
        let sub = |i: usize| -dt * coef[i - 1];
        c_prime[0] = if n > 1 { sup(0) / diag[0] } else { 0.0 };
        d_prime[0] = rhs[0] / diag[0];
        for i in 1..n {
            let denom = diag[i] - sub(i) * c_prime[i - 1];
            if i + 1 < n {
                c_prime[i] = sup(i) / denom;
            }
            d_prime[i] = (rhs[i] - sub(i) * d_prime[i - 1]) / denom;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d_prime[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d_prime[i] - c_prime[i] * x[i + 1];
        }
        x
    }

    fn apply_system(&self, v: &[f64], dt: f64, scratch: &mut [f64], out: &mut [f64]) {
        self.apply_laplacian(v, scratch);
        for ((o, &vi), &lv) in out.iter_mut().zip(v).zip(scratch.iter()) {
            *o = vi - dt * lv;
        }
    }

    /// Jacobi-preconditioned CG. Stops once the residual is below
    /// `linear_tol` times the state's size in both the 1-norm (which bounds
    /// the mass defect) and the max-norm.
    fn solve_pcg(&self, rhs: &[f64], dt: f64, u_old: &[f64], linear_tol: f64) -> Result<Vec<f64>, SolverError> {
        let n = rhs.len();
        let diag = self.diagonal(dt);
        let l1_scale = u_old.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let max_scale = u_old.iter().fold(0.0, |a: f64, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let converged = |r: &[f64]| {
            let l1: f64 = r.iter().map(|v| v.abs()).sum();
            let mx = r.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
            l1 <= linear_tol * l1_scale && mx <= linear_tol * max_scale
        };
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let budget = 10 * n;
        for _ in 0..budget {
            if converged(&r) {
                return Ok(x);
            }
            self.apply_system(&p, dt, &mut scratch, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if converged(&r) {
            return Ok(x);
        }
        let l1: f64 = r.iter().map(|v| v.abs()).sum();
        Err(SolverError::NotConverged { iterations: budget, residual: l1 / l1_scale })
    }
}

/// One backward-Euler diffusion step of a single field on `mesh`.
pub fn diffusion_step(mesh: &MeshedDomain, field: &[f64], diffusion: &[f64], dt: f64, linear_tol: f64) -> Result<Vec<f64>, SolverError> {
    if !(dt > 0.0) {
        return Err(SolverError::Config(format!("dt must be positive, got {dt}")));
    }
    if field.len() != mesh.len() || diffusion.len() != mesh.len() {
        return Err(SolverError::Shape(format!("expected {} cells", mesh.len())));
    }
    if diffusion.iter().any(|&d| !(d > 0.0)) {
        return Err(SolverError::Config("diffusion values must be positive".into()));
    }
    DiffusionOperator::new(mesh, diffusion).step(field, dt, linear_tol)
}

/// Meshes, coupling lookups and diffusion operators for one model and
/// resolution; reused for every step.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: ModelSpec,
    config: SolverConfig,
    meshes: Vec<MeshedDomain>,
    presence: Vec<Vec<u64>>,
    /// `lookup[a][b][cell]`: cell of domain b's mesh containing the center of
    /// `cell` in domain a's mesh (`u32::MAX` when outside Ω_b).
    lookup: Vec<Vec<Vec<u32>>>,
    operators: Vec<DiffusionOperator>,
    reaction: CompiledReaction,
}

const OUTSIDE: u32 = u32::MAX;

impl Simulator {
    pub fn new(model: &ModelSpec, config: &SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        model.validate()?;
        if config.cells_per_axis.len() != model.dim() {
            return Err(SolverError::Config(format!(
                "cells has {} entries but domains are {}-dimensional",
                config.cells_per_axis.len(),
                model.dim()
            )));
        }
        let meshes = model
            .domains
            .iter()
            .map(|d| build_mesh(d, &config.cells_per_axis))
            .collect::<Result<Vec<_>, _>>()?;
        let presence: Vec<Vec<u64>> = meshes
            .iter()
            .map(|mesh| mesh.centers().map(|c| model.domains.presence(c)).collect())
            .collect();
        let lookup = meshes
            .iter()
            .map(|ma| {
                meshes
                    .iter()
                    .map(|mb| ma.centers().map(|c| mb.locate(c).map_or(OUTSIDE, |i| i as u32)).collect())
                    .collect()
            })
            .collect();
        let operators = (0..model.m())
            .map(|k| {
                let home = model.species.home(k) - 1;
                let spec = &model.diffusion.per_species[k];
                let d: Vec<f64> = presence[home].iter().map(|&p| spec.value_at(p)).collect();
                DiffusionOperator::new(&meshes[home], &d)
            })
            .collect();
        Ok(Self {
            reaction: model.compiled(),
            model: model.clone(),
            config: config.clone(),
            meshes,
            presence,
            lookup,
            operators,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Meshes indexed by domain id − 1.
    pub fn meshes(&self) -> &[MeshedDomain] {
        &self.meshes
    }

    pub fn species_mesh(&self, k: usize) -> &MeshedDomain {
        &self.meshes[self.model.species.home(k) - 1]
    }

    pub fn initial_state(&self) -> State {
        let fields = (0..self.model.m())
            .map(|k| {
                let ic = &self.model.initial[k];
                self.species_mesh(k).centers().map(|c| ic.value(c)).collect()
            })
            .collect();
        State { t: 0.0, fields }
    }

    fn check_shape(&self, state: &State) -> Result<(), SolverError> {
        if state.fields.len() != self.model.m() {
            return Err(SolverError::Shape(format!("{} fields for {} species", state.fields.len(), self.model.m())));
        }
        for (k, f) in state.fields.iter().enumerate() {
            let want = self.species_mesh(k).len();
            if f.len() != want {
                return Err(SolverError::Shape(format!("species {}: {} cells, mesh has {want}", k + 1, f.len())));
            }
        }
        Ok(())
    }

    /// u* = u + dt f^ε(u) at every cell of every habitat.
    pub fn reaction_step(&self, state: &State, dt: f64) -> Vec<Vec<f64>> {
        let m = self.model.m();
        let mut out = state.fields.clone();
        let mut u = vec![0.0; m];
        let mut scratch = vec![0.0; m];
        let mut f = vec![0.0; m];
        let homes: Vec<usize> = (0..m).map(|k| self.model.species.home(k) - 1).collect();
        for (a, mesh) in self.meshes.iter().enumerate() {
            let group = self.model.species.groups()[a].as_slice();
            if group.is_empty() {
                continue;
            }
            for cell in 0..mesh.len() {
                let presence = self.presence[a][cell];
                for j in 0..m {
                    let hb = homes[j];
                    u[j] = if hb == a {
                        state.fields[j][cell]
                    } else {
                        match self.lookup[a][hb][cell] {
                            OUTSIDE => 0.0,
                            idx => state.fields[j][idx as usize],
                        }
                    };
                }
                self.reaction.eval_truncated(presence, &u, self.config.epsilon, &mut scratch, &mut f);
                for &k in group {
                    out[k][cell] += dt * f[k];
                }
            }
        }
        debug_assert_eq!(self.reaction.m(), m);
        out
    }

    fn first_non_finite(fields: &[Vec<f64>]) -> Option<(usize, usize)> {
        fields
            .iter()
            .enumerate()
            .find_map(|(k, f)| f.iter().position(|v| !v.is_finite()).map(|c| (k, c)))
    }

    /// One Lie-split IMEX step of length `dt`.
    pub fn advance_by(&self, state: &State, dt: f64) -> Result<State, SolverError> {
        self.check_shape(state)?;
        let t = state.t + dt;
        let star = self.reaction_step(state, dt);
        if let Some((species, cell)) = Self::first_non_finite(&star) {
            return Err(SolverError::NonFinite { species: species + 1, cell, t });
        }
        let fields = star
            .par_iter()
            .zip(self.operators.par_iter())
            .map(|(f, op)| op.step(f, dt, self.config.linear_tol))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((species, cell)) = Self::first_non_finite(&fields) {
            return Err(SolverError::NonFinite { species: species + 1, cell, t });
        }
        Ok(State { t, fields })
    }

    pub fn advance(&self, state: &State) -> Result<State, SolverError> {
        self.advance_by(state, self.config.dt)
    }

    /// Largest stable-looking step for explicit reaction: 0.5 / Lip(f) on the
    /// box of twice the initial sup norm. `None` for a zero reaction.
    pub fn recommended_dt(&self) -> Option<f64> {
        let radius = 2.0 * self.model.max_initial_sup();
        if radius == 0.0 {
            return None;
        }
        let lip = lipschitz_bound(&self.model, radius);
        (lip > 0.0).then(|| 0.5 / lip)
    }

    pub fn run(&self, plan: &DiagnosticsPlan) -> Result<Trajectory, SolverError> {
        let mut warnings = Vec::new();
        if let Some(limit) = self.recommended_dt() {
            if self.config.dt > limit {
                let msg = format!("dt = {} exceeds the reaction step limit {limit:.3e}", self.config.dt);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        let mut state = self.initial_state();
        let species_meshes: Vec<&MeshedDomain> = (0..self.model.m()).map(|k| self.species_mesh(k)).collect();
        let ctx = LedgerContext {
            m0: crate::energy::weighted_mass(&state, &plan.witness.b, &species_meshes),
            witness: plan.witness.clone(),
            energies: plan.energies.clone(),
            union_measure: self.model.domains.union_measure(),
        };
        let mut ledger = DiagnosticsLedger::new(self.model.m(), plan.energies.iter().map(|e| e.p).collect(), ctx.m0);
        ledger.push(ledger_update(&state, &self.model, &self.meshes, &ctx)?);
        let mut snapshots = vec![Snapshot { step: 0, state: state.clone() }];
        let steps = self.config.steps();
        let mut halted = None;
        for step in 1..=steps {
            let dt = self.config.time_of(step) - self.config.time_of(step - 1);
            let next = match self.advance_by(&state, dt) {
                Ok(s) => s,
                Err(e @ SolverError::NonFinite { .. }) => {
                    halted = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
            state = State { t: self.config.time_of(step), ..next };
            ledger.push(ledger_update(&state, &self.model, &self.meshes, &ctx)?);
            if step % self.config.record_every == 0 || step == steps {
                snapshots.push(Snapshot { step, state: state.clone() });
            }
        }
        if halted.is_some() && snapshots.last().map(|s| s.state.t) != Some(state.t) {
            let step = (state.t / self.config.dt).round() as usize;
            snapshots.push(Snapshot { step, state: state.clone() });
        }
        Ok(Trajectory { snapshots, ledger, halted, warnings })
    }
}

/// What the ledger tracks in addition to norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsPlan {
    pub witness: MassWitness,
    pub energies: Vec<EnergyConfig>,
}

impl DiagnosticsPlan {
    pub fn unweighted(m: usize) -> Self {
        Self { witness: MassWitness::unweighted(m), energies: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub ledger: DiagnosticsLedger,
    /// Reason for stopping before `t_end`, if any.
    pub halted: Option<String>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        &self.snapshots.last().expect("at least the initial snapshot").state
    }

    pub fn min_value(&self) -> f64 {
        self.ledger.rows.iter().map(|r| r.global_min()).fold(f64::INFINITY, f64::min)
    }
}

/// One step with a freshly built [`Simulator`].
pub fn advance(state: &State, model: &ModelSpec, config: &SolverConfig) -> Result<State, SolverError> {
    Simulator::new(model, config)?.advance(state)
}

/// Full run with an unweighted mass ledger and no energies.
pub fn run(model: &ModelSpec, config: &SolverConfig) -> Result<Trajectory, SolverError> {
    run_with(model, config, &DiagnosticsPlan::unweighted(model.m()))
}

pub fn run_with(model: &ModelSpec, config: &SolverConfig, plan: &DiagnosticsPlan) -> Result<Trajectory, SolverError> {
    Simulator::new(model, config)?.run(plan)
}

/// `distances[i][k] = ‖u_k^{ε_i}(T) − u_k^{ε_{i+1}}(T)‖_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonStudy {
    pub eps: Vec<f64>,
    pub distances: Vec<Vec<f64>>,
}

impl EpsilonStudy {
    pub fn to_csv(&self) -> String {
        let m = self.distances.first().map_or(0, Vec::len);
        let mut out = String::from("eps_a,eps_b");
        for k in 1..=m {
            out.push_str(&format!(",d_{k}"));
        }
        out.push('\n');
        for (i, row) in self.distances.iter().enumerate() {
            out.push_str(&format!("{},{}", crate::energy::fmt17(self.eps[i]), crate::energy::fmt17(self.eps[i + 1])));
            for d in row {
                out.push(',');
                out.push_str(&crate::energy::fmt17(*d));
            }
            out.push('\n');
        }
        out
    }
}

pub fn epsilon_study(model: &ModelSpec, config: &SolverConfig, eps_list: &[f64]) -> Result<EpsilonStudy, SolverError> {
    let valid = eps_list.len() >= 2
        && eps_list.iter().all(|&e| e > 0.0 && e < 1.0)
        && eps_list.windows(2).all(|w| w[0] > w[1]);
    if !valid {
        return Err(SolverError::EpsilonList);
    }
    let finals = eps_list
        .iter()
        .map(|&eps| {
            let cfg = SolverConfig { epsilon: eps, record_every: usize::MAX, ..config.clone() };
            let sim = Simulator::new(model, &cfg)?;
            let traj = sim.run(&DiagnosticsPlan::unweighted(model.m()))?;
            if let Some(reason) = traj.halted {
                return Err(SolverError::Config(format!("run with eps = {eps} halted: {reason}")));
            }
            Ok((traj.final_state().clone(), sim))
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    let distances = finals
        .windows(2)
        .map(|pair| {
            let (a, sim) = &pair[0];
            let (b, _) = &pair[1];
            (0..model.m())
                .map(|k| {
                    let vol = sim.species_mesh(k).cell_volume();
                    let s: f64 = a.fields[k].iter().zip(&b.fields[k]).map(|(x, y)| (x - y) * (x - y)).sum();
                    (vol * s).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(EpsilonStudy { eps: eps_list.to_vec(), distances })
}
