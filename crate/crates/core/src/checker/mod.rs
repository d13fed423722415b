//! Finite verification of the structural conditions on f: quasi-positivity,
//! mass control with witnesses (b, K1, K2), polynomial growth (l, C) and the
//! per-habitat lower-triangular intermediate-sum certificates (A_j, r).
//!
//! Every inequality is fitted by LP on a sample cloud. A finite cloud in
//! [0, U]^m cannot by itself show that a bound fails on all of R_+^m (any
//! polynomial is bounded on a box), so infeasibility is decided by a growth
//! test: the constant fitted on the full cloud is compared with the one
//! fitted on the inner cloud of radius U/10. A bound that really holds gives
//! the same constant at both scales; a missing power q in the right-hand
//! side shows up as a ratio of about 10^q.

pub mod lp;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::energy::MassWitness;
use crate::geometry::region_partition;
use crate::model::{CompiledReaction, ModelSpec};
use lp::{solve_with_row_generation, Cmp, LinearProgram, Row};

#[derive(Debug, Error, PartialEq)]
pub enum CheckerError {
    #[error("invalid checker configuration: {0}")]
    Config(String),
    #[error("domain {domain} has {n} species; permutation search is limited to 6")]
    TooManySpecies { domain: usize, n: usize },
    #[error("unknown domain {0}")]
    UnknownDomain(usize),
}

/// Ratio C_full / C_inner above which a fitted constant counts as growing
/// with the sampling radius (an excess exponent of 0.2 over one decade).
pub const GROWTH_RATIO: f64 = 1.584_893_192_461_113_5;
/// Slack allowed when re-verifying certified inequalities, relative to the
/// magnitude of the terms involved.
pub const VERIFY_TOL: f64 = 1e-9;
const QP_TOL: f64 = 1e-12;
const MAX_GROUP: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckerConfig {
    pub u_max: f64,
    /// Random samples per region and scale, on top of the stratified grid.
    pub samples: usize,
    pub seed: u64,
    pub r_grid: Vec<f64>,
    /// Force below-diagonal entries of A_j to be non-negative.
    pub nonneg_lower: bool,
    pub refit_rounds: usize,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            u_max: 100.0,
            samples: 200,
            seed: 0x00c0_ffee,
            r_grid: vec![1.0, 1.25, 1.5, 1.75, 2.0 - 1e-6],
            nonneg_lower: false,
            refit_rounds: 3,
        }
    }
}

impl CheckerConfig {
    pub fn validate(&self) -> Result<(), CheckerError> {
        if !(self.u_max > 0.0) || !self.u_max.is_finite() {
            return Err(CheckerError::Config(format!("Umax must be positive, got {}", self.u_max)));
        }
        if self.samples == 0 {
            return Err(CheckerError::Config("samples must be at least 1".into()));
        }
        if self.r_grid.iter().any(|&r| !(r >= 1.0) || !r.is_finite()) {
            return Err(CheckerError::Config("r grid values must be finite and at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluation point: region, position, state and f there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    /// Sorted 1-based ids of the domains present at `x`.
    pub region: Vec<usize>,
    #[serde(skip)]
    pub mask: u64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(skip)]
    pub f: Vec<f64>,
    /// Σ_j χ_{Ω_σ(j)}(x) u_j.
    #[serde(skip)]
    pub s: f64,
    /// Drawn at radius U/10.
    #[serde(skip)]
    pub inner: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    pub u_max: f64,
    pub points: Vec<Sample>,
}

struct CloudBuilder<'a> {
    model: &'a ModelSpec,
    reaction: CompiledReaction,
}

impl<'a> CloudBuilder<'a> {
    fn new(model: &'a ModelSpec) -> Self {
        Self { model, reaction: model.compiled() }
    }

    fn sample(&self, region: &[usize], mask: u64, x: &[f64], u: Vec<f64>, inner: bool) -> Sample {
        let m = self.model.m();
        let mut f = vec![0.0; m];
        self.reaction.eval(mask, &u, &mut f);
        let s = (0..m).filter(|&k| self.model.species.home_bit(k) & mask != 0).map(|k| u[k]).sum();
        Sample { region: region.to_vec(), mask, x: x.to_vec(), u, f, s, inner }
    }

    /// Grid plus random samples at radius `radius` for every region.
    fn generate(&self, radius: f64, random: usize, with_grid: bool, inner: bool, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        let m = self.model.m();
        let g = (self.model.reaction.max_degree() as usize + 2).max(3);
        let partition = region_partition(&self.model.domains, 4);
        let mut out = Vec::new();
        for region in &partition.regions {
            let mask = region.mask();
            let active: Vec<usize> = (0..m).filter(|&k| self.model.species.home_bit(k) & mask != 0).collect();
            let xs = &region.representative_points;
            let mut point_index = 0;
            let mut next_x = || {
                point_index += 1;
                &xs[(point_index - 1) % xs.len()]
            };
            let grid_size = g.checked_pow(active.len() as u32).unwrap_or(usize::MAX);
            if with_grid && grid_size <= 4096 {
                let counts = vec![g; active.len()];
                crate::geometry::for_each_index(&counts, |idx| {
                    let mut u = vec![0.0; m];
                    for (&k, &i) in active.iter().zip(idx) {
                        u[k] = radius * i as f64 / (g - 1) as f64;
                    }
                    out.push(self.sample(&region.active, mask, next_x(), u, inner));
                });
            } else if with_grid {
                // Too many species for a full grid: corners of each face pair.
                for &k in &active {
                    for other in [0.0, radius] {
                        let mut u = vec![other; m];
                        for (j, v) in u.iter_mut().enumerate() {
                            if !active.contains(&j) {
                                *v = 0.0;
                            }
                        }
                        u[k] = 0.0;
                        out.push(self.sample(&region.active, mask, next_x(), u.clone(), inner));
                        u[k] = radius;
                        out.push(self.sample(&region.active, mask, next_x(), u, inner));
                    }
                }
            }
            for _ in 0..random {
                let mut u = vec![0.0; m];
                for &k in &active {
                    u[k] = if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.0..=radius) };
                }
                out.push(self.sample(&region.active, mask, next_x(), u, inner));
            }
        }
        out
    }
}

impl SampleCloud {
    /// Stratified grid (max degree + 2 points per active species, including
    /// 0 and U) plus `samples` random points per region, at radius U and
    /// U/10.
    pub fn build(model: &ModelSpec, u_max: f64, samples: usize, seed: u64) -> Self {
        let builder = CloudBuilder::new(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = builder.generate(u_max / 10.0, samples, true, true, &mut rng);
        points.extend(builder.generate(u_max, samples, true, false, &mut rng));
        Self { u_max, points }
    }

    /// Purely random points at radius U (held-out validation).
    pub fn random(model: &ModelSpec, u_max: f64, samples: usize, seed: u64) -> Self {
        let builder = CloudBuilder::new(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { u_max, points: builder.generate(u_max, samples, false, false, &mut rng) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn regions(&self) -> BTreeSet<Vec<usize>> {
        self.points.iter().map(|p| p.region.clone()).collect()
    }

    fn inner(&self) -> Vec<&Sample> {
        self.points.iter().filter(|p| p.inner).collect()
    }

    fn all(&self) -> Vec<&Sample> {
        self.points.iter().collect()
    }
}

/// Rounds LP output to 12 significant digits so that exact certificates
/// print as such; far below the re-verification tolerance.
fn snap(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v + 0.0;
    }
    format!("{v:.11e}").parse::<f64>().map_or(v, |r| r + 0.0)
}

fn growth_weight(model: &ModelSpec, s: f64) -> f64 {
    (1.0 + s).powi(model.reaction.max_degree().max(1) as i32)
}

fn grows(full: f64, inner: f64, abs_scale: f64) -> bool {
    full > GROWTH_RATIO * inner + 1e-9 * abs_scale
}

fn coefficient_scale(model: &ModelSpec) -> f64 {
    model.reaction.terms().iter().map(|t| t.coeff.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- (qp)

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpViolation {
    /// 1-based species index.
    pub species: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpReport {
    pub ok: bool,
    pub checked: usize,
    pub violations: Vec<QpViolation>,
}

/// f_k ≥ −1e−12 wherever u_k = 0 and species k is present.
pub fn check_quasi_positivity(model: &ModelSpec, cloud: &SampleCloud) -> QpReport {
    let mut checked = 0;
    let mut violations = Vec::new();
    for p in &cloud.points {
        for k in 0..model.m() {
            if model.species.home_bit(k) & p.mask == 0 || p.u[k] != 0.0 {
                continue;
            }
            checked += 1;
            if p.f[k] < -QP_TOL {
                violations.push(QpViolation { species: k + 1, x: p.x.clone(), u: p.u.clone(), value: p.f[k] });
            }
        }
    }
    violations.sort_by(|a, b| a.value.total_cmp(&b.value));
    violations.truncate(20);
    QpReport { ok: violations.is_empty(), checked, violations }
}

// ---------------------------------------------------------------- (bal)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolicVerdict {
    /// Σ b_k f_k vanishes identically in every region.
    Cancels,
    /// Every remaining term is non-positive or covered by K1 u_j or K2.
    Dominated,
    NotEstablished,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalReport {
    pub feasible: bool,
    pub b: Vec<f64>,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    /// max over samples of Σ b_k f_k − K1 Σχu − K2 (≤ 0 when certified).
    pub residual: f64,
    pub symbolic: SymbolicVerdict,
    /// (K1 + K2) on the full cloud over the same on the inner cloud.
    pub growth_ratio: f64,
    pub u_max: f64,
    pub witness: Option<Sample>,
}

impl BalReport {
    pub fn witness(&self) -> MassWitness {
        MassWitness { b: self.b.clone(), k1: self.k1, k2: self.k2 }
    }
}

struct BalFit {
    b: Vec<f64>,
    k1: f64,
    k2: f64,
}

fn bal_rows(model: &ModelSpec, samples: &[&Sample]) -> Vec<Row> {
    let m = model.m();
    samples
        .iter()
        .map(|p| {
            let w = growth_weight(model, p.s);
            let mut coeffs: Vec<f64> = p.f.iter().map(|v| v / w).collect();
            coeffs.push(-p.s / w);
            coeffs.push(-1.0 / w);
            debug_assert_eq!(coeffs.len(), m + 2);
            Row::new(coeffs, Cmp::Le, 0.0)
        })
        .collect()
}

fn stage_cap(value: f64) -> f64 {
    value * (1.0 + 1e-9) + 1e-12
}

/// Lexicographic: min K2, then K1, then Σ b. b_k ≥ 1, K1, K2 ≥ 0.
fn fit_bal_on(model: &ModelSpec, samples: &[&Sample]) -> Option<BalFit> {
    let m = model.m();
    let n = m + 2;
    let rows = bal_rows(model, samples);
    let mut lp = LinearProgram::new(n);
    for k in 0..m {
        lp.set_lower(k, 1.0);
    }
    let unit = |j: usize| {
        let mut c = vec![0.0; n];
        c[j] = 1.0;
        c
    };
    let mut x = Vec::new();
    let stages = [unit(m + 1), unit(m), (0..n).map(|j| if j < m { 1.0 } else { 0.0 }).collect::<Vec<_>>()];
    for (i, objective) in stages.iter().enumerate() {
        lp.set_objective(objective.clone());
        let outcome = solve_with_row_generation(&lp, &rows, 1e-12);
        let (sol, value) = outcome.optimal()?;
        x = sol.to_vec();
        if i < 2 {
            lp.add_row(Row::new(objective.clone(), Cmp::Le, stage_cap(value.max(0.0))));
        }
    }
    Some(BalFit { b: x[..m].iter().map(|&v| snap(v)).collect(), k1: clean(x[m]), k2: clean(x[m + 1]) })
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-10 {
        0.0
    } else {
        snap(v)
    }
}

/// Σ_k w_k f_k restricted to the terms active in the region `mask`, keyed by
/// exponent vector.
pub fn region_polynomial(model: &ModelSpec, mask: u64, weights: &[f64]) -> BTreeMap<Vec<u32>, f64> {
    let mut poly: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for t in model.reaction.terms() {
        let required = t.gate_mask() | model.species.home_bit(t.target);
        if required & mask != required || weights[t.target] == 0.0 {
            continue;
        }
        let absent = t.exponents.iter().enumerate().any(|(j, &e)| e > 0 && model.species.home_bit(j) & mask == 0);
        if absent {
            continue;
        }
        *poly.entry(t.exponents.clone()).or_insert(0.0) += weights[t.target] * t.coeff;
    }
    poly
}

/// Term-by-term check of Σ b_k f_k ≤ K1 Σχu + K2 on every region.
pub fn symbolic_mass_check(model: &ModelSpec, regions: &BTreeSet<Vec<usize>>, b: &[f64], k1: f64, k2: f64) -> SymbolicVerdict {
    let mut all_cancel = true;
    for region in regions {
        let mask = region.iter().fold(0u64, |acc, &id| acc | (1u64 << (id - 1)));
        let poly = region_polynomial(model, mask, b);
        let magnitude: f64 = model
            .reaction
            .terms()
            .iter()
            .map(|t| (b[t.target] * t.coeff).abs())
            .fold(0.0, f64::max);
        let zero_tol = 1e-12 * (1.0 + magnitude);
        let mut constant = 0.0;
        for (exps, &c) in &poly {
            if c.abs() <= zero_tol {
                continue;
            }
            all_cancel = false;
            if c < 0.0 {
                continue;
            }
            match exps.iter().sum::<u32>() {
                0 => constant += c,
                1 if c <= stage_cap(k1) => {}
                _ => return SymbolicVerdict::NotEstablished,
            }
        }
        if constant > stage_cap(k2) {
            return SymbolicVerdict::NotEstablished;
        }
    }
    if all_cancel {
        SymbolicVerdict::Cancels
    } else {
        SymbolicVerdict::Dominated
    }
}

fn bal_residual(samples: &[&Sample], fit: &BalFit) -> (f64, Option<Sample>) {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for p in samples {
        let lhs: f64 = p.f.iter().zip(&fit.b).map(|(f, b)| f * b).sum();
        let r = lhs - fit.k1 * p.s - fit.k2;
        if r > worst {
            worst = r;
            witness = Some((*p).clone());
        }
    }
    (if worst.is_finite() { worst } else { 0.0 }, witness)
}

pub fn fit_mass_control(model: &ModelSpec, cloud: &SampleCloud) -> BalReport {
    let m = model.m();
    let regions = cloud.regions();
    let full = fit_bal_on(model, &cloud.all());
    let inner = fit_bal_on(model, &cloud.inner());
    let (Some(full), Some(inner)) = (full, inner) else {
        return BalReport {
            feasible: false,
            b: vec![1.0; m],
            k1: f64::INFINITY,
            k2: f64::INFINITY,
            residual: f64::INFINITY,
            symbolic: SymbolicVerdict::NotEstablished,
            growth_ratio: f64::INFINITY,
            u_max: cloud.u_max,
            witness: None,
        };
    };
    let symbolic = symbolic_mass_check(model, &regions, &full.b, full.k1, full.k2);
    let k_full = full.k1 + full.k2;
    let k_inner = inner.k1 + inner.k2;
    let growth_ratio = if k_inner > 0.0 { k_full / k_inner } else if k_full > 0.0 { f64::INFINITY } else { 1.0 };
    let growing = grows(k_full, k_inner, coefficient_scale(model));
    let feasible = symbolic != SymbolicVerdict::NotEstablished || !growing;
    let (residual, worst) = bal_residual(&cloud.all(), &full);
    // The witness of an infeasible fit is where the inner-cloud certificate
    // breaks down worst on the full cloud.
    let witness = if feasible { None } else { bal_residual(&cloud.all(), &inner).1.or(worst) };
    BalReport {
        feasible,
        b: full.b,
        k1: full.k1,
        k2: full.k2,
        residual,
        symbolic,
        growth_ratio,
        u_max: cloud.u_max,
        witness,
    }
}

// ---------------------------------------------------------------- (poly)

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyReport {
    pub l: u32,
    #[serde(rename = "C")]
    pub c: f64,
    /// |f_k| ≤ C (1 + Σχu)^l held at every sample.
    pub verified: bool,
}

pub fn fit_growth_exponent(model: &ModelSpec, cloud: &SampleCloud) -> PolyReport {
    let terms = model.reaction.terms().iter().filter(|t| t.coeff != 0.0);
    let l = terms.clone().map(|t| t.degree()).max().unwrap_or(0);
    let c: f64 = terms.map(|t| t.coeff.abs()).sum();
    let verified = cloud.points.iter().all(|p| poly_holds(p, l, c));
    PolyReport { l, c, verified }
}

fn poly_holds(p: &Sample, l: u32, c: f64) -> bool {
    let bound = c * (1.0 + p.s).powi(l as i32);
    p.f.iter().all(|f| f.abs() <= bound * (1.0 + VERIFY_TOL) + VERIFY_TOL)
}

// ---------------------------------------------------------------- (int)

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntWitness {
    /// Row of A_j (0-based) whose bound grows with the sampling radius.
    pub row: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// (A f)_row at the sample and the bound C (1 + Σχu)^r fitted on the
    /// inner cloud.
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RAttempt {
    pub r: f64,
    pub feasible: bool,
    /// Largest C_full / C_inner over the rows of the identity ordering.
    pub growth_ratio: f64,
    pub witness: Option<IntWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntReport {
    pub domain: usize,
    /// O_j, 1-based species indices.
    pub species: Vec<usize>,
    pub feasible: bool,
    /// Species order used for the rows of A (1-based).
    pub permutation: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub r: Option<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub attempts: Vec<RAttempt>,
}

/// Integers in [1, 1 + 2/n) first, then the remaining grid values ascending.
pub fn r_candidates(grid: &[f64], n: usize) -> Vec<f64> {
    let limit = 1.0 + 2.0 / n as f64;
    let mut ints: Vec<f64> = (1..).map(|i| i as f64).take_while(|&r| r < limit).collect();
    let mut rest: Vec<f64> = grid.iter().copied().filter(|&r| r >= 1.0 && r < limit && r.fract() != 0.0).collect();
    rest.sort_by(f64::total_cmp);
    rest.dedup();
    ints.extend(rest);
    ints
}

/// All permutations of 0..n in lexicographic order (identity first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}

#[derive(Debug, Clone)]
struct RowFit {
    a: Vec<f64>,
    c: f64,
}

/// Row `order.len()-1` of A: Σ_l a_l f_{order[l]} ≤ C (1 + Σχu)^r.
fn fit_int_row(model: &ModelSpec, samples: &[&Sample], order: &[usize], r: f64, nonneg_lower: bool) -> Option<RowFit> {
    let i = order.len() - 1;
    // Variables: a_0..a_i, C, t_0..t_{i-1} (|a_l| bounds for l < i).
    let n = 2 * i + 2;
    let c_idx = i + 1;
    let mut lp = LinearProgram::new(n);
    for l in 0..i {
        if !nonneg_lower {
            lp.set_free(l);
        }
        let mut up = vec![0.0; n];
        up[i + 2 + l] = 1.0;
        up[l] = -1.0;
        lp.add_row(Row::new(up.clone(), Cmp::Ge, 0.0));
        up[l] = 1.0;
        lp.add_row(Row::new(up, Cmp::Ge, 0.0));
    }
    lp.set_lower(i, 1.0);
    let rows: Vec<Row> = samples
        .iter()
        .map(|p| {
            let w = growth_weight(model, p.s).max((1.0 + p.s).powf(r));
            let mut coeffs = vec![0.0; n];
            for (l, &k) in order.iter().enumerate() {
                coeffs[l] = p.f[k] / w;
            }
            coeffs[c_idx] = -(1.0 + p.s).powf(r) / w;
            Row::new(coeffs, Cmp::Le, 0.0)
        })
        .collect();
    let mut objective = vec![0.0; n];
    objective[c_idx] = 1.0;
    lp.set_objective(objective.clone());
    let (_, c_star) = solve_with_row_generation(&lp, &rows, 1e-12).optimal()?;
    lp.add_row(Row::new(objective, Cmp::Le, stage_cap(c_star.max(0.0))));
    let mut tidy = vec![0.0; n];
    tidy[i] = 1.0;
    tidy[i + 2..].iter_mut().for_each(|v| *v = 1.0);
    lp.set_objective(tidy);
    let outcome = solve_with_row_generation(&lp, &rows, 1e-12);
    let (x, _) = outcome.optimal()?;
    Some(RowFit { a: x[..=i].iter().map(|&v| clean(v)).collect(), c: clean(x[c_idx]) })
}

struct RowVerdict {
    fit: RowFit,
    feasible: bool,
    ratio: f64,
    witness: Option<IntWitness>,
}

fn row_lhs(p: &Sample, order: &[usize], a: &[f64]) -> f64 {
    order.iter().zip(a).map(|(&k, &al)| al * p.f[k]).sum()
}

fn judge_row(model: &ModelSpec, full: &[&Sample], inner: &[&Sample], order: &[usize], r: f64, nonneg: bool) -> Option<RowVerdict> {
    let fit = fit_int_row(model, full, order, r, nonneg)?;
    let inner_fit = fit_int_row(model, inner, order, r, nonneg)?;
    let ratio = if inner_fit.c > 0.0 { fit.c / inner_fit.c } else if fit.c > 0.0 { f64::INFINITY } else { 1.0 };
    let feasible = !grows(fit.c, inner_fit.c, coefficient_scale(model));
    let witness = (!feasible)
        .then(|| {
            full.iter()
                .map(|p| {
                    let lhs = row_lhs(p, order, &inner_fit.a);
                    let bound = inner_fit.c * (1.0 + p.s).powf(r);
                    (lhs - bound, p, lhs, bound)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, p, lhs, bound)| IntWitness { row: order.len() - 1, x: p.x.clone(), u: p.u.clone(), lhs, bound })
        })
        .flatten();
    Some(RowVerdict { fit, feasible, ratio, witness })
}

pub fn fit_intermediate_sum(
    model: &ModelSpec,
    domain: usize,
    cloud: &SampleCloud,
    r_grid: &[f64],
    nonneg_lower: bool,
) -> Result<IntReport, CheckerError> {
    if domain == 0 || domain > model.domains.len() {
        return Err(CheckerError::UnknownDomain(domain));
    }
    let group = model.species.group(domain).to_vec();
    let nj = group.len();
    if nj > MAX_GROUP {
        return Err(CheckerError::TooManySpecies { domain, n: nj });
    }
    let species: Vec<usize> = group.iter().map(|k| k + 1).collect();
    if nj == 0 {
        return Ok(IntReport { domain, species, feasible: true, permutation: vec![], a: vec![], r: Some(1.0), c: 0.0, attempts: vec![] });
    }
    let bit = 1u64 << (domain - 1);
    let full: Vec<&Sample> = cloud.points.iter().filter(|p| p.mask & bit != 0).collect();
    let inner: Vec<&Sample> = full.iter().copied().filter(|p| p.inner).collect();
    let perms = permutations(nj);
    let mut attempts = Vec::new();
    for r in r_candidates(r_grid, model.dim()) {
        // Row i depends only on the set of earlier species and the diagonal
        // one, so verdicts are shared between permutations.
        let mut cache: HashMap<(u64, usize), Option<RowVerdict>> = HashMap::new();
        let mut attempt = RAttempt { r, feasible: false, growth_ratio: 1.0, witness: None };
        for (pi, perm) in perms.iter().enumerate() {
            let order: Vec<usize> = perm.iter().map(|&i| group[i]).collect();
            let mut ok = true;
            for i in 0..nj {
                let prefix = perm[..i].iter().fold(0u64, |acc, &l| acc | (1 << l));
                let verdict = cache
                    .entry((prefix, perm[i]))
                    .or_insert_with(|| judge_row(model, &full, &inner, &order[..=i], r, nonneg_lower));
                let Some(v) = verdict.as_ref() else {
                    ok = false;
                    break;
                };
                if pi == 0 {
                    attempt.growth_ratio = attempt.growth_ratio.max(v.ratio);
                    if attempt.witness.is_none() {
                        attempt.witness = v.witness.clone();
                    }
                }
                if !v.feasible {
                    ok = false;
                    if pi > 0 {
                        break;
                    }
                }
            }
            if ok {
                attempt.feasible = true;
                attempt.witness = None;
                attempts.push(attempt);
                let mut a = vec![vec![0.0; nj]; nj];
                let mut c: f64 = 0.0;
                for i in 0..nj {
                    let prefix = perm[..i].iter().fold(0u64, |acc, &l| acc | (1 << l));
                    let fit = &cache[&(prefix, perm[i])].as_ref().expect("checked above").fit;
                    // Cached fits were made for the permutation that first
                    // reached this row; map coefficients by species.
                    let first_order = cached_order(&perms, pi, i, prefix, perm[i]);
                    for (l, &slot) in first_order.iter().enumerate() {
                        let col = perm.iter().position(|&q| q == slot).expect("same species set");
                        a[i][col] = fit.a[l];
                    }
                    c = c.max(fit.c);
                }
                return Ok(IntReport {
                    domain,
                    species,
                    feasible: true,
                    permutation: order.iter().map(|k| k + 1).collect(),
                    a,
                    r: Some(r),
                    c,
                    attempts,
                });
            }
        }
        attempts.push(attempt);
    }
    Ok(IntReport {
        domain,
        permutation: species.clone(),
        species,
        feasible: false,
        a: vec![],
        r: None,
        c: f64::INFINITY,
        attempts,
    })
}

/// Local order (indices into O_j) of the permutation that first filled the
/// cache entry for row `i` with the given prefix set and diagonal species.
fn cached_order(perms: &[Vec<usize>], upto: usize, i: usize, prefix: u64, diag: usize) -> Vec<usize> {
    perms[..=upto]
        .iter()
        .find(|p| p[i] == diag && p[..i].iter().fold(0u64, |acc, &l| acc | (1 << l)) == prefix)
        .map(|p| p[..=i].to_vec())
        .expect("current permutation matches")
}

/// Does (A f_{O_j})_i ≤ C (1 + Σχu)^r hold at `p` for every row?
pub fn int_holds(p: &Sample, report: &IntReport) -> bool {
    let Some(r) = report.r else { return true };
    let bit = 1u64 << (report.domain - 1);
    if p.mask & bit == 0 {
        return true;
    }
    let order: Vec<usize> = report.permutation.iter().map(|k| k - 1).collect();
    let bound = report.c * (1.0 + p.s).powf(r);
    report.a.iter().all(|row| {
        let terms: Vec<f64> = order.iter().zip(row).map(|(&k, &a)| a * p.f[k]).collect();
        let lhs: f64 = terms.iter().sum();
        let scale = 1.0 + bound + terms.iter().map(|v| v.abs()).sum::<f64>();
        lhs <= bound + VERIFY_TOL * scale
    })
}

pub fn bal_holds(p: &Sample, bal: &BalReport) -> bool {
    let terms: Vec<f64> = p.f.iter().zip(&bal.b).map(|(f, b)| f * b).collect();
    let lhs: f64 = terms.iter().sum();
    let rhs = bal.k1 * p.s + bal.k2;
    lhs <= rhs + VERIFY_TOL * (1.0 + rhs.abs() + terms.iter().map(|v| v.abs()).sum::<f64>())
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub dimension: usize,
    pub qp_ok: bool,
    pub qp_violations: Vec<QpViolation>,
    pub bal: BalReport,
    pub poly: PolyReport,
    pub int: Vec<IntReport>,
    /// Largest certified r (over domains) satisfies r < 1 + 2/n.
    pub growth_ok: bool,
    pub r_max: Option<f64>,
    /// Mass control holds with K1 < 0 or K1 = K2 = 0.
    pub uniform_bound: bool,
    /// In one dimension: l ≤ 2, so the weaker one-dimensional hypotheses
    /// apply. `None` when n ≠ 1.
    pub corollary_1d: Option<bool>,
    pub samples: usize,
    pub validation_samples: usize,
    pub refit_rounds: usize,
    /// Every certificate held on the held-out samples.
    pub validated: bool,
    pub hypotheses_met: bool,
}

fn validation_failures(cloud: &SampleCloud, bal: &BalReport, poly: &PolyReport, ints: &[IntReport]) -> Vec<Sample> {
    cloud
        .points
        .iter()
        .filter(|p| {
            (bal.feasible && !bal_holds(p, bal))
                || !poly_holds(p, poly.l, poly.c)
                || ints.iter().any(|r| r.feasible && !int_holds(p, r))
        })
        .cloned()
        .collect()
}

/// Runs all checks with held-out validation; violating held-out samples are
/// added to the cloud and the fits redone, at most `refit_rounds` times.
pub fn certify(model: &ModelSpec, cfg: &CheckerConfig) -> Result<StructureReport, CheckerError> {
    cfg.validate()?;
    let mut cloud = SampleCloud::build(model, cfg.u_max, cfg.samples, cfg.seed);
    let mut round = 0;
    loop {
        let qp = check_quasi_positivity(model, &cloud);
        let bal = fit_mass_control(model, &cloud);
        let poly = fit_growth_exponent(model, &cloud);
        let ints = (1..=model.domains.len())
            .map(|j| fit_intermediate_sum(model, j, &cloud, &cfg.r_grid, cfg.nonneg_lower))
            .collect::<Result<Vec<_>, _>>()?;
        let holdout_seed = cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(round as u64 + 1));
        let holdout = SampleCloud::random(model, cfg.u_max, 10 * cfg.samples, holdout_seed);
        let failures = validation_failures(&holdout, &bal, &poly, &ints);
        let holdout_qp = check_quasi_positivity(model, &holdout);
        if failures.is_empty() || round == cfg.refit_rounds {
            let n = model.dim();
            let r_max = ints.iter().filter(|r| !r.species.is_empty()).filter_map(|r| r.r).reduce(f64::max);
            let all_int = ints.iter().all(|r| r.feasible);
            let growth_ok = all_int && r_max.is_none_or(|r| r < 1.0 + 2.0 / n as f64);
            let uniform_bound = bal.feasible && (bal.k1 < 0.0 || (bal.k1 == 0.0 && bal.k2 == 0.0));
            let qp_ok = qp.ok && holdout_qp.ok;
            let mut qp_violations = qp.violations;
            qp_violations.extend(holdout_qp.violations);
            qp_violations.truncate(20);
            let validated = failures.is_empty();
            let hypotheses_met = qp_ok && bal.feasible && poly.verified && all_int && growth_ok && validated;
            return Ok(StructureReport {
                dimension: n,
                qp_ok,
                qp_violations,
                corollary_1d: (n == 1).then_some(poly.l <= 2),
                bal,
                poly,
                int: ints,
                growth_ok,
                r_max,
                uniform_bound,
                samples: cloud.len(),
                validation_samples: holdout.len(),
                refit_rounds: round,
                validated,
                hypotheses_met,
            });
        }
        for mut p in failures {
            p.inner = false;
            cloud.points.push(p);
        }
        round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, DomainSet};
    use crate::model::{builtin, BuiltinParams, DiffusionField, DiffusionSpec, InitialCondition, ReactionField, ReactionTerm, SpeciesMap};

    fn single_species(terms: Vec<ReactionTerm>) -> ModelSpec {
        let domains = DomainSet::new(vec![Domain::new(1, vec![0.0], vec![1.0]).unwrap()]).unwrap();
        ModelSpec::new(
            domains,
            SpeciesMap::new(vec![1], 1).unwrap(),
            ReactionField::new(1, terms),
            DiffusionField { per_species: vec![DiffusionSpec::constant(1.0)] },
            vec![InitialCondition::Constant(1.0)],
            1e-3,
        )
        .unwrap()
    }

    fn small() -> CheckerConfig {
        CheckerConfig { samples: 60, ..CheckerConfig::default() }
    }

    #[test]
    fn permutation_order() {
        assert_eq!(permutations(3), vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0]
        ]);
        assert_eq!(permutations(6).len(), 720);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn r_candidate_order() {
        let grid = CheckerConfig::default().r_grid;
        assert_eq!(r_candidates(&grid, 1), vec![1.0, 2.0, 1.25, 1.5, 1.75, 2.0 - 1e-6]);
        assert_eq!(r_candidates(&grid, 2), vec![1.0, 1.25, 1.5, 1.75, 2.0 - 1e-6]);
        assert_eq!(r_candidates(&grid, 3), vec![1.0, 1.25, 1.5]);
    }

    #[test]
    fn cloud_contains_faces_and_regions() {
        let model = builtin("ex1", &BuiltinParams::new()).unwrap();
        let cloud = SampleCloud::build(&model, 100.0, 20, 1);
        let regions = cloud.regions();
        let partition = region_partition(&model.domains, 1);
        assert_eq!(regions.len(), partition.regions.len());
        for k in 0..model.m() {
            assert!(cloud.points.iter().any(|p| model.species.home_bit(k) & p.mask != 0 && p.u[k] == 0.0));
        }
        assert!(cloud.points.iter().all(|p| p.u.iter().all(|&v| (0.0..=100.0).contains(&v))));
    }

    #[test]
    fn qp_examples() {
        let ex1 = builtin("ex1", &BuiltinParams::new()).unwrap();
        assert!(check_quasi_positivity(&ex1, &SampleCloud::build(&ex1, 100.0, 20, 2)).ok);
        let decay = single_species(vec![ReactionTerm::new(0, -1.0, &[], &[(0, 1)], 1)]);
        assert!(check_quasi_positivity(&decay, &SampleCloud::build(&decay, 100.0, 20, 2)).ok);
        let sink = single_species(vec![ReactionTerm::new(0, -1.0, &[], &[], 1)]);
        let report = check_quasi_positivity(&sink, &SampleCloud::build(&sink, 100.0, 20, 2));
        assert!(!report.ok);
        assert_eq!(report.violations[0].species, 1);
        assert_eq!(report.violations[0].u, vec![0.0]);
        assert_eq!(report.violations[0].value, -1.0);
    }

    #[test]
    fn zero_reaction_certificate() {
        let model = single_species(vec![]);
        let report = certify(&model, &small()).unwrap();
        assert_eq!(report.bal.b, vec![1.0]);
        assert_eq!((report.bal.k1, report.bal.k2), (0.0, 0.0));
        assert_eq!(report.bal.symbolic, SymbolicVerdict::Cancels);
        assert_eq!((report.poly.l, report.poly.c), (0, 0.0));
        assert!(report.uniform_bound && report.hypotheses_met);
    }

    #[test]
    fn linear_field_growth() {
        let model = single_species(vec![ReactionTerm::new(0, 2.0, &[], &[(0, 1)], 1), ReactionTerm::new(0, 0.5, &[], &[], 1)]);
        let report = certify(&model, &small()).unwrap();
        assert_eq!(report.poly.l, 1);
        assert!(report.bal.feasible);
        assert_eq!((report.bal.k1, report.bal.k2), (2.0, 0.5));
        assert_eq!(report.bal.symbolic, SymbolicVerdict::Dominated);
        assert!(!report.uniform_bound);
        assert_eq!(report.int[0].r, Some(1.0));
    }

    #[test]
    fn quadratic_self_growth_is_unmet() {
        let model = single_species(vec![ReactionTerm::new(0, 1.0, &[], &[(0, 2)], 1)]);
        let report = certify(&model, &small()).unwrap();
        assert!(!report.bal.feasible);
        assert!(report.bal.growth_ratio > 5.0);
        assert!(report.bal.witness.is_some());
        assert!(!report.hypotheses_met);
    }

    #[test]
    fn lp_stage_fit_ex2() {
        let model = builtin("ex2", &BuiltinParams::new()).unwrap();
        let cloud = SampleCloud::build(&model, 100.0, 40, 3);
        let bal = fit_mass_control(&model, &cloud);
        assert_eq!(bal.b, vec![1.0, 1.0, 2.0]);
        assert_eq!((bal.k1, bal.k2), (0.0, 0.0));
        assert_eq!(bal.symbolic, SymbolicVerdict::Cancels);
        let int = fit_intermediate_sum(&model, 2, &cloud, &CheckerConfig::default().r_grid, false).unwrap();
        assert_eq!(int.a, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(int.r, Some(1.0));
        assert_eq!(int.permutation, vec![2, 3]);
    }

    #[test]
    fn monotone_in_r() {
        let model = builtin("ex3", &BuiltinParams::new()).unwrap();
        let cloud = SampleCloud::build(&model, 100.0, 40, 5);
        let int = fit_intermediate_sum(&model, 1, &cloud, &CheckerConfig::default().r_grid, false).unwrap();
        assert_eq!(int.r, Some(2.0));
        for r_up in [2.5, 2.9] {
            let raised = IntReport { r: Some(r_up), ..int.clone() };
            assert!(cloud.points.iter().all(|p| int_holds(p, &raised)));
        }
    }
}
