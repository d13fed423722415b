//! Quantities monitored along trajectories: weighted L¹ mass and its Grönwall
//! envelope, sup norms and minima, and the multinomial L^p energies
//!
//! ```text
//! H_p[v] = Σ_{|β|=p} (p choose β) θ^{β²} v^β,     L_{k,p} = ∫_{Ω_k} H_p[v] dx,
//! ```
//!
//! together with the positive-definiteness test on the gradient coefficient
//! matrices `C_{i,l}(β)` used to pick θ.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::MeshedDomain;
use crate::model::ModelSpec;
use crate::solver::State;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("theta components must be positive and finite")]
    BadTheta,
    #[error("v and theta lengths differ ({v} vs {theta})")]
    LengthMismatch { v: usize, theta: usize },
    #[error("energy arguments must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("H_{p} overflows f64")]
    Overflow { p: u32 },
    #[error("positive-definiteness check needs p >= 2, got {0}")]
    OrderTooLow(u32),
    #[error("no theta found passing the check for p = {p} after {iterations} doublings")]
    ThetaSearchFailed { p: u32, iterations: usize },
    #[error("b must be positive, length {expected}")]
    BadWeights { expected: usize },
    #[error("energy order {p} exceeds the cap {cap}")]
    OrderTooHigh { p: u32, cap: u32 },
}

/// Default cap on p; the number of compositions grows like p^(n-1).
pub const MAX_ENERGY_ORDER: u32 = 8;

/// Above this order H_p is accumulated in log space.
pub const LOG_SPACE_THRESHOLD: u32 = 24;

/// Weak compositions of `total` into `parts` non-negative integers, in
/// ascending lexicographic order: (0,…,0,total) first, (total,0,…,0) last.
#[derive(Debug, Clone)]
pub struct Compositions {
    total: u32,
    current: Option<Vec<u32>>,
}

pub fn compositions(total: u32, parts: usize) -> Compositions {
    let current = if parts == 0 {
        (total == 0).then(Vec::new)
    } else {
        let mut first = vec![0; parts];
        first[parts - 1] = total;
        Some(first)
    };
    Compositions { total, current }
}

impl Iterator for Compositions {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        let out = self.current.take()?;
        let n = out.len();
        // Successor: find the rightmost position i < n-1 that can grow, i.e.
        // with something to its right; bump it and dump the remainder last.
        let mut next = out.clone();
        let mut tail: u32 = 0;
        let mut i = n;
        while i > 1 {
            i -= 1;
            tail += next[i];
            if tail > 0 {
                let pos = i - 1;
                next[pos] += 1;
                let rest = tail - 1;
                for v in next.iter_mut().skip(pos + 1) {
                    *v = 0;
                }
                next[n - 1] = rest;
                debug_assert_eq!(next.iter().sum::<u32>(), self.total);
                self.current = Some(next);
                return Some(out);
            }
        }
        Some(out)
    }
}

/// p! / (β_1! ⋯ β_n!), exact while it fits in u128.
pub fn multinomial_coefficient(beta: &[u32]) -> f64 {
    let mut acc: u128 = 1;
    let mut running: u32 = 0;
    for &b in beta {
        for i in 1..=b {
            running += 1;
            // acc * running / i stays integral (product of binomials).
            match acc.checked_mul(running as u128) {
                Some(v) => acc = v / i as u128,
                None => return log_multinomial(beta).exp(),
            }
        }
    }
    acc as f64
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn log_multinomial(beta: &[u32]) -> f64 {
    let p: u32 = beta.iter().sum();
    ln_factorial(p) - beta.iter().map(|&b| ln_factorial(b)).sum::<f64>()
}

fn check_energy_args(v: &[f64], theta: &[f64]) -> Result<(), EnergyError> {
    if v.len() != theta.len() {
        return Err(EnergyError::LengthMismatch { v: v.len(), theta: theta.len() });
    }
    if theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(EnergyError::BadTheta);
    }
    if let Some(&bad) = v.iter().find(|&&x| !(x >= 0.0)) {
        return Err(EnergyError::NegativeArgument(bad));
    }
    Ok(())
}

/// H_p[v] by a convolution over components:
/// `E_i(q) = Σ_b E_{i-1}(q-b) θ_i^{b²} v_i^b / b!`, `H_p = p! E_n(p)`.
pub fn multinomial_energy(v: &[f64], theta: &[f64], p: u32) -> Result<f64, EnergyError> {
    check_energy_args(v, theta)?;
    if p > LOG_SPACE_THRESHOLD {
        let value = log_multinomial_energy(v, theta, p)?.exp();
        return if value.is_finite() { Ok(value) } else { Err(EnergyError::Overflow { p }) };
    }
    let p_us = p as usize;
    let mut acc = vec![0.0; p_us + 1];
    acc[0] = 1.0;
    let mut inv_fact = vec![1.0; p_us + 1];
    for b in 1..=p_us {
        inv_fact[b] = inv_fact[b - 1] / b as f64;
    }
    for (&vi, &ti) in v.iter().zip(theta) {
        let weights: Vec<f64> = (0..=p_us)
            .map(|b| ti.powi((b * b) as i32) * vi.powi(b as i32) * inv_fact[b])
            .collect();
        let mut next = vec![0.0; p_us + 1];
        for q in 0..=p_us {
            next[q] = (0..=q).map(|b| acc[q - b] * weights[b]).sum();
        }
        acc = next;
    }
    let value = acc[p_us] / inv_fact[p_us];
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EnergyError::Overflow { p })
    }
}

/// ln H_p[v], by the same recursion carried out with log-sum-exp.
pub fn log_multinomial_energy(v: &[f64], theta: &[f64], p: u32) -> Result<f64, EnergyError> {
    check_energy_args(v, theta)?;
    let p_us = p as usize;
    let lse = |xs: &[f64]| {
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            mx
        } else {
            mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
        }
    };
    let mut acc = vec![f64::NEG_INFINITY; p_us + 1];
    acc[0] = 0.0;
    for (&vi, &ti) in v.iter().zip(theta) {
        let lv = vi.ln();
        let lt = ti.ln();
        let weights: Vec<f64> = (0..=p_us)
            .map(|b| {
                if b == 0 {
                    0.0
                } else if vi == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (b * b) as f64 * lt + b as f64 * lv - ln_factorial(b as u32)
                }
            })
            .collect();
        let mut next = vec![f64::NEG_INFINITY; p_us + 1];
        for q in 0..=p_us {
            let terms: Vec<f64> = (0..=q).map(|b| acc[q - b] + weights[b]).collect();
            next[q] = lse(&terms);
        }
        acc = next;
    }
    Ok(acc[p_us] + ln_factorial(p))
}

/// H_p[v] by summing over every β with |β| = p.
pub fn multinomial_energy_by_enumeration(v: &[f64], theta: &[f64], p: u32) -> Result<f64, EnergyError> {
    check_energy_args(v, theta)?;
    let total: f64 = compositions(p, v.len())
        .map(|beta| {
            let weight: f64 = beta
                .iter()
                .zip(theta.iter().zip(v))
                .map(|(&b, (&t, &x))| t.powi((b * b) as i32) * x.powi(b as i32))
                .product();
            multinomial_coefficient(&beta) * weight
        })
        .sum();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(EnergyError::Overflow { p })
    }
}

/// One energy order with θ for every habitat group (indexed by domain id − 1;
/// empty for habitats without species).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyConfig {
    pub p: u32,
    pub theta: Vec<Vec<f64>>,
}

impl EnergyConfig {
    /// θ from [`auto_theta`] for every non-empty group.
    pub fn auto(model: &ModelSpec, p: u32) -> Result<Self, EnergyError> {
        if p > MAX_ENERGY_ORDER {
            return Err(EnergyError::OrderTooHigh { p, cap: MAX_ENERGY_ORDER });
        }
        let theta = model
            .species
            .groups()
            .iter()
            .map(|g| if g.is_empty() { Ok(Vec::new()) } else { auto_theta(g.len(), p) })
            .collect::<Result<_, _>>()?;
        Ok(Self { p, theta })
    }
}

/// L_{k,p}: cell-volume-weighted sum of H_p over the group's cells. Tiny
/// negative undershoots are read through their positive part.
pub fn group_energy(state: &State, group: &[usize], theta: &[f64], p: u32, mesh: &MeshedDomain) -> Result<f64, EnergyError> {
    let mut v = vec![0.0; group.len()];
    let mut total = 0.0;
    for cell in 0..mesh.len() {
        for (slot, &k) in v.iter_mut().zip(group) {
            *slot = state.fields[k][cell].max(0.0);
        }
        total += multinomial_energy(&v, theta, p)?;
    }
    Ok(total * mesh.cell_volume())
}

/// L_p = Σ_k L_{k,p}; `domain_meshes` is indexed by domain id − 1.
pub fn total_energy(state: &State, model: &ModelSpec, domain_meshes: &[MeshedDomain], config: &EnergyConfig) -> Result<f64, EnergyError> {
    let mut total = 0.0;
    for (j, group) in model.species.groups().iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        total += group_energy(state, group, &config.theta[j], config.p, &domain_meshes[j])?;
    }
    Ok(total)
}

/// C_{i,l}(β) for one β.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaMatrix {
    pub beta: Vec<u32>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaCheck {
    pub p: u32,
    pub theta: Vec<f64>,
    pub matrices: Vec<BetaMatrix>,
    pub passed: bool,
    pub first_failure: Option<Vec<u32>>,
}

pub fn coefficient_matrix(theta: &[f64], beta: &[u32]) -> Vec<Vec<f64>> {
    let n = theta.len();
    let side = |i: usize| theta[i].powi(2 * beta[i] as i32 + 1);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|l| if i == l { theta[i].powi(4 * beta[i] as i32 + 4) } else { side(i) * side(l) })
                .collect()
        })
        .collect()
}

/// All leading principal minors positive, via Gaussian elimination without
/// pivoting (minor k = product of the first k pivots). A pivot counts as
/// positive only above `1e-12` times its original diagonal entry.
pub fn leading_minors_positive(matrix: &[Vec<f64>]) -> bool {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    for k in 0..n {
        let pivot = a[k][k];
        if !(pivot > 1e-12 * matrix[k][k].abs()) {
            return false;
        }
        for i in k + 1..n {
            let factor = a[i][k] / pivot;
            for j in k..n {
                a[i][j] -= factor * a[k][j];
            }
        }
    }
    true
}

pub fn theta_pd_check(theta: &[f64], p: u32) -> Result<ThetaCheck, EnergyError> {
    if p < 2 {
        return Err(EnergyError::OrderTooLow(p));
    }
    if theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(EnergyError::BadTheta);
    }
    let mut matrices = Vec::new();
    let mut first_failure = None;
    for beta in compositions(p - 2, theta.len()) {
        let matrix = coefficient_matrix(theta, &beta);
        if first_failure.is_none() && !leading_minors_positive(&matrix) {
            first_failure = Some(beta.clone());
        }
        matrices.push(BetaMatrix { beta, matrix });
    }
    Ok(ThetaCheck {
        p,
        theta: theta.to_vec(),
        matrices,
        passed: first_failure.is_none(),
        first_failure,
    })
}

/// Start from θ = 1 and double one component at a time, last index first,
/// cycling, until [`theta_pd_check`] passes. Orders below 2 need no search.
pub fn auto_theta(n: usize, p: u32) -> Result<Vec<f64>, EnergyError> {
    let mut theta = vec![1.0; n];
    if p < 2 || n == 0 {
        return Ok(theta);
    }
    let budget = 64 * n;
    for iter in 0..budget {
        if theta_pd_check(&theta, p)?.passed {
            return Ok(theta);
        }
        let idx = n - 1 - (iter % n);
        theta[idx] *= 2.0;
    }
    Err(EnergyError::ThetaSearchFailed { p, iterations: budget })
}

/// Σ_k b_k Σ_cells vol · u_k; `meshes[k]` is species k's mesh.
pub fn weighted_mass(state: &State, b: &[f64], meshes: &[&MeshedDomain]) -> f64 {
    state
        .fields
        .iter()
        .zip(b)
        .zip(meshes)
        .map(|((field, &bk), mesh)| bk * mesh.integrate(field))
        .sum()
}

/// (K2/K1 + M0) e^{K1 t} − K2/K1, or M0 + K2 t when K1 = 0.
pub fn gronwall_envelope(k1: f64, k2: f64, m0: f64, t: f64) -> f64 {
    if k1 == 0.0 {
        m0 + k2 * t
    } else {
        (k2 / k1 + m0) * (k1 * t).exp() - k2 / k1
    }
}

/// Mass-control witness: Σ b_k f_k ≤ K1 Σ χ u + K2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassWitness {
    pub b: Vec<f64>,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
}

impl MassWitness {
    pub fn unweighted(m: usize) -> Self {
        Self { b: vec![1.0; m], k1: 0.0, k2: 0.0 }
    }

    /// Rates for the weighted-mass inequality W' ≤ K1_eff W + K2_eff. The
    /// pointwise bound reads the unweighted density and K2 is integrated over
    /// the union of habitats, so K1 is divided by the extreme weight and K2 is
    /// multiplied by |Ω|.
    pub fn effective_rates(&self, union_measure: f64) -> (f64, f64) {
        let b_min = self.b.iter().cloned().fold(f64::INFINITY, f64::min);
        let b_max = self.b.iter().cloned().fold(0.0, f64::max);
        let k1 = if self.k1 >= 0.0 { self.k1 / b_min } else { self.k1 / b_max };
        (k1, self.k2 * union_measure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub t: f64,
    pub l1: Vec<f64>,
    pub sup: Vec<f64>,
    pub min: Vec<f64>,
    pub weighted_mass: f64,
    pub envelope: f64,
    pub energies: Vec<f64>,
}

impl LedgerRow {
    pub fn total_mass(&self) -> f64 {
        self.l1.iter().sum()
    }

    pub fn global_min(&self) -> f64 {
        self.min.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Everything a ledger row needs besides the state itself.
#[derive(Debug, Clone)]
pub struct LedgerContext {
    pub witness: MassWitness,
    pub energies: Vec<EnergyConfig>,
    pub m0: f64,
    pub union_measure: f64,
}

pub fn ledger_update(
    state: &State,
    model: &ModelSpec,
    domain_meshes: &[MeshedDomain],
    ctx: &LedgerContext,
) -> Result<LedgerRow, EnergyError> {
    let species_meshes: Vec<&MeshedDomain> = (0..model.m()).map(|k| &domain_meshes[model.species.home(k) - 1]).collect();
    let l1: Vec<f64> = state
        .fields
        .iter()
        .zip(&species_meshes)
        .map(|(f, mesh)| mesh.cell_volume() * f.iter().map(|v| v.abs()).sum::<f64>())
        .collect();
    let sup = state.fields.iter().map(|f| f.iter().fold(0.0, |a: f64, v| a.max(v.abs()))).collect();
    let min = state.fields.iter().map(|f| f.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
    let wm = weighted_mass(state, &ctx.witness.b, &species_meshes);
    let (k1, k2) = ctx.witness.effective_rates(ctx.union_measure);
    let energies = ctx
        .energies
        .iter()
        .map(|cfg| total_energy(state, model, domain_meshes, cfg))
        .collect::<Result<_, _>>()?;
    Ok(LedgerRow {
        t: state.t,
        l1,
        sup,
        min,
        weighted_mass: wm,
        envelope: gronwall_envelope(k1, k2, ctx.m0, state.t),
        energies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsLedger {
    pub species: usize,
    pub energy_orders: Vec<u32>,
    pub m0: f64,
    pub rows: Vec<LedgerRow>,
}

impl DiagnosticsLedger {
    pub fn new(species: usize, energy_orders: Vec<u32>, m0: f64) -> Self {
        Self { species, energy_orders, m0, rows: Vec::new() }
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    /// CSV with columns t, L1_k, sup_k, min_k, weighted_mass, envelope, L_p.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in ["L1", "sup", "min"] {
            for k in 1..=self.species {
                out.push_str(&format!(",{name}_{k}"));
            }
        }
        out.push_str(",weighted_mass,envelope");
        for p in &self.energy_orders {
            out.push_str(&format!(",L_{p}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&fmt17(row.t));
            for v in row.l1.iter().chain(&row.sup).chain(&row.min) {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            for v in [row.weighted_mass, row.envelope].iter().chain(&row.energies) {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
