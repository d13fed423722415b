//! Problem data: species-to-habitat map, gated polynomial reaction fields,
//! diffusion coefficients and initial data, plus the built-in examples.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{Domain, DomainSet, GeometryError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("species {species}: home domain {domain} does not exist")]
    UnknownHome { species: usize, domain: usize },
    #[error("no species")]
    NoSpecies,
    #[error("term {term}: target species {target} out of range")]
    BadTarget { term: usize, target: usize },
    #[error("term {term}: exponent vector has length {len}, expected {m}")]
    ExponentLength { term: usize, len: usize, m: usize },
    #[error("term {term}: gate references unknown domain {domain}")]
    BadGate { term: usize, domain: usize },
    #[error("term {term}: reads species {species} whose habitat is not available where the term acts")]
    MaskViolation { term: usize, species: usize },
    #[error("term {term}: coefficient must be finite")]
    BadCoefficient { term: usize },
    #[error("species {species}: diffusion values must be positive and finite")]
    NonPositiveDiffusion { species: usize },
    #[error("species {species}: diffusion region references unknown domain {domain}")]
    BadDiffusionRegion { species: usize, domain: usize },
    #[error("species {species}: initial data must be non-negative and bounded")]
    BadInitial { species: usize },
    #[error("species {species}: Gaussian center has {got} coordinates, domain dimension is {dim}")]
    InitialDimension { species: usize, got: usize, dim: usize },
    #[error("epsilon must lie in [0, 1), got {0}")]
    BadEpsilon(f64),
    #[error("expected {expected} entries for {what}, got {got}")]
    Count { what: &'static str, expected: usize, got: usize },
    #[error("state component {species} is negative ({value})")]
    NegativeState { species: usize, value: f64 },
    #[error("unknown built-in model {0:?} (expected ex1, ex2 or ex3)")]
    UnknownBuiltin(String),
    #[error("unknown parameter {key:?} for built-in {model}")]
    UnknownParam { model: String, key: String },
}

/// σ: species index (0-based) → home domain id (1-based), and its inverse
/// partition O_1..O_N.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesMap {
    sigma: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl SpeciesMap {
    pub fn new(sigma: Vec<usize>, n_domains: usize) -> Result<Self, ModelError> {
        if sigma.is_empty() {
            return Err(ModelError::NoSpecies);
        }
        let mut groups = vec![Vec::new(); n_domains];
        for (k, &dom) in sigma.iter().enumerate() {
            if dom == 0 || dom > n_domains {
                return Err(ModelError::UnknownHome { species: k, domain: dom });
            }
            groups[dom - 1].push(k);
        }
        Ok(Self { sigma, groups })
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn home(&self, species: usize) -> usize {
        self.sigma[species]
    }

    /// O_j for the 1-based domain id `j`.
    pub fn group(&self, domain: usize) -> &[usize] {
        &self.groups[domain - 1]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_per_domain(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub(crate) fn home_bit(&self, species: usize) -> u64 {
        1u64 << (self.sigma[species] - 1)
    }
}

/// `coeff * prod_j u_j^exponents[j]`, contributing to `target` only where
/// every gate domain and the target's home are present.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionTerm {
    pub target: usize,
    pub coeff: f64,
    pub gate: Vec<usize>,
    pub exponents: Vec<u32>,
}

impl ReactionTerm {
    pub fn new(target: usize, coeff: f64, gate: &[usize], factors: &[(usize, u32)], m: usize) -> Self {
        let mut exponents = vec![0; m];
        for &(j, e) in factors {
            exponents[j] += e;
        }
        let mut gate = gate.to_vec();
        gate.sort_unstable();
        gate.dedup();
        Self { target, coeff, gate, exponents }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn gate_mask(&self) -> u64 {
        self.gate.iter().fold(0, |acc, &d| acc | (1u64 << (d - 1)))
    }

    pub fn monomial(&self, u: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(u)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

/// A finite sum of gated monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionField {
    m: usize,
    terms: Vec<ReactionTerm>,
}

impl ReactionField {
    pub fn new(m: usize, terms: Vec<ReactionTerm>) -> Self {
        Self { m, terms }
    }

    pub fn zero(m: usize) -> Self {
        Self { m, terms: Vec::new() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> &[ReactionTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    /// Largest total degree; 0 for the zero field.
    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(ReactionTerm::degree).max().unwrap_or(0)
    }

    /// Multiplies every coefficient by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            m: self.m,
            terms: self
                .terms
                .iter()
                .map(|t| ReactionTerm { coeff: t.coeff * c, ..t.clone() })
                .collect(),
        }
    }

    /// Upper bound on `max_k sum_j |d f_k / d u_j|` over `[0, radius]^m`,
    /// from monomial derivative bounds with absolute coefficients.
    pub fn lipschitz_box_bound(&self, radius: f64) -> f64 {
        let mut per_target = vec![0.0; self.m];
        for t in &self.terms {
            let deg = t.degree();
            if deg == 0 {
                continue;
            }
            let scale = t.coeff.abs() * radius.powi(deg as i32 - 1);
            per_target[t.target] += scale * deg as f64;
        }
        per_target.into_iter().fold(0.0, f64::max)
    }
}

/// Per-species diffusion: a base value, overridden on listed region
/// signatures (exact active-set match).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub base: f64,
    pub regions: Vec<(Vec<usize>, f64)>,
}

impl DiffusionSpec {
    pub fn constant(d: f64) -> Self {
        Self { base: d, regions: Vec::new() }
    }

    pub fn value_at(&self, presence: u64) -> f64 {
        self.regions
            .iter()
            .find(|(ids, _)| ids.iter().fold(0u64, |acc, &d| acc | (1u64 << (d - 1))) == presence)
            .map_or(self.base, |&(_, v)| v)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.base).chain(self.regions.iter().map(|&(_, v)| v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionField {
    pub per_species: Vec<DiffusionSpec>,
}

impl DiffusionField {
    /// The global lower bound α.
    pub fn alpha(&self) -> f64 {
        self.per_species
            .iter()
            .flat_map(DiffusionSpec::values)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Constant(f64),
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`
    Gaussian { center: Vec<f64>, width: f64, amplitude: f64 },
}

impl InitialCondition {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Gaussian { center, width, amplitude } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Supremum over all of space (attained at the center for bumps).
    pub fn sup(&self) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Gaussian { amplitude, .. } => *amplitude,
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub domains: DomainSet,
    pub species: SpeciesMap,
    pub reaction: ReactionField,
    pub diffusion: DiffusionField,
    pub initial: Vec<InitialCondition>,
    pub epsilon: f64,
}

/// A reaction field specialized to the model's habitats for fast repeated
/// evaluation at a known presence mask.
#[derive(Debug, Clone)]
pub(crate) struct CompiledReaction {
    m: usize,
    home_bits: Vec<u64>,
    terms: Vec<CompiledTerm>,
}

#[derive(Debug, Clone)]
struct CompiledTerm {
    target: usize,
    coeff: f64,
    required: u64,
    factors: Vec<(usize, i32)>,
}

impl CompiledReaction {
    pub(crate) fn new(model: &ModelSpec) -> Self {
        let home_bits: Vec<u64> = (0..model.species.m()).map(|k| model.species.home_bit(k)).collect();
        let terms = model
            .reaction
            .terms()
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| CompiledTerm {
                target: t.target,
                coeff: t.coeff,
                required: t.gate_mask() | home_bits[t.target],
                factors: t
                    .exponents
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(j, &e)| (j, e as i32))
                    .collect(),
            })
            .collect();
        Self { m: model.species.m(), home_bits, terms }
    }

    /// f(x, Y u) at a point with presence mask `presence`; `u` must already
    /// be non-negative. Species absent at the point read as zero.
    pub(crate) fn eval(&self, presence: u64, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            if t.required & presence != t.required {
                continue;
            }
            let mut value = t.coeff;
            for &(j, e) in &t.factors {
                let uj = if self.home_bits[j] & presence != 0 { u[j] } else { 0.0 };
                value *= uj.powi(e);
            }
            out[t.target] += value;
        }
    }

    /// f^ε(x, u_+): positive part, evaluation, then division by
    /// `1 + ε Σ_j |f_j|`.
    pub(crate) fn eval_truncated(&self, presence: u64, u_raw: &[f64], epsilon: f64, scratch: &mut [f64], out: &mut [f64]) {
        for (s, &v) in scratch.iter_mut().zip(u_raw) {
            *s = v.max(0.0);
        }
        self.eval(presence, scratch, out);
        if epsilon > 0.0 {
            let total: f64 = out.iter().map(|v| v.abs()).sum();
            let divisor = 1.0 + epsilon * total;
            out.iter_mut().for_each(|v| *v /= divisor);
        }
    }

    pub(crate) fn m(&self) -> usize {
        self.m
    }
}

impl ModelSpec {
    pub fn new(
        domains: DomainSet,
        species: SpeciesMap,
        reaction: ReactionField,
        diffusion: DiffusionField,
        initial: Vec<InitialCondition>,
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let model = Self { domains, species, reaction, diffusion, initial, epsilon };
        model.validate()?;
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.species.m()
    }

    pub fn dim(&self) -> usize {
        self.domains.dim()
    }

    pub fn home_domain(&self, species: usize) -> &Domain {
        self.domains.get(self.species.home(species)).expect("validated home")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let m = self.species.m();
        let n = self.domains.len();
        if self.species.groups().len() != n {
            return Err(ModelError::Count { what: "species groups", expected: n, got: self.species.groups().len() });
        }
        if self.reaction.m() != m {
            return Err(ModelError::Count { what: "reaction components", expected: m, got: self.reaction.m() });
        }
        for (i, t) in self.reaction.terms().iter().enumerate() {
            if t.target >= m {
                return Err(ModelError::BadTarget { term: i, target: t.target });
            }
            if t.exponents.len() != m {
                return Err(ModelError::ExponentLength { term: i, len: t.exponents.len(), m });
            }
            if !t.coeff.is_finite() {
                return Err(ModelError::BadCoefficient { term: i });
            }
            if let Some(&bad) = t.gate.iter().find(|&&d| d == 0 || d > n) {
                return Err(ModelError::BadGate { term: i, domain: bad });
            }
            let target_home = self.species.home(t.target);
            let target_dom = self.domains.get(target_home).expect("validated");
            for (j, &e) in t.exponents.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let hj = self.species.home(j);
                let readable = hj == target_home || t.gate.contains(&hj);
                let overlapping = self.domains.get(hj).expect("validated").overlaps(target_dom);
                if !readable || !overlapping {
                    return Err(ModelError::MaskViolation { term: i, species: j });
                }
            }
        }
        if self.diffusion.per_species.len() != m {
            return Err(ModelError::Count { what: "diffusion entries", expected: m, got: self.diffusion.per_species.len() });
        }
        for (k, spec) in self.diffusion.per_species.iter().enumerate() {
            if spec.values().any(|v| !(v > 0.0) || !v.is_finite()) {
                return Err(ModelError::NonPositiveDiffusion { species: k });
            }
            for (ids, _) in &spec.regions {
                if let Some(&bad) = ids.iter().find(|&&d| d == 0 || d > n) {
                    return Err(ModelError::BadDiffusionRegion { species: k, domain: bad });
                }
            }
        }
        if self.initial.len() != m {
            return Err(ModelError::Count { what: "initial conditions", expected: m, got: self.initial.len() });
        }
        for (k, ic) in self.initial.iter().enumerate() {
            match ic {
                InitialCondition::Constant(v) => {
                    if !(*v >= 0.0) || !v.is_finite() {
                        return Err(ModelError::BadInitial { species: k });
                    }
                }
                InitialCondition::Gaussian { center, width, amplitude } => {
                    if center.len() != self.dim() {
                        return Err(ModelError::InitialDimension { species: k, got: center.len(), dim: self.dim() });
                    }
                    if !(*amplitude >= 0.0) || !amplitude.is_finite() || !(*width > 0.0) || !width.is_finite() {
                        return Err(ModelError::BadInitial { species: k });
                    }
                }
            }
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(ModelError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }

    pub fn max_initial_sup(&self) -> f64 {
        self.initial.iter().map(InitialCondition::sup).fold(0.0, f64::max)
    }

    pub(crate) fn compiled(&self) -> CompiledReaction {
        CompiledReaction::new(self)
    }

    /// Same model with every reaction coefficient multiplied by `c`.
    pub fn with_scaled_reaction(&self, c: f64) -> Self {
        Self { reaction: self.reaction.scaled(c), ..self.clone() }
    }
}

/// f(t, x, u) for a non-negative state; component k vanishes outside Ω_σ(k)
/// and reads only species present at `x`.
pub fn eval_reaction(model: &ModelSpec, _t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
    if u.len() != model.m() {
        return Err(ModelError::Count { what: "state components", expected: model.m(), got: u.len() });
    }
    if let Some((k, &v)) = u.iter().enumerate().find(|(_, &v)| v < 0.0 || v.is_nan()) {
        return Err(ModelError::NegativeState { species: k, value: v });
    }
    let mut out = vec![0.0; model.m()];
    model.compiled().eval(model.domains.presence(x), u, &mut out);
    Ok(out)
}

/// f^ε(t, x, u_+) with the model's ε.
pub fn truncate_reaction(model: &ModelSpec, t: f64, x: &[f64], u_raw: &[f64]) -> Vec<f64> {
    truncate_reaction_with(model, t, x, u_raw, model.epsilon)
}

pub fn truncate_reaction_with(model: &ModelSpec, _t: f64, x: &[f64], u_raw: &[f64], epsilon: f64) -> Vec<f64> {
    let m = model.m();
    let mut scratch = vec![0.0; m];
    let mut out = vec![0.0; m];
    model
        .compiled()
        .eval_truncated(model.domains.presence(x), u_raw, epsilon, &mut scratch, &mut out);
    out
}

pub fn lipschitz_bound(model: &ModelSpec, box_radius: f64) -> f64 {
    model.reaction.lipschitz_box_bound(box_radius)
}

/// Named numeric overrides for the built-in models.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuiltinParams {
    values: BTreeMap<String, f64>,
}

impl BuiltinParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn insert(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    fn resolve(&self, model: &str, defaults: &[(&str, f64)]) -> Result<BTreeMap<String, f64>, ModelError> {
        let mut out: BTreeMap<String, f64> = defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect();
        for (k, &v) in &self.values {
            match out.get_mut(k) {
                Some(slot) => *slot = v,
                None => return Err(ModelError::UnknownParam { model: model.to_string(), key: k.clone() }),
            }
        }
        Ok(out)
    }
}

fn square(id: usize, lo: f64, hi: f64) -> Result<Domain, GeometryError> {
    Domain::new(id, vec![lo, lo], vec![hi, hi])
}

pub const BUILTIN_NAMES: [&str; 3] = ["ex1", "ex2", "ex3"];

/// The three example systems: cross-species disease transmission on a chain
/// of three habitats (`ex1`), A + B ⇌ C on two overlapping squares (`ex2`),
/// and the one-dimensional quadratic system on (0,2), (1,3) (`ex3`).
pub fn builtin(name: &str, params: &BuiltinParams) -> Result<ModelSpec, ModelError> {
    match name {
        "ex1" => builtin_ex1(params),
        "ex2" => builtin_ex2(params),
        "ex3" => builtin_ex3(params),
        other => Err(ModelError::UnknownBuiltin(other.to_string())),
    }
}

const EX1_DEFAULTS: &[(&str, f64)] = &[
    ("k1", 1.0),
    ("k2", 1.0),
    ("k3", 1.0),
    ("k4", 1.0),
    ("lambda1", 0.5),
    ("lambda2", 0.5),
    ("lambda3", 1.0),
    ("d1", 0.1),
    ("d2", 0.1),
    ("d3", 0.2),
    ("d4", 0.2),
    ("d5", 0.1),
    ("d6", 0.1),
    ("amp1", 2.0),
    ("amp2", 0.5),
    ("amp3", 1.0),
    ("amp4", 0.5),
    ("amp5", 1.0),
    ("amp6", 0.5),
];

fn builtin_ex1(params: &BuiltinParams) -> Result<ModelSpec, ModelError> {
    let p = params.resolve("ex1", EX1_DEFAULTS)?;
    let domains = DomainSet::new(vec![square(1, 0.0, 2.0)?, square(2, 1.0, 3.0)?, square(3, 2.5, 4.5)?])?;
    let species = SpeciesMap::new(vec![1, 1, 2, 2, 3, 3], 3)?;
    let m = 6;
    // u = (phi, psi, alpha, beta, v, w), 0-based indices below.
    let t = |target, coeff, gate: &[usize], factors: &[(usize, u32)]| ReactionTerm::new(target, coeff, gate, factors, m);
    let (k1, k2, k3, k4) = (p["k1"], p["k2"], p["k3"], p["k4"]);
    let (l1, l2, l3) = (p["lambda1"], p["lambda2"], p["lambda3"]);
    let terms = vec![
        t(0, -k1, &[1, 2], &[(0, 1), (3, 1)]),
        t(0, l1, &[1], &[(1, 1)]),
        t(1, k1, &[1, 2], &[(0, 1), (3, 1)]),
        t(1, -l1, &[1], &[(1, 1)]),
        t(2, -k2, &[1, 2], &[(2, 1), (1, 1)]),
        t(2, -k3, &[2, 3], &[(2, 1), (4, 1)]),
        t(2, l2, &[2], &[(3, 1)]),
        t(3, k2, &[1, 2], &[(2, 1), (1, 1)]),
        t(3, k3, &[2, 3], &[(2, 1), (4, 1)]),
        t(3, -l2, &[2], &[(3, 1)]),
        t(4, -k4, &[2, 3], &[(4, 1), (3, 1)]),
        t(5, k4, &[2, 3], &[(4, 1), (3, 1)]),
        t(5, -l3, &[3], &[(5, 1)]),
    ];
    let diffusion = DiffusionField {
        per_species: (1..=6).map(|i| DiffusionSpec::constant(p[&format!("d{i}")])).collect(),
    };
    // Susceptible densities are uniform; the infected ones start as bumps.
    let bump = |cx: f64, cy: f64, amp: f64| InitialCondition::Gaussian { center: vec![cx, cy], width: 0.4, amplitude: amp };
    let initial = vec![
        InitialCondition::Constant(p["amp1"]),
        bump(0.75, 0.75, p["amp2"]),
        InitialCondition::Constant(p["amp3"]),
        bump(2.0, 2.0, p["amp4"]),
        InitialCondition::Constant(p["amp5"]),
        bump(3.5, 3.5, p["amp6"]),
    ];
    ModelSpec::new(domains, species, ReactionField::new(m, terms), diffusion, initial, DEFAULT_EPSILON)
}

const EX2_DEFAULTS: &[(&str, f64)] = &[
    ("a", 1.0),
    ("b", 1.0),
    ("d1", 0.2),
    ("d2", 0.1),
    ("d3", 0.05),
    ("amp1", 2.0),
    ("amp2", 1.0),
    ("amp3", 0.5),
];

fn builtin_ex2(params: &BuiltinParams) -> Result<ModelSpec, ModelError> {
    let p = params.resolve("ex2", EX2_DEFAULTS)?;
    let domains = DomainSet::new(vec![square(1, 0.0, 2.0)?, square(2, 1.0, 3.0)?])?;
    let species = SpeciesMap::new(vec![1, 2, 2], 2)?;
    let m = 3;
    let (a, b) = (p["a"], p["b"]);
    let gate = [1, 2];
    let t = |target, coeff, factors: &[(usize, u32)]| ReactionTerm::new(target, coeff, &gate, factors, m);
    let terms = vec![
        t(0, b, &[(2, 1)]),
        t(0, -a, &[(0, 1), (1, 1)]),
        t(1, b, &[(2, 1)]),
        t(1, -a, &[(0, 1), (1, 1)]),
        t(2, a, &[(0, 1), (1, 1)]),
        t(2, -b, &[(2, 1)]),
    ];
    let diffusion = DiffusionField {
        per_species: (1..=3).map(|i| DiffusionSpec::constant(p[&format!("d{i}")])).collect(),
    };
    let initial = vec![
        InitialCondition::Gaussian { center: vec![1.0, 1.0], width: 0.5, amplitude: p["amp1"] },
        InitialCondition::Constant(p["amp2"]),
        InitialCondition::Gaussian { center: vec![2.0, 2.0], width: 0.5, amplitude: p["amp3"] },
    ];
    ModelSpec::new(domains, species, ReactionField::new(m, terms), diffusion, initial, DEFAULT_EPSILON)
}

const EX3_DEFAULTS: &[(&str, f64)] = &[
    ("k", 1.0),
    ("d1", 0.1),
    ("d2", 0.1),
    ("amp1", 1.0),
    ("amp2", 1.0),
];

fn builtin_ex3(params: &BuiltinParams) -> Result<ModelSpec, ModelError> {
    let p = params.resolve("ex3", EX3_DEFAULTS)?;
    let domains = DomainSet::new(vec![Domain::new(1, vec![0.0], vec![2.0])?, Domain::new(2, vec![1.0], vec![3.0])?])?;
    let species = SpeciesMap::new(vec![1, 2], 2)?;
    let m = 2;
    let k = p["k"];
    let gate = [1, 2];
    let t = |target, coeff, factors: &[(usize, u32)]| ReactionTerm::new(target, coeff, &gate, factors, m);
    let terms = vec![
        t(0, k, &[(1, 2)]),
        t(0, -k, &[(0, 1), (1, 1)]),
        t(1, k, &[(0, 1), (1, 1)]),
        t(1, -k, &[(1, 2)]),
    ];
    let diffusion = DiffusionField {
        per_species: vec![DiffusionSpec::constant(p["d1"]), DiffusionSpec::constant(p["d2"])],
    };
    let initial = vec![
        InitialCondition::Gaussian { center: vec![0.5], width: 0.3, amplitude: p["amp1"] },
        InitialCondition::Gaussian { center: vec![2.5], width: 0.3, amplitude: p["amp2"] },
    ];
    ModelSpec::new(domains, species, ReactionField::new(m, terms), diffusion, initial, DEFAULT_EPSILON)
}
