//! Line-oriented model files. One directive per line, `#` starts a comment:
//!
//! ```text
//! domain 1 = [0,2]x[0,2]
//! species 1 on 1 init gauss 1 1 0.5 2
//! diffuse 1 = 0.2 region 1,2 = 0.1
//! react 1 += -1 * u1^1 u2^1 gate 1 2
//! solve dt=0.001 T=2 cells=64,64 eps=0.001
//! check Umax=100 samples=200
//! energy p=2,4 theta=auto
//! mass b=1,1,2 K1=0 K2=0
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::checker::CheckerConfig;
use crate::energy::{theta_pd_check, EnergyConfig, EnergyError, MassWitness};
use crate::geometry::{Domain, DomainSet};
use crate::model::{
    builtin, BuiltinParams, DiffusionField, DiffusionSpec, InitialCondition, ModelError, ModelSpec, ReactionField, ReactionTerm,
    SpeciesMap, DEFAULT_EPSILON,
};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: `{directive}`: {message}")]
    Semantic { line: usize, directive: String, message: String },
    #[error("{0}")]
    Model(String),
    #[error("no domains")]
    NoDomains,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSetting {
    Auto,
    /// θ per habitat group, indexed by domain id − 1.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergySettings {
    pub orders: Vec<u32>,
    pub theta: ThetaSetting,
}

impl EnergySettings {
    pub fn configs(&self, model: &ModelSpec) -> Result<Vec<EnergyConfig>, EnergyError> {
        self.orders
            .iter()
            .map(|&p| match &self.theta {
                ThetaSetting::Auto => EnergyConfig::auto(model, p),
                ThetaSetting::Explicit(theta) => {
                    for t in theta.iter().filter(|t| !t.is_empty()) {
                        theta_pd_check(t, p)?;
                    }
                    Ok(EnergyConfig { p, theta: theta.clone() })
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub model: ModelSpec,
    pub solver: Option<SolverConfig>,
    pub checker: Option<CheckerConfig>,
    pub energy: Option<EnergySettings>,
    pub mass: Option<MassWitness>,
}

impl ConfigDocument {
    pub fn solver_or_default(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_else(|| SolverConfig {
            cells_per_axis: vec![32; self.model.dim()],
            epsilon: self.model.epsilon,
            ..SolverConfig::default()
        })
    }

    pub fn checker_or_default(&self) -> CheckerConfig {
        self.checker.clone().unwrap_or_default()
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &line[s..i], column: line[..s].chars().count() + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &line[s..], column: line[..s].chars().count() + 1 });
    }
    out
}

struct Cursor<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    pos: usize,
    end_column: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, column: usize, message: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError::Syntax { line: self.line, column, message: message.into() })
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end_column, |t| t.column)
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|t| t.text)
    }

    fn next(&mut self, what: &str) -> Result<(&'a str, usize), ConfigError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok((t.text, t.column))
            }
            None => self.err(self.end_column, format!("expected {what}")),
        }
    }

    fn expect(&mut self, word: &str) -> Result<(), ConfigError> {
        let column = self.column();
        let (t, _) = self.next(&format!("`{word}`"))?;
        if t == word {
            Ok(())
        } else {
            self.err(column, format!("expected `{word}`, found `{t}`"))
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, ConfigError> {
        let (t, column) = self.next(what)?;
        parse_f64(t).ok_or(()).or_else(|_| self.err(column, format!("expected {what}, found `{t}`")))
    }

    fn index(&mut self, what: &str) -> Result<usize, ConfigError> {
        let (t, column) = self.next(what)?;
        match t.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => self.err(column, format!("expected {what} (a positive integer), found `{t}`")),
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn finish(&self) -> Result<(), ConfigError> {
        match self.tokens.get(self.pos) {
            Some(t) => self.err(t.column, format!("unexpected `{}`", t.text)),
            None => Ok(()),
        }
    }
}

fn parse_f64(t: &str) -> Option<f64> {
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_list<T>(text: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    text.split(',').map(|s| item(s.trim())).collect()
}

fn parse_ids(text: &str) -> Option<Vec<usize>> {
    parse_list(text, |s| s.parse::<usize>().ok().filter(|&v| v >= 1))
}

/// `[lo,hi]` or `[lo,hi]x[lo,hi]`, whitespace already removed.
fn parse_box(text: &str) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in text.split('x') {
        let inner = part
            .strip_prefix('[')
            .and_then(|p| p.strip_suffix(']'))
            .ok_or_else(|| format!("expected an interval like [lo,hi], found `{part}`"))?;
        let bounds = parse_list(inner, parse_f64).filter(|b| b.len() == 2).ok_or_else(|| format!("bad interval `{part}`"))?;
        lo.push(bounds[0]);
        hi.push(bounds[1]);
    }
    Ok((lo, hi))
}

struct Directive {
    line: usize,
    text: String,
}

#[derive(Default)]
struct Pending {
    domains: BTreeMap<usize, (Domain, Directive)>,
    species: BTreeMap<usize, (usize, InitialCondition, Directive)>,
    diffusion: BTreeMap<usize, (DiffusionSpec, Directive)>,
    terms: Vec<(ReactionDraft, Directive)>,
    solver: Option<(SolverDraft, Directive)>,
    checker: Option<CheckerConfig>,
    energy: Option<EnergySettings>,
    mass: Option<MassWitness>,
}

struct ReactionDraft {
    target: usize,
    coeff: f64,
    factors: Vec<(usize, u32)>,
    gate: Vec<usize>,
}

struct SolverDraft {
    config: SolverConfig,
}

fn semantic(d: &Directive, message: impl Into<String>) -> ConfigError {
    ConfigError::Semantic { line: d.line, directive: d.text.clone(), message: message.into() }
}

fn key_values<'a>(cur: &mut Cursor<'a>, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str, usize)>, ConfigError> {
    let mut out: Vec<(&str, &str, usize)> = Vec::new();
    while !cur.done() {
        let (t, column) = cur.next("key=value")?;
        let Some((k, v)) = t.split_once('=') else {
            return cur.err(column, format!("expected key=value, found `{t}`"));
        };
        if !allowed.contains(&k) {
            return cur.err(column, format!("unknown key `{k}` (expected one of {})", allowed.join(", ")));
        }
        if out.iter().any(|(seen, _, _)| *seen == k) {
            return cur.err(column, format!("duplicate key `{k}`"));
        }
        out.push((k, v, column + k.len() + 1));
    }
    Ok(out)
}

pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let mut p = Pending::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        if tokens.is_empty() {
            continue;
        }
        let directive = Directive { line, text: content.trim().to_string() };
        let mut cur = Cursor { line, tokens, pos: 0, end_column: content.trim_end().chars().count() + 1 };
        let (word, column) = cur.next("directive")?;
        match word {
            "domain" => parse_domain(&mut cur, &mut p, directive)?,
            "species" => parse_species(&mut cur, &mut p, directive)?,
            "diffuse" => parse_diffuse(&mut cur, &mut p, directive)?,
            "react" => parse_react(&mut cur, &mut p, directive)?,
            "solve" => parse_solve(&mut cur, &mut p, directive)?,
            "check" => parse_check(&mut cur, &mut p, &directive)?,
            "energy" => parse_energy(&mut cur, &mut p, &directive)?,
            "mass" => parse_mass(&mut cur, &mut p, &directive)?,
            other => return cur.err(column, format!("unknown directive `{other}`")),
        }
    }
    assemble(p)
}

fn parse_domain(cur: &mut Cursor, p: &mut Pending, d: Directive) -> Result<(), ConfigError> {
    let id = cur.index("domain id")?;
    cur.expect("=")?;
    let column = cur.column();
    let mut spec = String::new();
    while let Some(t) = cur.peek() {
        spec.push_str(t);
        cur.pos += 1;
    }
    if spec.is_empty() {
        return cur.err(column, "expected a box like [lo,hi]x[lo,hi]");
    }
    let (lo, hi) = parse_box(&spec).or_else(|m| cur.err(column, m))?;
    let domain = Domain::new(id, lo, hi).map_err(|e| semantic(&d, e.to_string()))?;
    if p.domains.contains_key(&id) {
        return Err(semantic(&d, format!("domain {id} declared twice")));
    }
    p.domains.insert(id, (domain, d));
    Ok(())
}

fn parse_species(cur: &mut Cursor, p: &mut Pending, d: Directive) -> Result<(), ConfigError> {
    let k = cur.index("species index")?;
    cur.expect("on")?;
    let home = cur.index("domain id")?;
    cur.expect("init")?;
    let column = cur.column();
    let (kind, _) = cur.next("`const` or `gauss`")?;
    let initial = match kind {
        "const" => {
            let v = cur.number("value")?;
            cur.finish()?;
            InitialCondition::Constant(v)
        }
        "gauss" => {
            let mut values = Vec::new();
            let mut col = cur.column();
            while !cur.done() {
                col = cur.column();
                values.push(cur.number("number")?);
            }
            if values.len() < 3 {
                return cur.err(col, "gauss needs center coordinates, width and amplitude");
            }
            let amplitude = values.pop().expect("len checked");
            let width = values.pop().expect("len checked");
            InitialCondition::Gaussian { center: values, width, amplitude }
        }
        other => return cur.err(column, format!("expected `const` or `gauss`, found `{other}`")),
    };
    if p.species.contains_key(&k) {
        return Err(semantic(&d, format!("species {k} declared twice")));
    }
    p.species.insert(k, (home, initial, d));
    Ok(())
}

fn parse_diffuse(cur: &mut Cursor, p: &mut Pending, d: Directive) -> Result<(), ConfigError> {
    let k = cur.index("species index")?;
    cur.expect("=")?;
    let base = cur.number("diffusion value")?;
    let mut spec = DiffusionSpec::constant(base);
    while !cur.done() {
        cur.expect("region")?;
        let column = cur.column();
        let mut ids_text = String::new();
        while let Some(t) = cur.peek() {
            if t == "=" {
                break;
            }
            if !ids_text.is_empty() && !ids_text.ends_with(',') && !t.starts_with(',') {
                ids_text.push(',');
            }
            ids_text.push_str(t);
            cur.pos += 1;
        }
        let mut ids = parse_ids(&ids_text).filter(|v| !v.is_empty()).ok_or(()).or_else(|_| cur.err(column, "expected domain ids"))?;
        ids.sort_unstable();
        ids.dedup();
        cur.expect("=")?;
        let v = cur.number("diffusion value")?;
        spec.regions.push((ids, v));
    }
    if p.diffusion.contains_key(&k) {
        return Err(semantic(&d, format!("diffusion for species {k} declared twice")));
    }
    p.diffusion.insert(k, (spec, d));
    Ok(())
}

fn parse_react(cur: &mut Cursor, p: &mut Pending, d: Directive) -> Result<(), ConfigError> {
    let target = cur.index("species index")?;
    cur.expect("+=")?;
    let coeff = cur.number("coefficient")?;
    let mut factors = Vec::new();
    let mut gate = Vec::new();
    if cur.peek() == Some("*") {
        cur.pos += 1;
        while let Some(t) = cur.peek() {
            if t == "gate" {
                break;
            }
            let column = cur.column();
            cur.pos += 1;
            let body = t.strip_prefix('u').ok_or(()).or_else(|_| cur.err(column, format!("expected a factor like u2^1, found `{t}`")))?;
            let (j, e) = body.split_once('^').unwrap_or((body, "1"));
            let j = j.parse::<usize>().ok().filter(|&j| j >= 1);
            let e = e.parse::<u32>().ok();
            match (j, e) {
                (Some(j), Some(e)) => factors.push((j, e)),
                _ => return cur.err(column, format!("expected a factor like u2^1, found `{t}`")),
            }
        }
        if factors.is_empty() {
            return cur.err(cur.column(), "expected at least one factor after `*`");
        }
    }
    if !cur.done() {
        cur.expect("gate")?;
        while !cur.done() {
            let (t, column) = cur.next("domain id")?;
            for piece in t.split(',').filter(|s| !s.is_empty()) {
                match piece.parse::<usize>() {
                    Ok(id) if id >= 1 => gate.push(id),
                    _ => return cur.err(column, format!("expected domain ids, found `{t}`")),
                }
            }
        }
    }
    p.terms.push((ReactionDraft { target, coeff, factors, gate }, d));
    Ok(())
}

fn parse_solve(cur: &mut Cursor, p: &mut Pending, d: Directive) -> Result<(), ConfigError> {
    let kv = key_values(cur, &["dt", "T", "cells", "eps", "tol", "every", "floor"])?;
    let mut cfg = SolverConfig::default();
    let mut have = (false, false, false);
    for (k, v, column) in kv {
        let num = || parse_f64(v).ok_or(ConfigError::Syntax { line: d.line, column, message: format!("bad number `{v}` for {k}") });
        match k {
            "dt" => {
                cfg.dt = num()?;
                have.0 = true;
            }
            "T" => {
                cfg.t_end = num()?;
                have.1 = true;
            }
            "cells" => {
                cfg.cells_per_axis = parse_list(v, |s| s.parse::<usize>().ok().filter(|&c| c > 0))
                    .ok_or(ConfigError::Syntax { line: d.line, column, message: format!("bad cell counts `{v}`") })?;
                have.2 = true;
            }
            "eps" => cfg.epsilon = num()?,
            "tol" => cfg.linear_tol = num()?,
            "every" => {
                cfg.record_every = v
                    .parse::<usize>()
                    .ok()
                    .filter(|&e| e > 0)
                    .ok_or(ConfigError::Syntax { line: d.line, column, message: format!("bad step count `{v}`") })?
            }
            "floor" => cfg.nonneg_floor = num()?,
            _ => unreachable!("filtered by key_values"),
        }
    }
    let missing: Vec<&str> = [("dt", have.0), ("T", have.1), ("cells", have.2)].iter().filter(|(_, h)| !h).map(|(k, _)| *k).collect();
    if !missing.is_empty() {
        return Err(semantic(&d, format!("missing {}", missing.join(", "))));
    }
    cfg.validate().map_err(|e| semantic(&d, e.to_string()))?;
    if p.solver.is_some() {
        return Err(semantic(&d, "solve declared twice"));
    }
    p.solver = Some((SolverDraft { config: cfg }, d));
    Ok(())
}

fn parse_check(cur: &mut Cursor, p: &mut Pending, d: &Directive) -> Result<(), ConfigError> {
    let kv = key_values(cur, &["Umax", "samples", "seed", "lower"])?;
    let mut cfg = CheckerConfig::default();
    for (k, v, column) in kv {
        let bad = |what: &str| ConfigError::Syntax { line: d.line, column, message: format!("bad {what} `{v}` for {k}") };
        match k {
            "Umax" => cfg.u_max = parse_f64(v).ok_or_else(|| bad("number"))?,
            "samples" => cfg.samples = v.parse().map_err(|_| bad("count"))?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad("seed"))?,
            "lower" => {
                cfg.nonneg_lower = match v {
                    "free" => false,
                    "nonneg" => true,
                    _ => return Err(bad("value (free|nonneg)")),
                }
            }
            _ => unreachable!("filtered by key_values"),
        }
    }
    cfg.validate().map_err(|e| semantic(d, e.to_string()))?;
    p.checker = Some(cfg);
    Ok(())
}

fn parse_energy(cur: &mut Cursor, p: &mut Pending, d: &Directive) -> Result<(), ConfigError> {
    let kv = key_values(cur, &["p", "theta"])?;
    let mut orders = None;
    let mut theta = ThetaSetting::Auto;
    for (k, v, column) in kv {
        let bad = |m: String| ConfigError::Syntax { line: d.line, column, message: m };
        match k {
            "p" => {
                orders = Some(
                    parse_list(v, |s| s.parse::<u32>().ok().filter(|&q| q >= 2)).ok_or_else(|| bad(format!("bad energy orders `{v}` (integers ≥ 2)")))?,
                )
            }
            "theta" if v == "auto" => theta = ThetaSetting::Auto,
            "theta" => {
                let groups = v
                    .split(';')
                    .map(|g| if g.trim().is_empty() { Some(Vec::new()) } else { parse_list(g, parse_f64) })
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad(format!("bad theta `{v}`")))?;
                theta = ThetaSetting::Explicit(groups);
            }
            _ => unreachable!("filtered by key_values"),
        }
    }
    let orders = orders.ok_or_else(|| semantic(d, "missing p"))?;
    p.energy = Some(EnergySettings { orders, theta });
    Ok(())
}

fn parse_mass(cur: &mut Cursor, p: &mut Pending, d: &Directive) -> Result<(), ConfigError> {
    let kv = key_values(cur, &["b", "K1", "K2"])?;
    let mut w = MassWitness { b: Vec::new(), k1: 0.0, k2: 0.0 };
    for (k, v, column) in kv {
        let bad = || ConfigError::Syntax { line: d.line, column, message: format!("bad value `{v}` for {k}") };
        match k {
            "b" => w.b = parse_list(v, |s| parse_f64(s).filter(|&b| b > 0.0)).ok_or_else(bad)?,
            "K1" => w.k1 = parse_f64(v).ok_or_else(bad)?,
            "K2" => w.k2 = parse_f64(v).ok_or_else(bad)?,
            _ => unreachable!("filtered by key_values"),
        }
    }
    if w.b.is_empty() {
        return Err(semantic(d, "missing b"));
    }
    p.mass = Some(w);
    Ok(())
}

fn contiguous<T>(map: &BTreeMap<usize, T>) -> Option<usize> {
    (1..=map.len()).find(|k| !map.contains_key(k))
}

fn assemble(p: Pending) -> Result<ConfigDocument, ConfigError> {
    if p.domains.is_empty() {
        return Err(ConfigError::NoDomains);
    }
    if let Some(gap) = contiguous(&p.domains) {
        let (_, d) = p.domains.values().next_back().expect("non-empty");
        return Err(semantic(d, format!("domain ids must be 1..{}; {gap} is missing", p.domains.len())));
    }
    let n = p.domains.len();
    let dim = p.domains[&1].0.dim();
    for (dom, d) in p.domains.values() {
        if dom.dim() != dim {
            return Err(semantic(d, format!("dimension {} differs from domain 1 ({dim})", dom.dim())));
        }
    }
    let domains = DomainSet::new(p.domains.values().map(|(dom, _)| dom.clone()).collect()).map_err(|e| ConfigError::Model(e.to_string()))?;
    if p.species.is_empty() {
        return Err(ConfigError::Model("no species".into()));
    }
    if let Some(gap) = contiguous(&p.species) {
        return Err(ConfigError::Model(format!("species must be numbered 1..{}; {gap} is missing", p.species.len())));
    }
    let m = p.species.len();
    for (home, _, d) in p.species.values() {
        let home = *home;
        if home > n {
            return Err(semantic(d, format!("domain {home} does not exist")));
        }
    }
    let sigma: Vec<usize> = p.species.values().map(|(h, _, _)| *h).collect();
    let species = SpeciesMap::new(sigma, n).map_err(|e| ConfigError::Model(e.to_string()))?;
    let initial: Vec<InitialCondition> = p.species.values().map(|(_, ic, _)| ic.clone()).collect();
    for (&k, (_, d)) in &p.diffusion {
        if k > m {
            return Err(semantic(d, format!("species {k} does not exist")));
        }
    }
    let mut per_species = Vec::with_capacity(m);
    for k in 1..=m {
        match p.diffusion.get(&k) {
            Some((spec, _)) => per_species.push(spec.clone()),
            None => return Err(semantic(&p.species[&k].2, format!("no diffuse directive for species {k}"))),
        }
    }
    let mut terms = Vec::with_capacity(p.terms.len());
    for (t, d) in &p.terms {
        if t.target > m {
            return Err(semantic(d, format!("species {} does not exist", t.target)));
        }
        if let Some(&(j, _)) = t.factors.iter().find(|(j, _)| *j > m) {
            return Err(semantic(d, format!("species {j} does not exist")));
        }
        if let Some(&g) = t.gate.iter().find(|&&g| g > n) {
            return Err(semantic(d, format!("domain {g} does not exist")));
        }
        let factors: Vec<(usize, u32)> = t.factors.iter().map(|&(j, e)| (j - 1, e)).collect();
        terms.push(ReactionTerm::new(t.target - 1, t.coeff, &t.gate, &factors, m));
    }
    let epsilon = p.solver.as_ref().map_or(DEFAULT_EPSILON, |(s, _)| s.config.epsilon);
    let model = ModelSpec::new(domains, species, ReactionField::new(m, terms), DiffusionField { per_species }, initial, epsilon)
        .map_err(|e| locate_model_error(e, &p))?;
    if let Some((s, d)) = &p.solver {
        if s.config.cells_per_axis.len() != dim {
            return Err(semantic(d, format!("cells needs {dim} entries")));
        }
    }
    if let Some(w) = &p.mass {
        if w.b.len() != m {
            return Err(ConfigError::Model(format!("mass: b needs {m} entries, got {}", w.b.len())));
        }
    }
    if let Some(EnergySettings { theta: ThetaSetting::Explicit(t), .. }) = &p.energy {
        let want = model.species.n_per_domain();
        let got: Vec<usize> = t.iter().map(Vec::len).collect();
        if got != want {
            return Err(ConfigError::Model(format!("energy: theta group sizes {got:?} do not match species per domain {want:?}")));
        }
    }
    Ok(ConfigDocument {
        model,
        solver: p.solver.map(|(s, _)| s.config),
        checker: p.checker,
        energy: p.energy,
        mass: p.mass,
    })
}

fn locate_model_error(e: ModelError, p: &Pending) -> ConfigError {
    let term_line = |i: usize| p.terms.get(i).map(|(_, d)| d);
    let species_line = |k: usize| p.species.get(&(k + 1)).map(|(_, _, d)| d);
    let diffuse_line = |k: usize| p.diffusion.get(&(k + 1)).map(|(_, d)| d);
    let directive = match &e {
        ModelError::BadTarget { term, .. }
        | ModelError::ExponentLength { term, .. }
        | ModelError::BadGate { term, .. }
        | ModelError::MaskViolation { term, .. }
        | ModelError::BadCoefficient { term } => term_line(*term),
        ModelError::NonPositiveDiffusion { species } | ModelError::BadDiffusionRegion { species, .. } => diffuse_line(*species),
        ModelError::BadInitial { species } | ModelError::InitialDimension { species, .. } => species_line(*species),
        _ => None,
    };
    match directive {
        Some(d) => semantic(d, e.to_string()),
        None => ConfigError::Model(e.to_string()),
    }
}

/// Shortest decimal that parses back to the same f64.
struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if v == v.trunc() && v.abs() < 1e15 {
            write!(f, "{}", v as i64)
        } else {
            write!(f, "{v:?}")
        }
    }
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

/// Canonical text for a document; [`parse_config`] reads it back to an equal
/// document.
pub fn emit(doc: &ConfigDocument) -> String {
    use fmt::Write;
    let model = &doc.model;
    let mut out = String::new();
    for d in model.domains.iter() {
        let boxes = join(d.lo().iter().zip(d.hi()).map(|(a, b)| format!("[{},{}]", Num(*a), Num(*b))), "x");
        let _ = writeln!(out, "domain {} = {boxes}", d.id());
    }
    for k in 0..model.m() {
        let init = match &model.initial[k] {
            InitialCondition::Constant(v) => format!("const {}", Num(*v)),
            InitialCondition::Gaussian { center, width, amplitude } => {
                format!("gauss {} {} {}", join(center.iter().map(|&c| Num(c)), " "), Num(*width), Num(*amplitude))
            }
        };
        let _ = writeln!(out, "species {} on {} init {init}", k + 1, model.species.home(k));
    }
    for (k, spec) in model.diffusion.per_species.iter().enumerate() {
        let _ = write!(out, "diffuse {} = {}", k + 1, Num(spec.base));
        for (ids, v) in &spec.regions {
            let _ = write!(out, " region {} = {}", join(ids, ","), Num(*v));
        }
        out.push('\n');
    }
    for t in model.reaction.terms() {
        let _ = write!(out, "react {} += {}", t.target + 1, Num(t.coeff));
        let factors: Vec<String> = t.exponents.iter().enumerate().filter(|(_, &e)| e > 0).map(|(j, e)| format!("u{}^{e}", j + 1)).collect();
        if !factors.is_empty() {
            let _ = write!(out, " * {}", factors.join(" "));
        }
        if !t.gate.is_empty() {
            let _ = write!(out, " gate {}", join(&t.gate, " "));
        }
        out.push('\n');
    }
    if let Some(s) = &doc.solver {
        let _ = writeln!(
            out,
            "solve dt={} T={} cells={} eps={} tol={} every={} floor={}",
            Num(s.dt),
            Num(s.t_end),
            join(&s.cells_per_axis, ","),
            Num(s.epsilon),
            Num(s.linear_tol),
            s.record_every,
            Num(s.nonneg_floor)
        );
    }
    if let Some(c) = &doc.checker {
        let lower = if c.nonneg_lower { "nonneg" } else { "free" };
        let _ = writeln!(out, "check Umax={} samples={} seed={} lower={lower}", Num(c.u_max), c.samples, c.seed);
    }
    if let Some(e) = &doc.energy {
        let theta = match &e.theta {
            ThetaSetting::Auto => "auto".to_string(),
            ThetaSetting::Explicit(groups) => join(groups.iter().map(|g| join(g.iter().map(|&v| Num(v)), ",")), ";"),
        };
        let _ = writeln!(out, "energy p={} theta={theta}", join(&e.orders, ","));
    }
    if let Some(w) = &doc.mass {
        let _ = writeln!(out, "mass b={} K1={} K2={}", join(w.b.iter().map(|&v| Num(v)), ","), Num(w.k1), Num(w.k2));
    }
    out
}

/// Default run settings for each built-in example.
pub fn builtin_document(name: &str, params: &BuiltinParams) -> Result<ConfigDocument, ModelError> {
    let model = builtin(name, params)?;
    let (cells, t_end, every) = match name {
        "ex1" => (vec![32, 32], 5.0, 500),
        "ex2" => (vec![64, 64], 2.0, 500),
        _ => (vec![200], 2.0, 500),
    };
    let solver = SolverConfig { dt: 1e-3, t_end, cells_per_axis: cells, epsilon: model.epsilon, record_every: every, ..SolverConfig::default() };
    Ok(ConfigDocument {
        model,
        solver: Some(solver),
        checker: Some(CheckerConfig::default()),
        energy: Some(EnergySettings { orders: vec![2, 4], theta: ThetaSetting::Auto }),
        mass: None,
    })
}

pub fn builtin_config(name: &str, params: &BuiltinParams) -> Result<String, ModelError> {
    let mut text = format!("# built-in model {name}\n");
    text.push_str(&emit(&builtin_document(name, params)?));
    Ok(text)
}
