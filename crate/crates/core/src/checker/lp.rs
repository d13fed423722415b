//! Small dense linear programs: two-phase simplex with Bland's rule, plus a
//! row-generation driver for problems with many more constraints than
//! variables (one constraint per sample point).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<f64>, cmp: Cmp, rhs: f64) -> Self {
        Self { coeffs, cmp, rhs }
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        match self.cmp {
            Cmp::Le => (lhs - self.rhs).max(0.0),
            Cmp::Ge => (self.rhs - lhs).max(0.0),
            Cmp::Eq => (lhs - self.rhs).abs(),
        }
    }

    /// Magnitude used to make violation tests relative.
    pub fn scale(&self, x: &[f64]) -> f64 {
        1.0 + self.rhs.abs() + self.coeffs.iter().zip(x).map(|(a, v)| (a * v).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&[f64], f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }
}

/// minimize c·x subject to rows, with each variable either free or bounded
/// below.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    lower: Vec<Option<f64>>,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

impl LinearProgram {
    /// `n` variables, all with lower bound 0 and zero objective.
    pub fn new(n: usize) -> Self {
        Self { lower: vec![Some(0.0); n], objective: vec![0.0; n], rows: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn set_free(&mut self, j: usize) {
        self.lower[j] = None;
    }

    pub fn set_lower(&mut self, j: usize, lo: f64) {
        self.lower[j] = Some(lo);
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.n());
        self.objective = c;
    }

    pub fn add_row(&mut self, row: Row) {
        assert_eq!(row.coeffs.len(), self.n());
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.n();
        // Column map: x_j = lo_j + y_a, or x_j = y_a - y_b when free.
        let mut cols: Vec<(usize, f64)> = Vec::new();
        let mut shift = vec![0.0; n];
        for j in 0..n {
            match self.lower[j] {
                Some(lo) => {
                    shift[j] = lo;
                    cols.push((j, 1.0));
                }
                None => {
                    cols.push((j, 1.0));
                    cols.push((j, -1.0));
                }
            }
        }
        let ns = cols.len();
        let mut std_rows = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let offset: f64 = row.coeffs.iter().zip(&shift).map(|(a, s)| a * s).sum();
            let mut a: Vec<f64> = cols.iter().map(|&(j, sign)| sign * row.coeffs[j]).collect();
            let mut b = row.rhs - offset;
            let mut cmp = row.cmp;
            if b < 0.0 {
                a.iter_mut().for_each(|v| *v = -*v);
                b = -b;
                cmp = match cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    Cmp::Eq => Cmp::Eq,
                };
            }
            std_rows.push((a, cmp, b));
        }
        let c: Vec<f64> = cols.iter().map(|&(j, sign)| sign * self.objective[j]).collect();
        let const_term: f64 = self.objective.iter().zip(&shift).map(|(c, s)| c * s).sum();
        match simplex(ns, &std_rows, &c) {
            StdOutcome::Optimal(y, value) => {
                let mut x = shift;
                for (&(j, sign), v) in cols.iter().zip(&y) {
                    x[j] += sign * v;
                }
                LpOutcome::Optimal { x, value: value + const_term }
            }
            StdOutcome::Infeasible => LpOutcome::Infeasible,
            StdOutcome::Unbounded => LpOutcome::Unbounded,
            StdOutcome::IterationLimit => LpOutcome::IterationLimit,
        }
    }
}

enum StdOutcome {
    Optimal(Vec<f64>, f64),
    Infeasible,
    Unbounded,
    IterationLimit,
}

struct Tableau {
    /// rows × (cols + 1); last entry is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        self.t[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        d.push(0.0);
        for (row, &b) in self.t.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for (dv, &v) in d.iter_mut().zip(row) {
                    *dv -= cb * v;
                }
            }
        }
        d
    }

    /// Bland's rule on columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize, pivots: &mut usize) -> Result<(), StdOutcome> {
        loop {
            if *pivots >= MAX_PIVOTS {
                return Err(StdOutcome::IterationLimit);
            }
            let d = self.reduced_costs(cost);
            let scale = 1.0 + cost.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
            let Some(enter) = (0..allowed).find(|&j| d[j] < -COST_TOL * scale) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                let a = row[enter];
                if a > PIVOT_TOL {
                    let ratio = row[self.width] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                            if ratio < lr && !tie || tie && self.basis[i] < self.basis[li] {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(StdOutcome::Unbounded);
            };
            self.pivot(r, enter);
            *pivots += 1;
        }
    }
}

/// minimize c·y, y ≥ 0, rows with non-negative rhs.
fn simplex(ns: usize, rows: &[(Vec<f64>, Cmp, f64)], c: &[f64]) -> StdOutcome {
    let n_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let width = ns + n_slack + n_art;
    let mut t = Vec::with_capacity(rows.len());
    let mut basis = Vec::with_capacity(rows.len());
    let (mut s, mut a) = (ns, ns + n_slack);
    for (coeffs, cmp, b) in rows {
        let mut row = vec![0.0; width + 1];
        row[..ns].copy_from_slice(coeffs);
        row[width] = *b;
        match cmp {
            Cmp::Le => {
                row[s] = 1.0;
                basis.push(s);
                s += 1;
            }
            Cmp::Ge => {
                row[s] = -1.0;
                row[a] = 1.0;
                basis.push(a);
                s += 1;
                a += 1;
            }
            Cmp::Eq => {
                row[a] = 1.0;
                basis.push(a);
                a += 1;
            }
        }
        t.push(row);
    }
    let mut tab = Tableau { t, basis, width };
    let first_art = ns + n_slack;
    let mut pivots = 0;

    if n_art > 0 {
        let mut phase1 = vec![0.0; width];
        phase1[first_art..].iter_mut().for_each(|v| *v = 1.0);
        if let Err(e) = tab.optimize(&phase1, width, &mut pivots) {
            return e;
        }
        let infeas: f64 = tab
            .t
            .iter()
            .zip(&tab.basis)
            .filter(|(_, &b)| b >= first_art)
            .map(|(row, _)| row[width])
            .sum();
        let rhs_scale = 1.0 + rows.iter().fold(0.0, |m: f64, r| m.max(r.2));
        if infeas > FEAS_TOL * rhs_scale {
            return StdOutcome::Infeasible;
        }
        // Drive remaining (zero-level) artificials out of the basis.
        let mut r = 0;
        while r < tab.t.len() {
            if tab.basis[r] >= first_art {
                match (0..first_art).find(|&j| tab.t[r][j].abs() > 1e-9) {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.t.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    let mut cost = vec![0.0; width];
    cost[..ns].copy_from_slice(c);
    if let Err(e) = tab.optimize(&cost, first_art, &mut pivots) {
        return e;
    }
    let mut y = vec![0.0; ns];
    for (row, &b) in tab.t.iter().zip(&tab.basis) {
        if b < ns {
            y[b] = row[width].max(0.0);
        }
    }
    let value = y.iter().zip(c).map(|(a, b)| a * b).sum();
    StdOutcome::Optimal(y, value)
}

/// Solves `base` plus the subset of `candidates` needed to make the optimum
/// satisfy all of them (relative tolerance `tol`). Rows of `base` are always
/// present.
pub fn solve_with_row_generation(base: &LinearProgram, candidates: &[Row], tol: f64) -> LpOutcome {
    const BATCH: usize = 24;
    let mut active = vec![false; candidates.len()];
    let mut lp = base.clone();
    let seed = candidates.len().min(BATCH);
    for i in 0..seed {
        let idx = i * candidates.len() / seed;
        if !active[idx] {
            active[idx] = true;
            lp.add_row(candidates[idx].clone());
        }
    }
    loop {
        let outcome = lp.solve();
        let x = match &outcome {
            LpOutcome::Optimal { x, .. } => x.clone(),
            LpOutcome::Unbounded => {
                // Not enough rows yet to bound the objective: add a batch.
                let added = add_inactive(&mut lp, &mut active, candidates, BATCH * 4);
                if added == 0 {
                    return outcome;
                }
                continue;
            }
            _ => return outcome,
        };
        let mut violated: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| !active[*i])
            .filter_map(|(i, row)| {
                let v = row.violation(&x);
                (v > tol * row.scale(&x)).then_some((v / row.scale(&x), i))
            })
            .collect();
        if violated.is_empty() {
            return outcome;
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in violated.iter().take(BATCH) {
            active[i] = true;
            lp.add_row(candidates[i].clone());
        }
    }
}

fn add_inactive(lp: &mut LinearProgram, active: &mut [bool], candidates: &[Row], count: usize) -> usize {
    let mut added = 0;
    for (i, row) in candidates.iter().enumerate() {
        if added == count {
            break;
        }
        if !active[i] {
            active[i] = true;
            lp.add_row(row.clone());
            added += 1;
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(o: &LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, value } => (x.clone(), *value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn classic_max_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![-3.0, -5.0]);
        lp.add_row(Row::new(vec![1.0, 0.0], Cmp::Le, 4.0));
        lp.add_row(Row::new(vec![0.0, 2.0], Cmp::Le, 12.0));
        lp.add_row(Row::new(vec![3.0, 2.0], Cmp::Le, 18.0));
        let (x, v) = opt(&lp.solve());
        close(&x, &[2.0, 6.0]);
        assert!((v + 36.0).abs() < 1e-9);
    }

    #[test]
    fn diet_problem_with_ge_rows() {
        // min 2x + 3y, x + y ≥ 4, x + 3y ≥ 6 → (3, 1), 9.
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![2.0, 3.0]);
        lp.add_row(Row::new(vec![1.0, 1.0], Cmp::Ge, 4.0));
        lp.add_row(Row::new(vec![1.0, 3.0], Cmp::Ge, 6.0));
        let (x, v) = opt(&lp.solve());
        close(&x, &[3.0, 1.0]);
        assert!((v - 9.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_variable() {
        // min x + y, x - y = -3 (x free), y ≥ 0, x ≥ -10 implicitly via row.
        let mut lp = LinearProgram::new(2);
        lp.set_free(0);
        lp.set_objective(vec![1.0, 1.0]);
        lp.add_row(Row::new(vec![1.0, -1.0], Cmp::Eq, -3.0));
        lp.add_row(Row::new(vec![1.0, 0.0], Cmp::Ge, -10.0));
        let (x, v) = opt(&lp.solve());
        close(&x, &[-3.0, 0.0]);
        assert!((v + 3.0).abs() < 1e-9);
    }

    #[test]
    fn lower_bounds_are_respected() {
        // min x + 2y + z, x,y,z ≥ 1, x + y + z ≥ 5 → (3, 1, 1) or (1,1,3); value 6.
        let mut lp = LinearProgram::new(3);
        for j in 0..3 {
            lp.set_lower(j, 1.0);
        }
        lp.set_objective(vec![1.0, 2.0, 1.0]);
        lp.add_row(Row::new(vec![1.0, 1.0, 1.0], Cmp::Ge, 5.0));
        let (x, v) = opt(&lp.solve());
        assert!((v - 6.0).abs() < 1e-9);
        assert!((x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn six_variable_transport() {
        // Two plants (supply 20, 30), three markets (demand 10, 25, 15).
        let costs = [8.0, 6.0, 10.0, 9.0, 12.0, 13.0];
        let mut lp = LinearProgram::new(6);
        lp.set_objective(costs.to_vec());
        lp.add_row(Row::new(vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0], Cmp::Le, 20.0));
        lp.add_row(Row::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], Cmp::Le, 30.0));
        lp.add_row(Row::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], Cmp::Eq, 10.0));
        lp.add_row(Row::new(vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0], Cmp::Eq, 25.0));
        lp.add_row(Row::new(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], Cmp::Eq, 15.0));
        let (x, v) = opt(&lp.solve());
        // Plant 1 ships all 20 to market 2; plant 2 covers the rest.
        assert!((v - 465.0).abs() < 1e-9, "{v} {x:?}");
        close(&x, &[0.0, 20.0, 0.0, 10.0, 5.0, 15.0]);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Beale-style cycling example; Bland's rule must finish.
        let mut lp = LinearProgram::new(4);
        lp.set_objective(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_row(Row::new(vec![0.25, -60.0, -0.04, 9.0], Cmp::Le, 0.0));
        lp.add_row(Row::new(vec![0.5, -90.0, -0.02, 3.0], Cmp::Le, 0.0));
        lp.add_row(Row::new(vec![0.0, 0.0, 1.0, 0.0], Cmp::Le, 1.0));
        let (x, v) = opt(&lp.solve());
        assert!((v + 0.05).abs() < 1e-9, "{v} {x:?}");
        close(&x, &[0.04, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(Row::new(vec![1.0], Cmp::Le, -1.0));
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![-1.0, 0.0]);
        lp.add_row(Row::new(vec![1.0, -1.0], Cmp::Le, 1.0));
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 1.0]);
        lp.add_row(Row::new(vec![1.0, 1.0], Cmp::Eq, 2.0));
        lp.add_row(Row::new(vec![2.0, 2.0], Cmp::Eq, 4.0));
        let (_, v) = opt(&lp.solve());
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn row_generation_matches_full_solve() {
        // min K with K ≥ sin(i) for i in 0..500 → max sin.
        let mut base = LinearProgram::new(1);
        base.set_objective(vec![1.0]);
        let rows: Vec<Row> = (0..500).map(|i| Row::new(vec![1.0], Cmp::Ge, (i as f64).sin())).collect();
        let (x, _) = opt(&solve_with_row_generation(&base, &rows, 1e-12));
        let want = (0..500).map(|i| (i as f64).sin()).fold(f64::MIN, f64::max);
        assert!((x[0] - want).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn feasible_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            (1usize..6, 1usize..8).prop_flat_map(|(n, m)| {
                (
                    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, n), m),
                    proptest::collection::vec(0.0f64..5.0, n),
                    proptest::collection::vec(0.0f64..1.0, m),
                    proptest::collection::vec(0.1f64..4.0, n),
                )
            })
        }

        proptest! {
            // Rows are built so that x0 is feasible and c > 0 keeps the
            // problem bounded; the optimum must be feasible and no worse.
            #[test]
            fn optimum_is_feasible_and_beats_known_point((a, x0, slack, c) in feasible_problem()) {
                let n = x0.len();
                let mut lp = LinearProgram::new(n);
                lp.set_objective(c.clone());
                for (row, s) in a.iter().zip(&slack) {
                    let lhs: f64 = row.iter().zip(&x0).map(|(p, q)| p * q).sum();
                    lp.add_row(Row::new(row.clone(), Cmp::Le, lhs + s));
                }
                let (x, v) = opt(&lp.solve());
                prop_assert!(x.iter().all(|&xi| xi >= -1e-9));
                for r in lp.rows() {
                    prop_assert!(r.violation(&x) <= 1e-8 * r.scale(&x));
                }
                let known: f64 = c.iter().zip(&x0).map(|(p, q)| p * q).sum();
                prop_assert!(v <= known + 1e-9 * (1.0 + known));
                let value: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                prop_assert!((value - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }
}
