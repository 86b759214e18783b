//! Exact linear programming over rationals.
//!
//! Two-phase dense-tableau simplex. No floating point anywhere: every pivot,
//! ratio test and certificate is computed in `BigRational`. Outcomes carry
//! certificates that close the loop independently of the solver internals:
//!
//! * optimal: primal point + constraint multipliers satisfying strong duality,
//! * infeasible: a Farkas vector whose aggregated inequality no point of the
//!   variable box can satisfy,
//! * unbounded: a feasible point and an improving recession direction.
//!
//! [`verify_outcome`] re-checks the returned certificate against the original
//! problem by plain substitution; `solve` runs it on every outcome and treats
//! a rejection as an internal error.
//!
//! Pivoting starts with Dantzig's rule (ties to the lowest column index) and
//! switches permanently to Bland's rule after a run of degenerate pivots, so
//! the solver is deterministic and cannot cycle.

use crate::rational::Rational;
use num_traits::{One, Signed, Zero};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Sparse row: (variable index, coefficient).
    pub coeffs: Vec<(usize, Rational)>,
    pub relation: Relation,
    pub rhs: Rational,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub constraints: Vec<Constraint>,
    /// `None` means a pure feasibility problem.
    pub objective: Option<(Sense, Vec<(usize, Rational)>)>,
    pub lower: Vec<Option<Rational>>,
    pub upper: Vec<Option<Rational>>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal {
        point: Vec<Rational>,
        objective: Rational,
        /// One multiplier per constraint, in the sign convention checked by
        /// [`verify_outcome`].
        duals: Vec<Rational>,
    },
    Feasible {
        point: Vec<Rational>,
    },
    Infeasible {
        /// Farkas multipliers, one per constraint.
        farkas: Vec<Rational>,
    },
    Unbounded {
        point: Vec<Rational>,
        direction: Vec<Rational>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("simplex internal error: {0}")]
    Internal(String),
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            constraints: Vec::new(),
            objective: None,
            lower: vec![None; num_vars],
            upper: vec![None; num_vars],
        }
    }

    /// All variables start free; this pins `var >= 0`.
    pub fn nonneg(&mut self, var: usize) -> &mut Self {
        self.lower[var] = Some(Rational::zero());
        self
    }

    pub fn set_lower(&mut self, var: usize, l: Rational) -> &mut Self {
        self.lower[var] = Some(l);
        self
    }

    pub fn set_upper(&mut self, var: usize, u: Rational) -> &mut Self {
        self.upper[var] = Some(u);
        self
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, Rational)>, relation: Relation, rhs: Rational) {
        debug_assert!(coeffs.iter().all(|(j, _)| *j < self.num_vars));
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn maximize(&mut self, coeffs: Vec<(usize, Rational)>) {
        self.objective = Some((Sense::Maximize, coeffs));
    }

    pub fn minimize(&mut self, coeffs: Vec<(usize, Rational)>) {
        self.objective = Some((Sense::Minimize, coeffs));
    }

    pub fn solve(&self) -> Result<LpOutcome, LpError> {
        let outcome = Solver::new(self)?.run()?;
        verify_outcome(self, &outcome).map_err(|e| {
            LpError::Internal(format!("certificate failed self-verification: {e}"))
        })?;
        Ok(outcome)
    }

    fn dense_objective(&self) -> Vec<Rational> {
        let mut c = vec![Rational::zero(); self.num_vars];
        if let Some((_, coeffs)) = &self.objective {
            for (j, v) in coeffs {
                c[*j] = &c[*j] + v;
            }
        }
        c
    }
}

// ---------------------------------------------------------------------------
// Standardization: all internal variables are nonnegative, all rows become
// equalities over [structural | slack | artificial] columns.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum VarMap {
    /// x = lower + y[col]
    Shift { col: usize, lower: Rational },
    /// x = upper − y[col]
    Negate { col: usize, upper: Rational },
    /// x = y[pos] − y[neg]
    Split { pos: usize, neg: usize },
}

struct Solver<'a> {
    lp: &'a LinearProgram,
    var_map: Vec<VarMap>,
    /// Per tableau row: index of the originating user constraint, or None for
    /// an added upper-bound row.
    row_origin: Vec<Option<usize>>,
    row_flip: Vec<bool>,
    /// Column whose *initial* tableau column is the row's unit vector.
    unit_col: Vec<usize>,
    slack_cols: std::ops::Range<usize>,
    art_cols: std::ops::Range<usize>,
    tableau: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    obj_row: Vec<Rational>,
    ncols: usize,
    bland: bool,
    degenerate_run: u32,
}

const DEGENERATE_SWITCH: u32 = 32;
const MAX_PIVOTS: u64 = 4_000_000;

impl<'a> Solver<'a> {
    fn new(lp: &'a LinearProgram) -> Result<Self, LpError> {
        // Empty variable box is decided before any tableau is built.
        // verify_outcome accepts the zero Farkas vector in that case.
        let mut var_map = Vec::with_capacity(lp.num_vars);
        let mut n_struct = 0usize;
        for j in 0..lp.num_vars {
            match (&lp.lower[j], &lp.upper[j]) {
                (Some(l), Some(u)) if l > u => {
                    return Err(LpError::Internal("empty box handled by caller".into()))
                }
                (Some(l), _) => {
                    var_map.push(VarMap::Shift {
                        col: n_struct,
                        lower: l.clone(),
                    });
                    n_struct += 1;
                }
                (None, Some(u)) => {
                    var_map.push(VarMap::Negate {
                        col: n_struct,
                        upper: u.clone(),
                    });
                    n_struct += 1;
                }
                (None, None) => {
                    var_map.push(VarMap::Split {
                        pos: n_struct,
                        neg: n_struct + 1,
                    });
                    n_struct += 2;
                }
            }
        }

        // Assemble rows: user constraints, then upper-bound rows for
        // two-sided variables.
        struct RawRow {
            dense: Vec<Rational>,
            relation: Relation,
            rhs: Rational,
            origin: Option<usize>,
        }
        let mut raw: Vec<RawRow> = Vec::new();
        for (i, con) in lp.constraints.iter().enumerate() {
            let mut dense = vec![Rational::zero(); n_struct];
            let mut rhs = con.rhs.clone();
            for (j, a) in &con.coeffs {
                match &var_map[*j] {
                    VarMap::Shift { col, lower } => {
                        dense[*col] = &dense[*col] + a;
                        rhs -= a * lower;
                    }
                    VarMap::Negate { col, upper } => {
                        dense[*col] = &dense[*col] - a;
                        rhs -= a * upper;
                    }
                    VarMap::Split { pos, neg } => {
                        dense[*pos] = &dense[*pos] + a;
                        dense[*neg] = &dense[*neg] - a;
                    }
                }
            }
            raw.push(RawRow {
                dense,
                relation: con.relation,
                rhs,
                origin: Some(i),
            });
        }
        for j in 0..lp.num_vars {
            if let (Some(l), Some(u)) = (&lp.lower[j], &lp.upper[j]) {
                if let VarMap::Shift { col, .. } = &var_map[j] {
                    let mut dense = vec![Rational::zero(); n_struct];
                    dense[*col] = Rational::one();
                    raw.push(RawRow {
                        dense,
                        relation: Relation::Le,
                        rhs: u - l,
                        origin: None,
                    });
                }
            }
        }

        let m = raw.len();
        let n_slack = raw
            .iter()
            .filter(|r| r.relation != Relation::Eq)
            .count();
        // Worst case every row needs an artificial; unused ones are skipped.
        let slack_base = n_struct;
        let art_base = n_struct + n_slack;

        let mut tableau: Vec<Vec<Rational>> = Vec::with_capacity(m);
        let mut basis = vec![usize::MAX; m];
        let mut row_origin = Vec::with_capacity(m);
        let mut row_flip = Vec::with_capacity(m);
        let mut unit_col = vec![usize::MAX; m];
        let mut next_slack = slack_base;
        let mut art_of_row: Vec<Option<usize>> = vec![None; m];
        let mut n_art = 0usize;

        // First pass: decide slack columns and flips, find which rows need
        // artificials.
        struct Staged {
            dense: Vec<Rational>,
            rhs: Rational,
            slack: Option<(usize, bool)>, // (col, positive coefficient)
            flip: bool,
        }
        let mut staged: Vec<Staged> = Vec::with_capacity(m);
        for r in raw.iter() {
            let slack = match r.relation {
                Relation::Le => {
                    let c = next_slack;
                    next_slack += 1;
                    Some((c, true))
                }
                Relation::Ge => {
                    let c = next_slack;
                    next_slack += 1;
                    Some((c, false))
                }
                Relation::Eq => None,
            };
            let flip = r.rhs.is_negative();
            staged.push(Staged {
                dense: r.dense.clone(),
                rhs: r.rhs.clone(),
                slack,
                flip,
            });
        }
        for (i, s) in staged.iter().enumerate() {
            let slack_basic = match s.slack {
                Some((_, pos)) => pos != s.flip, // post-flip coefficient is +1
                None => false,
            };
            if !slack_basic {
                art_of_row[i] = Some(art_base + n_art);
                n_art += 1;
            }
        }
        let ncols = art_base + n_art;

        for (i, s) in staged.into_iter().enumerate() {
            let sign = if s.flip {
                -Rational::one()
            } else {
                Rational::one()
            };
            let mut row = vec![Rational::zero(); ncols + 1];
            for (c, v) in s.dense.into_iter().enumerate() {
                if !v.is_zero() {
                    row[c] = &sign * v;
                }
            }
            if let Some((c, pos)) = s.slack {
                row[c] = if pos == s.flip {
                    -Rational::one()
                } else {
                    Rational::one()
                };
            }
            row[ncols] = &sign * &s.rhs;
            if let Some(a) = art_of_row[i] {
                row[a] = Rational::one();
                basis[i] = a;
                unit_col[i] = a;
            } else {
                let (c, _) = s.slack.unwrap();
                basis[i] = c;
                unit_col[i] = c;
            }
            tableau.push(row);
            row_origin.push(raw[i].origin);
            row_flip.push(s.flip);
        }

        Ok(Solver {
            lp,
            var_map,
            row_origin,
            row_flip,
            unit_col,
            slack_cols: slack_base..art_base,
            art_cols: art_base..ncols,
            tableau,
            basis,
            obj_row: vec![Rational::zero(); ncols + 1],
            ncols,
            bland: false,
            degenerate_run: 0,
        })
    }

    fn run(mut self) -> Result<LpOutcome, LpError> {
        // Caller-facing emptiness check (kept here so solve() has one entry).
        for j in 0..self.lp.num_vars {
            if let (Some(l), Some(u)) = (&self.lp.lower[j], &self.lp.upper[j]) {
                if l > u {
                    return Ok(LpOutcome::Infeasible {
                        farkas: vec![Rational::zero(); self.lp.constraints.len()],
                    });
                }
            }
        }

        // Phase 1: minimize the sum of artificials.
        self.load_phase1_objective();
        self.iterate(true)?;
        if self.obj_value().is_positive() {
            let farkas = self.extract_duals(true);
            return Ok(LpOutcome::Infeasible { farkas });
        }
        self.evict_artificials();

        let Some((sense, _)) = &self.lp.objective else {
            let point = self.current_point();
            return Ok(LpOutcome::Feasible { point });
        };
        let sense = *sense;

        // Phase 2 on the real objective (internally minimized).
        self.load_phase2_objective(sense);
        match self.iterate(false)? {
            IterEnd::Optimal => {
                let point = self.current_point();
                let mut duals = self.extract_duals(false);
                let mut objective = self.obj_value();
                if sense == Sense::Maximize {
                    objective = -objective;
                    for d in duals.iter_mut() {
                        *d = -d.clone();
                    }
                }
                Ok(LpOutcome::Optimal {
                    point,
                    objective,
                    duals,
                })
            }
            IterEnd::Unbounded { entering } => {
                let point = self.current_point();
                let direction = self.ray_direction(entering);
                Ok(LpOutcome::Unbounded { point, direction })
            }
        }
    }

    fn obj_value(&self) -> Rational {
        // obj_row stores reduced costs with -value in the rhs slot
        -self.obj_row[self.ncols].clone()
    }

    fn load_phase1_objective(&mut self) {
        let mut row = vec![Rational::zero(); self.ncols + 1];
        for c in self.art_cols.clone() {
            row[c] = Rational::one();
        }
        // eliminate the basic artificials
        for (i, &b) in self.basis.iter().enumerate() {
            if self.art_cols.contains(&b) {
                let trow = self.tableau[i].clone();
                for (x, t) in row.iter_mut().zip(trow.iter()) {
                    *x = &*x - t;
                }
            }
        }
        self.obj_row = row;
        self.bland = false;
        self.degenerate_run = 0;
    }

    fn load_phase2_objective(&mut self, sense: Sense) {
        let c_user = self.lp.dense_objective();
        let mut c_std = vec![Rational::zero(); self.ncols + 1];
        let mut shift_const = Rational::zero();
        for (j, cj) in c_user.iter().enumerate() {
            if cj.is_zero() {
                continue;
            }
            let cj = match sense {
                Sense::Minimize => cj.clone(),
                Sense::Maximize => -cj.clone(),
            };
            match &self.var_map[j] {
                VarMap::Shift { col, lower } => {
                    c_std[*col] = &c_std[*col] + &cj;
                    shift_const += &cj * lower;
                }
                VarMap::Negate { col, upper } => {
                    c_std[*col] = &c_std[*col] - &cj;
                    shift_const += &cj * upper;
                }
                VarMap::Split { pos, neg } => {
                    c_std[*pos] = &c_std[*pos] + &cj;
                    c_std[*neg] = &c_std[*neg] - &cj;
                }
            }
        }
        // reduced costs: subtract basic rows
        let mut row = c_std;
        row[self.ncols] = -shift_const; // value starts at shift constant
        for (i, &b) in self.basis.iter().enumerate() {
            if row[b].is_zero() {
                continue;
            }
            let f = row[b].clone();
            let trow = self.tableau[i].clone();
            for (x, t) in row.iter_mut().zip(trow.iter()) {
                *x = &*x - &(&f * t);
            }
        }
        self.obj_row = row;
        self.bland = false;
        self.degenerate_run = 0;
    }

    /// After phase 1, pivot artificials out of the basis (always possible at
    /// value zero) or drop the redundant row.
    fn evict_artificials(&mut self) {
        for i in 0..self.tableau.len() {
            if !self.art_cols.contains(&self.basis[i]) {
                continue;
            }
            debug_assert!(self.tableau[i][self.ncols].is_zero());
            let pivot_col = (0..self.slack_cols.end).find(|&c| !self.tableau[i][c].is_zero());
            if let Some(c) = pivot_col {
                self.pivot(i, c);
            }
            // If no pivot column exists the row reads 0 = 0 and stays inert:
            // its artificial remains basic at level zero and, being excluded
            // from phase-2 entering columns, never moves again.
        }
    }

    fn eligible_entering(&self, phase1: bool) -> Option<usize> {
        let limit = if phase1 {
            self.ncols
        } else {
            self.art_cols.start
        };
        if self.bland {
            (0..limit).find(|&j| self.obj_row[j].is_negative())
        } else {
            let mut best: Option<usize> = None;
            for j in 0..limit {
                if self.obj_row[j].is_negative()
                    && best.map_or(true, |b| self.obj_row[j] < self.obj_row[b])
                {
                    best = Some(j);
                }
            }
            best
        }
    }

    fn leaving_row(&self, entering: usize) -> Option<usize> {
        let mut best: Option<(usize, Rational)> = None;
        for i in 0..self.tableau.len() {
            let a = &self.tableau[i][entering];
            if !a.is_positive() {
                continue;
            }
            let ratio = &self.tableau[i][self.ncols] / a;
            match &best {
                None => best = Some((i, ratio)),
                Some((bi, br)) => {
                    if ratio < *br {
                        best = Some((i, ratio));
                    } else if ratio == *br {
                        // prefer evicting artificials, then lowest basis index
                        let cand_art = self.art_cols.contains(&self.basis[i]);
                        let best_art = self.art_cols.contains(&self.basis[*bi]);
                        if (cand_art && !best_art)
                            || (cand_art == best_art && self.basis[i] < self.basis[*bi])
                        {
                            best = Some((i, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let inv = self.tableau[row][col].recip();
        if !inv.is_one() {
            for x in self.tableau[row].iter_mut() {
                if !x.is_zero() {
                    *x = &*x * &inv;
                }
            }
        }
        let prow = self.tableau[row].clone();
        for i in 0..self.tableau.len() {
            if i == row || self.tableau[i][col].is_zero() {
                continue;
            }
            let f = self.tableau[i][col].clone();
            let ri = &mut self.tableau[i];
            for (x, p) in ri.iter_mut().zip(prow.iter()) {
                if !p.is_zero() {
                    *x = &*x - &(&f * p);
                }
            }
        }
        if !self.obj_row[col].is_zero() {
            let f = self.obj_row[col].clone();
            for (x, p) in self.obj_row.iter_mut().zip(prow.iter()) {
                if !p.is_zero() {
                    *x = &*x - &(&f * p);
                }
            }
        }
        self.basis[row] = col;
    }

    fn iterate(&mut self, phase1: bool) -> Result<IterEnd, LpError> {
        let mut pivots: u64 = 0;
        loop {
            let Some(entering) = self.eligible_entering(phase1) else {
                return Ok(IterEnd::Optimal);
            };
            let Some(row) = self.leaving_row(entering) else {
                if phase1 {
                    return Err(LpError::Internal(
                        "phase-1 objective unbounded below".into(),
                    ));
                }
                return Ok(IterEnd::Unbounded { entering });
            };
            let degenerate = self.tableau[row][self.ncols].is_zero();
            self.pivot(row, entering);
            if degenerate {
                self.degenerate_run += 1;
                if self.degenerate_run >= DEGENERATE_SWITCH {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            pivots += 1;
            if pivots > MAX_PIVOTS {
                return Err(LpError::Internal("pivot budget exhausted".into()));
            }
        }
    }

    /// Current basic solution mapped back to user variables.
    fn current_point(&self) -> Vec<Rational> {
        let mut std_vals = vec![Rational::zero(); self.ncols];
        for (i, &b) in self.basis.iter().enumerate() {
            std_vals[b] = self.tableau[i][self.ncols].clone();
        }
        self.var_map
            .iter()
            .map(|m| match m {
                VarMap::Shift { col, lower } => lower + &std_vals[*col],
                VarMap::Negate { col, upper } => upper - &std_vals[*col],
                VarMap::Split { pos, neg } => &std_vals[*pos] - &std_vals[*neg],
            })
            .collect()
    }

    /// Row multipliers for the user constraints, recovered from the reduced
    /// costs of each row's unit column and folded through row flips.
    fn extract_duals(&self, phase1: bool) -> Vec<Rational> {
        let mut duals = vec![Rational::zero(); self.lp.constraints.len()];
        for (i, origin) in self.row_origin.iter().enumerate() {
            let Some(orig) = origin else { continue };
            let u = self.unit_col[i];
            let c_u = if phase1 && self.art_cols.contains(&u) {
                Rational::one()
            } else {
                Rational::zero()
            };
            let y_std = &c_u - &self.obj_row[u];
            duals[*orig] = if self.row_flip[i] { -y_std } else { y_std };
        }
        duals
    }

    /// Improving ray when the entering column has no blocking row.
    fn ray_direction(&self, entering: usize) -> Vec<Rational> {
        let mut d_std = vec![Rational::zero(); self.ncols];
        d_std[entering] = Rational::one();
        for (i, &b) in self.basis.iter().enumerate() {
            if !self.tableau[i][entering].is_zero() {
                d_std[b] = -self.tableau[i][entering].clone();
            }
        }
        self.var_map
            .iter()
            .map(|m| match m {
                VarMap::Shift { col, .. } => d_std[*col].clone(),
                VarMap::Negate { col, .. } => -d_std[*col].clone(),
                VarMap::Split { pos, neg } => &d_std[*pos] - &d_std[*neg],
            })
            .collect()
    }
}

enum IterEnd {
    Optimal,
    Unbounded { entering: usize },
}

// ---------------------------------------------------------------------------
// Certificate verification by substitution into the original problem.
// ---------------------------------------------------------------------------

fn row_value(con: &Constraint, x: &[Rational]) -> Rational {
    con.coeffs
        .iter()
        .fold(Rational::zero(), |acc, (j, a)| acc + a * &x[*j])
}

fn check_primal_feasible(lp: &LinearProgram, x: &[Rational]) -> Result<(), String> {
    if x.len() != lp.num_vars {
        return Err("point has wrong dimension".into());
    }
    for (j, v) in x.iter().enumerate() {
        if let Some(l) = &lp.lower[j] {
            if v < l {
                return Err(format!("variable {j} below lower bound"));
            }
        }
        if let Some(u) = &lp.upper[j] {
            if v > u {
                return Err(format!("variable {j} above upper bound"));
            }
        }
    }
    for (i, con) in lp.constraints.iter().enumerate() {
        let lhs = row_value(con, x);
        let ok = match con.relation {
            Relation::Le => lhs <= con.rhs,
            Relation::Eq => lhs == con.rhs,
            Relation::Ge => lhs >= con.rhs,
        };
        if !ok {
            return Err(format!("constraint {i} violated"));
        }
    }
    Ok(())
}

fn objective_value(lp: &LinearProgram, x: &[Rational]) -> Rational {
    let c = lp.dense_objective();
    c.iter()
        .zip(x)
        .fold(Rational::zero(), |acc, (cj, xj)| acc + cj * xj)
}

/// Aggregated coefficients `g = Σ y_i a_i` over user constraints.
fn aggregate(lp: &LinearProgram, y: &[Rational]) -> Vec<Rational> {
    let mut g = vec![Rational::zero(); lp.num_vars];
    for (con, yi) in lp.constraints.iter().zip(y) {
        if yi.is_zero() {
            continue;
        }
        for (j, a) in &con.coeffs {
            g[*j] = &g[*j] + &(yi * a);
        }
    }
    g
}

fn farkas_sign_ok(lp: &LinearProgram, y: &[Rational]) -> bool {
    lp.constraints.iter().zip(y).all(|(con, yi)| match con.relation {
        Relation::Le => !yi.is_positive(),
        Relation::Ge => !yi.is_negative(),
        Relation::Eq => true,
    })
}

/// Re-checks an outcome against the problem it claims to solve.
pub fn verify_outcome(lp: &LinearProgram, outcome: &LpOutcome) -> Result<(), String> {
    let box_empty = (0..lp.num_vars).any(|j| match (&lp.lower[j], &lp.upper[j]) {
        (Some(l), Some(u)) => l > u,
        _ => false,
    });
    match outcome {
        LpOutcome::Feasible { point } => check_primal_feasible(lp, point),
        LpOutcome::Optimal {
            point,
            objective,
            duals,
        } => {
            let (sense, _) = lp
                .objective
                .as_ref()
                .ok_or("optimal outcome for a feasibility problem")?;
            check_primal_feasible(lp, point)?;
            if objective_value(lp, point) != *objective {
                return Err("objective value mismatch".into());
            }
            if duals.len() != lp.constraints.len() {
                return Err("dual vector has wrong length".into());
            }
            // sign conditions
            for (i, (con, yi)) in lp.constraints.iter().zip(duals).enumerate() {
                let ok = match (sense, con.relation) {
                    (_, Relation::Eq) => true,
                    (Sense::Minimize, Relation::Le) => !yi.is_positive(),
                    (Sense::Minimize, Relation::Ge) => !yi.is_negative(),
                    (Sense::Maximize, Relation::Le) => !yi.is_negative(),
                    (Sense::Maximize, Relation::Ge) => !yi.is_positive(),
                };
                if !ok {
                    return Err(format!("dual sign condition violated at row {i}"));
                }
            }
            let g = aggregate(lp, duals);
            let c = lp.dense_objective();
            let mut bound = lp
                .constraints
                .iter()
                .zip(duals)
                .fold(Rational::zero(), |acc, (con, yi)| acc + yi * &con.rhs);
            for j in 0..lp.num_vars {
                let r = &c[j] - &g[j];
                if r.is_zero() {
                    continue;
                }
                // which bound absorbs the residual depends on the sense
                let use_lower = match sense {
                    Sense::Minimize => r.is_positive(),
                    Sense::Maximize => r.is_negative(),
                };
                let b = if use_lower {
                    lp.lower[j].as_ref()
                } else {
                    lp.upper[j].as_ref()
                };
                match b {
                    Some(v) => bound += &r * v,
                    None => {
                        return Err(format!(
                            "residual cost on variable {j} has no finite bound to lean on"
                        ))
                    }
                }
            }
            if bound != *objective {
                return Err("strong duality equality fails".into());
            }
            Ok(())
        }
        LpOutcome::Infeasible { farkas } => {
            if box_empty {
                return Ok(());
            }
            if farkas.len() != lp.constraints.len() {
                return Err("farkas vector has wrong length".into());
            }
            if !farkas_sign_ok(lp, farkas) {
                return Err("farkas sign condition violated".into());
            }
            // Feasible x would satisfy g·x >= y·b; show the box cannot.
            let g = aggregate(lp, farkas);
            let yb = lp
                .constraints
                .iter()
                .zip(farkas)
                .fold(Rational::zero(), |acc, (con, yi)| acc + yi * &con.rhs);
            let mut max_box = Rational::zero();
            for j in 0..lp.num_vars {
                if g[j].is_zero() {
                    continue;
                }
                let b = if g[j].is_positive() {
                    lp.upper[j].as_ref()
                } else {
                    lp.lower[j].as_ref()
                };
                match b {
                    Some(v) => max_box += &g[j] * v,
                    None => return Err("farkas aggregate unbounded over the box".into()),
                }
            }
            if max_box >= yb {
                return Err("farkas aggregate does not separate".into());
            }
            Ok(())
        }
        LpOutcome::Unbounded { point, direction } => {
            let (sense, _) = lp
                .objective
                .as_ref()
                .ok_or("unbounded outcome for a feasibility problem")?;
            check_primal_feasible(lp, point)?;
            if direction.len() != lp.num_vars {
                return Err("direction has wrong dimension".into());
            }
            for (j, d) in direction.iter().enumerate() {
                if lp.lower[j].is_some() && d.is_negative() {
                    return Err(format!("direction leaves lower bound of variable {j}"));
                }
                if lp.upper[j].is_some() && d.is_positive() {
                    return Err(format!("direction leaves upper bound of variable {j}"));
                }
            }
            for (i, con) in lp.constraints.iter().enumerate() {
                let v = row_value(con, direction);
                let ok = match con.relation {
                    Relation::Le => !v.is_positive(),
                    Relation::Eq => v.is_zero(),
                    Relation::Ge => !v.is_negative(),
                };
                if !ok {
                    return Err(format!("direction violates recession of constraint {i}"));
                }
            }
            let c = lp.dense_objective();
            let cd = c
                .iter()
                .zip(direction)
                .fold(Rational::zero(), |acc, (cj, dj)| acc + cj * dj);
            let improving = match sense {
                Sense::Minimize => cd.is_negative(),
                Sense::Maximize => cd.is_positive(),
            };
            if !improving {
                return Err("direction does not improve the objective".into());
            }
            Ok(())
        }
    }
}

// Empty-box infeasibility is reported before standardization, so Solver::new
// never sees it; keep the plumbing honest anyway.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    for j in 0..lp.num_vars {
        if let (Some(l), Some(u)) = (&lp.lower[j], &lp.upper[j]) {
            if l > u {
                let outcome = LpOutcome::Infeasible {
                    farkas: vec![Rational::zero(); lp.constraints.len()],
                };
                return Ok(outcome);
            }
        }
    }
    lp.solve()
}
