//! Solver-agnostic mixed-integer model.
//!
//! Variables are addressed by [`VarId`] and carry unique, LP-safe names. The objective
//! holds linear, diagonal quadratic and piecewise-linear terms; [`ModelIr::apply_pwl`]
//! and [`ModelIr::expand_pwl`] turn quadratics into a pure MILP for linear backends.

use crate::error::{Error, Result};
use crate::kkt::{pwl_quadratic, PwlApprox};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * x[v.0]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            RowSense::Le => (a - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - a).max(0.0),
            RowSense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

/// `weight · f(var)` where `f` is the piecewise-linear function in `approx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlTerm {
    pub var: VarId,
    pub weight: f64,
    pub approx: PwlApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: ObjSense,
    pub constant: f64,
    pub linear: Vec<(VarId, f64)>,
    /// Diagonal terms `coef · x²`.
    pub quadratic: Vec<(VarId, f64)>,
    pub pwl: Vec<PwlTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelIr {
    vars: Vec<Variable>,
    rows: Vec<Row>,
    objective: Objective,
    var_index: HashMap<String, VarId>,
    row_names: HashSet<String>,
}

fn check_name(name: &str) -> Result<()> {
    let mut chars = name.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if first_ok && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') && name.len() <= 255 {
        Ok(())
    } else {
        Err(Error::Build(format!("name `{name}` is not a valid model identifier")))
    }
}

impl ModelIr {
    pub fn new(sense: ObjSense) -> Self {
        Self {
            vars: Vec::new(),
            rows: Vec::new(),
            objective: Objective { sense, constant: 0.0, linear: Vec::new(), quadratic: Vec::new(), pwl: Vec::new() },
            var_index: HashMap::new(),
            row_names: HashSet::new(),
        }
    }

    fn push_var(&mut self, name: &str, lower: f64, upper: f64, kind: VarKind) -> Result<VarId> {
        check_name(name)?;
        if self.var_index.contains_key(name) {
            return Err(Error::Build(format!("variable name collision: `{name}`")));
        }
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Build(format!("variable `{name}` has empty bounds [{lower}, {upper}]")));
        }
        let id = VarId(self.vars.len());
        self.vars.push(Variable { name: name.to_owned(), lower, upper, kind });
        self.var_index.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn add_var(&mut self, name: &str, lower: f64, upper: f64) -> Result<VarId> {
        self.push_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: &str) -> Result<VarId> {
        self.push_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn add_row(&mut self, name: &str, terms: Vec<(VarId, f64)>, sense: RowSense, rhs: f64) -> Result<()> {
        check_name(name)?;
        if !self.row_names.insert(name.to_owned()) {
            return Err(Error::Build(format!("row name collision: `{name}`")));
        }
        if let Some((v, _)) = terms.iter().find(|(v, _)| v.0 >= self.vars.len()) {
            return Err(Error::Build(format!("row `{name}` references undeclared variable #{}", v.0)));
        }
        if !rhs.is_finite() || terms.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::Build(format!("row `{name}` has a non-finite coefficient")));
        }
        self.rows.push(Row { name: name.to_owned(), terms, sense, rhs });
        Ok(())
    }

    fn check_var(&self, var: VarId) -> Result<()> {
        if var.0 < self.vars.len() {
            Ok(())
        } else {
            Err(Error::Build(format!("objective references undeclared variable #{}", var.0)))
        }
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.objective.constant += c;
    }

    pub fn add_objective_linear(&mut self, var: VarId, coef: f64) -> Result<()> {
        self.check_var(var)?;
        if coef != 0.0 {
            self.objective.linear.push((var, coef));
        }
        Ok(())
    }

    pub fn add_objective_quadratic(&mut self, var: VarId, coef: f64) -> Result<()> {
        self.check_var(var)?;
        if coef != 0.0 {
            self.objective.quadratic.push((var, coef));
        }
        Ok(())
    }

    pub fn add_objective_pwl(&mut self, var: VarId, weight: f64, approx: PwlApprox) -> Result<()> {
        self.check_var(var)?;
        self.objective.pwl.push(PwlTerm { var, weight, approx });
        Ok(())
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.var_index.get(name).copied()
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn has_quadratic(&self) -> bool {
        !self.objective.quadratic.is_empty()
    }

    /// Checks the structural invariants: finite bounds and in-range references.
    pub fn validate(&self) -> Result<()> {
        for v in &self.vars {
            if !v.lower.is_finite() || !v.upper.is_finite() {
                return Err(Error::Build(format!("variable `{}` has an infinite bound", v.name)));
            }
        }
        let n = self.vars.len();
        for r in &self.rows {
            if r.terms.iter().any(|(v, _)| v.0 >= n) {
                return Err(Error::Build(format!("row `{}` has a dangling reference", r.name)));
            }
        }
        let o = &self.objective;
        let refs = o.linear.iter().chain(&o.quadratic).map(|(v, _)| *v).chain(o.pwl.iter().map(|p| p.var));
        for v in refs {
            if v.0 >= n {
                return Err(Error::Build(format!("objective has a dangling reference #{}", v.0)));
            }
        }
        for p in &o.pwl {
            let var = &self.vars[p.var.0];
            let (lo, hi) = p.approx.range();
            if var.lower < lo - 1e-9 || var.upper > hi + 1e-9 {
                return Err(Error::Build(format!(
                    "PWL term on `{}` covers [{lo}, {hi}] but the variable spans [{}, {}]",
                    var.name, var.lower, var.upper
                )));
            }
        }
        Ok(())
    }

    /// Exact objective value at `x` (quadratics exact, PWL terms as approximated).
    pub fn eval_objective(&self, x: &[f64]) -> f64 {
        let o = &self.objective;
        o.constant
            + o.linear.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
            + o.quadratic.iter().map(|(v, c)| c * x[v.0] * x[v.0]).sum::<f64>()
            + o.pwl.iter().map(|p| p.weight * p.approx.eval(x[p.var.0])).sum::<f64>()
    }

    /// Largest bound or row violation at `x`, with the offending name.
    pub fn max_violation(&self, x: &[f64]) -> (f64, Option<String>) {
        let mut worst = (0.0, None);
        for (v, &xi) in self.vars.iter().zip(x) {
            let viol = (v.lower - xi).max(xi - v.upper).max(0.0);
            if viol > worst.0 {
                worst = (viol, Some(v.name.clone()));
            }
        }
        for r in &self.rows {
            let viol = r.violation(x);
            if viol > worst.0 {
                worst = (viol, Some(r.name.clone()));
            }
        }
        worst
    }

    /// Moves every quadratic term into a PWL term with `segments` secant pieces over the
    /// variable's bounds. Returns the summed analytic error bound.
    pub fn apply_pwl(&mut self, segments: usize) -> Result<f64> {
        let quads = std::mem::take(&mut self.objective.quadratic);
        let mut bound = 0.0;
        for (v, coef) in quads {
            let var = &self.vars[v.0];
            let approx = pwl_quadratic(1.0, (var.lower, var.upper), segments)?;
            bound += coef.abs() * approx.max_error;
            self.objective.pwl.push(PwlTerm { var: v, weight: coef, approx });
        }
        Ok(bound)
    }

    /// Replaces PWL terms by incremental segment variables: `x = b₀ + Σ s_k` with
    /// `0 ≤ s_k ≤ w_k` and objective `weight·(f(b₀) + Σ slope_k·s_k)`.
    ///
    /// The encoding needs no binaries when each term is convex under minimization or
    /// concave under maximization; other terms are rejected.
    pub fn expand_pwl(&self) -> Result<ModelIr> {
        let mut out = self.clone();
        let terms = std::mem::take(&mut out.objective.pwl);
        for (k, term) in terms.iter().enumerate() {
            let slopes: Vec<f64> = term.approx.slopes.iter().map(|s| term.weight * s).collect();
            let ordered = match out.objective.sense {
                ObjSense::Minimize => slopes.windows(2).all(|w| w[0] <= w[1] + 1e-12),
                ObjSense::Maximize => slopes.windows(2).all(|w| w[0] >= w[1] - 1e-12),
            };
            if !ordered {
                return Err(Error::Build(format!(
                    "PWL term on `{}` is not convex for the objective sense",
                    self.vars[term.var.0].name
                )));
            }
            let base = self.vars[term.var.0].name.clone();
            let bp = &term.approx.breakpoints;
            out.objective.constant += term.weight * term.approx.values[0];
            let mut link = vec![(term.var, 1.0)];
            for (s, w) in bp.windows(2).enumerate() {
                let seg = out.add_var(&format!("{base}_pw{k}_{s}"), 0.0, w[1] - w[0])?;
                out.objective.linear.push((seg, slopes[s]));
                link.push((seg, -1.0));
            }
            out.add_row(&format!("{base}_pwlink{k}"), link, RowSense::Eq, bp[0])?;
        }
        Ok(out)
    }

    /// Copy with every binary fixed to the rounding of `x` and relaxed to continuous.
    pub fn fix_binaries(&self, x: &[f64]) -> ModelIr {
        let mut out = self.clone();
        for (v, &xi) in out.vars.iter_mut().zip(x) {
            if v.kind == VarKind::Binary {
                let fixed = if xi >= 0.5 { 1.0 } else { 0.0 };
                v.lower = fixed;
                v.upper = fixed;
                v.kind = VarKind::Continuous;
            }
        }
        out
    }

    /// Copy with one variable's bounds replaced.
    pub fn with_bounds(&self, var: VarId, lower: f64, upper: f64) -> ModelIr {
        let mut out = self.clone();
        out.vars[var.0].lower = lower;
        out.vars[var.0].upper = upper;
        out
    }

    /// Copy without the rows whose names satisfy `drop`.
    pub fn without_rows(&self, drop: impl Fn(&str) -> bool) -> ModelIr {
        let mut out = self.clone();
        out.rows.retain(|r| !drop(&r.name));
        out.row_names = out.rows.iter().map(|r| r.name.clone()).collect();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ModelIr, VarId, VarId) {
        let mut m = ModelIr::new(ObjSense::Minimize);
        let x = m.add_var("x", 0.0, 4.0).unwrap();
        let y = m.add_var("y", 0.0, 4.0).unwrap();
        m.add_row("cap", vec![(x, 1.0), (y, 1.0)], RowSense::Ge, 3.0).unwrap();
        m.add_objective_quadratic(x, 1.0).unwrap();
        m.add_objective_linear(y, 2.0).unwrap();
        (m, x, y)
    }

    #[test]
    fn name_collisions_and_dangling_references() {
        let (mut m, x, _) = toy();
        assert!(matches!(m.add_var("x", 0.0, 1.0), Err(Error::Build(_))));
        assert!(m.add_row("cap", vec![(x, 1.0)], RowSense::Le, 1.0).is_err());
        assert!(m.add_row("bad", vec![(VarId(99), 1.0)], RowSense::Le, 1.0).is_err());
        assert!(m.add_objective_linear(VarId(42), 1.0).is_err());
        assert!(m.add_var("1bad", 0.0, 1.0).is_err());
        assert!(m.add_var("sp ace", 0.0, 1.0).is_err());
    }

    #[test]
    fn infinite_bounds_fail_validation() {
        let mut m = ModelIr::new(ObjSense::Minimize);
        m.add_var("z", 0.0, f64::INFINITY).unwrap();
        assert!(m.validate().is_err());
        assert!(m.add_var("e", 2.0, 1.0).is_err());
    }

    #[test]
    fn pwl_expansion_matches_secant_values() {
        let (mut m, x, _) = toy();
        let bound = m.apply_pwl(2).unwrap();
        assert!((bound - 1.0).abs() < 1e-12);
        let e = m.expand_pwl().unwrap();
        assert_eq!(e.vars().len(), 4);
        assert!(e.objective().pwl.is_empty());
        // x = 3 via segments s0 = 2, s1 = 1; secant of x² through (0,0), (2,4), (4,16)
        let mut pt = vec![0.0; 4];
        pt[x.0] = 3.0;
        pt[2] = 2.0;
        pt[3] = 1.0;
        assert_eq!(e.max_violation(&pt).0, 0.0);
        assert!((e.eval_objective(&pt) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn nonconvex_pwl_rejected() {
        let mut m = ModelIr::new(ObjSense::Maximize);
        let x = m.add_var("x", 0.0, 4.0).unwrap();
        m.add_objective_quadratic(x, 1.0).unwrap();
        m.apply_pwl(4).unwrap();
        assert!(m.expand_pwl().is_err());
    }

    #[test]
    fn fix_binaries_rounds() {
        let mut m = ModelIr::new(ObjSense::Minimize);
        let b = m.add_binary("b").unwrap();
        let f = m.fix_binaries(&[0.9999]);
        assert_eq!(f.var(b).lower, 1.0);
        assert_eq!(f.var(b).kind, VarKind::Continuous);
        assert_eq!(f.num_binaries(), 0);
    }

    #[test]
    fn violations_are_reported_by_name() {
        let (m, _, _) = toy();
        let (v, name) = m.max_violation(&[1.0, 1.0]);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(name.as_deref(), Some("cap"));
    }
}
