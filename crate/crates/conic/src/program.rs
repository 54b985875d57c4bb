use std::time::Duration;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::ConicError;
use crate::expr::{LinExpr, Var};
use crate::hermitian::{HermitianVar, C64};

/// Sign restriction on a scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Free,
    NonNeg,
}

/// One conic constraint over affine expressions.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// `e == 0`
    Zero(LinExpr),
    /// `e >= 0`
    NonNeg(LinExpr),
    /// `||tail|| <= head`
    SecondOrder { head: LinExpr, tail: Vec<LinExpr> },
    /// `2 u w >= ||tail||^2`, `u, w >= 0`
    RotatedSecondOrder {
        u: LinExpr,
        w: LinExpr,
        tail: Vec<LinExpr>,
    },
    /// `y exp(x / y) <= z`, `y > 0`; with `y = 1` this is `x <= ln z`.
    Exponential { x: LinExpr, y: LinExpr, z: LinExpr },
}

impl Constraint {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            Constraint::Zero(_) | Constraint::NonNeg(_) => ConstraintKind::Linear,
            Constraint::SecondOrder { .. } => ConstraintKind::SecondOrderCone,
            Constraint::RotatedSecondOrder { .. } => ConstraintKind::RotatedSecondOrderCone,
            Constraint::Exponential { .. } => ConstraintKind::ExponentialCone,
        }
    }

    fn exprs(&self) -> Vec<&LinExpr> {
        match self {
            Constraint::Zero(e) | Constraint::NonNeg(e) => vec![e],
            Constraint::SecondOrder { head, tail } => std::iter::once(head).chain(tail).collect(),
            Constraint::RotatedSecondOrder { u, w, tail } => [u, w].into_iter().chain(tail).collect(),
            Constraint::Exponential { x, y, z } => vec![x, y, z],
        }
    }

    /// Non-negative amount by which `x` violates the constraint.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let norm = |t: &[LinExpr]| t.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
        match self {
            Constraint::Zero(e) => e.eval(x).abs(),
            Constraint::NonNeg(e) => (-e.eval(x)).max(0.0),
            Constraint::SecondOrder { head, tail } => (norm(tail) - head.eval(x)).max(0.0),
            Constraint::RotatedSecondOrder { u, w, tail } => {
                let (u, w) = (u.eval(x), w.eval(x));
                let t = norm(tail);
                // distance-like measure through the equivalent SOC form
                let soc = ((u - w).powi(2) + 2.0 * t * t).sqrt() - (u + w);
                soc.max(0.0).max(-u).max(-w)
            }
            Constraint::Exponential { x: ex, y, z } => {
                let (a, b, c) = (ex.eval(x), y.eval(x), z.eval(x));
                if b > 0.0 {
                    (b * (a / b).exp() - c).max(0.0)
                } else {
                    // closure of the cone at y = 0: x <= 0, z >= 0
                    a.max(0.0).max(-c).max(-b)
                }
            }
        }
    }
}

/// Constraint taxonomy, used for counting and routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Linear,
    SecondOrderCone,
    RotatedSecondOrderCone,
    ExponentialCone,
    Psd,
}

/// A minimization problem over real scalars and complex Hermitian PSD blocks.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub(crate) domains: Vec<Domain>,
    pub(crate) objective: LinExpr,
    pub(crate) constraints: Vec<Constraint>,
    pub(crate) blocks: Vec<HermitianVar>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, domain: Domain) -> Var {
        self.domains.push(domain);
        Var(self.domains.len() - 1)
    }

    pub fn add_vars(&mut self, n: usize, domain: Domain) -> Vec<Var> {
        (0..n).map(|_| self.add_var(domain)).collect()
    }

    /// Declare an `n x n` Hermitian matrix variable constrained to be PSD.
    pub fn add_hermitian_psd(&mut self, n: usize) -> HermitianVar {
        let diag = self.add_vars(n, Domain::Free);
        let upper = (0..n * n.saturating_sub(1) / 2)
            .map(|_| (self.add_var(Domain::Free), self.add_var(Domain::Free)))
            .collect();
        let h = HermitianVar { n, diag, upper };
        self.blocks.push(h.clone());
        h
    }

    /// Minimize `objective`.
    pub fn minimize(&mut self, objective: LinExpr) {
        self.objective = objective;
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// `lhs == rhs`
    pub fn add_eq(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add(Constraint::Zero(lhs - rhs));
    }

    /// `lhs >= rhs`
    pub fn add_ge(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add(Constraint::NonNeg(lhs - rhs));
    }

    /// `lhs <= rhs`
    pub fn add_le(&mut self, lhs: LinExpr, rhs: LinExpr) {
        self.add(Constraint::NonNeg(rhs - lhs));
    }

    pub fn n_vars(&self) -> usize {
        self.domains.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn hermitian_blocks(&self) -> &[HermitianVar] {
        &self.blocks
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn domain(&self, v: Var) -> Domain {
        self.domains[v.0]
    }

    pub fn count(&self, kind: ConstraintKind) -> usize {
        if kind == ConstraintKind::Psd {
            return self.blocks.len();
        }
        self.constraints.iter().filter(|c| c.kind() == kind).count()
    }

    /// Check that every expression references declared variables.
    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.n_vars();
        let check = |e: &LinExpr, what: &str| match e.max_var() {
            Some(k) if k >= n => Err(ConicError::UnknownVariable {
                index: k,
                n_vars: n,
                location: what.to_string(),
            }),
            _ => Ok(()),
        };
        check(&self.objective, "objective")?;
        for (k, c) in self.constraints.iter().enumerate() {
            for e in c.exprs() {
                check(e, &format!("constraint {k}"))?;
            }
        }
        for b in &self.blocks {
            if let Some(v) = b.vars().find(|v| v.0 >= n) {
                return Err(ConicError::UnknownVariable {
                    index: v.0,
                    n_vars: n,
                    location: "hermitian block".into(),
                });
            }
        }
        Ok(())
    }

    /// Largest violation over domains, conic constraints and PSD blocks at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dom = self
            .domains
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == Domain::NonNeg)
            .map(|(k, _)| (-x[k]).max(0.0))
            .fold(0.0, f64::max);
        let cons = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let psd = self
            .blocks
            .iter()
            .map(|b| {
                let m = b.value(x);
                let e = SymmetricEigen::new(m).eigenvalues;
                (-e.min()).max(0.0)
            })
            .fold(0.0, f64::max);
        dom.max(cons).max(psd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Result of one conic solve.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Primal point; present iff `status == Optimal`.
    pub x: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Largest constraint violation at `x` (0 when no point is returned).
    pub max_violation: f64,
    /// Final iterate of a run that stopped short of the requested accuracy
    /// (`NumericalFailure` only, and only when the backend exposes one). Not
    /// guaranteed feasible.
    pub last_iterate: Option<Vec<f64>>,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, e: &LinExpr) -> Option<f64> {
        self.x.as_deref().map(|x| e.eval(x))
    }

    pub fn var(&self, v: Var) -> Option<f64> {
        self.x.as_deref().map(|x| x[v.0])
    }

    pub fn matrix(&self, h: &HermitianVar) -> Option<DMatrix<C64>> {
        self.x.as_deref().map(|x| h.value(x))
    }
}
