use std::collections::BTreeMap;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::ConicError;
use crate::expr::LinExpr;
use crate::program::{ConicProgram, Constraint, Domain, SolveOutcome, SolveStatus};

/// Rows `s = b - A x` accumulated cone by cone.
#[derive(Default)]
struct RowBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl RowBuilder {
    fn push_row(&mut self, e: &LinExpr) {
        let mut row = BTreeMap::new();
        for (v, a) in e.terms() {
            *row.entry(v.index()).or_insert(0.0) -= a;
        }
        self.rows.push(row);
        self.b.push(e.constant_term());
    }

    fn push_cone(&mut self, exprs: &[LinExpr], cone: SupportedConeT<f64>) {
        for e in exprs {
            self.push_row(e);
        }
        use SupportedConeT::*;
        match (self.cones.last_mut(), &cone) {
            (Some(ZeroConeT(n)), ZeroConeT(k)) => *n += k,
            (Some(NonnegativeConeT(n)), NonnegativeConeT(k)) => *n += k,
            _ => self.cones.push(cone),
        }
    }
}

pub(crate) fn solve(prog: &ConicProgram, accuracy: f64) -> Result<SolveOutcome, ConicError> {
    let start = Instant::now();
    let n = prog.n_vars();
    let mut rb = RowBuilder::default();

    for (k, d) in prog.domains.iter().enumerate() {
        if *d == Domain::NonNeg {
            let e = LinExpr::term(crate::Var(k), 1.0);
            rb.push_cone(&[e], SupportedConeT::NonnegativeConeT(1));
        }
    }
    let s2 = std::f64::consts::SQRT_2;
    for c in &prog.constraints {
        match c {
            Constraint::Zero(e) => rb.push_cone(std::slice::from_ref(e), SupportedConeT::ZeroConeT(1)),
            Constraint::NonNeg(e) => {
                rb.push_cone(std::slice::from_ref(e), SupportedConeT::NonnegativeConeT(1))
            }
            Constraint::SecondOrder { head, tail } => {
                let mut rows = vec![head.clone()];
                rows.extend(tail.iter().cloned());
                rb.push_cone(&rows, SupportedConeT::SecondOrderConeT(rows.len()));
            }
            Constraint::RotatedSecondOrder { u, w, tail } => {
                let mut rows = vec![u.clone() + w.clone(), u.clone() - w.clone()];
                rows.extend(tail.iter().map(|t| t.scaled(s2)));
                rb.push_cone(&rows, SupportedConeT::SecondOrderConeT(rows.len()));
            }
            Constraint::Exponential { x, y, z } => {
                rb.push_cone(
                    &[x.clone(), y.clone(), z.clone()],
                    SupportedConeT::ExponentialConeT(),
                );
            }
        }
    }
    for blk in &prog.blocks {
        let m = blk.dim();
        let mut rows = Vec::with_capacity(m * (2 * m + 1));
        for c in 0..2 * m {
            for r in 0..=c {
                let e = match (r < m, c < m) {
                    (true, true) => blk.entry(r, c).0,
                    (true, false) => -blk.entry(r, c - m).1,
                    (false, false) => blk.entry(r - m, c - m).0,
                    (false, true) => unreachable!("r <= c"),
                };
                rows.push(if r == c { e } else { e.scaled(s2) });
            }
        }
        rb.push_cone(&rows, SupportedConeT::PSDTriangleConeT(2 * m));
    }

    let n_rows = rb.rows.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (r, row) in rb.rows.iter().enumerate() {
        for (&cidx, &a) in row {
            if a != 0.0 {
                cols[cidx].push((r, a));
            }
        }
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &cols {
        for &(r, a) in col {
            rowval.push(r);
            nzval.push(a);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(n_rows, n, colptr, rowval, nzval);
    let p = CscMatrix::<f64>::zeros((n, n));
    let mut q = vec![0.0; n];
    for (v, c) in prog.objective.terms() {
        q[v.index()] += c;
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(std::env::var_os("CONIC_VERBOSE").is_some())
        .max_iter(200)
        .tol_gap_abs(accuracy)
        .tol_gap_rel(accuracy)
        .tol_feas(accuracy)
        .build()
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &rb.b, &rb.cones, settings)
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    solver.solve();

    let x = solver.solution.x.clone();
    let viol = prog.max_violation(&x);
    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved if viol <= accuracy.sqrt() => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::Unbounded
        }
        _ => SolveStatus::NumericalFailure,
    };
    let optimal = status == SolveStatus::Optimal;
    let stalled = status == SolveStatus::NumericalFailure && x.iter().all(|v| v.is_finite());
    Ok(SolveOutcome {
        status,
        objective: if optimal { prog.objective.eval(&x) } else { f64::NAN },
        last_iterate: stalled.then(|| x.clone()),
        x: optimal.then_some(x),
        iterations: solver.info.iterations as usize,
        wall_time: start.elapsed(),
        max_violation: if optimal { viol } else { 0.0 },
    })
}
