//! Lowering of a [`ConicProgram`] with only linear constraints and Hermitian
//! PSD blocks into the standard form consumed by [`crate::ipm`].

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::hermitian::C64;
use crate::ipm::{self, Coef, Row, SdpData};
use crate::program::{ConicProgram, Constraint, Domain, SolveOutcome, SolveStatus};

#[derive(Clone, Copy, Debug)]
enum Slot {
    Diag { b: usize, i: usize },
    Re { b: usize, i: usize, j: usize },
    Im { b: usize, i: usize, j: usize },
    Lp(usize),
    Split(usize, usize),
}

/// True when the program fits the standard form.
pub(crate) fn applicable(prog: &ConicProgram) -> bool {
    !prog.blocks.is_empty()
        && prog
            .constraints
            .iter()
            .all(|c| matches!(c, Constraint::Zero(_) | Constraint::NonNeg(_)))
}

struct Lowering {
    slots: Vec<Slot>,
    dims: Vec<usize>,
    n_lp: usize,
}

impl Lowering {
    fn new(prog: &ConicProgram) -> Self {
        let mut slots = vec![None; prog.n_vars()];
        for (b, h) in prog.blocks.iter().enumerate() {
            for (i, v) in h.diag.iter().enumerate() {
                slots[v.0] = Some(Slot::Diag { b, i });
            }
            for i in 0..h.n {
                for j in (i + 1)..h.n {
                    let (re, im) = h.upper[h.upper_index(i, j)];
                    slots[re.0] = Some(Slot::Re { b, i, j });
                    slots[im.0] = Some(Slot::Im { b, i, j });
                }
            }
        }
        let mut n_lp = 0;
        let slots = slots
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                s.unwrap_or_else(|| match prog.domains[k] {
                    Domain::NonNeg => {
                        n_lp += 1;
                        Slot::Lp(n_lp - 1)
                    }
                    Domain::Free => {
                        n_lp += 2;
                        Slot::Split(n_lp - 2, n_lp - 1)
                    }
                })
            })
            .collect();
        Self {
            slots,
            dims: prog.blocks.iter().map(|h| h.n).collect(),
            n_lp,
        }
    }

    /// Accumulate `coef * var` into per-block entry maps and an LP map.
    fn scatter(
        &self,
        terms: impl Iterator<Item = (usize, f64)>,
        blocks: &mut [BTreeMap<(usize, usize), C64>],
        lp: &mut BTreeMap<usize, f64>,
    ) {
        for (v, c) in terms {
            match self.slots[v] {
                Slot::Diag { b, i } => *blocks[b].entry((i, i)).or_default() += c,
                Slot::Re { b, i, j } => {
                    *blocks[b].entry((i, j)).or_default() += 0.5 * c;
                    *blocks[b].entry((j, i)).or_default() += 0.5 * c;
                }
                Slot::Im { b, i, j } => {
                    *blocks[b].entry((i, j)).or_default() += C64::new(0.0, 0.5 * c);
                    *blocks[b].entry((j, i)).or_default() += C64::new(0.0, -0.5 * c);
                }
                Slot::Lp(l) => *lp.entry(l).or_default() += c,
                Slot::Split(p, m) => {
                    *lp.entry(p).or_default() += c;
                    *lp.entry(m).or_default() -= c;
                }
            }
        }
    }

    fn row(&self, blocks: Vec<BTreeMap<(usize, usize), C64>>, lp: BTreeMap<usize, f64>) -> Row {
        let blocks = blocks
            .into_iter()
            .zip(&self.dims)
            .map(|(map, &n)| {
                let entries: Vec<_> = map
                    .into_iter()
                    .filter(|(_, a)| a.norm() > 0.0)
                    .map(|((p, q), a)| (p, q, a))
                    .collect();
                if entries.is_empty() {
                    None
                } else if entries.len() * 4 > n * n {
                    let mut m = DMatrix::zeros(n, n);
                    for (p, q, a) in entries {
                        m[(p, q)] = a;
                    }
                    Some(Coef::Dense(m))
                } else {
                    Some(Coef::Sparse(entries))
                }
            })
            .collect();
        Row {
            blocks,
            lp: lp.into_iter().filter(|(_, a)| *a != 0.0).collect(),
        }
    }

    fn empty_maps(&self) -> Vec<BTreeMap<(usize, usize), C64>> {
        vec![BTreeMap::new(); self.dims.len()]
    }
}

pub(crate) fn solve(prog: &ConicProgram, accuracy: f64) -> SolveOutcome {
    let start = Instant::now();
    let low = Lowering::new(prog);
    let n_slack = prog
        .constraints
        .iter()
        .filter(|c| matches!(c, Constraint::NonNeg(_)))
        .count();
    let n_lp = low.n_lp + n_slack;

    let mut rows = Vec::with_capacity(prog.constraints.len());
    let mut b = Vec::with_capacity(prog.constraints.len());
    let mut next_slack = low.n_lp;
    for c in &prog.constraints {
        let e = match c {
            Constraint::Zero(e) | Constraint::NonNeg(e) => e,
            _ => unreachable!("routing admits only linear constraints"),
        };
        let mut blocks = low.empty_maps();
        let mut lp = BTreeMap::new();
        low.scatter(e.terms().map(|(v, a)| (v.0, a)), &mut blocks, &mut lp);
        if matches!(c, Constraint::NonNeg(_)) {
            lp.insert(next_slack, -1.0);
            next_slack += 1;
        }
        let mut row = low.row(blocks, lp);
        let mut rhs = -e.constant_term();
        let norm = (row
            .blocks
            .iter()
            .flatten()
            .map(|c| match c {
                Coef::Sparse(es) => es.iter().map(|e| e.2.norm_sqr()).sum::<f64>(),
                Coef::Dense(m) => m.norm_squared(),
            })
            .sum::<f64>()
            + row.lp.iter().map(|e| e.1 * e.1).sum::<f64>())
        .sqrt();
        if norm == 0.0 {
            if rhs.abs() > accuracy {
                return failed(SolveStatus::Infeasible, start);
            }
            continue;
        }
        for c in row.blocks.iter_mut().flatten() {
            c.scale(1.0 / norm);
        }
        row.lp.iter_mut().for_each(|e| e.1 /= norm);
        rhs /= norm;
        rows.push(row);
        b.push(rhs);
    }

    let mut cmaps = low.empty_maps();
    let mut clp = BTreeMap::new();
    low.scatter(prog.objective.terms().map(|(v, a)| (v.0, a)), &mut cmaps, &mut clp);
    let c: Vec<DMatrix<C64>> = cmaps
        .into_iter()
        .zip(&low.dims)
        .map(|(map, &n)| {
            let mut m = DMatrix::zeros(n, n);
            for ((p, q), a) in map {
                m[(p, q)] += a;
            }
            m
        })
        .collect();
    let mut c_lp = DVector::zeros(n_lp);
    for (l, a) in clp {
        c_lp[l] += a;
    }

    let data = SdpData {
        dims: low.dims.clone(),
        n_lp,
        c,
        c_lp,
        rows,
        b: DVector::from_vec(b),
    };
    let sol = ipm::solve(&data, accuracy, 100);
    if sol.status != SolveStatus::Optimal {
        let mut out = failed(sol.status, start);
        out.iterations = sol.iterations;
        return out;
    }

    let x: Vec<f64> = low
        .slots
        .iter()
        .map(|s| match *s {
            Slot::Diag { b, i } => sol.x[b][(i, i)].re,
            Slot::Re { b, i, j } => sol.x[b][(i, j)].re,
            Slot::Im { b, i, j } => sol.x[b][(i, j)].im,
            Slot::Lp(l) => sol.x_lp[l],
            Slot::Split(p, m) => sol.x_lp[p] - sol.x_lp[m],
        })
        .collect();
    SolveOutcome {
        status: SolveStatus::Optimal,
        objective: prog.objective.eval(&x),
        max_violation: prog.max_violation(&x),
        x: Some(x),
        iterations: sol.iterations,
        wall_time: start.elapsed(),
        last_iterate: None,
    }
}

fn failed(status: SolveStatus, start: Instant) -> SolveOutcome {
    SolveOutcome {
        status,
        x: None,
        objective: f64::NAN,
        iterations: 0,
        wall_time: start.elapsed(),
        max_violation: 0.0,
        last_iterate: None,
    }
}
