//! Reflection-phase design for fixed powers.
//!
//! Slot-2 phases have a closed form. Slot-1 phases are found through the
//! lifted matrix `V = [v; 1][v; 1]^H` with `v = conj(phi)`: every SINR target
//! is linear in `V`, and rank one is recovered by a difference-of-convex
//! sequence on `tr(V) - lambda_max(V)`.

use crsma_conic::{ConicProgram, Domain, HermitianVar, LinExpr};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelSet};
use crate::config::Params;
use crate::error::{Error, Result};
use crate::rates::{self, check_feasibility, PhaseVector, PowerSolution, Stream};
use crate::C64;

/// Targets below this are dropped: the corresponding rate needs no SINR.
const NEGLIGIBLE_TARGET: f64 = 1e-9;
/// Fraction of the relaxation's margins kept while pushing toward rank one.
const MARGIN_KEEP: f64 = 0.5;

/// Relative residual decrease below which the DC loop is abandoned.
const DC_STALL: f64 = 1e-3;

/// Phases that co-phase every reflected D2D path `conj(hhat_m) h_1r,m` with
/// the direct link `h_12`. Zero paths get phase `arg(h_12)`.
pub fn closed_form_theta2(h_12: C64, h_1r: &CVec, hhat_r2: &CVec) -> Result<PhaseVector> {
    if h_1r.len() != hhat_r2.len() {
        return Err(Error::Shape(format!("{} vs {} D2D elements", h_1r.len(), hhat_r2.len())));
    }
    let direct = h_12.arg();
    Ok(PhaseVector::new(
        h_1r.iter()
            .zip(hhat_r2.iter())
            .map(|(a, b)| direct - (a * b.conj()).arg())
            .collect(),
    ))
}

/// [`closed_form_theta2`] on the links of a channel draw.
pub fn slot2_phases(ch: &ChannelSet) -> PhaseVector {
    closed_form_theta2(ch.h_12, &ch.h_1r, &ch.hhat_r2).expect("channel set has consistent lengths")
}

/// Which SINR requirement a lifted constraint encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Requirement {
    /// Private stream of user `k` meets its QoS with the assigned split.
    Private(usize),
    /// Near user decodes the common stream.
    CommonNear,
    /// Far user decodes the common stream, given the relayed part.
    CommonFar,
}

/// `tr(desired V) >= target (tr(interference V) + 1)`, noise normalized.
#[derive(Clone, Debug)]
pub struct LiftedConstraint {
    pub requirement: Requirement,
    pub desired: DMatrix<C64>,
    pub interference: DMatrix<C64>,
    pub target: f64,
}

impl LiftedConstraint {
    /// `tr(desired V) - target (tr(interference V) + 1)`
    pub fn margin(&self, v: &DMatrix<C64>) -> f64 {
        trace_product(&self.desired, v) - self.target * (trace_product(&self.interference, v) + 1.0)
    }
}

fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum::<C64>().re
}

/// SINR constraints on `V` for fixed powers and split.
#[derive(Clone, Debug)]
pub struct LiftedProblem {
    /// `M + 1`
    pub dim: usize,
    pub constraints: Vec<LiftedConstraint>,
}

/// `[a; b]` with `a = diag(h_r^H) H_br^H p` and `b = h_b^H p`, so that
/// `h^H p = [v; 1]^H [a; b]`.
fn augmented(ch: &ChannelSet, k: usize, p: &CVec, scale: f64) -> CVec {
    let m = ch.n_ris();
    let hp = ch.h_br.adjoint() * p;
    let hr = ch.ris(k);
    let mut out = CVec::zeros(m + 1);
    for i in 0..m {
        out[i] = hr[i].conj() * hp[i] * scale;
    }
    out[m] = ch.direct(k).dotc(p) * scale;
    out
}

/// `(Q, |b|^2)` with `|h_k^H p|^2 = |b|^2 + tr(Q [v; 1][v; 1]^H)`: `Q` is
/// `[a; b][a; b]^H` with its corner entry removed.
pub fn lifted_quadratic(ch: &ChannelSet, k: usize, p: &CVec) -> (DMatrix<C64>, f64) {
    let g = augmented(ch, k, p, 1.0);
    let m = ch.n_ris();
    let mut q = &g * g.adjoint();
    let b2 = q[(m, m)].re;
    q[(m, m)] = C64::from(0.0);
    (q, b2)
}

/// `[v; 1][v; 1]^H` for `v = conj(phi)`.
pub fn lift(theta: &PhaseVector) -> DMatrix<C64> {
    let m = theta.len();
    let mut v = theta.phases().map(|z| z.conj()).resize_vertically(m + 1, C64::from(0.0));
    v[m] = C64::from(1.0);
    &v * v.adjoint()
}

pub fn build_lifted_problem(
    ch: &ChannelSet,
    sol: &PowerSolution,
    theta2: &PhaseVector,
    p: &Params,
) -> Result<LiftedProblem> {
    let m = ch.n_ris();
    if theta2.len() != m {
        return Err(Error::Shape(format!("slot-2 phases {} vs {m} elements", theta2.len())));
    }
    let d = sol.delta;
    let target = |bits: f64| ((bits / d).exp2() - 1.0).max(0.0);
    let outer = |a: &CVec| a * a.adjoint();
    let streams = [Stream::Common, Stream::Private(0), Stream::Private(1)];
    let aug = |k: usize| -> Vec<CVec> {
        let s = 1.0 / p.noise[k].sqrt();
        streams.iter().map(|&st| augmented(ch, k, sol.precoder(st), s)).collect()
    };
    let c_sum = sol.c_split[0] + sol.c_split[1];
    let relayed = rates::rate_common_slot2(ch, theta2, sol.p_d, d, p.noise[1])?;
    let mut constraints = Vec::new();
    for k in 0..2 {
        let a = aug(k);
        constraints.push(LiftedConstraint {
            requirement: Requirement::Private(k),
            desired: outer(&a[1 + k]),
            interference: outer(&a[2 - k]),
            target: target(p.rate_thresholds[k] - sol.c_split[k]),
        });
        constraints.push(LiftedConstraint {
            requirement: if k == 0 { Requirement::CommonNear } else { Requirement::CommonFar },
            desired: outer(&a[0]),
            interference: outer(&a[1]) + outer(&a[2]),
            target: target(if k == 0 { c_sum } else { c_sum - relayed }),
        });
    }
    constraints.retain(|c| c.target > NEGLIGIBLE_TARGET);
    Ok(LiftedProblem { dim: m + 1, constraints })
}

/// Largest eigenvalue of a Hermitian matrix and a unit eigenvector for it.
/// Ties go to the lowest index in the eigensolver's ordering.
pub fn top_eigenpair(v: &DMatrix<C64>) -> (f64, CVec) {
    let e = SymmetricEigen::new(v.clone());
    let i = e.eigenvalues.imax();
    (e.eigenvalues[i], e.eigenvectors.column(i).into_owned())
}

/// `u u^H` for a unit top eigenvector `u`: a subgradient of the spectral norm
/// on the PSD cone.
pub fn spectral_subgradient(v: &DMatrix<C64>) -> DMatrix<C64> {
    let (_, u) = top_eigenpair(v);
    &u * u.adjoint()
}

/// `||V||_* - ||V||_2` for PSD `V`, i.e. `tr(V) - lambda_max(V)`.
pub fn rank_one_residual(v: &DMatrix<C64>) -> f64 {
    let tr: f64 = v.diagonal().iter().map(|z| z.re).sum();
    (tr - top_eigenpair(v).0).max(0.0)
}

/// Phases from the dominant eigenvector, normalized so the last entry is one
/// and projected to unit modulus.
pub fn extract_phases(v: &DMatrix<C64>) -> Result<PhaseVector> {
    let (lam, u) = top_eigenpair(v);
    let n = u.len();
    let last = u[n - 1] * lam.max(0.0).sqrt();
    if last.norm() < 1e-9 {
        return Err(Error::Domain("lifted matrix has a vanishing last entry".into()));
    }
    Ok(PhaseVector::new((0..n - 1).map(|i| -(u[i] * lam.sqrt() / last).arg()).collect()))
}

/// Unit diagonal plus `tr(D V) - mu (tr(I V) + 1) >= mu t_c` per constraint.
fn add_constraints(prog: &mut ConicProgram, h: &HermitianVar, lp: &LiftedProblem, t: &[LinExpr]) {
    for i in 0..lp.dim {
        prog.add_eq(h.entry(i, i).0, 1.0.into());
    }
    for (c, t) in lp.constraints.iter().zip(t) {
        let lhs = h.inner(&c.desired) - h.inner(&c.interference) * c.target - c.target;
        prog.add_ge(lhs, t.scaled(c.target));
    }
}

/// Relaxation (rank constraint dropped) that maximizes the sum of relative
/// margins `t_c in [0, 1]`. Returns the matrix and the margins.
pub fn margin_relaxation(lp: &LiftedProblem) -> Result<(DMatrix<C64>, Vec<f64>)> {
    let mut prog = ConicProgram::new();
    let h = prog.add_hermitian_psd(lp.dim);
    let t = prog.add_vars(lp.constraints.len(), Domain::NonNeg);
    let mut total = LinExpr::zero();
    for &v in &t {
        prog.add_le(v.into(), 1.0.into());
        total.add_term(v, -1.0);
    }
    let rows: Vec<LinExpr> = t.iter().map(|&v| v.into()).collect();
    add_constraints(&mut prog, &h, lp, &rows);
    prog.minimize(total);
    let out = crsma_conic::solve(&prog)?;
    match (out.matrix(&h), out.x.as_deref()) {
        (Some(v), Some(x)) if out.is_optimal() => Ok((v, t.iter().map(|v| x[v.index()].max(0.0)).collect())),
        _ => Err(Error::NumericalFailure {
            stage: "phase relaxation",
            iteration: 0,
        }),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DcOutcome {
    #[serde(skip)]
    pub v: DMatrix<C64>,
    /// `tr(V) - lambda_max(V)` before each step and after the last one.
    pub residuals: Vec<f64>,
    /// `tr(V) - <u u^H, V>` at each solved step, `u` from the previous point.
    pub objectives: Vec<f64>,
    /// Solver status of each step.
    pub statuses: Vec<String>,
    pub converged: bool,
    /// Relative margin kept for each constraint in every step.
    pub margins: Vec<f64>,
}

/// Drive `V0` toward rank one while keeping constraint `c` at relative
/// margin `margins[c]`. Each step maximizes `<u u^H, V>` for the current dominant
/// eigenvector `u`; the trace is pinned by the unit diagonal.
pub fn dc_rank_one_solve(lp: &LiftedProblem, v0: DMatrix<C64>, margins: &[f64], p: &Params) -> Result<DcOutcome> {
    if margins.len() != lp.constraints.len() {
        return Err(Error::Shape(format!("{} margins for {} constraints", margins.len(), lp.constraints.len())));
    }
    let rows: Vec<LinExpr> = margins.iter().map(|&m| m.into()).collect();
    let mut v = v0;
    let mut residuals = vec![rank_one_residual(&v)];
    let mut objectives = Vec::new();
    let mut statuses = Vec::new();
    let mut converged = residuals[0] <= p.zeta_dc;
    for _ in 0..p.max_iter_dc {
        if converged {
            break;
        }
        let g = spectral_subgradient(&v);
        let mut prog = ConicProgram::new();
        let h = prog.add_hermitian_psd(lp.dim);
        add_constraints(&mut prog, &h, lp, &rows);
        prog.minimize(h.inner(&g) * -1.0);
        let out = crsma_conic::solve(&prog)?;
        statuses.push(out.status.to_string());
        let Some(next) = out.matrix(&h).filter(|_| out.is_optimal()) else {
            break;
        };
        objectives.push(lp.dim as f64 + out.objective);
        v = next;
        let r = rank_one_residual(&v);
        let prev = *residuals.last().expect("initial residual");
        residuals.push(r);
        converged = r <= p.zeta_dc;
        if !converged && prev - r <= DC_STALL * prev {
            break;
        }
    }
    Ok(DcOutcome {
        v,
        residuals,
        objectives,
        statuses,
        converged,
        margins: margins.to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct PhaseStep {
    /// New phases when accepted, the incumbent otherwise.
    pub theta1: PhaseVector,
    pub accepted: bool,
    /// Sum of the relaxation's relative margins.
    pub relaxation_margin: f64,
    pub dc: Option<DcOutcome>,
}

/// One phase update for fixed powers. The new phases are kept only if the
/// incumbent power solution stays feasible under them.
pub fn phase_step(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    sol: &PowerSolution,
    p: &Params,
) -> Result<PhaseStep> {
    let keep = |margin, dc| PhaseStep {
        theta1: theta1.clone(),
        accepted: false,
        relaxation_margin: margin,
        dc,
    };
    if ch.n_ris() == 0 {
        return Ok(keep(0.0, None));
    }
    let lp = build_lifted_problem(ch, sol, theta2, p)?;
    let (v0, t) = match margin_relaxation(&lp) {
        Ok(r) => r,
        Err(e) if e.is_numerical_failure() => {
            log::debug!("phase step kept the incumbent: {e}");
            return Ok(keep(0.0, None));
        }
        Err(e) => return Err(e),
    };
    let s: f64 = t.iter().sum();
    if !(s > 0.0) {
        return Ok(keep(s, None));
    }
    let kept: Vec<f64> = t.iter().map(|t| MARGIN_KEEP * t).collect();
    let dc = dc_rank_one_solve(&lp, v0, &kept, p)?;
    let Ok(cand) = extract_phases(&dc.v) else {
        return Ok(keep(s, Some(dc)));
    };
    if check_feasibility(sol, ch, &cand, theta2, p)?.is_feasible() {
        Ok(PhaseStep {
            theta1: cand,
            accepted: true,
            relaxation_margin: s,
            dc: Some(dc),
        })
    } else {
        Ok(keep(s, Some(dc)))
    }
}
