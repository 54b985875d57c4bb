//! Precoder, common-split and relay-power optimization for fixed phases by
//! successive convex approximation.
//!
//! Every iterate is expressed with channels normalized by the noise standard
//! deviation, so interference-plus-noise levels are `>= 1` inside the cone
//! program. Returned iterates are audited with [`crate::rates`].

use std::f64::consts::LN_2;

use crsma_conic::{ConicProgram, Constraint, Domain, LinExpr, SolveStatus, Var};
use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelSet};
use crate::config::Params;
use crate::error::{Error, Result};
use crate::rates::{self, check_feasibility, d2d_channel, gain, total_energy, PhaseVector, PowerSolution};
use crate::C64;

/// Inner accuracy of every cone program solved here.
pub const SOLVER_ACCURACY: f64 = 1e-8;
/// Segments of the relay-rate under-approximation.
pub const PWL_SEGMENTS: usize = 64;
/// Relative common-rate shortfall tolerated after splitting.
const SPLIT_SLACK: f64 = 1e-12;

/// Multiple-access mode of the broadcast slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    /// Common stream plus two private streams.
    Rsma,
    /// Superposition coding: the far user's message rides the stream every
    /// user decodes first, the near user has the only private stream.
    Noma,
}

/// `2 Re{conj(v_n) v} / u_n - |v_n|^2 u / u_n^2`, the affine under-estimator of
/// `|v|^2 / u` that is tight at `(u_n, v_n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineBound {
    pub coef_v: C64,
    pub coef_u: f64,
}

impl AffineBound {
    pub fn eval(&self, u: f64, v: C64) -> f64 {
        (self.coef_v.conj() * v).re + self.coef_u * u
    }
}

pub fn lower_bound_approx(u_n: f64, v_n: C64) -> Result<AffineBound> {
    if !(u_n > 0.0) {
        return Err(Error::Domain(format!("expansion point u_n = {u_n} must be positive")));
    }
    Ok(AffineBound {
        coef_v: v_n * (2.0 / u_n),
        coef_u: -v_n.norm_sqr() / (u_n * u_n),
    })
}

/// Noise-normalized effective channels.
#[derive(Clone, Debug)]
pub(crate) struct Normalized {
    pub h: [CVec; 2],
    /// `|h_12eff|^2 / sigma_2^2`
    pub g12: f64,
}

pub(crate) fn normalize(ch: &ChannelSet, theta1: &PhaseVector, theta2: &PhaseVector, p: &Params) -> Result<Normalized> {
    let h = [0, 1].map(|k| rates::user_channel(ch, k, theta1).map(|h| h / C64::from(p.noise[k].sqrt())));
    let [h0, h1] = h;
    Ok(Normalized {
        h: [h0?, h1?],
        g12: d2d_channel(ch, theta2)?.norm_sqr() / p.noise[1],
    })
}

/// One SCA iterate: a power solution plus the exact slack values it induces.
/// `beta` and `gamma` are in physical units (watts and linear SINR).
#[derive(Clone, Debug, PartialEq)]
pub struct ScaIterate {
    pub sol: PowerSolution,
    /// `sum_{j != k} |h_k^H p_j|^2 + sigma_k^2`
    pub beta_p: [f64; 2],
    /// `sum_j |h_k^H p_j|^2 + sigma_k^2`
    pub beta_c: [f64; 2],
    pub gamma_p: [f64; 2],
    pub gamma_c: [f64; 2],
    pub eta: f64,
}

impl ScaIterate {
    pub fn exact(sol: PowerSolution, ch: &ChannelSet, theta1: &PhaseVector, p: &Params) -> Result<Self> {
        let mut beta_p = [0.0; 2];
        let mut beta_c = [0.0; 2];
        let mut gamma_p = [0.0; 2];
        let mut gamma_c = [0.0; 2];
        for k in 0..2 {
            let h = rates::user_channel(ch, k, theta1)?;
            let own = gain(&h, sol.private(k));
            let other = gain(&h, sol.private(1 - k));
            beta_p[k] = other + p.noise[k];
            beta_c[k] = own + other + p.noise[k];
            gamma_p[k] = own / beta_p[k];
            gamma_c[k] = gain(&h, &sol.p_c) / beta_c[k];
        }
        let eta = total_energy(&sol);
        Ok(Self {
            sol,
            beta_p,
            beta_c,
            gamma_p,
            gamma_c,
            eta,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Goal {
    Energy,
    /// Minimize the common QoS shortfall `s`, bounded below by `-cap`.
    Restore { cap: f64 },
}

#[derive(Clone, Debug)]
struct ScaVars {
    /// `(re, im)` per stream, order common, private 1, private 2
    p: [(Vec<Var>, Vec<Var>); 3],
    c: [Var; 2],
    p_d: Var,
}

/// A built cone program together with the handles needed to read it back.
#[derive(Clone, Debug)]
pub struct ScaProgram {
    pub program: ConicProgram,
    /// Problem-level variable count (complex precoder entries counted once,
    /// solver auxiliaries excluded).
    pub logical_variables: usize,
    /// Problem-level constraint count (each constraint family member once).
    pub logical_constraints: usize,
    vars: ScaVars,
    p_d_upper: f64,
}

/// `(Re h^H p, Im h^H p)` for `p = re + j im`.
fn inner_expr(h: &CVec, re: &[Var], im: &[Var]) -> (LinExpr, LinExpr) {
    let mut a = LinExpr::zero();
    let mut b = LinExpr::zero();
    for n in 0..h.len() {
        a.add_term(re[n], h[n].re).add_term(im[n], h[n].im);
        b.add_term(im[n], h[n].re).add_term(re[n], -h[n].im);
    }
    (a, b)
}

/// Breakpoints for the chordal under-approximation of the relay rate on
/// `[0, upper]`: zero, a geometric grid and a cluster around `incumbent`.
pub fn pwl_breakpoints(upper: f64, incumbent: f64) -> Vec<f64> {
    if upper <= 0.0 {
        return vec![0.0];
    }
    let lo = upper * 1e-8;
    let mut xs: Vec<f64> = std::iter::once(0.0)
        .chain((0..PWL_SEGMENTS).map(|i| lo * (upper / lo).powf(i as f64 / (PWL_SEGMENTS - 1) as f64)))
        .collect();
    *xs.last_mut().unwrap() = upper;
    if incumbent > 0.0 && incumbent < upper {
        for f in [1.0, 0.99, 0.999, 1.001, 1.01] {
            let x = incumbent * f;
            if x > 0.0 && x < upper {
                xs.push(x);
            }
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1e-300));
    xs
}

/// Upper bound on the relay power at time split `delta`.
pub fn relay_power_cap(delta: f64, p: &Params) -> f64 {
    if delta < 1.0 {
        p.p_d2d
    } else {
        0.0
    }
}

fn build(
    nz: &Normalized,
    delta: f64,
    it: &ScaIterate,
    p: &Params,
    access: Access,
    goal: Goal,
) -> Result<ScaProgram> {
    if it.beta_p.iter().chain(&it.beta_c).any(|b| !(*b > 0.0)) {
        return Err(Error::Domain("iterate interference levels must be positive".into()));
    }
    let nt = nz.h[0].len();
    let mut prog = ConicProgram::new();
    let mut n_vars = 0;
    let mut n_cons = 0;

    let p_vars: [(Vec<Var>, Vec<Var>); 3] = std::array::from_fn(|_| {
        (prog.add_vars(nt, Domain::Free), prog.add_vars(nt, Domain::Free))
    });
    n_vars += 3 * nt;
    // a sign domain plus an equality pinning the variable at zero leaves no
    // interior, so pinned variables stay free
    let c_dom = |k: usize| {
        if access == Access::Noma && k == 0 {
            Domain::Free
        } else {
            Domain::NonNeg
        }
    };
    let c = [prog.add_var(c_dom(0)), prog.add_var(c_dom(1))];
    let p_d = prog.add_var(Domain::NonNeg);
    // SINR slacks are only bounded through their tangents; negative values are
    // merely conservative
    let gamma_p = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let gamma_c = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let beta_p = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let beta_c = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let eta = prog.add_var(Domain::Free);
    n_vars += 2 + 1 + 4 + 4 + 1;
    let tau = prog.add_var(Domain::NonNeg);
    let u_p = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let u_c = [prog.add_var(Domain::Free), prog.add_var(Domain::Free)];
    let r_d = prog.add_var(Domain::Free);

    if access == Access::Noma {
        for v in p_vars[2].0.iter().chain(&p_vars[2].1) {
            prog.add_eq((*v).into(), 0.0.into());
        }
        prog.add_eq(c[0].into(), 0.0.into());
    }

    let v = |k: usize, j: usize| inner_expr(&nz.h[k], &p_vars[j].0, &p_vars[j].1);
    let rate = delta / LN_2;
    let c_sum = LinExpr::from(c[0]) + c[1];
    let shortfall = match goal {
        Goal::Energy => None,
        Goal::Restore { cap } => {
            let s = prog.add_var(Domain::Free);
            prog.add_ge(s.into(), (-cap).into());
            Some(s)
        }
    };

    for k in 0..2 {
        let noise = p.noise[k];
        // tangent bounds on |h^H p|^2 / beta
        let bounds = [
            (1 + k, it.beta_p[k] / noise, gamma_p[k], beta_p[k]),
            (0, it.beta_c[k] / noise, gamma_c[k], beta_c[k]),
        ];
        for (j, b_n, gamma, beta) in bounds {
            let v_n = nz.h[k].dotc(it.sol.precoder(stream_of(j)));
            let lb = lower_bound_approx(b_n, v_n)?;
            n_cons += 1;
            if v_n.norm_sqr() == 0.0 {
                prog.add_eq(gamma.into(), 0.0.into());
                continue;
            }
            let (re, im) = v(k, j);
            let e = re * lb.coef_v.re + im * lb.coef_v.im + LinExpr::term(beta, lb.coef_u) - gamma;
            prog.add(Constraint::NonNeg(e));
        }

        // QoS through the private rate
        prog.add(Constraint::Exponential {
            x: u_p[k].into(),
            y: 1.0.into(),
            z: LinExpr::from(gamma_p[k]) + 1.0,
        });
        let mut qos = LinExpr::from(c[k]).with_term(u_p[k], rate) - p.rate_thresholds[k];
        if let Some(s) = shortfall {
            qos = qos + s;
        }
        prog.add(Constraint::NonNeg(qos));
        n_cons += 1;

        // interference-plus-noise levels
        let (re_o, im_o) = v(k, 2 - k);
        prog.add(Constraint::RotatedSecondOrder {
            u: LinExpr::from(beta_p[k]) - 1.0,
            w: 0.5.into(),
            tail: vec![re_o.clone(), im_o.clone()],
        });
        let (re_s, im_s) = v(k, 1 + k);
        prog.add(Constraint::RotatedSecondOrder {
            u: LinExpr::from(beta_c[k]) - 1.0,
            w: 0.5.into(),
            tail: vec![re_s, im_s, re_o, im_o],
        });
        n_cons += 2;

        prog.add(Constraint::Exponential {
            x: u_c[k].into(),
            y: 1.0.into(),
            z: LinExpr::from(gamma_c[k]) + 1.0,
        });
    }

    // common-rate split, one row per decoding user
    prog.add_le(c_sum.clone(), LinExpr::term(u_c[0], rate));
    prog.add_le(c_sum, LinExpr::term(u_c[1], rate) + r_d);
    n_cons += 2;
    let cap = relay_power_cap(delta, p);
    let xs = pwl_breakpoints(cap, it.sol.p_d);
    let f = |x: f64| (1.0 + nz.g12 * x).log2();
    if xs.len() == 1 {
        prog.add_le(r_d.into(), 0.0.into());
    }
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let slope = (f(x1) - f(x0)) / (x1 - x0);
        let line = LinExpr::term(p_d, slope) + (f(x0) - slope * x0);
        prog.add_le(r_d.into(), line * (1.0 - delta));
    }

    // budgets
    let tail = p_vars
        .iter()
        .flat_map(|(re, im)| re.iter().chain(im))
        .map(|&x| LinExpr::from(x))
        .collect();
    prog.add(Constraint::RotatedSecondOrder {
        u: tau.into(),
        w: 0.5.into(),
        tail,
    });
    prog.add_le(tau.into(), p.p_bs.into());
    prog.add_le(p_d.into(), cap.into());
    n_cons += 2;
    // C_k >= 0 lives in the variable domain
    n_cons += 2;

    let energy = LinExpr::term(tau, delta).with_term(p_d, 1.0 - delta);
    prog.add_ge(eta.into(), energy);
    match shortfall {
        None => prog.minimize(eta.into()),
        Some(s) => prog.minimize(s.into()),
    }

    Ok(ScaProgram {
        program: prog,
        logical_variables: n_vars,
        logical_constraints: n_cons,
        vars: ScaVars {
            p: p_vars,
            c,
            p_d,
        },
        p_d_upper: cap,
    })
}

fn stream_of(j: usize) -> rates::Stream {
    match j {
        0 => rates::Stream::Common,
        j => rates::Stream::Private(j - 1),
    }
}

/// The cone program solved at one SCA step.
pub fn build_socp(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    iterate: &ScaIterate,
    p: &Params,
    access: Access,
) -> Result<ScaProgram> {
    check_shapes(ch, &iterate.sol)?;
    let nz = normalize(ch, theta1, theta2, p)?;
    build(&nz, delta, iterate, p, access, Goal::Energy)
}

fn check_shapes(ch: &ChannelSet, sol: &PowerSolution) -> Result<()> {
    let nt = ch.n_antennas();
    if [&sol.p_c, &sol.p_1, &sol.p_2].iter().any(|v| v.len() != nt) {
        return Err(Error::Shape(format!("precoders must have {nt} entries")));
    }
    Ok(())
}

impl ScaProgram {
    /// Read a power solution out of a primal point.
    fn extract(&self, x: &[f64], delta: f64) -> PowerSolution {
        let read = |(re, im): &(Vec<Var>, Vec<Var>)| {
            CVec::from_iterator(re.len(), re.iter().zip(im).map(|(a, b)| C64::new(x[a.index()], x[b.index()])))
        };
        PowerSolution {
            p_c: read(&self.vars.p[0]),
            p_1: read(&self.vars.p[1]),
            p_2: read(&self.vars.p[2]),
            c_split: self.vars.c.map(|v| x[v.index()].max(0.0)),
            p_d: x[self.vars.p_d.index()].clamp(0.0, self.p_d_upper),
            delta,
        }
    }
}

/// Pull a solver point back onto the exact budgets and choose the
/// common-rate split closest to `sol.c_split` that the true rates allow.
/// Returns `false` when no valid split exists.
pub(crate) fn repair(
    sol: &mut PowerSolution,
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    p: &Params,
    access: Access,
) -> Result<bool> {
    let power = sol.bs_power();
    if power > p.p_bs {
        let s = C64::from((p.p_bs / power).sqrt());
        sol.p_c *= s;
        sol.p_1 *= s;
        sol.p_2 *= s;
    }
    sol.p_d = sol.p_d.clamp(0.0, relay_power_cap(sol.delta, p));
    if access == Access::Noma {
        sol.p_2.fill(C64::from(0.0));
    }
    let r = rates::evaluate(ch, theta1, theta2, sol, p)?;
    let lower = [
        (p.rate_thresholds[0] - r.r_p1).max(0.0),
        (p.rate_thresholds[1] - r.r_p2).max(0.0),
    ];
    let mut c = [sol.c_split[0].max(lower[0]), sol.c_split[1].max(lower[1])];
    if access == Access::Noma {
        c[0] = 0.0;
        if lower[0] > 0.0 {
            return Ok(false);
        }
    }
    let mut excess = c[0] + c[1] - r.r_c;
    for k in [1, 0] {
        if excess > 0.0 {
            if excess >= c[k] - lower[k] {
                // clamp exactly, subtraction would leave rounding residue
                excess -= c[k] - lower[k];
                c[k] = lower[k];
            } else {
                c[k] -= excess;
                excess = 0.0;
            }
        }
    }
    sol.c_split = c;
    Ok(excess <= SPLIT_SLACK * r.r_c.max(1.0))
}

/// Matched-filter precoders, equal power split at full budget, full relay
/// power.
fn matched_filter(ch: &ChannelSet, theta1: &PhaseVector, delta: f64, p: &Params, access: Access) -> Result<PowerSolution> {
    let nt = ch.n_antennas();
    let unit = |v: CVec| {
        let n = v.norm();
        if n > 0.0 {
            v / C64::from(n)
        } else {
            CVec::zeros(v.len())
        }
    };
    let h = [unit(rates::user_channel(ch, 0, theta1)?), unit(rates::user_channel(ch, 1, theta1)?)];
    let mut common = unit(&h[0] + &h[1]);
    if common.norm() == 0.0 {
        common = CVec::from_fn(nt, |i, _| C64::from(if i == 0 { 1.0 } else { 0.0 }));
    }
    let streams = if access == Access::Noma { 2.0 } else { 3.0 };
    let amp = C64::from((p.p_bs / streams).sqrt());
    Ok(PowerSolution {
        p_c: common * amp,
        p_1: &h[0] * amp,
        p_2: if access == Access::Noma {
            CVec::zeros(nt)
        } else {
            &h[1] * amp
        },
        c_split: [0.0; 2],
        p_d: relay_power_cap(delta, p),
        delta,
    })
}

/// Unit vector along the part of `h` orthogonal to `other`, with the gain
/// `|h^H w|^2` it achieves. Falls back to `h` itself when the two are
/// (numerically) parallel.
fn zero_forcing_direction(h: &CVec, other: &CVec) -> (CVec, f64) {
    let o2 = other.norm_squared();
    let w = if o2 > 0.0 {
        h - other * (other.dotc(h) / C64::from(o2))
    } else {
        h.clone()
    };
    let w = if w.norm_squared() > 1e-12 * h.norm_squared() { w } else { h.clone() };
    let n = w.norm();
    if n == 0.0 {
        return (w, 0.0);
    }
    let u = w / C64::from(n);
    let g = h.dotc(&u).norm_sqr();
    (u, g)
}

/// Zero-forcing private streams sized to meet the QoS targets on their own
/// (`carry_far_on_common` drops the far user's private stream), plus the
/// cheapest common stream along `h_1/|h_1| + h_2/|h_2|` that makes the split
/// valid. `None` when that does not fit in the budget.
fn zero_forcing_start(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    access: Access,
    carry_far_on_common: bool,
) -> Result<Option<PowerSolution>> {
    let nt = ch.n_antennas();
    let h = [rates::user_channel(ch, 0, theta1)?, rates::user_channel(ch, 1, theta1)?];
    let mut private = [CVec::zeros(nt), CVec::zeros(nt)];
    for k in 0..2 {
        if k == 1 && carry_far_on_common {
            continue;
        }
        let (w, g) = zero_forcing_direction(&h[k], &h[1 - k]);
        let need = p.noise[k] * ((p.rate_thresholds[k] / delta).exp2() - 1.0) * (1.0 + 1e-9);
        if need > 0.0 {
            if !(g > 0.0) {
                return Ok(None);
            }
            private[k] = w * C64::from((need / g).sqrt());
        }
    }
    let [p_1, p_2] = private;
    let used = p_1.norm_squared() + p_2.norm_squared();
    if used > p.p_bs {
        return Ok(None);
    }
    let unit = |v: &CVec| {
        let n = v.norm();
        if n > 0.0 {
            v / C64::from(n)
        } else {
            CVec::zeros(nt)
        }
    };
    let mut dir = unit(&(unit(&h[0]) + unit(&h[1])));
    if dir.norm() == 0.0 {
        dir = CVec::from_fn(nt, |i, _| C64::from(if i == 0 { 1.0 } else { 0.0 }));
    }
    let mut sol = PowerSolution {
        p_c: CVec::zeros(nt),
        p_1,
        p_2,
        c_split: [0.0; 2],
        p_d: relay_power_cap(delta, p),
        delta,
    };
    let room = p.p_bs - used;
    let with_common = |t: f64| -> Result<Option<PowerSolution>> {
        let mut s = sol.clone();
        s.p_c = &dir * C64::from(t.sqrt());
        Ok(repair(&mut s, ch, theta1, theta2, p, access)?.then_some(s))
    };
    if with_common(0.0)?.is_some() {
        // keep the common stream alive so its tangent is informative
        let t = room.min(used.max(1e-9 * p.p_bs));
        return with_common(t);
    }
    if with_common(room)?.is_none() {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, room);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if with_common(mid)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    sol = with_common(hi)?.expect("upper end is feasible");
    Ok(Some(sol))
}

/// One record per SCA step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaStep {
    pub iteration: usize,
    /// Energy of the accepted iterate (previous value when rejected).
    pub eta: f64,
    pub status: String,
    /// Largest cone-constraint violation at the solver point.
    pub max_violation: f64,
    /// Smallest rate margin of the accepted iterate under the exact model.
    pub min_rate_margin: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct ScaOutcome {
    pub iterate: ScaIterate,
    pub trace: Vec<ScaStep>,
    pub converged: bool,
    /// Whether the starting point needed the restoration phase.
    pub restored: bool,
}

fn solve_program(sp: &ScaProgram) -> Result<crsma_conic::SolveOutcome> {
    Ok(crsma_conic::solve_with(&sp.program, crsma_conic::Backend::Auto, SOLVER_ACCURACY)?)
}

/// How far the true rates are from admitting a valid split: the common rate
/// the QoS targets would need beyond what is available (`<= 0` when a split
/// exists).
fn deficit(
    sol: &PowerSolution,
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    p: &Params,
    access: Access,
) -> Result<f64> {
    let r = rates::evaluate(ch, theta1, theta2, sol, p)?;
    let need = [
        (p.rate_thresholds[0] - r.r_p1).max(0.0),
        (p.rate_thresholds[1] - r.r_p2).max(0.0),
    ];
    let extra = if access == Access::Noma { need[0] } else { 0.0 };
    Ok(need[0] + need[1] - r.r_c + extra)
}

/// Rate a user could reach alone with the whole budget, plus the relayed slot
/// for the far user. Targets above it are unreachable for these phases.
fn single_user_ceiling(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    k: usize,
) -> Result<f64> {
    let h = rates::user_channel(ch, k, theta1)?;
    let direct = delta * (1.0 + p.p_bs * h.norm_squared() / p.noise[k]).log2();
    let relayed = if k == 1 {
        rates::rate_common_slot2(ch, theta2, relay_power_cap(delta, p), delta, p.noise[1])?
    } else {
        0.0
    };
    Ok(direct + relayed)
}

/// Feasible starting points, cheapest first. Zero-forcing private streams
/// with the far user either served privately or through the common stream,
/// and a full-power matched filter; when none of these is valid, one point
/// from a restoration phase that minimizes the common QoS shortfall. The flag
/// reports whether restoration was needed.
pub fn starting_points(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    access: Access,
) -> Result<(Vec<PowerSolution>, bool)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1]")));
    }
    for k in 0..2 {
        let ceiling = single_user_ceiling(ch, theta1, theta2, delta, p, k)?;
        if p.rate_thresholds[k] > ceiling {
            return Err(Error::Infeasible(format!(
                "user {} target {} above its single-user ceiling {ceiling:.4} at delta = {delta}",
                k + 1,
                p.rate_thresholds[k]
            )));
        }
    }
    let mut found = Vec::new();
    found.extend(zero_forcing_start(ch, theta1, theta2, delta, p, access, true)?);
    if access == Access::Rsma {
        found.extend(zero_forcing_start(ch, theta1, theta2, delta, p, access, false)?);
    }
    let mut sol = matched_filter(ch, theta1, delta, p, access)?;
    if repair(&mut sol, ch, theta1, theta2, p, access)? {
        found.push(sol.clone());
    }
    if !found.is_empty() {
        found.sort_by(|a, b| total_energy(a).total_cmp(&total_energy(b)));
        return Ok((found, false));
    }
    Ok((vec![restore(ch, theta1, theta2, delta, p, access, sol)?], true))
}

/// Cheapest of [`starting_points`].
pub fn initial_feasible_point(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    access: Access,
) -> Result<(ScaIterate, bool)> {
    let (mut pts, restored) = starting_points(ch, theta1, theta2, delta, p, access)?;
    Ok((ScaIterate::exact(pts.swap_remove(0), ch, theta1, p)?, restored))
}

fn restore(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    access: Access,
    mut sol: PowerSolution,
) -> Result<PowerSolution> {
    let nz = normalize(ch, theta1, theta2, p)?;
    let cap = 0.05 * p.rate_thresholds.iter().cloned().fold(0.0, f64::max).max(1e-3);
    let mut best = deficit(&sol, ch, theta1, theta2, p, access)?;
    for n in 1..=p.max_iter_sca {
        sol.c_split = [0.0; 2];
        let it = ScaIterate::exact(sol.clone(), ch, theta1, p)?;
        let sp = build(&nz, delta, &it, p, access, Goal::Restore { cap })?;
        let out = solve_program(&sp)?;
        let Some(x) = out.x.as_deref().or(out.last_iterate.as_deref()) else {
            return match out.status {
                SolveStatus::Infeasible => Err(Error::Infeasible("restoration program infeasible".into())),
                _ if n == 1 => Err(Error::NumericalFailure {
                    stage: "restoration",
                    iteration: n,
                }),
                _ => break,
            };
        };
        let mut cand = sp.extract(x, delta);
        if repair(&mut cand, ch, theta1, theta2, p, access)? {
            return Ok(cand);
        }
        let d = deficit(&cand, ch, theta1, theta2, p, access)?;
        if !(d < best - 1e-7 * best.abs().max(1e-3)) {
            break;
        }
        best = d;
        sol = cand;
    }
    Err(Error::Infeasible(format!(
        "QoS targets {:?} unreachable at delta = {delta}",
        p.rate_thresholds
    )))
}

/// Minimize energy over precoders, split and relay power for fixed phases.
/// With `warm` given and feasible, iterations start there only; otherwise
/// from every one of [`starting_points`], keeping the cheapest result.
pub fn sca_solve(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    delta: f64,
    p: &Params,
    access: Access,
    warm: Option<&PowerSolution>,
) -> Result<ScaOutcome> {
    if let Some(w) = warm {
        check_shapes(ch, w)?;
        if w.delta == delta && check_feasibility(w, ch, theta1, theta2, p)?.is_feasible() {
            return iterate_from(ch, theta1, theta2, p, access, ScaIterate::exact(w.clone(), ch, theta1, p)?, false);
        }
    }
    let (starts, restored) = starting_points(ch, theta1, theta2, delta, p, access)?;
    let mut best: Option<ScaOutcome> = None;
    let mut first_err = None;
    for s in starts {
        let start = ScaIterate::exact(s, ch, theta1, p)?;
        match iterate_from(ch, theta1, theta2, p, access, start, restored) {
            Ok(o) => {
                if best.as_ref().is_none_or(|b| o.iterate.eta < b.iterate.eta) {
                    best = Some(o);
                }
            }
            Err(e) if e.is_numerical_failure() => {
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("starting_points returns at least one point"),
    }
}

fn iterate_from(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    p: &Params,
    access: Access,
    mut it: ScaIterate,
    restored: bool,
) -> Result<ScaOutcome> {
    let delta = it.sol.delta;
    let nz = normalize(ch, theta1, theta2, p)?;
    let margin = |s: &PowerSolution| -> Result<f64> {
        Ok(check_feasibility(s, ch, theta1, theta2, p)?.min_rate_margin())
    };
    let mut trace = vec![ScaStep {
        iteration: 0,
        eta: it.eta,
        status: "initial".into(),
        max_violation: 0.0,
        min_rate_margin: margin(&it.sol)?,
        accepted: true,
    }];
    let mut converged = false;
    for n in 1..=p.max_iter_sca {
        let sp = build(&nz, delta, &it, p, access, Goal::Energy)?;
        let out = solve_program(&sp)?;
        let Some(x) = out.x.as_deref().or(out.last_iterate.as_deref()) else {
            if n == 1 {
                return Err(Error::NumericalFailure {
                    stage: "sca",
                    iteration: n,
                });
            }
            trace.push(ScaStep {
                iteration: n,
                eta: it.eta,
                status: out.status.to_string(),
                max_violation: 0.0,
                min_rate_margin: margin(&it.sol)?,
                accepted: false,
            });
            break;
        };
        let mut sol = sp.extract(x, delta);
        let valid = repair(&mut sol, ch, theta1, theta2, p, access)?;
        let report = check_feasibility(&sol, ch, theta1, theta2, p)?;
        let eta = total_energy(&sol);
        let accepted = valid && report.is_feasible() && eta <= it.eta + 1e-9 * it.eta.max(1e-3);
        if !accepted && !out.is_optimal() && n == 1 {
            return Err(Error::NumericalFailure {
                stage: "sca",
                iteration: n,
            });
        }
        if !accepted {
            trace.push(ScaStep {
                iteration: n,
                eta: it.eta,
                status: format!("rejected ({})", out.status),
                max_violation: out.max_violation,
                min_rate_margin: report.min_rate_margin(),
                accepted: false,
            });
            converged = true;
            break;
        }
        let change = it.eta - eta;
        it = ScaIterate::exact(sol, ch, theta1, p)?;
        trace.push(ScaStep {
            iteration: n,
            eta: it.eta,
            status: out.status.to_string(),
            max_violation: out.max_violation,
            min_rate_margin: report.min_rate_margin(),
            accepted: true,
        });
        if change.abs() <= p.tol_sca {
            converged = out.is_optimal();
            break;
        }
    }
    Ok(ScaOutcome {
        iterate: it,
        trace,
        converged,
        restored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_is_tight_at_expansion_point() {
        let v = C64::new(0.3, -1.2);
        let b = lower_bound_approx(2.5, v).unwrap();
        assert!((b.eval(2.5, v) - v.norm_sqr() / 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_expansion_gives_zero_form() {
        let b = lower_bound_approx(1.0, C64::from(0.0)).unwrap();
        assert_eq!(b.coef_u, 0.0);
        assert_eq!(b.coef_v, C64::from(0.0));
    }

    #[test]
    fn non_positive_expansion_is_rejected() {
        assert!(lower_bound_approx(0.0, C64::from(1.0)).is_err());
    }

    #[test]
    fn bound_never_exceeds_quadratic_over_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let mut c = || C64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (v, vn) = (c(), c());
            let u = rng.random_range(0.01..5.0);
            let un = rng.random_range(0.01..5.0);
            let b = lower_bound_approx(un, vn).unwrap();
            assert!(b.eval(u, v) <= v.norm_sqr() / u + 1e-12);
        }
    }

    #[test]
    fn breakpoints_cover_interval_and_incumbent() {
        let xs = pwl_breakpoints(1.0, 0.3);
        assert_eq!(xs[0], 0.0);
        assert_eq!(*xs.last().unwrap(), 1.0);
        assert!(xs.contains(&0.3));
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(pwl_breakpoints(0.0, 0.0), vec![0.0]);
    }

    #[test]
    fn logical_counts() {
        let p = Params {
            n_ris: 4,
            ..Params::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = generate_channels(&p, &mut rng).unwrap();
        let th = PhaseVector::zeros(4);
        let (it, _) = initial_feasible_point(&ch, &th, &th, 0.5, &p, Access::Rsma).unwrap();
        let sp = build_socp(&ch, &th, &th, 0.5, &it, &p, Access::Rsma).unwrap();
        let (nt, k) = (p.n_antennas, 2);
        assert_eq!(sp.logical_variables, (5 + nt) * k + nt + 2);
        assert_eq!(sp.logical_constraints, 7 * k + 2);
    }

    #[test]
    fn exact_iterate_matches_definition() {
        let p = Params {
            n_ris: 3,
            ..Params::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = generate_channels(&p, &mut rng).unwrap();
        let th = PhaseVector::random(3, &mut rng);
        let sol = matched_filter(&ch, &th, 0.7, &p, Access::Rsma).unwrap();
        let it = ScaIterate::exact(sol.clone(), &ch, &th, &p).unwrap();
        let h2 = rates::user_channel(&ch, 1, &th).unwrap();
        assert_eq!(it.beta_p[1], gain(&h2, &sol.p_1) + p.noise[1]);
    }
}
