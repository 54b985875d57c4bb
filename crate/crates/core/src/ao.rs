//! Alternation between the power block and the slot-1 phase block, and the
//! exhaustive search over the time split.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::config::Params;
use crate::error::{Error, Result};
use crate::phase::{phase_step, slot2_phases};
use crate::rates::{check_feasibility, PhaseVector, PowerSolution};
use crate::sca::{sca_solve, Access};

/// One alternation round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AoStep {
    pub iteration: usize,
    pub eta: f64,
    pub sca_iterations: usize,
    pub sca_converged: bool,
    pub phase_accepted: bool,
    /// Final rank-one residual of the phase step, when it ran.
    pub dc_residual: Option<f64>,
    pub dc_converged: Option<bool>,
}

/// Outcome of [`ao_solve`] at one time split.
#[derive(Clone, Debug)]
pub struct AoRun {
    pub delta: f64,
    pub energy: f64,
    pub solution: PowerSolution,
    pub theta1: PhaseVector,
    pub theta2: PhaseVector,
    pub trace: Vec<AoStep>,
    pub converged: bool,
    /// Whether any power block needed a restoration phase.
    pub restored: bool,
}

/// Entry of the per-split energy table; `None` marks an infeasible split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub delta: f64,
    pub energy: Option<f64>,
    pub ao_iterations: usize,
}

/// Outcome of [`delta_search`]; `best` is `None` when every split is
/// infeasible.
#[derive(Clone, Debug)]
pub struct AoResult {
    pub best: Option<AoRun>,
    pub table: Vec<DeltaEntry>,
}

impl AoResult {
    pub fn energy(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.energy)
    }

    pub fn best_delta(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.delta)
    }

    pub fn is_feasible(&self) -> bool {
        self.best.is_some()
    }
}

/// Alternate power and phase updates at split `delta` until the energy moves
/// by at most `tol_ao` or `max_iter_ao` rounds pass. Slot-2 phases are set
/// once in closed form. Without RIS elements this is a single power solve.
pub fn ao_solve(
    ch: &ChannelSet,
    delta: f64,
    p: &Params,
    access: Access,
    initial_theta1: &PhaseVector,
) -> Result<AoRun> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1]")));
    }
    if initial_theta1.len() != ch.n_ris() {
        return Err(Error::Shape(format!(
            "{} initial phases for {} elements",
            initial_theta1.len(),
            ch.n_ris()
        )));
    }
    let theta2 = slot2_phases(ch);
    let mut theta1 = initial_theta1.clone();
    let first = sca_solve(ch, &theta1, &theta2, delta, p, access, None)?;
    let mut restored = first.restored;
    let mut sol = first.iterate.sol;
    let mut eta = first.iterate.eta;
    let mut trace = vec![AoStep {
        iteration: 0,
        eta,
        sca_iterations: first.trace.len() - 1,
        sca_converged: first.converged,
        phase_accepted: false,
        dc_residual: None,
        dc_converged: None,
    }];
    let mut converged = ch.n_ris() == 0;
    if !converged {
        for i in 1..=p.max_iter_ao {
            let step = phase_step(ch, &theta1, &theta2, &sol, p)?;
            let dc_residual = step.dc.as_ref().map(|d| *d.residuals.last().expect("initial residual"));
            let dc_converged = step.dc.as_ref().map(|d| d.converged);
            if !step.accepted {
                trace.push(AoStep {
                    iteration: i,
                    eta,
                    sca_iterations: 0,
                    sca_converged: true,
                    phase_accepted: false,
                    dc_residual,
                    dc_converged,
                });
                converged = true;
                break;
            }
            theta1 = step.theta1;
            let out = sca_solve(ch, &theta1, &theta2, delta, p, access, Some(&sol))?;
            restored |= out.restored;
            let change = eta - out.iterate.eta;
            sol = out.iterate.sol;
            eta = out.iterate.eta;
            trace.push(AoStep {
                iteration: i,
                eta,
                sca_iterations: out.trace.len() - 1,
                sca_converged: out.converged,
                phase_accepted: true,
                dc_residual,
                dc_converged,
            });
            if change.abs() <= p.tol_ao {
                converged = true;
                break;
            }
        }
    }
    debug_assert!(check_feasibility(&sol, ch, &theta1, &theta2, p)?.is_feasible());
    Ok(AoRun {
        delta,
        energy: eta,
        solution: sol,
        theta1,
        theta2,
        trace,
        converged,
        restored,
    })
}

/// Run [`ao_solve`] at every split of `grid` and keep the cheapest. Splits
/// with unreachable QoS are recorded as infeasible. A numerical failure at a
/// split is also recorded as infeasible unless every split failed that way,
/// in which case it is returned.
pub fn delta_search(
    ch: &ChannelSet,
    grid: &[f64],
    p: &Params,
    access: Access,
    initial_theta1: &PhaseVector,
) -> Result<AoResult> {
    let mut best: Option<AoRun> = None;
    let mut table = Vec::with_capacity(grid.len());
    let mut failure = None;
    let mut all_failed = true;
    for &delta in grid {
        match ao_solve(ch, delta, p, access, initial_theta1) {
            Ok(run) => {
                all_failed = false;
                table.push(DeltaEntry {
                    delta,
                    energy: Some(run.energy),
                    ao_iterations: run.trace.len() - 1,
                });
                if best.as_ref().is_none_or(|b| run.energy < b.energy) {
                    best = Some(run);
                }
            }
            Err(e) if e.is_infeasible() => {
                all_failed = false;
                table.push(DeltaEntry {
                    delta,
                    energy: None,
                    ao_iterations: 0,
                });
            }
            Err(e) if e.is_numerical_failure() => {
                log::warn!("split {delta}: {e}");
                failure.get_or_insert(e);
                table.push(DeltaEntry {
                    delta,
                    energy: None,
                    ao_iterations: 0,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if all_failed {
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(AoResult { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draw(m: usize, seed: u64) -> (Params, ChannelSet, PhaseVector) {
        let p = Params {
            n_ris: m,
            ..Params::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = generate_channels(&p, &mut rng).unwrap();
        let th = PhaseVector::random(m, &mut rng);
        (p, ch, th)
    }

    #[test]
    fn energy_never_increases_across_rounds() {
        let (p, ch, th) = draw(8, 4);
        let run = ao_solve(&ch, 0.6, &p, Access::Rsma, &th).unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1].eta <= w[0].eta + 1e-9, "{:?}", run.trace);
        }
        let rep = check_feasibility(&run.solution, &ch, &run.theta1, &run.theta2, &p).unwrap();
        assert!(rep.is_feasible());
    }

    #[test]
    fn no_elements_is_one_power_solve() {
        let (p, ch, th) = draw(0, 6);
        let run = ao_solve(&ch, 0.8, &p, Access::Rsma, &th).unwrap();
        assert_eq!(run.trace.len(), 1);
        assert!(run.converged);
    }

    #[test]
    fn search_reports_the_table_minimum() {
        let (p, ch, th) = draw(4, 1);
        let grid = [0.5, 0.8, 1.0];
        let res = delta_search(&ch, &grid, &p, Access::Rsma, &th).unwrap();
        let min = res
            .table
            .iter()
            .filter_map(|e| e.energy)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(res.energy(), Some(min));
        assert_eq!(res.table.len(), 3);
    }

    #[test]
    fn unreachable_targets_are_infeasible_everywhere() {
        let (mut p, ch, th) = draw(2, 2);
        p.rate_thresholds = [40.0, 40.0];
        let res = delta_search(&ch, &[0.5, 1.0], &p, Access::Rsma, &th).unwrap();
        assert!(!res.is_feasible());
        assert!(res.table.iter().all(|e| e.energy.is_none()));
    }

    #[test]
    fn wrong_phase_length_is_rejected() {
        let (p, ch, _) = draw(3, 2);
        assert!(ao_solve(&ch, 0.5, &p, Access::Rsma, &PhaseVector::zeros(2)).is_err());
    }
}
