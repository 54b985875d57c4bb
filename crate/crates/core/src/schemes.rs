//! The proposal and its benchmark schemes, expressed as restrictions of the
//! same power and phase machinery.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ao::{delta_search, AoResult};
use crate::channel::ChannelSet;
use crate::config::Params;
use crate::error::{Error, Result};
use crate::rates::{check_feasibility, FeasibilityReport, PhaseVector};
use crate::sca::Access;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "CRSMA_RIS")]
    CrsmaRis,
    #[serde(rename = "RSMA_RIS")]
    RsmaRis,
    #[serde(rename = "NOMA_RIS")]
    NomaRis,
    #[serde(rename = "CNOMA_RIS")]
    CnomaRis,
    #[serde(rename = "CRSMA_NORIS")]
    CrsmaNoris,
    #[serde(rename = "CNOMA_NORIS")]
    CnomaNoris,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::CrsmaRis,
        SchemeId::RsmaRis,
        SchemeId::NomaRis,
        SchemeId::CnomaRis,
        SchemeId::CrsmaNoris,
        SchemeId::CnomaNoris,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::CrsmaRis => "CRSMA_RIS",
            SchemeId::RsmaRis => "RSMA_RIS",
            SchemeId::NomaRis => "NOMA_RIS",
            SchemeId::CnomaRis => "CNOMA_RIS",
            SchemeId::CrsmaNoris => "CRSMA_NORIS",
            SchemeId::CnomaNoris => "CNOMA_NORIS",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SchemeId::CrsmaRis => "rate splitting, near-user relaying, RIS in both slots",
            SchemeId::RsmaRis => "rate splitting, no relaying, RIS",
            SchemeId::NomaRis => "NOMA with SIC at the near user, no relaying, RIS",
            SchemeId::CnomaRis => "NOMA with near-user relaying, RIS in both slots",
            SchemeId::CrsmaNoris => "rate splitting with relaying, no RIS",
            SchemeId::CnomaNoris => "NOMA with relaying, no RIS",
        }
    }

    pub fn access(self) -> Access {
        match self {
            SchemeId::CrsmaRis | SchemeId::RsmaRis | SchemeId::CrsmaNoris => Access::Rsma,
            SchemeId::NomaRis | SchemeId::CnomaRis | SchemeId::CnomaNoris => Access::Noma,
        }
    }

    pub fn cooperative(self) -> bool {
        !matches!(self, SchemeId::RsmaRis | SchemeId::NomaRis)
    }

    pub fn uses_ris(self) -> bool {
        !matches!(self, SchemeId::CrsmaNoris | SchemeId::CnomaNoris)
    }

    /// Parameters as seen by this scheme: no relay power and the single split
    /// `delta = 1` without cooperation.
    pub fn restrict(self, p: &Params) -> Params {
        let mut q = p.clone();
        if !self.cooperative() {
            q.p_d2d = 0.0;
            q.delta_grid = vec![1.0];
        }
        q
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

/// Scheme-specific checks on a returned solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeAudit {
    pub feasibility: FeasibilityReport,
    /// Relay silent when the scheme does not cooperate.
    pub relay_off_ok: bool,
    /// Far-user private stream and near-user common share empty under NOMA.
    pub superposition_ok: bool,
    /// No reflection phases without RIS.
    pub no_ris_ok: bool,
}

impl SchemeAudit {
    pub fn passed(&self) -> bool {
        self.feasibility.is_feasible() && self.relay_off_ok && self.superposition_ok && self.no_ris_ok
    }
}

#[derive(Clone, Debug)]
pub struct SchemeResult {
    pub scheme: SchemeId,
    pub result: AoResult,
    /// Present when a solution was found.
    pub audit: Option<SchemeAudit>,
}

impl SchemeResult {
    pub fn energy(&self) -> Option<f64> {
        self.result.energy()
    }
}

/// Solve one scheme on one channel draw. `initial_theta1` holds the slot-1
/// starting phases for the full surface; schemes without RIS ignore it.
pub fn solve_scheme(scheme: SchemeId, ch: &ChannelSet, p: &Params, initial_theta1: &PhaseVector) -> Result<SchemeResult> {
    let q = scheme.restrict(p);
    let (channels, theta0) = if scheme.uses_ris() {
        (ch.clone(), initial_theta1.clone())
    } else {
        (ch.without_ris(), PhaseVector::zeros(0))
    };
    let result = delta_search(&channels, &q.delta_grid, &q, scheme.access(), &theta0)?;
    let audit = match &result.best {
        None => None,
        Some(run) => {
            let sol = &run.solution;
            let feasibility = check_feasibility(sol, &channels, &run.theta1, &run.theta2, &q)?;
            Some(SchemeAudit {
                feasibility,
                relay_off_ok: scheme.cooperative() || (sol.p_d == 0.0 && run.delta == 1.0),
                superposition_ok: scheme.access() == Access::Rsma
                    || (sol.p_2.iter().all(|z| z.norm() == 0.0) && sol.c_split[0] == 0.0),
                no_ris_ok: scheme.uses_ris() || (run.theta1.is_empty() && run.theta2.is_empty()),
            })
        }
    };
    Ok(SchemeResult { scheme, result, audit })
}

pub fn solve_crsma_ris(ch: &ChannelSet, p: &Params, theta0: &PhaseVector) -> Result<SchemeResult> {
    solve_scheme(SchemeId::CrsmaRis, ch, p, theta0)
}

pub fn solve_rsma_ris(ch: &ChannelSet, p: &Params, theta0: &PhaseVector) -> Result<SchemeResult> {
    solve_scheme(SchemeId::RsmaRis, ch, p, theta0)
}

pub fn solve_noma_ris(ch: &ChannelSet, p: &Params, theta0: &PhaseVector) -> Result<SchemeResult> {
    solve_scheme(SchemeId::NomaRis, ch, p, theta0)
}

pub fn solve_cnoma_ris(ch: &ChannelSet, p: &Params, theta0: &PhaseVector) -> Result<SchemeResult> {
    solve_scheme(SchemeId::CnomaRis, ch, p, theta0)
}

pub fn solve_crsma_noris(ch: &ChannelSet, p: &Params) -> Result<SchemeResult> {
    solve_scheme(SchemeId::CrsmaNoris, ch, p, &PhaseVector::zeros(0))
}

pub fn solve_cnoma_noris(ch: &ChannelSet, p: &Params) -> Result<SchemeResult> {
    solve_scheme(SchemeId::CnomaNoris, ch, p, &PhaseVector::zeros(0))
}
