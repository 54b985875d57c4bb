//! System configuration in physical units and its linear-unit counterpart.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Path-loss exponents per link class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathLossExponents {
    /// BS - RIS
    pub br: f64,
    /// RIS - far user
    pub rf: f64,
    /// BS - far user
    pub bf: f64,
    /// near user - RIS
    pub nr: f64,
    /// near user - far user
    pub nf: f64,
    /// BS - near user
    pub bn: f64,
}

impl Default for PathLossExponents {
    fn default() -> Self {
        Self {
            br: 2.2,
            rf: 2.2,
            bf: 4.0,
            nr: 3.0,
            nf: 3.0,
            bn: 3.5,
        }
    }
}

/// Experiment configuration as written in a config file: dB, dBm, meters,
/// bits/s/Hz.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_ris_elements: usize,
    pub pos_bs: [f64; 3],
    pub pos_ris: [f64; 3],
    pub pos_near: [f64; 3],
    pub pos_far: [f64; 3],
    pub pl_exponents: PathLossExponents,
    pub rho0_db: f64,
    /// Linear K-factor; `inf` gives pure line of sight.
    pub rician_factor: f64,
    pub noise_power_db: f64,
    pub p_bs_dbm: f64,
    pub p_d2d_dbm: f64,
    pub rate_thresholds: [f64; 2],
    pub delta_grid: Vec<f64>,
    pub tol_sca: f64,
    pub tol_ao: f64,
    pub zeta_dc: f64,
    pub max_iter_sca: usize,
    pub max_iter_ao: usize,
    pub max_iter_dc: usize,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_antennas: 4,
            n_ris_elements: 40,
            pos_bs: [0.0, 10.0, 0.0],
            pos_ris: [80.0, 10.0, 0.0],
            pos_near: [40.0, 0.0, 0.0],
            pos_far: [80.0, 0.0, 0.0],
            pl_exponents: PathLossExponents::default(),
            rho0_db: -30.0,
            rician_factor: 3.0,
            noise_power_db: -120.0,
            p_bs_dbm: 53.0,
            p_d2d_dbm: 30.0,
            rate_thresholds: [1.0, 3.0],
            delta_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            tol_sca: 1e-4,
            tol_ao: 1e-3,
            zeta_dc: 1e-5,
            max_iter_sca: 50,
            max_iter_ao: 20,
            max_iter_dc: 30,
            rng_seed: 1,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

impl SystemConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_antennas == 0 {
            return bad("n_antennas must be positive".into());
        }
        if self.delta_grid.is_empty() {
            return bad("delta_grid is empty".into());
        }
        for &d in &self.delta_grid {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("delta {d} outside (0, 1]"));
            }
        }
        if self.delta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("delta_grid must be strictly increasing".into());
        }
        let positive = [
            ("p_bs", dbm_to_watts(self.p_bs_dbm)),
            ("p_d2d", dbm_to_watts(self.p_d2d_dbm)),
            ("noise_power", db_to_linear(self.noise_power_db)),
            ("tol_sca", self.tol_sca),
            ("tol_ao", self.tol_ao),
            ("zeta_dc", self.zeta_dc),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be strictly positive and finite"));
            }
        }
        if self.max_iter_sca == 0 || self.max_iter_ao == 0 || self.max_iter_dc == 0 {
            return bad("iteration limits must be positive".into());
        }
        if self.rician_factor.is_nan() || self.rician_factor < 0.0 {
            return bad("rician_factor must be non-negative".into());
        }
        if self.rate_thresholds.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rate thresholds must be finite and non-negative".into());
        }
        let pos = [self.pos_bs, self.pos_ris, self.pos_near, self.pos_far];
        if pos.iter().flatten().any(|x| !x.is_finite()) {
            return bad("node positions must be finite".into());
        }
        Ok(())
    }

    /// Convert to linear units.
    pub fn params(&self) -> Params {
        let noise = db_to_linear(self.noise_power_db);
        Params {
            n_antennas: self.n_antennas,
            n_ris: self.n_ris_elements,
            pos_bs: self.pos_bs,
            pos_ris: self.pos_ris,
            pos_near: self.pos_near,
            pos_far: self.pos_far,
            pl: self.pl_exponents.clone(),
            rho0: db_to_linear(self.rho0_db),
            rician_factor: self.rician_factor,
            noise: [noise, noise],
            p_bs: dbm_to_watts(self.p_bs_dbm),
            p_d2d: dbm_to_watts(self.p_d2d_dbm),
            rate_thresholds: self.rate_thresholds,
            delta_grid: self.delta_grid.clone(),
            tol_sca: self.tol_sca,
            tol_ao: self.tol_ao,
            zeta_dc: self.zeta_dc,
            max_iter_sca: self.max_iter_sca,
            max_iter_ao: self.max_iter_ao,
            max_iter_dc: self.max_iter_dc,
            rng_seed: self.rng_seed,
        }
    }
}

/// Linear-unit parameters used by every numerical routine.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub n_antennas: usize,
    pub n_ris: usize,
    pub pos_bs: [f64; 3],
    pub pos_ris: [f64; 3],
    pub pos_near: [f64; 3],
    pub pos_far: [f64; 3],
    pub pl: PathLossExponents,
    /// Gain at the 1 m reference distance.
    pub rho0: f64,
    pub rician_factor: f64,
    /// Noise power per user, watts.
    pub noise: [f64; 2],
    /// Watts.
    pub p_bs: f64,
    /// Watts; zero disables relaying.
    pub p_d2d: f64,
    pub rate_thresholds: [f64; 2],
    pub delta_grid: Vec<f64>,
    pub tol_sca: f64,
    pub tol_ao: f64,
    pub zeta_dc: f64,
    pub max_iter_sca: usize,
    pub max_iter_ao: usize,
    pub max_iter_dc: usize,
    pub rng_seed: u64,
}

impl Default for Params {
    fn default() -> Self {
        SystemConfig::default().params()
    }
}
