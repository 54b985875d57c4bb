//! SINRs, achievable rates, energy and constraint margins of a candidate
//! solution. Every optimizer result is audited against these functions.

use rand::Rng;

use crate::channel::{CMat, CVec, ChannelSet};
use crate::config::Params;
use crate::error::{Error, Result};
use crate::C64;

/// Rate margins at or above this are satisfied.
pub const RATE_TOL: f64 = 1e-6;
/// Power margins at or above this are satisfied.
pub const POWER_TOL: f64 = 1e-9;

/// RIS phase shifts in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseVector {
    pub theta: Vec<f64>,
}

impl PhaseVector {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn zeros(m: usize) -> Self {
        Self { theta: vec![0.0; m] }
    }

    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        Self {
            theta: (0..m).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `e^{j theta_m}`
    pub fn phases(&self) -> CVec {
        CVec::from_iterator(self.theta.len(), self.theta.iter().map(|&t| C64::from_polar(1.0, t)))
    }
}

/// Which stream a precoder carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Common,
    Private(usize),
}

/// Precoders, common-rate split and relay power for one time split `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSolution {
    pub p_c: CVec,
    pub p_1: CVec,
    pub p_2: CVec,
    pub c_split: [f64; 2],
    pub p_d: f64,
    pub delta: f64,
}

impl PowerSolution {
    pub fn zeros(n_antennas: usize, delta: f64) -> Self {
        Self {
            p_c: CVec::zeros(n_antennas),
            p_1: CVec::zeros(n_antennas),
            p_2: CVec::zeros(n_antennas),
            c_split: [0.0; 2],
            p_d: 0.0,
            delta,
        }
    }

    pub fn precoder(&self, s: Stream) -> &CVec {
        match s {
            Stream::Common => &self.p_c,
            Stream::Private(0) => &self.p_1,
            Stream::Private(_) => &self.p_2,
        }
    }

    /// Private precoder of user `k` (0 = near).
    pub fn private(&self, k: usize) -> &CVec {
        self.precoder(Stream::Private(k))
    }

    /// `||p_1||^2 + ||p_2||^2 + ||p_c||^2`
    pub fn bs_power(&self) -> f64 {
        self.p_c.norm_squared() + self.p_1.norm_squared() + self.p_2.norm_squared()
    }
}

/// `h_b + H_br (conj(phi) .* h_r)`, the column form of
/// `h_b^H + h_r^H Theta H_br^H`.
pub fn effective_channel(h_direct: &CVec, h_ris: &CVec, theta: &PhaseVector, h_br: &CMat) -> Result<CVec> {
    let m = h_ris.len();
    if theta.len() != m || h_br.ncols() != m || h_br.nrows() != h_direct.len() {
        return Err(Error::Shape(format!(
            "direct {} / ris {} / phases {} / H_br {:?}",
            h_direct.len(),
            m,
            theta.len(),
            h_br.shape()
        )));
    }
    if m == 0 {
        return Ok(h_direct.clone());
    }
    let w = theta.phases().map(|z| z.conj()).component_mul(h_ris);
    Ok(h_direct + h_br * w)
}

/// Effective slot-1 channel of user `k`.
pub fn user_channel(ch: &ChannelSet, k: usize, theta1: &PhaseVector) -> Result<CVec> {
    effective_channel(ch.direct(k), ch.ris(k), theta1, &ch.h_br)
}

/// `|h^H p|^2`
pub fn gain(h: &CVec, p: &CVec) -> f64 {
    h.dotc(p).norm_sqr()
}

fn sinr_common_eff(h: &CVec, sol: &PowerSolution, noise: f64) -> f64 {
    gain(h, &sol.p_c) / (gain(h, &sol.p_1) + gain(h, &sol.p_2) + noise)
}

fn sinr_private_eff(h: &CVec, k: usize, sol: &PowerSolution, noise: f64) -> f64 {
    gain(h, sol.private(k)) / (gain(h, sol.private(1 - k)) + noise)
}

/// SINR for decoding the common stream at user `k` (0 = near) in slot 1.
pub fn sinr_common_slot1(k: usize, ch: &ChannelSet, theta1: &PhaseVector, sol: &PowerSolution, noise: f64) -> Result<f64> {
    Ok(sinr_common_eff(&user_channel(ch, k, theta1)?, sol, noise))
}

/// SINR for user `k`'s private stream after the common stream is removed.
pub fn sinr_private_slot1(k: usize, ch: &ChannelSet, theta1: &PhaseVector, sol: &PowerSolution, noise: f64) -> Result<f64> {
    Ok(sinr_private_eff(&user_channel(ch, k, theta1)?, k, sol, noise))
}

/// `h_12 + hhat_r2^H Theta2 h_1r`
pub fn d2d_channel(ch: &ChannelSet, theta2: &PhaseVector) -> Result<C64> {
    let m = ch.h_1r.len();
    if theta2.len() != m || ch.hhat_r2.len() != m {
        return Err(Error::Shape(format!("slot-2 phases {} vs {m} elements", theta2.len())));
    }
    let phi = theta2.phases();
    Ok(ch.h_12
        + (0..m)
            .map(|i| ch.hhat_r2[i].conj() * phi[i] * ch.h_1r[i])
            .sum::<C64>())
}

/// Slot-2 relayed common rate `(1 - delta) log2(1 + |h_12eff|^2 p_d / noise)`.
pub fn rate_common_slot2(ch: &ChannelSet, theta2: &PhaseVector, p_d: f64, delta: f64, noise: f64) -> Result<f64> {
    let g = d2d_channel(ch, theta2)?.norm_sqr();
    Ok((1.0 - delta) * (1.0 + g * p_d / noise).log2())
}

/// All rates of one solution.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub r_c1_slot1: f64,
    pub r_c2_slot1: f64,
    pub r_c2_slot2: f64,
    pub r_c2_ndf: f64,
    pub r_c: f64,
    pub r_p1: f64,
    pub r_p2: f64,
    /// `C_k + R_p,k`
    pub user_totals: [f64; 2],
    pub energy: f64,
}

pub fn evaluate(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    sol: &PowerSolution,
    p: &Params,
) -> Result<RateReport> {
    let d = sol.delta;
    let h = [user_channel(ch, 0, theta1)?, user_channel(ch, 1, theta1)?];
    let rate = |s: f64| d * (1.0 + s).log2();
    let r_c1_slot1 = rate(sinr_common_eff(&h[0], sol, p.noise[0]));
    let r_c2_slot1 = rate(sinr_common_eff(&h[1], sol, p.noise[1]));
    let r_c2_slot2 = rate_common_slot2(ch, theta2, sol.p_d, d, p.noise[1])?;
    let r_c2_ndf = r_c2_slot1 + r_c2_slot2;
    let r_p1 = rate(sinr_private_eff(&h[0], 0, sol, p.noise[0]));
    let r_p2 = rate(sinr_private_eff(&h[1], 1, sol, p.noise[1]));
    Ok(RateReport {
        r_c1_slot1,
        r_c2_slot1,
        r_c2_slot2,
        r_c2_ndf,
        r_c: r_c1_slot1.min(r_c2_ndf),
        r_p1,
        r_p2,
        user_totals: [sol.c_split[0] + r_p1, sol.c_split[1] + r_p2],
        energy: total_energy(sol),
    })
}

/// `min(R_c1^[1], R_c2^[1] + R_c2^[2])`
pub fn common_rate(
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    sol: &PowerSolution,
    p: &Params,
) -> Result<f64> {
    Ok(evaluate(ch, theta1, theta2, sol, p)?.r_c)
}

/// `delta (||p_1||^2 + ||p_2||^2 + ||p_c||^2) + (1 - delta) p_d`
pub fn total_energy(sol: &PowerSolution) -> f64 {
    sol.delta * sol.bs_power() + (1.0 - sol.delta) * sol.p_d
}

/// Signed margins of every constraint; non-negative means satisfied.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub bs_budget: f64,
    pub relay_budget: f64,
    pub relay_nonneg: f64,
    pub split_nonneg: [f64; 2],
    pub qos: [f64; 2],
    pub common_split: f64,
    pub unit_modulus: f64,
}

impl FeasibilityReport {
    pub fn min_power_margin(&self) -> f64 {
        [self.bs_budget, self.relay_budget, self.relay_nonneg, self.unit_modulus]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_rate_margin(&self) -> f64 {
        [self.split_nonneg[0], self.split_nonneg[1], self.qos[0], self.qos[1], self.common_split]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self) -> bool {
        self.min_rate_margin() >= -RATE_TOL && self.min_power_margin() >= -POWER_TOL
    }
}

pub fn check_feasibility(
    sol: &PowerSolution,
    ch: &ChannelSet,
    theta1: &PhaseVector,
    theta2: &PhaseVector,
    p: &Params,
) -> Result<FeasibilityReport> {
    let r = evaluate(ch, theta1, theta2, sol, p)?;
    let modulus = theta1
        .phases()
        .iter()
        .chain(theta2.phases().iter())
        .map(|z| (z.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(FeasibilityReport {
        bs_budget: p.p_bs - sol.bs_power(),
        relay_budget: p.p_d2d - sol.p_d,
        relay_nonneg: sol.p_d,
        split_nonneg: sol.c_split,
        qos: [
            r.user_totals[0] - p.rate_thresholds[0],
            r.user_totals[1] - p.rate_thresholds[1],
        ],
        common_split: r.r_c - sol.c_split[0] - sol.c_split[1],
        unit_modulus: -modulus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn no_ris_leaves_direct_channel() {
        let h = CVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.1)]);
        let out = effective_channel(&h, &CVec::zeros(0), &PhaseVector::zeros(0), &CMat::zeros(2, 0)).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn single_element_single_antenna() {
        // h^H = 0 + conj(h_r) e^{j0} conj(g): column form is g * h_r
        let g = CMat::from_element(1, 1, c(0.6, 0.8));
        let hr = CVec::from_element(1, c(0.0, 1.0));
        let out = effective_channel(&CVec::zeros(1), &hr, &PhaseVector::zeros(1), &g).unwrap();
        assert!((out[0] - c(0.6, 0.8) * c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let r = effective_channel(&CVec::zeros(2), &CVec::zeros(3), &PhaseVector::zeros(2), &CMat::zeros(2, 3));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn energy_examples() {
        let mut s = PowerSolution::zeros(1, 0.5);
        assert_eq!(total_energy(&s), 0.0);
        s.p_c[0] = c(1.0, 0.0);
        s.p_1[0] = c(0.0, 1.0);
        s.p_d = 1.0;
        assert!((total_energy(&s) - 1.5).abs() < 1e-15);
        s.delta = 1.0;
        assert!((total_energy(&s) - 2.0).abs() < 1e-15);
    }

    fn scalar_channels(h: C64) -> ChannelSet {
        ChannelSet {
            h_b1: CVec::from_element(1, h),
            h_b2: CVec::from_element(1, h),
            h_br: CMat::zeros(1, 0),
            h_r1: CVec::zeros(0),
            h_r2: CVec::zeros(0),
            hhat_r2: CVec::zeros(0),
            h_1r: CVec::zeros(0),
            h_12: C64::from(0.0),
        }
    }

    #[test]
    fn common_sinr_is_one_by_construction() {
        let ch = scalar_channels(c(0.0, 2.0));
        let mut s = PowerSolution::zeros(1, 1.0);
        s.p_c[0] = c(0.5, 0.0);
        // |h|^2 |p_c|^2 = 1 = noise
        let v = sinr_common_slot1(0, &ch, &PhaseVector::zeros(0), &s, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        s.p_c[0] = C64::from(0.0);
        assert_eq!(sinr_common_slot1(0, &ch, &PhaseVector::zeros(0), &s, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn aligned_private_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Params { n_ris: 3, ..Params::default() };
        let ch = generate_channels(&p, &mut rng).unwrap();
        let th = PhaseVector::random(3, &mut rng);
        let h = user_channel(&ch, 0, &th).unwrap();
        let mut s = PowerSolution::zeros(4, 1.0);
        s.p_1 = &h * C64::from(0.3);
        let expect = h.norm_squared() * s.p_1.norm_squared() / 1e-12;
        let got = sinr_private_slot1(0, &ch, &th, &s, 1e-12).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect);
        s.p_1 = CVec::zeros(4);
        assert_eq!(sinr_private_slot1(0, &ch, &th, &s, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn slot2_rate_vanishes_without_power_or_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Params { n_ris: 4, ..Params::default() };
        let ch = generate_channels(&p, &mut rng).unwrap();
        let th = PhaseVector::random(4, &mut rng);
        assert_eq!(rate_common_slot2(&ch, &th, 0.0, 0.3, 1e-12).unwrap(), 0.0);
        assert_eq!(rate_common_slot2(&ch, &th, 1.0, 1.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn slot2_single_element_hand_value() {
        let mut ch = scalar_channels(C64::from(0.0));
        ch.h_12 = c(1.0, 1.0);
        ch.hhat_r2 = CVec::from_element(1, c(0.0, 1.0));
        ch.h_1r = CVec::from_element(1, c(2.0, 0.0));
        ch.h_br = CMat::zeros(1, 1);
        ch.h_r1 = CVec::zeros(1);
        ch.h_r2 = CVec::zeros(1);
        // conj(j) e^{j pi/2} 2 = 2, so combined = 3 + j, |.|^2 = 10
        let th = PhaseVector::new(vec![std::f64::consts::FRAC_PI_2]);
        let r = rate_common_slot2(&ch, &th, 0.5, 0.25, 2.0).unwrap();
        assert!((r - 0.75 * 3.5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn relay_budget_margin_is_the_excess() {
        let p = Params::default();
        let ch = generate_channels(&Params { n_ris: 0, ..p.clone() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut s = PowerSolution::zeros(4, 0.5);
        s.p_d = p.p_d2d + 1e-3;
        let r = check_feasibility(&s, &ch, &PhaseVector::zeros(0), &PhaseVector::zeros(0), &p).unwrap();
        assert!((r.relay_budget + 1e-3).abs() < 1e-15);
        assert!(r.qos[0] < 0.0 && r.qos[1] < 0.0);
        assert!(!r.is_feasible());
    }
}
