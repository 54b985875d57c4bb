//! Path loss, Rician/Rayleigh small-scale fading and channel realizations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::config::{db_to_linear, Params};
use crate::error::{Error, Result};
use crate::C64;

pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

/// `rho0 * d^-exponent` with `rho0` in dB at the 1 m reference distance.
pub fn path_loss(distance_m: f64, exponent: f64, rho0_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    Ok(db_to_linear(rho0_db) * distance_m.powf(-exponent))
}

fn path_loss_linear(distance_m: f64, exponent: f64, rho0: f64) -> f64 {
    rho0 * distance_m.powf(-exponent)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `CN(0, 1)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Entries are drawn column by column so that the first `k` columns do not
/// depend on how many columns follow.
fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_gaussian(rng);
        }
    }
    m
}

/// i.i.d. `CN(0, pl)` entries.
pub fn sample_rayleigh<R: Rng + ?Sized>(rows: usize, cols: usize, pl: f64, rng: &mut R) -> Result<CMat> {
    if !(pl >= 0.0) {
        return Err(Error::Domain(format!("path loss must be non-negative, got {pl}")));
    }
    Ok(gaussian_matrix(rows, cols, rng) * C64::from(pl.sqrt()))
}

/// `sqrt(pl) (sqrt(K/(1+K)) los + sqrt(1/(1+K)) G)`; `K = inf` returns the
/// scaled LoS part.
pub fn sample_rician<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rician_factor: f64,
    pl: f64,
    los: &CMat,
    rng: &mut R,
) -> Result<CMat> {
    if rician_factor.is_nan() || rician_factor < 0.0 {
        return Err(Error::Domain(format!("rician factor must be non-negative, got {rician_factor}")));
    }
    if los.shape() != (rows, cols) {
        return Err(Error::Shape(format!(
            "LoS component is {:?}, expected ({rows}, {cols})",
            los.shape()
        )));
    }
    let scatter = sample_rayleigh(rows, cols, 1.0, rng)?;
    let (w_los, w_nlos) = if rician_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        let k = rician_factor;
        ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt())
    };
    Ok((los * C64::from(w_los) + scatter * C64::from(w_nlos)) * C64::from(pl.sqrt()))
}

/// Half-wavelength ULA response along the x-axis for a unit direction with
/// x-component `cos_x`.
pub fn ula_response(n: usize, cos_x: f64) -> CVec {
    CVec::from_fn(n, |k, _| C64::from_polar(1.0, std::f64::consts::PI * k as f64 * cos_x))
}

fn direction_cos_x(from: &[f64; 3], to: &[f64; 3]) -> f64 {
    let d = distance(from, to);
    if d == 0.0 {
        0.0
    } else {
        (to[0] - from[0]) / d
    }
}

/// One realization of every link.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub h_b1: CVec,
    pub h_b2: CVec,
    /// `N_t x M`
    pub h_br: CMat,
    pub h_r1: CVec,
    pub h_r2: CVec,
    pub hhat_r2: CVec,
    pub h_1r: CVec,
    pub h_12: C64,
}

#[derive(Clone, Copy)]
enum Link {
    B1 = 1,
    B2,
    Br,
    R1,
    R2,
    HatR2,
    OneR,
    OneTwo,
}

impl ChannelSet {
    pub fn n_antennas(&self) -> usize {
        self.h_b1.len()
    }

    pub fn n_ris(&self) -> usize {
        self.h_r1.len()
    }

    /// Direct channel of user `k` (0 = near, 1 = far).
    pub fn direct(&self, k: usize) -> &CVec {
        if k == 0 {
            &self.h_b1
        } else {
            &self.h_b2
        }
    }

    /// RIS-to-user channel of user `k` in the first slot.
    pub fn ris(&self, k: usize) -> &CVec {
        if k == 0 {
            &self.h_r1
        } else {
            &self.h_r2
        }
    }

    /// Keep the first `m` RIS elements; `0` removes the surface.
    pub fn truncate_ris(&self, m: usize) -> ChannelSet {
        let m = m.min(self.n_ris());
        ChannelSet {
            h_b1: self.h_b1.clone(),
            h_b2: self.h_b2.clone(),
            h_br: self.h_br.columns(0, m).into_owned(),
            h_r1: self.h_r1.rows(0, m).into_owned(),
            h_r2: self.h_r2.rows(0, m).into_owned(),
            hhat_r2: self.hhat_r2.rows(0, m).into_owned(),
            h_1r: self.h_1r.rows(0, m).into_owned(),
            h_12: self.h_12,
        }
    }

    pub fn without_ris(&self) -> ChannelSet {
        self.truncate_ris(0)
    }

    pub fn is_finite(&self) -> bool {
        let fin = |z: &C64| z.re.is_finite() && z.im.is_finite();
        self.h_b1.iter().all(fin)
            && self.h_b2.iter().all(fin)
            && self.h_br.iter().all(fin)
            && self.h_r1.iter().all(fin)
            && self.h_r2.iter().all(fin)
            && self.hhat_r2.iter().all(fin)
            && self.h_1r.iter().all(fin)
            && fin(&self.h_12)
    }

    /// Hex SHA-256 over dimensions and the bit patterns of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_antennas() as u64).to_le_bytes());
        h.update((self.n_ris() as u64).to_le_bytes());
        let parts: [&[C64]; 7] = [
            self.h_b1.as_slice(),
            self.h_b2.as_slice(),
            self.h_br.as_slice(),
            self.h_r1.as_slice(),
            self.h_r2.as_slice(),
            self.hhat_r2.as_slice(),
            self.h_1r.as_slice(),
        ];
        for z in parts.into_iter().flatten().chain(std::iter::once(&self.h_12)) {
            h.update(z.re.to_bits().to_le_bytes());
            h.update(z.im.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Draw every link for the geometry in `p`. Each link reads its own stream
/// derived from one `u64` taken from `rng`, so channels for `M` elements are a
/// prefix of those for any larger `M` under the same draw.
pub fn generate_channels<R: RngCore + ?Sized>(p: &Params, rng: &mut R) -> Result<ChannelSet> {
    let base = rng.next_u64();
    let stream = |link: Link| {
        let mut r = ChaCha8Rng::seed_from_u64(base);
        r.set_stream(link as u64);
        r
    };
    let (nt, m) = (p.n_antennas, p.n_ris);
    let pl = |a: &[f64; 3], b: &[f64; 3], eta: f64| path_loss_linear(distance(a, b), eta, p.rho0);
    let col = |v: CMat| v.column(0).into_owned();

    let h_b1 = col(sample_rayleigh(nt, 1, pl(&p.pos_bs, &p.pos_near, p.pl.bn), &mut stream(Link::B1))?);
    let h_b2 = col(sample_rayleigh(nt, 1, pl(&p.pos_bs, &p.pos_far, p.pl.bf), &mut stream(Link::B2))?);

    let los_br = {
        let bs = ula_response(nt, direction_cos_x(&p.pos_bs, &p.pos_ris));
        let ris = ula_response(m, direction_cos_x(&p.pos_ris, &p.pos_bs));
        &bs * ris.transpose()
    };
    let h_br = sample_rician(
        nt,
        m,
        p.rician_factor,
        pl(&p.pos_bs, &p.pos_ris, p.pl.br),
        &los_br,
        &mut stream(Link::Br),
    )?;
    // column vectors of RIS length are drawn as 1 x M rows to keep element order
    let ris_rayleigh = |pl: f64, link| -> Result<CVec> {
        Ok(sample_rayleigh(1, m, pl, &mut stream(link))?.row(0).transpose())
    };
    let h_r1 = ris_rayleigh(pl(&p.pos_ris, &p.pos_near, p.pl.nr), Link::R1)?;
    let h_1r = ris_rayleigh(pl(&p.pos_near, &p.pos_ris, p.pl.nr), Link::OneR)?;
    let los_rf = CMat::from_row_slice(1, m, ula_response(m, direction_cos_x(&p.pos_ris, &p.pos_far)).as_slice());
    let pl_rf = pl(&p.pos_ris, &p.pos_far, p.pl.rf);
    let h_r2 = sample_rician(1, m, p.rician_factor, pl_rf, &los_rf, &mut stream(Link::R2))?
        .row(0)
        .transpose();
    let hhat_r2 = sample_rician(1, m, p.rician_factor, pl_rf, &los_rf, &mut stream(Link::HatR2))?
        .row(0)
        .transpose();
    let h_12 = sample_rayleigh(1, 1, pl(&p.pos_near, &p.pos_far, p.pl.nf), &mut stream(Link::OneTwo))?[(0, 0)];

    Ok(ChannelSet {
        h_b1,
        h_b2,
        h_br,
        h_r1,
        h_r2,
        hhat_r2,
        h_1r,
        h_12,
    })
}
