//! Primal-dual path-following solver for standard-form SDPs
//!
//! ```text
//! minimize   sum_b <C_b, X_b> + c_lp' x
//! subject to sum_b <A_ib, X_b> + a_i' x = b_i,   X_b Hermitian PSD,  x >= 0
//! ```
//!
//! with `<A, X> = Re tr(A X)`. Search directions are HKM with Mehrotra's
//! predictor-corrector; the Schur complement is assembled from sparse or dense
//! constraint matrices, which keeps unit-diagonal constraints at `O(n^2)` each.

use nalgebra::{DMatrix, DVector};

use crate::hermitian::C64;
use crate::program::SolveStatus;

#[derive(Clone, Debug)]
pub(crate) enum Coef {
    /// Every stored `(p, q, a)` contributes `a` at position `(p, q)`; the
    /// Hermitian mirror must be stored explicitly.
    Sparse(Vec<(usize, usize, C64)>),
    Dense(DMatrix<C64>),
}

impl Coef {
    fn dot(&self, m: &DMatrix<C64>) -> f64 {
        match self {
            Coef::Sparse(es) => es.iter().map(|&(p, q, a)| (a * m[(q, p)]).re).sum(),
            Coef::Dense(a) => {
                let n = a.nrows();
                let mut s = 0.0;
                for q in 0..n {
                    for p in 0..n {
                        s += (a[(p, q)] * m[(q, p)]).re;
                    }
                }
                s
            }
        }
    }

    fn axpy(&self, alpha: f64, target: &mut DMatrix<C64>) {
        match self {
            Coef::Sparse(es) => {
                for &(p, q, a) in es {
                    target[(p, q)] += a * alpha;
                }
            }
            Coef::Dense(a) => *target += a * C64::new(alpha, 0.0),
        }
    }

    /// `X A Z^{-1}`
    fn sandwich(&self, x: &DMatrix<C64>, zinv: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Coef::Sparse(es) => {
                let n = x.nrows();
                let mut g = DMatrix::zeros(n, n);
                for &(p, q, a) in es {
                    let xc = x.column(p) * a;
                    let zr = zinv.row(q);
                    g.ger(C64::new(1.0, 0.0), &xc, &zr.transpose(), C64::new(1.0, 0.0));
                }
                g
            }
            Coef::Dense(a) => mul3(x, a, zinv),
        }
    }

    fn frobenius(&self) -> f64 {
        match self {
            Coef::Sparse(es) => es.iter().map(|e| e.2.norm_sqr()).sum::<f64>().sqrt(),
            Coef::Dense(a) => a.norm(),
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        match self {
            Coef::Sparse(es) => es.iter_mut().for_each(|e| e.2 *= s),
            Coef::Dense(a) => *a *= C64::new(s, 0.0),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Row {
    /// One entry per Hermitian block.
    pub blocks: Vec<Option<Coef>>,
    pub lp: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub(crate) struct SdpData {
    pub dims: Vec<usize>,
    pub n_lp: usize,
    pub c: Vec<DMatrix<C64>>,
    pub c_lp: DVector<f64>,
    pub rows: Vec<Row>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<DMatrix<C64>>,
    pub x_lp: DVector<f64>,
    pub iterations: usize,
}

/// Complex product through four real products, which take nalgebra's fast
/// `f64` gemm path.
fn mul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, C64::new)
}

fn mul3(a: &DMatrix<C64>, b: &DMatrix<C64>, c: &DMatrix<C64>) -> DMatrix<C64> {
    mul(&mul(a, b), c)
}

fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

fn inner(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Inverse Cholesky factor `L^-1` of a Hermitian positive definite matrix.
fn inverse_factor(x: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    let chol = x.clone().cholesky()?;
    let n = x.nrows();
    chol.l().solve_lower_triangular(&DMatrix::identity(n, n))
}

/// Largest `alpha` with `x + alpha d` PSD (infinite if `d` is a PSD
/// direction), given `linv = L^-1` for `x = L L^H`.
fn max_step_psd(linv: &DMatrix<C64>, d: &DMatrix<C64>) -> f64 {
    let w = mul3(linv, d, &linv.adjoint());
    let lam = hermitize(&w).symmetric_eigenvalues().min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn max_step_lp(x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    x.iter()
        .zip(d.iter())
        .filter(|(_, &di)| di < 0.0)
        .map(|(&xi, &di)| -xi / di)
        .fold(f64::INFINITY, f64::min)
}

struct Direction {
    dy: DVector<f64>,
    dx: Vec<DMatrix<C64>>,
    dz: Vec<DMatrix<C64>>,
    dx_lp: DVector<f64>,
    dz_lp: DVector<f64>,
}

impl SdpData {
    fn apply_a(&self, x: &[DMatrix<C64>], x_lp: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| {
                let blk: f64 = r
                    .blocks
                    .iter()
                    .zip(x)
                    .filter_map(|(c, xb)| c.as_ref().map(|c| c.dot(xb)))
                    .sum();
                blk + r.lp.iter().map(|&(l, a)| a * x_lp[l]).sum::<f64>()
            }),
        )
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<C64>>, DVector<f64>) {
        let mut mats: Vec<DMatrix<C64>> = self.dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let mut lp = DVector::zeros(self.n_lp);
        for (r, &yi) in self.rows.iter().zip(y.iter()) {
            for (c, m) in r.blocks.iter().zip(mats.iter_mut()) {
                if let Some(c) = c {
                    c.axpy(yi, m);
                }
            }
            for &(l, a) in &r.lp {
                lp[l] += a * yi;
            }
        }
        (mats, lp)
    }

    fn lp_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.n_lp);
        for (i, r) in self.rows.iter().enumerate() {
            for &(l, v) in &r.lp {
                a[(i, l)] += v;
            }
        }
        a
    }
}

pub(crate) fn solve(d: &SdpData, tol: f64, max_iter: usize) -> SdpSolution {
    let m = d.rows.len();
    let nb = d.dims.len();
    let nu = d.dims.iter().sum::<usize>() as f64 + d.n_lp as f64;

    let norm_b = d.b.norm();
    let norm_c = (d.c.iter().map(|c| c.norm_squared()).sum::<f64>() + d.c_lp.norm_squared()).sqrt();
    let a_lp = d.lp_matrix();

    // starting point in the spirit of SDPT3's default initialization
    let mut x: Vec<DMatrix<C64>> = Vec::with_capacity(nb);
    let mut z: Vec<DMatrix<C64>> = Vec::with_capacity(nb);
    for (b, &n) in d.dims.iter().enumerate() {
        let nf = n as f64;
        let mut xi = 10f64.max(nf.sqrt());
        let mut zeta = xi.max(d.c[b].norm());
        for (i, r) in d.rows.iter().enumerate() {
            if let Some(c) = &r.blocks[b] {
                let an = c.frobenius();
                xi = xi.max(nf * (1.0 + d.b[i].abs()) / (1.0 + an));
                zeta = zeta.max(an);
            }
        }
        x.push(DMatrix::identity(n, n) * C64::new(xi, 0.0));
        z.push(DMatrix::identity(n, n) * C64::new(zeta, 0.0));
    }
    let (mut x_lp, mut z_lp) = {
        let mut xi = 10.0f64;
        let mut zeta = 10.0f64.max(d.c_lp.amax());
        for l in 0..d.n_lp {
            let col = a_lp.column(l).norm();
            zeta = zeta.max(col);
            for i in 0..m {
                if a_lp[(i, l)] != 0.0 {
                    xi = xi.max((1.0 + d.b[i].abs()) / (1.0 + col));
                }
            }
        }
        (DVector::from_element(d.n_lp, xi), DVector::from_element(d.n_lp, zeta))
    };
    let mut y = DVector::zeros(m);

    let finish = |status, x: Vec<DMatrix<C64>>, x_lp: DVector<f64>, it| SdpSolution {
        status,
        x,
        x_lp,
        iterations: it,
    };

    let mut stalled = 0;
    for iter in 0..max_iter {
        let ax = d.apply_a(&x, &x_lp);
        let rp = &d.b - &ax;
        let (aty, aty_lp) = d.apply_at(&y);
        let rd: Vec<DMatrix<C64>> = (0..nb).map(|b| &d.c[b] - &z[b] - &aty[b]).collect();
        let rd_lp = &d.c_lp - &z_lp - &aty_lp;

        let pobj: f64 = (0..nb).map(|b| inner(&d.c[b], &x[b])).sum::<f64>() + d.c_lp.dot(&x_lp);
        let dobj = d.b.dot(&y);
        let gap: f64 = (0..nb).map(|b| inner(&x[b], &z[b])).sum::<f64>() + x_lp.dot(&z_lp);
        let mu = gap / nu.max(1.0);
        let rd_norm = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rd_lp.norm_squared()).sqrt();
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = rd_norm / (1.0 + norm_c);
        let relgap = gap / (1.0 + pobj.abs() + dobj.abs());

        if relgap < tol && pinf < tol && dinf < tol {
            return finish(SolveStatus::Optimal, x, x_lp, iter);
        }
        // approximate infeasibility certificates from diverging iterates
        if dobj > 0.0 {
            let cz = (aty.iter().zip(&rd).zip(&z).map(|((a, r), zz)| (a + zz + r).norm_squared()).sum::<f64>()
                + (&aty_lp + &z_lp + &rd_lp).norm_squared())
            .sqrt();
            let ray = ((aty.iter().zip(&z).map(|(a, zz)| (a + zz).norm_squared()).sum::<f64>())
                + (&aty_lp + &z_lp).norm_squared())
            .sqrt();
            if dobj > 1e8 * (1.0 + cz) && ray / dobj < 1e-8 {
                return finish(SolveStatus::Infeasible, x, x_lp, iter);
            }
        }
        if pobj < -1e8 * (1.0 + norm_b) && ax.norm() / (-pobj) < 1e-8 {
            return finish(SolveStatus::Unbounded, x, x_lp, iter);
        }

        let mut xf = Vec::with_capacity(nb);
        let mut zf = Vec::with_capacity(nb);
        let mut zinv = Vec::with_capacity(nb);
        for (xb, zb) in x.iter().zip(&z) {
            match (inverse_factor(xb), inverse_factor(zb)) {
                (Some(lx), Some(lz)) => {
                    zinv.push(hermitize(&mul(&lz.adjoint(), &lz)));
                    xf.push(lx);
                    zf.push(lz);
                }
                _ => return finish(SolveStatus::NumericalFailure, x, x_lp, iter),
            }
        }

        // Schur complement M_ij = sum_b Re tr(A_ib X_b A_jb Z_b^-1) + lp part
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for b in 0..nb {
            for j in 0..m {
                let Some(aj) = &d.rows[j].blocks[b] else { continue };
                let g = aj.sandwich(&x[b], &zinv[b]);
                for i in 0..=j {
                    if let Some(ai) = &d.rows[i].blocks[b] {
                        schur[(i, j)] += ai.dot(&g);
                    }
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        if d.n_lp > 0 {
            let ratio = x_lp.component_div(&z_lp);
            let scaled = &a_lp * DMatrix::from_diagonal(&ratio);
            schur += scaled * a_lp.transpose();
        }
        let diag_max = schur.diagonal().amax().max(1e-300);
        let mut reg = 0.0;
        let chol = loop {
            let mut s = schur.clone();
            for i in 0..m {
                s[(i, i)] += reg;
            }
            if let Some(c) = s.cholesky() {
                break Some(c);
            }
            reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            if reg > 1e-4 * diag_max {
                break None;
            }
        };
        let Some(chol) = chol else {
            return finish(SolveStatus::NumericalFailure, x, x_lp, iter);
        };

        let h: Vec<DMatrix<C64>> = (0..nb).map(|b| mul3(&x[b], &rd[b], &zinv[b])).collect();
        let h_lp = x_lp.component_mul(&rd_lp).component_div(&z_lp);

        let direction = |t: &[DMatrix<C64>], t_lp: &DVector<f64>| -> Direction {
            let diff: Vec<DMatrix<C64>> = (0..nb).map(|b| &t[b] - &h[b]).collect();
            let rhs = &rp - d.apply_a(&diff, &(t_lp - &h_lp));
            let dy = chol.solve(&rhs);
            let (atdy, atdy_lp) = d.apply_at(&dy);
            let dz: Vec<DMatrix<C64>> = (0..nb).map(|b| &rd[b] - &atdy[b]).collect();
            let dz_lp = &rd_lp - atdy_lp;
            let dx: Vec<DMatrix<C64>> = (0..nb)
                .map(|b| hermitize(&(&t[b] - mul3(&x[b], &dz[b], &zinv[b]))))
                .collect();
            let dx_lp = t_lp - x_lp.component_mul(&dz_lp).component_div(&z_lp);
            Direction { dy, dx, dz, dx_lp, dz_lp }
        };
        let steps = |dir: &Direction| -> (f64, f64) {
            let mut ap = max_step_lp(&x_lp, &dir.dx_lp);
            let mut ad = max_step_lp(&z_lp, &dir.dz_lp);
            for b in 0..nb {
                ap = ap.min(max_step_psd(&xf[b], &dir.dx[b]));
                ad = ad.min(max_step_psd(&zf[b], &dir.dz[b]));
            }
            (ap, ad)
        };

        // predictor
        let t_aff: Vec<DMatrix<C64>> = x.iter().map(|xb| -xb).collect();
        let t_aff_lp = -&x_lp;
        let aff = direction(&t_aff, &t_aff_lp);
        let (ap_aff, ad_aff) = steps(&aff);
        let (ap_aff, ad_aff) = (ap_aff.min(1.0), ad_aff.min(1.0));
        let gap_aff: f64 = (0..nb)
            .map(|b| inner(&(&x[b] + &aff.dx[b] * C64::new(ap_aff, 0.0)), &(&z[b] + &aff.dz[b] * C64::new(ad_aff, 0.0))))
            .sum::<f64>()
            + (&x_lp + &aff.dx_lp * ap_aff).dot(&(&z_lp + &aff.dz_lp * ad_aff));
        let sigma = if gap > 0.0 { (gap_aff / gap).max(0.0).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let smu = C64::new(sigma * mu, 0.0);
        let t_cor: Vec<DMatrix<C64>> = (0..nb)
            .map(|b| &zinv[b] * smu - &x[b] - mul3(&aff.dx[b], &aff.dz[b], &zinv[b]))
            .collect();
        let t_cor_lp = (DVector::from_element(d.n_lp, sigma * mu) - aff.dx_lp.component_mul(&aff.dz_lp))
            .component_div(&z_lp)
            - &x_lp;
        let dir = direction(&t_cor, &t_cor_lp);
        let (ap, ad) = steps(&dir);
        let gamma = 0.9 + 0.09 * ap_aff.min(ad_aff);
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            stalled += 1;
            if stalled > 3 {
                return finish(SolveStatus::NumericalFailure, x, x_lp, iter);
            }
        } else {
            stalled = 0;
        }

        for b in 0..nb {
            x[b] = hermitize(&(&x[b] + &dir.dx[b] * C64::new(ap, 0.0)));
            z[b] = hermitize(&(&z[b] + &dir.dz[b] * C64::new(ad, 0.0)));
        }
        x_lp += &dir.dx_lp * ap;
        z_lp += &dir.dz_lp * ad;
        y += &dir.dy * ad;
    }
    finish(SolveStatus::NumericalFailure, x, x_lp, max_iter)
}
