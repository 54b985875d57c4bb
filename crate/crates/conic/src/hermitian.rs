use nalgebra::{Complex, DMatrix};

use crate::expr::{LinExpr, Var};

pub type C64 = Complex<f64>;

/// Complex Hermitian `n x n` matrix variable, parametrized by `n^2` real scalars:
/// the real diagonal plus the real and imaginary parts of the strict upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianVar {
    pub(crate) n: usize,
    pub(crate) diag: Vec<Var>,
    /// `(re, im)` for each `(i, j)` with `i < j`, row-major.
    pub(crate) upper: Vec<(Var, Var)>,
}

impl HermitianVar {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub(crate) fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        // rows 0..i contribute (n-1) + (n-2) + ... + (n-i) entries
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// `(Re V_ij, Im V_ij)` as affine expressions.
    pub fn entry(&self, i: usize, j: usize) -> (LinExpr, LinExpr) {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Equal => (self.diag[i].into(), LinExpr::zero()),
            Ordering::Less => {
                let (re, im) = self.upper[self.upper_index(i, j)];
                (re.into(), im.into())
            }
            Ordering::Greater => {
                let (re, im) = self.upper[self.upper_index(j, i)];
                (re.into(), LinExpr::term(im, -1.0))
            }
        }
    }

    /// `Re tr(A V)` for a Hermitian coefficient matrix `A`. Only the lower
    /// triangle and diagonal of `A` are read, so `A` is taken as Hermitian.
    pub fn inner(&self, a: &DMatrix<C64>) -> LinExpr {
        assert_eq!(a.nrows(), self.n);
        assert_eq!(a.ncols(), self.n);
        let mut e = LinExpr::zero();
        for i in 0..self.n {
            e.add_term(self.diag[i], a[(i, i)].re);
            for j in (i + 1)..self.n {
                // A_ij = conj(A_ji); tr(AV) picks up 2 Re(A_ij conj(V_ij))
                let aij = a[(j, i)].conj();
                let (re, im) = self.upper[self.upper_index(i, j)];
                e.add_term(re, 2.0 * aij.re);
                e.add_term(im, 2.0 * aij.im);
            }
        }
        e
    }

    /// Assemble the matrix from a primal vector.
    pub fn value(&self, x: &[f64]) -> DMatrix<C64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(x[self.diag[i].0], 0.0);
            for j in (i + 1)..n {
                let (re, im) = self.upper[self.upper_index(i, j)];
                let v = C64::new(x[re.0], x[im.0]);
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
        m
    }

    pub(crate) fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.diag
            .iter()
            .copied()
            .chain(self.upper.iter().flat_map(|&(r, i)| [r, i]))
    }
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a complex
/// Hermitian matrix. Its spectrum is that of `H` with every eigenvalue doubled
/// in multiplicity, and `tr(R(A) R(B)) = 2 Re tr(A B)`.
pub fn realify_hermitian(h: &DMatrix<C64>) -> DMatrix<f64> {
    let n = h.nrows();
    assert_eq!(n, h.ncols(), "realify_hermitian needs a square matrix");
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            r[(i, j)] = z.re;
            r[(i + n, j + n)] = z.re;
            r[(i, j + n)] = -z.im;
            r[(i + n, j)] = z.im;
        }
    }
    r
}

/// Inverse of [`realify_hermitian`], averaging the redundant blocks.
pub fn complexify_symmetric(r: &DMatrix<f64>) -> DMatrix<C64> {
    let n = r.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| {
        C64::new(
            0.5 * (r[(i, j)] + r[(i + n, j + n)]),
            0.5 * (r[(i + n, j)] - r[(i, j + n)]),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hvar(n: usize) -> HermitianVar {
        let mut next = 0;
        let mut take = || {
            next += 1;
            Var(next - 1)
        };
        let diag = (0..n).map(|_| take()).collect();
        let upper = (0..n * (n - 1) / 2).map(|_| (take(), take())).collect();
        HermitianVar { n, diag, upper }
    }

    #[test]
    fn identity_realifies_to_identity() {
        let r = realify_hermitian(&DMatrix::identity(3, 3));
        assert_eq!(r, DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn scalar_realification() {
        let h = DMatrix::from_element(1, 1, C64::new(2.0, 0.0));
        let r = realify_hermitian(&h);
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn upper_index_enumerates_row_major() {
        let v = hvar(4);
        let mut seen = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                seen.push(v.upper_index(i, j));
            }
        }
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn inner_matches_trace() {
        let v = hvar(3);
        let a = DMatrix::from_fn(3, 3, |i, j| {
            let z = C64::new((i + 2 * j) as f64, (i as f64) - (j as f64));
            if i == j {
                C64::new(z.re, 0.0)
            } else {
                z
            }
        });
        let a = (&a + a.adjoint()) * C64::new(0.5, 0.0);
        let x: Vec<f64> = (0..9).map(|k| 0.3 * k as f64 - 1.0).collect();
        let vm = v.value(&x);
        let direct = (&a * &vm).trace().re;
        assert!((v.inner(&a).eval(&x) - direct).abs() < 1e-12);
    }
}
