//! Dense matrices on the full truncated mode set `(l, j)`.

use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::{self, c, CMat, CVec};
use crate::spectral::{dot, Truncation, TorusField};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    pub trunc: Truncation,
    pub mat: CMat,
}

impl LinearOperator {
    pub fn zeros(trunc: Truncation) -> Self {
        LinearOperator { trunc, mat: CMat::zeros(trunc.len(), trunc.len()) }
    }

    pub fn identity(trunc: Truncation) -> Self {
        LinearOperator { trunc, mat: CMat::identity(trunc.len(), trunc.len()) }
    }

    /// `omega.d_phi`, diagonal `i omega.l`.
    pub fn omega_dphi(trunc: Truncation, omega: &[f64]) -> Self {
        let nx = trunc.x_count();
        let mut m = CMat::zeros(trunc.len(), trunc.len());
        for p in 0..trunc.phi_count() {
            let l = trunc.phi_mode(p);
            for k in 0..nx {
                m[(p * nx + k, p * nx + k)] = c(0.0, dot(omega, &l));
            }
        }
        LinearOperator { trunc, mat: m }
    }

    /// Space multiplier `g(j)` acting identically on every angle mode.
    pub fn x_multiplier(trunc: Truncation, g: impl Fn(i64) -> linalg::C64) -> Self {
        let nx = trunc.x_count();
        let n = trunc.n_x as i64;
        let mut m = CMat::zeros(trunc.len(), trunc.len());
        for i in 0..trunc.len() {
            m[(i, i)] = g((i % nx) as i64 - n);
        }
        LinearOperator { trunc, mat: m }
    }

    /// Dense Toeplitz-in-angle matrix of a scalar collocation family.
    pub fn from_family(f: &Family, trunc: Truncation) -> Result<Self> {
        if f.nb != 1 {
            return Err(Error::Dimension("from_family expects a scalar family".into()));
        }
        if f.n != trunc.n_x || f.grid.nu != trunc.nu {
            return Err(Error::Dimension(format!(
                "family (nu={}, n={}) vs truncation (nu={}, N_x={})",
                f.grid.nu, f.n, trunc.nu, trunc.n_x
            )));
        }
        let spec = f.phi_spectrum();
        let kg = f.grid.k_phi() as i64;
        let nx = trunc.x_count();
        let mut m = CMat::zeros(trunc.len(), trunc.len());
        let lookup = |l: &[i64]| -> Option<&CMat> { spec.iter().find(|(k, _)| k.as_slice() == l).map(|(_, m)| m) };
        for p in 0..trunc.phi_count() {
            let l = trunc.phi_mode(p);
            for q in 0..trunc.phi_count() {
                let lp = trunc.phi_mode(q);
                let dl: Vec<i64> = l.iter().zip(&lp).map(|(a, b)| a - b).collect();
                if dl.iter().any(|x| x.abs() > kg) {
                    continue;
                }
                if let Some(b) = lookup(&dl) {
                    m.view_mut((p * nx, q * nx), (nx, nx)).copy_from(b);
                }
            }
        }
        Ok(LinearOperator { trunc, mat: m })
    }

    pub fn apply(&self, u: &TorusField) -> Result<TorusField> {
        if u.trunc != self.trunc {
            return Err(Error::Dimension("field truncation differs from operator".into()));
        }
        let v = &self.mat * CVec::from_vec(u.coeffs.clone());
        Ok(TorusField { trunc: self.trunc, coeffs: v.iter().cloned().collect() })
    }

    pub fn compose(&self, o: &Self) -> Self {
        LinearOperator { trunc: self.trunc, mat: linalg::mul(&self.mat, &o.mat) }
    }

    fn mirror_index(&self, i: usize) -> usize {
        self.trunc.len() - 1 - i
    }

    fn x_flip(&self, i: usize) -> usize {
        let nx = self.trunc.x_count();
        (i / nx) * nx + (nx - 1 - i % nx)
    }

    fn phi_flip(&self, i: usize) -> usize {
        let nx = self.trunc.x_count();
        self.trunc.phi_neg(i / nx) * nx + i % nx
    }

    /// `max |A - A~|` where `A~` is the real-structure image.
    pub fn real_defect(&self) -> f64 {
        let n = self.trunc.len();
        let mut d: f64 = 0.0;
        for r in 0..n {
            for s in 0..n {
                d = d.max((self.mat[(r, s)] - self.mat[(self.mirror_index(r), self.mirror_index(s))].conj()).norm());
            }
        }
        d
    }

    pub fn even_defect(&self) -> f64 {
        let n = self.trunc.len();
        let mut d: f64 = 0.0;
        for r in 0..n {
            for s in 0..n {
                d = d.max((self.mat[(r, s)] - self.mat[(self.x_flip(r), self.x_flip(s))]).norm());
            }
        }
        d
    }

    /// Defect of `A(-phi) = sign A(phi)`.
    pub fn phi_parity_defect(&self, sign: f64) -> f64 {
        let n = self.trunc.len();
        let mut d: f64 = 0.0;
        for r in 0..n {
            for s in 0..n {
                d = d.max((self.mat[(self.phi_flip(r), self.phi_flip(s))] - self.mat[(r, s)] * sign).norm());
            }
        }
        d
    }

    pub fn is_even(&self) -> bool {
        self.even_defect() == 0.0
    }

    pub fn is_real(&self) -> bool {
        self.real_defect() == 0.0
    }

    /// CSV dump (`row,col,re,im` for non-zero entries).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,re,im\n");
        for r in 0..self.mat.nrows() {
            for col in 0..self.mat.ncols() {
                let v = self.mat[(r, col)];
                if v.norm() != 0.0 {
                    s.push_str(&format!("{},{},{:.17e},{:.17e}\n", r, col, v.re, v.im));
                }
            }
        }
        s
    }
}

/// Four blocks acting on `(u1, u2)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    pub blocks: [LinearOperator; 4],
}

impl BlockOperator {
    pub fn from_family(f: &Family, trunc: Truncation) -> Result<Self> {
        if f.nb != 2 {
            return Err(Error::Dimension("block operator needs a 2x2 family".into()));
        }
        let b = |r, s| LinearOperator::from_family(&f.block(r, s), trunc);
        Ok(BlockOperator { blocks: [b(0, 0)?, b(0, 1)?, b(1, 0)?, b(1, 1)?] })
    }

    pub fn trunc(&self) -> Truncation {
        self.blocks[0].trunc
    }

    pub fn full(&self) -> CMat {
        let n = self.trunc().len();
        let mut m = CMat::zeros(2 * n, 2 * n);
        for r in 0..2 {
            for s in 0..2 {
                m.view_mut((r * n, s * n), (n, n)).copy_from(&self.blocks[2 * r + s].mat);
            }
        }
        m
    }

    /// Realness in `(h, hbar)` coordinates: lower blocks mirror the upper ones.
    pub fn complex_real_defect(&self) -> f64 {
        let mirror = |a: &LinearOperator| {
            let n = a.trunc.len();
            CMat::from_fn(n, n, |r, s| a.mat[(n - 1 - r, n - 1 - s)].conj())
        };
        let d1 = linalg::max_abs(&(&self.blocks[2].mat - mirror(&self.blocks[1])));
        let d2 = linalg::max_abs(&(&self.blocks[3].mat - mirror(&self.blocks[0])));
        d1.max(d2)
    }
}
