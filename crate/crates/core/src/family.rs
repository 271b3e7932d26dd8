//! Angle-dependent operators stored pseudo-spectrally: one matrix on the
//! space modes `|j| <= n` for every angle collocation point.
//!
//! Products and inverses act slice by slice; `omega.d_phi` of a family is
//! taken spectrally across slices.  Block systems (the (eta, psi) or
//! (h, hbar) pairs) are families of `nb x nb` block matrices.

use crate::fourier::{coeffs_1d, fft_nd};
use crate::grid::{Grid, GridFn};
use crate::linalg::{self, c, CMat, C64};
use crate::spectral::dot;

/// Multiplication operator by a function with coefficients `f[k + 2n]`,
/// `|k| <= 2n`, on the modes `|j| <= n`.
pub fn toeplitz(f: &[C64], n: usize) -> CMat {
    let d = 2 * n + 1;
    assert!(f.len() > 4 * n);
    let off = (f.len() / 2) as i64;
    CMat::from_fn(d, d, |r, s| {
        let k = r as i64 - s as i64;
        f[(k + off) as usize]
    })
}

/// Multiplication by real samples on a uniform x-grid.
pub fn mult_matrix(samples: &[f64], n: usize) -> CMat {
    let s: Vec<C64> = samples.iter().map(|v| c(*v, 0.0)).collect();
    let cut = (2 * n).min((samples.len() - 1) / 2);
    let mut co = coeffs_1d(&s, cut);
    // pad with zeros if the grid did not resolve all 4n+1 coefficients
    if co.len() < 4 * n + 1 {
        let pad = (4 * n + 1 - co.len()) / 2;
        let mut v = vec![c(0.0, 0.0); pad];
        v.extend(co);
        v.extend(vec![c(0.0, 0.0); pad]);
        co = v;
    }
    toeplitz(&co, n)
}

pub fn multiplier(n: usize, g: impl Fn(i64) -> C64) -> CMat {
    let d = 2 * n + 1;
    CMat::from_fn(d, d, |r, s| if r == s { g(r as i64 - n as i64) } else { c(0.0, 0.0) })
}

pub fn dx_matrix(n: usize) -> CMat {
    multiplier(n, |j| c(0.0, j as f64))
}

pub fn hilbert_matrix(n: usize) -> CMat {
    multiplier(n, |j| c(0.0, -(j.signum() as f64)))
}

/// Projector onto the `x`-average.
pub fn pi0_matrix(n: usize) -> CMat {
    multiplier(n, |j| if j == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) })
}

/// Matrix of `u -> u(x + d(x))` from modes `|j'| <= n_in` to `|k| <= n_out`,
/// re-expanded from samples of `d` on an oversampled grid.
pub fn composition_matrix(d_coeffs: &[C64], n_in: usize, n_out: usize, m: usize) -> CMat {
    let xs: Vec<f64> = (0..m).map(|i| 2.0 * std::f64::consts::PI * i as f64 / m as f64).collect();
    let disp: Vec<f64> = xs.iter().map(|x| crate::fourier::eval_1d(d_coeffs, *x).re).collect();
    if disp.iter().all(|d| *d == 0.0) {
        return CMat::from_fn(2 * n_out + 1, 2 * n_in + 1, |r, s| {
            if r as i64 - n_out as i64 == s as i64 - n_in as i64 { c(1.0, 0.0) } else { c(0.0, 0.0) }
        });
    }
    let mut out = CMat::zeros(2 * n_out + 1, 2 * n_in + 1);
    for jp in -(n_in as i64)..=(n_in as i64) {
        let col: Vec<C64> = xs
            .iter()
            .zip(&disp)
            .map(|(x, dd)| {
                let a = jp as f64 * (x + dd);
                C64::new(a.cos(), a.sin())
            })
            .collect();
        let co = coeffs_1d(&col, n_out);
        for (r, v) in co.iter().enumerate() {
            out[(r, (jp + n_in as i64) as usize)] = *v;
        }
    }
    out
}

/// Restriction of a matrix on `|j| <= big` to `|j| <= small`, centred.
pub fn restrict(a: &CMat, big: usize, small: usize) -> CMat {
    let off = big - small;
    let d = 2 * small + 1;
    a.view((off, off), (d, d)).into_owned()
}

/// Angle-collocation family of square matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Family {
    pub grid: Grid,
    /// number of space-mode blocks per matrix (1 scalar, 2 for pairs)
    pub nb: usize,
    /// space cutoff: each block acts on `|j| <= n`
    pub n: usize,
    pub mats: Vec<CMat>,
}

impl Family {
    pub fn dim(&self) -> usize {
        self.nb * (2 * self.n + 1)
    }

    pub fn zeros(grid: Grid, nb: usize, n: usize) -> Self {
        let d = nb * (2 * n + 1);
        Family { grid, nb, n, mats: vec![CMat::zeros(d, d); grid.n_slices()] }
    }

    pub fn identity(grid: Grid, nb: usize, n: usize) -> Self {
        let d = nb * (2 * n + 1);
        Family { grid, nb, n, mats: vec![CMat::identity(d, d); grid.n_slices()] }
    }

    pub fn constant(grid: Grid, nb: usize, n: usize, m: &CMat) -> Self {
        Family { grid, nb, n, mats: vec![m.clone(); grid.n_slices()] }
    }

    pub fn from_fn(grid: Grid, nb: usize, n: usize, f: impl Fn(usize) -> CMat) -> Self {
        Family { grid, nb, n, mats: (0..grid.n_slices()).map(f).collect() }
    }

    /// Multiplication operator by a grid function (scalar family).
    pub fn mult(f: &GridFn, n: usize) -> Self {
        Family::from_fn(f.grid, 1, n, |g| mult_matrix(f.slice(g), n))
    }

    fn same_shape(&self, o: &Self) {
        assert_eq!(self.grid, o.grid);
        assert_eq!((self.nb, self.n), (o.nb, o.n));
    }

    pub fn map(&self, f: impl Fn(usize, &CMat) -> CMat) -> Self {
        Family { grid: self.grid, nb: self.nb, n: self.n, mats: self.mats.iter().enumerate().map(|(g, m)| f(g, m)).collect() }
    }

    pub fn zip(&self, o: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Self {
        self.same_shape(o);
        Family { grid: self.grid, nb: self.nb, n: self.n, mats: self.mats.iter().zip(&o.mats).map(|(a, b)| f(a, b)).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }

    pub fn mul(&self, o: &Self) -> Self {
        self.zip(o, linalg::mul)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map(|_, m| m * s)
    }

    pub fn lmul(&self, m: &CMat) -> Self {
        self.map(|_, a| linalg::mul(m, a))
    }

    pub fn rmul(&self, m: &CMat) -> Self {
        self.map(|_, a| linalg::mul(a, m))
    }

    /// Scale slice `g` by the scalar `s[g]`.
    pub fn scale_slices(&self, s: &[f64]) -> Self {
        self.map(|g, a| a * c(s[g], 0.0))
    }

    pub fn inverse(&self) -> Option<Self> {
        let mats: Option<Vec<CMat>> = self.mats.iter().map(linalg::inverse).collect();
        mats.map(|mats| Family { grid: self.grid, nb: self.nb, n: self.n, mats })
    }

    pub fn adjoint(&self) -> Self {
        self.map(|_, a| a.adjoint())
    }

    pub fn max_abs(&self) -> f64 {
        self.mats.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    /// Largest slice spectral norm.
    pub fn op_norm(&self) -> f64 {
        self.mats.iter().map(linalg::op_norm).fold(0.0, f64::max)
    }

    /// Apply a transform entrywise across slices.
    fn entrywise_spectral(&self, f: impl Fn(&[i64]) -> C64) -> Self {
        let ns = self.grid.n_slices();
        let d = self.dim();
        let shape = self.grid.phi_shape();
        let mut out = self.mats.clone();
        let mult: Vec<C64> = (0..ns).map(|g| f(&self.grid.phi_mode_of_bin(g))).collect();
        let mut buf = vec![c(0.0, 0.0); ns];
        for r in 0..d {
            for s in 0..d {
                for g in 0..ns {
                    buf[g] = self.mats[g][(r, s)];
                }
                fft_nd(&mut buf, &shape, false);
                for g in 0..ns {
                    buf[g] *= mult[g] / ns as f64;
                }
                fft_nd(&mut buf, &shape, true);
                for g in 0..ns {
                    out[g][(r, s)] = buf[g];
                }
            }
        }
        Family { grid: self.grid, nb: self.nb, n: self.n, mats: out }
    }

    pub fn omega_dphi(&self, omega: &[f64]) -> Self {
        self.entrywise_spectral(|l| c(0.0, dot(omega, l)))
    }

    /// Angle Fourier coefficients `A(l)` for every resolved `l`, keyed by FFT bin.
    pub fn phi_spectrum(&self) -> Vec<(Vec<i64>, CMat)> {
        let ns = self.grid.n_slices();
        let d = self.dim();
        let shape = self.grid.phi_shape();
        let mut out: Vec<CMat> = vec![CMat::zeros(d, d); ns];
        let mut buf = vec![c(0.0, 0.0); ns];
        for r in 0..d {
            for s in 0..d {
                for g in 0..ns {
                    buf[g] = self.mats[g][(r, s)];
                }
                fft_nd(&mut buf, &shape, false);
                for g in 0..ns {
                    out[g][(r, s)] = buf[g] / ns as f64;
                }
            }
        }
        (0..ns).map(|g| self.grid.phi_mode_of_bin(g)).zip(out).collect()
    }

    /// Inverse of [`Family::phi_spectrum`]: coefficients given per FFT bin.
    pub fn from_phi_spectrum(grid: Grid, nb: usize, n: usize, bins: &[CMat]) -> Self {
        let ns = grid.n_slices();
        let d = nb * (2 * n + 1);
        let shape = grid.phi_shape();
        let mut mats = vec![CMat::zeros(d, d); ns];
        let mut buf = vec![c(0.0, 0.0); ns];
        for r in 0..d {
            for s in 0..d {
                for g in 0..ns {
                    buf[g] = bins[g][(r, s)];
                }
                fft_nd(&mut buf, &shape, true);
                for g in 0..ns {
                    mats[g][(r, s)] = buf[g];
                }
            }
        }
        Family { grid, nb, n, mats }
    }

    /// Angle average `A(0)`.
    pub fn phi_mean(&self) -> CMat {
        let mut acc = CMat::zeros(self.dim(), self.dim());
        for m in &self.mats {
            acc += m;
        }
        acc / c(self.mats.len() as f64, 0.0)
    }

    /// Evaluate the trigonometric interpolant at angle points `phi_g + s_g`.
    pub fn compose_phi(&self, shift: &[Vec<f64>]) -> Self {
        let spec = self.phi_spectrum();
        let ns = self.grid.n_slices();
        let mats = (0..ns)
            .map(|g| {
                let p: Vec<f64> = self.grid.phi_point(g).iter().zip(&shift[g]).map(|(a, b)| a + b).collect();
                let mut acc = CMat::zeros(self.dim(), self.dim());
                for (l, m) in &spec {
                    let a: f64 = l.iter().zip(&p).map(|(k, x)| *k as f64 * x).sum();
                    acc += m * C64::new(a.cos(), a.sin());
                }
                acc
            })
            .collect();
        Family { grid: self.grid, nb: self.nb, n: self.n, mats }
    }

    /// Block `(r, s)` as a scalar family.
    pub fn block(&self, r: usize, s: usize) -> Family {
        let d = 2 * self.n + 1;
        Family {
            grid: self.grid,
            nb: 1,
            n: self.n,
            mats: self.mats.iter().map(|m| m.view((r * d, s * d), (d, d)).into_owned()).collect(),
        }
    }

    /// Assemble a block family from scalar families in row-major order.
    pub fn from_blocks(nb: usize, blocks: &[&Family]) -> Family {
        assert_eq!(blocks.len(), nb * nb);
        let f0 = blocks[0];
        let d = 2 * f0.n + 1;
        let mats = (0..f0.grid.n_slices())
            .map(|g| {
                let mut m = CMat::zeros(nb * d, nb * d);
                for r in 0..nb {
                    for s in 0..nb {
                        m.view_mut((r * d, s * d), (d, d)).copy_from(&blocks[r * nb + s].mats[g]);
                    }
                }
                m
            })
            .collect();
        Family { grid: f0.grid, nb, n: f0.n, mats }
    }

    /// Block-diagonal family `diag(a, b)`.
    pub fn diag2(a: &Family, b: &Family) -> Family {
        let z = Family::zeros(a.grid, 1, a.n);
        Family::from_blocks(2, &[a, &z, &z, b])
    }

    /// Restrict every block to the space modes `|j| <= m`.
    pub fn restrict(&self, m: usize) -> Family {
        let d = 2 * self.n + 1;
        let e = 2 * m + 1;
        let off = self.n - m;
        let mats = self
            .mats
            .iter()
            .map(|a| {
                let mut out = CMat::zeros(self.nb * e, self.nb * e);
                for r in 0..self.nb {
                    for s in 0..self.nb {
                        out.view_mut((r * e, s * e), (e, e)).copy_from(&a.view((r * d + off, s * d + off), (e, e)));
                    }
                }
                out
            })
            .collect();
        Family { grid: self.grid, nb: self.nb, n: m, mats }
    }

    /// Right multiplication of every block column by the diagonal weight `w(j')`.
    pub fn weight_cols(&self, w: impl Fn(i64) -> f64) -> Family {
        let d = 2 * self.n + 1;
        let n = self.n as i64;
        self.map(|_, a| {
            let mut b = a.clone();
            for s in 0..b.ncols() {
                let j = (s % d) as i64 - n;
                let wj = c(w(j), 0.0);
                b.column_mut(s).iter_mut().for_each(|z| *z *= wj);
            }
            b
        })
    }

    /// Largest slice spectral norm of `A <D>^{-m}` restricted to `|j| <= window`;
    /// the yardstick for conjugation residuals of order-`m` operators.
    pub fn graded_norm(&self, m: f64, window: usize) -> f64 {
        self.restrict(window).weight_cols(|j| (j.abs().max(1) as f64).powf(-m)).op_norm()
    }
}

/// Mirror `R -> Rbar` with `(Rbar)_j^{j'} = conj(R_{-j}^{-j'})` on one block.
pub fn mirror(a: &CMat) -> CMat {
    let d = a.nrows();
    CMat::from_fn(d, d, |r, s| a[(d - 1 - r, d - 1 - s)].conj())
}

/// `A_j^{j'} = A_{-j}^{-j'}` on one block.
pub fn parity_x(a: &CMat) -> CMat {
    let d = a.nrows();
    CMat::from_fn(d, d, |r, s| a[(d - 1 - r, d - 1 - s)])
}

/// Structure defects of a block family, measured relative to its size.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct StructureDefects {
    pub real: f64,
    pub even: f64,
    pub reversible: f64,
}

impl StructureDefects {
    pub fn max(&self) -> f64 {
        self.real.max(self.even).max(self.reversible)
    }
}

/// Coordinates in which a 2x2 block family is written.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coords {
    /// (eta, psi): involution `rho = diag(1, -1)`
    Real,
    /// (h, hbar): involution swaps the components
    Complex,
}

/// Symmetry kind of a family with respect to the involution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    /// operator: `A(-phi) = -rho A(phi) rho`
    Reversible,
    /// transformation: `A(-phi) = rho A(phi) rho`
    ReversibilityPreserving,
}

fn block_of(a: &CMat, r: usize, s: usize, d: usize) -> CMat {
    a.view((r * d, s * d), (d, d)).into_owned()
}

/// Defects of reality, evenness and (reversibility | reversibility
/// preservation) for a scalar (nb = 1) or pair (nb = 2) family.
///
/// Scalar families use the `phi`-parity sign directly: `Reversible` means
/// odd in `phi`, `ReversibilityPreserving` means even.
pub fn structure_defects(f: &Family, coords: Coords, sym: Symmetry) -> StructureDefects {
    let d = 2 * f.n + 1;
    let scale = f.max_abs().max(1e-300);
    let mut out = StructureDefects::default();
    let sgn = match sym {
        Symmetry::Reversible => -1.0,
        Symmetry::ReversibilityPreserving => 1.0,
    };
    for g in 0..f.grid.n_slices() {
        let a = &f.mats[g];
        let am = &f.mats[f.grid.phi_neg(g)];
        for r in 0..f.nb {
            for s in 0..f.nb {
                let b = block_of(a, r, s, d);
                out.even = out.even.max(linalg::max_abs(&(&b - parity_x(&b))));
            }
        }
        match (f.nb, coords) {
            (1, _) => {
                out.real = out.real.max(linalg::max_abs(&(a - mirror(a))));
                out.reversible = out.reversible.max(linalg::max_abs(&(am - a * c(sgn, 0.0))));
            }
            (2, Coords::Real) => {
                for r in 0..2 {
                    for s in 0..2 {
                        let b = block_of(a, r, s, d);
                        out.real = out.real.max(linalg::max_abs(&(&b - mirror(&b))));
                        // rho A rho flips the off-diagonal blocks
                        let flip = if r == s { 1.0 } else { -1.0 };
                        let bm = block_of(am, r, s, d);
                        out.reversible = out.reversible.max(linalg::max_abs(&(bm - b * c(sgn * flip, 0.0))));
                    }
                }
            }
            (2, Coords::Complex) => {
                // realness: A = [[R1, R2], [mirror R2, mirror R1]]
                let (a11, a12, a21, a22) =
                    (block_of(a, 0, 0, d), block_of(a, 0, 1, d), block_of(a, 1, 0, d), block_of(a, 1, 1, d));
                out.real = out.real.max(linalg::max_abs(&(&a21 - mirror(&a12))));
                out.real = out.real.max(linalg::max_abs(&(&a22 - mirror(&a11))));
                // S A S swaps diagonal blocks and off-diagonal blocks
                for r in 0..2 {
                    for s in 0..2 {
                        let bm = block_of(am, r, s, d);
                        let sw = block_of(a, 1 - r, 1 - s, d);
                        out.reversible = out.reversible.max(linalg::max_abs(&(bm - sw * c(sgn, 0.0))));
                    }
                }
            }
            _ => panic!("structure checks support nb <= 2"),
        }
    }
    out.real /= scale;
    out.even /= scale;
    out.reversible /= scale;
    out
}

/// Complexification `(eta, psi) -> (h, hbar) = (eta + i psi, eta - i psi)`.
pub fn complex_coords(n: usize) -> (CMat, CMat) {
    let d = 2 * n + 1;
    let id = CMat::identity(d, d);
    let mut m = CMat::zeros(2 * d, 2 * d);
    let mut mi = CMat::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&id);
    m.view_mut((0, d), (d, d)).copy_from(&(&id * c(0.0, 1.0)));
    m.view_mut((d, 0), (d, d)).copy_from(&id);
    m.view_mut((d, d), (d, d)).copy_from(&(&id * c(0.0, -1.0)));
    mi.view_mut((0, 0), (d, d)).copy_from(&(&id * c(0.5, 0.0)));
    mi.view_mut((0, d), (d, d)).copy_from(&(&id * c(0.5, 0.0)));
    mi.view_mut((d, 0), (d, d)).copy_from(&(&id * c(0.0, -0.5)));
    mi.view_mut((d, d), (d, d)).copy_from(&(&id * c(0.0, 0.5)));
    (m, mi)
}
