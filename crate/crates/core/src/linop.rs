//! Linear water-wave frequencies, standing waves, the action-angle embedding
//! of the tangential sites and the linearized operator at a torus.
//!
//! Operators are stored as the angle-dependent part `M(phi)` of
//! `L = omega.d_phi I_2 + M(phi)`, as a collocation [`Family`] of 2x2 block
//! matrices acting on `(eta_hat, psi_hat)`.

use crate::dn;
use crate::error::{Error, Result};
use crate::family::{self, dx_matrix, mult_matrix, Coords, Family, StructureDefects, Symmetry};
use crate::grid::{Grid, GridFn};
use crate::linalg::{self, c, CMat, C64};
use crate::operator::{BlockOperator, LinearOperator};
use crate::spectral::Truncation;
use serde::Serialize;
use std::f64::consts::PI;

/// `omega_j(kappa) = sqrt(j (1 + kappa j^2))`.
pub fn linear_frequency(j: f64, kappa: f64) -> f64 {
    (j * (1.0 + kappa * j * j)).sqrt()
}

/// `x_j = j^2 / (2 (1 + kappa j^2))`, the logarithmic kappa-derivative of `omega_j`.
pub fn x_coefficient(j: f64, kappa: f64) -> f64 {
    j * j / (2.0 * (1.0 + kappa * j * j))
}

fn double_factorial_odd(r: usize) -> f64 {
    // (2r - 3)!! with the conventions (-1)!! = 1 and r = 0 unused
    let mut acc = 1.0;
    let mut k = 2 * r as i64 - 3;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Closed form `d_kappa^r omega_j = (-1)^{r+1} (2r-3)!! omega_j x_j^r`; `r = 0` is `omega_j`.
pub fn d_kappa_frequency(j: f64, kappa: f64, r: usize) -> f64 {
    let w = linear_frequency(j, kappa);
    if r == 0 {
        return w;
    }
    let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
    sign * double_factorial_odd(r) * w * x_coefficient(j, kappa).powi(r as i32)
}

/// Tangential sites and surface tension; the frequencies follow in closed form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencySet {
    pub s_plus: Vec<usize>,
    pub kappa: f64,
}

impl FrequencySet {
    pub fn new(s_plus: &[usize], kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::Domain(format!("kappa = {kappa} must be positive")));
        }
        let mut s = s_plus.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() || s[0] == 0 || s.len() != s_plus.len() {
            return Err(Error::Domain(format!("tangential sites {s_plus:?} must be distinct positive integers")));
        }
        Ok(FrequencySet { s_plus: s, kappa })
    }

    pub fn nu(&self) -> usize {
        self.s_plus.len()
    }

    pub fn omega_j(&self, j: usize) -> f64 {
        linear_frequency(j as f64, self.kappa)
    }

    /// Tangential frequency vector `(omega_j)_{j in S+}`.
    pub fn tangential(&self) -> Vec<f64> {
        self.s_plus.iter().map(|&j| self.omega_j(j)).collect()
    }

    pub fn is_tangential(&self, j: i64) -> bool {
        self.s_plus.contains(&(j.unsigned_abs() as usize))
    }

    /// `j` in `S0 = S+ u (-S+) u {0}`.
    pub fn in_s0(&self, j: i64) -> bool {
        j == 0 || self.is_tangential(j)
    }

    /// Normal sites `1 <= j <= n` outside `S+`.
    pub fn normal_sites(&self, n: usize) -> Vec<usize> {
        (1..=n).filter(|j| !self.s_plus.contains(j)).collect()
    }

    /// Normal frequencies `Omega_j` for the sites of [`Self::normal_sites`].
    pub fn normal(&self, n: usize) -> Vec<(usize, f64)> {
        self.normal_sites(n).into_iter().map(|j| (j, self.omega_j(j))).collect()
    }

    pub fn d_kappa(&self, j: usize, r: usize) -> f64 {
        d_kappa_frequency(j as f64, self.kappa, r)
    }
}

pub fn linear_frequencies(s_plus: &[usize], kappa: f64) -> Result<FrequencySet> {
    FrequencySet::new(s_plus, kappa)
}

// ---------------------------------------------------------------------------
// standing waves and energies

fn cosine_coeffs(n: usize, amps: impl Fn(usize) -> f64) -> Vec<C64> {
    let mut v = vec![c(0.0, 0.0); 2 * n + 1];
    for j in 1..=n {
        let a = amps(j);
        v[n + j] = c(a / 2.0, 0.0);
        v[n - j] = c(a / 2.0, 0.0);
    }
    v
}

/// Linear standing wave at time `t`: coefficients of `(eta, psi)` on `|k| <= n`.
/// `amplitudes` lists `(j, xi_j)`.
pub fn standing_wave(amplitudes: &[(usize, f64)], kappa: f64, t: f64, n: usize) -> Result<(Vec<C64>, Vec<C64>)> {
    for &(j, xi) in amplitudes {
        if !(xi > 0.0) || j == 0 || j > n {
            return Err(Error::Domain(format!("amplitude xi_{j} = {xi} not admissible for n = {n}")));
        }
    }
    let amp = |j: usize, f: &dyn Fn(f64, f64) -> f64| -> f64 {
        amplitudes.iter().filter(|(k, _)| *k == j).map(|(_, xi)| f(xi.sqrt(), linear_frequency(j as f64, kappa))).sum()
    };
    let eta = cosine_coeffs(n, |j| amp(j, &|s, w| s * (w * t).cos()));
    let psi = cosine_coeffs(n, |j| amp(j, &|s, w| -s * w * (w * t).sin() / j as f64));
    Ok((eta, psi))
}

/// The standing wave as a function on the torus `phi_i = omega_{j_i} t`, scaled by `eps`.
pub fn standing_wave_torus(freq: &FrequencySet, xi: &[f64], eps: f64, grid: Grid) -> (GridFn, GridFn) {
    assert_eq!(grid.nu, freq.nu());
    let s = &freq.s_plus;
    let eta = GridFn::from_fn(grid, |phi, x| {
        eps * s.iter().enumerate().map(|(i, &j)| xi[i].sqrt() * phi[i].cos() * (j as f64 * x).cos()).sum::<f64>()
    });
    let psi = GridFn::from_fn(grid, |phi, x| {
        -eps * s
            .iter()
            .enumerate()
            .map(|(i, &j)| xi[i].sqrt() * freq.omega_j(j) / j as f64 * phi[i].sin() * (j as f64 * x).cos())
            .sum::<f64>()
    });
    (eta, psi)
}

/// Quadratic energy `(1/2)<psi, |D| psi> + (1/2) int eta^2 + (kappa/2) int eta_x^2`.
pub fn linear_hamiltonian(eta: &[C64], psi: &[C64], kappa: f64) -> f64 {
    let n = (eta.len() - 1) / 2;
    let mut h = 0.0;
    for (r, (e, p)) in eta.iter().zip(psi).enumerate() {
        let j = (r as i64 - n as i64).abs() as f64;
        h += 0.5 * j * p.norm_sqr() + 0.5 * (1.0 + kappa * j * j) * e.norm_sqr();
    }
    2.0 * PI * h
}

pub use crate::dn::hamiltonian;

// ---------------------------------------------------------------------------
// action-angle embedding

/// `Lambda_j = sqrt(j / (1 + kappa j^2))`.
pub fn lambda_j(j: usize, kappa: f64) -> f64 {
    (j as f64 / (1.0 + kappa * (j * j) as f64)).sqrt()
}

/// Embedded torus at one angle point: coefficients of `(eta, psi)` on
/// `|k| <= n`, with the normal part `z` added (it must vanish on `S0`).
pub fn embed_torus(
    theta: &[f64],
    actions: &[f64],
    z: (&[C64], &[C64]),
    xi: &[f64],
    freq: &FrequencySet,
    n: usize,
) -> Result<(Vec<C64>, Vec<C64>)> {
    let nu = freq.nu();
    if theta.len() != nu || actions.len() != nu || xi.len() != nu {
        return Err(Error::Dimension(format!("embedding expects {nu} angles, actions and amplitudes")));
    }
    if z.0.len() != 2 * n + 1 || z.1.len() != 2 * n + 1 {
        return Err(Error::Dimension("normal part must live on |k| <= n".into()));
    }
    for (k, (s, i)) in xi.iter().zip(actions).enumerate() {
        if !(s + i > 0.0) {
            return Err(Error::Domain(format!("xi + I = {} at site {} must be positive", s + i, freq.s_plus[k])));
        }
    }
    for k in -(n as i64)..=(n as i64) {
        let r = (k + n as i64) as usize;
        if freq.in_s0(k) && (z.0[r].norm() > 0.0 || z.1[r].norm() > 0.0) {
            return Err(Error::Domain(format!("normal part has a nonzero mode on S0 at k = {k}")));
        }
    }
    let mut eta = z.0.to_vec();
    let mut psi = z.1.to_vec();
    let pref = (2.0 / PI).sqrt();
    for (i, &j) in freq.s_plus.iter().enumerate() {
        if j > n {
            return Err(Error::Dimension(format!("site {j} outside |k| <= {n}")));
        }
        let lam = lambda_j(j, freq.kappa);
        let amp = pref * (xi[i] + actions[i]).sqrt();
        let ej = amp * lam.sqrt() * theta[i].cos();
        let pj = amp / lam.sqrt() * theta[i].sin();
        for r in [n + j, n - j] {
            eta[r] += c(ej / 2.0, 0.0);
            psi[r] += c(pj / 2.0, 0.0);
        }
    }
    Ok((eta, psi))
}

/// Reads `(theta, I)` back from the tangential coefficients of `(eta, psi)`.
pub fn read_action_angle(eta: &[C64], psi: &[C64], xi: &[f64], freq: &FrequencySet) -> (Vec<f64>, Vec<f64>) {
    let n = (eta.len() - 1) / 2;
    let mut theta = vec![];
    let mut actions = vec![];
    for (i, &j) in freq.s_plus.iter().enumerate() {
        let lam = lambda_j(j, freq.kappa);
        let ej = (eta[n + j] + eta[n - j]).re;
        let pj = (psi[n + j] + psi[n - j]).re;
        let a = ej / lam.sqrt();
        let b = pj * lam.sqrt();
        theta.push(b.atan2(a));
        actions.push(PI / 2.0 * (a * a + b * b) - xi[i]);
    }
    (theta, actions)
}

/// Embedded torus `theta = phi, I = 0, z = 0` on a grid, scaled by `eps`.
/// The linear flow in these variables is `theta' = -omega`; use
/// [`standing_wave_torus`] for a torus travelled at `+omega`.
pub fn torus_on_grid(freq: &FrequencySet, xi: &[f64], eps: f64, grid: Grid) -> (GridFn, GridFn) {
    assert_eq!(grid.nu, freq.nu());
    let pref = (2.0 / PI).sqrt();
    let terms: Vec<(f64, f64, f64)> = freq
        .s_plus
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let lam = lambda_j(j, freq.kappa);
            (j as f64, pref * xi[i].sqrt() * lam.sqrt(), pref * xi[i].sqrt() / lam.sqrt())
        })
        .collect();
    let t1 = terms.clone();
    let eta = GridFn::from_fn(grid, move |phi, x| {
        eps * t1.iter().enumerate().map(|(i, (j, a, _))| a * phi[i].cos() * (j * x).cos()).sum::<f64>()
    });
    let psi = GridFn::from_fn(grid, move |phi, x| {
        eps * terms.iter().enumerate().map(|(i, (j, _, b))| b * phi[i].sin() * (j * x).cos()).sum::<f64>()
    });
    (eta, psi)
}

/// `true` on the modes `|j| <= n` outside `S0`.
pub fn normal_mask(n: usize, freq: &FrequencySet) -> Vec<bool> {
    (-(n as i64)..=(n as i64)).map(|j| !freq.in_s0(j)).collect()
}

/// Zero the rows and columns of the `S0` modes in every block.
pub fn mask_normal(f: &Family, freq: &FrequencySet) -> Family {
    let d = 2 * f.n + 1;
    let mask = normal_mask(f.n, freq);
    f.map(|_, a| {
        let mut b = a.clone();
        for r in 0..b.nrows() {
            for s in 0..b.ncols() {
                if !mask[r % d] || !mask[s % d] {
                    b[(r, s)] = c(0.0, 0.0);
                }
            }
        }
        b
    })
}

// ---------------------------------------------------------------------------
// linearized operator

/// Linearized operator at a torus `(eta, psi)`, with its coefficient fields.
#[derive(Clone, Debug)]
pub struct LinearizedWW {
    pub omega: Vec<f64>,
    pub kappa: f64,
    /// angle-dependent part `M(phi)` on `(eta_hat, psi_hat)`
    pub family: Family,
    pub dn: Family,
    pub eta: GridFn,
    pub psi: GridFn,
    pub b: GridFn,
    pub v: GridFn,
    pub c: GridFn,
    pub conformal_residual: f64,
}

/// Samples of `B`, `V` on the grid of `eta`, slice by slice.
pub fn surface_velocity_fields(eta: &GridFn, psi: &GridFn) -> Result<(GridFn, GridFn)> {
    let grid = eta.grid;
    let h = (grid.m_x - 1) / 2;
    let mut bd = Vec::with_capacity(grid.len());
    let mut vd = Vec::with_capacity(grid.len());
    for g in 0..grid.n_slices() {
        let (b, v) = dn::surface_velocities(&eta.x_coeffs(g, h), &psi.x_coeffs(g, h), grid.m_x)?;
        bd.extend(b);
        vd.extend(v);
    }
    Ok((GridFn { grid, data: bd }, GridFn { grid, data: vd }))
}

pub fn assemble_linearized(eta: &GridFn, psi: &GridFn, kappa: f64, omega: &[f64], n: usize) -> Result<LinearizedWW> {
    if eta.grid != psi.grid {
        return Err(Error::Dimension("eta and psi on different grids".into()));
    }
    if omega.len() != eta.grid.nu {
        return Err(Error::Dimension(format!("omega has {} components, grid nu = {}", omega.len(), eta.grid.nu)));
    }
    let grid = eta.grid;
    let dnop = dn::dn_operator(eta, n)?;
    let (b, v) = surface_velocity_fields(eta, psi)?;
    let ex = eta.dx();
    let cc = ex.map(|e| (1.0 + e * e).powf(-1.5));
    let one_bvx = b.mul(&v.dx()).map(|z| 1.0 + z);
    let dxm = dx_matrix(n);
    let kap = c(kappa, 0.0);
    let mats = (0..grid.n_slices())
        .map(|g| {
            let gm = &dnop.family.mats[g];
            let mb = mult_matrix(b.slice(g), n);
            let mv = mult_matrix(v.slice(g), n);
            let mc = mult_matrix(cc.slice(g), n);
            let m1 = mult_matrix(one_bvx.slice(g), n);
            let gb = linalg::mul(gm, &mb);
            let bg = linalg::mul(&mb, gm);
            let l11 = linalg::mul(&dxm, &mv) + &gb;
            let l12 = -gm.clone();
            let l21 = m1 + linalg::mul(&mb, &gb) - linalg::mul3(&dxm, &mc, &dxm) * kap;
            let l22 = linalg::mul(&mv, &dxm) - bg;
            let d = 2 * n + 1;
            let mut m = CMat::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&l11);
            m.view_mut((0, d), (d, d)).copy_from(&l12);
            m.view_mut((d, 0), (d, d)).copy_from(&l21);
            m.view_mut((d, d), (d, d)).copy_from(&l22);
            m
        })
        .collect();
    Ok(LinearizedWW {
        omega: omega.to_vec(),
        kappa,
        family: Family { grid, nb: 2, n, mats },
        conformal_residual: dnop.residual(),
        dn: dnop.family,
        eta: eta.clone(),
        psi: psi.clone(),
        b,
        v,
        c: cc,
    })
}

/// Flat block `[[0, -|D|], [1 - kappa d_xx, 0]]` on `|j| <= n`.
pub fn flat_block(kappa: f64, n: usize) -> CMat {
    let d = 2 * n + 1;
    let mut m = CMat::zeros(2 * d, 2 * d);
    for r in 0..d {
        let j = (r as i64 - n as i64) as f64;
        m[(r, d + r)] = c(-j.abs(), 0.0);
        m[(d + r, r)] = c(1.0 + kappa * j * j, 0.0);
    }
    m
}

/// Orthonormal basis of the `x`-even subspace of a pair, `cos(jx)` for `0 <= j <= n`.
pub fn even_basis(n: usize) -> CMat {
    let d = 2 * n + 1;
    let mut e = CMat::zeros(2 * d, 2 * (n + 1));
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for b in 0..2 {
        e[(b * d + n, b * (n + 1))] = c(1.0, 0.0);
        for j in 1..=n {
            e[(b * d + n + j, b * (n + 1) + j)] = c(h, 0.0);
            e[(b * d + n - j, b * (n + 1) + j)] = c(h, 0.0);
        }
    }
    e
}

impl LinearizedWW {
    pub fn grid(&self) -> Grid {
        self.family.grid
    }

    pub fn n(&self) -> usize {
        self.family.n
    }

    pub fn structure(&self) -> StructureDefects {
        family::structure_defects(&self.family, Coords::Real, Symmetry::Reversible)
    }

    /// Dense operator on the `(l, j)` box including `omega.d_phi`.
    pub fn to_block_operator(&self, k_phi: usize) -> Result<BlockOperator> {
        let t = Truncation { nu: self.grid().nu, k_phi, n_x: self.n() };
        let mut op = BlockOperator::from_family(&self.family, t)?;
        let od = LinearOperator::omega_dphi(t, &self.omega);
        op.blocks[0].mat += &od.mat;
        op.blocks[3].mat += &od.mat;
        Ok(op)
    }

    /// Angle-independent flat part would be [`flat_block`]; this returns the
    /// largest deviation of the family from it, per slice.
    pub fn deviation_from_flat(&self) -> f64 {
        let f = flat_block(self.kappa, self.n());
        self.family.mats.iter().map(|m| linalg::max_abs(&(m - &f))).fold(0.0, f64::max)
    }
}
