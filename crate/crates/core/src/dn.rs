//! Dirichlet-Neumann operator of the infinite-depth fluid below `y = eta(x)`,
//! built from the conformal parametrization `X -> X + p(X)`.
//!
//! One-dimensional routines take centred coefficient vectors `u[k + n]`,
//! `|k| <= n`; field routines act per angle collocation point.

use crate::error::{Error, Result};
use crate::family::{composition_matrix, dx_matrix, hilbert_matrix, multiplier, restrict, Family};
use crate::fourier::{coeffs_1d, eval_1d, samples_to_modes};
use crate::grid::{Grid, GridFn};
use crate::linalg::{self, c, CMat, CVec, C64};
use crate::spectral::{Truncation, TorusField};
use std::f64::consts::PI;

pub const CONFORMAL_TOL: f64 = 1e-11;

/// Conformal correction of one profile.
#[derive(Clone, Debug)]
pub struct Conformal1d {
    /// coefficients of `p` on `|k| <= (m - 1)/2`
    pub p: Vec<C64>,
    /// solver grid size (odd)
    pub m: usize,
    pub c: f64,
    pub residual: f64,
    pub history: Vec<f64>,
    /// mean ratio of successive residuals
    pub contraction: f64,
}

impl Conformal1d {
    pub fn samples(&self) -> Vec<f64> {
        (0..self.m).map(|i| eval_1d(&self.p, x_at(i, self.m)).re).collect()
    }

    /// `||p_XX||_{L^2}` and the smallness bound `1/(2 sqrt(2 pi))`.
    pub fn pxx_l2(&self) -> (f64, f64) {
        let h = (self.m - 1) / 2;
        let n: f64 = self
            .p
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let k = i as f64 - h as f64;
                v.norm_sqr() * k.powi(4)
            })
            .sum::<f64>()
            * 2.0
            * PI;
        (n.sqrt(), 1.0 / (2.0 * (2.0 * PI).sqrt()))
    }
}

fn x_at(i: usize, m: usize) -> f64 {
    2.0 * PI * i as f64 / m as f64
}

fn cut_of(u: &[C64]) -> usize {
    (u.len() - 1) / 2
}

fn s_norm(co: &[C64], s: f64) -> f64 {
    let h = cut_of(co) as i64;
    co.iter()
        .enumerate()
        .map(|(i, v)| v.norm_sqr() * ((i as i64 - h).abs().max(1) as f64).powf(2.0 * s))
        .sum::<f64>()
        .sqrt()
}

fn dx_coeffs(u: &[C64]) -> Vec<C64> {
    let h = cut_of(u) as f64;
    u.iter().enumerate().map(|(i, v)| v * c(0.0, i as f64 - h)).collect()
}

fn hilbert_coeffs(u: &[C64]) -> Vec<C64> {
    let h = cut_of(u) as i64;
    u.iter().enumerate().map(|(i, v)| v * c(0.0, -((i as i64 - h).signum() as f64))).collect()
}

fn samples_of(u: &[C64], m: usize) -> Vec<f64> {
    (0..m).map(|i| eval_1d(u, x_at(i, m)).re).collect()
}

fn coeffs_of(s: &[f64], cut: usize) -> Vec<C64> {
    let z: Vec<C64> = s.iter().map(|v| c(*v, 0.0)).collect();
    coeffs_1d(&z, cut)
}

/// Pad or crop a centred coefficient vector to `|k| <= n`.
pub fn resize(u: &[C64], n: usize) -> Vec<C64> {
    let h = cut_of(u) as i64;
    (-(n as i64)..=(n as i64))
        .map(|k| if k.abs() <= h { u[(k + h) as usize] } else { c(0.0, 0.0) })
        .collect()
}

/// Solver grid for profiles with `cut` modes (odd, well oversampled).
pub fn solver_grid(cut: usize) -> usize {
    (16 * cut + 1).max(129)
}

/// Samples of `eta(X + p(X))` on `m` points.
fn composed_profile(eta: &[C64], p: &[C64], m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let x = x_at(i, m);
            eval_1d(eta, x + eval_1d(p, x).re).re
        })
        .collect()
}

/// One fixed-point update `p -> H[eta(X + p(X))]` (coefficients on the
/// `m`-point grid).
pub fn conformal_step(eta: &[C64], p: &[C64], m: usize) -> Vec<C64> {
    hilbert_coeffs(&coeffs_of(&composed_profile(eta, p, m), (m - 1) / 2))
}

/// Fixed point `p = H[eta(X + p(X))]` on `m` collocation points.
pub fn solve_conformal_1d(eta: &[C64], m: usize, tol: f64, max_iter: usize) -> Result<Conformal1d> {
    assert!(m % 2 == 1);
    let h = (m - 1) / 2;
    let lip = samples_of(&dx_coeffs(eta), m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if lip >= 0.5 {
        return Err(Error::Precondition(format!("sup|eta_x| = {lip:.3e} >= 1/2: no contraction estimate")));
    }
    let compose = |p: &[C64]| composed_profile(eta, p, m);
    let mut p = vec![c(0.0, 0.0); 2 * h + 1];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let comp = compose(&p);
        let next = hilbert_coeffs(&coeffs_of(&comp, h));
        let diff: Vec<C64> = p.iter().zip(&next).map(|(a, b)| a - b).collect();
        let r = s_norm(&diff, 2.0);
        history.push(r);
        if r < tol {
            let mean = comp.iter().sum::<f64>() / m as f64;
            let contraction = contraction_of(&history);
            return Ok(Conformal1d { p, m, c: mean, residual: r, history, contraction });
        }
        let k = history.len();
        if k > 5 && history[k - 1] >= history[k - 6] {
            return Err(Error::Convergence(history));
        }
        p = next;
    }
    Err(Error::Convergence(history))
}

fn contraction_of(h: &[f64]) -> f64 {
    let ratios: Vec<f64> = h.windows(2).filter(|w| w[0] > 0.0 && w[1] > 0.0).map(|w| w[1] / w[0]).collect();
    if ratios.is_empty() {
        0.0
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Displacement `q` with `x -> x + q(x)` inverse to `X -> X + p(X)`.
fn inverse_displacement(map: &Conformal1d) -> Result<Vec<C64>> {
    let g = GridFn { grid: Grid::new(1, 1, map.m), data: map.samples() };
    let q = g.inverse_diffeo_x()?;
    Ok(coeffs_of(&q.data, (map.m - 1) / 2))
}

/// `G(eta) = d_x P^{-1} H P` on `|j| <= n` together with the conformal map.
pub fn dn_matrix(eta: &[C64], n: usize) -> Result<(CMat, Conformal1d)> {
    let cut = cut_of(eta).max(n);
    let m = solver_grid(cut);
    let map = solve_conformal_1d(eta, m, CONFORMAL_TOL, 60)?;
    if map.p.iter().all(|v| *v == c(0.0, 0.0)) {
        return Ok((multiplier(n, |j| c(j.abs() as f64, 0.0)), map));
    }
    let q = inverse_displacement(&map)?;
    let ni = 2 * n + 8;
    let fw = composition_matrix(&map.p, ni, ni, m);
    let bw = composition_matrix(&q, ni, ni, m);
    let h = hilbert_matrix(ni);
    let inner = linalg::mul3(&bw, &h, &fw) - &h;
    let r = linalg::mul(&dx_matrix(ni), &inner);
    let g = multiplier(n, |j| c(j.abs() as f64, 0.0)) + restrict(&r, ni, n);
    Ok((g, map))
}

/// `G(eta) psi` for a real profile `psi` (cutoff of `psi` kept).
pub fn dn_apply_1d(eta: &[C64], psi: &[C64]) -> Result<Vec<C64>> {
    let n = cut_of(psi).max(cut_of(eta));
    let (g, _) = dn_matrix(eta, n)?;
    let v = g * CVec::from_vec(resize(psi, n));
    Ok(resize(v.as_slice(), cut_of(psi)))
}

/// `R_G = G(eta) - |D|` from the matrix and from the kernel quadrature.
#[derive(Clone, Debug)]
pub struct DnRemainder {
    pub matrix: CMat,
    pub kernel: CMat,
    /// `||<D>^{s0} (matrix - kernel) <D>^{-s0}||_op`
    pub agreement: f64,
}

/// Kernel `K_G(x, z) = -(1/pi) d_x d_z log(1 + g)` with
/// `1 + g = sin((w + q(x) - q(z))/2) / sin(w/2)`, `w = x - z`, quantized by
/// the trapezoid rule on `4n` points per variable.
pub fn dn_remainder(eta: &[C64], n: usize) -> Result<DnRemainder> {
    let (g, map) = dn_matrix(eta, n)?;
    let matrix = g - multiplier(n, |j| c(j.abs() as f64, 0.0));
    let q = inverse_displacement(&map)?;
    let mk = 4 * n;
    let qs: Vec<f64> = (0..mk).map(|i| eval_1d(&q, 2.0 * PI * i as f64 / mk as f64).re).collect();
    let dq: Vec<f64> = (0..mk).map(|i| eval_1d(&dx_coeffs(&q), 2.0 * PI * i as f64 / mk as f64).re).collect();
    let mut f = Vec::with_capacity(mk * mk);
    for a in 0..mk {
        for b in 0..mk {
            let v = if a == b {
                (1.0 + dq[a]).ln()
            } else {
                let w = 2.0 * PI * (a as f64 - b as f64) / mk as f64;
                ((0.5 * (w + qs[a] - qs[b])).sin() / (0.5 * w).sin()).ln()
            };
            f.push(c(v, 0.0));
        }
    }
    let fh = samples_to_modes(&f, &[mk, mk], &[n, n]);
    let d = 2 * n + 1;
    let kernel = CMat::from_fn(d, d, |r, s| {
        let (j, jp) = (r as i64 - n as i64, s as i64 - n as i64);
        // F^(j, -j') sits at row j, column -j' of the box
        let idx = r * d + (n as i64 - jp) as usize;
        fh[idx] * (-2.0 * j as f64 * jp as f64)
    });
    let w = |j: i64| (j.abs().max(1) as f64).powf(2.0);
    let diff = CMat::from_fn(d, d, |r, s| {
        (matrix[(r, s)] - kernel[(r, s)]) * w(r as i64 - n as i64) / w(s as i64 - n as i64)
    });
    Ok(DnRemainder { matrix, kernel, agreement: linalg::op_norm(&diff) })
}

/// `G'(eta)[eta_hat] psi = -G(eta)(B eta_hat) - d_x(V eta_hat)`.
pub fn dn_shape_derivative(eta: &[C64], eta_hat: &[C64], psi: &[C64]) -> Result<Vec<C64>> {
    let n = cut_of(psi).max(cut_of(eta)).max(cut_of(eta_hat));
    let m = solver_grid(n);
    let n2 = 2 * n;
    let (g, _) = dn_matrix(eta, n2)?;
    let psi2 = resize(psi, n2);
    let gpsi = (&g * CVec::from_vec(psi2.clone())).as_slice().to_vec();
    let (ex, px, gp) = (samples_of(&dx_coeffs(eta), m), samples_of(&dx_coeffs(&psi2), m), samples_of(&gpsi, m));
    let bb: Vec<f64> = (0..m).map(|i| (ex[i] * px[i] + gp[i]) / (1.0 + ex[i] * ex[i])).collect();
    let vv: Vec<f64> = (0..m).map(|i| px[i] - bb[i] * ex[i]).collect();
    let eh = samples_of(eta_hat, m);
    let b_eh = coeffs_of(&bb.iter().zip(&eh).map(|(a, b)| a * b).collect::<Vec<_>>(), n2);
    let v_eh = coeffs_of(&vv.iter().zip(&eh).map(|(a, b)| a * b).collect::<Vec<_>>(), n2);
    let t1 = &g * CVec::from_vec(b_eh);
    let t2 = dx_coeffs(&v_eh);
    let out: Vec<C64> = t1.iter().zip(&t2).map(|(a, b)| -a - b).collect();
    Ok(resize(&out, cut_of(psi)))
}

/// `B` and `V` of a surface state (samples on `m` points).
pub fn surface_velocities(eta: &[C64], psi: &[C64], m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cut_of(psi).max(cut_of(eta));
    let (g, _) = dn_matrix(eta, n)?;
    let gpsi = (&g * CVec::from_vec(resize(psi, n))).as_slice().to_vec();
    let (ex, px, gp) = (samples_of(&dx_coeffs(eta), m), samples_of(&dx_coeffs(psi), m), samples_of(&gpsi, m));
    let bb: Vec<f64> = (0..m).map(|i| (ex[i] * px[i] + gp[i]) / (1.0 + ex[i] * ex[i])).collect();
    let vv: Vec<f64> = (0..m).map(|i| px[i] - bb[i] * ex[i]).collect();
    Ok((bb, vv))
}

/// `(1/2)<psi, G psi> + int eta^2/2 + kappa int (sqrt(1 + eta_x^2) - 1)`,
/// integrals over one period.
pub fn hamiltonian(eta: &[C64], psi: &[C64], kappa: f64) -> Result<f64> {
    let n = cut_of(psi).max(cut_of(eta));
    let (g, _) = dn_matrix(eta, n)?;
    let p = CVec::from_vec(resize(psi, n));
    let gp = &g * &p;
    let kinetic = 0.5 * 2.0 * PI * p.iter().zip(gp.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
    let potential = PI * eta.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let m = solver_grid(n);
    let ex = samples_of(&dx_coeffs(eta), m);
    let surface = kappa * 2.0 * PI / m as f64 * ex.iter().map(|v| (1.0 + v * v).sqrt() - 1.0).sum::<f64>();
    Ok(kinetic + potential + surface)
}

// ---------------------------------------------------------------------------
// fields on the torus

/// Conformal maps of every angle slice of a surface field.
#[derive(Clone, Debug)]
pub struct ConformalMap {
    pub p: TorusField,
    /// `c` per angle collocation point
    pub c: Vec<f64>,
    pub residual: f64,
    pub contraction: f64,
}

/// Angle collocation grid used by the field routines (twice oversampled).
pub fn field_grid(t: Truncation) -> Grid {
    Grid::new(t.nu, 4 * t.k_phi + 1, 4 * t.n_x + 1)
}

fn slice_coeffs(u: &TorusField, phi: &[f64]) -> Vec<C64> {
    let n = u.trunc.n_x as i64;
    let mut out = vec![c(0.0, 0.0); u.trunc.x_count()];
    for (l, j, v) in u.modes() {
        let a: f64 = l.iter().zip(phi).map(|(a, b)| *a as f64 * b).sum();
        out[(j + n) as usize] += v * C64::new(a.cos(), a.sin());
    }
    out
}

/// Reassemble per-slice coefficient vectors into a field.
fn from_slices(t: Truncation, grid: Grid, slices: &[Vec<C64>]) -> TorusField {
    let nx = t.x_count();
    // angle analysis by DFT over slices, one x-mode at a time
    let mut out = TorusField::zeros(t);
    let shape = grid.phi_shape();
    for k in 0..nx {
        let col: Vec<C64> = slices.iter().map(|s| s[k]).collect();
        let co = samples_to_modes(&col, &shape, &vec![t.k_phi; t.nu]);
        for (p, v) in co.iter().enumerate() {
            out.coeffs[p * nx + k] = *v;
        }
    }
    out
}

pub fn solve_conformal(eta: &TorusField, tol: f64, max_iter: usize) -> Result<ConformalMap> {
    let grid = field_grid(eta.trunc);
    let n = eta.trunc.n_x;
    let m = solver_grid(n);
    let mut ps = Vec::new();
    let (mut cs, mut res, mut con) = (Vec::new(), 0.0f64, 0.0f64);
    for g in 0..grid.n_slices() {
        let map = solve_conformal_1d(&slice_coeffs(eta, &grid.phi_point(g)), m, tol, max_iter)?;
        ps.push(resize(&map.p, n));
        cs.push(map.c);
        res = res.max(map.residual);
        con = con.max(map.contraction);
    }
    Ok(ConformalMap { p: from_slices(eta.trunc, grid, &ps), c: cs, residual: res, contraction: con })
}

/// `G(eta) psi` slice by slice.
pub fn dn_apply(eta: &TorusField, psi: &TorusField) -> Result<TorusField> {
    if eta.trunc != psi.trunc {
        return Err(Error::Dimension("eta and psi truncations differ".into()));
    }
    let grid = field_grid(psi.trunc);
    let mut out = Vec::new();
    for g in 0..grid.n_slices() {
        let phi = grid.phi_point(g);
        out.push(dn_apply_1d(&slice_coeffs(eta, &phi), &slice_coeffs(psi, &phi))?);
    }
    Ok(from_slices(psi.trunc, grid, &out))
}

/// Dirichlet-Neumann family on a collocation grid.
#[derive(Clone, Debug)]
pub struct DNOperator {
    pub family: Family,
    pub maps: Vec<Conformal1d>,
}

impl DNOperator {
    pub fn residual(&self) -> f64 {
        self.maps.iter().fold(0.0, |a, m| a.max(m.residual))
    }
}

pub fn dn_operator(eta: &GridFn, n: usize) -> Result<DNOperator> {
    let grid = eta.grid;
    let h = (grid.m_x - 1) / 2;
    let mut mats = Vec::new();
    let mut maps = Vec::new();
    for g in 0..grid.n_slices() {
        let (m, map) = dn_matrix(&eta.x_coeffs(g, h), n)?;
        mats.push(m);
        maps.push(map);
    }
    Ok(DNOperator { family: Family { grid, nb: 1, n, mats }, maps })
}

/// Diagnostics of an assembled DN matrix.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DnDiagnostics {
    pub residual: f64,
    pub selfadjoint_defect: f64,
    pub kernel_defect: f64,
    pub min_eigenvalue: f64,
    pub tail_decay: f64,
    pub contraction: f64,
}

pub fn diagnostics(eta: &[C64], n: usize) -> Result<(CMat, DnDiagnostics)> {
    let (g, map) = dn_matrix(eta, n)?;
    let sa = linalg::max_abs(&(&g - g.adjoint()));
    let d = 2 * n + 1;
    let one = CVec::from_fn(d, |r, _| if r == n { c(1.0, 0.0) } else { c(0.0, 0.0) });
    let k1 = (&g * &one).iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let k2 = (g.adjoint() * &one).iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let herm = (&g + g.adjoint()) * c(0.5, 0.0);
    let min_ev = linalg::hermitian_eigenvalues(&herm).into_iter().fold(f64::INFINITY, f64::min);
    let r = dn_remainder(eta, n)?;
    let half = n / 2;
    let tail = (0..d)
        .filter(|&s| s as i64 - n as i64 == half as i64 || s as i64 - n as i64 == -(half as i64))
        .flat_map(|s| (0..d).map(move |rr| (rr, s)))
        .chain((0..d).filter(|&rr| (rr as i64 - n as i64).unsigned_abs() as usize == half).flat_map(|rr| (0..d).map(move |s| (rr, s))))
        .fold(0.0f64, |a, (rr, s)| a.max(r.matrix[(rr, s)].norm()));
    Ok((
        g,
        DnDiagnostics {
            residual: map.residual,
            selfadjoint_defect: sa,
            kernel_defect: k1.max(k2),
            min_eigenvalue: min_ev,
            tail_decay: tail,
            contraction: map.contraction,
        },
    ))
}
