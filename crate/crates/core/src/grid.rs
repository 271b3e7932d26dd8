//! Real functions sampled on a uniform collocation grid of `T^nu x T`.
//!
//! Grids use odd point counts so trigonometric interpolation has no Nyquist
//! ambiguity and `phi -> -phi` maps grid points onto grid points.

use crate::error::{Error, Result};
use crate::fourier::{box_modes, eval_1d, fft_nd};
use crate::linalg::{c, C64};
use crate::spectral::{bracket_phi, dot, TorusField};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub nu: usize,
    pub m_phi: usize,
    pub m_x: usize,
}

impl Grid {
    pub fn new(nu: usize, m_phi: usize, m_x: usize) -> Self {
        assert!(m_phi % 2 == 1 && m_x % 2 == 1, "grid sizes must be odd");
        Grid { nu, m_phi, m_x }
    }

    pub fn n_slices(&self) -> usize {
        self.m_phi.pow(self.nu as u32)
    }

    pub fn len(&self) -> usize {
        self.n_slices() * self.m_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi_index(&self, mut g: usize) -> Vec<usize> {
        let mut idx = vec![0; self.nu];
        for d in (0..self.nu).rev() {
            idx[d] = g % self.m_phi;
            g /= self.m_phi;
        }
        idx
    }

    pub fn phi_point(&self, g: usize) -> Vec<f64> {
        self.phi_index(g).iter().map(|&i| 2.0 * PI * i as f64 / self.m_phi as f64).collect()
    }

    /// Slice index of `-phi_g`.
    pub fn phi_neg(&self, g: usize) -> usize {
        let idx = self.phi_index(g);
        idx.iter().fold(0, |acc, &i| acc * self.m_phi + (self.m_phi - i) % self.m_phi)
    }

    pub fn x_point(&self, m: usize) -> f64 {
        2.0 * PI * m as f64 / self.m_x as f64
    }

    pub fn phi_shape(&self) -> Vec<usize> {
        vec![self.m_phi; self.nu]
    }

    /// Largest resolved angle mode.
    pub fn k_phi(&self) -> usize {
        (self.m_phi - 1) / 2
    }

    /// Angle mode attached to FFT bin `g` (odd grids, symmetric range).
    pub fn phi_mode_of_bin(&self, g: usize) -> Vec<i64> {
        self.phi_index(g)
            .iter()
            .map(|&i| if i <= self.k_phi() { i as i64 } else { i as i64 - self.m_phi as i64 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFn {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl GridFn {
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for g in 0..grid.n_slices() {
            let phi = grid.phi_point(g);
            for m in 0..grid.m_x {
                data.push(f(&phi, grid.x_point(m)));
            }
        }
        GridFn { grid, data }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        GridFn { grid, data: vec![v; grid.len()] }
    }

    /// Real part of a field sampled on the grid.
    pub fn from_field(grid: Grid, u: &TorusField) -> Self {
        assert_eq!(grid.nu, u.trunc.nu);
        let s = u.to_samples(grid.m_phi, grid.m_x);
        GridFn { grid, data: s.iter().map(|z| z.re).collect() }
    }

    /// Projection onto a truncation box.
    pub fn to_field(&self, trunc: crate::spectral::Truncation) -> TorusField {
        let mut shape = self.grid.phi_shape();
        shape.push(self.grid.m_x);
        let s: Vec<C64> = self.data.iter().map(|v| c(*v, 0.0)).collect();
        TorusField::from_samples(trunc, &s, &shape)
    }

    pub fn slice(&self, g: usize) -> &[f64] {
        &self.data[g * self.grid.m_x..(g + 1) * self.grid.m_x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFn { grid: self.grid, data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn zip(&self, o: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, o.grid);
        GridFn { grid: self.grid, data: self.data.iter().zip(&o.data).map(|(a, b)| f(*a, *b)).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }

    pub fn mul(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a * b)
    }

    pub fn div(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a / b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Complex spectrum of the full grid function (normalized).
    fn spectrum(&self) -> Vec<C64> {
        let mut buf: Vec<C64> = self.data.iter().map(|v| c(*v, 0.0)).collect();
        let mut shape = self.grid.phi_shape();
        shape.push(self.grid.m_x);
        fft_nd(&mut buf, &shape, false);
        let n = buf.len() as f64;
        buf.iter_mut().for_each(|z| *z /= n);
        buf
    }

    fn from_spectrum(grid: Grid, mut buf: Vec<C64>) -> Self {
        let mut shape = grid.phi_shape();
        shape.push(grid.m_x);
        fft_nd(&mut buf, &shape, true);
        GridFn { grid, data: buf.iter().map(|z| z.re).collect() }
    }

    fn x_mode(&self, m: usize) -> i64 {
        let h = (self.grid.m_x - 1) / 2;
        if m <= h {
            m as i64
        } else {
            m as i64 - self.grid.m_x as i64
        }
    }

    /// Multiply the spectrum by `f(l, j)`.
    fn spectral_map(&self, f: impl Fn(&[i64], i64) -> C64) -> Self {
        let mut s = self.spectrum();
        let mx = self.grid.m_x;
        for g in 0..self.grid.n_slices() {
            let l = self.grid.phi_mode_of_bin(g);
            for m in 0..mx {
                s[g * mx + m] *= f(&l, self.x_mode(m));
            }
        }
        Self::from_spectrum(self.grid, s)
    }

    pub fn dx(&self) -> Self {
        self.spectral_map(|_, j| c(0.0, j as f64))
    }

    pub fn dxx(&self) -> Self {
        self.spectral_map(|_, j| c(-(j * j) as f64, 0.0))
    }

    /// Zero-mean antiderivative in `x`, slice by slice.
    pub fn dx_inv(&self) -> Self {
        self.spectral_map(|_, j| if j == 0 { c(0.0, 0.0) } else { c(0.0, -1.0 / j as f64) })
    }

    pub fn hilbert(&self) -> Self {
        self.spectral_map(|_, j| c(0.0, -(j.signum() as f64)))
    }

    pub fn omega_dphi(&self, omega: &[f64]) -> Self {
        self.spectral_map(|l, _| c(0.0, dot(omega, l)))
    }

    /// `(omega.d_phi)^{-1}` on the non-zero angle modes; fails on small divisors.
    pub fn omega_dphi_inv(&self, omega: &[f64], gamma: f64, tau: f64) -> Result<Self> {
        let mut bad = vec![];
        for g in 0..self.grid.n_slices() {
            let l = self.grid.phi_mode_of_bin(g);
            if l.iter().any(|x| *x != 0) {
                let d = dot(omega, &l);
                if d == 0.0 || d.abs() < gamma * bracket_phi(&l).powf(-tau) {
                    bad.push(l);
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::SmallDivisor(format!("|omega.l| below threshold for l in {bad:?}")));
        }
        Ok(self.spectral_map(|l, _| {
            if l.iter().all(|x| *x == 0) {
                c(0.0, 0.0)
            } else {
                c(0.0, -1.0 / dot(omega, l))
            }
        }))
    }

    /// Keeps angle modes with `|l| <= k`.
    pub fn project_phi(&self, k: usize) -> Self {
        self.spectral_map(|l, _| if l.iter().all(|x| x.unsigned_abs() as usize <= k) { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    /// `x`-average of every slice, broadcast in `x`.
    pub fn mean_x(&self) -> Self {
        let mx = self.grid.m_x;
        let mut data = self.data.clone();
        for g in 0..self.grid.n_slices() {
            let m = self.slice(g).iter().sum::<f64>() / mx as f64;
            data[g * mx..(g + 1) * mx].iter_mut().for_each(|v| *v = m);
        }
        GridFn { grid: self.grid, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Largest spread `max - min` along `x` over all slices.
    pub fn x_variation(&self) -> f64 {
        (0..self.grid.n_slices())
            .map(|g| {
                let s = self.slice(g);
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mn = s.iter().cloned().fold(f64::INFINITY, f64::min);
                mx - mn
            })
            .fold(0.0, f64::max)
    }

    /// Largest spread over all grid points.
    pub fn variation(&self) -> f64 {
        let mx = self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx - self.min()
    }

    /// Normalized `x`-coefficients of slice `g` for `|k| <= cut` (the grid
    /// must resolve them).
    pub fn x_coeffs(&self, g: usize, cut: usize) -> Vec<C64> {
        let s: Vec<C64> = self.slice(g).iter().map(|v| c(*v, 0.0)).collect();
        let mx = self.grid.m_x;
        let cut = cut.min((mx - 1) / 2);
        let full = crate::fourier::coeffs_1d(&s, (mx - 1) / 2);
        let h = (mx - 1) / 2;
        full[h - cut..=h + cut].to_vec()
    }

    /// `f(phi, x + d(phi, x))` by trigonometric interpolation in `x`.
    pub fn compose_x(&self, d: &GridFn) -> Self {
        assert_eq!(self.grid, d.grid);
        let mx = self.grid.m_x;
        let h = (mx - 1) / 2;
        let mut data = Vec::with_capacity(self.data.len());
        for g in 0..self.grid.n_slices() {
            let co = self.x_coeffs(g, h);
            for m in 0..mx {
                let x = self.grid.x_point(m) + d.data[g * mx + m];
                data.push(eval_1d(&co, x).re);
            }
        }
        GridFn { grid: self.grid, data }
    }

    /// For each slice the displacement `t(phi, x)` with `x + t + d(x + t) = x`,
    /// i.e. the inverse of `x -> x + d(x)` written as `y -> y + t(y)`.
    pub fn inverse_diffeo_x(&self) -> Result<Self> {
        let dx = self.dx();
        let sup = dx.max_abs();
        if sup >= 0.5 {
            return Err(Error::Diffeomorphism(sup));
        }
        let mx = self.grid.m_x;
        let h = (mx - 1) / 2;
        let mut data = Vec::with_capacity(self.data.len());
        for g in 0..self.grid.n_slices() {
            let co = self.x_coeffs(g, h);
            let cod = dx.x_coeffs(g, h);
            for m in 0..mx {
                let y = self.grid.x_point(m);
                // Newton for X with X + d(X) = y
                let mut xx = y - self.data[g * mx + m];
                for _ in 0..60 {
                    let f = xx + eval_1d(&co, xx).re - y;
                    let fp = 1.0 + eval_1d(&cod, xx).re;
                    let step = f / fp;
                    xx -= step;
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                data.push(xx - y);
            }
        }
        Ok(GridFn { grid: self.grid, data })
    }

    /// Angle spectrum of every `x`-column: `coef[l][m]` for the resolved box.
    pub fn phi_spectrum(&self) -> Vec<Vec<C64>> {
        let ns = self.grid.n_slices();
        let mx = self.grid.m_x;
        let mut cols = vec![vec![c(0.0, 0.0); ns]; mx];
        for g in 0..ns {
            for m in 0..mx {
                cols[m][g] = c(self.data[g * mx + m], 0.0);
            }
        }
        let shape = self.grid.phi_shape();
        for col in cols.iter_mut() {
            fft_nd(col, &shape, false);
            col.iter_mut().for_each(|z| *z /= ns as f64);
        }
        cols
    }

    /// `f(phi + s(phi), x)` where `s` gives an angle shift per slice.
    pub fn compose_phi(&self, shift: &[Vec<f64>]) -> Self {
        let ns = self.grid.n_slices();
        let mx = self.grid.m_x;
        let spec = self.phi_spectrum();
        let modes: Vec<Vec<i64>> = (0..ns).map(|g| self.grid.phi_mode_of_bin(g)).collect();
        let mut data = vec![0.0; self.data.len()];
        for g in 0..ns {
            let p: Vec<f64> = self.grid.phi_point(g).iter().zip(&shift[g]).map(|(a, b)| a + b).collect();
            let ph: Vec<C64> = modes
                .iter()
                .map(|l| {
                    let a: f64 = l.iter().zip(&p).map(|(k, x)| *k as f64 * x).sum();
                    C64::new(a.cos(), a.sin())
                })
                .collect();
            for m in 0..mx {
                let v: C64 = spec[m].iter().zip(&ph).map(|(a, b)| a * b).sum();
                data[g * mx + m] = v.re;
            }
        }
        GridFn { grid: self.grid, data }
    }

    /// Functions that depend on the angles only: value at `x = 0` per slice.
    pub fn phi_values(&self) -> Vec<f64> {
        (0..self.grid.n_slices()).map(|g| self.data[g * self.grid.m_x]).collect()
    }

    /// `f(-phi, x) = sign f(phi, x)` within `tol`.
    pub fn has_phi_parity(&self, sign: f64, tol: f64) -> bool {
        let mx = self.grid.m_x;
        (0..self.grid.n_slices()).all(|g| {
            let q = self.grid.phi_neg(g);
            (0..mx).all(|m| (self.data[q * mx + m] - sign * self.data[g * mx + m]).abs() <= tol)
        })
    }

    /// `f(phi, -x) = sign f(phi, x)` within `tol`.
    pub fn has_x_parity(&self, sign: f64, tol: f64) -> bool {
        let mx = self.grid.m_x;
        (0..self.grid.n_slices()).all(|g| {
            (0..mx).all(|m| (self.data[g * mx + (mx - m) % mx] - sign * self.data[g * mx + m]).abs() <= tol)
        })
    }

    /// Space-time trapezoid mean with the `(2 pi)^{-(nu+1)}` normalization.
    pub fn average(&self) -> f64 {
        self.mean()
    }
}

/// Angle modes `|l| <= k` in lexicographic order.
pub fn phi_box(nu: usize, k: usize) -> Vec<Vec<i64>> {
    box_modes(&vec![k; nu])
}
