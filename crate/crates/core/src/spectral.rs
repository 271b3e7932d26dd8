//! Truncated Fourier fields on `T^nu x T`, Sobolev norms, projectors and
//! diophantine checks.

use crate::error::{Error, Result};
use crate::fourier::{box_modes, modes_to_samples, samples_to_modes};
use crate::linalg::{c, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Upper bound on the number of stored modes of one field.
pub const MODE_BUDGET: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub nu: usize,
    #[serde(rename = "K_phi")]
    pub k_phi: usize,
    #[serde(rename = "N_x")]
    pub n_x: usize,
}

impl Truncation {
    pub fn new(nu: usize, k_phi: usize, n_x: usize) -> Result<Self> {
        if nu == 0 || k_phi == 0 || n_x == 0 {
            return Err(Error::Domain(format!("cutoffs must be >= 1 (nu={nu}, K_phi={k_phi}, N_x={n_x})")));
        }
        let t = Truncation { nu, k_phi, n_x };
        if t.len() > MODE_BUDGET {
            return Err(Error::Domain(format!("{} modes exceed budget {MODE_BUDGET}", t.len())));
        }
        Ok(t)
    }

    pub fn phi_count(&self) -> usize {
        (2 * self.k_phi + 1).pow(self.nu as u32)
    }

    pub fn x_count(&self) -> usize {
        2 * self.n_x + 1
    }

    pub fn len(&self) -> usize {
        self.phi_count() * self.x_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi_modes(&self) -> Vec<Vec<i64>> {
        box_modes(&vec![self.k_phi; self.nu])
    }

    pub fn phi_index(&self, l: &[i64]) -> Option<usize> {
        let k = self.k_phi as i64;
        let mut idx = 0usize;
        for &li in l {
            if li.abs() > k {
                return None;
            }
            idx = idx * (2 * self.k_phi + 1) + (li + k) as usize;
        }
        Some(idx)
    }

    pub fn phi_mode(&self, mut idx: usize) -> Vec<i64> {
        let w = 2 * self.k_phi + 1;
        let mut l = vec![0i64; self.nu];
        for d in (0..self.nu).rev() {
            l[d] = (idx % w) as i64 - self.k_phi as i64;
            idx /= w;
        }
        l
    }

    pub fn index(&self, l: &[i64], j: i64) -> Option<usize> {
        if j.abs() > self.n_x as i64 {
            return None;
        }
        self.phi_index(l).map(|p| p * self.x_count() + (j + self.n_x as i64) as usize)
    }

    /// Index of the mirrored mode `(-l, j)` for a phi index.
    pub fn phi_neg(&self, idx: usize) -> usize {
        self.phi_count() - 1 - idx
    }

    /// Coefficient box for the multi-dimensional FFT helpers.
    pub fn cut(&self) -> Vec<usize> {
        let mut c = vec![self.k_phi; self.nu];
        c.push(self.n_x);
        c
    }
}

/// `max(1, |l|_inf, |j|)`.
pub fn bracket(l: &[i64], j: i64) -> f64 {
    let m = l.iter().map(|x| x.abs()).max().unwrap_or(0).max(j.abs());
    m.max(1) as f64
}

/// `max(1, |l|_inf)`.
pub fn bracket_phi(l: &[i64]) -> f64 {
    l.iter().map(|x| x.abs()).max().unwrap_or(0).max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusField {
    pub trunc: Truncation,
    pub coeffs: Vec<C64>,
}

impl TorusField {
    pub fn zeros(trunc: Truncation) -> Self {
        TorusField { trunc, coeffs: vec![c(0.0, 0.0); trunc.len()] }
    }

    /// Single exponential `amp * e^{i(l.phi + j x)}`.
    pub fn mode(trunc: Truncation, l: &[i64], j: i64, amp: C64) -> Self {
        let mut u = Self::zeros(trunc);
        u.set(l, j, amp);
        u
    }

    /// Sample `f(phi, x)` on an oversampled grid and project onto the box.
    pub fn from_fn(trunc: Truncation, f: impl Fn(&[f64], f64) -> C64) -> Self {
        let mut shape = vec![2 * (2 * trunc.k_phi + 1); trunc.nu];
        shape.push(4 * trunc.n_x + 4);
        let samples = sample_grid(&shape, |phi, x| f(phi, x));
        Self::from_samples(trunc, &samples, &shape)
    }

    pub fn from_samples(trunc: Truncation, samples: &[C64], shape: &[usize]) -> Self {
        let coeffs = samples_to_modes(samples, shape, &trunc.cut());
        TorusField { trunc, coeffs }
    }

    /// Samples on a grid with `m_phi` points per angle and `m_x` in space.
    pub fn to_samples(&self, m_phi: usize, m_x: usize) -> Vec<C64> {
        let mut shape = vec![m_phi; self.trunc.nu];
        shape.push(m_x);
        modes_to_samples(&self.coeffs, &self.trunc.cut(), &shape)
    }

    pub fn get(&self, l: &[i64], j: i64) -> C64 {
        self.trunc.index(l, j).map(|i| self.coeffs[i]).unwrap_or(c(0.0, 0.0))
    }

    pub fn set(&mut self, l: &[i64], j: i64, v: C64) {
        let i = self.trunc.index(l, j).expect("mode outside truncation");
        self.coeffs[i] = v;
    }

    /// Iterate `(l, j, coeff)`.
    pub fn modes(&self) -> impl Iterator<Item = (Vec<i64>, i64, C64)> + '_ {
        let nx = self.trunc.x_count();
        let n = self.trunc.n_x as i64;
        self.coeffs.iter().enumerate().map(move |(i, v)| (self.trunc.phi_mode(i / nx), (i % nx) as i64 - n, *v))
    }

    pub fn eval(&self, phi: &[f64], x: f64) -> C64 {
        self.modes()
            .filter(|(_, _, v)| v.norm() != 0.0)
            .map(|(l, j, v)| {
                let arg: f64 = l.iter().zip(phi).map(|(a, b)| *a as f64 * b).sum::<f64>() + j as f64 * x;
                v * C64::new(arg.cos(), arg.sin())
            })
            .sum()
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.modes().map(|(l, j, v)| v.norm_sqr() * bracket(&l, j).powf(2.0 * s)).sum::<f64>().sqrt()
    }

    pub fn majorant(&self) -> Self {
        TorusField { trunc: self.trunc, coeffs: self.coeffs.iter().map(|v| c(v.norm(), 0.0)).collect() }
    }

    fn filter(&self, keep: impl Fn(&[i64], i64) -> bool) -> Self {
        let coeffs = self
            .modes()
            .map(|(l, j, v)| if keep(&l, j) { v } else { c(0.0, 0.0) })
            .collect();
        TorusField { trunc: self.trunc, coeffs }
    }

    /// Keeps modes with `|(l, j)| <= k` (max norm).
    pub fn project(&self, k: usize) -> Self {
        self.filter(|l, j| l.iter().map(|x| x.abs()).max().unwrap_or(0).max(j.abs()) <= k as i64)
    }

    pub fn project_complement(&self, k: usize) -> Self {
        self.filter(|l, j| l.iter().map(|x| x.abs()).max().unwrap_or(0).max(j.abs()) > k as i64)
    }

    /// Keeps angle modes `|l| <= k`, all space modes.
    pub fn project_phi(&self, k: usize) -> Self {
        self.filter(|l, _| l.iter().map(|x| x.abs()).max().unwrap_or(0) <= k as i64)
    }

    fn mirror_index(&self, i: usize) -> usize {
        self.coeffs.len() - 1 - i
    }

    /// `coeff(-l,-j) = conj coeff(l,j)` within `tol` (absolute).
    pub fn is_real(&self, tol: f64) -> bool {
        (0..self.coeffs.len()).all(|i| (self.coeffs[self.mirror_index(i)] - self.coeffs[i].conj()).norm() <= tol)
    }

    /// `coeff(l,-j) = coeff(l,j)`.
    pub fn is_even_x(&self, tol: f64) -> bool {
        let nx = self.trunc.x_count();
        (0..self.coeffs.len()).all(|i| {
            let p = i / nx;
            let k = i % nx;
            (self.coeffs[p * nx + (nx - 1 - k)] - self.coeffs[i]).norm() <= tol
        })
    }

    /// `coeff(-l,j) = sign * coeff(l,j)`; `sign = 1` even, `-1` odd in angles.
    pub fn has_phi_parity(&self, sign: f64, tol: f64) -> bool {
        let nx = self.trunc.x_count();
        (0..self.coeffs.len()).all(|i| {
            let p = i / nx;
            let k = i % nx;
            let q = self.trunc.phi_neg(p);
            (self.coeffs[q * nx + k] - self.coeffs[i] * sign).norm() <= tol
        })
    }

    pub fn scale(&self, a: C64) -> Self {
        TorusField { trunc: self.trunc, coeffs: self.coeffs.iter().map(|v| v * a).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!(self.trunc, o.trunc);
        TorusField { trunc: self.trunc, coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(c(-1.0, 0.0)))
    }

    fn map_modes(&self, mut f: impl FnMut(&[i64], i64) -> C64) -> Self {
        let coeffs = self.modes().map(|(l, j, v)| v * f(&l, j)).collect();
        TorusField { trunc: self.trunc, coeffs }
    }

    pub fn dx(&self) -> Self {
        self.map_modes(|_, j| c(0.0, j as f64))
    }

    /// Zero-mean antiderivative in `x`; the `j = 0` modes are dropped.
    pub fn dx_inv(&self) -> Self {
        self.map_modes(|_, j| if j == 0 { c(0.0, 0.0) } else { c(0.0, -1.0 / j as f64) })
    }

    pub fn hilbert(&self) -> Self {
        self.map_modes(|_, j| c(0.0, -(j.signum() as f64)))
    }

    pub fn omega_dphi(&self, omega: &[f64]) -> Self {
        self.map_modes(|l, _| c(0.0, dot(omega, l)))
    }

    /// Mode division by `i omega.l`; the `l = 0` modes are dropped.  Fails if a
    /// divisor violates `|omega.l| >= gamma <l>^{-tau}`.
    pub fn omega_dphi_inv(&self, omega: &[f64], gamma: f64, tau: f64) -> Result<Self> {
        let mut bad = vec![];
        let out = self.map_modes(|l, _| {
            if l.iter().all(|x| *x == 0) {
                return c(0.0, 0.0);
            }
            let d = dot(omega, l);
            if d.abs() < gamma * bracket_phi(l).powf(-tau) || d == 0.0 {
                bad.push(l.to_vec());
            }
            c(0.0, -1.0 / d)
        });
        if bad.is_empty() {
            Ok(out)
        } else {
            bad.sort();
            bad.dedup();
            Err(Error::SmallDivisor(format!("|omega.l| below threshold for l in {bad:?}")))
        }
    }

    /// Average over `x` (keeps the `j = 0` column).
    pub fn mean_x(&self) -> Self {
        self.filter(|_, j| j == 0)
    }

    pub fn mean(&self) -> C64 {
        self.get(&vec![0; self.trunc.nu], 0)
    }

    /// Truncated product `Pi(u v)`, computed on a dealiased grid.
    pub fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.trunc, o.trunc);
        let t = self.trunc;
        let mut shape = vec![3 * t.k_phi + 2; t.nu];
        shape.push(3 * t.n_x + 2);
        let a = modes_to_samples(&self.coeffs, &t.cut(), &shape);
        let b = modes_to_samples(&o.coeffs, &t.cut(), &shape);
        let p: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Self::from_samples(t, &p, &shape)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .modes()
            .filter(|(_, _, v)| v.norm() != 0.0)
            .map(|(l, j, v)| {
                let mut r: Vec<serde_json::Value> = l.iter().map(|x| serde_json::json!(x)).collect();
                r.push(serde_json::json!(j));
                r.push(serde_json::json!(v.re));
                r.push(serde_json::json!(v.im));
                serde_json::Value::Array(r)
            })
            .collect();
        serde_json::json!({"nu": self.trunc.nu, "K_phi": self.trunc.k_phi, "N_x": self.trunc.n_x, "coeffs": rows})
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            v.get(k)
                .and_then(|x| x.as_u64())
                .map(|x| x as usize)
                .ok_or_else(|| Error::Domain(format!("field JSON missing integer '{k}'")))
        };
        let trunc = Truncation::new(get("nu")?, get("K_phi")?, get("N_x")?)?;
        let mut u = Self::zeros(trunc);
        let rows = v
            .get("coeffs")
            .and_then(|x| x.as_array())
            .ok_or_else(|| Error::Domain("field JSON missing 'coeffs' array".into()))?;
        for r in rows {
            let r = r.as_array().ok_or_else(|| Error::Domain("coefficient row must be an array".into()))?;
            if r.len() != trunc.nu + 3 {
                return Err(Error::Dimension(format!("coefficient row of length {} (want {})", r.len(), trunc.nu + 3)));
            }
            let ints: Option<Vec<i64>> = r[..=trunc.nu].iter().map(|x| x.as_i64()).collect();
            let ints = ints.ok_or_else(|| Error::Domain("mode indices must be integers".into()))?;
            let (re, im) = (r[trunc.nu + 1].as_f64(), r[trunc.nu + 2].as_f64());
            let (re, im) = re.zip(im).ok_or_else(|| Error::Domain("coefficients must be numbers".into()))?;
            let idx = trunc
                .index(&ints[..trunc.nu], ints[trunc.nu])
                .ok_or_else(|| Error::Dimension(format!("mode {ints:?} outside truncation")))?;
            u.coeffs[idx] += c(re, im);
        }
        Ok(u)
    }
}

pub fn dot(omega: &[f64], l: &[i64]) -> f64 {
    omega.iter().zip(l).map(|(w, k)| w * *k as f64).sum()
}

/// Evaluate `f` on the uniform grid of `shape` (angles first, space last).
pub fn sample_grid(shape: &[usize], f: impl Fn(&[f64], f64) -> C64) -> Vec<C64> {
    let total: usize = shape.iter().product();
    let d = shape.len();
    let mut out = Vec::with_capacity(total);
    let mut phi = vec![0.0; d - 1];
    for g in 0..total {
        let mut r = g;
        let mut idx = vec![0usize; d];
        for a in (0..d).rev() {
            idx[a] = r % shape[a];
            r /= shape[a];
        }
        for a in 0..d - 1 {
            phi[a] = 2.0 * PI * idx[a] as f64 / shape[a] as f64;
        }
        let x = 2.0 * PI * idx[d - 1] as f64 / shape[d - 1] as f64;
        out.push(f(&phi, x));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub omega: Vec<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub tau: f64,
    pub k0: usize,
}

impl ParamPoint {
    pub fn new(omega: Vec<f64>, kappa: f64, gamma: f64, tau: f64, k0: usize) -> Result<Self> {
        if kappa <= 0.0 {
            return Err(Error::Domain(format!("kappa = {kappa} must be positive")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("gamma = {gamma} must lie in (0,1)")));
        }
        if tau < 1.0 {
            return Err(Error::Domain(format!("tau = {tau} must be >= 1")));
        }
        Ok(ParamPoint { omega, kappa, gamma, tau, k0 })
    }

    /// Components of `lambda = (omega, kappa)`.
    pub fn lambda(&self) -> Vec<f64> {
        let mut v = self.omega.clone();
        v.push(self.kappa);
        v
    }

    pub fn with_lambda(&self, lam: &[f64]) -> Self {
        let nu = self.omega.len();
        ParamPoint { omega: lam[..nu].to_vec(), kappa: lam[nu], ..self.clone() }
    }
}

/// `s0 = [(nu+1)/2] + 1`.
pub fn s0(nu: usize) -> f64 {
    ((nu + 1) / 2 + 1) as f64
}

/// `sum_{|k| <= k0} gamma^{|k|} ||d_lambda^k u||_s` with central differences of
/// step `step` in every component of `lambda`.
pub fn weighted_param_norm(
    family: impl Fn(&ParamPoint) -> TorusField,
    s: f64,
    lam0: &ParamPoint,
    step: f64,
    kappa_range: (f64, f64),
) -> Result<f64> {
    let k0 = lam0.k0;
    let radius = k0 as f64 * step;
    if lam0.kappa - radius < kappa_range.0 || lam0.kappa + radius > kappa_range.1 {
        return Err(Error::Domain(format!(
            "stencil [{:.4}, {:.4}] leaves kappa range [{}, {}]",
            lam0.kappa - radius,
            lam0.kappa + radius,
            kappa_range.0,
            kappa_range.1
        )));
    }
    let dim = lam0.omega.len() + 1;
    let base = lam0.lambda();
    let mut total = 0.0;
    for order in 0..=k0 {
        for alpha in multi_indices(dim, order) {
            let d = central_difference(&family, lam0, &base, &alpha, step);
            total += lam0.gamma.powi(order as i32) * d.sobolev_norm(s);
        }
    }
    Ok(total)
}

fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return vec![vec![order]];
    }
    let mut out = vec![];
    for a in 0..=order {
        for mut rest in multi_indices(dim - 1, order - a) {
            rest.insert(0, a);
            out.push(rest);
        }
    }
    out
}

/// Tensor-product second-order central difference `d^alpha family`.
fn central_difference(
    family: &impl Fn(&ParamPoint) -> TorusField,
    lam0: &ParamPoint,
    base: &[f64],
    alpha: &[usize],
    h: f64,
) -> TorusField {
    // 1-d stencils: order 0 -> [1], order 1 -> [-1/2, 0, 1/2]/h, order 2 -> [1,-2,1]/h^2, ...
    let stencils: Vec<Vec<(i64, f64)>> = alpha.iter().map(|&a| difference_stencil(a, h)).collect();
    let mut acc: Option<TorusField> = None;
    let mut combo = vec![0usize; alpha.len()];
    loop {
        let mut w = 1.0;
        let mut lam = base.to_vec();
        for (d, st) in stencils.iter().enumerate() {
            let (off, wt) = st[combo[d]];
            w *= wt;
            lam[d] += off as f64 * h;
        }
        if w != 0.0 {
            let u = family(&lam0.with_lambda(&lam)).scale(c(w, 0.0));
            acc = Some(match acc {
                None => u,
                Some(a) => a.add(&u),
            });
        }
        let mut d = 0;
        loop {
            if d == combo.len() {
                return acc.unwrap_or_else(|| family(lam0).scale(c(0.0, 0.0)));
            }
            combo[d] += 1;
            if combo[d] < stencils[d].len() {
                break;
            }
            combo[d] = 0;
            d += 1;
        }
    }
}

fn difference_stencil(order: usize, h: f64) -> Vec<(i64, f64)> {
    // central differences built from repeated application of the symmetric
    // first difference (half steps folded into whole steps for even orders)
    match order {
        0 => vec![(0, 1.0)],
        1 => vec![(-1, -0.5 / h), (1, 0.5 / h)],
        2 => vec![(-1, 1.0 / (h * h)), (0, -2.0 / (h * h)), (1, 1.0 / (h * h))],
        k => {
            // d^k = d^2 composed with d^{k-2}
            let inner = difference_stencil(k - 2, h);
            let outer = difference_stencil(2, h);
            let mut map = std::collections::BTreeMap::<i64, f64>::new();
            for (a, wa) in &inner {
                for (b, wb) in &outer {
                    *map.entry(a + b).or_insert(0.0) += wa * wb;
                }
            }
            map.into_iter().collect()
        }
    }
}

/// `|omega.l| >= gamma <l>^{-tau}` for all `0 < |l|_inf <= k`.
pub fn diophantine_check(omega: &[f64], gamma: f64, tau: f64, k: usize) -> bool {
    diophantine_violations(omega, gamma, tau, k).is_empty()
}

pub fn diophantine_violations(omega: &[f64], gamma: f64, tau: f64, k: usize) -> Vec<Vec<i64>> {
    box_modes(&vec![k; omega.len()])
        .into_iter()
        .filter(|l| l.iter().any(|x| *x != 0))
        .filter(|l| dot(omega, l).abs() < gamma * bracket_phi(l).powf(-tau))
        .collect()
}
