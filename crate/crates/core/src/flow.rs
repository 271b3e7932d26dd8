//! Galerkin flow of `u_t = i a(phi, x) |D|^{1/2} u`, its adjoint, the
//! paraproduct splitting and energy diagnostics.

use crate::family::{mult_matrix, multiplier, Family};
use crate::grid::GridFn;
use crate::linalg::{self, c, CMat, CVec, C64};
use crate::psido::chi;
use serde::Serialize;

/// `chi(j) |j|^{1/2}` on `|j| <= n`; the zero mode is left untouched.
pub fn half_derivative(n: usize) -> CMat {
    multiplier(n, |j| c(chi(j as f64) * (j.unsigned_abs() as f64).sqrt(), 0.0))
}

/// Truncated generator `i Pi_N a |D|^{1/2} Pi_N` for one slice.
pub fn generator(a: &[f64], n: usize) -> CMat {
    linalg::mul(&mult_matrix(a, n), &half_derivative(n)) * c(0.0, 1.0)
}

/// Generator of the adjoint flow, `i |D|^{1/2} a`.
pub fn adjoint_generator(a: &[f64], n: usize) -> CMat {
    linalg::mul(&half_derivative(n), &mult_matrix(a, n)) * c(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Integrator {
    Expm,
    Rk4,
}

/// Flow matrices, one per angle slice.
#[derive(Clone, Debug)]
pub struct FlowOperator {
    pub a: GridFn,
    pub t: f64,
    pub n: usize,
    /// RK4 steps used (0 for the matrix exponential)
    pub steps: usize,
    pub family: Family,
}

fn rk4_controlled(a: &CMat, t: f64, tol: f64) -> (CMat, usize) {
    let nrm = linalg::norm1(a) * t.abs();
    let mut steps = ((nrm / 0.1).ceil() as usize).max(4);
    let mut prev = linalg::rk4_propagator(a, t, steps);
    loop {
        steps *= 2;
        let next = linalg::rk4_propagator(a, t, steps);
        // Richardson estimate of the error of `next`
        let err = linalg::max_abs(&(&next - &prev)) / 15.0;
        prev = next;
        if err < tol || steps > 1 << 16 {
            return (prev, steps);
        }
    }
}

fn build(a: &GridFn, t: f64, n: usize, gen: impl Fn(&[f64], usize) -> CMat, how: Integrator) -> FlowOperator {
    let mut steps = 0;
    let mats = (0..a.grid.n_slices())
        .map(|g| {
            let m = gen(a.slice(g), n);
            match how {
                Integrator::Expm => linalg::expm(&(m * c(t, 0.0))),
                Integrator::Rk4 => {
                    let (p, s) = rk4_controlled(&m, t, 1e-12);
                    steps = steps.max(s);
                    p
                }
            }
        })
        .collect();
    FlowOperator { a: a.clone(), t, n, steps, family: Family { grid: a.grid, nb: 1, n, mats } }
}

/// `Phi(t) = exp(t i Pi_N a |D|^{1/2} Pi_N)` slice by slice.
pub fn galerkin_flow(a: &GridFn, t: f64, n: usize) -> FlowOperator {
    build(a, t, n, generator, Integrator::Expm)
}

pub fn galerkin_flow_with(a: &GridFn, t: f64, n: usize, how: Integrator) -> FlowOperator {
    build(a, t, n, generator, how)
}

/// `Psi(0)` for `d_t Psi = i |D|^{1/2} a Psi`, `Psi(t) = Id`, integrated backward by RK4.
pub fn adjoint_flow(a: &GridFn, t: f64, n: usize) -> FlowOperator {
    build(a, -t, n, adjoint_generator, Integrator::Rk4)
}

impl FlowOperator {
    /// `max_g ||Phi(t1 + t2) - Phi(t1) Phi(t2)||_max`.
    pub fn group_defect(a: &GridFn, t1: f64, t2: f64, n: usize) -> f64 {
        let f1 = galerkin_flow(a, t1, n);
        let f2 = galerkin_flow(a, t2, n);
        let f12 = galerkin_flow(a, t1 + t2, n);
        f12.family.sub(&f1.family.mul(&f2.family)).max_abs()
    }

    /// Measured `L^2` bound `max_g ||Phi||`.
    pub fn l2_bound(&self) -> f64 {
        self.family.op_norm()
    }

    pub fn apply(&self, g: usize, u: &[C64]) -> Vec<C64> {
        (&self.family.mats[g] * CVec::from_column_slice(u)).as_slice().to_vec()
    }
}

// ---------------------------------------------------------------------------
// paraproduct

/// Bony splitting of the product of two coefficient vectors (cuts `na`, `nu`):
/// `T_a u` collects the pairs `|k - xi| <= |xi|`, `R_u a` the rest. Both
/// outputs have cut `na + nu` and add up to the full product.
pub fn paraproduct_split(a: &[C64], u: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let na = (a.len() - 1) / 2;
    let nu = (u.len() - 1) / 2;
    let m = na + nu;
    let mut t = vec![c(0.0, 0.0); 2 * m + 1];
    let mut r = vec![c(0.0, 0.0); 2 * m + 1];
    for (ia, av) in a.iter().enumerate() {
        let ka = ia as i64 - na as i64;
        for (iu, uv) in u.iter().enumerate() {
            let xi = iu as i64 - nu as i64;
            let k = (ka + xi + m as i64) as usize;
            if ka.abs() <= xi.abs() {
                t[k] += av * uv;
            } else {
                r[k] += av * uv;
            }
        }
    }
    (t, r)
}

/// Full product of two coefficient vectors.
pub fn convolve(a: &[C64], u: &[C64]) -> Vec<C64> {
    let (t, r) = paraproduct_split(a, u);
    t.iter().zip(&r).map(|(x, y)| x + y).collect()
}

/// `(sum <j>^{2s} |v_j|^2)^{1/2}` with `<j> = max(1, |j|)`.
pub fn sobolev(v: &[C64], s: f64) -> f64 {
    let n = (v.len() - 1) / 2;
    v.iter()
        .enumerate()
        .map(|(i, z)| ((i as f64 - n as f64).abs().max(1.0)).powf(2.0 * s) * z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `||R_u a||_{H^s} / (||a||_{H^{s+1/2}} ||u||_{H^{1/2}})`.
pub fn remainder_ratio(a: &[C64], u: &[C64], s: f64) -> f64 {
    let (_, r) = paraproduct_split(a, u);
    sobolev(&r, s) / (sobolev(a, s + 0.5) * sobolev(u, 0.5))
}

// ---------------------------------------------------------------------------
// energy

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    /// `max_t |d/dt ||u||^2| / ||u||^2`
    pub rate: f64,
    /// operator norm of `[a, |D|^{1/2}]`
    pub c_comm: f64,
    /// `max_t | ||u(t)|| / ||u0|| - 1 |`
    pub drift: f64,
    pub within_envelope: bool,
}

/// Samples `||u(t)||` for one slice of `a` and compares with the Gronwall
/// envelope driven by the commutator norm.
pub fn energy_diagnostic(a: &[f64], u0: &[C64], times: &[f64]) -> EnergyReport {
    let n = (u0.len() - 1) / 2;
    let gen = generator(a, n);
    let ma = mult_matrix(a, n);
    let dh = half_derivative(n);
    let comm = linalg::mul(&ma, &dh) - linalg::mul(&dh, &ma);
    let c_comm = linalg::op_norm(&comm);
    let sym = &gen + gen.adjoint();
    let u0v = CVec::from_column_slice(u0);
    let n0 = u0v.norm();
    let mut norms = vec![];
    let mut rate: f64 = 0.0;
    let mut drift: f64 = 0.0;
    let mut inside = true;
    for &t in times {
        let u = linalg::expm(&(&gen * c(t, 0.0))) * &u0v;
        let nu = u.norm();
        norms.push(nu);
        if nu > 0.0 {
            // d/dt ||u||^2 = <(G + G*) u, u>
            let d = (u.adjoint() * &sym * &u)[(0, 0)].re;
            rate = rate.max(d.abs() / (nu * nu));
            let rel = nu / n0;
            drift = drift.max((rel - 1.0).abs());
            let env = (c_comm * t.abs() / 2.0).exp();
            inside &= rel <= env * (1.0 + 1e-12) && rel >= (1.0 - 1e-12) / env;
        }
    }
    EnergyReport { times: times.to_vec(), norms, rate, c_comm, drift, within_envelope: inside && rate <= c_comm * (1.0 + 1e-10) }
}

// ---------------------------------------------------------------------------
// order fits

/// Slope of `log ||A e_j||` against `log |j|` over `lo <= |j| <= hi`.
pub fn column_order(a: &CMat, n: usize, lo: usize, hi: usize) -> f64 {
    let mut xs = vec![];
    let mut ys = vec![];
    for j in lo..=hi {
        let mut s = 0.0;
        for col in [n + j, n - j] {
            s += a.column(col).norm_squared();
        }
        let v = (s / 2.0).sqrt();
        if v > 0.0 {
            xs.push(j as f64);
            ys.push(v);
        }
    }
    linalg::loglog_slope(&xs, &ys)
}
