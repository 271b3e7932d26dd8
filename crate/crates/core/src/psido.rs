//! Discrete pseudo-differential symbols `a(phi, x, xi)` on integer `xi`
//! slots: quantization, composition, adjoints, brackets, norms, Fourier
//! multipliers, the Hilbert transform and the `[a, H]` kernel.

use crate::error::{Error, Result};
use crate::family::{composition_matrix, Family};
use crate::grid::GridFn;
use crate::linalg::{self, c, CMat, C64};
use crate::operator::LinearOperator;
use crate::spectral::{bracket, Truncation, TorusField};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

// ---------------------------------------------------------------------------
// cut-off functions

fn bump(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn bump_d(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

/// Smooth step from 0 (t <= 0) to 1 (t >= 1).
pub fn smooth_step(t: f64) -> f64 {
    let (a, b) = (bump(t), bump(1.0 - t));
    if a + b == 0.0 {
        return if t >= 1.0 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

pub fn smooth_step_d(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let (a, b) = (bump(t), bump(1.0 - t));
    let (da, db) = (bump_d(t), bump_d(1.0 - t));
    (da * b + a * db) / ((a + b) * (a + b))
}

/// Even cut-off, `0` for `|xi| <= 1/3` and `1` for `|xi| >= 2/3`.
pub fn chi(xi: f64) -> f64 {
    smooth_step((xi.abs() - 1.0 / 3.0) * 3.0)
}

pub fn chi_d(xi: f64) -> f64 {
    3.0 * smooth_step_d((xi.abs() - 1.0 / 3.0) * 3.0) * xi.signum()
}

/// Even cut-off, `0` for `|xi| <= 1/2` and `1` for `|xi| >= 3/4`.
pub fn chi0(xi: f64) -> f64 {
    smooth_step((xi.abs() - 0.5) * 4.0)
}

// ---------------------------------------------------------------------------
// Fourier multipliers

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MultiplierKind {
    /// `chi(xi)|xi|^m`
    AbsD { m: f64 },
    /// `chi(xi)|xi|^{1/2}(1 + kappa xi^2)^{1/2}`
    T { kappa: f64 },
    /// symmetrizer `|xi|^{-1/2}(1 + kappa xi^2)^{1/2}` for `|xi| >= 2/3`, `1` at zero
    G { kappa: f64 },
    /// `-i sign(xi)`
    Hilbert,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierMultiplier {
    pub kind: MultiplierKind,
}

impl FourierMultiplier {
    pub fn abs_d(m: f64) -> Self {
        FourierMultiplier { kind: MultiplierKind::AbsD { m } }
    }

    pub fn t(kappa: f64) -> Self {
        FourierMultiplier { kind: MultiplierKind::T { kappa } }
    }

    pub fn g(kappa: f64) -> Self {
        FourierMultiplier { kind: MultiplierKind::G { kappa } }
    }

    pub fn hilbert() -> Self {
        FourierMultiplier { kind: MultiplierKind::Hilbert }
    }

    pub fn order(&self) -> f64 {
        match self.kind {
            MultiplierKind::AbsD { m } => m,
            MultiplierKind::T { .. } => 1.5,
            MultiplierKind::G { .. } => 0.5,
            MultiplierKind::Hilbert => 0.0,
        }
    }

    pub fn is_even(&self) -> bool {
        !matches!(self.kind, MultiplierKind::Hilbert)
    }

    pub fn eval(&self, xi: f64) -> C64 {
        match self.kind {
            MultiplierKind::AbsD { m } => c(chi(xi) * xi.abs().powf(m), 0.0),
            MultiplierKind::T { kappa } => c(t_symbol(kappa, xi), 0.0),
            MultiplierKind::G { kappa } => {
                // interpolate to 1 at the origin so that G is invertible
                let x = chi(xi);
                let big = if xi == 0.0 { 0.0 } else { (1.0 + kappa * xi * xi).sqrt() / xi.abs().sqrt() };
                c(x * big + (1.0 - x), 0.0)
            }
            MultiplierKind::Hilbert => c(0.0, -xi.signum()),
        }
    }

    pub fn matrix(&self, n: usize) -> CMat {
        crate::family::multiplier(n, |j| self.eval(j as f64))
    }

    /// The multiplier as a symbol with only the `(l, k) = (0, 0)` mode.
    pub fn symbol(&self, nu: usize, n_xi: usize) -> DiscreteSymbol {
        let mut s = DiscreteSymbol::zeros(Truncation { nu, k_phi: 0, n_x: 0 }, n_xi, self.order());
        for xi in -(n_xi as i64)..=(n_xi as i64) {
            s.set(&vec![0; nu], 0, xi, self.eval(xi as f64));
        }
        s
    }
}

/// `T(xi) = chi(xi)|xi|^{1/2}(1 + kappa xi^2)^{1/2}`.
pub fn t_symbol(kappa: f64, xi: f64) -> f64 {
    chi(xi) * xi.abs().sqrt() * (1.0 + kappa * xi * xi).sqrt()
}

/// `d_xi T` including the cut-off derivative.
pub fn t_symbol_d(kappa: f64, xi: f64) -> f64 {
    let a = xi.abs();
    if a == 0.0 {
        return 0.0;
    }
    let root = (1.0 + kappa * xi * xi).sqrt();
    chi(xi) * xi.signum() * (1.0 + 3.0 * kappa * xi * xi) / (2.0 * a.sqrt() * root) + chi_d(xi) * a.sqrt() * root
}

// ---------------------------------------------------------------------------
// symbols

/// Table `a^(l, k, xi)` over angle modes `|l| <= trunc.k_phi`, space modes
/// `|k| <= trunc.n_x` and slots `|xi| <= n_xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSymbol {
    pub trunc: Truncation,
    pub n_xi: usize,
    pub order: f64,
    pub table: Vec<C64>,
}

/// Slots dropped because a shifted slot left the table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OverflowReport {
    pub dropped_slots: Vec<i64>,
}

impl DiscreteSymbol {
    /// `trunc.k_phi` or `trunc.n_x` may be zero here (constant directions).
    pub fn zeros(trunc: Truncation, n_xi: usize, order: f64) -> Self {
        let len = (2 * trunc.k_phi + 1).pow(trunc.nu as u32) * (2 * trunc.n_x + 1) * (2 * n_xi + 1);
        DiscreteSymbol { trunc, n_xi, order, table: vec![c(0.0, 0.0); len] }
    }

    pub fn slots(&self) -> usize {
        2 * self.n_xi + 1
    }

    fn rows(&self) -> usize {
        (2 * self.trunc.k_phi + 1).pow(self.trunc.nu as u32) * (2 * self.trunc.n_x + 1)
    }

    fn row_index(&self, l: &[i64], k: i64) -> Option<usize> {
        if k.abs() > self.trunc.n_x as i64 {
            return None;
        }
        let w = 2 * self.trunc.k_phi + 1;
        let mut p = 0usize;
        for &li in l {
            if li.abs() > self.trunc.k_phi as i64 {
                return None;
            }
            p = p * w + (li + self.trunc.k_phi as i64) as usize;
        }
        Some(p * (2 * self.trunc.n_x + 1) + (k + self.trunc.n_x as i64) as usize)
    }

    fn row_mode(&self, r: usize) -> (Vec<i64>, i64) {
        let nx = 2 * self.trunc.n_x + 1;
        let (mut p, k) = (r / nx, (r % nx) as i64 - self.trunc.n_x as i64);
        let w = 2 * self.trunc.k_phi + 1;
        let mut l = vec![0i64; self.trunc.nu];
        for d in (0..self.trunc.nu).rev() {
            l[d] = (p % w) as i64 - self.trunc.k_phi as i64;
            p /= w;
        }
        (l, k)
    }

    pub fn get(&self, l: &[i64], k: i64, xi: i64) -> C64 {
        if xi.abs() > self.n_xi as i64 {
            return c(0.0, 0.0);
        }
        match self.row_index(l, k) {
            Some(r) => self.table[r * self.slots() + (xi + self.n_xi as i64) as usize],
            None => c(0.0, 0.0),
        }
    }

    pub fn set(&mut self, l: &[i64], k: i64, xi: i64, v: C64) {
        let r = self.row_index(l, k).expect("symbol mode outside table");
        let s = self.slots();
        self.table[r * s + (xi + self.n_xi as i64) as usize] = v;
    }

    fn row(&self, r: usize) -> &[C64] {
        let s = self.slots();
        &self.table[r * s..(r + 1) * s]
    }

    /// Sample `f(phi, x, xi)` slot by slot.
    pub fn from_fn(trunc: Truncation, n_xi: usize, order: f64, f: impl Fn(&[f64], f64, i64) -> C64) -> Self {
        let mut s = Self::zeros(trunc, n_xi, order);
        for xi in -(n_xi as i64)..=(n_xi as i64) {
            let u = TorusField::from_fn(trunc, |p, x| f(p, x, xi));
            for (l, k, v) in u.modes() {
                s.set(&l, k, xi, v);
            }
        }
        s
    }

    /// A function of `(phi, x)` viewed as an order-0 symbol.
    pub fn function(u: &TorusField, n_xi: usize) -> Self {
        let mut s = Self::zeros(u.trunc, n_xi, 0.0);
        for (l, k, v) in u.modes() {
            for xi in -(n_xi as i64)..=(n_xi as i64) {
                s.set(&l, k, xi, v);
            }
        }
        s
    }

    /// Space-frequency slice as the field `(l, k) -> a^(l, k, xi)`.
    pub fn slot_field(&self, xi: i64) -> TorusField {
        let t = Truncation { nu: self.trunc.nu, k_phi: self.trunc.k_phi, n_x: self.trunc.n_x };
        let mut u = TorusField::zeros(t);
        for r in 0..self.rows() {
            let (l, k) = self.row_mode(r);
            u.coeffs[r] = self.get(&l, k, xi);
            let _ = k;
        }
        u
    }

    /// `||a(., ., xi)||_s` for every slot.
    pub fn slot_norms(&self, s: f64) -> Vec<(i64, f64)> {
        (-(self.n_xi as i64)..=(self.n_xi as i64)).map(|xi| (xi, self.slot_field(xi).sobolev_norm(s))).collect()
    }

    fn same_shape(&self, o: &Self) -> bool {
        self.trunc == o.trunc && self.n_xi == o.n_xi
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        if !self.same_shape(o) {
            return Err(Error::Dimension("symbol tables differ".into()));
        }
        let mut s = self.clone();
        s.table.iter_mut().zip(&o.table).for_each(|(a, b)| *a += b);
        s.order = self.order.max(o.order);
        Ok(s)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        let mut neg = o.clone();
        neg.table.iter_mut().for_each(|z| *z = -*z);
        self.add(&neg)
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut s = self.clone();
        s.table.iter_mut().for_each(|z| *z *= a);
        s
    }

    /// Embed into a larger table (zero padding in `(l, k)`, cropping slots).
    pub fn resize(&self, trunc: Truncation, n_xi: usize) -> Self {
        let mut s = Self::zeros(trunc, n_xi, self.order);
        for r in 0..self.rows() {
            let (l, k) = self.row_mode(r);
            if s.row_index(&l, k).is_none() {
                continue;
            }
            for xi in -(n_xi.min(self.n_xi) as i64)..=(n_xi.min(self.n_xi) as i64) {
                let v = self.get(&l, k, xi);
                s.set(&l, k, xi, v);
            }
        }
        s
    }

    pub fn max_abs(&self) -> f64 {
        self.table.iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

fn sum_trunc(a: Truncation, b: Truncation) -> Truncation {
    Truncation { nu: a.nu, k_phi: a.k_phi + b.k_phi, n_x: a.n_x + b.n_x }
}

/// `A_{(l,j)}^{(l',j')} = a^(l-l', j-j', j')`.
pub fn quantize(a: &DiscreteSymbol, op: Truncation) -> Result<LinearOperator> {
    if a.trunc.nu != op.nu {
        return Err(Error::Dimension(format!("symbol nu={} vs operator nu={}", a.trunc.nu, op.nu)));
    }
    if a.n_xi < op.n_x {
        return Err(Error::Dimension(format!("symbol slots |xi| <= {} do not cover |j| <= {}", a.n_xi, op.n_x)));
    }
    let nx = op.x_count();
    let mut m = CMat::zeros(op.len(), op.len());
    for p in 0..op.phi_count() {
        let l = op.phi_mode(p);
        for q in 0..op.phi_count() {
            let lp = op.phi_mode(q);
            let dl: Vec<i64> = l.iter().zip(&lp).map(|(x, y)| x - y).collect();
            if dl.iter().any(|x| x.abs() > a.trunc.k_phi as i64) {
                continue;
            }
            for r in 0..nx {
                let j = r as i64 - op.n_x as i64;
                for s in 0..nx {
                    let jp = s as i64 - op.n_x as i64;
                    m[(p * nx + r, q * nx + s)] = a.get(&dl, j - jp, jp);
                }
            }
        }
    }
    Ok(LinearOperator { trunc: op, mat: m })
}

/// Direct action `(Au)(phi, x) = sum a(phi, x, j) u_{l', j} e^{i(l'.phi + jx)}`,
/// truncated to the field's box.
pub fn act(a: &DiscreteSymbol, u: &TorusField) -> Result<TorusField> {
    if a.n_xi < u.trunc.n_x {
        return Err(Error::Dimension("symbol slots do not cover the field".into()));
    }
    let mut out = TorusField::zeros(u.trunc);
    for (lp, jp, v) in u.modes() {
        if v.norm() == 0.0 {
            continue;
        }
        for r in 0..a.rows() {
            let (dl, k) = a.row_mode(r);
            let l: Vec<i64> = lp.iter().zip(&dl).map(|(x, y)| x + y).collect();
            if let Some(i) = u.trunc.index(&l, jp + k) {
                out.coeffs[i] += a.get(&dl, k, jp) * v;
            }
        }
    }
    Ok(out)
}

/// Symbol of `Op(a) Op(b)`: `sum a^(l - l1, k' - k, xi + k) b^(l1, k, xi)`.
pub fn compose_exact(a: &DiscreteSymbol, b: &DiscreteSymbol) -> Result<(DiscreteSymbol, OverflowReport)> {
    if a.trunc.nu != b.trunc.nu {
        return Err(Error::Dimension("symbols with different nu".into()));
    }
    let kb = b.trunc.n_x;
    if a.n_xi < kb {
        return Err(Error::Dimension("slot box of a narrower than the x-modes of b".into()));
    }
    let n_xi = (a.n_xi - kb).min(b.n_xi);
    let report = OverflowReport { dropped_slots: dropped(b.n_xi, n_xi) };
    let mut out = DiscreteSymbol::zeros(sum_trunc(a.trunc, b.trunc), n_xi, a.order + b.order);
    let s_out = out.slots();
    for rb in 0..b.rows() {
        let (l1, k) = b.row_mode(rb);
        for ra in 0..a.rows() {
            let (la, ka) = a.row_mode(ra);
            let l: Vec<i64> = la.iter().zip(&l1).map(|(x, y)| x + y).collect();
            let ro = out.row_index(&l, ka + k).expect("output box");
            for xi in -(n_xi as i64)..=(n_xi as i64) {
                let bv = b.get(&l1, k, xi);
                if bv.norm() == 0.0 {
                    continue;
                }
                out.table[ro * s_out + (xi + n_xi as i64) as usize] += a.get(&la, ka, xi + k) * bv;
            }
        }
    }
    Ok((out, report))
}

fn dropped(n_in: usize, n_out: usize) -> Vec<i64> {
    (-(n_in as i64)..=(n_in as i64)).filter(|x| x.unsigned_abs() as usize > n_out).collect()
}

/// Pointwise-in-`xi` product of symbols (convolution in `(l, k)`).
pub fn product(a: &DiscreteSymbol, b: &DiscreteSymbol) -> Result<DiscreteSymbol> {
    let n_xi = a.n_xi.min(b.n_xi);
    let mut out = DiscreteSymbol::zeros(sum_trunc(a.trunc, b.trunc), n_xi, a.order + b.order);
    let s_out = out.slots();
    for rb in 0..b.rows() {
        let (l1, k) = b.row_mode(rb);
        for ra in 0..a.rows() {
            let (la, ka) = a.row_mode(ra);
            let l: Vec<i64> = la.iter().zip(&l1).map(|(x, y)| x + y).collect();
            let ro = out.row_index(&l, ka + k).expect("output box");
            for xi in -(n_xi as i64)..=(n_xi as i64) {
                out.table[ro * s_out + (xi + n_xi as i64) as usize] += a.get(&la, ka, xi) * b.get(&l1, k, xi);
            }
        }
    }
    Ok(out)
}

/// `d_x^beta` of a symbol.
pub fn dx_pow(a: &DiscreteSymbol, beta: u32) -> DiscreteSymbol {
    let mut s = a.clone();
    let sl = a.slots();
    for r in 0..a.rows() {
        let (_, k) = a.row_mode(r);
        let f = c(0.0, k as f64).powu(beta);
        s.table[r * sl..(r + 1) * sl].iter_mut().for_each(|z| *z *= f);
    }
    s
}

// ---------------------------------------------------------------------------
// quintic spline extension in xi

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |a, b| a * b as f64)
}

/// `r`-th derivative of the centred cardinal quintic B-spline.
fn b5(t: f64, r: u32) -> f64 {
    if t.abs() >= 3.0 {
        return 0.0;
    }
    let p = 5 - r as i32;
    let mut s = 0.0;
    for k in 0..=6u64 {
        let arg = t + 3.0 - k as f64;
        if arg > 0.0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binom(6, k) * arg.powi(p);
        }
    }
    s / factorial(p as u32)
}

/// Quintic interpolating splines through the slot values of every row.
struct SlotSpline {
    n_xi: i64,
    // coefficients for centres -n_xi-2 ..= n_xi+2 per row
    coef: Vec<Vec<C64>>,
}

impl SlotSpline {
    fn new(a: &DiscreteSymbol) -> Self {
        let n = a.n_xi as i64;
        let m = (2 * n + 5) as usize;
        let centre = |i: usize| i as i64 - n - 2;
        let mut sys = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (row, xi) in (-n..=n).enumerate() {
            for i in 0..m {
                sys[(row, i)] = b5((xi - centre(i)) as f64, 0);
            }
        }
        // natural end conditions: third and fourth derivatives vanish
        let extra = [(-n, 3u32), (-n, 4), (n, 3), (n, 4)];
        for (e, (xi, r)) in extra.iter().enumerate() {
            for i in 0..m {
                sys[(2 * n as usize + 1 + e, i)] = b5((xi - centre(i)) as f64, *r);
            }
        }
        let lu = sys.lu();
        let coef = (0..a.rows())
            .map(|r| {
                let row = a.row(r);
                let mut re = nalgebra::DVector::<f64>::zeros(m);
                let mut im = nalgebra::DVector::<f64>::zeros(m);
                for (k, v) in row.iter().enumerate() {
                    re[k] = v.re;
                    im[k] = v.im;
                }
                let re = lu.solve(&re).expect("spline system");
                let im = lu.solve(&im).expect("spline system");
                re.iter().zip(im.iter()).map(|(a, b)| c(*a, *b)).collect()
            })
            .collect();
        SlotSpline { n_xi: n, coef }
    }

    fn eval(&self, row: usize, xi: f64, deriv: u32) -> C64 {
        let lo = (xi - 3.0).floor() as i64 + 1;
        let mut s = c(0.0, 0.0);
        for i in lo..lo + 6 {
            let idx = i + self.n_xi + 2;
            if idx < 0 || idx as usize >= self.coef[row].len() {
                continue;
            }
            s += self.coef[row][idx as usize] * b5(xi - i as f64, deriv);
        }
        s
    }
}

const GAUSS8: [(f64, f64); 8] = [
    (-0.9602898564975363, 0.1012285362903763),
    (-0.7966664774136267, 0.2223810344533745),
    (-0.5255324099163290, 0.3137066458778873),
    (-0.1834346424956498, 0.3626837833783620),
    (0.1834346424956498, 0.3626837833783620),
    (0.5255324099163290, 0.3137066458778873),
    (0.7966664774136267, 0.2223810344533745),
    (0.9602898564975363, 0.1012285362903763),
];

/// `(sum_{beta<N} (1/(beta! i^beta)) d_xi^beta a d_x^beta b, r_N)`, with
/// `d_xi` taken on the quintic spline through the slot values and the
/// remainder integral evaluated by Gauss-Legendre between spline knots.
pub fn compose_asymptotic(
    a: &DiscreteSymbol,
    b: &DiscreteSymbol,
    n_terms: u32,
) -> Result<(DiscreteSymbol, DiscreteSymbol, OverflowReport)> {
    if n_terms == 0 {
        return Err(Error::Precondition("asymptotic expansion needs N >= 1".into()));
    }
    if a.trunc.nu != b.trunc.nu {
        return Err(Error::Dimension("symbols with different nu".into()));
    }
    let kb = b.trunc.n_x;
    if a.n_xi < kb {
        return Err(Error::Dimension("slot box of a narrower than the x-modes of b".into()));
    }
    let n_xi = (a.n_xi - kb).min(b.n_xi);
    let report = OverflowReport { dropped_slots: dropped(b.n_xi, n_xi) };
    let spline = SlotSpline::new(a);
    let tr = sum_trunc(a.trunc, b.trunc);
    let mut expansion = DiscreteSymbol::zeros(tr, n_xi, a.order + b.order);
    let mut remainder = DiscreteSymbol::zeros(tr, n_xi, a.order + b.order - n_terms as f64);
    let s_out = expansion.slots();
    let nn = n_terms as i32;
    for rb in 0..b.rows() {
        let (l1, k) = b.row_mode(rb);
        for ra in 0..a.rows() {
            let (la, ka) = a.row_mode(ra);
            let l: Vec<i64> = la.iter().zip(&l1).map(|(x, y)| x + y).collect();
            let ro = expansion.row_index(&l, ka + k).expect("output box");
            for xi in -(n_xi as i64)..=(n_xi as i64) {
                let bv = b.get(&l1, k, xi);
                if bv.norm() == 0.0 {
                    continue;
                }
                let slot = ro * s_out + (xi + n_xi as i64) as usize;
                let mut e = c(0.0, 0.0);
                for beta in 0..n_terms {
                    let d = if beta == 0 { a.get(&la, ka, xi) } else { spline.eval(ra, xi as f64, beta) };
                    e += d * (k as f64).powi(beta as i32) / factorial(beta);
                }
                expansion.table[slot] += e * bv;
                if k != 0 {
                    // integral over tau in pieces where xi + tau k crosses no knot
                    let pieces = k.unsigned_abs() as usize;
                    let mut integral = c(0.0, 0.0);
                    for p in 0..pieces {
                        let (t0, t1) = (p as f64 / pieces as f64, (p + 1) as f64 / pieces as f64);
                        for (x, w) in GAUSS8 {
                            let tau = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * x;
                            let wt = 0.5 * (t1 - t0) * w * (1.0 - tau).powi(nn - 1);
                            integral += spline.eval(ra, xi as f64 + tau * k as f64, n_terms) * wt;
                        }
                    }
                    let pref = (k as f64).powi(nn) / factorial(n_terms - 1);
                    remainder.table[slot] += integral * pref * bv;
                }
            }
        }
    }
    Ok((expansion, remainder, report))
}

/// Symbol of the `L^2` adjoint: `a*(l, k, xi) = conj a^(-l, -k, xi + k)`.
pub fn adjoint(a: &DiscreteSymbol) -> Result<(DiscreteSymbol, OverflowReport)> {
    let kx = a.trunc.n_x;
    if a.n_xi < kx {
        return Err(Error::Dimension("slot box narrower than x-modes".into()));
    }
    let n_xi = a.n_xi - kx;
    let report = OverflowReport { dropped_slots: dropped(a.n_xi, n_xi) };
    let mut out = DiscreteSymbol::zeros(a.trunc, n_xi, a.order);
    for r in 0..a.rows() {
        let (l, k) = a.row_mode(r);
        let ln: Vec<i64> = l.iter().map(|x| -x).collect();
        for xi in -(n_xi as i64)..=(n_xi as i64) {
            out.set(&l, k, xi, a.get(&ln, -k, xi + k).conj());
        }
    }
    Ok((out, report))
}

/// `(-i{a, b}, r_2)` where the symbol of `[Op a, Op b]` is their sum.
pub fn moyal(a: &DiscreteSymbol, b: &DiscreteSymbol) -> Result<(DiscreteSymbol, DiscreteSymbol, OverflowReport)> {
    let (ea, ra, rep_a) = compose_asymptotic(a, b, 2)?;
    let (eb, rb, rep_b) = compose_asymptotic(b, a, 2)?;
    let n_xi = ea.n_xi.min(eb.n_xi);
    let tr = ea.trunc;
    let ea = ea.resize(tr, n_xi);
    let eb = eb.resize(tr, n_xi);
    let bracket = ea.sub(&eb)?;
    let rem = ra.resize(tr, n_xi).sub(&rb.resize(tr, n_xi))?;
    let mut slots = rep_a.dropped_slots;
    slots.extend(rep_b.dropped_slots);
    slots.sort();
    slots.dedup();
    let mut br = bracket;
    br.order = a.order + b.order - 1.0;
    Ok((br, rem, OverflowReport { dropped_slots: slots }))
}

/// Forward slot difference `Delta^beta`.
fn slot_difference(a: &DiscreteSymbol, beta: usize) -> Vec<(i64, TorusField)> {
    let n = a.n_xi as i64;
    (-n..=n - beta as i64)
        .map(|xi| {
            let mut u = a.slot_field(xi + beta as i64).scale(c(0.0, 0.0));
            for i in 0..=beta {
                let w = binom(beta as u64, i as u64) * if (beta - i) % 2 == 0 { 1.0 } else { -1.0 };
                u = u.add(&a.slot_field(xi + i as i64).scale(c(w, 0.0)));
            }
            (xi, u)
        })
        .collect()
}

/// `max_{beta <= alpha} sup_xi ||Delta^beta a(., ., xi)||_s <xi>^{-m + beta}`.
pub fn psido_norm(a: &DiscreteSymbol, m: f64, s: f64, alpha: usize) -> f64 {
    let mut best: f64 = 0.0;
    for beta in 0..=alpha.min(2 * a.n_xi) {
        for (xi, u) in slot_difference(a, beta) {
            let w = (xi.abs().max(1) as f64).powf(-m + beta as f64);
            best = best.max(u.sobolev_norm(s) * w);
        }
    }
    best
}

/// Log-log slope of slot norms over `xi` in `[lo, hi]` (positive slots).
pub fn slot_decay_exponent(a: &DiscreteSymbol, s: f64, lo: i64, hi: i64) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .slot_norms(s)
        .into_iter()
        .filter(|(xi, _)| *xi >= lo && *xi <= hi)
        .map(|(xi, v)| (xi as f64, v))
        .unzip();
    linalg::loglog_slope(&xs, &ys)
}

// ---------------------------------------------------------------------------
// Hilbert transform and integral kernels

pub fn hilbert(u: &TorusField) -> TorusField {
    u.hilbert()
}

/// Kernel sampled on an `m x m` grid; `(Ku)(x) = (1/2pi) int K(x, y) u(y) dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegralKernel {
    pub m: usize,
    pub values: Vec<C64>,
}

impl IntegralKernel {
    pub fn from_fn(m: usize, f: impl Fn(f64, f64) -> C64) -> Self {
        let mut values = Vec::with_capacity(m * m);
        for a in 0..m {
            let x = 2.0 * PI * a as f64 / m as f64;
            for b in 0..m {
                let y = 2.0 * PI * b as f64 / m as f64;
                values.push(f(x, y));
            }
        }
        IntegralKernel { m, values }
    }

    /// Trapezoid quantization on the modes `|j| <= n`.
    pub fn to_matrix(&self, n: usize) -> CMat {
        let m = self.m;
        let d = 2 * n + 1;
        let xs: Vec<f64> = (0..m).map(|i| 2.0 * PI * i as f64 / m as f64).collect();
        let e = |j: i64, x: f64| C64::new((j as f64 * x).cos(), (j as f64 * x).sin());
        // K applied to e^{ij'y}, sampled at x_a
        let mut out = CMat::zeros(d, d);
        for s in 0..d {
            let jp = s as i64 - n as i64;
            let col: Vec<C64> = (0..m)
                .map(|a| (0..m).map(|b| self.values[a * m + b] * e(jp, xs[b])).sum::<C64>() / m as f64)
                .collect();
            for r in 0..d {
                let j = r as i64 - n as i64;
                let v: C64 = col.iter().zip(&xs).map(|(v, x)| v * e(-j, *x)).sum::<C64>() / m as f64;
                out[(r, s)] = v;
            }
        }
        out
    }
}

/// Kernel of `[M_a, H] = aH - Ha`: `(a(x) - a(y)) / tan((x - y)/2)`, with the
/// removable diagonal filled by `2 a'(x)`.  Uses the field's `l = 0` slice.
pub fn commutator_ah_kernel(a: &TorusField) -> IntegralKernel {
    let m = 4 * a.trunc.n_x;
    let zero = vec![0.0; a.trunc.nu];
    let co: Vec<C64> = (-(a.trunc.n_x as i64)..=(a.trunc.n_x as i64)).map(|j| a.get(&vec![0; a.trunc.nu], j)).collect();
    let _ = zero;
    let da: Vec<C64> = co.iter().enumerate().map(|(i, v)| v * c(0.0, i as f64 - a.trunc.n_x as f64)).collect();
    let av: Vec<C64> = (0..m).map(|i| crate::fourier::eval_1d(&co, 2.0 * PI * i as f64 / m as f64)).collect();
    let dav: Vec<C64> = (0..m).map(|i| crate::fourier::eval_1d(&da, 2.0 * PI * i as f64 / m as f64)).collect();
    let mut values = Vec::with_capacity(m * m);
    for p in 0..m {
        for q in 0..m {
            if p == q {
                values.push(dav[p] * 2.0);
            } else {
                let w = 2.0 * PI * (p as f64 - q as f64) / m as f64;
                values.push((av[p] - av[q]) / (0.5 * w).tan());
            }
        }
    }
    IntegralKernel { m, values }
}

/// Matrix `aH - Ha` on `|j| <= n` from the `x`-coefficients of `a`.
pub fn commutator_ah_matrix(a: &TorusField, n: usize) -> CMat {
    let co: Vec<C64> = (-(2 * n as i64)..=(2 * n as i64)).map(|j| a.get(&vec![0; a.trunc.nu], j)).collect();
    let ma = crate::family::toeplitz(&co, n);
    let h = crate::family::hilbert_matrix(n);
    linalg::mul(&ma, &h) - linalg::mul(&h, &ma)
}

// ---------------------------------------------------------------------------
// changes of variables

/// Composition operators `h -> h(phi, x + beta)` and its inverse, built per
/// angle collocation point and returned as dense operators on `trunc`.
pub fn change_of_variable(beta: &TorusField, trunc: Truncation) -> Result<(LinearOperator, LinearOperator)> {
    let grid = crate::grid::Grid::new(trunc.nu, 4 * trunc.k_phi + 1, 8 * trunc.n_x + 1);
    let b = GridFn::from_field(grid, beta);
    let (fw, inv) = change_of_variable_family(&b, trunc.n_x)?;
    Ok((LinearOperator::from_family(&fw, trunc)?, LinearOperator::from_family(&inv, trunc)?))
}

/// Families of the forward and inverse composition matrices on `|j| <= n`.
pub fn change_of_variable_family(beta: &GridFn, n: usize) -> Result<(Family, Family)> {
    let bx = beta.dx().max_abs();
    if bx >= 0.5 {
        return Err(Error::Diffeomorphism(bx));
    }
    let inv = beta.inverse_diffeo_x()?;
    let grid = beta.grid;
    let m = (8 * n + 1).max(grid.m_x);
    let h = (grid.m_x - 1) / 2;
    let fw = Family::from_fn(grid, 1, n, |g| composition_matrix(&beta.x_coeffs(g, h), n, n, m));
    let bw = Family::from_fn(grid, 1, n, |g| composition_matrix(&inv.x_coeffs(g, h), n, n, m));
    Ok((fw, bw))
}

/// Check `<xi>`-weighted decay of operator entries away from the diagonal:
/// returns `max |A_j^{j'}|` for `|j - j'| >= d`, per `d`.
pub fn off_diagonal_profile(a: &CMat, n: usize) -> Vec<f64> {
    let d = 2 * n + 1;
    let mut prof = vec![0.0f64; d];
    for r in 0..d {
        for s in 0..d {
            let k = (r as i64 - s as i64).unsigned_abs() as usize;
            prof[k] = prof[k].max(a[(r, s)].norm());
        }
    }
    prof
}

/// `<l, k>` weight used by slot norms.
pub fn weight(l: &[i64], k: i64) -> f64 {
    bracket(l, k)
}
