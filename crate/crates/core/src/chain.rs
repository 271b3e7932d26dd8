//! Reduction of the linearized operator to constant coefficients up to
//! order-zero remainders.
//!
//! Every step conjugates `L = omega.d_phi + M(phi)` by a transformation built
//! from the current coefficients.  The conjugated operator is computed by
//! brute force (`F^{-1} M F + F^{-1} omega.d_phi F` on the internal cut-off)
//! and compared on an interior window with the operator predicted by the
//! explicit coefficient formulas.  The brute-force operator is what is passed
//! on to the next step.

use crate::error::{Error, Result};
use crate::family::{self, complex_coords, mirror, multiplier, Coords, Family, StructureDefects, Symmetry};
use crate::flow;
use crate::fourier::{box_modes, coeffs_1d, eval_1d};
use crate::grid::{Grid, GridFn};
use crate::linalg::{self, c, CMat, C64};
use crate::linop::LinearizedWW;
use crate::psido::{chi0, t_symbol, t_symbol_d, FourierMultiplier};
use crate::spectral::dot;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Debug, Serialize)]
pub struct ChainConfig {
    /// interior window `|j| <= n_x` on which residuals are measured
    pub n_x: usize,
    /// internal space cut-off (at least `2 n_x`)
    pub n_int: usize,
    pub decouple_steps: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Gauss-Legendre nodes for the Duhamel check of the flow step
    pub quad_nodes: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { n_x: 16, n_int: 32, decouple_steps: 3, gamma: 1e-3, tau: 2.0, quad_nodes: 12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StepKind {
    GoodUnknown,
    Straighten,
    Symmetrize,
    Complexify,
    TimeReparam,
    BlockDecouple(usize),
    Egorov,
    HalfOrder,
}

impl StepKind {
    pub fn label(&self) -> String {
        match self {
            StepKind::BlockDecouple(n) => format!("BlockDecouple({n})"),
            k => format!("{k:?}"),
        }
    }
}

/// The transformation of a step.
#[derive(Clone, Debug)]
pub enum Transform {
    /// acts slice by slice on the space modes
    Slicewise { forward: Family, inverse: Family },
    /// `h(phi) -> h(phi + omega p(phi))`, dense on the angle modes `|l| <= K`
    AngleShift { p: Vec<f64>, forward: CMat, inverse: CMat },
}

#[derive(Clone, Debug)]
pub struct ConjugationStep {
    pub kind: StepKind,
    pub coords: Coords,
    pub transform: Transform,
    /// angle-dependent part of the conjugated operator
    pub output: Family,
    pub residual: f64,
    pub tolerance: f64,
    /// `max |forward inverse - Id|` on the window
    pub identity_defect: f64,
    pub forward_structure: StructureDefects,
    pub output_structure: StructureDefects,
    /// `true` when the transformation is exactly the identity
    pub is_identity: bool,
    /// `max |forward - Id|` (largest `|p|` for the angle shift)
    pub transform_deviation: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl ConjugationStep {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }

    pub fn report(&self) -> StepReport {
        StepReport {
            name: self.kind.label(),
            residual: self.residual,
            tolerance: self.tolerance,
            pass: self.passed(),
            identity_defect: self.identity_defect,
            forward_structure: self.forward_structure.max(),
            output_structure: self.output_structure.max(),
            is_identity: self.is_identity,
            transform_deviation: self.transform_deviation,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub identity_defect: f64,
    pub forward_structure: f64,
    pub output_structure: f64,
    pub is_identity: bool,
    pub transform_deviation: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct ReductionConstants {
    pub m3_phi: Vec<f64>,
    pub m3: f64,
    pub m1: f64,
    /// `m1` by direct quadrature in the original variables
    pub m1_oracle: f64,
    pub coeffs: BTreeMap<String, GridFn>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalSpectrum {
    pub j: Vec<i64>,
    /// imaginary parts of the angle-averaged diagonal entries
    pub mu: Vec<f64>,
    /// `m3 T(j) + m1 |j|^{1/2}`
    pub predicted: Vec<f64>,
    pub max_deviation: f64,
    /// window operator norm of the final operator minus its normal form
    pub remainder_norm: f64,
    /// the same with the zero mode removed
    pub remainder_norm_nonzero: f64,
    pub diagonal_remainder_order: f64,
    pub offdiagonal_order: f64,
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub omega: Vec<f64>,
    pub kappa: f64,
    pub config: ChainConfig,
    pub steps: Vec<ConjugationStep>,
    pub constants: ReductionConstants,
    pub spectrum: FinalSpectrum,
}

impl Chain {
    pub fn reports(&self) -> Vec<StepReport> {
        self.steps.iter().map(|s| s.report()).collect()
    }

    pub fn step(&self, kind: StepKind) -> Option<&ConjugationStep> {
        self.steps.iter().find(|s| s.kind == kind)
    }

    pub fn final_operator(&self) -> &Family {
        &self.steps.last().expect("empty chain").output
    }
}

// ---------------------------------------------------------------------------
// small helpers

fn cm(v: f64) -> C64 {
    c(v, 0.0)
}

/// Multiplication family; constant slices give exact multiples of the identity.
fn mult(f: &GridFn, n: usize) -> Family {
    Family::from_fn(f.grid, 1, n, |g| {
        let s = f.slice(g);
        if s.iter().all(|v| *v == s[0]) {
            CMat::identity(2 * n + 1, 2 * n + 1) * cm(s[0])
        } else {
            family::mult_matrix(s, n)
        }
    })
}

fn konst(grid: Grid, m: &CMat) -> Family {
    Family::constant(grid, 1, (m.nrows() - 1) / 2, m)
}

fn blocks(a: &Family, b: &Family, cc: &Family, d: &Family) -> Family {
    Family::from_blocks(2, &[a, b, cc, d])
}

fn is_angle_constant(f: &Family) -> bool {
    f.mats.iter().all(|m| m == &f.mats[0])
}

/// `F^{-1} (M F + omega.d_phi F)`, i.e. the angle part of `F^{-1} L F`.
pub fn conjugate(m: &Family, f: &Family, finv: &Family, omega: &[f64]) -> Family {
    let mut inner = m.mul(f);
    if !is_angle_constant(f) {
        inner = inner.add(&f.omega_dphi(omega));
    }
    finv.mul(&inner)
}

fn mirror_family(f: &Family) -> Family {
    f.map(|_, m| mirror(m))
}

fn identity_defect(f: &Family, finv: &Family, window: usize) -> f64 {
    let p = f.mul(finv).restrict(window);
    let id = Family::identity(p.grid, p.nb, p.n);
    p.sub(&id).max_abs()
}

fn is_identity(f: &Family) -> bool {
    let d = f.dim();
    f.mats.iter().all(|m| *m == CMat::identity(d, d))
}

fn all_zero(f: &GridFn) -> bool {
    f.data.iter().all(|v| *v == 0.0)
}

/// `f(y + t(y))`, exact when the displacement vanishes.
fn compose_or_clone(f: &GridFn, t: &GridFn) -> GridFn {
    if all_zero(t) {
        f.clone()
    } else {
        f.compose_x(t)
    }
}

/// Phi-only function broadcast in `x`.
fn phi_fn(grid: Grid, vals: &[f64]) -> GridFn {
    let mut data = Vec::with_capacity(grid.len());
    for v in vals {
        data.extend(std::iter::repeat_n(*v, grid.m_x));
    }
    GridFn { grid, data }
}

/// Trigonometric interpolant of a phi-only function.
struct PhiInterp {
    modes: Vec<(Vec<i64>, C64)>,
}

impl PhiInterp {
    fn new(f: &GridFn) -> Self {
        let spec = f.phi_spectrum();
        let modes = (0..f.grid.n_slices()).map(|g| (f.grid.phi_mode_of_bin(g), spec[0][g])).collect();
        PhiInterp { modes }
    }

    fn eval(&self, phi: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(l, a)| {
                let t: f64 = l.iter().zip(phi).map(|(k, x)| *k as f64 * x).sum();
                (a * C64::new(t.cos(), t.sin())).re
            })
            .sum()
    }

    fn grad(&self, phi: &[f64]) -> Vec<f64> {
        let nu = phi.len();
        let mut g = vec![0.0; nu];
        for (l, a) in &self.modes {
            let t: f64 = l.iter().zip(phi).map(|(k, x)| *k as f64 * x).sum();
            let v = a * C64::new(0.0, 1.0) * C64::new(t.cos(), t.sin());
            for d in 0..nu {
                g[d] += l[d] as f64 * v.re;
            }
        }
        g
    }
}

/// Solves `s + p(theta + omega s) = 0` by Newton's method.
fn inverse_shift(p: &PhiInterp, omega: &[f64], theta: &[f64]) -> Result<f64> {
    let mut s = -p.eval(theta);
    for _ in 0..60 {
        let pt: Vec<f64> = theta.iter().zip(omega).map(|(t, w)| t + w * s).collect();
        let f = s + p.eval(&pt);
        let fp = 1.0 + dot_f(omega, &p.grad(&pt));
        if fp <= 0.0 {
            return Err(Error::Diffeomorphism(1.0 - fp));
        }
        let step = f / fp;
        s -= step;
        if step.abs() < 1e-16 {
            return Ok(s);
        }
    }
    Ok(s)
}

fn dot_f(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    // nodes and weights on [0, 1]
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((1.0 - x) / 2.0, w / 2.0));
    }
    out
}

/// Largest column norm of block `(r, s)` at slot `xi` over slices, on `|j| <= window`.
pub fn slot_norm(f: &Family, r: usize, s: usize, xi: i64, window: usize) -> f64 {
    let b = f.block(r, s).restrict(window);
    let col = (xi + window as i64) as usize;
    b.mats.iter().map(|m| m.column(col).norm()).fold(0.0, f64::max)
}

/// Slope of the column norms of block `(r, s)` over slots `lo..=hi`, max over slices.
pub fn block_order(f: &Family, r: usize, s: usize, lo: usize, hi: usize, window: usize) -> f64 {
    let b = f.block(r, s).restrict(window);
    let d = 2 * window + 1;
    let mut avg = CMat::zeros(d, d);
    // fit the slice-wise envelope: largest entries across slices
    for m in &b.mats {
        for i in 0..d {
            for j in 0..d {
                if m[(i, j)].norm() > avg[(i, j)].norm() {
                    avg[(i, j)] = m[(i, j)];
                }
            }
        }
    }
    flow::column_order(&avg, window, lo, hi)
}

// ---------------------------------------------------------------------------
// the reducer

/// Step-by-step driver carrying the operator and the coefficient fields.
pub struct Reducer {
    pub omega: Vec<f64>,
    pub kappa: f64,
    pub config: ChainConfig,
    pub grid: Grid,
    pub n: usize,
    pub current: Family,
    pub coords: Coords,
    pub coeffs: BTreeMap<String, GridFn>,
    remainders: BTreeMap<String, Family>,
    pub m3_phi: Vec<f64>,
    pub m3: f64,
    pub m1: f64,
    pub m1_oracle: f64,
}

struct Ops {
    d: CMat,
    abs: CMat,
    h: CMat,
    half: CMat,
    t: CMat,
    g: CMat,
    ginv: CMat,
    pi0: CMat,
}

impl Ops {
    fn new(n: usize, kappa: f64) -> Self {
        let g = FourierMultiplier::g(kappa).matrix(n);
        let ginv = multiplier(n, |j| cm(1.0) / FourierMultiplier::g(kappa).eval(j as f64));
        Ops {
            d: family::dx_matrix(n),
            abs: multiplier(n, |j| cm(j.abs() as f64)),
            h: family::hilbert_matrix(n),
            half: multiplier(n, |j| cm((j.abs() as f64).sqrt())),
            t: multiplier(n, |j| cm(t_symbol(kappa, j as f64))),
            g,
            ginv,
            pi0: family::pi0_matrix(n),
        }
    }
}

impl Reducer {
    /// Starts from an assembled linearized operator (real coordinates).
    pub fn new(l: &LinearizedWW, config: ChainConfig) -> Result<Self> {
        if l.n() < 2 * config.n_x {
            return Err(Error::Dimension(format!("internal cut-off {} below 2 n_x = {}", l.n(), 2 * config.n_x)));
        }
        if l.grid().m_x < 4 * l.n() + 1 {
            return Err(Error::Dimension(format!("m_x = {} cannot resolve products on |j| <= {}", l.grid().m_x, l.n())));
        }
        let mut coeffs = BTreeMap::new();
        coeffs.insert("eta".into(), l.eta.clone());
        coeffs.insert("B".into(), l.b.clone());
        coeffs.insert("V".into(), l.v.clone());
        coeffs.insert("c".into(), l.c.clone());
        let mut remainders = BTreeMap::new();
        remainders.insert("G".into(), l.dn.clone());
        Ok(Reducer {
            omega: l.omega.clone(),
            kappa: l.kappa,
            config,
            grid: l.grid(),
            n: l.n(),
            current: l.family.clone(),
            coords: Coords::Real,
            coeffs,
            remainders,
            m3_phi: vec![],
            m3: 1.0,
            m1: 0.0,
            m1_oracle: 0.0,
        })
    }

    /// Starts at the Egorov step from `diag(P, mirror P)` in complex coordinates,
    /// `P = i m3 T + a11 d_x + i a12 H |D|^{1/2}`.
    pub fn transport_form(omega: &[f64], kappa: f64, m3: f64, a11: &GridFn, a12: &GridFn, config: ChainConfig) -> Self {
        let grid = a11.grid;
        let n = config.n_int;
        let o = Ops::new(n, kappa);
        let hh = linalg::mul(&o.h, &o.half);
        let p = konst(grid, &(&o.t * c(0.0, m3)))
            .add(&mult(a11, n).rmul(&o.d))
            .add(&mult(a12, n).rmul(&hh).scale(c(0.0, 1.0)));
        let current = Family::diag2(&p, &mirror_family(&p));
        let mut coeffs = BTreeMap::new();
        coeffs.insert("a11".into(), a11.clone());
        coeffs.insert("a12".into(), a12.clone());
        Reducer {
            omega: omega.to_vec(),
            kappa,
            config,
            grid,
            n,
            current,
            coords: Coords::Complex,
            coeffs,
            remainders: BTreeMap::new(),
            m3_phi: vec![m3; grid.n_slices()],
            m3,
            m1: 0.0,
            m1_oracle: f64::NAN,
        }
    }

    fn coef(&self, name: &str) -> &GridFn {
        &self.coeffs[name]
    }

    fn put(&mut self, name: &str, f: GridFn) {
        self.coeffs.insert(name.into(), f);
    }

    fn ops(&self) -> Ops {
        Ops::new(self.n, self.kappa)
    }

    fn w(&self) -> usize {
        self.config.n_x
    }

    fn konst(&self, m: &CMat) -> Family {
        konst(self.grid, m)
    }

    fn zero1(&self) -> Family {
        Family::zeros(self.grid, 1, self.n)
    }

    fn finish(
        &mut self,
        kind: StepKind,
        transform: Transform,
        output: Family,
        residual: f64,
        tolerance: f64,
        mut diagnostics: BTreeMap<String, f64>,
    ) -> ConjugationStep {
        let (identity_defect, mut forward_structure, is_id, deviation) = match &transform {
            Transform::Slicewise { forward, inverse } => (
                identity_defect(forward, inverse, self.w()),
                family::structure_defects(forward, self.coords, Symmetry::ReversibilityPreserving),
                is_identity(forward),
                forward.sub(&Family::identity(forward.grid, forward.nb, forward.n)).max_abs(),
            ),
            Transform::AngleShift { p, forward, inverse } => {
                let k = forward.nrows();
                let prod = linalg::mul(forward, inverse);
                let kk = (k - 1) / 2;
                let inner = family::restrict(&prod, kk, kk / 2);
                let dd = linalg::max_abs(&(inner - CMat::identity(2 * (kk / 2) + 1, 2 * (kk / 2) + 1)));
                // parity of p stands in for reversibility preservation
                let odd = (0..self.grid.n_slices())
                    .map(|g| (p[self.grid.phi_neg(g)] + p[g]).abs())
                    .fold(0.0, f64::max);
                let scale = p.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
                let zero = p.iter().all(|v| *v == 0.0);
                let rev = if zero { 0.0 } else { odd / scale };
                (dd, StructureDefects { real: 0.0, even: 0.0, reversible: rev }, zero, if zero { 0.0 } else { scale })
            }
        };
        let w = self.w();
        let output_structure = family::structure_defects(&output.restrict(w), self.coords, Symmetry::Reversible);
        if kind == StepKind::Complexify {
            // the map changes coordinates: it is structure preserving iff real
            // reversible input goes to a real reversible complex operator
            forward_structure = output_structure.clone();
        }
        diagnostics.insert("output_window_norm".into(), output.graded_norm(2.0, w));
        self.current = output.clone();
        ConjugationStep {
            kind,
            coords: self.coords,
            transform,
            output,
            residual,
            tolerance,
            identity_defect,
            forward_structure,
            output_structure,
            is_identity: is_id,
            transform_deviation: deviation,
            diagnostics,
        }
    }

    // -- good unknown ------------------------------------------------------

    pub fn good_unknown(&mut self) -> ConjugationStep {
        let n = self.n;
        let o = self.ops();
        let (b, v, cc) = (self.coef("B").clone(), self.coef("V").clone(), self.coef("c").clone());
        let a = b.omega_dphi(&self.omega).add(&v.mul(&b.dx())).map(|z| 1.0 + z);
        let mb = mult(&b, n);
        let id = Family::identity(self.grid, 1, n);
        let z0 = self.zero1();
        let fw = blocks(&id, &z0, &mb, &id);
        let bw = blocks(&id, &z0, &mb.scale(cm(-1.0)), &id);
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        let g = self.remainders["G"].clone();
        let mv = mult(&v, n);
        let l11 = mv.lmul(&o.d);
        let l12 = g.scale(cm(-1.0));
        let l21 = mult(&a, n).sub(&mult(&cc, n).lmul(&o.d).rmul(&o.d).scale(cm(self.kappa)));
        let l22 = mv.rmul(&o.d);
        let explicit = blocks(&l11, &l12, &l21, &l22);
        let residual = brute.sub(&explicit).graded_norm(2.0, self.w());
        let mut diag = BTreeMap::new();
        diag.insert("a_minus_1".into(), a.map(|z| z - 1.0).max_abs());
        self.put("a", a);
        self.finish(StepKind::GoodUnknown, Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-9, diag)
    }

    // -- straightening of the highest order ---------------------------------

    pub fn straighten(&mut self) -> Result<ConjugationStep> {
        let n = self.n;
        let o = self.ops();
        let cc = self.coef("c").clone();
        if cc.min() <= 0.0 {
            return Err(Error::Precondition("c must be positive".into()));
        }
        let cinv3 = cc.map(|z| z.powf(-1.0 / 3.0));
        let m = cinv3.mean_x().map(|z| z.powi(-3));
        let src = m.map(|z| z.cbrt()).mul(&cinv3).map(|z| z - 1.0);
        let src_mean = src.mean_x().max_abs();
        let beta = if all_zero(&src) { GridFn::constant(self.grid, 0.0) } else { src.dx_inv() };
        let (bf, bi) = crate::psido::change_of_variable_family(&beta, n)?;
        let bt = beta.inverse_diffeo_x()?;
        let binv = |f: &GridFn| compose_or_clone(f, &bt);

        let (v, a) = (self.coef("V").clone(), self.coef("a").clone());
        let bx = beta.dx();
        let one_bx = bx.map(|z| 1.0 + z);
        let a1 = binv(&beta.omega_dphi(&self.omega).add(&v.mul(&one_bx)));
        let a2 = binv(&v.dx());
        let a3 = binv(&one_bx);
        let a4 = binv(&cc.mul(&one_bx).mul(&one_bx));
        let a5 = binv(&cc.mul(&beta.dxx()).add(&cc.dx().mul(&one_bx)));
        let a6 = binv(&a);

        let fw = Family::diag2(&bf, &bf);
        let bw = Family::diag2(&bi, &bi);
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        let g = &self.remainders["G"];
        let hconj = bi.rmul(&o.h).mul(&bf).sub(&self.konst(&o.h));
        let r_b = mult(&a3, n).rmul(&o.d).mul(&hconj);
        let r_g = g.sub(&self.konst(&o.abs));
        let r1 = r_b.add(&bi.mul(&r_g).mul(&bf)).scale(cm(-1.0));
        let ma1d = mult(&a1, n).rmul(&o.d);
        let l11 = ma1d.add(&mult(&a2, n));
        let l12 = mult(&a3, n).rmul(&o.abs).scale(cm(-1.0)).add(&r1);
        let d2 = linalg::mul(&o.d, &o.d);
        let l21 = mult(&a4, n)
            .rmul(&d2)
            .add(&mult(&a5, n).rmul(&o.d))
            .scale(cm(-self.kappa))
            .add(&mult(&a6, n));
        let explicit = blocks(&l11, &l12, &l21, &ma1d);
        let residual = brute.sub(&explicit).graded_norm(2.0, self.w());

        let a3a4 = a3.mul(&a4);
        let mut diag = BTreeMap::new();
        diag.insert("beta_source_mean".into(), src_mean);
        diag.insert("beta_sup".into(), beta.max_abs());
        diag.insert("sup_beta_x".into(), bx.max_abs());
        diag.insert("a3a4_x_variation".into(), a3a4.x_variation());
        diag.insert("a3a4_minus_m".into(), a3a4.sub(&m).max_abs());
        for (k, f) in [("beta", beta), ("m", m), ("a1", a1), ("a2", a2), ("a3", a3), ("a4", a4), ("a5", a5), ("a6", a6)] {
            self.put(k, f);
        }
        self.remainders.insert("R1".into(), r1);
        Ok(self.finish(StepKind::Straighten, Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-7, diag))
    }

    // -- symmetrization -----------------------------------------------------

    pub fn symmetrize(&mut self) -> Result<ConjugationStep> {
        let n = self.n;
        let o = self.ops();
        let (a1, a2, a3, a4, a5, a6) = (
            self.coef("a1").clone(),
            self.coef("a2").clone(),
            self.coef("a3").clone(),
            self.coef("a4").clone(),
            self.coef("a5").clone(),
            self.coef("a6").clone(),
        );
        if a3.min() <= 0.0 || a4.min() <= 0.0 {
            return Err(Error::Precondition("a3, a4 must be positive".into()));
        }
        let q = a4.div(&a3).map(f64::sqrt);
        let a3q = a3.mul(&q);
        let m3f = a3q.mean_x();
        let m3_phi = m3f.phi_values();
        // independent quadrature of ((1/2pi) int sqrt(1 + eta_x^2))^{-3/2}
        let eta = self.coef("eta").clone();
        let oracle = eta.dx().map(|e| (1.0 + e * e).sqrt()).mean_x().map(|z| z.powf(-1.5));
        let kap = self.kappa;
        let sk = kap.sqrt();
        let qx = q.dx();
        let a7 = a3.mul(&qx).scale(-1.0);
        let a8 = a5.div(&q).scale(-kap);
        let b9 = a6.div(&q).sub(&m3f);
        let b10 = q.omega_dphi(&self.omega).add(&a1.mul(&qx)).div(&q);
        let a9 = a7.scale(sk).add(&a8.scale(1.0 / sk)).scale(-0.5);
        let a10 = a7.scale(sk).sub(&a8.scale(1.0 / sk)).scale(0.5);

        let id = Family::identity(self.grid, 1, n);
        let z0 = self.zero1();
        let mq = mult(&q, n);
        let mqi = mult(&q.map(|z| 1.0 / z), n);
        let fw = Family::diag2(&id, &mq.rmul(&o.g));
        let bw = Family::diag2(&id, &mqi.lmul(&o.ginv));
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        let ma3 = mult(&a3, n);
        let hq = mq.lmul(&o.h).sub(&mq.rmul(&o.h));
        let mqx = mult(&qx, n);
        let hqx = mqx.lmul(&o.h).sub(&mqx.rmul(&o.h));
        let r1 = &self.remainders["R1"];
        let r2 = r1.mul(&mq).sub(&ma3.mul(&hq).rmul(&o.d)).sub(&ma3.mul(&hqx));
        let (ma1, ma7, ma8) = (mult(&a1, n), mult(&a7, n), mult(&a8, n));
        let g_half = &o.g - &o.half * cm(sk);
        let r3b = ma7.rmul(&linalg::mul(&o.h, &g_half)).add(&r2.rmul(&o.g));
        let half_h = linalg::mul(&o.half, &o.h);
        let r3c = ma8
            .rmul(&o.d)
            .lmul(&o.ginv)
            .add(&ma8.rmul(&half_h).scale(cm(1.0 / sk)))
            .add(&mult(&b9, n).lmul(&o.ginv));
        let comm = ma1.lmul(&o.ginv).sub(&ma1.rmul(&o.ginv));
        let r3d = comm.rmul(&linalg::mul(&o.d, &o.g)).add(&mult(&b10, n).lmul(&o.ginv).rmul(&o.g));
        let m3fam = mult(&m3f, n);
        let ma1d = ma1.rmul(&o.d);
        let l11 = ma1d.add(&mult(&a2, n));
        let l12 = m3fam.rmul(&o.t).scale(cm(-1.0)).add(&ma7.rmul(&linalg::mul(&o.h, &o.half)).scale(cm(sk))).add(&r3b);
        let l21 = m3fam
            .rmul(&o.t)
            .sub(&ma8.rmul(&half_h).scale(cm(1.0 / sk)))
            .add(&m3fam.rmul(&o.pi0))
            .add(&r3c);
        let l22 = ma1d.add(&r3d);
        let explicit = blocks(&l11, &l12, &l21, &l22);
        let residual = brute.sub(&explicit).graded_norm(2.0, self.w());
        let _ = z0;

        let mut diag = BTreeMap::new();
        diag.insert("m3_x_variation".into(), a3q.x_variation());
        diag.insert("m3_oracle_defect".into(), m3f.sub(&oracle).max_abs());
        diag.insert("q_minus_1".into(), q.map(|z| z - 1.0).max_abs());
        self.m3_phi = m3_phi;
        for (k, f) in [("q", q), ("m3", m3f), ("a7", a7), ("a8", a8), ("b9", b9), ("b10", b10), ("a9", a9), ("a10", a10)] {
            self.put(k, f);
        }
        for (k, f) in [("R3B", r3b), ("R3C", r3c), ("R3D", r3d)] {
            self.remainders.insert(k.into(), f);
        }
        Ok(self.finish(StepKind::Symmetrize, Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-8, diag))
    }

    // -- complex coordinates ------------------------------------------------

    pub fn complexify(&mut self) -> ConjugationStep {
        let n = self.n;
        let o = self.ops();
        let (cmat, cinv) = complex_coords(n);
        let fw = self.konst(&cinv);
        let bw = self.konst(&cmat);
        let fw = Family { nb: 2, n, ..fw };
        let bw = Family { nb: 2, n, ..bw };
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        let ii = c(0.0, 1.0);
        let half = cm(0.5);
        let m3fam = mult(self.coef("m3"), n);
        let (r3b, r3c, r3d) = (&self.remainders["R3B"], &self.remainders["R3C"], &self.remainders["R3D"]);
        let ma2 = mult(self.coef("a2"), n);
        let pi_part = m3fam.rmul(&o.pi0).scale(ii * half);
        let r_i = ma2.add(r3d).sub(&r3b.scale(ii)).add(&r3c.scale(ii)).scale(half).add(&pi_part);
        let r_ii = ma2.sub(r3d).add(&r3b.scale(ii)).add(&r3c.scale(ii)).scale(half).add(&pi_part);
        let hh = linalg::mul(&o.h, &o.half);
        let p = mult(self.coef("a1"), n)
            .rmul(&o.d)
            .add(&m3fam.rmul(&o.t).scale(ii))
            .add(&mult(self.coef("a9"), n).rmul(&hh).scale(ii))
            .add(&r_i);
        let q = mult(self.coef("a10"), n).rmul(&hh).scale(ii).add(&r_ii);
        let explicit = blocks(&p, &q, &mirror_family(&q), &mirror_family(&p));
        let residual = brute.sub(&explicit).graded_norm(2.0, self.w());
        self.remainders.insert("R3I".into(), r_i);
        self.remainders.insert("R3II".into(), r_ii);
        self.coords = Coords::Complex;
        let mut diag = BTreeMap::new();
        diag.insert("complex_real_defect".into(), family::structure_defects(&brute, Coords::Complex, Symmetry::Reversible).real);
        // the coordinate change itself is fixed: record the flat-form defect instead
        self.finish(StepKind::Complexify, Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-9, diag)
    }

    // -- quasi-periodic time reparametrization -------------------------------

    pub fn time_reparam(&mut self) -> Result<ConjugationStep> {
        let grid = self.grid;
        let ns = grid.n_slices();
        let nu = grid.nu;
        let m3v = self.m3_phi.clone();
        let m3bar = m3v.iter().sum::<f64>() / ns as f64;
        let src = phi_fn(grid, &m3v.iter().map(|z| z / m3bar - 1.0).collect::<Vec<_>>());
        let p = if all_zero(&src) {
            GridFn::constant(grid, 0.0)
        } else {
            src.omega_dphi_inv(&self.omega, self.config.gamma, self.config.tau)?
        };
        let pv = p.phi_values();
        let pint = PhiInterp::new(&p);
        let m3int = PhiInterp::new(&phi_fn(grid, &m3v));
        let zero_p = pv.iter().all(|z| *z == 0.0);
        let mut shifts = Vec::with_capacity(ns);
        let mut rho = Vec::with_capacity(ns);
        for g in 0..ns {
            let th = grid.phi_point(g);
            let s = if zero_p { 0.0 } else { inverse_shift(&pint, &self.omega, &th)? };
            let sh: Vec<f64> = self.omega.iter().map(|w| w * s).collect();
            let pt: Vec<f64> = th.iter().zip(&sh).map(|(a, b)| a + b).collect();
            rho.push(if zero_p { m3v[g] / m3bar } else { m3int.eval(&pt) / m3bar });
            shifts.push(sh);
        }
        let rinv: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
        let shift_fn = |f: &GridFn| if zero_p { f.clone() } else { f.compose_phi(&shifts) };
        let out = if zero_p { self.current.clone() } else { self.current.compose_phi(&shifts).scale_slices(&rinv) };
        let scale_fn = |f: GridFn| f.mul(&phi_fn(grid, &rinv));
        let a11 = scale_fn(shift_fn(self.coef("a1")));
        let a12 = scale_fn(shift_fn(self.coef("a9")));

        // dense check on the angle modes
        let k = grid.k_phi();
        let (pf, pinv, rmat) = self.angle_matrices(&pint, &m3int, m3bar, k, zero_p)?;
        let residual = self.reparam_residual(&out, &pf, &pinv, &rmat, k);

        let mut diag = BTreeMap::new();
        diag.insert("m3_bar".into(), m3bar);
        diag.insert("p_sup".into(), p.max_abs());
        diag.insert("p_parity_defect".into(), {
            let s = (0..ns).map(|g| (pv[grid.phi_neg(g)] + pv[g]).abs()).fold(0.0, f64::max);
            s / p.max_abs().max(1e-300)
        });
        diag.insert("rho_minus_1".into(), rho.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max));
        self.m3 = m3bar;
        self.put("p", p);
        self.put("a11", a11);
        self.put("a12", a12);
        let _ = nu;
        let transform = Transform::AngleShift { p: pv, forward: pf, inverse: pinv };
        Ok(self.finish(StepKind::TimeReparam, transform, out, residual, 1e-7, diag))
    }

    /// Dense matrices (modes `|l| <= k`) of `h -> h(phi + omega p)`, its inverse
    /// and multiplication by `rho^{-1}`.
    fn angle_matrices(&self, p: &PhiInterp, m3: &PhiInterp, m3bar: f64, k: usize, zero: bool) -> Result<(CMat, CMat, CMat)> {
        let nu = self.grid.nu;
        let modes = box_modes(&vec![k; nu]);
        let nm = modes.len();
        if zero {
            let id = CMat::identity(nm, nm);
            return Ok((id.clone(), id.clone(), id));
        }
        let mf = 8 * k + 1;
        let pts = box_modes(&vec![(mf - 1) / 2; nu])
            .into_iter()
            .map(|ix| ix.iter().map(|i| 2.0 * PI * (*i + (mf as i64 - 1) / 2) as f64 / mf as f64).collect::<Vec<f64>>())
            .collect::<Vec<_>>();
        let npts = pts.len() as f64;
        let mut fw = CMat::zeros(nm, nm);
        let mut bw = CMat::zeros(nm, nm);
        let mut rm = CMat::zeros(nm, nm);
        for phi in &pts {
            let s_fw = p.eval(phi);
            let s_bw = inverse_shift(p, &self.omega, phi)?;
            let at = |s: f64| -> Vec<f64> { phi.iter().zip(&self.omega).map(|(a, w)| a + w * s).collect() };
            let (xf, xb) = (at(s_fw), at(s_bw));
            let rho = m3.eval(&xb) / m3bar;
            for (r, l) in modes.iter().enumerate() {
                let el = {
                    let t: f64 = -l.iter().zip(phi).map(|(a, b)| *a as f64 * b).sum::<f64>();
                    C64::new(t.cos(), t.sin())
                };
                for (q, lp) in modes.iter().enumerate() {
                    let tf: f64 = lp.iter().zip(&xf).map(|(a, b)| *a as f64 * b).sum();
                    let tb: f64 = lp.iter().zip(&xb).map(|(a, b)| *a as f64 * b).sum();
                    let tp: f64 = lp.iter().zip(phi).map(|(a, b)| *a as f64 * b).sum();
                    fw[(r, q)] += el * C64::new(tf.cos(), tf.sin()) / npts;
                    bw[(r, q)] += el * C64::new(tb.cos(), tb.sin()) / npts;
                    rm[(r, q)] += el * C64::new(tp.cos(), tp.sin()) / (npts * rho);
                }
            }
        }
        Ok((fw, bw, rm))
    }

    /// `rho^{-1} P^{-1} L P - L_out` entry by entry on the angle window `|l| <= k/2`.
    fn reparam_residual(&self, out: &Family, pf: &CMat, pinv: &CMat, rmat: &CMat, k: usize) -> f64 {
        let nu = self.grid.nu;
        let modes = box_modes(&vec![k; nu]);
        let nm = modes.len();
        let w = self.w();
        let nb = self.current.nb;
        let d = 2 * self.n + 1;
        let sin = self.current.restrict(w).phi_spectrum();
        let sout = out.restrict(w).phi_spectrum();
        let e = 2 * w + 1;
        let find = |spec: &Vec<(Vec<i64>, CMat)>, l: &[i64]| spec.iter().position(|(m, _)| m.as_slice() == l);
        let interior: Vec<usize> = (0..nm).filter(|&i| modes[i].iter().all(|v| v.unsigned_abs() as usize <= k / 2)).collect();
        let dphi = CMat::from_fn(nm, nm, |r, q| if r == q { c(0.0, dot(&self.omega, &modes[r])) } else { c(0.0, 0.0) });
        let left = linalg::mul(rmat, pinv);
        let _ = d;
        let mut worst: f64 = 0.0;
        for r in 0..nb * e {
            for s in 0..nb * e {
                let toe = |spec: &Vec<(Vec<i64>, CMat)>| {
                    CMat::from_fn(nm, nm, |i, j| {
                        let dl: Vec<i64> = modes[i].iter().zip(&modes[j]).map(|(a, b)| a - b).collect();
                        find(spec, &dl).map(|p| spec[p].1[(r, s)]).unwrap_or(c(0.0, 0.0))
                    })
                };
                let mut a = toe(&sin);
                let mut b = toe(&sout);
                if r == s {
                    a += &dphi;
                    b += &dphi;
                }
                let x = linalg::mul3(&left, &a, pf);
                let js = (s % e) as i64 - w as i64;
                let wt = (js.abs().max(1) as f64).powf(-1.5);
                for &i in &interior {
                    for &j in &interior {
                        worst = worst.max((x[(i, j)] - b[(i, j)]).norm() * wt);
                    }
                }
            }
        }
        worst
    }

    // -- block decoupling ---------------------------------------------------

    pub fn block_decouple(&mut self, step: usize) -> Result<ConjugationStep> {
        let n = self.n;
        let o = self.ops();
        let w = self.w();
        let m3 = self.m3;
        let p = self.current.block(0, 0);
        let q = self.current.block(0, 1);
        // i m3 (T psi + psi T) = -Q chi0, solved entry by entry
        let tj = |i: usize| t_symbol(self.kappa, i as f64 - n as f64);
        let psi = q.map(|_, m| {
            CMat::from_fn(m.nrows(), m.ncols(), |r, s| {
                let den = tj(r) + tj(s);
                let w = chi0(s as f64 - n as f64);
                if den == 0.0 || w == 0.0 {
                    c(0.0, 0.0)
                } else {
                    m[(r, s)] * cm(w) / c(0.0, -m3 * den)
                }
            })
        });
        let z0 = self.zero1();
        let big_psi = blocks(&z0, &psi, &mirror_family(&psi), &z0);
        let nrm = big_psi.op_norm();
        if nrm >= 0.5 {
            return Err(Error::Neumann(nrm));
        }
        let id = Family::identity(self.grid, 2, n);
        let fw = id.add(&big_psi);
        let mut inv_mats = Vec::with_capacity(fw.mats.len());
        for x in &big_psi.mats {
            inv_mats.push(linalg::neumann_inverse(x, 1e-17).map_err(Error::Neumann)?);
        }
        let bw = Family { mats: inv_mats, ..fw.clone() };
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        let dd = Family::diag2(&p, &mirror_family(&p));
        let rr = blocks(&z0, &q, &mirror_family(&q), &z0);
        let mut rstar = dd.mul(&big_psi).sub(&big_psi.mul(&dd)).add(&rr).add(&rr.mul(&big_psi));
        if !is_angle_constant(&big_psi) {
            rstar = rstar.add(&big_psi.omega_dphi(&self.omega));
        }
        let explicit = dd.add(&bw.mul(&rstar));
        let residual = brute.sub(&explicit).graded_norm(2.0, w);

        // homological identity i m3 (T psi + psi T) + Q chi0
        let hom = psi
            .lmul(&o.t)
            .add(&psi.rmul(&o.t))
            .scale(c(0.0, m3))
            .add(&q.rmul(&multiplier(n, |j| cm(chi0(j as f64)))));
        let xi = (w / 2) as i64;
        let mut diag = BTreeMap::new();
        diag.insert("offdiag_slot_before".into(), slot_norm(&self.current, 0, 1, xi, w));
        diag.insert("offdiag_slot_after".into(), slot_norm(&brute, 0, 1, xi, w));
        diag.insert("offdiag_order_before".into(), block_order(&self.current, 0, 1, 2, w, w));
        diag.insert("offdiag_order_after".into(), block_order(&brute, 0, 1, 2, w, w));
        diag.insert("homological_residual".into(), hom.max_abs());
        diag.insert("psi_norm".into(), nrm);
        Ok(self.finish(StepKind::BlockDecouple(step), Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-9, diag))
    }

    // -- Egorov step --------------------------------------------------------

    /// `a13` of the flow expansion for a given generator coefficient `a`.
    fn a13(&self, a11: &GridFn, a: &GridFn) -> GridFn {
        let k = self.m3 * self.kappa.sqrt();
        let ax = a.dx();
        a11.dx().mul(a).scale(0.5).sub(&a11.mul(&ax)).sub(&a.dxx().mul(a).scale(0.375 * k)).add(&ax.mul(&ax).scale(0.75 * k))
    }

    pub fn egorov(&mut self) -> Result<ConjugationStep> {
        let n = self.n;
        let o = self.ops();
        let w = self.w();
        let grid = self.grid;
        let sk = self.kappa.sqrt();
        let m3 = self.m3;
        let a11 = self.coef("a11").clone();
        let a12 = self.coef("a12").clone();
        let a11_mean = a11.mean_x().max_abs();
        let at = if all_zero(&a11) { GridFn::constant(grid, 0.0) } else { a11.dx_inv().scale(2.0 / (3.0 * m3 * sk)) };
        let dphi = |f: &GridFn| if all_zero(f) { f.clone() } else { f.omega_dphi(&self.omega) };
        let at14 = self.a13(&a11, &at).sub(&dphi(&at));
        let m1 = at14.mean();
        let src = at14.mean_x().map(|z| m1 - z);
        let a0 = if all_zero(&src) {
            GridFn::constant(grid, 0.0)
        } else {
            src.omega_dphi_inv(&self.omega, self.config.gamma, self.config.tau)?.scale(-1.0)
        };
        let a = at.add(&a0);
        let a14 = self.a13(&a11, &a).sub(&dphi(&at)).sub(&dphi(&a0));
        let a14_mean_var = a14.mean_x().map(|z| z - m1).max_abs();

        let oracle = self.m1_quadrature();
        let m1_from_a11 = -a11.mul(&a11).mean() / (2.0 * m3 * sk);

        let phi = flow::galerkin_flow(&a, 1.0, n).family;
        let phi_inv = flow::galerkin_flow(&a, -1.0, n).family;
        let big = Family::diag2(&phi, &mirror_family(&phi));
        let big_inv = Family::diag2(&phi_inv, &mirror_family(&phi_inv));
        // L -> Phi L Phi^{-1}
        let brute = conjugate(&self.current, &big_inv, &big, &self.omega);

        // Duhamel: Phi omega.d(Phi^{-1}) = -i int_0^1 Phi(t) (omega.d a)|D|^{1/2} Phi(-t) dt
        let residual = if all_zero(&a) {
            0.0
        } else {
            let spectral = phi.mul(&phi_inv.omega_dphi(&self.omega));
            let da = mult(&dphi(&a), n).rmul(&o.half);
            let mut quad = self.zero1();
            for (t, wt) in gauss_legendre(self.config.quad_nodes) {
                let f = flow::galerkin_flow(&a, t, n).family;
                let fi = flow::galerkin_flow(&a, -t, n).family;
                quad = quad.add(&f.mul(&da).mul(&fi).scale(c(0.0, -wt)));
            }
            spectral.sub(&quad).graded_norm(0.5, w)
        };

        let ii = c(0.0, 1.0);
        let hh = linalg::mul(&o.h, &o.half);
        let d11 = brute.block(0, 0);
        let e_before = self.current.block(0, 0).sub(&self.konst(&(&o.t * c(0.0, m3))));
        let e_after = d11
            .sub(&self.konst(&(&o.t * c(0.0, m3))))
            .sub(&mult(&a14, n).rmul(&o.half).scale(ii))
            .sub(&mult(&a12, n).rmul(&hh).scale(ii));
        let mut diag = BTreeMap::new();
        diag.insert("a11_x_mean".into(), a11_mean);
        diag.insert("a14_mean_phi_variation".into(), a14_mean_var);
        diag.insert("m1".into(), m1);
        diag.insert("m1_oracle".into(), oracle);
        diag.insert("m1_from_a11".into(), m1_from_a11);
        diag.insert("a_sup".into(), a.max_abs());
        diag.insert("a11_sup".into(), a11.max_abs());
        diag.insert("order_before".into(), block_order(&e_before, 0, 0, 2, w, w));
        diag.insert("order_after".into(), block_order(&e_after, 0, 0, 2, w, w));
        diag.insert("e_after_norm".into(), e_after.graded_norm(0.0, w));
        self.m1 = m1;
        self.m1_oracle = oracle;
        for (k, f) in [("a_tilde", at), ("a0", a0), ("a", a), ("a14", a14)] {
            self.put(k, f);
        }
        Ok(self.finish(StepKind::Egorov, Transform::Slicewise { forward: big_inv, inverse: big }, brute, residual, 1e-7, diag))
    }

    /// `-(2 pi)^{-nu-5/2} / (2 sqrt kappa) int (1 + beta_x)[omega.d beta + V (1 + beta_x)]^2 (int sqrt(1 + eta_y^2) dy)^{3/2}`.
    pub fn m1_quadrature(&self) -> f64 {
        if !self.coeffs.contains_key("beta") {
            return f64::NAN;
        }
        let beta = self.coef("beta");
        let v = self.coef("V");
        let eta = self.coef("eta");
        let one_bx = beta.dx().map(|z| 1.0 + z);
        let inner = beta.omega_dphi(&self.omega).add(&v.mul(&one_bx));
        let len = eta.dx().map(|e| (1.0 + e * e).sqrt()).mean_x().map(|z| (2.0 * PI * z).powf(1.5));
        let f = one_bx.mul(&inner).mul(&inner).mul(&len);
        // int over T^{nu+1} = (2 pi)^{nu+1} mean
        -(2.0 * PI).powf(-1.5) / (2.0 * self.kappa.sqrt()) * f.mean()
    }

    // -- order one half -----------------------------------------------------

    pub fn half_order(&mut self) -> Result<ConjugationStep> {
        let n = self.n;
        let o = self.ops();
        let w = self.w();
        let grid = self.grid;
        let (m1, m3) = (self.m1, self.m3);
        let a14m = self.coef("a14").map(|z| z - m1);
        let a12 = self.coef("a12").clone();
        let scale = a14m.max_abs().max(a12.max_abs()).max(1e-300);
        let mean_defect = a14m.mean_x().max_abs().max(a12.mean_x().max_abs());
        if mean_defect > 1e-8 * scale.max(1.0) {
            return Err(Error::Precondition(format!("d_x^{{-1}} of a non-zero-mean field (mean {mean_defect:.2e})")));
        }
        let zero = all_zero(&a14m) && all_zero(&a12);
        let (ai, bi) = if zero {
            (GridFn::constant(grid, 0.0), GridFn::constant(grid, 0.0))
        } else {
            (a14m.dx_inv(), a12.dx_inv())
        };
        let mx = grid.m_x;
        let pref = |j: i64| -> f64 {
            let xi = j as f64;
            if chi0(xi) == 0.0 {
                0.0
            } else {
                -xi.abs().sqrt() * chi0(xi) / (m3 * t_symbol_d(self.kappa, xi))
            }
        };
        // p(phi_g, x_m, j) = pref(j) (i A + sign(j) B)
        let p_at = |g: usize, m: usize, j: i64| -> C64 {
            let k = g * mx + m;
            c(bi.data[k] * (j.signum() as f64), ai.data[k]) * pref(j)
        };
        let d = 2 * n + 1;
        let mats = (0..grid.n_slices())
            .map(|g| {
                if zero {
                    return CMat::identity(d, d);
                }
                let mut v = CMat::zeros(d, d);
                for jp in -(n as i64)..=(n as i64) {
                    let samples: Vec<C64> = (0..mx).map(|m| p_at(g, m, jp).exp()).collect();
                    let co = coeffs_1d(&samples, 2 * n);
                    for r in 0..d {
                        let k = r as i64 - n as i64 - jp;
                        if k.unsigned_abs() as usize <= 2 * n {
                            v[(r, (jp + n as i64) as usize)] = co[(k + 2 * n as i64) as usize];
                        }
                    }
                }
                v
            })
            .collect();
        let vf = Family { grid, nb: 1, n, mats };
        let vinv = vf.inverse().ok_or_else(|| Error::Internal("order one-half transformation is singular".into()))?;
        let fw = Family::diag2(&vf, &mirror_family(&vf));
        let bw = Family::diag2(&vinv, &mirror_family(&vinv));
        let brute = conjugate(&self.current, &fw, &bw, &self.omega);

        // homological symbol residual for |xi| >= 1: m3 T' d_x p + i(a14 - m1)|xi|^{1/2} + a12 sign |xi|^{1/2}
        let mut hom: f64 = 0.0;
        let mut sym: f64 = 0.0;
        let h = (mx - 1) / 2;
        for g in 0..grid.n_slices() {
            for jp in 1..=(w as i64) {
                for sgn in [-1i64, 1] {
                    let j = sgn * jp;
                    let samples: Vec<C64> = (0..mx).map(|m| p_at(g, m, j)).collect();
                    let co = coeffs_1d(&samples, h);
                    let dco: Vec<C64> = co.iter().enumerate().map(|(r, z)| z * c(0.0, r as f64 - h as f64)).collect();
                    let xi = j as f64;
                    for m in 0..mx {
                        let x = grid.x_point(m);
                        let dp = eval_1d(&dco, x);
                        let k = g * mx + m;
                        let target = c(a12.data[k] * xi.signum(), a14m.data[k]) * xi.abs().sqrt();
                        hom = hom.max((dp * (m3 * t_symbol_d(self.kappa, xi)) + target).norm());
                        // p(phi, -x, -xi) = p(phi, x, xi)
                        let mm = (mx - m) % mx;
                        sym = sym.max((p_at(g, mm, -j) - p_at(g, m, j)).norm());
                    }
                }
            }
        }
        let ident = identity_defect(&fw, &bw, w);
        let residual = hom.max(ident);

        let ii = c(0.0, 1.0);
        let normal = (&o.t * cm(m3) + &o.half * cm(m1)) * ii;
        let e_after = brute.block(0, 0).sub(&self.konst(&normal));
        let mut diag = BTreeMap::new();
        diag.insert("homological_residual".into(), hom);
        diag.insert("p_symmetry_defect".into(), sym);
        diag.insert("order_after".into(), block_order(&e_after, 0, 0, 2, w, w));
        diag.insert("p_sup".into(), ai.max_abs().max(bi.max_abs()));
        Ok(self.finish(StepKind::HalfOrder, Transform::Slicewise { forward: fw, inverse: bw }, brute, residual, 1e-7, diag))
    }

    /// Spectral data of the final operator on the window.
    pub fn final_spectrum(&self) -> FinalSpectrum {
        let o = Ops::new(self.config.n_x, self.kappa);
        let w = self.w();
        let f = self.current.restrict(w);
        let normal1 = (&o.t * cm(self.m3) + &o.half * cm(self.m1)) * c(0.0, 1.0);
        let normal = Family::diag2(&konst(self.grid, &normal1), &konst(self.grid, &mirror(&normal1)));
        let rem = f.sub(&normal);
        let d = 2 * w + 1;
        let rem0 = rem.map(|_, m| {
            CMat::from_fn(m.nrows(), m.ncols(), |r, s| if r % d == w || s % d == w { c(0.0, 0.0) } else { m[(r, s)] })
        });
        let mean = f.block(0, 0).phi_mean();
        let (mut js, mut mu, mut pred) = (vec![], vec![], vec![]);
        let mut dev: f64 = 0.0;
        for j in 1..=(w as i64) {
            let r = (j + w as i64) as usize;
            let m = mean[(r, r)].im;
            let p = self.m3 * t_symbol(self.kappa, j as f64) + self.m1 * (j as f64).sqrt();
            dev = dev.max((m - p).abs());
            js.push(j);
            mu.push(m);
            pred.push(p);
        }
        FinalSpectrum {
            j: js,
            mu,
            predicted: pred,
            max_deviation: dev,
            remainder_norm: rem.op_norm(),
            remainder_norm_nonzero: rem0.op_norm(),
            diagonal_remainder_order: block_order(&rem, 0, 0, 2, w, w),
            offdiagonal_order: block_order(&f, 0, 1, 2, w, w),
        }
    }

    pub fn constants(&self) -> ReductionConstants {
        ReductionConstants {
            m3_phi: self.m3_phi.clone(),
            m3: self.m3,
            m1: self.m1,
            m1_oracle: self.m1_oracle,
            coeffs: self.coeffs.clone(),
        }
    }
}

/// Runs the whole chain on an assembled linearized operator.
pub fn reduce(l: &LinearizedWW, config: ChainConfig) -> Result<Chain> {
    let mut r = Reducer::new(l, config.clone())?;
    let mut steps = vec![r.good_unknown()];
    steps.push(r.straighten()?);
    steps.push(r.symmetrize()?);
    steps.push(r.complexify());
    steps.push(r.time_reparam()?);
    for k in 1..=config.decouple_steps {
        steps.push(r.block_decouple(k)?);
    }
    steps.push(r.egorov()?);
    steps.push(r.half_order()?);
    let spectrum = r.final_spectrum();
    Ok(Chain { omega: r.omega.clone(), kappa: r.kappa, config, steps, constants: r.constants(), spectrum })
}

/// Torus, linearization and chain for the standing wave of amplitude `eps`
/// on the sites `s_plus` (the desk scenario).
pub fn reduce_standing_wave(
    s_plus: &[usize],
    xi: &[f64],
    kappa: f64,
    eps: f64,
    m_phi: usize,
    config: ChainConfig,
) -> Result<(LinearizedWW, Chain)> {
    let freq = crate::linop::FrequencySet::new(s_plus, kappa)?;
    let n = config.n_int;
    let grid = Grid::new(freq.nu(), m_phi, 4 * n + 1);
    let (eta, psi) = crate::linop::standing_wave_torus(&freq, xi, eps, grid);
    let l = crate::linop::assemble_linearized(&eta, &psi, kappa, &freq.tangential(), n)?;
    let chain = reduce(&l, config)?;
    Ok((l, chain))
}
