//! Non-degeneracy of the linear frequencies in the surface tension and
//! measure of the resonant parameter sets.
//!
//! The parameter is `kappa` on `[kappa1, kappa2]`.  Each resonant family is a
//! gap function `g(kappa)` and a threshold `4 gamma w <l>^{-tau}`; its resonant
//! set is `{|g| < threshold}`, measured by splitting a uniform grid into
//! monotone pieces of `g` and locating the crossings by bisection.

use crate::error::{Error, Result};
use crate::linalg::loglog_slope;
use crate::linop::{d_kappa_frequency, linear_frequency};
use crate::spectral::bracket_phi;
use serde::Serialize;
use std::collections::BTreeMap;

/// `lambda_0 = sqrt(kappa)`, `lambda_j = sqrt(j (1 + kappa j^2))`.
pub fn lambda(j: usize, kappa: f64) -> f64 {
    if j == 0 {
        kappa.sqrt()
    } else {
        linear_frequency(j as f64, kappa)
    }
}

/// `x_0 = 1/(2 kappa)`, `x_j = j^2 / (2 (1 + kappa j^2))`.
pub fn x_node(j: usize, kappa: f64) -> f64 {
    if j == 0 {
        0.5 / kappa
    } else {
        crate::linop::x_coefficient(j as f64, kappa)
    }
}

/// Determinant of the Vandermonde matrix `(x_{j_k}^r)`, `prod_{i<k} (x_{j_k} - x_{j_i})`.
pub fn vandermonde_det(kappa: f64, modes: &[usize]) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("kappa = {kappa} must be positive")));
    }
    for (i, a) in modes.iter().enumerate() {
        if modes[i + 1..].contains(a) {
            return Err(Error::Precondition(format!("repeated mode {a} in {modes:?}")));
        }
    }
    let x: Vec<f64> = modes.iter().map(|&j| x_node(j, kappa)).collect();
    let mut det = 1.0;
    for i in 0..x.len() {
        for k in i + 1..x.len() {
            det *= x[k] - x[i];
        }
    }
    Ok(det)
}

/// The factor `prod_k lambda_{j_k} prod_{r=1}^{N-1} (-1)^{r+1} (2r-3)!!` relating
/// the derivative matrix `(d_kappa^r lambda_{j_k})` to the Vandermonde matrix.
pub fn derivative_matrix_prefactor(kappa: f64, modes: &[usize]) -> f64 {
    let mut p: f64 = modes.iter().map(|&j| lambda(j, kappa)).product();
    for r in 1..modes.len() {
        let mut df = 1.0;
        let mut k = 2 * r as i64 - 3;
        while k > 1 {
            df *= k as f64;
            k -= 2;
        }
        p *= if r % 2 == 1 { df } else { -df };
    }
    p
}

#[derive(Clone, Debug, Serialize)]
pub struct NonDegeneracyReport {
    pub kappa_samples: Vec<f64>,
    pub tuples: usize,
    /// smallest `|det|` per tuple size, starting at size 1
    pub min_by_size: Vec<f64>,
    pub min_abs_det: f64,
    pub argmin_modes: Vec<usize>,
    pub argmin_kappa: f64,
}

fn subsets(pool: &[usize], size: usize, out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, start: usize) {
    if cur.len() == size {
        out.push(cur.clone());
        return;
    }
    for i in start..pool.len() {
        cur.push(pool[i]);
        subsets(pool, size, out, cur, i + 1);
        cur.pop();
    }
}

/// All tuples of distinct modes in `0..=mode_max` with at most `max_size`
/// entries, on a uniform `samples`-point grid of `[k1, k2]`.
pub fn nondegeneracy(k1: f64, k2: f64, samples: usize, mode_max: usize, max_size: usize) -> Result<NonDegeneracyReport> {
    let kappas = uniform(k1, k2, samples);
    let pool: Vec<usize> = (0..=mode_max).collect();
    let mut rep = NonDegeneracyReport {
        kappa_samples: kappas.clone(),
        tuples: 0,
        min_by_size: vec![],
        min_abs_det: f64::INFINITY,
        argmin_modes: vec![],
        argmin_kappa: f64::NAN,
    };
    for size in 1..=max_size.min(pool.len()) {
        let mut tuples = vec![];
        subsets(&pool, size, &mut tuples, &mut vec![], 0);
        let mut m = f64::INFINITY;
        for t in &tuples {
            for &k in &kappas {
                let d = vandermonde_det(k, t)?.abs();
                m = m.min(d);
                if d < rep.min_abs_det {
                    rep.min_abs_det = d;
                    rep.argmin_modes = t.clone();
                    rep.argmin_kappa = k;
                }
            }
        }
        rep.tuples += tuples.len();
        rep.min_by_size.push(m);
    }
    Ok(rep)
}

pub fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// frequency models

/// Natural cubic spline through `(x_i, y_i)`.
#[derive(Clone, Debug)]
pub struct Spline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// second derivatives at the nodes
    m: Vec<f64>,
}

impl Spline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::Dimension(format!("spline needs >= 3 matching nodes, got {} and {}", n, y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("spline nodes must increase".into()));
        }
        // tridiagonal system for the interior second derivatives
        let mut m = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            diag[i] = 2.0 * (h0 + h1);
            sup[i] = h1;
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            if i > 1 {
                let w = h0 / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
        }
        for i in (1..n - 1).rev() {
            m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
        }
        Ok(Spline { x: x.to_vec(), y: y.to_vec(), m })
    }

    /// `k`-th derivative at `t`; `k >= 4` is zero.
    pub fn eval(&self, t: f64, k: usize) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|v| *v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        let (m0, m1, y0, y1) = (self.m[i], self.m[i + 1], self.y[i], self.y[i + 1]);
        match k {
            0 => a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0,
            1 => (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0,
            2 => a * m0 + b * m1,
            3 => (m1 - m0) / h,
            _ => 0.0,
        }
    }
}

/// Tangential frequency vector and normal eigenvalues as functions of `kappa`.
#[derive(Clone, Debug)]
pub enum FrequencyModel {
    /// `omega(kappa) = (lambda_j)_{j in S+}`, `mu_j = lambda_j`
    Unperturbed { s_plus: Vec<usize> },
    /// splines through sampled tangential frequencies and eigenvalues
    Sampled { s_plus: Vec<usize>, omega: Vec<Spline>, mu: BTreeMap<usize, Spline> },
}

/// Tangential sites of the default measure study, those of the standing wave
/// reduced by the conjugation chain.
pub const DEFAULT_SITES: [usize; 1] = [1];

/// Fewest samples accepted by [`FrequencyModel::sampled`].
pub const MIN_SAMPLES: usize = 30;

impl FrequencyModel {
    pub fn unperturbed(s_plus: &[usize]) -> Self {
        FrequencyModel::Unperturbed { s_plus: s_plus.to_vec() }
    }

    /// `omegas[i]` and `mus[i]` are the values at `kappas[i]`.
    pub fn sampled(s_plus: &[usize], kappas: &[f64], omegas: &[Vec<f64>], mus: &[BTreeMap<usize, f64>]) -> Result<Self> {
        if kappas.len() < MIN_SAMPLES || omegas.len() != kappas.len() || mus.len() != kappas.len() {
            return Err(Error::Precondition(format!("need >= {MIN_SAMPLES} matching samples, got {}", kappas.len())));
        }
        let omega = (0..s_plus.len())
            .map(|a| Spline::new(kappas, &omegas.iter().map(|w| w[a]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let mut mu = BTreeMap::new();
        for &j in mus[0].keys() {
            let ys = mus
                .iter()
                .map(|m| m.get(&j).copied().ok_or_else(|| Error::Dimension(format!("site {j} missing from a sample"))))
                .collect::<Result<Vec<_>>>()?;
            mu.insert(j, Spline::new(kappas, &ys)?);
        }
        Ok(FrequencyModel::Sampled { s_plus: s_plus.to_vec(), omega, mu })
    }

    pub fn s_plus(&self) -> &[usize] {
        match self {
            FrequencyModel::Unperturbed { s_plus } | FrequencyModel::Sampled { s_plus, .. } => s_plus,
        }
    }

    pub fn nu(&self) -> usize {
        self.s_plus().len()
    }

    pub fn is_tangential(&self, j: usize) -> bool {
        self.s_plus().contains(&j)
    }

    /// `d_kappa^k omega_a(kappa)`.
    pub fn omega(&self, a: usize, kappa: f64, k: usize) -> f64 {
        match self {
            FrequencyModel::Unperturbed { s_plus } => d_kappa_frequency(s_plus[a] as f64, kappa, k),
            FrequencyModel::Sampled { omega, .. } => omega[a].eval(kappa, k),
        }
    }

    /// `d_kappa^k mu_j(kappa)`; sampled models fall back to the linear frequency
    /// off their sampled sites.
    pub fn mu(&self, j: usize, kappa: f64, k: usize) -> f64 {
        match self {
            FrequencyModel::Sampled { mu, .. } if mu.contains_key(&j) => mu[&j].eval(kappa, k),
            _ => d_kappa_frequency(j as f64, kappa, k),
        }
    }

    /// `sup_kappa |omega(kappa)|_1` over `[k1, k2]`, sampled on 101 points.
    pub fn omega_sup(&self, k1: f64, k2: f64) -> f64 {
        uniform(k1, k2, 101)
            .into_iter()
            .map(|t| (0..self.nu()).map(|a| self.omega(a, t, 0).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// resonant families

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ResonanceKind {
    /// `omega.l`
    R0 { ell: Vec<i64> },
    /// `omega.l + mu_j`
    RI { ell: Vec<i64>, j: usize },
    /// `omega.l + mu_j - mu_j'`
    RII { ell: Vec<i64>, j: usize, jp: usize },
    /// `omega.l + mu_j + mu_j'`
    QII { ell: Vec<i64>, j: usize, jp: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum FamilyTag {
    R0,
    RI,
    RII,
    QII,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 4] = [FamilyTag::R0, FamilyTag::RI, FamilyTag::RII, FamilyTag::QII];

    pub fn label(self) -> &'static str {
        match self {
            FamilyTag::R0 => "R0",
            FamilyTag::RI => "RI",
            FamilyTag::RII => "RII",
            FamilyTag::QII => "QII",
        }
    }
}

fn j32(j: usize) -> f64 {
    (j as f64).powf(1.5)
}

impl ResonanceKind {
    pub fn tag(&self) -> FamilyTag {
        match self {
            ResonanceKind::R0 { .. } => FamilyTag::R0,
            ResonanceKind::RI { .. } => FamilyTag::RI,
            ResonanceKind::RII { .. } => FamilyTag::RII,
            ResonanceKind::QII { .. } => FamilyTag::QII,
        }
    }

    pub fn ell(&self) -> &[i64] {
        match self {
            ResonanceKind::R0 { ell } | ResonanceKind::RI { ell, .. } => ell,
            ResonanceKind::RII { ell, .. } | ResonanceKind::QII { ell, .. } => ell,
        }
    }

    /// Weight `w` of the threshold: `1`, `j^{3/2}`, `|j^{3/2} - j'^{3/2}|`, `j^{3/2} + j'^{3/2}`.
    pub fn weight(&self) -> f64 {
        match *self {
            ResonanceKind::R0 { .. } => 1.0,
            ResonanceKind::RI { j, .. } => j32(j),
            ResonanceKind::RII { j, jp, .. } => (j32(j) - j32(jp)).abs(),
            ResonanceKind::QII { j, jp, .. } => j32(j) + j32(jp),
        }
    }

    /// `4 gamma w <l>^{-tau}`.
    pub fn threshold(&self, gamma: f64, tau: f64) -> f64 {
        4.0 * gamma * self.weight() * bracket_phi(self.ell()).powf(-tau)
    }

    /// The scaling `(gamma w <l>^{-(tau+1)})^{1/k0}` expected for the measure.
    pub fn expected_scale(&self, gamma: f64, tau: f64, k0: usize) -> f64 {
        (gamma * self.weight() * bracket_phi(self.ell()).powf(-(tau + 1.0))).powf(1.0 / k0 as f64)
    }
}

/// `d_kappa^k` of the gap function of `kind` at `kappa`.
pub fn gap_derivative(kind: &ResonanceKind, kappa: f64, model: &FrequencyModel, k: usize) -> f64 {
    let wl: f64 = kind.ell().iter().enumerate().map(|(a, l)| *l as f64 * model.omega(a, kappa, k)).sum();
    match *kind {
        ResonanceKind::R0 { .. } => wl,
        ResonanceKind::RI { j, .. } => wl + model.mu(j, kappa, k),
        ResonanceKind::RII { j, jp, .. } => wl + model.mu(j, kappa, k) - model.mu(jp, kappa, k),
        ResonanceKind::QII { j, jp, .. } => wl + model.mu(j, kappa, k) + model.mu(jp, kappa, k),
    }
}

pub fn gap_function(kind: &ResonanceKind, kappa: f64, model: &FrequencyModel) -> f64 {
    gap_derivative(kind, kappa, model, 0)
}

// ---------------------------------------------------------------------------
// index restriction

/// Canonical representatives, one per distinct resonant set: `l > 0`
/// lexicographically for `R0`, `j < j'` for `RII` (the set of `(-l, j', j)` is
/// the same and `j = j'` has zero threshold), `j <= j'` for `QII`.
/// `RI`, `RII`, `QII` keep only `j^{3/2} <= C<l>`, `|j^{3/2} - j'^{3/2}| <= C<l>`,
/// `j^{3/2} + j'^{3/2} <= C<l>` respectively.
pub fn prune_indices(s_plus: &[usize], ell_max: usize, mode_max: usize, c: f64) -> BTreeMap<FamilyTag, Vec<ResonanceKind>> {
    let (kept, _) = enumerate_indices(s_plus, ell_max, mode_max, c);
    kept
}

/// Kept and pruned representatives.
pub fn enumerate_indices(
    s_plus: &[usize],
    ell_max: usize,
    mode_max: usize,
    c: f64,
) -> (BTreeMap<FamilyTag, Vec<ResonanceKind>>, Vec<ResonanceKind>) {
    let ells = crate::fourier::box_modes(&vec![ell_max; s_plus.len()]);
    let normal: Vec<usize> = (1..=mode_max).filter(|j| !s_plus.contains(j)).collect();
    let mut kept: BTreeMap<FamilyTag, Vec<ResonanceKind>> = FamilyTag::ALL.iter().map(|t| (*t, vec![])).collect();
    let mut pruned = vec![];
    for ell in &ells {
        let br = bracket_phi(ell);
        let positive = ell.iter().find(|x| **x != 0).is_some_and(|x| *x > 0);
        if positive {
            kept.get_mut(&FamilyTag::R0).unwrap().push(ResonanceKind::R0 { ell: ell.clone() });
        }
        for &j in &normal {
            let k = ResonanceKind::RI { ell: ell.clone(), j };
            if j32(j) <= c * br {
                kept.get_mut(&FamilyTag::RI).unwrap().push(k);
            } else {
                pruned.push(k);
            }
            for &jp in &normal {
                if j < jp {
                    let k = ResonanceKind::RII { ell: ell.clone(), j, jp };
                    if (j32(j) - j32(jp)).abs() <= c * br {
                        kept.get_mut(&FamilyTag::RII).unwrap().push(k);
                    } else {
                        pruned.push(k);
                    }
                }
                if j <= jp {
                    let k = ResonanceKind::QII { ell: ell.clone(), j, jp };
                    if j32(j) + j32(jp) <= c * br {
                        kept.get_mut(&FamilyTag::QII).unwrap().push(k);
                    } else {
                        pruned.push(k);
                    }
                }
            }
        }
    }
    (kept, pruned)
}

/// `4 max(sup|omega|_1, sqrt(kappa2))`.
pub fn default_restriction_constant(model: &FrequencyModel, k1: f64, k2: f64) -> f64 {
    4.0 * model.omega_sup(k1, k2).max(k2.sqrt())
}

// ---------------------------------------------------------------------------
// measurement

#[derive(Clone, Debug, Serialize)]
pub struct MeasureConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    pub tau: f64,
    pub k0: usize,
    pub ell_max: usize,
    pub mode_max: usize,
    pub grid_n: usize,
    /// bisection stops below this width
    pub refine_tol: f64,
    /// `None`: [`default_restriction_constant`]
    pub c: Option<f64>,
    pub threads: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            kappa1: 0.5,
            kappa2: 2.0,
            tau: 3.0,
            k0: 1,
            ell_max: 6,
            mode_max: 12,
            grid_n: 100,
            refine_tol: 1e-10,
            c: None,
            threads: 1,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 100 {
            return Err(Error::Precondition(format!("grid_n = {} < 100", self.grid_n)));
        }
        if !(self.kappa1 > 0.0 && self.kappa2 > self.kappa1) {
            return Err(Error::Domain(format!("bad kappa interval [{}, {}]", self.kappa1, self.kappa2)));
        }
        if self.k0 == 0 || !(self.refine_tol > 0.0 && self.refine_tol <= 1e-8) {
            return Err(Error::Precondition("k0 >= 1 and 0 < refine_tol <= 1e-8 required".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.kappa2 - self.kappa1
    }
}

/// Bisection for `f(t) = 0` on `[a, b]` with `f(a) f(b) <= 0`.
pub fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let fa = f(a);
    if fa == 0.0 {
        return a;
    }
    let sa = fa > 0.0;
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Sorted union of intervals.
pub fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.retain(|(a, b)| b > a);
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = vec![];
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

pub fn total_length(iv: &[(f64, f64)]) -> f64 {
    iv.iter().fold(0.0, |acc, (a, b)| acc + (b - a))
}

/// Subinterval of the monotone piece `[p, q]` where `|g| < t`.
fn monotone_piece(g: &dyn Fn(f64) -> f64, p: f64, q: f64, t: f64, tol: f64) -> Option<(f64, f64)> {
    let (gp, gq) = (g(p), g(q));
    if gp.min(gq) >= t || gp.max(gq) <= -t {
        return None;
    }
    let inside = |v: f64| v.abs() < t;
    // the entry and exit points are crossings of the level +-t nearest p and q
    let lo = if inside(gp) {
        p
    } else {
        let level = if gp >= t { t } else { -t };
        bisect(|s| g(s) - level, p, q, tol)
    };
    let hi = if inside(gq) {
        q
    } else {
        let level = if gq >= t { t } else { -t };
        bisect(|s| g(s) - level, p, q, tol)
    };
    (hi > lo).then_some((lo, hi))
}

/// Resonant set `{kappa : |g(kappa)| < threshold}` as merged intervals.
///
/// Each grid cell is split at a sign change of `g'` into monotone pieces, so
/// intervals narrower than the grid spacing are resolved.
pub fn resonant_intervals(kind: &ResonanceKind, model: &FrequencyModel, gamma: f64, cfg: &MeasureConfig) -> Vec<(f64, f64)> {
    let thr = kind.threshold(gamma, cfg.tau);
    if !(thr > 0.0) {
        return vec![];
    }
    let g = |s: f64| gap_function(kind, s, model);
    let dg = |s: f64| gap_derivative(kind, s, model, 1);
    let nodes = uniform(cfg.kappa1, cfg.kappa2, cfg.grid_n);
    let vals: Vec<f64> = nodes.iter().map(|&s| g(s)).collect();
    let slopes: Vec<f64> = nodes.iter().map(|&s| dg(s)).collect();
    let mut out = vec![];
    for i in 0..nodes.len() - 1 {
        let (a, b) = (nodes[i], nodes[i + 1]);
        // a cell whose endpoints are on one side of the band with no sign change
        // of g' is monotone there and misses the band
        let lower = vals[i].abs().min(vals[i + 1].abs());
        let same_side = vals[i].signum() == vals[i + 1].signum();
        let flips = slopes[i].signum() != slopes[i + 1].signum();
        if same_side && !flips && lower >= thr {
            continue;
        }
        let mut cuts = vec![a];
        if flips {
            cuts.push(bisect(dg, a, b, cfg.refine_tol));
        }
        cuts.push(b);
        for w in cuts.windows(2) {
            if let Some(iv) = monotone_piece(&g, w[0], w[1], thr, cfg.refine_tol) {
                out.push(iv);
            }
        }
    }
    merge_intervals(out)
}

pub fn resonant_measure(kind: &ResonanceKind, model: &FrequencyModel, gamma: f64, cfg: &MeasureConfig) -> f64 {
    total_length(&resonant_intervals(kind, model, gamma, cfg))
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyMeasure {
    pub family: FamilyTag,
    pub triples: usize,
    pub nonempty: usize,
    /// sum of the individual measures
    pub sum: f64,
    /// measure of the union inside the family
    pub union: f64,
    /// sum of the expected scalings `(gamma w <l>^{-(tau+1)})^{1/k0}`
    pub expected: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExcludedMeasure {
    pub gamma: f64,
    pub total: f64,
    pub sum_of_parts: f64,
    pub families: Vec<FamilyMeasure>,
    pub intervals: usize,
    pub restriction_constant: f64,
}

/// Measure of the union of all resonant sets with representatives from
/// [`prune_indices`].
pub fn excluded_measure_total(model: &FrequencyModel, gamma: f64, cfg: &MeasureConfig) -> Result<ExcludedMeasure> {
    cfg.validate()?;
    let c = cfg.c.unwrap_or_else(|| default_restriction_constant(model, cfg.kappa1, cfg.kappa2));
    let index = prune_indices(model.s_plus(), cfg.ell_max, cfg.mode_max, c);
    let mut all = vec![];
    let mut families = vec![];
    let mut nintervals = 0;
    for (tag, kinds) in &index {
        let per: Vec<Vec<(f64, f64)>> = parallel_map(kinds, cfg.threads, |k| resonant_intervals(k, model, gamma, cfg));
        let mut fam = vec![];
        let mut sum = 0.0;
        let mut nonempty = 0;
        for iv in per {
            if !iv.is_empty() {
                nonempty += 1;
            }
            sum += total_length(&iv);
            nintervals += iv.len();
            fam.extend(iv);
        }
        let fam = merge_intervals(fam);
        families.push(FamilyMeasure {
            family: *tag,
            triples: kinds.len(),
            nonempty,
            sum,
            union: total_length(&fam),
            expected: kinds.iter().map(|k| k.expected_scale(gamma, cfg.tau, cfg.k0)).sum(),
        });
        all.extend(fam);
    }
    let union = merge_intervals(all);
    Ok(ExcludedMeasure {
        gamma,
        total: total_length(&union),
        sum_of_parts: families.iter().map(|f| f.sum).sum(),
        families,
        intervals: nintervals,
        restriction_constant: c,
    })
}

/// Order-preserving map over `threads` scoped workers.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingStudy {
    pub gammas: Vec<f64>,
    pub runs: Vec<ExcludedMeasure>,
    pub exponent: f64,
    pub family_exponents: BTreeMap<String, f64>,
    /// the exponent `1/k0` of the expected law
    pub expected_exponent: f64,
    pub monotone: bool,
}

pub fn scaling_study(model: &FrequencyModel, gammas: &[f64], cfg: &MeasureConfig) -> Result<ScalingStudy> {
    let runs = gammas.iter().map(|&g| excluded_measure_total(model, g, cfg)).collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r.total).collect();
    let mut family_exponents = BTreeMap::new();
    for (i, tag) in FamilyTag::ALL.iter().enumerate() {
        let ys: Vec<f64> = runs.iter().map(|r| r.families[i].union).collect();
        family_exponents.insert(tag.label().to_string(), loglog_slope(gammas, &ys));
    }
    let mut order: Vec<usize> = (0..gammas.len()).collect();
    order.sort_by(|a, b| gammas[*a].total_cmp(&gammas[*b]));
    let monotone = order.windows(2).all(|w| totals[w[0]] <= totals[w[1]]);
    Ok(ScalingStudy {
        gammas: gammas.to_vec(),
        exponent: loglog_slope(gammas, &totals),
        family_exponents,
        expected_exponent: 1.0 / cfg.k0 as f64,
        monotone,
        runs,
    })
}

// ---------------------------------------------------------------------------
// amount of non-degeneracy

#[derive(Clone, Debug, Serialize)]
pub struct TransversalityReport {
    /// `min` over triples and grid of `max_{k <= k0} |d^k g| / <l>`
    pub rho_hat: f64,
    pub worst: Option<ResonanceKind>,
    pub worst_kappa: f64,
    pub triples: usize,
}

pub fn transversality(model: &FrequencyModel, cfg: &MeasureConfig) -> TransversalityReport {
    let c = cfg.c.unwrap_or_else(|| default_restriction_constant(model, cfg.kappa1, cfg.kappa2));
    let index = prune_indices(model.s_plus(), cfg.ell_max, cfg.mode_max, c);
    let nodes = uniform(cfg.kappa1, cfg.kappa2, cfg.grid_n);
    let mut rep = TransversalityReport { rho_hat: f64::INFINITY, worst: None, worst_kappa: f64::NAN, triples: 0 };
    for kind in index.values().flatten() {
        rep.triples += 1;
        let br = bracket_phi(kind.ell());
        for &s in &nodes {
            let v = (0..=cfg.k0).map(|k| gap_derivative(kind, s, model, k).abs()).fold(0.0, f64::max) / br;
            if v < rep.rho_hat {
                rep.rho_hat = v;
                rep.worst = Some(kind.clone());
                rep.worst_kappa = s;
            }
        }
    }
    rep
}
