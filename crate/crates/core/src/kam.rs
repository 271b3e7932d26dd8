//! KAM reducibility of `omega.d_phi + i diag(D, -D) + P(phi)` in complex
//! coordinates, `D = diag(mu_j)` on the normal modes.
//!
//! Operators live on the discrete angle torus (one matrix per collocation
//! point).  Products, inverses and `omega.d_phi` are exact in that algebra, so
//! the conjugation identities hold to rounding; the truncation `Pi_N` acts on
//! the angle modes `|l|_inf <= N`.

use crate::error::{Error, Result};
use crate::family::{self, mirror, parity_x, Coords, Family, StructureDefects, Symmetry};
use crate::grid::Grid;
use crate::linalg::{self, c, CMat, C64};
use crate::linop::FrequencySet;
use crate::spectral::{bracket_phi, dot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize)]
pub struct KamConfig {
    pub gamma: f64,
    pub tau: f64,
    pub n0: usize,
    pub steps: usize,
    /// weight exponent of the decay norm
    pub s: f64,
}

impl Default for KamConfig {
    fn default() -> Self {
        KamConfig { gamma: 1e-2, tau: 3.0, n0: 4, steps: 3, s: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct KamState {
    pub nu_step: usize,
    /// `mu_j` for `j` in the (two-sided) normal set
    pub mu: BTreeMap<i64, f64>,
    /// remainder `[[R, Q], [mirror Q, mirror R]]`
    pub p: Family,
    pub n_nu: usize,
}

impl KamState {
    pub fn n(&self) -> usize {
        self.p.n
    }

    pub fn grid(&self) -> Grid {
        self.p.grid
    }

    pub fn r(&self) -> Family {
        self.p.block(0, 0)
    }

    pub fn q(&self) -> Family {
        self.p.block(0, 1)
    }

    fn mu_at(&self, j: i64) -> f64 {
        self.mu.get(&j).copied().unwrap_or(0.0)
    }

    /// `i diag(mu, -mu)` as a constant family.
    pub fn diagonal(&self) -> Family {
        let n = self.n();
        let d = family::multiplier(n, |j| c(0.0, self.mu_at(j)));
        let f = Family::constant(self.grid(), 1, n, &d);
        Family::diag2(&f, &f.map(|_, m| mirror(m)))
    }

    /// `mu_j = mu_{-j}` and finite for every normal site.
    pub fn mu_is_even(&self) -> bool {
        self.mu.iter().all(|(j, v)| v.is_finite() && self.mu.get(&-j) == Some(v))
    }

    /// Positive normal sites in increasing order.
    pub fn sites(&self) -> Vec<i64> {
        self.mu.keys().copied().filter(|j| *j > 0).collect()
    }
}

/// Unperturbed state `mu_j = omega_j(kappa)` on `|j| <= n_x`, remainder `p`.
pub fn flat_state(freq: &FrequencySet, p: Family, n0: usize) -> KamState {
    let n = p.n as i64;
    let mu = (-n..=n).filter(|j| !freq.in_s0(*j)).map(|j| (j, freq.omega_j(j.unsigned_abs() as usize))).collect();
    KamState { nu_step: 0, mu, p: mask_s0(&p, freq), n_nu: n0 }
}

/// Zeroes rows and columns of the sites in `S0`.
pub fn mask_s0(p: &Family, freq: &FrequencySet) -> Family {
    let n = p.n;
    let d = 2 * n + 1;
    p.map(|_, m| {
        CMat::from_fn(m.nrows(), m.ncols(), |r, s| {
            let (jr, js) = ((r % d) as i64 - n as i64, (s % d) as i64 - n as i64);
            if freq.in_s0(jr) || freq.in_s0(js) {
                c(0.0, 0.0)
            } else {
                m[(r, s)]
            }
        })
    })
}

/// Projection of a block family onto the real, even, reversible operators in
/// complex coordinates.
pub fn project_structure(p: &Family) -> Family {
    let grid = p.grid;
    let sym = |b: &Family| -> Family {
        let even = b.map(|_, m| (m + parity_x(m)) * c(0.5, 0.0));
        // A(-phi) = -mirror(A(phi))
        Family::from_fn(grid, 1, b.n, |g| {
            let a = &even.mats[g];
            let am = &even.mats[grid.phi_neg(g)];
            (a - mirror(am)) * c(0.5, 0.0)
        })
    };
    let r = sym(&p.block(0, 0));
    let q = sym(&p.block(0, 1));
    let mr = r.map(|_, m| mirror(m));
    let mq = q.map(|_, m| mirror(m));
    Family::from_blocks(2, &[&r, &q, &mq, &mr])
}

/// Random structured order-zero remainder with `max_phi ||P|| = eps`.
///
/// Angle coefficients decay like `exp(-sigma |l|_1)` and space entries like
/// `exp(-|j - j'|/2)` around the diagonals `j' = +-j`.
pub fn seeded_remainder(freq: &FrequencySet, grid: Grid, n: usize, eps: f64, sigma: f64, seed: u64) -> Family {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 * n + 1;
    let ns = grid.n_slices();
    let mut bins = vec![CMat::zeros(2 * d, 2 * d); ns];
    for (g, b) in bins.iter_mut().enumerate() {
        let l = grid.phi_mode_of_bin(g);
        let w = (-sigma * l.iter().map(|x| x.abs() as f64).sum::<f64>()).exp();
        for r in 0..2 * d {
            for s in 0..2 * d {
                let (jr, js) = ((r % d) as i64 - n as i64, (s % d) as i64 - n as i64);
                let off = (jr - js).abs().min((jr + js).abs()) as f64;
                let amp = w * (-off / 2.0).exp();
                b[(r, s)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp;
            }
        }
    }
    let raw = Family::from_phi_spectrum(grid, 2, n, &bins);
    let p = mask_s0(&project_structure(&raw), freq);
    let nrm = p.op_norm();
    if nrm == 0.0 || eps == 0.0 {
        return Family::zeros(grid, 2, n);
    }
    p.scale(c(eps / nrm, 0.0))
}

/// `sum_l <l>^s ||A(l)||`, an upper bound of the operator norm on `L^2(T^nu x T)`.
pub fn decay_norm(a: &Family, s: f64) -> f64 {
    a.phi_spectrum().iter().map(|(l, m)| bracket_phi(l).powf(s) * linalg::op_norm(m)).sum()
}

/// `Pi_N A` (`low = true`) or `Pi_N^perp A` on the angle modes.
pub fn project_angle(a: &Family, n_cut: usize, low: bool) -> Family {
    let spec = a.phi_spectrum();
    let bins: Vec<CMat> = spec
        .into_iter()
        .map(|(l, m)| {
            let inside = l.iter().all(|x| x.unsigned_abs() as usize <= n_cut);
            if inside == low {
                m
            } else {
                CMat::zeros(m.nrows(), m.ncols())
            }
        })
        .collect();
    Family::from_phi_spectrum(a.grid, a.nb, a.n, &bins)
}

// ---------------------------------------------------------------------------
// Melnikov conditions

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub ell: Vec<i64>,
    pub j: i64,
    /// 0 for the first-order condition
    pub jp: i64,
    /// `+1`: `mu_j - mu_j'`, `-1`: `mu_j + mu_j'`, `0`: first order
    pub sign: i32,
    pub gap: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MelnikovVerdict {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// smallest `gap / threshold` over the checked set
    pub min_ratio: f64,
    /// smallest `|gap| - threshold`: the eigenvalue drift the verdict tolerates
    pub min_margin: f64,
    pub checked: usize,
}

fn ell_box(nu: usize, cut: usize) -> Vec<Vec<i64>> {
    crate::fourier::box_modes(&vec![cut; nu])
}

/// First and second order conditions over `|l|_inf <= cut` and positive normal sites.
///
/// First order: `|omega.l + mu_j| >= 2 gamma j^{3/2} <l>^{-tau}`.  Second order:
/// `|omega.l + mu_j - s mu_j'| >= gamma |j^{3/2} - s j'^{3/2}| <l>^{-tau}`,
/// `s = +-1`, skipping `l = 0, j = j', s = +`.
pub fn melnikov_check(state: &KamState, omega: &[f64], gamma: f64, tau: f64, cut: usize) -> MelnikovVerdict {
    let sites = state.sites();
    let mut v = vec![];
    let mut min_ratio = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut checked = 0;
    let mut test = |ell: &Vec<i64>, j: i64, jp: i64, sign: i32, gap: f64, thr: f64| {
        checked += 1;
        min_margin = min_margin.min(gap.abs() - thr);
        if thr > 0.0 {
            min_ratio = min_ratio.min(gap.abs() / thr);
        }
        if gap.abs() < thr {
            v.push(Violation { ell: ell.clone(), j, jp, sign, gap, threshold: thr });
        }
    };
    for ell in ell_box(omega.len(), cut) {
        let wl = dot(omega, &ell);
        let br = bracket_phi(&ell).powf(-tau);
        let zero = ell.iter().all(|x| *x == 0);
        for &j in &sites {
            let mj = state.mu_at(j);
            let j32 = (j as f64).powf(1.5);
            test(&ell, j, 0, 0, wl + mj, 2.0 * gamma * j32 * br);
            for &jp in &sites {
                let mjp = state.mu_at(jp);
                let jp32 = (jp as f64).powf(1.5);
                if !(zero && j == jp) {
                    test(&ell, j, jp, 1, wl + mj - mjp, gamma * (j32 - jp32).abs() * br);
                }
                test(&ell, j, jp, -1, wl + mj + mjp, gamma * (j32 + jp32) * br);
            }
        }
    }
    MelnikovVerdict { passed: v.is_empty(), violations: v, min_ratio, min_margin, checked }
}

// ---------------------------------------------------------------------------
// homological equation

/// Resonant part `[P]`: angle average restricted to the entries `(j, +-j)` of
/// the diagonal blocks.
pub fn resonant_part(p: &Family) -> Family {
    let n = p.n;
    let d = 2 * n + 1;
    let m = p.phi_mean();
    let out = CMat::from_fn(2 * d, 2 * d, |r, s| {
        let same_block = r / d == s / d;
        let (jr, js) = ((r % d) as i64 - n as i64, (s % d) as i64 - n as i64);
        if same_block && jr.abs() == js.abs() {
            m[(r, s)]
        } else {
            c(0.0, 0.0)
        }
    });
    Family::constant(p.grid, 2, n, &out)
}

/// `Psi` with `omega.d_phi Psi + i[diag(D, -D), Psi] + Pi_N P - [P] = 0`.
pub fn solve_homological(state: &KamState, omega: &[f64], cut: usize) -> Result<Family> {
    let n = state.n();
    let d = 2 * n + 1;
    let grid = state.grid();
    let spec = state.p.phi_spectrum();
    // signed eigenvalue of the constant part on each row: +mu on h, -mu on hbar
    let lam = |r: usize| -> f64 {
        let j = (r % d) as i64 - n as i64;
        if r < d {
            state.mu_at(j)
        } else {
            -state.mu_at(j)
        }
    };
    let mut bins = Vec::with_capacity(spec.len());
    for (l, m) in spec {
        let inside = l.iter().all(|x| x.unsigned_abs() as usize <= cut);
        let zero = l.iter().all(|x| *x == 0);
        let wl = dot(omega, &l);
        let mut out = CMat::zeros(2 * d, 2 * d);
        if inside {
            for r in 0..2 * d {
                for s in 0..2 * d {
                    let v = m[(r, s)];
                    if v == c(0.0, 0.0) {
                        continue;
                    }
                    let same = r / d == s / d;
                    let (jr, js) = ((r % d) as i64 - n as i64, (s % d) as i64 - n as i64);
                    if zero && same && jr.abs() == js.abs() {
                        continue;
                    }
                    let den = wl + lam(r) - lam(s);
                    if den.abs() < 1e-14 {
                        return Err(Error::Internal(format!(
                            "divisor {den:.2e} at l = {l:?}, j = {jr}, j' = {js} after a Melnikov pass"
                        )));
                    }
                    out[(r, s)] = -v / c(0.0, den);
                }
            }
        }
        bins.push(out);
    }
    Ok(Family::from_phi_spectrum(grid, 2, n, &bins))
}

/// `omega.d_phi Psi + i[Lambda, Psi] + Pi_N P - [P]`.
pub fn homological_defect(state: &KamState, psi: &Family, omega: &[f64], cut: usize) -> Family {
    let lam = state.diagonal();
    psi.omega_dphi(omega)
        .add(&lam.mul(psi))
        .sub(&psi.mul(&lam))
        .add(&project_angle(&state.p, cut, true))
        .sub(&resonant_part(&state.p))
}

// ---------------------------------------------------------------------------
// the step

#[derive(Clone, Debug, Serialize)]
pub struct KamStepReport {
    pub step: usize,
    pub n_cut: usize,
    pub norm_r: f64,
    pub norm_q: f64,
    pub norm_next: f64,
    pub psi_norm: f64,
    pub homological_residual: f64,
    pub conjugation_residual: f64,
    pub melnikov_min_ratio: f64,
    pub melnikov_checked: usize,
    /// largest real part of `-i [P]_jj` (should vanish)
    pub r_imag_defect: f64,
    pub max_r: f64,
    pub structure_psi: StructureDefects,
    pub structure_next: StructureDefects,
    pub mu_head: Vec<(i64, f64)>,
}

/// Right multiplication by the projector onto `x`-even vectors in both blocks.
fn even_projector(n: usize) -> CMat {
    let d = 2 * n + 1;
    let e = CMat::from_fn(d, d, |r, s| {
        let v = if r == s { 0.5 } else { 0.0 } + if r + s == d - 1 { 0.5 } else { 0.0 };
        c(v, 0.0)
    });
    let mut out = CMat::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d)).copy_from(&e);
    out.view_mut((d, d), (d, d)).copy_from(&e);
    out
}

pub fn kam_step(state: &KamState, omega: &[f64], cfg: &KamConfig, cut: usize) -> Result<(KamState, KamStepReport)> {
    let verdict = melnikov_check(state, omega, cfg.gamma, cfg.tau, cut);
    if !verdict.passed {
        let v = &verdict.violations[0];
        return Err(Error::SmallDivisor(format!(
            "step {}: {} Melnikov violations, first l = {:?}, j = {}, j' = {}, sign {}, gap {:.3e} < {:.3e}",
            state.nu_step,
            verdict.violations.len(),
            v.ell,
            v.j,
            v.jp,
            v.sign,
            v.gap,
            v.threshold
        )));
    }
    let n = state.n();
    let grid = state.grid();
    let psi = solve_homological(state, omega, cut)?;
    let hom = homological_defect(state, &psi, omega, cut).max_abs();
    let psi_norm = psi.op_norm();
    if psi_norm >= 0.5 {
        return Err(Error::Neumann(psi_norm));
    }
    let id = Family::identity(grid, 2, n);
    let phi = id.add(&psi);
    let phi_inv = phi.inverse().ok_or(Error::Neumann(psi_norm))?;
    let res = resonant_part(&state.p);
    let p = &state.p;
    let inner = project_angle(p, cut, false).add(&p.mul(&psi)).sub(&psi.mul(&res));
    let p_next = phi_inv.mul(&inner);

    // new normal form on the even subspace: i r_j = [P]_j^j + [P]_j^{-j}
    let m0 = &res.mats[0];
    let mut mu = state.mu.clone();
    let mut imag_defect: f64 = 0.0;
    let mut max_r: f64 = 0.0;
    for &j in &state.sites() {
        let (a, b) = ((j + n as i64) as usize, (n as i64 - j) as usize);
        let z = m0[(a, a)] + m0[(a, b)];
        imag_defect = imag_defect.max(z.re.abs());
        max_r = max_r.max(z.im.abs());
        let v = state.mu_at(j) + z.im;
        mu.insert(j, v);
        mu.insert(-j, v);
    }
    let next = KamState { nu_step: state.nu_step + 1, mu, p: p_next, n_nu: next_scale(cut) };

    // brute-force conjugation vs omega.d + i Lambda_+ + P_+ on even vectors
    let lam = state.diagonal();
    let brute = phi_inv.mul(&lam.add(p).mul(&phi).add(&phi.omega_dphi(omega)));
    let target = next.diagonal().add(&next.p);
    let conj = brute.sub(&target).rmul(&even_projector(n)).op_norm();

    let report = KamStepReport {
        step: state.nu_step,
        n_cut: cut,
        norm_r: decay_norm(&state.r(), cfg.s),
        norm_q: decay_norm(&state.q(), cfg.s),
        norm_next: decay_norm(&next.p, cfg.s),
        psi_norm,
        homological_residual: hom,
        conjugation_residual: conj,
        melnikov_min_ratio: verdict.min_ratio,
        melnikov_checked: verdict.checked,
        r_imag_defect: imag_defect,
        max_r,
        structure_psi: family::structure_defects(&phi, Coords::Complex, Symmetry::ReversibilityPreserving),
        structure_next: family::structure_defects(&next.p, Coords::Complex, Symmetry::Reversible),
        mu_head: next.sites().iter().take(6).map(|j| (*j, next.mu[j])).collect(),
    };
    Ok((next, report))
}

/// `N_{nu+1} = round(N_nu^{3/2})`.
pub fn next_scale(n: usize) -> usize {
    (n as f64).powf(1.5).round() as usize
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenvalueFit {
    pub m3: f64,
    pub m1: f64,
    pub j: Vec<i64>,
    pub mu: Vec<f64>,
    pub r: Vec<f64>,
    pub sup_r: f64,
}

/// Least-squares split `mu_j = m3 T(j) + m1 j^{1/2} + r_j` over the positive sites.
pub fn fit_eigenvalues(state: &KamState, kappa: f64) -> EigenvalueFit {
    let js = state.sites();
    let mu: Vec<f64> = js.iter().map(|j| state.mu[j]).collect();
    let a = nalgebra::DMatrix::from_fn(js.len(), 2, |r, col| {
        let x = js[r] as f64;
        if col == 0 {
            crate::psido::t_symbol(kappa, x)
        } else {
            x.sqrt()
        }
    });
    let b = nalgebra::DVector::from_vec(mu.clone());
    let sol = a.clone().svd(true, true).solve(&b, 1e-14).expect("least squares");
    let fit = &a * &sol;
    let r: Vec<f64> = mu.iter().zip(fit.iter()).map(|(m, f)| m - f).collect();
    let sup_r = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    EigenvalueFit { m3: sol[0], m1: sol[1], j: js, mu, r, sup_r }
}

#[derive(Clone, Debug, Serialize)]
pub struct KamReport {
    pub steps: Vec<KamStepReport>,
    pub norms: Vec<f64>,
    /// `||P_{nu+1}|| / ||P_nu||^{3/2}`
    pub superlinear_ratios: Vec<f64>,
    pub strictly_decreasing: bool,
    pub final_fit: EigenvalueFit,
    /// set when the iteration stopped early
    pub stopped: Option<String>,
}

pub fn iterate(state0: &KamState, omega: &[f64], kappa: f64, cfg: &KamConfig) -> (KamState, KamReport) {
    let k = state0.grid().k_phi();
    let mut state = state0.clone();
    let mut steps = vec![];
    let mut norms = vec![decay_norm(&state.p, cfg.s)];
    let mut stopped = None;
    for _ in 0..cfg.steps {
        let cut = state.n_nu.min(k);
        match kam_step(&state, omega, cfg, cut) {
            Ok((next, rep)) => {
                norms.push(rep.norm_next);
                steps.push(rep);
                state = next;
            }
            Err(e) => {
                stopped = Some(format!("step {}: {e}", state.nu_step));
                break;
            }
        }
    }
    let superlinear_ratios = norms.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0].powf(1.5) } else { 0.0 }).collect();
    let strictly_decreasing = norms.windows(2).all(|w| w[1] < w[0]);
    let final_fit = fit_eigenvalues(&state, kappa);
    (state, KamReport { steps, norms, superlinear_ratios, strictly_decreasing, final_fit, stopped })
}

/// Angle frequency of the desk runs, close to `(omega_1, omega_2)` at
/// `kappa = 1` and passing the Melnikov conditions of the flat normal
/// frequencies for `gamma = 1e-2, tau = 3, |l|_inf <= 8` with margin `6e-3`.
pub const DESK_OMEGA: [f64; 2] = [1.4289, 3.1066];

/// Desk scenario: `S+ = {1, 2}`, `kappa = 1`, seeded remainder of size `eps`
/// on `m_phi^2` angle points and the space modes `|j| <= n_x`.
pub fn seeded_run(eps: f64, seed: u64, m_phi: usize, n_x: usize, cfg: &KamConfig) -> (KamState, KamState, KamReport) {
    let freq = FrequencySet::new(&[1, 2], 1.0).expect("sites");
    let grid = Grid::new(freq.nu(), m_phi, 4 * n_x + 1);
    let p = seeded_remainder(&freq, grid, n_x, eps, 1.0, seed);
    let s0 = flat_state(&freq, p, cfg.n0);
    let (fin, rep) = iterate(&s0, &DESK_OMEGA, 1.0, cfg);
    (s0, fin, rep)
}

// ---------------------------------------------------------------------------
// majorant norms

/// Dense matrix on `(l, j)`, `|l|_inf <= k`, of the Toeplitz-in-angle operator.
pub fn dense_toeplitz(a: &Family, k: usize) -> (CMat, Vec<(Vec<i64>, i64)>) {
    let spec = a.phi_spectrum();
    let lookup: BTreeMap<Vec<i64>, &CMat> = spec.iter().map(|(l, m)| (l.clone(), m)).collect();
    let ells = ell_box(a.grid.nu, k);
    let d = a.dim();
    let n = a.n as i64;
    let bd = 2 * a.n + 1;
    let mut idx = vec![];
    for l in &ells {
        for r in 0..d {
            idx.push((l.clone(), (r % bd) as i64 - n));
        }
    }
    let tot = ells.len() * d;
    let mut out = CMat::zeros(tot, tot);
    for (a_i, l) in ells.iter().enumerate() {
        for (b_i, lp) in ells.iter().enumerate() {
            let dl: Vec<i64> = l.iter().zip(lp).map(|(x, y)| x - y).collect();
            if let Some(m) = lookup.get(&dl) {
                out.view_mut((a_i * d, b_i * d), (d, d)).copy_from(m);
            }
        }
    }
    (out, idx)
}

/// Induced `H^s -> H^s` norms of the majorant `|A|` and of `<d_phi>^b |A|`,
/// with `<(l, j)> = max(1, |l|_inf, |j|)`.
pub fn modulo_tame_diag(a: &CMat, idx: &[(Vec<i64>, i64)], s: f64, b: f64) -> (f64, f64) {
    let w: Vec<f64> = idx.iter().map(|(l, j)| crate::spectral::bracket(l, *j).powf(s)).collect();
    let maj = CMat::from_fn(a.nrows(), a.ncols(), |r, q| c(a[(r, q)].norm() * w[r] / w[q], 0.0));
    let wb = CMat::from_fn(a.nrows(), a.ncols(), |r, q| {
        let dl: Vec<i64> = idx[r].0.iter().zip(&idx[q].0).map(|(x, y)| x - y).collect();
        maj[(r, q)] * bracket_phi(&dl).powf(b)
    });
    (linalg::op_norm(&maj), linalg::op_norm(&wb))
}

pub fn majorant(a: &CMat) -> CMat {
    a.map(|z| c(z.norm(), 0.0))
}

/// `Pi_N^perp` on the dense `(l, j)` representation: keeps entries `|l - l'|_inf > N`.
pub fn dense_tail(a: &CMat, idx: &[(Vec<i64>, i64)], n_cut: usize) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |r, q| {
        let far = idx[r].0.iter().zip(&idx[q].0).any(|(x, y)| (x - y).unsigned_abs() as usize > n_cut);
        if far {
            a[(r, q)]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}
