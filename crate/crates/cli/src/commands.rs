//! One runner per subcommand.  Each parses its parameter block, runs the
//! numerics and returns checks with explicit thresholds.

use crate::{parse_params, Check, CliError, CliResult, Outcome, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use toruskam::chain::{self, ChainConfig, StepKind};
use toruskam::family::{self, Coords, Family, StructureDefects, Symmetry};
use toruskam::flow::{self, FlowOperator};
use toruskam::grid::{Grid, GridFn};
use toruskam::kam::{self, KamConfig};
use toruskam::linalg::{self, c, CMat, C64};
use toruskam::linop::{self, FrequencySet};
use toruskam::measure::{self, FrequencyModel, MeasureConfig};
use toruskam::psido::{self, DiscreteSymbol};
use toruskam::spectral::{TorusField, Truncation};

pub fn dispatch(s: &Scenario, threads: usize) -> CliResult<Outcome> {
    match s.command.as_str() {
        "calculus-check" => calculus(s),
        "dn" => dn(s),
        "linop" => linop(s),
        "reduce" => reduce(s),
        "flow" => flow(s),
        "kam" => kam(s),
        "measure" => measure(s, threads),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn structure_checks(prefix: &str, d: &StructureDefects, tol: f64) -> Vec<Check> {
    vec![
        Check::below(format!("structure.{prefix}.real"), d.real, tol),
        Check::below(format!("structure.{prefix}.even"), d.even, tol),
        Check::below(format!("structure.{prefix}.reversible"), d.reversible, tol),
    ]
}

/// Real and imaginary parts of a complex matrix as CSV.
pub fn matrix_csv(m: &CMat) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["row", "col", "re", "im"]).expect("csv");
    for r in 0..m.nrows() {
        for s in 0..m.ncols() {
            let z = m[(r, s)];
            w.write_record([r.to_string(), s.to_string(), format!("{:e}", z.re), format!("{:e}", z.im)]).expect("csv");
        }
    }
    String::from_utf8(w.into_inner().expect("csv")).expect("utf8")
}

fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).expect("csv");
    for r in rows {
        w.write_record(r).expect("csv");
    }
    String::from_utf8(w.into_inner().expect("csv")).expect("utf8")
}

/// Real cosine series `sum a_k cos(k x)` as modes `|j| <= n`.
fn cosine_modes(n: usize, amps: &[(usize, f64)]) -> CliResult<Vec<C64>> {
    let mut v = vec![c(0.0, 0.0); 2 * n + 1];
    for &(k, a) in amps {
        if k > n {
            return Err(config_err(format!("cosine mode {k} exceeds the cut-off {n}")));
        }
        if k == 0 {
            v[n] += c(a, 0.0);
        } else {
            v[n + k] += c(a / 2.0, 0.0);
            v[n - k] += c(a / 2.0, 0.0);
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// calculus-check

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CalculusParams {
    checks: Vec<String>,
    pairs: usize,
    n_x: usize,
    n_xi: usize,
    max_order: f64,
    oracle_tol: f64,
    remainder_order_a: f64,
    remainder_terms: u32,
    remainder_tol: f64,
    hilbert_n: usize,
    hilbert_tol: f64,
}

impl Default for CalculusParams {
    fn default() -> Self {
        CalculusParams {
            checks: vec!["oracle".into(), "remainder".into(), "hilbert".into()],
            pairs: 20,
            n_x: 32,
            n_xi: 64,
            max_order: 1.5,
            oracle_tol: 1e-11,
            remainder_order_a: 1.5,
            remainder_terms: 3,
            remainder_tol: 0.25,
            hilbert_n: 16,
            hilbert_tol: 1e-8,
        }
    }
}

/// Random symbol on the `(l, k)` box `|l| <= 1`, `|k| <= 3` with an
/// `xi`-profile of order `m`.
pub fn random_symbol(rng: &mut ChaCha8Rng, n_xi: usize, m: f64) -> DiscreteSymbol {
    let box_ = Truncation { nu: 1, k_phi: 1, n_x: 3 };
    let mut s = DiscreteSymbol::zeros(box_, n_xi, m);
    for l in -1..=1i64 {
        for k in -3..=3i64 {
            let amp = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (w, ph) = (rng.gen_range(0.1..0.5), rng.gen_range(0.0..6.0));
            for xi in -(n_xi as i64)..=(n_xi as i64) {
                let prof = (1.0 + (xi * xi) as f64).powf(m / 2.0) * (1.0 + 0.2 * (w * xi as f64 + ph).cos());
                s.set(&[l], k, xi, amp * prof);
            }
        }
    }
    s
}

/// Relative error of `Op(a # b)` against `Op(a) Op(b)` on the columns whose
/// intermediate modes stay inside the truncation.
pub fn oracle_error(a: &DiscreteSymbol, b: &DiscreteSymbol, t: Truncation) -> toruskam::error::Result<f64> {
    let (ab, _) = psido::compose_exact(a, b)?;
    let prod = linalg::mul(&psido::quantize(a, t)?.mat, &psido::quantize(b, t)?.mat);
    let qab = psido::quantize(&ab, t)?;
    let nx = t.x_count();
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for col in 0..t.len() {
        let lp = t.phi_mode(col / nx)[0];
        let jp = (col % nx) as i64 - t.n_x as i64;
        if lp.abs() > (t.k_phi - b.trunc.k_phi) as i64 || jp.abs() > (t.n_x - b.trunc.n_x) as i64 {
            continue;
        }
        for row in 0..t.len() {
            err = err.max((prod[(row, col)] - qab.mat[(row, col)]).norm());
            scale = scale.max(prod[(row, col)].norm());
        }
    }
    Ok(err / scale)
}

fn calculus(s: &Scenario) -> CliResult<Outcome> {
    let p: CalculusParams = parse_params(s)?;
    let mut out = Outcome::default();
    let mut data = serde_json::Map::new();
    for name in &p.checks {
        match name.as_str() {
            "oracle" => {
                if p.max_order > 1.5 {
                    return Err(config_err("calculus oracle orders must be <= 3/2"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let t = Truncation { nu: 1, k_phi: 3, n_x: p.n_x };
                let mut worst = 0.0f64;
                let mut errs = vec![];
                for _ in 0..p.pairs {
                    let (ma, mb) = (rng.gen_range(0.0..=p.max_order), rng.gen_range(0.0..=p.max_order));
                    let a = random_symbol(&mut rng, p.n_xi, ma);
                    let b = random_symbol(&mut rng, p.n_xi, mb);
                    let e = oracle_error(&a, &b, t)?;
                    errs.push(e);
                    worst = worst.max(e);
                }
                out.checks.push(Check::at_most("calculus.oracle_relative_error", worst, p.oracle_tol));
                data.insert("oracle_errors".into(), json!(errs));
            }
            "remainder" => {
                // a = |D|^{m}, b = e^{ix}: the N-term remainder decays like <xi>^{m-N}
                let n_x = p.n_x;
                let a = psido::FourierMultiplier::abs_d(p.remainder_order_a).symbol(1, 2 * n_x);
                let mut b = DiscreteSymbol::zeros(Truncation { nu: 1, k_phi: 0, n_x: 1 }, 2 * n_x, 0.0);
                for xi in -(2 * n_x as i64)..=(2 * n_x as i64) {
                    b.set(&[0], 1, xi, c(1.0, 0.0));
                }
                let (_, r, _) = psido::compose_asymptotic(&a, &b, p.remainder_terms)?;
                let slope = psido::slot_decay_exponent(&r, 0.0, n_x as i64 / 4, n_x as i64 / 2);
                let expected = p.remainder_order_a - p.remainder_terms as f64;
                out.checks.push(Check::at_most("calculus.remainder_exponent_deviation", (slope - expected).abs(), p.remainder_tol));
                data.insert("remainder_exponent".into(), json!(slope));
                data.insert("remainder_expected".into(), json!(expected));
            }
            "hilbert" => {
                let n = p.hilbert_n;
                let h = family::hilbert_matrix(n);
                let sq = linalg::mul(&h, &h);
                let target = -(linalg::identity(2 * n + 1) - family::pi0_matrix(n));
                out.checks.push(Check::at_most("calculus.hilbert_square_defect", linalg::max_abs(&(sq - target)), 0.0));
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let t = Truncation { nu: 1, k_phi: 2, n_x: n };
                let mut u = TorusField::zeros(t);
                u.coeffs.iter_mut().for_each(|z| *z = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                let hh = psido::hilbert(&psido::hilbert(&u));
                out.checks.push(Check::at_most(
                    "calculus.hilbert_field_square_defect",
                    hh.sub(&u.mean_x().sub(&u)).sobolev_norm(0.0),
                    0.0,
                ));
                let a = TorusField::from_fn(Truncation { nu: 1, k_phi: 1, n_x: n }, |_, x| c(x.cos(), 0.0));
                let k = psido::commutator_ah_kernel(&a).to_matrix(n);
                let m = psido::commutator_ah_matrix(&a, n);
                out.checks.push(Check::below("calculus.commutator_kernel_defect", linalg::max_abs(&(k - &m)), p.hilbert_tol));
                out.artifacts.push(("commutator.csv".into(), matrix_csv(&m)));
            }
            other => return Err(config_err(format!("unknown calculus check `{other}`"))),
        }
    }
    out.data = Value::Object(data);
    Ok(out)
}

// ---------------------------------------------------------------------------
// dn

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DnParams {
    /// `[k, a_k]` pairs of the cosine profile
    eta: Vec<(usize, f64)>,
    n: usize,
    residual_tol: f64,
    selfadjoint_tol: f64,
    kernel_tol: f64,
    tail_tol: f64,
    shape_tol: f64,
}

impl Default for DnParams {
    fn default() -> Self {
        DnParams {
            eta: vec![(1, 0.05)],
            n: 32,
            residual_tol: 1e-11,
            selfadjoint_tol: 1e-8,
            kernel_tol: 1e-8,
            tail_tol: 1e-6,
            shape_tol: 1e-4,
        }
    }
}

fn sup(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |a, z| a.max(z.norm()))
}

fn dn(s: &Scenario) -> CliResult<Outcome> {
    let p: DnParams = parse_params(s)?;
    let n = p.n;
    let mut out = Outcome::default();
    // flat surface: G(0) = |D| exactly
    let (g0, _) = toruskam::dn::dn_matrix(&vec![c(0.0, 0.0); 2 * n + 1], n)?;
    let abs_d = CMat::from_fn(2 * n + 1, 2 * n + 1, |r, q| if r == q { c((r as f64 - n as f64).abs(), 0.0) } else { c(0.0, 0.0) });
    out.checks.push(Check::at_most("dn.flat_defect", linalg::max_abs(&(g0 - abs_d)), 0.0));

    let eta = cosine_modes(n, &p.eta)?;
    let (g, d) = toruskam::dn::diagnostics(&eta, n)?;
    out.checks.push(Check::below("dn.conformal_residual", d.residual, p.residual_tol));
    out.checks.push(Check::below("dn.selfadjoint_defect", d.selfadjoint_defect, p.selfadjoint_tol));
    out.checks.push(Check::below("dn.kernel_defect", d.kernel_defect, p.kernel_tol));
    out.checks.push(Check::below("dn.tail_decay", d.tail_decay, p.tail_tol));
    out.checks.push(Check::above("dn.min_eigenvalue", d.min_eigenvalue, -p.kernel_tol));
    // real even profile: the operator is real and even
    let mut r_def = 0.0f64;
    let mut e_def = 0.0f64;
    let dd = 2 * n;
    for r in 0..=dd {
        for q in 0..=dd {
            r_def = r_def.max((g[(r, q)] - g[(dd - r, dd - q)].conj()).norm());
            e_def = e_def.max((g[(r, q)] - g[(dd - r, dd - q)]).norm());
        }
    }
    out.checks.push(Check::below("structure.dn.real", r_def, 1e-12));
    out.checks.push(Check::below("structure.dn.even", e_def, 1e-12));

    // shape derivative against centered differences
    let m = 12.min(n);
    let eta0 = cosine_modes(m, &p.eta.iter().copied().filter(|(k, _)| *k <= m).collect::<Vec<_>>())?;
    let eta_hat = cosine_modes(m, &[(2, 1.0)])?;
    let psi = cosine_modes(m, &[(1, 1.0)])?;
    let sd = toruskam::dn::dn_shape_derivative(&eta0, &eta_hat, &psi)?;
    let h = 1e-5;
    let shifted = |t: f64| -> Vec<C64> { eta0.iter().zip(&eta_hat).map(|(a, b)| a + b * t).collect() };
    let plus = toruskam::dn::dn_apply_1d(&shifted(h), &psi)?;
    let minus = toruskam::dn::dn_apply_1d(&shifted(-h), &psi)?;
    let fd: Vec<C64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<C64> = sd.iter().zip(&fd).map(|(a, b)| a - b).collect();
    out.checks.push(Check::below("dn.shape_derivative_relative", sup(&diff) / sup(&sd), p.shape_tol));

    out.data = serde_json::to_value(&d).expect("serializable");
    out.artifacts.push(("matrix.csv".into(), matrix_csv(&g)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// linop

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LinopParams {
    s_plus: Vec<usize>,
    kappa: f64,
    xi: Vec<f64>,
    epsilon: f64,
    /// space cut-off `N`
    truncation: usize,
    m_phi: usize,
    structure_tol: f64,
}

impl Default for LinopParams {
    fn default() -> Self {
        LinopParams { s_plus: vec![1], kappa: 1.0, xi: vec![1.0], epsilon: 0.05, truncation: 8, m_phi: 7, structure_tol: 1e-12 }
    }
}

fn linop(s: &Scenario) -> CliResult<Outcome> {
    let p: LinopParams = parse_params(s)?;
    if p.xi.len() != p.s_plus.len() {
        return Err(config_err("xi must have one amplitude per tangential site"));
    }
    let freq = FrequencySet::new(&p.s_plus, p.kappa)?;
    let grid = Grid::new(freq.nu(), p.m_phi, 4 * p.truncation + 1);
    let (eta, psi) = linop::torus_on_grid(&freq, &p.xi, p.epsilon, grid);
    let l = linop::assemble_linearized(&eta, &psi, p.kappa, &freq.tangential(), p.truncation)?;
    let d = l.structure();
    let mut out = Outcome::default();
    out.checks.extend(structure_checks("linop", &d, p.structure_tol));
    out.checks.push(Check::below("linop.conformal_residual", l.conformal_residual, 1e-10));
    if p.epsilon == 0.0 {
        out.checks.push(Check::below("linop.flat_deviation", l.deviation_from_flat(), 1e-13));
    }
    out.data = json!({
        "omega": freq.tangential(),
        "conformal_residual": l.conformal_residual,
        "deviation_from_flat": l.deviation_from_flat(),
        "structure": d,
    });
    out.artifacts.push(("slice0.csv".into(), matrix_csv(&l.family.mats[0])));
    Ok(out)
}

// ---------------------------------------------------------------------------
// reduce

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ReduceParams {
    s_plus: Vec<usize>,
    xi: Vec<f64>,
    kappa: f64,
    epsilon: f64,
    m_phi: usize,
    n_x: usize,
    n_int: usize,
    decouple_steps: usize,
    gamma: f64,
    tau: f64,
    quad_nodes: usize,
    /// also reduce the flat torus and require identities
    flat_check: bool,
    step_tol_cap: f64,
    a3a4_tol: f64,
    a14_tol: f64,
    m1_tol: f64,
    identity_tol: f64,
    structure_tol: f64,
}

impl Default for ReduceParams {
    fn default() -> Self {
        let c = ChainConfig::default();
        ReduceParams {
            s_plus: vec![1],
            xi: vec![1.0],
            kappa: 1.0,
            epsilon: 1e-3,
            m_phi: 9,
            n_x: c.n_x,
            n_int: c.n_int,
            decouple_steps: c.decouple_steps,
            gamma: c.gamma,
            tau: c.tau,
            quad_nodes: c.quad_nodes,
            flat_check: true,
            step_tol_cap: 1e-7,
            a3a4_tol: 1e-10,
            a14_tol: 1e-8,
            m1_tol: 1e-8,
            identity_tol: 1e-12,
            structure_tol: 1e-12,
        }
    }
}

fn reduce(s: &Scenario) -> CliResult<Outcome> {
    let p: ReduceParams = parse_params(s)?;
    let cfg = ChainConfig {
        n_x: p.n_x,
        n_int: p.n_int,
        decouple_steps: p.decouple_steps,
        gamma: p.gamma,
        tau: p.tau,
        quad_nodes: p.quad_nodes,
    };
    let mut out = Outcome::default();
    let (_, ch) = chain::reduce_standing_wave(&p.s_plus, &p.xi, p.kappa, p.epsilon, p.m_phi, cfg.clone())?;
    for st in &ch.steps {
        let label = st.kind.label();
        out.checks.push(Check::at_most(format!("reduce.{label}.residual"), st.residual, st.tolerance));
        out.checks.push(Check::at_most(format!("reduce.{label}.tolerance"), st.tolerance, p.step_tol_cap));
        out.checks.push(Check::below(format!("reduce.{label}.identity_defect"), st.identity_defect, p.identity_tol));
        out.checks.push(Check::below(format!("structure.reduce.{label}.forward"), st.forward_structure.max(), p.structure_tol));
        out.checks.push(Check::below(format!("structure.reduce.{label}.output"), st.output_structure.max(), p.structure_tol));
    }
    let diag = |k: StepKind, key: &str| ch.step(k).map(|st| st.diagnostics.get(key).copied().unwrap_or(f64::NAN)).unwrap_or(f64::NAN);
    out.checks.push(Check::below("reduce.a3a4_x_variation", diag(StepKind::Straighten, "a3a4_x_variation"), p.a3a4_tol));
    out.checks.push(Check::below("reduce.a14_mean_phi_variation", diag(StepKind::Egorov, "a14_mean_phi_variation"), p.a14_tol));
    let k = &ch.constants;
    out.checks.push(Check::below("reduce.m1_quadrature_defect", (k.m1 - k.m1_oracle).abs(), p.m1_tol));
    let sp = &ch.spectrum;
    out.checks.push(Check::at_most("reduce.eigenvalue_deviation", sp.max_deviation, sp.remainder_norm_nonzero));

    let mut flat = Value::Null;
    if p.flat_check {
        let (_, f) = chain::reduce_standing_wave(&p.s_plus, &p.xi, p.kappa, 0.0, p.m_phi, cfg)?;
        for st in &f.steps {
            let label = st.kind.label();
            // fixed coordinate changes are exact on the flat torus only through their output
            let dev = match st.kind {
                StepKind::Symmetrize | StepKind::Complexify => st.residual,
                _ => st.transform_deviation,
            };
            out.checks.push(Check::below(format!("reduce.flat.{label}.identity"), dev, p.identity_tol));
            out.checks.push(Check::below(format!("structure.reduce.flat.{label}.output"), st.output_structure.max(), p.structure_tol));
        }
        flat = json!({ "m3": f.constants.m3, "m1": f.constants.m1, "max_deviation": f.spectrum.max_deviation });
    }
    out.data = json!({
        "steps": ch.reports(),
        "m3": k.m3,
        "m1": k.m1,
        "m1_oracle": k.m1_oracle,
        "spectrum": sp,
        "flat": flat,
    });
    let rows: Vec<Vec<String>> = sp
        .j
        .iter()
        .zip(&sp.mu)
        .zip(&sp.predicted)
        .map(|((j, m), q)| vec![j.to_string(), format!("{m:e}"), format!("{q:e}")])
        .collect();
    out.artifacts.push(("eigenvalues.csv".into(), table_csv(&["j", "mu", "predicted"], &rows)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// flow

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FlowParams {
    /// `[k, a_k]`: the coefficient is `sin(phi) sum a_k cos(k x)`
    a: Vec<(usize, f64)>,
    t: f64,
    n: usize,
    m_phi: usize,
    /// coefficient of the unitarity check
    constant: f64,
    unitary_tol: f64,
    group_tol: f64,
    adjoint_tol: f64,
    refinement_tol: f64,
    refinement_modes: usize,
    structure_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            a: vec![(0, 0.1), (1, 0.1)],
            t: 1.0,
            n: 32,
            m_phi: 5,
            constant: 0.7,
            unitary_tol: 1e-12,
            group_tol: 1e-8,
            adjoint_tol: 1e-8,
            refinement_tol: 1e-6,
            refinement_modes: 4,
            structure_tol: 1e-12,
        }
    }
}

fn flow(s: &Scenario) -> CliResult<Outcome> {
    let p: FlowParams = parse_params(s)?;
    if p.n < 2 * p.refinement_modes || p.n % 2 != 0 {
        return Err(config_err("flow needs an even n >= 2 refinement_modes"));
    }
    if p.m_phi < 3 {
        return Err(config_err("flow needs m_phi >= 3"));
    }
    let mut out = Outcome::default();
    let n = p.n;
    let m_x = 4 * n + 1;

    // constant coefficient: a unitary multiplier
    let fc = flow::galerkin_flow(&GridFn::constant(Grid::new(1, 1, m_x), p.constant), p.t, n);
    let m = &fc.family.mats[0];
    let unit = linalg::max_abs(&(m.adjoint() * m - linalg::identity(2 * n + 1)));
    out.checks.push(Check::below("flow.constant_unitary_defect", unit, p.unitary_tol));

    let grid = Grid::new(1, p.m_phi, m_x);
    let modes = p.a.clone();
    let a = GridFn::from_fn(grid, move |ph, x| ph[0].sin() * modes.iter().map(|(k, v)| v * (*k as f64 * x).cos()).sum::<f64>());
    let group = FlowOperator::group_defect(&a, 0.4 * p.t, 0.6 * p.t, n).max(FlowOperator::group_defect(&a, p.t, -p.t, n));
    out.checks.push(Check::below("flow.group_defect", group, p.group_tol));
    let f = flow::galerkin_flow(&a, p.t, n);
    let adj = flow::adjoint_flow(&a, p.t, n);
    let duality = adj.family.sub(&f.family.adjoint()).max_abs();
    out.checks.push(Check::below("flow.adjoint_defect", duality, p.adjoint_tol));

    let half = flow::galerkin_flow(&a, p.t, n / 2);
    let lo = p.refinement_modes;
    let mut refine = 0.0f64;
    for g in 0..grid.n_slices() {
        let bm = family::restrict(&f.family.mats[g], n, lo);
        let sm = family::restrict(&half.family.mats[g], n / 2, lo);
        refine = refine.max(linalg::max_abs(&(bm - sm)));
    }
    out.checks.push(Check::below("flow.refinement_defect", refine, p.refinement_tol));

    let pair = Family::diag2(&f.family, &f.family.map(|_, m| family::mirror(m)));
    let d = family::structure_defects(&pair, Coords::Complex, Symmetry::ReversibilityPreserving);
    out.checks.extend(structure_checks("flow", &d, p.structure_tol));

    // slice 0 sits at phi = 0 where the coefficient vanishes
    let slice = a.slice(1).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let u0: Vec<C64> = (0..2 * n + 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let times: Vec<f64> = (0..=10).map(|k| p.t * k as f64 / 10.0).collect();
    let energy = flow::energy_diagnostic(&slice, &u0, &times);
    out.checks.push(Check::holds("flow.energy_within_envelope", energy.within_envelope));
    out.data = json!({
        "unitary_defect": unit,
        "group_defect": group,
        "duality_defect": duality,
        "refinement_defect": refine,
        "structure": d,
        "energy": energy,
    });
    out.artifacts.push(("flow.csv".into(), matrix_csv(&f.family.mats[1])));
    Ok(out)
}

// ---------------------------------------------------------------------------
// kam

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct KamParams {
    epsilon: f64,
    gamma: f64,
    tau: f64,
    steps: usize,
    n0: usize,
    m_phi: usize,
    n_x: usize,
    homological_tol: f64,
    superlinear_bound: f64,
    structure_tol: f64,
    /// also run at zero amplitude and require a fixed point
    flat_check: bool,
    /// amplitudes of an eigenvalue-correction scaling study
    scaling_epsilons: Vec<f64>,
    slope_tol: f64,
}

impl Default for KamParams {
    fn default() -> Self {
        let k = KamConfig::default();
        KamParams {
            epsilon: 1e-3,
            gamma: k.gamma,
            tau: k.tau,
            steps: k.steps,
            n0: k.n0,
            m_phi: 17,
            n_x: 16,
            homological_tol: 1e-11,
            superlinear_bound: 10.0,
            structure_tol: 1e-12,
            flat_check: false,
            scaling_epsilons: vec![],
            slope_tol: 0.2,
        }
    }
}

fn kam(s: &Scenario) -> CliResult<Outcome> {
    let p: KamParams = parse_params(s)?;
    if p.m_phi % 2 == 0 || p.m_phi < 3 {
        return Err(config_err("m_phi must be odd and >= 3"));
    }
    let cfg = KamConfig { gamma: p.gamma, tau: p.tau, steps: p.steps, n0: p.n0, ..KamConfig::default() };
    let mut out = Outcome::default();
    let (s0, fin, rep) = kam::seeded_run(p.epsilon, s.seed, p.m_phi, p.n_x, &cfg);
    if let Some(why) = &rep.stopped {
        out.checks.push(Check::holds("kam.completed", false));
        out.data = json!({ "norms": rep.norms, "steps_completed": rep.steps.len() });
        out.error = Some(format!("Melnikov conditions failed after {} completed steps; {why}", rep.steps.len()));
        return Ok(out);
    }
    out.checks.push(Check::at_most("kam.steps_completed", (p.steps - rep.steps.len()) as f64, 0.0));
    for st in &rep.steps {
        let k = st.step;
        out.checks.push(Check::below(format!("kam.step{k}.homological_residual"), st.homological_residual, p.homological_tol));
        out.checks.push(Check::below(format!("kam.step{k}.mu_real_defect"), st.r_imag_defect, p.structure_tol));
        out.checks.extend(structure_checks(&format!("kam.step{k}.psi"), &st.structure_psi, p.structure_tol));
        out.checks.extend(structure_checks(&format!("kam.step{k}.next"), &st.structure_next, p.structure_tol));
    }
    out.checks.push(Check::holds("kam.norms_strictly_decreasing", rep.strictly_decreasing || p.epsilon == 0.0));
    let worst = rep.superlinear_ratios.iter().fold(0.0f64, |a, b| a.max(*b));
    out.checks.push(Check::below("kam.superlinear_ratio", worst, p.superlinear_bound));
    out.checks.push(Check::holds("structure.kam.mu_even", s0.mu_is_even() && fin.mu_is_even()));

    let mut flat = Value::Null;
    if p.flat_check {
        let (f0, ff, fr) = kam::seeded_run(0.0, s.seed, p.m_phi, p.n_x, &cfg);
        let fixed = fr.stopped.is_none() && ff.mu == f0.mu && fr.norms.iter().all(|v| *v == 0.0);
        out.checks.push(Check::holds("kam.flat_fixed_point", fixed));
        flat = json!({ "norms": fr.norms });
    }
    let mut scaling = Value::Null;
    if !p.scaling_epsilons.is_empty() {
        let mut sup = vec![];
        for &e in &p.scaling_epsilons {
            if e == p.epsilon {
                sup.push(rep.final_fit.sup_r);
                continue;
            }
            let (_, _, r) = kam::seeded_run(e, s.seed, p.m_phi, p.n_x, &cfg);
            if let Some(why) = r.stopped {
                out.checks.push(Check::holds("kam.scaling_completed", false));
                out.error = Some(format!("scaling run at epsilon {e:e}: Melnikov conditions failed; {why}"));
                return Ok(out);
            }
            sup.push(r.final_fit.sup_r);
        }
        let slope = linalg::loglog_slope(&p.scaling_epsilons, &sup);
        out.checks.push(Check::at_most("kam.eigenvalue_slope_deviation", (slope - 1.0).abs(), p.slope_tol));
        scaling = json!({ "epsilons": p.scaling_epsilons, "sup_r": sup, "slope": slope });
    }
    let steps: Vec<Value> = rep
        .steps
        .iter()
        .map(|st| {
            json!({
                "step": st.step,
                "n_cut": st.n_cut,
                "norm_R": st.norm_r,
                "norm_Q": st.norm_q,
                "norm_next": st.norm_next,
                "melnikov_min_gap": st.melnikov_min_ratio,
                "homological_residual": st.homological_residual,
                "mu_head": st.mu_head,
            })
        })
        .collect();
    out.data = json!({
        "steps": steps,
        "norms": rep.norms,
        "superlinear_ratios": rep.superlinear_ratios,
        "final_fit": { "m3": rep.final_fit.m3, "m1": rep.final_fit.m1, "sup_r": rep.final_fit.sup_r },
        "flat": flat,
        "scaling": scaling,
    });
    let fit = &rep.final_fit;
    let rows: Vec<Vec<String>> = fit
        .j
        .iter()
        .zip(&fit.mu)
        .zip(&fit.r)
        .map(|((j, m), r)| vec![j.to_string(), format!("{m:e}"), format!("{r:e}")])
        .collect();
    out.artifacts.push(("eigenvalues.csv".into(), table_csv(&["j", "mu", "r"], &rows)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// measure

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MeasureParams {
    gammas: Vec<f64>,
    tau: f64,
    k0: usize,
    ell_max: usize,
    mode_max: usize,
    grid_n: usize,
    s_plus: Vec<usize>,
    kappa1: f64,
    kappa2: f64,
    restriction_constant: Option<f64>,
    exponent_tol: f64,
    vandermonde_samples: usize,
    vandermonde_size: usize,
}

impl Default for MeasureParams {
    fn default() -> Self {
        let d = MeasureConfig::default();
        MeasureParams {
            gammas: vec![1e-2, 1e-3, 1e-4],
            tau: d.tau,
            k0: d.k0,
            ell_max: d.ell_max,
            mode_max: d.mode_max,
            grid_n: d.grid_n,
            s_plus: measure::DEFAULT_SITES.to_vec(),
            kappa1: d.kappa1,
            kappa2: d.kappa2,
            restriction_constant: None,
            exponent_tol: 0.15,
            vandermonde_samples: 100,
            vandermonde_size: 5,
        }
    }
}

fn measure(s: &Scenario, threads: usize) -> CliResult<Outcome> {
    let p: MeasureParams = parse_params(s)?;
    if p.gammas.iter().any(|g| !(*g >= 0.0)) || p.s_plus.is_empty() {
        return Err(config_err("gammas must be nonnegative and s_plus nonempty"));
    }
    let cfg = MeasureConfig {
        kappa1: p.kappa1,
        kappa2: p.kappa2,
        tau: p.tau,
        k0: p.k0,
        ell_max: p.ell_max,
        mode_max: p.mode_max,
        grid_n: p.grid_n,
        c: p.restriction_constant,
        threads,
        ..MeasureConfig::default()
    };
    cfg.validate().map_err(|e| config_err(e.to_string()))?;
    let model = FrequencyModel::unperturbed(&p.s_plus);
    let study = measure::scaling_study(&model, &p.gammas, &cfg)?;
    let nd = measure::nondegeneracy(p.kappa1, p.kappa2, p.vandermonde_samples, p.mode_max, p.vandermonde_size)?;
    let tr = measure::transversality(&model, &cfg);
    let mut out = Outcome::default();
    out.checks.push(Check::at_most("measure.exponent_deviation", (study.exponent - study.expected_exponent).abs(), p.exponent_tol));
    out.checks.push(Check::holds("measure.monotone_in_gamma", study.monotone));
    for r in &study.runs {
        out.checks.push(Check::at_most(format!("measure.subadditive.gamma={:e}", r.gamma), r.total - r.sum_of_parts, 0.0));
    }
    out.checks.push(Check::above("measure.vandermonde_min_abs_det", nd.min_abs_det, 0.0));
    out.checks.push(Check::above("measure.rho_hat", tr.rho_hat, 0.0));
    let mut rows = vec![];
    for r in &study.runs {
        for f in &r.families {
            rows.push(vec![
                format!("{:e}", r.gamma),
                f.family.label().to_string(),
                f.triples.to_string(),
                f.nonempty.to_string(),
                format!("{:e}", f.sum),
                format!("{:e}", f.union),
                format!("{:e}", f.expected),
            ]);
        }
        rows.push(vec![format!("{:e}", r.gamma), "total".into(), String::new(), String::new(), format!("{:e}", r.sum_of_parts), format!("{:e}", r.total), String::new()]);
    }
    out.artifacts.push((
        "measures.csv".into(),
        table_csv(&["gamma", "family", "triples", "nonempty", "sum", "union", "expected_scale"], &rows),
    ));
    out.data = json!({
        "gammas": study.gammas,
        "totals": study.runs.iter().map(|r| r.total).collect::<Vec<_>>(),
        "exponent": study.exponent,
        "expected_exponent": study.expected_exponent,
        "family_exponents": study.family_exponents,
        "restriction_constant": study.runs.first().map(|r| r.restriction_constant),
        "vandermonde": { "tuples": nd.tuples, "min_abs_det": nd.min_abs_det, "argmin_modes": nd.argmin_modes, "argmin_kappa": nd.argmin_kappa, "min_by_size": nd.min_by_size },
        "rho_hat": tr.rho_hat,
        "rho_hat_triple": tr.worst,
        "rho_hat_kappa": tr.worst_kappa,
    });
    Ok(out)
}
