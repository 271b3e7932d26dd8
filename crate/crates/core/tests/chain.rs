use proptest::prelude::*;
use std::sync::OnceLock;
use toruskam::chain::*;
use toruskam::grid::{Grid, GridFn};
use toruskam::linop::FrequencySet;

fn run(eps: f64) -> Chain {
    let (_, ch) = reduce_standing_wave(&[1], &[1.0], 1.0, eps, 9, ChainConfig::default()).expect("chain");
    ch
}

fn flat() -> &'static Chain {
    static C: OnceLock<Chain> = OnceLock::new();
    C.get_or_init(|| run(0.0))
}

fn small() -> &'static Chain {
    static C: OnceLock<Chain> = OnceLock::new();
    C.get_or_init(|| run(1e-3))
}

fn double() -> &'static Chain {
    static C: OnceLock<Chain> = OnceLock::new();
    C.get_or_init(|| run(2e-3))
}

#[test]
fn flat_chain_is_exact() {
    let ch = flat();
    for s in &ch.steps {
        match s.kind {
            // fixed coordinate changes: the output must be the flat normal form
            StepKind::Symmetrize | StepKind::Complexify => assert!(s.residual < 1e-12, "{:?}", s.report()),
            _ => assert!(s.transform_deviation < 1e-12, "{:?}", s.report()),
        }
        assert!(s.identity_defect < 1e-12);
    }
    for k in [StepKind::GoodUnknown, StepKind::Straighten, StepKind::TimeReparam, StepKind::Egorov] {
        assert!(ch.step(k).unwrap().is_identity, "{k:?}");
    }
    assert_eq!(ch.constants.m3, 1.0);
    assert_eq!(ch.constants.m1, 0.0);
    assert!(ch.spectrum.max_deviation < 1e-12);
    let w = FrequencySet::new(&[1], 1.0).unwrap();
    for (j, mu) in ch.spectrum.j.iter().zip(&ch.spectrum.mu) {
        assert!((mu - w.omega_j(*j as usize)).abs() < 1e-12);
    }
}

#[test]
fn every_step_meets_its_tolerance() {
    for s in &small().steps {
        assert!(s.passed(), "{:?}", s.report());
        assert!(s.tolerance <= 1e-7);
        assert!(s.identity_defect < 1e-12, "{:?}", s.report());
    }
}

#[test]
fn straightened_and_averaged_coefficients() {
    let ch = small();
    let st = ch.step(StepKind::Straighten).unwrap();
    assert!(st.diagnostics["a3a4_x_variation"] < 1e-10);
    let sy = ch.step(StepKind::Symmetrize).unwrap();
    assert!(sy.diagnostics["m3_x_variation"] < 1e-10);
    assert!(sy.diagnostics["m3_oracle_defect"] < 1e-12);
    let eg = ch.step(StepKind::Egorov).unwrap();
    assert!(eg.diagnostics["a14_mean_phi_variation"] < 1e-8);
    let tr = ch.step(StepKind::TimeReparam).unwrap();
    assert!(tr.diagnostics["p_parity_defect"] < 1e-12);
}

#[test]
fn m1_matches_direct_quadrature() {
    let k = &small().constants;
    assert!(k.m1 < 0.0);
    assert!((k.m1 - k.m1_oracle).abs() < 1e-8);
    assert!((k.m1 - k.m1_oracle).abs() < 1e-6 * k.m1.abs());
    let eg = small().step(StepKind::Egorov).unwrap();
    assert!((eg.diagnostics["m1_from_a11"] - k.m1).abs() < 1e-6 * k.m1.abs());
}

#[test]
fn constants_scale_with_the_amplitude() {
    let (a, b) = (&small().constants, &double().constants);
    let slope = (b.m1 / a.m1).ln() / 2f64.ln();
    assert!((slope - 2.0).abs() < 0.05, "{slope}");
    let slope3 = ((1.0 - b.m3) / (1.0 - a.m3)).ln() / 2f64.ln();
    assert!((slope3 - 2.0).abs() < 0.05, "{slope3}");
    let ea = small().step(StepKind::Egorov).unwrap().diagnostics["a_sup"];
    let eb = double().step(StepKind::Egorov).unwrap().diagnostics["a_sup"];
    assert!(((eb / ea).ln() / 2f64.ln() - 1.0).abs() < 0.05);
}

#[test]
fn decoupling_lowers_the_offdiagonal_order() {
    let ch = small();
    for k in 1..=ch.config.decouple_steps {
        let d = &ch.step(StepKind::BlockDecouple(k)).unwrap().diagnostics;
        assert!(d["offdiag_slot_before"] >= 3.0 * d["offdiag_slot_after"], "{d:?}");
        assert!(d["offdiag_order_after"] < d["offdiag_order_before"] - 1.0, "{d:?}");
        assert!(d["homological_residual"] < 1e-15);
    }
}

#[test]
fn structure_is_preserved_by_every_step() {
    for ch in [flat(), small()] {
        for s in &ch.steps {
            assert!(s.forward_structure.max() < 1e-12, "{} {:?}", s.kind.label(), s.forward_structure);
            assert!(s.output_structure.max() < 1e-12, "{} {:?}", s.kind.label(), s.output_structure);
        }
    }
}

#[test]
fn final_eigenvalues_match_the_normal_form() {
    let sp = &small().spectrum;
    assert!(sp.max_deviation <= sp.remainder_norm_nonzero, "{sp:?}");
    assert!(sp.max_deviation > 0.0);
    let eg = small().step(StepKind::Egorov).unwrap();
    assert!(eg.diagnostics["order_after"] < 0.0);
    let ho = small().step(StepKind::HalfOrder).unwrap();
    assert!(ho.diagnostics["homological_residual"] < 1e-12);
    assert!(ho.diagnostics["p_symmetry_defect"] < 1e-12);
}

fn transport(grid: Grid, amp: f64) -> (GridFn, GridFn) {
    let a11 = GridFn::from_fn(grid, move |p, x| amp * p[0].sin() * x.sin() + 0.3 * amp * p[0].sin() * (2.0 * x).sin());
    let a12 = GridFn::from_fn(grid, move |p, x| 0.5 * amp * x.sin() * (1.0 + 0.2 * p[0].cos()));
    (a11, a12)
}

#[test]
fn flow_step_removes_a_large_transport_term() {
    // independent check of the order-one-half coefficient of the flow step;
    // at this amplitude the flow needs 17 angle points to resolve d_phi
    let grid = Grid::new(1, 17, 129);
    let (a11, a12) = transport(grid, 0.1);
    let omega = [2f64.sqrt()];
    let mut r = Reducer::transport_form(&omega, 1.0, 0.97, &a11, &a12, ChainConfig::default());
    let step = r.egorov().unwrap();
    assert!(step.passed(), "{:?}", step.report());
    let d = &step.diagnostics;
    assert!(d["order_before"] > 0.9, "{d:?}");
    assert!(d["order_after"] < 0.2, "{d:?}");
    assert!(d["a14_mean_phi_variation"] < 1e-8);
    // m1 is the mean of the averaged coefficient, close to its leading term
    assert!((d["m1"] - d["m1_from_a11"]).abs() < 0.1 * d["m1"].abs(), "{d:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn flow_step_preserves_structure(amp in 0.0f64..0.02) {
        let grid = Grid::new(1, 9, 129);
        let (a11, a12) = transport(grid, amp);
        let cfg = ChainConfig { quad_nodes: 6, ..ChainConfig::default() };
        let mut r = Reducer::transport_form(&[2f64.sqrt()], 1.0, 1.0, &a11, &a12, cfg);
        let step = r.egorov().unwrap();
        prop_assert!(step.forward_structure.max() < 1e-12);
        prop_assert!(step.output_structure.max() < 1e-12);
        prop_assert!(step.passed());
    }
}
