use proptest::prelude::*;
use toruskam::dn::*;
use toruskam::linalg::{self, c, CMat, CVec, C64};
use toruskam::spectral::{Truncation, TorusField};

/// Centred coefficients of `sum a_k cos(kx)`.
fn cosines(n: usize, amps: &[(i64, f64)]) -> Vec<C64> {
    let mut v = vec![c(0.0, 0.0); 2 * n + 1];
    for &(k, a) in amps {
        v[(n as i64 + k) as usize] += c(0.5 * a, 0.0);
        v[(n as i64 - k) as usize] += c(0.5 * a, 0.0);
    }
    v
}

fn sup(v: &[C64]) -> f64 {
    v.iter().fold(0.0, |a, z| a.max(z.norm()))
}

fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn flat_surface_has_trivial_map() {
    let map = solve_conformal_1d(&cosines(4, &[]), 129, 1e-11, 20).unwrap();
    assert!(map.p.iter().all(|z| *z == c(0.0, 0.0)));
    assert_eq!(map.c, 0.0);
}

#[test]
fn first_iterate_is_hilbert_of_profile() {
    let eps = 1e-3;
    let eta = cosines(4, &[(1, eps)]);
    let m = 129;
    let p1 = conformal_step(&eta, &vec![c(0.0, 0.0); m], m);
    let h = (m - 1) / 2;
    // eps sin X = (eps/2i)(e^{iX} - e^{-iX})
    let mut expect = vec![c(0.0, 0.0); m];
    expect[h + 1] = c(0.0, -0.5 * eps);
    expect[h - 1] = c(0.0, 0.5 * eps);
    assert!(sup(&sub(&p1, &expect)) < 1e-17);
    let map = solve_conformal_1d(&eta, m, 1e-13, 30).unwrap();
    assert!(sup(&sub(&map.p, &expect)) < 2.0 * eps * eps);
}

#[test]
fn moderate_profile_converges_fast() {
    let eta = cosines(4, &[(1, 0.05)]);
    let map = solve_conformal_1d(&eta, solver_grid(32), 1e-11, 20).unwrap();
    assert!(map.residual < 1e-11);
    assert!(map.history.len() <= 20);
    assert!(map.contraction < 0.5);
    let (pxx, bound) = map.pxx_l2();
    assert!(pxx <= bound);
}

#[test]
fn steep_profile_is_rejected() {
    let eta = cosines(4, &[(2, 0.3)]);
    assert!(solve_conformal_1d(&eta, 129, 1e-11, 20).is_err());
}

#[test]
fn flat_dn_is_abs_d() {
    let (g, _) = dn_matrix(&cosines(8, &[]), 8).unwrap();
    let abs_d = CMat::from_fn(17, 17, |r, s| if r == s { c((r as f64 - 8.0).abs(), 0.0) } else { c(0.0, 0.0) });
    assert_eq!(g, abs_d);
    let out = dn_apply_1d(&cosines(8, &[]), &cosines(8, &[(2, 1.0)])).unwrap();
    assert_eq!(out, cosines(8, &[(2, 2.0)]));
}

#[test]
fn constants_are_in_the_kernel() {
    let eta = cosines(4, &[(1, 0.05), (2, 0.01)]);
    let out = dn_apply_1d(&eta, &cosines(16, &[(0, 1.0)])).unwrap();
    assert!(sup(&out) < 1e-9);
}

#[test]
fn dn_diagnostics_at_moderate_amplitude() {
    let eta = cosines(32, &[(1, 0.05)]);
    let (_, d) = diagnostics(&eta, 32).unwrap();
    assert!(d.residual < 1e-11, "{d:?}");
    assert!(d.selfadjoint_defect < 1e-8, "{d:?}");
    assert!(d.kernel_defect < 1e-8, "{d:?}");
    assert!(d.min_eigenvalue > -1e-8, "{d:?}");
    assert!(d.tail_decay < 1e-6, "{d:?}");
}

#[test]
fn remainder_matrix_matches_kernel() {
    let z = dn_remainder(&cosines(16, &[]), 16).unwrap();
    assert_eq!(linalg::max_abs(&z.matrix), 0.0);
    let r = dn_remainder(&cosines(32, &[(1, 0.05)]), 32).unwrap();
    assert!(r.agreement < 1e-6, "{}", r.agreement);
    assert!(linalg::max_abs(&r.matrix) > 1e-4);
}

#[test]
fn shape_derivative_matches_finite_difference() {
    let n = 12;
    let eta_hat = cosines(n, &[(2, 1.0)]);
    let psi = cosines(n, &[(1, 1.0)]);
    // at the flat state this is -|D|(eta_hat |D| psi) - d_x(eta_hat psi_x) = -cos x
    let d = dn_shape_derivative(&cosines(n, &[]), &eta_hat, &psi).unwrap();
    assert!(sup(&sub(&d, &cosines(n, &[(1, -1.0)]))) < 1e-12);
    let eta0 = cosines(n, &[(1, 0.03)]);
    let d = dn_shape_derivative(&eta0, &eta_hat, &psi).unwrap();
    let e = 1e-5;
    let shift = |s: f64| -> Vec<C64> { eta0.iter().zip(&eta_hat).map(|(a, b)| a + b * s).collect() };
    let fd: Vec<C64> = sub(&dn_apply_1d(&shift(e), &psi).unwrap(), &dn_apply_1d(&shift(-e), &psi).unwrap())
        .iter()
        .map(|z| z / (2.0 * e))
        .collect();
    assert!(sup(&sub(&d, &fd)) < 1e-4 * sup(&d), "{:?}", sub(&d, &fd));
}

#[test]
fn shape_derivative_trivial_cases() {
    let n = 8;
    let eta = cosines(n, &[(1, 0.02)]);
    let z = dn_shape_derivative(&eta, &cosines(n, &[]), &cosines(n, &[(1, 1.0)])).unwrap();
    assert!(sup(&z) < 1e-15);
    let z = dn_shape_derivative(&cosines(n, &[]), &cosines(n, &[(1, 1.0)]), &cosines(n, &[(0, 1.0)])).unwrap();
    assert!(sup(&z) < 1e-14);
}

#[test]
fn second_order_expansion_has_cubic_error() {
    let n = 16;
    let psi = cosines(n, &[(1, 1.0)]);
    let shape = cosines(n, &[(1, 1.0)]);
    let g0 = dn_apply_1d(&cosines(n, &[]), &psi).unwrap();
    let d1 = dn_shape_derivative(&cosines(n, &[]), &shape, &psi).unwrap();
    // second derivative by central differences of the shape derivative
    let h = 1e-3;
    let plus: Vec<C64> = shape.iter().map(|z| z * h).collect();
    let minus: Vec<C64> = shape.iter().map(|z| z * -h).collect();
    let d2: Vec<C64> = sub(
        &dn_shape_derivative(&plus, &shape, &psi).unwrap(),
        &dn_shape_derivative(&minus, &shape, &psi).unwrap(),
    )
    .iter()
    .map(|z| z / (2.0 * h))
    .collect();
    let err = |eps: f64| {
        let eta: Vec<C64> = shape.iter().map(|z| z * eps).collect();
        let g = dn_apply_1d(&eta, &psi).unwrap();
        let model: Vec<C64> = (0..g.len()).map(|i| g0[i] + d1[i] * eps + d2[i] * (0.5 * eps * eps)).collect();
        sup(&sub(&g, &model))
    };
    let (e1, e2) = (err(0.05), err(0.025));
    let slope = (e1 / e2).log2();
    assert!((slope - 3.0).abs() < 0.3, "{e1} {e2} {slope}");
}

#[test]
fn even_surfaces_give_even_operators() {
    let eta = cosines(16, &[(1, 0.04), (3, 0.01)]);
    let (g, _) = dn_matrix(&eta, 16).unwrap();
    let d = 33;
    let defect = (0..d).flat_map(|r| (0..d).map(move |s| (r, s))).fold(0.0f64, |a, (r, s)| {
        a.max((g[(r, s)] - g[(d - 1 - r, d - 1 - s)]).norm())
    });
    assert!(defect < 1e-12, "{defect}");
}

#[test]
fn flat_limit_is_linear() {
    let shape = cosines(16, &[(1, 1.0), (2, 0.5)]);
    let dev = |eps: f64| {
        let eta: Vec<C64> = shape.iter().map(|z| z * eps).collect();
        let (g, _) = dn_matrix(&eta, 16).unwrap();
        let abs_d = CMat::from_fn(33, 33, |r, s| if r == s { c((r as f64 - 16.0).abs(), 0.0) } else { c(0.0, 0.0) });
        linalg::op_norm(&(g - abs_d))
    };
    let (a, b, cc) = (dev(1e-1), dev(1e-2), dev(1e-3));
    let s1 = (a / b).log10();
    let s2 = (b / cc).log10();
    assert!((s1 - 1.0).abs() < 0.15 && (s2 - 1.0).abs() < 0.05, "{s1} {s2}");
}

#[test]
fn hamiltonian_reference_values() {
    let n = 8;
    assert_eq!(hamiltonian(&cosines(n, &[]), &cosines(n, &[]), 1.0).unwrap(), 0.0);
    let h = hamiltonian(&cosines(n, &[]), &cosines(n, &[(1, 1.0)]), 1.0).unwrap();
    assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
    // potential part: int cos^2/2 = pi/2; surface part by quadrature
    let eta = cosines(n, &[(1, 0.1)]);
    let h = hamiltonian(&eta, &cosines(n, &[]), 0.0).unwrap();
    assert!((h - 0.01 * std::f64::consts::FRAC_PI_2).abs() < 1e-14);
}

#[test]
fn field_dn_agrees_with_slices() {
    let t = Truncation::new(1, 2, 8).unwrap();
    let eta = TorusField::from_fn(t, |p, x| c(0.03 * p[0].cos() * x.cos(), 0.0));
    let psi = TorusField::from_fn(t, |p, x| c((2.0 * x).cos() + 0.1 * p[0].sin() * x.cos(), 0.0));
    let out = dn_apply(&eta, &psi).unwrap();
    let map = solve_conformal(&eta, 1e-12, 30).unwrap();
    assert!(map.residual < 1e-12);
    assert!(map.p.is_real(1e-14));
    // slice at phi = 0.7 against the one-dimensional routine
    let phi = 0.7f64;
    let e1 = cosines(8, &[(1, 0.03 * phi.cos())]);
    let p1: Vec<C64> = (0..17)
        .map(|i| {
            let j = i as i64 - 8;
            psi.modes().filter(|(_, k, _)| *k == j).map(|(l, _, v)| v * C64::new((l[0] as f64 * phi).cos(), (l[0] as f64 * phi).sin())).sum()
        })
        .collect();
    let g1 = dn_apply_1d(&e1, &p1).unwrap();
    for (i, v) in g1.iter().enumerate() {
        let j = i as i64 - 8;
        let w: C64 = out.modes().filter(|(_, k, _)| *k == j).map(|(l, _, v)| v * C64::new((l[0] as f64 * phi).cos(), (l[0] as f64 * phi).sin())).sum();
        // the angle truncation of the product is O(eta^3) at |l| = 3
        assert!((w - v).norm() < 1e-5, "{j}: {w} {v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dn_is_self_adjoint_on_random_profiles(a1 in -0.04f64..0.04, a2 in -0.02f64..0.02, b in prop::collection::vec(-1.0f64..1.0, 9)) {
        let n = 12;
        let eta = cosines(n, &[(1, a1), (2, a2)]);
        let (g, _) = dn_matrix(&eta, n).unwrap();
        let u = CVec::from_fn(2 * n + 1, |r, _| if r >= n - 4 && r <= n + 4 { c(b[r + 4 - n], 0.3 * b[(r + 5) % 9]) } else { c(0.0, 0.0) });
        let v = CVec::from_fn(2 * n + 1, |r, _| if r >= n - 4 && r <= n + 4 { c(b[(r + 2) % 9], -b[r + 4 - n]) } else { c(0.0, 0.0) });
        let lhs = (&g * &u).dotc(&v);
        let rhs = u.dotc(&(&g * &v));
        prop_assert!((lhs - rhs).norm() < 1e-8);
    }

    #[test]
    fn dn_is_positive(a1 in -0.05f64..0.05, a3 in -0.01f64..0.01) {
        let n = 12;
        let (g, _) = dn_matrix(&cosines(n, &[(1, a1), (3, a3)]), n).unwrap();
        let herm = (&g + g.adjoint()) * c(0.5, 0.0);
        let ev = linalg::hermitian_eigenvalues(&herm);
        prop_assert!(ev.iter().all(|e| *e > -1e-8));
    }
}
