use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toruskam::family::{self, Coords, Family, Symmetry};
use toruskam::flow::*;
use toruskam::grid::{Grid, GridFn};
use toruskam::linalg::{self, c, CMat, CVec, C64};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..2 * n + 1).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn cos_field(grid: Grid, amp: f64) -> GridFn {
    GridFn::from_fn(grid, move |_, x| amp * x.cos())
}

#[test]
fn zero_coefficient_gives_identity() {
    let grid = Grid::new(1, 3, 33);
    let f = galerkin_flow(&GridFn::constant(grid, 0.0), 1.0, 8);
    assert!(f.family.sub(&Family::identity(grid, 1, 8)).max_abs() == 0.0);
}

#[test]
fn constant_coefficient_is_a_unitary_multiplier() {
    let grid = Grid::new(1, 3, 33);
    let (a, t, n) = (0.7, 1.3, 8);
    let f = galerkin_flow(&GridFn::constant(grid, a), t, n);
    let m = &f.family.mats[0];
    for r in 0..2 * n + 1 {
        let j = r as f64 - n as f64;
        let e = c(0.0, a * t * j.abs().sqrt()).exp();
        assert!((m[(r, r)] - e).norm() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = rand_vec(&mut rng, n);
    let v = f.apply(0, &u);
    let (nu, nv) = (CVec::from_vec(u).norm(), CVec::from_vec(v).norm());
    assert!((nu - nv).abs() < 1e-12 * nu);
    let adj = adjoint_flow(&GridFn::constant(grid, a), t, n);
    assert!(linalg::max_abs(&(&adj.family.mats[0] - m.adjoint())) < 1e-12);
}

#[test]
fn expm_and_rk4_agree() {
    let grid = Grid::new(1, 5, 33);
    let a = GridFn::from_fn(grid, |p, x| 0.1 * x.cos() + 0.05 * p[0].sin() * (2.0 * x).cos());
    let e = galerkin_flow(&a, 1.0, 10);
    let r = galerkin_flow_with(&a, 1.0, 10, Integrator::Rk4);
    assert!(r.steps > 0);
    assert!(e.family.sub(&r.family).max_abs() < 1e-9);
}

#[test]
fn group_property() {
    let grid = Grid::new(1, 5, 33);
    let a = GridFn::from_fn(grid, |p, x| 0.1 * x.cos() * (1.0 + p[0].sin()));
    assert!(FlowOperator::group_defect(&a, 0.4, 0.7, 10) < 1e-8);
    assert!(FlowOperator::group_defect(&a, 1.0, -1.0, 10) < 1e-8);
}

#[test]
fn galerkin_refinement_converges_on_low_modes() {
    let grid = Grid::new(1, 1, 129);
    let a = cos_field(grid, 0.1);
    let (n, lo) = (32, 4);
    let big = galerkin_flow(&a, 1.0, n);
    let small = galerkin_flow(&a, 1.0, n / 2);
    let bm = family::restrict(&big.family.mats[0], n, lo);
    let sm = family::restrict(&small.family.mats[0], n / 2, lo);
    let d = linalg::max_abs(&(&bm - &sm));
    assert!(d < 1e-6, "{d}");
}

#[test]
fn adjoint_matches_transpose_and_pairing() {
    let grid = Grid::new(1, 3, 33);
    let a = GridFn::from_fn(grid, |p, x| 0.15 * x.cos() + 0.05 * (p[0] + 2.0 * x).cos());
    let n = 8;
    let f = galerkin_flow(&a, 1.0, n);
    let adj = adjoint_flow(&a, 1.0, n);
    assert!(adj.family.sub(&f.family.adjoint()).max_abs() < 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let u = CVec::from_vec(rand_vec(&mut rng, n));
        let v = CVec::from_vec(rand_vec(&mut rng, n));
        for g in 0..grid.n_slices() {
            let lhs = (&f.family.mats[g] * &u).dotc(&v);
            let rhs = u.dotc(&(&adj.family.mats[g] * &v));
            assert!((lhs - rhs).norm() < 1e-8);
        }
    }
}

#[test]
fn flow_is_even_and_reversibility_preserving() {
    // a odd in phi and even in x
    let grid = Grid::new(1, 7, 33);
    let a = GridFn::from_fn(grid, |p, x| 0.2 * p[0].sin() * (1.0 + x.cos()) + 0.1 * (2.0 * p[0]).sin() * (3.0 * x).cos());
    let f = galerkin_flow(&a, 1.0, 8);
    let pair = Family::diag2(&f.family, &f.family.map(|_, m| family::mirror(m)));
    let d = family::structure_defects(&pair, Coords::Complex, Symmetry::ReversibilityPreserving);
    assert!(d.max() < 1e-12, "{d:?}");
}

#[test]
fn flow_is_slice_local() {
    let grid = Grid::new(1, 5, 33);
    let a = GridFn::from_fn(grid, |p, x| 0.1 * p[0].cos() * x.cos());
    let f = galerkin_flow(&a, 1.0, 8);
    for g in 0..grid.n_slices() {
        let single = galerkin_flow(&GridFn::from_fn(Grid::new(1, 1, 33), |_, x| 0.1 * grid.phi_point(g)[0].cos() * x.cos()), 1.0, 8);
        assert!(linalg::max_abs(&(&f.family.mats[g] - &single.family.mats[0])) < 1e-14);
    }
}

#[test]
fn energy_constant_coefficient_is_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u0 = rand_vec(&mut rng, 8);
    let rep = energy_diagnostic(&[0.4; 33], &u0, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    assert!(rep.drift < 1e-12 && rep.rate < 1e-12);
}

#[test]
fn energy_stays_in_commutator_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u0 = rand_vec(&mut rng, 8);
    let a: Vec<f64> = (0..33).map(|m| 0.1 * (2.0 * std::f64::consts::PI * m as f64 / 33.0).cos()).collect();
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let rep = energy_diagnostic(&a, &u0, &times);
    assert!(rep.c_comm > 0.0 && rep.rate > 0.0);
    assert!(rep.within_envelope, "{rep:?}");
    let zero = energy_diagnostic(&a, &vec![c(0.0, 0.0); 17], &times);
    assert!(zero.norms.iter().all(|v| *v == 0.0));
}

#[test]
fn paraproduct_constant_coefficient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = rand_vec(&mut rng, 6);
    let (t, r) = paraproduct_split(&[c(2.5, 0.0)], &u);
    for (i, z) in u.iter().enumerate() {
        assert!((t[i] - z * 2.5).norm() < 1e-15);
    }
    assert!(r.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn paraproduct_remainder_constant_is_stable_in_s() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // smooth data with geometric decay
    let rough = |rng: &mut ChaCha8Rng, n: usize, q: f64| -> Vec<C64> {
        let v = rand_vec(rng, n);
        v.into_iter().enumerate().map(|(i, z)| z * q.powi((i as i64 - n as i64).abs() as i32)).collect()
    };
    let mut worst: f64 = 0.0;
    let mut ratios = vec![];
    for s in [1.0, 2.0, 3.0] {
        let mut m: f64 = 0.0;
        for _ in 0..20 {
            let a = rough(&mut rng, 12, 0.6);
            let u = rough(&mut rng, 12, 0.6);
            m = m.max(remainder_ratio(&a, &u, s));
        }
        ratios.push(m);
        worst = worst.max(m);
    }
    assert!(worst < 10.0, "{ratios:?}");
    assert!(ratios[2] < 3.0 * ratios[0] + 1e-12, "{ratios:?}");
}

#[test]
fn egorov_keeps_the_order() {
    // Phi |D| (1 + 0.1 cos x) Phi^{-1} stays of order one
    let grid = Grid::new(1, 1, 129);
    let n = 32;
    let a = cos_field(grid, 0.2);
    let f = galerkin_flow(&a, 1.0, n);
    let fi = galerkin_flow(&a, -1.0, n);
    let p0 = linalg::mul(
        &family::multiplier(n, |j| c(j.unsigned_abs() as f64, 0.0)),
        &family::mult_matrix(&GridFn::from_fn(grid, |_, x| 1.0 + 0.1 * x.cos()).data, n),
    );
    let conj = linalg::mul3(&f.family.mats[0], &p0, &fi.family.mats[0]);
    let interior: CMat = family::restrict(&conj, n, n / 2);
    let base = column_order(&family::restrict(&p0, n, n / 2), n / 2, 2, 12);
    let ord = column_order(&interior, n / 2, 2, 12);
    assert!((ord - base).abs() < 0.3, "{ord} vs {base}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn paraproduct_reconstructs_product(seed in 0u64..10_000, na in 0usize..6, nu in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_vec(&mut rng, na);
        let u = rand_vec(&mut rng, nu);
        let (t, r) = paraproduct_split(&a, &u);
        let m = na + nu;
        for k in -(m as i64)..=(m as i64) {
            let mut full = c(0.0, 0.0);
            for ka in -(na as i64)..=(na as i64) {
                let xi = k - ka;
                if xi.abs() <= nu as i64 {
                    full += a[(ka + na as i64) as usize] * u[(xi + nu as i64) as usize];
                }
            }
            let idx = (k + m as i64) as usize;
            prop_assert!((t[idx] + r[idx] - full).norm() < 1e-14);
        }
    }

    #[test]
    fn flow_is_nearly_unitary(amp in 0.0f64..0.3, t in -1.0f64..1.0) {
        let grid = Grid::new(1, 1, 33);
        let f = galerkin_flow(&cos_field(grid, amp), t, 8);
        let ci = amp * t.abs();
        prop_assert!(f.l2_bound() <= (ci * 4.0).exp() + 1e-12);
    }
}
