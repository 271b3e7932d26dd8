use proptest::prelude::*;
use toruskam::family::{self, Coords, Symmetry};
use toruskam::grid::{Grid, GridFn};
use toruskam::linalg::{self, c, CMat, C64};
use toruskam::linop::*;

fn zeros(n: usize) -> Vec<C64> {
    vec![c(0.0, 0.0); 2 * n + 1]
}

#[test]
fn frequency_values() {
    assert!((linear_frequency(1.0, 1.0) - 2f64.sqrt()).abs() < 1e-15);
    assert!((linear_frequency(2.0, 0.5) - 6f64.sqrt()).abs() < 1e-15);
    assert!((linear_frequency(2.0, 0.5) - 2.44948975).abs() < 1e-8);
    let ratio = linear_frequency(100.0, 1.0) / 100f64.powf(1.5);
    assert!((ratio - 1.0).abs() < 1e-4, "ratio {ratio}");
}

#[test]
fn frequency_set_validates() {
    assert!(FrequencySet::new(&[1, 2], 0.0).is_err());
    assert!(FrequencySet::new(&[1, 1], 1.0).is_err());
    assert!(FrequencySet::new(&[0, 2], 1.0).is_err());
    let f = FrequencySet::new(&[2, 1], 1.0).unwrap();
    assert_eq!(f.s_plus, vec![1, 2]);
    assert_eq!(f.normal_sites(5), vec![3, 4, 5]);
    assert!(f.in_s0(0) && f.in_s0(-2) && !f.in_s0(3));
    let t = f.tangential();
    assert!((t[1] - 10f64.sqrt()).abs() < 1e-15);
}

#[test]
fn kappa_derivatives_match_finite_differences() {
    for &j in &[1.0, 2.0, 5.0, 17.0] {
        for &k in &[0.3, 1.0, 2.5] {
            let h = 1e-4 * k;
            let f = |kk: f64| linear_frequency(j, kk);
            let d1 = (f(k + h) - f(k - h)) / (2.0 * h);
            let d2 = (f(k + h) - 2.0 * f(k) + f(k - h)) / (h * h);
            let e1 = d_kappa_frequency(j, k, 1);
            let e2 = d_kappa_frequency(j, k, 2);
            assert!(((d1 - e1) / e1).abs() < 1e-6, "r=1 j={j} k={k}");
            assert!(((d2 - e2) / e2).abs() < 1e-6, "r=2 j={j} k={k}: {d2} vs {e2}");
        }
    }
}

#[test]
fn third_kappa_derivative_by_differencing_the_second() {
    let (j, k, h) = (3.0, 0.7, 1e-5);
    let d = (d_kappa_frequency(j, k + h, 2) - d_kappa_frequency(j, k - h, 2)) / (2.0 * h);
    let e = d_kappa_frequency(j, k, 3);
    assert!(((d - e) / e).abs() < 1e-7);
}

#[test]
fn standing_wave_at_time_zero() {
    let (eta, psi) = standing_wave(&[(1, 0.25), (3, 4.0)], 1.0, 0.0, 5).unwrap();
    assert!(psi.iter().all(|z| z.norm() == 0.0));
    assert!((eta[6].re - 0.25).abs() < 1e-15 && (eta[8].re - 1.0).abs() < 1e-15);
    assert!(standing_wave(&[(1, -1.0)], 1.0, 0.0, 5).is_err());
}

#[test]
fn standing_wave_solves_linear_system() {
    let freq = FrequencySet::new(&[1, 2], 1.0).unwrap();
    let omega = freq.tangential();
    let grid = Grid::new(2, 9, 17);
    let (eta, psi) = standing_wave_torus(&freq, &[0.3, 0.7], 1.0, grid);
    let r1 = eta.omega_dphi(&omega).sub(&psi.dx().hilbert());
    let r2 = psi.omega_dphi(&omega).add(&eta).sub(&eta.dxx().scale(freq.kappa));
    assert!(r1.max_abs() < 1e-10 && r2.max_abs() < 1e-10, "{} {}", r1.max_abs(), r2.max_abs());
    assert!(eta.has_phi_parity(1.0, 1e-14) && psi.has_phi_parity(-1.0, 1e-14));
    assert!(eta.has_x_parity(1.0, 1e-14) && psi.has_x_parity(1.0, 1e-14));
}

#[test]
fn linear_energy_is_conserved() {
    let amps = [(1, 0.3), (2, 0.7)];
    let h0 = {
        let (e, p) = standing_wave(&amps, 1.0, 0.0, 4).unwrap();
        linear_hamiltonian(&e, &p, 1.0)
    };
    for s in 1..=10 {
        let (e, p) = standing_wave(&amps, 1.0, 0.37 * s as f64, 4).unwrap();
        assert!((linear_hamiltonian(&e, &p, 1.0) - h0).abs() < 1e-10);
    }
}

#[test]
fn nonlinear_energy_drift_is_cubic() {
    let amps = [(1, 0.3), (2, 0.7)];
    let drift = |eps: f64| {
        let scale = |v: Vec<C64>| v.into_iter().map(|z| z * eps).collect::<Vec<_>>();
        let (e0, p0) = standing_wave(&amps, 1.0, 0.0, 6).unwrap();
        let h0 = hamiltonian(&scale(e0), &scale(p0), 1.0).unwrap();
        (1..=6)
            .map(|s| {
                let (e, p) = standing_wave(&amps, 1.0, 0.5 * s as f64, 6).unwrap();
                (hamiltonian(&scale(e), &scale(p), 1.0).unwrap() - h0).abs()
            })
            .fold(0.0, f64::max)
    };
    let (d1, d2) = (drift(1e-2), drift(5e-3));
    assert!(d1 < 1e-5, "drift {d1}");
    let ratio = d1 / d2;
    assert!(ratio > 6.0 && ratio < 10.0, "ratio {ratio}");
}

#[test]
fn embedding_at_zero_angle() {
    let freq = FrequencySet::new(&[1, 3], 1.0).unwrap();
    let n = 5;
    let z = zeros(n);
    let (eta, psi) = embed_torus(&[0.0, 0.0], &[0.0, 0.0], (&z, &z), &[0.2, 0.5], &freq, n).unwrap();
    assert!(psi.iter().all(|v| v.norm() == 0.0));
    for k in -5i64..=5 {
        let on = freq.is_tangential(k);
        assert_eq!(eta[(k + 5) as usize].norm() > 0.0, on, "k = {k}");
    }
    assert_eq!(eta[n].norm(), 0.0);
}

#[test]
fn embedding_rejects_bad_input() {
    let freq = FrequencySet::new(&[1], 1.0).unwrap();
    let z = zeros(3);
    assert!(embed_torus(&[0.0], &[-0.3], (&z, &z), &[0.2], &freq, 3).is_err());
    let mut zt = zeros(3);
    zt[4] = c(0.1, 0.0);
    assert!(embed_torus(&[0.0], &[0.0], (&zt, &z), &[0.2], &freq, 3).is_err());
}

#[test]
fn embedded_torus_is_a_standing_wave_at_linear_level() {
    // with these action-angle signs the linear flow is theta' = -omega
    let freq = FrequencySet::new(&[1, 2], 1.0).unwrap();
    let grid = Grid::new(2, 7, 17);
    let omega: Vec<f64> = freq.tangential().iter().map(|w| -w).collect();
    let (eta, psi) = torus_on_grid(&freq, &[0.4, 0.1], 1.0, grid);
    let r1 = eta.omega_dphi(&omega).sub(&psi.dx().hilbert());
    let r2 = psi.omega_dphi(&omega).add(&eta).sub(&eta.dxx().scale(freq.kappa));
    assert!(r1.max_abs() < 1e-12 && r2.max_abs() < 1e-12, "{} {}", r1.max_abs(), r2.max_abs());
    assert!(eta.mean_x().max_abs() < 1e-14 && psi.mean_x().max_abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_round_trip(t1 in -3.0f64..3.0, t2 in -3.0f64..3.0, i1 in -0.1f64..1.0, i2 in -0.05f64..1.0, kappa in 0.2f64..3.0) {
        let freq = FrequencySet::new(&[1, 2], kappa).unwrap();
        let xi = [0.2, 0.1];
        let n = 4;
        let mut zr = zeros(n);
        zr[n + 3] = c(0.05, 0.0);
        zr[n - 3] = c(0.05, 0.0);
        let z0 = zeros(n);
        let (eta, psi) = embed_torus(&[t1, t2], &[i1, i2], (&zr, &z0), &xi, &freq, n).unwrap();
        let (th, act) = read_action_angle(&eta, &psi, &xi, &freq);
        prop_assert!((th[0] - t1).abs() < 1e-12 && (th[1] - t2).abs() < 1e-12);
        prop_assert!((act[0] - i1).abs() < 1e-12 && (act[1] - i2).abs() < 1e-12);
    }

    #[test]
    fn embedding_is_reversible(t1 in -3.0f64..3.0, i1 in 0.0f64..1.0, a in -0.2f64..0.2, b in -0.2f64..0.2) {
        let freq = FrequencySet::new(&[2], 1.0).unwrap();
        let n = 4;
        let mk = |v: f64| {
            let mut z = zeros(n);
            z[n + 1] = c(v, 0.0);
            z[n - 1] = c(v, 0.0);
            z
        };
        let (ze, zp) = (mk(a), mk(b));
        let zpn = mk(-b);
        let (e1, p1) = embed_torus(&[t1], &[i1], (&ze, &zp), &[0.3], &freq, n).unwrap();
        let (e2, p2) = embed_torus(&[-t1], &[i1], (&ze, &zpn), &[0.3], &freq, n).unwrap();
        for r in 0..2 * n + 1 {
            prop_assert!((e1[r] - e2[r]).norm() < 1e-14);
            prop_assert!((p1[r] + p2[r]).norm() < 1e-14);
        }
    }

    #[test]
    fn kappa_derivative_recursion(j in 1usize..50, k in 0.1f64..5.0, r in 1usize..6) {
        // d/dkappa of the r-th closed form equals the (r+1)-th one
        let h = 1e-6 * k;
        let jj = j as f64;
        let d = (d_kappa_frequency(jj, k + h, r) - d_kappa_frequency(jj, k - h, r)) / (2.0 * h);
        let e = d_kappa_frequency(jj, k, r + 1);
        prop_assert!(((d - e) / e).abs() < 1e-5);
    }
}

#[test]
fn flat_linearization_is_the_equilibrium() {
    let grid = Grid::new(1, 5, 33);
    let zero = GridFn::constant(grid, 0.0);
    let l = assemble_linearized(&zero, &zero, 1.3, &[2f64.sqrt()], 8).unwrap();
    assert!(l.deviation_from_flat() < 1e-13, "{}", l.deviation_from_flat());
}

#[test]
fn flat_block_spectrum_on_even_subspace() {
    let (kappa, n) = (0.8, 6);
    let e = even_basis(n);
    let a = e.adjoint() * flat_block(kappa, n) * &e;
    let mut im: Vec<f64> = linalg::eigenvalues(&a).iter().map(|z| z.im).collect();
    im.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut expect: Vec<f64> = (0..=n).flat_map(|j| {
        let w = linear_frequency(j as f64, kappa);
        [w, -w]
    }).collect();
    expect.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for (x, y) in im.iter().zip(&expect) {
        assert!((x - y).abs() < 1e-10, "{x} vs {y}");
    }
    let re = linalg::eigenvalues(&a).iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    assert!(re < 1e-10);
}

fn small_torus(eps: f64) -> (FrequencySet, GridFn, GridFn, Vec<f64>) {
    let freq = FrequencySet::new(&[1], 1.0).unwrap();
    let grid = Grid::new(1, 7, 33);
    let (eta, psi) = torus_on_grid(&freq, &[1.0], eps, grid);
    let omega = freq.tangential();
    (freq, eta, psi, omega)
}

#[test]
fn linearization_is_real_even_reversible() {
    let (_, eta, psi, omega) = small_torus(0.05);
    let l = assemble_linearized(&eta, &psi, 1.0, &omega, 8).unwrap();
    let d = l.structure();
    assert!(d.max() < 1e-12, "{d:?}");
    assert!(l.b.has_phi_parity(-1.0, 1e-12) && l.v.has_phi_parity(-1.0, 1e-12));
    assert!(l.v.has_x_parity(-1.0, 1e-12) && l.c.has_x_parity(1.0, 1e-12));
    // the real-coordinate test really detects a broken symmetry
    let broken = l.family.add(&top_left(family::Family::mult(&GridFn::from_fn(eta.grid, |p, _| p[0].cos()), 8)));
    assert!(family::structure_defects(&broken, Coords::Real, Symmetry::Reversible).reversible > 1e-3);
}

/// scalar family placed in the (1,1) block of a pair
fn top_left(f: family::Family) -> family::Family {
    let z = family::Family::zeros(f.grid, 1, f.n);
    family::Family::from_blocks(2, &[&f, &z, &z, &z])
}

#[test]
fn linearization_deviation_is_order_eps() {
    let dev = |eps: f64| {
        let (_, eta, psi, omega) = small_torus(eps);
        assemble_linearized(&eta, &psi, 1.0, &omega, 8).unwrap().deviation_from_flat()
    };
    let (a, b) = (dev(1e-2), dev(1e-3));
    assert!((a / b - 10.0).abs() < 0.5, "{a} {b}");
}

#[test]
fn dense_operator_includes_transport() {
    let (_, eta, psi, omega) = small_torus(0.02);
    let l = assemble_linearized(&eta, &psi, 1.0, &omega, 8).unwrap();
    let op = l.to_block_operator(3).unwrap();
    let t = op.trunc();
    // diagonal (l, j) entry of the first block carries i omega l
    let full = op.full();
    let nx = 2 * t.n_x + 1;
    let row = |l: usize, j: usize| l * nx + j;
    let r = row(6, t.n_x);
    assert!((full[(r, r)].im - 3.0 * omega[0]).abs() < 0.1, "{}", full[(r, r)]);
    assert!(op.blocks.iter().all(|b| b.real_defect() < 1e-12));
}

#[test]
fn normal_masking_removes_tangential_modes() {
    let (freq, eta, psi, omega) = small_torus(0.02);
    let l = assemble_linearized(&eta, &psi, 1.0, &omega, 4).unwrap();
    let m = mask_normal(&l.family, &freq);
    let d = 9;
    for a in &m.mats {
        for s in [3, 4, 5, d + 3, d + 4, d + 5] {
            assert!((0..2 * d).all(|r| a[(r, s)].norm() == 0.0 && a[(s, r)].norm() == 0.0));
        }
    }
    let keep: CMat = m.mats[0].clone();
    assert!(linalg::max_abs(&keep) > 0.1);
}
