use nalgebra::DMatrix;
use proptest::prelude::*;
use std::collections::BTreeMap;
use toruskam::measure::*;

fn cfg() -> MeasureConfig {
    MeasureConfig::default()
}

fn model() -> FrequencyModel {
    FrequencyModel::unperturbed(&DEFAULT_SITES)
}

/// `d^r/dk^r sqrt(c0 + c1 k)` from the binomial series at `k`.
fn sqrt_linear_derivative(c0: f64, c1: f64, k: f64, r: usize) -> f64 {
    let base = c0 + c1 * k;
    let mut binom = 1.0;
    let mut fact = 1.0;
    for i in 0..r {
        binom *= (0.5 - i as f64) / (i + 1) as f64;
        fact *= (i + 1) as f64;
    }
    fact * binom * base.sqrt() * (c1 / base).powi(r as i32)
}

fn lambda_derivative(j: usize, k: f64, r: usize) -> f64 {
    if j == 0 {
        sqrt_linear_derivative(0.0, 1.0, k, r)
    } else {
        let jf = j as f64;
        sqrt_linear_derivative(jf, jf.powi(3), k, r)
    }
}

#[test]
fn two_mode_determinant() {
    let d = vandermonde_det(1.0, &[1, 2]).unwrap();
    assert!((x_node(1, 1.0) - 0.25).abs() < 1e-15);
    assert!((x_node(2, 1.0) - 0.4).abs() < 1e-15);
    assert!((d - 0.15).abs() < 1e-15, "{d}");
    assert_eq!(vandermonde_det(0.7, &[5]).unwrap(), 1.0);
    assert!(vandermonde_det(1.0, &[1, 3, 1]).is_err());
    assert!(vandermonde_det(0.0, &[1, 2]).is_err());
}

#[test]
fn determinant_matches_dense_derivative_matrix() {
    let modes = [0usize, 1, 2, 3];
    let mut worst: f64 = 0.0;
    for k in uniform(0.5, 2.0, 100) {
        let n = modes.len();
        let a = DMatrix::from_fn(n, n, |r, c| lambda_derivative(modes[c], k, r));
        let dense = a.determinant();
        let formula = derivative_matrix_prefactor(k, &modes) * vandermonde_det(k, &modes).unwrap();
        assert!(formula.abs() > 0.0);
        worst = worst.max((dense - formula).abs() / dense.abs());
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn all_small_tuples_are_nondegenerate() {
    let rep = nondegeneracy(0.5, 2.0, 100, 12, 5).unwrap();
    // sizes 1..5 of 13 modes
    assert_eq!(rep.tuples, 13 + 78 + 286 + 715 + 1287);
    assert!(rep.min_abs_det > 0.0, "{:?}", rep.argmin_modes);
    assert!(rep.min_by_size.iter().all(|m| *m > 0.0));
}

#[test]
fn gap_closed_form_example() {
    let m = FrequencyModel::unperturbed(&[1, 2]);
    let k = ResonanceKind::RII { ell: vec![1, 0], j: 3, jp: 4 };
    let f = |j: f64| (j * (1.0 + j * j)).sqrt();
    let hand = f(1.0) + f(3.0) - f(4.0);
    assert!((gap_function(&k, 1.0, &m) - hand).abs() < 1e-14);
    // the trivial triple
    let t = ResonanceKind::RII { ell: vec![0, 0], j: 5, jp: 5 };
    for s in uniform(0.5, 2.0, 7) {
        assert_eq!(gap_function(&t, s, &m), 0.0);
    }
    assert_eq!(t.threshold(1e-2, 3.0), 0.0);
    assert_eq!(resonant_measure(&t, &m, 1e-2, &cfg()), 0.0);
}

#[test]
fn gap_derivatives_match_finite_differences() {
    let m = FrequencyModel::unperturbed(&[1, 2]);
    let kinds = [
        ResonanceKind::R0 { ell: vec![2, -1] },
        ResonanceKind::RI { ell: vec![-3, 1], j: 4 },
        ResonanceKind::RII { ell: vec![1, 0], j: 3, jp: 4 },
        ResonanceKind::QII { ell: vec![-2, -2], j: 3, jp: 7 },
    ];
    let h = 1e-4;
    for kind in &kinds {
        for s in uniform(0.6, 1.9, 9) {
            for k in 0..3 {
                let fd = (gap_derivative(kind, s + h, &m, k) - gap_derivative(kind, s - h, &m, k)) / (2.0 * h);
                let exact = gap_derivative(kind, s, &m, k + 1);
                assert!((fd - exact).abs() < 1e-6, "{kind:?} {s} {k}: {fd} {exact}");
            }
        }
    }
}

#[test]
fn sampled_model_tracks_the_closed_forms() {
    let s_plus = [1usize];
    let kappas = uniform(0.5, 2.0, 40);
    let omegas: Vec<Vec<f64>> = kappas.iter().map(|&k| s_plus.iter().map(|&j| lambda(j, k)).collect()).collect();
    let mus: Vec<BTreeMap<usize, f64>> = kappas.iter().map(|&k| (2..=12).map(|j| (j, lambda(j, k))).collect()).collect();
    let sm = FrequencyModel::sampled(&s_plus, &kappas, &omegas, &mus).unwrap();
    let um = model();
    let kind = ResonanceKind::RII { ell: vec![2], j: 3, jp: 4 };
    let h = 1e-5;
    for s in uniform(0.55, 1.95, 30) {
        assert!((gap_function(&kind, s, &sm) - gap_function(&kind, s, &um)).abs() < 1e-4);
        let fd = (gap_function(&kind, s + h, &sm) - gap_function(&kind, s - h, &sm)) / (2.0 * h);
        assert!((fd - gap_derivative(&kind, s, &sm, 1)).abs() < 1e-6);
    }
    let a = excluded_measure_total(&sm, 1e-3, &cfg()).unwrap().total;
    let b = excluded_measure_total(&um, 1e-3, &cfg()).unwrap().total;
    assert!((a - b).abs() < 0.05 * b, "{a} {b}");
    assert!(FrequencyModel::sampled(&s_plus, &kappas[..20], &omegas[..20], &mus[..20]).is_err());
}

#[test]
fn zero_gamma_has_no_resonances() {
    let ex = excluded_measure_total(&model(), 0.0, &cfg()).unwrap();
    assert_eq!(ex.total, 0.0);
    assert_eq!(resonant_measure(&ResonanceKind::R0 { ell: vec![2] }, &model(), 0.0, &cfg()), 0.0);
}

/// Independent measurement of a monotone gap: both level crossings by
/// bisection over the whole interval.
fn monotone_oracle(kind: &ResonanceKind, m: &FrequencyModel, gamma: f64, c: &MeasureConfig) -> f64 {
    let t = kind.threshold(gamma, c.tau);
    let g = |s: f64| gap_function(kind, s, m);
    let increasing = g(c.kappa2) > g(c.kappa1);
    let solve = |level: f64| -> f64 {
        let (mut a, mut b) = (c.kappa1, c.kappa2);
        let h = |s: f64| if increasing { g(s) - level } else { level - g(s) };
        if h(a) >= 0.0 {
            return a;
        }
        if h(b) <= 0.0 {
            return b;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if h(mid) < 0.0 {
                a = mid
            } else {
                b = mid
            }
        }
        a
    };
    let (lo, hi) = if increasing { (solve(-t), solve(t)) } else { (solve(t), solve(-t)) };
    (hi - lo).max(0.0)
}

#[test]
fn monotone_gap_measure_matches_bisection() {
    let m = model();
    let c = cfg();
    let idx = prune_indices(&DEFAULT_SITES, 6, 12, default_restriction_constant(&m, 0.5, 2.0));
    let mut checked = 0;
    for kind in idx.values().flatten() {
        let d: Vec<f64> = uniform(0.5, 2.0, 400).into_iter().map(|s| gap_derivative(kind, s, &m, 1)).collect();
        let monotone = d.iter().all(|v| *v > 0.0) || d.iter().all(|v| *v < 0.0);
        let meas = resonant_measure(kind, &m, 1e-3, &c);
        if monotone && meas > 0.0 {
            let or = monotone_oracle(kind, &m, 1e-3, &c);
            assert!((meas - or).abs() < 1e-7, "{kind:?}: {meas} {or}");
            checked += 1;
        }
    }
    assert!(checked > 10, "{checked}");
}

#[test]
fn measure_scales_linearly_in_gamma() {
    let st = scaling_study(&model(), &[1e-2, 1e-3, 1e-4], &cfg()).unwrap();
    assert!((st.exponent - 1.0).abs() < 0.15, "{}", st.exponent);
    assert!(st.monotone);
    assert_eq!(st.expected_exponent, 1.0);
}

#[test]
fn excluded_measure_is_small() {
    let c = cfg();
    let ex = excluded_measure_total(&model(), 1e-3, &c).unwrap();
    assert!(ex.total < c.length() / 10.0, "{}", ex.total);
    assert!(ex.total > 0.0);
    assert!(ex.total <= ex.sum_of_parts + 1e-15);
    let more = excluded_measure_total(&model(), 2e-3, &c).unwrap();
    assert!(more.total > ex.total);
}

#[test]
fn threads_do_not_change_the_result() {
    let a = excluded_measure_total(&model(), 1e-3, &cfg()).unwrap();
    let b = excluded_measure_total(&model(), 1e-3, &MeasureConfig { threads: 3, ..cfg() }).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn prune_matches_hand_enumeration() {
    let idx = prune_indices(&[1], 2, 2, 2.0);
    // only site 2 is normal; 2^{3/2} <= 2<l> needs |l| = 2, 2 * 2^{3/2} <= 2<l> never
    assert_eq!(idx[&FamilyTag::R0], vec![ResonanceKind::R0 { ell: vec![1] }, ResonanceKind::R0 { ell: vec![2] }]);
    assert_eq!(
        idx[&FamilyTag::RI],
        vec![ResonanceKind::RI { ell: vec![-2], j: 2 }, ResonanceKind::RI { ell: vec![2], j: 2 }]
    );
    assert!(idx[&FamilyTag::RII].is_empty());
    assert!(idx[&FamilyTag::QII].is_empty());
    let wide = prune_indices(&[1], 2, 2, 3.0);
    assert_eq!(wide[&FamilyTag::RI].len(), 5);
    assert_eq!(
        wide[&FamilyTag::QII],
        vec![ResonanceKind::QII { ell: vec![-2], j: 2, jp: 2 }, ResonanceKind::QII { ell: vec![2], j: 2, jp: 2 }]
    );
}

#[test]
fn small_constant_keeps_neighbouring_pairs() {
    let idx = prune_indices(&[1, 2], 1, 12, 3.0);
    let rii = &idx[&FamilyTag::RII];
    assert!(!rii.is_empty());
    for k in rii {
        if let ResonanceKind::RII { j, jp, .. } = k {
            assert_eq!(jp - j, 1, "{k:?}");
        }
    }
}

#[test]
fn pruned_triples_are_never_resonant() {
    let m = model();
    let c = cfg();
    let (_, pruned) = enumerate_indices(&DEFAULT_SITES, 6, 12, default_restriction_constant(&m, 0.5, 2.0));
    assert!(!pruned.is_empty());
    for kind in &pruned {
        let t = kind.threshold(1e-2, c.tau);
        let min = uniform(0.5, 2.0, 1000).into_iter().map(|s| gap_function(kind, s, &m).abs()).fold(f64::INFINITY, f64::min);
        assert!(min > t, "{kind:?}");
    }
}

#[test]
fn gaps_are_transversal() {
    let rep = transversality(&model(), &cfg());
    assert!(rep.rho_hat > 0.0, "{rep:?}");
    assert!(rep.triples > 500);
    let two = transversality(&model(), &MeasureConfig { k0: 2, ..cfg() });
    assert!(two.rho_hat >= rep.rho_hat);
}

#[test]
fn spline_reproduces_cubics() {
    let x = uniform(0.0, 1.0, 31);
    let y: Vec<f64> = x.iter().map(|t| 2.0 + t).collect();
    let s = Spline::new(&x, &y).unwrap();
    for t in uniform(0.0, 1.0, 17) {
        assert!((s.eval(t, 0) - 2.0 - t).abs() < 1e-14);
        assert!((s.eval(t, 1) - 1.0).abs() < 1e-12);
    }
    assert!(Spline::new(&[0.0, 1.0, 1.0], &[0.0; 3]).is_err());
}

#[test]
fn merging_intervals() {
    let m = merge_intervals(vec![(0.3, 0.5), (0.1, 0.2), (0.45, 0.6), (0.7, 0.7)]);
    assert_eq!(m, vec![(0.1, 0.2), (0.3, 0.6)]);
    assert!((total_length(&m) - 0.4).abs() < 1e-15);
}

#[test]
fn small_grid_is_rejected() {
    assert!(excluded_measure_total(&model(), 1e-3, &MeasureConfig { grid_n: 50, ..cfg() }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn families_are_subadditive_and_monotone(g1 in 1e-4f64..2e-2, f in 1.0f64..5.0) {
        let c = MeasureConfig { ell_max: 3, mode_max: 8, ..cfg() };
        let a = excluded_measure_total(&model(), g1, &c).unwrap();
        let b = excluded_measure_total(&model(), g1 * f, &c).unwrap();
        prop_assert!(a.total <= a.sum_of_parts + 1e-15);
        prop_assert!(a.total <= b.total + 1e-12);
        for (fa, fb) in a.families.iter().zip(&b.families) {
            prop_assert!(fa.union <= fa.sum + 1e-15);
            prop_assert!(fa.union <= fb.union + 1e-12);
        }
    }

    #[test]
    fn determinant_is_nonzero_and_ordered(k in 0.5f64..2.0, a in 0usize..20, b in 0usize..20) {
        prop_assume!(a != b);
        let d = vandermonde_det(k, &[a, b]).unwrap();
        prop_assert!(d != 0.0);
        prop_assert!((d + vandermonde_det(k, &[b, a]).unwrap()).abs() < 1e-15);
    }
}
