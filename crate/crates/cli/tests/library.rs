use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use toruskam::spectral::Truncation;
use toruskam_cli::commands::{oracle_error, random_symbol};
use toruskam_cli::*;

#[test]
fn check_relations() {
    assert!(Check::below("a", 1.0, 2.0).pass);
    assert!(!Check::below("a", 2.0, 2.0).pass);
    assert!(Check::at_most("a", 2.0, 2.0).pass);
    assert!(Check::above("a", 3.0, 2.0).pass);
    assert!(!Check::above("a", 2.0, 2.0).pass);
    // a NaN never passes
    for r in [Relation::Below, Relation::AtMost, Relation::Above] {
        assert!(!Check::new("a", f64::NAN, r, 1.0).pass);
    }
    assert!(Check::holds("structure.x", true).pass && Check::holds("structure.x", true).is_structure());
    assert!(!Check::holds("y", false).pass);
}

#[test]
fn scenario_validation() {
    let s = Scenario::from_value(json!({ "name": "a", "command": "dn" })).unwrap();
    assert_eq!(s.seed, 0);
    assert!(s.params.as_object().unwrap().is_empty());
    for bad in [
        json!({ "name": "a", "command": "other" }),
        json!({ "name": "", "command": "dn" }),
        json!({ "name": "a/b", "command": "dn" }),
        json!({ "command": "dn" }),
        json!({ "name": "a", "command": "dn", "extra": 1, "seed": "x" }),
    ] {
        let e = Scenario::from_value(bad).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
    }
}

#[test]
fn bad_parameters_are_config_errors() {
    for (cmd, params) in [
        ("calculus-check", json!({ "checks": ["nope"] })),
        ("calculus-check", json!({ "checks": ["oracle"], "max_order": 2.0 })),
        ("dn", json!({ "eta": [[40, 0.1]], "n": 16 })),
        ("linop", json!({ "xi": [1.0, 2.0] })),
        ("flow", json!({ "n": 7 })),
        ("kam", json!({ "m_phi": 4 })),
        ("measure", json!({ "grid_n": 10 })),
        ("measure", json!({ "s_plus": [] })),
    ] {
        let s = Scenario::from_value(json!({ "name": "x", "command": cmd, "params": params })).unwrap();
        let e = run_scenario(&s, 1).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG, "{cmd}: {e}");
    }
}

#[test]
fn numeric_errors_become_failed_reports() {
    // a negative surface tension is a domain error in the core
    let s = Scenario::from_value(json!({ "name": "l", "command": "linop", "params": { "kappa": -1.0 } })).unwrap();
    let run = run_scenario(&s, 1).unwrap();
    assert!(!run.report.pass);
    assert!(run.report.error.as_deref().unwrap().contains("domain"), "{:?}", run.report.error);
    assert_eq!(run.report.exit_code(), EXIT_NUMERIC);
}

#[test]
fn oracle_is_exact_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Truncation { nu: 1, k_phi: 3, n_x: 16 };
    let a = random_symbol(&mut rng, 32, 1.5);
    let b = random_symbol(&mut rng, 32, 0.5);
    assert!(oracle_error(&a, &b, t).unwrap() < 1e-12);
}

#[test]
fn summary_counts_and_csv() {
    let s = Scenario::from_value(json!({ "name": "d", "command": "dn", "params": { "n": 8 } })).unwrap();
    let strict = Scenario::from_value(json!({ "name": "e", "command": "dn", "params": { "n": 8, "kernel_tol": 0.0 } })).unwrap();
    let runs = run_all(&[s, strict], 2).unwrap();
    let sum = summarize(&runs);
    assert_eq!(sum.failed, 1);
    assert_eq!(sum.exit_code(), EXIT_NUMERIC);
    let csv = sum.csv();
    assert!(csv.starts_with("name,command,pass,checks,failures,error\n"));
    assert!(csv.contains("\ne,dn,false,"));
}
