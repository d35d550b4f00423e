use tgloc_core::gradcheck::{central_difference, relative_error, run_check, run_gradcheck, GradcheckOptions, CHECKS};

#[test]
fn all_gradients_agree_with_finite_differences() {
    let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
    for c in &report.checks {
        assert_eq!(c.instances, 50);
        assert!(c.passed, "{}: max relative error {:e}", c.name, c.max_rel_error);
    }
    assert_eq!(report.checks.len(), CHECKS.len());
}

#[test]
fn other_seeds_also_pass() {
    for seed in [1, 2, 3] {
        let opts = GradcheckOptions {
            seed,
            instances: 20,
            ..Default::default()
        };
        let c = run_check("objective", &opts).unwrap();
        assert!(c.passed, "seed {seed}: {:e}", c.max_rel_error);
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    for name in CHECKS {
        let opts = GradcheckOptions {
            instances: 5,
            corrupt: Some(name.to_string()),
            ..Default::default()
        };
        let c = run_check(name, &opts).unwrap();
        assert!(!c.passed, "{name} did not notice a 0.1% gradient error");
        assert!(c.max_rel_error > 1e-4);
    }
}

#[test]
fn central_difference_of_a_cubic() {
    let g = central_difference(|x| Ok(x[0].powi(3) + 2.0 * x[1]), &[2.0, -1.0], 1e-6).unwrap();
    assert!(relative_error(&g, &[12.0, 2.0]) < 1e-9);
    assert!(run_check("nonsense", &GradcheckOptions::default()).is_err());
}
