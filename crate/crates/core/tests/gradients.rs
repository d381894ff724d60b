use cafv_core::gradcheck::{run_gradchecks, GradcheckConfig};

fn assert_all_pass(cfg: &GradcheckConfig) {
    let seeds: Vec<u64> = (0..25).collect();
    let rows = run_gradchecks(&seeds, cfg).unwrap();
    for r in &rows {
        assert!(r.checked >= 20, "{}: only {} seeds checked", r.term, r.checked);
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn one_hot_context_gradients_match_finite_differences() {
    assert_all_pass(&GradcheckConfig::default());
}

#[test]
fn learned_context_gradients_match_finite_differences() {
    assert_all_pass(&GradcheckConfig {
        learned_embedding: true,
        ..GradcheckConfig::default()
    });
}

#[test]
fn wider_models_up_to_eight_units() {
    assert_all_pass(&GradcheckConfig {
        feature_dim: 8,
        noise_dim: 4,
        hidden: 8,
        batch: 4,
        ..GradcheckConfig::default()
    });
}
