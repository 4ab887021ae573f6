use std::time::Instant;

use clickbait_core::gradcheck::run_suite;

#[test]
fn suite_passes_for_several_seeds() {
    for seed in [0, 1, 2] {
        let start = Instant::now();
        let report = run_suite(seed).unwrap();
        println!("seed {seed} ({:.1?})\n{}", start.elapsed(), report.render());
        assert!(report.passed(), "seed {seed}\n{}", report.render());
    }
}

#[test]
fn suite_catches_a_flipped_tanh_adjoint() {
    use clickbait_core::tensor::{inject_fault, Fault};
    inject_fault(Some(Fault::TanhBackwardSign));
    let report = run_suite(0);
    inject_fault(None);
    let report = report.unwrap();
    assert!(!report.passed());
    let failed: Vec<_> = report
        .checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.name)
        .collect();
    for name in [
        "sigmoid/tanh",
        "lstm_cell",
        "bilstm",
        "attention",
        "hybrid_model_loss",
    ] {
        assert!(failed.contains(&name), "{name} not flagged: {failed:?}");
    }
    // checks without tanh are unaffected
    assert!(!failed.contains(&"matmul") && !failed.contains(&"siamese_text"));
}
