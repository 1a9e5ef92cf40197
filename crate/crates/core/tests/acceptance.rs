//! One test per acceptance criterion; each prints its pass/fail line.

use pscnet_core::verify::{run_one, VerifyOptions};

fn criterion(id: u8) {
    let r = run_one(id, &VerifyOptions::default()).expect("suite exists");
    println!("{}", r.line());
    assert!(r.passed, "{}", r.line());
}

#[test]
fn c01_gradient_check() {
    criterion(1);
}

#[test]
fn c02_bayesian_loss_oracle() {
    criterion(2);
}

#[test]
fn c03_gcm_identities() {
    criterion(3);
}

#[test]
fn c04_conv_oracles() {
    criterion(4);
}

#[test]
fn c05_shape_law() {
    criterion(5);
}

#[test]
fn c06_metrics() {
    criterion(6);
}

#[test]
fn c07_overfit() {
    criterion(7);
}

#[test]
fn c08_generalization() {
    criterion(8);
}

#[test]
fn c09_lambda_ablation() {
    criterion(9);
}

#[test]
fn c10_determinism() {
    criterion(10);
}
