//! Full-scale acceptance suite. Each criterion is its own test and prints a
//! single pass/fail line; run with `--nocapture` to see them all.

use cgl_ergo::experiment::{criteria, Criterion, Scale};

fn criterion(id: u32) -> Criterion {
    criteria(Scale::Full)
        .into_iter()
        .find(|c| c.id == id)
        .expect("criterion id")
}

fn check(id: u32) {
    let result = criterion(id).evaluate(None).expect("criterion runs");
    println!("{}", result.line());
    assert!(result.passed, "{}", result.line());
}

#[test]
fn criterion_01_energy_identity() {
    check(1);
}

#[test]
fn criterion_02_linear_ou_exactness() {
    check(2);
}

#[test]
fn criterion_03_stationary_h1_balance() {
    check(3);
}

#[test]
fn criterion_04_deterministic_decay() {
    check(4);
}

#[test]
fn criterion_05_squeezing() {
    check(5);
}

#[test]
fn criterion_06_mixing_decay() {
    check(6);
}

#[test]
fn criterion_07_tail_statistic() {
    check(7);
}

#[test]
fn criterion_08_interpolation_inequality() {
    check(8);
}

#[test]
fn criterion_09_stochastic_convolution_growth() {
    check(9);
}

#[test]
fn criterion_10_hitting_and_recurrence() {
    check(10);
}

#[test]
fn criterion_11_determinism() {
    check(11);
}
