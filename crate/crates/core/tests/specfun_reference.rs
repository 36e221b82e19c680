//! Special functions against 50-digit mpmath values (see scripts/gen_reference.py).

use chisigma_core::specfun::{
    digamma, gamma_p, inv_digamma, inv_gamma_p, ln_gamma, trigamma, ProbLevel,
};
use proptest::prelude::*;

struct Row {
    function: String,
    arg1: f64,
    arg2: f64,
    expected: f64,
}

fn reference_rows() -> Vec<Row> {
    let text = include_str!("data/specfun_reference.csv");
    text.lines()
        .skip(1)
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            Row {
                function: fields[0].to_string(),
                arg1: fields[1].parse().unwrap(),
                arg2: fields[2].parse().unwrap(),
                expected: fields[3].parse().unwrap(),
            }
        })
        .collect()
}

fn worst_error(name: &str, relative: bool, eval: impl Fn(&Row) -> f64) -> (usize, f64) {
    let rows = reference_rows();
    let mut worst = 0.0f64;
    let mut n = 0;
    for row in rows.iter().filter(|r| r.function == name) {
        let got = eval(row);
        let err = if relative {
            ((got - row.expected) / row.expected).abs()
        } else {
            (got - row.expected).abs()
        };
        worst = worst.max(err);
        n += 1;
    }
    (n, worst)
}

#[test]
fn ln_gamma_relative_error_below_1e12() {
    let (n, worst) = worst_error("ln_gamma", true, |r| ln_gamma(r.arg1).unwrap());
    assert_eq!(n, 1000);
    assert!(worst <= 1e-12, "worst relative error {worst:e}");
}

#[test]
fn digamma_relative_error_below_1e10() {
    let (n, worst) = worst_error("digamma", true, |r| digamma(r.arg1).unwrap());
    assert_eq!(n, 1000);
    assert!(worst <= 1e-10, "worst relative error {worst:e}");
}

#[test]
fn trigamma_relative_error_below_1e8() {
    let (n, worst) = worst_error("trigamma", true, |r| trigamma(r.arg1).unwrap());
    assert_eq!(n, 1000);
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}

#[test]
fn gamma_p_absolute_error_below_1e12() {
    let (n, worst) = worst_error("gamma_p", false, |r| gamma_p(r.arg1, r.arg2).unwrap());
    assert_eq!(n, 1000);
    assert!(worst <= 1e-12, "worst absolute error {worst:e}");
}

#[test]
fn digamma_recurrence_on_log_grid() {
    for i in 0..=600 {
        let x = 0.01 * 10f64.powf(6.0 * i as f64 / 600.0);
        let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
        assert!((lhs - 1.0 / x).abs() <= 1e-10 * (1.0 / x).max(1.0), "x={x}");
    }
}

proptest! {
    #[test]
    fn gamma_p_is_nondecreasing(a in 0.05f64..500.0, x1 in 0.0f64..800.0, dx in 0.0f64..50.0) {
        let p1 = gamma_p(a, x1).unwrap();
        let p2 = gamma_p(a, x1 + dx).unwrap();
        prop_assert!(p1 <= p2 + 1e-15);
        prop_assert!((0.0..=1.0).contains(&p1));
    }

    #[test]
    fn inv_gamma_p_roundtrip(a in 0.1f64..1000.0, p in 1e-6f64..0.999_999) {
        let x = inv_gamma_p(a, ProbLevel::new(p).unwrap()).unwrap();
        prop_assert!((gamma_p(a, x).unwrap() - p).abs() <= 1e-10);
    }

    #[test]
    fn inv_gamma_p_increasing_in_p(a in 0.1f64..1000.0, p in 0.001f64..0.99, dp in 1e-4f64..0.009) {
        let lo = inv_gamma_p(a, ProbLevel::new(p).unwrap()).unwrap();
        let hi = inv_gamma_p(a, ProbLevel::new(p + dp).unwrap()).unwrap();
        prop_assert!(lo < hi);
    }

    #[test]
    fn inv_digamma_roundtrip(y in -20.0f64..20.0) {
        let x = inv_digamma(y).unwrap();
        prop_assert!(x > 0.0);
        prop_assert!((digamma(x).unwrap() - y).abs() <= 1e-10);
    }

    #[test]
    fn trigamma_is_derivative_of_digamma(x in 0.5f64..100.0) {
        let h = 1e-5;
        let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
        prop_assert!((trigamma(x).unwrap() - fd).abs() <= 1e-5);
    }
}
