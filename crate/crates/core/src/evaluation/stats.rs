//! Medians with the infinite sentinel and the paired Student t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Median of the finite values (mean of the central pair for even counts).
/// When there are no finite values but some `+inf`, the result is `+inf`.
/// `None` if `values` holds neither.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return values.iter().any(|&v| v == f64::INFINITY).then_some(f64::INFINITY);
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    Some(if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub mean_difference: f64,
    /// Pairs used after dropping non-finite values.
    pub n: usize,
    /// The differences had zero spread; p is 0 or 1 by convention.
    pub degenerate: bool,
}

/// Two-sided tail probability `P(|T| > |t|)` of Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired test of `a - b`. Pairs where either value is not finite are
/// dropped.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| x - y)
        .collect();
    let n = d.len();
    if n < 2 {
        return Err(Error::InsufficientPairs(n));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    if sd == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest {
            t_statistic: t,
            degrees_of_freedom: df,
            p_value: p,
            mean_difference: mean,
            n,
            degenerate: true,
        });
    }
    let t = mean / (sd / nf.sqrt());
    Ok(TTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_two_sided(t, df as f64),
        mean_difference: mean,
        n,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Student t density integrated with composite Simpson's rule.
    fn tail_by_quadrature(t: f64, df: f64) -> f64 {
        let ln_gamma = |x: f64| statrs::function::gamma::ln_gamma(x);
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * PI).sqrt();
        let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let steps = 200_000;
        let h = t.abs() / steps as f64;
        let mut acc = pdf(0.0) + pdf(t.abs());
        for i in 1..steps {
            acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let central = 2.0 * acc * h / 3.0;
        1.0 - central
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[f64::INFINITY, 1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[f64::INFINITY, f64::INFINITY]), Some(f64::INFINITY));
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), median(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn one_to_five() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &[0.0; 5]).unwrap();
        assert!((r.t_statistic - 4.2426).abs() < 1e-4);
        assert_eq!(r.degrees_of_freedom, 4);
        assert!((r.p_value - 0.0132).abs() < 1e-4);
        let oracle = tail_by_quadrature(r.t_statistic, 4.0);
        assert!((r.p_value - oracle).abs() < 1e-8, "{} vs {oracle}", r.p_value);
    }

    #[test]
    fn matches_quadrature_across_dof() {
        for (t, df) in [(0.3, 1.0), (1.7, 3.0), (2.5, 10.0), (-4.0, 29.0), (0.0, 7.0)] {
            let p = student_t_two_sided(t, df);
            assert!((p - tail_by_quadrature(t, df)).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_and_degenerate_cases() {
        let r = paired_t_test(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let same = paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(same.degenerate && same.p_value == 1.0);
        let shifted = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(shifted.degenerate && shifted.p_value == 0.0);
        let a = [0.3, 1.2, -0.4, 2.2, 0.9];
        let b = [0.1, 0.2, 0.3, 0.4, 0.5];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t_statistic, -ba.t_statistic);
        assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn infinite_pairs_are_dropped() {
        let r = paired_t_test(&[1.0, f64::INFINITY, 3.0, 2.0], &[0.0, 0.0, 1.0, 1.5]).unwrap();
        assert_eq!(r.n, 3);
        assert!(matches!(paired_t_test(&[f64::INFINITY, 1.0], &[0.0, 0.0]), Err(Error::InsufficientPairs(1))));
    }
}
