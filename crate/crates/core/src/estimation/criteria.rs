//! Digamma, the truncated-log penalised objective and EBIC.

use crate::error::{Result, SlamError};
use crate::response::{log_likelihood, ProportionVector, ResponseMatrix, ThetaMatrix};
use crate::scalar::Real;

/// Digamma function for `x > 0`: upward recurrence to `x >= 6`, then the asymptotic series.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(SlamError::InvalidParameter(format!(
            "digamma needs a finite positive argument, got {x}"
        )));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_{2n} / (2n) for n = 1..7.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 * inv - series)
}

/// `log p` above the threshold, `log rho` at or below it.
#[inline]
pub fn truncated_log<T: Real>(p: T, rho: T) -> T {
    if p > rho {
        p.ln()
    } else {
        rho.ln()
    }
}

/// `lambda * sum_l log_rho(p_l)`.
pub fn penalty<T: Real>(p: &[T], lambda: T, rho: T) -> T {
    lambda * p.iter().map(|&v| truncated_log(v, rho)).sum::<T>()
}

/// Log-likelihood plus the truncated-log penalty on the proportions.
pub fn penalized_objective<T: Real>(
    theta: &ThetaMatrix<T>,
    p: &ProportionVector<T>,
    r: &ResponseMatrix,
    lambda: T,
    rho: T,
) -> Result<T> {
    Ok(log_likelihood(theta, p, r)? + penalty(p.values(), lambda, rho))
}

/// `log C(n, k)` via log-gamma.
pub fn log_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (n, k) = (n as f64, k as f64);
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// `-2 loglik + k log N + 2 gamma log C(L_input, k)`.
pub fn ebic(loglik: f64, k: usize, n: usize, l_input: usize, gamma: f64) -> Result<f64> {
    if k > l_input {
        return Err(SlamError::InvalidParameter(format!(
            "support size {k} exceeds the {l_input} candidate patterns"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SlamError::InvalidParameter(format!(
            "EBIC gamma must lie in [0, 1], got {gamma}"
        )));
    }
    Ok(-2.0 * loglik + k as f64 * (n as f64).ln() + 2.0 * gamma * log_binomial(l_input, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{AttributePattern, PatternSet};
    use ndarray::array;

    const EULER: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0).unwrap() + EULER).abs() < 1e-10);
        let half = -EULER - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - half).abs() < 1e-10);
        assert!((half + 1.963_510_026_0).abs() < 1e-9);
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[1e-3, 0.01, 0.37, 1.5, 4.2, 5.999, 6.0, 17.3, 250.0] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() < 1e-10 * (1.0 / x).max(1.0), "x = {x}");
        }
    }

    #[test]
    fn objective_cases() {
        let a = PatternSet::new(1, vec![AttributePattern::parse("0").unwrap(), AttributePattern::parse("1").unwrap()]).unwrap();
        let th = ThetaMatrix::new(a, array![[0.3, 0.8], [0.1, 0.6]]).unwrap();
        let p = ProportionVector::new(vec![0.25, 0.75]).unwrap();
        let r = ResponseMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![0, 0]]).unwrap();
        let ll = log_likelihood(&th, &p, &r).unwrap();
        assert_eq!(penalized_objective(&th, &p, &r, 0.0, 0.01).unwrap(), ll);
        // Every proportion at or below the threshold: constant penalty.
        assert!((penalty(&[0.001, 0.002], -2.0, 0.01) - (-2.0 * 2.0 * 0.01f64.ln())).abs() < 1e-15);
        let direct = ll - 1.5 * (0.25f64.ln() + 0.75f64.ln());
        assert!((penalized_objective(&th, &p, &r, -1.5, 0.1).unwrap() - direct).abs() < 1e-13);
        let truncated = ll - 1.5 * (0.3f64.ln() + 0.75f64.ln());
        assert!((penalized_objective(&th, &p, &r, -1.5, 0.3).unwrap() - truncated).abs() < 1e-13);
    }

    #[test]
    fn ebic_cases() {
        let v = ebic(-100.0, 2, 100, 4, 1.0).unwrap();
        let oracle = 200.0 + 2.0 * 100f64.ln() + 2.0 * 6f64.ln();
        assert!((v - oracle).abs() < 1e-10);
        assert!((v - 212.794).abs() < 1e-3);
        let bic = ebic(-100.0, 3, 50, 10, 0.0).unwrap();
        assert!((bic - (200.0 + 3.0 * 50f64.ln())).abs() < 1e-12);
        assert_eq!(ebic(-7.5, 0, 40, 9, 1.0).unwrap(), 15.0);
        assert!(ebic(-1.0, 5, 10, 4, 1.0).is_err());
        let direct: f64 = (0..10).map(|i| ((1024 - i) as f64 / (i + 1) as f64).ln()).sum();
        assert!((log_binomial(1024, 10) - direct).abs() < 1e-9);
        assert_eq!(log_binomial(7, 0), 0.0);
    }
}
