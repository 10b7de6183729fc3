//! Compensated summation. Estimators average up to millions of terms, and a
//! plain running sum loses about `n·ε` relative accuracy on the result.

/// Neumaier's variant of Kahan summation: exact up to a bounded multiple of ε
/// independent of the number of terms.
pub(crate) fn neumaier<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + carry
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        assert_eq!(neumaier([1.0, 1e100, 1.0, -1e100]), 2.0);
    }

    #[test]
    fn repeated_terms_keep_full_precision() {
        let x = 1.349_898_031_630_094_5e-3;
        let s = neumaier(std::iter::repeat_n(x, 100_000));
        assert!((s / 100_000.0 - x).abs() <= 2.0 * f64::EPSILON * x);
    }
}
