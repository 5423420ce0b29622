use crate::error::{Error, Result};

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("at least one value is required"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    Ok(())
}

/// Median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    check_values(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Median-guided outlier correction: values farther than `delta` from the
/// median are replaced by the median, then the corrected set is averaged.
/// Returns the fused value and which inputs were replaced.
pub fn median_outlier_correct(values: &[f64], delta: f64) -> Result<(f64, Vec<bool>)> {
    if !(delta > 0.0) {
        return Err(Error::invalid("outlier threshold must be positive"));
    }
    let m = median(values)?;
    let flags: Vec<bool> = values.iter().map(|v| (v - m).abs() > delta).collect();
    let mut corrected: Vec<f64> = values
        .iter()
        .zip(&flags)
        .map(|(&v, &replaced)| if replaced { m } else { v })
        .collect();
    corrected.sort_by(f64::total_cmp);
    let sum: f64 = corrected.iter().sum();
    Ok((sum / values.len() as f64, flags))
}

/// Consistency-aware weighting: weight 1 / (ε + |v − median|).
pub fn consistency_weighted(values: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let m = median(values)?;
    // summing in sorted order makes the result independent of input order
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (num, den) = sorted.iter().fold((0.0, 0.0), |(num, den), &v| {
        let w = 1.0 / (epsilon + (v - m).abs());
        (num + w * v, den + w)
    });
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_outlier_examples() {
        let (f, flags) = median_outlier_correct(&[120.0, 121.0, 122.0], 15.0).unwrap();
        assert_eq!(f, 121.0);
        assert_eq!(flags, vec![false; 3]);

        let (f, flags) = median_outlier_correct(&[120.0, 121.0, 170.0], 15.0).unwrap();
        assert!((f - 362.0 / 3.0).abs() < 1e-9);
        assert_eq!(flags, vec![false, false, true]);

        assert_eq!(median_outlier_correct(&[95.0], 15.0).unwrap().0, 95.0);
        assert!(median_outlier_correct(&[], 15.0).is_err());
        assert!(median_outlier_correct(&[1.0], 0.0).is_err());
    }

    #[test]
    fn consistency_weighted_examples() {
        assert_eq!(consistency_weighted(&[20.0, 20.0, 20.0], 0.5).unwrap(), 20.0);
        // weights 2, 2, 1/10.5
        let expected = (2.0 * 20.0 + 2.0 * 20.0 + 30.0 / 10.5) / (4.0 + 1.0 / 10.5);
        let got = consistency_weighted(&[20.0, 20.0, 30.0], 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 20.2326).abs() < 1e-4);
        for perm in [[20.0, 30.0, 20.0], [30.0, 20.0, 20.0]] {
            assert_eq!(consistency_weighted(&perm, 0.5).unwrap(), got);
        }
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }
}
