//! Two-sample comparison with unequal variances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::OnaError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    /// Mean difference over the pooled standard deviation.
    pub cohen_d: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn compare(a: &[f64], b: &[f64]) -> Result<Comparison, OnaError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(OnaError::Groups(format!("need two scores per group, got {} and {}", a.len(), b.len())));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Err(OnaError::ZeroVariance);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let t = (ma - mb) / se;
    let df = (sa + sb).powi(2) / (sa.powi(2) / (na - 1.0) + sb.powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| OnaError::Stats(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    Ok(Comparison { n_a: a.len(), n_b: b.len(), mean_a: ma, mean_b: mb, t, df, p, cohen_d: (ma - mb) / pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let c = compare(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c.t + 3.674).abs() < 1e-3, "{}", c.t);
        assert!((c.df - 4.0).abs() < 1e-3);
        assert!((c.cohen_d + 3.0).abs() < 1e-3);
        // Two-sided p for t=-3.674 on 4 df.
        assert!((c.p - 0.02131).abs() < 1e-4, "{}", c.p);
    }

    #[test]
    fn equal_samples() {
        let c = compare(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(c.t, 0.0);
        assert!((c.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_in_both_groups() {
        assert!(matches!(compare(&[1.0, 1.0], &[2.0, 2.0]), Err(OnaError::ZeroVariance)));
        assert!(compare(&[1.0, 1.0], &[2.0, 3.0]).is_ok());
    }
}
