//! Small numeric helpers: least-squares polynomials and rank correlation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polynomial coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = |x: f64| {
            self.0
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (i, c)| acc * x + c / (i + 1) as f64)
                * x
        };
        anti(b) - anti(a)
    }
}

fn distinct_count(xs: &[f64]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Least-squares fit of the given degree. Needs at least `degree + 1`
/// distinct abscissae.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Polynomial> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if distinct_count(xs) < degree + 1 {
        return Err(Error::invalid(
            "polynomial fit",
            format!("degree {degree} needs {} distinct x values", degree + 1),
        ));
    }
    // Columns are scaled to unit max-norm so the SVD sees a balanced matrix.
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let vander = DMatrix::from_fn(xs.len(), degree + 1, |r, c| (xs[r] / scale).powi(c as i32));
    let rhs = DVector::from_column_slice(ys);
    let coef = vander
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::invalid("polynomial fit", e))?;
    Ok(Polynomial(
        coef.iter()
            .enumerate()
            .map(|(i, c)| c / scale.powi(i as i32))
            .collect(),
    ))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_known_cubic() {
        let truth = Polynomial(vec![0.3, -1.2, 2.5, -0.7]);
        let xs: Vec<f64> = (0..40).map(|i| 0.2 + i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs.iter().map(|x| truth.eval(*x)).collect();
        let fit = polyfit(&xs, &ys, 3).unwrap();
        let rms = (fit.0.iter().zip(&truth.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(rms < 1e-9, "{rms}");
    }

    #[test]
    fn integral_matches_antiderivative() {
        let p = Polynomial(vec![1.0, 2.0, 3.0]);
        // x + x^2 + x^3 on [0, 2] = 2 + 4 + 8
        assert!((p.integrate(0.0, 2.0) - 14.0).abs() < 1e-12);
    }

    #[test]
    fn needs_enough_distinct_points() {
        assert!(polyfit(&[0.1, 0.1, 0.2, 0.3], &[1.0, 1.0, 1.0, 1.0], 3).is_err());
    }

    #[test]
    fn rank_correlation() {
        let xs = [0.9, 0.8, 0.7, 0.6];
        let ys = [0.95, 0.5, 0.3, 0.1];
        assert_eq!(spearman(&xs, &ys), Some(1.0));
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(spearman(&xs, &[0.5; 4]), None);
    }
}
