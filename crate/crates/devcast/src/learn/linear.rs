//! Ordinary least squares and the constant-mean predictor, used as
//! reference points when ranking the learned models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::DimMismatch(format!(
                "model expects {} features, got {}",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_row(&row)
            })
            .collect())
    }
}

/// Least squares with intercept via the normal equations. A singular
/// Gram matrix (collinear or constant columns) falls back to a ridge
/// solve with a vanishing penalty on the predictor diagonal.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() {
        return Err(Error::DimMismatch(format!("{n} rows vs {} targets", y.len())));
    }
    if n == 0 {
        return Err(Error::Empty("least squares training set".into()));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in least squares input".into()));
    }

    let mut xa = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        xa[(i, 0)] = 1.0;
        for j in 0..p {
            xa[(i, j + 1)] = x[(i, j)];
        }
    }
    let gram = xa.transpose() * &xa;
    let rhs = xa.transpose() * DVector::from_column_slice(y);

    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let mut ridge = gram;
            for j in 1..=p {
                ridge[(j, j)] += 1e-8;
            }
            ridge
                .cholesky()
                .ok_or_else(|| Error::Degenerate("least squares system is singular".into()))?
                .solve(&rhs)
        }
    };
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta.as_slice()[1..].to_vec(),
    })
}

/// Predicts the training mean everywhere, the floor any model must beat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanModel {
    pub mean: f64,
}

pub fn fit_mean(y: &[f64]) -> Result<MeanModel> {
    if y.is_empty() {
        return Err(Error::Empty("mean predictor training set".into()));
    }
    Ok(MeanModel { mean: y.iter().sum::<f64>() / y.len() as f64 })
}

impl MeanModel {
    pub fn predict(&self, n: usize) -> Vec<f64> {
        vec![self.mean; n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_exact_linear_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..40).map(|i| 2.0 * x[(i, 0)] - 3.0 * x[(i, 1)] + 7.0).collect();
        let model = fit_ols(&x, &y).unwrap();
        assert!((model.intercept - 7.0).abs() < 1e-9);
        assert!((model.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((model.coefficients[1] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_columns_fall_back_to_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = DMatrix::zeros(30, 2);
        for i in 0..30 {
            let v = rng.gen_range(-1.0..1.0);
            x[(i, 0)] = v;
            x[(i, 1)] = 2.0 * v; // exactly dependent
        }
        let y: Vec<f64> = (0..30).map(|i| 5.0 * x[(i, 0)] + 1.0).collect();
        let model = fit_ols(&x, &y).unwrap();
        let pred = model.predict(&x).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-4, "{p} vs {t}");
        }
    }

    #[test]
    fn mean_model_predicts_training_mean() {
        let m = fit_mean(&[1.0, 2.0, 6.0]).unwrap();
        assert_eq!(m.mean, 3.0);
        assert_eq!(m.predict(2), vec![3.0, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_ols(&DMatrix::zeros(0, 2), &[]).is_err());
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(fit_ols(&x, &[1.0, f64::NAN, 2.0]).is_err());
        assert!(fit_mean(&[]).is_err());
    }
}
