use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// ascending and eigenvectors permuted to match (one per column).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigensolve on a non-finite matrix".into()));
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );

    let scale = m.norm().max(f64::MIN_POSITIVE);
    for (k, lambda) in values.iter().enumerate() {
        let v = vectors.column(k);
        let resid = (m * v - v * *lambda).norm();
        if resid > 1e-8 * scale {
            return Err(Error::Numeric(format!(
                "eigenpair residual {resid:e} exceeds tolerance for |J| = {scale:e}"
            )));
        }
    }
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_consistent() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sorted_symmetric_eigen(&m).unwrap();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        assert!((vals[0] + 1.0).abs() < 1e-12);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((recon - m).amax() < 1e-12);
    }

    #[test]
    fn rejects_nan() {
        let m = DMatrix::from_element(2, 2, f64::NAN);
        assert!(sorted_symmetric_eigen(&m).is_err());
    }
}
