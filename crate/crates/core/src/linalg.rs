use nalgebra::{DMatrix, DVector};

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some(symmetrize(inv))
}

/// Solve `m x = b` for SPD `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    Some(m.clone().cholesky()?.solve(b))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m).unwrap();
        let eye = &m * &inv;
        assert!((eye - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!(spd_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
        let x = spd_solve(&m, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert!((&m * x - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-14);
    }
}
