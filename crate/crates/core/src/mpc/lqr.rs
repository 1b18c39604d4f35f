use nalgebra::DMatrix;

use super::MpcError;
use crate::scalar::{lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution<T: Scalar> {
    /// Feedback gain for `u = −K x`.
    pub k: DMatrix<T>,
    /// Stabilizing solution of the discrete algebraic Riccati equation.
    pub p: DMatrix<T>,
    pub iterations: usize,
}

fn gain<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    s.lu().solve(&(btp * a))
}

/// `AᵀPA − P − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`.
pub fn riccati_residual<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
) -> DMatrix<T> {
    let k = gain(a, b, r, p).expect("R + BᵀPB invertible");
    let atp = a.transpose() * p;
    &atp * a - p - &atp * b * k + q
}

/// Infinite-horizon discrete LQR by fixed-point iteration of the Riccati map.
pub fn dlqr<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<LqrSolution<T>, MpcError> {
    const MAX_ITER: usize = 100_000;
    let mut p = q.clone();
    let tol = lit::<T>(1e-14);
    let mut change = T::zero();
    for it in 1..=MAX_ITER {
        let k = gain(a, b, r, &p).ok_or(MpcError::RiccatiDiverged {
            iterations: it,
            change: f64::NAN,
        })?;
        let atp = a.transpose() * &p;
        let mut next = &atp * a - &atp * b * &k + q;
        next = (&next + next.transpose()) * lit::<T>(0.5);
        change = (&next - &p).amax();
        let scale = next.amax().max(T::one());
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= tol * scale {
            let k = gain(a, b, r, &p).expect("checked above");
            return Ok(LqrSolution {
                k,
                p,
                iterations: it,
            });
        }
    }
    Err(MpcError::RiccatiDiverged {
        iterations: MAX_ITER,
        change: to_f64(change),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::symmetric_rotation;

    #[test]
    fn scalar_case_matches_quadratic_root() {
        // p = q + a²p − a²b²p²/(r + b²p)  ⇒  b²p² + (r − a²r − qb²)p − qr = 0
        let (a, b, q, r): (f64, f64, f64, f64) = (1.2, 0.7, 0.3, 0.5);
        let sol = dlqr(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::from_element(1, 1, q),
            &DMatrix::from_element(1, 1, r),
        )
        .unwrap();
        let (qa, qb, qc) = (b * b, r - a * a * r - q * b * b, -q * r);
        let p = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((sol.p[(0, 0)] - p).abs() < 1e-12);
        assert!((sol.k[(0, 0)] - b * p * a / (r + b * b * p)).abs() < 1e-12);
    }

    #[test]
    fn example_model_residual_and_stability() {
        let a = symmetric_rotation(20f64.to_radians());
        let b = DMatrix::identity(2, 2);
        let q = DMatrix::identity(2, 2) / 20.0;
        let r = DMatrix::identity(2, 2) / 2.0;
        let sol = dlqr(&a, &b, &q, &r).unwrap();
        assert!(riccati_residual(&a, &b, &q, &r, &sol.p).amax() <= 1e-10);
        let cl = &a - &b * &sol.k;
        let rho = cl
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        assert!(rho < 1.0);
    }

    #[test]
    fn uncontrollable_unstable_mode_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        assert!(dlqr(&a, &b, &q, &r).is_err());
    }
}
