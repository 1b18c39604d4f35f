use nalgebra::DVector;

use crate::scalar::{to_f64, Scalar};

/// Sizes of an NLP: primal variables, equality and inequality constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlpDims {
    pub n_y: usize,
    pub n_eq: usize,
    pub n_in: usize,
}

impl NlpDims {
    pub fn new(n_y: usize, n_eq: usize, n_in: usize) -> Self {
        Self { n_y, n_eq, n_in }
    }

    /// Length of the stacked primal-dual vector `z = (y, λ, μ)`.
    pub fn n_z(&self) -> usize {
        self.n_y + self.n_eq + self.n_in
    }
}

/// Primal-dual iterate `z = (y, λ, μ)` of the relaxed KKT system together
/// with its relaxation parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint<T: Scalar> {
    pub y: DVector<T>,
    pub lambda: DVector<T>,
    pub mu: DVector<T>,
    pub tau: T,
}

impl<T: Scalar> PrimalDualPoint<T> {
    pub fn new(y: DVector<T>, lambda: DVector<T>, mu: DVector<T>, tau: T) -> Self {
        Self { y, lambda, mu, tau }
    }

    /// Point with `λ = 0` and `μ = τ / (−h)`, exact complementarity at `y`.
    pub fn centered(y: DVector<T>, h: &DVector<T>, n_eq: usize, tau: T) -> Self {
        let mu = h.map(|hi| tau / (-hi));
        Self {
            y,
            lambda: DVector::zeros(n_eq),
            mu,
            tau,
        }
    }

    pub fn dims(&self) -> NlpDims {
        NlpDims::new(self.y.len(), self.lambda.len(), self.mu.len())
    }

    /// Stacked `(y, λ, μ)`.
    pub fn stacked(&self) -> DVector<T> {
        let d = self.dims();
        let mut z = DVector::zeros(d.n_z());
        z.rows_mut(0, d.n_y).copy_from(&self.y);
        z.rows_mut(d.n_y, d.n_eq).copy_from(&self.lambda);
        z.rows_mut(d.n_y + d.n_eq, d.n_in).copy_from(&self.mu);
        z
    }

    pub fn from_stacked(z: &DVector<T>, dims: NlpDims, tau: T) -> Self {
        Self {
            y: z.rows(0, dims.n_y).into_owned(),
            lambda: z.rows(dims.n_y, dims.n_eq).into_owned(),
            mu: z.rows(dims.n_y + dims.n_eq, dims.n_in).into_owned(),
            tau,
        }
    }

    /// `z + α Δz` for a stacked direction.
    pub fn stepped(&self, direction: &DVector<T>, alpha: T) -> Self {
        let d = self.dims();
        Self {
            y: &self.y + direction.rows(0, d.n_y) * alpha,
            lambda: &self.lambda + direction.rows(d.n_y, d.n_eq) * alpha,
            mu: &self.mu + direction.rows(d.n_y + d.n_eq, d.n_in) * alpha,
            tau: self.tau,
        }
    }

    pub fn mu_positive(&self) -> bool {
        self.mu.iter().all(|&m| m > T::zero())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.stacked().iter().map(|&v| to_f64(v)).collect()
    }
}
