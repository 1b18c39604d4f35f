use nalgebra::{DMatrix, DVector};

use super::{DenseFactor, KktSolve, NlpError};
use crate::scalar::Scalar;

/// One diagonal block of a bordered block-diagonal matrix.
pub struct LocalBlock<T: Scalar> {
    /// Positions of the block's unknowns in the full vector.
    pub indices: Vec<usize>,
    pub a_kk: DMatrix<T>,
    /// Border rows × block columns.
    pub a_gk: DMatrix<T>,
    /// Block rows × border columns.
    pub a_kg: DMatrix<T>,
}

/// Sparse description of a matrix of the form
///
/// ```text
/// [ A_gg  A_g1  A_g2 … ]
/// [ A_1g  A_11         ]
/// [ A_2g        A_22   ]
/// ```
///
/// under an arbitrary permutation of the full index set.
pub struct BorderedBlocks<T: Scalar> {
    pub dim: usize,
    pub global: Vec<usize>,
    pub a_gg: DMatrix<T>,
    pub blocks: Vec<LocalBlock<T>>,
}

impl<T: Scalar> BorderedBlocks<T> {
    /// Dense assembly, for tests and small instances.
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, &ga) in self.global.iter().enumerate() {
            for (b, &gb) in self.global.iter().enumerate() {
                m[(ga, gb)] = self.a_gg[(a, b)];
            }
        }
        for blk in &self.blocks {
            for (a, &ia) in blk.indices.iter().enumerate() {
                for (b, &ib) in blk.indices.iter().enumerate() {
                    m[(ia, ib)] = blk.a_kk[(a, b)];
                }
                for (b, &gb) in self.global.iter().enumerate() {
                    m[(ia, gb)] = blk.a_kg[(a, b)];
                    m[(gb, ia)] = blk.a_gk[(b, a)];
                }
            }
        }
        m
    }

    /// Schur-complement factorization on the border.
    pub fn factor(self, context: &'static str) -> Result<BorderedBlockFactor<T>, NlpError> {
        let mut schur = self.a_gg.clone();
        let mut locals = Vec::with_capacity(self.blocks.len());
        for blk in self.blocks {
            let lu = DenseFactor::new(blk.a_kk, context)?;
            let y = lu.solve_matrix(&blk.a_kg);
            schur -= &blk.a_gk * &y;
            locals.push(FactoredBlock {
                indices: blk.indices,
                lu,
                a_gk: blk.a_gk,
                y,
            });
        }
        let schur = DenseFactor::new(schur, context)?;
        Ok(BorderedBlockFactor {
            dim: self.dim,
            global: self.global,
            schur,
            locals,
        })
    }
}

struct FactoredBlock<T: Scalar> {
    indices: Vec<usize>,
    lu: DenseFactor<T>,
    a_gk: DMatrix<T>,
    /// `A_kk⁻¹ A_kg`.
    y: DMatrix<T>,
}

pub struct BorderedBlockFactor<T: Scalar> {
    dim: usize,
    global: Vec<usize>,
    schur: DenseFactor<T>,
    locals: Vec<FactoredBlock<T>>,
}

impl<T: Scalar> KktSolve<T> for BorderedBlockFactor<T> {
    fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        assert_eq!(rhs.len(), self.dim);
        let mut rhs_g =
            DVector::from_iterator(self.global.len(), self.global.iter().map(|&i| rhs[i]));
        let mut partial = Vec::with_capacity(self.locals.len());
        for blk in &self.locals {
            let r_k =
                DVector::from_iterator(blk.indices.len(), blk.indices.iter().map(|&i| rhs[i]));
            let w = blk.lu.solve(&r_k);
            rhs_g -= &blk.a_gk * &w;
            partial.push(w);
        }
        let x_g = self.schur.solve(&rhs_g);
        let mut out = DVector::zeros(self.dim);
        for (a, &i) in self.global.iter().enumerate() {
            out[i] = x_g[a];
        }
        for (blk, w) in self.locals.iter().zip(partial) {
            let x_k = w - &blk.y * &x_g;
            for (a, &i) in blk.indices.iter().enumerate() {
                out[i] = x_k[a];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve() {
        // border of size 2, two blocks of size 2, interleaved indices
        let blocks = BorderedBlocks {
            dim: 6,
            global: vec![0, 3],
            a_gg: DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 5.0]),
            blocks: vec![
                LocalBlock {
                    indices: vec![1, 2],
                    a_kk: DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 0.5, 2.0]),
                    a_gk: DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 1.0, -0.3]),
                    a_kg: DMatrix::from_row_slice(2, 2, &[0.1, 0.4, 0.0, 0.7]),
                },
                LocalBlock {
                    indices: vec![4, 5],
                    a_kk: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
                    a_gk: DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -1.0, 0.0]),
                    a_kg: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, -0.2]),
                },
            ],
        };
        let dense = blocks.to_dense();
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let expected = dense.clone().lu().solve(&rhs).unwrap();
        let got = blocks.factor("test").unwrap().solve(&rhs);
        assert!((expected - got).amax() < 1e-12);
    }
}
