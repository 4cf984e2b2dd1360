use nalgebra::{SMatrix, SVector};

use super::{BearingPair, RelPoseError};
use crate::geometry::{skew, Rotation, UnitDirection};

pub type Matrix27 = SMatrix<f64, 27, 27>;
pub type Vector27 = SVector<f64, 27>;

/// Symmetric PSD matrix `C = Σ cᵢ cᵢᵀ` such that, with `x = vec(r uᵀ)` and
/// `r = vec(R)` (column-major), `x C xᵀ = Σᵢ (u · (R fᵢ × fᵢ'))²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrixC {
    matrix: Box<Matrix27>,
    n_pairs: usize,
}

impl DataMatrixC {
    pub fn matrix(&self) -> &Matrix27 {
        &self.matrix
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Elementwise sum; the data matrix of the union of both pair sets.
    pub fn merged(&self, other: &DataMatrixC) -> DataMatrixC {
        DataMatrixC {
            matrix: Box::new(*self.matrix + *other.matrix),
            n_pairs: self.n_pairs + other.n_pairs,
        }
    }
}

/// Row vector `cᵢ` of one correspondence.
///
/// `u · (R f × f') = (R f) · (f' × u) = Σ_{a,b,c} R_ab f_b [f']ₓ_ac u_c`, and
/// `R_ab u_c` sits at index `a + 3b + 9c` of `x`.
fn pair_vector(pair: &BearingPair) -> Vector27 {
    let f = pair.f.as_ref();
    let fx = skew(pair.f_prime.as_ref());
    let mut c = Vector27::zeros();
    for cc in 0..3 {
        for b in 0..3 {
            for a in 0..3 {
                c[a + 3 * b + 9 * cc] = f[b] * fx[(a, cc)];
            }
        }
    }
    c
}

pub fn build_data_matrix(pairs: &[BearingPair]) -> Result<DataMatrixC, RelPoseError> {
    if pairs.is_empty() {
        return Err(RelPoseError::EmptyInput);
    }
    let mut m = Box::new(Matrix27::zeros());
    for pair in pairs {
        let c = pair_vector(pair);
        m.ger(1.0, &c, &c, 1.0);
    }
    // Symmetrise away rounding asymmetry from the rank-1 updates.
    let sym = (*m + m.transpose()) * 0.5;
    *m = sym;
    Ok(DataMatrixC { matrix: m, n_pairs: pairs.len() })
}

/// `x = vec(r uᵀ) = u ⊗ r`.
pub(crate) fn lifted_vector(r: &Rotation, u: &UnitDirection) -> Vector27 {
    let rv = r.matrix().as_slice();
    let uv = u.vector();
    let mut x = Vector27::zeros();
    for c in 0..3 {
        for j in 0..9 {
            x[9 * c + j] = uv[c] * rv[j];
        }
    }
    x
}

/// The functional `x C xᵀ`, clamped at zero.
pub fn functional_value(c: &DataMatrixC, r: &Rotation, u: &UnitDirection) -> f64 {
    let x = lifted_vector(r, u);
    x.dot(&(*c.matrix * x)).max(0.0)
}
