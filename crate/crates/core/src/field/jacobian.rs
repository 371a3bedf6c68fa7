//! Finite-difference Jacobians of deformations `phi(p) = p + u(p)`.
//!
//! Derivatives use central differences in the interior and one-sided
//! differences on boundary faces.

use super::VectorField;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::Dims;

/// Per-voxel Jacobian matrices `J = I + grad u` and their determinants.
#[derive(Debug, Clone)]
pub struct JacobianVolume<T> {
    dims: Dims,
    matrices: Vec<[[T; 3]; 3]>,
    dets: Vec<T>,
}

impl<T: Real> JacobianVolume<T> {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn matrices(&self) -> &[[[T; 3]; 3]] {
        &self.matrices
    }

    pub fn determinants(&self) -> &[T] {
        &self.dets
    }

    pub fn det_at(&self, x: usize, y: usize, z: usize) -> T {
        self.dets[self.dims.offset(x, y, z)]
    }
}

pub fn require_jacobian_dims(dims: Dims) -> Result<()> {
    if dims.0.iter().any(|&d| d < 2) {
        Err(Error::Degenerate(format!(
            "Jacobian needs at least 2 voxels per axis, got {dims}"
        )))
    } else {
        Ok(())
    }
}

/// `(plus, minus, scale)` so that `d f / d x_i ≈ scale * (f[plus] - f[minus])`.
#[inline(always)]
fn stencil<T: Real>(i: usize, n: usize) -> (usize, usize, T) {
    if i == 0 {
        (1, 0, T::one())
    } else if i == n - 1 {
        (n - 1, n - 2, T::one())
    } else {
        (i + 1, i - 1, T::lit(0.5))
    }
}

#[inline(always)]
fn neighbours<T: Real>(dims: Dims, c: [usize; 3]) -> [(usize, usize, T); 3] {
    std::array::from_fn(|a| {
        let (p, m, s) = stencil::<T>(c[a], dims.0[a]);
        let mut cp = c;
        let mut cm = c;
        cp[a] = p;
        cm[a] = m;
        (
            dims.offset(cp[0], cp[1], cp[2]),
            dims.offset(cm[0], cm[1], cm[2]),
            s,
        )
    })
}

/// Displacement gradient at voxel `i`: `g[c][d] = d u_c / d x_d`.
#[inline]
pub fn displacement_gradient<T: Real>(u: &VectorField<T>, i: usize) -> [[T; 3]; 3] {
    let dims = u.dims();
    let nb = neighbours::<T>(dims, dims.coords(i));
    let data = u.data();
    let mut g = [[T::zero(); 3]; 3];
    for (d, &(p, m, s)) in nb.iter().enumerate() {
        for (c, row) in g.iter_mut().enumerate() {
            row[d] = s * (data[3 * p + c] - data[3 * m + c]);
        }
    }
    g
}

/// Adds the transpose of [`displacement_gradient`] at voxel `i` applied to
/// the cotangent `cot` into `out` (length `3 * N`).
#[inline]
pub fn scatter_gradient<T: Real>(dims: Dims, i: usize, cot: &[[T; 3]; 3], out: &mut [T]) {
    let nb = neighbours::<T>(dims, dims.coords(i));
    for (d, &(p, m, s)) in nb.iter().enumerate() {
        for c in 0..3 {
            let g = s * cot[c][d];
            out[3 * p + c] += g;
            out[3 * m + c] -= g;
        }
    }
}

#[inline(always)]
pub fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix, i.e. `d det(M) / d M`.
#[inline(always)]
pub fn cofactor3<T: Real>(m: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

#[inline(always)]
pub(crate) fn jacobian_at<T: Real>(u: &VectorField<T>, i: usize) -> [[T; 3]; 3] {
    let mut j = displacement_gradient(u, i);
    for (a, row) in j.iter_mut().enumerate() {
        row[a] += T::one();
    }
    j
}

pub fn jacobian<T: Real>(u: &VectorField<T>) -> Result<JacobianVolume<T>> {
    let dims = u.dims();
    require_jacobian_dims(dims)?;
    let matrices: Vec<_> = (0..dims.len()).map(|i| jacobian_at(u, i)).collect();
    let dets = matrices.iter().map(det3).collect();
    Ok(JacobianVolume {
        dims,
        matrices,
        dets,
    })
}
