//! Deformation regularizers and their gradients with respect to `u`.

use crate::error::Result;
use crate::field::{
    cofactor3, det3, displacement_gradient, require_jacobian_dims, scatter_gradient, VectorField,
};
use crate::scalar::{pairwise_sum_by, Real};

#[inline]
fn jacobian_at<T: Real>(u: &VectorField<T>, i: usize) -> [[T; 3]; 3] {
    let mut j = displacement_gradient(u, i);
    for (a, row) in j.iter_mut().enumerate() {
        row[a] += T::one();
    }
    j
}

/// `(1/N) sum_p max(0, -det J(p))`.
pub fn jdet_loss<T: Real>(u: &VectorField<T>) -> Result<T> {
    require_jacobian_dims(u.dims())?;
    let n = u.dims().len();
    let total = pairwise_sum_by(n, &|i| (-det3(&jacobian_at(u, i))).max(T::zero()));
    Ok(total / T::from_usize_lossy(n))
}

/// Gradient of [`jdet_loss`]; exactly zero wherever every determinant is
/// non-negative.
pub fn jdet_loss_grad<T: Real>(u: &VectorField<T>) -> Result<(T, Vec<T>)> {
    require_jacobian_dims(u.dims())?;
    let dims = u.dims();
    let n = dims.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = vec![T::zero(); 3 * n];
    let mut terms = vec![T::zero(); n];
    for (i, term) in terms.iter_mut().enumerate() {
        let j = jacobian_at(u, i);
        let det = det3(&j);
        if det < T::zero() {
            *term = -det;
            let mut cot = cofactor3(&j);
            cot.iter_mut().flatten().for_each(|c| *c = -*c * inv_n);
            scatter_gradient(dims, i, &cot, &mut grad);
        }
    }
    Ok((pairwise_sum_by(n, &|i| terms[i]) * inv_n, grad))
}

#[inline]
fn smooth_grad_matrix<T: Real>(u: &VectorField<T>, i: usize, on_phi: bool) -> [[T; 3]; 3] {
    if on_phi {
        jacobian_at(u, i)
    } else {
        displacement_gradient(u, i)
    }
}

/// `(1/N) sum_p ||grad u(p)||_F^2`, or `||grad phi||^2` when `on_phi` is set.
pub fn smooth_loss<T: Real>(u: &VectorField<T>, on_phi: bool) -> Result<T> {
    require_jacobian_dims(u.dims())?;
    let n = u.dims().len();
    let total = pairwise_sum_by(n, &|i| {
        smooth_grad_matrix(u, i, on_phi)
            .iter()
            .flatten()
            .fold(T::zero(), |a, &g| a + g * g)
    });
    Ok(total / T::from_usize_lossy(n))
}

pub fn smooth_loss_grad<T: Real>(u: &VectorField<T>, on_phi: bool) -> Result<(T, Vec<T>)> {
    let loss = smooth_loss(u, on_phi)?;
    let dims = u.dims();
    let n = dims.len();
    let scale = T::lit(2.0) / T::from_usize_lossy(n);
    let mut grad = vec![T::zero(); 3 * n];
    for i in 0..n {
        let mut g = smooth_grad_matrix(u, i, on_phi);
        g.iter_mut().flatten().for_each(|c| *c *= scale);
        scatter_gradient(dims, i, &g, &mut grad);
    }
    Ok((loss, grad))
}
