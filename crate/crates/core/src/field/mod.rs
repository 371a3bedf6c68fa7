//! Displacement and velocity fields plus the operators acting on them.
//!
//! All vectors are in full-resolution voxel units and a displacement `u`
//! stands for the map `p -> p + u(p)`.

mod interp;
mod jacobian;

pub(crate) use interp::{
    compose_backward, resample_field_adjoint, sample_at_points_adjoint, warp_location_grad,
};
pub use interp::{
    compose_displacements, resample_field, sample_nearest_label, sample_trilinear_scalar,
    sample_trilinear_vector, warp_labels, warp_volume, Trilinear,
};
pub use jacobian::{
    cofactor3, det3, displacement_gradient, jacobian, require_jacobian_dims, scatter_gradient,
    JacobianVolume,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{check_spacing, Dims};

/// Dense grid of 3-vectors, components interleaved per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField<T> {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        let n = dims
            .checked_len()
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::Validation(format!("dims {dims} overflow")))?;
        if dims.is_empty() {
            return Err(Error::Validation(format!(
                "dims must be positive, got {dims}"
            )));
        }
        check_spacing(spacing)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "vector field {dims} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite vector component at voxel {:?}",
                dims.coords(i / 3)
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![T::zero(); 3 * dims.len()],
        }
    }

    pub fn constant(dims: Dims, v: [T; 3]) -> Self {
        Self::from_fn(dims, |_, _, _| v)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * dims.len());
        for z in 0..dims.z() {
            for y in 0..dims.y() {
                for x in 0..dims.x() {
                    data.extend_from_slice(&f(x, y, z));
                }
            }
        }
        Self {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, spacing: [f32; 3], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), 3 * dims.len());
        Self {
            dims,
            spacing,
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline(always)]
    pub fn at(&self, i: usize) -> [T; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [T; 3] {
        self.at(self.dims.offset(x, y, z))
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: [T; 3]) {
        let i = 3 * self.dims.offset(x, y, z);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Largest Euclidean vector length.
    pub fn max_norm(&self) -> T {
        self.data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest per-component difference over voxels at least `margin` from the border.
    pub fn max_abs_diff_interior(&self, other: &Self, margin: usize) -> T {
        assert_eq!(self.dims, other.dims);
        let mut worst = T::zero();
        for i in 0..self.dims.len() {
            if self.dims.is_interior(self.dims.coords(i), margin) {
                for c in 0..3 {
                    worst = worst.max((self.data[3 * i + c] - other.data[3 * i + c]).abs());
                }
            }
        }
        worst
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> VectorField<U> {
        VectorField {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_same_dims(what: &str, a: Dims, b: Dims) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: {a} vs {b}")))
    }
}

/// Runs `f(voxel, out_chunk)` for every voxel; `out` holds `width` values per
/// voxel. Each output is written by exactly one call, so the result does not
/// depend on the worker count.
pub(crate) fn for_each_voxel<T: Send>(
    dims: Dims,
    out: &mut [T],
    width: usize,
    f: impl Fn(usize, &mut [T]) + Sync,
) {
    let slab = dims.x() * dims.y();
    out.par_chunks_mut(slab * width)
        .enumerate()
        .for_each(|(z, chunk)| {
            for (j, o) in chunk.chunks_mut(width).enumerate() {
                f(z * slab + j, o);
            }
        });
}
