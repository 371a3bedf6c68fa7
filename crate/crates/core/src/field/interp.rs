//! Trilinear sampling with border clamping, warping, composition and
//! align-corners resampling, together with the adjoints the optimizer needs.

use super::{check_same_dims, for_each_voxel, VectorField};
use crate::error::Result;
use crate::scalar::Real;
use crate::volume::{Dims, LabelVolume, Volume};

#[derive(Debug, Clone, Copy)]
struct Axis<T> {
    i0: usize,
    i1: usize,
    t: T,
    /// False when the coordinate was clamped; the location derivative along
    /// this axis is then zero.
    live: bool,
}

#[inline(always)]
fn axis<T: Real>(q: T, n: usize) -> Axis<T> {
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            t: T::zero(),
            live: false,
        };
    }
    let hi = T::from_usize_lossy(n - 1);
    let (qc, live) = if q < T::zero() {
        (T::zero(), false)
    } else if q > hi {
        (hi, false)
    } else {
        (q, true)
    };
    let i0 = qc.floor().to_usize().unwrap_or(0).min(n - 2);
    Axis {
        i0,
        i1: i0 + 1,
        t: qc - T::from_usize_lossy(i0),
        live,
    }
}

/// The eight corner offsets and weights of one trilinear sample.
///
/// Corner `k` uses bit 0 for x, bit 1 for y and bit 2 for z.
#[derive(Debug, Clone, Copy)]
pub struct Trilinear<T> {
    pub offsets: [usize; 8],
    pub weights: [T; 8],
    ax: [Axis<T>; 3],
}

impl<T: Real> Trilinear<T> {
    #[inline(always)]
    pub fn new(dims: Dims, q: [T; 3]) -> Self {
        let ax = [
            axis(q[0], dims.x()),
            axis(q[1], dims.y()),
            axis(q[2], dims.z()),
        ];
        let mut offsets = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let one = T::one();
        for k in 0..8 {
            let (bx, by, bz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            let pick = |a: &Axis<T>, b: usize| {
                if b == 0 {
                    (a.i0, one - a.t)
                } else {
                    (a.i1, a.t)
                }
            };
            let (ix, wx) = pick(&ax[0], bx);
            let (iy, wy) = pick(&ax[1], by);
            let (iz, wz) = pick(&ax[2], bz);
            offsets[k] = dims.offset(ix, iy, iz);
            weights[k] = wx * wy * wz;
        }
        Self {
            offsets,
            weights,
            ax,
        }
    }

    /// Derivatives of the corner weights with respect to the sample location.
    #[inline(always)]
    pub fn grad_weights(&self) -> [[T; 8]; 3] {
        let one = T::one();
        let w = |a: &Axis<T>, b: usize| if b == 0 { one - a.t } else { a.t };
        let dw = |a: &Axis<T>, b: usize| {
            if !a.live {
                T::zero()
            } else if b == 0 {
                -one
            } else {
                one
            }
        };
        let mut g = [[T::zero(); 8]; 3];
        for k in 0..8 {
            let b = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let [ax, ay, az] = &self.ax;
            g[0][k] = dw(ax, b[0]) * w(ay, b[1]) * w(az, b[2]);
            g[1][k] = w(ax, b[0]) * dw(ay, b[1]) * w(az, b[2]);
            g[2][k] = w(ax, b[0]) * w(ay, b[1]) * dw(az, b[2]);
        }
        g
    }

    #[inline(always)]
    pub fn scalar(&self, data: &[T]) -> T {
        let mut acc = T::zero();
        for k in 0..8 {
            acc += self.weights[k] * data[self.offsets[k]];
        }
        acc
    }

    #[inline(always)]
    pub fn vector(&self, data: &[T]) -> [T; 3] {
        let mut acc = [T::zero(); 3];
        for k in 0..8 {
            let o = 3 * self.offsets[k];
            let w = self.weights[k];
            acc[0] += w * data[o];
            acc[1] += w * data[o + 1];
            acc[2] += w * data[o + 2];
        }
        acc
    }

    /// Spatial gradient of the interpolated scalar at the sample location.
    #[inline(always)]
    pub fn scalar_grad(&self, data: &[T]) -> [T; 3] {
        let g = self.grad_weights();
        let mut out = [T::zero(); 3];
        for k in 0..8 {
            let v = data[self.offsets[k]];
            for a in 0..3 {
                out[a] += g[a][k] * v;
            }
        }
        out
    }

    /// `sum_c cot[c] * d(sample_c)/dq` for an interpolated vector field.
    #[inline(always)]
    pub fn vector_grad_dot(&self, data: &[T], cot: [T; 3]) -> [T; 3] {
        let g = self.grad_weights();
        let mut out = [T::zero(); 3];
        for k in 0..8 {
            let o = 3 * self.offsets[k];
            let s = cot[0] * data[o] + cot[1] * data[o + 1] + cot[2] * data[o + 2];
            for a in 0..3 {
                out[a] += g[a][k] * s;
            }
        }
        out
    }

    /// Adds the transpose of [`Trilinear::vector`] applied to `cot`.
    #[inline(always)]
    pub fn scatter_vector(&self, cot: [T; 3], out: &mut [T]) {
        for k in 0..8 {
            let w = self.weights[k];
            if w != T::zero() {
                let o = 3 * self.offsets[k];
                out[o] += w * cot[0];
                out[o + 1] += w * cot[1];
                out[o + 2] += w * cot[2];
            }
        }
    }
}

#[inline(always)]
fn displaced<T: Real>(dims: Dims, i: usize, u: [T; 3]) -> [T; 3] {
    let c = dims.coords(i);
    [
        T::from_usize_lossy(c[0]) + u[0],
        T::from_usize_lossy(c[1]) + u[1],
        T::from_usize_lossy(c[2]) + u[2],
    ]
}

/// Trilinear interpolation at a continuous voxel coordinate, clamped to the
/// volume's bounds.
pub fn sample_trilinear_scalar<T: Real>(v: &Volume<T>, q: [T; 3]) -> T {
    Trilinear::new(v.dims(), q).scalar(v.data())
}

pub fn sample_trilinear_vector<T: Real>(u: &VectorField<T>, q: [T; 3]) -> [T; 3] {
    Trilinear::new(u.dims(), q).vector(u.data())
}

/// Nearest-neighbour label lookup (round half away from zero, then clamp).
pub fn sample_nearest_label<T: Real>(l: &LabelVolume, q: [T; 3]) -> u32 {
    let d = l.dims();
    let idx = |q: T, n: usize| {
        let r = q.round();
        if r <= T::zero() {
            0
        } else {
            r.to_usize().unwrap_or(n - 1).min(n - 1)
        }
    };
    l.get(idx(q[0], d.x()), idx(q[1], d.y()), idx(q[2], d.z()))
}

/// `out(p) = v(p + u(p))`.
pub fn warp_volume<T: Real>(v: &Volume<T>, u: &VectorField<T>) -> Result<Volume<T>> {
    check_same_dims("warp_volume", v.dims(), u.dims())?;
    let dims = v.dims();
    let mut out = vec![T::zero(); dims.len()];
    for_each_voxel(dims, &mut out, 1, |i, o| {
        o[0] = Trilinear::new(dims, displaced(dims, i, u.at(i))).scalar(v.data());
    });
    Ok(Volume::from_parts_unchecked(dims, v.spacing(), out))
}

/// Nearest-neighbour warp for segmentations.
pub fn warp_labels<T: Real>(l: &LabelVolume, u: &VectorField<T>) -> Result<LabelVolume> {
    check_same_dims("warp_labels", l.dims(), u.dims())?;
    let dims = l.dims();
    let mut out = vec![0u32; dims.len()];
    for_each_voxel(dims, &mut out, 1, |i, o| {
        o[0] = sample_nearest_label(l, displaced(dims, i, u.at(i)));
    });
    Ok(LabelVolume::from_parts_unchecked(dims, l.spacing(), out))
}

/// Displacement of `phi_outer ∘ phi_inner`:
/// `result(p) = u_inner(p) + u_outer(p + u_inner(p))`.
pub fn compose_displacements<T: Real>(
    outer: &VectorField<T>,
    inner: &VectorField<T>,
) -> Result<VectorField<T>> {
    check_same_dims("compose_displacements", outer.dims(), inner.dims())?;
    let dims = inner.dims();
    let mut out = vec![T::zero(); 3 * dims.len()];
    for_each_voxel(dims, &mut out, 3, |i, o| {
        let ui = inner.at(i);
        let s = Trilinear::new(dims, displaced(dims, i, ui)).vector(outer.data());
        o[0] = ui[0] + s[0];
        o[1] = ui[1] + s[1];
        o[2] = ui[2] + s[2];
    });
    Ok(VectorField::from_parts_unchecked(
        dims,
        inner.spacing(),
        out,
    ))
}

/// Align-corners source coordinate of target index `d` along one axis.
#[inline]
fn source_coord<T: Real>(d: usize, n_src: usize, n_dst: usize) -> T {
    if n_dst == 1 {
        T::zero()
    } else {
        T::from_usize_lossy(d) * T::from_usize_lossy(n_src - 1) / T::from_usize_lossy(n_dst - 1)
    }
}

fn resample_plan<T: Real>(src: Dims, dst: Dims) -> [Vec<Axis<T>>; 3] {
    std::array::from_fn(|a| {
        (0..dst.0[a])
            .map(|d| axis(source_coord::<T>(d, src.0[a], dst.0[a]), src.0[a]))
            .collect()
    })
}

#[inline(always)]
fn plan_corners<T: Real>(src: Dims, plan: &[Vec<Axis<T>>; 3], c: [usize; 3]) -> [(usize, T); 8] {
    let one = T::one();
    let (ax, ay, az) = (&plan[0][c[0]], &plan[1][c[1]], &plan[2][c[2]]);
    std::array::from_fn(|k| {
        let pick = |a: &Axis<T>, b: usize| {
            if b == 0 {
                (a.i0, one - a.t)
            } else {
                (a.i1, a.t)
            }
        };
        let (ix, wx) = pick(ax, k & 1);
        let (iy, wy) = pick(ay, (k >> 1) & 1);
        let (iz, wz) = pick(az, (k >> 2) & 1);
        (src.offset(ix, iy, iz), wx * wy * wz)
    })
}

/// Component-wise trilinear resampling onto `new_dims` (align-corners).
/// Vector magnitudes are left unchanged.
pub fn resample_field<T: Real>(u: &VectorField<T>, new_dims: Dims) -> VectorField<T> {
    let src = u.dims();
    let plan = resample_plan::<T>(src, new_dims);
    let mut out = vec![T::zero(); 3 * new_dims.len()];
    for_each_voxel(new_dims, &mut out, 3, |i, o| {
        let corners = plan_corners(src, &plan, new_dims.coords(i));
        let mut acc = [T::zero(); 3];
        for (off, w) in corners {
            for c in 0..3 {
                acc[c] += w * u.data()[3 * off + c];
            }
        }
        o.copy_from_slice(&acc);
    });
    VectorField::from_parts_unchecked(new_dims, u.spacing(), out)
}

/// Transpose of [`resample_field`]: maps a fine-grid cotangent back to `src`.
pub(crate) fn resample_field_adjoint<T: Real>(cot: &[T], fine: Dims, src: Dims) -> Vec<T> {
    let plan = resample_plan::<T>(src, fine);
    let mut out = vec![T::zero(); 3 * src.len()];
    for i in 0..fine.len() {
        let g = [cot[3 * i], cot[3 * i + 1], cot[3 * i + 2]];
        for (off, w) in plan_corners(src, &plan, fine.coords(i)) {
            for c in 0..3 {
                out[3 * off + c] += w * g[c];
            }
        }
    }
    out
}

/// Location gradient of a warp: `g_u(p) = g_out(p) * grad v(p + u(p))`.
pub(crate) fn warp_location_grad<T: Real>(v: &Volume<T>, u: &VectorField<T>, cot: &[T]) -> Vec<T> {
    let dims = v.dims();
    let mut out = vec![T::zero(); 3 * dims.len()];
    for_each_voxel(dims, &mut out, 3, |i, o| {
        let g = Trilinear::new(dims, displaced(dims, i, u.at(i))).scalar_grad(v.data());
        o[0] = cot[i] * g[0];
        o[1] = cot[i] * g[1];
        o[2] = cot[i] * g[2];
    });
    out
}

/// Transpose of sampling a vector field at the fixed points `p + at(p)`.
pub(crate) fn sample_at_points_adjoint<T: Real>(at: &VectorField<T>, cot: &[T]) -> Vec<T> {
    let dims = at.dims();
    let mut out = vec![T::zero(); 3 * dims.len()];
    for i in 0..dims.len() {
        let g = [cot[3 * i], cot[3 * i + 1], cot[3 * i + 2]];
        Trilinear::new(dims, displaced(dims, i, at.at(i))).scatter_vector(g, &mut out);
    }
    out
}

/// Reverse-mode step for `compose_displacements(outer, inner)`.
///
/// Returns the cotangents of `outer` (value path) and `inner` (identity plus
/// location path).
pub(crate) fn compose_backward<T: Real>(
    outer: &VectorField<T>,
    inner: &VectorField<T>,
    cot: &[T],
) -> (Vec<T>, Vec<T>) {
    let dims = inner.dims();
    let mut g_outer = vec![T::zero(); 3 * dims.len()];
    let mut g_inner = vec![T::zero(); 3 * dims.len()];
    for i in 0..dims.len() {
        let g = [cot[3 * i], cot[3 * i + 1], cot[3 * i + 2]];
        let tri = Trilinear::new(dims, displaced(dims, i, inner.at(i)));
        tri.scatter_vector(g, &mut g_outer);
        let loc = tri.vector_grad_dot(outer.data(), g);
        for c in 0..3 {
            g_inner[3 * i + c] = g[c] + loc[c];
        }
    }
    (g_outer, g_inner)
}
