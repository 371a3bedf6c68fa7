//! Scalar volumes: intensity images and integer label maps.

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

/// Voxel counts along x, y, z. Flat offsets are x-fastest:
/// `x + X * (y + Y * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Dims([x, y, z])
    }

    pub const fn cube(n: usize) -> Self {
        Dims([n, n, n])
    }

    #[inline]
    pub fn x(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn y(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn z(&self) -> usize {
        self.0[2]
    }

    /// Voxel count, or `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.0[0].checked_mul(self.0[1])?.checked_mul(self.0[2])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub fn offset(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline(always)]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.0[0];
        let r = i / self.0[0];
        [x, r % self.0[1], r / self.0[1]]
    }

    /// True when `(x, y, z)` lies at least `margin` voxels from every face.
    #[inline]
    pub fn is_interior(&self, c: [usize; 3], margin: usize) -> bool {
        (0..3).all(|a| c[a] >= margin && c[a] + margin < self.0[a])
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

pub(crate) fn check_spacing(spacing: [f32; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "spacing must be strictly positive and finite, got {spacing:?}"
        )))
    }
}

fn check_dims(dims: Dims) -> Result<usize> {
    if dims.0.contains(&0) {
        return Err(Error::Validation(format!(
            "dims must be positive, got {dims}"
        )));
    }
    dims.checked_len()
        .ok_or_else(|| Error::Validation(format!("dims {dims} overflow")))
}

/// Intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    /// Builds a volume, checking length, spacing and finiteness.
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<T>) -> Result<Self> {
        let n = check_dims(dims)?;
        check_spacing(spacing)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "volume {dims} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite intensity at voxel {:?}",
                dims.coords(i)
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
            data: vec![T::zero(); dims.len()],
        }
    }

    /// Evaluates `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.z() {
            for y in 0..dims.y() {
                for x in 0..dims.x() {
                    data.push(f(x, y, z));
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
        debug_assert_eq!(data.len(), dims.len());
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.offset(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.offset(x, y, z);
        self.data[i] = v;
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b))
    }

    pub fn mean(&self) -> T {
        pairwise_sum(&self.data) / T::from_usize_lossy(self.data.len())
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Divides every intensity by the volume's maximum, so the result peaks at 1.
pub fn normalize_intensity<T: Real>(v: &Volume<T>) -> Result<Volume<T>> {
    let max = v.max_value();
    if !(max > T::zero()) {
        return Err(Error::Degenerate(format!(
            "cannot normalize a volume whose maximum is {max}"
        )));
    }
    Ok(v.map(|x| x / max))
}

/// Integer segmentation. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: [f32; 3],
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: [f32; 3], data: Vec<u32>) -> Result<Self> {
        let n = check_dims(dims)?;
        check_spacing(spacing)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "label volume {dims} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> u32) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.z() {
            for y in 0..dims.y() {
                for x in 0..dims.x() {
                    data.push(f(x, y, z));
                }
            }
        }
        Self {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, spacing: [f32; 3], data: Vec<u32>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        Self {
            dims,
            spacing,
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.dims.offset(x, y, z)]
    }

    /// Sorted distinct non-background labels.
    pub fn labels(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_and_coords_agree() {
        let d = Dims::new(3, 4, 5);
        for z in 0..5 {
            for y in 0..4 {
                for x in 0..3 {
                    let i = d.offset(x, y, z);
                    assert_eq!(d.coords(i), [x, y, z]);
                }
            }
        }
        assert_eq!(d.offset(2, 3, 4), d.len() - 1);
    }

    #[test]
    fn accessor_matches_flat_layout() {
        let v = Volume::<f64>::from_fn(Dims::new(2, 2, 2), |x, y, z| (x + 2 * y + 4 * z) as f64);
        assert_eq!(v.data()[7], 7.0);
        assert_eq!(v.get(1, 1, 1), 7.0);
        assert_eq!(v.get(1, 0, 1), 5.0);
    }

    #[test]
    fn normalize_examples() {
        let v = Volume::new(Dims::new(3, 1, 1), [1.0; 3], vec![0.0, 2.0, 4.0]).unwrap();
        let n = normalize_intensity(&v).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
        let again = normalize_intensity(&n).unwrap();
        assert_eq!(again, n);
    }

    #[test]
    fn normalize_rejects_zero_volume() {
        let v = Volume::<f32>::zeros(Dims::cube(2));
        assert!(matches!(normalize_intensity(&v), Err(Error::Degenerate(_))));
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(
            Volume::new(Dims::cube(2), [1.0; 3], vec![0.0f64; 7]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Volume::new(Dims::cube(1), [1.0; 3], vec![f64::NAN]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Volume::new(Dims::cube(1), [1.0, 0.0, 1.0], vec![1.0f64]),
            Err(Error::Validation(_))
        ));
        assert!(Volume::new(Dims::new(0, 1, 1), [1.0; 3], Vec::<f64>::new()).is_err());
    }

    #[test]
    fn label_set_excludes_background() {
        let l = LabelVolume::new(Dims::new(4, 1, 1), [1.0; 3], vec![0, 3, 1, 3]).unwrap();
        assert_eq!(l.labels(), vec![1, 3]);
    }
}
