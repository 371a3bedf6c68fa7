use crate::scalar::Real;
use crate::volume::Dims;

/// Network inputs: one normalized coordinate in `[-1, 1]^3` per coarse
/// lattice point, in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid<T> {
    dims: Dims,
    points: Vec<T>,
}

impl<T: Real> CoordGrid<T> {
    /// Lattice index `k` on an axis of length `D` maps to `2k / (D - 1) - 1`
    /// (0 for a single-point axis).
    pub fn new(dims: Dims) -> Self {
        let norm = |k: usize, n: usize| {
            if n == 1 {
                T::zero()
            } else {
                T::lit(2.0) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1) - T::one()
            }
        };
        let mut points = Vec::with_capacity(3 * dims.len());
        for z in 0..dims.z() {
            for y in 0..dims.y() {
                for x in 0..dims.x() {
                    points.extend_from_slice(&[
                        norm(x, dims.x()),
                        norm(y, dims.y()),
                        norm(z, dims.z()),
                    ]);
                }
            }
        }
        Self { dims, points }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Row-major `len x 3` coordinate matrix.
    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn point(&self, k: usize) -> [T; 3] {
        [
            self.points[3 * k],
            self.points[3 * k + 1],
            self.points[3 * k + 2],
        ]
    }

    /// Lattice index of point `k`.
    pub fn lattice(&self, k: usize) -> [usize; 3] {
        self.dims.coords(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_map_to_unit_cube_corners() {
        let g = CoordGrid::<f64>::new(Dims::new(3, 5, 2));
        assert_eq!(g.point(0), [-1.0, -1.0, -1.0]);
        assert_eq!(g.point(g.len() - 1), [1.0, 1.0, 1.0]);
        assert_eq!(
            g.point(Dims::new(3, 5, 2).offset(1, 2, 0)),
            [0.0, 0.0, -1.0]
        );
    }

    #[test]
    fn points_are_unique_and_bounded() {
        let g = CoordGrid::<f64>::new(Dims::new(4, 3, 6));
        let mut seen = std::collections::HashSet::new();
        for k in 0..g.len() {
            let p = g.point(k);
            assert!(p.iter().all(|c| (-1.0..=1.0).contains(c)));
            assert!(seen.insert(p.map(f64::to_bits)));
            // Inverting the normalization recovers the lattice index.
            let l = g.lattice(k);
            for a in 0..3 {
                let n = g.dims().0[a];
                assert_eq!(((p[a] + 1.0) / 2.0 * (n - 1) as f64).round() as usize, l[a]);
            }
        }
    }
}
