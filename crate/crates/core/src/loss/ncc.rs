//! Local normalized cross-correlation over cubic windows.
//!
//! Windows are truncated at the volume border: voxel `p` sees every `q` with
//! `|q - p| <= r` per axis that lies inside the volume. That neighbourhood
//! relation is symmetric, so the adjoint of the window sum is the window sum.

use crate::error::{Error, Result};
use crate::field::check_same_dims;
use crate::scalar::{pairwise_sum, Real};
use crate::volume::{Dims, Volume};

/// Guard added to the variance product so flat windows contribute 0.
pub const NCC_EPS: f64 = 1e-9;

fn window_radius(window: usize) -> Result<usize> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::config(
            "ncc_window",
            format!("must be odd and >= 3, got {window}"),
        ));
    }
    Ok(window / 2)
}

/// Sum over the truncated `(2r+1)^3` window around every voxel, computed
/// separably with prefix sums along each axis.
pub fn box_sum<T: Real>(dims: Dims, data: &[T], r: usize) -> Vec<T> {
    let mut cur = data.to_vec();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let n = dims.0[axis];
        let stride = match axis {
            0 => 1,
            1 => dims.x(),
            _ => dims.x() * dims.y(),
        };
        let mut next = vec![T::zero(); cur.len()];
        prefix.resize(n + 1, T::zero());
        for start in 0..dims.len() {
            if dims.coords(start)[axis] != 0 {
                continue;
            }
            prefix[0] = T::zero();
            for k in 0..n {
                prefix[k + 1] = prefix[k] + cur[start + k * stride];
            }
            for k in 0..n {
                let lo = k.saturating_sub(r);
                let hi = (k + r).min(n - 1);
                next[start + k * stride] = prefix[hi + 1] - prefix[lo];
            }
        }
        cur = next;
    }
    cur
}

/// Number of voxels in each truncated window.
fn window_counts<T: Real>(dims: Dims, r: usize) -> Vec<T> {
    let len = |k: usize, n: usize| (k + r).min(n - 1) - k.saturating_sub(r) + 1;
    (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            T::from_usize_lossy(len(c[0], dims.x()) * len(c[1], dims.y()) * len(c[2], dims.z()))
        })
        .collect()
}

struct Stats<T> {
    cross: Vec<T>,
    wvar: Vec<T>,
    fvar: Vec<T>,
    sw: Vec<T>,
    sf: Vec<T>,
    count: Vec<T>,
}

fn stats<T: Real>(w: &[T], f: &[T], dims: Dims, r: usize) -> Stats<T> {
    let sw = box_sum(dims, w, r);
    let sf = box_sum(dims, f, r);
    let sww = box_sum(dims, &w.iter().map(|&a| a * a).collect::<Vec<_>>(), r);
    let sff = box_sum(dims, &f.iter().map(|&a| a * a).collect::<Vec<_>>(), r);
    let swf = box_sum(
        dims,
        &w.iter().zip(f).map(|(&a, &b)| a * b).collect::<Vec<_>>(),
        r,
    );
    let count = window_counts::<T>(dims, r);
    let n = dims.len();
    let mut cross = Vec::with_capacity(n);
    let mut wvar = Vec::with_capacity(n);
    let mut fvar = Vec::with_capacity(n);
    for i in 0..n {
        let c = count[i];
        cross.push(swf[i] - sw[i] * sf[i] / c);
        wvar.push(sww[i] - sw[i] * sw[i] / c);
        fvar.push(sff[i] - sf[i] * sf[i] / c);
    }
    Stats {
        cross,
        wvar,
        fvar,
        sw,
        sf,
        count,
    }
}

/// Per-voxel squared correlation of the window around each voxel.
pub fn ncc_map<T: Real>(warped: &Volume<T>, fixed: &Volume<T>, window: usize) -> Result<Vec<T>> {
    check_same_dims("ncc_loss", warped.dims(), fixed.dims())?;
    let r = window_radius(window)?;
    let s = stats(warped.data(), fixed.data(), warped.dims(), r);
    let eps = T::lit(NCC_EPS);
    Ok((0..warped.dims().len())
        .map(|i| s.cross[i] * s.cross[i] / (s.wvar[i] * s.fvar[i] + eps))
        .collect())
}

/// `-mean_p cc(p)`; lies in `[-1, 0]`.
pub fn ncc_loss<T: Real>(warped: &Volume<T>, fixed: &Volume<T>, window: usize) -> Result<T> {
    let cc = ncc_map(warped, fixed, window)?;
    Ok(-pairwise_sum(&cc) / T::from_usize_lossy(cc.len()))
}

/// Loss and its gradient with respect to the warped image. The window
/// statistics are recomputed here rather than kept from the forward pass.
pub fn ncc_loss_grad<T: Real>(
    warped: &Volume<T>,
    fixed: &Volume<T>,
    window: usize,
) -> Result<(T, Vec<T>)> {
    check_same_dims("ncc_loss", warped.dims(), fixed.dims())?;
    let r = window_radius(window)?;
    let dims = warped.dims();
    let n = dims.len();
    let s = stats(warped.data(), fixed.data(), dims, r);
    let eps = T::lit(NCC_EPS);
    let two = T::lit(2.0);
    let mut cc = Vec::with_capacity(n);
    let mut da = Vec::with_capacity(n);
    let mut db = Vec::with_capacity(n);
    let mut dc = Vec::with_capacity(n);
    for i in 0..n {
        let d = s.wvar[i] * s.fvar[i] + eps;
        let c = s.cross[i] * s.cross[i] / d;
        let m = s.count[i];
        // d cc / d sum(w), d sum(w^2), d sum(w f)
        da.push(-two * s.cross[i] * s.sf[i] / (m * d) + two * c * s.fvar[i] * s.sw[i] / (m * d));
        db.push(-c * s.fvar[i] / d);
        dc.push(two * s.cross[i] / d);
        cc.push(c);
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let loss = -pairwise_sum(&cc) * inv_n;
    let ba = box_sum(dims, &da, r);
    let bb = box_sum(dims, &db, r);
    let bc = box_sum(dims, &dc, r);
    let w = warped.data();
    let f = fixed.data();
    let grad = (0..n)
        .map(|i| -inv_n * (ba[i] + two * w[i] * bb[i] + f[i] * bc[i]))
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(d: Dims, seed: u64) -> Volume<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::new(
            d,
            [1.0; 3],
            (0..d.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn box_sum_matches_naive() {
        let d = Dims::new(7, 5, 6);
        let v = noise(d, 1);
        let s = box_sum(d, v.data(), 2);
        for i in 0..d.len() {
            let c = d.coords(i);
            let mut acc = 0.0;
            for z in 0..d.z() {
                for y in 0..d.y() {
                    for x in 0..d.x() {
                        if x.abs_diff(c[0]) <= 2 && y.abs_diff(c[1]) <= 2 && z.abs_diff(c[2]) <= 2 {
                            acc += v.get(x, y, z);
                        }
                    }
                }
            }
            assert!((s[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn self_correlation_is_minus_one() {
        let v = noise(Dims::cube(10), 2);
        assert!((ncc_loss(&v, &v, 9).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn affine_intensity_invariance() {
        let v = noise(Dims::cube(10), 3);
        let w = v.map(|x| 2.0 * x + 3.0);
        assert!((ncc_loss(&w, &v, 9).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = noise(Dims::cube(9), 4);
        let b = noise(Dims::cube(9), 5);
        let l1 = ncc_loss(&a, &b, 5).unwrap();
        let l2 = ncc_loss(&b, &a, 5).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!((-1.0..=0.0).contains(&l1));
    }

    #[test]
    fn window_validation() {
        let a = noise(Dims::cube(4), 4);
        assert!(ncc_loss(&a, &a, 4).is_err());
        assert!(ncc_loss(&a, &a, 1).is_err());
        assert!(ncc_loss(&a, &noise(Dims::cube(5), 1), 3).is_err());
    }

    #[test]
    fn flat_windows_contribute_zero() {
        let a = Volume::<f64>::zeros(Dims::cube(5)).map(|_| 0.5);
        assert_eq!(ncc_loss(&a, &a, 3).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = Dims::cube(8);
        let w = noise(d, 6);
        let f = noise(d, 7);
        let (_, g) = ncc_loss_grad(&w, &f, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dir: Vec<f64> = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-5;
        let shifted = |s: f64| {
            Volume::new(
                d,
                [1.0; 3],
                w.data().iter().zip(&dir).map(|(a, b)| a + s * b).collect(),
            )
            .unwrap()
        };
        let fd = (ncc_loss(&shifted(h), &f, 5).unwrap() - ncc_loss(&shifted(-h), &f, 5).unwrap())
            / (2.0 * h);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() < 1e-5 * an.abs(), "{fd} vs {an}");
    }
}
