//! Dice overlap, negative-Jacobian ratio and SSIM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_same_dims, jacobian, VectorField};
use crate::loss::{box_sum, LossBreakdown};
use crate::scalar::{pairwise_sum, Real};
use crate::volume::{LabelVolume, Volume};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiceScores {
    pub per_label: BTreeMap<u32, f64>,
    /// Mean over labels present in either volume; `None` when there are none.
    pub mean: Option<f64>,
}

/// Dice per label. `labels` defaults to every non-zero label in either
/// volume; label 0 is always skipped.
pub fn dice(a: &LabelVolume, b: &LabelVolume, labels: Option<&[u32]>) -> Result<DiceScores> {
    check_same_dims("dice", a.dims(), b.dims())?;
    let set: Vec<u32> = match labels {
        Some(l) => l.iter().copied().filter(|&l| l != 0).collect(),
        None => {
            let mut l = a.labels();
            l.extend(b.labels());
            l.sort_unstable();
            l.dedup();
            l
        }
    };
    let mut counts: BTreeMap<u32, [u64; 3]> = set.iter().map(|&l| (l, [0; 3])).collect();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if let Some(c) = counts.get_mut(&x) {
            c[0] += 1;
            if x == y {
                c[2] += 1;
            }
        }
        if let Some(c) = counts.get_mut(&y) {
            c[1] += 1;
        }
    }
    let per_label: BTreeMap<u32, f64> = counts
        .into_iter()
        .filter(|(_, c)| c[0] + c[1] > 0)
        .map(|(l, c)| (l, 2.0 * c[2] as f64 / (c[0] + c[1]) as f64))
        .collect();
    let mean =
        (!per_label.is_empty()).then(|| per_label.values().sum::<f64>() / per_label.len() as f64);
    Ok(DiceScores { per_label, mean })
}

/// Fraction of voxels with `det J < 0`, boundary stencils included.
pub fn neg_jacobian_ratio<T: Real>(u: &VectorField<T>) -> Result<f64> {
    neg_jacobian_ratio_interior(u, 0)
}

/// Like [`neg_jacobian_ratio`] but only over voxels at least `margin` from
/// every face.
pub fn neg_jacobian_ratio_interior<T: Real>(u: &VectorField<T>, margin: usize) -> Result<f64> {
    let jac = jacobian(u)?;
    let dims = u.dims();
    let (mut total, mut neg) = (0usize, 0usize);
    for (i, d) in jac.determinants().iter().enumerate() {
        if dims.is_interior(dims.coords(i), margin) {
            total += 1;
            if *d < T::zero() {
                neg += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Degenerate(format!(
            "no voxels of {dims} lie {margin} from the border"
        )));
    }
    Ok(neg as f64 / total as f64)
}

/// Mean SSIM over a uniform 7³ window truncated at the border, with
/// population statistics and `L = 1`.
pub fn ssim<T: Real>(a: &Volume<T>, b: &Volume<T>) -> Result<f64> {
    check_same_dims("ssim", a.dims(), b.dims())?;
    let dims = a.dims();
    let r = SSIM_WINDOW / 2;
    let (x, y) = (a.data(), b.data());
    let sum = |v: Vec<T>| box_sum(dims, &v, r);
    let count = sum(vec![T::one(); dims.len()]);
    let sx = sum(x.to_vec());
    let sy = sum(y.to_vec());
    let sxx = sum(x.iter().map(|&v| v * v).collect());
    let syy = sum(y.iter().map(|&v| v * v).collect());
    let sxy = sum(x.iter().zip(y).map(|(&p, &q)| p * q).collect());
    let (c1, c2, two) = (T::lit(SSIM_C1), T::lit(SSIM_C2), T::lit(2.0));
    let map: Vec<T> = (0..dims.len())
        .map(|i| {
            let n = count[i];
            let (mx, my) = (sx[i] / n, sy[i] / n);
            let vx = sxx[i] / n - mx * mx;
            let vy = syy[i] / n - my * my;
            let cxy = sxy[i] / n - mx * my;
            (two * (mx * my) + c1) * (two * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect();
    Ok((pairwise_sum(&map) / T::from_usize_lossy(map.len())).as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice_per_label: Option<BTreeMap<String, f64>>,
    pub neg_jac_ratio: f64,
    pub ssim: f64,
    pub loss_sim: f64,
    pub loss_jdet: f64,
    pub loss_smooth: f64,
    pub loss_total: f64,
    pub runtime_s: f64,
}

impl MetricsReport {
    pub fn new(
        dice: Option<&DiceScores>,
        neg_jac_ratio: f64,
        ssim: f64,
        loss: &LossBreakdown,
        runtime_s: f64,
    ) -> Self {
        Self {
            dice_mean: dice.and_then(|d| d.mean),
            dice_per_label: dice.map(|d| {
                d.per_label
                    .iter()
                    .map(|(l, v)| (l.to_string(), *v))
                    .collect()
            }),
            neg_jac_ratio,
            ssim,
            loss_sim: loss.sim,
            loss_jdet: loss.jdet,
            loss_smooth: loss.smooth,
            loss_total: loss.total,
            runtime_s,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(dims: Dims, data: Vec<u32>) -> LabelVolume {
        LabelVolume::new(dims, [1.0; 3], data).unwrap()
    }

    #[test]
    fn dice_cases() {
        let d = Dims::new(4, 2, 1);
        let a = labels(d, vec![1, 1, 1, 1, 0, 2, 2, 0]);
        let same = dice(&a, &a, None).unwrap();
        assert_eq!(
            same.per_label.values().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0]
        );
        assert_eq!(same.mean, Some(1.0));

        let x = labels(d, vec![1, 1, 0, 0, 0, 0, 0, 0]);
        let y = labels(d, vec![0, 0, 1, 1, 0, 0, 0, 0]);
        assert_eq!(dice(&x, &y, None).unwrap().mean, Some(0.0));

        let x = labels(d, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let y = labels(d, vec![0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(dice(&x, &y, None).unwrap().per_label[&1], 0.5);
        assert_eq!(dice(&y, &x, None).unwrap(), dice(&x, &y, None).unwrap());
    }

    #[test]
    fn dice_skips_absent_labels() {
        let d = Dims::new(2, 1, 1);
        let a = labels(d, vec![1, 0]);
        let s = dice(&a, &a, Some(&[0, 1, 5])).unwrap();
        assert_eq!(s.per_label.len(), 1);
        let empty = labels(d, vec![0, 0]);
        assert_eq!(dice(&empty, &empty, None).unwrap().mean, None);
    }

    #[test]
    fn neg_ratio_cases() {
        let zero = VectorField::<f64>::zeros(Dims::cube(6));
        assert_eq!(neg_jacobian_ratio(&zero).unwrap(), 0.0);
        // u = -1.5 p gives J = -0.5 I everywhere, so det < 0 on every voxel.
        let d = Dims::cube(6);
        let flip = VectorField::from_fn(d, |x, y, z| {
            [-1.5 * x as f64, -1.5 * y as f64, -1.5 * z as f64]
        });
        assert_eq!(neg_jacobian_ratio(&flip).unwrap(), 1.0);
        let jac = jacobian(&flip).unwrap();
        let count = jac.determinants().iter().filter(|&&v| v < 0.0).count();
        assert_eq!(count, d.len());
        assert!(neg_jacobian_ratio_interior(&zero, 3).is_err());
    }

    fn naive_ssim(a: &Volume<f64>, b: &Volume<f64>) -> f64 {
        let d = a.dims();
        let mut total = 0.0;
        for z in 0..d.z() {
            for y in 0..d.y() {
                for x in 0..d.x() {
                    let mut vals = Vec::new();
                    for zz in z.saturating_sub(3)..=(z + 3).min(d.z() - 1) {
                        for yy in y.saturating_sub(3)..=(y + 3).min(d.y() - 1) {
                            for xx in x.saturating_sub(3)..=(x + 3).min(d.x() - 1) {
                                vals.push((a.get(xx, yy, zz), b.get(xx, yy, zz)));
                            }
                        }
                    }
                    let n = vals.len() as f64;
                    let mx = vals.iter().map(|v| v.0).sum::<f64>() / n;
                    let my = vals.iter().map(|v| v.1).sum::<f64>() / n;
                    let vx = vals.iter().map(|v| (v.0 - mx).powi(2)).sum::<f64>() / n;
                    let vy = vals.iter().map(|v| (v.1 - my).powi(2)).sum::<f64>() / n;
                    let cxy = vals.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum::<f64>() / n;
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / d.len() as f64
    }

    #[test]
    fn ssim_matches_naive_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Dims::new(9, 8, 10);
        let a = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
        assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-10);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!(ssim(&a, &a.map(|v| 1.0 - v)).unwrap() < 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn report_keys() {
        let dice = DiceScores {
            per_label: [(3, 0.5)].into_iter().collect(),
            mean: Some(0.5),
        };
        let r = MetricsReport::new(Some(&dice), 0.0, 1.0, &LossBreakdown::default(), 0.25);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for k in [
            "dice_mean",
            "dice_per_label",
            "neg_jac_ratio",
            "ssim",
            "loss_sim",
            "loss_jdet",
            "loss_smooth",
            "loss_total",
            "runtime_s",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["dice_per_label"]["3"], 0.5);
        let r = MetricsReport::new(None, 0.0, 1.0, &LossBreakdown::default(), 0.0);
        assert!(!r.to_json().contains("dice"));
    }
}
