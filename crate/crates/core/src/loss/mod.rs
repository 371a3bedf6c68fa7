//! Registration objective: `sim + lambda_jdet * jdet + lambda_smooth * smooth`.

mod ncc;
mod regularizers;

pub use ncc::{box_sum, ncc_loss, ncc_loss_grad, ncc_map, NCC_EPS};
pub use regularizers::{jdet_loss, jdet_loss_grad, smooth_loss, smooth_loss_grad};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_same_dims, VectorField};
use crate::scalar::Real;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_jdet: f64,
    pub lambda_smooth: f64,
    pub ncc_window: usize,
    /// Penalize `grad phi` instead of `grad u` in the smoothness term.
    pub smooth_on_phi: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_jdet: 100.0,
            lambda_smooth: 0.1,
            ncc_window: 9,
            smooth_on_phi: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda_jdet", self.lambda_jdet),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    key,
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        if self.ncc_window < 3 || self.ncc_window.is_multiple_of(2) {
            return Err(Error::config(
                "ncc_window",
                format!("must be odd and >= 3, got {}", self.ncc_window),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sim: f64,
    pub jdet: f64,
    pub smooth: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn combine<T: Real>(sim: T, jdet: T, smooth: T, w: &LossWeights) -> (T, Self) {
        let total = sim + T::lit(w.lambda_jdet) * jdet + T::lit(w.lambda_smooth) * smooth;
        (
            total,
            Self {
                sim: sim.as_f64(),
                jdet: jdet.as_f64(),
                smooth: smooth.as_f64(),
                total: total.as_f64(),
            },
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.sim, self.jdet, self.smooth, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn total_loss<T: Real>(
    warped: &Volume<T>,
    fixed: &Volume<T>,
    u: &VectorField<T>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    check_same_dims("total_loss", warped.dims(), u.dims())?;
    let sim = ncc_loss(warped, fixed, weights.ncc_window)?;
    let jdet = jdet_loss(u)?;
    let smooth = smooth_loss(u, weights.smooth_on_phi)?;
    Ok(LossBreakdown::combine(sim, jdet, smooth, weights).1)
}

/// Gradients of the weighted objective.
pub struct LossGrad<T> {
    pub breakdown: LossBreakdown,
    /// With respect to the warped image.
    pub d_warped: Vec<T>,
    /// With respect to the displacement, through the regularizers only.
    pub d_disp: Vec<T>,
}

pub fn total_loss_grad<T: Real>(
    warped: &Volume<T>,
    fixed: &Volume<T>,
    u: &VectorField<T>,
    weights: &LossWeights,
) -> Result<LossGrad<T>> {
    weights.validate()?;
    check_same_dims("total_loss", warped.dims(), u.dims())?;
    let (sim, d_warped) = ncc_loss_grad(warped, fixed, weights.ncc_window)?;
    let (jdet, gj) = jdet_loss_grad(u)?;
    let (smooth, gs) = smooth_loss_grad(u, weights.smooth_on_phi)?;
    let (lj, ls) = (T::lit(weights.lambda_jdet), T::lit(weights.lambda_smooth));
    let d_disp = gj.iter().zip(&gs).map(|(&a, &b)| lj * a + ls * b).collect();
    Ok(LossGrad {
        breakdown: LossBreakdown::combine(sim, jdet, smooth, weights).1,
        d_warped,
        d_disp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(d: Dims, rng: &mut ChaCha8Rng) -> Volume<f64> {
        Volume::new(
            d,
            [1.0; 3],
            (0..d.len()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = noise(Dims::cube(10), &mut rng);
        let b = total_loss(
            &v,
            &v,
            &VectorField::zeros(v.dims()),
            &LossWeights::default(),
        )
        .unwrap();
        assert!((b.total + 1.0).abs() < 1e-9);
        assert_eq!(b.jdet, 0.0);
        assert_eq!(b.smooth, 0.0);
    }

    #[test]
    fn weights_semantics_and_recomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dims::cube(8);
        let (w, f) = (noise(d, &mut rng), noise(d, &mut rng));
        let u = VectorField::new(
            d,
            [1.0; 3],
            (0..3 * d.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let zero = LossWeights {
            lambda_jdet: 0.0,
            lambda_smooth: 0.0,
            ..Default::default()
        };
        let b = total_loss(&w, &f, &u, &zero).unwrap();
        assert_eq!(b.total, b.sim);

        let wts = LossWeights::default();
        let b = total_loss(&w, &f, &u, &wts).unwrap();
        let sim = ncc_loss(&w, &f, 9).unwrap();
        let jd = jdet_loss(&u).unwrap();
        let sm = smooth_loss(&u, false).unwrap();
        assert_eq!(b.total, sim + 100.0 * jd + 0.1 * sm);
        assert!(b.jdet >= 0.0 && b.smooth >= 0.0);
    }

    #[test]
    fn weight_validation() {
        let bad = LossWeights {
            lambda_jdet: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "lambda_jdet"));
        let bad = LossWeights {
            ncc_window: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
