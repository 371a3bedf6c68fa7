//! Seeded synthetic registration problems with known ground-truth warps.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`. Three
//! independent streams are used: 0 for the velocity bumps, 1 for the
//! intensity texture and 2 for the label ellipsoids. Within a stream the
//! draws happen in the order the fields of each item are listed below.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{warp_labels, warp_volume, VectorField};
use crate::integrate::exp_euler;
use crate::volume::{Dims, LabelVolume, Volume};

pub const GROUND_TRUTH_EULER_STEPS: usize = 256;
const TEXTURE_WAVES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub seed: u64,
    pub n_bumps: usize,
    /// Largest velocity magnitude in voxels.
    pub max_speed: f64,
    /// Highest spatial frequency of the texture, in radians per voxel.
    pub texture_scale: f64,
    pub n_labels: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: [48; 3],
            seed: 7,
            n_bumps: 4,
            max_speed: 2.5,
            texture_scale: 0.6,
            n_labels: 6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 8) {
            return Err(Error::Validation(format!(
                "synth dims must be at least 8 per axis, got {:?}",
                self.dims
            )));
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return Err(Error::Validation(format!(
                "max_speed must be finite and >= 0, got {}",
                self.max_speed
            )));
        }
        if !(self.texture_scale.is_finite() && self.texture_scale > 0.0) {
            return Err(Error::Validation(format!(
                "texture_scale must be finite and positive, got {}",
                self.texture_scale
            )));
        }
        if self.n_labels > u32::MAX as usize - 1 {
            return Err(Error::Validation("too many labels".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Dims {
        Dims(self.dims)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn min_dim(d: Dims) -> f64 {
    d.0.iter().copied().min().unwrap_or(0) as f64
}

/// A Gaussian velocity bump: center, width, then amplitude vector.
#[derive(Debug, Clone, Copy)]
struct Bump {
    center: [f64; 3],
    sigma: f64,
    amp: [f64; 3],
}

fn draw_bumps(spec: &SynthSpec) -> Vec<Bump> {
    let dims = spec.grid();
    let mut rng = stream(spec.seed, 0);
    (0..spec.n_bumps)
        .map(|_| {
            let center = std::array::from_fn(|a| rng.random_range(0.0..=(dims.0[a] - 1) as f64));
            let sigma = rng.random_range(0.2..0.35) * min_dim(dims);
            let amp = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            Bump { center, sigma, amp }
        })
        .collect()
}

/// Sum of Gaussian bumps, rescaled so the largest lattice magnitude equals
/// `max_speed`.
pub fn gen_velocity(spec: &SynthSpec) -> Result<VectorField<f64>> {
    spec.validate()?;
    let dims = spec.grid();
    let bumps = draw_bumps(spec);
    if spec.max_speed == 0.0 {
        return Ok(VectorField::zeros(dims));
    }
    let raw = VectorField::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let mut v = [0.0; 3];
        for b in &bumps {
            let r2: f64 = (0..3).map(|a| (p[a] - b.center[a]).powi(2)).sum();
            let g = (-r2 / (2.0 * b.sigma * b.sigma)).exp();
            for a in 0..3 {
                v[a] += b.amp[a] * g;
            }
        }
        v
    });
    let m = raw.max_norm();
    Ok(if m > 0.0 {
        raw.scaled(spec.max_speed / m)
    } else {
        raw
    })
}

/// Random-phase sinusoids with frequencies up to `texture_scale`, then
/// brighter ellipsoids for the labels, min-max scaled to `[0, 1]`.
fn gen_moving(spec: &SynthSpec) -> (Volume<f64>, LabelVolume) {
    let dims = spec.grid();
    let mut rng = stream(spec.seed, 1);
    let waves: Vec<([f64; 3], f64, f64)> = (0..TEXTURE_WAVES)
        .map(|_| {
            // Direction uniform on the sphere, then magnitude, phase, amplitude.
            let cz: f64 = rng.random_range(-1.0..1.0);
            let az: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - cz * cz).sqrt();
            let k = rng.random_range(0.3..=1.0) * spec.texture_scale;
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..1.0);
            ([k * s * az.cos(), k * s * az.sin(), k * cz], phase, amp)
        })
        .collect();

    let mut rng = stream(spec.seed, 2);
    let ellipsoids: Vec<([f64; 3], [f64; 3])> = (0..spec.n_labels)
        .map(|_| {
            let c = std::array::from_fn(|a| rng.random_range(0.25..0.75) * (dims.0[a] - 1) as f64);
            let r = std::array::from_fn(|_| rng.random_range(0.05..0.09) * min_dim(dims));
            (c, r)
        })
        .collect();
    let label_at = |p: [f64; 3]| -> u32 {
        let mut l = 0;
        for (k, (c, r)) in ellipsoids.iter().enumerate() {
            let q: f64 = (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum();
            if q <= 1.0 {
                l = k as u32 + 1;
            }
        }
        l
    };
    let labels = LabelVolume::from_fn(dims, |x, y, z| label_at([x as f64, y as f64, z as f64]));
    let n = spec.n_labels.max(1) as f64;
    let raw = Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let t: f64 = waves
            .iter()
            .map(|(k, ph, a)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum();
        let l = labels.get(x, y, z);
        let bright = if l == 0 {
            0.0
        } else {
            0.5 + 0.5 * l as f64 / n
        };
        t / TEXTURE_WAVES as f64 + 0.5 * bright
    });
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    (raw.map(|v| (v - lo) / span), labels)
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub moving: Volume<f64>,
    pub fixed: Volume<f64>,
    pub moving_labels: LabelVolume,
    pub fixed_labels: LabelVolume,
    /// Displacement with `fixed(p) = moving(p + gt(p))`.
    pub ground_truth: VectorField<f64>,
    pub velocity: VectorField<f64>,
}

pub fn gen_pair(spec: &SynthSpec) -> Result<SynthPair> {
    let velocity = gen_velocity(spec)?;
    let ground_truth = exp_euler(&velocity, GROUND_TRUTH_EULER_STEPS);
    let (moving, moving_labels) = gen_moving(spec);
    let (fixed, fixed_labels) = if spec.max_speed == 0.0 {
        (moving.clone(), moving_labels.clone())
    } else {
        (
            warp_volume(&moving, &ground_truth)?,
            warp_labels(&moving_labels, &ground_truth)?,
        )
    };
    Ok(SynthPair {
        moving,
        fixed,
        moving_labels,
        fixed_labels,
        ground_truth,
        velocity,
    })
}
