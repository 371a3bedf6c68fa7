//! Stage-by-stage derivative checks against finite differences and
//! inner-product identities.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::tape::{forward_backward, PipelineConfig, Problem};
use crate::error::{Error, Result};
use crate::field::{
    compose_backward, compose_displacements, resample_field, resample_field_adjoint,
    sample_at_points_adjoint, warp_location_grad, warp_volume, VectorField,
};
use crate::integrate::{exp_ss, exp_ss_backward, exp_ss_taped};
use crate::loss::{
    box_sum, jdet_loss, jdet_loss_grad, ncc_loss, ncc_loss_grad, smooth_loss, smooth_loss_grad,
    total_loss, LossWeights,
};
use crate::model::{Arch, CoordGrid, VelocityModel};
use crate::register::coarse_dims;
use crate::volume::{Dims, Volume};

pub const LINEAR_TOL: f64 = 1e-12;
pub const STAGE_TOL: f64 = 1e-6;
pub const LOSS_TOL: f64 = 1e-5;
pub const MIN_SIZE: usize = 8;
pub const MAX_SIZE: usize = 16;
pub const DEFAULT_SIZE: usize = 12;
pub const DIRECTIONS: usize = 20;
const H: f64 = 1e-5;
pub const E2E_MAX_SHIFT: f64 = 3e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageError {
    pub stage: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl StageError {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub size: usize,
    pub stages: Vec<StageError>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(StageError::passed)
    }

    pub fn stage(&self, name: &str) -> Option<&StageError> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "size = {}", self.size)?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<20} max_rel_err = {:.3e}  threshold = {:.0e}  {}",
                s.stage,
                s.max_rel_err,
                s.threshold,
                if s.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "status = {}",
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::scalar::pairwise_sum_by(a.len(), &|i| a[i] * b[i])
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut d = uniform(rng, n, -1.0, 1.0);
    let norm = dot(&d, &d).sqrt();
    d.iter_mut().for_each(|x| *x /= norm);
    d
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

fn field(dims: Dims, data: Vec<f64>) -> VectorField<f64> {
    VectorField::new(dims, [1.0; 3], data).expect("sized field")
}

/// Sum of a few random low-frequency sinusoids per component.
pub fn smooth_random_field(dims: Dims, rng: &mut ChaCha8Rng, amplitude: f64) -> VectorField<f64> {
    let waves: Vec<[f64; 8]> = (0..9)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
        .collect();
    let raw = VectorField::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        std::array::from_fn(|c| {
            waves[3 * c..3 * c + 3]
                .iter()
                .map(|w| {
                    let k = [0.1 + 0.3 * w[0], 0.1 + 0.3 * w[1], 0.1 + 0.3 * w[2]];
                    (0.5 + w[3]) * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + 6.3 * w[4]).sin()
                })
                .sum::<f64>()
        })
    });
    let m = raw.max_norm();
    raw.scaled(if m > 0.0 { amplitude / m } else { 0.0 })
}

/// Band-limited random image in roughly `[0, 1]`.
pub fn smooth_random_image(dims: Dims, rng: &mut ChaCha8Rng) -> Volume<f64> {
    let waves: Vec<[f64; 5]> = (0..6)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
        .collect();
    Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        let s: f64 = waves
            .iter()
            .map(|w| {
                let k = [0.2 + 0.6 * w[0], 0.2 + 0.6 * w[1], 0.2 + 0.6 * w[2]];
                (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + 6.3 * w[3]).sin()
            })
            .sum();
        0.5 + s / 12.0
    })
}

/// Random displacement whose sample points `p + u(p)` stay away from
/// lattice planes by at least 0.2 voxel.
fn off_lattice_field(dims: Dims, rng: &mut ChaCha8Rng) -> VectorField<f64> {
    let data = (0..3 * dims.len())
        .map(|_| rng.random_range(-2i32..2) as f64 + rng.random_range(0.2..0.8))
        .collect();
    field(dims, data)
}

/// Inner-product identities use non-negative vectors so the two sides
/// cannot cancel to near zero.
fn linear_stages(dims: Dims, coarse: Dims, rng: &mut ChaCha8Rng) -> Vec<StageError> {
    let mut out = Vec::new();

    let x = uniform(rng, 3 * coarse.len(), 0.0, 1.0);
    let y = uniform(rng, 3 * dims.len(), 0.0, 1.0);
    let ax = resample_field(&field(coarse, x.clone()), dims);
    let aty = resample_field_adjoint(&y, dims, coarse);
    out.push(StageError {
        stage: "upsample_adjoint".into(),
        max_rel_err: rel_err(dot(ax.data(), &y), dot(&x, &aty)),
        threshold: LINEAR_TOL,
    });

    // Sampling a field at fixed displaced points is linear in the field.
    let at = off_lattice_field(dims, rng);
    let x = uniform(rng, 3 * dims.len(), 0.0, 1.0);
    let zero_outer = field(dims, x.clone());
    let sampled = compose_displacements(&zero_outer, &at).expect("same dims");
    let ax: Vec<f64> = sampled
        .data()
        .iter()
        .zip(at.data())
        .map(|(s, a)| s - a)
        .collect();
    let aty = sample_at_points_adjoint(&at, &y);
    out.push(StageError {
        stage: "resample_adjoint".into(),
        max_rel_err: rel_err(dot(&ax, &y), dot(&x, &aty)),
        threshold: LINEAR_TOL,
    });

    let r = 2;
    let xs = uniform(rng, dims.len(), 0.0, 1.0);
    let ys = uniform(rng, dims.len(), 0.0, 1.0);
    let bx = box_sum(dims, &xs, r);
    let by = box_sum(dims, &ys, r);
    out.push(StageError {
        stage: "box_sum_adjoint".into(),
        max_rel_err: rel_err(dot(&bx, &ys), dot(&xs, &by)),
        threshold: LINEAR_TOL,
    });
    out
}

/// Worst relative error of `analytic(d)` against a central difference of
/// `f` along `DIRECTIONS` random unit directions around `x`.
fn fd_check(
    rng: &mut ChaCha8Rng,
    x: &[f64],
    grad: &[f64],
    directions: usize,
    f: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    fd_check_with(rng, x, grad, directions, f, &|_| Ok(H))
}

/// [`fd_check`] with a per-direction step.
fn fd_check_with(
    rng: &mut ChaCha8Rng,
    x: &[f64],
    grad: &[f64],
    directions: usize,
    f: &dyn Fn(&[f64]) -> Result<f64>,
    step: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let d = unit_direction(rng, x.len());
        let h = step(&d)?;
        let fd = (f(&axpy(x, h, &d))? - f(&axpy(x, -h, &d))?) / (2.0 * h);
        worst = worst.max(rel_err(dot(grad, &d), fd));
    }
    Ok(worst)
}

fn nonlinear_stages(dims: Dims, rng: &mut ChaCha8Rng) -> Result<Vec<StageError>> {
    let mut out = Vec::new();
    let n3 = 3 * dims.len();
    let stage = |name: &str, err: f64, threshold: f64| StageError {
        stage: name.into(),
        max_rel_err: err,
        threshold,
    };

    // Warp: location gradient at off-lattice points.
    let img = smooth_random_image(dims, rng);
    let u = off_lattice_field(dims, rng);
    let c = uniform(rng, dims.len(), -1.0, 1.0);
    let g = warp_location_grad(&img, &u, &c);
    let f = |x: &[f64]| -> Result<f64> {
        Ok(dot(warp_volume(&img, &field(dims, x.to_vec()))?.data(), &c))
    };
    out.push(stage(
        "warp",
        fd_check(rng, u.data(), &g, 5, &f)?,
        STAGE_TOL,
    ));

    // Composition: both arguments perturbed together.
    let outer = smooth_random_field(dims, rng, 1.0);
    let inner = off_lattice_field(dims, rng);
    let c = uniform(rng, n3, -1.0, 1.0);
    let (go, gi) = compose_backward(&outer, &inner, &c);
    let joint: Vec<f64> = outer.data().iter().chain(inner.data()).copied().collect();
    let grad: Vec<f64> = go.iter().chain(&gi).copied().collect();
    let f = |x: &[f64]| -> Result<f64> {
        let (a, b) = x.split_at(n3);
        Ok(dot(
            compose_displacements(&field(dims, a.to_vec()), &field(dims, b.to_vec()))?.data(),
            &c,
        ))
    };
    out.push(stage(
        "compose",
        fd_check(rng, &joint, &grad, 5, &f)?,
        STAGE_TOL,
    ));

    // Scaling and squaring.
    let v = smooth_random_field(dims, rng, 1.5);
    let c = uniform(rng, n3, -1.0, 1.0);
    let tape = exp_ss_taped(&v, 7)?;
    let g = exp_ss_backward(&tape, &c);
    let f = |x: &[f64]| -> Result<f64> { Ok(dot(exp_ss(&field(dims, x.to_vec()), 7)?.data(), &c)) };
    out.push(stage(
        "squaring",
        fd_check(rng, v.data(), &g, 5, &f)?,
        STAGE_TOL,
    ));

    // Losses.
    let fixed = smooth_random_image(dims, rng);
    let moving = smooth_random_image(dims, rng);
    let (_, g) = ncc_loss_grad(&moving, &fixed, 5)?;
    let f = |x: &[f64]| -> Result<f64> {
        ncc_loss(&Volume::new(dims, [1.0; 3], x.to_vec())?, &fixed, 5)
    };
    out.push(stage(
        "ncc",
        fd_check(rng, moving.data(), &g, 5, &f)?,
        LOSS_TOL,
    ));

    // Rough enough that some determinants are negative.
    let u = field(dims, uniform(rng, n3, -0.6, 0.6));
    let (_, g) = jdet_loss_grad(&u)?;
    let f = |x: &[f64]| -> Result<f64> { jdet_loss(&field(dims, x.to_vec())) };
    out.push(stage("jdet", fd_check(rng, u.data(), &g, 5, &f)?, LOSS_TOL));

    let (_, g) = smooth_loss_grad(&u, false)?;
    let f = |x: &[f64]| -> Result<f64> { smooth_loss(&field(dims, x.to_vec()), false) };
    out.push(stage(
        "smooth",
        fd_check(rng, u.data(), &g, 5, &f)?,
        LOSS_TOL,
    ));

    Ok(out)
}

fn model_stage(arch: &Arch, coarse: Dims, seed: u64, rng: &mut ChaCha8Rng) -> Result<StageError> {
    let model = VelocityModel::<f64>::init(arch, coarse, seed)?;
    let grid = CoordGrid::new(coarse);
    let (_, tape) = model.forward(&grid)?;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let d = unit_direction(rng, model.param_count());
        worst = worst.max(crate::model::velocity_jvp_check(&model, &grid, &d)?);
        // Reverse mode must agree with forward mode.
        let c = uniform(rng, 3 * coarse.len(), -1.0, 1.0);
        let jd = model.jvp(&grid, &d)?;
        let jtc = model.backward(tape.as_ref(), &c);
        worst = worst.max(rel_err(dot(&jd, &c), dot(&d, &jtc)));
    }
    Ok(StageError {
        stage: "model".into(),
        max_rel_err: worst,
        threshold: STAGE_TOL,
    })
}

/// Full pipeline gradient along random parameter directions. The velocity
/// scale is chosen so displacements are about 1.5 voxels, which keeps the
/// sample points off the lattice. Trilinear sampling is only piecewise
/// smooth, so each step is sized to move no velocity by more than
/// `E2E_MAX_SHIFT` voxel and the difference rarely straddles a cell face.
fn end_to_end(
    arch: &Arch,
    dims: Dims,
    seed: u64,
    cascaded: bool,
    rng: &mut ChaCha8Rng,
) -> Result<StageError> {
    let coarse = coarse_dims(dims, 3)?;
    let model = VelocityModel::<f64>::init(arch, coarse, seed)?;
    let coords = CoordGrid::new(coarse);
    let vmax = model.eval(&coords)?.max_norm();
    let velocity_scale = if vmax > 0.0 { 1.5 / vmax } else { 1.0 };
    let moving = smooth_random_image(dims, rng);
    let fixed = smooth_random_image(dims, rng);
    let init = cascaded.then(|| smooth_random_field(dims, rng, 1.0));
    let problem = Problem {
        coords: &coords,
        moving: &moving,
        fixed: &fixed,
        init: init.as_ref(),
    };
    let cfg = PipelineConfig {
        weights: LossWeights {
            ncc_window: 5,
            ..LossWeights::default()
        },
        time_steps: 7,
        velocity_scale,
    };
    let (_, grad) = forward_backward(&model, problem, &cfg)?;
    let f = |x: &[f64]| -> Result<f64> {
        let mut m = model.clone();
        m.params_mut().copy_from_slice(x);
        let v = resample_field(&m.eval(&coords)?.scaled(velocity_scale), dims);
        let mut u = exp_ss(&v, cfg.time_steps)?;
        if let Some(init) = &init {
            u = compose_displacements(&u, init)?;
        }
        let warped = warp_volume(&moving, &u)?;
        Ok(total_loss(&warped, &fixed, &u, &cfg.weights)?.total)
    };
    let step = |d: &[f64]| -> Result<f64> {
        let dv = model.jvp(&coords, d)?;
        let m = dv.iter().fold(0.0f64, |a, v| a.max(v.abs())) * velocity_scale;
        Ok(if m > 0.0 { E2E_MAX_SHIFT / m } else { H })
    };
    let err = fd_check_with(rng, model.params(), &grad, DIRECTIONS, &f, &step)?;
    Ok(StageError {
        stage: if cascaded {
            "end_to_end_cascaded"
        } else {
            "end_to_end"
        }
        .into(),
        max_rel_err: err,
        threshold: LOSS_TOL,
    })
}

/// Runs every check on a random problem of `size`³ voxels.
pub fn gradcheck(seed: u64, size: usize) -> Result<GradcheckReport> {
    if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
        return Err(Error::Validation(format!(
            "gradcheck size must be in {MIN_SIZE}..={MAX_SIZE}, got {size}"
        )));
    }
    let dims = Dims::cube(size);
    let coarse = coarse_dims(dims, 3)?;
    let arch = Arch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = vec![model_stage(&arch, coarse, seed, &mut rng)?];
    stages.extend(linear_stages(dims, coarse, &mut rng));
    stages.extend(nonlinear_stages(dims, &mut rng)?);
    stages.push(end_to_end(&arch, dims, seed, false, &mut rng)?);
    stages.push(end_to_end(&arch, dims, seed, true, &mut rng)?);
    Ok(GradcheckReport { seed, size, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_sizes() {
        assert!(gradcheck(0, 7).is_err());
        assert!(gradcheck(0, 17).is_err());
    }

    #[test]
    fn rel_err_handles_zero() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(1.0, 0.5), 0.5);
    }

    #[test]
    fn small_problem_passes() {
        let report = gradcheck(3, 8).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.stages.len(), 12);
    }
}
