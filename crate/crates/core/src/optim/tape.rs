//! Reverse-mode evaluation of the registration pipeline
//! (model → scale → upsample → squaring → compose → warp → loss).

use crate::error::{Error, Result};
use crate::field::{
    compose_displacements, resample_field, resample_field_adjoint, sample_at_points_adjoint,
    warp_location_grad, warp_volume, VectorField,
};
use crate::integrate::{exp_ss_backward, exp_ss_taped, SquaringTape};
use crate::loss::{total_loss, total_loss_grad, LossBreakdown, LossWeights};
use crate::model::{CoordGrid, MlpTape, VelocityModel};
use crate::scalar::Real;
use crate::volume::Volume;

/// Inputs of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a, T> {
    pub coords: &'a CoordGrid<T>,
    pub moving: &'a Volume<T>,
    pub fixed: &'a Volume<T>,
    /// Fixed initial deformation; the optimized residual is composed on top.
    pub init: Option<&'a VectorField<T>>,
}

/// Objective settings that affect the differentiated pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub weights: LossWeights,
    pub time_steps: u32,
    pub velocity_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            time_steps: 7,
            velocity_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Model,
    Scale,
    Upsample,
    Squaring,
    Compose,
    Warp,
    Loss,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Model => "model",
            Stage::Scale => "scale",
            Stage::Upsample => "upsample",
            Stage::Squaring => "squaring",
            Stage::Compose => "compose",
            Stage::Warp => "warp",
            Stage::Loss => "loss",
        }
    }
}

fn finite<T: Real>(stage: Stage, xs: &[T]) -> Result<()> {
    match xs.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numerical(
            stage.name(),
            format!("non-finite value at entry {i}"),
        )),
    }
}

/// Forward results plus the buffers every stage's adjoint needs.
pub struct GradientTape<'a, T> {
    problem: Problem<'a, T>,
    cfg: PipelineConfig,
    stages: Vec<Stage>,
    mlp: Option<MlpTape<T>>,
    coarse: crate::volume::Dims,
    squaring: SquaringTape<T>,
    /// Total displacement applied to the moving image.
    pub displacement: VectorField<T>,
    pub warped: Volume<T>,
}

impl<'a, T: Real> GradientTape<'a, T> {
    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Reverse pass. Returns the loss breakdown and the parameter gradient.
    pub fn backward(&self, model: &VelocityModel<T>) -> Result<(LossBreakdown, Vec<T>)> {
        let full = self.problem.fixed.dims();
        let mut breakdown = LossBreakdown::default();
        let mut cot_img: Vec<T> = Vec::new();
        let mut cot: Vec<T> = Vec::new();
        let mut params = Vec::new();
        for &stage in self.stages.iter().rev() {
            match stage {
                Stage::Loss => {
                    let g = total_loss_grad(
                        &self.warped,
                        self.problem.fixed,
                        &self.displacement,
                        &self.cfg.weights,
                    )?;
                    breakdown = g.breakdown;
                    if !breakdown.is_finite() {
                        return Err(Error::numerical(
                            "loss",
                            format!("non-finite loss {breakdown:?}"),
                        ));
                    }
                    cot_img = g.d_warped;
                    cot = g.d_disp;
                }
                Stage::Warp => {
                    let loc = warp_location_grad(self.problem.moving, &self.displacement, &cot_img);
                    for (c, l) in cot.iter_mut().zip(&loc) {
                        *c += *l;
                    }
                }
                Stage::Compose => {
                    let init = self
                        .problem
                        .init
                        .expect("compose stage implies an initial field");
                    cot = sample_at_points_adjoint(init, &cot);
                }
                Stage::Squaring => cot = exp_ss_backward(&self.squaring, &cot),
                Stage::Upsample => cot = resample_field_adjoint(&cot, full, self.coarse),
                Stage::Scale => {
                    let s = T::lit(self.cfg.velocity_scale);
                    cot.iter_mut().for_each(|c| *c *= s);
                }
                Stage::Model => params = model.backward(self.mlp.as_ref(), &cot),
            }
            let check: &[T] = if stage == Stage::Model { &params } else { &cot };
            finite(stage, check)?;
        }
        Ok((breakdown, params))
    }

    /// Loss value of the recorded forward pass.
    pub fn loss(&self) -> Result<LossBreakdown> {
        total_loss(
            &self.warped,
            self.problem.fixed,
            &self.displacement,
            &self.cfg.weights,
        )
    }
}

/// Runs the forward pipeline, recording each stage.
pub fn forward<'a, T: Real>(
    model: &VelocityModel<T>,
    problem: Problem<'a, T>,
    cfg: &PipelineConfig,
) -> Result<GradientTape<'a, T>> {
    let full = problem.fixed.dims();
    crate::field::check_same_dims("moving vs fixed", problem.moving.dims(), full)?;
    if let Some(init) = problem.init {
        crate::field::check_same_dims("initial displacement", init.dims(), full)?;
    }
    let mut stages = Vec::with_capacity(7);

    let (v_coarse, mlp) = model.forward(problem.coords)?;
    finite(Stage::Model, v_coarse.data())?;
    stages.push(Stage::Model);

    let v_coarse = v_coarse.scaled(T::lit(cfg.velocity_scale));
    stages.push(Stage::Scale);

    let v = if v_coarse.dims() == full {
        v_coarse
    } else {
        stages.push(Stage::Upsample);
        resample_field(&v_coarse, full)
    };

    let squaring = exp_ss_taped(&v, cfg.time_steps)?;
    finite(Stage::Squaring, squaring.result().data())?;
    stages.push(Stage::Squaring);

    let displacement = match problem.init {
        Some(init) => {
            stages.push(Stage::Compose);
            compose_displacements(squaring.result(), init)?
        }
        None => squaring.result().clone(),
    };

    let warped = warp_volume(problem.moving, &displacement)?;
    stages.push(Stage::Warp);
    stages.push(Stage::Loss);

    Ok(GradientTape {
        problem,
        cfg: *cfg,
        stages,
        mlp,
        coarse: problem.coords.dims(),
        squaring,
        displacement,
        warped,
    })
}

/// Loss and exact parameter gradient of the full pipeline. The initial
/// deformation, when present, is a constant.
pub fn forward_backward<T: Real>(
    model: &VelocityModel<T>,
    problem: Problem<'_, T>,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, Vec<T>)> {
    forward(model, problem, cfg)?.backward(model)
}

/// Loss only, without recording adjoint buffers beyond what `forward` keeps.
pub fn evaluate<T: Real>(
    model: &VelocityModel<T>,
    problem: Problem<'_, T>,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, VectorField<T>)> {
    let tape = forward(model, problem, cfg)?;
    let loss = tape.loss()?;
    Ok((loss, tape.displacement))
}
