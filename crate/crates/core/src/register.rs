//! Per-pair optimization: configuration, coarse grid, the Adam loop and the
//! trace it leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{check_same_dims, VectorField};
use crate::loss::{LossBreakdown, LossWeights};
use crate::model::{Arch, CoordGrid, VelocityModel};
use crate::optim::{adam_step, evaluate, forward_backward, AdamState, PipelineConfig, Problem};
use crate::scalar::Real;
use crate::volume::{Dims, Volume};

pub const STANDALONE_VELOCITY_SCALE: f64 = 1.0;
pub const CASCADED_VELOCITY_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda_jdet: f64,
    pub lambda_smooth: f64,
    pub ncc_window: usize,
    pub time_steps: u32,
    pub downsample_factor: usize,
    /// Multiplier on the model output. Unset means 1.0 for a standalone run
    /// and 0.1 when an initial displacement is given.
    pub velocity_scale: Option<f64>,
    pub smooth_on_phi: bool,
    pub seed: u64,
    /// Report progress every this many iterations; 0 disables it.
    pub log_every: usize,
    pub arch: Arch,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 1e-4,
            lambda_jdet: 100.0,
            lambda_smooth: 0.1,
            ncc_window: 9,
            time_steps: 7,
            downsample_factor: 3,
            velocity_scale: None,
            smooth_on_phi: false,
            seed: 0,
            log_every: 0,
            arch: Arch::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(
                "lr",
                format!("must be finite and positive, got {}", self.lr),
            ));
        }
        self.weights().validate()?;
        if self.time_steps == 0 || self.time_steps > 30 {
            return Err(Error::config(
                "time_steps",
                format!("must be in 1..=30, got {}", self.time_steps),
            ));
        }
        if self.downsample_factor == 0 {
            return Err(Error::config("downsample_factor", "must be at least 1"));
        }
        if let Some(s) = self.velocity_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config(
                    "velocity_scale",
                    format!("must be finite and positive, got {s}"),
                ));
            }
        }
        self.arch.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_jdet: self.lambda_jdet,
            lambda_smooth: self.lambda_smooth,
            ncc_window: self.ncc_window,
            smooth_on_phi: self.smooth_on_phi,
        }
    }

    pub fn effective_velocity_scale(&self, cascaded: bool) -> f64 {
        self.velocity_scale.unwrap_or(if cascaded {
            CASCADED_VELOCITY_SCALE
        } else {
            STANDALONE_VELOCITY_SCALE
        })
    }

    /// Copy with every mode-dependent default filled in.
    pub fn resolved(&self, cascaded: bool) -> Self {
        Self {
            velocity_scale: Some(self.effective_velocity_scale(cascaded)),
            ..self.clone()
        }
    }

    pub fn pipeline(&self, cascaded: bool) -> PipelineConfig {
        PipelineConfig {
            weights: self.weights(),
            time_steps: self.time_steps,
            velocity_scale: self.effective_velocity_scale(cascaded),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let cfg: Self = match table.clone().try_into() {
            Ok(cfg) => cfg,
            Err(e) => {
                return Err(Error::config(
                    offending_key(&table),
                    e.message().to_string(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Finds the first top-level (or `arch.`) key that fails to deserialize on
/// its own, so errors can name it.
fn offending_key(table: &toml::Table) -> String {
    for (key, value) in table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        if toml::Value::Table(single)
            .try_into::<RegistrationConfig>()
            .is_err()
        {
            if let (true, toml::Value::Table(inner)) = (key == "arch", value) {
                for (k, v) in inner {
                    let mut one = toml::Table::new();
                    one.insert(k.clone(), v.clone());
                    if toml::Value::Table(one).try_into::<Arch>().is_err() {
                        return format!("arch.{k}");
                    }
                }
            }
            return key.clone();
        }
    }
    "<file>".into()
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RegistrationConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RegistrationConfig::from_toml_str(&text)
}

/// Coarse lattice size: `ceil(D / factor)` per axis, at least 2.
pub fn coarse_dims(dims: Dims, factor: usize) -> Result<Dims> {
    if factor == 0 {
        return Err(Error::config("downsample_factor", "must be at least 1"));
    }
    if let Some(a) = (0..3).find(|&a| dims.0[a] < 2) {
        return Err(Error::config(
            "downsample_factor",
            format!("axis {a} of {dims} is too short for a coarse grid of at least 2 points"),
        ));
    }
    Ok(Dims(dims.0.map(|d| d.div_ceil(factor).max(2))))
}

pub fn make_coarse_grid<T: Real>(dims: Dims, factor: usize) -> Result<(CoordGrid<T>, Dims)> {
    let coarse = coarse_dims(dims, factor)?;
    Ok((CoordGrid::new(coarse), coarse))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: LossBreakdown,
    /// Seconds since the run started, taken after this iteration's gradient.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult<T> {
    /// Total displacement on the full grid (composed with the initial
    /// field in cascaded mode).
    pub displacement: VectorField<T>,
    /// Loss before each update, one row per iteration.
    pub trace: Vec<TraceRow>,
    /// Loss of the final parameters.
    pub final_loss: LossBreakdown,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub model: VelocityModel<T>,
    pub coarse_dims: Dims,
}

impl<T> RegistrationResult<T> {
    /// Lowest total seen up to and including iteration `iter`.
    pub fn best_total_through(&self, iter: usize) -> f64 {
        self.trace
            .iter()
            .take(iter + 1)
            .map(|r| r.loss.total)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,sim,jdet,smooth,total,seconds\n");
    for r in trace {
        let l = &r.loss;
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iter, l.sim, l.jdet, l.smooth, l.total, r.seconds
        )
        .unwrap();
    }
    s
}

pub fn write_trace(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace_csv(trace)).map_err(|e| Error::io(path, e))
}

pub fn register_pair<T: Real>(
    moving: &Volume<T>,
    fixed: &Volume<T>,
    cfg: &RegistrationConfig,
    init: Option<&VectorField<T>>,
) -> Result<RegistrationResult<T>> {
    register_pair_with(moving, fixed, cfg, init, |_| {})
}

/// [`register_pair`] with a callback receiving every trace row.
pub fn register_pair_with<T: Real>(
    moving: &Volume<T>,
    fixed: &Volume<T>,
    cfg: &RegistrationConfig,
    init: Option<&VectorField<T>>,
    mut progress: impl FnMut(&TraceRow),
) -> Result<RegistrationResult<T>> {
    cfg.validate()?;
    let dims = fixed.dims();
    check_same_dims("moving vs fixed", moving.dims(), dims)?;
    if let Some(u0) = init {
        check_same_dims("initial displacement vs fixed", u0.dims(), dims)?;
        if !u0.is_finite() {
            return Err(Error::Validation(
                "initial displacement contains non-finite values".into(),
            ));
        }
    }
    let start = Instant::now();
    let (coords, coarse) = make_coarse_grid::<T>(dims, cfg.downsample_factor)?;
    let mut model = VelocityModel::init(&cfg.arch, coarse, cfg.seed)?;
    let pipeline = cfg.pipeline(init.is_some());
    let problem = Problem {
        coords: &coords,
        moving,
        fixed,
        init,
    };
    let mut adam = AdamState::new(model.param_count(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (loss, grad) =
            forward_backward(&model, problem, &pipeline).map_err(|e| e.at_iteration(iter))?;
        let row = TraceRow {
            iter,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&row);
        trace.push(row);
        adam_step(&mut adam, model.params_mut(), &grad).map_err(|e| e.at_iteration(iter))?;
    }
    let (final_loss, displacement) =
        evaluate(&model, problem, &pipeline).map_err(|e| e.at_iteration(cfg.iterations))?;
    Ok(RegistrationResult {
        displacement,
        trace,
        final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
        iterations: cfg.iterations,
        model,
        coarse_dims: coarse,
    })
}
