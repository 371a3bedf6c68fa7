//! Velocity-field representations: a coordinate MLP (sine, ReLU, or ReLU
//! with positional encoding) and a dense learnable grid.

mod checkpoint;
mod coords;
mod mlp;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointDescriptor};
pub use coords::CoordGrid;
pub use mlp::{init_mlp, init_siren, positional_encoding, MlpParams, MlpTape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::scalar::Real;
use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Relu,
    ReluPe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Mlp,
    Grid,
}

/// Shape of the coordinate network. `depth` counts weight layers: one input
/// affine map, `depth - 2` hidden layers and one output layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Arch {
    pub depth: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Frequency scale on the first layer's output (sine networks only).
    pub omega0: f64,
    pub representation: Representation,
    /// Octaves of the positional encoding (`relu_pe` only).
    pub pe_octaves: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            depth: 5,
            hidden: 512,
            activation: Activation::Sine,
            omega0: 30.0,
            representation: Representation::Mlp,
            pe_octaves: 6,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::config(
                "arch.depth",
                "needs at least 2 weight layers",
            ));
        }
        if self.hidden == 0 {
            return Err(Error::config("arch.hidden", "must be positive"));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::config("arch.omega0", "must be positive and finite"));
        }
        Ok(())
    }

    /// Network input width: 3, or `3 + 6F` with positional encoding.
    pub fn input_dim(&self) -> usize {
        match self.activation {
            Activation::ReluPe => 3 + 6 * self.pe_octaves,
            _ => 3,
        }
    }

    /// Layer widths from input to output (`depth + 1` entries).
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(std::iter::repeat_n(self.hidden, self.depth - 1));
        w.push(3);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Learnable dense velocity values on the coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams<T> {
    pub field: VectorField<T>,
}

/// Any velocity representation, exposing a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityModel<T> {
    Mlp(MlpParams<T>),
    Grid(GridParams<T>),
}

impl<T: Real> VelocityModel<T> {
    /// Fresh model for `arch`: a seeded network, or an all-zero grid.
    pub fn init(arch: &Arch, coarse: Dims, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(match arch.representation {
            Representation::Mlp => VelocityModel::Mlp(init_mlp(seed, arch)),
            Representation::Grid => VelocityModel::Grid(GridParams {
                field: VectorField::zeros(coarse),
            }),
        })
    }

    pub fn params(&self) -> &[T] {
        match self {
            VelocityModel::Mlp(m) => m.values(),
            VelocityModel::Grid(g) => g.field.data(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            VelocityModel::Mlp(m) => m.values_mut(),
            VelocityModel::Grid(g) => g.field.data_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Velocity at every coarse grid point.
    pub fn eval(&self, grid: &CoordGrid<T>) -> Result<VectorField<T>> {
        match self {
            VelocityModel::Mlp(m) => Ok(m.forward(grid).0),
            VelocityModel::Grid(g) => {
                if g.field.dims() != grid.dims() {
                    return Err(Error::Shape(format!(
                        "grid parameters are {} but coordinate grid is {}",
                        g.field.dims(),
                        grid.dims()
                    )));
                }
                Ok(g.field.clone())
            }
        }
    }

    /// Forward pass keeping what [`VelocityModel::backward`] needs.
    pub fn forward(&self, grid: &CoordGrid<T>) -> Result<(VectorField<T>, Option<MlpTape<T>>)> {
        match self {
            VelocityModel::Mlp(m) => {
                let (v, tape) = m.forward(grid);
                Ok((v, Some(tape)))
            }
            VelocityModel::Grid(_) => Ok((self.eval(grid)?, None)),
        }
    }

    /// Parameter gradient given the cotangent of the coarse velocity.
    pub fn backward(&self, tape: Option<&MlpTape<T>>, cot: &[T]) -> Vec<T> {
        match (self, tape) {
            (VelocityModel::Mlp(m), Some(t)) => m.backward(t, cot),
            (VelocityModel::Grid(_), _) => cot.to_vec(),
            (VelocityModel::Mlp(_), None) => panic!("MLP backward needs its forward tape"),
        }
    }

    /// Forward-mode derivative of the coarse velocity along `direction`.
    pub fn jvp(&self, grid: &CoordGrid<T>, direction: &[T]) -> Result<Vec<T>> {
        match self {
            VelocityModel::Mlp(m) => Ok(m.jvp(grid, direction)),
            VelocityModel::Grid(_) => Ok(direction.to_vec()),
        }
    }

    fn with_params(&self, p: Vec<T>) -> Self {
        let mut out = self.clone();
        out.params_mut().copy_from_slice(&p);
        out
    }
}

/// Relative error between the analytic directional derivative of the model
/// output and a central finite difference with step `1e-5`.
pub fn velocity_jvp_check<T: Real>(
    model: &VelocityModel<T>,
    grid: &CoordGrid<T>,
    direction: &[T],
) -> Result<f64> {
    if direction.len() != model.param_count() {
        return Err(Error::Shape(format!(
            "direction has {} entries, model has {} parameters",
            direction.len(),
            model.param_count()
        )));
    }
    let h = T::lit(1e-5);
    let analytic = model.jvp(grid, direction)?;
    let shift = |s: T| -> Vec<T> {
        model
            .params()
            .iter()
            .zip(direction)
            .map(|(&p, &d)| p + s * d)
            .collect()
    };
    let plus = model.with_params(shift(h)).eval(grid)?;
    let minus = model.with_params(shift(-h)).eval(grid)?;
    let fd: Vec<f64> = plus
        .data()
        .iter()
        .zip(minus.data())
        .map(|(a, b)| ((*a - *b) / (h + h)).as_f64())
        .collect();
    let an: Vec<f64> = analytic.iter().map(|v| v.as_f64()).collect();
    Ok(relative_error(&an, &fd))
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch(activation: Activation) -> Arch {
        Arch {
            depth: 4,
            hidden: 24,
            activation,
            pe_octaves: 2,
            ..Arch::default()
        }
    }

    #[test]
    fn param_counts() {
        let a = Arch::default();
        assert_eq!(a.widths(), vec![3, 512, 512, 512, 512, 3]);
        assert_eq!(a.param_count(), 2 * 512 * 3 + 3 * 512 * 512 + 4 * 512 + 3);
        let pe = Arch {
            activation: Activation::ReluPe,
            ..a
        };
        assert_eq!(pe.input_dim(), 39);
    }

    #[test]
    fn zero_grid_gives_zero_velocity() {
        let grid = CoordGrid::<f64>::new(Dims::new(3, 4, 2));
        let arch = Arch {
            representation: Representation::Grid,
            ..Arch::default()
        };
        let m = VelocityModel::init(&arch, grid.dims(), 0).unwrap();
        assert_eq!(m.eval(&grid).unwrap(), VectorField::zeros(grid.dims()));
        assert!(m.eval(&CoordGrid::new(Dims::cube(3))).is_err());
    }

    #[test]
    fn jvp_check_zero_direction() {
        let grid = CoordGrid::<f64>::new(Dims::cube(4));
        let m = VelocityModel::Mlp(init_mlp(1, &small_arch(Activation::Sine)));
        let dir = vec![0.0; m.param_count()];
        assert_eq!(velocity_jvp_check(&m, &grid, &dir).unwrap(), 0.0);
    }

    #[test]
    fn jvp_check_random_directions() {
        let grid = CoordGrid::<f64>::new(Dims::new(4, 3, 5));
        for act in [Activation::Sine, Activation::Relu, Activation::ReluPe] {
            let m = VelocityModel::Mlp(init_mlp(3, &small_arch(act)));
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let dir: Vec<f64> = (0..m.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let err = velocity_jvp_check(&m, &grid, &dir).unwrap();
            assert!(err < 1e-6, "{act:?}: {err}");
        }
    }

    #[test]
    fn grid_jvp_is_direction() {
        let grid = CoordGrid::<f64>::new(Dims::cube(2));
        let m = VelocityModel::<f64>::Grid(GridParams {
            field: VectorField::zeros(Dims::cube(2)),
        });
        let dir: Vec<f64> = (0..24).map(|i| i as f64).collect();
        assert!(velocity_jvp_check(&m, &grid, &dir).unwrap() < 1e-9);
    }
}
