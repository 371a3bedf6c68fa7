//! Exponential map of a stationary velocity field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    compose_backward, compose_displacements, for_each_voxel, Trilinear, VectorField,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ScalingSquaring,
    EulerOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegrationConfig {
    pub time_steps: u32,
    pub method: Method,
    pub euler_steps: usize,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            time_steps: 7,
            method: Method::ScalingSquaring,
            euler_steps: 256,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::config("time_steps", "must be at least 1"));
        }
        if self.time_steps > 30 {
            return Err(Error::config("time_steps", "must be at most 30"));
        }
        if self.euler_steps == 0 {
            return Err(Error::config("euler_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Integrates with whichever method is configured.
    pub fn integrate<T: Real>(&self, v: &VectorField<T>) -> Result<VectorField<T>> {
        self.validate()?;
        match self.method {
            Method::ScalingSquaring => exp_ss(v, self.time_steps),
            Method::EulerOracle => Ok(exp_euler(v, self.euler_steps)),
        }
    }
}

/// Scaling and squaring: start from `v / 2^T` and self-compose `T` times.
pub fn exp_ss<T: Real>(v: &VectorField<T>, time_steps: u32) -> Result<VectorField<T>> {
    let mut u = v.scaled(T::one() / T::lit((1u64 << time_steps) as f64));
    for _ in 0..time_steps {
        u = compose_displacements(&u, &u)?;
    }
    Ok(u)
}

/// Every intermediate displacement of [`exp_ss`], `u_0 = v / 2^T` through
/// `u_T`, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct SquaringTape<T> {
    pub states: Vec<VectorField<T>>,
}

impl<T: Real> SquaringTape<T> {
    pub fn result(&self) -> &VectorField<T> {
        self.states.last().expect("at least one state")
    }
}

pub fn exp_ss_taped<T: Real>(v: &VectorField<T>, time_steps: u32) -> Result<SquaringTape<T>> {
    let mut states = Vec::with_capacity(time_steps as usize + 1);
    states.push(v.scaled(T::one() / T::lit((1u64 << time_steps) as f64)));
    for _ in 0..time_steps {
        let u = states.last().unwrap();
        let next = compose_displacements(u, u)?;
        states.push(next);
    }
    Ok(SquaringTape { states })
}

/// Cotangent of the velocity given the cotangent of the final displacement.
/// Walks the squaring steps in reverse; each step's adjoint is the sum of the
/// value and location adjoints of one self-composition.
pub fn exp_ss_backward<T: Real>(tape: &SquaringTape<T>, cot: &[T]) -> Vec<T> {
    let steps = tape.states.len() - 1;
    let mut g = cot.to_vec();
    for t in (0..steps).rev() {
        let u = &tape.states[t];
        let (g_outer, mut g_inner) = compose_backward(u, u, &g);
        for (a, b) in g_inner.iter_mut().zip(&g_outer) {
            *a += *b;
        }
        g = g_inner;
    }
    let s = T::one() / T::lit((1u64 << steps) as f64);
    g.iter_mut().for_each(|x| *x *= s);
    g
}

/// Forward Euler on `d phi / dt = v(phi)`: `u <- u + v(p + u) / steps`.
pub fn exp_euler<T: Real>(v: &VectorField<T>, steps: usize) -> VectorField<T> {
    let dims = v.dims();
    let dt = T::one() / T::from_usize_lossy(steps);
    let mut u = VectorField::zeros(dims).with_spacing(v.spacing()).unwrap();
    let mut next = vec![T::zero(); 3 * dims.len()];
    for _ in 0..steps {
        for_each_voxel(dims, &mut next, 3, |i, o| {
            let c = dims.coords(i);
            let cur = u.at(i);
            let q = std::array::from_fn(|a| T::from_usize_lossy(c[a]) + cur[a]);
            let s = Trilinear::new(dims, q).vector(v.data());
            for a in 0..3 {
                o[a] = cur[a] + dt * s[a];
            }
        });
        u.data_mut().copy_from_slice(&next);
    }
    u
}
