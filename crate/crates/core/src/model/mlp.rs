//! Coordinate MLP: `x1 = s * (W0 p + b0)`, then `x_{i+1} = W_i act(x_i) + b_i`
//! for every later layer, where `s = omega0` for sine networks and 1
//! otherwise. The last layer's output is the velocity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, Arch, CoordGrid};
use crate::field::VectorField;
use crate::linalg::{gemm, MatRef, Op};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layout(arch: &Arch) -> Vec<Slot> {
    let mut off = 0;
    arch.widths()
        .windows(2)
        .map(|w| {
            let s = Slot {
                fan_in: w[0],
                fan_out: w[1],
                w: off,
                b: off + w[0] * w[1],
            };
            off = s.b + w[1];
            s
        })
        .collect()
}

/// Network weights, stored flat in layer order: each layer's row-major
/// `fan_out x fan_in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    arch: Arch,
    values: Vec<T>,
    slots: Vec<Slot>,
}

/// Intermediate buffers of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    input: Vec<T>,
    /// Pre-activations of layers 1..depth.
    pre: Vec<Vec<T>>,
    /// Activations fed into layers 1..depth.
    act: Vec<Vec<T>>,
    n: usize,
}

impl<T: Real> MlpTape<T> {
    /// Hidden activations, one `n x hidden` buffer per layer.
    pub fn activations(&self) -> &[Vec<T>] {
        &self.act
    }
}

#[inline(always)]
fn activate<T: Real>(a: Activation, x: T) -> T {
    match a {
        Activation::Sine => x.sin(),
        Activation::Relu | Activation::ReluPe => x.max(T::zero()),
    }
}

#[inline(always)]
fn activate_grad<T: Real>(a: Activation, x: T) -> T {
    match a {
        Activation::Sine => x.cos(),
        Activation::Relu | Activation::ReluPe => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// `[p, sin(2^k pi p), cos(2^k pi p)]` for `k < octaves`, per point.
pub fn positional_encoding<T: Real>(points: &[T], octaves: usize) -> Vec<T> {
    let width = 3 + 6 * octaves;
    let mut out = Vec::with_capacity(points.len() / 3 * width);
    for p in points.chunks_exact(3) {
        out.extend_from_slice(p);
        for k in 0..octaves {
            let f = T::lit((1u64 << k) as f64) * T::PI();
            for &c in p {
                out.push((f * c).sin());
            }
            for &c in p {
                out.push((f * c).cos());
            }
        }
    }
    out
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, bound: f64, n: usize, out: &mut Vec<T>) {
    out.extend((0..n).map(|_| T::lit(rng.random_range(-bound..bound))));
}

/// Sine-network initialization: first layer `U(-1/fan_in, 1/fan_in)`, later
/// layers `U(-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0)`, zero biases.
pub fn init_siren<T: Real>(seed: u64, arch: &Arch) -> MlpParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = layout(arch);
    let mut values = Vec::with_capacity(arch.param_count());
    for (l, s) in slots.iter().enumerate() {
        let bound = if l == 0 {
            1.0 / s.fan_in as f64
        } else {
            (6.0 / s.fan_in as f64).sqrt() / arch.omega0
        };
        uniform(&mut rng, bound, s.fan_in * s.fan_out, &mut values);
        values.extend(std::iter::repeat_n(T::zero(), s.fan_out));
    }
    MlpParams {
        arch: *arch,
        values,
        slots,
    }
}

/// Initialization matched to the activation. ReLU networks use
/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))` for every layer but the last, which
/// keeps the small sine-network output scale.
pub fn init_mlp<T: Real>(seed: u64, arch: &Arch) -> MlpParams<T> {
    match arch.activation {
        Activation::Sine => init_siren(seed, arch),
        Activation::Relu | Activation::ReluPe => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let slots = layout(arch);
            let last = slots.len() - 1;
            let mut values = Vec::with_capacity(arch.param_count());
            for (l, s) in slots.iter().enumerate() {
                let mut bound = (6.0 / s.fan_in as f64).sqrt();
                if l == last {
                    bound /= arch.omega0;
                }
                uniform(&mut rng, bound, s.fan_in * s.fan_out, &mut values);
                values.extend(std::iter::repeat_n(T::zero(), s.fan_out));
            }
            MlpParams {
                arch: *arch,
                values,
                slots,
            }
        }
    }
}

impl<T: Real> MlpParams<T> {
    /// Wraps an existing flat parameter vector.
    pub fn from_values(arch: &Arch, values: Vec<T>) -> crate::Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(crate::Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            arch: *arch,
            values,
            slots: layout(arch),
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let s = self.slots[l];
        (&self.values[s.w..s.b], &self.values[s.b..s.b + s.fan_out])
    }

    fn first_scale(&self) -> T {
        match self.arch.activation {
            Activation::Sine => T::lit(self.arch.omega0),
            _ => T::one(),
        }
    }

    fn input(&self, grid: &CoordGrid<T>) -> Vec<T> {
        match self.arch.activation {
            Activation::ReluPe => positional_encoding(grid.points(), self.arch.pe_octaves),
            _ => grid.points().to_vec(),
        }
    }

    /// `out = x W^T + b` for an `n`-row batch; `w`/`b` come from `slot` in `params`.
    fn affine(params: &[T], s: Slot, x: &[T], n: usize, scale: T) -> Vec<T> {
        let mut out = vec![T::zero(); n * s.fan_out];
        let bias = &params[s.b..s.b + s.fan_out];
        for row in out.chunks_exact_mut(s.fan_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            scale,
            MatRef::new(x, n, s.fan_in),
            Op::N,
            MatRef::new(&params[s.w..s.b], s.fan_out, s.fan_in),
            Op::T,
            scale,
            &mut out,
        );
        out
    }

    pub fn forward(&self, grid: &CoordGrid<T>) -> (VectorField<T>, MlpTape<T>) {
        let n = grid.len();
        let act_fn = self.arch.activation;
        let input = self.input(grid);
        let mut z = Self::affine(&self.values, self.slots[0], &input, n, self.first_scale());
        let mut pre = Vec::with_capacity(self.slots.len() - 1);
        let mut act = Vec::with_capacity(self.slots.len() - 1);
        for &s in &self.slots[1..] {
            let a: Vec<T> = z.iter().map(|&v| activate(act_fn, v)).collect();
            let next = Self::affine(&self.values, s, &a, n, T::one());
            pre.push(z);
            act.push(a);
            z = next;
        }
        let v = VectorField::from_parts_unchecked(grid.dims(), [1.0; 3], z);
        (v, MlpTape { input, pre, act, n })
    }

    /// Gradient of `<cot, output>` with respect to the flat parameters.
    pub fn backward(&self, tape: &MlpTape<T>, cot: &[T]) -> Vec<T> {
        let n = tape.n;
        let act_fn = self.arch.activation;
        let mut grad = vec![T::zero(); self.values.len()];
        let mut g = cot.to_vec();
        for l in (1..self.slots.len()).rev() {
            let s = self.slots[l];
            let a = &tape.act[l - 1];
            let (gw, gb) = grad[s.w..s.b + s.fan_out].split_at_mut(s.b - s.w);
            gemm(
                T::one(),
                MatRef::new(&g, n, s.fan_out),
                Op::T,
                MatRef::new(a, n, s.fan_in),
                Op::N,
                T::zero(),
                gw,
            );
            column_sums(&g, s.fan_out, gb, T::one());
            let mut ga = vec![T::zero(); n * s.fan_in];
            gemm(
                T::one(),
                MatRef::new(&g, n, s.fan_out),
                Op::N,
                MatRef::new(&self.values[s.w..s.b], s.fan_out, s.fan_in),
                Op::N,
                T::zero(),
                &mut ga,
            );
            for (x, &z) in ga.iter_mut().zip(&tape.pre[l - 1]) {
                *x *= activate_grad(act_fn, z);
            }
            g = ga;
        }
        let s = self.slots[0];
        let scale = self.first_scale();
        let (gw, gb) = grad[s.w..s.b + s.fan_out].split_at_mut(s.b - s.w);
        gemm(
            scale,
            MatRef::new(&g, n, s.fan_out),
            Op::T,
            MatRef::new(&tape.input, n, s.fan_in),
            Op::N,
            T::zero(),
            gw,
        );
        column_sums(&g, s.fan_out, gb, scale);
        grad
    }

    /// Forward-mode derivative of the output along a parameter direction.
    pub fn jvp(&self, grid: &CoordGrid<T>, dir: &[T]) -> Vec<T> {
        let n = grid.len();
        let act_fn = self.arch.activation;
        let input = self.input(grid);
        let scale = self.first_scale();
        let s0 = self.slots[0];
        let mut z = Self::affine(&self.values, s0, &input, n, scale);
        let mut dz = Self::affine(dir, s0, &input, n, scale);
        for &s in &self.slots[1..] {
            let a: Vec<T> = z.iter().map(|&v| activate(act_fn, v)).collect();
            let da: Vec<T> = z
                .iter()
                .zip(&dz)
                .map(|(&v, &d)| activate_grad(act_fn, v) * d)
                .collect();
            let next = Self::affine(&self.values, s, &a, n, T::one());
            // d(W a + b) = dW a + W da + db
            let mut dnext = Self::affine(dir, s, &a, n, T::one());
            gemm(
                T::one(),
                MatRef::new(&da, n, s.fan_in),
                Op::N,
                MatRef::new(&self.values[s.w..s.b], s.fan_out, s.fan_in),
                Op::T,
                T::one(),
                &mut dnext,
            );
            z = next;
            dz = dnext;
        }
        dz
    }
}

fn column_sums<T: Real>(m: &[T], cols: usize, out: &mut [T], scale: T) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o *= scale);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Representation;
    use crate::volume::Dims;

    fn arch(depth: usize, hidden: usize, activation: Activation) -> Arch {
        Arch {
            depth,
            hidden,
            activation,
            omega0: 30.0,
            representation: Representation::Mlp,
            pe_octaves: 6,
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = arch(5, 32, Activation::Sine);
        let p: MlpParams<f64> = init_siren(42, &a);
        let q: MlpParams<f64> = init_siren(42, &a);
        assert_eq!(
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let r: MlpParams<f64> = init_siren(43, &a);
        assert_ne!(p.values(), r.values());
    }

    #[test]
    fn first_layer_bound_over_a_million_draws() {
        let a = arch(2, 333_334, Activation::Sine);
        let p: MlpParams<f64> = init_siren(7, &a);
        let (w0, b0) = p.layer(0);
        assert!(w0.len() >= 1_000_000);
        assert!(w0.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(b0.iter().all(|&b| b == 0.0));
        let (w1, _) = p.layer(1);
        let bound = (6.0 / 333_334.0f64).sqrt() / 30.0;
        assert!(w1.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_network_is_zero_velocity() {
        let a = arch(5, 16, Activation::Sine);
        let p = MlpParams::<f64>::from_values(&a, vec![0.0; a.param_count()]).unwrap();
        let (v, _) = p.forward(&CoordGrid::new(Dims::cube(3)));
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_evaluated_single_hidden_unit() {
        let a = arch(2, 1, Activation::Sine);
        // W0 (1x3), b0 (1), W1 (3x1), b1 (3)
        let w0 = [0.2, -0.1, 0.05];
        let b0 = 0.01;
        let w1 = [0.5, -1.5, 2.0];
        let b1 = [0.1, 0.2, -0.3];
        let mut values = w0.to_vec();
        values.push(b0);
        values.extend_from_slice(&w1);
        values.extend_from_slice(&b1);
        let p = MlpParams::<f64>::from_values(&a, values).unwrap();
        let grid = CoordGrid::new(Dims::new(2, 1, 1)); // points (-1,0,0) and (1,0,0)
        let (v, _) = p.forward(&grid);
        for k in 0..2 {
            let pt = grid.point(k);
            let h = (30.0 * (w0[0] * pt[0] + w0[1] * pt[1] + w0[2] * pt[2] + b0)).sin();
            let out = v.at(k);
            for c in 0..3 {
                assert!((out[c] - (w1[c] * h + b1[c])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn sine_hidden_activations_are_bounded() {
        let a = arch(5, 64, Activation::Sine);
        let p: MlpParams<f64> = init_siren(1, &a);
        let (_, tape) = p.forward(&CoordGrid::new(Dims::cube(6)));
        for layer in tape.activations() {
            assert!(layer.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_octave_encoding_is_plain_relu() {
        let relu = arch(4, 16, Activation::Relu);
        let pe = Arch {
            activation: Activation::ReluPe,
            pe_octaves: 0,
            ..relu
        };
        assert_eq!(relu.param_count(), pe.param_count());
        let p: MlpParams<f64> = init_mlp(5, &relu);
        let q = MlpParams::from_values(&pe, p.values().to_vec()).unwrap();
        let grid = CoordGrid::new(Dims::new(3, 4, 5));
        assert_eq!(p.forward(&grid).0, q.forward(&grid).0);
    }

    #[test]
    fn encoding_layout() {
        let e = positional_encoding(&[0.5f64, -0.25, 1.0], 2);
        assert_eq!(e.len(), 15);
        assert_eq!(&e[..3], &[0.5, -0.25, 1.0]);
        assert!((e[3] - (std::f64::consts::PI * 0.5).sin()).abs() < 1e-15);
        assert!((e[6] - (std::f64::consts::PI * 0.5).cos()).abs() < 1e-15);
        assert!((e[9] - (2.0 * std::f64::consts::PI * 0.5).sin()).abs() < 1e-15);
    }

    #[test]
    fn backward_agrees_with_jvp() {
        // <cot, J d> == <J^T cot, d>
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for act in [Activation::Sine, Activation::Relu, Activation::ReluPe] {
            let a = Arch {
                pe_octaves: 2,
                ..arch(4, 20, act)
            };
            let p: MlpParams<f64> = init_mlp(2, &a);
            let grid = CoordGrid::new(Dims::new(3, 4, 3));
            let dir: Vec<f64> = (0..a.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let cot: Vec<f64> = (0..3 * grid.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let jd = p.jvp(&grid, &dir);
            let (_, tape) = p.forward(&grid);
            let jt = p.backward(&tape, &cot);
            let l: f64 = jd.iter().zip(&cot).map(|(a, b)| a * b).sum();
            let r: f64 = jt.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!(
                (l - r).abs() < 1e-10 * l.abs().max(1.0),
                "{act:?}: {l} vs {r}"
            );
        }
    }
}
