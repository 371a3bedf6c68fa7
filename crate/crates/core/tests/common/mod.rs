//! Shared fixtures and nested-loop reference implementations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use velreg::loss::NCC_EPS;
use velreg::metrics::{SSIM_C1, SSIM_C2, SSIM_WINDOW};
use velreg::{Dims, VectorField64, Volume64};

pub const N: usize = 16;

pub fn random_volume(seed: u64) -> Volume64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume64::from_fn(Dims::cube(N), |_, _, _| rng.random::<f64>())
}

pub fn random_field(seed: u64, amp: f64) -> VectorField64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VectorField64::from_fn(Dims::cube(N), |_, _, _| {
        std::array::from_fn(|_| amp * (2.0 * rng.random::<f64>() - 1.0))
    })
}

/// Inclusive index range of a window of radius `r` clipped to `0..n`.
pub fn span(k: usize, r: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    k.saturating_sub(r)..=(k + r).min(n - 1)
}

pub fn window_points(d: Dims, c: [usize; 3], r: usize) -> Vec<[usize; 3]> {
    let mut pts = Vec::new();
    for z in span(c[2], r, d.z()) {
        for y in span(c[1], r, d.y()) {
            for x in span(c[0], r, d.x()) {
                pts.push([x, y, z]);
            }
        }
    }
    pts
}

pub fn naive_ncc(w: &Volume64, f: &Volume64, window: usize) -> f64 {
    let d = w.dims();
    let r = window / 2;
    let mut acc = 0.0;
    for i in 0..d.len() {
        let pts = window_points(d, d.coords(i), r);
        let n = pts.len() as f64;
        let mw = pts.iter().map(|p| w.get(p[0], p[1], p[2])).sum::<f64>() / n;
        let mf = pts.iter().map(|p| f.get(p[0], p[1], p[2])).sum::<f64>() / n;
        let (mut cross, mut vw, mut vf) = (0.0, 0.0, 0.0);
        for p in &pts {
            let a = w.get(p[0], p[1], p[2]) - mw;
            let b = f.get(p[0], p[1], p[2]) - mf;
            cross += a * b;
            vw += a * a;
            vf += b * b;
        }
        acc += cross * cross / (vw * vf + NCC_EPS);
    }
    -acc / d.len() as f64
}

pub fn naive_ssim(a: &Volume64, b: &Volume64) -> f64 {
    let d = a.dims();
    let mut acc = 0.0;
    for i in 0..d.len() {
        let pts = window_points(d, d.coords(i), SSIM_WINDOW / 2);
        let n = pts.len() as f64;
        let xs: Vec<f64> = pts.iter().map(|p| a.get(p[0], p[1], p[2])).collect();
        let ys: Vec<f64> = pts.iter().map(|p| b.get(p[0], p[1], p[2])).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let cxy = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / n;
        acc += (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    acc / d.len() as f64
}

/// `d u_c / d x_a` with central differences inside and one-sided ones on
/// the faces.
pub fn naive_grad(u: &VectorField64, x: usize, y: usize, z: usize) -> [[f64; 3]; 3] {
    let d = u.dims();
    let mut g = [[0.0; 3]; 3];
    for a in 0..3 {
        let c = [x, y, z];
        let n = d.0[a];
        let (lo, hi, den) = if c[a] == 0 {
            (0, 1, 1.0)
        } else if c[a] == n - 1 {
            (n - 2, n - 1, 1.0)
        } else {
            (c[a] - 1, c[a] + 1, 2.0)
        };
        let mut cm = c;
        let mut cp = c;
        cm[a] = lo;
        cp[a] = hi;
        let um = u.get(cm[0], cm[1], cm[2]);
        let up = u.get(cp[0], cp[1], cp[2]);
        for comp in 0..3 {
            g[comp][a] = (up[comp] - um[comp]) / den;
        }
    }
    g
}

pub fn naive_smooth(u: &VectorField64) -> f64 {
    let d = u.dims();
    let mut acc = 0.0;
    for z in 0..d.z() {
        for y in 0..d.y() {
            for x in 0..d.x() {
                acc += naive_grad(u, x, y, z)
                    .iter()
                    .flatten()
                    .map(|g| g * g)
                    .sum::<f64>();
            }
        }
    }
    acc / d.len() as f64
}

pub fn naive_jdet(u: &VectorField64) -> f64 {
    let d = u.dims();
    let mut acc = 0.0;
    for z in 0..d.z() {
        for y in 0..d.y() {
            for x in 0..d.x() {
                let mut j = naive_grad(u, x, y, z);
                for (a, row) in j.iter_mut().enumerate() {
                    row[a] += 1.0;
                }
                let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                    - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                    + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                acc += (-det).max(0.0);
            }
        }
    }
    acc / d.len() as f64
}
