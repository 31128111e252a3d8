//! Quadrature rules and direction sets on spheres.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::task_rng;

/// Gauss-Legendre nodes and weights on `[a, b]` (Golub-Welsch).
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = beta;
        j[(k, k - 1)] = beta;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    pairs.into_iter().map(|(x, w)| (mid + half * x, half * w)).unzip()
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Surface area of the unit sphere `S^{n-1}` in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Quasi-uniform unit vectors in `R^n`.
///
/// `n = 1` gives `+1, -1` regardless of `count`; `n = 2` equally spaced
/// angles; `n = 3` a Fibonacci lattice; higher `n` normalized Gaussian
/// vectors from a fixed seed.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = task_rng(0xd1ec, n as u64);
            (0..count)
                .map(|_| loop {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        break v.into_iter().map(|x| x / norm).collect();
                    }
                })
                .collect()
        }
    }
}

/// Default direction count used for polar quadrature in dimension `n`.
pub fn default_direction_count(n: usize) -> usize {
    match n {
        1 => 2,
        2 => 32,
        3 => 64,
        _ => 128,
    }
}

/// Nodes and weights for `int_{B(eta)} f(u) du` in `R^n` by polar quadrature:
/// `|S^{n-1}| * mean_w int_0^eta f(r w) r^{n-1} dr` with Gauss-Legendre in `r`.
pub fn ball_nodes(n: usize, eta: f64, directions: &[Vec<f64>], radial: usize) -> Vec<(Vec<f64>, f64)> {
    let (r, w) = gauss_legendre(radial, 0.0, eta);
    let c = sphere_area(n) / directions.len() as f64;
    let mut out = Vec::with_capacity(directions.len() * radial);
    for d in directions {
        for (rk, wk) in r.iter().zip(&w) {
            out.push((d.iter().map(|x| rk * x).collect(), c * wk * rk.powi(n as i32 - 1)));
        }
    }
    out
}

pub fn ball_integral<F: FnMut(&[f64]) -> f64>(n: usize, eta: f64, directions: &[Vec<f64>], radial: usize, mut f: F) -> f64 {
    ball_nodes(n, eta, directions, radial).iter().map(|(u, w)| w * f(u)).sum()
}
