//! Shared helpers for the oracle suites: reproducible band-limited fields,
//! an independent dense eigenvalue solver, and brute-force double-sum
//! evaluators that re-derive the convolution-based quantities the slow way.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use swarmflow_core::torus::{ScalarField, TorusGrid, VectorField};

/// Random trigonometric polynomial with per-axis mode numbers below
/// `max_mode`, amplitude of order one, and an optional constant shift.
pub fn random_scalar(
    grid: TorusGrid,
    rng: &mut ChaCha8Rng,
    max_mode: i32,
    base: f64,
) -> ScalarField {
    let dim = grid.dim();
    let terms: Vec<(f64, [i32; 3], f64)> = (0..6)
        .map(|_| {
            let amp = rng.gen_range(-0.5..0.5);
            let modes = [
                rng.gen_range(0..=max_mode),
                if dim >= 2 { rng.gen_range(0..=max_mode) } else { 0 },
                if dim >= 3 { rng.gen_range(0..=max_mode) } else { 0 },
            ];
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (amp, modes, phase)
        })
        .collect();
    ScalarField::from_fn(grid, |x| {
        let mut v = base;
        for &(amp, modes, phase) in &terms {
            let arg: f64 = (0..dim)
                .map(|a| std::f64::consts::PI * modes[a] as f64 * x[a])
                .sum();
            v += amp * (arg + phase).cos();
        }
        v
    })
    .expect("finite trigonometric samples")
}

/// Random band-limited vector field, one independent polynomial per axis.
pub fn random_vector(
    grid: TorusGrid,
    rng: &mut ChaCha8Rng,
    max_mode: i32,
    base: f64,
) -> VectorField {
    let mut parts = Vec::with_capacity(grid.dim());
    for _ in 0..grid.dim() {
        parts.push(random_scalar(grid, rng, max_mode, base));
    }
    VectorField::from_components(parts).expect("matching grids")
}

/// Strictly positive random density: `floor + |band-limited|`-style bump.
pub fn random_density(grid: TorusGrid, rng: &mut ChaCha8Rng, max_mode: i32) -> ScalarField {
    let bump = random_scalar(grid, rng, max_mode, 0.0);
    let sup = bump.linf_norm();
    bump.map(|v| 1.0 + 0.4 * v / sup.max(1e-300))
}

/// Largest eigenvalue by cyclic Jacobi rotations on the dense matrix — an
/// oracle fully independent of the closed-form solver under test.
pub fn jacobi_lambda_max(dim: usize, a: &[f64; 6]) -> f64 {
    let mut m = [[0.0f64; 3]; 3];
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            m[i][j] = a[k];
            m[j][i] = a[k];
            k += 1;
        }
    }
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                off = off.max(m[i][j].abs());
            }
        }
        if off < 1e-15 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (m[q][q] - m[p][p]) / m[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..dim {
                    let (mrp, mrq) = (m[r][p], m[r][q]);
                    m[r][p] = c * mrp - s * mrq;
                    m[r][q] = s * mrp + c * mrq;
                }
                for r in 0..dim {
                    let (mpr, mqr) = (m[p][r], m[q][r]);
                    m[p][r] = c * mpr - s * mqr;
                    m[q][r] = s * mpr + c * mqr;
                }
            }
        }
    }
    (0..dim).map(|i| m[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

/// Shortest periodic displacement between two cell centers, axis by axis.
pub fn torus_displacement(grid: TorusGrid, i: usize, j: usize) -> [f64; 3] {
    let xi = grid.center(i);
    let xj = grid.center(j);
    let mut z = [0.0f64; 3];
    for a in 0..grid.dim() {
        let mut d = xi[a] - xj[a];
        while d < -1.0 {
            d += 2.0;
        }
        while d >= 1.0 {
            d -= 2.0;
        }
        z[a] = d;
    }
    z
}

/// Direct `O(cells^2)` evaluation of `(kern * f)(x_i)` from a sampled
/// kernel table, the literal quadrature the fast convolution must match.
pub fn double_sum_convolve(kernel: impl Fn(&[f64; 3]) -> f64, f: &ScalarField) -> Vec<f64> {
    let grid = f.grid();
    let cells = grid.cell_count();
    let fv = f.values();
    let vol = grid.cell_volume();
    let mut out = vec![0.0f64; cells];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &fj) in fv.iter().enumerate() {
            let z = torus_displacement(grid, i, j);
            acc += kernel(&z) * fj;
        }
        *o = acc * vol;
    }
    out
}

/// Empirical distribution function of a 1D sample at `x` (sample sorted).
pub fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    let mut lo = 0usize;
    let mut hi = sorted.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if sorted[mid] <= x {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo as f64 / sorted.len() as f64
}

/// CDF of the semicircle profile of radius `sqrt(2)` centered at the origin.
pub fn semicircle_cdf(x: f64) -> f64 {
    let r2 = 2.0f64;
    if x <= -r2.sqrt() {
        return 0.0;
    }
    if x >= r2.sqrt() {
        return 1.0;
    }
    0.5 + (x * (r2 - x * x).sqrt() + r2 * (x / r2.sqrt()).asin()) / (std::f64::consts::PI * r2)
}

/// Least-squares slope of `log2(err)` against the refinement level — the
/// observed convergence order.
pub fn observed_order(errors: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (k, &e) in errors.iter().enumerate() {
        let x = k as f64;
        let y = e.log2();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    -(n * sxy - sx * sy) / (n * sxx - sx * sx)
}
