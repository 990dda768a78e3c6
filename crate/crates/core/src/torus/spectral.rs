//! Fourier-diagonal calculus on the torus.
//!
//! With axis period 2, the discrete modes are `exp(i kappa . x)` with
//! `kappa_a = pi * k_a`, `k_a` a signed integer per axis. All operators below
//! are diagonal in this basis:
//!
//! ```text
//! gradient   :  f_hat -> i kappa f_hat          (odd multiplier)
//! divergence :  v_hat -> i kappa . v_hat        (odd multiplier)
//! laplacian  :  f_hat -> -|kappa|^2 f_hat       (even multiplier)
//! poisson    :  f_hat ->  f_hat / |kappa|^2     (even, zero-mean input)
//! convolve   :  (k * f)_hat = h^N k_hat f_hat   (quadrature-weighted)
//! ```
//!
//! Nyquist convention: odd multipliers treat the unpaired Nyquist wavenumber
//! (`k = n/2` on an even grid) as zero, which keeps real fields real and makes
//! gradient/divergence exact negative adjoints of each other. Even multipliers
//! keep the full `|kappa|` there. The Helmholtz projection uses the *odd*
//! wavenumbers in its dyadic `kappa kappa^T / |kappa|^2` so that its
//! divergence-free part is annihilated by `divergence` exactly and the three
//! parts always reconstruct the input.
//!
//! Convolution kernels are sampled on the displacement lattice
//! (`TorusGrid::offset`), so the circular convolution theorem applies without
//! phase corrections against cell-centered fields.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{ScalarField, TorusGrid, VectorField};
use crate::error::{Error, Result};

/// Forward/inverse FFT plans for one grid (all axes share one length).
struct FftNd {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftNd {
    fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            grid,
            forward: planner.plan_fft_forward(grid.cells_per_axis()),
            inverse: planner.plan_fft_inverse(grid.cells_per_axis()),
        }
    }

    /// In-place N-dimensional transform, axis by axis through a line buffer.
    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let n = self.grid.cells_per_axis();
        let dim = self.grid.dim();
        let plan = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        let mut line = vec![Complex::new(0.0, 0.0); n];
        for axis in 0..dim {
            // Row-major strides: axis a has stride n^(dim-1-a).
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n; // span of one full line set
            let lines = data.len() / n;
            for l in 0..lines {
                // Decompose line number into (outer block, inner offset).
                let outer = l / stride;
                let inner = l % stride;
                let base = outer * block + inner;
                for (t, v) in line.iter_mut().enumerate() {
                    *v = data[base + t * stride];
                }
                plan.process(&mut line);
                for (t, v) in line.iter().enumerate() {
                    data[base + t * stride] = *v;
                }
            }
        }
        if inverse {
            let scale = 1.0 / self.grid.cell_count() as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Unnormalized forward transform of a real field.
pub(crate) fn forward(f: &ScalarField) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = f.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftNd::new(f.grid()).transform(&mut data, false);
    data
}

/// Inverse transform, keeping the real part (imaginary parts are roundoff
/// for spectra with conjugate symmetry).
pub(crate) fn inverse_real(grid: TorusGrid, mut data: Vec<Complex<f64>>) -> Vec<f64> {
    FftNd::new(grid).transform(&mut data, true);
    data.into_iter().map(|c| c.re).collect()
}

/// Signed wavenumber index per axis position: `0..=n/2` then negative.
/// The Nyquist index `n/2` is returned as `n/2` (positive by convention).
fn signed_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Per-axis wavenumbers `kappa = pi k`. `odd = true` zeroes the Nyquist mode
/// (required for first-derivative multipliers to preserve real fields).
fn axis_wavenumbers(n: usize, odd: bool) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if odd && i == n / 2 {
                0.0
            } else {
                std::f64::consts::PI * signed_index(i, n) as f64
            }
        })
        .collect()
}

/// Iterates modes as (linear index, kappa vector); `odd` selects the Nyquist
/// convention as in [`axis_wavenumbers`].
pub(crate) fn for_each_mode(grid: TorusGrid, odd: bool, mut f: impl FnMut(usize, [f64; 3])) {
    let n = grid.cells_per_axis();
    let dim = grid.dim();
    let kappas = axis_wavenumbers(n, odd);
    let mut multi = [0usize; 3];
    for idx in 0..grid.cell_count() {
        let mut rem = idx;
        for a in (0..dim).rev() {
            multi[a] = rem % n;
            rem /= n;
        }
        let mut kappa = [0.0; 3];
        for a in 0..dim {
            kappa[a] = kappas[multi[a]];
        }
        f(idx, kappa);
    }
}

/// Spectral gradient of a scalar field.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let spectrum = forward(f);
    let mut out = VectorField::zero(grid);
    for axis in 0..grid.dim() {
        let mut comp = spectrum.clone();
        for_each_mode(grid, true, |idx, kappa| {
            comp[idx] *= Complex::new(0.0, kappa[axis]);
        });
        let vals = inverse_real(grid, comp);
        out.component_mut(axis).copy_from_slice(&vals);
    }
    out
}

/// Spectral divergence of a vector field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let mut acc = vec![Complex::new(0.0, 0.0); grid.cell_count()];
    for axis in 0..grid.dim() {
        let comp = forward(&v.component_field(axis));
        for_each_mode(grid, true, |idx, kappa| {
            acc[idx] += Complex::new(0.0, kappa[axis]) * comp[idx];
        });
    }
    ScalarField::from_values(grid, inverse_real(grid, acc))
        .expect("divergence of finite field is finite")
}

/// Spectral Laplacian of a scalar field.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let mut spectrum = forward(f);
    for_each_mode(grid, false, |idx, kappa| {
        let k2 = kappa[0] * kappa[0] + kappa[1] * kappa[1] + kappa[2] * kappa[2];
        spectrum[idx] *= -k2;
    });
    ScalarField::from_values(grid, inverse_real(grid, spectrum))
        .expect("laplacian of finite field is finite")
}

/// Projects onto modes with `|k| <= n/3` per axis (the 2/3 rule), removing
/// the aliased tail produced by quadratic products in collocation space.
pub fn dealias_two_thirds(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let cut = grid.cells_per_axis() as i64 / 3;
    let n = grid.cells_per_axis();
    let mut spectrum = forward(f);
    let mut multi = [0usize; 3];
    for (idx, value) in spectrum.iter_mut().enumerate() {
        let mut rem = idx;
        for a in (0..grid.dim()).rev() {
            multi[a] = rem % n;
            rem /= n;
        }
        for a in 0..grid.dim() {
            if signed_index(multi[a], n).abs() > cut {
                *value = Complex::new(0.0, 0.0);
                break;
            }
        }
    }
    ScalarField::from_values(grid, inverse_real(grid, spectrum))
        .expect("filtered finite field stays finite")
}

/// Componentwise [`dealias_two_thirds`].
pub fn dealias_two_thirds_vector(v: &VectorField) -> VectorField {
    let mut parts = Vec::with_capacity(v.dim());
    for axis in 0..v.dim() {
        parts.push(dealias_two_thirds(&v.component_field(axis)));
    }
    VectorField::from_components(parts).expect("components share the grid")
}

/// Relative mean tolerance accepted by [`poisson_solve`].
pub const POISSON_MEAN_TOL: f64 = 1e-10;

/// Solves `-laplacian(u) = f` for the unique zero-mean `u`.
///
/// The input must be mean-free relative to its own scale (tolerance
/// [`POISSON_MEAN_TOL`]); the residual mean is subtracted before inversion so
/// the identity `-laplacian(poisson_solve(f)) = f - mean(f)` holds to
/// roundoff.
pub fn poisson_solve(f: &ScalarField) -> Result<ScalarField> {
    let grid = f.grid();
    let mean = f.mean();
    let scale = f.linf_norm();
    if mean.abs() > POISSON_MEAN_TOL * scale.max(1e-300) {
        return Err(Error::NonZeroMean {
            mean,
            tol: POISSON_MEAN_TOL,
        });
    }
    let mut spectrum = forward(f);
    for_each_mode(grid, false, |idx, kappa| {
        let k2 = kappa[0] * kappa[0] + kappa[1] * kappa[1] + kappa[2] * kappa[2];
        if k2 == 0.0 {
            spectrum[idx] = Complex::new(0.0, 0.0); // enforce zero mean
        } else {
            spectrum[idx] /= k2;
        }
    });
    ScalarField::from_values(grid, inverse_real(grid, spectrum))
}

/// Result of the Helmholtz decomposition `m = v + V + grad(potential)`.
#[derive(Clone, Debug)]
pub struct HelmholtzParts {
    /// Divergence-free, mean-free part `v`.
    pub incompressible: VectorField,
    /// Spatial mean `V` of the input (entries beyond `dim` are zero).
    pub mean_flow: [f64; 3],
    /// Zero-mean potential whose gradient carries the compressible part.
    pub potential: ScalarField,
}

impl HelmholtzParts {
    /// Reassembles `v + V + grad(potential)`.
    pub fn reconstruct(&self) -> VectorField {
        let grid = self.incompressible.grid();
        let mut out = self.incompressible.clone();
        let grad = gradient(&self.potential);
        out.axpy(1.0, &grad).expect("same grid by construction");
        for axis in 0..grid.dim() {
            let shift = self.mean_flow[axis];
            for v in out.component_mut(axis) {
                *v += shift;
            }
        }
        out
    }
}

/// Orthogonal decomposition of a vector field into divergence-free, constant,
/// and gradient parts.
///
/// Modes whose (odd-convention) wavenumber vector vanishes — the zero mode and
/// pure Nyquist content — are assigned to the divergence-free part, which the
/// companion [`divergence`] operator annihilates by the shared convention, so
/// `divergence(incompressible)` vanishes to roundoff for every input and the
/// three parts always sum back to the input.
pub fn helmholtz_decompose(m: &VectorField) -> HelmholtzParts {
    let grid = m.grid();
    let dim = grid.dim();
    let mean_flow = m.mean();

    // Transform mean-free components.
    let mut spectra: Vec<Vec<Complex<f64>>> = (0..dim)
        .map(|axis| {
            let mut f = m.component_field(axis);
            let shift = mean_flow[axis];
            for v in f.values_mut() {
                *v -= shift;
            }
            forward(&f)
        })
        .collect();

    let mut potential_spectrum = vec![Complex::new(0.0, 0.0); grid.cell_count()];
    for_each_mode(grid, true, |idx, kappa| {
        let k2 = kappa[0] * kappa[0] + kappa[1] * kappa[1] + kappa[2] * kappa[2];
        if k2 == 0.0 {
            return; // zero/Nyquist mode: stays in the divergence-free part
        }
        let mut proj = Complex::new(0.0, 0.0);
        for (a, spec) in spectra.iter().enumerate().take(dim) {
            proj += kappa[a] * spec[idx];
        }
        proj /= k2;
        // potential_hat = (kappa . m_hat) / (i k2): gradient part i kappa phi_hat.
        potential_spectrum[idx] = proj * Complex::new(0.0, -1.0);
        for (a, spec) in spectra.iter_mut().enumerate().take(dim) {
            spec[idx] -= kappa[a] * proj;
        }
    });

    let mut incompressible = VectorField::zero(grid);
    for (axis, spec) in spectra.into_iter().enumerate() {
        let vals = inverse_real(grid, spec);
        incompressible.component_mut(axis).copy_from_slice(&vals);
    }
    let potential = ScalarField::from_values(grid, inverse_real(grid, potential_spectrum))
        .expect("potential of finite field is finite");

    HelmholtzParts {
        incompressible,
        mean_flow,
        potential,
    }
}

/// Discrete periodic convolution `(k * f)(x_i) = h^N sum_j k((i-j) h) f(x_j)`.
///
/// `kernel` must hold samples on the displacement lattice
/// ([`TorusGrid::offset`]); `f` is an ordinary cell-centered field. Computed
/// via the circular convolution theorem, which reproduces the double sum to
/// roundoff.
pub fn periodic_convolve(kernel: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
    if kernel.grid() != f.grid() {
        return Err(Error::grid_mismatch(
            "periodic_convolve",
            kernel.grid(),
            f.grid(),
        ));
    }
    let grid = f.grid();
    let k_hat = forward(kernel);
    let mut f_hat = forward(f);
    let weight = grid.cell_volume();
    for (fh, kh) in f_hat.iter_mut().zip(&k_hat) {
        *fh *= kh * weight;
    }
    ScalarField::from_values(grid, inverse_real(grid, f_hat))
}

/// Convolves a scalar kernel with every component of a vector field.
pub fn periodic_convolve_components(kernel: &ScalarField, v: &VectorField) -> Result<VectorField> {
    let mut parts = Vec::with_capacity(v.dim());
    for axis in 0..v.dim() {
        parts.push(periodic_convolve(kernel, &v.component_field(axis))?);
    }
    VectorField::from_components(parts)
}

/// Convolves a vector-valued kernel (e.g. a sampled kernel gradient) with a
/// scalar field, producing one convolution per component.
pub fn periodic_convolve_vector_kernel(
    kernel: &VectorField,
    f: &ScalarField,
) -> Result<VectorField> {
    let mut parts = Vec::with_capacity(kernel.dim());
    for axis in 0..kernel.dim() {
        parts.push(periodic_convolve(&kernel.component_field(axis), f)?);
    }
    VectorField::from_components(parts)
}

/// Squared negative-order Sobolev norm of a zero-mean field:
/// `sum_{k != 0} |c_k|^2 |domain| / |kappa|^2`, which coincides with the
/// quadrature value of `integral(f * poisson_solve(f))`.
pub fn negative_sobolev_norm_sq(f: &ScalarField) -> Result<f64> {
    let grid = f.grid();
    let mean = f.mean();
    let scale = f.linf_norm();
    if mean.abs() > POISSON_MEAN_TOL * scale.max(1e-300) {
        return Err(Error::NonZeroMean {
            mean,
            tol: POISSON_MEAN_TOL,
        });
    }
    let spectrum = forward(f);
    let cells = grid.cell_count() as f64;
    let volume = grid.domain_volume();
    let mut total = 0.0;
    for_each_mode(grid, false, |idx, kappa| {
        let k2 = kappa[0] * kappa[0] + kappa[1] * kappa[1] + kappa[2] * kappa[2];
        if k2 > 0.0 {
            let c = spectrum[idx] / cells; // physical Fourier coefficient
            total += c.norm_sqr() / k2;
        }
    });
    Ok(total * volume)
}

/// Supremum-norm control constant for `kernel *` acting on zero-mean fields:
/// `|(kernel * f)(x)| <= constant * negative_sobolev_norm(f)`.
///
/// Derived by Cauchy-Schwarz in Fourier space from the kernel's weighted
/// spectrum; `kernel` is displacement-lattice sampled as in
/// [`periodic_convolve`].
pub fn convolution_sup_constant(kernel: &ScalarField) -> f64 {
    let grid = kernel.grid();
    let spectrum = forward(kernel);
    let volume = grid.domain_volume();
    let mut total = 0.0;
    for_each_mode(grid, false, |idx, kappa| {
        let k2 = kappa[0] * kappa[0] + kappa[1] * kappa[1] + kappa[2] * kappa[2];
        if k2 > 0.0 {
            // Physical convolution symbol: h^N * DFT sample.
            let symbol = spectrum[idx] * grid.cell_volume();
            total += symbol.norm_sqr() * k2;
        }
    });
    (total / volume).sqrt()
}
