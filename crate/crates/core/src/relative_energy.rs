//! Weak-strong stability machinery: the relative energy functional that
//! measures the distance between a finite-volume trajectory and a smooth
//! reference flow, the seven-term remainder driving its growth, the
//! integrated inequality residual with a discretization-aware verdict, the
//! essential/residual decomposition with its coercivity constant, the
//! potential-coupled variant built on the negative-order Sobolev norm, and
//! Gronwall-constant fitting for measured energy series.
//!
//! Conventions shared with the rest of the crate: fields live on cell centers
//! of `[-1,1)^N`, kernels act through displacement-lattice convolutions, and
//! every quadrature is a compensated cell sum times `h^N`.

use rayon::prelude::*;

use crate::constitutive::Constitutive;
use crate::error::{Error, Result};
use crate::hydro::{KernelTables, Trajectory};
use crate::torus::spectral::{
    divergence, gradient, periodic_convolve, periodic_convolve_components,
    periodic_convolve_vector_kernel, poisson_solve,
};
pub use crate::torus::spectral::{convolution_sup_constant, negative_sobolev_norm_sq};
use crate::torus::{compensated_sum, ScalarField, TorusGrid, VectorField};

/// Calibration constant of the stability-residual tolerance
/// `tol = STABILITY_TOL_COEFF * (h + dt) * elapsed`; sized for first-order
/// flux schemes on smooth data and frozen.
pub const STABILITY_TOL_COEFF: f64 = 2.0;

/// Discretization-aware acceptance threshold for the integrated stability
/// inequality.
pub fn stability_tolerance(h: f64, dt: f64, elapsed: f64) -> f64 {
    STABILITY_TOL_COEFF * (h + dt) * elapsed
}

// ---------------------------------------------------------------------------
// Smooth reference flows
// ---------------------------------------------------------------------------

/// One time sample of a smooth reference flow on the comparison grid, with
/// Lipschitz proxies recorded from the native (finer) resolution.
#[derive(Debug, Clone)]
pub struct StrongSample {
    pub t: f64,
    /// Reference density, strictly positive.
    pub r: ScalarField,
    /// Reference velocity.
    pub u: VectorField,
    /// Sup-norm of all first velocity derivatives at this time.
    pub grad_u_linf: f64,
    /// Sup-norm of the density gradient at this time.
    pub grad_r_linf: f64,
}

/// A sampled smooth reference flow with its density bounds. `t_strong` marks
/// the horizon where the gradient indicator exceeded its limit; the samples
/// stop there and comparisons must not extend past it.
#[derive(Debug, Clone)]
pub struct StrongSolution {
    pub samples: Vec<StrongSample>,
    /// Infimum of the density over all recorded times (positive).
    pub rho_low: f64,
    /// Supremum of the density over all recorded times.
    pub rho_high: f64,
    /// Earliest time at which the smoothness indicator failed, if any.
    pub t_strong: Option<f64>,
}

impl StrongSolution {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Grid the samples live on.
    pub fn grid(&self) -> Option<TorusGrid> {
        self.samples.first().map(|s| s.r.grid())
    }

    /// Spacing of the first output interval (0 for fewer than two samples).
    pub fn output_dt(&self) -> f64 {
        if self.samples.len() >= 2 {
            self.samples[1].t - self.samples[0].t
        } else {
            0.0
        }
    }

    /// Checks the structural invariants: positive ordered bounds, strictly
    /// increasing times, densities at or above the recorded infimum, finite
    /// Lipschitz proxies, and one common grid.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("reference flow holds no samples".into()));
        }
        if !(self.rho_low > 0.0 && self.rho_high >= self.rho_low) {
            return Err(Error::InvalidInput(format!(
                "reference density bounds must satisfy 0 < low <= high, got [{}, {}]",
                self.rho_low, self.rho_high
            )));
        }
        let grid = self.samples[0].r.grid();
        let slack = 1e-12 * self.rho_high.max(1.0);
        for (k, s) in self.samples.iter().enumerate() {
            grid.check_same(s.r.grid(), "StrongSolution sample density")?;
            grid.check_same(s.u.grid(), "StrongSolution sample velocity")?;
            if k > 0 && s.t <= self.samples[k - 1].t {
                return Err(Error::InvalidInput(format!(
                    "reference sample times must increase strictly (sample {k})"
                )));
            }
            if s.r.min() < self.rho_low - slack {
                return Err(Error::InvalidInput(format!(
                    "reference density {:.6e} below its recorded infimum {:.6e} at sample {k}",
                    s.r.min(),
                    self.rho_low
                )));
            }
            if !(s.grad_u_linf.is_finite() && s.grad_r_linf.is_finite()) {
                return Err(Error::NonFinite("StrongSolution Lipschitz proxy"));
            }
        }
        Ok(())
    }

    /// Time derivatives `(d r / dt, d U / dt)` at sample `k`, from the
    /// quadratic interpolant through the three nearest samples (centered in
    /// the interior, one-sided at the ends; exact for series quadratic in
    /// time). Two samples degrade to the single difference quotient.
    pub fn time_derivatives(&self, k: usize) -> Result<(ScalarField, VectorField)> {
        let n = self.samples.len();
        if n < 2 {
            return Err(Error::InvalidInput(
                "time derivatives need at least two reference samples".into(),
            ));
        }
        if k >= n {
            return Err(Error::InvalidInput(format!(
                "sample index {k} out of range 0..{n}"
            )));
        }
        if n == 2 {
            let inv_dt = 1.0 / (self.samples[1].t - self.samples[0].t);
            let mut dr = self.samples[1].r.clone();
            dr.axpy(-1.0, &self.samples[0].r)?;
            dr.scale(inv_dt);
            let mut du = self.samples[1].u.clone();
            du.axpy(-1.0, &self.samples[0].u)?;
            du.scale(inv_dt);
            return Ok((dr, du));
        }
        let base = if k == 0 {
            0
        } else if k == n - 1 {
            n - 3
        } else {
            k - 1
        };
        let trio = [&self.samples[base], &self.samples[base + 1], &self.samples[base + 2]];
        let w = lagrange_derivative_weights(
            [trio[0].t, trio[1].t, trio[2].t],
            self.samples[k].t,
        );
        let mut dr = trio[0].r.clone();
        dr.scale(w[0]);
        dr.axpy(w[1], &trio[1].r)?;
        dr.axpy(w[2], &trio[2].r)?;
        let mut du = trio[0].u.clone();
        du.scale(w[0]);
        du.axpy(w[1], &trio[1].u)?;
        du.axpy(w[2], &trio[2].u)?;
        Ok((dr, du))
    }
}

/// Derivative of the quadratic Lagrange interpolant through nodes `t`,
/// evaluated at `at`.
fn lagrange_derivative_weights(t: [f64; 3], at: f64) -> [f64; 3] {
    let [t0, t1, t2] = t;
    [
        (2.0 * at - t1 - t2) / ((t0 - t1) * (t0 - t2)),
        (2.0 * at - t0 - t2) / ((t1 - t0) * (t1 - t2)),
        (2.0 * at - t0 - t1) / ((t2 - t0) * (t2 - t1)),
    ]
}

// ---------------------------------------------------------------------------
// Relative energy and its remainder
// ---------------------------------------------------------------------------

/// Distance functional between a state `(rho, u)` and a reference `(r, U)`:
/// `\int 1/2 rho |u - U|^2 + P(rho) - P'(r)(rho - r) - P(r)`.
///
/// Exactly zero when the pair coincides; non-negative for convex pressure
/// potentials. The reference density must be strictly positive.
pub fn relative_energy(
    rho: &ScalarField,
    u: &VectorField,
    r: &ScalarField,
    big_u: &VectorField,
    constitutive: &Constitutive,
) -> Result<f64> {
    let grid = rho.grid();
    grid.check_same(u.grid(), "relative_energy weak velocity")?;
    grid.check_same(r.grid(), "relative_energy reference density")?;
    grid.check_same(big_u.grid(), "relative_energy reference velocity")?;
    if r.min() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "reference density must stay strictly positive, touched {:.6e}",
            r.min()
        )));
    }
    let dim = grid.dim();
    let cells = grid.cell_count();
    let rv = rho.values();
    let sr = r.values();
    let with_pressure = !constitutive.pressure.is_zero();

    let mut densities = Vec::with_capacity(cells);
    for i in 0..cells {
        let mut wsq = 0.0;
        for b in 0..dim {
            let d = u.component(b)[i] - big_u.component(b)[i];
            wsq += d * d;
        }
        let mut cell = 0.5 * rv[i] * wsq;
        if with_pressure {
            cell += constitutive.pressure.bregman_gap(rv[i], sr[i])?;
        }
        densities.push(cell);
    }
    Ok(grid.cell_volume() * compensated_sum(densities.into_iter()))
}

/// The seven summands of the relative-energy remainder, reported separately.
/// Writing `w = u - U` and `g = rho - r`:
///
/// 1. `advection           = -\int rho (d_t U + u . grad U) . w`
/// 2. `attraction_reference = -\int rho (grad K * r) . w`
/// 3. `attraction_gap      = +\int g (grad K * g) . U`
/// 4. `pressure_block      = +\int (r - rho) d_t P'(r)
///                             + grad P'(r) . (r U - rho u)
///                             - div U (p(rho) - p(r))`
/// 5. `friction            = +\int (1 - H(|u|^2)) rho u . w`
/// 6. `alignment_gap       = +\iint psi(x-y) rho(x) w(x) . (U(y)-U(x)) g(y)`
/// 7. `alignment_reference = +\iint psi(x-y) rho(x) r(y) (U(y)-U(x)) . w(x)`
#[derive(Debug, Clone, Copy, Default)]
pub struct RemainderBreakdown {
    pub advection: f64,
    pub attraction_reference: f64,
    pub attraction_gap: f64,
    pub pressure_block: f64,
    pub friction: f64,
    pub alignment_gap: f64,
    pub alignment_reference: f64,
}

impl RemainderBreakdown {
    /// Sum of all seven terms.
    pub fn total(&self) -> f64 {
        self.advection
            + self.attraction_reference
            + self.attraction_gap
            + self.pressure_block
            + self.friction
            + self.alignment_gap
            + self.alignment_reference
    }
}

/// Evaluates the remainder driving the relative-energy growth at one time.
///
/// `dt_r` and `dt_big_u` are the time derivatives of the reference pair;
/// trajectory-based callers obtain them from
/// [`StrongSolution::time_derivatives`], analytic callers pass exact fields.
/// The double integrals of the alignment terms are expanded into
/// displacement-lattice convolutions, which reproduces them to roundoff.
#[allow(clippy::too_many_arguments)]
pub fn remainder(
    rho: &ScalarField,
    u: &VectorField,
    r: &ScalarField,
    big_u: &VectorField,
    dt_r: &ScalarField,
    dt_big_u: &VectorField,
    constitutive: &Constitutive,
    tables: &KernelTables,
) -> Result<RemainderBreakdown> {
    let grid = rho.grid();
    grid.check_same(u.grid(), "remainder weak velocity")?;
    grid.check_same(r.grid(), "remainder reference density")?;
    grid.check_same(big_u.grid(), "remainder reference velocity")?;
    grid.check_same(dt_r.grid(), "remainder reference density derivative")?;
    grid.check_same(dt_big_u.grid(), "remainder reference velocity derivative")?;
    if r.min() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "reference density must stay strictly positive, touched {:.6e}",
            r.min()
        )));
    }

    let dim = grid.dim();
    let cells = grid.cell_count();
    let volume = grid.cell_volume();
    let rv = rho.values();
    let sr = r.values();

    // w = u - U, reused by five of the seven terms.
    let mut w = u.clone();
    w.axpy(-1.0, big_u)?;
    // g = rho - r, reused by the gap terms.
    let mut g = rho.clone();
    g.axpy(-1.0, r)?;

    // 1. Advection: -int rho (d_t U + u . grad U) . w.
    let advection = {
        let mut material = dt_big_u.clone();
        for b in 0..dim {
            let grad_ub = gradient(&big_u.component_field(b));
            let dest = material.component_mut(b);
            for a in 0..dim {
                let ua = u.component(a);
                let gcol = grad_ub.component(a);
                for i in 0..cells {
                    dest[i] += ua[i] * gcol[i];
                }
            }
        }
        -volume
            * compensated_sum((0..cells).map(|i| {
                let mut s = 0.0;
                for b in 0..dim {
                    s += material.component(b)[i] * w.component(b)[i];
                }
                rv[i] * s
            }))
    };

    // 2 & 3. Attraction terms, sharing the sampled kernel gradient.
    let (attraction_reference, attraction_gap) = match &tables.attraction_gradient {
        None => (0.0, 0.0),
        Some(grad_k) => {
            let conv_r = periodic_convolve_vector_kernel(grad_k, r)?;
            let conv_g = periodic_convolve_vector_kernel(grad_k, &g)?;
            let gv = g.values();
            let reference = -volume
                * compensated_sum((0..cells).map(|i| {
                    let mut s = 0.0;
                    for b in 0..dim {
                        s += conv_r.component(b)[i] * w.component(b)[i];
                    }
                    rv[i] * s
                }));
            let gap = volume
                * compensated_sum((0..cells).map(|i| {
                    let mut s = 0.0;
                    for b in 0..dim {
                        s += conv_g.component(b)[i] * big_u.component(b)[i];
                    }
                    gv[i] * s
                }));
            (reference, gap)
        }
    };

    // 4. Pressure block.
    let pressure_block = if constitutive.pressure.is_zero() {
        0.0
    } else {
        let law = &constitutive.pressure;
        let enthalpy = ScalarField::from_values(
            grid,
            sr.iter().map(|&x| law.potential_derivative(x)).collect(),
        )?;
        let grad_enthalpy = gradient(&enthalpy);
        let div_u = divergence(big_u);
        let dtr = dt_r.values();
        let dv = div_u.values();
        volume
            * compensated_sum((0..cells).map(|i| {
                let mut transport = 0.0;
                for b in 0..dim {
                    transport += grad_enthalpy.component(b)[i]
                        * (sr[i] * big_u.component(b)[i] - rv[i] * u.component(b)[i]);
                }
                (sr[i] - rv[i]) * law.potential_second_derivative(sr[i]) * dtr[i]
                    + transport
                    - dv[i] * (law.pressure(rv[i].max(0.0)) - law.pressure(sr[i]))
            }))
    };

    // 5. Friction: +int (1 - H(|u|^2)) rho u . w.
    let friction = volume
        * compensated_sum((0..cells).map(|i| {
            let mut speed_sq = 0.0;
            let mut uw = 0.0;
            for b in 0..dim {
                let ub = u.component(b)[i];
                speed_sq += ub * ub;
                uw += ub * w.component(b)[i];
            }
            (1.0 - constitutive.friction.evaluate(speed_sq)) * rv[i] * uw
        }));

    // 6 & 7. Alignment terms, expanded into convolutions:
    //   iint psi rho(x) w(x).(U(y)-U(x)) s(y)
    //     = int rho w . (psi * (s U)) - int rho (w . U) (psi * s)
    // with s = g for the gap term and s = r for the reference term.
    let (alignment_gap, alignment_reference) = match &tables.communication {
        None => (0.0, 0.0),
        Some(psi) => {
            let weighted = |scale: &[f64]| -> Result<VectorField> {
                let mut out = VectorField::zero(grid);
                for b in 0..dim {
                    let src = big_u.component(b);
                    let dest = out.component_mut(b);
                    for i in 0..cells {
                        dest[i] = scale[i] * src[i];
                    }
                }
                Ok(out)
            };
            let pair_term = |conv_vec: &VectorField, conv_sc: &ScalarField| -> f64 {
                let cv = conv_sc.values();
                volume
                    * compensated_sum((0..cells).map(|i| {
                        let mut vec_part = 0.0;
                        let mut wu = 0.0;
                        for b in 0..dim {
                            vec_part += w.component(b)[i] * conv_vec.component(b)[i];
                            wu += w.component(b)[i] * big_u.component(b)[i];
                        }
                        rv[i] * (vec_part - wu * cv[i])
                    }))
            };
            let gu = weighted(g.values())?;
            let conv_gu = periodic_convolve_components(psi, &gu)?;
            let conv_g = periodic_convolve(psi, &g)?;
            let ru = weighted(sr)?;
            let conv_ru = periodic_convolve_components(psi, &ru)?;
            let conv_r = periodic_convolve(psi, r)?;
            (pair_term(&conv_gu, &conv_g), pair_term(&conv_ru, &conv_r))
        }
    };

    Ok(RemainderBreakdown {
        advection,
        attraction_reference,
        attraction_gap,
        pressure_block,
        friction,
        alignment_gap,
        alignment_reference,
    })
}

/// Quadratic interaction bracket `1/2 \int (rho - r)(K * (rho - r))`.
pub fn interaction_bracket(
    rho: &ScalarField,
    r: &ScalarField,
    tables: &KernelTables,
) -> Result<f64> {
    match &tables.attraction_value {
        None => Ok(0.0),
        Some(kernel) => {
            let mut g = rho.clone();
            g.axpy(-1.0, r)?;
            let conv = periodic_convolve(kernel, &g)?;
            let gv = g.values();
            let cv = conv.values();
            Ok(0.5
                * rho.grid().cell_volume()
                * compensated_sum((0..gv.len()).map(|i| gv[i] * cv[i])))
        }
    }
}

/// Pairwise alignment defect
/// `1/2 \iint psi(x-y) rho(x) rho(y) |w(y) - w(x)|^2`,
/// expanded into convolutions as
/// `\int rho |w|^2 (psi * rho) - \int (rho w) . (psi * (rho w))`.
/// Non-negative whenever `psi >= 0`.
pub fn alignment_defect(
    rho: &ScalarField,
    w: &VectorField,
    tables: &KernelTables,
) -> Result<f64> {
    let grid = rho.grid();
    grid.check_same(w.grid(), "alignment_defect")?;
    match &tables.communication {
        None => Ok(0.0),
        Some(psi) => {
            let dim = grid.dim();
            let cells = grid.cell_count();
            let rv = rho.values();
            let mut rho_w = VectorField::zero(grid);
            for b in 0..dim {
                let src = w.component(b);
                let dest = rho_w.component_mut(b);
                for i in 0..cells {
                    dest[i] = rv[i] * src[i];
                }
            }
            let conv_rho = periodic_convolve(psi, rho)?;
            let conv_rho_w = periodic_convolve_components(psi, &rho_w)?;
            let cr = conv_rho.values();
            let diagonal = compensated_sum((0..cells).map(|i| {
                let mut wsq = 0.0;
                for b in 0..dim {
                    let wb = w.component(b)[i];
                    wsq += wb * wb;
                }
                rv[i] * wsq * cr[i]
            }));
            let cross = compensated_sum((0..cells).map(|i| {
                let mut s = 0.0;
                for b in 0..dim {
                    s += rho_w.component(b)[i] * conv_rho_w.component(b)[i];
                }
                s
            }));
            Ok(grid.cell_volume() * (diagonal - cross))
        }
    }
}

// ---------------------------------------------------------------------------
// Integrated inequality residual
// ---------------------------------------------------------------------------

/// Time series produced by [`rei_residual`]: everything needed to audit the
/// stability inequality and to fit growth constants.
#[derive(Debug, Clone)]
pub struct RelEnergyReport {
    pub times: Vec<f64>,
    /// Relative energy at each output time.
    pub energies: Vec<f64>,
    /// Quadratic interaction bracket at each output time.
    pub interaction_brackets: Vec<f64>,
    /// Instantaneous pairwise alignment defect (a dissipation rate).
    pub alignment_defects: Vec<f64>,
    /// Instantaneous remainder, term by term.
    pub remainders: Vec<RemainderBreakdown>,
    /// `[E + bracket]_0^tau + int defect - int remainder`; at or below the
    /// tolerance when the inequality holds discretely.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub inequality_holds: bool,
    /// Exponential growth fit of the energy series.
    pub gronwall: GronwallFit,
}

/// Audits the integrated stability inequality along matched output grids:
/// for every output time `tau`,
/// `[E + bracket]_0^tau + \int_0^tau defect dt <= \int_0^tau remainder dt`
/// up to discretization error. Rates are integrated by the trapezoid rule on
/// the output grid; reference time derivatives come from the stored samples.
pub fn rei_residual(
    weak: &Trajectory,
    strong: &StrongSolution,
    constitutive: &Constitutive,
    vacuum_floor: f64,
) -> Result<RelEnergyReport> {
    if weak.states.is_empty() {
        return Err(Error::InvalidInput("empty weak trajectory".into()));
    }
    strong.validate()?;
    let n = weak.states.len();
    if n != strong.samples.len() {
        return Err(Error::InvalidInput(format!(
            "sample count mismatch: weak trajectory has {n}, reference has {}",
            strong.samples.len()
        )));
    }
    let grid = weak.states[0].grid();
    grid.check_same(strong.samples[0].r.grid(), "rei_residual")?;
    let t_final = weak.states.last().unwrap().t;
    for k in 0..n {
        let tw = weak.states[k].t;
        let ts = strong.samples[k].t;
        if (tw - ts).abs() > 1e-9 * t_final.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "output times diverge at sample {k}: weak {tw} vs reference {ts}"
            )));
        }
    }
    let tables = KernelTables::new(grid, constitutive)?;

    let evals: Vec<(f64, f64, f64, RemainderBreakdown)> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64, f64, RemainderBreakdown)> {
            let state = &weak.states[k];
            let sample = &strong.samples[k];
            let u = state.velocity(vacuum_floor);
            let mut w = u.clone();
            w.axpy(-1.0, &sample.u)?;
            let energy = relative_energy(&state.rho, &u, &sample.r, &sample.u, constitutive)?;
            let bracket = interaction_bracket(&state.rho, &sample.r, &tables)?;
            let defect = alignment_defect(&state.rho, &w, &tables)?;
            let (dt_r, dt_u) = strong.time_derivatives(k)?;
            let rem = remainder(
                &state.rho,
                &u,
                &sample.r,
                &sample.u,
                &dt_r,
                &dt_u,
                constitutive,
                &tables,
            )?;
            Ok((energy, bracket, defect, rem))
        })
        .collect::<Result<Vec<_>>>()?;

    let times: Vec<f64> = weak.states.iter().map(|s| s.t).collect();
    let energies: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let interaction_brackets: Vec<f64> = evals.iter().map(|e| e.1).collect();
    let alignment_defects: Vec<f64> = evals.iter().map(|e| e.2).collect();
    let remainders: Vec<RemainderBreakdown> = evals.iter().map(|e| e.3).collect();

    let mut residuals = Vec::with_capacity(n);
    residuals.push(0.0);
    let mut int_defect = 0.0f64;
    let mut int_remainder = 0.0f64;
    let base = energies[0] + interaction_brackets[0];
    for k in 1..n {
        let dt = times[k] - times[k - 1];
        int_defect += 0.5 * dt * (alignment_defects[k - 1] + alignment_defects[k]);
        int_remainder += 0.5 * dt * (remainders[k - 1].total() + remainders[k].total());
        residuals
            .push(energies[k] + interaction_brackets[k] - base + int_defect - int_remainder);
    }

    let elapsed = times[n - 1] - times[0];
    let dt_eff = if weak.steps > 0 {
        elapsed / weak.steps as f64
    } else {
        weak.output_dt()
    };
    let tolerance = stability_tolerance(grid.spacing(), dt_eff, elapsed.max(f64::MIN_POSITIVE));
    let max_residual = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gronwall = gronwall_fit(&times, &energies, f64::INFINITY)?;

    Ok(RelEnergyReport {
        times,
        energies,
        interaction_brackets,
        alignment_defects,
        remainders,
        residuals,
        max_residual,
        tolerance,
        inequality_holds: max_residual <= tolerance,
        gronwall,
    })
}

// ---------------------------------------------------------------------------
// Essential/residual decomposition and coercivity
// ---------------------------------------------------------------------------

/// Density-based cutoff splitting fields into essential (`chi = 1` inside the
/// reference density band) and residual parts, with a piecewise-cubic smooth
/// transition of width `0.1 * rho_low` on both flanks.
#[derive(Debug, Clone)]
pub struct EssResSplit {
    pub rho_low: f64,
    pub rho_high: f64,
    pub transition_width: f64,
    /// `chi(rho)` per cell, in `[0, 1]`, equal to 1 on `[rho_low, rho_high]`.
    pub essential_weight: ScalarField,
    /// Cells whose weight falls below 1 (touching the residual regime).
    pub residual_cells: Vec<usize>,
}

/// Builds the essential/residual split of a density field for reference
/// bounds `0 < rho_low <= rho_high`.
pub fn ess_res_split(rho: &ScalarField, rho_low: f64, rho_high: f64) -> Result<EssResSplit> {
    if !(rho_low > 0.0 && rho_high >= rho_low) {
        return Err(Error::InvalidInput(format!(
            "density band must satisfy 0 < low <= high, got [{rho_low}, {rho_high}]"
        )));
    }
    let width = 0.1 * rho_low;
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let chi = |s: f64| -> f64 {
        if (rho_low..=rho_high).contains(&s) {
            1.0
        } else if s <= rho_low - width || s >= rho_high + width {
            0.0
        } else if s < rho_low {
            smooth((s - (rho_low - width)) / width)
        } else {
            smooth(((rho_high + width) - s) / width)
        }
    };
    let essential_weight = rho.map(chi);
    let residual_cells = essential_weight
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w < 1.0)
        .map(|(i, _)| i)
        .collect();
    Ok(EssResSplit {
        rho_low,
        rho_high,
        transition_width: width,
        essential_weight,
        residual_cells,
    })
}

/// Outcome of the pointwise coercivity audit.
#[derive(Debug, Clone, Copy)]
pub struct CoercivityReport {
    /// Largest `c > 0` with
    /// `energy density >= c * (rho|w|^2 + |w_ess|^2 + |g_ess|^2 + residual block)`
    /// pointwise (infinity when the right-hand side vanishes everywhere).
    pub constant: f64,
    /// Realized ratio `||rho - r||_L1 / sqrt(E)` tying the density gap to the
    /// relative energy (0 when both vanish).
    pub mass_constant: f64,
    /// Cell attaining the worst pointwise ratio, if any.
    pub worst_cell: Option<usize>,
    /// True when both constants are positive and finite.
    pub holds: bool,
}

/// Verifies pointwise that the relative-energy density dominates the weighted
/// quadratic/residual block, and measures the density-gap constant
/// `||rho - r||_L1 <= c sqrt(E)`. Meaningful for genuinely convex pressure
/// laws; degenerate (constant 0) for vanishing pressure.
pub fn coercivity_check(
    rho: &ScalarField,
    u: &VectorField,
    r: &ScalarField,
    big_u: &VectorField,
    constitutive: &Constitutive,
    split: &EssResSplit,
) -> Result<CoercivityReport> {
    let grid = rho.grid();
    grid.check_same(u.grid(), "coercivity weak velocity")?;
    grid.check_same(r.grid(), "coercivity reference density")?;
    grid.check_same(big_u.grid(), "coercivity reference velocity")?;
    grid.check_same(split.essential_weight.grid(), "coercivity split")?;
    let dim = grid.dim();
    let cells = grid.cell_count();
    let rv = rho.values();
    let sr = r.values();
    let chi = split.essential_weight.values();
    let law = &constitutive.pressure;

    let mut constant = f64::INFINITY;
    let mut worst_cell = None;
    for i in 0..cells {
        let mut wsq = 0.0;
        for b in 0..dim {
            let d = u.component(b)[i] - big_u.component(b)[i];
            wsq += d * d;
        }
        let energy_density = 0.5 * rv[i] * wsq + law.bregman_gap(rv[i], sr[i])?;
        let ess = chi[i] * chi[i];
        let res = 1.0 - chi[i];
        let gap = rv[i] - sr[i];
        let log_plus = if rv[i] > 1.0 { rv[i] * rv[i].ln() } else { 0.0 };
        let dominated = rv[i] * wsq
            + ess * wsq
            + ess * gap * gap
            + res * (1.0 + law.pressure(rv[i].max(0.0)) + log_plus);
        if dominated > 0.0 {
            let ratio = energy_density / dominated;
            if ratio < constant {
                constant = ratio;
                worst_cell = Some(i);
            }
        }
    }

    let energy = relative_energy(rho, u, r, big_u, constitutive)?;
    let mut gap_field = rho.clone();
    gap_field.axpy(-1.0, r)?;
    let l1 = gap_field.l1_norm();
    let mass_constant = if energy > 0.0 {
        l1 / energy.sqrt()
    } else if l1 <= 1e-14 * sr.len() as f64 {
        0.0
    } else {
        f64::INFINITY
    };

    Ok(CoercivityReport {
        constant,
        mass_constant,
        worst_cell,
        holds: constant > 0.0 && mass_constant.is_finite(),
    })
}

// ---------------------------------------------------------------------------
// Potential-coupled variant
// ---------------------------------------------------------------------------

/// Negative-order Sobolev norm of a zero-mean field (square root of
/// [`negative_sobolev_norm_sq`]).
pub fn negative_sobolev_norm(f: &ScalarField) -> Result<f64> {
    Ok(negative_sobolev_norm_sq(f)?.max(0.0).sqrt())
}

/// Relative energy for self-consistent potential coupling: the pressure term
/// is replaced by the squared negative-order Sobolev norm of the density gap,
/// `\int 1/2 rho |u - U|^2 + ||rho - r||_{-1}^2`. Requires matching masses
/// (the gap must be mean-free).
pub fn poisson_relative_energy(
    rho: &ScalarField,
    u: &VectorField,
    r: &ScalarField,
    big_u: &VectorField,
) -> Result<f64> {
    let grid = rho.grid();
    grid.check_same(u.grid(), "poisson_relative_energy weak velocity")?;
    grid.check_same(r.grid(), "poisson_relative_energy reference density")?;
    grid.check_same(big_u.grid(), "poisson_relative_energy reference velocity")?;
    let dim = grid.dim();
    let cells = grid.cell_count();
    let rv = rho.values();
    let kinetic = grid.cell_volume()
        * compensated_sum((0..cells).map(|i| {
            let mut wsq = 0.0;
            for b in 0..dim {
                let d = u.component(b)[i] - big_u.component(b)[i];
                wsq += d * d;
            }
            0.5 * rv[i] * wsq
        }));
    let mut gap = rho.clone();
    gap.axpy(-1.0, r)?;
    Ok(kinetic + negative_sobolev_norm_sq(&gap)?)
}

/// Residual of the potential-transport identity
/// `\int g (grad phi) . U
///  + \int div U |grad phi|^2 / 2
///  - \int grad U : (grad phi x grad phi) = 0`
/// where `g = rho - r` is mean-free and `-laplacian(phi) = g`. Vanishes to
/// roundoff for band-limited fields; the returned value is the signed sum.
pub fn poisson_transport_identity_check(
    rho: &ScalarField,
    r: &ScalarField,
    big_u: &VectorField,
) -> Result<f64> {
    let grid = rho.grid();
    grid.check_same(r.grid(), "transport identity reference density")?;
    grid.check_same(big_u.grid(), "transport identity velocity")?;
    let dim = grid.dim();
    let cells = grid.cell_count();
    let volume = grid.cell_volume();

    let mut gap = rho.clone();
    gap.axpy(-1.0, r)?;
    let phi = poisson_solve(&gap)?;
    let grad_phi = gradient(&phi);
    let div_u = divergence(big_u);
    let gv = gap.values();
    let dv = div_u.values();

    let advective = volume
        * compensated_sum((0..cells).map(|i| {
            let mut s = 0.0;
            for b in 0..dim {
                s += grad_phi.component(b)[i] * big_u.component(b)[i];
            }
            gv[i] * s
        }));
    let compression = volume
        * compensated_sum((0..cells).map(|i| {
            let mut psq = 0.0;
            for b in 0..dim {
                let p = grad_phi.component(b)[i];
                psq += p * p;
            }
            0.5 * dv[i] * psq
        }));
    let mut strain = 0.0;
    for b in 0..dim {
        let grad_ub = gradient(&big_u.component_field(b));
        strain += volume
            * compensated_sum((0..cells).map(|i| {
                let mut s = 0.0;
                for c in 0..dim {
                    s += grad_ub.component(c)[i]
                        * grad_phi.component(b)[i]
                        * grad_phi.component(c)[i];
                }
                s
            }));
    }
    Ok(advective + compression - strain)
}

// ---------------------------------------------------------------------------
// Gronwall fitting
// ---------------------------------------------------------------------------

/// Result of fitting the smallest exponential envelope over an energy series.
#[derive(Debug, Clone, Copy)]
pub struct GronwallFit {
    /// Smallest `c >= 0` with `E(tau) <= (E(0) + shift) * exp(c tau)`.
    pub constant: f64,
    /// Additive regularization actually applied (`1e-12 * max E`).
    pub shift: f64,
    /// True when the fitted constant stays within the caller's budget.
    pub within_budget: bool,
}

/// Fits the smallest `c >= 0` such that
/// `E(tau_k) <= (E(0) + shift) * exp(c (tau_k - tau_0))` for every sample,
/// by monotone bisection on the feasibility predicate. The shift
/// `1e-12 * max(E)` keeps the fit solvable when `E(0) = 0`; negative energies
/// within roundoff are clamped to zero.
pub fn gronwall_fit(times: &[f64], energies: &[f64], budget: f64) -> Result<GronwallFit> {
    if times.len() != energies.len() || times.is_empty() {
        return Err(Error::InvalidInput(
            "gronwall fit needs matching, non-empty series".into(),
        ));
    }
    for k in 1..times.len() {
        if times[k] <= times[k - 1] {
            return Err(Error::InvalidInput(
                "gronwall fit needs strictly increasing times".into(),
            ));
        }
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("gronwall energy series"));
    }
    let clamped: Vec<f64> = energies.iter().map(|&e| e.max(0.0)).collect();
    let max_energy = clamped.iter().copied().fold(0.0f64, f64::max);
    let shift = 1e-12 * max_energy;
    let base = clamped[0] + shift;
    let t0 = times[0];

    let feasible = |c: f64| -> bool {
        clamped
            .iter()
            .zip(times)
            .all(|(&e, &t)| e <= base * (c * (t - t0)).exp())
    };

    let constant = if feasible(0.0) {
        0.0
    } else {
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while !feasible(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return Err(Error::NoConvergence {
                    what: "gronwall envelope bracketing",
                    iterations: 50,
                    residual: hi,
                });
            }
        }
        for _ in 0..200 {
            if hi - lo <= 1e-9 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    Ok(GronwallFit { constant, shift, within_budget: constant <= budget })
}

// ---------------------------------------------------------------------------
