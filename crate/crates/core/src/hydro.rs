//! Finite-volume solver for the compressible continuum swarm model on the
//! torus: conservative fluxes for mass and momentum, unsplit explicit source
//! terms (speed-regulating friction, non-local attraction, velocity
//! alignment, optional self-consistent potential forcing), and a
//! high-resolution primitive-variable integrator that manufactures reference
//! solutions for stability studies.
//!
//! The conserved state is `(rho, m)` with `m = rho u`. Interface fluxes are
//! local Lax-Friedrichs (Rusanov) or HLL; both reduce to pure upwinding with
//! signal speed `|u|` in pressureless mode. Sources act on momentum only, so
//! mass conservation rests entirely on flux telescoping and holds to
//! roundoff.
//!
//! Non-local terms use spectral convolutions: the kernels are smooth, so the
//! convolution is evaluated via the FFT at spectral accuracy while the
//! hyperbolic part keeps its shock-capturing finite-volume form.

use rayon::prelude::*;

use crate::constitutive::Constitutive;
use crate::error::{Error, Result};
use crate::relative_energy::{StrongSample, StrongSolution};
use crate::torus::spectral::{
    dealias_two_thirds, dealias_two_thirds_vector, divergence, gradient, periodic_convolve,
    periodic_convolve_components, periodic_convolve_vector_kernel, poisson_solve,
};
use crate::torus::{ScalarField, TorusGrid, VectorField};

/// Default vacuum floor: densities below this are clamped and their momentum
/// zeroed, so velocities stay finite when the data touches vacuum.
pub const VACUUM_FLOOR_DEFAULT: f64 = 1e-12;

/// Densities below this strictly negative threshold abort the run; values in
/// `[NEGATIVE_DENSITY_TOL, 0)` count as roundoff-level vacuum and are clamped.
pub const NEGATIVE_DENSITY_TOL: f64 = -1e-12;

/// Interface flux scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxScheme {
    /// Local Lax-Friedrichs with signal speed `|u_axis| + c`.
    Rusanov,
    /// Two-wave HLL with Davis speed estimates.
    Hll,
}

/// Explicit time integrator for the finite-volume update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    ForwardEuler,
    /// Strong-stability-preserving two-stage Runge-Kutta (Heun).
    SspRk2,
}

/// Numerical parameters of the finite-volume solver.
#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    /// Fraction of the stability-limited time step, in (0, 1].
    pub cfl: f64,
    pub flux: FluxScheme,
    pub time: TimeScheme,
    /// Clamp level for vacuum cells (>= 0).
    pub vacuum_floor: f64,
    /// Drop the pressure flux and sound speed entirely.
    pub pressureless: bool,
    /// Add the self-consistent potential force `-rho grad(Phi)` with
    /// `-laplacian(Phi) = rho - mean(rho)`.
    pub poisson_forcing: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            cfl: 0.45,
            flux: FluxScheme::Rusanov,
            time: TimeScheme::SspRk2,
            vacuum_floor: VACUUM_FLOOR_DEFAULT,
            pressureless: false,
            poisson_forcing: false,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.vacuum_floor >= 0.0 && self.vacuum_floor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "vacuum floor must be finite and >= 0, got {}",
                self.vacuum_floor
            )));
        }
        Ok(())
    }
}

/// Conserved-variable state of the continuum solver.
#[derive(Debug, Clone)]
pub struct HydroState {
    pub t: f64,
    pub rho: ScalarField,
    pub momentum: VectorField,
}

impl HydroState {
    pub fn new(rho: ScalarField, momentum: VectorField) -> Result<Self> {
        rho.grid().check_same(momentum.grid(), "HydroState::new")?;
        if rho.min() < 0.0 {
            return Err(Error::NegativeDensity {
                value: rho.min(),
                cell: rho.values().iter().position(|&v| v < 0.0).unwrap_or(0),
                time: 0.0,
            });
        }
        Ok(HydroState { t: 0.0, rho, momentum })
    }

    pub fn grid(&self) -> TorusGrid {
        self.rho.grid()
    }

    /// Velocity `m / rho`, zero where the density is at or below `floor`.
    pub fn velocity(&self, floor: f64) -> VectorField {
        let grid = self.grid();
        let rho = self.rho.values();
        let mut u = VectorField::zero(grid);
        for a in 0..grid.dim() {
            let m = self.momentum.component(a);
            let dest = u.component_mut(a);
            for i in 0..rho.len() {
                dest[i] = if rho[i] > floor { m[i] / rho[i] } else { 0.0 };
            }
        }
        u
    }

    /// Total mass `h^N sum(rho)`.
    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }
}

/// Interaction and communication kernels pre-sampled on the displacement
/// lattice of one grid, so a run pays the sampling and symmetry checks once.
#[derive(Debug, Clone)]
pub struct KernelTables {
    pub attraction_value: Option<ScalarField>,
    pub attraction_gradient: Option<VectorField>,
    pub communication: Option<ScalarField>,
}

impl KernelTables {
    pub fn new(grid: TorusGrid, constitutive: &Constitutive) -> Result<Self> {
        let (attraction_value, attraction_gradient) = if constitutive.attraction.is_zero() {
            (None, None)
        } else {
            let (value, grad) = constitutive.attraction.sample_on_torus(grid)?;
            (Some(value), Some(grad))
        };
        let communication = if constitutive.communication.is_zero() {
            None
        } else {
            Some(constitutive.communication.sample_on_torus(grid)?)
        };
        Ok(KernelTables { attraction_value, attraction_gradient, communication })
    }
}

/// Momentum source terms, kept separate for diagnostics.
#[derive(Debug, Clone)]
pub struct SourceTerms {
    /// `(1 - H(|u|^2)) rho u` — self-propulsion against speed regulation.
    pub friction: VectorField,
    /// `-rho (grad K * rho)` — non-local attraction-repulsion.
    pub attraction: VectorField,
    /// `rho (psi * m) - m (psi * rho)` — velocity alignment.
    pub alignment: VectorField,
    /// `-rho grad(Phi)` with `-laplacian(Phi) = rho - mean(rho)`; zero when
    /// the potential forcing is off.
    pub poisson: VectorField,
}

impl SourceTerms {
    /// Sum of all terms.
    pub fn total(&self) -> VectorField {
        let mut out = self.friction.clone();
        out.axpy(1.0, &self.attraction).expect("same grid");
        out.axpy(1.0, &self.alignment).expect("same grid");
        out.axpy(1.0, &self.poisson).expect("same grid");
        out
    }
}

/// Evaluates all momentum sources for a state `(rho, m)`.
pub fn compute_sources(
    rho: &ScalarField,
    momentum: &VectorField,
    constitutive: &Constitutive,
    tables: &KernelTables,
    cfg: &SchemeConfig,
) -> Result<SourceTerms> {
    let grid = rho.grid();
    grid.check_same(momentum.grid(), "compute_sources")?;
    let dim = grid.dim();
    let rho_v = rho.values();
    let cells = grid.cell_count();

    // Friction: (1 - H(|u|^2)) m, velocity recovered with the vacuum guard.
    let mut friction = VectorField::zero(grid);
    {
        let mut factor = vec![0.0f64; cells];
        for (i, f) in factor.iter_mut().enumerate() {
            let mut speed_sq = 0.0;
            if rho_v[i] > cfg.vacuum_floor {
                for a in 0..dim {
                    let u = momentum.component(a)[i] / rho_v[i];
                    speed_sq += u * u;
                }
            }
            *f = 1.0 - constitutive.friction.evaluate(speed_sq);
        }
        for a in 0..dim {
            let m = momentum.component(a);
            let dest = friction.component_mut(a);
            for i in 0..cells {
                dest[i] = factor[i] * m[i];
            }
        }
    }

    // Attraction: -rho (grad K * rho).
    let mut attraction = VectorField::zero(grid);
    if let Some(grad_k) = &tables.attraction_gradient {
        let conv = periodic_convolve_vector_kernel(grad_k, rho)?;
        for a in 0..dim {
            let c = conv.component(a);
            let dest = attraction.component_mut(a);
            for i in 0..cells {
                dest[i] = -rho_v[i] * c[i];
            }
        }
    }

    // Alignment: rho (psi * m) - m (psi * rho).
    let mut alignment = VectorField::zero(grid);
    if let Some(psi) = &tables.communication {
        let psi_m = periodic_convolve_components(psi, momentum)?;
        let psi_rho = periodic_convolve(psi, rho)?;
        let pr = psi_rho.values();
        for a in 0..dim {
            let m = momentum.component(a);
            let pm = psi_m.component(a);
            let dest = alignment.component_mut(a);
            for i in 0..cells {
                dest[i] = rho_v[i] * pm[i] - m[i] * pr[i];
            }
        }
    }

    let poisson =
        if cfg.poisson_forcing { poisson_force(rho)? } else { VectorField::zero(grid) };

    Ok(SourceTerms { friction, attraction, alignment, poisson })
}

/// Self-consistent potential force `-rho grad(Phi)`, where Phi solves
/// `-laplacian(Phi) = rho - mean(rho)` on the torus.
pub fn poisson_force(rho: &ScalarField) -> Result<VectorField> {
    let grid = rho.grid();
    let mut fluctuation = rho.clone();
    let mean = rho.mean();
    let shift = ScalarField::constant(grid, -mean)?;
    fluctuation.axpy(1.0, &shift)?;
    let phi = poisson_solve(&fluctuation)?;
    let grad_phi = gradient(&phi);
    let mut out = VectorField::zero(grid);
    let rho_v = rho.values();
    for a in 0..grid.dim() {
        let g = grad_phi.component(a);
        let dest = out.component_mut(a);
        for i in 0..rho_v.len() {
            dest[i] = -rho_v[i] * g[i];
        }
    }
    Ok(out)
}

/// Primitive quantities per cell: velocity, pressure, sound speed.
struct Primitives {
    u: Vec<[f64; 3]>,
    p: Vec<f64>,
    c: Vec<f64>,
}

fn primitives(state: &HydroState, cfg: &SchemeConfig, constitutive: &Constitutive) -> Primitives {
    let grid = state.grid();
    let dim = grid.dim();
    let rho = state.rho.values();
    let cells = grid.cell_count();
    let mut u = vec![[0.0f64; 3]; cells];
    let mut p = vec![0.0f64; cells];
    let mut c = vec![0.0f64; cells];
    for i in 0..cells {
        if rho[i] > cfg.vacuum_floor {
            for a in 0..dim {
                u[i][a] = state.momentum.component(a)[i] / rho[i];
            }
        }
        if !cfg.pressureless {
            p[i] = constitutive.pressure.pressure(rho[i].max(0.0));
            c[i] = constitutive.pressure.sound_speed(rho[i].max(0.0));
        }
    }
    Primitives { u, p, c }
}

/// Largest stable time step `cfl * h / max_cells sum_axes(|u_a| + c)`.
pub fn stable_dt(state: &HydroState, cfg: &SchemeConfig, constitutive: &Constitutive) -> f64 {
    let grid = state.grid();
    let prim = primitives(state, cfg, constitutive);
    let dim = grid.dim();
    let mut smax = 0.0f64;
    for i in 0..grid.cell_count() {
        let mut s = 0.0;
        for a in 0..dim {
            s += prim.u[i][a].abs() + prim.c[i];
        }
        smax = smax.max(s);
    }
    if smax <= f64::MIN_POSITIVE {
        cfg.cfl * grid.spacing()
    } else {
        cfg.cfl * grid.spacing() / smax
    }
}

/// Physical flux along `axis`: mass component and momentum components.
#[inline]
fn physical_flux(
    axis: usize,
    dim: usize,
    rho: f64,
    m: &[f64; 3],
    u: &[f64; 3],
    p: f64,
) -> (f64, [f64; 3]) {
    let _ = rho;
    let mut mom = [0.0f64; 3];
    for b in 0..dim {
        mom[b] = m[b] * u[axis];
    }
    mom[axis] += p;
    (m[axis], mom)
}

/// Interface fluxes along one axis; entry `i` is the flux between cell `i`
/// and its `+axis` neighbor.
fn flux_along_axis(
    state: &HydroState,
    prim: &Primitives,
    cfg: &SchemeConfig,
    axis: usize,
) -> Vec<(f64, [f64; 3])> {
    let grid = state.grid();
    let dim = grid.dim();
    let n = grid.cells_per_axis();
    let rho = state.rho.values();
    let m: Vec<&[f64]> = (0..dim).map(|a| state.momentum.component(a)).collect();

    (0..grid.cell_count())
        .into_par_iter()
        .map(|idx| {
            let mut multi = grid.multi_of(idx);
            multi[axis] = (multi[axis] + 1) % n;
            let nb = grid.index_of(multi);

            let ml: [f64; 3] = {
                let mut v = [0.0; 3];
                for a in 0..dim {
                    v[a] = m[a][idx];
                }
                v
            };
            let mr: [f64; 3] = {
                let mut v = [0.0; 3];
                for a in 0..dim {
                    v[a] = m[a][nb];
                }
                v
            };
            let (fl_mass, fl_mom) = physical_flux(axis, dim, rho[idx], &ml, &prim.u[idx], prim.p[idx]);
            let (fr_mass, fr_mom) = physical_flux(axis, dim, rho[nb], &mr, &prim.u[nb], prim.p[nb]);
            let ul = prim.u[idx][axis];
            let ur = prim.u[nb][axis];
            let cl = prim.c[idx];
            let cr = prim.c[nb];

            match cfg.flux {
                FluxScheme::Rusanov => {
                    let s = (ul.abs() + cl).max(ur.abs() + cr);
                    let mass = 0.5 * (fl_mass + fr_mass) - 0.5 * s * (rho[nb] - rho[idx]);
                    let mut mom = [0.0f64; 3];
                    for b in 0..dim {
                        mom[b] = 0.5 * (fl_mom[b] + fr_mom[b]) - 0.5 * s * (mr[b] - ml[b]);
                    }
                    (mass, mom)
                }
                FluxScheme::Hll => {
                    let sl = (ul - cl).min(ur - cr);
                    let sr = (ul + cl).max(ur + cr);
                    if sl >= 0.0 {
                        (fl_mass, fl_mom)
                    } else if sr <= 0.0 {
                        (fr_mass, fr_mom)
                    } else {
                        let inv = 1.0 / (sr - sl);
                        let mass =
                            (sr * fl_mass - sl * fr_mass + sl * sr * (rho[nb] - rho[idx])) * inv;
                        let mut mom = [0.0f64; 3];
                        for b in 0..dim {
                            mom[b] = (sr * fl_mom[b] - sl * fr_mom[b] + sl * sr * (mr[b] - ml[b]))
                                * inv;
                        }
                        (mass, mom)
                    }
                }
            }
        })
        .collect()
}

/// Full semi-discrete right-hand side: flux divergence plus sources.
fn hydro_rhs(
    state: &HydroState,
    cfg: &SchemeConfig,
    constitutive: &Constitutive,
    tables: &KernelTables,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let grid = state.grid();
    let dim = grid.dim();
    let n = grid.cells_per_axis();
    let cells = grid.cell_count();
    let inv_h = 1.0 / grid.spacing();
    let prim = primitives(state, cfg, constitutive);

    let mut drho = vec![0.0f64; cells];
    let mut dm = vec![vec![0.0f64; cells]; dim];
    for axis in 0..dim {
        let flux = flux_along_axis(state, &prim, cfg, axis);
        for idx in 0..cells {
            let mut multi = grid.multi_of(idx);
            multi[axis] = (multi[axis] + n - 1) % n;
            let prev = grid.index_of(multi);
            drho[idx] -= (flux[idx].0 - flux[prev].0) * inv_h;
            for b in 0..dim {
                dm[b][idx] -= (flux[idx].1[b] - flux[prev].1[b]) * inv_h;
            }
        }
    }

    let sources = compute_sources(&state.rho, &state.momentum, constitutive, tables, cfg)?;
    let total = sources.total();
    for b in 0..dim {
        let s = total.component(b);
        for idx in 0..cells {
            dm[b][idx] += s[idx];
        }
    }
    Ok((drho, dm))
}

/// Clamps vacuum cells to the floor (zeroing momentum) and rejects states
/// that have gone meaningfully negative or non-finite. Returns the number of
/// clamped cells.
fn vacuum_fix(
    rho: &mut [f64],
    momentum: &mut [Vec<f64>],
    floor: f64,
    time: f64,
) -> Result<usize> {
    let mut events = 0usize;
    for i in 0..rho.len() {
        if !rho[i].is_finite() {
            return Err(Error::NanState { context: "hydro step (density)", time });
        }
        if rho[i] < NEGATIVE_DENSITY_TOL {
            return Err(Error::NegativeDensity { value: rho[i], cell: i, time });
        }
        if rho[i] < floor {
            rho[i] = floor;
            for m in momentum.iter_mut() {
                m[i] = 0.0;
            }
            events += 1;
        }
        for m in momentum.iter_mut() {
            if !m[i].is_finite() {
                return Err(Error::NanState { context: "hydro step (momentum)", time });
            }
        }
    }
    Ok(events)
}

fn stage(
    state: &HydroState,
    dt: f64,
    cfg: &SchemeConfig,
    constitutive: &Constitutive,
    tables: &KernelTables,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let grid = state.grid();
    let dim = grid.dim();
    let (drho, dm) = hydro_rhs(state, cfg, constitutive, tables)?;
    let mut rho: Vec<f64> = state.rho.values().to_vec();
    let mut momentum: Vec<Vec<f64>> =
        (0..dim).map(|a| state.momentum.component(a).to_vec()).collect();
    for i in 0..rho.len() {
        rho[i] += dt * drho[i];
        for (b, m) in momentum.iter_mut().enumerate() {
            m[i] += dt * dm[b][i];
        }
    }
    let events = vacuum_fix(&mut rho, &mut momentum, cfg.vacuum_floor, state.t)?;
    Ok((rho, momentum, events))
}

fn state_from_raw(
    grid: TorusGrid,
    t: f64,
    rho: Vec<f64>,
    momentum: Vec<Vec<f64>>,
) -> Result<HydroState> {
    let rho = ScalarField::from_values(grid, rho)?;
    let momentum = VectorField::from_components(
        momentum.into_iter().map(|m| ScalarField::from_values(grid, m)).collect::<Result<_>>()?,
    )?;
    Ok(HydroState { t, rho, momentum })
}

/// Advances one time step. Returns the new state and the number of vacuum
/// clamp events encountered in its stages.
pub fn step(
    state: &HydroState,
    dt: f64,
    cfg: &SchemeConfig,
    constitutive: &Constitutive,
    tables: &KernelTables,
) -> Result<(HydroState, usize)> {
    let grid = state.grid();
    let dim = grid.dim();
    match cfg.time {
        TimeScheme::ForwardEuler => {
            let (rho, momentum, events) = stage(state, dt, cfg, constitutive, tables)?;
            Ok((state_from_raw(grid, state.t + dt, rho, momentum)?, events))
        }
        TimeScheme::SspRk2 => {
            let (rho1, momentum1, ev1) = stage(state, dt, cfg, constitutive, tables)?;
            let mid = state_from_raw(grid, state.t + dt, rho1, momentum1)?;
            let (rho2, momentum2, ev2) = stage(&mid, dt, cfg, constitutive, tables)?;
            // Heun average: (state + stage(mid)) / 2.
            let rho0 = state.rho.values();
            let mut rho = rho2;
            let mut momentum = momentum2;
            for i in 0..rho.len() {
                rho[i] = 0.5 * (rho0[i] + rho[i]);
                for (b, m) in momentum.iter_mut().enumerate() {
                    m[i] = 0.5 * (state.momentum.component(b)[i] + m[i]);
                }
            }
            let _ = dim;
            let ev3 = vacuum_fix(&mut rho, &mut momentum, cfg.vacuum_floor, state.t)?;
            Ok((state_from_raw(grid, state.t + dt, rho, momentum)?, ev1 + ev2 + ev3))
        }
    }
}

/// Time-span and output-grid parameters of a run.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub t_final: f64,
    /// Uniform interval between stored snapshots (and diagnostics rows).
    pub output_dt: f64,
    /// March with this fixed step instead of the stability-limited one;
    /// oversized values are reduced to the stable step and counted.
    pub fixed_dt: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidInput(format!(
                "final time must be finite and >= 0, got {}",
                self.t_final
            )));
        }
        if self.t_final > 0.0 && !(self.output_dt > 0.0) {
            return Err(Error::InvalidInput(format!(
                "output interval must be positive, got {}",
                self.output_dt
            )));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "fixed time step must be positive, got {dt}"
                )));
            }
        }
        Ok(())
    }
}

/// A completed run: snapshots on the uniform output grid plus counters.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<HydroState>,
    pub vacuum_events: usize,
    pub steps: usize,
    /// Times an oversized fixed step was reduced to the stable one.
    pub dt_reductions: usize,
}

impl Trajectory {
    /// Uniform spacing of the stored snapshots (0 for a single-snapshot run).
    pub fn output_dt(&self) -> f64 {
        if self.states.len() < 2 {
            0.0
        } else {
            self.states[1].t - self.states[0].t
        }
    }
}

/// Marches the finite-volume solver from `initial` to `t_final`, storing a
/// snapshot every `output_dt`. Steps are clipped to land on output times
/// exactly, so diagnostics live on a uniform grid.
pub fn run(
    initial: HydroState,
    cfg: &SchemeConfig,
    constitutive: &Constitutive,
    rc: &RunConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    rc.validate()?;
    constitutive.friction.validate()?;
    let grid = initial.grid();
    let tables = KernelTables::new(grid, constitutive)?;

    let mut trajectory = Trajectory {
        states: vec![initial.clone()],
        vacuum_events: 0,
        steps: 0,
        dt_reductions: 0,
    };
    if rc.t_final == 0.0 {
        return Ok(trajectory);
    }

    let outputs = (rc.t_final / rc.output_dt).round().max(1.0) as usize;
    // The final target is t_final itself even if it is not an exact multiple.
    let mut state = initial;
    for k in 1..=outputs {
        let target = if k == outputs { rc.t_final } else { k as f64 * rc.output_dt };
        while state.t < target - 1e-14 * rc.t_final.max(1.0) {
            let stable = stable_dt(&state, cfg, constitutive);
            let mut dt = stable;
            if let Some(fixed) = rc.fixed_dt {
                if fixed > stable {
                    trajectory.dt_reductions += 1;
                } else {
                    dt = fixed;
                }
            }
            dt = dt.min(target - state.t);
            let (next, events) = step(&state, dt, cfg, constitutive, &tables)?;
            state = next;
            trajectory.vacuum_events += events;
            trajectory.steps += 1;
        }
        state.t = target;
        trajectory.states.push(state.clone());
    }
    Ok(trajectory)
}

/// Parameters of the high-resolution reference integrator.
#[derive(Debug, Clone, Copy)]
pub struct StrongReferenceConfig {
    pub t_final: f64,
    pub output_dt: f64,
    /// Advective CFL fraction for the pseudo-spectral march.
    pub cfl: f64,
    /// Stop and mark the horizon when the velocity gradient sup-norm
    /// exceeds this threshold (gradient blow-up indicator).
    pub gradient_limit: f64,
    pub pressureless: bool,
    pub poisson_forcing: bool,
}

impl Default for StrongReferenceConfig {
    fn default() -> Self {
        StrongReferenceConfig {
            t_final: 1.0,
            output_dt: 0.05,
            cfl: 0.25,
            gradient_limit: 50.0,
            pressureless: false,
            poisson_forcing: false,
        }
    }
}

/// Primitive-variable right-hand side for the smooth reference march:
/// `d/dt r = -div(r U)`,
/// `d/dt U = -(U . grad) U - grad(P'(r)) + (1 - H(|U|^2)) U - grad K * r
///           + psi*(rU) - U psi*r - grad Phi`.
fn primitive_rhs(
    r: &ScalarField,
    u: &VectorField,
    constitutive: &Constitutive,
    tables: &KernelTables,
    src: &StrongReferenceConfig,
) -> Result<(ScalarField, VectorField)> {
    let grid = r.grid();
    let dim = grid.dim();
    let cells = grid.cell_count();
    let rv = r.values();

    // Mass flux r U and its divergence.
    let mut flux = VectorField::zero(grid);
    for a in 0..dim {
        let ua = u.component(a);
        let dest = flux.component_mut(a);
        for i in 0..cells {
            dest[i] = rv[i] * ua[i];
        }
    }
    let mut drdt = divergence(&flux);
    drdt.scale(-1.0);

    let mut dudt = VectorField::zero(grid);

    // Advection -(U . grad) U.
    for b in 0..dim {
        let grad_ub = gradient(&u.component_field(b));
        let dest = dudt.component_mut(b);
        for a in 0..dim {
            let ua = u.component(a);
            let g = grad_ub.component(a);
            for i in 0..cells {
                dest[i] -= ua[i] * g[i];
            }
        }
    }

    // Pressure: -grad(P'(r)) equals -(1/r) grad p(r) for smooth positive r.
    if !src.pressureless && !constitutive.pressure.is_zero() {
        let enthalpy = ScalarField::from_values(
            grid,
            rv.iter().map(|&x| constitutive.pressure.potential_derivative(x)).collect(),
        )?;
        let grad_h = gradient(&enthalpy);
        for b in 0..dim {
            let g = grad_h.component(b);
            let dest = dudt.component_mut(b);
            for i in 0..cells {
                dest[i] -= g[i];
            }
        }
    }

    // Friction (1 - H(|U|^2)) U.
    {
        let mut speed_sq = vec![0.0f64; cells];
        for a in 0..dim {
            let ua = u.component(a);
            for i in 0..cells {
                speed_sq[i] += ua[i] * ua[i];
            }
        }
        for b in 0..dim {
            let ub = u.component(b);
            let dest = dudt.component_mut(b);
            for i in 0..cells {
                dest[i] += (1.0 - constitutive.friction.evaluate(speed_sq[i])) * ub[i];
            }
        }
    }

    // Attraction -(grad K * r).
    if let Some(grad_k) = &tables.attraction_gradient {
        let conv = periodic_convolve_vector_kernel(grad_k, r)?;
        for b in 0..dim {
            let c = conv.component(b);
            let dest = dudt.component_mut(b);
            for i in 0..cells {
                dest[i] -= c[i];
            }
        }
    }

    // Alignment psi*(rU) - U (psi*r).
    if let Some(psi) = &tables.communication {
        let conv_flux = periodic_convolve_components(psi, &flux)?;
        let conv_r = periodic_convolve(psi, r)?;
        let cr = conv_r.values();
        for b in 0..dim {
            let cf = conv_flux.component(b);
            let ub = u.component(b);
            let dest = dudt.component_mut(b);
            for i in 0..cells {
                dest[i] += cf[i] - ub[i] * cr[i];
            }
        }
    }

    // Potential force -grad Phi.
    if src.poisson_forcing {
        let mut fluctuation = r.clone();
        let shift = ScalarField::constant(grid, -r.mean())?;
        fluctuation.axpy(1.0, &shift)?;
        let phi = poisson_solve(&fluctuation)?;
        let grad_phi = gradient(&phi);
        for b in 0..dim {
            let g = grad_phi.component(b);
            let dest = dudt.component_mut(b);
            for i in 0..cells {
                dest[i] -= g[i];
            }
        }
    }

    Ok((dealias_two_thirds(&drdt), dealias_two_thirds_vector(&dudt)))
}

/// Sup-norm of all first derivatives of a vector field (Lipschitz proxy).
fn gradient_sup(u: &VectorField) -> f64 {
    let mut sup = 0.0f64;
    for b in 0..u.dim() {
        sup = sup.max(gradient(&u.component_field(b)).linf_norm());
    }
    sup
}

/// Exact block average onto a coarser grid whose cell count divides the
/// fine one.
pub fn block_average(fine: &ScalarField, coarse: TorusGrid) -> Result<ScalarField> {
    let fg = fine.grid();
    if fg.dim() != coarse.dim() || fg.cells_per_axis() % coarse.cells_per_axis() != 0 {
        return Err(Error::InvalidInput(format!(
            "block average needs an integer refinement: fine {} cells/axis vs coarse {}",
            fg.cells_per_axis(),
            coarse.cells_per_axis()
        )));
    }
    let factor = fg.cells_per_axis() / coarse.cells_per_axis();
    let dim = fg.dim();
    let block = (factor as u32).pow(dim as u32) as usize;
    let fv = fine.values();
    let mut out = vec![0.0f64; coarse.cell_count()];
    for (cidx, o) in out.iter_mut().enumerate() {
        let cmulti = coarse.multi_of(cidx);
        let mut sum = 0.0;
        let mut offset = [0usize; 3];
        loop {
            let mut fmulti = [0usize; 3];
            for a in 0..dim {
                fmulti[a] = cmulti[a] * factor + offset[a];
            }
            sum += fv[fg.index_of(fmulti)];
            // Odometer increment over the block.
            let mut carry = true;
            for o in offset.iter_mut().take(dim) {
                if carry {
                    *o += 1;
                    if *o == factor {
                        *o = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        *o = sum / block as f64;
    }
    ScalarField::from_values(coarse, out)
}

fn block_average_vector(fine: &VectorField, coarse: TorusGrid) -> Result<VectorField> {
    let mut parts = Vec::with_capacity(fine.dim());
    for a in 0..fine.dim() {
        parts.push(block_average(&fine.component_field(a), coarse)?);
    }
    VectorField::from_components(parts)
}

/// Integrates the primitive-variable system at high resolution with spectral
/// derivatives, RK4, and 2/3-rule dealiasing, then block-averages each output
/// sample onto `coarse`. The result serves as the smooth reference for
/// stability comparisons; integration stops early if the velocity gradient
/// blows past `cfg.gradient_limit`, recording the reached horizon.
pub fn strong_reference(
    rho0: &ScalarField,
    u0: &VectorField,
    constitutive: &Constitutive,
    coarse: TorusGrid,
    cfg: &StrongReferenceConfig,
) -> Result<StrongSolution> {
    let fine = rho0.grid();
    fine.check_same(u0.grid(), "strong_reference")?;
    if fine.dim() != coarse.dim()
        || fine.cells_per_axis() % coarse.cells_per_axis() != 0
        || fine.cells_per_axis() / coarse.cells_per_axis() < 4
    {
        return Err(Error::InvalidInput(format!(
            "reference integration requires at least 4x resolution over the target grid \
             (got {} vs {})",
            fine.cells_per_axis(),
            coarse.cells_per_axis()
        )));
    }
    if rho0.min() <= 0.0 {
        return Err(Error::InvalidInput(
            "reference integration needs strictly positive density".into(),
        ));
    }
    if !(cfg.t_final >= 0.0 && cfg.output_dt > 0.0 && cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(Error::InvalidInput("invalid reference integration parameters".into()));
    }
    let tables = KernelTables::new(fine, constitutive)?;

    let mut r = rho0.clone();
    let mut u = u0.clone();
    let mut t = 0.0f64;
    let mut samples = Vec::new();
    let mut rho_low = f64::INFINITY;
    let mut rho_high = f64::NEG_INFINITY;
    let mut t_strong = None;

    let record = |samples: &mut Vec<StrongSample>,
                  r: &ScalarField,
                  u: &VectorField,
                  t: f64,
                  rho_low: &mut f64,
                  rho_high: &mut f64|
     -> Result<f64> {
        let grad_u_linf = gradient_sup(u);
        let grad_r_linf = gradient(r).linf_norm();
        *rho_low = rho_low.min(r.min());
        *rho_high = rho_high.max(r.max());
        samples.push(StrongSample {
            t,
            r: block_average(r, coarse)?,
            u: block_average_vector(u, coarse)?,
            grad_u_linf,
            grad_r_linf,
        });
        Ok(grad_u_linf)
    };

    let g0 = record(&mut samples, &r, &u, 0.0, &mut rho_low, &mut rho_high)?;
    if g0 > cfg.gradient_limit {
        return Ok(StrongSolution { samples, rho_low, rho_high, t_strong: Some(0.0) });
    }

    let outputs = (cfg.t_final / cfg.output_dt).round().max(0.0) as usize;
    let law = &constitutive.pressure;
    'outer: for k in 1..=outputs {
        let target = if k == outputs { cfg.t_final } else { k as f64 * cfg.output_dt };
        while t < target - 1e-14 * cfg.t_final.max(1.0) {
            // Advective CFL with the sound speed of the current extremes.
            let mut speed = 0.0f64;
            for i in 0..fine.cell_count() {
                let mut s = 0.0;
                for a in 0..u.dim() {
                    s += u.component(a)[i].abs();
                }
                if !cfg.pressureless {
                    s += law.sound_speed(r.values()[i].max(0.0)) * fine.dim() as f64;
                }
                speed = speed.max(s);
            }
            let mut dt = cfg.cfl * fine.spacing() / speed.max(1.0);
            dt = dt.min(target - t);

            // Classical RK4 on (r, U).
            let (k1r, k1u) = primitive_rhs(&r, &u, constitutive, &tables, cfg)?;
            let (r2, u2) = advanced(&r, &u, &k1r, &k1u, 0.5 * dt)?;
            let (k2r, k2u) = primitive_rhs(&r2, &u2, constitutive, &tables, cfg)?;
            let (r3, u3) = advanced(&r, &u, &k2r, &k2u, 0.5 * dt)?;
            let (k3r, k3u) = primitive_rhs(&r3, &u3, constitutive, &tables, cfg)?;
            let (r4, u4) = advanced(&r, &u, &k3r, &k3u, dt)?;
            let (k4r, k4u) = primitive_rhs(&r4, &u4, constitutive, &tables, cfg)?;

            let mut kr = k1r;
            kr.axpy(2.0, &k2r)?;
            kr.axpy(2.0, &k3r)?;
            kr.axpy(1.0, &k4r)?;
            let mut ku = k1u;
            ku.axpy(2.0, &k2u)?;
            ku.axpy(2.0, &k3u)?;
            ku.axpy(1.0, &k4u)?;
            let (rn, un) = advanced(&r, &u, &kr, &ku, dt / 6.0)?;
            r = rn;
            u = un;
            t += dt;
        }
        t = target;
        let g = record(&mut samples, &r, &u, t, &mut rho_low, &mut rho_high)?;
        if g > cfg.gradient_limit {
            t_strong = Some(t);
            break 'outer;
        }
    }

    Ok(StrongSolution { samples, rho_low, rho_high, t_strong })
}

fn advanced(
    r: &ScalarField,
    u: &VectorField,
    dr: &ScalarField,
    du: &VectorField,
    dt: f64,
) -> Result<(ScalarField, VectorField)> {
    let mut rn = r.clone();
    rn.axpy(dt, dr)?;
    let mut un = u.clone();
    un.axpy(dt, du)?;
    Ok((rn, un))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{
        CommunicationKernel, FrictionFunction, InteractionKernel, PressureLaw,
    };

    fn inert() -> Constitutive {
        Constitutive {
            pressure: PressureLaw::Zero,
            attraction: InteractionKernel::Zero,
            communication: CommunicationKernel::Zero,
            friction: FrictionFunction::Constant { level: 1.0 },
        }
    }

    fn uniform_state(grid: TorusGrid, rho: f64, u: [f64; 3]) -> HydroState {
        let rho_f = ScalarField::constant(grid, rho).unwrap();
        let m = VectorField::from_fn(grid, |_| {
            let mut v = [0.0; 3];
            for a in 0..grid.dim() {
                v[a] = rho * u[a];
            }
            v
        })
        .unwrap();
        HydroState::new(rho_f, m).unwrap()
    }

    #[test]
    fn constant_state_is_steady() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let constitutive = Constitutive {
            pressure: PressureLaw::PowerLaw { coeff: 1.0, gamma: 2.0 },
            attraction: InteractionKernel::Trig { amplitude: 0.4, modes: [1, 1, 0] },
            communication: CommunicationKernel::Constant { level: 0.7 },
            friction: FrictionFunction::Linear { alpha: 1.0 },
        };
        let cfg = SchemeConfig::default();
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let mut state = uniform_state(grid, 1.3, [0.0; 3]);
        let dt = stable_dt(&state, &cfg, &constitutive);
        for _ in 0..3 {
            let (next, events) = step(&state, dt, &cfg, &constitutive, &tables).unwrap();
            assert_eq!(events, 0);
            state = next;
        }
        let mut drift = 0.0f64;
        for v in state.rho.values() {
            drift = drift.max((v - 1.3).abs());
        }
        assert!(drift <= 1e-12, "constant state drifted by {drift}");
        assert!(state.momentum.linf_norm() <= 1e-12);
    }

    #[test]
    fn cruise_translation_is_exact() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let mut constitutive = inert();
        constitutive.friction = FrictionFunction::Linear { alpha: 1.0 };
        let cfg = SchemeConfig { pressureless: true, ..SchemeConfig::default() };
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let mut state = uniform_state(grid, 1.0, [1.0, 0.0, 0.0]);
        let dt = stable_dt(&state, &cfg, &constitutive);
        for _ in 0..5 {
            let (next, _) = step(&state, dt, &cfg, &constitutive, &tables).unwrap();
            state = next;
        }
        let mut rho_drift = 0.0f64;
        for v in state.rho.values() {
            rho_drift = rho_drift.max((v - 1.0).abs());
        }
        let mut mom_drift = 0.0f64;
        for v in state.momentum.component(0) {
            mom_drift = mom_drift.max((v - 1.0).abs());
        }
        assert!(rho_drift <= 1e-14, "density drift {rho_drift}");
        assert!(mom_drift <= 1e-14, "momentum drift {mom_drift}");
    }

    #[test]
    fn advection_error_halves_with_resolution() {
        // Pressureless transport at unit speed; friction balanced exactly by
        // a regulation function that is 1 everywhere.
        let error_at = |n: usize| -> f64 {
            let grid = TorusGrid::new(1, n).unwrap();
            let constitutive = inert();
            let cfg = SchemeConfig {
                pressureless: true,
                time: TimeScheme::SspRk2,
                ..SchemeConfig::default()
            };
            let rho0 = ScalarField::from_fn(grid, |x| {
                1.0 + 0.2 * (std::f64::consts::PI * x[0]).sin()
            })
            .unwrap();
            let m0 = VectorField::from_fn(grid, |x| {
                [1.0 + 0.2 * (std::f64::consts::PI * x[0]).sin(), 0.0, 0.0]
            })
            .unwrap();
            let state = HydroState::new(rho0, m0).unwrap();
            let t_final = 0.25;
            let traj = run(
                state,
                &cfg,
                &constitutive,
                &RunConfig { t_final, output_dt: t_final, fixed_dt: None },
            )
            .unwrap();
            let last = traj.states.last().unwrap();
            // Characteristics: rho(t, x) = rho0(x - t) at uniform speed 1.
            let exact = ScalarField::from_fn(grid, |x| {
                1.0 + 0.2 * (std::f64::consts::PI * (x[0] - t_final)).sin()
            })
            .unwrap();
            let mut diff = last.rho.clone();
            diff.axpy(-1.0, &exact).unwrap();
            diff.l1_norm()
        };
        let coarse = error_at(64);
        let fine = error_at(128);
        let ratio = coarse / fine;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "first-order convergence expected, got ratio {ratio} ({coarse} vs {fine})"
        );
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let constitutive = Constitutive {
            pressure: PressureLaw::PowerLaw { coeff: 0.5, gamma: 2.0 },
            attraction: InteractionKernel::Trig { amplitude: 0.3, modes: [1, 2, 0] },
            communication: CommunicationKernel::Trig {
                base: 1.0,
                amplitude: 0.5,
                modes: [1, 0, 0],
            },
            friction: FrictionFunction::Linear { alpha: 2.0 },
        };
        let cfg = SchemeConfig { poisson_forcing: true, ..SchemeConfig::default() };
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let pi = std::f64::consts::PI;
        let rho0 = ScalarField::from_fn(grid, |x| {
            1.0 + 0.3 * (pi * x[0]).sin() * (pi * x[1]).cos()
        })
        .unwrap();
        let m0 = VectorField::from_fn(grid, |x| {
            [0.2 * (pi * x[1]).sin(), -0.1 * (pi * x[0]).cos(), 0.0]
        })
        .unwrap();
        let mut state = HydroState::new(rho0, m0).unwrap();
        let mass0 = state.mass();
        let dt = stable_dt(&state, &cfg, &constitutive);
        for _ in 0..5 {
            let (next, _) = step(&state, dt, &cfg, &constitutive, &tables).unwrap();
            state = next;
            let rel = (state.mass() - mass0).abs() / mass0;
            assert!(rel <= 5e-14, "mass drifted by {rel} (relative)");
        }
    }

    #[test]
    fn poisson_force_matches_single_mode() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let pi = std::f64::consts::PI;
        let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.1 * (pi * x[0]).cos()).unwrap();
        let force = poisson_force(&rho).unwrap();
        // Phi = 0.1 cos(pi x)/pi^2, force = -rho dPhi/dx = rho 0.1 sin(pi x)/pi.
        let mut err = 0.0f64;
        for i in 0..grid.cell_count() {
            let x = grid.center(i)[0];
            let expect = (1.0 + 0.1 * (pi * x).cos()) * 0.1 * (pi * x).sin() / pi;
            err = err.max((force.component(0)[i] - expect).abs());
        }
        assert!(err <= 1e-12, "single-mode potential force off by {err}");

        // Self-force-free: the net potential force integrates to zero.
        let net = force.component_field(0).integral();
        assert!(net.abs() <= 1e-10, "net self-force {net}");

        let flat = ScalarField::constant(grid, 2.5).unwrap();
        assert!(poisson_force(&flat).unwrap().linf_norm() <= 1e-14);
    }

    #[test]
    fn alignment_vanishes_for_uniform_velocity() {
        let grid = TorusGrid::new(2, 12).unwrap();
        let constitutive = Constitutive {
            pressure: PressureLaw::Zero,
            attraction: InteractionKernel::Zero,
            communication: CommunicationKernel::Trig {
                base: 2.0,
                amplitude: 1.0,
                modes: [1, 1, 0],
            },
            friction: FrictionFunction::Constant { level: 1.0 },
        };
        let cfg = SchemeConfig::default();
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let pi = std::f64::consts::PI;
        let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.4 * (pi * x[0]).sin()).unwrap();
        let u0 = [0.3, -0.7, 0.0];
        let m = VectorField::from_fn(grid, |x| {
            let r = 1.0 + 0.4 * (pi * x[0]).sin();
            [r * u0[0], r * u0[1], 0.0]
        })
        .unwrap();
        let sources = compute_sources(&rho, &m, &constitutive, &tables, &cfg).unwrap();
        assert!(
            sources.alignment.linf_norm() <= 1e-12,
            "uniform velocity must silence alignment, got {}",
            sources.alignment.linf_norm()
        );
    }

    #[test]
    fn empty_run_returns_initial_state() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let constitutive = inert();
        let state = uniform_state(grid, 1.0, [0.25, 0.0, 0.0]);
        let traj = run(
            state.clone(),
            &SchemeConfig { pressureless: true, ..SchemeConfig::default() },
            &constitutive,
            &RunConfig { t_final: 0.0, output_dt: 0.1, fixed_dt: None },
        )
        .unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.steps, 0);
        assert_eq!(traj.states[0].rho.values(), state.rho.values());
    }

    #[test]
    fn oversized_fixed_step_is_reduced_and_counted() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let constitutive = inert();
        let state = uniform_state(grid, 1.0, [1.0, 0.0, 0.0]);
        let traj = run(
            state,
            &SchemeConfig { pressureless: true, ..SchemeConfig::default() },
            &constitutive,
            &RunConfig { t_final: 0.5, output_dt: 0.5, fixed_dt: Some(10.0) },
        )
        .unwrap();
        assert!(traj.dt_reductions > 0, "oversized fixed dt must be reduced");
        assert!((traj.states.last().unwrap().t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vacuum_fix_clamps_and_rejects() {
        let mut rho = vec![1.0, 5e-13, -5e-13, 0.5];
        let mut momentum = vec![vec![0.3, 0.2, 0.1, -0.4]];
        let events = vacuum_fix(&mut rho, &mut momentum, 1e-12, 0.0).unwrap();
        assert_eq!(events, 2, "both near-vacuum cells clamp");
        assert_eq!(rho[1], 1e-12);
        assert_eq!(rho[2], 1e-12);
        assert_eq!(momentum[0][1], 0.0);
        assert_eq!(momentum[0][2], 0.0);
        assert_eq!(momentum[0][0], 0.3, "healthy cells untouched");

        let mut bad = vec![1.0, -1e-9];
        let mut m = vec![vec![0.0, 0.0]];
        let err = vacuum_fix(&mut bad, &mut m, 1e-12, 1.5).unwrap_err();
        assert!(matches!(err, Error::NegativeDensity { .. }));
    }

    #[test]
    fn reference_integrator_keeps_constant_and_cruise_states() {
        let coarse = TorusGrid::new(1, 8).unwrap();
        let fine = TorusGrid::new(1, 32).unwrap();
        let mut constitutive = inert();
        constitutive.friction = FrictionFunction::Linear { alpha: 1.0 };
        let cfg = StrongReferenceConfig {
            t_final: 0.2,
            output_dt: 0.1,
            pressureless: true,
            ..StrongReferenceConfig::default()
        };
        let rho0 = ScalarField::constant(fine, 1.0).unwrap();
        let u0 = VectorField::from_fn(fine, |_| [1.0, 0.0, 0.0]).unwrap();
        let strong = strong_reference(&rho0, &u0, &constitutive, coarse, &cfg).unwrap();
        assert_eq!(strong.samples.len(), 3);
        assert!(strong.t_strong.is_none());
        for s in &strong.samples {
            for v in s.r.values() {
                assert!((v - 1.0).abs() <= 1e-12);
            }
            for v in s.u.component(0) {
                assert!((v - 1.0).abs() <= 1e-12);
            }
        }
        assert!((strong.rho_low - 1.0).abs() <= 1e-12);
        assert!((strong.rho_high - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn block_average_reduces_exactly() {
        let fine = TorusGrid::new(1, 16).unwrap();
        let coarse = TorusGrid::new(1, 4).unwrap();
        let f = ScalarField::from_fn(fine, |x| x[0]).unwrap();
        let avg = block_average(&f, coarse).unwrap();
        // Mean of 4 consecutive cell centers equals the coarse cell center.
        for i in 0..4 {
            let expect = coarse.center(i)[0];
            assert!((avg.values()[i] - expect).abs() <= 1e-15);
        }
        // Integral is preserved by averaging.
        assert!((avg.integral() - f.integral()).abs() <= 1e-14);
    }
}
