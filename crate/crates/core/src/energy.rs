//! Free-energy ledger for continuum trajectories: the total energy (kinetic
//! + internal + non-local interaction), the exact dissipation rate produced
//! by friction and alignment, and the running inequality residual that
//! decides whether a discrete trajectory is dissipative.
//!
//! The alignment dissipation uses the symmetrized pair form
//! `-1/2 \iint psi(x-y) rho(x) rho(y) |u(y)-u(x)|^2`, evaluated with three
//! convolutions instead of the literal double integral: expanding the square
//! and using the evenness of `psi` gives
//! `alignment = \int m . (psi*m) - \int rho |u|^2 (psi*rho)`,
//! which is non-positive whenever `psi >= 0`.

use crate::constitutive::Constitutive;
use crate::error::{Error, Result};
use crate::hydro::{HydroState, KernelTables, SchemeConfig, Trajectory};
use crate::torus::spectral::{periodic_convolve, periodic_convolve_components};
use crate::torus::compensated_sum;

/// Calibration constant of the discretization-aware dissipation tolerance
/// `tol = DISSIPATION_TOL_COEFF * (h + dt) * elapsed`. Calibrated once on the
/// standard smooth random scenario (first-order flux scheme) and frozen.
pub const DISSIPATION_TOL_COEFF: f64 = 2.0;

/// Discretization-aware acceptance threshold for the energy inequality.
pub fn dissipation_tolerance(h: f64, dt: f64, elapsed: f64) -> f64 {
    DISSIPATION_TOL_COEFF * (h + dt) * elapsed
}

/// Energy of one snapshot, split by origin.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub t: f64,
    /// `\int 1/2 |m|^2 / rho` (zero contribution from vacuum cells).
    pub kinetic: f64,
    /// `\int P(rho)`, the pressure potential.
    pub internal: f64,
    /// `1/2 \int rho (K * rho)`.
    pub interaction: f64,
    pub total: f64,
}

/// Instantaneous energy production rate of the forcing terms; dissipative
/// runs keep both non-positive (friction can pump energy below cruise speed,
/// which is exactly the regime the inequality residual monitors).
#[derive(Debug, Clone, Copy)]
pub struct DissipationRate {
    pub t: f64,
    /// `\int rho |u|^2 (1 - H(|u|^2))`.
    pub friction_term: f64,
    /// `-1/2 \iint psi rho rho |u(y) - u(x)|^2 <= 0` for `psi >= 0`.
    pub alignment_term: f64,
}

impl DissipationRate {
    pub fn total(&self) -> f64 {
        self.friction_term + self.alignment_term
    }
}

/// Evaluates the energy breakdown of a state by cell quadrature; the
/// interaction term uses one convolution.
pub fn total_energy(
    state: &HydroState,
    constitutive: &Constitutive,
    tables: &KernelTables,
    vacuum_floor: f64,
) -> Result<EnergyBreakdown> {
    let grid = state.grid();
    let dim = grid.dim();
    let rho = state.rho.values();
    let volume = grid.cell_volume();

    let kinetic_density = (0..rho.len()).map(|i| {
        if rho[i] > vacuum_floor {
            let mut msq = 0.0;
            for a in 0..dim {
                let m = state.momentum.component(a)[i];
                msq += m * m;
            }
            0.5 * msq / rho[i]
        } else {
            0.0
        }
    });
    let kinetic = volume * compensated_sum(kinetic_density);

    let internal = if constitutive.pressure.is_zero() {
        0.0
    } else {
        let mut densities = Vec::with_capacity(rho.len());
        for &r in rho {
            densities.push(constitutive.pressure.potential(r.max(0.0))?);
        }
        volume * compensated_sum(densities.into_iter())
    };

    let interaction = match &tables.attraction_value {
        None => 0.0,
        Some(kernel) => {
            let conv = periodic_convolve(kernel, &state.rho)?;
            let c = conv.values();
            0.5 * volume * compensated_sum((0..rho.len()).map(|i| rho[i] * c[i]))
        }
    };

    Ok(EnergyBreakdown {
        t: state.t,
        kinetic,
        internal,
        interaction,
        total: kinetic + internal + interaction,
    })
}

/// Evaluates both dissipation terms of a state.
pub fn dissipation_rate(
    state: &HydroState,
    constitutive: &Constitutive,
    tables: &KernelTables,
    vacuum_floor: f64,
) -> Result<DissipationRate> {
    let grid = state.grid();
    let dim = grid.dim();
    let rho = state.rho.values();
    let volume = grid.cell_volume();
    let u = state.velocity(vacuum_floor);

    let friction_density = (0..rho.len()).map(|i| {
        let mut speed_sq = 0.0;
        for a in 0..dim {
            let ua = u.component(a)[i];
            speed_sq += ua * ua;
        }
        rho[i] * speed_sq * (1.0 - constitutive.friction.evaluate(speed_sq))
    });
    let friction_term = volume * compensated_sum(friction_density);

    let alignment_term = match &tables.communication {
        None => 0.0,
        Some(psi) => {
            let psi_m = periodic_convolve_components(psi, &state.momentum)?;
            let psi_rho = periodic_convolve(psi, &state.rho)?;
            let pr = psi_rho.values();
            // \int m.(psi*m) - \int (m.u)(psi*rho), the expanded pair form.
            let cross = compensated_sum((0..rho.len()).map(|i| {
                let mut acc = 0.0;
                for a in 0..dim {
                    acc += state.momentum.component(a)[i] * psi_m.component(a)[i];
                }
                acc
            }));
            let diagonal = compensated_sum((0..rho.len()).map(|i| {
                let mut mu = 0.0;
                for a in 0..dim {
                    mu += state.momentum.component(a)[i] * u.component(a)[i];
                }
                mu * pr[i]
            }));
            volume * (cross - diagonal)
        }
    };

    Ok(DissipationRate { t: state.t, friction_term, alignment_term })
}

/// Energy audit of a whole trajectory.
#[derive(Debug, Clone)]
pub struct DissipationReport {
    pub energies: Vec<EnergyBreakdown>,
    pub rates: Vec<DissipationRate>,
    /// `residual(tau_k) = E(tau_k) - E(0) - \int_0^tau_k (friction+alignment)`
    /// with trapezoid quadrature on the output grid.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Threshold the residuals were judged against.
    pub tolerance: f64,
    /// True iff every residual stays at or below the tolerance.
    pub dissipative: bool,
}

/// Evaluates the energy identity along a trajectory's output grid and judges
/// the dissipative-solution inequality against the discretization-aware
/// tolerance.
pub fn d3_residual(
    trajectory: &Trajectory,
    constitutive: &Constitutive,
    cfg: &SchemeConfig,
) -> Result<DissipationReport> {
    let states = &trajectory.states;
    if states.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let grid = states[0].grid();
    let tables = KernelTables::new(grid, constitutive)?;

    let mut energies = Vec::with_capacity(states.len());
    let mut rates = Vec::with_capacity(states.len());
    for s in states {
        energies.push(total_energy(s, constitutive, &tables, cfg.vacuum_floor)?);
        rates.push(dissipation_rate(s, constitutive, &tables, cfg.vacuum_floor)?);
    }

    let mut residuals = Vec::with_capacity(states.len());
    let mut integral = 0.0f64;
    residuals.push(0.0);
    for k in 1..states.len() {
        let dt_out = states[k].t - states[k - 1].t;
        integral += 0.5 * dt_out * (rates[k - 1].total() + rates[k].total());
        residuals.push(energies[k].total - energies[0].total - integral);
    }

    let elapsed = states.last().unwrap().t - states[0].t;
    let dt_eff = if trajectory.steps > 0 {
        elapsed / trajectory.steps as f64
    } else {
        trajectory.output_dt()
    };
    let tolerance = dissipation_tolerance(grid.spacing(), dt_eff, elapsed.max(f64::MIN_POSITIVE));
    let max_residual = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DissipationReport {
        energies,
        rates,
        residuals,
        max_residual,
        tolerance,
        dissipative: max_residual <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{
        CommunicationKernel, FrictionFunction, InteractionKernel, PressureLaw,
    };
    use crate::torus::{ScalarField, TorusGrid, VectorField};

    fn state_from(
        grid: TorusGrid,
        rho: impl Fn(&[f64]) -> f64,
        u: impl Fn(&[f64]) -> [f64; 3],
    ) -> HydroState {
        let rho_f = ScalarField::from_fn(grid, &rho).unwrap();
        let m = VectorField::from_fn(grid, |x| {
            let r = rho(x);
            let v = u(x);
            [r * v[0], r * v[1], r * v[2]]
        })
        .unwrap();
        HydroState::new(rho_f, m).unwrap()
    }

    fn materials(
        pressure: PressureLaw,
        attraction: InteractionKernel,
        communication: CommunicationKernel,
        friction: FrictionFunction,
    ) -> Constitutive {
        Constitutive { pressure, attraction, communication, friction }
    }

    #[test]
    fn zero_energy_for_rest_state_with_mean_free_kernel() {
        let grid = TorusGrid::new(2, 8).unwrap();
        let constitutive = materials(
            PressureLaw::Zero,
            InteractionKernel::Trig { amplitude: 0.8, modes: [1, 1, 0] },
            CommunicationKernel::Zero,
            FrictionFunction::Constant { level: 1.0 },
        );
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let state = state_from(grid, |_| 1.0, |_| [0.0; 3]);
        let e = total_energy(&state, &constitutive, &tables, 1e-12).unwrap();
        assert_eq!(e.kinetic, 0.0);
        assert_eq!(e.internal, 0.0);
        assert!(e.interaction.abs() <= 1e-13, "mean-free kernel on constant density");
        assert!(e.total.abs() <= 1e-13);
    }

    #[test]
    fn kinetic_energy_of_unit_stream() {
        for dim in 1..=2usize {
            let grid = TorusGrid::new(dim, 8).unwrap();
            let constitutive = materials(
                PressureLaw::Zero,
                InteractionKernel::Zero,
                CommunicationKernel::Zero,
                FrictionFunction::Constant { level: 1.0 },
            );
            let tables = KernelTables::new(grid, &constitutive).unwrap();
            let state = state_from(grid, |_| 1.0, |_| [1.0, 0.0, 0.0]);
            let e = total_energy(&state, &constitutive, &tables, 1e-12).unwrap();
            let expect = 0.5 * grid.domain_volume();
            assert!(
                (e.kinetic - expect).abs() <= 1e-12,
                "kinetic {} vs {} in dim {dim}",
                e.kinetic,
                expect
            );
        }
    }

    #[test]
    fn dissipation_rate_trivial_states() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let constitutive = materials(
            PressureLaw::Zero,
            InteractionKernel::Zero,
            CommunicationKernel::Constant { level: 2.0 },
            FrictionFunction::Linear { alpha: 1.0 },
        );
        let tables = KernelTables::new(grid, &constitutive).unwrap();

        let rest = state_from(grid, |_| 1.0, |_| [0.0; 3]);
        let r = dissipation_rate(&rest, &constitutive, &tables, 1e-12).unwrap();
        assert_eq!(r.friction_term, 0.0);
        assert_eq!(r.alignment_term, 0.0);

        let pi = std::f64::consts::PI;
        let uniform = state_from(grid, |x| 1.0 + 0.3 * (pi * x[0]).sin(), |_| [0.4, 0.0, 0.0]);
        let r = dissipation_rate(&uniform, &constitutive, &tables, 1e-12).unwrap();
        assert!(r.alignment_term.abs() <= 1e-12, "uniform velocity: {}", r.alignment_term);

        // Exact cruise speed: H(1) = 1 kills the friction integrand.
        let cruise = state_from(grid, |x| 1.0 + 0.3 * (pi * x[0]).sin(), |_| [1.0, 0.0, 0.0]);
        let r = dissipation_rate(&cruise, &constitutive, &tables, 1e-12).unwrap();
        assert_eq!(r.friction_term, 0.0, "cruise manifold friction must vanish exactly");
    }

    #[test]
    fn alignment_term_is_sign_definite() {
        let grid = TorusGrid::new(2, 12).unwrap();
        let constitutive = materials(
            PressureLaw::Zero,
            InteractionKernel::Zero,
            CommunicationKernel::Trig { base: 1.5, amplitude: 1.2, modes: [1, 2, 0] },
            FrictionFunction::Constant { level: 1.0 },
        );
        let tables = KernelTables::new(grid, &constitutive).unwrap();
        let pi = std::f64::consts::PI;
        for seed in 0..4 {
            let phase = seed as f64 * 0.37;
            let state = state_from(
                grid,
                |x| 1.0 + 0.5 * (pi * x[0] + phase).sin() * (2.0 * pi * x[1]).cos(),
                |x| [(pi * x[1] + phase).cos(), (2.0 * pi * x[0]).sin(), 0.0],
            );
            let r = dissipation_rate(&state, &constitutive, &tables, 1e-12).unwrap();
            assert!(
                r.alignment_term <= 1e-12,
                "alignment dissipation must be non-positive, got {}",
                r.alignment_term
            );
        }
    }

    #[test]
    fn steady_state_has_zero_residual() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let constitutive = materials(
            PressureLaw::Zero,
            InteractionKernel::Zero,
            CommunicationKernel::Zero,
            FrictionFunction::Constant { level: 1.0 },
        );
        let state = state_from(grid, |_| 1.0, |_| [0.0; 3]);
        let mut states = Vec::new();
        for k in 0..5 {
            let mut s = state.clone();
            s.t = 0.1 * k as f64;
            states.push(s);
        }
        let traj = Trajectory { states, vacuum_events: 0, steps: 40, dt_reductions: 0 };
        let cfg = SchemeConfig::default();
        let report = d3_residual(&traj, &constitutive, &cfg).unwrap();
        assert!(report.max_residual.abs() <= 1e-13);
        assert!(report.dissipative);
    }

    #[test]
    fn injected_energy_is_flagged_as_non_dissipative() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let constitutive = materials(
            PressureLaw::Zero,
            InteractionKernel::Zero,
            CommunicationKernel::Zero,
            FrictionFunction::Constant { level: 1.0 },
        );
        // Velocity grows linearly in time while both dissipation terms are
        // identically zero: the ledger must reject the trajectory.
        let mut states = Vec::new();
        for k in 0..5 {
            let t = 0.1 * k as f64;
            let mut s = state_from(grid, |_| 1.0, |_| [1.0 + t, 0.0, 0.0]);
            s.t = t;
            states.push(s);
        }
        let traj = Trajectory { states, vacuum_events: 0, steps: 40, dt_reductions: 0 };
        let report = d3_residual(&traj, &constitutive, &SchemeConfig::default()).unwrap();
        assert!(report.max_residual > 0.1, "energy injection must show up");
        assert!(!report.dissipative);
    }
}
