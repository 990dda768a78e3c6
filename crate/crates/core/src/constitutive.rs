//! Model ingredients: pressure law, interaction and communication kernels,
//! and the speed-regulating friction function.
//!
//! Every ingredient is a closed-form family. Pressure laws carry their
//! potential `P(rho) = rho * Int_1^rho p(z)/z^2 dz` in closed form together with
//! the defining identity `p = rho P' - P`. Kernels evaluate pointwise on
//! displacement vectors and can be sampled onto the displacement lattice of a
//! [`TorusGrid`] for spectral convolution; sampling validates symmetry and
//! rejects kernels that are singular inside the fundamental cell. The friction
//! function `H` fixes the cruise speed as the unique positive root of
//! `H(s^2) = 1`, and splits into a compactly supported part plus a
//! non-decreasing part above a caller-chosen threshold.

use crate::error::{Error, Result};
use crate::torus::{ScalarField, TorusGrid, VectorField};

/// Barotropic pressure as a function of density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureLaw {
    /// `p(rho) = coeff * rho^gamma` with `coeff >= 0`, `gamma >= 1`.
    PowerLaw { coeff: f64, gamma: f64 },
    /// Pressureless dynamics, `p = 0`.
    Zero,
}

/// Which analysis routes accept a pressure law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PressureAdmissibility {
    /// Strictly monotone with coercive potential: required by the
    /// weak-strong stability machinery.
    pub stability: bool,
    /// Continuous with `p(0) = 0`: enough for the subsolution audit.
    pub audit: bool,
}

impl PressureLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PressureLaw::PowerLaw { coeff, gamma } => {
                if !coeff.is_finite() || coeff < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "pressure coefficient must be finite and >= 0, got {coeff}"
                    )));
                }
                if !gamma.is_finite() || gamma < 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "pressure exponent must be finite and >= 1, got {gamma}"
                    )));
                }
                Ok(())
            }
            PressureLaw::Zero => Ok(()),
        }
    }

    /// `p(rho)`.
    pub fn pressure(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::PowerLaw { coeff, gamma } => coeff * rho.powf(gamma),
            PressureLaw::Zero => 0.0,
        }
    }

    /// `p'(rho)`.
    pub fn pressure_derivative(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::PowerLaw { coeff, gamma } => coeff * gamma * rho.powf(gamma - 1.0),
            PressureLaw::Zero => 0.0,
        }
    }

    /// Pressure potential `P(rho)`; the closed forms are
    /// `coeff (rho^gamma - rho) / (gamma - 1)` for `gamma > 1` and
    /// `coeff rho ln rho` for `gamma = 1` (with `0 ln 0 = 0`).
    pub fn potential(&self, rho: f64) -> Result<f64> {
        if rho < 0.0 {
            return Err(Error::InvalidInput(format!(
                "pressure potential evaluated at negative density {rho}"
            )));
        }
        Ok(match *self {
            PressureLaw::PowerLaw { coeff, gamma } => {
                if gamma > 1.0 {
                    coeff * (rho.powf(gamma) - rho) / (gamma - 1.0)
                } else if rho == 0.0 {
                    0.0
                } else {
                    coeff * rho * rho.ln()
                }
            }
            PressureLaw::Zero => 0.0,
        })
    }

    /// `P'(rho)`; requires `rho > 0` when `gamma = 1` (logarithmic divergence at 0).
    pub fn potential_derivative(&self, rho: f64) -> f64 {
        match *self {
            PressureLaw::PowerLaw { coeff, gamma } => {
                if gamma > 1.0 {
                    coeff * (gamma * rho.powf(gamma - 1.0) - 1.0) / (gamma - 1.0)
                } else {
                    coeff * (rho.ln() + 1.0)
                }
            }
            PressureLaw::Zero => 0.0,
        }
    }

    /// `P''(rho) = p'(rho) / rho` for `rho > 0`.
    pub fn potential_second_derivative(&self, rho: f64) -> f64 {
        self.pressure_derivative(rho) / rho
    }

    /// Sound speed `sqrt(p'(rho))`.
    pub fn sound_speed(&self, rho: f64) -> f64 {
        self.pressure_derivative(rho.max(0.0)).max(0.0).sqrt()
    }

    /// Bregman gap `P(rho) - P'(r)(rho - r) - P(r)`, the potential part of the
    /// relative energy density. Non-negative for convex `P`.
    pub fn bregman_gap(&self, rho: f64, r: f64) -> Result<f64> {
        Ok(self.potential(rho)? - self.potential_derivative(r) * (rho - r) - self.potential(r)?)
    }

    pub fn admissibility(&self) -> PressureAdmissibility {
        let stability = match *self {
            // Strict monotonicity p' > 0 and the coercivity of P demand a
            // genuine power law; a zero coefficient degenerates to p = 0.
            PressureLaw::PowerLaw { coeff, gamma } => coeff > 0.0 && gamma >= 1.0,
            PressureLaw::Zero => false,
        };
        // Continuity and p(0) = 0 hold for the whole closed-form family.
        PressureAdmissibility { stability, audit: true }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            PressureLaw::PowerLaw { coeff, .. } => coeff == 0.0,
            PressureLaw::Zero => true,
        }
    }
}

/// Pairwise attraction-repulsion potential `K` evaluated on displacement
/// vectors `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InteractionKernel {
    Zero,
    /// `amplitude * prod_a cos(modes[a] * pi * z_a)` over the active axes:
    /// smooth and periodic on the torus for any integer modes.
    Trig { amplitude: f64, modes: [u32; 3] },
    /// Pure quadratic confinement `strength * |z|^2 / 2` (harmonic pair force
    /// `strength * z`).
    Quadratic { strength: f64 },
    /// `|z|^attract / attract - |z|^repulse / repulse`, with `repulse = 0`
    /// encoding the logarithmic repulsion `-ln|z|`. Covers the flock
    /// families: `attract = 2, repulse = 0` balances quadratic confinement
    /// against log repulsion; `repulse = 2 - N` is the Newtonian case.
    PowerLaw { attract_exp: f64, repulse_exp: f64 },
}

fn trig_value(amplitude: f64, modes: &[u32; 3], dim: usize, z: &[f64; 3]) -> f64 {
    let mut v = amplitude;
    for a in 0..dim {
        v *= (modes[a] as f64 * std::f64::consts::PI * z[a]).cos();
    }
    v
}

impl InteractionKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InteractionKernel::Zero => Ok(()),
            InteractionKernel::Trig { amplitude, .. } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidInput("non-finite kernel amplitude".into()));
                }
                Ok(())
            }
            InteractionKernel::Quadratic { strength } => {
                if !strength.is_finite() {
                    return Err(Error::InvalidInput("non-finite kernel strength".into()));
                }
                Ok(())
            }
            InteractionKernel::PowerLaw { attract_exp, repulse_exp } => {
                if !(attract_exp.is_finite() && repulse_exp.is_finite()) {
                    return Err(Error::InvalidInput("non-finite kernel exponent".into()));
                }
                if attract_exp <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "attraction exponent must be positive, got {attract_exp}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `K(z)`; all kinds are even in `z`.
    pub fn value(&self, dim: usize, z: &[f64; 3]) -> f64 {
        match *self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::Trig { amplitude, ref modes } => {
                trig_value(amplitude, modes, dim, z)
            }
            InteractionKernel::Quadratic { strength } => {
                let mut r2 = 0.0;
                for za in z.iter().take(dim) {
                    r2 += za * za;
                }
                0.5 * strength * r2
            }
            InteractionKernel::PowerLaw { attract_exp, repulse_exp } => {
                let r = norm(dim, z);
                let attract = r.powf(attract_exp) / attract_exp;
                let repulse = if repulse_exp == 0.0 {
                    r.ln()
                } else {
                    r.powf(repulse_exp) / repulse_exp
                };
                attract - repulse
            }
        }
    }

    /// `grad K(z)`. Singular kernels return 0 at `z = 0`: coincident-pair
    /// forces are zeroed (a measure-zero event for the particle model).
    pub fn gradient(&self, dim: usize, z: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        match *self {
            InteractionKernel::Zero => {}
            InteractionKernel::Trig { amplitude, ref modes } => {
                for a in 0..dim {
                    let ka = modes[a] as f64 * std::f64::consts::PI;
                    let mut v = -amplitude * ka * (ka * z[a]).sin();
                    for b in 0..dim {
                        if b != a {
                            let kb = modes[b] as f64 * std::f64::consts::PI;
                            v *= (kb * z[b]).cos();
                        }
                    }
                    g[a] = v;
                }
            }
            InteractionKernel::Quadratic { strength } => {
                for a in 0..dim {
                    g[a] = strength * z[a];
                }
            }
            InteractionKernel::PowerLaw { attract_exp, repulse_exp } => {
                let mut r2 = 0.0;
                for za in z.iter().take(dim) {
                    r2 += za * za;
                }
                if r2 == 0.0 {
                    return g;
                }
                // grad(|z|^a / a) = |z|^(a-2) z; the log convention
                // repulse = 0 lands on the same formula since
                // grad(ln|z|) = z / |z|^2.
                let scale = pow_half_exponent(r2, attract_exp - 2.0)
                    - pow_half_exponent(r2, repulse_exp - 2.0);
                for a in 0..dim {
                    g[a] = scale * z[a];
                }
            }
        }
        g
    }

    /// All implemented kinds satisfy `K(z) = K(-z)`.
    pub fn is_symmetric(&self) -> bool {
        true
    }

    pub fn is_zero(&self) -> bool {
        matches!(
            *self,
            InteractionKernel::Zero
                | InteractionKernel::Trig { amplitude: 0.0, .. }
                | InteractionKernel::Quadratic { strength: 0.0 }
        )
    }

    /// Sample `K` and `grad K` on the displacement lattice of `grid`,
    /// validating finiteness and evenness, then enforcing exact evenness of
    /// the values (anti-evenness of the gradient) so that spectral
    /// convolutions preserve real symmetric structure to machine precision.
    pub fn sample_on_torus(&self, grid: TorusGrid) -> Result<(ScalarField, VectorField)> {
        let values = sample_displacement_lattice(grid, |z| self.value(grid.dim(), z))?;
        let values = symmetrize_even(grid, values).map_err(|_| {
            Error::SingularOnTorus(format!(
                "interaction kernel {self:?} is not even on the displacement lattice"
            ))
        })?;
        let mut components = Vec::with_capacity(grid.dim());
        for a in 0..grid.dim() {
            let plane = sample_displacement_lattice(grid, |z| self.gradient(grid.dim(), z)[a])?;
            let plane = antisymmetrize_odd(grid, plane).map_err(|_| {
                Error::SingularOnTorus(format!(
                    "interaction kernel gradient component {a} of {self:?} is not odd"
                ))
            })?;
            components.push(ScalarField::from_values(grid, plane)?);
        }
        Ok((
            ScalarField::from_values(grid, values)?,
            VectorField::from_components(components)?,
        ))
    }
}

/// Non-negative communication weight `psi` for velocity alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CommunicationKernel {
    Zero,
    /// `psi = level >= 0` everywhere (all-to-all averaging).
    Constant { level: f64 },
    /// `base + amplitude * prod_a cos(modes[a] pi z_a)`; requires
    /// `base >= |amplitude|` so the weight stays non-negative.
    Trig { base: f64, amplitude: f64, modes: [u32; 3] },
}

impl CommunicationKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CommunicationKernel::Zero => Ok(()),
            CommunicationKernel::Constant { level } => {
                if !level.is_finite() || level < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "communication level must be finite and >= 0, got {level}"
                    )));
                }
                Ok(())
            }
            CommunicationKernel::Trig { base, amplitude, .. } => {
                if !(base.is_finite() && amplitude.is_finite()) {
                    return Err(Error::InvalidInput("non-finite communication kernel".into()));
                }
                if base < amplitude.abs() {
                    return Err(Error::InvalidInput(format!(
                        "communication weight dips negative: base {base} < |amplitude| {}",
                        amplitude.abs()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, dim: usize, z: &[f64; 3]) -> f64 {
        match *self {
            CommunicationKernel::Zero => 0.0,
            CommunicationKernel::Constant { level } => level,
            CommunicationKernel::Trig { base, amplitude, ref modes } => {
                base + trig_value(amplitude, modes, dim, z)
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            CommunicationKernel::Zero => true,
            CommunicationKernel::Constant { level } => level == 0.0,
            CommunicationKernel::Trig { base, amplitude, .. } => base == 0.0 && amplitude == 0.0,
        }
    }

    /// Sample onto the displacement lattice, validating non-negativity and
    /// enforcing exact evenness.
    pub fn sample_on_torus(&self, grid: TorusGrid) -> Result<ScalarField> {
        let values = sample_displacement_lattice(grid, |z| self.value(grid.dim(), z))?;
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "communication weight negative on the sample lattice ({v})"
            )));
        }
        let values = symmetrize_even(grid, values).map_err(|_| {
            Error::SingularOnTorus(format!(
                "communication kernel {self:?} is not even on the displacement lattice"
            ))
        })?;
        ScalarField::from_values(grid, values)
    }
}

/// Sample a closure on the displacement lattice: entry `c` holds the value at
/// the wrapped offset `c * h`, so index 0 is the zero displacement and the
/// circular convolution theorem applies phase-correctly against cell-centered
/// fields.
fn sample_displacement_lattice(
    grid: TorusGrid,
    f: impl Fn(&[f64; 3]) -> f64,
) -> Result<Vec<f64>> {
    let mut values = vec![0.0; grid.cell_count()];
    for (idx, value) in values.iter_mut().enumerate() {
        let z = grid.offset(idx);
        let v = f(&z);
        if !v.is_finite() {
            return Err(Error::SingularOnTorus(format!(
                "kernel sample at displacement {:?} is {v}; use particle flock mode \
                 for whole-space singular kernels",
                &z[..grid.dim()]
            )));
        }
        *value = v;
    }
    Ok(values)
}

const KERNEL_SYMMETRY_TOL: f64 = 1e-12;

/// Verify `k[c] = k[-c]` to tolerance and enforce it exactly by averaging.
fn symmetrize_even(grid: TorusGrid, mut values: Vec<f64>) -> std::result::Result<Vec<f64>, ()> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let n = grid.cells_per_axis();
    for idx in 0..values.len() {
        let multi = grid.multi_of(idx);
        let mut mirror = [0usize; 3];
        for a in 0..grid.dim() {
            mirror[a] = (n - multi[a]) % n;
        }
        let j = grid.index_of(mirror);
        if j < idx {
            continue;
        }
        if (values[idx] - values[j]).abs() > KERNEL_SYMMETRY_TOL * scale {
            return Err(());
        }
        let avg = 0.5 * (values[idx] + values[j]);
        values[idx] = avg;
        values[j] = avg;
    }
    Ok(values)
}

/// Verify `g[c] = -g[-c]` to tolerance and enforce it exactly; self-paired
/// lattice points (zero and half-period displacements) are forced to 0.
fn antisymmetrize_odd(grid: TorusGrid, mut values: Vec<f64>) -> std::result::Result<Vec<f64>, ()> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let n = grid.cells_per_axis();
    for idx in 0..values.len() {
        let multi = grid.multi_of(idx);
        let mut mirror = [0usize; 3];
        for a in 0..grid.dim() {
            mirror[a] = (n - multi[a]) % n;
        }
        let j = grid.index_of(mirror);
        if j < idx {
            continue;
        }
        if (values[idx] + values[j]).abs() > KERNEL_SYMMETRY_TOL * scale {
            return Err(());
        }
        if j == idx {
            values[idx] = 0.0;
        } else {
            let anti = 0.5 * (values[idx] - values[j]);
            values[idx] = anti;
            values[j] = -anti;
        }
    }
    Ok(values)
}

/// Speed regulation `H(Z)` acting through the force `(1 - H(|u|^2)) u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrictionFunction {
    /// `H = alpha Z`: the classical self-propulsion law with cruise speed
    /// `1/sqrt(alpha)`. Unbounded.
    Linear { alpha: f64 },
    /// `H = plateau * Z / (halfway + Z)`: bounded by `plateau`, non-decreasing.
    Saturating { plateau: f64, halfway: f64 },
    /// `H = level` identically.
    Constant { level: f64 },
    /// Saturating plus a Gaussian bump `bump_amplitude *
    /// exp(-((Z - bump_center)/bump_width)^2)`: non-monotone near the bump,
    /// exercising the split into compact + monotone parts.
    SaturatingWithBump {
        plateau: f64,
        halfway: f64,
        bump_amplitude: f64,
        bump_center: f64,
        bump_width: f64,
    },
}

impl FrictionFunction {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FrictionFunction::Linear { alpha } => alpha.is_finite() && alpha >= 0.0,
            FrictionFunction::Saturating { plateau, halfway } => {
                plateau.is_finite() && plateau >= 0.0 && halfway.is_finite() && halfway > 0.0
            }
            FrictionFunction::Constant { level } => level.is_finite() && level >= 0.0,
            FrictionFunction::SaturatingWithBump {
                plateau,
                halfway,
                bump_amplitude,
                bump_center,
                bump_width,
            } => {
                plateau.is_finite()
                    && plateau >= 0.0
                    && halfway > 0.0
                    && bump_amplitude.is_finite()
                    && bump_amplitude >= 0.0
                    && bump_center.is_finite()
                    && bump_center >= 0.0
                    && bump_width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid friction parameters: {self:?}")))
        }
    }

    /// `H(Z)` for `Z >= 0`.
    pub fn evaluate(&self, z: f64) -> f64 {
        match *self {
            FrictionFunction::Linear { alpha } => alpha * z,
            FrictionFunction::Saturating { plateau, halfway } => plateau * z / (halfway + z),
            FrictionFunction::Constant { level } => level,
            FrictionFunction::SaturatingWithBump {
                plateau,
                halfway,
                bump_amplitude,
                bump_center,
                bump_width,
            } => {
                let t = (z - bump_center) / bump_width;
                plateau * z / (halfway + z) + bump_amplitude * (-t * t).exp()
            }
        }
    }

    /// `H'(Z)`.
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            FrictionFunction::Linear { alpha } => alpha,
            FrictionFunction::Saturating { plateau, halfway } => {
                plateau * halfway / ((halfway + z) * (halfway + z))
            }
            FrictionFunction::Constant { .. } => 0.0,
            FrictionFunction::SaturatingWithBump {
                plateau,
                halfway,
                bump_amplitude,
                bump_center,
                bump_width,
            } => {
                let t = (z - bump_center) / bump_width;
                plateau * halfway / ((halfway + z) * (halfway + z))
                    - 2.0 * t / bump_width * bump_amplitude * (-t * t).exp()
            }
        }
    }

    /// `sup_Z H(Z)`, or `None` when unbounded.
    pub fn sup_bound(&self) -> Option<f64> {
        match *self {
            FrictionFunction::Linear { alpha } => {
                if alpha == 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            FrictionFunction::Saturating { plateau, .. } => Some(plateau),
            FrictionFunction::Constant { level } => Some(level),
            FrictionFunction::SaturatingWithBump { plateau, bump_amplitude, .. } => {
                // Coarse but valid: the bump adds at most its amplitude.
                Some(plateau + bump_amplitude)
            }
        }
    }

    /// Unique `s > 0` with `H(s^2) = 1`, found by bracketing and bisection.
    pub fn cruise_speed(&self) -> Result<f64> {
        const Z_SEARCH_CAP: f64 = 1e12;
        if self.evaluate(0.0) >= 1.0 {
            return Err(Error::NoCruiseSpeed { searched_up_to: 0.0 });
        }
        let mut hi = 1.0;
        while self.evaluate(hi) <= 1.0 {
            hi *= 2.0;
            if hi > Z_SEARCH_CAP {
                return Err(Error::NoCruiseSpeed { searched_up_to: Z_SEARCH_CAP });
            }
        }
        let mut lo = 0.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.evaluate(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).sqrt())
    }
}

/// Number of points used when validating monotonicity for the friction split.
const SPLIT_SAMPLES: usize = 10_000;

/// Decomposition `H = compact + monotone`: `monotone(Z) = H(max(Z, threshold))`
/// is constant below the threshold and follows `H` above it; `compact = H -
/// monotone` vanishes for `Z > threshold`. Summing the parts reconstructs `H`
/// up to one rounding error.
#[derive(Debug, Clone, Copy)]
pub struct FrictionSplit {
    base: FrictionFunction,
    threshold: f64,
}

impl FrictionSplit {
    /// Build the split, validating that `H` is non-decreasing above
    /// `threshold` on a sample grid.
    pub fn new(base: FrictionFunction, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::InvalidInput(format!(
                "friction split threshold must be finite and >= 0, got {threshold}"
            )));
        }
        let span = (4.0 * threshold).max(10.0);
        let mut prev = base.evaluate(threshold);
        let scale = prev.abs().max(1.0);
        for k in 1..=SPLIT_SAMPLES {
            let z = threshold + span * k as f64 / SPLIT_SAMPLES as f64;
            let value = base.evaluate(z);
            if value < prev - 1e-12 * scale || base.derivative(z) < -1e-12 * scale {
                return Err(Error::InvalidInput(format!(
                    "friction is not non-decreasing above threshold {threshold}: \
                     H({z}) = {value} after {prev}"
                )));
            }
            prev = value;
        }
        Ok(Self { base, threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Compactly supported part; zero for `Z > threshold`.
    pub fn compact_part(&self, z: f64) -> f64 {
        self.base.evaluate(z) - self.monotone_part(z)
    }

    /// Non-decreasing part, constant below the threshold.
    pub fn monotone_part(&self, z: f64) -> f64 {
        self.base.evaluate(z.max(self.threshold))
    }
}

/// Complete set of model ingredients for one scenario.
#[derive(Debug, Clone, Copy)]
pub struct Constitutive {
    pub pressure: PressureLaw,
    pub attraction: InteractionKernel,
    pub communication: CommunicationKernel,
    pub friction: FrictionFunction,
}

impl Constitutive {
    pub fn new(
        pressure: PressureLaw,
        attraction: InteractionKernel,
        communication: CommunicationKernel,
        friction: FrictionFunction,
    ) -> Result<Self> {
        pressure.validate()?;
        attraction.validate()?;
        communication.validate()?;
        friction.validate()?;
        Ok(Self { pressure, attraction, communication, friction })
    }

    /// Frictionless, force-free, pressureless ingredients.
    pub fn inert() -> Self {
        Self {
            pressure: PressureLaw::Zero,
            attraction: InteractionKernel::Zero,
            communication: CommunicationKernel::Zero,
            friction: FrictionFunction::Constant { level: 1.0 },
        }
    }
}

fn norm(dim: usize, z: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..dim {
        s += z[a] * z[a];
    }
    s.sqrt()
}

/// `(r2)^(e/2)` with fast paths for the exponents the flock kernels hit in
/// their pair loops (`e = 0` for quadratic attraction, `e = -2` for log
/// repulsion): `powf` in the inner O(n^2) loop would dominate the runtime.
#[inline]
fn pow_half_exponent(r2: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == -2.0 {
        1.0 / r2
    } else if e == 2.0 {
        r2
    } else if e == -1.0 {
        1.0 / r2.sqrt()
    } else if e == 1.0 {
        r2.sqrt()
    } else {
        r2.powf(0.5 * e)
    }
}
