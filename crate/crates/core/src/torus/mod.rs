//! Cell-centered fields on the flat torus `[-1, 1)^N`, `N in {1, 2, 3}`.
//!
//! Every axis carries the same even number of cells `n >= 4` with spacing
//! `h = 2 / n`; cell centers sit at `-1 + (j + 1/2) h`. Scalar, vector and
//! symmetric-tensor fields store one `f64` per cell and component in row-major
//! order, so the linear index of a cell is `((i0 * n) + i1) * n + i2` with the
//! leading `dim` indices in use.
//!
//! Two sampling lattices appear throughout:
//!
//! * **cell centers** for ordinary fields, and
//! * the **displacement lattice** `{ wrap(c * h) }` for convolution kernels,
//!   so that the discrete circular convolution pairs a kernel sample at offset
//!   `(i - j) h` with the field value in cell `j` (see [`spectral`]).
//!
//! Reductions (integrals, norms) use compensated summation so their error
//! stays near machine precision independent of grid size.

pub mod eigen;
pub mod snapshot;
pub mod spectral;

use crate::error::{Error, Result};

/// Uniform cell-centered grid on the torus `[-1, 1)^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    cells_per_axis: usize,
}

impl TorusGrid {
    /// Axis period of the torus (each axis is `[-1, 1)`).
    pub const PERIOD: f64 = 2.0;

    /// Creates a grid; `dim` must be 1, 2 or 3 and `cells_per_axis` even and
    /// at least 4.
    pub fn new(dim: usize, cells_per_axis: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if cells_per_axis < 4 || cells_per_axis % 2 != 0 {
            return Err(Error::InvalidCellCount(cells_per_axis));
        }
        Ok(TorusGrid {
            dim,
            cells_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// Grid spacing `h = 2 / n`, identical on every axis.
    pub fn spacing(&self) -> f64 {
        Self::PERIOD / self.cells_per_axis as f64
    }

    /// Total number of cells `n^dim`.
    pub fn cell_count(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    /// Volume of a single cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Volume of the whole torus, `2^dim`.
    pub fn domain_volume(&self) -> f64 {
        Self::PERIOD.powi(self.dim as i32)
    }

    /// Row-major linear index of a multi-index (entries beyond `dim` ignored).
    pub fn index_of(&self, multi: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            debug_assert!(multi[a] < self.cells_per_axis);
            idx = idx * self.cells_per_axis + multi[a];
        }
        idx
    }

    /// Multi-index of a linear index; entries beyond `dim` are zero.
    pub fn multi_of(&self, mut idx: usize) -> [usize; 3] {
        let mut multi = [0usize; 3];
        for a in (0..self.dim).rev() {
            multi[a] = idx % self.cells_per_axis;
            idx /= self.cells_per_axis;
        }
        multi
    }

    /// Cell-center coordinates of a cell; entries beyond `dim` are zero.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let multi = self.multi_of(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = -1.0 + (multi[a] as f64 + 0.5) * h;
        }
        x
    }

    /// Displacement-lattice coordinates of an index: `wrap(c * h)` per axis.
    ///
    /// Convolution kernels are sampled here so that index arithmetic in the
    /// circular convolution matches physical displacements exactly.
    pub fn offset(&self, idx: usize) -> [f64; 3] {
        let multi = self.multi_of(idx);
        let h = self.spacing();
        let mut z = [0.0; 3];
        for a in 0..self.dim {
            let c = multi[a];
            // Wrap c*h into [-1, 1): indices past n/2 represent negative offsets.
            z[a] = if c <= self.cells_per_axis / 2 {
                let v = c as f64 * h;
                if v >= 1.0 {
                    v - Self::PERIOD
                } else {
                    v
                }
            } else {
                (c as f64 - self.cells_per_axis as f64) * h
            };
        }
        z
    }

    /// Wraps a coordinate into the fundamental domain `[-1, 1)`.
    pub fn wrap_coord(x: f64) -> f64 {
        let mut y = (x + 1.0).rem_euclid(Self::PERIOD) - 1.0;
        // rem_euclid can return exactly PERIOD for tiny negative arguments.
        if y >= 1.0 {
            y -= Self::PERIOD;
        }
        y
    }

    pub(crate) fn check_same(self, other: TorusGrid, context: &'static str) -> Result<()> {
        if self != other {
            return Err(Error::grid_mismatch(context, self, other));
        }
        Ok(())
    }
}

/// Compensated (Neumaier) summation: error stays O(eps) independent of length.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Scalar field: one `f64` per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    /// All-zero field.
    pub fn zero(grid: TorusGrid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    /// Constant field.
    pub fn constant(grid: TorusGrid, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("ScalarField::constant"));
        }
        Ok(ScalarField {
            grid,
            values: vec![value; grid.cell_count()],
        })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.cell_count())
            .map(|idx| {
                let x = grid.center(idx);
                f(&x[..grid.dim()])
            })
            .collect();
        ensure_finite(&values, "ScalarField::from_fn")?;
        Ok(ScalarField { grid, values })
    }

    /// Wraps an existing value vector (row-major, one entry per cell).
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::InvalidInput(format!(
                "value count {} does not match cell count {}",
                values.len(),
                grid.cell_count()
            )));
        }
        ensure_finite(&values, "ScalarField::from_values")?;
        Ok(ScalarField { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `h^N`-weighted integral over the torus.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * compensated_sum(self.values.iter().copied())
    }

    /// Mean value, `integral / |domain|`.
    pub fn mean(&self) -> f64 {
        compensated_sum(self.values.iter().copied()) / self.grid.cell_count() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Supremum norm.
    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `h^N`-weighted L1 norm.
    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume() * compensated_sum(self.values.iter().map(|v| v.abs()))
    }

    /// `h^N`-weighted L2 norm.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * compensated_sum(self.values.iter().map(|v| v * v))).sqrt()
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ScalarField) -> Result<()> {
        self.grid.check_same(other.grid, "ScalarField::axpy")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// In-place scaling.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

/// `h^N`-weighted inner product of two scalar fields.
pub fn inner_product(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid.check_same(b.grid, "inner_product")?;
    Ok(a.grid.cell_volume()
        * compensated_sum(a.values.iter().zip(&b.values).map(|(x, y)| x * y)))
}

/// Vector field: `dim` scalar component planes.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zero(grid: TorusGrid) -> Self {
        VectorField {
            grid,
            components: vec![vec![0.0; grid.cell_count()]; grid.dim()],
        }
    }

    /// Samples a vector-valued closure at every cell center.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> [f64; 3]) -> Result<Self> {
        let mut components = vec![vec![0.0; grid.cell_count()]; grid.dim()];
        for idx in 0..grid.cell_count() {
            let x = grid.center(idx);
            let v = f(&x[..grid.dim()]);
            for (a, plane) in components.iter_mut().enumerate() {
                plane[idx] = v[a];
            }
        }
        for plane in &components {
            ensure_finite(plane, "VectorField::from_fn")?;
        }
        Ok(VectorField { grid, components })
    }

    /// Builds from per-component scalar fields (all on the same grid).
    pub fn from_components(fields: Vec<ScalarField>) -> Result<Self> {
        let grid = fields
            .first()
            .ok_or_else(|| Error::InvalidInput("empty component list".into()))?
            .grid;
        if fields.len() != grid.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} components, got {}",
                grid.dim(),
                fields.len()
            )));
        }
        let mut components = Vec::with_capacity(fields.len());
        for f in fields {
            f.grid.check_same(grid, "VectorField::from_components")?;
            components.push(f.values);
        }
        Ok(VectorField { grid, components })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    /// Clones one component out as a scalar field.
    pub fn component_field(&self, axis: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.components[axis].clone(),
        }
    }

    /// Vector value at one cell (entries beyond `dim` are zero).
    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, plane) in self.components.iter().enumerate() {
            v[a] = plane[idx];
        }
        v
    }

    /// Pointwise squared magnitude as a scalar field.
    pub fn magnitude_squared(&self) -> ScalarField {
        let mut out = vec![0.0; self.grid.cell_count()];
        for plane in &self.components {
            for (o, v) in out.iter_mut().zip(plane) {
                *o += v * v;
            }
        }
        ScalarField {
            grid: self.grid,
            values: out,
        }
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &VectorField) -> Result<ScalarField> {
        self.grid.check_same(other.grid, "VectorField::dot")?;
        let mut out = vec![0.0; self.grid.cell_count()];
        for (pa, pb) in self.components.iter().zip(&other.components) {
            for ((o, a), b) in out.iter_mut().zip(pa).zip(pb) {
                *o += a * b;
            }
        }
        Ok(ScalarField {
            grid: self.grid,
            values: out,
        })
    }

    /// Per-component mean as a vector.
    pub fn mean(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (a, plane) in self.components.iter().enumerate() {
            m[a] = compensated_sum(plane.iter().copied()) / self.grid.cell_count() as f64;
        }
        m
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &VectorField) -> Result<()> {
        self.grid.check_same(other.grid, "VectorField::axpy")?;
        for (pa, pb) in self.components.iter_mut().zip(&other.components) {
            for (a, b) in pa.iter_mut().zip(pb) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for plane in &mut self.components {
            for v in plane.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Supremum norm over all components.
    pub fn linf_norm(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `h^N`-weighted L2 inner product of two vector fields.
pub fn vector_inner_product(a: &VectorField, b: &VectorField) -> Result<f64> {
    a.grid.check_same(b.grid, "vector_inner_product")?;
    let mut total = 0.0;
    for (pa, pb) in a.components.iter().zip(&b.components) {
        total += compensated_sum(pa.iter().zip(pb).map(|(x, y)| x * y));
    }
    Ok(a.grid.cell_volume() * total)
}

/// Number of independent components of a symmetric `dim x dim` tensor.
pub fn sym_component_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Position of component `(i, j)` (`i <= j`) in upper-triangle ordering:
/// `N = 3`: (0,0),(0,1),(0,2),(1,1),(1,2),(2,2); analogous for smaller `N`.
pub fn sym_component_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < dim);
    // Offset of row i = sum over rows r < i of (dim - r).
    i * dim - i * (i + 1) / 2 + j
}

/// Symmetric rank-2 tensor field stored as upper-triangle component planes.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl SymTensorField {
    pub fn zero(grid: TorusGrid) -> Self {
        SymTensorField {
            grid,
            components: vec![vec![0.0; grid.cell_count()]; sym_component_count(grid.dim())],
        }
    }

    /// Samples a closure returning the upper-triangle components at each center.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> [f64; 6]) -> Result<Self> {
        let ncomp = sym_component_count(grid.dim());
        let mut components = vec![vec![0.0; grid.cell_count()]; ncomp];
        for idx in 0..grid.cell_count() {
            let x = grid.center(idx);
            let v = f(&x[..grid.dim()]);
            for (c, plane) in components.iter_mut().enumerate() {
                plane[idx] = v[c];
            }
        }
        for plane in &components {
            ensure_finite(plane, "SymTensorField::from_fn")?;
        }
        Ok(SymTensorField { grid, components })
    }

    /// Builds from raw component planes in upper-triangle order.
    pub fn from_planes(grid: TorusGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != sym_component_count(grid.dim()) {
            return Err(Error::InvalidInput(format!(
                "expected {} tensor planes, got {}",
                sym_component_count(grid.dim()),
                components.len()
            )));
        }
        for plane in &components {
            if plane.len() != grid.cell_count() {
                return Err(Error::InvalidInput(
                    "tensor plane length does not match cell count".into(),
                ));
            }
            ensure_finite(plane, "SymTensorField::from_planes")?;
        }
        Ok(SymTensorField { grid, components })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.components[sym_component_index(self.grid.dim(), i, j)]
    }

    pub fn component_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let idx = sym_component_index(self.grid.dim(), i, j);
        &mut self.components[idx]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Upper-triangle components at one cell, padded with zeros beyond `dim`.
    pub fn at(&self, idx: usize) -> [f64; 6] {
        let mut v = [0.0; 6];
        for (c, plane) in self.components.iter().enumerate() {
            v[c] = plane[idx];
        }
        v
    }

    /// Pointwise trace as a scalar field.
    pub fn trace(&self) -> ScalarField {
        let dim = self.grid.dim();
        let mut out = vec![0.0; self.grid.cell_count()];
        for i in 0..dim {
            let plane = self.component(i, i);
            for (o, v) in out.iter_mut().zip(plane) {
                *o += v;
            }
        }
        ScalarField {
            grid: self.grid,
            values: out,
        }
    }

    /// Largest absolute trace value; a trace-free field keeps this near zero.
    pub fn trace_linf(&self) -> f64 {
        self.trace().linf_norm()
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &SymTensorField) -> Result<()> {
        self.grid.check_same(other.grid, "SymTensorField::axpy")?;
        for (pa, pb) in self.components.iter_mut().zip(&other.components) {
            for (a, b) in pa.iter_mut().zip(pb) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn linf_norm(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(TorusGrid::new(0, 8).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
        assert!(TorusGrid::new(2, 7).is_err());
        assert!(TorusGrid::new(2, 2).is_err());
        assert!(TorusGrid::new(2, 8).is_ok());
    }

    #[test]
    fn centers_and_offsets_are_consistent() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let h = grid.spacing();
        assert!((grid.center(0)[0] - (-1.0 + 0.5 * h)).abs() < 1e-15);
        // Offset lattice starts at zero and wraps past n/2 to negative values.
        assert_eq!(grid.offset(0)[0], 0.0);
        assert!((grid.offset(1)[0] - h).abs() < 1e-15);
        assert!((grid.offset(7)[0] + h).abs() < 1e-15);
        assert!((grid.offset(4)[0] + 1.0).abs() < 1e-15); // n/2 -> -1
    }

    #[test]
    fn row_major_indexing_round_trips() {
        let grid = TorusGrid::new(3, 4).unwrap();
        for idx in 0..grid.cell_count() {
            assert_eq!(grid.index_of(grid.multi_of(idx)), idx);
        }
    }

    #[test]
    fn integral_of_constant_is_volume_scaled() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let f = ScalarField::constant(grid, 3.0).unwrap();
        assert!((f.integral() - 3.0 * grid.domain_volume()).abs() < 1e-12);
        assert!((f.mean() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn compensated_sum_handles_cancellation() {
        // Alternating large/small pairs that defeat naive summation.
        let values: Vec<f64> = (0..10_000)
            .flat_map(|_| [1e16, 1.0, -1e16].into_iter())
            .collect();
        let s = compensated_sum(values.into_iter());
        assert!((s - 10_000.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let grid = TorusGrid::new(1, 8).unwrap();
        assert!(ScalarField::from_values(grid, vec![f64::NAN; 8]).is_err());
        assert!(ScalarField::from_fn(grid, |x| 1.0 / (x[0] - x[0])).is_err());
    }

    #[test]
    fn sym_component_indexing_covers_upper_triangle() {
        assert_eq!(sym_component_index(3, 0, 0), 0);
        assert_eq!(sym_component_index(3, 0, 1), 1);
        assert_eq!(sym_component_index(3, 0, 2), 2);
        assert_eq!(sym_component_index(3, 1, 1), 3);
        assert_eq!(sym_component_index(3, 1, 2), 4);
        assert_eq!(sym_component_index(3, 2, 2), 5);
        assert_eq!(sym_component_index(3, 2, 1), 4); // symmetric lookup
        assert_eq!(sym_component_index(2, 1, 1), 2);
    }

    #[test]
    fn wrap_coord_stays_in_fundamental_domain() {
        for &x in &[-5.3, -1.0, -0.999, 0.0, 0.999, 1.0, 7.25] {
            let w = TorusGrid::wrap_coord(x);
            assert!((-1.0..1.0).contains(&w), "wrap({x}) = {w}");
            // Difference is an integer multiple of the period.
            let k = (x - w) / TorusGrid::PERIOD;
            assert!((k - k.round()).abs() < 1e-12);
        }
    }
}
