//! Periodic grids on the unit torus and second-order central-difference
//! operators.
//!
//! All fields are stored in row-major multi-index order: the last axis
//! varies fastest. Index arithmetic wraps modulo the resolution, so there are
//! no ghost layers.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported space dimension.
pub const MAX_DIM: usize = 8;

/// Uniform periodic grid on the unit torus `[0,1)^dim` with `res` points per
/// axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    res: usize,
}

impl GridSpec {
    pub fn new(dim: usize, res: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidDimension(dim));
        }
        if res < 8 || !res.is_multiple_of(2) {
            return Err(Error::InvalidResolution(res));
        }
        Ok(Self { dim, res })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// Grid spacing `h = 1/res`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.res as f64
    }

    /// Number of nodes, `res^dim`.
    pub fn len(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a single node, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Distance in flat index between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.res.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            out[axis] = idx % self.res;
            idx /= self.res;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.res + (i % self.res))
    }

    /// Coordinates `x = i·h` of a node.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let n = self.res as f64;
        self.multi_index(idx).into_iter().map(|i| i as f64 / n).collect()
    }

    /// Flat index of the node reached from `idx` by `delta` steps along `axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let stride = self.stride(axis);
        let n = self.res as isize;
        let coord = ((idx / stride) % self.res) as isize;
        let moved = (coord + delta).rem_euclid(n);
        (idx as isize + (moved - coord) * stride as isize) as usize
    }

    /// Errors unless both grids are identical.
    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// One real value per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {pos}")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness check. Length must match.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at the node coordinates.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Self::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Node-sum quadrature `h^n Σ u`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Grid mean; equals the integral on the unit torus.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L² inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
            * self.grid.cell_volume()
    }

    /// Same field on the translated lattice: `out[i] = self[i + offset]`.
    pub fn shifted(&self, offset: &[isize]) -> Self {
        let g = self.grid;
        let values = (0..g.len())
            .map(|i| {
                let j = offset.iter().enumerate().fold(i, |j, (ax, &d)| g.shift(j, ax, d));
                self.values[j]
            })
            .collect();
        Self::from_raw(g, values)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

/// An `n`-vector per node, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} components, got {}",
                grid.len() * grid.dim(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len() * grid.dim());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len() * grid.dim()])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    /// Component `i` as a scalar field.
    pub fn component(&self, i: usize) -> ScalarField {
        let d = self.grid.dim();
        ScalarField::from_raw(self.grid, self.values.iter().skip(i).step_by(d).copied().collect())
    }

    /// Pointwise Euclidean length.
    pub fn magnitude(&self) -> ScalarField {
        let values = (0..self.grid.len()).map(|k| norm2(self.at(k)).sqrt()).collect();
        ScalarField::from_raw(self.grid, values)
    }
}

/// A symmetric `n×n` matrix per node, stored full and row-major per node.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl TensorField {
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len() * grid.dim() * grid.dim());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let dd = self.grid.dim() * self.grid.dim();
        &self.values[node * dd..(node + 1) * dd]
    }

    /// Pointwise trace.
    pub fn trace(&self) -> ScalarField {
        let d = self.grid.dim();
        let values = (0..self.grid.len())
            .map(|k| {
                let m = self.at(k);
                (0..d).map(|i| m[i * d + i]).sum()
            })
            .collect();
        ScalarField::from_raw(self.grid, values)
    }
}

/// A general (not necessarily symmetric) `n×n` matrix per node, e.g. the
/// Jacobian `(Dw)_{ij} = ∂_j w_i` of a vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl MatrixField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let dd = self.grid.dim() * self.grid.dim();
        &self.values[node * dd..(node + 1) * dd]
    }
}

#[inline]
pub(crate) fn norm2(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum()
}

/// Central difference of a flat array along one axis.
fn central_diff(grid: &GridSpec, values: &[f64], axis: usize, out: &mut [f64], out_stride: usize, out_offset: usize) {
    let inv = 1.0 / (2.0 * grid.spacing());
    for k in 0..grid.len() {
        let p = grid.shift(k, axis, 1);
        let m = grid.shift(k, axis, -1);
        out[k * out_stride + out_offset] = (values[p] - values[m]) * inv;
    }
}

/// `(∂ᵢu)(x) ≈ (u(x+h eᵢ) − u(x−h eᵢ))/(2h)` with periodic wraparound.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid;
    let d = g.dim();
    let mut out = vec![0.0; g.len() * d];
    for axis in 0..d {
        central_diff(&g, &u.values, axis, &mut out, d, axis);
    }
    VectorField::from_raw(g, out)
}

/// Second differences on the diagonal, four-point cross stencil off the
/// diagonal. Each mixed partial is computed once and mirrored.
pub fn hessian(u: &ScalarField) -> TensorField {
    let g = u.grid;
    let d = g.dim();
    let h = g.spacing();
    let inv_h2 = 1.0 / (h * h);
    let inv_4h2 = 1.0 / (4.0 * h * h);
    let uv = &u.values;
    let mut out = vec![0.0; g.len() * d * d];
    for k in 0..g.len() {
        let base = k * d * d;
        for i in 0..d {
            let p = g.shift(k, i, 1);
            let m = g.shift(k, i, -1);
            out[base + i * d + i] = (uv[p] - 2.0 * uv[k] + uv[m]) * inv_h2;
            for j in (i + 1)..d {
                let pp = g.shift(p, j, 1);
                let pm = g.shift(p, j, -1);
                let mp = g.shift(m, j, 1);
                let mm = g.shift(m, j, -1);
                let val = (uv[pp] - uv[pm] - uv[mp] + uv[mm]) * inv_4h2;
                out[base + i * d + j] = val;
                out[base + j * d + i] = val;
            }
        }
    }
    TensorField::from_raw(g, out)
}

/// Sum over `i` of the central difference of component `i` along axis `i`.
pub fn divergence(w: &VectorField) -> ScalarField {
    let g = w.grid;
    let d = g.dim();
    let inv = 1.0 / (2.0 * g.spacing());
    let values = (0..g.len())
        .map(|k| {
            (0..d)
                .map(|i| {
                    let p = g.shift(k, i, 1);
                    let m = g.shift(k, i, -1);
                    (w.values[p * d + i] - w.values[m * d + i]) * inv
                })
                .sum()
        })
        .collect();
    ScalarField::from_raw(g, values)
}

/// Trace of the Hessian stencil: `Σᵢ (u(x+h eᵢ) − 2u(x) + u(x−h eᵢ))/h²`.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let g = u.grid;
    let inv_h2 = 1.0 / (g.spacing() * g.spacing());
    let uv = &u.values;
    let values = (0..g.len())
        .map(|k| {
            (0..g.dim())
                .map(|i| uv[g.shift(k, i, 1)] - 2.0 * uv[k] + uv[g.shift(k, i, -1)])
                .sum::<f64>()
                * inv_h2
        })
        .collect();
    ScalarField::from_raw(g, values)
}

/// `(Dw)_{ij} = ∂_j wᵢ` by central differences of each component.
pub fn jacobian(w: &VectorField) -> MatrixField {
    let g = w.grid;
    let d = g.dim();
    let mut out = vec![0.0; g.len() * d * d];
    for i in 0..d {
        let comp = w.component(i);
        for j in 0..d {
            central_diff(&g, &comp.values, j, &mut out, d * d, i * d + j);
        }
    }
    MatrixField { grid: g, values: out }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    Linf,
    H1,
    H2,
}

impl NormKind {
    fn name(self) -> &'static str {
        match self {
            NormKind::L2 => "L2",
            NormKind::Linf => "Linf",
            NormKind::H1 => "H1",
            NormKind::H2 => "H2",
        }
    }
}

/// Fields that carry the discrete norms. L2 is `sqrt(hⁿ Σ |value|²)` with
/// the Euclidean (resp. Frobenius) norm per node.
pub trait Normed {
    fn norm(&self, kind: NormKind) -> Result<f64>;
}

fn l2_of(grid: &GridSpec, values: &[f64]) -> f64 {
    (norm2(values) * grid.cell_volume()).sqrt()
}

fn linf_per_node(values: &[f64], width: usize) -> f64 {
    values.chunks(width).map(|c| norm2(c).sqrt()).fold(0.0, f64::max)
}

impl Normed for ScalarField {
    fn norm(&self, kind: NormKind) -> Result<f64> {
        let l2sq = || norm2(&self.values) * self.grid.cell_volume();
        let grad_sq = || {
            let gr = gradient(self);
            norm2(&gr.values) * self.grid.cell_volume()
        };
        Ok(match kind {
            NormKind::L2 => l2sq().sqrt(),
            NormKind::Linf => self.linf(),
            NormKind::H1 => (l2sq() + grad_sq()).sqrt(),
            NormKind::H2 => {
                let hs = hessian(self);
                (l2sq() + grad_sq() + norm2(&hs.values) * self.grid.cell_volume()).sqrt()
            }
        })
    }
}

impl Normed for VectorField {
    fn norm(&self, kind: NormKind) -> Result<f64> {
        match kind {
            NormKind::L2 => Ok(l2_of(&self.grid, &self.values)),
            NormKind::Linf => Ok(linf_per_node(&self.values, self.grid.dim())),
            k => Err(Error::NormKind { kind: k.name() }),
        }
    }
}

impl Normed for TensorField {
    fn norm(&self, kind: NormKind) -> Result<f64> {
        match kind {
            NormKind::L2 => Ok(l2_of(&self.grid, &self.values)),
            NormKind::Linf => Ok(linf_per_node(&self.values, self.grid.dim() * self.grid.dim())),
            k => Err(Error::NormKind { kind: k.name() }),
        }
    }
}

pub fn norm<F: Normed + ?Sized>(field: &F, kind: NormKind) -> Result<f64> {
    field.norm(kind)
}
