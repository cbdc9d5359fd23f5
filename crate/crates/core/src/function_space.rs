//! Discrete `L²[0, 1]` on a uniform midpoint grid.
//!
//! Node `g` sits at `t_g = (g - 1/2) / T` and carries weight `1/T`. On this
//! grid the cosine system `1, √2 cos(πt), √2 cos(2πt), …` is exactly
//! orthonormal in the induced inner product (the DCT-II orthogonality
//! relations), so nothing downstream picks up quadrature error.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    size: usize,
}

impl Grid {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("grid needs at least one node".into()));
        }
        Ok(Self { size })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.size as f64
    }

    pub fn node(&self, g: usize) -> f64 {
        (g as f64 + 0.5) / self.size as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.size).map(|g| self.node(g)).collect()
    }

    fn check(&self, other: &Grid) -> Result<()> {
        if self.size != other.size {
            return Err(Error::GridMismatch(self.size, other.size));
        }
        Ok(())
    }
}

/// A function sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(grid.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.weight()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &GridFunction, c: f64) -> Result<Self> {
        self.grid.check(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.add_scaled(other, -1.0)
    }

    /// One value per line, as a single CSV column with a header.
    pub fn to_csv_column(&self, header: &str) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        out.push_str(header);
        out.push('\n');
        for v in &self.values {
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

/// `⟨f, g⟩ = (1/T) Σ f(t_g) g(t_g)`.
pub fn inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.grid.check(&g.grid)?;
    Ok(dot(&f.values, &g.values) * f.grid.weight())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An ordered list of discrete-orthonormal functions on one grid.
#[derive(Debug, Clone)]
pub struct BasisSet {
    grid: Grid,
    functions: Vec<GridFunction>,
}

impl BasisSet {
    pub fn new(grid: Grid, functions: Vec<GridFunction>) -> Result<Self> {
        for f in &functions {
            grid.check(&f.grid)?;
        }
        Ok(Self { grid, functions })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, j: usize) -> &GridFunction {
        &self.functions[j]
    }

    pub fn functions(&self) -> &[GridFunction] {
        &self.functions
    }

    /// Coefficients `⟨f, φ_j⟩` for every basis function.
    pub fn coefficients(&self, f: &GridFunction) -> Result<Vec<f64>> {
        self.functions.iter().map(|phi| inner(f, phi)).collect()
    }

    /// `Σ_j c_j φ_j` over the first `coeffs.len()` functions.
    pub fn synthesize(&self, coeffs: &[f64]) -> GridFunction {
        let mut values = vec![0.0; self.grid.len()];
        for (c, phi) in coeffs.iter().zip(&self.functions) {
            if *c == 0.0 {
                continue;
            }
            for (v, p) in values.iter_mut().zip(&phi.values) {
                *v += c * p;
            }
        }
        GridFunction {
            grid: self.grid,
            values,
        }
    }

    /// Node values as a `T × J` matrix, one column per function.
    pub fn matrix(&self) -> DMatrix<f64> {
        let t = self.grid.len();
        DMatrix::from_fn(t, self.functions.len(), |g, j| self.functions[j].values[g])
    }

    /// Discrete Gram matrix `⟨φ_j, φ_k⟩`.
    pub fn gram(&self) -> DMatrix<f64> {
        let j = self.functions.len();
        DMatrix::from_fn(j, j, |a, b| {
            dot(&self.functions[a].values, &self.functions[b].values) * self.grid.weight()
        })
    }
}

/// `φ_1 ≡ 1`, `φ_{j+1}(t) = √2 cos(jπt)`, for `j < J`.
pub fn cosine_basis(size: usize, count: usize) -> Result<BasisSet> {
    let grid = Grid::new(size)?;
    if count == 0 || count > size {
        return Err(Error::InvalidArgument(format!(
            "cosine basis needs 1 ≤ J ≤ T, got J = {count}, T = {size}"
        )));
    }
    let functions = (0..count)
        .map(|j| {
            if j == 0 {
                GridFunction::constant(grid, 1.0)
            } else {
                GridFunction::from_fn(grid, |t| SQRT_2 * (j as f64 * PI * t).cos())
            }
        })
        .collect();
    Ok(BasisSet { grid, functions })
}
