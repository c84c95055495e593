use num_complex::Complex64;

use super::Grid;
use crate::error::{Error, Result};
use crate::lie::{raw, LieElement};

/// Skew-Hermiticity tolerance for stored field components.
pub const FIELD_SKEW_TOL: f64 = 1e-10;

/// `k` Lie-algebra components per site, stored site-major then
/// component-major, each component a row-major `n x n` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LieField {
    grid: Grid,
    n: usize,
    k: usize,
    data: Vec<Complex64>,
}

impl LieField {
    pub fn zeros(grid: &Grid, n: usize, k: usize) -> Self {
        Self {
            grid: grid.clone(),
            n,
            k,
            data: vec![Complex64::new(0.0, 0.0); grid.sites() * k * n * n],
        }
    }

    /// Validated constructor from flat data in storage order.
    pub fn from_data(grid: &Grid, n: usize, k: usize, data: Vec<Complex64>) -> Result<Self> {
        let want = grid.sites() * k * n * n;
        if data.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "expected {want} complex entries, got {}",
                data.len()
            )));
        }
        let field = Self {
            grid: grid.clone(),
            n,
            k,
            data,
        };
        let dev = field.skew_deviation();
        if dev > FIELD_SKEW_TOL {
            return Err(Error::InvalidArgument(format!(
                "field is not skew-Hermitian (max deviation {dev:e})"
            )));
        }
        Ok(field)
    }

    /// Build from a per-site, per-component generator.
    pub fn from_fn<F>(grid: &Grid, n: usize, k: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> LieElement,
    {
        let mut field = Self::zeros(grid, n, k);
        for site in 0..grid.sites() {
            for c in 0..k {
                let e = f(site, c);
                if e.n() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: e.n(),
                    });
                }
                field.block_mut(site, c).copy_from_slice(e.entries());
            }
        }
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn block(&self, site: usize, comp: usize) -> &[Complex64] {
        let nn = self.n * self.n;
        let off = (site * self.k + comp) * nn;
        &self.data[off..off + nn]
    }

    #[inline]
    pub(crate) fn block_mut(&mut self, site: usize, comp: usize) -> &mut [Complex64] {
        let nn = self.n * self.n;
        let off = (site * self.k + comp) * nn;
        &mut self.data[off..off + nn]
    }

    /// All components at one site, contiguous.
    #[inline]
    pub fn site_blocks(&self, site: usize) -> &[Complex64] {
        let len = self.k * self.n * self.n;
        &self.data[site * len..(site + 1) * len]
    }

    pub fn element(&self, site: usize, comp: usize) -> LieElement {
        LieElement::from_raw(self.n, self.block(site, comp).to_vec())
    }

    pub fn set(&mut self, site: usize, comp: usize, value: &LieElement) -> Result<()> {
        if value.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: value.n(),
            });
        }
        self.block_mut(site, comp).copy_from_slice(value.entries());
        Ok(())
    }

    pub fn same_shape(&self, other: &LieField) -> bool {
        self.n == other.n && self.k == other.k && self.grid.same_shape(&other.grid)
    }

    pub(crate) fn check_shape(&self, other: &LieField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "fields differ: (n={}, k={}, sites={}) vs (n={}, k={}, sites={})",
                self.n,
                self.k,
                self.grid.sites(),
                other.n,
                other.k,
                other.grid.sites()
            )));
        }
        Ok(())
    }

    pub fn skew_deviation(&self) -> f64 {
        let nn = self.n * self.n;
        self.data
            .chunks_exact(nn)
            .map(|b| raw::skew_deviation(self.n, b))
            .fold(0.0, f64::max)
    }

    pub fn project_skew(&mut self) {
        let n = self.n;
        for b in self.data.chunks_exact_mut(n * n) {
            raw::project_skew_in_place(n, b);
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &LieField) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    pub fn max_abs_diff(&self, other: &LieField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// A gauge potential `(A_1, .., A_m)`: a [`LieField`] with `k = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugePotential(LieField);

impl GaugePotential {
    pub fn zeros(grid: &Grid, n: usize) -> Self {
        Self(LieField::zeros(grid, n, grid.m()))
    }

    pub fn from_field(field: LieField) -> Result<Self> {
        let m = field.grid().m();
        if field.components() != m {
            return Err(Error::ShapeMismatch(format!(
                "a potential on an m={m} grid needs {m} components, got {}",
                field.components()
            )));
        }
        Ok(Self(field))
    }

    pub fn from_fn<F>(grid: &Grid, n: usize, f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> LieElement,
    {
        LieField::from_fn(grid, n, grid.m(), f).map(Self)
    }

    pub fn as_field(&self) -> &LieField {
        &self.0
    }

    pub fn as_field_mut(&mut self) -> &mut LieField {
        &mut self.0
    }

    pub fn into_field(self) -> LieField {
        self.0
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    #[inline]
    pub fn component(&self, site: usize, mu: usize) -> &[Complex64] {
        self.0.block(site, mu)
    }
}

/// Number of stored curvature components `m(m-1)/2`.
pub fn pair_count(m: usize) -> usize {
    m * (m - 1) / 2
}

/// Storage slot of the pair `(mu, nu)` with `mu < nu`.
#[inline]
pub fn pair_index(m: usize, mu: usize, nu: usize) -> usize {
    debug_assert!(mu < nu && nu < m);
    // pairs (0,1),(0,2)..(0,m-1),(1,2),..
    mu * (2 * m - mu - 1) / 2 + (nu - mu - 1)
}

/// Curvature `F_{mu nu}` stored for `mu < nu`; the lower triangle is implied
/// by antisymmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField(LieField);

impl CurvatureField {
    pub fn zeros(grid: &Grid, n: usize) -> Self {
        Self(LieField::zeros(grid, n, pair_count(grid.m())))
    }

    pub fn from_field(field: LieField) -> Result<Self> {
        let want = pair_count(field.grid().m());
        if field.components() != want {
            return Err(Error::ShapeMismatch(format!(
                "curvature needs {want} components, got {}",
                field.components()
            )));
        }
        Ok(Self(field))
    }

    pub fn as_field(&self) -> &LieField {
        &self.0
    }

    pub(crate) fn as_field_mut(&mut self) -> &mut LieField {
        &mut self.0
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    /// `F_{mu nu}` at a site, for any ordered pair (zero on the diagonal).
    pub fn component(&self, site: usize, mu: usize, nu: usize) -> LieElement {
        let m = self.grid().m();
        let n = self.n();
        if mu == nu {
            return LieElement::zero(n);
        }
        if mu < nu {
            self.0.element(site, pair_index(m, mu, nu))
        } else {
            self.0.element(site, pair_index(m, nu, mu)).scaled(-1.0)
        }
    }

    /// Full antisymmetric `m x m` tensor, component `mu * m + nu`.
    pub fn to_full_tensor(&self) -> LieField {
        let grid = self.grid();
        let m = grid.m();
        let n = self.n();
        let mut out = LieField::zeros(grid, n, m * m);
        for site in 0..grid.sites() {
            for mu in 0..m {
                for nu in (mu + 1)..m {
                    let src = self.0.block(site, pair_index(m, mu, nu)).to_vec();
                    out.block_mut(site, mu * m + nu).copy_from_slice(&src);
                    for (d, s) in out.block_mut(site, nu * m + mu).iter_mut().zip(&src) {
                        *d = -s;
                    }
                }
            }
        }
        out
    }
}

/// One nonnegative real per site.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                grid.sites(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scalar field values must be finite and >= 0 (found {v})"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.sites()],
        }
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.sites()])
    }

    pub fn from_fn<F: FnMut(&[f64]) -> f64>(grid: &Grid, mut f: F) -> Result<Self> {
        let values = (0..grid.sites()).map(|s| f(&grid.position(s))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `h^m * sum(values)`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// `(1 - w) * self + w * other`.
    pub fn lerp(&self, other: &ScalarField, w: f64) -> Result<ScalarField> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::ShapeMismatch("interpolated fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            values,
        })
    }

    /// Shift by whole lattice steps: `out(x + shift h) = self(x)`.
    pub fn shifted(&self, shift: &[i64]) -> ScalarField {
        let mut values = vec![0.0; self.values.len()];
        let m = self.grid.m();
        for (s, v) in self.values.iter().enumerate() {
            let c: Vec<i64> = (0..m).map(|a| self.grid.coord(s, a) as i64 + shift[a]).collect();
            values[self.grid.index_wrapped(&c)] = *v;
        }
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> Result<ScalarField> {
        Self::new(&self.grid, self.values.iter().map(|v| v * s).collect())
    }
}
