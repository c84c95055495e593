//! Planes, cones and the singular-set diagnostics built on the density.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::density::{
    liminf_of_values, theta, theta_grid, DensityLadder, DensityProbe, DensitySource, QuadratureConfig,
};
use crate::error::{Error, Result};
use crate::lattice::{Grid, ScalarField};

pub const FRAME_TOL: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A `k`-dimensional linear subspace of `R^m`, stored as an orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    m: usize,
    frame: Vec<Vec<f64>>,
}

impl Plane {
    /// Wraps an already orthonormal frame.
    pub fn new(m: usize, frame: Vec<Vec<f64>>) -> Result<Self> {
        if frame.len() > m {
            return Err(Error::InvalidArgument(format!(
                "a plane in R^{m} cannot have {} frame vectors",
                frame.len()
            )));
        }
        for v in &frame {
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: v.len(),
                });
            }
        }
        for (i, u) in frame.iter().enumerate() {
            for (j, v) in frame.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(u, v) - want).abs() > FRAME_TOL {
                    return Err(Error::InvalidArgument("plane frame is not orthonormal".into()));
                }
            }
        }
        Ok(Self { m, frame })
    }

    /// Gram-Schmidt on `vectors`; fails if they are (numerically) dependent.
    pub fn span(m: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let frame = orthonormalize(vectors, 1e-10).ok_or_else(|| {
            Error::InvalidArgument("spanning vectors are linearly dependent".into())
        })?;
        Self::new(m, frame)
    }

    /// Span of the given coordinate axes.
    pub fn coordinate(m: usize, axes: &[usize]) -> Result<Self> {
        let frame = axes
            .iter()
            .map(|&a| {
                if a >= m {
                    return Err(Error::InvalidArgument(format!("axis {a} out of range for R^{m}")));
                }
                let mut v = vec![0.0; m];
                v[a] = 1.0;
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(m, frame)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.frame.len()
    }

    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for u in &self.frame {
            let c = dot(u, v);
            for (o, ui) in out.iter_mut().zip(u) {
                *o += c * ui;
            }
        }
        out
    }

    /// `|v - proj(v)|`.
    pub fn distance(&self, v: &[f64]) -> f64 {
        let p = self.project(v);
        let d2: f64 = v.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
        d2.max(0.0).sqrt()
    }

    /// Orthonormal frame of the complement.
    pub fn orthogonal_complement(&self) -> Plane {
        let mut frame = self.frame.clone();
        for a in 0..self.m {
            let mut e = vec![0.0; self.m];
            e[a] = 1.0;
            frame.push(e);
        }
        let full = orthonormalize_greedy(&frame, 1e-8);
        let rest = full[self.k()..].to_vec();
        Plane {
            m: self.m,
            frame: rest,
        }
    }

    /// Image under an orthogonal matrix given by rows.
    pub fn rotated(&self, rotation: &[Vec<f64>]) -> Plane {
        let frame = self.frame.iter().map(|u| apply(rotation, u)).collect();
        Plane { m: self.m, frame }
    }
}

fn apply(rotation: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    rotation.iter().map(|row| dot(row, v)).collect()
}

fn orthonormalize(vectors: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let w = reduce(&out, v);
        let n = norm(&w);
        if n <= tol * norm(v).max(f64::MIN_POSITIVE) {
            return None;
        }
        out.push(w.iter().map(|x| x / n).collect());
    }
    Some(out)
}

/// Gram-Schmidt that skips dependent vectors.
fn orthonormalize_greedy(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let w = reduce(&out, v);
        let n = norm(&w);
        if n > tol {
            out.push(w.iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Two passes of modified Gram-Schmidt against `basis`.
fn reduce(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut w = v.to_vec();
    for _ in 0..2 {
        for u in basis {
            let c = dot(u, &w);
            for (wi, ui) in w.iter_mut().zip(u) {
                *wi -= c * ui;
            }
        }
    }
    w
}

/// Rotation-invariant random `k`-plane in `R^m`.
pub fn grassmann_sample(m: usize, k: usize, seed: u64) -> Result<Plane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grassmann_sample_with(m, k, &mut rng)
}

pub fn grassmann_sample_with<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<Plane> {
    if k == 0 || k >= m {
        return Err(Error::InvalidArgument(format!(
            "Grassmann sampling needs 1 <= k <= m-1 (got m={m}, k={k})"
        )));
    }
    loop {
        let vectors: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        if let Some(frame) = orthonormalize(&vectors, 1e-8) {
            return Plane::new(m, frame);
        }
    }
}

/// Haar-random orthogonal matrix, as rows.
pub fn random_rotation<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    loop {
        let vectors: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        if let Some(frame) = orthonormalize(&vectors, 1e-8) {
            return frame;
        }
    }
}

/// Principal angles between two planes, ascending.
pub fn principal_angles(p: &Plane, q: &Plane) -> Result<Vec<f64>> {
    if p.m() != q.m() {
        return Err(Error::DimensionMismatch {
            expected: p.m(),
            actual: q.m(),
        });
    }
    if p.k() == 0 || q.k() == 0 {
        return Ok(Vec::new());
    }
    let cross = DMatrix::from_fn(p.k(), q.k(), |i, j| dot(&p.frame()[i], &q.frame()[j]));
    let mut angles: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// The cone `X(apex, V, s)` of points whose offset from the apex lies within
/// relative distance `s` of `V`, optionally restricted to `B(apex, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    pub apex: Vec<f64>,
    pub v: Plane,
    pub s: f64,
    pub r: Option<f64>,
}

impl Cone {
    pub fn new(apex: Vec<f64>, v: Plane, s: f64, r: Option<f64>) -> Result<Self> {
        if apex.len() != v.m() {
            return Err(Error::DimensionMismatch {
                expected: v.m(),
                actual: apex.len(),
            });
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidArgument(format!("aperture must lie in (0, 1) (got {s})")));
        }
        if let Some(r) = r {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("cone radius must be positive (got {r})")));
            }
        }
        Ok(Self { apex, v, s, r })
    }

    /// Membership of an offset `d = z - apex`.
    pub fn contains_offset(&self, d: &[f64]) -> bool {
        let len = norm(d);
        if len == 0.0 {
            return false;
        }
        if let Some(r) = self.r {
            if !(len < r) {
                return false;
            }
        }
        self.v.distance(d) < self.s * len
    }
}

pub fn cone_contains(cone: &Cone, z: &[f64]) -> bool {
    let d: Vec<f64> = z.iter().zip(&cone.apex).map(|(a, b)| a - b).collect();
    cone.contains_offset(&d)
}

/// `theta^rho(z)` at a fixed time, for any point and any supported scale.
pub trait ThetaFn: Sync {
    fn grid(&self) -> &Grid;

    fn theta(&self, z: &[f64], rho: f64) -> Result<f64>;
}

/// Direct ball-sum evaluation.
pub struct DirectTheta<'a, S: DensitySource + ?Sized> {
    pub src: &'a S,
    pub tau: f64,
    pub quad: QuadratureConfig,
}

impl<S: DensitySource + ?Sized> ThetaFn for DirectTheta<'_, S> {
    fn grid(&self) -> &Grid {
        self.src.grid()
    }

    fn theta(&self, z: &[f64], rho: f64) -> Result<f64> {
        theta(self.src, &DensityProbe::new(z.to_vec(), self.tau, rho)?, &self.quad)
    }
}

/// Whole-grid densities at a fixed set of scales, interpolated multilinearly
/// (periodically) between sites. Exact at lattice sites.
#[derive(Debug, Clone)]
pub struct GridTheta {
    grid: Grid,
    tau: f64,
    levels: Vec<(f64, Vec<f64>)>,
}

impl GridTheta {
    pub fn new<S: DensitySource + ?Sized>(
        src: &S,
        tau: f64,
        scales: &[f64],
        quad: &QuadratureConfig,
    ) -> Result<Self> {
        let levels = scales
            .iter()
            .map(|&rho| Ok((rho, theta_grid(src, tau, rho, quad)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: src.grid().clone(),
            tau,
            levels,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn level(&self, rho: f64) -> Result<&[f64]> {
        self.levels
            .iter()
            .find(|(r, _)| (r - rho).abs() <= 1e-12 * rho.abs())
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("scale {rho} was not precomputed")))
    }
}

impl ThetaFn for GridTheta {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn theta(&self, z: &[f64], rho: f64) -> Result<f64> {
        let values = self.level(rho)?;
        let g = &self.grid;
        let m = g.m();
        if z.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: z.len(),
            });
        }
        let mut base = vec![0i64; m];
        let mut frac = vec![0.0; m];
        for a in 0..m {
            let c = (z[a] - g.origin()[a]) / g.h();
            let f = c.floor();
            let mut t = c - f;
            let mut i = f as i64;
            if t > 1.0 - 1e-12 {
                i += 1;
                t = 0.0;
            } else if t < 1e-12 {
                t = 0.0;
            }
            base[a] = i;
            frac[a] = t;
        }
        let active: Vec<usize> = (0..m).filter(|&a| frac[a] != 0.0).collect();
        let mut total = 0.0;
        let mut corner = base.clone();
        for mask in 0u32..(1u32 << active.len()) {
            let mut w = 1.0;
            for (bit, &a) in active.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    corner[a] = base[a] + 1;
                    w *= frac[a];
                } else {
                    corner[a] = base[a];
                    w *= 1.0 - frac[a];
                }
            }
            total += w * values[g.index_wrapped(&corner)];
        }
        Ok(total)
    }
}

/// Tensor-product quadrature settings on a 4-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceQuadrature {
    /// Truncation radius in the plane.
    pub r_slice: f64,
    /// Node spacing.
    pub spacing: f64,
}

impl SliceQuadrature {
    /// Spacing `h/2`, truncation at the grid's half-period.
    pub fn for_grid(grid: &Grid) -> Self {
        Self {
            r_slice: grid.min_half_period(),
            spacing: grid.h() / 2.0,
        }
    }

    /// Node offsets `c` (plane coordinates) with `|c| <= r_slice`.
    pub fn nodes(&self, k: usize) -> Vec<Vec<f64>> {
        let n = (self.r_slice / self.spacing + 1e-9).floor() as i64;
        let r2 = self.r_slice * self.r_slice * (1.0 + 1e-12);
        let mut out = Vec::new();
        let mut idx = vec![-n; k];
        loop {
            let c: Vec<f64> = idx.iter().map(|&i| i as f64 * self.spacing).collect();
            if dot(&c, &c) <= r2 {
                out.push(c);
            }
            let mut a = k;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if idx[a] < n {
                    idx[a] += 1;
                    break;
                }
                idx[a] = -n;
            }
        }
    }

    /// Total quadrature weight, the discrete stand-in for the truncated volume.
    pub fn discrete_volume(&self, k: usize) -> f64 {
        self.nodes(k).len() as f64 * self.spacing.powi(k as i32)
    }
}

/// `int_{Y in U, |Y| <= r_slice} rho^-4 theta^rho(zbar + Y) dY` by tensor-product quadrature.
pub fn slice_integral(
    theta_fn: &dyn ThetaFn,
    zbar: &[f64],
    u: &Plane,
    rho: f64,
    quad: &SliceQuadrature,
) -> Result<f64> {
    if u.m() != zbar.len() {
        return Err(Error::DimensionMismatch {
            expected: u.m(),
            actual: zbar.len(),
        });
    }
    let k = u.k();
    let nodes = quad.nodes(k);
    let values: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|c| {
            let mut z = zbar.to_vec();
            for (ci, e) in c.iter().zip(u.frame()) {
                for (zi, ei) in z.iter_mut().zip(e) {
                    *zi += ci * ei;
                }
            }
            theta_fn.theta(&z, rho)
        })
        .collect();
    let mut sum = 0.0;
    for v in values {
        sum += v?;
    }
    Ok(rho.powi(-4) * quad.spacing.powi(k as i32) * sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularPoint {
    pub site: usize,
    pub z: Vec<f64>,
    pub ladder: DensityLadder,
    pub liminf: f64,
}

/// Sites whose ladder liminf reaches `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularCandidateSet {
    pub grid: Grid,
    pub tau: f64,
    pub epsilon: f64,
    pub points: Vec<SingularPoint>,
}

impl SingularCandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sites(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.site).collect()
    }

    pub fn contains_point(&self, z: &[f64]) -> bool {
        self.points.iter().any(|p| {
            let d = self.grid.displacement(&p.z, z);
            norm(&d) <= 1e-9 * self.grid.h()
        })
    }
}

/// Evaluate the ladder at every grid site and keep those with liminf `>= epsilon`.
pub fn extract_singular_set(
    theta_fn: &dyn ThetaFn,
    tau: f64,
    epsilon: f64,
    scales: &[f64],
    j: usize,
) -> Result<SingularCandidateSet> {
    crate::density::check_ladder_scales(scales, tau)?;
    if scales.len() < 3 {
        return Err(Error::InsufficientLadder {
            got: scales.len(),
            need: 3,
        });
    }
    let grid = theta_fn.grid().clone();
    let found: Vec<Result<Option<SingularPoint>>> = (0..grid.sites())
        .into_par_iter()
        .map(|site| {
            let z = grid.position(site);
            let values = scales
                .iter()
                .map(|&rho| theta_fn.theta(&z, rho))
                .collect::<Result<Vec<_>>>()?;
            let liminf = liminf_of_values(&values, j)?;
            if liminf >= epsilon {
                let ladder = DensityLadder::new(z.clone(), tau, scales.to_vec(), values)?;
                Ok(Some(SingularPoint {
                    site,
                    z,
                    ladder,
                    liminf,
                }))
            } else {
                Ok(None)
            }
        })
        .collect();
    let mut points = Vec::new();
    for f in found {
        if let Some(p) = f? {
            points.push(p);
        }
    }
    Ok(SingularCandidateSet {
        grid,
        tau,
        epsilon,
        points,
    })
}

/// Geometric radii `start, start/sqrt 2, ...` down to `floor`.
pub fn geometric_radii(start: f64, floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = start;
    while r >= floor * (1.0 - 1e-12) {
        out.push(r);
        r *= std::f64::consts::FRAC_1_SQRT_2;
    }
    out
}

/// For each radius, whether the set meets `X(zbar, r, W, s)` (nearest-image offsets).
pub fn cone_concentration_test(
    set: &SingularCandidateSet,
    zbar: &[f64],
    w: &Plane,
    s: f64,
    r_ladder: &[f64],
) -> Result<Vec<(f64, bool)>> {
    if w.k() != 1 {
        return Err(Error::InvalidArgument(format!(
            "cone direction must be a line (got a {}-plane)",
            w.k()
        )));
    }
    if !set.contains_point(zbar) {
        return Err(Error::InvalidArgument("cone apex is not in the singular set".into()));
    }
    let offsets: Vec<Vec<f64>> = set
        .points
        .iter()
        .map(|p| set.grid.displacement(zbar, &p.z))
        .collect();
    r_ladder
        .iter()
        .map(|&r| {
            let cone = Cone::new(zbar.to_vec(), w.clone(), s, Some(r))?;
            Ok((r, offsets.iter().any(|d| cone.contains_offset(d))))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalReport {
    /// `(t, min over the finest J scales of theta^rho(zbar + rho t omega))`.
    pub profile: Vec<(f64, f64)>,
    pub inf: f64,
}

/// `inf_t min_{finest J rho} theta^rho(zbar + rho t omega)`.
pub fn directional_density_test(
    theta_fn: &dyn ThetaFn,
    zbar: &[f64],
    omega: &[f64],
    t_grid: &[f64],
    rho_ladder: &[f64],
    j: usize,
) -> Result<DirectionalReport> {
    if omega.len() != zbar.len() {
        return Err(Error::DimensionMismatch {
            expected: zbar.len(),
            actual: omega.len(),
        });
    }
    let n = norm(omega);
    if !((n - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (|omega| = {n})")));
    }
    if rho_ladder.is_empty() || j == 0 {
        return Err(Error::InvalidArgument("need at least one scale and J >= 1".into()));
    }
    let finest = &rho_ladder[rho_ladder.len() - j.min(rho_ladder.len())..];
    let mut profile = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut best = f64::INFINITY;
        for &rho in finest {
            let z: Vec<f64> = zbar.iter().zip(omega).map(|(a, w)| a + rho * t * w).collect();
            best = best.min(theta_fn.theta(&z, rho)?);
        }
        profile.push((t, best));
    }
    let inf = profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(DirectionalReport { profile, inf })
}

/// Individual terms of `d_tau theta - Lap_z theta - (theta - rho/2 d_rho theta) / rho^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeResidual {
    pub theta: f64,
    pub d_tau: f64,
    pub laplacian: f64,
    pub d_rho: f64,
    pub residual: f64,
}

/// Central-difference evaluation of the density evolution residual.
pub fn pde_residual<S: DensitySource + ?Sized>(
    src: &S,
    z: &[f64],
    tau: f64,
    rho: f64,
    widths: (f64, f64, f64),
    quad: &QuadratureConfig,
) -> Result<PdeResidual> {
    let (dz, dtau, drho) = widths;
    if !(dz > 0.0 && dtau > 0.0 && drho > 0.0) {
        return Err(Error::InvalidArgument("stencil widths must be positive".into()));
    }
    if !(drho < rho) {
        return Err(Error::InvalidArgument(format!(
            "rho - d_rho must stay positive (rho = {rho}, d_rho = {drho})"
        )));
    }
    if !(rho * rho < tau - dtau) || !((rho + drho) * (rho + drho) < tau) {
        return Err(Error::InvalidArgument(format!(
            "stencil leaves the admissible region rho^2 < tau (tau = {tau}, rho = {rho})"
        )));
    }
    let at = |z: &[f64], tau: f64, rho: f64| theta(src, &DensityProbe::new(z.to_vec(), tau, rho)?, quad);
    let center = at(z, tau, rho)?;
    let d_tau = (at(z, tau + dtau, rho)? - at(z, tau - dtau, rho)?) / (2.0 * dtau);
    let d_rho = (at(z, tau, rho + drho)? - at(z, tau, rho - drho)?) / (2.0 * drho);
    let mut laplacian = 0.0;
    let mut zz = z.to_vec();
    for a in 0..z.len() {
        zz[a] = z[a] + dz;
        let plus = at(&zz, tau, rho)?;
        zz[a] = z[a] - dz;
        let minus = at(&zz, tau, rho)?;
        zz[a] = z[a];
        laplacian += (plus - 2.0 * center + minus) / (dz * dz);
    }
    let residual = d_tau - laplacian - (center - 0.5 * rho * d_rho) / (rho * rho);
    Ok(PdeResidual {
        theta: center,
        d_tau,
        laplacian,
        d_rho,
        residual,
    })
}

/// `amplitude * max(dist(y, anchor + P), r0)^-alpha` with nearest-image offsets.
pub fn synthetic_tube_density(
    grid: &Grid,
    plane: &Plane,
    anchor: &[f64],
    alpha: f64,
    r0: f64,
    amplitude: f64,
) -> Result<ScalarField> {
    let m = grid.m();
    if plane.m() != m || anchor.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: plane.m().min(anchor.len()),
        });
    }
    if !(r0 >= 2.0 * grid.h() * (1.0 - 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "core cutoff r0 = {r0} must be at least 2h = {}",
            2.0 * grid.h()
        )));
    }
    if !(amplitude >= 0.0 && alpha >= 0.0) {
        return Err(Error::InvalidArgument("amplitude and exponent must be nonnegative".into()));
    }
    let values = (0..grid.sites())
        .map(|site| {
            let d = grid.displacement(anchor, &grid.position(site));
            amplitude * plane.distance(&d).max(r0).powf(-alpha)
        })
        .collect();
    ScalarField::new(grid, values)
}

/// Reference `theta^rho(z)` for a tube along the first `m - 4` axes through
/// `anchor`, summed transverse-first with exact ball truncation. Independent of
/// the generic density kernels; used to calibrate thresholds.
#[allow(clippy::too_many_arguments)]
pub fn tube_theta_reference(
    grid: &Grid,
    anchor: &[f64],
    z: &[f64],
    rho: f64,
    alpha: f64,
    r0: f64,
    amplitude: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let m = grid.m();
    if m < 5 {
        return Err(Error::InvalidArgument("a tube needs m >= 5".into()));
    }
    let axial = m - 4;
    let h = grid.h();
    let radius = quad.radius(rho);
    if radius > grid.min_half_period() * (1.0 + 1e-12) {
        return Err(Error::WrapContamination {
            radius,
            half_period: grid.min_half_period(),
        });
    }
    let r2 = radius * radius * (1.0 + 1e-12);
    let inv = 1.0 / (4.0 * rho * rho);
    // per axis nearest-image offsets of lattice sites from a coordinate
    let offsets = |a: usize, x: f64| -> Vec<f64> {
        let e = grid.extents()[a] as i64;
        let l = grid.period(a);
        let mut ds: Vec<f64> = (0..e)
            .map(|j| {
                let d = x - (grid.origin()[a] + h * j as f64);
                d - l * (d / l).round()
            })
            .filter(|d| d * d <= r2)
            .collect();
        ds.sort_by(f64::total_cmp);
        ds
    };
    // axial combinations: squared distance and weight, sorted by distance
    let mut axial_terms: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for a in 0..axial {
        let ds = offsets(a, z[a]);
        let mut next = Vec::new();
        for &(d2, w) in &axial_terms {
            for d in &ds {
                let dd = d2 + d * d;
                if dd <= r2 {
                    next.push((dd, w * (-d * d * inv).exp()));
                }
            }
        }
        axial_terms = next;
    }
    axial_terms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prefix = Vec::with_capacity(axial_terms.len());
    let mut acc = 0.0;
    for &(_, w) in &axial_terms {
        acc += w;
        prefix.push(acc);
    }
    let axial_sum = |budget: f64| -> f64 {
        let n = axial_terms.partition_point(|t| t.0 <= budget);
        if n == 0 {
            0.0
        } else {
            prefix[n - 1]
        }
    };
    let t: Vec<Vec<f64>> = (axial..m).map(|a| offsets(a, z[a])).collect();
    let core = |a: usize, d: f64| -> f64 {
        // transverse offset of the site from the anchor
        let l = grid.period(a);
        let y = z[a] - d;
        let o = y - anchor[a];
        o - l * (o / l).round()
    };
    let mut total = 0.0;
    for &d0 in &t[0] {
        let s0 = d0 * d0;
        let c0 = core(axial, d0);
        for &d1 in &t[1] {
            let s1 = s0 + d1 * d1;
            if s1 > r2 {
                continue;
            }
            let c1 = core(axial + 1, d1);
            for &d2 in &t[2] {
                let s2 = s1 + d2 * d2;
                if s2 > r2 {
                    continue;
                }
                let c2 = core(axial + 2, d2);
                for &d3 in &t[3] {
                    let s3 = s2 + d3 * d3;
                    if s3 > r2 {
                        continue;
                    }
                    let c3 = core(axial + 3, d3);
                    let dist = (c0 * c0 + c1 * c1 + c2 * c2 + c3 * c3).sqrt();
                    let e = amplitude * dist.max(r0).powf(-alpha);
                    total += (-s3 * inv).exp() * e * axial_sum(r2 - s3);
                }
            }
        }
    }
    Ok(rho.powi(4 - m as i32) * grid.cell_volume() * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{global_density_integral, gaussian_mass, theta_static, StaticDensity};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn cone_examples() {
        let v = Plane::coordinate(2, &[0]).unwrap();
        let cone = Cone::new(vec![0.0, 0.0], v.clone(), 0.5, None).unwrap();
        assert!(!cone_contains(&cone, &[0.0, 0.0]));
        assert!(!cone_contains(&cone, &[1.0, 1.0]));
        for s in [1e-6, 0.3, 0.99] {
            let c = Cone::new(vec![1.0, 2.0], v.clone(), s, Some(3.0)).unwrap();
            assert!(cone_contains(&c, &[2.5, 2.0]));
            assert!(!cone_contains(&c, &[4.5, 2.0]));
        }
        assert!(Cone::new(vec![0.0; 2], v.clone(), 1.0, None).is_err());
        assert!(Cone::new(vec![0.0; 2], v, 0.5, Some(0.0)).is_err());
    }

    #[test]
    fn cone_truth_table_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = grassmann_sample(5, 1, 3).unwrap();
        let omega = w.frame()[0].clone();
        for _ in 0..2000 {
            let d: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = rng.gen_range(0.05..0.95);
            let cone = Cone::new(vec![0.0; 5], w.clone(), s, Some(2.5)).unwrap();
            let len2 = dot(&d, &d);
            let along = dot(&d, &omega);
            let oracle = len2 > 0.0 && len2.sqrt() < 2.5 && (len2 - along * along).max(0.0) < s * s * len2;
            assert_eq!(cone_contains(&cone, &d), oracle);
        }
    }

    #[test]
    fn grassmann_frames_are_orthonormal_and_seeded() {
        for (m, k) in [(5, 4), (6, 4), (5, 1), (3, 2)] {
            let p = grassmann_sample(m, k, 11).unwrap();
            assert_eq!(p.k(), k);
            assert_eq!(p, grassmann_sample(m, k, 11).unwrap());
            let q = grassmann_sample(m, k, 12).unwrap();
            let angles = principal_angles(&p, &q).unwrap();
            assert!(angles.iter().any(|&a| a > 1e-3));
            let same = principal_angles(&p, &p).unwrap();
            assert!(same.iter().all(|&a| a < 1e-6));
        }
        assert!(grassmann_sample(5, 0, 1).is_err());
        assert!(grassmann_sample(5, 5, 1).is_err());
    }

    #[test]
    fn principal_angles_of_coordinate_planes() {
        let p = Plane::coordinate(3, &[0]).unwrap();
        let q = Plane::span(3, &[vec![1.0, 1.0, 0.0]]).unwrap();
        let a = principal_angles(&p, &q).unwrap();
        assert_relative_eq!(a[0], std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let perp = Plane::coordinate(3, &[1, 2]).unwrap();
        assert_relative_eq!(principal_angles(&p, &perp).unwrap()[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn grassmann_distribution_is_rotation_invariant() {
        let (m, k, n) = (5, 4, 600);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rot = random_rotation(m, &mut rng);
        let reference = grassmann_sample(m, k, 1_000_000).unwrap();
        let mut plain = Vec::new();
        let mut rotated = Vec::new();
        for i in 0..n {
            let p = grassmann_sample(m, k, 2 * i).unwrap();
            let q = grassmann_sample(m, k, 2 * i + 1).unwrap();
            plain.push(principal_angles(&p, &reference).unwrap()[k - 1]);
            rotated.push(principal_angles(&q.rotated(&rot), &reference).unwrap()[k - 1]);
        }
        let d = ks_statistic(plain.clone(), rotated);
        // two-sample critical value at alpha = 0.001
        let crit = 1.95 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(d < crit, "KS statistic {d} exceeds {crit}");
        // a biased sampler (planes kept near the reference) must be rejected
        let biased: Vec<f64> = (0..n)
            .map(|i| {
                let p = grassmann_sample(m, k, 5000 + i).unwrap();
                principal_angles(&p, &reference).unwrap()[k - 1] * 0.7
            })
            .collect();
        assert!(ks_statistic(plain, biased) > crit);
    }

    #[test]
    fn complement_and_rotation() {
        let p = grassmann_sample(6, 2, 4).unwrap();
        let c = p.orthogonal_complement();
        assert_eq!(c.k(), 4);
        for u in p.frame() {
            for v in c.frame() {
                assert!(dot(u, v).abs() < 1e-12);
            }
        }
        let rot = random_rotation(6, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(Plane::new(6, p.rotated(&rot).frame().to_vec()).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cone_is_rotation_invariant_and_monotone(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 5;
            let v = grassmann_sample_with(m, 1 + (seed % 3) as usize, &mut rng).unwrap();
            let apex: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s1 = rng.gen_range(0.05..0.5);
            let s2 = rng.gen_range(s1..0.99);
            let r1 = rng.gen_range(0.5..2.0);
            let r2 = r1 * 1.5;
            let small = cone_contains(&Cone::new(apex.clone(), v.clone(), s1, Some(r1)).unwrap(), &z);
            let wide = cone_contains(&Cone::new(apex.clone(), v.clone(), s2, Some(r1)).unwrap(), &z);
            let far = cone_contains(&Cone::new(apex.clone(), v.clone(), s1, Some(r2)).unwrap(), &z);
            prop_assert!(!small || wide);
            prop_assert!(!small || far);
            let rot = random_rotation(m, &mut rng);
            let rc = Cone::new(apply(&rot, &apex), v.rotated(&rot), s1, Some(r1)).unwrap();
            let d: Vec<f64> = z.iter().zip(&apex).map(|(a, b)| a - b).collect();
            let margin = (v.distance(&d) - s1 * norm(&d)).abs().min((norm(&d) - r1).abs());
            if margin > 1e-9 {
                prop_assert_eq!(cone_contains(&rc, &apply(&rot, &z)), small);
            }
        }
    }

    fn tube_fixture(extent: usize) -> (Grid, Plane, Vec<f64>) {
        let g = Grid::cubic(5, extent, 1.0).unwrap();
        let p = Plane::coordinate(5, &[0]).unwrap();
        let c = (extent / 2) as f64;
        (g, p, vec![0.0, c, c, c, c])
    }

    #[test]
    fn synthetic_tube_values() {
        let (g, p, anchor) = tube_fixture(8);
        let e = synthetic_tube_density(&g, &p, &anchor, 4.0, 2.0, 3.0).unwrap();
        let on = g.index(&[5, 4, 4, 4, 4]);
        assert_relative_eq!(e.values()[on], 3.0 / 16.0);
        let off = g.index(&[1, 4, 4, 4, 0]);
        assert_relative_eq!(e.values()[off], 3.0 / 256.0);
        let zero = synthetic_tube_density(&g, &p, &anchor, 4.0, 2.0, 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(synthetic_tube_density(&g, &p, &anchor, 4.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn tube_reference_matches_generic_kernel() {
        let (g, p, anchor) = tube_fixture(10);
        let e = synthetic_tube_density(&g, &p, &anchor, 4.0, 2.0, 1.0).unwrap();
        let q = QuadratureConfig::default();
        for (z, rho) in [(vec![0.0, 5.0, 5.0, 5.0, 5.0], 0.6), (vec![0.3, 5.5, 4.2, 5.0, 6.1], 0.5)] {
            let generic = theta_static(&e, &z, rho, &q).unwrap();
            let reference = tube_theta_reference(&g, &anchor, &z, rho, 4.0, 2.0, 1.0, &q).unwrap();
            assert_relative_eq!(generic, reference, max_relative = 1e-12);
        }
    }

    #[test]
    fn tube_ladder_is_nearly_scale_flat() {
        let g = Grid::cubic(5, 128, 1.0).unwrap();
        let anchor = vec![0.0, 64.0, 64.0, 64.0, 64.0];
        let q = QuadratureConfig::default();
        let vals: Vec<f64> = [4.0, 4.0 * std::f64::consts::SQRT_2, 8.0]
            .iter()
            .map(|&rho| tube_theta_reference(&g, &anchor, &anchor, rho, 4.0, 2.0, 1.0, &q).unwrap())
            .collect();
        let max = vals.iter().copied().fold(0.0, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max < 2.0 * min, "{vals:?}");
    }

    #[test]
    fn grid_theta_is_exact_at_sites_and_interpolates() {
        let g = Grid::cubic(3, 16, 0.5).unwrap();
        let e = ScalarField::from_fn(&g, |y| 1.0 + 0.5 * (y[0] * 0.7).sin().powi(2)).unwrap();
        let src = StaticDensity::new(e);
        let q = QuadratureConfig::default();
        let gt = GridTheta::new(&src, 10.0, &[0.5, 0.4], &q).unwrap();
        let direct = DirectTheta { src: &src, tau: 10.0, quad: q };
        let z = g.position(123);
        assert_relative_eq!(gt.theta(&z, 0.5).unwrap(), direct.theta(&z, 0.5).unwrap(), max_relative = 1e-11);
        let off = [1.23, 2.71, 0.4];
        assert_relative_eq!(gt.theta(&off, 0.4).unwrap(), direct.theta(&off, 0.4).unwrap(), max_relative = 2e-2);
        assert!(gt.theta(&off, 0.3).is_err());
    }

    #[test]
    fn slice_of_constant_field() {
        let g = Grid::cubic(5, 8, 1.0).unwrap();
        let c = 0.7;
        let src = StaticDensity::new(ScalarField::constant(&g, c).unwrap());
        let q = QuadratureConfig::default();
        let rho: f64 = 0.5;
        let gt = GridTheta::new(&src, 1.0, &[rho], &q).unwrap();
        let sq = SliceQuadrature::for_grid(&g);
        let u = grassmann_sample(5, 4, 3).unwrap();
        let got = slice_integral(&gt, &[0.3, 1.0, 2.0, 0.0, 4.4], &u, rho, &sq).unwrap();
        // theta is the same at every site of a constant field
        let site_value = gt.level(rho).unwrap()[0];
        assert_relative_eq!(site_value, c * gaussian_mass(5) * rho.powi(4), max_relative = 1e-3);
        let want = site_value * rho.powi(-4) * sq.discrete_volume(4);
        assert_relative_eq!(got, want, max_relative = 1e-9);
        let ball = std::f64::consts::PI.powi(2) / 2.0 * sq.r_slice.powi(4);
        assert_relative_eq!(sq.discrete_volume(4), ball, max_relative = 0.05);
        let zero = StaticDensity::new(ScalarField::zeros(&g));
        let gz = GridTheta::new(&zero, 1.0, &[rho], &q).unwrap();
        assert_eq!(slice_integral(&gz, &[0.0; 5], &u, rho, &sq).unwrap(), 0.0);
        // average density per unit volume agrees with the global identity
        let global = global_density_integral(src.field(), rho, &q).unwrap() / g.volume();
        assert_relative_eq!(got / ball, global, max_relative = 0.05);
    }

    #[test]
    fn extraction_is_monotone_in_epsilon() {
        let (g, p, anchor) = tube_fixture(8);
        let e = synthetic_tube_density(&g, &p, &anchor, 4.0, 2.0, 1.0).unwrap();
        let src = StaticDensity::new(e);
        let q = QuadratureConfig::default();
        let scales = [0.5, 0.4, 0.3];
        let gt = GridTheta::new(&src, 1.0, &scales, &q).unwrap();
        let mut previous: Option<Vec<usize>> = None;
        for eps in [1e-4, 1e-3, 3e-3, 1e-2, 1e9] {
            let set = extract_singular_set(&gt, 1.0, eps, &scales, 3).unwrap();
            assert!(set.points.iter().all(|p| p.liminf >= eps));
            let sites = set.sites();
            if let Some(prev) = &previous {
                assert!(sites.iter().all(|s| prev.contains(s)));
            }
            previous = Some(sites);
        }
        assert!(previous.unwrap().is_empty());
        let zero = StaticDensity::new(ScalarField::zeros(&g));
        let gz = GridTheta::new(&zero, 1.0, &scales, &q).unwrap();
        assert!(extract_singular_set(&gz, 1.0, 1e-12, &scales, 3).unwrap().is_empty());
        assert!(extract_singular_set(&gz, 1.0, 1e-12, &scales[..2], 3).is_err());
    }

    #[test]
    fn cone_test_on_isolated_apex_is_empty() {
        let (g, p, anchor) = tube_fixture(8);
        let e = synthetic_tube_density(&g, &p, &anchor, 4.0, 2.0, 1.0).unwrap();
        let src = StaticDensity::new(e);
        let q = QuadratureConfig::default();
        let scales = [0.5, 0.4, 0.3];
        let gt = GridTheta::new(&src, 1.0, &scales, &q).unwrap();
        let top = extract_singular_set(&gt, 1.0, 0.0, &scales, 3).unwrap();
        let apex = g.position(g.index(&[0, 4, 4, 4, 4]));
        let only = SingularCandidateSet {
            points: top.points.into_iter().filter(|p| p.z == apex).collect(),
            ..extract_singular_set(&gt, 1.0, 1e9, &scales, 3).unwrap()
        };
        assert_eq!(only.len(), 1);
        let w = Plane::coordinate(5, &[0]).unwrap();
        let res = cone_concentration_test(&only, &apex, &w, 0.5, &[4.0, 2.0, 1.0]).unwrap();
        assert!(res.iter().all(|(_, hit)| !hit));
        assert!(cone_concentration_test(&only, &[0.5; 5], &w, 0.5, &[1.0]).is_err());
    }

    #[test]
    fn directional_test_on_zero_field() {
        let g = Grid::cubic(5, 8, 1.0).unwrap();
        let src = StaticDensity::new(ScalarField::zeros(&g));
        let q = QuadratureConfig::default();
        let d = DirectTheta { src: &src, tau: 1.0, quad: q };
        let mut omega = vec![0.0; 5];
        omega[1] = 1.0;
        let rep = directional_density_test(&d, &[4.0; 5], &omega, &[0.0, 1.0, -2.0], &[0.5, 0.4, 0.3], 3).unwrap();
        assert_eq!(rep.inf, 0.0);
        assert_eq!(rep.profile.len(), 3);
        assert!(directional_density_test(&d, &[4.0; 5], &[1.0; 5], &[0.0], &[0.5], 1).is_err());
    }

    #[test]
    fn pde_residual_static_terms_against_kernel_derivatives() {
        let h = 0.25;
        let g = Grid::cubic(3, 32, h).unwrap();
        let c = [4.1, 3.8, 4.0];
        let e = ScalarField::from_fn(&g, |y| {
            let d2: f64 = y.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / 0.5).exp()
        })
        .unwrap();
        let src = StaticDensity::new(e.clone());
        let q = QuadratureConfig::default();
        let z = [4.0, 4.0, 4.0];
        let rho: f64 = 0.45;
        let rep = pde_residual(&src, &z, 10.0, rho, (0.005 * rho, 0.1, 0.005 * rho), &q).unwrap();
        assert_eq!(rep.d_tau, 0.0);

        // term-by-term quadrature with analytic kernel derivatives
        let m = 3.0;
        let (mut th, mut lap, mut drho) = (0.0, 0.0, 0.0);
        for site in 0..g.sites() {
            let d = g.displacement(&z, &g.position(site));
            let r2: f64 = d.iter().map(|v| v * v).sum();
            if r2 > (8.0 * rho).powi(2) {
                continue;
            }
            let w = (-r2 / (4.0 * rho * rho)).exp() * e.values()[site];
            th += w;
            lap += w * (r2 / (4.0 * rho.powi(4)) - m / (2.0 * rho * rho));
            drho += w * ((4.0 - m) / rho + r2 / (2.0 * rho.powi(3)));
        }
        let pre = rho.powf(4.0 - m) * g.cell_volume();
        let (th, lap, drho) = (pre * th, pre * lap, pre * drho);
        assert_relative_eq!(rep.theta, th, max_relative = 1e-10);
        assert_relative_eq!(rep.laplacian, lap, max_relative = 1e-4);
        assert_relative_eq!(rep.d_rho, drho, max_relative = 1e-4);
        let want = -lap - (th - 0.5 * rho * drho) / (rho * rho);
        let scale = lap.abs() + th / (rho * rho);
        assert!((rep.residual - want).abs() <= 1e-4 * scale);

        let zero = StaticDensity::new(ScalarField::zeros(&g));
        assert_eq!(pde_residual(&zero, &z, 10.0, rho, (0.01, 0.1, 0.01), &q).unwrap().residual, 0.0);
        assert!(pde_residual(&src, &z, 0.25, rho, (0.01, 0.1, 0.01), &q).is_err());
        assert!(pde_residual(&src, &z, 10.0, rho, (0.01, 0.1, 0.5), &q).is_err());
    }
}
