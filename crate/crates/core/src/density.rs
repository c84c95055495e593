//! The parabolic density
//! `theta^rho(z, tau) = rho^(4-m) int exp(-|z - y|^2 / 4 rho^2) |F(y, tau - rho^2)|^2 dy`
//! and the identities it satisfies.
//!
//! Integrals are lattice sums `h^m sum_y` over sites inside a truncation ball
//! `|z - y| <= R_trunc rho`, with nearest-image distances on the torus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::fft::convolve_periodic;
use crate::flow::FlowState;
use crate::lattice::{curvature, energy_density, Grid, ScalarField};

pub const DEFAULT_R_TRUNC: f64 = 8.0;
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_LIMINF_J: usize = 3;
pub const DEFAULT_C_CAP: f64 = 1e3;

/// Relative slack on ball membership so that the direct and FFT paths agree
/// on sites sitting exactly on the truncation sphere.
const BALL_SLACK: f64 = 1e-12;

/// Gaussian truncation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub r_trunc: f64,
    pub tail_tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            r_trunc: DEFAULT_R_TRUNC,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }
}

impl QuadratureConfig {
    pub fn new(r_trunc: f64, tail_tolerance: f64) -> Result<Self> {
        if !(r_trunc > 0.0 && r_trunc.is_finite()) {
            return Err(Error::InvalidArgument(format!("R_trunc must be positive (got {r_trunc})")));
        }
        if !(tail_tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tail tolerance must be positive (got {tail_tolerance})"
            )));
        }
        Ok(Self {
            r_trunc,
            tail_tolerance,
        })
    }

    /// Fraction of the m-dimensional kernel mass outside the truncation ball,
    /// `Q(m/2, R^2/4)`.
    pub fn tail_fraction(&self, m: usize) -> f64 {
        gamma_ur(m as f64 / 2.0, self.r_trunc * self.r_trunc / 4.0)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let tail = self.tail_fraction(m);
        if tail > self.tail_tolerance {
            return Err(Error::InvalidArgument(format!(
                "R_trunc = {} leaves kernel tail {tail:e} above the tolerance {:e} in dimension {m}",
                self.r_trunc, self.tail_tolerance
            )));
        }
        Ok(())
    }

    pub fn radius(&self, rho: f64) -> f64 {
        self.r_trunc * rho
    }
}

fn check_scale(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale rho must be positive (got {rho})")));
    }
    Ok(())
}

fn check_wrap(grid: &Grid, radius: f64) -> Result<()> {
    let half = grid.min_half_period();
    if radius > half * (1.0 + BALL_SLACK) {
        return Err(Error::WrapContamination {
            radius,
            half_period: half,
        });
    }
    Ok(())
}

fn check_point(grid: &Grid, z: &[f64]) -> Result<()> {
    if z.len() != grid.m() {
        return Err(Error::DimensionMismatch {
            expected: grid.m(),
            actual: z.len(),
        });
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("probe point has non-finite coordinates".into()));
    }
    Ok(())
}

/// Per-axis site offsets `(memory offset, squared distance)` within `radius` of `z`.
fn axis_offsets(grid: &Grid, z: &[f64], radius: f64) -> Vec<Vec<(usize, f64)>> {
    let h = grid.h();
    let r2 = radius * radius * (1.0 + BALL_SLACK);
    (0..grid.m())
        .map(|a| {
            let e = grid.extents()[a] as i64;
            let stride = grid.strides()[a];
            let c = (z[a] - grid.origin()[a]) / h;
            let lo = (c - radius / h - 1e-9).ceil() as i64;
            let hi = (c + radius / h + 1e-9).floor() as i64;
            let mut out: Vec<(i64, f64)> = (lo..=hi)
                .filter_map(|j| {
                    let d = z[a] - (grid.origin()[a] + h * j as f64);
                    (d * d <= r2).then_some((j, d * d))
                })
                .collect();
            // a range longer than the period can only repeat the first site
            // at the far end; keep the nearer image
            while out.len() as i64 > e {
                let first = out[0].1;
                let last = out[out.len() - 1].1;
                if last >= first {
                    out.pop();
                } else {
                    out.remove(0);
                }
            }
            out.into_iter()
                .map(|(j, d2)| (j.rem_euclid(e) as usize * stride, d2))
                .collect()
        })
        .collect()
}

fn ball_sum(
    axes: &[Vec<(usize, f64)>],
    weights: &[Vec<f64>],
    axis: usize,
    base: usize,
    d2: f64,
    r2: f64,
    values: &[f64],
) -> f64 {
    let mut s = 0.0;
    if axis + 1 == axes.len() {
        for ((off, dd), w) in axes[axis].iter().zip(&weights[axis]) {
            if d2 + dd <= r2 {
                s += w * values[base + off];
            }
        }
        return s;
    }
    for ((off, dd), w) in axes[axis].iter().zip(&weights[axis]) {
        if d2 + dd <= r2 {
            s += w * ball_sum(axes, weights, axis + 1, base + off, d2 + dd, r2, values);
        }
    }
    s
}

/// Truncated lattice sum `h^m sum_{|z-y| <= radius} exp(-|z-y|^2 / 4 s^2) f(y)`
/// with Gaussian width `s`, at an arbitrary point `z`.
fn gaussian_ball_sum(values: &[f64], grid: &Grid, z: &[f64], width: f64, radius: f64) -> f64 {
    let axes = axis_offsets(grid, z, radius);
    let inv = 1.0 / (4.0 * width * width);
    let weights: Vec<Vec<f64>> = axes
        .iter()
        .map(|ax| ax.iter().map(|(_, d2)| (-d2 * inv).exp()).collect())
        .collect();
    let r2 = radius * radius * (1.0 + BALL_SLACK);
    grid.cell_volume() * ball_sum(&axes, &weights, 0, 0, 0.0, r2, values)
}

/// `theta^rho` at `z` for an energy density `e` already taken at time `tau - rho^2`.
pub fn theta_static(e: &ScalarField, z: &[f64], rho: f64, quad: &QuadratureConfig) -> Result<f64> {
    let grid = e.grid();
    check_scale(rho)?;
    check_point(grid, z)?;
    quad.validate(grid.m())?;
    let radius = quad.radius(rho);
    check_wrap(grid, radius)?;
    let m = grid.m() as i32;
    Ok(rho.powi(4 - m) * gaussian_ball_sum(e.values(), grid, z, rho, radius))
}

/// Truncated, nearest-image kernel `exp(-|d|^2 / 4 rho^2)` on lattice offsets,
/// laid out like the grid with offset zero at site zero.
fn lattice_kernel(grid: &Grid, rho: f64, radius: f64) -> Vec<f64> {
    let h = grid.h();
    let r2 = radius * radius * (1.0 + BALL_SLACK);
    let inv = 1.0 / (4.0 * rho * rho);
    (0..grid.sites())
        .map(|site| {
            let d2: f64 = (0..grid.m())
                .map(|a| {
                    let e = grid.extents()[a];
                    let j = grid.coord(site, a);
                    let s = if j <= e / 2 { j as f64 } else { j as f64 - e as f64 };
                    (s * h) * (s * h)
                })
                .sum();
            if d2 <= r2 {
                (-d2 * inv).exp()
            } else {
                0.0
            }
        })
        .collect()
}

/// `theta^rho` at every grid site at once, by FFT convolution.
pub fn theta_grid_static(e: &ScalarField, rho: f64, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    let grid = e.grid();
    check_scale(rho)?;
    quad.validate(grid.m())?;
    let radius = quad.radius(rho);
    check_wrap(grid, radius)?;
    let kernel = lattice_kernel(grid, rho, radius);
    let scale = rho.powi(4 - grid.m() as i32) * grid.cell_volume();
    Ok(convolve_periodic(e.values(), &kernel, grid.extents())
        .into_iter()
        .map(|v| (v * scale).max(0.0))
        .collect())
}

/// Access to the energy density `|F(., t)|^2` of a (possibly evolving) field.
pub trait DensitySource: Sync {
    fn grid(&self) -> &Grid;

    /// Fields and weights whose combination is the density at time `t`.
    fn bracket(&self, t: f64) -> Result<Vec<(&ScalarField, f64)>>;
}

/// A time-independent energy density.
#[derive(Debug, Clone)]
pub struct StaticDensity {
    e: ScalarField,
}

impl StaticDensity {
    pub fn new(e: ScalarField) -> Self {
        Self { e }
    }

    pub fn field(&self) -> &ScalarField {
        &self.e
    }
}

impl DensitySource for StaticDensity {
    fn grid(&self) -> &Grid {
        self.e.grid()
    }

    fn bracket(&self, _t: f64) -> Result<Vec<(&ScalarField, f64)>> {
        Ok(vec![(&self.e, 1.0)])
    }
}

/// Energy densities of a flow at increasing times, linearly interpolated.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    times: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl SnapshotSeries {
    pub fn new(times: Vec<f64>, fields: Vec<ScalarField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::InvalidArgument(format!(
                "need one field per time ({} times, {} fields)",
                times.len(),
                fields.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("snapshot times must increase strictly".into()));
        }
        if fields.iter().any(|f| !f.grid().same_shape(fields[0].grid())) {
            return Err(Error::ShapeMismatch("snapshots live on different grids".into()));
        }
        Ok(Self { times, fields })
    }

    pub fn from_flow(snapshots: &[FlowState]) -> Result<Self> {
        let times = snapshots.iter().map(|s| s.tau).collect();
        let fields = snapshots
            .iter()
            .map(|s| energy_density(&curvature(&s.a)))
            .collect();
        Self::new(times, fields)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn max_spacing(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

impl DensitySource for SnapshotSeries {
    fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    fn bracket(&self, t: f64) -> Result<Vec<(&ScalarField, f64)>> {
        let first = self.times[0];
        let last = *self.times.last().expect("non-empty");
        let slack = 1e-12 * last.abs().max(1.0);
        if !(t >= first - slack && t <= last + slack) {
            return Err(Error::TimeOutOfRange { t, first, last });
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Ok(vec![(&self.fields[0], 1.0)]);
        }
        if i == self.times.len() {
            return Ok(vec![(&self.fields[i - 1], 1.0)]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        if w == 0.0 {
            return Ok(vec![(&self.fields[i - 1], 1.0)]);
        }
        Ok(vec![(&self.fields[i - 1], 1.0 - w), (&self.fields[i], w)])
    }
}

/// Arguments of `theta^rho(z, tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProbe {
    pub z: Vec<f64>,
    pub tau: f64,
    pub rho: f64,
}

impl DensityProbe {
    pub fn new(z: Vec<f64>, tau: f64, rho: f64) -> Result<Self> {
        check_scale(rho)?;
        if !(rho * rho < tau) {
            return Err(Error::InvalidProbe {
                rho_sq: rho * rho,
                tau,
            });
        }
        Ok(Self { z, tau, rho })
    }
}

/// `theta^rho(z, tau)` reading the density at `tau - rho^2`.
pub fn theta<S: DensitySource + ?Sized>(src: &S, probe: &DensityProbe, quad: &QuadratureConfig) -> Result<f64> {
    let probe = DensityProbe::new(probe.z.clone(), probe.tau, probe.rho)?;
    let mut total = 0.0;
    for (e, w) in src.bracket(probe.tau - probe.rho * probe.rho)? {
        total += w * theta_static(e, &probe.z, probe.rho, quad)?;
    }
    Ok(total)
}

/// `theta^rho(., tau)` at every grid site.
pub fn theta_grid<S: DensitySource + ?Sized>(
    src: &S,
    tau: f64,
    rho: f64,
    quad: &QuadratureConfig,
) -> Result<Vec<f64>> {
    DensityProbe::new(vec![0.0; src.grid().m()], tau, rho)?;
    let mut total = vec![0.0; src.grid().sites()];
    for (e, w) in src.bracket(tau - rho * rho)? {
        for (t, v) in total.iter_mut().zip(theta_grid_static(e, rho, quad)?) {
            *t += w * v;
        }
    }
    Ok(total)
}

/// Many probes in parallel; each result is independent.
pub fn theta_batch<S: DensitySource + ?Sized>(
    src: &S,
    probes: &[DensityProbe],
    quad: &QuadratureConfig,
) -> Vec<Result<f64>> {
    probes.par_iter().map(|p| theta(src, p, quad)).collect()
}

/// `rho^-4 int theta^rho(z) dz` over the grid, for a density `e` at `tau - rho^2`.
/// In the continuum this is `(4 pi)^(m/2) int e`.
pub fn global_density_integral(e: &ScalarField, rho: f64, quad: &QuadratureConfig) -> Result<f64> {
    let th = theta_grid_static(e, rho, quad)?;
    Ok(rho.powi(-4) * e.grid().cell_volume() * th.iter().sum::<f64>())
}

/// Closed-form `(4 pi)^(m/2)` factor of the global identity.
pub fn gaussian_mass(m: usize) -> f64 {
    (4.0 * std::f64::consts::PI).powf(m as f64 / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescalingReport {
    /// `rho^4 int exp(-|x - xbar|^2 / 8) e(zbar + rho xbar) dxbar`, in blow-up coordinates.
    pub blow_up: f64,
    /// `2^((m-4)/2) theta^(sqrt 2 rho)(zbar + rho x)`.
    pub rescaled: f64,
    pub residual: f64,
}

/// Compare the blow-up integral around `zbar` at scale `rho` with the density
/// at scale `sqrt(2) rho`; both read the same field `e`.
pub fn rescaling_check(
    e: &ScalarField,
    zbar: &[f64],
    x: &[f64],
    rho: f64,
    quad: &QuadratureConfig,
) -> Result<RescalingReport> {
    let grid = e.grid();
    check_scale(rho)?;
    check_point(grid, zbar)?;
    check_point(grid, x)?;
    let m = grid.m();
    let rho2 = std::f64::consts::SQRT_2 * rho;
    let point: Vec<f64> = zbar.iter().zip(x).map(|(z, xi)| z + rho * xi).collect();
    let rescaled = 2f64.powf((m as f64 - 4.0) / 2.0) * theta_static(e, &point, rho2, quad)?;

    // blow-up side: walk every site y, map to xbar = (y - zbar) / rho and
    // integrate in xbar with dxbar = h^m / rho^m
    let cut = quad.r_trunc * std::f64::consts::SQRT_2;
    let cut2 = cut * cut * (1.0 + BALL_SLACK);
    let sum: f64 = (0..grid.sites())
        .map(|site| {
            let v = e.values()[site];
            if v == 0.0 {
                return 0.0;
            }
            let d = grid.displacement(&point, &grid.position(site));
            let r2: f64 = d.iter().map(|di| (di / rho) * (di / rho)).sum();
            if r2 <= cut2 {
                (-r2 / 8.0).exp() * v
            } else {
                0.0
            }
        })
        .sum();
    let blow_up = rho.powi(4) * (grid.cell_volume() / rho.powi(m as i32)) * sum;
    let residual = (blow_up - rescaled).abs() / (blow_up.abs() + f64::EPSILON);
    Ok(RescalingReport {
        blow_up,
        rescaled,
        residual,
    })
}

/// Uniform sample from the radius-`r` ball in `m` dimensions.
pub fn sample_ball<R: Rng>(rng: &mut R, m: usize, r: f64) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            let u: f64 = rng.gen();
            let scale = r * u.powf(1.0 / m as f64) / norm;
            return g.iter().map(|v| v * scale).collect();
        }
    }
}

/// Largest sampled difference quotient
/// `|theta^rho(zbar + rho x) - theta^rho(zbar + rho x')| / |x - x'|` over pairs in `B_R`.
pub fn lipschitz_modulus(
    e: &ScalarField,
    zbar: &[f64],
    rho: f64,
    radius: f64,
    pair_count: usize,
    seed: u64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let grid = e.grid();
    check_point(grid, zbar)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling radius must be positive (got {radius})")));
    }
    let m = grid.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..pair_count)
        .map(|_| (sample_ball(&mut rng, m, radius), sample_ball(&mut rng, m, radius)))
        .collect();
    let at = |x: &[f64]| -> Result<f64> {
        let z: Vec<f64> = zbar.iter().zip(x).map(|(a, b)| a + rho * b).collect();
        theta_static(e, &z, rho, quad)
    };
    let quotients: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|(x, y)| {
            let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dist == 0.0 {
                return Ok(0.0);
            }
            Ok((at(x)? - at(y)?).abs() / dist)
        })
        .collect();
    let mut best = 0.0f64;
    for q in quotients {
        best = best.max(q?);
    }
    Ok(best)
}

/// `theta^rho(z, tau)` over a strictly descending set of scales.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityLadder {
    pub z: Vec<f64>,
    pub tau: f64,
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
}

impl DensityLadder {
    pub fn new(z: Vec<f64>, tau: f64, scales: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_ladder_scales(&scales, tau)?;
        if scales.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: scales.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("ladder values must be nonnegative".into()));
        }
        Ok(Self {
            z,
            tau,
            scales,
            values,
        })
    }

    pub fn evaluate<S: DensitySource + ?Sized>(
        src: &S,
        z: &[f64],
        tau: f64,
        scales: &[f64],
        quad: &QuadratureConfig,
    ) -> Result<Self> {
        check_ladder_scales(scales, tau)?;
        let values = scales
            .iter()
            .map(|&rho| theta(src, &DensityProbe::new(z.to_vec(), tau, rho)?, quad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(z.to_vec(), tau, scales.to_vec(), values)
    }
}

pub fn check_ladder_scales(scales: &[f64], tau: f64) -> Result<()> {
    if scales.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("ladder scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("ladder scales must be strictly descending".into()));
    }
    if let Some(&rho) = scales.last() {
        if !(rho * rho < tau) {
            return Err(Error::InvalidProbe {
                rho_sq: rho * rho,
                tau,
            });
        }
    }
    Ok(())
}

/// Minimum over the `j` finest scales of a ladder with at least three rungs.
pub fn liminf_estimate(ladder: &DensityLadder, j: usize) -> Result<f64> {
    liminf_of_values(&ladder.values, j)
}

pub(crate) fn liminf_of_values(values: &[f64], j: usize) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::InsufficientLadder {
            got: values.len(),
            need: 3,
        });
    }
    if j == 0 {
        return Err(Error::InvalidArgument("J must be at least 1".into()));
    }
    let j = j.min(values.len());
    Ok(values[values.len() - j..].iter().copied().fold(f64::INFINITY, f64::min))
}

/// Geometric ladder with ratio `1/sqrt(2)` starting at `L_min / 16`, keeping
/// scales no finer than `floor`.
pub fn default_rho_ladder(grid: &Grid, count: usize, floor: f64) -> Result<Vec<f64>> {
    let top = grid.min_half_period() * 2.0 / 16.0;
    let scales: Vec<f64> = (0..count)
        .map(|k| top * std::f64::consts::FRAC_1_SQRT_2.powi(k as i32))
        .take_while(|&r| r >= floor * (1.0 - 1e-12))
        .collect();
    if scales.len() < 3 {
        return Err(Error::InsufficientLadder {
            got: scales.len(),
            need: 3,
        });
    }
    Ok(scales)
}

/// Smallest `C >= 0` with `C exp(C (rho' - rho)) theta' + C (rho'^2 - rho^2) ym0 >= theta`.
/// `None` when no finite constant exists.
pub fn minimal_monotonicity_constant(theta: f64, theta_p: f64, rho: f64, rho_p: f64, ym0: f64) -> Option<f64> {
    if theta <= 0.0 {
        return Some(0.0);
    }
    let gap = rho_p - rho;
    let gap2 = rho_p * rho_p - rho * rho;
    let bound = |c: f64| c * (c * gap).exp() * theta_p + c * gap2 * ym0;
    if theta_p <= 0.0 && gap2 * ym0 <= 0.0 {
        return None;
    }
    let mut hi = 1.0;
    while bound(hi) < theta {
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e300 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bound(mid) >= theta {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityPair {
    pub z: Vec<f64>,
    pub rho: f64,
    pub rho_p: f64,
    pub theta: f64,
    pub theta_p: f64,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub pairs: Vec<MonotonicityPair>,
    /// Single constant covering every pair, if all are finite.
    pub c_max: Option<f64>,
}

/// Fit the monotonicity constant over every ordered pair of `scales` at each point.
pub fn monotonicity_fit<S: DensitySource + ?Sized>(
    src: &S,
    points: &[Vec<f64>],
    tau: f64,
    scales: &[f64],
    ym0: f64,
    quad: &QuadratureConfig,
) -> Result<MonotonicityReport> {
    let mut pairs = Vec::new();
    for z in points {
        let vals = scales
            .iter()
            .map(|&rho| theta(src, &DensityProbe::new(z.clone(), tau, rho)?, quad))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..scales.len() {
            for j in 0..scales.len() {
                if scales[i] < scales[j] {
                    pairs.push(MonotonicityPair {
                        z: z.clone(),
                        rho: scales[i],
                        rho_p: scales[j],
                        theta: vals[i],
                        theta_p: vals[j],
                        c: minimal_monotonicity_constant(vals[i], vals[j], scales[i], scales[j], ym0),
                    });
                }
            }
        }
    }
    let c_max = pairs
        .iter()
        .try_fold(0.0f64, |acc, p| p.c.map(|c| acc.max(c)));
    Ok(MonotonicityReport { pairs, c_max })
}
