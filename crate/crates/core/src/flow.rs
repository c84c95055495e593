//! Explicit time stepping of the Yang-Mills flow `d_tau A = -nabla^* F`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::fft::fft_nd;
use crate::lattice::{curvature, divergence_star, field_inner, ym_energy, GaugePotential, Grid, LieField};
use crate::lie::{algebra_basis, LieElement};

pub const DEFAULT_CFL_FRACTION: f64 = 0.1;

/// Relative energy growth per step above which a run is aborted.
pub const INSTABILITY_GROWTH: f64 = 0.01;

/// Coefficient of the dissipation term in the semi-discrete energy balance
/// `YM(tau) + 4 int_0^tau |d_t A|^2 = YM(0)`. With `|F|^2` summed over
/// ordered pairs the lattice energy is `(F, F)` on the full antisymmetric
/// tensor, so its gradient is `4 nabla^* F`.
pub const DISSIPATION_COEFFICIENT: f64 = 4.0;

/// `-divergence_star(A, curvature(A))`.
pub fn flow_rhs(a: &GaugePotential) -> GaugePotential {
    let f = curvature(a);
    let mut g = divergence_star(a, &f).expect("curvature shares the potential's grid");
    g.as_field_mut().scale(-1.0);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub a: GaugePotential,
    pub tau: f64,
}

impl FlowState {
    pub fn new(a: GaugePotential, tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be >= 0 (got {tau})")));
        }
        Ok(Self { a, tau })
    }

    pub fn ym(&self) -> f64 {
        ym_energy(&curvature(&self.a))
    }
}

/// Classical RK4 on [`flow_rhs`] with a parabolic step bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowIntegrator {
    pub cfl_fraction: f64,
}

impl Default for FlowIntegrator {
    fn default() -> Self {
        Self {
            cfl_fraction: DEFAULT_CFL_FRACTION,
        }
    }
}

/// What a single RK4 step saw before re-projection.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub skew_drift: f64,
}

impl FlowIntegrator {
    pub fn new(cfl_fraction: f64) -> Result<Self> {
        if !(cfl_fraction > 0.0 && cfl_fraction.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cfl_fraction must be positive (got {cfl_fraction})"
            )));
        }
        Ok(Self { cfl_fraction })
    }

    pub fn dt_bound(&self, grid: &Grid) -> f64 {
        self.cfl_fraction * grid.h() * grid.h()
    }

    pub fn check_dt(&self, grid: &Grid, dt: f64) -> Result<()> {
        let bound = self.dt_bound(grid);
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, bound });
        }
        Ok(())
    }

    pub fn step(&self, state: &FlowState, dt: f64) -> Result<FlowState> {
        self.check_dt(state.a.grid(), dt)?;
        let k1 = flow_rhs(&state.a);
        let (a, _) = rk4_advance(&state.a, k1, dt);
        Ok(FlowState {
            a,
            tau: state.tau + dt,
        })
    }

    /// As [`FlowIntegrator::step`], also reporting the skew-Hermitian drift
    /// accumulated before the final projection.
    pub fn step_with_report(&self, state: &FlowState, dt: f64) -> Result<(FlowState, StepReport)> {
        self.check_dt(state.a.grid(), dt)?;
        let k1 = flow_rhs(&state.a);
        let (a, report) = rk4_advance(&state.a, k1, dt);
        Ok((
            FlowState {
                a,
                tau: state.tau + dt,
            },
            report,
        ))
    }
}

fn offset(a: &GaugePotential, s: f64, k: &GaugePotential) -> GaugePotential {
    let mut out = a.clone();
    out.as_field_mut()
        .axpy(s, k.as_field())
        .expect("stages share one grid");
    out
}

fn rk4_advance(a: &GaugePotential, k1: GaugePotential, dt: f64) -> (GaugePotential, StepReport) {
    let k2 = flow_rhs(&offset(a, 0.5 * dt, &k1));
    let k3 = flow_rhs(&offset(a, 0.5 * dt, &k2));
    let k4 = flow_rhs(&offset(a, dt, &k3));
    let mut out = a.clone();
    let f = out.as_field_mut();
    for (k, w) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
        f.axpy(dt * w / 6.0, k.as_field()).expect("stages share one grid");
    }
    let skew_drift = f.skew_deviation();
    f.project_skew();
    (out, StepReport { skew_drift })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRow {
    pub tau: f64,
    pub ym: f64,
    /// `4 * trapezoid(|flow_rhs|^2)` up to `tau`.
    pub dissipation_cum: f64,
    /// `ym + dissipation_cum - ym(0)`.
    pub residual: f64,
}

/// One row per time level of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
    /// Trapezoidal `int_0^tau |flow_rhs|^2` at every row, without the coefficient.
    pub rhs_norm_integral: Vec<f64>,
}

impl EnergyLedger {
    pub fn ym0(&self) -> f64 {
        self.rows.first().map_or(0.0, |r| r.ym)
    }

    pub fn last(&self) -> Option<&LedgerRow> {
        self.rows.last()
    }

    /// `|YM(T) + c * int |d_t A|^2 - YM(0)| / YM(0)` at the final row.
    pub fn relative_residual_with(&self, coefficient: f64) -> f64 {
        let (Some(last), Some(int)) = (self.rows.last(), self.rhs_norm_integral.last()) else {
            return 0.0;
        };
        let ym0 = self.ym0();
        let r = (last.ym + coefficient * int - ym0).abs();
        if ym0 > 0.0 {
            r / ym0
        } else {
            r
        }
    }

    pub fn relative_residual(&self) -> f64 {
        self.relative_residual_with(DISSIPATION_COEFFICIENT)
    }

    /// Number of rows whose energy exceeds the previous row's.
    pub fn energy_increases(&self) -> usize {
        self.rows.windows(2).filter(|w| w[1].ym > w[0].ym).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Snapshot every this many steps.
    pub snapshot_every: usize,
    pub cfl_fraction: f64,
}

impl FlowConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "final time must be >= 0 (got {})",
                self.t_final
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive (got {})", self.dt)));
        }
        let steps = (self.t_final / self.dt).round();
        if (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(self.dt) {
            return Err(Error::InvalidArgument(format!(
                "T = {} is not a whole number of steps of {}",
                self.t_final, self.dt
            )));
        }
        let steps = steps as usize;
        if self.snapshot_every == 0 || !steps.is_multiple_of(self.snapshot_every) {
            return Err(Error::InvalidArgument(format!(
                "snapshot cadence {} does not divide the step count {steps}",
                self.snapshot_every
            )));
        }
        Ok(steps)
    }
}

/// Integrate from `a0` to `t_final`, returning snapshots at `tau = 0` and every
/// `snapshot_every` steps, plus a ledger row per step.
pub fn run(config: &FlowConfig, a0: GaugePotential) -> Result<(Vec<FlowState>, EnergyLedger)> {
    let steps = config.steps()?;
    let integrator = FlowIntegrator::new(config.cfl_fraction)?;
    if steps > 0 {
        integrator.check_dt(a0.grid(), config.dt)?;
    }
    let mut state = FlowState::new(a0, 0.0)?;
    let mut ym = state.ym();
    let ym0 = ym;
    let mut rhs = flow_rhs(&state.a);
    let mut rhs_sq = field_inner(rhs.as_field(), rhs.as_field())?;
    let mut integral = 0.0;
    let mut ledger = EnergyLedger::default();
    let push = |ledger: &mut EnergyLedger, tau: f64, ym: f64, integral: f64| {
        let dissipation_cum = DISSIPATION_COEFFICIENT * integral;
        ledger.rows.push(LedgerRow {
            tau,
            ym,
            dissipation_cum,
            residual: ym + dissipation_cum - ym0,
        });
        ledger.rhs_norm_integral.push(integral);
    };
    push(&mut ledger, 0.0, ym, 0.0);
    let mut snapshots = vec![state.clone()];
    for step in 1..=steps {
        let (a, _) = rk4_advance(&state.a, rhs, config.dt);
        let tau = step as f64 * config.dt;
        let next_ym = ym_energy(&curvature(&a));
        if !next_ym.is_finite() || next_ym > ym * (1.0 + INSTABILITY_GROWTH) + f64::MIN_POSITIVE {
            return Err(Error::Instability {
                step,
                tau,
                before: ym,
                after: next_ym,
            });
        }
        rhs = flow_rhs(&a);
        let next_sq = field_inner(rhs.as_field(), rhs.as_field())?;
        integral += 0.5 * config.dt * (rhs_sq + next_sq);
        rhs_sq = next_sq;
        ym = next_ym;
        state = FlowState { a, tau };
        push(&mut ledger, tau, ym, integral);
        if step % config.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok((snapshots, ledger))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitialKind {
    Flat,
    AbelianWave,
    RandomBump,
    TwoBump,
}

impl InitialKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::AbelianWave => "abelian_wave",
            Self::RandomBump => "random_bump",
            Self::TwoBump => "two_bump",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "abelian_wave" => Ok(Self::AbelianWave),
            "random_bump" => Ok(Self::RandomBump),
            "two_bump" => Ok(Self::TwoBump),
            _ => Err(Error::InvalidArgument(format!(
                "unknown initial kind {s:?} (expected flat, abelian_wave, random_bump or two_bump)"
            ))),
        }
    }
}

/// Deterministic initial potential of the requested kind.
pub fn make_initial(kind: InitialKind, grid: &Grid, n: usize, seed: u64, amplitude: f64) -> GaugePotential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        InitialKind::Flat => GaugePotential::zeros(grid, n),
        InitialKind::AbelianWave => {
            let (mode, pol) = abelian_wave_params(grid.m(), seed);
            abelian_wave(grid, n, &mode, &pol, amplitude).expect("generated mode is valid")
        }
        InitialKind::RandomBump => random_bump(grid, n, &mut rng, amplitude),
        InitialKind::TwoBump => two_bump(grid, n, &mut rng, amplitude),
    }
}

/// Integer mode (entries in `-2..=2`, not all zero) and raw polarization that
/// [`make_initial`] uses for an abelian wave with this seed.
pub fn abelian_wave_params(m: usize, seed: u64) -> (Vec<i64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode: Vec<i64> = loop {
        let k: Vec<i64> = (0..m).map(|_| rng.gen_range(-2..=2)).collect();
        if k.iter().any(|&c| c != 0) {
            break k;
        }
    };
    let pol = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    (mode, pol)
}

/// Angular wave numbers `2 pi k_mu / L_mu` of an integer mode.
pub fn wave_vector(grid: &Grid, mode: &[i64]) -> Vec<f64> {
    (0..grid.m())
        .map(|a| 2.0 * std::f64::consts::PI * mode[a] as f64 / grid.period(a))
        .collect()
}

/// Symbol of the central-difference Laplacian, `sum_mu sin^2(kappa_mu h) / h^2`.
pub fn discrete_decay_rate(grid: &Grid, mode: &[i64]) -> f64 {
    let h = grid.h();
    wave_vector(grid, mode)
        .iter()
        .map(|k| (k * h).sin().powi(2))
        .sum::<f64>()
        / (h * h)
}

/// `A_nu = i a_nu I_n` with `a_nu(x) = amplitude eps_nu sin(kappa . x)`, where
/// `eps` is `polarization` projected so the discrete divergence vanishes and
/// then normalized.
pub fn abelian_wave(
    grid: &Grid,
    n: usize,
    mode: &[i64],
    polarization: &[f64],
    amplitude: f64,
) -> Result<GaugePotential> {
    let m = grid.m();
    if mode.len() != m || polarization.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: mode.len().min(polarization.len()),
        });
    }
    let kappa = wave_vector(grid, mode);
    let eps = divergence_free_polarization(grid, &kappa, polarization)?;
    GaugePotential::from_fn(grid, n, |site, nu| {
        let x = grid.position(site);
        let phase: f64 = kappa.iter().zip(&x).map(|(k, xi)| k * xi).sum();
        LieElement::imaginary_identity(n, amplitude * eps[nu] * phase.sin())
    })
}

/// Unit polarization orthogonal to the discrete symbol `sin(kappa h) / h`.
pub fn divergence_free_polarization(grid: &Grid, kappa: &[f64], polarization: &[f64]) -> Result<Vec<f64>> {
    let h = grid.h();
    let s: Vec<f64> = kappa.iter().map(|k| (k * h).sin() / h).collect();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let mut eps = polarization.to_vec();
    if ss > 0.0 {
        let dot: f64 = eps.iter().zip(&s).map(|(a, b)| a * b).sum();
        for (e, si) in eps.iter_mut().zip(&s) {
            *e -= dot / ss * si;
        }
    }
    let norm = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::InvalidArgument(
            "polarization is parallel to the wave vector".into(),
        ));
    }
    Ok(eps.iter().map(|v| v / norm).collect())
}

fn centre(grid: &Grid) -> Vec<f64> {
    (0..grid.m())
        .map(|a| grid.origin()[a] + 0.5 * grid.period(a))
        .collect()
}

fn gaussian_envelope(grid: &Grid, site: usize, centre: &[f64], width: f64) -> f64 {
    let d = grid.displacement(centre, &grid.position(site));
    let r2: f64 = d.iter().map(|v| v * v).sum();
    (-r2 / (2.0 * width * width)).exp()
}

/// Real periodic noise containing only modes with `|k_i| <= 2`, scaled to unit
/// maximum.
fn band_limited_noise<R: Rng>(grid: &Grid, rng: &mut R) -> Vec<f64> {
    let ext = grid.extents();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.sites()];
    let band = 2i64;
    let m = grid.m();
    let mut k = vec![-band; m];
    loop {
        let c = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let idx: Vec<i64> = k.clone();
        spec[grid.index_wrapped(&idx)] += c;
        let mut a = m;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            if k[a] < band {
                k[a] += 1;
                break;
            }
            k[a] = -band;
        }
        if k.iter().all(|&c| c == -band) {
            break;
        }
    }
    fft_nd(&mut spec, ext, FftDirection::Inverse);
    let vals: Vec<f64> = spec.iter().map(|z| z.re).collect();
    let max = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max > 0.0 {
        vals.iter().map(|v| v / max).collect()
    } else {
        vals
    }
}

fn random_bump<R: Rng>(grid: &Grid, n: usize, rng: &mut R, amplitude: f64) -> GaugePotential {
    let m = grid.m();
    let basis = algebra_basis(n);
    let c = centre(grid);
    let width = (0..m).map(|a| grid.period(a)).fold(f64::INFINITY, f64::min) / 10.0;
    let envelope: Vec<f64> = (0..grid.sites())
        .map(|s| gaussian_envelope(grid, s, &c, width))
        .collect();
    let nn = n * n;
    let mut data = vec![Complex64::new(0.0, 0.0); grid.sites() * m * nn];
    for mu in 0..m {
        for b in &basis {
            let noise = band_limited_noise(grid, rng);
            for site in 0..grid.sites() {
                let w = amplitude * envelope[site] * noise[site];
                let off = (site * m + mu) * nn;
                for (d, e) in data[off..off + nn].iter_mut().zip(b.entries()) {
                    *d += e * w;
                }
            }
        }
    }
    let field = LieField::from_data(grid, n, m, data).expect("basis combinations are skew-Hermitian");
    GaugePotential::from_field(field).expect("potential shape")
}

fn two_bump<R: Rng>(grid: &Grid, n: usize, rng: &mut R, amplitude: f64) -> GaugePotential {
    let m = grid.m();
    let basis = algebra_basis(n);
    let c = centre(grid);
    let quarter = grid.period(0) / 4.0;
    let width = (0..m).map(|a| grid.period(a)).fold(f64::INFINITY, f64::min) / 12.0;
    let mut bumps = Vec::new();
    for shift in [-quarter, quarter] {
        let mut at = c.clone();
        at[0] += shift;
        let charges: Vec<LieElement> = (0..m)
            .map(|_| {
                basis.iter().fold(LieElement::zero(n), |acc, b| {
                    let w: f64 = rng.sample(StandardNormal);
                    acc.add(&b.scaled(w)).expect("same n")
                })
            })
            .collect();
        bumps.push((at, charges));
    }
    GaugePotential::from_fn(grid, n, |site, mu| {
        bumps.iter().fold(LieElement::zero(n), |acc, (at, q)| {
            let w = amplitude * gaussian_envelope(grid, site, at, width);
            acc.add(&q[mu].scaled(w)).expect("same n")
        })
    })
    .expect("bump potential is skew-Hermitian")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{gauge_transform_constant, LieField};
    use crate::lie::random_unitary;
    use std::f64::consts::PI;

    fn heat_grid(m: usize, extent: usize) -> Grid {
        Grid::cubic(m, extent, 2.0 * PI / extent as f64).unwrap()
    }

    #[test]
    fn flat_is_stationary() {
        let g = heat_grid(3, 8);
        let a = GaugePotential::zeros(&g, 2);
        assert_eq!(flow_rhs(&a).as_field().max_abs(), 0.0);
        let fi = FlowIntegrator::default();
        let s = fi.step(&FlowState::new(a.clone(), 0.0).unwrap(), 0.01).unwrap();
        assert_eq!(s.a, a);
        assert!((s.tau - 0.01).abs() < 1e-15);
    }

    #[test]
    fn constant_commuting_potential_is_stationary() {
        let g = heat_grid(3, 6);
        let a = GaugePotential::from_fn(&g, 2, |_, mu| LieElement::imaginary_identity(2, 0.3 * mu as f64 + 0.1)).unwrap();
        assert!(flow_rhs(&a).as_field().max_abs() < 1e-14);
    }

    #[test]
    fn abelian_rhs_is_wide_laplacian() {
        let g = heat_grid(3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // sum of two divergence-free waves
        let w1 = abelian_wave(&g, 1, &[1, 2, 0], &[0.3, -1.0, 0.7], 0.8).unwrap();
        let w2 = abelian_wave(&g, 1, &[0, -1, 1], &[rng.gen(), rng.gen(), 1.0], 0.5).unwrap();
        let mut a = w1.clone();
        a.as_field_mut().axpy(1.0, w2.as_field()).unwrap();
        let rhs = flow_rhs(&a);
        let h = g.h();
        for site in 0..g.sites() {
            for nu in 0..3 {
                let mut lap = 0.0;
                for mu in 0..3 {
                    let f = g.neighbor(g.neighbor(site, mu, true), mu, true);
                    let b = g.neighbor(g.neighbor(site, mu, false), mu, false);
                    lap += (a.component(f, nu)[0].im - 2.0 * a.component(site, nu)[0].im
                        + a.component(b, nu)[0].im)
                        / (4.0 * h * h);
                }
                assert!((rhs.component(site, nu)[0].im - lap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn abelian_wave_is_divergence_free() {
        let g = heat_grid(3, 10);
        for seed in 0..5 {
            let a = make_initial(InitialKind::AbelianWave, &g, 1, seed, 1.0);
            let zero = GaugePotential::zeros(&g, 1);
            let mut div = LieField::zeros(&g, 1, 1);
            for nu in 0..3 {
                let comp = LieField::from_fn(&g, 1, 1, |s, _| LieElement::new(1, a.component(s, nu).to_vec()).unwrap()).unwrap();
                let d = crate::lattice::covariant_derivative(&zero, &comp, nu).unwrap();
                div.axpy(1.0, &d).unwrap();
            }
            assert!(div.max_abs() <= 1e-12);
        }
    }

    #[test]
    fn plane_wave_decays_at_the_discrete_rate() {
        let g = heat_grid(3, 12);
        let mode = [1, 1, 0];
        let a0 = abelian_wave(&g, 1, &mode, &[1.0, 0.0, 0.5], 1.0).unwrap();
        let rate = discrete_decay_rate(&g, &mode);
        let dt = 0.1 * g.h() * g.h();
        let steps = 10;
        let fi = FlowIntegrator::default();
        let mut s = FlowState::new(a0.clone(), 0.0).unwrap();
        for _ in 0..steps {
            s = fi.step(&s, dt).unwrap();
        }
        let decay = (-rate * s.tau).exp();
        let mut want = a0.clone();
        want.as_field_mut().scale(decay);
        assert!(s.a.as_field().max_abs_diff(want.as_field()) < 1e-8);
    }

    #[test]
    fn cfl_violation_names_bound() {
        let g = heat_grid(3, 8);
        let fi = FlowIntegrator::default();
        let s = FlowState::new(GaugePotential::zeros(&g, 1), 0.0).unwrap();
        let bound = fi.dt_bound(&g);
        match fi.step(&s, 2.0 * bound) {
            Err(Error::CflViolation { bound: b, .. }) => assert!((b - bound).abs() < 1e-15),
            other => panic!("expected CFL error, got {other:?}"),
        }
        assert!(fi.step(&s, 0.0).is_err());
    }

    #[test]
    fn step_dissipates_and_stays_skew() {
        let g = heat_grid(3, 8);
        let a = make_initial(InitialKind::RandomBump, &g, 2, 3, 1.0);
        let s = FlowState::new(a, 0.0).unwrap();
        let fi = FlowIntegrator::default();
        let (next, rep) = fi.step_with_report(&s, fi.dt_bound(&g)).unwrap();
        assert!(next.ym() <= s.ym() * (1.0 + 1e-10));
        assert!(rep.skew_drift <= 1e-12);
        assert!(next.a.as_field().skew_deviation() < 1e-14);
    }

    #[test]
    fn run_zero_horizon() {
        let g = heat_grid(3, 6);
        let a = make_initial(InitialKind::TwoBump, &g, 2, 1, 0.5);
        let cfg = FlowConfig {
            dt: 0.01,
            t_final: 0.0,
            snapshot_every: 1,
            cfl_fraction: 0.1,
        };
        let (snaps, ledger) = run(&cfg, a).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(ledger.rows.len(), 1);
        assert_eq!(ledger.rows[0].residual, 0.0);
    }

    #[test]
    fn run_checks_cadence_and_horizon() {
        let g = heat_grid(3, 6);
        let a = GaugePotential::zeros(&g, 1);
        let bad = FlowConfig {
            dt: 0.01,
            t_final: 0.05,
            snapshot_every: 2,
            cfl_fraction: 0.1,
        };
        assert!(run(&bad, a.clone()).is_err());
        let frac = FlowConfig {
            t_final: 0.055,
            snapshot_every: 1,
            ..bad.clone()
        };
        assert!(run(&frac, a.clone()).is_err());
        let ok = FlowConfig {
            snapshot_every: 5,
            ..bad
        };
        let (snaps, ledger) = run(&ok, a).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(ledger.rows.len(), 6);
        assert!(ledger.rows.iter().all(|r| r.ym == 0.0));
    }

    #[test]
    fn run_ledger_balances_at_second_order() {
        let g = heat_grid(3, 16);
        let a = make_initial(InitialKind::RandomBump, &g, 2, 11, 1.0);
        let residual = |dt: f64| {
            let cfg = FlowConfig {
                dt,
                t_final: 0.025,
                snapshot_every: 4,
                cfl_fraction: 0.1,
            };
            let (snaps, ledger) = run(&cfg, a.clone()).unwrap();
            assert_eq!(ledger.energy_increases(), 0);
            assert_eq!(snaps.len(), ledger.rows.len() / 4 + 1);
            ledger.relative_residual()
        };
        let (r1, r2) = (residual(0.003125), residual(0.0015625));
        assert!(r1 < 1e-3, "{r1}");
        assert!(r2 < r1 / 3.0, "{r1} -> {r2}");
    }

    #[test]
    fn instability_aborts() {
        // beyond the RK4 stability region the top modes grow
        let g = heat_grid(3, 8);
        let a = make_initial(InitialKind::RandomBump, &g, 1, 2, 1.0);
        let dt = 2.0 * g.h() * g.h();
        let cfg = FlowConfig {
            dt,
            t_final: 40.0 * dt,
            snapshot_every: 40,
            cfl_fraction: 5.0,
        };
        assert!(matches!(run(&cfg, a), Err(Error::Instability { .. })));
    }

    #[test]
    fn initial_data_is_deterministic() {
        let g = heat_grid(3, 8);
        for kind in [InitialKind::RandomBump, InitialKind::TwoBump, InitialKind::AbelianWave] {
            let a = make_initial(kind, &g, 2, 9, 1.0);
            let b = make_initial(kind, &g, 2, 9, 1.0);
            let c = make_initial(kind, &g, 2, 10, 1.0);
            assert_eq!(a, b);
            assert_ne!(a, c);
            assert!(a.as_field().skew_deviation() < 1e-14);
            assert_eq!(InitialKind::parse(kind.name()).unwrap(), kind);
        }
        assert_eq!(make_initial(InitialKind::Flat, &g, 2, 0, 1.0).as_field().max_abs(), 0.0);
        assert!(InitialKind::parse("spiral").is_err());
    }

    #[test]
    fn flow_commutes_with_constant_conjugation() {
        let g = heat_grid(3, 8);
        let a = make_initial(InitialKind::RandomBump, &g, 2, 4, 1.5);
        let u = random_unitary(2, &mut ChaCha8Rng::seed_from_u64(1));
        let fi = FlowIntegrator::default();
        let dt = fi.dt_bound(&g);
        let mut s1 = FlowState::new(a.clone(), 0.0).unwrap();
        let mut s2 = FlowState::new(gauge_transform_constant(&a, &u).unwrap(), 0.0).unwrap();
        for _ in 0..3 {
            s1 = fi.step(&s1, dt).unwrap();
            s2 = fi.step(&s2, dt).unwrap();
        }
        let conj = gauge_transform_constant(&s1.a, &u).unwrap();
        assert!(conj.as_field().max_abs_diff(s2.a.as_field()) < 1e-8);
    }
}
