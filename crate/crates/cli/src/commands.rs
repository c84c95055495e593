//! Subcommand implementations. Each one echoes its config, writes its CSVs into
//! the output directory and finishes with a manifest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

use ymlab_core::density::{
    gaussian_mass, global_density_integral, monotonicity_fit, rescaling_check, sample_ball, theta_batch,
    DensityLadder, DensityProbe, DensitySource, SnapshotSeries, StaticDensity, DEFAULT_C_CAP,
};
use ymlab_core::flow::{self, abelian_wave_params, discrete_decay_rate, EnergyLedger, FlowState, InitialKind};
use ymlab_core::geometry::{
    cone_concentration_test, directional_density_test, extract_singular_set, grassmann_sample_with, pde_residual,
    slice_integral, synthetic_tube_density, GridTheta, Plane, SingularCandidateSet, SliceQuadrature,
};
use ymlab_core::lattice::{curvature, energy_density, snapshot, Grid, ScalarField};

use crate::config::ExperimentConfig;
use crate::output::{coord_header, fmt_f64, OutputDir};
use crate::CliError;

pub const RESCALING_TOL: f64 = 1e-4;
pub const GLOBAL_TOL: f64 = 1e-4;
pub const DISSIPATION_TOL: f64 = 1e-3;
pub const SLICE_GROWTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run,
    FlowRun,
    DensityProbe {
        probes: Option<PathBuf>,
        snapshots: Option<PathBuf>,
    },
    SingularExtract {
        epsilon: Option<f64>,
    },
    DiagMonotonicity,
    DiagSlice,
    DiagCone,
    DiagPde,
    IdentitySuite,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::FlowRun => "flow-run",
            Self::DensityProbe { .. } => "density-probe",
            Self::SingularExtract { .. } => "singular-extract",
            Self::DiagMonotonicity => "diag-monotonicity",
            Self::DiagSlice => "diag-slice",
            Self::DiagCone => "diag-cone",
            Self::DiagPde => "diag-pde",
            Self::IdentitySuite => "identity-suite",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn resolve_config(opts: &Options) -> Result<ExperimentConfig, CliError> {
    let mut config = match (&opts.config, &opts.preset) {
        (Some(_), Some(_)) => return Err(CliError::usage("give either --config or --preset, not both")),
        (None, None) => return Err(CliError::usage("one of --config PATH or --preset NAME is required")),
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
    };
    if let Some(seed) = opts.seed {
        config.set_seed(seed);
        config.validate()?;
    }
    Ok(config)
}

/// Run one subcommand end to end.
pub fn execute(cmd: &Command, opts: &Options) -> Result<(), CliError> {
    let config = resolve_config(opts)?;
    let echo = config.to_toml();
    println!("[config] {}", cmd.name());
    print!("{echo}");
    let probes = match cmd {
        Command::DensityProbe { probes: Some(path), .. } => Some(read_probes(path, config.grid.m)?),
        _ => None,
    };
    let loaded = match cmd {
        Command::DensityProbe {
            snapshots: Some(dir), ..
        } => Some(load_snapshots(dir)?),
        _ => None,
    };
    let dir = opts
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.directory));
    let mut out = OutputDir::create(&dir)?;
    out.write_bytes("config.toml", echo.as_bytes())?;
    let exp = Experiment::build(config, loaded)?;
    let result = match cmd {
        Command::Run => run(&exp, &mut out),
        Command::FlowRun => flow_run(&exp, &mut out),
        Command::DensityProbe { .. } => density_probe(&exp, &mut out, probes),
        Command::SingularExtract { epsilon } => singular_extract(&exp, &mut out, *epsilon),
        Command::DiagMonotonicity => diag_monotonicity(&exp, &mut out),
        Command::DiagSlice => diag_slice(&exp, &mut out),
        Command::DiagCone => diag_cone(&exp, &mut out),
        Command::DiagPde => diag_pde(&exp, &mut out),
        Command::IdentitySuite => identity_suite(&exp),
    };
    let manifest = out.finish(cmd.name())?;
    println!("[output] manifest {}", manifest.display());
    result
}

pub enum Source {
    Flow {
        states: Vec<FlowState>,
        ledger: EnergyLedger,
        series: SnapshotSeries,
    },
    Fixture {
        density: StaticDensity,
        plane: Plane,
        anchor: Vec<f64>,
    },
    Loaded {
        series: SnapshotSeries,
    },
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: Grid,
    pub source: Source,
}

impl Experiment {
    pub fn build(config: ExperimentConfig, loaded: Option<SnapshotSeries>) -> Result<Self, CliError> {
        config.validate()?;
        let grid = config.grid()?;
        let source = if let Some(series) = loaded {
            if !series.grid().same_shape(&grid) {
                return Err(CliError::usage("snapshot grid does not match the config grid"));
            }
            Source::Loaded { series }
        } else if let Some(fc) = config.flow_config()? {
            let f = config.flow.as_ref().expect("flow section present");
            let kind = InitialKind::parse(&f.initial.kind)?;
            let a0 = flow::make_initial(kind, &grid, config.group.n, f.initial.seed, f.initial.amplitude);
            println!(
                "[flow] {} seed {} on {:?} (h = {}), dt = {}, {} steps",
                kind.name(),
                f.initial.seed,
                grid.extents(),
                grid.h(),
                fc.dt,
                fc.steps()?
            );
            let (states, ledger) = flow::run(&fc, a0)?;
            let series = SnapshotSeries::from_flow(&states)?;
            Source::Flow { states, ledger, series }
        } else {
            let fx = config.fixture.as_ref().expect("fixture section present");
            let plane = config.fixture_plane()?.expect("fixture plane");
            let e = synthetic_tube_density(&grid, &plane, &fx.anchor, fx.alpha, fx.r0, fx.amplitude)?;
            println!(
                "[fixture] planted tube along axes {:?} through {:?}, alpha {}, r0 {}",
                fx.plane_axes, fx.anchor, fx.alpha, fx.r0
            );
            Source::Fixture {
                density: StaticDensity::new(e),
                plane,
                anchor: fx.anchor.clone(),
            }
        };
        Ok(Self { config, grid, source })
    }

    pub fn density(&self) -> &dyn DensitySource {
        match &self.source {
            Source::Flow { series, .. } | Source::Loaded { series } => series,
            Source::Fixture { density, .. } => density,
        }
    }

    /// `YM(A_0)`, or the total energy of a static density.
    pub fn ym0(&self) -> f64 {
        match &self.source {
            Source::Flow { ledger, .. } => ledger.ym0(),
            Source::Loaded { series } => series.fields()[0].integral(),
            Source::Fixture { density, .. } => density.field().integral(),
        }
    }

    pub fn final_field(&self) -> &ScalarField {
        match &self.source {
            Source::Flow { series, .. } | Source::Loaded { series } => series.fields().last().expect("snapshots"),
            Source::Fixture { density, .. } => density.field(),
        }
    }

    /// Fixture anchor, otherwise the grid centre.
    pub fn reference_point(&self) -> Vec<f64> {
        match &self.source {
            Source::Fixture { anchor, .. } => anchor.clone(),
            _ => centre(&self.grid),
        }
    }

    pub fn quad(&self) -> ymlab_core::density::QuadratureConfig {
        self.config.quadrature().expect("validated")
    }

    pub fn ladder(&self) -> Vec<f64> {
        self.config.rho_ladder().expect("validated")
    }

    pub fn tau(&self) -> f64 {
        self.config.tau()
    }

    pub fn extract(&self, epsilon: f64) -> Result<SingularCandidateSet, CliError> {
        let ladder = self.ladder();
        let gt = GridTheta::new(self.density(), self.tau(), &ladder, &self.quad())?;
        Ok(extract_singular_set(&gt, self.tau(), epsilon, &ladder, self.config.density.j)?)
    }

    /// Seeded points spread uniformly over the box.
    pub fn random_points(&self, count: usize, salt: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.singular.seed ^ salt);
        let g = &self.grid;
        (0..count)
            .map(|_| {
                (0..g.m())
                    .map(|a| g.origin()[a] + rng.gen::<f64>() * g.period(a))
                    .collect()
            })
            .collect()
    }
}

pub fn centre(grid: &Grid) -> Vec<f64> {
    (0..grid.m())
        .map(|a| grid.origin()[a] + grid.h() * (grid.extents()[a] / 2) as f64)
        .collect()
}

fn read_probes(path: &std::path::Path, m: usize) -> Result<Vec<DensityProbe>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read probe file {}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::usage(format!("probe file {}: {e}", path.display())))?
        .clone();
    let mut expected = coord_header(m);
    expected.push("tau".into());
    expected.push("rho".into());
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CliError::usage(format!(
            "probe file {}: expected header {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut probes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::usage(format!("probe file row {}: {e}", i + 1)))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::usage(format!("probe file row {}: {e}", i + 1)))?;
        let probe = DensityProbe::new(vals[..m].to_vec(), vals[m], vals[m + 1])
            .map_err(|e| CliError::usage(format!("probe file row {}: {e}", i + 1)))?;
        probes.push(probe);
    }
    Ok(probes)
}

fn load_snapshots(dir: &std::path::Path) -> Result<SnapshotSeries, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("cannot read snapshot directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ymf1"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!("no .ymf1 snapshots in {}", dir.display())));
    }
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for p in &paths {
        let (a, tau) = snapshot::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        times.push(tau);
        fields.push(energy_density(&curvature(&a)));
    }
    println!("[snapshots] {} files from {}", paths.len(), dir.display());
    Ok(SnapshotSeries::new(times, fields)?)
}

fn write_flow_outputs(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let Source::Flow { states, ledger, .. } = &exp.source else {
        return Err(CliError::usage("this command needs a [flow] section"));
    };
    let header: Vec<String> = ["tau", "ym", "dissipation_cum", "residual"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = ledger
        .rows
        .iter()
        .map(|r| vec![fmt_f64(r.tau), fmt_f64(r.ym), fmt_f64(r.dissipation_cum), fmt_f64(r.residual)])
        .collect();
    out.write_csv("ledger.csv", &header, &rows)?;
    if exp.config.wants("ymf1") {
        for (i, s) in states.iter().enumerate() {
            out.write_snapshot(&format!("snapshot_{i:04}.ymf1"), &s.a, s.tau)?;
        }
    }
    let last = ledger.last().expect("ledger has a row");
    println!(
        "[flow] YM(0) = {}, YM(T) = {}, rows = {}, energy increases = {}, balance residual = {:e}",
        fmt_f64(ledger.ym0()),
        fmt_f64(last.ym),
        ledger.rows.len(),
        ledger.energy_increases(),
        ledger.relative_residual()
    );
    if let Some(f) = &exp.config.flow {
        if f.initial.kind == InitialKind::AbelianWave.name() {
            let (mode, _) = abelian_wave_params(exp.grid.m(), f.initial.seed);
            let expected = (-2.0 * discrete_decay_rate(&exp.grid, &mode) * last.tau).exp();
            let ratio = last.ym / ledger.ym0();
            println!(
                "[flow] abelian mode {mode:?}: YM(T)/YM(0) = {}, closed form {}, rel err {:e}",
                fmt_f64(ratio),
                fmt_f64(expected),
                (ratio - expected).abs() / expected
            );
        }
    }
    Ok(())
}

fn write_ladder(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let z = exp.reference_point();
    let ladder = DensityLadder::evaluate(exp.density(), &z, exp.tau(), &exp.ladder(), &exp.quad())?;
    let rows: Vec<Vec<String>> = ladder
        .scales
        .iter()
        .zip(&ladder.values)
        .map(|(r, v)| vec![fmt_f64(*r), fmt_f64(*v)])
        .collect();
    out.write_csv("ladder.csv", &["rho".into(), "theta".into()], &rows)?;
    println!("[density] ladder at {z:?}, tau = {}: {:?}", exp.tau(), ladder.values);
    Ok(())
}

fn write_singular_set(exp: &Experiment, out: &mut OutputDir, epsilon: f64) -> Result<SingularCandidateSet, CliError> {
    let set = exp.extract(epsilon)?;
    let mut header = coord_header(exp.grid.m());
    header.push("liminf_theta".into());
    let rows: Vec<Vec<String>> = set
        .points
        .iter()
        .map(|p| {
            let mut r: Vec<String> = p.z.iter().map(|&x| fmt_f64(x)).collect();
            r.push(fmt_f64(p.liminf));
            r
        })
        .collect();
    out.write_csv("singular_set.csv", &header, &rows)?;
    println!("[singular] epsilon = {epsilon}: {} candidate sites", set.len());
    if let Source::Fixture { plane, anchor, .. } = &exp.source {
        let planted = planted_sites(&exp.grid, plane, anchor);
        let matches = set.sites() == planted;
        println!(
            "[singular] planted sites within h of the plane: {}; extracted set {} them",
            planted.len(),
            if matches { "equals" } else { "differs from" }
        );
    }
    Ok(set)
}

/// Sites within one spacing of a planted plane, in site order.
pub fn planted_sites(grid: &Grid, plane: &Plane, anchor: &[f64]) -> Vec<usize> {
    (0..grid.sites())
        .filter(|&s| {
            let d = grid.displacement(anchor, &grid.position(s));
            plane.distance(&d) <= grid.h() * (1.0 + 1e-9)
        })
        .collect()
}

fn run(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    if matches!(exp.source, Source::Flow { .. }) {
        write_flow_outputs(exp, out)?;
    }
    write_ladder(exp, out)?;
    write_singular_set(exp, out, exp.config.singular.epsilon)?;
    Ok(())
}

fn flow_run(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    write_flow_outputs(exp, out)
}

fn density_probe(exp: &Experiment, out: &mut OutputDir, probes: Option<Vec<DensityProbe>>) -> Result<(), CliError> {
    let quad = exp.quad();
    let probes = match probes {
        Some(p) => p,
        None => exp
            .ladder()
            .iter()
            .map(|&rho| DensityProbe::new(exp.reference_point(), exp.tau(), rho))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let values = theta_batch(exp.density(), &probes, &quad)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut header = coord_header(exp.grid.m());
    header.extend(["tau", "rho", "theta"].map(String::from));
    let rows: Vec<Vec<String>> = probes
        .iter()
        .zip(&values)
        .map(|(p, v)| {
            let mut r: Vec<String> = p.z.iter().map(|&x| fmt_f64(x)).collect();
            r.extend([fmt_f64(p.tau), fmt_f64(p.rho), fmt_f64(*v)]);
            r
        })
        .collect();
    out.write_csv("probes.csv", &header, &rows)?;
    println!("[density-probe] {} probes evaluated", probes.len());
    write_ladder(exp, out)
}

fn singular_extract(exp: &Experiment, out: &mut OutputDir, epsilon: Option<f64>) -> Result<(), CliError> {
    let eps = epsilon.unwrap_or(exp.config.singular.epsilon);
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CliError::usage(format!("--epsilon must be finite and >= 0 (got {eps})")));
    }
    write_singular_set(exp, out, eps).map(|_| ())
}

fn diag_monotonicity(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let mut points = vec![exp.reference_point()];
    points.extend(exp.random_points(4, 0x6d6f6e6f));
    let report = monotonicity_fit(exp.density(), &points, exp.tau(), &exp.ladder(), exp.ym0(), &exp.quad())?;
    let mut header = coord_header(exp.grid.m());
    header.extend(["rho", "rho_prime", "theta", "theta_prime", "c"].map(String::from));
    let rows: Vec<Vec<String>> = report
        .pairs
        .iter()
        .map(|p| {
            let mut r: Vec<String> = p.z.iter().map(|&x| fmt_f64(x)).collect();
            r.extend([
                fmt_f64(p.rho),
                fmt_f64(p.rho_p),
                fmt_f64(p.theta),
                fmt_f64(p.theta_p),
                p.c.map(fmt_f64).unwrap_or_default(),
            ]);
            r
        })
        .collect();
    out.write_csv("monotonicity.csv", &header, &rows)?;
    match report.c_max {
        Some(c) => println!(
            "[monotonicity] {} pairs, fitted C = {} ({} the cap {DEFAULT_C_CAP})",
            report.pairs.len(),
            fmt_f64(c),
            if c <= DEFAULT_C_CAP { "within" } else { "above" }
        ),
        None => println!("[monotonicity] {} pairs, no finite C exists", report.pairs.len()),
    }
    Ok(())
}

fn diag_slice(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let m = exp.grid.m();
    if m < 4 {
        return Err(CliError::usage(format!("diag-slice needs m >= 4 (got {m})")));
    }
    let ladder = exp.ladder();
    let gt = GridTheta::new(exp.density(), exp.tau(), &ladder, &exp.quad())?;
    let quad = SliceQuadrature::for_grid(&exp.grid);
    let zbar = exp.reference_point();
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.singular.seed);
    let mut slice_rows = Vec::new();
    let mut plane_rows = Vec::new();
    let mut finite = 0;
    let count = exp.config.singular.plane_samples;
    for id in 0..count {
        let u = grassmann_sample_with(m, 4, &mut rng)?;
        for (row, v) in u.frame().iter().enumerate() {
            let mut r = vec![id.to_string(), row.to_string()];
            r.extend(v.iter().map(|&x| fmt_f64(x)));
            plane_rows.push(r);
        }
        let values = ladder
            .iter()
            .map(|&rho| slice_integral(&gt, &zbar, &u, rho, &quad))
            .collect::<Result<Vec<_>, _>>()?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min.is_finite() && min <= SLICE_GROWTH * values[0] {
            finite += 1;
        }
        for (rho, v) in ladder.iter().zip(&values) {
            slice_rows.push(vec![id.to_string(), fmt_f64(*rho), fmt_f64(*v)]);
        }
    }
    out.write_csv(
        "slice.csv",
        &["plane_id".into(), "rho".into(), "slice_value".into()],
        &slice_rows,
    )?;
    let mut header = vec!["plane_id".to_string(), "row".to_string()];
    header.extend((1..=m).map(|i| format!("v{i}")));
    out.write_csv("planes.csv", &header, &plane_rows)?;
    println!("[slice] {finite}/{count} planes have ladder minimum <= {SLICE_GROWTH}x the coarsest value");
    Ok(())
}

fn cone_direction(exp: &Experiment) -> Result<Vec<f64>, CliError> {
    let m = exp.grid.m();
    let w = match (&exp.config.singular.cone_direction, &exp.source) {
        (Some(w), _) => w.clone(),
        (None, Source::Fixture { plane, .. }) => plane.frame()[0].clone(),
        (None, _) => {
            let mut e = vec![0.0; m];
            e[0] = 1.0;
            e
        }
    };
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(w.iter().map(|x| x / n).collect())
}

fn diag_cone(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let set = exp.extract(exp.config.singular.epsilon)?;
    let omega = cone_direction(exp)?;
    let w = Plane::span(exp.grid.m(), std::slice::from_ref(&omega))?;
    let r_ladder = exp.config.r_ladder()?;
    let header: Vec<String> = ["r", "s", "nonempty"].map(String::from).to_vec();
    let apex = match &exp.source {
        Source::Fixture { anchor, .. } if set.contains_point(anchor) => Some(anchor.clone()),
        _ => set
            .points
            .iter()
            .max_by(|a, b| a.liminf.total_cmp(&b.liminf))
            .map(|p| p.z.clone()),
    };
    let Some(apex) = apex else {
        out.write_csv("cone.csv", &header, &[])?;
        println!("[cone] singular set is empty at epsilon = {}; nothing to test", exp.config.singular.epsilon);
        return Ok(());
    };
    let mut rows = Vec::new();
    for &s in &exp.config.singular.s_list {
        let res = cone_concentration_test(&set, &apex, &w, s, &r_ladder)?;
        let hits = res.iter().filter(|(_, hit)| *hit).count();
        println!("[cone] s = {s}: nonempty at {hits}/{} radii", res.len());
        for (r, hit) in res {
            rows.push(vec![fmt_f64(r), fmt_f64(s), hit.to_string()]);
        }
    }
    out.write_csv("cone.csv", &header, &rows)?;
    let ladder = exp.ladder();
    let gt = GridTheta::new(exp.density(), exp.tau(), &ladder, &exp.quad())?;
    let t_grid = [0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0];
    let rep = directional_density_test(&gt, &apex, &omega, &t_grid, &ladder, exp.config.density.j)?;
    let rows: Vec<Vec<String>> = rep
        .profile
        .iter()
        .map(|(t, v)| vec![fmt_f64(*t), fmt_f64(*v)])
        .collect();
    out.write_csv("directional.csv", &["t".into(), "theta_min".into()], &rows)?;
    println!("[cone] directional density along {omega:?}: inf = {}", fmt_f64(rep.inf));
    Ok(())
}

fn diag_pde(exp: &Experiment, out: &mut OutputDir) -> Result<(), CliError> {
    let quad = exp.quad();
    let mut points = vec![exp.reference_point()];
    points.extend(exp.random_points(2, 0x706465));
    let flowing = !matches!(exp.source, Source::Fixture { .. });
    let mut header = coord_header(exp.grid.m());
    header.extend(["tau", "rho", "residual"].map(String::from));
    let mut rows = Vec::new();
    for z in &points {
        for &rho in &exp.ladder() {
            let dtau = 0.05 * rho * rho;
            // keep tau + dtau inside the snapshot range
            let tau = if flowing { exp.tau() - 1.5 * dtau } else { exp.tau() };
            let widths = |k: f64| (0.05 * rho / k, dtau / k, 0.05 * rho / k);
            let coarse = pde_residual(exp.density(), z, tau, rho, widths(1.0), &quad);
            let fine = pde_residual(exp.density(), z, tau, rho, widths(2.0), &quad);
            match (coarse, fine) {
                (Ok(c), Ok(f)) => {
                    println!(
                        "[pde] z = {z:?}, tau = {tau}, rho = {rho}: residual {:e} -> {:e} under stencil halving",
                        c.residual, f.residual
                    );
                    let mut r: Vec<String> = z.iter().map(|&x| fmt_f64(x)).collect();
                    r.extend([fmt_f64(tau), fmt_f64(rho), fmt_f64(f.residual)]);
                    rows.push(r);
                }
                (Err(e), _) | (_, Err(e)) => println!("[pde] skipped tau = {tau}, rho = {rho}: {e}"),
            }
        }
    }
    out.write_csv("pde.csv", &header, &rows)?;
    Ok(())
}

/// One line of the identity suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: Option<bool>,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// Energy balance, rescaling and global-integral checks on the experiment's data.
pub fn identity_checks(exp: &Experiment) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    checks.push(match &exp.source {
        Source::Flow { states, ledger, .. } => {
            let fc = exp.config.flow_config()?.expect("flow config");
            let r1 = ledger.relative_residual();
            let halved = ymlab_core::flow::FlowConfig {
                dt: fc.dt / 2.0,
                snapshot_every: fc.snapshot_every * 2,
                ..fc.clone()
            };
            let (_, ledger2) = flow::run(&halved, states[0].a.clone())?;
            let r2 = ledger2.relative_residual();
            Check {
                name: "dissipation",
                pass: Some(r1 <= DISSIPATION_TOL && r2 <= r1),
                detail: format!(
                    "relative balance residual {r1:e} at dt = {} (tol {DISSIPATION_TOL:e}), {r2:e} at dt/2",
                    fc.dt
                ),
            }
        }
        _ => Check {
            name: "dissipation",
            pass: None,
            detail: "no flow in this experiment".into(),
        },
    });

    let e = exp.final_field();
    let quad = exp.quad();
    let g = &exp.grid;
    let m = g.m();
    let l_min = 2.0 * g.min_half_period();

    let rho = 0.9 * l_min / (16.0 * std::f64::consts::SQRT_2);
    let mut rng = ChaCha8Rng::seed_from_u64(exp.config.singular.seed ^ 0x726573);
    let mut worst = 0.0f64;
    for zbar in exp.random_points(10, 0x7a626172) {
        let x = sample_ball(&mut rng, m, 1.0);
        worst = worst.max(rescaling_check(e, &zbar, &x, rho, &quad)?.residual);
    }
    checks.push(Check {
        name: "rescaling",
        pass: Some(worst <= RESCALING_TOL),
        detail: format!("max residual {worst:e} over 10 probes at rho = {rho} (tol {RESCALING_TOL:e})"),
    });

    let ym = e.integral();
    let target = gaussian_mass(m) * ym;
    let mut worst = 0.0f64;
    for k in [1.0, 0.9, 0.8] {
        let got = global_density_integral(e, k * l_min / 16.0, &quad)?;
        let err = if target > 0.0 {
            (got - target).abs() / target
        } else {
            got.abs()
        };
        worst = worst.max(err);
    }
    checks.push(Check {
        name: "global-integral",
        pass: Some(worst <= GLOBAL_TOL),
        detail: format!("max relative error {worst:e} over 3 scales (tol {GLOBAL_TOL:e})"),
    });
    Ok(checks)
}

fn identity_suite(exp: &Experiment) -> Result<(), CliError> {
    let checks = identity_checks(exp)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| c.pass == Some(false)).count();
    if failed > 0 {
        return Err(CliError::numerical(format!("identity-suite: {failed} check(s) failed")));
    }
    Ok(())
}
