//! Experiment configuration: TOML schema, validation and shipped presets.

use serde::{Deserialize, Serialize};
use std::path::Path;

use ymlab_core::density::{default_rho_ladder, QuadratureConfig, DEFAULT_LIMINF_J, DEFAULT_R_TRUNC, DEFAULT_TAIL_TOLERANCE};
use ymlab_core::flow::{FlowConfig, InitialKind, DEFAULT_CFL_FRACTION};
use ymlab_core::geometry::Plane;
use ymlab_core::lattice::Grid;

use crate::CliError;

pub const PRESETS: &[&str] = &["flat", "abelian-heatwave", "su2-bump", "planted-tube"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub group: GroupSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    /// Static density fixture used instead of a flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<FixtureSection>,
    pub density: DensitySection,
    pub singular: SingularSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
    pub extents: Vec<usize>,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_integrator")]
    pub integrator: String,
    /// Step size; derived from `cfl_fraction` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    pub t_final: f64,
    pub snapshot_every: usize,
    pub initial: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: String,
    pub seed: u64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSection {
    pub kind: String,
    /// Coordinate axes spanning the planted plane.
    pub plane_axes: Vec<usize>,
    pub anchor: Vec<f64>,
    pub alpha: f64,
    pub r0: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_ladder: Option<Vec<f64>>,
    #[serde(default = "default_r_trunc")]
    pub r_trunc: f64,
    #[serde(default = "default_tail")]
    pub tail_tolerance: f64,
    #[serde(default = "default_j")]
    pub j: usize,
    /// Evaluation time; the flow horizon (or 1 for a fixture) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularSection {
    pub epsilon: f64,
    pub s_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ladder: Option<Vec<f64>>,
    pub plane_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone_direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<String>,
}

fn default_integrator() -> String {
    "rk4".into()
}
fn default_cfl() -> f64 {
    DEFAULT_CFL_FRACTION
}
fn default_r_trunc() -> f64 {
    DEFAULT_R_TRUNC
}
fn default_tail() -> f64 {
    DEFAULT_TAIL_TOLERANCE
}
fn default_j() -> usize {
    DEFAULT_LIMINF_J
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("config error at {field}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::usage(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "flat" => Ok(preset_flat()),
            "abelian-heatwave" => Ok(preset_abelian()),
            "su2-bump" => Ok(preset_su2_bump()),
            "planted-tube" => Ok(preset_planted_tube()),
            _ => Err(CliError::usage(format!(
                "unknown preset {name:?} (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Override every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        if let Some(f) = &mut self.flow {
            f.initial.seed = seed;
        }
        self.singular.seed = seed;
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        let origin = g.origin.clone().unwrap_or_else(|| vec![0.0; g.m]);
        Grid::new(g.extents.clone(), g.h, origin).map_err(|e| bad("grid", e))
    }

    pub fn quadrature(&self) -> Result<QuadratureConfig, CliError> {
        QuadratureConfig::new(self.density.r_trunc, self.density.tail_tolerance).map_err(|e| bad("density", e))
    }

    /// Resolved flow parameters, with `dt` derived from the CFL fraction when absent.
    pub fn flow_config(&self) -> Result<Option<FlowConfig>, CliError> {
        let Some(f) = &self.flow else { return Ok(None) };
        let h = self.grid.h;
        let dt = match f.dt {
            Some(dt) => dt,
            None => {
                // smallest step count that is a multiple of the cadence and respects the bound
                let bound = f.cfl_fraction * h * h;
                let raw = (f.t_final / bound).ceil().max(1.0) as usize;
                let steps = raw.div_ceil(f.snapshot_every) * f.snapshot_every;
                if f.t_final == 0.0 {
                    bound
                } else {
                    f.t_final / steps as f64
                }
            }
        };
        let cfg = FlowConfig {
            dt,
            t_final: f.t_final,
            snapshot_every: f.snapshot_every,
            cfl_fraction: f.cfl_fraction,
        };
        cfg.steps().map_err(|e| bad("flow", e))?;
        Ok(Some(cfg))
    }

    /// Time at which densities are evaluated.
    pub fn tau(&self) -> f64 {
        self.density
            .tau
            .unwrap_or_else(|| self.flow.as_ref().map_or(1.0, |f| f.t_final))
    }

    pub fn rho_ladder(&self) -> Result<Vec<f64>, CliError> {
        match &self.density.rho_ladder {
            Some(l) => Ok(l.clone()),
            None => {
                let grid = self.grid()?;
                default_rho_ladder(&grid, 4, grid.h() / 4.0).map_err(|e| bad("density.rho_ladder", e))
            }
        }
    }

    pub fn r_ladder(&self) -> Result<Vec<f64>, CliError> {
        match &self.singular.r_ladder {
            Some(l) => Ok(l.clone()),
            None => {
                let grid = self.grid()?;
                Ok(ymlab_core::geometry::geometric_radii(grid.min_half_period(), 4.0 * grid.h()))
            }
        }
    }

    pub fn fixture_plane(&self) -> Result<Option<Plane>, CliError> {
        let Some(fx) = &self.fixture else { return Ok(None) };
        Plane::coordinate(self.grid.m, &fx.plane_axes)
            .map(Some)
            .map_err(|e| bad("fixture.plane_axes", e))
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.m < 2 {
            return Err(bad("grid.m", format!("dimension must be at least 2 (got {})", g.m)));
        }
        if g.extents.len() != g.m {
            return Err(bad(
                "grid.extents",
                format!("expected {} entries (m = {}), got {}", g.m, g.m, g.extents.len()),
            ));
        }
        if let Some(e) = g.extents.iter().find(|&&e| e < 4) {
            return Err(bad("grid.extents", format!("every extent must be at least 4 (got {e})")));
        }
        if !(g.h > 0.0 && g.h.is_finite()) {
            return Err(bad("grid.h", format!("spacing must be positive (got {})", g.h)));
        }
        if let Some(o) = &g.origin {
            if o.len() != g.m {
                return Err(bad("grid.origin", format!("expected {} entries, got {}", g.m, o.len())));
            }
        }
        if self.group.n == 0 {
            return Err(bad("group.n", "n must be at least 1"));
        }
        match (&self.flow, &self.fixture) {
            (Some(_), Some(_)) => return Err(bad("flow", "give either [flow] or [fixture], not both")),
            (None, None) => return Err(bad("flow", "one of [flow] or [fixture] is required")),
            _ => {}
        }
        if let Some(f) = &self.flow {
            if f.integrator != "rk4" {
                return Err(bad("flow.integrator", format!("unknown integrator {:?} (expected \"rk4\")", f.integrator)));
            }
            if !(f.cfl_fraction > 0.0 && f.cfl_fraction.is_finite()) {
                return Err(bad("flow.cfl_fraction", format!("must be positive (got {})", f.cfl_fraction)));
            }
            if !(f.t_final >= 0.0 && f.t_final.is_finite()) {
                return Err(bad("flow.t_final", format!("must be >= 0 (got {})", f.t_final)));
            }
            if f.snapshot_every == 0 {
                return Err(bad("flow.snapshot_every", "cadence must be at least 1"));
            }
            if let Some(dt) = f.dt {
                let bound = f.cfl_fraction * g.h * g.h;
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(bad("flow.dt", format!("must be positive (got {dt})")));
                }
                if dt > bound {
                    return Err(bad(
                        "flow.dt",
                        format!("dt = {dt} exceeds the admissible bound {bound} (cfl_fraction * h^2)"),
                    ));
                }
            }
            InitialKind::parse(&f.initial.kind).map_err(|e| bad("flow.initial.kind", e))?;
            if !f.initial.amplitude.is_finite() {
                return Err(bad("flow.initial.amplitude", "must be finite"));
            }
            self.flow_config()?;
        }
        if let Some(fx) = &self.fixture {
            if fx.kind != "planted_tube" {
                return Err(bad("fixture.kind", format!("unknown fixture {:?} (expected \"planted_tube\")", fx.kind)));
            }
            if g.m < 5 {
                return Err(bad("fixture.kind", format!("a planted tube needs m >= 5 (got {})", g.m)));
            }
            if fx.plane_axes.len() != g.m - 4 {
                return Err(bad(
                    "fixture.plane_axes",
                    format!("expected {} axes (m - 4), got {}", g.m - 4, fx.plane_axes.len()),
                ));
            }
            self.fixture_plane()?;
            if fx.anchor.len() != g.m {
                return Err(bad("fixture.anchor", format!("expected {} entries, got {}", g.m, fx.anchor.len())));
            }
            if !(fx.r0 >= 2.0 * g.h * (1.0 - 1e-12)) {
                return Err(bad("fixture.r0", format!("core cutoff must be at least 2h = {}", 2.0 * g.h)));
            }
            if !(fx.alpha >= 0.0 && fx.amplitude >= 0.0) {
                return Err(bad("fixture", "alpha and amplitude must be nonnegative"));
            }
        }
        let d = &self.density;
        self.quadrature()?;
        if d.j == 0 {
            return Err(bad("density.j", "J must be at least 1"));
        }
        let tau = self.tau();
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(bad("density.tau", format!("must be positive (got {tau})")));
        }
        let ladder = self.rho_ladder()?;
        if ladder.len() < 3 {
            return Err(bad("density.rho_ladder", format!("at least 3 scales required (got {})", ladder.len())));
        }
        ymlab_core::density::check_ladder_scales(&ladder, tau).map_err(|e| bad("density.rho_ladder", e))?;
        if let Some(f) = &self.flow {
            if tau > f.t_final {
                return Err(bad("density.tau", format!("tau = {tau} lies beyond the flow horizon {}", f.t_final)));
            }
            if ladder[0] * ladder[0] > tau {
                return Err(bad(
                    "density.rho_ladder",
                    format!("coarsest scale {} reads before tau = 0 (tau = {tau})", ladder[0]),
                ));
            }
        }
        let s = &self.singular;
        if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
            return Err(bad("singular.epsilon", format!("must be >= 0 (got {})", s.epsilon)));
        }
        if let Some(bad_s) = s.s_list.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(bad("singular.s_list", format!("apertures must lie in (0, 1) (got {bad_s})")));
        }
        if self.r_ladder()?.iter().any(|&r| !(r > 0.0)) {
            return Err(bad("singular.r_ladder", "radii must be positive"));
        }
        if s.plane_samples == 0 {
            return Err(bad("singular.plane_samples", "must be at least 1"));
        }
        if let Some(w) = &s.cone_direction {
            if w.len() != g.m {
                return Err(bad("singular.cone_direction", format!("expected {} entries, got {}", g.m, w.len())));
            }
            if w.iter().all(|&c| c == 0.0) {
                return Err(bad("singular.cone_direction", "direction must be nonzero"));
            }
        }
        if let Some(f) = self.output.formats.iter().find(|f| !matches!(f.as_str(), "csv" | "ymf1")) {
            return Err(bad("output.formats", format!("unknown format {f:?} (expected \"csv\" or \"ymf1\")")));
        }
        if self.output.directory.is_empty() {
            return Err(bad("output.directory", "must not be empty"));
        }
        Ok(())
    }
}

fn flow_preset(n: usize, kind: &str, seed: u64, t_final: f64, dt: f64, snapshot_every: usize) -> ExperimentConfig {
    let extent = 16;
    ExperimentConfig {
        grid: GridSection {
            m: 3,
            extents: vec![extent; 3],
            h: 2.0 * std::f64::consts::PI / extent as f64,
            origin: None,
        },
        group: GroupSection { n },
        flow: Some(FlowSection {
            integrator: default_integrator(),
            dt: Some(dt),
            cfl_fraction: DEFAULT_CFL_FRACTION,
            t_final,
            snapshot_every,
            initial: InitialSection {
                kind: kind.into(),
                seed,
                amplitude: 1.0,
            },
        }),
        fixture: None,
        density: DensitySection {
            rho_ladder: None,
            r_trunc: DEFAULT_R_TRUNC,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            j: DEFAULT_LIMINF_J,
            tau: None,
        },
        singular: SingularSection {
            epsilon: 0.1,
            s_list: vec![0.1, 0.3, 0.5],
            r_ladder: None,
            plane_samples: 10,
            seed,
            cone_direction: None,
        },
        output: OutputSection {
            directory: "out".into(),
            formats: vec!["csv".into(), "ymf1".into()],
        },
    }
}

fn preset_flat() -> ExperimentConfig {
    let mut c = flow_preset(2, "flat", 1, 0.01, 0.005, 1);
    c.density.rho_ladder = Some(vec![0.09, 0.09 * std::f64::consts::FRAC_1_SQRT_2, 0.045]);
    c
}

fn preset_abelian() -> ExperimentConfig {
    flow_preset(1, "abelian_wave", 3, 0.2, 0.004, 1)
}

fn preset_su2_bump() -> ExperimentConfig {
    let mut c = flow_preset(2, "random_bump", 7, 0.05, 0.0015625, 1);
    c.density.rho_ladder = Some(vec![0.2, 0.2 * std::f64::consts::FRAC_1_SQRT_2, 0.1]);
    c
}

/// Threshold of the shipped tube, between the reference liminf on the shell at
/// distance `h` (0.3974) and the one at `sqrt(2) h` (0.3809).
pub const PLANTED_TUBE_EPSILON: f64 = 0.389;

fn preset_planted_tube() -> ExperimentConfig {
    let extent = 14;
    let ladder: Vec<f64> = (0..4).map(|k| 0.875 * std::f64::consts::FRAC_1_SQRT_2.powi(k)).collect();
    ExperimentConfig {
        grid: GridSection {
            m: 5,
            extents: vec![extent; 5],
            h: 1.0,
            origin: None,
        },
        group: GroupSection { n: 1 },
        flow: None,
        fixture: Some(FixtureSection {
            kind: "planted_tube".into(),
            plane_axes: vec![0],
            anchor: vec![0.0, 7.0, 7.0, 7.0, 7.0],
            alpha: 4.0,
            r0: 2.0,
            amplitude: 1.0,
        }),
        density: DensitySection {
            rho_ladder: Some(ladder),
            r_trunc: DEFAULT_R_TRUNC,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            j: DEFAULT_LIMINF_J,
            tau: Some(1.0),
        },
        singular: SingularSection {
            epsilon: PLANTED_TUBE_EPSILON,
            s_list: vec![0.1, 0.3, 0.5],
            r_ladder: None,
            plane_samples: 50,
            seed: 11,
            cone_direction: None,
        },
        output: OutputSection {
            directory: "out".into(),
            formats: vec!["csv".into()],
        },
    }
}
