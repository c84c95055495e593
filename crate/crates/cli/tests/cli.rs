use std::path::Path;
use std::process::{Command, Output};

use ymlab_cli::commands::planted_sites;
use ymlab_cli::output::sha256_hex;
use ymlab_cli::ExperimentConfig;
use ymlab_core::flow::{abelian_wave_params, discrete_decay_rate};

fn ymlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ymlab")).args(args).output().expect("binary runs")
}

fn out_dir(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flat_run_has_zero_energy_and_empty_set() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["run", "--preset", "flat", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("ledger.csv"));
    assert_eq!(header, ["tau", "ym", "dissipation_cum", "residual"]);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[1] == 0.0));
    let (header, rows) = read_csv(&tmp.path().join("singular_set.csv"));
    assert_eq!(header, ["z1", "z2", "z3", "liminf_theta"]);
    assert!(rows.is_empty());
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["run", "--preset", "flat", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: toml::Value = toml::from_str(&std::fs::read_to_string(tmp.path().join("manifest.toml")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    let mut listed: Vec<String> = Vec::new();
    for f in files {
        let name = f["path"].as_str().unwrap();
        let bytes = std::fs::read(tmp.path().join(name)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes), "{name}");
        assert_eq!(f["bytes"].as_integer().unwrap() as usize, bytes.len());
        listed.push(name.to_string());
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.toml")
        .collect();
    on_disk.sort();
    listed.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn abelian_preset_matches_closed_form_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["flow-run", "--preset", "abelian-heatwave", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&tmp.path().join("ledger.csv"));
    let cfg = ExperimentConfig::preset("abelian-heatwave").unwrap();
    let grid = cfg.grid().unwrap();
    let f = cfg.flow.as_ref().unwrap();
    let (mode, _) = abelian_wave_params(grid.m(), f.initial.seed);
    let last = rows.last().unwrap();
    let expected = (-2.0 * discrete_decay_rate(&grid, &mode) * last[0]).exp();
    let ratio = last[1] / rows[0][1];
    assert!((ratio - expected).abs() / expected < 1e-4, "{ratio} vs {expected}");
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]));
}

#[test]
fn planted_tube_run_recovers_the_plane() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["run", "--preset", "planted-tube", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = read_csv(&tmp.path().join("singular_set.csv"));
    let cfg = ExperimentConfig::preset("planted-tube").unwrap();
    let grid = cfg.grid().unwrap();
    let plane = cfg.fixture_plane().unwrap().unwrap();
    let fx = cfg.fixture.as_ref().unwrap();
    let expected: Vec<Vec<f64>> = planted_sites(&grid, &plane, &fx.anchor)
        .into_iter()
        .map(|s| grid.position(s))
        .collect();
    let got: Vec<Vec<f64>> = rows.iter().map(|r| r[..5].to_vec()).collect();
    assert_eq!(got, expected);
}

#[test]
fn identity_suite_passes_on_preset_data() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["identity-suite", "--preset", "su2-bump", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in ["dissipation", "rescaling", "global-integral"] {
        assert!(stdout.contains(&format!("PASS {name}:")), "{stdout}");
    }
}

#[test]
fn invalid_probe_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let probes = tmp.path().join("probes.csv");
    std::fs::write(&probes, "z1,z2,z3,tau,rho\n1,1,1,0.01,0.2\n").unwrap();
    let o = ymlab(&[
        "density-probe",
        "--preset",
        "flat",
        "--probes",
        probes.to_str().unwrap(),
        "--output",
        out_dir(&tmp.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid probe"), "{}", stderr(&o));
}

#[test]
fn density_probe_reads_probe_file_and_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = tmp.path().join("flow");
    let o = ymlab(&["flow-run", "--preset", "su2-bump", "--output", out_dir(&run_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let probes = tmp.path().join("probes.csv");
    std::fs::write(&probes, "z1,z2,z3,tau,rho\n3.1,3.0,2.9,0.05,0.2\n2.5,3.5,3.2,0.03,0.1\n").unwrap();
    let p = probes.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = ymlab(&["density-probe", "--preset", "su2-bump", "--probes", p, "--output", out_dir(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ymlab(&[
        "density-probe",
        "--preset",
        "su2-bump",
        "--probes",
        p,
        "--snapshots",
        out_dir(&run_dir),
        "--output",
        out_dir(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, ra) = read_csv(&a.join("probes.csv"));
    assert_eq!(header, ["z1", "z2", "z3", "tau", "rho", "theta"]);
    let (_, rb) = read_csv(&b.join("probes.csv"));
    assert_eq!(ra.len(), 2);
    assert_eq!(ra, rb);
    assert!(ra.iter().all(|r| r[5] > 0.0));
}

#[test]
fn huge_epsilon_gives_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ymlab(&["singular-extract", "--preset", "su2-bump", "--epsilon", "1e9", "--output", out_dir(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("singular_set.csv")).unwrap();
    assert_eq!(text, "z1,z2,z3,liminf_theta\n");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(tmp.path());
    assert_eq!(ymlab(&["run", "--preset", "flat", "--bogus"]).status.code(), Some(2));
    assert_eq!(ymlab(&["run", "--output", dir]).status.code(), Some(2));
    assert_eq!(ymlab(&["run", "--preset", "nope", "--output", dir]).status.code(), Some(2));
    let missing = tmp.path().join("missing.csv");
    let o = ymlab(&["density-probe", "--preset", "flat", "--probes", missing.to_str().unwrap(), "--output", dir]);
    assert_eq!(o.status.code(), Some(2));
    let o = ymlab(&["run", "--config", tmp.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let mut cfg = ExperimentConfig::preset("flat").unwrap();
    cfg.grid.h = -1.0;
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let o = ymlab(&["run", "--config", path.to_str().unwrap(), "--output", dir]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.h"), "{}", stderr(&o));
}

#[test]
fn instability_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("su2-bump").unwrap();
    let h = cfg.grid.h;
    let f = cfg.flow.as_mut().unwrap();
    f.cfl_fraction = 5.0;
    f.dt = Some(4.0 * h * h);
    f.t_final = 40.0 * h * h;
    f.snapshot_every = 1;
    let path = tmp.path().join("unstable.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let o = ymlab(&["flow-run", "--config", path.to_str().unwrap(), "--output", out_dir(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("instability"), "{}", stderr(&o));
}

#[test]
fn config_file_round_trips_through_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("su2-bump").unwrap();
    cfg.flow.as_mut().unwrap().t_final = 0.0125;
    cfg.density.rho_ladder = Some(vec![0.1, 0.08, 0.06]);
    let text = cfg.to_toml();
    let path = tmp.path().join("exp.toml");
    std::fs::write(&path, &text).unwrap();
    let out = tmp.path().join("o");
    let o = ymlab(&["flow-run", "--config", path.to_str().unwrap(), "--output", out_dir(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(echoed, text);
    assert_eq!(ExperimentConfig::from_toml(&echoed).unwrap(), cfg);
    assert!(String::from_utf8_lossy(&o.stdout).contains(&text));
}

#[test]
fn outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "2")]
        .iter()
        .map(|(name, workers)| {
            let dir = tmp.path().join(name);
            let o = ymlab(&["run", "--preset", "su2-bump", "--workers", workers, "--output", out_dir(&dir)]);
            assert!(o.status.success(), "{}", stderr(&o));
            dir
        })
        .collect();
    for file in ["ledger.csv", "ladder.csv", "singular_set.csv", "snapshot_0032.ymf1"] {
        let a = std::fs::read(runs[0].join(file)).unwrap();
        assert_eq!(a, std::fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
    for file in ["ledger.csv", "ladder.csv"] {
        let (_, a) = read_csv(&runs[0].join(file));
        let (_, c) = read_csv(&runs[2].join(file));
        for (ra, rc) in a.iter().zip(&c) {
            for (x, y) in ra.iter().zip(rc) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{file}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn seed_override_changes_initial_data() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut cfg = ExperimentConfig::preset("su2-bump").unwrap();
    cfg.flow.as_mut().unwrap().t_final = 0.0015625;
    cfg.density.rho_ladder = Some(vec![0.03, 0.02, 0.01]);
    let path = tmp.path().join("exp.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let p = path.to_str().unwrap();
    assert!(ymlab(&["flow-run", "--config", p, "--output", out_dir(&a)]).status.success());
    assert!(ymlab(&["flow-run", "--config", p, "--seed", "99", "--output", out_dir(&b)]).status.success());
    let echoed = ExperimentConfig::from_toml(&std::fs::read_to_string(b.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.flow.unwrap().initial.seed, 99);
    assert_ne!(
        std::fs::read(a.join("ledger.csv")).unwrap(),
        std::fs::read(b.join("ledger.csv")).unwrap()
    );
}

#[test]
fn diagnostics_write_their_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("planted-tube").unwrap();
    cfg.singular.plane_samples = 2;
    let path = tmp.path().join("tube.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let p = path.to_str().unwrap();
    let cases: [(&str, &str, &[&str]); 4] = [
        ("diag-slice", "slice.csv", &["plane_id", "rho", "slice_value"]),
        ("diag-cone", "cone.csv", &["r", "s", "nonempty"]),
        ("diag-pde", "pde.csv", &["z1", "z2", "z3", "z4", "z5", "tau", "rho", "residual"]),
        (
            "diag-monotonicity",
            "monotonicity.csv",
            &["z1", "z2", "z3", "z4", "z5", "rho", "rho_prime", "theta", "theta_prime", "c"],
        ),
    ];
    for (cmd, file, header) in cases {
        let dir = tmp.path().join(cmd);
        let o = ymlab(&[cmd, "--config", p, "--output", out_dir(&dir)]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let text = std::fs::read_to_string(dir.join(file)).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, header.join(","), "{cmd}");
        assert!(text.lines().count() > 1, "{cmd}");
    }
    let cone = std::fs::read_to_string(tmp.path().join("diag-cone/cone.csv")).unwrap();
    assert!(cone.lines().skip(1).all(|l| l.ends_with(",true")), "{cone}");
}
