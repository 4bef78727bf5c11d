use std::collections::HashSet;
use std::path::Path;
use std::process::Command;

use darcy_smc::field::FieldConfig;
use darcy_smc::io;
use darcy_smc::smc::SmcConfig;
use darcy_smc_cli::commands::{self, DATA, ENSEMBLE, MEAN_FIELD, TRACE};
use darcy_smc_cli::RunConfig;

fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.field = FieldConfig {
        cutoff: 3,
        ..FieldConfig::planar_default()
    };
    c.grid_n = 8;
    c.render_points = 24;
    c.observations.layout = 2;
    c.observations.sigma2 = 1e-4;
    c.observations.sweep_counts = vec![4, 16];
    c.observations.sweep_replicates = 2;
    c.smc = SmcConfig {
        particles: 200,
        target_ess: 120.0,
        step_bounds: (5, 20),
        ..c.smc
    };
    c
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn planar_defaults_give_one_hundred_observations() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::planar();
    c.render_points = 50;
    let (truth, data) = commands::generate_data(&c, dir.path()).unwrap();
    assert_eq!(truth.len(), 360);
    assert_eq!(data.len(), 100);
    assert_eq!(io::read_dataset(&dir.path().join(DATA)).unwrap(), data);
}

#[test]
fn volume_defaults_give_125_observations() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::volume();
    c.render_points = 20;
    let (truth, data) = commands::generate_data(&c, dir.path()).unwrap();
    assert_eq!(truth.len(), 728);
    assert_eq!(data.len(), 125);
    assert_eq!(data.dim(), Some(3));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tiny();
    commands::generate_data(&c, a.path()).unwrap();
    commands::generate_data(&c, b.path()).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    one.install(|| commands::run(&c, a.path(), None)).unwrap();
    three.install(|| commands::run(&c, b.path(), None)).unwrap();
    for name in [
        "truth.csv",
        DATA,
        "truth.ppm",
        TRACE,
        ENSEMBLE,
        MEAN_FIELD,
        "posterior_mean.ppm",
        "summary.csv",
    ] {
        assert_eq!(
            read(&a.path().join(name)),
            read(&b.path().join(name)),
            "{name} differs"
        );
    }

    let d = tempfile::tempdir().unwrap();
    let other = RunConfig {
        seed: c.seed + 1,
        ..c.clone()
    };
    commands::generate_data(&other, d.path()).unwrap();
    assert_ne!(read(&a.path().join(DATA)), read(&d.path().join(DATA)));
}

#[test]
fn outputs_carry_provenance_and_headers() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    commands::generate_data(&c, dir.path()).unwrap();
    let result = commands::run(&c, dir.path(), None).unwrap();
    let hash = c.hash();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let table = io::read_table(&path).unwrap();
        assert_eq!(
            table.meta_value("config_hash"),
            Some(hash.as_str()),
            "{}",
            path.display()
        );
        assert_eq!(table.meta_value("seed"), Some(c.seed.to_string().as_str()));
        assert!(!table.header.is_empty());
    }
    let trace = io::read_table(&dir.path().join(TRACE)).unwrap();
    assert_eq!(trace.rows.len(), result.trace.rounds.len());
    assert_eq!(trace.header[..3], ["n", "phi", "delta_phi"]);
    assert_eq!(*trace.column("phi").unwrap().last().unwrap(), 1.0);
    for j in commands::density_coordinates(c.field.param_count()) {
        let d = io::read_table(&dir.path().join(format!("density_c{j}.csv"))).unwrap();
        assert_eq!(d.rows.len(), darcy_smc::validation::DENSITY_GRID_POINTS);
    }

    // the ensemble file reproduces the in-memory estimates
    let back = io::read_ensemble(&dir.path().join(ENSEMBLE)).unwrap();
    let truth = io::read_coefficients(&dir.path().join("truth.csv")).unwrap();
    let rmse = darcy_smc::validation::rmse_to_truth(&back, truth.as_slice()).unwrap();
    assert!((rmse - result.rmse.unwrap()).abs() < 1e-12);
}

#[test]
fn empty_data_set_finishes_in_one_round() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.observations.layout = 0;
    commands::generate_data(&c, dir.path()).unwrap();
    let result = commands::run(&c, dir.path(), None).unwrap();
    assert_eq!(result.trace.rounds.len(), 1);
    assert_eq!(result.trace.rounds[0].phi, 1.0);
    assert!(result
        .ensemble
        .log_weights()
        .iter()
        .all(|&w| w == result.ensemble.log_weights()[0]));
}

#[test]
fn sweep_writes_one_row_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    let rows = commands::consistency_sweep(&c, dir.path()).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.count).collect::<Vec<_>>(),
        vec![4, 16]
    );
    let table = io::read_table(&dir.path().join(commands::SWEEP)).unwrap();
    assert_eq!(
        table.header,
        ["count", "rmse", "ball_probability", "rounds"]
    );
    assert_eq!(table.rows.len(), 2);
    for r in &rows {
        assert!(r.rmse >= 0.0 && (0.0..=1.0).contains(&r.ball_probability));
        for rep in 0..2 {
            assert!(dir
                .path()
                .join(commands::sweep_trace_name(r.count, rep))
                .exists());
        }
    }
    // the summary rows are the means of the per-replicate rows
    let runs = io::read_table(&dir.path().join(commands::SWEEP_REPLICATES)).unwrap();
    assert_eq!(runs.rows.len(), 4);
    let rmse = runs.column("rmse").unwrap();
    assert!((rows[0].rmse - (rmse[0] + rmse[1]) / 2.0).abs() < 1e-15);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    for c in [tiny(), RunConfig::volume()] {
        std::fs::write(&path, c.to_toml()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), c);
    }
}

fn ppm_pixels(path: &Path) -> Vec<[u8; 3]> {
    let text = std::fs::read_to_string(path).unwrap();
    let nums: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(nums[0], "P3");
    assert_eq!(nums[3], "255");
    let (w, h): (usize, usize) = (nums[1].parse().unwrap(), nums[2].parse().unwrap());
    let px: Vec<[u8; 3]> = nums[4..]
        .chunks(3)
        .map(|c| {
            [
                c[0].parse().unwrap(),
                c[1].parse().unwrap(),
                c[2].parse().unwrap(),
            ]
        })
        .collect();
    assert_eq!(px.len(), w * h);
    px
}

#[test]
fn rendering_a_ramp_uses_every_hue_level() {
    let dir = tempfile::tempdir().unwrap();
    let p = 64;
    let axis: Vec<f64> = (0..p).map(|i| i as f64).collect();
    let ramp: Vec<f64> = (0..p * p).map(|i| i as f64).collect();
    let csv = dir.path().join("ramp.csv");
    io::write_grid_field(&csv, &[], &[axis.clone(), axis.clone()], &ramp).unwrap();
    let ppm = dir.path().join("ramp.ppm");
    assert_eq!(commands::render_csv(&csv, &ppm).unwrap(), p);
    let px = ppm_pixels(&ppm);
    // levels 0 and 255 share the colour red, so 255 distinct colours remain
    let distinct: HashSet<[u8; 3]> = px.iter().copied().collect();
    assert_eq!(distinct.len(), 255);

    io::write_grid_field(&csv, &[], &[axis.clone(), axis], &vec![3.0; p * p]).unwrap();
    commands::render_csv(&csv, &ppm).unwrap();
    assert!(ppm_pixels(&ppm).iter().all(|&c| c == [255, 0, 0]));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_darcy-smc"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nunknown = true\n").unwrap();
    let status = cli()
        .args(["--config", bad.to_str().unwrap(), "generate-data"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let mut c = tiny();
    c.smc.target_ess = c.smc.particles as f64;
    let invalid = dir.path().join("invalid.toml");
    std::fs::write(&invalid, c.to_toml()).unwrap();
    let status = cli()
        .args(["--config", invalid.to_str().unwrap(), "generate-data"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let good = dir.path().join("good.toml");
    std::fs::write(&good, tiny().to_toml()).unwrap();
    let out = dir.path().join("out");
    let missing = cli()
        .args([
            "--config",
            good.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "run",
        ])
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));

    for args in [
        &["generate-data"][..],
        &["run"],
        &["--threads", "2", "--seed", "5", "run"],
    ] {
        let status = cli()
            .args([
                "--config",
                good.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .args(args)
            .status()
            .unwrap();
        assert!(status.success(), "{args:?}");
    }
    let shown = cli()
        .args([
            "--config",
            good.to_str().unwrap(),
            "--seed",
            "9",
            "show-config",
        ])
        .output()
        .unwrap();
    let parsed = RunConfig::from_toml(&String::from_utf8(shown.stdout).unwrap()).unwrap();
    assert_eq!(parsed, RunConfig { seed: 9, ..tiny() });
}
