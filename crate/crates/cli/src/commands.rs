//! The subcommands, as library functions so that tests can drive them directly.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use darcy_smc::field::{closed_axis, sample_prior, CoefficientVector, FieldEvaluator};
use darcy_smc::io::{self, fmt_f64, Metadata};
use darcy_smc::model::{self, DarcyPosterior, Dataset};
use darcy_smc::rng::{child_seed, stream, Purpose};
use darcy_smc::smc::{self, Ensemble, RunTrace};
use darcy_smc::validation::{self, BallSpec, Discrete, RateStudyConfig};
use darcy_smc::Error;

use crate::config::{sweep_layout, RunConfig};
use crate::render;
use crate::CliError;

pub const TRUTH: &str = "truth.csv";
pub const DATA: &str = "data.csv";
pub const TRUTH_IMAGE: &str = "truth.ppm";
pub const TRACE: &str = "trace.csv";
pub const TIMING: &str = "timing.csv";
pub const ENSEMBLE: &str = "ensemble.csv";
pub const MEAN_FIELD: &str = "posterior_mean.csv";
pub const MEAN_IMAGE: &str = "posterior_mean.ppm";
pub const SUMMARY: &str = "summary.csv";
pub const SWEEP: &str = "sweep.csv";

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| {
        CliError::Core(Error::Io {
            path: out.display().to_string(),
            source,
        })
    })
}

/// Plotting axes: the full square in 2D, the `x₃ = 0` mid-plane in 3D.
pub fn render_axes(config: &RunConfig) -> Vec<Vec<f64>> {
    let axis = closed_axis(config.render_points);
    let mut axes = vec![axis.clone(), axis];
    if config.field.dim == 3 {
        axes.push(vec![0.0]);
    }
    axes
}

fn with(meta: &Metadata, extra: &[(&str, String)]) -> Metadata {
    let mut all = meta.clone();
    all.extend(io::meta(extra));
    all
}

fn write_field(
    config: &RunConfig,
    out: &Path,
    csv: Option<&str>,
    image: &str,
    values: &[f64],
) -> Result<(), CliError> {
    let axes = render_axes(config);
    let meta = with(&config.metadata(), &[("normalization", "per-image".into())]);
    if let Some(name) = csv {
        io::write_grid_field(&out.join(name), &meta, &axes, values)?;
    }
    render::write_ppm(&out.join(image), config.render_points, values)?;
    Ok(())
}

pub fn truth_for(config: &RunConfig) -> CoefficientVector {
    sample_prior(
        &config.field,
        &mut stream(config.seed, Purpose::Truth, 0, 0),
    )
}

fn dataset_for(
    config: &RunConfig,
    truth: &CoefficientVector,
    layout: usize,
    stream_index: u64,
) -> Result<Dataset, CliError> {
    if layout == 0 {
        return Ok(Dataset::empty(config.observations.sigma2));
    }
    let grid = config.grid()?;
    Ok(model::generate_data(
        truth,
        &config.field,
        &grid,
        &config.source()?,
        layout,
        config.observations.sigma2,
        &mut stream(config.seed, Purpose::Noise, stream_index, 0),
    )?)
}

/// Draws the truth from the prior and synthesizes observations of it.
pub fn generate_data(
    config: &RunConfig,
    out: &Path,
) -> Result<(CoefficientVector, Dataset), CliError> {
    config.validate()?;
    create_dir(out)?;
    let truth = truth_for(config);
    let data = dataset_for(config, &truth, config.observations.layout, 0)?;
    let meta = config.metadata();
    io::write_coefficients(&out.join(TRUTH), &meta, &truth)?;
    io::write_dataset(&out.join(DATA), &meta, &data)?;
    let field =
        FieldEvaluator::new(&config.field, &render_axes(config))?.evaluate(truth.as_slice())?;
    write_field(config, out, None, TRUTH_IMAGE, &field)?;
    Ok((truth, data))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensemble: Ensemble,
    pub trace: RunTrace,
    pub rmse: Option<f64>,
    pub ball_probability: Option<f64>,
}

/// Coefficients whose marginal densities are exported: the cosine weights of the first
/// two lowest-shell frequencies and of the last highest-shell frequency.
pub fn density_coordinates(param_count: usize) -> Vec<usize> {
    let mut coords = vec![0, 2, param_count.saturating_sub(2)];
    coords.retain(|&c| c < param_count);
    coords.dedup();
    coords
}

fn write_run_outputs(
    config: &RunConfig,
    out: &Path,
    ensemble: &Ensemble,
    trace: &RunTrace,
) -> Result<(), CliError> {
    let meta = config.metadata();
    io::write_trace(&out.join(TRACE), &meta, trace)?;
    io::write_timing(&out.join(TIMING), &meta, trace)?;
    io::write_ensemble(&out.join(ENSEMBLE), &meta, ensemble)?;
    let mean = smc::weighted_field_mean(ensemble, &config.field, &render_axes(config))?;
    write_field(config, out, Some(MEAN_FIELD), MEAN_IMAGE, &mean)?;
    let frequencies = config.field.frequencies();
    for j in density_coordinates(ensemble.dim()) {
        let k = &frequencies[j / 2];
        let kind = if j % 2 == 0 { "cos" } else { "sin" };
        let rows: Vec<Vec<f64>> = validation::marginal_density(ensemble, j)?
            .into_iter()
            .map(|(x, d)| vec![x, d])
            .collect();
        io::write_table(
            &out.join(format!("density_c{j}.csv")),
            &with(
                &meta,
                &[
                    ("coefficient", j.to_string()),
                    ("frequency", format!("{k:?}")),
                    ("basis", kind.into()),
                ],
            ),
            &["x".to_string(), "density".to_string()],
            &rows,
        )?;
    }
    Ok(())
}

fn ball_for(config: &RunConfig, truth: &CoefficientVector) -> BallSpec {
    BallSpec {
        center: truth.as_slice().to_vec(),
        radius: config.ball.radius,
        norm: config.ball.norm,
    }
}

fn sample_posterior(
    config: &RunConfig,
    data: Dataset,
    seed: u64,
    out: &Path,
) -> Result<(Ensemble, RunTrace), CliError> {
    let posterior = DarcyPosterior::new(&config.field, &config.grid()?, &config.source()?, data)?;
    match smc::run(&posterior, &config.smc, seed) {
        Ok(result) => Ok(result),
        Err(Error::Stagnation {
            floor,
            rounds,
            phi,
            trace,
        }) => {
            // keep the partial trace for diagnosis
            io::write_trace(&out.join(TRACE), &config.metadata(), &trace)?;
            Err(Error::Stagnation {
                floor,
                rounds,
                phi,
                trace,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

/// Samples the posterior for the data set at `data_path` (default `out/data.csv`) and
/// writes the trace, ensemble, posterior-mean field and marginal densities. When
/// `out/truth.csv` exists, the RMSE and ball probability against it are reported too.
pub fn run(
    config: &RunConfig,
    out: &Path,
    data_path: Option<&Path>,
) -> Result<RunOutput, CliError> {
    config.validate()?;
    create_dir(out)?;
    let data_path: PathBuf = data_path.map_or_else(|| out.join(DATA), Path::to_path_buf);
    if !data_path.exists() {
        return Err(CliError::Config(format!(
            "no data set at {} (run generate-data first)",
            data_path.display()
        )));
    }
    let data = io::read_dataset(&data_path)?;
    if let Some(dim) = data.dim() {
        if dim != config.field.dim {
            return Err(CliError::Config(format!(
                "data set is {dim}-dimensional but the field is {}-dimensional",
                config.field.dim
            )));
        }
    }
    let (ensemble, trace) = sample_posterior(config, data, config.seed, out)?;
    write_run_outputs(config, out, &ensemble, &trace)?;

    let truth_path = out.join(TRUTH);
    let (mut rmse, mut ball) = (None, None);
    if truth_path.exists() {
        let truth = io::read_coefficients(&truth_path)?;
        if truth.len() == ensemble.dim() {
            rmse = Some(validation::rmse_to_truth(&ensemble, truth.as_slice())?);
            ball = Some(validation::ball_probability(
                &ensemble,
                &ball_for(config, &truth),
            )?);
        }
    }
    let mut header = vec!["rounds".to_string(), "forward_solves".to_string()];
    let mut row = vec![
        trace.rounds.len().to_string(),
        trace.forward_solves(config.smc.particles).to_string(),
    ];
    if let (Some(r), Some(b)) = (rmse, ball) {
        header.extend(["rmse".to_string(), "ball_probability".to_string()]);
        row.extend([fmt_f64(r), fmt_f64(b)]);
    }
    io::write_rows(&out.join(SUMMARY), &config.metadata(), &header, [row])?;
    Ok(RunOutput {
        ensemble,
        trace,
        rmse,
        ball_probability: ball,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub count: usize,
    /// Means over the replicate SMC runs.
    pub rmse: f64,
    pub ball_probability: f64,
    pub rounds: f64,
}

pub const SWEEP_REPLICATES: &str = "sweep_replicates.csv";

pub fn sweep_trace_name(count: usize, replicate: usize) -> String {
    format!("sweep_{count}_r{replicate}_trace.csv")
}

/// Runs the whole pipeline for each observation count against one common truth,
/// averaging over `sweep_replicates` independent SMC runs per data set.
pub fn consistency_sweep(config: &RunConfig, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    create_dir(out)?;
    let truth = truth_for(config);
    let meta = config.metadata();
    io::write_coefficients(&out.join(TRUTH), &meta, &truth)?;
    let ball = ball_for(config, &truth);
    let replicates = config.observations.sweep_replicates;
    let mut rows = Vec::new();
    let mut per_run = Vec::new();
    for &count in &config.observations.sweep_counts {
        let layout = sweep_layout(count, config.field.dim)?;
        let data = dataset_for(config, &truth, layout, count as u64)?;
        io::write_dataset(&out.join(format!("sweep_{count}_data.csv")), &meta, &data)?;
        let count_seed = child_seed(config.seed, Purpose::Replicate, count as u64);
        let mut sums = [0.0; 3];
        for r in 0..replicates {
            let seed = child_seed(count_seed, Purpose::Replicate, r as u64);
            let (ensemble, trace) = sample_posterior(config, data.clone(), seed, out)?;
            let trace_meta = with(&meta, &[("run_seed", seed.to_string())]);
            io::write_trace(&out.join(sweep_trace_name(count, r)), &trace_meta, &trace)?;
            let run = [
                validation::rmse_to_truth(&ensemble, truth.as_slice())?,
                validation::ball_probability(&ensemble, &ball)?,
                trace.rounds.len() as f64,
            ];
            per_run.push(vec![count as f64, r as f64, run[0], run[1], run[2]]);
            sums.iter_mut().zip(run).for_each(|(s, v)| *s += v);
        }
        let n = replicates as f64;
        rows.push(SweepRow {
            count,
            rmse: sums[0] / n,
            ball_probability: sums[1] / n,
            rounds: sums[2] / n,
        });
    }
    let ball_meta = with(
        &meta,
        &[
            ("ball_radius", fmt_f64(config.ball.radius)),
            ("ball_norm", format!("{:?}", config.ball.norm)),
        ],
    );
    io::write_table(
        &out.join(SWEEP_REPLICATES),
        &ball_meta,
        &["count", "replicate", "rmse", "ball_probability", "rounds"].map(String::from),
        &per_run,
    )?;
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.count as f64, r.rmse, r.ball_probability, r.rounds])
        .collect();
    io::write_table(
        &out.join(SWEEP),
        &with(&ball_meta, &[("replicates", replicates.to_string())]),
        &["count", "rmse", "ball_probability", "rounds"].map(String::from),
        &table,
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: String,
}

/// Particle counts of the sampling-operator check.
pub const SAMPLING_CHECK_COUNTS: [usize; 3] = [10, 100, 1000];

/// Sampling error of a fair ±1 coin under the identity: `M · E|S^M μ(f) - μ(f)|²` for
/// each particle count, which should be 1.
pub fn sampling_operator_check(
    seed: u64,
    replicates: usize,
) -> Result<Vec<(usize, f64)>, CliError> {
    let coin = Discrete::new(vec![-1.0, 1.0], vec![0.5, 0.5])?;
    SAMPLING_CHECK_COUNTS
        .par_iter()
        .map(|&m| {
            let mut rng = stream(seed, Purpose::Oracle, m as u64, 0);
            let err = validation::sampling_operator_error(&coin, |x| x, m, replicates, &mut rng)?;
            Ok((m, err * m as f64))
        })
        .collect()
}

/// Runs the validation suites: the dimension-free rate study, the sampling-operator
/// bound and the contraction probe. Writes their tables and returns one check per claim.
pub fn validate(
    config: &RunConfig,
    study: &RateStudyConfig,
    out: &Path,
) -> Result<Vec<Check>, CliError> {
    create_dir(out)?;
    let meta = config.metadata();
    let mut checks = Vec::new();

    let rates = validation::rate_study(study, child_seed(config.seed, Purpose::Oracle, 1))?;
    let estimates: Vec<Vec<f64>> = rates
        .estimates
        .iter()
        .map(|e| {
            vec![
                e.dim as f64,
                e.particles as f64,
                e.replicate as f64,
                e.estimate,
            ]
        })
        .collect();
    io::write_table(
        &out.join("rate_estimates.csv"),
        &meta,
        &["dim", "M", "replicate", "value"].map(String::from),
        &estimates,
    )?;
    let rows: Vec<Vec<f64>> = rates
        .rows
        .iter()
        .map(|r| vec![r.dim as f64, r.particles as f64, r.rmse])
        .collect();
    io::write_table(
        &out.join("rate_study.csv"),
        &meta,
        &["dim", "M", "rmse"].map(String::from),
        &rows,
    )?;
    for &dim in &study.dims {
        let slope = rates.slope(dim).unwrap_or(f64::NAN);
        checks.push(Check {
            name: format!("rate slope, dim {dim}"),
            passed: (-0.65..=-0.35).contains(&slope),
            value: slope,
            bound: "[-0.65, -0.35]".into(),
        });
    }
    for &m in &study.particle_counts {
        let ratio = rates.dimension_ratio(m).unwrap_or(f64::NAN);
        checks.push(Check {
            name: format!("cross-dimension RMSE ratio, M {m}"),
            passed: ratio <= 2.0,
            value: ratio,
            bound: "<= 2".into(),
        });
    }

    let sampling = sampling_operator_check(child_seed(config.seed, Purpose::Oracle, 2), 10_000)?;
    io::write_table(
        &out.join("sampling_error.csv"),
        &meta,
        &["M", "scaled_error"].map(String::from),
        &sampling
            .iter()
            .map(|&(m, e)| vec![m as f64, e])
            .collect::<Vec<_>>(),
    )?;
    for (m, scaled) in sampling {
        checks.push(Check {
            name: format!("sampling error x M, M {m}"),
            passed: (scaled - 1.0).abs() <= 0.1,
            value: scaled,
            bound: "1 +- 10%".into(),
        });
    }

    let target = validation::ProductTarget::decaying(4, 5.0);
    let m = 10_000;
    let probe_seed = child_seed(config.seed, Purpose::Oracle, 3);
    let a = validation::tilted_uniform(4, m, 0.0, probe_seed)?;
    let b = validation::tilted_uniform(4, m, 0.4, probe_seed.wrapping_add(1))?;
    let probe = validation::contraction_probe(&target, &a, &b, 0.0, 0.2, 1.0, 5, probe_seed)?;
    // three standard errors of the distance estimate at this ensemble size
    let noise = 3.0 * (2.0 / m as f64).sqrt();
    let limit = probe.factor * probe.before + noise;
    checks.push(Check {
        name: "contraction after one tempering map".into(),
        passed: probe.after <= limit,
        value: probe.after,
        bound: format!("<= {}", fmt_f64(limit)),
    });

    io::write_rows(
        &out.join("validate.csv"),
        &meta,
        &["check", "passed", "value", "bound"].map(String::from),
        checks.iter().map(|c| {
            vec![
                c.name.clone(),
                u8::from(c.passed).to_string(),
                fmt_f64(c.value),
                c.bound.clone(),
            ]
        }),
    )?;
    Ok(checks)
}

/// Renders a square field CSV (as written by `run`) to a pixmap.
pub fn render_csv(input: &Path, output: &Path) -> Result<usize, CliError> {
    let table = io::read_table(input)?;
    let col = table
        .column_index("value")
        .ok_or_else(|| CliError::Config(format!("{} has no value column", input.display())))?;
    let values: Vec<f64> = table.rows.iter().map(|r| r[col]).collect();
    let p = (values.len() as f64).sqrt().round() as usize;
    if p * p != values.len() {
        return Err(CliError::Config(format!(
            "{} holds {} values, not a square grid",
            input.display(),
            values.len()
        )));
    }
    render::write_ppm(output, p, &values)?;
    Ok(p)
}
