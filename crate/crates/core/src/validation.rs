//! Analytically tractable targets and Monte Carlo convergence diagnostics.
//!
//! A [`ProductTarget`] has likelihood `exp(-Σ_j c_j (x_j - μ_j)²)` on `[-1, 1]^D`, so each
//! tempered posterior factorizes into one-dimensional densities whose moments follow
//! from quadrature. That makes the sampler's Monte Carlo error measurable exactly, in any
//! dimension.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, stream, Purpose};
use crate::smc::{self, Ensemble, Misfit, Resampling, Schedule, SmcConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTarget {
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
}

impl ProductTarget {
    pub fn new(c: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if c.len() != mu.len() {
            return Err(Error::arg("curvatures and centres differ in length"));
        }
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(
                "curvatures must be finite and nonnegative, centres finite",
            ));
        }
        Ok(ProductTarget { c, mu })
    }

    /// `c_j = c0 / j²` and centres alternating between `0.5` and `-0.3`. The curvature sum
    /// is bounded independently of `dim`, and so is the likelihood's lower bound.
    pub fn decaying(dim: usize, c0: f64) -> Self {
        let c = (1..=dim).map(|j| c0 / (j * j) as f64).collect();
        let mu = (0..dim)
            .map(|j| if j % 2 == 0 { 0.5 } else { -0.3 })
            .collect();
        ProductTarget { c, mu }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `max_x Φ(x)` over the box.
    pub fn max_misfit(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.mu)
            .map(|(c, m)| c * f64::max((1.0 - m).powi(2), (1.0 + m).powi(2)))
            .sum()
    }

    /// `κ` with `κ ≤ ℓ ≤ 1/κ` for a tempering increment `delta_phi`.
    pub fn kappa(&self, delta_phi: f64) -> f64 {
        (-delta_phi * self.max_misfit()).exp()
    }
}

impl Misfit for ProductTarget {
    fn param_count(&self) -> usize {
        self.dim()
    }

    fn misfit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::arg("point dimension does not match the target"));
        }
        Ok(self
            .c
            .iter()
            .zip(&self.mu)
            .zip(x)
            .map(|((c, m), x)| c * (x - m) * (x - m))
            .sum())
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive 7/15-point Gauss–Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> Result<(f64, f64)> {
        let (value, err) = gauss_kronrod(f, a, b);
        if err <= tol {
            return Ok((value, err));
        }
        if depth == 0 {
            return Err(Error::Quadrature {
                tolerance: tol,
                estimate: value,
                error: err,
            });
        }
        let mid = 0.5 * (a + b);
        let (l, el) = recurse(f, a, mid, 0.5 * tol, depth - 1)?;
        let (r, er) = recurse(f, mid, b, 0.5 * tol, depth - 1)?;
        Ok((l + r, el + er))
    }
    Ok(recurse(&f, a, b, tol, 40)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Per-coordinate mean and variance of the density `∝ exp(-φ Φ)` on the box.
pub fn exact_moments(target: &ProductTarget, phi: f64) -> Result<Moments> {
    const TOL: f64 = 1e-10;
    let mut mean = Vec::with_capacity(target.dim());
    let mut variance = Vec::with_capacity(target.dim());
    for (&c, &mu) in target.c.iter().zip(&target.mu) {
        if c == 0.0 || phi == 0.0 {
            mean.push(0.0);
            variance.push(1.0 / 3.0);
            continue;
        }
        let density = |x: f64| (-phi * c * (x - mu) * (x - mu)).exp();
        let z = integrate(density, -1.0, 1.0, TOL)?;
        let m1 = integrate(|x| x * density(x), -1.0, 1.0, TOL)? / z;
        let m2 = integrate(|x| (x - m1) * (x - m1) * density(x), -1.0, 1.0, TOL)? / z;
        mean.push(m1);
        variance.push(m2);
    }
    Ok(Moments { mean, variance })
}

/// Settings for [`rate_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub dims: Vec<usize>,
    pub particle_counts: Vec<usize>,
    pub replicates: usize,
    /// Equal temperature increments from 0 to 1.
    pub ladder_steps: usize,
    /// Leading curvature of [`ProductTarget::decaying`].
    pub c0: f64,
    pub rho0: f64,
    pub m_global: f64,
    pub step_bounds: (usize, usize),
}

impl Default for RateStudyConfig {
    fn default() -> Self {
        RateStudyConfig {
            dims: vec![10, 90, 360],
            particle_counts: vec![100, 400, 1600],
            replicates: 50,
            ladder_steps: 10,
            c0: 5.0,
            rho0: 0.5,
            m_global: 0.5,
            step_bounds: (5, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub dim: usize,
    pub particles: usize,
    pub replicate: usize,
    /// Posterior-mean estimate of coordinate 1.
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub dim: usize,
    pub particles: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    pub estimates: Vec<RateEstimate>,
}

impl RateStudy {
    pub fn rmse(&self, dim: usize, particles: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.dim == dim && r.particles == particles)
            .map(|r| r.rmse)
    }

    /// Least-squares slope of `log RMSE` against `log M` for one dimension.
    pub fn slope(&self, dim: usize) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.dim == dim)
            .map(|r| ((r.particles as f64).ln(), r.rmse.ln()))
            .unzip();
        loglog_slope(&xs, &ys)
    }

    /// `max_dim RMSE / min_dim RMSE` at fixed `M`.
    pub fn dimension_ratio(&self, particles: usize) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.particles == particles)
            .map(|r| r.rmse)
            .collect();
        if vals.is_empty() {
            return None;
        }
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max / min)
    }
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Monte Carlo error of the sampler against exact posterior moments, across dimensions and
/// particle counts.
///
/// Every run resamples each round (`M_thres = M`) on a fixed uniform ladder, so the number
/// of rounds is the same for all dimensions. The error is the RMSE over replicates of the
/// weighted posterior mean of coordinate 1.
pub fn rate_study(config: &RateStudyConfig, seed: u64) -> Result<RateStudy> {
    let mut study = RateStudy::default();
    for &dim in &config.dims {
        let target = ProductTarget::decaying(dim, config.c0);
        let exact = exact_moments(&target, 1.0)?.mean[0];
        for &m in &config.particle_counts {
            let smc_config = SmcConfig {
                particles: m,
                target_ess: m as f64,
                rho0: config.rho0,
                m_global: config.m_global,
                step_bounds: config.step_bounds,
                resampling: Resampling::Multinomial,
                schedule: Schedule::uniform_ladder(config.ladder_steps),
            };
            let cell_seed = child_seed(
                child_seed(seed, Purpose::Replicate, dim as u64),
                Purpose::Replicate,
                m as u64,
            );
            let estimates: Vec<f64> = (0..config.replicates)
                .into_par_iter()
                .map(|r| {
                    let run_seed = child_seed(cell_seed, Purpose::Replicate, r as u64);
                    let (ens, _) = smc::run(&target, &smc_config, run_seed)?;
                    Ok(smc::weighted_mean(&ens)?[0])
                })
                .collect::<Result<_>>()?;
            let mse =
                estimates.iter().map(|e| (e - exact).powi(2)).sum::<f64>() / estimates.len() as f64;
            study.rows.push(RateRow {
                dim,
                particles: m,
                rmse: mse.sqrt(),
            });
            study
                .estimates
                .extend(
                    estimates
                        .iter()
                        .enumerate()
                        .map(|(replicate, &estimate)| RateEstimate {
                            dim,
                            particles: m,
                            replicate,
                            estimate,
                        }),
                );
        }
    }
    Ok(study)
}

/// A finitely supported distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Discrete {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::arg(
                "values and probabilities must be nonempty and equal in length",
            ));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg("probabilities must be nonnegative and sum to 1"));
        }
        Ok(Discrete { values, probs })
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * f(*v))
            .sum()
    }
}

/// Monte Carlo estimate of `E |S^M μ(f) - μ(f)|²`, where `S^M μ` is the empirical measure
/// of `M` i.i.d. draws from `μ`.
pub fn sampling_operator_error<R: Rng + ?Sized>(
    dist: &Discrete,
    f: impl Fn(f64) -> f64,
    m: usize,
    replicates: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 || replicates == 0 {
        return Err(Error::arg("need at least one sample and one replicate"));
    }
    // the error is shift invariant; measuring f from its value at the first atom makes
    // constant functions and point masses exact
    let base = f(dist.values[0]);
    let g = |x: f64| f(x) - base;
    let exact = dist.expect(g);
    let index = WeightedIndex::new(&dist.probs).map_err(|_| Error::DegenerateWeights)?;
    let mut total = 0.0;
    for _ in 0..replicates {
        let sum: f64 = (0..m)
            .map(|_| g(dist.values[index.sample(&mut *rng)]))
            .sum();
        total += (sum / m as f64 - exact).powi(2);
    }
    Ok(total / replicates as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::L1 => diffs.sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Norm::Linf => diffs.fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub norm: Norm,
}

/// `Σ_m w_m 1{‖x_m - center‖ ≤ ε}`.
pub fn ball_probability(ensemble: &Ensemble, spec: &BallSpec) -> Result<f64> {
    if spec.center.len() != ensemble.dim() {
        return Err(Error::arg(
            "ball centre does not match the ensemble dimension",
        ));
    }
    if !(spec.radius > 0.0) {
        return Err(Error::arg("ball radius must be positive"));
    }
    let w = ensemble.normalized_weights()?;
    // same summation order for both sums, so a ball holding every particle gives exactly 1
    let (inside, total) =
        ensemble
            .particles()
            .zip(&w)
            .fold((0.0, 0.0), |(inside, total), (p, w)| {
                let hit = spec.norm.distance(p, &spec.center) <= spec.radius;
                (if hit { inside + w } else { inside }, total + w)
            });
    Ok(inside / total)
}

/// `‖weighted mean - truth‖₂ / sqrt(D)`.
pub fn rmse_to_truth(ensemble: &Ensemble, truth: &[f64]) -> Result<f64> {
    if truth.len() != ensemble.dim() {
        return Err(Error::arg(format!(
            "truth has {} coefficients, ensemble has {}",
            truth.len(),
            ensemble.dim()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let mean = smc::weighted_mean(ensemble)?;
    let sq: f64 = mean.iter().zip(truth).map(|(m, t)| (m - t).powi(2)).sum();
    Ok((sq / truth.len() as f64).sqrt())
}

pub const DENSITY_GRID_POINTS: usize = 512;
pub const DENSITY_GRID_RANGE: (f64, f64) = (-1.1, 1.1);

/// Weighted Gaussian kernel density estimate of one coordinate on a 512-point grid over
/// `[-1.1, 1.1]`, with Silverman's bandwidth `1.06 σ n^(-1/5)` where `n` is the ESS.
pub fn marginal_density(ensemble: &Ensemble, coord: usize) -> Result<Vec<(f64, f64)>> {
    if coord >= ensemble.dim() {
        return Err(Error::arg(format!("coordinate {coord} out of range")));
    }
    let w = ensemble.normalized_weights()?;
    let xs: Vec<f64> = ensemble.particles().map(|p| p[coord]).collect();
    let mean: f64 = xs.iter().zip(&w).map(|(x, w)| w * x).sum();
    let var: f64 = xs.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let sd = if var > smc::VARIANCE_FLOOR {
        var.sqrt()
    } else {
        smc::PRIOR_VARIANCE.sqrt()
    };
    let n_eff = smc::ess(&w)?;
    let h = 1.06 * sd * n_eff.powf(-0.2);
    let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    let (lo, hi) = DENSITY_GRID_RANGE;
    let step = (hi - lo) / (DENSITY_GRID_POINTS - 1) as f64;
    Ok((0..DENSITY_GRID_POINTS)
        .map(|i| {
            let t = lo + step * i as f64;
            let density = xs
                .iter()
                .zip(&w)
                .map(|(x, w)| w * (-0.5 * ((t - x) / h).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (t, density)
        })
        .collect())
}

/// Bounded test functions on the box used to estimate distances between ensembles.
fn probe_functions(x: &[f64]) -> [f64; 4] {
    let x0 = x[0];
    let x1 = x.get(1).copied().unwrap_or(0.0);
    [x0, x0 * x0, (std::f64::consts::PI * x0).cos(), x1]
}

/// `max_f |μ(f) - ν(f)|` over a fixed family of functions bounded by 1.
pub fn probe_distance(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    let mean = |e: &Ensemble| -> Result<[f64; 4]> {
        let w = e.normalized_weights()?;
        let mut acc = [0.0; 4];
        for (p, wm) in e.particles().zip(&w) {
            for (a, v) in acc.iter_mut().zip(probe_functions(p)) {
                *a += wm * v;
            }
        }
        Ok(acc)
    };
    let (ma, mb) = (mean(a)?, mean(b)?);
    Ok(ma
        .iter()
        .zip(&mb)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs())))
}

/// One tempering-plus-mutation map: reweight by `exp(-(φ_next - φ_prev) Φ)` and apply the
/// invariant kernel at `φ_next` to each particle.
pub fn tempering_map(
    target: &ProductTarget,
    ensemble: &Ensemble,
    phi_prev: f64,
    phi_next: f64,
    rho: f64,
    steps: usize,
    seed: u64,
) -> Result<Ensemble> {
    let misfits: Vec<f64> = ensemble
        .particles()
        .map(|p| target.misfit(p))
        .collect::<Result<_>>()?;
    let log_weights: Vec<f64> = ensemble
        .log_weights()
        .iter()
        .zip(&misfits)
        .map(|(lw, f)| lw - (phi_next - phi_prev) * f)
        .collect();
    let reweighted = Ensemble::new(
        ensemble.dim(),
        ensemble.flat_particles().to_vec(),
        log_weights,
    )?;
    let scales = smc::proposal_scales(&reweighted, rho)?;
    Ok(smc::mutate(
        target,
        &reweighted,
        &misfits,
        phi_next,
        &scales,
        steps,
        seed,
        0,
    )?
    .ensemble)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionProbe {
    pub before: f64,
    pub after: f64,
    /// `2 / κ²`.
    pub factor: f64,
}

/// Applies [`tempering_map`] to two ensembles and reports the estimated distances.
#[allow(clippy::too_many_arguments)]
pub fn contraction_probe(
    target: &ProductTarget,
    a: &Ensemble,
    b: &Ensemble,
    phi_prev: f64,
    phi_next: f64,
    rho: f64,
    steps: usize,
    seed: u64,
) -> Result<ContractionProbe> {
    let before = probe_distance(a, b)?;
    let ma = tempering_map(target, a, phi_prev, phi_next, rho, steps, seed)?;
    let mb = tempering_map(
        target,
        b,
        phi_prev,
        phi_next,
        rho,
        steps,
        child_seed(seed, Purpose::Oracle, 1),
    )?;
    let kappa = target.kappa(phi_next - phi_prev);
    Ok(ContractionProbe {
        before,
        after: probe_distance(&ma, &mb)?,
        factor: 2.0 / (kappa * kappa),
    })
}

/// Uniform-prior sample of `m` points in `[-1, 1]^dim`, optionally tilted along
/// coordinate 0 by the density `(1 + tilt x_0) / 2` (`|tilt| ≤ 1`).
pub fn tilted_uniform(dim: usize, m: usize, tilt: f64, seed: u64) -> Result<Ensemble> {
    if tilt.abs() > 1.0 {
        return Err(Error::arg("tilt must lie in [-1, 1]"));
    }
    let mut rng = stream(seed, Purpose::Oracle, 0, 0);
    let mut particles = Vec::with_capacity(dim * m);
    while particles.len() < dim * m {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if rng.gen::<f64>() * (1.0 + tilt.abs()) < 1.0 + tilt * x[0] {
            particles.extend(x);
        }
    }
    Ensemble::uniform(dim, particles)
}
