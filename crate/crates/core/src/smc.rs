//! Adaptive tempered sequential Monte Carlo on the coefficient box `[-1, 1]^D`.
//!
//! Each round picks the next temperature so that the reweighted ensemble has a target
//! effective sample size, resamples when the ESS has dropped to that target, and then
//! moves every particle with reflective random-walk Metropolis steps whose per-coordinate
//! scales follow the ensemble spread. The global scale `ρ` and the number of steps are
//! adapted from the previous round's acceptance rate.
//!
//! Randomness is drawn from streams keyed by `(seed, round, particle)`, so a run is
//! reproducible for any number of worker threads.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoefficientVector, FieldConfig, FieldEvaluator};
use crate::model::incremental_log_weight;
use crate::rng::{stream, Purpose};

/// Smallest temperature increment that counts as progress.
pub const DELTA_PHI_FLOOR: f64 = 1e-10;
/// Consecutive sub-floor increments tolerated before giving up.
pub const STAGNATION_ROUNDS: usize = 5;
/// Weighted variances below this are replaced by the prior variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const PRIOR_VARIANCE: f64 = 1.0 / 3.0;

const BISECTION_MAX_ITER: usize = 200;

/// Negative log-likelihood `Φ ≥ 0` of a parameter vector.
pub trait Misfit: Sync {
    fn param_count(&self) -> usize;
    fn misfit(&self, coeffs: &[f64]) -> Result<f64>;
}

/// `M` particles in `[-1, 1]^D` with unnormalized log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    particles: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Ensemble {
    /// `particles` is row-major, one particle of length `dim` per row.
    pub fn new(dim: usize, particles: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        let m = log_weights.len();
        if m < 2 {
            return Err(Error::arg(format!(
                "an ensemble needs at least 2 particles, got {m}"
            )));
        }
        if particles.len() != m * dim {
            return Err(Error::arg(format!(
                "{} particle values for {m} particles of dimension {dim}",
                particles.len()
            )));
        }
        if particles.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::arg("particle coordinate outside [-1, 1]"));
        }
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::arg("log-weights must be finite or -inf"));
        }
        Ok(Ensemble {
            dim,
            particles,
            log_weights,
        })
    }

    pub fn uniform(dim: usize, particles: Vec<f64>) -> Result<Self> {
        let m = if dim == 0 { 0 } else { particles.len() / dim };
        Self::new(dim, particles, vec![0.0; m])
    }

    /// Weights given on the linear scale.
    pub fn with_weights(dim: usize, particles: Vec<f64>, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("weights must be finite and nonnegative"));
        }
        Self::new(dim, particles, weights.iter().map(|w| w.ln()).collect())
    }

    pub fn from_vectors(particles: &[CoefficientVector], log_weights: Vec<f64>) -> Result<Self> {
        let dim = particles.first().map_or(0, CoefficientVector::len);
        if particles.iter().any(|p| p.len() != dim) {
            return Err(Error::arg("particles differ in dimension"));
        }
        let flat = particles
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect();
        Self::new(dim, flat, log_weights)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, m: usize) -> &[f64] {
        &self.particles[m * self.dim..(m + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact rejects a zero chunk size
        (0..self.len()).map(move |m| self.particle(m))
    }

    pub fn flat_particles(&self) -> &[f64] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.log_weights)
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.normalized_weights()?)
    }

    fn select(&self, ancestors: &[usize]) -> Ensemble {
        let mut particles = Vec::with_capacity(ancestors.len() * self.dim);
        for &a in ancestors {
            particles.extend_from_slice(self.particle(a));
        }
        Ensemble {
            dim: self.dim,
            particles,
            log_weights: vec![0.0; ancestors.len()],
        }
    }
}

/// Normalized weights from log-weights, shifting by the maximum first.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// `(Σw)² / Σw²`; invariant to scaling, in `[1, M]`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::arg("weights must be finite and nonnegative"));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), w| {
        let w = w / max;
        (s + w, s2 + w * w)
    });
    // rounding can push nearly uniform weights a hair above M
    Ok((s * s / s2).min(weights.len() as f64))
}

fn ess_of_log(log_weights: &[f64]) -> Result<f64> {
    ess(&normalize_log_weights(log_weights)?)
}

fn tempered_log_weights(misfits: &[f64], carried: &[f64], phi_prev: f64, phi: f64) -> Vec<f64> {
    misfits
        .iter()
        .zip(carried)
        .map(|(&f, &c)| c - (phi - phi_prev) * f)
        .collect()
}

/// Smallest `φ ∈ (phi_prev, 1]` whose reweighted ensemble has ESS `target_ess`, or `1`
/// when even the full step keeps the ESS at or above the target.
///
/// Bisection runs on the increment `φ - phi_prev` down to floating-point resolution (at
/// most 200 halvings) and returns the upper end of the final bracket, whose ESS does not
/// exceed the target.
pub fn next_temperature(
    misfits: &[f64],
    carried_log_weights: &[f64],
    phi_prev: f64,
    target_ess: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&phi_prev) {
        return Err(Error::arg(format!(
            "previous temperature {phi_prev} must lie in [0, 1)"
        )));
    }
    if misfits.len() != carried_log_weights.len() {
        return Err(Error::arg("misfits and log-weights differ in length"));
    }
    let ess_at = |phi: f64| {
        ess_of_log(&tempered_log_weights(
            misfits,
            carried_log_weights,
            phi_prev,
            phi,
        ))
    };
    if ess_at(1.0)? >= target_ess {
        return Ok(1.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0 - phi_prev;
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ess_at(phi_prev + mid)? > target_ess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((phi_prev + hi).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = f64::INFINITY;
    }
    cdf
}

fn search(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Ancestor indices for `weights.len()` draws.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: Resampling,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let m = weights.len();
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let cdf = cumulative(&normalized);
    Ok(match scheme {
        Resampling::Multinomial => (0..m).map(|_| search(&cdf, rng.gen::<f64>())).collect(),
        Resampling::Systematic => {
            let offset: f64 = rng.gen();
            (0..m)
                .map(|i| search(&cdf, (i as f64 + offset) / m as f64))
                .collect()
        }
    })
}

/// `M` i.i.d. draws from the weighted empirical measure; the result is equally weighted.
pub fn resample_multinomial<R: Rng + ?Sized>(ensemble: &Ensemble, rng: &mut R) -> Result<Ensemble> {
    let ancestors = resample_indices(
        &ensemble.normalized_weights()?,
        Resampling::Multinomial,
        rng,
    )?;
    Ok(ensemble.select(&ancestors))
}

pub fn resample_systematic<R: Rng + ?Sized>(ensemble: &Ensemble, rng: &mut R) -> Result<Ensemble> {
    let ancestors = resample_indices(&ensemble.normalized_weights()?, Resampling::Systematic, rng)?;
    Ok(ensemble.select(&ancestors))
}

/// `ε_j = ρ sqrt(Var_w(x_j))`, falling back to the prior variance for collapsed coordinates.
pub fn proposal_scales(ensemble: &Ensemble, rho: f64) -> Result<Vec<f64>> {
    let w = ensemble.normalized_weights()?;
    let d = ensemble.dim();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for (p, wm) in ensemble.particles().zip(&w) {
        for j in 0..d {
            mean[j] += wm * p[j];
            second[j] += wm * p[j] * p[j];
        }
    }
    Ok(mean
        .iter()
        .zip(&second)
        .map(|(m, s)| {
            let var = s - m * m;
            let var = if var < VARIANCE_FLOOR {
                PRIOR_VARIANCE
            } else {
                var
            };
            rho * var.sqrt()
        })
        .collect())
}

/// Doubles `ρ` above 30% acceptance, halves it below 15%, keeps it otherwise.
pub fn adapt_rho(rho_prev: f64, acc_prev: f64) -> f64 {
    if acc_prev > 0.3 {
        2.0 * rho_prev
    } else if acc_prev < 0.15 {
        0.5 * rho_prev
    } else {
        rho_prev
    }
}

/// `clamp(⌊m / ρ²⌋, l, u)`.
pub fn adapt_steps(m_global: f64, rho: f64, bounds: (usize, usize)) -> usize {
    // absorbs the rounding of ρ² so that e.g. 2 / 0.2² floors to 50, not 49
    let raw = (m_global / (rho * rho) * (1.0 + 1e-12)).floor();
    if raw >= bounds.1 as f64 {
        bounds.1
    } else if raw <= bounds.0 as f64 {
        bounds.0
    } else {
        raw as usize
    }
}

/// Folds `value` into `[lo, hi]` by reflecting at the walls.
pub fn reflect(value: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&value) {
        return value;
    }
    let width = hi - lo;
    let t = (value - lo).rem_euclid(2.0 * width);
    let folded = if t > width { 2.0 * width - t } else { t };
    (lo + folded).clamp(lo, hi)
}

#[derive(Debug, Clone)]
pub struct MutationOutcome {
    pub ensemble: Ensemble,
    /// Accepted fraction over all `M × steps` proposals.
    pub acc_rate: f64,
    pub misfits: Vec<f64>,
}

/// Runs `steps` reflective random-walk Metropolis sweeps at temperature `phi`.
///
/// Every sweep proposes all coordinates of a particle jointly,
/// `x'_j = reflect(x_j + ε_j ξ_j, -1, 1)`, and accepts with probability
/// `min(1, exp(φ (Φ(x) - Φ(x'))))`. The reflected walk is symmetric on the box, so the
/// kernel leaves the tempered posterior invariant. Particle `m` draws from the stream
/// `(seed, Mutation, round, m)`. Weights are not touched.
#[allow(clippy::too_many_arguments)]
pub fn mutate<T: Misfit + ?Sized>(
    target: &T,
    ensemble: &Ensemble,
    misfits: &[f64],
    phi: f64,
    scales: &[f64],
    steps: usize,
    seed: u64,
    round: u64,
) -> Result<MutationOutcome> {
    let d = ensemble.dim();
    if scales.len() != d || misfits.len() != ensemble.len() {
        return Err(Error::arg("scales or misfits do not match the ensemble"));
    }
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::arg(format!(
            "mutation temperature {phi} must lie in (0, 1]"
        )));
    }
    let mut particles = ensemble.particles.clone();
    let mut new_misfits = misfits.to_vec();
    let accepted: Vec<usize> = particles
        .par_chunks_mut(d.max(1))
        .zip(new_misfits.par_iter_mut())
        .enumerate()
        .map(|(m, (x, current))| {
            let mut rng = stream(seed, Purpose::Mutation, round, m as u64);
            let mut proposal = vec![0.0; x.len()];
            let mut accepted = 0usize;
            for _ in 0..steps {
                for ((p, xi), eps) in proposal.iter_mut().zip(x.iter()).zip(scales) {
                    let z: f64 = rng.sample(StandardNormal);
                    *p = reflect(xi + eps * z, -1.0, 1.0);
                }
                let candidate = target.misfit(&proposal)?;
                let log_ratio = phi * (*current - candidate);
                let u: f64 = rng.gen();
                if log_ratio >= 0.0 || u < log_ratio.exp() {
                    x.copy_from_slice(&proposal);
                    *current = candidate;
                    accepted += 1;
                }
            }
            Ok(accepted)
        })
        .collect::<Result<_>>()?;
    let proposals = (steps * ensemble.len()) as f64;
    let acc_rate = if proposals > 0.0 {
        accepted.iter().sum::<usize>() as f64 / proposals
    } else {
        1.0
    };
    Ok(MutationOutcome {
        ensemble: Ensemble {
            dim: d,
            particles,
            log_weights: ensemble.log_weights.clone(),
        },
        acc_rate,
        misfits: new_misfits,
    })
}

/// How temperatures are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Solve `ESS = target_ess` by bisection each round.
    Adaptive,
    /// A prescribed increasing ladder ending at 1 (the initial 0 is implicit).
    Fixed(Vec<f64>),
}

impl Schedule {
    /// `steps` equal increments from 0 to 1.
    pub fn uniform_ladder(steps: usize) -> Self {
        Schedule::Fixed((1..=steps).map(|i| i as f64 / steps as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// `M`.
    pub particles: usize,
    /// `M_thres`: resample when the ESS falls to or below it; also the ESS target.
    pub target_ess: f64,
    /// Global proposal scale for the first round.
    pub rho0: f64,
    /// `m` in `M_n = ⌊m / ρ_n²⌋`.
    pub m_global: f64,
    /// `[l, u]` bounds on the number of Metropolis sweeps.
    pub step_bounds: (usize, usize),
    pub resampling: Resampling,
    pub schedule: Schedule,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 1000,
            target_ess: 600.0,
            rho0: 1.0,
            m_global: 2.0,
            step_bounds: (5, 200),
            resampling: Resampling::Multinomial,
            schedule: Schedule::Adaptive,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::arg("at least 2 particles are required"));
        }
        if !(self.target_ess >= 1.0 && self.target_ess <= self.particles as f64) {
            return Err(Error::arg(format!(
                "target ESS {} must lie in [1, {}]",
                self.target_ess, self.particles
            )));
        }
        if !(self.rho0.is_finite() && self.rho0 > 0.0) {
            return Err(Error::arg("rho0 must be positive"));
        }
        if !(self.m_global.is_finite() && self.m_global > 0.0) {
            return Err(Error::arg("m_global must be positive"));
        }
        let (l, u) = self.step_bounds;
        if !(1 <= l && l <= u) {
            return Err(Error::arg(format!(
                "step bounds [{l}, {u}] need 1 <= l <= u"
            )));
        }
        if let Schedule::Fixed(ladder) = &self.schedule {
            let mut prev = 0.0;
            for &phi in ladder {
                if !(phi > prev && phi <= 1.0) {
                    return Err(Error::arg(
                        "temperature ladder must increase strictly within (0, 1]",
                    ));
                }
                prev = phi;
            }
            if prev != 1.0 {
                return Err(Error::arg("temperature ladder must end at 1"));
            }
        }
        Ok(())
    }
}

/// Adaptation state carried between rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptState {
    pub phi: f64,
    pub rho: f64,
    pub steps: usize,
    pub acc_rate: f64,
    pub m_global: f64,
    pub step_bounds: (usize, usize),
    pub target_ess: f64,
}

impl AdaptState {
    fn initial(config: &SmcConfig) -> Self {
        AdaptState {
            phi: 0.0,
            rho: config.rho0,
            steps: adapt_steps(config.m_global, config.rho0, config.step_bounds),
            acc_rate: 0.0,
            m_global: config.m_global,
            step_bounds: config.step_bounds,
            target_ess: config.target_ess,
        }
    }

    /// `ρ` and `M_n` for round `round` (1-based) given the previous round's acceptance.
    fn advance(&mut self, round: usize, rho0: f64) {
        self.rho = if round == 1 {
            rho0
        } else {
            adapt_rho(self.rho, self.acc_rate)
        };
        self.steps = adapt_steps(self.m_global, self.rho, self.step_bounds);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phi: f64,
    pub delta_phi: f64,
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    /// Acceptance rate of this round's mutation.
    pub acc_rate: f64,
    pub rho: f64,
    pub steps: usize,
    /// `max_m Φ_m` at reweighting time.
    pub max_misfit: f64,
    /// Smallest incremental log-weight of the round.
    pub min_log_increment: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rounds: Vec<RoundRecord>,
}

impl RunTrace {
    pub fn final_phi(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.phi)
    }

    pub fn forward_solves(&self, particles: usize) -> usize {
        self.rounds.iter().map(|r| r.steps * particles).sum()
    }
}

fn prior_ensemble(dim: usize, m: usize, seed: u64) -> Ensemble {
    let particles: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = stream(seed, Purpose::Prior, i as u64, 0);
            (0..dim)
                .map(move |_| rng.gen_range(-1.0..=1.0))
                .collect::<Vec<f64>>()
        })
        .collect();
    Ensemble {
        dim,
        particles,
        log_weights: vec![0.0; m],
    }
}

fn evaluate_misfits<T: Misfit + ?Sized>(target: &T, ensemble: &Ensemble) -> Result<Vec<f64>> {
    (0..ensemble.len())
        .into_par_iter()
        .map(|m| target.misfit(ensemble.particle(m)))
        .collect()
}

/// The adaptive SMC sampler. Returns the final weighted ensemble and per-round trace.
///
/// Per round `n`: choose `φ_n`, reweight by `π^(φ_n - φ_{n-1})`, resample if
/// `ESS ≤ M_thres`, set `ρ_n` (from `ρ_0` in round 1, by [`adapt_rho`] after) and
/// `M_n` by [`adapt_steps`], then mutate. Stops after the round that reaches `φ = 1`.
/// The final ensemble is reported weighted, without a closing resample.
pub fn run<T: Misfit + ?Sized>(
    target: &T,
    config: &SmcConfig,
    seed: u64,
) -> Result<(Ensemble, RunTrace)> {
    config.validate()?;
    let m = config.particles;
    let mut ensemble = prior_ensemble(target.param_count(), m, seed);
    let mut misfits = evaluate_misfits(target, &ensemble)?;
    if config.schedule == Schedule::Adaptive && config.target_ess >= m as f64 {
        let first = misfits[0];
        if misfits.iter().any(|&f| f != first) {
            return Err(Error::arg(
                "an ESS target equal to the particle count cannot be met once misfits differ",
            ));
        }
    }
    let mut state = AdaptState::initial(config);
    let mut trace = RunTrace::default();
    let mut stalled = 0usize;
    let mut round = 0usize;
    while state.phi < 1.0 {
        round += 1;
        let started = Instant::now();
        let phi_prev = state.phi;
        let phi = match &config.schedule {
            Schedule::Adaptive => {
                next_temperature(&misfits, &ensemble.log_weights, phi_prev, config.target_ess)?
            }
            Schedule::Fixed(ladder) => ladder[round - 1],
        };
        let mut min_log_increment = 0.0f64;
        for (lw, &f) in ensemble.log_weights.iter_mut().zip(&misfits) {
            let inc = incremental_log_weight(f, phi_prev, phi)?;
            min_log_increment = min_log_increment.min(inc);
            *lw += inc;
        }
        let max_lw = ensemble
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max_lw.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        ensemble.log_weights.iter_mut().for_each(|lw| *lw -= max_lw);
        let max_misfit = misfits.iter().copied().fold(0.0, f64::max);
        let current_ess = ensemble.ess()?;

        let resampled = current_ess <= config.target_ess;
        if resampled {
            let weights = ensemble.normalized_weights()?;
            let mut rng = stream(seed, Purpose::Resampling, round as u64, 0);
            let ancestors = resample_indices(&weights, config.resampling, &mut rng)?;
            ensemble = ensemble.select(&ancestors);
            misfits = ancestors.iter().map(|&a| misfits[a]).collect();
        }

        state.advance(round, config.rho0);
        let scales = proposal_scales(&ensemble, state.rho)?;
        let moved = mutate(
            target,
            &ensemble,
            &misfits,
            phi,
            &scales,
            state.steps,
            seed,
            round as u64,
        )?;
        ensemble = moved.ensemble;
        misfits = moved.misfits;
        state.acc_rate = moved.acc_rate;
        state.phi = phi;

        let delta_phi = phi - phi_prev;
        trace.rounds.push(RoundRecord {
            round,
            phi,
            delta_phi,
            ess: current_ess,
            resampled,
            acc_rate: moved.acc_rate,
            rho: state.rho,
            steps: state.steps,
            max_misfit,
            min_log_increment,
            seconds: started.elapsed().as_secs_f64(),
        });

        if phi < 1.0 && delta_phi < DELTA_PHI_FLOOR {
            stalled += 1;
            if stalled >= STAGNATION_ROUNDS {
                return Err(Error::Stagnation {
                    floor: DELTA_PHI_FLOOR,
                    rounds: stalled,
                    phi,
                    trace: Box::new(trace),
                });
            }
        } else {
            stalled = 0;
        }
    }
    Ok((ensemble, trace))
}

/// Self-normalized weighted average of the particles.
pub fn weighted_mean(ensemble: &Ensemble) -> Result<Vec<f64>> {
    let w = ensemble.normalized_weights()?;
    let mut mean = vec![0.0; ensemble.dim()];
    for (p, wm) in ensemble.particles().zip(&w) {
        for (acc, v) in mean.iter_mut().zip(p) {
            *acc += wm * v;
        }
    }
    Ok(mean)
}

/// Weighted average of the particle fields on a tensor grid (see [`FieldEvaluator`]).
pub fn weighted_field_mean(
    ensemble: &Ensemble,
    config: &FieldConfig,
    axes: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let w = ensemble.normalized_weights()?;
    let evaluator = FieldEvaluator::new(config, axes)?;
    let mut mean = vec![0.0; evaluator.point_count()];
    for (p, wm) in ensemble.particles().zip(&w) {
        if *wm == 0.0 {
            continue;
        }
        for (acc, v) in mean.iter_mut().zip(evaluator.evaluate(p)?) {
            *acc += wm * v;
        }
    }
    Ok(mean)
}
