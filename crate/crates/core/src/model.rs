//! Observations, the data misfit `Φ`, tempering weights and synthetic data.
//!
//! `Φ(u; y) = Σ_x |G(x; u) - y_x|² / (2σ²)` is nonnegative, so the likelihood
//! `π(u) = exp(-Φ)` lies in `(0, 1]` for every admissible `u`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{CoefficientVector, FieldConfig, DOMAIN_HALF_WIDTH};
use crate::pde::{ForwardModel, Grid, SourceSpec};
use crate::smc::Misfit;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub obs_points: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Noise variance `σ²`.
    pub sigma2: f64,
    /// Points per axis of the equi-spaced layout, when the data came from one.
    pub layout: Option<usize>,
}

impl Dataset {
    pub fn new(obs_points: Vec<Vec<f64>>, y: Vec<f64>, sigma2: f64) -> Result<Self> {
        let data = Dataset {
            obs_points,
            y,
            sigma2,
            layout: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn empty(sigma2: f64) -> Self {
        Dataset {
            obs_points: Vec::new(),
            y: Vec::new(),
            sigma2,
            layout: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_points.len() != self.y.len() {
            return Err(Error::arg(format!(
                "{} observation points but {} observed values",
                self.obs_points.len(),
                self.y.len()
            )));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::arg(format!(
                "noise variance {} must be positive",
                self.sigma2
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.obs_points.first().map(Vec::len)
    }
}

pub fn misfit(g_values: &[f64], data: &Dataset) -> Result<f64> {
    if g_values.len() != data.y.len() {
        return Err(Error::arg(format!(
            "{} forward values for {} observations",
            g_values.len(),
            data.y.len()
        )));
    }
    let sq: f64 = g_values
        .iter()
        .zip(&data.y)
        .map(|(g, y)| (g - y) * (g - y))
        .sum();
    Ok(sq / (2.0 * data.sigma2))
}

/// `log ℓ = -(phi_next - phi_prev) Φ`, the log of `π^(φ_n - φ_{n-1})`.
pub fn incremental_log_weight(misfit_value: f64, phi_prev: f64, phi_next: f64) -> Result<f64> {
    if !(0.0 <= phi_prev && phi_prev <= phi_next && phi_next <= 1.0) {
        return Err(Error::arg(format!(
            "temperatures must satisfy 0 <= {phi_prev} <= {phi_next} <= 1"
        )));
    }
    Ok(-(phi_next - phi_prev) * misfit_value)
}

/// `s^dim` equi-spaced interior points, coordinates `-π/2 + π i / (s + 1)`, `i = 1..=s`,
/// row-major with axis 0 slowest.
pub fn observation_layout(dim: usize, s: usize) -> Vec<Vec<f64>> {
    let step = 2.0 * DOMAIN_HALF_WIDTH / (s + 1) as f64;
    // symmetric form, as for grid nodes
    let axis: Vec<f64> = (1..=s)
        .map(|i| step * (i as f64 - (s + 1) as f64 / 2.0))
        .collect();
    let total = s.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; dim];
            for c in p.iter_mut().rev() {
                *c = axis[flat % s];
                flat /= s;
            }
            p
        })
        .collect()
}

/// Synthetic observations `y = G(x; truth) + ε`, `ε ~ N(0, σ²)` i.i.d.
///
/// The forward solve runs on `grid.refined()` so the data are not produced by the same
/// discretization the sampler inverts.
pub fn generate_data<R: Rng + ?Sized>(
    truth: &CoefficientVector,
    config: &FieldConfig,
    grid: &Grid,
    src: &SourceSpec,
    layout: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::arg(format!(
            "noise variance {sigma2} must be nonnegative"
        )));
    }
    let points = observation_layout(config.dim, layout);
    let fine = grid.refined();
    let g = ForwardModel::new(config, &fine, src, &points)?.evaluate(truth.as_slice())?;
    let y = if sigma2 > 0.0 {
        let noise = Normal::new(0.0, sigma2.sqrt()).expect("finite positive deviation");
        g.iter().map(|v| v + noise.sample(rng)).collect()
    } else {
        g
    };
    Ok(Dataset {
        obs_points: points,
        y,
        sigma2,
        layout: Some(layout),
    })
}

/// Misfit of the Darcy inverse problem for a fixed data set.
#[derive(Debug, Clone)]
pub struct DarcyPosterior {
    forward: ForwardModel,
    data: Dataset,
}

impl DarcyPosterior {
    pub fn new(config: &FieldConfig, grid: &Grid, src: &SourceSpec, data: Dataset) -> Result<Self> {
        data.validate()?;
        if let Some(d) = data.dim() {
            if d != config.dim {
                return Err(Error::arg(format!(
                    "data set is {d}-dimensional, field is {}-dimensional",
                    config.dim
                )));
            }
        }
        let forward = ForwardModel::new(config, grid, src, &data.obs_points)?;
        Ok(DarcyPosterior { forward, data })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn forward(&self) -> &ForwardModel {
        &self.forward
    }
}

impl Misfit for DarcyPosterior {
    fn param_count(&self) -> usize {
        self.forward.config().param_count()
    }

    fn misfit(&self, coeffs: &[f64]) -> Result<f64> {
        if self.data.is_empty() {
            return Ok(0.0);
        }
        misfit(&self.forward.evaluate(coeffs)?, &self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample_prior;
    use crate::rng::{stream, Purpose};

    fn one_obs(y: f64, sigma2: f64) -> Dataset {
        Dataset::new(vec![vec![0.0, 0.0]], vec![y], sigma2).unwrap()
    }

    #[test]
    fn misfit_examples() {
        let data = one_obs(0.25, 5e-7);
        assert_eq!(misfit(&[0.25], &data).unwrap(), 0.0);
        assert!((misfit(&[0.25 + 1e-3], &data).unwrap() - 1.0).abs() < 1e-9);
        let wide = one_obs(0.25, 1e-6);
        assert!((misfit(&[0.25 + 1e-3], &wide).unwrap() - 0.5).abs() < 1e-9);
        assert!(misfit(&[0.1, 0.2], &data).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![0.0, 0.0]], vec![], 1.0).is_err());
        assert!(Dataset::new(vec![], vec![], 0.0).is_err());
    }

    #[test]
    fn incremental_weight_examples() {
        assert_eq!(incremental_log_weight(3.0, 0.4, 0.4).unwrap(), 0.0);
        assert_eq!(incremental_log_weight(2.0, 0.25, 0.75).unwrap(), -1.0);
        assert!(incremental_log_weight(1.0, 0.5, 0.4).is_err());
        assert!(incremental_log_weight(1.0, 0.5, 1.2).is_err());
    }

    #[test]
    fn tempering_telescopes_to_full_misfit() {
        let ladders: [&[f64]; 3] = [
            &[0.0, 1.0],
            &[0.0, 1e-4, 0.003, 0.2, 0.21, 0.7, 1.0],
            &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        ];
        for phi in [0.0, 0.37, 12.5, 4.2e5] {
            for ladder in ladders {
                let total: f64 = ladder
                    .windows(2)
                    .map(|w| incremental_log_weight(phi, w[0], w[1]).unwrap())
                    .sum();
                assert!(
                    (total + phi).abs() <= 1e-12 * phi.max(1.0),
                    "{total} vs {phi}"
                );
            }
        }
    }

    #[test]
    fn layout_examples() {
        let pts = observation_layout(2, 2);
        let t = std::f64::consts::PI / 6.0;
        let expected = [[-t, -t], [-t, t], [t, -t], [t, t]];
        assert_eq!(pts.len(), 4);
        for (p, e) in pts.iter().zip(expected) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
        for (s, count) in [(2, 4), (4, 16), (6, 36), (8, 64), (10, 100), (12, 144)] {
            assert_eq!(observation_layout(2, s).len(), count);
        }
        assert_eq!(observation_layout(3, 5).len(), 125);
    }

    fn small_setup() -> (FieldConfig, Grid, SourceSpec, CoefficientVector) {
        let config = FieldConfig {
            cutoff: 3,
            ..FieldConfig::planar_default()
        };
        let grid = Grid::new(2, 10).unwrap();
        let src = SourceSpec::centered_unit(&grid);
        let truth = sample_prior(&config, &mut stream(11, Purpose::Truth, 0, 0));
        (config, grid, src, truth)
    }

    #[test]
    fn noiseless_data_equal_fine_grid_forward_values() {
        let (config, grid, src, truth) = small_setup();
        let data = generate_data(
            &truth,
            &config,
            &grid,
            &src,
            4,
            0.0,
            &mut stream(1, Purpose::Noise, 0, 0),
        )
        .unwrap();
        let fine = ForwardModel::new(&config, &grid.refined(), &src, &data.obs_points)
            .unwrap()
            .evaluate(truth.as_slice())
            .unwrap();
        assert_eq!(data.y, fine);
        assert_eq!(data.len(), 16);
        // the coarse grid disagrees slightly: no inverse crime
        let coarse = ForwardModel::new(&config, &grid, &src, &data.obs_points)
            .unwrap()
            .evaluate(truth.as_slice())
            .unwrap();
        assert!(coarse.iter().zip(&fine).any(|(c, f)| c != f));
    }

    #[test]
    fn noise_variance_matches_sigma2() {
        let (config, grid, src, truth) = small_setup();
        let sigma2: f64 = 5e-7;
        let clean = ForwardModel::new(&config, &grid.refined(), &src, &observation_layout(2, 2))
            .unwrap()
            .evaluate(truth.as_slice())
            .unwrap();
        // the noise is additive, so replicate it against one cached solve
        let mut rng = stream(2, Purpose::Noise, 0, 0);
        let noise = Normal::new(0.0, sigma2.sqrt()).unwrap();
        let mut residuals = Vec::new();
        for _ in 0..10_000 {
            for g in &clean {
                residuals.push(g + noise.sample(&mut rng) - g);
            }
        }
        let n = residuals.len() as f64;
        let var = residuals.iter().map(|r| r * r).sum::<f64>() / n;
        assert!((var / sigma2 - 1.0).abs() < 0.05);

        // and generate_data itself draws with that law
        let data = generate_data(&truth, &config, &grid, &src, 10, sigma2, &mut rng).unwrap();
        let fine = ForwardModel::new(&config, &grid.refined(), &src, &data.obs_points)
            .unwrap()
            .evaluate(truth.as_slice())
            .unwrap();
        let var: f64 = data
            .y
            .iter()
            .zip(&fine)
            .map(|(y, g)| (y - g).powi(2))
            .sum::<f64>()
            / data.len() as f64;
        assert!(var / sigma2 > 0.5 && var / sigma2 < 1.6);
    }

    #[test]
    fn likelihood_is_bounded_by_one_and_positive() {
        let (config, grid, src, truth) = small_setup();
        let data = generate_data(
            &truth,
            &config,
            &grid,
            &src,
            4,
            1e-4,
            &mut stream(3, Purpose::Noise, 0, 0),
        )
        .unwrap();
        let post = DarcyPosterior::new(&config, &grid, &src, data).unwrap();
        let mut rng = stream(4, Purpose::Prior, 0, 0);
        let mut min_pi = f64::INFINITY;
        for _ in 0..10_000 {
            let c = sample_prior(&config, &mut rng);
            let phi = post.misfit(c.as_slice()).unwrap();
            let pi = (-phi).exp();
            assert!(pi <= 1.0 && phi >= 0.0);
            min_pi = min_pi.min(pi);
        }
        assert!(min_pi > 0.0);
    }

    #[test]
    fn incremental_weights_respect_kappa_bounds() {
        let (config, grid, src, truth) = small_setup();
        let data = generate_data(
            &truth,
            &config,
            &grid,
            &src,
            4,
            1e-5,
            &mut stream(5, Purpose::Noise, 0, 0),
        )
        .unwrap();
        let post = DarcyPosterior::new(&config, &grid, &src, data).unwrap();
        let mut rng = stream(6, Purpose::Prior, 0, 0);
        let phis: Vec<f64> = (0..1000)
            .map(|_| {
                post.misfit(sample_prior(&config, &mut rng).as_slice())
                    .unwrap()
            })
            .collect();
        let phi_max = phis.iter().copied().fold(0.0, f64::max);
        assert!(phi_max > 0.0);
        for (prev, next) in [(0.0, 1e-4), (0.01, 0.02), (0.5, 1.0), (0.0, 1.0)] {
            let kappa = (-(next - prev) * phi_max).exp();
            for &phi in &phis {
                let lw = incremental_log_weight(phi, prev, next).unwrap();
                assert!(lw <= 0.0 && lw >= -(next - prev) * phi_max);
                let l = lw.exp();
                assert!(kappa <= l && l <= 1.0 / kappa);
            }
        }
    }

    #[test]
    fn empty_dataset_has_zero_misfit() {
        let (config, grid, src, truth) = small_setup();
        let post = DarcyPosterior::new(&config, &grid, &src, Dataset::empty(1.0)).unwrap();
        assert_eq!(post.misfit(truth.as_slice()).unwrap(), 0.0);
    }
}
