//! Truncated Fourier parameterization of the permeability prior.
//!
//! A field is `u(x) = u_bar + Σ_{k ∈ H} a_k (ξ_k cos(k·x) + η_k sin(k·x))`, where `H` is
//! the set of lexicographically positive frequencies with `0 < |k|∞ < cutoff`,
//! `a_k = a |k|∞^(-alpha)` and every `ξ_k, η_k` is `U[-1, 1]`. Using cosine/sine pairs
//! over a half-lattice keeps the field real while the prior stays a product of uniforms.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the physical domain `[-π/2, π/2]^d`.
pub const DOMAIN_HALF_WIDTH: f64 = FRAC_PI_2;

const DOMAIN_SLACK: f64 = 1e-12;

pub(crate) fn check_in_domain(point: &[f64], dim: usize) -> Result<()> {
    if point.len() != dim {
        return Err(Error::arg(format!(
            "point has {} coordinates, expected {dim}",
            point.len()
        )));
    }
    let limit = DOMAIN_HALF_WIDTH * (1.0 + DOMAIN_SLACK);
    if point.iter().any(|x| !x.is_finite() || x.abs() > limit) {
        return Err(Error::arg(format!(
            "point {point:?} lies outside [-π/2, π/2]^{dim}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub dim: usize,
    /// Frequencies satisfy `|k|∞ < cutoff`.
    pub cutoff: usize,
    /// Decay amplitude.
    pub a: f64,
    /// Decay exponent.
    pub alpha: f64,
    /// Constant mean level.
    pub u_bar: f64,
}

impl FieldConfig {
    pub fn new(dim: usize, cutoff: usize, a: f64, alpha: f64, u_bar: f64) -> Result<Self> {
        let config = FieldConfig {
            dim,
            cutoff,
            a,
            alpha,
            u_bar,
        };
        config.validate()?;
        Ok(config)
    }

    /// Two-dimensional experiment: cutoff 10, `a = 4`, `u_bar = 40`, `alpha = 4`.
    pub fn planar_default() -> Self {
        FieldConfig {
            dim: 2,
            cutoff: 10,
            a: 4.0,
            alpha: 4.0,
            u_bar: 40.0,
        }
    }

    /// Three-dimensional experiment: cutoff 5, `a = 1`, `u_bar = 100`, `alpha = 4`.
    pub fn volume_default() -> Self {
        FieldConfig {
            dim: 3,
            cutoff: 5,
            a: 1.0,
            alpha: 4.0,
            u_bar: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        param_count(self.dim, self.cutoff)?;
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::arg(format!(
                "decay amplitude a = {} must be positive",
                self.a
            )));
        }
        if !(self.u_bar.is_finite() && self.u_bar > 0.0) {
            return Err(Error::arg(format!(
                "u_bar = {} must be positive",
                self.u_bar
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > self.dim as f64) {
            return Err(Error::arg(format!(
                "decay exponent alpha = {} must exceed the dimension {}",
                self.alpha, self.dim
            )));
        }
        let floor = self.positivity_floor();
        if floor <= 0.0 {
            return Err(Error::arg(format!(
                "u_bar = {} does not dominate the deviation bound {} (floor {floor})",
                self.u_bar,
                deviation_bound(self)
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        (2 * self.cutoff - 1).pow(self.dim as u32) - 1
    }

    /// Certified lower bound `u_bar - deviation_bound` on every admissible field.
    pub fn positivity_floor(&self) -> f64 {
        self.u_bar - deviation_bound(self)
    }

    /// The half-lattice frequencies in coefficient order.
    pub fn frequencies(&self) -> Vec<Vec<i32>> {
        half_lattice(self.dim, self.cutoff)
    }

    /// `a_k` for each half-lattice frequency, in coefficient order.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.frequencies()
            .iter()
            .map(|k| self.a * (sup_norm(k) as f64).powf(-self.alpha))
            .collect()
    }
}

/// Number of real degrees of freedom, `(2 cutoff - 1)^dim - 1`.
pub fn param_count(dim: usize, cutoff: usize) -> Result<usize> {
    if !(dim == 2 || dim == 3) {
        return Err(Error::arg(format!("dimension {dim} is not 2 or 3")));
    }
    if cutoff < 1 {
        return Err(Error::arg("cutoff must be at least 1"));
    }
    Ok((2 * cutoff - 1).pow(dim as u32) - 1)
}

fn sup_norm(k: &[i32]) -> u32 {
    k.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
}

/// `a |k|∞^(-alpha)`.
pub fn scaled_amplitude(k: &[i32], a: f64, alpha: f64) -> Result<f64> {
    let norm = sup_norm(k);
    if norm == 0 {
        return Err(Error::arg(
            "the zero frequency carries no amplitude; it is the mean u_bar",
        ));
    }
    Ok(a * (norm as f64).powf(-alpha))
}

/// Lexicographically positive frequencies with `0 < |k|∞ < cutoff`, ordered by shell
/// `|k|∞` and lexicographically within a shell.
pub fn half_lattice(dim: usize, cutoff: usize) -> Vec<Vec<i32>> {
    if cutoff < 1 || dim == 0 {
        return Vec::new();
    }
    let r = cutoff as i32 - 1;
    let width = (2 * r + 1) as usize;
    let total = width.pow(dim as u32);
    let mut out: Vec<Vec<i32>> = (0..total)
        .map(|mut flat| {
            let mut k = vec![0i32; dim];
            for c in k.iter_mut().rev() {
                *c = (flat % width) as i32 - r;
                flat /= width;
            }
            k
        })
        .filter(|k| k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0))
        .collect();
    out.sort_by(|x, y| sup_norm(x).cmp(&sup_norm(y)).then_with(|| x.cmp(y)));
    out
}

/// Number of lattice points with `|k|∞ = j` in `Z^dim`.
fn shell_size(dim: usize, j: usize) -> f64 {
    if j == 0 {
        return 1.0;
    }
    ((2 * j + 1).pow(dim as u32) - (2 * j - 1).pow(dim as u32)) as f64
}

/// `Σ_{k ≠ 0, |k|∞ < cutoff} a_k` over the full lattice. Bounds `sup_x |u(x) - u_bar|`
/// for every coefficient vector in the box.
pub fn deviation_bound(config: &FieldConfig) -> f64 {
    (1..config.cutoff)
        .map(|j| shell_size(config.dim, j) * config.a * (j as f64).powf(-config.alpha))
        .sum()
}

/// `Σ_{j < |k|∞ < cutoff} a_k` over the full lattice.
pub fn tail_amplitude_sum(dim: usize, a: f64, alpha: f64, j: usize, cutoff: usize) -> f64 {
    (j + 1..cutoff)
        .map(|s| shell_size(dim, s) * a * (s as f64).powf(-alpha))
        .sum()
}

/// A parameter vector: cosine/sine weight pairs in half-lattice order, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(Error::arg(format!(
                "coefficient {i} = {v} lies outside [-1, 1]"
            )));
        }
        Ok(CoefficientVector(values))
    }

    pub fn for_config(config: &FieldConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != config.param_count() {
            return Err(Error::arg(format!(
                "expected {} coefficients, got {}",
                config.param_count(),
                values.len()
            )));
        }
        Self::new(values)
    }

    pub fn zeros(len: usize) -> Self {
        CoefficientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for CoefficientVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Draws every coefficient independently from `U[-1, 1]`.
pub fn sample_prior<R: Rng + ?Sized>(config: &FieldConfig, rng: &mut R) -> CoefficientVector {
    sample_prior_from(config, || rng.gen_range(-1.0..=1.0))
}

/// Fills a coefficient vector from a stream of `U[-1, 1]` variates.
pub fn sample_prior_from(config: &FieldConfig, mut draw: impl FnMut() -> f64) -> CoefficientVector {
    CoefficientVector(
        (0..config.param_count())
            .map(|_| draw().clamp(-1.0, 1.0))
            .collect(),
    )
}

fn check_coeffs(config: &FieldConfig, coeffs: &[f64]) -> Result<()> {
    if coeffs.len() != config.param_count() {
        return Err(Error::arg(format!(
            "expected {} coefficients, got {}",
            config.param_count(),
            coeffs.len()
        )));
    }
    Ok(())
}

/// Evaluates the field at arbitrary points by direct summation over the basis.
pub fn evaluate_field<P: AsRef<[f64]>>(
    config: &FieldConfig,
    coeffs: &[f64],
    points: &[P],
) -> Result<Vec<f64>> {
    check_coeffs(config, coeffs)?;
    let freqs = config.frequencies();
    let amps = config.amplitudes();
    points
        .iter()
        .map(|p| {
            let x = p.as_ref();
            check_in_domain(x, config.dim)?;
            let dev: f64 = freqs
                .iter()
                .zip(&amps)
                .zip(coeffs.chunks_exact(2))
                .map(|((k, a), pair)| {
                    let theta: f64 = k.iter().zip(x).map(|(&ki, xi)| ki as f64 * xi).sum();
                    a * (pair[0] * theta.cos() + pair[1] * theta.sin())
                })
                .sum();
            Ok(config.u_bar + dev)
        })
        .collect()
}

/// Evaluates fields on a fixed tensor-product point set.
///
/// The basis is separable: `exp(i k·x) = Π_j exp(i k_j x_j)`, so the sum is contracted
/// one axis at a time against per-axis exponential tables. Output is row-major with
/// axis 0 varying slowest.
#[derive(Debug, Clone)]
pub struct FieldEvaluator {
    config: FieldConfig,
    /// `tables[axis][k * P + p] = exp(i (k - r) x_p)` for `k` in `0..2r+1`.
    tables: Vec<Vec<Complex64>>,
    axis_len: Vec<usize>,
    /// Dense positions of half-lattice frequencies and their amplitudes.
    slots: Vec<(usize, f64)>,
}

impl FieldEvaluator {
    pub fn new(config: &FieldConfig, axes: &[Vec<f64>]) -> Result<Self> {
        config.validate()?;
        if axes.len() != config.dim {
            return Err(Error::arg(format!(
                "{} axes supplied for a {}-dimensional field",
                axes.len(),
                config.dim
            )));
        }
        let limit = DOMAIN_HALF_WIDTH * (1.0 + DOMAIN_SLACK);
        if axes
            .iter()
            .flatten()
            .any(|x| !x.is_finite() || x.abs() > limit)
        {
            return Err(Error::arg("grid axis coordinate outside [-π/2, π/2]"));
        }
        let r = config.cutoff as i32 - 1;
        let width = (2 * r + 1) as usize;
        let tables = axes
            .iter()
            .map(|axis| {
                let mut table = Vec::with_capacity(width * axis.len());
                for k in -r..=r {
                    table.extend(
                        axis.iter()
                            .map(|&x| Complex64::from_polar(1.0, k as f64 * x)),
                    );
                }
                table
            })
            .collect();
        let slots = config
            .frequencies()
            .iter()
            .zip(config.amplitudes())
            .map(|(k, a)| {
                let flat = k
                    .iter()
                    .fold(0usize, |acc, &c| acc * width + (c + r) as usize);
                (flat, a)
            })
            .collect();
        Ok(FieldEvaluator {
            config: *config,
            tables,
            axis_len: axes.iter().map(Vec::len).collect(),
            slots,
        })
    }

    pub fn point_count(&self) -> usize {
        self.axis_len.iter().product()
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_coeffs(&self.config, coeffs)?;
        let dim = self.config.dim;
        let width = 2 * self.config.cutoff - 1;
        // u - u_bar = Re Σ a_k (ξ_k - i η_k) exp(i k·x)
        let mut cur = vec![Complex64::new(0.0, 0.0); width.pow(dim as u32)];
        for (&(slot, a), pair) in self.slots.iter().zip(coeffs.chunks_exact(2)) {
            cur[slot] = Complex64::new(a * pair[0], -a * pair[1]);
        }
        let mut inner = 1usize;
        for axis in (0..dim).rev() {
            let outer = width.pow(axis as u32);
            let points = self.axis_len[axis];
            let table = &self.tables[axis];
            let mut next = vec![Complex64::new(0.0, 0.0); outer * points * inner];
            for o in 0..outer {
                for k in 0..width {
                    let src = &cur[(o * width + k) * inner..(o * width + k + 1) * inner];
                    if src.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                        continue;
                    }
                    let row = &table[k * points..(k + 1) * points];
                    for (p, e) in row.iter().enumerate() {
                        let dst = &mut next[(o * points + p) * inner..(o * points + p + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s * e;
                        }
                    }
                }
            }
            cur = next;
            inner *= points;
        }
        Ok(cur.iter().map(|z| self.config.u_bar + z.re).collect())
    }
}

/// `n` equi-spaced coordinates covering `[-π/2, π/2]` including both ends.
pub fn closed_axis(n: usize) -> Vec<f64> {
    assert!(n >= 2, "a closed axis needs at least its two endpoints");
    let step = 2.0 * DOMAIN_HALF_WIDTH / (n - 1) as f64;
    (0..n)
        .map(|i| step * (i as f64 - (n - 1) as f64 / 2.0))
        .collect()
}

/// Convenience wrapper: evaluate on the `p^dim` closed tensor grid.
pub fn evaluate_field_grid(config: &FieldConfig, coeffs: &[f64], p: usize) -> Result<Vec<f64>> {
    let axes = vec![closed_axis(p); config.dim];
    FieldEvaluator::new(config, &axes)?.evaluate(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(2, 10).unwrap(), 360);
        assert_eq!(param_count(2, 1).unwrap(), 0);
        assert_eq!(param_count(3, 5).unwrap(), 728);
        assert!(param_count(4, 3).is_err());
        assert!(param_count(2, 0).is_err());
    }

    #[test]
    fn half_lattice_matches_param_count_and_order() {
        for (dim, cutoff) in [(2, 1), (2, 3), (2, 10), (3, 2), (3, 5)] {
            let h = half_lattice(dim, cutoff);
            assert_eq!(2 * h.len(), param_count(dim, cutoff).unwrap());
            for pair in h.windows(2) {
                let key = |k: &Vec<i32>| (sup_norm(k), k.clone());
                assert!(key(&pair[0]) < key(&pair[1]));
            }
            // exactly one of k and -k is present
            for k in &h {
                let neg: Vec<i32> = k.iter().map(|c| -c).collect();
                assert!(!h.contains(&neg));
            }
        }
        assert_eq!(
            half_lattice(2, 2),
            vec![vec![0, 1], vec![1, -1], vec![1, 0], vec![1, 1]]
        );
    }

    #[test]
    fn scaled_amplitude_examples() {
        assert_eq!(scaled_amplitude(&[1, 0], 4.0, 4.0).unwrap(), 4.0);
        assert_eq!(scaled_amplitude(&[2, 1], 4.0, 4.0).unwrap(), 0.25);
        assert_eq!(scaled_amplitude(&[1, 1, 1], 1.0, 4.0).unwrap(), 1.0);
        assert!(scaled_amplitude(&[0, 0], 4.0, 4.0).is_err());
    }

    /// Brute-force lattice enumeration, independent of the shell-count formula.
    fn deviation_bound_oracle(config: &FieldConfig) -> f64 {
        let r = config.cutoff as i32 - 1;
        let mut total = 0.0;
        let mut k = vec![-r; config.dim];
        loop {
            if k.iter().any(|&c| c != 0) {
                total += scaled_amplitude(&k, config.a, config.alpha).unwrap();
            }
            let mut axis = 0;
            loop {
                if axis == config.dim {
                    return total;
                }
                k[axis] += 1;
                if k[axis] <= r {
                    break;
                }
                k[axis] = -r;
                axis += 1;
            }
        }
    }

    #[test]
    fn deviation_bound_examples() {
        let planar = FieldConfig::planar_default();
        // 32 Σ_{j=1..9} j^-3
        let expected = 32.0 * (1..=9).map(|j| (j as f64).powi(-3)).sum::<f64>();
        assert!((deviation_bound(&planar) - expected).abs() < 1e-12);
        assert!((deviation_bound(&planar) - 38.289_02).abs() < 1e-4);
        assert!((planar.positivity_floor() - 1.710_98).abs() < 1e-4);
        assert!((deviation_bound(&planar) - deviation_bound_oracle(&planar)).abs() < 1e-10);

        let volume = FieldConfig::volume_default();
        let expected = (1..=4)
            .map(|j| (24.0 * (j * j) as f64 + 2.0) * (j as f64).powi(-4))
            .sum::<f64>();
        assert!((deviation_bound(&volume) - expected).abs() < 1e-12);
        assert!((deviation_bound(&volume) - 36.32).abs() < 5e-3);
        assert!((volume.positivity_floor() - 63.68).abs() < 5e-3);
        assert!((deviation_bound(&volume) - deviation_bound_oracle(&volume)).abs() < 1e-10);

        let trivial = FieldConfig {
            cutoff: 1,
            ..FieldConfig::planar_default()
        };
        assert_eq!(deviation_bound(&trivial), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(FieldConfig::planar_default().validate().is_ok());
        assert!(FieldConfig::volume_default().validate().is_ok());
        // alpha = 3 in 2D: bound ≈ 49.3 exceeds u_bar = 40
        let weak_decay = FieldConfig {
            alpha: 3.0,
            ..FieldConfig::planar_default()
        };
        assert!(deviation_bound(&weak_decay) > 49.0);
        assert!(weak_decay.validate().is_err());
        let not_steep = FieldConfig {
            alpha: 2.0,
            u_bar: 1e6,
            ..FieldConfig::planar_default()
        };
        assert!(not_steep.validate().is_err());
    }

    #[test]
    fn degenerate_stream_fills_constant() {
        let c = sample_prior_from(&FieldConfig::planar_default(), || 0.5);
        assert_eq!(c.len(), 360);
        assert!(c.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn prior_moments() {
        let config = FieldConfig {
            cutoff: 2,
            ..FieldConfig::planar_default()
        };
        let mut rng = stream(1, Purpose::Prior, 0, 0);
        let n = 100_000;
        let d = config.param_count();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..n {
            let c = sample_prior(&config, &mut rng);
            for (j, v) in c.as_slice().iter().enumerate() {
                assert!((-1.0..=1.0).contains(v));
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.01, "mean {mean}");
            assert!((var - 1.0 / 3.0).abs() < 0.01, "var {var}");
        }
    }

    #[test]
    fn evaluate_simple_fields() {
        let config = FieldConfig::planar_default();
        let zeros = vec![0.0; 360];
        let pts = vec![vec![0.3, -1.2], vec![1.5, 1.5], vec![-FRAC_PI_2, FRAC_PI_2]];
        for v in evaluate_field(&config, &zeros, &pts).unwrap() {
            assert_eq!(v, 40.0);
        }
        // ξ for k = (1, 0): (0,1) is first, then (1,-1), then (1,0) -> index 4
        let freqs = config.frequencies();
        let idx = freqs.iter().position(|k| k == &vec![1, 0]).unwrap();
        let mut single = zeros.clone();
        single[2 * idx] = 1.0;
        for (p, v) in pts
            .iter()
            .zip(evaluate_field(&config, &single, &pts).unwrap())
        {
            assert!((v - (40.0 + 4.0 * p[0].cos())).abs() < 1e-12);
        }
        assert!(evaluate_field(&config, &zeros, &[vec![2.0, 0.0]]).is_err());
        assert!(evaluate_field(&config, &zeros[..10], &pts).is_err());
    }

    #[test]
    fn grid_path_matches_direct_summation_500() {
        let config = FieldConfig::planar_default();
        let coeffs = sample_prior(&config, &mut stream(3, Purpose::Prior, 0, 0));
        let axis = closed_axis(500);
        let fast = evaluate_field_grid(&config, coeffs.as_slice(), 500).unwrap();
        let points: Vec<[f64; 2]> = axis
            .iter()
            .flat_map(|&x| axis.iter().map(move |&y| [x, y]))
            .collect();
        let direct = evaluate_field(&config, coeffs.as_slice(), &points).unwrap();
        for (f, d) in fast.iter().zip(&direct) {
            assert!(((f - d) / d).abs() < 1e-12, "{f} vs {d}");
        }
    }

    #[test]
    fn grid_path_matches_direct_summation_3d() {
        let config = FieldConfig::volume_default();
        let coeffs = sample_prior(&config, &mut stream(4, Purpose::Prior, 0, 0));
        let axes = vec![closed_axis(7), closed_axis(5), closed_axis(6)];
        let fast = FieldEvaluator::new(&config, &axes)
            .unwrap()
            .evaluate(coeffs.as_slice())
            .unwrap();
        let mut points = Vec::new();
        for &x in &axes[0] {
            for &y in &axes[1] {
                for &z in &axes[2] {
                    points.push([x, y, z]);
                }
            }
        }
        let direct = evaluate_field(&config, coeffs.as_slice(), &points).unwrap();
        for (f, d) in fast.iter().zip(&direct) {
            assert!(((f - d) / d).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_decay_slope() {
        // tails over the untruncated lattice, approximated with a far cutoff
        for (dim, alpha) in [(2usize, 4.0f64), (3, 4.0), (2, 3.5)] {
            // far enough out that the shell counts follow their leading power
            let js: Vec<f64> = (1..10).map(|j| (20.0 * j as f64).ln()).collect();
            let tails: Vec<f64> = (1..10)
                .map(|j| 20 * j)
                .map(|j| tail_amplitude_sum(dim, 1.0, alpha, j, 20_000).ln())
                .collect();
            let n = js.len() as f64;
            let mx = js.iter().sum::<f64>() / n;
            let my = tails.iter().sum::<f64>() / n;
            let sxy: f64 = js
                .iter()
                .zip(&tails)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum();
            let sxx: f64 = js.iter().map(|x| (x - mx).powi(2)).sum();
            let slope = sxy / sxx;
            let expected = -(alpha - dim as f64);
            assert!(
                (slope - expected).abs() < 0.3,
                "dim {dim}: slope {slope} vs {expected}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn evaluation_is_affine_in_coefficients(
            seed in any::<u64>(),
            x in -FRAC_PI_2..FRAC_PI_2,
            y in -FRAC_PI_2..FRAC_PI_2,
        ) {
            let config = FieldConfig { cutoff: 4, ..FieldConfig::planar_default() };
            let mut rng = stream(seed, Purpose::Prior, 0, 0);
            let c1 = sample_prior(&config, &mut rng).into_inner();
            let c2 = sample_prior(&config, &mut rng).into_inner();
            let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
            let pt = [[x, y]];
            let u1 = evaluate_field(&config, &c1, &pt).unwrap()[0];
            let u2 = evaluate_field(&config, &c2, &pt).unwrap()[0];
            let us = evaluate_field(&config, &sum, &pt).unwrap()[0];
            prop_assert!((us - (u1 + u2 - config.u_bar)).abs() < 1e-12 * us.abs().max(1.0));
        }

        #[test]
        fn fields_respect_positivity_floor(seed in any::<u64>()) {
            let config = FieldConfig::planar_default();
            let mut rng = stream(seed, Purpose::Prior, 1, 0);
            let coeffs = sample_prior(&config, &mut rng);
            let pts: Vec<[f64; 2]> = (0..50)
                .map(|_| [rng.gen_range(-FRAC_PI_2..=FRAC_PI_2), rng.gen_range(-FRAC_PI_2..=FRAC_PI_2)])
                .collect();
            let floor = config.positivity_floor();
            for v in evaluate_field(&config, coeffs.as_slice(), &pts).unwrap() {
                prop_assert!(v >= floor && floor > 0.0);
            }
        }
    }

    #[test]
    fn extreme_coefficients_stay_above_floor() {
        // all cosine weights +1 / -1 reach the bound at x = 0
        let config = FieldConfig::planar_default();
        let mut coeffs = vec![0.0; 360];
        for pair in coeffs.chunks_exact_mut(2) {
            pair[0] = -1.0;
        }
        let at_origin = evaluate_field(&config, &coeffs, &[[0.0, 0.0]]).unwrap()[0];
        assert!(at_origin >= config.positivity_floor() - 1e-12);
        // the half-lattice reaches half the full-lattice bound at the origin
        assert!((config.u_bar - at_origin - deviation_bound(&config) / 2.0).abs() < 1e-10);
    }
}
