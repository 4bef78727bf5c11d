//! Experiment configuration: one TOML document per experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use darcy_smc::field::FieldConfig;
use darcy_smc::pde::{Grid, PointSource, SourceSpec};
use darcy_smc::smc::{Resampling, Schedule, SmcConfig};
use darcy_smc::validation::Norm;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub points: Vec<PointSource>,
    /// Mollification width in cells of the sampler grid.
    pub width_cells: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    /// Points per axis; `0` runs without data.
    pub layout: usize,
    pub sigma2: f64,
    /// Observation counts of the consistency sweep, each a perfect `dim`-th power.
    pub sweep_counts: Vec<usize>,
    /// Independent SMC runs per observation count in the sweep.
    #[serde(default = "one")]
    pub sweep_replicates: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSection {
    pub radius: f64,
    pub norm: Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Interior nodes per axis of the sampler grid; data use the refined grid.
    pub grid_n: usize,
    /// Points per axis of rendered fields and field CSVs.
    pub render_points: usize,
    pub field: FieldConfig,
    pub source: SourceSection,
    pub observations: ObservationSection,
    pub smc: SmcConfig,
    pub ball: BallSection,
}

fn quarter_sources(dim: usize, strength: f64) -> Vec<PointSource> {
    // alternating-sign sources at the corners of the centred half-size cube
    let q = std::f64::consts::FRAC_PI_4;
    (0..1usize << dim)
        .map(|corner| {
            let location: Vec<f64> = (0..dim)
                .map(|a| if corner >> a & 1 == 1 { q } else { -q })
                .collect();
            let sign = if corner.count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            PointSource {
                location,
                strength: sign * strength,
            }
        })
        .collect()
}

impl RunConfig {
    /// Reduced 2D experiment that runs in minutes on a desktop.
    pub fn desk() -> Self {
        RunConfig {
            seed: 20_170_101,
            grid_n: 10,
            render_points: 500,
            field: FieldConfig {
                cutoff: 6,
                ..FieldConfig::planar_default()
            },
            source: SourceSection {
                points: vec![PointSource {
                    location: vec![0.0, 0.0],
                    strength: 12.0,
                }],
                width_cells: 2.0,
            },
            observations: ObservationSection {
                layout: 10,
                sigma2: 5e-7,
                sweep_counts: vec![4, 16, 36, 64, 100],
                sweep_replicates: 4,
            },
            smc: SmcConfig {
                particles: 1000,
                target_ess: 600.0,
                rho0: 1.0,
                m_global: 8.0,
                step_bounds: (5, 1000),
                resampling: Resampling::Multinomial,
                schedule: Schedule::Adaptive,
            },
            ball: BallSection {
                radius: 0.65 * 120.0,
                norm: Norm::L1,
            },
        }
    }

    /// The full-size 2D experiment.
    pub fn planar() -> Self {
        let mut c = Self::desk();
        c.field = FieldConfig::planar_default();
        c.ball.radius = 0.65 * 360.0;
        c
    }

    /// The full-size 3D experiment.
    pub fn volume() -> Self {
        RunConfig {
            grid_n: 10,
            render_points: 100,
            field: FieldConfig::volume_default(),
            source: SourceSection {
                points: quarter_sources(3, 50.0),
                width_cells: 2.0,
            },
            observations: ObservationSection {
                layout: 5,
                sigma2: 1e-8,
                sweep_counts: vec![8, 27, 64, 125],
                sweep_replicates: 1,
            },
            smc: SmcConfig {
                step_bounds: (5, 200),
                ..Self::desk().smc
            },
            ball: BallSection {
                radius: 0.65 * 728.0,
                norm: Norm::L1,
            },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "desk" => Ok(Self::desk()),
            "planar" => Ok(Self::planar()),
            "volume" => Ok(Self::volume()),
            other => Err(CliError::Config(format!(
                "unknown preset {other:?} (expected desk, planar or volume)"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(Grid::new(self.field.dim, self.grid_n)?)
    }

    pub fn source(&self) -> Result<SourceSpec, CliError> {
        let grid = self.grid()?;
        Ok(SourceSpec {
            sources: self.source.points.clone(),
            width: self.source.width_cells * grid.spacing(),
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.field.validate()?;
        let grid = self.grid()?;
        if !(self.source.width_cells.is_finite() && self.source.width_cells > 0.0) {
            return bad(format!(
                "source width {} must be positive",
                self.source.width_cells
            ));
        }
        self.source()?.validate(grid.dim)?;
        if !(self.observations.sigma2.is_finite() && self.observations.sigma2 > 0.0) {
            return bad(format!(
                "sigma2 {} must be positive",
                self.observations.sigma2
            ));
        }
        if self.observations.sweep_replicates == 0 {
            return bad("sweep_replicates must be at least 1".into());
        }
        for &count in &self.observations.sweep_counts {
            sweep_layout(count, self.field.dim)?;
        }
        if self.render_points < 2 {
            return bad("render_points must be at least 2".into());
        }
        self.smc.validate()?;
        let has_data = self.observations.layout > 0;
        if has_data
            && matches!(self.smc.schedule, Schedule::Adaptive)
            && self.smc.target_ess >= self.smc.particles as f64
        {
            return bad(format!(
                "target ESS {} must be below the particle count {} when there are observations",
                self.smc.target_ess, self.smc.particles
            ));
        }
        if !(self.ball.radius.is_finite() && self.ball.radius > 0.0) {
            return bad(format!("ball radius {} must be positive", self.ball.radius));
        }
        Ok(())
    }

    pub fn metadata(&self) -> darcy_smc::io::Metadata {
        darcy_smc::io::meta(&[
            ("config_hash", self.hash()),
            ("seed", self.seed.to_string()),
        ])
    }
}

/// Points per axis for an observation count that must be a perfect `dim`-th power.
pub fn sweep_layout(count: usize, dim: usize) -> Result<usize, CliError> {
    let root = (count as f64).powf(1.0 / dim as f64).round() as usize;
    if count == 0 || root.pow(dim as u32) != count {
        return Err(CliError::Config(format!(
            "observation count {count} is not a perfect power of {dim}"
        )));
    }
    Ok(root)
}
