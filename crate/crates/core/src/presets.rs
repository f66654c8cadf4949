//! Named experiment setups: the 1-D convergence and Gaussian tests, 2-D
//! transport, the gated obstacle and image morphing.
//!
//! A [`Scenario`] is plain data (serializable, overridable field by field);
//! [`Scenario::build`] turns it into a [`ProblemSpec`] for a given order.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::energy::{cell_mass, InteractionSpec, Regularizer, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{Extents, GridSpec};
use crate::pgm::read_pgm;
use crate::problems::{
    affine_density, gaussian_density, image_density, image_preference, obstacle_field,
    uniform_density, ProblemSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySource {
    /// `x + 1/2`, for 1-D grids on `[0, 1]`.
    Affine,
    Uniform,
    Gaussian { mean: [f64; 2], stddev: f64 },
    Image {
        path: PathBuf,
        #[serde(default)]
        invert: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreferenceSource {
    #[default]
    None,
    /// Horizontal wall `|y - wall_y| <= half_thickness` with an opening for
    /// `x` strictly inside `gate`.
    Gate {
        wall_y: f64,
        half_thickness: f64,
        gate: [f64; 2],
    },
    /// `0` where either endpoint image is nonzero, `1` elsewhere. Requires
    /// image endpoints.
    ImageSupport,
}

impl PreferenceSource {
    /// Membership test for obstacle-type preferences.
    pub fn blocks(&self, x: f64, y: f64) -> bool {
        match *self {
            PreferenceSource::Gate {
                wall_y,
                half_thickness,
                gate,
            } => (y - wall_y).abs() <= half_thickness && !(x > gate[0] && x < gate[1]),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub extents: Extents<f64>,
    pub nx: usize,
    /// `1` selects the 1-D model.
    pub ny: usize,
    pub nt: usize,
    pub rho0: DensitySource,
    pub rho1: DensitySource,
    #[serde(default)]
    pub lambda_r: f64,
    #[serde(default)]
    pub lambda_q: f64,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub preference: PreferenceSource,
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "convergence",
    "test_5_2_1",
    "test_5_2_2",
    "test_5_2_3",
    "ot_2d",
    "obstacle",
    "obstacle_diagonal",
    "image_ot",
    "image_mfp",
];


fn gaussian(mx: f64, my: f64, stddev: f64) -> DensitySource {
    DensitySource::Gaussian {
        mean: [mx, my],
        stddev,
    }
}

fn image_placeholder(which: &str) -> DensitySource {
    DensitySource::Image {
        path: PathBuf::from(which),
        invert: false,
    }
}

fn base(name: &str, n: usize, rho0: DensitySource, rho1: DensitySource) -> Scenario {
    Scenario {
        name: name.to_string(),
        extents: Extents::unit(),
        nx: n,
        ny: 1,
        nt: n,
        rho0,
        rho1,
        lambda_r: 0.0,
        lambda_q: 0.0,
        regularizer: Regularizer::None,
        preference: PreferenceSource::None,
    }
}

/// The named setup. Image presets carry placeholder paths (`rho0.pgm`,
/// `rho1.pgm`) to be replaced by the caller.
pub fn preset(name: &str) -> Result<Scenario> {
    let s = match name {
        "convergence" => base(name, 20, DensitySource::Affine, DensitySource::Uniform),
        "test_5_2_1" => base(name, 40, DensitySource::Affine, DensitySource::Uniform),
        "test_5_2_2" => base(name, 40, gaussian(0.3, 0.0, 0.1), gaussian(0.7, 0.0, 0.1)),
        "test_5_2_3" => base(name, 40, gaussian(0.25, 0.0, 0.08), gaussian(0.75, 0.0, 0.08)),
        "ot_2d" => Scenario {
            ny: 32,
            ..base(name, 32, gaussian(0.3, 0.3, 0.1), gaussian(0.7, 0.7, 0.1))
        },
        "obstacle" | "obstacle_diagonal" => {
            let target = if name == "obstacle" { -0.3 } else { 0.3 };
            Scenario {
                extents: Extents::square(-0.5, 0.5, 1.0),
                ny: 32,
                lambda_q: 8.0e4,
                preference: PreferenceSource::Gate {
                    wall_y: 0.0,
                    half_thickness: 0.05,
                    gate: [0.05, 0.2],
                },
                ..base(name, 32, gaussian(-0.3, 0.3, 0.07), gaussian(target, -0.3, 0.07))
            }
        }
        "image_ot" => Scenario {
            ny: 64,
            ..base(name, 64, image_placeholder("rho0.pgm"), image_placeholder("rho1.pgm"))
        },
        "image_mfp" => Scenario {
            ny: 64,
            lambda_r: 0.01,
            lambda_q: 0.1,
            regularizer: Regularizer::Quadratic,
            preference: PreferenceSource::ImageSupport,
            ..base(name, 64, image_placeholder("rho0.pgm"), image_placeholder("rho1.pgm"))
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(s)
}

impl Scenario {
    pub fn grid(&self) -> Result<GridSpec<f64>> {
        GridSpec::new(self.nx, self.ny, self.nt, self.extents)
    }

    /// Problem of order `alpha`. Endpoint densities are set to the floor
    /// inside obstacles and scaled to unit mass, then the terminal density is
    /// rescaled to the initial mass.
    pub fn build(&self, alpha: f64) -> Result<ProblemSpec<f64>> {
        let grid = self.grid()?;
        let mut rho0 = sample(&grid, &self.rho0)?;
        let mut rho1 = sample(&grid, &self.rho1)?;
        // endpoint mass inside an obstacle could never leave or arrive
        let blocked = self.obstacle_sites()?;
        if !blocked.is_empty() {
            for rho in [&mut rho0, &mut rho1] {
                for &k in &blocked {
                    rho[k] = DENSITY_FLOOR;
                }
                let mass = cell_mass(&grid, rho);
                rho.iter_mut().for_each(|v| *v /= mass);
            }
        }
        let preference = match &self.preference {
            PreferenceSource::None => vec![0.0; grid.sites()],
            gate @ PreferenceSource::Gate { .. } => obstacle_field(&grid, |x, y| gate.blocks(x, y)),
            PreferenceSource::ImageSupport => match (&self.rho0, &self.rho1) {
                (
                    DensitySource::Image { path: a, invert },
                    DensitySource::Image { path: b, .. },
                ) => image_preference(&read_pgm(a)?, &read_pgm(b)?, &grid, *invert)?,
                _ => {
                    return Err(Error::InvalidConfig(
                        "image_support preference needs image endpoints".into(),
                    ))
                }
            },
        };
        let interaction = InteractionSpec {
            lambda_r: self.lambda_r,
            lambda_q: self.lambda_q,
            regularizer: self.regularizer,
            preference,
        };
        ProblemSpec::balanced(grid, alpha, rho0, rho1, interaction)
    }

    /// Cells (flat site indices) flagged by an obstacle preference.
    pub fn obstacle_sites(&self) -> Result<Vec<usize>> {
        let grid = self.grid()?;
        let mut out = Vec::new();
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                if self.preference.blocks(grid.x_center(i), grid.y_center(j)) {
                    out.push(j * grid.nx() + i);
                }
            }
        }
        Ok(out)
    }
}

fn sample(grid: &GridSpec<f64>, source: &DensitySource) -> Result<Vec<f64>> {
    match source {
        DensitySource::Affine => {
            let e = grid.extents();
            if !grid.is_1d() || e.x_lo != 0.0 || e.x_hi != 1.0 {
                return Err(Error::InvalidConfig(
                    "the affine density is defined on the 1-D unit interval".into(),
                ));
            }
            Ok(affine_density(grid))
        }
        DensitySource::Uniform => Ok(uniform_density(grid)),
        DensitySource::Gaussian { mean, stddev } => gaussian_density(grid, *mean, *stddev),
        DensitySource::Image { path, invert } => image_density(&read_pgm(path)?, grid, *invert),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for name in PRESET_NAMES {
            assert_eq!(preset(name).unwrap().name, *name);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn gate_geometry() {
        let g = preset("obstacle").unwrap().preference;
        assert!(g.blocks(-0.3, 0.0));
        assert!(g.blocks(0.3, 0.04));
        assert!(!g.blocks(0.1, 0.0));
        assert!(!g.blocks(-0.3, 0.2));
    }

    #[test]
    fn obstacle_builds_with_indicator() {
        let s = preset("obstacle").unwrap();
        let p = s.build(1.0).unwrap();
        let sites = s.obstacle_sites().unwrap();
        assert!(!sites.is_empty());
        for (k, &q) in p.interaction.preference.iter().enumerate() {
            assert_eq!(q == 1.0, sites.contains(&k));
        }
    }

    #[test]
    fn affine_needs_unit_interval() {
        let mut s = preset("test_5_2_1").unwrap();
        s.ny = 4;
        assert!(s.build(1.0).is_err());
    }

    #[test]
    fn scenario_round_trips_through_json() {
        let s = preset("image_mfp").unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    }
}
