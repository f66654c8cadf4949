//! Run configuration files.
//!
//! A config names a preset and/or gives a `[scenario]` table; keys in the
//! table override the preset field by field (nested tables merge, other
//! values replace). Without a preset the table must be a complete scenario.
//!
//! ```toml
//! preset = "test_5_2_2"
//! alphas = [0.8, 1.0]
//! out_dir = "out/gaussians"
//!
//! [scenario]
//! nx = 80
//! nt = 80
//!
//! [solver]
//! sigma_m = 1.9
//! sigma_phi = 0.5
//! density_step = "semi_implicit"
//!
//! [output]
//! heatmaps = true
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fracot::presets::{preset, DensitySource, Scenario};
use fracot::SolverConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputToggles {
    pub snapshots: bool,
    pub heatmaps: bool,
    pub report: bool,
}

impl Default for OutputToggles {
    fn default() -> Self {
        OutputToggles {
            snapshots: true,
            heatmaps: false,
            report: true,
        }
    }
}

/// Settings for `convergence`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub sizes: Vec<usize>,
    /// Size of the fine reference grid used for fractional orders.
    pub reference_n: usize,
    /// Defaults to `<out>/reference_cache`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sizes: vec![8, 10, 20, 25],
            reference_n: 100,
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub scenario: Option<toml::Table>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputToggles,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_alphas() -> Vec<f64> {
    vec![1.0]
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads and checks a config. Relative image paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<(Self, Scenario)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let scenario = cfg
            .scenario(base)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok((cfg, scenario))
    }

    /// The resolved scenario, after checking orders and solver settings.
    pub fn scenario(&self, base: &Path) -> Result<Scenario> {
        if self.alphas.is_empty() {
            bail!("alphas: at least one order is required");
        }
        for (k, &a) in self.alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                bail!("alphas[{k}]: order {a} is outside (0, 1]");
            }
        }
        self.solver.validate().context("solver")?;

        let merged = match (&self.preset, &self.scenario) {
            (Some(name), table) => {
                let base = preset(name).context("preset")?;
                let mut value = toml::Value::try_from(&base)?;
                if let Some(t) = table {
                    merge(&mut value, toml::Value::Table(t.clone()));
                }
                value
            }
            (None, Some(t)) => toml::Value::Table(t.clone()),
            (None, None) => bail!("preset: give a preset name or a [scenario] table"),
        };
        let mut scenario: Scenario = merged.try_into().context("scenario")?;
        for source in [&mut scenario.rho0, &mut scenario.rho1] {
            if let DensitySource::Image { path, .. } = source {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        scenario.grid().context("scenario")?;
        Ok(scenario)
    }
}

/// Deep merge; a table whose `kind` changes is replaced rather than merged.
fn merge(into: &mut toml::Value, from: toml::Value) {
    match (into, from) {
        (toml::Value::Table(a), toml::Value::Table(b))
            if b.get("kind").is_none() || a.get("kind") == b.get("kind") =>
        {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = RunConfig::parse(
            r#"
            preset = "obstacle"
            [scenario]
            nx = 16
            preference = { gate = [0.0, 0.3] }
            "#,
        )
        .unwrap();
        let s = cfg.scenario(Path::new(".")).unwrap();
        assert_eq!((s.nx, s.ny), (16, 32));
        assert_eq!(s.lambda_q, 8.0e4);
        match s.preference {
            fracot::presets::PreferenceSource::Gate { gate, wall_y, .. } => {
                assert_eq!(gate, [0.0, 0.3]);
                assert_eq!(wall_y, 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn changing_the_source_kind_replaces_its_fields() {
        let cfg = RunConfig::parse(
            r#"
            preset = "image_ot"
            [scenario.rho0]
            kind = "uniform"
            "#,
        )
        .unwrap();
        let s = cfg.scenario(Path::new(".")).unwrap();
        assert_eq!(s.rho0, DensitySource::Uniform);
        assert!(matches!(s.rho1, DensitySource::Image { .. }));
    }

    #[test]
    fn misspelled_source_fields_are_rejected() {
        let cfg = RunConfig::parse(
            "preset = \"test_5_2_2\"\n[scenario.rho0]\nstdev = 0.2\n",
        )
        .unwrap();
        let msg = format!("{:#}", cfg.scenario(Path::new(".")).unwrap_err());
        assert!(msg.contains("stdev"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_reported_with_location() {
        let err = RunConfig::parse("preset = \"convergence\"\n[solver]\nsigma = 1.0\n").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("sigma"), "{msg}");
    }

    #[test]
    fn bad_order_names_its_position() {
        let cfg = RunConfig::parse("preset = \"convergence\"\nalphas = [0.5, 1.5]").unwrap();
        let msg = format!("{:#}", cfg.scenario(Path::new(".")).unwrap_err());
        assert!(msg.contains("alphas[1]"), "{msg}");
    }

    #[test]
    fn relative_image_paths_follow_the_config() {
        let cfg = RunConfig::parse(
            r#"
            preset = "image_ot"
            [scenario]
            rho0 = { kind = "image", path = "a.pgm" }
            rho1 = { kind = "image", path = "/abs/b.pgm" }
            "#,
        )
        .unwrap();
        let s = cfg.scenario(Path::new("/cfg")).unwrap();
        assert_eq!(
            s.rho0,
            DensitySource::Image {
                path: "/cfg/a.pgm".into(),
                invert: false
            }
        );
        assert_eq!(
            s.rho1,
            DensitySource::Image {
                path: "/abs/b.pgm".into(),
                invert: false
            }
        );
    }
}
