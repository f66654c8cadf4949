//! Problem data: endpoint densities, preference fields and the closed-form
//! integer-order transport solution used as an accuracy oracle.

use serde::{Deserialize, Serialize};

use crate::energy::{cell_mass, InteractionSpec, DENSITY_FLOOR};
use crate::error::{check_len, Error, Result};
use crate::grid::GridSpec;
use crate::pgm::GrayImage;
use crate::scalar::Real;

/// Relative tolerance on the mass mismatch between the endpoint densities.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A transport or planning problem on a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec<T> {
    pub grid: GridSpec<T>,
    pub alpha: T,
    pub rho0: Vec<T>,
    pub rho1: Vec<T>,
    pub interaction: InteractionSpec<T>,
}

impl<T: Real> ProblemSpec<T> {
    /// Builds and validates a problem. `rho1` is not rescaled here; see
    /// [`balance_masses`].
    pub fn new(
        grid: GridSpec<T>,
        alpha: T,
        rho0: Vec<T>,
        rho1: Vec<T>,
        interaction: InteractionSpec<T>,
    ) -> Result<Self> {
        let spec = Self {
            grid,
            alpha,
            rho0,
            rho1,
            interaction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(Error::InvalidAlpha(self.alpha.as_f64()));
        }
        let sites = self.grid.sites();
        check_len("initial density", sites, self.rho0.len())?;
        check_len("terminal density", sites, self.rho1.len())?;
        // densities produced by the samplers sit exactly on the floor, so
        // compare with a little slack for the normalisation roundoff
        let floor = T::lit(DENSITY_FLOOR * (1.0 - 1e-6));
        for (name, rho) in [("initial", &self.rho0), ("terminal", &self.rho1)] {
            if let Some((s, v)) = rho.iter().enumerate().find(|(_, v)| !(**v >= floor)) {
                return Err(Error::InvalidProblem(format!(
                    "{name} density {v} at site {s} is below the floor {DENSITY_FLOOR:e}"
                )));
            }
        }
        let m0 = cell_mass(&self.grid, &self.rho0).as_f64();
        let m1 = cell_mass(&self.grid, &self.rho1).as_f64();
        if !(m0 > 0.0) {
            return Err(Error::ZeroMass(m0));
        }
        if (m0 - m1).abs() > MASS_TOLERANCE * m0 {
            return Err(Error::InvalidProblem(format!(
                "endpoint masses differ: {m0} vs {m1}"
            )));
        }
        self.interaction.validate(&self.grid)
    }

    /// The same problem run from `rho1` back to `rho0`.
    pub fn reversed(&self) -> Self {
        Self {
            rho0: self.rho1.clone(),
            rho1: self.rho0.clone(),
            ..self.clone()
        }
    }

    /// Builds a problem after rescaling `rho1` to the mass of `rho0`.
    pub fn balanced(
        grid: GridSpec<T>,
        alpha: T,
        rho0: Vec<T>,
        rho1: Vec<T>,
        interaction: InteractionSpec<T>,
    ) -> Result<Self> {
        let rho1 = balance_masses(&grid, &rho0, &rho1)?;
        Self::new(grid, alpha, rho0, rho1, interaction)
    }
}

/// `x + 1/2` at the cell centres (constant in `y`).
pub fn affine_density<T: Real>(grid: &GridSpec<T>) -> Vec<T> {
    let half = T::lit(0.5);
    (0..grid.ny())
        .flat_map(|_| (0..grid.nx()).map(|i| (grid.x_center(i) + half).max(T::lit(DENSITY_FLOOR))))
        .collect()
}

/// Uniform density of unit mass.
pub fn uniform_density<T: Real>(grid: &GridSpec<T>) -> Vec<T> {
    let area = grid.cell_area() * T::count(grid.sites());
    vec![area.recip(); grid.sites()]
}

/// Gaussian bump at the cell centres, floored and scaled to unit mass.
///
/// On a 1-D grid only `mean[0]` is used.
pub fn gaussian_density<T: Real>(grid: &GridSpec<T>, mean: [T; 2], stddev: T) -> Result<Vec<T>> {
    if !(stddev > T::zero() && stddev.is_finite()) {
        return Err(Error::InvalidProblem(format!(
            "standard deviation must be positive, got {stddev}"
        )));
    }
    let two_var = T::lit(2.0) * stddev * stddev;
    let one_d = grid.is_1d();
    let mut out = Vec::with_capacity(grid.sites());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let dx = grid.x_center(i) - mean[0];
            let mut r2 = dx * dx;
            if !one_d {
                let dy = grid.y_center(j) - mean[1];
                r2 += dy * dy;
            }
            out.push((-r2 / two_var).exp().max(T::lit(DENSITY_FLOOR)));
        }
    }
    normalize(grid, &mut out)?;
    Ok(out)
}

/// Grayscale image as density: pixel row `r` is grid row `j = r`, column `c`
/// is `i = c`. Intensities are `value / maxval` (or `1 - value / maxval`
/// when `invert`), floored and scaled to unit mass.
pub fn image_density<T: Real>(image: &GrayImage, grid: &GridSpec<T>, invert: bool) -> Result<Vec<T>> {
    check_image(image, grid)?;
    let mut out: Vec<T> = image_intensity(image, invert)
        .into_iter()
        .map(|v| T::lit(v).max(T::lit(DENSITY_FLOOR)))
        .collect();
    normalize(grid, &mut out)?;
    Ok(out)
}

fn check_image<T: Real>(image: &GrayImage, grid: &GridSpec<T>) -> Result<()> {
    if image.width != grid.nx() || image.height != grid.ny() {
        return Err(Error::ImageDimension {
            want_w: grid.nx(),
            want_h: grid.ny(),
            got_w: image.width,
            got_h: image.height,
        });
    }
    Ok(())
}

fn image_intensity(image: &GrayImage, invert: bool) -> Vec<f64> {
    let max = f64::from(image.maxval);
    image
        .pixels
        .iter()
        .map(|&v| {
            let x = f64::from(v) / max;
            if invert {
                1.0 - x
            } else {
                x
            }
        })
        .collect()
}

/// Preference for image problems: `0` where either endpoint image carries
/// mass, `1` elsewhere.
pub fn image_preference<T: Real>(
    first: &GrayImage,
    second: &GrayImage,
    grid: &GridSpec<T>,
    invert: bool,
) -> Result<Vec<T>> {
    check_image(first, grid)?;
    check_image(second, grid)?;
    let a = image_intensity(first, invert);
    let b = image_intensity(second, invert);
    Ok(a
        .iter()
        .zip(&b)
        .map(|(&u, &v)| if u != 0.0 || v != 0.0 { T::zero() } else { T::one() })
        .collect())
}

/// Indicator of the cells whose centres satisfy `inside`.
pub fn obstacle_field<T: Real>(grid: &GridSpec<T>, inside: impl Fn(T, T) -> bool) -> Vec<T> {
    let mut out = Vec::with_capacity(grid.sites());
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let hit = inside(grid.x_center(i), grid.y_center(j));
            out.push(if hit { T::one() } else { T::zero() });
        }
    }
    out
}

fn normalize<T: Real>(grid: &GridSpec<T>, rho: &mut [T]) -> Result<()> {
    let mass = cell_mass(grid, rho);
    if !(mass > T::zero() && mass.is_finite()) {
        return Err(Error::ZeroMass(mass.as_f64()));
    }
    rho.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

/// `rho1` rescaled to the mass of `rho0`.
pub fn balance_masses<T: Real>(grid: &GridSpec<T>, rho0: &[T], rho1: &[T]) -> Result<Vec<T>> {
    check_len("initial density", grid.sites(), rho0.len())?;
    check_len("terminal density", grid.sites(), rho1.len())?;
    let m0 = cell_mass(grid, rho0);
    let m1 = cell_mass(grid, rho1);
    if !(m0 > T::zero()) {
        return Err(Error::ZeroMass(m0.as_f64()));
    }
    if !(m1 > T::zero()) {
        return Err(Error::ZeroMass(m1.as_f64()));
    }
    if m0 == m1 {
        return Ok(rho1.to_vec());
    }
    let scale = m0 / m1;
    Ok(rho1.iter().map(|&v| v * scale).collect())
}

/// Closed-form density and flux of the integer-order transport from
/// `x + 1/2` to `1` on `[0, 1]`, at position `x` and time `t`.
pub fn exact_integer_ot(x: f64, t: f64) -> (f64, f64) {
    if t == 0.0 {
        return (x + 0.5, 0.25 * x * (x - 1.0) * (2.0 * x + 1.0));
    }
    let s = (2.0 * t * x + (0.5 * t - 1.0).powi(2)).sqrt();
    let rho = (s + t - 1.0) / (t * s);
    let t2 = t * t;
    let t3 = t2 * t;
    let m = x / t2 - (3.0 - t) / (2.0 * t3) * s - (t - 1.0) * (t2 - 4.0) / (8.0 * t3) / s
        - (3.0 * t - 4.0) / (2.0 * t3);
    (rho, m)
}
