//! 2D TE-like (Ex, Ey, Hz) finite-difference time-domain solver.
//!
//! The solver works in normalized units: c = ε₀ = μ₀ = 1, lengths in nm, so
//! time is measured in nm of light travel. [`ProbeSeries`] reports the time
//! step in seconds as well.

mod bands;
mod mode;
mod resonance;
mod solver;

pub use bands::{band_gap, te_bands, BandGap, BandOptions};
pub use mode::{characterize, default_probes, extract_mode, CharacterizeOptions, ResonanceResult};
pub use resonance::{find_resonance, Resonance, ResonanceOptions};
pub use solver::{run_fdtd, Probe, ProbeSeries, Simulation};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PermittivityMap;
use crate::units;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdtdError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("time step violates the Courant bound (factor {0})")]
    Courant(f64),
    #[error("field diverged at step {step} (|field| = {value:e})")]
    Unstable { step: usize, value: f64 },
    #[error("no resonance in the search window (prominence {prominence:.2})")]
    NoResonance { prominence: f64 },
    #[error("decay is not single-exponential (rms residual {residual:.3e})")]
    AmbiguousFit { residual: f64 },
    #[error("series too short: {0}")]
    TooShort(String),
}

/// Absorbing-layer formulation used on `Boundary::Pml` sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Absorber {
    /// Berenger split-field layer: reflectionless at any incidence angle in
    /// the continuum, but not dissipative in the discrete energy norm.
    SplitField,
    /// Graded matched conductivity (σ/ε = σ*/μ) applied to every field
    /// component: matched at normal incidence and strictly dissipative.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Graded split-field absorbing layer backed by a perfect conductor.
    Pml,
    /// Perfect electric conductor (tangential E = 0).
    Pec,
    Periodic,
}

/// Simulation grid: cell permittivity plus boundary treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub dx_nm: f64,
    pub width: usize,
    pub height: usize,
    /// Per-cell relative permittivity, row-major.
    pub epsilon: Vec<f64>,
    pub pml_cells: usize,
    /// Peak PML loss rate in normalized units; `None` picks the value giving a
    /// 1e-7 round-trip reflection at normal incidence.
    pub pml_sigma_max: Option<f64>,
    pub boundary_x: Boundary,
    pub boundary_y: Boundary,
    pub absorber: Absorber,
    /// Fraction of the 2D Courant limit used for the time step.
    pub courant: f64,
}

impl Grid2D {
    pub const DEFAULT_PML_CELLS: usize = 10;
    pub const DEFAULT_COURANT: f64 = 0.99;

    pub fn from_permittivity(map: &PermittivityMap) -> Self {
        Self {
            dx_nm: map.eps.dx,
            width: map.eps.nx,
            height: map.eps.ny,
            epsilon: map.eps.data.clone(),
            pml_cells: Self::DEFAULT_PML_CELLS,
            pml_sigma_max: None,
            boundary_x: Boundary::Pml,
            boundary_y: Boundary::Pml,
            absorber: Absorber::SplitField,
            courant: Self::DEFAULT_COURANT,
        }
    }

    pub fn uniform(width: usize, height: usize, dx_nm: f64, eps: f64) -> Self {
        Self {
            dx_nm,
            width,
            height,
            epsilon: vec![eps; width * height],
            pml_cells: Self::DEFAULT_PML_CELLS,
            pml_sigma_max: None,
            boundary_x: Boundary::Pml,
            boundary_y: Boundary::Pml,
            absorber: Absorber::SplitField,
            courant: Self::DEFAULT_COURANT,
        }
    }

    pub fn validate(&self) -> Result<(), FdtdError> {
        let bad = |m: String| Err(FdtdError::InvalidGrid(m));
        if !(self.dx_nm > 0.0) {
            return bad("dx must be positive".into());
        }
        if self.epsilon.len() != self.width * self.height {
            return bad("permittivity length does not match dimensions".into());
        }
        if self.width < 3 || self.height < 1 {
            return bad("grid too small".into());
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(**e >= 1.0)) {
            return bad(format!("permittivity {e} below 1"));
        }
        let uses_pml = self.boundary_x == Boundary::Pml || self.boundary_y == Boundary::Pml;
        if uses_pml && self.pml_cells < 8 {
            return bad(format!("pml needs at least 8 cells, got {}", self.pml_cells));
        }
        if self.boundary_x == Boundary::Pml && self.width <= 2 * self.pml_cells {
            return bad("grid narrower than its absorbing layers".into());
        }
        if self.boundary_y == Boundary::Pml && self.height <= 2 * self.pml_cells {
            return bad("grid shorter than its absorbing layers".into());
        }
        if !(self.courant > 0.0) || self.courant > 1.0 {
            return Err(FdtdError::Courant(self.courant));
        }
        Ok(())
    }

    /// Time step in normalized units (nm of light travel).
    pub fn dt(&self) -> f64 {
        self.courant * self.dx_nm / std::f64::consts::SQRT_2
    }

    pub fn dt_seconds(&self) -> f64 {
        units::light_nm_to_seconds(self.dt())
    }

    #[inline]
    pub fn eps(&self, ix: usize, iy: usize) -> f64 {
        self.epsilon[iy * self.width + ix]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    fn in_pml(&self, ix: usize, iy: usize) -> bool {
        let p = self.pml_cells;
        (self.boundary_x == Boundary::Pml && (ix < p || ix >= self.width - p))
            || (self.boundary_y == Boundary::Pml && (iy < p || iy >= self.height - p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    Ex,
    Ey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceExtent {
    /// A single cell.
    Point,
    /// Every cell of the source column (a y-invariant line source).
    Column,
}

/// Gaussian-modulated sinusoidal current source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub position: (usize, usize),
    pub polarization: Polarization,
    pub center_wavelength_nm: f64,
    /// Spectral FWHM of the pulse in wavelength.
    pub bandwidth_nm: f64,
    pub amplitude: f64,
    pub extent: SourceExtent,
}

impl SourceSpec {
    /// Ey point source at the grid center.
    pub fn centered(grid: &Grid2D, center_wavelength_nm: f64, bandwidth_nm: f64) -> Self {
        Self {
            position: grid.center(),
            polarization: Polarization::Ey,
            center_wavelength_nm,
            bandwidth_nm,
            amplitude: 1.0,
            extent: SourceExtent::Point,
        }
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<(), FdtdError> {
        let (ix, iy) = self.position;
        if ix >= grid.width || iy >= grid.height || grid.in_pml(ix, iy) {
            return Err(FdtdError::InvalidSource(
                "source must lie inside the non-absorbing region".into(),
            ));
        }
        if !(self.bandwidth_nm > 0.0) {
            return Err(FdtdError::InvalidSource("bandwidth must be positive".into()));
        }
        if !(self.center_wavelength_nm > 0.0) {
            return Err(FdtdError::InvalidSource("wavelength must be positive".into()));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        units::angular_frequency(self.center_wavelength_nm)
    }

    /// Temporal width σ_t of the Gaussian envelope (normalized time).
    pub fn sigma_t(&self) -> f64 {
        let lam = self.center_wavelength_nm;
        let d_omega = 2.0 * std::f64::consts::PI * self.bandwidth_nm / (lam * lam);
        let sigma_omega = d_omega / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        1.0 / sigma_omega
    }

    pub fn delay(&self) -> f64 {
        5.0 * self.sigma_t()
    }

    /// Time after which the source is identically zero.
    pub fn turn_off_time(&self) -> f64 {
        2.0 * self.delay()
    }

    pub fn value(&self, t: f64) -> f64 {
        if t >= self.turn_off_time() || t < 0.0 {
            return 0.0;
        }
        let tau = t - self.delay();
        let s = self.sigma_t();
        self.amplitude * (-(tau * tau) / (2.0 * s * s)).exp() * (self.omega() * tau).sin()
    }

    pub fn turn_off_step(&self, grid: &Grid2D) -> usize {
        (self.turn_off_time() / grid.dt()).ceil() as usize
    }
}
