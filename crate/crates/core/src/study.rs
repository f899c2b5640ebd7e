//! The perturbation ladder: solve the unperturbed cavity and each cumulative
//! set of perturbation layers, calibrate the scatterer model on the full set
//! and report quality factors and collection efficiencies per design.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::farfield::{
    self, Calibration, CollectionResult, FarfieldError, FiberMode, KSpectrum, QTargets,
};
use crate::fdtd::{self, BandGap, BandOptions, CharacterizeOptions, FdtdError, Grid2D, ResonanceResult};
use crate::geometry::{
    rasterize_epsilon, CavityDesign, DefectSpec, GeometryError, LatticeSpec, PerturbationLayer,
    RasterOptions,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fdtd(#[from] FdtdError),
    #[error(transparent)]
    Farfield(#[from] FarfieldError),
    #[error("invalid study: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub lattice: LatticeSpec,
    pub defect: DefectSpec,
    /// Full perturbation set; the ladder adds these one at a time.
    pub layers: Vec<PerturbationLayer>,
    pub raster: RasterOptions,
    /// Absorbing layer thickness, rounded to whole cells.
    pub pml_nm: f64,
    pub characterize: CharacterizeOptions,
    pub fiber: FiberMode,
    /// Scan the fiber waist for the best overlap instead of using `fiber.waist_nm`.
    pub best_waist: bool,
    pub pad_factor: f64,
    pub targets: QTargets,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let defect = DefectSpec::default();
        let layers = crate::geometry::LayerLabel::ALL
            .iter()
            .map(|&l| PerturbationLayer::with_defaults(l, &defect))
            .collect();
        Self {
            lattice: LatticeSpec::default(),
            defect,
            layers,
            raster: RasterOptions::default(),
            pml_nm: 150.0,
            characterize: CharacterizeOptions::default(),
            fiber: FiberMode::default(),
            best_waist: true,
            pad_factor: 4.0,
            targets: QTargets::default(),
        }
    }
}

impl StudyConfig {
    /// Cumulative designs: no layers, the first layer, the first two, ...
    pub fn ladder(&self) -> Result<Vec<CavityDesign>, GeometryError> {
        (0..=self.layers.len())
            .map(|n| {
                CavityDesign::new(self.lattice.clone(), self.defect.clone(), self.layers[..n].to_vec())
            })
            .collect()
    }

    pub fn grid(&self, design: &CavityDesign) -> Result<Grid2D, StudyError> {
        let map = rasterize_epsilon(design, &self.raster)?;
        let mut g = Grid2D::from_permittivity(&map);
        g.pml_cells = (self.pml_nm / self.raster.dx_nm).round().max(8.0) as usize;
        g.validate()?;
        Ok(g)
    }

    /// Checks everything that can be checked without running the solver.
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Config(m.to_string()));
        if self.layers.is_empty() {
            return bad("study needs at least one perturbation layer");
        }
        if (self.characterize.n_eff - self.raster.n_eff).abs() > 1e-12 {
            return bad("characterize.n_eff must equal raster.n_eff");
        }
        if !(self.pml_nm > 0.0) {
            return bad("pml_nm must be positive");
        }
        if !(self.pad_factor >= 1.0) {
            return bad("pad_factor must be at least 1");
        }
        let c = &self.characterize;
        if c.dft_steps == 0 || c.ringdown_steps <= c.resonance.settle_steps {
            return bad("need dft_steps > 0 and ringdown_steps > settle_steps");
        }
        let (lo, hi) = c.resonance.search_window_nm;
        if !(lo > 0.0 && hi > lo) || !(c.source_bandwidth_nm > 0.0 && c.source_wavelength_nm > 0.0) {
            return bad("source and search window must be positive and ordered");
        }
        let t = &self.targets;
        if !(t.perturbed > 0.0 && t.unperturbed > 0.0) {
            return bad("target Q values must be positive");
        }
        self.fiber.validate()?;
        for d in self.ladder()? {
            self.grid(&d)?;
        }
        Ok(())
    }

    pub fn band_gap(&self) -> Option<BandGap> {
        let n = self.raster.n_eff;
        fdtd::band_gap(self.lattice.a_nm, self.lattice.r_norm, n * n, &BandOptions::default())
    }
}

/// Name of a ladder rung from its layer labels: "unperturbed", "L2", "L2-3", ...
pub fn design_name(design: &CavityDesign) -> String {
    let labels = design.layer_labels();
    match (labels.first(), labels.last()) {
        (None, _) => "unperturbed".into(),
        (Some(a), Some(b)) if a == b => a.to_string(),
        (Some(a), Some(b)) => format!("{a}-{}", b.to_string().trim_start_matches('L')),
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub name: String,
    pub lambda_cav_nm: f64,
    /// Solver quality factor (in-plane loss only).
    pub q_inplane: f64,
    /// In-plane loss combined with the calibrated radiative loss.
    pub q_total: f64,
    pub v_mode_norm: f64,
    pub in_band_gap: bool,
    pub collection: CollectionResult,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub band_gap: Option<BandGap>,
    pub calibration: Calibration,
    pub designs: Vec<DesignResult>,
    /// Far-field spectra of the modeled apertures, one per design.
    pub spectra: Vec<KSpectrum>,
    /// Solver modes, one per design.
    pub modes: Vec<ResonanceResult>,
}

/// Solves every rung of the ladder. Requires at least one perturbation layer.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult, StudyError> {
    cfg.validate()?;
    let designs = cfg.ladder()?;
    let modes = solve_modes(cfg, &designs)?;
    analyze(cfg, &designs, modes)
}

/// FDTD characterization of each design, in order.
pub fn solve_modes(cfg: &StudyConfig, designs: &[CavityDesign]) -> Result<Vec<ResonanceResult>, StudyError> {
    designs
        .par_iter()
        .map(|d| -> Result<ResonanceResult, StudyError> {
            let g = cfg.grid(d)?;
            Ok(fdtd::characterize(&g, &cfg.characterize)?.1)
        })
        .collect()
}

/// Calibrates the radiative model on the first and last rung and evaluates
/// Q and collection for every design. `modes[i]` must belong to `designs[i]`.
pub fn analyze(
    cfg: &StudyConfig,
    designs: &[CavityDesign],
    modes: Vec<ResonanceResult>,
) -> Result<StudyResult, StudyError> {
    if designs.len() < 2 || designs.len() != modes.len() {
        return Err(StudyError::Config("need one mode per design and at least two designs".into()));
    }
    let base = &modes[0];
    let full = designs.last().unwrap();
    let q_full = modes.last().unwrap().q_factor;
    let cal = farfield::calibrate_coupling(base, q_full, full, &cfg.targets, cfg.pad_factor)?;
    let gap = cfg.band_gap();

    let mut out = Vec::with_capacity(designs.len());
    let mut spectra = Vec::with_capacity(designs.len());
    for (d, m) in designs.iter().zip(&modes) {
        let ap = farfield::compose_aperture(base, d, cal.coupling)?;
        let spec = farfield::to_kspace(&ap, cfg.pad_factor)?;
        let p = spec.light_cone_power();
        let q_total = farfield::total_q(m.q_factor, cal.kappa, base.energy_integral(), p);
        out.push(DesignResult {
            name: design_name(d),
            lambda_cav_nm: m.lambda_cav_nm,
            q_inplane: m.q_factor,
            q_total,
            v_mode_norm: m.v_mode_norm,
            in_band_gap: gap.is_some_and(|g| g.contains_wavelength(m.lambda_cav_nm)),
            collection: farfield::collect(&spec, &cfg.fiber, cfg.best_waist)?,
        });
        spectra.push(spec);
    }
    Ok(StudyResult {
        band_gap: gap,
        calibration: cal,
        designs: out,
        spectra,
        modes,
    })
}

/// Lens efficiency of the unperturbed mode plus the scatterers of `design`
/// at coupling `phase·m` for each magnitude `m`.
pub fn coupling_sweep(
    mode: &ResonanceResult,
    design: &CavityDesign,
    phase: Complex64,
    magnitudes: &[f64],
    na: f64,
    pad_factor: f64,
) -> Result<Vec<f64>, FarfieldError> {
    magnitudes
        .iter()
        .map(|&m| {
            let ap = farfield::compose_aperture(mode, design, phase * m)?;
            farfield::collection_efficiency(&farfield::to_kspace(&ap, pad_factor)?, na)
        })
        .collect()
}
