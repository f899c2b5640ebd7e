//! Scenario files: one TOML document per scenario, every dimensional key
//! suffixed with its unit.

use std::fmt;
use std::path::{Path, PathBuf};

use nanocavity::photonstats::{self, DetectorSpec, EmitterDynamics, PulseTrainSpec};
use nanocavity::purcell::{CavityParams, EnsembleSpec, LeakyBackground, QdDensity};
use nanocavity::study::{design_name, StudyConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_ROOT_ENV: &str = "NANOCAVITY_CONFIG_ROOT";
pub const DEFAULT_CONFIG_ROOT: &str = "configs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Geometry,
    Fdtd,
    Farfield,
    Purcell,
    Photonstats,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Geometry,
        Stage::Fdtd,
        Stage::Farfield,
        Stage::Purcell,
        Stage::Photonstats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Geometry => "geometry",
            Stage::Fdtd => "fdtd",
            Stage::Farfield => "farfield",
            Stage::Purcell => "purcell",
            Stage::Photonstats => "photonstats",
        }
    }

    fn index(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).unwrap()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cavity figures handed to the emission stages when the optical stages are
/// not part of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityInput {
    pub lambda_cav_nm: f64,
    pub q_factor: f64,
    pub eta_lens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionConfig {
    pub bulk_lifetime_ps: f64,
    /// Reduced mode volume used for the Purcell factor, in (λ/n)³.
    pub v_mode_norm: f64,
    pub tau_on_ps: f64,
    pub on_off_ratio: f64,
    pub t_cross_k: f64,
    pub t_off_k: f64,
    pub slope_ratio: f64,
    /// Temperature sweep written to the lifetime table.
    pub sweep_k: (f64, f64),
    pub sweep_points: usize,
    /// Spectrum window half width around each resonance.
    pub spectrum_half_span_nm: f64,
    pub spectrum_points: usize,
    pub area_total_nm2: f64,
    pub area_cav_nm2: f64,
    pub background: LeakyBackground,
    pub density: QdDensity,
    pub reference: CavityInput,
    pub selected: CavityInput,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            bulk_lifetime_ps: 600.0,
            v_mode_norm: 0.8,
            tau_on_ps: 45.0,
            on_off_ratio: 6.0,
            t_cross_k: 22.5,
            t_off_k: 25.0,
            slope_ratio: 3.0,
            sweep_k: (10.0, 40.0),
            sweep_points: 61,
            spectrum_half_span_nm: 15.0,
            spectrum_points: 6001,
            area_total_nm2: 4.0e6,
            area_cav_nm2: 2.0e5,
            background: LeakyBackground::default(),
            density: QdDensity::default(),
            reference: CavityInput {
                lambda_cav_nm: 920.0,
                q_factor: 11_000.0,
                eta_lens: 0.4,
            },
            selected: CavityInput {
                lambda_cav_nm: 920.0,
                q_factor: 8_500.0,
                eta_lens: 0.73,
            },
        }
    }
}

impl EmissionConfig {
    pub fn cavity(&self, c: &CavityInput) -> CavityParams {
        CavityParams {
            lambda_cav_nm: c.lambda_cav_nm,
            q_factor: c.q_factor,
            v_mode_norm: self.v_mode_norm,
            eta_cav: c.eta_lens,
            psi_map: None,
        }
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            rho_qd: self.density.clone(),
            area_total_nm2: self.area_total_nm2,
            area_cav_nm2: self.area_cav_nm2,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(format!("emission: {m}")));
        if !(self.bulk_lifetime_ps > 0.0) || !(self.tau_on_ps > 0.0) || !(self.on_off_ratio > 1.0) {
            return bad("need positive lifetimes and an on/off ratio above 1");
        }
        if !(self.sweep_k.1 > self.sweep_k.0) || self.sweep_points < 2 {
            return bad("temperature sweep must be increasing with at least two points");
        }
        if !(self.spectrum_half_span_nm > 0.0) || self.spectrum_points < 101 {
            return bad("spectrum needs a positive span and at least 101 points");
        }
        self.background.validate()?;
        self.ensemble().validate()?;
        self.cavity(&self.reference).validate()?;
        self.cavity(&self.selected).validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonConfig {
    pub bin_width_ps: f64,
    /// Correlation window half width in repetition periods.
    pub window_periods: f64,
    pub write_clicks: bool,
    /// When set, also simulates a dot this far from the cavity line with
    /// spectral routing and writes the dot-cavity cross-correlation.
    pub cross_detuning_nm: Option<f64>,
    pub pulses: PulseTrainSpec,
    pub emitter: EmitterDynamics,
    pub detector: DetectorSpec,
}

impl Default for PhotonConfig {
    fn default() -> Self {
        Self {
            bin_width_ps: 100.0,
            window_periods: 5.5,
            write_clicks: false,
            cross_detuning_nm: None,
            pulses: PulseTrainSpec::default(),
            emitter: EmitterDynamics::default(),
            detector: DetectorSpec::default(),
        }
    }
}

impl PhotonConfig {
    fn validate(&self) -> Result<(), CliError> {
        if !(self.bin_width_ps > 0.0) || !(self.window_periods >= 3.0) {
            return Err(CliError::Config(
                "photons: need a positive bin width and a window of at least 3 periods".into(),
            ));
        }
        photonstats::validate(&self.pulses, &self.emitter, &self.detector)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub seed: u64,
    /// Ladder rung reported by the far-field stage and fed downstream;
    /// defaults to the fully perturbed design.
    #[serde(default)]
    pub select_design: Option<String>,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub emission: EmissionConfig,
    #[serde(default)]
    pub photons: PhotonConfig,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn runs(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() {
            return bad("scenario name is empty".into());
        }
        let Some(first) = self.stages.first() else {
            return bad("stage list is empty".into());
        };
        for (k, s) in self.stages.iter().enumerate() {
            if s.index() != first.index() + k {
                return bad("stages must be contiguous and in pipeline order".into());
            }
        }
        if first.index() > Stage::Geometry.index() && first.index() <= Stage::Farfield.index() {
            return bad(format!("stage {first} needs the stages before it"));
        }
        if self.runs(Stage::Geometry) {
            self.study.validate()?;
            if let Some(name) = &self.select_design {
                let names: Vec<String> = self.study.ladder()?.iter().map(design_name).collect();
                if !names.contains(name) {
                    return bad(format!("select_design {name:?} is not one of {names:?}"));
                }
            }
        }
        if self.runs(Stage::Purcell) {
            self.emission.validate()?;
        }
        if self.runs(Stage::Photonstats) {
            self.photons.validate()?;
        }
        Ok(())
    }
}

/// Resolves a scenario argument: an existing file path is used as is,
/// otherwise `<root>/<name>.toml` with the root from the environment.
pub fn resolve(arg: &str) -> PathBuf {
    let direct = Path::new(arg);
    if direct.is_file() {
        return direct.to_path_buf();
    }
    let root = std::env::var_os(CONFIG_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG_ROOT));
    let mut p = root.join(arg);
    if p.extension().is_none() {
        p.set_extension("toml");
    }
    p
}
