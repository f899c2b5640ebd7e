//! Purcell emission model: cavity Lorentzian, maximum and local Purcell
//! factors, lens-collected rates, lifetimes, ensemble PL spectra with their
//! background decomposition, the pert/unpert efficiency ratio recovered from
//! such spectra, and linear temperature tuning.
//!
//! Rates are in 1/ns, wavelengths in nm, areas in nm².

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::ResonanceResult;
use crate::grid::Map2;
use crate::units;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PurcellError {
    #[error("invalid parameter: {0}")]
    InvalidInput(String),
    #[error("emitter position ({0:.1}, {1:.1}) nm lies outside the field map")]
    OutOfDomain(f64, f64),
    #[error("background {background:.4e} exceeds the peak {peak:.4e}")]
    NegativeNumerator { peak: f64, background: f64 },
    #[error("spectrum cannot be analyzed: {0}")]
    Spectrum(String),
    #[error("temperature {0} K outside the tuning model range")]
    OutOfRange(f64),
}

/// Normalized cavity line shape `1 / (1 + 4Q²(λ/λc − 1)²)`.
pub fn lorentzian(lambda_nm: f64, lambda_cav_nm: f64, q: f64) -> f64 {
    let d = (lambda_nm - lambda_cav_nm) / lambda_cav_nm;
    1.0 / (1.0 + 4.0 * q * q * d * d)
}

/// `F_c0 = 3/(4π²) · Q / V′`.
pub fn max_purcell(q: f64, v_mode_norm: f64) -> f64 {
    3.0 / (4.0 * PI * PI) * q / v_mode_norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    pub gamma0_per_ns: f64,
    pub position_nm: (f64, f64),
    /// Angle between the dipole and the local cavity field.
    pub dipole_angle_rad: f64,
    pub wavelength_nm: f64,
}

impl EmitterParams {
    pub fn from_bulk_lifetime(tau_ps: f64, wavelength_nm: f64) -> Self {
        Self {
            gamma0_per_ns: units::rate_per_ns_from_lifetime_ps(tau_ps),
            position_nm: (0.0, 0.0),
            dipole_angle_rad: 0.0,
            wavelength_nm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub lambda_cav_nm: f64,
    pub q_factor: f64,
    pub v_mode_norm: f64,
    /// Lens-collection efficiency of the cavity channel.
    pub eta_cav: f64,
    /// |E(r)| / max|E|. `None` places every emitter at the field maximum.
    #[serde(skip)]
    pub psi_map: Option<Map2<f64>>,
}

impl CavityParams {
    /// Takes λ, V′ and the field map from a solved mode; Q and η_cav are
    /// supplied separately since they usually come from the calibrated model.
    pub fn from_mode(mode: &ResonanceResult, q_factor: f64, eta_cav: f64) -> Self {
        let mag = mode.mode_field.map(|v| v.norm());
        let peak = mag.data.iter().cloned().fold(0.0, f64::max);
        let psi = if peak > 0.0 { mag.map(|v| v / peak) } else { mag };
        Self {
            lambda_cav_nm: mode.lambda_cav_nm,
            q_factor,
            v_mode_norm: mode.v_mode_norm,
            eta_cav,
            psi_map: Some(psi),
        }
    }

    pub fn validate(&self) -> Result<(), PurcellError> {
        let bad = |m: &str| Err(PurcellError::InvalidInput(m.into()));
        if !(self.lambda_cav_nm > 0.0) {
            return bad("cavity wavelength must be positive");
        }
        if !(self.q_factor > 0.0) {
            return bad("Q must be positive");
        }
        if !(self.v_mode_norm > 0.0) {
            return bad("mode volume must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta_cav) {
            return bad("eta_cav must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn max_purcell(&self) -> f64 {
        max_purcell(self.q_factor, self.v_mode_norm)
    }

    /// |ψ(r)|.
    pub fn psi(&self, position_nm: (f64, f64)) -> Result<f64, PurcellError> {
        match &self.psi_map {
            None => Ok(1.0),
            Some(m) => m
                .sample(position_nm.0, position_nm.1)
                .ok_or(PurcellError::OutOfDomain(position_nm.0, position_nm.1)),
        }
    }

    /// Cavity area `∫|ψ|² dA`; `None` without a field map.
    pub fn area_nm2(&self) -> Option<f64> {
        self.psi_map
            .as_ref()
            .map(|m| m.data.iter().map(|v| v * v).sum::<f64>() * m.dx * m.dx)
    }
}

/// Purcell enhancement into everything other than the cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakyBackground {
    pub f_pc: f64,
    pub eta_pc: f64,
}

impl Default for LeakyBackground {
    fn default() -> Self {
        Self {
            f_pc: 0.4,
            eta_pc: 0.01,
        }
    }
}

impl LeakyBackground {
    pub fn validate(&self) -> Result<(), PurcellError> {
        if !(self.f_pc > 0.0) || !(0.0..=1.0).contains(&self.eta_pc) {
            return Err(PurcellError::InvalidInput(
                "need f_pc > 0 and eta_pc in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// `F_cav = F_c0 |ψ|² cos²θ L(λ)`.
pub fn purcell_factor(emitter: &EmitterParams, cavity: &CavityParams) -> Result<f64, PurcellError> {
    cavity.validate()?;
    let psi = cavity.psi(emitter.position_nm)?;
    let c = emitter.dipole_angle_rad.cos();
    Ok(cavity.max_purcell()
        * psi
        * psi
        * c
        * c
        * lorentzian(emitter.wavelength_nm, cavity.lambda_cav_nm, cavity.q_factor))
}

/// Lens-collected emission rate `Γ₀(F_cav η_cav + F_PC η_PC)` in 1/ns.
pub fn collected_rate(
    emitter: &EmitterParams,
    cavity: &CavityParams,
    background: &LeakyBackground,
) -> Result<f64, PurcellError> {
    let f = purcell_factor(emitter, cavity)?;
    Ok(emitter.gamma0_per_ns * (f * cavity.eta_cav + background.f_pc * background.eta_pc))
}

/// Radiative lifetime `1 / (Γ₀(F_cav + F_PC))` in ps.
pub fn lifetime_ps(
    emitter: &EmitterParams,
    cavity: &CavityParams,
    background: &LeakyBackground,
) -> Result<f64, PurcellError> {
    if !(emitter.gamma0_per_ns > 0.0) {
        return Err(PurcellError::InvalidInput("gamma0 must be positive".into()));
    }
    let f = purcell_factor(emitter, cavity)?;
    let rate = emitter.gamma0_per_ns * (f + background.f_pc);
    if !(rate > 0.0) {
        return Err(PurcellError::InvalidInput("total emission rate is zero".into()));
    }
    Ok(units::lifetime_ps_from_rate_per_ns(rate))
}

/// Spectral density of the dot ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QdDensity {
    Gaussian { center_nm: f64, fwhm_nm: f64 },
    /// Linear interpolation of the table; zero outside it.
    Tabulated { wavelength_nm: Vec<f64>, density: Vec<f64> },
}

impl Default for QdDensity {
    fn default() -> Self {
        QdDensity::Gaussian {
            center_nm: 920.0,
            fwhm_nm: 30.0,
        }
    }
}

impl QdDensity {
    pub fn validate(&self) -> Result<(), PurcellError> {
        let bad = |m: &str| Err(PurcellError::InvalidInput(m.into()));
        match self {
            QdDensity::Gaussian { fwhm_nm, .. } if !(*fwhm_nm > 0.0) => bad("density FWHM must be positive"),
            QdDensity::Tabulated { wavelength_nm, density } => {
                if wavelength_nm.len() != density.len() || wavelength_nm.len() < 2 {
                    return bad("density table needs matching columns of at least two rows");
                }
                if wavelength_nm.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("density table wavelengths must increase");
                }
                if density.iter().any(|d| !(*d >= 0.0)) {
                    return bad("density must be non-negative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, lambda_nm: f64) -> f64 {
        match self {
            QdDensity::Gaussian { center_nm, fwhm_nm } => {
                let s = fwhm_nm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
                let d = (lambda_nm - center_nm) / s;
                (-0.5 * d * d).exp()
            }
            QdDensity::Tabulated { wavelength_nm: x, density: y } => {
                if lambda_nm < x[0] || lambda_nm > x[x.len() - 1] {
                    return 0.0;
                }
                let i = x.partition_point(|&v| v <= lambda_nm).clamp(1, x.len() - 1);
                let t = (lambda_nm - x[i - 1]) / (x[i] - x[i - 1]);
                y[i - 1] + t * (y[i] - y[i - 1])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub rho_qd: QdDensity,
    /// Pumped and collected area A.
    pub area_total_nm2: f64,
    /// `A_cav = ∫|ψ|² dA`.
    pub area_cav_nm2: f64,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), PurcellError> {
        self.rho_qd.validate()?;
        if !(self.area_cav_nm2 > 0.0) || !(self.area_total_nm2 >= self.area_cav_nm2) {
            return Err(PurcellError::InvalidInput("need 0 < area_cav ≤ area_total".into()));
        }
        Ok(())
    }
}

/// Collected PL spectrum in arbitrary units, `gamma_lens = cavity_term + background_term`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSpectrum {
    pub wavelength_nm: Vec<f64>,
    pub gamma_lens: Vec<f64>,
    pub cavity_term: Vec<f64>,
    pub background_term: Vec<f64>,
}

impl EmissionSpectrum {
    /// Scales every column by `s` (a detector gain).
    pub fn scaled(&self, s: f64) -> Self {
        let f = |v: &Vec<f64>| v.iter().map(|x| x * s).collect();
        Self {
            wavelength_nm: self.wavelength_nm.clone(),
            gamma_lens: f(&self.gamma_lens),
            cavity_term: f(&self.cavity_term),
            background_term: f(&self.background_term),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "wavelength_nm,total,cavity_term,background")?;
        for i in 0..self.wavelength_nm.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                self.wavelength_nm[i], self.gamma_lens[i], self.cavity_term[i], self.background_term[i]
            )?;
        }
        Ok(())
    }
}

/// Uniform wavelength grid from `start` to `stop` inclusive.
pub fn wavelength_grid(start_nm: f64, stop_nm: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| start_nm + (stop_nm - start_nm) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `ρ(λ) [F_c0 η_cav L(λ) + 2 F_PC η_PC A/A_cav]` on the given grid. The
/// factor 2 carries the half of the dots that do not couple to the linearly
/// polarized mode.
pub fn ensemble_spectrum(
    cavity: &CavityParams,
    background: &LeakyBackground,
    ensemble: &EnsembleSpec,
    wavelength_nm: &[f64],
) -> Result<EmissionSpectrum, PurcellError> {
    cavity.validate()?;
    background.validate()?;
    ensemble.validate()?;
    let fc0 = cavity.max_purcell();
    let bg_weight = 2.0 * background.f_pc * background.eta_pc * ensemble.area_total_nm2 / ensemble.area_cav_nm2;
    let mut s = EmissionSpectrum {
        wavelength_nm: wavelength_nm.to_vec(),
        gamma_lens: Vec::with_capacity(wavelength_nm.len()),
        cavity_term: Vec::with_capacity(wavelength_nm.len()),
        background_term: Vec::with_capacity(wavelength_nm.len()),
    };
    for &l in wavelength_nm {
        let rho = ensemble.rho_qd.eval(l);
        let c = rho * fc0 * cavity.eta_cav * lorentzian(l, cavity.lambda_cav_nm, cavity.q_factor);
        let b = rho * bg_weight;
        s.cavity_term.push(c);
        s.background_term.push(b);
        s.gamma_lens.push(c + b);
    }
    Ok(s)
}

/// Cavity peak extracted from a measured spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub lambda_cav_nm: f64,
    pub q_factor: f64,
    /// Peak height above background.
    pub height: f64,
    /// Background interpolated to the peak.
    pub background: f64,
}

fn window_mean(s: &EmissionSpectrum, lo: f64, hi: f64, tail: impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    let (mut sum, mut x, mut n) = (0.0, 0.0, 0usize);
    for (l, g) in s.wavelength_nm.iter().zip(&s.gamma_lens) {
        if *l >= lo && *l <= hi {
            sum += g - tail(*l);
            x += l;
            n += 1;
        }
    }
    (n > 0).then(|| (x / n as f64, sum / n as f64))
}

/// Least-squares parabola through `(x, y)`: returns (c0, c1, c2).
fn fit_parabola(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let mut a = nalgebra::DMatrix::zeros(x.len(), 3);
    for (i, &v) in x.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = v;
        a[(i, 2)] = v * v;
    }
    let b = nalgebra::DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-14).ok()?;
    Some((sol[0], sol[1], sol[2]))
}

/// Finds the cavity line and the background under it.
///
/// The background at the peak is the straight line through the mean spectrum
/// of two windows centered ±5 linewidths from the line, each one linewidth
/// wide. The line itself comes from a parabola through the reciprocal of the
/// background-subtracted points above half maximum, which is exact for a
/// Lorentzian. The cavity's own wing inside the windows is taken out and the
/// two steps repeated until the estimate settles.
pub fn fit_peak(s: &EmissionSpectrum, q_guess: f64) -> Result<PeakFit, PurcellError> {
    let n = s.wavelength_nm.len();
    if n < 5 || s.gamma_lens.len() != n {
        return Err(PurcellError::Spectrum("spectrum needs at least five points".into()));
    }
    if !(q_guess > 0.0) {
        return Err(PurcellError::InvalidInput("Q guess must be positive".into()));
    }
    let imax = (0..n)
        .max_by(|&a, &b| s.gamma_lens[a].total_cmp(&s.gamma_lens[b]))
        .unwrap();
    if imax == 0 || imax == n - 1 {
        return Err(PurcellError::Spectrum("peak sits on the edge of the grid".into()));
    }
    let mut fit = PeakFit {
        lambda_cav_nm: s.wavelength_nm[imax],
        q_factor: q_guess,
        height: 0.0,
        background: 0.0,
    };
    for _ in 0..8 {
        let lw = fit.lambda_cav_nm / fit.q_factor;
        let tail = |l: f64| fit.height * lorentzian(l, fit.lambda_cav_nm, fit.q_factor);
        let c = fit.lambda_cav_nm;
        let left = window_mean(s, c - 5.5 * lw, c - 4.5 * lw, tail);
        let right = window_mean(s, c + 4.5 * lw, c + 5.5 * lw, tail);
        let (Some((xl, yl)), Some((xr, yr))) = (left, right) else {
            return Err(PurcellError::Spectrum("background windows fall outside the grid".into()));
        };
        let bg = |l: f64| yl + (yr - yl) * (l - xl) / (xr - xl);
        let peak = s.gamma_lens[imax] - bg(s.wavelength_nm[imax]);
        if !(peak > 0.0) {
            return Err(PurcellError::NegativeNumerator {
                peak: s.gamma_lens[imax],
                background: bg(s.wavelength_nm[imax]),
            });
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..n {
            let y = s.gamma_lens[i] - bg(s.wavelength_nm[i]);
            if y > 0.5 * peak {
                xs.push(s.wavelength_nm[i] - s.wavelength_nm[imax]);
                ys.push(1.0 / y);
            }
        }
        if xs.len() < 3 {
            return Err(PurcellError::Spectrum("line is not resolved by the grid".into()));
        }
        let (c0, c1, c2) = fit_parabola(&xs, &ys)
            .ok_or_else(|| PurcellError::Spectrum("line fit failed".into()))?;
        if !(c2 > 0.0) {
            return Err(PurcellError::Spectrum("line is not peaked".into()));
        }
        let x0 = -c1 / (2.0 * c2);
        let min = c0 - c1 * c1 / (4.0 * c2);
        if !(min > 0.0) {
            return Err(PurcellError::Spectrum("line fit has no maximum".into()));
        }
        let height = 1.0 / min;
        let lc = s.wavelength_nm[imax] + x0;
        // 1/y = (1/h)(1 + 4Q²(λ/λc − 1)²) ⇒ c2 = 4Q²/(h λc²).
        let q = lc * (c2 * height).sqrt() / 2.0;
        fit = PeakFit {
            lambda_cav_nm: lc,
            q_factor: q,
            height,
            background: bg(lc),
        };
    }
    Ok(fit)
}

/// Lens-efficiency ratio of two structures from their PL spectra:
/// background-subtracted peak heights, corrected by the Q ratio and by the
/// ensemble density at each resonance.
pub fn efficiency_ratio(
    spec_pert: &EmissionSpectrum,
    spec_unpert: &EmissionSpectrum,
    q_pert: f64,
    q_unpert: f64,
    rho_qd: &QdDensity,
) -> Result<f64, PurcellError> {
    let p = fit_peak(spec_pert, q_pert)?;
    let u = fit_peak(spec_unpert, q_unpert)?;
    let (rp, ru) = (rho_qd.eval(p.lambda_cav_nm), rho_qd.eval(u.lambda_cav_nm));
    if !(rp > 0.0 && ru > 0.0) {
        return Err(PurcellError::Spectrum("ensemble density vanishes at a resonance".into()));
    }
    Ok(p.height / u.height * (q_unpert / q_pert) * (ru / rp))
}

/// Linear temperature tuning of dot and cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningModel {
    pub t_ref_k: f64,
    pub lambda_qd_ref_nm: f64,
    pub lambda_cav_ref_nm: f64,
    pub slope_cav_nm_per_k: f64,
    /// Dot slope over cavity slope.
    pub slope_ratio: f64,
    pub valid_range_k: (f64, f64),
}

impl TuningModel {
    /// Model whose dot and cavity cross at `t_cross_k` and `lambda_cross_nm`,
    /// referenced to that crossing.
    pub fn crossing_at(t_cross_k: f64, lambda_cross_nm: f64, slope_cav_nm_per_k: f64, slope_ratio: f64) -> Self {
        Self {
            t_ref_k: t_cross_k,
            lambda_qd_ref_nm: lambda_cross_nm,
            lambda_cav_ref_nm: lambda_cross_nm,
            slope_cav_nm_per_k,
            slope_ratio,
            valid_range_k: (4.0, 60.0),
        }
    }

    /// Returns (λ_QD, λ_cav) at temperature `t_k`.
    pub fn tune(&self, t_k: f64) -> Result<(f64, f64), PurcellError> {
        if !(self.slope_ratio > 0.0) {
            return Err(PurcellError::InvalidInput("slope ratio must be positive".into()));
        }
        if !(t_k >= self.valid_range_k.0 && t_k <= self.valid_range_k.1) {
            return Err(PurcellError::OutOfRange(t_k));
        }
        let dt = t_k - self.t_ref_k;
        let cav = self.lambda_cav_ref_nm + self.slope_cav_nm_per_k * dt;
        let qd = self.lambda_qd_ref_nm + self.slope_ratio * self.slope_cav_nm_per_k * dt;
        Ok((qd, cav))
    }

    /// Temperature where dot and cavity coincide; `None` for parallel tuning.
    pub fn crossing_temperature(&self) -> Option<f64> {
        let rel = (self.slope_ratio - 1.0) * self.slope_cav_nm_per_k;
        if rel == 0.0 {
            return None;
        }
        Some(self.t_ref_k - (self.lambda_qd_ref_nm - self.lambda_cav_ref_nm) / rel)
    }
}

/// Emitter coupling and tuning that reproduce a measured on-resonance
/// lifetime and on/off lifetime ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeCalibration {
    /// `|ψ|² cos²θ` of the dot (at the field maximum this fixes θ).
    pub overlap: f64,
    pub dipole_angle_rad: f64,
    /// Dot-cavity detuning at the off-resonance temperature.
    pub detuning_nm: f64,
    pub tuning: TuningModel,
}

/// Solves for the coupling giving `tau_on_ps` on resonance and for the
/// cavity slope giving a lifetime `ratio` longer at `t_off_k`, with the dot
/// at the field maximum.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_lifetime(
    gamma0_per_ns: f64,
    cavity: &CavityParams,
    background: &LeakyBackground,
    tau_on_ps: f64,
    ratio: f64,
    t_cross_k: f64,
    t_off_k: f64,
    slope_ratio: f64,
) -> Result<LifetimeCalibration, PurcellError> {
    cavity.validate()?;
    background.validate()?;
    let f_on = 1.0 / (gamma0_per_ns * tau_on_ps * 1e-3) - background.f_pc;
    let f_off = 1.0 / (gamma0_per_ns * tau_on_ps * ratio * 1e-3) - background.f_pc;
    if !(f_on > 0.0 && f_off > 0.0 && f_off < f_on) {
        return Err(PurcellError::InvalidInput(format!(
            "lifetimes need cavity Purcell factors {f_on:.3} (on) > {f_off:.3} (off) > 0"
        )));
    }
    let overlap = f_on / cavity.max_purcell();
    if overlap > 1.0 {
        return Err(PurcellError::InvalidInput(format!(
            "maximum Purcell factor {:.2} cannot reach {f_on:.2}",
            cavity.max_purcell()
        )));
    }
    let l_off = f_off / f_on;
    // Relative detuning λ_QD/λ_cav − 1 at t_off; both lines move with T.
    let rel = (1.0 / l_off - 1.0).sqrt() / (2.0 * cavity.q_factor);
    let dt = t_off_k - t_cross_k;
    // Positive cavity slope: the detuning sign follows (ratio − 1)·ΔT.
    let signed = rel.copysign(dt * (slope_ratio - 1.0));
    let denom = slope_ratio - 1.0 - signed;
    if slope_ratio == 1.0 || dt == 0.0 || denom == 0.0 {
        return Err(PurcellError::InvalidInput("dot and cavity must tune apart".into()));
    }
    let slope = signed * cavity.lambda_cav_nm / (dt * denom);
    let detuning_nm = (slope_ratio - 1.0) * slope * dt;
    Ok(LifetimeCalibration {
        overlap,
        dipole_angle_rad: overlap.sqrt().acos(),
        detuning_nm,
        tuning: TuningModel::crossing_at(t_cross_k, cavity.lambda_cav_nm, slope, slope_ratio),
    })
}
