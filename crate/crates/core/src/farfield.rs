//! Scalar far-field model: the in-plane spatial spectrum of the field just
//! above the slab, light-cone and NA filtering, and Gaussian fiber overlap.
//!
//! Perturbation annuli are modeled as Gaussian scatterers whose amplitude is
//! `coupling · Δε · width · E(r_j)`, with `Δε = 1 − ε_slab` the permittivity
//! change of slab turned into air. A radiative quality factor follows from the
//! light-cone power of the aperture, which lets the coupling be calibrated
//! against a target Q ratio.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::ResonanceResult;
use crate::geometry::{circle_rect_area, CavityDesign};
use crate::grid::Map2;
use crate::units;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FarfieldError {
    #[error("mode and design do not share geometry: {0}")]
    GeometryMismatch(String),
    #[error("light cone contains no power or is not resolved by the k grid")]
    EmptyLightCone,
    #[error("field has no power inside the collection cone")]
    ZeroField,
    #[error("invalid parameter: {0}")]
    InvalidInput(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Field sampled just above the slab; `field.origin` is the cavity center.
#[derive(Debug, Clone, PartialEq)]
pub struct ApertureField {
    pub field: Map2<Complex64>,
    pub lambda_nm: f64,
}

impl ApertureField {
    pub fn power(&self) -> f64 {
        self.field.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.field.dx.powi(2)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            field: self.field.map(|v| v * s),
            lambda_nm: self.lambda_nm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Position relative to the cavity center (nm).
    pub position_nm: (f64, f64),
    pub amplitude: Complex64,
    /// Gaussian footprint `exp(-r²/2s²)` standard deviation (nm).
    pub extent_nm: f64,
}

/// Spectrum on a centered square k grid; index `i` maps to `(i - n/2)·dk`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpectrum {
    pub n: usize,
    /// rad/nm
    pub dk: f64,
    /// Free-space wavenumber ω/c (rad/nm).
    pub k0: f64,
    /// Row-major, `iy * n + ix`. Normalized as the continuous transform
    /// `(1/2π)∫E e^{-ik·r} dA`, so `Σ|A|²dk² = Σ|E|²dx²`.
    pub amplitudes: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberMode {
    /// Real-space waist of the Gaussian mode; its k-space field is
    /// `exp(-k²w²/4)`.
    pub waist_nm: f64,
    pub na_lens: f64,
}

impl Default for FiberMode {
    fn default() -> Self {
        Self {
            waist_nm: 1000.0,
            na_lens: 0.75,
        }
    }
}

impl FiberMode {
    pub fn validate(&self) -> Result<(), FarfieldError> {
        if !(self.waist_nm > 0.0) {
            return Err(FarfieldError::InvalidInput("fiber waist must be positive".into()));
        }
        if !(self.na_lens > 0.0 && self.na_lens < 1.0) {
            return Err(FarfieldError::InvalidInput("lens NA must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionResult {
    pub na: f64,
    /// NA-cone power over light-cone power.
    pub eta_lens: f64,
    /// Fiber overlap conditioned on the light collected by the lens.
    pub eta_smf: f64,
    /// `eta_lens · eta_smf`: fiber-coupled fraction of all light-cone power.
    pub eta_smf_total: f64,
    pub waist_nm: f64,
}

impl KSpectrum {
    #[inline]
    pub fn k_of(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dk
    }

    pub fn get(&self, ix: usize, iy: usize) -> Complex64 {
        self.amplitudes[iy * self.n + ix]
    }

    pub fn total_power(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dk * self.dk
    }

    /// Index range whose |k| can reach `k_max`.
    fn window(&self, k_max: f64) -> std::ops::Range<usize> {
        let h = (self.n / 2) as i64;
        let m = (k_max / self.dk).floor() as i64 + 1;
        let lo = (h - m).max(0) as usize;
        let hi = ((h + m + 1) as usize).min(self.n);
        lo..hi
    }

    /// Visits every grid cell touching the disk |k| ≤ k_max as (kx, ky,
    /// amplitude, weight), the weight being the covered fraction of the cell.
    fn for_each_in_disk<F: FnMut(f64, f64, Complex64, f64)>(&self, k_max: f64, mut f: F) {
        let r = self.window(k_max);
        let h = 0.5 * self.dk;
        for iy in r.clone() {
            let ky = self.k_of(iy);
            for ix in r.clone() {
                let kx = self.k_of(ix);
                let far = (kx.abs() + h).hypot(ky.abs() + h);
                let near = (kx.abs() - h).max(0.0).hypot((ky.abs() - h).max(0.0));
                let w = if far <= k_max {
                    1.0
                } else if near >= k_max {
                    continue;
                } else {
                    circle_rect_area(0.0, 0.0, k_max, kx - h, kx + h, ky - h, ky + h)
                        / (self.dk * self.dk)
                };
                if w > 0.0 {
                    f(kx, ky, self.get(ix, iy), w);
                }
            }
        }
    }

    /// Power inside |k| ≤ k_max.
    pub fn disk_power(&self, k_max: f64) -> f64 {
        let mut p = 0.0;
        self.for_each_in_disk(k_max, |_, _, a, w| p += w * a.norm_sqr());
        p * self.dk * self.dk
    }

    pub fn light_cone_power(&self) -> f64 {
        self.disk_power(self.k0)
    }

    /// Amplitude at k = 0.
    pub fn on_axis(&self) -> Complex64 {
        self.get(self.n / 2, self.n / 2)
    }

    /// Magnitude map cropped to |kx|, |ky| ≤ k_max, one row per point.
    pub fn write_csv<W: Write>(&self, mut w: W, k_max: f64) -> std::io::Result<()> {
        writeln!(w, "# dk_per_nm={},k0_per_nm={},n={}", self.dk, self.k0, self.n)?;
        writeln!(w, "kx_per_nm,ky_per_nm,kx_over_k0,ky_over_k0,magnitude")?;
        let r = self.window(k_max);
        for iy in r.clone() {
            for ix in r.clone() {
                let (kx, ky) = (self.k_of(ix), self.k_of(iy));
                if kx.abs() <= k_max && ky.abs() <= k_max {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        kx,
                        ky,
                        kx / self.k0,
                        ky / self.k0,
                        self.get(ix, iy).norm()
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Scatterers for every perturbation annulus of `design`, sampling the mode
/// at the host-hole centers. The footprint width is the host hole radius and
/// the slab permittivity is `mode.n_eff²`.
pub fn scatterers_for(
    mode: &ResonanceResult,
    design: &CavityDesign,
    coupling: Complex64,
) -> Result<Vec<Scatterer>, FarfieldError> {
    let m = &mode.mode_field;
    let (hx, hy) = (m.x_of(m.nx - 1), m.y_of(m.ny - 1));
    let d_eps = 1.0 - mode.n_eff * mode.n_eff;
    let mut out = Vec::new();
    for (_, hole, width) in design.perturbation_sites() {
        if hole.x_nm.abs() >= hx.min(-m.x_of(0)) || hole.y_nm.abs() >= hy.min(-m.y_of(0)) {
            return Err(FarfieldError::GeometryMismatch(format!(
                "host hole {:?} lies outside the mode grid",
                hole.site
            )));
        }
        let ix = (m.origin.0 as f64 + hole.x_nm / m.dx).round() as usize;
        let iy = (m.origin.1 as f64 + hole.y_nm / m.dx).round() as usize;
        if *mode.epsilon.get(ix, iy) > 1.0 + 1e-9 {
            return Err(FarfieldError::GeometryMismatch(format!(
                "host hole {:?} is not air in the mode's permittivity map",
                hole.site
            )));
        }
        let e = m.sample(hole.x_nm, hole.y_nm).ok_or_else(|| {
            FarfieldError::GeometryMismatch(format!("cannot sample the mode at {:?}", hole.site))
        })?;
        out.push(Scatterer {
            position_nm: (hole.x_nm, hole.y_nm),
            amplitude: coupling * d_eps * width * e,
            extent_nm: hole.radius_nm,
        });
    }
    Ok(out)
}

/// Adds Gaussian scatterer footprints to `base`.
pub fn add_scatterers(base: &Map2<Complex64>, scatterers: &[Scatterer]) -> Map2<Complex64> {
    let mut out = base.clone();
    for s in scatterers {
        let reach = 6.0 * s.extent_nm;
        let inv = 1.0 / (2.0 * s.extent_nm * s.extent_nm);
        let ix0 = ((s.position_nm.0 - reach) / out.dx + out.origin.0 as f64).floor().max(0.0) as usize;
        let ix1 = ((s.position_nm.0 + reach) / out.dx + out.origin.0 as f64).ceil().max(0.0) as usize;
        let iy0 = ((s.position_nm.1 - reach) / out.dx + out.origin.1 as f64).floor().max(0.0) as usize;
        let iy1 = ((s.position_nm.1 + reach) / out.dx + out.origin.1 as f64).ceil().max(0.0) as usize;
        for iy in iy0..=iy1.min(out.ny - 1) {
            let dy = out.y_of(iy) - s.position_nm.1;
            for ix in ix0..=ix1.min(out.nx - 1) {
                let dx = out.x_of(ix) - s.position_nm.0;
                *out.get_mut(ix, iy) += s.amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    out
}

/// Mode field plus the scatterers of every perturbation layer in `design`.
pub fn compose_aperture(
    mode: &ResonanceResult,
    design: &CavityDesign,
    coupling: Complex64,
) -> Result<ApertureField, FarfieldError> {
    let sc = scatterers_for(mode, design, coupling)?;
    Ok(ApertureField {
        field: add_scatterers(&mode.mode_field, &sc),
        lambda_nm: mode.lambda_cav_nm,
    })
}

fn fft_rows(buf: &mut [Complex64], n: usize) {
    let fft = FftPlanner::new().plan_fft_forward(n);
    buf.par_chunks_mut(n).for_each(|row| fft.process(row));
}

fn transpose(buf: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = buf[j * n + i];
        }
    });
    out
}

/// Centered, Parseval-normalized 2D spectrum of `aperture` on a square grid
/// of at least `pad_factor` times the larger aperture dimension.
pub fn to_kspace(aperture: &ApertureField, pad_factor: f64) -> Result<KSpectrum, FarfieldError> {
    if !(pad_factor >= 2.0) {
        return Err(FarfieldError::InvalidInput(format!(
            "zero padding factor {pad_factor} below 2"
        )));
    }
    let f = &aperture.field;
    let n = ((pad_factor * f.nx.max(f.ny) as f64).ceil() as usize).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    // The cavity center goes to index 0 so spectral phases refer to it.
    for iy in 0..f.ny {
        let jy = (iy as i64 - f.origin.1 as i64).rem_euclid(n as i64) as usize;
        for ix in 0..f.nx {
            let jx = (ix as i64 - f.origin.0 as i64).rem_euclid(n as i64) as usize;
            buf[jy * n + jx] = *f.get(ix, iy);
        }
    }
    fft_rows(&mut buf, n);
    let mut t = transpose(&buf, n);
    fft_rows(&mut t, n);
    let spec = transpose(&t, n);
    let scale = f.dx * f.dx / (2.0 * PI);
    let h = n / 2;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); n * n];
    amplitudes.par_chunks_mut(n).enumerate().for_each(|(iy, row)| {
        let sy = (iy + h) % n;
        for (ix, v) in row.iter_mut().enumerate() {
            *v = spec[sy * n + (ix + h) % n] * scale;
        }
    });
    Ok(KSpectrum {
        n,
        dk: 2.0 * PI / (n as f64 * f.dx),
        k0: units::wavenumber(aperture.lambda_nm),
        amplitudes,
    })
}

/// Fraction of light-cone power inside the cone |k| ≤ na·k0.
pub fn collection_efficiency(spec: &KSpectrum, na: f64) -> Result<f64, FarfieldError> {
    if !(na > 0.0 && na <= 1.0) {
        return Err(FarfieldError::InvalidInput(format!("NA {na} outside (0, 1]")));
    }
    if spec.k0 < spec.dk {
        return Err(FarfieldError::EmptyLightCone);
    }
    let total = spec.light_cone_power();
    if !(total > 0.0) {
        return Err(FarfieldError::EmptyLightCone);
    }
    if na == 1.0 {
        return Ok(1.0);
    }
    Ok(spec.disk_power(na * spec.k0) / total)
}

fn overlap(spec: &KSpectrum, k_na: f64, waist: f64) -> f64 {
    let c = waist * waist / 4.0;
    let (mut ag, mut aa, mut gg) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    spec.for_each_in_disk(k_na, |kx, ky, a, w| {
        let g = (-(kx * kx + ky * ky) * c).exp();
        ag += a * (g * w);
        aa += w * a.norm_sqr();
        gg += w * g * g;
    });
    (ag.norm_sqr() / (aa * gg)).clamp(0.0, 1.0)
}

/// Overlap of the NA-truncated spectrum with the Gaussian fiber mode, both
/// restricted to the lens cone. With `best_waist` the waist is optimized and
/// the optimum returned alongside.
pub fn fiber_coupling(
    spec: &KSpectrum,
    fiber: &FiberMode,
    best_waist: bool,
) -> Result<(f64, f64), FarfieldError> {
    fiber.validate()?;
    let k_na = fiber.na_lens * spec.k0;
    if spec.disk_power(k_na) <= 0.0 {
        return Err(FarfieldError::ZeroField);
    }
    if !best_waist {
        return Ok((overlap(spec, k_na, fiber.waist_nm), fiber.waist_nm));
    }
    // Coarse log scan, then golden-section refinement around the best point.
    let w_ref = 2.0 / k_na;
    let (lo, hi) = ((0.05 * w_ref).ln(), (50.0 * w_ref).ln());
    let m = 80;
    let grid: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|l| overlap(spec, k_na, l.exp())).collect();
    let best = (0..=m).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(m)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |l: f64| overlap(spec, k_na, l.exp());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let l = 0.5 * (a + b);
    let (eta, w) = (f(l), l.exp());
    if vals[best] > eta {
        Ok((vals[best], grid[best].exp()))
    } else {
        Ok((eta, w))
    }
}

/// Lens and fiber efficiencies of one spectrum; `fiber.waist_nm` is used
/// as given unless `best_waist` is set.
pub fn collect(
    spec: &KSpectrum,
    fiber: &FiberMode,
    best_waist: bool,
) -> Result<CollectionResult, FarfieldError> {
    let eta_lens = collection_efficiency(spec, fiber.na_lens)?;
    let (eta_smf, waist_nm) = fiber_coupling(spec, fiber, best_waist)?;
    Ok(CollectionResult {
        na: fiber.na_lens,
        eta_lens,
        eta_smf,
        eta_smf_total: eta_lens * eta_smf,
        waist_nm,
    })
}

/// Quality factor from in-plane and radiative loss, with the radiated power
/// taken as the light-cone power and `Q_rad = κ·U / P_lc`.
pub fn total_q(q_inplane: f64, kappa: f64, energy: f64, p_light_cone: f64) -> f64 {
    let inv = 1.0 / q_inplane + p_light_cone / (kappa * energy);
    1.0 / inv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QTargets {
    pub unperturbed: f64,
    pub perturbed: f64,
}

impl Default for QTargets {
    fn default() -> Self {
        Self {
            unperturbed: 11_000.0,
            perturbed: 8_500.0,
        }
    }
}

/// Outcome of fitting the radiative scale κ and the scatterer coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kappa: f64,
    pub coupling: Complex64,
    pub q_unperturbed: f64,
    pub q_perturbed: f64,
}

/// Splits the light-cone power of `mode + c·scatterers(1)` into the
/// quadratic form `p0 + 2Re(c·x) + |c|²p1`.
fn light_cone_form(
    mode: &ResonanceResult,
    design: &CavityDesign,
    pad_factor: f64,
) -> Result<(f64, Complex64, f64), FarfieldError> {
    let base = ApertureField {
        field: mode.mode_field.clone(),
        lambda_nm: mode.lambda_cav_nm,
    };
    let sc = scatterers_for(mode, design, Complex64::new(1.0, 0.0))?;
    let zero = mode.mode_field.map(|_| Complex64::new(0.0, 0.0));
    let unit = ApertureField {
        field: add_scatterers(&zero, &sc),
        lambda_nm: mode.lambda_cav_nm,
    };
    let a = to_kspace(&base, pad_factor)?;
    let b = to_kspace(&unit, pad_factor)?;
    let (mut p0, mut x, mut p1) = (0.0, Complex64::new(0.0, 0.0), 0.0);
    let h = a.n / 2;
    a.for_each_in_disk(a.k0, |kx, ky, av, w| {
        let ix = (kx / a.dk).round() as i64 + h as i64;
        let iy = (ky / a.dk).round() as i64 + h as i64;
        let bv = b.get(ix as usize, iy as usize);
        p0 += w * av.norm_sqr();
        x += bv * av.conj() * w;
        p1 += w * bv.norm_sqr();
    });
    let dk2 = a.dk * a.dk;
    Ok((p0 * dk2, x * dk2, p1 * dk2))
}

/// Fits κ so the unperturbed total Q hits `targets.unperturbed`, then a real
/// positive coupling so the perturbed total Q hits `targets.perturbed`.
///
/// `mode` is the unperturbed resonance; the perturbed aperture is that mode
/// plus the scatterers of `perturbed_design`, and `q_inplane_perturbed` is the
/// solver Q of the perturbed geometry.
pub fn calibrate_coupling(
    mode: &ResonanceResult,
    q_inplane_perturbed: f64,
    perturbed_design: &CavityDesign,
    targets: &QTargets,
    pad_factor: f64,
) -> Result<Calibration, FarfieldError> {
    if !(targets.perturbed > 0.0 && targets.perturbed < targets.unperturbed) {
        return Err(FarfieldError::InvalidInput(
            "targets must satisfy 0 < perturbed < unperturbed".into(),
        ));
    }
    if mode.q_factor <= targets.unperturbed {
        return Err(FarfieldError::Calibration(format!(
            "in-plane Q {:.0} of the unperturbed mode is already below the target {:.0}",
            mode.q_factor, targets.unperturbed
        )));
    }
    let (p0, x, p1) = light_cone_form(mode, perturbed_design, pad_factor)?;
    if !(p0 > 0.0) {
        return Err(FarfieldError::EmptyLightCone);
    }
    if !(p1 > 0.0) {
        return Err(FarfieldError::Calibration("design has no perturbation layers".into()));
    }
    let u = mode.energy_integral();
    let kappa = p0 / (u * (1.0 / targets.unperturbed - 1.0 / mode.q_factor));
    let q_of = |m: f64| {
        let p = p0 + 2.0 * m * x.re + m * m * p1;
        total_q(q_inplane_perturbed, kappa, u, p)
    };
    let (mut lo, mut hi) = (0.0, 1e-6);
    if q_of(lo) <= targets.perturbed {
        return Err(FarfieldError::Calibration(format!(
            "perturbed Q {:.0} is already below the target without scatterers",
            q_of(lo)
        )));
    }
    while q_of(hi) > targets.perturbed {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(FarfieldError::Calibration("coupling did not bracket the target".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_of(mid) > targets.perturbed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    Ok(Calibration {
        kappa,
        coupling: Complex64::new(m, 0.0),
        q_unperturbed: total_q(mode.q_factor, kappa, u, p0),
        q_perturbed: q_of(m),
    })
}

/// Total Q of a design whose solver Q is `q_inplane`, radiating through
/// `mode` plus the scatterers of `design` at the calibrated coupling.
pub fn modeled_q(
    mode: &ResonanceResult,
    q_inplane: f64,
    design: &CavityDesign,
    calibration: &Calibration,
    pad_factor: f64,
) -> Result<f64, FarfieldError> {
    let ap = compose_aperture(mode, design, calibration.coupling)?;
    let p = to_kspace(&ap, pad_factor)?.light_cone_power();
    Ok(total_q(q_inplane, calibration.kappa, mode.energy_integral(), p))
}
