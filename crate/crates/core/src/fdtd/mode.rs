use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    find_resonance, FdtdError, Grid2D, Probe, ProbeSeries, Resonance, ResonanceOptions,
    Simulation, SourceSpec,
};
use crate::grid::Map2;

/// Resonant mode of a cavity simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceResult {
    pub lambda_cav_nm: f64,
    pub q_factor: f64,
    /// Cell-centered Ey phasor at resonance, scaled so the largest-magnitude
    /// cell is exactly `1 + 0i`.
    pub mode_field: Map2<Complex64>,
    /// Cell-centered Ex phasor with the same scaling.
    pub mode_field_x: Map2<Complex64>,
    /// Relative permittivity on the same cells.
    pub epsilon: Map2<f64>,
    /// `[Σε|E|²dA / max ε|E|²] / (λ/n_eff)²`.
    pub v_mode_norm: f64,
    pub n_eff: f64,
    pub resonance: Resonance,
}

impl ResonanceResult {
    /// Electric energy density `ε|E|²` at each cell, in mode-field units.
    pub fn energy_density(&self) -> Map2<f64> {
        let data = self
            .mode_field
            .data
            .iter()
            .zip(&self.mode_field_x.data)
            .zip(&self.epsilon.data)
            .map(|((ey, ex), eps)| eps * (ey.norm_sqr() + ex.norm_sqr()))
            .collect();
        Map2 {
            nx: self.mode_field.nx,
            ny: self.mode_field.ny,
            dx: self.mode_field.dx,
            origin: self.mode_field.origin,
            data,
        }
    }

    /// Stored-energy integral `Σ ε|E|² dA` (nm², mode-field units).
    pub fn energy_integral(&self) -> f64 {
        self.energy_density().data.iter().sum::<f64>() * self.mode_field.dx.powi(2)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = &self.mode_field;
        writeln!(
            w,
            "# dx_nm={},lambda_cav_nm={},q={},nx={},ny={},origin_ix={},origin_iy={}",
            m.dx, self.lambda_cav_nm, self.q_factor, m.nx, m.ny, m.origin.0, m.origin.1
        )?;
        writeln!(w, "ix,iy,re,im")?;
        for iy in 0..m.ny {
            for ix in 0..m.nx {
                let v = m.get(ix, iy);
                writeln!(w, "{},{},{},{}", ix, iy, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeOptions {
    pub source_wavelength_nm: f64,
    pub source_bandwidth_nm: f64,
    /// Steps recorded after the source turns off.
    pub ringdown_steps: usize,
    /// Steps over which the resonant field is Fourier-accumulated.
    pub dft_steps: usize,
    pub n_eff: f64,
    pub resonance: ResonanceOptions,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        Self {
            source_wavelength_nm: 900.0,
            source_bandwidth_nm: 120.0,
            ringdown_steps: 24_000,
            dft_steps: 4_000,
            n_eff: 2.8,
            resonance: ResonanceOptions {
                settle_steps: 2_000,
                ..ResonanceOptions::default()
            },
        }
    }
}

/// Probe cells near the grid center, on and off the symmetry axes.
pub fn default_probes(grid: &Grid2D) -> Vec<Probe> {
    let (cx, cy) = grid.center();
    vec![
        Probe::ey(cx, cy),
        Probe::ey(cx + 3, cy + 1),
        Probe::ey(cx.saturating_sub(5), cy),
    ]
}

fn finish(
    grid: &Grid2D,
    fx: Vec<Complex64>,
    fy: Vec<Complex64>,
    resonance: &Resonance,
    n_eff: f64,
) -> ResonanceResult {
    let (nx, ny, dx) = (grid.width, grid.height, grid.dx_nm);
    let (kmax, _) = fy
        .iter()
        .enumerate()
        .fold((0, -1.0), |acc, (k, v)| {
            let a = v.norm_sqr();
            if a > acc.1 { (k, a) } else { acc }
        });
    let scale = if fy[kmax].norm_sqr() > 0.0 {
        Complex64::new(1.0, 0.0) / fy[kmax]
    } else {
        Complex64::new(1.0, 0.0)
    };
    let ey: Vec<Complex64> = fy.iter().map(|v| v * scale).collect();
    let ex: Vec<Complex64> = fx.iter().map(|v| v * scale).collect();
    let p = grid.pml_cells;
    let mut sum = 0.0;
    let mut peak: f64 = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            if grid.in_pml(i, j) && p > 0 {
                continue;
            }
            let k = j * nx + i;
            let u = grid.epsilon[k] * (ey[k].norm_sqr() + ex[k].norm_sqr());
            sum += u;
            peak = peak.max(u);
        }
    }
    let lambda = resonance.lambda_nm;
    let v_mode = if peak > 0.0 {
        sum * dx * dx / peak / (lambda / n_eff).powi(2)
    } else {
        0.0
    };
    ResonanceResult {
        lambda_cav_nm: lambda,
        q_factor: resonance.q_factor,
        mode_field: Map2::from_vec(nx, ny, dx, ey),
        mode_field_x: Map2::from_vec(nx, ny, dx, ex),
        epsilon: Map2::from_vec(nx, ny, dx, grid.epsilon.clone()),
        v_mode_norm: v_mode,
        n_eff,
        resonance: resonance.clone(),
    }
}

/// Re-runs the simulation and Fourier-accumulates the field at the resonance
/// over `dft_steps` steps starting at `start_step`.
pub fn extract_mode(
    grid: &Grid2D,
    source: &SourceSpec,
    resonance: &Resonance,
    start_step: usize,
    dft_steps: usize,
    n_eff: f64,
) -> Result<ResonanceResult, FdtdError> {
    let mut sim = Simulation::new(grid, source)?;
    let start = start_step.max(source.turn_off_step(grid));
    sim.run(start, &[])?;
    let (fx, fy) = sim.accumulate_dft(resonance.omega, dft_steps)?;
    Ok(finish(grid, fx, fy, resonance, n_eff))
}

/// Excites the grid with a centered Ey pulse, finds the resonance in the
/// ring-down and extracts its mode profile in one continuous run.
pub fn characterize(
    grid: &Grid2D,
    opts: &CharacterizeOptions,
) -> Result<(ProbeSeries, ResonanceResult), FdtdError> {
    let source = SourceSpec::centered(grid, opts.source_wavelength_nm, opts.source_bandwidth_nm);
    let mut sim = Simulation::new(grid, &source)?;
    let probes = default_probes(grid);
    let off = source.turn_off_step(grid);
    let steps = off + opts.ringdown_steps;
    let samples = sim.run(steps, &probes)?;
    let series = ProbeSeries {
        positions: probes,
        samples,
        dt_s: grid.dt_seconds(),
        dt_norm: grid.dt(),
        source_off_step: off,
    };
    let resonance = find_resonance(&series, &opts.resonance)?;
    let (fx, fy) = sim.accumulate_dft(resonance.omega, opts.dft_steps)?;
    Ok((series, finish(grid, fx, fy, &resonance, opts.n_eff)))
}
