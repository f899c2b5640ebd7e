//! Resonance wavelength and quality factor from a ring-down time series.
//!
//! The dominant peak inside the search window is located on a Hann-windowed,
//! zero-padded periodogram. The signal is then demodulated at that frequency
//! and boxcar-averaged over an integer number of periods, which keeps the
//! exponential decay rate of the selected mode intact while suppressing other
//! modes. The energy lifetime comes from a log-linear fit of the demodulated
//! envelope power, and `Q = ω·τ_E`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{FdtdError, ProbeSeries};
use crate::units;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceOptions {
    /// Wavelength range searched for the peak (nm).
    pub search_window_nm: (f64, f64),
    /// Steps skipped after the source turns off before analysis starts.
    pub settle_steps: usize,
    /// Peak-to-median spectral power ratio required inside the window.
    pub min_prominence: f64,
    /// RMS residual (in ln-energy) above which the decay is rejected.
    pub max_fit_residual: f64,
    /// Boxcar length of the demodulated envelope, in optical periods.
    pub envelope_periods: f64,
}

impl Default for ResonanceOptions {
    fn default() -> Self {
        Self {
            search_window_nm: (800.0, 1000.0),
            settle_steps: 0,
            min_prominence: 50.0,
            max_fit_residual: 0.05,
            envelope_periods: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub lambda_nm: f64,
    /// Angular frequency in normalized units (rad per nm of light travel).
    pub omega: f64,
    pub q_factor: f64,
    /// Energy decay time in seconds.
    pub tau_energy_s: f64,
    /// RMS residual of the log-linear energy fit.
    pub fit_residual: f64,
    pub prominence: f64,
    /// Linewidth-based Q when the record resolves the line.
    pub q_linewidth: Option<f64>,
    pub probe_index: usize,
}

struct Peak {
    probe: usize,
    omega: f64,
    prominence: f64,
}

fn hann_periodogram(signal: &[f64], nfft: usize, window: bool) -> Vec<f64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = (0..nfft)
        .map(|k| {
            if k < n {
                let w = if window && n > 1 {
                    0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos()
                } else {
                    1.0
                };
                Complex64::new(signal[k] * w, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(nfft).process(&mut buf);
    buf[..nfft / 2].iter().map(|c| c.norm_sqr()).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn locate_peak(
    records: &[&[f64]],
    dt: f64,
    window: (f64, f64),
) -> Result<Peak, FdtdError> {
    let n = records[0].len();
    let nfft = (4 * n).next_power_of_two();
    let d_omega = 2.0 * PI / (nfft as f64 * dt);
    let (lmin, lmax) = (window.0.min(window.1), window.0.max(window.1));
    let k_lo = ((2.0 * PI / lmax) / d_omega).ceil() as usize;
    let k_hi = (((2.0 * PI / lmin) / d_omega).floor() as usize).min(nfft / 2 - 1);
    if k_lo + 2 > k_hi {
        return Err(FdtdError::TooShort(
            "search window narrower than the frequency resolution".into(),
        ));
    }
    let mut best: Option<(usize, usize, f64, f64)> = None;
    for (p, rec) in records.iter().enumerate() {
        let power = hann_periodogram(rec, nfft, true);
        let band = &power[k_lo..=k_hi];
        let (kmax, pmax) = band
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        let med = median(band.to_vec());
        if best.is_none_or(|b| pmax > b.2) {
            best = Some((p, k_lo + kmax, pmax, med));
        }
    }
    let (probe, k, pmax, med) = best.expect("at least one probe");
    let prominence = if med > 0.0 {
        pmax / med
    } else if pmax > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(Peak {
        probe,
        omega: k as f64 * d_omega,
        prominence,
    })
}

/// Demodulated, Hann-weighted moving average at `omega`; returns (time,
/// complex average). A fixed window preserves the decay rate exactly.
fn envelope(signal: &[f64], dt: f64, omega: f64, box_len: usize, stride: usize) -> Vec<(f64, Complex64)> {
    let weights: Vec<f64> = (0..box_len)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * (k as f64 + 0.5) / box_len as f64).cos())
        .collect();
    let norm: f64 = weights.iter().sum();
    let mut out = Vec::new();
    let mut start = 0;
    while start + box_len <= signal.len() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, (&s, &w)) in signal[start..start + box_len].iter().zip(&weights).enumerate() {
            let t = (start + k) as f64 * dt;
            acc += s * w * Complex64::from_polar(1.0, -omega * t);
        }
        let tc = (start as f64 + 0.5 * (box_len as f64 - 1.0)) * dt;
        out.push((tc, acc / norm));
        start += stride;
    }
    out
}

/// Least-squares line; returns (slope, intercept, rms residual).
fn line_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icept = my - slope * mx;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - (icept + slope * p.0)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icept, rms)
}

fn unwrap_phases(env: &[(f64, Complex64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(env.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for (i, (t, z)) in env.iter().enumerate() {
        let a = z.arg();
        if i > 0 {
            let mut d = a - prev;
            while d > PI {
                d -= 2.0 * PI;
                offset -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
                offset += 2.0 * PI;
            }
        }
        prev = a;
        out.push((*t, a + offset));
    }
    out
}

fn linewidth_q(signal: &[f64], dt: f64, omega: f64) -> Option<f64> {
    let n = signal.len();
    let nfft = (8 * n).next_power_of_two();
    let power = hann_periodogram(signal, nfft, false);
    let d_omega = 2.0 * PI / (nfft as f64 * dt);
    let k0 = (omega / d_omega).round() as usize;
    if k0 == 0 || k0 >= power.len() - 1 {
        return None;
    }
    let peak = power[k0];
    let half = 0.5 * peak;
    let mut lo = k0;
    while lo > 0 && power[lo] > half {
        lo -= 1;
    }
    let mut hi = k0;
    while hi + 1 < power.len() && power[hi] > half {
        hi += 1;
    }
    if lo == 0 || hi + 1 == power.len() {
        return None;
    }
    // Linear interpolation of the half-power crossings.
    let cross = |a: usize, b: usize| {
        let (pa, pb) = (power[a], power[b]);
        a as f64 + (half - pa) / (pb - pa) * (b as f64 - a as f64)
    };
    let width_bins = cross(hi - 1, hi) - cross(lo + 1, lo);
    // A record that has not decayed gives a sinc² line of width ≈5.6/T;
    // require a clear margin above that.
    let gamma = width_bins * d_omega;
    if n as f64 * dt * gamma < 8.0 {
        return None;
    }
    Some(omega / gamma)
}

/// Locates the dominant resonance in the ring-down part of `series`.
pub fn find_resonance(
    series: &ProbeSeries,
    opts: &ResonanceOptions,
) -> Result<Resonance, FdtdError> {
    if series.samples.is_empty() {
        return Err(FdtdError::TooShort("no probes".into()));
    }
    let start = series.source_off_step + opts.settle_steps;
    if start + 16 >= series.len() {
        return Err(FdtdError::TooShort("no samples after source turn-off".into()));
    }
    let dt = series.dt_norm;
    let records: Vec<&[f64]> = series.samples.iter().map(|s| &s[start..]).collect();
    let n = records[0].len();

    let lambda_max = opts.search_window_nm.0.max(opts.search_window_nm.1);
    let cycles = n as f64 * dt / lambda_max;
    if cycles < 10.0 {
        return Err(FdtdError::TooShort(format!(
            "{cycles:.1} optical cycles after turn-off, need 10"
        )));
    }
    let peak = locate_peak(&records, dt, opts.search_window_nm)?;
    if !(peak.prominence >= opts.min_prominence) {
        return Err(FdtdError::NoResonance {
            prominence: peak.prominence,
        });
    }

    let signal = records[peak.probe];
    let period_steps = 2.0 * PI / (peak.omega * dt);
    let box_len = ((opts.envelope_periods * period_steps).round() as usize)
        .min(n / 4)
        .max(period_steps.ceil() as usize)
        .max(1);
    let stride = (box_len / 4).max(1);

    let mut omega = peak.omega;
    let mut env = envelope(signal, dt, omega, box_len, stride);
    if env.len() < 4 {
        return Err(FdtdError::TooShort("ring-down shorter than the envelope window".into()));
    }
    for _ in 0..2 {
        let phases = unwrap_phases(&env);
        let (slope, _, _) = line_fit(&phases);
        omega += slope;
        env = envelope(signal, dt, omega, box_len, stride);
    }

    let pmax = env.iter().map(|(_, z)| z.norm_sqr()).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = env
        .iter()
        .filter(|(_, z)| z.norm_sqr() > 1e-20 * pmax && z.norm_sqr() > 0.0)
        .map(|(t, z)| (*t, z.norm_sqr().ln()))
        .collect();
    if pts.len() < 4 {
        return Err(FdtdError::AmbiguousFit {
            residual: f64::INFINITY,
        });
    }
    let (slope, _, rms) = line_fit(&pts);
    if rms > opts.max_fit_residual || !(slope < 0.0) {
        return Err(FdtdError::AmbiguousFit { residual: rms });
    }
    let tau = -1.0 / slope;
    Ok(Resonance {
        lambda_nm: units::wavelength_from_angular(omega),
        omega,
        q_factor: omega * tau,
        tau_energy_s: units::light_nm_to_seconds(tau),
        fit_residual: rms,
        prominence: peak.prominence,
        q_linewidth: linewidth_q(signal, dt, omega),
        probe_index: peak.probe,
    })
}
