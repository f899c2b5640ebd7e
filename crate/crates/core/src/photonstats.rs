//! Monte-Carlo pulsed single-photon source and Hanbury-Brown–Twiss
//! correlator.
//!
//! Pulses are simulated in fixed blocks; each block draws from its own
//! ChaCha8 stream keyed by (seed, block index), so click records do not
//! depend on the number of worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units;

/// Pulses per random stream.
pub const BLOCK_PULSES: u64 = 1 << 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("channel {0} has no clicks")]
    EmptyChannel(Channel),
    #[error("mean side-peak area {0:.1} is below 100 counts")]
    InsufficientStatistics(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseTrainSpec {
    pub rep_rate_hz: f64,
    pub pulse_fwhm_ps: f64,
    pub n_pulses: u64,
}

impl Default for PulseTrainSpec {
    fn default() -> Self {
        Self {
            rep_rate_hz: 80e6,
            pulse_fwhm_ps: 3.5,
            n_pulses: 1_000_000,
        }
    }
}

impl PulseTrainSpec {
    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }

    /// Latest first-emission delay after which no re-excitation happens.
    pub fn reexcite_cutoff_ps(&self) -> f64 {
        2.0 * self.pulse_fwhm_ps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterDynamics {
    pub tau_ps: f64,
    pub p_excite: f64,
    pub p_reexcite: f64,
    /// Mean background photons per pulse, before detection.
    pub background_mean: f64,
    pub qd_wavelength_nm: f64,
    pub cavity_wavelength_nm: f64,
    pub cavity_q: f64,
    /// Fraction of dot photons emitted through the cavity line (tagged with
    /// a cavity wavelength).
    pub cavity_feeding: f64,
}

impl Default for EmitterDynamics {
    fn default() -> Self {
        Self {
            tau_ps: 45.0,
            p_excite: 1.0,
            p_reexcite: 0.0,
            background_mean: 0.0,
            qd_wavelength_nm: 920.0,
            cavity_wavelength_nm: 920.0,
            cavity_q: 8500.0,
            cavity_feeding: 0.0,
        }
    }
}

impl EmitterDynamics {
    /// Background photon decay time, the cavity photon lifetime.
    pub fn tau_bg_ps(&self) -> f64 {
        units::cavity_photon_lifetime_ps(self.cavity_q, self.cavity_wavelength_nm)
    }

    /// Half width of the cavity line in nm.
    pub fn cavity_hwhm_nm(&self) -> f64 {
        self.cavity_wavelength_nm / (2.0 * self.cavity_q)
    }
}

/// How detected photons reach the two channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// 50/50 beam splitter onto arms A and B.
    Hbt,
    /// Grating: photons nearer the dot line go to QD, the rest to CAV.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub jitter_fwhm_ps: f64,
    pub efficiency: f64,
    pub dead_time_ns: f64,
    pub routing: Routing,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            jitter_fwhm_ps: 300.0,
            efficiency: 0.1,
            dead_time_ns: 10.0,
            routing: Routing::Hbt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
    #[serde(rename = "QD")]
    Qd,
    #[serde(rename = "CAV")]
    Cav,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::A => "A",
            Channel::B => "B",
            Channel::Qd => "QD",
            Channel::Cav => "CAV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub channel: Channel,
    pub timestamp_ps: f64,
    pub wavelength_nm: f64,
}

/// Clicks sorted by time, then channel.
pub fn write_clicks_csv<W: Write>(clicks: &[ClickRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "channel,timestamp_ps,wavelength_nm")?;
    for c in clicks {
        writeln!(w, "{},{:.3},{:.5}", c.channel, c.timestamp_ps, c.wavelength_nm)?;
    }
    Ok(())
}

pub fn validate(p: &PulseTrainSpec, d: &EmitterDynamics, det: &DetectorSpec) -> Result<(), StatsError> {
    let bad = |m: String| Err(StatsError::Config(m));
    if !(p.rep_rate_hz > 0.0) || !(p.pulse_fwhm_ps >= 0.0) {
        return bad("rep rate must be positive and pulse width non-negative".into());
    }
    if p.n_pulses < 10_000 {
        return bad(format!("need at least 10^4 pulses, got {}", p.n_pulses));
    }
    if !(d.tau_ps > 0.0) {
        return bad("lifetime must be positive".into());
    }
    for (name, v) in [
        ("p_excite", d.p_excite),
        ("p_reexcite", d.p_reexcite),
        ("cavity_feeding", d.cavity_feeding),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return bad(format!("{name} must lie in [0, 1]"));
        }
    }
    if !(d.background_mean >= 0.0) {
        return bad("background mean must be non-negative".into());
    }
    if !(d.cavity_q > 0.0 && d.cavity_wavelength_nm > 0.0 && d.qd_wavelength_nm > 0.0) {
        return bad("cavity Q and wavelengths must be positive".into());
    }
    let slowest = d.tau_ps.max(if d.background_mean > 0.0 { d.tau_bg_ps() } else { 0.0 });
    if p.period_ps() < 5.0 * slowest {
        return bad(format!(
            "rep period {:.1} ps is shorter than 5 lifetimes ({:.1} ps)",
            p.period_ps(),
            5.0 * slowest
        ));
    }
    if !(det.efficiency > 0.0 && det.efficiency <= 1.0) {
        return bad("detector efficiency must lie in (0, 1]".into());
    }
    if !(det.jitter_fwhm_ps >= 0.0) || !(det.dead_time_ns >= 0.0) {
        return bad("jitter and dead time must be non-negative".into());
    }
    Ok(())
}

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

fn simulate_block(
    block: u64,
    pulses: &PulseTrainSpec,
    d: &EmitterDynamics,
    det: &DetectorSpec,
    seed: u64,
) -> Vec<ClickRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let first = block * BLOCK_PULSES;
    let last = (first + BLOCK_PULSES).min(pulses.n_pulses);
    let period = pulses.period_ps();
    let cutoff = pulses.reexcite_cutoff_ps();
    let decay = Exp::new(1.0 / d.tau_ps).unwrap();
    let bg_decay = Exp::new(1.0 / d.tau_bg_ps()).unwrap();
    let bg_count = (d.background_mean > 0.0).then(|| Poisson::new(d.background_mean).unwrap());
    let cav_line = Cauchy::new(d.cavity_wavelength_nm, d.cavity_hwhm_nm()).unwrap();
    let jitter = Normal::new(0.0, det.jitter_fwhm_ps / FWHM_PER_SIGMA).unwrap();

    let mut out = Vec::new();
    let emit = |rng: &mut ChaCha8Rng, t: f64, lambda: f64, out: &mut Vec<ClickRecord>| {
        // Every photon draws the same numbers whether or not it is detected.
        let arm = rng.random::<f64>();
        let hit = rng.random::<f64>() < det.efficiency;
        let dt = jitter.sample(rng);
        if !hit {
            return;
        }
        let channel = match det.routing {
            Routing::Hbt => {
                if arm < 0.5 {
                    Channel::A
                } else {
                    Channel::B
                }
            }
            Routing::Spectral => {
                if (lambda - d.qd_wavelength_nm).abs() <= (lambda - d.cavity_wavelength_nm).abs() {
                    Channel::Qd
                } else {
                    Channel::Cav
                }
            }
        };
        out.push(ClickRecord {
            channel,
            timestamp_ps: t + dt,
            wavelength_nm: lambda,
        });
    };
    let dot_lambda = |rng: &mut ChaCha8Rng| {
        if d.cavity_feeding > 0.0 && rng.random::<f64>() < d.cavity_feeding {
            cav_line.sample(rng)
        } else {
            d.qd_wavelength_nm
        }
    };
    for k in first..last {
        let t0 = k as f64 * period;
        if rng.random::<f64>() < d.p_excite {
            let t1 = decay.sample(&mut rng);
            let l1 = dot_lambda(&mut rng);
            emit(&mut rng, t0 + t1, l1, &mut out);
            if t1 < cutoff && rng.random::<f64>() < d.p_reexcite {
                let t2 = t1 + decay.sample(&mut rng);
                let l2 = dot_lambda(&mut rng);
                emit(&mut rng, t0 + t2, l2, &mut out);
            }
        }
        if let Some(pois) = &bg_count {
            let n = pois.sample(&mut rng) as u64;
            for _ in 0..n {
                let t = bg_decay.sample(&mut rng);
                let l = cav_line.sample(&mut rng);
                emit(&mut rng, t0 + t, l, &mut out);
            }
        }
    }
    out
}

/// Simulates the pulse train and returns detected clicks sorted by time.
pub fn simulate_emission(
    pulses: &PulseTrainSpec,
    dynamics: &EmitterDynamics,
    detector: &DetectorSpec,
    seed: u64,
) -> Result<Vec<ClickRecord>, StatsError> {
    validate(pulses, dynamics, detector)?;
    let blocks = pulses.n_pulses.div_ceil(BLOCK_PULSES);
    let parts: Vec<Vec<ClickRecord>> = (0..blocks)
        .into_par_iter()
        .map(|b| simulate_block(b, pulses, dynamics, detector, seed))
        .collect();
    let mut clicks: Vec<ClickRecord> = parts.into_iter().flatten().collect();
    clicks.par_sort_by(|a, b| {
        a.timestamp_ps
            .total_cmp(&b.timestamp_ps)
            .then(a.channel.cmp(&b.channel))
            .then(a.wavelength_nm.total_cmp(&b.wavelength_nm))
    });
    Ok(apply_dead_time(clicks, detector.dead_time_ns * 1e3))
}

fn apply_dead_time(clicks: Vec<ClickRecord>, dead_ps: f64) -> Vec<ClickRecord> {
    if dead_ps <= 0.0 {
        return clicks;
    }
    let mut last: [f64; 4] = [f64::NEG_INFINITY; 4];
    clicks
        .into_iter()
        .filter(|c| {
            let i = c.channel as usize;
            if c.timestamp_ps - last[i] < dead_ps {
                return false;
            }
            last[i] = c.timestamp_ps;
            true
        })
        .collect()
}

/// Keeps clicks with `|λ − center| ≤ width/2`.
pub fn spectral_filter(clicks: &[ClickRecord], center_nm: f64, width_nm: f64) -> Vec<ClickRecord> {
    clicks
        .iter()
        .filter(|c| (c.wavelength_nm - center_nm).abs() <= 0.5 * width_nm)
        .copied()
        .collect()
}

/// Exact g²(0) of the generative model before detection: the ratio of the
/// mean number of same-pulse photon pairs to the squared mean photon number.
pub fn expected_g2(pulses: &PulseTrainSpec, d: &EmitterDynamics) -> f64 {
    let early = 1.0 - (-pulses.reexcite_cutoff_ps() / d.tau_ps).exp();
    let q = d.p_reexcite * early;
    let n_dot = d.p_excite * (1.0 + q);
    let pairs_dot = 2.0 * d.p_excite * q;
    let mu = d.background_mean;
    let mean = n_dot + mu;
    (pairs_dot + mu * mu + 2.0 * n_dot * mu) / (mean * mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: f64,
    /// Bins are centered on `k·bin_width` for `|k| ≤ half_bins`.
    pub half_bins: usize,
    pub counts: Vec<u64>,
    pub n_pulses: u64,
}

impl CorrelationHistogram {
    pub fn window_ps(&self) -> f64 {
        self.half_bins as f64 * self.bin_width_ps
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        (i as f64 - self.half_bins as f64) * self.bin_width_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_center_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{c}", self.bin_center_ps(i))?;
        }
        Ok(())
    }
}

fn times(clicks: &[ClickRecord], ch: Channel) -> Vec<f64> {
    let mut t: Vec<f64> = clicks.iter().filter(|c| c.channel == ch).map(|c| c.timestamp_ps).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// All-pairs histogram of `t_start − t_stop` within ±`window_ps`.
pub fn correlate_times(
    start: &[f64],
    stop: &[f64],
    bin_width_ps: f64,
    window_ps: f64,
    n_pulses: u64,
) -> Result<CorrelationHistogram, StatsError> {
    if !(bin_width_ps > 0.0) || !(window_ps >= bin_width_ps) {
        return Err(StatsError::Config("need 0 < bin width ≤ window".into()));
    }
    let half = (window_ps / bin_width_ps).round() as usize;
    let nb = 2 * half + 1;
    let edge = (half as f64 + 0.5) * bin_width_ps;
    let counts = start
        .par_chunks(4096)
        .map(|chunk| {
            let mut h = vec![0u64; nb];
            let mut lo = stop.partition_point(|&s| s < chunk[0] - edge);
            for &a in chunk {
                while lo < stop.len() && stop[lo] < a - edge {
                    lo += 1;
                }
                let mut j = lo;
                while j < stop.len() && stop[j] <= a + edge {
                    let k = ((a - stop[j]) / bin_width_ps).round() as i64 + half as i64;
                    if (0..nb as i64).contains(&k) {
                        h[k as usize] += 1;
                    }
                    j += 1;
                }
            }
            h
        })
        .reduce(
            || vec![0u64; nb],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(CorrelationHistogram {
        bin_width_ps,
        half_bins: half,
        counts,
        n_pulses,
    })
}

/// HBT histogram of delays `t_A − t_B`.
pub fn hbt_correlate(
    clicks: &[ClickRecord],
    bin_width_ps: f64,
    window_ps: f64,
    n_pulses: u64,
) -> Result<CorrelationHistogram, StatsError> {
    let (a, b) = (times(clicks, Channel::A), times(clicks, Channel::B));
    if a.is_empty() {
        return Err(StatsError::EmptyChannel(Channel::A));
    }
    if b.is_empty() {
        return Err(StatsError::EmptyChannel(Channel::B));
    }
    correlate_times(&a, &b, bin_width_ps, window_ps, n_pulses)
}

/// Histogram of delays `t_QD − t_CAV` between two spectral channels. Clicks
/// are taken from the QD channel of `clicks_qd` and the CAV channel of
/// `clicks_cav`; pass the same record twice for one spectrally routed run.
pub fn cross_correlate(
    clicks_qd: &[ClickRecord],
    clicks_cav: &[ClickRecord],
    bin_width_ps: f64,
    window_ps: f64,
    n_pulses: u64,
) -> Result<CorrelationHistogram, StatsError> {
    let (a, b) = (times(clicks_qd, Channel::Qd), times(clicks_cav, Channel::Cav));
    if a.is_empty() {
        return Err(StatsError::EmptyChannel(Channel::Qd));
    }
    if b.is_empty() {
        return Err(StatsError::EmptyChannel(Channel::Cav));
    }
    correlate_times(&a, &b, bin_width_ps, window_ps, n_pulses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub g2_zero: f64,
    pub central_area: u64,
    /// (peak delay in ps, integrated counts) for every complete side peak.
    pub side_areas: Vec<(f64, u64)>,
    pub mean_side_area: f64,
    pub statistical_error: f64,
}

/// Central over mean side-peak area, each peak integrated over one period
/// centered on it; a bin on the boundary between two peaks counts toward the
/// one at lower delay.
pub fn g2_zero(hist: &CorrelationHistogram, rep_rate_hz: f64) -> Result<G2Result, StatsError> {
    let period = 1e12 / rep_rate_hz;
    let m_max = ((hist.window_ps() - 0.5 * period) / period).floor();
    if !(m_max >= 2.0) {
        return Err(StatsError::Config(format!(
            "window {:.0} ps holds fewer than four side peaks at period {period:.0} ps",
            hist.window_ps()
        )));
    }
    let m_max = m_max as i64;
    let mut areas = vec![0u64; (2 * m_max + 1) as usize];
    for (i, &c) in hist.counts.iter().enumerate() {
        let t = hist.bin_center_ps(i);
        // Peak m owns (mT − T/2, mT + T/2].
        let m = (t / period - 0.5).ceil() as i64;
        if m.abs() <= m_max {
            areas[(m + m_max) as usize] += c;
        }
    }
    let central = areas[m_max as usize];
    let side: Vec<(f64, u64)> = (-m_max..=m_max)
        .filter(|&m| m != 0)
        .map(|m| (m as f64 * period, areas[(m + m_max) as usize]))
        .collect();
    let mean = side.iter().map(|s| s.1 as f64).sum::<f64>() / side.len() as f64;
    if mean < 100.0 {
        return Err(StatsError::InsufficientStatistics(mean));
    }
    let c = central as f64;
    let g2 = c / mean;
    // Poisson counting on both areas; an empty central peak still carries
    // the one-count uncertainty.
    let err = (c.max(1.0) + c * c / (mean * side.len() as f64)).sqrt() / mean;
    Ok(G2Result {
        g2_zero: g2,
        central_area: central,
        side_areas: side,
        mean_side_area: mean,
        statistical_error: err,
    })
}
