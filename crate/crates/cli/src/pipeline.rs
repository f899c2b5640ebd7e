//! Stage execution. Every output is produced in memory; the caller writes
//! them only once all requested stages have succeeded.

use nanocavity::geometry::{rasterize_epsilon, CavityDesign};
use nanocavity::photonstats::{
    cross_correlate, expected_g2, g2_zero, hbt_correlate, simulate_emission, write_clicks_csv, G2Result, Routing,
};
use nanocavity::purcell::{
    calibrate_lifetime, efficiency_ratio, ensemble_spectrum, lifetime_ps, wavelength_grid, EmitterParams,
};
use nanocavity::study::{analyze, design_name, solve_modes};
use nanocavity::units;
use serde_json::{json, Map, Value};

use crate::config::{CavityInput, Scenario, Stage};
use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Outputs {
    /// Relative path and content, in creation order.
    pub files: Vec<(String, Vec<u8>)>,
    pub metrics: Map<String, Value>,
}

impl Outputs {
    fn add(&mut self, path: String, body: Vec<u8>) {
        self.files.push((path, body));
    }
}

/// Line prepended to every CSV so each file carries its provenance.
fn header(s: &Scenario, seed: u64) -> Vec<u8> {
    format!("# scenario={} seed={seed}\n", s.name).into_bytes()
}

fn csv(s: &Scenario, seed: u64, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = header(s, seed);
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json values serialize");
    b.push(b'\n');
    b
}

pub fn execute(s: &Scenario, seed: u64) -> Result<Outputs, CliError> {
    let mut out = Outputs::default();
    let mut emission = s.emission.clone();
    let mut photons = s.photons.clone();

    if s.runs(Stage::Geometry) {
        let designs = s.study.ladder()?;
        geometry(s, seed, &designs, &mut out)?;
        if s.runs(Stage::Fdtd) {
            let modes = solve_modes(&s.study, &designs)?;
            fdtd(s, seed, &designs, &modes, &mut out)?;
            if s.runs(Stage::Farfield) {
                let r = analyze(&s.study, &designs, modes)?;
                let sel = match &s.select_design {
                    Some(n) => r.designs.iter().position(|d| &d.name == n).expect("validated name"),
                    None => r.designs.len() - 1,
                };
                let input = |k: usize| CavityInput {
                    lambda_cav_nm: r.designs[k].lambda_cav_nm,
                    q_factor: r.designs[k].q_total,
                    eta_lens: r.designs[k].collection.eta_lens,
                };
                emission.reference = input(0);
                emission.selected = input(sel);
                farfield(s, seed, &r, sel, &mut out)?;
            }
        }
    }

    if s.runs(Stage::Purcell) {
        let tau_on = purcell(s, seed, &emission, &mut out)?;
        photons.emitter.tau_ps = tau_on;
        photons.emitter.qd_wavelength_nm = emission.selected.lambda_cav_nm;
        photons.emitter.cavity_wavelength_nm = emission.selected.lambda_cav_nm;
        photons.emitter.cavity_q = emission.selected.q_factor;
    }

    if s.runs(Stage::Photonstats) {
        photon_stats(s, seed, &photons, &mut out)?;
    }
    Ok(out)
}

fn geometry(s: &Scenario, seed: u64, designs: &[CavityDesign], out: &mut Outputs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for d in designs {
        let name = design_name(d);
        let mut doc = header(s, seed);
        doc.extend(d.to_toml_string()?.into_bytes());
        out.add(format!("geometry/design_{name}.toml"), doc);
        let eps = rasterize_epsilon(d, &s.study.raster)?;
        out.add(format!("geometry/epsilon_{name}.csv"), csv(s, seed, |w| eps.write_csv(w))?);
        rows.push(json!({
            "name": name,
            "holes": d.holes().len(),
            "air_fraction": eps.air_fraction(),
        }));
    }
    out.metrics.insert("geometry".into(), json!({ "designs": rows }));
    Ok(())
}

fn fdtd(
    s: &Scenario,
    seed: u64,
    designs: &[CavityDesign],
    modes: &[nanocavity::fdtd::ResonanceResult],
    out: &mut Outputs,
) -> Result<(), CliError> {
    use std::io::Write;
    let gap = s.study.band_gap();
    let mut rows = Vec::new();
    let table = csv(s, seed, |w| {
        writeln!(w, "design,lambda_cav_nm,q_inplane,v_mode_norm,in_band_gap")?;
        for (d, m) in designs.iter().zip(modes) {
            let inside = gap.is_some_and(|g| g.contains_wavelength(m.lambda_cav_nm));
            writeln!(w, "{},{},{},{},{}", design_name(d), m.lambda_cav_nm, m.q_factor, m.v_mode_norm, inside)?;
        }
        Ok(())
    })?;
    out.add("fdtd/resonances.csv".into(), table);
    for (d, m) in designs.iter().zip(modes) {
        let name = design_name(d);
        out.add(format!("fdtd/mode_{name}.csv"), csv(s, seed, |w| m.write_csv(w))?);
        rows.push(json!({
            "name": name,
            "lambda_cav_nm": m.lambda_cav_nm,
            "q_inplane": m.q_factor,
            "v_mode_norm": m.v_mode_norm,
        }));
    }
    let gap = gap.map(|g| {
        let (short, long) = g.wavelength_range_nm();
        json!({ "short_nm": short, "long_nm": long })
    });
    out.metrics.insert("fdtd".into(), json!({ "band_gap": gap, "designs": rows }));
    Ok(())
}

fn farfield(
    s: &Scenario,
    seed: u64,
    r: &nanocavity::study::StudyResult,
    sel: usize,
    out: &mut Outputs,
) -> Result<(), CliError> {
    use std::io::Write;
    for (d, spec) in r.designs.iter().zip(&r.spectra) {
        out.add(
            format!("farfield/kspace_{}.csv", d.name),
            csv(s, seed, |w| spec.write_csv(w, spec.k0))?,
        );
    }
    let table = csv(s, seed, |w| {
        writeln!(w, "design,lambda_cav_nm,q_inplane,q_total,eta_lens,eta_smf,eta_smf_total,waist_nm")?;
        for d in &r.designs {
            let c = &d.collection;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                d.name, d.lambda_cav_nm, d.q_inplane, d.q_total, c.eta_lens, c.eta_smf, c.eta_smf_total, c.waist_nm
            )?;
        }
        Ok(())
    })?;
    out.add("farfield/collection.csv".into(), table);
    let d = &r.designs[sel];
    out.metrics.insert(
        "farfield".into(),
        json!({
            "calibration": {
                "kappa": r.calibration.kappa,
                "coupling": r.calibration.coupling.re,
            },
            "designs": r.designs,
            "selected": {
                "name": d.name,
                "lambda_cav_nm": d.lambda_cav_nm,
                "q_inplane": d.q_inplane,
                "q_total": d.q_total,
                "eta_lens": d.collection.eta_lens,
                "eta_smf": d.collection.eta_smf,
                "eta_smf_total": d.collection.eta_smf_total,
            },
        }),
    );
    Ok(())
}

/// Returns the on-resonance lifetime.
fn purcell(s: &Scenario, seed: u64, e: &crate::config::EmissionConfig, out: &mut Outputs) -> Result<f64, CliError> {
    use std::io::Write;
    let gamma0 = units::rate_per_ns_from_lifetime_ps(e.bulk_lifetime_ps);
    let sel = e.cavity(&e.selected);
    let cal = calibrate_lifetime(
        gamma0,
        &sel,
        &e.background,
        e.tau_on_ps,
        e.on_off_ratio,
        e.t_cross_k,
        e.t_off_k,
        e.slope_ratio,
    )?;
    let tau_at = |t_k: f64| -> Result<(f64, f64, f64), CliError> {
        let (qd, cav) = cal.tuning.tune(t_k)?;
        let emitter = EmitterParams {
            dipole_angle_rad: cal.dipole_angle_rad,
            ..EmitterParams::from_bulk_lifetime(e.bulk_lifetime_ps, qd)
        };
        let cavity = nanocavity::purcell::CavityParams {
            lambda_cav_nm: cav,
            ..sel.clone()
        };
        Ok((qd, cav, lifetime_ps(&emitter, &cavity, &e.background)?))
    };
    let mut sweep = Vec::with_capacity(e.sweep_points);
    for i in 0..e.sweep_points {
        let t = e.sweep_k.0 + (e.sweep_k.1 - e.sweep_k.0) * i as f64 / (e.sweep_points - 1) as f64;
        sweep.push((t, tau_at(t)?));
    }
    out.add(
        "purcell/lifetime_vs_temperature.csv".into(),
        csv(s, seed, |w| {
            writeln!(w, "temperature_k,lambda_qd_nm,lambda_cav_nm,lifetime_ps")?;
            for (t, (qd, cav, tau)) in &sweep {
                writeln!(w, "{t},{qd},{cav},{tau}")?;
            }
            Ok(())
        })?,
    );
    let tau_on = tau_at(e.t_cross_k)?.2;
    let tau_off = tau_at(e.t_off_k)?.2;

    let ens = e.ensemble();
    let mut spectra = Vec::new();
    for (label, c) in [("reference", &e.reference), ("selected", &e.selected)] {
        let grid = wavelength_grid(
            c.lambda_cav_nm - e.spectrum_half_span_nm,
            c.lambda_cav_nm + e.spectrum_half_span_nm,
            e.spectrum_points,
        );
        let spec = ensemble_spectrum(&e.cavity(c), &e.background, &ens, &grid)?;
        out.add(format!("purcell/spectrum_{label}.csv"), csv(s, seed, |w| spec.write_csv(w))?);
        spectra.push(spec);
    }
    let ratio = efficiency_ratio(
        &spectra[1],
        &spectra[0],
        e.selected.q_factor,
        e.reference.q_factor,
        &e.density,
    )?;
    out.metrics.insert(
        "purcell".into(),
        json!({
            "max_purcell_selected": sel.max_purcell(),
            "max_purcell_reference": e.cavity(&e.reference).max_purcell(),
            "overlap": cal.overlap,
            "dipole_angle_rad": cal.dipole_angle_rad,
            "detuning_off_nm": cal.detuning_nm,
            "slope_cav_nm_per_k": cal.tuning.slope_cav_nm_per_k,
            "tau_on_ps": tau_on,
            "tau_off_ps": tau_off,
            "tau_ratio": tau_off / tau_on,
            "eta_lens_ratio_from_spectra": ratio,
            "eta_lens_ratio_model": e.selected.eta_lens / e.reference.eta_lens,
        }),
    );
    Ok(tau_on)
}

fn g2_json(g: &G2Result) -> Value {
    json!({
        "g2_zero": g.g2_zero,
        "statistical_error": g.statistical_error,
        "central_area": g.central_area,
        "mean_side_area": g.mean_side_area,
    })
}

fn photon_stats(s: &Scenario, seed: u64, p: &crate::config::PhotonConfig, out: &mut Outputs) -> Result<(), CliError> {
    nanocavity::photonstats::validate(&p.pulses, &p.emitter, &p.detector)?;
    let window = p.window_periods * p.pulses.period_ps();
    let clicks = simulate_emission(&p.pulses, &p.emitter, &p.detector, seed)?;
    let h = hbt_correlate(&clicks, p.bin_width_ps, window, p.pulses.n_pulses)?;
    let g = g2_zero(&h, p.pulses.rep_rate_hz)?;
    out.add("photonstats/g2_histogram.csv".into(), csv(s, seed, |w| h.write_csv(w))?);
    if p.write_clicks {
        out.add("photonstats/clicks.csv".into(), csv(s, seed, |w| write_clicks_csv(&clicks, w))?);
    }
    let mut m = g2_json(&g);
    m["expected_g2"] = json!(expected_g2(&p.pulses, &p.emitter));
    m["clicks"] = json!(clicks.len());
    m["tau_ps"] = json!(p.emitter.tau_ps);
    let mut doc = json!({ "seed": seed, "hbt": g2_json(&g) });

    if let Some(det_nm) = p.cross_detuning_nm {
        let dynamics = nanocavity::photonstats::EmitterDynamics {
            qd_wavelength_nm: p.emitter.cavity_wavelength_nm + det_nm,
            ..p.emitter
        };
        let det = nanocavity::photonstats::DetectorSpec {
            routing: Routing::Spectral,
            ..p.detector
        };
        let c = simulate_emission(&p.pulses, &dynamics, &det, seed)?;
        let hc = cross_correlate(&c, &c, p.bin_width_ps, window, p.pulses.n_pulses)?;
        let gc = g2_zero(&hc, p.pulses.rep_rate_hz)?;
        out.add("photonstats/cross_histogram.csv".into(), csv(s, seed, |w| hc.write_csv(w))?);
        m["cross_g2_zero"] = json!(gc.g2_zero);
        m["cross_statistical_error"] = json!(gc.statistical_error);
        doc["cross"] = g2_json(&gc);
    }
    out.add("photonstats/g2.json".into(), json_bytes(&doc));
    out.metrics.insert("photonstats".into(), m);
    Ok(())
}
