use std::f64::consts::PI;

use nanocavity::purcell::*;
use nanocavity::Map2;
use proptest::prelude::*;

fn cavity(lambda: f64, q: f64, eta: f64) -> CavityParams {
    CavityParams {
        lambda_cav_nm: lambda,
        q_factor: q,
        v_mode_norm: 0.8,
        eta_cav: eta,
        psi_map: None,
    }
}

fn emitter(lambda: f64) -> EmitterParams {
    EmitterParams::from_bulk_lifetime(600.0, lambda)
}

fn ensemble(rho: QdDensity) -> EnsembleSpec {
    EnsembleSpec {
        rho_qd: rho,
        area_total_nm2: 4.0e6,
        area_cav_nm2: 2.0e5,
    }
}

fn grid() -> Vec<f64> {
    wavelength_grid(905.0, 935.0, 12_001)
}

#[test]
fn lorentzian_reference_points() {
    assert_eq!(lorentzian(920.0, 920.0, 8500.0), 1.0);
    // Dyadic values keep the half point free of rounding.
    assert_eq!(lorentzian(1025.0, 1024.0, 512.0), 0.5);
    assert_eq!(lorentzian(1023.0, 1024.0, 512.0), 0.5);
    let q = 8500.0;
    assert!((lorentzian(920.0 * (1.0 + 0.5 / q), 920.0, q) - 0.5).abs() < 1e-12);
    // Same value from the half width in nm.
    let hw = 920.0 / (2.0 * q);
    let d = 0.6;
    let expect = hw * hw / (hw * hw + d * d);
    assert!((lorentzian(920.6, 920.0, q) - expect).abs() < 1e-15);
    assert!((lorentzian(920.0 + 0.3, 920.0, q) - lorentzian(920.0 - 0.3, 920.0, q)).abs() < 1e-15);
}

#[test]
fn maximum_purcell_reference_points() {
    let expect = 3.0 * 10_625.0 / (4.0 * PI * PI);
    assert!((max_purcell(8500.0, 0.8) - expect).abs() < 1e-9);
    assert!((max_purcell(8500.0, 0.8) - 807.4).abs() < 0.1);
    assert!((max_purcell(17_000.0, 0.8) / max_purcell(8500.0, 0.8) - 2.0).abs() < 1e-15);
}

#[test]
fn local_purcell_factor() {
    let c = cavity(920.0, 8500.0, 0.5);
    let mut e = emitter(920.0);
    let fc0 = max_purcell(8500.0, 0.8);
    assert!((purcell_factor(&e, &c).unwrap() - fc0).abs() < 1e-9);
    e.dipole_angle_rad = PI / 2.0;
    assert!(purcell_factor(&e, &c).unwrap() < 1e-25);
    e.dipole_angle_rad = 0.0;
    e.wavelength_nm = 920.0 * (1.0 + 0.5 / 8500.0);
    assert!((purcell_factor(&e, &c).unwrap() - fc0 / 2.0).abs() < 1e-9);
}

#[test]
fn field_map_sets_overlap_and_domain() {
    let mut m = Map2::filled(11, 11, 20.0, 0.0);
    for iy in 0..11 {
        for ix in 0..11 {
            let (x, y) = (m.x_of(ix), m.y_of(iy));
            *m.get_mut(ix, iy) = (-(x * x + y * y) / (60.0f64 * 60.0)).exp();
        }
    }
    let mut c = cavity(920.0, 8500.0, 0.5);
    c.psi_map = Some(m);
    let mut e = emitter(920.0);
    e.position_nm = (40.0, 0.0);
    let psi = (-(40.0f64 * 40.0) / 3600.0).exp();
    let f = purcell_factor(&e, &c).unwrap();
    // Bilinear sampling between two cells.
    assert!((f / (max_purcell(8500.0, 0.8) * psi * psi) - 1.0).abs() < 0.05);
    e.position_nm = (500.0, 0.0);
    assert!(matches!(purcell_factor(&e, &c), Err(PurcellError::OutOfDomain(..))));
    assert!(c.area_nm2().unwrap() > 0.0);
}

#[test]
fn collected_rate_limits() {
    let bg = LeakyBackground { f_pc: 0.4, eta_pc: 1.0 };
    let c = cavity(920.0, 8500.0, 1.0);
    let e = emitter(920.0);
    let expect = e.gamma0_per_ns * (max_purcell(8500.0, 0.8) + 0.4);
    assert!((collected_rate(&e, &c, &bg).unwrap() / expect - 1.0).abs() < 1e-12);
    let tiny = LeakyBackground { f_pc: 1e-300, eta_pc: 0.0 };
    let far = emitter(980.0);
    assert!(collected_rate(&far, &c, &tiny).unwrap() < 1e-3 * expect);
}

#[test]
fn lifetime_reference_points() {
    let mut e = emitter(920.0);
    e.dipole_angle_rad = PI / 2.0;
    let c = cavity(920.0, 8500.0, 0.5);
    let bulk = LeakyBackground { f_pc: 1.0, eta_pc: 0.1 };
    assert!((lifetime_ps(&e, &c, &bulk).unwrap() - 600.0).abs() < 1e-9);
    let b = LeakyBackground { f_pc: 13.333_333_333_333, eta_pc: 0.1 };
    assert!((lifetime_ps(&e, &c, &b).unwrap() - 45.0).abs() < 1e-6);
}

#[test]
fn lifetime_calibration_reproduces_on_and_off_resonance() {
    let c = cavity(920.0, 8500.0, 0.5);
    let bg = LeakyBackground::default();
    let gamma0 = 1.0 / 0.6;
    let cal = calibrate_lifetime(gamma0, &c, &bg, 45.0, 6.0, 22.5, 25.0, 3.0).unwrap();
    let tau_at = |t: f64| {
        let (qd, cav) = cal.tuning.tune(t).unwrap();
        let e = EmitterParams {
            gamma0_per_ns: gamma0,
            position_nm: (0.0, 0.0),
            dipole_angle_rad: cal.dipole_angle_rad,
            wavelength_nm: qd,
        };
        let cv = CavityParams {
            lambda_cav_nm: cav,
            ..c.clone()
        };
        lifetime_ps(&e, &cv, &bg).unwrap()
    };
    let (on, off) = (tau_at(22.5), tau_at(25.0));
    assert!((on - 45.0).abs() < 1e-6, "{on}");
    assert!((off / on - 6.0).abs() < 1e-6, "{off}");
    assert!((cal.tuning.crossing_temperature().unwrap() - 22.5).abs() < 1e-9);
    // Unreachable targets.
    assert!(calibrate_lifetime(gamma0, &c, &bg, 0.01, 6.0, 22.5, 25.0, 3.0).is_err());
    assert!(calibrate_lifetime(gamma0, &c, &bg, 45.0, 6.0, 22.5, 25.0, 1.0).is_err());
}

#[test]
fn tuning_slopes() {
    let m = TuningModel::crossing_at(22.5, 920.0, 0.04, 3.0);
    let (q1, c1) = m.tune(20.0).unwrap();
    let (q2, c2) = m.tune(21.0).unwrap();
    assert!((((q2 - c2) - (q1 - c1)) - 2.0 * 0.04).abs() < 1e-12);
    let mut r = TuningModel::crossing_at(10.0, 920.0, 0.04, 3.0);
    r.t_ref_k = 30.0;
    r.lambda_qd_ref_nm = 920.0 + 2.0 * 0.04 * 7.5;
    assert!((r.crossing_temperature().unwrap() - 22.5).abs() < 1e-9);
    assert_eq!(m.tune(m.t_ref_k).unwrap(), (920.0, 920.0));
}

#[test]
fn dark_cavity_leaves_background_only() {
    let s = ensemble_spectrum(
        &cavity(920.0, 8500.0, 0.0),
        &LeakyBackground::default(),
        &ensemble(QdDensity::default()),
        &grid(),
    )
    .unwrap();
    assert_eq!(s.gamma_lens, s.background_term);
    let r = s.background_term[6000] / QdDensity::default().eval(s.wavelength_nm[6000]);
    for (b, l) in s.background_term.iter().zip(&s.wavelength_nm) {
        assert!((b - r * QdDensity::default().eval(*l)).abs() < 1e-12 * r);
    }
}

#[test]
fn flat_density_gives_exact_lorentzian() {
    let flat = QdDensity::Tabulated {
        wavelength_nm: vec![800.0, 1000.0],
        density: vec![1.0, 1.0],
    };
    let c = cavity(921.3, 9000.0, 0.3);
    let s = ensemble_spectrum(&c, &LeakyBackground::default(), &ensemble(flat), &grid()).unwrap();
    let peak = c.max_purcell() * 0.3;
    for (v, l) in s.cavity_term.iter().zip(&s.wavelength_nm) {
        assert!((v - peak * lorentzian(*l, 921.3, 9000.0)).abs() < 1e-12 * peak);
    }
    for i in 0..s.gamma_lens.len() {
        assert!((s.gamma_lens[i] - s.cavity_term[i] - s.background_term[i]).abs() < 1e-12);
    }
}

#[test]
fn cavity_to_background_contrast_is_linear_in_eta() {
    let contrast = |eta: f64| {
        let s = ensemble_spectrum(
            &cavity(920.0, 8500.0, eta),
            &LeakyBackground::default(),
            &ensemble(QdDensity::default()),
            &[920.0],
        )
        .unwrap();
        s.cavity_term[0] / s.background_term[0]
    };
    let (a, b) = (contrast(0.1), contrast(0.3));
    assert!((b / a - 3.0).abs() < 1e-12);
}

fn pair(eta_ratio: f64) -> (EmissionSpectrum, EmissionSpectrum) {
    let ens = ensemble(QdDensity::default());
    let bg = LeakyBackground::default();
    let unpert = ensemble_spectrum(&cavity(926.4, 11_000.0, 0.08), &bg, &ens, &grid()).unwrap();
    let pert = ensemble_spectrum(&cavity(917.8, 8500.0, 0.08 * eta_ratio), &bg, &ens, &grid()).unwrap();
    (pert, unpert)
}

#[test]
fn efficiency_ratio_round_trip() {
    let rho = QdDensity::default();
    for injected in [6.0, 1.0] {
        let (p, u) = pair(injected);
        let r = efficiency_ratio(&p, &u, 8500.0, 11_000.0, &rho).unwrap();
        assert!((r / injected - 1.0).abs() < 0.01, "{injected}: {r}");
    }
    let (p, _) = pair(1.0);
    assert!((efficiency_ratio(&p, &p, 8500.0, 8500.0, &rho).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn background_above_peak_is_an_error() {
    let (mut p, u) = pair(6.0);
    let n = p.gamma_lens.len();
    // A spectrum that dips under its wings.
    for i in 0..n {
        let l = p.wavelength_nm[i];
        p.gamma_lens[i] = 1.0 - 0.5 * lorentzian(l, 917.8, 8500.0) + 0.3 * lorentzian(l, 930.0, 50.0);
    }
    let e = efficiency_ratio(&p, &u, 8500.0, 11_000.0, &QdDensity::default());
    assert!(e.is_err(), "{e:?}");
}

#[test]
fn invalid_parameters_rejected() {
    let bg = LeakyBackground::default();
    assert!(ensemble_spectrum(&cavity(920.0, -1.0, 0.1), &bg, &ensemble(QdDensity::default()), &grid()).is_err());
    assert!(ensemble_spectrum(&cavity(920.0, 8500.0, 1.5), &bg, &ensemble(QdDensity::default()), &grid()).is_err());
    let mut ens = ensemble(QdDensity::default());
    ens.area_total_nm2 = 1.0;
    assert!(ensemble_spectrum(&cavity(920.0, 8500.0, 0.1), &bg, &ens, &grid()).is_err());
}

#[test]
fn spectrum_csv_columns() {
    let (p, _) = pair(2.0);
    let mut out = Vec::new();
    p.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "wavelength_nm,total,cavity_term,background");
    assert_eq!(text.lines().count(), p.wavelength_nm.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_q_round_trip(q in 3000.0f64..20_000.0, lc in 912.0f64..928.0, eta in 0.02f64..0.9) {
        let s = ensemble_spectrum(&cavity(lc, q, eta), &LeakyBackground::default(), &ensemble(QdDensity::default()), &grid()).unwrap();
        let fit = fit_peak(&s, 10_000.0).unwrap();
        prop_assert!((fit.q_factor / q - 1.0).abs() < 0.01, "{} vs {q}", fit.q_factor);
        prop_assert!((fit.lambda_cav_nm - lc).abs() < 0.01 * lc / q);
    }

    #[test]
    fn ratio_invariant_under_common_gain(g in 1e-3f64..1e3, eta in 1.0f64..8.0) {
        let rho = QdDensity::default();
        let (p, u) = pair(eta);
        let a = efficiency_ratio(&p, &u, 8500.0, 11_000.0, &rho).unwrap();
        let b = efficiency_ratio(&p.scaled(g), &u.scaled(g), 8500.0, 11_000.0, &rho).unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lifetime_shortens_toward_resonance(d1 in 0.0f64..2.0, d2 in 0.0f64..2.0) {
        let c = cavity(920.0, 8500.0, 0.5);
        let bg = LeakyBackground::default();
        let (near, far) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let t_near = lifetime_ps(&emitter(920.0 + near), &c, &bg).unwrap();
        let t_far = lifetime_ps(&emitter(920.0 - far), &c, &bg).unwrap();
        prop_assert!(t_near <= t_far * (1.0 + 1e-12));
    }
}
