use nanocavity::fdtd::*;
use num_complex::Complex64;

/// One-dimensional line along x: periodic in y, absorbing in x, fed by a
/// y-invariant Ey column.
fn line_grid(eps: &[f64], dx: f64) -> Grid2D {
    let height = 2;
    let mut g = Grid2D::uniform(eps.len(), height, dx, 1.0);
    for j in 0..height {
        g.epsilon[j * eps.len()..(j + 1) * eps.len()].copy_from_slice(eps);
    }
    g.boundary_y = Boundary::Periodic;
    g
}

fn column_source(ix: usize, lambda: f64, bandwidth: f64) -> SourceSpec {
    SourceSpec {
        position: (ix, 0),
        polarization: Polarization::Ey,
        center_wavelength_nm: lambda,
        bandwidth_nm: bandwidth,
        amplitude: 1.0,
        extent: SourceExtent::Column,
    }
}

fn centroid(s: &[f64], dt: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (k, v) in s.iter().enumerate() {
        num += k as f64 * dt * v * v;
        den += v * v;
    }
    num / den
}

#[test]
fn vacuum_pulse_travels_at_c() {
    let lambda = 400.0;
    let dx = lambda / 20.0;
    let n = 400;
    let g = line_grid(&vec![1.0; n], dx);
    let src = column_source(60, lambda, 150.0);
    let r = 200;
    let probes = [Probe::ey(100, 0), Probe::ey(100 + r, 0)];
    let series = run_fdtd(&g, &src, 2400, &probes).unwrap();
    let t1 = centroid(&series.samples[0], series.dt_norm);
    let t2 = centroid(&series.samples[1], series.dt_norm);
    let expect = r as f64 * dx;
    assert!(((t2 - t1) / expect - 1.0).abs() < 0.01, "{} vs {expect}", t2 - t1);
    // Arrival relative to the source peak as well.
    let t0 = src.delay() + 40.0 * dx;
    assert!((t1 / t0 - 1.0).abs() < 0.01, "{t1} vs {t0}");
}

/// Layers as (relative permittivity, thickness in nm) between two vacuum
/// half-spaces.
fn outgoing_condition(layers: &[(f64, f64)], k: Complex64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let mut m = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];
    for &(eps, d) in layers {
        let n = eps.sqrt();
        let delta = k * n * d;
        let (c, s) = (delta.cos(), delta.sin());
        let l = [[c, -i * s / n], [-i * n * s, c]];
        m = [
            [m[0][0] * l[0][0] + m[0][1] * l[1][0], m[0][0] * l[0][1] + m[0][1] * l[1][1]],
            [m[1][0] * l[0][0] + m[1][1] * l[1][0], m[1][0] * l[0][1] + m[1][1] * l[1][1]],
        ];
    }
    // Only outgoing waves: (E, H) = (B, -B) on the left, (C, C) on the right.
    m[0][0] + m[0][1] + m[1][0] + m[1][1]
}

fn pole_near(layers: &[(f64, f64)], k_guess: f64) -> Complex64 {
    let mut k = Complex64::new(k_guess, -1e-5);
    for _ in 0..100 {
        let h = 1e-9;
        let f = outgoing_condition(layers, k);
        let df = (outgoing_condition(layers, k + h) - outgoing_condition(layers, k - h)) / (2.0 * h);
        let step = f / df;
        k -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    k
}

#[test]
fn fabry_perot_q_matches_transfer_matrix_pole() {
    let dx = 5.0;
    let (eps_h, n_h, n_l, n_gap) = (12.25, 13usize, 45usize, 90usize);
    let mut layers_cells: Vec<(f64, usize)> = Vec::new();
    layers_cells.extend([(eps_h, n_h), (1.0, n_l), (eps_h, n_h)]);
    layers_cells.push((1.0, n_gap));
    layers_cells.extend([(eps_h, n_h), (1.0, n_l), (eps_h, n_h)]);
    let margin = 40;
    let mut eps = vec![1.0; margin];
    for &(e, c) in &layers_cells {
        eps.extend(std::iter::repeat_n(e, c));
    }
    eps.extend(std::iter::repeat_n(1.0, margin));
    let g = line_grid(&eps, dx);

    let gap_start = margin + n_h + n_l + n_h;
    let src = column_source(gap_start + n_gap / 3, 900.0, 150.0);
    let probes = [Probe::ey(gap_start + n_gap / 4, 0)];
    let steps = src.turn_off_step(&g) + 60_000;
    let series = run_fdtd(&g, &src, steps, &probes).unwrap();
    let opts = ResonanceOptions {
        search_window_nm: (800.0, 1000.0),
        settle_steps: 2000,
        ..Default::default()
    };
    let res = find_resonance(&series, &opts).unwrap();

    let layers: Vec<(f64, f64)> = layers_cells.iter().map(|&(e, c)| (e, c as f64 * dx)).collect();
    let k = pole_near(&layers, 2.0 * std::f64::consts::PI / res.lambda_nm);
    assert!(k.im < 0.0);
    let q_exact = k.re / (2.0 * -k.im);
    assert!(q_exact > 50.0, "{q_exact}");
    let lambda_exact = 2.0 * std::f64::consts::PI / k.re;
    assert!((res.lambda_nm / lambda_exact - 1.0).abs() < 0.01, "{} vs {lambda_exact}", res.lambda_nm);
    assert!((res.q_factor / q_exact - 1.0).abs() < 0.05, "Q {} vs {q_exact}", res.q_factor);
}

#[test]
fn closed_box_conserves_energy() {
    let (nx, ny) = (61, 47);
    let mut g = Grid2D::uniform(nx, ny, 20.0, 1.0);
    g.boundary_x = Boundary::Pec;
    g.boundary_y = Boundary::Pec;
    // A dielectric block off center so the field is not trivially symmetric.
    for j in 10..25 {
        for i in 30..50 {
            g.epsilon[j * nx + i] = 7.84;
        }
    }
    let mut src = SourceSpec::centered(&g, 600.0, 200.0);
    src.position = (20, 18);
    let mut sim = Simulation::new(&g, &src).unwrap();
    let mut hz = Vec::new();
    for _ in 0..src.turn_off_step(&g) + 1 {
        sim.step_with_energy(&mut hz);
    }
    let w0 = sim.step_with_energy(&mut hz);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let w = sim.step_with_energy(&mut hz);
        worst = worst.max((w - w0).abs() / w0);
    }
    assert!(w0 > 0.0);
    assert!(worst < 1e-6, "relative drift {worst:e}");
}

#[test]
fn periodic_line_conserves_energy() {
    let mut g = line_grid(&vec![1.0; 80], 20.0);
    g.boundary_x = Boundary::Periodic;
    for k in 30..45 {
        g.epsilon[k] = 4.0;
        g.epsilon[80 + k] = 4.0;
    }
    let src = column_source(10, 600.0, 200.0);
    let mut sim = Simulation::new(&g, &src).unwrap();
    let mut hz = Vec::new();
    for _ in 0..src.turn_off_step(&g) + 1 {
        sim.step_with_energy(&mut hz);
    }
    let w0 = sim.step_with_energy(&mut hz);
    for _ in 0..10_000 {
        let w = sim.step_with_energy(&mut hz);
        assert!(((w - w0) / w0).abs() < 1e-6);
    }
}

#[test]
fn results_independent_of_thread_count() {
    let g = Grid2D::uniform(81, 61, 20.0, 2.0);
    let src = SourceSpec::centered(&g, 700.0, 150.0);
    let probes = [Probe::ey(50, 33), Probe::ey(20, 12)];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_fdtd(&g, &src, 1500, &probes).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.samples, b.samples);
}

#[test]
fn probe_csv_has_dt_header() {
    let g = Grid2D::uniform(41, 41, 20.0, 1.0);
    let src = SourceSpec::centered(&g, 600.0, 200.0);
    let s = run_fdtd(&g, &src, src.turn_off_step(&g) + 10, &[Probe::ey(25, 20)]).unwrap();
    let mut out = Vec::new();
    s.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("# dt_s="));
    assert_eq!(text.lines().count(), s.len() + 2);
}
