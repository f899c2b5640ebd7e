use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Absorber, Boundary, FdtdError, Grid2D, Polarization, SourceExtent, SourceSpec};

const DIVERGENCE_FACTOR: f64 = 1e6;
const DIVERGENCE_CHECK_EVERY: usize = 64;
const PML_ORDER: i32 = 3;
const PML_REFLECTION: f64 = 1e-7;

/// A field sample point at a cell center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub ix: usize,
    pub iy: usize,
    pub component: Polarization,
}

impl Probe {
    pub fn ey(ix: usize, iy: usize) -> Self {
        Self {
            ix,
            iy,
            component: Polarization::Ey,
        }
    }
}

/// Probe time series produced by [`run_fdtd`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSeries {
    pub positions: Vec<Probe>,
    /// `samples[p][n]` is probe `p` after step `n` (time `(n+1)·dt`).
    pub samples: Vec<Vec<f64>>,
    pub dt_s: f64,
    /// Time step in normalized units (nm of light travel).
    pub dt_norm: f64,
    /// First step at which the source is identically zero.
    pub source_off_step: usize,
}

impl ProbeSeries {
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# dt_s={},source_off_step={}",
            self.dt_s, self.source_off_step
        )?;
        let names: Vec<String> = self
            .positions
            .iter()
            .map(|p| format!("{:?}_{}_{}", p.component, p.ix, p.iy))
            .collect();
        writeln!(w, "step,{}", names.join(","))?;
        for n in 0..self.len() {
            let vals: Vec<String> = self.samples.iter().map(|s| format!("{}", s[n])).collect();
            writeln!(w, "{},{}", n, vals.join(","))?;
        }
        Ok(())
    }
}

/// Leapfrog Yee state. Hz lives at cell centers, Ex on horizontal faces
/// (`nx × (ny+1)`), Ey on vertical faces (`(nx+1) × ny`). Hz is carried as
/// x- and y-derivative parts so a split-field layer can damp each direction
/// separately.
pub struct Simulation {
    grid: Grid2D,
    source: SourceSpec,
    nx: usize,
    ny: usize,
    dt: f64,
    step: usize,
    ex: Vec<f64>,
    ey: Vec<f64>,
    hzx: Vec<f64>,
    hzy: Vec<f64>,
    ex_ca: Vec<f64>,
    ex_cb: Vec<f64>,
    ey_ca: Vec<f64>,
    ey_cb: Vec<f64>,
    hx_da: Vec<f64>,
    hx_db: Vec<f64>,
    hy_da: Vec<f64>,
    hy_db: Vec<f64>,
    ex_eps: Vec<f64>,
    ey_eps: Vec<f64>,
}

fn pml_profile(n: usize, pml: usize, s_max: f64, active: bool) -> impl Fn(f64) -> f64 {
    move |pos: f64| {
        if !active || pml == 0 {
            return 0.0;
        }
        let l = pml as f64;
        let depth = (l - pos).max(pos - (n as f64 - l)).max(0.0) / l;
        s_max * depth.powi(PML_ORDER)
    }
}

fn loss_coeffs(s: f64, dt: f64) -> (f64, f64) {
    let d = 1.0 + 0.5 * s * dt;
    ((1.0 - 0.5 * s * dt) / d, 1.0 / d)
}

impl Simulation {
    /// Builds the solver state; checks grid, source and the Courant bound.
    pub fn new(grid: &Grid2D, source: &SourceSpec) -> Result<Self, FdtdError> {
        grid.validate()?;
        source.validate(grid)?;
        Ok(Self::new_unchecked(grid, source))
    }

    /// Same as [`Simulation::new`] but without the Courant check, so unstable
    /// configurations can be exercised.
    pub fn new_unchecked(grid: &Grid2D, source: &SourceSpec) -> Self {
        let nx = grid.width;
        let ny = grid.height;
        let dt = grid.dt();
        let dx = grid.dx_nm;
        let s_max = grid.pml_sigma_max.unwrap_or_else(|| {
            let edge_eps = grid.eps(0, 0).max(1.0);
            let d = grid.pml_cells.max(1) as f64 * dx;
            (PML_ORDER as f64 + 1.0) * (1.0 / PML_REFLECTION).ln() / (2.0 * edge_eps.sqrt() * d)
        });
        let px = pml_profile(nx, grid.pml_cells, s_max, grid.boundary_x == Boundary::Pml);
        let py = pml_profile(ny, grid.pml_cells, s_max, grid.boundary_y == Boundary::Pml);

        let periodic_x = grid.boundary_x == Boundary::Periodic;
        let periodic_y = grid.boundary_y == Boundary::Periodic;

        let iso = grid.absorber == Absorber::Isotropic;
        // Split-field layers damp each field along its own derivative
        // direction; the isotropic layer applies the summed rate everywhere.
        let loss = |own: f64, other: f64| if iso { own + other } else { own };

        // Ex faces: (i, j), j = 0..=ny, face j between cells j-1 and j.
        let mut ex_ca = vec![0.0; nx * (ny + 1)];
        let mut ex_cb = vec![0.0; nx * (ny + 1)];
        let mut ex_eps = vec![1.0; nx * (ny + 1)];
        for j in 0..=ny {
            for i in 0..nx {
                let (ca, cbl) = loss_coeffs(loss(py(j as f64), px(i as f64 + 0.5)), dt);
                let below = if j == 0 {
                    if periodic_y { ny - 1 } else { 0 }
                } else {
                    j - 1
                };
                let above = if j == ny { if periodic_y { 0 } else { ny - 1 } } else { j };
                let eps = 0.5 * (grid.eps(i, below) + grid.eps(i, above));
                let k = j * nx + i;
                ex_eps[k] = eps;
                ex_ca[k] = ca;
                ex_cb[k] = cbl * dt / (eps * dx);
            }
        }
        let mut ey_ca = vec![0.0; (nx + 1) * ny];
        let mut ey_cb = vec![0.0; (nx + 1) * ny];
        let mut ey_eps = vec![1.0; (nx + 1) * ny];
        for j in 0..ny {
            for i in 0..=nx {
                let (ca, cbl) = loss_coeffs(loss(px(i as f64), py(j as f64 + 0.5)), dt);
                let left = if i == 0 {
                    if periodic_x { nx - 1 } else { 0 }
                } else {
                    i - 1
                };
                let right = if i == nx { if periodic_x { 0 } else { nx - 1 } } else { i };
                let eps = 0.5 * (grid.eps(left, j) + grid.eps(right, j));
                let k = j * (nx + 1) + i;
                ey_eps[k] = eps;
                ey_ca[k] = ca;
                ey_cb[k] = cbl * dt / (eps * dx);
            }
        }
        let mut hx_da = vec![0.0; nx * ny];
        let mut hx_db = vec![0.0; nx * ny];
        let mut hy_da = vec![0.0; nx * ny];
        let mut hy_db = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let (sx, sy) = (px(i as f64 + 0.5), py(j as f64 + 0.5));
                let (da, dbl) = loss_coeffs(loss(sx, sy), dt);
                hx_da[k] = da;
                hx_db[k] = dbl * dt / dx;
                let (da, dbl) = loss_coeffs(loss(sy, sx), dt);
                hy_da[k] = da;
                hy_db[k] = dbl * dt / dx;
            }
        }

        Self {
            grid: grid.clone(),
            source: source.clone(),
            nx,
            ny,
            dt,
            step: 0,
            ex: vec![0.0; nx * (ny + 1)],
            ey: vec![0.0; (nx + 1) * ny],
            hzx: vec![0.0; nx * ny],
            hzy: vec![0.0; nx * ny],
            ex_ca,
            ex_cb,
            ey_ca,
            ey_cb,
            hx_da,
            hx_db,
            hy_da,
            hy_db,
            ex_eps,
            ey_eps,
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the electric field after the last completed step.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    fn update_h(&mut self) {
        let nx = self.nx;
        let ex = &self.ex;
        let ey = &self.ey;
        let (hx_da, hx_db, hy_da, hy_db) = (&self.hx_da, &self.hx_db, &self.hy_da, &self.hy_db);
        self.hzx
            .par_chunks_mut(nx)
            .zip(self.hzy.par_chunks_mut(nx))
            .enumerate()
            .for_each(|(j, (hx_row, hy_row))| {
                let ey_row = &ey[j * (nx + 1)..(j + 1) * (nx + 1)];
                let ex_lo = &ex[j * nx..(j + 1) * nx];
                let ex_hi = &ex[(j + 1) * nx..(j + 2) * nx];
                let c = j * nx;
                for i in 0..nx {
                    let d_ey = ey_row[i + 1] - ey_row[i];
                    let d_ex = ex_hi[i] - ex_lo[i];
                    hx_row[i] = hx_da[c + i] * hx_row[i] - hx_db[c + i] * d_ey;
                    hy_row[i] = hy_da[c + i] * hy_row[i] + hy_db[c + i] * d_ex;
                }
            });
    }

    fn update_e(&mut self) {
        let nx = self.nx;
        let ny = self.ny;
        let periodic_x = self.grid.boundary_x == Boundary::Periodic;
        let periodic_y = self.grid.boundary_y == Boundary::Periodic;
        let hzx = &self.hzx;
        let hzy = &self.hzy;
        let hz = |i: usize, j: usize| hzx[j * nx + i] + hzy[j * nx + i];

        let (ex_ca, ex_cb) = (&self.ex_ca, &self.ex_cb);
        self.ex
            .par_chunks_mut(nx)
            .enumerate()
            .for_each(|(j, row)| {
                let base = j * nx;
                if j == 0 || j == ny {
                    if !periodic_y {
                        return;
                    }
                    for (i, e) in row.iter_mut().enumerate() {
                        let k = base + i;
                        *e = ex_ca[k] * *e + ex_cb[k] * (hz(i, 0) - hz(i, ny - 1));
                    }
                    return;
                }
                for (i, e) in row.iter_mut().enumerate() {
                    let k = base + i;
                    *e = ex_ca[k] * *e + ex_cb[k] * (hz(i, j) - hz(i, j - 1));
                }
            });

        let (ey_ca, ey_cb) = (&self.ey_ca, &self.ey_cb);
        self.ey
            .par_chunks_mut(nx + 1)
            .enumerate()
            .for_each(|(j, row)| {
                let base = j * (nx + 1);
                #[allow(clippy::needless_range_loop)]
                for i in 1..nx {
                    let k = base + i;
                    row[i] = ey_ca[k] * row[i] - ey_cb[k] * (hz(i, j) - hz(i - 1, j));
                }
                if periodic_x {
                    let k = base;
                    row[0] = ey_ca[k] * row[0] - ey_cb[k] * (hz(0, j) - hz(nx - 1, j));
                    row[nx] = row[0];
                }
            });
    }

    fn inject(&mut self, t: f64) {
        let v = self.source.value(t);
        if v == 0.0 {
            return;
        }
        let (ix, iy) = self.source.position;
        let rows: Vec<usize> = match self.source.extent {
            SourceExtent::Point => vec![iy],
            SourceExtent::Column => (0..self.ny).collect(),
        };
        let nx = self.nx;
        for j in rows {
            match self.source.polarization {
                Polarization::Ey => {
                    self.ey[j * (nx + 1) + ix] += 0.5 * v;
                    self.ey[j * (nx + 1) + ix + 1] += 0.5 * v;
                }
                Polarization::Ex => {
                    self.ex[j * nx + ix] += 0.5 * v;
                    self.ex[(j + 1) * nx + ix] += 0.5 * v;
                }
            }
        }
    }

    /// Advances one full step: H to n+½, then E to n+1, then the source.
    pub fn step(&mut self) {
        self.update_h();
        self.update_e();
        self.step += 1;
        let t = self.time();
        self.inject(t);
    }

    /// Advances one step and returns the discrete energy at the start of the
    /// step, `½Σ(ε|Eⁿ|² + Hz^{n-½}·Hz^{n+½})·dx²`, which the lossless scheme
    /// conserves exactly.
    pub fn step_with_energy(&mut self, hz_prev: &mut Vec<f64>) -> f64 {
        let e_energy = self.electric_energy_sum();
        if hz_prev.len() != self.hzx.len() {
            *hz_prev = self.hz_values();
        }
        self.update_h();
        let dot: f64 = hz_prev
            .iter()
            .zip(self.hzx.iter().zip(&self.hzy))
            .map(|(p, (a, b))| p * (a + b))
            .sum();
        for (p, (a, b)) in hz_prev.iter_mut().zip(self.hzx.iter().zip(&self.hzy)) {
            *p = a + b;
        }
        self.update_e();
        self.step += 1;
        let t = self.time();
        self.inject(t);
        0.5 * (e_energy + dot) * self.grid.dx_nm * self.grid.dx_nm
    }

    fn electric_energy_sum(&self) -> f64 {
        let nx = self.nx;
        let ny = self.ny;
        let ex_rows = if self.grid.boundary_y == Boundary::Periodic { ny } else { ny + 1 };
        let ey_cols = if self.grid.boundary_x == Boundary::Periodic { nx } else { nx + 1 };
        let mut sum = 0.0;
        for k in 0..ex_rows * nx {
            sum += self.ex_eps[k] * self.ex[k] * self.ex[k];
        }
        for j in 0..ny {
            for i in 0..ey_cols {
                let k = j * (nx + 1) + i;
                sum += self.ey_eps[k] * self.ey[k] * self.ey[k];
            }
        }
        sum
    }

    fn hz_values(&self) -> Vec<f64> {
        self.hzx.iter().zip(&self.hzy).map(|(a, b)| a + b).collect()
    }

    /// Cell-centered Ey (average of the two adjacent faces).
    #[inline]
    pub fn ey_at(&self, ix: usize, iy: usize) -> f64 {
        let k = iy * (self.nx + 1) + ix;
        0.5 * (self.ey[k] + self.ey[k + 1])
    }

    #[inline]
    pub fn ex_at(&self, ix: usize, iy: usize) -> f64 {
        let k = iy * self.nx + ix;
        0.5 * (self.ex[k] + self.ex[k + self.nx])
    }

    pub fn hz_at(&self, ix: usize, iy: usize) -> f64 {
        let k = iy * self.nx + ix;
        self.hzx[k] + self.hzy[k]
    }

    pub fn sample(&self, probe: &Probe) -> f64 {
        match probe.component {
            Polarization::Ey => self.ey_at(probe.ix, probe.iy),
            Polarization::Ex => self.ex_at(probe.ix, probe.iy),
        }
    }

    pub fn max_abs_field(&self) -> f64 {
        let m = |v: &[f64]| v.par_iter().map(|x| x.abs()).reduce(|| 0.0, f64::max);
        m(&self.ex).max(m(&self.ey)).max(m(&self.hzx)).max(m(&self.hzy))
    }

    fn check_divergence(&self) -> Result<(), FdtdError> {
        let limit = DIVERGENCE_FACTOR * self.source.amplitude.abs();
        let m = self.max_abs_field();
        if !m.is_finite() || m > limit {
            return Err(FdtdError::Unstable {
                step: self.step,
                value: m,
            });
        }
        Ok(())
    }

    /// Runs `steps` steps recording the probes after each step.
    pub fn run(&mut self, steps: usize, probes: &[Probe]) -> Result<Vec<Vec<f64>>, FdtdError> {
        let mut samples: Vec<Vec<f64>> = probes.iter().map(|_| Vec::with_capacity(steps)).collect();
        for _ in 0..steps {
            self.step();
            for (p, s) in probes.iter().zip(samples.iter_mut()) {
                s.push(self.sample(p));
            }
            if self.step.is_multiple_of(DIVERGENCE_CHECK_EVERY) {
                self.check_divergence()?;
            }
        }
        self.check_divergence()?;
        Ok(samples)
    }

    /// Runs `steps` steps while accumulating the running DFT of the
    /// cell-centered Ex and Ey at angular frequency `omega`.
    pub fn accumulate_dft(
        &mut self,
        omega: f64,
        steps: usize,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>), FdtdError> {
        let nx = self.nx;
        let ny = self.ny;
        let mut fx = vec![Complex64::new(0.0, 0.0); nx * ny];
        let mut fy = vec![Complex64::new(0.0, 0.0); nx * ny];
        for _ in 0..steps {
            self.step();
            let phase = Complex64::from_polar(self.dt, omega * self.time());
            let this = &*self;
            fx.par_chunks_mut(nx)
                .zip(fy.par_chunks_mut(nx))
                .enumerate()
                .for_each(|(j, (rx, ry))| {
                    for i in 0..nx {
                        rx[i] += phase * this.ex_at(i, j);
                        ry[i] += phase * this.ey_at(i, j);
                    }
                });
            if self.step.is_multiple_of(DIVERGENCE_CHECK_EVERY) {
                self.check_divergence()?;
            }
        }
        Ok((fx, fy))
    }
}

/// Runs the solver from rest for `steps` steps and records the probes.
pub fn run_fdtd(
    grid: &Grid2D,
    source: &SourceSpec,
    steps: usize,
    probes: &[Probe],
) -> Result<ProbeSeries, FdtdError> {
    let mut sim = Simulation::new(grid, source)?;
    let off = source.turn_off_step(grid);
    if steps < off {
        return Err(FdtdError::TooShort(format!(
            "{steps} steps end before the source turns off at step {off}"
        )));
    }
    let samples = sim.run(steps, probes)?;
    Ok(ProbeSeries {
        positions: probes.to_vec(),
        samples,
        dt_s: grid.dt_seconds(),
        dt_norm: grid.dt(),
        source_off_step: off,
    })
}
