//! TE (in-plane E) band structure of a triangular lattice of air holes, by
//! plane-wave expansion with the inverse-permittivity (Ho) formulation.
//! Used to check that a cavity resonance sits inside the photonic band gap.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use std::f64::consts::PI;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandOptions {
    /// Reciprocal-lattice index range ±n before the circular cutoff.
    pub n_max: i32,
    /// k-points per segment of the Γ–M–K–Γ path.
    pub points_per_segment: usize,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            n_max: 7,
            points_per_segment: 12,
        }
    }
}

/// Gap between the first and second TE bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGap {
    /// Normalized frequencies ωa/2πc of the gap edges.
    pub lower_norm: f64,
    pub upper_norm: f64,
    pub a_nm: f64,
}

impl BandGap {
    pub fn width_norm(&self) -> f64 {
        self.upper_norm - self.lower_norm
    }

    /// Gap edges in wavelength: (short, long).
    pub fn wavelength_range_nm(&self) -> (f64, f64) {
        (self.a_nm / self.upper_norm, self.a_nm / self.lower_norm)
    }

    pub fn contains_wavelength(&self, lambda_nm: f64) -> bool {
        let u = self.a_nm / lambda_nm;
        u > self.lower_norm && u < self.upper_norm
    }
}

fn reciprocal_vectors(n_max: i32) -> Vec<(f64, f64)> {
    // In units of 2π/a.
    let b1 = (1.0, -1.0 / SQRT3);
    let b2 = (0.0, 2.0 / SQRT3);
    let cutoff = n_max as f64 * 2.0 / SQRT3;
    let mut gs = Vec::new();
    for m in -n_max..=n_max {
        for n in -n_max..=n_max {
            let g = (m as f64 * b1.0 + n as f64 * b2.0, m as f64 * b1.1 + n as f64 * b2.1);
            if (g.0 * g.0 + g.1 * g.1).sqrt() <= cutoff + 1e-9 {
                gs.push(g);
            }
        }
    }
    gs
}

/// Fourier coefficient of ε for air holes of radius `r_norm·a` in a host of
/// permittivity `eps_b`; `g` in units of 2π/a.
fn eps_coefficient(g: (f64, f64), r_norm: f64, eps_b: f64) -> f64 {
    let fill = 2.0 * PI * r_norm * r_norm / SQRT3;
    let gl = 2.0 * PI * (g.0 * g.0 + g.1 * g.1).sqrt();
    if gl < 1e-12 {
        eps_b + (1.0 - eps_b) * fill
    } else {
        let x = gl * r_norm;
        (1.0 - eps_b) * fill * 2.0 * libm::j1(x) / x
    }
}

/// Lowest `n_bands` TE normalized frequencies at each point of the Γ–M–K–Γ
/// path.
pub fn te_bands(r_norm: f64, eps_b: f64, n_bands: usize, opts: &BandOptions) -> Vec<Vec<f64>> {
    let gs = reciprocal_vectors(opts.n_max);
    let n = gs.len();
    let eps = DMatrix::from_fn(n, n, |i, j| {
        eps_coefficient((gs[i].0 - gs[j].0, gs[i].1 - gs[j].1), r_norm, eps_b)
    });
    let eta = eps.try_inverse().expect("permittivity matrix is positive definite");

    let gamma = (0.0, 0.0);
    let m_pt = (0.5, 0.5 / SQRT3);
    let k_pt = (2.0 / 3.0, 0.0);
    let corners = [gamma, m_pt, k_pt, gamma];
    let mut path = Vec::new();
    for seg in corners.windows(2) {
        for s in 0..opts.points_per_segment {
            let t = s as f64 / opts.points_per_segment as f64;
            path.push((
                seg[0].0 + t * (seg[1].0 - seg[0].0),
                seg[0].1 + t * (seg[1].1 - seg[0].1),
            ));
        }
    }
    path.push(gamma);

    path.iter()
        .map(|k| {
            let kg: Vec<(f64, f64)> = gs.iter().map(|g| (k.0 + g.0, k.1 + g.1)).collect();
            let m = DMatrix::from_fn(n, n, |i, j| {
                eta[(i, j)] * (kg[i].0 * kg[j].0 + kg[i].1 * kg[j].1)
            });
            let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // Eigenvalues are (ωa/2πc)² because k is in units of 2π/a.
            ev.iter().take(n_bands).map(|l| l.max(0.0).sqrt()).collect()
        })
        .collect()
}

/// First TE band gap of the bulk lattice, or `None` when bands 1 and 2
/// overlap.
pub fn band_gap(a_nm: f64, r_norm: f64, eps_b: f64, opts: &BandOptions) -> Option<BandGap> {
    let bands = te_bands(r_norm, eps_b, 2, opts);
    let top1 = bands.iter().map(|b| b[0]).fold(f64::MIN, f64::max);
    let bottom2 = bands.iter().map(|b| b[1]).fold(f64::MAX, f64::min);
    (bottom2 > top1).then_some(BandGap {
        lower_norm: top1,
        upper_norm: bottom2,
        a_nm,
    })
}
