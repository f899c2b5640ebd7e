//! Parametric triangular-lattice L-type defect cavity with optional
//! far-field perturbation layers, and its rasterization to a permittivity map.
//!
//! Holes sit on a triangular lattice whose rows run along x. A lattice site is
//! addressed by `(q, row)` with `x = q·a/2` and `y = row·(√3/2)·a`; a hole
//! exists wherever `q ≡ row (mod 2)`. The cavity is centered on the origin in
//! row 0.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Map2;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("invalid defect: {0}")]
    InvalidDefect(String),
    #[error("invalid perturbation layer {label}: {reason}")]
    InvalidLayer { label: LayerLabel, reason: String },
    #[error("holes at {a} and {b} overlap (gap {gap_nm:.3} nm)")]
    Overlap {
        a: LatticeSite,
        b: LatticeSite,
        gap_nm: f64,
    },
    #[error("grid pitch {dx_nm} nm is coarser than the a/12 floor ({max_nm} nm)")]
    Resolution { dx_nm: f64, max_nm: f64 },
    #[error("design document: {0}")]
    Document(String),
}

/// Triangular lattice parameters. Lengths in nm; `r_norm` in units of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    pub a_nm: f64,
    #[serde(rename = "radius_over_a")]
    pub r_norm: f64,
    pub slab_thickness_nm: f64,
    pub n_slab: f64,
    /// Holes per unshifted row.
    pub nx: usize,
    /// Number of rows.
    pub ny: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self {
            a_nm: 240.0,
            r_norm: 0.3,
            slab_thickness_nm: 165.0,
            n_slab: 3.5,
            nx: 21,
            ny: 13,
        }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidLattice(m.to_string()));
        if !(self.a_nm > 0.0) || !self.a_nm.is_finite() {
            return bad("a must be positive");
        }
        if !(self.r_norm > 0.0 && self.r_norm < 0.5) {
            return bad("hole radius must lie in (0, 0.5)·a");
        }
        if !(self.n_slab > 1.0) {
            return bad("slab index must exceed 1");
        }
        if !(self.slab_thickness_nm > 0.0) {
            return bad("slab thickness must be positive");
        }
        if self.nx < 5 || self.ny < 5 {
            return bad("need at least 5 periods in each direction");
        }
        Ok(())
    }

    pub fn radius_nm(&self) -> f64 {
        self.r_norm * self.a_nm
    }

    /// Row indices present in the lattice.
    fn rows(&self) -> std::ops::RangeInclusive<i32> {
        let lo = -((self.ny as i32 - 1) / 2);
        let hi = self.ny as i32 / 2;
        lo..=hi
    }

    fn half_width_q(&self) -> i32 {
        // |x| ≤ (nx-1)/2 · a  ⇔  |q| ≤ nx-1
        self.nx as i32 - 1
    }

    pub fn contains(&self, site: LatticeSite) -> bool {
        self.rows().contains(&site.row)
            && site.q.abs() <= self.half_width_q()
            && (site.q - site.row).rem_euclid(2) == 0
    }
}

/// Line-defect parameters; shift and radius in units of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectSpec {
    pub removed_holes: usize,
    #[serde(rename = "side_shift_over_a")]
    pub side_shift_norm: f64,
    #[serde(rename = "reduced_radius_over_a")]
    pub reduced_radius_norm: f64,
}

impl Default for DefectSpec {
    fn default() -> Self {
        Self {
            removed_holes: 3,
            side_shift_norm: 0.15,
            reduced_radius_norm: 0.25,
        }
    }
}

impl DefectSpec {
    pub fn validate(&self, lattice: &LatticeSpec) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidDefect(m.to_string()));
        if self.removed_holes < 1 {
            return bad("at least one hole must be removed");
        }
        if !(self.side_shift_norm >= 0.0 && self.side_shift_norm < 0.5) {
            return bad("side shift must lie in [0, 0.5)·a");
        }
        if !(self.reduced_radius_norm > 0.0 && self.reduced_radius_norm <= lattice.r_norm) {
            return bad("reduced radius must lie in (0, r]");
        }
        let q_end = self.end_q();
        if q_end + 2 > lattice.half_width_q() {
            return bad("lattice too narrow for the defect");
        }
        Ok(())
    }

    /// Doubled-column indices of the removed holes in row 0.
    pub fn removed_q(&self) -> Vec<i32> {
        let n = self.removed_holes as i32;
        let first = -2 * ((n - 1) / 2);
        (0..n).map(|k| first + 2 * k).collect()
    }

    /// `q` of the last removed hole on the +x side.
    fn end_q(&self) -> i32 {
        *self.removed_q().last().unwrap_or(&0)
    }

    fn start_q(&self) -> i32 {
        *self.removed_q().first().unwrap_or(&0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerLabel {
    L2,
    L3,
    L4,
}

impl LayerLabel {
    pub const ALL: [LayerLabel; 3] = [LayerLabel::L2, LayerLabel::L3, LayerLabel::L4];

    /// Annulus width used when a layer is requested by label only.
    pub fn default_width_nm(self) -> f64 {
        match self {
            LayerLabel::L2 => 5.0,
            LayerLabel::L3 => 10.0,
            LayerLabel::L4 => 20.0,
        }
    }

    /// Default host holes, placed relative to the cavity of `defect`.
    ///
    /// L2 sits two rows above and below the cavity center, L3 above and below
    /// the end holes, L4 on the reduced holes next to the cavity. At all of
    /// them the fundamental mode's Ey has one sign, and the annulus width
    /// grows as the local field weakens.
    pub fn default_hosts(self, defect: &DefectSpec) -> Vec<LatticeSite> {
        let end = defect.end_q().max(-defect.start_q());
        let sites: Vec<(i32, i32)> = match self {
            LayerLabel::L2 => vec![(0, 2)],
            LayerLabel::L3 => vec![(end + 2, 2)],
            LayerLabel::L4 => vec![(end - 1, 1)],
        };
        mirror_sites(&sites)
    }
}

impl fmt::Display for LayerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerLabel::L2 => "L2",
            LayerLabel::L3 => "L3",
            LayerLabel::L4 => "L4",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LayerLabel {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L2" | "l2" => Ok(LayerLabel::L2),
            "L3" | "l3" => Ok(LayerLabel::L3),
            "L4" | "l4" => Ok(LayerLabel::L4),
            other => Err(GeometryError::Document(format!("unknown layer label {other:?}"))),
        }
    }
}

/// Expands a list of first-quadrant sites into their four mirror images.
fn mirror_sites(sites: &[(i32, i32)]) -> Vec<LatticeSite> {
    let mut out = BTreeSet::new();
    for &(q, row) in sites {
        for sq in [-1, 1] {
            for sr in [-1, 1] {
                out.insert(LatticeSite { q: sq * q, row: sr * row });
            }
        }
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticeSite {
    /// Doubled column index: x = q·a/2.
    pub q: i32,
    pub row: i32,
}

impl fmt::Display for LatticeSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(q={}, row={})", self.q, self.row)
    }
}

/// A set of holes whose walls are pushed outward by a concentric air ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLayer {
    pub label: LayerLabel,
    pub host_holes: Vec<LatticeSite>,
    pub annulus_width_nm: f64,
}

impl PerturbationLayer {
    pub fn with_defaults(label: LayerLabel, defect: &DefectSpec) -> Self {
        Self {
            label,
            host_holes: label.default_hosts(defect),
            annulus_width_nm: label.default_width_nm(),
        }
    }
}

/// One air hole of the rasterized structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hole {
    pub site: LatticeSite,
    pub x_nm: f64,
    pub y_nm: f64,
    pub radius_nm: f64,
    /// Radial width of the perturbation annulus, 0 for unperturbed holes.
    pub annulus_nm: f64,
}

impl Hole {
    /// Radius of the air region including any annulus.
    pub fn outer_radius_nm(&self) -> f64 {
        self.radius_nm + self.annulus_nm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityDesign {
    pub lattice: LatticeSpec,
    pub defect: DefectSpec,
    #[serde(default)]
    pub perturbation_layers: Vec<PerturbationLayer>,
}

/// Builds the cavity with the requested perturbation layers at their default
/// hosts and widths.
pub fn build_cavity_design(
    lattice: LatticeSpec,
    defect: DefectSpec,
    labels: &[LayerLabel],
) -> Result<CavityDesign, GeometryError> {
    let unique: BTreeSet<LayerLabel> = labels.iter().copied().collect();
    let layers = unique
        .into_iter()
        .map(|l| PerturbationLayer::with_defaults(l, &defect))
        .collect();
    CavityDesign::new(lattice, defect, layers)
}

impl CavityDesign {
    pub fn new(
        lattice: LatticeSpec,
        defect: DefectSpec,
        perturbation_layers: Vec<PerturbationLayer>,
    ) -> Result<Self, GeometryError> {
        let design = Self {
            lattice,
            defect,
            perturbation_layers,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.lattice.validate()?;
        self.defect.validate(&self.lattice)?;
        let holes = self.base_holes();
        let present: BTreeSet<LatticeSite> = holes.iter().map(|h| h.site).collect();
        let mut seen_labels = BTreeSet::new();
        for layer in &self.perturbation_layers {
            if !seen_labels.insert(layer.label) {
                return Err(GeometryError::InvalidLayer {
                    label: layer.label,
                    reason: "label appears twice".into(),
                });
            }
            if !(layer.annulus_width_nm > 0.0) || !layer.annulus_width_nm.is_finite() {
                return Err(GeometryError::InvalidLayer {
                    label: layer.label,
                    reason: "annulus width must be positive".into(),
                });
            }
            for site in &layer.host_holes {
                if !present.contains(site) {
                    return Err(GeometryError::InvalidLayer {
                        label: layer.label,
                        reason: format!("host hole {site} does not exist"),
                    });
                }
            }
        }
        check_overlaps(&self.holes())
    }

    /// Lattice holes after defect removal, end-hole shift and radius
    /// reduction, without perturbations.
    fn base_holes(&self) -> Vec<Hole> {
        let lat = &self.lattice;
        let a = lat.a_nm;
        let r = lat.radius_nm();
        let removed = self.defect.removed_q();
        let (q_first, q_last) = (self.defect.start_q(), self.defect.end_q());
        let shift = self.defect.side_shift_norm * a;
        let reduced = self.defect.reduced_radius_norm * a;
        let qmax = lat.half_width_q();
        let mut holes = Vec::new();
        for row in lat.rows() {
            let q_start = if row.rem_euclid(2) == 0 {
                -(qmax - qmax.rem_euclid(2))
            } else {
                -(qmax - (qmax - 1).rem_euclid(2))
            };
            let mut q = q_start;
            while q <= qmax {
                let site = LatticeSite { q, row };
                q += 2;
                if row == 0 && removed.contains(&site.q) {
                    continue;
                }
                // Mirror-exact coordinates: compute |x| then apply the sign.
                let sign = if site.q < 0 { -1.0 } else { 1.0 };
                let mut ax = site.q.unsigned_abs() as f64 * a * 0.5;
                let mut radius = r;
                if row == 0 && (site.q == q_last + 2 || site.q == q_first - 2) {
                    ax += shift;
                }
                if row.abs() == 1 && site.q >= q_first - 1 && site.q <= q_last + 1 {
                    radius = reduced;
                }
                let ysign = if row < 0 { -1.0 } else { 1.0 };
                holes.push(Hole {
                    site,
                    x_nm: sign * ax,
                    y_nm: ysign * row.unsigned_abs() as f64 * SQRT3_2 * a,
                    radius_nm: radius,
                    annulus_nm: 0.0,
                });
            }
        }
        holes
    }

    /// All holes with perturbation annuli applied.
    pub fn holes(&self) -> Vec<Hole> {
        let mut holes = self.base_holes();
        for layer in &self.perturbation_layers {
            for h in holes.iter_mut() {
                if layer.host_holes.contains(&h.site) {
                    h.annulus_nm += layer.annulus_width_nm;
                }
            }
        }
        holes
    }

    pub fn hole(&self, site: LatticeSite) -> Option<Hole> {
        self.holes().into_iter().find(|h| h.site == site)
    }

    /// Perturbed holes grouped with their layer width.
    pub fn perturbation_sites(&self) -> Vec<(LayerLabel, Hole, f64)> {
        let holes = self.holes();
        let mut out = Vec::new();
        for layer in &self.perturbation_layers {
            for site in &layer.host_holes {
                if let Some(h) = holes.iter().find(|h| h.site == *site) {
                    out.push((layer.label, *h, layer.annulus_width_nm));
                }
            }
        }
        out
    }

    /// Same lattice and defect, no perturbations.
    pub fn unperturbed(&self) -> CavityDesign {
        CavityDesign {
            lattice: self.lattice.clone(),
            defect: self.defect.clone(),
            perturbation_layers: Vec::new(),
        }
    }

    pub fn layer_labels(&self) -> Vec<LayerLabel> {
        self.perturbation_layers.iter().map(|l| l.label).collect()
    }

    pub fn to_toml_string(&self) -> Result<String, GeometryError> {
        toml::to_string_pretty(self).map_err(|e| GeometryError::Document(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self, GeometryError> {
        let design: CavityDesign =
            toml::from_str(s).map_err(|e| GeometryError::Document(e.to_string()))?;
        design.validate()?;
        Ok(design)
    }
}

fn check_overlaps(holes: &[Hole]) -> Result<(), GeometryError> {
    // Neighbors are within one lattice constant; a coarse bucket by row keeps
    // this linear-ish.
    for (i, h) in holes.iter().enumerate() {
        for g in &holes[i + 1..] {
            if (g.site.row - h.site.row).abs() > 1 {
                continue;
            }
            let d = ((h.x_nm - g.x_nm).powi(2) + (h.y_nm - g.y_nm).powi(2)).sqrt();
            let gap = d - h.outer_radius_nm() - g.outer_radius_nm();
            if gap <= 0.0 {
                return Err(GeometryError::Overlap {
                    a: h.site,
                    b: g.site,
                    gap_nm: gap,
                });
            }
        }
    }
    Ok(())
}

/// Rasterization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterOptions {
    pub dx_nm: f64,
    /// Slab effective index of the 2D reduction.
    pub n_eff: f64,
    /// Unpatterned slab cells added on every side of the lattice (houses the
    /// absorbing layer of the solver).
    pub margin_cells: usize,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            dx_nm: 15.0,
            n_eff: 2.8,
            margin_cells: 18,
        }
    }
}

/// Permittivity map of a design; cells cut by a hole wall get the
/// area-weighted average of air and slab permittivity.
#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityMap {
    pub eps: Map2<f64>,
    /// Fraction of each cell's area that is air.
    pub air: Map2<f64>,
    pub eps_slab: f64,
}

impl PermittivityMap {
    pub fn air_fraction(&self) -> f64 {
        self.air.data.iter().sum::<f64>() / self.air.data.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# dx_nm={},nx={},ny={},origin_ix={},origin_iy={}",
            self.eps.dx, self.eps.nx, self.eps.ny, self.eps.origin.0, self.eps.origin.1
        )?;
        for iy in 0..self.eps.ny {
            let row: Vec<String> = (0..self.eps.nx)
                .map(|ix| format!("{}", self.eps.get(ix, iy)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn rasterize_epsilon(
    design: &CavityDesign,
    opts: &RasterOptions,
) -> Result<PermittivityMap, GeometryError> {
    let a = design.lattice.a_nm;
    let max_dx = a / 12.0;
    if !(opts.dx_nm > 0.0) || opts.dx_nm > max_dx * (1.0 + 1e-12) {
        return Err(GeometryError::Resolution {
            dx_nm: opts.dx_nm,
            max_nm: max_dx,
        });
    }
    let holes = design.holes();
    let ext_x = holes
        .iter()
        .map(|h| h.x_nm.abs() + h.outer_radius_nm())
        .fold(0.0, f64::max)
        + 0.5 * a;
    let ext_y = holes
        .iter()
        .map(|h| h.y_nm.abs() + h.outer_radius_nm())
        .fold(0.0, f64::max)
        + 0.5 * a;
    Ok(rasterize_holes(&holes, ext_x, ext_y, opts))
}

/// Rasterizes an arbitrary hole list onto an odd-sized grid covering
/// `[-half_x, half_x] × [-half_y, half_y]` plus the margin.
pub fn rasterize_holes(
    holes: &[Hole],
    half_x_nm: f64,
    half_y_nm: f64,
    opts: &RasterOptions,
) -> PermittivityMap {
    let dx = opts.dx_nm;
    let hx = (half_x_nm / dx).ceil() as usize + opts.margin_cells;
    let hy = (half_y_nm / dx).ceil() as usize + opts.margin_cells;
    let nx = 2 * hx + 1;
    let ny = 2 * hy + 1;
    let mut air = Map2::filled(nx, ny, dx, 0.0f64);
    let origin = air.origin;

    // Each hole touches a small box of cells; holes never share a cell
    // (they are separated by more than one pitch), so rows can be filled
    // independently.
    air.data
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(iy, row)| {
            let yc = (iy as f64 - origin.1 as f64) * dx;
            let (y0, y1) = (yc - 0.5 * dx, yc + 0.5 * dx);
            for h in holes {
                let rr = h.outer_radius_nm();
                if y1 <= h.y_nm - rr || y0 >= h.y_nm + rr {
                    continue;
                }
                let lo = ((h.x_nm - rr) / dx + origin.0 as f64 - 1.0).floor().max(0.0) as usize;
                let hi = (((h.x_nm + rr) / dx + origin.0 as f64 + 1.0).ceil() as usize).min(nx - 1);
                for (ix, cell) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let xc = (ix as f64 - origin.0 as f64) * dx;
                    let area = circle_rect_area(
                        h.x_nm,
                        h.y_nm,
                        rr,
                        xc - 0.5 * dx,
                        xc + 0.5 * dx,
                        y0,
                        y1,
                    );
                    *cell += area / (dx * dx);
                }
            }
            for c in row.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        });

    let eps_slab = opts.n_eff * opts.n_eff;
    let eps = air.map(|&f| f + (1.0 - f) * eps_slab);
    PermittivityMap { eps, air, eps_slab }
}

/// Exact area of the intersection of a disc with an axis-aligned rectangle.
///
/// The rectangle is first expressed relative to the disc center and folded
/// into the non-negative half-planes, so mirror-image cells evaluate
/// identical arguments and get bit-identical areas.
pub fn circle_rect_area(cx: f64, cy: f64, r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let (mut u0, mut u1) = (x0 - cx, x1 - cx);
    let (mut v0, mut v1) = (y0 - cy, y1 - cy);
    if u0 + u1 < 0.0 {
        (u0, u1) = (-u1, -u0);
    }
    if v0 + v1 < 0.0 {
        (v0, v1) = (-v1, -v0);
    }
    let a = u0.max(-r);
    let b = u1.min(r);
    if a >= b || v0 >= r || v1 <= -r {
        return 0.0;
    }
    let r2 = r * r;
    // Fully inside: farthest corner within the disc.
    let fu = u0.abs().max(u1.abs());
    let fv = v0.abs().max(v1.abs());
    if fu * fu + fv * fv <= r2 {
        return (u1 - u0) * (v1 - v0);
    }

    let h = |u: f64| (r2 - u * u).max(0.0).sqrt();
    let prim = |u: f64| {
        let u = u.clamp(-r, r);
        0.5 * (u * (r2 - u * u).max(0.0).sqrt() + r2 * (u / r).asin())
    };

    let mut pts = vec![a, b];
    for v in [v0, v1] {
        if v.abs() < r {
            let s = (r2 - v * v).sqrt();
            for p in [-s, s] {
                if p > a && p < b {
                    pts.push(p);
                }
            }
        }
    }
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());

    let mut area = 0.0;
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let hm = h(m);
        let upper_is_h = hm < v1;
        let lower_is_h = -hm > v0;
        let upper = if upper_is_h { hm } else { v1 };
        let lower = if lower_is_h { -hm } else { v0 };
        if upper <= lower {
            continue;
        }
        let int_h = prim(q) - prim(p);
        let width = q - p;
        let up = if upper_is_h { int_h } else { v1 * width };
        let lo = if lower_is_h { -int_h } else { v0 * width };
        area += up - lo;
    }
    area.max(0.0)
}
