//! Dense row-major 2D maps shared by the geometry, solver and far-field code.

use serde::{Deserialize, Serialize};

/// A 2D array stored row-major: `index = iy * nx + ix`.
///
/// Cell `(ix, iy)` is centered at `((ix - cx) * dx, (iy - cy) * dx)` where
/// `(cx, cy)` is the origin cell; maps produced by the rasterizer have odd
/// dimensions with the origin in the middle cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Map2<T> {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub origin: (usize, usize),
    pub data: Vec<T>,
}

impl<T: Clone> Map2<T> {
    pub fn filled(nx: usize, ny: usize, dx: f64, value: T) -> Self {
        Self {
            nx,
            ny,
            dx,
            origin: (nx / 2, ny / 2),
            data: vec![value; nx * ny],
        }
    }
}

impl<T> Map2<T> {
    pub fn from_vec(nx: usize, ny: usize, dx: f64, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nx * ny, "map data length mismatch");
        Self {
            nx,
            ny,
            dx,
            origin: (nx / 2, ny / 2),
            data,
        }
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> &T {
        &self.data[iy * self.nx + ix]
    }

    #[inline]
    pub fn get_mut(&mut self, ix: usize, iy: usize) -> &mut T {
        let nx = self.nx;
        &mut self.data[iy * nx + ix]
    }

    /// Physical x coordinate (nm) of a cell center.
    #[inline]
    pub fn x_of(&self, ix: usize) -> f64 {
        (ix as f64 - self.origin.0 as f64) * self.dx
    }

    #[inline]
    pub fn y_of(&self, iy: usize) -> f64 {
        (iy as f64 - self.origin.1 as f64) * self.dx
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Map2<U> {
        Map2 {
            nx: self.nx,
            ny: self.ny,
            dx: self.dx,
            origin: self.origin,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Map2<U>) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.origin == other.origin
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx.abs()
    }
}

impl Map2<f64> {
    /// Bilinear interpolation at physical coordinates (nm); `None` outside the
    /// cell-center hull.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(self, x, y, |v| *v)
    }
}

impl Map2<num_complex::Complex64> {
    pub fn sample(&self, x: f64, y: f64) -> Option<num_complex::Complex64> {
        let re = bilinear(self, x, y, |v| v.re)?;
        let im = bilinear(self, x, y, |v| v.im)?;
        Some(num_complex::Complex64::new(re, im))
    }
}

fn bilinear<T>(map: &Map2<T>, x: f64, y: f64, f: impl Fn(&T) -> f64) -> Option<f64> {
    let fx = x / map.dx + map.origin.0 as f64;
    let fy = y / map.dx + map.origin.1 as f64;
    if !(fx >= 0.0 && fy >= 0.0) {
        return None;
    }
    let max_x = (map.nx - 1) as f64;
    let max_y = (map.ny - 1) as f64;
    if fx > max_x || fy > max_y {
        return None;
    }
    let ix = (fx.floor() as usize).min(map.nx.saturating_sub(2));
    let iy = (fy.floor() as usize).min(map.ny.saturating_sub(2));
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let ix1 = (ix + 1).min(map.nx - 1);
    let iy1 = (iy + 1).min(map.ny - 1);
    let v00 = f(map.get(ix, iy));
    let v10 = f(map.get(ix1, iy));
    let v01 = f(map.get(ix, iy1));
    let v11 = f(map.get(ix1, iy1));
    Some(
        v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty,
    )
}
