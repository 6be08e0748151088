//! Dense row-major 2-D rasters and integer pixel coordinates.

use std::ops::{Index, IndexMut};

/// Integer pixel coordinate, `x` along columns and `y` along rows (y down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// True when `other` is one of the 8 neighbours of `self`.
    pub fn is_adjacent8(self, other: Pixel) -> bool {
        let dx = (self.x - other.x).abs();
        let dy = (self.y - other.y).abs();
        dx <= 1 && dy <= 1 && (dx + dy) > 0
    }

    /// Lexicographic (row, column) key used for every documented tie-break.
    pub fn scan_key(self) -> (i32, i32) {
        (self.y, self.x)
    }

    pub fn dist2(self, other: Pixel) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    #[inline]
    pub fn index_of(&self, p: Pixel) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    #[inline]
    pub fn pixel_of(&self, index: usize) -> Pixel {
        Pixel::new((index % self.width) as i32, (index / self.width) as i32)
    }

    #[inline]
    pub fn get(&self, p: Pixel) -> Option<&T> {
        if self.contains(p) {
            Some(&self.data[self.index_of(p)])
        } else {
            None
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    /// Value at `(x, y)` with coordinates clamped into the raster.
    #[inline]
    pub fn clamped(&self, x: i64, y: i64) -> &T {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        &self.data[cy * self.width + cx]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl<T> Index<Pixel> for Raster<T> {
    type Output = T;

    #[inline]
    fn index(&self, p: Pixel) -> &T {
        debug_assert!(self.contains(p));
        &self.data[self.index_of(p)]
    }
}

impl<T> IndexMut<Pixel> for Raster<T> {
    #[inline]
    fn index_mut(&mut self, p: Pixel) -> &mut T {
        debug_assert!(self.contains(p));
        let i = self.index_of(p);
        &mut self.data[i]
    }
}

impl Raster<f32> {
    /// Bilinear sample at a continuous position (pixel centres at integers).
    /// Returns `None` outside the convex hull of the pixel centres.
    #[inline]
    pub fn bilinear(&self, x: f32, y: f32) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x as usize;
        let y0 = y as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            // Allow exact hits on the last row/column.
            if x0 < self.width && y0 < self.height && x == x0 as f32 && y == y0 as f32 {
                return Some(self.data[y0 * self.width + x0]);
            }
            return None;
        }
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let i = y0 * self.width + x0;
        let (r0, r1) = (&self.data[i..i + 2], &self.data[i + self.width..i + self.width + 2]);
        let (a, b, c, d) = (r0[0], r0[1], r1[0], r1[1]);
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// 2x box-filter downsample; odd trailing rows/columns are dropped.
    pub fn downsample_box(&self) -> Raster<f32> {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        Raster::from_fn(w, h, |x, y| {
            let x0 = (2 * x).min(self.width - 1);
            let y0 = (2 * y).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            0.25 * (self.at(x0, y0) + self.at(x1, y0) + self.at(x0, y1) + self.at(x1, y1))
        })
    }
}

impl<T: Copy> Raster<T> {
    /// 2x nearest downsample taking the top-left pixel of each 2x2 block.
    pub fn downsample_nearest(&self) -> Raster<T> {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        Raster::from_fn(w, h, |x, y| {
            *self.at((2 * x).min(self.width - 1), (2 * y).min(self.height - 1))
        })
    }
}

impl Raster<f64> {
    /// Min and max over finite values; `None` if there are none.
    pub fn finite_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Min-max normalisation onto `[0, scale]`; a constant raster maps to zeros.
    pub fn normalized(&self, scale: f64) -> Raster<f64> {
        match self.finite_range() {
            Some((lo, hi)) if hi > lo => self.map(|&v| (v - lo) / (hi - lo) * scale),
            _ => self.map(|_| 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_between_centres() {
        let r = Raster::from_vec(2, 2, vec![0.0f32, 1.0, 2.0, 3.0]);
        assert_eq!(r.bilinear(0.5, 0.5), Some(1.5));
        assert_eq!(r.bilinear(1.0, 1.0), Some(3.0));
        assert_eq!(r.bilinear(-0.1, 0.0), None);
        assert_eq!(r.bilinear(1.2, 0.0), None);
    }

    #[test]
    fn nearest_downsample_keeps_top_left() {
        let r = Raster::from_fn(4, 4, |x, y| (y * 4 + x) as u32);
        let d = r.downsample_nearest();
        assert_eq!(d.data(), &[0, 2, 8, 10]);
    }

    #[test]
    fn normalisation_of_constant_is_zero() {
        let r = Raster::filled(3, 3, 7.0f64);
        assert!(r.normalized(255.0).data().iter().all(|&v| v == 0.0));
    }
}
