//! Local intensity variance as a textureness coefficient.

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Per-pixel textureness; 0 only on perfectly constant neighbourhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturenessMap {
    pub t: Raster<f64>,
}

/// Variance of intensities inside a `window x window` box around every pixel.
///
/// Near the border the box is truncated to the in-raster pixels.
pub fn compute_textureness(image: &Raster<f32>, window: usize) -> Result<TexturenessMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "textureness window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = image.dims();
    // summed-area tables of I and I^2, one extra leading row and column
    let sw = w + 1;
    let mut s1 = vec![0.0f64; sw * (h + 1)];
    let mut s2 = vec![0.0f64; sw * (h + 1)];
    for y in 0..h {
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        for x in 0..w {
            let v = *image.at(x, y) as f64;
            r1 += v;
            r2 += v * v;
            s1[(y + 1) * sw + x + 1] = s1[y * sw + x + 1] + r1;
            s2[(y + 1) * sw + x + 1] = s2[y * sw + x + 1] + r2;
        }
    }
    let r = window / 2;
    let t = Raster::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        let rect = |s: &[f64]| s[y1 * sw + x1] - s[y0 * sw + x1] - s[y1 * sw + x0] + s[y0 * sw + x0];
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        let mean = rect(&s1) / n;
        let var = rect(&s2) / n - mean * mean;
        // cancellation can leave tiny residues on constant windows
        if var < 1e-9 * (1.0 + mean * mean) {
            0.0
        } else {
            var
        }
    });
    Ok(TexturenessMap { t })
}
