//! sRGB to CIE L*a*b* (D65).

use crate::error::{Error, Result};
use crate::model::{GeoRaster, GeoTransform};

const M: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// D65 white as the image of sRGB white under M, so white maps to L* = 100
const WHITE: [f64; 3] = [
    M[0][0] + M[0][1] + M[0][2],
    M[1][0] + M[1][1] + M[1][2],
    M[2][0] + M[2][1] + M[2][2],
];

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one 8-bit sRGB triplet to `(L*, a*, b*)`.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let [x, y, z] = M.map(|row| row[0] * r + row[1] * g + row[2] * b);
    let (fx, fy, fz) = (lab_f(x / WHITE[0]), lab_f(y / WHITE[1]), lab_f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Per-pixel L*a*b* values of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub geo: GeoTransform,
    pub data: Vec<[f64; 3]>,
    /// Whether L* takes part in clustering; otherwise only (a*, b*).
    pub use_l: bool,
}

impl LabImage {
    /// Clustering feature of pixel `i` in color units.
    pub fn feature(&self, i: usize) -> ([f64; 3], usize) {
        let [l, a, b] = self.data[i];
        if self.use_l {
            ([l, a, b], 3)
        } else {
            ([a, b, 0.0], 2)
        }
    }

    pub fn dims(&self) -> usize {
        if self.use_l {
            3
        } else {
            2
        }
    }
}

pub fn rgb_to_lab(image: &GeoRaster<u8>, use_l: bool) -> Result<LabImage> {
    if image.bands != 3 {
        return Err(Error::NotThreeBands(image.bands));
    }
    let data = image
        .data
        .chunks_exact(3)
        .map(|p| srgb_to_lab([p[0], p[1], p[2]]))
        .collect();
    Ok(LabImage {
        width: image.width,
        height: image.height,
        geo: image.geo,
        data,
        use_l,
    })
}
