//! Brovey pansharpening of a coarse multispectral image with a fine
//! panchromatic band.

use crate::error::{Error, Result};
use crate::model::GeoRaster;

fn extent(r: &GeoRaster<impl Copy>) -> (f64, f64, f64, f64) {
    let g = &r.geo;
    let half = g.resolution / 2.0;
    let (x0, y0) = (g.origin_x - half, g.origin_y + half);
    (
        x0,
        y0 - r.height as f64 * g.resolution,
        x0 + r.width as f64 * g.resolution,
        y0,
    )
}

fn bilinear(ms: &GeoRaster<f64>, col: f64, row: f64, band: usize) -> f64 {
    let col = col.clamp(0.0, (ms.width - 1) as f64);
    let row = row.clamp(0.0, (ms.height - 1) as f64);
    let (c0, r0) = (col.floor() as usize, row.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(ms.width - 1), (r0 + 1).min(ms.height - 1));
    let (fc, fr) = (col - c0 as f64, row - r0 as f64);
    let top = ms.get(c0, r0, band) * (1.0 - fc) + ms.get(c1, r0, band) * fc;
    let bottom = ms.get(c0, r1, band) * (1.0 - fc) + ms.get(c1, r1, band) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Unclipped Brovey transform on the panchromatic grid. The multispectral
/// raster is upsampled bilinearly; its first three bands are taken as
/// R, G, B and the intensity is the mean over all of its bands.
pub fn brovey(pan: &GeoRaster<f64>, ms: &GeoRaster<f64>) -> Result<GeoRaster<f64>> {
    if pan.bands != 1 {
        return Err(Error::InvalidArgument(format!(
            "panchromatic raster must have one band, got {}",
            pan.bands
        )));
    }
    if ms.bands < 3 {
        return Err(Error::InvalidArgument(format!(
            "multispectral raster needs at least 3 bands, got {}",
            ms.bands
        )));
    }
    let ratio = ms.geo.resolution / pan.geo.resolution;
    if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::ResolutionMismatch(format!(
            "multispectral/panchromatic resolution ratio {ratio} is not a positive integer"
        )));
    }
    let (a0, b0, a1, b1) = extent(pan);
    let (c0, d0, c1, d1) = extent(ms);
    if a0 >= c1 || c0 >= a1 || b0 >= d1 || d0 >= b1 {
        return Err(Error::NoOverlap);
    }
    let mut out = GeoRaster::<f64>::new(pan.width, pan.height, 3, pan.geo);
    let nb = ms.bands as f64;
    for row in 0..pan.height {
        for col in 0..pan.width {
            let (x, y) = pan.geo.pixel_to_world(col as f64, row as f64);
            let (mc, mr) = ms.geo.world_to_pixel(x, y);
            let bands: Vec<f64> = (0..ms.bands).map(|b| bilinear(ms, mc, mr, b)).collect();
            let intensity = bands.iter().sum::<f64>() / nb;
            let p = pan.get(col, row, 0);
            let scale = if intensity > 0.0 { p / intensity } else { 0.0 };
            for b in 0..3 {
                out.set(col, row, b, bands[b] * scale);
            }
        }
    }
    Ok(out)
}

/// 8-bit pansharpening with output clipped to `[0, 255]`.
pub fn pansharpen(pan: &GeoRaster<u8>, ms: &GeoRaster<u8>) -> Result<GeoRaster<u8>> {
    let to_f = |r: &GeoRaster<u8>| GeoRaster {
        width: r.width,
        height: r.height,
        bands: r.bands,
        geo: r.geo,
        data: r.data.iter().map(|&v| f64::from(v)).collect(),
    };
    let f = brovey(&to_f(pan), &to_f(ms))?;
    Ok(GeoRaster {
        width: f.width,
        height: f.height,
        bands: 3,
        geo: f.geo,
        data: f.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    })
}
