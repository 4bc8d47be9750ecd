//! Shared geometric and raster types.
//!
//! Coordinate conventions used throughout the crate:
//!
//! - World coordinates are meters in a single projected CRS: `x` easting,
//!   `y` northing, `z` altitude.
//! - Rasters are row-major with row 0 the northernmost row. The georeference
//!   stores the world position of the *center* of pixel (0, 0); column index
//!   grows eastward and row index grows southward.
//! - Image pixel coordinates `(u, v)` are `(column, row)` with integer values
//!   at pixel centers.
//! - Camera attitude uses `R = Rz(kappa) * Ry(phi) * Rx(omega)`, where `R`
//!   maps world directions into the camera frame. The camera looks along its
//!   +Z axis.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Per-point classification, reduced to what the extraction needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointClass {
    Unclassified,
    NonGround,
    Ground,
}

impl PointClass {
    /// Numeric code used by the ASCII and PLY formats. Ground keeps its
    /// ASPRS code (2).
    pub fn code(self) -> u8 {
        match self {
            PointClass::Unclassified => 0,
            PointClass::NonGround => 1,
            PointClass::Ground => 2,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            0 => PointClass::Unclassified,
            2 => PointClass::Ground,
            _ => PointClass::NonGround,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub class: Option<Vec<PointClass>>,
    pub intensity: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            class: None,
            intensity: None,
        }
    }

    pub fn with_class(mut self, class: Vec<PointClass>) -> Result<Self> {
        if class.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "class list has {} entries for {} points",
                class.len(),
                self.points.len()
            )));
        }
        self.class = Some(class);
        Ok(self)
    }

    pub fn with_intensity(mut self, intensity: Vec<u8>) -> Result<Self> {
        if intensity.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "intensity list has {} entries for {} points",
                intensity.len(),
                self.points.len()
            )));
        }
        self.intensity = Some(intensity);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copies the points at `indices`, carrying class and intensity along.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            class: self
                .class
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            intensity: self
                .intensity
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Planimetric bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn bounds_xy(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.points.first()?;
        let mut b = (first.x, first.y, first.x, first.y);
        for p in &self.points[1..] {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        Some(b)
    }
}

/// Affine pixel/world mapping for north-up rasters with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    /// Easting of the center of pixel (0, 0).
    pub origin_x: f64,
    /// Northing of the center of pixel (0, 0).
    pub origin_y: f64,
    /// Meters per pixel.
    pub resolution: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::InvalidArgument("non-finite raster origin".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            resolution,
        })
    }

    /// Unit transform: pixel (c, r) sits at world (c, -r).
    pub fn identity() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            resolution: 1.0,
        }
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.resolution,
            self.origin_y - row * self.resolution,
        )
    }

    /// Fractional pixel coordinates `(col, row)` of a world position.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.resolution,
            (self.origin_y - y) / self.resolution,
        )
    }

    /// Integer cell containing a world position (cells are centered on
    /// pixel centers). May be negative or out of range.
    pub fn world_to_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let (c, r) = self.world_to_pixel(x, y);
        (c.round() as i64, r.round() as i64)
    }

    pub fn pixel_area(&self) -> f64 {
        self.resolution * self.resolution
    }
}

/// Row-major, band-interleaved raster with a georeference.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster<T> {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub geo: GeoTransform,
    pub data: Vec<T>,
}

impl<T: Copy + Default> GeoRaster<T> {
    pub fn filled(width: usize, height: usize, bands: usize, geo: GeoTransform, value: T) -> Self {
        assert!(width >= 1 && height >= 1 && bands >= 1, "empty raster");
        Self {
            width,
            height,
            bands,
            geo,
            data: vec![value; width * height * bands],
        }
    }

    pub fn new(width: usize, height: usize, bands: usize, geo: GeoTransform) -> Self {
        Self::filled(width, height, bands, geo, T::default())
    }

    pub fn from_data(
        width: usize,
        height: usize,
        bands: usize,
        geo: GeoTransform,
        data: Vec<T>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::InvalidArgument("raster dimensions must be >= 1".into()));
        }
        if data.len() != width * height * bands {
            return Err(Error::InvalidArgument(format!(
                "raster data has {} values, expected {}",
                data.len(),
                width * height * bands
            )));
        }
        Ok(Self {
            width,
            height,
            bands,
            geo,
            data,
        })
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        (row * self.width + col) * self.bands
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, band: usize) -> T {
        self.data[self.index(col, row) + band]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, band: usize, value: T) {
        let i = self.index(col, row) + band;
        self.data[i] = value;
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[T] {
        let i = self.index(col, row);
        &self.data[i..i + self.bands]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }
}

/// Single-band {0, 1} raster.
pub type BinaryMask = GeoRaster<u8>;

/// Raster of non-negative segment labels; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMask {
    pub raster: GeoRaster<u32>,
    /// Number of labels; labels present are exactly `1..=count`.
    pub count: u32,
}

impl LabeledMask {
    /// Builds a mask from arbitrary labels, renumbering them to `1..=n` in
    /// raster-scan order of first occurrence.
    pub fn from_raw(mut raster: GeoRaster<u32>) -> Self {
        assert_eq!(raster.bands, 1, "labeled mask must be single-band");
        let count = relabel_in_scan_order(&mut raster.data);
        Self { raster, count }
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> {
        1..=self.count
    }

    /// Pixel count per label, indexed by label (index 0 = background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count as usize + 1];
        for &l in &self.raster.data {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Pixel coordinates `(col, row)` of every labeled pixel, grouped by label
    /// (index 0 unused), each list in raster-scan order.
    pub fn pixel_lists(&self) -> Vec<Vec<(usize, usize)>> {
        let mut lists = vec![Vec::new(); self.count as usize + 1];
        for row in 0..self.raster.height {
            for col in 0..self.raster.width {
                let l = self.raster.data[row * self.raster.width + col];
                if l > 0 {
                    lists[l as usize].push((col, row));
                }
            }
        }
        lists
    }

    /// Keeps the labels for which `keep(label)` is true and renumbers the
    /// survivors contiguously (preserving their relative order).
    pub fn retain(&self, mut keep: impl FnMut(u32) -> bool) -> LabeledMask {
        let mut map = vec![0u32; self.count as usize + 1];
        let mut next = 0;
        for l in 1..=self.count {
            if keep(l) {
                next += 1;
                map[l as usize] = next;
            }
        }
        let mut raster = self.raster.clone();
        for v in raster.data.iter_mut() {
            *v = map[*v as usize];
        }
        LabeledMask {
            raster,
            count: next,
        }
    }

    pub fn to_binary(&self) -> BinaryMask {
        let r = &self.raster;
        GeoRaster {
            width: r.width,
            height: r.height,
            bands: 1,
            geo: r.geo,
            data: r.data.iter().map(|&l| u8::from(l > 0)).collect(),
        }
    }
}

fn relabel_in_scan_order(data: &mut [u32]) -> u32 {
    let mut map = std::collections::HashMap::new();
    let mut next = 0u32;
    for v in data.iter_mut() {
        if *v == 0 {
            continue;
        }
        let mapped = *map.entry(*v).or_insert_with(|| {
            next += 1;
            next
        });
        *v = mapped;
    }
    next
}

/// Exterior orientation plus the minimal interior model (square pixels,
/// zero skew).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub omega: f64,
    pub phi: f64,
    pub kappa: f64,
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point `(u0, v0)` in pixels.
    pub principal_point: (f64, f64),
}

impl CameraPose {
    pub fn center(&self) -> Point3 {
        Point3::new(self.x0, self.y0, self.z0)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_opk(self.omega, self.phi, self.kappa)
    }

    pub fn calibration(&self) -> Matrix3<f64> {
        let (u0, v0) = self.principal_point;
        Matrix3::new(self.focal, 0.0, u0, 0.0, self.focal, v0, 0.0, 0.0, 1.0)
    }

    /// Nadir-looking camera at `center`: image columns run east and rows run
    /// south, matching the raster convention.
    pub fn nadir(center: Point3, focal: f64, principal_point: (f64, f64)) -> Self {
        Self {
            x0: center.x,
            y0: center.y,
            z0: center.z,
            omega: std::f64::consts::PI,
            phi: 0.0,
            kappa: 0.0,
            focal,
            principal_point,
        }
    }
}

/// 3x4 finite projective camera, defined up to scale. Serialized as the
/// 12 entries in row-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProjectionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 12]>::deserialize(d)?;
        Ok(Self::from_row_major(&v))
    }
}

/// Homogeneous scale below which a point is treated as lying on the
/// principal plane, relative to the magnitude of the third row.
const W_EPS: f64 = 1e-12;

impl ProjectionMatrix {
    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Row-major 12 values.
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Self(Matrix3x4::from_row_slice(v))
    }

    /// Returns a copy scaled to unit Frobenius norm.
    pub fn normalized(&self) -> Self {
        Self(self.0 / self.0.norm())
    }

    /// Relative distance between two matrices after fixing scale and sign.
    pub fn distance_up_to_scale(&self, other: &ProjectionMatrix) -> f64 {
        let a = self.0 / self.0.norm();
        let b = other.0 / other.0.norm();
        (a - b).norm().min((a + b).norm())
    }

    /// Back-projects pixel `(u, v)` onto the horizontal plane `z`.
    pub fn backproject_to_plane(&self, u: f64, v: f64, z: f64) -> Result<(f64, f64)> {
        let p = &self.0;
        let r1 = p.row(0) - p.row(2) * u;
        let r2 = p.row(1) - p.row(2) * v;
        let a = nalgebra::Matrix2::new(r1[0], r1[1], r2[0], r2[1]);
        let b = nalgebra::Vector2::new(-(r1[2] * z + r1[3]), -(r2[2] * z + r2[3]));
        let sol = a.lu().solve(&b).ok_or_else(|| {
            Error::DegenerateConfiguration("pixel ray parallel to the target plane".into())
        })?;
        Ok((sol.x, sol.y))
    }
}

/// `R = Rz(kappa) * Ry(phi) * Rx(omega)`.
pub fn rotation_from_opk(omega: f64, phi: f64, kappa: f64) -> Matrix3<f64> {
    let (so, co) = omega.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (sk, ck) = kappa.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, co, -so, 0.0, so, co);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(ck, -sk, 0.0, sk, ck, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Inverse of [`rotation_from_opk`] for a proper rotation matrix.
/// Returns `(omega, phi, kappa)` with `phi` in `[-pi/2, pi/2]`.
pub fn opk_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let phi = (-r[(2, 0)]).atan2((r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt());
    let omega = r[(2, 1)].atan2(r[(2, 2)]);
    let kappa = r[(1, 0)].atan2(r[(0, 0)]);
    (omega, phi, kappa)
}

/// `P = K [R | -R C]`.
pub fn compose_projection(pose: &CameraPose) -> ProjectionMatrix {
    let r = pose.rotation();
    let c = pose.center().to_vector();
    let t = -(r * c);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    ProjectionMatrix(pose.calibration() * rt)
}

/// Dehomogenised projection of a world point.
pub fn project_point(p: &ProjectionMatrix, x: &Point3) -> Result<(f64, f64)> {
    let h = p.0 * Vector4::new(x.x, x.y, x.z, 1.0);
    let scale = p.0.row(2).norm() * (1.0 + x.to_vector().norm());
    if h.z.abs() <= W_EPS * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::PointAtInfinity(h.z));
    }
    Ok((h.x / h.z, h.y / h.z))
}
