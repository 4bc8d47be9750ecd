//! Synthetic urban scenes with known ground truth: classified LiDAR
//! samples, an orthographic RGB render, the true camera and control points.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitCircle, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Vec2};
use crate::model::{
    compose_projection, opk_from_rotation, rotation_from_opk, CameraPose, GeoRaster, GeoTransform, Point3,
    PointClass, PointCloud,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    LShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Side of the square scene, meters.
    pub extent: f64,
    pub n_buildings: usize,
    pub height_range: (f64, f64),
    /// Range of the long footprint side, meters.
    pub size_range: (f64, f64),
    pub shapes: Vec<Shape>,
    pub n_trees: usize,
    pub tree_radius: (f64, f64),
    pub tree_height: (f64, f64),
    /// Points per square meter.
    pub density: f64,
    /// Image meters per pixel.
    pub resolution: f64,
    /// Standard deviation of point elevations, meters.
    pub point_jitter: f64,
    /// Standard deviation of pixel color noise, 8-bit units.
    pub color_noise: f64,
    /// Minimum clearance between objects, meters.
    pub gap: f64,
    /// Height of the nadir camera above the ground, meters.
    pub altitude: f64,
    pub ground_control_points: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: 300.0,
            n_buildings: 15,
            height_range: (5.0, 25.0),
            size_range: (14.0, 30.0),
            shapes: vec![Shape::Rectangle, Shape::LShape],
            n_trees: 8,
            tree_radius: (4.0, 7.0),
            tree_height: (4.0, 10.0),
            density: 2.0,
            resolution: 1.0,
            point_jitter: 0.05,
            color_noise: 3.0,
            gap: 8.0,
            altitude: 100_000.0,
            ground_control_points: 8,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene spec: {m}")));
        let range_ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && 0.0 < r.0 && r.0 <= r.1;
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent must be positive");
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be positive");
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution must be positive");
        }
        if !range_ok(self.height_range) || !range_ok(self.size_range) || !range_ok(self.tree_radius) || !range_ok(self.tree_height) {
            return bad("ranges must be positive and ordered");
        }
        if self.shapes.is_empty() && self.n_buildings > 0 {
            return bad("no footprint shapes allowed");
        }
        if self.point_jitter < 0.0 || self.color_noise < 0.0 || self.gap < 0.0 {
            return bad("noise levels and gap must be non-negative");
        }
        if !(self.altitude > self.height_range.1) {
            return bad("altitude must exceed the tallest building");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingTruth {
    pub id: u32,
    pub shape: Shape,
    /// Counter-clockwise outline, world meters.
    pub polygon: Vec<Vec2>,
    pub height: f64,
    pub center: Vec2,
    pub area: f64,
    /// Long-axis direction, `[0, pi)`.
    pub angle: f64,
    pub roof_color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTruth {
    pub center: Vec2,
    pub core_radius: f64,
    /// Arm end points and half widths.
    pub arms: Vec<(Vec2, f64)>,
    pub height: f64,
    pub radius: f64,
}

impl TreeTruth {
    pub fn contains(&self, p: Vec2) -> bool {
        if dist(p, self.center) <= self.core_radius {
            return true;
        }
        self.arms.iter().any(|&(end, hw)| segment_distance(p, self.center, end) <= hw)
    }
}

/// A manually-measurable point: where it is in the image and in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub pixel: (f64, f64),
    pub world: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub pose: CameraPose,
    /// Georeference of the orthographic render.
    pub image_geo: GeoTransform,
    pub buildings: Vec<BuildingTruth>,
    pub trees: Vec<TreeTruth>,
    pub control_points: Vec<ControlPoint>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub image: GeoRaster<u8>,
    pub truth: SceneTruth,
}

const GROUND_COLOR: [f64; 3] = [156.0, 148.0, 128.0];
const TREE_COLOR: [f64; 3] = [58.0, 112.0, 52.0];
const ROOF_PALETTE: [[u8; 3]; 8] = [
    [178, 42, 36],
    [40, 60, 150],
    [235, 235, 228],
    [60, 60, 66],
    [196, 110, 40],
    [120, 30, 90],
    [30, 130, 140],
    [210, 190, 60],
];

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

/// Even-odd point in polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Signed area and centroid of a simple polygon.
pub fn polygon_area_centroid(poly: &[Vec2]) -> (f64, Vec2) {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..poly.len() {
        let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let a = a / 2.0;
    (a, [cx / (6.0 * a), cy / (6.0 * a)])
}

fn outline(shape: Shape, length: f64, width: f64, cut: (f64, f64)) -> Vec<Vec2> {
    let (hl, hw) = (length / 2.0, width / 2.0);
    match shape {
        Shape::Rectangle => vec![[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]],
        Shape::LShape => {
            // notch removed from the (+x, +y) corner
            let (cx, cy) = (hl - cut.0 * length, hw - cut.1 * width);
            vec![[-hl, -hw], [hl, -hw], [hl, cy], [cx, cy], [cx, hw], [-hl, hw]]
        }
    }
}

fn place(poly: &[Vec2], center: Vec2, angle: f64) -> Vec<Vec2> {
    let (s, c) = angle.sin_cos();
    poly.iter()
        .map(|p| [center[0] + c * p[0] - s * p[1], center[1] + s * p[0] + c * p[1]])
        .collect()
}

/// Raster cells (on `geo`) whose centers satisfy `inside`, searched within
/// the world box `[x0, x1] x [y0, y1]`.
fn cells_inside(geo: &GeoTransform, w: usize, h: usize, bbox: (f64, f64, f64, f64), inside: impl Fn(Vec2) -> bool) -> Vec<(usize, usize)> {
    let (x0, y0, x1, y1) = bbox;
    let (c0, r0) = geo.world_to_pixel(x0, y1);
    let (c1, r1) = geo.world_to_pixel(x1, y0);
    let clamp_c = |v: f64| (v.max(0.0) as usize).min(w - 1);
    let clamp_r = |v: f64| (v.max(0.0) as usize).min(h - 1);
    let mut out = Vec::new();
    for r in clamp_r(r0.floor())..=clamp_r(r1.ceil()) {
        for c in clamp_c(c0.floor())..=clamp_c(c1.ceil()) {
            let (x, y) = geo.pixel_to_world(c as f64, r as f64);
            if inside([x, y]) {
                out.push((c, r));
            }
        }
    }
    out
}

fn bbox(poly: &[Vec2]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p[0]), b.min(p[1]), c.max(p[0]), d.max(p[1])),
    )
}

struct Occupied {
    center: Vec2,
    radius: f64,
}

fn sample_buildings(spec: &SceneSpec, rng: &mut ChaCha8Rng, occupied: &mut Vec<Occupied>) -> Result<Vec<BuildingTruth>> {
    let mut out = Vec::with_capacity(spec.n_buildings);
    let max_attempts = 2000 * spec.n_buildings.max(1);
    let mut attempts = 0;
    while out.len() < spec.n_buildings {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::SpecInfeasible(format!(
                "placed only {} of {} buildings in a {} m scene",
                out.len(),
                spec.n_buildings,
                spec.extent
            )));
        }
        let shape = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        let length = rng.gen_range(spec.size_range.0..=spec.size_range.1);
        let aspect = rng.gen_range(1.3..=2.5);
        let width = (length / aspect).max(spec.size_range.0 * 0.6);
        let cut = (rng.gen_range(0.35..0.5), rng.gen_range(0.35..0.5));
        let radius = 0.5 * length.hypot(width);
        let margin = radius + spec.gap;
        if 2.0 * margin >= spec.extent {
            continue;
        }
        let center = [rng.gen_range(margin..spec.extent - margin), rng.gen_range(margin..spec.extent - margin)];
        if occupied.iter().any(|o| dist(o.center, center) < o.radius + radius + spec.gap) {
            continue;
        }
        let angle = rng.gen_range(0.0..PI);
        let height = rng.gen_range(spec.height_range.0..=spec.height_range.1);
        let polygon = place(&outline(shape, length, width, cut), center, angle);
        let (area, centroid) = polygon_area_centroid(&polygon);
        occupied.push(Occupied { center, radius });
        let id = out.len() as u32 + 1;
        out.push(BuildingTruth {
            id,
            shape,
            polygon,
            height,
            center: centroid,
            area,
            angle,
            roof_color: ROOF_PALETTE[(id as usize - 1) % ROOF_PALETTE.len()],
        });
    }
    Ok(out)
}

/// Star-shaped canopy with thin arms; redrawn until its rasterized MBR
/// filling is below 45 %.
fn sample_tree(spec: &SceneSpec, rng: &mut ChaCha8Rng, center: Vec2, radius: f64) -> TreeTruth {
    let geo = GeoTransform::new(0.0, 0.0, spec.resolution).expect("validated resolution");
    let n = (2.0 * radius / spec.resolution).ceil() as usize * 2 + 3;
    let mut tree = None;
    for attempt in 0..200 {
        let arms_n = rng.gen_range(3..=5);
        let base = rng.gen_range(0.0..2.0 * PI);
        let arms: Vec<(Vec2, f64)> = (0..arms_n)
            .map(|k| {
                let a = base + 2.0 * PI * k as f64 / arms_n as f64 + rng.gen_range(-0.3..0.3);
                let len = radius * rng.gen_range(0.75..1.0);
                ([center[0] + len * a.cos(), center[1] + len * a.sin()], radius * rng.gen_range(0.12..0.2))
            })
            .collect();
        let t = TreeTruth {
            center,
            core_radius: radius * 0.3,
            arms,
            height: rng.gen_range(spec.tree_height.0..=spec.tree_height.1),
            radius,
        };
        // filling measured on a local grid with the image resolution
        let off = [center[0] - (n / 2) as f64 * spec.resolution, center[1] + (n / 2) as f64 * spec.resolution];
        let local = GeoTransform::new(off[0], off[1], geo.resolution).expect("finite origin");
        let px = cells_inside(&local, n, n, (off[0], off[1] - n as f64 * spec.resolution, off[0] + n as f64 * spec.resolution, off[1]), |p| t.contains(p));
        let filling = if px.len() < 3 {
            100.0
        } else {
            geometry::filling_percentage(px.len() as f64, geometry::minimal_bounding_rectangle(&px).area)
        };
        if filling < 45.0 || attempt == 199 {
            tree = Some(t);
            if filling < 45.0 {
                break;
            }
            log::warn!("tree at {center:?} kept with filling {filling:.1}%");
        }
    }
    tree.expect("loop assigns on the last attempt")
}

fn sample_trees(spec: &SceneSpec, rng: &mut ChaCha8Rng, occupied: &mut Vec<Occupied>) -> Vec<TreeTruth> {
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < spec.n_trees && attempts < 2000 * spec.n_trees.max(1) {
        attempts += 1;
        let radius = rng.gen_range(spec.tree_radius.0..=spec.tree_radius.1);
        let margin = radius + spec.gap / 2.0;
        if 2.0 * margin >= spec.extent {
            continue;
        }
        let center = [rng.gen_range(margin..spec.extent - margin), rng.gen_range(margin..spec.extent - margin)];
        if occupied.iter().any(|o| dist(o.center, center) < o.radius + radius + spec.gap / 2.0) {
            continue;
        }
        occupied.push(Occupied { center, radius });
        out.push(sample_tree(spec, rng, center, radius));
    }
    if out.len() < spec.n_trees {
        log::warn!("placed {} of {} trees", out.len(), spec.n_trees);
    }
    out
}

/// Georeference of the orthographic render: pixel (0,0) is the cell in the
/// north-west corner of the scene square.
pub fn ortho_geo(spec: &SceneSpec) -> GeoTransform {
    let half = spec.resolution / 2.0;
    GeoTransform::new(half, spec.extent - half, spec.resolution).expect("validated resolution")
}

/// Nadir camera at `altitude` over the scene center whose image of the
/// plane `z = 0` coincides with the orthographic render.
pub fn true_pose(spec: &SceneSpec) -> CameraPose {
    let geo = ortho_geo(spec);
    let (x0, y0) = (spec.extent / 2.0, spec.extent / 2.0);
    let focal = spec.altitude / spec.resolution;
    let pp = ((x0 - geo.origin_x) / spec.resolution, (geo.origin_y - y0) / spec.resolution);
    CameraPose::nadir(Point3::new(x0, y0, spec.altitude), focal, pp)
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occupied = Vec::new();
    let buildings = sample_buildings(spec, &mut rng, &mut occupied)?;
    let trees = sample_trees(spec, &mut rng, &mut occupied);

    let building_at = |p: Vec2| {
        buildings.iter().find(|b| {
            let (x0, y0, x1, y1) = bbox(&b.polygon);
            p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1 && point_in_polygon(p, &b.polygon)
        })
    };
    let tree_at = |p: Vec2| trees.iter().find(|t| dist(p, t.center) <= t.radius * 1.2 && t.contains(p));

    // stratified samples: one per cell of side 1/sqrt(density), jittered
    let spacing = 1.0 / spec.density.sqrt();
    let cells = (spec.extent / spacing).floor() as usize;
    let z_noise = Normal::new(0.0, spec.point_jitter).expect("validated jitter");
    let mut points = Vec::with_capacity(cells * cells);
    let mut class = Vec::with_capacity(cells * cells);
    let mut intensity = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let jx = rng.gen_range(-0.3..=0.3) * spacing;
            let jy = rng.gen_range(-0.3..=0.3) * spacing;
            let p = [(i as f64 + 0.5) * spacing + jx, (j as f64 + 0.5) * spacing + jy];
            let dz = z_noise.sample(&mut rng);
            let (z, c, inten) = if let Some(b) = building_at(p) {
                (b.height + dz, PointClass::NonGround, 200u8)
            } else if let Some(t) = tree_at(p) {
                let fall = 1.0 - 0.3 * (dist(p, t.center) / t.radius).min(1.0);
                (t.height * fall + dz, PointClass::NonGround, 90u8)
            } else {
                (dz, PointClass::Ground, 140u8)
            };
            points.push(Point3::new(p[0], p[1], z));
            class.push(c);
            intensity.push(inten);
        }
    }
    let cloud = PointCloud::new(points).with_class(class)?.with_intensity(intensity)?;

    let geo = ortho_geo(spec);
    let size = (spec.extent / spec.resolution).round().max(1.0) as usize;
    let mut image = GeoRaster::<u8>::new(size, size, 3, geo);
    let color_noise = Normal::new(0.0, spec.color_noise).expect("validated noise");
    let mut base = vec![GROUND_COLOR; size * size];
    for t in &trees {
        let r = t.radius * 1.2;
        let bb = (t.center[0] - r, t.center[1] - r, t.center[0] + r, t.center[1] + r);
        for (c, rr) in cells_inside(&geo, size, size, bb, |p| t.contains(p)) {
            base[rr * size + c] = TREE_COLOR;
        }
    }
    for b in &buildings {
        let color = b.roof_color.map(f64::from);
        for (c, r) in cells_inside(&geo, size, size, bbox(&b.polygon), |p| point_in_polygon(p, &b.polygon)) {
            base[r * size + c] = color;
        }
    }
    for (i, rgb) in base.iter().enumerate() {
        for k in 0..3 {
            let v = rgb[k] + color_noise.sample(&mut rng);
            image.data[i * 3 + k] = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    let mut control_points: Vec<ControlPoint> = buildings
        .iter()
        .map(|b| {
            let w = Point3::new(b.polygon[0][0], b.polygon[0][1], b.height);
            ControlPoint {
                pixel: geo.world_to_pixel(w.x, w.y),
                world: w,
            }
        })
        .collect();
    let mut placed = 0;
    let mut tries = 0;
    while placed < spec.ground_control_points && tries < 10_000 {
        tries += 1;
        let p = [rng.gen_range(0.05..0.95) * spec.extent, rng.gen_range(0.05..0.95) * spec.extent];
        if building_at(p).is_some() || tree_at(p).is_some() {
            continue;
        }
        control_points.push(ControlPoint {
            pixel: geo.world_to_pixel(p[0], p[1]),
            world: Point3::new(p[0], p[1], 0.0),
        });
        placed += 1;
    }

    Ok(Scene {
        cloud,
        image,
        truth: SceneTruth {
            spec: spec.clone(),
            pose: true_pose(spec),
            image_geo: geo,
            buildings,
            trees,
            control_points,
        },
    })
}

/// Offsets the camera center by exactly `translation` meters in a random
/// horizontal direction and rotates its attitude by `rotation` radians about
/// a random axis. A horizontal offset of a nadir camera shifts its ground
/// footprint by the same amount.
pub fn perturb_pose(pose: &CameraPose, translation: f64, rotation: f64, seed: u64) -> CameraPose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [dx, dy]: [f64; 2] = UnitCircle.sample(&mut rng);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let mut out = *pose;
    out.x0 += translation * dx;
    out.y0 += translation * dy;
    if rotation != 0.0 {
        let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(axis[0], axis[1], axis[2]));
        let delta = nalgebra::Rotation3::from_axis_angle(&axis, rotation);
        let r = delta.matrix() * rotation_from_opk(pose.omega, pose.phi, pose.kappa);
        let (omega, phi, kappa) = opk_from_rotation(&r);
        out.omega = omega;
        out.phi = phi;
        out.kappa = kappa;
    }
    out
}

/// North-up georeference an image would carry if it had been oriented with
/// `pose`: the ground position of pixel (0,0) on `z = 0`, at the given
/// resolution. Rotation beyond a change of position is not representable
/// and is ignored.
pub fn georef_from_pose(pose: &CameraPose, resolution: f64) -> Result<GeoTransform> {
    let (x, y) = compose_projection(pose).backproject_to_plane(0.0, 0.0, 0.0)?;
    GeoTransform::new(x, y, resolution)
}
