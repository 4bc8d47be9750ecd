//! File formats: point clouds (ASCII, binary PLY), images (PNG, PPM/PGM)
//! with world-file georeference, label masks, control points and JSON.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GeoRaster, GeoTransform, LabeledMask, Point3, PointClass, PointCloud};
use crate::synth::ControlPoint;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Attaches the path to an I/O error.
fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

// ---------------------------------------------------------------- clouds

/// Reads a point cloud, choosing the format from the extension (`.ply` is
/// PLY, anything else is ASCII).
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if extension(path) == "ply" {
        read_ply(path)
    } else {
        read_ascii_cloud(path)
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if extension(path) == "ply" {
        write_ply(path, cloud)
    } else {
        write_ascii_cloud(path, cloud)
    }
}

/// `x y z [class] [intensity]` per line; `#` starts a comment. Every data
/// line must have the same number of columns.
pub fn read_ascii_cloud(path: &Path) -> Result<PointCloud> {
    let file = BufReader::new(fs::File::open(path).map_err(with_path(path))?);
    let mut points = Vec::new();
    let mut class = Vec::new();
    let mut intensity = Vec::new();
    let mut columns = None;
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        let data = line.split('#').next().unwrap_or("").trim();
        if data.is_empty() {
            continue;
        }
        let fields: Vec<&str> = data.split_whitespace().collect();
        if !(3..=5).contains(&fields.len()) {
            return Err(parse_err(path, n + 1, format!("expected 3 to 5 columns, got {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(path, n + 1, format!("expected {c} columns, got {}", fields.len())))
            }
            _ => {}
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, n + 1, format!("bad number {s:?}")))
        };
        points.push(Point3::new(num(fields[0])?, num(fields[1])?, num(fields[2])?));
        if fields.len() > 3 {
            let code: u8 = fields[3]
                .parse()
                .map_err(|_| parse_err(path, n + 1, format!("bad class {:?}", fields[3])))?;
            class.push(PointClass::from_code(code));
        }
        if fields.len() > 4 {
            intensity.push(num(fields[4])?.round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut cloud = PointCloud::new(points);
    if columns.unwrap_or(0) > 3 {
        cloud = cloud.with_class(class)?;
    }
    if columns.unwrap_or(0) > 4 {
        cloud = cloud.with_intensity(intensity)?;
    }
    Ok(cloud)
}

pub fn write_ascii_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(with_path(path))?);
    writeln!(w, "# x y z{}{}", if cloud.class.is_some() { " class" } else { "" }, if cloud.intensity.is_some() { " intensity" } else { "" })?;
    for (i, p) in cloud.points.iter().enumerate() {
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        if let Some(c) = &cloud.class {
            write!(w, " {}", c[i].code())?;
        }
        if let Some(v) = &cloud.intensity {
            write!(w, " {}", v[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => f64::from(b[0] as i8),
            PlyType::U8 => f64::from(b[0]),
            PlyType::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            PlyType::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            PlyType::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            PlyType::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            PlyType::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

/// Binary little-endian PLY. The first element must be `vertex` with scalar
/// properties; `x`, `y`, `z` are required, `class` and `intensity` optional,
/// anything else is skipped.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(fs::File::open(path).map_err(with_path(path))?);
    let mut header = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(parse_err(path, header.len() + 1, "unexpected end of PLY header"));
        }
        let t = line.trim().to_string();
        if t == "end_header" {
            break;
        }
        header.push(t);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(parse_err(path, 1, "missing ply magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex = false;
    for (n, h) in header.iter().enumerate().skip(1) {
        let f: Vec<&str> = h.split_whitespace().collect();
        match f.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(parse_err(path, n + 1, format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", c] if count.is_none() => {
                count = Some(c.parse::<usize>().map_err(|_| parse_err(path, n + 1, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if count.is_none() {
                    return Err(parse_err(path, n + 1, "the first PLY element must be vertex"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(parse_err(path, n + 1, "list properties on vertices are not supported"))
            }
            ["property", ty, name] if in_vertex => {
                let ty = PlyType::parse(ty).ok_or_else(|| parse_err(path, n + 1, format!("unknown type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            ["property", ..] => {}
            _ => return Err(parse_err(path, n + 1, format!("unexpected header line {h:?}"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(path, 1, "no vertex element"))?;
    let find = |name: &str| {
        let mut off = 0;
        for (p, ty) in &props {
            if p == name {
                return Some((off, *ty));
            }
            off += ty.size();
        }
        None
    };
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    let (x, y, z) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 1, "vertex needs x, y and z")),
    };
    let cls = find("class");
    let inten = find("intensity");
    let mut buf = vec![0u8; stride * count];
    r.read_exact(&mut buf)
        .map_err(|_| parse_err(path, header.len() + 1, "truncated PLY body"))?;
    let mut points = Vec::with_capacity(count);
    let mut class = Vec::new();
    let mut intensity = Vec::new();
    for rec in buf.chunks_exact(stride.max(1)).take(count) {
        let get = |(off, ty): (usize, PlyType)| ty.read(&rec[off..]);
        let p = Point3::new(get(x), get(y), get(z));
        if !p.is_finite() {
            return Err(Error::Parse(format!("{}: non-finite vertex", path.display())));
        }
        points.push(p);
        if let Some(c) = cls {
            class.push(PointClass::from_code(get(c) as u8));
        }
        if let Some(i) = inten {
            intensity.push(get(i).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut cloud = PointCloud::new(points);
    if cls.is_some() {
        cloud = cloud.with_class(class)?;
    }
    if inten.is_some() {
        cloud = cloud.with_intensity(intensity)?;
    }
    Ok(cloud)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(with_path(path))?);
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if cloud.class.is_some() {
        writeln!(w, "property uchar class")?;
    }
    if cloud.intensity.is_some() {
        writeln!(w, "property uchar intensity")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        for v in [p.x, p.y, p.z] {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(c) = &cloud.class {
            w.write_all(&[c[i].code()])?;
        }
        if let Some(v) = &cloud.intensity {
            w.write_all(&[v[i]])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- rasters

/// Sidecar world file for an image: `.pgw` for PNG, `.wld` otherwise.
pub fn world_file_path(image: &Path) -> PathBuf {
    match extension(image).as_str() {
        "png" => image.with_extension("pgw"),
        _ => image.with_extension("wld"),
    }
}

/// Six-line world file, north-up: resolution, two zero rotation terms,
/// negative resolution, then the center of the upper-left pixel.
pub fn write_world_file(path: &Path, geo: &GeoTransform) -> Result<()> {
    let s = geo.resolution;
    fs::write(path, format!("{s}\n0\n0\n{}\n{}\n{}\n", -s, geo.origin_x, geo.origin_y))?;
    Ok(())
}

pub fn read_world_file(path: &Path) -> Result<GeoTransform> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("{}: bad number {t:?}", path.display()))))
        .collect::<Result<_>>()?;
    if v.len() != 6 {
        return Err(Error::Parse(format!("{}: world file needs 6 values, got {}", path.display(), v.len())));
    }
    if v[1] != 0.0 || v[2] != 0.0 || (v[0] + v[3]).abs() > 1e-12 * v[0].abs() {
        return Err(Error::Parse(format!(
            "{}: only north-up square-pixel world files are supported",
            path.display()
        )));
    }
    GeoTransform::new(v[4], v[5], v[0])
}

/// Reads an 8-bit image (PNG, or PPM/PGM in ASCII or binary form). The
/// georeference comes from the sidecar world file when present, else the
/// unit transform.
pub fn read_image(path: &Path) -> Result<GeoRaster<u8>> {
    let (w, h, bands, data) = match extension(path).as_str() {
        "ppm" | "pgm" | "pnm" => read_pnm(path)?,
        _ => {
            let img = image::open(path).map_err(|e| match e {
                image::ImageError::IoError(io) => with_path(path)(io),
                other => other.into(),
            })?;
            match img {
                DynamicImage::ImageLuma8(g) => (g.width(), g.height(), 1, g.into_raw()),
                other => {
                    let rgb = other.to_rgb8();
                    (rgb.width(), rgb.height(), 3, rgb.into_raw())
                }
            }
        }
    };
    let wf = world_file_path(path);
    let geo = if wf.exists() { read_world_file(&wf)? } else { GeoTransform::identity() };
    GeoRaster::from_data(w as usize, h as usize, bands, geo, data)
}

fn read_pnm(path: &Path) -> Result<(u32, u32, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(with_path(path))?;
    let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    // header tokens, skipping comments
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PNM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    let bands = match tokens[0].as_str() {
        "P2" | "P5" => 1,
        "P3" | "P6" => 3,
        m => return Err(bad(&format!("unsupported PNM magic {m}"))),
    };
    let num = |t: &str| t.parse::<u32>().map_err(|_| bad("bad PNM header value"));
    let (w, h, max) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit PNM images are supported"));
    }
    let n = w as usize * h as usize * bands;
    let scale = |v: u32| ((v.min(max) * 255 + max / 2) / max) as u8;
    let data: Vec<u8> = if tokens[0] == "P2" || tokens[0] == "P3" {
        let body = String::from_utf8_lossy(&bytes[pos..]);
        let vals: Vec<u8> = body
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|t| num(t).map(scale))
            .collect::<Result<_>>()?;
        vals
    } else {
        bytes.get(pos + 1..pos + 1 + n).ok_or_else(|| bad("truncated PNM data"))?.iter().map(|&v| scale(u32::from(v))).collect()
    };
    if data.len() != n {
        return Err(bad(&format!("expected {n} samples, got {}", data.len())));
    }
    Ok((w, h, bands, data))
}

/// Writes an 8-bit image (1 or 3 bands) and its world file. PNG unless the
/// extension is `ppm`/`pgm`, which produce ASCII PNM.
pub fn write_image(path: &Path, raster: &GeoRaster<u8>) -> Result<()> {
    if raster.bands != 1 && raster.bands != 3 {
        return Err(Error::InvalidArgument(format!("cannot write a {}-band image", raster.bands)));
    }
    let (w, h) = (raster.width as u32, raster.height as u32);
    match extension(path).as_str() {
        "ppm" | "pgm" => {
            let mut out = BufWriter::new(fs::File::create(path).map_err(with_path(path))?);
            writeln!(out, "{}\n{w} {h}\n255", if raster.bands == 3 { "P3" } else { "P2" })?;
            for row in raster.data.chunks(raster.width * raster.bands) {
                let line: Vec<String> = row.iter().map(u8::to_string).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
            out.flush()?;
        }
        _ => {
            let img = if raster.bands == 3 {
                DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, raster.data.clone()).expect("sized buffer"))
            } else {
                DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, raster.data.clone()).expect("sized buffer"))
            };
            img.save_with_format(path, image::ImageFormat::Png)?;
        }
    }
    write_world_file(&world_file_path(path), &raster.geo)
}

/// Label mask as a 16-bit grayscale PNG (pixel value = label) plus world
/// file.
pub fn write_mask(path: &Path, mask: &LabeledMask) -> Result<()> {
    if mask.count > u32::from(u16::MAX) {
        return Err(Error::InvalidArgument(format!("{} labels do not fit 16 bits", mask.count)));
    }
    let r = &mask.raster;
    let data: Vec<u16> = r.data.iter().map(|&l| l as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(r.width as u32, r.height as u32, data).expect("sized buffer");
    img.save_with_format(path, image::ImageFormat::Png)?;
    write_world_file(&world_file_path(path), &r.geo)
}

pub fn read_mask(path: &Path) -> Result<LabeledMask> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => with_path(path)(io),
            other => other.into(),
        })?
        .into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wf = world_file_path(path);
    let geo = if wf.exists() { read_world_file(&wf)? } else { GeoTransform::identity() };
    let data = img.into_raw().into_iter().map(u32::from).collect();
    Ok(LabeledMask::from_raw(GeoRaster::from_data(w, h, 1, geo, data)?))
}

// ---------------------------------------------------------------- control points

/// `u v X Y Z` per line (pixel position, then world position); `#` starts
/// a comment.
pub fn read_control_points(path: &Path) -> Result<Vec<ControlPoint>> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let data = line.split('#').next().unwrap_or("").trim();
        if data.is_empty() {
            continue;
        }
        let v: Vec<f64> = data
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| parse_err(path, n + 1, "bad number"))?;
        if v.len() != 5 {
            return Err(parse_err(path, n + 1, format!("expected u v X Y Z, got {} values", v.len())));
        }
        out.push(ControlPoint {
            pixel: (v[0], v[1]),
            world: Point3::new(v[2], v[3], v[4]),
        });
    }
    Ok(out)
}

pub fn write_control_points(path: &Path, points: &[ControlPoint]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(with_path(path))?);
    writeln!(w, "# u v X Y Z")?;
    for cp in points {
        writeln!(w, "{} {} {} {} {}", cp.pixel.0, cp.pixel.1, cp.world.x, cp.world.y, cp.world.z)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- JSON

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    Ok(serde_json::from_str(&text)?)
}
