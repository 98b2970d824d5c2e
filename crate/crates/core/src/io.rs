//! Dataset ingestion and map/cloud export.
//!
//! Raw depth and label frames use a minimal self-describing container: the
//! magic `VDRD`, little-endian u32 width, height and element tag (0 = f32
//! depth, 1 = u16 label), then the row-major payload. Trajectories are TUM
//! text lines `timestamp tx ty tz qx qy qz qw` with scalar-last quaternions.
//! Clouds export to standard PLY (ASCII or binary little-endian) and voxel
//! maps to a deterministic text format, so two identical runs produce
//! byte-identical files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::bki::{VoxelCoord, VoxelRecord};
use crate::cloud::SemanticPointCloud;
use crate::geometry::{CameraConvention, CameraIntrinsics, PoseSE3, DEFAULT_MAX_RANGE};
use crate::grid::{ColorMap, DepthMap, Grid2, LabelMap};
use crate::metrics::{MetricsError, TimedPose, Trajectory};

/// Magic bytes of the raw frame container.
pub const FRAME_MAGIC: &[u8; 4] = b"VDRD";

const TAG_DEPTH_F32: u32 = 0;
const TAG_LABEL_U16: u32 = 1;
const TAG_COLOR_RGB8: u32 = 2;

/// How stored depth values are interpreted: metric meters or inverse depth
/// (1/z) that gets converted on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthEncoding {
    #[default]
    Metric,
    Inverse,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {msg}")]
    MalformedHeader { path: String, msg: String },
    #[error("{path}: size mismatch: expected {expected} bytes of payload, got {got}")]
    SizeMismatch {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}:{line}: {msg}")]
    MalformedLine {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: timestamps not strictly increasing")]
    NonMonotonicTimestamps { path: String, line: usize },
    #[error("{path}:{line}: quaternion norm {norm} deviates from 1 by more than 1e-3")]
    BadQuaternion {
        path: String,
        line: usize,
        norm: f64,
    },
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Raw frame container
// ---------------------------------------------------------------------------

fn read_frame_raw(path: &Path, expect_tag: u32) -> Result<(usize, usize, Vec<u8>), IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Unreadable {
        path: display(path),
        source,
    })?;
    if bytes.len() < 16 {
        return Err(IoError::MalformedHeader {
            path: display(path),
            msg: format!("file is {} bytes, header needs 16", bytes.len()),
        });
    }
    if &bytes[0..4] != FRAME_MAGIC {
        return Err(IoError::MalformedHeader {
            path: display(path),
            msg: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let tag = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if tag != expect_tag {
        return Err(IoError::MalformedHeader {
            path: display(path),
            msg: format!("element tag {tag}, expected {expect_tag}"),
        });
    }
    let elem = match tag {
        TAG_DEPTH_F32 => 4,
        TAG_COLOR_RGB8 => 3,
        _ => 2,
    };
    let expected = width * height * elem;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(IoError::SizeMismatch {
            path: display(path),
            expected,
            got: payload.len(),
        });
    }
    Ok((width, height, payload.to_vec()))
}

/// Reads a depth frame, widening f32 to f64 and applying the inverse-depth
/// conversion when configured.
pub fn read_depth_frame(path: &Path, encoding: DepthEncoding) -> Result<DepthMap, IoError> {
    let (width, height, payload) = read_frame_raw(path, TAG_DEPTH_F32)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            match encoding {
                DepthEncoding::Metric => v,
                DepthEncoding::Inverse => 1.0 / v,
            }
        })
        .collect();
    Ok(Grid2::from_vec(width, height, data).expect("payload length checked"))
}

/// Writes a depth frame, narrowing to f32.
pub fn write_depth_frame(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(16 + depth.len() * 4);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    out.extend_from_slice(&TAG_DEPTH_F32.to_le_bytes());
    for &v in depth.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

pub fn read_label_frame(path: &Path) -> Result<LabelMap, IoError> {
    let (width, height, payload) = read_frame_raw(path, TAG_LABEL_U16)?;
    let data = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Grid2::from_vec(width, height, data).expect("payload length checked"))
}

pub fn write_label_frame(path: &Path, labels: &LabelMap) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(16 + labels.len() * 2);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(labels.width() as u32).to_le_bytes());
    out.extend_from_slice(&(labels.height() as u32).to_le_bytes());
    out.extend_from_slice(&TAG_LABEL_U16.to_le_bytes());
    for &v in labels.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

pub fn read_color_frame(path: &Path) -> Result<ColorMap, IoError> {
    let (width, height, payload) = read_frame_raw(path, TAG_COLOR_RGB8)?;
    let data = payload
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(Grid2::from_vec(width, height, data).expect("payload length checked"))
}

pub fn write_color_frame(path: &Path, color: &ColorMap) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(16 + color.len() * 3);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(color.width() as u32).to_le_bytes());
    out.extend_from_slice(&(color.height() as u32).to_le_bytes());
    out.extend_from_slice(&TAG_COLOR_RGB8.to_le_bytes());
    for rgb in color.as_slice() {
        out.extend_from_slice(rgb);
    }
    fs::write(path, out).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

// ---------------------------------------------------------------------------
// Trajectories (TUM text format)
// ---------------------------------------------------------------------------

/// Parses TUM-format pose lines without the non-empty requirement of
/// [`Trajectory`]; index-based pipelines may legitimately see zero poses.
pub fn read_pose_list(path: &Path) -> Result<Vec<TimedPose>, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Unreadable {
        path: display(path),
        source,
    })?;
    let mut entries: Vec<TimedPose> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoError::MalformedLine {
                path: display(path),
                line,
                msg: format!("expected 8 numeric fields, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 8];
        for (v, f) in values.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| IoError::MalformedLine {
                path: display(path),
                line,
                msg: format!("`{f}` is not a number"),
            })?;
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = values;
        if let Some(prev) = entries.last() {
            if t <= prev.timestamp || t.is_nan() {
                return Err(IoError::NonMonotonicTimestamps {
                    path: display(path),
                    line,
                });
            }
        }
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(IoError::BadQuaternion {
                path: display(path),
                line,
                norm,
            });
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        entries.push(TimedPose {
            timestamp: t,
            pose: PoseSE3::from_quaternion(q, Vector3::new(tx, ty, tz)),
        });
    }
    Ok(entries)
}

/// Parses a trajectory file; empty files are an error here.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    Ok(Trajectory::new(read_pose_list(path)?)?)
}

/// Writes TUM-format pose lines. Floats use the shortest round-trip
/// representation, so reading the file back is lossless for timestamps and
/// translations and quaternion-exact for rotations.
pub fn write_trajectory(path: &Path, entries: &[TimedPose]) -> Result<(), IoError> {
    let mut out = String::new();
    for e in entries {
        let t = e.pose.translation();
        let q = e.pose.unit_quaternion();
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            e.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
    }
    fs::write(path, out).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

// ---------------------------------------------------------------------------
// PLY export / import
// ---------------------------------------------------------------------------

/// Fixed 19-entry visualization palette; class ids wrap around it.
pub const CLASS_PALETTE: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

pub fn class_color(class: u16) -> [u8; 3] {
    CLASS_PALETTE[class as usize % CLASS_PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    Binary,
    Ascii,
}

fn ply_header(format: PlyFormat, count: usize) -> String {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::Binary => "binary_little_endian",
    };
    format!(
        "ply\nformat {fmt} 1.0\nelement vertex {count}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property ushort class\nend_header\n"
    )
}

/// Writes the cloud as a PLY file with float coordinates, RGB (measured
/// colors when present, palette colors otherwise) and a ushort class.
pub fn write_ply(cloud: &SemanticPointCloud, path: &Path, format: PlyFormat) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<(), IoError> {
        w.write_all(bytes).map_err(|source| IoError::Unwritable {
            path: display(path),
            source,
        })
    };
    emit(ply_header(format, cloud.len()).as_bytes())?;
    for i in 0..cloud.len() {
        let p = cloud.points()[i];
        let class = cloud.classes()[i];
        let [r, g, b] = cloud
            .colors()
            .map_or_else(|| class_color(class), |c| c[i]);
        match format {
            PlyFormat::Ascii => {
                emit(
                    format!(
                        "{} {} {} {} {} {} {}\n",
                        p.x as f32, p.y as f32, p.z as f32, r, g, b, class
                    )
                    .as_bytes(),
                )?;
            }
            PlyFormat::Binary => {
                let mut rec = [0u8; 17];
                rec[0..4].copy_from_slice(&(p.x as f32).to_le_bytes());
                rec[4..8].copy_from_slice(&(p.y as f32).to_le_bytes());
                rec[8..12].copy_from_slice(&(p.z as f32).to_le_bytes());
                rec[12] = r;
                rec[13] = g;
                rec[14] = b;
                rec[15..17].copy_from_slice(&class.to_le_bytes());
                emit(&rec)?;
            }
        }
    }
    w.flush().map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

/// Reads back a PLY file written by [`write_ply`]. The header must declare
/// exactly the x/y/z/red/green/blue/class schema.
pub fn read_ply(path: &Path) -> Result<SemanticPointCloud, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Unreadable {
        path: display(path),
        source,
    })?;
    let header_end = find_header_end(&bytes).ok_or_else(|| IoError::MalformedHeader {
        path: display(path),
        msg: "missing end_header".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| IoError::MalformedHeader {
        path: display(path),
        msg: "header is not UTF-8".into(),
    })?;
    let mut format = None;
    let mut count = None;
    let mut properties: Vec<String> = Vec::new();
    for line in header.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["ply"] | ["comment", ..] | ["end_header"] => {}
            ["format", f, "1.0"] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::Binary,
                    other => {
                        return Err(IoError::MalformedHeader {
                            path: display(path),
                            msg: format!("unsupported format {other}"),
                        })
                    }
                });
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| IoError::MalformedHeader {
                    path: display(path),
                    msg: format!("bad vertex count {n}"),
                })?);
            }
            ["element", other, _] => {
                return Err(IoError::MalformedHeader {
                    path: display(path),
                    msg: format!("unsupported element {other}"),
                })
            }
            ["property", ty, name] => properties.push(format!("{ty} {name}")),
            _ => {
                return Err(IoError::MalformedHeader {
                    path: display(path),
                    msg: format!("unrecognized header line `{line}`"),
                })
            }
        }
    }
    let expected_props = [
        "float x",
        "float y",
        "float z",
        "uchar red",
        "uchar green",
        "uchar blue",
        "ushort class",
    ];
    if properties != expected_props {
        return Err(IoError::MalformedHeader {
            path: display(path),
            msg: format!("unexpected property list {properties:?}"),
        });
    }
    let format = format.ok_or_else(|| IoError::MalformedHeader {
        path: display(path),
        msg: "missing format line".into(),
    })?;
    let count = count.ok_or_else(|| IoError::MalformedHeader {
        path: display(path),
        msg: "missing element vertex line".into(),
    })?;
    let body = &bytes[header_end..];
    let mut points = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| IoError::MalformedHeader {
                path: display(path),
                msg: "ascii body is not UTF-8".into(),
            })?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for i in 0..count {
                let line = lines.next().ok_or_else(|| IoError::SizeMismatch {
                    path: display(path),
                    expected: count,
                    got: i,
                })?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 7 {
                    return Err(IoError::MalformedLine {
                        path: display(path),
                        line: i + 1,
                        msg: format!("expected 7 fields, got {}", f.len()),
                    });
                }
                let parse_err = |what: &str| IoError::MalformedLine {
                    path: display(path),
                    line: i + 1,
                    msg: format!("cannot parse `{what}`"),
                };
                let x: f32 = f[0].parse().map_err(|_| parse_err(f[0]))?;
                let y: f32 = f[1].parse().map_err(|_| parse_err(f[1]))?;
                let z: f32 = f[2].parse().map_err(|_| parse_err(f[2]))?;
                let r: u8 = f[3].parse().map_err(|_| parse_err(f[3]))?;
                let g: u8 = f[4].parse().map_err(|_| parse_err(f[4]))?;
                let b: u8 = f[5].parse().map_err(|_| parse_err(f[5]))?;
                let class: u16 = f[6].parse().map_err(|_| parse_err(f[6]))?;
                points.push(nalgebra::Point3::new(x as f64, y as f64, z as f64));
                colors.push([r, g, b]);
                classes.push(class);
            }
        }
        PlyFormat::Binary => {
            let expected = count * 17;
            if body.len() != expected {
                return Err(IoError::SizeMismatch {
                    path: display(path),
                    expected,
                    got: body.len(),
                });
            }
            for rec in body.chunks_exact(17) {
                let x = f32::from_le_bytes(rec[0..4].try_into().unwrap());
                let y = f32::from_le_bytes(rec[4..8].try_into().unwrap());
                let z = f32::from_le_bytes(rec[8..12].try_into().unwrap());
                points.push(nalgebra::Point3::new(x as f64, y as f64, z as f64));
                colors.push([rec[12], rec[13], rec[14]]);
                classes.push(u16::from_le_bytes(rec[15..17].try_into().unwrap()));
            }
        }
    }
    SemanticPointCloud::new(points, classes, Some(colors)).map_err(|_| IoError::MalformedHeader {
        path: display(path),
        msg: "inconsistent vertex data".into(),
    })
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
}

// ---------------------------------------------------------------------------
// Voxel map text format
// ---------------------------------------------------------------------------

/// Grid-level metadata carried in the voxel map header.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMapMeta {
    pub resolution: f64,
    pub origin: Vector3<f64>,
    pub classes: usize,
}

/// A parsed voxel map file.
#[derive(Debug, Clone)]
pub struct VoxelMapFile {
    pub meta: VoxelMapMeta,
    pub records: Vec<VoxelRecord>,
}

/// Writes the text voxel map: a `resolution` / `origin` / `classes` header,
/// then one `i j k class confidence` line per record. Records are expected
/// pre-sorted (the export guarantees it), so output bytes are deterministic.
pub fn write_voxel_map(
    meta: &VoxelMapMeta,
    records: &[VoxelRecord],
    path: &Path,
) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str(&format!("resolution {}\n", meta.resolution));
    out.push_str(&format!(
        "origin {} {} {}\n",
        meta.origin.x, meta.origin.y, meta.origin.z
    ));
    out.push_str(&format!("classes {}\n", meta.classes));
    for r in records {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.coord.x, r.coord.y, r.coord.z, r.expected_class, r.confidence
        ));
    }
    fs::write(path, out).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

pub fn read_voxel_map(path: &Path) -> Result<VoxelMapFile, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Unreadable {
        path: display(path),
        source,
    })?;
    let mut resolution = None;
    let mut origin = None;
    let mut classes = None;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let malformed = |msg: String| IoError::MalformedLine {
            path: display(path),
            line,
            msg,
        };
        match fields.as_slice() {
            ["resolution", r] => {
                resolution =
                    Some(r.parse::<f64>().map_err(|_| malformed(format!("bad resolution {r}")))?);
            }
            ["origin", x, y, z] => {
                let p = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| malformed(format!("bad origin component {s}")))
                };
                origin = Some(Vector3::new(p(x)?, p(y)?, p(z)?));
            }
            ["classes", c] => {
                classes =
                    Some(c.parse::<usize>().map_err(|_| malformed(format!("bad classes {c}")))?);
            }
            [i_, j, k, class, confidence] => {
                let pi = |s: &str| {
                    s.parse::<i32>()
                        .map_err(|_| malformed(format!("bad index {s}")))
                };
                records.push(VoxelRecord {
                    coord: VoxelCoord::new(pi(i_)?, pi(j)?, pi(k)?),
                    expected_class: class
                        .parse()
                        .map_err(|_| malformed(format!("bad class {class}")))?,
                    confidence: confidence
                        .parse()
                        .map_err(|_| malformed(format!("bad confidence {confidence}")))?,
                });
            }
            _ => return Err(malformed(format!("unrecognized line `{trimmed}`"))),
        }
    }
    let meta = VoxelMapMeta {
        resolution: resolution.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: "missing resolution header".into(),
        })?,
        origin: origin.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: "missing origin header".into(),
        })?,
        classes: classes.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: "missing classes header".into(),
        })?,
    };
    Ok(VoxelMapFile { meta, records })
}

// ---------------------------------------------------------------------------
// Intrinsics config
// ---------------------------------------------------------------------------

/// Camera block of a dataset: intrinsics plus projection policy.
#[derive(Debug, Clone)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub max_range: f64,
    pub convention: CameraConvention,
}

/// Parses the `key = value` intrinsics config. Recognized keys are exactly
/// fx, fy, cx, cy, skew, width, height, max_range and camera_convention;
/// anything else is an error.
pub fn read_intrinsics(path: &Path) -> Result<CameraConfig, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Unreadable {
        path: display(path),
        source,
    })?;
    let mut fx = None;
    let mut fy = None;
    let mut cx = None;
    let mut cy = None;
    let mut skew = 0.0;
    let mut width = None;
    let mut height = None;
    let mut max_range = DEFAULT_MAX_RANGE;
    let mut convention = CameraConvention::Rdf;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |msg: String| IoError::MalformedLine {
            path: display(path),
            line,
            msg,
        };
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| malformed(format!("expected `key = value`, got `{trimmed}`")))?;
        let key = key.trim();
        let value = value.trim();
        let as_f64 = || {
            value
                .parse::<f64>()
                .map_err(|_| malformed(format!("`{value}` is not a number")))
        };
        let as_usize = || {
            value
                .parse::<usize>()
                .map_err(|_| malformed(format!("`{value}` is not a positive integer")))
        };
        match key {
            "fx" => fx = Some(as_f64()?),
            "fy" => fy = Some(as_f64()?),
            "cx" => cx = Some(as_f64()?),
            "cy" => cy = Some(as_f64()?),
            "skew" => skew = as_f64()?,
            "width" => width = Some(as_usize()?),
            "height" => height = Some(as_usize()?),
            "max_range" => max_range = as_f64()?,
            "camera_convention" => {
                convention = CameraConvention::parse(value)
                    .ok_or_else(|| malformed(format!("unknown camera_convention `{value}`")))?;
            }
            other => return Err(malformed(format!("unknown key `{other}`"))),
        }
    }
    let require = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: format!("missing required key `{name}`"),
        })
    };
    let intrinsics = CameraIntrinsics::with_skew(
        require("fx", fx)?,
        require("fy", fy)?,
        require("cx", cx)?,
        require("cy", cy)?,
        skew,
        width.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: "missing required key `width`".into(),
        })?,
        height.ok_or_else(|| IoError::MalformedHeader {
            path: display(path),
            msg: "missing required key `height`".into(),
        })?,
    )
    .map_err(|e| IoError::MalformedHeader {
        path: display(path),
        msg: e.to_string(),
    })?;
    Ok(CameraConfig {
        intrinsics,
        max_range,
        convention,
    })
}

pub fn write_intrinsics(path: &Path, config: &CameraConfig) -> Result<(), IoError> {
    let k = &config.intrinsics;
    let text = format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nskew = {}\nwidth = {}\nheight = {}\n\
         max_range = {}\ncamera_convention = {}\n",
        k.fx,
        k.fy,
        k.cx,
        k.cy,
        k.skew,
        k.width,
        k.height,
        config.max_range,
        config.convention.name()
    );
    fs::write(path, text).map_err(|source| IoError::Unwritable {
        path: display(path),
        source,
    })
}

// ---------------------------------------------------------------------------
// Dataset layout
// ---------------------------------------------------------------------------

/// A dataset on disk: depth/ and labels/ frame directories (plus an
/// optional color/) and trajectory.txt, intrinsics.txt and remap.txt at
/// the root.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub depth_files: Vec<PathBuf>,
    pub label_files: Vec<PathBuf>,
    /// Empty when the dataset carries no color frames.
    pub color_files: Vec<PathBuf>,
    pub trajectory_path: PathBuf,
    pub intrinsics_path: PathBuf,
    pub remap_path: PathBuf,
}

impl DatasetLayout {
    /// Scans a dataset root. Frame files are matched by sorted filename;
    /// depth and label counts must agree, and so must color when present.
    pub fn discover(root: &Path) -> Result<Self, IoError> {
        let depth_files = sorted_frame_files(&root.join("depth"))?;
        let label_files = sorted_frame_files(&root.join("labels"))?;
        if depth_files.len() != label_files.len() {
            return Err(IoError::Layout(format!(
                "{} depth frames but {} label frames",
                depth_files.len(),
                label_files.len()
            )));
        }
        let color_dir = root.join("color");
        let color_files = if color_dir.is_dir() {
            let files = sorted_frame_files(&color_dir)?;
            if files.len() != depth_files.len() {
                return Err(IoError::Layout(format!(
                    "{} depth frames but {} color frames",
                    depth_files.len(),
                    files.len()
                )));
            }
            files
        } else {
            Vec::new()
        };
        let layout = Self {
            root: root.to_path_buf(),
            depth_files,
            label_files,
            color_files,
            trajectory_path: root.join("trajectory.txt"),
            intrinsics_path: root.join("intrinsics.txt"),
            remap_path: root.join("remap.txt"),
        };
        for p in [
            &layout.trajectory_path,
            &layout.intrinsics_path,
            &layout.remap_path,
        ] {
            if !p.is_file() {
                return Err(IoError::Layout(format!("missing {}", p.display())));
            }
        }
        Ok(layout)
    }

    pub fn num_frames(&self) -> usize {
        self.depth_files.len()
    }
}

fn sorted_frame_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Unreadable {
        path: display(dir),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "vdrd"))
        .collect();
    files.sort();
    Ok(files)
}
