//! Labeled world-frame point clouds.
//!
//! One [`FrameBundle`] (depth + labels + optional color) plus a pose becomes
//! a [`SemanticPointCloud`] via batched back-projection, with class ids
//! translated across taxonomies by a [`LabelRemap`]. Source ids missing from
//! the remap table land in a dedicated unlabeled class that the map update
//! ignores, rather than polluting a real class.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{
    backproject_frame, BackprojectOptions, CameraIntrinsics, GeometryError, PoseSE3,
};
use crate::grid::{ColorMap, DepthMap, Grid2, LabelMap};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("frame layers disagree in shape: depth {depth_w}x{depth_h}, other {other_w}x{other_h}")]
    LayerShapeMismatch {
        depth_w: usize,
        depth_h: usize,
        other_w: usize,
        other_h: usize,
    },
    #[error("invalid label remap: {0}")]
    InvalidRemap(String),
    #[error("remap file line {line}: {msg}")]
    RemapFile { line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point/class/color arrays disagree in length")]
    ParallelArrayMismatch,
}

/// One timestep of sensor data.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub timestamp: f64,
    pub depth: DepthMap,
    pub labels: LabelMap,
    pub color: Option<ColorMap>,
}

impl FrameBundle {
    /// All layers must share the depth map's dimensions.
    pub fn new(
        timestamp: f64,
        depth: DepthMap,
        labels: LabelMap,
        color: Option<ColorMap>,
    ) -> Result<Self, CloudError> {
        if !depth.same_shape(&labels) {
            return Err(CloudError::LayerShapeMismatch {
                depth_w: depth.width(),
                depth_h: depth.height(),
                other_w: labels.width(),
                other_h: labels.height(),
            });
        }
        if let Some(c) = &color {
            if !depth.same_shape(c) {
                return Err(CloudError::LayerShapeMismatch {
                    depth_w: depth.width(),
                    depth_h: depth.height(),
                    other_w: c.width(),
                    other_h: c.height(),
                });
            }
        }
        Ok(Self {
            timestamp,
            depth,
            labels,
            color,
        })
    }
}

/// Source-taxonomy to target-taxonomy class translation.
#[derive(Debug, Clone)]
pub struct LabelRemap {
    table: HashMap<u16, u16>,
    unlabeled_id: u16,
    num_target_classes: u16,
}

impl LabelRemap {
    pub fn new(
        table: HashMap<u16, u16>,
        unlabeled_id: u16,
        num_target_classes: u16,
    ) -> Result<Self, CloudError> {
        if num_target_classes == 0 {
            return Err(CloudError::InvalidRemap(
                "num_target_classes must be >= 1".into(),
            ));
        }
        if unlabeled_id >= num_target_classes {
            return Err(CloudError::InvalidRemap(format!(
                "unlabeled_id {unlabeled_id} >= num_target_classes {num_target_classes}"
            )));
        }
        if let Some((src, tgt)) = table.iter().find(|(_, t)| **t >= num_target_classes) {
            return Err(CloudError::InvalidRemap(format!(
                "mapping {src} -> {tgt} exceeds num_target_classes {num_target_classes}"
            )));
        }
        Ok(Self {
            table,
            unlabeled_id,
            num_target_classes,
        })
    }

    /// Maps every id in `0..num_classes` to itself.
    pub fn identity(num_classes: u16, unlabeled_id: u16) -> Result<Self, CloudError> {
        let table = (0..num_classes).map(|c| (c, c)).collect();
        Self::new(table, unlabeled_id, num_classes)
    }

    /// Target id for a source id; absent ids map to the unlabeled class.
    #[inline]
    pub fn map(&self, source: u16) -> u16 {
        *self.table.get(&source).unwrap_or(&self.unlabeled_id)
    }

    pub fn unlabeled_id(&self) -> u16 {
        self.unlabeled_id
    }

    pub fn num_target_classes(&self) -> u16 {
        self.num_target_classes
    }

    /// Parses the remap file format: `#` comments, two header lines
    /// `num_target_classes N` and `unlabeled_id U`, then one
    /// `source_id target_id` pair per line.
    pub fn parse_str(text: &str) -> Result<Self, CloudError> {
        let mut num_target_classes: Option<u16> = None;
        let mut unlabeled_id: Option<u16> = None;
        let mut table = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["num_target_classes", n] => {
                    num_target_classes = Some(parse_u16(n, line_no)?);
                }
                ["unlabeled_id", u] => {
                    unlabeled_id = Some(parse_u16(u, line_no)?);
                }
                [src, tgt] => {
                    let src = parse_u16(src, line_no)?;
                    let tgt = parse_u16(tgt, line_no)?;
                    if table.insert(src, tgt).is_some() {
                        return Err(CloudError::RemapFile {
                            line: line_no,
                            msg: format!("duplicate source id {src}"),
                        });
                    }
                }
                _ => {
                    return Err(CloudError::RemapFile {
                        line: line_no,
                        msg: format!("expected `source_id target_id`, got `{line}`"),
                    });
                }
            }
        }
        let num_target_classes = num_target_classes.ok_or(CloudError::RemapFile {
            line: 0,
            msg: "missing `num_target_classes N` header".into(),
        })?;
        let unlabeled_id = unlabeled_id.ok_or(CloudError::RemapFile {
            line: 0,
            msg: "missing `unlabeled_id U` header".into(),
        })?;
        Self::new(table, unlabeled_id, num_target_classes)
    }

    pub fn load(path: &Path) -> Result<Self, CloudError> {
        let text = std::fs::read_to_string(path).map_err(|source| CloudError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Serialization matching [`Self::parse_str`].
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("num_target_classes {}\n", self.num_target_classes));
        out.push_str(&format!("unlabeled_id {}\n", self.unlabeled_id));
        let mut pairs: Vec<_> = self.table.iter().collect();
        pairs.sort();
        for (src, tgt) in pairs {
            out.push_str(&format!("{src} {tgt}\n"));
        }
        out
    }
}

fn parse_u16(s: &str, line: usize) -> Result<u16, CloudError> {
    s.parse().map_err(|_| CloudError::RemapFile {
        line,
        msg: format!("`{s}` is not a u16"),
    })
}

/// World-frame points with target-taxonomy class ids.
#[derive(Debug, Clone, Default)]
pub struct SemanticPointCloud {
    points: Vec<Point3<f64>>,
    classes: Vec<u16>,
    colors: Option<Vec<[u8; 3]>>,
}

impl SemanticPointCloud {
    pub fn new(
        points: Vec<Point3<f64>>,
        classes: Vec<u16>,
        colors: Option<Vec<[u8; 3]>>,
    ) -> Result<Self, CloudError> {
        if points.len() != classes.len()
            || colors.as_ref().is_some_and(|c| c.len() != points.len())
        {
            return Err(CloudError::ParallelArrayMismatch);
        }
        Ok(Self {
            points,
            classes,
            colors,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    /// Appends `other`, preserving its point order. Colors survive only when
    /// both sides carry them.
    pub fn append(&mut self, other: &SemanticPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.classes.extend_from_slice(&other.classes);
        match (&mut self.colors, &other.colors) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (colors, _) => *colors = None,
        }
        if self.points.is_empty() {
            // keep Default-constructed empty clouds color-capable
            self.colors = None;
        }
    }

    /// Rigidly transforms every point in place.
    pub fn transform(&mut self, pose: &PoseSE3) {
        for p in &mut self.points {
            *p = pose.transform_point(p);
        }
    }
}

/// Replaces every source id with its target id; absent ids become the
/// unlabeled class.
pub fn remap_labels(labels: &LabelMap, remap: &LabelRemap) -> LabelMap {
    let data = labels.as_slice().iter().map(|&s| remap.map(s)).collect();
    Grid2::from_vec(labels.width(), labels.height(), data).expect("shape preserved")
}

/// Back-projects every `stride`-th pixel of the frame and attaches remapped
/// labels (and colors, when present) by source-pixel index.
pub fn frame_to_cloud(
    frame: &FrameBundle,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    remap: &LabelRemap,
    options: &BackprojectOptions,
) -> Result<SemanticPointCloud, CloudError> {
    let batch = backproject_frame(k, pose, &frame.depth, options)?;
    let mut classes = Vec::with_capacity(batch.len());
    let mut colors = frame.color.as_ref().map(|_| Vec::with_capacity(batch.len()));
    for &idx in batch.pixel_indices() {
        classes.push(remap.map(frame.labels.as_slice()[idx]));
        if let (Some(out), Some(map)) = (&mut colors, &frame.color) {
            out.push(map.as_slice()[idx]);
        }
    }
    SemanticPointCloud::new(batch.iter_points().collect(), classes, colors)
}
