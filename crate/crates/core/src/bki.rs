//! Sparse semantic voxel map with kernel-smoothed Bayesian updates.
//!
//! Each voxel holds a vector of per-class Dirichlet concentrations. A point
//! cloud updates the map by scattering kernel-weighted evidence into the
//! neighborhood of every point's voxel: per class this is a depthwise
//! convolution of the point histogram with the kernel, realized sparsely
//! from the occupied side. Evidence only ever accumulates, so updates
//! commute up to floating-point reordering and concatenating two clouds is
//! bit-identical to updating with them in sequence.
//!
//! Because observations are categorical and the state is Dirichlet, the
//! posterior readout is closed-form: normalized concentrations give class
//! probabilities, their total gives a confidence mass, and the Dirichlet
//! variance quantifies how settled each class estimate is.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::cloud::SemanticPointCloud;

/// Default Dirichlet prior applied lazily to every class of every voxel.
pub const DEFAULT_PRIOR_ALPHA: f64 = 0.001;

/// Default voxel edge length in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum BkiError {
    #[error("parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("point has a non-finite or out-of-range coordinate")]
    InvalidPoint,
    #[error("class {class} out of range for a {num_classes}-class map")]
    ClassOutOfRange { class: u16, num_classes: usize },
    #[error("kernel does not fit this grid: {0}")]
    KernelMismatch(String),
    #[error("kernel file line {line}: {msg}")]
    KernelFile { line: usize, msg: String },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
}

/// Integer voxel coordinates. Ordering is lexicographic in (x, y, z), which
/// fixes the export order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            z: self.z + dz,
        }
    }
}

/// Depthwise spatial filter over voxel offsets.
///
/// The default is the compact-support sparse kernel
///
/// ```text
/// k(d) = sigma0 * [ (2 + cos(2*pi*d/l)) / 3 * (1 - d/l) + sin(2*pi*d/l) / (2*pi) ]
/// ```
///
/// for `d < l` and 0 beyond, evaluated at voxel-center distances. Weight
/// grids can also be loaded from a file, either one grid shared by all
/// classes or one grid per class; loaded grids are only checked for shape
/// and non-negativity, so trained filters need not be symmetric.
#[derive(Debug, Clone)]
pub struct KernelFilter {
    length_scale: f64,
    sigma0: f64,
    radius: i32,
    resolution: f64,
    classes: usize,
    weights: Vec<f64>,
    /// Per class (index 0 when tied): offsets with strictly positive weight.
    support: Vec<Vec<(i32, i32, i32, f64)>>,
}

fn sparse_kernel(d: f64, l: f64, sigma0: f64) -> f64 {
    if d >= l {
        return 0.0;
    }
    let r = d / l;
    let phase = std::f64::consts::TAU * r;
    sigma0 * ((2.0 + phase.cos()) / 3.0 * (1.0 - r) + phase.sin() / std::f64::consts::TAU)
}

impl KernelFilter {
    /// Builds the sparse kernel for a grid of the given resolution. The
    /// radius is `floor(l / resolution)` voxels.
    pub fn sparse(length_scale: f64, sigma0: f64, resolution: f64) -> Result<Self, BkiError> {
        for (name, value) in [
            ("length_scale", length_scale),
            ("sigma0", sigma0),
            ("resolution", resolution),
        ] {
            if value <= 0.0 || !value.is_finite() {
                return Err(BkiError::NonPositiveParameter { name, value });
            }
        }
        let radius = (length_scale / resolution).floor() as i32;
        let side = (2 * radius + 1) as usize;
        let mut weights = vec![0.0; side * side * side];
        for dx in -radius..=radius {
            for dy in -radius..=radius {
                for dz in -radius..=radius {
                    let d = resolution
                        * f64::sqrt((dx * dx + dy * dy + dz * dz) as f64);
                    weights[offset_index(radius, dx, dy, dz)] =
                        sparse_kernel(d, length_scale, sigma0);
                }
            }
        }
        let support = vec![collect_support(radius, &weights)];
        Ok(Self {
            length_scale,
            sigma0,
            radius,
            resolution,
            classes: 1,
            weights,
            support,
        })
    }

    /// Parses the kernel weight file: a header
    /// `radius R classes C resolution RES`, then one line per
    /// `class i j k weight`. Unlisted offsets are zero; `classes 1` means
    /// one grid shared by every class.
    pub fn parse_str(text: &str) -> Result<Self, BkiError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(BkiError::KernelFile {
            line: 0,
            msg: "empty kernel file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (radius, classes, resolution) = match fields.as_slice() {
            ["radius", r, "classes", c, "resolution", res] => (
                r.parse::<i32>().map_err(|_| bad_field(hline, r))?,
                c.parse::<usize>().map_err(|_| bad_field(hline, c))?,
                res.parse::<f64>().map_err(|_| bad_field(hline, res))?,
            ),
            _ => {
                return Err(BkiError::KernelFile {
                    line: hline,
                    msg: "expected header `radius R classes C resolution RES`".into(),
                })
            }
        };
        if radius < 0 || classes == 0 || resolution <= 0.0 || resolution.is_nan() {
            return Err(BkiError::KernelFile {
                line: hline,
                msg: "radius must be >= 0, classes >= 1, resolution > 0".into(),
            });
        }
        let side = (2 * radius + 1) as usize;
        let cells = side * side * side;
        let mut weights = vec![0.0; classes * cells];
        let mut seen = vec![false; classes * cells];
        for (line, text) in lines {
            let fields: Vec<&str> = text.split_whitespace().collect();
            let [c, i, j, k, w] = fields.as_slice() else {
                return Err(BkiError::KernelFile {
                    line,
                    msg: format!("expected `class i j k weight`, got `{text}`"),
                });
            };
            let c = c.parse::<usize>().map_err(|_| bad_field(line, c))?;
            let i = i.parse::<i32>().map_err(|_| bad_field(line, i))?;
            let j = j.parse::<i32>().map_err(|_| bad_field(line, j))?;
            let k = k.parse::<i32>().map_err(|_| bad_field(line, k))?;
            let w = w.parse::<f64>().map_err(|_| bad_field(line, w))?;
            if c >= classes {
                return Err(BkiError::KernelFile {
                    line,
                    msg: format!("class {c} >= declared classes {classes}"),
                });
            }
            if i.abs() > radius || j.abs() > radius || k.abs() > radius {
                return Err(BkiError::KernelFile {
                    line,
                    msg: format!("offset ({i}, {j}, {k}) outside radius {radius}"),
                });
            }
            if !w.is_finite() || w < 0.0 {
                return Err(BkiError::KernelFile {
                    line,
                    msg: format!("weight {w} must be finite and >= 0"),
                });
            }
            let idx = c * cells + offset_index(radius, i, j, k);
            if seen[idx] {
                return Err(BkiError::KernelFile {
                    line,
                    msg: format!("duplicate entry for class {c} offset ({i}, {j}, {k})"),
                });
            }
            seen[idx] = true;
            weights[idx] = w;
        }
        let support = (0..classes)
            .map(|c| collect_support(radius, &weights[c * cells..(c + 1) * cells]))
            .collect();
        Ok(Self {
            length_scale: radius as f64 * resolution,
            sigma0: weights.iter().cloned().fold(0.0, f64::max),
            radius,
            resolution,
            classes,
            weights,
            support,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BkiError> {
        let text = std::fs::read_to_string(path).map_err(|source| BkiError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Serialization matching [`Self::parse_str`]; zero weights are omitted.
    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "radius {} classes {} resolution {}\n",
            self.radius, self.classes, self.resolution
        );
        let side = (2 * self.radius + 1) as usize;
        let cells = side * side * side;
        for c in 0..self.classes {
            for dx in -self.radius..=self.radius {
                for dy in -self.radius..=self.radius {
                    for dz in -self.radius..=self.radius {
                        let w = self.weights[c * cells + offset_index(self.radius, dx, dy, dz)];
                        if w > 0.0 {
                            out.push_str(&format!("{c} {dx} {dy} {dz} {w}\n"));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of per-class grids; 1 means tied weights.
    pub fn num_class_grids(&self) -> usize {
        self.classes
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Weight at a voxel offset for a class (tied kernels ignore the class).
    pub fn weight(&self, class: usize, dx: i32, dy: i32, dz: i32) -> f64 {
        if dx.abs() > self.radius || dy.abs() > self.radius || dz.abs() > self.radius {
            return 0.0;
        }
        let side = (2 * self.radius + 1) as usize;
        let cells = side * side * side;
        let c = if self.classes == 1 { 0 } else { class };
        self.weights[c * cells + offset_index(self.radius, dx, dy, dz)]
    }

    #[inline]
    fn support_for(&self, class: usize) -> &[(i32, i32, i32, f64)] {
        if self.classes == 1 {
            &self.support[0]
        } else {
            &self.support[class]
        }
    }
}

#[inline]
fn offset_index(radius: i32, dx: i32, dy: i32, dz: i32) -> usize {
    let side = (2 * radius + 1) as usize;
    let x = (dx + radius) as usize;
    let y = (dy + radius) as usize;
    let z = (dz + radius) as usize;
    (x * side + y) * side + z
}

/// Offsets with strictly positive weight, in fixed lexicographic order so the
/// scatter is deterministic.
fn collect_support(radius: i32, weights: &[f64]) -> Vec<(i32, i32, i32, f64)> {
    let mut support = Vec::new();
    for dx in -radius..=radius {
        for dy in -radius..=radius {
            for dz in -radius..=radius {
                let w = weights[offset_index(radius, dx, dy, dz)];
                if w > 0.0 {
                    support.push((dx, dy, dz, w));
                }
            }
        }
    }
    support
}

fn bad_field(line: usize, field: &str) -> BkiError {
    BkiError::KernelFile {
        line,
        msg: format!("cannot parse `{field}`"),
    }
}

/// Configuration for a [`VoxelGrid`].
#[derive(Debug, Clone)]
pub struct VoxelGridConfig {
    /// Voxel edge length in meters.
    pub resolution: f64,
    /// World position of the corner of voxel (0, 0, 0).
    pub origin: Vector3<f64>,
    pub num_classes: usize,
    /// Prior concentration applied lazily to every class of every voxel.
    pub prior_alpha: f64,
    /// Class whose observations are ignored during updates.
    pub unlabeled_class: Option<u16>,
}

impl Default for VoxelGridConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            origin: Vector3::zeros(),
            num_classes: 2,
            prior_alpha: DEFAULT_PRIOR_ALPHA,
            unlabeled_class: None,
        }
    }
}

/// Posterior readout for one voxel.
#[derive(Debug, Clone)]
pub struct VoxelQueryResult {
    /// Argmax class; ties break toward the lowest id.
    pub expected_class: u16,
    /// Normalized concentrations, summing to 1.
    pub probabilities: Vec<f64>,
    /// Total concentration mass (prior included).
    pub confidence: f64,
    /// Per-class Dirichlet variance `p(1-p)/(A+1)`.
    pub variance: Vec<f64>,
}

/// What an update did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Points that contributed evidence.
    pub points_used: usize,
    /// Points skipped because they carry the unlabeled class.
    pub points_skipped: usize,
    /// Distinct voxels that received evidence.
    pub voxels_touched: usize,
}

/// Record emitted by [`VoxelGrid::export_expected`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelRecord {
    pub coord: VoxelCoord,
    pub expected_class: u16,
    pub confidence: f64,
}

/// Sparse map from voxel coordinates to per-class Dirichlet concentrations.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: f64,
    origin: Vector3<f64>,
    num_classes: usize,
    prior_alpha: f64,
    unlabeled_class: Option<u16>,
    cells: HashMap<VoxelCoord, Vec<f64>>,
}

impl VoxelGrid {
    pub fn new(config: VoxelGridConfig) -> Result<Self, BkiError> {
        if config.resolution <= 0.0 || !config.resolution.is_finite() {
            return Err(BkiError::NonPositiveParameter {
                name: "resolution",
                value: config.resolution,
            });
        }
        if config.num_classes == 0 {
            return Err(BkiError::InvalidParameter {
                name: "num_classes",
                value: 0.0,
            });
        }
        if config.prior_alpha.is_nan() || config.prior_alpha < 0.0 {
            return Err(BkiError::InvalidParameter {
                name: "prior_alpha",
                value: config.prior_alpha,
            });
        }
        if let Some(u) = config.unlabeled_class {
            if usize::from(u) >= config.num_classes {
                return Err(BkiError::ClassOutOfRange {
                    class: u,
                    num_classes: config.num_classes,
                });
            }
        }
        Ok(Self {
            resolution: config.resolution,
            origin: config.origin,
            num_classes: config.num_classes,
            prior_alpha: config.prior_alpha,
            unlabeled_class: config.unlabeled_class,
            cells: HashMap::new(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn prior_alpha(&self) -> f64 {
        self.prior_alpha
    }

    /// Number of voxels holding evidence.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Stored (prior-free) concentrations of a voxel, if it has any.
    pub fn stored_alpha(&self, v: VoxelCoord) -> Option<&[f64]> {
        self.cells.get(&v).map(Vec::as_slice)
    }

    /// Voxel containing a world point: componentwise
    /// `floor((p - origin) / resolution)`.
    pub fn point_to_voxel(&self, p: &Point3<f64>) -> Result<VoxelCoord, BkiError> {
        let rel = (p.coords - self.origin) / self.resolution;
        let mut idx = [0i32; 3];
        for (out, c) in idx.iter_mut().zip(rel.iter()) {
            if !c.is_finite() {
                return Err(BkiError::InvalidPoint);
            }
            let f = c.floor();
            if f < i32::MIN as f64 || f > i32::MAX as f64 {
                return Err(BkiError::InvalidPoint);
            }
            *out = f as i32;
        }
        Ok(VoxelCoord::new(idx[0], idx[1], idx[2]))
    }

    /// Scatters kernel-weighted evidence from every labeled point into the
    /// map.
    ///
    /// Points are processed in cloud order and kernel offsets in a fixed
    /// order, so the result is deterministic and updating with a
    /// concatenation of two clouds is bit-identical to two sequential
    /// updates. Unlabeled points are skipped; all other concentrations only
    /// ever grow.
    pub fn update(
        &mut self,
        cloud: &SemanticPointCloud,
        kernel: &KernelFilter,
    ) -> Result<UpdateStats, BkiError> {
        if kernel.classes != 1 && kernel.classes != self.num_classes {
            return Err(BkiError::KernelMismatch(format!(
                "kernel has {} class grids, map has {} classes",
                kernel.classes, self.num_classes
            )));
        }
        if (kernel.resolution - self.resolution).abs() > 1e-12 {
            return Err(BkiError::KernelMismatch(format!(
                "kernel resolution {} != grid resolution {}",
                kernel.resolution, self.resolution
            )));
        }
        // Validate classes up front so a failed update leaves the map intact.
        for &class in cloud.classes() {
            if usize::from(class) >= self.num_classes {
                return Err(BkiError::ClassOutOfRange {
                    class,
                    num_classes: self.num_classes,
                });
            }
        }
        let mut stats = UpdateStats::default();
        let mut sources: HashSet<(VoxelCoord, u16)> = HashSet::new();
        for (point, &class) in cloud.points().iter().zip(cloud.classes()) {
            if Some(class) == self.unlabeled_class {
                stats.points_skipped += 1;
                continue;
            }
            let base = self.point_to_voxel(point)?;
            sources.insert((base, class));
            let c = usize::from(class);
            for &(dx, dy, dz, w) in kernel.support_for(c) {
                let target = base.offset(dx, dy, dz);
                let alpha = self
                    .cells
                    .entry(target)
                    .or_insert_with(|| vec![0.0; self.num_classes]);
                alpha[c] += w;
            }
            stats.points_used += 1;
        }
        let mut touched: HashSet<VoxelCoord> = HashSet::new();
        for (base, class) in &sources {
            for &(dx, dy, dz, _) in kernel.support_for(usize::from(*class)) {
                touched.insert(base.offset(dx, dy, dz));
            }
        }
        stats.voxels_touched = touched.len();
        Ok(stats)
    }

    /// Closed-form Dirichlet posterior for a voxel. Unobserved voxels are
    /// valid queries; with a zero prior they report a uniform distribution
    /// at zero confidence.
    pub fn query(&self, v: VoxelCoord) -> VoxelQueryResult {
        let stored = self.cells.get(&v);
        let alpha: Vec<f64> = (0..self.num_classes)
            .map(|c| self.prior_alpha + stored.map_or(0.0, |a| a[c]))
            .collect();
        let total: f64 = alpha.iter().sum();
        let probabilities: Vec<f64> = if total > 0.0 {
            alpha.iter().map(|a| a / total).collect()
        } else {
            vec![1.0 / self.num_classes as f64; self.num_classes]
        };
        let mut expected_class = 0u16;
        let mut best = probabilities[0];
        for (c, &p) in probabilities.iter().enumerate().skip(1) {
            if p > best {
                best = p;
                expected_class = c as u16;
            }
        }
        let variance = probabilities
            .iter()
            .map(|&p| p * (1.0 - p) / (total + 1.0))
            .collect();
        VoxelQueryResult {
            expected_class,
            probabilities,
            confidence: total,
            variance,
        }
    }

    /// One record per stored voxel whose confidence exceeds
    /// `min_confidence`, in lexicographic (x, y, z) order.
    pub fn export_expected(&self, min_confidence: f64) -> Vec<VoxelRecord> {
        let mut coords: Vec<VoxelCoord> = self.cells.keys().copied().collect();
        coords.sort_unstable();
        coords
            .into_iter()
            .filter_map(|coord| {
                let q = self.query(coord);
                (q.confidence > min_confidence).then_some(VoxelRecord {
                    coord,
                    expected_class: q.expected_class,
                    confidence: q.confidence,
                })
            })
            .collect()
    }

    /// World-space center of a voxel.
    pub fn voxel_center(&self, v: VoxelCoord) -> Point3<f64> {
        Point3::from(
            self.origin
                + Vector3::new(
                    (v.x as f64 + 0.5) * self.resolution,
                    (v.y as f64 + 0.5) * self.resolution,
                    (v.z as f64 + 0.5) * self.resolution,
                ),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelCoord, &[f64])> {
        self.cells.iter().map(|(c, a)| (*c, a.as_slice()))
    }
}
