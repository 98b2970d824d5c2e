//! Synthetic scene generator.
//!
//! Scenes are analytic: a bounded ground plane plus axis-aligned boxes with
//! per-face classes, viewed from a parametric camera path. Every rendered
//! pixel's depth and class follow from ray casting in closed form, so the
//! generator can also emit the exact voxel-level ground truth that the
//! acceptance scoring compares maps against. Rendering is deterministic for
//! a given seed.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};

use semvox::bki::VoxelCoord;
use semvox::geometry::{CameraIntrinsics, PoseSE3};
use semvox::grid::{DepthMap, LabelMap};
use semvox::io::VoxelMapFile;

/// Deterministic 64-bit generator (splitmix64). Cheap, seedable and stable
/// across platforms, which keeps generated datasets byte-identical.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in 0..n (n > 0).
    pub fn next_index(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller.
    pub fn next_gauss(&mut self) -> f64 {
        let u1 = (1.0 - self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Axis-aligned box with one class per face, ordered +x, -x, +y, -y, +z, -z.
#[derive(Debug, Clone)]
pub struct BoxSpec {
    pub center: Vector3<f64>,
    pub size: Vector3<f64>,
    pub face_classes: [u16; 6],
}

#[derive(Debug, Clone)]
pub enum CameraPath {
    /// Full orbit around `target` at the given radius and height, looking at
    /// the target.
    Circle {
        radius: f64,
        height: f64,
        target: Point3<f64>,
    },
    /// Straight dolly from `start` to `end`, looking at `target`.
    Line {
        start: Point3<f64>,
        end: Point3<f64>,
        target: Point3<f64>,
    },
}

/// Analytic scene description (see [`SceneSpec::parse_str`] for the file
/// format).
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub max_range: f64,
    pub plane_z: f64,
    pub plane_class: u16,
    /// Full side length of the square ground patch, centered on the world
    /// origin.
    pub plane_extent: f64,
    pub boxes: Vec<BoxSpec>,
    pub path: CameraPath,
    pub depth_sigma: f64,
    pub label_flip_prob: f64,
    pub dt: f64,
    pub gt_resolution: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("scene spec line {line}: {msg}")]
    Spec { line: usize, msg: String },
    #[error("scene spec: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
}

impl SceneSpec {
    /// Parses the `key = value` scene format. `box` lines repeat and carry
    /// `cx cy cz sx sy sz` followed by one class (all faces) or six
    /// (+x -x +y -y +z -z). The `path` value is either
    /// `circle RADIUS HEIGHT TX TY TZ` or `line SX SY SZ EX EY EZ TX TY TZ`.
    pub fn parse_str(text: &str) -> Result<Self, SceneError> {
        let mut seed = 0u64;
        let mut width = None;
        let mut height = None;
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut max_range = 50.0;
        let mut plane_z = None;
        let mut plane_class = 1u16;
        let mut plane_extent = None;
        let mut boxes = Vec::new();
        let mut path = None;
        let mut depth_sigma = 0.0;
        let mut label_flip_prob = 0.0;
        let mut dt = 0.1;
        let mut gt_resolution = 0.2;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |msg: String| SceneError::Spec { line, msg };
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{trimmed}`")))?;
            let key = key.trim();
            let value = value.trim();
            let floats = |n: usize| -> Result<Vec<f64>, SceneError> {
                let v: Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse::<f64>).collect();
                let v = v.map_err(|_| err(format!("`{value}` is not a list of numbers")))?;
                if v.len() < n {
                    return Err(err(format!("expected at least {n} numbers, got {}", v.len())));
                }
                Ok(v)
            };
            match key {
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| err(format!("`{value}` is not a u64")))?
                }
                "width" => width = Some(parse_usize(value, line)?),
                "height" => height = Some(parse_usize(value, line)?),
                "fx" => fx = Some(parse_f64(value, line)?),
                "fy" => fy = Some(parse_f64(value, line)?),
                "cx" => cx = Some(parse_f64(value, line)?),
                "cy" => cy = Some(parse_f64(value, line)?),
                "max_range" => max_range = parse_f64(value, line)?,
                "plane_z" => plane_z = Some(parse_f64(value, line)?),
                "plane_class" => plane_class = parse_u16(value, line)?,
                "plane_extent" => plane_extent = Some(parse_f64(value, line)?),
                "depth_sigma" => depth_sigma = parse_f64(value, line)?,
                "label_flip_prob" => label_flip_prob = parse_f64(value, line)?,
                "dt" => dt = parse_f64(value, line)?,
                "gt_resolution" => gt_resolution = parse_f64(value, line)?,
                "box" => {
                    let v = floats(7)?;
                    let face_classes = match v.len() {
                        7 => [v[6] as u16; 6],
                        12 => {
                            let mut f = [0u16; 6];
                            for (slot, val) in f.iter_mut().zip(&v[6..12]) {
                                *slot = *val as u16;
                            }
                            f
                        }
                        n => {
                            return Err(err(format!(
                                "box takes 7 or 12 numbers, got {n}"
                            )))
                        }
                    };
                    boxes.push(BoxSpec {
                        center: Vector3::new(v[0], v[1], v[2]),
                        size: Vector3::new(v[3], v[4], v[5]),
                        face_classes,
                    });
                }
                "path" => {
                    let mut parts = value.split_whitespace();
                    let kind = parts.next().unwrap_or_default();
                    let rest: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
                    let rest =
                        rest.map_err(|_| err(format!("`{value}` has non-numeric fields")))?;
                    path = Some(match (kind, rest.as_slice()) {
                        ("circle", [radius, height, tx, ty, tz]) => CameraPath::Circle {
                            radius: *radius,
                            height: *height,
                            target: Point3::new(*tx, *ty, *tz),
                        },
                        ("line", [sx, sy, sz, ex, ey, ez, tx, ty, tz]) => CameraPath::Line {
                            start: Point3::new(*sx, *sy, *sz),
                            end: Point3::new(*ex, *ey, *ez),
                            target: Point3::new(*tx, *ty, *tz),
                        },
                        _ => {
                            return Err(err(format!(
                                "path must be `circle R H TX TY TZ` or `line ...`, got `{value}`"
                            )))
                        }
                    });
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }

        let width = width.ok_or_else(|| SceneError::Invalid("missing width".into()))?;
        let height = height.ok_or_else(|| SceneError::Invalid("missing height".into()))?;
        let spec = Self {
            seed,
            width,
            height,
            fx: fx.ok_or_else(|| SceneError::Invalid("missing fx".into()))?,
            fy: fy.ok_or_else(|| SceneError::Invalid("missing fy".into()))?,
            cx: cx.unwrap_or(width as f64 / 2.0),
            cy: cy.unwrap_or(height as f64 / 2.0),
            max_range,
            plane_z: plane_z.ok_or_else(|| SceneError::Invalid("missing plane_z".into()))?,
            plane_class,
            plane_extent: plane_extent
                .ok_or_else(|| SceneError::Invalid("missing plane_extent".into()))?,
            boxes,
            path: path.ok_or_else(|| SceneError::Invalid("missing path".into()))?,
            depth_sigma,
            label_flip_prob,
            dt,
            gt_resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(SceneError::Invalid("focal lengths must be positive".into()));
        }
        if self.plane_extent <= 0.0 {
            return Err(SceneError::Invalid("plane_extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(SceneError::Invalid(
                "label_flip_prob must be in [0, 1]".into(),
            ));
        }
        if self.depth_sigma < 0.0 {
            return Err(SceneError::Invalid("depth_sigma must be >= 0".into()));
        }
        if self.plane_class == 0 || self.boxes.iter().any(|b| b.face_classes.contains(&0)) {
            return Err(SceneError::Invalid(
                "class 0 is reserved for unlabeled pixels".into(),
            ));
        }
        if self.boxes.iter().any(|b| b.size.iter().any(|s| *s <= 0.0)) {
            return Err(SceneError::Invalid("box sizes must be positive".into()));
        }
        if self.dt <= 0.0 || self.gt_resolution <= 0.0 {
            return Err(SceneError::Invalid(
                "dt and gt_resolution must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .expect("validated")
    }

    /// Real (labeled) classes appearing in the scene, ascending.
    pub fn scene_classes(&self) -> Vec<u16> {
        let mut classes = vec![self.plane_class];
        for b in &self.boxes {
            classes.extend_from_slice(&b.face_classes);
        }
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// One more than the largest class id (class 0 stays unlabeled).
    pub fn num_classes(&self) -> u16 {
        self.scene_classes().last().unwrap() + 1
    }

    /// Camera-to-world pose for frame `index` of `count`.
    pub fn camera_pose(&self, index: usize, count: usize) -> PoseSE3 {
        match &self.path {
            CameraPath::Circle {
                radius,
                height,
                target,
            } => {
                let angle = std::f64::consts::TAU * index as f64 / count.max(1) as f64;
                let eye = Point3::new(
                    target.x + radius * angle.cos(),
                    target.y + radius * angle.sin(),
                    *height,
                );
                look_at(&eye, target)
            }
            CameraPath::Line { start, end, target } => {
                let t = if count <= 1 {
                    0.0
                } else {
                    index as f64 / (count - 1) as f64
                };
                let eye = Point3::from(start.coords + (end.coords - start.coords) * t);
                look_at(&eye, target)
            }
        }
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, SceneError> {
    s.parse().map_err(|_| SceneError::Spec {
        line,
        msg: format!("`{s}` is not a number"),
    })
}

fn parse_u16(s: &str, line: usize) -> Result<u16, SceneError> {
    s.parse().map_err(|_| SceneError::Spec {
        line,
        msg: format!("`{s}` is not a u16"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize, SceneError> {
    s.parse().map_err(|_| SceneError::Spec {
        line,
        msg: format!("`{s}` is not a positive integer"),
    })
}

/// Camera-to-world look-at pose for an x-right, y-down, z-forward camera in
/// a z-up world.
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>) -> PoseSE3 {
    let forward = (target - eye).normalize();
    let up = Vector3::z();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        // Looking straight up or down; any horizontal right axis works.
        right = forward.cross(&Vector3::x());
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    PoseSE3::new(rotation, eye.coords).expect("look-at basis is orthonormal")
}

/// First intersection of a ray with the scene. Directions use a unit z
/// component so the ray parameter equals camera-frame depth.
fn cast_ray(
    scene: &SceneSpec,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
) -> Option<(f64, u16)> {
    let mut best: Option<(f64, u16)> = None;
    let half = scene.plane_extent / 2.0;
    if dir.z.abs() > 1e-15 {
        let t = (scene.plane_z - origin.z) / dir.z;
        if t > 1e-9 {
            let x = origin.x + t * dir.x;
            let y = origin.y + t * dir.y;
            if x.abs() <= half && y.abs() <= half {
                best = Some((t, scene.plane_class));
            }
        }
    }
    for b in &scene.boxes {
        if let Some((t, face)) = intersect_box(origin, dir, b) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, b.face_classes[face]));
            }
        }
    }
    best
}

/// Slab-method ray/AABB intersection returning the entry distance and entry
/// face index (+x, -x, +y, -y, +z, -z).
fn intersect_box(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    b: &BoxSpec,
) -> Option<(f64, usize)> {
    let min = b.center - b.size / 2.0;
    let max = b.center + b.size / 2.0;
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut face = 0usize;
    for axis in 0..3 {
        let d = dir[axis];
        if d.abs() < 1e-15 {
            if origin[axis] < min[axis] || origin[axis] > max[axis] {
                return None;
            }
            continue;
        }
        let mut t1 = (min[axis] - origin[axis]) / d;
        let mut t2 = (max[axis] - origin[axis]) / d;
        let mut entering_min_face = true;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
            entering_min_face = false;
        }
        if t1 > t_near {
            t_near = t1;
            // min faces are the odd indices (-x, -y, -z).
            face = axis * 2 + usize::from(entering_min_face);
        }
        t_far = t_far.min(t2);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 1e-9).then_some((t_near, face))
}

/// Renders one frame: z-depth in meters plus class labels. Pixels that miss
/// the scene get depth 0 and the unlabeled class 0.
pub fn render_frame(
    scene: &SceneSpec,
    pose: &PoseSE3,
    rng: &mut SplitMix64,
    flip_classes: &[u16],
) -> (DepthMap, LabelMap) {
    let mut depth = DepthMap::filled(scene.width, scene.height, 0.0);
    let mut labels = LabelMap::filled(scene.width, scene.height, 0);
    let eye = Point3::from(*pose.translation());
    for v in 0..scene.height {
        for u in 0..scene.width {
            let dir_cam = Vector3::new(
                (u as f64 - scene.cx) / scene.fx,
                (v as f64 - scene.cy) / scene.fy,
                1.0,
            );
            let dir_world = pose.transform_vector(&dir_cam);
            if let Some((t, class)) = cast_ray(scene, &eye, &dir_world) {
                let mut z = t;
                if scene.depth_sigma > 0.0 {
                    z += scene.depth_sigma * rng.next_gauss();
                }
                let mut c = class;
                if scene.label_flip_prob > 0.0 && rng.next_f64() < scene.label_flip_prob {
                    c = flip_to_other_class(c, flip_classes, rng);
                }
                *depth.at_mut(u, v) = z;
                *labels.at_mut(u, v) = c;
            }
        }
    }
    (depth, labels)
}

/// Uniform draw among the real classes excluding `current`.
fn flip_to_other_class(current: u16, classes: &[u16], rng: &mut SplitMix64) -> u16 {
    let others: Vec<u16> = classes.iter().copied().filter(|&c| c != current).collect();
    if others.is_empty() {
        return current;
    }
    others[rng.next_index(others.len())]
}

/// Exact voxel-level ground truth: every voxel a scene surface passes
/// through, labeled with the surface class. Box faces take priority over
/// the plane; faces are sampled at a quarter of the voxel resolution.
pub fn ground_truth_voxels(scene: &SceneSpec, resolution: f64) -> BTreeMap<VoxelCoord, u16> {
    let mut gt: BTreeMap<VoxelCoord, u16> = BTreeMap::new();
    let voxel_of = |x: f64, y: f64, z: f64| {
        VoxelCoord::new(
            (x / resolution).floor() as i32,
            (y / resolution).floor() as i32,
            (z / resolution).floor() as i32,
        )
    };
    let step = resolution / 4.0;

    for b in &scene.boxes {
        let min = b.center - b.size / 2.0;
        let max = b.center + b.size / 2.0;
        // (fixed axis, fixed value, u axis, v axis, face index)
        let faces = [
            (0usize, max.x, 1usize, 2usize, 0usize),
            (0, min.x, 1, 2, 1),
            (1, max.y, 0, 2, 2),
            (1, min.y, 0, 2, 3),
            (2, max.z, 0, 1, 4),
            (2, min.z, 0, 1, 5),
        ];
        for (axis, value, ua, va, face) in faces {
            let class = b.face_classes[face];
            for u in sample_positions(min[ua], max[ua], step) {
                for v in sample_positions(min[va], max[va], step) {
                    let mut p = [0.0f64; 3];
                    p[axis] = value;
                    p[ua] = u;
                    p[va] = v;
                    gt.entry(voxel_of(p[0], p[1], p[2])).or_insert(class);
                }
            }
        }
    }

    let half = scene.plane_extent / 2.0;
    for x in sample_positions(-half, half, step) {
        for y in sample_positions(-half, half, step) {
            gt.entry(voxel_of(x, y, scene.plane_z))
                .or_insert(scene.plane_class);
        }
    }
    gt
}

fn sample_positions(min: f64, max: f64, step: f64) -> Vec<f64> {
    let n = ((max - min) / step).ceil() as usize;
    (0..=n).map(|i| (min + i as f64 * step).min(max)).collect()
}

/// Agreement between a built map and ground truth, over the voxels present
/// in both.
#[derive(Debug, Clone, Copy)]
pub struct Agreement {
    pub compared: usize,
    pub matching: usize,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        if self.compared == 0 {
            0.0
        } else {
            self.matching as f64 / self.compared as f64
        }
    }
}

/// Compares expected classes voxel by voxel on the intersection of the two
/// maps (kernel halo voxels absent from the ground truth are ignored).
pub fn score_agreement(map: &VoxelMapFile, truth: &VoxelMapFile) -> Agreement {
    let gt: std::collections::HashMap<VoxelCoord, u16> = truth
        .records
        .iter()
        .map(|r| (r.coord, r.expected_class))
        .collect();
    let mut agreement = Agreement {
        compared: 0,
        matching: 0,
    };
    for r in &map.records {
        if let Some(&class) = gt.get(&r.coord) {
            agreement.compared += 1;
            if class == r.expected_class {
                agreement.matching += 1;
            }
        }
    }
    agreement
}
