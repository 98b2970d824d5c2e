//! The four pipeline commands: build-map, eval-traj, synth and export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use thiserror::Error;

use semvox::bki::{BkiError, KernelFilter, VoxelGrid, VoxelGridConfig, VoxelRecord};
use semvox::cloud::{frame_to_cloud, CloudError, FrameBundle, LabelRemap, SemanticPointCloud};
use semvox::geometry::BackprojectOptions;
use semvox::io::{
    class_color, read_color_frame, read_depth_frame, read_intrinsics, read_label_frame,
    read_pose_list, read_trajectory, read_voxel_map, write_ply, write_voxel_map, DatasetLayout,
    DepthEncoding, IoError, PlyFormat, VoxelMapMeta,
};
use semvox::metrics::{evaluate, AlignMode, EvalOptions, MetricsError, MetricsReport};

use crate::config::{EvalConfig, RunConfig};
use crate::synth::{ground_truth_voxels, render_frame, SceneError, SceneSpec, SplitMix64};

/// Command failures carry the process exit code: 1 for configuration
/// problems, 2 for unreadable or malformed data, 3 for numeric or degenerate
/// conditions.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Metrics(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<BkiError> for CliError {
    fn from(e: BkiError) -> Self {
        match e {
            BkiError::KernelFile { .. } | BkiError::Unreadable { .. } => {
                CliError::Data(e.to_string())
            }
            BkiError::ClassOutOfRange { .. } => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Timing and volume summary of a map build.
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub frames: usize,
    pub points_used: usize,
    pub points_skipped: usize,
    pub voxels: usize,
    pub read_ms_mean: f64,
    pub projection_ms_mean: f64,
    pub update_ms_mean: f64,
    pub map_path: PathBuf,
}

impl BuildReport {
    /// key=value lines for the CLI.
    pub fn to_key_values(&self) -> String {
        format!(
            "frames={}\npoints_used={}\npoints_skipped={}\nvoxels={}\n\
             read_ms_mean={:.3}\nprojection_ms_mean={:.3}\nupdate_ms_mean={:.3}\nmap={}\n",
            self.frames,
            self.points_used,
            self.points_skipped,
            self.voxels,
            self.read_ms_mean,
            self.projection_ms_mean,
            self.update_ms_mean,
            self.map_path.display()
        )
    }
}

/// One projected frame handed from the reader stage to the map stage.
struct FramePacket {
    index: usize,
    cloud: SemanticPointCloud,
    read_ms: f64,
    project_ms: f64,
}

/// Streams the dataset through a two-stage pipeline and writes the voxel
/// map.
///
/// A producer thread reads and projects frame t+1 while the map thread
/// updates with frame t; the channel holds at most one frame, so memory
/// stays bounded by two frames in flight plus the map itself. Updates
/// happen strictly in frame order with inputs identical to a sequential
/// run, so the output map is bit-identical to one. Any failure names the
/// offending frame.
pub fn cmd_build_map(config: &RunConfig) -> Result<BuildReport, CliError> {
    let layout = DatasetLayout::discover(&config.dataset)?;
    let intrinsics_path = config
        .intrinsics
        .clone()
        .unwrap_or_else(|| layout.intrinsics_path.clone());
    let trajectory_path = config
        .trajectory
        .clone()
        .unwrap_or_else(|| layout.trajectory_path.clone());
    let remap_path = config.remap.clone().unwrap_or_else(|| layout.remap_path.clone());

    let camera = read_intrinsics(&intrinsics_path)?;
    if !camera.intrinsics.principal_point_in_frame() {
        eprintln!(
            "warning: principal point ({}, {}) lies outside the {}x{} frame",
            camera.intrinsics.cx, camera.intrinsics.cy, camera.intrinsics.width, camera.intrinsics.height
        );
    }
    let remap = LabelRemap::load(&remap_path)?;
    let poses = read_pose_list(&trajectory_path)?;
    if poses.len() < layout.num_frames() {
        return Err(CliError::Data(format!(
            "trajectory has {} poses for {} frames",
            poses.len(),
            layout.num_frames()
        )));
    }

    let kernel = match &config.kernel_file {
        Some(path) => KernelFilter::load(path)?,
        None => KernelFilter::sparse(config.kernel_l, config.kernel_sigma0, config.voxel_res)?,
    };
    let mut grid = VoxelGrid::new(VoxelGridConfig {
        resolution: config.voxel_res,
        origin: config.origin,
        num_classes: usize::from(remap.num_target_classes()),
        prior_alpha: config.prior_alpha,
        unlabeled_class: Some(remap.unlabeled_id()),
    })?;

    let projection = BackprojectOptions {
        max_range: config.max_range.unwrap_or(camera.max_range),
        stride: config.stride,
        convention: camera.convention,
    };
    let encoding = if config.inverse_depth {
        DepthEncoding::Inverse
    } else {
        DepthEncoding::Metric
    };
    if let Some(dir) = &config.ply_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }

    let mut report = BuildReport {
        frames: layout.num_frames(),
        points_used: 0,
        points_skipped: 0,
        voxels: 0,
        read_ms_mean: 0.0,
        projection_ms_mean: 0.0,
        update_ms_mean: 0.0,
        map_path: config.out.clone(),
    };
    let mut read_ms = 0.0;
    let mut project_ms = 0.0;
    let mut update_ms = 0.0;

    let at_frame = |i: usize, e: CliError| match e {
        CliError::Data(msg) => CliError::Data(format!("frame {i}: {msg}")),
        CliError::Numeric(msg) => CliError::Numeric(format!("frame {i}: {msg}")),
        other => other,
    };

    let pipeline: Result<(), CliError> = std::thread::scope(|scope| {
        let (tx, rx) = std::sync::mpsc::sync_channel::<Result<FramePacket, CliError>>(1);
        let camera_ref = &camera;
        let remap_ref = &remap;
        let poses_ref = &poses;
        let layout_ref = &layout;
        let projection_ref = &projection;
        scope.spawn(move || {
            let frame_poses = poses_ref.iter().take(layout_ref.num_frames());
            for (i, timed) in frame_poses.enumerate() {
                let packet = (|| -> Result<FramePacket, CliError> {
                    let t0 = Instant::now();
                    let depth = read_depth_frame(&layout_ref.depth_files[i], encoding)
                        .map_err(CliError::from)?;
                    let labels =
                        read_label_frame(&layout_ref.label_files[i]).map_err(CliError::from)?;
                    let color = match layout_ref.color_files.get(i) {
                        Some(path) => Some(read_color_frame(path).map_err(CliError::from)?),
                        None => None,
                    };
                    let frame = FrameBundle::new(timed.timestamp, depth, labels, color)
                        .map_err(CliError::from)?;
                    let read_ms = t0.elapsed().as_secs_f64() * 1e3;

                    let t1 = Instant::now();
                    let cloud = frame_to_cloud(
                        &frame,
                        &timed.pose,
                        &camera_ref.intrinsics,
                        remap_ref,
                        projection_ref,
                    )
                    .map_err(CliError::from)?;
                    Ok(FramePacket {
                        index: i,
                        cloud,
                        read_ms,
                        project_ms: t1.elapsed().as_secs_f64() * 1e3,
                    })
                })()
                .map_err(|e| at_frame(i, e));
                let failed = packet.is_err();
                // A closed channel means the map stage bailed out first.
                if tx.send(packet).is_err() || failed {
                    return;
                }
            }
        });

        while let Ok(packet) = rx.recv() {
            let packet = packet?;
            let i = packet.index;
            read_ms += packet.read_ms;
            project_ms += packet.project_ms;

            let t = Instant::now();
            let stats = grid
                .update(&packet.cloud, &kernel)
                .map_err(|e| at_frame(i, e.into()))?;
            update_ms += t.elapsed().as_secs_f64() * 1e3;
            report.points_used += stats.points_used;
            report.points_skipped += stats.points_skipped;

            if let Some(dir) = &config.ply_dir {
                let path = dir.join(format!("frame_{i:06}.ply"));
                write_ply(&packet.cloud, &path, PlyFormat::Binary)
                    .map_err(|e| at_frame(i, e.into()))?;
            }
        }
        Ok(())
    });
    pipeline?;

    let records = grid.export_expected(config.min_confidence);
    report.voxels = records.len();
    let meta = VoxelMapMeta {
        resolution: grid.resolution(),
        origin: *grid.origin(),
        classes: grid.num_classes(),
    };
    write_voxel_map(&meta, &records, &config.out)?;

    if report.frames > 0 {
        let n = report.frames as f64;
        report.read_ms_mean = read_ms / n;
        report.projection_ms_mean = project_ms / n;
        report.update_ms_mean = update_ms / n;
    }
    Ok(report)
}

/// Evaluates an estimated trajectory against a reference and returns the
/// full metric report.
pub fn cmd_eval_traj(
    est_path: &Path,
    ref_path: &Path,
    options: &EvalConfig,
) -> Result<MetricsReport, CliError> {
    let est = read_trajectory(est_path)?;
    let reference = read_trajectory(ref_path)?;
    let eval_options = EvalOptions {
        max_dt: options.max_dt,
        rpe_delta: options.rpe_delta,
        kitti_lengths: options.kitti_lengths.clone(),
        align: if options.scale_align {
            AlignMode::Similarity
        } else {
            AlignMode::Rigid
        },
    };
    Ok(evaluate(&est, &reference, &eval_options)?)
}

/// key=value rendering of a metric report.
pub fn report_key_values(report: &MetricsReport) -> String {
    format!(
        "ate_rmse={}\nrpe_trans={}\nrpe_rot={}\nkitti_trans={}\nkitti_rot={}\nalign_scale={}\n",
        report.ate_rmse,
        report.rpe_trans,
        report.rpe_rot,
        report.kitti_trans,
        report.kitti_rot,
        report.alignment.scale
    )
}

/// JSON rendering of a metric report.
pub fn report_json(report: &MetricsReport) -> String {
    format!(
        "{{\n  \"ate_rmse\": {},\n  \"rpe_trans\": {},\n  \"rpe_rot\": {},\n  \
         \"kitti_trans\": {},\n  \"kitti_rot\": {},\n  \"align_scale\": {}\n}}\n",
        report.ate_rmse,
        report.rpe_trans,
        report.rpe_rot,
        report.kitti_trans,
        report.kitti_rot,
        report.alignment.scale
    )
}

/// Summary of a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthReport {
    pub frames: usize,
    pub classes: u16,
    pub gt_voxels: usize,
    pub out_dir: PathBuf,
}

/// Renders a synthetic dataset to disk in the pipeline's input formats,
/// plus the analytic ground-truth voxel classes for scoring.
pub fn cmd_synth(spec_path: &Path, out_dir: &Path, frames: usize) -> Result<SynthReport, CliError> {
    let scene = SceneSpec::load(spec_path)?;
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", p.display())))
    };
    mkdir(out_dir)?;
    mkdir(&out_dir.join("depth"))?;
    mkdir(&out_dir.join("labels"))?;

    let k = scene.intrinsics();
    let classes = scene.scene_classes();
    let mut rng = SplitMix64::new(scene.seed);
    let mut trajectory = Vec::with_capacity(frames);
    for i in 0..frames {
        let pose = scene.camera_pose(i, frames);
        let (depth, labels) = render_frame(&scene, &pose, &mut rng, &classes);
        semvox::io::write_depth_frame(&out_dir.join(format!("depth/{i:06}.vdrd")), &depth)?;
        semvox::io::write_label_frame(&out_dir.join(format!("labels/{i:06}.vdrd")), &labels)?;
        trajectory.push(semvox::metrics::TimedPose {
            timestamp: i as f64 * scene.dt,
            pose,
        });
    }
    semvox::io::write_trajectory(&out_dir.join("trajectory.txt"), &trajectory)?;
    semvox::io::write_intrinsics(
        &out_dir.join("intrinsics.txt"),
        &semvox::io::CameraConfig {
            intrinsics: k,
            max_range: scene.max_range,
            convention: semvox::geometry::CameraConvention::Rdf,
        },
    )?;
    let remap = LabelRemap::identity(scene.num_classes(), 0).map_err(CliError::from)?;
    std::fs::write(out_dir.join("remap.txt"), remap.to_file_string())
        .map_err(|e| CliError::Data(format!("cannot write remap.txt: {e}")))?;

    let gt = ground_truth_voxels(&scene, scene.gt_resolution);
    let records: Vec<VoxelRecord> = gt
        .iter()
        .map(|(coord, class)| VoxelRecord {
            coord: *coord,
            expected_class: *class,
            confidence: 1.0,
        })
        .collect();
    let meta = VoxelMapMeta {
        resolution: scene.gt_resolution,
        origin: nalgebra::Vector3::zeros(),
        classes: usize::from(scene.num_classes()),
    };
    write_voxel_map(&meta, &records, &out_dir.join("ground_truth.voxels"))?;

    Ok(SynthReport {
        frames,
        classes: scene.num_classes(),
        gt_voxels: records.len(),
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Ply,
    VoxelText,
}

/// Converts a voxel map file: voxel centers as a class-colored PLY cloud,
/// or a normalized copy of the text format. Returns the record count.
pub fn cmd_export(map_path: &Path, format: ExportFormat, out: &Path) -> Result<usize, CliError> {
    let map = read_voxel_map(map_path)?;
    match format {
        ExportFormat::VoxelText => {
            write_voxel_map(&map.meta, &map.records, out)?;
        }
        ExportFormat::Ply => {
            let res = map.meta.resolution;
            let points: Vec<Point3<f64>> = map
                .records
                .iter()
                .map(|r| {
                    Point3::new(
                        map.meta.origin.x + (r.coord.x as f64 + 0.5) * res,
                        map.meta.origin.y + (r.coord.y as f64 + 0.5) * res,
                        map.meta.origin.z + (r.coord.z as f64 + 0.5) * res,
                    )
                })
                .collect();
            let classes: Vec<u16> = map.records.iter().map(|r| r.expected_class).collect();
            let colors: Vec<[u8; 3]> = classes.iter().map(|&c| class_color(c)).collect();
            let cloud = SemanticPointCloud::new(points, classes, Some(colors))
                .map_err(CliError::from)?;
            write_ply(&cloud, out, PlyFormat::Binary)?;
        }
    }
    Ok(map.records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BuildOverrides, ConfigFile, EvalOverrides};
    use semvox::io::read_ply;
    use tempfile::tempdir;

    const SCENE: &str = "\
seed = 11
width = 48
height = 36
fx = 36
fy = 36
plane_z = 0.1
plane_class = 1
plane_extent = 12.2
box = -1.5 0.5 0.9 1.1 1.1 0.9 2
box = 1.7 -0.9 0.9 0.9 1.3 0.9 3
path = circle 5.5 3.1 0 0 0.1
";

    fn build_config(dataset: &Path, out: &Path) -> RunConfig {
        RunConfig::resolve(
            &ConfigFile::default(),
            BuildOverrides {
                dataset: Some(dataset.to_path_buf()),
                out: Some(out.to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn synth_then_build_map_end_to_end() {
        let dir = tempdir().unwrap();
        let spec = dir.path().join("scene.txt");
        std::fs::write(&spec, SCENE).unwrap();
        let data = dir.path().join("data");
        let synth = cmd_synth(&spec, &data, 8).unwrap();
        assert_eq!(synth.frames, 8);
        assert_eq!(synth.classes, 4);
        assert!(synth.gt_voxels > 1000);

        let out = dir.path().join("map.voxels");
        let report = cmd_build_map(&build_config(&data, &out)).unwrap();
        assert_eq!(report.frames, 8);
        assert!(report.points_used > 1000);
        assert!(report.voxels > 100);

        let map = read_voxel_map(&out).unwrap();
        assert_eq!(map.meta.classes, 4);
        assert_eq!(map.records.len(), report.voxels);
    }

    #[test]
    fn build_map_is_deterministic() {
        let dir = tempdir().unwrap();
        let spec = dir.path().join("scene.txt");
        std::fs::write(&spec, SCENE).unwrap();
        let data = dir.path().join("data");
        cmd_synth(&spec, &data, 4).unwrap();

        let out_a = dir.path().join("a.voxels");
        let out_b = dir.path().join("b.voxels");
        cmd_build_map(&build_config(&data, &out_a)).unwrap();
        cmd_build_map(&build_config(&data, &out_b)).unwrap();
        assert_eq!(
            std::fs::read(&out_a).unwrap(),
            std::fs::read(&out_b).unwrap()
        );
    }

    #[test]
    fn zero_frame_dataset_builds_empty_map() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("depth")).unwrap();
        std::fs::create_dir(root.join("labels")).unwrap();
        std::fs::write(root.join("trajectory.txt"), "").unwrap();
        std::fs::write(
            root.join("intrinsics.txt"),
            "fx = 30\nfy = 30\ncx = 16\ncy = 12\nwidth = 32\nheight = 24\n",
        )
        .unwrap();
        std::fs::write(
            root.join("remap.txt"),
            "num_target_classes 2\nunlabeled_id 0\n",
        )
        .unwrap();
        let out = root.join("map.voxels");
        let report = cmd_build_map(&build_config(root, &out)).unwrap();
        assert_eq!(report.frames, 0);
        assert_eq!(report.voxels, 0);
        let map = read_voxel_map(&out).unwrap();
        assert!(map.records.is_empty());
    }

    #[test]
    fn build_map_names_failing_frame() {
        let dir = tempdir().unwrap();
        let spec = dir.path().join("scene.txt");
        std::fs::write(&spec, SCENE).unwrap();
        let data = dir.path().join("data");
        cmd_synth(&spec, &data, 3).unwrap();
        // Corrupt the second depth frame.
        std::fs::write(data.join("depth/000001.vdrd"), b"garbage").unwrap();
        let out = dir.path().join("map.voxels");
        let err = cmd_build_map(&build_config(&data, &out)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn eval_traj_identical_files_gives_zeros() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let text: String = (0..20)
            .map(|i| {
                let s = i as f64 * 0.4;
                format!("{} {} {} {} 0 0 0 1\n", i, s.cos(), s.sin(), 0.25 * s)
            })
            .collect();
        std::fs::write(&path, text).unwrap();
        let options = EvalConfig::resolve(
            &ConfigFile::default(),
            EvalOverrides {
                kitti_lengths: Some("1,2".into()),
                ..Default::default()
            },
        )
        .unwrap();
        let report = cmd_eval_traj(&path, &path, &options).unwrap();
        assert!(report.ate_rmse <= 1e-12);
        assert!(report.rpe_trans <= 1e-12);
        assert!(report.kitti_trans <= 1e-12);
        let kv = report_key_values(&report);
        for key in ["ate_rmse=", "rpe_trans=", "rpe_rot=", "kitti_trans=", "kitti_rot="] {
            assert!(kv.contains(key));
        }
    }

    #[test]
    fn export_single_voxel_to_ply_center() {
        let dir = tempdir().unwrap();
        let map_path = dir.path().join("map.voxels");
        std::fs::write(
            &map_path,
            "resolution 0.2\norigin 0 0 0\nclasses 2\n0 0 0 1 5\n",
        )
        .unwrap();
        let ply_path = dir.path().join("map.ply");
        let n = cmd_export(&map_path, ExportFormat::Ply, &ply_path).unwrap();
        assert_eq!(n, 1);
        let cloud = read_ply(&ply_path).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points()[0];
        approx::assert_relative_eq!(p.x, 0.1, epsilon = 1e-6);
        approx::assert_relative_eq!(p.y, 0.1, epsilon = 1e-6);
        approx::assert_relative_eq!(p.z, 0.1, epsilon = 1e-6);

        // Round-trip the text format.
        let copy = dir.path().join("copy.voxels");
        cmd_export(&map_path, ExportFormat::VoxelText, &copy).unwrap();
        let a = read_voxel_map(&map_path).unwrap();
        let b = read_voxel_map(&copy).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.meta, b.meta);
    }

    #[test]
    fn export_empty_map() {
        let dir = tempdir().unwrap();
        let map_path = dir.path().join("map.voxels");
        std::fs::write(&map_path, "resolution 0.2\norigin 0 0 0\nclasses 2\n").unwrap();
        let ply_path = dir.path().join("map.ply");
        assert_eq!(cmd_export(&map_path, ExportFormat::Ply, &ply_path).unwrap(), 0);
        assert!(read_ply(&ply_path).unwrap().is_empty());
    }

    #[test]
    fn synth_same_seed_is_byte_identical() {
        let dir = tempdir().unwrap();
        let spec = dir.path().join("scene.txt");
        std::fs::write(&spec, SCENE.replace("label_flip_prob = 0", "")).unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        cmd_synth(&spec, &a, 3).unwrap();
        cmd_synth(&spec, &b, 3).unwrap();
        for rel in [
            "depth/000000.vdrd",
            "depth/000002.vdrd",
            "labels/000001.vdrd",
            "trajectory.txt",
            "intrinsics.txt",
            "remap.txt",
            "ground_truth.voxels",
        ] {
            assert_eq!(
                std::fs::read(a.join(rel)).unwrap(),
                std::fs::read(b.join(rel)).unwrap(),
                "{rel} differs"
            );
        }
    }
}
