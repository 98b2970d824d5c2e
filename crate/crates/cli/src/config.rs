//! Run configuration: config file parsing and flag merging.
//!
//! Every CLI flag has a matching `key = value` config-file entry; flags
//! override file values, which override defaults.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use semvox::bki::{DEFAULT_PRIOR_ALPHA, DEFAULT_RESOLUTION};
use semvox::metrics::{default_kitti_lengths, DEFAULT_MAX_DT};

use crate::commands::CliError;

/// Default kernel length scale in meters (1.5 voxels at the default
/// resolution).
pub const DEFAULT_KERNEL_L: f64 = 0.3;
pub const DEFAULT_KERNEL_SIGMA0: f64 = 1.0;

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "trajectory",
    "intrinsics",
    "remap",
    "out",
    "ply_dir",
    "voxel_res",
    "origin",
    "kernel_l",
    "kernel_sigma0",
    "kernel_file",
    "prior_alpha",
    "stride",
    "max_range",
    "inverse_depth",
    "min_confidence",
    "rpe_delta",
    "kitti_lengths",
    "scale_align",
    "max_dt",
];

/// Raw `key = value` config file contents.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {line}: expected `key = value`"))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Config(format!(
                    "config line {line}: unknown key `{key}`"
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Config(format!("config key {key}: `{v}` is not a number")))
            })
            .transpose()
    }

    fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    CliError::Config(format!("config key {key}: `{v}` is not a positive integer"))
                })
            })
            .transpose()
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(CliError::Config(format!(
                    "config key {key}: `{other}` is not a boolean"
                ))),
            })
            .transpose()
    }

    fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }
}

/// Flag-level overrides, all optional; `None` falls through to the config
/// file and then the default.
#[derive(Debug, Clone, Default)]
pub struct BuildOverrides {
    pub dataset: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub remap: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ply_dir: Option<PathBuf>,
    pub voxel_res: Option<f64>,
    pub origin: Option<String>,
    pub kernel_l: Option<f64>,
    pub kernel_sigma0: Option<f64>,
    pub kernel_file: Option<PathBuf>,
    pub prior_alpha: Option<f64>,
    pub stride: Option<usize>,
    pub max_range: Option<f64>,
    pub inverse_depth: Option<bool>,
    pub min_confidence: Option<f64>,
}

/// Resolved map-building configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Overrides the dataset's trajectory.txt when set.
    pub trajectory: Option<PathBuf>,
    /// Overrides the dataset's intrinsics.txt when set.
    pub intrinsics: Option<PathBuf>,
    /// Overrides the dataset's remap.txt when set.
    pub remap: Option<PathBuf>,
    pub out: PathBuf,
    pub ply_dir: Option<PathBuf>,
    pub voxel_res: f64,
    pub origin: Vector3<f64>,
    pub kernel_l: f64,
    pub kernel_sigma0: f64,
    pub kernel_file: Option<PathBuf>,
    pub prior_alpha: f64,
    pub stride: usize,
    /// Overrides the intrinsics-file max_range when set.
    pub max_range: Option<f64>,
    pub inverse_depth: bool,
    pub min_confidence: f64,
}

impl RunConfig {
    /// Merges flags over config-file values over defaults, then validates
    /// numeric domains and that every referenced file exists.
    pub fn resolve(file: &ConfigFile, flags: BuildOverrides) -> Result<Self, CliError> {
        let dataset = flags
            .dataset
            .or_else(|| file.get_path("dataset"))
            .ok_or_else(|| CliError::Config("missing required option `dataset`".into()))?;
        let out = flags
            .out
            .or_else(|| file.get_path("out"))
            .ok_or_else(|| CliError::Config("missing required option `out`".into()))?;
        let origin_text = flags.origin.or_else(|| file.get("origin").map(String::from));
        let origin = match origin_text {
            None => Vector3::zeros(),
            Some(text) => {
                let parts: Result<Vec<f64>, _> =
                    text.split_whitespace().map(str::parse::<f64>).collect();
                let parts = parts
                    .map_err(|_| CliError::Config(format!("origin `{text}` is not three numbers")))?;
                if parts.len() != 3 {
                    return Err(CliError::Config(format!(
                        "origin `{text}` must have exactly three components"
                    )));
                }
                Vector3::new(parts[0], parts[1], parts[2])
            }
        };
        let config = Self {
            dataset,
            trajectory: flags.trajectory.or_else(|| file.get_path("trajectory")),
            intrinsics: flags.intrinsics.or_else(|| file.get_path("intrinsics")),
            remap: flags.remap.or_else(|| file.get_path("remap")),
            out,
            ply_dir: flags.ply_dir.or_else(|| file.get_path("ply_dir")),
            voxel_res: flags
                .voxel_res
                .or(file.get_f64("voxel_res")?)
                .unwrap_or(DEFAULT_RESOLUTION),
            origin,
            kernel_l: flags
                .kernel_l
                .or(file.get_f64("kernel_l")?)
                .unwrap_or(DEFAULT_KERNEL_L),
            kernel_sigma0: flags
                .kernel_sigma0
                .or(file.get_f64("kernel_sigma0")?)
                .unwrap_or(DEFAULT_KERNEL_SIGMA0),
            kernel_file: flags.kernel_file.or_else(|| file.get_path("kernel_file")),
            prior_alpha: flags
                .prior_alpha
                .or(file.get_f64("prior_alpha")?)
                .unwrap_or(DEFAULT_PRIOR_ALPHA),
            stride: flags.stride.or(file.get_usize("stride")?).unwrap_or(1),
            max_range: flags.max_range.or(file.get_f64("max_range")?),
            inverse_depth: flags
                .inverse_depth
                .or(file.get_bool("inverse_depth")?)
                .unwrap_or(false),
            min_confidence: flags
                .min_confidence
                .or(file.get_f64("min_confidence")?)
                .unwrap_or(0.0),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.dataset.is_dir() {
            return Err(CliError::Config(format!(
                "dataset directory {} does not exist",
                self.dataset.display()
            )));
        }
        for (name, path) in [
            ("trajectory", &self.trajectory),
            ("intrinsics", &self.intrinsics),
            ("remap", &self.remap),
            ("kernel_file", &self.kernel_file),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::Config(format!(
                        "{name} file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        for (name, value, lo_exclusive) in [
            ("voxel_res", self.voxel_res, true),
            ("kernel_l", self.kernel_l, true),
            ("kernel_sigma0", self.kernel_sigma0, true),
            ("prior_alpha", self.prior_alpha, false),
            ("min_confidence", self.min_confidence, false),
        ] {
            let bad = if lo_exclusive { value <= 0.0 } else { value < 0.0 };
            if bad || !value.is_finite() {
                return Err(CliError::Config(format!("{name} = {value} is out of domain")));
            }
        }
        if let Some(r) = self.max_range {
            if r <= 0.0 || !r.is_finite() {
                return Err(CliError::Config(format!("max_range = {r} is out of domain")));
            }
        }
        if self.stride == 0 {
            return Err(CliError::Config("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Flag-level overrides for trajectory evaluation.
#[derive(Debug, Clone, Default)]
pub struct EvalOverrides {
    pub rpe_delta: Option<usize>,
    pub kitti_lengths: Option<String>,
    pub scale_align: Option<bool>,
    pub max_dt: Option<f64>,
}

/// Resolved evaluation configuration.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub rpe_delta: usize,
    pub kitti_lengths: Vec<f64>,
    pub scale_align: bool,
    pub max_dt: f64,
}

impl EvalConfig {
    pub fn resolve(file: &ConfigFile, flags: EvalOverrides) -> Result<Self, CliError> {
        let lengths_text = flags
            .kitti_lengths
            .or_else(|| file.get("kitti_lengths").map(String::from));
        let kitti_lengths = match lengths_text {
            None => default_kitti_lengths(),
            Some(text) => parse_lengths(&text)?,
        };
        let config = Self {
            rpe_delta: flags.rpe_delta.or(file.get_usize("rpe_delta")?).unwrap_or(1),
            kitti_lengths,
            scale_align: flags
                .scale_align
                .or(file.get_bool("scale_align")?)
                .unwrap_or(false),
            max_dt: flags
                .max_dt
                .or(file.get_f64("max_dt")?)
                .unwrap_or(DEFAULT_MAX_DT),
        };
        if config.rpe_delta == 0 {
            return Err(CliError::Config("rpe_delta must be >= 1".into()));
        }
        if config.max_dt < 0.0 {
            return Err(CliError::Config("max_dt must be >= 0".into()));
        }
        if config.kitti_lengths.iter().any(|l| *l <= 0.0) {
            return Err(CliError::Config("kitti_lengths must be positive".into()));
        }
        Ok(config)
    }
}

/// Comma-separated positive lengths, e.g. `100,200,300`.
fn parse_lengths(text: &str) -> Result<Vec<f64>, CliError> {
    let lengths: Result<Vec<f64>, _> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let lengths =
        lengths.map_err(|_| CliError::Config(format!("kitti_lengths `{text}` is malformed")))?;
    if lengths.is_empty() {
        return Err(CliError::Config("kitti_lengths is empty".into()));
    }
    Ok(lengths)
}
