//! Trajectory evaluation: ATE, RPE and KITTI-style drift.
//!
//! All three metrics start from timestamp association. ATE aligns the
//! estimated trajectory onto the reference with a closed-form least-squares
//! (Umeyama) fit before measuring translational residuals, so a global rigid
//! offset costs nothing. RPE and the KITTI drift compare relative transforms
//! and are invariant to a global offset by construction.

use nalgebra::{Matrix3, Point3, Vector3, SVD};
use thiserror::Error;

use crate::geometry::PoseSE3;

/// Default timestamp association tolerance in seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

/// Reference DROID-SLAM scores on the TartanAir neighborhood sequence, kept
/// for sanity-checking report magnitudes. Reproducing them needs the
/// pretrained network and the full dataset, not this crate.
pub const REFERENCE_ATE_RMSE: f64 = 0.01755;
pub const REFERENCE_RPE_TRANS: f64 = 0.003769;
pub const REFERENCE_RPE_ROT: f64 = 0.06087;
pub const REFERENCE_KITTI_TRANS: f64 = 0.01088;
pub const REFERENCE_KITTI_ROT: f64 = 0.002345;

/// KITTI evaluation sub-path lengths in meters: 100, 200, ..., 800.
pub fn default_kitti_lengths() -> Vec<f64> {
    (1..=8).map(|i| 100.0 * i as f64).collect()
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory must contain at least one pose")]
    EmptyTrajectory,
    #[error("timestamps not strictly increasing at entry {index}")]
    NonMonotonicTimestamps { index: usize },
    #[error("no timestamp pairs within tolerance; trajectories do not overlap")]
    EmptyOverlap,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("need at least {needed} associated poses, got {got}")]
    InsufficientLength { needed: usize, got: usize },
    #[error("reference path too short: no start covers any requested length")]
    PathTooShort,
    #[error("no evaluation lengths given")]
    NoLengths,
}

/// A pose with its timestamp.
#[derive(Debug, Clone, Copy)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: PoseSE3,
}

/// Ordered pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone)]
pub struct Trajectory {
    entries: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(entries: Vec<TimedPose>) -> Result<Self, MetricsError> {
        if entries.is_empty() {
            return Err(MetricsError::EmptyTrajectory);
        }
        for i in 1..entries.len() {
            if entries[i].timestamp <= entries[i - 1].timestamp || entries[i].timestamp.is_nan() {
                return Err(MetricsError::NonMonotonicTimestamps { index: i });
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &TimedPose {
        &self.entries[i]
    }

    /// Left-composes every pose by a constant transform (moves the whole
    /// trajectory rigidly).
    pub fn transformed(&self, t: &PoseSE3) -> Trajectory {
        Trajectory {
            entries: self
                .entries
                .iter()
                .map(|e| TimedPose {
                    timestamp: e.timestamp,
                    pose: t.compose(&e.pose),
                })
                .collect(),
        }
    }
}

/// An associated (estimated, reference) pose pair.
#[derive(Debug, Clone, Copy)]
pub struct PosePair {
    pub est_time: f64,
    pub ref_time: f64,
    pub est: PoseSE3,
    pub reference: PoseSE3,
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of ascending |dt|, each pose used at most once, and the
/// surviving pairs come back ordered by estimated timestamp.
pub fn associate(
    est: &Trajectory,
    reference: &Trajectory,
    max_dt: f64,
) -> Result<Vec<PosePair>, MetricsError> {
    let ref_times: Vec<f64> = reference.entries().iter().map(|e| e.timestamp).collect();
    // (|dt|, est index, ref index), candidates limited to the max_dt window.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in est.entries().iter().enumerate() {
        let lo = ref_times.partition_point(|&t| t < e.timestamp - max_dt);
        for (j, &t) in ref_times.iter().enumerate().skip(lo) {
            if t > e.timestamp + max_dt {
                break;
            }
            candidates.push(((t - e.timestamp).abs(), i, j));
        }
    }
    candidates.sort_by(|a, b| (a.0, a.1, a.2).partial_cmp(&(b.0, b.1, b.2)).unwrap());
    let mut est_used = vec![false; est.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut matched: Vec<(usize, usize)> = Vec::new();
    for (_, i, j) in candidates {
        if est_used[i] || ref_used[j] {
            continue;
        }
        est_used[i] = true;
        ref_used[j] = true;
        matched.push((i, j));
    }
    if matched.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    matched.sort_unstable();
    Ok(matched
        .into_iter()
        .map(|(i, j)| PosePair {
            est_time: est.get(i).timestamp,
            ref_time: reference.get(j).timestamp,
            est: est.get(i).pose,
            reference: reference.get(j).pose,
        })
        .collect())
}

/// Whether alignment may also estimate a scale (for pose sources with gauge
/// freedom, e.g. monocular runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMode {
    #[default]
    Rigid,
    Similarity,
}

/// Closed-form least-squares fit mapping estimated translations onto
/// reference translations: `x -> scale * R * x + t`.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub transform: PoseSE3,
    pub scale: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.transform.rotation() * p.coords) + self.transform.translation())
    }
}

/// Umeyama alignment over the translation pairs. Needs at least three
/// non-collinear translations for a unique answer.
pub fn align_rigid(pairs: &[PosePair], mode: AlignMode) -> Result<Alignment, MetricsError> {
    let n = pairs.len();
    if n < 3 {
        return Err(MetricsError::DegenerateConfiguration(format!(
            "need >= 3 pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mut mu_est = Vector3::zeros();
    let mut mu_ref = Vector3::zeros();
    for p in pairs {
        mu_est += p.est.translation();
        mu_ref += p.reference.translation();
    }
    mu_est /= nf;
    mu_ref /= nf;

    // Cross-covariance of reference against estimate, plus estimate spread.
    let mut sigma = Matrix3::zeros();
    let mut var_est = 0.0;
    for p in pairs {
        let de = p.est.translation() - mu_est;
        let dr = p.reference.translation() - mu_ref;
        sigma += dr * de.transpose();
        var_est += de.norm_squared();
    }
    sigma /= nf;
    var_est /= nf;

    let svd = SVD::new(sigma, true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let s = svd.singular_values;
    if s[0] <= f64::EPSILON || s[1] <= 1e-9 * s[0] {
        return Err(MetricsError::DegenerateConfiguration(
            "translations are collinear or coincident".into(),
        ));
    }
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => {
            if var_est <= f64::EPSILON {
                return Err(MetricsError::DegenerateConfiguration(
                    "estimated translations are coincident; scale is undefined".into(),
                ));
            }
            s.dot(&d) / var_est
        }
    };
    let translation = mu_ref - scale * (rotation * mu_est);
    let transform = PoseSE3::new(rotation, translation).map_err(|e| {
        MetricsError::DegenerateConfiguration(format!("alignment rotation invalid: {e}"))
    })?;
    Ok(Alignment { transform, scale })
}

/// Root-mean-square translational residual after alignment.
pub fn ate_rmse(
    est: &Trajectory,
    reference: &Trajectory,
    max_dt: f64,
    mode: AlignMode,
) -> Result<f64, MetricsError> {
    let pairs = associate(est, reference, max_dt)?;
    let alignment = align_rigid(&pairs, mode)?;
    Ok(ate_rmse_aligned(&pairs, &alignment))
}

fn ate_rmse_aligned(pairs: &[PosePair], alignment: &Alignment) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let moved = alignment.apply(&Point3::from(*p.est.translation()));
            (moved.coords - p.reference.translation()).norm_squared()
        })
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Rotation angle of an orthonormal matrix, `arccos((trace - 1) / 2)` with
/// the argument clamped to survive roundoff.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Relative pose error over a fixed frame interval.
///
/// For each associated index `i`, the error transform is
/// `(ref_i^-1 ref_{i+delta})^-1 (est_i^-1 est_{i+delta})`; returned are the
/// RMS of its translation norm and of its rotation angle. No alignment is
/// needed because relative transforms cancel any global offset.
pub fn rpe(
    est: &Trajectory,
    reference: &Trajectory,
    delta: usize,
    max_dt: f64,
) -> Result<(f64, f64), MetricsError> {
    if delta == 0 {
        return Err(MetricsError::InsufficientLength { needed: 1, got: 0 });
    }
    let pairs = associate(est, reference, max_dt)?;
    if pairs.len() < delta + 1 {
        return Err(MetricsError::InsufficientLength {
            needed: delta + 1,
            got: pairs.len(),
        });
    }
    let mut trans_sq = 0.0;
    let mut rot_sq = 0.0;
    let count = pairs.len() - delta;
    for i in 0..count {
        let e = relative_error(&pairs[i], &pairs[i + delta]);
        trans_sq += e.translation().norm_squared();
        let angle = rotation_angle(e.rotation());
        rot_sq += angle * angle;
    }
    let nf = count as f64;
    Ok(((trans_sq / nf).sqrt(), (rot_sq / nf).sqrt()))
}

fn relative_error(a: &PosePair, b: &PosePair) -> PoseSE3 {
    let rel_ref = a.reference.inverse().compose(&b.reference);
    let rel_est = a.est.inverse().compose(&b.est);
    rel_ref.inverse().compose(&rel_est)
}

/// KITTI-style drift: for every start pose and every requested sub-path
/// length `L` (measured as arc length along the reference translations),
/// the relative-pose error over that stretch is normalized by `L`. Returns
/// the means of translational ratio and rotation angle per meter.
pub fn kitti_errors(
    est: &Trajectory,
    reference: &Trajectory,
    lengths: &[f64],
    max_dt: f64,
) -> Result<(f64, f64), MetricsError> {
    if lengths.is_empty() {
        return Err(MetricsError::NoLengths);
    }
    let pairs = associate(est, reference, max_dt)?;
    // Cumulative arc length along the reference translations.
    let mut dist = Vec::with_capacity(pairs.len());
    dist.push(0.0);
    for i in 1..pairs.len() {
        let step =
            (pairs[i].reference.translation() - pairs[i - 1].reference.translation()).norm();
        dist.push(dist[i - 1] + step);
    }
    let mut trans_sum = 0.0;
    let mut rot_sum = 0.0;
    let mut evaluated = 0usize;
    for start in 0..pairs.len() {
        for &length in lengths {
            let target = dist[start] + length;
            let end = match dist[start + 1..].iter().position(|&d| d >= target) {
                Some(off) => start + 1 + off,
                None => continue,
            };
            let e = relative_error(&pairs[start], &pairs[end]);
            trans_sum += e.translation().norm() / length;
            rot_sum += rotation_angle(e.rotation()) / length;
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(MetricsError::PathTooShort);
    }
    let nf = evaluated as f64;
    Ok((trans_sum / nf, rot_sum / nf))
}

/// Option block for a full evaluation run.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub max_dt: f64,
    pub rpe_delta: usize,
    pub kitti_lengths: Vec<f64>,
    pub align: AlignMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_dt: DEFAULT_MAX_DT,
            rpe_delta: 1,
            kitti_lengths: default_kitti_lengths(),
            align: AlignMode::Rigid,
        }
    }
}

/// The three scores side by side, plus the alignment ATE used.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub ate_rmse: f64,
    pub rpe_trans: f64,
    pub rpe_rot: f64,
    pub kitti_trans: f64,
    pub kitti_rot: f64,
    pub alignment: Alignment,
}

/// Runs ATE, RPE and the KITTI drift with shared association settings.
pub fn evaluate(
    est: &Trajectory,
    reference: &Trajectory,
    options: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let pairs = associate(est, reference, options.max_dt)?;
    let alignment = align_rigid(&pairs, options.align)?;
    let ate = ate_rmse_aligned(&pairs, &alignment);
    let (rpe_trans, rpe_rot) = rpe(est, reference, options.rpe_delta, options.max_dt)?;
    let (kitti_trans, kitti_rot) =
        kitti_errors(est, reference, &options.kitti_lengths, options.max_dt)?;
    Ok(MetricsReport {
        ate_rmse: ate,
        rpe_trans,
        rpe_rot,
        kitti_trans,
        kitti_rot,
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, UnitQuaternion};
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn timed(t: f64, pose: PoseSE3) -> TimedPose {
        TimedPose { timestamp: t, pose }
    }

    fn random_pose(rng: &mut StdRng) -> PoseSE3 {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        PoseSE3::from_quaternion(
            UnitQuaternion::from_scaled_axis(axis),
            Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
        )
    }

    /// Curved trajectory with non-collinear translations.
    fn helix(n: usize, dt: f64) -> Trajectory {
        let entries = (0..n)
            .map(|i| {
                let s = i as f64 * 0.3;
                let pose = PoseSE3::from_quaternion(
                    UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, s * 0.1)),
                    Vector3::new(s.cos(), s.sin(), 0.2 * s),
                );
                timed(i as f64 * dt, pose)
            })
            .collect();
        Trajectory::new(entries).unwrap()
    }

    #[test]
    fn trajectory_validation() {
        assert!(matches!(
            Trajectory::new(vec![]),
            Err(MetricsError::EmptyTrajectory)
        ));
        let shuffled = vec![
            timed(1.0, PoseSE3::identity()),
            timed(0.5, PoseSE3::identity()),
        ];
        assert!(matches!(
            Trajectory::new(shuffled),
            Err(MetricsError::NonMonotonicTimestamps { index: 1 })
        ));
    }

    #[test]
    fn associate_identical_timestamps() {
        let a = helix(10, 0.1);
        let pairs = associate(&a, &a, 0.02).unwrap();
        assert_eq!(pairs.len(), 10);
        for p in &pairs {
            assert_eq!(p.est_time, p.ref_time);
        }
    }

    #[test]
    fn associate_within_offset() {
        let a = helix(10, 0.1);
        let shifted: Vec<TimedPose> = a
            .entries()
            .iter()
            .map(|e| timed(e.timestamp + 0.01, e.pose))
            .collect();
        let b = Trajectory::new(shifted).unwrap();
        let pairs = associate(&b, &a, 0.02).unwrap();
        assert_eq!(pairs.len(), 10);
    }

    #[test]
    fn associate_disjoint_ranges_fails() {
        let a = helix(5, 0.1);
        let later: Vec<TimedPose> = a
            .entries()
            .iter()
            .map(|e| timed(e.timestamp + 100.0, e.pose))
            .collect();
        let b = Trajectory::new(later).unwrap();
        assert!(matches!(
            associate(&a, &b, 0.02),
            Err(MetricsError::EmptyOverlap)
        ));
    }

    #[test]
    fn align_identity_for_equal_trajectories() {
        let a = helix(12, 0.1);
        let pairs = associate(&a, &a, 0.02).unwrap();
        let al = align_rigid(&pairs, AlignMode::Similarity).unwrap();
        assert_relative_eq!(al.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(al.transform.rotation(), &Matrix3::identity(), epsilon = 1e-9);
        assert_relative_eq!(al.transform.translation(), &Vector3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn align_recovers_constructed_offset() {
        let mut rng = StdRng::seed_from_u64(41);
        let reference = helix(15, 0.1);
        let offset = random_pose(&mut rng);
        // est = offset * ref, so the recovered alignment is offset^-1.
        let est = reference.transformed(&offset);
        let pairs = associate(&est, &reference, 0.02).unwrap();
        let al = align_rigid(&pairs, AlignMode::Rigid).unwrap();
        let inv = offset.inverse();
        assert_relative_eq!(al.transform.rotation(), inv.rotation(), epsilon = 1e-9);
        assert_relative_eq!(al.transform.translation(), inv.translation(), epsilon = 1e-9);
    }

    #[test]
    fn align_recovers_scale() {
        let reference = helix(15, 0.1);
        let doubled: Vec<TimedPose> = reference
            .entries()
            .iter()
            .map(|e| {
                timed(
                    e.timestamp,
                    PoseSE3::new(*e.pose.rotation(), 2.0 * e.pose.translation()).unwrap(),
                )
            })
            .collect();
        let est = Trajectory::new(doubled).unwrap();
        let pairs = associate(&est, &reference, 0.02).unwrap();
        let al = align_rigid(&pairs, AlignMode::Similarity).unwrap();
        assert_relative_eq!(al.scale, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn align_degenerate_configurations_rejected() {
        let line: Vec<TimedPose> = (0..5)
            .map(|i| {
                timed(
                    i as f64,
                    PoseSE3::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                )
            })
            .collect();
        let t = Trajectory::new(line).unwrap();
        let pairs = associate(&t, &t, 0.02).unwrap();
        assert!(matches!(
            align_rigid(&pairs, AlignMode::Rigid),
            Err(MetricsError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            align_rigid(&pairs[..2], AlignMode::Rigid),
            Err(MetricsError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn ate_zero_for_identical_trajectories() {
        let a = helix(20, 0.1);
        let ate = ate_rmse(&a, &a, 0.02, AlignMode::Rigid).unwrap();
        assert!(ate <= 1e-12, "ate = {ate}");
    }

    #[test]
    fn ate_invariant_to_rigid_offset_of_estimate() {
        let mut rng = StdRng::seed_from_u64(43);
        let reference = helix(20, 0.1);
        let perturbed: Vec<TimedPose> = reference
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let jitter = Vector3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                );
                let pose =
                    PoseSE3::new(*e.pose.rotation(), e.pose.translation() + jitter).unwrap();
                timed(i as f64 * 0.1, pose)
            })
            .collect();
        let est = Trajectory::new(perturbed).unwrap();
        let base = ate_rmse(&est, &reference, 0.02, AlignMode::Rigid).unwrap();
        for _ in 0..5 {
            let moved = est.transformed(&random_pose(&mut rng));
            let ate = ate_rmse(&moved, &reference, 0.02, AlignMode::Rigid).unwrap();
            assert!((ate - base).abs() < 1e-9, "{ate} vs {base}");
        }
    }

    /// Independent Umeyama + residual oracle built directly on nalgebra.
    fn ate_oracle(pairs: &[PosePair]) -> f64 {
        let n = pairs.len() as f64;
        let mut mu_e = Vector3::zeros();
        let mut mu_r = Vector3::zeros();
        for p in pairs {
            mu_e += p.est.translation();
            mu_r += p.reference.translation();
        }
        mu_e /= n;
        mu_r /= n;
        let mut h = Matrix3::zeros();
        for p in pairs {
            h += (p.reference.translation() - mu_r) * (p.est.translation() - mu_e).transpose();
        }
        let svd = SVD::new(h, true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).scale_mut(-1.0);
            r = u2 * v_t;
        }
        let t = mu_r - r * mu_e;
        let mut sum = 0.0;
        for p in pairs {
            sum += (r * p.est.translation() + t - p.reference.translation()).norm_squared();
        }
        (sum / n).sqrt()
    }

    #[test]
    fn ate_matches_independent_oracle() {
        let reference = helix(15, 0.1);
        // Displace a single pose by a known offset.
        let displaced: Vec<TimedPose> = reference
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut t = *e.pose.translation();
                if i == 7 {
                    t += Vector3::new(0.3, -0.1, 0.2);
                }
                timed(e.timestamp, PoseSE3::new(*e.pose.rotation(), t).unwrap())
            })
            .collect();
        let est = Trajectory::new(displaced).unwrap();
        let pairs = associate(&est, &reference, 0.02).unwrap();
        let expected = ate_oracle(&pairs);
        let got = ate_rmse(&est, &reference, 0.02, AlignMode::Rigid).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got > 0.01);
    }

    #[test]
    fn rpe_zero_for_identical_trajectories() {
        let a = helix(20, 0.1);
        let (t, r) = rpe(&a, &a, 1, 0.02).unwrap();
        assert!(t <= 1e-12 && r <= 1e-7, "({t}, {r})");
    }

    /// Axis-permutation rotations and dyadic translations are exact in f64,
    /// so a constant offset cancels bitwise and the RPE is exactly zero.
    fn exact_trajectory() -> Trajectory {
        let swap = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(0.5, 0.5, 0.5, 0.5));
        let entries = (0..12)
            .map(|i| {
                let q = if i % 2 == 0 {
                    UnitQuaternion::identity()
                } else {
                    swap
                };
                let t = Vector3::new(i as f64 * 0.25, (i % 3) as f64 * 0.5, -(i as f64) * 0.125);
                timed(i as f64, PoseSE3::from_quaternion(q, t))
            })
            .collect();
        Trajectory::new(entries).unwrap()
    }

    #[test]
    fn rpe_exactly_zero_under_global_offset() {
        let reference = exact_trajectory();
        let offset = PoseSE3::from_translation(Vector3::new(8.0, -4.5, 2.25));
        let est = reference.transformed(&offset);
        let (t, r) = rpe(&est, &reference, 1, 0.02).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn rpe_invariant_to_global_offset_generic() {
        let mut rng = StdRng::seed_from_u64(47);
        let reference = helix(20, 0.1);
        let est = {
            let jittered: Vec<TimedPose> = reference
                .entries()
                .iter()
                .map(|e| {
                    let d = Vector3::new(
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                    );
                    let spin = UnitQuaternion::from_scaled_axis(Vector3::new(
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                        rng.random_range(-0.02..0.02),
                    ));
                    let wiggle = PoseSE3::from_quaternion(spin, Vector3::zeros());
                    timed(
                        e.timestamp,
                        PoseSE3::new(
                            *e.pose.compose(&wiggle).rotation(),
                            e.pose.translation() + d,
                        )
                        .unwrap(),
                    )
                })
                .collect();
            Trajectory::new(jittered).unwrap()
        };
        let baseline = rpe(&est, &reference, 1, 0.02).unwrap();
        let moved = est.transformed(&random_pose(&mut rng));
        let shifted = rpe(&moved, &reference, 1, 0.02).unwrap();
        assert_relative_eq!(baseline.0, shifted.0, epsilon = 1e-9);
        assert_relative_eq!(baseline.1, shifted.1, epsilon = 1e-9);
    }

    /// Matrix-algebra oracle: relative errors recomputed with generic 4x4
    /// inverses instead of the SE(3) closed forms.
    fn rpe_oracle(est: &Trajectory, reference: &Trajectory, delta: usize) -> (f64, f64) {
        let n = est.len() - delta;
        let mut ts = 0.0;
        let mut rs = 0.0;
        for i in 0..n {
            let rel_ref: Matrix4<f64> = reference.get(i).pose.matrix().try_inverse().unwrap()
                * reference.get(i + delta).pose.matrix();
            let rel_est: Matrix4<f64> = est.get(i).pose.matrix().try_inverse().unwrap()
                * est.get(i + delta).pose.matrix();
            let e = rel_ref.try_inverse().unwrap() * rel_est;
            let t = e.fixed_view::<3, 1>(0, 3).norm();
            let r3 = e.fixed_view::<3, 3>(0, 0).into_owned();
            let ang = (((r3.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos();
            ts += t * t;
            rs += ang * ang;
        }
        ((ts / n as f64).sqrt(), (rs / n as f64).sqrt())
    }

    #[test]
    fn rpe_matches_matrix_oracle_on_perturbed_step() {
        let reference = helix(10, 0.1);
        let mut entries: Vec<TimedPose> = reference.entries().to_vec();
        // Perturb a single pose by a known wiggle.
        let wiggle = PoseSE3::from_quaternion(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.02, 0.0)),
            Vector3::new(0.05, 0.0, -0.03),
        );
        entries[4] = timed(entries[4].timestamp, entries[4].pose.compose(&wiggle));
        let est = Trajectory::new(entries).unwrap();
        let got = rpe(&est, &reference, 1, 0.02).unwrap();
        let expected = rpe_oracle(&est, &reference, 1);
        assert!((got.0 - expected.0).abs() < 1e-12);
        assert!((got.1 - expected.1).abs() < 1e-12);
        assert!(got.0 > 1e-3 && got.1 > 1e-3);
    }

    #[test]
    fn rpe_needs_enough_pairs() {
        let a = helix(3, 0.1);
        assert!(matches!(
            rpe(&a, &a, 5, 0.02),
            Err(MetricsError::InsufficientLength { .. })
        ));
    }

    #[test]
    fn rotation_angle_symmetric_under_inverse() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let a = rotation_angle(p.rotation());
            let b = rotation_angle(p.inverse().rotation());
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn kitti_zero_for_identical_trajectories() {
        let a = exact_trajectory();
        let (t, r) = kitti_errors(&a, &a, &[1.0, 2.0], 0.02).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn kitti_straight_line_overshoot() {
        // Constant-speed straight line with dyadic steps; the estimate
        // overshoots every translation by exactly 1%.
        let step = 0.5;
        let n = 41; // 20 m of path
        let reference = Trajectory::new(
            (0..n)
                .map(|i| {
                    timed(
                        i as f64,
                        PoseSE3::from_translation(Vector3::new(i as f64 * step, 0.0, 0.0)),
                    )
                })
                .collect(),
        )
        .unwrap();
        let est = Trajectory::new(
            (0..n)
                .map(|i| {
                    timed(
                        i as f64,
                        PoseSE3::from_translation(Vector3::new(i as f64 * step * 1.01, 0.0, 0.0)),
                    )
                })
                .collect(),
        )
        .unwrap();
        let (t, r) = kitti_errors(&est, &reference, &[4.0, 8.0], 0.02).unwrap();
        assert!((t - 0.01).abs() < 1e-6, "kitti trans = {t}");
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn kitti_path_too_short() {
        let a = helix(5, 0.1);
        assert!(matches!(
            kitti_errors(&a, &a, &[1000.0], 0.02),
            Err(MetricsError::PathTooShort)
        ));
    }

    #[test]
    fn evaluate_reports_all_scores() {
        let a = helix(30, 0.1);
        let options = EvalOptions {
            kitti_lengths: vec![1.0, 2.0],
            ..Default::default()
        };
        let report = evaluate(&a, &a, &options).unwrap();
        assert!(report.ate_rmse <= 1e-12);
        assert!(report.rpe_trans <= 1e-12);
        assert!(report.kitti_trans <= 1e-12);
        assert_relative_eq!(report.alignment.scale, 1.0, epsilon = 1e-12);
    }
}
