//! Timing-sensitive acceptance criterion, isolated in its own test binary
//! so parallel sibling tests cannot inflate the measurement.

use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};

use semvox::geometry::{backproject_frame, BackprojectOptions, CameraIntrinsics, PoseSE3};
use semvox::grid::DepthMap;

/// One full 640x480 frame (307,200 pixels) back-projects in at most 20 ms
/// single-threaded. The measured time is printed for CI logs.
#[test]
fn criterion_03_projection_throughput() {
    let k = CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap();
    let pose = PoseSE3::from_quaternion(
        UnitQuaternion::from_scaled_axis(Vector3::new(0.4, -0.2, 0.7)),
        Vector3::new(1.5, -2.0, 0.25),
    );
    let depth = DepthMap::filled(640, 480, 4.25);
    let opts = BackprojectOptions::default();

    // Constant-depth sanity: all 307,200 pixels survive and sit on the
    // z = 4.25 plane in the camera frame.
    let identity = backproject_frame(&k, &PoseSE3::identity(), &depth, &opts).unwrap();
    assert_eq!(identity.len(), 307_200);
    for i in (0..identity.len()).step_by(4801) {
        assert!((identity.point(i).z - 4.25).abs() < 1e-12);
    }

    let mut best = f64::INFINITY;
    for _ in 0..10 {
        let t = Instant::now();
        let batch = backproject_frame(&k, &pose, &depth, &opts).unwrap();
        let ms = t.elapsed().as_secs_f64() * 1e3;
        assert_eq!(batch.len(), 307_200);
        best = best.min(ms);
    }
    assert!(best <= 20.0, "projection took {best:.3} ms, budget 20 ms");
    println!("PASS projection throughput: 640x480 in {best:.3} ms (budget 20 ms)");
}
