use nalgebra::{Matrix3, Point2, Point3, Vector3};
use proptest::prelude::*;

use fluororeg::geometry::*;

const TAU: f64 = 2.0 * std::f64::consts::PI;

fn vec3(range: std::ops::Range<f64>) -> impl Strategy<Value = Vector3<f64>> {
    (range.clone(), range.clone(), range).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn expm(k: &Matrix3<f64>) -> Matrix3<f64> {
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for n in 1..30 {
        term = term * k / n as f64;
        sum += term;
    }
    sum
}

proptest! {
    #[test]
    fn rotations_are_orthonormal(r in vec3(-TAU..TAU)) {
        let m = rodrigues(&r).unwrap();
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-10);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn negated_vector_inverts(r in vec3(-TAU..TAU)) {
        let m = rodrigues(&r).unwrap() * rodrigues(&-r).unwrap();
        prop_assert!((m - Matrix3::identity()).norm() < 1e-9);
    }

    #[test]
    fn matches_matrix_exponential(r in vec3(-2.0..2.0)) {
        prop_assert!((rodrigues(&r).unwrap() - expm(&skew(&r))).norm() < 1e-10);
    }

    #[test]
    fn transforms_are_rigid(
        r in vec3(-TAU..TAU),
        t in vec3(-500.0..500.0),
        a in vec3(-300.0..300.0),
        b in vec3(-300.0..300.0),
    ) {
        let pose = Pose::new(r, t);
        let (a, b) = (Point3::from(a), Point3::from(b));
        let d = (transform_point(&pose, &a).unwrap() - transform_point(&pose, &b).unwrap()).norm();
        prop_assert!((d - (a - b).norm()).abs() < 1e-9);
    }

    #[test]
    fn projection_is_constant_along_rays(
        x in -200.0..200.0f64,
        y in -200.0..200.0f64,
        z in 1.0..2000.0f64,
        lambda in 0.01..50.0f64,
    ) {
        let intr = CameraIntrinsics::default();
        let p = Point3::new(x, y, z);
        let a = project_point(&intr, &p);
        let b = project_point(&intr, &Point3::from(p.coords * lambda));
        prop_assert!((a - b).norm() < 1e-9 * (1.0 + a.coords.norm()));
    }

    #[test]
    fn frame_round_trip(u in -1000.0..1500.0f64, v in -1000.0..1500.0f64) {
        let set = LandmarkSet2D::new(vec![Point2::new(u, v)]).unwrap();
        let back = registration_to_detector(&detector_to_registration(&set, 512.0, 768.0).unwrap(), 512.0, 768.0).unwrap();
        prop_assert!((back.points()[0] - set.points()[0]).norm() < 1e-12);
    }

    #[test]
    fn voxel_to_world_is_affine(
        a in vec3(0.0..512.0),
        b in vec3(0.0..512.0),
        alpha in 0.0..1.0f64,
    ) {
        let frame = VolumeFrame { center: [256.0, 256.0, 128.0], spacing: [0.8, 0.8, 1.5], vtd: 510.0 };
        let mix = Point3::from(a * alpha + b * (1.0 - alpha));
        let w = voxel_to_world(&[Point3::from(a), Point3::from(b), mix], &frame).unwrap();
        let p = w.points();
        let expect = p[0].coords * alpha + p[1].coords * (1.0 - alpha);
        prop_assert!((p[2].coords - expect).norm() < 1e-9);
    }
}

#[test]
fn quarter_turn_and_identity() {
    assert_eq!(rodrigues(&Vector3::zeros()).unwrap(), Matrix3::identity());
    let m = rodrigues(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
    let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert!((m - expect).norm() < 1e-15);
    assert!(rodrigues(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
}

#[test]
fn transform_point_examples() {
    let p = Point3::new(1.0, 2.0, 3.0);
    assert_eq!(transform_point(&Pose::identity(), &p).unwrap(), p);
    let shifted = Pose::from_array([0.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
    assert_eq!(transform_point(&shifted, &p).unwrap(), Point3::new(11.0, 2.0, 3.0));
    let turn = Pose::from_array([0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]);
    let q = transform_point(&turn, &Point3::new(1.0, 0.0, 0.0)).unwrap();
    assert!((q - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn projection_examples() {
    let intr = CameraIntrinsics::default();
    assert_eq!(intr.focal_length(), 2040.0);
    assert_eq!(project_point(&intr, &Point3::new(0.0, 0.0, 1020.0)), Point2::new(384.0, 384.0));
    let q = project_point(&intr, &Point3::new(51.0, 0.0, 1020.0));
    assert!((q - Point2::new(486.0, 384.0)).norm() < 1e-12);
    let clamped = project_point(&intr, &Point3::new(1.0, 1.0, 1e-6));
    assert!(clamped.x.is_finite() && clamped.y.is_finite());
    assert_eq!(clamped, project_point(&intr, &Point3::new(1.0, 1.0, 1e-3)));
}

#[test]
fn principal_ray_lands_on_registration_origin() {
    let intr = CameraIntrinsics::default();
    let on_axis = LandmarkSet3D::new(vec![Point3::new(0.0, 800.0, 0.0)]).unwrap();
    let l = project_landmarks(&Pose::identity(), &intr, &on_axis).unwrap();
    assert_eq!(l.points()[0], Point2::origin());
}

#[test]
fn project_landmarks_is_pointwise_composition() {
    let intr = CameraIntrinsics::default();
    let l3 = fluororeg::synthesis::pelvis_fixture();
    let pose = Pose::from_degrees([12.0, -7.0, 30.0], [5.0, -20.0, 14.0]);
    let l2 = project_landmarks(&pose, &intr, &l3).unwrap();
    assert_eq!(l2.len(), l3.len());
    for (p, q) in l3.points().iter().zip(l2.points()) {
        let w = transform_point(&pose, p).unwrap();
        // world y is the optical axis, world z points up the detector
        let uv = project_point(&intr, &Point3::new(w.x, -w.z, w.y));
        let expect = Point2::new(uv.x - 384.0, -(uv.y - 384.0));
        assert!((q - expect).norm() < 1e-9);
    }
}

#[test]
fn voxel_to_world_examples() {
    let zero = VolumeFrame { center: [0.0; 3], spacing: [1.0; 3], vtd: 0.0 };
    let p = Point3::new(3.0, -4.0, 5.5);
    assert_eq!(voxel_to_world(&[p], &zero).unwrap().points()[0], p);
    let c = VolumeFrame { center: [10.0, 20.0, 30.0], spacing: [0.5; 3], vtd: 0.0 };
    let at_center = voxel_to_world(&[Point3::new(10.0, 20.0, 30.0)], &c).unwrap();
    assert_eq!(at_center.points()[0], Point3::origin());
    let frame = VolumeFrame { center: [256.0, 256.0, 128.0], spacing: [0.8, 0.8, 1.5], vtd: 510.0 };
    let w = voxel_to_world(&[Point3::new(260.0, 300.0, 150.0)], &frame).unwrap();
    assert!((w.points()[0] - Point3::new(3.2, 545.2, 33.0)).norm() < 1e-9);
    let bad = VolumeFrame { spacing: [0.0, 1.0, 1.0], ..frame };
    assert!(voxel_to_world(&[p], &bad).is_err());
}

#[test]
fn detector_to_registration_examples() {
    let set = LandmarkSet2D::new(vec![Point2::new(256.0, 256.0), Point2::new(0.0, 0.0)]).unwrap();
    let r = detector_to_registration(&set, 512.0, 768.0).unwrap();
    assert_eq!(r.points()[0].coords.norm(), 0.0);
    assert_eq!(r.points()[1], Point2::new(-384.0, 384.0));
    let same = LandmarkSet2D::new(vec![Point2::new(384.0, 384.0)]).unwrap();
    assert_eq!(detector_to_registration(&same, 768.0, 768.0).unwrap().points()[0].coords.norm(), 0.0);
    assert!(detector_to_registration(&set, 0.0, 768.0).is_err());
}

#[test]
fn degenerate_landmark_sets_are_rejected() {
    let line = LandmarkSet3D::new((0..5).map(|i| Point3::new(i as f64, 800.0, 0.0)).collect()).unwrap();
    assert!(line.check_registrable(1e-6).is_err());
    let two = LandmarkSet3D::new(vec![Point3::origin(), Point3::new(1.0, 2.0, 3.0)]).unwrap();
    assert!(two.check_registrable(1e-6).is_err());
    assert!(LandmarkSet3D::new(vec![Point3::new(f64::INFINITY, 0.0, 0.0)]).is_err());
    assert!(CameraIntrinsics::new(0.0, 0.5, [0.0, 0.0], [10, 10]).is_err());
    assert!(CameraIntrinsics::new(1020.0, 0.5, [0.0, 0.0], [0, 10]).is_err());
}
