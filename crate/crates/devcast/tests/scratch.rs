use devcast::cloud::{PointCloud, Vec3};
use devcast::registration::{coarse_align, icp_align, IcpConfig, RigidTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn probe_criterion1_protocol() {
    let mut worst_rot = 0.0f64;
    let mut worst_tr = 0.0f64;
    let t0 = std::time::Instant::now();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-25.0..25.0),
                    rng.gen_range(-15.0..15.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let target = PointCloud::new(pts.clone(), None, "t").unwrap();
        let diag = target.bounding_box_diagonal();
        let angle = rng.gen_range(0.0..30f64).to_radians();
        let axis = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let t = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize()
            * rng.gen_range(0.0..0.1 * diag);
        let truth = RigidTransform {
            rotation: RigidTransform::from_axis_angle(&(axis + Vec3::new(0.0, 0.0, 1e-6)), angle).rotation,
            translation: t,
        };
        let moved: Vec<Vec3> = pts.iter().map(|p| truth.apply(p)).collect();
        let source = PointCloud::new(moved, None, "s").unwrap();
        let coarse = coarse_align(&source, &target, 45.0);
        let placed = coarse.apply_cloud(&source);
        let (fine, report) = icp_align(&placed, &target, &IcpConfig::default()).unwrap();
        assert!(report.converged, "seed {seed} did not converge");
        let err = fine.compose(&coarse).compose(&truth);
        worst_rot = worst_rot.max(err.rotation_angle_deg());
        worst_tr = worst_tr.max(err.translation.norm());
    }
    println!(
        "20 trials: worst rot {:.2e}°, worst trans {:.2e} mm, total {:?}",
        worst_rot,
        worst_tr,
        t0.elapsed()
    );
    assert!(worst_rot < 0.1 && worst_tr < 1e-3);
}
