//! Multi-view scan simulation. Views sit on a ring around the part with
//! alternating elevation; each view sees the chart samples whose outward
//! normal faces the camera and whose line of sight is not blocked by the
//! part itself (tested against the nominal mesh). Scans are expressed in
//! their own slightly-perturbed frames, except view 0 whose frame is the
//! part frame, and carry Gaussian depth noise along the surface normal.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{PointCloud, Vec3};
use crate::deviation::MeshIndex;
use crate::error::{Error, Result};
use crate::registration::RigidTransform;
use crate::synth::field::DeviationField;
use crate::synth::geometry::{sample_surface, NominalPart, SurfaceSample};

#[derive(Debug, Clone)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPlan {
    pub views: usize,
    pub points_per_view: usize,
    /// Depth noise along the surface normal, mm (one sigma).
    pub noise_sigma: f64,
    /// Ring elevation magnitude; views alternate above/below, degrees.
    pub elevation_deg: f64,
    /// Per-view frame perturbation bounds (view 0 is exact).
    pub wobble_deg: f64,
    pub wobble_mm: f64,
    /// Fraction of emitted points displaced far off-surface.
    pub outlier_fraction: f64,
    /// Chart-sample pool density, points per mm² of surface.
    pub pool_density: f64,
    /// Size of the fixed probe set used for coverage accounting.
    pub coverage_probes: usize,
}

impl Default for ScanPlan {
    fn default() -> Self {
        ScanPlan {
            views: 8,
            points_per_view: 4000,
            noise_sigma: 0.002,
            elevation_deg: 35.0,
            wobble_deg: 0.5,
            wobble_mm: 0.3,
            outlier_fraction: 0.002,
            pool_density: 8.0,
            coverage_probes: 2000,
        }
    }
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.views > 32 {
            return Err(Error::InvalidArgument(format!("view count {}", self.views)));
        }
        if self.points_per_view == 0 {
            return Err(Error::InvalidArgument("points_per_view = 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidArgument(format!(
                "outlier fraction {}",
                self.outlier_fraction
            )));
        }
        if self.noise_sigma < 0.0 || self.pool_density <= 0.0 {
            return Err(Error::InvalidArgument("negative noise or density".into()));
        }
        Ok(())
    }
}

/// Unit direction from the part toward camera k of n on the view ring.
pub fn view_direction(k: usize, n: usize, elevation_deg: f64) -> Vec3 {
    let az = std::f64::consts::TAU * k as f64 / n as f64;
    let el = elevation_deg.to_radians() * if k % 2 == 0 { 1.0 } else { -1.0 };
    Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin())
}

#[derive(Debug, Clone)]
pub struct SimulatedScan {
    /// Points in the scan's own frame.
    pub cloud: PointCloud,
    /// Maps scan-frame points into the part frame.
    pub true_pose: RigidTransform,
    /// Noise-free field deviation at each point (outlier offset excluded).
    pub true_deviation: Vec<f64>,
    pub is_outlier: Vec<bool>,
    pub view_direction: Vec3,
}

#[derive(Debug, Clone)]
pub struct ScanSet {
    pub scans: Vec<SimulatedScan>,
    /// Per-probe visibility bitmask over views (bit k = seen by view k).
    pub probe_masks: Vec<u32>,
    /// Fraction of probes seen by at least one view.
    pub coverage: f64,
}

impl ScanSet {
    /// Coverage of the prefix views 0..k; nondecreasing in k because the
    /// union of visible sets only grows.
    pub fn coverage_at(&self, k: usize) -> f64 {
        if self.probe_masks.is_empty() {
            return 0.0;
        }
        let mask = if k >= 32 { u32::MAX } else { (1u32 << k) - 1 };
        let seen = self.probe_masks.iter().filter(|m| **m & mask != 0).count();
        seen as f64 / self.probe_masks.len() as f64
    }
}

/// Backface threshold: a sample must face the camera at least this much.
const FACING_MIN: f64 = 0.15;
/// Occlusion rays start this far out to skip the sample's own tessellation
/// neighborhood (well above the chordal gap, well below any real occluder).
const RAY_SKIP: f64 = 0.05;

fn visible(index: &MeshIndex, s: &SurfaceSample, dir: &Vec3) -> bool {
    if s.normal.dot(dir) <= FACING_MIN {
        return false;
    }
    !index.ray_hits(&s.point, dir, RAY_SKIP, 1e9)
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Simulates all views of one part. Deterministic given the RNG state.
pub fn simulate_scans<R: Rng>(
    part: &NominalPart,
    field: &DeviationField,
    plan: &ScanPlan,
    rng: &mut R,
) -> Result<ScanSet> {
    plan.validate()?;
    let index = MeshIndex::build(&part.mesh);
    let total_area: f64 =
        crate::synth::geometry::region_areas(&part.spec).iter().map(|(_, a)| a).sum();
    let pool_size = ((total_area * plan.pool_density) as usize).max(plan.points_per_view);

    // Fixed draws first so pool and probes do not shift with plan.views.
    let probes = sample_surface(&part.spec, plan.coverage_probes, rng);
    let pool = sample_surface(&part.spec, pool_size, rng);

    let dirs: Vec<Vec3> =
        (0..plan.views).map(|k| view_direction(k, plan.views, plan.elevation_deg)).collect();

    let mut probe_masks = vec![0u32; probes.len()];
    for (k, dir) in dirs.iter().enumerate() {
        for (i, probe) in probes.iter().enumerate() {
            if visible(&index, probe, dir) {
                probe_masks[i] |= 1 << k;
            }
        }
    }
    let coverage =
        probe_masks.iter().filter(|m| **m != 0).count() as f64 / probe_masks.len().max(1) as f64;

    let noise = Normal::new(0.0, plan.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;

    let mut scans = Vec::with_capacity(plan.views);
    for (k, dir) in dirs.iter().enumerate() {
        let vis: Vec<&SurfaceSample> = pool.iter().filter(|s| visible(&index, s, dir)).collect();
        if vis.is_empty() {
            return Err(Error::Degenerate(format!(
                "view {k} of {} sees no surface",
                part.part_type.name()
            )));
        }
        let take = plan.points_per_view.min(vis.len());
        // Evenly strided subset keeps the per-view distribution area-like
        // without extra randomness.
        let chosen = (0..take).map(|j| vis[j * vis.len() / take]);

        let pose = if k == 0 {
            RigidTransform::identity()
        } else {
            let axis = random_unit(rng);
            let angle = rng.gen_range(0.0..plan.wobble_deg.to_radians());
            let shift = random_unit(rng) * rng.gen_range(0.0..plan.wobble_mm);
            let mut t = RigidTransform::from_axis_angle(&axis, angle);
            t.translation = shift;
            t
        };
        let inv = pose.inverse();

        let mut points = Vec::with_capacity(take);
        let mut normals = Vec::with_capacity(take);
        let mut true_deviation = Vec::with_capacity(take);
        let mut is_outlier = Vec::with_capacity(take);
        for s in chosen {
            let d_true = field.eval(s);
            let mut d = d_true + noise.sample(rng);
            let outlier = plan.outlier_fraction > 0.0 && rng.gen::<f64>() < plan.outlier_fraction;
            if outlier {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                d += sign * rng.gen_range(1.0..3.0);
            }
            let actual = s.point + s.normal * d;
            points.push(inv.apply(&actual));
            normals.push(inv.rotation * s.normal);
            true_deviation.push(d_true);
            is_outlier.push(outlier);
        }
        let cloud = PointCloud::new(points, Some(normals), format!("view-{k:02}"))?;
        scans.push(SimulatedScan {
            cloud,
            true_pose: pose,
            true_deviation,
            is_outlier,
            view_direction: *dir,
        });
    }
    Ok(ScanSet { scans, probe_masks, coverage })
}
