//! Rigid alignment: closed-form Procrustes estimation, iterative closest
//! point, and sequential merging of multi-view scans.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Proper rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    /// Validates orthonormality and det = +1 to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if defect > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation not orthonormal (RᵀR − I has norm {defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("rotation determinant {det}, expected +1")));
        }
        Ok(RigidTransform { rotation, translation })
    }

    pub fn from_axis_angle(axis: &Vec3, radians: f64) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            radians,
        )
        .into_inner();
        RigidTransform { rotation, translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Transforms points and rotates normals when present.
    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud.points().iter().map(|p| self.apply(p)).collect();
        let normals = cloud
            .normals()
            .map(|ns| ns.iter().map(|n| self.rotation * n).collect());
        PointCloud::new(points, normals, cloud.source_id())
            .expect("rigid motion preserves cloud invariants")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in degrees, in [0, 180].
    pub fn rotation_angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// Row-major rotation followed by translation, for CSV output.
    pub fn to_row(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    pub fn from_row(row: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            row[0], row[1], row[2],
            row[3], row[4], row[5],
            row[6], row[7], row[8],
        );
        RigidTransform::new(rotation, Vec3::new(row[9], row[10], row[11]))
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when |MSE_k − MSE_{k−1}| falls below this.
    pub convergence_delta: f64,
    /// Correspondences farther than this are rejected. `None` means 5% of the
    /// target bounding-box diagonal, resolved per call.
    pub max_correspondence_distance: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 100,
            convergence_delta: 1e-6,
            max_correspondence_distance: None,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be ≥ 1".into()));
        }
        if !(self.convergence_delta > 0.0) {
            return Err(Error::InvalidArgument("convergence_delta must be > 0".into()));
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(
                    "max_correspondence_distance must be > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcpReport {
    pub final_mse: f64,
    pub iterations_used: usize,
    pub per_iteration_mse: Vec<f64>,
    pub converged: bool,
    /// Accepted pairs in the last iteration.
    pub correspondence_count: usize,
}

/// Least-squares rigid motion mapping `source` onto `target` (equal-length
/// correspondence lists): centroid alignment plus orthogonal Procrustes with
/// determinant-sign correction.
pub fn estimate_rigid(source: &[Vec3], target: &[Vec3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::DimMismatch(format!(
            "correspondence lists differ in length: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} correspondence pairs; rigid estimation needs at least 3",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let cs: Vec3 = source.iter().sum::<Vec3>() / n;
    let ct: Vec3 = target.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = &svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "correspondences span less than two dimensions".into(),
        ));
    }
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        r = v * flip * u.transpose();
    }
    let t = ct - r * cs;
    Ok(RigidTransform { rotation: r, translation: t })
}

/// Point-to-point ICP aligning `source` onto `target`, starting from the
/// identity pose. Correspondences beyond the rejection distance are dropped
/// each iteration; MSE is measured over the accepted set after the update.
pub fn icp_align(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
) -> Result<(RigidTransform, IcpReport)> {
    cfg.validate()?;
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::InvalidArgument("ICP needs at least 3 points per cloud".into()));
    }
    let tree = KdTree::build(target.points())?;
    let max_d = cfg
        .max_correspondence_distance
        .unwrap_or(0.05 * target.bounding_box_diagonal());

    let mut transform = RigidTransform::identity();
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut pair_count = 0usize;

    for _ in 0..cfg.max_iterations {
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for p in source.points() {
            let moved = transform.apply(p);
            let (i, d) = tree.nearest(&moved);
            if d <= max_d {
                src.push(moved);
                tgt.push(target.points()[i]);
            }
        }
        if src.len() < 3 {
            return Err(Error::NoOverlap(src.len() as f64 / source.len() as f64));
        }
        pair_count = src.len();
        let delta = estimate_rigid(&src, &tgt)?;
        transform = delta.compose(&transform);
        let mse = src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| (delta.apply(s) - t).norm_squared())
            .sum::<f64>()
            / src.len() as f64;
        history.push(mse);
        let k = history.len();
        if k >= 2 && (history[k - 2] - history[k - 1]).abs() < cfg.convergence_delta {
            converged = true;
            break;
        }
    }

    let report = IcpReport {
        final_mse: *history.last().expect("at least one iteration ran"),
        iterations_used: history.len(),
        per_iteration_mse: history,
        converged,
        correspondence_count: pair_count,
    };
    Ok((transform, report))
}

#[derive(Debug, Clone)]
pub struct MergeReport {
    /// Per input scan, the motion taking it into the merged frame.
    pub transforms: Vec<RigidTransform>,
    /// Per input scan; scan 0 defines the frame and is trivially converged.
    pub converged: Vec<bool>,
    /// RMS of final-iteration correspondence residuals pooled over all merges.
    pub alignment_rms: f64,
}

/// Merges an acquisition-ordered scan sequence into scan 0's frame. Each scan
/// is coarsely pre-positioned (centroid + principal axes), ICP-refined onto
/// the accumulated cloud, and concatenated. Non-convergence is flagged, not
/// fatal; a no-overlap failure is.
pub fn merge_sequential(scans: &[PointCloud], cfg: &IcpConfig) -> Result<(PointCloud, MergeReport)> {
    let first = scans.first().ok_or_else(|| Error::Empty("no scans to merge".into()))?;
    let mut merged = first.clone();
    let mut transforms = vec![RigidTransform::identity()];
    let mut converged = vec![true];
    let mut sq_sum = 0.0;
    let mut res_count = 0usize;

    for scan in &scans[1..] {
        let coarse = coarse_align(scan, &merged, MERGE_COARSE_ROTATION_LIMIT_DEG);
        let placed = coarse.apply_cloud(scan);
        let (fine, report) = icp_align(&placed, &merged, cfg)?;
        let total = fine.compose(&coarse);
        transforms.push(total);
        converged.push(report.converged);
        sq_sum += report.final_mse * report.correspondence_count as f64;
        res_count += report.correspondence_count;
        merged = concat_clouds(&merged, &total.apply_cloud(scan));
    }

    let alignment_rms = if res_count == 0 { 0.0 } else { (sq_sum / res_count as f64).sqrt() };
    Ok((merged, MergeReport { transforms, converged, alignment_rms }))
}

fn concat_clouds(a: &PointCloud, b: &PointCloud) -> PointCloud {
    let mut points = a.points().to_vec();
    points.extend_from_slice(b.points());
    let normals = match (a.normals(), b.normals()) {
        (Some(na), Some(nb)) => {
            let mut ns = na.to_vec();
            ns.extend_from_slice(nb);
            Some(ns)
        }
        _ => None,
    };
    PointCloud::new(points, normals, a.source_id()).expect("concatenation preserves invariants")
}

/// Right-handed principal-axis frame, eigenvalues descending, axis signs
/// canonicalized so results do not depend on eigensolver conventions.
fn principal_frame(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let c: Vec3 = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = vec![0, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b))
    });
    let mut e1: Vec3 = eig.eigenvectors.column(order[0]).into();
    let mut e2: Vec3 = eig.eigenvectors.column(order[1]).into();
    for e in [&mut e1, &mut e2] {
        let k = (0..3).max_by(|&a, &b| e[a].abs().partial_cmp(&e[b].abs()).unwrap()).unwrap();
        if e[k] < 0.0 {
            *e = -*e;
        }
    }
    let e3 = e1.cross(&e2);
    (c, Matrix3::from_columns(&[e1, e2, e3]))
}

/// Coarse alignment of `scan` to `anchor` ahead of ICP refinement.
///
/// Candidates: keep the incoming frame, translate centroid onto centroid, and
/// the four proper principal-axes pairings (each with centroid-coincident
/// translation). Axes pairings rotating more than `max_rotation_deg` are
/// discarded: on near-symmetric shapes an aggressive pairing can overlay the
/// wrong side with a better nearest-neighbour score than the true pose, and
/// sequential acquisition bounds how far a scan can really be rotated. The
/// surviving candidate with the lowest mean nearest-neighbour distance over a
/// probe subset wins; the identity-rotation candidates are always eligible.
pub fn coarse_align(scan: &PointCloud, anchor: &PointCloud, max_rotation_deg: f64) -> RigidTransform {
    let (cs, fs) = principal_frame(scan.points());
    let (ca, fa) = principal_frame(anchor.points());
    let tree = KdTree::build(anchor.points()).expect("anchor is non-empty");

    let probe: Vec<Vec3> = {
        let stride = (scan.len() / 256).max(1);
        scan.points().iter().step_by(stride).copied().collect()
    };
    let score = |t: &RigidTransform| -> f64 {
        probe.iter().map(|p| tree.nearest(&t.apply(p)).1).sum::<f64>() / probe.len() as f64
    };

    let signs = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let mut best: Option<(f64, RigidTransform)> = None;
    let mut consider = |t: RigidTransform| {
        let s = score(&t);
        if best.as_ref().map_or(true, |(bs, _)| s < *bs) {
            best = Some((s, t));
        }
    };
    consider(RigidTransform::identity());
    consider(RigidTransform { rotation: Matrix3::identity(), translation: ca - cs });
    for d in signs {
        let dm = Matrix3::from_diagonal(&Vec3::new(d[0], d[1], d[2]));
        let r = fa * dm * fs.transpose();
        let cand = RigidTransform { rotation: r, translation: ca - r * cs };
        if cand.rotation_angle_deg() <= max_rotation_deg {
            consider(cand);
        }
    }
    best.expect("identity candidate always scored").1
}

/// Rotation bound for coarse candidates during sequential merging; scans
/// arrive in acquisition order, so larger relative poses indicate a wrong
/// pairing rather than a real motion.
pub const MERGE_COARSE_ROTATION_LIMIT_DEG: f64 = 45.0;
