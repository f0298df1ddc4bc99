//! Least-squares primitive fits and the form/surface metrics derived from
//! their residual bands. Form errors use the least-squares reference surface,
//! not the Chebyshev minimum zone; the difference is a documented
//! approximation.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2};

use crate::cloud::Vec3;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub point: Vec3,
    pub normal: Vec3,
    /// max − min signed residual.
    pub flatness: f64,
    pub rms_residual: f64,
}

impl PlaneFit {
    pub fn residual(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

#[derive(Debug, Clone)]
pub struct CircleFit {
    pub center: Vector2<f64>,
    pub radius: f64,
    /// max − min radial distance.
    pub roundness: f64,
}

#[derive(Debug, Clone)]
pub struct CylinderFit {
    pub axis_point: Vec3,
    pub axis_dir: Vec3,
    pub radius: f64,
    /// max − min radial distance from the fitted axis.
    pub cylindricity: f64,
}

impl CylinderFit {
    pub fn radial_distance(&self, p: &Vec3) -> f64 {
        (p - self.axis_point).cross(&self.axis_dir).norm()
    }
}

fn centered_covariance(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let c: Vec3 = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    (c, cov / n)
}

/// Eigenpairs of the covariance sorted by descending eigenvalue, vectors
/// sign-canonicalized (largest-magnitude component positive).
fn sorted_eigenvectors(cov: &Matrix3<f64>) -> [(f64, Vec3); 3] {
    let eig = SymmetricEigen::new(*cov);
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|i| (eig.eigenvalues[i], Vec3::from(eig.eigenvectors.column(i))))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (_, v) in pairs.iter_mut() {
        let k = (0..3).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
        if v[k] < 0.0 {
            *v = -*v;
        }
    }
    [pairs[0], pairs[1], pairs[2]]
}

/// Inverse-iteration polish of the smallest-eigenvalue direction. The
/// iterative eigen solver can leave ~1e-9 error in the normal when the two
/// in-plane variances are nearly equal; the smallest eigenvalue stays well
/// isolated, so a couple of shifted solves reach machine precision.
fn refine_smallest(cov: &Matrix3<f64>, v0: Vec3) -> Vec3 {
    let mut v = v0.normalize();
    let scale = cov.trace().max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        let lambda = (v.transpose() * cov * v)[(0, 0)];
        // Shift a hair off the eigenvalue so the system stays solvable.
        let m = cov - Matrix3::identity() * (lambda - 1e-13 * scale);
        let Some(w) = m.lu().solve(&v) else { break };
        let n = w.norm();
        if !n.is_finite() || n == 0.0 {
            break;
        }
        let w = w / n;
        // Keep the orientation of the starting vector.
        v = if w.dot(&v) >= 0.0 { w } else { -w };
    }
    v
}

/// Total-least-squares plane: centroid plus the smallest-variance direction
/// of the centered covariance. Flatness is the signed residual band.
pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("plane fit needs ≥ 3 points, got {}", points.len())));
    }
    let (c, cov) = centered_covariance(points);
    let eig = sorted_eigenvectors(&cov);
    // Collinear input: the two smallest variances both vanish.
    if eig[1].0 <= 1e-18 * eig[0].0.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("plane fit input is collinear".into()));
    }
    let mut normal = refine_smallest(&cov, eig[2].1);
    // Sign canonicalization: largest-magnitude component positive.
    let k = (0..3).max_by(|&a, &b| normal[a].abs().partial_cmp(&normal[b].abs()).unwrap()).unwrap();
    if normal[k] < 0.0 {
        normal = -normal;
    }
    let fit = PlaneFit { point: c, normal, flatness: 0.0, rms_residual: 0.0 };
    let (mut lo, mut hi, mut ss) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for p in points {
        let r = fit.residual(p);
        lo = lo.min(r);
        hi = hi.max(r);
        ss += r * r;
    }
    Ok(PlaneFit {
        flatness: hi - lo,
        rms_residual: (ss / points.len() as f64).sqrt(),
        ..fit
    })
}

/// Algebraic least-squares circle (linearized center/radius solve) over 2D
/// points; roundness is the radial band against the fitted circle.
pub fn fit_circle_2d(points: &[Vector2<f64>]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("circle fit needs ≥ 3 points, got {}", points.len())));
    }
    let n = points.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        a[(i, 0)] = 2.0 * p.x;
        a[(i, 1)] = 2.0 * p.y;
        a[(i, 2)] = 1.0;
        b[i] = p.x * p.x + p.y * p.y;
    }
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * max_sv {
        return Err(Error::Degenerate("circle fit input is collinear".into()));
    }
    let x = svd.solve(&b, 0.0).expect("svd computed with u and v_t");
    let center = Vector2::new(x[0], x[1]);
    let r2 = x[2] + center.norm_squared();
    if r2 <= 0.0 {
        return Err(Error::Degenerate("circle fit produced a non-positive radius".into()));
    }
    let radius = r2.sqrt();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let r = (p - center).norm();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(CircleFit { center, radius, roundness: hi - lo })
}

const CYL_MAX_ITERATIONS: usize = 200;
const CYL_STEP_TOL: f64 = 1e-12;

/// Least-squares cylinder by damped Gauss-Newton over (axis point, axis
/// direction, radius), the direction renormalized each step. Axis seeds are
/// the three covariance eigenvectors (a short cylinder's largest variance is
/// circumferential, a long one's is axial) plus a fixed icosahedral
/// direction set, because a near-equal height/radius aspect makes the
/// covariance spectrum degenerate and its eigenvectors arbitrary. The
/// converged candidate with the smallest residual wins. Requires ≥ 90° of
/// angular coverage around the fitted axis.
pub fn fit_cylinder(points: &[Vec3]) -> Result<CylinderFit> {
    if points.len() < 6 {
        return Err(Error::Degenerate(format!(
            "cylinder fit needs ≥ 6 points, got {}",
            points.len()
        )));
    }
    let (c, cov) = centered_covariance(points);
    let eig = sorted_eigenvectors(&cov);

    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let ico = [
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    let seeds = eig.iter().map(|(_, v)| *v).chain(ico.into_iter().map(|v| v.normalize()));

    let mut best: Option<(f64, CylinderFit)> = None;
    let mut last_residual = f64::INFINITY;
    for axis in seeds {
        match refine_cylinder(points, &c, &axis) {
            Ok((ssr, fit)) => {
                if best.as_ref().map_or(true, |(b, _)| ssr < *b) {
                    best = Some((ssr, fit));
                }
            }
            Err(res) => last_residual = last_residual.min(res),
        }
    }
    let (_, fit) = best.ok_or(Error::NoConvergence {
        op: "fit_cylinder",
        iterations: CYL_MAX_ITERATIONS,
        residual: last_residual,
    })?;
    if fit.radius <= 0.0 {
        return Err(Error::Degenerate("cylinder fit produced a non-positive radius".into()));
    }
    if angular_spread_deg(points, &fit) < 90.0 {
        return Err(Error::Degenerate(
            "points cover less than 90° around the fitted cylinder axis".into(),
        ));
    }
    Ok(fit)
}

/// Arc of directions covered by the points around the fitted axis, in
/// degrees: 360 minus the largest angular gap.
pub fn angular_spread_deg(points: &[Vec3], fit: &CylinderFit) -> f64 {
    let w = fit.axis_dir;
    let seed = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - w * seed.dot(&w)).normalize();
    let e2 = w.cross(&e1);
    let mut angles: Vec<f64> = points
        .iter()
        .map(|p| {
            let u = p - fit.axis_point;
            u.dot(&e2).atan2(u.dot(&e1))
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut max_gap = angles[0] + two_pi - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    (two_pi - max_gap).to_degrees()
}

/// Damped Gauss-Newton refinement from one axis seed. Returns the sum of
/// squared residuals and the fit, or the last residual on failure.
fn refine_cylinder(
    points: &[Vec3],
    centroid: &Vec3,
    axis_seed: &Vec3,
) -> std::result::Result<(f64, CylinderFit), f64> {
    let n = points.len();
    let mut c = *centroid;
    let mut w = axis_seed.normalize();
    let mut r = {
        let mean: f64 =
            points.iter().map(|p| (p - c).cross(&w).norm()).sum::<f64>() / n as f64;
        mean.max(1e-9)
    };

    let mut lambda = 1e-6;
    let mut current = cyl_ssr(points, &c, &w, r);
    let mut last_step = f64::INFINITY;
    for _ in 0..CYL_MAX_ITERATIONS {
        let (jtj, jte) = cyl_normal_equations(points, &c, &w, r);
        let mut accepted = false;
        for _ in 0..14 {
            let Some((nc, nw, nr, step)) = cyl_apply_step(&jtj, &jte, lambda, &c, &w, r) else {
                lambda *= 10.0;
                continue;
            };
            let next = cyl_ssr(points, &nc, &nw, nr);
            if next.is_finite() && next <= current * (1.0 + 1e-15) {
                c = nc;
                w = nw;
                r = nr;
                current = next;
                last_step = step;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                // Step size is the convergence signal; a residual stall alone
                // only raises the damping until the step collapses too.
                if step < CYL_STEP_TOL * (1.0 + r.abs()) {
                    return Ok(polished_result(points, c, w, r, current));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // Damping wall: no step improves the objective, so this is a
            // numerical minimum for the seed. Candidate selection discards
            // seeds that stalled high.
            return Ok(polished_result(points, c, w, r, current));
        }
    }
    // Iteration cap. Micro-steps at the cap mean the run stagnated at the
    // objective's float-noise floor, which is convergence in practice; a
    // still-moving run genuinely failed.
    if last_step < 1e-6 * (1.0 + r.abs()) {
        return Ok(polished_result(points, c, w, r, current));
    }
    Err(current)
}

fn cyl_ssr(points: &[Vec3], c: &Vec3, w: &Vec3, r: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let e = (p - c).cross(w).norm() - r;
            e * e
        })
        .sum()
}

/// Stable tangent basis perpendicular to w.
fn tangent_basis(w: &Vec3) -> (Vec3, Vec3) {
    let seed = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - w * seed.dot(w)).normalize();
    (e1, w.cross(&e1))
}

/// Normal equations in the reduced 5-parameter chart at (c, w, r): axis
/// point moves in the plane ⊥ w, the direction in its tangent plane, plus
/// the radius. The chart removes the axis-slide and ‖w‖-gauge null
/// directions, so the system is nonsingular at a proper cylinder.
fn cyl_normal_equations(
    points: &[Vec3],
    c: &Vec3,
    w: &Vec3,
    r: f64,
) -> (nalgebra::SMatrix<f64, 5, 5>, nalgebra::SVector<f64, 5>) {
    let (e1, e2) = tangent_basis(w);
    let mut jtj = nalgebra::SMatrix::<f64, 5, 5>::zeros();
    let mut jte = nalgebra::SVector::<f64, 5>::zeros();
    for p in points {
        let u = p - c;
        let v = u - w * u.dot(w);
        let d = v.norm();
        if d < 1e-15 {
            continue;
        }
        let e = d - r;
        let dv = v / d;
        let gw = u * (-u.dot(w) / d);
        let row = nalgebra::SVector::<f64, 5>::from([
            -dv.dot(&e1),
            -dv.dot(&e2),
            gw.dot(&e1),
            gw.dot(&e2),
            -1.0,
        ]);
        jtj += row * row.transpose();
        jte += row * e;
    }
    (jtj, jte)
}

fn cyl_apply_step(
    jtj: &nalgebra::SMatrix<f64, 5, 5>,
    jte: &nalgebra::SVector<f64, 5>,
    lambda: f64,
    c: &Vec3,
    w: &Vec3,
    r: f64,
) -> Option<(Vec3, Vec3, f64, f64)> {
    let damped = jtj + nalgebra::SMatrix::<f64, 5, 5>::identity() * lambda;
    let delta = damped.cholesky()?.solve(&(-jte));
    let (e1, e2) = tangent_basis(w);
    let nc = c + e1 * delta[0] + e2 * delta[1];
    let nw = (w + e1 * delta[2] + e2 * delta[3]).normalize();
    let nr = r + delta[4];
    Some((nc, nw, nr, delta.norm()))
}

/// A few undamped Gauss-Newton steps from a converged state. Acceptance-free
/// polishing sidesteps the objective's float-noise floor (quadratic
/// contraction reaches machine precision where residual comparisons cannot),
/// and is reverted if it somehow increased the residual.
fn polished_result(points: &[Vec3], c: Vec3, w: Vec3, r: f64, current: f64) -> (f64, CylinderFit) {
    let (mut pc, mut pw, mut pr) = (c, w, r);
    for _ in 0..3 {
        let (jtj, jte) = cyl_normal_equations(points, &pc, &pw, pr);
        let Some((nc, nw, nr, _)) = cyl_apply_step(&jtj, &jte, 1e-14, &pc, &pw, pr) else {
            break;
        };
        pc = nc;
        pw = nw;
        pr = nr;
    }
    let polished = cyl_ssr(points, &pc, &pw, pr);
    if polished.is_finite() && polished <= current * (1.0 + 1e-12) {
        (polished, finished_cylinder(points, pc, pw, pr))
    } else {
        (current, finished_cylinder(points, c, w, r))
    }
}

fn finished_cylinder(points: &[Vec3], c: Vec3, w: Vec3, r: f64) -> CylinderFit {
    // Canonical axis point: centroid's projection onto the axis; canonical
    // sign: largest-magnitude component positive.
    let n = points.len() as f64;
    let centroid: Vec3 = points.iter().sum::<Vec3>() / n;
    let mut w = w;
    let k = (0..3).max_by(|&a, &b| w[a].abs().partial_cmp(&w[b].abs()).unwrap()).unwrap();
    if w[k] < 0.0 {
        w = -w;
    }
    let axis_point = c + w * (centroid - c).dot(&w);
    let fit = CylinderFit { axis_point, axis_dir: w, radius: r.abs(), cylindricity: 0.0 };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let d = fit.radial_distance(p);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    CylinderFit { cylindricity: hi - lo, ..fit }
}

/// Ra and Rz over an ordered residual profile: Ra is the mean absolute
/// deviation from the profile mean; Rz averages the peak-to-valley height of
/// `segments` equal contiguous segments.
pub fn surface_roughness(residuals: &[f64], segments: usize) -> Result<(f64, f64)> {
    if segments < 1 {
        return Err(Error::InvalidArgument("segment count must be ≥ 1".into()));
    }
    if residuals.len() < 5 * segments {
        return Err(Error::InvalidArgument(format!(
            "roughness needs ≥ {} samples for {} segments, got {}",
            5 * segments,
            segments,
            residuals.len()
        )));
    }
    let n = residuals.len();
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let ra = residuals.iter().map(|r| (r - mean).abs()).sum::<f64>() / n as f64;
    let mut rz = 0.0;
    for s in 0..segments {
        let start = s * n / segments;
        let end = (s + 1) * n / segments;
        let seg = &residuals[start..end];
        let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rz += hi - lo;
    }
    Ok((ra, rz / segments as f64))
}

/// Reduced pose of a fitted primitive for relational metrics: a center and a
/// unit direction (plane normal, cylinder axis, or section-circle axis).
#[derive(Debug, Clone)]
pub struct FitFrame {
    pub id: String,
    pub center: Vec3,
    pub direction: Vec3,
}

impl FitFrame {
    pub fn new(id: impl Into<String>, center: Vec3, direction: Vec3) -> Self {
        FitFrame { id: id.into(), center, direction: direction.normalize() }
    }
}

/// For each declared pair (a, b): center distance, direction angle folded to
/// [0°, 90°], and the signed offset of b's center along a's direction.
/// Output ids: `rel_<a>_<b>_{distance,angle_deg,offset}`.
pub fn relational_features(
    frames: &[FitFrame],
    pairs: &[(String, String)],
) -> Result<Vec<(String, f64)>> {
    let lookup = |id: &str| -> Result<&FitFrame> {
        frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::MissingFeature(format!("relational pair references unknown fit '{id}'")))
    };
    let mut out = Vec::with_capacity(pairs.len() * 3);
    for (a_id, b_id) in pairs {
        let a = lookup(a_id)?;
        let b = lookup(b_id)?;
        let sep = b.center - a.center;
        let angle = a.direction.dot(&b.direction).abs().clamp(0.0, 1.0).acos().to_degrees();
        out.push((format!("rel_{a_id}_{b_id}_distance"), sep.norm()));
        out.push((format!("rel_{a_id}_{b_id}_angle_deg"), angle));
        out.push((format!("rel_{a_id}_{b_id}_offset"), sep.dot(&a.direction)));
    }
    Ok(out)
}
