//! Signed deviation of measured points against the nominal mesh: exact
//! closest-point queries, the voxelized deviation map, and regional
//! deviation statistics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::{PointCloud, TriangleMesh, Vec3};
use crate::error::{Error, Result};

/// Exact closest point on one triangle (vertex, edge, and interior regions
/// resolved case by case).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Globally closest point on the mesh by exhaustive triangle scan; ties go to
/// the lowest triangle id. This is the reference the accelerated index must
/// match exactly.
pub fn closest_point_on_mesh(mesh: &TriangleMesh, q: &Vec3) -> (Vec3, Vec3, usize) {
    let mut best = (f64::INFINITY, Vec3::zeros(), 0usize);
    for (id, _) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.triangle_vertices(id);
        let foot = closest_point_on_triangle(q, &a, &b, &c);
        let d2 = (q - foot).norm_squared();
        if d2 < best.0 {
            best = (d2, foot, id);
        }
    }
    (best.1, mesh.triangle_normals()[best.2], best.2)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    fn dist2(&self, q: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let d = (self.min[i] - q[i]).max(0.0).max(q[i] - self.max[i]);
            d2 += d * d;
        }
        d2
    }

    /// Slab test: does the ray o + t·d intersect the box for t in
    /// [t_min, t_max]?
    fn ray_intersects(&self, o: &Vec3, d: &Vec3, t_min: f64, t_max: f64) -> bool {
        let (mut lo, mut hi) = (t_min, t_max);
        for i in 0..3 {
            if d[i].abs() < 1e-300 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[i];
            let (mut a, mut b) = ((self.min[i] - o[i]) * inv, (self.max[i] - o[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            lo = lo.max(a);
            hi = hi.min(b);
            if lo > hi {
                return false;
            }
        }
        true
    }
}

/// Watertight-enough ray/triangle test (Möller-Trumbore); returns the ray
/// parameter t of the hit if it lies in [t_min, t_max].
fn ray_triangle(o: &Vec3, d: &Vec3, tri: &[Vec3; 3], t_min: f64, t_max: f64) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri[0];
    let u = s.dot(&p) * inv;
    if !(-1e-9..=1.0 + 1e-9).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < -1e-9 || u + v > 1.0 + 1e-9 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t_min..=t_max).contains(&t).then_some(t)
}

#[derive(Debug, Clone, Copy)]
struct BvhNode {
    bounds: Aabb,
    // Interior: left/right are child node ids. Leaf: left = -1, range into
    // the ordered triangle list.
    left: i32,
    right: i32,
    start: u32,
    count: u32,
}

/// Bounding-volume hierarchy over a mesh's triangles for repeated
/// closest-point queries. Self-contained copy of the triangle data, so the
/// index cannot drift out of sync with the mesh it came from.
#[derive(Debug, Clone)]
pub struct MeshIndex {
    tris: Vec<[Vec3; 3]>,
    normals: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<BvhNode>,
    root: usize,
}

const LEAF_SIZE: usize = 8;

impl MeshIndex {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> =
            (0..mesh.triangles().len()).map(|i| mesh.triangle_vertices(i)).collect();
        let normals = mesh.triangle_normals().to_vec();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_bvh(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        MeshIndex { tris, normals, order, nodes, root }
    }

    pub fn closest_point(&self, q: &Vec3) -> (Vec3, Vec3, usize) {
        let mut best = (f64::INFINITY, Vec3::zeros(), usize::MAX);
        self.query(self.root, q, &mut best);
        (best.1, self.normals[best.2], best.2)
    }

    /// True when the ray origin + t·dir hits any triangle with t in
    /// [t_min, t_max]. Used for binary occlusion tests.
    pub fn ray_hits(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> bool {
        self.ray_query(self.root, origin, dir, t_min, t_max)
    }

    fn ray_query(&self, node: usize, o: &Vec3, d: &Vec3, t_min: f64, t_max: f64) -> bool {
        let n = self.nodes[node];
        if !n.bounds.ray_intersects(o, d, t_min, t_max) {
            return false;
        }
        if n.left < 0 {
            return self.order[n.start as usize..(n.start + n.count) as usize]
                .iter()
                .any(|&id| ray_triangle(o, d, &self.tris[id as usize], t_min, t_max).is_some());
        }
        self.ray_query(n.left as usize, o, d, t_min, t_max)
            || self.ray_query(n.right as usize, o, d, t_min, t_max)
    }

    fn query(&self, node: usize, q: &Vec3, best: &mut (f64, Vec3, usize)) {
        let n = self.nodes[node];
        if n.left < 0 {
            for &id in &self.order[n.start as usize..(n.start + n.count) as usize] {
                let t = &self.tris[id as usize];
                let foot = closest_point_on_triangle(q, &t[0], &t[1], &t[2]);
                let d2 = (q - foot).norm_squared();
                let id = id as usize;
                if d2 < best.0 || (d2 == best.0 && id < best.2) {
                    *best = (d2, foot, id);
                }
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = self.nodes[l].bounds.dist2(q);
        let dr = self.nodes[r].bounds.dist2(q);
        let (first, second, d_second) = if dl <= dr { (l, r, dr) } else { (r, l, dl) };
        if self.nodes[first].bounds.dist2(q) <= best.0 {
            self.query(first, q, best);
        }
        if d_second <= best.0 {
            self.query(second, q, best);
        }
    }
}

fn build_bvh(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut bounds = Aabb::empty();
    for &id in &order[start..start + count] {
        for v in &tris[id as usize] {
            bounds.grow(v);
        }
    }
    if count <= LEAF_SIZE {
        nodes.push(BvhNode { bounds, left: -1, right: -1, start: start as u32, count: count as u32 });
        return nodes.len() - 1;
    }
    let mut cb = Aabb::empty();
    for &id in &order[start..start + count] {
        cb.grow(&centroids[id as usize]);
    }
    let extent = cb.max - cb.min;
    let axis = (0..3).max_by(|&a, &b| extent[a].partial_cmp(&extent[b]).unwrap()).unwrap();
    let mid = count / 2;
    order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let left = build_bvh(tris, centroids, order, start, mid, nodes);
    let right = build_bvh(tris, centroids, order, start + mid, count - mid, nodes);
    let mut merged = nodes[left].bounds;
    merged.merge(&nodes[right].bounds);
    nodes.push(BvhNode { bounds: merged, left: left as i32, right: right as i32, start: 0, count: 0 });
    nodes.len() - 1
}

/// Exhaustive counterpart of `MeshIndex::ray_hits`.
pub fn ray_hits_mesh(mesh: &TriangleMesh, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> bool {
    (0..mesh.triangles().len()).any(|id| {
        ray_triangle(origin, dir, &mesh.triangle_vertices(id), t_min, t_max).is_some()
    })
}

/// Per-point signed deviation against the nominal surface, with the foot
/// point, the owning triangle's normal, and that triangle's id.
#[derive(Debug, Clone)]
pub struct SignedDeviationSet {
    pub deviations: Vec<f64>,
    pub feet: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangle_ids: Vec<usize>,
}

impl SignedDeviationSet {
    pub fn len(&self) -> usize {
        self.deviations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deviations.is_empty()
    }
}

/// Δ_i = (p_i − foot_i) · n_i with n_i the nominal triangle normal; positive
/// means material excess on the normal side. The cloud must already sit in
/// the mesh frame.
pub fn signed_deviations(cloud: &PointCloud, mesh: &TriangleMesh) -> SignedDeviationSet {
    let index = MeshIndex::build(mesh);
    let rows: Vec<(f64, Vec3, Vec3, usize)> = cloud
        .points()
        .par_iter()
        .map(|p| {
            let (foot, normal, id) = index.closest_point(p);
            ((p - foot).dot(&normal), foot, normal, id)
        })
        .collect();
    let mut out = SignedDeviationSet {
        deviations: Vec::with_capacity(rows.len()),
        feet: Vec::with_capacity(rows.len()),
        normals: Vec::with_capacity(rows.len()),
        triangle_ids: Vec::with_capacity(rows.len()),
    };
    for (d, f, n, id) in rows {
        out.deviations.push(d);
        out.feet.push(f);
        out.normals.push(n);
        out.triangle_ids.push(id);
    }
    out
}

/// Voxel grid of mean signed deviation over the part volume. Empty voxels
/// hold 0 with occupancy 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMap {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
    /// Row-major over (ix, iy, iz): index = (ix·dims1 + iy)·dims2 + iz.
    pub values: Vec<f64>,
    pub occupancy: Vec<u32>,
    pub clipped: usize,
}

impl DeviationMap {
    pub fn linear_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.linear_index(ix, iy, iz)]
    }

    pub fn occupancy_at(&self, ix: usize, iy: usize, iz: usize) -> u32 {
        self.occupancy[self.linear_index(ix, iy, iz)]
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from("ix,iy,iz,value,occupancy\n");
        for ix in 0..self.dims[0] {
            for iy in 0..self.dims[1] {
                for iz in 0..self.dims[2] {
                    let li = self.linear_index(ix, iy, iz);
                    if self.occupancy[li] > 0 {
                        let _ = writeln!(
                            out,
                            "{ix},{iy},{iz},{},{}",
                            self.values[li], self.occupancy[li]
                        );
                    }
                }
            }
        }
        out
    }

    pub fn meta_string(&self) -> String {
        format!(
            "origin_x,origin_y,origin_z,resolution,dims_x,dims_y,dims_z,clipped\n{},{},{},{},{},{},{},{}\n",
            self.origin.x,
            self.origin.y,
            self.origin.z,
            self.resolution,
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.clipped
        )
    }

    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.csv_string()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(meta_path, self.meta_string()).map_err(|e| Error::io(meta_path, e))
    }
}

/// Fraction of points a map may drop before construction becomes an error.
pub const MAX_CLIP_FRACTION: f64 = 0.05;

/// Bins each point's deviation into a grid anchored at the cloud's minimum
/// corner. Points at the exact upper boundary fold into the last cell;
/// points beyond the grid are clipped, and clipping more than 5% of the
/// cloud is an error.
pub fn build_deviation_map(
    devs: &SignedDeviationSet,
    cloud: &PointCloud,
    resolution: f64,
    dims: [usize; 3],
) -> Result<DeviationMap> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("map resolution must be > 0".into()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument("map dims must all be ≥ 1".into()));
    }
    if devs.len() != cloud.len() {
        return Err(Error::DimMismatch(format!(
            "{} deviations for {} points",
            devs.len(),
            cloud.len()
        )));
    }
    let (origin, _) = cloud.bounding_box();
    let total = dims[0] * dims[1] * dims[2];
    let mut sums = vec![0.0f64; total];
    let mut occupancy = vec![0u32; total];
    let mut clipped = 0usize;

    'point: for (p, &d) in cloud.points().iter().zip(&devs.deviations) {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let rel = (p[a] - origin[a]) / resolution;
            let mut i = rel.floor() as i64;
            if i == dims[a] as i64 && rel <= dims[a] as f64 * (1.0 + 1e-12) {
                i = dims[a] as i64 - 1;
            }
            if i < 0 || i >= dims[a] as i64 {
                clipped += 1;
                continue 'point;
            }
            idx[a] = i as usize;
        }
        let li = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
        sums[li] += d;
        occupancy[li] += 1;
    }

    if clipped as f64 > MAX_CLIP_FRACTION * cloud.len() as f64 {
        return Err(Error::InvalidArgument(format!(
            "grid dims {dims:?} at resolution {resolution} clip {clipped} of {} points",
            cloud.len()
        )));
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&occupancy)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    Ok(DeviationMap { origin, resolution, dims, values, occupancy, clipped })
}

/// Grid dims that cover the cloud at the given resolution.
pub fn dims_covering(cloud: &PointCloud, resolution: f64) -> [usize; 3] {
    let (min, max) = cloud.bounding_box();
    let mut dims = [1usize; 3];
    for a in 0..3 {
        dims[a] = (((max[a] - min[a]) / resolution).ceil() as usize).max(1);
    }
    dims
}

/// Canonical field order shared by CSV output and model targets.
pub const STAT_NAMES: [&str; 9] = [
    "mean", "std", "max_positive", "max_negative", "p5", "p25", "p50", "p75", "p95",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationStats {
    pub region_id: String,
    pub mean: f64,
    pub std: f64,
    pub max_positive: f64,
    pub max_negative: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl DeviationStats {
    pub fn values(&self) -> [f64; 9] {
        [
            self.mean,
            self.std,
            self.max_positive,
            self.max_negative,
            self.p5,
            self.p25,
            self.p50,
            self.p75,
            self.p95,
        ]
    }
}

/// Percentile by linear interpolation between order statistics of the sorted
/// slice; `p` in [0, 100].
pub fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Summary statistics over the deviations selected by `region` (all points
/// when `None`). Std is population; percentiles linearly interpolated.
pub fn deviation_stats(
    devs: &SignedDeviationSet,
    region: Option<&[usize]>,
    region_id: &str,
) -> Result<DeviationStats> {
    let selected: Vec<f64> = match region {
        Some(idx) => {
            for &i in idx {
                if i >= devs.len() {
                    return Err(Error::InvalidArgument(format!(
                        "region index {i} out of range for {} deviations",
                        devs.len()
                    )));
                }
            }
            idx.iter().map(|&i| devs.deviations[i]).collect()
        }
        None => devs.deviations.clone(),
    };
    stats_of(&selected, region_id)
}

/// Same statistics over a raw deviation slice.
pub fn stats_of(values: &[f64], region_id: &str) -> Result<DeviationStats> {
    if values.is_empty() {
        return Err(Error::Empty(format!("region '{region_id}' selects no deviations")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(DeviationStats {
        region_id: region_id.to_string(),
        mean,
        std: var.sqrt(),
        max_positive: *sorted.last().unwrap(),
        max_negative: sorted[0],
        p5: percentile_linear(&sorted, 5.0),
        p25: percentile_linear(&sorted, 25.0),
        p50: percentile_linear(&sorted, 50.0),
        p75: percentile_linear(&sorted, 75.0),
        p95: percentile_linear(&sorted, 95.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::RigidTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square_mesh() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn cube_mesh(half: f64) -> TriangleMesh {
        let h = half;
        let v = vec![
            Vec3::new(-h, -h, -h),
            Vec3::new(h, -h, -h),
            Vec3::new(h, h, -h),
            Vec3::new(-h, h, -h),
            Vec3::new(-h, -h, h),
            Vec3::new(h, -h, h),
            Vec3::new(h, h, h),
            Vec3::new(-h, h, h),
        ];
        // Outward winding on each face.
        let t = vec![
            [0, 2, 1], [0, 3, 2], // z = -h
            [4, 5, 6], [4, 6, 7], // z = +h
            [0, 1, 5], [0, 5, 4], // y = -h
            [3, 7, 6], [3, 6, 2], // y = +h
            [0, 4, 7], [0, 7, 3], // x = -h
            [1, 2, 6], [1, 6, 5], // x = +h
        ];
        TriangleMesh::new(v, t).unwrap()
    }

    fn random_mesh(seed: u64, tris: usize) -> TriangleMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        while triangles.len() < tris {
            let a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = a + Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            let c = a + Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            let area2 = (b - a).cross(&(c - a)).norm();
            if area2 > 1e-6 {
                let base = vertices.len();
                vertices.extend_from_slice(&[a, b, c]);
                triangles.push([base, base + 1, base + 2]);
            }
        }
        TriangleMesh::new(vertices, triangles).unwrap()
    }

    #[test]
    fn interior_point_projects_to_itself() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let q = Vec3::new(0.25, 0.25, 0.0);
        assert!((closest_point_on_triangle(&q, &a, &b, &c) - q).norm() < 1e-15);
        let above = Vec3::new(0.25, 0.25, 2.0);
        assert!((closest_point_on_triangle(&above, &a, &b, &c) - q).norm() < 1e-15);
    }

    #[test]
    fn vertex_and_edge_regions() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let q = Vec3::new(-1.0, -1.0, 0.5);
        assert!((closest_point_on_triangle(&q, &a, &b, &c) - a).norm() < 1e-15);
        let q = Vec3::new(0.5, -2.0, 0.0);
        let foot = closest_point_on_triangle(&q, &a, &b, &c);
        assert!((foot - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        let q = Vec3::new(1.0, 1.0, 0.0);
        let foot = closest_point_on_triangle(&q, &a, &b, &c);
        assert!((foot - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn square_query_from_above() {
        let mesh = unit_square_mesh();
        let (foot, normal, _) = closest_point_on_mesh(&mesh, &Vec3::new(0.25, 0.25, 1.0));
        assert!((foot - Vec3::new(0.25, 0.25, 0.0)).norm() < 1e-15);
        assert!((normal - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn tie_on_shared_edge_takes_lower_triangle() {
        let mesh = unit_square_mesh();
        // Above the shared diagonal: both triangles give the same foot.
        let (_, _, id) = closest_point_on_mesh(&mesh, &Vec3::new(0.5, 0.5, 1.0));
        assert_eq!(id, 0);
        let idx = MeshIndex::build(&mesh);
        let (_, _, id) = idx.closest_point(&Vec3::new(0.5, 0.5, 1.0));
        assert_eq!(id, 0);
    }

    #[test]
    fn index_matches_exhaustive_oracle() {
        for seed in 0..10u64 {
            let mesh = random_mesh(seed, 120);
            let idx = MeshIndex::build(&mesh);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for _ in 0..1000 {
                let q = Vec3::new(
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                );
                let (f1, n1, id1) = closest_point_on_mesh(&mesh, &q);
                let (f2, n2, id2) = idx.closest_point(&q);
                assert!((f1 - f2).norm() < 1e-9, "seed {seed} q {q:?}");
                assert_eq!(id1, id2, "seed {seed} q {q:?}");
                assert_eq!(n1, n2);
            }
        }
    }

    #[test]
    fn deviation_signs() {
        let mesh = unit_square_mesh();
        let cloud = PointCloud::new(
            vec![
                Vec3::new(0.3, 0.3, 0.0),
                Vec3::new(0.3, 0.3, 0.05),
                Vec3::new(0.3, 0.3, -0.05),
            ],
            None,
            "probe",
        )
        .unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        assert!(devs.deviations[0].abs() < 1e-15);
        assert!((devs.deviations[1] - 0.05).abs() < 1e-15);
        assert!((devs.deviations[2] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn deviations_never_exceed_distance() {
        let mesh = random_mesh(3, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let cloud = PointCloud::new(pts, None, "p").unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        for i in 0..devs.len() {
            let dist = (cloud.points()[i] - devs.feet[i]).norm();
            assert!(devs.deviations[i].abs() <= dist + 1e-12);
        }
    }

    #[test]
    fn convex_exterior_is_nonnegative() {
        let mesh = cube_mesh(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| {
                let dir = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                dir * rng.gen_range(1.8..3.0)
            })
            .collect();
        let cloud = PointCloud::new(pts, None, "ext").unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        assert!(devs.deviations.iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn deviations_equivariant_under_rigid_motion() {
        let mesh = random_mesh(5, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| Vec3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)))
            .collect();
        let cloud = PointCloud::new(pts.clone(), None, "p").unwrap();
        let t = RigidTransform {
            rotation: RigidTransform::from_axis_angle(&Vec3::new(0.3, 0.7, 0.1), 1.1).rotation,
            translation: Vec3::new(5.0, -2.0, 3.0),
        };
        let mesh_t = TriangleMesh::new(
            mesh.vertices().iter().map(|v| t.apply(v)).collect(),
            mesh.triangles().to_vec(),
        )
        .unwrap();
        let cloud_t = t.apply_cloud(&cloud);
        let d0 = signed_deviations(&cloud, &mesh);
        let d1 = signed_deviations(&cloud_t, &mesh_t);
        for (a, b) in d0.deviations.iter().zip(&d1.deviations) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn map_means_and_sentinels() {
        let mesh = unit_square_mesh();
        let pts = vec![
            Vec3::new(0.02, 0.02, 0.02),
            Vec3::new(0.04, 0.04, 0.04),
            Vec3::new(0.95, 0.95, 0.0),
        ];
        let cloud = PointCloud::new(pts, None, "p").unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        let map = build_deviation_map(&devs, &cloud, 0.1, [10, 10, 1]).unwrap();
        assert_eq!(map.clipped, 0);
        // First two points share voxel (0,0,0): mean of 0.02 and 0.04.
        assert!((map.value(0, 0, 0) - 0.03).abs() < 1e-15);
        assert_eq!(map.occupancy_at(0, 0, 0), 2);
        // Top-corner point folds into the last cell.
        assert_eq!(map.occupancy_at(9, 9, 0), 1);
        let empty = map.occupancy.iter().filter(|&&o| o == 0).count();
        assert_eq!(empty, 100 - 2);
        for (v, o) in map.values.iter().zip(&map.occupancy) {
            if *o == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn map_clipping_over_budget_is_error() {
        let mesh = unit_square_mesh();
        let pts: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new(i as f64 * 0.05, 0.0, 0.01))
            .collect();
        let cloud = PointCloud::new(pts, None, "p").unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        // 5 cells of 0.05 span 0.25 of a 0.95 range: most points clipped.
        assert!(build_deviation_map(&devs, &cloud, 0.05, [5, 1, 1]).is_err());
    }

    #[test]
    fn stats_hand_case() {
        let s = stats_of(&[-1.0, 0.0, 1.0], "r").unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.max_negative, -1.0);
        assert_eq!(s.max_positive, 1.0);
        assert_eq!(s.p50, 0.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stats_constant_set() {
        let s = stats_of(&[0.5; 7], "r").unwrap();
        for p in [s.p5, s.p25, s.p50, s.p75, s.p95, s.mean] {
            assert_eq!(p, 0.5);
        }
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn percentiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let vals: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = stats_of(&vals, "r").unwrap();
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (p, got) in [(5.0, s.p5), (25.0, s.p25), (50.0, s.p50), (75.0, s.p75), (95.0, s.p95)] {
            let h = (sorted.len() - 1) as f64 * p / 100.0;
            let lo = h.floor() as usize;
            let want = sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo]);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_region_is_error() {
        let mesh = unit_square_mesh();
        let cloud = PointCloud::new(vec![Vec3::new(0.5, 0.5, 0.1)], None, "p").unwrap();
        let devs = signed_deviations(&cloud, &mesh);
        assert!(deviation_stats(&devs, Some(&[]), "empty").is_err());
        assert!(deviation_stats(&devs, None, "all").is_ok());
    }

    #[test]
    fn ray_hits_cube_from_outside_and_misses_past_it() {
        let index = MeshIndex::build(&cube_mesh(1.0));
        let origin = Vec3::new(5.0, 0.2, -0.3);
        let toward = Vec3::new(-1.0, 0.0, 0.0);
        assert!(index.ray_hits(&origin, &toward, 0.0, f64::INFINITY));
        // Segment stops short of the cube.
        assert!(!index.ray_hits(&origin, &toward, 0.0, 3.0));
        // Pointing away.
        assert!(!index.ray_hits(&origin, &Vec3::new(1.0, 0.0, 0.0), 0.0, f64::INFINITY));
        // Grazing line above the cube.
        let above = Vec3::new(5.0, 0.0, 1.5);
        assert!(!index.ray_hits(&above, &toward, 0.0, f64::INFINITY));
    }

    #[test]
    fn ray_surface_offset_excludes_own_face() {
        // A surface point nudged along its normal with t_min > 0 must not
        // see its own face, but must be blocked looking through the cube.
        let index = MeshIndex::build(&cube_mesh(1.0));
        let p = Vec3::new(1.0, 0.1, 0.2);
        let out = Vec3::new(1.0, 0.0, 0.0);
        assert!(!index.ray_hits(&(p + out * 1e-4), &out, 0.0, f64::INFINITY));
        assert!(index.ray_hits(&(p + out * 1e-4), &(-out), 1e-4, f64::INFINITY));
    }

    #[test]
    fn ray_hits_match_linear_oracle() {
        for seed in 0..5u64 {
            let mesh = random_mesh(seed, 60);
            let index = MeshIndex::build(&mesh);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(900));
            for _ in 0..400 {
                let o = Vec3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                );
                let d = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if d.norm() < 1e-3 {
                    continue;
                }
                let t_max = rng.gen_range(0.5..6.0);
                assert_eq!(
                    index.ray_hits(&o, &d, 1e-6, t_max),
                    ray_hits_mesh(&mesh, &o, &d, 1e-6, t_max),
                    "seed {seed} o {o:?} d {d:?}"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stats_ordering_invariants(seed in 0u64..10_000, n in 1usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let s = stats_of(&vals, "r").unwrap();
            prop_assert!(s.max_negative <= s.p5 + 1e-15);
            prop_assert!(s.p5 <= s.p25 && s.p25 <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p95);
            prop_assert!(s.p95 <= s.max_positive + 1e-15);
            prop_assert!(s.mean >= s.max_negative && s.mean <= s.max_positive);
        }

        #[test]
        fn map_totals_match_input(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..150)
                .map(|_| Vec3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(-0.1..0.1)))
                .collect();
            let cloud = PointCloud::new(pts, None, "p").unwrap();
            let mesh = unit_square_mesh();
            let devs = signed_deviations(&cloud, &mesh);
            let dims = dims_covering(&cloud, 0.2);
            let map = build_deviation_map(&devs, &cloud, 0.2, dims).unwrap();
            let binned: u32 = map.occupancy.iter().sum();
            prop_assert_eq!(binned as usize + map.clipped, cloud.len());
            prop_assert_eq!(map.clipped, 0);
        }
    }
}
