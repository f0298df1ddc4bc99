//! Scan cleaning: statistical outlier removal and uniform voxel resampling.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cloud::{PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::spatial::{linear_k_nearest, KdTree};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutlierParams {
    /// Neighbour count for the local mean distance.
    pub k: usize,
    /// Standard-deviation multiplier in the removal threshold.
    pub m: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        OutlierParams { k: 8, m: 2.0 }
    }
}

impl OutlierParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("outlier k must be ≥ 1".into()));
        }
        if !(self.m > 0.0) {
            return Err(Error::InvalidArgument("outlier m must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VoxelParams {
    /// Voxel edge length in mm.
    pub delta: f64,
}

impl Default for VoxelParams {
    fn default() -> Self {
        VoxelParams { delta: 0.1 }
    }
}

impl VoxelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("voxel delta must be > 0".into()));
        }
        Ok(())
    }
}

/// Removes points whose mean distance to their k nearest neighbours (self
/// excluded) exceeds μ_d + m·σ_d, where μ_d and σ_d are the mean and
/// population standard deviation of that quantity over the whole cloud.
/// Statistics come from the original cloud; removal is a single pass.
pub fn remove_outliers(cloud: &PointCloud, p: &OutlierParams) -> Result<(PointCloud, usize)> {
    p.validate()?;
    if cloud.len() <= p.k {
        return Err(Error::InvalidArgument(format!(
            "cloud of {} points cannot supply {} neighbours per point",
            cloud.len(),
            p.k
        )));
    }
    let tree = KdTree::build(cloud.points())?;
    let dbar: Vec<f64> = cloud
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let nn = tree.k_nearest(q, p.k, Some(i));
            nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let keep = keep_mask(&dbar, p.m);
    Ok(subset(cloud, &keep))
}

/// Same rule evaluated with quadratic nearest-neighbour scans; reference for
/// cross-checking the tree-accelerated path.
pub fn remove_outliers_oracle(cloud: &PointCloud, p: &OutlierParams) -> Result<(PointCloud, usize)> {
    p.validate()?;
    if cloud.len() <= p.k {
        return Err(Error::InvalidArgument("cloud too small for k neighbours".into()));
    }
    let dbar: Vec<f64> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let nn = linear_k_nearest(cloud.points(), q, p.k, Some(i));
            nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let keep = keep_mask(&dbar, p.m);
    Ok(subset(cloud, &keep))
}

fn keep_mask(dbar: &[f64], m: f64) -> Vec<bool> {
    let n = dbar.len() as f64;
    let mu = dbar.iter().sum::<f64>() / n;
    let var = dbar.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n;
    let threshold = mu + m * var.sqrt();
    dbar.iter().map(|&d| d <= threshold).collect()
}

fn subset(cloud: &PointCloud, keep: &[bool]) -> (PointCloud, usize) {
    let points: Vec<Vec3> = cloud
        .points()
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect();
    let normals = cloud.normals().map(|ns| {
        ns.iter().zip(keep).filter(|(_, &k)| k).map(|(n, _)| *n).collect()
    });
    let removed = cloud.len() - points.len();
    let kept = PointCloud::new(points, normals, cloud.source_id())
        .expect("threshold keeps at least the minimum-d̄ point");
    (kept, removed)
}

/// Voxel grid anchored at the cloud's minimum corner; one centroid per
/// occupied cell, emitted in lexicographic cell-index order. Normals are
/// dropped (a cell centroid has no single source normal).
pub fn voxel_downsample(cloud: &PointCloud, p: &VoxelParams) -> Result<PointCloud> {
    let (min, _) = cloud.bounding_box();
    voxel_downsample_anchored(cloud, p, &min)
}

/// Downsampling with an explicit grid anchor, for callers that need cell
/// boundaries to stay fixed across repeated passes.
pub fn voxel_downsample_anchored(
    cloud: &PointCloud,
    p: &VoxelParams,
    anchor: &Vec3,
) -> Result<PointCloud> {
    p.validate()?;
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for q in cloud.points() {
        let c = cell_index(q, anchor, p.delta);
        let e = cells.entry(c).or_insert((Vec3::zeros(), 0));
        e.0 += q;
        e.1 += 1;
    }
    let points: Vec<Vec3> = cells.values().map(|(sum, n)| sum / *n as f64).collect();
    PointCloud::new(points, None, cloud.source_id())
}

pub fn cell_index(p: &Vec3, anchor: &Vec3, delta: f64) -> (i64, i64, i64) {
    (
        ((p.x - anchor.x) / delta).floor() as i64,
        ((p.y - anchor.y) / delta).floor() as i64,
        ((p.z - anchor.z) / delta).floor() as i64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_10x10() -> PointCloud {
        let pts: Vec<Vec3> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Vec3::new(i as f64, j as f64, 0.0)))
            .collect();
        PointCloud::new(pts, None, "grid").unwrap()
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        PointCloud::new(pts, None, "rnd").unwrap()
    }

    #[test]
    fn regular_polygon_has_zero_spread() {
        // Every vertex of a regular n-gon sees the same two adjacent
        // neighbours, so σ_d = 0 and the threshold keeps everything.
        let n = 12;
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        let cloud = PointCloud::new(pts, None, "ring").unwrap();
        let (kept, removed) = remove_outliers(&cloud, &OutlierParams { k: 2, m: 2.0 }).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(kept.len(), n);
    }

    #[test]
    fn bounded_grid_sheds_its_corners() {
        // On a bounded 10x10 grid with k=4 the corner points' mean neighbour
        // distance is (2 + √2 + 2)/4 ≈ 1.354 against a population threshold
        // μ+2σ ≈ 1.205, so exactly the four corners trip the rule.
        let (kept, removed) = remove_outliers(&grid_10x10(), &OutlierParams { k: 4, m: 2.0 }).unwrap();
        assert_eq!(removed, 4);
        for p in kept.points() {
            let corner = (p.x == 0.0 || p.x == 9.0) && (p.y == 0.0 || p.y == 9.0);
            assert!(!corner, "corner {p:?} survived");
        }
    }

    #[test]
    fn single_far_point_removed() {
        let mut pts = grid_10x10().points().to_vec();
        pts.push(Vec3::new(104.5, 4.5, 0.0));
        let cloud = PointCloud::new(pts, None, "g+1").unwrap();
        let (kept, removed) = remove_outliers(&cloud, &OutlierParams { k: 4, m: 2.0 }).unwrap();
        assert_eq!(removed, 1);
        assert!(kept.points().iter().all(|p| p.x < 100.0));
    }

    #[test]
    fn matches_oracle_on_random_clouds() {
        for seed in 0..50 {
            let cloud = random_cloud(seed, 200);
            let p = OutlierParams { k: 8, m: 1.5 };
            let (kept, removed) = remove_outliers(&cloud, &p).unwrap();
            let (kept_o, removed_o) = remove_outliers_oracle(&cloud, &p).unwrap();
            assert_eq!(removed, removed_o, "seed {seed}");
            assert_eq!(kept.points(), kept_o.points(), "seed {seed}");
        }
    }

    #[test]
    fn cloud_not_larger_than_k_is_error() {
        let cloud = random_cloud(1, 8);
        assert!(remove_outliers(&cloud, &OutlierParams { k: 8, m: 2.0 }).is_err());
    }

    #[test]
    fn huge_m_removes_nothing() {
        let cloud = random_cloud(2, 100);
        let (kept, removed) = remove_outliers(&cloud, &OutlierParams { k: 5, m: 1e12 }).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(kept.points(), cloud.points());
    }

    #[test]
    fn one_cell_collapses_to_centroid() {
        let pts = vec![
            Vec3::new(0.01, 0.02, 0.03),
            Vec3::new(0.04, 0.05, 0.06),
            Vec3::new(0.02, 0.08, 0.00),
        ];
        let cloud = PointCloud::new(pts.clone(), None, "c").unwrap();
        let out = voxel_downsample(&cloud, &VoxelParams { delta: 0.1 }).unwrap();
        assert_eq!(out.len(), 1);
        let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
        assert!((out.points()[0] - centroid).norm() < 1e-15);
    }

    #[test]
    fn near_points_share_a_cell() {
        let pts = vec![Vec3::new(0.04, 0.0, 0.0), Vec3::new(0.06, 0.0, 0.0)];
        let cloud = PointCloud::new(pts, None, "c").unwrap();
        let out = voxel_downsample(&cloud, &VoxelParams { delta: 0.1 }).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0].x - 0.05).abs() < 1e-15);
    }

    #[test]
    fn distant_points_stay_separate() {
        let pts = vec![Vec3::new(0.04, 0.0, 0.0), Vec3::new(0.16, 0.0, 0.0)];
        let cloud = PointCloud::new(pts, None, "c").unwrap();
        let out = voxel_downsample(&cloud, &VoxelParams { delta: 0.1 }).unwrap();
        assert_eq!(out.len(), 2);
        // Lexicographic cell order keeps the lower cell first.
        assert!(out.points()[0].x < out.points()[1].x);
    }

    #[test]
    fn output_sorted_by_cell_index() {
        let cloud = random_cloud(3, 500);
        let out = voxel_downsample(&cloud, &VoxelParams { delta: 0.25 }).unwrap();
        let (min, _) = cloud.bounding_box();
        let cells: Vec<_> = out.points().iter().map(|p| cell_index(p, &min, 0.25)).collect();
        let mut sorted = cells.clone();
        sorted.sort();
        assert_eq!(cells, sorted);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outlier_output_is_subset(seed in 0u64..500, k in 1usize..10, m in 0.1f64..5.0) {
            let cloud = random_cloud(seed, 60);
            let (kept, removed) = remove_outliers(&cloud, &OutlierParams { k, m }).unwrap();
            prop_assert_eq!(kept.len() + removed, cloud.len());
            let mut it = cloud.points().iter();
            for p in kept.points() {
                prop_assert!(it.any(|q| q == p), "kept point not in input order");
            }
        }

        #[test]
        fn voxel_size_and_bounds(seed in 0u64..500, delta in 0.05f64..0.5) {
            let cloud = random_cloud(seed, 120);
            let out = voxel_downsample(&cloud, &VoxelParams { delta }).unwrap();
            prop_assert!(out.len() <= cloud.len());
            let (min, _) = cloud.bounding_box();
            for p in out.points() {
                let c = cell_index(p, &min, delta);
                for (axis, ci) in [c.0, c.1, c.2].into_iter().enumerate() {
                    let lo = min[axis] + ci as f64 * delta;
                    prop_assert!(p[axis] >= lo - 1e-12 && p[axis] <= lo + delta + 1e-12);
                }
            }
        }

        #[test]
        fn voxel_idempotent_with_fixed_anchor(seed in 0u64..500, delta in 0.05f64..0.5) {
            let cloud = random_cloud(seed, 120);
            let (anchor, _) = cloud.bounding_box();
            let p = VoxelParams { delta };
            let once = voxel_downsample_anchored(&cloud, &p, &anchor).unwrap();
            let twice = voxel_downsample_anchored(&once, &p, &anchor).unwrap();
            prop_assert_eq!(once.len(), twice.len());
        }

        #[test]
        fn voxel_matches_grouping_oracle(seed in 0u64..500) {
            let cloud = random_cloud(seed, 150);
            let delta = 0.3;
            let out = voxel_downsample(&cloud, &VoxelParams { delta }).unwrap();
            let (min, _) = cloud.bounding_box();
            let mut groups: std::collections::BTreeMap<(i64,i64,i64), Vec<Vec3>> = Default::default();
            for q in cloud.points() {
                groups.entry(cell_index(q, &min, delta)).or_default().push(*q);
            }
            prop_assert_eq!(out.len(), groups.len());
            for (p, members) in out.points().iter().zip(groups.values()) {
                let c = members.iter().sum::<Vec3>() / members.len() as f64;
                prop_assert!((p - c).norm() < 1e-12);
            }
        }
    }
}
