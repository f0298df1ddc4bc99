//! Point cloud and triangle mesh containers.
//!
//! Coordinates are millimetres, stored as `f64` throughout. Both types are
//! immutable after construction and safe to share across worker threads.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Ordered set of 3D points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    source_id: String,
}

impl PointCloud {
    /// Builds a cloud, checking the construction invariants: a non-empty
    /// point list, finite coordinates, and (when present) one unit normal
    /// per point.
    pub fn new(points: Vec<Vec3>, normals: Option<Vec<Vec3>>, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud has no points".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        if let Some(ns) = &normals {
            if ns.len() != points.len() {
                return Err(Error::DimMismatch(format!(
                    "normals length {} != points length {}",
                    ns.len(),
                    points.len()
                )));
            }
            for (i, n) in ns.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "normal {i} has norm {} (expected 1)",
                        n.norm()
                    )));
                }
            }
        }
        Ok(Self {
            points,
            normals,
            source_id: source_id.into(),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len() as f64
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// New cloud with the same source id and a transformed point set.
    pub fn with_points(&self, points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
            source_id: self.source_id.clone(),
        }
    }
}

/// Triangulated nominal surface with per-triangle normals derived from
/// the winding order.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    triangle_normals: Vec<Vec3>,
}

impl TriangleMesh {
    /// Minimum admissible triangle area in mm^2.
    pub const MIN_AREA: f64 = 1e-12;

    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::Empty("mesh has no geometry".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= vertices.len() {
                    return Err(Error::InvalidArgument(format!(
                        "triangle {t} references vertex {i} of {}",
                        vertices.len()
                    )));
                }
            }
        }
        let triangle_normals = triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let e1 = vertices[tri[1]] - vertices[tri[0]];
                let e2 = vertices[tri[2]] - vertices[tri[0]];
                let n = e1.cross(&e2);
                let area = 0.5 * n.norm();
                if area <= Self::MIN_AREA {
                    return Err(Error::Degenerate(format!(
                        "triangle {t} has area {area} mm^2"
                    )));
                }
                Ok(n.normalize())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vertices,
            triangles,
            triangle_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_normals(&self) -> &[Vec3] {
        &self.triangle_normals
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut area = 0.0;
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.triangle_area(t);
            let c = (self.vertices[tri[0]] + self.vertices[tri[1]] + self.vertices[tri[2]]) / 3.0;
            acc += a * c;
            area += a;
        }
        acc / area
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_rejects_empty() {
        assert!(PointCloud::new(vec![], None, "s").is_err());
    }

    #[test]
    fn cloud_rejects_mismatched_normals() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let ns = vec![Vec3::new(0.0, 0.0, 1.0)];
        assert!(PointCloud::new(pts, Some(ns), "s").is_err());
    }

    #[test]
    fn cloud_rejects_non_unit_normal() {
        let pts = vec![Vec3::zeros()];
        let ns = vec![Vec3::new(0.0, 0.0, 2.0)];
        assert!(PointCloud::new(pts, Some(ns), "s").is_err());
    }

    #[test]
    fn mesh_normal_from_winding() {
        // Unit right triangle in the z=0 plane, CCW winding -> +z normal.
        let mesh = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let n = mesh.triangle_normals()[0];
        assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);

        // Reversed winding flips the sign.
        let flipped = TriangleMesh::new(mesh.vertices().to_vec(), vec![[0, 2, 1]]).unwrap();
        assert!((flipped.triangle_normals()[0] + Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn mesh_rejects_degenerate_triangle() {
        let r = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        );
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn mesh_rejects_out_of_range_index() {
        let r = TriangleMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 9]],
        );
        assert!(r.is_err());
    }
}
