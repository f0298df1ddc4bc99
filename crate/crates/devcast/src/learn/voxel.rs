//! Fixed-frame voxelization. Every part of a given archetype is rasterized
//! into the same grid (same origin, resolution, dims), so voxel maps are
//! directly comparable and usable as encoder input.

use crate::cloud::Vec3;
use crate::deviation::DeviationMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoxelParams {
    pub dims: [usize; 3],
    /// Padding around the nominal bounding box, mm. Must exceed the largest
    /// expected deviation so no measured point falls outside the grid.
    pub pad: f64,
}

impl Default for VoxelParams {
    fn default() -> Self {
        VoxelParams { dims: [16, 16, 16], pad: 1.0 }
    }
}

impl VoxelParams {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("voxel dims must all be ≥ 1".into()));
        }
        if !(self.pad >= 0.0) {
            return Err(Error::InvalidArgument(format!("voxel pad {} must be ≥ 0", self.pad)));
        }
        Ok(())
    }
}

/// A concrete grid placement: cubic cells, part centered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub resolution: f64,
    pub dims: [usize; 3],
}

impl VoxelGrid {
    /// Grid covering `[min, max]` plus padding. One cubic resolution for
    /// all axes (the largest required), box centered per axis.
    pub fn fit(min: Vec3, max: Vec3, params: &VoxelParams) -> Result<VoxelGrid> {
        params.validate()?;
        for a in 0..3 {
            if !(max[a] > min[a]) {
                return Err(Error::Degenerate(format!(
                    "voxel grid: empty extent on axis {a} ({} .. {})",
                    min[a], max[a]
                )));
            }
        }
        let mut resolution: f64 = 0.0;
        for a in 0..3 {
            let need = (max[a] - min[a] + 2.0 * params.pad) / params.dims[a] as f64;
            resolution = resolution.max(need);
        }
        let mut origin = Vec3::zeros();
        for a in 0..3 {
            let center = (min[a] + max[a]) / 2.0;
            origin[a] = center - resolution * params.dims[a] as f64 / 2.0;
        }
        Ok(VoxelGrid { origin, resolution, dims: params.dims })
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Mean signed deviation per cell; points outside the grid are counted
    /// in `clipped` (none, if the padding honors its contract).
    pub fn rasterize(&self, points: &[Vec3], deviations: &[f64]) -> Result<DeviationMap> {
        if points.len() != deviations.len() {
            return Err(Error::DimMismatch(format!(
                "{} points vs {} deviations",
                points.len(),
                deviations.len()
            )));
        }
        let n = self.cell_count();
        let mut sums = vec![0.0f64; n];
        let mut occupancy = vec![0u32; n];
        let mut clipped = 0usize;
        'point: for (p, d) in points.iter().zip(deviations) {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let i = ((p[a] - self.origin[a]) / self.resolution).floor() as i64;
                if i < 0 || i >= self.dims[a] as i64 {
                    clipped += 1;
                    continue 'point;
                }
                idx[a] = i as usize;
            }
            let li = (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2];
            sums[li] += d;
            occupancy[li] += 1;
        }
        let values = sums
            .iter()
            .zip(&occupancy)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        Ok(DeviationMap {
            origin: self.origin,
            resolution: self.resolution,
            dims: self.dims,
            values,
            occupancy,
            clipped,
        })
    }
}
