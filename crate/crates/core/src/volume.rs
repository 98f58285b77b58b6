//! 3D and multi-channel 3D rasters with physical voxel spacing.
//!
//! All rasters are stored x-fastest: the linear index of voxel `(x, y, z)`
//! is `(z * ny + y) * nx + x`. Multi-channel volumes stack whole 3D rasters
//! channel after channel.

use crate::error::{Error, Result};

/// Voxel counts along x, y, z.
pub type Dims = [usize; 3];
/// Millimetres per voxel along x, y, z.
pub type Spacing = [f64; 3];
/// Voxel coordinate `(x, y, z)`.
pub type Voxel = [usize; 3];

#[inline]
pub fn linear_index(dims: Dims, v: Voxel) -> usize {
    (v[2] * dims[1] + v[1]) * dims[0] + v[0]
}

#[inline]
pub fn voxel_at(dims: Dims, idx: usize) -> Voxel {
    let x = idx % dims[0];
    let y = (idx / dims[0]) % dims[1];
    let z = idx / (dims[0] * dims[1]);
    [x, y, z]
}

pub fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

/// Position of a voxel center in millimetres.
#[inline]
pub fn voxel_center_mm(v: Voxel, spacing: Spacing) -> [f64; 3] {
    [
        v[0] as f64 * spacing[0],
        v[1] as f64 * spacing[1],
        v[2] as f64 * spacing[2],
    ]
}

/// Spacing-weighted mean voxel position.
pub fn centroid_mm(voxels: &[Voxel], spacing: Spacing) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for v in voxels {
        let p = voxel_center_mm(*v, spacing);
        for a in 0..3 {
            acc[a] += p[a];
        }
    }
    let n = voxels.len().max(1) as f64;
    acc.map(|s| s / n)
}

pub fn voxel_volume_mm3(spacing: Spacing) -> f64 {
    spacing[0] * spacing[1] * spacing[2]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

impl<T: Copy> Volume3<T> {
    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Self {
        Self {
            dims,
            spacing,
            data: vec![value; voxel_count(dims)],
        }
    }

    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if data.len() != voxel_count(dims) {
            return Err(Error::Shape(format!(
                "volume {dims:?} needs {} voxels, got {}",
                voxel_count(dims),
                data.len()
            )));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, v: Voxel) -> T {
        self.data[linear_index(self.dims, v)]
    }

    pub fn set(&mut self, v: Voxel, value: T) {
        let i = linear_index(self.dims, v);
        self.data[i] = value;
    }

    /// The `z`-th axial slice, `ny * nx` values, row-major.
    pub fn slice(&self, z: usize) -> &[T] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[z * plane..(z + 1) * plane]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [T] {
        let plane = self.dims[0] * self.dims[1];
        &mut self.data[z * plane..(z + 1) * plane]
    }
}

impl Volume3<u8> {
    pub fn popcount(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Multi-channel 3D intensity raster (`channels x Z x Y x X`).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume4 {
    channels: usize,
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume4 {
    pub fn zeros(channels: usize, dims: Dims, spacing: Spacing) -> Self {
        Self {
            channels,
            dims,
            spacing,
            data: vec![0.0; channels * voxel_count(dims)],
        }
    }

    pub fn from_vec(channels: usize, dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * voxel_count(dims) {
            return Err(Error::Shape(format!(
                "{channels}-channel volume {dims:?} needs {} values, got {}",
                channels * voxel_count(dims),
                data.len()
            )));
        }
        Ok(Self {
            channels,
            dims,
            spacing,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = voxel_count(self.dims);
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = voxel_count(self.dims);
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn slice(&self, c: usize, z: usize) -> &[f32] {
        let plane = self.dims[0] * self.dims[1];
        let n = voxel_count(self.dims);
        &self.data[c * n + z * plane..c * n + (z + 1) * plane]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let dims = [5, 4, 3];
        for i in 0..voxel_count(dims) {
            assert_eq!(linear_index(dims, voxel_at(dims, i)), i);
        }
        assert_eq!(linear_index(dims, [1, 2, 1]), 20 + 10 + 1);
    }

    #[test]
    fn centroid_uses_spacing() {
        let c = centroid_mm(&[[0, 0, 0], [2, 0, 1]], [1.0, 1.0, 3.0]);
        assert_eq!(c, [1.0, 0.0, 1.5]);
    }
}
