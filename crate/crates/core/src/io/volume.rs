use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest voxel count accepted anywhere (512⁴).
pub const MAX_VOXELS: u64 = 512 * 512 * 512 * 512;

/// Axis along which 2D slices are taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    #[default]
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two in-plane axes, fastest first.
    pub fn in_plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::Config(format!("unknown axis '{other}'"))),
        }
    }
}

/// Dense 4D magnitude data. Voxels are stored as `f32` with x varying
/// fastest, then y, z and finally the volume index, i.e. the NIfTI order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    dims: [usize; 4],
    voxels: Vec<f32>,
    spacing: [f64; 3],
    scale: (f64, f64),
}

impl Volume4D {
    pub fn new(dims: [usize; 4], voxels: Vec<f32>) -> Result<Self> {
        let count = checked_voxel_count(dims)?;
        if voxels.len() as u64 != count {
            return Err(Error::DimensionOverflow(format!(
                "dims {dims:?} need {count} voxels, got {}",
                voxels.len()
            )));
        }
        if let Some(bad) = voxels.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain {
                routine: "Volume4D",
                detail: format!("non-finite voxel value {bad}"),
            });
        }
        Ok(Volume4D {
            dims,
            voxels,
            spacing: [1.0; 3],
            scale: (1.0, 0.0),
        })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        let count = checked_voxel_count(dims)?;
        Self::new(dims, vec![0.0; count as usize])
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Domain {
                routine: "Volume4D",
                detail: format!("voxel spacing must be positive, got {spacing:?}"),
            });
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub(crate) fn with_scale(mut self, slope: f64, intercept: f64) -> Self {
        self.scale = (slope, intercept);
        self
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn n_volumes(&self) -> usize {
        self.dims[3]
    }

    pub fn spatial_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Slope and intercept that were applied to the stored values on read.
    pub fn scale(&self) -> (f64, f64) {
        self.scale
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, v: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * (z + self.dims[2] * v))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, v: usize) -> f32 {
        self.voxels[self.index(x, y, z, v)]
    }

    /// One 3D volume as a contiguous slice.
    pub fn volume(&self, v: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.voxels[v * n..(v + 1) * n]
    }

    /// Copy with every voxel multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let voxels = self.voxels.iter().map(|v| v * factor).collect();
        Volume4D::new(self.dims, voxels)?.with_spacing(self.spacing)
    }

    /// Copy with volumes reordered so that output volume `i` is input volume `order[i]`.
    pub fn permute_volumes(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_volumes()];
        for &o in order {
            if o >= seen.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Config(format!("{order:?} is not a permutation")));
            }
        }
        if order.len() != self.n_volumes() {
            return Err(Error::Config(format!("{order:?} is not a permutation")));
        }
        let mut voxels = Vec::with_capacity(self.voxels.len());
        for &o in order {
            voxels.extend_from_slice(self.volume(o));
        }
        Volume4D::new(self.dims, voxels)?.with_spacing(self.spacing)
    }

    /// Median of every voxel of every volume.
    pub fn median(&self) -> Result<f64> {
        if self.voxels.is_empty() {
            return Err(Error::DegenerateData("empty volume".into()));
        }
        let mut values = self.voxels.clone();
        let n = values.len();
        let mid = n / 2;
        let (lower, upper, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
        let upper = *upper as f64;
        if n % 2 == 1 {
            Ok(upper)
        } else {
            let below = lower.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            Ok(0.5 * (below + upper))
        }
    }

    pub fn n_slices(&self, axis: Axis) -> usize {
        self.dims[axis.index()]
    }

    /// In-plane (width, height) of slices along `axis`.
    pub fn slice_shape(&self, axis: Axis) -> (usize, usize) {
        let (a, b) = axis.in_plane();
        (self.dims[a], self.dims[b])
    }

    /// Extract slice `index` along `axis` with all volumes.
    pub fn slice(&self, axis: Axis, index: usize) -> Result<SliceData> {
        if index >= self.n_slices(axis) {
            return Err(Error::Config(format!(
                "slice {index} out of range along {axis:?} ({} slices)",
                self.n_slices(axis)
            )));
        }
        let (width, height) = self.slice_shape(axis);
        let nv = self.n_volumes();
        let mut values = vec![0.0f64; width * height * nv];
        for v in 0..nv {
            for j in 0..height {
                for i in 0..width {
                    let (x, y, z) = match axis {
                        Axis::X => (index, i, j),
                        Axis::Y => (i, index, j),
                        Axis::Z => (i, j, index),
                    };
                    values[(i + width * j) * nv + v] = self.get(x, y, z, v) as f64;
                }
            }
        }
        SliceData::new(width, height, nv, values)
    }

    /// Dimensions plus a SHA-256 over the little-endian voxel bytes.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for d in self.dims {
            hasher.update((d as u64).to_le_bytes());
        }
        for chunk in self.voxels.chunks(1 << 16) {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            hasher.update(&bytes);
        }
        let digest = hasher.finalize();
        Fingerprint {
            dims: self.dims,
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

pub(crate) fn checked_voxel_count(dims: [usize; 4]) -> Result<u64> {
    if dims.contains(&0) {
        return Err(Error::DimensionOverflow(format!(
            "zero-sized dimension in {dims:?}"
        )));
    }
    let mut count: u64 = 1;
    for &d in &dims {
        count = count
            .checked_mul(d as u64)
            .filter(|&c| c <= MAX_VOXELS)
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?} exceeds 512⁴ voxels")))?;
    }
    Ok(count)
}

/// Identity of an input volume, echoed in reports and ground-truth files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub dims: [usize; 4],
    pub sha256: String,
}

/// A 2D slice across all volumes, values grouped per voxel:
/// `values[(i + width * j) * volumes + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceData {
    width: usize,
    height: usize,
    volumes: usize,
    values: Vec<f64>,
}

impl SliceData {
    pub fn new(width: usize, height: usize, volumes: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || volumes == 0 {
            return Err(Error::Config("slice dimensions must be positive".into()));
        }
        if values.len() != width * height * volumes {
            return Err(Error::Config(format!(
                "slice of {width}x{height}x{volumes} needs {} values, got {}",
                width * height * volumes,
                values.len()
            )));
        }
        Ok(SliceData {
            width,
            height,
            volumes,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn volumes(&self) -> usize {
        self.volumes
    }

    pub fn n_voxels(&self) -> usize {
        self.width * self.height
    }

    /// All volume values of in-plane voxel `k`.
    pub fn voxel(&self, k: usize) -> &[f64] {
        &self.values[k * self.volumes..(k + 1) * self.volumes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Boolean in-plane mask, `bits[i + width * j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl SliceMask {
    pub fn empty(width: usize, height: usize) -> Self {
        SliceMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 4]) -> Volume4D {
        let n: usize = dims.iter().product();
        Volume4D::new(dims, (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn slices_pick_the_right_voxels() {
        let vol = ramp([3, 4, 5, 2]);
        let s = vol.slice(Axis::Z, 2).unwrap();
        assert_eq!((s.width(), s.height(), s.volumes()), (3, 4, 2));
        assert_eq!(
            s.voxel(1 + 3 * 2),
            &[vol.get(1, 2, 2, 0) as f64, vol.get(1, 2, 2, 1) as f64]
        );
        let s = vol.slice(Axis::X, 1).unwrap();
        assert_eq!((s.width(), s.height()), (4, 5));
        assert_eq!(s.voxel(3 + 4 * 4)[1], vol.get(1, 3, 4, 1) as f64);
        let s = vol.slice(Axis::Y, 3).unwrap();
        assert_eq!((s.width(), s.height()), (3, 5));
        assert_eq!(s.voxel(2 + 3)[0], vol.get(2, 3, 1, 0) as f64);
        assert!(vol.slice(Axis::Z, 5).is_err());
    }

    #[test]
    fn median_odd_and_even() {
        let v = Volume4D::new([5, 1, 1, 1], vec![5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(v.median().unwrap(), 3.0);
        let v = Volume4D::new([4, 1, 1, 1], vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(v.median().unwrap(), 2.5);
    }

    #[test]
    fn validation() {
        assert!(Volume4D::new([2, 2, 1, 1], vec![0.0; 3]).is_err());
        assert!(Volume4D::new([2, 0, 1, 1], vec![]).is_err());
        assert!(Volume4D::new([1, 1, 1, 1], vec![f32::NAN]).is_err());
        assert!(matches!(
            checked_voxel_count([513, 512, 512, 512]),
            Err(Error::DimensionOverflow(_))
        ));
        assert!(ramp([2, 2, 2, 3]).permute_volumes(&[0, 0, 1]).is_err());
    }

    #[test]
    fn permute_and_fingerprint() {
        let vol = ramp([2, 2, 2, 3]);
        let p = vol.permute_volumes(&[2, 0, 1]).unwrap();
        assert_eq!(p.volume(0), vol.volume(2));
        assert_ne!(p.fingerprint(), vol.fingerprint());
        assert_eq!(vol.fingerprint(), ramp([2, 2, 2, 3]).fingerprint());
        assert_eq!(vol.fingerprint().sha256.len(), 64);
    }
}
