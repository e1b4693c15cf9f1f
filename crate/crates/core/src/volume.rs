//! 3D scalar volumes with physical geometry and the SPNV container format.
//!
//! SPNV layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPNV"
//! 4       2     version (u16) = 1
//! 6       12    dims nx, ny, nz (3 × u32)
//! 18      12    spacing sx, sy, sz in mm (3 × f32)
//! 30      12    origin x, y, z in mm (3 × f32)
//! 42      4·n   voxels (f32), x fastest, then y, then z
//! ```

use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SPNV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 42;

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("bad magic {0:?}, expected \"SPNV\"")]
    BadMagic([u8; 4]),
    #[error("unsupported SPNV version {0}")]
    UnsupportedVersion(u16),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    NonPositiveSpacing([f32; 3]),
    #[error("dimensions must be positive, got {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("origin must be finite, got {0:?}")]
    NonFiniteOrigin([f32; 3]),
    #[error("voxel {index} is not finite")]
    NonFiniteValue { index: usize },
    #[error("voxel {index} = {value} outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f32 },
    #[error("data length {found} does not match dims product {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar image volume. Voxel `(i, j, k)` sits at `origin + (i, j, k) · spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f32; 3],
    origin: [f32; 3],
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, origin)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteValue { index });
        }
        Ok(Volume3D {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        value: f32,
    ) -> Result<Self, VolumeError> {
        Self::new(
            dims,
            spacing,
            origin,
            vec![value; dims[0] * dims[1] * dims[2]],
        )
    }

    /// Builds a volume by evaluating `f` at every voxel's physical position.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        origin: [f32; 3],
        mut f: impl FnMut([f64; 3]) -> f32,
    ) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, origin)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(position(origin, spacing, [i, j, k])));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) {
        assert!(value.is_finite(), "voxel values must be finite");
        let idx = self.index(i, j, k);
        self.data[idx] = value;
    }

    /// Applies `f` to every voxel. Non-finite results panic.
    pub fn map_in_place(&mut self, mut f: impl FnMut(f32) -> f32) {
        for v in &mut self.data {
            *v = f(*v);
            assert!(v.is_finite(), "voxel values must be finite");
        }
    }

    /// Physical position of a voxel centre in mm.
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        position(self.origin, self.spacing, [i, j, k])
    }

    pub fn same_geometry(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Extracts slice `k` along the third axis as a one-slice volume.
    pub fn slice_z(&self, k: usize) -> Volume3D {
        let [nx, ny, _] = self.dims;
        let start = self.index(0, 0, k);
        let mut origin = self.origin;
        origin[2] = (self.origin[2] as f64 + k as f64 * self.spacing[2] as f64) as f32;
        Volume3D {
            dims: [nx, ny, 1],
            spacing: self.spacing,
            origin,
            data: self.data[start..start + nx * ny].to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for o in self.origin {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VolumeError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(VolumeError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(VolumeError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(VolumeError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(VolumeError::UnsupportedVersion(version));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let dims = [u32_at(6) as usize, u32_at(10) as usize, u32_at(14) as usize];
        let spacing = [f32_at(18), f32_at(22), f32_at(26)];
        let origin = [f32_at(30), f32_at(34), f32_at(38)];
        check_geometry(dims, spacing, origin)?;

        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(VolumeError::TruncatedPayload {
                expected: usize::MAX,
                found: bytes.len() - HEADER_LEN,
            })?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < count {
            return Err(VolumeError::TruncatedPayload {
                expected: count,
                found: payload.len(),
            });
        }
        if payload.len() > count {
            return Err(VolumeError::TrailingBytes(payload.len() - count));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dims, spacing, origin, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), VolumeError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, VolumeError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn position(origin: [f32; 3], spacing: [f32; 3], idx: [usize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| origin[a] as f64 + idx[a] as f64 * spacing[a] as f64)
}

fn check_geometry(
    dims: [usize; 3],
    spacing: [f32; 3],
    origin: [f32; 3],
) -> Result<(), VolumeError> {
    if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(VolumeError::ZeroDimension(dims));
    }
    if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(VolumeError::NonPositiveSpacing(spacing));
    }
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(VolumeError::NonFiniteOrigin(origin));
    }
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D, VolumeError> {
    Volume3D::from_bytes(&std::fs::read(path)?)
}

pub fn write_volume(volume: &Volume3D, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    std::fs::write(path, volume.to_bytes())?;
    Ok(())
}

/// A volume whose voxels are probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume(Volume3D);

impl MaskVolume {
    pub fn new(volume: Volume3D) -> Result<Self, VolumeError> {
        if let Some((index, &value)) = volume
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(VolumeError::ProbabilityOutOfRange { index, value });
        }
        Ok(MaskVolume(volume))
    }

    pub fn volume(&self) -> &Volume3D {
        &self.0
    }

    pub fn into_volume(self) -> Volume3D {
        self.0
    }
}

impl std::ops::Deref for MaskVolume {
    type Target = Volume3D;

    fn deref(&self) -> &Volume3D {
        &self.0
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume, VolumeError> {
    MaskVolume::new(read_volume(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Volume3D {
        Volume3D::new(
            [2, 2, 1],
            [0.5, 0.5, 3.0],
            [-1.0, 2.0, 0.25],
            vec![1.0, -2.5, 3.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let v = small();
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        let back = Volume3D::from_bytes(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = small().to_bytes();
        assert_eq!(&bytes[..4], b"SPNV");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[26..30], &3.0f32.to_le_bytes());
        assert_eq!(&bytes[42..46], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = small().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(
            matches!(Volume3D::from_bytes(&bytes), Err(VolumeError::BadMagic(m)) if &m == b"XXXX")
        );
    }

    #[test]
    fn truncated_payload() {
        let v = Volume3D::filled([4, 4, 4], [1.0; 3], [0.0; 3], 1.0).unwrap();
        let bytes = v.to_bytes();
        let cut = &bytes[..HEADER_LEN + 32 * 4];
        assert!(matches!(
            Volume3D::from_bytes(cut),
            Err(VolumeError::TruncatedPayload {
                expected: 256,
                found: 128
            })
        ));
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut bytes = small().to_bytes();
        bytes[18..22].copy_from_slice(&0.0f32.to_le_bytes());
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(VolumeError::NonPositiveSpacing(_))
        ));
        let mut bytes = small().to_bytes();
        bytes[22..26].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(VolumeError::NonPositiveSpacing(_))
        ));
        let mut bytes = small().to_bytes();
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(VolumeError::ZeroDimension(_))
        ));
        let mut bytes = small().to_bytes();
        bytes[42..46].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(VolumeError::NonFiniteValue { index: 0 })
        ));
        let mut bytes = small().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Volume3D::from_bytes(&bytes),
            Err(VolumeError::TrailingBytes(1))
        ));
    }

    #[test]
    fn mask_range() {
        let v = Volume3D::new([2, 1, 1], [1.0; 3], [0.0; 3], vec![0.0, 1.5]).unwrap();
        assert!(matches!(
            MaskVolume::new(v),
            Err(VolumeError::ProbabilityOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.spnv");
        write_volume(&small(), &path).unwrap();
        assert_eq!(read_volume(&path).unwrap(), small());
    }

    proptest! {
        #[test]
        fn arbitrary_volumes_round_trip(
            dims in (1usize..5, 1usize..5, 1usize..4),
            spacing in prop::array::uniform3(0.01f32..10.0),
            origin in prop::array::uniform3(-500f32..500.0),
            seed in any::<u32>(),
        ) {
            let n = dims.0 * dims.1 * dims.2;
            let data: Vec<f32> = (0..n).map(|i| ((seed as f32) * 0.37 + i as f32).sin() * 1e3).collect();
            let v = Volume3D::new([dims.0, dims.1, dims.2], spacing, origin, data).unwrap();
            let bytes = v.to_bytes();
            let back = Volume3D::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
