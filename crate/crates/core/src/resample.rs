//! Oblique resampling of disc-aligned axial and sagittal volumes.

use crate::anatomy::DiscLevel;
use crate::curve::{DiscFrame, Frame3};
use crate::volume::{Volume3D, VolumeError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Output grid of one disc volume: voxel counts and physical extent in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscGrid {
    pub dims: [usize; 3],
    pub extent_mm: [f64; 3],
}

impl DiscGrid {
    pub fn spacing(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.extent_mm[a] / self.dims[a] as f64)
    }

    /// Frame-local position of voxel `(i, j, k)`; the grid is centred on the frame origin.
    pub fn local(&self, idx: [usize; 3]) -> [f64; 3] {
        let s = self.spacing();
        [0, 1, 2].map(|a| (idx[a] as f64 - (self.dims[a] as f64 - 1.0) / 2.0) * s[a])
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// 360 × 360 × 8 voxels over 9 × 9 × 1.6 cm.
pub const AXIAL_GRID: DiscGrid = DiscGrid {
    dims: [360, 360, 8],
    extent_mm: [90.0, 90.0, 16.0],
};

/// 160 × 320 × 25 voxels over 4 × 8 × 5 cm.
pub const SAGITTAL_GRID: DiscGrid = DiscGrid {
    dims: [160, 320, 25],
    extent_mm: [40.0, 80.0, 50.0],
};

/// Minimum fraction of target voxels that must fall inside the source.
pub const MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ResampleError {
    #[error("only {in_bounds} of {total} target voxels fall inside the source")]
    InsufficientCoverage { in_bounds: usize, total: usize },
    #[error("frame axes are not orthonormal (Gram error {0:e})")]
    NonOrthonormalFrame(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Trilinear sampling of an axis-aligned volume at world positions.
pub struct Sampler<'a> {
    volume: &'a Volume3D,
    origin: [f64; 3],
    inv_spacing: [f64; 3],
}

impl<'a> Sampler<'a> {
    pub fn new(volume: &'a Volume3D) -> Self {
        let o = volume.origin();
        let s = volume.spacing();
        Sampler {
            volume,
            origin: [o[0] as f64, o[1] as f64, o[2] as f64],
            inv_spacing: [1.0 / s[0] as f64, 1.0 / s[1] as f64, 1.0 / s[2] as f64],
        }
    }

    /// Interpolated value at `p` (mm), or `None` outside the voxel-centre hull. Axes of
    /// length one accept positions within half a voxel of the single sample.
    pub fn sample(&self, p: [f64; 3]) -> Option<f64> {
        let dims = self.volume.dims();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let c = (p[a] - self.origin[a]) * self.inv_spacing[a];
            let n = dims[a];
            if n == 1 {
                if c.abs() > 0.5 {
                    return None;
                }
                continue;
            }
            let max = (n - 1) as f64;
            if !(0.0..=max).contains(&c) {
                return None;
            }
            let b = (c.floor() as usize).min(n - 2);
            base[a] = b;
            frac[a] = c - b as f64;
        }
        let data = self.volume.data();
        let step = [1, dims[0], dims[0] * dims[1]];
        let corner = base[0] + step[1] * base[1] + step[2] * base[2];
        let mut acc = 0.0;
        for dz in 0..2 {
            if dims[2] == 1 && dz == 1 {
                continue;
            }
            let wz = if dims[2] == 1 {
                1.0
            } else if dz == 1 {
                frac[2]
            } else {
                1.0 - frac[2]
            };
            for dy in 0..2 {
                if dims[1] == 1 && dy == 1 {
                    continue;
                }
                let wy = if dims[1] == 1 {
                    1.0
                } else if dy == 1 {
                    frac[1]
                } else {
                    1.0 - frac[1]
                };
                for dx in 0..2 {
                    if dims[0] == 1 && dx == 1 {
                        continue;
                    }
                    let wx = if dims[0] == 1 {
                        1.0
                    } else if dx == 1 {
                        frac[0]
                    } else {
                        1.0 - frac[0]
                    };
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        acc += w * data[corner + dx * step[0] + dy * step[1] + dz * step[2]] as f64;
                    }
                }
            }
        }
        Some(acc)
    }
}

/// A resampled volume before normalization plus its out-of-bounds count.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub volume: Volume3D,
    pub out_of_bounds: usize,
}

/// Samples `source` on `grid` placed in `frame`. Voxels outside the source are 0.
///
/// The returned volume's header origin is the frame-local position of voxel `(0,0,0)`;
/// the world placement lives in `frame`.
pub fn resample_raw(
    source: &Volume3D,
    frame: &Frame3,
    grid: &DiscGrid,
) -> Result<Resampled, ResampleError> {
    let gram = frame.gram_error();
    if gram > 1e-9 {
        return Err(ResampleError::NonOrthonormalFrame(gram));
    }
    let sampler = Sampler::new(source);
    let [nx, ny, nz] = grid.dims;
    let slices: Vec<(Vec<f32>, usize)> = (0..nz)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::with_capacity(nx * ny);
            let mut missed = 0;
            for j in 0..ny {
                for i in 0..nx {
                    let world = frame.to_world(grid.local([i, j, k]));
                    match sampler.sample(world) {
                        Some(v) => out.push(v as f32),
                        None => {
                            missed += 1;
                            out.push(0.0);
                        }
                    }
                }
            }
            (out, missed)
        })
        .collect();
    let out_of_bounds = slices.iter().map(|s| s.1).sum();
    let data: Vec<f32> = slices.into_iter().flat_map(|s| s.0).collect();
    let spacing = grid.spacing().map(|s| s as f32);
    let origin = grid.local([0, 0, 0]).map(|o| o as f32);
    Ok(Resampled {
        volume: Volume3D::new(grid.dims, spacing, origin, data)?,
        out_of_bounds,
    })
}

/// Subtracts the volume mean from every voxel.
pub fn subtract_mean(volume: &mut Volume3D) -> f64 {
    let mean = volume.mean();
    volume.map_in_place(|v| (v as f64 - mean) as f32);
    // Second pass removes the residual left by f32 rounding.
    let residual = volume.mean();
    volume.map_in_place(|v| (v as f64 - residual) as f32);
    mean + residual
}

/// Axial and sagittal volumes for one disc, mean-subtracted.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscVolumePair {
    pub level: DiscLevel,
    pub axial: Volume3D,
    pub sagittal: Volume3D,
    pub axial_out_of_bounds: usize,
    pub sagittal_out_of_bounds: usize,
    /// Means removed during normalization.
    pub axial_mean: f64,
    pub sagittal_mean: f64,
}

/// Extracts both disc-aligned volumes for `frame` and normalizes each by mean
/// subtraction. Fails if less than half of either grid lies inside `source`.
pub fn resample_disc_volume(
    source: &Volume3D,
    frame: &DiscFrame,
) -> Result<DiscVolumePair, ResampleError> {
    let mut axial = resample_raw(source, &frame.axial, &AXIAL_GRID)?;
    let mut sagittal = resample_raw(source, &frame.sagittal, &SAGITTAL_GRID)?;
    for (r, grid) in [(&axial, &AXIAL_GRID), (&sagittal, &SAGITTAL_GRID)] {
        let total = grid.voxel_count();
        let in_bounds = total - r.out_of_bounds;
        if (in_bounds as f64) < MIN_COVERAGE * total as f64 {
            return Err(ResampleError::InsufficientCoverage { in_bounds, total });
        }
    }
    let axial_mean = subtract_mean(&mut axial.volume);
    let sagittal_mean = subtract_mean(&mut sagittal.volume);
    Ok(DiscVolumePair {
        level: frame.location.level,
        axial: axial.volume,
        sagittal: sagittal.volume,
        axial_out_of_bounds: axial.out_of_bounds,
        sagittal_out_of_bounds: sagittal.out_of_bounds,
        axial_mean,
        sagittal_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{build_frames, DiscLocation};

    fn linear_source() -> Volume3D {
        Volume3D::from_fn([24, 28, 20], [1.0, 1.0, 1.0], [-12.0, -14.0, -10.0], |p| {
            (p[0] + 2.0 * p[1] + 3.0 * p[2]) as f32
        })
        .unwrap()
    }

    #[test]
    fn grids_match_published_sizes() {
        assert_eq!(AXIAL_GRID.spacing(), [0.25, 0.25, 2.0]);
        assert_eq!(SAGITTAL_GRID.spacing(), [0.25, 0.25, 2.0]);
        let l = AXIAL_GRID.local([0, 0, 0]);
        let h = AXIAL_GRID.local([359, 359, 7]);
        assert!((l[0] + h[0]).abs() < 1e-12 && (l[2] + h[2]).abs() < 1e-12);
    }

    #[test]
    fn trilinear_is_exact_on_linear_fields() {
        let src = linear_source();
        let s = Sampler::new(&src);
        for p in [[0.3, -2.7, 4.1], [-11.5, 13.0, 9.0], [11.0, 13.0, 9.0]] {
            let v = s.sample(p).unwrap();
            assert!((v - (p[0] + 2.0 * p[1] + 3.0 * p[2])).abs() < 1e-5, "{p:?}");
        }
        assert!(s.sample([11.01, 0.0, 0.0]).is_none());
    }

    #[test]
    fn axis_aligned_frame_reproduces_field() {
        let src = linear_source();
        let grid = DiscGrid {
            dims: [16, 20, 10],
            extent_mm: [8.0, 10.0, 5.0],
        };
        let frame = Frame3::identity([0.5, -1.0, 0.25]);
        let r = resample_raw(&src, &frame, &grid).unwrap();
        assert_eq!(r.out_of_bounds, 0);
        for k in 0..10 {
            for j in 0..20 {
                for i in 0..16 {
                    let p = frame.to_world(grid.local([i, j, k]));
                    let want = p[0] + 2.0 * p[1] + 3.0 * p[2];
                    assert!((r.volume.get(i, j, k) as f64 - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn identity_frame_on_matching_grid_returns_input() {
        let src = Volume3D::from_fn([8, 6, 4], [0.5, 0.5, 2.0], [-1.75, -1.25, -3.0], |p| {
            (p[0] * p[1] + p[2].sin()) as f32
        })
        .unwrap();
        let grid = DiscGrid {
            dims: [8, 6, 4],
            extent_mm: [4.0, 3.0, 8.0],
        };
        let r = resample_raw(&src, &Frame3::identity([0.0; 3]), &grid).unwrap();
        assert_eq!(r.out_of_bounds, 0);
        for (a, b) in r.volume.data().iter().zip(src.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_source_normalizes_to_zero() {
        let src =
            Volume3D::filled([100, 100, 100], [1.0, 1.0, 1.0], [-50.0, -50.0, -50.0], 7.5).unwrap();
        let loc = DiscLocation {
            level: DiscLevel::L4L5,
            disc_point: [0.0, 0.0],
            tangent: [0.0, 1.0],
            plane_normal: [1.0, 0.0],
        };
        let frame = build_frames(&loc, [0.0, 0.0, 1.0], 0.0);
        let raw = resample_raw(&src, &frame.axial, &AXIAL_GRID).unwrap();
        assert!(raw.volume.data().iter().all(|&v| v == 7.5));
        let pair = resample_disc_volume(&src, &frame).unwrap();
        assert_eq!(pair.axial.dims(), [360, 360, 8]);
        assert_eq!(pair.sagittal.dims(), [160, 320, 25]);
        assert!(pair.axial.data().iter().all(|&v| v == 0.0));
        assert!(pair.sagittal.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coverage_below_half_fails() {
        let src = Volume3D::filled([10, 10, 10], [1.0; 3], [0.0; 3], 1.0).unwrap();
        let loc = DiscLocation {
            level: DiscLevel::L1L2,
            disc_point: [5.0, 5.0],
            tangent: [0.0, 1.0],
            plane_normal: [1.0, 0.0],
        };
        let frame = build_frames(&loc, [0.0, 0.0, 1.0], 5.0);
        assert!(matches!(
            resample_disc_volume(&src, &frame),
            Err(ResampleError::InsufficientCoverage { .. })
        ));
    }

    #[test]
    fn non_orthonormal_frame_rejected() {
        let src = linear_source();
        let mut frame = Frame3::identity([0.0; 3]);
        frame.axes[0] = [1.0, 0.1, 0.0];
        assert!(matches!(
            resample_raw(&src, &frame, &AXIAL_GRID),
            Err(ResampleError::NonOrthonormalFrame(_))
        ));
    }
}
