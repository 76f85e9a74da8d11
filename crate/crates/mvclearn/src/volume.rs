//! Volumetric preprocessing: HU windowing, isotropic resampling, lesion crops.
//!
//! A [`Volume`] is a 3D scalar grid with physical voxel spacing, indexed in
//! `(x, y, z)` order. Values are either raw Hounsfield units or normalized
//! intensities in `[0, 1]`; the `normalized` flag tracks which. Physical
//! coordinates put the center of voxel `i` on axis `k` at `i * spacing[k]` mm.
//!
//! The on-disk format is a raw little-endian scalar array (`int16` for HU,
//! `float32` for normalized values) in C order over dims `[nx, ny, nz]`
//! (x slowest, z fastest), plus a JSON sidecar with dims, spacing, dtype and
//! the normalized flag.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default HU window, `[-1000, 400]`.
pub const DEFAULT_WINDOW: (f64, f64) = (-1000.0, 400.0);

/// 3D scalar grid with per-axis voxel spacing in mm, index order `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    spacing: [f64; 3],
    normalized: bool,
}

impl Volume {
    pub fn new(data: Array3<f64>, spacing: [f64; 3], normalized: bool) -> Result<Self> {
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidSpacing { spacing });
        }
        let dims = data.dim();
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::Config {
                reason: format!("volume dims {:?} must be >= 1 on every axis", dims),
            });
        }
        if normalized && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config {
                reason: "normalized volume has values outside [0, 1]".into(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "volume",
                reason: "non-finite voxel value".into(),
            });
        }
        Ok(Volume {
            data,
            spacing,
            normalized,
        })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn dims(&self) -> [usize; 3] {
        let (nx, ny, nz) = self.data.dim();
        [nx, ny, nz]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Clamp raw HU values to `[lo, hi]` and rescale to `[0, 1]`.
    ///
    /// Each output value is `clamp((x - lo) / (hi - lo), 0, 1)`; shape and
    /// spacing are unchanged and the result is flagged normalized.
    pub fn hu_window(&self, lo: f64, hi: f64) -> Result<Volume> {
        if self.normalized {
            return Err(Error::AlreadyNormalized);
        }
        if !(lo < hi) {
            return Err(Error::InvalidWindow { lo, hi });
        }
        let width = hi - lo;
        let data = self.data.mapv(|x| ((x - lo) / width).clamp(0.0, 1.0));
        Ok(Volume {
            data,
            spacing: self.spacing,
            normalized: true,
        })
    }

    /// `hu_window` with the default `[-1000, 400]` window.
    pub fn hu_window_default(&self) -> Result<Volume> {
        self.hu_window(DEFAULT_WINDOW.0, DEFAULT_WINDOW.1)
    }

    /// Trilinearly resample onto an isotropic grid of `target_mm` spacing.
    ///
    /// Output dims per axis are `round(dim * spacing / target)`, at least 1.
    /// Output voxel `i` samples the source at physical `i * target_mm`, i.e.
    /// continuous source index `i * target_mm / spacing`; coordinates past the
    /// source boundary clamp to it.
    pub fn resample_isotropic(&self, target_mm: f64) -> Result<Volume> {
        if !(target_mm > 0.0) || !target_mm.is_finite() {
            return Err(Error::Config {
                reason: format!("target spacing {target_mm} must be positive"),
            });
        }
        let [nx, ny, nz] = self.dims();
        let out_dim = |n: usize, s: f64| -> usize {
            ((n as f64 * s / target_mm).round() as usize).max(1)
        };
        let (ox, oy, oz) = (
            out_dim(nx, self.spacing[0]),
            out_dim(ny, self.spacing[1]),
            out_dim(nz, self.spacing[2]),
        );
        let scale = [
            target_mm / self.spacing[0],
            target_mm / self.spacing[1],
            target_mm / self.spacing[2],
        ];
        let mut out = Array3::<f64>::zeros((ox, oy, oz));
        for ix in 0..ox {
            let x = (ix as f64 * scale[0]).clamp(0.0, (nx - 1) as f64);
            for iy in 0..oy {
                let y = (iy as f64 * scale[1]).clamp(0.0, (ny - 1) as f64);
                for iz in 0..oz {
                    let z = (iz as f64 * scale[2]).clamp(0.0, (nz - 1) as f64);
                    out[(ix, iy, iz)] = trilinear(&self.data, x, y, z);
                }
            }
        }
        Ok(Volume {
            data: out,
            spacing: [target_mm; 3],
            normalized: self.normalized,
        })
    }

    /// Crop a `round(side_mm)`-voxel cube centered on the voxel nearest
    /// `center_mm`. Regions outside the volume are zero-filled; a crop with no
    /// overlap at all is rejected as a corrupt annotation.
    ///
    /// Requires a normalized volume isotropic at 1 mm.
    pub fn crop_lesion(
        &self,
        center_mm: [f64; 3],
        side_mm: f64,
        lesion_id: &str,
    ) -> Result<LesionCube> {
        if !self.normalized {
            return Err(Error::NotNormalized { op: "crop_lesion" });
        }
        if self.spacing.iter().any(|s| (s - 1.0).abs() > 1e-9) {
            return Err(Error::NotIsotropic {
                spacing: self.spacing,
                expected: 1.0,
            });
        }
        if !(side_mm > 0.0) {
            return Err(Error::InvalidAnnotation {
                reason: format!("crop side {side_mm} mm must be positive"),
            });
        }
        let side = (side_mm.round() as usize).max(1);
        let dims = self.dims();
        let mut start = [0i64; 3];
        for k in 0..3 {
            let center_voxel = center_mm[k].round() as i64;
            start[k] = center_voxel - (side / 2) as i64;
            // Empty intersection on any axis means the cube misses the volume.
            let end = start[k] + side as i64;
            if end <= 0 || start[k] >= dims[k] as i64 {
                return Err(Error::CropOutOfBounds { center_mm, side_mm });
            }
        }
        let mut cube = Array3::<f64>::zeros((side, side, side));
        for cx in 0..side {
            let sx = start[0] + cx as i64;
            if sx < 0 || sx >= dims[0] as i64 {
                continue;
            }
            for cy in 0..side {
                let sy = start[1] + cy as i64;
                if sy < 0 || sy >= dims[1] as i64 {
                    continue;
                }
                for cz in 0..side {
                    let sz = start[2] + cz as i64;
                    if sz < 0 || sz >= dims[2] as i64 {
                        continue;
                    }
                    cube[(cx, cy, cz)] = self.data[(sx as usize, sy as usize, sz as usize)];
                }
            }
        }
        LesionCube::new(cube, lesion_id)
    }
}

/// Fixed-size normalized cube cropped around a lesion center; 1 voxel = 1 mm.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionCube {
    data: Array3<f64>,
    lesion_id: String,
}

impl LesionCube {
    pub fn new(data: Array3<f64>, lesion_id: &str) -> Result<Self> {
        let (sx, sy, sz) = data.dim();
        if sx != sy || sy != sz || sx == 0 {
            return Err(Error::Config {
                reason: format!("lesion cube dims ({sx}, {sy}, {sz}) must be a non-empty cube"),
            });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config {
                reason: "lesion cube has values outside [0, 1]".into(),
            });
        }
        Ok(LesionCube {
            data,
            lesion_id: lesion_id.to_string(),
        })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Cube side in voxels (equivalently mm).
    pub fn side(&self) -> usize {
        self.data.dim().0
    }

    pub fn lesion_id(&self) -> &str {
        &self.lesion_id
    }

    /// Reinterpret the cube as a normalized 1 mm isotropic volume.
    pub fn to_volume(&self) -> Volume {
        Volume {
            data: self.data.clone(),
            spacing: [1.0; 3],
            normalized: true,
        }
    }
}

/// How the crop side is chosen from the lesion annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CropPolicy {
    /// Fixed cube side in mm (nodule datasets).
    FixedNodule { fixed_mm: f64 },
    /// Longest diameter plus a margin in mm (multi-disease datasets).
    DiameterPlusMargin { margin_mm: f64 },
}

impl Default for CropPolicy {
    fn default() -> Self {
        CropPolicy::FixedNodule { fixed_mm: 64.0 }
    }
}

impl CropPolicy {
    pub fn diameter_plus_margin() -> Self {
        CropPolicy::DiameterPlusMargin { margin_mm: 20.0 }
    }

    /// Cube side in mm for a lesion with the given longest diameter.
    pub fn crop_side_for(&self, longest_diameter_mm: f64) -> Result<f64> {
        if longest_diameter_mm < 0.0 || !longest_diameter_mm.is_finite() {
            return Err(Error::InvalidAnnotation {
                reason: format!("negative or non-finite diameter {longest_diameter_mm}"),
            });
        }
        Ok(match self {
            CropPolicy::FixedNodule { fixed_mm } => *fixed_mm,
            CropPolicy::DiameterPlusMargin { margin_mm } => longest_diameter_mm + margin_mm,
        })
    }
}

/// Trilinear interpolation at continuous index `(x, y, z)`, which must lie
/// within `[0, dim-1]` on every axis (callers clamp or zero-fill first).
pub(crate) fn trilinear(data: &Array3<f64>, x: f64, y: f64, z: f64) -> f64 {
    let (nx, ny, nz) = data.dim();
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let x1 = (x0 + 1).min(nx - 1);
    let y1 = (y0 + 1).min(ny - 1);
    let z1 = (z0 + 1).min(nz - 1);
    let wx = x - x0 as f64;
    let wy = y - y0 as f64;
    let wz = z - z0 as f64;

    let c00 = data[(x0, y0, z0)] * (1.0 - wx) + data[(x1, y0, z0)] * wx;
    let c10 = data[(x0, y1, z0)] * (1.0 - wx) + data[(x1, y1, z0)] * wx;
    let c01 = data[(x0, y0, z1)] * (1.0 - wx) + data[(x1, y0, z1)] * wx;
    let c11 = data[(x0, y1, z1)] * (1.0 - wx) + data[(x1, y1, z1)] * wx;
    let c0 = c00 * (1.0 - wy) + c10 * wy;
    let c1 = c01 * (1.0 - wy) + c11 * wy;
    c0 * (1.0 - wz) + c1 * wz
}

/// Trilinear sample that reads 0 anywhere outside `[0, dim-1]^3`.
pub(crate) fn trilinear_zero_outside(data: &Array3<f64>, x: f64, y: f64, z: f64) -> f64 {
    let (nx, ny, nz) = data.dim();
    if x < 0.0
        || y < 0.0
        || z < 0.0
        || x > (nx - 1) as f64
        || y > (ny - 1) as f64
        || z > (nz - 1) as f64
    {
        return 0.0;
    }
    trilinear(data, x, y, z)
}

// --- file format ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    normalized: bool,
}

fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

/// Write `volume.raw` (int16 for HU, float32 for normalized, little-endian,
/// C order over dims [nx, ny, nz]) plus the `volume.json` sidecar.
pub fn save_volume(volume: &Volume, raw_path: &Path) -> Result<()> {
    let sidecar = VolumeSidecar {
        dims: volume.dims(),
        spacing_mm: volume.spacing(),
        dtype: if volume.normalized { "float32" } else { "int16" }.to_string(),
        normalized: volume.normalized,
    };
    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    if volume.normalized {
        for v in volume.data.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    } else {
        for v in volume.data.iter() {
            let h = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            bytes.extend_from_slice(&h.to_le_bytes());
        }
    }
    let mut f = fs::File::create(raw_path)
        .map_err(|e| Error::io(format!("create {}", raw_path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(format!("write {}", raw_path.display()), e))?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(sidecar_path(raw_path), json)
        .map_err(|e| Error::io(format!("write {}", sidecar_path(raw_path).display()), e))?;
    Ok(())
}

/// Load a volume written by [`save_volume`].
pub fn load_volume(raw_path: &Path) -> Result<Volume> {
    let sc_path = sidecar_path(raw_path);
    let sc_text = fs::read_to_string(&sc_path)
        .map_err(|e| Error::io(format!("read {}", sc_path.display()), e))?;
    let sc: VolumeSidecar = serde_json::from_str(&sc_text).map_err(|e| Error::Format {
        path: sc_path.clone(),
        reason: e.to_string(),
    })?;
    let n = sc.dims[0] * sc.dims[1] * sc.dims[2];
    let elem = match sc.dtype.as_str() {
        "float32" => 4,
        "int16" => 2,
        other => {
            return Err(Error::Format {
                path: sc_path,
                reason: format!("unknown dtype {other:?}"),
            })
        }
    };
    let mut f = fs::File::open(raw_path)
        .map_err(|e| Error::io(format!("open {}", raw_path.display()), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("read {}", raw_path.display()), e))?;
    if bytes.len() != n * elem {
        return Err(Error::Format {
            path: raw_path.to_path_buf(),
            reason: format!("expected {} bytes for dims {:?}, found {}", n * elem, sc.dims, bytes.len()),
        });
    }
    let mut flat = Vec::with_capacity(n);
    if sc.dtype == "float32" {
        for c in bytes.chunks_exact(4) {
            flat.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
    } else {
        for c in bytes.chunks_exact(2) {
            flat.push(i16::from_le_bytes([c[0], c[1]]) as f64);
        }
    }
    let data = Array3::from_shape_vec((sc.dims[0], sc.dims[1], sc.dims[2]), flat)
        .map_err(|e| Error::Format {
            path: raw_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Volume::new(data, sc.spacing_mm, sc.normalized)
}
