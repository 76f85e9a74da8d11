//! Nine fixed-orientation 2D views of a lesion cube.
//!
//! The orientations are the cube's nine symmetry planes: the three
//! face-parallel planes plus the six face-diagonal ones. Each view samples an
//! `s x s` grid (1 mm in-plane spacing, `s` = cube side) on the plane through
//! the continuous cube center, reads the cube by trilinear interpolation
//! (zero outside), and bilinearly resizes to the model input size.
//!
//! View stacks persist as raw little-endian float32 arrays `[M, out, out]`
//! (C order) with a JSON sidecar `{lesion_id, plane_ids, out_size}`.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{trilinear_zero_outside, LesionCube};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One of the nine sampling orientations: a unit normal plus an orthonormal
/// in-plane basis `(u_axis, v_axis)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPlane {
    pub id: u8,
    pub normal: [f64; 3],
    pub u_axis: [f64; 3],
    pub v_axis: [f64; 3],
}

/// The full orientation table in id order (1..=9).
pub fn plane_table() -> [ViewPlane; 9] {
    let d = FRAC_1_SQRT_2;
    [
        ViewPlane { id: 1, normal: [0.0, 0.0, 1.0], u_axis: [1.0, 0.0, 0.0], v_axis: [0.0, 1.0, 0.0] },
        ViewPlane { id: 2, normal: [0.0, 1.0, 0.0], u_axis: [1.0, 0.0, 0.0], v_axis: [0.0, 0.0, 1.0] },
        ViewPlane { id: 3, normal: [1.0, 0.0, 0.0], u_axis: [0.0, 1.0, 0.0], v_axis: [0.0, 0.0, 1.0] },
        ViewPlane { id: 4, normal: [d, d, 0.0], u_axis: [d, -d, 0.0], v_axis: [0.0, 0.0, 1.0] },
        ViewPlane { id: 5, normal: [d, -d, 0.0], u_axis: [d, d, 0.0], v_axis: [0.0, 0.0, 1.0] },
        ViewPlane { id: 6, normal: [d, 0.0, d], u_axis: [d, 0.0, -d], v_axis: [0.0, 1.0, 0.0] },
        ViewPlane { id: 7, normal: [d, 0.0, -d], u_axis: [d, 0.0, d], v_axis: [0.0, 1.0, 0.0] },
        ViewPlane { id: 8, normal: [0.0, d, d], u_axis: [0.0, d, -d], v_axis: [1.0, 0.0, 0.0] },
        ViewPlane { id: 9, normal: [0.0, d, -d], u_axis: [0.0, d, d], v_axis: [1.0, 0.0, 0.0] },
    ]
}

/// Look up a single plane by id.
pub fn plane(id: u8) -> Result<ViewPlane> {
    if !(1..=9).contains(&id) {
        return Err(Error::UnknownPlane { id });
    }
    Ok(plane_table()[(id - 1) as usize])
}

/// A single resized 2D view of one lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct View2D {
    pub pixels: Array2<f64>,
    pub plane_id: u8,
    pub lesion_id: String,
}

impl View2D {
    pub fn out_size(&self) -> usize {
        self.pixels.dim().0
    }
}

/// Ordered collection of 2..=9 views of one lesion, sorted by plane id.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    lesion_id: String,
    views: Vec<View2D>,
}

impl ViewSet {
    pub fn new(lesion_id: &str, mut views: Vec<View2D>) -> Result<Self> {
        views.sort_by_key(|v| v.plane_id);
        if views.len() < 2 {
            return Err(Error::InsufficientViews { got: views.len() });
        }
        if views.len() > 9 {
            return Err(Error::Config {
                reason: format!("view set has {} views; maximum is 9", views.len()),
            });
        }
        let out_size = views[0].out_size();
        for w in views.windows(2) {
            if w[0].plane_id == w[1].plane_id {
                return Err(Error::Config {
                    reason: format!("duplicate plane id {} in view set", w[0].plane_id),
                });
            }
        }
        if views
            .iter()
            .any(|v| v.lesion_id != lesion_id || v.out_size() != out_size)
        {
            return Err(Error::Config {
                reason: "views disagree on lesion id or output size".into(),
            });
        }
        Ok(ViewSet {
            lesion_id: lesion_id.to_string(),
            views,
        })
    }

    pub fn lesion_id(&self) -> &str {
        &self.lesion_id
    }

    pub fn views(&self) -> &[View2D] {
        &self.views
    }

    pub fn count(&self) -> usize {
        self.views.len()
    }

    pub fn plane_ids(&self) -> Vec<u8> {
        self.views.iter().map(|v| v.plane_id).collect()
    }

    pub fn out_size(&self) -> usize {
        self.views[0].out_size()
    }
}

/// Sample one plane of the cube and resize to `out_size`.
///
/// The grid point `(a, b)` maps to `c + (a - h) * u + (b - h) * v` with
/// `h = (s - 1) / 2` and `c` the continuous cube center, so for odd `s` the
/// axis-aligned planes reproduce exact central slices.
pub fn extract_view(cube: &LesionCube, plane: &ViewPlane, out_size: usize) -> Result<View2D> {
    if out_size < 2 {
        return Err(Error::Config {
            reason: format!("out_size {out_size} must be at least 2"),
        });
    }
    let s = cube.side();
    let h = (s as f64 - 1.0) / 2.0;
    let data = cube.data();
    let mut slice = Array2::<f64>::zeros((s, s));
    for a in 0..s {
        let da = a as f64 - h;
        for b in 0..s {
            let db = b as f64 - h;
            let x = h + da * plane.u_axis[0] + db * plane.v_axis[0];
            let y = h + da * plane.u_axis[1] + db * plane.v_axis[1];
            let z = h + da * plane.u_axis[2] + db * plane.v_axis[2];
            slice[(a, b)] = trilinear_zero_outside(data, x, y, z);
        }
    }
    let pixels = bilinear_resize(&slice, out_size);
    Ok(View2D {
        pixels,
        plane_id: plane.id,
        lesion_id: cube.lesion_id().to_string(),
    })
}

/// Extract the requested planes (deduplicated, ascending) from one cube.
pub fn extract_views(cube: &LesionCube, plane_ids: &[u8], out_size: usize) -> Result<ViewSet> {
    let mut ids: Vec<u8> = plane_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InsufficientViews { got: ids.len() });
    }
    let mut views = Vec::with_capacity(ids.len());
    for id in ids {
        let p = plane(id)?;
        views.push(extract_view(cube, &p, out_size)?);
    }
    ViewSet::new(cube.lesion_id(), views)
}

/// Bilinear resize with corner alignment: output pixel `i` samples the source
/// at `i * (s - 1) / (out - 1)`, so `out == s` is the identity.
fn bilinear_resize(src: &Array2<f64>, out: usize) -> Array2<f64> {
    let s = src.dim().0;
    let mut dst = Array2::<f64>::zeros((out, out));
    let scale = if out > 1 { (s as f64 - 1.0) / (out as f64 - 1.0) } else { 0.0 };
    for i in 0..out {
        let x = i as f64 * scale;
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(s - 1);
        let wx = x - x0 as f64;
        for j in 0..out {
            let y = j as f64 * scale;
            let y0 = y.floor() as usize;
            let y1 = (y0 + 1).min(s - 1);
            let wy = y - y0 as f64;
            let a = src[(x0, y0)] * (1.0 - wx) + src[(x1, y0)] * wx;
            let b = src[(x0, y1)] * (1.0 - wx) + src[(x1, y1)] * wx;
            let v = a * (1.0 - wy) + b * wy;
            dst[(i, j)] = v.clamp(0.0, 1.0);
        }
    }
    dst
}

// --- file format ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ViewStackSidecar {
    lesion_id: String,
    plane_ids: Vec<u8>,
    out_size: usize,
}

fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

/// Write a view set as `[M, out, out]` float32 (little-endian, C order) plus
/// its JSON sidecar.
pub fn save_view_stack(set: &ViewSet, raw_path: &Path) -> Result<()> {
    let sidecar = ViewStackSidecar {
        lesion_id: set.lesion_id().to_string(),
        plane_ids: set.plane_ids(),
        out_size: set.out_size(),
    };
    let mut bytes = Vec::with_capacity(set.count() * set.out_size() * set.out_size() * 4);
    for view in set.views() {
        for v in view.pixels.iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
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

/// Load a view stack written by [`save_view_stack`].
pub fn load_view_stack(raw_path: &Path) -> Result<ViewSet> {
    let sc_path = sidecar_path(raw_path);
    let sc_text = fs::read_to_string(&sc_path)
        .map_err(|e| Error::io(format!("read {}", sc_path.display()), e))?;
    let sc: ViewStackSidecar = serde_json::from_str(&sc_text).map_err(|e| Error::Format {
        path: sc_path,
        reason: e.to_string(),
    })?;
    let m = sc.plane_ids.len();
    let px = sc.out_size * sc.out_size;
    let mut f = fs::File::open(raw_path)
        .map_err(|e| Error::io(format!("open {}", raw_path.display()), e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("read {}", raw_path.display()), e))?;
    if bytes.len() != m * px * 4 {
        return Err(Error::Format {
            path: raw_path.to_path_buf(),
            reason: format!("expected {} bytes, found {}", m * px * 4, bytes.len()),
        });
    }
    let mut views = Vec::with_capacity(m);
    for (vi, plane_id) in sc.plane_ids.iter().enumerate() {
        let mut pixels = Array2::<f64>::zeros((sc.out_size, sc.out_size));
        let base = vi * px * 4;
        for (pi, p) in pixels.iter_mut().enumerate() {
            let o = base + pi * 4;
            *p = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
        }
        views.push(View2D {
            pixels,
            plane_id: *plane_id,
            lesion_id: sc.lesion_id.clone(),
        });
    }
    ViewSet::new(&sc.lesion_id, views)
}
