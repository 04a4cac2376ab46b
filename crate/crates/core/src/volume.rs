//! Slice geometry on labeled volumes: anchor selection, neighbor windows,
//! tumor coverage, and tumor-cropped tiles for external feature extractors.
//!
//! Plane convention: sagittal slices fix x, coronal slices fix y, axial
//! slices fix z. Inside a slice the 2D layout is (row, col) =
//! sagittal (z, y), coronal (z, x), axial (y, x).

use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    dims: (usize, usize, usize),
    intensities: Vec<f32>,
    mask: Vec<u8>,
}

impl LabeledVolume {
    pub fn new(dims: (usize, usize, usize), intensities: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        let (dx, dy, dz) = dims;
        if dx == 0 || dy == 0 || dz == 0 {
            return Err(Error::InvalidInput(
                "volume dimensions must be positive".into(),
            ));
        }
        let n = dx * dy * dz;
        if intensities.len() != n || mask.len() != n {
            return Err(Error::InvalidInput(format!(
                "volume {dx}x{dy}x{dz} needs {n} voxels, got {} intensities and {} mask values",
                intensities.len(),
                mask.len()
            )));
        }
        Ok(LabeledVolume {
            dims,
            intensities,
            mask,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    pub fn tumor_voxels(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    fn coords(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (dx, dy, dz) = self.dims;
        (0..dz).flat_map(move |z| (0..dy).flat_map(move |y| (0..dx).map(move |x| (x, y, z))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Sagittal,
    Coronal,
    Axial,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Sagittal, Plane::Coronal, Plane::Axial];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
        }
    }

    /// Number of slices along this plane's normal.
    pub fn extent(self, dims: (usize, usize, usize)) -> usize {
        match self {
            Plane::Sagittal => dims.0,
            Plane::Coronal => dims.1,
            Plane::Axial => dims.2,
        }
    }

    /// (rows, cols) of one slice.
    pub fn slice_shape(self, dims: (usize, usize, usize)) -> (usize, usize) {
        let (dx, dy, dz) = dims;
        match self {
            Plane::Sagittal => (dz, dy),
            Plane::Coronal => (dz, dx),
            Plane::Axial => (dy, dx),
        }
    }

    /// Volume coordinates of pixel (row, col) of slice `index`.
    pub fn voxel(self, index: usize, row: usize, col: usize) -> (usize, usize, usize) {
        match self {
            Plane::Sagittal => (index, col, row),
            Plane::Coronal => (col, index, row),
            Plane::Axial => (col, row, index),
        }
    }

    fn slice_of(self, (x, y, z): (usize, usize, usize)) -> usize {
        match self {
            Plane::Sagittal => x,
            Plane::Coronal => y,
            Plane::Axial => z,
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorIndices {
    pub anchor_x: usize,
    pub anchor_y: usize,
    pub anchor_z: usize,
}

impl AnchorIndices {
    pub fn get(&self, plane: Plane) -> usize {
        match plane {
            Plane::Sagittal => self.anchor_x,
            Plane::Coronal => self.anchor_y,
            Plane::Axial => self.anchor_z,
        }
    }
}

/// Left/right neighbor counts around each anchor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub k_x1: usize,
    pub k_x2: usize,
    pub k_y1: usize,
    pub k_y2: usize,
    pub k_z1: usize,
    pub k_z2: usize,
}

impl WindowConfig {
    /// Same left/right count on every plane.
    pub fn symmetric(k: usize) -> Self {
        WindowConfig {
            k_x1: k,
            k_x2: k,
            k_y1: k,
            k_y2: k,
            k_z1: k,
            k_z2: k,
        }
    }

    /// Nominal slice count K, before any boundary clipping.
    pub fn slice_count(&self) -> usize {
        self.k_x1 + self.k_x2 + self.k_y1 + self.k_y2 + self.k_z1 + self.k_z2 + 3
    }

    pub fn neighbors(&self, plane: Plane) -> (usize, usize) {
        match plane {
            Plane::Sagittal => (self.k_x1, self.k_x2),
            Plane::Coronal => (self.k_y1, self.k_y2),
            Plane::Axial => (self.k_z1, self.k_z2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRef {
    pub plane: Plane,
    pub index: usize,
    pub is_anchor: bool,
}

/// Per plane, the slice with the most tumor voxels; ties go to the lowest index.
pub fn select_anchors(v: &LabeledVolume) -> Result<AnchorIndices> {
    let (dx, dy, dz) = v.dims;
    let mut counts = [vec![0usize; dx], vec![0usize; dy], vec![0usize; dz]];
    let mut any = false;
    for ((x, y, z), &m) in v.coords().zip(&v.mask) {
        if m != 0 {
            counts[0][x] += 1;
            counts[1][y] += 1;
            counts[2][z] += 1;
            any = true;
        }
    }
    if !any {
        return Err(Error::NoTumor);
    }
    let argmax = |c: &[usize]| {
        c.iter()
            .enumerate()
            .fold(
                (0, 0),
                |best, (i, &n)| if n > best.1 { (i, n) } else { best },
            )
            .0
    };
    Ok(AnchorIndices {
        anchor_x: argmax(&counts[0]),
        anchor_y: argmax(&counts[1]),
        anchor_z: argmax(&counts[2]),
    })
}

/// Slices `[anchor - k1, anchor + k2]` per plane, in sagittal, coronal, axial
/// order, clipped to the volume.
pub fn slice_window(
    anchors: &AnchorIndices,
    window: &WindowConfig,
    dims: (usize, usize, usize),
) -> Result<Vec<SliceRef>> {
    let mut out = Vec::with_capacity(window.slice_count());
    for plane in Plane::ALL {
        let anchor = anchors.get(plane);
        let extent = plane.extent(dims);
        if anchor >= extent {
            return Err(Error::InvalidInput(format!(
                "{plane} anchor {anchor} outside extent {extent}"
            )));
        }
        let (left, right) = window.neighbors(plane);
        let lo = anchor.saturating_sub(left);
        let hi = anchor.saturating_add(right).min(extent - 1);
        out.extend((lo..=hi).map(|index| SliceRef {
            plane,
            index,
            is_anchor: index == anchor,
        }));
    }
    Ok(out)
}

/// Fraction of tumor voxels lying on at least one selected slice.
pub fn coverage_ratio(v: &LabeledVolume, slices: &[SliceRef]) -> Result<f64> {
    let mut selected = Plane::ALL.map(|p| vec![false; p.extent(v.dims)]);
    for s in slices {
        let flags = &mut selected[s.plane as usize];
        if s.index >= flags.len() {
            return Err(Error::InvalidInput(format!(
                "{} slice {} outside extent {}",
                s.plane,
                s.index,
                flags.len()
            )));
        }
        flags[s.index] = true;
    }
    let mut total = 0usize;
    let mut covered = 0usize;
    for (c, &m) in v.coords().zip(&v.mask) {
        if m == 0 {
            continue;
        }
        total += 1;
        if Plane::ALL
            .iter()
            .any(|&p| selected[p as usize][p.slice_of(c)])
        {
            covered += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoTumor);
    }
    Ok(covered as f64 / total as f64)
}

/// Row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tile {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Inclusive tumor bounding box `(row0, row1, col0, col1)` within a slice.
pub fn slice_bbox(v: &LabeledVolume, s: &SliceRef) -> Option<(usize, usize, usize, usize)> {
    let (rows, cols) = s.plane.slice_shape(v.dims);
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for r in 0..rows {
        for c in 0..cols {
            let (x, y, z) = s.plane.voxel(s.index, r, c);
            if v.mask[v.index(x, y, z)] == 0 {
                continue;
            }
            bbox = Some(match bbox {
                None => (r, r, c, c),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
            });
        }
    }
    bbox
}

/// Crops the slice to its tumor bounding box and resizes the crop to
/// `out_size × out_size`.
pub fn extract_tile(v: &LabeledVolume, s: &SliceRef, out_size: usize) -> Result<Tile> {
    if out_size == 0 {
        return Err(Error::InvalidInput("tile size must be positive".into()));
    }
    if s.index >= s.plane.extent(v.dims) {
        return Err(Error::InvalidInput(format!(
            "{} slice {} outside the volume",
            s.plane, s.index
        )));
    }
    let (r0, r1, c0, c1) = slice_bbox(v, s).ok_or_else(|| Error::EmptyBoundingBox {
        plane: s.plane.name().to_string(),
        index: s.index,
    })?;
    let height = r1 - r0 + 1;
    let width = c1 - c0 + 1;
    let mut crop = Vec::with_capacity(height * width);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (x, y, z) = s.plane.voxel(s.index, r, c);
            crop.push(f64::from(v.intensities[v.index(x, y, z)]));
        }
    }
    let src = Tile {
        height,
        width,
        data: crop,
    };
    Ok(resize_bilinear(&src, out_size, out_size))
}

/// Source coordinate for destination index `d` under the align-corners rule.
fn source_coord(d: usize, src_len: usize, dst_len: usize) -> f64 {
    if src_len == 1 || dst_len == 1 {
        0.0
    } else {
        d as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Bilinear resize, align-corners convention.
pub fn resize_bilinear(src: &Tile, out_h: usize, out_w: usize) -> Tile {
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let sy = source_coord(i, src.height, out_h);
        let y0 = (sy.floor() as usize).min(src.height - 1);
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = sy - y0 as f64;
        for j in 0..out_w {
            let sx = source_coord(j, src.width, out_w);
            let x0 = (sx.floor() as usize).min(src.width - 1);
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = sx - x0 as f64;
            let top = src.get(y0, x0) * (1.0 - fx) + src.get(y0, x1) * fx;
            let bottom = src.get(y1, x0) * (1.0 - fx) + src.get(y1, x1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tile {
        height: out_h,
        width: out_w,
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedSlice {
    pub plane: Plane,
    pub index: usize,
    pub is_anchor: bool,
    /// Tile file name, or `None` when the slice has no tumor pixels.
    pub tile: Option<String>,
}

/// JSON sidecar written next to the exported tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSelection {
    pub patient: String,
    pub dims: (usize, usize, usize),
    pub anchors: AnchorIndices,
    pub window: WindowConfig,
    pub slice_count: usize,
    pub coverage_ratio: f64,
    pub tile_size: usize,
    pub slices: Vec<ExportedSlice>,
}

/// Runs anchor selection and windowing, then writes one tile per tumor-bearing
/// slice plus `<patient>_slices.json` into `dir`.
pub fn export_slices(
    v: &LabeledVolume,
    patient: &str,
    window: &WindowConfig,
    tile_size: usize,
    dir: &Path,
) -> Result<SliceSelection> {
    let anchors = select_anchors(v)?;
    let slices = slice_window(&anchors, window, v.dims)?;
    let coverage = coverage_ratio(v, &slices)?;
    std::fs::create_dir_all(dir)?;
    let mut exported = Vec::with_capacity(slices.len());
    for s in &slices {
        let tile = match extract_tile(v, s, tile_size) {
            Ok(tile) => {
                let name = format!("{patient}_{}_{}.tile", s.plane, s.index);
                formats::write_tile(&dir.join(&name), &tile)?;
                Some(name)
            }
            Err(Error::EmptyBoundingBox { .. }) => {
                warn!(
                    "{patient}: {} slice {} has no tumor pixels, skipped",
                    s.plane, s.index
                );
                None
            }
            Err(e) => return Err(e),
        };
        exported.push(ExportedSlice {
            plane: s.plane,
            index: s.index,
            is_anchor: s.is_anchor,
            tile,
        });
    }
    let selection = SliceSelection {
        patient: patient.to_string(),
        dims: v.dims,
        anchors,
        window: *window,
        slice_count: slices.len(),
        coverage_ratio: coverage,
        tile_size,
        slices: exported,
    };
    let sidecar = dir.join(format!("{patient}_slices.json"));
    std::fs::write(sidecar, serde_json::to_string_pretty(&selection)?)?;
    Ok(selection)
}
