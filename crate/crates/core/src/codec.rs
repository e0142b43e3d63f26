//! Center-point target encoding and peak decoding.
//!
//! Objects become Gaussian peaks on a `K`-channel heatmap at `R`-times
//! reduced resolution. The center cell additionally carries the box
//! half-extents (input pixels), the sub-cell offset of the true center, and
//! the 3D displacement `(Δu, Δv, Δz)` toward the object's previous position.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::BoxAnnotation2D;
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Minimum IoU a corner-perturbed box must keep; sets the Gaussian radius.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.7;

/// Largest corner shift `r` (in the units of `w`, `h`) such that every one of
/// the three perturbation families keeps IoU ≥ `min_overlap`:
/// both corners shifted the same way (translation), both inward (shrink),
/// both outward (grow).
pub fn max_corner_shift(w: f64, h: f64, min_overlap: f64) -> f64 {
    let o = min_overlap;
    let s = w + h;
    let p = w * h;
    // (w−r)(h−r) / (2wh − (w−r)(h−r)) ≥ o
    let translate = (s - (s * s - 4.0 * p * (1.0 - o) / (1.0 + o)).max(0.0).sqrt()) / 2.0;
    // (w−2r)(h−2r) / wh ≥ o
    let shrink = (2.0 * s - (4.0 * s * s - 16.0 * (1.0 - o) * p).max(0.0).sqrt()) / 8.0;
    // wh / ((w+2r)(h+2r)) ≥ o
    let grow = (-2.0 * o * s + (4.0 * o * o * s * s + 16.0 * o * (1.0 - o) * p).sqrt()) / (8.0 * o);
    translate.min(shrink).min(grow).max(0.0)
}

/// Integer Gaussian radius in output cells for a box with the given
/// half-extents in input pixels; never below 1.
pub fn gaussian_radius<S: Scalar>(half_extents: (S, S), min_overlap: f64, scale: usize) -> usize {
    let r = scale as f64;
    let w = 2.0 * half_extents.0.f64() / r;
    let h = 2.0 * half_extents.1.f64() / r;
    (max_corner_shift(w, h, min_overlap).floor() as usize).max(1)
}

/// Splats `peak · exp(−d²/2σ²)`, `σ = radius/3`, around `(row, col)` with
/// element-wise max. Returns the cells touched.
fn splat_gaussian<S: Scalar>(
    plane: &mut [S],
    cols: usize,
    rows: usize,
    center: (usize, usize),
    radius: usize,
    peak: S,
) -> Vec<(usize, usize)> {
    let sigma = radius as f64 / 3.0;
    let denom = 2.0 * sigma * sigma;
    let (cr, cc) = (center.0 as isize, center.1 as isize);
    let rad = radius as isize;
    let mut touched = Vec::new();
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            let (r, c) = (cr + dr, cc + dc);
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                continue;
            }
            let g = S::lit((-((dr * dr + dc * dc) as f64) / denom).exp()) * peak;
            let i = r as usize * cols + c as usize;
            if g > plane[i] {
                plane[i] = g;
            }
            touched.push((r as usize, c as usize));
        }
    }
    touched
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeParams {
    pub scale: usize,
    pub num_classes: usize,
    pub min_overlap: f64,
}

impl EncodeParams {
    pub fn new(scale: usize, num_classes: usize) -> Self {
        Self {
            scale,
            num_classes,
            min_overlap: DEFAULT_MIN_OVERLAP,
        }
    }
}

/// Per-object summary kept alongside the dense targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedObject<S> {
    pub track_id: i64,
    pub class_id: usize,
    /// `(row, col)` of the center cell.
    pub cell: (usize, usize),
    pub center: (S, S),
    pub half_extents: (S, S),
    pub depth: Option<S>,
}

/// Dense training targets for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps<S> {
    /// K channels in `[0, 1]`.
    pub heatmap: Grid<S>,
    /// Half-extents `(w/2, h/2)` in input pixels.
    pub size: Grid<S>,
    /// `C/R − floor(C/R)`, in cells.
    pub subpixel_offset: Grid<S>,
    /// `(Δu, Δv)` in cells and `Δz` in meters, previous minus current.
    pub displacement: Grid<S>,
    pub depth: SparseDepthMap<S>,
    pub center_mask: Grid<bool>,
    /// Center cells whose displacement is supervised.
    pub displacement_mask: Grid<bool>,
    pub objects: Vec<EncodedObject<S>>,
    /// Objects dropped because their center fell outside the grid.
    pub skipped: usize,
}

impl<S: Scalar> TargetMaps<S> {
    pub fn rows(&self) -> usize {
        self.heatmap.rows()
    }

    pub fn cols(&self) -> usize {
        self.heatmap.cols()
    }
}

/// Depth at the center cell, else the nearest valid cell inside the box
/// (ties broken by lowest `(row, col)`).
pub fn object_depth<S: Scalar>(b: &BoxAnnotation2D<S>, depth: &SparseDepthMap<S>) -> Option<S> {
    let r = S::from_usize_lossy(depth.scale);
    let (cu, cv) = b.center();
    let cell = |x: S, hi: usize| -> usize {
        let i = (x / r).floor().to_isize().unwrap_or(0).max(0) as usize;
        i.min(hi.saturating_sub(1))
    };
    let (crow, ccol) = (cell(cv, depth.rows()), cell(cu, depth.cols()));
    if let Some(z) = depth.get(crow, ccol) {
        return Some(z);
    }
    let eps = S::lit(1e-9);
    let (r0, r1) = (cell(b.y1, depth.rows()), cell(b.y2 - eps, depth.rows()));
    let (c0, c1) = (cell(b.x1, depth.cols()), cell(b.x2 - eps, depth.cols()));
    let mut best: Option<(usize, S)> = None;
    for row in r0..=r1 {
        for col in c0..=c1 {
            if let Some(z) = depth.get(row, col) {
                let d = row.abs_diff(crow).pow(2) + col.abs_diff(ccol).pow(2);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, z));
                }
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Builds heatmap, size, offset, displacement and depth targets for the
/// current frame given the previous frame's boxes.
///
/// `depth_prev` defaults to `depth_t` (self-paired first frame).
pub fn encode_targets<S: Scalar>(
    current: &[BoxAnnotation2D<S>],
    previous: &[BoxAnnotation2D<S>],
    depth_t: &SparseDepthMap<S>,
    depth_prev: Option<&SparseDepthMap<S>>,
    params: &EncodeParams,
) -> Result<TargetMaps<S>> {
    if params.scale != depth_t.scale {
        return Err(Error::Contract {
            role: "depth_gt.scale".into(),
            expected: params.scale.to_string(),
            actual: depth_t.scale.to_string(),
        });
    }
    let depth_prev = depth_prev.unwrap_or(depth_t);
    let (rows, cols) = (depth_t.rows(), depth_t.cols());
    let k = params.num_classes;
    let r = S::from_usize_lossy(params.scale);
    let mut t = TargetMaps {
        heatmap: Grid::zeros(k, rows, cols),
        size: Grid::zeros(2, rows, cols),
        subpixel_offset: Grid::zeros(2, rows, cols),
        displacement: Grid::zeros(3, rows, cols),
        depth: depth_t.clone(),
        center_mask: Grid::filled(1, rows, cols, false),
        displacement_mask: Grid::filled(1, rows, cols, false),
        objects: Vec::new(),
        skipped: 0,
    };
    let prev_by_id: HashMap<i64, &BoxAnnotation2D<S>> =
        previous.iter().map(|b| (b.track_id, b)).collect();

    for b in current {
        if b.class_id >= k {
            return Err(Error::Validation(format!(
                "class id {} outside [0, {k})",
                b.class_id
            )));
        }
        let (cu, cv) = b.center();
        let (gu, gv) = (cu / r, cv / r);
        let (fu, fv) = (gu.floor(), gv.floor());
        let in_grid = fu >= S::zero()
            && fv >= S::zero()
            && fu < S::from_usize_lossy(cols)
            && fv < S::from_usize_lossy(rows);
        if !in_grid {
            t.skipped += 1;
            log::warn!("object {} center outside target grid; skipped", b.track_id);
            continue;
        }
        let (row, col) = (fv.to_usize().unwrap(), fu.to_usize().unwrap());
        let half = b.half_extents();
        let radius = gaussian_radius(half, params.min_overlap, params.scale);
        splat_gaussian(
            t.heatmap.plane_mut(b.class_id),
            cols,
            rows,
            (row, col),
            radius,
            S::one(),
        );
        t.center_mask.set(0, row, col, true);
        t.size.set(0, row, col, half.0);
        t.size.set(1, row, col, half.1);
        t.subpixel_offset.set(0, row, col, gu - fu);
        t.subpixel_offset.set(1, row, col, gv - fv);

        let depth = object_depth(b, depth_t);
        if let Some(z) = depth {
            match prev_by_id.get(&b.track_id) {
                Some(p) => {
                    if let Some(zp) = object_depth(p, depth_prev) {
                        let (pu, pv) = p.center();
                        t.displacement.set(0, row, col, pu / r - gu);
                        t.displacement.set(1, row, col, pv / r - gv);
                        t.displacement.set(2, row, col, zp - z);
                        t.displacement_mask.set(0, row, col, true);
                    }
                }
                None => {
                    for ch in 0..3 {
                        t.displacement.set(ch, row, col, S::zero());
                    }
                    t.displacement_mask.set(0, row, col, true);
                }
            }
        }
        t.objects.push(EncodedObject {
            track_id: b.track_id,
            class_id: b.class_id,
            cell: (row, col),
            center: (cu, cv),
            half_extents: half,
            depth,
        });
    }
    Ok(t)
}

/// One decoded object: center `C`, half-extents `ΔC`, confidence `w`,
/// identity `l` (assigned by the tracker), depth `d`, class `m`, and the
/// predicted motion toward the previous frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<S> {
    pub center: (S, S),
    pub half_extents: (S, S),
    pub confidence: S,
    pub label: Option<u64>,
    pub depth: Option<S>,
    pub class_id: usize,
    /// `(Δu, Δv)` in cells, `Δz` in meters.
    pub displacement: [S; 3],
    /// `(row, col)` of the heatmap peak.
    pub cell: (usize, usize),
}

impl<S: Scalar> Detection<S> {
    /// `[x1, y1, x2, y2]`.
    pub fn bbox(&self) -> [S; 4] {
        [
            self.center.0 - self.half_extents.0,
            self.center.1 - self.half_extents.1,
            self.center.0 + self.half_extents.0,
            self.center.1 + self.half_extents.1,
        ]
    }
}

/// Head maps consumed by [`decode_detections`]; all share one spatial shape.
#[derive(Debug, Clone, Copy)]
pub struct HeadMaps<'a, S> {
    pub heatmap: &'a Grid<S>,
    pub size: &'a Grid<S>,
    pub offset: &'a Grid<S>,
    pub depth: &'a Grid<S>,
    pub displacement: Option<&'a Grid<S>>,
}

impl<'a, S: Scalar> HeadMaps<'a, S> {
    /// Views ground-truth targets as head outputs.
    pub fn from_targets(t: &'a TargetMaps<S>) -> Self {
        Self {
            heatmap: &t.heatmap,
            size: &t.size,
            offset: &t.subpixel_offset,
            depth: &t.depth.values,
            displacement: Some(&t.displacement),
        }
    }
}

fn is_local_max<S: Scalar>(plane: &[S], rows: usize, cols: usize, r: usize, c: usize) -> bool {
    let v = plane[r * cols + c];
    for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
        for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
            if plane[nr * cols + nc] > v {
                return false;
            }
        }
    }
    true
}

/// Extracts 3×3 local maxima at or above `threshold`, highest confidence
/// first (ties by lowest `(row, col, class)`), at most `max_detections`.
pub fn decode_detections<S: Scalar>(
    maps: &HeadMaps<'_, S>,
    threshold: S,
    max_detections: usize,
    scale: usize,
) -> Result<Vec<Detection<S>>> {
    let (k, rows, cols) = maps.heatmap.shape();
    let check = |role: &str, g: &Grid<S>, ch: usize| -> Result<()> {
        if g.shape() != (ch, rows, cols) {
            return Err(Error::Contract {
                role: role.into(),
                expected: format!("{ch}x{rows}x{cols}"),
                actual: format!("{:?}", g.shape()),
            });
        }
        Ok(())
    };
    check("size", maps.size, 2)?;
    check("offset", maps.offset, 2)?;
    check("depth", maps.depth, 1)?;
    if let Some(d) = maps.displacement {
        check("displacement", d, 3)?;
    }
    let mut peaks: Vec<(S, usize, usize, usize)> = Vec::new();
    for class in 0..k {
        let plane = maps.heatmap.plane(class);
        for r in 0..rows {
            for c in 0..cols {
                let v = plane[r * cols + c];
                if v >= threshold && v > S::zero() && is_local_max(plane, rows, cols, r, c) {
                    peaks.push((v, r, c, class));
                }
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    peaks.truncate(max_detections);
    let rs = S::from_usize_lossy(scale);
    Ok(peaks
        .into_iter()
        .map(|(v, r, c, class)| {
            let ou = *maps.offset.get(0, r, c);
            let ov = *maps.offset.get(1, r, c);
            let z = *maps.depth.get(0, r, c);
            let displacement = maps.displacement.map_or([S::zero(); 3], |d| {
                [*d.get(0, r, c), *d.get(1, r, c), *d.get(2, r, c)]
            });
            Detection {
                center: (
                    (S::from_usize_lossy(c) + ou) * rs,
                    (S::from_usize_lossy(r) + ov) * rs,
                ),
                half_extents: (*maps.size.get(0, r, c), *maps.size.get(1, r, c)),
                confidence: v,
                label: None,
                depth: (z > S::zero()).then_some(z),
                class_id: class,
                displacement,
                cell: (r, c),
            }
        })
        .collect())
}

/// Last-seen state of a previous-frame object used to render priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorObject<S> {
    pub center: (S, S),
    pub half_extents: (S, S),
    pub depth: Option<S>,
    pub confidence: S,
}

impl<S: Scalar> PriorObject<S> {
    pub fn from_box(b: &BoxAnnotation2D<S>, depth: Option<S>) -> Self {
        Self {
            center: b.center(),
            half_extents: b.half_extents(),
            depth,
            confidence: S::one(),
        }
    }
}

/// Renders the class-agnostic tracklet heatmap and the prior depth map.
/// Each object splats a confidence-weighted Gaussian; inside its support the
/// depth channel holds its depth, nearer object winning on overlap.
pub fn render_prior_map<S: Scalar>(
    objects: &[PriorObject<S>],
    rows: usize,
    cols: usize,
    scale: usize,
    min_overlap: f64,
) -> (Grid<S>, Grid<S>) {
    let mut heat = Grid::zeros(1, rows, cols);
    let mut depth = Grid::zeros(1, rows, cols);
    let r = S::from_usize_lossy(scale);
    for o in objects {
        let (gu, gv) = ((o.center.0 / r).floor(), (o.center.1 / r).floor());
        if gu < S::zero() || gv < S::zero() {
            continue;
        }
        let (row, col) = (gv.to_usize().unwrap(), gu.to_usize().unwrap());
        if row >= rows || col >= cols {
            continue;
        }
        let radius = gaussian_radius(o.half_extents, min_overlap, scale);
        let touched = splat_gaussian(
            heat.plane_mut(0),
            cols,
            rows,
            (row, col),
            radius,
            o.confidence,
        );
        if let Some(z) = o.depth.filter(|z| *z > S::zero()) {
            for (tr, tc) in touched {
                let cur = *depth.get(0, tr, tc);
                if cur == S::zero() || z < cur {
                    depth.set(0, tr, tc, z);
                }
            }
        }
    }
    (heat, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize, id: i64) -> BoxAnnotation2D<f64> {
        BoxAnnotation2D {
            x1,
            y1,
            x2,
            y2,
            class_id,
            track_id: id,
        }
    }

    fn dense_depth(rows: usize, cols: usize, z: f64) -> SparseDepthMap<f64> {
        let mut d = SparseDepthMap::with_grid_shape(rows, cols, 4);
        for r in 0..rows {
            for c in 0..cols {
                d.set(r, c, z);
            }
        }
        d
    }

    #[test]
    fn tiny_box_has_unit_radius() {
        assert_eq!(gaussian_radius((0.5f64, 0.5), 0.7, 4), 1);
    }

    #[test]
    fn hand_encoded_box() {
        let depth = dense_depth(96, 320, 12.0);
        let b = bx(100.0, 100.0, 200.0, 180.0, 0, 1);
        let t = encode_targets(&[b], &[b], &depth, None, &EncodeParams::new(4, 2)).unwrap();
        let o = &t.objects[0];
        assert_eq!(o.center, (150.0, 140.0));
        assert_eq!(o.cell, (35, 37));
        assert_eq!(o.half_extents, (50.0, 40.0));
        assert_eq!(*t.subpixel_offset.get(0, 35, 37), 0.5);
        assert_eq!(*t.subpixel_offset.get(1, 35, 37), 0.0);
        assert_eq!(*t.heatmap.get(0, 35, 37), 1.0);
        assert_eq!(t.displacement.plane(0).iter().filter(|v| **v != 0.0).count(), 0);
        assert!(*t.displacement_mask.get(0, 35, 37));
    }

    #[test]
    fn center_on_cell_corner_peaks_at_one() {
        let depth = dense_depth(8, 8, 5.0);
        let t = encode_targets(
            &[bx(8.0, 8.0, 16.0, 16.0, 1, 0)],
            &[],
            &depth,
            None,
            &EncodeParams::new(4, 2),
        )
        .unwrap();
        assert_eq!(*t.heatmap.get(1, 3, 3), 1.0);
        assert_eq!(t.heatmap.data().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn outside_center_is_skipped() {
        let depth = dense_depth(4, 4, 5.0);
        let t = encode_targets(
            &[bx(30.0, 30.0, 40.0, 40.0, 0, 0)],
            &[],
            &depth,
            None,
            &EncodeParams::new(4, 2),
        )
        .unwrap();
        assert_eq!(t.skipped, 1);
        assert!(t.objects.is_empty());
    }

    #[test]
    fn missing_center_depth_uses_nearest_in_box() {
        let mut depth = SparseDepthMap::with_grid_shape(8, 8, 4);
        depth.set(2, 2, 20.0);
        depth.set(4, 5, 9.0);
        let b = bx(8.0, 8.0, 24.0, 24.0, 0, 0);
        // Center cell (4, 4) is empty; (4, 5) is 1 away, (2, 2) is √8 away.
        assert_eq!(object_depth(&b, &depth), Some(9.0));
        let empty = SparseDepthMap::<f64>::with_grid_shape(8, 8, 4);
        assert_eq!(object_depth(&b, &empty), None);
    }

    #[test]
    fn all_zero_heatmap_decodes_nothing() {
        let z = Grid::<f64>::zeros(2, 4, 4);
        let two = Grid::zeros(2, 4, 4);
        let one = Grid::zeros(1, 4, 4);
        let maps = HeadMaps {
            heatmap: &z,
            size: &two,
            offset: &two,
            depth: &one,
            displacement: None,
        };
        assert!(decode_detections(&maps, 0.0, 10, 4).unwrap().is_empty());
    }

    #[test]
    fn equal_peaks_tie_break_on_position() {
        let mut h = Grid::<f64>::zeros(2, 8, 8);
        h.set(1, 2, 2, 0.9);
        h.set(0, 6, 6, 0.9);
        h.set(0, 2, 5, 0.9);
        let two = Grid::zeros(2, 8, 8);
        let one = Grid::zeros(1, 8, 8);
        let maps = HeadMaps {
            heatmap: &h,
            size: &two,
            offset: &two,
            depth: &one,
            displacement: None,
        };
        let d = decode_detections(&maps, 0.5, 1, 4).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].cell, d[0].class_id), ((2, 2), 1));
    }

    #[test]
    fn decode_shape_mismatch_names_role() {
        let h = Grid::<f64>::zeros(2, 4, 4);
        let bad = Grid::zeros(2, 3, 4);
        let one = Grid::zeros(1, 4, 4);
        let maps = HeadMaps {
            heatmap: &h,
            size: &bad,
            offset: &h,
            depth: &one,
            displacement: None,
        };
        match decode_detections(&maps, 0.1, 5, 4) {
            Err(Error::Contract { role, .. }) => assert_eq!(role, "size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prior_maps() {
        let (h, d) = render_prior_map::<f64>(&[], 6, 6, 4, 0.7);
        assert!(h.data().iter().chain(d.data()).all(|&v| v == 0.0));

        let one = PriorObject {
            center: (10.0, 10.0),
            half_extents: (4.0, 4.0),
            depth: Some(7.0),
            confidence: 1.0,
        };
        let (h, d) = render_prior_map(&[one], 6, 6, 4, 0.7);
        assert_eq!(*h.get(0, 2, 2), 1.0);
        assert_eq!(*d.get(0, 2, 2), 7.0);

        let near = PriorObject {
            center: (10.0, 10.0),
            depth: Some(5.0),
            ..one
        };
        let far = PriorObject {
            center: (14.0, 10.0),
            depth: Some(9.0),
            ..one
        };
        let (_, d) = render_prior_map(&[far, near], 6, 6, 4, 0.7);
        // Supports (radius 1) around cols 2 and 3 overlap on cols 2..=3.
        assert_eq!(*d.get(0, 2, 2), 5.0);
        assert_eq!(*d.get(0, 2, 3), 5.0);
        assert_eq!(*d.get(0, 2, 4), 9.0);
        assert_eq!(*d.get(0, 2, 1), 5.0);
    }
}
