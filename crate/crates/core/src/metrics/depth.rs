use serde::{Deserialize, Serialize};

use crate::codec::object_depth;
use crate::dataset::BoxAnnotation2D;
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::grid::Grid;
use crate::scalar::Scalar;

/// KITTI LiDAR range.
pub const DEFAULT_DEPTH_CAP: f64 = 80.0;
/// Predictions are clamped from below before the log and ratio terms.
pub const MIN_PRED_DEPTH: f64 = 1e-3;
pub const DEFAULT_RANGES: [(f64, f64); 3] = [(0.0, 20.0), (20.0, 50.0), (50.0, 80.0)];

/// Depth error statistics over one region. Metrics are `None` when the
/// region holds no valid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport<S> {
    pub region_label: String,
    pub pixel_count: usize,
    pub abs_rel: Option<S>,
    pub sq_rel: Option<S>,
    pub rmse: Option<S>,
    pub rmse_log: Option<S>,
    pub delta1: Option<S>,
    pub delta2: Option<S>,
    pub delta3: Option<S>,
}

/// Running sums; merging two accumulators equals evaluating the union of
/// their cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthAccumulator<S> {
    pub count: usize,
    pub abs_rel: S,
    pub sq_rel: S,
    pub sq: S,
    pub sq_log: S,
    pub within: [usize; 3],
}

impl<S: Scalar> DepthAccumulator<S> {
    pub fn push(&mut self, pred: S, gt: S) {
        let p = pred.max(S::lit(MIN_PRED_DEPTH));
        let d = p - gt;
        self.count += 1;
        self.abs_rel += d.abs() / gt;
        self.sq_rel += d * d / gt;
        self.sq += d * d;
        let dl = p.ln() - gt.ln();
        self.sq_log += dl * dl;
        let ratio = (p / gt).max(gt / p);
        let mut thr = S::one();
        for w in &mut self.within {
            thr *= S::lit(1.25);
            if ratio < thr {
                *w += 1;
            }
        }
    }

    /// Accumulates every cell valid in `gt`, inside `mask`, with `gt ≤ depth_cap`.
    pub fn add_map(
        &mut self,
        pred: &Grid<S>,
        gt: &SparseDepthMap<S>,
        mask: Option<&Grid<bool>>,
        depth_cap: f64,
    ) -> Result<()> {
        if pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.channels() != 1 {
            return Err(Error::Contract {
                role: "pred_depth".into(),
                expected: format!("1×{}×{}", gt.rows(), gt.cols()),
                actual: format!("{}×{}×{}", pred.channels(), pred.rows(), pred.cols()),
            });
        }
        if let Some(m) = mask {
            if m.rows() != gt.rows() || m.cols() != gt.cols() {
                return Err(Error::Contract {
                    role: "region_mask".into(),
                    expected: format!("{}×{}", gt.rows(), gt.cols()),
                    actual: format!("{}×{}", m.rows(), m.cols()),
                });
            }
        }
        let cap = S::lit(depth_cap);
        for (r, c, g) in gt.iter_valid() {
            if g > cap || mask.is_some_and(|m| !*m.get(0, r, c)) {
                continue;
            }
            self.push(*pred.get(0, r, c), g);
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &Self) {
        self.count += o.count;
        self.abs_rel += o.abs_rel;
        self.sq_rel += o.sq_rel;
        self.sq += o.sq;
        self.sq_log += o.sq_log;
        for (a, b) in self.within.iter_mut().zip(o.within) {
            *a += b;
        }
    }

    pub fn report(&self, region_label: &str) -> DepthReport<S> {
        let n = self.count;
        let mean = |v: S| (n > 0).then(|| v / S::from_usize_lossy(n));
        let frac = |k: usize| (n > 0).then(|| S::from_usize_lossy(k) / S::from_usize_lossy(n));
        DepthReport {
            region_label: region_label.to_string(),
            pixel_count: n,
            abs_rel: mean(self.abs_rel),
            sq_rel: mean(self.sq_rel),
            rmse: mean(self.sq).map(|v| v.sqrt()),
            rmse_log: mean(self.sq_log).map(|v| v.sqrt()),
            delta1: frac(self.within[0]),
            delta2: frac(self.within[1]),
            delta3: frac(self.within[2]),
        }
    }
}

pub fn compute_depth_metrics<S: Scalar>(
    pred: &Grid<S>,
    gt: &SparseDepthMap<S>,
    mask: Option<&Grid<bool>>,
    depth_cap: f64,
    region_label: &str,
) -> Result<DepthReport<S>> {
    let mut acc = DepthAccumulator::default();
    acc.add_map(pred, gt, mask, depth_cap)?;
    Ok(acc.report(region_label))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub label: String,
    pub mask: Grid<bool>,
}

fn range_label(lo: f64, hi: f64) -> String {
    format!("objects {lo}-{hi}m")
}

/// Whole-image, object-box and per-range masks on the depth grid.
///
/// A cell belongs to a box when its center lies inside it. Cells covered by
/// several boxes go to the nearest object, so range masks never overlap.
/// Objects with no valid depth cell only join the object-box mask.
pub fn region_masks<S: Scalar>(
    annotations: &[BoxAnnotation2D<S>],
    gt_depth: &SparseDepthMap<S>,
    ranges: &[(f64, f64)],
) -> Result<Vec<RegionMask>> {
    let mut sorted = ranges.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    for w in sorted.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::Validation(format!(
                "depth ranges [{}, {}) and [{}, {}) overlap",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    if let Some(r) = ranges.iter().find(|r| !(r.0 < r.1)) {
        return Err(Error::Validation(format!("empty depth range [{}, {})", r.0, r.1)));
    }
    let (rows, cols) = (gt_depth.rows(), gt_depth.cols());
    let scale = gt_depth.scale as f64;
    let depths: Vec<Option<f64>> = annotations
        .iter()
        .map(|b| object_depth(b, gt_depth).map(|z| z.f64()))
        .collect();

    let mut objects = Grid::filled(1, rows, cols, false);
    // Per cell: nearest covering object with a depth.
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; rows * cols];
    for (i, b) in annotations.iter().enumerate() {
        let (x1, y1, x2, y2) = (b.x1.f64(), b.y1.f64(), b.x2.f64(), b.y2.f64());
        for r in 0..rows {
            let v = (r as f64 + 0.5) * scale;
            if v < y1 || v >= y2 {
                continue;
            }
            for c in 0..cols {
                let u = (c as f64 + 0.5) * scale;
                if u < x1 || u >= x2 {
                    continue;
                }
                objects.set(0, r, c, true);
                if let Some(z) = depths[i] {
                    let slot = &mut owner[r * cols + c];
                    if slot.is_none_or(|(bz, _)| z < bz) {
                        *slot = Some((z, i));
                    }
                }
            }
        }
    }
    let mut out = vec![
        RegionMask {
            label: "whole image".into(),
            mask: Grid::filled(1, rows, cols, true),
        },
        RegionMask {
            label: "object boxes".into(),
            mask: objects,
        },
    ];
    for &(lo, hi) in ranges {
        let mut m = Grid::filled(1, rows, cols, false);
        for (k, slot) in owner.iter().enumerate() {
            if let Some((z, _)) = slot {
                if *z >= lo && *z < hi {
                    m.set(0, k / cols, k % cols, true);
                }
            }
        }
        out.push(RegionMask {
            label: range_label(lo, hi),
            mask: m,
        });
    }
    Ok(out)
}
