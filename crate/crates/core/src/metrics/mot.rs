use std::collections::{BTreeMap, HashMap, HashSet};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::dataset::BoxAnnotation2D;
use crate::error::{Error, Result};
use crate::geometry::CameraCalibration;
use crate::scalar::Scalar;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Ground-plane match radius in meters.
pub const DEFAULT_GROUND_GATE: f64 = 2.0;

/// Fixed-point scale for the integer assignment solver.
const WEIGHT_SCALE: f64 = 1e9;

/// Boxes per frame index.
pub type FrameSet<T> = BTreeMap<usize, Vec<T>>;

pub trait Tracked {
    fn track_id(&self) -> i64;
}

impl<S> Tracked for BoxAnnotation2D<S> {
    fn track_id(&self) -> i64 {
        self.track_id
    }
}

/// Box with an object depth, for the ground-plane criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundBox<S> {
    pub bbox: BoxAnnotation2D<S>,
    pub depth: S,
}

impl<S> Tracked for GroundBox<S> {
    fn track_id(&self) -> i64 {
        self.bbox.track_id
    }
}

pub fn box_iou<S: Scalar>(a: &BoxAnnotation2D<S>, b: &BoxAnnotation2D<S>) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).f64().max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).f64().max(0.0);
    let inter = iw * ih;
    let area = |x: &BoxAnnotation2D<S>| ((x.x2 - x.x1).f64() * (x.y2 - x.y1).f64()).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Distance in meters between the two lifted box centers, measured in the
/// camera's x–z plane.
pub fn ground_distance<S: Scalar>(a: &GroundBox<S>, b: &GroundBox<S>, calib: &CameraCalibration<S>) -> f64 {
    let x = |g: &GroundBox<S>| ((g.bbox.center().0 - calib.cx) * g.depth / calib.fx).f64();
    let dx = x(a) - x(b);
    let dz = (a.depth - b.depth).f64();
    (dx * dx + dz * dz).sqrt()
}

/// Matches in one frame; indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(gt, pred, precision)` triples.
    pub matches: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

/// Generic frame matcher. `score(gt, pred)` returns `None` for inadmissible
/// pairs, else `(weight, precision)`: the assignment maximizes total weight,
/// the precision is what MOTP averages. `previous` maps gt ids to the
/// prediction id they were matched to in the previous frame; such pairs are
/// kept first when still admissible.
pub fn match_frame_by<T: Tracked>(
    gt: &[T],
    pred: &[T],
    previous: Option<&HashMap<i64, i64>>,
    score: impl Fn(&T, &T) -> Option<(f64, f64)>,
) -> FrameMatch {
    let mut out = FrameMatch::default();
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    if let Some(prev) = previous {
        for (gi, g) in gt.iter().enumerate() {
            let Some(&pid) = prev.get(&g.track_id()) else { continue };
            let hit = pred
                .iter()
                .enumerate()
                .find(|(pi, p)| !pred_used[*pi] && p.track_id() == pid);
            if let Some((pi, p)) = hit {
                if let Some((_, prec)) = score(g, p) {
                    gt_used[gi] = true;
                    pred_used[pi] = true;
                    out.matches.push((gi, pi, prec));
                }
            }
        }
    }
    let rows: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let cols: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    if !rows.is_empty() && !cols.is_empty() {
        let scores: Vec<Vec<Option<(f64, f64)>>> = rows
            .iter()
            .map(|&g| cols.iter().map(|&p| score(&gt[g], &pred[p])).collect())
            .collect();
        // Solver needs rows ≤ columns.
        let transpose = rows.len() > cols.len();
        let (nr, nc) = if transpose {
            (cols.len(), rows.len())
        } else {
            (rows.len(), cols.len())
        };
        let weight = |r: usize, c: usize| -> i64 {
            let s = if transpose { scores[c][r] } else { scores[r][c] };
            // +1 so every admissible pair beats leaving both sides unmatched.
            s.map_or(0, |(w, _)| (w * WEIGHT_SCALE).round() as i64 + 1)
        };
        let m = Matrix::from_fn(nr, nc, |(r, c)| weight(r, c));
        let (_, assign) = kuhn_munkres(&m);
        for (r, &c) in assign.iter().enumerate() {
            let (ri, ci) = if transpose { (c, r) } else { (r, c) };
            if let Some((_, prec)) = scores[ri][ci] {
                gt_used[rows[ri]] = true;
                pred_used[cols[ci]] = true;
                out.matches.push((rows[ri], cols[ci], prec));
            }
        }
    }
    out.matches.sort_by_key(|m| m.0);
    out.false_negatives = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    out.false_positives = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    out
}

fn check_threshold(t: f64, what: &str) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} must lie in (0, 1], got {t}")))
    }
}

/// IoU matching: pairs need the same class and IoU ≥ `iou_threshold`; total
/// IoU is maximized.
pub fn match_frame<S: Scalar>(
    gt: &[BoxAnnotation2D<S>],
    pred: &[BoxAnnotation2D<S>],
    iou_threshold: f64,
    previous: Option<&HashMap<i64, i64>>,
) -> Result<FrameMatch> {
    check_threshold(iou_threshold, "iou_threshold")?;
    Ok(match_frame_by(gt, pred, previous, |g, p| {
        let iou = box_iou(g, p);
        (iou >= iou_threshold && g.class_id == p.class_id).then_some((iou, iou))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    /// Undefined without ground truth.
    pub mota: Option<f64>,
    /// Mean match precision; undefined without matches. Mean IoU for the IoU
    /// criterion, mean distance in meters for the ground-plane criterion.
    pub motp: Option<f64>,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub ground_truth: usize,
    pub matches: usize,
    pub trajectories: usize,
    pub criterion: String,
}

/// Per-trajectory bookkeeping across frames.
#[derive(Debug, Clone, Default)]
struct GtHistory {
    lifespan: usize,
    matched: usize,
    last_pred: Option<i64>,
    was_matched: bool,
    ever_matched: bool,
}

/// Count-weighted accumulation; sequences may be accumulated independently
/// and merged.
#[derive(Debug, Clone, Default)]
pub struct MotAccumulator {
    fp: usize,
    fn_: usize,
    idsw: usize,
    frag: usize,
    gt: usize,
    matches: usize,
    precision_sum: f64,
    /// `(matched, lifespan)` per finished trajectory.
    coverage: Vec<(usize, usize)>,
}

impl MotAccumulator {
    /// Adds one sequence.
    pub fn add_sequence<T: Tracked>(
        &mut self,
        gt: &FrameSet<T>,
        pred: &FrameSet<T>,
        score: impl Fn(&T, &T) -> Option<(f64, f64)>,
    ) -> Result<()> {
        let empty: Vec<T> = Vec::new();
        let frames: std::collections::BTreeSet<usize> = gt.keys().chain(pred.keys()).copied().collect();
        let mut hist: BTreeMap<i64, GtHistory> = BTreeMap::new();
        let mut previous: HashMap<i64, i64> = HashMap::new();
        for f in frames {
            let g = gt.get(&f).unwrap_or(&empty);
            let p = pred.get(&f).unwrap_or(&empty);
            let mut seen = HashSet::new();
            for b in g {
                if !seen.insert(b.track_id()) {
                    return Err(Error::Validation(format!(
                        "duplicate ground-truth id {} in frame {f}",
                        b.track_id()
                    )));
                }
            }
            let m = match_frame_by(g, p, Some(&previous), &score);
            let mut now: HashMap<i64, i64> = HashMap::new();
            for &(gi, pi, prec) in &m.matches {
                now.insert(g[gi].track_id(), p[pi].track_id());
                self.precision_sum += prec;
            }
            for b in g {
                let id = b.track_id();
                let h = hist.entry(id).or_default();
                h.lifespan += 1;
                match now.get(&id) {
                    Some(&pid) => {
                        if h.last_pred.is_some_and(|l| l != pid) {
                            self.idsw += 1;
                        }
                        if h.ever_matched && !h.was_matched {
                            self.frag += 1;
                        }
                        h.last_pred = Some(pid);
                        h.matched += 1;
                        h.was_matched = true;
                        h.ever_matched = true;
                    }
                    None => h.was_matched = false,
                }
            }
            self.fp += m.false_positives.len();
            self.fn_ += m.false_negatives.len();
            self.gt += g.len();
            self.matches += m.matches.len();
            previous = now;
        }
        self.coverage.extend(hist.values().map(|h| (h.matched, h.lifespan)));
        Ok(())
    }

    pub fn merge(&mut self, other: MotAccumulator) {
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.idsw += other.idsw;
        self.frag += other.frag;
        self.gt += other.gt;
        self.matches += other.matches;
        self.precision_sum += other.precision_sum;
        self.coverage.extend(other.coverage);
    }

    pub fn report(&self, criterion: &str) -> MotReport {
        let n = self.coverage.len();
        // Integer comparisons avoid rounding at the 80 % / 20 % boundaries.
        let mt = self.coverage.iter().filter(|(m, l)| 5 * m >= 4 * l).count();
        let ml = self.coverage.iter().filter(|(m, l)| 5 * m <= *l).count();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        MotReport {
            mota: (self.gt > 0)
                .then(|| 1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt as f64),
            motp: (self.matches > 0).then(|| self.precision_sum / self.matches as f64),
            mostly_tracked: frac(mt),
            mostly_lost: frac(ml),
            id_switches: self.idsw,
            fragmentations: self.frag,
            false_positives: self.fp,
            false_negatives: self.fn_,
            ground_truth: self.gt,
            matches: self.matches,
            trajectories: n,
            criterion: criterion.to_string(),
        }
    }
}

pub fn compute_mot_by<T: Tracked>(
    gt: &FrameSet<T>,
    pred: &FrameSet<T>,
    criterion: &str,
    score: impl Fn(&T, &T) -> Option<(f64, f64)>,
) -> Result<MotReport> {
    let mut acc = MotAccumulator::default();
    acc.add_sequence(gt, pred, score)?;
    Ok(acc.report(criterion))
}

/// CLEAR-MOT over one sequence with the 2D IoU criterion.
pub fn compute_mot<S: Scalar>(
    gt: &FrameSet<BoxAnnotation2D<S>>,
    pred: &FrameSet<BoxAnnotation2D<S>>,
    iou_threshold: f64,
) -> Result<MotReport> {
    check_threshold(iou_threshold, "iou_threshold")?;
    compute_mot_by(gt, pred, "iou", |g, p| {
        let iou = box_iou(g, p);
        (iou >= iou_threshold && g.class_id == p.class_id).then_some((iou, iou))
    })
}

/// CLEAR-MOT where a prediction is a true positive when its lifted center
/// lies within `max_distance` meters of the ground truth on the ground plane.
pub fn compute_mot_ground<S: Scalar>(
    gt: &FrameSet<GroundBox<S>>,
    pred: &FrameSet<GroundBox<S>>,
    calib: &CameraCalibration<S>,
    max_distance: f64,
) -> Result<MotReport> {
    if !(max_distance > 0.0) {
        return Err(Error::Validation(format!(
            "ground-plane gate must be positive, got {max_distance}"
        )));
    }
    compute_mot_by(gt, pred, "ground_plane", |g, p| {
        let d = ground_distance(g, p, calib);
        (d <= max_distance && g.bbox.class_id == p.bbox.class_id).then_some((max_distance - d, d))
    })
}
