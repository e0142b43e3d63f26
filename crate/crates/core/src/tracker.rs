//! Tracking conditioned on detection.
//!
//! Each detection carries a predicted displacement toward its previous-frame
//! position. Moving the detection by that displacement gives a point in
//! `(u, v, depth)` that is greedily matched, in descending confidence, to the
//! nearest unclaimed same-class track inside both the planar and the depth
//! gate.

use serde::{Deserialize, Serialize};

use crate::codec::{Detection, PriorObject};
use crate::dataset::{BoxAnnotation2D, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How matched candidates are ranked once inside both gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Nearest in the image plane.
    #[default]
    Planar,
    /// Planar distance normalized by the gate radius plus normalized depth gap.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub detection_threshold: f64,
    /// Frames a track may stay unmatched before it dies.
    pub max_age: usize,
    /// Planar gate as a multiple of the track's larger half-extent.
    pub gate_2d: f64,
    /// Depth gate in meters.
    pub gate_depth: f64,
    /// Odd window of the depth median filter.
    pub depth_smooth_window: usize,
    /// Output stride used to convert cell displacements to pixels.
    pub downscale: usize,
    pub cost_mode: CostMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            detection_threshold: 0.3,
            max_age: 2,
            gate_2d: 1.0,
            gate_depth: 2.0,
            depth_smooth_window: 3,
            downscale: 4,
            cost_mode: CostMode::Planar,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_2d > 0.0 && self.gate_depth > 0.0) {
            return Err(Error::Config("tracker gates must be positive".into()));
        }
        if self.depth_smooth_window == 0 || self.depth_smooth_window % 2 == 0 {
            return Err(Error::Config(format!(
                "depth_smooth_window must be odd, got {}",
                self.depth_smooth_window
            )));
        }
        if self.downscale == 0 {
            return Err(Error::Config("downscale must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState<S> {
    pub frame_index: usize,
    pub center: (S, S),
    pub half_extents: (S, S),
    pub depth: Option<S>,
    pub confidence: S,
    pub class_id: usize,
}

impl<S: Scalar> TrackState<S> {
    pub fn bbox(&self) -> [S; 4] {
        [
            self.center.0 - self.half_extents.0,
            self.center.1 - self.half_extents.1,
            self.center.0 + self.half_extents.0,
            self.center.1 + self.half_extents.1,
        ]
    }

    fn from_detection(d: &Detection<S>, frame_index: usize) -> Self {
        Self {
            frame_index,
            center: d.center,
            half_extents: d.half_extents,
            depth: d.depth,
            confidence: d.confidence,
            class_id: d.class_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track<S> {
    pub id: u64,
    pub states: Vec<TrackState<S>>,
    /// Frames since creation.
    pub age: usize,
    /// Consecutive unmatched frames.
    pub missed: usize,
    pub active: bool,
}

impl<S: Scalar> Track<S> {
    pub fn last(&self) -> &TrackState<S> {
        self.states.last().expect("tracks always hold a state")
    }

    pub fn class_id(&self) -> usize {
        self.last().class_id
    }

    pub fn prior(&self) -> PriorObject<S> {
        let s = self.last();
        PriorObject {
            center: s.center,
            half_extents: s.half_extents,
            depth: s.depth,
            confidence: s.confidence,
        }
    }

    /// Depths of the states that have one, in time order.
    pub fn depth_series(&self) -> Vec<S> {
        self.states.iter().filter_map(|s| s.depth).collect()
    }

    /// Replaces state depths with the median-filtered series.
    pub fn smooth_depths(&mut self, window: usize) {
        let smoothed = smooth_depth(&self.depth_series(), window);
        let mut it = smoothed.into_iter();
        for s in self.states.iter_mut().filter(|s| s.depth.is_some()) {
            s.depth = it.next();
        }
    }
}

/// Sliding median with odd `window`. Near the ends the window shrinks
/// symmetrically so it stays centered and odd.
pub fn smooth_depth<S: Scalar>(series: &[S], window: usize) -> Vec<S> {
    let half = window.max(1) / 2;
    let n = series.len();
    (0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            let mut w: Vec<S> = series[i - r..=i + r].to_vec();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            w[r]
        })
        .collect()
}

/// Result of [`associate`]; indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Association {
    /// `(detection, track)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Displacement-compensated `(u, v, depth)` of a detection in the previous frame.
pub fn compensated<S: Scalar>(d: &Detection<S>, downscale: usize) -> ((S, S), Option<S>) {
    let r = S::from_usize_lossy(downscale);
    (
        (
            d.center.0 + d.displacement[0] * r,
            d.center.1 + d.displacement[1] * r,
        ),
        d.depth.map(|z| z + d.displacement[2]),
    )
}

/// Gated cost of pairing a detection with a track, `None` outside a gate or
/// across classes.
pub fn pair_cost<S: Scalar>(
    det: &Detection<S>,
    track: &Track<S>,
    config: &TrackerConfig,
) -> Option<f64> {
    let last = track.last();
    if last.class_id != det.class_id {
        return None;
    }
    let ((u, v), z) = compensated(det, config.downscale);
    let planar = ((u - last.center.0).f64().powi(2) + (v - last.center.1).f64().powi(2)).sqrt();
    let radius = config.gate_2d * last.half_extents.0.max(last.half_extents.1).f64();
    if planar > radius {
        return None;
    }
    let dz = match (z, last.depth) {
        (Some(a), Some(b)) => {
            let dz = (a - b).abs().f64();
            if dz > config.gate_depth {
                return None;
            }
            dz
        }
        _ => 0.0,
    };
    Some(match config.cost_mode {
        CostMode::Planar => planar,
        CostMode::Combined => planar / radius.max(f64::MIN_POSITIVE) + dz / config.gate_depth,
    })
}

/// Greedy confidence-ordered matching of detections to tracks.
pub fn associate<S: Scalar>(
    detections: &[Detection<S>],
    tracks: &[Track<S>],
    config: &TrackerConfig,
) -> Association {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; tracks.len()];
    let mut out = Association::default();
    for di in order {
        let best = tracks
            .iter()
            .enumerate()
            .filter(|(ti, t)| !claimed[*ti] && t.active)
            .filter_map(|(ti, t)| pair_cost(&detections[di], t, config).map(|c| (c, ti)))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        match best {
            Some((_, ti)) => {
                claimed[ti] = true;
                out.matches.push((di, ti));
            }
            None => out.unmatched_detections.push(di),
        }
    }
    out.unmatched_detections.sort_unstable();
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !claimed[i]).collect();
    out
}

/// Per-sequence tracker state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker<S> {
    pub config: TrackerConfig,
    /// Live tracks.
    tracks: Vec<Track<S>>,
    /// Tracks that died, in order of death.
    finished: Vec<Track<S>>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl<S: Scalar> Tracker<S> {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn active_tracks(&self) -> &[Track<S>] {
        &self.tracks
    }

    /// Priors for the next frame: tracks seen in the most recent frame.
    pub fn priors(&self) -> Vec<PriorObject<S>> {
        self.tracks
            .iter()
            .filter(|t| t.missed == 0)
            .map(Track::prior)
            .collect()
    }

    /// Processes one frame and returns the tracks updated in it.
    pub fn step(&mut self, detections: &[Detection<S>], frame_index: usize) -> Result<Vec<Track<S>>> {
        if let Some(last) = self.last_frame {
            if frame_index <= last {
                return Err(Error::Sequencing {
                    last,
                    got: frame_index,
                });
            }
        }
        let gap = self.last_frame.map_or(1, |l| frame_index - l);
        self.last_frame = Some(frame_index);
        let thr = S::lit(self.config.detection_threshold);
        let dets: Vec<Detection<S>> = detections
            .iter()
            .filter(|d| d.confidence >= thr)
            .cloned()
            .collect();
        let assoc = associate(&dets, &self.tracks, &self.config);
        for &(di, ti) in &assoc.matches {
            let t = &mut self.tracks[ti];
            t.states.push(TrackState::from_detection(&dets[di], frame_index));
            t.missed = 0;
            t.age += gap;
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.missed += gap;
            t.age += gap;
            if t.missed > self.config.max_age {
                t.active = false;
            }
        }
        let (alive, dead): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.active);
        self.tracks = alive;
        self.finished.extend(dead);
        for &di in &assoc.unmatched_detections {
            self.tracks.push(Track {
                id: self.next_id,
                states: vec![TrackState::from_detection(&dets[di], frame_index)],
                age: 0,
                missed: 0,
                active: true,
            });
            self.next_id += 1;
        }
        Ok(self
            .tracks
            .iter()
            .filter(|t| t.missed == 0)
            .cloned()
            .collect())
    }

    /// All tracks ever created, ordered by id.
    pub fn into_all_tracks(self) -> Vec<Track<S>> {
        let mut all: Vec<Track<S>> = self.finished.into_iter().chain(self.tracks).collect();
        all.sort_by_key(|t| t.id);
        all
    }
}

/// One exported tracking row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord<S> {
    pub frame: usize,
    pub id: u64,
    pub class_id: usize,
    pub bbox: [S; 4],
    pub depth: Option<S>,
    pub confidence: S,
}

impl<S: Scalar> TrackRecord<S> {
    pub fn to_box(&self) -> BoxAnnotation2D<S> {
        BoxAnnotation2D {
            x1: self.bbox[0],
            y1: self.bbox[1],
            x2: self.bbox[2],
            y2: self.bbox[3],
            class_id: self.class_id,
            track_id: self.id as i64,
        }
    }
}

/// Flattens tracks into rows sorted by `(frame, id)`.
pub fn track_records<S: Scalar>(tracks: &[Track<S>]) -> Vec<TrackRecord<S>> {
    let mut rows: Vec<TrackRecord<S>> = tracks
        .iter()
        .flat_map(|t| {
            t.states.iter().map(move |s| TrackRecord {
                frame: s.frame_index,
                id: t.id,
                class_id: s.class_id,
                bbox: s.bbox(),
                depth: s.depth,
                confidence: s.confidence,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

/// KITTI tracking result rows with the score column followed by depth
/// (`-1` when unknown):
/// `frame id type -1 -1 -10 x1 y1 x2 y2 -1 -1 -1 -1000 -1000 -1000 -10 score depth`.
pub fn format_track_records<S: Scalar>(rows: &[TrackRecord<S>]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{} {} {} -1 -1 -10 {} {} {} {} -1 -1 -1 -1000 -1000 -1000 -10 {} {}\n",
            r.frame,
            r.id,
            CLASS_NAMES[r.class_id],
            r.bbox[0].f64(),
            r.bbox[1].f64(),
            r.bbox[2].f64(),
            r.bbox[3].f64(),
            r.confidence.f64(),
            r.depth.map_or(-1.0, |d| d.f64()),
        ));
    }
    out
}

pub fn parse_track_records<S: Scalar>(text: &str) -> Result<Vec<TrackRecord<S>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("track line {}: malformed", i + 1));
        if t.len() < 19 {
            return Err(bad());
        }
        let num = |k: usize| t[k].parse::<f64>().map_err(|_| bad());
        let class_id = crate::dataset::class_id(t[2]).ok_or_else(bad)?;
        let depth = num(18)?;
        rows.push(TrackRecord {
            frame: t[0].parse().map_err(|_| bad())?,
            id: t[1].parse().map_err(|_| bad())?,
            class_id,
            bbox: [
                S::lit(num(6)?),
                S::lit(num(7)?),
                S::lit(num(8)?),
                S::lit(num(9)?),
            ],
            depth: (depth > 0.0).then(|| S::lit(depth)),
            confidence: S::lit(num(17)?),
        });
    }
    Ok(rows)
}

/// Rebuilds tracks from exported rows.
pub fn tracks_from_records<S: Scalar>(rows: &[TrackRecord<S>]) -> Vec<Track<S>> {
    let mut by_id: std::collections::BTreeMap<u64, Track<S>> = Default::default();
    for r in rows {
        let two = S::lit(2.0);
        let state = TrackState {
            frame_index: r.frame,
            center: ((r.bbox[0] + r.bbox[2]) / two, (r.bbox[1] + r.bbox[3]) / two),
            half_extents: ((r.bbox[2] - r.bbox[0]) / two, (r.bbox[3] - r.bbox[1]) / two),
            depth: r.depth,
            confidence: r.confidence,
            class_id: r.class_id,
        };
        by_id
            .entry(r.id)
            .or_insert_with(|| Track {
                id: r.id,
                states: Vec::new(),
                age: 0,
                missed: 0,
                active: true,
            })
            .states
            .push(state);
    }
    let mut tracks: Vec<Track<S>> = by_id.into_values().collect();
    for t in &mut tracks {
        t.states.sort_by_key(|s| s.frame_index);
        t.age = t.last().frame_index - t.states[0].frame_index;
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(u: f64, v: f64, z: f64, conf: f64) -> Detection<f64> {
        Detection {
            center: (u, v),
            half_extents: (10.0, 10.0),
            confidence: conf,
            label: None,
            depth: Some(z),
            class_id: 0,
            displacement: [0.0; 3],
            cell: (0, 0),
        }
    }

    #[test]
    fn smoothing_examples() {
        let s = [10.0, 10.0, 50.0, 10.0, 10.0];
        assert_eq!(smooth_depth(&s, 3), vec![10.0; 5]);
        assert_eq!(smooth_depth(&s, 1), s.to_vec());
        assert_eq!(smooth_depth(&[7.0; 4], 5), vec![7.0; 4]);
        assert!(smooth_depth::<f64>(&[], 3).is_empty());
    }

    #[test]
    fn depth_gate_excludes() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&[det(50.0, 50.0, 10.0, 0.9)], 0).unwrap();
        let a = associate(&[det(50.0, 50.0, 13.0, 0.9)], tr.active_tracks(), &tr.config);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_detections, vec![0]);
        let a = associate(&[det(52.0, 50.0, 11.0, 0.9)], tr.active_tracks(), &tr.config);
        assert_eq!(a.matches, vec![(0, 0)]);
    }

    #[test]
    fn class_must_agree() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&[det(50.0, 50.0, 10.0, 0.9)], 0).unwrap();
        let mut d = det(50.0, 50.0, 10.0, 0.9);
        d.class_id = 1;
        assert!(associate(&[d], tr.active_tracks(), &tr.config).matches.is_empty());
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut tr = Tracker::<f64>::new(TrackerConfig::default()).unwrap();
        tr.step(&[], 3).unwrap();
        assert!(matches!(tr.step(&[], 3), Err(Error::Sequencing { last: 3, got: 3 })));
    }

    #[test]
    fn tracks_die_after_max_age() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&[det(50.0, 50.0, 10.0, 0.9), det(150.0, 50.0, 10.0, 0.9)], 0)
            .unwrap();
        for f in 1..=3 {
            tr.step(&[], f).unwrap();
        }
        assert!(tr.active_tracks().is_empty());
    }

    #[test]
    fn reappearing_object_keeps_id() {
        let cfg = TrackerConfig {
            max_age: 2,
            ..Default::default()
        };
        let mut tr = Tracker::new(cfg).unwrap();
        tr.step(&[det(50.0, 50.0, 10.0, 0.9)], 0).unwrap();
        tr.step(&[det(51.0, 50.0, 10.0, 0.9)], 1).unwrap();
        assert!(tr.step(&[], 2).unwrap().is_empty());
        assert_eq!(tr.active_tracks()[0].missed, 1);
        let seen = tr.step(&[det(53.0, 50.0, 10.0, 0.9)], 3).unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].id, 1);
        assert_eq!(seen[0].states.len(), 3);
    }

    #[test]
    fn record_text_roundtrip() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&[det(50.0, 50.0, 10.5, 0.75)], 0).unwrap();
        tr.step(&[det(50.0, 51.0, 10.25, 0.5)], 1).unwrap();
        let rows = track_records(&tr.clone().into_all_tracks());
        let back: Vec<TrackRecord<f64>> = parse_track_records(&format_track_records(&rows)).unwrap();
        assert_eq!(back, rows);
        let tracks = tracks_from_records(&back);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].states.len(), 2);
    }
}
