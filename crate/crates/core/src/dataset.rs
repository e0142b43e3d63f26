//! KITTI-tracking layout ingestion: sequence indexing, train/val split,
//! consecutive frame pairs and geometry-consistent augmentation.
//!
//! Layout under the dataset root:
//!
//! ```text
//! image_02/<seq>/<frame>.png
//! velodyne/<seq>/<frame>.bin     (optional)
//! label_02/<seq>.txt             (optional)
//! calib/<seq>.txt
//! oxts/<seq>.txt                 (optional)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    lidar_xyz, load_calibration, parse_lidar_bin, CameraCalibration, EgoPose, SparseDepthMap, Vec3,
};
use crate::grid::Grid;
use crate::io;
use crate::scalar::Scalar;

/// Category names indexed by class id.
pub const CLASS_NAMES: [&str; 2] = ["Car", "Pedestrian"];
pub const NUM_CLASSES: usize = CLASS_NAMES.len();

/// KITTI tracking frame rate.
pub const FRAME_PERIOD_S: f64 = 0.1;

pub fn class_id(kitti_type: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == kitti_type)
}

/// Axis-aligned 2D box in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation2D<S> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
    pub class_id: usize,
    pub track_id: i64,
}

impl<S: Scalar> BoxAnnotation2D<S> {
    pub fn center(&self) -> (S, S) {
        let two = S::lit(2.0);
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn half_extents(&self) -> (S, S) {
        let two = S::lit(2.0);
        ((self.x2 - self.x1) / two, (self.y2 - self.y1) / two)
    }

    /// Clips to `[0, W] × [0, H]`; `None` if nothing with positive area remains.
    pub fn clipped(&self, width: usize, height: usize) -> Option<Self> {
        let (w, h) = (S::from_usize_lossy(width), S::from_usize_lossy(height));
        let z = S::zero();
        let b = Self {
            x1: self.x1.max(z).min(w),
            y1: self.y1.max(z).min(h),
            x2: self.x2.max(z).min(w),
            y2: self.y2.max(z).min(h),
            ..*self
        };
        (b.x2 > b.x1 && b.y2 > b.y1).then_some(b)
    }
}

/// One timestep of a sequence.
#[derive(Debug, Clone)]
pub struct Frame<S> {
    /// 3 × H × W, values in `[0, 1]`.
    pub image: Grid<S>,
    pub annotations: Vec<BoxAnnotation2D<S>>,
    pub cloud: Option<Vec<Vec3<S>>>,
    pub ego: Option<EgoPose<S>>,
    pub sequence_id: usize,
    pub frame_index: usize,
    pub calib: Arc<CameraCalibration<S>>,
}

impl<S: Scalar> Frame<S> {
    /// `(W, H)`.
    pub fn image_size(&self) -> (usize, usize) {
        (self.image.cols(), self.image.rows())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for a in &self.annotations {
            if !seen.insert(a.track_id) {
                return Err(Error::Validation(format!(
                    "sequence {} frame {}: duplicate track id {}",
                    self.sequence_id, self.frame_index, a.track_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub id: usize,
    pub name: String,
    pub frames: usize,
    pub has_lidar: bool,
    pub has_oxts: bool,
    pub has_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub sequences: Vec<SequenceInfo>,
}

impl DatasetIndex {
    pub fn sequence(&self, id: usize) -> Result<&SequenceInfo> {
        self.sequences
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Dataset(format!("unknown sequence {id}")))
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames).sum()
    }

    fn image_path(&self, seq: &SequenceInfo, t: usize) -> PathBuf {
        self.root
            .join("image_02")
            .join(&seq.name)
            .join(format!("{t:06}.png"))
    }

    fn lidar_path(&self, seq: &SequenceInfo, t: usize) -> PathBuf {
        self.root
            .join("velodyne")
            .join(&seq.name)
            .join(format!("{t:06}.bin"))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Parses `label_02/<seq>.txt`: keeps Car/Pedestrian rows, grouped by frame.
pub fn parse_labels<S: Scalar>(text: &str) -> Result<BTreeMap<usize, Vec<BoxAnnotation2D<S>>>> {
    let mut out: BTreeMap<usize, Vec<BoxAnnotation2D<S>>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.is_empty() {
            continue;
        }
        if tok.len() < 10 {
            return Err(Error::Parse(format!(
                "label line {}: expected at least 10 columns, got {}",
                lineno + 1,
                tok.len()
            )));
        }
        let Some(class) = class_id(tok[2]) else { continue };
        let bad = |what: &str| Error::Parse(format!("label line {}: bad {what}", lineno + 1));
        let frame: usize = tok[0].parse().map_err(|_| bad("frame"))?;
        let track_id: i64 = tok[1].parse().map_err(|_| bad("track id"))?;
        let num = |i: usize| -> Result<S> {
            tok[i].parse::<f64>().map(S::lit).map_err(|_| bad("bbox"))
        };
        out.entry(frame).or_default().push(BoxAnnotation2D {
            x1: num(6)?,
            y1: num(7)?,
            x2: num(8)?,
            y2: num(9)?,
            class_id: class,
            track_id,
        });
    }
    Ok(out)
}

/// Formats one KITTI tracking label row with placeholder 3D fields.
pub fn format_label_row<S: Scalar>(frame: usize, b: &BoxAnnotation2D<S>) -> String {
    format!(
        "{frame} {} {} 0 0 -10 {:.6} {:.6} {:.6} {:.6} -1 -1 -1 -1000 -1000 -1000 -10",
        b.track_id,
        CLASS_NAMES[b.class_id],
        b.x1.f64(),
        b.y1.f64(),
        b.x2.f64(),
        b.y2.f64()
    )
}

/// Parses `oxts/<seq>.txt`: one pose per line, `lat lon alt roll pitch yaw ...`.
pub fn parse_oxts<S: Scalar>(text: &str) -> Result<Vec<EgoPose<S>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split_whitespace()
                .take(6)
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("oxts line {}: {e}", i + 1)))?;
            if v.len() < 6 {
                return Err(Error::Parse(format!("oxts line {}: too few columns", i + 1)));
            }
            EgoPose::new(
                S::lit(v[0]),
                S::lit(v[1]),
                S::lit(v[2]),
                S::lit(v[5]),
                S::lit(i as f64 * FRAME_PERIOD_S),
            )
        })
        .collect()
}

/// Enumerates sequences under a KITTI-tracking root.
pub fn index_dataset(root: &Path) -> Result<DatasetIndex> {
    let image_root = root.join("image_02");
    if !image_root.is_dir() {
        return Err(Error::Dataset(format!(
            "{} has no image_02 directory",
            root.display()
        )));
    }
    let mut sequences = Vec::new();
    for dir in sorted_entries(&image_root)? {
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let Ok(id) = name.parse::<usize>() else { continue };
        let frames = sorted_entries(&dir)?
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .count();
        let label_path = root.join("label_02").join(format!("{name}.txt"));
        let has_labels = label_path.is_file();
        if has_labels {
            let labels = parse_labels::<f64>(&io::read_to_string(&label_path)?)?;
            if let Some((&last, _)) = labels.iter().next_back() {
                if last >= frames {
                    return Err(Error::Validation(format!(
                        "sequence {name}: labels reference frame {last} but only {frames} images exist"
                    )));
                }
            }
        }
        sequences.push(SequenceInfo {
            id,
            frames,
            has_lidar: root.join("velodyne").join(&name).is_dir(),
            has_oxts: root.join("oxts").join(format!("{name}.txt")).is_file(),
            has_labels,
            name,
        });
    }
    if sequences.is_empty() {
        return Err(Error::Dataset(format!(
            "no sequences found under {}",
            image_root.display()
        )));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        sequences,
    })
}

/// Sequence-level assignment to the training and evaluation halves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Deterministic split by whole sequences, in ascending id order: the
/// prefix whose frame count is closest to `ratio` of the total goes to
/// training, the rest to evaluation. Both halves are nonempty.
pub fn split_train_val(index: &DatasetIndex, ratio: f64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio must be in (0, 1), got {ratio}")));
    }
    if index.sequences.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 sequences, have {}",
            index.sequences.len()
        )));
    }
    let mut seqs: Vec<&SequenceInfo> = index.sequences.iter().collect();
    seqs.sort_by_key(|s| s.id);
    let target = ratio * index.total_frames() as f64;
    let mut best = (f64::INFINITY, 1);
    let mut acc = 0usize;
    for k in 1..seqs.len() {
        acc += seqs[k - 1].frames;
        let gap = (acc as f64 - target).abs();
        if gap < best.0 {
            best = (gap, k);
        }
    }
    let (train, val) = seqs.split_at(best.1);
    Ok(SplitAssignment {
        train: train.iter().map(|s| s.id).collect(),
        val: val.iter().map(|s| s.id).collect(),
    })
}

/// Per-sequence loader; caches calibration, labels and poses.
pub struct SequenceLoader<S> {
    index: DatasetIndex,
    info: SequenceInfo,
    calib: Arc<CameraCalibration<S>>,
    labels: BTreeMap<usize, Vec<BoxAnnotation2D<S>>>,
    poses: Option<Vec<EgoPose<S>>>,
    image_size: (usize, usize),
}

impl<S: Scalar> SequenceLoader<S> {
    pub fn open(index: &DatasetIndex, sequence_id: usize) -> Result<Self> {
        let info = index.sequence(sequence_id)?.clone();
        if info.frames == 0 {
            return Err(Error::Dataset(format!("sequence {} is empty", info.name)));
        }
        let first = image::image_dimensions(index.image_path(&info, 0))?;
        let image_size = (first.0 as usize, first.1 as usize);
        let calib_path = index.root.join("calib").join(format!("{}.txt", info.name));
        let calib = load_calibration(&io::read_to_string(&calib_path)?, image_size)?;
        let labels = if info.has_labels {
            let path = index.root.join("label_02").join(format!("{}.txt", info.name));
            parse_labels(&io::read_to_string(&path)?)?
        } else {
            BTreeMap::new()
        };
        let poses = if info.has_oxts {
            let path = index.root.join("oxts").join(format!("{}.txt", info.name));
            Some(parse_oxts(&io::read_to_string(&path)?)?)
        } else {
            None
        };
        Ok(Self {
            index: index.clone(),
            info,
            calib: Arc::new(calib),
            labels,
            poses,
            image_size,
        })
    }

    pub fn info(&self) -> &SequenceInfo {
        &self.info
    }

    pub fn len(&self) -> usize {
        self.info.frames
    }

    pub fn is_empty(&self) -> bool {
        self.info.frames == 0
    }

    pub fn calibration(&self) -> &Arc<CameraCalibration<S>> {
        &self.calib
    }

    pub fn poses(&self) -> Option<&[EgoPose<S>]> {
        self.poses.as_deref()
    }

    pub fn annotations(&self, t: usize) -> Vec<BoxAnnotation2D<S>> {
        let (w, h) = self.image_size;
        self.labels
            .get(&t)
            .map(|v| v.iter().filter_map(|b| b.clipped(w, h)).collect())
            .unwrap_or_default()
    }

    pub fn frame(&self, t: usize) -> Result<Frame<S>> {
        if t >= self.info.frames {
            return Err(Error::Index {
                what: format!("sequence {}", self.info.name),
                index: t,
                len: self.info.frames,
            });
        }
        let image = io::load_rgb(&self.index.image_path(&self.info, t))?;
        let lidar_path = self.index.lidar_path(&self.info, t);
        let cloud = if self.info.has_lidar && lidar_path.is_file() {
            Some(lidar_xyz(&parse_lidar_bin(&io::read_bytes(&lidar_path)?)?))
        } else {
            None
        };
        let frame = Frame {
            image,
            annotations: self.annotations(t),
            cloud,
            ego: self.poses.as_ref().and_then(|p| p.get(t).copied()),
            sequence_id: self.info.id,
            frame_index: t,
            calib: Arc::clone(&self.calib),
        };
        frame.validate()?;
        Ok(frame)
    }

    /// `(frame t, frame t−1)`; frame 0 pairs with itself.
    pub fn pair(&self, t: usize) -> Result<(Frame<S>, Frame<S>)> {
        let current = self.frame(t)?;
        let previous = if t == 0 { current.clone() } else { self.frame(t - 1)? };
        Ok((current, previous))
    }
}

pub fn load_frame_pair<S: Scalar>(
    index: &DatasetIndex,
    sequence_id: usize,
    t: usize,
) -> Result<(Frame<S>, Frame<S>)> {
    SequenceLoader::open(index, sequence_id)?.pair(t)
}

/// Random augmentation parameters. Ranges are symmetric around zero unless
/// stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub flip_probability: f64,
    /// `(min, max)` resize ratio.
    pub scale_range: (f64, f64),
    /// Output `(W, H)`; `None` keeps the input size.
    pub crop_size: Option<(usize, usize)>,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub max_rotation_deg: f64,
    pub max_translation_px: f64,
    /// Divide depth by the resize ratio instead of leaving it unchanged.
    pub scale_depth_with_resize: bool,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.0,
            scale_range: (1.0, 1.0),
            crop_size: None,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            max_rotation_deg: 0.0,
            max_translation_px: 0.0,
            scale_depth_with_resize: false,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self, image_size: (usize, usize)) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip_probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad scale_range ({lo}, {hi})")));
        }
        if let Some((cw, ch)) = self.crop_size {
            if cw > image_size.0 || ch > image_size.1 {
                return Err(Error::Config(format!(
                    "crop {cw}x{ch} larger than image {}x{}",
                    image_size.0, image_size.1
                )));
            }
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_translation_px", self.max_translation_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0")));
            }
        }
        Ok(())
    }
}

/// 2D affine map `p ↦ A·p + b` on continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &Affine2) -> Affine2 {
        let a = &other.m;
        let b = &self.m;
        let mut m = [[0.0; 3]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = a[i][0] * b[0][0] + a[i][1] * b[1][0];
            row[1] = a[i][0] * b[0][1] + a[i][1] * b[1][1];
            row[2] = a[i][0] * b[0][2] + a[i][1] * b[1][2] + a[i][2];
        }
        Affine2 { m }
    }

    pub fn inverse(&self) -> Affine2 {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        Affine2 {
            m: [
                [a, b, -(a * m[0][2] + b * m[1][2])],
                [c, d, -(c * m[0][2] + d * m[1][2])],
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine2::identity()
    }

    pub fn map_box<S: Scalar>(&self, b: &BoxAnnotation2D<S>) -> BoxAnnotation2D<S> {
        let corners = [
            self.apply(b.x1.f64(), b.y1.f64()),
            self.apply(b.x2.f64(), b.y1.f64()),
            self.apply(b.x1.f64(), b.y2.f64()),
            self.apply(b.x2.f64(), b.y2.f64()),
        ];
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
            corners.iter().map(pick).fold(init, f)
        };
        BoxAnnotation2D {
            x1: S::lit(fold(f64::min, f64::INFINITY, |p| p.0)),
            y1: S::lit(fold(f64::min, f64::INFINITY, |p| p.1)),
            x2: S::lit(fold(f64::max, f64::NEG_INFINITY, |p| p.0)),
            y2: S::lit(fold(f64::max, f64::NEG_INFINITY, |p| p.1)),
            ..*b
        }
    }
}

/// Output of [`augment`].
#[derive(Debug, Clone)]
pub struct AugmentedPair<S> {
    pub current: Frame<S>,
    pub previous: Frame<S>,
    pub depth: SparseDepthMap<S>,
    /// Input pixel → output pixel.
    pub transform: Affine2,
    pub resize_ratio: f64,
}

#[derive(Debug, Clone, Copy)]
struct ColorJitter {
    brightness: f64,
    contrast: f64,
    saturation: f64,
}

fn warp_image<S: Scalar>(img: &Grid<S>, inv: &Affine2, out_w: usize, out_h: usize) -> Grid<S> {
    let (ch, h, w) = img.shape();
    let mut out = Grid::zeros(ch, out_h, out_w);
    for r in 0..out_h {
        for c in 0..out_w {
            let (sx, sy) = inv.apply(c as f64 + 0.5, r as f64 + 0.5);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            for k in 0..ch {
                let mut acc = 0.0;
                for (dy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
                    for (dx, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
                        let wgt = wx * wy;
                        if wgt == 0.0 {
                            continue;
                        }
                        let (xi, yi) = (x0 + dx, y0 + dy);
                        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
                            acc += wgt * img.get(k, yi as usize, xi as usize).f64();
                        }
                    }
                }
                out.set(k, r, c, S::lit(acc));
            }
        }
    }
    out
}

fn jitter_image<S: Scalar>(img: &mut Grid<S>, j: ColorJitter) {
    let (_, h, w) = img.shape();
    let n = (h * w) as f64;
    let mut gray = vec![0.0; h * w];
    for (i, g) in gray.iter_mut().enumerate() {
        *g = 0.299 * img.plane(0)[i].f64() + 0.587 * img.plane(1)[i].f64()
            + 0.114 * img.plane(2)[i].f64();
    }
    let mean = gray.iter().sum::<f64>() / n;
    for k in 0..3 {
        for (i, v) in img.plane_mut(k).iter_mut().enumerate() {
            let mut x = v.f64() + j.brightness;
            x = (x - mean) * (1.0 + j.contrast) + mean;
            let g = gray[i] + j.brightness;
            x = g + (x - g) * (1.0 + j.saturation);
            *v = S::lit(x.clamp(0.0, 1.0));
        }
    }
}

fn warp_depth<S: Scalar>(
    depth: &SparseDepthMap<S>,
    fwd: &Affine2,
    out_size: (usize, usize),
    depth_factor: f64,
) -> SparseDepthMap<S> {
    let r = depth.scale as f64;
    let mut out = SparseDepthMap::empty(out_size, depth.scale);
    for (row, col, z) in depth.iter_valid() {
        let (x, y) = fwd.apply((col as f64 + 0.5) * r, (row as f64 + 0.5) * r);
        if x < 0.0 || y < 0.0 {
            continue;
        }
        let (nr, nc) = ((y / r).floor() as usize, (x / r).floor() as usize);
        if nr < out.rows() && nc < out.cols() {
            let z = if depth_factor == 1.0 { z } else { S::lit(z.f64() / depth_factor) };
            out.insert_min(nr, nc, z);
        }
    }
    out
}

fn transform_frame<S: Scalar>(
    frame: &Frame<S>,
    fwd: &Affine2,
    inv: &Affine2,
    out_size: (usize, usize),
    jitter: Option<ColorJitter>,
) -> Frame<S> {
    let mut image = if fwd.is_identity() && out_size == frame.image_size() {
        frame.image.clone()
    } else {
        warp_image(&frame.image, inv, out_size.0, out_size.1)
    };
    if let Some(j) = jitter {
        jitter_image(&mut image, j);
    }
    let annotations = frame
        .annotations
        .iter()
        .filter_map(|b| fwd.map_box(b).clipped(out_size.0, out_size.1))
        .collect();
    Frame {
        image,
        annotations,
        // In-plane transforms invalidate the LiDAR→image projection.
        cloud: if fwd.is_identity() { frame.cloud.clone() } else { None },
        ego: frame.ego,
        sequence_id: frame.sequence_id,
        frame_index: frame.frame_index,
        calib: Arc::clone(&frame.calib),
    }
}

/// Applies one random geometric transform to both frames, their boxes and
/// the sparse depth map; color jitter touches images only.
pub fn augment<S: Scalar>(
    pair: (&Frame<S>, &Frame<S>),
    depth_gt: &SparseDepthMap<S>,
    config: &AugmentationConfig,
) -> Result<AugmentedPair<S>> {
    let (current, previous) = pair;
    let size = current.image_size();
    if previous.image_size() != size {
        return Err(Error::Validation("frame pair sizes differ".into()));
    }
    config.validate(size)?;
    let (w, h) = (size.0 as f64, size.1 as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = || rng.gen::<f64>();
    let (u_flip, u_scale, u_rot, u_tx, u_ty, u_cx, u_cy) =
        (draw(), draw(), draw(), draw(), draw(), draw(), draw());
    let (u_b, u_c, u_s) = (draw(), draw(), draw());
    let sym = |u: f64, m: f64| (2.0 * u - 1.0) * m;

    let mut fwd = Affine2::identity();
    if u_flip < config.flip_probability {
        fwd = fwd.then(&Affine2 {
            m: [[-1.0, 0.0, w], [0.0, 1.0, 0.0]],
        });
    }
    let (lo, hi) = config.scale_range;
    let scale = lo + (hi - lo) * u_scale;
    if scale != 1.0 {
        fwd = fwd.then(&Affine2 {
            m: [[scale, 0.0, 0.0], [0.0, scale, 0.0]],
        });
    }
    let theta = sym(u_rot, config.max_rotation_deg).to_radians();
    let (tx, ty) = (
        sym(u_tx, config.max_translation_px),
        sym(u_ty, config.max_translation_px),
    );
    if theta != 0.0 || tx != 0.0 || ty != 0.0 {
        let (s, c) = theta.sin_cos();
        let (mx, my) = (scale * w / 2.0, scale * h / 2.0);
        fwd = fwd.then(&Affine2 {
            m: [
                [c, -s, mx - c * mx + s * my + tx],
                [s, c, my - s * mx - c * my + ty],
            ],
        });
    }
    let out_size = config.crop_size.unwrap_or(size);
    let (sw, sh) = (scale * w, scale * h);
    let offset = |scaled: f64, out: usize, u: f64| {
        let slack = scaled - out as f64;
        if slack >= 0.0 {
            (u * slack).floor()
        } else {
            (slack / 2.0).floor()
        }
    };
    let (ox, oy) = (offset(sw, out_size.0, u_cx), offset(sh, out_size.1, u_cy));
    if ox != 0.0 || oy != 0.0 {
        fwd = fwd.then(&Affine2 {
            m: [[1.0, 0.0, -ox], [0.0, 1.0, -oy]],
        });
    }
    let inv = fwd.inverse();
    let jitter = (config.brightness > 0.0 || config.contrast > 0.0 || config.saturation > 0.0)
        .then(|| ColorJitter {
            brightness: sym(u_b, config.brightness),
            contrast: sym(u_c, config.contrast),
            saturation: sym(u_s, config.saturation),
        });
    let depth_factor = if config.scale_depth_with_resize { scale } else { 1.0 };
    Ok(AugmentedPair {
        current: transform_frame(current, &fwd, &inv, out_size, jitter),
        previous: transform_frame(previous, &fwd, &inv, out_size, jitter),
        depth: if fwd.is_identity() && out_size == size {
            depth_gt.clone()
        } else {
            warp_depth(depth_gt, &fwd, out_size, depth_factor)
        },
        transform: fwd,
        resize_ratio: scale,
    })
}
