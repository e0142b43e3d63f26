//! Glue between the stages: training samples from frames, network inference
//! and the per-sequence tracking loop.

use crate::codec::{
    decode_detections, encode_targets, object_depth, render_prior_map, Detection, EncodeParams, HeadMaps,
    PriorObject, DEFAULT_MIN_OVERLAP,
};
use crate::dataset::{Frame, SequenceLoader, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{render_depth_map, SparseDepthMap};
use crate::losses::{LossBreakdown, LossConfig};
use crate::net::{train_step, AdamParams, LrSchedule, ModelConfig, NetworkOutputs, PriorMaps, ToyNet, TrainSample, TrainState};
use crate::scalar::Scalar;
use crate::tracker::{Track, Tracker, TrackerConfig};

/// Sparse depth target of a frame; empty when it has no LiDAR.
pub fn frame_depth<S: Scalar>(frame: &Frame<S>, scale: usize) -> SparseDepthMap<S> {
    match &frame.cloud {
        Some(cloud) => render_depth_map(cloud, &frame.calib, scale),
        None => SparseDepthMap::empty(frame.image_size(), scale),
    }
}

pub fn prior_maps<S: Scalar>(objects: &[PriorObject<S>], config: &ModelConfig) -> PriorMaps<S> {
    let (cols, rows) = config.output_size();
    let (heatmap, depth) = render_prior_map(objects, rows, cols, config.downscale, DEFAULT_MIN_OVERLAP);
    PriorMaps { heatmap, depth }
}

/// Priors rendered from a frame's ground-truth boxes.
pub fn ground_truth_priors<S: Scalar>(frame: &Frame<S>, depth: &SparseDepthMap<S>) -> Vec<PriorObject<S>> {
    frame
        .annotations
        .iter()
        .map(|b| PriorObject::from_box(b, object_depth(b, depth)))
        .collect()
}

fn check_size<S: Scalar>(frame: &Frame<S>, config: &ModelConfig) -> Result<()> {
    if frame.image_size() != config.input_size {
        return Err(Error::Contract {
            role: "image".into(),
            expected: format!("{:?}", config.input_size),
            actual: format!("{:?}", frame.image_size()),
        });
    }
    Ok(())
}

/// Training sample for `(current, previous)`. Priors come from the previous
/// frame's ground truth, except for a self-paired first frame, which gets
/// none, as at inference time.
pub fn build_sample<S: Scalar>(
    model: &ToyNet<S>,
    current: &Frame<S>,
    previous: &Frame<S>,
) -> Result<TrainSample<S>> {
    let cfg = model.config();
    check_size(current, cfg)?;
    let depth_t = frame_depth(current, cfg.downscale);
    let depth_prev = frame_depth(previous, cfg.downscale);
    let targets = encode_targets(
        &current.annotations,
        &previous.annotations,
        &depth_t,
        Some(&depth_prev),
        &EncodeParams::new(cfg.downscale, cfg.num_classes),
    )?;
    let priors = if previous.frame_index == current.frame_index {
        Vec::new()
    } else {
        ground_truth_priors(previous, &depth_prev)
    };
    let input = model.assemble_input(&current.image, &previous.image, Some(&prior_maps(&priors, cfg)))?;
    Ok(TrainSample { input, targets })
}

/// Every frame pair of a sequence as training samples.
pub fn sequence_samples<S: Scalar>(model: &ToyNet<S>, loader: &SequenceLoader<S>) -> Result<Vec<TrainSample<S>>> {
    (0..loader.len())
        .map(|t| {
            let (cur, prev) = loader.pair(t)?;
            build_sample(model, &cur, &prev)
        })
        .collect()
}

pub fn infer<S: Scalar>(
    model: &ToyNet<S>,
    current: &Frame<S>,
    previous: &Frame<S>,
    priors: &[PriorObject<S>],
) -> Result<NetworkOutputs<S>> {
    check_size(current, model.config())?;
    model.forward(&current.image, &previous.image, Some(&prior_maps(priors, model.config())))
}

/// Detections read straight off the ground-truth targets: perfect centers,
/// sizes, depths and displacements, confidence 1.
pub fn oracle_detections<S: Scalar>(current: &Frame<S>, previous: &Frame<S>, scale: usize) -> Result<Vec<Detection<S>>> {
    let depth_t = frame_depth(current, scale);
    let depth_prev = frame_depth(previous, scale);
    let targets = encode_targets(
        &current.annotations,
        &previous.annotations,
        &depth_t,
        Some(&depth_prev),
        &EncodeParams::new(scale, NUM_CLASSES),
    )?;
    let mut dets = decode_detections(&HeadMaps::from_targets(&targets), S::lit(0.999), usize::MAX, scale)?;
    // Targets carry the object depth at the center cell only when LiDAR hit
    // it; fall back to the box lookup.
    for d in &mut dets {
        if let Some(o) = targets.objects.iter().find(|o| o.cell == d.cell && o.class_id == d.class_id) {
            d.depth = o.depth;
        }
    }
    Ok(dets)
}

/// Counts reported by a tracking run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct TrackingStats {
    pub frames: usize,
    pub detections: usize,
    pub tracks: usize,
}

/// Where detections come from in [`track_sequence`].
pub enum DetectionSource<'a, S> {
    Network { model: &'a ToyNet<S>, max_detections: usize },
    /// Ground-truth targets (pipeline checks).
    Oracle { scale: usize },
}

/// Runs detection and tracking over a whole sequence, feeding each frame's
/// tracks back as the next frame's priors. `on_frame` sees every frame with
/// the network outputs (absent for the oracle) and the decoded detections.
pub fn track_sequence_with<S: Scalar>(
    loader: &SequenceLoader<S>,
    source: &DetectionSource<'_, S>,
    config: TrackerConfig,
    mut on_frame: impl FnMut(&Frame<S>, Option<&NetworkOutputs<S>>, &[Detection<S>]) -> Result<()>,
) -> Result<(Vec<Track<S>>, TrackingStats)> {
    let mut tracker = Tracker::new(config)?;
    let mut stats = TrackingStats::default();
    for t in 0..loader.len() {
        let (cur, prev) = loader.pair(t)?;
        let (out, dets) = match source {
            DetectionSource::Network { model, max_detections } => {
                let out = infer(model, &cur, &prev, &tracker.priors())?;
                let dets = decode_detections(
                    &out.head_maps(),
                    S::lit(config.detection_threshold),
                    *max_detections,
                    model.config().downscale,
                )?;
                (Some(out), dets)
            }
            DetectionSource::Oracle { scale } => (None, oracle_detections(&cur, &prev, *scale)?),
        };
        on_frame(&cur, out.as_ref(), &dets)?;
        stats.detections += dets.len();
        tracker.step(&dets, t)?;
        stats.frames += 1;
    }
    let tracks = tracker.into_all_tracks();
    stats.tracks = tracks.len();
    Ok((tracks, stats))
}

pub fn track_sequence<S: Scalar>(
    loader: &SequenceLoader<S>,
    source: &DetectionSource<'_, S>,
    config: TrackerConfig,
) -> Result<(Vec<Track<S>>, TrackingStats)> {
    track_sequence_with(loader, source, config, |_, _, _| Ok(()))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamParams,
    pub loss: LossConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            schedule: LrSchedule {
                steps_per_epoch: 200,
                ..LrSchedule::default()
            },
            adam: AdamParams::default(),
            loss: LossConfig::default(),
        }
    }
}

/// Adam training over `samples`, continuing from `state.step`. Batches cycle
/// through the samples in order, so a run is fully determined by its inputs.
/// `on_step` receives the step index and the batch loss.
pub fn train_model<S: Scalar>(
    model: &mut ToyNet<S>,
    state: &mut TrainState<S>,
    samples: &[TrainSample<S>],
    opts: &TrainOptions,
    mut on_step: impl FnMut(u64, &LossBreakdown),
) -> Result<()> {
    if samples.is_empty() || opts.batch_size == 0 {
        return Err(Error::Validation("training needs samples and a positive batch size".into()));
    }
    let n = samples.len();
    let mut batch = Vec::with_capacity(opts.batch_size);
    while state.step < opts.steps {
        let start = state.step as usize * opts.batch_size;
        batch.clear();
        batch.extend((0..opts.batch_size).map(|k| samples[(start + k) % n].clone()));
        let step = state.step;
        let loss = train_step(model, state, &batch, &opts.loss, &opts.schedule, &opts.adam)?;
        on_step(step, &loss);
    }
    Ok(())
}
