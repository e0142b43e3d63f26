//! CLEAR-MOT tracking metrics and monocular depth metrics.

mod depth;
mod mot;

pub use depth::{
    compute_depth_metrics, region_masks, DepthAccumulator, DepthReport, RegionMask, DEFAULT_DEPTH_CAP,
    DEFAULT_RANGES, MIN_PRED_DEPTH,
};
pub use mot::{
    box_iou, compute_mot, compute_mot_by, compute_mot_ground, ground_distance, match_frame, match_frame_by,
    FrameMatch, FrameSet, GroundBox, MotAccumulator, MotReport, Tracked, DEFAULT_GROUND_GATE,
    DEFAULT_IOU_THRESHOLD,
};

use serde::Serialize;

/// Flat `key=value` line for any serializable report; nested values are
/// skipped, `null` is written as `na`.
pub fn key_value_line<T: Serialize>(prefix: &[(&str, &str)], report: &T) -> String {
    let value = serde_json::to_value(report).expect("reports serialize");
    let mut parts: Vec<String> = prefix.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let s = match v {
                serde_json::Value::Null => "na".to_string(),
                serde_json::Value::String(s) => s.replace(' ', "_"),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => continue,
            };
            parts.push(format!("{k}={s}"));
        }
    }
    parts.join(" ")
}
