//! World-frame bird's-eye-view trajectories from tracks and ego poses.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{ego_ground_offset, ego_to_world, geodetic_to_tangent, lift_pixel, CameraCalibration, EgoPose, RigidTransform};
use crate::scalar::Scalar;
use crate::tracker::Track;

pub const CSV_HEADER: &str = "actor_id,frame,lat,lon,range_m,confidence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActorId {
    Ego,
    Track(u64),
}

impl std::fmt::Display for ActorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActorId::Ego => f.write_str("ego"),
            ActorId::Track(id) => write!(f, "{id}"),
        }
    }
}

impl std::str::FromStr for ActorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ego" {
            return Ok(ActorId::Ego);
        }
        s.parse()
            .map(ActorId::Track)
            .map_err(|_| Error::Parse(format!("bad actor id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSample<S> {
    pub frame: usize,
    pub latitude: S,
    pub longitude: S,
    /// Ground-plane distance from the ego origin in meters.
    pub range_m: S,
    pub confidence: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevTrajectory<S> {
    pub actor_id: ActorId,
    pub samples: Vec<BevSample<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevExtraction<S> {
    /// Ego first, then tracks by id.
    pub trajectories: Vec<BevTrajectory<S>>,
    /// Track states dropped for lack of an ego pose or a positive depth.
    pub skipped: usize,
}

/// Lifts every track state with its depth and places it in the world using
/// the pose of the state's frame (`poses[frame]`).
pub fn extract_bev<S: Scalar>(
    tracks: &[Track<S>],
    poses: &[EgoPose<S>],
    calib: &CameraCalibration<S>,
    cam_to_ego: &RigidTransform<S>,
) -> Result<BevExtraction<S>> {
    if poses.is_empty() {
        return Err(Error::Export(
            "no ego poses: world-frame export impossible, use the ego-relative export".into(),
        ));
    }
    let ego = BevTrajectory {
        actor_id: ActorId::Ego,
        samples: poses
            .iter()
            .enumerate()
            .map(|(frame, p)| BevSample {
                frame,
                latitude: p.latitude,
                longitude: p.longitude,
                range_m: S::zero(),
                confidence: S::one(),
            })
            .collect(),
    };
    let mut out = vec![ego];
    let mut skipped = 0;
    let mut sorted: Vec<&Track<S>> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.id);
    for t in sorted {
        let mut samples = Vec::with_capacity(t.states.len());
        for s in &t.states {
            let (Some(pose), Some(z)) = (poses.get(s.frame_index), s.depth.filter(|z| *z > S::zero())) else {
                skipped += 1;
                continue;
            };
            let p = lift_pixel(s.center.0, s.center.1, z, calib)?;
            let (forward, left) = ego_ground_offset(&p, cam_to_ego);
            let (latitude, longitude) = ego_to_world(&p, pose, cam_to_ego);
            samples.push(BevSample {
                frame: s.frame_index,
                latitude,
                longitude,
                range_m: (forward * forward + left * left).sqrt(),
                confidence: s.confidence,
            });
        }
        if !samples.is_empty() {
            out.push(BevTrajectory {
                actor_id: ActorId::Track(t.id),
                samples,
            });
        }
    }
    Ok(BevExtraction {
        trajectories: out,
        skipped,
    })
}

/// Ego-frame `(frame, id, forward, left, confidence)` rows, usable without poses.
pub fn ego_relative_rows<S: Scalar>(
    tracks: &[Track<S>],
    calib: &CameraCalibration<S>,
    cam_to_ego: &RigidTransform<S>,
) -> Result<Vec<(usize, u64, S, S, S)>> {
    let mut rows = Vec::new();
    for t in tracks {
        for s in &t.states {
            let Some(z) = s.depth.filter(|z| *z > S::zero()) else { continue };
            let p = lift_pixel(s.center.0, s.center.1, z, calib)?;
            let (f, l) = ego_ground_offset(&p, cam_to_ego);
            rows.push((s.frame_index, t.id, f, l, s.confidence));
        }
    }
    rows.sort_by_key(|r| (r.0, r.1));
    Ok(rows)
}

pub fn format_ego_relative_csv<S: Scalar>(rows: &[(usize, u64, S, S, S)]) -> String {
    let mut out = String::from("actor_id,frame,forward_m,left_m,confidence\n");
    for (frame, id, f, l, c) in rows {
        let _ = writeln!(out, "{id},{frame},{},{},{}", f.f64(), l.f64(), c.f64());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Geojson,
}

fn check_nonempty<S>(trajectories: &[BevTrajectory<S>]) -> Result<()> {
    if trajectories.iter().all(|t| t.samples.is_empty()) {
        return Err(Error::Export("nothing to export: no trajectory samples".into()));
    }
    Ok(())
}

/// Values are printed in shortest round-trip form.
pub fn format_csv<S: Scalar>(trajectories: &[BevTrajectory<S>]) -> Result<String> {
    check_nonempty(trajectories)?;
    let mut out = format!("{CSV_HEADER}\n");
    for t in trajectories {
        for s in &t.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.actor_id,
                s.frame,
                s.latitude.f64(),
                s.longitude.f64(),
                s.range_m.f64(),
                s.confidence.f64()
            );
        }
    }
    Ok(out)
}

pub fn parse_csv<S: Scalar>(text: &str) -> Result<Vec<BevTrajectory<S>>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Parse(format!("expected CSV header {CSV_HEADER:?}")));
    }
    let mut out: Vec<BevTrajectory<S>> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse(format!("CSV row {}: malformed", i + 2));
        if f.len() != 6 {
            return Err(bad());
        }
        let actor: ActorId = f[0].parse()?;
        let num = |k: usize| f[k].parse::<f64>().map(S::lit).map_err(|_| bad());
        let sample = BevSample {
            frame: f[1].parse().map_err(|_| bad())?,
            latitude: num(2)?,
            longitude: num(3)?,
            range_m: num(4)?,
            confidence: num(5)?,
        };
        match out.last_mut() {
            Some(t) if t.actor_id == actor => t.samples.push(sample),
            _ => out.push(BevTrajectory {
                actor_id: actor,
                samples: vec![sample],
            }),
        }
    }
    Ok(out)
}

/// One feature per actor: a LineString, or a Point for single-sample
/// actors (a LineString needs two positions). Per-point values sit in
/// parallel property arrays.
pub fn to_geojson<S: Scalar>(trajectories: &[BevTrajectory<S>]) -> Result<Value> {
    check_nonempty(trajectories)?;
    let features: Vec<Value> = trajectories
        .iter()
        .filter(|t| !t.samples.is_empty())
        .map(|t| {
            let coords: Vec<Value> = t
                .samples
                .iter()
                .map(|s| json!([s.longitude.f64(), s.latitude.f64()]))
                .collect();
            let geometry = if coords.len() == 1 {
                json!({"type": "Point", "coordinates": coords[0]})
            } else {
                json!({"type": "LineString", "coordinates": coords})
            };
            json!({
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "actor_id": t.actor_id.to_string(),
                    "frames": t.samples.iter().map(|s| s.frame).collect::<Vec<_>>(),
                    "range_m": t.samples.iter().map(|s| s.range_m.f64()).collect::<Vec<_>>(),
                    "confidence": t.samples.iter().map(|s| s.confidence.f64()).collect::<Vec<_>>(),
                }
            })
        })
        .collect();
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

pub fn parse_geojson<S: Scalar>(text: &str) -> Result<Vec<BevTrajectory<S>>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("GeoJSON: {e}")))?;
    let bad = |what: &str| Error::Parse(format!("GeoJSON: {what}"));
    let features = v["features"].as_array().ok_or_else(|| bad("missing features"))?;
    let mut out = Vec::new();
    for f in features {
        let g = &f["geometry"];
        let coords: Vec<&Value> = match g["type"].as_str() {
            Some("Point") => vec![&g["coordinates"]],
            Some("LineString") => g["coordinates"]
                .as_array()
                .ok_or_else(|| bad("coordinates"))?
                .iter()
                .collect(),
            _ => return Err(bad("unsupported geometry")),
        };
        let p = &f["properties"];
        let actor: ActorId = p["actor_id"].as_str().ok_or_else(|| bad("actor_id"))?.parse()?;
        let arr = |k: &str| -> Result<Vec<f64>> {
            p[k].as_array()
                .ok_or_else(|| bad(k))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(k)))
                .collect()
        };
        let (frames, ranges, conf) = (arr("frames")?, arr("range_m")?, arr("confidence")?);
        if frames.len() != coords.len() || ranges.len() != coords.len() || conf.len() != coords.len() {
            return Err(bad("property arrays disagree with geometry"));
        }
        let mut samples = Vec::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            let lon = c[0].as_f64().ok_or_else(|| bad("coordinate"))?;
            let lat = c[1].as_f64().ok_or_else(|| bad("coordinate"))?;
            samples.push(BevSample {
                frame: frames[i] as usize,
                latitude: S::lit(lat),
                longitude: S::lit(lon),
                range_m: S::lit(ranges[i]),
                confidence: S::lit(conf[i]),
            });
        }
        out.push(BevTrajectory {
            actor_id: actor,
            samples,
        });
    }
    Ok(out)
}

pub fn export_trajectories<S: Scalar>(
    trajectories: &[BevTrajectory<S>],
    format: ExportFormat,
    path: &Path,
) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => format_csv(trajectories)?,
        ExportFormat::Geojson => {
            serde_json::to_string_pretty(&to_geojson(trajectories)?).expect("GeoJSON serializes") + "\n"
        }
    };
    crate::io::write_atomic(path, text.as_bytes())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Static SVG of trajectories on a local east/north plane. Dots fade with
/// age: the latest frame is opaque, the earliest nearly transparent.
pub fn plot_svg<S: Scalar>(trajectories: &[BevTrajectory<S>]) -> Result<String> {
    check_nonempty(trajectories)?;
    let origin = trajectories
        .iter()
        .find(|t| t.actor_id == ActorId::Ego && !t.samples.is_empty())
        .or_else(|| trajectories.iter().find(|t| !t.samples.is_empty()))
        .map(|t| (t.samples[0].latitude.f64(), t.samples[0].longitude.f64()))
        .expect("nonempty checked");
    let pts: Vec<Vec<(f64, f64, usize)>> = trajectories
        .iter()
        .map(|t| {
            t.samples
                .iter()
                .map(|s| {
                    let (e, n) = geodetic_to_tangent(origin.0, origin.1, s.latitude.f64(), s.longitude.f64());
                    (e, n, s.frame)
                })
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut min_e, mut max_e, mut min_n, mut max_n) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let (mut f0, mut f1) = (usize::MAX, 0);
    for &(e, n, f) in all {
        min_e = min_e.min(e);
        max_e = max_e.max(e);
        min_n = min_n.min(n);
        max_n = max_n.max(n);
        f0 = f0.min(f);
        f1 = f1.max(f);
    }
    let (size, margin) = (800.0, 40.0);
    let span = (max_e - min_e).max(max_n - min_n).max(1.0);
    let k = (size - 2.0 * margin) / span;
    let xy = |e: f64, n: f64| (margin + (e - min_e) * k, size - margin - (n - min_n) * k);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{margin}" y="24" font-family="sans-serif" font-size="14">BEV trajectories, scale bar 10 m</text>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
        size - margin - 10.0 * k,
        size - 15.0,
        size - margin,
        size - 15.0
    );
    for (t, p) in trajectories.iter().zip(&pts) {
        let color = match t.actor_id {
            ActorId::Ego => "#000000",
            ActorId::Track(id) => PALETTE[id as usize % PALETTE.len()],
        };
        let line: Vec<String> = p
            .iter()
            .map(|&(e, n, _)| {
                let (x, y) = xy(e, n);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            line.join(" "),
            t.actor_id
        );
        for &(e, n, f) in p {
            let (x, y) = xy(e, n);
            let age = if f1 > f0 { (f1 - f) as f64 / (f1 - f0) as f64 } else { 0.0 };
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}" fill-opacity="{:.3}"/>"#,
                1.0 - 0.85 * age
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
