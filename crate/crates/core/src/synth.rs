//! Rendered synthetic scenes in the KITTI tracking layout.
//!
//! A flat ground plane seen from a camera at fixed height, with box-shaped
//! cars and pedestrians standing on it. Depth is analytic: the ground at
//! image row `v` lies at `fy·h / (v − cy)`, each object is a fronto-parallel
//! plane at its own depth. Haze tints the blue channel with log-depth, so
//! depth is recoverable from local appearance; red/green separate the
//! classes. LiDAR returns are sampled at output-cell centers and stored in
//! the usual sensor axes (x forward, y left, z up).

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_label_row, BoxAnnotation2D};
use crate::error::{Error, Result};
use crate::geometry::{
    encode_lidar_bin, lift_pixel, tangent_to_geodetic, CameraCalibration, EgoPose, RigidTransform,
    SparseDepthMap,
};
use crate::grid::Grid;
use crate::io::{encode_rgb_png, write_atomic};

/// Physical `(width, height)` in meters per class.
pub const CLASS_SIZE_M: [(f64, f64); 2] = [(1.7, 1.5), (0.6, 1.7)];
/// LiDAR range limit.
pub const MAX_RANGE_M: f64 = 80.0;
const HAZE_NEAR: f64 = 2.0;
const HAZE_FAR: f64 = 100.0;

/// Object moving at constant velocity in world coordinates: `x` lateral
/// (right positive), `z` forward from the ego start position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub track_id: i64,
    pub class_id: usize,
    pub x: f64,
    pub z: f64,
    /// Meters per frame.
    pub vx: f64,
    pub vz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: (usize, usize),
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub camera_height: f64,
    pub frames: usize,
    /// Ego forward speed, meters per frame; the ego heads north.
    pub ego_speed: f64,
    pub origin: (f64, f64),
    /// Output stride at which LiDAR returns are sampled.
    pub lidar_stride: usize,
    /// Uniform per-pixel noise amplitude.
    pub noise: f64,
    pub seed: u64,
    pub objects: Vec<SynthObject>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let obj = |track_id, class_id, x, z, vx, vz| SynthObject {
            track_id,
            class_id,
            x,
            z,
            vx,
            vz,
        };
        Self {
            image_size: (128, 64),
            fx: 120.0,
            fy: 120.0,
            cx: 64.0,
            cy: 24.0,
            camera_height: 1.65,
            frames: 10,
            ego_speed: 0.5,
            origin: (49.0113, 8.4163),
            lidar_stride: 4,
            noise: 0.0,
            seed: 0,
            objects: vec![
                obj(1, 0, -3.0, 12.0, 0.08, 0.8),
                obj(2, 0, 3.5, 20.0, -0.05, 0.0),
                obj(3, 1, -0.6, 9.0, 0.05, 0.5),
            ],
        }
    }
}

/// Blue-channel haze value for depth `z`.
pub fn haze(z: f64) -> f64 {
    let f = ((z / HAZE_NEAR).ln() / (HAZE_FAR / HAZE_NEAR).ln()).clamp(0.0, 1.0);
    0.1 + 0.8 * f
}

const CLASS_RG: [(f64, f64); 2] = [(0.9, 0.2), (0.2, 0.9)];
const GROUND_RG: (f64, f64) = (0.45, 0.45);
const SKY: [f64; 3] = [0.6, 0.6, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub image: Grid<f64>,
    pub boxes: Vec<BoxAnnotation2D<f64>>,
    /// Object depths aligned with `boxes`.
    pub depths: Vec<f64>,
    /// Depth at each LiDAR sample cell.
    pub depth: SparseDepthMap<f64>,
    /// KITTI velodyne records.
    pub lidar: Vec<[f32; 4]>,
    pub pose: EgoPose<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub calib: CameraCalibration<f64>,
    pub frames: Vec<SynthFrame>,
}

/// KITTI-like mounting: sensor x forward, y left, z up; the sensor sits
/// 0.27 m behind and 0.08 m above the camera.
pub fn kitti_like_lidar_to_cam() -> RigidTransform<f64> {
    RigidTransform {
        rotation: [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]],
        translation: [0.0, -0.08, -0.27],
    }
}

struct Placed {
    bbox: BoxAnnotation2D<f64>,
    depth: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w == 0 || h == 0 || self.frames == 0 || self.lidar_stride == 0 {
            return Err(Error::Config("synthetic scene needs positive sizes".into()));
        }
        if !(self.cy < h as f64 && self.camera_height > 0.0 && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("synthetic camera must see the ground".into()));
        }
        if let Some(o) = self.objects.iter().find(|o| o.class_id >= CLASS_SIZE_M.len()) {
            return Err(Error::Config(format!("object {} has unknown class {}", o.track_id, o.class_id)));
        }
        Ok(())
    }

    pub fn calibration(&self) -> Result<CameraCalibration<f64>> {
        let mut c = CameraCalibration::pinhole(self.fx, self.fy, self.cx, self.cy, self.image_size)?;
        c.lidar_to_cam = kitti_like_lidar_to_cam();
        c.validate()?;
        Ok(c)
    }

    /// Camera-frame `(x, z)` of an object at frame `t`.
    fn object_at(&self, o: &SynthObject, t: usize) -> (f64, f64) {
        let t = t as f64;
        (o.x + o.vx * t, o.z + o.vz * t - self.ego_speed * t)
    }

    fn place(&self, t: usize) -> Vec<Placed> {
        let (w, h) = self.image_size;
        let mut placed: Vec<Placed> = self
            .objects
            .iter()
            .filter_map(|o| {
                let (x, z) = self.object_at(o, t);
                if z <= 1.0 {
                    return None;
                }
                let (wm, hm) = CLASS_SIZE_M[o.class_id];
                let u = self.cx + self.fx * x / z;
                let bottom = self.cy + self.fy * self.camera_height / z;
                let half_w = 0.5 * self.fx * wm / z;
                let bbox = BoxAnnotation2D {
                    x1: u - half_w,
                    y1: bottom - self.fy * hm / z,
                    x2: u + half_w,
                    y2: bottom,
                    class_id: o.class_id,
                    track_id: o.track_id,
                };
                let c = bbox.clipped(w, h)?;
                // Keep objects whose center stays visible.
                let (cu, cv) = bbox.center();
                (cu >= 0.0 && cv >= 0.0 && cu < w as f64 && cv < h as f64 && c.x2 - c.x1 >= 1.0)
                    .then_some(Placed { bbox, depth: z })
            })
            .collect();
        // Far to near, so nearer objects paint over farther ones.
        placed.sort_by(|a, b| b.depth.partial_cmp(&a.depth).unwrap());
        placed
    }

    /// Surface at a continuous image point: `(depth, red, green)` or `None` for sky.
    fn surface(&self, placed: &[Placed], u: f64, v: f64) -> Option<(f64, f64, f64)> {
        let hit = placed
            .iter()
            .rev()
            .find(|p| u >= p.bbox.x1 && u < p.bbox.x2 && v >= p.bbox.y1 && v < p.bbox.y2);
        if let Some(p) = hit {
            let (r, g) = CLASS_RG[p.bbox.class_id];
            return Some((p.depth, r, g));
        }
        (v > self.cy).then(|| (self.fy * self.camera_height / (v - self.cy), GROUND_RG.0, GROUND_RG.1))
    }

    fn pose(&self, t: usize) -> Result<EgoPose<f64>> {
        let (lat, lon) = tangent_to_geodetic(self.origin.0, self.origin.1, 0.0, self.ego_speed * t as f64);
        EgoPose::new(lat, lon, 110.0, std::f64::consts::FRAC_PI_2, t as f64 * crate::dataset::FRAME_PERIOD_S)
    }
}

pub fn render_scene(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let calib = config.calibration()?;
    let (w, h) = config.image_size;
    let r = config.lidar_stride;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let placed = config.place(t);
        let mut image = Grid::zeros(3, h, w);
        for y in 0..h {
            for x in 0..w {
                let rgb = match config.surface(&placed, x as f64 + 0.5, y as f64 + 0.5) {
                    Some((z, red, green)) => [red, green, haze(z)],
                    None => SKY,
                };
                for (c, v) in rgb.into_iter().enumerate() {
                    let n = if config.noise > 0.0 {
                        rng.gen_range(-config.noise..config.noise)
                    } else {
                        0.0
                    };
                    image.set(c, y, x, (v + n).clamp(0.0, 1.0));
                }
            }
        }
        let mut depth = SparseDepthMap::empty((w, h), r);
        let mut lidar = Vec::new();
        for row in 0..depth.rows() {
            for col in 0..depth.cols() {
                let (u, v) = ((col as f64 + 0.5) * r as f64, (row as f64 + 0.5) * r as f64);
                let Some((z, _, _)) = config.surface(&placed, u, v) else { continue };
                if z > MAX_RANGE_M {
                    continue;
                }
                depth.set(row, col, z);
                let p = calib.to_lidar(&lift_pixel(u, v, z, &calib)?);
                lidar.push([p[0] as f32, p[1] as f32, p[2] as f32, 0.5]);
            }
        }
        let mut boxes: Vec<(BoxAnnotation2D<f64>, f64)> = placed.iter().map(|p| (p.bbox, p.depth)).collect();
        boxes.sort_by_key(|b| b.0.track_id);
        frames.push(SynthFrame {
            image,
            depths: boxes.iter().map(|b| b.1).collect(),
            boxes: boxes.into_iter().map(|b| b.0).collect(),
            depth,
            lidar,
            pose: config.pose(t)?,
        });
    }
    Ok(SynthScene {
        config: config.clone(),
        calib,
        frames,
    })
}

fn oxts_line(p: &EgoPose<f64>) -> String {
    let mut v = vec![p.latitude, p.longitude, p.altitude, 0.0, 0.0, p.yaw];
    v.resize(30, 0.0);
    v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(" ")
}

/// Writes `image_02/<seq>/`, `velodyne/<seq>/`, `label_02/<seq>.txt`,
/// `calib/<seq>.txt` and `oxts/<seq>.txt` under `root`.
pub fn write_kitti_sequence(root: &Path, sequence: usize, scene: &SynthScene) -> Result<()> {
    let name = format!("{sequence:04}");
    let mut labels = String::new();
    let mut oxts = String::new();
    for (t, f) in scene.frames.iter().enumerate() {
        let (w, h) = scene.config.image_size;
        write_atomic(
            &root.join("image_02").join(&name).join(format!("{t:06}.png")),
            &encode_rgb_png(&f.image)?,
        )?;
        write_atomic(
            &root.join("velodyne").join(&name).join(format!("{t:06}.bin")),
            &encode_lidar_bin(&f.lidar),
        )?;
        for b in &f.boxes {
            if let Some(c) = b.clipped(w, h) {
                labels.push_str(&format_label_row(t, &c));
                labels.push('\n');
            }
        }
        oxts.push_str(&oxts_line(&f.pose));
        oxts.push('\n');
    }
    write_atomic(&root.join("label_02").join(format!("{name}.txt")), labels.as_bytes())?;
    write_atomic(&root.join("oxts").join(format!("{name}.txt")), oxts.as_bytes())?;
    write_atomic(
        &root.join("calib").join(format!("{name}.txt")),
        scene.calib.to_kitti_text().as_bytes(),
    )
}

/// Random well-separated scene: objects spread laterally so their boxes do
/// not overlap at the start.
pub fn random_config(seed: u64, objects: usize, frames: usize) -> SynthConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = SynthConfig::default();
    let lanes: Vec<f64> = (0..objects).map(|i| -6.0 + 12.0 * (i as f64 + 0.5) / objects as f64).collect();
    let objects = lanes
        .iter()
        .enumerate()
        .map(|(i, &x)| SynthObject {
            track_id: i as i64 + 1,
            class_id: rng.gen_range(0..2),
            x,
            z: rng.gen_range(12.0..25.0),
            vx: rng.gen_range(-0.05..0.05),
            vz: rng.gen_range(0.3..0.8),
        })
        .collect();
    SynthConfig {
        frames,
        seed,
        objects,
        ..base
    }
}
