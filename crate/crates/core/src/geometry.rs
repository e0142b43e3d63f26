//! Camera/LiDAR calibration, projection into sparse depth maps, pixel lifting
//! and ego-relative to geodetic conversion.
//!
//! Camera frame convention: x right, y down, z forward (meters).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::{cast, Scalar};

/// Meters per degree of latitude (and of longitude at the equator) on the
/// local tangent plane.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

const ROTATION_TOLERANCE: f64 = 1e-6;

pub type Mat3<S> = [[S; 3]; 3];
pub type Vec3<S> = [S; 3];

fn mat_vec<S: Scalar>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn transpose<S: Scalar>(m: &Mat3<S>) -> Mat3<S> {
    let mut t = [[S::zero(); 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            t[j][i] = v;
        }
    }
    t
}

fn identity3<S: Scalar>() -> Mat3<S> {
    let mut m = [[S::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = S::one();
    }
    m
}

fn determinant<S: Scalar>(m: &Mat3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Checks `RᵀR = I` and `det R = +1` within 1e-6, evaluated in `f64`.
pub fn validate_rotation<S: Scalar>(m: &Mat3<S>, role: &str) -> Result<()> {
    let m64: Mat3<f64> = m.map(|row| row.map(|v| v.f64()));
    if m64.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{role}: non-finite entry")));
    }
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m64[k][i] * m64[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > ROTATION_TOLERANCE {
                return Err(Error::Validation(format!(
                    "{role}: rotation is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                )));
            }
        }
    }
    let det = determinant(&m64);
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::Validation(format!(
            "{role}: rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<S> {
    pub rotation: Mat3<S>,
    pub translation: Vec3<S>,
}

impl<S: Scalar> RigidTransform<S> {
    pub fn identity() -> Self {
        Self {
            rotation: identity3(),
            translation: [S::zero(); 3],
        }
    }

    pub fn from_translation(translation: Vec3<S>) -> Self {
        Self {
            rotation: identity3(),
            translation,
        }
    }

    /// Parses a row-major 3×4 `[R | t]` block.
    pub fn from_row_major_3x4(v: &[S]) -> Option<Self> {
        if v.len() != 12 {
            return None;
        }
        let mut rotation = [[S::zero(); 3]; 3];
        let mut translation = [S::zero(); 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = v[r * 4 + c];
            }
            translation[r] = v[r * 4 + 3];
        }
        Some(Self {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vec3<S>) -> Vec3<S> {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, &self.translation);
        Self {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn validate(&self, role: &str) -> Result<()> {
        validate_rotation(&self.rotation, role)?;
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{role}: non-finite translation")));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> RigidTransform<T> {
        RigidTransform {
            rotation: self.rotation.map(|row| row.map(cast)),
            translation: self.translation.map(cast),
        }
    }
}

/// Pinhole intrinsics plus the LiDAR→camera chain.
///
/// A LiDAR point `X` maps to the camera frame as
/// `rect · (lidar_to_cam · X) + camera_offset`, then projects with
/// `u = fx·x/z + cx`, `v = fy·y/z + cy`. `camera_offset` is the translation
/// column folded out of a KITTI `P2` matrix (zero when the projection matrix
/// has none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub lidar_to_cam: RigidTransform<S>,
    pub rect: Option<Mat3<S>>,
    pub camera_offset: Vec3<S>,
    /// `(W, H)` in pixels.
    pub image_size: (usize, usize),
}

/// A projected LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint<S> {
    pub u: S,
    pub v: S,
    pub z: S,
}

impl<S: Scalar> CameraCalibration<S> {
    /// Builds and validates a calibration.
    pub fn new(
        fx: S,
        fy: S,
        cx: S,
        cy: S,
        lidar_to_cam: RigidTransform<S>,
        rect: Option<Mat3<S>>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let calib = Self {
            fx,
            fy,
            cx,
            cy,
            lidar_to_cam,
            rect,
            camera_offset: [S::zero(); 3],
            image_size,
        };
        calib.validate()?;
        Ok(calib)
    }

    /// Pinhole camera whose LiDAR frame coincides with the camera frame.
    pub fn pinhole(fx: S, fy: S, cx: S, cy: S, image_size: (usize, usize)) -> Result<Self> {
        Self::new(fx, fy, cx, cy, RigidTransform::identity(), None, image_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > S::zero() && self.fy > S::zero()) {
            return Err(Error::Validation(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        self.lidar_to_cam.validate("lidar_to_cam")?;
        if let Some(rect) = &self.rect {
            validate_rotation(rect, "rect")?;
        }
        Ok(())
    }

    /// LiDAR frame → (rectified) camera frame.
    pub fn to_camera(&self, p: &Vec3<S>) -> Vec3<S> {
        let mut c = self.lidar_to_cam.apply(p);
        if let Some(rect) = &self.rect {
            c = mat_vec(rect, &c);
        }
        [
            c[0] + self.camera_offset[0],
            c[1] + self.camera_offset[1],
            c[2] + self.camera_offset[2],
        ]
    }

    /// Camera frame → LiDAR frame; inverse of [`Self::to_camera`].
    pub fn to_lidar(&self, c: &Vec3<S>) -> Vec3<S> {
        let mut p = [
            c[0] - self.camera_offset[0],
            c[1] - self.camera_offset[1],
            c[2] - self.camera_offset[2],
        ];
        if let Some(rect) = &self.rect {
            p = mat_vec(&transpose(rect), &p);
        }
        self.lidar_to_cam.inverse().apply(&p)
    }

    /// Continuous pinhole projection of a camera-frame point; `None` when
    /// the point is not in front of the camera.
    pub fn project_camera(&self, c: &Vec3<S>) -> Option<(S, S)> {
        if c[2] <= S::zero() {
            return None;
        }
        Some((
            self.fx * c[0] / c[2] + self.cx,
            self.fy * c[1] / c[2] + self.cy,
        ))
    }

    pub fn in_image(&self, u: S, v: S) -> bool {
        let (w, h) = self.image_size;
        u >= S::zero() && v >= S::zero() && u < S::from_usize_lossy(w) && v < S::from_usize_lossy(h)
    }

    pub fn cast<T: Scalar>(&self) -> CameraCalibration<T> {
        CameraCalibration {
            fx: cast(self.fx),
            fy: cast(self.fy),
            cx: cast(self.cx),
            cy: cast(self.cy),
            lidar_to_cam: self.lidar_to_cam.cast(),
            rect: self.rect.map(|m| m.map(|row| row.map(cast))),
            camera_offset: self.camera_offset.map(cast),
            image_size: self.image_size,
        }
    }

    /// Serializes to the KITTI tracking calibration text layout.
    pub fn to_kitti_text(&self) -> String {
        let f = |v: S| format!("{:.12e}", v.f64());
        let p2 = [
            self.fx * self.camera_offset[0] + self.cx * self.camera_offset[2],
            self.fy * self.camera_offset[1] + self.cy * self.camera_offset[2],
            self.camera_offset[2],
        ];
        let z = S::zero();
        let p2_row = [
            self.fx, z, self.cx, p2[0], z, self.fy, self.cy, p2[1], z, z, S::one(), p2[2],
        ];
        let rect = self.rect.unwrap_or_else(identity3);
        let tr = &self.lidar_to_cam;
        let mut tr_row = Vec::with_capacity(12);
        for r in 0..3 {
            tr_row.extend_from_slice(&tr.rotation[r]);
            tr_row.push(tr.translation[r]);
        }
        let join = |vals: &[S]| vals.iter().map(|&v| f(v)).collect::<Vec<_>>().join(" ");
        format!(
            "P2: {}\nR_rect {}\nTr_velo_cam {}\n",
            join(&p2_row),
            join(&rect.iter().flatten().copied().collect::<Vec<_>>()),
            join(&tr_row)
        )
    }
}

fn find_entry<'a>(text: &'a str, keys: &[&str]) -> Option<Vec<&'a str>> {
    for line in text.lines() {
        let mut tokens = line.split_whitespace();
        let Some(head) = tokens.next() else { continue };
        let key = head.trim_end_matches(':');
        if keys.contains(&key) {
            return Some(tokens.collect());
        }
    }
    None
}

fn parse_values<S: Scalar>(tokens: &[&str], key: &str, expected: usize) -> Result<Vec<S>> {
    if tokens.len() != expected {
        return Err(Error::Parse(format!(
            "`{key}` has {} values, expected {expected}",
            tokens.len()
        )));
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map(S::lit)
                .map_err(|e| Error::Parse(format!("`{key}`: bad number `{t}`: {e}")))
        })
        .collect()
}

/// Parses KITTI calibration text (`P2`, `R_rect`/`R0_rect`,
/// `Tr_velo_cam`/`Tr_velo_to_cam`). Intrinsics come from `P2`.
pub fn load_calibration<S: Scalar>(
    raw_text: &str,
    image_size: (usize, usize),
) -> Result<CameraCalibration<S>> {
    let p2_tokens = find_entry(raw_text, &["P2"]).ok_or_else(|| Error::MissingKey("P2".into()))?;
    let p2: Vec<S> = parse_values(&p2_tokens, "P2", 12)?;
    let rect_tokens = find_entry(raw_text, &["R_rect", "R0_rect"])
        .ok_or_else(|| Error::MissingKey("R_rect".into()))?;
    let rect: Vec<S> = parse_values(&rect_tokens, "R_rect", 9)?;
    let tr_tokens = find_entry(raw_text, &["Tr_velo_cam", "Tr_velo_to_cam"])
        .ok_or_else(|| Error::MissingKey("Tr_velo_cam".into()))?;
    let tr: Vec<S> = parse_values(&tr_tokens, "Tr_velo_cam", 12)?;

    let (fx, cx, fy, cy) = (p2[0], p2[2], p2[5], p2[6]);
    let tz = p2[11];
    let mut rect_m = [[S::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            rect_m[r][c] = rect[r * 3 + c];
        }
    }
    let mut calib = CameraCalibration::new(
        fx,
        fy,
        cx,
        cy,
        RigidTransform::from_row_major_3x4(&tr).expect("12 values"),
        Some(rect_m),
        image_size,
    )?;
    calib.camera_offset = [(p2[3] - cx * tz) / fx, (p2[7] - cy * tz) / fy, tz];
    Ok(calib)
}

/// Projects a LiDAR cloud; keeps points in front of the camera that land
/// inside the image.
pub fn project_points<S: Scalar>(
    cloud: &[Vec3<S>],
    calib: &CameraCalibration<S>,
) -> Vec<ProjectedPoint<S>> {
    cloud
        .iter()
        .filter_map(|p| {
            let c = calib.to_camera(p);
            let (u, v) = calib.project_camera(&c)?;
            calib.in_image(u, v).then_some(ProjectedPoint { u, v, z: c[2] })
        })
        .collect()
}

/// Camera-frame depth on an `R`-times downscaled grid with a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDepthMap<S> {
    pub values: Grid<S>,
    pub valid: Grid<bool>,
    pub scale: usize,
}

impl<S: Scalar> SparseDepthMap<S> {
    /// All-invalid map sized `ceil(H/R) × ceil(W/R)` for a `(W, H)` image.
    pub fn empty(image_size: (usize, usize), scale: usize) -> Self {
        let (w, h) = image_size;
        Self::with_grid_shape(h.div_ceil(scale), w.div_ceil(scale), scale)
    }

    pub fn with_grid_shape(rows: usize, cols: usize, scale: usize) -> Self {
        Self {
            values: Grid::zeros(1, rows, cols),
            valid: Grid::filled(1, rows, cols, false),
            scale,
        }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<S> {
        (*self.valid.get(0, row, col)).then(|| *self.values.get(0, row, col))
    }

    pub fn set(&mut self, row: usize, col: usize, z: S) {
        self.values.set(0, row, col, z);
        self.valid.set(0, row, col, true);
    }

    pub fn clear(&mut self, row: usize, col: usize) {
        self.values.set(0, row, col, S::zero());
        self.valid.set(0, row, col, false);
    }

    /// Keeps the nearer depth on collision.
    pub fn insert_min(&mut self, row: usize, col: usize, z: S) {
        match self.get(row, col) {
            Some(old) if old <= z => {}
            _ => self.set(row, col, z),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v).count()
    }

    /// Iterates `(row, col, depth)` over valid cells.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        let cols = self.cols();
        self.valid
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / cols, i % cols, self.values.data()[i]))
    }

    pub fn cast<T: Scalar>(&self) -> SparseDepthMap<T> {
        SparseDepthMap {
            values: self.values.cast(),
            valid: self.valid.clone(),
            scale: self.scale,
        }
    }
}

/// Rasterizes a LiDAR cloud into cell `(floor(v/R), floor(u/R))`, nearest
/// return wins.
pub fn render_depth_map<S: Scalar>(
    cloud: &[Vec3<S>],
    calib: &CameraCalibration<S>,
    scale: usize,
) -> SparseDepthMap<S> {
    assert!(scale >= 1, "downscale factor must be at least 1");
    let mut map = SparseDepthMap::empty(calib.image_size, scale);
    let r = S::from_usize_lossy(scale);
    for p in project_points(cloud, calib) {
        let row = (p.v / r).floor().to_usize().unwrap_or(usize::MAX);
        let col = (p.u / r).floor().to_usize().unwrap_or(usize::MAX);
        if row < map.rows() && col < map.cols() {
            map.insert_min(row, col, p.z);
        }
    }
    map
}

/// Inverse pinhole: full-resolution pixel plus camera-frame depth → 3D point.
pub fn lift_pixel<S: Scalar>(u: S, v: S, z: S, calib: &CameraCalibration<S>) -> Result<Vec3<S>> {
    if !(z > S::zero()) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    Ok([(u - calib.cx) * z / calib.fx, (v - calib.cy) * z / calib.fy, z])
}

/// GPS/INS pose of the ego vehicle. Yaw is the heading in radians, 0 = east,
/// counter-clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose<S> {
    pub latitude: S,
    pub longitude: S,
    pub altitude: S,
    pub yaw: S,
    pub timestamp: S,
}

impl<S: Scalar> EgoPose<S> {
    pub fn new(latitude: S, longitude: S, altitude: S, yaw: S, timestamp: S) -> Result<Self> {
        let pose = Self {
            latitude,
            longitude,
            altitude,
            yaw,
            timestamp,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latitude.abs() <= S::lit(90.0)) || !(self.longitude.abs() <= S::lit(180.0)) {
            return Err(Error::Validation(format!(
                "ego pose out of range: lat {}, lon {}",
                self.latitude, self.longitude
            )));
        }
        Ok(())
    }

    /// Moves the pose by `(east, north)` meters on the local tangent plane.
    pub fn offset_by(&self, east: S, north: S) -> (S, S) {
        tangent_to_geodetic(self.latitude, self.longitude, east, north)
    }
}

/// Converts a local `(east, north)` offset in meters into `(lat, lon)` degrees.
pub fn tangent_to_geodetic<S: Scalar>(lat0: S, lon0: S, east: S, north: S) -> (S, S) {
    let m = S::lit(METERS_PER_DEGREE);
    let lat = lat0 + north / m;
    let lon = lon0 + east / (m * lat0.to_radians().cos());
    (lat, lon)
}

/// Inverse of [`tangent_to_geodetic`] around the anchor `(lat0, lon0)`.
pub fn geodetic_to_tangent<S: Scalar>(lat0: S, lon0: S, lat: S, lon: S) -> (S, S) {
    let m = S::lit(METERS_PER_DEGREE);
    ((lon - lon0) * m * lat0.to_radians().cos(), (lat - lat0) * m)
}

/// Camera point → `(forward, left)` meters on the ego ground plane.
///
/// `cam_to_ego` maps camera coordinates into an ego-anchored frame that keeps
/// the camera axis convention (x right, y down, z forward).
pub fn ego_ground_offset<S: Scalar>(point: &Vec3<S>, cam_to_ego: &RigidTransform<S>) -> (S, S) {
    let e = cam_to_ego.apply(point);
    (e[2], -e[0])
}

/// Camera-frame point → `(latitude, longitude)` via the ego pose.
pub fn ego_to_world<S: Scalar>(
    point: &Vec3<S>,
    ego: &EgoPose<S>,
    cam_to_ego: &RigidTransform<S>,
) -> (S, S) {
    let (forward, left) = ego_ground_offset(point, cam_to_ego);
    let (s, c) = ego.yaw.sin_cos();
    let east = forward * c - left * s;
    let north = forward * s + left * c;
    ego.offset_by(east, north)
}

/// Reads a KITTI velodyne scan: little-endian `(x, y, z, reflectance)` f32 records.
pub fn parse_lidar_bin(bytes: &[u8]) -> Result<Vec<[f32; 4]>> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Parse(format!(
            "LiDAR scan length {} is not a multiple of 16 bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
            [f(0), f(1), f(2), f(3)]
        })
        .collect())
}

pub fn encode_lidar_bin(points: &[[f32; 4]]) -> Vec<u8> {
    points
        .iter()
        .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Drops reflectance and converts to the working scalar.
pub fn lidar_xyz<S: Scalar>(points: &[[f32; 4]]) -> Vec<Vec3<S>> {
    points
        .iter()
        .map(|p| [S::lit(p[0] as f64), S::lit(p[1] as f64), S::lit(p[2] as f64)])
        .collect()
}
