//! Scene generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use pointtrack::codec::Detection;
use pointtrack::dataset::BoxAnnotation2D;
use pointtrack::tracker::{pair_cost, Track, TrackerConfig};
use rand::Rng;

pub fn bbox(cx: f64, cy: f64, hw: f64, hh: f64, class_id: usize, track_id: i64) -> BoxAnnotation2D<f64> {
    BoxAnnotation2D {
        x1: cx - hw,
        y1: cy - hh,
        x2: cx + hw,
        y2: cy + hh,
        class_id,
        track_id,
    }
}

/// `n` boxes with integer half-extents, fully inside a `(w, h)` image, whose
/// centers are at least `min_cells` output cells apart along some axis.
pub fn separated_boxes(rng: &mut impl Rng, n: usize, (w, h): (usize, usize), scale: usize, min_cells: f64) -> Vec<BoxAnnotation2D<f64>> {
    let r = scale as f64;
    let mut out: Vec<BoxAnnotation2D<f64>> = Vec::new();
    while out.len() < n {
        let hw = rng.gen_range(3..=(w / 4).min(20)) as f64;
        let hh = rng.gen_range(3..=(h / 4).min(20)) as f64;
        let cx = rng.gen_range(hw..w as f64 - hw);
        let cy = rng.gen_range(hh..h as f64 - hh);
        let far = out.iter().all(|b| {
            let (bx, by) = b.center();
            (bx - cx).abs().max((by - cy).abs()) >= min_cells * r
        });
        if far {
            let id = out.len() as i64 + 1;
            out.push(bbox(cx, cy, hw, hh, rng.gen_range(0..2), id));
        }
    }
    out
}

/// Plain-loop depth statistics over `(pred, gt)` pairs:
/// `[abs_rel, sq_rel, rmse, rmse_log, δ1, δ2, δ3]`.
pub fn brute_depth_metrics(pairs: &[(f64, f64)]) -> Option<[f64; 7]> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mut m = [0.0; 7];
    for &(p, g) in pairs {
        let p = if p < 1e-3 { 1e-3 } else { p };
        m[0] += (p - g).abs() / g;
        m[1] += (p - g).powi(2) / g;
        m[2] += (p - g).powi(2);
        m[3] += (p.ln() - g.ln()).powi(2);
        let ratio = if p / g > g / p { p / g } else { g / p };
        m[4] += (ratio < 1.25) as u8 as f64;
        m[5] += (ratio < 1.25 * 1.25) as u8 as f64;
        m[6] += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
    }
    for v in &mut m {
        *v /= n;
    }
    m[2] = m[2].sqrt();
    m[3] = m[3].sqrt();
    Some(m)
}

/// Every gate-respecting one-to-one assignment of detections to tracks;
/// returns one with the most matches, then the lowest total cost.
pub fn exhaustive_assignment(dets: &[Detection<f64>], tracks: &[Track<f64>], cfg: &TrackerConfig) -> Vec<(usize, usize)> {
    fn go(
        i: usize,
        costs: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        cost: f64,
        best: &mut (usize, f64, Vec<(usize, usize)>),
    ) {
        if i == costs.len() {
            if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1) {
                *best = (cur.len(), cost, cur.clone());
            }
            return;
        }
        go(i + 1, costs, used, cur, cost, best);
        for (j, c) in costs[i].iter().enumerate() {
            if let (Some(c), false) = (c, used[j]) {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, costs, used, cur, cost + c, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let costs: Vec<Vec<Option<f64>>> = dets
        .iter()
        .map(|d| tracks.iter().map(|t| pair_cost(d, t, cfg)).collect())
        .collect();
    let mut best = (0, f64::INFINITY, Vec::new());
    go(0, &costs, &mut vec![false; tracks.len()], &mut Vec::new(), 0.0, &mut best);
    let mut m = best.2;
    m.sort();
    m
}

/// Constant-velocity object in image space with a depth rate.
#[derive(Debug, Clone, Copy)]
pub struct Mover {
    pub id: u64,
    pub class_id: usize,
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
    pub half: (f64, f64),
}

impl Mover {
    pub fn at(&self, t: usize) -> (f64, f64, f64) {
        let t = t as f64;
        (self.u + self.du * t, self.v + self.dv * t, self.z + self.dz * t)
    }

    /// Perfect detection at frame `t` with the true displacement to `t − 1`
    /// (zero at the first frame), or with no displacement at all when
    /// `with_motion` is false.
    pub fn detection(&self, t: usize, scale: usize, with_motion: bool) -> Detection<f64> {
        let (u, v, z) = self.at(t);
        let r = scale as f64;
        let displacement = if t == 0 || !with_motion {
            [0.0; 3]
        } else {
            [-self.du / r, -self.dv / r, -self.dz]
        };
        Detection {
            center: (u, v),
            half_extents: self.half,
            confidence: 0.9 - 0.01 * self.id as f64,
            label: None,
            depth: Some(z),
            class_id: self.class_id,
            displacement,
            cell: ((v / r).floor() as usize, (u / r).floor() as usize),
        }
    }
}

/// `n` movers spread across a wide image, each with its own depth band so
/// no two share a position in both the image and depth.
pub fn random_movers(rng: &mut impl Rng, n: usize) -> Vec<Mover> {
    (0..n)
        .map(|k| Mover {
            id: k as u64 + 1,
            class_id: rng.gen_range(0..2),
            u: 100.0 + 200.0 * k as f64 + rng.gen_range(-20.0..20.0),
            v: rng.gen_range(150.0..250.0),
            z: 8.0 + 9.0 * k as f64 + rng.gen_range(0.0..3.0),
            du: rng.gen_range(-6.0..6.0),
            dv: rng.gen_range(-2.0..2.0),
            dz: rng.gen_range(-0.2..0.2),
            half: (rng.gen_range(15.0..40.0), rng.gen_range(15.0..40.0)),
        })
        .collect()
}
