//! Training losses and their analytic gradients with respect to the head
//! outputs.
//!
//! * object term: penalty-reduced focal loss on the heatmap, plus L1 on
//!   half-extents and sub-cell offsets at ground-truth centers;
//! * displacement term: mean per-object L1 norm of the `(Δu, Δv, Δz)` error;
//! * depth term: mean absolute error over valid LiDAR cells.

use serde::{Deserialize, Serialize};

use crate::codec::TargetMaps;
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::grid::Grid;
use crate::scalar::Scalar;

/// `α₁, α₂, α₃` weighting the object, displacement and depth terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let w = Self {
            alpha1,
            alpha2,
            alpha3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3];
        if all.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("loss weights must be finite and ≥ 0".into()));
        }
        if all.iter().all(|&a| a == 0.0) {
            return Err(Error::Config("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Focal exponents: `alpha` focuses on hard examples, `beta` reduces the
/// penalty near ground-truth peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

fn check_shape<S, T>(role: &str, a: &Grid<S>, b: &Grid<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract {
            role: role.into(),
            expected: format!("{:?}", b.shape()),
            actual: format!("{:?}", a.shape()),
        });
    }
    Ok(())
}

/// Penalty-reduced focal loss and its gradient with respect to `pred`.
///
/// `L = −(1/N) Σ [ (1−p)^α log p            if y = 1
///                 (1−y)^β p^α log(1−p)      otherwise ]`,
/// `N` = number of cells with `y = 1`, at least 1.
pub fn focal_loss_grad<S: Scalar>(
    pred: &Grid<S>,
    gt: &Grid<S>,
    params: &FocalParams,
) -> Result<(S, Grid<S>)> {
    check_shape("heatmap", pred, gt)?;
    let (a, b) = (S::lit(params.alpha), S::lit(params.beta));
    let one = S::one();
    let n_pos = gt.data().iter().filter(|&&y| y == one).count().max(1);
    let inv_n = one / S::from_usize_lossy(n_pos);
    let mut grad = Grid::zeros(pred.channels(), pred.rows(), pred.cols());
    let mut total = S::zero();
    for ((&p, &y), g) in pred.data().iter().zip(gt.data()).zip(grad.data_mut()) {
        if !(p > S::zero() && p < one) {
            return Err(Error::Domain(format!(
                "heatmap prediction {p} not strictly inside (0, 1)"
            )));
        }
        if y == one {
            let q = one - p;
            total -= q.powf(a) * p.ln();
            *g = (a * q.powf(a - one) * p.ln() - q.powf(a) / p) * inv_n;
        } else {
            let w = (one - y).powf(b);
            let l1p = (one - p).ln();
            total -= w * p.powf(a) * l1p;
            *g = -w * (a * p.powf(a - one) * l1p - p.powf(a) / (one - p)) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

pub fn focal_loss<S: Scalar>(pred: &Grid<S>, gt: &Grid<S>, params: &FocalParams) -> Result<S> {
    focal_loss_grad(pred, gt, params).map(|(l, _)| l)
}

#[inline]
fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Mean over masked cells of the channel-weighted L1 norm of `pred − target`.
pub fn masked_l1_grad<S: Scalar>(
    pred: &Grid<S>,
    target: &Grid<S>,
    mask: &Grid<bool>,
    channel_weights: &[S],
) -> Result<(S, Grid<S>)> {
    check_shape("masked prediction", pred, target)?;
    if !pred.same_spatial(mask) {
        return Err(Error::Contract {
            role: "mask".into(),
            expected: format!("{}x{}", pred.rows(), pred.cols()),
            actual: format!("{}x{}", mask.rows(), mask.cols()),
        });
    }
    let mut grad = Grid::zeros(pred.channels(), pred.rows(), pred.cols());
    let cells: Vec<usize> = mask
        .plane(0)
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if cells.is_empty() {
        return Ok((S::zero(), grad));
    }
    let inv_n = S::one() / S::from_usize_lossy(cells.len());
    let mut total = S::zero();
    for ch in 0..pred.channels() {
        let w = channel_weights.get(ch).copied().unwrap_or(S::one());
        let (p, t) = (pred.plane(ch), target.plane(ch));
        let g = grad.plane_mut(ch);
        for &i in &cells {
            let e = p[i] - t[i];
            total += w * e.abs();
            g[i] = w * sign(e) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// `L_disp` with unit channel weights except `z_weight` on `Δz`.
pub fn displacement_loss_grad<S: Scalar>(
    pred: &Grid<S>,
    gt: &TargetMaps<S>,
    z_weight: S,
) -> Result<(S, Grid<S>)> {
    masked_l1_grad(
        pred,
        &gt.displacement,
        &gt.displacement_mask,
        &[S::one(), S::one(), z_weight],
    )
}

pub fn displacement_loss<S: Scalar>(pred: &Grid<S>, gt: &TargetMaps<S>) -> Result<S> {
    displacement_loss_grad(pred, gt, S::one()).map(|(l, _)| l)
}

/// Mean absolute depth error over valid cells; 0 when none are valid.
pub fn depth_loss_grad<S: Scalar>(
    pred: &Grid<S>,
    gt: &SparseDepthMap<S>,
) -> Result<(S, Grid<S>)> {
    check_shape("depth", pred, &gt.values)?;
    masked_l1_grad(pred, &gt.values, &gt.valid, &[S::one()])
}

pub fn depth_loss<S: Scalar>(pred: &Grid<S>, gt: &SparseDepthMap<S>) -> Result<S> {
    depth_loss_grad(pred, gt).map(|(l, _)| l)
}

/// Weighted total and the components it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub object: f64,
    pub displacement: f64,
    pub depth: f64,
    pub total: f64,
}

pub fn total_loss(components: (f64, f64, f64), weights: &LossWeights) -> LossBreakdown {
    let (obj, disp, depth) = components;
    LossBreakdown {
        object: obj,
        displacement: disp,
        depth,
        total: weights.alpha1 * obj + weights.alpha2 * disp + weights.alpha3 * depth,
    }
}

/// Everything the composed objective needs beyond the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Weight of the half-extent L1 inside the object term.
    pub size_weight: f64,
    /// Weight of the sub-cell offset L1 inside the object term.
    pub offset_weight: f64,
    /// Weight of `Δz` relative to `Δu, Δv` in the displacement L1.
    pub displacement_z_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            size_weight: 0.1,
            offset_weight: 1.0,
            displacement_z_weight: 1.0,
        }
    }
}

/// Borrowed head outputs (post-activation).
#[derive(Debug, Clone, Copy)]
pub struct Predictions<'a, S> {
    pub heatmap: &'a Grid<S>,
    pub size: &'a Grid<S>,
    pub offset: &'a Grid<S>,
    pub displacement: &'a Grid<S>,
    pub depth: &'a Grid<S>,
}

/// Gradients of the weighted total with respect to each head output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrads<S> {
    pub heatmap: Grid<S>,
    pub size: Grid<S>,
    pub offset: Grid<S>,
    pub displacement: Grid<S>,
    pub depth: Grid<S>,
}

fn scaled<S: Scalar>(mut g: Grid<S>, w: f64) -> Grid<S> {
    let w = S::lit(w);
    g.data_mut().iter_mut().for_each(|v| *v *= w);
    g
}

/// Composed objective `α₁·L_obj + α₂·L_disp + α₃·L_depth` and gradients.
pub fn objective<S: Scalar>(
    pred: &Predictions<'_, S>,
    targets: &TargetMaps<S>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, PredictionGrads<S>)> {
    let (focal, g_heat) = focal_loss_grad(pred.heatmap, &targets.heatmap, &cfg.focal)?;
    let (size_l, g_size) = masked_l1_grad(pred.size, &targets.size, &targets.center_mask, &[])?;
    let (off_l, g_off) = masked_l1_grad(
        pred.offset,
        &targets.subpixel_offset,
        &targets.center_mask,
        &[],
    )?;
    let (disp_l, g_disp) =
        displacement_loss_grad(pred.displacement, targets, S::lit(cfg.displacement_z_weight))?;
    let (depth_l, g_depth) = depth_loss_grad(pred.depth, &targets.depth)?;

    let object =
        focal.f64() + cfg.size_weight * size_l.f64() + cfg.offset_weight * off_l.f64();
    let breakdown = total_loss((object, disp_l.f64(), depth_l.f64()), &cfg.weights);
    for (name, v) in [
        ("object", breakdown.object),
        ("displacement", breakdown.displacement),
        ("depth", breakdown.depth),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    let w = &cfg.weights;
    Ok((
        breakdown,
        PredictionGrads {
            heatmap: scaled(g_heat, w.alpha1),
            size: scaled(g_size, w.alpha1 * cfg.size_weight),
            offset: scaled(g_off, w.alpha1 * cfg.offset_weight),
            displacement: scaled(g_disp, w.alpha2),
            depth: scaled(g_depth, w.alpha3),
        },
    ))
}
