use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::HeadMaps;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{objective, LossBreakdown, LossConfig, PredictionGrads, Predictions};
use crate::codec::TargetMaps;
use crate::scalar::Scalar;

use super::layers::Conv2d;

/// Heatmap probabilities are clamped this far from 0 and 1.
pub const HEATMAP_EPS: f64 = 1e-4;
/// Prior depth enters the network divided by this many meters.
pub const PRIOR_DEPTH_NORM: f64 = 50.0;
/// Raw depth logits are clamped to this before the exponential.
const MAX_DEPTH_LOGIT: f64 = 8.0;
/// The 1×1 output layers start at a tenth of the He scale so the heads
/// begin near their bias values.
const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `(W, H)` of the input images.
    pub input_size: (usize, usize),
    /// Output stride `R`; a power of two.
    pub downscale: usize,
    pub num_classes: usize,
    /// Encoder widths; the first `log2(R)` stages have stride 2.
    pub channels: Vec<usize>,
    /// Width of the hidden layer in each head.
    pub head_channels: usize,
    /// Feed the rendered tracklet heatmap of the previous frame.
    pub use_prior_channels: bool,
    /// Also feed the prior depth channel.
    pub use_prior_depth: bool,
    /// Initial depth-head output in meters.
    pub init_depth: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (1280, 384),
            downscale: 4,
            num_classes: 2,
            channels: vec![8, 16, 32],
            head_channels: 16,
            use_prior_channels: true,
            use_prior_depth: false,
            init_depth: 20.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn output_size(&self) -> (usize, usize) {
        (
            self.input_size.0 / self.downscale,
            self.input_size.1 / self.downscale,
        )
    }

    pub fn input_channels(&self) -> usize {
        6 + usize::from(self.use_prior_channels) + usize::from(self.use_prior_depth)
    }

    /// Output channels of every head.
    pub fn heads(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("heatmap", self.num_classes),
            ("size", 2),
            ("subpixel_offset", 2),
            ("displacement", 3),
            ("depth", 1),
        ])
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.downscale;
        if r == 0 || !r.is_power_of_two() {
            return Err(Error::Config(format!("downscale {r} must be a power of two")));
        }
        let strided = r.trailing_zeros() as usize;
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("channels must be a nonempty list of widths".into()));
        }
        if self.channels.len() < strided {
            return Err(Error::Config(format!(
                "{} encoder stages cannot reach stride {r}",
                self.channels.len()
            )));
        }
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % r != 0 || h % r != 0 {
            return Err(Error::Config(format!(
                "input size {w}x{h} not divisible by total stride {r}"
            )));
        }
        if self.num_classes == 0 || self.head_channels == 0 {
            return Err(Error::Config("num_classes and head_channels must be > 0".into()));
        }
        if !(self.init_depth > 0.0) {
            return Err(Error::Config("init_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Previous-frame priors at output resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMaps<S> {
    pub heatmap: Grid<S>,
    pub depth: Grid<S>,
}

impl<S: Scalar> PriorMaps<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            heatmap: Grid::zeros(1, rows, cols),
            depth: Grid::zeros(1, rows, cols),
        }
    }
}

/// Post-activation head outputs on the `H/R × W/R` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs<S> {
    pub heatmap: Grid<S>,
    pub size: Grid<S>,
    pub subpixel_offset: Grid<S>,
    pub displacement: Grid<S>,
    pub depth: Grid<S>,
}

impl<S: Scalar> NetworkOutputs<S> {
    pub fn predictions(&self) -> Predictions<'_, S> {
        Predictions {
            heatmap: &self.heatmap,
            size: &self.size,
            offset: &self.subpixel_offset,
            displacement: &self.displacement,
            depth: &self.depth,
        }
    }

    pub fn head_maps(&self) -> HeadMaps<'_, S> {
        HeadMaps {
            heatmap: &self.heatmap,
            size: &self.size,
            offset: &self.subpixel_offset,
            depth: &self.depth,
            displacement: Some(&self.displacement),
        }
    }
}

/// Small encoder with a detection head and a depth head.
///
/// ```text
/// input ─ conv3×3/2 ─ relu ─ … ─ conv3×3/1 ─ relu ─┬─ conv3×3 ─ relu ─ conv1×1 → heatmap|size|offset|displacement
///                                                  └─ conv3×3 ─ relu ─ conv1×1 → depth
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet<S> {
    config: ModelConfig,
    encoder: Vec<Conv2d>,
    det_hidden: Conv2d,
    det_out: Conv2d,
    depth_hidden: Conv2d,
    depth_out: Conv2d,
    params: Vec<S>,
}

/// Intermediate activations kept for the backward pass.
struct Cache<S> {
    input: Vec<S>,
    /// Post-ReLU encoder activations with their spatial size.
    encoder: Vec<(Vec<S>, usize, usize)>,
    det_hidden: Vec<S>,
    det_raw: Vec<S>,
    depth_hidden: Vec<S>,
    depth_raw: Vec<S>,
}

fn relu_inplace<S: Scalar>(v: &mut [S]) {
    v.iter_mut().for_each(|x| *x = x.max(S::zero()));
}

fn relu_backward<S: Scalar>(grad: &mut [S], activated: &[S]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= S::zero() {
            *g = S::zero();
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl<S: Scalar> ToyNet<S> {
    /// Builds the network with He-normal weights drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let strided = config.downscale.trailing_zeros() as usize;
        let mut offset = 0;
        let mut layer = |cin: usize, cout: usize, kernel: usize, stride: usize| {
            let conv = Conv2d {
                cin,
                cout,
                kernel,
                stride,
                weight_offset: offset,
                bias_offset: offset + cout * cin * kernel * kernel,
            };
            offset += Conv2d::param_count(cin, cout, kernel);
            conv
        };
        let mut encoder = Vec::new();
        let mut cin = config.input_channels();
        for (i, &c) in config.channels.iter().enumerate() {
            encoder.push(layer(cin, c, 3, if i < strided { 2 } else { 1 }));
            cin = c;
        }
        let hc = config.head_channels;
        let det_channels = config.num_classes + 2 + 2 + 3;
        let det_hidden = layer(cin, hc, 3, 1);
        let det_out = layer(hc, det_channels, 1, 1);
        let depth_hidden = layer(cin, hc, 3, 1);
        let depth_out = layer(hc, 1, 1, 1);

        let mut params = vec![S::zero(); offset];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let all = encoder
            .iter()
            .chain([&det_hidden, &det_out, &depth_hidden, &depth_out]);
        for conv in all {
            let fan_in = (conv.cin * conv.kernel * conv.kernel) as f64;
            let gain = if conv.kernel == 1 { OUTPUT_INIT_GAIN } else { 1.0 };
            let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("valid std");
            let n = conv.cout * conv.cin * conv.kernel * conv.kernel;
            for p in &mut params[conv.weight_offset..conv.weight_offset + n] {
                *p = S::lit(normal.sample(&mut rng));
            }
        }
        // Focal-loss prior: initial heatmap probability 0.1.
        let heat_bias = -((1.0 - 0.1f64) / 0.1).ln();
        for c in 0..config.num_classes {
            params[det_out.bias_offset + c] = S::lit(heat_bias);
        }
        params[depth_out.bias_offset] = S::lit(config.init_depth.ln());
        Ok(Self {
            config,
            encoder,
            det_hidden,
            det_out,
            depth_hidden,
            depth_out,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<S>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract {
                role: "parameters".into(),
                expected: self.params.len().to_string(),
                actual: params.len().to_string(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Assembles the input tensor: current image, previous image, then the
    /// enabled prior channels upsampled to input resolution.
    pub fn assemble_input(
        &self,
        image_t: &Grid<S>,
        image_prev: &Grid<S>,
        prior: Option<&PriorMaps<S>>,
    ) -> Result<Grid<S>> {
        let (w, h) = self.config.input_size;
        let (ow, oh) = self.config.output_size();
        let expect = |role: &str, g: &Grid<S>, shape: (usize, usize, usize)| -> Result<()> {
            if g.shape() != shape {
                return Err(Error::Contract {
                    role: role.into(),
                    expected: format!("{shape:?}"),
                    actual: format!("{:?}", g.shape()),
                });
            }
            Ok(())
        };
        expect("image_t", image_t, (3, h, w))?;
        expect("image_prev", image_prev, (3, h, w))?;
        let zeros;
        let prior = match prior {
            Some(p) => {
                expect("prior_heatmap", &p.heatmap, (1, oh, ow))?;
                expect("prior_depth", &p.depth, (1, oh, ow))?;
                p
            }
            None => {
                zeros = PriorMaps::zeros(oh, ow);
                &zeros
            }
        };
        let r = self.config.downscale;
        let mut extra = Vec::new();
        if self.config.use_prior_channels {
            extra.push(prior.heatmap.upsample_nearest(r));
        }
        if self.config.use_prior_depth {
            let norm = S::lit(PRIOR_DEPTH_NORM);
            extra.push(prior.depth.map(|&z| z / norm).upsample_nearest(r));
        }
        let mut parts = vec![image_t, image_prev];
        parts.extend(extra.iter());
        Ok(Grid::concat_channels(&parts).expect("shapes checked"))
    }

    fn run(&self, input: Grid<S>) -> (NetworkOutputs<S>, Cache<S>) {
        let (_, mut h, mut w) = input.shape();
        let input = input.into_vec();
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut x: &[S] = &input;
        for conv in &self.encoder {
            let mut y = conv.forward(&self.params, x, h, w);
            relu_inplace(&mut y);
            h = conv.out_dim(h);
            w = conv.out_dim(w);
            encoder.push((y, h, w));
            x = &encoder.last().unwrap().0;
        }
        let feat = &encoder.last().unwrap().0;
        let mut det_hidden = self.det_hidden.forward(&self.params, feat, h, w);
        relu_inplace(&mut det_hidden);
        let det_raw = self.det_out.forward(&self.params, &det_hidden, h, w);
        let mut depth_hidden = self.depth_hidden.forward(&self.params, feat, h, w);
        relu_inplace(&mut depth_hidden);
        let depth_raw = self.depth_out.forward(&self.params, &depth_hidden, h, w);

        let k = self.config.num_classes;
        let n = h * w;
        let slice = |start: usize, count: usize| {
            Grid::from_vec(count, h, w, det_raw[start * n..(start + count) * n].to_vec()).unwrap()
        };
        let (lo, hi) = (S::lit(HEATMAP_EPS), S::lit(1.0 - HEATMAP_EPS));
        let heatmap = slice(0, k).map(|&v| sigmoid(v).max(lo).min(hi));
        let size_scale = S::from_usize_lossy(self.config.downscale);
        let size = slice(k, 2).map(|&v| v * size_scale);
        let subpixel_offset = slice(k + 2, 2);
        let displacement = slice(k + 4, 3);
        let max_logit = S::lit(MAX_DEPTH_LOGIT);
        let depth = Grid::from_vec(1, h, w, depth_raw.iter().map(|v| v.min(max_logit).exp()).collect())
            .unwrap();
        (
            NetworkOutputs {
                heatmap,
                size,
                subpixel_offset,
                displacement,
                depth,
            },
            Cache {
                input,
                encoder,
                det_hidden,
                det_raw,
                depth_hidden,
                depth_raw,
            },
        )
    }

    /// Runs the network on a frame pair plus priors (zeros when `None`).
    pub fn forward(
        &self,
        image_t: &Grid<S>,
        image_prev: &Grid<S>,
        prior: Option<&PriorMaps<S>>,
    ) -> Result<NetworkOutputs<S>> {
        let input = self.assemble_input(image_t, image_prev, prior)?;
        Ok(self.run(input).0)
    }

    /// Loss and flat parameter gradient for one assembled input.
    pub fn loss_and_grad(
        &self,
        input: &Grid<S>,
        targets: &TargetMaps<S>,
        loss: &LossConfig,
    ) -> Result<(LossBreakdown, Vec<S>)> {
        let (c, h, w) = input.shape();
        if c != self.config.input_channels() || (w, h) != self.config.input_size {
            return Err(Error::Contract {
                role: "input".into(),
                expected: format!(
                    "({}, {}, {})",
                    self.config.input_channels(),
                    self.config.input_size.1,
                    self.config.input_size.0
                ),
                actual: format!("{:?}", input.shape()),
            });
        }
        let (out, cache) = self.run(input.clone());
        let (breakdown, grads) = objective(&out.predictions(), targets, loss)?;
        let g = self.backward(&out, &cache, &grads);
        Ok((breakdown, g))
    }

    fn backward(
        &self,
        out: &NetworkOutputs<S>,
        cache: &Cache<S>,
        grads: &PredictionGrads<S>,
    ) -> Vec<S> {
        let k = self.config.num_classes;
        let (_, h, w) = out.depth.shape();
        let n = h * w;
        let mut gp = vec![S::zero(); self.params.len()];

        // Head activations.
        let mut g_det = vec![S::zero(); cache.det_raw.len()];
        let (lo, hi) = (S::lit(HEATMAP_EPS), S::lit(1.0 - HEATMAP_EPS));
        for (i, (&g, &p)) in grads.heatmap.data().iter().zip(out.heatmap.data()).enumerate() {
            // Zero gradient where the clamp is active.
            if p > lo && p < hi {
                g_det[i] = g * p * (S::one() - p);
            }
        }
        let size_scale = S::from_usize_lossy(self.config.downscale);
        for (i, &g) in grads.size.data().iter().enumerate() {
            g_det[k * n + i] = g * size_scale;
        }
        g_det[(k + 2) * n..(k + 4) * n].copy_from_slice(grads.offset.data());
        g_det[(k + 4) * n..(k + 7) * n].copy_from_slice(grads.displacement.data());
        let max_logit = S::lit(MAX_DEPTH_LOGIT);
        let g_depth: Vec<S> = grads
            .depth
            .data()
            .iter()
            .zip(out.depth.data())
            .zip(&cache.depth_raw)
            .map(|((&g, &d), &raw)| if raw < max_logit { g * d } else { S::zero() })
            .collect();

        let feat = &cache.encoder.last().unwrap().0;
        let mut g_dh = self
            .det_out
            .backward(&self.params, &cache.det_hidden, h, w, &g_det, &mut gp, true)
            .unwrap();
        relu_backward(&mut g_dh, &cache.det_hidden);
        let mut g_feat = self
            .det_hidden
            .backward(&self.params, feat, h, w, &g_dh, &mut gp, true)
            .unwrap();
        let mut g_zh = self
            .depth_out
            .backward(&self.params, &cache.depth_hidden, h, w, &g_depth, &mut gp, true)
            .unwrap();
        relu_backward(&mut g_zh, &cache.depth_hidden);
        let g_feat2 = self
            .depth_hidden
            .backward(&self.params, feat, h, w, &g_zh, &mut gp, true)
            .unwrap();
        for (a, b) in g_feat.iter_mut().zip(g_feat2) {
            *a += b;
        }

        let mut grad = g_feat;
        for i in (0..self.encoder.len()).rev() {
            let conv = &self.encoder[i];
            relu_backward(&mut grad, &cache.encoder[i].0);
            let (input, ih, iw): (&[S], usize, usize) = if i == 0 {
                (&cache.input, self.config.input_size.1, self.config.input_size.0)
            } else {
                let (ref a, ah, aw) = cache.encoder[i - 1];
                (a, ah, aw)
            };
            match conv.backward(&self.params, input, ih, iw, &grad, &mut gp, i > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
        gp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_size: (32, 16),
            ..Default::default()
        }
    }

    #[test]
    fn indivisible_input_is_config_error() {
        let cfg = ModelConfig {
            input_size: (30, 16),
            ..Default::default()
        };
        assert!(matches!(ToyNet::<f32>::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn non_power_of_two_stride_rejected() {
        let cfg = ModelConfig {
            downscale: 3,
            input_size: (30, 15),
            ..Default::default()
        };
        assert!(ToyNet::<f32>::new(cfg).is_err());
    }

    #[test]
    fn wrong_image_shape_names_role() {
        let net = ToyNet::<f64>::new(small()).unwrap();
        let good = Grid::zeros(3, 16, 32);
        let bad = Grid::zeros(3, 16, 28);
        match net.forward(&good, &bad, None) {
            Err(Error::Contract { role, .. }) => assert_eq!(role, "image_prev"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outputs_satisfy_contract() {
        let net = ToyNet::<f64>::new(small()).unwrap();
        let img = Grid::filled(3, 16, 32, 0.3);
        let out = net.forward(&img, &img, None).unwrap();
        assert_eq!(out.heatmap.shape(), (2, 4, 8));
        assert_eq!(out.depth.shape(), (1, 4, 8));
        assert!(out.depth.data().iter().all(|&d| d > 0.0));
        assert!(out
            .heatmap
            .data()
            .iter()
            .all(|&p| p >= HEATMAP_EPS && p <= 1.0 - HEATMAP_EPS));
    }
}
