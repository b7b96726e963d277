//! Multi-scale conditional patch discriminator.
//!
//! Scale `s` sees the condition/candidate concatenation average-pooled `s`
//! times and runs `conv(s2) → leaky → conv(s2) → leaky → conv(s1)`, giving a
//! map of realness logits. The two post-activation maps are kept as features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{avg_pool2, avg_pool2_backward, Conv3d};
use super::params::{push_conv, ParamView, Parameters};
use super::volume::{leaky_relu, leaky_relu_grad, sigmoid, Volume};
use super::INPUT_CHANNELS;
use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub scales: usize,
    /// Channels of the first layer; the second layer uses twice this.
    pub width: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            scales: 2,
            width: 16,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.width == 0 {
            return Err(config_err("discriminator needs at least one scale and a positive width"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(config_err("leaky slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub layers: Vec<[Conv3d; 3]>,
}

/// Per-scale result: realness logits plus intermediate features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutput {
    pub logits: Volume,
    pub features: Vec<Volume>,
}

impl ScaleOutput {
    /// Realness in `(0, 1)`.
    pub fn realness(&self) -> Volume {
        self.logits.map(sigmoid)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    /// Pooled input seen by each scale.
    inputs: Vec<Volume>,
    pub scales: Vec<ScaleOutput>,
}

impl DiscriminatorTrace {
    pub fn logits(&self) -> Vec<&Volume> {
        self.scales.iter().map(|s| &s.logits).collect()
    }

    pub fn features(&self) -> Vec<&[Volume]> {
        self.scales.iter().map(|s| s.features.as_slice()).collect()
    }
}

impl Discriminator {
    pub const IN_CHANNELS: usize = INPUT_CHANNELS + 1;

    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let layers = (0..config.scales)
            .map(|_| {
                [
                    Conv3d::init(Self::IN_CHANNELS, w, 3, 2, 1, &mut rng),
                    Conv3d::init(w, 2 * w, 3, 2, 1, &mut rng),
                    Conv3d::init(2 * w, 1, 3, 1, 1, &mut rng),
                ]
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros_like(&self) -> Self {
        let mut d = self.clone();
        for p in d.params_mut() {
            p.fill(0.0);
        }
        d
    }

    pub fn forward(&self, condition: &Volume, candidate: &Volume) -> Result<DiscriminatorTrace> {
        if condition.channels != INPUT_CHANNELS || candidate.channels != 1 {
            return Err(shape_err("discriminator", "expects a 4-channel condition and a 1-channel candidate"));
        }
        if condition.dims != candidate.dims {
            return Err(shape_err(
                "discriminator",
                format!("condition {:?} vs candidate {:?}", condition.dims, candidate.dims),
            ));
        }
        let slope = self.config.leaky_slope;
        let mut x = Volume::concat(&[condition, candidate], "discriminator")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut scales = Vec::with_capacity(self.layers.len());
        for (s, [c0, c1, c2]) in self.layers.iter().enumerate() {
            if s > 0 {
                x = avg_pool2(&x);
            }
            let stage = |e: crate::P2tError| shape_err(&format!("discriminator scale {s}"), e.to_string());
            let a0 = c0.forward(&x).map_err(stage)?.map(|v| leaky_relu(v, slope));
            let a1 = c1.forward(&a0).map_err(stage)?.map(|v| leaky_relu(v, slope));
            let logits = c2.forward(&a1).map_err(stage)?;
            inputs.push(x.clone());
            scales.push(ScaleOutput {
                logits,
                features: vec![a0, a1],
            });
        }
        Ok(DiscriminatorTrace { inputs, scales })
    }

    /// Accumulates parameter gradients into `grad` given per-scale logit
    /// gradients and optional per-scale feature gradients. Returns the
    /// gradient with respect to the candidate channel at full resolution when
    /// `want_input` is set.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        d_logits: &[Volume],
        d_features: Option<&[Vec<Volume>]>,
        grad: &mut Discriminator,
        want_input: bool,
    ) -> Option<Volume> {
        let slope = self.config.leaky_slope;
        let mut d_input: Option<Volume> = None;
        for s in (0..self.layers.len()).rev() {
            let [c0, c1, c2] = &self.layers[s];
            let [g0, g1, g2] = &mut grad.layers[s];
            let out = &trace.scales[s];
            let mut da1 = c2.backward(&out.features[1], &d_logits[s], g2);
            if let Some(df) = d_features {
                add(&mut da1, &df[s][1]);
            }
            leaky_mask(&mut da1, &out.features[1], slope);
            let mut da0 = c1.backward(&out.features[0], &da1, g1);
            if let Some(df) = d_features {
                add(&mut da0, &df[s][0]);
            }
            leaky_mask(&mut da0, &out.features[0], slope);
            let dx = c0.backward(&trace.inputs[s], &da0, g0);
            if want_input {
                // Fold coarser-scale input gradients into this scale, then
                // push the sum down one pooling level.
                let mut total = dx;
                if let Some(coarse) = d_input.take() {
                    add(&mut total, &coarse);
                }
                d_input = Some(if s > 0 {
                    avg_pool2_backward(&total, trace.inputs[s - 1].dims)
                } else {
                    total
                });
            }
        }
        d_input.map(|d| d.split(&[INPUT_CHANNELS, 1]).pop().unwrap())
    }
}

fn add(a: &mut Volume, b: &Volume) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

fn leaky_mask(g: &mut Volume, out: &Volume, slope: f64) {
    for (d, &y) in g.data.iter_mut().zip(&out.data) {
        *d *= leaky_relu_grad(y, slope);
    }
}

impl Parameters for Discriminator {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut out = Vec::new();
        for (s, layers) in self.layers.iter().enumerate() {
            for (l, conv) in layers.iter().enumerate() {
                push_conv(&mut out, &format!("discriminator.scale{s}.conv{l}"), conv);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layers in self.layers.iter_mut() {
            for conv in layers.iter_mut() {
                out.push(&mut conv.weight);
                out.push(&mut conv.bias);
            }
        }
        out
    }
}
