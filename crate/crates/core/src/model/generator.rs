//! Sparse-encoder / dense-decoder generator.
//!
//! ```text
//! input ─ stem(sub) ─ L0 ─ down ─ sub ─ L1 ─ ... ─ L{S-1}
//!                      │               │              │ densify
//!                      │               │   ┌──── up ──┘
//!                      │ densify       └ concat ─ up ─┐
//!                      └──────────────────── concat ──┴─ head ─ sigmoid
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{Conv3d, TransposedConv};
use super::params::{push_conv, push_sparse, push_tconv, ParamView, Parameters};
use super::sparse::{leaky_backward, Rulebook, SparseConv, SparseFeatures, SparseKind};
use super::volume::{sigmoid, Volume};
use crate::error::{config_err, shape_err, Result};
use crate::tensorize::{RoiGrid, SparseVoxelGrid};

/// Channels of the model input: ROI-relative x, y, z and max-normalized power.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Channel width per encoder stage; the stage count is its length.
    pub widths: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            leaky_slope: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(config_err("generator widths must be a nonempty list of positive counts"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(config_err("leaky slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Converts voxelized points into model input features.
pub fn model_input(voxels: &SparseVoxelGrid, grid: &RoiGrid) -> Result<SparseFeatures> {
    if voxels.dims != grid.dims() {
        return Err(shape_err("model input", format!("voxel dims {:?} vs grid {:?}", voxels.dims, grid.dims())));
    }
    let max_power = voxels.voxels.iter().map(|v| v.features[3]).fold(0.0, f64::max);
    let mut sorted: Vec<_> = voxels.voxels.iter().collect();
    sorted.sort_by_key(|v| voxels.flat_index(v.index));
    let mut coords = Vec::with_capacity(sorted.len());
    let mut data = Vec::with_capacity(sorted.len() * INPUT_CHANNELS);
    for v in sorted {
        coords.push(v.index);
        let rel = grid.relative([v.features[0], v.features[1], v.features[2]]);
        data.extend_from_slice(&rel);
        data.push(if max_power > 0.0 { v.features[3] / max_power } else { 0.0 });
    }
    SparseFeatures::new(voxels.dims, coords, INPUT_CHANNELS, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub dims: [usize; 3],
    pub stem: SparseConv,
    pub down: Vec<SparseConv>,
    pub refine: Vec<SparseConv>,
    /// `up[j]` maps level `j + 1` to level `j`.
    pub up: Vec<TransposedConv>,
    pub head: Conv3d,
}

/// Encoder activations kept for skips and the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: SparseFeatures,
    /// Post-activation output of each resolution level.
    pub levels: Vec<SparseFeatures>,
    stem_rules: Rulebook,
    downsampled: Vec<SparseFeatures>,
    down_rules: Vec<Rulebook>,
    refine_rules: Vec<Rulebook>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    /// Decoder input at each level (deepest: densified features; others:
    /// upsampled features concatenated with the densified skip).
    merged: Vec<Volume>,
    /// Post-ReLU upsampled features per level below the deepest.
    upsampled: Vec<Volume>,
    pub output: Volume,
}

impl Generator {
    pub fn new(config: GeneratorConfig, dims: [usize; 3], seed: u64) -> Result<Self> {
        config.validate()?;
        if dims.contains(&0) {
            return Err(config_err("generator grid must be nonempty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &config.widths;
        let s = w.len();
        let stem = SparseConv::init(SparseKind::Submanifold, INPUT_CHANNELS, w[0], &mut rng);
        let mut down = Vec::new();
        let mut refine = Vec::new();
        for k in 1..s {
            down.push(SparseConv::init(SparseKind::Downsample, w[k - 1], w[k], &mut rng));
            refine.push(SparseConv::init(SparseKind::Submanifold, w[k], w[k], &mut rng));
        }
        let up = (0..s - 1)
            .map(|j| {
                let cin = if j + 1 == s - 1 { w[j + 1] } else { 2 * w[j + 1] };
                TransposedConv::init(cin, w[j], &mut rng)
            })
            .collect();
        let head_in = if s > 1 { 2 * w[0] } else { w[0] };
        let head = Conv3d::init(head_in, 1, 3, 1, 1, &mut rng);
        Ok(Self {
            config,
            dims,
            stem,
            down,
            refine,
            up,
            head,
        })
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for p in g.params_mut() {
            p.fill(0.0);
        }
        g
    }

    pub fn stages(&self) -> usize {
        self.config.widths.len()
    }

    pub fn level_dims(&self) -> Vec<[usize; 3]> {
        let mut dims = vec![self.dims];
        for _ in 1..self.stages() {
            let last = *dims.last().unwrap();
            dims.push(last.map(|d| d.div_ceil(2)));
        }
        dims
    }

    pub fn encoder_forward(&self, x: &SparseFeatures) -> Result<EncoderTrace> {
        if x.dims != self.dims {
            return Err(shape_err("encoder", format!("input grid {:?} vs model grid {:?}", x.dims, self.dims)));
        }
        let slope = self.config.leaky_slope;
        let stem_rules = self.stem.rulebook(x);
        let mut levels = vec![self.stem.forward(x, &stem_rules)?.leaky(slope)];
        let mut downsampled = Vec::new();
        let mut down_rules = Vec::new();
        let mut refine_rules = Vec::new();
        for (down, refine) in self.down.iter().zip(&self.refine) {
            let prev = levels.last().unwrap();
            let dr = down.rulebook(prev);
            let d = down.forward(prev, &dr)?.leaky(slope);
            let rr = refine.rulebook(&d);
            levels.push(refine.forward(&d, &rr)?.leaky(slope));
            downsampled.push(d);
            down_rules.push(dr);
            refine_rules.push(rr);
        }
        Ok(EncoderTrace {
            input: x.clone(),
            levels,
            stem_rules,
            downsampled,
            down_rules,
            refine_rules,
        })
    }

    pub fn decoder_forward(&self, enc: &EncoderTrace) -> Result<DecoderTrace> {
        let s = self.stages();
        if enc.levels.len() != s {
            return Err(shape_err("decoder", format!("{} encoder levels for {s} stages", enc.levels.len())));
        }
        let dims = self.level_dims();
        let mut merged = vec![Volume::zeros(0, [0; 3]); s];
        let mut upsampled = vec![Volume::zeros(0, [0; 3]); s.saturating_sub(1)];
        merged[s - 1] = enc.levels[s - 1].densify();
        for j in (0..s - 1).rev() {
            let stage = format!("decoder level {j}");
            let t = self.up[j]
                .forward(&merged[j + 1], dims[j])
                .map_err(|e| shape_err(&stage, e.to_string()))?
                .map(|v| v.max(0.0));
            merged[j] = Volume::concat(&[&t, &enc.levels[j].densify()], &stage)?;
            upsampled[j] = t;
        }
        let logits = self.head.forward(&merged[0]).map_err(|e| shape_err("decoder head", e.to_string()))?;
        Ok(DecoderTrace {
            merged,
            upsampled,
            output: logits.map(sigmoid),
        })
    }

    /// Dense `[0,1]` output cube for a sparse input.
    pub fn generate(&self, x: &SparseFeatures) -> Result<Volume> {
        let enc = self.encoder_forward(x)?;
        Ok(self.decoder_forward(&enc)?.output)
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/d(output)`.
    pub fn backward(&self, enc: &EncoderTrace, dec: &DecoderTrace, d_output: &Volume, grad: &mut Generator) {
        let s = self.stages();
        let slope = self.config.leaky_slope;
        let d_logits = Volume {
            channels: 1,
            dims: d_output.dims,
            data: d_output
                .data
                .iter()
                .zip(&dec.output.data)
                .map(|(&g, &y)| g * y * (1.0 - y))
                .collect(),
        };
        let mut d_merged = self.head.backward(&dec.merged[0], &d_logits, &mut grad.head);
        let mut d_levels: Vec<Vec<f64>> = Vec::with_capacity(s);
        for j in 0..s {
            if j == s - 1 {
                d_levels.push(enc.levels[j].gather(&d_merged));
                break;
            }
            let width = self.up[j].cout;
            let parts = d_merged.split(&[width, enc.levels[j].channels]);
            d_levels.push(enc.levels[j].gather(&parts[1]));
            let mut dt = parts[0].clone();
            for (g, &t) in dt.data.iter_mut().zip(&dec.upsampled[j].data) {
                if t <= 0.0 {
                    *g = 0.0;
                }
            }
            d_merged = self.up[j].backward(&dec.merged[j + 1], &dt, &mut grad.up[j]);
        }

        for k in (1..s).rev() {
            let g = leaky_backward(&enc.levels[k], &d_levels[k], slope);
            let dd = self.refine[k - 1].backward(&enc.downsampled[k - 1], &enc.refine_rules[k - 1], &g, &mut grad.refine[k - 1]);
            let g = leaky_backward(&enc.downsampled[k - 1], &dd, slope);
            let dprev = self.down[k - 1].backward(&enc.levels[k - 1], &enc.down_rules[k - 1], &g, &mut grad.down[k - 1]);
            for (a, b) in d_levels[k - 1].iter_mut().zip(dprev) {
                *a += b;
            }
        }
        let g = leaky_backward(&enc.levels[0], &d_levels[0], slope);
        self.stem.backward(&enc.input, &enc.stem_rules, &g, &mut grad.stem);
    }
}

impl Parameters for Generator {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut out = Vec::new();
        push_sparse(&mut out, "generator.stem", &self.stem);
        for (k, (d, r)) in self.down.iter().zip(&self.refine).enumerate() {
            push_sparse(&mut out, &format!("generator.down{}", k + 1), d);
            push_sparse(&mut out, &format!("generator.refine{}", k + 1), r);
        }
        for (j, u) in self.up.iter().enumerate() {
            push_tconv(&mut out, &format!("generator.up{j}"), u);
        }
        push_conv(&mut out, "generator.head", &self.head);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.stem.weight, &mut self.stem.bias];
        for (d, r) in self.down.iter_mut().zip(self.refine.iter_mut()) {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
            out.push(&mut r.weight);
            out.push(&mut r.bias);
        }
        for u in self.up.iter_mut() {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}
