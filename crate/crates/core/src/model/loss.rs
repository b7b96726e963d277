//! Adversarial, L1 and feature-matching objectives with their gradients.
//!
//! Realness is `sigmoid(logit)`; log-loss terms are computed from logits as
//! `-ln σ(l) = softplus(-l)` and `-ln(1 - σ(l)) = softplus(l)`.

use super::volume::{sigmoid, softplus, Volume};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GanMode {
    /// Log-loss with the non-saturating generator term.
    #[default]
    Log,
    /// Least squares on raw logits.
    Lsgan,
}

impl std::str::FromStr for GanMode {
    type Err = crate::P2tError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Self::Log),
            "lsgan" => Ok(Self::Lsgan),
            other => Err(config_err(format!("unknown gan mode `{other}` (log|lsgan)"))),
        }
    }
}

impl std::fmt::Display for GanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Log => "log",
            Self::Lsgan => "lsgan",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            lambda_perc: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_l1", self.lambda_l1), ("lambda_perc", self.lambda_perc)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CganTerms {
    pub generator: f64,
    pub discriminator: f64,
}

/// Generator-side loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cgan: f64,
    pub l1: f64,
    pub perceptual: f64,
}

fn mean_over_scales(maps: &[&Volume], f: impl Fn(f64) -> f64) -> f64 {
    let s = maps.len() as f64;
    maps.iter()
        .map(|m| m.data.iter().map(|&v| f(v)).sum::<f64>() / m.data.len() as f64)
        .sum::<f64>()
        / s
}

fn grad_over_scales(maps: &[&Volume], f: impl Fn(f64) -> f64) -> Vec<Volume> {
    let s = maps.len() as f64;
    maps.iter()
        .map(|m| {
            let n = m.data.len() as f64;
            m.map(|v| f(v) / (n * s))
        })
        .collect()
}

/// Discriminator term `-E[ln D(real)] - E[ln(1 - D(fake))]` and its
/// gradients with respect to the real and fake logits.
pub fn discriminator_term(real: &[&Volume], fake: &[&Volume], mode: GanMode) -> (f64, Vec<Volume>, Vec<Volume>) {
    match mode {
        GanMode::Log => (
            mean_over_scales(real, |l| softplus(-l)) + mean_over_scales(fake, softplus),
            grad_over_scales(real, |l| sigmoid(l) - 1.0),
            grad_over_scales(fake, sigmoid),
        ),
        GanMode::Lsgan => (
            mean_over_scales(real, |l| (l - 1.0).powi(2)) + mean_over_scales(fake, |l| l * l),
            grad_over_scales(real, |l| 2.0 * (l - 1.0)),
            grad_over_scales(fake, |l| 2.0 * l),
        ),
    }
}

/// Non-saturating generator term `-E[ln D(fake)]` and its gradient.
pub fn generator_term(fake: &[&Volume], mode: GanMode) -> (f64, Vec<Volume>) {
    match mode {
        GanMode::Log => (mean_over_scales(fake, |l| softplus(-l)), grad_over_scales(fake, |l| sigmoid(l) - 1.0)),
        GanMode::Lsgan => (mean_over_scales(fake, |l| (l - 1.0).powi(2)), grad_over_scales(fake, |l| 2.0 * (l - 1.0))),
    }
}

/// Both adversarial terms from per-scale realness logits.
pub fn loss_cgan(real: &[&Volume], fake: &[&Volume], mode: GanMode) -> CganTerms {
    CganTerms {
        generator: generator_term(fake, mode).0,
        discriminator: discriminator_term(real, fake, mode).0,
    }
}

/// Mean absolute difference.
pub fn loss_l1(generated: &[f64], target: &[f64]) -> f64 {
    generated.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / generated.len() as f64
}

pub fn loss_l1_grad(generated: &[f64], target: &[f64]) -> Vec<f64> {
    let n = generated.len() as f64;
    generated.iter().zip(target).map(|(a, b)| sign(a - b) / n).collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean over scales and layers of the mean absolute feature difference.
pub fn loss_perceptual(real: &[&[Volume]], fake: &[&[Volume]]) -> f64 {
    let terms = real.len() as f64 * real.first().map_or(0, |r| r.len()) as f64;
    let mut total = 0.0;
    for (rs, fs) in real.iter().zip(fake) {
        for (r, f) in rs.iter().zip(fs.iter()) {
            total += loss_l1(&f.data, &r.data);
        }
    }
    total / terms
}

/// Gradient of [`loss_perceptual`] with respect to the fake features; the
/// real features are treated as constants.
pub fn loss_perceptual_grad(real: &[&[Volume]], fake: &[&[Volume]]) -> Vec<Vec<Volume>> {
    let terms = real.len() as f64 * real.first().map_or(0, |r| r.len()) as f64;
    real.iter()
        .zip(fake)
        .map(|(rs, fs)| {
            rs.iter()
                .zip(fs.iter())
                .map(|(r, f)| {
                    let g = loss_l1_grad(&f.data, &r.data);
                    Volume {
                        channels: f.channels,
                        dims: f.dims,
                        data: g.into_iter().map(|v| v / terms).collect(),
                    }
                })
                .collect()
        })
        .collect()
}

/// Generator objective `cGAN + λ_L1·L1 + λ_perc·perc`.
pub fn loss_total(parts: LossParts, w: LossWeights) -> f64 {
    parts.cgan + w.lambda_l1 * parts.l1 + w.lambda_perc * parts.perceptual
}
