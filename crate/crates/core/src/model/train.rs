//! Alternating discriminator/generator updates with Adam.
//!
//! Per-sample gradients may be computed in parallel; they are summed in
//! sample order, so results are bitwise independent of the thread count.

use rayon::prelude::*;

use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{model_input, DecoderTrace, EncoderTrace, Generator, GeneratorConfig};
use super::loss::{
    discriminator_term, generator_term, loss_l1, loss_l1_grad, loss_perceptual, loss_perceptual_grad, loss_total, GanMode, LossParts,
    LossWeights,
};
use super::params::Parameters;
use super::sparse::SparseFeatures;
use super::volume::Volume;
use crate::error::{config_err, shape_err, Result};
use crate::format::{Checkpoint, NamedArray, RawTensor};
use crate::tensorize::{CubeTensor, RoiGrid, SparseVoxelGrid};
use crate::P2tError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub gan_mode: GanMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            gan_mode: GanMode::Log,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(config_err("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(config_err("batch size and epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                p[i] -= update;
            }
        }
    }
}

/// One training example in model form.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: SparseFeatures,
    /// Densified input, the discriminator's condition.
    pub condition: Volume,
    /// Normalized ground truth, one channel.
    pub target: Volume,
}

impl TrainingPair {
    pub fn new(voxels: &SparseVoxelGrid, grid: &RoiGrid, target: &CubeTensor) -> Result<Self> {
        if target.dims != grid.dims() {
            return Err(shape_err("training pair", format!("target {:?} vs grid {:?}", target.dims, grid.dims())));
        }
        let input = model_input(voxels, grid)?;
        Ok(Self {
            condition: input.densify(),
            target: Volume::from_vec(1, target.dims, target.power.clone())?,
            input,
        })
    }
}

/// Per-sample generator-side loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_cgan: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Discriminator loss for one sample and its parameter gradient.
pub fn discriminator_objective(d: &Discriminator, pair: &TrainingPair, fake: &Volume, mode: GanMode) -> Result<(f64, Discriminator)> {
    let real_t = d.forward(&pair.condition, &pair.target)?;
    let fake_t = d.forward(&pair.condition, fake)?;
    let (value, d_real, d_fake) = discriminator_term(&real_t.logits(), &fake_t.logits(), mode);
    let mut grad = d.zeros_like();
    d.backward(&real_t, &d_real, None, &mut grad, false);
    d.backward(&fake_t, &d_fake, None, &mut grad, false);
    Ok((value, grad))
}

/// Generator objective for one sample given its forward traces, with the
/// gradient with respect to generator parameters. Discriminator parameters
/// are held fixed.
pub fn generator_objective(
    g: &Generator,
    d: &Discriminator,
    pair: &TrainingPair,
    trace: (&EncoderTrace, &DecoderTrace),
    weights: LossWeights,
    mode: GanMode,
) -> Result<(LossParts, Generator)> {
    let (enc, dec) = trace;
    let fake = &dec.output;
    let real_t = d.forward(&pair.condition, &pair.target)?;
    let fake_t = d.forward(&pair.condition, fake)?;
    let (cgan, d_logits) = generator_term(&fake_t.logits(), mode);
    let l1 = loss_l1(&fake.data, &pair.target.data);
    let perceptual = loss_perceptual(&real_t.features(), &fake_t.features());

    let mut d_features = loss_perceptual_grad(&real_t.features(), &fake_t.features());
    for v in d_features.iter_mut().flatten() {
        for x in v.data.iter_mut() {
            *x *= weights.lambda_perc;
        }
    }
    let mut scratch = d.zeros_like();
    let mut d_out = d
        .backward(&fake_t, &d_logits, Some(&d_features), &mut scratch, true)
        .expect("input gradient requested");
    for (a, b) in d_out.data.iter_mut().zip(loss_l1_grad(&fake.data, &pair.target.data)) {
        *a += weights.lambda_l1 * b;
    }
    let mut grad = g.zeros_like();
    g.backward(enc, dec, &d_out, &mut grad);
    Ok((LossParts { cgan, l1, perceptual }, grad))
}

fn check_finite(term: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(P2tError::Numeric(format!("non-finite {term} loss ({v})")))
    }
}

fn accumulate<P: Parameters>(total: &mut P, part: &P) {
    for (t, (_, p)) in total.params_mut().into_iter().zip(part.params()) {
        for (a, b) in t.iter_mut().zip(p.data) {
            *a += b;
        }
    }
}

fn scale<P: Parameters>(p: &mut P, s: f64) {
    for t in p.params_mut() {
        for v in t.iter_mut() {
            *v *= s;
        }
    }
}

/// Generator, discriminator and their optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub weights: LossWeights,
    pub config: TrainConfig,
    pub steps: u64,
    opt_g: Adam,
    opt_d: Adam,
}

impl Trainer {
    pub fn new(
        dims: [usize; 3],
        generator: GeneratorConfig,
        discriminator: DiscriminatorConfig,
        weights: LossWeights,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let g = Generator::new(generator, dims, config.seed)?;
        let d = Discriminator::new(discriminator, config.seed.wrapping_add(1))?;
        Ok(Self::from_parts(g, d, weights, config))
    }

    fn from_parts(generator: Generator, discriminator: Discriminator, weights: LossWeights, config: TrainConfig) -> Self {
        Self {
            opt_g: Adam::new(&config),
            opt_d: Adam::new(&config),
            generator,
            discriminator,
            weights,
            config,
            steps: 0,
        }
    }

    /// One discriminator step followed by one generator step on `batch`.
    /// Returned losses are batch means measured before the updates.
    pub fn backward_and_step(&mut self, batch: &[TrainingPair]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(config_err("empty training batch"));
        }
        let n = batch.len() as f64;
        let mode = self.config.gan_mode;
        let g = &self.generator;
        let traces: Vec<(EncoderTrace, DecoderTrace)> = batch
            .par_iter()
            .map(|p| {
                let enc = g.encoder_forward(&p.input)?;
                let dec = g.decoder_forward(&enc)?;
                Ok((enc, dec))
            })
            .collect::<Result<_>>()?;

        let d = &self.discriminator;
        let d_parts: Vec<(f64, Discriminator)> = batch
            .par_iter()
            .zip(&traces)
            .map(|(p, (_, dec))| discriminator_objective(d, p, &dec.output, mode))
            .collect::<Result<_>>()?;
        let mut d_loss = 0.0;
        let mut d_grad = self.discriminator.zeros_like();
        for (v, gr) in &d_parts {
            d_loss += v;
            accumulate(&mut d_grad, gr);
        }
        drop(d_parts);
        d_loss /= n;
        check_finite("discriminator", d_loss)?;
        scale(&mut d_grad, 1.0 / n);

        // The generator objective sees the updated discriminator.
        let mut d_next = self.discriminator.clone();
        self.opt_d.step(d_next.params_mut(), d_grad.params().iter().map(|(_, p)| p.data).collect());

        let g_parts: Vec<(LossParts, Generator)> = batch
            .par_iter()
            .zip(&traces)
            .map(|(p, (enc, dec))| generator_objective(g, &d_next, p, (enc, dec), self.weights, mode))
            .collect::<Result<_>>()?;
        let mut parts = LossParts::default();
        let mut g_grad = self.generator.zeros_like();
        for (lp, gr) in &g_parts {
            parts.cgan += lp.cgan;
            parts.l1 += lp.l1;
            parts.perceptual += lp.perceptual;
            accumulate(&mut g_grad, gr);
        }
        drop(g_parts);
        parts.cgan /= n;
        parts.l1 /= n;
        parts.perceptual /= n;
        check_finite("cgan", parts.cgan)?;
        check_finite("l1", parts.l1)?;
        check_finite("perceptual", parts.perceptual)?;
        let total = loss_total(parts, self.weights);
        check_finite("total", total)?;
        scale(&mut g_grad, 1.0 / n);

        let mut g_next = self.generator.clone();
        self.opt_g.step(g_next.params_mut(), g_grad.params().iter().map(|(_, p)| p.data).collect());
        if !g_next.all_finite() || !d_next.all_finite() {
            return Err(P2tError::Numeric("parameter update produced non-finite weights".into()));
        }
        self.generator = g_next;
        self.discriminator = d_next;
        self.steps += 1;
        Ok(LossReport {
            d_loss,
            g_cgan: parts.cgan,
            l1: parts.l1,
            perceptual: parts.perceptual,
            total,
        })
    }

    /// Mean generator L1 over `pairs` with the current weights.
    pub fn mean_l1(&self, pairs: &[TrainingPair]) -> Result<f64> {
        let l1: Vec<f64> = pairs
            .par_iter()
            .map(|p| Ok(loss_l1(&self.generator.generate(&p.input)?.data, &p.target.data)))
            .collect::<Result<_>>()?;
        Ok(l1.iter().sum::<f64>() / pairs.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let g = &self.generator;
        let d = &self.discriminator;
        let c = &self.config;
        let widths: Vec<String> = g.config.widths.iter().map(|w| w.to_string()).collect();
        let meta = [
            format!("dims={},{},{}", g.dims[0], g.dims[1], g.dims[2]),
            format!("generator.widths={}", widths.join(",")),
            format!("generator.leaky_slope={}", g.config.leaky_slope),
            format!("discriminator.scales={}", d.config.scales),
            format!("discriminator.width={}", d.config.width),
            format!("discriminator.leaky_slope={}", d.config.leaky_slope),
            format!("lambda_l1={}", self.weights.lambda_l1),
            format!("lambda_perc={}", self.weights.lambda_perc),
            format!("learning_rate={}", c.learning_rate),
            format!("batch_size={}", c.batch_size),
            format!("epochs={}", c.epochs),
            format!("beta1={}", c.beta1),
            format!("beta2={}", c.beta2),
            format!("epsilon={}", c.epsilon),
            format!("seed={}", c.seed),
            format!("gan_mode={}", c.gan_mode),
            format!("steps={}", self.steps),
        ]
        .join("\n");
        let mut arrays = Vec::new();
        for (name, p) in g.params().into_iter().chain(d.params()) {
            arrays.push(NamedArray {
                name,
                tensor: RawTensor::from_f64(p.shape(), p.data)?,
            });
        }
        Ok(Checkpoint { meta, arrays })
    }

    /// Restores networks and configuration; optimizer moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            ck.meta_value(key)
                .ok_or_else(|| P2tError::Format(format!("checkpoint metadata lacks `{key}`")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| P2tError::Format(format!("checkpoint metadata `{key}` has bad value `{v}`")))
        }
        let list = |key: &str| -> Result<Vec<usize>> { get(key)?.split(',').map(|v| parse(key, v.trim())).collect() };
        let dims = list("dims")?;
        if dims.len() != 3 {
            return Err(P2tError::Format("checkpoint dims must have three entries".into()));
        }
        let gcfg = GeneratorConfig {
            widths: list("generator.widths")?,
            leaky_slope: parse("generator.leaky_slope", get("generator.leaky_slope")?)?,
        };
        let dcfg = DiscriminatorConfig {
            scales: parse("discriminator.scales", get("discriminator.scales")?)?,
            width: parse("discriminator.width", get("discriminator.width")?)?,
            leaky_slope: parse("discriminator.leaky_slope", get("discriminator.leaky_slope")?)?,
        };
        let weights = LossWeights {
            lambda_l1: parse("lambda_l1", get("lambda_l1")?)?,
            lambda_perc: parse("lambda_perc", get("lambda_perc")?)?,
        };
        let config = TrainConfig {
            learning_rate: parse("learning_rate", get("learning_rate")?)?,
            batch_size: parse("batch_size", get("batch_size")?)?,
            epochs: parse("epochs", get("epochs")?)?,
            beta1: parse("beta1", get("beta1")?)?,
            beta2: parse("beta2", get("beta2")?)?,
            epsilon: parse("epsilon", get("epsilon")?)?,
            seed: parse("seed", get("seed")?)?,
            gan_mode: get("gan_mode")?.parse()?,
        };
        let mut trainer = Self::new([dims[0], dims[1], dims[2]], gcfg, dcfg, weights, config)?;
        trainer.steps = parse("steps", get("steps")?)?;
        let names: Vec<String> = trainer
            .generator
            .params()
            .into_iter()
            .chain(trainer.discriminator.params())
            .map(|(n, _)| n)
            .collect();
        let targets = trainer
            .generator
            .params_mut()
            .into_iter()
            .chain(trainer.discriminator.params_mut());
        for (name, dst) in names.iter().zip(targets) {
            let t = ck
                .get(name)
                .ok_or_else(|| P2tError::Format(format!("checkpoint lacks array `{name}`")))?;
            if t.data.len() != dst.len() {
                return Err(P2tError::Format(format!("array `{name}` has {} values, expected {}", t.data.len(), dst.len())));
            }
            dst.copy_from_slice(&t.to_f64());
        }
        Ok(trainer)
    }
}
