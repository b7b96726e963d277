//! Scene → tensors → point cloud → model input, and the training loop driver.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use p2t_core::model::{LossReport, Trainer, TrainingPair};
use p2t_core::pointcloud::{extract, ExtractionMethod, RadarPointCloud};
use p2t_core::radar::{scene_to_polar, PolarTensor4D, PolarVolume, Scene};
use p2t_core::tensorize::{normalize_power, normalize_power_global, polar_to_cartesian, voxelize, CubeTensor};
use p2t_core::{P2tError, Result};

use crate::config::{GtNormalization, PipelineConfig};

#[derive(Debug, Clone)]
pub struct SceneArtifacts {
    pub polar4d: PolarTensor4D,
    pub polar3d: PolarVolume,
    /// Normalized Cartesian ground truth.
    pub gt: CubeTensor,
}

/// Per-scene noise seed derived from the run seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rand::Rng::random(&mut rng)
}

/// `cfg.scenes` random scenes drawn from the run seed.
pub fn sample_scenes(cfg: &PipelineConfig) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.scenes).map(|_| cfg.sampler.sample(&mut rng)).collect()
}

pub fn simulate_scene(scene: &Scene, cfg: &PipelineConfig, seed: u64) -> Result<SceneArtifacts> {
    let (polar4d, polar3d) = scene_to_polar(scene, &cfg.radar, seed, cfg.doppler_reduction)?;
    let cube = polar_to_cartesian(&polar3d, &cfg.grid)?;
    let gt = match cfg.gt_normalization {
        GtNormalization::PerFrame => normalize_power(&cube),
        GtNormalization::Global { min, max } => normalize_power_global(&cube, min, max),
    };
    Ok(SceneArtifacts { polar4d, polar3d, gt })
}

pub fn extract_cloud(polar3d: &PolarVolume, method: ExtractionMethod, cfg: &PipelineConfig) -> Result<RadarPointCloud> {
    extract(polar3d, method, &cfg.cfar)
}

pub fn training_pair(cloud: &RadarPointCloud, gt: &CubeTensor, cfg: &PipelineConfig) -> Result<TrainingPair> {
    TrainingPair::new(&voxelize(cloud, &cfg.grid), &cfg.grid, gt)
}

pub fn new_trainer(cfg: &PipelineConfig) -> Result<Trainer> {
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    Trainer::new(cfg.grid.dims(), cfg.generator.clone(), cfg.discriminator.clone(), cfg.loss, train)
}

/// Total optimizer steps: `train.steps` if set, else `epochs` passes over
/// the data in batches.
pub fn planned_steps(cfg: &PipelineConfig, samples: usize) -> usize {
    cfg.train_steps
        .unwrap_or(cfg.train.epochs * samples.div_ceil(cfg.train.batch_size))
}

/// Runs `steps` updates over `pairs`, reshuffling (seeded) every epoch.
/// `on_step` receives the 1-based step number and its losses.
pub fn train_loop(
    trainer: &mut Trainer,
    pairs: &[TrainingPair],
    steps: usize,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<()> {
    if pairs.is_empty() {
        return Err(P2tError::Data("no training samples".into()));
    }
    let batch = trainer.config.batch_size.min(pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(trainer.config.seed);
    rng.set_stream(0x5eed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 1..=steps {
        if cursor + batch > order.len() {
            order = (0..pairs.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let chosen: Vec<TrainingPair> = order[cursor..cursor + batch].iter().map(|&i| pairs[i].clone()).collect();
        cursor += batch;
        let report = trainer.backward_and_step(&chosen)?;
        on_step(step, &report);
    }
    Ok(())
}
