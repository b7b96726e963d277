//! Line-based `key = value` configuration with dotted section keys.
//!
//! ```text
//! # comment
//! seed = 7
//! radar.noise_stddev = 0.01
//! grid.voxel_size = 1.6
//! methods = percentile:1, cfar:5
//! ```

use std::path::Path;

use p2t_core::model::{DiscriminatorConfig, GanMode, GeneratorConfig, LossWeights, TrainConfig};
use p2t_core::pointcloud::{CfarConfig, ExtractionMethod};
use p2t_core::radar::{DopplerReduction, RadarConfig, SceneSampler, Window};
use p2t_core::tensorize::RoiGrid;
use p2t_core::{P2tError, Result};

/// How ground-truth cubes are scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GtNormalization {
    PerFrame,
    /// Fixed bounds shared by every frame.
    Global { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub radar: RadarConfig,
    pub doppler_reduction: DopplerReduction,
    pub grid: RoiGrid,
    pub cfar: CfarConfig,
    pub methods: Vec<ExtractionMethod>,
    pub gt_normalization: GtNormalization,
    pub scenes: usize,
    pub sampler: SceneSampler,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    /// Overrides `epochs` when set.
    pub train_steps: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            radar: RadarConfig::default(),
            doppler_reduction: DopplerReduction::Mean,
            grid: RoiGrid::default(),
            cfar: CfarConfig::default(),
            methods: vec![ExtractionMethod::Percentile(1.0), ExtractionMethod::Cfar(1.0)],
            gt_normalization: GtNormalization::PerFrame,
            scenes: 8,
            sampler: SceneSampler::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            train_steps: None,
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> P2tError {
    P2tError::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(line, format!("`{key}` has invalid value `{v}`")))
}

fn pair<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<(T, T)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(cfg_err(line, format!("`{key}` expects two comma-separated values")));
    }
    Ok((num(line, key, parts[0])?, num(line, key, parts[1])?))
}

fn triple(line: usize, key: &str, v: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = v.split(',').map(|p| num(line, key, p.trim())).collect::<Result<_>>()?;
    match parts.as_slice() {
        [a] => Ok([*a; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(cfg_err(line, format!("`{key}` expects one or three values"))),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        let mut voxel = None;
        let (mut xr, mut yr, mut zr) = (c.grid.x_range, c.grid.y_range, c.grid.z_range);
        let mut gt_mode = "frame".to_string();
        let (mut gt_min, mut gt_max) = (0.0, 1.0);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| cfg_err(line, "expected `key = value`"))?;
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(cfg_err(line, format!("duplicate key `{key}`")));
            }
            let r = &mut c.radar;
            match key {
                "seed" => c.seed = num(line, key, v)?,
                "radar.carrier_frequency" => r.carrier_frequency = num(line, key, v)?,
                "radar.chirp_slope" => r.chirp_slope = num(line, key, v)?,
                "radar.sample_rate" => r.sample_rate = num(line, key, v)?,
                "radar.samples_per_chirp" => r.samples_per_chirp = num(line, key, v)?,
                "radar.chirps_per_frame" => r.chirps_per_frame = num(line, key, v)?,
                "radar.azimuth_antennas" => r.azimuth_antennas = num(line, key, v)?,
                "radar.elevation_antennas" => r.elevation_antennas = num(line, key, v)?,
                "radar.antenna_spacing" => r.antenna_spacing = num(line, key, v)?,
                "radar.noise_stddev" => r.noise_stddev = num(line, key, v)?,
                "radar.window" => {
                    r.window = match v {
                        "rectangular" => Window::Rectangular,
                        "hann" => Window::Hann,
                        _ => return Err(cfg_err(line, format!("unknown window `{v}` (rectangular|hann)"))),
                    }
                }
                "radar.doppler_reduction" => {
                    c.doppler_reduction = match v {
                        "mean" => DopplerReduction::Mean,
                        "max" => DopplerReduction::Max,
                        _ => return Err(cfg_err(line, format!("unknown doppler reduction `{v}` (mean|max)"))),
                    }
                }
                "grid.voxel_size" => voxel = Some(num(line, key, v)?),
                "grid.x_range" => xr = pair(line, key, v)?,
                "grid.y_range" => yr = pair(line, key, v)?,
                "grid.z_range" => zr = pair(line, key, v)?,
                "cfar.guard_cells" => c.cfar.guard_cells = triple(line, key, v)?,
                "cfar.training_cells" => c.cfar.training_cells = triple(line, key, v)?,
                "cfar.scale_factor" => c.cfar.scale_factor = num(line, key, v)?,
                "methods" => {
                    c.methods = v
                        .split(',')
                        .map(|m| m.trim().parse().map_err(|e: P2tError| cfg_err(line, e)))
                        .collect::<Result<_>>()?
                }
                "gt.normalization" => gt_mode = v.to_string(),
                "gt.global_min" => gt_min = num(line, key, v)?,
                "gt.global_max" => gt_max = num(line, key, v)?,
                "scenes.count" => c.scenes = num(line, key, v)?,
                "scenes.objects" => c.sampler.objects = pair(line, key, v)?,
                "scenes.scatterers_per_object" => c.sampler.scatterers_per_object = pair(line, key, v)?,
                "scenes.x_range" => c.sampler.x_range = pair(line, key, v)?,
                "scenes.y_range" => c.sampler.y_range = pair(line, key, v)?,
                "scenes.z_range" => c.sampler.z_range = pair(line, key, v)?,
                "scenes.object_extent" => c.sampler.object_extent = num(line, key, v)?,
                "scenes.reflectivity" => c.sampler.reflectivity = pair(line, key, v)?,
                "scenes.max_speed" => c.sampler.max_speed = num(line, key, v)?,
                "model.widths" => {
                    c.generator.widths = v.split(',').map(|w| num(line, key, w.trim())).collect::<Result<_>>()?
                }
                "model.leaky_slope" => c.generator.leaky_slope = num(line, key, v)?,
                "discriminator.scales" => c.discriminator.scales = num(line, key, v)?,
                "discriminator.width" => c.discriminator.width = num(line, key, v)?,
                "discriminator.leaky_slope" => c.discriminator.leaky_slope = num(line, key, v)?,
                "loss.lambda_l1" => c.loss.lambda_l1 = num(line, key, v)?,
                "loss.lambda_perc" => c.loss.lambda_perc = num(line, key, v)?,
                "train.learning_rate" => c.train.learning_rate = num(line, key, v)?,
                "train.batch_size" => c.train.batch_size = num(line, key, v)?,
                "train.epochs" => c.train.epochs = num(line, key, v)?,
                "train.steps" => c.train_steps = Some(num(line, key, v)?),
                "train.beta1" => c.train.beta1 = num(line, key, v)?,
                "train.beta2" => c.train.beta2 = num(line, key, v)?,
                "train.epsilon" => c.train.epsilon = num(line, key, v)?,
                "train.gan_mode" => c.train.gan_mode = v.parse::<GanMode>().map_err(|e| cfg_err(line, e))?,
                "eval.alpha" => c.alpha = num(line, key, v)?,
                "eval.beta" => c.beta = num(line, key, v)?,
                _ => return Err(cfg_err(line, format!("unknown key `{key}`"))),
            }
        }
        c.grid = RoiGrid::new(xr, yr, zr, voxel.unwrap_or(c.grid.voxel_size))?;
        c.gt_normalization = match gt_mode.as_str() {
            "frame" => GtNormalization::PerFrame,
            "global" => GtNormalization::Global { min: gt_min, max: gt_max },
            other => return Err(P2tError::Config(format!("unknown gt.normalization `{other}` (frame|global)"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| P2tError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            P2tError::Config(m) => P2tError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        self.grid.validate()?;
        self.cfar.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.methods.is_empty() {
            return Err(P2tError::Config("at least one extraction method is required".into()));
        }
        if self.scenes == 0 {
            return Err(P2tError::Config("scenes.count must be positive".into()));
        }
        if let GtNormalization::Global { min, max } = self.gt_normalization {
            if !(max > min) {
                return Err(P2tError::Config("gt.global_max must exceed gt.global_min".into()));
            }
        }
        if self.train_steps == Some(0) {
            return Err(P2tError::Config("train.steps must be positive".into()));
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let r = &self.radar;
        let g = &self.grid;
        let s = &self.sampler;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("radar.carrier_frequency = {}", r.carrier_frequency),
            format!("radar.chirp_slope = {}", r.chirp_slope),
            format!("radar.sample_rate = {}", r.sample_rate),
            format!("radar.samples_per_chirp = {}", r.samples_per_chirp),
            format!("radar.chirps_per_frame = {}", r.chirps_per_frame),
            format!("radar.azimuth_antennas = {}", r.azimuth_antennas),
            format!("radar.elevation_antennas = {}", r.elevation_antennas),
            format!("radar.antenna_spacing = {}", r.antenna_spacing),
            format!("radar.noise_stddev = {}", r.noise_stddev),
            format!(
                "radar.window = {}",
                match r.window {
                    Window::Rectangular => "rectangular",
                    Window::Hann => "hann",
                }
            ),
            format!(
                "radar.doppler_reduction = {}",
                match self.doppler_reduction {
                    DopplerReduction::Mean => "mean",
                    DopplerReduction::Max => "max",
                }
            ),
            format!("grid.voxel_size = {}", g.voxel_size),
            format!("grid.x_range = {}, {}", g.x_range.0, g.x_range.1),
            format!("grid.y_range = {}, {}", g.y_range.0, g.y_range.1),
            format!("grid.z_range = {}, {}", g.z_range.0, g.z_range.1),
            format!("cfar.guard_cells = {}", list(&self.cfar.guard_cells)),
            format!("cfar.training_cells = {}", list(&self.cfar.training_cells)),
            format!("cfar.scale_factor = {}", self.cfar.scale_factor),
            format!("methods = {}", methods.join(", ")),
        ];
        match self.gt_normalization {
            GtNormalization::PerFrame => lines.push("gt.normalization = frame".into()),
            GtNormalization::Global { min, max } => {
                lines.push("gt.normalization = global".into());
                lines.push(format!("gt.global_min = {min}"));
                lines.push(format!("gt.global_max = {max}"));
            }
        }
        lines.extend([
            format!("scenes.count = {}", self.scenes),
            format!("scenes.objects = {}, {}", s.objects.0, s.objects.1),
            format!("scenes.scatterers_per_object = {}, {}", s.scatterers_per_object.0, s.scatterers_per_object.1),
            format!("scenes.x_range = {}, {}", s.x_range.0, s.x_range.1),
            format!("scenes.y_range = {}, {}", s.y_range.0, s.y_range.1),
            format!("scenes.z_range = {}, {}", s.z_range.0, s.z_range.1),
            format!("scenes.object_extent = {}", s.object_extent),
            format!("scenes.reflectivity = {}, {}", s.reflectivity.0, s.reflectivity.1),
            format!("scenes.max_speed = {}", s.max_speed),
            format!("model.widths = {}", list(&self.generator.widths)),
            format!("model.leaky_slope = {}", self.generator.leaky_slope),
            format!("discriminator.scales = {}", self.discriminator.scales),
            format!("discriminator.width = {}", self.discriminator.width),
            format!("discriminator.leaky_slope = {}", self.discriminator.leaky_slope),
            format!("loss.lambda_l1 = {}", self.loss.lambda_l1),
            format!("loss.lambda_perc = {}", self.loss.lambda_perc),
            format!("train.learning_rate = {}", self.train.learning_rate),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("train.epochs = {}", self.train.epochs),
        ]);
        if let Some(steps) = self.train_steps {
            lines.push(format!("train.steps = {steps}"));
        }
        lines.extend([
            format!("train.beta1 = {}", self.train.beta1),
            format!("train.beta2 = {}", self.train.beta2),
            format!("train.epsilon = {}", self.train.epsilon),
            format!("train.gan_mode = {}", self.train.gan_mode),
            format!("eval.alpha = {}", self.alpha),
            format!("eval.beta = {}", self.beta),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let c = PipelineConfig::parse(
            "# desk run\nseed = 9\ngrid.voxel_size = 1.6  # coarse\nmethods = cfar:5\ntrain.gan_mode = lsgan\ngt.normalization = global\ngt.global_max = 2.5\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.grid.dims(), [48, 20, 8]);
        assert_eq!(c.methods, vec![ExtractionMethod::Cfar(5.0)]);
        assert_eq!(c.train.gan_mode, GanMode::Lsgan);
        assert_eq!(c.gt_normalization, GtNormalization::Global { min: 0.0, max: 2.5 });
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = PipelineConfig::parse("seed = 1\nradar.bogus = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("radar.bogus"), "{err}");
        let err = PipelineConfig::parse("seed = x\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = PipelineConfig::parse("seed = 1\nseed = 2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(matches!(PipelineConfig::parse("methods = percentile:0\n"), Err(P2tError::Config(_))));
    }
}
