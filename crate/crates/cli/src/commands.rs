//! Subcommand implementations. Each prints a short summary to stdout and
//! writes its artifacts deterministically for a fixed seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use p2t_core::format::{read_checkpoint, read_rpt1, write_checkpoint, write_rpt1, RawTensor};
use p2t_core::metrics::{evaluate_frame, mean_pool_height, parse_records_csv, render_table, to_csv, BevImage, MethodEvalSet, MethodRecord};
use p2t_core::model::{model_input, Trainer};
use p2t_core::pointcloud::{pcd, ExtractionMethod};
use p2t_core::radar::Scene;
use p2t_core::tensorize::{voxelize, CubeTensor, RoiGrid};
use p2t_core::{P2tError, Result};

use crate::config::PipelineConfig;
use crate::dataset::{self, load_config, scene_dir, scene_dirs, CONFIG_FILE};
use crate::pipeline::{extract_cloud, new_trainer, planned_steps, sample_scenes, scene_seed, simulate_scene, train_loop};

pub const CHECKPOINT_FILE: &str = "checkpoint.p2t";
pub const LOSS_FILE: &str = "loss.csv";
pub const FRAMES_FILE: &str = "frames.csv";
pub const RECORD_FILE: &str = "record.csv";
pub const REPORT_FILE: &str = "report.csv";

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_voxel: Option<f64>,
}

impl Overrides {
    fn apply(&self, mut cfg: PipelineConfig) -> Result<PipelineConfig> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.grid_voxel {
            let g = &cfg.grid;
            cfg.grid = RoiGrid::new(g.x_range, g.y_range, g.z_range, v)?;
        }
        Ok(cfg)
    }

    /// Config for a command operating on an existing dataset.
    pub fn resolve(&self, data: &Path) -> Result<PipelineConfig> {
        self.apply(load_config(data, self.config.as_deref())?)
    }

    /// Config for a command that creates a dataset.
    pub fn resolve_fresh(&self) -> Result<PipelineConfig> {
        let base = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        self.apply(base)
    }
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> P2tError + '_ {
    move |e| P2tError::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_context(path))
}

/// Simulates random scenes (or one scene file) into `out`.
pub fn cmd_simulate(out: &Path, ov: &Overrides, scene_file: Option<&Path>, scenes: Option<usize>) -> Result<usize> {
    let mut cfg = ov.resolve_fresh()?;
    if let Some(n) = scenes {
        cfg.scenes = n;
        cfg.validate()?;
    }
    let scenes = match scene_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_context(p))?;
            let scene: Scene = text
                .parse()
                .map_err(|e: P2tError| P2tError::Data(format!("{}: {e}", p.display())))?;
            vec![scene]
        }
        None => sample_scenes(&cfg),
    };
    fs::create_dir_all(out).map_err(io_context(out))?;
    cfg.scenes = scenes.len();
    write_text(&out.join(CONFIG_FILE), &cfg.to_text())?;
    for (i, scene) in scenes.iter().enumerate() {
        scene.validate(&cfg.radar)?;
        let art = simulate_scene(scene, &cfg, scene_seed(cfg.seed, i))?;
        dataset::write_scene(&scene_dir(out, i), scene, &art)?;
    }
    println!("simulated {} scene(s) into {}", scenes.len(), out.display());
    Ok(scenes.len())
}

/// Extracts point clouds for each method and writes a PCD report per method.
pub fn cmd_extract(data: &Path, ov: &Overrides, methods: &[ExtractionMethod]) -> Result<()> {
    let cfg = ov.resolve(data)?;
    let methods = if methods.is_empty() { cfg.methods.clone() } else { methods.to_vec() };
    let dirs = scene_dirs(data)?;
    for &method in &methods {
        let mut csv = String::from("scene,points,pcd_percent\n");
        let mut total = 0.0;
        for dir in &dirs {
            let vol = dataset::read_polar3d(dir, &cfg)?;
            let cloud = extract_cloud(&vol, method, &cfg)?;
            let density = 100.0 * pcd(&cloud, &cfg.grid);
            total += density;
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("?");
            let _ = writeln!(csv, "{name},{},{density:.6}", cloud.len());
            dataset::write_cloud(dir, &cloud, method)?;
        }
        write_text(&data.join(format!("pcd_{}.csv", method.file_tag())), &csv)?;
        println!("{method}: mean PCD {:.4}% over {} scene(s)", total / dirs.len() as f64, dirs.len());
    }
    Ok(())
}

/// Trains on one method's point clouds; writes the checkpoint and loss log.
pub fn cmd_train(data: &Path, ov: &Overrides, method: ExtractionMethod, out: &Path, steps: Option<usize>) -> Result<()> {
    let mut cfg = ov.resolve(data)?;
    if steps.is_some() {
        cfg.train_steps = steps;
        cfg.validate()?;
    }
    let pairs = dataset::load_pairs(data, method, &cfg)?;
    let mut trainer = new_trainer(&cfg)?;
    let total = planned_steps(&cfg, pairs.len());
    let mut log = String::from("step,d_loss,g_cgan,l1,perceptual,total\n");
    train_loop(&mut trainer, &pairs, total, |step, r| {
        let _ = writeln!(log, "{step},{:.8},{:.8},{:.8},{:.8},{:.8}", r.d_loss, r.g_cgan, r.l1, r.perceptual, r.total);
    })?;
    fs::create_dir_all(out).map_err(io_context(out))?;
    let mut ck = trainer.to_checkpoint()?;
    ck.meta.push_str(&format!("\nmethod={method}"));
    write_checkpoint(out.join(CHECKPOINT_FILE), &ck)?;
    write_text(&out.join(LOSS_FILE), &log)?;
    println!("trained {total} step(s) on {} scene(s) with {method}; checkpoint in {}", pairs.len(), out.display());
    Ok(())
}

fn cube_from_volume(v: p2t_core::model::Volume) -> Result<CubeTensor> {
    CubeTensor::from_vec(v.dims, v.data)
}

/// `P5` greyscale image of a BEV map, pixel `round(255·v)` with `v` clamped
/// to `[0, 1]`; columns follow x, rows follow y.
pub fn bev_pgm(bev: &BevImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", bev.nx, bev.ny).into_bytes();
    for y in 0..bev.ny {
        for x in 0..bev.nx {
            out.push((255.0 * bev.get(x, y).clamp(0.0, 1.0)).round() as u8);
        }
    }
    out
}

/// Evaluates a checkpoint (or ground truth against itself when none is
/// given) on every scene of `data`.
pub fn cmd_eval(data: &Path, ov: &Overrides, method: ExtractionMethod, checkpoint: Option<&Path>, out: &Path) -> Result<MethodRecord> {
    let cfg = ov.resolve(data)?;
    let trainer = checkpoint.map(|p| read_checkpoint(p).and_then(|ck| Trainer::from_checkpoint(&ck))).transpose()?;
    if let Some(t) = &trainer {
        if t.generator.dims != cfg.grid.dims() {
            return Err(P2tError::Config(format!(
                "checkpoint grid {:?} does not match dataset grid {:?}",
                t.generator.dims,
                cfg.grid.dims()
            )));
        }
    }
    let bev_dir = out.join("bev");
    fs::create_dir_all(&bev_dir).map_err(io_context(&bev_dir))?;
    let mut frames = String::from("scene,pcd_percent,psnr_db,ssim\n");
    let (mut sum_pcd, mut sum_psnr, mut sum_ssim) = (0.0, 0.0, 0.0);
    let dirs = scene_dirs(data)?;
    for dir in &dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("scene").to_string();
        let gt = dataset::read_gt(dir, &cfg)?;
        let cloud = dataset::read_cloud(dir, method)?;
        let generated = match &trainer {
            Some(t) => {
                let x = model_input(&voxelize(&cloud, &cfg.grid), &cfg.grid)?;
                let cube = cube_from_volume(t.generator.generate(&x)?)?;
                write_rpt1(out.join(format!("{name}_gen.rpt")), &RawTensor::from_f64(&cube.dims, &cube.power)?)?;
                cube
            }
            None => gt.clone(),
        };
        let m = evaluate_frame(&generated, &gt)?;
        let density = 100.0 * pcd(&cloud, &cfg.grid);
        sum_pcd += density;
        sum_psnr += m.psnr_db;
        sum_ssim += m.ssim;
        let _ = writeln!(frames, "{name},{density:.6},{:.6},{:.6}", m.psnr_db, m.ssim);
        for (tag, cube) in [("gen", &generated), ("gt", &gt)] {
            let path = bev_dir.join(format!("{name}_{tag}.pgm"));
            fs::write(&path, bev_pgm(&mean_pool_height(cube))).map_err(io_context(&path))?;
        }
    }
    let n = dirs.len() as f64;
    let record = MethodRecord {
        method,
        pcd_percent: sum_pcd / n,
        psnr_db: sum_psnr / n,
        ssim: sum_ssim / n,
    };
    write_text(&out.join(FRAMES_FILE), &frames)?;
    write_text(
        &out.join(RECORD_FILE),
        &format!(
            "method,hyper,pcd_percent,psnr_db,ssim\n{},{},{:.6},{:.6},{:.6}\n",
            method.family(),
            method.hyper(),
            record.pcd_percent,
            record.psnr_db,
            record.ssim
        ),
    )?;
    println!(
        "{method}: PCD {:.4}%  PSNR {:.4} dB  SSIM {:.4} over {} scene(s)",
        record.pcd_percent, record.psnr_db, record.ssim, dirs.len()
    );
    Ok(record)
}

/// Canonical report order: CFAR rows, then percentile rows, each by
/// ascending hyperparameter.
pub fn sort_records(records: &mut [MethodRecord]) {
    records.sort_by(|a, b| {
        let rank = |m: &ExtractionMethod| matches!(m, ExtractionMethod::Percentile(_)) as u8;
        rank(&a.method)
            .cmp(&rank(&b.method))
            .then(a.method.hyper().total_cmp(&b.method.hyper()))
    });
}

/// Merges record CSVs, scores them and writes `report.csv` into `out`.
pub fn cmd_report(records: &[PathBuf], ov: &Overrides, out: Option<&Path>) -> Result<MethodEvalSet> {
    let cfg = ov.resolve_fresh()?;
    let mut all = Vec::new();
    for path in records {
        let text = fs::read_to_string(path).map_err(io_context(path))?;
        all.extend(parse_records_csv(&text).map_err(|e| P2tError::Data(format!("{}: {e}", path.display())))?);
    }
    sort_records(&mut all);
    let set = MethodEvalSet::evaluate(all, cfg.alpha, cfg.beta)?;
    print!("{}", render_table(&set));
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_context(dir))?;
        write_text(&dir.join(REPORT_FILE), &to_csv(&set))?;
    }
    Ok(set)
}

/// Writes the height-pooled BEV of an RPT1 cube as a PGM image.
pub fn cmd_bev(cube: &Path, out: &Path) -> Result<()> {
    let t = read_rpt1(cube)?;
    let dims: [usize; 3] = t
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| P2tError::Data(format!("{} is not a 3D cube (dims {:?})", cube.display(), t.dims)))?;
    let bev = mean_pool_height(&CubeTensor::from_vec(dims, t.to_f64())?);
    fs::write(out, bev_pgm(&bev)).map_err(io_context(out))?;
    println!("wrote {}x{} BEV image to {}", bev.nx, bev.ny, out.display());
    Ok(())
}

/// simulate → extract → train → eval per method → report, under `out`.
pub fn cmd_experiment(out: &Path, ov: &Overrides, steps: Option<usize>) -> Result<MethodEvalSet> {
    let data = out.join("data");
    cmd_simulate(&data, ov, None, None)?;
    let data_ov = Overrides {
        config: None,
        ..ov.clone()
    };
    let cfg = data_ov.resolve(&data)?;
    cmd_extract(&data, &data_ov, &cfg.methods)?;
    let mut record_files = Vec::new();
    for &method in &cfg.methods {
        let run = out.join("runs").join(method.file_tag());
        cmd_train(&data, &data_ov, method, &run, steps)?;
        let eval_dir = run.join("eval");
        cmd_eval(&data, &data_ov, method, Some(&run.join(CHECKPOINT_FILE)), &eval_dir)?;
        record_files.push(eval_dir.join(RECORD_FILE));
    }
    cmd_report(&record_files, &Overrides::default(), Some(out))
}
