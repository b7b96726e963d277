//! On-disk dataset layout:
//!
//! ```text
//! DIR/config.txt
//! DIR/scene_0000/scene.txt
//!               /polar4d.rpt   (range, azimuth, elevation, doppler)
//!               /polar3d.rpt   (range, azimuth, elevation)
//!               /gt.rpt        normalized Cartesian cube (x, y, z)
//!               /cloud_<method>.rpc
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use p2t_core::format::{read_rpc1, read_rpt1, write_rpc1, write_rpt1, RawTensor};
use p2t_core::model::TrainingPair;
use p2t_core::pointcloud::{ExtractionMethod, RadarPointCloud};
use p2t_core::radar::{PolarVolume, Scene};
use p2t_core::tensorize::CubeTensor;
use p2t_core::{P2tError, Result};

use crate::config::PipelineConfig;
use crate::pipeline::{training_pair, SceneArtifacts};

pub const CONFIG_FILE: &str = "config.txt";

pub fn scene_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("scene_{index:04}"))
}

/// Scene directories under `root`, sorted by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| P2tError::Data(format!("cannot list {}: {e}", root.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_scene = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("scene_"));
        if is_scene && path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(P2tError::Data(format!("no scene_* directories in {}", root.display())));
    }
    Ok(dirs)
}

/// Config from `explicit` if given, else the dataset's own `config.txt`, else
/// defaults.
pub fn load_config(root: &Path, explicit: Option<&Path>) -> Result<PipelineConfig> {
    match explicit {
        Some(p) => PipelineConfig::from_file(p),
        None if root.join(CONFIG_FILE).is_file() => PipelineConfig::from_file(&root.join(CONFIG_FILE)),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn write_scene(dir: &Path, scene: &Scene, art: &SceneArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scene.txt"), scene.to_text())?;
    write_rpt1(dir.join("polar4d.rpt"), &RawTensor::from_f64(&art.polar4d.dims, &art.polar4d.power)?)?;
    write_rpt1(dir.join("polar3d.rpt"), &RawTensor::from_f64(&art.polar3d.dims, &art.polar3d.power)?)?;
    write_rpt1(dir.join("gt.rpt"), &RawTensor::from_f64(&art.gt.dims, &art.gt.power)?)?;
    Ok(())
}

fn dims3(t: &RawTensor, what: &str, expect: [usize; 3]) -> Result<[usize; 3]> {
    if t.dims != expect {
        return Err(P2tError::Data(format!("{what} has dims {:?}, configuration expects {expect:?}", t.dims)));
    }
    Ok(expect)
}

pub fn read_polar3d(dir: &Path, cfg: &PipelineConfig) -> Result<PolarVolume> {
    let t = read_rpt1(dir.join("polar3d.rpt"))?;
    let r = &cfg.radar;
    let dims = dims3(&t, "polar3d.rpt", [r.samples_per_chirp, r.azimuth_antennas, r.elevation_antennas])?;
    PolarVolume::from_config(dims, t.to_f64(), r)
}

pub fn read_cube(path: &Path, expect: [usize; 3]) -> Result<CubeTensor> {
    let t = read_rpt1(path)?;
    let dims = dims3(&t, &path.display().to_string(), expect)?;
    CubeTensor::from_vec(dims, t.to_f64())
}

pub fn read_gt(dir: &Path, cfg: &PipelineConfig) -> Result<CubeTensor> {
    read_cube(&dir.join("gt.rpt"), cfg.grid.dims())
}

pub fn cloud_path(dir: &Path, method: ExtractionMethod) -> PathBuf {
    dir.join(format!("cloud_{}.rpc", method.file_tag()))
}

pub fn write_cloud(dir: &Path, cloud: &RadarPointCloud, method: ExtractionMethod) -> Result<()> {
    write_rpc1(cloud_path(dir, method), cloud)
}

pub fn read_cloud(dir: &Path, method: ExtractionMethod) -> Result<RadarPointCloud> {
    let path = cloud_path(dir, method);
    if !path.is_file() {
        return Err(P2tError::Data(format!("{} is missing; run `p2t extract --method {method}` first", path.display())));
    }
    let mut cloud = read_rpc1(path)?;
    cloud.method = Some(method);
    Ok(cloud)
}

/// Training pairs for every scene under `root`, in directory order.
pub fn load_pairs(root: &Path, method: ExtractionMethod, cfg: &PipelineConfig) -> Result<Vec<TrainingPair>> {
    scene_dirs(root)?
        .iter()
        .map(|dir| training_pair(&read_cloud(dir, method)?, &read_gt(dir, cfg)?, cfg))
        .collect()
}
