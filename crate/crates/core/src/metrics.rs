//! BEV image-quality metrics and the density-aware efficiency score.
//!
//! Cubes are projected to bird's-eye view by averaging over height, then
//! compared with PSNR and SSIM. Per-method results are min-max normalized
//! across methods and divided by point-cloud density (in percent) to give the
//! efficiency score `M = α·PSNR_norm/D + β·SSIM_norm/D`.

use std::fmt::Write as _;

use crate::error::{config_err, data_err, shape_err, Result};
use crate::pointcloud::ExtractionMethod;
use crate::tensorize::CubeTensor;

/// Height-pooled 2D image, row-major `(x, y)` with y fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl BevImage {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(shape_err("bev", format!("{} values for {nx}x{ny}", values.len())));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.ny + y]
    }

    fn same_shape(&self, other: &BevImage, what: &str) -> Result<()> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(shape_err(
                what,
                format!("{}x{} vs {}x{}", self.nx, self.ny, other.nx, other.ny),
            ));
        }
        Ok(())
    }
}

/// Arithmetic mean over the z axis of every `(x, y)` column.
pub fn mean_pool_height(c: &CubeTensor) -> BevImage {
    let [nx, ny, nz] = c.dims;
    let values = c
        .power
        .chunks_exact(nz.max(1))
        .map(|col| col.iter().sum::<f64>() / nz as f64)
        .collect();
    BevImage { nx, ny, values }
}

/// Peak signal-to-noise ratio in dB. Identical images give `+inf`.
pub fn psnr(a: &BevImage, b: &BevImage, peak: f64) -> Result<f64> {
    a.same_shape(b, "psnr")?;
    let mse = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.values.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// SSIM parameters: Gaussian window and stabilizing constants for dynamic
/// range `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - half).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Half-sample symmetric reflection: `d c b a | a b c d | d c b a`.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian filter with reflected borders; output has input size.
fn gaussian_filter(img: &[f64], nx: usize, ny: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = reflect(y as isize + k as isize - half, ny);
                acc += w * img[x * ny + yy];
            }
            tmp[x * ny + y] = acc;
        }
    }
    let mut out = vec![0.0; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = reflect(x as isize + k as isize - half, nx);
                acc += w * tmp[xx * ny + y];
            }
            out[x * ny + y] = acc;
        }
    }
    out
}

/// Mean local SSIM with the canonical 11×11, σ = 1.5 Gaussian window.
pub fn ssim(a: &BevImage, b: &BevImage) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

pub fn ssim_with(a: &BevImage, b: &BevImage, cfg: &SsimConfig) -> Result<f64> {
    a.same_shape(b, "ssim")?;
    if a.nx < cfg.window || a.ny < cfg.window {
        return Err(shape_err(
            "ssim",
            format!("image {}x{} smaller than {}x{} window", a.nx, a.ny, cfg.window, cfg.window),
        ));
    }
    let (nx, ny) = (a.nx, a.ny);
    let kernel = cfg.kernel();
    let blur = |v: &[f64]| gaussian_filter(v, nx, ny, &kernel);
    let aa: Vec<f64> = a.values.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.values.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    let (mu_a, mu_b) = (blur(&a.values), blur(&b.values));
    let (e_aa, e_bb, e_ab) = (blur(&aa), blur(&bb), blur(&ab));
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let total: f64 = (0..nx * ny)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / (nx * ny) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Height-pools both cubes and compares the BEV images (peak 1.0).
pub fn evaluate_frame(gen: &CubeTensor, gt: &CubeTensor) -> Result<FrameMetrics> {
    if gen.dims != gt.dims {
        return Err(shape_err("evaluate_frame", format!("{:?} vs {:?}", gen.dims, gt.dims)));
    }
    let (a, b) = (mean_pool_height(gen), mean_pool_height(gt));
    Ok(FrameMetrics {
        psnr_db: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b)?,
    })
}

/// Per-method averages of one extraction family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodRecord {
    pub method: ExtractionMethod,
    pub pcd_percent: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// A comparison across methods with the derived normalized metrics and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEvalSet {
    pub records: Vec<MethodRecord>,
    pub alpha: f64,
    pub beta: f64,
    pub psnr_norm: Vec<f64>,
    pub ssim_norm: Vec<f64>,
    pub des: Vec<f64>,
    pub warnings: Vec<String>,
}

impl MethodEvalSet {
    pub fn new(records: Vec<MethodRecord>, alpha: f64, beta: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(data_err("evaluation set needs at least one record"));
        }
        if !(alpha >= 0.0 && beta >= 0.0 && ((alpha + beta) - 1.0).abs() < 1e-12) {
            return Err(config_err(format!("alpha + beta must equal 1 (got {alpha} + {beta})")));
        }
        for r in &records {
            if !r.psnr_db.is_finite() || !r.ssim.is_finite() {
                return Err(data_err(format!("{}: PSNR/SSIM must be finite for normalization", r.method)));
            }
            if !(-1.0..=1.0).contains(&r.ssim) {
                return Err(data_err(format!("{}: SSIM {} outside [-1, 1]", r.method, r.ssim)));
            }
            if !(r.pcd_percent > 0.0 && r.pcd_percent <= 100.0) {
                return Err(data_err(format!("{}: PCD {}% outside (0, 100]", r.method, r.pcd_percent)));
            }
        }
        Ok(Self {
            records,
            alpha,
            beta,
            psnr_norm: Vec::new(),
            ssim_norm: Vec::new(),
            des: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Normalizes and scores in one go.
    pub fn evaluate(records: Vec<MethodRecord>, alpha: f64, beta: f64) -> Result<Self> {
        let mut set = normalize_metrics(&Self::new(records, alpha, beta)?);
        set.des = des(&set)?;
        Ok(set)
    }
}

fn min_max(values: &[f64], name: &str, warnings: &mut Vec<String>) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        warnings.push(format!(
            "{name}: max equals min ({lo}); normalized values set to 0"
        ));
        vec![0.0; values.len()]
    }
}

/// Min-max scaling of PSNR and SSIM across the record set.
pub fn normalize_metrics(set: &MethodEvalSet) -> MethodEvalSet {
    let mut out = set.clone();
    out.warnings.clear();
    let psnr: Vec<f64> = set.records.iter().map(|r| r.psnr_db).collect();
    let ssim: Vec<f64> = set.records.iter().map(|r| r.ssim).collect();
    out.psnr_norm = min_max(&psnr, "PSNR", &mut out.warnings);
    out.ssim_norm = min_max(&ssim, "SSIM", &mut out.warnings);
    out
}

/// `α·PSNR_norm/D + β·SSIM_norm/D` with `D` the point-cloud density in percent.
pub fn des(set: &MethodEvalSet) -> Result<Vec<f64>> {
    if set.psnr_norm.len() != set.records.len() || set.ssim_norm.len() != set.records.len() {
        return Err(data_err("des needs normalized metrics; call normalize_metrics first"));
    }
    set.records
        .iter()
        .zip(set.psnr_norm.iter().zip(&set.ssim_norm))
        .map(|(r, (&pn, &sn))| {
            if r.pcd_percent == 0.0 {
                return Err(data_err(format!("{}: zero point-cloud density", r.method)));
            }
            Ok(set.alpha * pn / r.pcd_percent + set.beta * sn / r.pcd_percent)
        })
        .collect()
}

pub const REPORT_HEADER: &str = "method,hyper,pcd_percent,psnr_db,ssim,psnr_norm,ssim_norm,des";

fn fmt4(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.4}")
    }
}

/// Report CSV with fixed 4-decimal formatting.
pub fn to_csv(set: &MethodEvalSet) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (i, r) in set.records.iter().enumerate() {
        let cell = |v: &Vec<f64>| v.get(i).map_or_else(String::new, |x| fmt4(*x));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method.family(),
            fmt4(r.method.hyper()),
            fmt4(r.pcd_percent),
            fmt4(r.psnr_db),
            fmt4(r.ssim),
            cell(&set.psnr_norm),
            cell(&set.ssim_norm),
            cell(&set.des),
        );
    }
    out
}

/// Human-readable table in the layout of the efficiency comparison.
pub fn render_table(set: &MethodEvalSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<11} {:>6} {:>8} {:>10} {:>7} {:>6}",
        "Method", "Hyper.", "PCD (%)", "PSNR (dB)", "SSIM", "DES"
    );
    for (i, r) in set.records.iter().enumerate() {
        let score = set.des.get(i).map_or_else(|| "-".to_string(), |d| format!("{d:.2}"));
        let _ = writeln!(
            out,
            "{:<11} {:>6} {:>8.2} {:>10.2} {:>7.2} {:>6}",
            r.method.family(),
            r.method.hyper(),
            r.pcd_percent,
            r.psnr_db,
            r.ssim,
            score
        );
    }
    for w in &set.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Reads records from CSV with at least `method,hyper,pcd_percent,psnr_db,ssim`
/// columns (located by header name; extra columns are ignored).
pub fn parse_records_csv(text: &str) -> Result<Vec<MethodRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| data_err("records CSV is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| data_err(format!("records CSV lacks column '{name}'")))
    };
    let (im, ih, ip, is, iss) = (find("method")?, find("hyper")?, find("pcd_percent")?, find("psnr_db")?, find("ssim")?);
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| data_err(format!("records CSV line {}: missing field", lineno + 1)))
        };
        let num = |i: usize| -> Result<f64> {
            let s = get(i)?;
            s.parse()
                .map_err(|_| data_err(format!("records CSV line {}: bad number '{s}'", lineno + 1)))
        };
        let method: ExtractionMethod = format!("{}:{}", get(im)?, get(ih)?)
            .parse()
            .map_err(|e| data_err(format!("records CSV line {}: {e}", lineno + 1)))?;
        records.push(MethodRecord {
            method,
            pcd_percent: num(ip)?,
            psnr_db: num(is)?,
            ssim: num(iss)?,
        });
    }
    Ok(records)
}
