use rayon::prelude::*;

use super::{ExtractionMethod, RadarPointCloud};
use crate::error::{config_err, data_err, Result};
use crate::radar::PolarVolume;

const SCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
const CALIBRATION_TOLERANCE: f64 = 0.005;

/// Cell-averaging CFAR window and threshold. Axis order is
/// `(range, azimuth, elevation)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CfarConfig {
    pub guard_cells: [usize; 3],
    pub training_cells: [usize; 3],
    /// Threshold multiplier on the training-cell mean.
    pub scale_factor: f64,
    /// Target detection percentage, used by [`calibrate_cfar_scale`].
    pub k1_percent: Option<f64>,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            guard_cells: [1; 3],
            training_cells: [2; 3],
            scale_factor: 4.0,
            k1_percent: None,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(config_err(format!("CFAR scale_factor must be > 0, got {}", self.scale_factor)));
        }
        if let Some(k1) = self.k1_percent {
            if !(k1 > 0.0 && k1 <= 100.0) {
                return Err(config_err(format!("K1 must lie in (0, 100], got {k1}")));
            }
        }
        Ok(())
    }
}

/// Mean power of the training cells around every cell, in flat order.
///
/// The window spans `guard + training` cells on each side of the cell under
/// test along every axis, minus the `guard`-sized box (which contains the cell
/// itself). Both boxes are clamped at the tensor borders.
pub fn training_means(vol: &PolarVolume, cfg: &CfarConfig) -> Result<Vec<f64>> {
    vol.check()?;
    let dims = vol.dims;
    let reach: [usize; 3] = std::array::from_fn(|k| cfg.guard_cells[k] + cfg.training_cells[k]);
    let bounds = |c: usize, half: usize, n: usize| (c.saturating_sub(half), (c + half).min(n - 1));

    (0..vol.len())
        .into_par_iter()
        .map(|flat| {
            let cell = vol.unravel(flat);
            let outer: [(usize, usize); 3] = std::array::from_fn(|k| bounds(cell[k], reach[k], dims[k]));
            let inner: [(usize, usize); 3] =
                std::array::from_fn(|k| bounds(cell[k], cfg.guard_cells[k], dims[k]));
            let mut sum = 0.0;
            let mut count = 0usize;
            for r in outer[0].0..=outer[0].1 {
                let in_r = (inner[0].0..=inner[0].1).contains(&r);
                for a in outer[1].0..=outer[1].1 {
                    let in_a = in_r && (inner[1].0..=inner[1].1).contains(&a);
                    let row = vol.index(r, a, 0);
                    for e in outer[2].0..=outer[2].1 {
                        if in_a && (inner[2].0..=inner[2].1).contains(&e) {
                            continue;
                        }
                        sum += vol.power[row + e];
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(data_err(format!(
                    "CFAR window has no training cells at {cell:?} (tensor dims {dims:?})"
                )));
            }
            Ok(sum / count as f64)
        })
        .collect()
}

fn detections(vol: &PolarVolume, means: &[f64], scale: f64) -> Vec<usize> {
    (0..vol.len())
        .filter(|&i| vol.power[i] > scale * means[i])
        .collect()
}

/// Cell-averaging CFAR over all three axes jointly: a cell is a detection iff
/// its power exceeds `scale_factor` times its training-cell mean.
pub fn ca_cfar(vol: &PolarVolume, cfg: &CfarConfig) -> Result<RadarPointCloud> {
    cfg.validate()?;
    let means = training_means(vol, cfg)?;
    let cells = detections(vol, &means, cfg.scale_factor);
    let mut cloud = RadarPointCloud::from_cells(vol, &cells, ExtractionMethod::Cfar(0.0));
    cloud.method = cfg.k1_percent.map(ExtractionMethod::Cfar);
    Ok(cloud)
}

/// Power over training mean per cell; the detection rule is `ratio > scale`.
pub fn cfar_ratios(vol: &PolarVolume, cfg: &CfarConfig) -> Result<Vec<f64>> {
    let means = training_means(vol, cfg)?;
    Ok(vol
        .power
        .iter()
        .zip(&means)
        .map(|(&p, &m)| match (p > 0.0, m > 0.0) {
            (_, true) => p / m,
            (true, false) => f64::INFINITY,
            (false, false) => 0.0,
        })
        .collect())
}

/// Finds the scale factor whose detection fraction is closest to `k1_percent`
/// by bisection in log-scale over `[1e-3, 1e3]`.
///
/// The detection count is non-increasing in the scale factor, so the search
/// keeps `lo` on the "too many detections" side and `hi` on the other.
pub fn calibrate_cfar_scale(vol: &PolarVolume, cfg: &CfarConfig) -> Result<CfarConfig> {
    cfg.validate()?;
    let k1 = cfg
        .k1_percent
        .ok_or_else(|| config_err("CFAR calibration needs k1_percent"))?;
    let target = k1 / 100.0;
    let means = training_means(vol, cfg)?;
    let n = vol.len() as f64;
    let fraction = |scale: f64| detections(vol, &means, scale).len() as f64 / n;

    let (mut lo, mut hi) = SCALE_BOUNDS;
    let (f_lo, f_hi) = (fraction(lo), fraction(hi));
    if target > f_lo + CALIBRATION_TOLERANCE || target < f_hi - CALIBRATION_TOLERANCE {
        return Err(data_err(format!(
            "K1 = {k1}% unreachable: detection fraction spans [{:.4}%, {:.4}%] over scale factors {:?}",
            100.0 * f_hi,
            100.0 * f_lo,
            SCALE_BOUNDS
        )));
    }
    let scale = if f_lo <= target {
        lo
    } else if f_hi >= target {
        hi
    } else {
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if fraction(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (fraction(lo) - target).abs() <= (fraction(hi) - target).abs() {
            lo
        } else {
            hi
        }
    };
    Ok(CfarConfig {
        scale_factor: scale,
        ..cfg.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume(dims: [usize; 3], power: Vec<f64>) -> PolarVolume {
        PolarVolume {
            dims,
            power,
            range: (0..dims[0]).map(|i| 1.0 + i as f64).collect(),
            azimuth: (0..dims[1]).map(|i| -0.5 + 0.1 * i as f64).collect(),
            elevation: (0..dims[2]).map(|i| -0.2 + 0.05 * i as f64).collect(),
        }
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> PolarVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        volume(dims, (0..n).map(|_| rng.random::<f64>() + 1e-3).collect())
    }

    #[test]
    fn constant_tensor_has_no_detections() {
        let vol = volume([8, 6, 5], vec![3.7; 240]);
        let cloud = ca_cfar(&vol, &CfarConfig { scale_factor: 1.01, ..CfarConfig::default() }).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn single_spike_detected_alone() {
        let mut power = vec![0.0; 9 * 9 * 9];
        let vol0 = volume([9, 9, 9], power.clone());
        let spike = vol0.index(4, 3, 6);
        power[spike] = 5.0;
        let vol = volume([9, 9, 9], power);
        let cloud = ca_cfar(&vol, &CfarConfig { scale_factor: 2.0, ..CfarConfig::default() }).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0].polar_index, [4, 3, 6]);
    }

    #[test]
    fn training_mean_matches_brute_force() {
        let vol = random_volume([7, 6, 5], 11);
        let cfg = CfarConfig {
            guard_cells: [1, 0, 1],
            training_cells: [2, 1, 1],
            ..CfarConfig::default()
        };
        let means = training_means(&vol, &cfg).unwrap();
        for flat in 0..vol.len() {
            let c = vol.unravel(flat);
            let (mut sum, mut n) = (0.0, 0);
            for other in 0..vol.len() {
                let o = vol.unravel(other);
                let d: Vec<usize> = (0..3).map(|k| c[k].abs_diff(o[k])).collect();
                let in_window = (0..3).all(|k| d[k] <= cfg.guard_cells[k] + cfg.training_cells[k]);
                let in_guard = (0..3).all(|k| d[k] <= cfg.guard_cells[k]);
                if in_window && !in_guard {
                    sum += vol.power[other];
                    n += 1;
                }
            }
            assert!((means[flat] - sum / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_window_is_an_error() {
        let vol = volume([1, 1, 1], vec![1.0]);
        assert!(ca_cfar(&vol, &CfarConfig::default()).is_err());
        let vol = random_volume([4, 4, 4], 1);
        let cfg = CfarConfig { training_cells: [0; 3], ..CfarConfig::default() };
        assert!(ca_cfar(&vol, &cfg).is_err());
    }

    #[test]
    fn detection_count_decreases_with_scale() {
        let vol = random_volume([16, 12, 8], 5);
        let means = training_means(&vol, &CfarConfig::default()).unwrap();
        let scales: Vec<f64> = (0..40).map(|i| 0.5 * 1.05f64.powi(i)).collect();
        let counts: Vec<usize> = scales.iter().map(|&s| detections(&vol, &means, s).len()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert!(counts[0] > counts[counts.len() - 1]);
        // coarser sweep: strictly decreasing while detections remain
        let coarse: Vec<usize> = [0.5, 0.8, 1.0, 1.2, 1.5].iter().map(|&s| detections(&vol, &means, s).len()).collect();
        assert!(coarse.windows(2).all(|w| w[1] < w[0]), "{coarse:?}");
    }

    #[test]
    fn calibration_hits_target() {
        let vol = random_volume([16, 16, 8], 9);
        for k1 in [2.5, 10.0, 40.0] {
            let cfg = CfarConfig { k1_percent: Some(k1), ..CfarConfig::default() };
            let cal = calibrate_cfar_scale(&vol, &cfg).unwrap();
            let frac = 100.0 * ca_cfar(&vol, &cal).unwrap().len() as f64 / vol.len() as f64;
            assert!((frac - k1).abs() <= 0.5, "k1={k1} got {frac}");
        }
    }

    #[test]
    fn calibration_full_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vol = volume([8, 8, 8], (0..512).map(|_| 1.0 + rng.random::<f64>()).collect());
        let cfg = CfarConfig { k1_percent: Some(100.0), ..CfarConfig::default() };
        let cal = calibrate_cfar_scale(&vol, &cfg).unwrap();
        assert_eq!(cal.scale_factor, SCALE_BOUNDS.0);
        assert_eq!(ca_cfar(&vol, &cal).unwrap().len(), 512);
    }

    #[test]
    fn calibration_unreachable_target() {
        let vol = volume([6, 6, 6], vec![0.0; 216]);
        let cfg = CfarConfig { k1_percent: Some(50.0), ..CfarConfig::default() };
        assert!(calibrate_cfar_scale(&vol, &cfg).is_err());
        assert!(calibrate_cfar_scale(&vol, &CfarConfig::default()).is_err());
    }

    #[test]
    fn ratios_agree_with_detections() {
        let vol = random_volume([10, 8, 6], 4);
        let cfg = CfarConfig::default();
        let ratios = cfar_ratios(&vol, &cfg).unwrap();
        let above = ratios.iter().filter(|&&r| r > 1.1).count();
        let det = ca_cfar(&vol, &CfarConfig { scale_factor: 1.1, ..cfg }).unwrap();
        assert!(above.abs_diff(det.len()) <= 1);
    }

    proptest! {
        #[test]
        fn scale_invariant_under_power_of_two(seed in 0u64..1000, k in -20i32..20, scale in 0.5f64..3.0) {
            let vol = random_volume([6, 5, 4], seed);
            let c = 2f64.powi(k);
            let scaled = volume(vol.dims, vol.power.iter().map(|p| p * c).collect());
            let cfg = CfarConfig { scale_factor: scale, ..CfarConfig::default() };
            let a = ca_cfar(&vol, &cfg).unwrap();
            let b = ca_cfar(&scaled, &cfg).unwrap();
            let ia: Vec<_> = a.points.iter().map(|p| p.polar_index).collect();
            let ib: Vec<_> = b.points.iter().map(|p| p.polar_index).collect();
            prop_assert_eq!(ia, ib);
        }
    }
}
