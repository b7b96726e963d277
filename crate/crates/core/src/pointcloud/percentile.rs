use super::{ExtractionMethod, RadarPointCloud};
use crate::error::{config_err, data_err, Result};
use crate::radar::PolarVolume;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentileConfig {
    /// Percentage of cells kept, in `(0, 100]`.
    pub p_percent: f64,
}

impl PercentileConfig {
    pub fn new(p_percent: f64) -> Result<Self> {
        if !(p_percent > 0.0 && p_percent <= 100.0) {
            return Err(config_err(format!("percentile must lie in (0, 100], got {p_percent}")));
        }
        Ok(Self { p_percent })
    }
}

/// `ceil(p/100 · n)`, robust to the representation error of `p/100`.
pub fn percentile_count(p_percent: f64, n: usize) -> usize {
    let exact = p_percent * n as f64 / 100.0;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil().max(1.0) as usize;
    k.min(n)
}

/// Keeps the `ceil(p/100 · N)` highest-power cells; ties go to the lower flat
/// index. Points come back ordered by flat index.
pub fn percentile_extract(vol: &PolarVolume, cfg: &PercentileConfig) -> Result<RadarPointCloud> {
    let cfg = PercentileConfig::new(cfg.p_percent)?;
    if vol.is_empty() {
        return Err(data_err("percentile extraction on an empty tensor"));
    }
    let k = percentile_count(cfg.p_percent, vol.len());
    let mut order: Vec<usize> = (0..vol.len()).collect();
    let by_rank = |&a: &usize, &b: &usize| vol.power[b].total_cmp(&vol.power[a]).then(a.cmp(&b));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(RadarPointCloud::from_cells(
        vol,
        &order,
        ExtractionMethod::Percentile(cfg.p_percent),
    ))
}
