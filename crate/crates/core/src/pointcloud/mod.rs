//! Point-cloud extraction from polar power volumes: percentile selection,
//! cell-averaging CFAR with optional detection-rate calibration, and
//! point-cloud density.

mod cfar;
mod percentile;

use std::fmt;
use std::str::FromStr;

pub use cfar::{ca_cfar, calibrate_cfar_scale, cfar_ratios, training_means, CfarConfig};
pub use percentile::{percentile_count, percentile_extract, PercentileConfig};

use crate::error::{config_err, P2tError, Result};
use crate::radar::PolarVolume;
use crate::tensorize::RoiGrid;

/// How a point cloud was extracted; the numeric value is the method's
/// hyper-parameter (percentile `p` or CFAR `K1`, both in percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtractionMethod {
    Percentile(f64),
    Cfar(f64),
}

impl ExtractionMethod {
    pub fn family(&self) -> &'static str {
        match self {
            ExtractionMethod::Percentile(_) => "percentile",
            ExtractionMethod::Cfar(_) => "cfar",
        }
    }

    pub fn hyper(&self) -> f64 {
        match *self {
            ExtractionMethod::Percentile(p) | ExtractionMethod::Cfar(p) => p,
        }
    }

    /// File-name friendly tag, e.g. `percentile-0.1`.
    pub fn file_tag(&self) -> String {
        format!("{}-{}", self.family(), self.hyper())
    }
}

impl fmt::Display for ExtractionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family(), self.hyper())
    }
}

impl FromStr for ExtractionMethod {
    type Err = P2tError;

    /// Parses `percentile:P` or `cfar:K1`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| config_err(format!("method '{s}' must look like percentile:P or cfar:K1")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| config_err(format!("method '{s}': bad number '{value}'")))?;
        if !(v > 0.0 && v <= 100.0) {
            return Err(config_err(format!("method '{s}': value must lie in (0, 100]")));
        }
        match kind.trim() {
            "percentile" => Ok(ExtractionMethod::Percentile(v)),
            "cfar" => Ok(ExtractionMethod::Cfar(v)),
            other => Err(config_err(format!("unknown extraction method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// Cartesian position (m).
    pub position: [f64; 3],
    pub power: f64,
    /// `(range_bin, azimuth_bin, elevation_bin)` of the source cell.
    pub polar_index: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadarPointCloud {
    /// Sorted by flat polar index.
    pub points: Vec<RadarPoint>,
    pub method: Option<ExtractionMethod>,
}

impl RadarPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn from_cells(vol: &PolarVolume, cells: &[usize], method: ExtractionMethod) -> Self {
        let points = cells
            .iter()
            .map(|&flat| {
                let idx = vol.unravel(flat);
                RadarPoint {
                    position: vol.bin_position(idx),
                    power: vol.power[flat],
                    polar_index: idx,
                }
            })
            .collect();
        Self {
            points,
            method: Some(method),
        }
    }
}

/// Extracts a cloud with either method. CFAR methods calibrate the scale
/// factor of `cfar` to hit the method's `K1` detection percentage.
pub fn extract(vol: &PolarVolume, method: ExtractionMethod, cfar: &CfarConfig) -> Result<RadarPointCloud> {
    match method {
        ExtractionMethod::Percentile(p) => percentile_extract(vol, &PercentileConfig::new(p)?),
        ExtractionMethod::Cfar(k1) => {
            let cfg = CfarConfig {
                k1_percent: Some(k1),
                ..cfar.clone()
            };
            let calibrated = calibrate_cfar_scale(vol, &cfg)?;
            let mut cloud = ca_cfar(vol, &calibrated)?;
            cloud.method = Some(method);
            Ok(cloud)
        }
    }
}

/// Fraction of ROI voxels occupied by in-ROI points: in-ROI point count over
/// the ROI cell count.
pub fn pcd(cloud: &RadarPointCloud, grid: &RoiGrid) -> f64 {
    let inside = cloud.points.iter().filter(|p| grid.contains(p.position)).count();
    inside as f64 / grid.cell_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parse_round_trip() {
        let m: ExtractionMethod = "percentile:0.1".parse().unwrap();
        assert_eq!(m, ExtractionMethod::Percentile(0.1));
        assert_eq!(m.to_string().parse::<ExtractionMethod>().unwrap(), m);
        let m: ExtractionMethod = "cfar:2.5".parse().unwrap();
        assert_eq!(m, ExtractionMethod::Cfar(2.5));
        assert_eq!(m.file_tag(), "cfar-2.5");
        assert!("cfar".parse::<ExtractionMethod>().is_err());
        assert!("os:3".parse::<ExtractionMethod>().is_err());
        assert!("percentile:0".parse::<ExtractionMethod>().is_err());
    }

    fn point_at(position: [f64; 3]) -> RadarPoint {
        RadarPoint {
            position,
            power: 1.0,
            polar_index: [0, 0, 0],
        }
    }

    #[test]
    fn pcd_edge_cases() {
        let grid = RoiGrid::default();
        assert_eq!(pcd(&RadarPointCloud::default(), &grid), 0.0);

        let one = RadarPointCloud {
            points: vec![point_at([10.0, 0.0, 1.0]), point_at([100.0, 0.0, 0.0])],
            method: None,
        };
        assert_eq!(pcd(&one, &grid), 1.0 / 491_520.0);

        let small = RoiGrid::new((0.0, 4.0), (-2.0, 2.0), (0.0, 2.0), 1.0).unwrap();
        let [nx, ny, nz] = small.dims();
        let mut all = RadarPointCloud::default();
        for ix in 0..nx {
            for iy in 0..ny {
                for iz in 0..nz {
                    all.points.push(point_at(small.voxel_center([ix, iy, iz])));
                }
            }
        }
        assert_eq!(pcd(&all, &small), 1.0);
    }
}
