//! Conversions between polar volumes, dense Cartesian cubes and sparse voxel
//! grids.

use rayon::prelude::*;

use crate::error::{config_err, shape_err, Result};
use crate::pointcloud::RadarPointCloud;
use crate::radar::{xyz_to_polar, PolarVolume};

/// Axis-aligned Cartesian region of interest divided into cubic voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub voxel_size: f64,
}

impl Default for RoiGrid {
    /// `[0, 76.8] × [-16, 16] × [-2, 10.8]` m at 0.4 m: 192 × 80 × 32 voxels.
    fn default() -> Self {
        Self {
            x_range: (0.0, 76.8),
            y_range: (-16.0, 16.0),
            z_range: (-2.0, 10.8),
            voxel_size: 0.4,
        }
    }
}

impl RoiGrid {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), z_range: (f64, f64), voxel_size: f64) -> Result<Self> {
        let grid = Self {
            x_range,
            y_range,
            z_range,
            voxel_size,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The default ROI at a different voxel size.
    pub fn with_voxel_size(voxel_size: f64) -> Result<Self> {
        let grid = Self {
            voxel_size,
            ..Self::default()
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(config_err(format!("voxel_size must be > 0, got {}", self.voxel_size)));
        }
        for (name, (lo, hi)) in [("x", self.x_range), ("y", self.y_range), ("z", self.z_range)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(config_err(format!("{name} range [{lo}, {hi}] is empty")));
            }
            let cells = (hi - lo) / self.voxel_size;
            if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
                return Err(config_err(format!(
                    "{name} extent {} is not a multiple of voxel size {}",
                    hi - lo,
                    self.voxel_size
                )));
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [(f64, f64); 3] {
        [self.x_range, self.y_range, self.z_range]
    }

    pub fn dims(&self) -> [usize; 3] {
        self.ranges()
            .map(|(lo, hi)| ((hi - lo) / self.voxel_size).round() as usize)
    }

    pub fn cell_count(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        let r = self.ranges();
        std::array::from_fn(|k| r[k].0 + (idx[k] as f64 + 0.5) * self.voxel_size)
    }

    /// Voxel containing `p`; the ROI is half-open `[lo, hi)` on every axis.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let r = self.ranges();
        let dims = self.dims();
        let mut idx = [0usize; 3];
        for k in 0..3 {
            if !(p[k] >= r[k].0 && p[k] < r[k].1) {
                return None;
            }
            idx[k] = (((p[k] - r[k].0) / self.voxel_size).floor() as usize).min(dims[k] - 1);
        }
        Some(idx)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.voxel_of(p).is_some()
    }

    /// Maps a position into `[0, 1]³` relative to the ROI box.
    pub fn relative(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.ranges();
        std::array::from_fn(|k| (p[k] - r[k].0) / (r[k].1 - r[k].0))
    }
}

/// Dense Cartesian power grid, row-major `(ix, iy, iz)` with z fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeTensor {
    pub dims: [usize; 3],
    pub power: Vec<f64>,
    /// Original `(min, max)` when the values have been min-max normalized.
    pub normalization: Option<(f64, f64)>,
}

impl CubeTensor {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            power: vec![0.0; dims.iter().product()],
            normalization: None,
        }
    }

    pub fn from_vec(dims: [usize; 3], power: Vec<f64>) -> Result<Self> {
        if power.len() != dims.iter().product::<usize>() {
            return Err(shape_err(
                "cube",
                format!("{} values for dims {dims:?}", power.len()),
            ));
        }
        Ok(Self {
            dims,
            power,
            normalization: None,
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization.is_some()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.power[self.index(ix, iy, iz)]
    }
}

/// Position of `value` on a strictly increasing axis as `(lower index, weight
/// of upper neighbour)`, or `None` outside `[axis[0], axis[last]]`.
fn locate(axis: &[f64], value: f64) -> Option<(usize, f64)> {
    let last = *axis.last()?;
    if axis.len() < 2 || !(value >= axis[0] && value <= last) {
        return None;
    }
    let upper = axis.partition_point(|&a| a <= value).clamp(1, axis.len() - 1);
    let lo = upper - 1;
    let t = (value - axis[lo]) / (axis[upper] - axis[lo]);
    Some((lo, t.clamp(0.0, 1.0)))
}

/// Samples the polar volume at every voxel centre by trilinear interpolation
/// in `(range, azimuth, elevation)`. Voxels whose centre falls outside the
/// polar field of view are zero.
pub fn polar_to_cartesian(vol: &PolarVolume, grid: &RoiGrid) -> Result<CubeTensor> {
    vol.check()?;
    grid.validate()?;
    if vol.dims.iter().any(|&n| n < 2) {
        return Err(shape_err(
            "polar_to_cartesian",
            format!("every polar axis needs >= 2 bins to span a field of view, got {:?}", vol.dims),
        ));
    }
    let dims = grid.dims();
    let plane = dims[1] * dims[2];
    let mut cube = CubeTensor::zeros(dims);
    cube.power
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(ix, slab)| {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let (r, az, el) = xyz_to_polar(grid.voxel_center([ix, iy, iz]));
                    let (Some(lr), Some(la), Some(le)) =
                        (locate(&vol.range, r), locate(&vol.azimuth, az), locate(&vol.elevation, el))
                    else {
                        continue;
                    };
                    let mut acc = 0.0;
                    for (dr, wr) in [(0, 1.0 - lr.1), (1, lr.1)] {
                        for (da, wa) in [(0, 1.0 - la.1), (1, la.1)] {
                            for (de, we) in [(0, 1.0 - le.1), (1, le.1)] {
                                let w = wr * wa * we;
                                if w != 0.0 {
                                    acc += w * vol.power[vol.index(lr.0 + dr, la.0 + da, le.0 + de)];
                                }
                            }
                        }
                    }
                    slab[iy * dims[2] + iz] = acc;
                }
            }
        });
    Ok(cube)
}

/// Per-frame min-max scaling to `[0, 1]`; a constant frame maps to zeros.
pub fn normalize_power(c: &CubeTensor) -> CubeTensor {
    let (min, max) = c
        .power
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (min, max) = if c.power.is_empty() { (0.0, 0.0) } else { (min, max) };
    let span = max - min;
    let power = c
        .power
        .iter()
        .map(|&v| if span > 0.0 { ((v - min) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    CubeTensor {
        dims: c.dims,
        power,
        normalization: Some((min, max)),
    }
}

/// Scales every frame by one shared `(min, max)`, for cross-frame comparability.
pub fn normalize_power_global(c: &CubeTensor, min: f64, max: f64) -> CubeTensor {
    let span = max - min;
    CubeTensor {
        dims: c.dims,
        power: c
            .power
            .iter()
            .map(|&v| if span > 0.0 { ((v - min) / span).clamp(0.0, 1.0) } else { 0.0 })
            .collect(),
        normalization: Some((min, max)),
    }
}

/// Inverse of [`normalize_power`]; returns the input unchanged if it was never
/// normalized.
pub fn denormalize_power(c: &CubeTensor) -> CubeTensor {
    match c.normalization {
        None => c.clone(),
        Some((min, max)) => CubeTensor {
            dims: c.dims,
            power: c.power.iter().map(|&v| if max > min { min + v * (max - min) } else { min }).collect(),
            normalization: None,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub index: [usize; 3],
    /// Mean `(x, y, z, power)` of the points inside the voxel.
    pub features: [f64; 4],
    pub count: usize,
}

/// Occupied voxels of a point cloud, sorted by flat index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    pub dims: [usize; 3],
    pub voxels: Vec<Voxel>,
}

impl SparseVoxelGrid {
    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

/// Bins in-ROI points into voxels and averages coordinates and power per voxel.
///
/// Points inside a voxel are summed in a canonical order so the result does
/// not depend on the input point order.
pub fn voxelize(cloud: &RadarPointCloud, grid: &RoiGrid) -> SparseVoxelGrid {
    let dims = grid.dims();
    let mut binned: Vec<(usize, [usize; 3], [f64; 4])> = cloud
        .points
        .iter()
        .filter_map(|p| {
            grid.voxel_of(p.position).map(|idx| {
                let flat = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
                (flat, idx, [p.position[0], p.position[1], p.position[2], p.power])
            })
        })
        .collect();
    binned.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.2.iter()
                .zip(&b.2)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let mut voxels: Vec<Voxel> = Vec::new();
    for group in binned.chunk_by(|a, b| a.0 == b.0) {
        let mut sum = [0.0; 4];
        for (_, _, f) in group {
            for k in 0..4 {
                sum[k] += f[k];
            }
        }
        let n = group.len() as f64;
        voxels.push(Voxel {
            index: group[0].1,
            features: sum.map(|s| s / n),
            count: group.len(),
        });
    }
    SparseVoxelGrid { dims, voxels }
}
