use num_complex::Complex64;
use rustfft::{FftPlannerScalar, FftDirection};

use super::scene::polar_to_xyz;
use super::{AdcCube, RadarConfig, Window};
use crate::error::{data_err, Result};

/// Complex cube after the range and Doppler FFTs, indexed
/// `(range_bin, doppler_bin, az_antenna, el_antenna)`. The Doppler axis is
/// centre-shifted: zero velocity sits at bin `N_slow / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerCube {
    pub dims: [usize; 4],
    pub data: Vec<Complex64>,
}

impl RangeDopplerCube {
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Physical coordinate of every bin centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarAxes {
    /// Metres.
    pub range: Vec<f64>,
    /// Radians.
    pub azimuth: Vec<f64>,
    /// Radians.
    pub elevation: Vec<f64>,
    /// Radial velocity, m/s.
    pub doppler: Vec<f64>,
}

impl PolarAxes {
    pub fn from_config(cfg: &RadarConfig) -> Self {
        Self {
            range: cfg.range_axis(),
            azimuth: cfg.azimuth_axis(),
            elevation: cfg.elevation_axis(),
            doppler: cfg.doppler_axis(),
        }
    }
}

/// Power over `(range, azimuth, elevation, doppler)`, row-major with Doppler fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTensor4D {
    pub dims: [usize; 4],
    pub power: Vec<f64>,
    pub axes: PolarAxes,
}

impl PolarTensor4D {
    pub fn index(&self, r: usize, a: usize, e: usize, d: usize) -> usize {
        let [_, na, ne, nd] = self.dims;
        ((r * na + a) * ne + e) * nd + d
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }
}

/// Doppler-free power over `(range, azimuth, elevation)`, row-major with
/// elevation fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarVolume {
    pub dims: [usize; 3],
    pub power: Vec<f64>,
    pub range: Vec<f64>,
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
}

impl PolarVolume {
    /// Builds a volume from a raw power array and the sensor's bin axes.
    pub fn from_config(dims: [usize; 3], power: Vec<f64>, cfg: &RadarConfig) -> Result<Self> {
        let vol = Self {
            dims,
            power,
            range: cfg.range_axis(),
            azimuth: cfg.azimuth_axis(),
            elevation: cfg.elevation_axis(),
        };
        vol.check()?;
        Ok(vol)
    }

    pub fn check(&self) -> Result<()> {
        let [nr, na, ne] = self.dims;
        if self.power.len() != nr * na * ne {
            return Err(data_err(format!(
                "polar volume has {} values, dims {:?} need {}",
                self.power.len(),
                self.dims,
                nr * na * ne
            )));
        }
        if self.range.len() != nr || self.azimuth.len() != na || self.elevation.len() != ne {
            return Err(data_err("polar volume axes do not match its dims"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn index(&self, r: usize, a: usize, e: usize) -> usize {
        (r * self.dims[1] + a) * self.dims[2] + e
    }

    pub fn unravel(&self, flat: usize) -> [usize; 3] {
        let e = flat % self.dims[2];
        let a = (flat / self.dims[2]) % self.dims[1];
        let r = flat / (self.dims[1] * self.dims[2]);
        [r, a, e]
    }

    /// Physical `(range, azimuth, elevation)` of a bin centre.
    pub fn bin_coords(&self, idx: [usize; 3]) -> (f64, f64, f64) {
        (self.range[idx[0]], self.azimuth[idx[1]], self.elevation[idx[2]])
    }

    /// Cartesian position of a bin centre.
    pub fn bin_position(&self, idx: [usize; 3]) -> [f64; 3] {
        let (r, a, e) = self.bin_coords(idx);
        polar_to_xyz(r, a, e)
    }
}

/// In-place unitary FFT along `axis` of a row-major 4D complex array,
/// optionally followed by a centre shift.
fn fft_axis(data: &mut [Complex64], dims: [usize; 4], axis: usize, window: Option<&[f64]>, shift: bool) {
    let n = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let fft = FftPlannerScalar::new().plan_fft(n, FftDirection::Forward);
    let scale = 1.0 / (n as f64).sqrt();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        let base = o * n * stride;
        for inner in 0..stride {
            for (k, slot) in line.iter_mut().enumerate() {
                let v = data[base + k * stride + inner];
                *slot = match window {
                    Some(w) => v * w[k],
                    None => v,
                };
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for k in 0..n {
                let src = if shift { (k + n / 2) % n } else { k };
                data[base + k * stride + inner] = line[src] * scale;
            }
        }
    }
}

/// Range FFT over fast time, then Doppler FFT over slow time, with a
/// rectangular window.
pub fn range_doppler_fft(adc: &AdcCube) -> RangeDopplerCube {
    range_doppler_fft_windowed(adc, Window::Rectangular)
}

pub fn range_doppler_fft_windowed(adc: &AdcCube, window: Window) -> RangeDopplerCube {
    let dims = adc.dims;
    let mut data = adc.data.clone();
    let taper = |n: usize| match window {
        Window::Rectangular => None,
        w => Some(w.coefficients(n)),
    };
    let wf = taper(dims[0]);
    fft_axis(&mut data, dims, 0, wf.as_deref(), false);
    let ws = taper(dims[1]);
    fft_axis(&mut data, dims, 1, ws.as_deref(), true);
    RangeDopplerCube { dims, data }
}

/// Azimuth and elevation FFTs (centre-shifted), squared magnitude, and
/// reordering to `(range, azimuth, elevation, doppler)`.
pub fn angle_fft(rd: &RangeDopplerCube, cfg: &RadarConfig) -> PolarTensor4D {
    let dims = rd.dims;
    let mut data = rd.data.clone();
    fft_axis(&mut data, dims, 2, None, true);
    fft_axis(&mut data, dims, 3, None, true);
    let [nr, nd, na, ne] = dims;
    let mut power = vec![0.0; data.len()];
    for r in 0..nr {
        for d in 0..nd {
            for a in 0..na {
                for e in 0..ne {
                    let src = ((r * nd + d) * na + a) * ne + e;
                    let dst = ((r * na + a) * ne + e) * nd + d;
                    power[dst] = data[src].norm_sqr();
                }
            }
        }
    }
    PolarTensor4D {
        dims: [nr, na, ne, nd],
        power,
        axes: PolarAxes::from_config(cfg),
    }
}

/// Statistic used to fold the Doppler axis away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DopplerReduction {
    #[default]
    Mean,
    Max,
}

pub fn collapse_doppler(t: &PolarTensor4D, mode: DopplerReduction) -> PolarVolume {
    let [nr, na, ne, nd] = t.dims;
    let power = t
        .power
        .chunks_exact(nd)
        .map(|cell| match mode {
            DopplerReduction::Mean => cell.iter().sum::<f64>() / nd as f64,
            DopplerReduction::Max => cell.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    PolarVolume {
        dims: [nr, na, ne],
        power,
        range: t.axes.range.clone(),
        azimuth: t.axes.azimuth.clone(),
        elevation: t.axes.elevation.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::{simulate_adc, Scatterer, Scene, SPEED_OF_LIGHT};
    use std::f64::consts::PI;

    fn cfg() -> RadarConfig {
        RadarConfig {
            samples_per_chirp: 32,
            chirps_per_frame: 16,
            azimuth_antennas: 8,
            elevation_antennas: 4,
            ..RadarConfig::default()
        }
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    #[test]
    fn zero_cube_stays_zero() {
        let adc = AdcCube::zeros([8, 4, 2, 2]);
        let rd = range_doppler_fft(&adc);
        assert!(rd.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn static_scatterer_lands_in_centre_doppler_bin() {
        let c = cfg();
        let scene = Scene::new(vec![Scatterer {
            range: 3.0 * c.range_resolution(),
            azimuth: 0.0,
            elevation: 0.0,
            radial_velocity: 0.0,
            reflectivity: 1.0,
        }]);
        let rd = range_doppler_fft(&simulate_adc(&scene, &c, 0).unwrap());
        let [_, nd, na, ne] = rd.dims;
        let profile: Vec<f64> = (0..nd)
            .map(|d| rd.data[((3 * nd + d) * na) * ne].norm_sqr())
            .collect();
        assert_eq!(argmax(&profile), nd / 2);
        let total: f64 = profile.iter().sum();
        assert!((profile[nd / 2] / total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn moving_scatterer_doppler_peak_matches_direct_dft() {
        let c = cfg();
        let nd = c.chirps_per_frame;
        // velocity at exactly +3 Doppler bins
        let v = 3.0 / nd as f64 * SPEED_OF_LIGHT / (2.0 * c.carrier_frequency * c.chirp_period());
        let scene = Scene::new(vec![Scatterer {
            range: 10.0,
            azimuth: 0.0,
            elevation: 0.0,
            radial_velocity: v,
            reflectivity: 1.0,
        }]);
        let adc = simulate_adc(&scene, &c, 0).unwrap();
        // direct DFT over slow time at fast=0, antenna 0
        let mags: Vec<f64> = (0..nd)
            .map(|k| {
                (0..nd)
                    .map(|m| {
                        let ang = -2.0 * PI * (k * m) as f64 / nd as f64;
                        adc.get(0, m, 0, 0) * Complex64::new(ang.cos(), ang.sin())
                    })
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        let oracle_bin = (argmax(&mags) + nd / 2) % nd;
        let expected = nd / 2 + (2.0 * c.carrier_frequency * v * c.chirp_period() * nd as f64 / SPEED_OF_LIGHT).round() as usize;
        assert_eq!(oracle_bin, expected);

        let polar = angle_fft(&range_doppler_fft(&adc), &c);
        let peak = argmax(&polar.power);
        assert_eq!(peak % nd, expected);
    }

    #[test]
    fn azimuth_peak_matches_direct_dft() {
        let c = cfg();
        let na = c.azimuth_antennas;
        let theta = (2.0 / (na as f64 * c.antenna_spacing)).asin();
        let scene = Scene::new(vec![Scatterer {
            range: 10.0,
            azimuth: theta,
            elevation: 0.0,
            radial_velocity: 0.0,
            reflectivity: 1.0,
        }]);
        let adc = simulate_adc(&scene, &c, 0).unwrap();
        let mags: Vec<f64> = (0..na)
            .map(|k| {
                (0..na)
                    .map(|i| {
                        let ang = -2.0 * PI * (k * i) as f64 / na as f64;
                        adc.get(0, 0, i, 0) * Complex64::new(ang.cos(), ang.sin())
                    })
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        let oracle_bin = (argmax(&mags) + na / 2) % na;
        assert_eq!(oracle_bin, na / 2 + 2);
        let vol = collapse_doppler(&angle_fft(&range_doppler_fft(&adc), &c), DopplerReduction::Mean);
        let [_, a, e] = vol.unravel(argmax(&vol.power));
        assert_eq!(a, oracle_bin);
        assert_eq!(e, c.elevation_antennas / 2);
        assert!((vol.azimuth[a] - theta).abs() < 1e-12);
    }

    #[test]
    fn parseval_holds_per_stage() {
        let c = RadarConfig { noise_stddev: 0.5, ..cfg() };
        let scene = Scene::new(vec![Scatterer {
            range: 23.7,
            azimuth: 0.31,
            elevation: -0.2,
            radial_velocity: 4.1,
            reflectivity: 1.3,
        }]);
        let adc = simulate_adc(&scene, &c, 3).unwrap();
        let rd = range_doppler_fft(&adc);
        let polar = angle_fft(&rd, &c);
        let e0 = adc.energy();
        let e1 = rd.energy();
        let e2 = polar.total_power();
        assert!((e1 - e0).abs() / e0 < 1e-9);
        assert!((e2 - e1).abs() / e1 < 1e-9);
    }

    fn tensor(nd: usize, values: impl Fn(usize) -> f64) -> PolarTensor4D {
        let dims = [2, 2, 2, nd];
        PolarTensor4D {
            dims,
            power: (0..dims.iter().product()).map(values).collect(),
            axes: PolarAxes {
                range: vec![0.0, 1.0],
                azimuth: vec![-0.1, 0.1],
                elevation: vec![-0.1, 0.1],
                doppler: (0..nd).map(|i| i as f64).collect(),
            },
        }
    }

    #[test]
    fn collapse_constant_along_doppler() {
        let t = tensor(4, |i| (i / 4) as f64 + 0.5);
        let mean = collapse_doppler(&t, DopplerReduction::Mean);
        let max = collapse_doppler(&t, DopplerReduction::Max);
        assert_eq!(mean.power, max.power);
        assert_eq!(mean.power[3], 3.5);
    }

    #[test]
    fn collapse_single_bin_mean() {
        let t = tensor(8, |i| if i == 8 * 5 + 3 { 4.0 } else { 0.0 });
        let mean = collapse_doppler(&t, DopplerReduction::Mean);
        assert_eq!(mean.power[5], 0.5);
        assert_eq!(mean.power.iter().filter(|&&p| p != 0.0).count(), 1);
    }

    #[test]
    fn collapse_max_matches_scan() {
        let t = tensor(5, |i| ((i * 7919) % 101) as f64 * 0.37);
        let max = collapse_doppler(&t, DopplerReduction::Max);
        for cell in 0..8 {
            let mut best = f64::NEG_INFINITY;
            for d in 0..5 {
                if t.power[cell * 5 + d] > best {
                    best = t.power[cell * 5 + d];
                }
            }
            assert_eq!(max.power[cell], best);
        }
    }
}
