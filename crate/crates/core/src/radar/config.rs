use std::f64::consts::PI;

use crate::error::{config_err, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Taper applied along fast and slow time before the range/Doppler FFTs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n == 1 => vec![1.0],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// FMCW sensor parameters. All FFT sizes must be powers of two.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarConfig {
    /// Carrier frequency (Hz).
    pub carrier_frequency: f64,
    /// Chirp slope (Hz/s).
    pub chirp_slope: f64,
    /// ADC sample rate (Hz).
    pub sample_rate: f64,
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub azimuth_antennas: usize,
    pub elevation_antennas: usize,
    /// Element spacing of the virtual arrays, in wavelengths.
    pub antenna_spacing: f64,
    /// Standard deviation of the circular complex noise added per ADC sample.
    pub noise_stddev: f64,
    pub window: Window,
}

impl Default for RadarConfig {
    /// 77 GHz desk-scale sensor: 64 range × 32 azimuth × 16 elevation × 16
    /// Doppler bins, ~100 m unambiguous range.
    fn default() -> Self {
        Self {
            carrier_frequency: 77.0e9,
            chirp_slope: 1.5e13,
            sample_rate: 10.0e6,
            samples_per_chirp: 64,
            chirps_per_frame: 16,
            azimuth_antennas: 32,
            elevation_antennas: 16,
            antenna_spacing: 0.5,
            noise_stddev: 0.0,
            window: Window::Rectangular,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("samples_per_chirp", self.samples_per_chirp),
            ("chirps_per_frame", self.chirps_per_frame),
            ("azimuth_antennas", self.azimuth_antennas),
            ("elevation_antennas", self.elevation_antennas),
        ];
        for (name, n) in counts {
            if n == 0 || !n.is_power_of_two() {
                return Err(config_err(format!("{name} must be a power of two >= 1, got {n}")));
            }
        }
        for (name, v) in [
            ("carrier_frequency", self.carrier_frequency),
            ("chirp_slope", self.chirp_slope),
            ("sample_rate", self.sample_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("{name} must be positive and finite, got {v}")));
            }
        }
        // Below half a wavelength the outer angle bins have no real arcsin.
        if !(0.5..=1.0).contains(&self.antenna_spacing) {
            return Err(config_err(format!(
                "antenna_spacing must lie in [0.5, 1] wavelengths, got {}",
                self.antenna_spacing
            )));
        }
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return Err(config_err("noise_stddev must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Chirp repetition interval; chirps are back-to-back with no idle time.
    pub fn chirp_period(&self) -> f64 {
        self.samples_per_chirp as f64 / self.sample_rate
    }

    /// Largest range whose beat frequency stays below the sample rate.
    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT * self.sample_rate / (2.0 * self.chirp_slope)
    }

    pub fn range_resolution(&self) -> f64 {
        self.max_range() / self.samples_per_chirp as f64
    }

    /// Fractional range bin of a target at `range` metres.
    pub fn range_bin(&self, range: f64) -> f64 {
        2.0 * self.chirp_slope * range * self.samples_per_chirp as f64
            / (SPEED_OF_LIGHT * self.sample_rate)
    }

    /// Doppler phase advance per chirp, in cycles.
    pub fn doppler_cycles_per_chirp(&self, velocity: f64) -> f64 {
        2.0 * self.carrier_frequency * velocity * self.chirp_period() / SPEED_OF_LIGHT
    }

    /// Fractional offset of the Doppler peak from the centre bin.
    pub fn doppler_bin_offset(&self, velocity: f64) -> f64 {
        self.doppler_cycles_per_chirp(velocity) * self.chirps_per_frame as f64
    }

    /// Fractional offset of the angle peak from the centre bin for an array of
    /// `antennas` elements.
    pub fn angle_bin_offset(&self, angle: f64, antennas: usize) -> f64 {
        antennas as f64 * self.antenna_spacing * angle.sin()
    }

    pub fn range_axis(&self) -> Vec<f64> {
        let res = self.range_resolution();
        (0..self.samples_per_chirp).map(|k| k as f64 * res).collect()
    }

    pub fn azimuth_axis(&self) -> Vec<f64> {
        self.angle_axis(self.azimuth_antennas)
    }

    pub fn elevation_axis(&self) -> Vec<f64> {
        self.angle_axis(self.elevation_antennas)
    }

    /// Radial velocity at each centre-shifted Doppler bin (m/s).
    pub fn doppler_axis(&self) -> Vec<f64> {
        let n = self.chirps_per_frame;
        let per_cycle = SPEED_OF_LIGHT / (2.0 * self.carrier_frequency * self.chirp_period());
        (0..n)
            .map(|b| (b as f64 - (n / 2) as f64) / n as f64 * per_cycle)
            .collect()
    }

    fn angle_axis(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|b| {
                let u = (b as f64 - (n / 2) as f64) / (n as f64 * self.antenna_spacing);
                u.clamp(-1.0, 1.0).asin()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = RadarConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.max_range() > 76.8 * 1.2);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let cfg = RadarConfig {
            azimuth_antennas: 12,
            ..RadarConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn axes_are_strictly_monotone() {
        let cfg = RadarConfig::default();
        for axis in [
            cfg.range_axis(),
            cfg.azimuth_axis(),
            cfg.elevation_axis(),
            cfg.doppler_axis(),
        ] {
            assert!(axis.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn range_axis_inverts_range_bin() {
        let cfg = RadarConfig::default();
        for (k, r) in cfg.range_axis().into_iter().enumerate() {
            assert!((cfg.range_bin(r) - k as f64).abs() < 1e-9);
        }
    }
}
