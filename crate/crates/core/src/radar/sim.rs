use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{RadarConfig, Scene, SPEED_OF_LIGHT};
use crate::error::Result;

/// Complex baseband samples indexed `(fast_time, slow_time, az_antenna, el_antenna)`,
/// row-major with the elevation antenna fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcCube {
    pub dims: [usize; 4],
    pub data: Vec<Complex64>,
}

impl AdcCube {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn index(&self, fast: usize, slow: usize, az: usize, el: usize) -> usize {
        let [_, ns, na, ne] = self.dims;
        ((fast * ns + slow) * na + az) * ne + el
    }

    pub fn get(&self, fast: usize, slow: usize, az: usize, el: usize) -> Complex64 {
        self.data[self.index(fast, slow, az, el)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn phasors(n: usize, step: f64) -> Vec<Complex64> {
    (0..n)
        .map(|i| {
            let (s, c) = (step * i as f64).sin_cos();
            Complex64::new(c, s)
        })
        .collect()
}

/// Synthesizes the dechirped ADC cube for `scene`.
///
/// Each sample is the coherent sum of one complex exponential per scatterer
/// (beat frequency on fast time, Doppler phase on slow time, array phase on
/// each antenna axis). When `cfg.noise_stddev > 0`, circular complex Gaussian
/// noise with `E|n|² = noise_stddev²` is added, drawn from a ChaCha8 stream
/// seeded by `seed` in sample order.
pub fn simulate_adc(scene: &Scene, cfg: &RadarConfig, seed: u64) -> Result<AdcCube> {
    cfg.validate()?;
    scene.validate(cfg)?;
    let dims = [
        cfg.samples_per_chirp,
        cfg.chirps_per_frame,
        cfg.azimuth_antennas,
        cfg.elevation_antennas,
    ];
    let mut cube = AdcCube::zeros(dims);
    let [_, ns, na, ne] = dims;

    struct Terms {
        amp: Complex64,
        fast: Vec<Complex64>,
        spatial: Vec<Complex64>,
    }

    let terms: Vec<Terms> = scene
        .scatterers
        .iter()
        .map(|s| {
            let beat = 2.0 * cfg.chirp_slope * s.range / SPEED_OF_LIGHT;
            let fast = phasors(dims[0], 2.0 * PI * beat / cfg.sample_rate);
            let slow = phasors(ns, 2.0 * PI * cfg.doppler_cycles_per_chirp(s.radial_velocity));
            let az = phasors(na, 2.0 * PI * cfg.antenna_spacing * s.azimuth.sin());
            let el = phasors(ne, 2.0 * PI * cfg.antenna_spacing * s.elevation.sin());
            let mut spatial = Vec::with_capacity(ns * na * ne);
            for sv in &slow {
                for av in &az {
                    let sa = sv * av;
                    spatial.extend(el.iter().map(|ev| sa * ev));
                }
            }
            let round_trip = 4.0 * PI * s.range / cfg.wavelength();
            let amp = Complex64::from_polar(s.reflectivity, round_trip.rem_euclid(2.0 * PI));
            Terms { amp, fast, spatial }
        })
        .collect();

    let plane = ns * na * ne;
    cube.data
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(n, chunk)| {
            for t in &terms {
                let scale = t.amp * t.fast[n];
                for (out, sp) in chunk.iter_mut().zip(&t.spatial) {
                    *out += scale * sp;
                }
            }
        });

    if cfg.noise_stddev > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.noise_stddev / 2f64.sqrt())
            .expect("finite non-negative stddev");
        for z in cube.data.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *z += Complex64::new(re, im);
        }
    }
    Ok(cube)
}
