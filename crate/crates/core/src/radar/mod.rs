//! FMCW radar signal chain: scene synthesis, range/Doppler/angle FFTs and
//! Doppler collapse.
//!
//! The model is a complex-baseband (dechirped) IF signal. For a scatterer at
//! range `R`, radial velocity `v` and angles `(az, el)`, sample
//! `(n, m, i, k)` of the ADC cube is
//!
//! ```text
//! a · exp(j·[4π·R/λ + 2π·f_b·n/f_s + 4π·f_c·v·T_c·m/c + 2π·d·sin(az)·i + 2π·d·sin(el)·k])
//! ```
//!
//! with beat frequency `f_b = 2·S·R/c`, chirp period `T_c = N_fast / f_s` and
//! antenna spacing `d` in wavelengths.

mod config;
mod fft;
mod scene;
mod sim;

pub use config::{RadarConfig, Window, SPEED_OF_LIGHT};
pub use fft::{
    angle_fft, collapse_doppler, range_doppler_fft, range_doppler_fft_windowed, DopplerReduction,
    PolarAxes, PolarTensor4D, PolarVolume, RangeDopplerCube,
};
pub use scene::{polar_to_xyz, xyz_to_polar, Scatterer, Scene, SceneSampler};
pub use sim::{simulate_adc, AdcCube};

use crate::error::Result;

/// Full chain from a scene to the Doppler-collapsed polar power volume.
pub fn scene_to_polar(
    scene: &Scene,
    cfg: &RadarConfig,
    seed: u64,
    reduction: DopplerReduction,
) -> Result<(PolarTensor4D, PolarVolume)> {
    let adc = simulate_adc(scene, cfg, seed)?;
    let rd = range_doppler_fft_windowed(&adc, cfg.window);
    let polar = angle_fft(&rd, cfg);
    let volume = collapse_doppler(&polar, reduction);
    Ok((polar, volume))
}
