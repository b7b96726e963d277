//! Desk-scale radar point-cloud to tensor reconstruction.
//!
//! The crate covers the full chain:
//!
//! ```text
//! Scene ──▶ ADC cube ──▶ range/Doppler FFT ──▶ angle FFT ──▶ 4D polar tensor
//!                                                                │ collapse Doppler
//!                                                                ▼
//!            point cloud ◀── percentile / CA-CFAR ◀── 3D polar volume ──▶ Cartesian cube (GT)
//!                 │ voxelize                                                   ▲
//!                 ▼                                                            │ L1 + adversarial
//!          sparse voxel grid ──▶ sparse encoder ──▶ dense decoder ──▶ generated cube
//! ```
//!
//! followed by BEV PSNR/SSIM evaluation and the efficiency score that trades
//! reconstruction quality against point-cloud density.

pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod pointcloud;
pub mod radar;
pub mod tensorize;

pub use error::{P2tError, Result};
