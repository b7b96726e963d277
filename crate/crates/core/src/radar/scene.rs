use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use super::RadarConfig;
use crate::error::{data_err, P2tError, Result};

/// A point scatterer in sensor-centred polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    /// Metres.
    pub range: f64,
    /// Radians, positive towards +y.
    pub azimuth: f64,
    /// Radians, positive towards +z.
    pub elevation: f64,
    /// m/s, positive when receding.
    pub radial_velocity: f64,
    /// Linear amplitude.
    pub reflectivity: f64,
}

impl Scatterer {
    /// Cartesian position under the sensor convention
    /// `x = r·cos(el)·cos(az)`, `y = r·cos(el)·sin(az)`, `z = r·sin(el)`.
    pub fn position(&self) -> [f64; 3] {
        polar_to_xyz(self.range, self.azimuth, self.elevation)
    }
}

pub fn polar_to_xyz(range: f64, azimuth: f64, elevation: f64) -> [f64; 3] {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    [range * ce * ca, range * ce * sa, range * se]
}

pub fn xyz_to_polar(p: [f64; 3]) -> (f64, f64, f64) {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let az = p[1].atan2(p[0]);
    let el = (p[2] / r).clamp(-1.0, 1.0).asin();
    (r, az, el)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
}

impl Scene {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Self { scatterers }
    }

    pub fn union(&self, other: &Scene) -> Scene {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Scene { scatterers }
    }

    /// Checks every scatterer against the sensor's unambiguous range and the
    /// visible half-space.
    pub fn validate(&self, cfg: &RadarConfig) -> Result<()> {
        let max_range = cfg.max_range();
        for (i, s) in self.scatterers.iter().enumerate() {
            let fields = [s.range, s.azimuth, s.elevation, s.radial_velocity, s.reflectivity];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(data_err(format!("scatterer {i}: non-finite field")));
            }
            if !(0.0..max_range).contains(&s.range) {
                return Err(data_err(format!(
                    "scatterer {i}: range {} m outside unambiguous range [0, {max_range:.3})",
                    s.range
                )));
            }
            if s.azimuth.abs() >= FRAC_PI_2 || s.elevation.abs() >= FRAC_PI_2 {
                return Err(data_err(format!("scatterer {i}: angle outside (-pi/2, pi/2)")));
            }
            if s.reflectivity <= 0.0 {
                return Err(data_err(format!("scatterer {i}: reflectivity must be > 0")));
            }
        }
        Ok(())
    }

    /// Serializes to the line format accepted by [`Scene::from_str`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("# range azimuth elevation velocity reflectivity\n");
        for s in &self.scatterers {
            let _ = writeln!(
                out,
                "{:?} {:?} {:?} {:?} {:?}",
                s.range, s.azimuth, s.elevation, s.radial_velocity, s.reflectivity
            );
        }
        out
    }
}

impl FromStr for Scene {
    type Err = P2tError;

    /// One scatterer per line: `range azimuth elevation velocity reflectivity`.
    /// Blank lines and `#` comments are ignored.
    fn from_str(text: &str) -> Result<Self> {
        let mut scatterers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        data_err(format!("scene line {}: cannot parse number '{tok}'", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != 5 {
                return Err(data_err(format!(
                    "scene line {}: expected 5 fields, found {}",
                    lineno + 1,
                    values.len()
                )));
            }
            scatterers.push(Scatterer {
                range: values[0],
                azimuth: values[1],
                elevation: values[2],
                radial_velocity: values[3],
                reflectivity: values[4],
            });
        }
        Ok(Scene { scatterers })
    }
}

/// Random scenes of small scatterer clusters ("objects") placed in a
/// Cartesian box in front of the sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSampler {
    /// Inclusive bounds on the number of objects.
    pub objects: (usize, usize),
    /// Inclusive bounds on scatterers per object.
    pub scatterers_per_object: (usize, usize),
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Half-extent of an object's cluster, metres.
    pub object_extent: f64,
    /// Reflectivity drawn log-uniformly from this interval.
    pub reflectivity: (f64, f64),
    /// Radial speed drawn uniformly from `[-max, max]`.
    pub max_speed: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            objects: (2, 5),
            scatterers_per_object: (2, 6),
            x_range: (8.0, 70.0),
            y_range: (-12.0, 12.0),
            z_range: (-1.0, 3.0),
            object_extent: 1.5,
            reflectivity: (1.0, 10.0),
            max_speed: 8.0,
        }
    }
}

impl SceneSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> Scene {
        let n_objects = rng.random_range(self.objects.0..=self.objects.1);
        let mut scatterers = Vec::new();
        let (lo, hi) = (self.reflectivity.0.ln(), self.reflectivity.1.ln());
        for _ in 0..n_objects {
            let centre = [
                rng.random_range(self.x_range.0..=self.x_range.1),
                rng.random_range(self.y_range.0..=self.y_range.1),
                rng.random_range(self.z_range.0..=self.z_range.1),
            ];
            let velocity = rng.random_range(-self.max_speed..=self.max_speed);
            let count = rng.random_range(self.scatterers_per_object.0..=self.scatterers_per_object.1);
            for _ in 0..count {
                let p: [f64; 3] = std::array::from_fn(|k| centre[k] + rng.random_range(-self.object_extent..=self.object_extent));
                let (range, azimuth, elevation) = xyz_to_polar(p);
                scatterers.push(Scatterer {
                    range,
                    azimuth,
                    elevation,
                    radial_velocity: velocity,
                    reflectivity: rng.random_range(lo..=hi).exp(),
                });
            }
        }
        Scene { scatterers }
    }
}
