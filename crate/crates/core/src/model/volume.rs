use crate::error::{shape_err, Result};

/// Dense multi-channel 3D feature map, row-major `(channel, x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims.iter().product::<usize>()],
        }
    }

    pub fn from_vec(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * dims.iter().product::<usize>() {
            return Err(shape_err(
                "volume",
                format!("{} values for {channels} x {dims:?}", data.len()),
            ));
        }
        Ok(Self { channels, dims, data })
    }

    pub fn spatial(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims[0] + x) * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(c, x, y, z)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            channels: self.channels,
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stacks `parts` along the channel axis.
    pub fn concat(parts: &[&Volume], stage: &str) -> Result<Volume> {
        let dims = parts.first().map(|p| p.dims).unwrap_or([0; 3]);
        if let Some(bad) = parts.iter().find(|p| p.dims != dims) {
            return Err(shape_err(stage, format!("concat of {:?} with {:?}", dims, bad.dims)));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Volume {
            channels: parts.iter().map(|p| p.channels).sum(),
            dims,
            data,
        })
    }

    /// Splits along channels into pieces of the given widths (inverse of
    /// [`Volume::concat`]).
    pub fn split(&self, widths: &[usize]) -> Vec<Volume> {
        let n = self.spatial();
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let v = Volume {
                    channels: w,
                    dims: self.dims,
                    data: self.data[start * n..(start + w) * n].to_vec(),
                };
                start += w;
                v
            })
            .collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Gradient through a leaky ReLU given its output (sign is preserved for
/// positive slopes).
pub fn leaky_relu_grad(y: f64, slope: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        slope
    }
}
