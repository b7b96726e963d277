//! Sparse 3D convolutions over an active-site set.
//!
//! A [`Rulebook`] lists, per kernel offset, the `(input row, output row)`
//! pairs that interact. Submanifold convolutions (3³, stride 1) produce output
//! only at input sites; downsampling convolutions (2³, stride 2) map every
//! active site `c` to `⌊c/2⌋`, so each input feeds exactly one output.

use rand::Rng;

use super::dense::{axpy, dot};
use super::volume::{leaky_relu, leaky_relu_grad, Volume};
use crate::error::{shape_err, Result};

const INACTIVE: u32 = u32::MAX;

/// Features on active sites, sorted by flat index; `data` is row-major
/// `(site, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub dims: [usize; 3],
    pub coords: Vec<[usize; 3]>,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SparseFeatures {
    pub fn new(dims: [usize; 3], coords: Vec<[usize; 3]>, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != coords.len() * channels {
            return Err(shape_err("sparse features", format!("{} values for {} sites x {channels}", data.len(), coords.len())));
        }
        let flat: Vec<usize> = coords.iter().map(|c| flat_index(dims, *c)).collect();
        if coords.iter().any(|c| (0..3).any(|k| c[k] >= dims[k])) {
            return Err(shape_err("sparse features", "site outside grid"));
        }
        if flat.windows(2).any(|w| w[0] >= w[1]) {
            return Err(shape_err("sparse features", "sites must be unique and sorted by flat index"));
        }
        Ok(Self { dims, coords, channels, data })
    }

    pub fn empty(dims: [usize; 3], channels: usize) -> Self {
        Self {
            dims,
            coords: Vec::new(),
            channels,
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    /// Dense copy with zeros at inactive sites.
    pub fn densify(&self) -> Volume {
        let mut v = Volume::zeros(self.channels, self.dims);
        let n = v.spatial();
        for (i, c) in self.coords.iter().enumerate() {
            let f = flat_index(self.dims, *c);
            for ch in 0..self.channels {
                v.data[ch * n + f] = self.data[i * self.channels + ch];
            }
        }
        v
    }

    /// Adjoint of [`SparseFeatures::densify`]: reads a dense gradient back at
    /// the active sites.
    pub fn gather(&self, dense: &Volume) -> Vec<f64> {
        let n = dense.spatial();
        let mut out = vec![0.0; self.data.len()];
        for (i, c) in self.coords.iter().enumerate() {
            let f = flat_index(self.dims, *c);
            for ch in 0..self.channels {
                out[i * self.channels + ch] = dense.data[ch * n + f];
            }
        }
        out
    }

    pub fn with_data(&self, channels: usize, data: Vec<f64>) -> SparseFeatures {
        debug_assert_eq!(data.len(), self.coords.len() * channels);
        SparseFeatures {
            dims: self.dims,
            coords: self.coords.clone(),
            channels,
            data,
        }
    }

    pub fn leaky(&self, slope: f64) -> SparseFeatures {
        self.with_data(self.channels, self.data.iter().map(|&v| leaky_relu(v, slope)).collect())
    }

    fn site_map(&self) -> Vec<u32> {
        let mut map = vec![INACTIVE; self.dims.iter().product()];
        for (i, c) in self.coords.iter().enumerate() {
            map[flat_index(self.dims, *c)] = i as u32;
        }
        map
    }
}

pub fn flat_index(dims: [usize; 3], c: [usize; 3]) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

/// Backward of a leaky ReLU applied to sparse features, given its output.
pub fn leaky_backward(out: &SparseFeatures, grad: &[f64], slope: f64) -> Vec<f64> {
    out.data
        .iter()
        .zip(grad)
        .map(|(&y, &g)| g * leaky_relu_grad(y, slope))
        .collect()
}

/// Per-offset `(input row, output row)` pairs plus the output site set.
#[derive(Debug, Clone, PartialEq)]
pub struct Rulebook {
    pub out_dims: [usize; 3],
    pub out_coords: Vec<[usize; 3]>,
    pub pairs: Vec<Vec<(u32, u32)>>,
}

impl Rulebook {
    /// 3³ stride-1 submanifold rules: outputs exactly at the input sites.
    pub fn submanifold(input: &SparseFeatures) -> Self {
        let map = input.site_map();
        let dims = input.dims;
        let mut pairs = vec![Vec::new(); 27];
        for (o, c) in input.coords.iter().enumerate() {
            for (k, rules) in pairs.iter_mut().enumerate() {
                let off = [k / 9, (k / 3) % 3, k % 3];
                let mut nb = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let v = c[a] as isize + off[a] as isize - 1;
                    if v < 0 || v >= dims[a] as isize {
                        inside = false;
                        break;
                    }
                    nb[a] = v as usize;
                }
                if inside {
                    let i = map[flat_index(dims, nb)];
                    if i != INACTIVE {
                        rules.push((i, o as u32));
                    }
                }
            }
        }
        Self {
            out_dims: dims,
            out_coords: input.coords.clone(),
            pairs,
        }
    }

    /// 2³ stride-2 rules: site `c` feeds output `⌊c/2⌋` through offset `c mod 2`.
    pub fn downsample(input: &SparseFeatures) -> Self {
        let out_dims = input.dims.map(|d| d.div_ceil(2));
        let mut parents: Vec<(usize, [usize; 3])> = input
            .coords
            .iter()
            .map(|c| {
                let p = c.map(|v| v / 2);
                (flat_index(out_dims, p), p)
            })
            .collect();
        parents.sort_unstable_by_key(|p| p.0);
        parents.dedup_by_key(|p| p.0);
        let mut out_map = vec![INACTIVE; out_dims.iter().product()];
        for (row, (flat, _)) in parents.iter().enumerate() {
            out_map[*flat] = row as u32;
        }
        let mut pairs = vec![Vec::new(); 8];
        for (i, c) in input.coords.iter().enumerate() {
            let k = (c[0] % 2) * 4 + (c[1] % 2) * 2 + c[2] % 2;
            let o = out_map[flat_index(out_dims, c.map(|v| v / 2))];
            pairs[k].push((i as u32, o));
        }
        Self {
            out_dims,
            out_coords: parents.into_iter().map(|p| p.1).collect(),
            pairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseKind {
    /// 3³, stride 1, active set preserved.
    Submanifold,
    /// 2³, stride 2.
    Downsample,
}

/// Sparse convolution weights, laid out `(offset, in_channel, out_channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseConv {
    pub kind: SparseKind,
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SparseConv {
    pub fn offsets(kind: SparseKind) -> usize {
        match kind {
            SparseKind::Submanifold => 27,
            SparseKind::Downsample => 8,
        }
    }

    pub fn zeros(kind: SparseKind, cin: usize, cout: usize) -> Self {
        Self {
            kind,
            cin,
            cout,
            weight: vec![0.0; Self::offsets(kind) * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn init(kind: SparseKind, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(kind, cin, cout);
        let bound = 1.0 / ((Self::offsets(kind) * cin) as f64).sqrt();
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn rulebook(&self, input: &SparseFeatures) -> Rulebook {
        match self.kind {
            SparseKind::Submanifold => Rulebook::submanifold(input),
            SparseKind::Downsample => Rulebook::downsample(input),
        }
    }

    pub fn forward(&self, input: &SparseFeatures, rules: &Rulebook) -> Result<SparseFeatures> {
        if input.channels != self.cin {
            return Err(shape_err("sparse conv", format!("expected {} channels, got {}", self.cin, input.channels)));
        }
        let (cin, cout) = (self.cin, self.cout);
        let n_out = rules.out_coords.len();
        let mut out = vec![0.0; n_out * cout];
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(&self.bias);
        }
        for (k, pairs) in rules.pairs.iter().enumerate() {
            let w = &self.weight[k * cin * cout..(k + 1) * cin * cout];
            for &(i, o) in pairs {
                let x = input.row(i as usize);
                let y = &mut out[o as usize * cout..(o as usize + 1) * cout];
                for (ci, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    axpy(y, xv, &w[ci * cout..(ci + 1) * cout]);
                }
            }
        }
        Ok(SparseFeatures {
            dims: rules.out_dims,
            coords: rules.out_coords.clone(),
            channels: cout,
            data: out,
        })
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient (row-major like `input.data`).
    pub fn backward(&self, input: &SparseFeatures, rules: &Rulebook, dout: &[f64], grad: &mut SparseConv) -> Vec<f64> {
        let (cin, cout) = (self.cin, self.cout);
        for row in dout.chunks_exact(cout) {
            for (b, &g) in grad.bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut din = vec![0.0; input.data.len()];
        for (k, pairs) in rules.pairs.iter().enumerate() {
            let w = &self.weight[k * cin * cout..(k + 1) * cin * cout];
            let gw = &mut grad.weight[k * cin * cout..(k + 1) * cin * cout];
            for &(i, o) in pairs {
                let (i, o) = (i as usize, o as usize);
                let x = input.row(i);
                let g = &dout[o * cout..(o + 1) * cout];
                let dx = &mut din[i * cin..(i + 1) * cin];
                for ci in 0..cin {
                    dx[ci] += dot(&w[ci * cout..(ci + 1) * cout], g);
                    axpy(&mut gw[ci * cout..(ci + 1) * cout], x[ci], g);
                }
            }
        }
        din
    }
}
