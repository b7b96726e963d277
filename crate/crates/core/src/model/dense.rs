//! Dense 3D layers with explicit backward passes.

use rand::Rng;
use rayon::prelude::*;

use super::volume::Volume;
use crate::error::{shape_err, Result};

/// Dot product with four independent accumulators (fixed summation order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a·x`.
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (v, &u) in y.iter_mut().zip(x) {
        *v += a * u;
    }
}

/// `(channel, cell)` → `(cell, channel)`.
fn channels_last(v: &Volume) -> Vec<f64> {
    let n = v.spatial();
    let c = v.channels;
    let mut out = vec![0.0; v.data.len()];
    for ch in 0..c {
        for (i, &x) in v.data[ch * n..(ch + 1) * n].iter().enumerate() {
            out[i * c + ch] = x;
        }
    }
    out
}

fn channels_first(data: &[f64], channels: usize, dims: [usize; 3]) -> Volume {
    let mut v = Volume::zeros(channels, dims);
    let n = v.spatial();
    for (i, row) in data.chunks_exact(channels).enumerate() {
        for (ch, &x) in row.iter().enumerate() {
            v.data[ch * n + i] = x;
        }
    }
    v
}

/// Output cells per im2col block.
const BLOCK: usize = 128;

/// Cubic-kernel convolution, weight layout `(out, in, kx, ky, kz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3d {
    pub fn zeros(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: vec![0.0; cout * cin * kernel.pow(3)],
            bias: vec![0.0; cout],
        }
    }

    /// Uniform in `±1/√fan_in`.
    pub fn init(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(cin, cout, kernel, stride, pad);
        let bound = 1.0 / ((cin * kernel.pow(3)) as f64).sqrt();
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|d| (d + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1)
    }

    fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    /// Weights reordered to `(out, tap, in)` so a row matches an im2col row.
    fn weight_rows(&self) -> Vec<f64> {
        let (cin, t) = (self.cin, self.taps());
        let mut w = vec![0.0; self.weight.len()];
        for co in 0..self.cout {
            for ci in 0..cin {
                for k in 0..t {
                    w[(co * t + k) * cin + ci] = self.weight[(co * cin + ci) * t + k];
                }
            }
        }
        w
    }

    /// Input cell feeding output cell `o` through tap `k`, if inside.
    fn source(&self, idims: [usize; 3], odims: [usize; 3], o: usize, k: usize) -> Option<usize> {
        let kk = self.kernel;
        let oc = [o / (odims[1] * odims[2]), (o / odims[2]) % odims[1], o % odims[2]];
        let kc = [k / (kk * kk), (k / kk) % kk, k % kk];
        let mut ic = [0usize; 3];
        for a in 0..3 {
            let v = (oc[a] * self.stride + kc[a]) as isize - self.pad as isize;
            if v < 0 || v >= idims[a] as isize {
                return None;
            }
            ic[a] = v as usize;
        }
        Some((ic[0] * idims[1] + ic[1]) * idims[2] + ic[2])
    }

    /// im2col rows for output cells `start..start+rows`.
    fn columns(&self, x_cl: &[f64], idims: [usize; 3], odims: [usize; 3], start: usize, rows: usize) -> Vec<f64> {
        let (cin, t) = (self.cin, self.taps());
        let width = t * cin;
        let mut col = vec![0.0; rows * width];
        for r in 0..rows {
            for k in 0..t {
                if let Some(i) = self.source(idims, odims, start + r, k) {
                    col[r * width + k * cin..r * width + (k + 1) * cin].copy_from_slice(&x_cl[i * cin..(i + 1) * cin]);
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Volume) -> Result<Volume> {
        if x.channels != self.cin {
            return Err(shape_err("conv3d", format!("expected {} channels, got {}", self.cin, x.channels)));
        }
        if x.dims.iter().any(|&d| d + 2 * self.pad < self.kernel) {
            return Err(shape_err("conv3d", format!("input {:?} smaller than kernel", x.dims)));
        }
        let odims = self.out_dims(x.dims);
        let n_out: usize = odims.iter().product();
        let x_cl = channels_last(x);
        let w = self.weight_rows();
        let width = self.taps() * self.cin;
        let cout = self.cout;
        let mut out_cl = vec![0.0; n_out * cout];
        out_cl
            .par_chunks_mut(BLOCK * cout)
            .enumerate()
            .for_each(|(b, out)| {
                let rows = out.len() / cout;
                let col = self.columns(&x_cl, x.dims, odims, b * BLOCK, rows);
                for r in 0..rows {
                    let c = &col[r * width..(r + 1) * width];
                    for co in 0..cout {
                        out[r * cout + co] = self.bias[co] + dot(c, &w[co * width..(co + 1) * width]);
                    }
                }
            });
        Ok(channels_first(&out_cl, cout, odims))
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, x: &Volume, dy: &Volume, grad: &mut Conv3d) -> Volume {
        let odims = dy.dims;
        let n_out = dy.spatial();
        let (cin, cout, t) = (self.cin, self.cout, self.taps());
        let width = t * cin;
        let x_cl = channels_last(x);
        let dy_cl = channels_last(dy);
        let w = self.weight_rows();

        // Per block: weight-gradient partial (out, tap, in) and column gradients.
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n_out.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let start = b * BLOCK;
                let rows = BLOCK.min(n_out - start);
                let col = self.columns(&x_cl, x.dims, odims, start, rows);
                let mut gw = vec![0.0; cout * width];
                let mut dcol = vec![0.0; rows * width];
                for r in 0..rows {
                    let g = &dy_cl[(start + r) * cout..(start + r + 1) * cout];
                    let c = &col[r * width..(r + 1) * width];
                    let dc = &mut dcol[r * width..(r + 1) * width];
                    for co in 0..cout {
                        axpy(&mut gw[co * width..(co + 1) * width], g[co], c);
                        axpy(dc, g[co], &w[co * width..(co + 1) * width]);
                    }
                }
                (gw, dcol)
            })
            .collect();

        let mut gw_rows = vec![0.0; cout * width];
        let mut dx_cl = vec![0.0; x_cl.len()];
        for (b, (gw, dcol)) in blocks.iter().enumerate() {
            axpy(&mut gw_rows, 1.0, gw);
            let start = b * BLOCK;
            for r in 0..dcol.len() / width {
                for k in 0..t {
                    if let Some(i) = self.source(x.dims, odims, start + r, k) {
                        axpy(&mut dx_cl[i * cin..(i + 1) * cin], 1.0, &dcol[r * width + k * cin..r * width + (k + 1) * cin]);
                    }
                }
            }
        }
        for co in 0..cout {
            for ci in 0..cin {
                for k in 0..t {
                    grad.weight[(co * cin + ci) * t + k] += gw_rows[(co * t + k) * cin + ci];
                }
            }
            grad.bias[co] += dy.data[co * n_out..(co + 1) * n_out].iter().sum::<f64>();
        }
        channels_first(&dx_cl, cin, x.dims)
    }
}

/// 2³ stride-2 transposed convolution to an explicit output size, weight
/// layout `(in, out, kx, ky, kz)`. Each output cell `o` receives input cell
/// `⌊o/2⌋` through kernel tap `o mod 2`; cells past `target` are cropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposedConv {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TransposedConv {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![0.0; cin * cout * 8],
            bias: vec![0.0; cout],
        }
    }

    pub fn init(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(cin, cout);
        let bound = 1.0 / (cin as f64).sqrt();
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    fn check(&self, x: &Volume, target: [usize; 3]) -> Result<()> {
        if x.channels != self.cin {
            return Err(shape_err("transposed conv", format!("expected {} channels, got {}", self.cin, x.channels)));
        }
        if target.map(|d| d.div_ceil(2)) != x.dims {
            return Err(shape_err("transposed conv", format!("cannot upsample {:?} to {target:?}", x.dims)));
        }
        Ok(())
    }

    /// Weights per tap as `(tap, in, out)`.
    fn tap_weights(&self) -> Vec<f64> {
        let (cin, cout) = (self.cin, self.cout);
        let mut w = vec![0.0; self.weight.len()];
        for ci in 0..cin {
            for co in 0..cout {
                for t in 0..8 {
                    w[(t * cin + ci) * cout + co] = self.weight[(ci * cout + co) * 8 + t];
                }
            }
        }
        w
    }

    /// `(input cell, tap, output cell)` for every output cell inside `target`.
    fn links(in_dims: [usize; 3], target: [usize; 3]) -> Vec<(usize, usize, usize)> {
        let mut links = Vec::with_capacity(target.iter().product());
        for ox in 0..target[0] {
            for oy in 0..target[1] {
                for oz in 0..target[2] {
                    let i = ((ox / 2) * in_dims[1] + oy / 2) * in_dims[2] + oz / 2;
                    let t = (ox % 2) * 4 + (oy % 2) * 2 + oz % 2;
                    links.push((i, t, (ox * target[1] + oy) * target[2] + oz));
                }
            }
        }
        links
    }

    pub fn forward(&self, x: &Volume, target: [usize; 3]) -> Result<Volume> {
        self.check(x, target)?;
        let (cin, cout) = (self.cin, self.cout);
        let x_cl = channels_last(x);
        let w = self.tap_weights();
        let links = Self::links(x.dims, target);
        let mut out_cl = vec![0.0; links.len() * cout];
        out_cl.par_chunks_mut(cout).zip(&links).for_each(|(y, &(i, t, _))| {
            y.copy_from_slice(&self.bias);
            for ci in 0..cin {
                axpy(y, x_cl[i * cin + ci], &w[(t * cin + ci) * cout..(t * cin + ci + 1) * cout]);
            }
        });
        Ok(channels_first(&out_cl, cout, target))
    }

    pub fn backward(&self, x: &Volume, dy: &Volume, grad: &mut TransposedConv) -> Volume {
        let (cin, cout) = (self.cin, self.cout);
        let x_cl = channels_last(x);
        let dy_cl = channels_last(dy);
        let w = self.tap_weights();
        let links = Self::links(x.dims, dy.dims);
        let mut dx_cl = vec![0.0; x_cl.len()];
        let mut gw = vec![0.0; w.len()];
        for &(i, t, o) in &links {
            let g = &dy_cl[o * cout..(o + 1) * cout];
            for ci in 0..cin {
                let row = (t * cin + ci) * cout;
                dx_cl[i * cin + ci] += dot(&w[row..row + cout], g);
                axpy(&mut gw[row..row + cout], x_cl[i * cin + ci], g);
            }
        }
        for ci in 0..cin {
            for co in 0..cout {
                for t in 0..8 {
                    grad.weight[(ci * cout + co) * 8 + t] += gw[(t * cin + ci) * cout + co];
                }
            }
        }
        let osz = dy.spatial();
        for co in 0..cout {
            grad.bias[co] += dy.data[co * osz..(co + 1) * osz].iter().sum::<f64>();
        }
        channels_first(&dx_cl, cin, x.dims)
    }
}

/// 2× average pooling; odd trailing cells form partial windows averaged over
/// the cells they contain.
pub fn avg_pool2(x: &Volume) -> Volume {
    let odims = x.dims.map(|d| d.div_ceil(2));
    let mut out = Volume::zeros(x.channels, odims);
    let mut count = Volume::zeros(1, odims);
    for c in 0..x.channels {
        for ix in 0..x.dims[0] {
            for iy in 0..x.dims[1] {
                for iz in 0..x.dims[2] {
                    let o = out.index(c, ix / 2, iy / 2, iz / 2);
                    out.data[o] += x.get(c, ix, iy, iz);
                    if c == 0 {
                        let k = count.index(0, ix / 2, iy / 2, iz / 2);
                        count.data[k] += 1.0;
                    }
                }
            }
        }
    }
    let n = count.data.len();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v /= count.data[i % n];
    }
    out
}

/// Adjoint of [`avg_pool2`] for an input of size `dims`.
pub fn avg_pool2_backward(dy: &Volume, dims: [usize; 3]) -> Volume {
    let window = |o: usize, d: usize| (2 * o + 2).min(d) - 2 * o;
    let mut dx = Volume::zeros(dy.channels, dims);
    for c in 0..dy.channels {
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let (ox, oy, oz) = (ix / 2, iy / 2, iz / 2);
                    let n = window(ox, dims[0]) * window(oy, dims[1]) * window(oz, dims[2]);
                    let i = dx.index(c, ix, iy, iz);
                    dx.data[i] = dy.get(c, ox, oy, oz) / n as f64;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(c: usize, dims: [usize; 3], rng: &mut ChaCha8Rng) -> Volume {
        let n = c * dims.iter().product::<usize>();
        Volume::from_vec(c, dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn widx(l: &Conv3d, co: usize, ci: usize, kx: usize, ky: usize, kz: usize) -> usize {
        (((co * l.cin + ci) * l.kernel + kx) * l.kernel + ky) * l.kernel + kz
    }

    fn naive_conv(layer: &Conv3d, x: &Volume) -> Volume {
        let od = layer.out_dims(x.dims);
        let mut out = Volume::zeros(layer.cout, od);
        for co in 0..layer.cout {
            for ox in 0..od[0] {
                for oy in 0..od[1] {
                    for oz in 0..od[2] {
                        let mut acc = layer.bias[co];
                        for ci in 0..layer.cin {
                            for kx in 0..layer.kernel {
                                for ky in 0..layer.kernel {
                                    for kz in 0..layer.kernel {
                                        let ix = (ox * layer.stride + kx) as isize - layer.pad as isize;
                                        let iy = (oy * layer.stride + ky) as isize - layer.pad as isize;
                                        let iz = (oz * layer.stride + kz) as isize - layer.pad as isize;
                                        if ix < 0 || iy < 0 || iz < 0 {
                                            continue;
                                        }
                                        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                                        if ix >= x.dims[0] || iy >= x.dims[1] || iz >= x.dims[2] {
                                            continue;
                                        }
                                        acc += layer.weight[widx(layer, co, ci, kx, ky, kz)] * x.get(ci, ix, iy, iz);
                                    }
                                }
                            }
                        }
                        let i = out.index(co, ox, oy, oz);
                        out.data[i] = acc;
                    }
                }
            }
        }
        out
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, dims) in [(1, [5, 4, 3]), (2, [5, 4, 3]), (2, [6, 7, 2])] {
            let layer = Conv3d::init(2, 3, 3, stride, 1, &mut rng);
            let x = random_volume(2, dims, &mut rng);
            let fast = layer.forward(&x).unwrap();
            let slow = naive_conv(&layer, &x);
            assert_eq!(fast.dims, slow.dims);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_output_is_ceil_half() {
        let layer = Conv3d::zeros(1, 1, 3, 2, 1);
        assert_eq!(layer.out_dims([48, 20, 7]), [24, 10, 4]);
    }

    // <dy, conv(x)> is linear in x and in w; the backward pass must be its
    // exact adjoint.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let mut layer = Conv3d::init(2, 3, 3, stride, 1, &mut rng);
            layer.bias.fill(0.0);
            let x = random_volume(2, [5, 6, 3], &mut rng);
            let y = layer.forward(&x).unwrap();
            let dy = random_volume(3, y.dims, &mut rng);
            let mut grad = Conv3d::zeros(2, 3, 3, stride, 1);
            let dx = layer.backward(&x, &dy, &mut grad);
            let lhs = dot(&dy.data, &y.data);
            assert!((lhs - dot(&dx.data, &x.data)).abs() < 1e-10);
            assert!((lhs - dot(&grad.weight, &layer.weight)).abs() < 1e-10);
            let total: f64 = dy.data.iter().sum();
            assert!((grad.bias.iter().sum::<f64>() - total).abs() < 1e-10);
        }
    }

    #[test]
    fn transposed_conv_matches_scatter_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = TransposedConv::init(2, 3, &mut rng);
        let x = random_volume(2, [3, 2, 2], &mut rng);
        let target = [5, 4, 3];
        let y = layer.forward(&x, target).unwrap();
        let mut expect = Volume::zeros(3, target);
        let n = expect.spatial();
        for co in 0..3 {
            expect.data[co * n..(co + 1) * n].fill(layer.bias[co]);
        }
        for ci in 0..2 {
            for co in 0..3 {
                for ix in 0..3 {
                    for iy in 0..2 {
                        for iz in 0..2 {
                            for t in 0..8 {
                                let (ox, oy, oz) = (2 * ix + t / 4, 2 * iy + (t / 2) % 2, 2 * iz + t % 2);
                                if ox < 5 && oy < 4 && oz < 3 {
                                    let o = expect.index(co, ox, oy, oz);
                                    expect.data[o] += layer.weight[(ci * 3 + co) * 8 + t] * x.get(ci, ix, iy, iz);
                                }
                            }
                        }
                    }
                }
            }
        }
        for (a, b) in y.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(layer.forward(&x, [6, 4, 5]).is_err());
    }

    #[test]
    fn transposed_conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = TransposedConv::init(2, 3, &mut rng);
        layer.bias.fill(0.0);
        let x = random_volume(2, [3, 2, 2], &mut rng);
        let y = layer.forward(&x, [5, 3, 4]).unwrap();
        let dy = random_volume(3, y.dims, &mut rng);
        let mut grad = TransposedConv::zeros(2, 3);
        let dx = layer.backward(&x, &dy, &mut grad);
        let lhs = dot(&dy.data, &y.data);
        assert!((lhs - dot(&dx.data, &x.data)).abs() < 1e-10);
        assert!((lhs - dot(&grad.weight, &layer.weight)).abs() < 1e-10);
    }

    #[test]
    fn avg_pool_partial_windows() {
        let x = Volume::from_vec(1, [3, 1, 1], vec![1.0, 3.0, 5.0]).unwrap();
        let y = avg_pool2(&x);
        assert_eq!(y.data, vec![2.0, 5.0]);
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_volume(2, [5, 4, 3], &mut rng);
        let y = avg_pool2(&x);
        let dy = random_volume(2, y.dims, &mut rng);
        let dx = avg_pool2_backward(&dy, x.dims);
        assert!((dot(&dy.data, &y.data) - dot(&dx.data, &x.data)).abs() < 1e-12);
    }
}
