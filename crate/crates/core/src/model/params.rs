use super::dense::{Conv3d, TransposedConv};
use super::sparse::SparseConv;

/// Named, shaped view of one parameter array.
#[derive(Debug, Clone, Copy)]
pub struct ParamView<'a> {
    pub shape: [usize; 5],
    pub rank: usize,
    pub data: &'a [f64],
}

impl ParamView<'_> {
    pub fn shape(&self) -> &[usize] {
        &self.shape[..self.rank]
    }
}

fn view<'a>(shape: &[usize], data: &'a [f64]) -> ParamView<'a> {
    let mut s = [0; 5];
    s[..shape.len()].copy_from_slice(shape);
    ParamView {
        shape: s,
        rank: shape.len(),
        data,
    }
}

/// Uniform access to a network's parameter arrays in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<(String, ParamView<'_>)>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.data.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn push_sparse<'a>(out: &mut Vec<(String, ParamView<'a>)>, name: &str, l: &'a SparseConv) {
    let k = SparseConv::offsets(l.kind);
    out.push((format!("{name}.weight"), view(&[k, l.cin, l.cout], &l.weight)));
    out.push((format!("{name}.bias"), view(&[l.cout], &l.bias)));
}

pub(crate) fn push_conv<'a>(out: &mut Vec<(String, ParamView<'a>)>, name: &str, l: &'a Conv3d) {
    let k = l.kernel;
    out.push((format!("{name}.weight"), view(&[l.cout, l.cin, k, k, k], &l.weight)));
    out.push((format!("{name}.bias"), view(&[l.cout], &l.bias)));
}

pub(crate) fn push_tconv<'a>(out: &mut Vec<(String, ParamView<'a>)>, name: &str, l: &'a TransposedConv) {
    out.push((format!("{name}.weight"), view(&[l.cin, l.cout, 2, 2, 2], &l.weight)));
    out.push((format!("{name}.bias"), view(&[l.cout], &l.bias)));
}
