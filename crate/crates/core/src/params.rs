//! Parameter traversal shared by every learnable component.

use ndarray::Array2;

use crate::autodiff::{Matrix, Tape, Var};

/// A component owning learnable matrices. `params` and `params_mut` must
/// enumerate the same matrices in the same order, and [`Parameters::bind`]
/// must return tape leaves in that order too.
pub trait Parameters {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Overwrites all parameters from `values` (same order and shapes).
    fn load_params(&mut self, values: &[Matrix]) {
        for (dst, src) in self.params_mut().into_iter().zip(values) {
            dst.assign(src);
        }
    }

    fn cloned_params(&self) -> Vec<Matrix> {
        self.params().into_iter().cloned().collect()
    }
}

/// Registers every parameter of `p` as a tape leaf.
pub fn bind_all<P: Parameters + ?Sized>(p: &P, tape: &mut Tape, trainable: bool) -> Vec<Var> {
    p.params()
        .into_iter()
        .map(|m| tape.leaf(m.clone(), trainable))
        .collect()
}

/// Rounds every entry to the nearest `f32`, the precision parameters are stored at.
pub fn snap_to_f32(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v as f32 as f64);
}

/// Order-sensitive FNV-1a hash over the bit patterns of every parameter.
pub fn param_hash<P: Parameters + ?Sized>(p: &P) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in p.params() {
        for dim in [m.nrows(), m.ncols()] {
            h = (h ^ dim as u64).wrapping_mul(0x0100_0000_01b3);
        }
        for v in m.iter() {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}
