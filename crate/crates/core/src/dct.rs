//! Orthonormal DCT-II trajectory encoding.
//!
//! Each channel of an `M`-frame sequence is projected onto the `M` cosine basis
//! vectors; keeping only the first `L` coefficients removes high-frequency
//! content. Coefficients are stored node-major (`channels × L`), the layout the
//! graph networks consume.

use std::f64::consts::PI;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::motion::MotionSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    basis: Array2<f64>,
}

impl DctBasis {
    /// Entry `(k, n) = s_k cos(π (2n + 1) k / 2M)` with `s_0 = √(1/M)`, `s_k = √(2/M)`.
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("DCT length must be at least 1".into()));
        }
        let mf = m as f64;
        let basis = Array2::from_shape_fn((m, m), |(k, n)| {
            let scale = if k == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
            scale * (PI * (2 * n + 1) as f64 * k as f64 / (2.0 * mf)).cos()
        });
        Ok(Self { basis })
    }

    pub fn len(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.basis
    }

    /// First `l` basis rows (`l × M`).
    pub fn truncated(&self, l: usize) -> Array2<f64> {
        self.basis.slice(s![..l, ..]).to_owned()
    }

    /// Max absolute entry of `basisᵀ · basis − I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.basis.t().dot(&self.basis);
        gram.indexed_iter()
            .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// Encodes `x` and keeps the first `l` coefficients of every channel.
    pub fn encode(&self, x: &MotionSequence, l: usize) -> Result<TrajectoryCoefficients> {
        if x.frames() != self.len() {
            return Err(Error::Argument(format!(
                "sequence has {} frames, basis expects {}",
                x.frames(),
                self.len()
            )));
        }
        if l == 0 || l > self.len() {
            return Err(Error::Argument(format!(
                "retained coefficients {l} must lie in 1..={}",
                self.len()
            )));
        }
        let coeffs = x.values().t().dot(&self.basis.slice(s![..l, ..]).t());
        TrajectoryCoefficients::new(coeffs, self.len())
    }

    /// Zero-pads the dropped coefficients and inverts the transform.
    pub fn decode(&self, coeffs: &TrajectoryCoefficients, frame_rate: f64) -> Result<MotionSequence> {
        if coeffs.frames != self.len() {
            return Err(Error::Argument(format!(
                "coefficients describe {} frames, basis has {}",
                coeffs.frames,
                self.len()
            )));
        }
        let l = coeffs.retained();
        let values = self.basis.slice(s![..l, ..]).t().dot(&coeffs.coeffs.t());
        MotionSequence::new(values, frame_rate)
    }
}

/// Per-channel DCT coefficients, `channels × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCoefficients {
    coeffs: Array2<f64>,
    frames: usize,
}

impl TrajectoryCoefficients {
    pub fn new(coeffs: Array2<f64>, frames: usize) -> Result<Self> {
        let l = coeffs.ncols();
        if l == 0 || l > frames {
            return Err(Error::Argument(format!(
                "retained coefficients {l} must lie in 1..={frames}"
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite DCT coefficient".into()));
        }
        Ok(Self { coeffs, frames })
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Array2<f64> {
        self.coeffs
    }

    pub fn channels(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn retained(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Frame count of the encoded sequence.
    pub fn frames(&self) -> usize {
        self.frames
    }
}
