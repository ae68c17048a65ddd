//! Conversion between sample windows and the stacked coefficient matrices the
//! networks consume.
//!
//! A batch of `B` windows with `K` channels becomes a `(B·K) × L` matrix of
//! history coefficients (one `K × L` block per window, history padded with its
//! last frame to `N + T` frames). Ground truth is kept both as coefficients and
//! as a `(N + T) × (B·K)` frame matrix, the layout of the per-joint loss.

use ndarray::{s, Array2};

use crate::autodiff::Matrix;
use crate::dct::{DctBasis, TrajectoryCoefficients};
use crate::error::{Error, Result};
use crate::motion::{pad_with_last_frame, MotionSequence, SampleWindow};

#[derive(Debug, Clone, PartialEq)]
pub struct WindowCodec {
    basis: DctBasis,
    history: usize,
    future: usize,
    retained: usize,
    /// First `retained` basis rows, `L × (N + T)`.
    decoder: Matrix,
}

impl WindowCodec {
    pub fn new(history: usize, future: usize, retained: usize) -> Result<Self> {
        let basis = DctBasis::new(history + future)?;
        if retained == 0 || retained > basis.len() {
            return Err(Error::Config(format!(
                "retained coefficients {retained} must lie in 1..={}",
                basis.len()
            )));
        }
        let decoder = basis.truncated(retained);
        Ok(Self {
            basis,
            history,
            future,
            retained,
            decoder,
        })
    }

    pub fn basis(&self) -> &DctBasis {
        &self.basis
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn future(&self) -> usize {
        self.future
    }

    pub fn frames(&self) -> usize {
        self.history + self.future
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    /// `L × (N + T)`; right-multiplying node-major coefficients by it decodes them.
    pub fn decoder(&self) -> &Matrix {
        &self.decoder
    }

    /// Coefficients of the history padded to `N + T` frames.
    pub fn encode_history(&self, history: &MotionSequence) -> Result<TrajectoryCoefficients> {
        if history.frames() != self.history {
            return Err(Error::Argument(format!(
                "history has {} frames, model expects {}",
                history.frames(),
                self.history
            )));
        }
        let padded = pad_with_last_frame(history, self.future);
        self.basis.encode(&padded, self.retained)
    }

    fn stack<F>(&self, windows: &[&SampleWindow], rows_per: usize, cols: usize, mut block: F) -> Result<Matrix>
    where
        F: FnMut(&SampleWindow) -> Result<Matrix>,
    {
        let mut out = Array2::zeros((windows.len() * rows_per, cols));
        for (i, w) in windows.iter().enumerate() {
            out.slice_mut(s![i * rows_per..(i + 1) * rows_per, ..])
                .assign(&block(w)?);
        }
        Ok(out)
    }

    /// `(B·K) × L` history coefficients.
    pub fn stack_histories(&self, windows: &[&SampleWindow]) -> Result<Matrix> {
        let k = channels(windows)?;
        self.stack(windows, k, self.retained, |w| {
            Ok(self.encode_history(w.history())?.into_coeffs())
        })
    }

    /// `(B·K) × L` coefficients of the full ground-truth windows.
    pub fn stack_truth_coeffs(&self, windows: &[&SampleWindow]) -> Result<Matrix> {
        let k = channels(windows)?;
        self.stack(windows, k, self.retained, |w| {
            Ok(self.basis.encode(&w.full(), self.retained)?.into_coeffs())
        })
    }

    /// `(N + T) × (B·K)` ground-truth frames, window `b` in columns `b·K..(b+1)·K`.
    pub fn stack_truth_frames(&self, windows: &[&SampleWindow]) -> Result<Matrix> {
        let k = channels(windows)?;
        let mut out = Array2::zeros((self.frames(), windows.len() * k));
        for (i, w) in windows.iter().enumerate() {
            if w.history().frames() != self.history || w.future().frames() != self.future {
                return Err(Error::Argument(format!(
                    "window has N={}, T={}, model expects N={}, T={}",
                    w.history().frames(),
                    w.future().frames(),
                    self.history,
                    self.future
                )));
            }
            out.slice_mut(s![..self.history, i * k..(i + 1) * k])
                .assign(w.history().values());
            out.slice_mut(s![self.history.., i * k..(i + 1) * k])
                .assign(w.future().values());
        }
        Ok(out)
    }

    /// Decodes stacked `(B·K) × L` coefficients into `B` sequences of `N + T` frames.
    pub fn decode_stacked(&self, coeffs: &Matrix, channels: usize, frame_rate: f64) -> Result<Vec<MotionSequence>> {
        if coeffs.ncols() != self.retained || !coeffs.nrows().is_multiple_of(channels) {
            return Err(Error::Shape {
                op: "decode stacked",
                left: coeffs.dim(),
                right: (channels, self.retained),
            });
        }
        (0..coeffs.nrows() / channels)
            .map(|b| {
                let block = coeffs.slice(s![b * channels..(b + 1) * channels, ..]);
                MotionSequence::new(self.decoder.t().dot(&block.t()), frame_rate)
            })
            .collect()
    }
}

fn channels(windows: &[&SampleWindow]) -> Result<usize> {
    windows
        .first()
        .map(|w| w.history().channels())
        .ok_or_else(|| Error::Argument("empty batch".into()))
}
