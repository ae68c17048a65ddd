//! Mean angle error at fixed horizons.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::s;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::motion::{zero_velocity_predict, Dataset, MotionSequence, SampleWindow};
use crate::pipeline::WindowCodec;
use crate::refine::CascadeModel;

/// Horizons reported for short-term prediction, in milliseconds.
pub const SHORT_TERM_MS: [u32; 4] = [80, 160, 320, 400];

/// Windows evaluated per forward pass.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaeMode {
    /// Euclidean norm of the full-frame angle difference.
    #[default]
    FullFrame,
    /// Mean over joints of each joint's 3-vector difference norm.
    JointMean,
}

/// `round(ms · fps / 1000) − 1`: the 0-based future frame of a horizon.
pub fn horizon_index(ms: u32, frame_rate: f64) -> Result<usize> {
    let frames = (ms as f64 * frame_rate / 1000.0).round();
    if frames < 1.0 {
        return Err(Error::Argument(format!(
            "horizon {ms} ms is shorter than one frame at {frame_rate} fps"
        )));
    }
    Ok(frames as usize - 1)
}

fn frame_error(pred: &MotionSequence, truth: &MotionSequence, t: usize, mode: MaeMode) -> f64 {
    let diff = &pred.values().row(t) - &truth.values().row(t);
    match mode {
        MaeMode::FullFrame => diff.iter().map(|v| v * v).sum::<f64>().sqrt(),
        MaeMode::JointMean => {
            let joints = diff.len() / 3;
            (0..joints)
                .map(|j| {
                    diff.slice(s![3 * j..3 * j + 3])
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / joints as f64
        }
    }
}

/// Mean over samples of the full-frame error norm at future frame `t`.
pub fn mae_at_frame(preds: &[MotionSequence], truths: &[MotionSequence], t: usize) -> Result<f64> {
    mae_at_frame_with(preds, truths, t, MaeMode::FullFrame)
}

pub fn mae_at_frame_with(
    preds: &[MotionSequence],
    truths: &[MotionSequence],
    t: usize,
    mode: MaeMode,
) -> Result<f64> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Argument(format!(
            "need equal non-empty prediction and truth lists, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(truths) {
        if t >= p.frames() || t >= g.frames() {
            return Err(Error::Argument(format!(
                "frame {t} out of range for {} predicted / {} true frames",
                p.frames(),
                g.frames()
            )));
        }
        if p.channels() != g.channels() {
            return Err(Error::Shape {
                op: "mae",
                left: p.values().dim(),
                right: g.values().dim(),
            });
        }
        total += frame_error(p, g, t, mode);
    }
    Ok(total / preds.len() as f64)
}

/// MAE per action and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeTable {
    pub actions: Vec<String>,
    pub horizons_ms: Vec<u32>,
    /// `values[action][horizon]`.
    pub values: Vec<Vec<f64>>,
}

impl MaeTable {
    /// Unweighted mean over actions, per horizon.
    pub fn average(&self) -> Vec<f64> {
        (0..self.horizons_ms.len())
            .map(|h| self.values.iter().map(|row| row[h]).sum::<f64>() / self.values.len() as f64)
            .collect()
    }

    /// Mean of [`MaeTable::average`] over horizons.
    pub fn overall(&self) -> f64 {
        let avg = self.average();
        avg.iter().sum::<f64>() / avg.len() as f64
    }

    pub fn get(&self, action: &str, horizon_ms: u32) -> Option<f64> {
        let a = self.actions.iter().position(|x| x == action)?;
        let h = self.horizons_ms.iter().position(|&x| x == horizon_ms)?;
        Some(self.values[a][h])
    }

    /// `action,horizon_ms,mae`, one row per cell in action-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("action,horizon_ms,mae\n");
        for (action, row) in self.actions.iter().zip(&self.values) {
            for (h, v) in self.horizons_ms.iter().zip(row) {
                let _ = writeln!(out, "{action},{h},{v}");
            }
        }
        out
    }
}

pub fn export_csv(table: &MaeTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_csv()).map_err(|e| Error::io(path, e))
}

/// Refined, coarse-only and zero-velocity errors on the same windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub refined: MaeTable,
    pub coarse: MaeTable,
    pub zero_velocity: MaeTable,
}

/// Future frames predicted by the coarse predictor and by the last stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPredictions {
    pub coarse: Vec<MotionSequence>,
    pub refined: Vec<MotionSequence>,
}

/// Eval-mode cascade over `windows` (no dropout, no error bias); returns the
/// decoded future frames of each window.
pub fn predict_windows(model: &CascadeModel, codec: &WindowCodec, windows: &[&SampleWindow]) -> Result<WindowPredictions> {
    let mut coarse = Vec::with_capacity(windows.len());
    let mut refined = Vec::with_capacity(windows.len());
    let Some(first) = windows.first() else {
        return Ok(WindowPredictions { coarse, refined });
    };
    let k = first.history().channels();
    let rate = first.history().frame_rate();
    if k != model.config().nodes || codec.retained() != model.config().coeffs {
        return Err(Error::Shape {
            op: "model vs data",
            left: (model.config().nodes, model.config().coeffs),
            right: (k, codec.retained()),
        });
    }
    for chunk in windows.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let h = tape.constant(codec.stack_histories(chunk)?);
        let out = model.forward(&mut tape, &bound, h, None, None)?;
        for (var, sink) in [(out.coarse, &mut coarse), (out.last(), &mut refined)] {
            for seq in codec.decode_stacked(tape.data(var), k, rate)? {
                sink.push(seq.slice_frames(codec.history(), codec.frames())?);
            }
        }
    }
    Ok(WindowPredictions { coarse, refined })
}

fn table(
    ds: &Dataset,
    preds: &[MotionSequence],
    horizons: &[(u32, usize)],
    mode: MaeMode,
) -> Result<MaeTable> {
    let mut actions = Vec::new();
    let mut values = Vec::new();
    for (id, name) in ds.actions().iter().enumerate() {
        let idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.windows()[i].action_id as usize == id)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let p: Vec<MotionSequence> = idx.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<MotionSequence> = idx.iter().map(|&i| ds.windows()[i].future().clone()).collect();
        let row = horizons
            .iter()
            .map(|&(_, t)| mae_at_frame_with(&p, &g, t, mode))
            .collect::<Result<Vec<_>>>()?;
        actions.push(name.clone());
        values.push(row);
    }
    Ok(MaeTable {
        actions,
        horizons_ms: horizons.iter().map(|&(ms, _)| ms).collect(),
        values,
    })
}

/// Resolves horizons against the dataset's frame rate and future length.
pub fn resolve_horizons(horizons_ms: &[u32], frame_rate: f64, future: usize) -> Result<Vec<(u32, usize)>> {
    if horizons_ms.is_empty() {
        return Err(Error::Argument("no horizons requested".into()));
    }
    horizons_ms
        .iter()
        .map(|&ms| {
            let t = horizon_index(ms, frame_rate)?;
            if t >= future {
                return Err(Error::Argument(format!(
                    "horizon {ms} ms maps to future frame {} but only {future} frames are predicted",
                    t + 1
                )));
            }
            Ok((ms, t))
        })
        .collect()
}

pub fn evaluate(
    model: &CascadeModel,
    ds: &Dataset,
    codec: &WindowCodec,
    horizons_ms: &[u32],
    mode: MaeMode,
) -> Result<EvalReport> {
    let horizons = resolve_horizons(horizons_ms, ds.frame_rate(), ds.future_len())?;
    let windows: Vec<&SampleWindow> = ds.windows().iter().collect();
    let preds = predict_windows(model, codec, &windows)?;
    let zv = ds
        .windows()
        .iter()
        .map(|w| zero_velocity_predict(w.history(), ds.future_len()))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        refined: table(ds, &preds.refined, &horizons, mode)?,
        coarse: table(ds, &preds.coarse, &horizons, mode)?,
        zero_velocity: table(ds, &zv, &horizons, mode)?,
    })
}
