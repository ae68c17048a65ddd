//! Losses, the joint training step and the epoch loop.
//!
//! The objective is `L = L_P + s · L_R`: `L_P` is the mean per-joint distance
//! between the decoded coarse prediction and the ground truth over all
//! `N + T` frames, `L_R` the same distance averaged over every refinement
//! stage, and `s` the number of refinement stages. When adversarial
//! augmentation is on, each step first updates the discriminator and the
//! generator, then adds a freshly generated error to the coarse prediction of
//! the batch before refinement.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::adversarial::{
    adversarial_step, sample_noise, sample_pairing, Adversary, ErrorKind, ErrorSample,
};
use crate::autodiff::{Matrix, NormKind, Tape, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{predict_windows, resolve_horizons, mae_at_frame};
use crate::gcn::{Dropout, TrainRng};
use crate::motion::{Dataset, MotionSequence, SampleWindow};
use crate::optim::{adam_step, AdamState};
use crate::params::Parameters;
use crate::pipeline::WindowCodec;
use crate::refine::CascadeModel;

/// Horizons logged every epoch.
pub const LOG_HORIZONS_MS: [u32; 2] = [80, 400];

/// `L_P`: mean per-joint distance between decoded prediction frames and the
/// ground truth. `pred` and `truth` are `frames × channels` (several samples
/// may be laid side by side).
pub fn prediction_loss(tape: &mut Tape, pred: Var, truth: &Matrix, norm: NormKind) -> Result<Var> {
    tape.mse_norm_loss(pred, truth, 3, norm)
}

/// `L_R`: [`prediction_loss`] averaged over stage outputs.
pub fn refinement_loss(tape: &mut Tape, preds: &[Var], truth: &Matrix, norm: NormKind) -> Result<Var> {
    let (first, rest) = preds
        .split_first()
        .ok_or_else(|| Error::Argument("refinement loss needs at least one stage output".into()))?;
    let mut total = prediction_loss(tape, *first, truth, norm)?;
    for p in rest {
        let l = prediction_loss(tape, *p, truth, norm)?;
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / preds.len() as f64))
}

/// `L = L_P + s · L_R`.
pub fn total_loss(tape: &mut Tape, lp: Var, lr: Option<Var>, s: f64) -> Result<Var> {
    match lr {
        Some(lr) if s != 0.0 => {
            let weighted = tape.scale(lr, s);
            tape.add(lp, weighted)
        }
        _ => Ok(lp),
    }
}

/// Eager per-joint loss between two sequences of equal shape.
pub fn sequence_loss(pred: &MotionSequence, truth: &MotionSequence, norm: NormKind) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.values().clone());
    let l = prediction_loss(&mut tape, p, truth.values(), norm)?;
    Ok(tape.scalar(l))
}

/// Losses of one step (`L_R` absent without stages, adversarial losses
/// absent without augmentation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub l_p: f64,
    pub l_r: Option<f64>,
    pub l: f64,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
}

/// Per-epoch means plus eval MAE at 80 and 400 ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_p: f64,
    pub l_r: Option<f64>,
    pub l: f64,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub eval_mae_80: Option<f64>,
    pub eval_mae_400: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,L_P,L_R,L,loss_d,loss_g,eval_mae_80,eval_mae_400";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.l_p,
            opt(self.l_r),
            self.l,
            opt(self.loss_d),
            opt(self.loss_g),
            opt(self.eval_mae_80),
            opt(self.eval_mae_400)
        )
    }
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in log {
        let _ = writeln!(out, "{}", m.csv_row());
    }
    out
}

/// Everything needed to continue training: models, optimizer states, RNGs
/// and the epoch counter. This is what a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub channels: usize,
    pub model: CascadeModel,
    pub model_opt: AdamState,
    pub adversary: Adversary,
    /// Pairing, shuffling and dropout.
    pub rng: TrainRng,
    /// Generator noise and the dropout of the Subject II pass; separate so
    /// that disabling augmentation leaves the main stream untouched.
    pub noise_rng: TrainRng,
    pub epoch: usize,
}

const MAIN_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

impl Trainer {
    pub fn new(config: TrainConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 || !channels.is_multiple_of(3) {
            return Err(Error::Config(format!(
                "channel count {channels} must be a positive multiple of 3"
            )));
        }
        let model = CascadeModel::init(config.predictor(channels), config.stages, config.stage_input)?;
        let model_opt = AdamState::new(model.params());
        let adversary = Adversary::init(config.adversary(channels));
        let mut rng = TrainRng::seed_from_u64(config.seed);
        rng.set_stream(MAIN_STREAM);
        let mut noise_rng = TrainRng::seed_from_u64(config.seed);
        noise_rng.set_stream(NOISE_STREAM);
        Ok(Self {
            config,
            channels,
            model,
            model_opt,
            adversary,
            rng,
            noise_rng,
            epoch: 0,
        })
    }

    pub fn codec(&self) -> Result<WindowCodec> {
        WindowCodec::new(self.config.history, self.config.future, self.config.retained())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.channels() != self.channels
            || ds.history_len() != self.config.history
            || ds.future_len() != self.config.future
        {
            return Err(Error::Data(format!(
                "dataset has (N={}, T={}, C={}), model expects (N={}, T={}, C={})",
                ds.history_len(),
                ds.future_len(),
                ds.channels(),
                self.config.history,
                self.config.future,
                self.channels
            )));
        }
        Ok(())
    }

    fn augmenting(&self) -> bool {
        self.config.adversarial
    }

    /// One optimization step on paired batches. `batch_ii` only feeds the
    /// real errors of the adversarial game.
    pub fn train_step(
        &mut self,
        codec: &WindowCodec,
        batch_i: &[&SampleWindow],
        batch_ii: &[&SampleWindow],
    ) -> Result<StepMetrics> {
        let s = self.config.refinement_weight();
        let norm = self.config.norm;

        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let history = tape.constant(codec.stack_histories(batch_i)?);
        let coarse = self.model.predictor.forward(
            &mut tape,
            &bound.predictor,
            history,
            Some(Dropout { rng: &mut self.rng }),
        )?;

        let mut adv_losses = None;
        let mut bias = None;
        if self.augmenting() {
            let real_condition = {
                let mut side = Tape::new();
                let vars = crate::params::bind_all(&self.model.predictor, &mut side, false);
                let h = side.constant(codec.stack_histories(batch_ii)?);
                let out = self.model.predictor.forward(
                    &mut side,
                    &vars,
                    h,
                    Some(Dropout { rng: &mut self.noise_rng }),
                )?;
                side.data(out).clone()
            };
            let real = ErrorSample {
                delta: &real_condition - &codec.stack_truth_coeffs(batch_ii)?,
                kind: ErrorKind::Real,
            };
            let fake_condition = tape.data(coarse).clone();
            adv_losses = Some(adversarial_step(
                &mut self.adversary,
                &real,
                &real_condition,
                &fake_condition,
                &mut self.noise_rng,
                &self.config.adam(),
            )?);

            let g = &self.adversary.generator;
            let noise = sample_noise(batch_i.len(), g.config.noise_dim, &mut self.noise_rng);
            let mut side = Tape::new();
            let gv = crate::params::bind_all(g, &mut side, false);
            let c = side.constant(fake_condition);
            let z = side.constant(noise);
            let fake = g.forward(&mut side, &gv, c, z)?;
            bias = Some(tape.constant(side.data(fake).clone()));
        }

        let mut current = match bias {
            Some(b) => tape.add(coarse, b)?,
            None => coarse,
        };
        let mut refined = Vec::with_capacity(self.model.stages.len());
        for (i, vars) in bound.stages.iter().enumerate() {
            current = self.model.stage_forward(
                &mut tape,
                i,
                vars,
                current,
                history,
                Some(Dropout { rng: &mut self.rng }),
            )?;
            refined.push(current);
        }

        let truth = codec.stack_truth_frames(batch_i)?;
        let decoder = tape.constant(codec.decoder().clone());
        let decode = |tape: &mut Tape, v: Var| -> Result<Var> {
            let frames = tape.matmul(v, decoder)?;
            Ok(tape.transpose(frames))
        };
        let coarse_frames = decode(&mut tape, coarse)?;
        let lp = prediction_loss(&mut tape, coarse_frames, &truth, norm)?;
        let lr = if refined.is_empty() {
            None
        } else {
            let frames = refined
                .iter()
                .map(|v| decode(&mut tape, *v))
                .collect::<Result<Vec<_>>>()?;
            Some(refinement_loss(&mut tape, &frames, &truth, norm)?)
        };
        let total = total_loss(&mut tape, lp, lr, s)?;
        let l = tape.scalar(total);
        if !l.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {}",
                self.epoch + 1
            )));
        }
        tape.backward(total)?;
        let grads: Vec<Matrix> = bound.all().iter().map(|v| tape.grad(*v)).collect();
        adam_step(self.model.params_mut(), &grads, &mut self.model_opt, &self.config.adam())?;

        Ok(StepMetrics {
            l_p: tape.scalar(lp),
            l_r: lr.map(|v| tape.scalar(v)),
            l,
            loss_d: adv_losses.map(|a| a.loss_d),
            loss_g: adv_losses.map(|a| a.loss_g),
        })
    }

    /// One pass over the Subject I windows of a freshly sampled pairing.
    /// Without augmentation the pairing still drives batch order, so the
    /// two modes see identical batches.
    pub fn run_epoch(&mut self, ds: &Dataset, eval: Option<&Dataset>) -> Result<EpochMetrics> {
        self.check_dataset(ds)?;
        let codec = self.codec()?;
        let (order_i, order_ii) = if ds.subject_ids().len() >= 2 {
            let p = sample_pairing(ds, &mut self.rng)?;
            (p.batch_i, p.batch_ii)
        } else if self.augmenting() {
            return Err(Error::Config(
                "adversarial augmentation needs at least 2 subjects".into(),
            ));
        } else {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            all.shuffle(&mut self.rng);
            (all.clone(), all)
        };

        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        let mut last = None;
        for (ci, cii) in order_i
            .chunks(self.config.batch_size)
            .zip(order_ii.chunks(self.config.batch_size))
        {
            let bi: Vec<&SampleWindow> = ci.iter().map(|&i| &ds.windows()[i]).collect();
            let bii: Vec<&SampleWindow> = cii.iter().map(|&i| &ds.windows()[i]).collect();
            let m = self.train_step(&codec, &bi, &bii)?;
            sums[0] += m.l_p;
            sums[1] += m.l_r.unwrap_or(0.0);
            sums[2] += m.l;
            sums[3] += m.loss_d.unwrap_or(0.0);
            sums[4] += m.loss_g.unwrap_or(0.0);
            steps += 1;
            last = Some(m);
        }
        self.epoch += 1;
        let n = steps.max(1) as f64;
        let last = last.ok_or_else(|| Error::Data("epoch had no batches".into()))?;
        let (eval_mae_80, eval_mae_400) = self.log_mae(eval.unwrap_or(ds), &codec)?;
        Ok(EpochMetrics {
            epoch: self.epoch,
            l_p: sums[0] / n,
            l_r: last.l_r.map(|_| sums[1] / n),
            l: sums[2] / n,
            loss_d: last.loss_d.map(|_| sums[3] / n),
            loss_g: last.loss_g.map(|_| sums[4] / n),
            eval_mae_80,
            eval_mae_400,
        })
    }

    fn log_mae(&self, ds: &Dataset, codec: &WindowCodec) -> Result<(Option<f64>, Option<f64>)> {
        let windows: Vec<&SampleWindow> = ds.windows().iter().collect();
        let preds = predict_windows(&self.model, codec, &windows)?;
        let truths: Vec<MotionSequence> = windows.iter().map(|w| w.future().clone()).collect();
        let mut out = [None, None];
        for (slot, ms) in out.iter_mut().zip(LOG_HORIZONS_MS) {
            if let Ok(h) = resolve_horizons(&[ms], ds.frame_rate(), ds.future_len()) {
                *slot = Some(mae_at_frame(&preds.refined, &truths, h[0].1)?);
            }
        }
        Ok((out[0], out[1]))
    }
}

/// Where and how often [`train_loop`] writes its outputs.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
}

/// Trains until `trainer.config.epochs` epochs have run in total.
/// The metrics log is rewritten after every epoch; with `checkpoint_every = k`
/// a checkpoint is written every `k` epochs, and always at the end.
pub fn train_loop_with(
    trainer: &mut Trainer,
    ds: &Dataset,
    eval: Option<&Dataset>,
    outputs: &TrainOutputs,
) -> Result<Vec<EpochMetrics>> {
    let mut log = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let m = trainer.run_epoch(ds, eval)?;
        log.push(m);
        if let Some(path) = &outputs.metrics_log {
            write_text(path, &metrics_csv(&log))?;
        }
        let every = trainer.config.checkpoint_every;
        if let Some(path) = &outputs.checkpoint {
            if every > 0 && trainer.epoch.is_multiple_of(every) {
                crate::checkpoint::save(trainer, path)?;
            }
        }
    }
    if let Some(path) = &outputs.checkpoint {
        crate::checkpoint::save(trainer, path)?;
    }
    Ok(log)
}

/// Fresh trainer for `ds`, trained for `config.epochs` epochs.
pub fn train_loop(ds: &Dataset, config: TrainConfig) -> Result<(Trainer, Vec<EpochMetrics>)> {
    let mut trainer = Trainer::new(config, ds.channels())?;
    trainer.check_dataset(ds)?;
    let log = train_loop_with(&mut trainer, ds, None, &TrainOutputs::default())?;
    Ok((trainer, log))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
