//! Cross-subject adversarial error augmentation.
//!
//! Each epoch one subject ("Subject II") is held aside. Its coarse-prediction
//! errors in coefficient space are the real samples; a conditional generator
//! turns the coarse predictions of the remaining subjects ("Subject I") plus
//! Gaussian noise into fake errors, and a discriminator scores
//! (error, condition) pairs. The generated errors are added to the Subject I
//! coarse predictions before refinement, during training only.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::autodiff::{Matrix, Tape, Var};
use crate::dct::{DctBasis, TrajectoryCoefficients};
use crate::error::{Error, Result};
use crate::gcn::TrainRng;
use crate::motion::{Dataset, MotionSequence};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{bind_all, snap_to_f32, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Real,
    Generated,
}

/// A coefficient-space perturbation; `delta` stacks one `nodes × L` block per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub delta: Matrix,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialConfig {
    pub nodes: usize,
    pub coeffs: usize,
    pub noise_dim: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    /// Output scale of the generator.
    pub gamma: f64,
    /// Whether the discriminator also sees the coarse prediction.
    pub conditional: bool,
    pub seed: u64,
}

impl AdversarialConfig {
    pub fn new(nodes: usize, coeffs: usize) -> Self {
        Self {
            nodes,
            coeffs,
            noise_dim: 16,
            gen_hidden: 64,
            disc_hidden: 64,
            gamma: 0.1,
            conditional: true,
            seed: 0,
        }
    }

    fn flat(&self) -> usize {
        self.nodes * self.coeffs
    }
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut TrainRng) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
    snap_to_f32(&mut m);
    m
}

/// Two-layer perceptron over `[flattened condition ‖ noise]`, tanh hidden
/// layer, linear output scaled by `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGenerator {
    pub config: AdversarialConfig,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ErrorGenerator {
    pub fn init(config: AdversarialConfig) -> Self {
        let mut rng = TrainRng::seed_from_u64(config.seed);
        let input = config.flat() + config.noise_dim;
        Self {
            config,
            w1: uniform(input, config.gen_hidden, input, &mut rng),
            b1: Matrix::zeros((1, config.gen_hidden)),
            w2: uniform(config.gen_hidden, config.flat(), config.gen_hidden, &mut rng),
            b2: Matrix::zeros((1, config.flat())),
        }
    }

    pub fn zero_head(&mut self) {
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }

    /// `condition` stacks `B` samples of `nodes × L`; `noise` is `B × Z`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], condition: Var, noise: Var) -> Result<Var> {
        let c = &self.config;
        let (rows, cols) = tape.shape(condition);
        if cols != c.coeffs || rows == 0 || rows % c.nodes != 0 {
            return Err(Error::Shape {
                op: "generator condition",
                left: (rows, cols),
                right: (c.nodes, c.coeffs),
            });
        }
        let batch = rows / c.nodes;
        if tape.shape(noise) != (batch, c.noise_dim) {
            return Err(Error::Shape {
                op: "generator noise",
                left: tape.shape(noise),
                right: (batch, c.noise_dim),
            });
        }
        let flat = tape.reshape(condition, batch, c.flat())?;
        let x = tape.concat_cols(flat, noise)?;
        let h = tape.matmul(x, vars[0])?;
        let h = tape.add_bias(h, vars[1])?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, vars[2])?;
        let o = tape.add_bias(o, vars[3])?;
        let o = tape.scale(o, c.gamma);
        tape.reshape(o, rows, c.coeffs)
    }
}

impl Parameters for ErrorGenerator {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Two-layer perceptron over `[flattened error ‖ flattened condition]` (or the
/// error alone when unconditional), tanh hidden layer, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDiscriminator {
    pub config: AdversarialConfig,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ErrorDiscriminator {
    pub fn init(config: AdversarialConfig) -> Self {
        let mut rng = TrainRng::seed_from_u64(config.seed.wrapping_add(0x5eed));
        let input = if config.conditional {
            2 * config.flat()
        } else {
            config.flat()
        };
        Self {
            config,
            w1: uniform(input, config.disc_hidden, input, &mut rng),
            b1: Matrix::zeros((1, config.disc_hidden)),
            w2: uniform(config.disc_hidden, 1, config.disc_hidden, &mut rng),
            b2: Matrix::zeros((1, 1)),
        }
    }

    /// Zeroes every parameter: the score is then 0.5 for any input.
    pub fn zero_all(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    /// Scores (`B × 1`) for stacked errors and conditions.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], error: Var, condition: Var) -> Result<Var> {
        let c = &self.config;
        let (rows, cols) = tape.shape(error);
        if cols != c.coeffs || rows == 0 || rows % c.nodes != 0 || tape.shape(condition) != (rows, cols) {
            return Err(Error::Shape {
                op: "discriminator input",
                left: (rows, cols),
                right: tape.shape(condition),
            });
        }
        let batch = rows / c.nodes;
        let e = tape.reshape(error, batch, c.flat())?;
        let x = if c.conditional {
            let cond = tape.reshape(condition, batch, c.flat())?;
            tape.concat_cols(e, cond)?
        } else {
            e
        };
        let h = tape.matmul(x, vars[0])?;
        let h = tape.add_bias(h, vars[1])?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, vars[2])?;
        let o = tape.add_bias(o, vars[3])?;
        Ok(tape.sigmoid(o))
    }
}

impl Parameters for ErrorDiscriminator {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// `δ_real = coarse − encode(truth, L)` over all frames of the padded window.
pub fn real_error(
    coarse: &TrajectoryCoefficients,
    truth: &MotionSequence,
    codec: &DctBasis,
) -> Result<ErrorSample> {
    let target = codec.encode(truth, coarse.retained())?;
    if target.coeffs().dim() != coarse.coeffs().dim() {
        return Err(Error::Shape {
            op: "real error",
            left: coarse.coeffs().dim(),
            right: target.coeffs().dim(),
        });
    }
    Ok(ErrorSample {
        delta: coarse.coeffs() - target.coeffs(),
        kind: ErrorKind::Real,
    })
}

/// Standard-normal noise, `rows × noise_dim`.
pub fn sample_noise(rows: usize, noise_dim: usize, rng: &mut TrainRng) -> Matrix {
    Array2::from_shape_fn((rows, noise_dim), |_| rng.sample(StandardNormal))
}

/// Generated error for one conditioning sample.
pub fn generate_error(
    g: &ErrorGenerator,
    condition: &TrajectoryCoefficients,
    noise: &[f64],
) -> Result<ErrorSample> {
    let mut tape = Tape::new();
    let vars = bind_all(g, &mut tape, false);
    let cond = tape.constant(condition.coeffs().clone());
    let z = tape.constant(
        Array2::from_shape_vec((1, noise.len()), noise.to_vec())
            .map_err(|e| Error::Argument(e.to_string()))?,
    );
    let out = g.forward(&mut tape, &vars, cond, z)?;
    Ok(ErrorSample {
        delta: tape.data(out).clone(),
        kind: ErrorKind::Generated,
    })
}

/// Discriminator probability that `e` is a real error for `condition`.
pub fn discriminator_score(
    d: &ErrorDiscriminator,
    e: &ErrorSample,
    condition: &TrajectoryCoefficients,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = bind_all(d, &mut tape, false);
    let err = tape.constant(e.delta.clone());
    let cond = tape.constant(condition.coeffs().clone());
    let s = d.forward(&mut tape, &vars, err, cond)?;
    Ok(tape.scalar(s))
}

/// Discriminator and generator losses from score nodes:
/// `loss_d = −(mean log D(real) + mean log(1 − D(fake)))`,
/// `loss_g = mean log(1 − D(fake))`.
pub fn bce_terms(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let log_real = tape.mean_log(d_real);
    let log_fake = tape.mean_log1m(d_fake);
    let sum = tape.add(log_real, log_fake)?;
    let loss_d = tape.scale(sum, -1.0);
    let loss_g = tape.mean_log1m(d_fake);
    Ok((loss_d, loss_g))
}

/// Per-epoch subject split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pub subject_ii: u32,
    /// Indices of windows from every other subject, shuffled.
    pub batch_i: Vec<usize>,
    /// Indices of Subject II windows, cycled to the length of `batch_i`.
    pub batch_ii: Vec<usize>,
}

pub fn sample_pairing(ds: &Dataset, rng: &mut TrainRng) -> Result<Pairing> {
    let subjects: Vec<u32> = ds.subject_ids().iter().copied().collect();
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "subject pairing needs at least 2 subjects, dataset has {}",
            subjects.len()
        )));
    }
    let subject_ii = subjects[rng.random_range(0..subjects.len())];
    let (mut batch_i, mut pool_ii): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.windows()[i].subject_id != subject_ii);
    batch_i.shuffle(rng);
    pool_ii.shuffle(rng);
    let batch_ii = (0..batch_i.len()).map(|j| pool_ii[j % pool_ii.len()]).collect();
    Ok(Pairing {
        subject_ii,
        batch_i,
        batch_ii,
    })
}

/// The discriminator graph of one adversarial step: generator leaves are
/// bound trainable but their output is detached before scoring.
pub struct DiscriminatorPass {
    pub tape: Tape,
    pub gen_vars: Vec<Var>,
    pub disc_vars: Vec<Var>,
    pub loss_d: Var,
    pub loss_g: Var,
}

pub fn discriminator_pass(
    g: &ErrorGenerator,
    d: &ErrorDiscriminator,
    real: &Matrix,
    real_condition: &Matrix,
    fake_condition: &Matrix,
    noise: &Matrix,
) -> Result<DiscriminatorPass> {
    let mut tape = Tape::new();
    let gen_vars = bind_all(g, &mut tape, true);
    let disc_vars = bind_all(d, &mut tape, true);
    let cond_fake = tape.constant(fake_condition.clone());
    let z = tape.constant(noise.clone());
    let fake = g.forward(&mut tape, &gen_vars, cond_fake, z)?;
    let fake = tape.detach(fake);
    let real = tape.constant(real.clone());
    let cond_real = tape.constant(real_condition.clone());
    let s_real = d.forward(&mut tape, &disc_vars, real, cond_real)?;
    let s_fake = d.forward(&mut tape, &disc_vars, fake, cond_fake)?;
    let (loss_d, loss_g) = bce_terms(&mut tape, s_real, s_fake)?;
    Ok(DiscriminatorPass {
        tape,
        gen_vars,
        disc_vars,
        loss_d,
        loss_g,
    })
}

/// Generator and discriminator with their own optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    pub generator: ErrorGenerator,
    pub discriminator: ErrorDiscriminator,
    pub gen_opt: AdamState,
    pub disc_opt: AdamState,
}

impl Adversary {
    pub fn init(config: AdversarialConfig) -> Self {
        let generator = ErrorGenerator::init(config);
        let discriminator = ErrorDiscriminator::init(config);
        let gen_opt = AdamState::new(generator.params());
        let disc_opt = AdamState::new(discriminator.params());
        Self {
            generator,
            discriminator,
            gen_opt,
            disc_opt,
        }
    }
}

/// Losses evaluated before either update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    pub loss_d: f64,
    pub loss_g: f64,
}

/// One alternating update: the discriminator minimizes `loss_d` against
/// detached generator output, then the generator minimizes `loss_g` through
/// a fresh pass of the updated discriminator with the same noise.
pub fn adversarial_step(
    adv: &mut Adversary,
    real: &ErrorSample,
    real_condition: &Matrix,
    fake_condition: &Matrix,
    rng: &mut TrainRng,
    opt: &AdamConfig,
) -> Result<AdversarialLosses> {
    let nodes = adv.generator.config.nodes;
    let noise_dim = adv.generator.config.noise_dim;
    if real.delta.nrows() == 0 || fake_condition.nrows() == 0 {
        return Err(Error::Argument("adversarial batches must be non-empty".into()));
    }
    let noise = sample_noise(fake_condition.nrows() / nodes, noise_dim, rng);

    let mut pass = discriminator_pass(
        &adv.generator,
        &adv.discriminator,
        &real.delta,
        real_condition,
        fake_condition,
        &noise,
    )?;
    let losses = AdversarialLosses {
        loss_d: pass.tape.scalar(pass.loss_d),
        loss_g: pass.tape.scalar(pass.loss_g),
    };
    pass.tape.backward(pass.loss_d)?;
    let grads: Vec<Matrix> = pass.disc_vars.iter().map(|v| pass.tape.grad(*v)).collect();
    adam_step(adv.discriminator.params_mut(), &grads, &mut adv.disc_opt, opt)?;

    let mut tape = Tape::new();
    let gen_vars = bind_all(&adv.generator, &mut tape, true);
    let disc_vars = bind_all(&adv.discriminator, &mut tape, false);
    let cond = tape.constant(fake_condition.clone());
    let z = tape.constant(noise);
    let fake = adv.generator.forward(&mut tape, &gen_vars, cond, z)?;
    let score = adv.discriminator.forward(&mut tape, &disc_vars, fake, cond)?;
    let loss_g = tape.mean_log1m(score);
    tape.backward(loss_g)?;
    let grads: Vec<Matrix> = gen_vars.iter().map(|v| tape.grad(*v)).collect();
    adam_step(adv.generator.params_mut(), &grads, &mut adv.gen_opt, opt)?;
    Ok(losses)
}
