//! Cascaded refinement stages on top of the coarse predictor.
//!
//! Each stage is a GCN shaped like the predictor with its own parameters. A
//! stage receives the coarse (or previous stage's) coefficients fused with the
//! history coefficients by elementwise addition, and returns
//! `g(H_P + H_I) + (H_P + H_I)`. In plain-stack mode the history is not fused
//! and a stage sees only the previous output.

use crate::autodiff::{Matrix, Tape, Var};
use crate::dct::TrajectoryCoefficients;
use crate::error::{Error, Result};
use crate::gcn::{CoarsePredictor, Dropout, PredictorConfig, TrainRng};
use crate::params::{bind_all, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStage {
    pub network: CoarsePredictor,
}

impl RefinementStage {
    pub fn init(config: PredictorConfig) -> Result<Self> {
        Ok(Self {
            network: CoarsePredictor::init(config)?,
        })
    }
}

impl Parameters for RefinementStage {
    fn params(&self) -> Vec<&Matrix> {
        self.network.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.network.params_mut()
    }
}

/// Stage input: fused (`H_P + H_I`) or plain (`H_P` only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageInput {
    #[default]
    Fused,
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub predictor: CoarsePredictor,
    pub stages: Vec<RefinementStage>,
    pub stage_input: StageInput,
}

/// Tape leaves of a bound [`CascadeModel`], split by component.
#[derive(Debug, Clone)]
pub struct BoundCascade {
    pub predictor: Vec<Var>,
    pub stages: Vec<Vec<Var>>,
}

impl BoundCascade {
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.predictor.clone();
        for s in &self.stages {
            out.extend_from_slice(s);
        }
        out
    }
}

/// Outputs of one cascade pass.
#[derive(Debug, Clone)]
pub struct CascadeVars {
    pub coarse: Var,
    pub refined: Vec<Var>,
}

impl CascadeVars {
    /// The last stage output, or the coarse output without stages.
    pub fn last(&self) -> Var {
        self.refined.last().copied().unwrap_or(self.coarse)
    }
}

impl CascadeModel {
    /// Predictor seeded with `config.seed`, stage `i` with `config.seed + 1 + i`.
    pub fn init(config: PredictorConfig, stages: usize, stage_input: StageInput) -> Result<Self> {
        let predictor = CoarsePredictor::init(config)?;
        let stages = (0..stages)
            .map(|i| {
                RefinementStage::init(PredictorConfig {
                    seed: config.seed.wrapping_add(1 + i as u64),
                    ..config
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            predictor,
            stages,
            stage_input,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.predictor.config
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundCascade {
        BoundCascade {
            predictor: bind_all(&self.predictor, tape, trainable),
            stages: self
                .stages
                .iter()
                .map(|s| bind_all(s, tape, trainable))
                .collect(),
        }
    }

    /// One refinement stage on bound leaves.
    pub fn stage_forward(
        &self,
        tape: &mut Tape,
        stage: usize,
        vars: &[Var],
        previous: Var,
        history: Var,
        dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        let input = match self.stage_input {
            StageInput::Fused => tape.add(previous, history)?,
            StageInput::Plain => previous,
        };
        self.stages[stage].network.forward(tape, vars, input, dropout)
    }

    /// Coarse prediction followed by every stage. `error_bias`, when given,
    /// is added to the coarse output before the first stage; it is only
    /// meaningful in training.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundCascade,
        history: Var,
        error_bias: Option<Var>,
        mut rng: Option<&mut TrainRng>,
    ) -> Result<CascadeVars> {
        let coarse = self.predictor.forward(
            tape,
            &bound.predictor,
            history,
            rng.as_deref_mut().map(|rng| Dropout { rng }),
        )?;
        let mut current = match error_bias {
            Some(bias) => tape.add(coarse, bias)?,
            None => coarse,
        };
        let mut refined = Vec::with_capacity(self.stages.len());
        for (i, vars) in bound.stages.iter().enumerate() {
            current = self.stage_forward(
                tape,
                i,
                vars,
                current,
                history,
                rng.as_deref_mut().map(|rng| Dropout { rng }),
            )?;
            refined.push(current);
        }
        Ok(CascadeVars { coarse, refined })
    }

    pub fn zero_heads(&mut self) {
        self.predictor.zero_head();
        for s in &mut self.stages {
            s.network.zero_head();
        }
    }
}

impl Parameters for CascadeModel {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.predictor.params();
        for s in &self.stages {
            out.extend(s.params());
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.predictor.params_mut();
        for s in &mut self.stages {
            out.extend(s.params_mut());
        }
        out
    }
}

fn check_same(a: &TrajectoryCoefficients, b: &TrajectoryCoefficients) -> Result<()> {
    if a.coeffs().dim() != b.coeffs().dim() || a.frames() != b.frames() {
        return Err(Error::Shape {
            op: "refinement fusion",
            left: a.coeffs().dim(),
            right: b.coeffs().dim(),
        });
    }
    Ok(())
}

/// `H_R = f_r(H_P + H_I)` for one stage and one sample.
pub fn refine_forward(
    stage: &RefinementStage,
    h_p: &TrajectoryCoefficients,
    h_i: &TrajectoryCoefficients,
    dropout: Option<Dropout<'_>>,
) -> Result<TrajectoryCoefficients> {
    check_same(h_p, h_i)?;
    let fused = h_p.coeffs() + h_i.coeffs();
    let out = stage.network.predict(&fused, dropout)?;
    TrajectoryCoefficients::new(out, h_i.frames())
}

/// Result of [`cascade_forward`]: the coarse prediction and every stage output.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    pub coarse: TrajectoryCoefficients,
    pub refined: Vec<TrajectoryCoefficients>,
}

impl CascadeOutput {
    pub fn last(&self) -> &TrajectoryCoefficients {
        self.refined.last().unwrap_or(&self.coarse)
    }
}

/// Single-sample cascade. Passing `train_rng` selects training mode (dropout
/// on); an error bias is only accepted in training mode.
pub fn cascade_forward(
    m: &CascadeModel,
    h_i: &TrajectoryCoefficients,
    error_bias: Option<&Matrix>,
    train_rng: Option<&mut TrainRng>,
) -> Result<CascadeOutput> {
    if error_bias.is_some() && train_rng.is_none() {
        return Err(Error::Contract(
            "an error bias may only be injected in training mode".into(),
        ));
    }
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, false);
    let history = tape.constant(h_i.coeffs().clone());
    let bias = error_bias.map(|b| tape.constant(b.clone()));
    let out = m.forward(&mut tape, &bound, history, bias, train_rng)?;
    let wrap = |v: Var| TrajectoryCoefficients::new(tape.data(v).clone(), h_i.frames());
    Ok(CascadeOutput {
        coarse: wrap(out.coarse)?,
        refined: out.refined.iter().map(|v| wrap(*v)).collect::<Result<_>>()?,
    })
}
