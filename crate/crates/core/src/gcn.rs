//! Graph-convolutional coarse predictor over DCT coefficients.
//!
//! Nodes are the angle channels and node features are the retained DCT
//! coefficients of each channel's padded trajectory. One layer computes
//! `σ(A · H · W)` with a dense learnable adjacency `A` and weight `W`; the
//! predictor stacks an input layer, residual blocks of two layers, and a linear
//! output layer, and adds its input back (global residual) so an untrained
//! network stays close to the frozen-last-frame prediction.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, Var};
use crate::dct::TrajectoryCoefficients;
use crate::error::{Error, Result};
use crate::params::{bind_all, snap_to_f32, Parameters};

/// RNG used for initialization, dropout masks, shuffling and noise.
pub type TrainRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvLayer {
    pub adjacency: Matrix,
    pub weight: Matrix,
    pub activation: bool,
}

impl GraphConvLayer {
    pub fn new(adjacency: Matrix, weight: Matrix, activation: bool) -> Result<Self> {
        if adjacency.nrows() != adjacency.ncols() {
            return Err(Error::Shape {
                op: "graph conv adjacency",
                left: adjacency.dim(),
                right: (adjacency.nrows(), adjacency.nrows()),
            });
        }
        Ok(Self {
            adjacency,
            weight,
            activation,
        })
    }

    /// `A = I + U(±1/√K)`, `W = U(±1/√d_in)`, both stored at f32 precision.
    pub fn init(nodes: usize, d_in: usize, d_out: usize, activation: bool, rng: &mut TrainRng) -> Self {
        let a_bound = 1.0 / (nodes as f64).sqrt();
        let w_bound = 1.0 / (d_in as f64).sqrt();
        let mut adjacency = Array2::from_shape_fn((nodes, nodes), |(i, j)| {
            let noise = rng.random_range(-a_bound..a_bound);
            if i == j {
                1.0 + noise
            } else {
                noise
            }
        });
        let mut weight = Array2::from_shape_fn((d_in, d_out), |_| rng.random_range(-w_bound..w_bound));
        snap_to_f32(&mut adjacency);
        snap_to_f32(&mut weight);
        Self {
            adjacency,
            weight,
            activation,
        }
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }
}

impl Parameters for GraphConvLayer {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.adjacency, &self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.adjacency, &mut self.weight]
    }
}

/// `σ(A · H · W)` on bound leaves; `h` may stack several samples of
/// `A.rows()` nodes each.
pub fn gc_forward(tape: &mut Tape, adjacency: Var, weight: Var, h: Var, activation: bool) -> Result<Var> {
    let mixed = tape.graph_mix(adjacency, h)?;
    let out = tape.matmul(mixed, weight)?;
    Ok(if activation { tape.tanh(out) } else { out })
}

/// Eager single-sample layer evaluation.
pub fn gc_layer_forward(layer: &GraphConvLayer, h: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = bind_all(layer, &mut tape, false);
    let x = tape.constant(h.clone());
    let y = gc_forward(&mut tape, vars[0], vars[1], x, layer.activation)?;
    Ok(tape.data(y).clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGcBlock {
    pub layer1: GraphConvLayer,
    pub layer2: GraphConvLayer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorConfig {
    /// Graph nodes, one per angle channel.
    pub nodes: usize,
    /// DCT coefficients per node.
    pub coeffs: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.coeffs == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "nodes, coefficients and hidden width must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Dropout source for a training-mode forward pass.
pub struct Dropout<'a> {
    pub rng: &'a mut TrainRng,
}

fn apply_dropout(tape: &mut Tape, x: Var, p: f64, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
    match dropout {
        Some(d) if p > 0.0 => {
            let keep = 1.0 - p;
            let (r, c) = tape.shape(x);
            let mask = Array2::from_shape_fn((r, c), |_| {
                if d.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePredictor {
    pub config: PredictorConfig,
    pub input: GraphConvLayer,
    pub blocks: Vec<ResidualGcBlock>,
    pub output: GraphConvLayer,
}

impl CoarsePredictor {
    pub fn init(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = TrainRng::seed_from_u64(config.seed);
        let PredictorConfig {
            nodes, coeffs, hidden, ..
        } = config;
        let input = GraphConvLayer::init(nodes, coeffs, hidden, true, &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| ResidualGcBlock {
                layer1: GraphConvLayer::init(nodes, hidden, hidden, true, &mut rng),
                layer2: GraphConvLayer::init(nodes, hidden, hidden, true, &mut rng),
            })
            .collect();
        let output = GraphConvLayer::init(nodes, hidden, coeffs, false, &mut rng);
        Ok(Self {
            config,
            input,
            blocks,
            output,
        })
    }

    /// Zeroes the output weight so the network reduces to its global residual.
    pub fn zero_head(&mut self) {
        self.output.weight.fill(0.0);
    }

    fn layers(&self) -> Vec<&GraphConvLayer> {
        let mut out = vec![&self.input];
        for b in &self.blocks {
            out.push(&b.layer1);
            out.push(&b.layer2);
        }
        out.push(&self.output);
        out
    }

    /// Forward pass on bound parameters. `h` stacks samples of
    /// `config.nodes` rows by `config.coeffs` columns. Dropout applies only
    /// when a [`Dropout`] source is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h: Var,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        let (rows, cols) = tape.shape(h);
        if cols != self.config.coeffs || rows == 0 || rows % self.config.nodes != 0 {
            return Err(Error::Shape {
                op: "predictor input",
                left: (rows, cols),
                right: (self.config.nodes, self.config.coeffs),
            });
        }
        let p = self.config.dropout;
        let mut x = gc_forward(tape, vars[0], vars[1], h, true)?;
        x = apply_dropout(tape, x, p, &mut dropout)?;
        for b in 0..self.blocks.len() {
            let base = 2 + 4 * b;
            let mut y = gc_forward(tape, vars[base], vars[base + 1], x, true)?;
            y = apply_dropout(tape, y, p, &mut dropout)?;
            y = gc_forward(tape, vars[base + 2], vars[base + 3], y, true)?;
            y = apply_dropout(tape, y, p, &mut dropout)?;
            x = tape.add(y, x)?;
        }
        let n = vars.len();
        let head = gc_forward(tape, vars[n - 2], vars[n - 1], x, false)?;
        tape.add(head, h)
    }

    /// Eager evaluation on one sample.
    pub fn predict(&self, h: &Matrix, dropout: Option<Dropout<'_>>) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = bind_all(self, &mut tape, false);
        let x = tape.constant(h.clone());
        let y = self.forward(&mut tape, &vars, x, dropout)?;
        Ok(tape.data(y).clone())
    }
}

impl Parameters for CoarsePredictor {
    fn params(&self) -> Vec<&Matrix> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.input.params_mut();
        for b in &mut self.blocks {
            out.extend(b.layer1.params_mut());
            out.extend(b.layer2.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }
}

/// `H_P = f_p(H_I)` on one sample of coefficients.
pub fn predictor_forward(
    p: &CoarsePredictor,
    h_i: &TrajectoryCoefficients,
    dropout: Option<Dropout<'_>>,
) -> Result<TrajectoryCoefficients> {
    let out = p.predict(h_i.coeffs(), dropout)?;
    TrajectoryCoefficients::new(out, h_i.frames())
}
