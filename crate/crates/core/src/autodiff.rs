//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation records its inputs on a [`Tape`]; [`Tape::backward`] walks
//! the tape in reverse and accumulates gradients into every node that
//! requires them. Only the operations the networks use are provided, each with
//! a hand-written backward rule checked against central finite differences.

use std::fmt;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the per-joint distance enters [`Tape::mse_norm_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Mean of per-joint Euclidean norms.
    #[default]
    Euclidean,
    /// Mean of squared per-joint Euclidean norms.
    Squared,
}

/// Backward rule of a [`Tape::custom`] node: receives the input values, the
/// output value and the upstream gradient; returns one gradient per input.
pub type CustomBackward = Box<dyn Fn(&[&Matrix], &Matrix, &Matrix) -> Vec<Matrix>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    GraphMix { adj: Var, h: Var, block: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Tanh(Var),
    Sigmoid(Var),
    AddBias(Var, Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    MseNorm {
        pred: Var,
        diff: Matrix,
        norms: Vec<f64>,
        joint_dim: usize,
        kind: NormKind,
    },
    MeanLog(Var),
    MeanLog1m(Var),
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddBias(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::GraphMix { adj, h, .. } => vec![*adj, *h],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::MeanLog(a)
            | Op::MeanLog1m(a) => vec![*a],
            Op::MseNorm { pred, .. } => vec![*pred],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    data: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations. Nodes are appended as operations
/// run, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    m.dim()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Matrix, op: Op) -> Var {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            data,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            data,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, data: Matrix) -> Var {
        self.leaf(data, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, data: Matrix) -> Var {
        self.leaf(data, false)
    }

    /// A constant copy of `v`'s current value (stops gradient flow).
    pub fn detach(&mut self, v: Var) -> Var {
        let data = self.nodes[v.0].data.clone();
        self.constant(data)
    }

    pub fn data(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].data.dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a 1 × 1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[[0, 0]]
    }

    /// Accumulated gradient of `v` (zeros if nothing has flowed into it).
    pub fn grad(&self, v: Var) -> Matrix {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.data.dim()))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(b));
        if da.ncols() != db.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                left: shape(da),
                right: shape(db),
            });
        }
        let out = da.dot(db);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Left-multiplies every `block`-row slab of `h` by the square matrix `adj`.
    /// With a single slab this is `adj · h`; stacking samples vertically gives a
    /// batched graph propagation with shared adjacency.
    pub fn graph_mix(&mut self, adj: Var, h: Var) -> Result<Var> {
        let (a, x) = (self.data(adj), self.data(h));
        let block = a.nrows();
        if a.ncols() != block || block == 0 || x.nrows() % block != 0 {
            return Err(Error::Shape {
                op: "graph_mix",
                left: shape(a),
                right: shape(x),
            });
        }
        let mut out = Matrix::zeros(x.dim());
        for b in 0..x.nrows() / block {
            let rows = s![b * block..(b + 1) * block, ..];
            out.slice_mut(rows).assign(&a.dot(&x.slice(rows)));
        }
        Ok(self.push(out, Op::GraphMix { adj, h, block }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(b));
        if da.dim() != db.dim() {
            return Err(Error::Shape {
                op: "add",
                left: shape(da),
                right: shape(db),
            });
        }
        let out = da + db;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(b));
        if da.dim() != db.dim() {
            return Err(Error::Shape {
                op: "sub",
                left: shape(da),
                right: shape(db),
            });
        }
        let out = da - db;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.data(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let da = self.data(a);
        if da.dim() != mask.dim() {
            return Err(Error::Shape {
                op: "mul_const",
                left: shape(da),
                right: mask.dim(),
            });
        }
        let out = da * &mask;
        Ok(self.push(out, Op::MulConst(a, mask)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.data(a).mapv(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push(out, Op::Sigmoid(a))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(bias));
        if db.nrows() != 1 || db.ncols() != da.ncols() {
            return Err(Error::Shape {
                op: "add_bias",
                left: shape(da),
                right: shape(db),
            });
        }
        let out = da + db;
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.data(a), self.data(b));
        if da.nrows() != db.nrows() {
            return Err(Error::Shape {
                op: "concat_cols",
                left: shape(da),
                right: shape(db),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[da.view(), db.view()]).expect("rows checked");
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let da = self.data(a);
        if da.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                left: shape(da),
                right: (rows, cols),
            });
        }
        let flat: Vec<f64> = da.iter().copied().collect();
        let out = Matrix::from_shape_vec((rows, cols), flat).expect("length checked");
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.data(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.data(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Mean over rows and joints of the per-joint distance between `pred` and
    /// `target`. Each row is a frame; consecutive groups of `joint_dim`
    /// columns form one joint. The zero-distance subgradient is 0.
    pub fn mse_norm_loss(
        &mut self,
        pred: Var,
        target: &Matrix,
        joint_dim: usize,
        kind: NormKind,
    ) -> Result<Var> {
        let dp = self.data(pred);
        if dp.dim() != target.dim() || joint_dim == 0 || !dp.ncols().is_multiple_of(joint_dim) {
            return Err(Error::Shape {
                op: "mse_norm_loss",
                left: shape(dp),
                right: target.dim(),
            });
        }
        let diff = dp - target;
        let joints = diff.ncols() / joint_dim;
        let mut norms = Vec::with_capacity(diff.nrows() * joints);
        for row in diff.rows() {
            for j in 0..joints {
                let sq: f64 = row
                    .slice(s![j * joint_dim..(j + 1) * joint_dim])
                    .iter()
                    .map(|v| v * v)
                    .sum();
                norms.push(sq.sqrt());
            }
        }
        let total: f64 = match kind {
            NormKind::Euclidean => norms.iter().sum(),
            NormKind::Squared => norms.iter().map(|n| n * n).sum(),
        };
        let loss = total / norms.len() as f64;
        Ok(self.push(
            Matrix::from_elem((1, 1), loss),
            Op::MseNorm {
                pred,
                diff,
                norms,
                joint_dim,
                kind,
            },
        ))
    }

    /// `mean(log(clamp(a)))`, clamp to `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn mean_log(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let out = d.mapv(|x| x.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()).mean().unwrap_or(0.0);
        self.push(Matrix::from_elem((1, 1), out), Op::MeanLog(a))
    }

    /// `mean(log(1 − clamp(a)))`, clamp to `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn mean_log1m(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let out = d
            .mapv(|x| (1.0 - x.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln())
            .mean()
            .unwrap_or(0.0);
        self.push(Matrix::from_elem((1, 1), out), Op::MeanLog1m(a))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, data: Matrix, backward: CustomBackward) -> Var {
        self.push(data, Op::Custom { inputs, backward })
    }

    /// Propagates `d root / d node` into every node that requires a gradient.
    /// Gradients accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_shape = self.shape(root);
        if root_shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward (root must be scalar)",
                left: root_shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, contribution) in self.local_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => *acc += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[i];
        let data = |v: &Var| &self.nodes[v.0].data;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, g.dot(&data(b).t())),
                (*b, data(a).t().dot(g)),
            ],
            Op::GraphMix { adj, h, block } => {
                let (a, x) = (data(adj), data(h));
                let mut ga = Matrix::zeros(a.dim());
                let mut gh = Matrix::zeros(x.dim());
                for b in 0..x.nrows() / block {
                    let rows = s![b * block..(b + 1) * block, ..];
                    let gb = g.slice(rows);
                    ga += &gb.dot(&x.slice(rows).t());
                    gh.slice_mut(rows).assign(&a.t().dot(&gb));
                }
                vec![(*adj, ga), (*h, gh)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Scale(a, c) => vec![(*a, g * *c)],
            Op::MulConst(a, mask) => vec![(*a, g * mask)],
            Op::Tanh(a) => vec![(*a, g * &node.data.mapv(|y| 1.0 - y * y))],
            Op::Sigmoid(a) => vec![(*a, g * &node.data.mapv(|y| y * (1.0 - y)))],
            Op::AddBias(a, bias) => vec![(*a, g.clone()), (*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
            Op::ConcatCols(a, b) => {
                let split = data(a).ncols();
                vec![
                    (*a, g.slice(s![.., ..split]).to_owned()),
                    (*b, g.slice(s![.., split..]).to_owned()),
                ]
            }
            Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                vec![(*a, Matrix::from_shape_vec(data(a).dim(), flat).expect("same length"))]
            }
            Op::Transpose(a) => vec![(*a, g.t().to_owned())],
            Op::Sum(a) => vec![(*a, Matrix::from_elem(data(a).dim(), g[[0, 0]]))],
            Op::MseNorm {
                pred,
                diff,
                norms,
                joint_dim,
                kind,
            } => {
                let upstream = g[[0, 0]] / norms.len() as f64;
                let joints = diff.ncols() / joint_dim;
                let mut out = Matrix::zeros(diff.dim());
                for (r, row) in diff.rows().into_iter().enumerate() {
                    for j in 0..joints {
                        let norm = norms[r * joints + j];
                        let factor = match kind {
                            NormKind::Euclidean if norm > 0.0 => upstream / norm,
                            NormKind::Euclidean => 0.0,
                            NormKind::Squared => 2.0 * upstream,
                        };
                        for c in j * joint_dim..(j + 1) * joint_dim {
                            out[[r, c]] = factor * row[c];
                        }
                    }
                }
                vec![(*pred, out)]
            }
            Op::MeanLog(a) => {
                let d = data(a);
                let n = d.len() as f64;
                let up = g[[0, 0]];
                vec![(
                    *a,
                    d.mapv(|x| {
                        if (PROB_EPS..=1.0 - PROB_EPS).contains(&x) {
                            up / (n * x)
                        } else {
                            0.0
                        }
                    }),
                )]
            }
            Op::MeanLog1m(a) => {
                let d = data(a);
                let n = d.len() as f64;
                let up = g[[0, 0]];
                vec![(
                    *a,
                    d.mapv(|x| {
                        if (PROB_EPS..=1.0 - PROB_EPS).contains(&x) {
                            -up / (n * (1.0 - x))
                        } else {
                            0.0
                        }
                    }),
                )]
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Matrix> = inputs.iter().map(data).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(backward(&values, &node.data, g))
                    .collect()
            }
        }
    }
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor of the relative error, so entries whose true gradient is
/// (near) zero are judged by absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences
/// `(f(θ + ε) − f(θ − ε)) / 2ε` for every entry of every parameter.
///
/// `f` builds the scalar loss on a fresh tape from the parameter leaves; it is
/// called once for the analytic pass and twice per parameter entry.
pub fn grad_check<F>(params: &[Matrix], f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Matrix> = vars.iter().map(|v| tape.grad(*v)).collect();

    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
        let r = f(&mut t, &vs)?;
        Ok(t.scalar(r))
    };

    let mut work: Vec<Matrix> = params
        .iter()
        .map(|p| p.as_standard_layout().into_owned())
        .collect();
    let mut max_rel: f64 = 0.0;
    let mut worst = None;
    let mut entries = 0;
    for p in 0..work.len() {
        let analytic_p = analytic[p].as_standard_layout().into_owned();
        for idx in 0..work[p].len() {
            let orig = flat(&work[p])[idx];
            flat_mut(&mut work[p])[idx] = orig + eps;
            let plus = eval(&work)?;
            flat_mut(&mut work[p])[idx] = orig - eps;
            let minus = eval(&work)?;
            flat_mut(&mut work[p])[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = flat(&analytic_p)[idx];
            let mut rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if rel.is_nan() {
                rel = f64::INFINITY;
            }
            if worst.is_none() || rel > max_rel {
                max_rel = rel;
                worst = Some((p, idx));
            }
            entries += 1;
        }
    }
    Ok(GradCheckReport {
        entries,
        max_rel_error: max_rel,
        worst,
        tolerance: tol,
        passed: max_rel <= tol,
    })
}

fn flat(m: &Matrix) -> &[f64] {
    m.as_slice().expect("standard layout")
}

fn flat_mut(m: &mut Matrix) -> &mut [f64] {
    m.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_manual_product() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.constant(array![[5.0], [6.0]]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.data(c), &array![[17.0], [39.0]]);
    }

    #[test]
    fn matmul_identity_gradient_is_ones() {
        let mut t = Tape::new();
        let i = t.constant(Matrix::eye(3));
        let x = t.param(array![[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]]);
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.data(y), t.data(x));
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), Matrix::ones((3, 2)));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros((2, 3)));
        let b = t.constant(Matrix::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("(2, 3)"));
        assert!(matches!(err, Error::Shape { left: (2, 3), right: (2, 3), .. }));
        let c = t.constant(Matrix::zeros((3, 2)));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.param(array![[0.0]]);
        let y = t.tanh(x);
        assert_eq!(t.scalar(y), 0.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x)[[0, 0]], 1.0);
    }

    #[test]
    fn add_zero_is_identity() {
        let mut t = Tape::new();
        let x = t.param(array![[1.5, -2.0]]);
        let z = t.constant(Matrix::zeros((1, 2)));
        let y = t.add(x, z).unwrap();
        assert_eq!(t.data(y), t.data(x));
    }

    #[test]
    fn mse_norm_three_four_five() {
        let mut t = Tape::new();
        let p = t.param(array![[3.0, 4.0, 0.0]]);
        let l = t
            .mse_norm_loss(p, &array![[0.0, 0.0, 0.0]], 3, NormKind::Euclidean)
            .unwrap();
        assert_eq!(t.scalar(l), 5.0);
        let same = t
            .mse_norm_loss(p, &array![[3.0, 4.0, 0.0]], 3, NormKind::Euclidean)
            .unwrap();
        assert_eq!(t.scalar(same), 0.0);
        t.backward(same).unwrap();
        assert_eq!(t.grad(p), Matrix::zeros((1, 3)));
        let sq = t
            .mse_norm_loss(p, &array![[0.0, 0.0, 0.0]], 3, NormKind::Squared)
            .unwrap();
        assert_eq!(t.scalar(sq), 25.0);
    }

    #[test]
    fn mse_norm_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred = random(7, 9, &mut rng);
        let target = random(7, 9, &mut rng);
        let mut expected = 0.0;
        for r in 0..7 {
            for j in 0..3 {
                let mut sq = 0.0;
                for d in 0..3 {
                    let diff = pred[[r, 3 * j + d]] - target[[r, 3 * j + d]];
                    sq += diff * diff;
                }
                expected += sq.sqrt();
            }
        }
        expected /= 21.0;
        let mut t = Tape::new();
        let p = t.constant(pred);
        let l = t.mse_norm_loss(p, &target, 3, NormKind::Euclidean).unwrap();
        assert!((t.scalar(l) - expected).abs() <= 1e-12);
    }

    #[test]
    fn bce_at_equilibrium() {
        let mut t = Tape::new();
        let r = t.constant(Matrix::from_elem((4, 1), 0.5));
        let f = t.constant(Matrix::from_elem((4, 1), 0.5));
        let lr = t.mean_log(r);
        let lf = t.mean_log1m(f);
        assert!((t.scalar(lr) - 0.5f64.ln()).abs() < 1e-12);
        assert!((t.scalar(lf) - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disconnected_leaf_and_accumulation() {
        let mut t = Tape::new();
        let x = t.param(array![[2.0]]);
        let unused = t.param(array![[7.0]]);
        let y = t.scale(x, 3.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x)[[0, 0]], 3.0);
        assert_eq!(t.grad(unused)[[0, 0]], 0.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x)[[0, 0]], 6.0);
        t.zero_grads();
        assert_eq!(t.grad(x)[[0, 0]], 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros((2, 2)));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn linear_closure_grad_check_is_exact_one() {
        let params = vec![array![[0.3, -1.2], [2.0, 0.0]]];
        let report = grad_check(&params, |t, v| Ok(t.sum(v[0])), 1e-5, 1e-4).unwrap();
        assert!(report.passed);
        assert!(report.max_rel_error < 1e-9);
        assert_eq!(report.entries, 4);
    }

    #[test]
    fn corrupted_backward_fails_check() {
        let params = vec![array![[0.3, -1.2, 0.7]]];
        let report = grad_check(
            &params,
            |t, v| {
                let data = t.data(v[0]).mapv(|x| x * x);
                // wrong rule: should be 2·x·g
                let sq = t.custom(
                    vec![v[0]],
                    data,
                    Box::new(|inputs, _, g| vec![inputs[0] * g]),
                );
                Ok(t.sum(sq))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.4);
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(4, 5, &mut rng);
        let b = random(5, 3, &mut rng);
        let run = || {
            let mut t = Tape::new();
            let va = t.param(a.clone());
            let vb = t.param(b.clone());
            let c = t.matmul(va, vb).unwrap();
            let d = t.tanh(c);
            let s = t.sum(d);
            t.backward(s).unwrap();
            (t.grad(va), t.grad(vb))
        };
        assert_eq!(run(), run());
    }
}
