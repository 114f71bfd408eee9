//! Recursive composition models over binary trees.
//!
//! Both models share the same outline: every leaf is represented by the
//! embedding row of its token (with a zero memory vector), internal nodes are
//! computed bottom-up by a composer, and the root representation feeds a
//! 10-way softmax classifier trained with cross-entropy.
//!
//! RNN composer:
//!
//! ```text
//! rep = tanh(W·[r1; r2] + b),  mem = 0
//! ```
//!
//! RLSTM composer, with children `(r1, c1)` and `(r2, c2)`:
//!
//! ```text
//! i  = σ(Wi1·r1 + Wi2·r2 + bi)
//! f1 = σ(Wf1L·r1 + Wf1R·r2 + bf1)
//! f2 = σ(Wf2L·r1 + Wf2R·r2 + bf2)
//! o  = σ(Wo1·r1 + Wo2·r2 + bo)
//! u  = tanh(Wu1·r1 + Wu2·r2 + bu)
//! c  = f1⊙c1 + f2⊙c2 + i⊙u
//! rep = o⊙tanh(c),  mem = c
//! ```
//!
//! [`backward`] runs backpropagation through structure and leaves the error
//! vectors `∂J/∂rep` and `∂J/∂mem` of every node in the trace.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax, uniform_init, DenseMatrix, DenseVector, SeededRng,
};
use crate::treebank::{BinaryTree, Token, MAX_TOKEN, NUM_CLASSES};

pub const DEFAULT_DIM: usize = 50;
pub const VOCAB_SIZE: usize = MAX_TOKEN as usize + 1;
/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Rnn,
    Rlstm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Rlstm => "rlstm",
        }
    }

    /// Minibatch size used for this model in the reference protocol.
    pub fn default_batch_size(self) -> usize {
        match self {
            ModelKind::Rnn => 20,
            ModelKind::Rlstm => 5,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(ModelKind::Rnn),
            "rlstm" => Ok(ModelKind::Rlstm),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    table: DenseMatrix,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(EmbeddingTable {
            table: uniform_init(VOCAB_SIZE, dim, -INIT_RANGE, INIT_RANGE, rng)?,
        })
    }

    pub fn from_matrix(table: DenseMatrix) -> Result<Self> {
        if table.rows() != VOCAB_SIZE {
            return Err(Error::Shape {
                op: "embedding table",
                left: format!("{} rows", table.rows()),
                right: format!("{VOCAB_SIZE} rows"),
            });
        }
        Ok(EmbeddingTable { table })
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, token: Token) -> &[f64] {
        self.table.row(token.index())
    }

    pub fn row_mut(&mut self, token: Token) -> &mut [f64] {
        self.table.row_mut(token.index())
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.table
    }

    pub fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.table
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// `n × 2n`, acting on `[left; right]`.
    pub w: DenseMatrix,
    pub b: DenseVector,
}

impl RnnParams {
    pub fn zeros(dim: usize) -> Self {
        RnnParams {
            w: DenseMatrix::zeros(dim, 2 * dim),
            b: DenseVector::zeros(dim),
        }
    }

    fn init(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(RnnParams {
            w: uniform_init(dim, 2 * dim, -INIT_RANGE, INIT_RANGE, rng)?,
            b: DenseVector::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// One gate: separate `n × n` matrices for the left and right child plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
    pub bias: DenseVector,
}

impl GateParams {
    fn zeros(dim: usize) -> Self {
        GateParams {
            left: DenseMatrix::zeros(dim, dim),
            right: DenseMatrix::zeros(dim, dim),
            bias: DenseVector::zeros(dim),
        }
    }

    fn init(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(GateParams {
            left: uniform_init(dim, dim, -INIT_RANGE, INIT_RANGE, rng)?,
            right: uniform_init(dim, dim, -INIT_RANGE, INIT_RANGE, rng)?,
            bias: DenseVector::zeros(dim),
        })
    }

    /// `bias + left·r1 + right·r2`
    fn preactivation(&self, r1: &[f64], r2: &[f64]) -> Vec<f64> {
        let mut out = self.bias.as_slice().to_vec();
        matvec_acc(&mut out, self.left.as_slice(), r1);
        matvec_acc(&mut out, self.right.as_slice(), r2);
        out
    }
}

pub const GATE_NAMES: [&str; 5] = ["input", "forget_left", "forget_right", "output", "candidate"];

#[derive(Debug, Clone, PartialEq)]
pub struct RlstmParams {
    pub input: GateParams,
    pub forget_left: GateParams,
    pub forget_right: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl RlstmParams {
    pub fn zeros(dim: usize) -> Self {
        RlstmParams {
            input: GateParams::zeros(dim),
            forget_left: GateParams::zeros(dim),
            forget_right: GateParams::zeros(dim),
            output: GateParams::zeros(dim),
            candidate: GateParams::zeros(dim),
        }
    }

    fn init(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(RlstmParams {
            input: GateParams::init(dim, rng)?,
            forget_left: GateParams::init(dim, rng)?,
            forget_right: GateParams::init(dim, rng)?,
            output: GateParams::init(dim, rng)?,
            candidate: GateParams::init(dim, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.bias.len()
    }

    /// Gates in [`GATE_NAMES`] order.
    pub fn gates(&self) -> [&GateParams; 5] {
        [
            &self.input,
            &self.forget_left,
            &self.forget_right,
            &self.output,
            &self.candidate,
        ]
    }

    pub fn gates_mut(&mut self) -> [&mut GateParams; 5] {
        [
            &mut self.input,
            &mut self.forget_left,
            &mut self.forget_right,
            &mut self.output,
            &mut self.candidate,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Composer {
    Rnn(RnnParams),
    Rlstm(RlstmParams),
}

impl Composer {
    pub fn zeros(kind: ModelKind, dim: usize) -> Self {
        match kind {
            ModelKind::Rnn => Composer::Rnn(RnnParams::zeros(dim)),
            ModelKind::Rlstm => Composer::Rlstm(RlstmParams::zeros(dim)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Composer::Rnn(_) => ModelKind::Rnn,
            Composer::Rlstm(_) => ModelKind::Rlstm,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Composer::Rnn(p) => p.dim(),
            Composer::Rlstm(p) => p.dim(),
        }
    }

    /// Parameter blocks in a fixed order, with their names and shapes.
    pub fn blocks(&self) -> Vec<Block<'_>> {
        match self {
            Composer::Rnn(p) => vec![Block::matrix("rnn.W", &p.w), Block::vector("rnn.b", &p.b)],
            Composer::Rlstm(p) => GATE_NAMES
                .iter()
                .zip(p.gates())
                .flat_map(|(name, g)| {
                    [
                        Block::matrix(format!("rlstm.{name}.left"), &g.left),
                        Block::matrix(format!("rlstm.{name}.right"), &g.right),
                        Block::vector(format!("rlstm.{name}.bias"), &g.bias),
                    ]
                })
                .collect(),
        }
    }

    /// Mutable views of the blocks, same order as [`Composer::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Composer::Rnn(p) => vec![p.w.as_mut_slice(), p.b.as_mut_slice()],
            Composer::Rlstm(p) => p
                .gates_mut()
                .into_iter()
                .flat_map(|g| [g.left.as_mut_slice(), g.right.as_mut_slice(), g.bias.as_mut_slice()])
                .collect(),
        }
    }
}

/// A named, shaped view of one parameter array. Vectors have `cols == 1`.
#[derive(Debug, Clone)]
pub struct Block<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> Block<'a> {
    fn matrix(name: impl Into<String>, m: &'a DenseMatrix) -> Self {
        Block {
            name: name.into(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice(),
        }
    }

    fn vector(name: impl Into<String>, v: &'a DenseVector) -> Self {
        Block {
            name: name.into(),
            rows: v.len(),
            cols: 1,
            data: v.as_slice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `10 × n`
    pub w: DenseMatrix,
    pub b: DenseVector,
}

impl Classifier {
    pub fn zeros(dim: usize) -> Self {
        Classifier {
            w: DenseMatrix::zeros(NUM_CLASSES, dim),
            b: DenseVector::zeros(NUM_CLASSES),
        }
    }

    fn init(dim: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Classifier {
            w: uniform_init(NUM_CLASSES, dim, -INIT_RANGE, INIT_RANGE, rng)?,
            b: DenseVector::zeros(NUM_CLASSES),
        })
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        vec![
            Block::matrix("classifier.W", &self.w),
            Block::vector("classifier.b", &self.b),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub embeddings: EmbeddingTable,
    pub composer: Composer,
    pub classifier: Classifier,
    /// Seeds (root first) that produced this model; stored in checkpoints.
    pub lineage: Vec<u64>,
}

impl Model {
    /// Fresh model: every weight drawn from `U[-1e-4, 1e-4)`, every bias zero.
    pub fn new(kind: ModelKind, dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let embeddings = EmbeddingTable::new(dim, rng)?;
        let composer = match kind {
            ModelKind::Rnn => Composer::Rnn(RnnParams::init(dim, rng)?),
            ModelKind::Rlstm => Composer::Rlstm(RlstmParams::init(dim, rng)?),
        };
        let classifier = Classifier::init(dim, rng)?;
        Ok(Model {
            embeddings,
            composer,
            classifier,
            lineage: vec![rng.seed()],
        })
    }

    /// All-zero model (every weight and bias zero).
    pub fn zeros(kind: ModelKind, dim: usize) -> Self {
        Model {
            embeddings: EmbeddingTable {
                table: DenseMatrix::zeros(VOCAB_SIZE, dim),
            },
            composer: Composer::zeros(kind, dim),
            classifier: Classifier::zeros(dim),
            lineage: Vec::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.composer.kind()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Composer blocks followed by classifier blocks.
    pub fn dense_blocks(&self) -> Vec<Block<'_>> {
        let mut out = self.composer.blocks();
        out.extend(self.classifier.blocks());
        out
    }

    pub fn dense_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.composer.blocks_mut();
        out.extend(self.classifier.blocks_mut());
        out
    }

    pub fn forward(&self, tree: &BinaryTree, label: Option<u8>) -> Result<ForwardTrace> {
        forward(tree, self, label)
    }

    /// Cross-entropy loss of `tree` under `label`.
    pub fn loss(&self, tree: &BinaryTree, label: u8) -> Result<f64> {
        Ok(forward(tree, self, Some(label))?.loss().expect("label supplied"))
    }

    fn check_consistent(&self) -> Result<()> {
        let n = self.dim();
        if self.composer.dim() != n || self.classifier.w.cols() != n {
            return Err(Error::Shape {
                op: "model",
                left: format!("embedding dim {n}"),
                right: format!(
                    "composer dim {}, classifier cols {}",
                    self.composer.dim(),
                    self.classifier.w.cols()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub rep: DenseVector,
    pub mem: DenseVector,
}

impl NodeState {
    pub fn leaf(rep: DenseVector) -> Self {
        let n = rep.len();
        NodeState {
            rep,
            mem: DenseVector::zeros(n),
        }
    }
}

fn check_children(x: &NodeState, y: &NodeState, n: usize, op: &'static str) -> Result<()> {
    for (what, v) in [
        ("left rep", &x.rep),
        ("left mem", &x.mem),
        ("right rep", &y.rep),
        ("right mem", &y.mem),
    ] {
        if v.len() != n {
            return Err(Error::Shape {
                op,
                left: format!("{what} of length {}", v.len()),
                right: format!("dimension {n}"),
            });
        }
    }
    Ok(())
}

fn rnn_step(r1: &[f64], r2: &[f64], p: &RnnParams) -> Vec<f64> {
    let n = p.dim();
    let mut a = p.b.as_slice().to_vec();
    // W = [W_left | W_right]; walk rows so the matrix is read once.
    for (i, row) in p.w.as_slice().chunks_exact(2 * n).enumerate() {
        a[i] += crate::numerics::dot(&row[..n], r1) + crate::numerics::dot(&row[n..], r2);
    }
    a.iter_mut().for_each(|v| *v = v.tanh());
    a
}

pub fn rnn_compose(x: &NodeState, y: &NodeState, p: &RnnParams) -> Result<NodeState> {
    check_children(x, y, p.dim(), "rnn_compose")?;
    let rep = rnn_step(x.rep.as_slice(), y.rep.as_slice(), p);
    Ok(NodeState::leaf(DenseVector::from_vec(rep)))
}

/// Post-activation gate values kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
struct LstmCache {
    // input, forget_left, forget_right, output, candidate
    gates: [Vec<f64>; 5],
    tanh_mem: Vec<f64>,
}

fn rlstm_step(r1: &[f64], c1: &[f64], r2: &[f64], c2: &[f64], p: &RlstmParams) -> (Vec<f64>, Vec<f64>, LstmCache) {
    let mut gates = p.gates().map(|g| g.preactivation(r1, r2));
    for g in &mut gates[..4] {
        g.iter_mut().for_each(|v| *v = sigmoid(*v));
    }
    gates[4].iter_mut().for_each(|v| *v = v.tanh());
    let [i, f1, f2, o, u] = &gates;
    let n = p.dim();
    let mut mem = vec![0.0; n];
    let mut tanh_mem = vec![0.0; n];
    let mut rep = vec![0.0; n];
    for k in 0..n {
        mem[k] = f1[k] * c1[k] + f2[k] * c2[k] + i[k] * u[k];
        tanh_mem[k] = mem[k].tanh();
        rep[k] = o[k] * tanh_mem[k];
    }
    (rep, mem, LstmCache { gates, tanh_mem })
}

pub fn rlstm_compose(x: &NodeState, y: &NodeState, p: &RlstmParams) -> Result<NodeState> {
    check_children(x, y, p.dim(), "rlstm_compose")?;
    let (rep, mem, _) = rlstm_step(
        x.rep.as_slice(),
        x.mem.as_slice(),
        y.rep.as_slice(),
        y.mem.as_slice(),
        p,
    );
    Ok(NodeState {
        rep: DenseVector::from_vec(rep),
        mem: DenseVector::from_vec(mem),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf(Token),
    Internal { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceNode {
    pub kind: NodeKind,
    /// Edges from the root.
    pub depth: usize,
    pub state: NodeState,
    /// `∂J/∂rep`, filled by [`backward`].
    pub err_rep: DenseVector,
    /// `∂J/∂mem`, filled by [`backward`].
    pub err_mem: DenseVector,
    cache: Option<LstmCache>,
}

/// Cached forward pass over one tree. Nodes are stored children-first, so
/// the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    kind: ModelKind,
    dim: usize,
    nodes: Vec<TraceNode>,
    scores: DenseVector,
    probs: DenseVector,
    loss: Option<f64>,
    backpropagated: bool,
}

impl ForwardTrace {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn nodes(&self) -> &[TraceNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TraceNode {
        self.nodes.last().expect("trace is never empty")
    }

    /// Class distribution at the root.
    pub fn probs(&self) -> &DenseVector {
        &self.probs
    }

    pub fn scores(&self) -> &DenseVector {
        &self.scores
    }

    pub fn loss(&self) -> Option<f64> {
        self.loss
    }

    pub fn is_backpropagated(&self) -> bool {
        self.backpropagated
    }

    /// The unique keyword leaf, if there is exactly one.
    pub fn keyword_node(&self) -> Option<&TraceNode> {
        let mut it = self
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf(t) if t.is_keyword()));
        match (it.next(), it.next()) {
            (Some(n), None) => Some(n),
            _ => None,
        }
    }
}

pub fn forward(tree: &BinaryTree, model: &Model, label: Option<u8>) -> Result<ForwardTrace> {
    model.check_consistent()?;
    if let Some(l) = label {
        check_label(l)?;
    }
    let n = model.dim();
    let mut nodes = Vec::with_capacity(2 * tree.leaf_count() - 1);
    build(tree, 0, model, &mut nodes)?;

    let root = &nodes.last().expect("at least one node").state.rep;
    let mut scores = model.classifier.b.clone();
    matvec_acc(scores.as_mut_slice(), model.classifier.w.as_slice(), root.as_slice());
    let probs = softmax(&scores);
    let loss = label.map(|l| -probs[l as usize].ln());
    debug_assert!(nodes.iter().all(|nd| nd.state.rep.len() == n));
    Ok(ForwardTrace {
        kind: model.kind(),
        dim: n,
        nodes,
        scores,
        probs,
        loss,
        backpropagated: false,
    })
}

fn build(tree: &BinaryTree, depth: usize, model: &Model, nodes: &mut Vec<TraceNode>) -> Result<usize> {
    let n = model.dim();
    let node = match tree {
        BinaryTree::Leaf(tok) => {
            if tok.index() >= model.embeddings.matrix().rows() {
                return Err(Error::invalid(format!("token {tok} has no embedding row")));
            }
            TraceNode {
                kind: NodeKind::Leaf(*tok),
                depth,
                state: NodeState::leaf(DenseVector::from_vec(model.embeddings.row(*tok).to_vec())),
                err_rep: DenseVector::zeros(n),
                err_mem: DenseVector::zeros(n),
                cache: None,
            }
        }
        BinaryTree::Internal(l, r) => {
            let left = build(l, depth + 1, model, nodes)?;
            let right = build(r, depth + 1, model, nodes)?;
            let (x, y) = (&nodes[left].state, &nodes[right].state);
            let (state, cache) = match &model.composer {
                Composer::Rnn(p) => {
                    let rep = rnn_step(x.rep.as_slice(), y.rep.as_slice(), p);
                    (NodeState::leaf(DenseVector::from_vec(rep)), None)
                }
                Composer::Rlstm(p) => {
                    let (rep, mem, cache) = rlstm_step(
                        x.rep.as_slice(),
                        x.mem.as_slice(),
                        y.rep.as_slice(),
                        y.mem.as_slice(),
                        p,
                    );
                    (
                        NodeState {
                            rep: DenseVector::from_vec(rep),
                            mem: DenseVector::from_vec(mem),
                        },
                        Some(cache),
                    )
                }
            };
            TraceNode {
                kind: NodeKind::Internal { left, right },
                depth,
                state,
                err_rep: DenseVector::zeros(n),
                err_mem: DenseVector::zeros(n),
                cache,
            }
        }
    };
    nodes.push(node);
    Ok(nodes.len() - 1)
}

fn check_label(label: u8) -> Result<()> {
    if label as usize >= NUM_CLASSES {
        return Err(Error::invalid(format!("label {label} outside 0..{NUM_CLASSES}")));
    }
    Ok(())
}

/// Argmax of the root distribution; ties go to the lowest class.
pub fn predict(trace: &ForwardTrace) -> u8 {
    let p = trace.probs().as_slice();
    let mut best = 0;
    for (k, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = k;
        }
    }
    best as u8
}

/// Parameter gradients, shape-congruent with a [`Model`]. Embedding
/// gradients are kept only for the rows actually touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<Token, DenseVector>,
    pub composer: Composer,
    pub classifier: Classifier,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            composer: Composer::zeros(model.kind(), model.dim()),
            classifier: Classifier::zeros(model.dim()),
        }
    }

    pub fn dense_blocks(&self) -> Vec<Block<'_>> {
        let mut out = self.composer.blocks();
        out.extend(self.classifier.blocks());
        out
    }

    fn dense_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.composer.blocks_mut();
        out.extend(self.classifier.blocks_mut());
        out
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.composer.kind() != other.composer.kind() || self.composer.dim() != other.composer.dim() {
            return Err(Error::Shape {
                op: "gradient merge",
                left: format!("{} dim {}", self.composer.kind(), self.composer.dim()),
                right: format!("{} dim {}", other.composer.kind(), other.composer.dim()),
            });
        }
        for (dst, src) in self.dense_blocks_mut().into_iter().zip(other.dense_blocks()) {
            axpy(dst, 1.0, src.data);
        }
        for (tok, g) in &other.embeddings {
            match self.embeddings.get_mut(tok) {
                Some(acc) => axpy(acc.as_mut_slice(), 1.0, g.as_slice()),
                None => {
                    self.embeddings.insert(*tok, g.clone());
                }
            }
        }
        Ok(())
    }
}

/// Backpropagation through structure for one labeled tree.
pub fn backward(trace: &mut ForwardTrace, label: u8, model: &Model) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(model);
    backward_into(trace, label, model, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`], adding into an existing accumulator.
pub fn backward_into(trace: &mut ForwardTrace, label: u8, model: &Model, grads: &mut Gradients) -> Result<()> {
    check_label(label)?;
    let n = model.dim();
    if trace.kind != model.kind() || trace.dim != n {
        return Err(Error::Shape {
            op: "backward",
            left: format!("trace {} dim {}", trace.kind, trace.dim),
            right: format!("model {} dim {}", model.kind(), n),
        });
    }
    if grads.composer.kind() != model.kind() || grads.composer.dim() != n {
        return Err(Error::Shape {
            op: "backward",
            left: format!("gradients {} dim {}", grads.composer.kind(), grads.composer.dim()),
            right: format!("model {} dim {}", model.kind(), n),
        });
    }

    for node in &mut trace.nodes {
        node.err_rep.as_mut_slice().fill(0.0);
        node.err_mem.as_mut_slice().fill(0.0);
    }

    // Softmax + cross-entropy: ∂J/∂scores = p - onehot(label).
    let mut dscores = trace.probs.as_slice().to_vec();
    dscores[label as usize] -= 1.0;
    let root = trace.nodes.len() - 1;
    outer_acc(
        grads.classifier.w.as_mut_slice(),
        &dscores,
        trace.nodes[root].state.rep.as_slice(),
    );
    axpy(grads.classifier.b.as_mut_slice(), 1.0, &dscores);
    matvec_t_acc(
        trace.nodes[root].err_rep.as_mut_slice(),
        model.classifier.w.as_slice(),
        &dscores,
    );

    for idx in (0..trace.nodes.len()).rev() {
        let node = &trace.nodes[idx];
        match node.kind {
            NodeKind::Leaf(tok) => {
                let g = grads.embeddings.entry(tok).or_insert_with(|| DenseVector::zeros(n));
                axpy(g.as_mut_slice(), 1.0, node.err_rep.as_slice());
            }
            NodeKind::Internal { left, right } => {
                let (d_left, d_right) = match (&model.composer, &mut grads.composer) {
                    (Composer::Rnn(p), Composer::Rnn(g)) => rnn_backward(&trace.nodes, idx, left, right, p, g),
                    (Composer::Rlstm(p), Composer::Rlstm(g)) => rlstm_backward(&trace.nodes, idx, left, right, p, g),
                    _ => unreachable!("kinds checked above"),
                };
                let (l_rep, l_mem) = d_left;
                let (r_rep, r_mem) = d_right;
                let ln = &mut trace.nodes[left];
                axpy(ln.err_rep.as_mut_slice(), 1.0, &l_rep);
                axpy(ln.err_mem.as_mut_slice(), 1.0, &l_mem);
                let rn = &mut trace.nodes[right];
                axpy(rn.err_rep.as_mut_slice(), 1.0, &r_rep);
                axpy(rn.err_mem.as_mut_slice(), 1.0, &r_mem);
            }
        }
    }
    trace.backpropagated = true;
    Ok(())
}

type ChildErrors = ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>));

fn rnn_backward(
    nodes: &[TraceNode],
    idx: usize,
    left: usize,
    right: usize,
    p: &RnnParams,
    g: &mut RnnParams,
) -> ChildErrors {
    let n = p.dim();
    let node = &nodes[idx];
    let rep = node.state.rep.as_slice();
    let da: Vec<f64> = node
        .err_rep
        .as_slice()
        .iter()
        .zip(rep)
        .map(|(d, r)| d * (1.0 - r * r))
        .collect();
    let r1 = nodes[left].state.rep.as_slice();
    let r2 = nodes[right].state.rep.as_slice();
    axpy(g.b.as_mut_slice(), 1.0, &da);
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let w = p.w.as_slice();
    for (i, (grow, wrow)) in
        g.w.as_mut_slice()
            .chunks_exact_mut(2 * n)
            .zip(w.chunks_exact(2 * n))
            .enumerate()
    {
        let di = da[i];
        if di == 0.0 {
            continue;
        }
        axpy(&mut grow[..n], di, r1);
        axpy(&mut grow[n..], di, r2);
        axpy(&mut d1, di, &wrow[..n]);
        axpy(&mut d2, di, &wrow[n..]);
    }
    ((d1, vec![0.0; n]), (d2, vec![0.0; n]))
}

fn rlstm_backward(
    nodes: &[TraceNode],
    idx: usize,
    left: usize,
    right: usize,
    p: &RlstmParams,
    g: &mut RlstmParams,
) -> ChildErrors {
    let n = p.dim();
    let node = &nodes[idx];
    let cache = node.cache.as_ref().expect("internal RLSTM node has a cache");
    let [i, f1, f2, o, u] = &cache.gates;
    let tc = &cache.tanh_mem;
    let d_rep = node.err_rep.as_slice();
    let d_mem_in = node.err_mem.as_slice();
    let (r1, c1) = (nodes[left].state.rep.as_slice(), nodes[left].state.mem.as_slice());
    let (r2, c2) = (nodes[right].state.rep.as_slice(), nodes[right].state.mem.as_slice());

    // Pre-activation gradients, in GATE_NAMES order.
    let mut da: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut dc1 = vec![0.0; n];
    let mut dc2 = vec![0.0; n];
    for k in 0..n {
        let d_o = d_rep[k] * tc[k];
        let d_c = d_mem_in[k] + d_rep[k] * o[k] * (1.0 - tc[k] * tc[k]);
        da[0][k] = d_c * u[k] * i[k] * (1.0 - i[k]);
        da[1][k] = d_c * c1[k] * f1[k] * (1.0 - f1[k]);
        da[2][k] = d_c * c2[k] * f2[k] * (1.0 - f2[k]);
        da[3][k] = d_o * o[k] * (1.0 - o[k]);
        da[4][k] = d_c * i[k] * (1.0 - u[k] * u[k]);
        dc1[k] = d_c * f1[k];
        dc2[k] = d_c * f2[k];
    }

    let mut dr1 = vec![0.0; n];
    let mut dr2 = vec![0.0; n];
    for ((gp, gg), dag) in p.gates().into_iter().zip(g.gates_mut()).zip(&da) {
        outer_acc(gg.left.as_mut_slice(), dag, r1);
        outer_acc(gg.right.as_mut_slice(), dag, r2);
        axpy(gg.bias.as_mut_slice(), 1.0, dag);
        matvec_t_acc(&mut dr1, gp.left.as_slice(), dag);
        matvec_t_acc(&mut dr2, gp.right.as_slice(), dag);
    }
    ((dr1, dc1), (dr2, dc2))
}
