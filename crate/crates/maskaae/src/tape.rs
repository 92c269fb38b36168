//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] is an append-only arena of eagerly evaluated nodes. Every
//! operation pushes a node, records its parents, and computes its value
//! immediately. [`Tape::grad`] walks the arena backwards and *builds the
//! adjoints as new tape nodes*, so a gradient is itself differentiable —
//! that is what the gradient-penalty term needs, where a parameter
//! gradient flows through an input-gradient norm.
//!
//! Piecewise-linear gates (relu family, |x|) follow the usual almost-
//! everywhere convention: their local derivative is treated as constant,
//! so second derivatives through them are zero. Smooth ops (sigmoid, exp,
//! sqrt, division) are differentiable to any order.
//!
//! Shapes are `(rows, cols)`; row vectors are `1×t`, column vectors `s×1`
//! and scalars `1×1`. Shape mismatches are programming errors and panic.

use ndarray::{Array2, Axis};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// matrix (s×t) + row (1×t)
    AddRow(usize, usize),
    /// matrix (s×t) ⊙ row (1×t)
    MulRow(usize, usize),
    /// matrix (s×t) ⊙ column (s×1)
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// max(x, slope·x); slope 0 is relu
    LeakyRelu(usize, f64),
    /// elementwise derivative of LeakyRelu at the parent's value: 1 where
    /// x > 0, `slope` elsewhere. Carries no gradient of its own.
    LreluGate,
    Sigmoid(usize),
    Exp(usize),
    Sqrt(usize),
    Abs(usize),
    /// elementwise sign with sign(0) = 0; no gradient of its own
    SignGate,
    Transpose(usize),
    /// -> 1×1
    SumAll(usize),
    /// sum over rows (axis 0) -> 1×t
    SumRows(usize),
    /// sum over cols (axis 1) -> s×1
    SumCols(usize),
    /// 1×1 -> rows×cols
    BroadcastScalar(usize),
    /// 1×t -> rows×t
    BroadcastRow(usize),
    /// s×1 -> s×cols
    BroadcastCol(usize),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Append-only computation record. Dropped wholesale after each use.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an input we will differentiate
    /// with respect to).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable leaf (data, prior draws, fixed coefficients).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-scalar node");
        val[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn unary(&mut self, op: Op, parent: usize, value: Array2<f64>) -> Var {
        let ng = self.needs(parent);
        self.push(op, value, ng)
    }

    fn binary(&mut self, op: Op, a: usize, b: usize, value: Array2<f64>) -> Var {
        let ng = self.needs(a) || self.needs(b);
        self.push(op, value, ng)
    }

    // ---- operations ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul {ar}x{ac} by {br}x{bc}");
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.binary(Op::MatMul(a.0, b.0), a.0, b.0, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.binary(Op::Add(a.0, b.0), a.0, b.0, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.binary(Op::Sub(a.0, b.0), a.0, b.0, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.binary(Op::Mul(a.0, b.0), a.0, b.0, value)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "div shape");
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.binary(Op::Div(a.0, b.0), a.0, b.0, value)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "add_row shape");
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.binary(Op::AddRow(a.0, row.0), a.0, row.0, value)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, ac) = self.shape(a);
        assert_eq!(self.shape(row), (1, ac), "mul_row shape");
        let value = &self.nodes[a.0].value * &self.nodes[row.0].value;
        self.binary(Op::MulRow(a.0, row.0), a.0, row.0, value)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (ar, _) = self.shape(a);
        assert_eq!(self.shape(col), (ar, 1), "mul_col shape");
        let value = &self.nodes[a.0].value * &self.nodes[col.0].value;
        self.binary(Op::MulCol(a.0, col.0), a.0, col.0, value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        self.unary(Op::Scale(a.0, c), a.0, value)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x + c);
        self.unary(Op::AddScalar(a.0), a.0, value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.unary(Op::LeakyRelu(a.0, slope), a.0, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    fn lrelu_gate(&mut self, a: Var, slope: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { slope });
        // gate is locally constant: no gradient flows through it
        self.push(Op::LreluGate, value, false)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(Op::Sigmoid(a.0), a.0, value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::exp);
        self.unary(Op::Exp(a.0), a.0, value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::sqrt);
        self.unary(Op::Sqrt(a.0), a.0, value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::abs);
        self.unary(Op::Abs(a.0), a.0, value)
    }

    fn sign_gate(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.push(Op::SignGate, value, false)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.unary(Op::Transpose(a.0), a.0, value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.unary(Op::SumAll(a.0), a.0, Array2::from_elem((1, 1), s))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(Op::SumRows(a.0), a.0, v)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(Op::SumCols(a.0), a.0, v)
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.shape(a), (1, 1), "broadcast_scalar source");
        let v = Array2::from_elem((rows, cols), self.nodes[a.0].value[(0, 0)]);
        self.unary(Op::BroadcastScalar(a.0), a.0, v)
    }

    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Var {
        let (ar, ac) = self.shape(a);
        assert_eq!(ar, 1, "broadcast_row source must be 1×t");
        let v = self.nodes[a.0].value.broadcast((rows, ac)).unwrap().to_owned();
        self.unary(Op::BroadcastRow(a.0), a.0, v)
    }

    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> Var {
        let (ar, ac) = self.shape(a);
        assert_eq!(ac, 1, "broadcast_col source must be s×1");
        let v = self.nodes[a.0].value.broadcast((ar, cols)).unwrap().to_owned();
        self.unary(Op::BroadcastCol(a.0), a.0, v)
    }

    /// Elementwise square.
    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Mean over all entries -> 1×1.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Per-row Euclidean norm -> s×1.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let ss = self.sum_cols(sq);
        self.sqrt(ss)
    }

    // ---- reverse pass -------------------------------------------------

    /// Gradients of a scalar `loss` with respect to each var in `wrt`.
    ///
    /// Adjoints are pushed onto the tape as ordinary nodes, so the results
    /// are themselves differentiable by a later `grad` call. Vars that the
    /// loss does not depend on get a zero gradient of matching shape.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(loss), (1, 1), "grad target must be scalar");
        for w in wrt {
            assert!(w.0 <= loss.0, "wrt var created after the loss node");
        }
        let horizon = loss.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; horizon];
        let seed = self.constant(Array2::from_elem((1, 1), 1.0));
        adj[loss.0] = Some(seed);

        for i in (0..horizon).rev() {
            let Some(g) = adj[i] else { continue };
            if !self.needs(i) {
                continue;
            }
            let op = self.nodes[i].op;
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.transpose(Var(b));
                        let da = self.matmul(g, bt);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                    if self.needs(b) {
                        let at = self.transpose(Var(a));
                        let db = self.matmul(at, g);
                        Self::accumulate(self, &mut adj, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        Self::accumulate(self, &mut adj, a, g);
                    }
                    if self.needs(b) {
                        Self::accumulate(self, &mut adj, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(a) {
                        Self::accumulate(self, &mut adj, a, g);
                    }
                    if self.needs(b) {
                        let ng = self.scale(g, -1.0);
                        Self::accumulate(self, &mut adj, b, ng);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let da = self.mul(g, Var(b));
                        Self::accumulate(self, &mut adj, a, da);
                    }
                    if self.needs(b) {
                        let db = self.mul(g, Var(a));
                        Self::accumulate(self, &mut adj, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if self.needs(a) {
                        let da = self.div(g, Var(b));
                        Self::accumulate(self, &mut adj, a, da);
                    }
                    if self.needs(b) {
                        // d(a/b)/db = -out/b
                        let q = self.div(Var(i), Var(b));
                        let gq = self.mul(g, q);
                        let db = self.scale(gq, -1.0);
                        Self::accumulate(self, &mut adj, b, db);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.needs(a) {
                        Self::accumulate(self, &mut adj, a, g);
                    }
                    if self.needs(r) {
                        let dr = self.sum_rows(g);
                        Self::accumulate(self, &mut adj, r, dr);
                    }
                }
                Op::MulRow(a, r) => {
                    if self.needs(a) {
                        let rb = Var(r);
                        let da = self.mul_row(g, rb);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                    if self.needs(r) {
                        let prod = self.mul(g, Var(a));
                        let dr = self.sum_rows(prod);
                        Self::accumulate(self, &mut adj, r, dr);
                    }
                }
                Op::MulCol(a, c) => {
                    if self.needs(a) {
                        let da = self.mul_col(g, Var(c));
                        Self::accumulate(self, &mut adj, a, da);
                    }
                    if self.needs(c) {
                        let prod = self.mul(g, Var(a));
                        let dc = self.sum_cols(prod);
                        Self::accumulate(self, &mut adj, c, dc);
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(a) {
                        let da = self.scale(g, c);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::AddScalar(a) => {
                    if self.needs(a) {
                        Self::accumulate(self, &mut adj, a, g);
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if self.needs(a) {
                        let gate = self.lrelu_gate(Var(a), slope);
                        let da = self.mul(g, gate);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::LreluGate | Op::SignGate => {}
                Op::Sigmoid(a) => {
                    if self.needs(a) {
                        // y(1-y) expressed through the output node
                        let y = Var(i);
                        let ym = self.scale(y, -1.0);
                        let one_m = self.add_scalar(ym, 1.0);
                        let d = self.mul(y, one_m);
                        let da = self.mul(g, d);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::Exp(a) => {
                    if self.needs(a) {
                        let da = self.mul(g, Var(i));
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::Sqrt(a) => {
                    if self.needs(a) {
                        // 0.5 / sqrt(x) = 0.5 / out
                        let half_g = self.scale(g, 0.5);
                        let da = self.div(half_g, Var(i));
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::Abs(a) => {
                    if self.needs(a) {
                        let gate = self.sign_gate(Var(a));
                        let da = self.mul(g, gate);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(a) {
                        let da = self.transpose(g);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::SumAll(a) => {
                    if self.needs(a) {
                        let (r, c) = self.shape(Var(a));
                        let da = self.broadcast_scalar(g, r, c);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::SumRows(a) => {
                    if self.needs(a) {
                        let (r, _) = self.shape(Var(a));
                        let da = self.broadcast_row(g, r);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::SumCols(a) => {
                    if self.needs(a) {
                        let (_, c) = self.shape(Var(a));
                        let da = self.broadcast_col(g, c);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::BroadcastScalar(a) => {
                    if self.needs(a) {
                        let da = self.sum_all(g);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::BroadcastRow(a) => {
                    if self.needs(a) {
                        let da = self.sum_rows(g);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
                Op::BroadcastCol(a) => {
                    if self.needs(a) {
                        let da = self.sum_cols(g);
                        Self::accumulate(self, &mut adj, a, da);
                    }
                }
            }
        }

        wrt.iter()
            .map(|w| match adj[w.0] {
                Some(v) => v,
                None => {
                    let (r, c) = self.shape(*w);
                    self.constant(Array2::zeros((r, c)))
                }
            })
            .collect()
    }

    fn accumulate(tape: &mut Tape, adj: &mut [Option<Var>], target: usize, contrib: Var) {
        adj[target] = Some(match adj[target] {
            None => contrib,
            Some(prev) => tape.add(prev, contrib),
        });
    }
}
