//! Reverse-mode differentiation over a closed set of dense operations.
//!
//! A [`DiffTape`] records every operation as it is evaluated. Leaves are
//! either trainable parameters ([`DiffTape::param`]) or constants
//! ([`DiffTape::constant`]). [`DiffTape::grad`] walks the tape backwards
//! once and returns one gradient per parameter, in registration order.
//!
//! Binary element-wise operations broadcast their *right* operand when it
//! is `1×1`, `1×c` (row) or `n×1` (column).
//!
//! ```
//! use fedssa_core::numcore::{DenseMatrix, DiffTape};
//!
//! let mut tape = DiffTape::new();
//! let w = tape.param(DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
//! let sq = tape.square(w).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.grad(loss).unwrap();
//! assert_eq!(grads[0].as_slice(), &[2.0, 4.0]);
//! ```

use super::{DenseMatrix, NumError};

/// Handle to a node on a [`DiffTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Element-wise nonlinearities supported by the tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    /// Subgradient 0 at the origin.
    Abs,
    /// Gradient passes only inside `[lo, hi]`.
    Clamp { lo: f64, hi: f64 },
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
            Unary::Clamp { lo, hi } => x.clamp(lo, hi),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Clamp { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Param(usize),
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    RowSum(Var),
    ColMean(Var),
    Sum(Var),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

fn broadcast_kind(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<Broadcast, NumError> {
    match b {
        _ if a == b => Ok(Broadcast::Same),
        (1, 1) => Ok(Broadcast::Scalar),
        (1, c) if c == a.1 => Ok(Broadcast::Row),
        (r, 1) if r == a.0 => Ok(Broadcast::Col),
        _ => Err(NumError::Shape {
            op,
            left: a,
            right: b,
        }),
    }
}

#[inline]
fn bget(b: &DenseMatrix, kind: Broadcast, i: usize, j: usize) -> f64 {
    match kind {
        Broadcast::Same => b.get(i, j),
        Broadcast::Row => b.get(0, j),
        Broadcast::Col => b.get(i, 0),
        Broadcast::Scalar => b.get(0, 0),
    }
}

fn elementwise(
    op: &'static str,
    a: &DenseMatrix,
    b: &DenseMatrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<DenseMatrix, NumError> {
    let kind = broadcast_kind(op, a.shape(), b.shape())?;
    if kind == Broadcast::Same {
        let data = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Ok(DenseMatrix::from_raw(a.rows(), a.cols(), data));
    }
    Ok(DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| {
        f(a.get(i, j), bget(b, kind, i, j))
    }))
}

/// Sums `g` (shaped like the broadcast result) back down to `target` shape.
fn reduce_to(g: &DenseMatrix, target: (usize, usize)) -> DenseMatrix {
    if g.shape() == target {
        return g.clone();
    }
    match target {
        (1, 1) => DenseMatrix::scalar(g.sum()),
        (1, _) => {
            let mut m = g.column_means();
            let n = g.rows() as f64;
            m.as_mut_slice().iter_mut().for_each(|v| *v *= n);
            m
        }
        _ => g.row_sums(),
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// A recording of dense operations supporting one reverse sweep.
///
/// The tape is single-owner; build one per loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct DiffTape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

impl DiffTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        let leaf = self.params.len();
        self.params.push(self.nodes.len());
        self.push_unchecked(Op::Param(leaf), value)
    }

    /// Registers a non-trainable leaf.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push_unchecked(Op::Const, value)
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    fn push_unchecked(&mut self, op: Op, value: DenseMatrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var, NumError> {
        let value = self.evaluate(op)?;
        Ok(self.push_unchecked(op, value))
    }

    fn evaluate(&self, op: Op) -> Result<DenseMatrix, NumError> {
        let v = |x: Var| &self.nodes[x.0].value;
        let out = match op {
            Op::Param(_) | Op::Const => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::Transpose(a) => v(a).transpose(),
            Op::Add(a, b) => elementwise("add", v(a), v(b), |x, y| x + y)?,
            Op::Sub(a, b) => elementwise("sub", v(a), v(b), |x, y| x - y)?,
            Op::Mul(a, b) => elementwise("mul", v(a), v(b), |x, y| x * y)?,
            Op::ScalarMul(s, a) => {
                let s = v(s).to_scalar().ok_or(NumError::Shape {
                    op: "scalar_mul",
                    left: v(s).shape(),
                    right: (1, 1),
                })?;
                v(a).scale(s)
            }
            Op::Scale(a, c) => v(a).scale(c),
            Op::Unary(a, f) => v(a).map(|x| f.apply(x)),
            Op::RowSum(a) => v(a).row_sums(),
            Op::ColMean(a) => v(a).column_means(),
            Op::Sum(a) => DenseMatrix::scalar(v(a).sum()),
        };
        if !out.is_finite() {
            return Err(NumError::NonFinite { op: op_name(op) });
        }
        Ok(out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.record(Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.record(Op::Mul(a, b))
    }

    /// `s · a` for a 1×1 node `s`.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var, NumError> {
        self.record(Op::ScalarMul(s, a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.record(Op::Scale(a, c))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Result<Var, NumError> {
        self.record(Op::Unary(a, f))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Square)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(a, Unary::Abs)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        self.unary(a, Unary::Clamp { lo, hi })
    }

    /// Per-row sum: `n×c → n×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NumError> {
        self.record(Op::RowSum(a))
    }

    /// Mean over rows: `n×c → 1×c`.
    pub fn col_mean(&mut self, a: Var) -> Result<Var, NumError> {
        self.record(Op::ColMean(a))
    }

    /// Sum of all entries: `→ 1×1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        self.record(Op::Sum(a))
    }

    /// Recomputes every node from new parameter values, in recording order.
    pub fn replay(&mut self, params: &[DenseMatrix]) -> Result<(), NumError> {
        if params.len() != self.params.len() {
            return Err(NumError::Contract(format!(
                "replay expects {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for i in 0..self.nodes.len() {
            match self.nodes[i].op {
                Op::Param(leaf) => {
                    if params[leaf].shape() != self.nodes[i].value.shape() {
                        return Err(NumError::Shape {
                            op: "replay",
                            left: self.nodes[i].value.shape(),
                            right: params[leaf].shape(),
                        });
                    }
                    self.nodes[i].value = params[leaf].clone();
                }
                Op::Const => {}
                op => self.nodes[i].value = self.evaluate(op)?,
            }
        }
        Ok(())
    }

    /// Gradient of a scalar node with respect to every parameter.
    ///
    /// Parameters that do not influence `loss` get zero gradients.
    pub fn grad(&self, loss: Var) -> Result<Vec<DenseMatrix>, NumError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(NumError::Contract(format!(
                "gradient requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |x: Var| &self.nodes[x.0].value;
            match node.op {
                Op::Param(_) | Op::Const => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut adj, a, g.matmul_t(val(b))?);
                    accumulate(&mut adj, b, val(a).t_matmul(&g)?);
                }
                Op::Transpose(a) => accumulate(&mut adj, a, g.transpose()),
                Op::Add(a, b) => {
                    let gb = reduce_to(&g, val(b).shape());
                    accumulate(&mut adj, a, g);
                    accumulate(&mut adj, b, gb);
                }
                Op::Sub(a, b) => {
                    let gb = reduce_to(&g, val(b).shape()).scale(-1.0);
                    accumulate(&mut adj, a, g);
                    accumulate(&mut adj, b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise("mul", &g, val(b), |x, y| x * y)?;
                    let gab = g.hadamard(val(a))?;
                    accumulate(&mut adj, a, ga);
                    accumulate(&mut adj, b, reduce_to(&gab, val(b).shape()));
                }
                Op::ScalarMul(s, a) => {
                    let sv = val(s).get(0, 0);
                    let gs: f64 = g
                        .as_slice()
                        .iter()
                        .zip(val(a).as_slice())
                        .map(|(x, y)| x * y)
                        .sum();
                    accumulate(&mut adj, s, DenseMatrix::scalar(gs));
                    accumulate(&mut adj, a, g.scale(sv));
                }
                Op::Scale(a, c) => accumulate(&mut adj, a, g.scale(c)),
                Op::Unary(a, f) => {
                    let x = val(a).as_slice();
                    let y = node.value.as_slice();
                    let data = g
                        .as_slice()
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(gi, (xi, yi))| gi * f.derivative(*xi, *yi))
                        .collect();
                    accumulate(&mut adj, a, DenseMatrix::from_raw(g.rows(), g.cols(), data));
                }
                Op::RowSum(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(&mut adj, a, DenseMatrix::from_fn(r, c, |i, _| g.get(i, 0)));
                }
                Op::ColMean(a) => {
                    let (r, c) = val(a).shape();
                    let inv = 1.0 / r as f64;
                    accumulate(
                        &mut adj,
                        a,
                        DenseMatrix::from_fn(r, c, |_, j| g.get(0, j) * inv),
                    );
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(&mut adj, a, DenseMatrix::filled(r, c, g.get(0, 0)));
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|&node| {
                adj.get_mut(node)
                    .and_then(Option::take)
                    .unwrap_or_else(|| {
                        let (r, c) = self.nodes[node].value.shape();
                        DenseMatrix::zeros(r, c)
                    })
            })
            .collect())
    }
}

fn accumulate(adj: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot => *slot = Some(g),
    }
}

fn op_name(op: Op) -> &'static str {
    match op {
        Op::Param(_) => "param",
        Op::Const => "const",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::ScalarMul(..) => "scalar_mul",
        Op::Scale(..) => "scale",
        Op::Unary(_, Unary::Log) => "log",
        Op::Unary(_, Unary::Exp) => "exp",
        Op::Unary(..) => "unary",
        Op::RowSum(_) => "row_sum",
        Op::ColMean(_) => "col_mean",
        Op::Sum(_) => "sum",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normals, SeedStream};

    fn random(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, standard_normals(rng, rows * cols)).unwrap()
    }

    /// Central finite differences of the tape's loss w.r.t. every leaf.
    fn finite_difference(tape: &mut DiffTape, loss: Var, leaves: &[DenseMatrix]) -> Vec<DenseMatrix> {
        let h = 1e-5;
        let mut out = Vec::new();
        for (p, leaf) in leaves.iter().enumerate() {
            let mut g = DenseMatrix::zeros(leaf.rows(), leaf.cols());
            for idx in 0..leaf.as_slice().len() {
                let mut plus = leaves.to_vec();
                plus[p].as_mut_slice()[idx] += h;
                tape.replay(&plus).unwrap();
                let fp = tape.scalar_value(loss);
                let mut minus = leaves.to_vec();
                minus[p].as_mut_slice()[idx] -= h;
                tape.replay(&minus).unwrap();
                let fm = tape.scalar_value(loss);
                g.as_mut_slice()[idx] = (fp - fm) / (2.0 * h);
            }
            out.push(g);
        }
        tape.replay(leaves).unwrap();
        out
    }

    fn max_rel_err(a: &[DenseMatrix], b: &[DenseMatrix]) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, y) in a.iter().zip(b) {
            for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                let denom = u.abs().max(v.abs()).max(1e-3);
                worst = worst.max((u - v).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn linear_functional() {
        let mut t = DiffTape::new();
        let w = t.param(DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap());
        let l = t.sum(w).unwrap();
        let g = t.grad(l).unwrap();
        assert_eq!(g[0], DenseMatrix::filled(2, 2, 1.0));
    }

    #[test]
    fn frobenius_square() {
        let w0 = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        let mut t = DiffTape::new();
        let w = t.param(w0.clone());
        let sq = t.square(w).unwrap();
        let l = t.sum(sq).unwrap();
        let g = t.grad(l).unwrap();
        assert_eq!(g[0], w0.scale(2.0));
    }

    #[test]
    fn unreferenced_leaf_gets_zero_gradient() {
        let mut t = DiffTape::new();
        let a = t.param(DenseMatrix::filled(1, 3, 2.0));
        let _b = t.param(DenseMatrix::filled(2, 2, 5.0));
        let l = t.sum(a).unwrap();
        let g = t.grad(l).unwrap();
        assert_eq!(g[1], DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = DiffTape::new();
        let a = t.param(DenseMatrix::zeros(2, 2));
        assert!(matches!(t.grad(a), Err(NumError::Contract(_))));
    }

    #[test]
    fn log_of_zero_is_reported() {
        let mut t = DiffTape::new();
        let a = t.constant(DenseMatrix::zeros(1, 1));
        assert!(matches!(t.log(a), Err(NumError::NonFinite { op: "log" })));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = SeedStream::new(8).rng();
        let w = random(3, 4, &mut rng);
        let x = random(5, 3, &mut rng);
        let mut t = DiffTape::new();
        let wv = t.param(w.clone());
        let xv = t.constant(x);
        let h = t.matmul(xv, wv).unwrap();
        let s = t.softplus(h).unwrap();
        let l = t.sum(s).unwrap();
        let before = t.value(l).clone();
        t.replay(&[w]).unwrap();
        assert_eq!(t.value(l).as_slice()[0].to_bits(), before.as_slice()[0].to_bits());
    }

    /// Three-layer composition touching every op in the closed set.
    fn build_composite(t: &mut DiffTape, rng: &mut impl rand::Rng) -> (Var, Vec<DenseMatrix>) {
        let leaves = vec![
            random(4, 5, rng).scale(0.5),
            random(1, 5, rng).scale(0.5),
            random(5, 3, rng).scale(0.5),
            random(1, 1, rng),
            random(6, 1, rng).scale(0.3),
        ];
        let x = t.constant(random(6, 4, rng));
        let w1 = t.param(leaves[0].clone());
        let b1 = t.param(leaves[1].clone());
        let w2 = t.param(leaves[2].clone());
        let s = t.param(leaves[3].clone());
        let c = t.param(leaves[4].clone());

        let h = t.matmul(x, w1).unwrap();
        let h = t.add(h, b1).unwrap();
        let h = t.unary(h, Unary::Tanh).unwrap();
        let o = t.matmul(h, w2).unwrap();
        let o = t.scalar_mul(s, o).unwrap();
        let o = t.sub(o, c).unwrap();
        let e = t.exp(o).unwrap();
        let rs = t.row_sum(e).unwrap();
        let lse = t.log(rs).unwrap();
        let sp = t.softplus(o).unwrap();
        let sg = t.unary(o, Unary::Sigmoid).unwrap();
        let m = t.mul(sp, sg).unwrap();
        let cm = t.col_mean(m).unwrap();
        let sq = t.square(cm).unwrap();
        let ht = t.transpose(h).unwrap();
        let gram = t.matmul(ht, h).unwrap();
        let r = t.relu(gram).unwrap();
        let a = t.abs(lse).unwrap();
        let cl = t.clamp(o, -0.7, 0.7).unwrap();
        let parts = [sq, r, a, cl];
        let mut total = t.sum(parts[0]).unwrap();
        for p in &parts[1..] {
            let s = t.sum(*p).unwrap();
            total = t.add(total, s).unwrap();
        }
        let total = t.scale(total, 0.5).unwrap();
        (total, leaves)
    }

    #[test]
    fn composite_matches_finite_differences() {
        for seed in 0..100 {
            let mut rng = SeedStream::new(seed).rng();
            let mut t = DiffTape::new();
            let (loss, leaves) = build_composite(&mut t, &mut rng);
            let analytic = t.grad(loss).unwrap();
            let numeric = finite_difference(&mut t, loss, &leaves);
            let err = max_rel_err(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn broadcast_shapes() {
        let mut t = DiffTape::new();
        let a = t.param(DenseMatrix::filled(3, 2, 1.0));
        let col = t.param(DenseMatrix::filled(3, 1, 2.0));
        let row = t.param(DenseMatrix::filled(1, 2, 3.0));
        let x = t.mul(a, col).unwrap();
        let y = t.add(x, row).unwrap();
        let l = t.sum(y).unwrap();
        assert_eq!(t.scalar_value(l), 3.0 * 2.0 * 2.0 + 6.0 * 3.0);
        let g = t.grad(l).unwrap();
        assert_eq!(g[0], DenseMatrix::filled(3, 2, 2.0));
        assert_eq!(g[1], DenseMatrix::filled(3, 1, 2.0));
        assert_eq!(g[2], DenseMatrix::filled(1, 2, 3.0));
        let bad = t.constant(DenseMatrix::zeros(2, 2));
        assert!(t.add(a, bad).is_err());
    }
}
