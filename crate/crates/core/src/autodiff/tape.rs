use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::AutodiffError;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sqrt(Var),
    LogSumExp(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Pick(Var, usize),
    Row(Var, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
///
/// Nodes are created in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// `param_vars[id]` is the leaf holding parameter `id`, if it was used.
    param_vars: Vec<Option<Var>>,
    bound: Vec<(ParamId, Var)>,
}

/// Adjoints of every node with respect to one scalar root.
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` if `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.adjoints.get(var.0).and_then(|a| a.as_ref())
    }
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AutodiffError {
    AutodiffError::Shape { op, lhs: lhs.shape(), rhs: rhs.shape() }
}

/// Element-wise binary op; a `1 x 1` operand broadcasts over the other.
fn broadcast(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_vec(a.rows(), a.cols(), data))
    } else if b.is_scalar() {
        let y = b.item();
        Ok(a.map(|x| f(x, y)))
    } else if a.is_scalar() {
        let x = a.item();
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(shape_err(op, a, b))
    }
}

/// Reduce `g` to the shape of an operand that may have been broadcast.
fn unbroadcast(g: Tensor, operand: &Tensor) -> Tensor {
    if g.shape() == operand.shape() {
        g
    } else {
        Tensor::scalar(g.sum())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logsumexp(data: &[f64]) -> f64 {
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + data.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn constant_vector(&mut self, values: Vec<f64>) -> Var {
        self.constant(Tensor::vector(values))
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return
    /// the same node so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let slot = id.index();
        if slot >= self.param_vars.len() {
            self.param_vars.resize(slot + 1, None);
        }
        if let Some(var) = self.param_vars[slot] {
            return var;
        }
        let var = self.push(Op::Leaf, store.value(id).clone());
        self.param_vars[slot] = Some(var);
        self.bound.push((id, var));
        var
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast("div", self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mt, vt) = (self.value(m), self.value(v));
        if vt.cols() != 1 || mt.cols() != vt.rows() {
            return Err(shape_err("matvec", mt, vt));
        }
        let out: Vec<f64> = (0..mt.rows())
            .map(|r| mt.row(r).iter().zip(vt.data()).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(Op::MatVec(m, v), Tensor::vector(out)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.cols() != bt.rows() {
            return Err(shape_err("matmul", at, bt));
        }
        let (n, k, m) = (at.rows(), at.cols(), bt.cols());
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            for p in 0..k {
                let x = at.get(i, p);
                if x == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + x * bt.get(p, j));
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = x.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain { op: "log", value: bad });
        }
        let v = x.map(f64::ln);
        Ok(self.push(Op::Log(a), v))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = x.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(AutodiffError::Domain { op: "sqrt", value: bad });
        }
        let v = x.map(f64::sqrt);
        Ok(self.push(Op::Sqrt(a), v))
    }

    /// `log(sum(exp(a)))` over all elements, stabilized by max-subtraction.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let v = logsumexp(self.value(a).data());
        self.push(Op::LogSumExp(a), Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(v))
    }

    /// Vertical concatenation of tensors with equal column counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Empty { op: "concat" });
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::from_vec(rows, cols, data)))
    }

    /// Element at flat (row-major) index `idx`, as a scalar node.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let t = self.value(a);
        if idx >= t.len() {
            return Err(AutodiffError::Index { op: "pick", index: idx, len: t.len() });
        }
        let v = t.data()[idx];
        Ok(self.push(Op::Pick(a, idx), Tensor::scalar(v)))
    }

    /// Row `r` of a matrix as a column vector.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(AutodiffError::Index { op: "row", index: r, len: t.rows() });
        }
        let v = Tensor::vector(t.row(r).to_vec());
        Ok(self.push(Op::Row(a, r), v))
    }

    /// `sum(a * b)` for equal shapes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err("dot", self.value(a), self.value(b)));
        }
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// `m v + b`.
    pub fn affine(&mut self, m: Var, v: Var, b: Var) -> Result<Var> {
        let mv = self.matvec(m, v)?;
        self.add(mv, b)
    }

    /// Reverse sweep from a scalar root.
    pub fn gradients(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot { shape: rv.shape() });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));

        fn acc(adj: &mut [Option<Tensor>], var: Var, g: Tensor) {
            match &mut adj[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, unbroadcast(g.clone(), self.value(*a)));
                    acc(&mut adj, *b, unbroadcast(g.clone(), self.value(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, unbroadcast(g.clone(), self.value(*a)));
                    acc(&mut adj, *b, unbroadcast(g.map(|x| -x), self.value(*b)));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = broadcast("mul", &g, bv, |g, b| g * b)?;
                    let gb = broadcast("mul", &g, av, |g, a| g * a)?;
                    acc(&mut adj, *a, unbroadcast(ga, av));
                    acc(&mut adj, *b, unbroadcast(gb, bv));
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = broadcast("div", &g, bv, |g, b| g / b)?;
                    // d(a/b)/db = -y/b
                    let gy = broadcast("div", &g, y, |g, y| g * y)?;
                    let gb = broadcast("div", &gy, bv, |gy, b| -gy / b)?;
                    acc(&mut adj, *a, unbroadcast(ga, av));
                    acc(&mut adj, *b, unbroadcast(gb, bv));
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g.map(|x| c * x)),
                Op::Offset(a) => acc(&mut adj, *a, g.clone()),
                Op::MatVec(m, v) => {
                    let (mt, vt) = (self.value(*m), self.value(*v));
                    let mut gm = Tensor::zeros(mt.rows(), mt.cols());
                    let mut gv = vec![0.0; mt.cols()];
                    for r in 0..mt.rows() {
                        let gr = g.data()[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = mt.row(r);
                        let out = &mut gm.data_mut()[r * mt.cols()..(r + 1) * mt.cols()];
                        for c in 0..mt.cols() {
                            out[c] = gr * vt.data()[c];
                            gv[c] += gr * row[c];
                        }
                    }
                    acc(&mut adj, *m, gm);
                    acc(&mut adj, *v, Tensor::vector(gv));
                }
                Op::MatMul(a, b) => {
                    let (at, bt) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (at.rows(), at.cols(), bt.cols());
                    let mut ga = Tensor::zeros(n, k);
                    let mut gb = Tensor::zeros(k, m);
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                let gij = g.get(i, j);
                                s += gij * bt.get(p, j);
                                let cur = gb.get(p, j);
                                gb.set(p, j, cur + at.get(i, p) * gij);
                            }
                            ga.set(i, p, s);
                        }
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Tanh(a) => {
                    let d = broadcast("tanh", &g, y, |g, y| g * (1.0 - y * y))?;
                    acc(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = broadcast("sigmoid", &g, y, |g, y| g * y * (1.0 - y))?;
                    acc(&mut adj, *a, d);
                }
                Op::Exp(a) => {
                    let d = broadcast("exp", &g, y, |g, y| g * y)?;
                    acc(&mut adj, *a, d);
                }
                Op::Log(a) => {
                    let d = broadcast("log", &g, self.value(*a), |g, x| g / x)?;
                    acc(&mut adj, *a, d);
                }
                Op::Softplus(a) => {
                    let d = broadcast("softplus", &g, self.value(*a), |g, x| g * sigmoid(x))?;
                    acc(&mut adj, *a, d);
                }
                Op::Sqrt(a) => {
                    let d = broadcast("sqrt", &g, y, |g, y| g / (2.0 * y))?;
                    acc(&mut adj, *a, d);
                }
                Op::LogSumExp(a) => {
                    let (gs, lse) = (g.item(), y.item());
                    acc(&mut adj, *a, self.value(*a).map(|x| gs * (x - lse).exp()));
                }
                Op::Sum(a) => {
                    let gs = g.item();
                    let av = self.value(*a);
                    acc(&mut adj, *a, Tensor::filled(av.rows(), av.cols(), gs));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pt = self.value(p);
                        let n = pt.len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        acc(&mut adj, p, Tensor::from_vec(pt.rows(), pt.cols(), slice));
                        offset += n;
                    }
                }
                Op::Pick(a, i) => {
                    let av = self.value(*a);
                    let mut d = Tensor::zeros(av.rows(), av.cols());
                    d.data_mut()[*i] = g.item();
                    acc(&mut adj, *a, d);
                }
                Op::Row(a, r) => {
                    let av = self.value(*a);
                    let mut d = Tensor::zeros(av.rows(), av.cols());
                    let cols = av.cols();
                    d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                    acc(&mut adj, *a, d);
                }
            }
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Backpropagate from `root` and add the parameter gradients into `store`.
    /// Calling twice without [`ParamStore::zero_grad`] accumulates.
    pub fn backward(&self, root: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(root)?;
        for &(id, var) in &self.bound {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }
}
