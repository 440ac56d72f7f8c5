//! Eager reverse-mode autodiff tape over a fixed op set.
//!
//! Forward values are computed at op-creation time, so model code can branch
//! on intermediate values (softmax max-subtraction, clamp bounds). Backward
//! walks the node list in reverse, accumulating adjoints only into subgraphs
//! that can reach a parameter, and finally adds leaf adjoints into the bound
//! [`ParamStore`] gradients (the caller zeroes them).
//!
//! The op vocabulary is deliberately small and fixed: dense matrix/vector
//! products, elementwise maps, concatenation/slicing, reductions, and scalar
//! arithmetic. Shape mismatches error naming the op and the shapes; any
//! non-finite intermediate errors with the node index.
//!
//! ```
//! use magail::numerics::{Tape, Tensor, ParamStore};
//!
//! let mut store = ParamStore::new();
//! store.insert("x", Tensor::from_vec(vec![2.0, 0.0]).unwrap()).unwrap();
//! let mut tape = Tape::new();
//! let x = tape.param(&store, "x").unwrap();
//! let loss = tape.dot(x, x).unwrap();
//! tape.backward(loss).unwrap();
//! tape.grads_into(&mut store).unwrap();
//! assert_eq!(store.grad("x").unwrap(), &[4.0, 0.0]);
//! ```

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `A[m,n] · v[n] -> [m]`
    MatVec(TensorRef, TensorRef),
    /// `Aᵀ[m,n] · v[m] -> [n]`
    TMatVec(TensorRef, TensorRef),
    /// `A[m,n] · B[n,p] -> [m,p]`
    MatMul(TensorRef, TensorRef),
    /// `a[m] ⊗ b[n] -> [m,n]`
    Outer(TensorRef, TensorRef),
    /// Row j of `M[k,l]` scaled by `v[j]`.
    ScaleRows(TensorRef, TensorRef),
    /// `M[r,c] + v[c]` added to every row.
    AddRowBroadcast(TensorRef, TensorRef),
    Add(TensorRef, TensorRef),
    Sub(TensorRef, TensorRef),
    Mul(TensorRef, TensorRef),
    Min(TensorRef, TensorRef),
    Tanh(TensorRef),
    Sigmoid(TensorRef),
    Exp(TensorRef),
    Ln(TensorRef),
    Recip(TensorRef),
    Clamp(TensorRef, f64, f64),
    Scale(TensorRef, f64),
    AddScalar(TensorRef),
    /// Tensor times a scalar node (shape `[1]`), broadcast.
    MulScalarNode(TensorRef, TensorRef),
    Concat(Vec<TensorRef>),
    Slice(TensorRef, usize, usize),
    Sum(TensorRef),
    Mean(TensorRef),
    Dot(TensorRef, TensorRef),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Build ops forward, then call [`Tape::backward`] on a
/// scalar node and drain gradients with [`Tape::grads_into`].
pub struct Tape {
    nodes: Vec<Node>,
    /// (node index, parameter name) for every bound parameter leaf.
    bindings: Vec<(usize, String)>,
    /// Adjoints populated by `backward`; retained only for leaf nodes.
    adjoints: Vec<Option<Vec<f64>>>,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), bindings: Vec::new(), adjoints: Vec::new() }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, r: TensorRef) -> &Tensor {
        &self.nodes[r.0].value
    }

    /// Constant leaf: participates in forward only, never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> TensorRef {
        self.push_leaf(value, false)
    }

    /// Gradient-tracked leaf not bound to a parameter name. Its adjoint is
    /// available through [`Tape::adjoint`] after `backward`.
    pub fn input(&mut self, value: Tensor) -> TensorRef {
        self.push_leaf(value, true)
    }

    /// Gradient-tracked leaf bound to `name` in `store`; `grads_into` will
    /// accumulate its adjoint into the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<TensorRef> {
        let value = store.value(name)?.clone();
        let r = self.push_leaf(value, true);
        self.bindings.push((r.0, name.to_string()));
        Ok(r)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> TensorRef {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        TensorRef(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, op_name: &str) -> Result<TensorRef> {
        let idx = self.nodes.len();
        value
            .check_finite(&format!("{op_name} (node {idx})"))
            .map_err(|_| Error::NonFinite { context: format!("{op_name} (node {idx})") })?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(TensorRef(idx))
    }

    fn needs(&self, r: TensorRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    fn want_2d(&self, r: TensorRef, op: &str) -> Result<(usize, usize)> {
        let s = self.value(r).shape();
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::shape(op, format!("expected 2-D, got {s:?}")))
        }
    }

    fn want_1d(&self, r: TensorRef, op: &str) -> Result<usize> {
        let s = self.value(r).shape();
        if s.len() == 1 {
            Ok(s[0])
        } else {
            Err(Error::shape(op, format!("expected 1-D, got {s:?}")))
        }
    }

    // ---- dense products ----

    /// `A[m,n] · v[n] -> [m]`
    pub fn matvec(&mut self, a: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (m, n) = self.want_2d(a, "matvec")?;
        let vn = self.want_1d(v, "matvec")?;
        if n != vn {
            return Err(Error::shape("matvec", format!("[{m},{n}] x [{vn}]")));
        }
        let ad = self.value(a).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * vd[j];
            }
            out[i] = acc;
        }
        let g = self.needs(a) || self.needs(v);
        self.push(Tensor::from_parts(vec![m], out), Op::MatVec(a, v), g, "matvec")
    }

    /// `Aᵀ · v`, i.e. `[m,n]ᵀ · [m] -> [n]`, without materializing `Aᵀ`.
    pub fn tmatvec(&mut self, a: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (m, n) = self.want_2d(a, "tmatvec")?;
        let vm = self.want_1d(v, "tmatvec")?;
        if m != vm {
            return Err(Error::shape("tmatvec", format!("[{m},{n}]T x [{vm}]")));
        }
        let ad = self.value(a).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let vi = vd[i];
            for j in 0..n {
                out[j] += row[j] * vi;
            }
        }
        let g = self.needs(a) || self.needs(v);
        self.push(Tensor::from_parts(vec![n], out), Op::TMatVec(a, v), g, "tmatvec")
    }

    /// `A[m,n] · B[n,p] -> [m,p]`
    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, n) = self.want_2d(a, "matmul")?;
        let (bn, p) = self.want_2d(b, "matmul")?;
        if n != bn {
            return Err(Error::shape("matmul", format!("[{m},{n}] x [{bn},{p}]")));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for k in 0..n {
                let aik = ad[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[k * p..(k + 1) * p];
                let orow = &mut out[i * p..(i + 1) * p];
                for j in 0..p {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let g = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(vec![m, p], out), Op::MatMul(a, b), g, "matmul")
    }

    /// Outer product `a[m] ⊗ b[n] -> [m,n]`.
    pub fn outer(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let m = self.want_1d(a, "outer")?;
        let n = self.want_1d(b, "outer")?;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ai = ad[i];
            for j in 0..n {
                out[i * n + j] = ai * bd[j];
            }
        }
        let g = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Outer(a, b), g, "outer")
    }

    /// Scales row `j` of `M[k,l]` by `v[j]`.
    pub fn scale_rows(&mut self, m: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (k, l) = self.want_2d(m, "scale_rows")?;
        let vk = self.want_1d(v, "scale_rows")?;
        if k != vk {
            return Err(Error::shape("scale_rows", format!("[{k},{l}] rows vs [{vk}]")));
        }
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; k * l];
        for j in 0..k {
            let vj = vd[j];
            for i in 0..l {
                out[j * l + i] = md[j * l + i] * vj;
            }
        }
        let g = self.needs(m) || self.needs(v);
        self.push(Tensor::from_parts(vec![k, l], out), Op::ScaleRows(m, v), g, "scale_rows")
    }

    /// Adds `v[c]` to every row of `M[r,c]`.
    pub fn add_row_broadcast(&mut self, m: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.want_2d(m, "add_row_broadcast")?;
        let vc = self.want_1d(v, "add_row_broadcast")?;
        if c != vc {
            return Err(Error::shape("add_row_broadcast", format!("[{r},{c}] cols vs [{vc}]")));
        }
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = md[i * c + j] + vd[j];
            }
        }
        let g = self.needs(m) || self.needs(v);
        self.push(Tensor::from_parts(vec![r, c], out), Op::AddRowBroadcast(m, v), g, "add_row_broadcast")
    }

    // ---- elementwise binary ----

    fn binary(
        &mut self,
        a: TensorRef,
        b: TensorRef,
        op_name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(TensorRef, TensorRef) -> Op,
    ) -> Result<TensorRef> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let g = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(shape, out), op(a, b), g, op_name)
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; subgradient follows the smaller argument (ties → first).
    pub fn min(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min)
    }

    // ---- elementwise unary ----

    fn unary(
        &mut self,
        a: TensorRef,
        op_name: &str,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<TensorRef> {
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let g = self.needs(a);
        self.push(Tensor::from_parts(shape, out), op, g, op_name)
    }

    pub fn tanh(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(a, "ln", f64::ln, Op::Ln(a))
    }

    pub fn recip(&mut self, a: TensorRef) -> Result<TensorRef> {
        self.unary(a, "recip", |x| 1.0 / x, Op::Recip(a))
    }

    /// Clamp with pass-through subgradient strictly inside `[lo, hi]`.
    pub fn clamp(&mut self, a: TensorRef, lo: f64, hi: f64) -> Result<TensorRef> {
        if lo > hi {
            return Err(Error::shape("clamp", format!("lo {lo} > hi {hi}")));
        }
        self.unary(a, "clamp", |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn scale(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        self.unary(a, "scale", |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: TensorRef, c: f64) -> Result<TensorRef> {
        self.unary(a, "add_scalar", |x| x + c, Op::AddScalar(a))
    }

    /// Broadcast-multiplies tensor `a` by scalar node `s` (shape `[1]`).
    pub fn mul_scalar_node(&mut self, a: TensorRef, s: TensorRef) -> Result<TensorRef> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape(
                "mul_scalar_node",
                format!("scalar operand has shape {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).data()[0];
        let shape = self.value(a).shape().to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x * sv).collect();
        let g = self.needs(a) || self.needs(s);
        self.push(Tensor::from_parts(shape, out), Op::MulScalarNode(a, s), g, "mul_scalar_node")
    }

    // ---- structure ----

    /// Concatenates 1-D tensors in order.
    pub fn concat(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(Error::EmptyInput { what: "concat parts" });
        }
        let mut out = Vec::new();
        let mut g = false;
        for &p in parts {
            self.want_1d(p, "concat")?;
            out.extend_from_slice(self.value(p).data());
            g |= self.needs(p);
        }
        let n = out.len();
        self.push(Tensor::from_parts(vec![n], out), Op::Concat(parts.to_vec()), g, "concat")
    }

    /// 1-D slice `[start, start+len)`.
    pub fn slice(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let n = self.want_1d(a, "slice")?;
        if start + len > n || len == 0 {
            return Err(Error::shape("slice", format!("[{start}, {start}+{len}) of [{n}]")));
        }
        let out = self.value(a).data()[start..start + len].to_vec();
        let g = self.needs(a);
        self.push(Tensor::from_parts(vec![len], out), Op::Slice(a, start, len), g, "slice")
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: TensorRef) -> Result<TensorRef> {
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.needs(a);
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Sum(a), g, "sum")
    }

    pub fn mean(&mut self, a: TensorRef) -> Result<TensorRef> {
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.needs(a);
        self.push(Tensor::from_parts(vec![1], vec![s / n]), Op::Mean(a), g, "mean")
    }

    pub fn dot(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let n = self.want_1d(a, "dot")?;
        let m = self.want_1d(b, "dot")?;
        if n != m {
            return Err(Error::shape("dot", format!("[{n}] · [{m}]")));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x * y)
            .sum();
        let g = self.needs(a) || self.needs(b);
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Dot(a, b), g, "dot")
    }

    // ---- backward ----

    /// Runs reverse-mode accumulation from a scalar `loss` node.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar [1], got {:?}", self.value(loss).shape()),
            ));
        }
        self.adjoints = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // loss does not depend on any tracked leaf
        }
        self.adjoints[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.adjoints[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // retained for grads_into / adjoint()
            }
            let up = self.adjoints[i].take().expect("adjoint present");
            self.propagate(i, &up);
        }
        Ok(())
    }

    fn adj_mut(&mut self, r: TensorRef) -> &mut Vec<f64> {
        let len = self.nodes[r.0].value.len();
        self.adjoints[r.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, idx: usize, up: &[f64]) {
        // Ops are recorded with strictly increasing indices, so inputs of node
        // `idx` are < idx and their adjoints are still accumulating.
        macro_rules! needs {
            ($r:expr) => {
                self.nodes[$r.0].needs_grad
            };
        }
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatVec(a, v) => {
                let (a, v) = (*a, *v);
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                if needs!(a) {
                    let vd = self.nodes[v.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..m {
                        let ui = up[i];
                        if ui == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            da[i * n + j] += ui * vd[j];
                        }
                    }
                }
                if needs!(v) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let dv = self.adj_mut(v);
                    for i in 0..m {
                        let ui = up[i];
                        if ui == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            dv[j] += ui * ad[i * n + j];
                        }
                    }
                }
            }
            Op::TMatVec(a, v) => {
                let (a, v) = (*a, *v);
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                if needs!(a) {
                    let vd = self.nodes[v.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..m {
                        let vi = vd[i];
                        if vi == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            da[i * n + j] += vi * up[j];
                        }
                    }
                }
                if needs!(v) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let dv = self.adj_mut(v);
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += ad[i * n + j] * up[j];
                        }
                        dv[i] += acc;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, n) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let p = self.nodes[b.0].value.cols();
                if needs!(a) {
                    // dA = up · Bᵀ
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..m {
                        for k in 0..n {
                            let mut acc = 0.0;
                            for j in 0..p {
                                acc += up[i * p + j] * bd[k * p + j];
                            }
                            da[i * n + k] += acc;
                        }
                    }
                }
                if needs!(b) {
                    // dB = Aᵀ · up
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let db = self.adj_mut(b);
                    for i in 0..m {
                        for k in 0..n {
                            let aik = ad[i * n + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..p {
                                db[k * p + j] += aik * up[i * p + j];
                            }
                        }
                    }
                }
            }
            Op::Outer(a, b) => {
                let (a, b) = (*a, *b);
                let m = self.nodes[a.0].value.len();
                let n = self.nodes[b.0].value.len();
                if needs!(a) {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..m {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += up[i * n + j] * bd[j];
                        }
                        da[i] += acc;
                    }
                }
                if needs!(b) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let db = self.adj_mut(b);
                    for i in 0..m {
                        let ai = ad[i];
                        if ai == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[j] += ai * up[i * n + j];
                        }
                    }
                }
            }
            Op::ScaleRows(m_ref, v) => {
                let (m_ref, v) = (*m_ref, *v);
                let (k, l) = (self.nodes[m_ref.0].value.rows(), self.nodes[m_ref.0].value.cols());
                if needs!(m_ref) {
                    let vd = self.nodes[v.0].value.data().to_vec();
                    let dm = self.adj_mut(m_ref);
                    for j in 0..k {
                        let vj = vd[j];
                        for i in 0..l {
                            dm[j * l + i] += up[j * l + i] * vj;
                        }
                    }
                }
                if needs!(v) {
                    let md = self.nodes[m_ref.0].value.data().to_vec();
                    let dv = self.adj_mut(v);
                    for j in 0..k {
                        let mut acc = 0.0;
                        for i in 0..l {
                            acc += up[j * l + i] * md[j * l + i];
                        }
                        dv[j] += acc;
                    }
                }
            }
            Op::AddRowBroadcast(m_ref, v) => {
                let (m_ref, v) = (*m_ref, *v);
                let (r, c) = (self.nodes[m_ref.0].value.rows(), self.nodes[m_ref.0].value.cols());
                if needs!(m_ref) {
                    let dm = self.adj_mut(m_ref);
                    for i in 0..r * c {
                        dm[i] += up[i];
                    }
                }
                if needs!(v) {
                    let dv = self.adj_mut(v);
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] += up[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for (d, u) in da.iter_mut().zip(up) {
                        *d += u;
                    }
                }
                if needs!(b) {
                    let db = self.adj_mut(b);
                    for (d, u) in db.iter_mut().zip(up) {
                        *d += u;
                    }
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for (d, u) in da.iter_mut().zip(up) {
                        *d += u;
                    }
                }
                if needs!(b) {
                    let db = self.adj_mut(b);
                    for (d, u) in db.iter_mut().zip(up) {
                        *d -= u;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if needs!(a) {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * bd[i];
                    }
                }
                if needs!(b) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let db = self.adj_mut(b);
                    for i in 0..up.len() {
                        db[i] += up[i] * ad[i];
                    }
                }
            }
            Op::Min(a, b) => {
                let (a, b) = (*a, *b);
                let ad = self.nodes[a.0].value.data().to_vec();
                let bd = self.nodes[b.0].value.data().to_vec();
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        if ad[i] <= bd[i] {
                            da[i] += up[i];
                        }
                    }
                }
                if needs!(b) {
                    let db = self.adj_mut(b);
                    for i in 0..up.len() {
                        if ad[i] > bd[i] {
                            db[i] += up[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let a = *a;
                if needs!(a) {
                    let y = self.nodes[idx].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                if needs!(a) {
                    let y = self.nodes[idx].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Exp(a) => {
                let a = *a;
                if needs!(a) {
                    let y = self.nodes[idx].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * y[i];
                    }
                }
            }
            Op::Ln(a) => {
                let a = *a;
                if needs!(a) {
                    let x = self.nodes[a.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] / x[i];
                    }
                }
            }
            Op::Recip(a) => {
                let a = *a;
                if needs!(a) {
                    let y = self.nodes[idx].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] -= up[i] * y[i] * y[i];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                if needs!(a) {
                    let x = self.nodes[a.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        if x[i] >= lo && x[i] <= hi {
                            da[i] += up[i];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * c;
                    }
                }
            }
            Op::AddScalar(a) => {
                let a = *a;
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for (d, u) in da.iter_mut().zip(up) {
                        *d += u;
                    }
                }
            }
            Op::MulScalarNode(a, s) => {
                let (a, s) = (*a, *s);
                let sv = self.nodes[s.0].value.data()[0];
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for i in 0..up.len() {
                        da[i] += up[i] * sv;
                    }
                }
                if needs!(s) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let ds = self.adj_mut(s);
                    let mut acc = 0.0;
                    for i in 0..up.len() {
                        acc += up[i] * ad[i];
                    }
                    ds[0] += acc;
                }
            }
            Op::Concat(parts) => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if needs!(p) {
                        let dp = self.adj_mut(p);
                        for i in 0..len {
                            dp[i] += up[off + i];
                        }
                    }
                    off += len;
                }
            }
            Op::Slice(a, start, len) => {
                let (a, start, len) = (*a, *start, *len);
                if needs!(a) {
                    let da = self.adj_mut(a);
                    for i in 0..len {
                        da[start + i] += up[i];
                    }
                }
            }
            Op::Sum(a) => {
                let a = *a;
                if needs!(a) {
                    let u = up[0];
                    let da = self.adj_mut(a);
                    for d in da.iter_mut() {
                        *d += u;
                    }
                }
            }
            Op::Mean(a) => {
                let a = *a;
                if needs!(a) {
                    let n = self.nodes[a.0].value.len() as f64;
                    let u = up[0] / n;
                    let da = self.adj_mut(a);
                    for d in da.iter_mut() {
                        *d += u;
                    }
                }
            }
            Op::Dot(a, b) => {
                let (a, b) = (*a, *b);
                let u = up[0];
                if needs!(a) {
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let da = self.adj_mut(a);
                    for i in 0..bd.len() {
                        da[i] += u * bd[i];
                    }
                }
                if needs!(b) {
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let db = self.adj_mut(b);
                    for i in 0..ad.len() {
                        db[i] += u * ad[i];
                    }
                }
            }
        }
    }

    /// Adjoint of a leaf node after `backward` (None when untouched).
    pub fn adjoint(&self, r: TensorRef) -> Option<&[f64]> {
        self.adjoints.get(r.0).and_then(|a| a.as_deref())
    }

    /// Accumulates adjoints of bound parameter leaves into the store's grads.
    pub fn grads_into(&self, store: &mut ParamStore) -> Result<()> {
        for (idx, name) in &self.bindings {
            if let Some(adj) = self.adjoints.get(*idx).and_then(|a| a.as_ref()) {
                store.grad_add(name, adj)?;
            }
        }
        Ok(())
    }
}

/// Builds a graph with `build`, backpropagates from the returned scalar loss,
/// and accumulates gradients into `store` (caller zeroes them). Returns the
/// loss value.
pub fn forward_backward<F>(store: &mut ParamStore, build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<TensorRef>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let value = tape.value(loss).scalar_value()?;
    tape.backward(loss)?;
    tape.grads_into(store)?;
    Ok(value)
}
