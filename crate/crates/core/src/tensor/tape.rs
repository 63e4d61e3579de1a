//! Recorded forward computations and their reverse pass.
//!
//! A [`Tape`] borrows the [`ParamStore`] for the duration of one forward
//! computation. Every op appends a node holding its output; `backward` walks
//! the nodes in reverse and returns one gradient per parameter. A tape can be
//! differentiated exactly once.

use super::{check_dropout_rate, dropout_mask, gemm, Gradients, ParamId, ParamStore, Result, RngState, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Batch of sparse rows in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    dim: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(dim: usize) -> Self {
        SparseRows {
            dim,
            offsets: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push_row(&mut self, indices: &[usize], values: &[f64]) -> Result<()> {
        if indices.len() != values.len() {
            return Err(TensorError::Contract("sparse row index/value lengths differ".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim) {
            return Err(TensorError::Shape {
                op: "sparse_row",
                left: (1, self.dim),
                right: (1, bad + 1),
            });
        }
        self.indices.extend_from_slice(indices);
        self.values.extend_from_slice(values);
        self.offsets.push(self.indices.len());
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows(), self.dim);
        for r in 0..self.rows() {
            let (idx, val) = self.row(r);
            for (&i, &v) in idx.iter().zip(val) {
                t.set(r, i, t.get(r, i) + v);
            }
        }
        t
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    SparseMatMul(SparseRows, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Dropout(NodeId, Vec<f64>),
    Scale(NodeId, f64),
    Sum(NodeId),
    SumSquares(NodeId),
    LogSoftmaxRows(NodeId),
    Diag(NodeId),
    BceWithLogits(NodeId, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    // Empty for `Param` nodes, whose value lives in the store.
    value: Tensor,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    differentiated: bool,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            differentiated: false,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.store.value(p),
            _ => &node.value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant, t, false)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id), Tensor::zeros(0, 0), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(TensorError::Shape {
                op: "matmul",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = Tensor::zeros(va.rows(), vb.cols());
        gemm(va, false, vb, false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut out = Tensor::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulNt(a, b), out, rg))
    }

    /// Sparse input times dense weight, computed by gathering weight rows.
    pub fn sparse_matmul(&mut self, input: SparseRows, weight: NodeId) -> Result<NodeId> {
        let w = self.value(weight);
        if input.dim() != w.rows() {
            return Err(TensorError::Shape {
                op: "sparse_matmul",
                left: (input.rows(), input.dim()),
                right: w.shape(),
            });
        }
        let mut out = Tensor::zeros(input.rows(), w.cols());
        for r in 0..input.rows() {
            let (idx, val) = input.row(r);
            let dst = out.row_mut(r);
            for (&i, &v) in idx.iter().zip(val) {
                for (o, &wv) in dst.iter_mut().zip(w.row(i)) {
                    *o += v * wv;
                }
            }
        }
        let rg = self.rg(weight);
        Ok(self.push(Op::SparseMatMul(input, weight), out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(TensorError::Shape {
                op: "add_row",
                left: vx.shape(),
                right: vb.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddRow(x, bias), out, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = super::relu(self.value(x));
        let rg = self.rg(x);
        self.push(Op::Relu(x), out, rg)
    }

    /// Inverted dropout; identity (same node) when not training or rate is 0.
    pub fn dropout(&mut self, x: NodeId, rate: f64, training: bool, rng: &mut RngState) -> Result<NodeId> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let vx = self.value(x);
        let mask = dropout_mask(vx.len(), rate, rng);
        let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_vec(vx.rows(), vx.cols(), data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Dropout(x, mask), out, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(Op::Scale(x, c), out, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = pairwise_sum(self.value(x).data());
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let sq: Vec<f64> = self.value(x).data().iter().map(|v| v * v).collect();
        let s = pairwise_sum(&sq);
        let rg = self.rg(x);
        self.push(Op::SumSquares(x), Tensor::scalar(s), rg)
    }

    /// Row-wise log-softmax, stabilised by subtracting the row maximum.
    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(x);
        self.push(Op::LogSoftmaxRows(x), out, rg)
    }

    /// Main diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rows() != vx.cols() {
            return Err(TensorError::Shape {
                op: "diag",
                left: vx.shape(),
                right: vx.shape(),
            });
        }
        let data = (0..vx.rows()).map(|i| vx.get(i, i)).collect();
        let out = Tensor::from_vec(vx.rows(), 1, data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::Diag(x), out, rg))
    }

    /// Mean binary cross-entropy of an `n x 1` logit column against targets
    /// in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        let vz = self.value(logits);
        if vz.cols() != 1 || vz.rows() != targets.len() || targets.is_empty() {
            return Err(TensorError::Shape {
                op: "bce_with_logits",
                left: vz.shape(),
                right: (targets.len(), 1),
            });
        }
        let terms: Vec<f64> = vz
            .data()
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .collect();
        let loss = pairwise_sum(&terms) / targets.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(Op::BceWithLogits(logits, targets), Tensor::scalar(loss), rg))
    }

    /// Hash of every ReLU's active/inactive pattern. Two forward passes with
    /// the same signature are on the same linear piece of the network.
    pub fn relu_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &v in self.value(x).data() {
                    h ^= (v > 0.0) as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Reverse pass from the scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.differentiated {
            return Err(TensorError::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        self.differentiated = true;

        let mut param_grads: Vec<Tensor> = self
            .store
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(p) => add_into(&mut param_grads[p.0], &g),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let vb = self.value(b);
                        let mut da = Tensor::zeros(g.rows(), vb.rows());
                        gemm(&g, false, vb, true, &mut da, 0.0);
                        accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let va = self.value(a);
                        let mut db = Tensor::zeros(va.cols(), g.cols());
                        gemm(va, true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let vb = self.value(b);
                        let mut da = Tensor::zeros(g.rows(), vb.cols());
                        gemm(&g, false, vb, false, &mut da, 0.0);
                        accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let va = self.value(a);
                        let mut db = Tensor::zeros(g.cols(), va.cols());
                        gemm(&g, true, va, false, &mut db, 0.0);
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::SparseMatMul(input, w) => {
                    let w = *w;
                    let vw = self.value(w);
                    let mut dw = Tensor::zeros(vw.rows(), vw.cols());
                    for r in 0..input.rows() {
                        let (idx, val) = input.row(r);
                        let gr = g.row(r);
                        for (&j, &v) in idx.iter().zip(val) {
                            for (d, &gv) in dw.row_mut(j).iter_mut().zip(gr) {
                                *d += v * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, w, dw);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::AddRow(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.rg(bias) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, &gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads, bias, db);
                    }
                    if self.rg(x) {
                        accumulate(&mut grads, x, g);
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let vx = self.value(x);
                    let data = g
                        .data()
                        .iter()
                        .zip(vx.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, Tensor::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Dropout(x, mask) => {
                    let data = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    let x = *x;
                    accumulate(&mut grads, x, Tensor::from_vec(g.rows(), g.cols(), data)?);
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    accumulate(&mut grads, x, g.map(|v| v * c));
                }
                Op::Sum(x) => {
                    let x = *x;
                    let s = g.data()[0];
                    let (r, c) = self.value(x).shape();
                    accumulate(&mut grads, x, Tensor::from_vec(r, c, vec![s; r * c])?);
                }
                Op::SumSquares(x) => {
                    let x = *x;
                    let s = g.data()[0];
                    let dx = self.value(x).map(|v| 2.0 * v * s);
                    accumulate(&mut grads, x, dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let x = *x;
                    let y = &self.nodes[i].value;
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (d, &yv) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
                            *d -= yv.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Diag(x) => {
                    let x = *x;
                    let n = g.rows();
                    let mut dx = Tensor::zeros(n, n);
                    for k in 0..n {
                        dx.set(k, k, g.data()[k]);
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::BceWithLogits(z, targets) => {
                    let z = *z;
                    let s = g.data()[0] / targets.len() as f64;
                    let data = self
                        .value(z)
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&zv, &t)| (sigmoid(zv) - t) * s)
                        .collect();
                    accumulate(&mut grads, z, Tensor::from_vec(targets.len(), 1, data)?);
                }
            }
        }
        Ok(Gradients(param_grads))
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => add_into(existing, &g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pairwise summation; result is independent of thread scheduling and has
/// O(log n) error growth.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        // loss = sum(W · x) with W 2x2, x = [3, 5]ᵀ fixed.
        // d loss / d W[i][j] = x[j].
        let mut store = ParamStore::new();
        let w = store.add(Tensor::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]));
        let mut tape = Tape::new(&store);
        let wn = tape.param(w);
        let x = tape.constant(Tensor::from_rows(&[[3.0], [5.0]]));
        let y = tape.matmul(wn, x).unwrap();
        let loss = tape.sum(y);
        assert_eq!(tape.value(loss).item().unwrap(), 1.0 * 3.0 + 2.0 * 5.0 - 3.0 + 2.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), &Tensor::from_rows(&[[3.0, 5.0], [3.0, 5.0]]));
    }

    #[test]
    fn unused_parameter_has_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.add(Tensor::scalar(2.0));
        let unused = store.add(Tensor::from_rows(&[[1.0, 1.0]]));
        let mut tape = Tape::new(&store);
        let u = tape.param(used);
        let loss = tape.sum_squares(u);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(used).data(), &[4.0]);
        assert!(grads.get(unused).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::scalar(1.0));
        let mut tape = Tape::new(&store);
        let n = tape.param(p);
        let loss = tape.sum(n);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(TensorError::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::zeros(2, 2));
        let mut tape = Tape::new(&store);
        let n = tape.param(p);
        assert!(matches!(tape.backward(n), Err(TensorError::Contract(_))));
    }

    #[test]
    fn relu_gradient_passes_where_positive() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::from_rows(&[[3.0, -2.0, 0.0]]));
        let mut tape = Tape::new(&store);
        let n = tape.param(p);
        let r = tape.relu(n);
        let loss = tape.sum(r);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sparse_matmul_matches_dense() {
        let mut store = ParamStore::new();
        let w = store.add(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        let mut rows = SparseRows::new(3);
        rows.push_row(&[0, 2], &[1.0, 1.0]).unwrap();
        rows.push_row(&[1], &[2.0]).unwrap();
        let dense = rows.to_dense();
        let mut tape = Tape::new(&store);
        let wn = tape.param(w);
        let out = tape.sparse_matmul(rows, wn).unwrap();
        assert_eq!(tape.value(out), &super::super::matmul(&dense, store.value(w)).unwrap());
    }

    #[test]
    fn sparse_row_out_of_bounds_rejected() {
        let mut rows = SparseRows::new(3);
        assert!(rows.push_row(&[3], &[1.0]).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn bce_at_zero_logit() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::from_rows(&[[0.0]]));
        let mut tape = Tape::new(&store);
        let z = tape.param(p);
        let loss = tape.bce_with_logits(z, vec![1.0]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
