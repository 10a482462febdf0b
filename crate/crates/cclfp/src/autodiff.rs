//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Operations execute eagerly and record themselves on a [`GradientTape`];
//! [`GradientTape::backward`] replays the tape in reverse, accumulating a
//! gradient matrix per node. The op set is exactly what the crate's losses
//! need: linear layers, ReLU, pairwise Euclidean distances, row softmax,
//! cross-entropy and the distance-based contrastive reductions.
//!
//! Constants (e.g. embeddings from a frozen extractor) enter as
//! [`GradientTape::leaf`] nodes: no gradient is ever propagated into them or
//! through subgraphs built only from them.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Index of a node on a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; gradients stop here.
    Leaf,
    /// Trainable input; gradients are accumulated and can be read back.
    Param,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    Neg(NodeId),
    /// Broadcast-add a 1 x c row vector to every row of an n x c matrix.
    AddRowVec(NodeId, NodeId),
    Relu(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatRows(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
    PairwiseEuclidean {
        a: NodeId,
        b: NodeId,
    },
    RowSoftmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    /// Supervised contrastive reduction over a matrix of similarity logits
    /// (rows = anchors); see [`GradientTape::supcon_from_logits`].
    SupCon(NodeId),
}

#[derive(Debug)]
struct TapeNode {
    op: Op,
    value: DenseMatrix,
    requires_grad: bool,
    /// Auxiliary matrix some backward rules need (softmax probabilities for
    /// cross-entropy, the ready-made logit gradient for SupCon).
    saved: Option<DenseMatrix>,
}

/// Records forward operations and computes reverse-mode gradients.
#[derive(Debug, Default)]
pub struct GradientTape {
    nodes: Vec<TapeNode>,
    grads: Vec<Option<DenseMatrix>>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseMatrix, requires_grad: bool) -> NodeId {
        self.push_saved(op, value, requires_grad, None)
    }

    fn push_saved(
        &mut self,
        op: Op,
        value: DenseMatrix,
        requires_grad: bool,
        saved: Option<DenseMatrix>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(TapeNode {
            op,
            value,
            requires_grad,
            saved,
        });
        self.grads.push(None);
        id
    }

    fn node(&self, id: NodeId) -> &TapeNode {
        &self.nodes[id.0]
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `id`.
    /// `None` if no gradient flowed to this node.
    pub fn grad(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.grads[id.0].as_ref()
    }

    /// Constant input node; backward never writes into it.
    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable input node.
    pub fn param(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Param, value, true)
    }

    fn requires_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.matmul(&self.node(b).value)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.add(&self.node(b).value)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.sub(&self.node(b).value)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.mul_elem(&self.node(b).value)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::MulElem(a, b), value, rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.node(a).value.scale(s);
        let rg = self.node(a).requires_grad;
        self.push(Op::Scale(a, s), value, rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let value = self.node(a).value.scale(-1.0);
        let rg = self.node(a).requires_grad;
        self.push(Op::Neg(a), value, rg)
    }

    /// `a + v` where `v` is a 1 x c row vector broadcast over the rows of `a`.
    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (am, vm) = (&self.node(a).value, &self.node(v).value);
        if vm.rows() != 1 || vm.cols() != am.cols() {
            return Err(Error::shape(format!(
                "add_row_vec: {}x{} + {}x{}",
                am.rows(),
                am.cols(),
                vm.rows(),
                vm.cols()
            )));
        }
        let cols = am.cols();
        let mut data = Vec::with_capacity(am.rows() * cols);
        for r in 0..am.rows() {
            for c in 0..cols {
                data.push(am.get(r, c) + vm.get(0, c));
            }
        }
        let value = DenseMatrix::from_vec(am.rows(), cols, data)?;
        let rg = self.requires_any(&[a, v]);
        Ok(self.push(Op::AddRowVec(a, v), value, rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.node(a).value.map(|v| v.max(0.0));
        let rg = self.node(a).requires_grad;
        self.push(Op::Relu(a), value, rg)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let value = self.node(a).value.map(f64::ln);
        let rg = self.node(a).requires_grad;
        self.push(Op::Log(a), value, rg)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = DenseMatrix::scalar(self.node(a).value.sum());
        let rg = self.node(a).requires_grad;
        self.push(Op::Sum(a), value, rg)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let m = &self.node(a).value;
        let n = (m.rows() * m.cols()) as f64;
        let value = DenseMatrix::scalar(m.sum() / n);
        let rg = self.node(a).requires_grad;
        self.push(Op::Mean(a), value, rg)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.concat_rows(&self.node(b).value)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::ConcatRows(a, b), value, rg))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let value = self.node(a).value.gather_rows(indices)?;
        let rg = self.node(a).requires_grad;
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), value, rg))
    }

    /// `D[i][j] = sqrt(sum_k (a[i][k] - b[j][k])^2 + eps)`, for a: n x d and
    /// b: m x d. `eps > 0` keeps the gradient bounded when rows coincide.
    pub fn pairwise_euclidean(&mut self, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
        let (am, bm) = (&self.node(a).value, &self.node(b).value);
        if am.cols() != bm.cols() {
            return Err(Error::shape(format!(
                "pairwise_euclidean: widths {} vs {}",
                am.cols(),
                bm.cols()
            )));
        }
        if eps <= 0.0 {
            return Err(Error::shape("pairwise_euclidean: eps must be positive"));
        }
        let (n, m) = (am.rows(), bm.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let ar = am.row(i);
            for j in 0..m {
                let br = bm.row(j);
                let mut acc = eps;
                for (x, y) in ar.iter().zip(br) {
                    let d = x - y;
                    acc += d * d;
                }
                data.push(acc.sqrt());
            }
        }
        let value = DenseMatrix::from_vec(n, m, data)?;
        let rg = self.requires_any(&[a, b]);
        Ok(self.push(Op::PairwiseEuclidean { a, b }, value, rg))
    }

    /// Softmax over each row, computed with per-row max subtraction.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let m = &self.node(a).value;
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = m.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let exps: Vec<f64> = row
                .iter()
                .map(|&v| {
                    let e = (v - max).exp();
                    denom += e;
                    e
                })
                .collect();
            data.extend(exps.into_iter().map(|e| e / denom));
        }
        let value = DenseMatrix::from_vec(rows, cols, data).expect("softmax shape");
        let rg = self.node(a).requires_grad;
        self.push(Op::RowSoftmax(a), value, rg)
    }

    /// Mean over rows of `-log softmax(logits)[label]`, as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let m = &self.node(logits).value;
        let (rows, cols) = m.shape();
        if labels.len() != rows {
            return Err(Error::shape(format!(
                "cross_entropy: {} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Label {
                label: bad,
                classes: cols,
            });
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = 0.0;
        for r in 0..rows {
            let row = m.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let exps: Vec<f64> = row
                .iter()
                .map(|&v| {
                    let e = (v - max).exp();
                    denom += e;
                    e
                })
                .collect();
            let log_denom = denom.ln();
            // -log softmax at the label, from shifted logits; stays finite
            // even when the label's probability underflows.
            total += log_denom - (row[labels[r]] - max);
            probs.extend(exps.into_iter().map(|e| e / denom));
        }
        let value = DenseMatrix::scalar(total / rows as f64);
        let saved = DenseMatrix::from_vec(rows, cols, probs)?;
        let rg = self.node(logits).requires_grad;
        Ok(self.push_saved(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            value,
            rg,
            Some(saved),
        ))
    }

    /// Supervised contrastive reduction over similarity logits.
    ///
    /// `logits` is n x n with entry `[i][j]` the similarity of anchor i to
    /// example j (here: -tau * distance). For each anchor i whose positive
    /// set `S_i = { k != i : label_k == label_i }` is non-empty, the term is
    /// the mean over k in `S_i` of `-log( exp(logits[i][k]) /
    /// sum_{j != i} exp(logits[i][j]) )`; the node value is the mean over
    /// anchors with non-empty `S_i`, or 0 when no such anchor exists.
    pub fn supcon_from_logits(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let m = &self.node(logits).value;
        let (n, cols) = m.shape();
        if n != cols {
            return Err(Error::shape(format!(
                "supcon_from_logits: expected square logits, got {}x{}",
                n, cols
            )));
        }
        if labels.len() != n {
            return Err(Error::shape(format!(
                "supcon_from_logits: {} labels for {} rows",
                labels.len(),
                n
            )));
        }

        let mut anchors = Vec::new();
        for i in 0..n {
            if (0..n).any(|k| k != i && labels[k] == labels[i]) {
                anchors.push(i);
            }
        }
        if anchors.is_empty() {
            let value = DenseMatrix::scalar(0.0);
            let saved = DenseMatrix::zeros(n, n);
            let rg = self.node(logits).requires_grad;
            return Ok(self.push_saved(Op::SupCon(logits), value, rg, Some(saved)));
        }

        let weight = 1.0 / anchors.len() as f64;
        let mut total = 0.0;
        // grad_logits is fully determined at forward time; save it.
        let mut grad = DenseMatrix::zeros(n, n);
        for &i in &anchors {
            let row = m.row(i);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if j != i {
                    denom += (v - max).exp();
                }
            }
            let log_denom = denom.ln() + max;
            let positives: Vec<usize> = (0..n)
                .filter(|&k| k != i && labels[k] == labels[i])
                .collect();
            let inv_pos = 1.0 / positives.len() as f64;
            let mut mean_pos_logit = 0.0;
            for &k in &positives {
                mean_pos_logit += row[k] * inv_pos;
                grad.set(i, k, grad.get(i, k) - weight * inv_pos);
            }
            total += log_denom - mean_pos_logit;
            for j in 0..n {
                if j != i {
                    let q = (row[j] - max).exp() / denom;
                    grad.set(i, j, grad.get(i, j) + weight * q);
                }
            }
        }
        let value = DenseMatrix::scalar(total * weight);
        let rg = self.node(logits).requires_grad;
        Ok(self.push_saved(Op::SupCon(logits), value, rg, Some(grad)))
    }

    fn accumulate(&mut self, id: NodeId, delta: DenseMatrix) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss node. Gradients accumulate once per
    /// node, in reverse topological (= reverse insertion) order.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.node(loss).value.is_scalar() {
            let (r, c) = self.node(loss).value.shape();
            return Err(Error::shape(format!(
                "backward target must be 1x1, got {}x{}",
                r, c
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(grad_out) = self.grads[idx].clone() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf | Op::Param => {}
                Op::Matmul(a, b) => {
                    if self.requires_grad(a) {
                        let ga = grad_out.matmul_nt(&self.node(b).value)?;
                        self.accumulate(a, ga)?;
                    }
                    if self.requires_grad(b) {
                        let gb = self.node(a).value.matmul_tn(&grad_out)?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, grad_out.clone())?;
                    self.accumulate(b, grad_out)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, grad_out.clone())?;
                    self.accumulate(b, grad_out.scale(-1.0))?;
                }
                Op::MulElem(a, b) => {
                    if self.requires_grad(a) {
                        let ga = grad_out.mul_elem(&self.node(b).value)?;
                        self.accumulate(a, ga)?;
                    }
                    if self.requires_grad(b) {
                        let gb = grad_out.mul_elem(&self.node(a).value)?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Scale(a, s) => {
                    self.accumulate(a, grad_out.scale(s))?;
                }
                Op::Neg(a) => {
                    self.accumulate(a, grad_out.scale(-1.0))?;
                }
                Op::AddRowVec(a, v) => {
                    if self.requires_grad(v) {
                        let cols = grad_out.cols();
                        let mut gv = DenseMatrix::zeros(1, cols);
                        for r in 0..grad_out.rows() {
                            for c in 0..cols {
                                gv.set(0, c, gv.get(0, c) + grad_out.get(r, c));
                            }
                        }
                        self.accumulate(v, gv)?;
                    }
                    self.accumulate(a, grad_out)?;
                }
                Op::Relu(a) => {
                    let input = &self.node(a).value;
                    let mut g = grad_out;
                    for (gv, &iv) in g.data_mut().iter_mut().zip(input.data()) {
                        if iv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    self.accumulate(a, g)?;
                }
                Op::Log(a) => {
                    let input = self.node(a).value.clone();
                    let mut g = grad_out;
                    for (gv, &iv) in g.data_mut().iter_mut().zip(input.data()) {
                        *gv /= iv;
                    }
                    self.accumulate(a, g)?;
                }
                Op::Sum(a) => {
                    let s = grad_out.scalar_value()?;
                    let (r, c) = self.node(a).value.shape();
                    self.accumulate(a, DenseMatrix::zeros(r, c).map(|_| s))?;
                }
                Op::Mean(a) => {
                    let s = grad_out.scalar_value()?;
                    let (r, c) = self.node(a).value.shape();
                    let per = s / (r * c) as f64;
                    self.accumulate(a, DenseMatrix::zeros(r, c).map(|_| per))?;
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.node(a).value.rows();
                    let cols = grad_out.cols();
                    let ga = grad_out.gather_rows(&(0..ra).collect::<Vec<_>>())?;
                    let gb = grad_out
                        .gather_rows(&(ra..ra + self.node(b).value.rows()).collect::<Vec<_>>())?;
                    debug_assert_eq!(ga.cols(), cols);
                    self.accumulate(a, ga)?;
                    self.accumulate(b, gb)?;
                }
                Op::GatherRows(a, indices) => {
                    let (r, c) = self.node(a).value.shape();
                    let mut ga = DenseMatrix::zeros(r, c);
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for col in 0..c {
                            ga.set(
                                src_row,
                                col,
                                ga.get(src_row, col) + grad_out.get(out_row, col),
                            );
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::PairwiseEuclidean { a, b } => {
                    let am = self.node(a).value.clone();
                    let bm = self.node(b).value.clone();
                    let dist = &self.nodes[idx].value;
                    let (n, m) = dist.shape();
                    let d = am.cols();
                    let need_a = self.requires_grad(a);
                    let need_b = self.requires_grad(b);
                    let mut ga = DenseMatrix::zeros(am.rows(), d);
                    let mut gb = DenseMatrix::zeros(bm.rows(), d);
                    for i in 0..n {
                        for j in 0..m {
                            let coeff = grad_out.get(i, j) / dist.get(i, j);
                            if coeff == 0.0 {
                                continue;
                            }
                            for k in 0..d {
                                let diff = am.get(i, k) - bm.get(j, k);
                                if need_a {
                                    ga.set(i, k, ga.get(i, k) + coeff * diff);
                                }
                                if need_b {
                                    gb.set(j, k, gb.get(j, k) - coeff * diff);
                                }
                            }
                        }
                    }
                    if need_a {
                        self.accumulate(a, ga)?;
                    }
                    if need_b {
                        self.accumulate(b, gb)?;
                    }
                }
                Op::RowSoftmax(a) => {
                    let y = self.nodes[idx].value.clone();
                    let (rows, cols) = y.shape();
                    let mut ga = DenseMatrix::zeros(rows, cols);
                    for r in 0..rows {
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += grad_out.get(r, c) * y.get(r, c);
                        }
                        for c in 0..cols {
                            ga.set(r, c, y.get(r, c) * (grad_out.get(r, c) - dot));
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::CrossEntropy { logits, labels } => {
                    let s = grad_out.scalar_value()?;
                    let probs = self.nodes[idx].saved.as_ref().expect("ce saved probs");
                    let (rows, cols) = probs.shape();
                    let scale = s / rows as f64;
                    let mut g = probs.scale(scale);
                    for (r, &label) in labels.iter().enumerate() {
                        g.set(r, label, g.get(r, label) - scale);
                    }
                    debug_assert_eq!(g.cols(), cols);
                    self.accumulate(logits, g)?;
                }
                Op::SupCon(logits) => {
                    let s = grad_out.scalar_value()?;
                    let saved = self.nodes[idx].saved.as_ref().expect("supcon saved grad");
                    let g = saved.scale(s);
                    self.accumulate(logits, g)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DenseMatrix;

    fn mat(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = GradientTape::new();
        let i = tape.leaf(DenseMatrix::identity(2));
        let a = tape.leaf(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(out), &mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = GradientTape::new();
        let a = tape.leaf(mat(&[vec![1.0, 2.0]]));
        let b = tape.leaf(mat(&[vec![3.0], vec![4.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).scalar_value().unwrap(), 11.0);
    }

    #[test]
    fn relu_forward() {
        let mut tape = GradientTape::new();
        let a = tape.leaf(mat(&[vec![-1.0, 0.0, 2.0]]));
        let out = tape.relu(a);
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 2.0]);

        let b = tape.leaf(mat(&[vec![0.5, 1.0, 7.0]]));
        let out_b = tape.relu(b);
        assert_eq!(tape.value(out_b).data(), &[0.5, 1.0, 7.0]);
    }

    #[test]
    fn softmax_rows() {
        let mut tape = GradientTape::new();
        let a = tape.leaf(mat(&[vec![0.0, 0.0]]));
        let out = tape.row_softmax(a);
        assert_eq!(tape.value(out).data(), &[0.5, 0.5]);

        let b = tape.leaf(mat(&[vec![0.0, -1.0]]));
        let out_b = tape.row_softmax(b);
        let expect = [0.7311, 0.2689];
        for (got, want) in tape.value(out_b).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }

        let c = tape.leaf(mat(&[vec![1000.0, 0.0]]));
        let out_c = tape.row_softmax(c);
        assert_eq!(tape.value(out_c).data(), &[1.0, 0.0]);
        assert!(tape.value(out_c).is_finite());
    }

    #[test]
    fn pairwise_corner_cases() {
        let mut tape = GradientTape::new();
        let z = tape.leaf(mat(&[vec![0.0, 0.0]]));
        let d = tape.pairwise_euclidean(z, z, 1e-12).unwrap();
        assert!((tape.value(d).scalar_value().unwrap() - 1e-6).abs() < 1e-18);

        let a = tape.leaf(mat(&[vec![0.0, 0.0]]));
        let b = tape.leaf(mat(&[vec![3.0, 4.0]]));
        let d2 = tape.pairwise_euclidean(a, b, 1e-300).unwrap();
        assert!((tape.value(d2).scalar_value().unwrap() - 5.0).abs() < 1e-12);

        let w = tape.leaf(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let v = tape.leaf(mat(&[vec![1.0, 2.0, 3.0]]));
        assert!(tape.pairwise_euclidean(w, v, 1e-12).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = GradientTape::new();
        let logits = tape.leaf(DenseMatrix::zeros(3, 2));
        let loss = tape.cross_entropy(logits, &[0, 1, 0]).unwrap();
        let v = tape.value(loss).scalar_value().unwrap();
        assert!((v - 2.0_f64.ln()).abs() < 1e-12);

        let mut hot = DenseMatrix::zeros(1, 4);
        hot.set(0, 2, 1000.0);
        let logits2 = tape.leaf(hot);
        let loss2 = tape.cross_entropy(logits2, &[2]).unwrap();
        assert!(tape.value(loss2).scalar_value().unwrap().abs() < 1e-12);

        let logits3 = tape.leaf(DenseMatrix::zeros(1, 2));
        assert!(matches!(
            tape.cross_entropy(logits3, &[2]),
            Err(Error::Label {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn cross_entropy_matches_direct_scalar_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = [2usize, 0, 1, 2, 1];
        let m = DenseMatrix::from_vec(5, 3, data.clone()).unwrap();

        let mut tape = GradientTape::new();
        let logits = tape.leaf(m);
        let loss = tape.cross_entropy(logits, &labels).unwrap();
        let got = tape.value(loss).scalar_value().unwrap();

        // independent scalar route without max-subtraction or log-softmax
        let mut expect = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &data[r * 3..(r + 1) * 3];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[label].exp() / denom).ln();
        }
        expect /= labels.len() as f64;
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = GradientTape::new();
        let p = tape.param(DenseMatrix::zeros(2, 2));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = GradientTape::new();
        let p = tape.param(mat(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(loss).unwrap().scalar_value().unwrap(), 1.0);
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_input() {
        let mut tape = GradientTape::new();
        let p = tape.param(mat(&[vec![1.0, -2.0, 0.25]]));
        let sq = tape.mul_elem(p, p).unwrap();
        let half = tape.sum(sq);
        let loss = tape.scale(half, 0.5);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, -2.0, 0.25]);
    }

    #[test]
    fn no_gradient_into_leaves() {
        let mut tape = GradientTape::new();
        let p = tape.param(mat(&[vec![1.0, 2.0]]));
        let frozen = tape.leaf(mat(&[vec![3.0, 4.0]]));
        let prod = tape.mul_elem(p, frozen).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert!(tape.grad(frozen).is_none());
        assert_eq!(tape.grad(p).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn replayed_tape_is_bit_identical() {
        let build = || {
            let mut tape = GradientTape::new();
            let p = tape.param(mat(&[vec![0.3, -0.7], vec![0.1, 0.9]]));
            let q = tape.leaf(mat(&[vec![1.0, 2.0], vec![-1.0, 0.5]]));
            let prod = tape.matmul(p, q).unwrap();
            let act = tape.relu(prod);
            let loss = tape.mean(act);
            (tape.value(loss).scalar_value().unwrap(), tape, loss, p)
        };
        let (v1, _, _, _) = build();
        let (v2, mut tape, loss, p) = build();
        assert_eq!(v1.to_bits(), v2.to_bits());
        tape.backward(loss).unwrap();
        let g1 = tape.grad(p).unwrap().clone();
        let (_, mut tape2, loss2, p2) = build();
        tape2.backward(loss2).unwrap();
        assert_eq!(g1, tape2.grad(p2).unwrap().clone());
    }
}
