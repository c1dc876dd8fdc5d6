//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Operations record eagerly: each builder method computes the forward value
//! through the shared kernels and appends one node. Node ids are otopological
//! by construction (every input id precedes its consumer), so the backward
//! pass is a single reverse sweep that visits each node exactly once.
//!
//! Tapes are single-threaded and cheap; training code builds one per loss
//! evaluation and drops it after extracting gradients. Detached inputs
//! (e.g. centroid banks) enter as op payloads rather than nodes, so no
//! gradient path through them exists at all.

use crate::tensor::{kernels, Result, Tensor, TensorError, DISTANCE_GRAD_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulNt(NodeId, NodeId),
    AddRowVec(NodeId, NodeId),
    Relu(NodeId),
    RowNormalize {
        input: NodeId,
        norms: Vec<f64>,
        degenerate: Vec<bool>,
    },
    /// Distances from input rows to detached points (payload, not a node).
    PairwiseDistance {
        input: NodeId,
        points: Tensor,
    },
    MaskedRowLse {
        input: NodeId,
        mask: Vec<bool>,
    },
    SubColVec(NodeId, NodeId),
    MaskedMean {
        input: NodeId,
        mask: Vec<bool>,
        count: usize,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, or zeros of the node's shape if it never received one.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(id).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Register a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Register a non-differentiated input (gradient is computed but unused;
    /// recorded as a leaf for shape bookkeeping).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::mul_elem(self.value(a), self.value(b))?;
        Ok(self.push(Op::MulElem(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = kernels::scale(self.value(a), k);
        self.push(Op::Scale(a, k), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// a · bᵀ (used for linear layers stored out×in).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), v))
    }

    pub fn add_row_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let out = kernels::add_row_vec(self.value(a), self.value(v))?;
        Ok(self.push(Op::AddRowVec(a, v), out))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = kernels::relu(self.value(a));
        self.push(Op::Relu(a), v)
    }

    /// Per-row L2 normalization; degenerate rows (norm under the floor) map
    /// to e₁ with zero gradient.
    pub fn row_normalize(&mut self, a: NodeId) -> NodeId {
        let (v, norms, degenerate) = kernels::row_normalize(self.value(a));
        self.push(
            Op::RowNormalize {
                input: a,
                norms,
                degenerate,
            },
            v,
        )
    }

    /// Rows of a normalization node flagged as degenerate, if the node is one.
    pub fn normalize_degenerate_rows(&self, id: NodeId) -> Option<&[bool]> {
        match &self.nodes[id.0].op {
            Op::RowNormalize { degenerate, .. } => Some(degenerate),
            _ => None,
        }
    }

    /// Euclidean distances from input rows to detached `points` rows.
    /// Gradient flows only through the input.
    pub fn pairwise_distance(&mut self, a: NodeId, points: Tensor) -> Result<NodeId> {
        let v = kernels::pairwise_distance(self.value(a), &points)?;
        Ok(self.push(Op::PairwiseDistance { input: a, points }, v))
    }

    pub fn masked_row_logsumexp(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        if mask.len() != self.value(a).len() {
            return Err(TensorError::LengthMismatch {
                op: "masked_row_logsumexp",
                len: mask.len(),
                shape: self.value(a).shape(),
            });
        }
        let v = kernels::masked_row_logsumexp(self.value(a), &mask)?;
        Ok(self.push(Op::MaskedRowLse { input: a, mask }, v))
    }

    pub fn row_logsumexp(&mut self, a: NodeId) -> NodeId {
        let mask = vec![true; self.value(a).len()];
        self.masked_row_logsumexp(a, mask)
            .expect("all-true mask cannot be empty")
    }

    pub fn sub_col_vec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let out = kernels::sub_col_vec(self.value(a), self.value(v))?;
        Ok(self.push(Op::SubColVec(a, v), out))
    }

    /// Mean over masked entries, as a 1×1 node.
    pub fn masked_mean(&mut self, a: NodeId, mask: Vec<bool>) -> Result<NodeId> {
        if mask.len() != self.value(a).len() {
            return Err(TensorError::LengthMismatch {
                op: "masked_mean",
                len: mask.len(),
                shape: self.value(a).shape(),
            });
        }
        let (m, count) = kernels::masked_mean(self.value(a), &mask)?;
        Ok(self.push(
            Op::MaskedMean {
                input: a,
                mask,
                count,
            },
            Tensor::scalar(m),
        ))
    }

    /// Fused mean softmax cross-entropy against integer labels, as 1×1.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), &labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = kernels::mean(self.value(a));
        self.push(Op::Mean(a), Tensor::scalar(v))
    }

    /// Reverse sweep from a scalar output. Deterministic for a fixed tape.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let out_val = self.value(out);
        if out_val.shape() != (1, 1) {
            return Err(TensorError::NonScalarOutput {
                shape: out_val.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));

        for id in (0..=out.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_vjp(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        match &mut grads[id.0] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), delta.shape());
                for (e, d) in existing.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_vjp(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, kernels::scale(g, -1.0));
            }
            Op::MulElem(a, b) => {
                let ga = kernels::mul_elem(g, self.value(*b)).expect("shapes recorded");
                let gb = kernels::mul_elem(g, self.value(*a)).expect("shapes recorded");
                Self::accumulate(grads, *a, ga);
                Self::accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => {
                Self::accumulate(grads, *a, kernels::scale(g, *k));
            }
            Op::MatMul(a, b) => {
                let ga = kernels::matmul_nt(g, self.value(*b)).expect("shapes recorded");
                let gb = kernels::matmul_tn(self.value(*a), g).expect("shapes recorded");
                Self::accumulate(grads, *a, ga);
                Self::accumulate(grads, *b, gb);
            }
            Op::MatMulNt(a, b) => {
                let ga = kernels::matmul(g, self.value(*b)).expect("shapes recorded");
                let gb = kernels::matmul_tn(g, self.value(*a)).expect("shapes recorded");
                Self::accumulate(grads, *a, ga);
                Self::accumulate(grads, *b, gb);
            }
            Op::AddRowVec(a, v) => {
                Self::accumulate(grads, *a, g.clone());
                let cols = g.cols();
                let mut gv = Tensor::zeros(1, cols);
                for i in 0..g.rows() {
                    for j in 0..cols {
                        gv.as_mut_slice()[j] += g.at(i, j);
                    }
                }
                Self::accumulate(grads, *v, gv);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut ga = g.clone();
                for (gv, xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Self::accumulate(grads, *a, ga);
            }
            Op::RowNormalize {
                input,
                norms,
                degenerate,
            } => {
                let y = &self.nodes[id].value;
                let (rows, cols) = y.shape();
                let mut ga = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    if degenerate[i] {
                        continue;
                    }
                    let yrow = y.row(i);
                    let grow = g.row(i);
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        ga.set(i, j, (grow[j] - dot * yrow[j]) / norms[i]);
                    }
                }
                Self::accumulate(grads, *input, ga);
            }
            Op::PairwiseDistance { input, points } => {
                let x = self.value(*input);
                let d = &self.nodes[id].value;
                let (b, dim) = x.shape();
                let n = points.rows();
                let mut ga = Tensor::zeros(b, dim);
                for i in 0..b {
                    for j in 0..n {
                        let gij = g.at(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        let dist = d.at(i, j).max(DISTANCE_GRAD_EPS);
                        for p in 0..dim {
                            let diff = x.at(i, p) - points.at(j, p);
                            let cur = ga.at(i, p);
                            ga.set(i, p, cur + gij * diff / dist);
                        }
                    }
                }
                Self::accumulate(grads, *input, ga);
            }
            Op::MaskedRowLse { input, mask } => {
                let x = self.value(*input);
                let lse = &self.nodes[id].value;
                let (rows, cols) = x.shape();
                let mut ga = Tensor::zeros(rows, cols);
                for i in 0..rows {
                    let gi = g.at(i, 0);
                    if gi == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        if mask[i * cols + j] {
                            ga.set(i, j, gi * (x.at(i, j) - lse.at(i, 0)).exp());
                        }
                    }
                }
                Self::accumulate(grads, *input, ga);
            }
            Op::SubColVec(a, v) => {
                Self::accumulate(grads, *a, g.clone());
                let mut gv = Tensor::zeros(g.rows(), 1);
                for i in 0..g.rows() {
                    let mut acc = 0.0;
                    for j in 0..g.cols() {
                        acc += g.at(i, j);
                    }
                    gv.set(i, 0, -acc);
                }
                Self::accumulate(grads, *v, gv);
            }
            Op::MaskedMean { input, mask, count } => {
                let x = self.value(*input);
                let (rows, cols) = x.shape();
                let scale = g.at(0, 0) / *count as f64;
                let mut ga = Tensor::zeros(rows, cols);
                for (idx, &m) in mask.iter().enumerate() {
                    if m {
                        ga.as_mut_slice()[idx] = scale;
                    }
                }
                Self::accumulate(grads, *input, ga);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, c) = probs.shape();
                let scale = g.at(0, 0) / b as f64;
                let mut ga = Tensor::zeros(b, c);
                for i in 0..b {
                    for j in 0..c {
                        let indicator = if labels[i] == j { 1.0 } else { 0.0 };
                        ga.set(i, j, scale * (probs.at(i, j) - indicator));
                    }
                }
                Self::accumulate(grads, *logits, ga);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let (rows, cols) = self.value(*a).shape();
                let scale = g.at(0, 0) / n;
                let mut ga = Tensor::zeros(rows, cols);
                ga.as_mut_slice().fill(scale);
                Self::accumulate(grads, *a, ga);
            }
        }
    }
}

/// Central-difference gradient oracle: (f(x+h·e_k) − f(x−h·e_k)) / 2h.
///
/// Independent of the tape; used to audit `backward` everywhere gradients
/// matter. Errors if `f` produces a non-finite value.
pub fn finite_difference_gradient<F>(f: &mut F, point: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert!(h > 0.0, "finite differences need a positive step");
    let (rows, cols) = point.shape();
    let mut grad = Tensor::zeros(rows, cols);
    let mut probe = point.clone();
    for k in 0..point.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let fp = f(&probe)?;
        probe.as_mut_slice()[k] = orig - h;
        let fm = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(TensorError::NonFinite {
                what: format!("f at coordinate {k}: f+={fp}, f-={fm}"),
            });
        }
        grad.as_mut_slice()[k] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;

    fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    /// |a-b| within 1e-4 relative with a 1e-7 absolute floor, elementwise.
    fn assert_grad_close(analytic: &Tensor, numeric: &Tensor) {
        assert_eq!(analytic.shape(), numeric.shape());
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let tol = 1e-7_f64.max(1e-4 * a.abs().max(n.abs()));
            assert!(
                (a - n).abs() <= tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul_elem(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_abs_diff_eq!(grads.get(x).unwrap().at(0, 0), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_symmetry_gradient() {
        // d/dx logsumexp([x, 0]) at x = 0 is the softmax weight 0.5.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let lse = tape.row_logsumexp(x);
        let grads = tape.backward(lse).unwrap();
        assert_abs_diff_eq!(grads.get(x).unwrap().at(0, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        let y = tape.relu(x);
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let w = random_tensor(&mut rng, 4, 3); // C×d classifier
        let z0 = random_tensor(&mut rng, 1, 3);
        let labels = vec![2usize];

        let mut tape = Tape::new();
        let z = tape.leaf(z0.clone());
        let wn = tape.constant(w.clone());
        let logits = tape.matmul_nt(z, wn).unwrap();
        let loss = tape.softmax_cross_entropy(logits, labels.clone()).unwrap();
        let grads = tape.backward(loss).unwrap();

        let numeric = finite_difference_gradient(
            &mut |p: &Tensor| {
                let mut t = Tape::new();
                let z = t.leaf(p.clone());
                let wn = t.constant(w.clone());
                let logits = t.matmul_nt(z, wn)?;
                let loss = t.softmax_cross_entropy(logits, labels.clone())?;
                t.value(loss).scalar_value()
            },
            &z0,
            1e-5,
        )
        .unwrap();
        assert_grad_close(grads.get(z).unwrap(), &numeric);
    }

    #[test]
    fn finite_difference_exact_for_quadratic() {
        let g = finite_difference_gradient(
            &mut |p: &Tensor| Ok(p.at(0, 0) * p.at(0, 0)),
            &Tensor::scalar(2.0),
            1e-5,
        )
        .unwrap();
        assert_abs_diff_eq!(g.at(0, 0), 4.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_difference_zero_for_constant() {
        let g = finite_difference_gradient(
            &mut |_: &Tensor| Ok(7.5),
            &Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap(),
            1e-5,
        )
        .unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let build = || {
            let mut rng = Rng::new(99);
            let mut tape = Tape::new();
            let x = tape.leaf(random_tensor(&mut rng, 3, 4));
            let w = tape.leaf(random_tensor(&mut rng, 5, 4));
            let h = tape.matmul_nt(x, w).unwrap();
            let r = tape.relu(h);
            let n = tape.row_normalize(r);
            let loss = tape.softmax_cross_entropy(n, vec![0, 2, 4]).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).scalar_value().unwrap(),
                grads.get(x).unwrap().clone(),
                grads.get(w).unwrap().clone(),
            )
        };
        let (l1, gx1, gw1) = build();
        let (l2, gx2, gw2) = build();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn normalize_has_unit_norm_rows() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let x = tape.leaf(random_tensor(&mut rng, 2, 6));
            let n = tape.row_normalize(x);
            for i in 0..2 {
                let norm: f64 = tape.value(n).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");
            }
        }
    }

    #[test]
    fn degenerate_normalize_row_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap());
        let n = tape.row_normalize(x);
        assert_eq!(tape.normalize_degenerate_rows(n).unwrap(), &[true, false]);
        let m = tape.mean(n);
        let grads = tape.backward(m).unwrap();
        let gx = grads.get(x).unwrap();
        assert_eq!(gx.row(0), &[0.0, 0.0]);
        assert!(gx.row(1).iter().any(|v| *v != 0.0));
    }

    /// Every differentiable op, audited against central differences over 100
    /// seeded draws (relative 1e-4, absolute floor 1e-7).
    #[test]
    fn all_ops_match_finite_differences() {
        for seed in 0..100u64 {
            let mut rng = Rng::new(seed);
            check_op_suite(&mut rng);
        }
    }

    fn check_op_suite(rng: &mut Rng) {
        // Shared small shapes keep the fd loops cheap.
        let a0 = random_tensor(rng, 3, 4);
        let b0 = random_tensor(rng, 3, 4);
        let w0 = random_tensor(rng, 5, 4);
        let m0 = random_tensor(rng, 4, 2);
        let v0 = random_tensor(rng, 1, 4);
        let c0 = random_tensor(rng, 3, 1);
        let pts = random_tensor(rng, 4, 4);
        let mut mask = vec![false; 12];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = i % 3 != 1;
        }
        let labels = vec![0usize, 2, 3];

        type Builder = Box<dyn Fn(&mut Tape, NodeId) -> NodeId>;
        let cases: Vec<(Tensor, Builder)> = vec![
            (a0.clone(), {
                let b0 = b0.clone();
                Box::new(move |t, x| {
                    let b = t.constant(b0.clone());
                    let s = t.add(x, b).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let b0 = b0.clone();
                Box::new(move |t, x| {
                    let b = t.constant(b0.clone());
                    let s = t.sub(x, b).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let b0 = b0.clone();
                Box::new(move |t, x| {
                    let b = t.constant(b0.clone());
                    let s = t.mul_elem(x, b).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), Box::new(|t, x| {
                let s = t.scale(x, -2.5);
                t.mean(s)
            })),
            (a0.clone(), {
                let m0 = m0.clone();
                Box::new(move |t, x| {
                    let m = t.constant(m0.clone());
                    let s = t.matmul(x, m).unwrap();
                    t.mean(s)
                })
            }),
            // Gradient through the right operand of matmul.
            (m0.clone(), {
                let a0 = a0.clone();
                Box::new(move |t, x| {
                    let a = t.constant(a0.clone());
                    let s = t.matmul(a, x).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let w0 = w0.clone();
                Box::new(move |t, x| {
                    let w = t.constant(w0.clone());
                    let s = t.matmul_nt(x, w).unwrap();
                    t.mean(s)
                })
            }),
            (w0.clone(), {
                let a0 = a0.clone();
                Box::new(move |t, x| {
                    let a = t.constant(a0.clone());
                    let s = t.matmul_nt(a, x).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let v0 = v0.clone();
                Box::new(move |t, x| {
                    let v = t.constant(v0.clone());
                    let s = t.add_row_vec(x, v).unwrap();
                    t.mean(s)
                })
            }),
            (v0.clone(), {
                let a0 = a0.clone();
                Box::new(move |t, x| {
                    let a = t.constant(a0.clone());
                    let s = t.add_row_vec(a, x).unwrap();
                    t.mean(s)
                })
            }),
            // Relu: shift entries away from the kink so fd is valid.
            (
                {
                    let mut t = a0.clone();
                    for v in t.as_mut_slice() {
                        if v.abs() < 1e-2 {
                            *v += 0.05_f64.copysign(*v + 0.5);
                        }
                    }
                    t
                },
                Box::new(|t, x| {
                    let s = t.relu(x);
                    t.mean(s)
                }),
            ),
            (a0.clone(), Box::new(|t, x| {
                let s = t.row_normalize(x);
                t.mean(s)
            })),
            (a0.clone(), {
                let pts = pts.clone();
                Box::new(move |t, x| {
                    let s = t.pairwise_distance(x, pts.clone()).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let mask = mask.clone();
                Box::new(move |t, x| {
                    let s = t.masked_row_logsumexp(x, mask.clone()).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let c0 = c0.clone();
                Box::new(move |t, x| {
                    let c = t.constant(c0.clone());
                    let s = t.sub_col_vec(x, c).unwrap();
                    t.mean(s)
                })
            }),
            (c0.clone(), {
                let a0 = a0.clone();
                Box::new(move |t, x| {
                    let a = t.constant(a0.clone());
                    let s = t.sub_col_vec(a, x).unwrap();
                    t.mean(s)
                })
            }),
            (a0.clone(), {
                let mask = mask.clone();
                Box::new(move |t, x| t.masked_mean(x, mask.clone()).unwrap())
            }),
            (a0.clone(), {
                let labels = labels.clone();
                Box::new(move |t, x| t.softmax_cross_entropy(x, labels.clone()).unwrap())
            }),
            (a0.clone(), Box::new(|t, x| t.mean(x))),
        ];

        for (point, build) in cases {
            let mut tape = Tape::new();
            let x = tape.leaf(point.clone());
            let out = build(&mut tape, x);
            let grads = tape.backward(out).unwrap();
            let numeric = finite_difference_gradient(
                &mut |p: &Tensor| {
                    let mut t = Tape::new();
                    let x = t.leaf(p.clone());
                    let out = build(&mut t, x);
                    t.value(out).scalar_value()
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert_grad_close(&grads.wrt(&tape, x), &numeric);
        }
    }
}
