//! Dense row-major f64 tensors with tape-based reverse-mode autodiff.
//!
//! The op set is deliberately small: just enough to run a decoder-style
//! transformer with two output heads. There is no broadcasting beyond
//! row-wise bias addition, no views, and no fusion; every op materializes
//! its result, which keeps the backward rules short and auditable.
//! Gradient correctness is checked against central finite differences
//! (see [`grad_check`]).

use thiserror::Error;

/// Index of a node on a [`Tape`].
pub type TensorId = usize;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: index {index} out of bounds for dimension of size {bound}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// A plain tensor: shape, row-major data, and an optional gradient buffer.
///
/// Standalone `Tensor` values hold model parameters between steps; during a
/// forward pass their data is copied onto a [`Tape`] as leaf nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let mut t = Tensor::new(shape, data);
        t.requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Zero (and allocate if needed) the gradient buffer.
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }
}

// Interpret a shape as (rows, cols); 1-D tensors are treated as row vectors.
fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

// ── Recorded operations ──────────────────────────────────────────────

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// C = A·B, or C = A·Bᵀ when `transpose_b` ([m,k]·[n,k] layout).
    MatMul {
        a: TensorId,
        b: TensorId,
        transpose_b: bool,
    },
    /// Elementwise same-shape add, or row-wise bias add when `bias`.
    Add {
        a: TensorId,
        b: TensorId,
        bias: bool,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Silu {
        x: TensorId,
    },
    RmsNorm {
        x: TensorId,
        scale: TensorId,
        eps: f64,
    },
    SoftmaxRows {
        x: TensorId,
    },
    EmbeddingLookup {
        table: TensorId,
        ids: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<TensorId>,
    },
    CrossEntropyRows {
        logits: TensorId,
        targets: Vec<usize>,
    },
    MaskedFill {
        x: TensorId,
        mask: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Append-only record of a forward computation. Node inputs always precede
/// the node itself, so [`Tape::backward`] is a single reverse sweep.
///
/// A tape is confined to one thread; parameters are copied in as leaves and
/// their gradients read back out after the sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// c[m,n] (+)= a·b with explicit strides; `beta` selects overwrite vs accumulate.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    /// Copy a standalone tensor onto the tape as a leaf.
    pub fn leaf(&mut self, tensor: &Tensor) -> TensorId {
        self.push(
            tensor.shape.clone(),
            tensor.data.clone(),
            tensor.requires_grad,
            Op::Leaf,
        )
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> TensorId {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        self.push(shape, data, false, Op::Leaf)
    }

    pub fn constant_filled(&mut self, shape: Vec<usize>, value: f64) -> TensorId {
        let n = shape.iter().product();
        self.push(shape, vec![value; n], false, Op::Leaf)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    /// Move a node's value off the tape as a standalone tensor.
    pub fn value(&self, id: TensorId) -> Tensor {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone())
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = &mut node.grad {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            grad: None,
            op,
        });
        id
    }

    fn any_requires_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn ensure_grad(&mut self, id: TensorId) {
        if self.nodes[id].grad.is_none() {
            let n = self.nodes[id].data.len();
            self.nodes[id].grad = Some(vec![0.0; n]);
        }
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// C[m,n] = A[m,k] · B[k,n].
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// C[m,n] = A[m,k] · Bᵀ where B is stored [n,k].
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(
        &mut self,
        a: TensorId,
        b: TensorId,
        transpose_b: bool,
    ) -> Result<TensorId, TensorError> {
        let op = if transpose_b { "matmul_nt" } else { "matmul" };
        let (m, k) = dims2(&self.nodes[a].shape)
            .ok_or_else(|| shape_err(op, format!("lhs must be 2-D, got {:?}", self.nodes[a].shape)))?;
        let (br, bc) = dims2(&self.nodes[b].shape)
            .ok_or_else(|| shape_err(op, format!("rhs must be 2-D, got {:?}", self.nodes[b].shape)))?;
        let (kb, n) = if transpose_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err(
                op,
                format!("inner dimensions differ, lhs [{m}x{k}] vs rhs inner {kb}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        if transpose_b {
            gemm(m, k, n, &self.nodes[a].data, k as isize, 1, &self.nodes[b].data, 1, k as isize, 0.0, &mut out);
        } else {
            gemm(m, k, n, &self.nodes[a].data, k as isize, 1, &self.nodes[b].data, n as isize, 1, 0.0, &mut out);
        }
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, transpose_b }))
    }

    /// Elementwise add of same-shape tensors, or `a[r,c] + bias[c]` row-wise.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let a_shape = self.nodes[a].shape.clone();
        let b_shape = self.nodes[b].shape.clone();
        if a_shape == b_shape {
            let data: Vec<f64> = self.nodes[a]
                .data
                .iter()
                .zip(&self.nodes[b].data)
                .map(|(x, y)| x + y)
                .collect();
            let rg = self.any_requires_grad(&[a, b]);
            return Ok(self.push(a_shape, data, rg, Op::Add { a, b, bias: false }));
        }
        let (rows, cols) = dims2(&a_shape)
            .ok_or_else(|| shape_err("add", format!("lhs must be 1-D or 2-D, got {a_shape:?}")))?;
        let bias_len = match dims2(&b_shape) {
            Some((1, c)) => c,
            _ => 0,
        };
        if bias_len != cols {
            return Err(shape_err(
                "add",
                format!("operands {a_shape:?} and {b_shape:?} are neither same-shape nor row bias"),
            ));
        }
        let mut data = self.nodes[a].data.clone();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += self.nodes[b].data[c];
            }
        }
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(a_shape, data, rg, Op::Add { a, b, bias: true }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(shape_err(
                "mul",
                format!(
                    "operands must share a shape, got {:?} vs {:?}",
                    self.nodes[a].shape, self.nodes[b].shape
                ),
            ));
        }
        let data: Vec<f64> = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(shape, data, rg, Op::Mul { a, b }))
    }

    pub fn silu(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(shape, data, rg, Op::Silu { x }))
    }

    /// Row-wise RMS normalization with a learned per-column scale.
    pub fn rmsnorm(&mut self, x: TensorId, scale: TensorId, eps: f64) -> Result<TensorId, TensorError> {
        let (rows, cols) = dims2(&self.nodes[x].shape)
            .ok_or_else(|| shape_err("rmsnorm", format!("input must be 2-D, got {:?}", self.nodes[x].shape)))?;
        let scale_len = self.nodes[scale].data.len();
        if scale_len != cols {
            return Err(shape_err(
                "rmsnorm",
                format!("scale length {scale_len} does not match row width {cols}"),
            ));
        }
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x].data[r * cols..(r + 1) * cols];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            for c in 0..cols {
                data[r * cols + c] = row[c] * inv * self.nodes[scale].data[c];
            }
        }
        let shape = self.nodes[x].shape.clone();
        let rg = self.any_requires_grad(&[x, scale]);
        Ok(self.push(shape, data, rg, Op::RmsNorm { x, scale, eps }))
    }

    /// Numerically stable softmax over each row of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (rows, cols) = dims2(&self.nodes[x].shape)
            .ok_or_else(|| shape_err("softmax_rows", format!("input must be 2-D, got {:?}", self.nodes[x].shape)))?;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x].data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                data[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= sum;
            }
        }
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(shape, data, rg, Op::SoftmaxRows { x }))
    }

    /// Gather rows of `table` by id: out[i] = table[ids[i]].
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId, TensorError> {
        let (vocab, dim) = dims2(&self.nodes[table].shape)
            .ok_or_else(|| shape_err("embedding_lookup", format!("table must be 2-D, got {:?}", self.nodes[table].shape)))?;
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfBounds {
                    op: "embedding_lookup",
                    index: id,
                    bound: vocab,
                });
            }
        }
        let mut data = vec![0.0; ids.len() * dim];
        for (i, &id) in ids.iter().enumerate() {
            data[i * dim..(i + 1) * dim]
                .copy_from_slice(&self.nodes[table].data[id * dim..(id + 1) * dim]);
        }
        let rg = self.nodes[table].requires_grad;
        Ok(self.push(
            vec![ids.len(), dim],
            data,
            rg,
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no inputs given".into()));
        }
        let (_, cols) = dims2(&self.nodes[parts[0]].shape)
            .ok_or_else(|| shape_err("concat_rows", format!("inputs must be 2-D, got {:?}", self.nodes[parts[0]].shape)))?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = dims2(&self.nodes[p].shape)
                .ok_or_else(|| shape_err("concat_rows", format!("inputs must be 2-D, got {:?}", self.nodes[p].shape)))?;
            if c != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column counts differ: {cols} vs {c}"),
                ));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].data);
        }
        let rg = self.any_requires_grad(parts);
        Ok(self.push(
            vec![rows, cols],
            data,
            rg,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Per-row negative log-likelihood of `targets` under row softmax.
    /// Returns a [rows, 1] column of losses.
    pub fn cross_entropy_rows(
        &mut self,
        logits: TensorId,
        targets: &[usize],
    ) -> Result<TensorId, TensorError> {
        let (rows, cols) = dims2(&self.nodes[logits].shape)
            .ok_or_else(|| shape_err("cross_entropy_rows", format!("logits must be 2-D, got {:?}", self.nodes[logits].shape)))?;
        if targets.len() != rows {
            return Err(shape_err(
                "cross_entropy_rows",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        for &t in targets {
            if t >= cols {
                return Err(TensorError::IndexOutOfBounds {
                    op: "cross_entropy_rows",
                    index: t,
                    bound: cols,
                });
            }
        }
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let row = &self.nodes[logits].data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            data[r] = lse - row[targets[r]];
        }
        let rg = self.nodes[logits].requires_grad;
        Ok(self.push(
            vec![rows, 1],
            data,
            rg,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Replace entries where `mask` is true with `fill`; others pass through.
    pub fn masked_fill(
        &mut self,
        x: TensorId,
        mask: &[bool],
        fill: f64,
    ) -> Result<TensorId, TensorError> {
        if mask.len() != self.nodes[x].data.len() {
            return Err(shape_err(
                "masked_fill",
                format!(
                    "mask length {} does not match tensor of {} elements",
                    mask.len(),
                    self.nodes[x].data.len()
                ),
            ));
        }
        let data: Vec<f64> = self.nodes[x]
            .data
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let shape = self.nodes[x].shape.clone();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            shape,
            data,
            rg,
            Op::MaskedFill {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    // ── Compositions ─────────────────────────────────────────────────

    /// Mean of all entries of a 2-D tensor, as a [1,1] scalar.
    /// Built from `matmul` with constant weights, not a separate op.
    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (rows, cols) = dims2(&self.nodes[x].shape)
            .ok_or_else(|| shape_err("mean_all", format!("input must be 2-D, got {:?}", self.nodes[x].shape)))?;
        let n = (rows * cols) as f64;
        let left = self.constant_filled(vec![1, rows], 1.0 / n);
        let partial = self.matmul(left, x)?;
        let right = self.constant_filled(vec![cols, 1], 1.0);
        self.matmul(partial, right)
    }

    /// Sum of all entries of a 2-D tensor, as a [1,1] scalar.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let (rows, cols) = dims2(&self.nodes[x].shape)
            .ok_or_else(|| shape_err("sum_all", format!("input must be 2-D, got {:?}", self.nodes[x].shape)))?;
        let left = self.constant_filled(vec![1, rows], 1.0);
        let partial = self.matmul(left, x)?;
        let right = self.constant_filled(vec![cols, 1], 1.0);
        self.matmul(partial, right)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients of every `requires_grad`
    /// node reachable from `loss` are populated; repeated calls accumulate
    /// unless [`Tape::zero_grads`] is called in between.
    ///
    /// Each sweep runs in scratch buffers and is folded into the node
    /// gradients at the end, so a second sweep adds exactly one more unit
    /// of gradient rather than re-propagating stale values.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss].data.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss].shape.clone()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss + 1];
        local[loss] = Some(vec![1.0]);

        fn acc<'a>(
            local: &'a mut [Option<Vec<f64>>],
            id: TensorId,
            numel: usize,
        ) -> &'a mut [f64] {
            local[id].get_or_insert_with(|| vec![0.0; numel])
        }

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let grad = match &local[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}

                Op::MatMul { a, b, transpose_b } => {
                    let (m, n) = {
                        let s = &self.nodes[id].shape;
                        (s[0], s[1])
                    };
                    let k = if transpose_b {
                        dims2(&self.nodes[b].shape).unwrap().1
                    } else {
                        dims2(&self.nodes[b].shape).unwrap().0
                    };
                    if self.nodes[a].requires_grad {
                        let numel = self.nodes[a].data.len();
                        let b_data = &self.nodes[b].data;
                        let da = acc(&mut local, a, numel);
                        if transpose_b {
                            // dA = G·B   (B stored [n,k])
                            gemm(m, n, k, &grad, n as isize, 1, b_data, k as isize, 1, 1.0, da);
                        } else {
                            // dA = G·Bᵀ  (B stored [k,n])
                            gemm(m, n, k, &grad, n as isize, 1, b_data, 1, n as isize, 1.0, da);
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let numel = self.nodes[b].data.len();
                        let a_data = &self.nodes[a].data;
                        let db = acc(&mut local, b, numel);
                        if transpose_b {
                            // dB = Gᵀ·A  (result [n,k])
                            gemm(n, m, k, &grad, 1, n as isize, a_data, k as isize, 1, 1.0, db);
                        } else {
                            // dB = Aᵀ·G  (result [k,n])
                            gemm(k, m, n, a_data, 1, k as isize, &grad, n as isize, 1, 1.0, db);
                        }
                    }
                }

                Op::Add { a, b, bias } => {
                    if self.nodes[a].requires_grad {
                        let numel = self.nodes[a].data.len();
                        let da = acc(&mut local, a, numel);
                        da.iter_mut().zip(&grad).for_each(|(d, g)| *d += g);
                    }
                    if self.nodes[b].requires_grad {
                        let numel = self.nodes[b].data.len();
                        let db = acc(&mut local, b, numel);
                        if bias {
                            let cols = numel;
                            for (i, g) in grad.iter().enumerate() {
                                db[i % cols] += g;
                            }
                        } else {
                            db.iter_mut().zip(&grad).for_each(|(d, g)| *d += g);
                        }
                    }
                }

                Op::Mul { a, b } => {
                    if self.nodes[a].requires_grad {
                        let numel = self.nodes[a].data.len();
                        let b_data = self.nodes[b].data.clone();
                        let da = acc(&mut local, a, numel);
                        for i in 0..grad.len() {
                            da[i] += grad[i] * b_data[i];
                        }
                    }
                    if self.nodes[b].requires_grad {
                        let numel = self.nodes[b].data.len();
                        let a_data = self.nodes[a].data.clone();
                        let db = acc(&mut local, b, numel);
                        for i in 0..grad.len() {
                            db[i] += grad[i] * a_data[i];
                        }
                    }
                }

                Op::Silu { x } => {
                    if self.nodes[x].requires_grad {
                        let numel = self.nodes[x].data.len();
                        let x_data = self.nodes[x].data.clone();
                        let dx = acc(&mut local, x, numel);
                        for i in 0..grad.len() {
                            let s = sigmoid(x_data[i]);
                            dx[i] += grad[i] * s * (1.0 + x_data[i] * (1.0 - s));
                        }
                    }
                }

                Op::RmsNorm { x, scale, eps } => {
                    let (rows, cols) = dims2(&self.nodes[x].shape).unwrap();
                    let x_data = self.nodes[x].data.clone();
                    let s_data = self.nodes[scale].data.clone();
                    if self.nodes[x].requires_grad {
                        let numel = self.nodes[x].data.len();
                        let dx = acc(&mut local, x, numel);
                        for r in 0..rows {
                            let row = &x_data[r * cols..(r + 1) * cols];
                            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                            let rms = (ms + eps).sqrt();
                            let mut dot = 0.0;
                            for c in 0..cols {
                                dot += grad[r * cols + c] * s_data[c] * row[c];
                            }
                            for c in 0..cols {
                                dx[r * cols + c] += grad[r * cols + c] * s_data[c] / rms
                                    - row[c] * dot / (cols as f64 * rms * rms * rms);
                            }
                        }
                    }
                    if self.nodes[scale].requires_grad {
                        let numel = self.nodes[scale].data.len();
                        let ds = acc(&mut local, scale, numel);
                        for r in 0..rows {
                            let row = &x_data[r * cols..(r + 1) * cols];
                            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                            let inv = 1.0 / (ms + eps).sqrt();
                            for c in 0..cols {
                                ds[c] += grad[r * cols + c] * row[c] * inv;
                            }
                        }
                    }
                }

                Op::SoftmaxRows { x } => {
                    if self.nodes[x].requires_grad {
                        let numel = self.nodes[x].data.len();
                        let (rows, cols) = dims2(&self.nodes[id].shape).unwrap();
                        let y = self.nodes[id].data.clone();
                        let dx = acc(&mut local, x, numel);
                        for r in 0..rows {
                            let mut dot = 0.0;
                            for c in 0..cols {
                                dot += grad[r * cols + c] * y[r * cols + c];
                            }
                            for c in 0..cols {
                                dx[r * cols + c] += y[r * cols + c] * (grad[r * cols + c] - dot);
                            }
                        }
                    }
                }

                Op::EmbeddingLookup { table, ids } => {
                    if self.nodes[table].requires_grad {
                        let numel = self.nodes[table].data.len();
                        let dim = self.nodes[table].shape[1];
                        let dt = acc(&mut local, table, numel);
                        for (i, &tok) in ids.iter().enumerate() {
                            for c in 0..dim {
                                dt[tok * dim + c] += grad[i * dim + c];
                            }
                        }
                    }
                }

                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in &parts {
                        let n = self.nodes[p].data.len();
                        if self.nodes[p].requires_grad {
                            let dp = acc(&mut local, p, n);
                            for i in 0..n {
                                dp[i] += grad[offset + i];
                            }
                        }
                        offset += n;
                    }
                }

                Op::CrossEntropyRows { logits, targets } => {
                    if self.nodes[logits].requires_grad {
                        let numel = self.nodes[logits].data.len();
                        let (rows, cols) = dims2(&self.nodes[logits].shape).unwrap();
                        let l_data = self.nodes[logits].data.clone();
                        let dl = acc(&mut local, logits, numel);
                        for r in 0..rows {
                            let row = &l_data[r * cols..(r + 1) * cols];
                            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                            for c in 0..cols {
                                let p = (row[c] - max).exp() / sum;
                                let indicator = if c == targets[r] { 1.0 } else { 0.0 };
                                dl[r * cols + c] += grad[r] * (p - indicator);
                            }
                        }
                    }
                }

                Op::MaskedFill { x, mask } => {
                    if self.nodes[x].requires_grad {
                        let numel = self.nodes[x].data.len();
                        let dx = acc(&mut local, x, numel);
                        for i in 0..grad.len() {
                            if !mask[i] {
                                dx[i] += grad[i];
                            }
                        }
                    }
                }
            }
        }

        for (id, slot) in local.into_iter().enumerate() {
            if let Some(g) = slot {
                if self.nodes[id].requires_grad {
                    self.ensure_grad(id);
                    let dst = self.nodes[id].grad.as_mut().unwrap();
                    dst.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
            }
        }
        Ok(())
    }
}

// ── Gradient checking ────────────────────────────────────────────────

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    /// Position of the parameter in the input slice.
    pub param: usize,
    /// Number of coordinates actually probed.
    pub checked_coords: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients of a deterministic scalar function against
/// central finite differences.
///
/// With `coord_budget`, at most that many coordinates are probed, sampled
/// reproducibly from `seed`; otherwise every coordinate is checked.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    tolerance: f64,
    coord_budget: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId, TensorError>,
{
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    // Every input is treated as a checked parameter regardless of its own
    // requires_grad flag.
    let eval = |tensors: &[Tensor]| -> Result<(Tape, Vec<TensorId>, TensorId), TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors
            .iter()
            .map(|t| {
                let mut p = t.clone();
                p.requires_grad = true;
                tape.leaf(&p)
            })
            .collect();
        let loss = f(&mut tape, &ids)?;
        if tape.data(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(tape.shape(loss).to_vec()));
        }
        Ok((tape, ids, loss))
    };

    let (mut tape, ids, loss) = eval(params)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
        .collect();
    if let Some(budget) = coord_budget {
        if coords.len() > budget {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            coords.shuffle(&mut rng);
            coords.truncate(budget);
        }
    }

    let mut checks: Vec<ParamCheck> = (0..params.len())
        .map(|p| ParamCheck {
            param: p,
            checked_coords: 0,
            max_rel_err: 0.0,
        })
        .collect();

    let mut perturbed: Vec<Tensor> = params.to_vec();
    for &(pi, ci) in &coords {
        let original = perturbed[pi].data[ci];
        perturbed[pi].data[ci] = original + GRAD_CHECK_STEP;
        let (t_plus, _, l_plus) = eval(&perturbed)?;
        let f_plus = t_plus.data(l_plus)[0];
        perturbed[pi].data[ci] = original - GRAD_CHECK_STEP;
        let (t_minus, _, l_minus) = eval(&perturbed)?;
        let f_minus = t_minus.data(l_minus)[0];
        perturbed[pi].data[ci] = original;

        let numeric = (f_plus - f_minus) / (2.0 * GRAD_CHECK_STEP);
        let exact = analytic[pi][ci];
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
        checks[pi].checked_coords += 1;
        if rel > checks[pi].max_rel_err {
            checks[pi].max_rel_err = rel;
        }
    }

    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_err,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}
