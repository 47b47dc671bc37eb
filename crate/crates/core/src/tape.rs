//! Reverse-mode gradient tape.
//!
//! Each forward op appends a node holding its output value and the handles of
//! its inputs. [`Tape::backward`] walks the nodes in exact reverse order and
//! accumulates vector-Jacobian products into a per-node gradient slot. A tape
//! is single-threaded and meant to live for one training step.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowVector(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    CosineRows {
        x: Var,
        y: Var,
    },
    InfoNce {
        sims: Var,
        positive: usize,
        temperature: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    zero_norm_rows: usize,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, or `None` when `v`
    /// does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.slots.get_mut(v.0).and_then(Option::take)
    }
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

    /// Number of cosine rows evaluated with a zero-norm operand.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let n = vx.cols();
        if vb.len() != n {
            return Err(Error::Dimension(format!(
                "row bias of {} entries for {:?}",
                vb.len(),
                vx.shape()
            )));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRowVector(x, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let out = tensor::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 || start + len > v.rows() {
            return Err(Error::Dimension(format!(
                "rows {}..{} of {:?}",
                start,
                start + len,
                v.shape()
            )));
        }
        let c = v.cols();
        let data = v.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start }))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("concat_cols with unequal row counts".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::Dimension(format!(
                "row {} of {:?}",
                bad,
                v.shape()
            )));
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), c], data),
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Cosine similarity of every row of `x` (`m x n`) with the single row
    /// `y` (`1 x n`), returned as `1 x m`. Rows with a zero-norm operand
    /// score 0 and are counted in [`Tape::zero_norm_rows`].
    pub fn cosine_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        let (vx, vy) = (self.value(x), self.value(y));
        if vy.len() != vx.cols() {
            return Err(Error::Dimension(format!(
                "cosine of rows {:?} against {:?}",
                vx.shape(),
                vy.shape()
            )));
        }
        let mut zero = 0;
        let sims: Vec<f64> = (0..vx.rows())
            .map(|i| match cosine_parts(vx.row(i), vy.data()) {
                Some((s, _, _)) => s,
                None => {
                    zero += 1;
                    0.0
                }
            })
            .collect();
        self.zero_norm_rows += zero;
        let m = sims.len();
        Ok(self.push(Tensor::from_parts(vec![1, m], sims), Op::CosineRows { x, y }))
    }

    /// InfoNCE over a `1 x B` similarity row: `logsumexp(s / t) - s[pos] / t`.
    pub fn info_nce(&mut self, sims: Var, positive: usize, temperature: f64) -> Result<Var> {
        let loss = crate::head::info_nce_value(self.value(sims).data(), positive, temperature)?;
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![loss]),
            Op::InfoNce {
                sims,
                positive,
                temperature,
            },
        ))
    }

    /// Backward pass from a scalar output.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let seed = Tensor::full(self.value(root).shape(), 1.0);
        self.backward_seeded(root, seed)
    }

    /// Backward pass with an explicit output cotangent.
    pub fn backward_seeded(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::Dimension("seed shape differs from root".into()));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(idx, &g, &mut slots)?;
            slots[idx] = Some(g);
        }
        Ok(Gradients { slots })
    }

    fn propagate(&self, idx: usize, g: &Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ga, gb) = tensor::matmul_vjp(self.value(*a), self.value(*b), g)?;
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::Transpose(a) => accumulate(slots, *a, tensor::transpose(g)?),
            Op::Add(a, b) => {
                accumulate(slots, *a, g.clone());
                accumulate(slots, *b, g.clone());
            }
            Op::AddRowVector(x, b) => {
                accumulate(slots, *x, g.clone());
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n.max(1)) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let shape = self.value(*b).shape().to_vec();
                accumulate(slots, *b, Tensor::from_parts(shape, gb));
            }
            Op::Scale(x, f) => {
                let mut gx = g.clone();
                gx.data_mut().iter_mut().for_each(|v| *v *= f);
                accumulate(slots, *x, gx);
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accumulate(slots, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                accumulate(slots, *x, tensor::softmax_rows_vjp(&node.value, g));
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (gx, gg, gbeta) =
                    tensor::layer_norm_vjp(self.value(*x), self.value(*gamma), *eps, g);
                accumulate(slots, *x, gx);
                accumulate(slots, *gamma, gg);
                accumulate(slots, *beta, gbeta);
            }
            Op::SliceRows { x, start } => {
                let src = self.value(*x);
                let c = src.cols();
                let mut gx = Tensor::zeros(src.shape());
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(slots, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        gp.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                    }
                    offset += c;
                    accumulate(slots, p, Tensor::from_parts(pv.shape().to_vec(), gp));
                }
            }
            Op::GatherRows { x, indices } => {
                let src = self.value(*x);
                let c = src.cols();
                let mut gx = Tensor::zeros(src.shape());
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        gx.data_mut()[i * c + j] += g.data()[k * c + j];
                    }
                }
                accumulate(slots, *x, gx);
            }
            Op::CosineRows { x, y } => {
                let (vx, vy) = (self.value(*x), self.value(*y));
                let n = vx.cols();
                let mut gx = vec![0.0; vx.len()];
                let mut gy = vec![0.0; vy.len()];
                for i in 0..vx.rows() {
                    let xr = vx.row(i);
                    let Some((s, nx, ny)) = cosine_parts(xr, vy.data()) else {
                        continue;
                    };
                    let gi = g.data()[i];
                    for j in 0..n {
                        gx[i * n + j] += gi * (vy.data()[j] / (nx * ny) - s * xr[j] / (nx * nx));
                        gy[j] += gi * (xr[j] / (nx * ny) - s * vy.data()[j] / (ny * ny));
                    }
                }
                accumulate(slots, *x, Tensor::from_parts(vx.shape().to_vec(), gx));
                accumulate(slots, *y, Tensor::from_parts(vy.shape().to_vec(), gy));
            }
            Op::InfoNce {
                sims,
                positive,
                temperature,
            } => {
                let s = self.value(*sims);
                let grad = crate::head::info_nce_grad(s.data(), *positive, *temperature);
                let scale = g.data()[0];
                let data = grad.into_iter().map(|v| v * scale).collect();
                accumulate(slots, *sims, Tensor::from_parts(s.shape().to_vec(), data));
            }
        }
        Ok(())
    }
}

fn accumulate(slots: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut slots[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `(cos, |a|, |b|)` or `None` when either norm is zero. The similarity is
/// clamped to `[-1, 1]`.
pub(crate) fn cosine_parts(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(((dot / (na * nb)).clamp(-1.0, 1.0), na, nb))
}
