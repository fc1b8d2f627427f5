//! Reverse-mode differentiation on a tape.
//!
//! A [`Graph`] records every operation in the order it is applied. Each
//! record keeps its output value and whatever it needs for the backward
//! pass; [`Graph::backward`] walks the records in exact reverse order.
//! Trainable tensors live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`]; their gradients are accumulated back into the store.

mod losses;
mod optim;
mod train;

pub use losses::{
    add_ge2e_scale, cross_entropy, ge2e_logits, ge2e_loss, ge2e_per_utterance, ge2e_var, Ge2eConfig, Reduction,
};
pub use optim::{Adam, Optimizer, Sgd};
pub use train::{train_loop, EpochRecord, Objective, OptimizerKind, TrainConfig, TrainingHistory};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;
use crate::tt::ChainPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Entries are clamped to at least this value after every optimizer step.
    pub lower_bound: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name: name.into(), value, grad, lower_bound: None });
        ParamId(self.params.len() - 1)
    }

    pub fn add_bounded(&mut self, name: impl Into<String>, value: Tensor, lower: f64) -> ParamId {
        let id = self.add(name, value);
        self.params[id.0].lower_bound = Some(lower);
        id
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.grad.clone()).collect()
    }

    /// Overwrites all values; shapes must match.
    pub fn set_values(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::extent(format!("{} values for {} parameters", values.len(), self.params.len())));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::extent(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + c` with `c` (length `n`) added to every column of `a` (`n x B`).
    AddColumn(Var, Var),
    /// `a + s` for a one-element `s`.
    AddScalar(Var, Var),
    /// `s * a` for a one-element `s`.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Contract(Var, Var, Vec<(usize, usize)>),
    /// Cosine similarity of every row of `a` with every row of `b`.
    CosineSim(Var, Var),
    /// Cosine similarity of paired rows, as an `n x 1` column.
    RowCosine(Var, Var),
    TtMatMul {
        cores: Vec<Var>,
        x: Var,
        plan: ChainPlan,
        intermediates: Vec<Vec<f64>>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
        scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of every node after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero if `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros_like_shape(&self.shapes[v.0]))
    }
}

impl Tensor {
    fn zeros_like_shape(shape: &[usize]) -> Tensor {
        if shape.is_empty() {
            Tensor::scalar(0.0)
        } else {
            Tensor::zeros(shape)
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn expect_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::extent(format!("{what} must be a matrix, got {s:?}"))),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::extent(format!("{what}: shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn row_norms(t: &Tensor, what: &str) -> Result<Vec<f64>> {
    let (n, e) = expect_matrix(t, what)?;
    (0..n)
        .map(|i| {
            let norm = t.data()[i * e..(i + 1) * e].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                Ok(norm)
            } else {
                Err(Error::ZeroNormEmbedding(i))
            }
        })
        .collect()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf whose gradient is reported by [`Gradients::get`] but not stored anywhere.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_column(&mut self, a: Var, c: Var) -> Result<Var> {
        let (n, cols) = expect_matrix(self.value(a), "add_column lhs")?;
        let cv = self.value(c);
        if cv.len() != n {
            return Err(Error::extent(format!("column of {} added to {n} rows", cv.len())));
        }
        let mut out = self.value(a).clone();
        let cd = cv.data().to_vec();
        for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
            row.iter_mut().for_each(|x| *x += cd[i]);
        }
        Ok(self.push(out, Op::AddColumn(a, c)))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of(s)?;
        let v = self.value(a).map(|x| x + sv);
        Ok(self.push(v, Op::AddScalar(a, s)))
    }

    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        let sv = self.scalar_of(s)?;
        let v = self.value(a).scale(sv);
        Ok(self.push(v, Op::ScaleBy(s, a)))
    }

    fn scalar_of(&self, s: Var) -> Result<f64> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::extent(format!("expected one element, got shape {:?}", t.shape())));
        }
        Ok(t.data()[0])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let v = self.value(a).mul(&c)?;
        Ok(self.push(v, Op::MulConst(a, c)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(crate::cells::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        expect_matrix(self.value(a), "transpose input")?;
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let v = Tensor::concat_rows(&values)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let v = self.value(a).slice_rows(start, count)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    /// Splits the leading mode into `parts` equal chunks.
    pub fn chunk_rows(&mut self, a: Var, parts: usize) -> Result<Vec<Var>> {
        let rows = self.value(a).shape().first().copied().unwrap_or(0);
        if parts == 0 || rows % parts != 0 {
            return Err(Error::extent(format!("{rows} rows do not split into {parts} chunks")));
        }
        let n = rows / parts;
        (0..parts).map(|i| self.slice_rows(a, i * n, n)).collect()
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Generalized tensordot, see [`Tensor::contract`].
    pub fn contract(&mut self, a: Var, b: Var, axes: &[(usize, usize)]) -> Result<Var> {
        let v = self.value(a).contract(self.value(b), axes)?;
        Ok(self.push(v, Op::Contract(a, b, axes.to_vec())))
    }

    /// `S[i, j] = cos(a_i, b_j)` for rows of `a` (`n x E`) and `b` (`k x E`).
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, e) = expect_matrix(av, "cosine lhs")?;
        let (k, e2) = expect_matrix(bv, "cosine rhs")?;
        if e != e2 {
            return Err(Error::extent(format!("cosine of width {e} against width {e2}")));
        }
        let (na, nb) = (row_norms(av, "cosine lhs")?, row_norms(bv, "cosine rhs")?);
        let mut s = vec![0.0; n * k];
        gemm(1.0, MatRef::new(av.data(), n, e), MatRef::new(bv.data(), k, e).t(), 0.0, &mut s);
        for i in 0..n {
            for j in 0..k {
                s[i * k + j] /= na[i] * nb[j];
            }
        }
        let v = Tensor::from_vec(&[n, k], s)?;
        Ok(self.push(v, Op::CosineSim(a, b)))
    }

    /// `s[i] = cos(a_i, b_i)` as an `n x 1` column.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "row cosine")?;
        let (n, e) = expect_matrix(av, "row cosine input")?;
        let (na, nb) = (row_norms(av, "row cosine lhs")?, row_norms(bv, "row cosine rhs")?);
        let s = (0..n)
            .map(|i| {
                let (x, y) = (&av.data()[i * e..(i + 1) * e], &bv.data()[i * e..(i + 1) * e]);
                crate::tensor::dot(x, y) / (na[i] * nb[i])
            })
            .collect();
        let v = Tensor::from_vec(&[n, 1], s)?;
        Ok(self.push(v, Op::RowCosine(a, b)))
    }

    /// TT matrix (or family of `r_0` matrices) applied to `x` (`M x B`).
    /// The result is `(r_0 D) x B`.
    pub fn tt_matmul(&mut self, cores: &[Var], x: Var) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = cores.iter().map(|&c| self.value(c).shape().to_vec()).collect();
        if shapes.is_empty() || shapes.iter().any(|s| s.len() != 4) {
            return Err(Error::extent(format!("TT cores must be rank 4, got {shapes:?}")));
        }
        let n = shapes.len();
        let row_dims: Vec<usize> = shapes.iter().map(|s| s[0]).collect();
        let col_dims: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
        let mut ranks: Vec<usize> = shapes.iter().map(|s| s[2]).collect();
        ranks.push(shapes[n - 1][3]);
        if (0..n - 1).any(|k| shapes[k][3] != shapes[k + 1][2]) || ranks[n] != 1 {
            return Err(Error::extent(format!("TT core ranks do not chain: {shapes:?}")));
        }
        let m: usize = col_dims.iter().product();
        let (xm, batch) = expect_matrix(self.value(x), "TT input")?;
        if xm != m {
            return Err(Error::extent(format!("TT with {m} columns applied to {xm} rows")));
        }
        let plan = ChainPlan::new(&row_dims, &col_dims, &ranks, batch);
        let core_refs: Vec<&Tensor> = cores.iter().map(|&c| self.value(c)).collect();
        let fwd = plan.forward(&core_refs, self.value(x).data(), true);
        let v = Tensor::from_vec(&[plan.out_rows(), batch], fwd.output)?;
        Ok(self.push(v, Op::TtMatMul { cores: cores.to_vec(), x, plan, intermediates: fwd.intermediates }))
    }

    /// Softmax cross-entropy over the rows of `logits` (`B x C`).
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
        let lv = self.value(logits);
        let (b, c) = expect_matrix(lv, "logits")?;
        if labels.len() != b {
            return Err(Error::LengthMismatch(labels.len(), b));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (row, &label) in probs.data_mut().chunks_mut(c).zip(labels) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
            total += lse - row[label];
            row.iter_mut().for_each(|z| *z = (*z - lse).exp());
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / b as f64,
        };
        let v = Tensor::scalar(total * scale);
        Ok(self.push(v, Op::SoftmaxXent { logits, labels: labels.to_vec(), probs, scale }))
    }

    /// Back-propagates from the one-element node `loss`, adding parameter
    /// gradients into `store`. Parameters that do not reach the loss get
    /// nothing added.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full_like(lv, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads, store)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>], store: &mut ParamStore) -> Result<()> {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g)?,
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = expect_matrix(av, "matmul lhs")?;
                let n = bv.cols();
                let mut ga = vec![0.0; m * k];
                gemm(1.0, MatRef::new(g.data(), m, n), MatRef::new(bv.data(), k, n).t(), 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(1.0, MatRef::new(av.data(), m, k).t(), MatRef::new(g.data(), m, n), 0.0, &mut gb);
                acc(*a, Tensor::from_vec(&[m, k], ga)?)?;
                acc(*b, Tensor::from_vec(&[k, n], gb)?)?;
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(self.value(*b))?)?;
                acc(*b, g.mul(self.value(*a))?)?;
            }
            Op::AddColumn(a, c) => {
                acc(*a, g.clone())?;
                let cols = g.cols();
                let sums: Vec<f64> = g.data().chunks(cols).map(|r| r.iter().sum()).collect();
                acc(*c, Tensor::from_vec(self.value(*c).shape(), sums)?)?;
            }
            Op::AddScalar(a, s) => {
                acc(*a, g.clone())?;
                acc(*s, Tensor::full_like(self.value(*s), g.sum()))?;
            }
            Op::ScaleBy(s, a) => {
                let sv = self.value(*s).data()[0];
                acc(*a, g.scale(sv))?;
                let gs = crate::tensor::dot(g.data(), self.value(*a).data());
                acc(*s, Tensor::full_like(self.value(*s), gs))?;
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k))?,
            Op::MulConst(a, c) => acc(*a, g.mul(c)?)?,
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y))?)?,
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gi, y| gi * y * (1.0 - y))?)?,
            Op::Exp(a) => acc(*a, g.mul(&node.value)?)?,
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gi, x| gi / x)?)?,
            Op::Reshape(a) => acc(*a, g.reshape(self.value(*a).shape())?)?,
            Op::Transpose(a) => acc(*a, g.transpose()?)?,
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).shape()[0];
                    acc(p, g.slice_rows(start, rows)?)?;
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let inner: usize = av.shape()[1..].iter().product();
                let mut full = Tensor::zeros(av.shape());
                full.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                acc(*a, full)?;
            }
            Op::Sum(a) => acc(*a, Tensor::full_like(self.value(*a), g.data()[0]))?,
            Op::Contract(a, b, axes) => {
                let (ga, gb) = contract_grads(self.value(*a), self.value(*b), axes, g)?;
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::CosineSim(a, b) => {
                let (ga, gb) = cosine_grads(self.value(*a), self.value(*b), &node.value, g)?;
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::RowCosine(a, b) => {
                let (ga, gb) = row_cosine_grads(self.value(*a), self.value(*b), &node.value, g)?;
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::TtMatMul { cores, x, plan, intermediates } => {
                let core_refs: Vec<&Tensor> = cores.iter().map(|&c| self.value(c)).collect();
                let mut core_grads: Vec<Vec<f64>> = core_refs.iter().map(|c| vec![0.0; c.len()]).collect();
                let gx = plan.backward(&core_refs, intermediates, g.data(), &mut core_grads);
                for (&c, cg) in cores.iter().zip(core_grads) {
                    acc(c, Tensor::from_vec(self.value(c).shape(), cg)?)?;
                }
                acc(*x, Tensor::from_vec(self.value(*x).shape(), gx)?)?;
            }
            Op::SoftmaxXent { logits, labels, probs, scale } => {
                let c = probs.cols();
                let k = g.data()[0] * scale;
                let mut gl = probs.clone();
                for (row, &label) in gl.data_mut().chunks_mut(c).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|z| *z *= k);
                }
                acc(*logits, gl)?;
            }
        }
        Ok(())
    }
}

impl Tensor {
    fn full_like(t: &Tensor, value: f64) -> Tensor {
        let mut out = t.clone();
        out.data_mut().iter_mut().for_each(|x| *x = value);
        out
    }
}

/// Gradients of `contract(a, b, axes)` given the upstream gradient `g`.
fn contract_grads(a: &Tensor, b: &Tensor, axes: &[(usize, usize)], g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (ra, rb) = (a.rank(), b.rank());
    let free_a: Vec<usize> = (0..ra).filter(|i| !axes.iter().any(|p| p.0 == *i)).collect();
    let free_b: Vec<usize> = (0..rb).filter(|j| !axes.iter().any(|p| p.1 == *j)).collect();
    let na = free_a.len();

    // g has modes (free_a, free_b); pair its free_b modes with b's free modes.
    let pairs_b: Vec<(usize, usize)> = free_b.iter().enumerate().map(|(t, &j)| (na + t, j)).collect();
    let ga_raw = g.contract(b, &pairs_b)?;
    // ga_raw modes: free_a, then b's contracted modes in b's order
    let mut b_contracted: Vec<usize> = axes.iter().map(|p| p.1).collect();
    b_contracted.sort_unstable();
    let mut src_of_a = vec![0; ra];
    for (pos, &i) in free_a.iter().enumerate() {
        src_of_a[i] = pos;
    }
    for (t, &j) in b_contracted.iter().enumerate() {
        let i = axes.iter().find(|p| p.1 == j).expect("paired").0;
        src_of_a[i] = na + t;
    }
    let ga = ga_raw.permute(&src_of_a)?;

    let pairs_a: Vec<(usize, usize)> = free_a.iter().enumerate().map(|(t, &i)| (i, t)).collect();
    let gb_raw = a.contract(g, &pairs_a)?;
    // gb_raw modes: a's contracted modes in a's order, then free_b
    let mut a_contracted: Vec<usize> = axes.iter().map(|p| p.0).collect();
    a_contracted.sort_unstable();
    let mut src_of_b = vec![0; rb];
    for (t, &i) in a_contracted.iter().enumerate() {
        let j = axes.iter().find(|p| p.0 == i).expect("paired").1;
        src_of_b[j] = t;
    }
    for (pos, &j) in free_b.iter().enumerate() {
        src_of_b[j] = a_contracted.len() + pos;
    }
    let gb = gb_raw.permute(&src_of_b)?;
    Ok((ga, gb))
}

fn cosine_grads(a: &Tensor, b: &Tensor, s: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, e) = (a.rows(), a.cols());
    let k = b.rows();
    let (na, nb) = (row_norms(a, "cosine lhs")?, row_norms(b, "cosine rhs")?);
    let mut ga = vec![0.0; n * e];
    let mut gb = vec![0.0; k * e];
    for i in 0..n {
        let ai = &a.data()[i * e..(i + 1) * e];
        for j in 0..k {
            let bj = &b.data()[j * e..(j + 1) * e];
            let (gij, sij) = (g.data()[i * k + j], s.data()[i * k + j]);
            if gij == 0.0 {
                continue;
            }
            for t in 0..e {
                let (ah, bh) = (ai[t] / na[i], bj[t] / nb[j]);
                ga[i * e + t] += gij * (bh - sij * ah) / na[i];
                gb[j * e + t] += gij * (ah - sij * bh) / nb[j];
            }
        }
    }
    Ok((Tensor::from_vec(a.shape(), ga)?, Tensor::from_vec(b.shape(), gb)?))
}

fn row_cosine_grads(a: &Tensor, b: &Tensor, s: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, e) = (a.rows(), a.cols());
    let (na, nb) = (row_norms(a, "row cosine lhs")?, row_norms(b, "row cosine rhs")?);
    let mut ga = vec![0.0; n * e];
    let mut gb = vec![0.0; n * e];
    for i in 0..n {
        let (gi, si) = (g.data()[i], s.data()[i]);
        for t in 0..e {
            let (ah, bh) = (a.data()[i * e + t] / na[i], b.data()[i * e + t] / nb[i]);
            ga[i * e + t] = gi * (bh - si * ah) / na[i];
            gb[i * e + t] = gi * (ah - si * bh) / nb[i];
        }
    }
    Ok((Tensor::from_vec(a.shape(), ga)?, Tensor::from_vec(b.shape(), gb)?))
}

/// Central differences of `f` with respect to every entry of every
/// parameter in `store`: `(f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
    store: &ParamStore,
    eps: f64,
) -> Result<Vec<Tensor>> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut work = store.clone();
    let mut out = Vec::with_capacity(store.len());
    let mut coordinate = 0;
    for id in store.ids() {
        let mut grad = Tensor::zeros_like_shape(store.value(id).shape());
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + eps;
            let fp = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - eps;
            let fm = f(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFiniteFunctionValue(coordinate));
            }
            grad.data_mut()[i] = (fp - fm) / (2.0 * eps);
            coordinate += 1;
        }
        out.push(grad);
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||)` over all tensors jointly, `0` when both vanish.
pub fn gradient_relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            diff += (u - v) * (u - v);
            na += u * u;
            nb += v * v;
        }
    }
    let denom = na.max(nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Compares [`Graph::backward`] against [`finite_diff_grad`] for a loss
/// built by `build`, returning the relative error.
pub fn gradcheck(store: &ParamStore, eps: f64, build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> Result<f64> {
    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    let mut graph = Graph::new();
    let loss = build(&mut graph, store)?;
    graph.backward(loss, &mut analytic_store)?;
    let numeric = finite_diff_grad(
        |s| {
            let mut g = Graph::new();
            let l = build(&mut g, s)?;
            Ok(g.value(l).data()[0])
        },
        store,
        eps,
    )?;
    Ok(gradient_relative_error(&analytic_store.grads(), &numeric))
}
