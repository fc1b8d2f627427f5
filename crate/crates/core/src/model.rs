//! Trainable recurrent sequence models built on the autograd tape.
//!
//! A [`SequenceModel`] keeps its weights in a [`ParamStore`] and converts to
//! and from the inference-side [`Cell`] plus an optional [`ProjectionLayer`]
//! head, so trained models share the checkpoint format of plain cells.

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::cells::{Cell, CellKind, DenseCell, FusedTtWeights, ProjectionLayer, Recurrent, TtFusedCell, TtPerGateCell};
use crate::checkpoint::CellMode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::tt::TtMatrix;

/// Shape of a recurrent layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec {
    pub kind: CellKind,
    pub mode: CellMode,
    pub input: usize,
    pub hidden: usize,
    /// Factorization of `hidden`; ignored for dense cells.
    pub row_dims: Vec<usize>,
    /// Factorization of `input`; ignored for dense cells.
    pub col_dims: Vec<usize>,
    /// Full rank profile `(r_0, .., r_n)`; `r_0 = 1` for per-gate cells.
    pub ranks: Vec<usize>,
}

impl CellSpec {
    pub fn dense(kind: CellKind, input: usize, hidden: usize) -> Self {
        CellSpec { kind, mode: CellMode::Dense, input, hidden, row_dims: vec![], col_dims: vec![], ranks: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::Config("input and hidden sizes must be positive".to_string()));
        }
        if self.mode == CellMode::Dense {
            return Ok(());
        }
        let n = self.row_dims.len();
        if n == 0 || self.col_dims.len() != n || self.ranks.len() != n + 1 {
            return Err(Error::Config(format!(
                "TT layout needs matching factor lists and n+1 ranks, got {:?} / {:?} / {:?}",
                self.row_dims, self.col_dims, self.ranks
            )));
        }
        if self.row_dims.iter().product::<usize>() != self.hidden
            || self.col_dims.iter().product::<usize>() != self.input
        {
            return Err(Error::Config(format!(
                "factors {:?} / {:?} do not multiply to hidden {} / input {}",
                self.row_dims, self.col_dims, self.hidden, self.input
            )));
        }
        if self.ranks.contains(&0) || self.ranks[n] != 1 {
            return Err(Error::Config(format!("ranks {:?} must be positive and end in 1", self.ranks)));
        }
        if self.mode == CellMode::PerGate && self.ranks[0] != 1 {
            return Err(Error::Config("per-gate TT cells have leading rank 1".to_string()));
        }
        Ok(())
    }

    /// Randomly initialized cell of this shape.
    pub fn build(&self, rng: &mut Rng) -> Result<Cell> {
        self.validate()?;
        Ok(match self.mode {
            CellMode::Dense => Cell::Dense(DenseCell::random(rng, self.kind, self.input, self.hidden)),
            CellMode::PerGate => {
                Cell::TtPerGate(TtPerGateCell::random(rng, self.kind, &self.row_dims, &self.col_dims, &self.ranks)?)
            }
            CellMode::Fused => {
                Cell::TtFused(TtFusedCell::random(rng, self.kind, &self.row_dims, &self.col_dims, &self.ranks)?)
            }
        })
    }
}

#[derive(Clone, Debug)]
enum Weights {
    Dense { w: ParamId, u: ParamId },
    PerGate { w: Vec<Vec<ParamId>>, u: Vec<Vec<ParamId>> },
    Fused { wv: ParamId, w: Vec<ParamId>, uv: ParamId, u: Vec<ParamId> },
}

#[derive(Clone, Debug)]
struct Head {
    weight: ParamId,
    bias: ParamId,
}

/// A recurrent layer (stacked gate biases as one `gD` vector) followed by
/// an optional affine head on the last hidden state.
#[derive(Clone, Debug)]
pub struct SequenceModel {
    kind: CellKind,
    input: usize,
    hidden: usize,
    weights: Weights,
    bias: ParamId,
    head: Option<Head>,
}

/// Graph handles for one forward pass.
enum BoundWeights {
    Dense { w: Var, u: Var },
    PerGate { w: Vec<Vec<Var>>, u: Vec<Vec<Var>> },
    Fused { wv: Var, w: Vec<Var>, uv: Var, u: Vec<Var> },
}

pub struct Bound {
    weights: BoundWeights,
    bias: Var,
    head: Option<(Var, Var)>,
}

#[derive(Clone, Copy)]
enum Stack {
    Input,
    Hidden,
}

fn add_cores(store: &mut ParamStore, prefix: &str, tt: &TtMatrix) -> Vec<ParamId> {
    tt.cores().iter().enumerate().map(|(k, c)| store.add(format!("{prefix}.core{k}"), c.clone())).collect()
}

fn cores_of(store: &ParamStore, ids: &[ParamId]) -> Result<TtMatrix> {
    TtMatrix::new(ids.iter().map(|&id| store.value(id).clone()).collect())
}

impl SequenceModel {
    /// Registers the parameters of `cell` (and `head`) in `store`.
    pub fn from_cell(store: &mut ParamStore, cell: &Cell, head: Option<&ProjectionLayer>) -> Result<Self> {
        let kind = cell.kind();
        let names = kind.gate_names();
        let (weights, biases) = match cell {
            Cell::Dense(c) => {
                let w = store.add("rnn.w", c.stacked_w());
                let u = store.add("rnn.u", c.stacked_u());
                (Weights::Dense { w, u }, c.biases())
            }
            Cell::TtPerGate(c) => {
                let w = names.iter().zip(c.w()).map(|(n, tt)| add_cores(store, &format!("rnn.w.{n}"), tt)).collect();
                let u = names.iter().zip(c.u()).map(|(n, tt)| add_cores(store, &format!("rnn.u.{n}"), tt)).collect();
                (Weights::PerGate { w, u }, c.biases())
            }
            Cell::TtFused(c) => {
                let wv = store.add("rnn.w.gate_core", c.w().gate_core().clone());
                let w = add_cores(store, "rnn.w", c.w().shared());
                let uv = store.add("rnn.u.gate_core", c.u().gate_core().clone());
                let u = add_cores(store, "rnn.u", c.u().shared());
                (Weights::Fused { wv, w, uv, u }, c.biases())
            }
        };
        let bias = store.add("rnn.b", Tensor::vector(biases.iter().flat_map(|b| b.data().to_vec()).collect()));
        let head = head.map(|p| Head {
            weight: store.add("head.weight", p.weight.clone()),
            bias: store.add("head.bias", p.bias.clone()),
        });
        if let Some(p) = head.as_ref().map(|h| store.value(h.weight)) {
            if p.cols() != cell.hidden_size() {
                return Err(Error::extent(format!(
                    "head takes {} inputs, cell has {} hidden",
                    p.cols(),
                    cell.hidden_size()
                )));
            }
        }
        Ok(SequenceModel { kind, input: cell.input_size(), hidden: cell.hidden_size(), weights, bias, head })
    }

    /// Fresh model: random cell of shape `spec` and, if `head_out > 0`, a
    /// random `head_out x D` head.
    pub fn random(store: &mut ParamStore, rng: &mut Rng, spec: &CellSpec, head_out: usize) -> Result<Self> {
        let cell = spec.build(rng)?;
        let head = (head_out > 0).then(|| ProjectionLayer::random(rng, spec.hidden, head_out));
        Self::from_cell(store, &cell, head.as_ref())
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn output_size(&self, store: &ParamStore) -> Option<usize> {
        self.head.as_ref().map(|h| store.value(h.weight).rows())
    }

    /// Current parameters as an inference cell and head.
    pub fn to_cell(&self, store: &ParamStore) -> Result<(Cell, Option<ProjectionLayer>)> {
        let g = self.kind.gates();
        let d = self.hidden;
        let bias = store.value(self.bias);
        let biases: Vec<Tensor> = bias.data().chunks(d).map(|c| Tensor::vector(c.to_vec())).collect();
        let split = |t: &Tensor| -> Result<Vec<Tensor>> { (0..g).map(|i| t.slice_rows(i * d, d)).collect() };
        let cell = match &self.weights {
            Weights::Dense { w, u } => {
                Cell::Dense(DenseCell::new(self.kind, split(store.value(*w))?, split(store.value(*u))?, biases)?)
            }
            Weights::PerGate { w, u } => Cell::TtPerGate(TtPerGateCell::new(
                self.kind,
                w.iter().map(|ids| cores_of(store, ids)).collect::<Result<_>>()?,
                u.iter().map(|ids| cores_of(store, ids)).collect::<Result<_>>()?,
                biases,
            )?),
            Weights::Fused { wv, w, uv, u } => Cell::TtFused(TtFusedCell::new(
                self.kind,
                FusedTtWeights::new(store.value(*wv).clone(), cores_of(store, w)?)?,
                FusedTtWeights::new(store.value(*uv).clone(), cores_of(store, u)?)?,
                biases,
            )?),
        };
        let head = match &self.head {
            Some(h) => Some(ProjectionLayer::new(store.value(h.weight).clone(), store.value(h.bias).clone())?),
            None => None,
        };
        Ok((cell, head))
    }

    /// Places every parameter on `g` once.
    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> Bound {
        let mut p = |id: ParamId| g.param(store, id);
        let weights = match &self.weights {
            Weights::Dense { w, u } => BoundWeights::Dense { w: p(*w), u: p(*u) },
            Weights::PerGate { w, u } => BoundWeights::PerGate {
                w: w.iter().map(|ids| ids.iter().map(|&id| p(id)).collect()).collect(),
                u: u.iter().map(|ids| ids.iter().map(|&id| p(id)).collect()).collect(),
            },
            Weights::Fused { wv, w, uv, u } => BoundWeights::Fused {
                wv: p(*wv),
                w: w.iter().map(|&id| p(id)).collect(),
                uv: p(*uv),
                u: u.iter().map(|&id| p(id)).collect(),
            },
        };
        let bias = p(self.bias);
        let head = self.head.as_ref().map(|h| (p(h.weight), p(h.bias)));
        Bound { weights, bias, head }
    }

    /// Stacked gate pre-activations `gD x B` of one weight stack.
    fn gate_map(&self, g: &mut Graph, b: &Bound, stack: Stack, x: Var) -> Result<Var> {
        match (&b.weights, stack) {
            (BoundWeights::Dense { w, .. }, Stack::Input) => g.matmul(*w, x),
            (BoundWeights::Dense { u, .. }, Stack::Hidden) => g.matmul(*u, x),
            (BoundWeights::PerGate { w, u }, s) => {
                let per = match s {
                    Stack::Input => w,
                    Stack::Hidden => u,
                };
                let parts = per.iter().map(|cores| g.tt_matmul(cores, x)).collect::<Result<Vec<_>>>()?;
                g.concat_rows(&parts)
            }
            (BoundWeights::Fused { wv, w, uv, u }, s) => {
                let (v, cores) = match s {
                    Stack::Input => (*wv, w),
                    Stack::Hidden => (*uv, u),
                };
                let family = g.tt_matmul(cores, x)?;
                let batch = g.value(x).cols();
                let r0 = g.value(v).cols();
                let flat = g.reshape(family, &[r0, self.hidden * batch])?;
                let mixed = g.matmul(v, flat)?;
                g.reshape(mixed, &[self.kind.gates() * self.hidden, batch])
            }
        }
    }

    /// One recurrent step on a batch: `x` is `M x B`, `h` and `c` are `D x B`.
    pub fn step(&self, g: &mut Graph, b: &Bound, x: Var, h: Var, c: Option<Var>) -> Result<(Var, Option<Var>)> {
        let wx = self.gate_map(g, b, Stack::Input, x)?;
        let wx = g.add_column(wx, b.bias)?;
        match self.kind {
            CellKind::Lstm => {
                let c_prev = c.ok_or_else(|| Error::extent("LSTM step needs a cell state"))?;
                let uh = self.gate_map(g, b, Stack::Hidden, h)?;
                let pre = g.add(wx, uh)?;
                let gates = g.chunk_rows(pre, 4)?;
                let cand = g.tanh(gates[0]);
                let u = g.sigmoid(gates[1]);
                let f = g.sigmoid(gates[2]);
                let o = g.sigmoid(gates[3]);
                let write = g.mul(u, cand)?;
                let keep = g.mul(f, c_prev)?;
                let c_new = g.add(write, keep)?;
                let squashed = g.tanh(c_new);
                let h_new = g.mul(o, squashed)?;
                Ok((h_new, Some(c_new)))
            }
            CellKind::Gru => {
                let wxs = g.chunk_rows(wx, 3)?;
                let uh = self.gate_map(g, b, Stack::Hidden, h)?;
                let uhs = g.chunk_rows(uh, 3)?;
                let u_pre = g.add(wxs[1], uhs[1])?;
                let u = g.sigmoid(u_pre);
                let r_pre = g.add(wxs[2], uhs[2])?;
                let r = g.sigmoid(r_pre);
                let gated = g.mul(r, h)?;
                let uc = self.gate_map(g, b, Stack::Hidden, gated)?;
                let uc0 = g.slice_rows(uc, 0, self.hidden)?;
                let cand_pre = g.add(wxs[0], uc0)?;
                let cand = g.tanh(cand_pre);
                // h + u (cand - h) = u cand + (1 - u) h
                let delta = g.sub(cand, h)?;
                let moved = g.mul(u, delta)?;
                Ok((g.add(h, moved)?, None))
            }
        }
    }

    /// Final hidden state (`D x B`) after consuming `xs`, each `M x B`,
    /// from a zero initial state.
    pub fn final_hidden(&self, g: &mut Graph, b: &Bound, xs: &[Tensor]) -> Result<Var> {
        let batch = xs.first().ok_or_else(|| Error::EmptyDataset("empty sequence".to_string()))?.cols();
        let mut h = g.input(Tensor::zeros(&[self.hidden, batch]));
        let mut c = match self.kind {
            CellKind::Lstm => Some(g.input(Tensor::zeros(&[self.hidden, batch]))),
            CellKind::Gru => None,
        };
        for x in xs {
            if x.rank() != 2 || x.rows() != self.input || x.cols() != batch {
                return Err(Error::extent(format!("sequence step {:?}, expected {} x {batch}", x.shape(), self.input)));
            }
            let xv = g.input(x.clone());
            (h, c) = self.step(g, b, xv, h, c)?;
        }
        Ok(h)
    }

    /// Head output (`out x B`) on the final hidden state, or the hidden
    /// state itself when there is no head.
    pub fn forward(&self, g: &mut Graph, b: &Bound, xs: &[Tensor]) -> Result<Var> {
        let h = self.final_hidden(g, b, xs)?;
        match b.head {
            Some((w, bias)) => {
                let y = g.matmul(w, h)?;
                g.add_column(y, bias)
            }
            None => Ok(h),
        }
    }

    /// Outputs for every item of `data` as rows of an `N x out` matrix,
    /// evaluated in chunks of `chunk` sequences.
    pub fn predict(&self, store: &ParamStore, data: &SequenceData, chunk: usize) -> Result<Tensor> {
        let mut rows = Vec::new();
        let all: Vec<usize> = (0..data.len()).collect();
        for idx in all.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, store);
            let out = self.forward(&mut g, &b, &data.batch(idx)?)?;
            rows.push(g.value(out).transpose()?);
        }
        Tensor::concat_rows(&rows)
    }
}

/// Fixed-length sequences `N x T x M` with one label per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub items: Tensor,
    pub labels: Vec<usize>,
}

impl SequenceData {
    pub fn new(items: Tensor, labels: Vec<usize>) -> Result<Self> {
        if items.rank() != 3 {
            return Err(Error::extent(format!("sequence data must be N x T x M, got {:?}", items.shape())));
        }
        if items.shape()[0] != labels.len() {
            return Err(Error::LengthMismatch(labels.len(), items.shape()[0]));
        }
        Ok(SequenceData { items, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.items.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.items.shape()[2]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let (t, m) = (self.steps(), self.features());
        let mut data = Vec::with_capacity(idx.len() * t * m);
        for &i in idx {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange(format!("item {i} of {}", self.len())));
            }
            data.extend_from_slice(&self.items.data()[i * t * m..(i + 1) * t * m]);
        }
        Self::new(Tensor::from_vec(&[idx.len(), t, m], data)?, idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Time-major view of items `idx`: `T` matrices of shape `M x B`.
    pub fn batch(&self, idx: &[usize]) -> Result<Vec<Tensor>> {
        let (t, m, b) = (self.steps(), self.features(), idx.len());
        let d = self.items.data();
        (0..t)
            .map(|step| {
                let mut x = vec![0.0; m * b];
                for (col, &i) in idx.iter().enumerate() {
                    let base = (i * t + step) * m;
                    for f in 0..m {
                        x[f * b + col] = d[base + f];
                    }
                }
                Tensor::from_vec(&[m, b], x)
            })
            .collect()
    }
}
