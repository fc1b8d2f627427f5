//! Dense and tensor-train recurrent cells.
//!
//! Gate order is fixed: LSTM gates are `(c~, u, f, o)` (candidate, update,
//! forget, output) and GRU gates are `(h~, u, r)` (candidate, update, reset).
//! Every gate carries its own dense bias; biases are never tensorized.
//!
//! Three weight layouts are supported:
//!
//! * [`DenseCell`]: `g` input matrices `W_i` (`D x M`) and `g` hidden matrices
//!   `U_i` (`D x D`).
//! * [`TtPerGateCell`]: each of the `2g` matrices replaced by its own TT
//!   matrix, all sharing one factorization.
//! * [`TtFusedCell`]: the `g` matrices of each kind stacked row-wise into a
//!   `gD x M` (resp. `gD x D`) matrix held as [`FusedTtWeights`]: a `g x r_0`
//!   gate core `V` and shared cores encoding `r_0` matrices `M_alpha`, so
//!   that gate `i` uses `W_i = sum_alpha V[i, alpha] M_alpha`.
//!
//! For the fused GRU the reset gate multiplies `h_{t-1}` before the candidate
//! gate's hidden term, so the hidden stack is applied twice per step: once to
//! `h_{t-1}` (update and reset chunks) and once to `r * h_{t-1}` (candidate
//! chunk). The weights are the same in both applications.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal_tensor, Rng};
use crate::tensor::Tensor;
use crate::tt::{tt_svd, Truncation, TtMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Lstm => &["c", "u", "f", "o"],
            CellKind::Gru => &["h", "u", "r"],
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        })
    }
}

/// Hidden state `h` and, for an LSTM, the cell state `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl RnnState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        RnnState { h: Tensor::zeros(&[hidden]), c: (kind == CellKind::Lstm).then(|| Tensor::zeros(&[hidden])) }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Anything that advances a recurrent state by one input vector.
pub trait Recurrent {
    fn kind(&self) -> CellKind;
    fn input_size(&self) -> usize;
    fn hidden_size(&self) -> usize;
    fn step(&self, x: &Tensor, state: &RnnState) -> Result<RnnState>;

    fn initial_state(&self) -> RnnState {
        RnnState::zeros(self.kind(), self.hidden_size())
    }
}

/// The two linear maps feeding the gates, `W x` and `U h`, split per gate.
trait GateMaps {
    fn input_terms(&self, x: &Tensor) -> Result<Vec<Tensor>>;
    fn hidden_terms(&self, h: &Tensor) -> Result<Vec<Tensor>>;
    fn hidden_term(&self, h: &Tensor, gate: usize) -> Result<Tensor> {
        Ok(self.hidden_terms(h)?.swap_remove(gate))
    }
}

fn check_vec(t: &Tensor, len: usize, what: &str) -> Result<()> {
    if t.len() != len {
        return Err(Error::extent(format!("{what} has {} elements, expected {len}", t.len())));
    }
    Ok(())
}

fn generic_step(
    maps: &impl GateMaps,
    kind: CellKind,
    bias: &[Tensor],
    (input, hidden): (usize, usize),
    x: &Tensor,
    s: &RnnState,
) -> Result<RnnState> {
    check_vec(x, input, "input")?;
    check_vec(&s.h, hidden, "hidden state")?;
    let wx = maps.input_terms(x)?;
    match kind {
        CellKind::Lstm => {
            let c_prev = s.c.as_ref().ok_or_else(|| Error::extent("LSTM state has no cell vector"))?;
            check_vec(c_prev, hidden, "cell state")?;
            let uh = maps.hidden_terms(&s.h)?;
            let pre = |gate: usize, i: usize| wx[gate].data()[i] + uh[gate].data()[i] + bias[gate].data()[i];
            let mut c = vec![0.0; hidden];
            let mut h = vec![0.0; hidden];
            for i in 0..hidden {
                let cand = pre(0, i).tanh();
                let u = sigmoid(pre(1, i));
                let f = sigmoid(pre(2, i));
                let o = sigmoid(pre(3, i));
                c[i] = u * cand + f * c_prev.data()[i];
                h[i] = o * c[i].tanh();
            }
            Ok(RnnState { h: Tensor::vector(h), c: Some(Tensor::vector(c)) })
        }
        CellKind::Gru => {
            let uh = maps.hidden_terms(&s.h)?;
            let hp = s.h.data();
            let u: Vec<f64> =
                (0..hidden).map(|i| sigmoid(wx[1].data()[i] + uh[1].data()[i] + bias[1].data()[i])).collect();
            let r: Vec<f64> =
                (0..hidden).map(|i| sigmoid(wx[2].data()[i] + uh[2].data()[i] + bias[2].data()[i])).collect();
            let gated = Tensor::vector((0..hidden).map(|i| r[i] * hp[i]).collect());
            let uc = maps.hidden_term(&gated, 0)?;
            let h = (0..hidden)
                .map(|i| {
                    let cand = (wx[0].data()[i] + uc.data()[i] + bias[0].data()[i]).tanh();
                    u[i] * cand + (1.0 - u[i]) * hp[i]
                })
                .collect();
            Ok(RnnState { h: Tensor::vector(h), c: None })
        }
    }
}

fn check_gate_count(kind: CellKind, n: usize, what: &str) -> Result<()> {
    if n != kind.gates() {
        return Err(Error::extent(format!("{kind} needs {} {what}, got {n}", kind.gates())));
    }
    Ok(())
}

fn check_biases(kind: CellKind, b: &[Tensor], hidden: usize) -> Result<()> {
    check_gate_count(kind, b.len(), "biases")?;
    b.iter().try_for_each(|v| check_vec(v, hidden, "bias"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseCell {
    kind: CellKind,
    w: Vec<Tensor>,
    u: Vec<Tensor>,
    b: Vec<Tensor>,
}

impl DenseCell {
    pub fn new(kind: CellKind, w: Vec<Tensor>, u: Vec<Tensor>, b: Vec<Tensor>) -> Result<Self> {
        check_gate_count(kind, w.len(), "input matrices")?;
        check_gate_count(kind, u.len(), "hidden matrices")?;
        let (d, m) = match w[0].shape() {
            [d, m] => (*d, *m),
            s => return Err(Error::extent(format!("input matrix shape {s:?}"))),
        };
        if w.iter().any(|t| t.shape() != [d, m]) || u.iter().any(|t| t.shape() != [d, d]) {
            return Err(Error::extent("all gates must share D and M"));
        }
        check_biases(kind, &b, d)?;
        Ok(DenseCell { kind, w, u, b })
    }

    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let g = kind.gates();
        DenseCell {
            kind,
            w: vec![Tensor::zeros(&[hidden, input]); g],
            u: vec![Tensor::zeros(&[hidden, hidden]); g],
            b: vec![Tensor::zeros(&[hidden]); g],
        }
    }

    /// Entries uniform in `[-1/sqrt(D), 1/sqrt(D)]`, biases zero.
    pub fn random(rng: &mut Rng, kind: CellKind, input: usize, hidden: usize) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let g = kind.gates();
        let mut gen = |shape: &[usize]| crate::rng::uniform_tensor(rng, shape, -k, k);
        let w = (0..g).map(|_| gen(&[hidden, input])).collect();
        let u = (0..g).map(|_| gen(&[hidden, hidden])).collect();
        DenseCell { kind, w, u, b: vec![Tensor::zeros(&[hidden]); g] }
    }

    pub fn w(&self) -> &[Tensor] {
        &self.w
    }

    pub fn u(&self) -> &[Tensor] {
        &self.u
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.b
    }

    /// Row-wise concatenation `[W_1; ...; W_g]`.
    pub fn stacked_w(&self) -> Tensor {
        Tensor::concat_rows(&self.w).expect("uniform gate shapes")
    }

    pub fn stacked_u(&self) -> Tensor {
        Tensor::concat_rows(&self.u).expect("uniform gate shapes")
    }

    pub fn param_count(&self, bias: bool) -> usize {
        count_params_dense(self.kind.gates(), self.hidden_size(), self.input_size(), bias)
    }
}

impl GateMaps for DenseCell {
    fn input_terms(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.w.iter().map(|w| w.matvec(x)).collect()
    }
    fn hidden_terms(&self, h: &Tensor) -> Result<Vec<Tensor>> {
        self.u.iter().map(|u| u.matvec(h)).collect()
    }
    fn hidden_term(&self, h: &Tensor, gate: usize) -> Result<Tensor> {
        self.u[gate].matvec(h)
    }
}

impl Recurrent for DenseCell {
    fn kind(&self) -> CellKind {
        self.kind
    }
    fn input_size(&self) -> usize {
        self.w[0].cols()
    }
    fn hidden_size(&self) -> usize {
        self.w[0].rows()
    }
    fn step(&self, x: &Tensor, s: &RnnState) -> Result<RnnState> {
        generic_step(self, self.kind, &self.b, (self.input_size(), self.hidden_size()), x, s)
    }
}

/// One TT matrix per gate and weight kind, with a common factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct TtPerGateCell {
    kind: CellKind,
    w: Vec<TtMatrix>,
    u: Vec<TtMatrix>,
    b: Vec<Tensor>,
}

impl TtPerGateCell {
    pub fn new(kind: CellKind, w: Vec<TtMatrix>, u: Vec<TtMatrix>, b: Vec<Tensor>) -> Result<Self> {
        check_gate_count(kind, w.len(), "input TT matrices")?;
        check_gate_count(kind, u.len(), "hidden TT matrices")?;
        let (rd, cd) = (w[0].row_dims().to_vec(), w[0].col_dims().to_vec());
        let same = |t: &TtMatrix, rows: &[usize], cols: &[usize]| {
            t.row_dims() == rows && t.col_dims() == cols && t.leading_rank() == 1
        };
        if !w.iter().all(|t| same(t, &rd, &cd)) || !u.iter().all(|t| same(t, &rd, &rd)) {
            return Err(Error::extent(
                "per-gate TT matrices must share one factorization (W: D/M, U: D/D) with leading rank 1",
            ));
        }
        check_biases(kind, &b, w[0].rows())?;
        Ok(TtPerGateCell { kind, w, u, b })
    }

    /// TT-SVD of every matrix of a dense cell; biases are copied.
    pub fn from_dense(cell: &DenseCell, row_dims: &[usize], col_dims: &[usize], trunc: &Truncation) -> Result<Self> {
        let w = cell.w.iter().map(|m| tt_svd(m, row_dims, col_dims, trunc)).collect::<Result<_>>()?;
        let u = cell.u.iter().map(|m| tt_svd(m, row_dims, row_dims, trunc)).collect::<Result<_>>()?;
        Self::new(cell.kind, w, u, cell.b.clone())
    }

    /// Random cores scaled so each reconstructed matrix has elementwise
    /// variance about `2 / (fan_in + fan_out)`.
    pub fn random(
        rng: &mut Rng,
        kind: CellKind,
        row_dims: &[usize],
        col_dims: &[usize],
        ranks: &[usize],
    ) -> Result<Self> {
        let (d, m) = (row_dims.iter().product::<usize>(), col_dims.iter().product::<usize>());
        let std_w = tt_core_std(2.0 / (d + m) as f64, ranks);
        let std_u = tt_core_std(1.0 / d as f64, ranks);
        let g = kind.gates();
        let w = (0..g).map(|_| TtMatrix::random(rng, row_dims, col_dims, ranks, std_w)).collect::<Result<_>>()?;
        let u = (0..g).map(|_| TtMatrix::random(rng, row_dims, row_dims, ranks, std_u)).collect::<Result<_>>()?;
        Self::new(kind, w, u, vec![Tensor::zeros(&[d]); g])
    }

    pub fn w(&self) -> &[TtMatrix] {
        &self.w
    }

    pub fn u(&self) -> &[TtMatrix] {
        &self.u
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.b
    }

    /// Dense cell on the reconstructed matrices.
    pub fn to_dense(&self) -> DenseCell {
        DenseCell {
            kind: self.kind,
            w: self.w.iter().map(TtMatrix::to_dense).collect(),
            u: self.u.iter().map(TtMatrix::to_dense).collect(),
            b: self.b.clone(),
        }
    }

    /// Stored core entries of all `2g` TT matrices, plus biases if asked.
    pub fn param_count(&self, bias: bool) -> usize {
        let cores: usize = self.w.iter().chain(&self.u).map(TtMatrix::param_count).sum();
        cores + if bias { self.b.iter().map(Tensor::len).sum() } else { 0 }
    }
}

impl GateMaps for TtPerGateCell {
    fn input_terms(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.w.iter().map(|w| w.matvec(x)).collect()
    }
    fn hidden_terms(&self, h: &Tensor) -> Result<Vec<Tensor>> {
        self.u.iter().map(|u| u.matvec(h)).collect()
    }
    fn hidden_term(&self, h: &Tensor, gate: usize) -> Result<Tensor> {
        self.u[gate].matvec(h)
    }
}

impl Recurrent for TtPerGateCell {
    fn kind(&self) -> CellKind {
        self.kind
    }
    fn input_size(&self) -> usize {
        self.w[0].cols()
    }
    fn hidden_size(&self) -> usize {
        self.w[0].rows()
    }
    fn step(&self, x: &Tensor, s: &RnnState) -> Result<RnnState> {
        generic_step(self, self.kind, &self.b, (self.input_size(), self.hidden_size()), x, s)
    }
}

/// Standard deviation of i.i.d. core entries giving the reconstructed
/// matrix elementwise variance `target_var`. The leading rank is excluded:
/// for fused weights it is absorbed by the unit-scale gate core.
pub fn tt_core_std(target_var: f64, ranks: &[usize]) -> f64 {
    let n = ranks.len() - 1;
    let paths: f64 = ranks[1..n].iter().map(|&r| r as f64).product();
    (target_var / paths).powf(1.0 / (2.0 * n as f64))
}

/// Gate core `V` (`g x r_0`) plus shared cores of leading rank `r_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedTtWeights {
    gate_core: Tensor,
    shared: TtMatrix,
}

impl FusedTtWeights {
    pub fn new(gate_core: Tensor, shared: TtMatrix) -> Result<Self> {
        if gate_core.rank() != 2 || gate_core.cols() != shared.leading_rank() {
            return Err(Error::extent(format!(
                "gate core shape {:?} does not match leading rank {}",
                gate_core.shape(),
                shared.leading_rank()
            )));
        }
        Ok(FusedTtWeights { gate_core, shared })
    }

    /// `V` entries `N(0, 1/r_0)`; shared cores scaled so each gate matrix has
    /// elementwise variance about `target_var`.
    pub fn random(
        rng: &mut Rng,
        gates: usize,
        row_dims: &[usize],
        col_dims: &[usize],
        ranks: &[usize],
        target_var: f64,
    ) -> Result<Self> {
        let r0 = ranks[0];
        let v = normal_tensor(rng, &[gates, r0], 1.0 / (r0 as f64).sqrt());
        let shared = TtMatrix::random(rng, row_dims, col_dims, ranks, tt_core_std(target_var, ranks))?;
        Self::new(v, shared)
    }

    pub fn zeros(gates: usize, row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> Result<Self> {
        Self::new(Tensor::zeros(&[gates, ranks[0]]), TtMatrix::zeros(row_dims, col_dims, ranks)?)
    }

    /// TT-SVD of a stacked `gD x M` matrix under the augmented factorization
    /// `(g, d_1..d_n) / (1, m_1..m_n)`; the first core becomes `V`.
    pub fn from_dense(
        stacked: &Tensor,
        gates: usize,
        row_dims: &[usize],
        col_dims: &[usize],
        trunc: &Truncation,
    ) -> Result<Self> {
        let mut rows = vec![gates];
        rows.extend_from_slice(row_dims);
        let mut cols = vec![1];
        cols.extend_from_slice(col_dims);
        // internal ranks of the augmented chain are (r_0, r_1, .., r_{n-1})
        let full = tt_svd(stacked, &rows, &cols, trunc)?;
        let mut cores = full.into_cores();
        let first = cores.remove(0);
        let r0 = first.shape()[3];
        let v = first.into_shape(&[gates, r0])?;
        Self::new(v, TtMatrix::new(cores)?)
    }

    pub fn gates(&self) -> usize {
        self.gate_core.rows()
    }

    pub fn gate_core(&self) -> &Tensor {
        &self.gate_core
    }

    pub fn shared(&self) -> &TtMatrix {
        &self.shared
    }

    pub fn rows(&self) -> usize {
        self.shared.rows()
    }

    pub fn cols(&self) -> usize {
        self.shared.cols()
    }

    /// The full `(n+1)`-core TT of the stacked matrix, with `V` reshaped to
    /// a `g x 1 x 1 x r_0` first core.
    pub fn to_full_tt(&self) -> TtMatrix {
        let (g, r0) = (self.gates(), self.shared.leading_rank());
        let mut cores = vec![self.gate_core.reshape(&[g, 1, 1, r0]).expect("same size")];
        cores.extend(self.shared.cores().iter().cloned());
        TtMatrix::new(cores).expect("ranks chain through")
    }

    /// `W x` for the stacked `gD x M` matrix, without forming it.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.shared.matvec(x)?;
        let (r0, d) = (self.shared.leading_rank(), self.rows());
        let mixed = self.gate_core.matmul(&y.into_shape(&[r0, d])?)?;
        let n = mixed.len();
        mixed.into_shape(&[n])
    }

    /// `W_i = sum_alpha V[i, alpha] M_alpha`.
    pub fn gate_matrix(&self, gate: usize) -> Result<Tensor> {
        extract_gate_matrix(self, gate)
    }

    /// Stored entries of `V` and the shared cores.
    pub fn param_count(&self) -> usize {
        self.gate_core.len() + self.shared.param_count()
    }
}

/// Dense matrix of gate `gate` as the `V`-weighted mixture of the family
/// encoded by the shared cores.
pub fn extract_gate_matrix(fw: &FusedTtWeights, gate: usize) -> Result<Tensor> {
    if gate >= fw.gates() {
        return Err(Error::IndexOutOfRange(format!("gate {gate} of {}", fw.gates())));
    }
    let (d, m) = (fw.rows(), fw.cols());
    let family = fw.shared.to_dense();
    let v = fw.gate_core.slice_rows(gate, 1)?;
    let mixed = v.matmul(&family.into_shape(&[fw.shared.leading_rank(), d * m])?)?;
    mixed.into_shape(&[d, m])
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtFusedCell {
    kind: CellKind,
    w: FusedTtWeights,
    u: FusedTtWeights,
    b: Vec<Tensor>,
}

impl TtFusedCell {
    pub fn new(kind: CellKind, w: FusedTtWeights, u: FusedTtWeights, b: Vec<Tensor>) -> Result<Self> {
        let g = kind.gates();
        if w.gates() != g || u.gates() != g {
            return Err(Error::extent(format!("{kind} fused weights need {g} gate rows")));
        }
        if u.rows() != w.rows() || u.cols() != w.rows() || u.shared.row_dims() != w.shared.row_dims() {
            return Err(Error::extent("hidden stack must be gD x D with the input stack's row factorization"));
        }
        check_biases(kind, &b, w.rows())?;
        Ok(TtFusedCell { kind, w, u, b })
    }

    /// Random initialization with ranks `(r_0, r_1, .., r_{n-1}, 1)` for both stacks.
    pub fn random(
        rng: &mut Rng,
        kind: CellKind,
        row_dims: &[usize],
        col_dims: &[usize],
        ranks: &[usize],
    ) -> Result<Self> {
        let g = kind.gates();
        let (d, m) = (row_dims.iter().product::<usize>(), col_dims.iter().product::<usize>());
        let w = FusedTtWeights::random(rng, g, row_dims, col_dims, ranks, 2.0 / (d + m) as f64)?;
        let u = FusedTtWeights::random(rng, g, row_dims, row_dims, ranks, 1.0 / d as f64)?;
        Self::new(kind, w, u, vec![Tensor::zeros(&[d]); g])
    }

    pub fn zeros(kind: CellKind, row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> Result<Self> {
        let g = kind.gates();
        let d = row_dims.iter().product::<usize>();
        Self::new(
            kind,
            FusedTtWeights::zeros(g, row_dims, col_dims, ranks)?,
            FusedTtWeights::zeros(g, row_dims, row_dims, ranks)?,
            vec![Tensor::zeros(&[d]); g],
        )
    }

    pub fn w(&self) -> &FusedTtWeights {
        &self.w
    }

    pub fn u(&self) -> &FusedTtWeights {
        &self.u
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.b
    }

    /// Dense cell whose gate matrices are the extracted mixtures.
    pub fn to_dense(&self) -> DenseCell {
        let g = self.kind.gates();
        DenseCell {
            kind: self.kind,
            w: (0..g).map(|i| extract_gate_matrix(&self.w, i).expect("gate in range")).collect(),
            u: (0..g).map(|i| extract_gate_matrix(&self.u, i).expect("gate in range")).collect(),
            b: self.b.clone(),
        }
    }

    /// Exact element count of both gate cores and both shared chains, plus
    /// biases if asked.
    pub fn param_count(&self, bias: bool) -> usize {
        self.w.param_count() + self.u.param_count() + if bias { self.b.iter().map(Tensor::len).sum() } else { 0 }
    }
}

fn split_chunks(stacked: Tensor, gates: usize) -> Vec<Tensor> {
    let d = stacked.len() / gates;
    stacked.data().chunks(d).map(|c| Tensor::vector(c.to_vec())).collect()
}

impl GateMaps for TtFusedCell {
    fn input_terms(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(split_chunks(self.w.matvec(x)?, self.kind.gates()))
    }
    fn hidden_terms(&self, h: &Tensor) -> Result<Vec<Tensor>> {
        Ok(split_chunks(self.u.matvec(h)?, self.kind.gates()))
    }
}

impl Recurrent for TtFusedCell {
    fn kind(&self) -> CellKind {
        self.kind
    }
    fn input_size(&self) -> usize {
        self.w.cols()
    }
    fn hidden_size(&self) -> usize {
        self.w.rows()
    }
    fn step(&self, x: &Tensor, s: &RnnState) -> Result<RnnState> {
        generic_step(self, self.kind, &self.b, (self.input_size(), self.hidden_size()), x, s)
    }
}

/// Any of the three layouts.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Cell {
    Dense(DenseCell),
    TtPerGate(TtPerGateCell),
    TtFused(TtFusedCell),
}

impl Cell {
    pub fn param_count(&self, bias: bool) -> usize {
        match self {
            Cell::Dense(c) => c.param_count(bias),
            Cell::TtPerGate(c) => c.param_count(bias),
            Cell::TtFused(c) => c.param_count(bias),
        }
    }

    pub fn to_dense(&self) -> DenseCell {
        match self {
            Cell::Dense(c) => c.clone(),
            Cell::TtPerGate(c) => c.to_dense(),
            Cell::TtFused(c) => c.to_dense(),
        }
    }

    fn inner(&self) -> &dyn Recurrent {
        match self {
            Cell::Dense(c) => c,
            Cell::TtPerGate(c) => c,
            Cell::TtFused(c) => c,
        }
    }
}

impl Recurrent for Cell {
    fn kind(&self) -> CellKind {
        self.inner().kind()
    }
    fn input_size(&self) -> usize {
        self.inner().input_size()
    }
    fn hidden_size(&self) -> usize {
        self.inner().hidden_size()
    }
    fn step(&self, x: &Tensor, s: &RnnState) -> Result<RnnState> {
        self.inner().step(x, s)
    }
}

fn require_kind(actual: CellKind, wanted: CellKind) -> Result<()> {
    if actual != wanted {
        return Err(Error::extent(format!("expected a {wanted} cell, got {actual}")));
    }
    Ok(())
}

pub fn lstm_step(cell: &DenseCell, x: &Tensor, s: &RnnState) -> Result<RnnState> {
    require_kind(cell.kind, CellKind::Lstm)?;
    cell.step(x, s)
}

pub fn gru_step(cell: &DenseCell, x: &Tensor, s: &RnnState) -> Result<RnnState> {
    require_kind(cell.kind, CellKind::Gru)?;
    cell.step(x, s)
}

pub fn tt_lstm_step_pergate(cell: &TtPerGateCell, x: &Tensor, s: &RnnState) -> Result<RnnState> {
    require_kind(cell.kind, CellKind::Lstm)?;
    cell.step(x, s)
}

pub fn tt_lstm_step_fused(cell: &TtFusedCell, x: &Tensor, s: &RnnState) -> Result<RnnState> {
    require_kind(cell.kind, CellKind::Lstm)?;
    cell.step(x, s)
}

pub fn tt_gru_step_fused(cell: &TtFusedCell, x: &Tensor, s: &RnnState) -> Result<RnnState> {
    require_kind(cell.kind, CellKind::Gru)?;
    cell.step(x, s)
}

/// Applies `cell` to each row of `xs` (`T x M`), returning the `T` hidden
/// states and the final state.
pub fn run_sequence<C: Recurrent + ?Sized>(cell: &C, xs: &[Tensor], s0: &RnnState) -> Result<(Vec<Tensor>, RnnState)> {
    let mut s = s0.clone();
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        s = cell.step(x, &s)?;
        outputs.push(s.h.clone());
    }
    Ok((outputs, s))
}

/// Affine map from the hidden state to an embedding or logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionLayer {
    /// `E x D`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ProjectionLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.len() != weight.rows() {
            return Err(Error::extent(format!("projection weight {:?} with bias {:?}", weight.shape(), bias.shape())));
        }
        Ok(ProjectionLayer { weight, bias })
    }

    pub fn random(rng: &mut Rng, hidden: usize, out: usize) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        ProjectionLayer { weight: crate::rng::uniform_tensor(rng, &[out, hidden], -k, k), bias: Tensor::zeros(&[out]) }
    }

    pub fn project(&self, h: &Tensor) -> Result<Tensor> {
        self.weight.matvec(h)?.add(&self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn project(p: &ProjectionLayer, h: &Tensor) -> Result<Tensor> {
    p.project(h)
}

/// `g D (M + D)`, plus `g D` for one bias per gate.
pub fn count_params_dense(gates: usize, hidden: usize, input: usize, bias: bool) -> usize {
    gates * hidden * (input + hidden) + if bias { gates * hidden } else { 0 }
}

/// Per-gate tensorization: `g * sum_k r_{k-1} r_k d_k (m_k + d_k)`.
pub fn count_params_tt1(gates: usize, row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> usize {
    gates * shared_core_sum(row_dims, col_dims, ranks)
}

/// Fused tensorization closed form: `g r_0 + sum_k r_{k-1} r_k d_k (m_k + d_k)`,
/// with `r_0 = ranks[0]`. This counts one gate core; an actual fused cell
/// stores one for each of its two stacks (see [`count_params_tt2`]).
pub fn count_params_tt2_closed_form(gates: usize, row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> usize {
    gates * ranks[0] + shared_core_sum(row_dims, col_dims, ranks)
}

/// Exact stored weight count of a fused cell.
pub fn count_params_tt2(cell: &TtFusedCell, bias: bool) -> usize {
    cell.param_count(bias)
}

fn shared_core_sum(row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> usize {
    (0..row_dims.len()).map(|k| ranks[k] * ranks[k + 1] * row_dims[k] * (col_dims[k] + row_dims[k])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_tensor};

    fn scalar_cell(kind: CellKind, w: &[f64], u: &[f64], b: &[f64]) -> DenseCell {
        let t = |v: f64| Tensor::from_vec(&[1, 1], vec![v]).unwrap();
        DenseCell::new(
            kind,
            w.iter().map(|&v| t(v)).collect(),
            u.iter().map(|&v| t(v)).collect(),
            b.iter().map(|&v| Tensor::vector(vec![v])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn lstm_zero_weights() {
        let cell = DenseCell::zeros(CellKind::Lstm, 3, 4);
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let s = lstm_step(&cell, &x, &RnnState::zeros(CellKind::Lstm, 4)).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_scalar_hand_computation() {
        let (w, u, b) = ([0.5, -0.3, 0.8, 0.1], [0.2, 0.4, -0.6, 0.9], [0.1, 0.0, 0.3, -0.2]);
        let cell = scalar_cell(CellKind::Lstm, &w, &u, &b);
        let (x, h0, c0) = (0.7, -0.4, 0.25);
        let s0 = RnnState { h: Tensor::vector(vec![h0]), c: Some(Tensor::vector(vec![c0])) };
        let s = lstm_step(&cell, &Tensor::vector(vec![x]), &s0).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let cand = (w[0] * x + u[0] * h0 + b[0]).tanh();
        let ug = sig(w[1] * x + u[1] * h0 + b[1]);
        let fg = sig(w[2] * x + u[2] * h0 + b[2]);
        let og = sig(w[3] * x + u[3] * h0 + b[3]);
        let c = ug * cand + fg * c0;
        let h = og * c.tanh();
        assert!((s.c.unwrap().data()[0] - c).abs() < 1e-12);
        assert!((s.h.data()[0] - h).abs() < 1e-12);
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let cell = DenseCell::zeros(CellKind::Gru, 2, 3);
        let s0 = RnnState { h: Tensor::vector(vec![0.8, -0.4, 1.0]), c: None };
        let s = gru_step(&cell, &Tensor::vector(vec![1.0, 1.0]), &s0).unwrap();
        assert_eq!(s.h.data(), &[0.4, -0.2, 0.5]);
    }

    #[test]
    fn gru_scalar_hand_computation() {
        let (w, u, b) = ([0.5, -0.3, 0.8], [0.2, 0.4, -0.6], [0.1, 0.0, 0.3]);
        let cell = scalar_cell(CellKind::Gru, &w, &u, &b);
        let (x, h0) = (0.7, -0.4);
        let s0 = RnnState { h: Tensor::vector(vec![h0]), c: None };
        let s = gru_step(&cell, &Tensor::vector(vec![x]), &s0).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let ug = sig(w[1] * x + u[1] * h0 + b[1]);
        let r = sig(w[2] * x + u[2] * h0 + b[2]);
        let cand = (w[0] * x + u[0] * (r * h0) + b[0]).tanh();
        let h = ug * cand + (1.0 - ug) * h0;
        assert!((s.h.data()[0] - h).abs() < 1e-12);
    }

    #[test]
    fn step_functions_check_kind_and_shape() {
        let lstm = DenseCell::zeros(CellKind::Lstm, 2, 2);
        let s = RnnState::zeros(CellKind::Lstm, 2);
        assert!(gru_step(&lstm, &Tensor::zeros(&[2]), &s).is_err());
        assert!(matches!(lstm_step(&lstm, &Tensor::zeros(&[3]), &s), Err(Error::ExtentMismatch(_))));
    }

    #[test]
    fn bounds_hold_on_random_cells() {
        let mut rng = seeded(77);
        for trial in 0..2000 {
            let kind = if trial % 2 == 0 { CellKind::Lstm } else { CellKind::Gru };
            let g = kind.gates();
            let (m, d) = (3, 4);
            let mut gen = |s: &[usize]| uniform_tensor(&mut rng, s, -1.0, 1.0);
            let w = (0..g).map(|_| gen(&[d, m])).collect();
            let u = (0..g).map(|_| gen(&[d, d])).collect();
            let b = (0..g).map(|_| gen(&[d])).collect();
            let cell = DenseCell::new(kind, w, u, b).unwrap();
            let mut s = RnnState { h: gen(&[d]), c: (kind == CellKind::Lstm).then(|| gen(&[d])) };
            for _ in 0..5 {
                s = cell.step(&gen(&[m]), &s).unwrap();
                match kind {
                    CellKind::Lstm => assert!(s.h.data().iter().all(|v| v.abs() < 1.0)),
                    CellKind::Gru => assert!(s.h.data().iter().all(|v| v.abs() <= 1.0)),
                }
            }
        }
    }

    #[test]
    fn pergate_from_full_rank_svd_matches_dense() {
        let mut rng = seeded(4);
        let dense = DenseCell::random(&mut rng, CellKind::Lstm, 6, 4);
        let tt = TtPerGateCell::from_dense(&dense, &[2, 2], &[3, 2], &Truncation::Exact).unwrap();
        let mut s_dense = dense.initial_state();
        let mut s_tt = tt.initial_state();
        for _ in 0..10 {
            let x = uniform_tensor(&mut rng, &[6], -1.0, 1.0);
            s_dense = lstm_step(&dense, &x, &s_dense).unwrap();
            s_tt = tt_lstm_step_pergate(&tt, &x, &s_tt).unwrap();
            assert!(s_tt.h.relative_error(&s_dense.h).unwrap() < 1e-9);
        }
    }

    #[test]
    fn pergate_zero_cores_match_zero_dense() {
        let tt = TtPerGateCell::new(
            CellKind::Lstm,
            (0..4).map(|_| TtMatrix::zeros(&[2, 2], &[1, 3], &[1, 2, 1]).unwrap()).collect(),
            (0..4).map(|_| TtMatrix::zeros(&[2, 2], &[2, 2], &[1, 2, 1]).unwrap()).collect(),
            vec![Tensor::zeros(&[4]); 4],
        )
        .unwrap();
        let s = tt_lstm_step_pergate(&tt, &Tensor::full(&[3], 1.0), &tt.initial_state()).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_gate_matrix_identity_and_zero_rows() {
        let mut rng = seeded(5);
        let shared = TtMatrix::random(&mut rng, &[2, 2], &[3, 1], &[3, 2, 1], 1.0).unwrap();
        let fw = FusedTtWeights::new(Tensor::eye(3), shared.clone()).unwrap();
        let family = shared.to_dense();
        for i in 0..3 {
            let w = extract_gate_matrix(&fw, i).unwrap();
            assert_eq!(w, family.slice_rows(i * 4, 4).unwrap());
        }
        let mut v = uniform_tensor(&mut rng, &[3, 3], -1.0, 1.0);
        v.data_mut()[3..6].iter_mut().for_each(|x| *x = 0.0);
        let fw = FusedTtWeights::new(v, shared).unwrap();
        assert!(extract_gate_matrix(&fw, 1).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(matches!(extract_gate_matrix(&fw, 3), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn extract_gate_matrix_matches_full_reconstruction() {
        let mut rng = seeded(6);
        let fw = FusedTtWeights::random(&mut rng, 4, &[2, 3], &[2, 2], &[3, 2, 1], 1.0).unwrap();
        let full = fw.to_full_tt().to_dense();
        assert_eq!(full.shape(), &[24, 4]);
        for i in 0..4 {
            let w = extract_gate_matrix(&fw, i).unwrap();
            assert!(w.relative_error(&full.slice_rows(i * 6, 6).unwrap()).unwrap() < 1e-12);
        }
        let x = uniform_tensor(&mut rng, &[4], -1.0, 1.0);
        assert!(fw.matvec(&x).unwrap().relative_error(&full.matvec(&x).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn fused_from_dense_round_trip() {
        let mut rng = seeded(7);
        let stacked = uniform_tensor(&mut rng, &[12, 4], -1.0, 1.0);
        let fw = FusedTtWeights::from_dense(&stacked, 3, &[2, 2], &[2, 2], &Truncation::Exact).unwrap();
        assert_eq!(fw.gates(), 3);
        assert!(fw.to_full_tt().to_dense().relative_error(&stacked).unwrap() < 1e-10);
    }

    #[test]
    fn fused_lstm_matches_extracted_dense() {
        let mut rng = seeded(8);
        let cell = TtFusedCell::random(&mut rng, CellKind::Lstm, &[2, 4], &[3, 2], &[4, 3, 1]).unwrap();
        let dense = cell.to_dense();
        let mut sa = cell.initial_state();
        let mut sb = dense.initial_state();
        for _ in 0..5 {
            let x = uniform_tensor(&mut rng, &[6], -1.0, 1.0);
            sa = tt_lstm_step_fused(&cell, &x, &sa).unwrap();
            sb = lstm_step(&dense, &x, &sb).unwrap();
            assert!(sa.h.sub(&sb.h).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn fused_gru_matches_extracted_dense() {
        let mut rng = seeded(9);
        let cell = TtFusedCell::random(&mut rng, CellKind::Gru, &[4, 4, 4], &[4, 4, 4], &[3, 2, 2, 1]).unwrap();
        let dense = cell.to_dense();
        let x = uniform_tensor(&mut rng, &[64], -1.0, 1.0);
        let s0 = RnnState { h: uniform_tensor(&mut rng, &[64], -1.0, 1.0), c: None };
        let a = tt_gru_step_fused(&cell, &x, &s0).unwrap();
        let b = gru_step(&dense, &x, &s0).unwrap();
        assert!(a.h.sub(&b.h).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn fused_gru_zero_cores_halve_state() {
        let cell = TtFusedCell::zeros(CellKind::Gru, &[2, 2], &[1, 2], &[2, 2, 1]).unwrap();
        let s0 = RnnState { h: Tensor::vector(vec![1.0, -1.0, 0.5, 0.0]), c: None };
        let s = tt_gru_step_fused(&cell, &Tensor::full(&[2], 3.0), &s0).unwrap();
        assert_eq!(s.h.data(), &[0.5, -0.5, 0.25, 0.0]);
    }

    #[test]
    fn fused_identity_gate_core_selects_family_member() {
        let mut rng = seeded(10);
        let w_shared = TtMatrix::random(&mut rng, &[2, 2], &[1, 3], &[4, 2, 1], 1.0).unwrap();
        let u_shared = TtMatrix::random(&mut rng, &[2, 2], &[2, 2], &[4, 2, 1], 1.0).unwrap();
        let cell = TtFusedCell::new(
            CellKind::Lstm,
            FusedTtWeights::new(Tensor::eye(4), w_shared.clone()).unwrap(),
            FusedTtWeights::new(Tensor::eye(4), u_shared).unwrap(),
            vec![Tensor::zeros(&[4]); 4],
        )
        .unwrap();
        let fam = w_shared.to_dense();
        for i in 0..4 {
            assert_eq!(cell.w().gate_matrix(i).unwrap(), fam.slice_rows(4 * i, 4).unwrap());
        }
    }

    #[test]
    fn figure_gru_shapes_accepted() {
        // D = M = 64, stacked W is 192 x 64 under (3x4x4x4) / (1x4x4x4)
        let mut rng = seeded(11);
        let cell = TtFusedCell::random(&mut rng, CellKind::Gru, &[4, 4, 4], &[4, 4, 4], &[2, 3, 3, 1]).unwrap();
        let full = cell.w().to_full_tt();
        assert_eq!(full.row_dims(), &[3, 4, 4, 4]);
        assert_eq!(full.col_dims(), &[1, 4, 4, 4]);
        assert_eq!(full.to_dense().shape(), &[192, 64]);
    }

    #[test]
    fn dense_param_counts() {
        // projection 512 -> 256 with bias
        assert_eq!(count_params_dense(4, 512, 4096, true) + 512 * 256 + 256, 9_570_560);
        // output layer 256 -> 10 with bias
        assert_eq!(count_params_dense(4, 256, 1, true) + 256 * 10 + 10, 266_762);
        assert_eq!(count_params_dense(4, 1, 1, false), 8);
    }

    #[test]
    fn speaker_table_dense_count_includes_similarity_scale() {
        // D = 768, M = 40, E = 256 plus the two GE2E scalars w and b
        let n = count_params_dense(4, 768, 40, true) + 768 * 256 + 256 + 2;
        assert_eq!(n, 2_682_114);
        // the GRU table entry implies two biases per gate
        let gru = count_params_dense(3, 512, 4096, true) + 512 * 256 + 256;
        assert_eq!(7_212_288 - gru, 3 * 512);
    }

    #[test]
    fn tt1_counts() {
        assert_eq!(count_params_tt1(4, &[4, 4], &[2, 2], &[1, 3, 1]), 576);
        // a single core is the dense count of one W/U row block per gate
        assert_eq!(count_params_tt1(4, &[5], &[3], &[1, 1]), count_params_dense(4, 5, 3, false));
        let mut rng = seeded(12);
        let cell = TtPerGateCell::random(&mut rng, CellKind::Lstm, &[2, 3, 2], &[1, 4, 2], &[1, 3, 2, 1]).unwrap();
        assert_eq!(cell.param_count(false), count_params_tt1(4, &[2, 3, 2], &[1, 4, 2], &[1, 3, 2, 1]));
    }

    #[test]
    fn tt2_counts() {
        let cell = TtFusedCell::zeros(CellKind::Lstm, &[4, 4], &[2, 2], &[1, 1, 1]).unwrap();
        let cores: usize = cell.w().shared().param_count() + cell.u().shared().param_count();
        assert_eq!(count_params_tt2(&cell, false), 4 + 4 + cores);
        // the closed form carries one gate core; the cell stores one per stack
        let closed = count_params_tt2_closed_form(4, &[4, 4], &[2, 2], &[1, 1, 1]);
        assert_eq!(count_params_tt2(&cell, false), closed + 4);
    }

    #[test]
    fn fused_is_smaller_than_pergate() {
        let mut rng = seeded(13);
        for _ in 0..100 {
            let g = 2 + crate::rng::below(&mut rng, 3);
            let n = 1 + crate::rng::below(&mut rng, 3);
            let rows: Vec<usize> = (0..n).map(|_| 1 + crate::rng::below(&mut rng, 5)).collect();
            let cols: Vec<usize> = (0..n).map(|_| 1 + crate::rng::below(&mut rng, 5)).collect();
            let mut ranks = vec![1];
            ranks.extend((1..n).map(|_| 1 + crate::rng::below(&mut rng, 4)));
            ranks.push(1);
            let r1 = ranks[1];
            ranks[0] = 1 + crate::rng::below(&mut rng, r1);
            let fused = count_params_tt2_closed_form(g, &rows, &cols, &ranks);
            let mut plain = ranks.clone();
            plain[0] = 1;
            let pergate = count_params_tt1(g, &rows, &cols, &plain);
            // the fused chain's first core is r_0 times larger, so compare
            // against a per-gate count with the same core shapes
            let pergate_same = count_params_tt1(g, &rows, &cols, &ranks);
            assert!(fused < pergate_same, "{fused} vs {pergate_same}");
            if ranks[0] == 1 {
                assert!(fused < pergate + g);
            }
        }
    }

    #[test]
    fn counts_strictly_increase_in_rank() {
        let rows = [4, 4, 2];
        let cols = [2, 3, 2];
        for k in 0..3 {
            let mut ranks = vec![2, 2, 2, 1];
            let base = count_params_tt2_closed_form(4, &rows, &cols, &ranks);
            ranks[k] += 1;
            assert!(count_params_tt2_closed_form(4, &rows, &cols, &ranks) > base);
            if k > 0 {
                let mut a = vec![1, 2, 2, 1];
                let b = count_params_tt1(4, &rows, &cols, &a);
                a[k] += 1;
                assert!(count_params_tt1(4, &rows, &cols, &a) > b);
            }
        }
    }

    #[test]
    fn run_sequence_unrolls() {
        let mut rng = seeded(14);
        let cell = DenseCell::random(&mut rng, CellKind::Lstm, 3, 5);
        let s0 = cell.initial_state();
        let (out, fin) = run_sequence(&cell, &[], &s0).unwrap();
        assert!(out.is_empty());
        assert_eq!(fin, s0);

        let xs: Vec<Tensor> = (0..3).map(|_| uniform_tensor(&mut rng, &[3], -1.0, 1.0)).collect();
        let (out, fin) = run_sequence(&cell, &xs[..1], &s0).unwrap();
        assert_eq!(fin, cell.step(&xs[0], &s0).unwrap());
        assert_eq!(out.len(), 1);

        let (out, fin) = run_sequence(&cell, &xs, &s0).unwrap();
        let s1 = cell.step(&xs[0], &s0).unwrap();
        let s2 = cell.step(&xs[1], &s1).unwrap();
        let s3 = cell.step(&xs[2], &s2).unwrap();
        assert!(fin.h.sub(&s3.h).unwrap().max_abs() < 1e-12);
        assert!(out[1].sub(&s2.h).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let mut rng = seeded(15);
        let h = uniform_tensor(&mut rng, &[4], -1.0, 1.0);
        let id = ProjectionLayer::new(Tensor::eye(4), Tensor::zeros(&[4])).unwrap();
        assert_eq!(project(&id, &h).unwrap(), h);
        let b = uniform_tensor(&mut rng, &[3], -1.0, 1.0);
        let zero = ProjectionLayer::new(Tensor::zeros(&[3, 4]), b.clone()).unwrap();
        assert_eq!(project(&zero, &h).unwrap(), b);
        let p = ProjectionLayer::random(&mut rng, 4, 3);
        let want = p.weight.matmul(&h.reshape(&[4, 1]).unwrap()).unwrap().reshape(&[3]).unwrap().add(&p.bias).unwrap();
        assert!(project(&p, &h).unwrap().sub(&want).unwrap().max_abs() < 1e-12);
        assert!(matches!(project(&p, &Tensor::zeros(&[5])), Err(Error::ExtentMismatch(_))));
    }

    #[test]
    fn tt_init_hits_target_variance() {
        let mut rng = seeded(16);
        let fw = FusedTtWeights::random(&mut rng, 4, &[8, 8], &[8, 8], &[4, 4, 1], 0.01).unwrap();
        let mut acc = 0.0;
        let mut n = 0.0;
        for i in 0..4 {
            let w = fw.gate_matrix(i).unwrap();
            acc += w.data().iter().map(|x| x * x).sum::<f64>();
            n += w.len() as f64;
        }
        let var = acc / n;
        assert!(var > 0.002 && var < 0.05, "variance {var}");
    }
}
