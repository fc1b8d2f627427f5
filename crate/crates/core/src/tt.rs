//! Tensor-train matrices and vectors.
//!
//! A TT matrix of global shape `D x M`, with `D = d_1 ... d_n` and
//! `M = m_1 ... m_n`, is stored as `n` cores of shape `[d_k, m_k, r_{k-1}, r_k]`.
//! Entry `(i, j)` is the chain product `G_1(i_1, j_1) ... G_n(i_n, j_n)` of
//! `r_{k-1} x r_k` slices, where `(i_1..i_n)` and `(j_1..j_n)` are the
//! row-major digits of `i` and `j`.
//!
//! The trailing rank is always 1. The leading rank `r_0` is 1 for an ordinary
//! TT matrix; a chain with `r_0 > 1` encodes a family of `r_0` matrices and
//! every dense-valued operation returns them stacked along the rows, i.e. as
//! an `(r_0 * D) x M` matrix whose block `alpha` is the matrix selected by
//! leading rank index `alpha`. The fused gate weights in [`crate::cells`] use
//! this to hold the shared cores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_strided, jacobi_svd};
use crate::rng::{normal_tensor, Rng};
use crate::tensor::{load_tten, save_tten, unflatten, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TtMatrix {
    cores: Vec<Tensor>,
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    ranks: Vec<usize>,
}

impl TtMatrix {
    /// Builds a TT matrix from cores shaped `[d_k, m_k, r_{k-1}, r_k]`,
    /// checking that adjacent ranks agree and the trailing rank is 1.
    pub fn new(cores: Vec<Tensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::extent("a TT matrix needs at least one core"));
        }
        let mut row_dims = Vec::with_capacity(cores.len());
        let mut col_dims = Vec::with_capacity(cores.len());
        let mut ranks = Vec::with_capacity(cores.len() + 1);
        for (k, c) in cores.iter().enumerate() {
            let s = c.shape();
            if s.len() != 4 {
                return Err(Error::extent(format!("core {k} has shape {s:?}, expected 4 modes")));
            }
            if k == 0 {
                ranks.push(s[2]);
            } else if s[2] != ranks[k] {
                return Err(Error::extent(format!(
                    "core {k} left rank {} does not match previous right rank {}",
                    s[2], ranks[k]
                )));
            }
            row_dims.push(s[0]);
            col_dims.push(s[1]);
            ranks.push(s[3]);
        }
        if *ranks.last().unwrap() != 1 {
            return Err(Error::extent(format!("trailing rank must be 1, got {ranks:?}")));
        }
        Ok(TtMatrix { cores, row_dims, col_dims, ranks })
    }

    pub fn zeros(row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> Result<Self> {
        Self::from_core_fn(row_dims, col_dims, ranks, Tensor::zeros)
    }

    /// Cores with i.i.d. `N(0, std^2)` entries.
    pub fn random(rng: &mut Rng, row_dims: &[usize], col_dims: &[usize], ranks: &[usize], std: f64) -> Result<Self> {
        Self::from_core_fn(row_dims, col_dims, ranks, |s| normal_tensor(rng, s, std))
    }

    fn from_core_fn(
        row_dims: &[usize],
        col_dims: &[usize],
        ranks: &[usize],
        mut make: impl FnMut(&[usize]) -> Tensor,
    ) -> Result<Self> {
        check_profile(row_dims, col_dims, ranks)?;
        let cores = (0..row_dims.len()).map(|k| make(&[row_dims[k], col_dims[k], ranks[k], ranks[k + 1]])).collect();
        Self::new(cores)
    }

    /// Each core is `I_{d_k}` with all ranks 1, so the global matrix is the
    /// Kronecker product of identities.
    pub fn identity(dims: &[usize]) -> Result<Self> {
        let cores = dims.iter().map(|&d| Tensor::eye(d).into_shape(&[d, d, 1, 1])).collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.cores.iter_mut()
    }

    pub fn into_cores(self) -> Vec<Tensor> {
        self.cores
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn leading_rank(&self) -> usize {
        self.ranks[0]
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    /// Global row count `D` (of a single matrix of the family).
    pub fn rows(&self) -> usize {
        self.row_dims.iter().product()
    }

    pub fn cols(&self) -> usize {
        self.col_dims.iter().product()
    }

    /// Total number of stored core entries.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }

    /// Entry `(i, j)` from its per-core digits `rows = (i_1..i_n)` and
    /// `cols = (j_1..j_n)`, evaluated as a vector-matrix-vector chain.
    pub fn element(&self, rows: &[usize], cols: &[usize]) -> Result<f64> {
        if self.leading_rank() != 1 {
            return Err(Error::extent("element access needs leading rank 1; use element_of"));
        }
        self.element_of(0, rows, cols)
    }

    /// Entry of the matrix selected by leading rank index `alpha`.
    pub fn element_of(&self, alpha: usize, rows: &[usize], cols: &[usize]) -> Result<f64> {
        let n = self.num_cores();
        if rows.len() != n || cols.len() != n || alpha >= self.ranks[0] {
            return Err(Error::IndexOutOfRange(format!("multi-index ({alpha}; {rows:?}; {cols:?}) for a {n}-core TT")));
        }
        let mut v = vec![0.0; self.ranks[0]];
        v[alpha] = 1.0;
        for k in 0..n {
            let (i, j) = (rows[k], cols[k]);
            if i >= self.row_dims[k] || j >= self.col_dims[k] {
                return Err(Error::IndexOutOfRange(format!(
                    "digit ({i}, {j}) for core {k} of extents ({}, {})",
                    self.row_dims[k], self.col_dims[k]
                )));
            }
            let (ra, rb) = (self.ranks[k], self.ranks[k + 1]);
            let base = (i * self.col_dims[k] + j) * ra * rb;
            let slice = &self.cores[k].data()[base..base + ra * rb];
            let mut next = vec![0.0; rb];
            for (a, &va) in v.iter().enumerate() {
                if va != 0.0 {
                    for b in 0..rb {
                        next[b] += va * slice[a * rb + b];
                    }
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Entry `(i, j)` of the global matrix, with flat indices.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        let rows = unflatten(&self.row_dims, i)?;
        let cols = unflatten(&self.col_dims, j)?;
        self.element(&rows, &cols)
    }

    /// Dense reconstruction: `D x M`, or `(r_0 D) x M` for a leading-rank family.
    pub fn to_dense(&self) -> Tensor {
        let n = self.num_cores();
        // acc modes: (r_0, d_1, m_1, ..., d_k, m_k, r_k)
        let first = self.cores[0].permute(&[2, 0, 1, 3]).expect("valid permutation");
        let mut acc = first;
        for k in 1..n {
            let last = acc.rank() - 1;
            acc = acc.contract(&self.cores[k], &[(last, 2)]).expect("ranks agree");
        }
        // drop trailing unit rank and interleave back to (r_0, d..., m...)
        let mut perm = vec![0];
        perm.extend((0..n).map(|k| 1 + 2 * k));
        perm.extend((0..n).map(|k| 2 + 2 * k));
        perm.push(acc.rank() - 1);
        let t = acc.permute(&perm).expect("valid permutation");
        t.into_shape(&[self.ranks[0] * self.rows(), self.cols()]).expect("sizes agree")
    }

    /// `y = A x` by sequential core contraction; the dense matrix is never
    /// formed. `x` must have `M` elements; the result has `r_0 * D`.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.cols() {
            return Err(Error::extent(format!(
                "TT matvec: input has {} elements, matrix has {} columns",
                x.len(),
                self.cols()
            )));
        }
        let plan = ChainPlan::new(&self.row_dims, &self.col_dims, &self.ranks, 1);
        let out = plan.forward(&self.cores.iter().collect::<Vec<_>>(), x.data(), false);
        Ok(Tensor::vector(out.output))
    }

    /// `Y = A X` for `X` of shape `M x B`, returning `(r_0 D) x B`.
    pub fn matmat(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.rows() != self.cols() {
            return Err(Error::extent(format!(
                "TT matmat: input shape {:?}, matrix has {} columns",
                x.shape(),
                self.cols()
            )));
        }
        let plan = ChainPlan::new(&self.row_dims, &self.col_dims, &self.ranks, x.cols());
        let out = plan.forward(&self.cores.iter().collect::<Vec<_>>(), x.data(), false);
        Tensor::from_vec(&[plan.out_rows(), x.cols()], out.output)
    }

    /// `matvec(x) + b`.
    pub fn affine(&self, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let y = self.matvec(x)?;
        if b.len() != y.len() {
            return Err(Error::extent(format!("TT affine: bias has {} elements, output has {}", b.len(), y.len())));
        }
        Ok(Tensor::vector(y.data().iter().zip(b.data()).map(|(a, c)| a + c).collect()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = TtManifest {
            format: TT_MANIFEST_FORMAT.to_string(),
            row_dims: self.row_dims.clone(),
            col_dims: self.col_dims.clone(),
            ranks: self.ranks.clone(),
            cores: (0..self.num_cores()).map(|k| format!("core_{k}.tten")).collect(),
        };
        for (name, core) in manifest.cores.iter().zip(&self.cores) {
            save_tten(core, dir.join(name))?;
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: TtManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != TT_MANIFEST_FORMAT {
            return Err(Error::IncompatibleCheckpoint(format!("format {}", manifest.format)));
        }
        let cores = manifest.cores.iter().map(|name| load_tten(dir.join(name))).collect::<Result<Vec<_>>>()?;
        let tt = Self::new(cores)?;
        if tt.row_dims != manifest.row_dims || tt.col_dims != manifest.col_dims || tt.ranks != manifest.ranks {
            return Err(Error::IncompatibleCheckpoint("core shapes disagree with manifest".to_string()));
        }
        Ok(tt)
    }
}

const TT_MANIFEST_FORMAT: &str = "tt-matrix/1";

/// `manifest.json` of a TT checkpoint directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TtManifest {
    pub format: String,
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub cores: Vec<String>,
}

fn check_profile(row_dims: &[usize], col_dims: &[usize], ranks: &[usize]) -> Result<()> {
    let n = row_dims.len();
    if n == 0 || col_dims.len() != n || ranks.len() != n + 1 {
        return Err(Error::extent(format!(
            "inconsistent TT profile: rows {row_dims:?}, cols {col_dims:?}, ranks {ranks:?}"
        )));
    }
    if ranks[n] != 1 || ranks.contains(&0) || row_dims.contains(&0) || col_dims.contains(&0) {
        return Err(Error::extent(format!("invalid TT ranks/extents: {ranks:?}")));
    }
    Ok(())
}

/// A TT vector with cores `[p_k, r_{k-1}, r_k]` and boundary ranks 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TtVector {
    cores: Vec<Tensor>,
    dims: Vec<usize>,
    ranks: Vec<usize>,
}

impl TtVector {
    pub fn new(cores: Vec<Tensor>) -> Result<Self> {
        let as_matrix = cores
            .iter()
            .map(|c| {
                let s = c.shape();
                if s.len() != 3 {
                    return Err(Error::extent(format!("TT vector core has shape {s:?}")));
                }
                c.reshape(&[s[0], 1, s[1], s[2]])
            })
            .collect::<Result<Vec<_>>>()?;
        let m = TtMatrix::new(as_matrix)?;
        if m.leading_rank() != 1 {
            return Err(Error::extent("TT vector leading rank must be 1"));
        }
        Ok(TtVector { cores, dims: m.row_dims, ranks: m.ranks })
    }

    pub fn from_dense(v: &Tensor, dims: &[usize], trunc: &Truncation) -> Result<Self> {
        let ones = vec![1; dims.len()];
        let col = v.reshape(&[v.len(), 1])?;
        let m = tt_svd(&col, dims, &ones, trunc)?;
        let cores = m
            .cores
            .into_iter()
            .map(|c| {
                let s = c.shape().to_vec();
                c.into_shape(&[s[0], s[2], s[3]])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `sum_k p_k r_{k-1} r_k`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }

    pub fn element(&self, index: &[usize]) -> Result<f64> {
        self.as_matrix().element(index, &vec![0; index.len()])
    }

    pub fn to_dense(&self) -> Tensor {
        let d = self.as_matrix().to_dense();
        let n = d.len();
        d.into_shape(&[n]).expect("same size")
    }

    fn as_matrix(&self) -> TtMatrix {
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let s = c.shape();
                c.reshape(&[s[0], 1, s[1], s[2]]).expect("same size")
            })
            .collect();
        TtMatrix::new(cores).expect("validated at construction")
    }
}

/// How TT-SVD chooses each rank.
#[derive(Clone, Debug, PartialEq)]
pub enum Truncation {
    /// Keep every singular value above `1e-14 * sigma_max`; reproduces the
    /// input to rounding error.
    Exact,
    /// Keep at most `r` singular values per unfolding.
    MaxRank(usize),
    /// Internal ranks `r_1..r_{n-1}` (leading and trailing ranks are 1).
    Ranks(Vec<usize>),
    /// Relative Frobenius error budget `eps`, split evenly over the `n-1`
    /// unfoldings.
    Tolerance(f64),
}

const NEGLIGIBLE_SIGMA: f64 = 1e-14;

fn choose_rank(s: &[f64], k: usize, trunc: &Truncation, delta: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    let numerical = s.iter().filter(|&&x| x > NEGLIGIBLE_SIGMA * smax).count().max(1);
    match trunc {
        Truncation::Exact => numerical,
        // requested ranks are honored up to the unfolding's size, even when
        // some of the kept singular values are zero
        Truncation::MaxRank(r) => (*r).clamp(1, s.len()),
        Truncation::Ranks(rs) => rs.get(k).copied().unwrap_or(1).clamp(1, s.len()),
        Truncation::Tolerance(_) => {
            let mut tail = 0.0;
            let mut r = s.len();
            while r > 1 {
                let next = tail + s[r - 1] * s[r - 1];
                if next.sqrt() > delta {
                    break;
                }
                tail = next;
                r -= 1;
            }
            r.min(numerical.max(1)).max(1)
        }
    }
}

/// Sequential SVD decomposition of a tensor with mode sizes `modes` into
/// cores `[r_{k-1}, p_k, r_k]`.
pub fn tt_svd_modes(data: &[f64], modes: &[usize], trunc: &Truncation) -> Result<Vec<Tensor>> {
    let total: usize = modes.iter().product();
    if data.len() != total || modes.is_empty() {
        return Err(Error::extent(format!("TT-SVD: {} elements for modes {modes:?}", data.len())));
    }
    if let Truncation::Ranks(rs) = trunc {
        if rs.len() + 1 != modes.len() {
            return Err(Error::extent(format!("TT-SVD: {} internal ranks for {} cores", rs.len(), modes.len())));
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::SvdFailure("non-finite input".to_string()));
    }
    let n = modes.len();
    let delta = match trunc {
        Truncation::Tolerance(eps) if n > 1 => {
            let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
            eps * norm / ((n - 1) as f64).sqrt()
        }
        _ => 0.0,
    };
    let mut cores = Vec::with_capacity(n);
    let mut c = data.to_vec();
    let mut r_prev = 1;
    let mut rest = total;
    for (k, &mode) in modes.iter().enumerate().take(n - 1) {
        let rows = r_prev * mode;
        rest /= mode;
        let svd = jacobi_svd(&c, rows, rest)?;
        let kk = svd.rank();
        let r = choose_rank(&svd.s, k, trunc, delta);
        let mut core = vec![0.0; rows * r];
        for i in 0..rows {
            core[i * r..(i + 1) * r].copy_from_slice(&svd.u[i * kk..i * kk + r]);
        }
        cores.push(Tensor::from_vec(&[r_prev, mode, r], core)?);
        let mut next = vec![0.0; r * rest];
        for a in 0..r {
            for j in 0..rest {
                next[a * rest + j] = svd.s[a] * svd.v[j * kk + a];
            }
        }
        c = next;
        r_prev = r;
    }
    cores.push(Tensor::from_vec(&[r_prev, modes[n - 1], 1], c)?);
    Ok(cores)
}

/// TT-SVD of a `D x M` matrix under the interleaved pairing: core `k` owns
/// row digit `i_k` and column digit `j_k`.
pub fn tt_svd(dense: &Tensor, row_dims: &[usize], col_dims: &[usize], trunc: &Truncation) -> Result<TtMatrix> {
    let n = row_dims.len();
    if dense.rank() != 2
        || n == 0
        || col_dims.len() != n
        || row_dims.iter().product::<usize>() != dense.rows()
        || col_dims.iter().product::<usize>() != dense.cols()
    {
        return Err(Error::extent(format!(
            "TT-SVD: matrix {:?} with factorizations {row_dims:?} / {col_dims:?}",
            dense.shape()
        )));
    }
    let mut shape = row_dims.to_vec();
    shape.extend_from_slice(col_dims);
    let perm: Vec<usize> = (0..n).flat_map(|k| [k, n + k]).collect();
    let t = dense.reshape(&shape)?.permute(&perm)?;
    let modes: Vec<usize> = (0..n).map(|k| row_dims[k] * col_dims[k]).collect();
    let cores3 = tt_svd_modes(t.data(), &modes, trunc)?;
    let cores = cores3
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let s = c.shape().to_vec();
            c.into_shape(&[s[0], row_dims[k], col_dims[k], s[2]])?.permute(&[1, 2, 0, 3])
        })
        .collect::<Result<Vec<_>>>()?;
    TtMatrix::new(cores)
}

/// Deterministic factorization of `n` into `parts` factors, sorted
/// non-decreasing. Among all groupings of the prime factors it minimizes the
/// largest factor, then the next largest, and so on. Missing factors are 1.
pub fn balanced_factorization(n: usize, parts: usize) -> Result<Vec<usize>> {
    if n == 0 || parts == 0 {
        return Err(Error::NotFactorizable(n));
    }
    let mut best: Option<Vec<usize>> = None;
    let mut current = Vec::with_capacity(parts);
    search_factorizations(n, parts, 1, &mut current, &mut |f| {
        // f is non-decreasing; compare from the largest factor down
        let better = match &best {
            None => true,
            Some(b) => f.iter().rev().lt(b.iter().rev()),
        };
        if better {
            best = Some(f.to_vec());
        }
    });
    Ok(best.expect("n = 1 * ... * n is always a candidate"))
}

/// Visits every non-decreasing factor list of `n` with exactly `parts` entries.
pub fn for_each_factorization(n: usize, parts: usize, mut visit: impl FnMut(&[usize])) {
    if n == 0 || parts == 0 {
        return;
    }
    let mut current = Vec::with_capacity(parts);
    search_factorizations(n, parts, 1, &mut current, &mut visit);
}

fn search_factorizations(
    remaining: usize,
    parts: usize,
    min_factor: usize,
    current: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if parts == 1 {
        if remaining >= min_factor {
            current.push(remaining);
            visit(current);
            current.pop();
        }
        return;
    }
    let mut f = min_factor;
    // f^parts <= remaining keeps the list non-decreasing
    while f.checked_pow(parts as u32).is_some_and(|p| p <= remaining) {
        if remaining.is_multiple_of(f) {
            current.push(f);
            search_factorizations(remaining / f, parts - 1, f, current, visit);
            current.pop();
        }
        f += 1;
    }
}

/// Loop bounds of one core contraction in [`ChainPlan`].
///
/// The carried intermediate has logical shape `(p, a, j, r)`: already
/// produced row digits, the open rank, the column digit this core consumes,
/// and the columns (plus batch) still to be consumed. The core is applied as
/// the matrix `gt` of shape `(i * b) x (a * j)`, giving `(p, i, b, r)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepDims {
    pub p: usize,
    pub a: usize,
    pub j: usize,
    pub r: usize,
    pub i: usize,
    pub b: usize,
}

impl StepDims {
    fn input_len(&self) -> usize {
        self.p * self.a * self.j * self.r
    }

    fn output_len(&self) -> usize {
        self.p * self.i * self.b * self.r
    }
}

/// Left-to-right contraction schedule for `Y = A X` with `X` of shape `M x B`.
///
/// The first core's leading rank is folded into its row extent, so a family
/// of `r_0` matrices is applied in a single pass and the output comes out as
/// `(r_0, i_1, ..., i_n, batch)` in row-major order.
#[derive(Clone, Debug)]
pub(crate) struct ChainPlan {
    pub steps: Vec<StepDims>,
    core_shapes: Vec<[usize; 4]>,
}

pub(crate) struct ChainForward {
    pub output: Vec<f64>,
    /// Input to every step (`intermediates[0]` is the input); empty unless kept.
    pub intermediates: Vec<Vec<f64>>,
}

impl ChainPlan {
    pub fn new(row_dims: &[usize], col_dims: &[usize], ranks: &[usize], batch: usize) -> Self {
        let n = row_dims.len();
        let mut steps = Vec::with_capacity(n);
        let mut p = 1;
        let mut r: usize = col_dims.iter().product::<usize>() * batch;
        for k in 0..n {
            r /= col_dims[k];
            let (a, i) = if k == 0 { (1, ranks[0] * row_dims[0]) } else { (ranks[k], row_dims[k]) };
            let step = StepDims { p, a, j: col_dims[k], r, i, b: ranks[k + 1] };
            p *= i;
            steps.push(step);
        }
        let core_shapes = (0..n).map(|k| [row_dims[k], col_dims[k], ranks[k], ranks[k + 1]]).collect();
        ChainPlan { steps, core_shapes }
    }

    pub fn out_rows(&self) -> usize {
        self.steps.last().map(|s| s.p * s.i).unwrap_or(0)
    }

    /// Core `k` rearranged as the `(i * b) x (a * j)` step matrix.
    fn step_matrix(&self, k: usize, core: &[f64]) -> Vec<f64> {
        let [d, m, ra, rb] = self.core_shapes[k];
        let st = self.steps[k];
        let aj = st.a * st.j;
        let mut gt = vec![0.0; st.i * st.b * aj];
        for i in 0..d {
            for j in 0..m {
                for a in 0..ra {
                    for b in 0..rb {
                        let v = core[((i * m + j) * ra + a) * rb + b];
                        let (row, col) = if k == 0 { ((a * d + i) * rb + b, j) } else { (i * rb + b, a * m + j) };
                        gt[row * aj + col] = v;
                    }
                }
            }
        }
        gt
    }

    /// Inverse of [`Self::step_matrix`], accumulating into `core_grad`.
    fn scatter_step_matrix(&self, k: usize, gt: &[f64], core_grad: &mut [f64]) {
        let [d, m, ra, rb] = self.core_shapes[k];
        let st = self.steps[k];
        let aj = st.a * st.j;
        for i in 0..d {
            for j in 0..m {
                for a in 0..ra {
                    for b in 0..rb {
                        let (row, col) = if k == 0 { ((a * d + i) * rb + b, j) } else { (i * rb + b, a * m + j) };
                        core_grad[((i * m + j) * ra + a) * rb + b] += gt[row * aj + col];
                    }
                }
            }
        }
    }

    pub fn forward(&self, cores: &[&Tensor], x: &[f64], keep: bool) -> ChainForward {
        let mut intermediates = Vec::new();
        let mut t = x.to_vec();
        for (k, st) in self.steps.iter().enumerate() {
            debug_assert_eq!(t.len(), st.input_len());
            let gt = self.step_matrix(k, cores[k].data());
            let mut out = vec![0.0; st.output_len()];
            apply_step(st, &gt, &t, &mut out);
            if keep {
                intermediates.push(std::mem::replace(&mut t, out));
            } else {
                t = out;
            }
        }
        ChainForward { output: t, intermediates }
    }

    /// Given the upstream gradient of the output, returns the gradient with
    /// respect to the input and accumulates core gradients.
    pub fn backward(
        &self,
        cores: &[&Tensor],
        intermediates: &[Vec<f64>],
        grad_out: &[f64],
        core_grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for k in (0..self.steps.len()).rev() {
            let st = self.steps[k];
            let gt = self.step_matrix(k, cores[k].data());
            let t = &intermediates[k];
            let mut dgt = vec![0.0; gt.len()];
            step_weight_grad(&st, &g, t, &mut dgt);
            self.scatter_step_matrix(k, &dgt, &mut core_grads[k]);
            let mut dt = vec![0.0; st.input_len()];
            step_input_grad(&st, &gt, &g, &mut dt);
            g = dt;
        }
        g
    }
}

/// `out[p, ib, r] = sum_aj gt[ib, aj] * t[p, aj, r]`
fn apply_step(st: &StepDims, gt: &[f64], t: &[f64], out: &mut [f64]) {
    let (ib, aj, r) = (st.i * st.b, st.a * st.j, st.r);
    if st.p <= r {
        for p in 0..st.p {
            gemm_strided((ib, aj, r), 1.0, gt, (aj, 1), &t[p * aj * r..], (r, 1), 0.0, &mut out[p * ib * r..], (r, 1));
        }
    } else {
        for c in 0..r {
            gemm_strided((st.p, aj, ib), 1.0, &t[c..], (aj * r, r), gt, (1, aj), 0.0, &mut out[c..], (ib * r, r));
        }
    }
}

/// `dt[p, aj, r] = sum_ib gt[ib, aj] * g[p, ib, r]`
fn step_input_grad(st: &StepDims, gt: &[f64], g: &[f64], dt: &mut [f64]) {
    let (ib, aj, r) = (st.i * st.b, st.a * st.j, st.r);
    if st.p <= r {
        for p in 0..st.p {
            gemm_strided((aj, ib, r), 1.0, gt, (1, aj), &g[p * ib * r..], (r, 1), 0.0, &mut dt[p * aj * r..], (r, 1));
        }
    } else {
        for c in 0..r {
            gemm_strided((st.p, ib, aj), 1.0, &g[c..], (ib * r, r), gt, (aj, 1), 0.0, &mut dt[c..], (aj * r, r));
        }
    }
}

/// `dgt[ib, aj] += sum_{p, r} g[p, ib, r] * t[p, aj, r]`
fn step_weight_grad(st: &StepDims, g: &[f64], t: &[f64], dgt: &mut [f64]) {
    let (ib, aj, r) = (st.i * st.b, st.a * st.j, st.r);
    if st.p <= r {
        for p in 0..st.p {
            gemm_strided((ib, r, aj), 1.0, &g[p * ib * r..], (r, 1), &t[p * aj * r..], (1, r), 1.0, dgt, (aj, 1));
        }
    } else {
        for c in 0..r {
            gemm_strided((ib, st.p, aj), 1.0, &g[c..], (r, ib * r), &t[c..], (aj * r, r), 1.0, dgt, (aj, 1));
        }
    }
}
