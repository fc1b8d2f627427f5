//! Shared fixtures for the criterion benchmarks: seeded inputs and cells at
//! the sizes of the model-size comparison table (D=512, M=4096).

use ttrnn::cells::{DenseCell, RnnState, TtFusedCell, TtPerGateCell};
use ttrnn::rng::{seeded, uniform_tensor};
use ttrnn::{CellKind, Result, Tensor, TtMatrix};

pub const HIDDEN: usize = 512;
pub const INPUT: usize = 4096;
pub const ROW_DIMS: [usize; 2] = [16, 32];
pub const COL_DIMS: [usize; 2] = [64, 64];

pub fn input_vector(len: usize, seed: u64) -> Tensor {
    uniform_tensor(&mut seeded(seed), &[len], -1.0, 1.0)
}

pub fn dense_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    uniform_tensor(&mut seeded(seed), &[rows, cols], -0.1, 0.1)
}

/// A two-core TT matrix of shape `HIDDEN x INPUT` with internal rank `r`.
pub fn tt_matrix(r: usize, seed: u64) -> Result<TtMatrix> {
    TtMatrix::random(&mut seeded(seed), &ROW_DIMS, &COL_DIMS, &[1, r, 1], 0.1)
}

pub fn dense_cell(kind: CellKind, seed: u64) -> DenseCell {
    DenseCell::random(&mut seeded(seed), kind, INPUT, HIDDEN)
}

pub fn pergate_cell(kind: CellKind, r: usize, seed: u64) -> Result<TtPerGateCell> {
    TtPerGateCell::random(&mut seeded(seed), kind, &ROW_DIMS, &COL_DIMS, &[1, r, 1])
}

/// Fused cell with gate rank and internal rank both `r`.
pub fn fused_cell(kind: CellKind, r: usize, seed: u64) -> Result<TtFusedCell> {
    TtFusedCell::random(&mut seeded(seed), kind, &ROW_DIMS, &COL_DIMS, &[r, r, 1])
}

/// A random state; LSTMs also get a memory cell.
pub fn state(kind: CellKind, hidden: usize, seed: u64) -> RnnState {
    let mut rng = seeded(seed);
    let h = uniform_tensor(&mut rng, &[hidden], -0.5, 0.5);
    let c = (kind == CellKind::Lstm).then(|| uniform_tensor(&mut rng, &[hidden], -0.5, 0.5));
    RnnState { h, c }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ttrnn::cells::Recurrent;

    #[test]
    fn fixtures_have_table_shapes() {
        let tt = tt_matrix(2, 0).unwrap();
        assert_eq!((tt.rows(), tt.cols()), (HIDDEN, INPUT));
        let cell = fused_cell(CellKind::Lstm, 2, 0).unwrap();
        assert_eq!((cell.input_size(), cell.hidden_size()), (INPUT, HIDDEN));
        let s = cell.step(&input_vector(INPUT, 1), &state(CellKind::Lstm, HIDDEN, 2)).unwrap();
        assert_eq!(s.h.shape(), &[HIDDEN]);
    }
}
