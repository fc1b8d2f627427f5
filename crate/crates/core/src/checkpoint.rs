//! Cell checkpoints: a directory holding `manifest.json` and one TTEN1 file
//! per parameter tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cells::{Cell, CellKind, DenseCell, FusedTtWeights, ProjectionLayer, Recurrent, TtFusedCell, TtPerGateCell};
use crate::error::{Error, Result};
use crate::tensor::{load_tten, save_tten, Tensor};
use crate::tt::TtMatrix;

pub const CELL_FORMAT: &str = "ttrnn-cell/1";
pub const BIAS_CONVENTION: &str = "one dense bias per gate, not tensorized";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellMode {
    #[serde(rename = "dense")]
    Dense,
    #[serde(rename = "tt-pergate")]
    PerGate,
    #[serde(rename = "tt-fused")]
    Fused,
}

impl std::fmt::Display for CellMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellMode::Dense => "dense",
            CellMode::PerGate => "tt-pergate",
            CellMode::Fused => "tt-fused",
        })
    }
}

impl Cell {
    pub fn mode(&self) -> CellMode {
        match self {
            Cell::Dense(_) => CellMode::Dense,
            Cell::TtPerGate(_) => CellMode::PerGate,
            Cell::TtFused(_) => CellMode::Fused,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellManifest {
    pub format: String,
    pub kind: CellKind,
    pub mode: CellMode,
    pub gates: usize,
    pub hidden: usize,
    pub input: usize,
    /// Output size of the projection layer, if one is stored.
    pub embedding: Option<usize>,
    pub row_dims: Option<Vec<usize>>,
    pub col_dims: Option<Vec<usize>>,
    /// Ranks of the input stack, then of the hidden stack.
    pub ranks: Option<[Vec<usize>; 2]>,
    pub gate_order: Vec<String>,
    pub bias: String,
    pub tensors: Vec<String>,
}

/// Parameters in manifest order, paired with their file names.
fn named_tensors(cell: &Cell, proj: Option<&ProjectionLayer>) -> Vec<(String, Tensor)> {
    let names = cell.kind().gate_names();
    let mut out = Vec::new();
    let push_tt = |out: &mut Vec<(String, Tensor)>, prefix: String, tt: &TtMatrix| {
        for (k, c) in tt.cores().iter().enumerate() {
            out.push((format!("{prefix}_core{k}.tten"), c.clone()));
        }
    };
    match cell {
        Cell::Dense(c) => {
            for (i, n) in names.iter().enumerate() {
                out.push((format!("w_{n}.tten"), c.w()[i].clone()));
                out.push((format!("u_{n}.tten"), c.u()[i].clone()));
            }
        }
        Cell::TtPerGate(c) => {
            for (i, n) in names.iter().enumerate() {
                push_tt(&mut out, format!("w_{n}"), &c.w()[i]);
                push_tt(&mut out, format!("u_{n}"), &c.u()[i]);
            }
        }
        Cell::TtFused(c) => {
            for (stack, fw) in [("w", c.w()), ("u", c.u())] {
                out.push((format!("{stack}_gate_core.tten"), fw.gate_core().clone()));
                push_tt(&mut out, stack.to_string(), fw.shared());
            }
        }
    }
    let biases = match cell {
        Cell::Dense(c) => c.biases(),
        Cell::TtPerGate(c) => c.biases(),
        Cell::TtFused(c) => c.biases(),
    };
    for (n, b) in names.iter().zip(biases) {
        out.push((format!("b_{n}.tten"), b.clone()));
    }
    if let Some(p) = proj {
        out.push(("proj_weight.tten".to_string(), p.weight.clone()));
        out.push(("proj_bias.tten".to_string(), p.bias.clone()));
    }
    out
}

pub fn manifest_for(cell: &Cell, proj: Option<&ProjectionLayer>) -> CellManifest {
    let (row_dims, col_dims, ranks) = match cell {
        Cell::Dense(_) => (None, None, None),
        Cell::TtPerGate(c) => (
            Some(c.w()[0].row_dims().to_vec()),
            Some(c.w()[0].col_dims().to_vec()),
            Some([c.w()[0].ranks().to_vec(), c.u()[0].ranks().to_vec()]),
        ),
        Cell::TtFused(c) => (
            Some(c.w().shared().row_dims().to_vec()),
            Some(c.w().shared().col_dims().to_vec()),
            Some([c.w().shared().ranks().to_vec(), c.u().shared().ranks().to_vec()]),
        ),
    };
    CellManifest {
        format: CELL_FORMAT.to_string(),
        kind: cell.kind(),
        mode: cell.mode(),
        gates: cell.kind().gates(),
        hidden: cell.hidden_size(),
        input: cell.input_size(),
        embedding: proj.map(|p| p.weight.rows()),
        row_dims,
        col_dims,
        ranks,
        gate_order: cell.kind().gate_names().iter().map(|s| s.to_string()).collect(),
        bias: BIAS_CONVENTION.to_string(),
        tensors: named_tensors(cell, proj).into_iter().map(|(n, _)| n).collect(),
    }
}

pub fn save_cell(cell: &Cell, proj: Option<&ProjectionLayer>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (name, t) in named_tensors(cell, proj) {
        save_tten(&t, dir.join(name))?;
    }
    let manifest = manifest_for(cell, proj);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CellManifest> {
    let m: CellManifest = serde_json::from_slice(&std::fs::read(dir.as_ref().join("manifest.json"))?)?;
    if m.format != CELL_FORMAT {
        return Err(Error::IncompatibleCheckpoint(format!("format {:?}", m.format)));
    }
    if m.gates != m.kind.gates() || m.gate_order != m.kind.gate_names() {
        return Err(Error::IncompatibleCheckpoint("gate count or order differs".to_string()));
    }
    Ok(m)
}

pub fn load_cell(dir: impl AsRef<Path>) -> Result<(Cell, Option<ProjectionLayer>)> {
    let dir = dir.as_ref();
    let m = load_manifest(dir)?;
    let load = |name: String| load_tten(dir.join(name));
    let names = m.kind.gate_names();
    let n_cores = m.row_dims.as_ref().map_or(0, Vec::len);
    let load_tt = |prefix: &str| -> Result<TtMatrix> {
        TtMatrix::new((0..n_cores).map(|k| load(format!("{prefix}_core{k}.tten"))).collect::<Result<_>>()?)
    };
    let biases = names.iter().map(|n| load(format!("b_{n}.tten"))).collect::<Result<Vec<_>>>()?;
    let cell = match m.mode {
        CellMode::Dense => {
            let w = names.iter().map(|n| load(format!("w_{n}.tten"))).collect::<Result<_>>()?;
            let u = names.iter().map(|n| load(format!("u_{n}.tten"))).collect::<Result<_>>()?;
            Cell::Dense(DenseCell::new(m.kind, w, u, biases)?)
        }
        CellMode::PerGate => {
            let w = names.iter().map(|n| load_tt(&format!("w_{n}"))).collect::<Result<_>>()?;
            let u = names.iter().map(|n| load_tt(&format!("u_{n}"))).collect::<Result<_>>()?;
            Cell::TtPerGate(TtPerGateCell::new(m.kind, w, u, biases)?)
        }
        CellMode::Fused => {
            let w = FusedTtWeights::new(load("w_gate_core.tten".into())?, load_tt("w")?)?;
            let u = FusedTtWeights::new(load("u_gate_core.tten".into())?, load_tt("u")?)?;
            Cell::TtFused(TtFusedCell::new(m.kind, w, u, biases)?)
        }
    };
    let proj = match m.embedding {
        Some(_) => Some(ProjectionLayer::new(load("proj_weight.tten".into())?, load("proj_bias.tten".into())?)?),
        None => None,
    };
    if manifest_for(&cell, proj.as_ref()) != m {
        return Err(Error::IncompatibleCheckpoint("tensor shapes disagree with manifest".to_string()));
    }
    Ok((cell, proj))
}
