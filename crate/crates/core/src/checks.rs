//! Named finite-difference checks of every differentiable primitive and of
//! whole recurrent steps.

use serde::{Deserialize, Serialize};

use crate::autograd::{add_ge2e_scale, ge2e_var, gradcheck, Ge2eConfig, Graph, ParamId, ParamStore, Reduction, Var};
use crate::cells::CellKind;
use crate::checkpoint::CellMode;
use crate::error::{Error, Result};
use crate::model::{CellSpec, SequenceModel};
use crate::rng::{seeded, uniform_tensor, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub rel_error: f64,
    pub passed: bool,
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Parameters of the given shapes (entries in `[-1, 1]`, or `[0.5, 2]`
/// when `positive`) and a loss from `f`, reduced to a scalar with fixed
/// random weights when `f` returns more than one element.
fn primitive(seed: u64, eps: f64, shapes: &[Vec<usize>], positive: bool, f: Build) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let (lo, hi) = if positive { (0.5, 2.0) } else { (-1.0, 1.0) };
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), uniform_tensor(&mut rng, s, lo, hi)))
        .collect();
    let readout_seed = seed ^ 0x5eed;
    gradcheck(&store, eps, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        let out = f(g, &vars)?;
        if g.value(out).len() == 1 {
            return Ok(out);
        }
        let w = uniform_tensor(&mut seeded(readout_seed), g.value(out).shape(), -1.0, 1.0);
        let m = g.mul_const(out, w)?;
        Ok(g.sum(m))
    })
}

/// Two steps of a small recurrent model on a batch of two, with a random
/// linear readout of the final hidden state.
fn recurrent(seed: u64, eps: f64, kind: CellKind, mode: CellMode) -> Result<f64> {
    let mut rng = seeded(seed);
    let spec = match mode {
        CellMode::Dense => CellSpec::dense(kind, 4, 4),
        CellMode::PerGate => CellSpec {
            mode,
            row_dims: vec![2, 2],
            col_dims: vec![2, 2],
            ranks: vec![1, 2, 1],
            ..CellSpec::dense(kind, 4, 4)
        },
        CellMode::Fused => CellSpec {
            mode,
            row_dims: vec![2, 2],
            col_dims: vec![2, 2],
            ranks: vec![2, 2, 1],
            ..CellSpec::dense(kind, 4, 4)
        },
    };
    let mut store = ParamStore::new();
    let model = SequenceModel::random(&mut store, &mut rng, &spec, 0)?;
    // nonzero biases and unit-scale weights keep every gate away from saturation and zero
    for p in store.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.value = uniform_tensor(&mut rng, &shape, -0.8, 0.8);
    }
    let xs: Vec<Tensor> = (0..2).map(|_| uniform_tensor(&mut rng, &[4, 2], -1.0, 1.0)).collect();
    let readout = uniform_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    gradcheck(&store, eps, |g, s| {
        let b = model.bind(g, s);
        let h = model.final_hidden(g, &b, &xs)?;
        let m = g.mul_const(h, readout.clone())?;
        Ok(g.sum(m))
    })
}

fn dims(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| 2 + crate::rng::below(rng, 3)).collect()
}

fn tt_shapes(rng: &mut Rng, batch: usize) -> (usize, Vec<Vec<usize>>) {
    let rows = dims(rng, 2);
    let cols = dims(rng, 2);
    let ranks = [1 + crate::rng::below(rng, 3), 2, 1];
    let mut shapes: Vec<Vec<usize>> = (0..2).map(|k| vec![rows[k], cols[k], ranks[k], ranks[k + 1]]).collect();
    shapes.push(vec![cols.iter().product(), batch]);
    (2, shapes)
}

/// Every check name, in run order.
pub const CHECK_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "scale",
    "mul_const",
    "sum",
    "mean",
    "add_scalar",
    "scale_by",
    "add_column",
    "matmul",
    "transpose",
    "reshape",
    "concat_rows",
    "slice_rows",
    "chunk_rows",
    "contract",
    "cosine_sim",
    "row_cosine",
    "tt_matvec",
    "tt_matmul",
    "softmax_xent",
    "ge2e",
    "lstm_step",
    "gru_step",
    "tt_pergate_lstm_step",
    "tt_lstm_step",
    "tt_gru_step",
];

/// Relative error of the named check at step `eps`.
pub fn run_check(name: &str, eps: f64) -> Result<f64> {
    let seed = CHECK_NAMES
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::Config(format!("unknown check {name:?}; known: {}", CHECK_NAMES.join(", "))))?
        as u64;
    let mut rng = seeded(1000 + seed);
    let s = dims(&mut rng, 2);
    let one = vec![s.clone()];
    let two = vec![s.clone(), s.clone()];
    let p = |shapes: Vec<Vec<usize>>, positive: bool, f: Build| primitive(seed, eps, &shapes, positive, f);
    match name {
        "add" => p(two, false, Box::new(|g, v| g.add(v[0], v[1]))),
        "sub" => p(two, false, Box::new(|g, v| g.sub(v[0], v[1]))),
        "mul" => p(two, false, Box::new(|g, v| g.mul(v[0], v[1]))),
        "tanh" => p(one, false, Box::new(|g, v| Ok(g.tanh(v[0])))),
        "sigmoid" => p(one, false, Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        "exp" => p(one, false, Box::new(|g, v| Ok(g.exp(v[0])))),
        "log" => p(one, true, Box::new(|g, v| Ok(g.log(v[0])))),
        "scale" => p(one, false, Box::new(|g, v| Ok(g.scale(v[0], -2.5)))),
        "mul_const" => {
            let c = uniform_tensor(&mut rng, &s, -1.0, 1.0);
            p(one, false, Box::new(move |g, v| g.mul_const(v[0], c.clone())))
        }
        "sum" => p(one, false, Box::new(|g, v| Ok(g.sum(v[0])))),
        "mean" => p(one, false, Box::new(|g, v| Ok(g.mean(v[0])))),
        "add_scalar" => p(vec![vec![], s], false, Box::new(|g, v| g.add_scalar(v[1], v[0]))),
        "scale_by" => p(vec![vec![], s], false, Box::new(|g, v| g.scale_by(v[0], v[1]))),
        "add_column" => p(vec![s.clone(), vec![s[0]]], false, Box::new(|g, v| g.add_column(v[0], v[1]))),
        "matmul" => p(vec![s.clone(), vec![s[1], 3]], false, Box::new(|g, v| g.matmul(v[0], v[1]))),
        "transpose" => p(one, false, Box::new(|g, v| g.transpose(v[0]))),
        "reshape" => {
            let n = s[0] * s[1];
            p(one, false, Box::new(move |g, v| g.reshape(v[0], &[n])))
        }
        "concat_rows" => p(vec![s.clone(), vec![1, s[1]]], false, Box::new(|g, v| g.concat_rows(&[v[0], v[1], v[0]]))),
        "slice_rows" => p(vec![vec![s[0] + 2, s[1]]], false, Box::new(|g, v| g.slice_rows(v[0], 1, 2))),
        "chunk_rows" => p(
            vec![vec![2 * s[0], s[1]]],
            false,
            Box::new(|g, v| {
                let parts = g.chunk_rows(v[0], 2)?;
                g.mul(parts[0], parts[1])
            }),
        ),
        "contract" => {
            let d = dims(&mut rng, 2);
            p(
                vec![vec![s[0], d[0], s[1]], vec![s[1], d[1], s[0]]],
                false,
                Box::new(|g, v| g.contract(v[0], v[1], &[(2, 0), (0, 2)])),
            )
        }
        "cosine_sim" => p(vec![vec![3, s[1] + 1], vec![2, s[1] + 1]], false, Box::new(|g, v| g.cosine_sim(v[0], v[1]))),
        "row_cosine" => p(vec![vec![3, s[1] + 1], vec![3, s[1] + 1]], false, Box::new(|g, v| g.row_cosine(v[0], v[1]))),
        "tt_matvec" | "tt_matmul" => {
            let batch = if name == "tt_matvec" { 1 } else { 3 };
            let (n, shapes) = tt_shapes(&mut rng, batch);
            p(shapes, false, Box::new(move |g, v| g.tt_matmul(&v[..n], v[n])))
        }
        "softmax_xent" => {
            let labels: Vec<usize> = (0..s[0]).map(|_| crate::rng::below(&mut rng, s[1])).collect();
            p(one, false, Box::new(move |g, v| g.softmax_xent(v[0], &labels, Reduction::Sum)))
        }
        "ge2e" => {
            let mut store = ParamStore::new();
            let e = store.add("e", uniform_tensor(&mut rng, &[6, 4], -1.0, 1.0));
            let (w, b) = add_ge2e_scale(&mut store);
            store.get_mut(w).value = Tensor::scalar(2.0);
            store.get_mut(b).value = Tensor::scalar(-0.5);
            gradcheck(&store, eps, |g, st| {
                let (ev, wv, bv) = (g.param(st, e), g.param(st, w), g.param(st, b));
                ge2e_var(g, ev, &[2, 3, 1], wv, bv, Ge2eConfig { exclude_self: true }, Reduction::Sum)
            })
        }
        "lstm_step" => recurrent(seed, eps, CellKind::Lstm, CellMode::Dense),
        "gru_step" => recurrent(seed, eps, CellKind::Gru, CellMode::Dense),
        "tt_pergate_lstm_step" => recurrent(seed, eps, CellKind::Lstm, CellMode::PerGate),
        "tt_lstm_step" => recurrent(seed, eps, CellKind::Lstm, CellMode::Fused),
        "tt_gru_step" => recurrent(seed, eps, CellKind::Gru, CellMode::Fused),
        _ => unreachable!("name validated above"),
    }
}

/// Runs every check, or only `only`, at step `eps` against `tol`.
pub fn run_checks(eps: f64, tol: f64, only: Option<&str>) -> Result<Vec<CheckOutcome>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let names: Vec<&str> = match only {
        Some(n) => vec![n],
        None => CHECK_NAMES.to_vec(),
    };
    names
        .into_iter()
        .map(|name| {
            let err = run_check(name, eps)?;
            Ok(CheckOutcome { name: name.to_string(), rel_error: err, passed: err <= tol })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        for o in run_checks(DEFAULT_EPS, DEFAULT_TOL, None).unwrap() {
            assert!(o.passed, "{} failed with {:e}", o.name, o.rel_error);
        }
    }

    #[test]
    fn coarse_step_fails_somewhere() {
        let out = run_checks(1e-1, DEFAULT_TOL, None).unwrap();
        assert!(out.iter().any(|o| !o.passed));
        // linear primitives stay exact at any step
        assert!(out.iter().find(|o| o.name == "add").unwrap().passed);
    }

    #[test]
    fn filter_and_unknown_names() {
        let out = run_checks(DEFAULT_EPS, DEFAULT_TOL, Some("tt_matvec")).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "tt_matvec");
        assert!(matches!(run_checks(DEFAULT_EPS, DEFAULT_TOL, Some("nope")), Err(Error::Config(_))));
        assert!(run_checks(0.0, DEFAULT_TOL, None).is_err());
    }
}
